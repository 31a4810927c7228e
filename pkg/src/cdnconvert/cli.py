"""Command-line front end: simulate, matrix, probe, profiles.

Exit codes: 0 ok, 2 configuration error, 3 origin-control confirmation
missing, 4 probe transport failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

from .codecs import (
    DEFAULT_SAFETY_CAP,
    BombSpec,
    CodecError,
    ContentCoding,
    FillPayload,
    TextCorpusPayload,
    make_bomb,
    materialize,
)
from .http_model import PACKETIZED, OverheadModel, parse_accept_encoding
from .node import OriginConfig
from .policy import PROFILES, ProfileRegistry, dump_profiles, load_profiles
from .simulate import (
    KINDS,
    MITIGATIONS,
    Scenario,
    ScenarioError,
    angular_like_asset,
    reference_bomb,
    report_for,
    scenario_matrix,
)

log = logging.getLogger("cdnconvert")

EXIT_OK, EXIT_CONFIG, EXIT_ETHICS, EXIT_TRANSPORT = 0, 2, 3, 4
SCENARIO_HEADER = "# cdnconvert-scenario v1"
CSV_FIELDS = ("scenario", "ucdn", "ocdn", "case", "client_link_bytes", "upstream_link_bytes", "factor")
SKIP_FIELDS = ("kind", "ucdn", "ocdn", "case", "payload", "reason")


class ConfigError(Exception):
    def __init__(self, message, source="", line=None):
        where = f"{source}:{line}: " if line is not None else (f"{source}: " if source else "")
        super().__init__(where + message)


# -- scenario files -------------------------------------------------------------

SCENARIO_KEYS = {
    "kind", "chain", "client_ae", "repetitions", "cache_bypass", "customer_deletes_ae",
    "mitigations", "inter_cdn_tls", "name", "seed",
    "origin.mode", "origin.coding", "origin.level", "origin.supported", "origin.extra_header_bytes",
    "asset.kind", "asset.size", "asset.coding", "asset.level", "asset.fill", "asset.ratio", "asset.seed",
    "overhead.mode", "overhead.mss", "overhead.per_packet",
}
REQUIRED_KEYS = ("kind", "chain", "client_ae")
_TRUE = {"true", "yes", "1", "on"}
_FALSE = {"false", "no", "0", "off"}


@dataclass
class RunConfig:
    command: str
    scenario: Path | None = None
    format: str = "table"
    out: Path | None = None
    seed: int = 0
    overhead: OverheadModel | None = None
    max_bomb_size: int = DEFAULT_SAFETY_CAP
    profiles: ProfileRegistry = field(default_factory=lambda: PROFILES)


def read_scenario_file(text: str, source: str = "<scenario>") -> dict[str, tuple[int, str]]:
    """Parse ``key = value`` lines into {key: (line number, value)}."""
    lines = text.splitlines()
    if not lines or lines[0].strip() != SCENARIO_HEADER:
        raise ConfigError(f"first line must be {SCENARIO_HEADER!r}", source, 1)
    out = {}
    for n, raw in enumerate(lines[1:], start=2):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        # " #" starts a trailing comment; header values never contain it
        key, value = key.strip(), value.partition(" #")[0].strip()
        if not sep:
            raise ConfigError(f"expected 'key = value', got {line!r}", source, n)
        if key not in SCENARIO_KEYS:
            raise ConfigError(f"unknown key {key!r}", source, n)
        if key in out:
            raise ConfigError(f"duplicate key {key!r} (first on line {out[key][0]})", source, n)
        out[key] = (n, value)
    missing = [k for k in REQUIRED_KEYS if k not in out]
    if missing:
        raise ConfigError(f"missing required field {missing[0]!r}", source)
    return out


def build_scenario(fields: dict[str, tuple[int, str]], cfg: RunConfig, source: str = "<scenario>") -> Scenario:
    def get(key, default=None):
        return fields[key][1] if key in fields else default

    def fail(key, msg):
        raise ConfigError(msg, source, fields[key][0] if key in fields else None)

    def as_int(key, default):
        try:
            return int(get(key, str(default)), 0)
        except ValueError:
            fail(key, f"{key} must be an integer")

    def as_bool(key, default):
        v = get(key, str(default)).lower()
        if v in _TRUE:
            return True
        if v in _FALSE:
            return False
        fail(key, f"{key} must be true or false")

    def as_coding_level(key, text):
        c = ContentCoding(text.rstrip("0123456789"))
        digits = text[len(c.token):]
        if not digits:
            fail(key, f"{text!r} needs a level, e.g. gzip6")
        return c, int(digits)

    kind = get("kind")
    if kind not in KINDS:
        fail("kind", f"kind must be one of {', '.join(KINDS)}")
    try:
        chain = tuple(cfg.profiles[n.strip()] for n in get("chain").split(",") if n.strip())
    except KeyError as exc:
        fail("chain", f"unknown profile {exc.args[0]!r}")
    mitigations = frozenset(m.strip() for m in get("mitigations", "").split(",") if m.strip())
    if mitigations - MITIGATIONS:
        fail("mitigations", f"unknown mitigation(s) {sorted(mitigations - MITIGATIONS)}")
    seed = as_int("seed", cfg.seed)

    asset_kind = get("asset.kind", "bomb")
    size = as_int("asset.size", 1 << 20)
    try:
        if asset_kind == "bomb":
            if size > cfg.max_bomb_size:
                fail("asset.size", f"bomb of {size} bytes exceeds --max-bomb-size {cfg.max_bomb_size}")
            asset = make_bomb(
                BombSpec(size, as_int("asset.fill", 0x30), ContentCoding(get("asset.coding", "gzip")),
                         as_int("asset.level", 9)),
                cfg.max_bomb_size,
            )
        elif asset_kind == "text":
            asset = TextCorpusPayload(as_int("asset.seed", seed), size, float(get("asset.ratio", "6.0")))
            materialize(asset)
        elif asset_kind == "fill":
            asset = FillPayload(as_int("asset.fill", 0x30), size)
        else:
            fail("asset.kind", "asset.kind must be bomb, text or fill")
    except (CodecError, ValueError) as exc:
        fail("asset.kind", f"bad asset: {exc}")

    mode = get("origin.mode", "always_encoded" if kind in ("ccuf1", "ccuf2") else "negotiate")
    extra = as_int("origin.extra_header_bytes", 0)
    try:
        if mode == "negotiate":
            supported = [as_coding_level("origin.supported", t) for t in get("origin.supported", "").split()]
            origin = OriginConfig.negotiate(asset, supported, extra_response_header_bytes=extra)
        elif mode == "always_encoded":
            origin = OriginConfig.always_encoded(
                asset, ContentCoding(get("origin.coding", "gzip")), as_int("origin.level", 9),
                extra_response_header_bytes=extra,
            )
        else:
            fail("origin.mode", "origin.mode must be negotiate or always_encoded")
    except (CodecError, ValueError) as exc:
        fail("origin.mode", f"bad origin: {exc}")

    if cfg.overhead is not None:
        overhead = cfg.overhead
    else:
        omode = get("overhead.mode", "packetized")
        if omode in ("http", "http_only"):
            overhead = OverheadModel("http_only")
        elif omode in ("packet", "packetized"):
            overhead = OverheadModel("packetized", as_int("overhead.mss", 1460), as_int("overhead.per_packet", 66))
        else:
            fail("overhead.mode", "overhead.mode must be http_only or packetized")

    try:
        return Scenario(
            kind,
            chain,
            origin,
            parse_accept_encoding(get("client_ae")),
            repetitions=as_int("repetitions", 1),
            cache_bypass=as_bool("cache_bypass", True),
            customer_deletes_ae=as_bool("customer_deletes_ae", False),
            mitigations=mitigations,
            overhead=overhead,
            inter_cdn_tls=as_bool("inter_cdn_tls", False),
            seed=seed,
            name=get("name", ""),
            max_size=cfg.max_bomb_size,
        )
    except ScenarioError as exc:
        key = "chain" if "chain" in str(exc) or "CDN" in str(exc) else "kind"
        fail(key, str(exc))


# -- output -----------------------------------------------------------------------


def report_row(r) -> dict:
    return {
        "scenario": r.scenario_id,
        "ucdn": r.ucdn,
        "ocdn": r.ocdn,
        "case": r.case,
        "client_link_bytes": r.client_link_bytes,
        "upstream_link_bytes": r.upstream_link_bytes,
        "factor": r.factor_2dp,
    }


def skip_row(s) -> dict:
    return {k: getattr(s, k) for k in SKIP_FIELDS}


def render(reports, fmt: str, skipped=None, ledgers: bool = False) -> str:
    rows = [report_row(r) for r in reports]
    skips = [skip_row(s) for s in skipped] if skipped is not None else None
    if fmt == "json":
        for row, r in zip(rows, reports):
            row["numerator_link"] = r.numerator_link
            row["denominator_link"] = r.denominator_link
            if ledgers:
                row["ledger"] = r.ledger
        doc = {"reports": rows}
        if skips is not None:
            doc["skipped"] = skips
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.DictWriter(buf, CSV_FIELDS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
        if skips:
            buf.write("\n")
            w = csv.DictWriter(buf, SKIP_FIELDS, lineterminator="\n")
            w.writeheader()
            w.writerows(skips)
        return buf.getvalue()
    return _table(rows, CSV_FIELDS) + (
        "\nskipped:\n" + _table(skips, SKIP_FIELDS) if skips else ""
    )


def _table(rows, fields) -> str:
    cells = [list(fields)] + [[str(r[f]) for f in fields] for r in rows]
    widths = [max(len(c[i]) for c in cells) for i in range(len(fields))]
    lines = ["  ".join(c[i].ljust(widths[i]) for i in range(len(fields))).rstrip() for c in cells]
    return "\n".join(lines) + "\n"


def emit(text: str, out: Path | None):
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


# -- commands ---------------------------------------------------------------------


def cmd_simulate(cfg: RunConfig) -> int:
    if cfg.scenario is None:
        log.error("simulate needs --scenario <path>")
        return EXIT_CONFIG
    source = str(cfg.scenario)
    try:
        text = Path(cfg.scenario).read_text()
        s = build_scenario(read_scenario_file(text, source), cfg, source)
        r = report_for(s)
    except OSError as exc:
        log.error("%s: %s", source, exc.strerror or exc)
        return EXIT_CONFIG
    except (ConfigError, ScenarioError, CodecError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    emit(render([r], cfg.format, ledgers=True), cfg.out)
    return EXIT_OK


def cmd_matrix(cfg: RunConfig, args) -> int:
    kinds = [k.strip() for k in args.kinds.split(",") if k.strip()]
    bad = [k for k in kinds if k not in ("cccf", "ccuf1", "ccuf2")]
    if bad:
        log.error("unknown kind(s): %s", ", ".join(bad))
        return EXIT_CONFIG
    payloads = []
    if args.payload in ("bomb", "both"):
        if args.bomb_size > cfg.max_bomb_size:
            log.error("bomb of %d bytes exceeds --max-bomb-size %d", args.bomb_size, cfg.max_bomb_size)
            return EXIT_CONFIG
        payloads.append(reference_bomb(args.bomb_size))
    if args.payload in ("text", "both"):
        a = angular_like_asset()
        payloads.append(TextCorpusPayload(cfg.seed if args.seed is not None else a.seed, a.length, a.target_gzip_ratio))
    codings = [c.strip() for c in args.codings.split(",")] if args.codings else None
    bad = sorted(set(args.mitigation) - MITIGATIONS)
    if bad:
        log.error("unknown mitigation(s): %s", ", ".join(bad))
        return EXIT_CONFIG
    result = scenario_matrix(
        list(cfg.profiles.values()),
        kinds,
        payloads,
        codings,
        overhead=cfg.overhead or PACKETIZED,
        mitigations=args.mitigation,
        require_attack_shape=not args.all,
        workers=args.workers,
    )
    emit(render(result, cfg.format, result.skipped), cfg.out)
    return EXIT_OK


def cmd_probe(cfg: RunConfig, args) -> int:
    from . import probe
    from .server import LoopbackNode, RecordingOrigin, reference_asset

    if not args.i_control_the_origin:
        log.error("refusing to probe: pass --i-control-the-origin to confirm the origin is yours")
        return EXIT_ETHICS
    services = []
    try:
        if args.loopback:
            try:
                profile = cfg.profiles[args.loopback]
            except KeyError:
                log.error("unknown profile %r", args.loopback)
                return EXIT_CONFIG
            origin = RecordingOrigin(reference_asset(args.asset_seed)).start()
            node = LoopbackNode(profile, origin.url).start()
            services = [node, origin]
            target, origin_url = node.url, origin.url
        elif args.target:
            target, origin_url = args.target, args.origin
        else:
            log.error("probe needs --loopback <profile> or --target <url>")
            return EXIT_CONFIG
        obs = probe.run_probe_suite(
            target, origin_url, confirm_origin_control=True, interval=args.interval
        )
    finally:
        for svc in services:
            svc.stop()

    reference = materialize(reference_asset(args.asset_seed))
    failed = [o for o in obs if not o.ok]
    cls = probe.classify_endpoint(obs, reference, partial=True)
    doc = {
        "row": probe.describe(cls, list(cfg.profiles.values())),
        "policy_class": cls.policy_class.value if cls.policy_class else "unknown",
        "forward_map": {k: ("delete" if v is None else v) for k, v in cls.forward_map.items()},
        "edge_codings": sorted(str(c) for c in cls.edge_codings),
        "estimated_levels": {str(c): l for c, l in sorted(cls.estimated_levels.items())},
        "level_confidence": {str(c): b for c, b in sorted(cls.level_confidence.items())},
        "decompresses_gzip_for_identity": _tri(cls.decompresses_gzip_for_identity),
        "supports_br_decompression": _tri(cls.supports_br_decompression),
        "vary_on_compressed": probe.vary_check(obs),
        "unknown": list(cls.unknown),
        "transport_errors": [str(o.error) for o in failed],
    }
    if cfg.format == "json":
        text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    else:
        text = doc["row"] + "\n" + "".join(
            f"  {k}: {v}\n" for k, v in doc.items() if k != "row"
        )
    emit(text, cfg.out)
    return EXIT_TRANSPORT if failed else EXIT_OK


def _tri(v):
    return "unknown" if v is None else v


def cmd_profiles(cfg: RunConfig, args) -> int:
    if args.action == "export":
        emit(dump_profiles(cfg.profiles.values()), cfg.out)
        return EXIT_OK
    if args.action == "import":
        try:
            loaded = load_profiles(Path(args.file).read_text())
        except OSError as exc:
            log.error("%s: %s", args.file, exc.strerror or exc)
            return EXIT_CONFIG
        except Exception as exc:  # configparser and field validation errors
            log.error("%s: %s", args.file, exc)
            return EXIT_CONFIG
        profiles = loaded
    else:
        profiles = list(cfg.profiles.values())
    rows = [
        {
            "name": p.name,
            **{k: str(p.policy[k]) for k in ("gzip", "compress", "deflate", "br", "identity")},
            "edge": p.edge.label(),
            "decompresses": str(p.decompresses_gzip_for_identity).lower(),
        }
        for p in profiles
    ]
    fields = ("name", "gzip", "compress", "deflate", "br", "identity", "edge", "decompresses")
    if cfg.format == "json":
        emit(json.dumps(rows, indent=2) + "\n", cfg.out)
    elif cfg.format == "csv":
        buf = io.StringIO()
        w = csv.DictWriter(buf, fields, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
        emit(buf.getvalue(), cfg.out)
    else:
        emit(_table(rows, fields), cfg.out)
    return EXIT_OK


# -- argument parsing ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--format", choices=("table", "csv", "json"), default=None)
    common.add_argument("--out", type=Path)
    common.add_argument("--seed", type=int)
    common.add_argument("--overhead", help="http | packet:<mss>:<per-packet bytes>")
    common.add_argument("--max-bomb-size", type=int, default=DEFAULT_SAFETY_CAP)
    common.add_argument("--profiles", type=Path, help="profile registry file to use instead of the built-ins")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="cdnconvert", description="CDN compression-conversion amplification toolkit")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="run one scenario file")
    p.add_argument("--scenario", type=Path)

    p = sub.add_parser("matrix", parents=[common], help="sweep built-in profiles")
    p.add_argument("--kinds", default="cccf,ccuf1,ccuf2")
    p.add_argument("--payload", choices=("bomb", "text", "both"), default="bomb")
    p.add_argument("--bomb-size", type=int, default=1 << 20)
    p.add_argument("--codings", help="client codings to sweep, e.g. gzip,br")
    p.add_argument("--mitigation", action="append", default=[], choices=sorted(MITIGATIONS))
    p.add_argument("--all", action="store_true", help="keep combinations that do not show the attack")
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("probe", parents=[common], help="classify an endpoint fronting your own origin")
    p.add_argument("--loopback", metavar="PROFILE", help="probe a local node running PROFILE")
    p.add_argument("--target", help="URL of the CDN endpoint")
    p.add_argument("--origin", help="URL of the recording origin (for its /log)")
    p.add_argument("--i-control-the-origin", action="store_true")
    p.add_argument("--interval", type=float, default=0.2)
    p.add_argument("--asset-seed", type=int, default=7)

    p = sub.add_parser("profiles", parents=[common], help="list, export or import profiles")
    p.add_argument("action", choices=("list", "export", "import"), nargs="?", default="list")
    p.add_argument("file", nargs="?")
    return ap


def make_config(args) -> RunConfig:
    fmt = args.format or ("table" if sys.stdout.isatty() or args.command == "probe" else "csv")
    cfg = RunConfig(
        args.command,
        scenario=getattr(args, "scenario", None),
        format=fmt,
        out=args.out,
        seed=args.seed if args.seed is not None else 0,
        max_bomb_size=args.max_bomb_size,
    )
    if args.overhead:
        try:
            cfg.overhead = OverheadModel.parse(args.overhead)
        except ValueError as exc:
            raise ConfigError(str(exc), "--overhead")
    if args.profiles:
        try:
            cfg.profiles = ProfileRegistry(load_profiles(args.profiles.read_text()))
        except Exception as exc:
            raise ConfigError(str(exc), str(args.profiles))
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(name)s: %(levelname)s: %(message)s",
    )
    try:
        cfg = make_config(args)
    except ConfigError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    if args.command == "simulate":
        return cmd_simulate(cfg)
    if args.command == "matrix":
        return cmd_matrix(cfg, args)
    if args.command == "probe":
        return cmd_probe(cfg, args)
    if args.command == "profiles":
        if args.action == "import" and not args.file:
            log.error("profiles import needs a file")
            return EXIT_CONFIG
        return cmd_profiles(cfg, args)
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
