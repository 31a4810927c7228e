"""Attack scenarios, per-link traffic ledgers and amplification factors."""

from __future__ import annotations

import logging
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

from .codecs import (
    BR,
    DEFAULT_SAFETY_CAP,
    GZIP,
    BombSpec,
    ContentCoding,
    FillPayload,
    PayloadSpec,
    PrecompressedPayload,
    TextCorpusPayload,
    make_bomb,
    payload_length,
)
from .http_model import (
    ABSENT,
    HTTP_ONLY,
    PACKETIZED,
    AcceptEncoding,
    HttpMessage,
    OverheadModel,
    make_request,
    serialized_size,
)
from .node import (
    EdgeNode,
    NodeDecision,
    OriginConfig,
    Transformation,
    TransformKind,
    UpstreamError,
    origin_respond,
)
from .policy import CdnProfile

log = logging.getLogger(__name__)

KINDS = ("cccf", "ccuf1", "ccuf2", "custom")
MITIGATIONS = frozenset({"origin_dual_codec", "ocdn_no_convert", "ucdn_laziness"})
ASSET_PATH = "/asset"
CACHE_BUST_PARAM = "cb"
CACHE_BUST_HEX = 16
DUAL_CODEC = frozenset({(GZIP, 6), (BR, 6)})
# client codings swept per kind; type-1 CCUF is defined by a br-only client
KIND_CODINGS = {"cccf": (GZIP, BR), "ccuf1": (BR,), "ccuf2": (GZIP, BR), "custom": (GZIP, BR)}


class ScenarioError(ValueError):
    pass


class DegenerateScenario(ScenarioError):
    pass


def cache_bust_target(token: str | None) -> str:
    if token is None:
        return ASSET_PATH
    return f"{ASSET_PATH}?{CACHE_BUST_PARAM}={token}"


@dataclass(frozen=True)
class Scenario:
    kind: str
    chain: tuple[CdnProfile, ...]
    origin: OriginConfig
    client_ae: AcceptEncoding
    repetitions: int = 1
    cache_bypass: bool = True
    customer_deletes_ae: bool = False
    mitigations: frozenset[str] = frozenset()
    overhead: OverheadModel = PACKETIZED
    inter_cdn_tls: bool = False
    seed: int = 0
    name: str = ""
    max_size: int = DEFAULT_SAFETY_CAP

    def __post_init__(self):
        object.__setattr__(self, "chain", tuple(self.chain))
        object.__setattr__(self, "mitigations", frozenset(self.mitigations))
        if self.kind not in KINDS:
            raise ScenarioError(f"unknown scenario kind {self.kind!r}")
        if self.kind == "cccf" and len(self.chain) != 1:
            raise ScenarioError("cccf needs exactly one CDN in the chain")
        if self.kind in ("ccuf1", "ccuf2") and len(self.chain) != 2:
            raise ScenarioError(f"{self.kind} needs a [UCDN, OCDN] chain")
        if not self.chain:
            raise ScenarioError("chain is empty")
        if self.repetitions < 1:
            raise ScenarioError("repetitions must be >= 1")
        unknown = self.mitigations - MITIGATIONS
        if unknown:
            raise ScenarioError(f"unknown mitigations {sorted(unknown)}")

    @property
    def ident(self) -> str:
        if self.name:
            return self.name
        names = "/".join(p.name for p in self.chain)
        return f"{self.kind}:{names}:{self.client_ae}:{payload_label(self.origin.asset)}"

    def with_mitigations(self, *names: str) -> "Scenario":
        return replace(self, mitigations=self.mitigations | set(names))

    def effective_chain(self) -> tuple[CdnProfile, ...]:
        """Profiles after mitigation overrides."""
        chain = list(self.chain)
        if len(chain) >= 2:
            if "ucdn_laziness" in self.mitigations:
                chain[0] = chain[0].lazy()
            if "ocdn_no_convert" in self.mitigations:
                chain[-1] = chain[-1].without_conversion()
        return tuple(chain)

    def effective_origin(self) -> OriginConfig:
        if "origin_dual_codec" in self.mitigations:
            return replace(self.origin, mode="negotiate", supported=DUAL_CODEC, coding=None, level=None)
        return self.origin

    def downstream_tls(self, index: int) -> bool:
        return True if index == 0 else self.inter_cdn_tls


def link_names(chain: Sequence[CdnProfile]) -> list[str]:
    hops = ["client"] + [p.name for p in chain] + ["origin"]
    return [f"{a}-{b}" for a, b in zip(hops, hops[1:])]


@dataclass
class LinkRecord:
    name: str
    request_bytes: int = 0
    response_bytes: int = 0
    request_body_bytes: int = 0
    response_body_bytes: int = 0
    exchanges: int = 0

    @property
    def total_bytes(self) -> int:
        return self.request_bytes + self.response_bytes


@dataclass(frozen=True)
class NodeEvent:
    node: str
    forwarded_ae: AcceptEncoding | None  # None on a cache hit
    transformation: Transformation


@dataclass
class TrafficLedger:
    links: list[LinkRecord]
    events: list[list[NodeEvent]] = field(default_factory=list)  # per repetition
    complete: bool = True

    @classmethod
    def from_totals(cls, **totals: int) -> "TrafficLedger":
        """Ledger with only response byte totals, keyed ``client_cdn=...``."""
        return cls([LinkRecord(k.replace("_", "-"), response_bytes=v, exchanges=1) for k, v in totals.items()])

    def __getitem__(self, name: str) -> LinkRecord:
        for link in self.links:
            if link.name == name:
                return link
        raise KeyError(name)

    def snapshot(self) -> dict[str, dict[str, int]]:
        return {
            l.name: {
                "request_bytes": l.request_bytes,
                "response_bytes": l.response_bytes,
                "total_bytes": l.total_bytes,
                "exchanges": l.exchanges,
            }
            for l in self.links
        }


@dataclass(frozen=True)
class AmplificationReport:
    scenario_id: str
    numerator_link: str
    denominator_link: str
    factor: float
    ledger: dict = field(repr=False, compare=False)
    kind: str = ""
    ucdn: str = ""
    ocdn: str = ""
    case: str = ""
    payload: str = ""

    @property
    def factor_2dp(self) -> str:
        return f"{self.factor:.2f}"

    @property
    def client_link_bytes(self) -> int:
        return self.ledger[self.denominator_link]["total_bytes"]

    @property
    def upstream_link_bytes(self) -> int:
        return self.ledger[self.numerator_link]["total_bytes"]


def _recording(link: LinkRecord, fn, overhead: OverheadModel):
    def call(req: HttpMessage) -> HttpMessage:
        link.request_bytes += overhead.apply(serialized_size(req))
        link.request_body_bytes += len(req.body)
        link.exchanges += 1
        resp = fn(req)
        link.response_bytes += overhead.apply(serialized_size(resp))
        link.response_body_bytes += len(resp.body)
        return resp

    return call


def run_scenario(s: Scenario) -> TrafficLedger:
    chain = s.effective_chain()
    origin = s.effective_origin()
    ledger = TrafficLedger([LinkRecord(n) for n in link_names(chain)])

    upstream = _recording(ledger.links[-1], lambda req: origin_respond(origin, req), s.overhead)
    nodes = []
    for i in reversed(range(len(chain))):
        node = EdgeNode(
            chain[i],
            upstream,
            customer_deletes_ae=s.customer_deletes_ae,
            downstream_tls=s.downstream_tls(i),
            max_size=s.max_size,
        )
        nodes.insert(0, node)
        upstream = _recording(ledger.links[i], node, s.overhead)
    entry = upstream

    rng = random.Random(s.seed)
    for _ in range(s.repetitions):
        token = f"{rng.getrandbits(4 * CACHE_BUST_HEX):0{CACHE_BUST_HEX}x}" if s.cache_bypass else None
        marks = [len(n.decisions) for n in nodes]
        try:
            entry(make_request(cache_bust_target(token), s.client_ae))
        except UpstreamError as exc:
            ledger.complete = False
            exc.ledger = ledger
            raise
        ledger.events.append(
            [
                _event(n.profile.name, d)
                for n, m in zip(nodes, marks)
                for d in n.decisions[m:]
            ]
        )
    return ledger


def _event(name: str, d: NodeDecision) -> NodeEvent:
    fwd = None if d.forwarded_request is None else d.forwarded_request.accept_encoding
    return NodeEvent(name, fwd, d.transformation)


def _factor_links(kind: str, ledger: TrafficLedger) -> tuple[LinkRecord, LinkRecord]:
    links = ledger.links
    if kind in ("ccuf1", "ccuf2"):
        if len(links) < 3:
            raise ScenarioError(f"{kind} ledger needs client, inter-CDN and origin links")
        return links[1], links[0]
    if len(links) < 2:
        raise ScenarioError("ledger needs at least two links")
    return links[-1], links[0]


def amplification(ledger: TrafficLedger, kind: str, scenario_id: str = "") -> AmplificationReport:
    """Victim-link bytes over attacker-link bytes.

    cccf: CDN-origin over client-CDN; ccuf*: UCDN-OCDN over client-UCDN;
    custom: last link over first link.
    """
    num, den = _factor_links(kind, ledger)
    if den.total_bytes <= 0:
        raise DegenerateScenario(f"no traffic on {den.name}")
    return AmplificationReport(
        scenario_id, num.name, den.name, num.total_bytes / den.total_bytes, ledger.snapshot(), kind
    )


def report_for(s: Scenario, ledger: TrafficLedger | None = None) -> AmplificationReport:
    ledger = ledger if ledger is not None else run_scenario(s)
    r = amplification(ledger, s.kind, s.ident)
    return replace(
        r,
        ucdn=s.chain[0].name,
        ocdn=s.chain[1].name if len(s.chain) > 1 else "",
        case=str(s.client_ae),
        payload=payload_label(s.origin.asset),
    )


# -- built-in scenario family -------------------------------------------------


def reference_bomb(size: int = 1 << 20) -> PrecompressedPayload:
    return make_bomb(BombSpec(size, 0x30, GZIP, 9))


def angular_like_asset() -> TextCorpusPayload:
    return TextCorpusPayload(seed=42, length=333_000, target_gzip_ratio=6.0)


def payload_label(p: PayloadSpec) -> str:
    if isinstance(p, PrecompressedPayload):
        return f"bomb-{payload_length(p)}-{p.coding}"
    if isinstance(p, TextCorpusPayload):
        return f"text-{p.length}-r{p.target_gzip_ratio:g}"
    if isinstance(p, FillPayload):
        return f"fill-{p.length}"
    return type(p).__name__


def default_origin(kind: str, payload: PayloadSpec) -> OriginConfig:
    """cccf: an origin without compression; ccuf: an origin that always sends gzip."""
    if kind in ("ccuf1", "ccuf2"):
        return OriginConfig.always_encoded(payload, GZIP, 9)
    return OriginConfig.negotiate(payload)


def make_scenario(
    kind: str,
    chain: Sequence[CdnProfile],
    payload: PayloadSpec,
    client_coding: str | ContentCoding,
    **kw,
) -> Scenario:
    origin = kw.pop("origin", None) or default_origin(kind, payload)
    return Scenario(kind, tuple(chain), origin, AcceptEncoding.of(client_coding), **kw)


@dataclass(frozen=True)
class SkippedCombo:
    kind: str
    ucdn: str
    ocdn: str
    case: str
    payload: str
    reason: str


class MatrixResult(list):
    """List of AmplificationReport for viable combinations; ``skipped`` holds the rest."""

    def __init__(self, reports=(), skipped=()):
        super().__init__(reports)
        self.skipped: list[SkippedCombo] = list(skipped)
        self.scenarios: dict[str, Scenario] = {}


def attack_shape_failure(s: Scenario, ledger: TrafficLedger) -> str | None:
    """Why a run did not exhibit the scenario kind's attack mechanism, or None."""
    if s.kind not in ("ccuf1", "ccuf2"):
        return None
    events = ledger.events[0]
    ucdn = next(e for e in events if e.node == s.chain[0].name)
    ocdn = [e for e in events if e.node == s.chain[1].name][-1]
    if s.kind == "ccuf1" and (ucdn.forwarded_ae is None or ucdn.forwarded_ae.absent):
        return "ucdn_deletes_ae"
    if s.kind == "ccuf2" and ucdn.forwarded_ae is not None and not ucdn.forwarded_ae.absent:
        return "ucdn_forwards_ae"
    if ocdn.transformation.kind is not TransformKind.DECOMPRESSED:
        return "ocdn_no_decompression"
    if ucdn.transformation.kind is not TransformKind.COMPRESSED:
        return "ucdn_no_recompression"
    return None


def _combos(profiles, kinds, payloads, codings):
    for kind in kinds:
        for payload in payloads:
            for coding in codings if codings is not None else KIND_CODINGS[kind]:
                if kind == "cccf":
                    for p in profiles:
                        yield kind, (p,), payload, coding
                else:
                    for u in profiles:
                        for o in profiles:
                            yield kind, (u, o), payload, coding


def scenario_matrix(
    profiles: Iterable[CdnProfile],
    kinds: Iterable[str] = ("cccf",),
    payloads: Iterable[PayloadSpec] = (),
    codings: Iterable[str | ContentCoding] | None = None,
    *,
    overhead: OverheadModel = PACKETIZED,
    mitigations: Iterable[str] = (),
    require_attack_shape: bool = True,
    workers: int = 1,
) -> MatrixResult:
    profiles = list(profiles)
    kinds = list(kinds)
    payloads = list(payloads)
    if codings is not None:
        codings = [ContentCoding.of(c) for c in codings]
    order = {p.name: i for i, p in enumerate(profiles)}
    result = MatrixResult()
    todo = []
    for kind, chain, payload, coding in _combos(profiles, kinds, payloads, codings):
        label = payload_label(payload)
        ocdn = chain[1].name if len(chain) > 1 else ""
        if coding not in chain[0].edge.codings:
            result.skipped.append(
                SkippedCombo(kind, chain[0].name, ocdn, str(coding), label, f"edge_lacks_{coding}")
            )
            continue
        s = make_scenario(kind, chain, payload, coding, overhead=overhead, mitigations=frozenset(mitigations))
        todo.append(s)

    def run(s):
        ledger = run_scenario(s)
        return s, ledger

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            done = list(pool.map(run, todo))
    else:
        done = [run(s) for s in todo]

    for s, ledger in done:
        reason = attack_shape_failure(s, ledger) if require_attack_shape else None
        if reason:
            result.skipped.append(
                SkippedCombo(
                    s.kind, s.chain[0].name, s.chain[1].name, str(s.client_ae),
                    payload_label(s.origin.asset), reason,
                )
            )
            continue
        r = report_for(s, ledger)
        result.append(r)
        result.scenarios[r.scenario_id] = s

    kind_order = {k: i for i, k in enumerate(KINDS)}
    result.sort(
        key=lambda r: (kind_order[r.kind], order[r.ucdn], order.get(r.ocdn, -1), r.case != "gzip", r.payload)
    )
    return result

