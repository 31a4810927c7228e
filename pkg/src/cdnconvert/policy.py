"""Accept-Encoding forwarding policies and the built-in CDN profiles."""

from __future__ import annotations

import configparser
import io
import re
from dataclasses import dataclass, replace
from enum import Enum
from types import MappingProxyType
from typing import Mapping

from .codecs import BR, GZIP, ContentCoding, valid_levels
from .http_model import ABSENT, AcceptEncoding, parse_accept_encoding, serialize_accept_encoding

CANONICAL_INPUTS = ("gzip", "compress", "deflate", "br", "identity")
POLICY_KEYS = CANONICAL_INPUTS + ("absent", "other")


class IncompleteObservation(ValueError):
    pass


class PolicyClass(str, Enum):
    LAZINESS = "Laziness"
    DELETION = "Deletion"
    MODIFICATION = "Modification"
    MIXED = "Mixed"


@dataclass(frozen=True)
class ForwardAction:
    kind: str  # keep | delete | replace
    with_: AcceptEncoding | None = None

    def __post_init__(self):
        if self.kind not in ("keep", "delete", "replace"):
            raise ValueError(f"unknown forward action {self.kind!r}")
        if self.kind == "replace" and (self.with_ is None or self.with_.absent):
            raise ValueError("replace needs a present Accept-Encoding value")

    @classmethod
    def parse(cls, text: str) -> "ForwardAction":
        text = text.strip()
        if text in ("keep", "delete"):
            return cls(text)
        if text.startswith("replace:"):
            return cls("replace", parse_accept_encoding(text[len("replace:"):].strip()))
        raise ValueError(f"bad forward action {text!r}")

    def __str__(self) -> str:
        if self.kind == "replace":
            return f"replace:{serialize_accept_encoding(self.with_)}"
        return self.kind


KEEP = ForwardAction("keep")
DELETE = ForwardAction("delete")


def replace_with(value: str) -> ForwardAction:
    return ForwardAction("replace", parse_accept_encoding(value))


@dataclass(frozen=True)
class PolicyTable:
    actions: Mapping[str, ForwardAction]

    def __post_init__(self):
        acts = {k: KEEP for k in ("absent", "other")}
        acts.update(self.actions)
        missing = [k for k in POLICY_KEYS if k not in acts]
        if missing:
            raise ValueError(f"policy table lacks {missing}")
        object.__setattr__(self, "actions", MappingProxyType(acts))

    @classmethod
    def uniform(cls, action: ForwardAction, **overrides: ForwardAction) -> "PolicyTable":
        acts = {k: action for k in CANONICAL_INPUTS}
        acts.update(overrides)
        return cls(acts)

    def __getitem__(self, key: str) -> ForwardAction:
        return self.actions[key]

    def __hash__(self):
        return hash(tuple(sorted((k, str(v)) for k, v in self.actions.items())))

    def __eq__(self, other):
        return isinstance(other, PolicyTable) and dict(self.actions) == dict(other.actions)


LAZY_TABLE = PolicyTable.uniform(KEEP)


@dataclass(frozen=True)
class EdgeCompression:
    supported: frozenset[tuple[ContentCoding, int]]
    compresses_when_origin_identity: bool = True
    converts_between_codings: bool = False

    def __post_init__(self):
        sup = frozenset((ContentCoding.of(c), lvl) for c, lvl in self.supported)
        for c, lvl in sup:
            if c not in (GZIP, BR):
                raise ValueError(f"edge compression only covers gzip/br, not {c}")
            if lvl not in valid_levels(c):
                raise ValueError(f"invalid level {lvl} for {c}")
        object.__setattr__(self, "supported", sup)

    @property
    def codings(self) -> frozenset[ContentCoding]:
        return frozenset(c for c, _ in self.supported)

    def level(self, coding: ContentCoding) -> int | None:
        levels = [lvl for c, lvl in self.supported if c == coding]
        return min(levels) if levels else None

    def label(self) -> str:
        """Compact ``gzip5 br5`` form."""
        order = {GZIP: 0, BR: 1}
        return " ".join(f"{c}{lvl}" for c, lvl in sorted(self.supported, key=lambda s: order[s[0]]))

    @classmethod
    def parse_label(cls, text: str, **kw) -> "EdgeCompression":
        pairs = []
        for item in text.split():
            m = re.fullmatch(r"([a-z]+)(\d+)", item.strip().lower())
            if not m:
                raise ValueError(f"bad edge entry {item!r}")
            pairs.append((ContentCoding(m.group(1)), int(m.group(2))))
        return cls(frozenset(pairs), **kw)


@dataclass(frozen=True)
class CdnProfile:
    """Behavioural model of one CDN.

    ``ae_match`` selects how a request's Accept-Encoding is keyed into the
    policy table: ``primary`` uses the highest-q coding, ``exact`` only
    recognises single-coding headers and files everything else under
    ``other``. ``brotli_over_plain_http`` says whether the edge will serve br
    on a non-TLS downstream connection.
    """

    name: str
    policy: PolicyTable
    edge: EdgeCompression
    decompresses_gzip_for_identity: bool = False
    emits_cdn_identity_header: bool = False
    compresses_upstream_cdn_responses: bool = True
    honors_query_string_bypass: bool = True
    allows_customer_header_deletion: bool = False
    brotli_over_plain_http: bool = True
    ae_match: str = "primary"

    def __post_init__(self):
        if self.ae_match not in ("primary", "exact"):
            raise ValueError(f"ae_match must be primary or exact, got {self.ae_match!r}")

    def policy_key(self, ae: AcceptEncoding) -> str:
        if ae.absent:
            return "absent"
        if self.ae_match == "exact":
            if len(ae.entries) != 1 or ae.entries[0][1] <= 0:
                return "other"
            return ae.entries[0][0].kind
        primary = ae.primary
        return "identity" if primary is None else primary.kind

    def lazy(self) -> "CdnProfile":
        return replace(self, policy=LAZY_TABLE, ae_match="primary")

    def without_conversion(self) -> "CdnProfile":
        edge = replace(self.edge, converts_between_codings=False)
        return replace(self, edge=edge, decompresses_gzip_for_identity=False)


def apply_forwarding_policy(profile: CdnProfile, incoming: AcceptEncoding) -> AcceptEncoding:
    action = profile.policy[profile.policy_key(incoming)]
    if action.kind == "keep":
        return incoming
    if action.kind == "delete":
        return ABSENT
    return action.with_


def classify_policy(observed: Mapping[str, AcceptEncoding | str | None]) -> PolicyClass:
    """Label an observed input->forwarded map with the policy it exhibits.

    Values may be AcceptEncoding objects or raw header strings (None for a
    deleted header). Modification means nothing was deleted and at least
    one input was rewritten.
    """
    missing = [k for k in CANONICAL_INPUTS if k not in observed]
    if missing:
        raise IncompleteObservation(f"no observation for {missing}")
    outs = {}
    for k in CANONICAL_INPUTS:
        v = observed[k]
        outs[k] = v if isinstance(v, AcceptEncoding) else parse_accept_encoding(v)
    same = [outs[k] == parse_accept_encoding(k) for k in CANONICAL_INPUTS]
    gone = [outs[k].absent for k in CANONICAL_INPUTS]
    if all(same):
        return PolicyClass.LAZINESS
    if all(gone):
        return PolicyClass.DELETION
    if not any(gone):
        return PolicyClass.MODIFICATION
    return PolicyClass.MIXED


def _row(gzip, compress, deflate, br, identity, **extra) -> PolicyTable:
    def act(cell):
        if cell == "delete":
            return DELETE
        if cell == "keep":
            return KEEP
        return replace_with(cell)

    cells = dict(zip(CANONICAL_INPUTS, (gzip, compress, deflate, br, identity)))
    acts = {k: act(v) for k, v in cells.items()}
    acts.update({k: act(v) for k, v in extra.items()})
    return PolicyTable(acts)


def _edge(label: str, converts: bool = False) -> EdgeCompression:
    return EdgeCompression.parse_label(label, converts_between_codings=converts)


_ALL_GZIP_DEFLATE_BR = "gzip, deflate, br"

_BUILTIN = (
    CdnProfile(
        "Azure",
        _row("keep", "keep", "keep", "keep", "delete"),
        _edge("gzip5 br5"),
        compresses_upstream_cdn_responses=False,
        allows_customer_header_deletion=True,
    ),
    CdnProfile(
        "Alibaba",
        _row("keep", "keep", "keep", "keep", "keep"),
        _edge("gzip5 br1"),
        allows_customer_header_deletion=True,
    ),
    CdnProfile(
        "Bunny",
        _row(*[_ALL_GZIP_DEFLATE_BR] * 5),
        _edge("gzip2 br2"),
        decompresses_gzip_for_identity=True,
        compresses_upstream_cdn_responses=False,
    ),
    CdnProfile(
        "Baidu",
        _row("keep", "delete", "keep", "keep", "delete"),
        _edge("gzip4 br4"),
        allows_customer_header_deletion=True,
    ),
    CdnProfile(
        "CloudFront",
        _row("keep", "keep", "keep", "keep", "keep"),
        _edge("gzip2 br6"),
        compresses_upstream_cdn_responses=False,
        allows_customer_header_deletion=True,
    ),
    CdnProfile(
        "Cloudflare",
        _row(*["gzip"] * 5),
        _edge("gzip2 br4", converts=True),
        decompresses_gzip_for_identity=True,
        emits_cdn_identity_header=True,
        allows_customer_header_deletion=True,
        brotli_over_plain_http=False,
    ),
    CdnProfile(
        "CDN77",
        _row(*["delete"] * 5, other="delete"),
        _edge("gzip5"),
    ),
    CdnProfile(
        "CDNetworks",
        _row("keep", "delete", "delete", "delete", "delete", other="delete"),
        _edge("gzip3"),
        decompresses_gzip_for_identity=True,
        allows_customer_header_deletion=True,
        ae_match="exact",
    ),
    CdnProfile(
        "G-core",
        _row(*["delete"] * 5, other="delete"),
        _edge("gzip2"),
    ),
    CdnProfile(
        "Tencent",
        _row("keep", "delete", "keep", "keep", "keep"),
        _edge("gzip5 br5"),
        compresses_upstream_cdn_responses=False,
        allows_customer_header_deletion=True,
    ),
    CdnProfile(
        "UPYun",
        _row(*["delete"] * 5, other="delete"),
        _edge("gzip5 br5"),
        decompresses_gzip_for_identity=True,
    ),
)

_ALIASES = {"gcore": "G-core", "upyun": "UPYun", "cdnetworks": "CDNetworks"}


def builtin_profiles() -> tuple[CdnProfile, ...]:
    return _BUILTIN


class ProfileRegistry(Mapping[str, CdnProfile]):
    """Name -> profile lookup; names match case-insensitively, ``Gcore`` == ``G-core``."""

    def __init__(self, profiles=_BUILTIN):
        self._by_name = {p.name: p for p in profiles}

    def _resolve(self, name: str) -> str:
        if name in self._by_name:
            return name
        low = name.lower().replace("-", "")
        for k in self._by_name:
            if k.lower().replace("-", "") == low:
                return k
        return _ALIASES.get(name.lower(), name)

    def __getitem__(self, name: str) -> CdnProfile:
        return self._by_name[self._resolve(name)]

    def __iter__(self):
        return iter(self._by_name)

    def __len__(self):
        return len(self._by_name)


PROFILES = ProfileRegistry()


# -- registry file ----------------------------------------------------------

_BOOL_FIELDS = (
    "decompresses_gzip_for_identity",
    "emits_cdn_identity_header",
    "compresses_upstream_cdn_responses",
    "honors_query_string_bypass",
    "allows_customer_header_deletion",
    "brotli_over_plain_http",
)


def dump_profiles(profiles) -> str:
    """Serialise profiles to the INI-style registry format."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    for p in profiles:
        sec = {f"policy.{k}": str(p.policy[k]) for k in POLICY_KEYS}
        sec["edge"] = p.edge.label()
        sec["edge.compresses_when_origin_identity"] = str(p.edge.compresses_when_origin_identity).lower()
        sec["edge.converts_between_codings"] = str(p.edge.converts_between_codings).lower()
        for f in _BOOL_FIELDS:
            sec[f] = str(getattr(p, f)).lower()
        sec["ae_match"] = p.ae_match
        cp[p.name] = sec
    buf = io.StringIO()
    buf.write("# cdnconvert profile registry v1\n")
    cp.write(buf)
    return buf.getvalue()


def load_profiles(text: str) -> list[CdnProfile]:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    cp.read_string(text)
    out = []
    for name in cp.sections():
        sec = cp[name]
        table = PolicyTable(
            {k: ForwardAction.parse(sec[f"policy.{k}"]) for k in POLICY_KEYS if f"policy.{k}" in sec}
        )
        edge = EdgeCompression.parse_label(
            sec.get("edge", ""),
            compresses_when_origin_identity=sec.getboolean("edge.compresses_when_origin_identity", True),
            converts_between_codings=sec.getboolean("edge.converts_between_codings", False),
        )
        flags = {f: sec.getboolean(f) for f in _BOOL_FIELDS if f in sec}
        out.append(
            CdnProfile(name, table, edge, ae_match=sec.get("ae_match", "primary"), **flags)
        )
    return out
