"""Origin server and CDN edge node behaviour.

An edge node applies its forwarding policy to the client's Accept-Encoding,
fetches from upstream on a cache miss and then decides whether to pass the
upstream body through, compress it, decompress it, or convert it to another
coding.
"""

from __future__ import annotations

import functools
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

from .codecs import (
    BR,
    DEFAULT_SAFETY_CAP,
    SafetyCapExceeded,
    GZIP,
    IDENTITY,
    ContentCoding,
    PayloadSpec,
    PrecompressedPayload,
    compress,
    decompress,
    materialize,
)
from .http_model import (
    ABSENT,
    CDN_IDENTITY_HEADER,
    RESPONSE_TEMPLATE,
    AcceptEncoding,
    HttpMessage,
)
from .policy import CdnProfile, apply_forwarding_policy

log = logging.getLogger(__name__)

Upstream = Callable[[HttpMessage], HttpMessage]

VARY_VALUE = "Accept-Encoding"


class UpstreamError(Exception):
    """Upstream fetch failed; ``ledger`` is filled in by the simulator."""

    def __init__(self, message, node=None, ledger=None):
        super().__init__(message)
        self.node = node
        self.ledger = ledger


class TransformKind(str, Enum):
    PASS_THROUGH = "pass_through"
    COMPRESSED = "compressed"
    DECOMPRESSED = "decompressed"
    CONVERTED = "converted"


@dataclass(frozen=True)
class Transformation:
    kind: TransformKind
    coding: ContentCoding | None = None  # coding emitted downstream
    level: int | None = None
    source: ContentCoding | None = None  # coding received from upstream

    def __str__(self) -> str:
        if self.kind is TransformKind.COMPRESSED:
            return f"compressed({self.coding},{self.level})"
        if self.kind is TransformKind.CONVERTED:
            return f"converted({self.source},{self.coding})"
        return self.kind.value


PASS_THROUGH = Transformation(TransformKind.PASS_THROUGH)


def compressed(coding, level) -> Transformation:
    return Transformation(TransformKind.COMPRESSED, ContentCoding.of(coding), level, IDENTITY)


def decompressed(source=GZIP) -> Transformation:
    return Transformation(TransformKind.DECOMPRESSED, IDENTITY, None, ContentCoding.of(source))


def converted(source, target, level) -> Transformation:
    return Transformation(
        TransformKind.CONVERTED, ContentCoding.of(target), level, ContentCoding.of(source)
    )


# -- origin -------------------------------------------------------------------


@dataclass(frozen=True)
class OriginConfig:
    """``negotiate`` honours Accept-Encoding over ``supported``;
    ``always_encoded`` ignores it and always serves ``coding``/``level``."""

    asset: PayloadSpec
    mode: str = "negotiate"
    supported: frozenset[tuple[ContentCoding, int]] = frozenset()
    coding: ContentCoding | None = None
    level: int | None = None
    extra_response_header_bytes: int = 0

    def __post_init__(self):
        if self.mode not in ("negotiate", "always_encoded"):
            raise ValueError(f"unknown origin mode {self.mode!r}")
        object.__setattr__(
            self, "supported", frozenset((ContentCoding.of(c), l) for c, l in self.supported)
        )
        if self.mode == "always_encoded":
            if self.coding is None or self.level is None:
                raise ValueError("always_encoded needs coding and level")
            object.__setattr__(self, "coding", ContentCoding.of(self.coding))

    @classmethod
    def negotiate(cls, asset, supported=(), **kw) -> "OriginConfig":
        return cls(asset, "negotiate", frozenset(supported), **kw)

    @classmethod
    def always_encoded(cls, asset, coding, level, **kw) -> "OriginConfig":
        return cls(asset, "always_encoded", coding=coding, level=level, **kw)

    def describe(self) -> str:
        if self.mode == "always_encoded":
            return f"always {self.coding}{self.level}"
        if not self.supported:
            return "no compression"
        return "negotiate " + " ".join(f"{c}{l}" for c, l in sorted(self.supported))


@functools.lru_cache(maxsize=8)
def asset_plaintext(asset: PayloadSpec) -> bytes:
    return materialize(asset)


@functools.lru_cache(maxsize=64)
def encode_cached(data: bytes, coding: ContentCoding, level: int) -> bytes:
    return compress(data, coding, level)


def encoded_asset(asset: PayloadSpec, coding: ContentCoding, level: int) -> bytes:
    if coding.is_identity:
        return asset_plaintext(asset)
    if isinstance(asset, PrecompressedPayload) and asset.coding == coding:
        return asset.compressed
    return encode_cached(asset_plaintext(asset), coding, level)


EXTRA_HEADER = "X-Origin-Extra"


def response_headers(body_len: int, coding: ContentCoding, extra: int = 0):
    headers = list(RESPONSE_TEMPLATE)
    if extra > 0:
        headers.append((EXTRA_HEADER, "x" * extra))
    headers.append(("Content-Length", str(body_len)))
    if not coding.is_identity:
        headers.append(("Content-Encoding", coding.token))
    return tuple(headers)


def origin_respond(cfg: OriginConfig, req: HttpMessage) -> HttpMessage:
    if cfg.mode == "always_encoded":
        coding, level = cfg.coding, cfg.level
    else:
        coding, level = IDENTITY, None
        offered = dict(cfg.supported)
        for c, _q in req.accept_encoding.ranked():
            if c in offered:
                coding, level = c, offered[c]
                break
    body = encoded_asset(cfg.asset, coding, level)
    headers = response_headers(len(body), coding, cfg.extra_response_header_bytes)
    return HttpMessage("HTTP/1.1 200 OK", headers, body)


# -- edge ---------------------------------------------------------------------


def deliverable_codings(profile: CdnProfile, downstream_tls: bool = True) -> dict[ContentCoding, int]:
    """Codings (and levels) the edge will produce on this connection."""
    out = {}
    for coding, level in sorted(profile.edge.supported):
        if coding == BR and not (downstream_tls or profile.brotli_over_plain_http):
            continue
        out.setdefault(coding, level)
    return out


def client_view(
    profile: CdnProfile, ae: AcceptEncoding, downstream_tls: bool = True
) -> AcceptEncoding:
    """The client's Accept-Encoding as this node understands it.

    No header (or a header the node's exact-match keying does not
    recognise) reads as identity-only; codings the node cannot produce on
    this connection are dropped, except the universally decoded gzip and
    deflate.
    """
    if ae.absent or (profile.ae_match == "exact" and profile.policy_key(ae) == "other"):
        return AcceptEncoding(())
    known = {IDENTITY, GZIP, ContentCoding("deflate")} | set(
        deliverable_codings(profile, downstream_tls)
    )
    return AcceptEncoding(tuple(e for e in ae.entries if e[0] in known))


def _accepts_only_identity(view: AcceptEncoding) -> bool:
    return not any(q > 0 and not c.is_identity for c, q in view.entries)


def _best_edge_coding(view: AcceptEncoding, offered: dict) -> ContentCoding | None:
    candidates = [(q, c == BR, -i, c) for i, (c, q) in enumerate(view.entries) if q > 0 and c in offered]
    return max(candidates)[3] if candidates else None


def decide_transformation(
    profile: CdnProfile,
    client_ae: AcceptEncoding,
    upstream_resp: HttpMessage,
    downstream_tls: bool = True,
) -> Transformation:
    view = client_view(profile, client_ae, downstream_tls)
    offered = deliverable_codings(profile, downstream_tls)
    upstream = upstream_resp.content_coding

    own_header = (CDN_IDENTITY_HEADER, profile.name)
    foreign_cdn = any(
        k.lower() == CDN_IDENTITY_HEADER.lower() and (k, v) != own_header
        for k, v in upstream_resp.headers
    )
    if foreign_cdn and not profile.compresses_upstream_cdn_responses:
        return PASS_THROUGH
    if upstream.is_identity:
        best = _best_edge_coding(view, offered)
        if best is not None and profile.edge.compresses_when_origin_identity:
            return compressed(best, offered[best])
    elif _accepts_only_identity(view):
        if upstream == GZIP and profile.decompresses_gzip_for_identity:
            return decompressed(GZIP)
        return PASS_THROUGH
    # same choice as for fresh compression, so a cached variant re-decides to itself
    preferred = _best_edge_coding(view, offered)
    if (
        preferred is not None
        and preferred != upstream
        and profile.edge.converts_between_codings
        and upstream.has_codec
    ):
        return converted(upstream, preferred, offered[preferred])
    return PASS_THROUGH


def apply_transformation(
    profile: CdnProfile,
    t: Transformation,
    upstream_resp: HttpMessage,
    max_size: int = DEFAULT_SAFETY_CAP,
) -> HttpMessage:
    if t.kind is TransformKind.PASS_THROUGH:
        resp = upstream_resp
        varies = any("accept-encoding" in v.lower() for v in resp.header_all("Vary"))
        if not resp.content_coding.is_identity and not varies:
            # compressed responses always leave the edge marked as varying
            resp = resp.with_header("Vary", VARY_VALUE)
    else:
        body = upstream_resp.body
        if t.kind in (TransformKind.DECOMPRESSED, TransformKind.CONVERTED):
            body = decompress(body, t.source, max_size)
        if t.kind in (TransformKind.COMPRESSED, TransformKind.CONVERTED):
            body = encode_cached(body, t.coding, t.level)
        resp = upstream_resp.without("Content-Length", "Content-Encoding", "Vary")
        resp = resp.with_header("Content-Length", str(len(body)))
        if not t.coding.is_identity:
            resp = resp.with_header("Content-Encoding", t.coding.token)
        resp = resp.with_header("Vary", VARY_VALUE)
        resp = HttpMessage(resp.start_line, resp.headers, body)
    own = (CDN_IDENTITY_HEADER, profile.name)
    if profile.emits_cdn_identity_header and own not in resp.headers:
        resp = resp.with_header(*own)
    return resp


@dataclass
class CacheState:
    enabled: bool = True
    entries: dict = field(default_factory=dict)


@dataclass(frozen=True)
class NodeDecision:
    forwarded_request: HttpMessage | None
    response_to_client: HttpMessage
    transformation: Transformation
    upstream_response: HttpMessage | None = None

    @property
    def cache_hit(self) -> bool:
        return self.forwarded_request is None


def cache_key(profile: CdnProfile, req: HttpMessage, view: AcceptEncoding):
    path, _, query = req.target.partition("?")
    if not profile.honors_query_string_bypass:
        query = ""
    return (path, query, view.primary or IDENTITY)


def forwarded_accept_encoding(
    profile: CdnProfile, client_ae: AcceptEncoding, customer_deletes_ae: bool = False
) -> AcceptEncoding:
    if customer_deletes_ae and profile.allows_customer_header_deletion:
        return ABSENT
    return apply_forwarding_policy(profile, client_ae)


def handle_request(
    profile: CdnProfile,
    cache: CacheState,
    client_req: HttpMessage,
    upstream: Upstream,
    *,
    customer_deletes_ae: bool = False,
    downstream_tls: bool = True,
    max_size: int = DEFAULT_SAFETY_CAP,
) -> NodeDecision:
    client_ae = client_req.accept_encoding
    key = cache_key(profile, client_req, client_view(profile, client_ae, downstream_tls))
    if cache.enabled and key in cache.entries:
        stored = cache.entries[key]
        t = decide_transformation(profile, client_ae, stored, downstream_tls)
        resp = apply_transformation(profile, t, stored, max_size)
        return NodeDecision(None, resp, t, None)

    fwd_ae = forwarded_accept_encoding(profile, client_ae, customer_deletes_ae)
    fwd = client_req.with_accept_encoding(fwd_ae)
    try:
        up = upstream(fwd)
    except (UpstreamError, SafetyCapExceeded):
        raise
    except Exception as exc:
        raise UpstreamError(f"{profile.name}: upstream fetch failed: {exc}", node=profile.name) from exc

    if up.status != 200:
        return NodeDecision(fwd, up, PASS_THROUGH, up)
    t = decide_transformation(profile, client_ae, up, downstream_tls)
    resp = apply_transformation(profile, t, up, max_size)
    log.debug("%s: %s -> %s, %s", profile.name, client_ae, fwd_ae, t)
    if cache.enabled:
        cache.entries[key] = resp
    return NodeDecision(fwd, resp, t, up)


class EdgeNode:
    """A profile bound to its own cache and upstream; callable like an upstream."""

    def __init__(
        self,
        profile: CdnProfile,
        upstream: Upstream,
        *,
        cache: CacheState | None = None,
        customer_deletes_ae: bool = False,
        downstream_tls: bool = True,
        max_size: int = DEFAULT_SAFETY_CAP,
    ):
        self.profile = profile
        self.upstream = upstream
        self.cache = cache if cache is not None else CacheState()
        self.customer_deletes_ae = customer_deletes_ae
        self.downstream_tls = downstream_tls
        self.max_size = max_size
        self.decisions: list[NodeDecision] = []

    def __call__(self, req: HttpMessage) -> HttpMessage:
        d = handle_request(
            self.profile,
            self.cache,
            req,
            self.upstream,
            customer_deletes_ae=self.customer_deletes_ae,
            downstream_tls=self.downstream_tls,
            max_size=self.max_size,
        )
        self.decisions.append(d)
        return d.response_to_client
