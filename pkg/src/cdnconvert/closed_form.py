"""Analytic amplification factor, computed from sizes alone.

This is an independent check on ``simulate.run_scenario``: it never builds
an HTTP message or calls into ``node``. Each response is reduced to its body
coding, body length and the set of extra header lines it carries; request and
response sizes are summed from header templates and codec output lengths.
"""

from __future__ import annotations

import functools
import random
from dataclasses import dataclass

from .codecs import (
    BR,
    DEFLATE,
    GZIP,
    IDENTITY,
    ContentCoding,
    PrecompressedPayload,
    SafetyCapExceeded,
    compress,
    materialize,
    payload_length,
)
from .http_model import ABSENT, REQUEST_TEMPLATE, RESPONSE_TEMPLATE, serialize_accept_encoding
from .policy import apply_forwarding_policy
from .simulate import (
    CACHE_BUST_HEX,
    DegenerateScenario,
    Scenario,
    cache_bust_target,
)

_STATUS_LINE = "HTTP/1.1 200 OK"
_CDN_HEADER = "X-Sim-CDN"
_EXTRA_HEADER = "X-Origin-Extra"
_VARY = ("Vary", "Accept-Encoding")


def _line(name: str, value: str) -> int:
    return len(name) + 2 + len(value) + 2


_REQ_BASE = sum(_line(k, v) for k, v in REQUEST_TEMPLATE) + 2
_RESP_BASE = len(_STATUS_LINE) + 2 + sum(_line(k, v) for k, v in RESPONSE_TEMPLATE) + 2


@dataclass(frozen=True)
class _Resp:
    coding: ContentCoding
    body: int
    extra: int  # origin extra header value length
    vary: bool
    cdn: tuple[str, ...]  # X-Sim-CDN values in order

    def size(self) -> int:
        n = _RESP_BASE + self.body + _line("Content-Length", str(self.body))
        if self.extra > 0:
            n += _line(_EXTRA_HEADER, "x" * self.extra)
        if not self.coding.is_identity:
            n += _line("Content-Encoding", self.coding.token)
        if self.vary:
            n += _line(*_VARY)
        return n + sum(_line(_CDN_HEADER, v) for v in self.cdn)


def _request_size(target: str, ae) -> int:
    n = len(f"GET {target} HTTP/1.1") + 2 + _REQ_BASE
    value = serialize_accept_encoding(ae)
    return n if value is None else n + _line("Accept-Encoding", value)


@functools.lru_cache(maxsize=256)
def _encoded_len(asset, coding, level) -> int:
    plain = materialize(asset, payload_length(asset))
    return len(compress(plain, coding, level))


class _Sizes:
    """Encoded body lengths, shared across scenarios with the same asset."""

    def __init__(self, asset, cap):
        self.asset = asset
        self.cap = cap
        self.plain_len = payload_length(asset)

    def origin(self, coding, level) -> int:
        if isinstance(self.asset, PrecompressedPayload) and self.asset.coding == coding:
            return len(self.asset.compressed)
        return self.encoded(coding, level)

    def encoded(self, coding, level) -> int:
        if coding.is_identity:
            return self.plain_len
        return _encoded_len(self.asset, coding, level)

    def decoded(self) -> int:
        if self.plain_len > self.cap:
            raise SafetyCapExceeded(f"decoding {self.plain_len} bytes exceeds cap {self.cap}")
        return self.plain_len


def _offered(profile, tls):
    out = {}
    for c, l in sorted(profile.edge.supported):
        if c == BR and not tls and not profile.brotli_over_plain_http:
            continue
        out.setdefault(c, l)
    return out


def _view(profile, ae, tls):
    if ae.absent:
        return ()
    if profile.ae_match == "exact" and profile.policy_key(ae) == "other":
        return ()
    keep = {IDENTITY, GZIP, DEFLATE} | set(_offered(profile, tls))
    return tuple((c, q) for c, q in ae.entries if c in keep)


def _primary(view):
    live = [(c, q) for c, q in view if q > 0]
    if not live:
        return None
    top = max(q for _, q in live)
    return next(c for c, q in live if q == top)


def _identity_only(view) -> bool:
    return all(q <= 0 or c.is_identity for c, q in view)


def _rewrite(profile, view, offered, up: _Resp, sizes: _Sizes):
    """(coding, body length) if this node rewrites the body, else None."""
    if any(v != profile.name for v in up.cdn) and not profile.compresses_upstream_cdn_responses:
        return None
    picks = [(q, c == BR, -i, c) for i, (c, q) in enumerate(view) if q > 0 and c in offered]
    best = max(picks)[3] if picks else None
    if up.coding.is_identity:
        if best is not None and profile.edge.compresses_when_origin_identity:
            return best, sizes.encoded(best, offered[best])
        return None
    if _identity_only(view):
        if up.coding == GZIP and profile.decompresses_gzip_for_identity:
            return IDENTITY, sizes.decoded()
        return None
    if best is not None and best != up.coding and profile.edge.converts_between_codings and up.coding.has_codec:
        sizes.decoded()
        return best, sizes.encoded(best, offered[best])
    return None


def _step(profile, ae, tls, up: _Resp, sizes: _Sizes) -> _Resp:
    """Response this node hands downstream, given the upstream response."""
    out = _rewrite(profile, _view(profile, ae, tls), _offered(profile, tls), up, sizes)
    if out is None:
        resp = _Resp(up.coding, up.body, up.extra, up.vary or not up.coding.is_identity, up.cdn)
    else:
        resp = _Resp(out[0], out[1], up.extra, True, up.cdn)
    if profile.emits_cdn_identity_header and profile.name not in resp.cdn:
        resp = _Resp(resp.coding, resp.body, resp.extra, resp.vary, resp.cdn + (profile.name,))
    return resp


def _key(profile, target, ae, tls):
    path, _, query = target.partition("?")
    if not profile.honors_query_string_bypass:
        query = ""
    return path, query, _primary(_view(profile, ae, tls)) or IDENTITY


def _origin(cfg, ae, sizes: _Sizes) -> _Resp:
    if cfg.mode == "always_encoded":
        coding, level = cfg.coding, cfg.level
    else:
        coding, level = IDENTITY, None
        offered = dict(cfg.supported)
        for c, q in sorted((e for e in ae.entries if e[1] > 0), key=lambda e: -e[1]):
            if c in offered:
                coding, level = c, offered[c]
                break
    return _Resp(coding, sizes.origin(coding, level), cfg.extra_response_header_bytes, False, ())


def closed_form_totals(s: Scenario) -> list[int]:
    """Total wire bytes per link, client side first."""
    chain = s.effective_chain()
    origin = s.effective_origin()
    sizes = _Sizes(origin.asset, s.max_size)
    oh = s.overhead.apply
    totals = [0] * (len(chain) + 1)
    caches = [dict() for _ in chain]
    rng = random.Random(s.seed)

    for _ in range(s.repetitions):
        token = f"{rng.getrandbits(4 * CACHE_BUST_HEX):0{CACHE_BUST_HEX}x}" if s.cache_bypass else None
        target = cache_bust_target(token)

        # walk down the chain until a cache hit or the origin
        aes = [s.client_ae]
        hit = None
        for i, p in enumerate(chain):
            totals[i] += oh(_request_size(target, aes[i]))
            key = _key(p, target, aes[i], s.downstream_tls(i))
            if key in caches[i]:
                hit = i
                break
            if s.customer_deletes_ae and p.allows_customer_header_deletion:
                aes.append(ABSENT)
            else:
                aes.append(apply_forwarding_policy(p, aes[i]))

        if hit is None:
            totals[-1] += oh(_request_size(target, aes[-1]))
            resp = _origin(origin, aes[-1], sizes)
            totals[-1] += oh(resp.size())
            start = len(chain) - 1
        else:
            cached = caches[hit][key]
            resp = _step(chain[hit], aes[hit], s.downstream_tls(hit), cached, sizes)
            totals[hit] += oh(resp.size())
            start = hit - 1

        for i in range(start, -1, -1):
            p = chain[i]
            tls = s.downstream_tls(i)
            resp = _step(p, aes[i], tls, resp, sizes)
            caches[i][_key(p, target, aes[i], tls)] = resp
            totals[i] += oh(resp.size())
    return totals


def closed_form_factor(s: Scenario) -> float:
    totals = closed_form_totals(s)
    if s.kind in ("ccuf1", "ccuf2"):
        num, den = totals[1], totals[0]
    else:
        num, den = totals[-1], totals[0]
    if den <= 0:
        raise DegenerateScenario("no traffic on the client link")
    return num / den
