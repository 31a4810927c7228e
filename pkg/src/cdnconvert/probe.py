"""Classify a CDN endpoint that fronts an origin under the caller's control.

A probe suite sends one request per canonical coding plus an absent-header
request to /asset, then identity requests to the always-compressed /bomb and
/bomb-br routes. The recording origin's /log tells us what reached it. From
that the classifier rebuilds the forwarding map, the codings and levels the
edge compresses with, and whether it decompresses for identity clients.
"""

from __future__ import annotations

import json
import logging
import secrets
import time
from dataclasses import dataclass, field

from .codecs import BR, GZIP, IDENTITY, ContentCoding, compress, valid_levels
from .http_model import (
    ABSENT,
    REQUEST_TEMPLATE,
    AcceptEncoding,
    parse_accept_encoding,
    serialize_accept_encoding,
)
from .policy import (
    CANONICAL_INPUTS,
    CdnProfile,
    IncompleteObservation,
    PolicyClass,
    apply_forwarding_policy,
    builtin_profiles,
    classify_policy,
)
from .server import fetch

log = logging.getLogger(__name__)

DEFAULT_INTERVAL = 0.2
MAX_REQUESTS = 32
LEVEL_TOLERANCE = 0.02


class ProbeTransportError(Exception):
    pass


class OriginControlNotConfirmed(PermissionError):
    """The caller did not assert control of the origin behind the target."""


@dataclass(frozen=True)
class ProbeObservation:
    label: str  # canonical coding, "absent", or "identity@/bomb" style
    path: str
    sent_ae: AcceptEncoding
    origin_received_ae: AcceptEncoding | None  # None = unknown
    response_coding: ContentCoding | None = None
    response_body_size: int | None = None
    vary_header_present: bool = False
    origin_sent_coding: ContentCoding | None = None  # None = unknown
    error: ProbeTransportError | None = field(default=None, compare=False)

    @property
    def ok(self) -> bool:
        return self.error is None


def _suite_plan():
    plan = [(c, "/asset", AcceptEncoding.of(c)) for c in CANONICAL_INPUTS]
    plan.append(("absent", "/asset", ABSENT))
    plan.append(("identity@/bomb", "/bomb", AcceptEncoding.of(IDENTITY)))
    plan.append(("identity@/bomb-br", "/bomb-br", AcceptEncoding.of(IDENTITY)))
    return plan


def _origin_saw(origin_url: str, token: str):
    """(received Accept-Encoding, coding served) for the logged request."""
    records = json.loads(fetch(origin_url, "/log", ()).body)
    for rec in reversed(records):
        if token in rec["path"]:
            values = [v for k, v in rec["headers"] if k.lower() == "accept-encoding"]
            ae = parse_accept_encoding(", ".join(values)) if values else ABSENT
            sent = rec.get("response_coding")
            return ae, ContentCoding(sent) if sent else None
    return None, None


def run_probe_suite(
    target_url: str,
    recording_origin_url: str | None,
    *,
    confirm_origin_control: bool = False,
    interval: float = DEFAULT_INTERVAL,
    max_requests: int = MAX_REQUESTS,
    timeout: float = 10.0,
) -> list[ProbeObservation]:
    """Send the probe suite sequentially, at most one request per ``interval``.

    ``recording_origin_url`` may be None when the origin log is not
    reachable; observations then carry an unknown origin_received_ae.
    """
    if not confirm_origin_control:
        raise OriginControlNotConfirmed(
            "probing requires confirmation that you control the origin behind the target"
        )
    plan = _suite_plan()
    if len(plan) > min(max_requests, MAX_REQUESTS):
        raise ValueError(f"suite needs {len(plan)} requests, cap is {min(max_requests, MAX_REQUESTS)}")
    out = []
    last = None
    for label, path, ae in plan:
        if last is not None and interval > 0:
            time.sleep(max(0.0, interval - (time.monotonic() - last)))
        last = time.monotonic()
        token = secrets.token_hex(8)
        target = f"{path}?probe={token}"
        headers = list(REQUEST_TEMPLATE[1:])  # Host comes from the target URL
        value = serialize_accept_encoding(ae)
        if value is not None:
            headers.append(("Accept-Encoding", value))
        try:
            resp = fetch(target_url, target, headers, timeout)
            seen, sent = _origin_saw(recording_origin_url, token) if recording_origin_url else (None, None)
        except (OSError, ValueError) as exc:
            err = ProbeTransportError(f"{label}: {exc}")
            log.warning("probe %s failed: %s", label, exc)
            out.append(ProbeObservation(label, path, ae, None, error=err))
            continue
        vary = any("accept-encoding" in v.lower() for v in resp.header_all("Vary"))
        out.append(
            ProbeObservation(label, path, ae, seen, resp.content_coding, len(resp.body), vary, sent)
        )
    return out


@dataclass(frozen=True)
class EndpointClassification:
    policy_class: PolicyClass | None
    forward_map: dict  # canonical coding -> forwarded header value, None when deleted
    edge_codings: frozenset
    estimated_levels: dict  # coding -> level
    level_confidence: dict  # coding -> exact | within_2pct | ambiguous
    decompresses_gzip_for_identity: bool | None
    supports_br_decompression: bool | None
    unknown: tuple[str, ...] = ()

    def policy_summary(self) -> str:
        if any(c not in self.forward_map for c in CANONICAL_INPUTS):
            return "unknown"
        values = [self.forward_map[c] for c in CANONICAL_INPUTS]
        if all(v == c for v, c in zip(values, CANONICAL_INPUTS)):
            return "keep-all"
        if all(v is None for v in values):
            return "delete-all"
        if len(set(values)) == 1:
            return f"replace-all({values[0]})"
        cells = ", ".join(
            f"{c}={'delete' if v is None else 'keep' if v == c else v}"
            for c, v in zip(CANONICAL_INPUTS, values)
        )
        return f"mixed({cells})"

    def edge_summary(self) -> str:
        parts = []
        for c in (GZIP, BR):
            if c in self.edge_codings:
                parts.append(f"{c}{self.estimated_levels.get(c, '?')}")
        return " ".join(parts) or "none"


def estimate_level(observed: int, reference: bytes, coding: ContentCoding) -> tuple[int, str]:
    """Nearest local compressed size wins; ties go to the lower level."""
    sizes = [(abs(observed - len(compress(reference, coding, l))), l) for l in valid_levels(coding)]
    diff, level = min(sizes)
    if diff == 0:
        band = "exact"
    elif diff <= LEVEL_TOLERANCE * observed:
        band = "within_2pct"
    else:
        band = "ambiguous"
    return level, band


def classify_endpoint(
    obs: list[ProbeObservation], reference_asset: bytes, *, partial: bool = False
) -> EndpointClassification:
    """Rebuild an endpoint's policy, edge codings and levels from a suite.

    Missing or failed canonical observations raise IncompleteObservation
    unless ``partial`` is set, in which case the affected fields are None
    and listed in ``unknown``.
    """
    by_label = {o.label: o for o in obs if o.ok}
    unknown = []

    forward_map = {}
    for c in CANONICAL_INPUTS:
        o = by_label.get(c)
        if o is None or o.origin_received_ae is None:
            unknown.append(f"forward.{c}")
            continue
        forward_map[c] = serialize_accept_encoding(o.origin_received_ae)
    if unknown and not partial:
        raise IncompleteObservation(f"missing observations: {', '.join(unknown)}")

    policy_class = None
    if len(forward_map) == len(CANONICAL_INPUTS):
        policy_class = classify_policy(forward_map)
    else:
        unknown.append("policy_class")

    edge, levels, bands = set(), {}, {}
    for c in CANONICAL_INPUTS:
        o = by_label.get(c)
        if o is None:
            continue
        # an unlogged origin is assumed to serve /asset uncompressed
        origin_identity = o.origin_sent_coding is None or o.origin_sent_coding.is_identity
        coding = o.response_coding
        if coding is None or coding.is_identity or not coding.has_codec or not origin_identity:
            continue
        edge.add(coding)
        if coding not in levels:
            levels[coding], bands[coding] = estimate_level(o.response_body_size, reference_asset, coding)

    def decompresses(label):
        o = by_label.get(label)
        if o is None:
            unknown.append(label)
            return None
        return o.response_coding is not None and o.response_coding.is_identity

    return EndpointClassification(
        policy_class,
        forward_map,
        frozenset(edge),
        levels,
        bands,
        decompresses("identity@/bomb"),
        decompresses("identity@/bomb-br"),
        tuple(unknown),
    )


def vary_offenders(obs: list[ProbeObservation]) -> list[ProbeObservation]:
    return [
        o for o in obs
        if o.ok and o.response_coding is not None and not o.response_coding.is_identity
        and not o.vary_header_present
    ]


def vary_check(obs: list[ProbeObservation]) -> bool:
    """True iff there is at least one compressed response and all carried Vary."""
    compressed = [
        o for o in obs if o.ok and o.response_coding is not None and not o.response_coding.is_identity
    ]
    return bool(compressed) and not vary_offenders(obs)


def expected_forward_map(profile: CdnProfile) -> dict:
    return {
        c: serialize_accept_encoding(apply_forwarding_policy(profile, AcceptEncoding.of(c)))
        for c in CANONICAL_INPUTS
    }


def closest_profile(cls: EndpointClassification, profiles=None) -> CdnProfile | None:
    """The built-in profile whose forwarding map and edge setup match exactly."""
    for p in profiles if profiles is not None else builtin_profiles():
        edge = {c: p.edge.level(c) for c in p.edge.codings}
        if (
            expected_forward_map(p) == cls.forward_map
            and set(edge) == set(cls.edge_codings)
            and edge == cls.estimated_levels
        ):
            return p
    return None


def describe(cls: EndpointClassification, profiles=None) -> str:
    """One summary line, e.g. ``Bunny-like: replace-all(gzip, deflate, br); edge gzip2 br2``."""
    match = closest_profile(cls, profiles)
    head = f"{match.name}-like" if match else "unmatched"
    return f"{head}: {cls.policy_summary()}; edge {cls.edge_summary()}"
