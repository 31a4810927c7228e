"""Exit criteria, one test each. Every test records a PASS/FAIL line with detail.

Run ``pytest -m acceptance`` (the lines are repeated in the terminal summary)
or ``python tests/test_acceptance.py``.
"""

import time
from dataclasses import replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cdnconvert.closed_form import closed_form_factor
from cdnconvert.codecs import BombSpec, GZIP, make_bomb, materialize, payload_length, compress
from cdnconvert.http_model import HTTP_ONLY, PACKETIZED, AcceptEncoding, serialize_accept_encoding
from cdnconvert.policy import CANONICAL_INPUTS, PROFILES, apply_forwarding_policy, builtin_profiles
from cdnconvert.probe import classify_endpoint, run_probe_suite
from cdnconvert.server import LoopbackNode, RecordingOrigin, reference_asset
from cdnconvert.simulate import angular_like_asset, reference_bomb, report_for, scenario_matrix

from scenario_strategies import (
    check_pass_through_conservation,
    check_repetition_linearity,
    check_single_origin_fetch,
    scenarios,
)
from table_data import CCCF_BOMB, CCUF1, CCUF2, DECOMPRESSORS, EDGE, FORWARDING

pytestmark = pytest.mark.acceptance

RESULTS: list[str] = []
BAND = 2.0


def record(n: int, title: str, ok: bool, detail: str, extra=()):
    RESULTS.append(f"[{'PASS' if ok else 'FAIL'}] C{n} {title}: {detail}")
    RESULTS.extend(f"        {line}" for line in extra)
    assert ok, f"C{n} {title}: {detail}\n" + "\n".join(extra)


def within_band(got: float, want: float) -> bool:
    return want / BAND <= got <= want * BAND


def band_lines(pairs):
    return [
        f"{'ok  ' if within_band(got, want) else 'OUT '} {key}: simulated {got:.2f} vs measured {want:.2f} "
        f"(x{got / want:.2f})"
        for key, got, want in pairs
    ]


@pytest.fixture(scope="module")
def bomb():
    return reference_bomb()


def test_c1_forwarding_table():
    t = time.perf_counter()
    bad = []
    for p in builtin_profiles():
        for c, want in zip(CANONICAL_INPUTS, FORWARDING[p.name]):
            got = serialize_accept_encoding(apply_forwarding_policy(p, AcceptEncoding.of(c)))
            if got != want:
                bad.append(f"{p.name}/{c}: {got!r} != {want!r}")
    dt = time.perf_counter() - t
    cells = len(FORWARDING) * len(CANONICAL_INPUTS)
    record(1, "Forwarding-table fidelity", not bad and dt < 1 and cells == 55,
           f"{cells - len(bad)}/{cells} cells match in {dt * 1000:.1f} ms", bad)


def test_c2_edge_table():
    bad = []
    for p in builtin_profiles():
        got = {str(c): p.edge.level(c) for c in p.edge.codings}
        if got != EDGE[p.name]:
            bad.append(f"{p.name}: {got} != {EDGE[p.name]}")
    decomp = {p.name for p in builtin_profiles() if p.decompresses_gzip_for_identity}
    if decomp != DECOMPRESSORS:
        bad.append(f"decompressors {sorted(decomp)} != {sorted(DECOMPRESSORS)}")
    record(2, "Edge-table fidelity", not bad,
           f"{11 - sum(':' in b for b in bad)}/11 edge rows match; decompressors {sorted(decomp)}", bad)


def test_c3_bomb_ratio():
    t = time.perf_counter()
    spec = BombSpec(1 << 20, 0x30, GZIP, 9)
    b = make_bomb(spec)
    dt = time.perf_counter() - t
    record(3, "Bomb ratio", b.ratio >= 950 and dt < 1,
           f"{len(b.compressed)} B for 1 MiB, ratio {b.ratio:.1f} (>= 950) in {dt * 1000:.0f} ms")


def test_c4_oracle_equivalence(bomb):
    t = time.perf_counter()
    worst_rel, exact_bad, n = 0.0, [], 0
    for overhead in (HTTP_ONLY, PACKETIZED):
        m = scenario_matrix(builtin_profiles(), ["cccf", "ccuf1", "ccuf2"], [bomb, angular_like_asset()],
                            overhead=overhead, require_attack_shape=False)
        for r in m:
            s = m.scenarios[r.scenario_id]
            for variant in (s, replace(s, repetitions=3), replace(s, repetitions=3, cache_bypass=False)):
                a, b = report_for(variant).factor, closed_form_factor(variant)
                n += 1
                if overhead is HTTP_ONLY and a != b:
                    exact_bad.append(f"{variant.ident}: {a!r} != {b!r}")
                worst_rel = max(worst_rel, abs(a - b) / b)
    dt = time.perf_counter() - t
    record(4, "Oracle equivalence", not exact_bad and worst_rel <= 1e-9 and dt < 30,
           f"{n} scenarios, {len(exact_bad)} http_only mismatches, worst packetized rel err {worst_rel:.1e}, "
           f"{dt:.1f} s", exact_bad[:10])


def test_c5_cccf_bomb(bomb):
    m = scenario_matrix(builtin_profiles(), ["cccf"], [bomb], overhead=PACKETIZED)
    got = {(r.ucdn, r.case): r.factor for r in m}
    pairs = [(f"{k[0]} {k[1]}", got.get(k, 0.0), v) for k, v in CCCF_BOMB.items()]
    inside = sum(within_band(g, w) for _, g, w in pairs)
    order_bad = [name for (name, case) in got if case == "br" and not got[name, "br"] > got[name, "gzip"]]
    ok = inside == len(pairs) and not order_bad and set(got) == set(CCCF_BOMB)
    record(5, "CCCF bomb reproduction", ok,
           f"{inside}/{len(pairs)} rows within x{BAND:g}; br > gzip holds for "
           f"{sum(c == 'br' for _, c in got) - len(order_bad)}/{sum(c == 'br' for _, c in got)} br-capable CDNs",
           band_lines(pairs))


def test_c6_cccf_text():
    asset = angular_like_asset()
    plain = materialize(asset)
    ratio = len(plain) / len(compress(plain, GZIP, 5))
    m = scenario_matrix(builtin_profiles(), ["cccf"], [asset], ["gzip"], overhead=PACKETIZED)
    factors = {r.ucdn: r.factor for r in m}
    bad = [f"{k}: {v:.2f}" for k, v in factors.items() if not 3.5 <= v <= 12]
    record(6, "CCCF text reproduction", len(factors) == 11 and not bad and payload_length(asset) == 333_000,
           f"corpus gzip ratio {ratio:.2f}; {len(factors) - len(bad)}/11 factors in [3.5, 12], "
           f"range {min(factors.values()):.2f}-{max(factors.values()):.2f}",
           [f"{k}: {v:.2f}" for k, v in sorted(factors.items())])


def test_c7_ccuf(bomb):
    t1 = scenario_matrix(builtin_profiles(), ["ccuf1"], [bomb], overhead=PACKETIZED)
    t2 = scenario_matrix(builtin_profiles(), ["ccuf2"], [bomb], overhead=PACKETIZED)
    g1 = {(r.ucdn, r.ocdn): r.factor for r in t1}
    g2 = {(r.ucdn, r.ocdn, r.case): r.factor for r in t2}
    p1 = [(f"type1 {u}/{o} br", g1.get((u, o), 0.0), v) for (u, o), v in CCUF1.items()]
    p2 = [(f"type2 {u}/{o} {c}", g2.get((u, o, c), 0.0), v) for (u, o, c), v in CCUF2.items()]
    in1 = sum(within_band(g, w) for _, g, w in p1)
    in2 = sum(within_band(g, w) for _, g, w in p2)
    ok = set(g1) == set(CCUF1) and set(g2) == set(CCUF2) and in1 == len(p1) and in2 == len(p2)
    record(7, "CCUF viability", ok,
           f"{len(g1)} type-1 combos (want 8), {len(g2)} type-2 rows (want 16); "
           f"within x{BAND:g}: type-1 {in1}/{len(p1)}, type-2 {in2}/{len(p2)}",
           band_lines(p1 + p2))


def test_c8_mitigations(bomb):
    lines, bad = [], 0
    for kind, mitigation in (("cccf", "origin_dual_codec"), ("ccuf2", "ucdn_laziness"), ("ccuf1", "ocdn_no_convert")):
        m = scenario_matrix(builtin_profiles(), [kind], [bomb], overhead=PACKETIZED)
        worst = []
        for r in m:
            f = report_for(m.scenarios[r.scenario_id].with_mitigations(mitigation)).factor
            if f > 1.2:
                worst.append(f"{r.ucdn}{'/' + r.ocdn if r.ocdn else ''} {r.case} {f:.2f}")
        bad += len(worst)
        lines.append(f"{mitigation} on {kind}: {len(m) - len(worst)}/{len(m)} rows <= 1.2"
                     + (f"; above: {', '.join(worst)}" if worst else ""))
    record(8, "Mitigation collapse", bad == 0, f"{bad} rows stay above 1.2", lines)


def test_c9_probe_round_trip():
    t = time.perf_counter()
    reference = materialize(reference_asset())
    bad = []
    for p in builtin_profiles():
        with RecordingOrigin() as origin, LoopbackNode(p, origin.url) as node:
            obs = run_probe_suite(node.url, origin.url, confirm_origin_control=True, interval=0)
        cls = classify_endpoint(obs, reference)
        want_map = dict(zip(CANONICAL_INPUTS, FORWARDING[p.name]))
        want_levels = {c: p.edge.level(c) for c in p.edge.codings}
        if cls.forward_map != want_map:
            bad.append(f"{p.name}: forward map {cls.forward_map}")
        if {str(c): l for c, l in cls.estimated_levels.items()} != EDGE[p.name] or cls.estimated_levels != want_levels:
            bad.append(f"{p.name}: levels {cls.estimated_levels}")
        if cls.decompresses_gzip_for_identity != (p.name in DECOMPRESSORS):
            bad.append(f"{p.name}: decompression flag {cls.decompresses_gzip_for_identity}")
    dt = time.perf_counter() - t
    record(9, "Probe round trip", not bad and dt < 60,
           f"{11 - len({b.split(':')[0] for b in bad})}/11 profiles fully recovered in {dt:.1f} s", bad)


def test_c10_properties():
    counts = {"conservation": 0, "linearity": 0, "single_fetch": 0}

    @settings(max_examples=100)
    @given(scenarios())
    def conservation(s):
        check_pass_through_conservation(s)
        counts["conservation"] += 1

    @settings(max_examples=60)
    @given(scenarios(), st.integers(2, 4))
    def linearity(s, n):
        check_repetition_linearity(s, n)
        counts["linearity"] += 1

    @settings(max_examples=60)
    @given(scenarios(cache_bypass=False), st.integers(2, 4))
    def single_fetch(s, n):
        check_single_origin_fetch(s, n)
        counts["single_fetch"] += 1

    failure = None
    try:
        conservation()
        linearity()
        single_fetch()
    except AssertionError as exc:
        failure = str(exc).splitlines()[0]
    total = sum(counts.values())
    record(10, "Conservation and cache properties", failure is None and total >= 200,
           f"{total} generated cases ({', '.join(f'{k} {v}' for k, v in counts.items())})"
           + (f"; first failure: {failure}" if failure else ""))


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
