import socket

import pytest

from cdnconvert.codecs import BR, GZIP, IDENTITY, compress, materialize
from cdnconvert.http_model import ABSENT, AcceptEncoding
from cdnconvert.policy import PROFILES, IncompleteObservation, PolicyClass
from cdnconvert.probe import (
    MAX_REQUESTS,
    OriginControlNotConfirmed,
    ProbeObservation,
    classify_endpoint,
    describe,
    estimate_level,
    expected_forward_map,
    run_probe_suite,
    vary_check,
)
from cdnconvert.server import LoopbackNode, RecordingOrigin, fetch, reference_asset


@pytest.fixture(scope="module")
def reference():
    return materialize(reference_asset())


def probe_profile(name):
    with RecordingOrigin() as origin, LoopbackNode(PROFILES[name], origin.url) as node:
        return run_probe_suite(node.url, origin.url, confirm_origin_control=True, interval=0)


@pytest.fixture(scope="module")
def suites():
    return {n: probe_profile(n) for n in ("Cloudflare", "G-core", "CDN77", "UPYun", "Bunny")}


def free_port():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def by_label(obs):
    return {o.label: o for o in obs}


class TestSuite:
    def test_cloudflare_br_reaches_origin_as_gzip(self, suites):
        o = by_label(suites["Cloudflare"])["br"]
        assert o.sent_ae == AcceptEncoding.of(BR)
        assert o.origin_received_ae == AcceptEncoding.of(GZIP)

    def test_gcore_deletes_everything(self, suites):
        for o in suites["G-core"]:
            assert o.origin_received_ae == ABSENT, o.label

    def test_suite_shape(self, suites):
        obs = suites["CDN77"]
        assert len(obs) == 8 <= MAX_REQUESTS
        assert all(o.ok for o in obs)
        assert len({o.label for o in obs}) == 8

    def test_unreachable_target(self):
        port = free_port()
        obs = run_probe_suite(f"http://127.0.0.1:{port}", None, confirm_origin_control=True, interval=0, timeout=1)
        assert len(obs) == 8 and all(not o.ok for o in obs)
        with pytest.raises(IncompleteObservation):
            classify_endpoint(obs, b"")
        cls = classify_endpoint(obs, b"", partial=True)
        assert cls.policy_class is None and cls.policy_summary() == "unknown"
        assert "policy_class" in cls.unknown and cls.decompresses_gzip_for_identity is None

    def test_ethics_gate(self):
        with pytest.raises(OriginControlNotConfirmed):
            run_probe_suite("http://127.0.0.1:9", None)

    def test_rate_limited(self):
        import time

        with RecordingOrigin() as origin:
            t = time.monotonic()
            run_probe_suite(origin.url, origin.url, confirm_origin_control=True, interval=0.05)
            assert time.monotonic() - t >= 7 * 0.05

    def test_origin_log_file(self, tmp_path):
        path = tmp_path / "origin.jsonl"
        with RecordingOrigin(log_path=path) as origin:
            fetch(origin.url, "/echo?x=1", [("Accept-Encoding", "gzip")])
        line = path.read_text().splitlines()
        assert len(line) == 1 and '"/echo?x=1"' in line[0]


class TestClassification:
    def test_cdn77(self, suites, reference):
        cls = classify_endpoint(suites["CDN77"], reference)
        assert cls.policy_class is PolicyClass.DELETION
        assert cls.policy_summary() == "delete-all"
        assert cls.edge_codings == {GZIP}
        assert cls.estimated_levels == {GZIP: 5} and cls.level_confidence[GZIP] == "exact"
        assert describe(cls).startswith("CDN77-like: delete-all; edge gzip5")

    def test_upyun_decompression_flags(self, suites, reference):
        cls = classify_endpoint(suites["UPYun"], reference)
        assert cls.decompresses_gzip_for_identity is True
        assert cls.supports_br_decompression is False

    def test_bunny_row(self, suites, reference):
        cls = classify_endpoint(suites["Bunny"], reference)
        assert describe(cls) == "Bunny-like: replace-all(gzip, deflate, br); edge gzip2 br2"

    @pytest.mark.parametrize("name", sorted(PROFILES))
    def test_round_trip(self, name, reference):
        cls = classify_endpoint(probe_profile(name), reference)
        assert cls.forward_map == expected_forward_map(PROFILES[name])
        p = PROFILES[name]
        assert cls.edge_codings == set(p.edge.codings)
        assert cls.estimated_levels == {c: p.edge.level(c) for c in p.edge.codings}

    def test_levels_recovered_exactly(self, reference):
        for coding, levels in ((GZIP, range(1, 10)), (BR, range(0, 12))):
            for level in levels:
                n = len(compress(reference, coding, level))
                got, band = estimate_level(n, reference, coding)
                # equal sizes resolve to the lowest level that produces them
                lowest = min(l for l in levels if len(compress(reference, coding, l)) == n)
                assert (got, band) == (lowest, "exact")

    def test_level_bands(self, reference):
        n = len(compress(reference, GZIP, 4))
        assert estimate_level(n + 50, reference, GZIP) == (4, "within_2pct")
        assert estimate_level(n * 3, reference, GZIP)[1] == "ambiguous"


def obs(coding, vary, ok=True):
    from cdnconvert.probe import ProbeTransportError

    c = None if coding is None else coding
    return ProbeObservation(
        "x", "/asset", ABSENT, ABSENT, c, 10, vary, IDENTITY,
        error=None if ok else ProbeTransportError("x"),
    )


class TestVary:
    def test_cases(self):
        assert vary_check([obs(GZIP, True), obs(IDENTITY, False)])
        assert not vary_check([obs(GZIP, False)])
        assert not vary_check([obs(IDENTITY, False)])
        assert not vary_check([])
        assert vary_check([obs(BR, True), obs(None, False, ok=False)])

    def test_loopback_profiles_mark_vary(self, suites):
        for name, o in suites.items():
            assert vary_check(o), name
