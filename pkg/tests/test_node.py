from dataclasses import replace

import pytest
from hypothesis import given, strategies as st

from cdnconvert.codecs import BR, DEFLATE, GZIP, IDENTITY, ContentCoding, FillPayload, TextCorpusPayload, compress, decompress, materialize
from cdnconvert.http_model import ABSENT, AcceptEncoding, HttpMessage, make_request, parse_accept_encoding
from cdnconvert.node import (
    PASS_THROUGH,
    CacheState,
    EdgeNode,
    OriginConfig,
    TransformKind,
    UpstreamError,
    compressed,
    converted,
    decide_transformation,
    decompressed,
    handle_request,
    origin_respond,
    response_headers,
)
from cdnconvert.policy import PROFILES, builtin_profiles

ASSET = TextCorpusPayload(5, 20_000, 5.0)
PLAIN = materialize(ASSET)


def upstream_msg(coding, body=None, extra=()):
    body = PLAIN if body is None else body
    if not ContentCoding.of(coding).is_identity and body is PLAIN:
        body = compress(PLAIN, coding, 9)
    return HttpMessage("HTTP/1.1 200 OK", response_headers(len(body), ContentCoding.of(coding)) + tuple(extra), body)


def origin_fn(cfg, seen=None):
    def call(req):
        if seen is not None:
            seen.append(req)
        return origin_respond(cfg, req)
    return call


class TestHandleRequest:
    def test_cloudflare_converts(self):
        seen = []
        cfg = OriginConfig.negotiate(ASSET, {(GZIP, 6)})
        d = handle_request(PROFILES["Cloudflare"], CacheState(), make_request("/a", AcceptEncoding.of("br")), origin_fn(cfg, seen))
        assert seen[0].header("Accept-Encoding") == "gzip"
        assert d.upstream_response.content_coding == GZIP
        assert d.transformation == converted(GZIP, BR, 4)
        assert decompress(d.response_to_client.body, BR) == PLAIN

    def test_cdn77_compresses(self):
        seen = []
        cfg = OriginConfig.negotiate(ASSET, {(GZIP, 6), (BR, 6)})
        d = handle_request(PROFILES["CDN77"], CacheState(), make_request("/a", AcceptEncoding.of("gzip")), origin_fn(cfg, seen))
        assert seen[0].header("Accept-Encoding") is None
        assert d.upstream_response.content_coding.is_identity
        assert d.transformation == compressed(GZIP, 5)
        assert d.response_to_client.body == compress(PLAIN, GZIP, 5)
        assert d.response_to_client.header("Vary") == "Accept-Encoding"

    def test_cache_hit(self):
        seen = []
        cache = CacheState()
        cfg = OriginConfig.negotiate(ASSET)
        req = make_request("/a", AcceptEncoding.of("gzip"))
        first = handle_request(PROFILES["Azure"], cache, req, origin_fn(cfg, seen))
        second = handle_request(PROFILES["Azure"], cache, req, origin_fn(cfg, seen))
        assert second.cache_hit and second.forwarded_request is None
        assert len(seen) == 1
        assert second.response_to_client == first.response_to_client

    def test_query_bypass(self):
        seen = []
        cache = CacheState()
        cfg = OriginConfig.negotiate(ASSET)
        for i in range(3):
            handle_request(PROFILES["Azure"], cache, make_request(f"/a?cb={i}", AcceptEncoding.of("gzip")), origin_fn(cfg, seen))
        assert len(seen) == 3

    def test_query_ignored_without_bypass_support(self):
        seen = []
        p = replace(PROFILES["Azure"], honors_query_string_bypass=False)
        cache = CacheState()
        cfg = OriginConfig.negotiate(ASSET)
        for i in range(3):
            handle_request(p, cache, make_request(f"/a?cb={i}", AcceptEncoding.of("gzip")), origin_fn(cfg, seen))
        assert len(seen) == 1

    def test_variants_keyed_by_coding(self):
        seen = []
        cache = CacheState()
        cfg = OriginConfig.negotiate(ASSET)
        for ae in ("gzip", "br", "gzip"):
            handle_request(PROFILES["Tencent"], cache, make_request("/a", AcceptEncoding.of(ae)), origin_fn(cfg, seen))
        assert len(seen) == 2

    def test_customer_deletion(self):
        seen = []
        cfg = OriginConfig.negotiate(ASSET)
        req = make_request("/a", AcceptEncoding.of("br"))
        handle_request(PROFILES["Cloudflare"], CacheState(), req, origin_fn(cfg, seen), customer_deletes_ae=True)
        assert seen[-1].header("Accept-Encoding") is None
        # UPYun does not offer the option; its own policy still deletes
        handle_request(PROFILES["Bunny"], CacheState(), req, origin_fn(cfg, seen), customer_deletes_ae=True)
        assert seen[-1].header("Accept-Encoding") == "gzip, deflate, br"

    def test_upstream_error(self):
        def boom(req):
            raise ConnectionError("refused")
        with pytest.raises(UpstreamError) as ei:
            handle_request(PROFILES["Azure"], CacheState(), make_request(), boom)
        assert ei.value.node == "Azure"

    def test_non_200_passes(self):
        resp = HttpMessage("HTTP/1.1 404 Not Found", (("Content-Length", "0"),))
        d = handle_request(PROFILES["Azure"], CacheState(), make_request("/x", AcceptEncoding.of("gzip")), lambda r: resp)
        assert d.response_to_client is resp

    def test_edge_node_records(self):
        cfg = OriginConfig.negotiate(ASSET)
        node = EdgeNode(PROFILES["G-core"], origin_fn(cfg))
        resp = node(make_request("/a", AcceptEncoding.of("gzip")))
        assert resp.content_coding == GZIP
        assert node.decisions[0].transformation == compressed(GZIP, 2)


class TestDecide:
    def test_upyun_decompresses_gzip(self):
        t = decide_transformation(PROFILES["UPYun"], AcceptEncoding.of("identity"), upstream_msg(GZIP))
        assert t == decompressed(GZIP)

    def test_no_brotli_decompression(self):
        for p in builtin_profiles():
            t = decide_transformation(p, AcceptEncoding.of("identity"), upstream_msg(BR))
            assert t == PASS_THROUGH

    def test_tencent_compresses_cdn_marked_response_when_allowed(self):
        p = replace(PROFILES["Tencent"], compresses_upstream_cdn_responses=True)
        up = upstream_msg(IDENTITY, extra=(("X-Sim-CDN", "CDNetworks"),))
        assert decide_transformation(p, AcceptEncoding.of("br"), up) == compressed(BR, 5)

    def test_azure_leaves_cloudflare_response(self):
        up = upstream_msg(IDENTITY, extra=(("X-Sim-CDN", "Cloudflare"),))
        assert decide_transformation(PROFILES["Azure"], AcceptEncoding.of("br"), up) == PASS_THROUGH

    def test_best_coding_prefers_br_on_tie(self):
        t = decide_transformation(PROFILES["Azure"], AcceptEncoding.of("gzip", "br"), upstream_msg(IDENTITY))
        assert t == compressed(BR, 5)
        t = decide_transformation(PROFILES["Azure"], parse_accept_encoding("gzip, br;q=0.5"), upstream_msg(IDENTITY))
        assert t == compressed(GZIP, 5)

    def test_no_compression_for_unsupported_coding(self):
        t = decide_transformation(PROFILES["CDN77"], AcceptEncoding.of("br"), upstream_msg(IDENTITY))
        assert t == PASS_THROUGH

    def test_cloudflare_cannot_send_br_on_plain_http(self):
        ae = AcceptEncoding.of("br")
        assert decide_transformation(PROFILES["Cloudflare"], ae, upstream_msg(GZIP), downstream_tls=False) == decompressed(GZIP)
        assert decide_transformation(PROFILES["Cloudflare"], ae, upstream_msg(GZIP), downstream_tls=True) == converted(GZIP, BR, 4)

    def test_cdnetworks_exact_match(self):
        # a multi-coding header is not one of the keys CDNetworks recognises
        t = decide_transformation(PROFILES["CDNetworks"], AcceptEncoding.of("gzip", "deflate", "br"), upstream_msg(GZIP))
        assert t == decompressed(GZIP)
        t = decide_transformation(PROFILES["CDNetworks"], AcceptEncoding.of("gzip"), upstream_msg(GZIP))
        assert t == PASS_THROUGH

    def test_totality_grid(self):
        inputs = [AcceptEncoding.of(c) for c in ("gzip", "compress", "deflate", "br", "identity")]
        inputs += [ABSENT, AcceptEncoding.of("zstd")]
        for p in builtin_profiles():
            for ae in inputs:
                for c in (IDENTITY, GZIP, BR):
                    t = decide_transformation(p, ae, upstream_msg(c))
                    assert t.kind in TransformKind


class TestOrigin:
    def test_no_compression(self):
        r = origin_respond(OriginConfig.negotiate(ASSET), make_request("/", AcceptEncoding.of("gzip")))
        assert r.content_coding.is_identity and r.body == PLAIN

    def test_always_gzip(self):
        r = origin_respond(OriginConfig.always_encoded(ASSET, GZIP, 9), make_request("/", ABSENT))
        assert r.content_coding == GZIP and decompress(r.body, GZIP) == PLAIN

    def test_q_ordering(self):
        cfg = OriginConfig.negotiate(ASSET, {(GZIP, 6), (BR, 9)})
        r = origin_respond(cfg, make_request("/", parse_accept_encoding("br;q=0.9, gzip;q=0.8")))
        assert r.content_coding == BR

    def test_extra_header(self):
        cfg = OriginConfig.negotiate(FillPayload(0x41, 10), extra_response_header_bytes=5)
        r = origin_respond(cfg, make_request())
        assert r.header("X-Origin-Extra") == "xxxxx"
        assert r.header("Content-Length") == "10"


profiles = st.sampled_from(builtin_profiles())
aes = st.sampled_from(
    ["gzip", "br", "deflate", "identity", "compress", None, "gzip, br", "br;q=0.5, gzip", "gzip;q=0.5, br", "zstd"]
)
origins = st.sampled_from(
    [OriginConfig.negotiate(ASSET), OriginConfig.negotiate(ASSET, {(GZIP, 6), (BR, 6)}),
     OriginConfig.always_encoded(ASSET, GZIP, 9), OriginConfig.always_encoded(ASSET, BR, 11)]
)


@given(profiles, aes, origins, st.booleans())
def test_body_integrity(profile, ae, origin, tls):
    req = make_request("/a", parse_accept_encoding(ae))
    d = handle_request(profile, CacheState(), req, origin_fn(origin), downstream_tls=tls)
    resp = d.response_to_client
    assert decompress(resp.body, resp.content_coding) == PLAIN
    assert resp.header("Content-Length") == str(len(resp.body))
    if d.transformation.kind is TransformKind.COMPRESSED:
        assert resp.body == compress(PLAIN, d.transformation.coding, d.transformation.level)


@given(profiles, aes, origins)
def test_cache_determinism(profile, ae, origin):
    seen = []
    cache = CacheState()
    req = make_request("/a", parse_accept_encoding(ae))
    a = handle_request(profile, cache, req, origin_fn(origin, seen))
    b = handle_request(profile, cache, req, origin_fn(origin, seen))
    assert len(seen) == 1
    assert a.response_to_client == b.response_to_client
