"""Loopback HTTP services: a recording origin and a profile-driven edge proxy.

Both bind to 127.0.0.1 on an ephemeral port and run in a daemon thread, so
tests and the ``probe --loopback`` command can exercise real sockets without
touching anything outside the host.
"""

from __future__ import annotations

import http.client
import json
import logging
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import urlsplit

from .codecs import BR, GZIP, BombSpec, PayloadSpec, TextCorpusPayload, make_bomb
from .http_model import HttpMessage
from .node import CacheState, OriginConfig, handle_request, origin_respond
from .policy import CdnProfile

log = logging.getLogger(__name__)

HOP_BY_HOP = {"connection", "keep-alive", "transfer-encoding", "proxy-connection", "upgrade"}


def reference_asset(seed: int = 7) -> TextCorpusPayload:
    """Script-like text served at /asset; small enough to probe quickly."""
    return TextCorpusPayload(seed=seed, length=65536, target_gzip_ratio=6.0)


class _Service:
    def __init__(self, handler_cls):
        self.httpd = ThreadingHTTPServer(("127.0.0.1", 0), handler_cls)
        self.httpd.daemon_threads = True
        self.httpd.service = self
        self._thread = None

    @property
    def url(self) -> str:
        host, port = self.httpd.server_address[:2]
        return f"http://{host}:{port}"

    def start(self):
        self._thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self):
        self.httpd.shutdown()
        self.httpd.server_close()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"

    def log_message(self, fmt, *args):
        log.debug("%s %s", self.server.service.__class__.__name__, fmt % args)

    def request_message(self) -> HttpMessage:
        return HttpMessage(f"GET {self.path} HTTP/1.1", tuple(self.headers.items()))

    def send_message(self, msg: HttpMessage):
        self.send_response_only(msg.status, msg.start_line.split(" ", 2)[-1])
        for k, v in msg.headers:
            if k.lower() not in HOP_BY_HOP:
                self.send_header(k, v)
        self.send_header("Connection", "close")
        self.end_headers()
        self.wfile.write(msg.body)
        self.close_connection = True

    def send_json(self, obj, status=200):
        body = json.dumps(obj, sort_keys=True).encode()
        headers = (("Content-Type", "application/json"), ("Content-Length", str(len(body))))
        self.send_message(HttpMessage(f"HTTP/1.1 {status} OK", headers, body))


class _OriginHandler(_Handler):
    def do_GET(self):
        svc: RecordingOrigin = self.server.service
        path = self.path.partition("?")[0]
        if path == "/log":
            self.send_json(svc.records())
            return
        headers = list(self.headers.items())
        if path == "/echo":
            svc.record(self.path, headers)
            self.send_json({"path": self.path, "headers": headers})
            return
        cfg = svc.routes.get(path)
        if cfg is None:
            svc.record(self.path, headers)
            self.send_json({"error": "not found"}, 404)
            return
        resp = origin_respond(cfg, self.request_message())
        svc.record(self.path, headers, resp.content_coding.token)
        self.send_message(resp)


class RecordingOrigin(_Service):
    """Origin with /echo, /asset, /bomb (gzip), /bomb-br and a /log of what it received.

    Every request except /log is appended to an in-memory log and, when
    ``log_path`` is given, to a JSON-lines file.
    """

    def __init__(
        self,
        asset: PayloadSpec | None = None,
        asset_supported=(),
        bomb_size: int = 1 << 20,
        log_path: str | Path | None = None,
    ):
        super().__init__(_OriginHandler)
        asset = asset if asset is not None else reference_asset()
        self.routes = {
            "/asset": OriginConfig.negotiate(asset, asset_supported),
            "/bomb": OriginConfig.always_encoded(make_bomb(BombSpec(bomb_size, coding=GZIP, level=9)), GZIP, 9),
            "/bomb-br": OriginConfig.always_encoded(make_bomb(BombSpec(bomb_size, coding=BR, level=11)), BR, 11),
        }
        self.asset = asset
        self.log_path = Path(log_path) if log_path else None
        self._log: list[dict] = []
        self._lock = threading.Lock()

    def record(self, target: str, headers: list[tuple[str, str]], coding: str | None = None):
        rec = {"timestamp": time.time(), "path": target, "headers": headers, "response_coding": coding}
        with self._lock:
            self._log.append(rec)
            if self.log_path:
                with self.log_path.open("a") as fh:
                    fh.write(json.dumps(rec) + "\n")

    def records(self) -> list[dict]:
        with self._lock:
            return list(self._log)


def fetch(url: str, target: str, headers, timeout: float = 10.0) -> HttpMessage:
    """GET ``target`` sending exactly ``headers`` (no implicit Accept-Encoding)."""
    parts = urlsplit(url)
    conn = http.client.HTTPConnection(parts.hostname, parts.port or 80, timeout=timeout)
    try:
        conn.putrequest("GET", target, skip_host=True, skip_accept_encoding=True)
        names = {k.lower() for k, _ in headers}
        if "host" not in names:
            conn.putheader("Host", parts.netloc)
        for k, v in headers:
            conn.putheader(k, v)
        conn.endheaders()
        resp = conn.getresponse()
        body = resp.read()
        kept = tuple((k, v) for k, v in resp.getheaders() if k.lower() not in HOP_BY_HOP)
        return HttpMessage(f"HTTP/1.1 {resp.status} {resp.reason}", kept, body)
    finally:
        conn.close()


class _NodeHandler(_Handler):
    def do_GET(self):
        svc: LoopbackNode = self.server.service
        req = self.request_message()
        req = req.without(*HOP_BY_HOP)
        with svc.lock:
            d = handle_request(
                svc.profile,
                svc.cache,
                req,
                lambda fwd: fetch(svc.upstream_url, fwd.target, fwd.headers),
                downstream_tls=svc.downstream_tls,
            )
        self.send_message(d.response_to_client)


class LoopbackNode(_Service):
    """HTTP proxy applying ``profile`` in front of ``upstream_url``.

    The client side is treated as the TLS-terminated leg, so codings that a
    profile only offers over HTTPS are still produced here.
    """

    def __init__(self, profile: CdnProfile, upstream_url: str, downstream_tls: bool = True):
        super().__init__(_NodeHandler)
        self.profile = profile
        self.upstream_url = upstream_url
        self.downstream_tls = downstream_tls
        self.cache = CacheState()
        self.lock = threading.Lock()
