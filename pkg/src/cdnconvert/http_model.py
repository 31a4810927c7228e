"""HTTP messages, Accept-Encoding handling and byte accounting."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace

from .codecs import IDENTITY, ContentCoding

CRLF_LEN = 2

# Header templates shared by every simulated hop. Real header sets vary by
# vendor, so these stand in for a typical browser request and an nginx
# response; sizes are what matter (request ~220 B, response ~180 B framed).
REQUEST_TEMPLATE: tuple[tuple[str, str], ...] = (
    ("Host", "victim.example"),
    ("User-Agent", "Mozilla/5.0 (X11; Linux x86_64; rv:109.0) Gecko/20100101 Firefox/115.0"),
    ("Accept", "text/html,application/xhtml+xml,*/*;q=0.8"),
    ("Accept-Language", "en-US,en;q=0.5"),
    ("Connection", "keep-alive"),
)
RESPONSE_TEMPLATE: tuple[tuple[str, str], ...] = (
    ("Server", "nginx/1.21.3"),
    ("Date", "Tue, 01 Aug 2023 00:00:00 GMT"),
    ("Content-Type", "application/javascript"),
    ("Last-Modified", "Mon, 31 Jul 2023 00:00:00 GMT"),
    ("ETag", '"64c6f780-51508"'),
    ("Connection", "keep-alive"),
)
CDN_IDENTITY_HEADER = "X-Sim-CDN"


@dataclass(frozen=True)
class AcceptEncoding:
    """Parsed Accept-Encoding header; ``absent`` means no header at all."""

    entries: tuple[tuple[ContentCoding, float], ...] = ()
    absent: bool = False
    diagnostics: tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self):
        if self.absent and self.entries:
            raise ValueError("an absent header carries no entries")
        for _, q in self.entries:
            if not 0.0 <= q <= 1.0:
                raise ValueError(f"q={q} outside [0, 1]")

    @classmethod
    def of(cls, *codings: str | ContentCoding) -> "AcceptEncoding":
        return cls(tuple((ContentCoding.of(c), 1.0) for c in codings))

    @property
    def codings(self) -> tuple[ContentCoding, ...]:
        return tuple(c for c, _ in self.entries)

    def ranked(self) -> list[tuple[ContentCoding, float]]:
        """Entries with q > 0, highest q first, ties in source order."""
        return sorted((e for e in self.entries if e[1] > 0), key=lambda e: -e[1])

    @property
    def primary(self) -> ContentCoding | None:
        ranked = self.ranked()
        return ranked[0][0] if ranked else None

    def accepts(self, coding: ContentCoding | str) -> bool:
        coding = ContentCoding.of(coding)
        return any(c == coding and q > 0 for c, q in self.entries)

    def __str__(self) -> str:
        s = serialize_accept_encoding(self)
        return "<absent>" if s is None else s


ABSENT = AcceptEncoding(absent=True)

_Q_RE = re.compile(r"^\s*q\s*=\s*(\S*)\s*$", re.IGNORECASE)
_TOKEN_RE = re.compile(r"^[!#$%&'*+.^_`|~0-9A-Za-z-]+$")


def parse_accept_encoding(raw: str | None) -> AcceptEncoding:
    if raw is None:
        return ABSENT
    entries = []
    diagnostics = []
    for part in raw.split(","):
        if not part.strip():
            continue
        token, *params = part.split(";")
        token = token.strip()
        if not _TOKEN_RE.match(token):
            diagnostics.append(f"dropped malformed entry {part.strip()!r}")
            continue
        q = 1.0
        for p in params:
            m = _Q_RE.match(p)
            if not m:
                continue
            try:
                q = float(m.group(1))
            except ValueError:
                diagnostics.append(f"unparsable q in {part.strip()!r}; clamped to 0")
                q = 0.0
            if math.isnan(q):
                q = 0.0
            q = min(1.0, max(0.0, q))
        entries.append((ContentCoding(token), q))
    return AcceptEncoding(tuple(entries), diagnostics=tuple(diagnostics))


def _fmt_q(q: float) -> str:
    return f"{q:.3f}".rstrip("0").rstrip(".")


def serialize_accept_encoding(ae: AcceptEncoding) -> str | None:
    if ae.absent:
        return None
    return ", ".join(
        c.token if q == 1.0 else f"{c.token};q={_fmt_q(q)}" for c, q in ae.entries
    )


@dataclass(frozen=True)
class HttpMessage:
    start_line: str
    headers: tuple[tuple[str, str], ...] = ()
    body: bytes = b""

    @property
    def content_coding(self) -> ContentCoding:
        value = self.header("Content-Encoding")
        return IDENTITY if value is None else ContentCoding(value)

    def header(self, name: str) -> str | None:
        lname = name.lower()
        for k, v in self.headers:
            if k.lower() == lname:
                return v
        return None

    def header_all(self, name: str) -> list[str]:
        lname = name.lower()
        return [v for k, v in self.headers if k.lower() == lname]

    def without(self, *names: str) -> "HttpMessage":
        drop = {n.lower() for n in names}
        return replace(self, headers=tuple(h for h in self.headers if h[0].lower() not in drop))

    def with_header(self, name: str, value: str) -> "HttpMessage":
        return replace(self, headers=self.headers + ((name, value),))

    @property
    def accept_encoding(self) -> AcceptEncoding:
        return parse_accept_encoding(self.header("Accept-Encoding"))

    def with_accept_encoding(self, ae: AcceptEncoding) -> "HttpMessage":
        msg = self.without("Accept-Encoding")
        value = serialize_accept_encoding(ae)
        return msg if value is None else msg.with_header("Accept-Encoding", value)

    @property
    def target(self) -> str:
        """Request target of a request line (``/path?query``)."""
        return self.start_line.split(" ")[1]

    @property
    def status(self) -> int:
        return int(self.start_line.split(" ")[1])

    def to_bytes(self) -> bytes:
        head = self.start_line + "\r\n"
        head += "".join(f"{k}: {v}\r\n" for k, v in self.headers)
        return (head + "\r\n").encode("latin-1") + self.body


def header_line_size(name: str, value: str) -> int:
    return len(name.encode("latin-1")) + 2 + len(value.encode("latin-1")) + CRLF_LEN


def serialized_size(msg: HttpMessage) -> int:
    size = len(msg.start_line.encode("latin-1")) + CRLF_LEN
    size += sum(header_line_size(k, v) for k, v in msg.headers)
    return size + CRLF_LEN + len(msg.body)


@dataclass(frozen=True)
class OverheadModel:
    """``http_only`` counts HTTP bytes; ``packetized`` adds per-segment framing."""

    mode: str = "packetized"
    mss: int = 1460
    per_packet_overhead: int = 66

    def __post_init__(self):
        if self.mode not in ("http_only", "packetized"):
            raise ValueError(f"unknown overhead mode {self.mode!r}")
        if self.mode == "packetized" and self.mss <= 0:
            raise ValueError("mss must be positive")

    @classmethod
    def parse(cls, text: str) -> "OverheadModel":
        """``http`` or ``packet:<mss>:<overhead>``."""
        if text in ("http", "http_only"):
            return HTTP_ONLY
        parts = text.split(":")
        if parts[0] not in ("packet", "packetized"):
            raise ValueError(f"bad overhead spec {text!r}")
        if len(parts) == 1:
            return PACKETIZED
        if len(parts) != 3:
            raise ValueError(f"bad overhead spec {text!r}")
        return cls("packetized", int(parts[1]), int(parts[2]))

    def __str__(self) -> str:
        if self.mode == "http_only":
            return "http"
        return f"packet:{self.mss}:{self.per_packet_overhead}"

    def apply(self, size: int) -> int:
        if self.mode == "http_only":
            return size
        return size + math.ceil(size / self.mss) * self.per_packet_overhead


HTTP_ONLY = OverheadModel("http_only")
PACKETIZED = OverheadModel()


def wire_size(msg: HttpMessage, model: OverheadModel = PACKETIZED) -> int:
    return model.apply(serialized_size(msg))


def make_request(target: str = "/asset", ae: AcceptEncoding = ABSENT) -> HttpMessage:
    msg = HttpMessage(f"GET {target} HTTP/1.1", REQUEST_TEMPLATE)
    return msg.with_accept_encoding(ae)
