"""Content codings, compression backends and payload generation.

Everything here is a pure function of its arguments. gzip and deflate are
backed by zlib, brotli by the ``brotli`` extension module. The legacy
``compress`` (LZW) coding is recognised as a token only.
"""

from __future__ import annotations

import functools
import gzip
import random
import zlib
from dataclasses import dataclass, field
from typing import Union

import brotli

DEFAULT_SAFETY_CAP = 64 * 1024 * 1024

_ALIASES = {"x-gzip": "gzip", "x-compress": "compress"}
_KNOWN = ("identity", "gzip", "deflate", "compress", "br")
_LEVELS = {"gzip": range(1, 10), "deflate": range(1, 10), "br": range(0, 12)}


class CodecError(Exception):
    pass


class UnsupportedCoding(CodecError):
    pass


class InvalidLevel(CodecError):
    pass


class DecodeError(CodecError):
    pass


class SafetyCapExceeded(CodecError):
    pass


class RatioUnreachable(CodecError):
    pass


@dataclass(frozen=True, order=True)
class ContentCoding:
    """A content-coding token, normalised to lowercase."""

    token: str

    def __post_init__(self):
        tok = self.token.strip().lower()
        object.__setattr__(self, "token", _ALIASES.get(tok, tok))

    @classmethod
    def of(cls, value: "ContentCoding | str") -> "ContentCoding":
        return value if isinstance(value, ContentCoding) else cls(value)

    @property
    def kind(self) -> str:
        """One of identity/gzip/deflate/compress/br, or ``other``."""
        return self.token if self.token in _KNOWN else "other"

    @property
    def is_identity(self) -> bool:
        return self.token == "identity"

    @property
    def has_codec(self) -> bool:
        return self.token in _LEVELS

    def __str__(self) -> str:
        return self.token


IDENTITY = ContentCoding("identity")
GZIP = ContentCoding("gzip")
DEFLATE = ContentCoding("deflate")
COMPRESS = ContentCoding("compress")
BR = ContentCoding("br")

CANONICAL_CODINGS = (GZIP, COMPRESS, DEFLATE, BR, IDENTITY)


def valid_levels(coding: ContentCoding | str) -> range:
    coding = ContentCoding.of(coding)
    if coding.token not in _LEVELS:
        raise UnsupportedCoding(f"no codec for {coding.token!r}")
    return _LEVELS[coding.token]


def compress(data: bytes, coding: ContentCoding | str, level: int) -> bytes:
    coding = ContentCoding.of(coding)
    levels = valid_levels(coding)
    if level not in levels:
        raise InvalidLevel(
            f"level {level} outside {levels.start}..{levels.stop - 1} for {coding}"
        )
    if coding == GZIP:
        # mtime pinned so output is a function of (data, level) only
        return gzip.compress(data, compresslevel=level, mtime=0)
    if coding == DEFLATE:
        # HTTP "deflate" is the zlib-wrapped format
        return zlib.compress(data, level)
    return brotli.compress(data, quality=level)


def decompress(
    data: bytes, coding: ContentCoding | str, max_size: int = DEFAULT_SAFETY_CAP
) -> bytes:
    """Decode ``data``; refuse to produce more than ``max_size`` bytes."""
    coding = ContentCoding.of(coding)
    if coding.is_identity:
        if len(data) > max_size:
            raise SafetyCapExceeded(f"{len(data)} bytes exceeds cap {max_size}")
        return bytes(data)
    if not coding.has_codec:
        raise UnsupportedCoding(f"no codec for {coding.token!r}")
    if coding == BR:
        return _brotli_decode(data, max_size)
    wbits = 31 if coding == GZIP else 15
    d = zlib.decompressobj(wbits)
    try:
        out = d.decompress(data, max_size + 1)
    except zlib.error as exc:
        raise DecodeError(f"corrupt {coding} stream: {exc}") from None
    if len(out) > max_size:
        raise SafetyCapExceeded(f"{coding} stream expands beyond cap {max_size}")
    if not d.eof:
        raise DecodeError(f"truncated {coding} stream")
    if d.unused_data:
        raise DecodeError(f"{len(d.unused_data)} trailing bytes after {coding} stream")
    return out


def _brotli_decode(data: bytes, max_size: int) -> bytes:
    d = brotli.Decompressor()
    chunks = []
    total = 0
    try:
        chunk = d.process(data, output_buffer_limit=max_size + 1)
        while True:
            chunks.append(chunk)
            total += len(chunk)
            if total > max_size:
                raise SafetyCapExceeded(f"br stream expands beyond cap {max_size}")
            if d.is_finished() or d.can_accept_more_data():
                break
            chunk = d.process(b"", output_buffer_limit=max_size + 1 - total)
    except brotli.error as exc:
        raise DecodeError(f"corrupt br stream: {exc}") from None
    if not d.is_finished():
        raise DecodeError("truncated br stream")
    return b"".join(chunks)


# -- payloads ---------------------------------------------------------------


@dataclass(frozen=True)
class FillPayload:
    byte: int
    length: int

    def __post_init__(self):
        if self.length <= 0:
            raise ValueError("payload length must be positive")
        if not 0 <= self.byte <= 255:
            raise ValueError("fill byte out of range")


@dataclass(frozen=True)
class TextCorpusPayload:
    seed: int
    length: int
    target_gzip_ratio: float

    def __post_init__(self):
        if self.length <= 0:
            raise ValueError("payload length must be positive")
        if self.target_gzip_ratio < 1:
            raise ValueError("target_gzip_ratio must be >= 1")


@dataclass(frozen=True)
class PrecompressedPayload:
    coding: ContentCoding
    compressed: bytes = field(repr=False)
    declared_uncompressed_length: int

    def __post_init__(self):
        object.__setattr__(self, "coding", ContentCoding.of(self.coding))
        if self.declared_uncompressed_length <= 0:
            raise ValueError("payload length must be positive")

    @property
    def ratio(self) -> float:
        return self.declared_uncompressed_length / len(self.compressed)

    def validate(self, max_size: int = DEFAULT_SAFETY_CAP) -> None:
        n = len(decompress(self.compressed, self.coding, max_size))
        if n != self.declared_uncompressed_length:
            raise ValueError(
                f"payload decodes to {n} bytes, declared {self.declared_uncompressed_length}"
            )


PayloadSpec = Union[FillPayload, TextCorpusPayload, PrecompressedPayload]


def payload_length(payload: PayloadSpec) -> int:
    if isinstance(payload, PrecompressedPayload):
        return payload.declared_uncompressed_length
    return payload.length


def materialize(payload: PayloadSpec, max_size: int = DEFAULT_SAFETY_CAP) -> bytes:
    """The plaintext bytes a payload stands for."""
    if isinstance(payload, FillPayload):
        return bytes([payload.byte]) * payload.length
    if isinstance(payload, TextCorpusPayload):
        return make_text_corpus(payload.seed, payload.length, payload.target_gzip_ratio)
    return decompress(payload.compressed, payload.coding, max_size)


@dataclass
class BombSpec:
    uncompressed_size: int
    fill_byte: int = 0x30
    coding: ContentCoding = GZIP
    level: int = 9
    achieved_ratio: float | None = None


def make_bomb(spec: BombSpec, max_size: int = DEFAULT_SAFETY_CAP) -> PrecompressedPayload:
    """Compress a run of ``fill_byte`` and record the ratio on ``spec``."""
    if spec.uncompressed_size > max_size:
        raise SafetyCapExceeded(
            f"bomb of {spec.uncompressed_size} bytes exceeds cap {max_size}"
        )
    coding = ContentCoding.of(spec.coding)
    plain = bytes([spec.fill_byte]) * spec.uncompressed_size
    blob = compress(plain, coding, spec.level)
    spec.achieved_ratio = spec.uncompressed_size / len(blob)
    return PrecompressedPayload(coding, blob, spec.uncompressed_size)


# -- text corpus --------------------------------------------------------------

_WORDS = (
    "function return var const let this prototype object array string value "
    "length index element scope module directive controller service factory "
    "provider injector compile link template binding watch digest apply event "
    "listener callback promise resolve reject filter model view expression "
    "parse lexer token attribute children parent node document window angular "
    "forEach isDefined isString isArray extend copy equals noop identity bind "
    "http request response header config cache timeout interval location route"
).split()

_SENTENCES = (
    b"  if (isDefined(value)) { return value; }\n",
    b"  var self = this, scope = self.$scope;\n",
    b"  forEach(children, function(child) { child.$digest(); });\n",
    b"  return function(scope, element, attrs) {\n",
    b"  }\n",
)

_RANDOM_ALPHABET = (
    b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/(){}[];:"
)


def _corpus(seed: int, length: int, knob: float) -> bytes:
    # knob 0 -> repeated source lines, 1 -> random words, 2 -> random symbols;
    # the gzip ratio falls monotonically (in expectation) as knob grows.
    rng = random.Random(seed)
    out = bytearray()
    words = [w.encode() for w in _WORDS]
    while len(out) < length:
        u = rng.random()
        if knob <= 1.0:
            if u < 1.0 - knob:
                out += rng.choice(_SENTENCES)
            else:
                out += rng.choice(words) + b" "
        else:
            if u < 2.0 - knob:
                out += rng.choice(words) + b" "
            else:
                out += bytes(rng.choice(_RANDOM_ALPHABET) for _ in range(8))
    return bytes(out[:length])


def _gzip5_ratio(data: bytes) -> float:
    return len(data) / len(compress(data, GZIP, 5))


@functools.lru_cache(maxsize=16)
def make_text_corpus(
    seed: int, length: int, target_gzip_ratio: float, tolerance: float = 0.25
) -> bytes:
    """Synthetic script-like text whose gzip level-5 ratio is near the target.

    The mix between repeated lines, dictionary words and random symbols is
    found by bisection. Raises RatioUnreachable when 32 steps do not land
    within ``tolerance`` (relative) of the target.
    """
    if length <= 0:
        raise ValueError("length must be positive")
    if not 1.5 <= target_gzip_ratio <= 20:
        raise ValueError("target_gzip_ratio must lie in [1.5, 20]")
    lo, hi = 0.0, 2.0
    best = None
    for _ in range(32):
        mid = (lo + hi) / 2
        data = _corpus(seed, length, mid)
        r = _gzip5_ratio(data)
        err = abs(r - target_gzip_ratio) / target_gzip_ratio
        if best is None or err < best[0]:
            best = (err, data)
        if err <= tolerance / 5:
            return data
        if r > target_gzip_ratio:
            lo = mid
        else:
            hi = mid
    if best[0] <= tolerance:
        return best[1]
    raise RatioUnreachable(
        f"closest gzip ratio misses {target_gzip_ratio} by {best[0]:.0%} at length {length}"
    )
