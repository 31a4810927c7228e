"""Model and measure CDN compression-conversion amplification.

Edge nodes rewrite Accept-Encoding before fetching from upstream and then
compress, decompress or convert what comes back. Chaining such nodes in
front of a bomb-like asset makes one link carry far more bytes than another;
this package simulates those chains, computes the amplification, and probes
live or loopback endpoints to recover their behaviour.
"""

from .closed_form import closed_form_factor, closed_form_totals
from .codecs import (
    BR,
    DEFLATE,
    GZIP,
    IDENTITY,
    BombSpec,
    ContentCoding,
    FillPayload,
    PrecompressedPayload,
    TextCorpusPayload,
    compress,
    decompress,
    make_bomb,
    make_text_corpus,
)
from .http_model import (
    ABSENT,
    HTTP_ONLY,
    PACKETIZED,
    AcceptEncoding,
    HttpMessage,
    OverheadModel,
    parse_accept_encoding,
    serialize_accept_encoding,
    wire_size,
)
from .node import EdgeNode, OriginConfig, decide_transformation, handle_request
from .policy import (
    PROFILES,
    CdnProfile,
    PolicyClass,
    apply_forwarding_policy,
    builtin_profiles,
    classify_policy,
)
from .simulate import (
    AmplificationReport,
    Scenario,
    TrafficLedger,
    amplification,
    angular_like_asset,
    make_scenario,
    reference_bomb,
    report_for,
    run_scenario,
    scenario_matrix,
)

__version__ = "0.1.0"
