"""Streaming speech-to-speech conversion engine.

Core pieces: an architecture DSL with a delay analyzer, a streaming
conformer encoder, an autoregressive spectrogram decoder, streaming
Griffin-Lim and GAN-style vocoders, post-training quantization with a
compact weight file format, a latency bench harness, and an HTTP service
with a thin CLI client.
"""

__version__ = "0.1.0"

from .archdsl import (
    ArchSpec,
    DelayReport,
    NAMED_CONFIGS,
    analyze_delay,
    get_arch,
    parse_arch,
    render_arch,
    validate,
)
from .errors import (
    BuildError,
    ConfigError,
    FormatError,
    NumericError,
    ParseError,
    ShapeError,
    StateError,
)

__all__ = [
    "__version__",
    "ArchSpec",
    "DelayReport",
    "NAMED_CONFIGS",
    "analyze_delay",
    "get_arch",
    "parse_arch",
    "render_arch",
    "validate",
    "BuildError",
    "ConfigError",
    "FormatError",
    "NumericError",
    "ParseError",
    "ShapeError",
    "StateError",
]
