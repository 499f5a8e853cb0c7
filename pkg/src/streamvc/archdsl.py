"""Encoder architecture DSL: parser, printer, validator and delay analyzer.

Grammar (whitespace- or comma-separated items):

    spec  := item (sep item)*
    item  := [count "x"] unit
    unit  := "CB" ["_R" int] ["_L" int] | "SL" ["_R" int]

A bare CB has left context 65 and no look-ahead; a bare SL is the causal
stacker over (previous, current).  Counts expand to repeated layers.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

from .errors import ParseError

DEFAULT_CB_LEFT = 65

# Left context sentinel for an unbounded (full) context.
UNBOUNDED = None

#: Registry of the seven named encoder configurations.
NAMED_CONFIGS = {
    "causal": "2xCB SL 2xCB SL 13xCB",
    "lsa1": "2xCB SL 2xCB SL 3xCB CB_R5 9xCB",
    "lsa2": "2xCB SL 2xCB SL 2xCB CB_R4 CB CB_R4 CB CB_R4 2xCB CB_R4 CB CB_R4 CB",
    "ls1": "2xCB SL_R3 3xCB SL_R4 12xCB",
    "ls2": "2xCB SL_R3 3xCB SL_R5 3xCB SL_R6 9xCB",
    "lsa_ls1": "2xCB SL_R7 3xCB SL_R9 10xCB CB_R4 CB",
    "lsa_ls2": "2xCB SL_R7 3xCB SL_R6 3xCB SL_R4 5xCB CB_R4 CB CB_R4 CB",
}


@dataclass(frozen=True)
class LayerSpec:
    """One encoder layer: a conformer block (CB) or a stacker layer (SL).

    `left` is the attention left context (CB only; None = unbounded).
    `right` is the look-ahead count; an SL with right == 0 is the default
    causal stacker over (previous, current).
    """

    kind: str  # "CB" | "SL"
    left: Optional[int] = None
    right: int = 0


def cb(left: Optional[int] = DEFAULT_CB_LEFT, right: int = 0) -> LayerSpec:
    return LayerSpec("CB", left=left, right=right)


def sl(right: int = 0) -> LayerSpec:
    return LayerSpec("SL", left=None, right=right)


@dataclass
class ArchSpec:
    layers: Tuple[LayerSpec, ...]
    name: Optional[str] = field(default=None, compare=False)

    @property
    def cb_count(self) -> int:
        return sum(1 for l in self.layers if l.kind == "CB")

    @property
    def sl_count(self) -> int:
        return sum(1 for l in self.layers if l.kind == "SL")

    @property
    def subsample_factor(self) -> int:
        return 2 ** self.sl_count


_ITEM_RE = re.compile(
    r"(?:(?P<count>\d+)x)?"
    r"(?:(?P<cb>CB)(?:_R(?P<cbr>\d+))?(?:_L(?P<cbl>\d+))?"
    r"|(?P<sl>SL)(?:_R(?P<slr>\d+))?)"
)


def parse_arch(text: str, name: Optional[str] = None) -> ArchSpec:
    """Parse an architecture string; raises ParseError with the failing offset."""
    layers: List[LayerSpec] = []
    for m in re.finditer(r"[^\s,]+", text):
        token, offset = m.group(0), m.start()
        im = _ITEM_RE.fullmatch(token)
        if im is None:
            raise ParseError(f"unknown token {token!r}", offset)
        count = int(im.group("count")) if im.group("count") else 1
        if count == 0:
            raise ParseError(f"zero repeat count in {token!r}", offset)
        if im.group("cb"):
            right = int(im.group("cbr") or 0)
            left = int(im.group("cbl")) if im.group("cbl") else DEFAULT_CB_LEFT
            layer = cb(left=left, right=right)
        else:
            layer = sl(right=int(im.group("slr") or 0))
        layers.extend([layer] * count)
    return ArchSpec(layers=tuple(layers), name=name)


def _unit_text(layer: LayerSpec) -> str:
    if layer.kind == "SL":
        return f"SL_R{layer.right}" if layer.right else "SL"
    if layer.left is UNBOUNDED:
        raise ValueError("cannot render a CB with unbounded left context")
    text = "CB"
    if layer.right:
        text += f"_R{layer.right}"
    if layer.left != DEFAULT_CB_LEFT:
        text += f"_L{layer.left}"
    return text


def render_arch(spec: ArchSpec) -> str:
    """Canonical text form; parse_arch(render_arch(s)) == s."""
    parts: List[str] = []
    i = 0
    layers = spec.layers
    while i < len(layers):
        j = i
        while j < len(layers) and layers[j] == layers[i]:
            j += 1
        unit = _unit_text(layers[i])
        parts.append(f"{j - i}x{unit}" if j - i > 1 else unit)
        i = j
    return " ".join(parts)


@dataclass
class DelayReport:
    """Look-ahead accounting for one architecture at a given input hop."""

    lookahead_frames: int
    delay_ms: float
    subsample_factor: int
    cb_count: int
    per_layer: List[Tuple[int, int]]  # (layer index, contribution in input frames)


def analyze_delay(spec: ArchSpec, hop_ms: float = 10.0) -> DelayReport:
    """Walk the layers accumulating look-ahead in input-rate frames.

    With cumulative subsample s (1 at the input, doubling after each SL):
    a CB with look-ahead r contributes r*s input frames, an SL with
    look-ahead k contributes k*s (and then doubles s).  Causal layers
    contribute nothing.
    """
    if hop_ms <= 0:
        raise ValueError(f"hop_ms must be positive, got {hop_ms}")
    s = 1
    per_layer: List[Tuple[int, int]] = []
    total = 0
    for i, layer in enumerate(spec.layers):
        contrib = layer.right * s
        per_layer.append((i, contrib))
        total += contrib
        if layer.kind == "SL":
            s *= 2
    return DelayReport(
        lookahead_frames=total,
        delay_ms=total * hop_ms,
        subsample_factor=s,
        cb_count=spec.cb_count,
        per_layer=per_layer,
    )


@dataclass(frozen=True)
class Finding:
    level: str  # "error" | "warning"
    code: str
    message: str


def validate(spec: ArchSpec) -> List[Finding]:
    """Structural findings; never raises."""
    findings: List[Finding] = []
    if spec.cb_count == 0:
        findings.append(Finding("error", "no_cb", "architecture has no conformer blocks"))
    elif spec.cb_count != 17:
        findings.append(
            Finding(
                "warning",
                "cb_count",
                f"architecture has {spec.cb_count} conformer blocks (reference stack is 17)",
            )
        )
    for i, layer in enumerate(spec.layers):
        if layer.kind == "CB" and layer.left is UNBOUNDED:
            findings.append(
                Finding(
                    "error",
                    "unbounded_context",
                    f"layer {i}: unbounded left context is not streamable",
                )
            )
    if spec.subsample_factor > 8:
        findings.append(
            Finding(
                "warning",
                "subsample",
                f"subsample factor {spec.subsample_factor} exceeds 8",
            )
        )
    return findings


def get_arch(name_or_dsl: str) -> ArchSpec:
    """Resolve a named config (case-insensitive) or parse the text as DSL."""
    key = name_or_dsl.strip().lower()
    if key in NAMED_CONFIGS:
        return parse_arch(NAMED_CONFIGS[key], name=key)
    return parse_arch(name_or_dsl)
