"""Request/response models for the HTTP service."""
from __future__ import annotations

from typing import Dict, List, Optional

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str = "ok"
    version: str


class ConfigInfo(BaseModel):
    name: str
    dsl: str
    cb_count: int
    sl_count: int
    subsample_factor: int
    lookahead_frames: int
    delay_ms: float


class ConfigsResponse(BaseModel):
    configs: List[ConfigInfo]


class AnalyzeRequest(BaseModel):
    arch: str = Field(description="named config or architecture DSL text")
    hop_ms: float = 10.0


class LayerDelay(BaseModel):
    layer: str
    lookahead_frames: int
    subsample_before: int


class FindingModel(BaseModel):
    level: str
    code: str
    message: str


class AnalyzeResponse(BaseModel):
    name: Optional[str]
    dsl: str
    cb_count: int
    sl_count: int
    subsample_factor: int
    lookahead_frames: int
    delay_ms: float
    per_layer: List[LayerDelay]
    findings: List[FindingModel]


class BenchRequest(BaseModel):
    part: str = "encoder"
    arch: str = "lsa_ls2"
    iters: int = 20
    warmup: int = 5
    chunk_ms: Optional[float] = None
    seed: int = 42


class BenchResponse(BaseModel):
    name: str
    component: str
    chunk_ms: float
    mean_ms: float
    median_ms: float
    p95_ms: float
    rtf: float
    model_size_bytes: int
    iterations: int
    warmup: int


class ReportRequest(BaseModel):
    reports: List[BenchResponse]
    delay_archs: List[str] = Field(default_factory=list,
                                   description="configs to join delay columns from")
    fmt: str = "csv"


class ReportResponse(BaseModel):
    fmt: str
    text: str


class SelftestRequest(BaseModel):
    checks: Optional[List[str]] = None


class SelftestResult(BaseModel):
    name: str
    passed: bool
    detail: str


class SelftestResponse(BaseModel):
    passed: bool
    results: List[SelftestResult]


class ErrorResponse(BaseModel):
    detail: str
