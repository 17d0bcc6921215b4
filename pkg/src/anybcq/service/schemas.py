"""Pydantic request/response models for the HTTP service."""

from __future__ import annotations

from pydantic import BaseModel, Field


class MatrixSpec(BaseModel):
    name: str = Field(pattern=r"^[A-Za-z0-9_\-]{1,64}$")
    rows: int = Field(ge=1, le=65536)
    cols: int = Field(ge=1, le=65536)
    seed: int = 0


class MatrixInfo(BaseModel):
    name: str
    rows: int
    cols: int


class QuantizeRequest(BaseModel):
    name: str = Field(pattern=r"^[A-Za-z0-9_\-]{1,64}$")
    matrix: str | None = None
    random: MatrixSpec | None = None
    bits_lo: int = Field(ge=1, le=16)
    bits_hi: int = Field(ge=1, le=16)
    group_size: int = Field(default=128, ge=1)
    cycles: int = Field(default=20, ge=0)
    mode: str = Field(default="asymmetric", pattern=r"^(sym|asym|symmetric|asymmetric)$")
    scale_width: int = Field(default=4)


class ModelInfo(BaseModel):
    name: str
    rows: int
    cols: int
    bits_lo: int
    bits_hi: int
    group_size: int
    mode: str


class QuantizeResponse(BaseModel):
    model: ModelInfo
    relative_errors: dict[int, float]


class GemvRequest(BaseModel):
    precision: int = Field(ge=1, le=16)
    x: list[float]
    path: str = Field(default="lut", pattern=r"^(lut|naive)$")


class GemvStatsOut(BaseModel):
    plane_bytes_fetched: int
    scale_bytes_fetched: int
    lut_build_count: int
    elapsed_us: float


class GemvResponse(BaseModel):
    precision: int
    path: str
    y: list[float]
    stats: GemvStatsOut


class RefineRequest(BaseModel):
    weights: str
    calib: str
    precision: int = Field(ge=1, le=16)
    solver: str = Field(default="exact", pattern=r"^(exact|gd)$")
    epochs: int = Field(default=10, ge=1)
    lr: float = Field(default=1e-4, gt=0)


class RefineResponse(BaseModel):
    precision: int
    solver: str
    loss_before: float
    loss_after: float
    ridge_fallback: bool


class FootprintRowOut(BaseModel):
    precision: int
    scale_bytes: int
    binary_bytes: int
    total_bytes: int


class FootprintResponse(BaseModel):
    scale_width: int
    per_precision: list[FootprintRowOut]
    multi_model_total: int
    shared_total: int
    reduction_vs_multi_model: float


class BenchRequest(BaseModel):
    precisions: list[int] | None = None
    repeats: int = Field(default=32, ge=1, le=4096)
    include_dense: bool = False
    seed: int = 0


class BenchRowOut(BaseModel):
    path: str
    precision: int
    median_us: float
    min_us: float
    plane_bytes: int
    scale_bytes: int


class BenchResponse(BaseModel):
    rows: int
    cols: int
    results: list[BenchRowOut]
