"""Request bodies for the evaluation service.

All endpoints take filesystem paths; the service and its callers are
assumed to share one filesystem (local use or a bind-mounted volume).
"""

from __future__ import annotations

from pydantic import BaseModel, Field


class PreprocessRequest(BaseModel):
    input_dir: str
    out_dir: str
    patch_size: int = 256
    step: int = 246
    nonzero_frac: float = 0.99
    canvas: int = 2224
    bit_depth: int = 16


class EvalFullrefRequest(BaseModel):
    dir_a: str
    dir_b: str
    out_dir: str
    metrics: list[str] = Field(default_factory=lambda: ["mse", "psnr", "ssim"])
    pairs_csv: str | None = None
    allow_partial: bool = False
    acts_a: str | None = None
    acts_b: str | None = None


class EvalDistRequest(BaseModel):
    adapted_acts: str
    target_acts: str
    out_dir: str
    source_acts: str | None = None
    metrics: list[str] = Field(default_factory=lambda: ["fid", "kid"])
    precision: str = "f64"
    subsets: int = 50
    subset_size: int = 100
    seed: int = 0
    precision_study: bool = False


class RegisterRequest(BaseModel):
    moving_dir: str
    fixed_dir: str
    out_dir: str
    max_shift: int = 10
    crop_margin: int = 5
    bit_depth: int = 16


class CorrelateRequest(BaseModel):
    report: str
    out_dir: str


class DistortRequest(BaseModel):
    input_dir: str
    out_dir: str
    kind: str
    dx: int = 0
    dy: int = 0
    sigma: float = 1.0
    gamma: float = 1.0
    bit_depth: int = 16


class ExtractToyRequest(BaseModel):
    input_dir: str
    out_dir: str
    seed: int = 0
    d: int = 64
