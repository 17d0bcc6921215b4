"""HTTP service wrapping the quantization toolkit.

Models and matrices live as files under one home directory; loaded models
are cached together with their GEMV engines so repeated requests against
the same model pay the load cost once and can pick a different precision
per request.

Run with: uvicorn anybcq.service:app  (ANYBCQ_HOME selects the data dir).
"""

from __future__ import annotations

import os
from pathlib import Path

from fastapi import FastAPI, HTTPException
from fastapi.responses import JSONResponse

from .. import __version__
from ..bcq import QuantConfig
from ..calibrate import apply_scales, refine_scales
from ..errors import FileFormatError, UsageError
from ..gemv import GemvEngine, bench
from ..model_format import deserialize, footprint, serialize
from ..progressive import MultiPrecisionModel, build_multiprecision, precision_errors
from ..tensor_io import load_matrix, random_gaussian, save_matrix
from .schemas import (
    BenchRequest,
    BenchResponse,
    BenchRowOut,
    FootprintResponse,
    FootprintRowOut,
    GemvRequest,
    GemvResponse,
    GemvStatsOut,
    MatrixInfo,
    MatrixSpec,
    ModelInfo,
    QuantizeRequest,
    QuantizeResponse,
    RefineRequest,
    RefineResponse,
)

_MODES = {"sym": "symmetric", "asym": "asymmetric",
          "symmetric": "symmetric", "asymmetric": "asymmetric"}


class ModelStore:
    """File-backed registry with an engine cache keyed by name + mtime."""

    def __init__(self, home: Path):
        self.home = home
        self.home.mkdir(parents=True, exist_ok=True)
        self._cache: dict[str, tuple[float, MultiPrecisionModel, GemvEngine]] = {}

    def matrix_path(self, name: str) -> Path:
        return self.home / f"{name}.fmat"

    def model_path(self, name: str) -> Path:
        return self.home / f"{name}.abcq"

    def load_matrix(self, name: str):
        path = self.matrix_path(name)
        if not path.exists():
            raise HTTPException(404, f"matrix {name!r} not found")
        return load_matrix(path)

    def get(self, name: str) -> tuple[MultiPrecisionModel, GemvEngine]:
        path = self.model_path(name)
        if not path.exists():
            raise HTTPException(404, f"model {name!r} not found")
        mtime = path.stat().st_mtime_ns
        hit = self._cache.get(name)
        if hit is not None and hit[0] == mtime:
            return hit[1], hit[2]
        model = deserialize(path)
        engine = GemvEngine(model)
        self._cache[name] = (mtime, model, engine)
        return model, engine

    def put(self, name: str, model: MultiPrecisionModel, scale_width: int) -> None:
        serialize(model, self.model_path(name), scale_width=scale_width)
        self._cache.pop(name, None)

    def list_models(self) -> list[str]:
        return sorted(p.stem for p in self.home.glob("*.abcq"))

    def list_matrices(self) -> list[str]:
        return sorted(p.stem for p in self.home.glob("*.fmat"))


def _model_info(name: str, model: MultiPrecisionModel) -> ModelInfo:
    return ModelInfo(
        name=name,
        rows=model.shape[0],
        cols=model.shape[1],
        bits_lo=model.p_lo,
        bits_hi=model.p_hi,
        group_size=model.config.group_size,
        mode=model.config.mode,
    )


def create_app(home: str | os.PathLike | None = None) -> FastAPI:
    store = ModelStore(Path(home or os.environ.get("ANYBCQ_HOME", "anybcq-data")))
    app = FastAPI(title="anybcq", version=__version__)
    app.state.store = store

    @app.exception_handler(UsageError)
    async def _usage(request, exc):
        return JSONResponse(status_code=400, content={"detail": str(exc)})

    @app.exception_handler(FileFormatError)
    async def _corrupt(request, exc):
        # stored artifact is unreadable; surface the reason instead of a bare 500
        return JSONResponse(status_code=500, content={"detail": str(exc)})

    @app.get("/health")
    def health():
        return {"status": "ok", "version": __version__}

    @app.get("/matrices", response_model=list[MatrixInfo])
    def list_matrices():
        out = []
        for name in store.list_matrices():
            m = load_matrix(store.matrix_path(name))
            out.append(MatrixInfo(name=name, rows=m.shape[0], cols=m.shape[1]))
        return out

    @app.post("/matrices", response_model=MatrixInfo)
    def create_matrix(spec: MatrixSpec):
        m = random_gaussian(spec.rows, spec.cols, spec.seed)
        save_matrix(m, store.matrix_path(spec.name))
        return MatrixInfo(name=spec.name, rows=spec.rows, cols=spec.cols)

    @app.get("/models", response_model=list[ModelInfo])
    def list_models():
        return [_model_info(name, store.get(name)[0]) for name in store.list_models()]

    @app.post("/models", response_model=QuantizeResponse)
    def quantize(req: QuantizeRequest):
        if (req.matrix is None) == (req.random is None):
            raise HTTPException(400, "exactly one of matrix or random is required")
        if req.matrix is not None:
            w = store.load_matrix(req.matrix)
        else:
            w = random_gaussian(req.random.rows, req.random.cols, req.random.seed)
        if not req.bits_lo <= req.bits_hi:
            raise HTTPException(400, "bits_lo must not exceed bits_hi")
        try:
            cfg = QuantConfig(group_size=req.group_size, mode=_MODES[req.mode],
                              cycles=req.cycles)
            model = build_multiprecision(w, req.bits_lo, req.bits_hi, cfg)
            store.put(req.name, model, req.scale_width)
        except UsageError as exc:
            raise HTTPException(400, str(exc))
        errs = precision_errors(w, model)
        return QuantizeResponse(model=_model_info(req.name, model),
                                relative_errors={p: float(e) for p, e in errs.items()})

    @app.get("/models/{name}", response_model=ModelInfo)
    def model_info(name: str):
        model, _ = store.get(name)
        return _model_info(name, model)

    @app.get("/models/{name}/footprint", response_model=FootprintResponse)
    def model_footprint(name: str, scale_width: int = 2):
        model, _ = store.get(name)
        try:
            report = footprint(model.shape[0], model.shape[1],
                               model.config.group_size, model.p_lo, model.p_hi,
                               model.config.mode, scale_width=scale_width)
        except UsageError as exc:
            raise HTTPException(400, str(exc))
        return FootprintResponse(
            scale_width=report.scale_width,
            per_precision=[
                FootprintRowOut(precision=r.precision, scale_bytes=r.scale_bytes,
                                binary_bytes=r.binary_bytes, total_bytes=r.total_bytes)
                for r in report.per_precision
            ],
            multi_model_total=report.multi_model_total,
            shared_total=report.shared_total,
            reduction_vs_multi_model=report.reduction_vs_multi_model,
        )

    @app.post("/models/{name}/gemv", response_model=GemvResponse)
    def gemv(name: str, req: GemvRequest):
        _, engine = store.get(name)
        try:
            run = engine.lut if req.path == "lut" else engine.naive
            y, stats = run(req.precision, req.x)
        except UsageError as exc:
            raise HTTPException(400, str(exc))
        return GemvResponse(
            precision=req.precision,
            path=req.path,
            y=[float(v) for v in y],
            stats=GemvStatsOut(
                plane_bytes_fetched=stats.plane_bytes_fetched,
                scale_bytes_fetched=stats.scale_bytes_fetched,
                lut_build_count=stats.lut_build_count,
                elapsed_us=stats.elapsed_s * 1e6,
            ),
        )

    @app.post("/models/{name}/refine", response_model=RefineResponse)
    def refine(name: str, req: RefineRequest):
        model, _ = store.get(name)
        w = store.load_matrix(req.weights)
        x = store.load_matrix(req.calib)
        try:
            result = refine_scales(w, model, x, req.precision, solver=req.solver,
                                   epochs=req.epochs, lr=req.lr)
            store.put(name, apply_scales(model, req.precision, result.scales), 4)
        except UsageError as exc:
            raise HTTPException(400, str(exc))
        return RefineResponse(
            precision=req.precision, solver=req.solver,
            loss_before=result.loss_before, loss_after=result.loss_after,
            ridge_fallback=result.ridge_fallback,
        )

    @app.post("/models/{name}/bench", response_model=BenchResponse)
    def run_bench(name: str, req: BenchRequest):
        model, _ = store.get(name)
        precisions = req.precisions or list(model.precisions)
        x = random_gaussian(1, model.shape[1], req.seed).ravel()
        try:
            rows = bench(model, precisions, x, repeats=req.repeats,
                         include_dense=req.include_dense)
        except UsageError as exc:
            raise HTTPException(400, str(exc))
        return BenchResponse(
            rows=model.shape[0],
            cols=model.shape[1],
            results=[
                BenchRowOut(path=r.path, precision=r.precision, median_us=r.median_us,
                            min_us=r.min_us, plane_bytes=r.plane_bytes,
                            scale_bytes=r.scale_bytes)
                for r in rows
            ],
        )

    return app
