"""FastAPI application wrapping the evaluation jobs.

Bad user input (unreadable files, malformed data, invalid parameters)
maps to HTTP 400; anything unexpected surfaces as a 500.
"""

from __future__ import annotations

from fastapi import FastAPI, HTTPException

from .. import __version__, jobs
from ..features import ActivationFileError
from ..imagecore import ImageError
from . import models

_USER_ERRORS = (jobs.UserDataError, ImageError, ActivationFileError, ValueError, KeyError)


def _run(job, /, **kwargs) -> dict:
    try:
        return job(**kwargs)
    except _USER_ERRORS as exc:
        raise HTTPException(status_code=400, detail=str(exc)) from exc


def create_app() -> FastAPI:
    app = FastAPI(title="i2ieval", version=__version__)

    @app.get("/v1/health")
    def health() -> dict:
        return {"status": "ok", "version": __version__}

    @app.post("/v1/preprocess")
    def preprocess(req: models.PreprocessRequest) -> dict:
        return _run(jobs.job_preprocess, **req.model_dump())

    @app.post("/v1/eval/fullref")
    def eval_fullref(req: models.EvalFullrefRequest) -> dict:
        return _run(jobs.job_eval_fullref, **req.model_dump())

    @app.post("/v1/eval/dist")
    def eval_dist(req: models.EvalDistRequest) -> dict:
        return _run(jobs.job_eval_dist, **req.model_dump())

    @app.post("/v1/register")
    def register(req: models.RegisterRequest) -> dict:
        return _run(jobs.job_register, **req.model_dump())

    @app.post("/v1/correlate")
    def correlate(req: models.CorrelateRequest) -> dict:
        kwargs = req.model_dump()
        kwargs["report_json"] = kwargs.pop("report")
        return _run(jobs.job_correlate, **kwargs)

    @app.post("/v1/distort")
    def distort(req: models.DistortRequest) -> dict:
        return _run(jobs.job_distort, **req.model_dump())

    @app.post("/v1/extract/toy")
    def extract_toy(req: models.ExtractToyRequest) -> dict:
        return _run(jobs.job_extract_toy, **req.model_dump())

    return app
