"""HTTP service exposing the forge pipelines.

Every endpoint validates its request with a pydantic model, runs the
corresponding pipeline, and returns its JSON report. Responses carry the
provenance block in the body and mirror it in `X-Forge-Version` /
`X-Forge-Config-Hash` headers. Domain errors map to 422 (bad parameters)
or 409 (unsatisfiable request); nothing forge-specific ever surfaces as a
bare 500.
"""
from __future__ import annotations

from typing import List, Optional

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from . import __version__, pipelines
from .errors import ConfigError, ForgeError, InputError, PlanError, SpecError


class GenRequest(BaseModel):
    nTraj: int = Field(ge=1, le=1000)
    maxSubgoals: int = Field(default=5, ge=1, le=100)
    seed: int = 0
    outDir: str
    model: str = "qwen2.5-vl"
    maxObjects: int = Field(default=14, ge=4, le=40)


class QARequest(BaseModel):
    trajDir: str
    targetCount: int = Field(default=1000, ge=1)
    seed: int = 0
    outFile: str
    validators: List[str] = Field(default_factory=lambda: ["oracle"])


class HaystackRequest(BaseModel):
    trajDir: str
    qaFile: str
    lengths: List[int]
    depths: List[float]
    outDir: str
    model: str = "qwen2.5-vl"
    emitContexts: bool = False


class EvalRequest(BaseModel):
    trajDir: str
    agent: str = "oracle"
    mode: str = "interleaved"
    topK: int = Field(default=10, ge=1)
    final: bool = False
    seed: int = 0
    timeout: float = Field(default=30.0, gt=0)


class RingcheckRequest(BaseModel):
    lengths: Optional[List[int]] = None
    dims: Optional[List[int]] = None
    workers: Optional[List[int]] = None
    causal: Optional[List[bool]] = None
    seeds: Optional[List[int]] = None
    tolerance: float = Field(default=1e-5, gt=0)


class RopeRequest(BaseModel):
    method: str
    scale: float = 1.0
    dim: int = Field(default=64, ge=2)
    base: float = 10_000.0
    trainLen: int = Field(default=4096, ge=1)
    seqLen: Optional[int] = None
    positions: Optional[List[float]] = None


class StatsRequest(BaseModel):
    trajDir: str


def _respond(report: dict) -> JSONResponse:
    headers = {}
    prov = report.get("provenance")
    if prov:
        headers = {"X-Forge-Version": prov["version"],
                   "X-Forge-Config-Hash": prov["configHash"]}
    return JSONResponse(report, headers=headers)


def create_app() -> FastAPI:
    app = FastAPI(title="embodied-forge", version=__version__)

    @app.exception_handler(ForgeError)
    async def forge_error(_request: Request, exc: ForgeError):
        # GiveUp / Unreachable / ProtocolError fall through to 409.
        status = 422 if isinstance(exc, (ConfigError, SpecError, PlanError,
                                         InputError)) else 409
        return JSONResponse(status_code=status,
                            content={"error": type(exc).__name__,
                                     "detail": str(exc)})

    @app.get("/health")
    async def health():
        return {"status": "ok", "version": __version__}

    @app.post("/gen")
    async def gen(req: GenRequest):
        return _respond(pipelines.run_gen(
            req.nTraj, req.maxSubgoals, req.seed, req.outDir,
            model=req.model, max_objects=req.maxObjects))

    @app.post("/qa")
    async def qa(req: QARequest):
        return _respond(pipelines.run_qa(
            req.trajDir, req.targetCount, req.seed, req.outFile,
            validators=req.validators))

    @app.post("/haystack")
    async def haystack(req: HaystackRequest):
        return _respond(pipelines.run_haystack(
            req.trajDir, req.qaFile, req.lengths, req.depths, req.outDir,
            model=req.model, emit_contexts=req.emitContexts))

    @app.post("/eval")
    async def eval_(req: EvalRequest):
        return _respond(pipelines.run_eval(
            req.trajDir, req.agent, mode=req.mode, top_k=req.topK,
            final=req.final, seed=req.seed, timeout=req.timeout))

    @app.post("/ringcheck")
    async def ringcheck(req: RingcheckRequest):
        return _respond(pipelines.run_ringcheck(
            req.lengths, req.dims, req.workers, req.causal, req.seeds,
            tolerance=req.tolerance))

    @app.post("/rope")
    async def rope(req: RopeRequest):
        return _respond(pipelines.run_rope(
            req.method, scale=req.scale, dim=req.dim, base=req.base,
            train_len=req.trainLen, seq_len=req.seqLen,
            positions=req.positions))

    @app.post("/stats")
    async def stats(req: StatsRequest):
        return _respond(pipelines.run_stats(req.trajDir))

    return app


app = create_app()
