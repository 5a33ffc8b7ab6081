"""HTTP service wrapping the simulation harness.

The CLI talks to this app in process through an ASGI transport by default;
`trackgrasp serve` exposes the same app over a socket. Responses carry
full-precision row data so clients can format output byte-identically.
"""

from __future__ import annotations

from dataclasses import replace

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from . import __version__
from .config import ConfigError, SimConfig, config_from_mapping
from .harness import (
    SCENARIO_NAMES,
    MetricsRow,
    MetricsTable,
    run_episode,
    run_scenario,
)
from .world import MotionKind, MotionPattern

__all__ = ["create_app", "app", "RunRequest", "RunResponse", "EpisodeRequest", "EpisodeResponse"]


class RunRequest(BaseModel):
    scenario: str
    episodes: int = Field(gt=0)
    seed: int = 0
    no_ekf: bool = False
    stage: int | None = None
    workers: int = Field(default=1, ge=1)
    variants: list[str] | None = None
    trace_dir: str | None = None
    config: dict | None = None


class RowModel(BaseModel):
    scenario: str
    variant: str
    episodes: int
    success_pct: float
    timeout_pct: float
    collision_pct: float
    tracking_failure_pct: float
    total_failure_pct: float
    mean_time_to_grasp_s: float | None


class RunResponse(BaseModel):
    rows: list[RowModel]


class EpisodeRequest(BaseModel):
    kind: str = "linear_regular"
    speed_min: float = 0.0
    speed_max: float = 0.05
    disrupt_prob: float = 1.0
    workspace: str = "base"
    scene: str = "regular"
    seed: int = 0
    no_ekf: bool = False
    stage: int | None = None
    config: dict | None = None


class EpisodeResponse(BaseModel):
    outcome: str
    time_to_grasp: float | None
    end_time: float
    retries: int
    loss_ticks: int
    premature_grasps: int
    reward_total: float


def _build_config(overrides: dict | None, no_ekf: bool, stage: int | None) -> SimConfig:
    try:
        cfg = config_from_mapping(overrides or {}, SimConfig())
    except ConfigError as exc:
        raise HTTPException(status_code=422, detail=str(exc)) from exc
    ep = cfg.episode
    if no_ekf:
        ep = replace(ep, ekf_enabled=False)
    if stage is not None:
        if not 0 <= stage <= 5:
            raise HTTPException(status_code=422, detail="stage must be in 0..5")
        ep = replace(ep, stage=stage)
    return replace(cfg, episode=ep)


def create_app() -> FastAPI:
    app = FastAPI(title="trackgrasp", version=__version__)

    @app.get("/health")
    def health():
        return {"status": "ok", "version": __version__}

    @app.get("/scenarios")
    def scenarios():
        return {"scenarios": list(SCENARIO_NAMES)}

    @app.post("/run", response_model=RunResponse)
    def run(req: RunRequest) -> RunResponse:
        if req.scenario not in SCENARIO_NAMES:
            raise HTTPException(status_code=422, detail=f"unknown scenario {req.scenario!r}")
        cfg = _build_config(req.config, req.no_ekf, req.stage)
        table: MetricsTable = run_scenario(
            req.scenario,
            req.episodes,
            master_seed=req.seed,
            cfg=cfg,
            workers=req.workers,
            variants=req.variants,
            trace_dir=req.trace_dir,
        )
        rows = [RowModel(**_row_dict(r)) for r in table.rows]
        return RunResponse(rows=rows)

    @app.post("/episode", response_model=EpisodeResponse)
    def episode(req: EpisodeRequest) -> EpisodeResponse:
        try:
            kind = MotionKind(req.kind)
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=f"unknown motion kind {req.kind!r}") from exc
        cfg = _build_config(req.config, req.no_ekf, req.stage)
        ep = replace(cfg.episode, workspace=req.workspace, scene=req.scene)
        cfg = replace(cfg, episode=ep)
        try:
            pattern = MotionPattern(
                kind=kind,
                speed_range=(req.speed_min, req.speed_max),
                disrupt_prob=req.disrupt_prob,
            )
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        res = run_episode(cfg, pattern, req.seed)
        return EpisodeResponse(
            outcome=res.outcome.value,
            time_to_grasp=res.time_to_grasp,
            end_time=res.end_time,
            retries=res.retries,
            loss_ticks=res.loss_ticks,
            premature_grasps=res.premature_grasps,
            reward_total=res.reward_total,
        )

    return app


def _row_dict(row: MetricsRow) -> dict:
    return {
        "scenario": row.scenario,
        "variant": row.variant,
        "episodes": row.episodes,
        "success_pct": row.success_pct,
        "timeout_pct": row.timeout_pct,
        "collision_pct": row.collision_pct,
        "tracking_failure_pct": row.tracking_failure_pct,
        "total_failure_pct": row.total_failure_pct,
        "mean_time_to_grasp_s": row.mean_time_to_grasp_s,
    }


app = create_app()
