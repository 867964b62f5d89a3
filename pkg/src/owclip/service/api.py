"""HTTP JSON API over a Workbench instance.

Read endpoints serve snapshots and never block on training; POST /train
runs the episode in a background thread and GET /train/status is the
polling surface for it. One training job at a time.
"""

from __future__ import annotations

import threading

from fastapi import FastAPI, Query, Request
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from ..errors import (ConflictError, InputError, NoPhrasesError, OwclipError,
                      StateError)
from .workbench import Workbench

_STATUS_CODES = [
    (ConflictError, 409),
    (StateError, 409),
    (NoPhrasesError, 400),
    (InputError, 400),
    (OwclipError, 400),
]


class IngestBody(BaseModel):
    manifest_path: str
    store_path: str | None = None


class LassoBody(BaseModel):
    polygon: list[tuple[float, float]] = Field(min_length=3)
    method: str = "tsne"
    seed: int = 0


class SessionBody(BaseModel):
    label: str


class SelectBody(BaseModel):
    indices: list[int]


class AnnotateBody(BaseModel):
    mode: str
    ids: list[str]


class FinalizeBody(BaseModel):
    ablation: str | None = None


class TrainBody(BaseModel):
    session_ids: list[str]
    hyperparams: dict | None = None
    ablation: str | None = None


class TrainJob:
    def __init__(self):
        self.lock = threading.Lock()
        self.state = "idle"
        self.report = None
        self.eval = None
        self.error = None
        self.thread: threading.Thread | None = None

    def snapshot(self) -> dict:
        return {"state": self.state, "report": self.report, "eval": self.eval,
                "error": self.error}


def _session_payload(workbench: Workbench, session) -> dict:
    return {
        "session_id": session.session_id,
        "label": session.class_label,
        "state": session.state,
        "version": session.version,
        "phrases": session.phrase_list.phrases,
        "selected": session.phrase_list.selected,
        "ranges": {"ls": session.ranges.l_s, "hs": session.ranges.h_s,
                   "lh": session.ranges.l_h, "hh": session.ranges.h_h},
        "candidates": session.candidates(),
        "accepted_simple": session.accepted_simple,
        "accepted_hard": session.accepted_hard,
    }


def create_app(workbench: Workbench) -> FastAPI:
    from fastapi.middleware.cors import CORSMiddleware

    app = FastAPI(title="owclip", version="0.1.0")
    app.add_middleware(CORSMiddleware, allow_origins=["*"], allow_methods=["*"],
                       allow_headers=["*"])
    app.state.workbench = workbench
    job = TrainJob()
    app.state.train_job = job

    @app.exception_handler(OwclipError)
    async def owclip_error_handler(request: Request, exc: OwclipError):
        for klass, code in _STATUS_CODES:
            if isinstance(exc, klass):
                return JSONResponse(status_code=code, content={
                    "error": type(exc).__name__, "detail": str(exc)})
        raise exc

    @app.get("/health")
    def health():
        return {"status": "ok"}

    @app.post("/ingest")
    def ingest(body: IngestBody):
        return workbench.ingest(body.manifest_path, store_path=body.store_path)

    @app.get("/pool/unknown")
    def pool_unknown():
        return {"ids": list(workbench.unknown), "count": len(workbench.unknown),
                "summary": workbench.pool_summary()}

    @app.get("/projection")
    def projection(seed: int = 0, method: str = "tsne",
                   k: int | None = Query(default=None, ge=1)):
        proj = workbench.projection(method=method, seed=seed)
        clusters, curve, k_used = _clusters_for(workbench, seed=seed, k=k)
        return {
            "method": proj.method,
            "seed": proj.seed,
            "k": k_used,
            "sse_curve": curve,
            "points": [{"id": pid, "x": x, "y": y,
                        "cluster": clusters.get(pid, 0)}
                       for pid, (x, y) in proj.points.items()],
        }

    @app.post("/lasso")
    def lasso(body: LassoBody):
        ids = workbench.lasso(body.polygon, method=body.method, seed=body.seed)
        return {"ids": ids, "count": len(ids)}

    @app.get("/related/{proposal_id}")
    def related(proposal_id: str, k: int = 100):
        return {"ids": workbench.related(proposal_id, k=k)}

    @app.post("/sessions")
    def create_session(body: SessionBody):
        session = workbench.create_session(body.label)
        return _session_payload(workbench, session)

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str):
        return _session_payload(workbench, workbench._session(session_id))

    @app.get("/sessions/{session_id}/phrases")
    def get_phrases(session_id: str):
        session = workbench._session(session_id)
        return {"phrases": session.phrase_list.phrases,
                "selected": session.phrase_list.selected}

    @app.post("/sessions/{session_id}/phrases/select")
    def select_phrases(session_id: str, body: SelectBody):
        phrase_list = workbench.select_session_phrases(session_id, body.indices)
        return {"phrases": phrase_list.phrases, "selected": phrase_list.selected}

    @app.get("/sessions/{session_id}/candidates")
    def candidates(session_id: str, ls: float | None = None, hs: float | None = None,
                   lh: float | None = None, hh: float | None = None):
        session = workbench._session(session_id)
        bounds = (ls, hs, lh, hh)
        if all(v is not None for v in bounds):
            sets = workbench.set_ranges(session_id, ls, hs, lh, hh)
        elif any(v is not None for v in bounds):
            raise InputError("provide all of ls, hs, lh, hh or none")
        else:
            sets = session.candidates()
        return {"simple": sets["simple"], "hard": sets["hard"],
                "counts": {"simple": len(sets["simple"]), "hard": len(sets["hard"])},
                "ranges": {"ls": session.ranges.l_s, "hs": session.ranges.h_s,
                           "lh": session.ranges.l_h, "hh": session.ranges.h_h}}

    @app.get("/sessions/{session_id}/density")
    def density(session_id: str, value: str = "score",
                bandwidth: float | None = None):
        xs, ys = workbench.session_density(session_id, value=value, bandwidth=bandwidth)
        session = workbench._session(session_id)
        return {"x": [float(v) for v in xs], "y": [float(v) for v in ys],
                "value": value,
                "ranges": {"ls": session.ranges.l_s, "hs": session.ranges.h_s,
                           "lh": session.ranges.l_h, "hh": session.ranges.h_h}}

    @app.post("/sessions/{session_id}/annotate")
    def annotate(session_id: str, body: AnnotateBody):
        accepted = workbench.annotate(session_id, body.mode, body.ids)
        return {"accepted": accepted, "count": len(accepted), "mode": body.mode}

    @app.post("/sessions/{session_id}/finalize")
    def finalize(session_id: str, body: FinalizeBody | None = None):
        ablation = body.ablation if body else None
        session = workbench.finalize_session(session_id, ablation=ablation)
        return _session_payload(workbench, session)

    @app.post("/train")
    def train(body: TrainBody):
        with job.lock:
            if job.state == "running":
                raise StateError("a training job is already running")
            job.state = "running"
            job.report = job.eval = job.error = None

        def run():
            try:
                report, result = workbench.finalize_and_train(
                    body.session_ids, hyperparams=body.hyperparams,
                    ablation=body.ablation)
                with job.lock:
                    job.report = report.to_json()
                    job.eval = result.to_json()
                    job.state = "done"
            except Exception as exc:
                with job.lock:
                    job.error = f"{type(exc).__name__}: {exc}"
                    job.state = "failed"

        job.thread = threading.Thread(target=run, daemon=True)
        job.thread.start()
        return {"state": "running", "session_ids": body.session_ids}

    @app.get("/train/status")
    def train_status():
        with job.lock:
            return job.snapshot()

    @app.get("/eval")
    def evaluate(t: float | None = None):
        return workbench.evaluate(t_threshold=t).to_json()

    @app.get("/classes")
    def classes():
        return {"classes": workbench.class_summary(),
                "episodes": [{"episode_id": e.episode_id,
                              "class_indices": e.class_indices,
                              "finalized": e.finalized} for e in workbench.episodes]}

    return app


def _clusters_for(workbench: Workbench, seed: int, k: int | None):
    """Cluster assignments + SSE curve for the scatter plot, cached with the
    projections by pool content."""
    from ..discovery import kmeans, pool_digest, select_k

    pool = workbench.unknown_pool()
    if len(pool) < 3:
        return {pid: 0 for pid, _ in pool}, [], 1
    key = (pool_digest(pool), "clusters", seed, k)
    cached = workbench._projection_cache.get(key)
    if cached is None:
        if k is None:
            hi = min(12, len(pool) - 1)
            k_star, curve = select_k(pool, range(2, hi + 1), seed=seed)
        else:
            k_star, curve = min(k, len(pool)), []
        model = kmeans(pool, k=k_star, seed=seed)
        cached = (model.assignments, [[kk, ss] for kk, ss in curve], k_star)
        workbench._projection_cache[key] = cached
    return cached
