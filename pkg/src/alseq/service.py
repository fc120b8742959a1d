"""HTTP service exposing interactive labeling sessions to the annotator UI.

JSON over HTTP. Batch annotations are per-sentence tag arrays aligned to
token order. Mutations carry an idempotency key: retrying a submission
replays the recorded response instead of double-counting cost. Retraining
runs on a worker thread per session; queries during a retrain report
status "training" with an empty batch.
"""

from __future__ import annotations

import threading
import uuid
from dataclasses import dataclass, field
from pathlib import Path

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, ConfigDict, Field

from .corpus import Corpus
from .crf.model import batch_posteriors
from .embeddings import EmbeddingMatrix
from .engine import ALConfig, ALSession
from .scoring import AggregationStrategy, UncertaintyMeasure


@dataclass
class RegisteredCorpus:
    corpus: Corpus
    embeddings: EmbeddingMatrix
    train_ids: tuple[int, ...]
    test_ids: tuple[int, ...]
    base_config: ALConfig


@dataclass
class ServiceRegistry:
    corpora: dict[str, RegisteredCorpus] = field(default_factory=dict)
    sessions_root: Path | None = None


class _ManagedSession:
    def __init__(self, session: ALSession, prefill: bool):
        self.session = session
        self.prefill = prefill
        self.lock = threading.Lock()
        self.worker: threading.Thread | None = None
        self.idempotency: dict[str, dict] = {}
        self.error: str | None = None

    @property
    def training(self) -> bool:
        return self.worker is not None and self.worker.is_alive()


class CreateSessionRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")
    corpus_id: str
    seed: int = 0
    m: int | None = None
    strategy: AggregationStrategy | None = None
    measure: UncertaintyMeasure | None = None
    max_iterations: int | None = None
    prefill_suggestions: bool = True


class AnnotationItem(BaseModel):
    model_config = ConfigDict(extra="forbid")
    sentence_id: int
    tags: list[str]


class AnnotationRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")
    idempotency_key: str = Field(min_length=1)
    annotations: list[AnnotationItem]


def make_app(registry: ServiceRegistry, ui_dir: str | Path | None = None) -> FastAPI:
    app = FastAPI(title="alseq annotation service")
    sessions: dict[str, _ManagedSession] = {}
    app.state.registry = registry
    app.state.sessions = sessions
    if ui_dir is not None:
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    def get_managed(session_id: str) -> _ManagedSession:
        managed = sessions.get(session_id)
        if managed is None:
            raise HTTPException(404, detail=f"unknown session {session_id}")
        return managed

    def session_view(managed: _ManagedSession) -> dict:
        s = managed.session
        status = "training" if managed.training else s.status
        latest = s.curve[-1] if s.curve else None
        return {
            "session_id": s.session_id,
            "status": status,
            "iteration": s.next_iteration,
            "pending_sentences": len(s.pending_batch),
            "pending_labeled": len(s.pending_labels),
            "cost": {"sentences": s.ledger.sentences, "tokens": s.ledger.tokens},
            "latest_metrics": None if latest is None else vars(latest),
            "label_scheme": list(s.corpus.label_scheme.tags),
            "error": managed.error,
        }

    @app.post("/sessions", status_code=201)
    def create_session(request: CreateSessionRequest):
        reg = registry.corpora.get(request.corpus_id)
        if reg is None:
            raise HTTPException(404, detail=f"unregistered corpus id {request.corpus_id!r}")
        overrides = {}
        if request.m is not None:
            overrides["m"] = request.m
        if request.strategy is not None:
            overrides["strategy"] = request.strategy
        if request.measure is not None:
            overrides["measure"] = request.measure
        if request.max_iterations is not None:
            overrides["max_iterations"] = request.max_iterations
        from dataclasses import replace

        config = replace(reg.base_config, **overrides)
        session_id = f"{request.corpus_id}-{uuid.uuid4().hex[:12]}"
        session_dir = (
            registry.sessions_root / session_id if registry.sessions_root else None
        )
        session = ALSession(
            reg.corpus,
            reg.embeddings,
            reg.train_ids,
            reg.test_ids,
            config,
            seed=request.seed,
            session_dir=session_dir,
            session_id=session_id,
        )
        session.propose_batch()
        managed = _ManagedSession(session, request.prefill_suggestions)
        sessions[session_id] = managed
        return session_view(managed)

    @app.get("/sessions")
    def list_sessions():
        return [session_view(m) for m in sessions.values()]

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str):
        return session_view(get_managed(session_id))

    @app.get("/sessions/{session_id}/query")
    def get_query(session_id: str):
        managed = get_managed(session_id)
        if managed.training:
            return {"status": "training", "batch": []}
        with managed.lock:
            s = managed.session
            if not s.pending_batch:
                s.propose_batch()
            if s.status == "completed":
                return {"status": "completed", "batch": []}
            suggestions: dict[int, list[str]] = {}
            if managed.prefill and s.model is not None and s.pending_batch:
                sents = [s.corpus.sentences[i] for i in s.pending_batch]
                batch = s.model.featurize(sents, s.embeddings, s.keyed_cache)
                _, paths = batch_posteriors(s.model, batch)
                scheme = s.corpus.label_scheme
                for sent, vit in zip(sents, paths):
                    suggestions[sent.id] = [scheme.tag_name(int(t)) for t in vit.path]
            batch_payload = []
            for sid in s.pending_batch:
                sent = s.corpus.sentences[sid]
                batch_payload.append(
                    {
                        "sentence_id": sid,
                        "tokens": [
                            {"surface": t.surface, "pos": t.pos_tag} for t in sent.tokens
                        ],
                        "suggested_tags": suggestions.get(sid),
                        "already_labeled": sid in s.pending_labels,
                    }
                )
            return {"status": "awaiting_annotation", "batch": batch_payload}

    @app.post("/sessions/{session_id}/annotations", status_code=200)
    def post_annotations(session_id: str, request: AnnotationRequest):
        managed = get_managed(session_id)
        if request.idempotency_key in managed.idempotency:
            return managed.idempotency[request.idempotency_key]
        if managed.training:
            raise HTTPException(409, detail="session is retraining; retry shortly")
        with managed.lock:
            s = managed.session
            scheme = s.corpus.label_scheme
            converted: dict[int, tuple[int, ...]] = {}
            for item in request.annotations:
                tag_ids = []
                for tag in item.tags:
                    if tag not in scheme.tags:
                        raise HTTPException(
                            422, detail=f"tag {tag!r} is not in the label scheme"
                        )
                    tag_ids.append(scheme.tag_index(tag))
                converted[item.sentence_id] = tuple(tag_ids)
            try:
                s.submit_labels(converted)
            except Exception as exc:
                raise HTTPException(422, detail=str(exc)) from exc

            complete = s.batch_complete()
            response = {
                "accepted": len(converted),
                "batch_complete": complete,
                "remaining": len(s.pending_batch) - len(s.pending_labels),
                "status": "training" if complete else "awaiting_annotation",
            }
            managed.idempotency[request.idempotency_key] = response
            if complete:
                def _commit():
                    with managed.lock:
                        try:
                            managed.session.commit()
                            managed.session.propose_batch()
                        except Exception as exc:  # surfaced via session view
                            managed.error = str(exc)
                            managed.session.status = "failed"

                managed.worker = threading.Thread(target=_commit, daemon=True)
                managed.worker.start()
            return response

    @app.get("/sessions/{session_id}/metrics")
    def get_metrics(session_id: str):
        managed = get_managed(session_id)
        s = managed.session
        return {
            "curve": [vars(p) for p in s.curve],
            "cost": {
                "sentences": s.ledger.sentences,
                "tokens": s.ledger.tokens,
                "sentence_deltas": s.ledger.sentence_deltas,
                "token_deltas": s.ledger.token_deltas,
            },
        }

    @app.get("/sessions/{session_id}/diagnostics")
    def get_diagnostics(session_id: str):
        managed = get_managed(session_id)
        s = managed.session
        result = s.last_positive
        if result is None:
            return {"available": False}
        pset = result.positive_set
        return {
            "available": True,
            "positive_set_size": len(pset),
            "core_size": len(pset.core),
            "outlier_size": len(pset.outliers),
            "largest_cluster": int(pset.largest_cluster),
            "n_clusters": result.assignment.n_clusters,
            "cluster_sizes": {str(k): v for k, v in sorted(result.assignment.sizes.items())},
            "points": [
                {
                    "token_index": int(g),
                    "x": float(result.coords[i, 0]),
                    "y": float(result.coords[i, 1]),
                    "cluster": int(result.assignment.labels[i]),
                    "outlier_score": float(result.outlier_scores[i]),
                    "in_positive_set": int(g) in pset,
                }
                for i, g in enumerate(result.token_indices)
            ],
        }

    return app
