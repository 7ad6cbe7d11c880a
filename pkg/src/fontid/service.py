"""HTTP facade for live human-in-the-loop labeling.

Endpoints (all JSON unless noted):

    POST /sessions                    create a session {strategy?, batch_size?, seed?}
    GET  /sessions/{id}/batch         current query batch (selects one if none pending)
    POST /sessions/{id}/labels        submit labels for pending pages
    GET  /sessions/{id}/metrics       learning curve and pool counters
    GET  /pages/{id}/thumbnail        PNG preview of the page

Errors use the envelope {"error": {"code": ..., "message": ...}}. Each
session serializes mutations through a lock; readers always see the last
completed, immutable snapshot. State changes append to a JSONL event log so
a restarted service can resume mid-round.
"""

from __future__ import annotations

import io
import json
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, Response

from . import harness, ingest, llp, page_features
from .config import ToolConfig
from .errors import FontIdError
from .ingest import CLASSES
from .sampler import Strategy, select_batch


class ServiceError(FontIdError):
    def __init__(self, code: str, message: str, status: int = 400):
        super().__init__(message)
        self.code = code
        self.status = status


@dataclass
class ServiceDataset:
    """Pages the service can hand out for labeling, plus an optional eval split."""

    page_ids: list[str]
    bofs: np.ndarray
    seed_labels: dict[str, str]  # initial labeled pages (>= 1 per class)
    eval_bofs: np.ndarray | None = None
    eval_labels: np.ndarray | None = None  # class indices aligned with eval_bofs
    image_paths: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        self._index = {pid: i for i, pid in enumerate(self.page_ids)}

    def index_of(self, page_id: str) -> int:
        return self._index[page_id]


def synthetic_service_dataset(
    cfg: ToolConfig, per_class: int = 21, eval_per_class: int = 12
) -> ServiceDataset:
    """Synthetic labeling pool for demos and UI tests.

    The default sizes give a 63-page pool (3 of them seed-labeled) plus a
    36-page held-out split that scores each retrain.
    """
    rng = np.random.default_rng(cfg.seed)
    total = per_class + eval_per_class
    bofs, labels = harness.synthetic_bof_dataset(
        total, rng, concentration=cfg.synthetic_concentration
    )
    pool_rows, eval_rows = [], []
    for c in range(len(CLASSES)):
        members = np.nonzero(labels == c)[0]
        pool_rows.extend(members[:per_class])
        eval_rows.extend(members[per_class:])
    pool_rows = np.array(pool_rows)
    eval_rows = np.array(eval_rows)
    page_ids = [f"page-{i:04d}" for i in range(pool_rows.size)]
    seed_labels = {}
    for c, name in enumerate(CLASSES):
        first = int(np.nonzero(labels[pool_rows] == c)[0][0])
        seed_labels[page_ids[first]] = name
    return ServiceDataset(
        page_ids=page_ids,
        bofs=bofs[pool_rows],
        seed_labels=seed_labels,
        eval_bofs=bofs[eval_rows] if eval_rows.size else None,
        eval_labels=labels[eval_rows] if eval_rows.size else None,
    )


def manifest_service_dataset(cfg: ToolConfig) -> ServiceDataset:
    """Dataset assembled from a manifest + cached features + codebook."""
    from .cli import cache_features, _page_bofs_from_rows  # local import avoids a cycle

    if cfg.manifest is None:
        raise ServiceError("config", "service needs paths.manifest or a synthetic dataset", 500)
    codebook = page_features.Codebook.load(cfg.codebook_path)
    rows, _ = cache_features(cfg.manifest, cfg)
    ids = [r[0] for r in rows]
    feats = np.vstack([r[2] for r in rows])
    page_ids, bofs = _page_bofs_from_rows(ids, feats, codebook)
    pages = {p.page_id: p for p in ingest.load_dataset(cfg.manifest)}
    seed_labels: dict[str, str] = {}
    for pid in page_ids:
        label = pages[pid].label
        if label is not None and sum(1 for v in seed_labels.values() if v == label) < 1:
            seed_labels[pid] = label
    image_paths = {pid: pages[pid].image_path for pid in page_ids}
    return ServiceDataset(
        page_ids=page_ids, bofs=bofs, seed_labels=seed_labels, image_paths=image_paths
    )


@dataclass(frozen=True)
class MetricsPoint:
    round: int
    labeled_count: int
    accuracy: float | None
    class_counts: dict[str, int]
    pool_size: int


@dataclass
class Session:
    """One labeling campaign; mutations run under `lock`, reads are lock-free."""

    session_id: str
    dataset: ServiceDataset
    strategy: Strategy
    batch_size: int
    sigma: float
    lambda_weight: float
    llp_max_iter: int
    rng: np.random.Generator
    log_path: Path

    labels: dict[str, str] = field(default_factory=dict)  # page_id -> class name
    pending: tuple[str, ...] = ()
    pending_scores: dict[str, dict] = field(default_factory=dict)
    pending_received: dict[str, str] = field(default_factory=dict)
    round: int = 0
    model: llp.LlpModel | None = None
    metrics: tuple[MetricsPoint, ...] = ()
    lock: threading.Lock = field(default_factory=threading.Lock)
    similarity: np.ndarray | None = None

    @property
    def unlabeled_ids(self) -> list[str]:
        return [p for p in self.dataset.page_ids if p not in self.labels]


def _append_event(session: Session, kind: str, payload: dict) -> None:
    event = {"t": time.time(), "event": kind, **payload}
    with session.log_path.open("a", encoding="utf-8") as fh:
        fh.write(json.dumps(event) + "\n")


class SessionManager:
    def __init__(self, dataset: ServiceDataset, cfg: ToolConfig):
        self.dataset = dataset
        self.cfg = cfg
        self.sessions: dict[str, Session] = {}
        self.state_dir = Path(cfg.state_dir)
        self.state_dir.mkdir(parents=True, exist_ok=True)
        self._create_lock = threading.Lock()

    def create_session(self, strategy: str | None, batch_size: int | None, seed: int | None) -> Session:
        cfg = self.cfg
        session_id = uuid.uuid4().hex[:12]
        session = Session(
            session_id=session_id,
            dataset=self.dataset,
            strategy=Strategy.parse(strategy) if strategy else Strategy.parse(cfg.strategy),
            batch_size=batch_size if batch_size else cfg.batch_size,
            sigma=cfg.harness_sigma,
            lambda_weight=cfg.harness_lambda,
            llp_max_iter=cfg.harness_max_iter,
            rng=np.random.default_rng(cfg.seed if seed is None else seed),
            log_path=self.state_dir / f"session-{session_id}.jsonl",
        )
        missing = [c for c in CLASSES if c not in set(self.dataset.seed_labels.values())]
        if missing:
            raise ServiceError(
                "config", f"dataset lacks seed labels for class(es): {', '.join(missing)}", 500
            )
        session.labels.update(self.dataset.seed_labels)
        _append_event(
            session,
            "session_created",
            {
                "session_id": session_id,
                "strategy": session.strategy.value,
                "batch_size": session.batch_size,
                "seed_labels": self.dataset.seed_labels,
            },
        )
        _retrain(session)
        with self._create_lock:
            self.sessions[session_id] = session
        return session

    def get(self, session_id: str) -> Session:
        session = self.sessions.get(session_id)
        if session is None:
            raise ServiceError("not_found", f"unknown session {session_id!r}", 404)
        return session


def _retrain(session: Session) -> MetricsPoint:
    """Fit the model on current labels and append one metrics point."""
    ds = session.dataset
    if session.similarity is None:
        session.similarity = llp.similarity_matrix(ds.bofs, session.sigma)
    labeled_idx = np.array([ds.index_of(p) for p in session.labels], dtype=int)
    labeled_y = np.array([CLASSES.index(session.labels[ds.page_ids[i]]) for i in labeled_idx])
    order = np.argsort(labeled_idx)
    labeled_idx, labeled_y = labeled_idx[order], labeled_y[order]
    unlabeled_idx = np.setdiff1d(np.arange(len(ds.page_ids)), labeled_idx)
    full_order = np.concatenate([labeled_idx, unlabeled_idx])
    model = llp.train_llp(
        ds.bofs[labeled_idx],
        labeled_y,
        ds.bofs[unlabeled_idx],
        sigma=session.sigma,
        lambda_weight=session.lambda_weight,
        max_iter=session.llp_max_iter,
        similarity_precomputed=session.similarity[np.ix_(full_order, full_order)],
    )
    accuracy = None
    if ds.eval_bofs is not None:
        pred = np.argmax(llp.predict_many(model, ds.eval_bofs), axis=1)
        accuracy = float(np.mean(pred == ds.eval_labels))
    counts = {c: 0 for c in CLASSES}
    for label in session.labels.values():
        counts[label] += 1
    point = MetricsPoint(
        round=session.round,
        labeled_count=len(session.labels),
        accuracy=accuracy,
        class_counts=counts,
        pool_size=len(ds.page_ids) - len(session.labels),
    )
    session.model = model
    session.metrics = session.metrics + (point,)
    _append_event(
        session,
        "round_completed",
        {"round": point.round, "labeled_count": point.labeled_count, "accuracy": accuracy},
    )
    return point


def _ensure_batch(session: Session) -> None:
    if session.pending:
        return
    ds = session.dataset
    unlabeled = np.array(
        [i for i, p in enumerate(ds.page_ids) if p not in session.labels], dtype=int
    )
    if unlabeled.size == 0:
        return
    labeled = np.array([ds.index_of(p) for p in session.labels], dtype=int)
    batch = select_batch(
        session.strategy,
        session.model,
        unlabeled,
        np.sort(labeled),
        session.similarity,
        ds.bofs,
        batch_size=session.batch_size,
        rng=session.rng,
    )
    session.pending = tuple(ds.page_ids[p.index] for p in batch.picks)
    session.pending_scores = {
        ds.page_ids[p.index]: {
            "uncertainty": p.h,
            "dissimilarity": p.d,
            "diversity": p.d_prime,
            "total": p.total,
        }
        for p in batch.picks
    }
    session.pending_received = {}
    _append_event(session, "batch_selected", {"round": session.round + 1, "pages": list(session.pending)})


def batch_payload(session: Session) -> dict:
    if not session.pending and not session.unlabeled_ids:
        return {
            "status": "pool_exhausted",
            "round": session.round,
            "labeled_count": len(session.labels),
        }
    return {
        "status": "pending",
        "round": session.round + 1,
        "pages": [
            {
                "page_id": pid,
                "thumbnail_url": f"/pages/{pid}/thumbnail",
                "scores": session.pending_scores.get(pid, {}),
                "received_label": session.pending_received.get(pid),
            }
            for pid in session.pending
        ],
    }


def submit_labels(session: Session, submissions: list[dict]) -> dict:
    accepted, rejected = [], []
    with session.lock:
        pending = set(session.pending)
        for sub in submissions:
            pid = sub.get("page_id")
            label = sub.get("label")
            if pid not in pending:
                rejected.append({"page_id": pid, "reason": "not_pending"})
                continue
            try:
                canonical = ingest.canonical_label(str(label))
            except FontIdError:
                rejected.append({"page_id": pid, "reason": "bad_label"})
                continue
            if pid in session.pending_received:
                _append_event(
                    session,
                    "label_overwritten",
                    {"page_id": pid, "old": session.pending_received[pid], "new": canonical},
                )
            session.pending_received[pid] = canonical
            accepted.append(pid)
            _append_event(
                session,
                "label_submitted",
                {"page_id": pid, "label": canonical, "annotator": sub.get("annotator")},
            )
        remaining = [p for p in session.pending if p not in session.pending_received]
        if session.pending and not remaining:
            session.labels.update(session.pending_received)
            session.round += 1
            session.pending = ()
            session.pending_scores = {}
            session.pending_received = {}
            point = _retrain(session)
            return {
                "status": "round_completed",
                "round": session.round,
                "accepted": accepted,
                "rejected": rejected,
                "labeled_count": point.labeled_count,
                "accuracy": point.accuracy,
                "echo": {p: session.labels[p] for p in accepted},
            }
        return {
            "status": "partial",
            "round": session.round + 1 if session.pending else session.round,
            "accepted": accepted,
            "rejected": rejected,
            "awaiting": remaining,
            "echo": {p: session.pending_received[p] for p in accepted},
        }


def metrics_payload(session: Session) -> dict:
    metrics = session.metrics  # immutable tuple: a torn read is impossible
    return {
        "session_id": session.session_id,
        "strategy": session.strategy.value,
        "round": session.round,
        "labeled_count": len(session.labels),
        "pool_size": len(session.dataset.page_ids) - len(session.labels),
        "curve": [
            {
                "round": p.round,
                "labeled_count": p.labeled_count,
                "accuracy": p.accuracy,
                "class_counts": p.class_counts,
            }
            for p in metrics
        ],
    }


def _placeholder_thumbnail(page_id: str, height: int = 256) -> bytes:
    """Deterministic gray-texture PNG for datasets without page scans."""
    from PIL import Image

    rng = np.random.default_rng(abs(hash(page_id)) % (2**32))
    width = int(height * 0.75)
    base = np.full((height, width), 235, dtype=np.uint8)
    for y in range(24, height - 16, 18):  # fake text lines
        line_w = int(width * (0.55 + 0.35 * rng.random()))
        base[y : y + 8, 12 : 12 + line_w] = rng.integers(40, 90)
    buf = io.BytesIO()
    Image.fromarray(base).save(buf, format="PNG")
    return buf.getvalue()


def build_service(cfg: ToolConfig, dataset: ServiceDataset | None = None) -> FastAPI:
    """Assemble the FastAPI app over a dataset (synthetic when no manifest)."""
    if dataset is None:
        if cfg.manifest:
            dataset = manifest_service_dataset(cfg)
        else:
            dataset = synthetic_service_dataset(cfg)
    manager = SessionManager(dataset, cfg)
    app = FastAPI(title="fontid labeling service")
    app.state.manager = manager
    thumb_cache: dict[str, bytes] = {}

    @app.exception_handler(ServiceError)
    async def _service_error(request: Request, exc: ServiceError):
        return JSONResponse(
            status_code=exc.status,
            content={"error": {"code": exc.code, "message": str(exc)}},
        )

    @app.exception_handler(FontIdError)
    async def _fontid_error(request: Request, exc: FontIdError):
        return JSONResponse(
            status_code=400, content={"error": {"code": "invalid", "message": str(exc)}}
        )

    @app.post("/sessions")
    async def create_session(body: dict | None = None):
        body = body or {}
        session = manager.create_session(
            body.get("strategy"), body.get("batch_size"), body.get("seed")
        )
        return {
            "session_id": session.session_id,
            "strategy": session.strategy.value,
            "batch_size": session.batch_size,
            "labeled_count": len(session.labels),
            "pool_size": len(dataset.page_ids) - len(session.labels),
        }

    @app.get("/sessions/{session_id}/batch")
    async def get_batch(session_id: str):
        session = manager.get(session_id)
        with session.lock:
            _ensure_batch(session)
        return batch_payload(session)

    @app.post("/sessions/{session_id}/labels")
    async def post_labels(session_id: str, body: dict):
        session = manager.get(session_id)
        submissions = body.get("labels")
        if not isinstance(submissions, list):
            raise ServiceError("bad_request", "body must contain a 'labels' array")
        return submit_labels(session, submissions)

    @app.get("/sessions/{session_id}/metrics")
    async def get_metrics(session_id: str):
        return metrics_payload(manager.get(session_id))

    @app.get("/pages/{page_id}/thumbnail")
    async def get_thumbnail(page_id: str):
        if page_id not in dataset.image_paths and page_id not in set(dataset.page_ids):
            raise ServiceError("not_found", f"unknown page {page_id!r}", 404)
        if page_id not in thumb_cache:
            path = dataset.image_paths.get(page_id)
            if path and Path(path).exists():
                thumb_cache[page_id] = _image_thumbnail(path)
            else:
                thumb_cache[page_id] = _placeholder_thumbnail(page_id)
        return Response(content=thumb_cache[page_id], media_type="image/png")

    if cfg.ui_dir:
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=cfg.ui_dir, html=True), name="ui")
    return app


def _image_thumbnail(path: str, height: int = 256) -> bytes:
    from PIL import Image

    with Image.open(path) as im:
        im = im.convert("L")
        ratio = height / im.height
        thumb = im.resize((max(1, round(im.width * ratio)), height))
        buf = io.BytesIO()
        thumb.save(buf, format="PNG")
        return buf.getvalue()
