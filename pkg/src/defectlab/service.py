"""HTTP session service: the bridge between the AL engine and a human annotator.

JSON over HTTP, versioned under /api/v1. One active-learning session maps to
one directory under the session store; every mutating request persists the
session before returning, so a restart never loses a completed transition.
Label submission is idempotent (client-supplied idempotency key) and all
mutations of one session serialize through that session's transition lock.
Fine-tuning runs on a background thread after a submission; clients poll.
"""

from __future__ import annotations

import mimetypes
import socket
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from fastapi import Depends, FastAPI, Header, HTTPException, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import FileResponse, JSONResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from . import active_learning as al
from . import classifier
from .classifier import Model, ModelConfig, TrainConfig
from .dataset import DatasetManifest, Sample, load_manifest
from .errors import (
    BatchMismatchError,
    BindError,
    ChecksumError,
    ConflictError,
    DefectLabError,
    DivergenceError,
    IntegrityError,
    NotFoundError,
    ParseError,
    RangeError,
    ShapeError,
    VersionError,
)

_STATUS_CODES: list[tuple[type, int]] = [
    (NotFoundError, 404),
    (ConflictError, 409),
    (BatchMismatchError, 422),
    (RangeError, 422),
    (ParseError, 422),
    (ShapeError, 422),
    (VersionError, 409),
    (ChecksumError, 500),
    (IntegrityError, 500),
    (DivergenceError, 500),
    (DefectLabError, 400),
]


def _http_status(exc: DefectLabError) -> int:
    for klass, code in _STATUS_CODES:
        if isinstance(exc, klass):
            return code
    return 400


@dataclass
class ManagedSession:
    """One live session plus its serialization lock and lazily loaded model."""

    session: al.ALSessionState
    model: Model | None = None
    lock: threading.Lock = field(default_factory=threading.Lock)
    worker: threading.Thread | None = None

    @property
    def val_samples(self) -> list[Sample]:
        return self.session.manifest.split_samples("validation")


class SessionManager:
    """Owns all sessions under one store directory."""

    def __init__(self, store_dir: Path | str):
        self.store_dir = Path(store_dir)
        self.store_dir.mkdir(parents=True, exist_ok=True)
        self.sessions: dict[str, ManagedSession] = {}
        self._image_index: dict[str, tuple[Path, str]] = {}

    # -- lifecycle --------------------------------------------------------

    def load_all(self) -> None:
        for path in sorted(self.store_dir.iterdir()):
            if not (path / "session.json").is_file():
                continue
            session = al.resume_session(path)
            managed = ManagedSession(session=session)
            if session.model_checkpoint_ref is not None:
                managed.model = al.load_session_model(session)
            self.sessions[session.session_id] = managed
            self._index_manifest(session.manifest)

    def save_all(self) -> None:
        for managed in self.sessions.values():
            if managed.worker is not None and managed.worker.is_alive():
                managed.worker.join(timeout=60)
            with managed.lock:
                al.save_session(managed.session, self.store_dir / managed.session.session_id,
                                model=managed.model)

    def _index_manifest(self, manifest: DatasetManifest) -> None:
        for sample in manifest.samples:
            self._image_index[sample.id] = (manifest.source_root, sample.image_ref)

    # -- operations ---------------------------------------------------------

    def get(self, session_id: str) -> ManagedSession:
        managed = self.sessions.get(session_id)
        if managed is None:
            raise NotFoundError(f"unknown session {session_id!r}")
        return managed

    def create_session(self, manifest_path: str, config: al.ALConfig,
                       model_config: ModelConfig, model_seed: int = 0) -> ManagedSession:
        manifest = load_manifest(Path(manifest_path))
        if not manifest.split_samples("validation"):
            raise RangeError("manifest needs a validation split for per-iteration scoring")
        session = al.new_session(manifest, config)
        model = classifier.build_model(model_config, rng_seed=model_seed)
        managed = ManagedSession(session=session, model=model)
        al.save_session(session, self.store_dir / session.session_id, model=model)
        self.sessions[session.session_id] = managed
        self._index_manifest(manifest)
        self.schedule_step(managed)
        return managed

    def schedule_step(self, managed: ManagedSession) -> None:
        def _run() -> None:
            with managed.lock:
                if managed.session.terminal or managed.session.status != "training":
                    return
                try:
                    al.step(managed.session, managed.model, managed.val_samples,
                            root=managed.session.manifest.source_root)
                except DefectLabError:
                    pass  # session marked aborted and persisted by step()

        managed.worker = threading.Thread(target=_run, daemon=True)
        managed.worker.start()

    def resolve_image(self, sample_id: str) -> Path:
        entry = self._image_index.get(sample_id)
        if entry is None:
            raise NotFoundError(f"unknown sample id {sample_id!r}")
        root, ref = entry
        root = root.resolve()
        path = (root / ref).resolve() if not Path(ref).is_absolute() else Path(ref).resolve()
        if not path.is_relative_to(root):
            raise NotFoundError(f"image for {sample_id!r} escapes the dataset root")
        if not path.is_file():
            raise NotFoundError(f"image file missing for {sample_id!r}")
        return path


def session_summary(managed: ManagedSession) -> dict[str, Any]:
    s = managed.session
    return {
        "session_id": s.session_id,
        "status": s.status,
        "iteration": len(s.history),
        "labeled_count": s.labeled_count,
        "pool_remaining": len(s.pool.unlabeled_ids),
        "latest_val_accuracy": s.history[-1].val_accuracy if s.history else None,
        "stop_requested": s.stop_requested,
        "class_names": list(s.manifest.class_names),
        "pending_count": 0 if s.pending_batch is None else len(s.pending_batch.sample_ids),
    }


class CreateSessionRequest(BaseModel):
    manifest_path: str
    config: dict[str, Any] = {}
    classifier: dict[str, Any] = {}
    model_seed: int = 0


class SubmitLabelsRequest(BaseModel):
    labels: dict[str, int]
    idempotency_key: str


def _parse_al_config(data: dict[str, Any]) -> al.ALConfig:
    data = dict(data)
    if data.get("stop_rule") is not None:
        data["stop_rule"] = al.StopRule(**data["stop_rule"])
    if "train_cfg" in data:
        data["train_cfg"] = TrainConfig(**data["train_cfg"])
    return al.ALConfig(**data)


def _parse_model_config(data: dict[str, Any]) -> ModelConfig:
    data = dict(data)
    if "head_widths" in data:
        data["head_widths"] = tuple(data["head_widths"])
    return ModelConfig(**data)


def create_app(session_store: Path | str, token: str | None = None,
               ui_dir: Path | str | None = None) -> FastAPI:
    """Build the FastAPI app over one session store directory."""
    manager = SessionManager(session_store)

    async def lifespan(app: FastAPI):
        manager.load_all()
        yield
        manager.save_all()

    app = FastAPI(title="defectlab annotation service", lifespan=lifespan)
    app.state.manager = manager
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"],
    )

    def check_token(x_auth_token: str | None = Header(default=None)) -> None:
        if token is not None and x_auth_token != token:
            raise HTTPException(status_code=401, detail="invalid or missing token")

    auth = [Depends(check_token)]

    @app.exception_handler(DefectLabError)
    async def _defectlab_error(_: Request, exc: DefectLabError):
        details: dict[str, Any] = {}
        if isinstance(exc, BatchMismatchError):
            details = {"missing": exc.missing, "extra": exc.extra}
        return JSONResponse(
            status_code=_http_status(exc),
            content={"error_code": type(exc).__name__, "message": str(exc),
                     "details": details},
        )

    @app.get("/api/v1/health")
    async def health():
        return {"status": "ok", "sessions": len(manager.sessions)}

    @app.get("/api/v1/sessions", dependencies=auth)
    async def list_sessions():
        return [session_summary(m) for m in manager.sessions.values()]

    @app.post("/api/v1/sessions", status_code=201, dependencies=auth)
    async def create_session(body: CreateSessionRequest):
        config = _parse_al_config(body.config)
        model_config = _parse_model_config(body.classifier)
        managed = manager.create_session(body.manifest_path, config, model_config,
                                         model_seed=body.model_seed)
        return session_summary(managed)

    @app.get("/api/v1/sessions/{session_id}", dependencies=auth)
    async def get_session(session_id: str):
        return session_summary(manager.get(session_id))

    @app.get("/api/v1/sessions/{session_id}/pending", dependencies=auth)
    async def get_pending(session_id: str):
        managed = manager.get(session_id)
        s = managed.session
        if s.status != "awaiting_labels" or s.pending_batch is None:
            return {"status": s.status, "iteration": len(s.history), "items": [],
                    "class_names": list(s.manifest.class_names)}
        batch = s.pending_batch
        return {
            "status": s.status,
            "iteration": batch.iteration,
            "class_names": list(s.manifest.class_names),
            "items": [
                {"sample_id": sid, "image_url": f"/images/{sid}", "score": score}
                for sid, score in zip(batch.sample_ids, batch.scores)
            ],
        }

    @app.post("/api/v1/sessions/{session_id}/labels", dependencies=auth)
    async def post_labels(session_id: str, body: SubmitLabelsRequest):
        managed = manager.get(session_id)
        with managed.lock:
            session = managed.session
            idem = session.service_meta.setdefault("idempotency", {})
            if body.idempotency_key in idem:
                return idem[body.idempotency_key]
            al.submit_labels(session, body.labels, annotator_kind="human")
            response = {
                "status": session.status,
                "iteration": len(session.history),
                "labeled_count": session.labeled_count,
            }
            idem[body.idempotency_key] = response
            al.save_session(session, manager.store_dir / session.session_id)
        manager.schedule_step(managed)
        return response

    @app.get("/api/v1/sessions/{session_id}/history", dependencies=auth)
    async def get_history(session_id: str):
        managed = manager.get(session_id)
        return [
            {"iteration": r.iteration, "val_accuracy": r.val_accuracy,
             "labeled_count": r.labeled_count, "timestamp": r.timestamp}
            for r in managed.session.history
        ]

    @app.post("/api/v1/sessions/{session_id}/stop", dependencies=auth)
    async def post_stop(session_id: str):
        managed = manager.get(session_id)
        with managed.lock:
            al.request_stop(managed.session)
        return session_summary(managed)

    @app.get("/images/{sample_id:path}", dependencies=auth)
    async def get_image(sample_id: str):
        path = manager.resolve_image(sample_id)
        media_type = mimetypes.guess_type(path.name)[0] or "application/octet-stream"
        return FileResponse(path, media_type=media_type)

    if ui_dir is not None and Path(ui_dir).is_dir():
        app.mount("/ui", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app


def _bound_socket(host: str, port: int) -> socket.socket:
    sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    try:
        sock.bind((host, port))
    except OSError as e:
        sock.close()
        raise BindError(f"cannot bind {host}:{port}: {e}") from e
    sock.listen(128)
    return sock


def serve(session_store: Path | str, bind: str = "127.0.0.1:8077",
          token: str | None = None, ui_dir: Path | str | None = None,
          until_terminal: str | None = None, log=print) -> None:
    """Run the service; optionally exit once a given session reaches a
    terminal status (used by the CLI's serve-until-done mode)."""
    import uvicorn

    host, _, port_s = bind.partition(":")
    port = int(port_s or "8077")
    sock = _bound_socket(host or "127.0.0.1", port)
    app = create_app(session_store, token=token, ui_dir=ui_dir)
    config = uvicorn.Config(app, log_level="warning")
    server = uvicorn.Server(config)

    if until_terminal is not None:
        def _watch() -> None:
            manager: SessionManager = app.state.manager
            while True:
                time.sleep(0.5)
                managed = manager.sessions.get(until_terminal)
                if managed is not None and managed.session.terminal:
                    if log:
                        log(f"session {until_terminal} reached "
                            f"{managed.session.status}; shutting down")
                    server.should_exit = True
                    return
                if server.should_exit:
                    return

        threading.Thread(target=_watch, daemon=True).start()

    if log:
        log(f"serving on http://{host}:{port} (store: {session_store})")
    try:
        server.run(sockets=[sock])
    finally:
        sock.close()
