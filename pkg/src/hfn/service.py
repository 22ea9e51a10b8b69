"""Session-based HTTP inference service for the interactive click loop."""

from __future__ import annotations

import base64
import io
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException, Request, Response
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from PIL import Image, UnidentifiedImageError

from .hintmaps import ClickSet
from .network import HFN, load_checkpoint, predict_mask
from .training import preprocess

DEFAULT_TTL_MINUTES = 30.0


@dataclass
class Session:
    id: str
    image: np.ndarray
    # (row, col, label, produced_mask)
    clicks: list[tuple[int, int, str, bool]] = field(default_factory=list)
    mask_history: list[np.ndarray] = field(default_factory=list)
    created_at: float = field(default_factory=time.time)
    last_used: float = field(default_factory=time.time)
    lock: threading.Lock = field(default_factory=threading.Lock)

    def clickset(self) -> ClickSet:
        return ClickSet(
            foreground=[(r, c) for r, c, lbl, _ in self.clicks if lbl == "fg"],
            background=[(r, c) for r, c, lbl, _ in self.clicks if lbl == "bg"],
        )


def _mask_to_b64_png(mask: np.ndarray) -> str:
    buf = io.BytesIO()
    Image.fromarray((mask * 255).astype(np.uint8)).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


class SessionStore:
    def __init__(self, ttl_minutes: float = DEFAULT_TTL_MINUTES):
        self._sessions: dict[str, Session] = {}
        self._lock = threading.Lock()
        self.ttl_seconds = ttl_minutes * 60

    def create(self, image: np.ndarray) -> Session:
        session = Session(id=uuid.uuid4().hex, image=image)
        with self._lock:
            self._evict()
            self._sessions[session.id] = session
        return session

    def get(self, session_id: str) -> Session:
        with self._lock:
            self._evict()
            session = self._sessions.get(session_id)
        if session is None:
            raise HTTPException(status_code=404, detail="unknown session")
        session.last_used = time.time()
        return session

    def delete(self, session_id: str) -> None:
        with self._lock:
            if session_id not in self._sessions:
                raise HTTPException(status_code=404, detail="unknown session")
            del self._sessions[session_id]

    def _evict(self) -> None:
        now = time.time()
        stale = [sid for sid, s in self._sessions.items()
                 if now - s.last_used > self.ttl_seconds]
        for sid in stale:
            del self._sessions[sid]


def _segment_response(model: HFN, session: Session, recompute: bool = True) -> dict:
    cs = session.clickset()
    base = {"session_id": session.id, "n_fg": len(cs.foreground), "n_bg": len(cs.background)}
    if not cs.foreground or not cs.background:
        side = "foreground" if not cs.foreground else "background"
        return {**base, "mask_png_b64": None, "status": f"awaiting {side} click"}
    if recompute:
        prob, mask = predict_mask(model, session.image, cs)
        session.mask_history.append(mask)
        base["foreground_fraction"] = float(mask.mean())
        base["mean_foreground_probability"] = float(prob.mean())
    mask = session.mask_history[-1]
    return {**base, "mask_png_b64": _mask_to_b64_png(mask), "status": "ok",
            "height": int(mask.shape[0]), "width": int(mask.shape[1])}


def create_app(checkpoint_path: str | Path, ttl_minutes: float = DEFAULT_TTL_MINUTES,
               frontend_dir: str | Path | None = None) -> FastAPI:
    model, _ = load_checkpoint(checkpoint_path)
    store = SessionStore(ttl_minutes=ttl_minutes)
    app = FastAPI(title="hfn interactive segmentation")
    app.state.store = store
    app.state.model = model
    app.state.checkpoint_path = Path(checkpoint_path)

    @app.get("/healthz")
    def healthz():
        return {"status": "ok", "checkpoint": str(checkpoint_path)}

    @app.post("/api/v1/sessions")
    async def create_session(request: Request):
        form = await request.form()
        upload = form.get("image")
        if upload is None:
            raise HTTPException(status_code=400, detail="missing 'image' file field")
        raw = await upload.read()
        try:
            image = np.asarray(Image.open(io.BytesIO(raw)).convert("RGB"))
        except (UnidentifiedImageError, OSError) as exc:
            raise HTTPException(status_code=400, detail=f"undecodable image: {exc}")
        image, _ = preprocess(image, np.zeros(image.shape[:2], dtype=np.uint8))
        session = store.create(image)
        return {"session_id": session.id,
                "height": int(image.shape[0]), "width": int(image.shape[1])}

    @app.post("/api/v1/sessions/{session_id}/clicks")
    async def add_click(session_id: str, body: dict):
        session = store.get(session_id)
        with session.lock:
            try:
                row, col = int(body["row"]), int(body["col"])
                label = body["label"]
            except (KeyError, TypeError, ValueError):
                raise HTTPException(status_code=400, detail="body needs row, col, label")
            if label not in ("fg", "bg"):
                raise HTTPException(status_code=400, detail="label must be 'fg' or 'bg'")
            h, w = session.image.shape[:2]
            if not (0 <= row < h and 0 <= col < w):
                raise HTTPException(status_code=400,
                                    detail=f"click ({row}, {col}) outside {h}x{w} image")
            if any((r, c) == (row, col) for r, c, _, _ in session.clicks):
                raise HTTPException(status_code=409, detail="duplicate click coordinate")
            session.clicks.append((row, col, label, False))
            response = _segment_response(app.state.model, session)
            if response["status"] == "ok":
                session.clicks[-1] = (row, col, label, True)
            return response

    @app.post("/api/v1/sessions/{session_id}/undo")
    def undo(session_id: str):
        session = store.get(session_id)
        with session.lock:
            if not session.clicks:
                raise HTTPException(status_code=409, detail="no clicks to undo")
            _, _, _, produced_mask = session.clicks.pop()
            if produced_mask and session.mask_history:
                session.mask_history.pop()
            # Earlier prefixes with both sides populated always left a mask in
            # the history, so no recomputation is needed.
            return _segment_response(app.state.model, session, recompute=False)

    @app.get("/api/v1/sessions/{session_id}")
    def get_state(session_id: str):
        session = store.get(session_id)
        cs = session.clickset()
        latest = _mask_to_b64_png(session.mask_history[-1]) if session.mask_history else None
        return {
            "session_id": session.id,
            "height": int(session.image.shape[0]),
            "width": int(session.image.shape[1]),
            "clicks": [{"row": r, "col": c, "label": lbl} for r, c, lbl, _ in session.clicks],
            "n_fg": len(cs.foreground),
            "n_bg": len(cs.background),
            "mask_png_b64": latest,
            "created_at": session.created_at,
        }

    @app.delete("/api/v1/sessions/{session_id}")
    def delete_session(session_id: str):
        store.delete(session_id)
        return Response(status_code=204)

    if frontend_dir and Path(frontend_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(frontend_dir), html=True), name="ui")

    return app
