"""HTTP service: batch analysis endpoints plus live sessions for monitoring a running experiment.

Run with ``uvicorn bellstat.service.app:app`` or ``bellstat serve``.
"""

from __future__ import annotations

from fastapi import FastAPI, HTTPException, Request
from fastapi.responses import JSONResponse

from .. import __version__
from . import handlers, schemas as s

app = FastAPI(title="bellstat", version=__version__)
store = handlers.SessionStore()


@app.exception_handler(handlers.InputError)
async def _input_error(request: Request, exc: handlers.InputError):
    body = s.ErrorDetail(kind="validation", message=str(exc), violations=exc.violations)
    return JSONResponse(status_code=422, content={"detail": body.model_dump()})


@app.exception_handler(handlers.ConvergenceError)
async def _convergence_error(request: Request, exc: handlers.ConvergenceError):
    body = s.ErrorDetail(kind="nonconvergence", message=str(exc))
    return JSONResponse(status_code=500, content={"detail": body.model_dump()})


@app.get("/health")
def health():
    return {"status": "ok", "version": __version__}


@app.post("/simulate", response_model=s.SimulateResponse)
def simulate(req: s.SimulateRequest):
    return handlers.simulate(req)


@app.post("/analyze", response_model=s.AnalyzeResponse)
def analyze(req: s.AnalyzeRequest):
    return handlers.analyze(req)


@app.post("/strength", response_model=s.StrengthResponse)
def strength(req: s.StrengthRequest):
    return handlers.strength(req)


@app.post("/gains", response_model=s.GainsResponse)
def gains(req: s.GainsRequest):
    return handlers.gains(req)


@app.post("/sessions", response_model=s.SessionStatus, status_code=201)
def create_session(req: s.SessionCreate):
    return store.create(req).status()


def _session(sid: str) -> handlers.Session:
    sess = store.get(sid)
    if sess is None:
        raise HTTPException(status_code=404, detail=f"no session {sid}")
    return sess


@app.get("/sessions/{sid}", response_model=s.SessionStatus)
def session_status(sid: str):
    return _session(sid).status()


@app.post("/sessions/{sid}/trials", response_model=s.SessionStatus)
def session_add(sid: str, batch: s.TrialBatch):
    return _session(sid).add(batch)


@app.delete("/sessions/{sid}", status_code=204)
def session_delete(sid: str):
    if not store.delete(sid):
        raise HTTPException(status_code=404, detail=f"no session {sid}")
