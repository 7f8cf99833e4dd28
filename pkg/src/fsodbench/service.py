"""HTTP evaluation service with a persisted leaderboard.

Endpoints:
    POST /v1/evaluate     {"team": str, "predictions": [COCO results records]}
    GET  /v1/leaderboard  entries sorted by All-AP, best first

Only aggregate cohort scores are returned; test annotations never leave the
server.
"""

from __future__ import annotations

import json
from dataclasses import asdict
from typing import Optional

from fastapi import FastAPI, Request
from fastapi.concurrency import run_in_threadpool
from fastapi.responses import JSONResponse

from .dataset import Dataset
from .errors import ValidationError
from .evaluation import EvalConfig, detections_from_records, evaluate
from .leaderboard import LeaderboardStore, predictions_digest

TOKEN_HEADER = "x-fsodbench-token"


def create_app(
    dataset: Dataset,
    store: LeaderboardStore,
    cfg: Optional[EvalConfig] = None,
    restrict=None,
    max_body_bytes: int = 64 * 1024 * 1024,
    token: Optional[str] = None,
) -> FastAPI:
    cfg = cfg or EvalConfig()
    restrict = set(restrict) if restrict is not None else None
    app = FastAPI(title="fsodbench evaluation server")

    def unauthorized(request: Request) -> bool:
        return token is not None and request.headers.get(TOKEN_HEADER) != token

    @app.post("/v1/evaluate")
    async def submit(request: Request):
        if unauthorized(request):
            return JSONResponse({"error": "missing or bad token"}, status_code=401)
        declared = request.headers.get("content-length")
        if declared is not None and declared.isdigit() and int(declared) > max_body_bytes:
            return JSONResponse({"error": "payload too large"}, status_code=413)
        body = await request.body()
        if len(body) > max_body_bytes:
            return JSONResponse({"error": "payload too large"}, status_code=413)
        try:
            payload = json.loads(body)
        except (json.JSONDecodeError, UnicodeDecodeError) as e:
            return JSONResponse({"error": f"body is not valid JSON: {e}"}, status_code=400)
        if not isinstance(payload, dict):
            return JSONResponse({"error": "body must be a JSON object"}, status_code=400)
        team = payload.get("team")
        records = payload.get("predictions")
        if not isinstance(team, str) or not team.strip():
            return JSONResponse({"error": "'team' must be a non-empty string"}, status_code=400)
        try:
            preds = detections_from_records(records)
            result = await run_in_threadpool(evaluate, dataset, preds, cfg, restrict)
        except ValidationError as e:
            return JSONResponse(
                {"error": str(e), "offenders": e.offenders[:50]}, status_code=400
            )
        entry = await run_in_threadpool(
            store.append, team, result.cohort_ap, predictions_digest(records)
        )
        return {"result": result.to_dict(), "entry": asdict(entry)}

    @app.get("/v1/leaderboard")
    def leaderboard():
        return [asdict(e) for e in store.ranked()]

    return app
