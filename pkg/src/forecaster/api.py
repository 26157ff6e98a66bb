"""REST service tying the platform together (FastAPI, /api/v1).

Static bearer tokens (user and worker) come from the metadata store's
users table.  Datasets and jobs are visible only to their owner; probing
another user's ids yields 404, never 403, so ids do not leak existence.
Workers claim jobs and post progress through dedicated token-gated
endpoints and never touch the metadata store directly.
"""

from __future__ import annotations

import json
from typing import Optional

from fastapi import Depends, FastAPI, File, Request, UploadFile
from fastapi.responses import JSONResponse, Response
from fastapi.security.utils import get_authorization_scheme_param
from pydantic import BaseModel

from . import ingest, llm as llm_mod
from .errors import (
    CovariateSchemaMismatch,
    DatasetNotFound,
    DuplicateName,
    ForecasterError,
    ModelArtifactMissing,
    StoreError,
    TooLarge,
    UnknownJob,
)
from .ingest import parse_csv
from .metastore import MetadataStore
from .pipeline import run_training_job  # noqa: F401 (re-export for embedders)
from .queue import enqueue
from .series import build_bundle
from .storage import ObjectStore

HTTP_STATUS_BY_CODE = {
    "too_large": 413,
    "duplicate_name": 409,
    "dataset_not_found": 404,
    "unknown_job": 404,
    "model_artifact_missing": 404,
    "store_error": 500,
}


class RolesBody(BaseModel):
    roles: dict[str, str]


class JobBody(BaseModel):
    dataset_id: str
    params: dict


class ForecastBody(BaseModel):
    models: list[str]
    horizon: int
    covariates_csv: Optional[str] = None


class RecommendBody(BaseModel):
    selected_models: list[str] = []


class ProgressBody(BaseModel):
    models_done: Optional[int] = None
    lines: Optional[list[str]] = None
    final_state: Optional[str] = None
    error: Optional[str] = None


class ClaimBody(BaseModel):
    worker_id: str
    staleness_sec: float = 3600.0


def create_app(meta: MetadataStore, store: ObjectStore,
               llm_client: llm_mod.LlmClient | None = None) -> FastAPI:
    app = FastAPI(title="forecaster", version="0.1.0",
                  docs_url="/api/v1/docs", openapi_url="/api/v1/openapi.json")

    def authed(request: Request) -> tuple[str, bool]:
        auth = request.headers.get("authorization", "")
        scheme, token = get_authorization_scheme_param(auth)
        if scheme.lower() == "bearer" and token:
            found = meta.user_by_token(token)
            if found:
                return found
        raise _http_error(401, "unauthorized", "missing or invalid token")

    def require_user(request: Request) -> str:
        user_id, is_worker = authed(request)
        if is_worker:
            raise _http_error(403, "forbidden", "worker tokens cannot act as users")
        return user_id

    def require_worker(request: Request) -> str:
        worker_id, is_worker = authed(request)
        if not is_worker:
            raise _http_error(403, "forbidden", "endpoint requires a worker token")
        return worker_id

    @app.exception_handler(ForecasterError)
    async def domain_error(request: Request, exc: ForecasterError):
        status = HTTP_STATUS_BY_CODE.get(exc.code, 400)
        body = {"code": exc.code, "message": str(exc)}
        if exc.field:
            body["field"] = exc.field
        return JSONResponse(status_code=status, content=body)

    def _owned_dataset(dataset_id: str, user_id: str) -> dict:
        record = meta.get_dataset(dataset_id)
        if record is None or record["owner_id"] != user_id:
            raise DatasetNotFound(dataset_id)
        return record

    def _owned_job(job_id: str, user_id: str) -> dict:
        job = meta.get_job(job_id)
        if job is None or job["owner_id"] != user_id:
            raise UnknownJob(job_id)
        return job

    def _dataset_json(record: dict) -> dict:
        return {
            "dataset_id": record["dataset_id"],
            "filename": record["filename"],
            "uploaded_at": record["uploaded_at"],
            "byte_size": record["byte_size"],
            "row_count": record["row_count"],
            "columns": record["columns"],
            "roles": record["roles"],
        }

    def _job_json(job: dict) -> dict:
        return {
            "job_id": job["job_id"],
            "kind": job["kind"],
            "dataset_id": job["dataset_id"],
            "state": job["state"],
            "models_done": job["models_done"],
            "models_total": job["models_total"],
            "created_at": job["created_at"],
            "started_at": job["started_at"],
            "finished_at": job["finished_at"],
            "error": job["error"],
            "params": job["params"],
        }

    # --- datasets ---------------------------------------------------------

    @app.post("/api/v1/datasets", status_code=201)
    async def upload_dataset(file: UploadFile = File(...),
                             user_id: str = Depends(require_user)):
        raw = await file.read()
        record = ingest.validate_and_register(raw, user_id,
                                              file.filename or "", meta, store)
        return _dataset_json(record)

    @app.get("/api/v1/datasets")
    def list_datasets(user_id: str = Depends(require_user)):
        out = []
        for record in meta.list_datasets(user_id):
            entry = _dataset_json(record)
            jobs = meta.list_jobs(owner_id=user_id,
                                  dataset_id=record["dataset_id"])
            if jobs:
                latest = jobs[0]
                entry["latest_job"] = {
                    "job_id": latest["job_id"],
                    "state": latest["state"],
                    "models_done": latest["models_done"],
                    "models_total": latest["models_total"],
                }
            out.append(entry)
        return out

    @app.get("/api/v1/datasets/{dataset_id}")
    def get_dataset(dataset_id: str, user_id: str = Depends(require_user)):
        return _dataset_json(_owned_dataset(dataset_id, user_id))

    @app.post("/api/v1/datasets/{dataset_id}/roles")
    def set_roles(dataset_id: str, body: RolesBody,
                  user_id: str = Depends(require_user)):
        _owned_dataset(dataset_id, user_id)
        validated = ingest.assign_roles(dataset_id, body.roles, meta, store)
        return {"roles": validated}

    @app.get("/api/v1/datasets/{dataset_id}/plot")
    def plot(dataset_id: str, request: Request, x: str,
             user_id: str = Depends(require_user)):
        record = _owned_dataset(dataset_id, user_id)
        y = request.query_params.getlist("y")
        raw = store.get(f"{record['owner_id']}/{record['filename']}")
        data = ingest.plot_data(record, parse_csv(raw), x, y)
        return data.to_json()

    @app.post("/api/v1/datasets/{dataset_id}/recommendations")
    def recommendations(dataset_id: str, body: RecommendBody,
                        user_id: str = Depends(require_user)):
        record = _owned_dataset(dataset_id, user_id)
        roles = record.get("roles")
        if not roles:
            raise ForecasterError("assign column roles first")
        raw = store.get(f"{record['owner_id']}/{record['filename']}")
        bundle = build_bundle(record, parse_csv(raw), roles)
        stats = llm_mod.summarize_dataset(bundle)
        rec = llm_mod.recommend_parameters(stats, body.selected_models,
                                           llm_client)
        return rec.to_json()

    # --- jobs ---------------------------------------------------------------

    @app.post("/api/v1/jobs", status_code=202)
    def submit_job(body: JobBody, user_id: str = Depends(require_user)):
        _owned_dataset(body.dataset_id, user_id)
        job_id = enqueue(meta, store, "train", body.dataset_id, user_id,
                         body.params)
        return {"job_id": job_id, "state": "queued"}

    @app.get("/api/v1/jobs")
    def list_jobs(user_id: str = Depends(require_user)):
        return [_job_json(j) for j in meta.list_jobs(owner_id=user_id)]

    @app.get("/api/v1/jobs/{job_id}")
    def get_job(job_id: str, user_id: str = Depends(require_user)):
        return _job_json(_owned_job(job_id, user_id))

    def _results_or_409(job: dict):
        if job["state"] != "completed":
            return JSONResponse(status_code=409, content={
                "code": "not_completed",
                "message": f"job is {job['state']}",
                "models_done": job["models_done"],
                "models_total": job["models_total"],
            })
        return None

    @app.get("/api/v1/jobs/{job_id}/results")
    def job_results(job_id: str, user_id: str = Depends(require_user)):
        job = _owned_job(job_id, user_id)
        not_ready = _results_or_409(job)
        if not_ready:
            return not_ready
        return json.loads(store.get(f"{job_id}/results.json"))

    @app.get("/api/v1/jobs/{job_id}/log")
    def job_log(job_id: str, user_id: str = Depends(require_user)):
        _owned_job(job_id, user_id)
        return {"log": meta.get_log(job_id)}

    @app.get("/api/v1/jobs/{job_id}/download")
    def download_results(job_id: str, user_id: str = Depends(require_user)):
        job = _owned_job(job_id, user_id)
        not_ready = _results_or_409(job)
        if not_ready:
            return not_ready
        blob = store.get(f"{job_id}/results.json")
        return Response(content=blob, media_type="application/json",
                        headers={"content-disposition":
                                 f'attachment; filename="{job_id}-results.json"'})

    @app.post("/api/v1/jobs/{job_id}/forecast", status_code=202)
    def launch_forecast(job_id: str, body: ForecastBody,
                        user_id: str = Depends(require_user)):
        source = _owned_job(job_id, user_id)
        params = {"source_job_id": job_id, "models": body.models,
                  "horizon": body.horizon}
        if body.covariates_csv:
            key = f"{job_id}/forecast-inputs/{len(store.list_keys(f'{job_id}/forecast-inputs/')) + 1}.csv"
            store.put(key, body.covariates_csv.encode())
            params["covariates_key"] = key
        new_id = enqueue(meta, store, "forecast", source["dataset_id"],
                         user_id, params)
        return {"job_id": new_id, "state": "queued"}

    @app.post("/api/v1/jobs/{job_id}/summary")
    def summarize(job_id: str, user_id: str = Depends(require_user)):
        job = _owned_job(job_id, user_id)
        not_ready = _results_or_409(job)
        if not_ready:
            return not_ready
        artifact = json.loads(store.get(f"{job_id}/results.json"))
        text, source = llm_mod.summarize_results(artifact, llm_client)
        return {"text": text, "source": source}

    # --- worker callbacks ---------------------------------------------------

    @app.post("/api/v1/jobs/{job_id}/progress")
    def worker_progress(job_id: str, body: ProgressBody,
                        worker_id: str = Depends(require_worker)):
        status = meta.post_progress(job_id, models_done=body.models_done,
                                    lines=body.lines,
                                    final_state=body.final_state,
                                    error=body.error)
        return {"status": status}

    @app.post("/api/v1/worker/claim")
    def worker_claim(body: ClaimBody,
                     worker_id: str = Depends(require_worker)):
        job = meta.claim_next(body.worker_id, body.staleness_sec)
        if job is None:
            return {"job": None}
        record = meta.get_dataset(job["dataset_id"])
        return {"job": _job_json(job), "dataset": record}

    return app


def _http_error(status: int, code: str, message: str):
    from fastapi import HTTPException
    return HTTPException(status_code=status,
                         detail={"code": code, "message": message})
