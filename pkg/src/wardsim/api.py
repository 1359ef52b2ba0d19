"""HTTP service exposing simulation, prediction, and inspection.

The wire format is JSON with tabular timelines embedded as row arrays
(column list + rows), matching the delimited file schema.  Responses are
pure functions of (checkpoint, request, seed); nothing is written to disk,
so an abandoned request leaves no partial artifacts.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from fastapi import Depends, FastAPI, Header, HTTPException
from pydantic import BaseModel, Field

from . import __version__
from .decoding import DecodeEngine, GenerationConfig
from .errors import (
    CodecError,
    TimelineStructureError,
    TokenizationError,
    UnknownCodeError,
    WardsimError,
)
from .manifest import RunManifest, hash_content
from .montecarlo import EventSpec, binomial_interval, detect_event, load_event_specs, walk_entries
from .numcodec import load_percentile_tables
from .records import COLUMNS, TabularRecord
from .timeline import PatientTimeline, build_timeline, to_tabular, validate_timeline
from .training import load_checkpoint
from .vocab import GROUP_NUMERIC, load_vocabulary


@dataclass
class ServiceBundle:
    engine: DecodeEngine
    events: list[EventSpec]
    vocab_hash: str
    checkpoint_id: str
    config_hash: str

    @classmethod
    def load(cls, model_dir: str | Path) -> "ServiceBundle":
        model_dir = Path(model_dir)
        vocab = load_vocabulary(model_dir / "vocab.tsv")
        ptable = load_percentile_tables(model_dir / "percentiles.tsv")
        model = load_checkpoint(model_dir / "checkpoint.pt", expected_vocab_hash=vocab.content_hash())
        events_path = model_dir / "events.json"
        events = load_event_specs(events_path) if events_path.exists() else []
        return cls(
            engine=DecodeEngine(model, vocab, ptable),
            events=events,
            vocab_hash=vocab.content_hash(),
            checkpoint_id=str(model_dir / "checkpoint.pt"),
            config_hash=hash_content(model.config.to_dict()),
        )


class TimelinePayload(BaseModel):
    columns: list[str] = Field(default_factory=lambda: list(COLUMNS))
    rows: list[list[str | None]]

    def to_records(self) -> list[TabularRecord]:
        records = []
        for row in self.rows:
            data = dict(zip(self.columns, row))
            records.append(
                TabularRecord(
                    patient_id=data.get("patient_id") or "",
                    record_type=data.get("record_type") or "",
                    timestamp=data.get("timestamp") or None,
                    age=data.get("age") or None,
                    code=data.get("code") or None,
                    value=data.get("value") or None,
                    unit=data.get("unit") or None,
                    provisional=(data.get("provisional") or "") in ("1", "true", "True"),
                    disposition=data.get("disposition") or None,
                    reported=data.get("reported") or None,
                )
            )
        return records

    @classmethod
    def from_timeline(cls, timeline: PatientTimeline) -> "TimelinePayload":
        rows = []
        for r in to_tabular(timeline):
            rows.append(
                [
                    r.patient_id,
                    r.record_type,
                    r.timestamp,
                    r.age,
                    r.code,
                    r.value,
                    r.unit,
                    "1" if r.provisional else "0",
                    r.disposition,
                    r.reported,
                ]
            )
        return cls(columns=list(COLUMNS), rows=rows)


class SimulateRequest(BaseModel):
    prompt: TimelinePayload
    horizon_days: float = 7.0
    n_sim: int = Field(default=256, ge=1)
    seed: int = 0
    summary: bool = False
    max_steps: int = 7000


class PredictRequest(BaseModel):
    prompt: TimelinePayload
    events: list[str] = Field(default_factory=list)  # names; empty = all configured
    horizon_days: float = 7.0
    n_sim: int = Field(default=256, ge=1)
    seed: int = 0
    max_steps: int = 7000


class InspectRequest(BaseModel):
    prompt: TimelinePayload
    top_k: int = Field(default=10, ge=1, le=100)


def create_app(bundle: ServiceBundle | None = None, api_token: str | None = None) -> FastAPI:
    app = FastAPI(title="wardsim", version=__version__)
    app.state.bundle = bundle
    token = api_token if api_token is not None else os.environ.get("WARDSIM_API_TOKEN")

    def auth(authorization: str | None = Header(default=None)):
        if token and authorization != f"Bearer {token}":
            raise HTTPException(status_code=401, detail={"error": "unauthorized"})

    def require_bundle() -> ServiceBundle:
        if app.state.bundle is None:
            raise HTTPException(status_code=503, detail={"error": "model_not_loaded"})
        return app.state.bundle

    def parse_prompt(payload: TimelinePayload) -> PatientTimeline:
        try:
            timeline = build_timeline(payload.to_records())
        except TimelineStructureError as exc:
            raise HTTPException(
                status_code=400, detail={"error": "invalid_timeline", "rule": exc.rule, "detail": exc.detail}
            )
        except (WardsimError, ValueError) as exc:
            raise HTTPException(status_code=400, detail={"error": "invalid_timeline", "detail": str(exc)})
        violations = validate_timeline(timeline)
        if violations:
            raise HTTPException(
                status_code=400, detail={"error": "invalid_timeline", "rule": violations[0], "rules": violations}
            )
        return timeline

    def run_manifest(bundle: ServiceBundle, command: str, seed: int, counts: dict) -> dict:
        manifest = RunManifest.start(
            command,
            seed=seed,
            vocab_hash=bundle.vocab_hash,
            config_hash=bundle.config_hash,
            checkpoint_id=bundle.checkpoint_id,
        )
        manifest.counts = counts
        return manifest.finish().to_dict()

    def simulate(bundle: ServiceBundle, request: SimulateRequest):
        prompt = parse_prompt(request.prompt)
        config = GenerationConfig(
            horizon_minutes=int(request.horizon_days * 1440),
            n_sim=request.n_sim,
            seed=request.seed,
            max_steps=request.max_steps,
            workers=int(os.environ.get("WARDSIM_WORKERS", "1")),
        )
        try:
            return prompt, bundle.engine.simulate_many(prompt, config)
        except UnknownCodeError as exc:
            raise HTTPException(status_code=422, detail={"error": "unknown_code", "code": exc.code})
        except (TokenizationError, CodecError) as exc:
            raise HTTPException(status_code=422, detail={"error": "tokenization", "detail": str(exc)})

    @app.get("/healthz")
    def healthz():
        return {"status": "ok", "model_loaded": app.state.bundle is not None, "version": __version__}

    @app.get("/v1/vocab")
    def vocab_info(full: bool = False, _=Depends(auth)):
        bundle = require_bundle()
        vocab = bundle.engine.vocab
        out = {
            "size": len(vocab),
            "groups": vocab.group_sizes(),
            "n_subtokens": vocab.n_subtokens,
            "hash": bundle.vocab_hash,
        }
        if full:
            out["tokens"] = [
                {"id": t.id, "group": t.group, "name": t.name} for t in vocab.tokens
            ]
        return out

    @app.get("/v1/manifest")
    def service_manifest(_=Depends(auth)):
        bundle = require_bundle()
        return {
            "vocab_hash": bundle.vocab_hash,
            "config_hash": bundle.config_hash,
            "checkpoint_id": bundle.checkpoint_id,
            "events": [e.name for e in bundle.events],
            "version": __version__,
        }

    @app.post("/v1/simulate")
    def simulate_endpoint(request: SimulateRequest, _=Depends(auth)):
        bundle = require_bundle()
        prompt, result = simulate(bundle, request)
        counts = {
            "n_sim": request.n_sim,
            "truncated": result.n_truncated,
            "mean_generated_entries": float(
                np.mean([len(t.generated) for t in result.timelines])
            ),
        }
        manifest = run_manifest(bundle, "simulate", request.seed, counts)
        if request.summary:
            horizon = int(request.horizon_days * 1440)
            event_counts = {}
            for spec in bundle.events:
                hits = 0
                for gen in result.timelines:
                    timed = walk_entries(gen.generated, start_minutes=result.cut_minutes)
                    hits += detect_event(timed, spec, horizon, result.cut_minutes)
                event_counts[spec.name] = hits
            return {"summary": {"events": event_counts, **counts}, "manifest": manifest}
        timelines = [TimelinePayload.from_timeline(t.full_timeline()).model_dump() for t in result.timelines]
        return {"timelines": timelines, "manifest": manifest}

    @app.post("/v1/predict")
    def predict_endpoint(request: PredictRequest, _=Depends(auth)):
        bundle = require_bundle()
        by_name = {e.name: e for e in bundle.events}
        chosen = request.events or list(by_name)
        missing = [name for name in chosen if name not in by_name]
        if missing:
            raise HTTPException(status_code=400, detail={"error": "unknown_events", "events": missing})
        prompt, result = simulate(bundle, SimulateRequest(**request.model_dump(exclude={"events"})))
        horizon = int(request.horizon_days * 1440)
        estimates = {}
        for name in chosen:
            spec = by_name[name]
            hits = 0
            for gen in result.timelines:
                timed = walk_entries(gen.generated, start_minutes=result.cut_minutes)
                hits += detect_event(timed, spec, horizon, result.cut_minutes)
            lo, hi = binomial_interval(hits, len(result.timelines))
            estimates[name] = {
                "p_hat": hits / len(result.timelines),
                "ci95": [lo, hi],
                "n_event": hits,
                "n_sim": len(result.timelines),
            }
        manifest = run_manifest(
            bundle, "predict", request.seed, {"n_sim": request.n_sim, "truncated": result.n_truncated}
        )
        return {"estimates": estimates, "manifest": manifest}

    @app.post("/v1/inspect")
    def inspect_endpoint(request: InspectRequest, _=Depends(auth)):
        bundle = require_bundle()
        prompt = parse_prompt(request.prompt)
        try:
            out = bundle.engine.inspect(prompt)
        except UnknownCodeError as exc:
            raise HTTPException(status_code=422, detail={"error": "unknown_code", "code": exc.code})
        vocab = bundle.engine.vocab
        probs = out["probabilities"]
        order = np.argsort(-probs)[: request.top_k]
        top = [
            {"token": vocab.tokens[int(i)].name, "id": int(i), "prob": float(probs[i])}
            for i in order
            if probs[i] > 0
        ]
        numeric = None
        if out["pending_lab"] is not None and bundle.engine.ptable.has_code(out["pending_lab"]):
            rng = vocab.group_range[GROUP_NUMERIC]
            bin_probs = probs[rng.start : rng.stop]
            values = [
                bundle.engine.ptable.decode_bin(b, out["pending_lab"])[0]
                for b in range(1, vocab.n_bins + 1)
            ]
            unit = bundle.engine.ptable.canonical_unit[out["pending_lab"]]
            numeric = {
                "lab_code": out["pending_lab"],
                "unit": unit,
                "values": values,
                "probabilities": [float(p) for p in bin_probs],
                "mass": float(bin_probs.sum()),
            }
        manifest = run_manifest(bundle, "inspect", 0, {"prompt_entries": len(prompt.entries)})
        return {
            "top_k": top,
            "numeric_bins": numeric,
            "attention": [float(a) for a in out["attention"]],
            "admitted": out["admitted"],
            "manifest": manifest,
        }

    return app
