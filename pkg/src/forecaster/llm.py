"""LLM-assisted parameter recommendations and results summaries.

Talks to any OpenAI-compatible chat-completions endpoint.  Prompts carry
only dataset summary statistics, never raw rows.  Responses may open with
a visible reasoning block (configurable markers, "<think>" by default)
which is stripped before the first balanced JSON object is extracted and
validated against the parameter registry.  Every failure path degrades to
deterministic heuristics, so both operations are total.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field

import httpx
import numpy as np

from .registry import (
    MODEL_KINDS,
    PARAM_REGISTRY,
    SEASONALITY_BY_FREQ,
    clamp_param,
)
from .series import SeriesBundle

logger = logging.getLogger(__name__)

DEFAULT_MARKERS = ("<think>", "</think>")
FALLBACK_EXPLANATION = "heuristic defaults (LLM unavailable)"


@dataclass
class LlmConfig:
    base_url: str = ""
    api_key: str = ""
    model: str = ""
    reasoning_markers: tuple[str, str] = DEFAULT_MARKERS
    timeout: float = 60.0

    @classmethod
    def from_env(cls) -> "LlmConfig":
        markers = os.environ.get("LLM_REASONING_MARKERS", "")
        pair = tuple(m.strip() for m in markers.split(",")) if markers else \
            DEFAULT_MARKERS
        if len(pair) != 2:
            pair = DEFAULT_MARKERS
        return cls(
            base_url=os.environ.get("LLM_API_BASE", ""),
            api_key=os.environ.get("LLM_API_KEY", ""),
            model=os.environ.get("LLM_MODEL", ""),
            reasoning_markers=pair,  # type: ignore[arg-type]
        )

    @property
    def configured(self) -> bool:
        return bool(self.base_url)


class LlmClient:
    """One-shot chat completions against an OpenAI-compatible endpoint."""

    def __init__(self, config: LlmConfig,
                 transport: httpx.BaseTransport | None = None):
        self.config = config
        self._client = httpx.Client(transport=transport,
                                    timeout=config.timeout)

    def complete(self, system: str, user: str) -> str:
        url = self.config.base_url.rstrip("/") + "/chat/completions"
        headers = {"content-type": "application/json"}
        if self.config.api_key:
            headers["authorization"] = f"Bearer {self.config.api_key}"
        payload = {
            "model": self.config.model or "default",
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
            "temperature": 0,
        }
        resp = self._client.post(url, json=payload, headers=headers)
        resp.raise_for_status()
        data = resp.json()
        return str(data["choices"][0]["message"]["content"])


@dataclass
class SummaryStats:
    n_observations: int
    n_groups: int
    freq_label: str
    freq_step: float
    components: dict[str, dict]  # name -> mean/std/min/max/proportion_of_zeros
    past_cov_names: list[str]
    future_cov_names: list[str]
    static_cov_names: list[str]
    group_lengths: dict[str, float]  # min/median/max

    def to_json(self) -> dict:
        return {
            "n_observations": self.n_observations,
            "n_groups": self.n_groups,
            "frequency": {"label": self.freq_label, "step": self.freq_step},
            "targets": self.components,
            "past_covariates": self.past_cov_names,
            "future_covariates": self.future_cov_names,
            "static_covariates": self.static_cov_names,
            "series_length": self.group_lengths,
        }


def summarize_dataset(bundle: SeriesBundle) -> SummaryStats:
    """Pool raw target values across groups; per-component distributions."""
    components = {}
    for ci, name in enumerate(bundle.component_names):
        pooled = np.concatenate([g.target[:, ci] for g in bundle.groups])
        components[name] = {
            "mean": float(pooled.mean()),
            "std": float(pooled.std()),
            "min": float(pooled.min()),
            "max": float(pooled.max()),
            "proportion_of_zeros": float(np.mean(pooled == 0.0)),
        }
    lengths = sorted(g.length for g in bundle.groups)
    return SummaryStats(
        n_observations=int(sum(lengths)),
        n_groups=len(bundle.groups),
        freq_label=bundle.freq.label,
        freq_step=bundle.freq.step,
        components=components,
        past_cov_names=list(bundle.past_cov_names),
        future_cov_names=list(bundle.future_cov_names),
        static_cov_names=list(bundle.static_cov_names),
        group_lengths={
            "min": float(lengths[0]),
            "median": float(lengths[len(lengths) // 2]),
            "max": float(lengths[-1]),
        },
    )


@dataclass
class Recommendation:
    params: dict
    recommended_models: list[str]
    explanation: str
    source: str  # "llm" | "fallback"
    clamped: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {"params": self.params,
                "recommended_models": self.recommended_models,
                "explanation": self.explanation, "source": self.source}


def strip_reasoning(text: str, markers: tuple[str, str]) -> str:
    """Remove marker-delimited reasoning blocks; tolerate a missing opener."""
    open_m, close_m = markers
    out = text
    while open_m in out and close_m in out:
        start = out.index(open_m)
        end = out.index(close_m, start)
        out = out[:start] + out[end + len(close_m):]
    if close_m in out:
        out = out.split(close_m, 1)[1]
    return out


def extract_json_object(text: str) -> dict | None:
    """First balanced top-level JSON object in free text, or None."""
    depth = 0
    start = None
    in_string = False
    escape = False
    for i, ch in enumerate(text):
        if in_string:
            if escape:
                escape = False
            elif ch == "\\":
                escape = True
            elif ch == '"':
                in_string = False
            continue
        if ch == '"':
            in_string = True
        elif ch == "{":
            if depth == 0:
                start = i
            depth += 1
        elif ch == "}":
            if depth:
                depth -= 1
                if depth == 0 and start is not None:
                    try:
                        obj = json.loads(text[start:i + 1])
                    except json.JSONDecodeError:
                        start = None
                        continue
                    if isinstance(obj, dict):
                        return obj
                    start = None
    return None


def _registry_prompt_lines() -> list[str]:
    lines = []
    for name, pdef in PARAM_REGISTRY.items():
        bounds = ""
        if pdef.min is not None or pdef.max is not None:
            bounds = f" (range {pdef.min}..{pdef.max})"
        lines.append(f"- {name}: {pdef.type.__name__}{bounds}; "
                     f"{pdef.description}; applies to {', '.join(pdef.kinds)}")
    return lines


RECOMMEND_SYSTEM = (
    "You help configure time-series forecasting jobs. Respond with exactly "
    "one JSON object whose keys are parameter names from the provided "
    "registry, plus \"recommended_models\" (subset of the model list) and "
    "\"explanation\" (one short paragraph). No other keys, no prose outside "
    "the JSON object."
)


def build_recommendation_prompt(stats: SummaryStats,
                                selected_models: list[str]) -> str:
    lines = [
        "Dataset summary statistics:",
        json.dumps(stats.to_json(), indent=1),
        "",
        "Candidate models: " + ", ".join(selected_models or list(MODEL_KINDS)),
        "",
        "Parameter registry:",
        *_registry_prompt_lines(),
        "",
        "Guidance: window and seasonality choices should follow the natural "
        "cycles of the data; hourly data suits 12 or 24 step windows, daily "
        "data suits increments of 7 or 30 for weekly or monthly periods.",
        "Recommend values for the parameters relevant to the candidate "
        "models, plus recommended_models and explanation.",
    ]
    return "\n".join(lines)


def heuristic_recommendation(stats: SummaryStats,
                             selected_models: list[str]) -> Recommendation:
    k = SEASONALITY_BY_FREQ.get(stats.freq_label, 1)
    params = {
        "seasonality": k,
        "input_chunk": max(2 * k, 2),
        "p": 2, "d": 1, "q": 1,
        "ridge_lambda": 1e-3,
        "n_trees": 100, "max_depth": 8, "min_leaf": 2,
        "n_samples": 100,
    }
    return Recommendation(
        params=params,
        recommended_models=selected_models or ["linear_lagged",
                                               "random_forest"],
        explanation=FALLBACK_EXPLANATION,
        source="fallback",
    )


def recommend_parameters(stats: SummaryStats, selected_models: list[str],
                         client: LlmClient | None) -> Recommendation:
    """One completion (one retry), parsed and clamped; heuristics on failure."""
    if client is None or not client.config.configured:
        return heuristic_recommendation(stats, selected_models)
    prompt = build_recommendation_prompt(stats, selected_models)
    for attempt in (1, 2):
        try:
            raw = client.complete(RECOMMEND_SYSTEM, prompt)
        except Exception as exc:  # noqa: BLE001 - total function contract
            logger.warning("LLM request failed (attempt %d): %s", attempt, exc)
            continue
        cleaned = strip_reasoning(raw, client.config.reasoning_markers)
        obj = extract_json_object(cleaned)
        if obj is None:
            logger.warning("LLM response had no JSON object (attempt %d)",
                           attempt)
            continue
        return _validate_recommendation(obj, selected_models)
    return heuristic_recommendation(stats, selected_models)


def _validate_recommendation(obj: dict,
                             selected_models: list[str]) -> Recommendation:
    params = {}
    clamped = []
    for key, value in obj.items():
        if key in ("recommended_models", "explanation"):
            continue
        if key not in PARAM_REGISTRY:
            clamped.append(key)
            logger.warning("LLM suggested unknown parameter %r, dropped", key)
            continue
        coerced, changed = clamp_param(key, value)
        if changed:
            clamped.append(key)
            logger.warning("LLM value for %r clamped to %r", key, coerced)
        params[key] = coerced
    models = [m for m in obj.get("recommended_models", [])
              if m in MODEL_KINDS]
    explanation = str(obj.get("explanation", "")) or "(no explanation given)"
    return Recommendation(params=params,
                          recommended_models=models or selected_models,
                          explanation=explanation, source="llm",
                          clamped=clamped)


SUMMARY_SYSTEM = (
    "You explain time-series forecasting results to non-experts. Summarize "
    "which models performed best and worst and why that might be, in plain "
    "language, under 200 words."
)


def template_summary(metrics_json: dict) -> str:
    """Deterministic fallback: rank models by aggregate normalized RMSE."""
    ranked = []
    for kind, entry in metrics_json.get("models", {}).items():
        if entry.get("status") != "ok" or "metrics" not in entry:
            continue
        rmse = entry["metrics"]["metrics"]["normalized"]["rmse"]["value"]
        if rmse is not None:
            ranked.append((rmse, kind))
    if not ranked:
        return ("No model ranking is possible: every model's RMSE was "
                "undefined or missing.")
    ranked.sort()
    best = ranked[0]
    worst = ranked[-1]
    lines = [f"Best model by normalized RMSE: {best[1]} ({best[0]:.4f})."]
    if len(ranked) > 1:
        lines.append(f"Weakest model: {worst[1]} ({worst[0]:.4f}).")
    undefined = []
    for kind, entry in metrics_json.get("models", {}).items():
        if entry.get("status") != "ok" or "metrics" not in entry:
            continue
        for metric, cell in entry["metrics"]["metrics"]["normalized"].items():
            if cell["value"] is None:
                undefined.append(f"{kind}/{metric}")
    if undefined:
        lines.append("Undefined metrics (zeros in the data or seasonality "
                     "mismatches): " + ", ".join(sorted(set(undefined))) + ".")
    return " ".join(lines)


def summarize_results(metrics_json: dict, client: LlmClient | None) -> tuple[str, str]:
    """Plain-text results summary; returns (text, source)."""
    if client is not None and client.config.configured:
        try:
            raw = client.complete(
                SUMMARY_SYSTEM,
                "Performance metrics JSON:\n" + json.dumps(metrics_json))
            text = strip_reasoning(raw,
                                   client.config.reasoning_markers).strip()
            if text:
                return text, "llm"
        except Exception as exc:  # noqa: BLE001 - total function contract
            logger.warning("LLM summary failed: %s", exc)
    return template_summary(metrics_json), "fallback"
