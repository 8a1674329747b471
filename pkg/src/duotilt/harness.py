"""Configuration-driven experiment runner.

An experiment file is TOML with nested sections (see README for the schema):

    schema_version = 1
    [model]
    preset = "heston-t1"          # or type = "heston" plus inline parameters
    [event]                        # optional; presets carry a default event
    kind = "fixed_time"
    ...
    [run]
    methods = ["plain", "two_stage"]
    samples = 100000
    seed = 42
    workers = 1
    output = "out"
    replications = 1
    [sgd]                          # optional stage-1 overrides
    iterations = 300
    [covar]                        # required when "covar" is in methods
    q = 0.985
    target_component = 1
    tolerance = 0.002
    [sweep]                        # optional sensitivity sweep
    parameter = "alpha"
    values = [0.3185, 0.3186]

Outputs: summary.csv (one row per method), <method>.json per method,
sweep.csv when a sweep is configured, and manifest.json.  Identical
(config, seed) produce identical numeric fields regardless of the worker
count: jobs are seeded by their index and path streams are keyed by block.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import sys
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import __version__
from .core.events import event_id as event_id_of
from .core.model import TiltParams
from .errors import SearchFailedError, ValidationError
from .estimators import (
    SUMMARY_COLUMNS,
    EstimateSummary,
    classical_estimate,
    covar_bisection,
    efficiency_report,
    importance_estimate,
    plain_mc,
    summary_csv_row,
    two_stage_estimate,
)
from .optimizer import SgdConfig, search_tilt
from .presets import build_event, build_model, event_to_dict, get_preset

__all__ = ["ExperimentConfig", "load_config", "run_experiment"]

METHODS = ("plain", "classical", "two_stage", "covar")


@dataclass
class ExperimentConfig:
    model: dict
    event: dict
    methods: list
    samples: int
    seed: int
    workers: int
    output: str
    sgd: dict = field(default_factory=dict)
    covar: dict = field(default_factory=dict)
    sweep: Optional[dict] = None
    replications: int = 1
    source_bytes: bytes = b""

    def validate(self) -> None:
        if not self.methods:
            raise ValidationError("methods list must not be empty")
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown:
            raise ValidationError(f"unknown methods {unknown}; allowed: {list(METHODS)}")
        if self.samples < 100:
            raise ValidationError("sample sizes below 100 are not supported")
        if self.sweep is not None:
            if not self.sweep.get("values"):
                raise ValidationError("sweep grid must be nonempty")
            if "parameter" not in self.sweep:
                raise ValidationError("sweep needs a parameter name")
        if "covar" in self.methods and not self.covar:
            raise ValidationError("the covar method needs a [covar] section (q, target_component)")
        if self.replications < 1:
            raise ValidationError("replications must be >= 1")


def load_config(path, overrides: Optional[dict] = None) -> ExperimentConfig:
    """Parse and validate an experiment file; TOML errors carry line numbers."""
    raw_bytes = Path(path).read_bytes()
    try:
        doc = tomllib.loads(raw_bytes.decode("utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise ValidationError(f"config parse error in {path}: {exc}") from exc
    return config_from_dict(doc, overrides, source_bytes=raw_bytes)


def config_from_dict(doc: dict, overrides: Optional[dict] = None, source_bytes: bytes = b"") -> ExperimentConfig:
    overrides = overrides or {}
    if doc.get("schema_version") != 1:
        raise ValidationError("config must declare schema_version = 1")
    model_cfg = dict(doc.get("model", {}))
    event_cfg = dict(doc.get("event", {}))
    preset_name = overrides.get("preset") or model_cfg.pop("preset", None)
    if preset_name:
        preset = get_preset(preset_name)
        merged = dict(preset["model"])
        merged.update(model_cfg)
        model_cfg = merged
        if not event_cfg:
            event_cfg = preset["event"]
    if "type" not in model_cfg:
        raise ValidationError("model section needs a preset or an inline type")
    run = dict(doc.get("run", {}))
    cfg = ExperimentConfig(
        model=model_cfg,
        event=event_cfg,
        methods=list(run.get("methods", ["plain", "two_stage"])),
        samples=int(overrides.get("samples") or run.get("samples", 100_000)),
        seed=int(overrides["seed"]) if overrides.get("seed") is not None else int(run.get("seed", 0)),
        workers=int(overrides.get("workers") or run.get("workers", 0)) or None,
        output=str(overrides.get("output") or run.get("output", "duotilt-out")),
        sgd=dict(doc.get("sgd", {})),
        covar=dict(doc.get("covar", {})),
        sweep=dict(doc["sweep"]) if "sweep" in doc else None,
        replications=int(run.get("replications", 1)),
        source_bytes=source_bytes,
    )
    cfg.workers = cfg.workers or 1
    cfg.validate()
    return cfg


def preset_config(preset_name: str, overrides: Optional[dict] = None) -> ExperimentConfig:
    """Default experiment for a named preset (plain + two_stage)."""
    doc = {"schema_version": 1, "model": {"preset": preset_name}, "run": {}}
    ov = dict(overrides or {})
    ov.setdefault("preset", preset_name)
    return config_from_dict(doc, ov, source_bytes=json.dumps(doc, sort_keys=True).encode())


def make_sgd_config(overrides: dict) -> SgdConfig:
    known = {f.name for f in dataclasses.fields(SgdConfig)}
    bad = set(overrides) - known
    if bad:
        raise ValidationError(f"unknown sgd options {sorted(bad)}")
    fixed = dict(overrides)
    for key in ("initial_theta", "initial_eta"):
        if key in fixed:
            fixed[key] = np.asarray(fixed[key], dtype=float)
    return SgdConfig(**fixed)


def _summary_payload(summary: EstimateSummary) -> dict:
    return {
        "method": summary.method,
        "event_id": summary.event_id,
        "mean": summary.mean,
        "std_error": summary.std_error,
        "sample_variance": summary.sample_variance,
        "n": summary.n,
        "elapsed_seconds": summary.elapsed_seconds,
        "n_hits": summary.n_hits,
        "stage1_samples": summary.stage1_samples,
        "tilt_theta": None if summary.tilt is None else summary.tilt.theta.tolist(),
        "tilt_eta": None if summary.tilt is None else summary.tilt.eta.tolist(),
    }


def _replicated(run_one, replications: int, seed: int):
    """Run a method ``replications`` times; SE across replicate means when > 1."""
    summaries = [run_one(seed + 1000 * rep) for rep in range(replications)]
    first = summaries[0]
    if replications == 1:
        return first, None
    means = np.array([s.mean for s in summaries])
    agg = EstimateSummary(
        mean=float(means.mean()),
        std_error=float(means.std(ddof=1)),
        sample_variance=float(means.var(ddof=1) * first.n),
        n=first.n,
        elapsed_seconds=float(np.mean([s.elapsed_seconds for s in summaries])),
        method=first.method,
        tilt=first.tilt,
        event_id=first.event_id,
        n_hits=first.n_hits,
        stage1_samples=first.stage1_samples,
    )
    return agg, [s.mean for s in summaries]


def _run_job(job: dict) -> dict:
    """Execute one (method, event) job; exceptions become error records."""
    try:
        model = build_model(job["model"])
        event = build_event(job["event"])
        method = job["method"]
        n = job["samples"]
        seed = job["seed"]
        sgd = make_sgd_config(job.get("sgd", {}))
        reps = job.get("replications", 1)
        extra: dict = {}
        if method == "plain":
            summary, rep_means = _replicated(lambda s: plain_mc(model, event, n, s), reps, seed)
        elif method == "classical":
            summary, rep_means = _replicated(
                lambda s: classical_estimate(model, event, n, s), reps, seed
            )
        elif method == "two_stage":
            def run_one(s):
                out, tilt, trace = two_stage_estimate(model, None, event, sgd, n, s)
                extra["tilt_theta"] = tilt.theta.tolist()
                extra["tilt_eta"] = tilt.eta.tolist()
                extra["stage1_iterations"] = len(trace)
                return out

            summary, rep_means = _replicated(run_one, reps, seed)
        elif method == "covar":
            cv = job["covar"]
            value = covar_bisection(
                model,
                None,
                build_event(job["event"]),
                int(cv["target_component"]),
                float(cv["q"]),
                sgd,
                int(cv.get("samples", n)),
                float(cv.get("tolerance", 1e-3)),
                seed,
            )
            return {
                "job": job["name"],
                "method": method,
                "covar": value,
                "event_id": event_id_of(event),
            }
        else:  # pragma: no cover - validated upstream
            raise ValidationError(f"unknown method {method}")
        payload = _summary_payload(summary)
        payload["job"] = job["name"]
        payload.update(extra)
        if rep_means is not None:
            payload["replicate_means"] = rep_means
        return payload
    except Exception as exc:  # noqa: BLE001 - sibling jobs must keep running
        return {
            "job": job.get("name", "?"),
            "method": job.get("method", "?"),
            "error": f"{type(exc).__name__}: {exc}",
            "traceback": traceback.format_exc(),
        }


def _run_sweep(config: ExperimentConfig) -> list:
    """Sensitivity sweep with tilt continuation, most-likely point first.

    Points are optimized in decreasing order of event probability proxy (the
    swept parameter value for SIRD-style sweeps); when stage 1 fails at a
    point (no hits under the original measure) the incoming tilt is reused
    unchanged — the importance estimate stays unbiased at any tilt.
    """
    sweep = config.sweep
    param = sweep["parameter"]
    values = list(sweep["values"])
    n = int(sweep.get("samples", config.samples))
    order = np.argsort(values)[::-1]
    sgd = make_sgd_config(config.sgd)
    rows = {}
    tilt = None
    for rank, idx in enumerate(order):
        val = values[idx]
        model_cfg = dict(config.model)
        model_cfg[param] = val
        model = build_model(model_cfg)
        event = build_event(config.event)
        seed = config.seed + 50_000 + idx
        cfg = dataclasses.replace(
            sgd,
            initial_theta=None if tilt is None else tilt.theta,
            initial_eta=None if tilt is None else tilt.eta,
        )
        try:
            tilt, _ = search_tilt(model, None, event, cfg, seed)
        except SearchFailedError:
            if tilt is None:
                raise
        use = tilt if tilt is not None else TiltParams(
            np.zeros(model.theta_dim), np.zeros(model.eta_dim)
        )
        summary = importance_estimate(model, None, use, event, n, seed, method="two_stage")
        rows[idx] = (val, summary)
    return [rows[i] for i in range(len(values))]


def run_experiment(config_or_path, overrides: Optional[dict] = None) -> int:
    """Run all configured jobs; write reports; return a process exit code."""
    if isinstance(config_or_path, ExperimentConfig):
        config = config_or_path
    else:
        config = load_config(config_or_path, overrides)
    outdir = Path(config.output)
    outdir.mkdir(parents=True, exist_ok=True)

    jobs = []
    for j, method in enumerate(config.methods):
        jobs.append(
            {
                "name": f"{method}",
                "method": method,
                "model": config.model,
                "event": config.event,
                "samples": config.samples,
                "seed": config.seed + j,
                "sgd": config.sgd,
                "covar": config.covar,
                "replications": config.replications,
            }
        )

    if config.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(_run_job, jobs))
    else:
        results = [_run_job(job) for job in jobs]

    sweep_rows = None
    if config.sweep is not None:
        sweep_rows = _run_sweep(config)

    failed = [r for r in results if "error" in r]
    by_method = {r["method"]: r for r in results if "error" not in r}

    baseline = by_method.get("plain")
    csv_rows = []
    for r in results:
        if "error" in r or "covar" in r:
            continue
        summary = EstimateSummary(
            mean=r["mean"],
            std_error=r["std_error"],
            sample_variance=r["sample_variance"],
            n=r["n"],
            elapsed_seconds=r["elapsed_seconds"],
            method=r["method"],
            tilt=(
                TiltParams(np.asarray(r["tilt_theta"]), np.asarray(r["tilt_eta"]))
                if r.get("tilt_theta") is not None
                else None
            ),
            event_id=r["event_id"],
        )
        report = None
        if baseline is not None and r["method"] != "plain" and baseline["n"] == r["n"]:
            base = EstimateSummary(
                mean=baseline["mean"],
                std_error=baseline["std_error"],
                sample_variance=baseline["sample_variance"],
                n=baseline["n"],
                elapsed_seconds=baseline["elapsed_seconds"],
                method="plain",
                event_id=baseline["event_id"],
            )
            report = efficiency_report(summary, base)
        csv_rows.append(summary_csv_row(summary, report))

    with open(outdir / "summary.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SUMMARY_COLUMNS)
        writer.writerows(csv_rows)

    for r in results:
        with open(outdir / f"{r['method']}.json", "w") as fh:
            json.dump(r, fh, indent=2, sort_keys=True)

    if sweep_rows is not None:
        with open(outdir / "sweep.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["param", "mean", "std_error", "n", "elapsed_s"])
            for val, summary in sweep_rows:
                writer.writerow(
                    [
                        repr(float(val)),
                        repr(summary.mean),
                        repr(summary.std_error),
                        summary.n,
                        repr(summary.elapsed_seconds),
                    ]
                )

    manifest = {
        "config_sha256": hashlib.sha256(config.source_bytes).hexdigest(),
        "seed": config.seed,
        "samples": config.samples,
        "methods": config.methods,
        "event": config.event and event_to_dict(build_event(config.event)),
        "versions": {
            "duotilt": __version__,
            "numpy": np.__version__,
            "python": sys.version.split()[0],
        },
        "failed_jobs": [r["job"] for r in failed],
    }
    with open(outdir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)

    return 1 if failed else 0
