"""Command-line pipeline: build banks, predict, evaluate, sweep, explain.

Every run resolves its full configuration (explicit flags beat a loaded
run manifest, which beats the built-in defaults), writes the resolved
``run_manifest.json`` into the output directory before computing, and
emits deterministic artifacts so a rerun from the manifest reproduces
the outputs byte for byte.

Exit codes: 0 success, 1 usage error, 2 data error, 3 computation error.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np

from .bank import build_bank, load_bank, save_bank
from .config import ModelConfig, Scaling
from .dataset import (
    Manifest,
    SplitSpec,
    ingest,
    make_windows,
    near_zero_ratio,
    split_windows,
)
from .errors import ComputationError, DataError
from .evaluate import (
    evaluate,
    evaluate_historical_inertia,
    file_sha256,
    metric_dict,
    result_dict,
    run_sweep,
    sweep_dict,
    write_metrics_csv,
    write_sweep_csv,
    write_sweep_json,
)
from .interpret import (
    aggregate_by_day_of_week,
    aggregate_by_source_day,
    contributions,
    write_report_csv,
    write_report_json,
)
from .predictor import Strategy, predict_batch

RUN_MANIFEST_NAME = "run_manifest.json"

_CONFIG_DEFAULTS = {
    "seq_len": 12,
    "pred_len": 12,
    "layers": 10,
    "tolerance": 3,
    "gamma": 10.0,
    "beta": 1.5,
    "scaling": "exp",
    "epsilon": 1e-5,
    "mu": 0.5,
}
_RUN_DEFAULTS = {
    "strategy": "standard",
    "split": "0.6,0.2,0.2",
    "on_split": "test",
    "threads": 1,
    "seed": 0,
    "mape_threshold": 0.0,
}


# ---------------------------------------------------------------------------
# Flag plumbing.
# ---------------------------------------------------------------------------


def _merge(name, explicit, stored, defaults):
    """Explicit flag > stored run-manifest value > built-in default."""
    if explicit is not None:
        return explicit
    if stored is not None and stored.get(name) is not None:
        return stored[name]
    return defaults.get(name)


def _merge_flag(explicit: bool, stored, name: str) -> bool:
    return bool(explicit or (stored is not None and stored.get(name)))


def _load_run_manifest(path: str | None) -> dict | None:
    if path is None:
        return None
    path = Path(path)
    if path.is_dir():
        path = path / RUN_MANIFEST_NAME
    if not path.exists():
        raise DataError(f"run manifest not found: {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"run manifest is not valid JSON: {path}") from exc


def _parse_sensors(text: str | None, n_sensors: int) -> list[int]:
    if text is None:
        return list(range(n_sensors))
    chosen: list[int] = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part[1:]:
            lo, hi = part.split("-", 1)
            chosen.extend(range(int(lo), int(hi) + 1))
        else:
            chosen.append(int(part))
    if not chosen:
        raise click.UsageError("--sensors selected nothing")
    for s in chosen:
        if not 0 <= s < n_sensors:
            raise DataError(
                f"sensor {s} out of range for {n_sensors}-sensor data"
            )
    return chosen


def _parse_split(text: str) -> SplitSpec:
    try:
        train, validation, test = (float(v) for v in str(text).split(","))
    except ValueError as exc:
        raise click.UsageError(
            f"--split needs three comma-separated fractions, got {text!r}"
        ) from exc
    return SplitSpec(train=train, validation=validation, test=test)


def _parse_ints(text, flag: str) -> list[int]:
    try:
        return [int(v) for v in str(text).split(",") if str(v).strip()]
    except ValueError as exc:
        raise click.UsageError(
            f"{flag} needs comma-separated integers, got {text!r}"
        ) from exc


def _parse_grid(axis: str, text) -> list:
    if isinstance(text, (list, tuple)):
        return list(text)
    parts = [p.strip() for p in str(text).split(",") if p.strip()]
    if not parts:
        raise click.UsageError("--grid is empty")
    if axis in ("layers", "tolerance"):
        return [int(p) for p in parts]
    if axis == "scaling":
        return [Scaling(p).value for p in parts]
    return [float(p) for p in parts]


def _build_config(stored, manifest: Manifest, *, seq_len, pred_len, layers,
                  tolerance, gamma, beta, scaling) -> ModelConfig:
    if layers is not None and layers < 1:
        raise click.UsageError("--layers must be >= 1")
    get = lambda name, value: _merge(name, value, stored, _CONFIG_DEFAULTS)
    return ModelConfig(
        seq_len=int(get("seq_len", seq_len)),
        pred_len=int(get("pred_len", pred_len)),
        num_layers=int(get("layers", layers)),
        tolerance=int(get("tolerance", tolerance)),
        steps_per_period=manifest.steps_per_period,
        gamma=float(get("gamma", gamma)),
        beta=float(get("beta", beta)),
        scaling=Scaling(get("scaling", scaling)),
        epsilon=float(_CONFIG_DEFAULTS["epsilon"]),
        mu=float(_CONFIG_DEFAULTS["mu"]),
    )


def _config_dict(config: ModelConfig) -> dict:
    return {
        "seq_len": config.seq_len,
        "pred_len": config.pred_len,
        "layers": config.num_layers,
        "tolerance": config.tolerance,
        "steps_per_period": config.steps_per_period,
        "gamma": config.gamma,
        "beta": config.beta,
        "scaling": config.scaling.value,
        "epsilon": config.epsilon,
        "mu": config.mu,
    }


def _write_run_manifest(out: Path, payload: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / RUN_MANIFEST_NAME).write_text(
        json.dumps(payload, indent=2, sort_keys=False) + "\n"
    )


def _input_stamp(*paths) -> dict:
    return {
        Path(p).name: {"path": str(Path(p).resolve()), "sha256": file_sha256(p)}
        for p in paths
        if p is not None
    }


def _emit(as_json: bool, payload: dict, text: str) -> None:
    if as_json:
        click.echo(json.dumps(payload, indent=2))
    else:
        click.echo(text)


def _require(value, flag: str):
    if value is None:
        raise click.UsageError(f"{flag} is required")
    return value


def _common_run_fields(command, data, manifest, out, strategy, seed, split,
                       sensors):
    return {
        "command": command,
        "data": str(Path(data).resolve()),
        "manifest": str(Path(manifest).resolve()),
        "out": str(Path(out).resolve()),
        "strategy": strategy,
        "seed": seed,
        "split": split,
        "sensors": sensors,
    }


# ---------------------------------------------------------------------------
# Commands.
# ---------------------------------------------------------------------------


@click.group()
def cli() -> None:
    """Non-parametric layered-memory forecasting pipeline."""


def _config_options(f):
    for args, kwargs in reversed([
        (("--seq-len",), {"type": int, "default": None,
                          "help": "History steps per window (default 12)."}),
        (("--pred-len",), {"type": int, "default": None,
                           "help": "Forecast steps per window (default 12)."}),
        (("--layers",), {"type": int, "default": None,
                         "help": "Number of residual layers (default 10)."}),
        (("--gamma",), {"type": float, "default": None,
                        "help": "Similarity scaling factor (default 10)."}),
        (("--beta",), {"type": float, "default": None,
                       "help": "Similarity temperature (default 1.5)."}),
        (("--tolerance",), {"type": int, "default": None,
                            "help": "Periodic-step tolerance (default 3)."}),
        (("--scaling",), {"type": click.Choice(["exp", "complement", "invsq",
                                                "sigmoid"]),
                          "default": None,
                          "help": "Score scaling method (default exp)."}),
    ]):
        f = click.option(*args, **kwargs)(f)
    return f


def _io_options(f):
    for args, kwargs in reversed([
        (("--data",), {"type": click.Path(), "default": None,
                       "help": "Delimited series file (rows=steps)."}),
        (("--manifest",), {"type": click.Path(), "default": None,
                           "help": "Dataset manifest JSON."}),
        (("--out",), {"type": click.Path(), "default": None,
                      "help": "Output directory."}),
        (("--from-manifest",), {"type": click.Path(), "default": None,
                                "help": "Rerun with settings from a previous "
                                        "run_manifest.json."}),
        (("--split",), {"type": str, "default": None,
                        "help": "Train,validation,test fractions "
                                "(default 0.6,0.2,0.2)."}),
        (("--seed",), {"type": int, "default": None,
                       "help": "Recorded RNG seed (pipeline itself is "
                               "deterministic)."}),
        (("--json", "as_json"), {"is_flag": True, "default": False,
                                 "help": "Machine-readable stdout and "
                                         "errors."}),
    ]):
        f = click.option(*args, **kwargs)(f)
    return f


@cli.command()
@_io_options
@_config_options
@click.option("--sensors", type=str, default=None,
              help="Comma list / ranges, e.g. 0,5,10-12 (default: all).")
def build(data, manifest, out, from_manifest, split, seed, as_json, seq_len,
          pred_len, layers, gamma, beta, tolerance, scaling, sensors):
    """Construct per-sensor banks from the training split."""
    stored = _load_run_manifest(from_manifest)
    data = _require(_merge("data", data, stored, {}), "--data")
    manifest = _require(_merge("manifest", manifest, stored, {}), "--manifest")
    out = Path(_require(_merge("out", out, stored, {}), "--out"))
    split_text = _merge("split_text", split, stored, _RUN_DEFAULTS) or \
        _RUN_DEFAULTS["split"]
    seed = int(_merge("seed", seed, stored, _RUN_DEFAULTS))
    sensors = _merge("sensors_text", sensors, stored, {})

    dataset_manifest = Manifest.load(manifest)
    config = _build_config(
        stored.get("config") if stored else None, dataset_manifest,
        seq_len=seq_len, pred_len=pred_len, layers=layers,
        tolerance=tolerance, gamma=gamma, beta=beta, scaling=scaling,
    )
    series = ingest(data, dataset_manifest)
    chosen = _parse_sensors(sensors, series.n_sensors)
    split_spec = _parse_split(split_text)

    run = _common_run_fields("build", data, manifest, out, "standard", seed,
                             split_text, chosen)
    run["sensors_text"] = sensors
    run["split_text"] = split_text
    run["config"] = _config_dict(config)
    run["inputs"] = _input_stamp(data, manifest)
    _write_run_manifest(out, run)

    written = []
    for sensor in chosen:
        parts = split_windows(series, sensor, config.seq_len, config.pred_len,
                              split_spec)
        bank = build_bank(parts["train"], config, sensor_id=sensor)
        path = out / f"sensor_{sensor:04d}.bank"
        save_bank(bank, path)
        written.append(str(path))
    _emit(as_json,
          {"command": "build", "banks": written, "config": run["config"]},
          f"built {len(written)} bank file(s) in {out}")
    return 0


@cli.command()
@_io_options
@click.option("--bank", "bank_path", type=click.Path(), default=None,
              help="Bank file written by the build command.")
@click.option("--queries", type=str, default=None,
              help="Comma list of absolute window indices (default: all "
                   "test-split windows).")
@click.option("--layers", type=int, default=None,
              help="Layers to use (default: all stored in the bank).")
@click.option("--strategy", type=click.Choice(["standard", "mem-efficient"]),
              default=None, help="Prediction strategy (default standard).")
@click.option("--trace", is_flag=True, default=False,
              help="Also write per-layer score traces as JSON.")
@click.option("--figures", is_flag=True, default=False,
              help="Render forecast figures next to the CSV.")
def predict(data, manifest, out, from_manifest, split, seed, as_json,
            bank_path, queries, layers, strategy, trace, figures):
    """Forecast query windows against a built bank."""
    stored = _load_run_manifest(from_manifest)
    data = _require(_merge("data", data, stored, {}), "--data")
    manifest = _require(_merge("manifest", manifest, stored, {}), "--manifest")
    out = Path(_require(_merge("out", out, stored, {}), "--out"))
    bank_path = _require(_merge("bank", bank_path, stored, {}), "--bank")
    split_text = _merge("split_text", split, stored, _RUN_DEFAULTS) or \
        _RUN_DEFAULTS["split"]
    seed = int(_merge("seed", seed, stored, _RUN_DEFAULTS))
    strategy = Strategy(_merge("strategy", strategy, stored, _RUN_DEFAULTS))
    queries = _merge("queries_text", queries, stored, {})
    layers = _merge("layers", layers, stored, {})
    trace = _merge_flag(trace, stored, "trace")
    figures = _merge_flag(figures, stored, "figures")
    if layers is not None and int(layers) < 1:
        raise click.UsageError("--layers must be >= 1")

    bank = load_bank(bank_path)
    dataset_manifest = Manifest.load(manifest)
    if dataset_manifest.steps_per_period != bank.config.steps_per_period:
        raise DataError(
            "bank and dataset manifest disagree on steps_per_period"
        )
    series = ingest(data, dataset_manifest)
    windows = make_windows(series, bank.sensor_id, bank.config.seq_len,
                           bank.config.pred_len)
    if queries is None:
        split_spec = _parse_split(split_text)
        target = split_windows(series, bank.sensor_id, bank.config.seq_len,
                               bank.config.pred_len, split_spec)["test"]
        query_ids = [int(i) for i in target.indices]
    else:
        query_ids = _parse_ints(queries, "--queries")

    first = int(windows.indices[0])
    rows = []
    for qid in query_ids:
        row = qid - first
        if not 0 <= row < len(windows):
            raise DataError(
                f"query index {qid} has no complete window (valid range "
                f"{first}..{int(windows.indices[-1])})"
            )
        rows.append(row)
    rows = np.asarray(rows, dtype=np.int64)

    run = _common_run_fields("predict", data, manifest, out, strategy.value,
                             seed, split_text, [bank.sensor_id])
    run["bank"] = str(Path(bank_path).resolve())
    run["split_text"] = split_text
    run["queries_text"] = queries
    run["layers"] = None if layers is None else int(layers)
    run["trace"] = trace
    run["figures"] = figures
    run["config"] = _config_dict(bank.config)
    run["inputs"] = _input_stamp(data, manifest, bank_path)
    _write_run_manifest(out, run)

    result = predict_batch(
        bank, windows.x[rows], windows.periodic_steps[rows],
        num_layers=None if layers is None else int(layers),
        strategy=strategy, keep_traces=trace, query_ids=query_ids,
    )

    pred_len = bank.config.pred_len
    lines = ["query_id," + ",".join(f"step_{i + 1}" for i in range(pred_len))]
    for qid, row in zip(query_ids, result.predictions):
        lines.append(f"{qid}," + ",".join(repr(float(v)) for v in row))
    csv_path = out / "predictions.csv"
    csv_path.write_text("\n".join(lines) + "\n")

    artifacts = {"predictions": str(csv_path)}
    if trace:
        trace_path = out / "traces.json"
        trace_path.write_text(json.dumps(
            [_trace_dict(t) for t in result.traces], indent=2) + "\n")
        artifacts["traces"] = str(trace_path)
    if figures:
        from .figures import render_forecasts

        fig_path = render_forecasts(result.predictions, windows.y[rows],
                                    out / "forecasts.png",
                                    query_ids=query_ids)
        artifacts["figure"] = str(fig_path)
    _emit(as_json,
          {"command": "predict", "n_queries": len(query_ids),
           "strategy": strategy.value, "artifacts": artifacts},
          f"wrote {len(query_ids)} forecast(s) to {csv_path}")
    return 0


def _trace_dict(trace) -> dict:
    return {
        "query_id": trace.query_id,
        "periodic_step": trace.periodic_step,
        "prediction": [float(v) for v in trace.prediction],
        "layers": [
            {
                "layer": lt.layer,
                "candidate_ids": [int(v) for v in lt.candidate_ids],
                "raw_scores": [float(v) for v in lt.raw_scores],
                "normalized_scores": [float(v) for v in lt.normalized_scores],
                "prediction": [float(v) for v in lt.prediction],
                "residual_input": [float(v) for v in lt.residual_input],
                "input_mean": lt.input_mean,
            }
            for lt in trace.layers
        ],
    }


def _evaluation_flags(f):
    for args, kwargs in reversed([
        (("--sensors",), {"type": str, "default": None,
                          "help": "Comma list / ranges (default: all)."}),
        (("--strategy",), {"type": click.Choice(["standard",
                                                 "mem-efficient"]),
                           "default": None}),
        (("--on-split",), {"type": click.Choice(["train", "validation",
                                                 "test"]),
                           "default": None,
                           "help": "Split to score (default test)."}),
        (("--pooled",), {"is_flag": True, "default": False,
                         "help": "Pool points across sensors instead of "
                                 "macro-averaging."}),
        (("--mape-threshold",), {"type": float, "default": None,
                                 "help": "Mask |truth| <= threshold from "
                                         "MAPE (default 0)."}),
        (("--threads",), {"type": int, "default": None,
                          "help": "Worker threads across sensors "
                                  "(default 1)."}),
        (("--figures",), {"is_flag": True, "default": False,
                          "help": "Render figures next to the delimited "
                                  "output."}),
    ]):
        f = click.option(*args, **kwargs)(f)
    return f


def _resolve_evaluation(stored, data, manifest, out, split, seed, sensors,
                        strategy, on_split, pooled, mape_threshold, threads,
                        figures):
    data = _require(_merge("data", data, stored, {}), "--data")
    manifest = _require(_merge("manifest", manifest, stored, {}), "--manifest")
    out = Path(_require(_merge("out", out, stored, {}), "--out"))
    return {
        "data": data,
        "manifest": manifest,
        "out": out,
        "split_text": _merge("split_text", split, stored, _RUN_DEFAULTS)
        or _RUN_DEFAULTS["split"],
        "seed": int(_merge("seed", seed, stored, _RUN_DEFAULTS)),
        "sensors_text": _merge("sensors_text", sensors, stored, {}),
        "strategy": Strategy(_merge("strategy", strategy, stored,
                                    _RUN_DEFAULTS)),
        "on_split": _merge("on_split", on_split, stored, _RUN_DEFAULTS),
        "pooled": _merge_flag(pooled, stored, "pooled"),
        "mape_threshold": float(_merge("mape_threshold", mape_threshold,
                                       stored, _RUN_DEFAULTS)),
        "threads": int(_merge("threads", threads, stored, _RUN_DEFAULTS)),
        "figures": _merge_flag(figures, stored, "figures"),
    }


@cli.command("evaluate")
@_io_options
@_config_options
@_evaluation_flags
def evaluate_cmd(data, manifest, out, from_manifest, split, seed, as_json,
                 seq_len, pred_len, layers, gamma, beta, tolerance, scaling,
                 sensors, strategy, on_split, pooled, mape_threshold, threads,
                 figures):
    """Score forecasts per sensor and report the average metrics."""
    stored = _load_run_manifest(from_manifest)
    run = _resolve_evaluation(stored, data, manifest, out, split, seed,
                              sensors, strategy, on_split, pooled,
                              mape_threshold, threads, figures)
    dataset_manifest = Manifest.load(run["manifest"])
    config = _build_config(
        stored.get("config") if stored else None, dataset_manifest,
        seq_len=seq_len, pred_len=pred_len, layers=layers,
        tolerance=tolerance, gamma=gamma, beta=beta, scaling=scaling,
    )
    series = ingest(run["data"], dataset_manifest)
    chosen = _parse_sensors(run["sensors_text"], series.n_sensors)
    split_spec = _parse_split(run["split_text"])
    out = run["out"]

    payload = _common_run_fields("evaluate", run["data"], run["manifest"],
                                 out, run["strategy"].value, run["seed"],
                                 run["split_text"], chosen)
    payload.update({
        "sensors_text": run["sensors_text"],
        "split_text": run["split_text"],
        "on_split": run["on_split"],
        "pooled": run["pooled"],
        "mape_threshold": run["mape_threshold"],
        "threads": run["threads"],
        "figures": run["figures"],
        "config": _config_dict(config),
        "inputs": _input_stamp(run["data"], run["manifest"]),
    })
    _write_run_manifest(out, payload)

    outcome = evaluate(
        series, config, strategy=run["strategy"], sensors=chosen,
        split=split_spec, on_split=run["on_split"], pooled=run["pooled"],
        threads=run["threads"], zero_mask_threshold=run["mape_threshold"],
    )
    baseline = evaluate_historical_inertia(
        series, config.seq_len, config.pred_len, sensors=chosen,
        split=split_spec, on_split=run["on_split"], pooled=run["pooled"],
        zero_mask_threshold=run["mape_threshold"],
    )
    near_zero = near_zero_ratio(series)

    csv_path = out / "metrics.csv"
    write_metrics_csv(outcome, csv_path)
    summary = {
        "command": "evaluate",
        "config": _config_dict(config),
        "inputs": payload["inputs"],
        "strategy": run["strategy"].value,
        "on_split": run["on_split"],
        "pooled": run["pooled"],
        "metrics": result_dict(outcome),
        "historical_inertia": result_dict(baseline),
        "near_zero_ratio": {
            "average": near_zero.average,
            "per_sensor": [float(v) for v in near_zero.per_sensor],
        },
    }
    summary_path = out / "summary.json"
    summary_path.write_text(json.dumps(summary, indent=2) + "\n")
    artifacts = {"metrics": str(csv_path), "summary": str(summary_path)}
    if run["figures"]:
        from .figures import render_metrics

        artifacts["figure"] = str(render_metrics(outcome, out / "metrics.png"))
    avg = outcome.average
    mape = "n/a" if avg.mape is None else f"{avg.mape:.2f}%"
    _emit(as_json,
          {"command": "evaluate", "average": metric_dict(avg),
           "historical_inertia": metric_dict(baseline.average),
           "artifacts": artifacts},
          f"MAE {avg.mae:.2f}  RMSE {avg.rmse:.2f}  MAPE {mape}  "
          f"(HI MAE {baseline.average.mae:.2f}) -> {csv_path}")
    return 0


@cli.command()
@_io_options
@_config_options
@_evaluation_flags
@click.option("--axis", type=click.Choice(["layers", "gamma", "beta",
                                           "tolerance", "scaling"]),
              default=None, help="Hyperparameter to sweep.")
@click.option("--grid", type=str, default=None,
              help="Comma-separated sweep values.")
def sweep(data, manifest, out, from_manifest, split, seed, as_json, seq_len,
          pred_len, layers, gamma, beta, tolerance, scaling, sensors,
          strategy, on_split, pooled, mape_threshold, threads, figures, axis,
          grid):
    """Evaluate along one hyperparameter axis with the rest fixed."""
    stored = _load_run_manifest(from_manifest)
    run = _resolve_evaluation(stored, data, manifest, out, split, seed,
                              sensors, strategy, on_split, pooled,
                              mape_threshold, threads, figures)
    axis = _require(_merge("axis", axis, stored, {}), "--axis")
    grid_text = _require(_merge("grid_text", grid, stored, {}), "--grid")
    grid_values = _parse_grid(axis, grid_text)

    dataset_manifest = Manifest.load(run["manifest"])
    config = _build_config(
        stored.get("config") if stored else None, dataset_manifest,
        seq_len=seq_len, pred_len=pred_len, layers=layers,
        tolerance=tolerance, gamma=gamma, beta=beta, scaling=scaling,
    )
    series = ingest(run["data"], dataset_manifest)
    chosen = _parse_sensors(run["sensors_text"], series.n_sensors)
    split_spec = _parse_split(run["split_text"])
    out = run["out"]

    payload = _common_run_fields("sweep", run["data"], run["manifest"], out,
                                 run["strategy"].value, run["seed"],
                                 run["split_text"], chosen)
    payload.update({
        "sensors_text": run["sensors_text"],
        "split_text": run["split_text"],
        "on_split": run["on_split"],
        "pooled": run["pooled"],
        "mape_threshold": run["mape_threshold"],
        "threads": run["threads"],
        "figures": run["figures"],
        "axis": axis,
        "grid_text": grid_text,
        "grid": grid_values,
        "config": _config_dict(config),
        "inputs": _input_stamp(run["data"], run["manifest"]),
    })
    _write_run_manifest(out, payload)

    result = run_sweep(
        series, config, axis, grid_values, strategy=run["strategy"],
        sensors=chosen, split=split_spec, on_split=run["on_split"],
        pooled=run["pooled"], threads=run["threads"],
        zero_mask_threshold=run["mape_threshold"],
    )
    csv_path = out / "sweep.csv"
    json_path = out / "sweep.json"
    write_sweep_csv(result, csv_path)
    write_sweep_json(result, json_path)
    artifacts = {"csv": str(csv_path), "json": str(json_path)}
    if run["figures"]:
        from .figures import render_sweep

        artifacts["figure"] = str(render_sweep(result, out / "sweep.png"))
    _emit(as_json,
          {"command": "sweep", "sweep": sweep_dict(result),
           "artifacts": artifacts},
          "\n".join(
              f"{axis}={v}: MAE {r.mae:.2f}  RMSE {r.rmse:.2f}"
              for v, r in zip(result.values, result.results)
          ))
    return 0


@cli.command()
@_io_options
@_config_options
@click.option("--sensors", type=str, default=None,
              help="Single sensor holding the queries (default 0).")
@click.option("--query", "query_text", type=str, default=None,
              help="Comma list of absolute window indices to explain.")
@click.option("--bank", "bank_path", type=click.Path(), default=None,
              help="Reuse a built bank instead of rebuilding.")
@click.option("--figures", is_flag=True, default=False,
              help="Render attribution figures.")
def explain(data, manifest, out, from_manifest, split, seed, as_json,
            seq_len, pred_len, layers, gamma, beta, tolerance, scaling,
            sensors, query_text, bank_path, figures):
    """Attribute forecasts to bank entries, with day-level summaries."""
    stored = _load_run_manifest(from_manifest)
    data = _require(_merge("data", data, stored, {}), "--data")
    manifest = _require(_merge("manifest", manifest, stored, {}), "--manifest")
    out = Path(_require(_merge("out", out, stored, {}), "--out"))
    query_text = _require(_merge("queries_text", query_text, stored, {}),
                          "--query")
    split_text = _merge("split_text", split, stored, _RUN_DEFAULTS) or \
        _RUN_DEFAULTS["split"]
    seed = int(_merge("seed", seed, stored, _RUN_DEFAULTS))
    sensors = _merge("sensors_text", sensors, stored, {})
    bank_path = _merge("bank", bank_path, stored, {})
    figures = _merge_flag(figures, stored, "figures")
    query_ids = _parse_ints(query_text, "--query")

    dataset_manifest = Manifest.load(manifest)
    series = ingest(data, dataset_manifest)
    split_spec = _parse_split(split_text)

    if bank_path is not None:
        bank = load_bank(bank_path)
        sensor = bank.sensor_id
        config = bank.config
    else:
        chosen = _parse_sensors(sensors, series.n_sensors) \
            if sensors is not None else [0]
        if len(chosen) != 1:
            raise click.UsageError("explain works on exactly one sensor")
        sensor = chosen[0]
        config = _build_config(
            stored.get("config") if stored else None, dataset_manifest,
            seq_len=seq_len, pred_len=pred_len, layers=layers,
            tolerance=tolerance, gamma=gamma, beta=beta, scaling=scaling,
        )
        bank = None

    run = _common_run_fields("explain", data, manifest, out, "standard",
                             seed, split_text, [sensor])
    run.update({
        "sensors_text": sensors,
        "split_text": split_text,
        "queries_text": query_text,
        "bank": None if bank_path is None else str(Path(bank_path).resolve()),
        "figures": figures,
        "config": _config_dict(config),
        "inputs": _input_stamp(data, manifest, bank_path),
    })
    _write_run_manifest(out, run)

    if bank is None:
        parts = split_windows(series, sensor, config.seq_len, config.pred_len,
                              split_spec)
        bank = build_bank(parts["train"], config, sensor_id=sensor)

    windows = make_windows(series, sensor, config.seq_len, config.pred_len)
    first = int(windows.indices[0])
    artifacts = {}
    for qid in query_ids:
        row = qid - first
        if not 0 <= row < len(windows):
            raise DataError(
                f"query index {qid} has no complete window (valid range "
                f"{first}..{int(windows.indices[-1])})"
            )
        result = predict_batch(
            bank, windows.x[row][None, :], [int(windows.periodic_steps[row])],
            keep_traces=True, query_ids=[qid],
        )
        report = contributions(result.traces[0], bank)
        by_day = aggregate_by_source_day(report, bank)
        by_weekday = None
        if series.start_timestamp is not None:
            by_weekday = aggregate_by_day_of_week(report, bank,
                                                  dataset_manifest)
        json_path = out / f"contributions_q{qid}.json"
        csv_path = out / f"contributions_q{qid}.csv"
        write_report_json(report, json_path, by_day=by_day,
                          by_weekday=by_weekday)
        write_report_csv(report, csv_path)
        entry = {"json": str(json_path), "csv": str(csv_path)}
        if figures:
            from .figures import render_contributions

            entry["figure"] = str(render_contributions(
                report, out / f"contributions_q{qid}.png", by_day=by_day,
                by_weekday=by_weekday,
            ))
        artifacts[str(qid)] = entry
    _emit(as_json,
          {"command": "explain", "sensor": sensor, "queries": query_ids,
           "artifacts": artifacts},
          f"explained {len(query_ids)} quer(y/ies) for sensor {sensor} "
          f"in {out}")
    return 0


# ---------------------------------------------------------------------------
# Entry point with structured exit codes.
# ---------------------------------------------------------------------------


def main(argv=None) -> int:
    as_json = "--json" in (argv if argv is not None else sys.argv[1:])
    try:
        rv = cli.main(args=argv, standalone_mode=False)
        return 0 if rv is None else int(rv)
    except click.UsageError as exc:
        _fail(as_json, "usage", exc.format_message(), 1)
        return 1
    except click.ClickException as exc:
        _fail(as_json, "usage", exc.format_message(), 1)
        return 1
    except click.Abort:
        return 1
    except ValueError as exc:
        _fail(as_json, "usage", str(exc), 1)
        return 1
    except DataError as exc:
        _fail(as_json, "data", str(exc), 2)
        return 2
    except ComputationError as exc:
        _fail(as_json, "computation", str(exc), 3)
        return 3


def _fail(as_json: bool, kind: str, message: str, code: int) -> None:
    if as_json:
        click.echo(json.dumps(
            {"error": {"type": kind, "message": message}, "exit_code": code}
        ), err=True)
    else:
        click.echo(f"error ({kind}): {message}", err=True)


if __name__ == "__main__":
    sys.exit(main())
