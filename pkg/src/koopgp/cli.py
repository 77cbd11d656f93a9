"""Command-line entry point.

    koopgp <simulate|fit|forecast|benchmark|infogain|ablate>
           --config <path> [--out <dir>] [--verbose]

Every command is driven by a JSON config (schema-validated, unknown keys
rejected) and writes its outputs plus a manifest.json listing file hashes
under the output directory.  Reruns with identical configs produce
byte-identical deterministic outputs; wall-clock timing files are marked
volatile in the manifest and left unhashed.  Exit codes: 0 success,
1 runtime failure, 2 config or input validation failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import sys
from pathlib import Path

import numpy as np

from .analysis import (
    BenchmarkSpec,
    run_ablation,
    run_benchmark,
    run_info_gain_experiment,
)
from .data import (
    DataError,
    Standardizer,
    TrainingSet,
    apply_standardizer,
    load_trajectories,
    save_trajectories,
    standardize,
    window_dataset,
)
from .dynamics import make_corpus, system_by_name
from .gp_exact import fit_exact, optimize_hyperparameters, predict
from .gp_sparse import SparseState, sparse_predict, train_sparse
from .kernels import KernelConfig, default_config
from .seeding import rng_for

EXACT_PAIR_LIMIT = 4096


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# config validation
# ---------------------------------------------------------------------------

_REQUIRED = object()


def _validate(config: dict, schema: dict, command: str) -> dict:
    if not isinstance(config, dict):
        raise ConfigError(f"{command}: config must be a JSON object")
    unknown = set(config) - set(schema)
    if unknown:
        raise ConfigError(f"{command}: unknown config keys {sorted(unknown)}")
    out = {}
    for key, (types, default) in schema.items():
        allowed = types if isinstance(types, tuple) else (types,)
        if key in config:
            value = config[key]
            if value is None and default is not _REQUIRED:
                out[key] = default
                continue
            if isinstance(value, bool) and bool not in allowed:
                raise ConfigError(f"{command}: key {key!r} has invalid type")
            if not isinstance(value, allowed):
                raise ConfigError(f"{command}: key {key!r} has invalid type")
            out[key] = value
        elif default is _REQUIRED:
            raise ConfigError(f"{command}: missing required key {key!r}")
        else:
            out[key] = default
    return out


def _json_bytes(obj) -> bytes:
    return (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode("utf-8")


def _csv_bytes(header, rows) -> bytes:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(header)
    for row in rows:
        writer.writerow([repr(v) if isinstance(v, float) else str(v) for v in row])
    return buf.getvalue().encode("utf-8")


def _emit(out_dir: Path, command: str, config_bytes: bytes, outputs: dict, volatile=()):
    out_dir.mkdir(parents=True, exist_ok=True)
    hashes = {}
    for name, content in outputs.items():
        path = out_dir / name
        path.write_bytes(content)
        if name not in volatile:
            hashes[name] = hashlib.sha256(content).hexdigest()
    manifest = {
        "command": command,
        "config_sha256": hashlib.sha256(config_bytes).hexdigest(),
        "outputs": hashes,
        "volatile": sorted(volatile),
    }
    (out_dir / "manifest.json").write_bytes(_json_bytes(manifest))


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

SIMULATE_SCHEMA = {
    "system": (str, _REQUIRED),
    "n_trajectories": (int, _REQUIRED),
    "steps": (int, _REQUIRED),
    "dt": ((int, float), _REQUIRED),
    "x0_box": (list, _REQUIRED),
    "noise_std": ((int, float), 0.0),
    "seed": (int, _REQUIRED),
    "params": (dict, None),
}


def cmd_simulate(config: dict, out_dir: Path, config_bytes: bytes, verbose: bool) -> int:
    cfg = _validate(config, SIMULATE_SCHEMA, "simulate")
    try:
        system = system_by_name(cfg["system"], **(cfg["params"] or {}))
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"simulate: {exc}") from None
    corpus = make_corpus(
        system,
        cfg["n_trajectories"],
        cfg["x0_box"],
        float(cfg["dt"]),
        cfg["steps"],
        noise_std=float(cfg["noise_std"]),
        seed=cfg["seed"],
    )
    buf = io.StringIO()
    _write_corpus(buf, corpus)
    meta = {
        "system": cfg["system"],
        "n_trajectories": cfg["n_trajectories"],
        "steps": cfg["steps"],
        "dt": cfg["dt"],
        "x0_box": cfg["x0_box"],
        "noise_std": cfg["noise_std"],
        "seed": cfg["seed"],
        "params": system.params,
    }
    _emit(out_dir, "simulate", config_bytes, {
        "corpus.csv": buf.getvalue().encode("utf-8"),
        "meta.json": _json_bytes(meta),
    })
    if verbose:
        print(f"simulate: wrote {len(corpus)} trajectories", file=sys.stderr)
    return 0


def _write_corpus(buf, corpus):
    writer = csv.writer(buf)
    n = corpus[0].dim if corpus else 1
    writer.writerow(["traj_id", "t"] + [f"x{i + 1}" for i in range(n)])
    for k, traj in enumerate(corpus):
        for i in range(len(traj)):
            writer.writerow(
                [str(k), repr(float(traj.times[i]))]
                + [repr(float(v)) for v in traj.states[i]]
            )


FIT_SCHEMA = {
    "corpus": (str, _REQUIRED),
    "state_dim": (int, _REQUIRED),
    "output": ((int, str), _REQUIRED),
    "past_points": (int, _REQUIRED),
    "horizon_points": (int, _REQUIRED),
    "stride": (int, None),
    "model": (str, _REQUIRED),
    "eigenvalues": (int, 64),
    "seed": (int, _REQUIRED),
    "mode": (str, "auto"),
    "budget": (int, 150),
    "learning_rate": ((int, float), 0.1),
    "n_windows": (int, None),
    "sparse": (dict, None),
}


def _load_windowed(cfg, verbose):
    path = Path(cfg["corpus"])
    if not path.exists():
        raise ConfigError(f"corpus file not found: {path}")
    trajs = load_trajectories(path, cfg["state_dim"])
    if cfg.get("n_windows"):
        rng = rng_for(cfg["seed"], "fit-subset")
        pick = rng.permutation(len(trajs))[: cfg["n_windows"]]
        trajs = [trajs[i] for i in sorted(pick)]
    raw = window_dataset(
        trajs, cfg["output"], cfg["past_points"], cfg["horizon_points"], cfg["stride"]
    )
    if verbose:
        print(f"windowed {len(trajs)} trajectories into {raw.n_pairs} pairs", file=sys.stderr)
    return standardize(raw)


def cmd_fit(config: dict, out_dir: Path, config_bytes: bytes, verbose: bool) -> int:
    cfg = _validate(config, FIT_SCHEMA, "fit")
    if cfg["model"] not in ("kesd", "sd", "contextual"):
        raise ConfigError(f"fit: unknown model {cfg['model']!r}")
    if cfg["mode"] not in ("auto", "exact", "sparse"):
        raise ConfigError(f"fit: unknown mode {cfg['mode']!r}")
    train, std = _load_windowed(cfg, verbose)
    mode = cfg["mode"]
    if mode == "auto":
        mode = "exact" if train.n_pairs <= EXACT_PAIR_LIMIT else "sparse"
    windowing = {
        "state_dim": cfg["state_dim"],
        "output": cfg["output"],
        "past_points": cfg["past_points"],
        "horizon_points": cfg["horizon_points"],
        "stride": cfg["stride"],
    }
    log_rows = []
    if mode == "exact":
        cfg0 = default_config(train, cfg["model"], cfg["eigenvalues"], seed=cfg["seed"])
        opt = optimize_hyperparameters(
            train, cfg0, budget=cfg["budget"],
            learning_rate=float(cfg["learning_rate"]),
            callback=lambda it, val, theta: log_rows.append((it, float(val))),
        )
        model_doc = {
            "mode": "exact",
            "model": cfg["model"],
            "cfg": opt.to_dict(),
            "standardizer": std.to_dict(),
            "windowing": windowing,
            "training": {
                "window_grid": train.window_grid.tolist(),
                "windows": train.windows.tolist(),
                "pair_window": train.pair_window.tolist(),
                "times": train.times.tolist(),
                "targets": train.targets.tolist(),
            },
        }
        log = _csv_bytes(["iteration", "nll"], log_rows)
    else:
        kw = dict(n_inducing=32, budgets=(300, 500, 200), batch_size=64,
                  learning_rate=0.02, pre_budget=100)
        kw.update(cfg["sparse"] or {})
        loss_log: list = []
        state = train_sparse(
            train, n_inducing=int(kw["n_inducing"]), budgets=tuple(kw["budgets"]),
            seed=cfg["seed"], batch_size=int(kw["batch_size"]),
            learning_rate=float(kw["learning_rate"]), kind=cfg["model"],
            n_eigenvalues=cfg["eigenvalues"], pre_budget=int(kw["pre_budget"]),
            loss_log=loss_log,
        )
        model_doc = {
            "mode": "sparse",
            "model": cfg["model"],
            "state": state.to_dict(),
            "standardizer": std.to_dict(),
            "windowing": windowing,
        }
        log = _csv_bytes(["evaluation", "loss"], list(enumerate(loss_log)))
    _emit(out_dir, "fit", config_bytes, {
        "model.json": _json_bytes(model_doc),
        "opt_log.csv": log,
    })
    return 0


FORECAST_SCHEMA = {
    "model": (str, _REQUIRED),
    "corpus": (str, _REQUIRED),
    "trajectory_index": (int, 0),
    "include_noise": (bool, False),
}


def _rebuild_model(doc: dict):
    std = Standardizer.from_dict(doc["standardizer"])
    if doc["mode"] == "sparse":
        return "sparse", SparseState.from_dict(doc["state"]), std
    tr = doc["training"]
    train = TrainingSet(
        np.array(tr["window_grid"]),
        np.array(tr["windows"]),
        np.array(tr["pair_window"]),
        np.array(tr["times"]),
        np.array(tr["targets"]),
        std,
    )
    model = fit_exact(train, KernelConfig.from_dict(doc["cfg"]))
    return "exact", model, std


def cmd_forecast(config: dict, out_dir: Path, config_bytes: bytes, verbose: bool) -> int:
    cfg = _validate(config, FORECAST_SCHEMA, "forecast")
    model_path = Path(cfg["model"])
    if not model_path.exists():
        raise ConfigError(f"model file not found: {model_path}")
    doc = json.loads(model_path.read_text())
    mode, model, std = _rebuild_model(doc)
    win = doc["windowing"]
    corpus_path = Path(cfg["corpus"])
    if not corpus_path.exists():
        raise ConfigError(f"corpus file not found: {corpus_path}")
    trajs = load_trajectories(corpus_path, win["state_dim"])
    idx = cfg["trajectory_index"]
    if not 0 <= idx < len(trajs):
        raise ConfigError(f"trajectory_index {idx} out of range ({len(trajs)} trajectories)")
    raw = window_dataset(
        [trajs[idx]], win["output"], win["past_points"], win["horizon_points"], win["stride"]
    )
    queries = apply_standardizer(raw, std).subset(np.arange(win["horizon_points"]))
    if mode == "exact":
        fc = predict(model, queries, include_noise=cfg["include_noise"])
    else:
        fc = sparse_predict(model, queries, include_noise=cfg["include_noise"])
    rows = [
        (float(t), float(m), float(v))
        for t, m, v in zip(fc.times, fc.mean, fc.variance)
    ]
    _emit(out_dir, "forecast", config_bytes, {
        "forecast.csv": _csv_bytes(["t", "mean", "variance"], rows),
    })
    return 0


BENCHMARK_SCHEMA = {
    "dataset": (str, "PP"),
    "system": (str, "predator_prey"),
    "corpus": (str, None),
    "state_dim": (int, 2),
    "n_windows": (int, _REQUIRED),
    "h_points": (int, _REQUIRED),
    "models": (list, _REQUIRED),
    "repeats": (int, _REQUIRED),
    "seed": (int, _REQUIRED),
    "eigenvalues": (int, 64),
    "exact_budget": (int, 150),
    "learning_rate": ((int, float), 0.1),
    "noise_std": ((int, float), 0.0),
    "output": ((int, str), 1),
    "sparse": (dict, None),
    "corpus_kwargs": (dict, None),
}


def cmd_benchmark(config: dict, out_dir: Path, config_bytes: bytes, verbose: bool) -> int:
    cfg = _validate(config, BENCHMARK_SCHEMA, "benchmark")
    for model in cfg["models"]:
        if model not in ("kesd", "sd", "contextual"):
            raise ConfigError(f"benchmark: unknown model {model!r}")
    if cfg["system"] not in ("predator_prey", "linear2d") and cfg["corpus"] is None:
        raise ConfigError(f"benchmark: unknown system {cfg['system']!r}")
    corpus = None
    if cfg["corpus"] is not None:
        path = Path(cfg["corpus"])
        if not path.exists():
            raise ConfigError(f"corpus file not found: {path}")
        corpus = load_trajectories(path, cfg["state_dim"])
    spec = BenchmarkSpec(
        dataset=cfg["dataset"],
        system=cfg["system"],
        n_windows=cfg["n_windows"],
        h_points=cfg["h_points"],
        models=tuple(cfg["models"]),
        repeats=cfg["repeats"],
        seed=cfg["seed"],
        n_eigenvalues=cfg["eigenvalues"],
        exact_budget=cfg["exact_budget"],
        learning_rate=float(cfg["learning_rate"]),
        noise_std=float(cfg["noise_std"]),
        output_index=cfg["output"],
        corpus_kwargs=cfg["corpus_kwargs"] or {},
        sparse_kwargs=cfg["sparse"] or {},
        corpus=corpus,
    )
    report = run_benchmark(spec)
    csv_rows = [
        (r.dataset, r.model, r.n, r.h, r.repeat, float(r.rmse), float(r.seconds))
        for r in report.rows
    ]
    timings = {f"{r.model}/{r.repeat}": r.seconds for r in report.rows}
    _emit(out_dir, "benchmark", config_bytes, {
        "report.json": _json_bytes(report.to_dict(include_seconds=False)),
        "report.csv": _csv_bytes(
            ["dataset", "model", "N", "H", "repeat", "rmse", "seconds"], csv_rows
        ),
        "timings.json": _json_bytes(timings),
    }, volatile=("report.csv", "timings.json"))
    if verbose:
        for model, (mean, sd) in report.summary().items():
            print(f"benchmark: {model} rmse {mean:.3f} +/- {sd:.3f}", file=sys.stderr)
    return 0


INFOGAIN_SCHEMA = {
    "seed": (int, _REQUIRED),
    "n_trajectories": (int, 1000),
    "steps": (int, 16),
    "dt": ((int, float), 0.06),
    "past_points": (int, 8),
    "horizon_points": (int, 8),
    "stride": (int, 1),
    "eigenvalues": (int, 64),
    "sizes": (list, None),
    "sigma2": ((int, float), 1.0),
}


def cmd_infogain(config: dict, out_dir: Path, config_bytes: bytes, verbose: bool) -> int:
    cfg = _validate(config, INFOGAIN_SCHEMA, "infogain")
    curves = run_info_gain_experiment(
        seed=cfg["seed"],
        n_traj=cfg["n_trajectories"],
        steps=cfg["steps"],
        dt=float(cfg["dt"]),
        past=cfg["past_points"],
        horizon=cfg["horizon_points"],
        stride=cfg["stride"],
        n_eigenvalues=cfg["eigenvalues"],
        sizes=cfg["sizes"],
        sigma2=float(cfg["sigma2"]),
    )
    rows = []
    for curve in curves:
        for size, gain, norm in zip(curve.sizes, curve.gains, curve.normalized):
            rows.append((curve.kernel_label, curve.spectrum_label, int(size),
                         float(gain), float(norm)))
    _emit(out_dir, "infogain", config_bytes, {
        "infogain.csv": _csv_bytes(
            ["kernel", "spectrum", "N", "gain", "normalized_gain"], rows
        ),
    })
    return 0


ABLATE_SCHEMA = {
    "sweep": (str, "eigenspaces"),
    "values": (list, _REQUIRED),
    "n_train": (int, 32),
    "n_test": (int, 256),
    "seeds": (int, 10),
    "seed": (int, _REQUIRED),
    "h_points": (int, 32),
    "eigenvalues": (int, 64),
    "budget": (int, 80),
    "learning_rate": ((int, float), 0.1),
    "output": ((int, str), 1),
    "system": (str, "predator_prey"),
    "noise_std": ((int, float), 0.0),
    "corpus": (str, None),
    "state_dim": (int, 2),
}


def cmd_ablate(config: dict, out_dir: Path, config_bytes: bytes, verbose: bool) -> int:
    cfg = _validate(config, ABLATE_SCHEMA, "ablate")
    if cfg["sweep"] not in ("eigenspaces", "past", "horizon"):
        raise ConfigError(f"ablate: unknown sweep {cfg['sweep']!r}")
    corpus = None
    if cfg["corpus"] is not None:
        path = Path(cfg["corpus"])
        if not path.exists():
            raise ConfigError(f"corpus file not found: {path}")
        corpus = load_trajectories(path, cfg["state_dim"])
    results = run_ablation(
        sweep=cfg["sweep"],
        values=cfg["values"],
        n_train=cfg["n_train"],
        n_test=cfg["n_test"],
        n_seeds=cfg["seeds"],
        seed=cfg["seed"],
        h_points=cfg["h_points"],
        n_eigenvalues=cfg["eigenvalues"],
        budget=cfg["budget"],
        learning_rate=float(cfg["learning_rate"]),
        output_index=cfg["output"],
        system=cfg["system"],
        corpus=corpus,
        noise_std=float(cfg["noise_std"]),
    )
    rows = [
        (r["sweep"], r["value"], float(r["rmse_mean"]), float(r["rmse_iqr"]))
        for r in results
    ]
    _emit(out_dir, "ablate", config_bytes, {
        "ablation.csv": _csv_bytes(["sweep", "value", "rmse_mean", "rmse_iqr"], rows),
        "ablation.json": _json_bytes(results),
    })
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "forecast": cmd_forecast,
    "benchmark": cmd_benchmark,
    "infogain": cmd_infogain,
    "ablate": cmd_ablate,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="koopgp", description=__doc__)
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="path to the JSON config")
    parser.add_argument("--out", default="out", help="output directory")
    parser.add_argument("--verbose", action="store_true")
    args = parser.parse_args(argv)
    try:
        config_path = Path(args.config)
        if not config_path.exists():
            raise ConfigError(f"config file not found: {config_path}")
        config_bytes = config_path.read_bytes()
        try:
            config = json.loads(config_bytes)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        return COMMANDS[args.command](config, Path(args.out), config_bytes, args.verbose)
    except (ConfigError, DataError, FileNotFoundError) as exc:
        print(f"koopgp: config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        print(f"koopgp: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
