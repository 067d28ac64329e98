"""Command-line entry point.

Subcommands: generate, fit, benchmark, rate-study, saturation-study,
ensemble.  Every run is a pure function of the resolved config, the
seed, and the input files: result files are byte-identical across
reruns.  The resolved config can come from a JSON document (--config)
with individual flags overriding single keys; flag names and config
keys map one-to-one (--grid-size <-> "grid_size").

Exit codes: 0 success, 1 runtime or numeric failure, 2 usage or config
failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .ensemble import (
    DEFAULT_RCOND_GRID,
    accuracy_over_rconds,
    ingest_candidates,
    model_weights,
)
from .experiments import (
    DEFAULT_C_GRID,
    DEFAULT_RATE_SIZES,
    _versions,
    _write_manifest,
    run_geometric_benchmark,
    run_mixture_saturation_study,
    run_rate_study,
    write_geometric_table,
    write_rate_study,
    write_saturation_study,
)
from .kernels import (
    DegenerateBandwidthError,
    GaussianKernel,
    PeriodicSobolevKernel,
    UnsupportedOrderError,
    median_bandwidth,
)
from .losses import get_family, reset_sq_clamp_count, sq_clamp_count
from .solver import (
    FitReport,
    LineSearchFailure,
    NumericalConditioningError,
    fit_cg,
    fit_kulsif,
    load_model,
    save_model,
)
from .synthetic import (
    ConstructionError,
    export_dataset,
    make_geometric_problem,
    make_regularity_problem,
    read_dataset,
    sample_regularity,
)
from .validation import InvalidInputError

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2


class ConfigError(Exception):
    """Bad usage or configuration; maps to exit code 2."""


class RuntimeFailure(Exception):
    """Computation failed after a valid config; maps to exit code 1."""


GLOBAL_OPTIONS = [
    ("seed", int, 0, "root seed for all randomness"),
    ("output_dir", str, "out", "directory for result files"),
    ("threads", int, 0, "worker threads; 0 = available cores, 1 = serial"),
]

# dest -> (type, default, help); one flag per key, names map one-to-one
SUBCOMMANDS = {
    "generate": {
        "kind": (str, None, "dataset kind: geometric or regularity"),
        "dim": (int, 50, "ambient dimension (geometric)"),
        "samples": (int, 1000, "draws per distribution (geometric) or total (regularity)"),
        "alpha": (int, 2, "kernel smoothness order (regularity; even, >= 2)"),
        "r": (float, 1.25, "regularity index of the target (regularity)"),
        "grid_size": (int, 4096, "quadrature grid size (regularity)"),
    },
    "fit": {
        "data": (str, None, "dataset CSV written by `generate`"),
        "family": (str, "kulsif", "loss family: kulsif, lr, exp, or sq"),
        "lam": (float, 1.0, "Tikhonov weight lambda (> 0)"),
        "t": (int, 1, "number of iterated sub-problems (>= 1)"),
        "kernel": (str, "gaussian", "kernel: gaussian or sobolev"),
        "bandwidth": (float, 0.0, "Gaussian bandwidth; 0 = median heuristic"),
        "order": (int, 2, "periodic Sobolev order (even, >= 2)"),
        "target_eps": (float, 1e-6, "CG gradient tolerance"),
        "model_out": (str, "model.json", "model file name (under the output dir)"),
    },
    "benchmark": {
        "datasets": (int, 5, "number of random mixture-pair datasets"),
        "samples": (int, 1000, "draws per distribution per dataset"),
        "seeds": (int, 5, "number of sample-draw seeds per dataset"),
        "families": (str, "kulsif", "comma-separated loss families"),
        "dim": (int, 50, "ambient dimension"),
        "target_eps": (float, 1e-6, "CG gradient tolerance"),
    },
    "rate-study": {
        "alpha": (int, 2, "kernel smoothness order (even, >= 2)"),
        "r": (float, 1.25, "regularity index of the target"),
        "sizes": (str, ",".join(str(s) for s in DEFAULT_RATE_SIZES), "comma-separated sample sizes"),
        "seeds": (int, 10, "number of draw seeds per size"),
        "t_values": (str, "1,8", "comma-separated iteration counts to read out"),
        "c_grid": (str, ",".join(str(c) for c in DEFAULT_C_GRID), "schedule constants to sweep"),
        "grid_size": (int, 4096, "quadrature grid size"),
        "target_eps": (float, 1e-6, "CG gradient tolerance"),
    },
    "saturation-study": {
        "counts": (str, "1,2,3", "comma-separated numerator component counts"),
        "sizes": (str, "1000", "comma-separated draws per distribution"),
        "seeds": (int, 10, "number of seeds per cell"),
    },
    "ensemble": {
        "labels": (str, None, "label CSV (sample_id,label)"),
        "candidates": (str, None, "comma-separated candidate prediction CSVs"),
        "weights": (str, "", "importance-weight CSV (sample_id,weight)"),
        "weights_model": (str, "", "fitted model JSON to compute weights from"),
        "features": (str, "", "feature CSV (sample_id,x1,...) for --weights-model"),
        "test_labels": (str, "", "held-out label CSV; default: score the fit block"),
        "test_candidates": (str, "", "comma-separated held-out candidate CSVs"),
        "rcond_grid": (str, ",".join(str(c) for c in DEFAULT_RCOND_GRID), "pseudo-inverse cutoffs"),
        "truncate_unweighted": (bool, False, "apply the rcond cut to the unweighted design"),
    },
}


def _flag(dest: str) -> str:
    return "--" + dest.replace("_", "-")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kdre",
        description="Density-ratio estimation by iterated Tikhonov regularization.",
    )
    parser.add_argument("--version", action="version", version=f"kdre {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, options in SUBCOMMANDS.items():
        p = sub.add_parser(name, help=f"run the {name} pipeline")
        p.add_argument("--config", default=None, help="JSON config file; flags override keys")
        for dest, (typ, default, help_text) in {**dict_globals(), **options}.items():
            if typ is bool:
                p.add_argument(
                    _flag(dest),
                    dest=dest,
                    action="store_true",
                    default=argparse.SUPPRESS,
                    help=f"{help_text} (default: {default})",
                )
            else:
                p.add_argument(
                    _flag(dest),
                    dest=dest,
                    type=typ,
                    default=argparse.SUPPRESS,
                    help=f"{help_text} (default: {default})",
                )
    return parser


def dict_globals() -> dict:
    return {dest: (typ, default, help_text) for dest, typ, default, help_text in GLOBAL_OPTIONS}


def resolve_config(command: str, args: argparse.Namespace) -> dict:
    """defaults <- config file <- explicit flags, rejecting unknown keys."""
    spec = {**dict_globals(), **SUBCOMMANDS[command]}
    resolved = {dest: default for dest, (_, default, _) in spec.items()}
    config_path = getattr(args, "config", None)
    if config_path:
        try:
            with open(config_path, "r", encoding="utf-8") as fh:
                doc = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"--config: cannot read {config_path}: {exc}")
        except json.JSONDecodeError as exc:
            raise ConfigError(f"--config: {config_path} is not valid JSON: {exc}")
        if not isinstance(doc, dict):
            raise ConfigError(f"--config: {config_path} must hold a JSON object")
        for key, value in doc.items():
            if key not in spec:
                raise ConfigError(f"--config: unknown key {key!r} for `{command}`")
            typ = spec[key][0]
            if typ in (int, float) and isinstance(value, (int, float)):
                resolved[key] = typ(value)
            elif typ is str and isinstance(value, (str, list)):
                resolved[key] = (
                    ",".join(str(v) for v in value) if isinstance(value, list) else value
                )
            elif typ is bool and isinstance(value, bool):
                resolved[key] = value
            else:
                raise ConfigError(
                    f"--config: key {key!r} must be of type {typ.__name__}"
                )
    for dest in spec:
        if hasattr(args, dest):
            resolved[dest] = getattr(args, dest)
    if resolved["threads"] == 0:
        resolved["threads"] = os.cpu_count() or 1
    if resolved["threads"] < 1:
        raise ConfigError("--threads must be a positive integer or 0 for all cores")
    return resolved


def _parse_number_list(raw, flag: str, cast):
    if isinstance(raw, (list, tuple)):
        parts = list(raw)
    else:
        parts = [p for p in str(raw).split(",") if p.strip() != ""]
    if not parts:
        raise ConfigError(f"{flag}: expected a comma-separated list, got {raw!r}")
    try:
        return tuple(cast(p) for p in parts)
    except ValueError:
        raise ConfigError(f"{flag}: could not parse {raw!r} as {cast.__name__} list")


def _require(cfg: dict, dest: str):
    value = cfg.get(dest)
    if value in (None, ""):
        raise ConfigError(f"{_flag(dest)} is required")
    return value


def _outdir(cfg: dict) -> Path:
    out = Path(cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _say(message: str) -> None:
    print(message)


# --------------------------------------------------------------------------
# Subcommands
# --------------------------------------------------------------------------


def cmd_generate(cfg: dict) -> list:
    kind = _require(cfg, "kind")
    outdir = _outdir(cfg)
    seed = cfg["seed"]
    if kind == "geometric":
        problem = make_geometric_problem((seed, 1), dim=cfg["dim"])
        x_p = problem.p.sample(cfg["samples"], (seed, 2))
        x_q = problem.q.sample(cfg["samples"], (seed, 3))
        csv_path = outdir / "geometric_dataset.csv"
        export_dataset(
            csv_path,
            x_p,
            x_q,
            {
                "kind": "geometric",
                "seed": seed,
                "dim": cfg["dim"],
                "samples": cfg["samples"],
                "components_p": len(problem.p.weights),
                "components_q": len(problem.q.weights),
                "exact_ratio_available": True,
                "versions": _versions(),
            },
        )
        return [str(csv_path), f"{csv_path}.manifest.json"]
    if kind == "regularity":
        try:
            problem = make_regularity_problem(cfg["alpha"], cfg["r"], cfg["grid_size"])
        except (UnsupportedOrderError, ConstructionError, InvalidInputError) as exc:
            raise ConfigError(f"invalid --alpha/--r/--grid-size: {exc}")
        m = int(round(problem.pi * cfg["samples"]))
        n = cfg["samples"] - m
        if m < 1 or n < 1:
            raise ConfigError("--samples too small for the class split")
        x_p, x_q = sample_regularity(problem, m, n, (seed, 4))
        grid_path = outdir / "regularity_grid.csv"
        with open(grid_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["x", "f_h", "eta", "p", "q", "beta"])
            for i in range(len(problem.grid)):
                writer.writerow(
                    [
                        repr(float(problem.grid[i])),
                        repr(float(problem.f_h[i])),
                        repr(float(problem.eta[i])),
                        repr(float(problem.p[i])),
                        repr(float(problem.q[i])),
                        repr(float(problem.beta[i])),
                    ]
                )
        csv_path = outdir / "regularity_dataset.csv"
        export_dataset(
            csv_path,
            x_p,
            x_q,
            {
                "kind": "regularity",
                "seed": seed,
                "alpha": cfg["alpha"],
                "r": cfg["r"],
                "order": problem.order,
                "pi": problem.pi,
                "grid_size": cfg["grid_size"],
                "samples": cfg["samples"],
                "exact_ratio_available": True,
                "versions": _versions(),
            },
        )
        return [str(grid_path), str(csv_path), f"{csv_path}.manifest.json"]
    raise ConfigError(f"--kind must be geometric or regularity, got {kind!r}")


def _fit_kernel(cfg: dict, pooled):
    name = cfg["kernel"]
    if name == "gaussian":
        bandwidth = cfg["bandwidth"]
        if bandwidth == 0.0:
            try:
                bandwidth = median_bandwidth(pooled)
            except DegenerateBandwidthError as exc:
                raise RuntimeFailure(str(exc))
        elif bandwidth < 0:
            raise ConfigError("--bandwidth must be positive (or 0 for the median heuristic)")
        return GaussianKernel(bandwidth)
    if name == "sobolev":
        try:
            return PeriodicSobolevKernel(cfg["order"])
        except UnsupportedOrderError as exc:
            raise ConfigError(f"invalid --order: {exc}")
    raise ConfigError(f"--kernel must be gaussian or sobolev, got {name!r}")


def cmd_fit(cfg: dict) -> list:
    data = _require(cfg, "data")
    if not Path(data).exists():
        raise ConfigError(f"--data: no such file: {data}")
    try:
        x_p, x_q = read_dataset(data)
    except InvalidInputError as exc:
        raise ConfigError(f"--data: {exc}")
    if len(x_p) < 1 or len(x_q) < 1:
        raise ConfigError("--data: need rows for both labels (+1 and -1)")
    try:
        family = get_family(cfg["family"])
    except InvalidInputError as exc:
        raise ConfigError(f"invalid --family: {exc}")
    kernel = _fit_kernel(cfg, np.vstack([x_p, x_q]))
    outdir = _outdir(cfg)
    model_path = Path(cfg["model_out"])
    if not model_path.is_absolute():
        model_path = outdir / model_path

    reset_sq_clamp_count()
    started = time.perf_counter()
    try:
        if family.name == "kulsif":
            model = fit_kulsif(x_p, x_q, kernel, cfg["lam"], cfg["t"])
            report = FitReport()
        else:
            model, report = fit_cg(
                x_p, x_q, family, kernel, cfg["lam"], cfg["t"], cfg["target_eps"]
            )
    except InvalidInputError as exc:
        raise ConfigError(str(exc))
    except (LineSearchFailure, NumericalConditioningError) as exc:
        report = getattr(exc, "report", None) or FitReport()
        payload = {"error": str(exc), "family": family.name, "report": report.to_dict()}
        print(json.dumps(payload, sort_keys=True, indent=2))
        raise RuntimeFailure(str(exc))
    report.wall_time = time.perf_counter() - started
    model.ratios(model.anchors)  # surfaces score clamping on the training block
    report.clamp_events = sq_clamp_count()
    save_model(model, model_path)
    payload = {
        "model": str(model_path),
        "family": family.name,
        "kernel": kernel.to_dict(),
        "lambda": float(cfg["lam"]),
        "t": int(cfg["t"]),
        "n_p": int(len(x_p)),
        "n_q": int(len(x_q)),
        "report": report.to_dict(),
    }
    print(json.dumps(payload, sort_keys=True, indent=2))
    return [str(model_path)]


def cmd_benchmark(cfg: dict) -> list:
    families = _parse_number_list(cfg["families"], "--families", str)
    try:
        result = run_geometric_benchmark(
            dataset_count=cfg["datasets"],
            sample_count=cfg["samples"],
            seeds=tuple(range(cfg["seeds"])),
            families=families,
            dim=cfg["dim"],
            root_seed=cfg["seed"],
            target_eps=cfg["target_eps"],
            threads=cfg["threads"],
        )
    except InvalidInputError as exc:
        raise ConfigError(str(exc))
    return write_geometric_table(result, _outdir(cfg))


def cmd_rate_study(cfg: dict) -> list:
    try:
        result = run_rate_study(
            alpha=cfg["alpha"],
            r=cfg["r"],
            t_values=_parse_number_list(cfg["t_values"], "--t-values", int),
            sizes=_parse_number_list(cfg["sizes"], "--sizes", int),
            seeds=tuple(range(cfg["seeds"])),
            c_grid=_parse_number_list(cfg["c_grid"], "--c-grid", float),
            grid_size=cfg["grid_size"],
            target_eps=cfg["target_eps"],
            threads=cfg["threads"],
            root_seed=cfg["seed"],
        )
    except (InvalidInputError, UnsupportedOrderError, ConstructionError) as exc:
        raise ConfigError(str(exc))
    return write_rate_study(result, _outdir(cfg))


def cmd_saturation_study(cfg: dict) -> list:
    try:
        result = run_mixture_saturation_study(
            component_counts=_parse_number_list(cfg["counts"], "--counts", int),
            sizes=_parse_number_list(cfg["sizes"], "--sizes", int),
            seeds=tuple(range(cfg["seeds"])),
            root_seed=cfg["seed"],
            threads=cfg["threads"],
        )
    except InvalidInputError as exc:
        raise ConfigError(str(exc))
    return write_saturation_study(result, _outdir(cfg))


def _read_feature_csv(path):
    ids, rows = [], []
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "sample_id":
            raise ConfigError(f"--features: {path} must start with a sample_id column")
        for i, row in enumerate(reader, start=2):
            try:
                ids.append(row[0])
                rows.append([float(v) for v in row[1:]])
            except (ValueError, IndexError):
                raise ConfigError(f"--features: {path}: unparsable row {i}")
    return ids, np.asarray(rows, dtype=float)


def cmd_ensemble(cfg: dict) -> list:
    labels = _require(cfg, "labels")
    candidates = _parse_number_list(_require(cfg, "candidates"), "--candidates", str)
    if cfg["weights"] and cfg["weights_model"]:
        raise ConfigError("--weights and --weights-model are mutually exclusive")
    for path in (labels, *candidates):
        if not Path(path).exists():
            raise ConfigError(f"no such file: {path}")
    try:
        problem = ingest_candidates(
            labels, list(candidates), cfg["weights"] or None
        )
    except InvalidInputError as exc:
        raise ConfigError(str(exc))
    if cfg["weights_model"]:
        features_path = _require(cfg, "features")
        try:
            model = load_model(cfg["weights_model"])
        except (OSError, json.JSONDecodeError, InvalidInputError, KeyError) as exc:
            raise ConfigError(f"--weights-model: {exc}")
        ids, features = _read_feature_csv(features_path)
        with open(labels, "r", newline="", encoding="utf-8") as fh:
            order = [row[0] for row in list(csv.reader(fh))[1:]]
        index = {sid: i for i, sid in enumerate(ids)}
        missing = [sid for sid in order if sid not in index]
        if missing:
            raise ConfigError(f"--features: missing sample_id {missing[0]!r}")
        problem.weights = model_weights(model, features[[index[sid] for sid in order]])

    if bool(cfg["test_labels"]) != bool(cfg["test_candidates"]):
        raise ConfigError("--test-labels and --test-candidates must be given together")
    if cfg["test_labels"]:
        test_candidates = _parse_number_list(cfg["test_candidates"], "--test-candidates", str)
        try:
            test_problem = ingest_candidates(cfg["test_labels"], list(test_candidates))
        except InvalidInputError as exc:
            raise ConfigError(str(exc))
        test_pred, test_labels = test_problem.predictions, test_problem.labels
    else:
        test_pred, test_labels = problem.predictions, problem.labels

    rcond_grid = _parse_number_list(cfg["rcond_grid"], "--rcond-grid", float)
    try:
        mean_acc, rows = accuracy_over_rconds(
            problem,
            test_pred,
            test_labels,
            rcond_grid,
            truncate_unweighted=cfg["truncate_unweighted"],
        )
    except InvalidInputError as exc:
        raise ConfigError(str(exc))
    outdir = _outdir(cfg)
    result_path = outdir / "ensemble_result.json"
    _write_manifest(
        result_path,
        {
            "mean_accuracy": mean_acc,
            "per_rcond": rows,
            "candidates": problem.candidate_names,
            "classes": problem.class_names,
            "truncate_unweighted": bool(cfg["truncate_unweighted"]),
        },
    )
    manifest_path = outdir / "ensemble_result.manifest.json"
    _write_manifest(
        manifest_path,
        {
            "labels": str(labels),
            "candidates": [str(c) for c in candidates],
            "weights": cfg["weights"] or None,
            "weights_model": cfg["weights_model"] or None,
            "rcond_grid": list(rcond_grid),
            "versions": _versions(),
        },
    )
    return [str(result_path), str(manifest_path)]


DISPATCH = {
    "generate": cmd_generate,
    "fit": cmd_fit,
    "benchmark": cmd_benchmark,
    "rate-study": cmd_rate_study,
    "saturation-study": cmd_saturation_study,
    "ensemble": cmd_ensemble,
}


def _write_run_manifest(cfg: dict, command: str, outputs: list, wall_time: float) -> None:
    canonical = json.dumps({"command": command, "config": cfg}, sort_keys=True)
    doc = {
        "command": command,
        "config": cfg,
        "config_hash": hashlib.sha256(canonical.encode()).hexdigest(),
        "versions": _versions(),
        "outputs": outputs,
        "wall_time_s": wall_time,
    }
    _write_manifest(Path(cfg["output_dir"]) / "run-manifest.json", doc)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    started = time.perf_counter()
    try:
        cfg = resolve_config(args.command, args)
        outputs = DISPATCH[args.command](cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RuntimeFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (LineSearchFailure, NumericalConditioningError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    _write_run_manifest(cfg, args.command, outputs, time.perf_counter() - started)
    for path in outputs:
        _say(f"wrote: {path}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
