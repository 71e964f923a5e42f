"""``hyco`` command line: generate, train, evaluate, render, sweep.

Layout of an experiment directory::

    config.json  dataset.csv  reference*.hyco  manifest.json
    <method>/history.csv  lambda.json  theta.hyco  *.hyco  manifest.json
    metrics.csv  metrics.txt  render/

Exit codes: 0 success, 2 invalid configuration or missing inputs, 1 runtime
failure (partial outputs are kept).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from ..core import Dataset, ScalarField, normalized_l2_error, read_field, write_field
from ..nn import read_checkpoint, write_checkpoint
from ..physics import helmholtz as hh
from ..trainer import METHODS, TrainingError, run_metrics, train
from .experiments import ConfigError, ExperimentConfig, build_problem, load_config
from .manifest import RunManifest
from .render import write_pgm, write_svg


class InputError(ConfigError):
    """A required input file is missing or malformed."""


# ---------------------------------------------------------------- config


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    """Preset, then config file (``--config`` or the one saved in ``--out``),
    then command-line flags."""
    d: dict = {}
    if getattr(args, "config", None):
        d.update(load_config(args.config))
    elif getattr(args, "out", None) and (Path(args.out) / "config.json").exists():
        d.update(load_config(Path(args.out) / "config.json"))
    for key in ("problem", "scale", "region", "method", "seed", "out"):
        val = getattr(args, key, None)
        if val is not None:
            d[key] = val
    cfg = ExperimentConfig.from_dict(d)
    # an explicit --seed beats per-stream seeds stored in a config file
    return cfg.with_seed(args.seed) if getattr(args, "seed", None) is not None else cfg


def _seeds(cfg: ExperimentConfig) -> dict:
    h = cfg.hyco
    return {"seed": cfg.seed, "seed_data": h.seed_data, "seed_ghost": h.seed_ghost, "seed_init": h.seed_init}


def _require(path: Path) -> Path:
    if not path.exists():
        raise InputError(f"missing input {path}")
    return path


# ------------------------------------------------------------- generate


def cmd_generate(cfg: ExperimentConfig) -> Path:
    """Reference solution, sensor dataset and config echo in ``cfg.out``."""
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    man = RunManifest(out / "manifest.json", "generate", cfg.to_dict(), _seeds(cfg))
    problem = build_problem(cfg)
    (out / "config.json").write_text(cfg.to_json() + "\n")
    problem.dataset.to_csv(out / "dataset.csv")
    files = [out / "config.json", out / "dataset.csv"]
    if cfg.problem == "helmholtz":
        grid = problem.model.grid
        write_field(ScalarField(grid, problem.reference), out / "reference.hyco")
        write_field(problem.model.forcing, out / "forcing.hyco")
        files += [out / "reference.hyco", out / "forcing.hyco"]
    else:
        grid = problem.model.grid
        ref = problem.reference
        np.save(out / "reference.npy", ref)
        write_field(ScalarField(grid, ref[-1, 0]), out / "reference_u.hyco")
        write_field(ScalarField(grid, ref[-1, 1]), out / "reference_v.hyco")
        files += [out / "reference.npy", out / "reference_u.hyco", out / "reference_v.hyco"]
    man.add_files(*files)
    man.finish("ok")
    return out


# ---------------------------------------------------------------- train


def _load_problem(cfg: ExperimentConfig):
    out = Path(cfg.out)
    problem = build_problem(cfg)
    data = Dataset.from_csv(_require(out / "dataset.csv"), region=problem.dataset.region,
                            noise_std=cfg.noise_std, seed=cfg.hyco.seed_data)
    if data.n_components != problem.model.n_components:
        raise InputError("dataset.csv has the wrong number of components for this problem")
    return dataclasses.replace(problem, dataset=data)


def _save_outputs(cfg, problem, method, run_dir: Path, lam, theta) -> list[Path]:
    files = []
    grid = problem.model.grid
    if method != "pure_nn":
        lam_doc = {"names": list(problem.model.param_names),
                   "internal": [float(x) for x in lam],
                   "physical": [float(x) for x in problem.model.to_physical(lam)]}
        (run_dir / "lambda.json").write_text(json.dumps(lam_doc, indent=2) + "\n")
        files.append(run_dir / "lambda.json")
        sol = problem.model.solution(lam)
        if cfg.problem == "helmholtz":
            kappa, eta = hh.coefficients(problem.model.params(lam), grid)
            for name, arr in (("u_phy", sol), ("kappa", kappa), ("eta", eta)):
                write_field(ScalarField(grid, arr), run_dir / f"{name}.hyco")
                files.append(run_dir / f"{name}.hyco")
        else:
            for c, name in enumerate(("u_phy", "v_phy")):
                write_field(ScalarField(grid, sol[-1, c]), run_dir / f"{name}.hyco")
                files.append(run_dir / f"{name}.hyco")
    if method != "physical_only":
        write_checkpoint(theta, run_dir / "theta.hyco")
        files += [run_dir / "theta.hyco", run_dir / "theta.json"]
        syn = problem.synthetic_solution(theta)
        if cfg.problem == "helmholtz":
            write_field(ScalarField(grid, syn), run_dir / "u_syn.hyco")
            files.append(run_dir / "u_syn.hyco")
        else:
            for c, name in enumerate(("u_syn", "v_syn")):
                write_field(ScalarField(grid, syn[-1, c]), run_dir / f"{name}.hyco")
                files.append(run_dir / f"{name}.hyco")
    return files


def cmd_train(cfg: ExperimentConfig, method: str | None = None) -> Path:
    """Run one method; writes ``<out>/<method>/``. Training failures keep the
    partial history and are re-raised."""
    method = method or cfg.method
    problem = _load_problem(cfg)
    run_dir = Path(cfg.out) / method
    run_dir.mkdir(parents=True, exist_ok=True)
    man = RunManifest(run_dir / "manifest.json", f"train {method}", cfg.to_dict(), _seeds(cfg))
    try:
        result = train(cfg.hyco, problem, method=method)
    except TrainingError as exc:
        exc.history.write_csv(run_dir / "history.csv")
        man.add_files(run_dir / "history.csv")
        man.finish("failed", error=str(exc))
        raise
    hist = result.history
    hist.write_csv(run_dir / "history.csv")
    files = [run_dir / "history.csv"] + _save_outputs(cfg, problem, method, run_dir, result.lam, result.theta)
    man.add_files(*files)
    final = next((m for m in reversed(hist.metrics) if m), None)
    if final is None:
        # no iterations: report the starting point
        final = run_metrics(problem, result.lam, result.theta, method)
    summary = {"iterations": len(hist), "stop_iter": hist.stop_iter, "stationarity": hist.stationarity,
               "final": final}
    man.data["wall_clock_s"] = hist.wall_clock
    man.finish("ok", metrics=summary)
    return run_dir


# ------------------------------------------------------------- evaluate


EVAL_COLUMNS = ("method", "e_s_phy", "e_s_syn", "e_p")


def _load_reference(cfg: ExperimentConfig, ref_dir: Path) -> np.ndarray:
    if cfg.problem == "helmholtz":
        return np.array(read_field(_require(ref_dir / "reference.hyco")).values)
    return np.load(_require(ref_dir / "reference.npy"))


def evaluate_run(cfg: ExperimentConfig, problem, run_dir: Path, reference: np.ndarray, method: str) -> dict:
    row = {"method": method, "e_s_phy": None, "e_s_syn": None, "e_p": None}
    lam_path, theta_path = run_dir / "lambda.json", run_dir / "theta.hyco"
    if lam_path.exists():
        lam = np.array(json.loads(lam_path.read_text())["internal"])
        sol = problem.model.solution(lam)
        if sol.shape != reference.shape:
            raise InputError(f"{method}: solution shape {sol.shape} does not match reference {reference.shape}")
        row["e_s_phy"] = normalized_l2_error(sol, reference)
        row["e_p"] = problem.parameter_error(lam)
    if theta_path.exists():
        syn = problem.synthetic_solution(read_checkpoint(theta_path))
        if syn.shape != reference.shape:
            raise InputError(f"{method}: network output shape {syn.shape} does not match reference")
        row["e_s_syn"] = normalized_l2_error(syn, reference)
    return row


def format_table(rows: list[dict]) -> str:
    cells = [list(EVAL_COLUMNS)]
    for r in rows:
        cells.append([r["method"]] + ["n/a" if r[k] is None else f"{r[k]:.4f}" for k in EVAL_COLUMNS[1:]])
    widths = [max(len(c[i]) for c in cells) for i in range(len(EVAL_COLUMNS))]
    lines = ["  ".join(c[i].ljust(widths[i]) for i in range(len(c))).rstrip() for c in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def cmd_evaluate(cfg: ExperimentConfig, methods: list[str] | None = None, run_root: Path | None = None,
                 ref_dir: Path | None = None) -> list[dict]:
    """Solution and parameter errors of each requested run, in the order given."""
    out = Path(cfg.out)
    run_root = Path(run_root) if run_root else out
    ref_dir = Path(ref_dir) if ref_dir else out
    if methods is None:
        methods = [m for m in METHODS if (run_root / m).is_dir()]
        if not methods:
            raise InputError(f"no runs found under {run_root}")
    problem = build_problem(cfg)
    reference = _load_reference(cfg, ref_dir)
    rows = [evaluate_run(cfg, problem, _require(run_root / m), reference, m) for m in methods]
    with open(out / "metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EVAL_COLUMNS)
        for r in rows:
            w.writerow([r["method"]] + ["n/a" if r[k] is None else repr(float(r[k])) for k in EVAL_COLUMNS[1:]])
    (out / "metrics.txt").write_text(format_table(rows))
    return rows


# --------------------------------------------------------------- render


def cmd_render(files: list[Path], out_dir: Path, sensors: np.ndarray | None = None) -> list[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    man = RunManifest(out_dir / "manifest.json", "render", {"files": [str(f) for f in files]}, {})
    produced = []
    for f in files:
        field = read_field(_require(Path(f)))
        stem = Path(f).stem if Path(f).parent == out_dir.parent else f"{Path(f).parent.name}_{Path(f).stem}"
        pgm, svg = out_dir / f"{stem}.pgm", out_dir / f"{stem}.svg"
        constant = write_pgm(field.values, pgm)
        write_svg(field, svg, sensors, title=stem)
        if constant:
            man.note(f"{f}: constant field rendered as mid-gray")
        produced += [pgm, svg]
    man.add_files(*produced)
    man.finish("ok")
    return produced


def default_render_files(out: Path) -> list[Path]:
    files = sorted(out.glob("reference*.hyco"))
    for m in METHODS:
        files += sorted((out / m).glob("*.hyco")) if (out / m).is_dir() else []
    return [f for f in files if f.name != "theta.hyco"]


# ---------------------------------------------------------------- sweep


def _sweep_one(cfg_dict: dict, seed: int, methods: list[str]) -> list[dict]:
    cfg = ExperimentConfig.from_dict(cfg_dict).with_seed(seed)
    cfg = dataclasses.replace(cfg, out=str(Path(cfg_dict["out"]) / f"seed_{seed}"))
    rows = []
    try:
        cmd_generate(cfg)
    except Exception as exc:  # recorded per row, aggregation uses the successes
        return [{"seed": seed, "method": m, "status": f"error: {exc}"} for m in methods]
    for m in methods:
        try:
            cmd_train(cfg, m)
            row = cmd_evaluate(cfg, [m])[0]
            rows.append({"seed": seed, "status": "ok", **row})
        except Exception as exc:
            rows.append({"seed": seed, "method": m, "status": f"error: {exc}"})
    return rows


def _workers() -> int:
    env = os.environ.get("HYCO_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ConfigError(f"HYCO_THREADS must be an integer, got {env!r}") from None
        if n < 1:
            raise ConfigError("HYCO_THREADS must be >= 1")
        return n
    return os.cpu_count() or 1


def aggregate(rows: list[dict], methods: list[str]) -> list[dict]:
    out = []
    for m in methods:
        ok = [r for r in rows if r["method"] == m and r["status"] == "ok"]
        agg = {"method": m, "n_ok": len(ok), "n_failed": sum(r["method"] == m for r in rows) - len(ok)}
        for k in ("e_p", "e_s_phy", "e_s_syn"):
            vals = np.array([r[k] for r in ok if r.get(k) is not None], dtype=np.float64)
            if len(vals):
                q1, med, q3 = np.percentile(vals, [25, 50, 75])
                agg[f"{k}_median"], agg[f"{k}_iqr"] = float(med), float(q3 - q1)
            else:
                agg[f"{k}_median"] = agg[f"{k}_iqr"] = None
        out.append(agg)
    return out


def cmd_sweep(cfg: ExperimentConfig, seeds: list[int], methods: list[str]) -> list[dict]:
    if not seeds:
        raise ConfigError("sweep needs at least one seed")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg_dict = cfg.to_dict()
    workers = min(_workers(), len(seeds))
    if workers == 1:
        per_seed = [_sweep_one(cfg_dict, s, methods) for s in seeds]
    else:
        with ProcessPoolExecutor(workers) as pool:
            per_seed = list(pool.map(_sweep_one, [cfg_dict] * len(seeds), seeds, [methods] * len(seeds)))
    rows = [r for rs in per_seed for r in rs]
    cols = ("seed", "method", "status") + EVAL_COLUMNS[1:]
    with open(out / "sweep_runs.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow(["" if r.get(c) is None else (repr(float(r[c])) if c.startswith("e_") else r[c])
                        for c in cols])
    agg = aggregate(rows, methods)
    with open(out / "aggregate.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        keys = list(agg[0])
        w.writerow(keys)
        for a in agg:
            w.writerow(["n/a" if a[k] is None else a[k] for k in keys])
    return agg


# ----------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config; flags override its values")
    common.add_argument("--problem", choices=("gray_scott", "helmholtz"))
    common.add_argument("--scale", choices=("desk", "paper"))
    common.add_argument("--region", choices=("omega", "q1", "q2"))
    common.add_argument("--method", help="hyco, pure_nn or physical_only (comma list for evaluate/sweep)")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="experiment directory")

    p = argparse.ArgumentParser(prog="hyco", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="write reference solution and sensor dataset")
    sub.add_parser("train", parents=[common], help="run one method on a generated dataset")
    ev = sub.add_parser("evaluate", parents=[common], help="error table for the runs in --out")
    ev.add_argument("--run-dir", help="directory holding the method subdirectories (default --out)")
    ev.add_argument("--reference-dir", help="directory holding the reference (default --out)")
    rd = sub.add_parser("render", parents=[common], help="PGM/SVG heatmaps of field files")
    rd.add_argument("files", nargs="*", help="field files (default: all fields in --out)")
    rd.add_argument("--sensors", help="dataset CSV whose points are drawn as markers")
    sw = sub.add_parser("sweep", parents=[common], help="train and evaluate over several seeds")
    sw.add_argument("--seeds", default="0,1,2,3,4", help="comma-separated seeds")
    return p


def _methods(arg: str | None, default: list[str] | None) -> list[str] | None:
    if arg is None:
        return default
    ms = [m.strip() for m in arg.split(",") if m.strip()]
    bad = [m for m in ms if m not in METHODS]
    if bad:
        raise ConfigError(f"unknown methods {bad}; choose from {METHODS}")
    return ms


def run(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    method_arg = args.method
    try:
        if args.command in ("evaluate", "sweep") and method_arg and "," in method_arg:
            args.method = None
        methods = _methods(method_arg, None)
        if args.command == "render":
            out = Path(args.out or ".")
            files = [Path(f) for f in args.files] or default_render_files(out)
            if not files:
                raise InputError(f"no field files to render in {out}")
            sensors_path = Path(args.sensors) if args.sensors else (out / "dataset.csv")
            sensors = Dataset.from_csv(sensors_path).points if sensors_path.exists() else None
            cmd_render(files, out / "render", sensors)
            return 0
        cfg = resolve_config(args)
        if args.command == "generate":
            cmd_generate(cfg)
        elif args.command == "train":
            cmd_train(cfg)
        elif args.command == "evaluate":
            rows = cmd_evaluate(cfg, methods, args.run_dir, args.reference_dir)
            sys.stdout.write(format_table(rows))
        elif args.command == "sweep":
            try:
                seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
            except ValueError:
                raise ConfigError(f"bad --seeds {args.seeds!r}") from None
            agg = cmd_sweep(cfg, seeds, methods or [cfg.method])
            for a in agg:
                sys.stdout.write(json.dumps(a) + "\n")
    except ConfigError as exc:
        print(f"hyco: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"hyco: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(run())
