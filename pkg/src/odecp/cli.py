"""Command-line surface: synth, train, rank-report, predict, eval.

Every training run owns a directory ``runs/<name>/`` containing the
effective config (key=value, flags override a config file), ``history.csv``,
the binary ``checkpoint``, and a ``report/`` directory where the analysis
commands drop CSVs and rendered figures. Exit code 0 on success; errors go
to stderr with a nonzero exit code.
"""

from __future__ import annotations

import argparse
import csv
import subprocess
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .data import (CsvFormatError, ObservationSet, SplitSpec, gen_synthetic,
                   load_csv, save_csv, split)
from .model import ModelConfig, OdeCpModel, PriorHyper
from .prediction import evaluate, predict_interval, predictive_params, PredictiveLaw
from .rank import component_power, reveal_rank
from .report import (render_metric_figure, render_prediction_figure,
                     render_rank_figures)
from .training import TrainConfig, TrainHistory, train

CONFIG_DEFAULTS = {
    "rank": 5,
    "state_dim": 5,
    "fourier_dim": 32,
    "encoder_hidden": "100",
    "dynamics_hidden": "100,100",
    "decoder_hidden": "100,100",
    "solver": "rk4",
    "step": "auto",
    "lr": 5e-3,
    "epochs": 2000,
    "batch": "full",
    "seed": 0,
    "a0": 1e-6,
    "b0": 1e-6,
    "c0": 1e-6,
    "d0": 1e-6,
    "init": 1e-6,
    "objective": "elbo",
    "theta_power": 1e-2,
    "theta_lambda": 10.0,
}


def version_string() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"],
                             capture_output=True, text=True, timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+g{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def read_config_file(path) -> dict[str, str]:
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise CsvFormatError(f"{path}:{lineno}: expected key=value")
        key, _, val = line.partition("=")
        values[key.strip()] = val.strip()
    return values


def effective_config(args) -> dict[str, str]:
    merged = {k: str(v) for k, v in CONFIG_DEFAULTS.items()}
    if getattr(args, "config", None):
        file_values = read_config_file(args.config)
        unknown = set(file_values) - set(CONFIG_DEFAULTS)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        merged.update(file_values)
    for key in CONFIG_DEFAULTS:
        flag = getattr(args, key, None)
        if flag is not None:
            merged[key] = str(flag)
    return merged


def _widths(text: str) -> tuple[int, ...]:
    text = text.strip()
    if not text or text in ("none", "-"):
        return ()
    return tuple(int(p) for p in text.split(","))


def model_from_config(cfg: dict[str, str], n_modes: int) -> OdeCpModel:
    rank = int(cfg["rank"])
    prior = PriorHyper.default(rank, float(cfg["a0"]), float(cfg["b0"]),
                               float(cfg["c0"]), float(cfg["d0"]))
    config = ModelConfig(
        n_modes=n_modes, rank=rank, state_dim=int(cfg["state_dim"]),
        fourier_dim=int(cfg["fourier_dim"]),
        encoder_hidden=_widths(cfg["encoder_hidden"]),
        dynamics_hidden=_widths(cfg["dynamics_hidden"]),
        decoder_hidden=_widths(cfg["decoder_hidden"]),
        seed=int(cfg["seed"]),
    )
    return OdeCpModel(config, prior=prior, init_value=float(cfg["init"]))


def train_config_from(cfg: dict[str, str]) -> TrainConfig:
    step = None if cfg["step"] == "auto" else float(cfg["step"])
    batch = None if cfg["batch"] == "full" else int(cfg["batch"])
    return TrainConfig(epochs=int(cfg["epochs"]), learning_rate=float(cfg["lr"]),
                       batch_size=batch, seed=int(cfg["seed"]),
                       method=cfg["solver"], step=step,
                       objective=cfg["objective"])


def write_config(path, cfg: dict[str, str]) -> None:
    lines = [f"version={version_string()}"]
    lines += [f"{k}={cfg[k]}" for k in sorted(cfg)]
    Path(path).write_text("\n".join(lines) + "\n")


def write_history_csv(path, history: TrainHistory, append: bool = False) -> None:
    rank = history.lambda_mean[0].size if history.lambda_mean else 0
    mode = "a" if append and Path(path).exists() else "w"
    with open(path, mode, newline="") as fh:
        writer = csv.writer(fh)
        if mode == "w":
            writer.writerow(["epoch", "elbo"]
                            + [f"lambda_mean_{r + 1}" for r in range(rank)]
                            + [f"power_{r + 1}" for r in range(rank)])
        for i, epoch in enumerate(history.epochs):
            writer.writerow([epoch, repr(float(history.elbo[i]))]
                            + [repr(float(v)) for v in history.lambda_mean[i]]
                            + [repr(float(v)) for v in history.power[i]])


def read_history_csv(path) -> TrainHistory:
    history = TrainHistory()
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rank = sum(1 for h in header if h.startswith("lambda_mean_"))
        for rec in reader:
            history.append(int(rec[0]), float(rec[1]),
                           np.array([float(v) for v in rec[2:2 + rank]]),
                           np.array([float(v) for v in rec[2 + rank:2 + 2 * rank]]))
    return history


def read_coords(path):
    """Raw (unnormalized) query coordinates, plus y / y_clean when present."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise CsvFormatError(f"{path}: empty file") from None
        k = sum(1 for h in header if h.startswith("i_"))
        if k < 1 or header[:k] != [f"i_{j + 1}" for j in range(k)] or \
                len(header) <= k or header[k] != "t":
            raise CsvFormatError(f"{path}: expected header i_1,...,i_K,t[,y[,y_clean]]")
        has_y = len(header) > k + 1 and header[k + 1] == "y"
        has_clean = has_y and len(header) > k + 2 and header[k + 2] == "y_clean"
        rows = []
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            try:
                rows.append([float(v) for v in rec])
            except ValueError as exc:
                raise CsvFormatError(f"{path}:{lineno}: {exc}") from None
    if not rows:
        raise CsvFormatError(f"{path}: no data rows")
    arr = np.asarray(rows, dtype=np.float64)
    return {
        "indexes": arr[:, :k],
        "times": arr[:, k],
        "values": arr[:, k + 1] if has_y else None,
        "clean": arr[:, k + 2] if has_clean else None,
    }


def _run_paths(run_dir):
    run = Path(run_dir)
    return {
        "run": run,
        "config": run / "config",
        "history": run / "history.csv",
        "checkpoint": run / "checkpoint",
        "report": run / "report",
    }


def cmd_synth(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    obs = gen_synthetic(args.n1, args.n2, args.nt, args.noise, args.seed,
                        lattice_jitter=args.lattice_jitter)
    train_set, test_set = split(obs, SplitSpec(train_fraction=args.train_frac,
                                               seed=args.seed))
    save_csv(obs, out / "data.csv")
    save_csv(obs, out / "truth.csv", with_clean=True)
    save_csv(train_set, out / "train.csv", with_clean=True)
    save_csv(test_set, out / "test.csv", with_clean=True)
    Path(out / "gen_config").write_text(
        "\n".join([f"version={version_string()}",
                   f"n1={args.n1}", f"n2={args.n2}", f"nt={args.nt}",
                   f"noise={args.noise}", f"seed={args.seed}",
                   f"train_frac={args.train_frac}",
                   f"lattice_jitter={args.lattice_jitter}"]) + "\n")
    print(f"wrote {obs.n} observations ({train_set.n} train / {test_set.n} test) "
          f"to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = effective_config(args)
    paths = _run_paths(args.run)
    paths["run"].mkdir(parents=True, exist_ok=True)
    obs = load_csv(args.data)

    start_epoch = 0
    if args.resume:
        model, start_epoch, _ = load_checkpoint(paths["checkpoint"])
    else:
        model = model_from_config(cfg, obs.n_modes)
    write_config(paths["config"], cfg)

    tc = train_config_from(cfg)
    interval = args.checkpoint_every

    def on_epoch(epoch, current, history):
        if interval and (epoch + 1) % interval == 0:
            save_checkpoint(paths["checkpoint"], current, epoch + 1, obs.norm)

    model, history = train(obs, model, tc, start_epoch=start_epoch,
                           on_epoch=on_epoch)
    end_epoch = start_epoch + tc.epochs
    save_checkpoint(paths["checkpoint"], model, end_epoch, obs.norm)
    write_history_csv(paths["history"], history, append=args.resume)
    final = history.elbo[-1] if history.elbo else float("nan")
    print(f"trained epochs {start_epoch}..{end_epoch - 1}, "
          f"final objective {final:.6g}; run dir: {paths['run']}")
    return 0


def _normalized_obs(raw, norm) -> ObservationSet:
    idx, t = norm.normalize(raw["indexes"], raw["times"])
    values = raw["values"] if raw["values"] is not None else np.zeros(t.size)
    return ObservationSet(idx, t, values, clean=raw["clean"])


def cmd_rank_report(args) -> int:
    paths = _run_paths(args.run)
    model, _, norm = load_checkpoint(paths["checkpoint"])
    raw = read_coords(args.data)
    obs = _normalized_obs(raw, norm)
    solver, step = _solver_args(args, paths)

    power = component_power(model, obs, solver, step)
    report = reveal_rank(model, obs, theta_power=args.theta_power,
                         theta_lambda=args.theta_lambda, power=power,
                         method=solver, step=step)
    paths["report"].mkdir(parents=True, exist_ok=True)
    with open(paths["report"] / "rank_report.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["rank", "power", "lambda_mean", "inv_lambda_mean",
                         "inv_lambda_plugin", "active"])
        for r in range(model.rank):
            writer.writerow([r + 1, repr(float(report.power[r])),
                             repr(float(report.lambda_mean[r])),
                             repr(float(report.inv_lambda_mean[r])),
                             repr(float(report.inv_lambda_plugin[r])),
                             int(report.active[r])])
    history = read_history_csv(paths["history"]) if paths["history"].exists() else None
    figures = render_rank_figures(history, report, paths["report"])
    print(f"revealed rank: {report.revealed_rank} of {model.rank}")
    print(f"report: {paths['report'] / 'rank_report.csv'} "
          f"+ {len(figures)} figure(s)")
    return 0


def _solver_args(args, paths):
    solver = args.solver
    step = args.step
    if solver is None or step is None:
        cfg = dict(CONFIG_DEFAULTS | read_config_file(paths["config"])) \
            if paths["config"].exists() else dict(CONFIG_DEFAULTS)
        if solver is None:
            solver = str(cfg.get("solver", "rk4"))
        if step is None:
            raw = str(cfg.get("step", "auto"))
            step = None if raw == "auto" else float(raw)
    elif step == "auto":
        step = None
    if isinstance(step, str):
        step = None if step == "auto" else float(step)
    return solver, step


def cmd_predict(args) -> int:
    paths = _run_paths(args.run)
    model, _, norm = load_checkpoint(paths["checkpoint"])
    raw = read_coords(args.coords)
    if raw["indexes"].shape[1] != len(model.modes):
        raise ValueError(f"expected {len(model.modes)} index columns, "
                         f"got {raw['indexes'].shape[1]}")
    idx, t = norm.normalize(raw["indexes"], raw["times"])
    solver, step = _solver_args(args, paths)
    mean, scale, dof = predictive_params(model, idx, t, solver, step)
    los, his = [], []
    for m, s, v in zip(mean, scale, dof):
        lo, hi = predict_interval(PredictiveLaw(float(m), float(s), float(v)),
                                  args.level)
        los.append(lo)
        his.append(hi)

    out = Path(args.out)
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh)
        k = raw["indexes"].shape[1]
        writer.writerow([f"i_{j + 1}" for j in range(k)]
                        + ["t", "mean", "scale", "dof", "lo", "hi"])
        for n in range(t.size):
            writer.writerow([repr(float(v)) for v in raw["indexes"][n]]
                            + [repr(float(raw["times"][n])), repr(float(mean[n])),
                               repr(float(scale[n])), repr(float(dof[n])),
                               repr(float(los[n])), repr(float(his[n]))])
    print(f"wrote {t.size} predictions to {out}")
    if args.plot:
        path = render_prediction_figure(raw["times"], mean, los, his, args.plot,
                                        observed=raw["values"])
        print(f"figure: {path}")
    return 0


def cmd_eval(args) -> int:
    paths = _run_paths(args.run)
    model, _, norm = load_checkpoint(paths["checkpoint"])
    raw = read_coords(args.data)
    if raw["values"] is None:
        raise ValueError(f"{args.data}: eval needs a y column")
    obs = _normalized_obs(raw, norm)
    solver, step = _solver_args(args, paths)
    rmse, mae = evaluate(model, obs, solver, step, against=args.against)
    print(f"rmse={rmse:.6g} mae={mae:.6g} (against {args.against}, n={obs.n})")

    paths["report"].mkdir(parents=True, exist_ok=True)
    with open(paths["report"] / "metrics.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "value"])
        writer.writerow(["rmse", repr(rmse)])
        writer.writerow(["mae", repr(mae)])
        writer.writerow(["n", obs.n])
        writer.writerow(["against", args.against])
    target = obs.clean if args.against == "clean" else obs.values
    mean, _, _ = predictive_params(model, obs.indexes, obs.times, solver, step)
    render_metric_figure(mean, target, paths["report"] / "eval_scatter.png")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="odecp",
        description="Temporal tensor decomposition with ODE factor trajectories "
                    "and automatic rank determination.")
    parser.add_argument("--version", action="version", version=version_string())
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the synthetic dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--n1", type=int, default=25)
    p.add_argument("--n2", type=int, default=25)
    p.add_argument("--nt", type=int, default=50)
    p.add_argument("--noise", type=float, default=0.05,
                   help="Gaussian noise variance")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--train-frac", type=float, default=0.2)
    p.add_argument("--lattice-jitter", action="store_true",
                   help="jittered regular grid instead of uniform draws")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="fit a model, write checkpoint + history")
    p.add_argument("--data", required=True)
    p.add_argument("--run", required=True, help="run directory")
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--resume", action="store_true",
                   help="continue from the run's checkpoint")
    p.add_argument("--checkpoint-every", type=int, default=0)
    for key, default in CONFIG_DEFAULTS.items():
        kind = type(default) if not isinstance(default, str) else str
        p.add_argument(f"--{key.replace('_', '-')}", type=kind, default=None,
                       dest=key)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("rank-report", help="emit rank report CSV + figures")
    p.add_argument("--run", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--theta-power", type=float, default=1e-2)
    p.add_argument("--theta-lambda", type=float, default=10.0)
    p.add_argument("--solver", default=None)
    p.add_argument("--step", default=None)
    p.set_defaults(func=cmd_rank_report)

    p = sub.add_parser("predict", help="predictive distribution at coordinates")
    p.add_argument("--run", required=True)
    p.add_argument("--coords", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--plot", help="render the predictions to this PNG")
    p.add_argument("--solver", default=None)
    p.add_argument("--step", default=None)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="RMSE/MAE against a data file")
    p.add_argument("--run", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--against", choices=("observed", "clean"), default="observed")
    p.add_argument("--solver", default=None)
    p.add_argument("--step", default=None)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, RuntimeError, LookupError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
