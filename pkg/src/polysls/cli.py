"""Command-line surface: synthesis, verification, simulation, sweeps.

Human-readable summaries go to stdout; machine artifacts (CSV/JSON, plus a
rendered PNG next to each delimited file) go to the output directory.  Every
artifact embeds the resolved configuration fingerprint and seed, and reruns
with the same seed are byte-identical.

Exit codes: 0 success, 2 configuration error, 3 synthesis overflow,
4 verification failure, 5 closed-loop divergence.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigError, DivergenceError, ExpansionOverflowError, PolyslsError
from .synthesis import build_clms, build_g_table, verify_achievability
from .simulate import impulse_response, simulate, write_trajectory_csv
from .cost import mc_cost, optimize, sweep, trajectory_cost, write_sweep_csv
from .models import ModelConfig, load_clm, load_config, save_clm
from . import report

#: A loaded archive whose achievability residual exceeds this fails `verify`.
VERIFY_TOL = 1e-8

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_OVERFLOW = 3
EXIT_VERIFY = 4
EXIT_DIVERGED = 5


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="polysls",
        description="Synthesize and exercise FIR closed-loop maps for polynomial systems.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, desc in [
        ("synth", "build the maps, verify them, and write an archive"),
        ("verify", "check an archived pair against its model"),
        ("simulate", "roll the closed loop under configured disturbances"),
        ("impulse", "single-kick response of the closed loop"),
        ("sweep", "cost curve along a one-weight grid"),
        ("optimize", "projected gradient descent over the weight box"),
    ]:
        p = sub.add_parser(name, help=desc)
        p.add_argument("--config", required=True, help="path to a JSON configuration")
        p.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="override a config field (dotted path, JSON value); repeatable",
        )
        p.add_argument("--out", default=".", help="output directory (default: .)")
        p.add_argument("--seed", type=int, default=None, help="override disturbance.seed")
        p.add_argument("--trials", type=int, default=None, help="override cost.trials")
        p.add_argument("--horizon", type=int, default=None, help="override horizon")
        if name == "verify":
            p.add_argument("--clm", default=None, help="archive path (default: OUT/clm.json)")
    return parser


def _apply_overrides(doc: dict, args) -> dict:
    for item in args.overrides:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = doc
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"--set {key}: '{part}' is not an object")
        node[parts[-1]] = value
    if args.seed is not None:
        doc.setdefault("disturbance", {})["seed"] = args.seed
    if args.trials is not None:
        doc.setdefault("cost", {})["trials"] = args.trials
    if args.horizon is not None:
        doc["horizon"] = args.horizon
    return doc


def _load(args) -> ModelConfig:
    doc = load_config(args.config).doc  # validate the file on its own first
    doc = _apply_overrides(doc, args)
    return load_config(doc)


def _synthesize(cfg: ModelConfig):
    gtable = build_g_table(cfg.model, cfg.T, cfg.alpha, max_degree=cfg.max_degree)
    clms = build_clms(cfg.model, gtable, cfg.alpha)
    return gtable, clms


def _banner(cfg: ModelConfig) -> None:
    print(f"model: {cfg.model.name} (n={cfg.model.n}, fingerprint {cfg.model.fingerprint})")
    if cfg.model.params:
        rendered = ", ".join(f"{k}={v:g}" for k, v in cfg.model.params)
        print(f"params: {rendered}")
    print(f"T: {cfg.T}, weight slots: {len(cfg.alpha)}")


def cmd_synth(cfg: ModelConfig, out: Path) -> int:
    gtable, clms = _synthesize(cfg)
    residual = verify_achievability(clms, cfg.model, trials=1000, seed=cfg.disturbance.seed)
    _banner(cfg)
    print(f"c = {list(gtable.counts)}")
    print(f"achievability residual (1000 windows): {residual:.3e}")
    path = out / "clm.json"
    save_clm(
        clms,
        path,
        metadata={
            "config_fingerprint": cfg.fingerprint,
            "seed": cfg.disturbance.seed,
            "counts": list(gtable.counts),
        },
    )
    print(f"archive: {path}")
    return EXIT_OK


def cmd_verify(cfg: ModelConfig, out: Path, clm_path) -> int:
    path = Path(clm_path) if clm_path else out / "clm.json"
    clms = load_clm(path, model=cfg.model)
    residual = verify_achievability(clms, cfg.model, trials=1000, seed=cfg.disturbance.seed)
    _banner(cfg)
    print(f"archive: {path}")
    print(f"achievability residual (1000 windows): {residual:.3e} (tolerance {VERIFY_TOL:g})")
    if residual > VERIFY_TOL:
        print("verification FAILED", file=sys.stderr)
        return EXIT_VERIFY
    print("verification passed")
    return EXIT_OK


def cmd_simulate(cfg: ModelConfig, out: Path) -> int:
    _, clms = _synthesize(cfg)
    rng = np.random.default_rng(cfg.disturbance.seed)
    w = cfg.disturbance.sequence(cfg.horizon, cfg.model.n, rng)
    traj = simulate(cfg.model, clms, w, cfg.horizon, Q=cfg.cost.Q, R=cfg.cost.R)
    _banner(cfg)
    print(f"horizon: {cfg.horizon}, disturbance: {cfg.disturbance.kind} (seed {cfg.disturbance.seed})")
    print(f"total cost: {trajectory_cost(traj, cfg.cost):.6g}")
    csv_path = out / "trajectory.csv"
    write_trajectory_csv(traj, csv_path, fingerprint=cfg.fingerprint, seed=cfg.disturbance.seed)
    fig_path = out / "trajectory.png"
    report.save_trajectory_figure(traj, fig_path, title=f"{cfg.model.name}, T={cfg.T}")
    print(f"artifacts: {csv_path}, {fig_path}")
    return EXIT_OK


def cmd_impulse(cfg: ModelConfig, out: Path) -> int:
    _, clms = _synthesize(cfg)
    traj = impulse_response(
        cfg.model,
        clms,
        magnitude=cfg.disturbance.magnitude,
        coord=cfg.disturbance.coord,
        horizon=cfg.horizon,
    )
    _banner(cfg)
    print(
        f"impulse: {cfg.disturbance.magnitude:g} on coordinate {cfg.disturbance.coord}, "
        f"horizon {cfg.horizon}"
    )
    tail = np.abs(traj.states[cfg.T + 2 :]).max() if cfg.horizon > cfg.T + 1 else 0.0
    print(f"max |state| after window leaves ({cfg.T + 2}..): {tail:.3e}")
    csv_path = out / "impulse.csv"
    write_trajectory_csv(traj, csv_path, fingerprint=cfg.fingerprint, seed=cfg.disturbance.seed)
    fig_path = out / "impulse.png"
    report.save_trajectory_figure(traj, fig_path, title=f"{cfg.model.name} impulse, T={cfg.T}")
    print(f"artifacts: {csv_path}, {fig_path}")
    return EXIT_OK


def cmd_sweep(cfg: ModelConfig, out: Path) -> int:
    if cfg.sweep_slot is None:
        raise ConfigError("sweep: config has no 'sweep' block")
    points = sweep(
        cfg.model,
        cfg.T,
        cfg.alpha,
        cfg.sweep_slot,
        cfg.sweep_grid,
        cfg.cost,
        cfg.disturbance,
        max_degree=cfg.max_degree,
    )
    _banner(cfg)
    best = min(points, key=lambda p: p.total_cost)
    slot = f"{cfg.sweep_slot[0]}:{cfg.sweep_slot[1]}"
    print(f"sweep: slot {slot} over {len(points)} points")
    print(f"best: value={best.value:.4g} total_cost={best.total_cost:.6g}")
    csv_path = out / "sweep.csv"
    write_sweep_csv(points, csv_path, fingerprint=cfg.fingerprint, seed=cfg.disturbance.seed)
    fig_path = out / "sweep.png"
    report.save_sweep_figure(points, fig_path, title=f"{cfg.model.name}: slot {slot}")
    print(f"artifacts: {csv_path}, {fig_path}")
    return EXIT_OK


def cmd_optimize(cfg: ModelConfig, out: Path) -> int:
    result = optimize(
        cfg.model,
        cfg.T,
        cfg.alpha,
        cfg.cost,
        cfg.disturbance,
        cfg.optimize,
        max_degree=cfg.max_degree,
    )
    _banner(cfg)
    print(f"optimized cost: {result.cost:.6g} after {result.trace[-1].iteration} iterations")
    alpha_path = out / "alpha_opt.json"
    with open(alpha_path, "w") as fh:
        json.dump(
            {
                "config_fingerprint": cfg.fingerprint,
                "seed": cfg.disturbance.seed,
                "cost": result.cost,
                "alpha": result.alpha.to_doc(),
            },
            fh,
            indent=1,
        )
        fh.write("\n")
    trace_path = out / "trace.json"
    slots = [f"{k}:{j}" for k, j in result.alpha.slots]
    with open(trace_path, "w") as fh:
        json.dump(
            {
                "config_fingerprint": cfg.fingerprint,
                "seed": cfg.disturbance.seed,
                "slots": slots,
                "trace": [
                    {
                        "iteration": p.iteration,
                        "alpha": list(p.alpha),
                        "cost": p.cost,
                        "step_size": p.step_size,
                    }
                    for p in result.trace
                ],
            },
            fh,
            indent=1,
        )
        fh.write("\n")
    fig_path = out / "trace.png"
    report.save_trace_figure(result.trace, fig_path, title=f"{cfg.model.name}: descent")
    print(f"artifacts: {alpha_path}, {trace_path}, {fig_path}")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _load(args)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "synth":
            return cmd_synth(cfg, out)
        if args.command == "verify":
            return cmd_verify(cfg, out, args.clm)
        if args.command == "simulate":
            return cmd_simulate(cfg, out)
        if args.command == "impulse":
            return cmd_impulse(cfg, out)
        if args.command == "sweep":
            return cmd_sweep(cfg, out)
        if args.command == "optimize":
            return cmd_optimize(cfg, out)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ExpansionOverflowError as exc:
        print(f"synthesis overflow: {exc}", file=sys.stderr)
        return EXIT_OVERFLOW
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except PolyslsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
