"""Command-line surface: dataset generation, training, sampling, inversion.

Every parameter can come from a flag or a JSON config (``--config``); flags
win. Each run writes the fully resolved configuration next to its outputs,
and re-running from that file reproduces the outputs bit for bit. Exit
codes: 0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import dataio, metrics, report
from .burgers import BurgersConfig, generate_burgers_dataset
from .darcy import DarcySource, source_function
from .diffusion import VPSchedule
from .grf import CovarianceSpec, generate_darcy_dataset
from .grids import GridSpec
from .inverse import MeasurementSet, impute_sample, pod_basis, pod_reconstruct, repaint_sample
from .sampling import SamplerConfig, burgers_consistency, darcy_consistency, sample_loop
from .scorenet import (TrainConfig, load_checkpoint, measurement_condition,
                       save_checkpoint, train_conditional, train_unconditional)


class UsageError(Exception):
    pass


_GEN_DARCY_DEFAULTS = {
    "count": 2000, "n": 16, "s": 16, "cov_length": 0.25, "cov_mean": 0.0,
    "source_rate": 10.0, "source_width": 0.125, "seed": 0,
}
_GEN_BURGERS_DEFAULTS = {
    "count": 2000, "nu": 0.01, "nx": 64, "nt": 64, "dt": 0.01,
    "domain_length": 1.0, "seed": 0,
}
_TRAIN_DEFAULTS = {
    "conditional": "none", "epochs": 50, "batch_size": 128,
    "learning_rate": 1e-4, "seed": 0, "t_min": 1e-5, "width": 256,
    "hidden_layers": 4, "min_measurements": 8, "max_measurements": 64,
    "measurement_seed": 777,
}
_SAMPLE_DEFAULTS = {
    "equation": "pf_ode", "tau": 2000, "N": 0, "M": 0, "eps": "auto",
    "count": 16, "seed": 0, "images": 0, "figures": False, "gamma": 1.0,
    "theta_index": 0,
}
_IMPUTE_DEFAULTS = {
    "equation": "reverse_sde", "tau": 2000, "N": 0, "M": 0, "eps": "auto",
    "m": 64, "repaint_r": 0, "count": 1, "case_index": 0, "seed": 0,
    "measurement_seed": 777,
}
_POD_DEFAULTS = {"rank": 64, "m": 64, "case_index": 0, "measurement_seed": 777}
_EVAL_DEFAULTS = {"run_id": "run", "figures_dir": ""}


def _resolve(args, defaults):
    """defaults < config file < explicit flags."""
    resolved = dict(defaults)
    if getattr(args, "config", None):
        try:
            with open(args.config, encoding="utf-8") as fh:
                loaded = json.load(fh)
        except (OSError, json.JSONDecodeError) as err:
            raise UsageError(f"cannot read config {args.config}: {err}") from err
        if isinstance(loaded, dict) and "params" in loaded:
            loaded = loaded["params"]
        unknown = set(loaded) - set(defaults)
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        resolved.update(loaded)
    for key in defaults:
        flag = getattr(args, key, None)
        if flag is not None:
            resolved[key] = flag
    return resolved


def _write_resolved(command, resolved, out_path):
    if os.path.isdir(out_path) or not os.path.splitext(out_path)[1]:
        os.makedirs(out_path, exist_ok=True)
        target = os.path.join(out_path, "resolved_config.json")
    else:
        target = out_path + ".resolved.json"
    with open(target, "w", encoding="utf-8") as fh:
        json.dump({"command": command, "params": resolved}, fh, indent=2,
                  sort_keys=True)
        fh.write("\n")


def _parse_eps(value):
    if value in (None, "auto"):
        return None
    try:
        eps = float(value)
    except ValueError:
        raise UsageError(f"--eps must be 'auto' or a number, got {value!r}") from None
    if eps <= 0:
        raise UsageError(f"--eps must be positive, got {eps}")
    return eps


def _sched_from_header(header):
    s = header.get("schedule") or {}
    if not s:
        return VPSchedule()
    return VPSchedule(s["beta_min"], s["beta_max"], s["T"])


def _load_model(path, base_path=None):
    base = None
    if base_path:
        base, _ = load_checkpoint(base_path)
    return load_checkpoint(path, base=base)


def _standardized_states(ds, codec):
    if hasattr(ds, "slabs"):
        return codec.standardize(codec.flatten(ds.slabs))
    phys = np.stack(
        [codec.flatten(ds.pressure[k], ds.permeability[k]) for k in range(ds.count)]
    )
    return codec.standardize(phys)


def _measurement_indices(n_values, m, measurement_seed):
    if not 0 <= m <= n_values:
        raise UsageError(f"m={m} outside [0, {n_values}]")
    perm = np.random.default_rng(measurement_seed).permutation(n_values)
    return np.sort(perm[:m])


def cmd_gen_darcy(args):
    p = _resolve(args, _GEN_DARCY_DEFAULTS)
    ds = generate_darcy_dataset(
        p["count"], p["n"], p["s"],
        cov=CovarianceSpec(p["cov_length"], p["cov_mean"]),
        src=DarcySource(p["source_rate"], p["source_width"]),
        seed=p["seed"],
    )
    dataio.save_dataset(ds, args.out)
    _write_resolved("gen-darcy", p, args.out)
    print(f"wrote {ds.count} Darcy samples (n={p['n']}, s={p['s']}) to {args.out}")
    return 0


def cmd_gen_burgers(args):
    p = _resolve(args, _GEN_BURGERS_DEFAULTS)
    cfg = BurgersConfig(nu=p["nu"], nx=p["nx"], nt=p["nt"], dt=p["dt"],
                        L=p["domain_length"])
    ds = generate_burgers_dataset(p["count"], cfg, seed=p["seed"])
    dataio.save_dataset(ds, args.out)
    _write_resolved("gen-burgers", p, args.out)
    print(f"wrote {ds.count} Burgers slabs (nx={p['nx']}, nt={p['nt']}) to {args.out}")
    return 0


def cmd_train(args):
    p = _resolve(args, _TRAIN_DEFAULTS)
    ds, manifest = dataio.load_dataset(args.dataset)
    codec = dataio.dataset_codec(manifest)
    states = _standardized_states(ds, codec)
    sched = VPSchedule()
    cfg = TrainConfig(learning_rate=p["learning_rate"], batch_size=p["batch_size"],
                      epochs=p["epochs"], seed=p["seed"], t_min=p["t_min"])
    dataset_hash = manifest["files"][0]["sha256"]

    if p["conditional"] == "none":
        net = train_unconditional(states, sched, cfg, width=p["width"],
                                  hidden_layers=p["hidden_layers"])
    else:
        if not args.base:
            raise UsageError("--base checkpoint is required for conditional training")
        base, _ = load_checkpoint(args.base)
        if p["conditional"] == "theta":
            if hasattr(ds, "thetas"):
                conds = ds.thetas
            else:
                conds = ds.slabs[:, 0, :]  # Burgers: condition on the initial row
        elif p["conditional"] == "measurements":
            rng = np.random.default_rng(p["measurement_seed"])
            n_obs = int(codec.pressure_mask().sum())
            conds = []
            for k in range(states.shape[0]):
                m_k = int(rng.integers(p["min_measurements"],
                                       p["max_measurements"] + 1))
                idx = np.sort(rng.choice(n_obs, size=m_k, replace=False))
                conds.append(measurement_condition(codec.d, idx, states[k][idx]))
            conds = np.stack(conds)
        else:
            raise UsageError(f"unknown conditional mode {p['conditional']!r}")
        net = train_conditional(states, conds, base, sched, cfg)

    save_checkpoint(net, args.out, schedule=sched, dataset_hash=dataset_hash,
                    seed=p["seed"])
    _write_resolved("train", p, args.out)
    hist = net.loss_history
    print(f"trained {p['conditional']} model: {len(hist)} steps, "
          f"loss {hist[0]:.4f} -> {hist[-1]:.4f}; checkpoint at {args.out}")
    return 0


def _build_context(manifest, codec, ds):
    if manifest["pde"] == "darcy":
        src = DarcySource(manifest["params"]["source_rate"],
                          manifest["params"]["source_width"])
        f = source_function(src, GridSpec(manifest["n"]))
        return darcy_consistency(codec, f)
    return burgers_consistency(codec, ds.config)


def cmd_sample(args):
    p = _resolve(args, _SAMPLE_DEFAULTS)
    eps = _parse_eps(p["eps"])
    ds, manifest = dataio.load_dataset(args.dataset)
    codec = dataio.dataset_codec(manifest)
    net, header = _load_model(args.checkpoint)
    sched = _sched_from_header(header)
    if args.conditional_checkpoint:
        aug, _ = _load_model(args.conditional_checkpoint, base_path=args.checkpoint)
        if hasattr(ds, "thetas"):
            cond = ds.thetas[p["theta_index"]]
        else:
            cond = ds.slabs[p["theta_index"], 0, :]
        gamma = p["gamma"]
        score_fn = lambda y, t: (
            aug.forward(y, t, cond) if gamma == 1.0
            else gamma * aug.forward(y, t, cond) + (1.0 - gamma) * net.forward(y, t)
        )
    else:
        score_fn = net

    cfg = SamplerConfig(equation=p["equation"], tau=p["tau"], N=p["N"], M=p["M"],
                        eps=eps, seed=p["seed"])
    ctx = _build_context(manifest, codec, ds) if (cfg.N or cfg.M) else None
    t0 = time.time()
    run = sample_loop(score_fn, cfg, codec.d, sched, ctx=ctx, count=p["count"],
                      codec=codec)
    wall = time.time() - t0

    summary = {
        "equation": cfg.equation, "tau": cfg.tau, "N": cfg.N, "M": cfg.M,
        "eps": p["eps"], "seed": p["seed"], "pde": manifest["pde"],
        "score_evals": run.score_evals, "residual_evals": run.residual_evals,
        "wall_time_s": wall,
    }
    dataio.save_samples(run.states, summary, args.out)
    _write_resolved("sample", p, args.out)
    _emit_images(run.states, codec, manifest, p, args.out)
    print(f"sampled {p['count']} states with {cfg.equation}: "
          f"score evals/chain = {run.score_evals}, "
          f"residual evals/chain = {run.residual_evals}")
    return 0


def _emit_images(states, codec, manifest, p, out_dir):
    k = min(int(p.get("images", 0)), states.shape[0])
    for i in range(k):
        if manifest["pde"] == "darcy":
            pres, perm = codec.unflatten(states[i])
            dataio.emit_field_image(pres, os.path.join(out_dir, f"pressure_{i:03d}.pgm"))
            dataio.emit_field_image(perm, os.path.join(out_dir, f"permeability_{i:03d}.pgm"))
            if p.get("figures"):
                report.sample_figure(pres, perm,
                                     os.path.join(out_dir, f"sample_{i:03d}.png"))
        else:
            slab = codec.unflatten(states[i])
            dataio.emit_field_image(slab, os.path.join(out_dir, f"slab_{i:03d}.pgm"))
            if p.get("figures"):
                report.slab_figure(slab, manifest["params"]["dt"],
                                   manifest["params"]["L"],
                                   os.path.join(out_dir, f"slab_{i:03d}.png"))


def cmd_impute(args):
    p = _resolve(args, _IMPUTE_DEFAULTS)
    eps = _parse_eps(p["eps"])
    ds, manifest = dataio.load_dataset(args.dataset)
    if manifest["pde"] != "darcy":
        raise UsageError("impute currently targets Darcy datasets")
    codec = dataio.dataset_codec(manifest)
    net, header = _load_model(args.checkpoint)
    sched = _sched_from_header(header)
    case = int(p["case_index"])
    if not 0 <= case < ds.count:
        raise UsageError(f"case_index {case} outside dataset of {ds.count}")
    pressure_true = ds.pressure[case].ravel()
    indices = _measurement_indices(pressure_true.size, int(p["m"]),
                                   p["measurement_seed"])
    meas = MeasurementSet(indices, pressure_true[indices])

    cfg = SamplerConfig(equation=p["equation"], tau=p["tau"], N=p["N"], M=p["M"],
                        eps=eps, seed=p["seed"])
    ctx = _build_context(manifest, codec, ds) if (cfg.N or cfg.M) else None
    t0 = time.time()
    if int(p["repaint_r"]) > 0:
        run = repaint_sample(net, cfg, meas, codec, sched, int(p["repaint_r"]),
                             ctx=ctx, count=p["count"])
    else:
        run = impute_sample(net, cfg, meas, codec, sched, ctx=ctx, count=p["count"])
    wall = time.time() - t0

    target = codec.flatten(ds.pressure[case], ds.permeability[case])
    mask = codec.pressure_mask()
    diff = run.states - target
    summary = {
        "equation": cfg.equation, "tau": cfg.tau, "N": cfg.N, "M": cfg.M,
        "m": int(p["m"]), "r": int(p["repaint_r"]), "case_index": case,
        "seed": p["seed"], "pde": "darcy",
        "score_evals": run.score_evals, "residual_evals": run.residual_evals,
        "wall_time_s": wall,
        "pressure_sq_error": float(np.mean(np.sum(diff[:, mask] ** 2, axis=1))),
        "permeability_sq_error": float(np.mean(np.sum(diff[:, ~mask] ** 2, axis=1))),
    }
    dataio.save_samples(run.states, summary, args.out)
    _write_resolved("impute", p, args.out)
    print(f"imputed case {case} with m={p['m']}, r={p['repaint_r']}: "
          f"score evals/chain = {run.score_evals}, "
          f"pressure sq error = {summary['pressure_sq_error']:.3e}")
    return 0


def cmd_pod(args):
    p = _resolve(args, _POD_DEFAULTS)
    ds, manifest = dataio.load_dataset(args.dataset)
    if manifest["pde"] != "darcy":
        raise UsageError("pod currently targets Darcy datasets")
    codec = dataio.dataset_codec(manifest)
    states = np.stack([
        codec.flatten(ds.pressure[k], ds.permeability[k]) for k in range(ds.count)
    ])
    basis = pod_basis(states, int(p["rank"]))
    case = int(p["case_index"])
    if not 0 <= case < ds.count:
        raise UsageError(f"case_index {case} outside dataset of {ds.count}")
    pressure_true = ds.pressure[case].ravel()
    indices = _measurement_indices(pressure_true.size, int(p["m"]),
                                   p["measurement_seed"])
    meas = MeasurementSet(indices, pressure_true[indices])
    recon = pod_reconstruct(basis, meas)

    target = states[case]
    mask = codec.pressure_mask()
    summary = {
        "m": int(p["m"]), "r": 0, "case_index": case, "rank": int(p["rank"]),
        "pde": "darcy",
        "pressure_sq_error": float(np.sum((recon - target)[mask] ** 2)),
        "permeability_sq_error": float(np.sum((recon - target)[~mask] ** 2)),
    }
    dataio.save_samples(recon[None, :], summary, args.out)
    _write_resolved("pod", p, args.out)
    print(f"POD rank {p['rank']} reconstruction, m={p['m']}: "
          f"pressure sq error = {summary['pressure_sq_error']:.3e}, "
          f"permeability sq error = {summary['permeability_sq_error']:.3e}")
    return 0


def cmd_eval(args):
    p = _resolve(args, _EVAL_DEFAULTS)
    states, sample_manifest = dataio.load_samples(args.samples)
    ds, manifest = dataio.load_dataset(args.dataset)
    codec = dataio.dataset_codec(manifest)
    if manifest["pde"] == "darcy":
        from .darcy import residual_darcy
        from .grids import ScalarField
        grid = GridSpec(manifest["n"])
        f = source_function(DarcySource(manifest["params"]["source_rate"],
                                        manifest["params"]["source_width"]), grid)
        def residual_of(state):
            pres, perm = codec.unflatten(state)
            return residual_darcy(ScalarField(grid, perm), ScalarField(grid, pres), f).values
        baseline = manifest["residual_sumsq_mean"]
    else:
        from .burgers import SpaceTimeField, residual_burgers
        def residual_of(state):
            return residual_burgers(SpaceTimeField(codec.unflatten(state), ds.config))
        baseline = manifest.get("residual_sumsq_mean", 0.0)

    residuals = [residual_of(s) for s in states]
    row = metrics.eval_metrics(
        residuals, baseline,
        run_id=p["run_id"],
        equation=sample_manifest.get("equation", ""),
        tau=sample_manifest.get("tau", 0),
        N=sample_manifest.get("N", 0),
        M=sample_manifest.get("M", 0),
        m=sample_manifest.get("m", 0),
        r=sample_manifest.get("r", 0),
        score_evals=sample_manifest.get("score_evals", 0),
        residual_evals=sample_manifest.get("residual_evals", 0),
        wall_time_s=sample_manifest.get("wall_time_s", 0.0),
    )
    for field in ("pressure_sq_error", "permeability_sq_error"):
        if field in sample_manifest:
            setattr(row, field, sample_manifest[field])
    metrics.write_metrics_csv([row], args.metrics_out)
    if p["figures_dir"]:
        os.makedirs(p["figures_dir"], exist_ok=True)
        report.residual_histogram(
            [float(np.sum(np.square(r))) for r in residuals],
            os.path.join(p["figures_dir"], "residual_histogram.png"),
            title=f"{p['run_id']}: residual distribution",
        )
        if manifest["pde"] == "darcy":
            pres, perm = codec.unflatten(states[0])
            report.sample_figure(pres, perm,
                                 os.path.join(p["figures_dir"], "sample_000.png"),
                                 title=p["run_id"])
        else:
            report.slab_figure(codec.unflatten(states[0]),
                               manifest["params"]["dt"], manifest["params"]["L"],
                               os.path.join(p["figures_dir"], "slab_000.png"),
                               title=p["run_id"])
    print(f"metrics written to {args.metrics_out}: "
          f"mean sum r^2 = {row.mean_sum_sq_residual:.4g} "
          f"(excess over data {row.excess_residual:+.4g})")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="physgen",
        description="PDE field datasets, score-model training, and "
                    "physically-consistent sampling",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(sp):
        sp.add_argument("--config", help="JSON config file; flags override it")

    sp = sub.add_parser("gen-darcy", help="generate a Darcy flow dataset")
    sp.add_argument("--out", required=True)
    for key in _GEN_DARCY_DEFAULTS:
        flag = "--" + key.replace("_", "-")
        sp.add_argument(flag, type=float if key not in ("count", "n", "s", "seed") else int)
    add_common(sp)
    sp.set_defaults(func=cmd_gen_darcy)

    sp = sub.add_parser("gen-burgers", help="generate a Burgers slab dataset")
    sp.add_argument("--out", required=True)
    for key in _GEN_BURGERS_DEFAULTS:
        flag = "--" + key.replace("_", "-")
        sp.add_argument(flag, type=int if key in ("count", "nx", "nt", "seed") else float)
    add_common(sp)
    sp.set_defaults(func=cmd_gen_burgers)

    sp = sub.add_parser("train", help="train a score model on a dataset")
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--base", help="frozen base checkpoint (conditional modes)")
    sp.add_argument("--conditional", choices=["none", "theta", "measurements"])
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--batch-size", type=int)
    sp.add_argument("--learning-rate", type=float)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--t-min", type=float)
    sp.add_argument("--width", type=int)
    sp.add_argument("--hidden-layers", type=int)
    sp.add_argument("--min-measurements", type=int)
    sp.add_argument("--max-measurements", type=int)
    sp.add_argument("--measurement-seed", type=int)
    add_common(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("sample", help="draw samples from a trained model")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--dataset", required=True,
                    help="dataset supplying channel stats and PDE context")
    sp.add_argument("--out", required=True)
    sp.add_argument("--conditional-checkpoint")
    sp.add_argument("--equation", choices=["pf_ode", "reverse_sde"])
    sp.add_argument("--tau", type=int)
    sp.add_argument("--N", type=int)
    sp.add_argument("--M", type=int)
    sp.add_argument("--eps")
    sp.add_argument("--count", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--images", type=int, help="emit PGM images for first K samples")
    sp.add_argument("--figures", action="store_const", const=True, default=None,
                    help="also render PNG figures for the imaged samples")
    sp.add_argument("--gamma", type=float)
    sp.add_argument("--theta-index", type=int)
    add_common(sp)
    sp.set_defaults(func=cmd_sample)

    sp = sub.add_parser("impute", help="reconstruct fields from sparse measurements")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--m", type=int)
    sp.add_argument("--repaint-r", type=int)
    sp.add_argument("--equation", choices=["pf_ode", "reverse_sde"])
    sp.add_argument("--tau", type=int)
    sp.add_argument("--N", type=int)
    sp.add_argument("--M", type=int)
    sp.add_argument("--eps")
    sp.add_argument("--count", type=int)
    sp.add_argument("--case-index", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--measurement-seed", type=int)
    add_common(sp)
    sp.set_defaults(func=cmd_impute)

    sp = sub.add_parser("pod", help="gappy POD reconstruction baseline")
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--rank", type=int)
    sp.add_argument("--m", type=int)
    sp.add_argument("--case-index", type=int)
    sp.add_argument("--measurement-seed", type=int)
    add_common(sp)
    sp.set_defaults(func=cmd_pod)

    sp = sub.add_parser("eval", help="compute metrics (and figures) for samples")
    sp.add_argument("--samples", required=True)
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--metrics-out", required=True)
    sp.add_argument("--figures-dir")
    sp.add_argument("--run-id")
    add_common(sp)
    sp.set_defaults(func=cmd_eval)

    return parser


def cli_main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    try:
        return args.func(args)
    except UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return 1
    except Exception as err:  # runtime failure -> exit 2 with the reason
        print(f"error: {err}", file=sys.stderr)
        return 2


def main():
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
