"""Command-line entry points: gen, relax, certify, bench-kernels.

Every output JSON embeds a run manifest (command, resolved configuration,
seed, input hashes, version) so results can be reproduced bit-for-bit in
single-threaded mode.  Exit codes: 2 invalid flags, 3 I/O failure,
4 solver diagnostic failure.
"""

from __future__ import annotations

import hashlib
import json
import math
import sys
import time
from pathlib import Path

import click
import numpy as np

from . import __version__
from .bnb import BnbConfig, certificate_to_dict, certify
from .perspective import eval_g, prox_g, prox_g_conjugate, root_context
from .problem import (InvalidInstance, InvalidSpec, LossKind, SyntheticSpec,
                      generate_synthetic, load_instance_dir, save_instance_dir)
from .report import render_bench_figure, render_trace_figure
from .solver import NonFiniteIterate, SolverConfig, solve_relaxation, write_trace_csv

_RESTART_NAMES = {"gap": "gap", "function": "function", "none": "none"}
_METHOD_NAMES = {"pgd": "pgd", "fista": "fista-fixed", "fista-ls": "fista-linesearch"}


def _json_safe(obj):
    """Strict-JSON view: non-finite floats become None."""
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def _hash_file(path: Path) -> str:
    h = hashlib.sha256()
    h.update(path.read_bytes())
    return h.hexdigest()


def _manifest(command: str, config: dict, seed: int | None, inputs: dict | None) -> dict:
    return {
        "command": command,
        "config": config,
        "seed": seed,
        "input_hashes": inputs or {},
        "version": __version__,
    }


def _data_hashes(data_dir: Path) -> dict:
    out = {}
    for name in ("X.csv", "y.csv", "meta.json"):
        f = data_dir / name
        if f.exists():
            out[name] = _hash_file(f)
    return out


@click.group()
def main():
    """Certifiably optimal sparse GLMs via perspective relaxations."""


@main.command()
@click.option("--task", type=click.Choice(["squared", "logistic"]), default="squared")
@click.option("--n", type=int, required=True)
@click.option("--p", type=int, required=True)
@click.option("--k-true", type=int, required=True)
@click.option("--sigma", type=float, default=0.5, show_default=True)
@click.option("--snr", type=float, default=5.0, show_default=True)
@click.option("--coef", type=float, default=1.0, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
def gen(task, n, p, k_true, sigma, snr, coef, seed, out_dir):
    """Generate a synthetic instance into OUT (X.csv, y.csv, meta.json,
    beta_true.csv)."""
    spec = SyntheticSpec(n=n, p=p, k_true=k_true, sigma=sigma, snr=snr,
                         coef_magnitude=coef, seed=seed, task=LossKind(task))
    try:
        inst, beta_true = generate_synthetic(spec)
    except InvalidSpec as exc:
        raise click.UsageError(str(exc))
    config = {"task": task, "n": n, "p": p, "k_true": k_true, "sigma": sigma,
              "snr": snr, "coef": coef}
    meta = {
        "loss": task,
        "lambda2": 1.0,
        "M": 1.0,
        "k": k_true,
        "manifest": _manifest("gen", config, seed, None),
    }
    try:
        save_instance_dir(out_dir, inst.X, inst.y, meta, beta_true)
    except OSError as exc:
        click.echo(f"I/O failure: {exc}", err=True)
        sys.exit(3)
    click.echo(f"wrote instance to {out_dir}")


def _load(data_dir, lambda2, m, k):
    data_dir = Path(data_dir)
    try:
        inst = load_instance_dir(data_dir, lambda2=lambda2, M=m, k=k)
    except OSError as exc:
        click.echo(f"I/O failure: {exc}", err=True)
        sys.exit(3)
    except (InvalidInstance, ValueError) as exc:
        raise click.UsageError(str(exc))
    return inst, _data_hashes(data_dir)


@main.command()
@click.option("--data", "data_dir", type=click.Path(exists=True), required=True)
@click.option("--k", type=int, default=None, help="cardinality bound (overrides meta.json)")
@click.option("--m", type=float, default=None, help="box bound (overrides meta.json)")
@click.option("--lambda2", type=float, default=None, help="l2 coefficient (overrides meta.json)")
@click.option("--tol", type=float, default=1e-6, show_default=True)
@click.option("--method", type=click.Choice(sorted(_METHOD_NAMES)), default="fista-ls")
@click.option("--restart", type=click.Choice(sorted(_RESTART_NAMES)), default="gap")
@click.option("--eta", type=float, default=math.e ** 3, show_default="e^3")
@click.option("--max-iters", type=int, default=100_000, show_default=True)
@click.option("--time-limit", type=float, default=math.inf)
@click.option("--trace", "trace_path", type=click.Path(), default=None,
              help="write per-iteration CSV (iter,phi,psi,gap,restarted)")
@click.option("--plot/--no-plot", default=False,
              help="render a convergence figure next to the trace CSV")
def relax(data_dir, k, m, lambda2, tol, method, restart, eta, max_iters,
          time_limit, trace_path, plot):
    """Solve the root-node perspective relaxation; print a result JSON."""
    if tol <= 0:
        raise click.UsageError("--tol must be positive")
    if eta <= 1:
        raise click.UsageError("--eta must exceed 1")
    if plot and trace_path is None:
        raise click.UsageError("--plot requires --trace PATH")
    inst, hashes = _load(data_dir, lambda2, m, k)
    config = SolverConfig(method=_METHOD_NAMES[method], restart=restart, eta=eta,
                          tol_gap=tol, max_iters=max_iters, max_seconds=time_limit)
    ctx = root_context(inst.p, inst.k, inst.M)
    try:
        res = solve_relaxation(inst, ctx, config, trace=trace_path is not None)
    except NonFiniteIterate as exc:
        click.echo(f"solver diagnostic failure: {exc}", err=True)
        sys.exit(4)
    cfg_echo = {"k": inst.k, "M": inst.M, "lambda2": inst.lambda2, "tol": tol,
                "method": _METHOD_NAMES[method], "restart": restart, "eta": eta,
                "max_iters": max_iters, "time_limit": time_limit}
    out = {
        "phi": res.state.phi,
        "psi": res.state.psi,
        "gap": res.state.gap,
        "lower_bound": res.lower_bound,
        "iters": res.state.iter,
        "restarts": res.state.restarts,
        "seconds": res.seconds,
        "termination": res.termination,
        "manifest": _manifest("relax", cfg_echo, None, hashes),
    }
    if res.trace is not None and trace_path is not None:
        try:
            write_trace_csv(trace_path, res.trace)
        except OSError as exc:
            click.echo(f"I/O failure: {exc}", err=True)
            sys.exit(3)
        if plot:
            render_trace_figure(res.trace, Path(trace_path).with_suffix(".png"))
    click.echo(json.dumps(_json_safe(out), indent=2, sort_keys=True))


@main.command(name="certify")
@click.option("--data", "data_dir", type=click.Path(exists=True), required=True)
@click.option("--k", type=int, default=None)
@click.option("--m", type=float, default=None)
@click.option("--lambda2", type=float, default=None)
@click.option("--tol", type=float, default=1e-6, show_default=True,
              help="relaxation duality-gap tolerance")
@click.option("--gap-tol", type=float, default=1e-6, show_default=True,
              help="relative optimality-gap tolerance of the search")
@click.option("--method", type=click.Choice(sorted(_METHOD_NAMES)), default="fista-ls")
@click.option("--restart", type=click.Choice(sorted(_RESTART_NAMES)), default="gap")
@click.option("--eta", type=float, default=math.e ** 3)
@click.option("--time-limit", type=float, default=math.inf)
@click.option("--node-limit", type=int, default=1_000_000_000)
@click.option("--beam-width", type=int, default=5, show_default=True)
@click.option("--out", "out_path", type=click.Path(), default=None,
              help="also write the certificate JSON to this path")
def certify_cmd(data_dir, k, m, lambda2, tol, gap_tol, method, restart, eta,
                time_limit, node_limit, beam_width, out_path):
    """Run branch-and-bound and print the optimality certificate JSON."""
    if gap_tol <= 0 or tol <= 0:
        raise click.UsageError("tolerances must be positive")
    inst, hashes = _load(data_dir, lambda2, m, k)
    solver_cfg = SolverConfig(method=_METHOD_NAMES[method], restart=restart,
                              eta=eta, tol_gap=tol)
    config = BnbConfig(tol_rel=gap_tol, time_limit=time_limit,
                       node_limit=node_limit, beam_width=beam_width,
                       solver=solver_cfg)
    try:
        cert = certify(inst, config)
    except NonFiniteIterate as exc:
        click.echo(f"solver diagnostic failure: {exc}", err=True)
        sys.exit(4)
    cfg_echo = {"k": inst.k, "M": inst.M, "lambda2": inst.lambda2, "tol": tol,
                "gap_tol": gap_tol, "method": _METHOD_NAMES[method],
                "restart": restart, "eta": eta, "time_limit": time_limit,
                "node_limit": node_limit, "beam_width": beam_width}
    out = certificate_to_dict(cert, cfg_echo)
    out["manifest"] = _manifest("certify", cfg_echo, None, hashes)
    text = json.dumps(_json_safe(out), indent=2, sort_keys=True)
    if out_path is not None:
        try:
            Path(out_path).write_text(text + "\n")
        except OSError as exc:
            click.echo(f"I/O failure: {exc}", err=True)
            sys.exit(3)
    click.echo(text)


@main.command(name="bench-kernels")
@click.option("--p-list", default="1000,10000,100000", show_default=True,
              help="comma-separated dimensions")
@click.option("--k", type=int, default=10, show_default=True)
@click.option("--m", type=float, default=1.0, show_default=True)
@click.option("--rho", type=float, default=1.0, show_default=True)
@click.option("--repeats", type=int, default=5, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_path", type=click.Path(), default=None,
              help="write timing CSV here (default: stdout)")
@click.option("--plot/--no-plot", default=False,
              help="render a log-log scaling figure next to the CSV")
def bench_kernels(p_list, k, m, rho, repeats, seed, out_path, plot):
    """Time eval_g / prox of g* / prox of g on prox-generated inputs."""
    try:
        ps = [int(tok) for tok in p_list.split(",") if tok.strip()]
    except ValueError:
        raise click.UsageError(f"bad --p-list {p_list!r}")
    if not ps or min(ps) < 1 or k < 1 or m <= 0 or rho <= 0 or repeats < 1:
        raise click.UsageError("bench parameters out of range")
    rows = bench_kernel_timings(ps, k, m, rho, repeats, seed)
    lines = ["kernel,p,mean_seconds,std_seconds,repeats"]
    lines += [f"{kern},{p},{mu:.9g},{sd:.9g},{repeats}" for kern, p, mu, sd in rows]
    text = "\n".join(lines) + "\n"
    if out_path is not None:
        try:
            Path(out_path).write_text(text)
        except OSError as exc:
            click.echo(f"I/O failure: {exc}", err=True)
            sys.exit(3)
        if plot:
            render_bench_figure(rows, Path(out_path).with_suffix(".png"))
    else:
        click.echo(text, nl=False)


def bench_kernel_timings(ps, k, m, rho, repeats, seed=0):
    """Mean/std wall time of the three kernels across dimensions.

    Inputs follow the standard benchmark construction: gamma is standard
    normal and eval_g is timed on beta = prox_g(rho, gamma) so the argument
    lies in the regularizer's domain."""
    rows = []
    # warm the JIT so compile time is not measured
    warm_ctx = root_context(64, min(k, 64), m)
    prox_g_conjugate(warm_ctx, rho, np.zeros(64))
    for p in ps:
        ctx = root_context(p, min(k, p), m)
        times = {"eval_g": [], "prox_g_conjugate": [], "prox_g": []}
        for rep in range(repeats):
            rng = np.random.Generator(np.random.Philox(key=(seed << 44) ^ (p << 4) ^ rep))
            gamma = rng.standard_normal(p)
            beta = prox_g(ctx, rho, gamma)
            t0 = time.perf_counter()
            eval_g(ctx, beta)
            times["eval_g"].append(time.perf_counter() - t0)
            t0 = time.perf_counter()
            prox_g_conjugate(ctx, 1.0 / rho, gamma / rho)
            times["prox_g_conjugate"].append(time.perf_counter() - t0)
            t0 = time.perf_counter()
            prox_g(ctx, rho, gamma)
            times["prox_g"].append(time.perf_counter() - t0)
        for kern, ts in times.items():
            ts = np.asarray(ts)
            sd = float(ts.std(ddof=0)) if len(ts) > 1 else 0.0
            rows.append((kern, p, float(ts.mean()), sd))
    return rows


if __name__ == "__main__":
    main()
