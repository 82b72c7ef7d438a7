"""Command-line experiment runner.

``qunravel run --config exp.ini [--out DIR] [--seed N] [--threads N]`` writes
CSV files into ``DIR``; ``qunravel validate --config exp.ini`` parses the
configuration and prints the validation report of its equation.

Every CSV starts with ``# config_sha256=<hash> version=<version>`` and a
header row; numbers are written with 17 significant digits. Failures print
one JSON line ``{"error": ..., "message": ...}`` on stderr and exit nonzero
(2: configuration, 3: numerical, 1: other).
"""
import argparse
import csv
import json
import os
import sys

import numpy as np

from . import __version__
from . import operators as ops
from .config import ConfigError, load_config
from .embedding import ancilla_state, build_embedding, integrate_embedded, series_blocks
from .equations import (integrate_density, min_isotropic_noise, pair, spa_deformed_step,
                        validate_canonical)
from .errors import (IllConditionedError, IntegrationError, NegativeRateError, NotHermitianError,
                     NotPSDError, PairingError, StepSizeError)
from .recovery import (excited_state, recover_by_martingale, recovery_series_by_embedding,
                       thermal_qubit_equation)
from .tolerances import set_tolerances
from .unraveling import (ensemble_estimate, padded_equation, simulate_trajectory,
                         variance_bound_check)

NUMERICAL_ERRORS = (IntegrationError, PairingError, StepSizeError, NotPSDError, NotHermitianError,
                    NegativeRateError, IllConditionedError, FloatingPointError)


# -- CSV output -----------------------------------------------------------------------

def _fmt(x):
    if isinstance(x, str):
        return x
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return "%.17g" % float(x)


class _Writer:
    def __init__(self, out_dir, digest):
        self.out_dir = out_dir
        self.digest = digest
        self.written = []

    def write(self, name, header, rows):
        path = os.path.join(self.out_dir, name)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write(f"# config_sha256={self.digest} version={__version__}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([_fmt(x) for x in row])
        self.written.append(path)


def _entry_names(d, prefix=""):
    names = []
    for i in range(d):
        for j in range(d):
            names += [f"re_{prefix}{i}{j}", f"im_{prefix}{i}{j}"]
    return names


def _entries(m):
    flat = np.asarray(m).reshape(-1)
    return [v for z in flat for v in (z.real, z.imag)]


def _density_rows(times, states):
    for t, rho in zip(times, states):
        yield [t] + _entries(rho) + [np.trace(rho).real, ops.min_eigenvalue(rho)]


def _density_header(d):
    return ["t"] + _entry_names(d) + ["trace", "min_eigenvalue"]


# -- helpers ---------------------------------------------------------------------------

def _mc_dt(cfg):
    return cfg.dt_mc if cfg.dt_mc is not None else cfg.dt


def _needs_padding(cfg, me):
    if cfg.pad == "yes":
        return True
    if cfg.pad == "no":
        return False
    grid = np.linspace(cfg.t0, cfg.t1, 11)
    return "povm condition violated" in validate_canonical(me, grid).failures


def _pairing(cfg, me, dt):
    n = ops._n_steps(cfg.t0, cfg.t1, dt)
    grid = np.linspace(cfg.t0, cfg.t1, n + 1)
    src = padded_equation(me, grid) if _needs_padding(cfg, me) else me
    shift = cfg.shift
    if shift is None:
        from .equations import optimal_c
        shift = lambda t: optimal_c(me, t)  # noqa: E731
    return pair(src, shift, grid=grid)


def _write_ensemble(writer, est, d, time_offset=0.0):
    header = (["t"] + _entry_names(d, "hat") + _entry_names(d, "tilde")
              + ["mu_mean", "mu_sq_mean", "se_mu", "se_mu_sq"]
              + ["se_" + n for n in _entry_names(d, "hat")]
              + ["se_" + n for n in _entry_names(d, "tilde")] + ["lambda_abs_max"])
    rows = []
    for k, t in enumerate(est.times):
        rows.append([t + time_offset] + _entries(est.rho_hat[k]) + _entries(est.rho_tilde_hat[k])
                    + [est.mu_mean[k], est.mu_sq_mean[k], est.se_mu[k], est.se_mu_sq[k]]
                    + _entries(est.se_rho_hat[k]) + _entries(est.se_rho_tilde_hat[k])
                    + [est.lambda_abs_max])
    writer.write("ensemble.csv", header, rows)


def _write_trajectories(writer, cfg, pr, dt):
    d = pr.source.dim
    S = ops._n_steps(cfg.t0, cfg.t1, dt)
    every = max(1, S // cfg.n_record)
    header = ["t", "traj_id"] + [f"{p}_psi{i}" for i in range(d) for p in ("re", "im")] + ["mu", "lambda"]
    rows = []
    for i in range(min(cfg.save_trajectories, cfg.n_traj)):
        tr = simulate_trajectory(pr, cfg.rho0, cfg.t0, cfg.t1, dt, cfg.seed, index=i,
                                 record_every=every)
        for k, t in enumerate(tr.times):
            rows.append([t, i] + [v for z in tr.psi[k] for v in (z.real, z.imag)]
                        + [tr.mu[k], tr.lam[k]])
    writer.write("trajectories.csv", header, rows)


def _recovery_header(d):
    return ["t", "method"] + _entry_names(d) + ["hs_error_rho0", "hs_error_forward"]


def _recovery_rows(times, states, method, rho0, forward_at):
    for t, rho in zip(times, states):
        yield ([t, method] + _entries(rho)
               + [ops.hs_distance(rho, rho0), ops.hs_distance(rho, forward_at(t))])


def _forward_lookup(fwd, t0, t1):
    """Forward state at the mirror time of an absolute recovery time."""
    h = fwd.times[1] - fwd.times[0]

    def at(t):
        k = int(np.rint((t1 - (t - t1) - t0) / h))
        return fwd.states[min(max(k, 0), len(fwd.states) - 1)]

    return at


# -- modes -------------------------------------------------------------------------------

def _mode_integrate(cfg, writer):
    ser = integrate_density(cfg.equation, cfg.rho0, cfg.t0, cfg.t1, cfg.dt, every=cfg.every)
    writer.write("density.csv", _density_header(cfg.equation.dim), _density_rows(ser.times, ser.states))


def _mode_unravel(cfg, writer):
    me = cfg.equation
    dt = _mc_dt(cfg)
    pr = _pairing(cfg, me, dt)
    est = ensemble_estimate(pr, cfg.rho0, cfg.t0, cfg.t1, dt, cfg.n_traj, cfg.seed,
                            n_record=cfg.n_record, threads=cfg.threads)
    _write_ensemble(writer, est, me.dim)
    rep = variance_bound_check(est)
    writer.write("bound.csv", ["t", "hs_distance_sq", "mu_sq_excess", "envelope", "combined_se", "ok"],
                 ([t, a, b, c, s, not v] for t, a, b, c, s, v in
                  zip(rep.times, rep.distance_sq, rep.mu_sq_excess, rep.envelope,
                      rep.combined_se, rep.violations)))
    _write_trajectories(writer, cfg, pr, dt)


def _mode_pair(cfg, writer):
    me = cfg.equation
    pr = _pairing(cfg, me, cfg.dt)
    d = me.dim
    src = integrate_density(me, cfg.rho0, cfg.t0, cfg.t1, cfg.dt, every=cfg.every)
    cp = integrate_density(pr.paired_cp, cfg.rho0, cfg.t0, cfg.t1, cfg.dt, every=cfg.every)
    writer.write("density.csv", _density_header(d), _density_rows(src.times, src.states))
    writer.write("paired.csv", _density_header(d), _density_rows(cp.times, cp.states))


def _mode_embed(cfg, writer):
    me = cfg.equation
    n = ops._n_steps(cfg.t0, cfg.t1, cfg.dt)
    grid = np.linspace(cfg.t0, cfg.t1, min(n, 1000) + 1)
    pr = pair(me, cfg.shift, grid=grid)
    eme = build_embedding(pr, grid=grid)
    ser = integrate_embedded(eme, ancilla_state(cfg.rho0), cfg.t0, cfg.t1, cfg.dt, every=cfg.every)
    rho_tilde, rho = series_blocks(eme, ser)
    d = me.dim
    writer.write("density.csv", _density_header(d), _density_rows(ser.times, rho))
    writer.write("paired.csv", _density_header(d), _density_rows(ser.times, rho_tilde))
    writer.write("embedded.csv", _density_header(2 * d), _density_rows(ser.times, ser.states))


def _forward(cfg, me, rho0):
    return integrate_density(me, rho0, cfg.t0, cfg.t1, cfg.dt, every=1)


def _write_forward(writer, cfg, fwd, d):
    idx = np.unique(np.append(np.arange(0, len(fwd.times), cfg.every), len(fwd.times) - 1))
    writer.write("density.csv", _density_header(d), _density_rows(fwd.times[idx], fwd.states[idx]))


def _embedding_rows(cfg, me, rho0, fwd):
    rec = recovery_series_by_embedding(me, fwd.final, cfg.t0, cfg.t1, cfg.dt, every=cfg.every)
    return list(_recovery_rows(cfg.t1 + rec.times, rec.states, "embedding", rho0,
                               _forward_lookup(fwd, cfg.t0, cfg.t1)))


def _martingale_rows(cfg, writer, me, rho0, fwd):
    est = recover_by_martingale(me, fwd.final, cfg.t0, cfg.t1, _mc_dt(cfg), cfg.n_traj, cfg.seed,
                                n_record=cfg.n_record, threads=cfg.threads)
    offset = cfg.t1 - cfg.t0
    _write_ensemble(writer, est, me.dim, time_offset=offset)
    return list(_recovery_rows(est.times + offset, est.rho_hat, "martingale", rho0,
                               _forward_lookup(fwd, cfg.t0, cfg.t1)))


def _mode_recover_embedding(cfg, writer):
    me, rho0 = cfg.equation, cfg.rho0
    fwd = _forward(cfg, me, rho0)
    _write_forward(writer, cfg, fwd, me.dim)
    writer.write("recovery.csv", _recovery_header(me.dim), _embedding_rows(cfg, me, rho0, fwd))


def _mode_recover_martingale(cfg, writer):
    me, rho0 = cfg.equation, cfg.rho0
    fwd = _forward(cfg, me, rho0)
    _write_forward(writer, cfg, fwd, me.dim)
    writer.write("recovery.csv", _recovery_header(me.dim),
                 _martingale_rows(cfg, writer, me, rho0, fwd))


def _mode_thermal(cfg, writer):
    me = thermal_qubit_equation(**cfg.thermal)
    rho0 = excited_state()
    fwd = _forward(cfg, me, rho0)
    _write_forward(writer, cfg, fwd, 2)
    rows = _embedding_rows(cfg, me, rho0, fwd) + _martingale_rows(cfg, writer, me, rho0, fwd)
    writer.write("recovery.csv", _recovery_header(2), rows)


def _mode_spa(cfg, writer):
    me = cfg.equation
    t = cfg.spa_time
    if t is None:
        grid = np.linspace(cfg.t0, cfg.t1, 101)
        neg = [s for s in grid if me.rates(s).min(initial=0.0) < 0.0]
        t = neg[-1] if neg else cfg.t1
    n_star = min_isotropic_noise(me, t)
    rows = []
    for dt in cfg.spa_dts:
        for f in cfg.spa_factors:
            step = spa_deformed_step(me, t, dt, f * n_star)
            rows.append([t, dt, f, f * n_star, ops.min_eigenvalue(ops.choi_matrix(step))])
    writer.write("spa.csv", ["t", "dt", "noise_factor", "noise_rate", "choi_min_eigenvalue"], rows)


MODE_RUNNERS = {
    "integrate": _mode_integrate,
    "unravel": _mode_unravel,
    "pair": _mode_pair,
    "embed": _mode_embed,
    "recover-embedding": _mode_recover_embedding,
    "recover-martingale": _mode_recover_martingale,
    "spa-scan": _mode_spa,
    "reproduce-thermal-qubit": _mode_thermal,
}


def run(cfg, out_dir):
    """Execute a parsed configuration; returns the written file paths."""
    os.makedirs(out_dir, exist_ok=True)
    previous = set_tolerances(**cfg.tolerances)
    try:
        writer = _Writer(out_dir, cfg.digest)
        MODE_RUNNERS[cfg.mode](cfg, writer)
        return writer.written
    finally:
        set_tolerances(**{k: getattr(previous, k) for k in cfg.tolerances})


def validate(cfg, stream=None):
    """Print the validation report; returns True when the equation is usable."""
    stream = sys.stdout if stream is None else stream
    me = thermal_qubit_equation(**cfg.thermal) if cfg.mode == "reproduce-thermal-qubit" else cfg.equation
    rep = validate_canonical(me, np.linspace(cfg.t0, cfg.t1, 101))
    print(f"mode = {cfg.mode}; dim = {me.dim}; channels = {me.n_channels}; "
          f"povm constant = {me.povm_constant:.12g}", file=stream)
    for line in rep.lines():
        print(line, file=stream)
    only_povm = rep.failures == ["povm condition violated"]
    if only_povm and cfg.pad != "no" and cfg.mode in ("unravel",):
        print("povm condition will be restored by padding", file=stream)
        return True
    return rep.passed


# -- entry point -----------------------------------------------------------------------------

def _error_line(kind, exc, **extra):
    payload = {"error": kind, "type": type(exc).__name__, "message": str(exc)}
    payload.update({k: v for k, v in extra.items() if v is not None})
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)


def build_parser():
    p = argparse.ArgumentParser(prog="qunravel", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run an experiment and write CSV files")
    r.add_argument("--config", required=True)
    r.add_argument("--out", default="out")
    r.add_argument("--seed", type=int, default=None)
    r.add_argument("--threads", type=int, default=None)
    v = sub.add_parser("validate", help="parse a configuration and print its validation report")
    v.add_argument("--config", required=True)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, seed=getattr(args, "seed", None),
                          threads=getattr(args, "threads", None))
        if args.command == "validate":
            return 0 if validate(cfg) else 1
        for path in run(cfg, args.out):
            print(path)
        return 0
    except ConfigError as exc:
        _error_line("config", exc, line=exc.line, field=exc.field)
        return 2
    except OSError as exc:
        _error_line("io", exc)
        return 2
    except NUMERICAL_ERRORS as exc:
        _error_line("numerical", exc, time=getattr(exc, "time", None))
        return 3
    except (ValueError, ArithmeticError, RuntimeError) as exc:
        _error_line("runtime", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
