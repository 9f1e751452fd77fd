"""Command-line entry point ``levy-hjm``.

Every artifact starts with a ``#`` header block: version, config hash, seed,
grid, and the effective configuration (one ``# | `` line per TOML line).  The
CSV body below the header is deterministic for a given config and seed.

Exit status: 0 all requested checks pass, 1 a check fails, 2 invalid
configuration, 3 numerical divergence.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, Model, build_model, load_config
from .hjm_drift import RadiusError, drift_from_cumulant, primitive_sigma, pushforward_triplet
from .invariant import (
    InadmissibleWeightError,
    b_infinity,
    existence_check,
    limit_cf,
    r_infinity,
    stationarity_test,
)
from .levy_driver import CumulantOverflowError
from .musiela_sim import SimConfig, martingale_test, simulate
from .weight_space import WeightError, check_admissible, decay_bound, h0_norm, inner_product_weights

log = logging.getLogger("levy_hjm")

OUTPUT_ENV = "LEVY_HJM_OUTPUT_DIR"
EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_DIVERGENCE = 0, 1, 2, 3


class Divergence(RuntimeError):
    """A numerical divergence flag; the message names the diagnostic."""


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "PASS" if x else "FAIL"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


class Writer:
    def __init__(self, model: Model, out: Path, timestamp: bool = False):
        self.model, self.out, self.timestamp = model, out, timestamp
        out.mkdir(parents=True, exist_ok=True)

    def header(self) -> str:
        cfg = self.model.config
        g = self.model.grid
        seed = cfg.simulation.seed if cfg.simulation is not None else "none"
        lines = [f"levy-hjm version: {__version__}", f"config sha256: {cfg.sha256}", f"seed: {seed}",
                 f"grid: x_max={_fmt(g.x_max)} n_points={g.n_points} dx={_fmt(g.dx)}"]
        if self.timestamp:
            lines.append(f"timestamp: {datetime.now(timezone.utc).isoformat()}")
        lines.append("config:")
        lines += ["| " + ln for ln in cfg.to_toml().splitlines()]
        return "".join(f"# {ln}\n" for ln in lines)

    def csv(self, name: str, columns, rows) -> Path:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(x) for x in r])
        return self._write(name, buf.getvalue())

    def text(self, name: str, body: str) -> Path:
        return self._write(name, body if body.endswith("\n") else body + "\n")

    def _write(self, name: str, body: str) -> Path:
        path = self.out / name
        path.write_text(self.header() + body)
        log.info("wrote %s", path)
        return path


def read_header_config(path) -> str:
    """Recover the echoed TOML configuration from an artifact header."""
    out = []
    for line in Path(path).read_text().splitlines():
        if not line.startswith("#"):
            break
        if line.startswith("# | ") or line == "# |":
            out.append(line[4:])
    return "\n".join(out) + "\n"


def _drift(model: Model, scale: float = 1.0):
    try:
        d = drift_from_cumulant(model.volatility, model.triplet)
    except (RadiusError, CumulantOverflowError) as exc:
        raise Divergence(f"drift: {exc}") from exc
    return d if scale == 1.0 else d.scaled(scale)


def _sim_config(model: Model, **over) -> SimConfig:
    sim = model.config.simulation
    if sim is None:
        raise ConfigError("simulation", "missing required section")
    kw = dict(dt=model.grid.dx, horizon=sim.horizon, n_paths=sim.n_paths, seed=sim.seed,
              snapshots=sim.snapshots, chunk_size=sim.chunk_size)
    kw.update(over)
    return SimConfig(**kw)


# -- subcommands -----------------------------------------------------------------------------


def cmd_check_weight(model: Model, w: Writer, args) -> int:
    rep = check_admissible(model.weight)
    w.text("weight_report.txt", rep.as_text())
    print(rep.as_text(), end="")
    print("PASS" if rep.admissible else "FAIL")
    return EXIT_OK if rep.admissible else EXIT_FAIL


def cmd_drift(model: Model, w: Writer, args) -> int:
    d = _drift(model)
    t = model.triplet
    gaussian = not t.jumps and not np.any(t.b0)
    cols = ["x", "f", "F", "psi_of_Sigma"]
    data = [model.grid.nodes, d.f.values, d.F, d.psi_sigma]
    if gaussian:
        # classical formula f = sigma^T R0 int_0^x sigma
        ref = np.einsum("kn,kl,nl->n", model.volatility.sigma, t.r0, -primitive_sigma(model.volatility))
        cols.append("f_gaussian")
        data.append(ref)
    w.csv("drift.csv", cols, zip(*data))
    tol = model.config.diagnostics.jj_tolerance
    ok = tol is None or d.jj_residual <= tol
    lines = [f"jj_residual = {_fmt(d.jj_residual)}"]
    if tol is not None:
        lines.append(f"jj_tolerance = {_fmt(tol)}")
    if gaussian:
        scale = max(float(np.max(np.abs(ref))), 1e-300)
        lines.append(f"max_rel_dev_gaussian = {_fmt(float(np.max(np.abs(d.f.values - ref))) / scale)}")
    lines.append("PASS" if ok else "FAIL")
    w.text("drift_summary.txt", "\n".join(lines))
    print("\n".join(lines))
    return EXIT_OK if ok else EXIT_FAIL


def cmd_simulate(model: Model, w: Writer, args) -> int:
    d = _drift(model)
    cfg = _sim_config(model, workers=args.workers)
    ens = simulate(model.initial, d, model.volatility, model.triplet, cfg)
    x = model.grid.nodes
    if args.aggregate:
        rows = ((t, xi, m, s) for k, t in enumerate(ens.times)
                for xi, m, s in zip(x, ens.curves[:, k].mean(axis=0), ens.curves[:, k].std(axis=0, ddof=0)))
        w.csv("snapshots.csv", ["time", "x", "mean", "sd"], rows)
        ints = ens.integral
        w.csv("discount.csv", ["time", "mean_I", "sd_I"],
              zip(ens.times, ints.mean(axis=0), ints.std(axis=0, ddof=0)))
    else:
        rows = ((p, t, xi, val) for p in range(len(ens)) for k, t in enumerate(ens.times)
                for xi, val in zip(x, ens.curves[p, k]))
        w.csv("snapshots.csv", ["path_id", "time", "x", "value"], rows)
        w.csv("discount.csv", ["path_id", "time", "I", "jumps"],
              ((p, t, ens.integral[p, k], ens.jump_counts[p]) for p in range(len(ens))
               for k, t in enumerate(ens.times)))
    print(f"simulated {len(ens)} paths, {len(ens.times)} snapshots")
    return EXIT_OK


def cmd_martingale(model: Model, w: Writer, args) -> int:
    diag = model.config.diagnostics
    if diag.tau is None or not diag.test_times:
        raise ConfigError("diagnostics.tau", "martingale-test needs tau and test_times")
    d = _drift(model, args.drift_scale)
    cfg = _sim_config(model, workers=args.workers)
    cv = diag.control_variate or args.control_variate
    rep = martingale_test(model.initial, d, model.volatility, model.triplet, cfg, diag.tau, diag.test_times,
                          control_variate=cv)
    cols = ["time", "tau", "p0", "mean", "se", "z", "cv_mean", "cv_se", "cv_z", "result"]
    w.csv("martingale.csv", cols,
          ((r.time, rep.tau, rep.p0, r.mean, r.se, r.z, r.cv_mean, r.cv_se, r.cv_z, r.passed) for r in rep.rows))
    lines = [f"drift_scale = {_fmt(args.drift_scale)}", f"n_paths = {rep.n_paths}",
             f"jump_total = {rep.jump_total}", f"jumps_per_path = {_fmt(rep.jumps_per_path)}",
             f"control_variate = {cv}"]
    lines += [f"t = {_fmt(r.time)}: z = {r.z:+.3f}" + (f" cv_z = {r.cv_z:+.3f}" if cv else "")
              + f" {_fmt(r.passed)}" for r in rep.rows]
    lines.append("PASS" if rep.passed else "FAIL")
    w.text("martingale_summary.txt", "\n".join(lines))
    print("\n".join(lines))
    return EXIT_OK if rep.passed else EXIT_FAIL


def cmd_invariant(model: Model, w: Writer, args) -> int:
    d = _drift(model)
    v, t, wt = model.volatility, model.triplet, model.weight
    try:
        rep = existence_check(v, t, d, wt)
    except InadmissibleWeightError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_FAIL
    b = b_infinity(pushforward_triplet(v, t, d, wt))
    w.csv("b_inf.csv", ["x", "b_inf", "first_term", "correction"],
          zip(model.grid.nodes, b.curve.values, b.first_term.values, b.correction.values))
    names = list(model.test_curves)
    rows = []
    for a in names:
        for c in names:
            r = r_infinity(v, t, wt, model.test_curves[a], model.test_curves[c])
            rows.append((a, c, r.value, r.tail_bound))
    w.csv("r_inf.csv", ["curve_1", "curve_2", "value", "tail_bound"], rows)
    w.text("existence.txt", rep.as_text())
    print(rep.as_text())
    if b.divergent:
        raise Divergence("b_inf: Muckenhoupt constant infinite")
    return EXIT_OK if rep.passed else EXIT_FAIL


def cmd_cf_compare(model: Model, w: Writer, args) -> int:
    diag = model.config.diagnostics
    if diag.cf_curve is None or not diag.cf_times:
        raise ConfigError("diagnostics.cf_curve", "cf-compare needs cf_curve and cf_times")
    d = _drift(model)
    wc = model.test_curves[diag.cf_curve]
    k = inner_product_weights(model.grid, model.weight, wc)
    t1, t2 = diag.cf_times
    cfg = _sim_config(model, horizon=t2, snapshots=(t1, t2), workers=args.workers)
    ens = simulate(model.initial, d, model.volatility, model.triplet, cfg, observables={"wc": k},
                   keep_curves=False)
    th = diag.thetas
    lim = limit_cf(model.volatility, model.triplet, d, model.weight, wc, th)
    transient = decay_bound(model.weight, t1) * h0_norm(model.initial, model.weight)
    rep = stationarity_test(ens, "wc", th, (t1, t2), lim.exponent, transient=transient)
    w.csv("cf.csv", ["theta", "emp_re_T1", "emp_im_T1", "emp_re_T2", "emp_im_T2", "limit_re", "limit_im"],
          zip(th, rep.cf_first.real, rep.cf_first.imag, rep.cf_second.real, rep.cf_second.imag,
              rep.cf_limit.real, rep.cf_limit.imag))
    lines = [f"n_paths = {rep.n_paths}", f"T1 = {_fmt(t1)}", f"T2 = {_fmt(t2)}",
             f"sup_dev_T1_T2 = {_fmt(rep.two_sample)}", f"sup_dev_T1_limit = {_fmt(rep.limit_first)}",
             f"sup_dev_T2_limit = {_fmt(rep.limit_second)}", f"tolerance = {_fmt(rep.tolerance)}",
             f"tolerance_constant = {_fmt(rep.constant)}", f"limit_tail_bound = {_fmt(lim.tail_bound)}"]
    if rep.advisory:
        lines.append(f"advisory: {rep.advisory}")
    lines.append("PASS" if rep.passed else "FAIL")
    w.text("cf_summary.txt", "\n".join(lines))
    print("\n".join(lines))
    return EXIT_OK if rep.passed else EXIT_FAIL


COMMANDS = {
    "check-weight": cmd_check_weight,
    "drift": cmd_drift,
    "simulate": cmd_simulate,
    "martingale-test": cmd_martingale,
    "invariant": cmd_invariant,
    "cf-compare": cmd_cf_compare,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="levy-hjm", description="Lévy-driven HJM forward-curve diagnostics")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("config", help="TOML model configuration")
        s.add_argument("--out", help=f"output directory (default: ${OUTPUT_ENV} or ./out)")
        s.add_argument("--timestamp", action="store_true", help="add a UTC timestamp to artifact headers")
        s.add_argument("-v", "--verbose", action="store_true")
        if name in ("simulate", "martingale-test", "cf-compare"):
            s.add_argument("--workers", type=int, default=1, help="threads over path chunks")
        if name == "simulate":
            s.add_argument("--aggregate", action="store_true", help="write per-node mean and sd instead of paths")
        if name == "martingale-test":
            s.add_argument("--drift-scale", type=float, default=1.0, help="multiply the drift (negative control)")
            s.add_argument("--control-variate", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    out = Path(args.out or os.environ.get(OUTPUT_ENV) or "out")
    try:
        model = build_model(load_config(args.config))
        return COMMANDS[args.command](model, Writer(model, out, args.timestamp), args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (WeightError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Divergence as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
