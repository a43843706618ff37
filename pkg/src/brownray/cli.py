"""Batch front end: ``brownray --command {simulate,estimate,queue-infer,price}``.

Settings come from built-in defaults, then an optional ``--config`` file of
``key=value`` lines, then command-line flags.  Every report carries the
library version and a hash of the resolved settings and input content, so a
(config, seed) pair fully determines the output bytes.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from . import io
from .errors import BrownRayError, ConstraintViolation, NegativeTheta, NonConvergence, SingularMatrix
from .estimate import ESTIMATORS, fit_full
from .model import RaySystem
from .option import OptionSpec, PriceSeries, bsm_price, estimate_theta_beta, estimate_theta_xi, implied_theta
from .queue import MCConfig, queue_relevant_history, tobit_iterate
from .simulate import EXTENSIONS, sample_panel, simulate_queue_trace

COMMANDS = ("simulate", "estimate", "queue-infer", "price")
STOCHASTIC = ("simulate", "queue-infer")

DEFAULTS = {
    "seed": None,
    "m_max": 5,
    "horizon": None,
    "estimator": "dispersion",
    "paths": 5000,
    "refinement": 16,
    "bandwidth": None,
    "tol": None,
    "max_iter": 50,
    "kind": "panel",
    "n": 1000,
    "phi": "4.5",
    "delta": "3",
    "weights": None,
    "rho": 0.0,
    "q0": 0.0,
    "extension": "markov",
    "spot": None,
    "strike": None,
    "rate": 0.0,
    "t0": 0.0,
    "te": 1.0,
    "market_price": None,
}
INTS = {"seed", "m_max", "horizon", "paths", "refinement", "max_iter", "n"}
FLOATS = {"bandwidth", "tol", "rho", "q0", "spot", "strike", "rate", "t0", "te", "market_price"}
POSITIVE = {"m_max", "horizon", "paths", "refinement", "max_iter", "n", "bandwidth", "tol", "spot", "strike"}
# settings that do not change results; excluded from the config hash
UNHASHED = {"input", "output_dir", "config", "command"}


class UsageError(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="brownray", description=__doc__.splitlines()[0])
    p.add_argument("--command", required=True, choices=COMMANDS)
    p.add_argument("--config", help="key=value settings file; flags override it")
    p.add_argument("--input", help="input CSV")
    p.add_argument("--output-dir", default=".", help="directory for outputs")
    p.add_argument("--seed", type=int)
    p.add_argument("--m-max", type=int, help="largest history length considered")
    p.add_argument("--horizon", type=int, help="fix the history length instead of selecting it")
    p.add_argument("--estimator", choices=ESTIMATORS)
    p.add_argument("--paths", type=int, help="Monte Carlo paths per conditional law")
    p.add_argument("--refinement", type=int, help="fine-grid steps per unit time")
    p.add_argument("--bandwidth", type=float, help="endpoint band half-width")
    p.add_argument("--tol", type=float, help="fixed-point tolerance")
    p.add_argument("--max-iter", type=int)
    sim = p.add_argument_group("simulate")
    sim.add_argument("--kind", choices=("panel", "queue", "prices"))
    sim.add_argument("--n", type=int, help="number of increments")
    sim.add_argument("--phi", help="comma-separated phi per component")
    sim.add_argument("--delta", help="comma-separated delta per component")
    sim.add_argument("--weights", help="comma-separated weights (first must be 1)")
    sim.add_argument("--rho", type=float)
    sim.add_argument("--q0", type=float, help="initial queue length")
    sim.add_argument("--extension", choices=EXTENSIONS)
    opt = p.add_argument_group("price")
    opt.add_argument("--spot", type=float, help="spot price (default: last price)")
    opt.add_argument("--strike", type=float)
    opt.add_argument("--rate", type=float)
    opt.add_argument("--t0", type=float)
    opt.add_argument("--te", type=float)
    opt.add_argument("--market-price", type=float)
    return p


def _coerce(key, value):
    if value is None or value == "":
        return None
    if key in INTS:
        return int(value)
    if key in FLOATS:
        return float(value)
    return str(value)


def resolve(args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS)
    if args.config:
        for k, v in io.read_report(args.config).items():
            k = k.replace("-", "_")
            if k not in DEFAULTS:
                raise UsageError(f"unknown config key {k!r}")
            cfg[k] = v
    for k in DEFAULTS:
        v = getattr(args, k, None)
        if v is not None:
            cfg[k] = v
    try:
        cfg = {k: _coerce(k, v) for k, v in cfg.items()}
    except ValueError as exc:
        raise UsageError(f"bad setting: {exc}") from None
    for k in POSITIVE:
        if cfg[k] is not None and not cfg[k] > 0:
            raise UsageError(f"{k} must be positive")
    if args.command in STOCHASTIC and cfg["seed"] is None:
        raise UsageError(f"--seed is required for {args.command}")
    cfg["command"] = args.command
    cfg["input"] = args.input
    cfg["output_dir"] = args.output_dir
    return cfg


def config_hash(cfg: dict) -> str:
    h = hashlib.sha256()
    for k in sorted(cfg):
        if k not in UNHASHED:
            h.update(f"{k}={io.fmt(cfg[k])}\n".encode())
    h.update(f"command={cfg['command']}\n".encode())
    if cfg.get("input"):
        h.update(f"input_sha256={io.file_digest(cfg['input'])}\n".encode())
    return h.hexdigest()[:16]


def _floats(text):
    return [float(v) for v in str(text).split(",")] if text is not None else None


def _header(cfg):
    return {"library_version": __version__, "config_hash": config_hash(cfg), "command": cfg["command"]}


def _mc(cfg) -> MCConfig:
    return MCConfig(paths=cfg["paths"], refinement=cfg["refinement"], bandwidth=cfg["bandwidth"],
                    tol=cfg["tol"], max_iter=cfg["max_iter"], seed=cfg["seed"])


def _need_input(cfg):
    if not cfg["input"]:
        raise UsageError("--input is required")
    if not Path(cfg["input"]).is_file():
        raise FileNotFoundError(cfg["input"])


def _system(cfg) -> RaySystem:
    phi, delta = _floats(cfg["phi"]), _floats(cfg["delta"])
    weights = _floats(cfg["weights"]) or [1.0] * len(phi)
    return RaySystem.from_arrays(phi, delta, weights, cfg["rho"], cfg["horizon"] or 1)


def _truth(cfg, system):
    out = _header(cfg)
    out.update(kind=cfg["kind"], K=system.K, M=system.horizon, rho=system.rho,
               k=system.weights, phi=system.phi, delta=system.delta,
               theta=[c.theta for c in system.components], extension=cfg["extension"], seed=cfg["seed"])
    return out


def cmd_simulate(cfg, out: Path):
    system = _system(cfg)
    seed = cfg["seed"]
    kind = cfg["kind"]
    truth = _truth(cfg, system)
    if kind == "panel":
        panel = sample_panel(system, cfg["n"], seed, cfg["extension"])
        io.write_panel(out / "panel.csv", panel.values)
    elif kind == "prices":
        if system.K != 1:
            raise UsageError("price simulation takes a single component")
        panel = sample_panel(system, cfg["n"], seed, cfg["extension"])
        spot0 = cfg["spot"] or 100.0
        s = spot0 * np.exp(np.concatenate([[0.0], np.cumsum(panel.values[:, 0])]))
        io.write_prices(out / "prices.csv", PriceSeries(s))
    else:
        sim = simulate_queue_trace(system, cfg["q0"], cfg["n"], cfg["refinement"], seed, cfg["extension"])
        io.write_queue(out / "queue.csv", sim.trace)
        n = np.arange(1, cfg["n"] + 1)
        io.write_table(out / "hidden.csv", ["n", "p1", "l"], [n, sim.net_input, sim.lost])
        truth["lost_fraction"] = float(np.mean(sim.lost > 0))
    io.write_report(out / "truth.txt", truth)


def _fit_items(system, fit, constraints):
    items = {"K": system.K, "M": system.horizon, "rho_hat": fit.rho}
    for i, v in enumerate(fit.xi, 1):
        items[f"xi_{i}"] = v
    items["intercept"] = fit.intercept
    for i, v in enumerate(fit.psi, 1):
        items[f"psi_{i}"] = v
    for name, vals in (("k", system.weights), ("phi", system.phi), ("delta", system.delta)):
        for i, v in enumerate(vals, 1):
            items[f"{name}_{i}"] = v
    items["drift_residual"] = fit.drift_residual
    items["constraint_flags"] = ",".join(f"{k}:{'ok' if ok else 'fail'}" for k, ok in constraints.items())
    return items


def _scores(path, selection):
    ms = sorted(selection.scores)
    io.write_table(path, ["M", "s2"], [ms, [selection.scores[m] for m in ms]])


def cmd_estimate(cfg, out: Path):
    _need_input(cfg)
    panel = io.read_panel(cfg["input"])
    res = fit_full(panel, cfg["m_max"], cfg["horizon"], cfg["estimator"])
    items = _header(cfg)
    items.update(_fit_items(res.system, res.fit, res.fit.constraints))
    items["dropped_columns"] = ",".join(str(i + 1) for i in res.dropped)
    if res.selection is not None:
        items["s2_by_M"] = [res.selection.scores[m] for m in sorted(res.selection.scores)]
        _scores(out / "s2_by_M.csv", res.selection)
    io.write_report(out / "fit_report.txt", items)


def cmd_queue(cfg, out: Path):
    _need_input(cfg)
    trace = io.read_queue(cfg["input"])
    mc = _mc(cfg)
    selection = None
    if cfg["horizon"] is None:
        hist = queue_relevant_history(trace, cfg["m_max"], mc)
        selection = hist.selection
        recon, system = hist.fits[selection.chosen_m]
    else:
        recon, system = tobit_iterate(trace, cfg["horizon"], mc, strict=True)
    M = recon.horizon
    n = np.arange(M + 1, trace.N + 1)
    io.write_table(out / "reconstruction.csv", ["n", "p1_hat", "l_hat"], [n, recon.p1[M:], recon.lost])
    items = _header(cfg)
    items.update({"K": system.K, "M": M, "rho_hat": system.rho, "k": system.weights,
                  "phi": system.phi, "delta": system.delta,
                  "iterations": recon.iterations, "converged": recon.converged,
                  "max_change": recon.max_change})
    if selection is not None:
        items["s2_by_M"] = [selection.scores[m] for m in sorted(selection.scores)]
        _scores(out / "s2_by_M.csv", selection)
    io.write_report(out / "fit_report.txt", items)
    if not recon.converged:
        raise NonConvergence(f"no convergence after {recon.iterations} iterations")


def cmd_price(cfg, out: Path):
    _need_input(cfg)
    series = io.read_prices(cfg["input"])
    M = cfg["horizon"] or 1
    tb = estimate_theta_beta(series, M)
    tx = estimate_theta_xi(series, M)
    if cfg["strike"] is None:
        raise UsageError("--strike is required for price")
    spot = cfg["spot"] if cfg["spot"] is not None else float(series.s[-1])
    opt = OptionSpec(cfg["strike"], cfg["rate"], cfg["t0"], cfg["te"], spot)
    items = _header(cfg)
    items.update({"M": M, "theta_hat_beta": tb, "theta_hat_xi": tx, "bsm_price": bsm_price(opt, tb)})
    if cfg["market_price"] is not None:
        items["implied_theta"] = implied_theta(opt, cfg["market_price"])
    io.write_report(out / "pricing_report.txt", items)


HANDLERS = {"simulate": cmd_simulate, "estimate": cmd_estimate, "queue-infer": cmd_queue, "price": cmd_price}


def _fail(kind, exc, code):
    reason = " ".join(str(exc).split()) or type(exc).__name__
    print(f"error={kind} reason={reason}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve(args)
        out = Path(cfg["output_dir"])
        out.mkdir(parents=True, exist_ok=True)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            HANDLERS[cfg["command"]](cfg, out)
    except ConstraintViolation as exc:
        return _fail("constraint_violation", exc, 2)
    except (NegativeTheta, SingularMatrix) as exc:
        # both signal that the ray model does not fit the data
        return _fail("model_inapt", exc, 2)
    except NonConvergence as exc:
        return _fail("non_convergence", exc, 3)
    except (OSError, ValueError, UsageError) as exc:
        return _fail("input", exc, 1)
    except BrownRayError as exc:
        return _fail(type(exc).__name__, exc, 1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
