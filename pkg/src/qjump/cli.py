"""
Command-line front end.

Every subcommand takes a JSON config (``--config``) whose keys can be
overridden by flags. The fully resolved config, the seed and the format
versions go into ``manifest.json`` next to the outputs, and
``qjump rerun <manifest>`` repeats the run from it.
"""
from __future__ import annotations

import argparse
import copy
import glob
import hashlib
import json
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from . import bayes, estimate, hmm, physics, signal, simulate as sim

MANIFEST = "manifest.json"
FORMATS = {
    "clicks": sim.CLICKS_FORMAT,
    "trajectory": "# duration_s",
    "probability_csv": "t_s,p0,...",
    "model": hmm.MODEL_FORMAT,
}

UNITS_HELP = """\
units at the command line:
  frequencies (g, kappa, gamma, detunings) in MHz, used internally as 2*pi*MHz rad/s
  photon fluxes in counts per ms, rates in 1/s
  times (durations, bins, lags) in ms, distances in micrometres
"""


class ConfigError(ValueError):
    pass


# -- defaults ---------------------------------------------------------------

DEFAULTS = {
    "transmission": {
        "cavity": {"g0_mhz": 13.1, "kappa_mhz": 0.4, "gamma_mhz": 2.6, "waist_um": 23.0},
        "g_eff_mhz": [8.0, 9.0, 10.0],
        "delta_mhz": {"start": 0.0, "stop": 100.0, "num": 201},
        "dy_um": None,
        "g_center_mhz": 9.0,
    },
    "simulate": {
        "model": "one_atom",
        "rates_per_s": {"r10": 40.0, "r01": 18.0},
        "flux_per_ms": [27.0, 3.0],
        "duration_ms": 1000.0,
        "repetitions": 13,
        "split": None,
        "write_trajectories": True,
    },
    "analyze": {
        "inputs": [],
        "bin_ms": 1.0,
        "hist": False,
        "g2": False,
        "filter": False,
        "entropy_scan": False,
        "fit_rates": False,
        "rates_per_s": None,
        "flux_per_ms": None,
        "initial": None,
        "predict_mode": "exact",
        "references": None,
        "g2_max_lag_ms": 100.0,
        "entropy_bins_ms": {"start": 0.01, "stop": 20.0, "num": 16, "log": True},
        "fit": {"kind": "one_atom", "guess_per_s": None, "tol": 1e-3, "max_iter": 50},
    },
    "hmm": {
        "inputs": [],
        "bin_ms": 1.0,
        "orders": [1, 2, 3],
        "criterion": "bic",
        "restarts": 5,
        "tol": 1e-8,
        "max_iter": 1000,
    },
}


def merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def grid(value, key: str) -> np.ndarray:
    """A list of numbers, or ``{"start", "stop", "num", "log"}``."""
    if isinstance(value, dict):
        try:
            start, stop, num = float(value["start"]), float(value["stop"]), int(value["num"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"{key}: grid needs start, stop, num") from exc
        if num < 1:
            raise ConfigError(f"{key}: empty grid")
        if value.get("log"):
            if start <= 0 or stop <= 0:
                raise ConfigError(f"{key}: log grid needs positive bounds")
            return np.geomspace(start, stop, num)
        return np.linspace(start, stop, num)
    arr = np.asarray(value, dtype=float).ravel()
    if arr.size == 0:
        raise ConfigError(f"{key}: empty grid")
    return arr


def _positive(cfg: dict, key: str) -> float:
    v = cfg.get(key)
    if not isinstance(v, (int, float)) or isinstance(v, bool) or not v > 0:
        raise ConfigError(f"{key} must be a number > 0, got {v!r}")
    return float(v)


# -- file helpers -----------------------------------------------------------


def atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def child_seeds(seed: int, n: int) -> list:
    return [int(s) for s in np.random.SeedSequence(int(seed)).generate_state(n, dtype=np.uint64)]


def resolve_inputs(spec) -> list:
    if isinstance(spec, str):
        spec = [spec]
    paths = []
    for item in spec or []:
        p = Path(item)
        if p.is_dir():
            paths.extend(sorted(p.glob("clicks_*.txt")))
        elif any(c in item for c in "*?["):
            paths.extend(Path(x) for x in sorted(glob.glob(item)))
        else:
            if not p.exists():
                raise ConfigError(f"input file not found: {item}")
            paths.append(p)
    if not paths:
        raise ConfigError("inputs: no click files given")
    return paths


def load_records(paths) -> list:
    records = []
    for p in paths:
        try:
            records.append(sim.read_clicks(p))
        except ValueError as exc:
            raise ConfigError(f"{p}: {exc}") from exc
    return records


def _pmap(fn, items, jobs: int):
    if jobs > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(fn, items))
    return [fn(x) for x in items]


# -- transmission -----------------------------------------------------------


def plan_transmission(cfg: dict) -> dict:
    c = cfg["cavity"]
    try:
        p = physics.CavityParams(physics.mhz(c["g0_mhz"]), physics.mhz(c["kappa_mhz"]),
                                 physics.mhz(c["gamma_mhz"]), float(c["waist_um"]) * 1e-6)
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"cavity: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"cavity: {exc}") from exc
    g_list = grid(cfg["g_eff_mhz"], "g_eff_mhz")
    if np.any(g_list < 0):
        raise ConfigError("g_eff_mhz must be >= 0")
    delta = grid(cfg["delta_mhz"], "delta_mhz")
    dy = None if cfg.get("dy_um") is None else grid(cfg["dy_um"], "dy_um")
    return {"params": p, "g": g_list, "delta": delta, "dy": dy, "g_center": _positive(cfg, "g_center_mhz")}


def run_transmission(cfg: dict, seed: int, jobs: int) -> dict:
    plan = plan_transmission(cfg)
    p = plan["params"]
    rows = ["g_eff_mhz,delta_mhz,t1,t2,dt12"]
    for g in plan["g"].tolist():
        lv = physics.transmission_levels(p, physics.mhz(plan["delta"]), physics.mhz(g))
        for d, t1, t2 in zip(plan["delta"].tolist(), np.atleast_1d(lv.t1), np.atleast_1d(lv.t2)):
            rows.append(f"{g!r},{d!r},{float(t1)!r},{float(t2)!r},{float(t1 - t2)!r}")
    files = {"transmission.csv": "\n".join(rows) + "\n"}
    if plan["dy"] is not None:
        gc = physics.mhz(plan["g_center"])
        rows = ["dy_um,delta_mhz,t1,t2,dt12"]
        for y in plan["dy"].tolist():
            g1 = physics.coupling_at_offset(p, gc, y * 1e-6)
            lv = physics.transmission_levels(p, physics.mhz(plan["delta"]), g1)
            for d, t1, t2 in zip(plan["delta"].tolist(), np.atleast_1d(lv.t1), np.atleast_1d(lv.t2)):
                rows.append(f"{y!r},{d!r},{float(t1)!r},{float(t2)!r},{float(t1 - t2)!r}")
        files["level_difference_grid.csv"] = "\n".join(rows) + "\n"
        rows = ["delta_mhz,dy_opt_um"]
        for d in plan["delta"].tolist():
            if d > 0:
                rows.append(f"{d!r},{float(physics.optimal_offset(p, gc, physics.mhz(d))) * 1e6!r}")
        files["optimal_ridge.csv"] = "\n".join(rows) + "\n"
    return files


# -- simulate ---------------------------------------------------------------


def build_spec(cfg: dict) -> sim.JumpProcessSpec:
    model = cfg.get("model")
    rates = cfg.get("rates_per_s") or {}
    flux = [float(f) * 1e3 for f in cfg.get("flux_per_ms") or []]
    duration = _positive(cfg, "duration_ms") * 1e-3
    try:
        if model == "one_atom":
            if len(flux) != 2:
                raise ConfigError("flux_per_ms needs 2 values for one_atom")
            spec = sim.make_one_atom_spec(float(rates["r10"]), float(rates["r01"]), flux[0], flux[1], duration)
        elif model == "two_atom":
            if len(flux) != 3:
                raise ConfigError("flux_per_ms needs 3 values for two_atom")
            spec = sim.make_two_atom_spec(float(rates["r10"]), float(rates["r21"]), float(rates["r_rep"]),
                                          *flux, duration)
        else:
            raise ConfigError(f"model must be 'one_atom' or 'two_atom', got {model!r}")
    except KeyError as exc:
        raise ConfigError(f"rates_per_s: missing key {exc}") from exc
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"rates_per_s/flux_per_ms: {exc}") from exc
    split = cfg.get("split")
    if split:
        try:
            spec = sim.split_state(spec, int(split["alpha"]),
                                   [float(f) * 1e3 for f in split["site_flux_per_ms"]],
                                   float(split["hop_rate_per_s"]))
        except KeyError as exc:
            raise ConfigError(f"split: missing key {exc}") from exc
        except ValueError as exc:
            raise ConfigError(f"split: {exc}") from exc
    return spec


def _simulate_one(args):
    spec, seed = args
    return sim.simulate(spec, seed)


def run_simulate(cfg: dict, seed: int, jobs: int) -> dict:
    spec = build_spec(cfg)
    reps = cfg.get("repetitions")
    if not isinstance(reps, int) or isinstance(reps, bool) or reps < 1:
        raise ConfigError(f"repetitions must be an integer >= 1, got {reps!r}")
    seeds = child_seeds(seed, reps)
    results = _pmap(_simulate_one, [(spec, s) for s in seeds], jobs)
    files = {}
    for i, (traj, rec) in enumerate(results):
        files[f"clicks_{i:04d}.txt"] = sim.format_clicks(rec)
        if cfg.get("write_trajectories", True):
            files[f"trajectory_{i:04d}.txt"] = sim.format_trajectory(traj)
    return files


# -- analyze ----------------------------------------------------------------


def _rates_matrix(value, key="rates_per_s") -> np.ndarray:
    if value is None:
        raise ConfigError(f"{key} is required")
    if isinstance(value, dict):
        if set(value) == {"r10", "r01"}:
            return estimate.OneAtomRates(float(value["r10"]), float(value["r01"])).matrix()
        if set(value) == {"r10", "r21", "r_rep"}:
            return estimate.TwoAtomRates(float(value["r10"]), float(value["r21"]), float(value["r_rep"])).matrix()
        raise ConfigError(f"{key}: expected keys r10, r01 or r10, r21, r_rep")
    m = np.asarray(value, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ConfigError(f"{key}: expected a square matrix")
    return m


def plan_analyze(cfg: dict) -> dict:
    bin_w = _positive(cfg, "bin_ms") * 1e-3
    paths = resolve_inputs(cfg.get("inputs"))
    records = load_records(paths)
    plan = {"bin": bin_w, "paths": paths, "records": records}
    need_model = cfg["filter"] or cfg["entropy_scan"] or cfg["fit_rates"]
    if need_model:
        fluxes = cfg.get("flux_per_ms")
        if fluxes is None:
            raise ConfigError("flux_per_ms is required for filter, entropy_scan and fit_rates")
        plan["flux"] = np.asarray(fluxes, dtype=float) * 1e3
        n = plan["flux"].size
        if cfg["filter"] or cfg["entropy_scan"]:
            plan["rates"] = _rates_matrix(cfg.get("rates_per_s"))
            if plan["rates"].shape != (n, n):
                raise ConfigError("rates_per_s and flux_per_ms describe different numbers of states")
        init = cfg.get("initial")
        plan["initial"] = np.full(n, 1.0 / n) if init is None else np.asarray(init, dtype=float)
        if plan["initial"].shape != (n,) or abs(plan["initial"].sum() - 1) > 1e-9:
            raise ConfigError("initial must be a probability vector with one entry per state")
        if cfg["predict_mode"] not in ("exact", "linear"):
            raise ConfigError("predict_mode must be 'exact' or 'linear'")
    if cfg["entropy_scan"]:
        plan["entropy_bins"] = grid(cfg["entropy_bins_ms"], "entropy_bins_ms") * 1e-3
        if np.any(plan["entropy_bins"] <= 0):
            raise ConfigError("entropy_bins_ms must be > 0")
        if cfg.get("references") is not None:
            refs = cfg["references"]
            if len(refs) != plan["flux"].size:
                raise ConfigError("references: need one click file per state")
            plan["references"] = load_records(resolve_inputs(list(refs)))
    if cfg["g2"]:
        plan["g2_lag"] = _positive(cfg, "g2_max_lag_ms") * 1e-3
    if cfg["fit_rates"]:
        fit = cfg["fit"]
        if fit.get("kind") not in ("one_atom", "two_atom"):
            raise ConfigError("fit.kind must be 'one_atom' or 'two_atom'")
        if fit["kind"] == "one_atom" and plan["flux"].size != 2:
            raise ConfigError("fit.kind one_atom needs 2 fluxes")
        if fit["kind"] == "two_atom":
            if plan["flux"].size != 3:
                raise ConfigError("fit.kind two_atom needs 3 fluxes")
            g = fit.get("guess_per_s")
            if not isinstance(g, dict) or set(g) != {"r10", "r21", "r_rep"}:
                raise ConfigError("fit.guess_per_s needs r10, r21, r_rep")
    if not any(cfg[k] for k in ("hist", "g2", "filter", "entropy_scan", "fit_rates")):
        raise ConfigError("nothing to do: enable at least one of hist, g2, filter, entropy_scan, fit_rates")
    return plan


def _filter_one(args):
    trace, cfg = args
    return bayes.run_filter(trace, cfg)


def run_analyze(cfg: dict, seed: int, jobs: int) -> dict:
    plan = plan_analyze(cfg)
    w = plan["bin"]
    traces = [signal.bin_clicks(r, w) for r in plan["records"]]
    files = {}
    if cfg["hist"]:
        files["histogram.csv"] = signal.format_histogram_csv(signal.histogram(traces))
    if cfg["g2"]:
        curve = signal.g2(traces, plan["g2_lag"])
        files["g2.csv"] = signal.format_correlation_csv(curve)
        try:
            fit = signal.fit_exponential_decay(curve)
            report = {"amplitude": fit.amplitude, "rate_per_s": fit.rate, "offset": fit.offset,
                      "residual_norm": fit.residual_norm, "identifiable": fit.identifiable}
        except signal.FitError as exc:
            report = {"error": str(exc), "diagnostics": exc.diagnostics}
        files["g2_fit.json"] = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if cfg["filter"]:
        em = [bayes.EmissionModel.from_flux(f, w) for f in plan["flux"]]
        fc = bayes.FilterConfig(plan["rates"], em, plan["initial"], cfg["predict_mode"])
        for i, pt in enumerate(_pmap(_filter_one, [(t, fc) for t in traces], jobs)):
            files[f"filter_{i:04d}.csv"] = bayes.format_probability_csv(pt)
    if cfg["entropy_scan"]:
        kwargs = {"references": plan["references"]} if "references" in plan else {"fluxes": plan["flux"]}
        ws, s = bayes.entropy_scan(plan["records"], plan["entropy_bins"], plan["rates"], plan["initial"],
                                   predict_mode=cfg["predict_mode"], **kwargs)
        rows = ["bin_ms,entropy"] + [f"{x * 1e3!r},{v!r}" for x, v in zip(ws.tolist(), s.tolist())]
        files["entropy_scan.csv"] = "\n".join(rows) + "\n"
    if cfg["fit_rates"]:
        files["rate_fit.json"] = json.dumps(_fit_rates(cfg, plan, traces), indent=2, sort_keys=True) + "\n"
    return files


def _fit_rates(cfg, plan, traces) -> dict:
    fit = cfg["fit"]
    w = plan["bin"]
    if fit["kind"] == "one_atom":
        curve = signal.g2(traces, cfg["g2_max_lag_ms"] * 1e-3)
        decay = signal.fit_exponential_decay(curve)
        comps = [signal.CountHistogram.poisson(f * w, w) for f in plan["flux"]]
        mix = estimate.fit_mixture(signal.histogram(traces), comps)
        rates = estimate.decompose_rates(decay.rate, mix)
        return {"kind": "one_atom", "total_rate_per_s": decay.rate, "weights": mix.weights.tolist(),
                "r10": rates.r10, "r01": rates.r01, "identifiable": bool(decay.identifiable and mix.identifiable)}
    em = [bayes.EmissionModel.from_flux(f, w) for f in plan["flux"]]
    g = fit["guess_per_s"]
    res = estimate.iterative_rate_fit(traces, em, estimate.TwoAtomRates(g["r10"], g["r21"], g["r_rep"]),
                                      tol=fit["tol"], max_iter=fit["max_iter"], initial=plan["initial"],
                                      predict_mode=cfg["predict_mode"])
    out = res.report()
    out["kind"] = "two_atom"
    return _plain(out)


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


# -- hmm --------------------------------------------------------------------


def plan_hmm(cfg: dict) -> dict:
    bin_w = _positive(cfg, "bin_ms") * 1e-3
    orders = cfg.get("orders")
    if not orders or any(not isinstance(n, int) or n < 1 for n in orders):
        raise ConfigError("orders must be a non-empty list of integers >= 1")
    if cfg["criterion"] not in ("aic", "bic"):
        raise ConfigError("criterion must be 'aic' or 'bic'")
    if not isinstance(cfg["restarts"], int) or cfg["restarts"] < 1:
        raise ConfigError("restarts must be an integer >= 1")
    paths = resolve_inputs(cfg.get("inputs"))
    return {"bin": bin_w, "paths": paths, "records": load_records(paths)}


def run_hmm(cfg: dict, seed: int, jobs: int) -> dict:
    plan = plan_hmm(cfg)
    traces = [signal.bin_clicks(r, plan["bin"]) for r in plan["records"]]
    scores = hmm.compare_orders(traces, cfg["orders"], criterion=cfg["criterion"], restarts=cfg["restarts"],
                                seed=seed, tol=cfg["tol"], max_iter=cfg["max_iter"])
    files = {}
    rows = ["n_states,log_likelihood,n_params,aic,bic,converged,starved"]
    for sc in sorted(scores, key=lambda s: s.n_states):
        rows.append(f"{sc.n_states},{sc.log_likelihood!r},{sc.n_params},{sc.aic!r},{sc.bic!r},"
                    f"{sc.fit.converged},{' '.join(map(str, sc.fit.starved))}")
        files[f"model_n{sc.n_states}.json"] = json.dumps(sc.fit.model.to_dict(), indent=2, sort_keys=True) + "\n"
    files["scores.csv"] = "\n".join(rows) + "\n"
    best = scores[0].fit.model
    for i, tr in enumerate(traces):
        files[f"marginals_{i:04d}.csv"] = bayes.format_probability_csv(hmm.posterior_marginals(best, tr))
    est = hmm.rates_from_transitions(best)
    files["best.json"] = json.dumps({
        "n_states": best.n_states,
        "criterion": cfg["criterion"],
        "rates_per_s": est.rates.tolist(),
        "rates_valid": est.valid,
        "rates_method": est.method,
    }, indent=2, sort_keys=True) + "\n"
    return files


# -- driver -----------------------------------------------------------------

RUNNERS = {
    "transmission": run_transmission,
    "simulate": run_simulate,
    "analyze": run_analyze,
    "hmm": run_hmm,
}


def execute(command: str, cfg: dict, seed: int, out: Path, jobs: int = 1) -> dict:
    """Run a subcommand with a resolved config and write outputs plus manifest."""
    if seed < 0 or seed >= 2**64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    if jobs < 1:
        raise ConfigError("jobs must be >= 1")
    # everything is computed (and validated) before the first file is written
    files = RUNNERS[command](cfg, seed, jobs)
    inputs = {}
    for key in ("inputs", "references"):
        if cfg.get(key):
            for p in resolve_inputs(cfg[key]):
                inputs[str(p)] = sha256(p)
    out = Path(out)
    for name in sorted(files):
        atomic_write(out / name, files[name])
    manifest = {
        "tool": "qjump",
        "version": __version__,
        "command": command,
        "seed": int(seed),
        "jobs": int(jobs),
        "rng": sim.RNG_ALGORITHM,
        "formats": FORMATS,
        "config": cfg,
        "inputs": inputs,
        "outputs": {name: hashlib.sha256(files[name].encode()).hexdigest() for name in sorted(files)},
    }
    atomic_write(out / MANIFEST, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def rerun(manifest_path, out, jobs=None) -> dict:
    m = json.loads(Path(manifest_path).read_text())
    if m.get("tool") != "qjump" or m.get("command") not in RUNNERS:
        raise ConfigError(f"{manifest_path}: not a qjump manifest")
    for path, digest in m.get("inputs", {}).items():
        if not Path(path).exists() or sha256(path) != digest:
            raise ConfigError(f"input {path} is missing or changed since the recorded run")
    return execute(m["command"], m["config"], m["seed"], Path(out), m["jobs"] if jobs is None else jobs)


def _resolve(command: str, args) -> tuple:
    cfg = copy.deepcopy(DEFAULTS[command])
    seed = 0
    if args.config:
        try:
            user = json.loads(Path(args.config).read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {args.config}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigError("config must be a JSON object")
        seed = user.pop("seed", seed)
        unknown = set(user) - set(cfg)
        if unknown:
            raise ConfigError(f"unknown config keys for {command}: {sorted(unknown)}")
        cfg = merge(cfg, user)
    for key, value in vars(args).items():
        if key in cfg and value is not None:
            cfg[key] = value
    if args.seed is not None:
        seed = args.seed
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError("seed must be an integer")
    return cfg, seed


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.RawDescriptionHelpFormatter
    parser = argparse.ArgumentParser(prog="qjump", description="Quantum-jump telegraph toolkit.",
                                     epilog=UNITS_HELP, formatter_class=fmt)
    parser.add_argument("--version", action="version", version=f"qjump {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file; flags override its keys")
        p.add_argument("--seed", type=int, help="unsigned 64-bit master seed (default 0)")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--jobs", type=int, default=1, help="worker processes (results do not depend on it)")

    p = sub.add_parser("transmission", help="transmission curves and level-difference grids",
                       epilog=UNITS_HELP, formatter_class=fmt)
    common(p)
    p.add_argument("--g-eff-mhz", dest="g_eff_mhz", type=float, nargs="+")
    p.add_argument("--g-center-mhz", dest="g_center_mhz", type=float)

    p = sub.add_parser("simulate", help="seeded telegraph simulations", epilog=UNITS_HELP, formatter_class=fmt)
    common(p)
    p.add_argument("--model", choices=["one_atom", "two_atom"])
    p.add_argument("--repetitions", type=int)
    p.add_argument("--duration-ms", dest="duration_ms", type=float)
    p.add_argument("--flux-per-ms", dest="flux_per_ms", type=float, nargs="+")

    p = sub.add_parser("analyze", help="histograms, g2, Bayes filter, entropy scan, rate fits",
                       epilog=UNITS_HELP, formatter_class=fmt)
    common(p)
    p.add_argument("--inputs", nargs="+", help="click files, directories or globs")
    p.add_argument("--bin-ms", dest="bin_ms", type=float)
    for flag in ("hist", "g2", "filter", "entropy-scan", "fit-rates"):
        p.add_argument(f"--{flag}", dest=flag.replace("-", "_"), action="store_const", const=True)
    p.add_argument("--flux-per-ms", dest="flux_per_ms", type=float, nargs="+")
    p.add_argument("--predict-mode", dest="predict_mode", choices=["exact", "linear"])

    p = sub.add_parser("hmm", help="Poisson-HMM fits and model-order selection", epilog=UNITS_HELP,
                       formatter_class=fmt)
    common(p)
    p.add_argument("--inputs", nargs="+", help="click files, directories or globs")
    p.add_argument("--bin-ms", dest="bin_ms", type=float)
    p.add_argument("--orders", type=int, nargs="+")
    p.add_argument("--criterion", choices=["aic", "bic"])
    p.add_argument("--restarts", type=int)

    p = sub.add_parser("rerun", help="repeat a run from its manifest")
    p.add_argument("manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "rerun":
            rerun(args.manifest, args.out, args.jobs)
        else:
            cfg, seed = _resolve(args.command, args)
            execute(args.command, cfg, seed, Path(args.out), args.jobs)
    except (ConfigError, ValueError) as exc:
        print(f"qjump: error: {exc}", file=sys.stderr)
        return 2
    except (hmm.HmmError, signal.FitError) as exc:
        print(f"qjump: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
