"""
Rate estimation for telegraph models: weighted histogram (mixture) fits,
rate decomposition from g2, the analytic solution of the rate equations and
the self-consistent Bayes/least-squares iteration used for two atoms.
"""
from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field, asdict
from typing import Sequence

import numpy as np
from scipy.linalg import expm
from scipy.optimize import least_squares

from .bayes import EmissionModel, FilterConfig, run_filter
from .signal import BinnedTrace, CountHistogram, ensemble_average, fit_exponential
from .simulate import generator_matrix, stationary_distribution


class DefectiveGeneratorWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class OneAtomRates:
    r10: float
    r01: float

    def __post_init__(self):
        if min(self.r10, self.r01) < 0:
            raise ValueError("rates must be >= 0")

    def matrix(self) -> np.ndarray:
        return np.array([[0.0, self.r01], [self.r10, 0.0]])

    def stationary(self) -> np.ndarray:
        return np.array([self.r10, self.r01]) / (self.r10 + self.r01)

    def as_array(self) -> np.ndarray:
        return np.array([self.r10, self.r01])


@dataclass(frozen=True)
class TwoAtomRates:
    """Two-atom rates; the repumper gives 0->1 at 2*r_rep and 1->2 at r_rep."""

    r10: float
    r21: float
    r_rep: float

    def __post_init__(self):
        if min(self.r10, self.r21, self.r_rep) < 0:
            raise ValueError("rates must be >= 0")

    def matrix(self) -> np.ndarray:
        return np.array([
            [0.0, 2.0 * self.r_rep, 0.0],
            [self.r10, 0.0, self.r_rep],
            [0.0, self.r21, 0.0],
        ])

    def stationary(self) -> np.ndarray:
        return stationary_distribution(self.matrix())

    def as_array(self) -> np.ndarray:
        return np.array([self.r10, self.r21, self.r_rep])


@dataclass
class MixtureFit:
    weights: np.ndarray
    residual: float
    identifiable: bool = True
    method: str = "lsq"


def _stack_components(observed: CountHistogram, components: Sequence[CountHistogram]):
    if len(components) < 2:
        raise ValueError("need at least two components")
    for c in components:
        if not np.isclose(c.bin_width, observed.bin_width):
            raise ValueError("histograms have different bin widths")
    size = max(observed.probs.size, *(c.probs.size for c in components))
    b = np.zeros(size)
    b[: observed.probs.size] = observed.probs
    a = np.zeros((size, len(components)))
    for k, c in enumerate(components):
        a[: c.probs.size, k] = c.probs
    return a, b


def _simplex_lsq(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # exact: the optimum is the equality-constrained solution on its support
    k = a.shape[1]
    if k > 12:
        raise ValueError("too many components for exhaustive support search")
    best, best_cost = None, np.inf
    for size in range(1, k + 1):
        for support in itertools.combinations(range(k), size):
            s = list(support)
            sub = a[:, s]
            kkt = np.zeros((size + 1, size + 1))
            kkt[:size, :size] = 2 * sub.T @ sub
            kkt[:size, size] = 1.0
            kkt[size, :size] = 1.0
            rhs = np.concatenate([2 * sub.T @ b, [1.0]])
            sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0][:size]
            if np.any(sol < -1e-12):
                continue
            w = np.zeros(k)
            w[s] = np.clip(sol, 0.0, None)
            w /= w.sum()
            cost = float(np.sum((a @ w - b) ** 2))
            if cost < best_cost - 1e-15:
                best, best_cost = w, cost
    return best


def _simplex_mle(a: np.ndarray, b: np.ndarray, max_iter: int = 20000, tol: float = 1e-13) -> np.ndarray:
    k = a.shape[1]
    w = np.full(k, 1.0 / k)
    mask = b > 0
    a, b = a[mask], b[mask] / b[mask].sum()
    for _ in range(max_iter):
        mix = np.maximum(a @ w, 1e-300)
        new = w * (a.T @ (b / mix))
        new /= new.sum()
        if np.max(np.abs(new - w)) < tol:
            return new
        w = new
    return w


def fit_mixture(observed: CountHistogram, components: Sequence[CountHistogram], method: str = "lsq") -> MixtureFit:
    """
    Weights on the probability simplex such that
    ``observed ~ sum_k w_k * components[k]``.

    ``lsq`` minimizes the squared difference of the probabilities;
    ``mle`` maximizes the multinomial likelihood of the observed histogram.
    """
    a, b = _stack_components(observed, components)
    if method == "lsq":
        w = _simplex_lsq(a, b)
    elif method == "mle":
        w = _simplex_mle(a, b)
    else:
        raise ValueError("method must be 'lsq' or 'mle'")
    identifiable = np.linalg.matrix_rank(a, tol=1e-10) == a.shape[1]
    if not identifiable:
        warnings.warn("mixture components are linearly dependent; weights are not identifiable", stacklevel=2)
    return MixtureFit(w, float(np.linalg.norm(a @ w - b)), bool(identifiable), method)


def decompose_rates(total: float, weights) -> OneAtomRates:
    """Split the total jump rate with the steady-state occupations (p0, p1)."""
    w = np.asarray(weights.weights if isinstance(weights, MixtureFit) else weights, dtype=float)
    if w.shape != (2,):
        raise ValueError("decompose_rates needs two-state weights")
    if not total > 0:
        raise ValueError("total rate must be > 0")
    return OneAtomRates(float(w[0] * total), float(w[1] * total))


def rate_consistency(total: float, p0: float, r10: float, r01: float) -> dict:
    """
    Cross-check a (total rate, p0) pair against a quoted (r10, r01) pair;
    both should describe the same two-state process.
    """
    implied = decompose_rates(total, [p0, 1 - p0])
    return {
        "from_total_and_p0": {"r10": implied.r10, "r01": implied.r01},
        "quoted": {"r10": r10, "r01": r01, "total": r10 + r01, "p0": r10 / (r10 + r01)},
        "total_mismatch": (r10 + r01) - total,
        "p0_mismatch": r10 / (r10 + r01) - p0,
        "consistent": bool(np.isclose(r10 + r01, total, rtol=1e-3) and np.isclose(r10 / (r10 + r01), p0, atol=1e-3)),
    }


def solve_rate_equations(rates, initial, times) -> np.ndarray:
    """
    ``p(t) = p(0) exp(Q t)`` evaluated by eigendecomposition of the generator.

    Falls back to a matrix exponential per time (with a warning) when the
    generator is numerically defective.
    """
    q = generator_matrix(rates)
    p0 = np.asarray(initial, dtype=float)
    if abs(p0.sum() - 1) > 1e-9 or np.any(p0 < 0):
        raise ValueError("initial must be a probability vector")
    t = np.asarray(times, dtype=float)
    lam, vec = np.linalg.eig(q)
    if np.linalg.cond(vec) > 1e10:
        warnings.warn("defective generator: using matrix exponential", DefectiveGeneratorWarning, stacklevel=2)
        return np.array([p0 @ expm(q * ti) for ti in t])
    coef = p0 @ vec
    inv = np.linalg.inv(vec)
    out = (coef[None, :] * np.exp(np.outer(t, lam))) @ inv
    return np.real(out)


def solve_three_state(rates: TwoAtomRates, initial, times) -> np.ndarray:
    """Mean occupation curves <p_alpha>(t) for the two-atom rate equations."""
    return solve_rate_equations(rates.matrix(), initial, times)


def predicted_r21(r10: float, t1: float, t2: float) -> float:
    """Jump rate out of alpha=2 if it scales with the intracavity intensity."""
    if t1 <= 0:
        raise ValueError("t1 must be > 0")
    return 2.0 * (t2 / t1) * r10


def protocol_guess(no_repump_traces: Sequence[BinnedTrace], t1: float, t2: float) -> TwoAtomRates:
    """
    Starting rates for the iterative fit: r10 from the exponential rise of
    averaged single-atom traces without repumper, r21 from the intensity
    scaling, r_rep = r10.
    """
    avg = ensemble_average(no_repump_traces)
    fit = fit_exponential(avg.times, avg.counts)
    r10 = fit.rate
    return TwoAtomRates(r10, predicted_r21(r10, t1, t2), r10)


@dataclass
class RateFitResult:
    rates: TwoAtomRates
    history: list
    converged: bool
    iterations: int
    flags: list = field(default_factory=list)

    def report(self) -> dict:
        return {
            "rates": asdict(self.rates),
            "converged": self.converged,
            "iterations": self.iterations,
            "flags": list(self.flags),
            "history": self.history,
        }


def averaged_posteriors(traces: Sequence[BinnedTrace], cfg: FilterConfig):
    """Filter every trace and average p_alpha(t) over traces (truncated to the shortest)."""
    pts = [run_filter(tr, cfg) for tr in traces]
    m = min(len(pt.times) for pt in pts)
    avg = np.mean([pt.probs[:m] for pt in pts], axis=0)
    return pts[0].times[:m], avg


def fit_rates_to_average(times, avg, guess: TwoAtomRates, initial) -> tuple:
    """Least-squares fit of the analytic mean curves to averaged posteriors."""

    def resid(logr):
        r = np.exp(logr)
        return (solve_three_state(TwoAtomRates(*r), initial, times) - avg).ravel()

    x0 = np.log(np.maximum(guess.as_array(), 1e-6))
    res = least_squares(resid, x0, xtol=1e-12, ftol=1e-12)
    return TwoAtomRates(*np.exp(res.x)), float(2 * res.cost)


def iterative_rate_fit(
    traces: Sequence[BinnedTrace],
    emissions: Sequence[EmissionModel],
    initial_guess: TwoAtomRates,
    tol: float = 1e-3,
    max_iter: int = 50,
    initial=(0.0, 0.0, 1.0),
    predict_mode: str = "exact",
) -> RateFitResult:
    """
    Self-consistent two-atom rate estimation.

    Repeats: filter all traces with the current rates, average the
    posteriors over traces, refit the rates to the analytic mean curves. Stops
    when every rate changes by less than ``tol`` (relative).
    """
    traces = list(traces)
    if not traces:
        raise ValueError("no traces given")
    if min(initial_guess.as_array()) <= 0:
        raise ValueError("initial guess must be positive")
    initial = np.asarray(initial, dtype=float)
    current = initial_guess
    history, flags = [], []
    best = (np.inf, current)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        cfg = FilterConfig(current.matrix(), emissions, initial, predict_mode)
        times, avg = averaged_posteriors(traces, cfg)
        new, cost = fit_rates_to_average(times, avg, current, initial)
        change = np.abs(new.as_array() - current.as_array()) / current.as_array()
        history.append({"iteration": it, "rates": asdict(new), "cost": cost, "max_rel_change": float(change.max())})
        if cost < best[0]:
            best = (cost, new)
        if change.max() < tol:
            current, converged = new, True
            break
        if len(history) >= 3:
            two_back = np.array(list(history[-3]["rates"].values()))
            if np.all(np.abs(new.as_array() - two_back) / two_back < tol):
                flags.append("oscillation")
                current = new
                break
        current = new
    if not converged:
        flags.append("not_converged")
        current = best[1]
    return RateFitResult(current, history, converged, it, flags)
