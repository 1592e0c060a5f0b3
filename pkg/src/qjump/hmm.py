"""
Discrete-time hidden Markov models with Poisson emissions over binned
photon-count traces.

Provides the exact marginal likelihood (scaled forward recursion),
forward-backward smoothing, Baum-Welch (EM) estimation, AIC/BIC model-order
comparison and conversion of per-bin transition probabilities back to
continuous jump rates.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import expm, logm
from scipy.special import gammaln

from . import _kernels
from .bayes import ProbabilityTrace
from .signal import BinnedTrace
from .simulate import generator_matrix

MODEL_FORMAT = "poisson-hmm v1"


class HmmError(RuntimeError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass
class PoissonHmm:
    """
    ``trans[i, j]`` is the probability of moving from state i to j between
    consecutive bins; ``means[i]`` the Poisson mean count per bin in state i.
    """

    trans: np.ndarray
    means: np.ndarray
    initial: np.ndarray
    bin_width: float

    def __post_init__(self):
        self.trans = np.array(self.trans, dtype=float, ndmin=2)
        self.means = np.array(self.means, dtype=float, ndmin=1)
        self.initial = np.array(self.initial, dtype=float, ndmin=1)
        n = self.means.size
        if self.trans.shape != (n, n) or self.initial.shape != (n,):
            raise ValueError("trans, means and initial disagree on the number of states")
        if np.any(self.trans < 0) or np.any(np.abs(self.trans.sum(axis=1) - 1) > 1e-9):
            raise ValueError("trans must be row-stochastic")
        if np.any(self.means < 0):
            raise ValueError("means must be >= 0")
        if np.any(self.initial < 0) or abs(self.initial.sum() - 1) > 1e-9:
            raise ValueError("initial must be a probability vector")
        if not self.bin_width > 0:
            raise ValueError("bin_width must be > 0")

    @property
    def n_states(self) -> int:
        return self.means.size

    def loglik_matrix(self, counts) -> np.ndarray:
        n = np.asarray(counts, dtype=float)[:, None]
        lam = self.means[None, :]
        with np.errstate(divide="ignore", invalid="ignore"):
            out = n * np.log(lam) - lam - gammaln(n + 1.0)
        # a zero-mean state emits only zeros
        out = np.where(lam == 0, np.where(n == 0, 0.0, -np.inf), out)
        return out

    def permuted(self, order) -> "PoissonHmm":
        o = np.asarray(order)
        return PoissonHmm(self.trans[np.ix_(o, o)], self.means[o], self.initial[o], self.bin_width)

    def sample(self, n_bins: int, seed: int):
        """Hidden state path and Poisson counts for ``n_bins`` bins."""
        rng = np.random.Generator(np.random.PCG64(int(seed)))
        cdf = np.cumsum(self.trans, axis=1)
        u = rng.random(n_bins)
        states = np.empty(n_bins, dtype=np.int64)
        s = int(np.searchsorted(np.cumsum(self.initial), u[0], side="right"))
        states[0] = min(s, self.n_states - 1)
        for t in range(1, n_bins):
            s = int(np.searchsorted(cdf[states[t - 1]], u[t], side="right"))
            states[t] = min(s, self.n_states - 1)
        counts = rng.poisson(self.means[states])
        return states, BinnedTrace(self.bin_width, counts)

    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "n_states": self.n_states,
            "trans": self.trans.ravel().tolist(),
            "means": self.means.tolist(),
            "initial": self.initial.tolist(),
            "bin_width": float(self.bin_width),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PoissonHmm":
        if d.get("format") != MODEL_FORMAT:
            raise ValueError(f"unsupported model format {d.get('format')!r}")
        n = int(d["n_states"])
        return cls(np.array(d["trans"]).reshape(n, n), d["means"], d["initial"], d["bin_width"])


def save_model(path, model: PoissonHmm) -> None:
    with open(path, "w") as fh:
        json.dump(model.to_dict(), fh, indent=1)
        fh.write("\n")


def load_model(path) -> PoissonHmm:
    with open(path) as fh:
        return PoissonHmm.from_dict(json.load(fh))


@dataclass
class HmmFitResult:
    model: PoissonHmm
    log_likelihood: float
    iterations: int
    converged: bool
    history: list = field(default_factory=list)
    starved: list = field(default_factory=list)


def _as_count_arrays(traces, bin_width=None) -> list:
    if isinstance(traces, BinnedTrace):
        traces = [traces]
    traces = list(traces)
    if not traces:
        raise ValueError("no traces given")
    out = []
    for tr in traces:
        if bin_width is not None and not np.isclose(tr.bin_width, bin_width):
            raise ValueError(f"trace bin width {tr.bin_width} differs from model bin width {bin_width}")
        out.append(np.asarray(tr.counts))
    return out


def log_likelihood(model: PoissonHmm, traces) -> float:
    """Exact log P(counts | model), summed over traces."""
    total = 0.0
    for counts in _as_count_arrays(traces, model.bin_width):
        _, logc, _ = _kernels.forward(model.initial, model.trans, model.loglik_matrix(counts))
        total += float(logc.sum())
    return total


def _smooth(model: PoissonHmm, counts):
    loglik = model.loglik_matrix(counts)
    alpha, logc, flags = _kernels.forward(model.initial, model.trans, loglik)
    if flags.any():
        raise HmmError("counts impossible under every state", {"bins": np.nonzero(flags)[0][:10].tolist()})
    beta = _kernels.backward(model.trans, loglik, logc)
    gamma = alpha * beta
    gamma /= gamma.sum(axis=1, keepdims=True)
    xi = _kernels.expected_transitions(alpha, beta, model.trans, loglik, logc)
    return gamma, xi, float(logc.sum()), alpha


def posterior_marginals(model: PoissonHmm, trace: BinnedTrace) -> ProbabilityTrace:
    """Smoothed P(state at bin t | whole trace)."""
    (counts,) = _as_count_arrays(trace, model.bin_width)
    gamma, _, ll, _ = _smooth(model, counts)
    return ProbabilityTrace(trace.times, gamma, None, metadata={"log_likelihood": ll, "smoothed": True})


def filtered_marginals(model: PoissonHmm, trace: BinnedTrace) -> ProbabilityTrace:
    """Forward-only P(state at bin t | counts up to t)."""
    (counts,) = _as_count_arrays(trace, model.bin_width)
    alpha, logc, flags = _kernels.forward(model.initial, model.trans, model.loglik_matrix(counts))
    return ProbabilityTrace(trace.times, alpha, logc, np.nonzero(flags)[0], {"smoothed": False})


def pairwise_posteriors(model: PoissonHmm, trace: BinnedTrace) -> np.ndarray:
    """Expected transition counts sum_t P(s_t = i, s_t+1 = j | trace)."""
    (counts,) = _as_count_arrays(trace, model.bin_width)
    return _smooth(model, counts)[1]


def initial_model(traces, n_states: int, bin_width: float, seed: int | None = None) -> PoissonHmm:
    """
    Means at evenly spread quantiles of the pooled counts with uniform
    transitions. A seed jitters both for restarts.
    """
    pooled = np.concatenate([np.asarray(c, dtype=float) for c in _as_count_arrays(traces)])
    qs = (np.arange(n_states) + 0.5) / n_states
    means = np.quantile(pooled, qs)
    # keep means distinct so states are not born identical
    means = means + 1e-3 * (np.arange(n_states) + 1) * max(pooled.mean(), 1e-3)
    trans = np.full((n_states, n_states), 1.0 / n_states)
    if seed is not None:
        rng = np.random.Generator(np.random.PCG64(int(seed)))
        means = means * np.exp(0.3 * rng.standard_normal(n_states))
        trans = rng.dirichlet(np.ones(n_states) * 2.0, size=n_states)
    return PoissonHmm(trans, means, np.full(n_states, 1.0 / n_states), bin_width)


def em_fit(
    traces,
    n_states: int,
    init: PoissonHmm | int | None = None,
    tol: float = 1e-8,
    max_iter: int = 1000,
    fix_transitions: bool = False,
    starvation: float = 1e-8,
) -> HmmFitResult:
    """
    Baum-Welch estimation of a Poisson HMM.

    ``init`` is a starting model, or a seed for :func:`initial_model`
    (``None``: unjittered quantile start). Iterates until the log-likelihood
    gain drops below ``tol * max(1, |log L|)``. States whose expected occupancy falls below
    ``starvation`` are frozen and reported in ``starved``.
    """
    if n_states < 1:
        raise ValueError("n_states must be >= 1")
    arrays = _as_count_arrays(traces)
    bin_width = traces.bin_width if isinstance(traces, BinnedTrace) else list(traces)[0].bin_width

    if n_states == 1:
        pooled = np.concatenate(arrays).astype(float)
        model = PoissonHmm([[1.0]], [pooled.mean()], [1.0], bin_width)
        ll = log_likelihood(model, traces)
        return HmmFitResult(model, ll, 1, True, [ll])

    if isinstance(init, PoissonHmm):
        model = init
        if model.n_states != n_states:
            raise ValueError("init model has the wrong number of states")
    else:
        model = initial_model(traces, n_states, bin_width, init)

    def e_step(m):
        stats = [_smooth(m, c) for c in arrays]
        return stats, sum(s[2] for s in stats)

    stats, ll = e_step(model)
    history = [ll]
    starved = set()
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        occ = sum(s[0].sum(axis=0) for s in stats)
        weighted = sum(s[0].T @ c for s, c in zip(stats, arrays))
        xi = sum(s[1] for s in stats)
        first = sum(s[0][0] for s in stats) / len(stats)

        means = model.means.copy()
        trans = model.trans.copy()
        live = occ >= starvation
        starved.update(np.nonzero(~live)[0].tolist())
        means[live] = weighted[live] / occ[live]
        if not fix_transitions:
            rows = xi.sum(axis=1)
            ok = live & (rows > 0)
            trans[ok] = xi[ok] / rows[ok, None]
        initial = np.clip(first, 0.0, None)
        initial /= initial.sum()
        if not (np.all(np.isfinite(means)) and np.all(np.isfinite(trans))):
            raise HmmError("non-finite parameters in EM", {"iteration": it, "log_likelihood": ll})
        model = PoissonHmm(trans, means, initial, bin_width)

        stats, new_ll = e_step(model)
        if not np.isfinite(new_ll):
            raise HmmError("log-likelihood became non-finite", {"iteration": it, "previous": ll})
        if new_ll < ll - 1e-7 * max(1.0, abs(ll)):
            raise HmmError("EM decreased the log-likelihood", {"iteration": it, "before": ll, "after": new_ll})
        history.append(new_ll)
        gain = new_ll - ll
        ll = new_ll
        if gain < tol * max(1.0, abs(ll)):
            converged = True
            break
    return HmmFitResult(model, ll, it, converged, history, sorted(starved))


def fit_best(traces, n_states: int, restarts: int = 5, seed: int = 0, **kwargs) -> HmmFitResult:
    """Best of ``restarts`` EM runs (first one unjittered, the rest seeded)."""
    best = None
    children = np.random.SeedSequence(int(seed)).generate_state(max(restarts, 1), dtype=np.uint64)
    for k in range(max(restarts, 1)):
        init = None if k == 0 else int(children[k])
        try:
            res = em_fit(traces, n_states, init=init, **kwargs)
        except HmmError:
            continue
        if best is None or res.log_likelihood > best.log_likelihood:
            best = res
        if n_states == 1:
            break
    if best is None:
        raise HmmError(f"all {restarts} EM restarts failed for n_states={n_states}")
    return best


def n_parameters(n_states: int) -> int:
    """Free parameters: N(N-1) transitions + N means + (N-1) initial."""
    return n_states * n_states + n_states - 1


@dataclass
class OrderScore:
    n_states: int
    log_likelihood: float
    n_params: int
    aic: float
    bic: float
    score: float
    fit: HmmFitResult


def compare_orders(traces, n_range, criterion: str = "bic", restarts: int = 5, seed: int = 0, **kwargs) -> list:
    """Fit each candidate number of states and rank by AIC or BIC (lowest first)."""
    if criterion not in ("aic", "bic"):
        raise ValueError("criterion must be 'aic' or 'bic'")
    n_range = list(n_range)
    if not n_range:
        raise ValueError("n_range is empty")
    n_obs = sum(len(c) for c in _as_count_arrays(traces))
    out = []
    for n in n_range:
        res = fit_best(traces, n, restarts=restarts, seed=seed + n, **kwargs)
        k = n_parameters(n)
        aic = -2 * res.log_likelihood + 2 * k
        bic = float(-2 * res.log_likelihood + k * np.log(n_obs))
        out.append(OrderScore(n, res.log_likelihood, k, aic, bic, aic if criterion == "aic" else bic, res))
    return sorted(out, key=lambda s: s.score)


@dataclass
class RateEstimate:
    """Continuous jump rates (1/s, ``rates[i, j]`` for i -> j) from a per-bin HMM."""

    rates: np.ndarray
    valid: bool
    method: str


def rates_from_transitions(model: PoissonHmm) -> RateEstimate:
    """
    Generator ``log(trans) / bin_width`` when it is a valid rate matrix,
    otherwise the first-order estimate ``trans_ij / bin_width`` flagged
    as invalid.
    """
    trans = model.trans
    if np.any(np.diag(trans) <= 0):
        raise ValueError("transition matrix needs a strictly positive diagonal")
    n = model.n_states
    off = ~np.eye(n, dtype=bool)
    with np.errstate(all="ignore"):
        try:
            gen = logm(trans)
        except (ValueError, np.linalg.LinAlgError):
            gen = np.full((n, n), np.nan)
    gen = np.asarray(gen)
    if np.all(np.isfinite(gen)) and np.max(np.abs(np.imag(gen))) < 1e-9:
        gen = np.real(gen) / model.bin_width
        scale = max(np.max(np.abs(gen)), 1.0)
        if np.all(gen[off] >= -1e-9 * scale):
            rates = np.where(off, np.clip(gen, 0.0, None), 0.0)
            return RateEstimate(rates, True, "logm")
    rates = np.where(off, trans / model.bin_width, 0.0)
    return RateEstimate(rates, False, "first_order")


def transitions_from_rates(rates, bin_width: float) -> np.ndarray:
    """Per-bin transition matrix ``exp(Q * bin_width)`` for off-diagonal ``rates``."""
    return expm(generator_matrix(rates) * bin_width)
