"""
Recursive Bayesian estimation of the hidden atomic state from a binned
photon-count trace.

Each bin is handled in two steps: the state probabilities are propagated
with the rate equations over one bin width (predict), then conditioned on
the observed count with Bayes' rule (update). Probabilities are attached to
bin midpoints.
"""
from __future__ import annotations

import ast
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import expm
from scipy.special import gammaln

from . import _kernels
from .signal import BinnedTrace, CountHistogram, bin_clicks, histogram
from .simulate import generator_matrix

EMPIRICAL_FLOOR = 1e-6


@dataclass
class EmissionModel:
    """
    Count distribution P(n | state) for one bin width.

    Either Poisson with ``mean`` counts per bin, or an empirical histogram.
    Empirical tables give unseen counts up to ``cap`` (default: twice the
    largest observed count) the probability ``floor`` before renormalizing;
    counts beyond the cap are impossible.
    """

    bin_width: float
    mean: float | None = None
    hist: CountHistogram | None = None
    floor: float = EMPIRICAL_FLOOR
    cap: int | None = None
    _table: np.ndarray | None = field(default=None, init=False, repr=False)

    def __post_init__(self):
        if (self.mean is None) == (self.hist is None):
            raise ValueError("give exactly one of mean (Poisson) or hist (empirical)")
        if self.mean is not None and not self.mean >= 0:
            raise ValueError("Poisson mean must be >= 0")
        if self.hist is not None:
            if not np.isclose(self.hist.bin_width, self.bin_width):
                raise ValueError("histogram bin width differs from the model's")
            probs = self.hist.probs
            observed = np.nonzero(probs > 0)[0]
            cap = self.cap if self.cap is not None else 2 * int(observed.max() if observed.size else 0)
            table = np.zeros(cap + 1)
            m = min(cap + 1, probs.size)
            table[:m] = probs[:m]
            table[table == 0] = self.floor
            self.cap = cap
            self._table = np.log(table / table.sum())

    @property
    def kind(self) -> str:
        return "poisson" if self.mean is not None else "empirical"

    @classmethod
    def poisson(cls, mean: float, bin_width: float) -> "EmissionModel":
        return cls(bin_width, mean=float(mean))

    @classmethod
    def from_flux(cls, flux: float, bin_width: float) -> "EmissionModel":
        """Poisson model for a detected photon rate ``flux`` (1/s)."""
        return cls(bin_width, mean=float(flux) * bin_width)

    @classmethod
    def empirical(cls, hist: CountHistogram, floor: float = EMPIRICAL_FLOOR, cap: int | None = None) -> "EmissionModel":
        return cls(hist.bin_width, hist=hist, floor=floor, cap=cap)

    def logpmf(self, n) -> np.ndarray:
        n = np.asarray(n)
        if self.mean is not None:
            lam = self.mean
            if lam == 0:
                return np.where(n == 0, 0.0, -np.inf)
            return n * np.log(lam) - lam - gammaln(n + 1.0)
        inside = (n >= 0) & (n <= self.cap)
        return np.where(inside, self._table[np.clip(n, 0, self.cap).astype(np.int64)], -np.inf)

    def pmf(self, n) -> np.ndarray:
        return np.exp(self.logpmf(n))


@dataclass
class FilterConfig:
    rates: np.ndarray
    emissions: Sequence[EmissionModel]
    initial: np.ndarray
    predict_mode: str = "exact"

    def __post_init__(self):
        self.rates = np.array(self.rates, dtype=float)
        np.fill_diagonal(self.rates, 0.0)
        self.initial = np.asarray(self.initial, dtype=float)
        n = self.rates.shape[0]
        if self.rates.shape != (n, n) or np.any(self.rates < 0):
            raise ValueError("rates must be a square matrix with non-negative off-diagonal entries")
        if len(self.emissions) != n:
            raise ValueError(f"need one emission model per state ({n}), got {len(self.emissions)}")
        if self.initial.shape != (n,) or np.any(self.initial < 0) or abs(self.initial.sum() - 1) > 1e-9:
            raise ValueError("initial must be a probability vector over the states")
        if self.predict_mode not in ("exact", "linear"):
            raise ValueError("predict_mode must be 'exact' or 'linear'")

    @property
    def n_states(self) -> int:
        return self.rates.shape[0]

    def loglik_matrix(self, counts) -> np.ndarray:
        counts = np.asarray(counts)
        return np.column_stack([e.logpmf(counts) for e in self.emissions])


@dataclass
class ProbabilityTrace:
    """Posterior state probabilities at bin midpoints."""

    times: np.ndarray
    probs: np.ndarray
    log_evidence: np.ndarray | None = None
    flagged: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    metadata: dict = field(default_factory=dict)

    def argmax(self) -> np.ndarray:
        return np.argmax(self.probs, axis=1)

    @property
    def n_states(self) -> int:
        return self.probs.shape[1]


def propagator(rates, dt: float, mode: str = "exact") -> np.ndarray:
    """
    Matrix ``P`` with ``p(t + dt) = p(t) @ P`` under the rate equations.

    ``exact`` uses the closed form for two states and scaling-and-squaring
    otherwise; ``linear`` is the first-order step ``1 + Q dt`` and refuses
    steps with ``dt * max exit rate > 0.5``.
    """
    if not dt > 0:
        raise ValueError("dt must be > 0")
    q = generator_matrix(rates)
    n = q.shape[0]
    if mode == "linear":
        if dt * np.max(-np.diag(q)) > 0.5:
            raise ValueError("linear predict step invalid: dt * max rate > 0.5")
        return np.eye(n) + q * dt
    if mode != "exact":
        raise ValueError("mode must be 'exact' or 'linear'")
    if n == 2:
        up, down = q[0, 1], q[1, 0]
        s = up + down
        if s == 0:
            return np.eye(2)
        e = np.exp(-s * dt)
        return np.array([
            [(down + up * e) / s, up * (1 - e) / s],
            [down * (1 - e) / s, (up + down * e) / s],
        ])
    return expm(q * dt)


def predict(p, rates, dt: float, mode: str = "exact") -> np.ndarray:
    out = np.asarray(p, dtype=float) @ propagator(rates, dt, mode)
    out = np.clip(out, 0.0, None)
    return out / out.sum()


def update(prior, n: int, emissions: Sequence[EmissionModel]):
    """
    Condition ``prior`` on an observed count ``n``.

    Returns ``(posterior, log_evidence)``. When no state can produce ``n``
    the prior is returned unchanged with ``log_evidence = -inf``.
    """
    prior = np.asarray(prior, dtype=float)
    logl = np.array([float(e.logpmf(n)) for e in emissions])
    m = logl.max()
    if m == -np.inf:
        return prior.copy(), -np.inf
    joint = prior * np.exp(logl - m)
    s = joint.sum()
    if s == 0:
        return prior.copy(), -np.inf
    return joint / s, float(np.log(s) + m)


def run_filter(trace: BinnedTrace, cfg: FilterConfig) -> ProbabilityTrace:
    """
    Alternate predict and update over all bins.

    ``cfg.initial`` is the state distribution at the start of the trace; it
    is propagated half a bin to the first midpoint before the first update.
    """
    dt = trace.bin_width
    for e in cfg.emissions:
        if not np.isclose(e.bin_width, dt):
            raise ValueError(f"emission bin width {e.bin_width} differs from trace bin width {dt}")
    trans = propagator(cfg.rates, dt, cfg.predict_mode)
    prior0 = predict(cfg.initial, cfg.rates, dt / 2, cfg.predict_mode)
    loglik = cfg.loglik_matrix(trace.counts)
    probs, logc, flags = _kernels.forward(prior0, trans, loglik)
    meta = {"predict_mode": cfg.predict_mode, "rates": cfg.rates.tolist(), "bin_width": dt}
    return ProbabilityTrace(trace.times, probs, logc, np.nonzero(flags)[0], meta)


def entropy_trace(pt: ProbabilityTrace):
    """Per-bin entropy -sum p ln p (nats) and its time average."""
    p = np.asarray(pt.probs)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, -p * np.log(p), 0.0)
    s = terms.sum(axis=1)
    return s, float(s.mean())


def mean_entropy(traces: Sequence[ProbabilityTrace]) -> float:
    """Entropy averaged over every bin of every trace."""
    per_bin = np.concatenate([entropy_trace(pt)[0] for pt in traces])
    return float(per_bin.mean())


def reference_emissions(references, bin_width: float, floor: float = EMPIRICAL_FLOOR) -> list:
    """Empirical emission models from per-state reference click records."""
    return [EmissionModel.empirical(histogram(bin_clicks(r, bin_width)), floor=floor) for r in references]


def entropy_scan(records, bin_widths, rates, initial, fluxes=None, references=None,
                 predict_mode: str = "exact"):
    """
    Mean filter entropy for each bin width.

    Emissions are either Poisson with mean ``flux * bin_width`` (``fluxes``)
    or empirical histograms rebuilt at every bin width from one reference
    record per state (``references``), e.g. continuous measurements with the
    state held fixed.
    """
    if (fluxes is None) == (references is None):
        raise ValueError("give exactly one of fluxes or references")
    out = []
    for w in bin_widths:
        if fluxes is not None:
            em = [EmissionModel.from_flux(f, w) for f in fluxes]
        else:
            em = reference_emissions(references, w)
        cfg = FilterConfig(rates, em, initial, predict_mode)
        out.append(mean_entropy([run_filter(bin_clicks(r, w), cfg) for r in records]))
    return np.asarray(bin_widths, dtype=float), np.array(out)


def threshold_classify(trace: BinnedTrace, thresholds, labels=None) -> np.ndarray:
    """
    Assign each bin the state whose count interval contains it. Interval
    ``k`` is ``[thresholds[k-1], thresholds[k])``; ``labels[k]`` is its state
    index (identity by default).
    """
    th = np.asarray(thresholds, dtype=float)
    if np.any(np.diff(th) <= 0):
        raise ValueError("thresholds must be strictly increasing")
    k = np.searchsorted(th, np.asarray(trace.counts), side="right")
    if labels is None:
        return k
    return np.asarray(labels)[k]


def poisson_thresholds(means):
    """
    Likelihood-crossing thresholds between Poisson levels.

    Returns ``(thresholds, labels)`` for :func:`threshold_classify`, with
    states ordered by increasing mean.
    """
    means = np.asarray(means, dtype=float)
    order = np.argsort(means)
    th = []
    for a, b in zip(means[order][:-1], means[order][1:]):
        if a == b:
            raise ValueError("equal Poisson means cannot be separated")
        th.append(0.5 if a == 0 else (b - a) / np.log(b / a))
    return np.array(th), order


def states_at_midpoints(traj, trace: BinnedTrace, states: Sequence) -> np.ndarray:
    """Index (into ``states``) of the true hidden state at each bin midpoint."""
    lookup = {s: i for i, s in enumerate(states)}
    return np.array([lookup[s] for s in traj.state_at(trace.times)])


# -- CSV ----------------------------------------------------------------------


def format_probability_csv(pt: ProbabilityTrace) -> str:
    meta = pt.metadata
    rows = [
        f"# rates={meta.get('rates')!r}",
        f"# predict_mode={meta.get('predict_mode')}",
        f"# flagged_bins={[int(i) for i in pt.flagged]!r}",
        "t_s," + ",".join(f"p{i}" for i in range(pt.n_states)),
    ]
    for t, p in zip(pt.times.tolist(), pt.probs.tolist()):
        rows.append(repr(t) + "," + ",".join(repr(v) for v in p))
    return "\n".join(rows) + "\n"


def parse_probability_csv(text: str) -> ProbabilityTrace:
    meta, data = {}, []
    header = None
    for ln in text.splitlines():
        if ln.startswith("#"):
            key, _, val = ln[1:].strip().partition("=")
            meta[key] = val
        elif header is None:
            header = ln.split(",")
            if header[0] != "t_s":
                raise ValueError("expected header starting with 't_s'")
        elif ln.strip():
            data.append([float(v) for v in ln.split(",")])
    arr = np.array(data)
    flagged = np.array(ast.literal_eval(meta.get("flagged_bins", "[]")), dtype=np.int64)
    return ProbabilityTrace(arr[:, 0], arr[:, 1:], None, flagged, meta)

