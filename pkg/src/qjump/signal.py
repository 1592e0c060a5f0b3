"""
Binned photon-count traces and the statistics computed from them: count
histograms, the normalized count-count correlation g2(tau), ensemble
averages and exponential fits.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares

from .simulate import ClickRecord


class FitError(RuntimeError):
    """Nonlinear fit did not converge; ``diagnostics`` says how far it got."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass
class BinnedTrace:
    bin_width: float
    counts: np.ndarray
    start_time: float = 0.0

    def __post_init__(self):
        if not self.bin_width > 0:
            raise ValueError("bin_width must be > 0")
        self.counts = np.asarray(self.counts)
        if self.counts.ndim != 1 or self.counts.size < 1:
            raise ValueError("a binned trace needs at least one bin")

    def __len__(self):
        return self.counts.size

    @property
    def times(self) -> np.ndarray:
        """Bin midpoints (s)."""
        return self.start_time + (np.arange(self.counts.size) + 0.5) * self.bin_width

    def rebin(self, factor: int) -> "BinnedTrace":
        """Merge ``factor`` consecutive bins; a trailing partial group is dropped."""
        m = self.counts.size // factor
        if m < 1:
            raise ValueError("trace shorter than one rebinned bin")
        counts = self.counts[: m * factor].reshape(m, factor).sum(axis=1)
        return BinnedTrace(self.bin_width * factor, counts, self.start_time)


@dataclass
class CountHistogram:
    """Normalized count distribution; ``probs[n]`` is P(n)."""

    bin_width: float
    probs: np.ndarray
    total_bins: int

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=float)
        if np.any(self.probs < 0) or abs(self.probs.sum() - 1.0) > 1e-9:
            raise ValueError("histogram probabilities must be >= 0 and sum to 1")

    def pmf(self, n) -> np.ndarray:
        n = np.asarray(n)
        inside = (n >= 0) & (n < self.probs.size)
        return np.where(inside, self.probs[np.clip(n, 0, self.probs.size - 1)], 0.0)

    def as_dict(self) -> dict:
        return {n: float(p) for n, p in enumerate(self.probs) if p > 0}

    @property
    def mean(self) -> float:
        return float(np.dot(np.arange(self.probs.size), self.probs))

    @property
    def variance(self) -> float:
        n = np.arange(self.probs.size)
        return float(np.dot(n**2, self.probs) - self.mean**2)

    @classmethod
    def poisson(cls, mean: float, bin_width: float, n_max: int | None = None) -> "CountHistogram":
        """Poisson pmf truncated at ``n_max`` and renormalized."""
        from scipy.stats import poisson

        if n_max is None:
            n_max = int(mean + 12 * np.sqrt(mean) + 12)
        p = poisson.pmf(np.arange(n_max + 1), mean)
        return cls(bin_width, p / p.sum(), 0)


@dataclass
class CorrelationCurve:
    lags: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.lags = np.asarray(self.lags, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.lags.shape != self.values.shape:
            raise ValueError("lags and values differ in length")
        if np.any(self.lags <= 0) or np.any(np.diff(self.lags) <= 0):
            raise ValueError("lags must be positive and strictly increasing")


@dataclass
class ExpFit:
    """Best fit of ``amplitude * exp(-rate * x) + offset``."""

    amplitude: float
    rate: float
    offset: float
    residual_norm: float
    identifiable: bool = True
    iterations: int = 0

    def __call__(self, x):
        return self.amplitude * np.exp(-self.rate * np.asarray(x)) + self.offset


def bin_clicks(record: ClickRecord, bin_width: float) -> BinnedTrace:
    """Count clicks in ``[i*w, (i+1)*w)``; a trailing partial bin is dropped."""
    if not bin_width > 0:
        raise ValueError("bin_width must be > 0")
    times = record.times
    if record.duration is not None:
        span = record.duration
    elif times.size:
        span = float(times[-1])
    else:
        raise ValueError("empty click record without a duration")
    # tolerate round-off such as 1.0 / 1e-3 = 999.9999999999999
    n_bins = int(np.floor(span / bin_width * (1 + 1e-12)))
    if n_bins < 1:
        raise ValueError("record is shorter than one bin")
    idx = np.floor(times / bin_width).astype(np.int64)
    idx = idx[idx < n_bins]
    return BinnedTrace(bin_width, np.bincount(idx, minlength=n_bins))


def histogram(trace) -> CountHistogram:
    """Normalized count histogram of one trace or of a list of traces."""
    traces = [trace] if isinstance(trace, BinnedTrace) else list(trace)
    if not traces:
        raise ValueError("no traces given")
    counts = np.concatenate([np.asarray(t.counts) for t in traces])
    if counts.size == 0:
        raise ValueError("empty trace")
    if np.any(counts < 0) or np.any(counts != np.round(counts)):
        raise ValueError("histogram needs non-negative integer counts")
    freq = np.bincount(counts.astype(np.int64))
    return CountHistogram(traces[0].bin_width, freq / counts.size, int(counts.size))


def g2(trace, max_lag: float) -> CorrelationCurve:
    """
    g2(k*w) = <n_i n_{i+k}> / (<n_i><n_{i+k}>) for k = 1 .. max_lag/w.

    With a list of traces the per-trace curves are averaged.
    """
    traces = [trace] if isinstance(trace, BinnedTrace) else list(trace)
    if not traces:
        raise ValueError("no traces given")
    w = traces[0].bin_width
    if max_lag < w:
        raise ValueError("max_lag is shorter than one bin")
    k_max = int(np.floor(max_lag / w * (1 + 1e-12)))
    curves = []
    for tr in traces:
        if not np.isclose(tr.bin_width, w):
            raise ValueError("traces have different bin widths")
        n = np.asarray(tr.counts, dtype=float)
        if n.size * w <= 2 * max_lag:
            raise ValueError("trace must be longer than twice max_lag")
        vals = np.empty(k_max)
        for k in range(1, k_max + 1):
            a, b = n[:-k], n[k:]
            vals[k - 1] = np.mean(a * b) / (a.mean() * b.mean())
        curves.append(vals)
    return CorrelationCurve(np.arange(1, k_max + 1) * w, np.mean(curves, axis=0))


def fit_exponential(x, y, p0=None, max_nfev: int = 2000) -> ExpFit:
    """Least-squares fit of ``A*exp(-r*x) + c`` with r >= 0."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 5:
        raise ValueError("need at least 5 points for an exponential fit")
    span = x.max() - x.min()
    if p0 is None:
        c0 = y[-max(1, x.size // 5):].mean()
        a0 = y[0] - c0
        # rate guess: where the excursion first falls below 1/e of its start
        rel = (y - c0) / a0 if a0 != 0 else np.zeros_like(y)
        below = np.nonzero(rel < np.exp(-1))[0]
        r0 = 1.0 / max(x[below[0]] - x[0], span / x.size) if below.size else 1.0 / span
        p0 = (a0, r0, c0)
    scale = np.array([max(abs(p0[0]), 1e-12), max(p0[1], 1.0 / span), max(abs(p0[2]), abs(p0[0]), 1e-12)])

    def resid(p):
        return p[0] * np.exp(-p[1] * x) + p[2] - y

    res = least_squares(resid, p0, bounds=([-np.inf, 0.0, -np.inf], np.inf), x_scale=scale,
                        xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=max_nfev)
    if res.status <= 0:
        raise FitError("exponential fit did not converge",
                       {"iterations": res.nfev, "residual": float(np.linalg.norm(res.fun)),
                        "message": res.message})
    a, r, c = res.x
    rnorm = float(np.linalg.norm(res.fun))
    noise = rnorm / np.sqrt(max(x.size - 3, 1))
    # a decay is only identifiable if it is resolved by the sampled range and
    # its amplitude stands out of the residual scatter
    identifiable = bool(abs(a) > 3 * noise and r * span > 0.1 and r * (span / x.size) < 20)
    return ExpFit(float(a), float(r), float(c), rnorm, identifiable, int(res.nfev))


def fit_exponential_decay(curve: CorrelationCurve) -> ExpFit:
    """Fit ``A*exp(-r*tau) + c`` to a correlation curve (tau > 0 only)."""
    if curve.lags.size < 5:
        raise ValueError("need at least 5 lag points")
    return fit_exponential(curve.lags, curve.values)


def ensemble_average(traces) -> BinnedTrace:
    """Per-bin mean over traces, truncated to the shortest one."""
    traces = list(traces)
    if not traces:
        raise ValueError("no traces to average")
    w = traces[0].bin_width
    if any(not np.isclose(t.bin_width, w) for t in traces):
        raise ValueError("traces have different bin widths")
    m = min(len(t) for t in traces)
    stack = np.vstack([np.asarray(t.counts[:m], dtype=float) for t in traces])
    return BinnedTrace(w, stack.mean(axis=0), traces[0].start_time)


def bins_in_alpha(traj, trace: BinnedTrace, alpha: int) -> np.ndarray:
    """
    Mask of bins spent entirely in atomic state ``alpha`` (any site); bins
    containing a change of alpha are excluded.
    """
    states = [traj.initial_state] + list(traj.new_states)
    alphas = np.array([s.alpha for s in states])
    change = traj.times[alphas[1:] != alphas[:-1]]
    edges = trace.start_time + np.arange(len(trace) + 1) * trace.bin_width
    n_changes = np.diff(np.searchsorted(change, edges, side="left"))
    idx = np.searchsorted(traj.times, edges[:-1], side="right")
    return (alphas[idx] == alpha) & (n_changes == 0)


def stationary_g2_zero(p, f):
    """
    g2(0+) of a stationary multi-level telegraph with occupation ``p`` and
    per-level flux ``f``: 1 + Var(f)/E[f]^2.
    """
    p = np.asarray(p, dtype=float)
    f = np.asarray(f, dtype=float)
    m = np.dot(p, f)
    return 1.0 + (np.dot(p, f**2) - m**2) / m**2


# -- CSV files --------------------------------------------------------------


def format_trace_csv(trace: BinnedTrace) -> str:
    rows = ["t_s,count"]
    is_int = np.issubdtype(np.asarray(trace.counts).dtype, np.integer)
    for t, c in zip(trace.times.tolist(), np.asarray(trace.counts).tolist()):
        rows.append(f"{t!r},{c}" if is_int else f"{t!r},{float(c)!r}")
    return "\n".join(rows) + "\n"


def parse_trace_csv(text: str) -> BinnedTrace:
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    if lines[0].strip() != "t_s,count":
        raise ValueError("expected header 't_s,count'")
    t = np.array([float(ln.split(",")[0]) for ln in lines[1:]])
    raw = [ln.split(",")[1] for ln in lines[1:]]
    counts = np.array([int(v) for v in raw]) if all(v.lstrip("-").isdigit() for v in raw) else np.array([float(v) for v in raw])
    w = t[1] - t[0] if t.size > 1 else 2 * t[0]
    return BinnedTrace(w, counts, t[0] - w / 2)


def format_histogram_csv(hist: CountHistogram) -> str:
    rows = ["n,prob"] + [f"{n},{float(p)!r}" for n, p in enumerate(hist.probs)]
    return "\n".join(rows) + "\n"


def format_correlation_csv(curve: CorrelationCurve) -> str:
    rows = ["tau_s,g2"] + [f"{t!r},{v!r}" for t, v in zip(curve.lags.tolist(), curve.values.tolist())]
    return "\n".join(rows) + "\n"
