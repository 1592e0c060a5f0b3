"""
Synthetic quantum-jump experiments.

Hidden atomic states follow a continuous-time Markov jump process sampled
exactly (exponential holding times); detector clicks are a Poisson process
whose rate is piecewise constant along the hidden trajectory.

Random numbers come from numpy's ``PCG64`` bit generator seeded with the
caller's 64-bit seed, so any (spec, seed) pair reproduces bit-identically.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Mapping, NamedTuple, Sequence

import numpy as np

RNG_ALGORITHM = "numpy.random.PCG64"
CLICKS_FORMAT = "#clicks v1"


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed)))


class StateLabel(NamedTuple):
    """Number of atoms in the coupled state and a positional sub-label."""

    alpha: int
    site: int = 0


@dataclass
class JumpProcessSpec:
    """
    Hidden jump process plus per-state detected photon flux.

    ``rates[i, j]`` is the rate (1/s) of jumps from ``states[i]`` to
    ``states[j]``; the diagonal is ignored. ``initial`` is either a state
    label or a probability vector over ``states``.
    """

    states: list
    rates: np.ndarray
    flux: np.ndarray
    duration: float
    initial: object = None

    def __post_init__(self):
        self.states = [StateLabel(*s) for s in self.states]
        n = len(self.states)
        if n == 0:
            raise ValueError("spec needs at least one state")
        if len(set(self.states)) != n:
            raise ValueError("duplicate state labels")
        self.rates = np.array(self.rates, dtype=float)
        if self.rates.shape != (n, n):
            raise ValueError(f"rates must be {n}x{n}, got {self.rates.shape}")
        np.fill_diagonal(self.rates, 0.0)
        if np.any(self.rates < 0) or not np.all(np.isfinite(self.rates)):
            raise ValueError("transition rates must be finite and >= 0")
        self.flux = np.array(self.flux, dtype=float)
        if self.flux.shape != (n,) or np.any(self.flux < 0):
            raise ValueError("flux must hold one non-negative rate per state")
        if not self.duration > 0:
            raise ValueError("duration must be > 0")
        if self.initial is None:
            self.initial = self.states[0]
        if not isinstance(self.initial, tuple):
            p0 = np.asarray(self.initial, dtype=float)
            if p0.shape != (n,) or np.any(p0 < 0) or abs(p0.sum() - 1.0) > 1e-12:
                raise ValueError("initial probability vector must have one entry per state and sum to 1")
            self.initial = p0
        else:
            self.initial = StateLabel(*self.initial)
            self.index(self.initial)

    @property
    def n_states(self) -> int:
        return len(self.states)

    def index(self, label) -> int:
        try:
            return self.states.index(StateLabel(*label))
        except ValueError:
            raise KeyError(f"state {tuple(label)} not in spec") from None

    def generator(self) -> np.ndarray:
        """Rate matrix Q with rows summing to zero (dp/dt = p @ Q)."""
        return generator_matrix(self.rates)

    def stationary(self) -> np.ndarray:
        return stationary_distribution(self.rates)

    def initial_distribution(self) -> np.ndarray:
        if isinstance(self.initial, np.ndarray):
            return self.initial.copy()
        p = np.zeros(self.n_states)
        p[self.index(self.initial)] = 1.0
        return p

    def flux_map(self) -> dict:
        return dict(zip(self.states, self.flux.tolist()))

    def alphas(self) -> np.ndarray:
        return np.array([s.alpha for s in self.states])


def generator_matrix(rates) -> np.ndarray:
    q = np.array(rates, dtype=float)
    np.fill_diagonal(q, 0.0)
    np.fill_diagonal(q, -q.sum(axis=1))
    return q


def stationary_distribution(rates) -> np.ndarray:
    """Stationary vector of the generator built from off-diagonal ``rates``."""
    q = generator_matrix(rates)
    n = q.shape[0]
    # pi @ Q = 0 with sum(pi) = 1, solved in the least-squares sense
    a = np.vstack([q.T, np.ones(n)])
    b = np.zeros(n + 1)
    b[-1] = 1.0
    pi, *_ = np.linalg.lstsq(a, b, rcond=None)
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


@dataclass
class Trajectory:
    """One realization of the hidden process: jump times and the states entered."""

    initial_state: StateLabel
    times: np.ndarray
    new_states: list
    duration: float

    @property
    def events(self) -> list:
        return list(zip(self.times.tolist(), self.new_states))

    def segments(self):
        """Yield ``(start, stop, state)`` for each constant-state stretch."""
        starts = np.concatenate([[0.0], self.times])
        stops = np.concatenate([self.times, [self.duration]])
        states = [self.initial_state] + list(self.new_states)
        return list(zip(starts.tolist(), stops.tolist(), states))

    def state_at(self, t) -> list:
        """State labels at the given times."""
        states = [self.initial_state] + list(self.new_states)
        idx = np.searchsorted(self.times, np.asarray(t, dtype=float), side="right")
        return [states[i] for i in np.atleast_1d(idx)]

    def occupation(self, labels: Sequence) -> np.ndarray:
        """Total time spent in each of ``labels``."""
        occ = dict.fromkeys(map(StateLabel._make, labels), 0.0)
        for start, stop, s in self.segments():
            if s in occ:
                occ[s] += stop - start
        return np.array(list(occ.values()))


@dataclass
class ClickRecord:
    """Detector output: photon inter-arrival times (s), counted from t = 0."""

    intervals: np.ndarray
    duration: float | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.intervals = np.asarray(self.intervals, dtype=float)
        if self.intervals.ndim != 1 or np.any(self.intervals <= 0):
            raise ValueError("click intervals must be a 1-d array of positive values")

    @property
    def times(self) -> np.ndarray:
        return np.cumsum(self.intervals)

    def __len__(self):
        return self.intervals.size

    @classmethod
    def from_times(cls, times, duration=None, metadata=None) -> "ClickRecord":
        times = np.unique(np.asarray(times, dtype=float))
        times = times[times > 0]
        return cls(np.diff(times, prepend=0.0), duration, dict(metadata or {}))


def sample_trajectory(spec: JumpProcessSpec, seed: int) -> Trajectory:
    """
    Exact (Gillespie) realization of the hidden jump process over
    ``[0, spec.duration]``. Absorbing states simply hold until the end.
    """
    rng = make_rng(seed)
    q = spec.rates
    exit_rates = q.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        jump_cdf = np.cumsum(q / exit_rates[:, None], axis=1)

    if isinstance(spec.initial, np.ndarray):
        state = int(rng.choice(spec.n_states, p=spec.initial))
    else:
        state = spec.index(spec.initial)
    initial = spec.states[state]

    times, visited = [], []
    t = 0.0
    k = batch = 4096
    while True:
        rate = exit_rates[state]
        if rate <= 0:
            break
        if k == batch:
            expo = rng.standard_exponential(batch).tolist()
            unif = rng.random(batch).tolist()
            k = 0
        t += expo[k] / rate
        u = unif[k]
        k += 1
        if t >= spec.duration:
            break
        nxt = int(np.searchsorted(jump_cdf[state], u, side="right"))
        nxt = min(nxt, spec.n_states - 1)
        while q[state, nxt] == 0:  # guards round-off at the top of the cdf
            nxt -= 1
        state = nxt
        times.append(t)
        visited.append(spec.states[state])
    return Trajectory(initial, np.array(times, dtype=float), visited, float(spec.duration))


def emit_clicks(traj: Trajectory, flux: Mapping, seed: int) -> ClickRecord:
    """
    Poisson photon clicks along ``traj`` with rate ``flux[state]`` (1/s)
    inside each constant-state segment.
    """
    rng = make_rng(seed)
    segs = traj.segments()
    starts = np.array([s[0] for s in segs])
    lengths = np.array([s[1] - s[0] for s in segs])
    try:
        rates = np.array([float(flux[s[2]]) for s in segs])
    except KeyError as exc:
        raise KeyError(f"no flux given for state {exc.args[0]}") from None
    counts = rng.poisson(rates * lengths)
    total = int(counts.sum())
    # 1 - U lies in (0, 1], so no click lands exactly on a segment start
    offsets = (1.0 - rng.random(total)) * np.repeat(lengths, counts)
    times = np.sort(np.repeat(starts, counts) + offsets)
    meta = {"rng": RNG_ALGORITHM, "seed": int(seed)}
    return ClickRecord.from_times(times, traj.duration, meta)


def simulate(spec: JumpProcessSpec, seed: int):
    """Trajectory and clicks from one seed (independent child streams)."""
    traj_seed, click_seed = np.random.SeedSequence(int(seed)).generate_state(2, dtype=np.uint64)
    traj = sample_trajectory(spec, int(traj_seed))
    rec = emit_clicks(traj, spec.flux_map(), int(click_seed))
    rec.metadata["seed"] = int(seed)
    return traj, rec


def make_one_atom_spec(r10, r01, flux0, flux1, duration) -> JumpProcessSpec:
    """
    Two-state telegraph: alpha=1 (atom in the coupled state) decays to
    alpha=0 at ``r10`` and is repumped at ``r01``. Starts in alpha=1.
    """
    if min(r10, r01, flux0, flux1) < 0:
        raise ValueError("rates and fluxes must be >= 0")
    if flux0 <= flux1:
        warnings.warn("flux0 <= flux1: the coupled atom should lower the transmission", stacklevel=2)
    rates = np.array([[0.0, r01], [r10, 0.0]])
    return JumpProcessSpec([(0, 0), (1, 0)], rates, [flux0, flux1], duration, initial=(1, 0))


def make_two_atom_spec(r10, r21, r_rep, flux0, flux1, flux2, duration) -> JumpProcessSpec:
    """
    Three-state chain 0 <-> 1 <-> 2 for two atoms. The repumper acts on each
    uncoupled atom separately, so 0 -> 1 runs at 2*r_rep and 1 -> 2 at r_rep.
    Starts with both atoms coupled.
    """
    if min(r10, r21, r_rep, flux0, flux1, flux2) < 0:
        raise ValueError("rates and fluxes must be >= 0")
    rates = np.array([
        [0.0, 2.0 * r_rep, 0.0],
        [r10, 0.0, r_rep],
        [0.0, r21, 0.0],
    ])
    return JumpProcessSpec([(0, 0), (1, 0), (2, 0)], rates, [flux0, flux1, flux2], duration, initial=(2, 0))


def split_state(spec: JumpProcessSpec, target_alpha: int, site_fluxes: Sequence[float], hop_rate: float) -> JumpProcessSpec:
    """
    Split the single state with ``alpha == target_alpha`` into ``K`` sites.

    Sites form a chain with nearest-neighbour hopping at ``hop_rate``. Every
    site keeps the original exit rates, and each inbound rate is shared
    equally among the sites, so the aggregated alpha dynamics is unchanged.
    """
    matches = [i for i, s in enumerate(spec.states) if s.alpha == target_alpha]
    if not matches:
        raise KeyError(f"no state with alpha={target_alpha}")
    if len(matches) > 1:
        raise ValueError(f"alpha={target_alpha} is already split")
    k = len(site_fluxes)
    if k < 1:
        raise ValueError("need at least one site flux")
    if hop_rate < 0 or min(site_fluxes) < 0:
        raise ValueError("hop_rate and site fluxes must be >= 0")
    if k == 1 and float(site_fluxes[0]) == spec.flux[matches[0]]:
        return spec

    t = matches[0]
    others = [i for i in range(spec.n_states) if i != t]
    states = [spec.states[i] for i in others[: t]] + [StateLabel(target_alpha, j) for j in range(k)]
    states += [spec.states[i] for i in others[t:]]
    old_of = others[:t] + [t] * k + others[t:]
    new_t = list(range(t, t + k))

    n = len(states)
    rates = np.zeros((n, n))
    for a in range(n):
        for b in range(n):
            if a == b:
                continue
            ia, ib = old_of[a], old_of[b]
            if ia == t and ib == t:
                rates[a, b] = hop_rate if abs(a - b) == 1 else 0.0
            elif ib == t:
                rates[a, b] = spec.rates[ia, ib] / k
            else:
                rates[a, b] = spec.rates[ia, ib]
    flux = np.array([spec.flux[old_of[a]] for a in range(n)])
    flux[new_t] = site_fluxes

    if isinstance(spec.initial, np.ndarray):
        initial = np.array([spec.initial[old_of[a]] / (k if old_of[a] == t else 1) for a in range(n)])
    elif spec.index(spec.initial) == t:
        initial = np.where(np.isin(np.arange(n), new_t), 1.0 / k, 0.0)
    else:
        initial = spec.initial
    return JumpProcessSpec(states, rates, flux, spec.duration, initial)


# -- file formats ---------------------------------------------------------


def format_clicks(record: ClickRecord) -> str:
    if record.duration is None:
        raise ValueError("click record needs a duration to be written")
    lines = [f"{CLICKS_FORMAT} duration_s={record.duration!r}"]
    lines.extend(repr(float(x)) for x in record.intervals)
    return "\n".join(lines) + "\n"


def parse_clicks(text: str) -> ClickRecord:
    lines = text.splitlines()
    if not lines or not lines[0].startswith("#clicks"):
        raise ValueError("not a click record: missing '#clicks' header")
    head = lines[0].split()
    if len(head) < 2 or head[1] != "v1":
        raise ValueError(f"unsupported click record version {head[1:2]}")
    duration = None
    for tok in head[2:]:
        if tok.startswith("duration_s="):
            duration = float(tok.split("=", 1)[1])
    body = [ln for ln in lines[1:] if ln.strip() and not ln.startswith("#")]
    return ClickRecord(np.array([float(x) for x in body]), duration)


def write_clicks(path, record: ClickRecord) -> None:
    with open(path, "w") as fh:
        fh.write(format_clicks(record))


def read_clicks(path) -> ClickRecord:
    with open(path) as fh:
        return parse_clicks(fh.read())


def format_trajectory(traj: Trajectory) -> str:
    rows = [f"0.0 {traj.initial_state.alpha} {traj.initial_state.site}"]
    rows += [f"{t!r} {s.alpha} {s.site}" for t, s in traj.events]
    return f"# duration_s={traj.duration!r}\n" + "\n".join(rows) + "\n"


def parse_trajectory(text: str) -> Trajectory:
    lines = text.splitlines()
    duration = float(lines[0].split("=", 1)[1])
    rows = [ln.split() for ln in lines[1:] if ln.strip()]
    init = StateLabel(int(rows[0][1]), int(rows[0][2]))
    times = np.array([float(r[0]) for r in rows[1:]])
    states = [StateLabel(int(r[1]), int(r[2])) for r in rows[1:]]
    return Trajectory(init, times, states, duration)
