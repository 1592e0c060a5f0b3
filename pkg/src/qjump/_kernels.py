"""Compiled forward/backward recursions shared by the Bayes filter and the HMM."""
import numpy as np
from numba import njit


@njit(cache=True)
def forward(prior0, trans, loglik):
    """
    Normalized forward pass.

    ``prior0`` is the predicted distribution for the first bin, ``trans`` the
    per-bin propagator (row vector convention), ``loglik[t, s]`` the log
    emission probability. Bins where every state has zero likelihood keep the
    prediction and are flagged; their log-evidence is -inf.
    """
    n_t, n_s = loglik.shape
    alpha = np.empty((n_t, n_s))
    logc = np.empty(n_t)
    flags = np.zeros(n_t, dtype=np.bool_)
    pred = prior0.copy()
    for t in range(n_t):
        if t > 0:
            prev = alpha[t - 1]
            for j in range(n_s):
                acc = 0.0
                for i in range(n_s):
                    acc += prev[i] * trans[i, j]
                pred[j] = acc
            tot = 0.0
            for j in range(n_s):
                tot += pred[j]
            for j in range(n_s):
                pred[j] /= tot
        m = -np.inf
        for j in range(n_s):
            if loglik[t, j] > m:
                m = loglik[t, j]
        if m == -np.inf:
            flags[t] = True
            logc[t] = -np.inf
            for j in range(n_s):
                alpha[t, j] = pred[j]
            continue
        s = 0.0
        for j in range(n_s):
            v = pred[j] * np.exp(loglik[t, j] - m)
            alpha[t, j] = v
            s += v
        if s == 0.0:
            flags[t] = True
            logc[t] = -np.inf
            for j in range(n_s):
                alpha[t, j] = pred[j]
            continue
        for j in range(n_s):
            alpha[t, j] /= s
        logc[t] = np.log(s) + m
    return alpha, logc, flags


@njit(cache=True)
def backward(trans, loglik, logc):
    """
    Scaled backward pass matching :func:`forward`; ``beta[t] * alpha[t]`` is
    the smoothed marginal.
    """
    n_t, n_s = loglik.shape
    beta = np.empty((n_t, n_s))
    for j in range(n_s):
        beta[n_t - 1, j] = 1.0
    lik = np.empty(n_s)
    for t in range(n_t - 2, -1, -1):
        shift = logc[t + 1]
        for j in range(n_s):
            lik[j] = np.exp(loglik[t + 1, j] - shift) * beta[t + 1, j]
        for i in range(n_s):
            acc = 0.0
            for j in range(n_s):
                acc += trans[i, j] * lik[j]
            beta[t, i] = acc
    return beta


@njit(cache=True)
def expected_transitions(alpha, beta, trans, loglik, logc):
    """Sum over bins of the pairwise posteriors P(s_t = i, s_t+1 = j | data)."""
    n_t, n_s = loglik.shape
    xi = np.zeros((n_s, n_s))
    for t in range(n_t - 1):
        shift = logc[t + 1]
        for i in range(n_s):
            a = alpha[t, i]
            if a == 0.0:
                continue
            for j in range(n_s):
                xi[i, j] += a * trans[i, j] * np.exp(loglik[t + 1, j] - shift) * beta[t + 1, j]
    return xi
