"""Brute-force reference implementations used as test oracles."""
from __future__ import annotations

import math

import numpy as np
from scipy import stats


def _log_mean_exp(values) -> float:
    m = max(values)
    return m + math.log(sum(math.exp(v - m) for v in values) / len(values))


def waic_loops(ll) -> tuple[float, float, float]:
    S, n = ll.shape
    lpd = p = 0.0
    for i in range(n):
        col = [float(ll[s, i]) for s in range(S)]
        lpd += _log_mean_exp(col)
        mean = sum(col) / S
        p += sum((v - mean) ** 2 for v in col) / (S - 1)
    return -2 * lpd + 2 * p, lpd, p


def _gpd_fit_loops(x):
    # Zhang-Stephens profile estimate with a weak prior pulling k towards 0.5
    n = len(x)
    m = 30 + int(math.sqrt(n))
    q = x[int(n / 4 + 0.5) - 1]
    bs = [1.0 / x[-1] + (1.0 - math.sqrt(m / (j - 0.5))) / (3.0 * q) for j in range(1, m + 1)]
    ks, prof = [], []
    for b in bs:
        k = sum(math.log1p(-b * v) for v in x) / n
        ks.append(k)
        prof.append(n * (math.log(-b / k) - k - 1.0))
    ws = []
    for j in range(m):
        ws.append(1.0 / sum(math.exp(prof[i] - prof[j]) for i in range(m)))
    keep = [j for j in range(m) if ws[j] >= 10 * np.finfo(float).eps]
    total = sum(ws[j] for j in keep)
    b_post = sum(bs[j] * ws[j] for j in keep) / total
    k = sum(math.log1p(-b_post * v) for v in x) / n
    sigma = -k / b_post
    return (n * k + 5.0) / (n + 10), sigma


def loo_loops(ll) -> tuple[float, list]:
    S, n = ll.shape
    M = math.ceil(0.2 * S)
    total, ks = 0.0, []
    for i in range(n):
        lr = [-float(ll[s, i]) for s in range(S)]
        top = max(lr)
        lw = [v - top for v in lr]
        order = sorted(range(S), key=lambda s: lw[s])
        tail = order[-M:]
        cutoff = lw[order[-M - 1]]
        exceed = [math.exp(lw[s]) - math.exp(cutoff) for s in tail]
        k, sigma = _gpd_fit_loops([max(e, 0.0) for e in exceed])
        ks.append(k)
        for j, s in enumerate(tail):
            p = (j + 0.5) / M
            quant = sigma * math.expm1(-k * math.log1p(-p)) / k
            lw[s] = min(math.log(quant + math.exp(cutoff)), 0.0)
        num = [lw[s] + float(ll[s, i]) for s in range(S)]
        total += _log_mean_exp(num) - _log_mean_exp(lw)
    return total, ks


def gaussian_toy(n=5, S=1000, prior_sd=10.0, seed=0):
    """Exact posterior draws and exact leave-one-out density for y_i ~ N(mu, 1)."""
    rng = np.random.default_rng(seed)
    y = rng.normal(0.5, 1.0, n)
    prec = 1 / prior_sd**2 + n
    mu = rng.normal(y.sum() / prec, math.sqrt(1 / prec), S)
    ll = stats.norm.logpdf(y[None, :], mu[:, None], 1.0)
    exact = 0.0
    for i in range(n):
        prec_i = 1 / prior_sd**2 + n - 1
        mean_i = (y.sum() - y[i]) / prec_i
        exact += stats.norm.logpdf(y[i], mean_i, math.sqrt(1 + 1 / prec_i))
    return ll, exact
