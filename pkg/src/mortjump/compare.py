"""WAIC and Pareto-smoothed importance-sampling LOO from pointwise log-likelihoods.

``loglik`` is always an S x n matrix: S posterior draws by n observations.
Both criteria are sums of per-observation terms, so they are additive over
blocks of observations; this is what makes a joint multi-population fit with
independent components decompose into its single-population parts.
"""
from __future__ import annotations

import math
import warnings
from typing import NamedTuple

import numpy as np
import pandas as pd
from scipy.special import logsumexp

from .errors import InvalidLogLik

TAIL_FRACTION = 0.2
MIN_TAIL = 5
K_THRESHOLD = 0.7


class WaicResult(NamedTuple):
    waic: float
    lpd_hat: float
    p_waic: float


class LooResult(NamedTuple):
    lpd_loo: float
    deviance: float
    pareto_k: np.ndarray


def _check(loglik) -> np.ndarray:
    ll = np.asarray(loglik, dtype=float)
    if ll.ndim == 1:
        ll = ll[:, None]
    if ll.ndim != 2 or ll.shape[0] < 2:
        raise InvalidLogLik(f"log-likelihood must be S x n with S >= 2, got shape {ll.shape}")
    if not np.all(np.isfinite(ll)):
        raise InvalidLogLik("log-likelihood matrix has non-finite entries")
    return ll


def waic_pointwise(loglik) -> tuple[np.ndarray, np.ndarray]:
    """Per-observation (lpd_hat_i, p_waic_i)."""
    ll = _check(loglik)
    lpd = logsumexp(ll, axis=0) - math.log(ll.shape[0])
    return lpd, ll.var(axis=0, ddof=1)


def waic(loglik) -> WaicResult:
    """WAIC = -2 lpd_hat + 2 p_waic with p_waic the summed draw variances."""
    lpd, pw = waic_pointwise(loglik)
    lpd_hat, p_waic = float(lpd.sum()), float(pw.sum())
    return WaicResult(-2.0 * lpd_hat + 2.0 * p_waic, lpd_hat, p_waic)


def gpd_fit(x: np.ndarray) -> tuple[float, float]:
    """Generalized-Pareto (k, sigma) for ascending exceedances ``x``.

    Zhang-Stephens empirical-Bayes estimate with the usual weak shrinkage of
    k towards 0.5.
    """
    n = x.size
    m = 30 + int(math.sqrt(n))
    b = 1.0 - np.sqrt(m / (np.arange(1, m + 1) - 0.5))
    b /= 3.0 * x[int(n / 4 + 0.5) - 1]
    b += 1.0 / x[-1]
    k = np.log1p(-b[:, None] * x).mean(axis=1)
    prof = n * (np.log(-b / k) - k - 1.0)
    # overflow here only drives negligible weights to zero
    with np.errstate(over="ignore"):
        w = 1.0 / np.exp(prof - prof[:, None]).sum(axis=1)
    keep = w >= 10 * np.finfo(float).eps
    w, b = w[keep], b[keep]
    w /= w.sum()
    b_post = float(np.sum(b * w))
    k_post = float(np.log1p(-b_post * x).mean())
    sigma = -k_post / b_post
    k_post = (n * k_post + 10 * 0.5) / (n + 10)
    return k_post, sigma


def _gpd_quantile(p, k, sigma):
    if abs(k) < 1e-12:
        return -sigma * np.log1p(-p)
    return sigma * np.expm1(-k * np.log1p(-p)) / k


def psis_smooth(log_ratios: np.ndarray) -> tuple[np.ndarray, float]:
    """Pareto-smoothed log importance weights for one observation.

    The largest 20% of the ratios are replaced by expected order statistics
    of a generalized Pareto fitted to them, capped at the largest raw ratio.
    Returns (log weights, k).  With fewer than 5 tail draws the raw ratios
    are returned with a warning and k = NaN.
    """
    lw = log_ratios - log_ratios.max()
    S = lw.size
    M = int(math.ceil(TAIL_FRACTION * S))
    if M < MIN_TAIL or M >= S:
        warnings.warn("too few draws for Pareto smoothing; using raw importance ratios", RuntimeWarning, stacklevel=3)
        return lw, np.nan
    order = np.argsort(lw, kind="stable")
    tail = order[-M:]
    cutoff = lw[order[-M - 1]]
    exceed = np.exp(lw[tail]) - math.exp(cutoff)
    # a tail dominated by ties carries no shape information; keep the raw ratios
    if exceed[int(M / 4 + 0.5) - 1] <= 0:
        return lw, 0.0
    k, sigma = gpd_fit(np.maximum(exceed, 0.0))
    if not np.isfinite(k):
        return lw, np.inf
    p = (np.arange(1, M + 1) - 0.5) / M
    smoothed = np.log(_gpd_quantile(p, k, sigma) + math.exp(cutoff))
    out = lw.copy()
    out[tail] = np.minimum(smoothed, 0.0)
    return out, float(k)


def loo_pointwise(loglik) -> tuple[np.ndarray, np.ndarray]:
    """Per-observation (lpd_loo_i, pareto_k_i)."""
    ll = _check(loglik)
    n = ll.shape[1]
    elpd = np.empty(n)
    ks = np.empty(n)
    for i in range(n):
        lw, ks[i] = psis_smooth(-ll[:, i])
        elpd[i] = logsumexp(lw + ll[:, i]) - logsumexp(lw)
    return elpd, ks


def loo_cv(loglik) -> LooResult:
    """PSIS-LOO: lpd_loo, deviance = -2 lpd_loo and per-observation Pareto k."""
    elpd, ks = loo_pointwise(loglik)
    lpd_loo = float(elpd.sum())
    bad = int(np.sum(ks > K_THRESHOLD))
    if bad:
        warnings.warn(f"{bad} observation(s) have Pareto k > {K_THRESHOLD}; LOO estimate unreliable",
                      RuntimeWarning, stacklevel=2)
    return LooResult(lpd_loo, -2.0 * lpd_loo, ks)


def comparison_report(fits: dict) -> pd.DataFrame:
    """One row per model: WAIC, lpd_hat, p_waic, LOO deviance, #(k > 0.7).

    ``fits`` maps a model label to its S x n log-likelihood matrix.  The row
    with the lowest WAIC is flagged in column ``best``.
    """
    rows = []
    for label, ll in fits.items():
        w = waic(ll)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            lo = loo_cv(ll)
        rows.append({
            "model": label,
            "waic": w.waic,
            "lpd_hat": w.lpd_hat,
            "p_waic": w.p_waic,
            "loo_deviance": lo.deviance,
            "n_pareto_k_gt_0.7": int(np.sum(lo.pareto_k > K_THRESHOLD)),
        })
    table = pd.DataFrame(rows)
    table["best"] = table["waic"] == table["waic"].min()
    return table
