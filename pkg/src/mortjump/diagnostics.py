"""Convergence diagnostics: rank-normalized split-R-hat, bulk and tail ESS.

All functions take ``chains`` as an (M, n) array of M chains of equal length.
"""
from __future__ import annotations

import numpy as np
import pandas as pd
from scipy import special, stats

from .errors import ChainTooShort, DegenerateChains

RHAT_THRESHOLD = 1.05
SUMMARY_QUANTILES = (0.1, 0.9)


def _as_chains(chains) -> np.ndarray:
    x = np.asarray(chains, dtype=float)
    if x.ndim == 1:
        x = x[None]
    if x.ndim != 2:
        raise ValueError("chains must be an (M, n) array")
    if x.shape[1] < 4:
        raise ChainTooShort(f"chains of length {x.shape[1]} are too short (need at least 4)")
    return x


def _split(x: np.ndarray) -> np.ndarray:
    half = x.shape[1] // 2
    return np.concatenate([x[:, :half], x[:, x.shape[1] - half:]])


def rank_normalize(x: np.ndarray) -> np.ndarray:
    """Normal scores of the pooled ranks, (r - 3/8) / (S + 1/4), keeping the shape."""
    ranks = stats.rankdata(x, method="average").reshape(x.shape)
    return special.ndtri((ranks - 0.375) / (x.size + 0.25))


def _rhat(x: np.ndarray) -> float:
    n = x.shape[1]
    W = x.var(axis=1, ddof=1).mean()
    B = n * x.mean(axis=1).var(ddof=1)
    return float(np.sqrt(((n - 1) / n * W + B / n) / W))


def split_rhat(chains, rank: bool = True) -> float:
    """Split-R-hat, rank-normalized by default.

    Rank normalization bounds the statistic: two completely separated chains
    give sqrt(1 + (4/3)(2/pi) / (1 - 2/pi)) ~ 1.83 however far apart they
    are.  ``rank=False`` returns the classic split-R-hat on the raw values.
    """
    x = _as_chains(chains)
    if np.all(x.var(axis=1) == 0):
        raise DegenerateChains("every chain is constant")
    return _rhat(rank_normalize(_split(x)) if rank else _split(x))


def _autocov(y: np.ndarray) -> np.ndarray:
    """Biased autocovariance at lags 0..n-1 by direct summation."""
    n = y.size
    c = y - y.mean()
    return np.correlate(c, c, mode="full")[n - 1:] / n


def _ess(x: np.ndarray) -> float:
    """Multi-chain ESS with Geyer's initial monotone sequence."""
    M, n = x.shape
    if np.all(x.var(axis=1) == 0):
        return np.nan
    acov = np.stack([_autocov(row) for row in x])
    chain_var = acov[:, 0] * n / (n - 1)
    mean_var = chain_var.mean()
    var_plus = mean_var * (n - 1) / n
    if M > 1:
        var_plus += x.mean(axis=1).var(ddof=1)
    rho = 1.0 - (mean_var - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    # positive pair sums, truncated at the first negative pair
    t = 0
    pairs = []
    while t + 1 < n:
        s = rho[t] + rho[t + 1]
        if s < 0:
            break
        pairs.append(s)
        t += 2
    pairs = np.minimum.accumulate(np.asarray(pairs)) if pairs else np.array([1.0])
    tau = -1.0 + 2.0 * pairs.sum()
    tau = max(tau, 1.0 / np.log10(M * n))
    return float(M * n / tau)


def ess_bulk(chains) -> float:
    x = _as_chains(chains)
    if np.all(x.var(axis=1) == 0):
        raise DegenerateChains("every chain is constant")
    return _ess(rank_normalize(_split(x)))


def ess_tail(chains) -> float:
    """Minimum ESS of the 5% and 95% quantile indicators."""
    x = _as_chains(chains)
    if np.all(x.var(axis=1) == 0):
        raise DegenerateChains("every chain is constant")
    s = _split(x)
    out = []
    for q in (0.05, 0.95):
        ind = (s <= np.quantile(s, q)).astype(float)
        out.append(_ess(ind))
    return float(np.nanmin(out)) if not np.all(np.isnan(out)) else np.nan


def marginal_mode(values) -> float:
    """Mode of a marginal posterior: most frequent value for discrete draws,
    otherwise the maximiser of a Gaussian kernel density estimate on a grid."""
    v = np.asarray(values, dtype=float)
    uniq, counts = np.unique(v, return_counts=True)
    if uniq.size <= 2 or counts.max() > 0.5 * v.size:
        return float(uniq[np.argmax(counts)])
    kde = stats.gaussian_kde(v)
    grid = np.linspace(v.min(), v.max(), 512)
    return float(grid[np.argmax(kde(grid))])


def _safe(fn, x):
    try:
        return fn(x)
    except DegenerateChains:
        return np.nan


def diagnostics_table(draws, names=None) -> pd.DataFrame:
    """Posterior summary: mean, MAP, sd, 10%/90% quantiles, R-hat, bulk/tail ESS.

    Pinned or otherwise constant parameters get R-hat and ESS of NaN
    (written as ``NA``).
    """
    names = list(names or draws.summary_names())
    rows = []
    for name in names:
        v = draws.column(name)
        ch = draws.chains(name)
        q = np.quantile(v, SUMMARY_QUANTILES)
        rows.append({
            "parameter": name,
            "mean": v.mean(),
            "MAP": marginal_mode(v),
            "sd": v.std(ddof=1),
            "q10": q[0],
            "q90": q[1],
            "rhat": _safe(split_rhat, ch),
            "ess_bulk": _safe(ess_bulk, ch),
            "ess_tail": _safe(ess_tail, ch),
        })
    return pd.DataFrame(rows)


def converged(table: pd.DataFrame, threshold: float = RHAT_THRESHOLD) -> bool:
    r = table["rhat"].to_numpy(dtype=float)
    return bool(np.all(r[~np.isnan(r)] < threshold))


def write_diagnostics(table: pd.DataFrame, path) -> None:
    table.to_csv(path, index=False, na_rep="NA")


def read_diagnostics(path) -> pd.DataFrame:
    return pd.read_csv(path, na_values=["NA"])
