"""Compiled sampler core shared by the single- and multi-population models.

State arrays carry a leading country axis of length C; the single-population
model is the case C = 1 with a 1 x 1 innovation covariance ``Sigma`` holding
``sigma_xi**2``.  Column j of ``Z[c]`` (0-based) is the transition from year
j+1 to j+2, so its period increment is ``dk[c, j]`` and its jump increment
``J[c, j+1] - J[c, j]``.  ``dk[c, 0]`` always equals ``d[c]``.

Updates touching the jump process (occurrences, severities, persistence)
use the likelihood with the free period increments integrated out; the
increments are then redrawn from their Gaussian full conditional.
"""
from __future__ import annotations

import math
from collections import namedtuple

import numba
import numpy as np

from .kernels import rwm_step, slice_step

Core = namedtuple("Core", "beta betaJ gb gbJ dk N Y J d sr coeff muY sY p Sigma")
Model = namedtuple(
    "Model",
    "Z kind free alpha_b alpha_bJ d_mean d_sd sxi_sd sr_sd muY_sd sY_sd p_a p_b "
    "coeff_kind coeff_p1 coeff_p2 y_pos cov_kind iw_df iw_scale sample_coeff",
)
Tune = namedtuple(
    "Tune",
    "w_coeff w_Y w_muY w_sY w_gb w_gbJ step_sr step_sxi acc_sr acc_sxi step_src step_sxic acc_src acc_sxic",
)

KIND_NONE, KIND_INDEP, KIND_AR1, KIND_MA1 = 0, 1, 2, 3
COV_HALFNORMAL, COV_IWISHART = 0, 1
MAX_STEPS = 50
LOG_2PI = math.log(2.0 * math.pi)
ADAPT_BATCH = 50
TARGET_ACCEPT = 0.44

jit = numba.njit(cache=True, nogil=True)


# ---------------------------------------------------------------- densities

@jit
def log_norm_cdf(x):
    if x > -30.0:
        return math.log(0.5 * math.erfc(-x / math.sqrt(2.0)))
    # asymptotic expansion keeps the left tail finite
    return -0.5 * x * x - math.log(-x) - 0.5 * LOG_2PI + math.log1p(-1.0 / (x * x))


@jit
def log_halfnormal(x, sd):
    if x < 0.0:
        return -np.inf
    return math.log(2.0) - 0.5 * LOG_2PI - math.log(sd) - 0.5 * (x / sd) ** 2


@jit
def log_severity(y, mu, sd, positive):
    if positive:
        if y < 0.0:
            return -np.inf
        return -0.5 * LOG_2PI - math.log(sd) - 0.5 * ((y - mu) / sd) ** 2 - log_norm_cdf(mu / sd)
    return -0.5 * LOG_2PI - math.log(sd) - 0.5 * ((y - mu) / sd) ** 2


@jit
def log_coeff_prior(x, kind, p1, p2):
    if x < 0.0 or x >= 1.0:
        return -np.inf
    if kind == 1:
        if x == 0.0:
            return -np.inf if p1 > 1.0 else (0.0 if p1 == 1.0 else np.inf)
        return (math.lgamma(p1 + p2) - math.lgamma(p1) - math.lgamma(p2)
                + (p1 - 1.0) * math.log(x) + (p2 - 1.0) * math.log1p(-x))
    mass = 0.5 * (math.erfc(-(1.0 - p1) / (p2 * math.sqrt(2.0))) - math.erfc(p1 / (p2 * math.sqrt(2.0))))
    return -0.5 * LOG_2PI - math.log(p2) - 0.5 * ((x - p1) / p2) ** 2 - math.log(mass)


@jit
def draw_severity(rng, mu, sd, positive):
    if not positive:
        return mu + sd * rng.standard_normal()
    # mu >= 0 under the half-normal hyperprior, so acceptance is at least 1/2
    for _ in range(100000):
        y = mu + sd * rng.standard_normal()
        if y > 0.0:
            return y
    return abs(mu) + 1e-12


# ---------------------------------------------------------------- jump paths

@jit
def fill_jumps(kind, N, Yc, coeff, Jc):
    T = N.shape[0]
    if kind == KIND_NONE:
        for t in range(T):
            Jc[t] = 0.0
    elif kind == KIND_INDEP:
        for t in range(T):
            Jc[t] = N[t] * Yc[t]
    elif kind == KIND_AR1:
        prev = 0.0
        for t in range(T):
            prev = coeff * prev + N[t] * Yc[t]
            Jc[t] = prev
    else:
        prev = 0.0
        for t in range(T):
            cur = N[t] * Yc[t]
            Jc[t] = cur + coeff * prev
            prev = cur


@jit
def refresh_jumps(m, s):
    for c in range(s.Y.shape[0]):
        fill_jumps(m.kind, s.N, s.Y[c], s.coeff[c], s.J[c])


# ---------------------------------------------------------------- likelihoods

@jit
def loglik_country(m, s, c):
    A, n_col = m.Z.shape[1], m.Z.shape[2]
    sr = s.sr[c]
    ss = 0.0
    for j in range(n_col):
        dJ = s.J[c, j + 1] - s.J[c, j]
        dk = s.dk[c, j]
        for x in range(A):
            r = m.Z[c, x, j] - s.beta[c, x] * dk - s.betaJ[c, x] * dJ
            ss += r * r
    n = A * n_col
    return -0.5 * n * LOG_2PI - n * math.log(sr) - 0.5 * ss / (sr * sr)


@jit
def loglik_total(m, s):
    out = 0.0
    for c in range(m.Z.shape[0]):
        out += loglik_country(m, s, c)
    return out


@jit
def loglik_pointwise(m, s, out):
    C, A, n_col = m.Z.shape
    k = 0
    for c in range(C):
        sr = s.sr[c]
        base = -0.5 * LOG_2PI - math.log(sr)
        for x in range(A):
            for j in range(n_col):
                r = m.Z[c, x, j] - s.beta[c, x] * s.dk[c, j] - s.betaJ[c, x] * (s.J[c, j + 1] - s.J[c, j])
                out[k] = base - 0.5 * (r / sr) ** 2
                k += 1


@jit
def beta_sq(s, c):
    out = 0.0
    for x in range(s.beta.shape[1]):
        out += s.beta[c, x] ** 2
    return out


@jit
def kappa_precision(s):
    """Sigma^-1 + diag(|beta_c|^2 / sr_c^2): posterior precision of one free increment column."""
    C = s.Sigma.shape[0]
    Sinv = np.linalg.inv(s.Sigma)
    M = Sinv.copy()
    for c in range(C):
        M[c, c] += beta_sq(s, c) / (s.sr[c] ** 2)
    return Sinv, M


@jit
def collapse_prep(m, s):
    C, A = m.Z.shape[0], m.Z.shape[1]
    _, M = kappa_precision(s)
    Minv = np.linalg.inv(M)
    logdet = np.log(np.linalg.det(M)) + np.log(np.linalg.det(s.Sigma))
    for c in range(C):
        logdet += 2.0 * A * math.log(s.sr[c])
    return Minv, logdet


@jit
def loglik_collapsed(m, s, Minv, logdet):
    """Log-likelihood with dk[:, 1:] integrated against N(d, Sigma)."""
    C, A, n_col = m.Z.shape
    u = np.empty(C)
    total = 0.0
    for j in range(n_col):
        quad = 0.0
        for c in range(C):
            sr2 = s.sr[c] ** 2
            dJ = s.J[c, j + 1] - s.J[c, j]
            rr = 0.0
            br = 0.0
            for x in range(A):
                r = m.Z[c, x, j] - s.betaJ[c, x] * dJ - s.beta[c, x] * s.d[c]
                rr += r * r
                br += s.beta[c, x] * r
            quad += rr / sr2
            u[c] = br / sr2
        if j == 0:
            for c in range(C):
                total += -0.5 * A * LOG_2PI - A * math.log(s.sr[c])
            total += -0.5 * quad
        else:
            uMu = 0.0
            for a in range(C):
                for b in range(C):
                    uMu += u[a] * Minv[a, b] * u[b]
            total += -0.5 * (C * A * LOG_2PI + logdet + quad - uMu)
    return total


# ---------------------------------------------------------------- slice targets

@jit
def lp_coeff(x, args):
    m, s, c, Minv, logdet = args
    lp = log_coeff_prior(x, m.coeff_kind, m.coeff_p1, m.coeff_p2)
    if not np.isfinite(lp):
        return -np.inf
    s.coeff[c] = x
    fill_jumps(m.kind, s.N, s.Y[c], x, s.J[c])
    return lp + loglik_collapsed(m, s, Minv, logdet)


@jit
def lp_severity(x, args):
    m, s, c, t, Minv, logdet = args
    lp = log_severity(x, s.muY[c], s.sY[c], m.y_pos)
    if not np.isfinite(lp):
        return -np.inf
    s.Y[c, t] = x
    fill_jumps(m.kind, s.N, s.Y[c], s.coeff[c], s.J[c])
    return lp + loglik_collapsed(m, s, Minv, logdet)


@jit
def lp_muY(x, args):
    m, s, c = args
    if x < 0.0:
        return -np.inf
    out = log_halfnormal(x, m.muY_sd)
    for t in range(s.N.shape[0]):
        if m.free[t] and s.N[t] == 1.0:
            out += log_severity(s.Y[c, t], x, s.sY[c], m.y_pos)
    return out


@jit
def lp_sY(x, args):
    m, s, c = args
    if x <= 0.0:
        return -np.inf
    out = log_halfnormal(x, m.sY_sd)
    for t in range(s.N.shape[0]):
        if m.free[t] and s.N[t] == 1.0:
            out += log_severity(s.Y[c, t], s.muY[c], x, m.y_pos)
    return out


@jit
def lp_gamma_coord(x, args):
    m, s, c, i, which = args
    if x <= 0.0:
        return -np.inf
    if which == 0:
        g, b, alpha = s.gb[c], s.beta[c], m.alpha_b[c, i]
    else:
        g, b, alpha = s.gbJ[c], s.betaJ[c], m.alpha_bJ[c, i]
    g[i] = x
    tot = 0.0
    for k in range(g.shape[0]):
        tot += g[k]
    for k in range(g.shape[0]):
        b[k] = g[k] / tot
    return (alpha - 1.0) * math.log(x) - x + loglik_country(m, s, c)


@jit
def lp_log_scale(x, args):
    """Log-scale target for a Gaussian scale with half-normal prior (Jacobian included)."""
    ss, n, prior_sd = args
    sigma = math.exp(x)
    return -n * x - 0.5 * ss / (sigma * sigma) - 0.5 * (sigma / prior_sd) ** 2 + x


@jit
def lp_collapsed_scale(x, args):
    """Log-scale target for sigma_xi (c < 0) or sigma_r[c] with the increments integrated out."""
    m, s, c = args
    sigma = math.exp(x)
    if c < 0:
        s.Sigma[0, 0] = sigma * sigma
        lp = -0.5 * (sigma / m.sxi_sd) ** 2 + x
    else:
        s.sr[c] = sigma
        lp = -0.5 * (sigma / m.sr_sd) ** 2 + x
    Minv, logdet = collapse_prep(m, s)
    return lp + loglik_collapsed(m, s, Minv, logdet)


# ---------------------------------------------------------------- conditional draws

@jit
def chol_draw(rng, mean, P):
    """Draw from N(mean, P^-1)."""
    L = np.linalg.cholesky(P)
    z = np.empty(mean.shape[0])
    for i in range(z.shape[0]):
        z[i] = rng.standard_normal()
    return mean + np.linalg.solve(L.T, z)


@jit
def draw_kappa(m, s, rng):
    """Exact Gaussian draw of the free increments dk[:, 1:] given everything else."""
    C, A, n_col = m.Z.shape
    Sinv, M = kappa_precision(s)
    prior_term = Sinv @ s.d
    w = np.empty(C)
    for j in range(1, n_col):
        for c in range(C):
            dJ = s.J[c, j + 1] - s.J[c, j]
            acc = 0.0
            for x in range(A):
                acc += s.beta[c, x] * (m.Z[c, x, j] - s.betaJ[c, x] * dJ)
            w[c] = acc / (s.sr[c] ** 2)
        mean = np.linalg.solve(M, prior_term + w)
        draw = chol_draw(rng, mean, M)
        for c in range(C):
            s.dk[c, j] = draw[c]


@jit
def draw_drift(m, s, rng):
    """Conjugate Gaussian draw of the drift vector; also resets dk[:, 0]."""
    C, A, n_col = m.Z.shape
    Sinv = np.linalg.inv(s.Sigma)
    P = (n_col - 1) * Sinv
    b = np.zeros(C)
    ksum = np.zeros(C)
    for c in range(C):
        for j in range(1, n_col):
            ksum[c] += s.dk[c, j]
    b += Sinv @ ksum
    for c in range(C):
        P[c, c] += 1.0 / m.d_sd ** 2 + beta_sq(s, c) / s.sr[c] ** 2
        dJ = s.J[c, 1] - s.J[c, 0]
        acc = 0.0
        for x in range(A):
            acc += s.beta[c, x] * (m.Z[c, x, 0] - s.betaJ[c, x] * dJ)
        b[c] += m.d_mean / m.d_sd ** 2 + acc / s.sr[c] ** 2
    mean = np.linalg.solve(P, b)
    d = chol_draw(rng, mean, P)
    for c in range(C):
        s.d[c] = d[c]
        s.dk[c, 0] = d[c]


@jit
def draw_iwishart(rng, df, scale):
    """Inverse-Wishart(df, scale) via the Bartlett decomposition of its inverse."""
    C = scale.shape[0]
    L = np.linalg.cholesky(np.linalg.inv(scale))
    B = np.zeros((C, C))
    for i in range(C):
        B[i, i] = math.sqrt(2.0 * rng.standard_gamma(0.5 * (df - i)))
        for k in range(i):
            B[i, k] = rng.standard_normal()
    LB = L @ B
    W = LB @ LB.T
    return np.linalg.inv(W)


@jit
def innovation_scatter(s):
    C, n_col = s.dk.shape
    S = np.zeros((C, C))
    for j in range(1, n_col):
        for a in range(C):
            for b in range(C):
                S[a, b] += (s.dk[a, j] - s.d[a]) * (s.dk[b, j] - s.d[b])
    return S


@jit
def count_occurrences(m, s):
    k = 0
    n_free = 0
    for t in range(s.N.shape[0]):
        if m.free[t]:
            n_free += 1
            if s.N[t] == 1.0:
                k += 1
    return k, n_free


@jit
def binary_update(m, s, t, rng, Minv, logdet):
    s.N[t] = 0.0
    refresh_jumps(m, s)
    l0 = loglik_collapsed(m, s, Minv, logdet)
    s.N[t] = 1.0
    refresh_jumps(m, s)
    l1 = loglik_collapsed(m, s, Minv, logdet)
    p = s.p[0]
    logodds = math.log(p) - math.log1p(-p) + l1 - l0
    if logodds > 0:
        prob = 1.0 / (1.0 + math.exp(-logodds))
    else:
        e = math.exp(logodds)
        prob = e / (1.0 + e)
    new = 1.0 if rng.random() < prob else 0.0
    if new == 0.0:
        s.N[t] = 0.0
        refresh_jumps(m, s)


@jit
def std_normal_above(rng, a):
    """Standard normal conditioned on z > a (naive rejection or Robert's exponential proposal)."""
    if a < 0.45:
        while True:
            z = rng.standard_normal()
            if z > a:
                return z
    alpha = 0.5 * (a + math.sqrt(a * a + 4.0))
    while True:
        z = a + rng.standard_exponential() / alpha
        if rng.random() < math.exp(-0.5 * (z - alpha) ** 2):
            return z


@jit
def log_proposal(y, mean, sd, positive):
    if positive:
        if y <= 0.0:
            return -np.inf
        return -0.5 * LOG_2PI - math.log(sd) - 0.5 * ((y - mean) / sd) ** 2 - log_norm_cdf(mean / sd)
    return -0.5 * LOG_2PI - math.log(sd) - 0.5 * ((y - mean) / sd) ** 2


@jit
def _set_severities(m, s, t, y):
    for c in range(y.shape[0]):
        s.Y[c, t] = y[c]
    refresh_jumps(m, s)


@jit
def severity_proposal(m, s, t, Minv, logdet):
    """Gaussian conditional of the severities at t given N_t = 1 and everything else.

    The collapsed log-likelihood is exactly quadratic in Y[:, t], so its
    gradient and Hessian at 0 follow from unit perturbations; combined with
    the Gaussian severity kernel this gives the mean and covariance of the
    untruncated conditional.  Returns (mean, marginal sd) per population.
    """
    C = s.Y.shape[0]
    keep = s.Y[:, t].copy()
    s.N[t] = 1.0
    y = np.zeros(C)
    _set_severities(m, s, t, y)
    l0 = loglik_collapsed(m, s, Minv, logdet)
    g = np.empty(C)
    H = np.empty((C, C))
    plus = np.empty(C)
    for c in range(C):
        y[:] = 0.0
        y[c] = 1.0
        _set_severities(m, s, t, y)
        lp = loglik_collapsed(m, s, Minv, logdet)
        y[c] = -1.0
        _set_severities(m, s, t, y)
        lm = loglik_collapsed(m, s, Minv, logdet)
        g[c] = 0.5 * (lp - lm)
        H[c, c] = -(lp + lm - 2.0 * l0)
        plus[c] = lp
    for a in range(C):
        for b in range(a + 1, C):
            y[:] = 0.0
            y[a] = 1.0
            y[b] = 1.0
            _set_severities(m, s, t, y)
            lab = loglik_collapsed(m, s, Minv, logdet)
            # l(e_a + e_b) = l0 + g_a + g_b - (H_aa + H_bb)/2 - H_ab
            H[a, b] = -(lab - plus[a] - plus[b] + l0)
            H[b, a] = H[a, b]
    P = H.copy()
    rhs = g.copy()
    for c in range(C):
        P[c, c] += 1.0 / s.sY[c] ** 2
        rhs[c] += s.muY[c] / s.sY[c] ** 2
    cov = np.linalg.inv(P)
    mean = cov @ rhs
    sd = np.empty(C)
    for c in range(C):
        sd[c] = math.sqrt(max(cov[c, c], 1e-300))
    _set_severities(m, s, t, keep)
    return mean, sd


@jit
def birth_death_update(m, s, t, rng, Minv, logdet):
    """Joint Metropolis-Hastings move on (N_t, Y[:, t]).

    A birth draws the new severities from ``severity_proposal``; a death
    redraws them from the severity prior, which is their full conditional
    when N_t = 0.  Both directions use the same proposal pair, so the move
    is reversible.
    """
    C = s.Y.shape[0]
    p = s.p[0]
    cur = s.N[t]
    old_y = s.Y[:, t].copy()
    mean, sd = severity_proposal(m, s, t, Minv, logdet)
    if cur == 0.0:
        s.N[t] = 0.0
        refresh_jumps(m, s)
        l_off = loglik_collapsed(m, s, Minv, logdet)
        y = np.empty(C)
        logq = 0.0
        logf = 0.0
        for c in range(C):
            if m.y_pos:
                y[c] = mean[c] + sd[c] * std_normal_above(rng, -mean[c] / sd[c])
            else:
                y[c] = mean[c] + sd[c] * rng.standard_normal()
            logq += log_proposal(y[c], mean[c], sd[c], m.y_pos)
            logf += log_severity(y[c], s.muY[c], s.sY[c], m.y_pos)
        s.N[t] = 1.0
        _set_severities(m, s, t, y)
        l_on = loglik_collapsed(m, s, Minv, logdet)
        log_ratio = math.log(p) - math.log1p(-p) + l_on - l_off + logf - logq
        if not (log_ratio > -rng.standard_exponential()):
            s.N[t] = 0.0
            _set_severities(m, s, t, old_y)
    else:
        refresh_jumps(m, s)
        l_on = loglik_collapsed(m, s, Minv, logdet)
        logq = 0.0
        logf = 0.0
        for c in range(C):
            logq += log_proposal(old_y[c], mean[c], sd[c], m.y_pos)
            logf += log_severity(old_y[c], s.muY[c], s.sY[c], m.y_pos)
        s.N[t] = 0.0
        refresh_jumps(m, s)
        l_off = loglik_collapsed(m, s, Minv, logdet)
        log_ratio = math.log1p(-p) - math.log(p) + l_off - l_on + logq - logf
        if log_ratio > -rng.standard_exponential():
            for c in range(C):
                s.Y[c, t] = draw_severity(rng, s.muY[c], s.sY[c], m.y_pos)
            refresh_jumps(m, s)
        else:
            s.N[t] = 1.0
            refresh_jumps(m, s)


# ---------------------------------------------------------------- one sweep

@jit
def _adapt_width(w, old, new):
    return 0.95 * w + 0.05 * max(2.0 * abs(new - old), 1e-10)


@jit
def sweep(m, s, tune, rng, adapt):
    C, A, n_col = m.Z.shape
    T = s.N.shape[0]
    has_jumps = m.kind != KIND_NONE

    if has_jumps:
        Minv, logdet = collapse_prep(m, s)
        for t in range(T):
            if m.free[t]:
                binary_update(m, s, t, rng, Minv, logdet)
                birth_death_update(m, s, t, rng, Minv, logdet)
        k, n_free = count_occurrences(m, s)
        s.p[0] = rng.beta(m.p_a + k, m.p_b + n_free - k)

        for c in range(C):
            old = s.muY[c]
            new = slice_step(lp_muY, (m, s, c), old, tune.w_muY[c], MAX_STEPS, rng, 0.0, np.inf)
            s.muY[c] = new
            if adapt:
                tune.w_muY[c] = _adapt_width(tune.w_muY[c], old, new)
            old = s.sY[c]
            new = slice_step(lp_sY, (m, s, c), old, tune.w_sY[c], MAX_STEPS, rng, 0.0, np.inf)
            s.sY[c] = new
            if adapt:
                tune.w_sY[c] = _adapt_width(tune.w_sY[c], old, new)
            for t in range(T):
                if m.free[t] and s.N[t] == 0.0:
                    s.Y[c, t] = draw_severity(rng, s.muY[c], s.sY[c], m.y_pos)

        for c in range(C):
            for t in range(T):
                if m.free[t] and s.N[t] == 1.0:
                    old = s.Y[c, t]
                    lo = 0.0 if m.y_pos else -np.inf
                    new = slice_step(lp_severity, (m, s, c, t, Minv, logdet), old,
                                     tune.w_Y[c, t], MAX_STEPS, rng, lo, np.inf)
                    s.Y[c, t] = new
                    fill_jumps(m.kind, s.N, s.Y[c], s.coeff[c], s.J[c])
                    if adapt:
                        tune.w_Y[c, t] = _adapt_width(tune.w_Y[c, t], old, new)

        if m.sample_coeff:
            for c in range(C):
                old = s.coeff[c]
                new = slice_step(lp_coeff, (m, s, c, Minv, logdet), old, tune.w_coeff[c],
                                 MAX_STEPS, rng, 0.0, 1.0)
                s.coeff[c] = new
                fill_jumps(m.kind, s.N, s.Y[c], new, s.J[c])
                if adapt:
                    tune.w_coeff[c] = _adapt_width(tune.w_coeff[c], old, new)

    # scales updated with the increments integrated out, which breaks their
    # dependence on dk; the conditional updates below follow the exact dk draw
    for c in range(C):
        x0 = math.log(s.sr[c])
        lp0 = lp_collapsed_scale(x0, (m, s, c))
        x1, _, acc = rwm_step(lp_collapsed_scale, (m, s, c), x0, lp0, math.exp(tune.step_src[c]), rng)
        s.sr[c] = math.exp(x1)
        if acc:
            tune.acc_src[c] += 1
    if m.cov_kind == COV_HALFNORMAL:
        x0 = 0.5 * math.log(s.Sigma[0, 0])
        lp0 = lp_collapsed_scale(x0, (m, s, -1))
        x1, _, acc = rwm_step(lp_collapsed_scale, (m, s, -1), x0, lp0, math.exp(tune.step_sxic[0]), rng)
        s.Sigma[0, 0] = math.exp(2.0 * x1)
        if acc:
            tune.acc_sxic[0] += 1

    draw_kappa(m, s, rng)
    draw_drift(m, s, rng)

    if m.cov_kind == COV_HALFNORMAL:
        ss = 0.0
        for j in range(1, n_col):
            ss += (s.dk[0, j] - s.d[0]) ** 2
        x0 = 0.5 * math.log(s.Sigma[0, 0])
        args = (ss, float(n_col - 1), m.sxi_sd)
        x1, _, acc = rwm_step(lp_log_scale, args, x0, lp_log_scale(x0, args), math.exp(tune.step_sxi[0]), rng)
        s.Sigma[0, 0] = math.exp(2.0 * x1)
        if acc:
            tune.acc_sxi[0] += 1
    else:
        S = innovation_scatter(s)
        scale = S.copy()
        for c in range(C):
            scale[c, c] += m.iw_scale
        s.Sigma[:, :] = draw_iwishart(rng, m.iw_df + n_col - 1, scale)

    for c in range(C):
        ll = loglik_country(m, s, c)
        n = A * n_col
        sr = s.sr[c]
        ss = -2.0 * sr * sr * (ll + 0.5 * n * LOG_2PI + n * math.log(sr))
        x0 = math.log(sr)
        args = (ss, float(n), m.sr_sd)
        x1, _, acc = rwm_step(lp_log_scale, args, x0, lp_log_scale(x0, args), math.exp(tune.step_sr[c]), rng)
        s.sr[c] = math.exp(x1)
        if acc:
            tune.acc_sr[c] += 1

    for c in range(C):
        for i in range(A):
            old = s.gb[c, i]
            new = slice_step(lp_gamma_coord, (m, s, c, i, 0), old, tune.w_gb[c, i], MAX_STEPS, rng, 0.0, np.inf)
            lp_gamma_coord(new, (m, s, c, i, 0))
            if adapt:
                tune.w_gb[c, i] = _adapt_width(tune.w_gb[c, i], old, new)
        if has_jumps:
            for i in range(A):
                old = s.gbJ[c, i]
                new = slice_step(lp_gamma_coord, (m, s, c, i, 1), old, tune.w_gbJ[c, i], MAX_STEPS, rng, 0.0, np.inf)
                lp_gamma_coord(new, (m, s, c, i, 1))
                if adapt:
                    tune.w_gbJ[c, i] = _adapt_width(tune.w_gbJ[c, i], old, new)


@jit
def adapt_steps(tune, batch):
    delta = min(0.25, 1.0 / math.sqrt(batch))
    for c in range(tune.step_sr.shape[0]):
        rate = tune.acc_sr[c] / ADAPT_BATCH
        tune.step_sr[c] += delta if rate > TARGET_ACCEPT else -delta
        tune.acc_sr[c] = 0
    rate = tune.acc_sxi[0] / ADAPT_BATCH
    tune.step_sxi[0] += delta if rate > TARGET_ACCEPT else -delta
    tune.acc_sxi[0] = 0
    for c in range(tune.step_src.shape[0]):
        rate = tune.acc_src[c] / ADAPT_BATCH
        tune.step_src[c] += delta if rate > TARGET_ACCEPT else -delta
        tune.acc_src[c] = 0
    rate = tune.acc_sxic[0] / ADAPT_BATCH
    tune.step_sxic[0] += delta if rate > TARGET_ACCEPT else -delta
    tune.acc_sxic[0] = 0


# ---------------------------------------------------------------- storage

@jit
def flat_size(C, A, T):
    per_country = 2 * A + (T - 1) + 2 * T + 5
    cov = 1 if C == 1 else C * (C + 1) // 2
    return C * per_country + T + 1 + cov


@jit
def flatten(s, row):
    C, A = s.beta.shape
    T = s.N.shape[0]
    k = 0
    for c in range(C):
        for x in range(A):
            row[k] = s.beta[c, x]
            k += 1
        for x in range(A):
            row[k] = s.betaJ[c, x]
            k += 1
        for j in range(T - 1):
            row[k] = s.dk[c, j]
            k += 1
        for t in range(T):
            row[k] = s.Y[c, t]
            k += 1
        for t in range(T):
            row[k] = s.J[c, t]
            k += 1
        row[k] = s.d[c]
        row[k + 1] = s.sr[c]
        row[k + 2] = s.coeff[c]
        row[k + 3] = s.muY[c]
        row[k + 4] = s.sY[c]
        k += 5
    for t in range(T):
        row[k] = s.N[t]
        k += 1
    row[k] = s.p[0]
    k += 1
    if C == 1:
        row[k] = math.sqrt(s.Sigma[0, 0])
    else:
        for a in range(C):
            for b in range(a, C):
                row[k] = s.Sigma[a, b]
                k += 1


@jit
def run_chain(m, s, tune, rng, burn_in, n_samples, thin, draws, loglik):
    refresh_jumps(m, s)
    batch = 0
    kept = 0
    for it in range(burn_in + n_samples):
        adapt = it < burn_in
        sweep(m, s, tune, rng, adapt)
        if adapt and (it + 1) % ADAPT_BATCH == 0:
            batch += 1
            adapt_steps(tune, batch)
        if not adapt and (it - burn_in + 1) % thin == 0:
            flatten(s, draws[kept])
            loglik_pointwise(m, s, loglik[kept])
            kept += 1
    return kept
