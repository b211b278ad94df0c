"""Univariate MCMC kernels: stepping-out slice sampling and random-walk Metropolis.

Each kernel is written once as a plain function of ``(logp, args, ...)`` where
``logp(x, args)`` returns a log density.  The same source is compiled with
numba for the sampler core (``slice_step``/``rwm_step``); the public wrappers
run the uncompiled originals, which accept any Python callable.
"""
from __future__ import annotations

import math

import numba
import numpy as np

from .errors import InvalidStart


@numba.njit(cache=True, nogil=True, inline="always")
def slice_step(logp, args, x0, width, max_steps, rng, lower, upper):
    fx0 = logp(x0, args)
    if not np.isfinite(fx0):
        return np.nan
    logy = fx0 - rng.standard_exponential()
    left = x0 - width * rng.random()
    right = left + width
    j = int(math.floor(max_steps * rng.random()))
    k = max_steps - 1 - j
    while j > 0 and left > lower and logp(left, args) > logy:
        left -= width
        j -= 1
    while k > 0 and right < upper and logp(right, args) > logy:
        right += width
        k -= 1
    if left < lower:
        left = lower
    if right > upper:
        right = upper
    while True:
        x1 = left + rng.random() * (right - left)
        if x1 > lower and x1 < upper and logp(x1, args) > logy:
            return x1
        if x1 < x0:
            left = x1
        else:
            right = x1
        if right - left < 1e-14 * (1.0 + abs(x0)):
            return x0


@numba.njit(cache=True, nogil=True, inline="always")
def rwm_step(logp, args, x0, lp0, step_sd, rng):
    prop = x0 + step_sd * rng.standard_normal()
    lp1 = logp(prop, args)
    if lp1 - lp0 > -rng.standard_exponential():
        return prop, lp1, True
    return x0, lp0, False


# uncompiled originals, used with arbitrary Python callables
_slice_impl = slice_step.py_func
_rwm_impl = rwm_step.py_func


def _wrap(log_density):
    def f(x, _args):
        return float(log_density(x))

    return f


def slice_sample(log_density, current: float, width: float = 1.0, max_steps: int = 50,
                 rng=None, lower: float = -np.inf, upper: float = np.inf) -> float:
    """One stepping-out/shrinkage slice-sampling update of a scalar.

    Raises ``InvalidStart`` when the log density is not finite at ``current``.
    """
    rng = np.random.default_rng() if rng is None else rng
    x = _slice_impl(_wrap(log_density), (), float(current), float(width), int(max_steps),
                    rng, float(lower), float(upper))
    if np.isnan(x):
        raise InvalidStart(f"log density is not finite at the starting value {current!r}")
    return x


def rw_metropolis(log_density, current: float, step_sd: float, rng=None) -> tuple[float, bool]:
    """Gaussian random-walk Metropolis update; returns ``(value, accepted)``."""
    if not step_sd > 0:
        raise ValueError("step_sd must be positive")
    rng = np.random.default_rng() if rng is None else rng
    f = _wrap(log_density)
    x, _, accepted = _rwm_impl(f, (), float(current), f(float(current), ()), float(step_sd), rng)
    return x, bool(accepted)
