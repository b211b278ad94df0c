"""Identification constraints and constructive recovery of jump parameters.

Given an exact jump path J together with a year t~ known to carry no new
shock (N_{t~} = 0), the persistence coefficient and the shock schedule can
be read back from J:

* AR(1): J_{t~} = a J_{t~-1}, so a is a ratio.
* MA(1): writing u_t = N_t Y_t, the recursion u_t = J_t - b u_{t-1} unrolls
  from the first shock t* to u_{t~} = sum_{k=0}^{h} (-b)^{h-k} J_{t*+k} with
  h = t~ - t*; b is the admissible root of this polynomial.

Year positions are 1-based throughout, matching the model's notation.
"""
from __future__ import annotations

import dataclasses

import numpy as np

from .errors import (
    AmbiguousRoot,
    DegenerateScale,
    InconsistentPath,
    NoAdmissibleRoot,
    NoJump,
)
from .model import JumpStructure, ModelSpec, ParameterState, jump_path

TOL = 1e-9
GRID_CELLS = 1024


def apply_constraints(raw, config: ModelSpec | None = None) -> ParameterState:
    """Map a raw parameter collection to the identified parameterisation.

    ``raw`` is a ``ParameterState`` or a mapping with the same field names.
    The age patterns are divided by their sums and the quantities they
    multiply (period increments, drift and sigma_xi for ``beta``; severities
    and their hyperparameters for ``betaJ``) are multiplied by the same sums,
    so fitted improvements are unchanged.  Pinned occurrences are zeroed and
    the first period increment is set to the drift.
    """
    if isinstance(raw, ParameterState):
        fields = {f.name: getattr(raw, f.name) for f in dataclasses.fields(raw)}
    else:
        fields = dict(raw)
    structure = JumpStructure.parse(fields.get("structure", config.structure if config else "ar1"))
    config = config or ModelSpec(structure)
    beta = np.asarray(fields["beta"], dtype=float)
    betaJ = np.asarray(fields["betaJ"], dtype=float)
    sb, sbJ = beta.sum(), betaJ.sum()
    if not sb > 0 or not sbJ > 0:
        raise DegenerateScale(f"age-pattern sums must be positive (got {sb}, {sbJ})")
    N = np.asarray(fields["N"], dtype=float).copy()
    N[config.pins(N.size)] = 0.0
    dkappa = np.asarray(fields["dkappa"], dtype=float) * sb
    d = float(fields.get("d", dkappa[0] / sb)) * sb
    dkappa = dkappa.copy()
    dkappa[0] = d
    coeff = float(fields.get("coeff", 0.0)) if structure.has_coeff else 0.0
    return ParameterState(
        beta=beta / sb,
        betaJ=betaJ / sbJ,
        d=d,
        dkappa=dkappa,
        sigma_xi=float(fields.get("sigma_xi", 1.0)) * sb,
        sigma_r=float(fields.get("sigma_r", 1.0)),
        p=float(fields.get("p", 0.05)),
        N=N,
        Y=np.asarray(fields["Y"], dtype=float) * sbJ,
        coeff=coeff,
        muY=float(fields.get("muY", 1.0)) * sbJ,
        sigmaY=float(fields.get("sigmaY", 1.0)) * sbJ,
        structure=structure,
    )


def _first_jump(J, pin):
    J = np.asarray(J, dtype=float)
    T = J.size
    pin = T if pin is None else int(pin)
    if not 1 <= pin <= T:
        raise IndexError(f"pin {pin} outside 1..{T}")
    nz = np.flatnonzero(np.abs(J[: pin - 1]) > TOL)
    if nz.size == 0:
        raise NoJump("no jump before the pinned year; the coefficient cannot be identified")
    return J, pin, int(nz[0]) + 1


def recover_ar_coefficient(J, pin: int | None = None) -> float:
    """a = J_{t~} / J_{t~-1}; 0 when the path returns to zero after its first jump."""
    J, pin, tstar = _first_jump(J, pin)
    prev, last = J[pin - 2], J[pin - 1]
    if prev == 0.0 and last != 0.0:
        raise InconsistentPath(f"J_{pin - 1} = 0 but J_{pin} = {last}")
    # with a > 0 an exact path never returns to zero after its first jump
    if np.any(J[tstar:pin] == 0.0):
        return 0.0
    a = last / prev
    if not -TOL <= a < 1:
        raise InconsistentPath(f"implied AR coefficient {a} outside [0, 1)")
    return max(a, 0.0)


def ma_polynomial(J, tstar: int, pin: int):
    """Coefficients (highest degree first) of b -> sum_{k=0}^{h} (-b)^{h-k} J_{t*+k}."""
    J = np.asarray(J, dtype=float)
    h = pin - tstar
    # term k has degree h-k and coefficient (-1)^{h-k} J_{t*+k}
    return np.array([(-1.0) ** (h - k) * J[tstar - 1 + k] for k in range(h + 1)])


def ma_innovations(J, b: float) -> np.ndarray:
    """u_t = J_t - b u_{t-1}: the shock sizes N_t Y_t implied by coefficient b."""
    J = np.asarray(J, dtype=float)
    u = np.empty_like(J)
    prev = 0.0
    for t, j in enumerate(J):
        prev = j - b * prev
        u[t] = prev
    return u


def ma_quadratic_roots(J_tstar: float, J_next: float, J_next2: float) -> tuple[float, float]:
    """Closed-form roots for a pin two years after the first shock.

    b = (-J_{t*+1} +/- sqrt(J_{t*+1}^2 - 4 J_{t*} J_{t*+2})) / (-2 J_{t*}).
    """
    disc = J_next**2 - 4.0 * J_tstar * J_next2
    if disc < 0:
        raise NoAdmissibleRoot("quadratic has complex roots")
    root = np.sqrt(disc)
    r1 = (-J_next + root) / (-2.0 * J_tstar)
    r2 = (-J_next - root) / (-2.0 * J_tstar)
    return tuple(sorted((r1, r2)))


def _polyroots_unit(coeffs) -> list[float]:
    """Roots of the polynomial in (0, 1).

    Sign changes on a 1,024-cell grid are refined by bisection.  Roots where
    the polynomial touches zero without changing sign, or two roots sharing
    one cell, are picked up from the companion-matrix eigenvalues and
    polished by Newton steps.
    """
    clist = [float(c) for c in coeffs]

    def f(b):
        acc = 0.0
        for c in clist:
            acc = acc * b + c
        return acc

    grid = np.linspace(0.0, 1.0, GRID_CELLS + 1)
    grid[0] = 1e-12
    grid[-1] = 1.0 - 1e-12
    sign = np.sign(np.polyval(coeffs, grid))
    roots = [float(b) for b in grid[1:-1][sign[1:-1] == 0]]
    for i in np.flatnonzero(sign[:-1] * sign[1:] < 0):
        lo, hi, slo = grid[i], grid[i + 1], sign[i]
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            fm = f(mid)
            if fm == 0.0:
                lo = hi = mid
                break
            if hi - lo < 1e-16:
                break
            if np.sign(fm) == slo:
                lo = mid
            else:
                hi = mid
        roots.append(0.5 * (lo + hi))
    deriv = np.polyder(coeffs)
    scale = np.abs(coeffs).max()
    for z in np.roots(coeffs) if len(coeffs) > 1 else []:
        if abs(z.imag) > 1e-6 or not 0.0 < z.real < 1.0:
            continue
        b = z.real
        for _ in range(50):
            g = np.polyval(deriv, b)
            if g == 0.0:
                break
            step = f(b) / g
            b -= step
            if abs(step) < 1e-16:
                break
        if 0.0 < b < 1.0 and abs(f(b)) <= 1e-12 * scale and all(abs(b - r) > 1e-9 for r in roots):
            roots.append(b)
    return sorted(roots)


def _admissible(J, b, tstar, pin):
    u = ma_innovations(J, b)
    return bool(np.all(u[tstar - 1:pin] >= -TOL))


def recover_ma_coefficient(J, pin: int | None = None) -> float:
    """Persistence b of an exact MA(1) path with N_{t~} = 0.

    If J_{t*+1} = 0 the shock does not echo and b = 0.  Otherwise the
    admissible roots are those in (0, 1) whose implied shock sizes from t*
    to t~ are nonnegative; a single one is returned, several raise
    ``AmbiguousRoot``.  Without positive admissible roots b = 0 is returned
    when it satisfies the pin, else ``NoAdmissibleRoot``.
    """
    J, pin, tstar = _first_jump(J, pin)
    if J[tstar] == 0.0:
        return 0.0
    # exact zeros at the end of the path only contribute roots at b = 0
    coeffs = np.trim_zeros(ma_polynomial(J, tstar, pin), "b")
    roots = [b for b in _polyroots_unit(coeffs) if _admissible(J, b, tstar, pin)]
    if len(roots) == 1:
        return float(roots[0])
    if len(roots) > 1:
        raise AmbiguousRoot(roots)
    if J[pin - 1] == 0.0 and _admissible(J, 0.0, tstar, pin):
        return 0.0
    raise NoAdmissibleRoot("no coefficient in [0, 1) reproduces the pinned no-jump year")


def recover_jump_schedule(J, structure, coeff: float) -> tuple[np.ndarray, np.ndarray]:
    """Invert the jump recursion: returns occurrences N and severities Y.

    Years without a shock get Y = 0.
    """
    structure = JumpStructure.parse(structure)
    J = np.asarray(J, dtype=float)
    if structure is JumpStructure.NONE:
        if np.any(np.abs(J) > TOL):
            raise InconsistentPath("nonzero jump path under the no-jump structure")
        return np.zeros(J.size), np.zeros(J.size)
    if structure is JumpStructure.AR1:
        shock = J - coeff * np.concatenate(([0.0], J[:-1]))
    elif structure is JumpStructure.MA1:
        shock = ma_innovations(J, coeff)
    else:
        shock = J.copy()
    if np.any(shock < -TOL):
        t = int(np.flatnonzero(shock < -TOL)[0]) + 1
        raise InconsistentPath(f"negative implied severity {shock[t - 1]} at year position {t}")
    N = (shock > TOL).astype(float)
    Y = np.where(N == 1, shock, 0.0)
    return N, Y


def recover(J, structure, pin: int | None = None) -> tuple[float, np.ndarray, np.ndarray]:
    """Coefficient and schedule from a path: (coeff, N, Y)."""
    structure = JumpStructure.parse(structure)
    if structure is JumpStructure.AR1:
        coeff = recover_ar_coefficient(J, pin)
    elif structure is JumpStructure.MA1:
        coeff = recover_ma_coefficient(J, pin)
    else:
        coeff = 0.0
    N, Y = recover_jump_schedule(J, structure, coeff)
    return coeff, N, Y


def check_round_trip(structure, N, Y, coeff, pin: int | None = None, tol: float = TOL) -> bool:
    """True when ``recover(jump_path(...))`` returns the generating values."""
    J = jump_path(structure, N, Y, coeff)
    c, N2, Y2 = recover(J, structure, pin)
    N = np.asarray(N, dtype=float)
    on = N == 1
    return (abs(c - coeff) < tol and np.array_equal(N2, N)
            and np.all(np.abs(Y2[on] - np.asarray(Y, dtype=float)[on]) < tol))
