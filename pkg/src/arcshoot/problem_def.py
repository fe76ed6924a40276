"""Continuous problem definition: vector fields, Lie brackets, constrained-arc feedback.

A :class:`ProblemDef` bundles the user's callbacks for the dynamics
``xdot = f0(x) + u f1(x)``, the scalar state constraint ``g(x) <= 0``, the
endpoint cost ``phi(x0, xT)`` and the endpoint equality map ``Phi(x0, xT)``.
All callbacks must be pure.  If ``vectorized`` is set, every callback must
also broadcast over leading batch axes (``x`` of shape ``(..., n)``); the
solver uses this to evaluate finite-difference Jacobian columns in one shot.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ConfigurationError, FirstOrderViolation

Field = Callable[[np.ndarray], np.ndarray]

BRACKET_F1_F0 = "[f1,f0]"
BRACKET_F1F0_F0 = "[[f1,f0],f0]"
BRACKET_F1F0_F1 = "[[f1,f0],f1]"
_BRACKET_IDS = (BRACKET_F1_F0, BRACKET_F1F0_F0, BRACKET_F1F0_F1)

GAMMA_GUARD_COEFF = 1e-10


@dataclass(frozen=True)
class ProblemDef:
    """Control-affine problem with one control, one state constraint.

    Conventions: states are 1-D arrays of length ``n``; Jacobians are
    ``(n, n)`` with ``J[i, j] = d f_i / d x_j``; ``dg`` is the gradient row
    as a length-``n`` array; ``dphi``/``dPhi`` return the pair of
    derivatives with respect to the initial and final state.
    Absent control bounds are encoded as ``None``.
    """

    n: int
    q: int
    T: float
    f0: Field
    f1: Field
    df0: Field
    df1: Field
    g: Callable[[np.ndarray], float]
    dg: Field
    phi: Callable[[np.ndarray, np.ndarray], float]
    dphi: Callable[[np.ndarray, np.ndarray], tuple]
    Phi: Callable[[np.ndarray, np.ndarray], np.ndarray]
    dPhi: Callable[[np.ndarray, np.ndarray], tuple]
    u_min: Optional[float] = None
    u_max: Optional[float] = None
    # Analytic bracket overrides; finite differences are the fallback.
    bracket_f1_f0: Optional[Field] = None
    bracket_f1f0_f0: Optional[Field] = None
    bracket_f1f0_f1: Optional[Field] = None
    # Analytic gradient of the constrained-arc feedback, if available.
    dgamma: Optional[Field] = None
    # Fully determined initial state, when the endpoint map pins it.
    x0_fixed: Optional[np.ndarray] = None
    vectorized: bool = False
    name: str = ""

    def __post_init__(self):
        if self.n <= 0:
            raise ConfigurationError(f"state dimension must be positive, got {self.n}")
        if self.q < 0:
            raise ConfigurationError(f"endpoint constraint count must be >= 0, got {self.q}")
        if self.T <= 0:
            raise ConfigurationError(f"horizon must be positive, got {self.T}")
        if self.u_min is not None and self.u_max is not None and not self.u_min < self.u_max:
            raise ConfigurationError(
                f"control bounds must satisfy u_min < u_max, got [{self.u_min}, {self.u_max}]"
            )


def _check_dim(v: np.ndarray, n: int, what: str) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape[-1] != n:
        raise ConfigurationError(f"{what} returned shape {v.shape}, expected last axis {n}")
    return v


def lie_bracket(prob: ProblemDef, which: str, x: np.ndarray) -> np.ndarray:
    """Evaluate one of the brackets [f1,f0], [[f1,f0],f0], [[f1,f0],f1] at x.

    Convention [X, Y] = X' Y - Y' X with X' the Jacobian of X.  The
    first-level bracket uses the analytic Jacobians; second-level brackets
    differentiate the first-level bracket by central differences unless the
    problem supplies analytic overrides.
    """
    if which not in _BRACKET_IDS:
        raise ConfigurationError(f"unknown bracket id {which!r}, use one of {_BRACKET_IDS}")
    x = np.asarray(x, dtype=float)
    override = {
        BRACKET_F1_F0: prob.bracket_f1_f0,
        BRACKET_F1F0_F0: prob.bracket_f1f0_f0,
        BRACKET_F1F0_F1: prob.bracket_f1f0_f1,
    }[which]
    if override is not None:
        return _check_dim(override(x), prob.n, f"bracket override {which}")
    if which == BRACKET_F1_F0:
        return _bracket_f1_f0(prob, x)
    inner = lambda y: _first_level(prob, y)
    outer = prob.f0 if which == BRACKET_F1F0_F0 else prob.f1
    douter = prob.df0 if which == BRACKET_F1F0_F0 else prob.df1
    # [B, Z] = B' Z - Z' B with B' by central FD of the first-level bracket.
    h = 1e-6 * max(1.0, float(np.max(np.abs(x))))
    jac_cols = []
    for j in range(prob.n):
        e = np.zeros_like(x)
        e[..., j] = h
        jac_cols.append((inner(x + e) - inner(x - e)) / (2.0 * h))
    jac_b = np.stack(jac_cols, axis=-1)
    zx = _check_dim(outer(x), prob.n, "vector field")
    dz = np.asarray(douter(x), dtype=float)
    b = inner(x)
    return np.einsum("...ij,...j->...i", jac_b, zx) - np.einsum("...ij,...j->...i", dz, b)


def _first_level(prob: ProblemDef, x: np.ndarray) -> np.ndarray:
    if prob.bracket_f1_f0 is not None:
        return _check_dim(prob.bracket_f1_f0(x), prob.n, "bracket override [f1,f0]")
    return _bracket_f1_f0(prob, x)


def _bracket_f1_f0(prob: ProblemDef, x: np.ndarray) -> np.ndarray:
    f0x = _check_dim(prob.f0(x), prob.n, "f0")
    f1x = _check_dim(prob.f1(x), prob.n, "f1")
    d0 = np.asarray(prob.df0(x), dtype=float)
    d1 = np.asarray(prob.df1(x), dtype=float)
    return np.einsum("...ij,...j->...i", d1, f0x) - np.einsum("...ij,...j->...i", d0, f1x)


def gamma_denominator_guard(dgx: np.ndarray, f1x: np.ndarray) -> np.ndarray:
    """Scale-invariant lower bound below which dg.f1 counts as a violation."""
    return GAMMA_GUARD_COEFF * (
        1.0
        + np.linalg.norm(np.atleast_1d(dgx), axis=-1) * np.linalg.norm(np.atleast_1d(f1x), axis=-1)
    )


def gamma_terms(prob: ProblemDef, x: np.ndarray) -> tuple:
    """Return (dg.f0, dg.f1) at x without the guard check."""
    x = np.asarray(x, dtype=float)
    dgx = _check_dim(prob.dg(x), prob.n, "dg")
    num = np.einsum("...i,...i->...", dgx, prob.f0(x))
    den = np.einsum("...i,...i->...", dgx, prob.f1(x))
    return num, den


def gamma_control(prob: ProblemDef, x: np.ndarray):
    """Feedback control keeping d/dt g = 0 on a constrained arc.

    Returns -(dg.f0)/(dg.f1); raises :class:`FirstOrderViolation` when the
    denominator falls under the scale-aware guard.
    """
    x = np.asarray(x, dtype=float)
    dgx = _check_dim(prob.dg(x), prob.n, "dg")
    f0x = prob.f0(x)
    f1x = prob.f1(x)
    num = np.einsum("...i,...i->...", dgx, f0x)
    den = np.einsum("...i,...i->...", dgx, f1x)
    guard = gamma_denominator_guard(dgx, f1x)
    bad = np.abs(den) < guard
    if np.any(bad):
        idx = np.argmax(np.atleast_1d(bad))
        xb = np.atleast_2d(x)[idx] if x.ndim > 1 else x
        db = float(np.atleast_1d(den)[idx])
        raise FirstOrderViolation(xb, db)
    return -num / den


def gamma_gradient(prob: ProblemDef, x: np.ndarray) -> np.ndarray:
    """Gradient of the constrained-arc feedback, central differences.

    Uses the problem's analytic override when present.  Propagates
    :class:`FirstOrderViolation` from stencil points.
    """
    x = np.asarray(x, dtype=float)
    if prob.dgamma is not None:
        return _check_dim(prob.dgamma(x), prob.n, "dgamma override")
    h = 1e-6 * max(1.0, float(np.max(np.abs(x))))
    cols = []
    for j in range(prob.n):
        e = np.zeros_like(x)
        e[..., j] = h
        cols.append((gamma_control(prob, x + e) - gamma_control(prob, x - e)) / (2.0 * h))
    return np.stack(cols, axis=-1)


@dataclass
class FirstOrderReport:
    """Outcome of sampling |dg.f1| along candidate constrained arcs."""

    min_abs: float
    guard: float
    passed: bool
    worst_index: Optional[int] = None
    values: np.ndarray = field(default_factory=lambda: np.empty(0))


def check_first_order(prob: ProblemDef, xs) -> FirstOrderReport:
    """Report min |dg(x) f1(x)| over the samples and pass/fail vs the guard.

    An empty sample list passes vacuously with min = +inf.
    """
    xs = [np.asarray(x, dtype=float) for x in xs]
    if not xs:
        return FirstOrderReport(min_abs=np.inf, guard=0.0, passed=True)
    vals = []
    guards = []
    for x in xs:
        dgx = _check_dim(prob.dg(x), prob.n, "dg")
        f1x = prob.f1(x)
        vals.append(abs(float(np.dot(dgx, f1x))))
        guards.append(float(gamma_denominator_guard(dgx, f1x)))
    vals = np.asarray(vals)
    worst = int(np.argmin(vals))
    guard = guards[worst]
    return FirstOrderReport(
        min_abs=float(vals[worst]),
        guard=guard,
        passed=bool(vals[worst] >= guard),
        worst_index=worst,
        values=vals,
    )
