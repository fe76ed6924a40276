"""Per-arc state/costate dynamics on normalized time [0, 1] and RK4 propagation.

Each arc of the transformed problem evolves on s in [0, 1] with the physical
duration ``dt_k = tau_k - tau_{k-1}`` folded into the right-hand side.  The
control is eliminated algebraically per arc kind: fixed to a bound on bang
arcs, the constraint-preserving feedback on constrained arcs and the
second-derivative stationarity feedback on singular arcs.

All evaluation helpers broadcast over leading batch axes so that a
vectorized problem can propagate many shooting iterates at once.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .arc_structure import ArcKind, ArcStructure
from .errors import (
    ConfigurationError,
    FirstOrderViolation,
    NonFiniteState,
    SingularDenominatorError,
)
from .problem_def import (
    BRACKET_F1F0_F0,
    BRACKET_F1F0_F1,
    BRACKET_F1_F0,
    ProblemDef,
    gamma_control,
    gamma_denominator_guard,
    gamma_gradient,
    lie_bracket,
)

SINGULAR_GUARD_COEFF = 1e-10


def singular_denominator_guard(p: np.ndarray, b2: np.ndarray) -> np.ndarray:
    return SINGULAR_GUARD_COEFF * (
        1.0 + np.linalg.norm(np.atleast_1d(p), axis=-1) * np.linalg.norm(np.atleast_1d(b2), axis=-1)
    )


def arc_control(prob: ProblemDef, kind: ArcKind, x: np.ndarray, costate: np.ndarray):
    """Control value prescribed by the arc kind at (x, p).

    Bang arcs return the bound, constrained arcs the feedback Gamma(x),
    singular arcs -(p [[f1,f0],f0]) / (p [[f1,f0],f1]).  The singular
    denominator is guarded; the Legendre-Clebsch sign is checked separately
    by the solution validator.
    """
    if kind is ArcKind.BMinus:
        if prob.u_min is None:
            raise ConfigurationError("B- arc with absent lower bound")
        return prob.u_min
    if kind is ArcKind.BPlus:
        if prob.u_max is None:
            raise ConfigurationError("B+ arc with absent upper bound")
        return prob.u_max
    if kind is ArcKind.Constrained:
        return gamma_control(prob, x)
    b0 = lie_bracket(prob, BRACKET_F1F0_F0, x)
    b1 = lie_bracket(prob, BRACKET_F1F0_F1, x)
    num = np.einsum("...i,...i->...", costate, b0)
    den = np.einsum("...i,...i->...", costate, b1)
    guard = singular_denominator_guard(costate, b1)
    bad = np.abs(den) < guard
    if np.any(bad):
        idx = int(np.argmax(np.atleast_1d(bad)))
        xb = np.atleast_2d(x)[idx] if np.ndim(x) > 1 else x
        raise SingularDenominatorError(xb, float(np.atleast_1d(den)[idx]))
    return -num / den


def legendre_clebsch_value(prob: ProblemDef, x: np.ndarray, costate: np.ndarray):
    """p [[f1,f0],f1](x); the strengthened condition requires this < 0 on S arcs."""
    b1 = lie_bracket(prob, BRACKET_F1F0_F1, x)
    return np.einsum("...i,...i->...", costate, b1)


def arc_rhs(prob: ProblemDef, kind: ArcKind, dt_k: float, x: np.ndarray, costate: np.ndarray):
    """Coupled rates (dx, dp) of the rescaled arc dynamics.

    dx = dt_k (f0 + w f1); dp = -dt_k D_x H with H = p (f0 + w f1).  On
    constrained arcs D_x H carries the feedback-gradient term
    (p f1) dGamma; on singular arcs the control is treated as independent
    (the chain-rule term vanishes at solutions where H_u = 0).
    """
    w = np.asarray(arc_control(prob, kind, x, costate))
    f0x = prob.f0(x)
    f1x = prob.f1(x)
    w_vec = w[..., None] if w.ndim > 0 else w
    w_mat = w[..., None, None] if w.ndim > 0 else w
    dx = dt_k * (f0x + w_vec * f1x)
    jac = prob.df0(x) + w_mat * prob.df1(x)
    hx = np.einsum("...i,...ij->...j", costate, jac)
    if kind is ArcKind.Constrained:
        pf1 = np.einsum("...i,...i->...", costate, f1x)
        pf1 = pf1[..., None] if np.ndim(pf1) > 0 else pf1
        hx = hx + pf1 * gamma_gradient(prob, x)
    return dx, -dt_k * hx


def arc_hamiltonian(prob: ProblemDef, kind: ArcKind, x: np.ndarray, costate: np.ndarray):
    """H = p (f0 + w f1) with the arc's control rule."""
    w = np.asarray(arc_control(prob, kind, x, costate))
    f1x = prob.f1(x)
    wf1 = (w[..., None] if w.ndim > 0 else w) * f1x
    return np.einsum("...i,...i->...", costate, prob.f0(x) + wf1)


def constraint_multiplier_density(prob: ProblemDef, x: np.ndarray, costate: np.ndarray):
    """Density nu = (p [f1,f0]) / (dg f1) of the constraint measure on a C arc.

    Complementarity requires nu >= 0; used as a post-solve sign diagnostic.
    """
    b = lie_bracket(prob, BRACKET_F1_F0, x)
    num = np.einsum("...i,...i->...", costate, b)
    dgx = prob.dg(x)
    f1x = prob.f1(x)
    den = np.einsum("...i,...i->...", dgx, f1x)
    guard = gamma_denominator_guard(dgx, f1x)
    if np.any(np.abs(den) < guard):
        raise FirstOrderViolation(x, float(np.min(np.abs(den))))
    return num / den


@dataclass
class ArcGrid:
    """One propagated arc: nodes s_i with states, costates and controls."""

    kind: ArcKind
    s: np.ndarray        # (M+1,)
    x: np.ndarray        # (M+1, n)
    p: np.ndarray        # (M+1, n)
    w: np.ndarray        # (M+1,)


def propagate_arc(
    prob: ProblemDef,
    kind: ArcKind,
    dt_k: float,
    x0: np.ndarray,
    p0: np.ndarray,
    M: int,
) -> ArcGrid:
    """Classical RK4 with step 1/M on the coupled (x, p) system; full grid."""
    if M < 1:
        raise ConfigurationError(f"step count must be >= 1, got {M}")
    x = np.asarray(x0, dtype=float).copy()
    p = np.asarray(p0, dtype=float).copy()
    h = 1.0 / M
    xs = np.empty((M + 1, prob.n))
    ps = np.empty((M + 1, prob.n))
    ws = np.empty(M + 1)
    xs[0], ps[0] = x, p
    ws[0] = arc_control(prob, kind, x, p)
    for i in range(M):
        x, p = _rk4_step(prob, kind, dt_k, x, p, h)
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(p))):
            raise NonFiniteState(f"non-finite state at arc node {i + 1} (kind {kind.value})")
        xs[i + 1], ps[i + 1] = x, p
        ws[i + 1] = arc_control(prob, kind, x, p)
    return ArcGrid(kind=kind, s=np.linspace(0.0, 1.0, M + 1), x=xs, p=ps, w=ws)


def propagate_endpoint(prob, kind, dt_k, x0, p0, M):
    """Terminal (x, p) of the arc only; broadcasts over batched initial data."""
    x = np.asarray(x0, dtype=float).copy()
    p = np.asarray(p0, dtype=float).copy()
    h = 1.0 / M
    for _ in range(M):
        x, p = _rk4_step(prob, kind, dt_k, x, p, h)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(p))):
        raise NonFiniteState(f"non-finite state on arc of kind {kind.value}")
    return x, p


def _rk4_step(prob, kind, dt_k, x, p, h):
    k1x, k1p = arc_rhs(prob, kind, dt_k, x, p)
    k2x, k2p = arc_rhs(prob, kind, dt_k, x + 0.5 * h * k1x, p + 0.5 * h * k1p)
    k3x, k3p = arc_rhs(prob, kind, dt_k, x + 0.5 * h * k2x, p + 0.5 * h * k2p)
    k4x, k4p = arc_rhs(prob, kind, dt_k, x + h * k3x, p + h * k3p)
    xn = x + (h / 6.0) * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
    pn = p + (h / 6.0) * (k1p + 2.0 * k2p + 2.0 * k3p + k4p)
    return xn, pn


@dataclass
class TPTrajectory:
    """Per-arc grids of the transformed problem plus its switching times."""

    arcs: list
    tau: np.ndarray      # interior switching times, length N-1
    T: float
    steps_per_arc: int

    @property
    def N(self) -> int:
        return len(self.arcs)

    def boundaries(self) -> np.ndarray:
        return np.concatenate(([0.0], np.asarray(self.tau, dtype=float), [self.T]))

    def arc_times(self, k: int) -> np.ndarray:
        """Original-time nodes of arc k (0-based): t = tau_k + dt_k s."""
        b = self.boundaries()
        return b[k] + (b[k + 1] - b[k]) * self.arcs[k].s

    def original_time_samples(self) -> tuple:
        """Concatenated (t, u, x, p) over all arcs in original time."""
        ts, us, xs, ps = [], [], [], []
        for k, arc in enumerate(self.arcs):
            ts.append(self.arc_times(k))
            us.append(arc.w)
            xs.append(arc.x)
            ps.append(arc.p)
        return (np.concatenate(ts), np.concatenate(us), np.vstack(xs), np.vstack(ps))

    def cost(self, prob: ProblemDef) -> float:
        return float(prob.phi(self.arcs[0].x[0], self.arcs[-1].x[-1]))


def propagate_structure(
    prob: ProblemDef, struct: ArcStructure, x0_arcs, p0_arcs, M: int
) -> TPTrajectory:
    """Propagate every arc of a structure from its initial (x, p) pair."""
    bounds = struct.boundaries(prob.T)
    arcs = []
    for k, kind in enumerate(struct.kinds):
        dt_k = bounds[k + 1] - bounds[k]
        arcs.append(propagate_arc(prob, kind, dt_k, x0_arcs[k], p0_arcs[k], M))
    return TPTrajectory(arcs=arcs, tau=np.asarray(struct.tau, dtype=float), T=prob.T,
                        steps_per_arc=M)


def propagate_solution(prob: ProblemDef, struct: ArcStructure, omega, M: int) -> TPTrajectory:
    """Propagate a shooting vector: arc kinds from the structure, times from omega."""
    return propagate_structure(prob, struct.with_tau(omega.tau), omega.x0, omega.p0, M)


def write_tp_csv(path, traj: TPTrajectory) -> None:
    """Export `arc,k,s,t,u,x1..xn,p1..pn` with t mapped back to original time."""
    n = traj.arcs[0].x.shape[1]
    header = ["arc", "k", "s", "t", "u"]
    header += [f"x{i + 1}" for i in range(n)] + [f"p{i + 1}" for i in range(n)]
    lines = [",".join(header)]
    for k, arc in enumerate(traj.arcs):
        t = traj.arc_times(k)
        for i in range(arc.s.size):
            row = [arc.kind.value, str(k + 1), f"{arc.s[i]:.9g}", f"{t[i]:.9g}",
                   f"{arc.w[i]:.9g}"]
            row += [f"{v:.9g}" for v in arc.x[i]]
            row += [f"{v:.9g}" for v in arc.p[i]]
            lines.append(",".join(row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
