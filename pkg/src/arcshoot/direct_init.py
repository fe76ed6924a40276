"""Rough direct solve used to detect the arc structure and seed the shooting.

Euler-discretized control grid, quadratic penalty on the state constraint,
projected gradient with a Barzilai-Borwein step and monotone backtracking.
The Euler recursion is only the optimization model; the returned trajectory
and cost re-integrate the found control accurately (RK4 substeps), which
removes the first-order discretization bias from the reported numbers.
Accuracy only needs to support classification and warm starts.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigurationError
from .problem_def import ProblemDef


@dataclass
class DirectSolveConfig:
    grid_size: int = 100
    penalty_weight: float = 1e3
    step_init: float = 1.0
    step_shrink: float = 0.5
    max_iters: int = 800
    max_backtracks: int = 40
    x0: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.grid_size < 10:
            raise ConfigurationError(f"grid_size must be >= 10, got {self.grid_size}")
        if self.penalty_weight <= 0:
            raise ConfigurationError(f"penalty_weight must be > 0, got {self.penalty_weight}")


@dataclass
class DirectSolveResult:
    t: np.ndarray          # (K+1,) node times
    u: np.ndarray          # (K+1,) node-aligned control (last cell repeated)
    x: np.ndarray          # (K+1, n) re-simulated states of the found control
    x_model: np.ndarray    # (K+1, n) Euler-model states used by the optimizer
    lam: np.ndarray        # (K+1, n) discrete adjoint, a costate estimate
    cost: float            # endpoint cost of the re-simulated trajectory
    objective: float       # Euler-model cost + penalty at the final iterate
    stalled: bool
    n_iters: int
    objective_history: list


def _initial_control(prob: ProblemDef) -> float:
    if prob.u_min is not None and prob.u_max is not None:
        return 0.5 * (prob.u_min + prob.u_max)
    return 0.0


def _clip(prob: ProblemDef, u: np.ndarray) -> np.ndarray:
    lo = -np.inf if prob.u_min is None else prob.u_min
    hi = np.inf if prob.u_max is None else prob.u_max
    return np.clip(u, lo, hi)


def _pen_grad(prob, x, rho, dt):
    gv = float(prob.g(x))
    if gv <= 0.0:
        return np.zeros(prob.n)
    return 2.0 * rho * gv * np.asarray(prob.dg(x), dtype=float) * dt


def direct_solve(prob: ProblemDef, cfg: Optional[DirectSolveConfig] = None) -> DirectSolveResult:
    """Minimize the Euler-discretized penalized cost over piecewise controls.

    A pinned initial state (``cfg.x0`` or ``prob.x0_fixed``) is handled
    exactly; otherwise the initial state joins the decision variables and
    the endpoint map is enforced through the same quadratic penalty as the
    state constraint.  The reported objective is non-increasing across
    accepted iterations; a stalled flag is set when no backtracked step
    decreases it.
    """
    cfg = cfg or DirectSolveConfig()
    x0_pinned = cfg.x0 if cfg.x0 is not None else prob.x0_fixed
    free_x0 = x0_pinned is None
    K = cfg.grid_size
    dt = prob.T / K
    rho = cfg.penalty_weight

    def forward(x0, uu):
        xs = np.empty((K + 1, prob.n))
        xs[0] = x0
        for i in range(K):
            xs[i + 1] = xs[i] + dt * (prob.f0(xs[i]) + uu[i] * prob.f1(xs[i]))
        return xs

    def objective(xs):
        viol = np.array([max(0.0, float(prob.g(xs[i]))) for i in range(1, K + 1)])
        val = float(prob.phi(xs[0], xs[-1])) + rho * float(viol @ viol) * dt
        if free_x0 and prob.q:
            bc = np.asarray(prob.Phi(xs[0], xs[-1]), dtype=float)
            val += rho * float(bc @ bc)
        return val

    def gradient(x0, uu, xs):
        lam = np.empty((K + 1, prob.n))
        d0, dT = prob.dphi(xs[0], xs[-1])
        lam[K] = np.asarray(dT, dtype=float) + _pen_grad(prob, xs[K], rho, dt)
        extra0 = np.asarray(d0, dtype=float)
        if free_x0 and prob.q:
            bc = np.asarray(prob.Phi(xs[0], xs[-1]), dtype=float)
            D0, DT = prob.dPhi(xs[0], xs[-1])
            lam[K] = lam[K] + 2.0 * rho * bc @ np.asarray(DT, dtype=float)
            extra0 = extra0 + 2.0 * rho * bc @ np.asarray(D0, dtype=float)
        for i in range(K - 1, -1, -1):
            jac = prob.df0(xs[i]) + uu[i] * prob.df1(xs[i])
            lam[i] = lam[i + 1] @ (np.eye(prob.n) + dt * jac)
            if i >= 1:
                lam[i] += _pen_grad(prob, xs[i], rho, dt)
        gu = np.array([dt * float(lam[i + 1] @ prob.f1(xs[i])) for i in range(K)])
        gx0 = lam[0] + extra0 if free_x0 else np.zeros(prob.n)
        return gu, gx0, lam

    x0 = np.zeros(prob.n) if free_x0 else np.asarray(x0_pinned, dtype=float)
    u = _clip(prob, np.full(K, _initial_control(prob)))
    xs = forward(x0, u)
    J = objective(xs)
    history = [J]
    alpha = cfg.step_init
    stalled = False
    n_iters = 0
    z_old = None
    g_old = None
    lam = np.zeros((K + 1, prob.n))
    for _ in range(cfg.max_iters):
        gu, gx0, lam = gradient(x0, u, xs)
        grad = np.concatenate([gu, gx0]) if free_x0 else gu
        z = np.concatenate([u, x0]) if free_x0 else u
        if g_old is not None:
            dz = z - z_old
            dg = grad - g_old
            denom = float(dz @ dg)
            alpha = float(dz @ dz) / denom if denom > 1e-14 else cfg.step_init
            alpha = float(np.clip(alpha, 1e-4, 1e3))
        accepted = False
        for _ in range(cfg.max_backtracks):
            z_t = z - alpha * grad
            u_t = _clip(prob, z_t[:K])
            x0_t = z_t[K:] if free_x0 else x0
            xs_t = forward(x0_t, u_t)
            J_t = objective(xs_t)
            if J_t < J:
                accepted = True
                break
            alpha *= cfg.step_shrink
        if not accepted:
            stalled = True
            break
        z_old, g_old = z, grad
        u, x0, xs, J = u_t, x0_t, xs_t, J_t
        history.append(J)
        n_iters += 1
        z_new = np.concatenate([u, x0]) if free_x0 else u
        if np.max(np.abs(z_new - z_old)) == 0.0:
            break

    x_acc = _resimulate(prob, x0, u, dt)
    u_nodes = np.concatenate([u, u[-1:]])
    return DirectSolveResult(
        t=np.linspace(0.0, prob.T, K + 1),
        u=u_nodes,
        x=x_acc,
        x_model=xs,
        lam=lam,
        cost=float(prob.phi(x_acc[0], x_acc[-1])),
        objective=J,
        stalled=stalled,
        n_iters=n_iters,
        objective_history=history,
    )


def _resimulate(prob: ProblemDef, x0: np.ndarray, u: np.ndarray, dt: float,
                substeps: int = 10) -> np.ndarray:
    """RK4 re-integration of a piecewise-constant control, cell by cell."""
    K = u.size
    xs = np.empty((K + 1, prob.n))
    xs[0] = x0
    h = dt / substeps
    for i in range(K):
        x = xs[i]
        rhs = lambda y: prob.f0(y) + u[i] * prob.f1(y)
        for _ in range(substeps):
            k1 = rhs(x)
            k2 = rhs(x + 0.5 * h * k1)
            k3 = rhs(x + 0.5 * h * k2)
            k4 = rhs(x + h * k3)
            x = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        xs[i + 1] = x
    return xs
