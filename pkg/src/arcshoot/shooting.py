"""Shooting unknowns, residual assembly, FD Jacobian and the Gauss-Newton driver.

The unknown vector stacks, in a fixed documented order, the arc initial
states, the interior switching times, the arc initial costates, the endpoint
multiplier and one entry multiplier per constrained arc:

    omega = (x0^1, ..., x0^N, tau_1, ..., tau_{N-1},
             p0^1, ..., p0^N, Psi, gamma)

The residual stacks endpoint constraints, constrained-arc entry values,
state continuity, initial transversality, costate jumps, final
transversality, Hamiltonian continuity at junctions and the two
singular-entry conditions.  It has exactly 2 |I(S)| more rows than there are
unknowns, so the system is solved in the least-squares sense by
Gauss-Newton with a rank-revealing (SVD) step.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .arc_structure import ArcKind, ArcStructure, index_sets
from .errors import (
    ArcshootError,
    ConfigurationError,
    MaxIterExceeded,
    NonFiniteResidual,
    RankDeficientJacobian,
)
from .problem_def import BRACKET_F1_F0, ProblemDef, check_first_order, lie_bracket
from .tp_dynamics import (
    arc_hamiltonian,
    constraint_multiplier_density,
    legendre_clebsch_value,
    propagate_endpoint,
    propagate_solution,
)

SVD_RCOND = 1e-10
MAX_HALVINGS = 20
STEP_FLOOR = 1e-12


# ---------------------------------------------------------------------------
# Packing
# ---------------------------------------------------------------------------


def unknown_dim(struct: ArcStructure, n: int, q: int) -> int:
    i_s, i_c, _, _ = index_sets(struct)
    return 2 * struct.N * n + (struct.N - 1) + q + len(i_c)


def residual_dim(struct: ArcStructure, n: int, q: int) -> int:
    i_s, i_c, _, _ = index_sets(struct)
    return 2 * struct.N * n + (struct.N - 1) + q + len(i_c) + 2 * len(i_s)


@dataclass
class ShootingVector:
    """Packed shooting unknowns; see the module docstring for the order."""

    x0: np.ndarray     # (N, n)
    tau: np.ndarray    # (N-1,)
    p0: np.ndarray     # (N, n)
    psi: np.ndarray    # (q,)
    gamma: np.ndarray  # one entry per constrained arc, in arc order

    def __post_init__(self):
        self.x0 = np.atleast_2d(np.asarray(self.x0, dtype=float))
        self.tau = np.asarray(self.tau, dtype=float).reshape(-1)
        self.p0 = np.atleast_2d(np.asarray(self.p0, dtype=float))
        self.psi = np.asarray(self.psi, dtype=float).reshape(-1)
        self.gamma = np.asarray(self.gamma, dtype=float).reshape(-1)
        if self.x0.shape != self.p0.shape:
            raise ConfigurationError(
                f"x0 and p0 must agree in shape, got {self.x0.shape} vs {self.p0.shape}"
            )
        if self.tau.size != self.x0.shape[0] - 1:
            raise ConfigurationError(
                f"{self.x0.shape[0]} arcs require {self.x0.shape[0] - 1} switching times"
            )

    @property
    def N(self) -> int:
        return self.x0.shape[0]

    @property
    def n(self) -> int:
        return self.x0.shape[1]

    def pack(self) -> np.ndarray:
        return np.concatenate(
            [self.x0.ravel(), self.tau, self.p0.ravel(), self.psi, self.gamma]
        )

    @classmethod
    def unpack(cls, flat: np.ndarray, N: int, n: int, q: int, n_c: int) -> "ShootingVector":
        flat = np.asarray(flat, dtype=float).reshape(-1)
        expect = 2 * N * n + (N - 1) + q + n_c
        if flat.size != expect:
            raise ConfigurationError(f"packed length {flat.size}, expected {expect}")
        i = 0
        x0 = flat[i : i + N * n].reshape(N, n); i += N * n
        tau = flat[i : i + N - 1]; i += N - 1
        p0 = flat[i : i + N * n].reshape(N, n); i += N * n
        psi = flat[i : i + q]; i += q
        gamma = flat[i:]
        return cls(x0=x0, tau=tau, p0=p0, psi=psi, gamma=gamma)


def _unpack_batch(flats: np.ndarray, N: int, n: int, q: int):
    """Split a (B, m) stack of packed vectors into batched fields."""
    B = flats.shape[0]
    i = 0
    x0 = flats[:, i : i + N * n].reshape(B, N, n); i += N * n
    tau = flats[:, i : i + N - 1]; i += N - 1
    p0 = flats[:, i : i + N * n].reshape(B, N, n); i += N * n
    psi = flats[:, i : i + q]; i += q
    gamma = flats[:, i:]
    return x0, tau, p0, psi, gamma


# ---------------------------------------------------------------------------
# Residual
# ---------------------------------------------------------------------------


@dataclass
class ShootingResidual:
    """Residual blocks in stacking order plus the flat vector."""

    endpoint: np.ndarray
    constraint_entry: np.ndarray
    state_continuity: np.ndarray
    transversality_0: np.ndarray
    costate_jumps: np.ndarray
    transversality_T: np.ndarray
    hamiltonian_continuity: np.ndarray
    singular_stationarity: np.ndarray
    singular_rate: np.ndarray

    @property
    def stacked(self) -> np.ndarray:
        return np.concatenate(
            [
                self.endpoint,
                self.constraint_entry,
                self.state_continuity,
                self.transversality_0,
                self.costate_jumps,
                self.transversality_T,
                self.hamiltonian_continuity,
                self.singular_stationarity,
                self.singular_rate,
            ]
        )


def steps_per_arc(struct: ArcStructure, steps: int) -> int:
    if steps < struct.N:
        raise ConfigurationError(f"need at least one step per arc, got {steps} for N={struct.N}")
    return max(1, round(steps / struct.N))


def _gamma_of_arc(struct: ArcStructure, gamma: np.ndarray):
    """Map arc index (1-based) to its entry multiplier, batched-friendly."""
    _, i_c, _, _ = index_sets(struct)
    pos = {k: j for j, k in enumerate(i_c)}
    return lambda k: gamma[..., pos[k]] if k in pos else None


def _endpoints(prob, struct, x0, tau, p0, M):
    """Propagate every arc; returns terminal states/costates, (..., N, n)."""
    bounds_lo = np.concatenate([np.zeros(tau.shape[:-1] + (1,)), tau], axis=-1)
    bounds_hi = np.concatenate([tau, np.full(tau.shape[:-1] + (1,), prob.T)], axis=-1)
    x1 = np.empty_like(x0)
    p1 = np.empty_like(p0)
    for k, kind in enumerate(struct.kinds):
        dt_k = bounds_hi[..., k] - bounds_lo[..., k]
        dt_k = dt_k[..., None] if np.ndim(dt_k) > 0 else dt_k
        xe, pe = propagate_endpoint(prob, kind, dt_k, x0[..., k, :], p0[..., k, :], M)
        x1[..., k, :] = xe
        p1[..., k, :] = pe
    return x1, p1


def _assemble(prob, struct, x0, tau, p0, psi, gamma, x1, p1):
    """Stack the residual blocks; works for single and batched leading axes."""
    N, n = struct.N, prob.n
    i_s, i_c, _, _ = index_sets(struct)
    gam = _gamma_of_arc(struct, gamma)
    x01 = x0[..., 0, :]
    x1N = x1[..., N - 1, :]
    blocks = []

    blocks.append(np.asarray(prob.Phi(x01, x1N), dtype=float))
    for k in i_c:
        blocks.append(np.asarray(prob.g(x0[..., k - 1, :]), dtype=float)[..., None])
    if N > 1:
        xc = x1[..., : N - 1, :] - x0[..., 1:, :]
        blocks.append(xc.reshape(xc.shape[:-2] + (n * (N - 1),)))

    d0, dT = prob.dphi(x01, x1N)
    D0, DT = prob.dPhi(x01, x1N)
    t0 = p0[..., 0, :] + d0 + np.einsum("...q,...qi->...i", psi, D0)
    g1 = gam(1)
    if g1 is not None:
        t0 = t0 + (g1[..., None] if np.ndim(g1) > 0 else g1) * prob.dg(x01)
    blocks.append(t0)

    if N > 1:
        jumps = p1[..., : N - 1, :] - p0[..., 1:, :]
        for k in range(2, N + 1):
            gk = gam(k)
            if gk is not None:
                dgx = prob.dg(x0[..., k - 1, :])
                jumps[..., k - 2, :] -= (gk[..., None] if np.ndim(gk) > 0 else gk) * dgx
        blocks.append(jumps.reshape(jumps.shape[:-2] + (n * (N - 1),)))

    blocks.append(p1[..., N - 1, :] - dT - np.einsum("...q,...qi->...i", psi, DT))

    if N > 1:
        h1 = np.stack(
            [
                np.asarray(arc_hamiltonian(prob, struct.kinds[k], x1[..., k, :], p1[..., k, :]))
                for k in range(N - 1)
            ],
            axis=-1,
        )
        h0 = np.stack(
            [
                np.asarray(arc_hamiltonian(prob, struct.kinds[k], x0[..., k, :], p0[..., k, :]))
                for k in range(1, N)
            ],
            axis=-1,
        )
        blocks.append(h1 - h0)

    for k in i_s:
        xk = x0[..., k - 1, :]
        pk = p0[..., k - 1, :]
        blocks.append(np.einsum("...i,...i->...", pk, prob.f1(xk))[..., None])
    for k in i_s:
        xk = x0[..., k - 1, :]
        pk = p0[..., k - 1, :]
        blocks.append(
            np.einsum("...i,...i->...", pk, lie_bracket(prob, BRACKET_F1_F0, xk))[..., None]
        )
    return np.concatenate(blocks, axis=-1)


def _residual_flat(prob, struct, flat, M):
    sv = ShootingVector.unpack(flat, struct.N, prob.n, prob.q, len(index_sets(struct)[1]))
    x1, p1 = _endpoints(prob, struct, sv.x0, sv.tau, sv.p0, M)
    r = _assemble(prob, struct, sv.x0, sv.tau, sv.p0, sv.psi, sv.gamma, x1, p1)
    if not np.all(np.isfinite(r)):
        raise NonFiniteResidual("shooting residual contains non-finite entries")
    return r


def _residual_flat_batch(prob, struct, flats, M):
    x0, tau, p0, psi, gamma = _unpack_batch(flats, struct.N, prob.n, prob.q)
    x1, p1 = _endpoints(prob, struct, x0, tau, p0, M)
    r = _assemble(prob, struct, x0, tau, p0, psi, gamma, x1, p1)
    if not np.all(np.isfinite(r)):
        raise NonFiniteResidual("shooting residual contains non-finite entries")
    return r


def shooting_function(
    prob: ProblemDef, struct: ArcStructure, omega: ShootingVector, steps: int = 1000
) -> ShootingResidual:
    """Evaluate the residual blocks at omega with the given total step count."""
    struct.validate(prob)
    M = steps_per_arc(struct, steps)
    flat = omega.pack()
    if flat.size != unknown_dim(struct, prob.n, prob.q):
        raise ConfigurationError(
            f"omega has {flat.size} entries, structure expects "
            f"{unknown_dim(struct, prob.n, prob.q)}"
        )
    r = _residual_flat(prob, struct, flat, M)
    return _split_residual(prob, struct, r)


def _split_residual(prob, struct, r) -> ShootingResidual:
    N, n, q = struct.N, prob.n, prob.q
    i_s, i_c, _, _ = index_sets(struct)
    sizes = [q, len(i_c), n * (N - 1), n, n * (N - 1), n, N - 1, len(i_s), len(i_s)]
    parts = np.split(r, np.cumsum(sizes)[:-1])
    return ShootingResidual(*parts)


# ---------------------------------------------------------------------------
# Jacobian and Gauss-Newton
# ---------------------------------------------------------------------------


def fd_jacobian(
    prob: ProblemDef, struct: ArcStructure, omega: ShootingVector, steps: int = 1000
) -> np.ndarray:
    """Central-difference Jacobian of the stacked residual.

    Vectorized problems evaluate all stencil points as one batch; otherwise
    columns are evaluated one by one.
    """
    M = steps_per_arc(struct, steps)
    flat = omega.pack()
    m = flat.size
    h = np.sqrt(np.finfo(float).eps) * np.maximum(1.0, np.abs(flat))
    if prob.vectorized:
        stencil = np.repeat(flat[None, :], 2 * m, axis=0)
        idx = np.arange(m)
        stencil[2 * idx, idx] += h
        stencil[2 * idx + 1, idx] -= h
        res = _residual_flat_batch(prob, struct, stencil, M)
        return ((res[2 * idx] - res[2 * idx + 1]) / (2.0 * h)[:, None]).T
    cols = []
    for i in range(m):
        try:
            up = flat.copy(); up[i] += h[i]
            dn = flat.copy(); dn[i] -= h[i]
            cols.append((_residual_flat(prob, struct, up, M) - _residual_flat(prob, struct, dn, M))
                        / (2.0 * h[i]))
        except ArcshootError as exc:
            raise ArcshootError(f"FD stencil failed on column {i}: {exc}") from exc
    return np.stack(cols, axis=1)


def _minimum_norm_step(J: np.ndarray, r: np.ndarray):
    """Least-squares minimum-norm solution of J s = -r via truncated SVD."""
    U, svals, Vt = np.linalg.svd(J, full_matrices=False)
    cutoff = SVD_RCOND * svals[0] if svals.size else 0.0
    rank = int(np.sum(svals > cutoff))
    coeff = (U[:, :rank].T @ (-r)) / svals[:rank]
    return Vt[:rank].T @ coeff, svals, rank


@dataclass
class ConvergenceReport:
    """Per-iteration history and final diagnostics of a Gauss-Newton run."""

    iterations: list = field(default_factory=list)
    converged: bool = False
    stalled: bool = False
    n_iter: int = 0
    final_residual: float = np.inf
    final_residual2: float = np.inf
    jacobian_rank: int = 0
    smallest_singular_value: float = 0.0
    singular_values: np.ndarray = field(default_factory=lambda: np.empty(0))
    order_estimate: float = float("nan")

    @property
    def residual_history(self) -> list:
        return [it["residual_norm"] for it in self.iterations] + [self.final_residual]

    def to_json_dict(self) -> dict:
        return {
            "iterations": [
                {"residual_norm": it["residual_norm"], "step_norm": it["step_norm"]}
                for it in self.iterations
            ],
            "converged": self.converged,
            "final_residual": self.final_residual,
            "jacobian_rank": self.jacobian_rank,
            "smallest_singular_value": self.smallest_singular_value,
            "order_estimate": None if np.isnan(self.order_estimate) else self.order_estimate,
        }


def _order_estimate(history) -> float:
    """Slope of log ||S_{j+1}|| against log ||S_j|| over the last clean pairs."""
    floor = 1e-13
    pairs = [
        (np.log(a), np.log(b))
        for a, b in zip(history, history[1:])
        if a > floor and b > floor and a < 1.0
    ]
    pairs = pairs[-3:]
    if len(pairs) < 2:
        return float("nan")
    xs = np.array([p[0] for p in pairs])
    ys = np.array([p[1] for p in pairs])
    return float(np.polyfit(xs, ys, 1)[0])


def gauss_newton(
    prob: ProblemDef,
    struct: ArcStructure,
    omega0: ShootingVector,
    steps: int = 1000,
    tol: float = 1e-8,
    max_iter: int = 50,
):
    """Solve S(omega) = 0 in the least-squares sense; quadratic near a zero.

    Each step is the minimum-norm solution of the linearized system; the
    2-norm of the residual gates acceptance with up to 20 step halvings.
    Returns the solution and a :class:`ConvergenceReport`.  Raises
    :class:`MaxIterExceeded` (carrying the best iterate) when the tolerance
    is not met and :class:`RankDeficientJacobian` when the final Jacobian
    loses full column rank.
    """
    struct.validate(prob)
    M = steps_per_arc(struct, steps)
    flat = omega0.pack().copy()
    m = flat.size
    report = ConvergenceReport()

    r = _residual_flat(prob, struct, flat, M)
    best = (np.linalg.norm(r, np.inf), flat.copy())
    converged = False
    for _ in range(max_iter):
        rinf = np.linalg.norm(r, np.inf)
        if rinf <= tol:
            converged = True
            break
        J = fd_jacobian(prob, struct, ShootingVector.unpack(
            flat, struct.N, prob.n, prob.q, len(index_sets(struct)[1])), steps)
        step, _, _ = _minimum_norm_step(J, r)
        r2 = np.linalg.norm(r)
        alpha = 1.0
        accepted = False
        for _ in range(MAX_HALVINGS + 1):
            trial = flat + alpha * step
            try:
                rt = _residual_flat(prob, struct, trial, M)
            except ArcshootError:
                alpha *= 0.5
                continue
            if np.linalg.norm(rt) < r2:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            report.stalled = True
            break
        step_norm = alpha * float(np.linalg.norm(step))
        report.iterations.append({"residual_norm": float(rinf), "step_norm": step_norm})
        report.n_iter += 1
        flat, r = trial, rt
        if np.linalg.norm(r, np.inf) < best[0]:
            best = (np.linalg.norm(r, np.inf), flat.copy())
        if step_norm <= STEP_FLOOR:
            break
    rinf = float(np.linalg.norm(r, np.inf))
    converged = converged or rinf <= tol

    omega_star = ShootingVector.unpack(flat, struct.N, prob.n, prob.q,
                                       len(index_sets(struct)[1]))
    J = fd_jacobian(prob, struct, omega_star, steps)
    _, svals, rank = _minimum_norm_step(J, r)
    report.converged = converged
    report.final_residual = rinf
    report.final_residual2 = float(np.linalg.norm(r))
    report.jacobian_rank = rank
    report.singular_values = svals
    report.smallest_singular_value = float(svals[-1]) if svals.size else 0.0
    report.order_estimate = _order_estimate(report.residual_history)

    if not converged:
        best_omega = ShootingVector.unpack(best[1], struct.N, prob.n, prob.q,
                                           len(index_sets(struct)[1]))
        raise MaxIterExceeded(
            f"no convergence after {report.n_iter} iterations, best |S|_inf = {best[0]:.3e}",
            omega=best_omega,
            report=report,
        )
    if rank < m:
        raise RankDeficientJacobian(
            f"Jacobian rank {rank} < {m} unknowns at the final iterate",
            omega=omega_star,
            report=report,
        )
    return omega_star, report


# ---------------------------------------------------------------------------
# Solution validation
# ---------------------------------------------------------------------------


@dataclass
class ValidationCheck:
    name: str
    passed: bool
    value: float
    detail: str = ""


@dataclass
class ValidationReport:
    checks: list

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_json_dict(self) -> dict:
        return {
            "passed": self.passed,
            "checks": [
                {"name": c.name, "passed": c.passed, "value": c.value, "detail": c.detail}
                for c in self.checks
            ],
        }


def _over_nodes(prob: ProblemDef, fn, *arrays) -> np.ndarray:
    """Evaluate fn over stacked node arrays, batched when the problem allows."""
    if prob.vectorized:
        return np.asarray(fn(*arrays))
    return np.asarray([fn(*row) for row in zip(*arrays)])


def validate_solution(
    prob: ProblemDef,
    struct: ArcStructure,
    omega: ShootingVector,
    steps: int = 1000,
) -> ValidationReport:
    """Post-solve structural checks; failures are findings, not exceptions."""
    M = steps_per_arc(struct, steps)
    traj = propagate_solution(prob, struct, omega, M)
    checks = []

    interior = [(k, a) for k, a in enumerate(traj.arcs)
                if a.kind in (ArcKind.Constrained, ArcKind.Singular)]
    if interior:
        margins = []
        for _, arc in interior:
            m_lo = arc.w - prob.u_min if prob.u_min is not None else np.inf
            m_hi = prob.u_max - arc.w if prob.u_max is not None else np.inf
            margins.append(np.minimum(m_lo, m_hi).min())
        margin = float(min(margins))
        checks.append(ValidationCheck(
            "bound_margin_on_interior_arcs", margin > 0.0, margin,
            "min distance of u to its bounds over C and S arcs"))
    else:
        checks.append(ValidationCheck("bound_margin_on_interior_arcs", True, np.inf,
                                      "no C or S arcs"))

    cs_jumps = []
    for k in range(struct.N - 1):
        pair = {struct.kinds[k], struct.kinds[k + 1]}
        if pair == {ArcKind.Constrained, ArcKind.Singular}:
            cs_jumps.append(abs(float(traj.arcs[k].w[-1] - traj.arcs[k + 1].w[0])))
    if cs_jumps:
        jump = min(cs_jumps)
        checks.append(ValidationCheck(
            "control_jump_at_cs_junctions", jump > 1e-6, jump,
            "control must be discontinuous across CS/SC junctions"))
    else:
        checks.append(ValidationCheck("control_jump_at_cs_junctions", True, np.inf,
                                      "no CS or SC junctions"))

    c_nodes = [x for k, a in enumerate(traj.arcs) if a.kind is ArcKind.Constrained
               for x in a.x]
    fo = check_first_order(prob, c_nodes)
    checks.append(ValidationCheck(
        "first_order_condition_on_c_arcs", fo.passed, fo.min_abs,
        f"min |dg.f1| vs guard {fo.guard:.3e}"))

    lc_vals = [
        float(np.max(_over_nodes(prob, lambda x, p: legendre_clebsch_value(prob, x, p),
                                 a.x, a.p)))
        for a in traj.arcs if a.kind is ArcKind.Singular
    ]
    if lc_vals:
        worst = max(lc_vals)
        checks.append(ValidationCheck(
            "legendre_clebsch_sign_on_s_arcs", worst < 0.0, worst,
            "p [[f1,f0],f1] must stay negative"))
    else:
        checks.append(ValidationCheck("legendre_clebsch_sign_on_s_arcs", True, -np.inf,
                                      "no S arcs"))

    nu_vals = [
        float(np.min(_over_nodes(prob, lambda x, p: constraint_multiplier_density(prob, x, p),
                                 a.x, a.p)))
        for a in traj.arcs if a.kind is ArcKind.Constrained
    ]
    if nu_vals:
        worst = min(nu_vals)
        checks.append(ValidationCheck(
            "constraint_multiplier_nonnegative", worst >= -1e-8, worst,
            "complementarity requires nu >= 0 on C arcs"))
    else:
        checks.append(ValidationCheck("constraint_multiplier_nonnegative", True, np.inf,
                                      "no C arcs"))

    gmax = max(float(np.max(_over_nodes(prob, prob.g, a.x))) for a in traj.arcs)
    checks.append(ValidationCheck(
        "state_constraint_satisfied", gmax <= 1e-6, gmax, "max g(x) over all nodes"))

    hdrift = 0.0
    for a in traj.arcs:
        h = _over_nodes(prob, lambda x, p, k=a.kind: arc_hamiltonian(prob, k, x, p), a.x, a.p)
        hdrift = max(hdrift, float(np.max(np.abs(h - h[0])) / (1.0 + abs(float(h[0])))))
    checks.append(ValidationCheck(
        "hamiltonian_constant_per_arc", hdrift <= 1e-6, hdrift,
        "max relative drift of H along each arc"))

    return ValidationReport(checks=checks)


# ---------------------------------------------------------------------------
# Warm-start files
# ---------------------------------------------------------------------------


def save_omega(path, struct: ArcStructure, omega: ShootingVector, prob: ProblemDef,
               steps: int) -> None:
    i_s, i_c, _, _ = index_sets(struct)
    doc = {
        "structure": {"kinds": struct.tokens(), "tau": [float(t) for t in omega.tau]},
        "omega": [float(v) for v in omega.pack()],
        "meta": {
            "N": struct.N,
            "n": prob.n,
            "q": prob.q,
            "n_constrained": len(i_c),
            "n_singular": len(i_s),
            "steps": steps,
        },
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_omega(path) -> tuple:
    """Read a warm-start file; returns (structure, omega, meta)."""
    with open(path) as fh:
        doc = json.load(fh)
    meta = doc["meta"]
    struct = ArcStructure.from_tokens(doc["structure"]["kinds"], doc["structure"]["tau"])
    i_s, i_c, _, _ = index_sets(struct)
    if struct.N != meta["N"] or len(i_c) != meta["n_constrained"] or len(i_s) != meta["n_singular"]:
        raise ConfigurationError(f"warm-start metadata inconsistent with structure in {path}")
    omega = ShootingVector.unpack(
        np.asarray(doc["omega"], dtype=float), meta["N"], meta["n"], meta["q"], len(i_c)
    )
    return struct, omega, meta
