"""Second-order certificate: Goh-transformed quadratic form and positivity check.

Works on the transformed problem whose state stacks all arc states and the
interior switching times, X = (x^1, ..., x^N, tau) of dimension
D = N n + N - 1, driven by one control channel per singular arc.  Around a
converged solution the module builds, on a shared normalized-time grid,

* the linearized dynamics matrices A = F_X and B = F_U (central FD of the
  arc-field F), and E = A B - dB/ds,
* the Hamiltonian second derivatives H_XX (FD of the analytic gradient)
  and H_UX (FD of the switching row), the cross matrices M and R,
* the endpoint-Lagrangian Hessian and the linearized endpoint map.

Directions live in coordinates (Xi_0, Y) with Y sampled per node and the
terminal shift h tied to the last Y sample of each channel.  The assembled
quadratic form is

    Omega(Y, h, Xi) = rho(Xi_0, Xi_1, h)
                      + int_0^1 (Xi' H_XX Xi + 2 Y M Xi + Y R Y) ds,

with rho(z0, z1, h) = (z0, z1 + B_1 h)' L'' (z0, z1 + B_1 h)
+ h H_UX(1) (2 z1 + B_1 h); the companion form Q on untransformed
directions (V, Z) satisfies Q = Omega under Y = int V, Xi = Z - B Y, which
is the main self-check of the assembly.  Positivity of Omega against the
order norm |Xi_0|^2 + int |Y|^2 + |h|^2 on the discretized critical
subspace is the certificate for local convergence of the shooting method.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .arc_structure import ArcKind, ArcStructure, index_sets
from .errors import AssemblyError
from .problem_def import ProblemDef, gamma_control, gamma_gradient
from .shooting import ShootingVector
from .tp_dynamics import propagate_solution


# ---------------------------------------------------------------------------
# Transformed-problem field and Hamiltonian derivatives (batched over nodes)
# ---------------------------------------------------------------------------


def _tp_dims(struct: ArcStructure, n: int) -> int:
    return struct.N * n + (struct.N - 1)


def _split_state(X, N, n):
    blocks = [X[..., k * n : (k + 1) * n] for k in range(N)]
    tau = X[..., N * n :]
    return blocks, tau

def _durations(tau, T):
    lo = np.concatenate([np.zeros(tau.shape[:-1] + (1,)), tau], axis=-1)
    hi = np.concatenate([tau, np.full(tau.shape[:-1] + (1,), T)], axis=-1)
    return hi - lo


def _arc_controls(prob, struct, blocks, U):
    """Control value per arc; singular channels read from U (..., S)."""
    i_s = index_sets(struct)[0]
    chan = {k: j for j, k in enumerate(i_s)}
    ws = []
    for k, kind in enumerate(struct.kinds, start=1):
        xk = blocks[k - 1]
        if kind is ArcKind.BMinus:
            ws.append(np.broadcast_to(prob.u_min, xk.shape[:-1]))
        elif kind is ArcKind.BPlus:
            ws.append(np.broadcast_to(prob.u_max, xk.shape[:-1]))
        elif kind is ArcKind.Constrained:
            ws.append(np.asarray(gamma_control(prob, xk)))
        else:
            ws.append(U[..., chan[k]])
    return ws


def tp_field(prob: ProblemDef, struct: ArcStructure, U, X):
    """Right-hand side of the stacked transformed dynamics (tau rows are zero)."""
    N, n = struct.N, prob.n
    blocks, tau = _split_state(np.asarray(X, dtype=float), N, n)
    dts = _durations(tau, prob.T)
    ws = _arc_controls(prob, struct, blocks, np.asarray(U, dtype=float))
    out = np.zeros_like(np.asarray(X, dtype=float))
    for k in range(N):
        xk = blocks[k]
        w = np.asarray(ws[k])
        wv = w[..., None] if w.ndim > 0 else w
        dt = dts[..., k : k + 1]
        out[..., k * n : (k + 1) * n] = dt * (prob.f0(xk) + wv * prob.f1(xk))
    return out


def tp_ham_grad(prob: ProblemDef, struct: ArcStructure, U, X, P_arcs):
    """Analytic gradient of the pre-Hamiltonian sum_k dt_k H^k in X.

    ``P_arcs`` holds the frozen arc costates (..., N, n); singular controls
    are frozen at the values in U, so the feedback terms appear only
    through the constrained-arc substitution.
    """
    N, n = struct.N, prob.n
    X = np.asarray(X, dtype=float)
    blocks, tau = _split_state(X, N, n)
    dts = _durations(tau, prob.T)
    ws = _arc_controls(prob, struct, blocks, np.asarray(U, dtype=float))
    grad = np.zeros_like(X)
    h_vals = []
    for k, kind in enumerate(struct.kinds):
        xk = blocks[k]
        pk = P_arcs[..., k, :]
        w = np.asarray(ws[k])
        wv = w[..., None] if w.ndim > 0 else w
        wm = w[..., None, None] if w.ndim > 0 else w
        f0x = prob.f0(xk)
        f1x = prob.f1(xk)
        hk = np.einsum("...i,...i->...", pk, f0x + wv * f1x)
        h_vals.append(hk)
        hx = np.einsum("...i,...ij->...j", pk, prob.df0(xk) + wm * prob.df1(xk))
        if kind is ArcKind.Constrained:
            pf1 = np.einsum("...i,...i->...", pk, f1x)
            pf1 = pf1[..., None] if np.ndim(pf1) > 0 else pf1
            hx = hx + pf1 * gamma_gradient(prob, xk)
        dt = dts[..., k : k + 1]
        grad[..., k * n : (k + 1) * n] = dt * hx
    # d dt_k / d tau_j is +1 for k = j, -1 for k = j + 1.
    for j in range(N - 1):
        grad[..., N * n + j] = h_vals[j] - h_vals[j + 1]
    return grad


def tp_ham_u(prob: ProblemDef, struct: ArcStructure, X, P_arcs):
    """Switching row per singular channel: dt_k p^k f1(x^k), shape (..., S)."""
    N, n = struct.N, prob.n
    i_s = index_sets(struct)[0]
    blocks, tau = _split_state(np.asarray(X, dtype=float), N, n)
    dts = _durations(tau, prob.T)
    cols = []
    for k in i_s:
        xk = blocks[k - 1]
        pk = P_arcs[..., k - 1, :]
        cols.append(dts[..., k - 1] * np.einsum("...i,...i->...", pk, prob.f1(xk)))
    if not cols:
        return np.zeros(np.asarray(X, dtype=float).shape[:-1] + (0,))
    return np.stack(cols, axis=-1)


# ---------------------------------------------------------------------------
# Linearization grids
# ---------------------------------------------------------------------------


@dataclass
class TPLinearization:
    """Per-node matrices of the linearized transformed problem."""

    prob: ProblemDef
    struct: ArcStructure
    omega: ShootingVector
    s: np.ndarray            # (M+1,)
    X: np.ndarray            # (M+1, D)
    P_arcs: np.ndarray       # (M+1, N, n)
    U: np.ndarray            # (M+1, S)
    A: np.ndarray            # (M+1, D, D)
    B: np.ndarray            # (M+1, D, S)
    E: np.ndarray            # (M+1, D, S)
    HXX: np.ndarray          # (M+1, D, D)
    HUX: np.ndarray          # (M+1, S, D)
    Mmat: np.ndarray         # (M+1, S, D)
    Rmat: np.ndarray         # (M+1, S, S), symmetrized
    ell_hess: np.ndarray     # (2D, 2D)
    dcons: np.ndarray        # (q + |C| + n(N-1), 2D)
    goh_asymmetry: float

    @property
    def D(self) -> int:
        return _tp_dims(self.struct, self.prob.n)

    @property
    def n_channels(self) -> int:
        return len(index_sets(self.struct)[0])

    @property
    def weights(self) -> np.ndarray:
        h = self.s[1] - self.s[0]
        w = np.full(self.s.size, h)
        w[0] = w[-1] = 0.5 * h
        return w

    def arc_block(self, k: int) -> slice:
        """Row slice of arc k (0-based) inside the stacked state."""
        n = self.prob.n
        return slice(k * n, (k + 1) * n)


def _fd_jac_nodes(fn, X, out_dim):
    """Central-difference Jacobian of fn(X) w.r.t. X, per node; X is (B, D)."""
    B_, D = X.shape
    cols = np.empty((B_, out_dim, D))
    for j in range(D):
        h = 1e-6 * np.maximum(1.0, np.abs(X[:, j]))
        up = X.copy(); up[:, j] += h
        dn = X.copy(); dn[:, j] -= h
        cols[:, :, j] = (fn(up) - fn(dn)) / (2.0 * h)[:, None]
    return cols


def linearized_matrices(
    prob: ProblemDef,
    struct: ArcStructure,
    omega: ShootingVector,
    nodes: int = 200,
) -> TPLinearization:
    """Build all per-node matrices of the linearized transformed problem.

    ``nodes`` is the number of grid cells per arc (the shared normalized
    grid has nodes + 1 points).
    """
    struct.validate(prob)
    N, n = struct.N, prob.n
    D = _tp_dims(struct, n)
    i_s, i_c, _, _ = index_sets(struct)
    S = len(i_s)
    traj = propagate_solution(prob, struct, omega, nodes)
    m1 = nodes + 1

    X = np.empty((m1, D))
    P_arcs = np.empty((m1, N, n))
    for k, arc in enumerate(traj.arcs):
        X[:, k * n : (k + 1) * n] = arc.x
        P_arcs[:, k, :] = arc.p
    X[:, N * n :] = np.asarray(omega.tau)[None, :]
    U = (
        np.stack([traj.arcs[k - 1].w for k in i_s], axis=-1)
        if S
        else np.zeros((m1, 0))
    )

    field_fn = lambda Xb, Ub: tp_field(prob, struct, Ub, Xb)
    if prob.vectorized:
        A = _fd_jac_nodes(lambda Xb: field_fn(Xb, U), X, D)
        grad_fn = lambda Xb: tp_ham_grad(prob, struct, U, Xb, P_arcs)
        HXX = _fd_jac_nodes(grad_fn, X, D)
        hu_fn = lambda Xb: tp_ham_u(prob, struct, Xb, P_arcs)
        HUX = _fd_jac_nodes(hu_fn, X, S)
    else:
        A = np.stack([
            _fd_jac_nodes(lambda Xb, i=i: np.atleast_2d(
                tp_field(prob, struct, U[i], Xb[0])), X[i : i + 1], D)[0]
            for i in range(m1)
        ])
        HXX = np.stack([
            _fd_jac_nodes(lambda Xb, i=i: np.atleast_2d(
                tp_ham_grad(prob, struct, U[i], Xb[0], P_arcs[i])), X[i : i + 1], D)[0]
            for i in range(m1)
        ])
        HUX = np.stack([
            _fd_jac_nodes(lambda Xb, i=i: np.atleast_2d(
                tp_ham_u(prob, struct, Xb[0], P_arcs[i])), X[i : i + 1], S)[0]
            for i in range(m1)
        ])

    asym = float(np.max(np.abs(HXX - np.swapaxes(HXX, 1, 2)))) if HXX.size else 0.0
    scale = 1.0 + float(np.max(np.abs(HXX))) if HXX.size else 1.0
    if asym > 1e-4 * scale:
        raise AssemblyError(
            f"H_XX finite-difference asymmetry {asym:.3e} exceeds tolerance; "
            "gradient and field evaluations disagree"
        )
    HXX = 0.5 * (HXX + np.swapaxes(HXX, 1, 2))

    # B = F_U by central differences in the channel values.
    B = np.zeros((m1, D, S))
    for j in range(S):
        h = 1e-6 * np.maximum(1.0, np.abs(U[:, j]))
        up = U.copy(); up[:, j] += h
        dn = U.copy(); dn[:, j] -= h
        if prob.vectorized:
            B[:, :, j] = (field_fn(X, up) - field_fn(X, dn)) / (2.0 * h)[:, None]
        else:
            B[:, :, j] = np.stack([
                (tp_field(prob, struct, up[i], X[i]) - tp_field(prob, struct, dn[i], X[i]))
                / (2.0 * h[i])
                for i in range(m1)
            ])

    ds = 1.0 / nodes
    E = np.einsum("tij,tjk->tik", A, B) - _time_derivative(B, ds)
    Mmat = (
        np.einsum("tjs,tji->tsi", B, HXX)
        - _time_derivative(HUX, ds)
        - np.einsum("tsi,tij->tsj", HUX, A)
    )
    HUXB = np.einsum("tsi,tik->tsk", HUX, B)
    Rmat = (
        np.einsum("tis,tij,tjr->tsr", B, HXX, B)
        - 2.0 * np.einsum("tsi,tik->tsk", HUX, E)
        - _time_derivative(HUXB, ds)
    )
    Rmat = 0.5 * (Rmat + np.swapaxes(Rmat, 1, 2))
    goh = float(np.max(np.abs(HUXB - np.swapaxes(HUXB, 1, 2)))) if S else 0.0

    ell_hess = _endpoint_lagrangian_hessian(prob, struct, omega, X[0], X[-1])
    dcons = _endpoint_constraint_jacobian(prob, struct, X[0], X[-1])

    return TPLinearization(
        prob=prob, struct=struct, omega=omega, s=np.linspace(0.0, 1.0, m1),
        X=X, P_arcs=P_arcs, U=U, A=A, B=B, E=E, HXX=HXX, HUX=HUX,
        Mmat=Mmat, Rmat=Rmat, ell_hess=ell_hess, dcons=dcons, goh_asymmetry=goh,
    )


def _time_derivative(grid: np.ndarray, ds: float) -> np.ndarray:
    out = np.empty_like(grid)
    out[1:-1] = (grid[2:] - grid[:-2]) / (2.0 * ds)
    out[0] = (grid[1] - grid[0]) / ds
    out[-1] = (grid[-1] - grid[-2]) / ds
    return out


def _endpoint_lagrangian(prob, struct, omega, X0, X1):
    N, n = struct.N, prob.n
    i_c = index_sets(struct)[1]
    x01 = X0[: n]
    x1N = X1[(N - 1) * n : N * n]
    val = float(prob.phi(x01, x1N)) + float(np.dot(omega.psi, prob.Phi(x01, x1N)))
    for j, k in enumerate(i_c):
        val += float(omega.gamma[j]) * float(prob.g(X0[(k - 1) * n : k * n]))
    return val


def _endpoint_lagrangian_hessian(prob, struct, omega, X0, X1):
    """Central second differences of the endpoint Lagrangian over (X0, X1)."""
    D = X0.size
    z = np.concatenate([X0, X1])
    f = lambda zz: _endpoint_lagrangian(prob, struct, omega, zz[:D], zz[D:])
    m = 2 * D
    h = 1e-4 * np.maximum(1.0, np.abs(z))
    hess = np.empty((m, m))
    for i in range(m):
        for j in range(i, m):
            zpp = z.copy(); zpp[i] += h[i]; zpp[j] += h[j]
            zpm = z.copy(); zpm[i] += h[i]; zpm[j] -= h[j]
            zmp = z.copy(); zmp[i] -= h[i]; zmp[j] += h[j]
            zmm = z.copy(); zmm[i] -= h[i]; zmm[j] -= h[j]
            hess[i, j] = hess[j, i] = (f(zpp) - f(zpm) - f(zmp) + f(zmm)) / (4 * h[i] * h[j])
    return hess


def _endpoint_constraints(prob, struct, X0, X1):
    N, n = struct.N, prob.n
    i_c = index_sets(struct)[1]
    x01 = X0[: n]
    x1N = X1[(N - 1) * n : N * n]
    parts = [np.atleast_1d(np.asarray(prob.Phi(x01, x1N), dtype=float))]
    for k in i_c:
        parts.append(np.atleast_1d(float(prob.g(X0[(k - 1) * n : k * n]))))
    for k in range(N - 1):
        parts.append(X1[k * n : (k + 1) * n] - X0[(k + 1) * n : (k + 2) * n])
    return np.concatenate(parts)


def _endpoint_constraint_jacobian(prob, struct, X0, X1):
    D = X0.size
    z = np.concatenate([X0, X1])
    f = lambda zz: _endpoint_constraints(prob, struct, zz[:D], zz[D:])
    rows = f(z).size
    jac = np.empty((rows, 2 * D))
    for j in range(2 * D):
        h = 1e-6 * max(1.0, abs(z[j]))
        up = z.copy(); up[j] += h
        dn = z.copy(); dn[j] -= h
        jac[:, j] = (f(up) - f(dn)) / (2.0 * h)
    return jac


# ---------------------------------------------------------------------------
# Direction space and quadratic form assembly
# ---------------------------------------------------------------------------


@dataclass
class QuadraticFormData:
    """Discretized quadratic form, constraint rows and order-norm Gram matrix.

    Coordinates are (Xi_0 in R^D, Y samples channel-major over the nodes);
    the terminal shift h of each channel is its last Y sample.
    """

    lin: TPLinearization
    hess: np.ndarray
    cons: np.ndarray
    gram: np.ndarray
    xi_basis: np.ndarray     # (M+1, D, ncoord): Xi path of every coordinate

    @property
    def ncoord(self) -> int:
        return self.hess.shape[0]

    def y_slice(self, channel: int) -> slice:
        D = self.lin.D
        m1 = self.lin.s.size
        return slice(D + channel * m1, D + (channel + 1) * m1)

    def h_index(self, channel: int) -> int:
        return self.y_slice(channel).stop - 1

    def split(self, coords: np.ndarray):
        """Coordinates -> (Xi0, Y_nodes (M+1, S), h (S,))."""
        D = self.lin.D
        S = self.lin.n_channels
        m1 = self.lin.s.size
        xi0 = coords[:D]
        Y = coords[D:].reshape(S, m1).T if S else np.zeros((m1, 0))
        h = Y[-1] if S else np.zeros(0)
        return xi0, Y, h

    def value(self, coords: np.ndarray) -> float:
        return float(coords @ self.hess @ coords)


def _propagate_linear(lin: TPLinearization, drive: np.ndarray, Z0: np.ndarray,
                      use_E: bool) -> np.ndarray:
    """RK4 for Z' = A Z + (E or B) drive with nodal coefficients.

    ``Z0`` may be a matrix of stacked initial columns; ``drive`` holds the
    per-node channel values with matching trailing columns.
    """
    A = lin.A
    G = lin.E if use_E else lin.B
    m1 = lin.s.size
    ds = lin.s[1] - lin.s[0]
    Z = np.empty((m1,) + Z0.shape)
    Z[0] = Z0
    for i in range(m1 - 1):
        A0, A1 = A[i], A[i + 1]
        Am = 0.5 * (A0 + A1)
        G0, G1 = G[i], G[i + 1]
        Gm = 0.5 * (G0 + G1)
        d0, d1 = drive[i], drive[i + 1]
        dm = 0.5 * (d0 + d1)
        z = Z[i]
        k1 = A0 @ z + G0 @ d0
        k2 = Am @ (z + 0.5 * ds * k1) + Gm @ dm
        k3 = Am @ (z + 0.5 * ds * k2) + Gm @ dm
        k4 = A1 @ (z + ds * k3) + G1 @ d1
        Z[i + 1] = z + (ds / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return Z


def integrate_goh(lin: TPLinearization, Xi0: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Integrate Xi' = A Xi + E Y from Xi0; Y is nodal, (M+1, S)."""
    return _propagate_linear(lin, Y[:, :, None] if Y.ndim == 2 else Y, Xi0[:, None],
                             use_E=True)[:, :, 0]


def integrate_lineq(lin: TPLinearization, Z0: np.ndarray, V: np.ndarray) -> np.ndarray:
    """Integrate Z' = A Z + B V from Z0; V is nodal, (M+1, S)."""
    return _propagate_linear(lin, V[:, :, None], Z0[:, None], use_E=False)[:, :, 0]


def cumulative_trapezoid(V: np.ndarray, ds: float) -> np.ndarray:
    out = np.zeros_like(V)
    out[1:] = np.cumsum(0.5 * ds * (V[1:] + V[:-1]), axis=0)
    return out


def rho_value(lin: TPLinearization, zeta0: np.ndarray, zeta1: np.ndarray,
              h: np.ndarray) -> float:
    """Endpoint term: (z0, z1 + B1 h)' L'' (z0, z1 + B1 h) + h HUX_1 (2 z1 + B1 h)."""
    B1 = lin.B[-1]
    dz = np.concatenate([zeta0, zeta1 + B1 @ h])
    val = float(dz @ lin.ell_hess @ dz)
    if h.size:
        val += float(h @ lin.HUX[-1] @ (2.0 * zeta1 + B1 @ h))
    return val


def omega_form_value(lin: TPLinearization, Xi0: np.ndarray, Y: np.ndarray) -> float:
    """Direct quadrature of the transformed form on one direction (h = Y[-1])."""
    Xi = integrate_goh(lin, Xi0, Y)
    w = lin.weights
    quad = np.einsum("t,ti,tij,tj->", w, Xi, lin.HXX, Xi)
    quad += 2.0 * np.einsum("t,ts,tsi,ti->", w, Y, lin.Mmat, Xi)
    quad += np.einsum("t,ts,tsr,tr->", w, Y, lin.Rmat, Y)
    return float(quad) + rho_value(lin, Xi[0], Xi[-1], Y[-1])


def q_form_value(lin: TPLinearization, Z0: np.ndarray, V: np.ndarray) -> float:
    """Quadratic form on untransformed directions (V, Z); equals the Goh form."""
    Z = integrate_lineq(lin, Z0, V)
    w = lin.weights
    quad = np.einsum("t,ti,tij,tj->", w, Z, lin.HXX, Z)
    quad += 2.0 * np.einsum("t,ts,tsi,ti->", w, V, lin.HUX, Z)
    dz = np.concatenate([Z[0], Z[-1]])
    return float(quad) + float(dz @ lin.ell_hess @ dz)


def assemble_omega(
    prob: ProblemDef,
    struct: ArcStructure,
    omega: ShootingVector,
    nodes: int = 200,
    lin: TPLinearization = None,
) -> QuadraticFormData:
    """Assemble the discretized quadratic form, constraints and Gram matrix."""
    if lin is None:
        lin = linearized_matrices(prob, struct, omega, nodes)
    D = lin.D
    S = lin.n_channels
    m1 = lin.s.size
    ncoord = D + S * m1
    w = lin.weights
    ds = lin.s[1] - lin.s[0]

    # Xi path of every basis coordinate: Xi' = A Xi + E Y.
    Xi0_basis = np.zeros((D, ncoord))
    Xi0_basis[:, :D] = np.eye(D)
    Y_basis = np.zeros((m1, S, ncoord))
    for ch in range(S):
        for i in range(m1):
            Y_basis[i, ch, D + ch * m1 + i] = 1.0
    xi_basis = _propagate_linear(lin, Y_basis, Xi0_basis, use_E=True)

    hess = np.zeros((ncoord, ncoord))
    for i in range(m1):
        Xi = xi_basis[i]
        Yb = Y_basis[i]
        hess += w[i] * (Xi.T @ lin.HXX[i] @ Xi)
        cross = Xi.T @ lin.Mmat[i].T @ Yb
        hess += w[i] * (cross + cross.T)
        hess += w[i] * (Yb.T @ lin.Rmat[i] @ Yb)

    # Endpoint term rho as a bilinear form over the coordinates.
    H_basis = np.zeros((S, ncoord))
    for ch in range(S):
        H_basis[ch, D + ch * m1 + m1 - 1] = 1.0
    B1 = lin.B[-1]
    dz_basis = np.vstack([Xi0_basis, xi_basis[-1] + B1 @ H_basis])
    hess += dz_basis.T @ lin.ell_hess @ dz_basis
    if S:
        cross = H_basis.T @ lin.HUX[-1] @ xi_basis[-1]
        hess += cross + cross.T
        hb = lin.HUX[-1] @ B1
        hess += H_basis.T @ (0.5 * (hb + hb.T)) @ H_basis

    hess = 0.5 * (hess + hess.T)

    # Constraint rows: endpoint map on (Xi0, Xi1 + B1 h), then the active
    # state constraint along every constrained arc node.
    rows = [lin.dcons @ np.vstack([Xi0_basis, xi_basis[-1] + B1 @ H_basis])]
    i_c = index_sets(lin.struct)[1]
    for k in i_c:
        blk = lin.arc_block(k - 1)
        for i in range(m1):
            dgx = np.asarray(lin.prob.dg(lin.X[i, blk]), dtype=float)
            row = dgx @ xi_basis[i][blk, :]
            row = row + dgx @ lin.B[i][blk, :] @ Y_basis[i]
            rows.append(row[None, :])
    cons = np.vstack(rows)

    gram = np.zeros((ncoord, ncoord))
    gram[:D, :D] = np.eye(D)
    for ch in range(S):
        sl = slice(D + ch * m1, D + (ch + 1) * m1)
        gram[sl, sl] = np.diag(w)
        hidx = D + ch * m1 + m1 - 1
        gram[hidx, hidx] += 1.0
    return QuadraticFormData(lin=lin, hess=hess, cons=cons, gram=gram, xi_basis=xi_basis)


# ---------------------------------------------------------------------------
# Positivity check
# ---------------------------------------------------------------------------


@dataclass
class PositivityReport:
    c_est: float
    lam_max: float
    nullspace_dim: int
    goh_asymmetry: float
    passed: bool
    vacuous: bool = False

    def to_json_dict(self) -> dict:
        return {
            "c_est": self.c_est,
            "nullspace_dim": self.nullspace_dim,
            "goh_asymmetry": self.goh_asymmetry,
            "pass": self.passed,
        }


def constraint_nullspace(cons: np.ndarray, ncoord: int) -> np.ndarray:
    """Orthonormal basis of the nullspace of the constraint rows."""
    if cons.size == 0:
        return np.eye(ncoord)
    _, svals, Vt = np.linalg.svd(cons, full_matrices=True)
    tol = max(cons.shape) * np.finfo(float).eps * (svals[0] if svals.size else 0.0)
    rank = int(np.sum(svals > tol))
    return Vt[rank:].T


def check_positivity(qfd: QuadraticFormData, margin_coeff: float = 1e-6) -> PositivityReport:
    """Smallest generalized eigenvalue of the form against the order norm.

    Reduces the assembled form to the discretized critical subspace (the
    nullspace of the constraint rows) and solves the generalized symmetric
    eigenproblem against the Gram matrix of the order norm.  Passes when
    the smallest eigenvalue clears the relative margin.
    """
    Z = constraint_nullspace(qfd.cons, qfd.ncoord)
    if Z.shape[1] == 0:
        return PositivityReport(c_est=np.inf, lam_max=np.inf, nullspace_dim=0,
                                goh_asymmetry=qfd.lin.goh_asymmetry, passed=True,
                                vacuous=True)
    Hr = Z.T @ qfd.hess @ Z
    Gr = Z.T @ qfd.gram @ Z
    L = np.linalg.cholesky(Gr)
    Linv = np.linalg.inv(L)
    W = Linv @ Hr @ Linv.T
    eig = np.linalg.eigvalsh(0.5 * (W + W.T))
    c_est = float(eig[0])
    lam_max = float(np.max(np.abs(eig)))
    return PositivityReport(
        c_est=c_est,
        lam_max=lam_max,
        nullspace_dim=Z.shape[1],
        goh_asymmetry=qfd.lin.goh_asymmetry,
        passed=bool(c_est > margin_coeff * lam_max),
    )
