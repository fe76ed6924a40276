import time

import numpy as np
import pytest

from arcshoot import problems as P
from arcshoot.arc_structure import index_sets
from arcshoot.direct_init import DirectSolveConfig, direct_solve
from arcshoot.second_order import assemble_omega, linearized_matrices
from arcshoot.shooting import ShootingVector, gauss_newton

PERTURB_SEED = 20240817


@pytest.fixture(scope="session")
def regulator():
    return P.make_regulator()


@pytest.fixture(scope="session")
def toy_bang():
    return P.make_toy_bang()


@pytest.fixture(scope="session")
def reg_struct():
    return P.regulator_structure()


@pytest.fixture(scope="session")
def reg_omega_exact():
    return P.regulator_analytic_omega()


def perturbed_start(prob, struct, omega, scale=0.05, seed=PERTURB_SEED):
    """Componentwise multiplicative perturbation with a fixed seed."""
    rng = np.random.default_rng(seed)
    flat = omega.pack()
    pert = flat * (1.0 + scale * rng.uniform(-1.0, 1.0, flat.size))
    n_c = len(index_sets(struct)[1])
    return ShootingVector.unpack(pert, struct.N, prob.n, prob.q, n_c)


@pytest.fixture(scope="session")
def reg_solution(regulator, reg_struct, reg_omega_exact):
    """Converged 1000-step run from the seeded +-5% perturbed analytic start."""
    from arcshoot.shooting import steps_per_arc
    from arcshoot.tp_dynamics import propagate_solution

    omega0 = perturbed_start(regulator, reg_struct, reg_omega_exact)
    t0 = time.perf_counter()
    omega, report = gauss_newton(regulator, reg_struct, omega0, steps=1000)
    runtime = time.perf_counter() - t0
    traj = propagate_solution(regulator, reg_struct, omega,
                              steps_per_arc(reg_struct, 1000))
    return {
        "omega": omega,
        "report": report,
        "runtime": runtime,
        "omega0": omega0,
        "cost": traj.cost(regulator),
    }


@pytest.fixture(scope="session")
def reg_direct(regulator):
    return direct_solve(regulator, DirectSolveConfig(grid_size=100, penalty_weight=1e3))


@pytest.fixture(scope="session")
def reg_lin(regulator, reg_struct, reg_solution):
    return linearized_matrices(regulator, reg_struct, reg_solution["omega"], nodes=200)


@pytest.fixture(scope="session")
def reg_qfd(regulator, reg_struct, reg_solution, reg_lin):
    return assemble_omega(regulator, reg_struct, reg_solution["omega"], lin=reg_lin)
