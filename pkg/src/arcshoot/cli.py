"""Command-line front end: solve / detect / verify pipelines.

Configuration comes from flags or a JSON config file (flags win).  All
floating output is printed with 9 significant digits and no timestamps, so
identical configurations produce byte-identical files.

Exit codes: 0 success (solve: converged and validation clean; verify:
positivity passed), 2 computed but with findings, 1 failure or bad
configuration.
"""

from __future__ import annotations

import argparse
import importlib
import json
import sys
from pathlib import Path

import numpy as np

from .arc_structure import ArcStructure, detect_structure, index_sets, read_trajectory_csv, write_trajectory_csv
from .direct_init import DirectSolveConfig, direct_solve
from .errors import ArcshootError, ConfigurationError, MaxIterExceeded, RankDeficientJacobian
from .problem_def import ProblemDef
from .second_order import assemble_omega, check_positivity
from .shooting import (
    ShootingVector,
    gauss_newton,
    load_omega,
    save_omega,
    steps_per_arc,
    validate_solution,
)
from .tp_dynamics import propagate_solution, write_tp_csv
from . import problems as builtin_problems


def _round9(obj):
    """Clamp every float to 9 significant digits for deterministic output."""
    if isinstance(obj, float):
        return float(f"{obj:.9g}")
    if isinstance(obj, dict):
        return {k: _round9(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round9(v) for v in obj]
    if isinstance(obj, np.floating):
        return float(f"{float(obj):.9g}")
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _write_json(path: Path, doc: dict) -> None:
    with open(path, "w") as fh:
        json.dump(_round9(doc), fh, indent=1, sort_keys=True)
        fh.write("\n")


def resolve_problem(spec: str) -> ProblemDef:
    """Built-in name, or `module:callable` returning a ProblemDef."""
    if spec in builtin_problems.problem_names():
        return builtin_problems.get_problem(spec)
    if ":" in spec:
        mod_name, attr = spec.split(":", 1)
        try:
            factory = getattr(importlib.import_module(mod_name), attr)
        except (ImportError, AttributeError) as exc:
            raise ConfigurationError(f"cannot import problem factory {spec!r}: {exc}") from exc
        prob = factory()
        if not isinstance(prob, ProblemDef):
            raise ConfigurationError(f"{spec!r} did not return a ProblemDef")
        return prob
    raise ConfigurationError(
        f"unknown problem {spec!r}; built-ins: {', '.join(builtin_problems.problem_names())}"
    )


def _merge_config(args: argparse.Namespace, keys) -> dict:
    cfg = {}
    if getattr(args, "config", None):
        with open(args.config) as fh:
            file_cfg = json.load(fh)
        for k in keys:
            if k in file_cfg:
                cfg[k] = file_cfg[k]
    for k in keys:
        v = getattr(args, k, None)
        if v is not None:
            cfg[k] = v
    return cfg


def _resolve_structure(prob, cfg, out_dir) -> tuple:
    """Return (structure, direct_result or None) from the config."""
    tokens = cfg.get("structure")
    if tokens in (None, "detect"):
        dres = _run_direct(prob, cfg)
        struct = detect_structure(prob, dres.t, dres.u, dres.x)
        return struct, dres
    names = [t for t in str(tokens).split(",") if t.strip()]
    tau_raw = cfg.get("tau")
    if tau_raw is None:
        N = len(names)
        tau = [prob.T * k / N for k in range(1, N)]
    elif isinstance(tau_raw, str):
        tau = [float(v) for v in tau_raw.split(",") if v.strip()]
    else:
        tau = [float(v) for v in tau_raw]
    struct = ArcStructure.from_tokens(names, tau)
    struct.validate(prob)
    return struct, None


def _run_direct(prob, cfg):
    dcfg = DirectSolveConfig(
        grid_size=int(cfg.get("grid", 100)),
        penalty_weight=float(cfg.get("penalty", 1e3)),
        max_iters=int(cfg.get("direct_iters", 800)),
    )
    return direct_solve(prob, dcfg)


def _initial_omega(prob, struct, cfg, dres) -> ShootingVector:
    init = cfg.get("init", "analytic")
    if init == "analytic":
        name = cfg.get("problem")
        try:
            omega = builtin_problems.builtin_omega(name)
            ref = builtin_problems.builtin_structure(name)
        except ConfigurationError as exc:
            raise ConfigurationError(
                f"init=analytic needs a built-in problem with a reference solution: {exc}"
            ) from exc
        if ref.kinds != struct.kinds:
            raise ConfigurationError(
                f"init=analytic provides structure {ref.tokens()}, requested {struct.tokens()}"
            )
        tau0 = np.asarray(struct.tau if cfg.get("tau") is not None else ref.tau, dtype=float)
        return ShootingVector(omega.x0, tau0, omega.p0, omega.psi, omega.gamma)
    if init == "direct":
        if dres is None:
            dres = _run_direct(prob, cfg)
        return _omega_from_direct(prob, struct, dres)
    path = Path(init)
    if not path.exists():
        raise ConfigurationError(f"warm-start file {path} does not exist")
    file_struct, omega, _ = load_omega(path)
    if file_struct.kinds != struct.kinds:
        raise ConfigurationError(
            f"warm start has structure {file_struct.tokens()}, requested {struct.tokens()}"
        )
    return omega


def _omega_from_direct(prob, struct, dres) -> ShootingVector:
    """Arc states from the direct trajectory, costates from its adjoint."""
    bounds = struct.boundaries(prob.T)
    idx = [int(np.argmin(np.abs(dres.t - b))) for b in bounds[:-1]]
    x0 = np.stack([dres.x[i] for i in idx])
    p0 = np.stack([dres.lam[i] for i in idx])
    n_c = len(index_sets(struct)[1])
    return ShootingVector(
        x0=x0,
        tau=np.asarray(struct.tau, dtype=float),
        p0=p0,
        psi=-dres.lam[0],
        gamma=np.zeros(n_c),
    )


def cmd_solve(args) -> int:
    cfg = _merge_config(args, ["problem", "structure", "tau", "init", "steps", "tol",
                               "max_iter", "out", "grid", "penalty", "direct_iters"])
    out_dir = Path(cfg.get("out", "out"))
    out_dir.mkdir(parents=True, exist_ok=True)
    prob = resolve_problem(cfg["problem"])
    steps = int(cfg.get("steps", 1000))
    struct, dres = _resolve_structure(prob, cfg, out_dir)
    omega0 = _initial_omega(prob, struct, cfg, dres)

    rank_deficient = False
    try:
        omega, report = gauss_newton(
            prob, struct, omega0, steps=steps,
            tol=float(cfg.get("tol", 1e-8)), max_iter=int(cfg.get("max_iter", 50)),
        )
    except RankDeficientJacobian as exc:
        omega, report = exc.omega, exc.report
        rank_deficient = True
    except MaxIterExceeded as exc:
        print(f"solve: {exc}", file=sys.stderr)
        doc = {"problem": cfg["problem"], "converged": False,
               "gauss_newton": exc.report.to_json_dict() if exc.report else None}
        _write_json(out_dir / "report.json", doc)
        return 1

    validation = validate_solution(prob, struct, omega, steps=steps)
    traj = propagate_solution(prob, struct, omega, steps_per_arc(struct, steps))
    write_tp_csv(out_dir / "trajectory.csv", traj)
    save_omega(out_dir / "omega.json", struct, omega, prob, steps)
    doc = {
        "problem": cfg["problem"],
        "structure": struct.tokens(),
        "tau": [float(t) for t in omega.tau],
        "cost": traj.cost(prob),
        "converged": report.converged,
        "rank_deficient": rank_deficient,
        "gauss_newton": report.to_json_dict(),
        "validation": validation.to_json_dict(),
    }
    _write_json(out_dir / "report.json", doc)
    print(
        f"solve: converged={report.converged} cost={doc['cost']:.9g} "
        f"tau={[f'{t:.9g}' for t in doc['tau']]} |S|_inf={report.final_residual:.3e}"
    )
    if rank_deficient or not validation.passed:
        return 2
    return 0


def cmd_detect(args) -> int:
    cfg = _merge_config(args, ["problem", "grid", "penalty", "direct_iters", "out",
                               "from_csv", "min_arc_len"])
    out_dir = Path(cfg.get("out", "out"))
    out_dir.mkdir(parents=True, exist_ok=True)
    prob = resolve_problem(cfg["problem"])
    from .arc_structure import DetectTolerances

    tols = DetectTolerances(min_arc_len=cfg.get("min_arc_len"))
    if cfg.get("from_csv"):
        t, u, x = read_trajectory_csv(cfg["from_csv"])
        doc_extra = {"source": str(cfg["from_csv"])}
    else:
        dres = _run_direct(prob, cfg)
        t, u, x = dres.t, dres.u, dres.x
        write_trajectory_csv(out_dir / "direct_trajectory.csv", t, u, x)
        doc_extra = {"source": "direct", "direct_cost": dres.cost,
                     "direct_stalled": dres.stalled}
    struct = detect_structure(prob, t, u, x, tols)
    doc = {"kinds": struct.tokens(), "tau": [float(v) for v in struct.tau]}
    doc.update(doc_extra)
    _write_json(out_dir / "structure.json", doc)
    print(f"detect: {','.join(struct.tokens())} tau={[f'{v:.9g}' for v in struct.tau]}")
    return 0


def cmd_verify(args) -> int:
    cfg = _merge_config(args, ["problem", "omega", "nodes", "out"])
    out_dir = Path(cfg.get("out", "out"))
    out_dir.mkdir(parents=True, exist_ok=True)
    prob = resolve_problem(cfg["problem"])
    omega_path = cfg.get("omega", str(out_dir / "omega.json"))
    struct, omega, _ = load_omega(omega_path)
    struct.validate(prob)
    qfd = assemble_omega(prob, struct, omega, nodes=int(cfg.get("nodes", 200)))
    report = check_positivity(qfd)
    _write_json(out_dir / "positivity.json", report.to_json_dict())
    print(
        f"verify: c_est={report.c_est:.9g} nullspace_dim={report.nullspace_dim} "
        f"pass={report.passed}"
    )
    return 0 if report.passed else 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="arcshoot",
        description="Shooting solver for bang / constrained / singular arc structures",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    ps = sub.add_parser("solve", help="run the shooting pipeline")
    ps.add_argument("--problem", help="built-in name or module:callable")
    ps.add_argument("--structure", help="comma tokens B-,B+,C,S or 'detect'")
    ps.add_argument("--tau", help="comma-separated interior switching times")
    ps.add_argument("--init", help="analytic | direct | path to omega.json")
    ps.add_argument("--steps", type=int, help="total integration steps (default 1000)")
    ps.add_argument("--tol", type=float, help="residual tolerance (default 1e-8)")
    ps.add_argument("--max-iter", dest="max_iter", type=int)
    ps.add_argument("--grid", type=int, help="direct-solve grid size")
    ps.add_argument("--penalty", type=float, help="direct-solve penalty weight")
    ps.add_argument("--direct-iters", dest="direct_iters", type=int)
    ps.add_argument("--out", help="output directory (default out)")
    ps.add_argument("--config", help="JSON config file; flags win")
    ps.set_defaults(func=cmd_solve)

    pd = sub.add_parser("detect", help="direct solve and arc-structure detection")
    pd.add_argument("--problem")
    pd.add_argument("--grid", type=int)
    pd.add_argument("--penalty", type=float)
    pd.add_argument("--direct-iters", dest="direct_iters", type=int)
    pd.add_argument("--from-csv", dest="from_csv", help="classify an existing t,u,x CSV")
    pd.add_argument("--min-arc-len", dest="min_arc_len", type=float)
    pd.add_argument("--out")
    pd.add_argument("--config")
    pd.set_defaults(func=cmd_detect)

    pv = sub.add_parser("verify", help="second-order positivity certificate")
    pv.add_argument("--problem")
    pv.add_argument("--omega", help="solved omega.json (default <out>/omega.json)")
    pv.add_argument("--nodes", type=int, help="grid cells per arc (default 200)")
    pv.add_argument("--out")
    pv.add_argument("--config")
    pv.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ArcshootError as exc:
        print(f"{args.command}: error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"{args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
