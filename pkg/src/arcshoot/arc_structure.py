"""Arc sequences: the hypothesized bang/constrained/singular structure.

Provides the :class:`ArcStructure` value type, index-set bookkeeping and
:func:`detect_structure`, which classifies a discretized trajectory (from a
direct method or from samples) into an ordered arc list with switching-time
guesses.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigurationError, StructureDetectionError
from .problem_def import ProblemDef


class ArcKind(enum.Enum):
    BMinus = "B-"
    BPlus = "B+"
    Constrained = "C"
    Singular = "S"

    @classmethod
    def from_token(cls, token: str) -> "ArcKind":
        for kind in cls:
            if kind.value == token:
                return kind
        raise ConfigurationError(f"unknown arc token {token!r}, use B-, B+, C or S")


@dataclass(frozen=True)
class ArcStructure:
    """Ordered arc kinds with interior switching-time guesses.

    ``tau`` holds the N-1 interior switching times, strictly increasing in
    (0, T).  Adjacent arcs must have distinct kinds.
    """

    kinds: tuple
    tau: tuple

    def __post_init__(self):
        kinds = tuple(self.kinds)
        tau = tuple(float(t) for t in self.tau)
        object.__setattr__(self, "kinds", kinds)
        object.__setattr__(self, "tau", tau)
        if len(kinds) < 1:
            raise ConfigurationError("structure needs at least one arc")
        if len(tau) != len(kinds) - 1:
            raise ConfigurationError(
                f"{len(kinds)} arcs need {len(kinds) - 1} switching times, got {len(tau)}"
            )
        for a, b in zip(kinds, kinds[1:]):
            if a == b:
                raise ConfigurationError(f"adjacent arcs must differ, got {a.value}{b.value}")
        if any(t2 <= t1 for t1, t2 in zip(tau, tau[1:])):
            raise ConfigurationError(f"switching times must be strictly increasing, got {tau}")

    @property
    def N(self) -> int:
        return len(self.kinds)

    def validate(self, prob: ProblemDef) -> None:
        """Check the structure against a problem (bounds present, times inside (0,T))."""
        if self.tau and (self.tau[0] <= 0.0 or self.tau[-1] >= prob.T):
            raise ConfigurationError(
                f"switching times must lie strictly inside (0, {prob.T}), got {self.tau}"
            )
        for kind in self.kinds:
            if kind is ArcKind.BMinus and prob.u_min is None:
                raise ConfigurationError("B- arc requires a finite lower control bound")
            if kind is ArcKind.BPlus and prob.u_max is None:
                raise ConfigurationError("B+ arc requires a finite upper control bound")

    def boundaries(self, T: float) -> np.ndarray:
        """Full switching-time vector (0, tau_1, ..., tau_{N-1}, T)."""
        return np.concatenate(([0.0], np.asarray(self.tau, dtype=float), [T]))

    def with_tau(self, tau) -> "ArcStructure":
        """Same kinds with replaced switching times (e.g. solved values)."""
        return ArcStructure(self.kinds, tuple(float(t) for t in tau))

    def tokens(self) -> list:
        return [k.value for k in self.kinds]

    @classmethod
    def from_tokens(cls, tokens: Sequence[str], tau: Sequence[float]) -> "ArcStructure":
        return cls(tuple(ArcKind.from_token(t.strip()) for t in tokens), tuple(tau))


def index_sets(s: ArcStructure) -> tuple:
    """Partition {1, ..., N} into (I_S, I_C, I_Bminus, I_Bplus), 1-based and sorted."""
    by_kind = {ArcKind.Singular: [], ArcKind.Constrained: [], ArcKind.BMinus: [], ArcKind.BPlus: []}
    for i, kind in enumerate(s.kinds, start=1):
        by_kind[kind].append(i)
    return (
        by_kind[ArcKind.Singular],
        by_kind[ArcKind.Constrained],
        by_kind[ArcKind.BMinus],
        by_kind[ArcKind.BPlus],
    )


@dataclass
class DetectTolerances:
    """Thresholds for trajectory classification.

    ``None`` entries are replaced by the scale-aware defaults: tol_u =
    1e-3 (u_max - u_min) (1e-3 absolute with an absent bound), tol_g =
    1e-4 (1 + max |g|) over the grid, min_arc_len = 0.02 T.
    """

    tol_u: Optional[float] = None
    tol_g: Optional[float] = None
    min_arc_len: Optional[float] = None


def detect_structure(
    prob: ProblemDef,
    grid: np.ndarray,
    u: np.ndarray,
    x: np.ndarray,
    tols: Optional[DetectTolerances] = None,
) -> ArcStructure:
    """Classify a sampled trajectory into an arc sequence with tau guesses.

    Per grid point: control at a bound wins over an active constraint
    (overlap signals a bang point), then g >= -tol_g marks a constrained
    point, anything else is singular.  The constraint test is one-sided
    because singular points require g < 0 strictly, while direct-method
    output sits slightly on the infeasible side of an active constraint.
    Runs shorter than min_arc_len are merged into the longer neighbouring
    run; switching-time guesses sit at transition midpoints.
    """
    grid = np.asarray(grid, dtype=float)
    u = np.asarray(u, dtype=float)
    x = np.asarray(x, dtype=float)
    if grid.size == 0:
        raise StructureDetectionError("empty grid")
    if grid.ndim != 1 or np.any(np.diff(grid) <= 0):
        raise StructureDetectionError("grid must be 1-D and strictly increasing")
    if u.shape != grid.shape or x.shape != (grid.size, prob.n):
        raise StructureDetectionError(
            f"samples misaligned: grid {grid.shape}, u {u.shape}, x {x.shape}"
        )
    tols = tols or DetectTolerances()

    if prob.u_min is not None and prob.u_max is not None:
        tol_u = tols.tol_u if tols.tol_u is not None else 1e-3 * (prob.u_max - prob.u_min)
    else:
        tol_u = tols.tol_u if tols.tol_u is not None else 1e-3
    gvals = np.array([float(prob.g(xi)) for xi in x])
    tol_g = tols.tol_g if tols.tol_g is not None else 1e-4 * (1.0 + float(np.max(np.abs(gvals))))
    min_len = tols.min_arc_len if tols.min_arc_len is not None else 0.02 * prob.T

    raw = np.empty(grid.size, dtype=object)
    for i in range(grid.size):
        if prob.u_min is not None and abs(u[i] - prob.u_min) <= tol_u:
            raw[i] = ArcKind.BMinus
        elif prob.u_max is not None and abs(u[i] - prob.u_max) <= tol_u:
            raw[i] = ArcKind.BPlus
        elif gvals[i] >= -tol_g:
            raw[i] = ArcKind.Constrained
        else:
            raw[i] = ArcKind.Singular

    runs = _runs(raw)
    runs = _merge_short_runs(runs, grid, min_len)

    kinds = tuple(kind for kind, _, _ in runs)
    tau = tuple(
        0.5 * (grid[runs[r][2]] + grid[runs[r + 1][1]]) for r in range(len(runs) - 1)
    )
    try:
        struct = ArcStructure(kinds, tau)
        struct.validate(prob)
    except ConfigurationError as exc:
        raise StructureDetectionError(str(exc), raw=raw) from exc
    return struct


def _runs(raw: np.ndarray) -> list:
    """Contiguous (kind, first_index, last_index) runs of the classification."""
    runs = []
    start = 0
    for i in range(1, raw.size + 1):
        if i == raw.size or raw[i] != raw[start]:
            runs.append((raw[start], start, i - 1))
            start = i
    return runs


def _merge_short_runs(runs: list, grid: np.ndarray, min_len: float) -> list:
    runs = list(runs)
    while len(runs) > 1:
        durations = [grid[e] - grid[s] for _, s, e in runs]
        shortest = int(np.argmin(durations))
        if durations[shortest] >= min_len:
            break
        kind, s, e = runs[shortest]
        left = runs[shortest - 1] if shortest > 0 else None
        right = runs[shortest + 1] if shortest + 1 < len(runs) else None
        if left is None:
            absorber = shortest + 1
        elif right is None:
            absorber = shortest - 1
        else:
            absorber = (
                shortest - 1
                if grid[left[2]] - grid[left[1]] >= grid[right[2]] - grid[right[1]]
                else shortest + 1
            )
        ak, as_, ae = runs[absorber]
        lo, hi = min(s, as_), max(e, ae)
        runs[min(shortest, absorber)] = (ak, lo, hi)
        del runs[max(shortest, absorber)]
        runs = _coalesce(runs)
    return runs


def _coalesce(runs: list) -> list:
    out = [runs[0]]
    for kind, s, e in runs[1:]:
        pk, ps, pe = out[-1]
        if kind == pk:
            out[-1] = (pk, ps, e)
        else:
            out.append((kind, s, e))
    return out


def read_trajectory_csv(path) -> tuple:
    """Read a `t,u,x1,...,xn` trajectory file; returns (t, u, x) arrays."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if len(header) < 3 or header[0].strip() != "t" or header[1].strip() != "u":
            raise ConfigurationError(f"expected header t,u,x1,...,xn in {path}, got {header}")
        rows = [[float(v) for v in row] for row in reader if row]
    data = np.asarray(rows, dtype=float)
    if data.size == 0:
        raise StructureDetectionError(f"no samples in {path}")
    return data[:, 0], data[:, 1], data[:, 2:]


def write_trajectory_csv(path, t, u, x) -> None:
    """Write the `t,u,x1,...,xn` format consumed by detect_structure."""
    t = np.asarray(t, dtype=float)
    u = np.asarray(u, dtype=float)
    x = np.asarray(x, dtype=float)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "u"] + [f"x{i + 1}" for i in range(x.shape[1])])
        for i in range(t.size):
            writer.writerow(
                [f"{t[i]:.9g}", f"{u[i]:.9g}"] + [f"{v:.9g}" for v in x[i]]
            )
