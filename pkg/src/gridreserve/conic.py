"""Standard-form conic program IR and its solver contract.

A program is ``min c'x`` subject to sparse equalities ``Ax = b``, variable
bounds ``lo <= x <= hi`` and second-order cones ``||x[i1..id]||_2 <= x[t]``.
Builders only ever append; rows and cones are never rewritten.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import clarabel
import numpy as np
import scipy.sparse as sp

from .errors import DomainError, DuplicateName, NumericalError, UnknownIndex

INF = math.inf

OPTIMAL = "Optimal"
INFEASIBLE = "Infeasible"
UNBOUNDED = "Unbounded"
NUMERICAL_ERROR = "NumericalError"

DEFAULT_TOL_FEAS = 1e-7
DEFAULT_TOL_GAP = 1e-7


class ConicProgram:
    def __init__(self):
        self.names: dict[str, int] = {}
        self.var_names: list[str] = []
        self.c: list[float] = []
        self.lo: list[float] = []
        self.hi: list[float] = []
        self._rows: list[int] = []
        self._cols: list[int] = []
        self._vals: list[float] = []
        self.b: list[float] = []
        self.row_names: list[str] = []
        self.cones: list[tuple[int, ...]] = []
        self._cone_heads: set[int] = set()

    @property
    def n(self) -> int:
        return len(self.var_names)

    @property
    def m(self) -> int:
        return len(self.b)

    def add_var(self, name: str, lo: float = -INF, hi: float = INF, cost: float = 0.0) -> int:
        if name in self.names:
            raise DuplicateName(f"variable {name!r} already registered")
        idx = len(self.var_names)
        self.names[name] = idx
        self.var_names.append(name)
        self.lo.append(float(lo))
        self.hi.append(float(hi))
        self.c.append(float(cost))
        return idx

    def idx(self, name: str) -> int:
        try:
            return self.names[name]
        except KeyError:
            raise UnknownIndex(f"no variable named {name!r}") from None

    def _check(self, j: int) -> None:
        if not 0 <= j < len(self.var_names):
            raise UnknownIndex(f"variable index {j} not registered")

    def add_eq(self, coeffs: Mapping[int, float] | Iterable[tuple[int, float]], rhs: float,
               name: str | None = None) -> int:
        items = coeffs.items() if isinstance(coeffs, Mapping) else coeffs
        row = len(self.b)
        for j, v in items:
            self._check(j)
            if v != 0.0:
                self._rows.append(row)
                self._cols.append(j)
                self._vals.append(float(v))
        self.b.append(float(rhs))
        self.row_names.append(name if name is not None else f"eq{row}")
        return row

    def add_le(self, coeffs: Mapping[int, float], rhs: float, name: str | None = None) -> int:
        """``a'x <= rhs`` as an equality with a fresh nonnegative slack."""
        label = name if name is not None else f"le{len(self.b)}"
        s = self.add_var(f"slack:{label}", 0.0, INF)
        items = dict(coeffs)
        items[s] = items.get(s, 0.0) + 1.0
        return self.add_eq(items, rhs, label)

    def add_soc(self, indices: Iterable[int]) -> int:
        idx = tuple(int(i) for i in indices)
        if len(idx) < 2:
            raise ValueError("a cone needs a head and at least one member")
        for j in idx:
            self._check(j)
        if idx[0] in self._cone_heads:
            raise DuplicateName(f"variable {self.var_names[idx[0]]!r} already heads a cone")
        self._cone_heads.add(idx[0])
        self.cones.append(idx)
        return len(self.cones) - 1

    def add_cost(self, j: int, coef: float) -> None:
        self._check(j)
        self.c[j] += float(coef)

    def A(self) -> sp.csr_matrix:
        return sp.csr_matrix(
            (self._vals, (self._rows, self._cols)), shape=(len(self.b), len(self.var_names))
        )

    def arrays(self):
        return (np.array(self.c), self.A(), np.array(self.b), np.array(self.lo), np.array(self.hi))


@dataclass
class SolveReport:
    status: str
    x: np.ndarray
    objective: float
    primal_residual: float
    bound_violation: float
    cone_violation: float
    iterations: int = 0
    eq_duals: np.ndarray = field(default_factory=lambda: np.zeros(0))
    lo_duals: np.ndarray = field(default_factory=lambda: np.zeros(0))
    hi_duals: np.ndarray = field(default_factory=lambda: np.zeros(0))
    cone_duals: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL

    def raise_for_status(self) -> None:
        if self.status == NUMERICAL_ERROR:
            raise NumericalError(
                f"solver failed after {self.iterations} iterations "
                f"(worst residual {self.worst_residual:.3g})",
                self.iterations, self.worst_residual,
            )

    @property
    def worst_residual(self) -> float:
        return max(self.primal_residual, self.bound_violation, self.cone_violation)


def residuals(prog: ConicProgram, x: np.ndarray) -> tuple[float, float, float]:
    """Infinity-norm equality residual, bound violation and cone shortfall at ``x``."""
    _, A, b, lo, hi = prog.arrays()
    r_eq = float(np.max(np.abs(A @ x - b))) if len(b) else 0.0
    with np.errstate(invalid="ignore"):
        r_bd = float(max(np.max(lo - x, initial=0.0), np.max(x - hi, initial=0.0)))
    r_cone = 0.0
    for cone in prog.cones:
        r_cone = max(r_cone, float(np.linalg.norm(x[list(cone[1:])]) - x[cone[0]]))
    return r_eq, r_bd, r_cone


def solve(prog: ConicProgram, tol_feas: float = DEFAULT_TOL_FEAS,
          tol_gap: float = DEFAULT_TOL_GAP, max_iter: int = 200) -> SolveReport:
    """Solve with the Clarabel interior-point method.

    ``Optimal`` is only reported when all three residuals of the returned point
    are within ``tol_feas``.
    """
    n = prog.n
    c, A_eq, b_eq, lo, hi = prog.arrays()
    pinned = np.isfinite(lo) & (lo == hi)
    lo_rows = np.flatnonzero(np.isfinite(lo) & ~pinned)
    hi_rows = np.flatnonzero(np.isfinite(hi) & ~pinned)
    pin_rows = np.flatnonzero(pinned)

    blocks = [A_eq]
    rhs = [b_eq]
    blocks.append(sp.csr_matrix((np.ones(len(pin_rows)), (np.arange(len(pin_rows)), pin_rows)),
                                shape=(len(pin_rows), n)))
    rhs.append(lo[pin_rows])
    n_zero = A_eq.shape[0] + len(pin_rows)
    blocks.append(sp.csr_matrix((-np.ones(len(lo_rows)), (np.arange(len(lo_rows)), lo_rows)),
                                shape=(len(lo_rows), n)))
    rhs.append(-lo[lo_rows])
    blocks.append(sp.csr_matrix((np.ones(len(hi_rows)), (np.arange(len(hi_rows)), hi_rows)),
                                shape=(len(hi_rows), n)))
    rhs.append(hi[hi_rows])
    n_nonneg = len(lo_rows) + len(hi_rows)
    cone_sizes = []
    for cone in prog.cones:
        k = len(cone)
        blocks.append(sp.csr_matrix((-np.ones(k), (np.arange(k), list(cone))), shape=(k, n)))
        rhs.append(np.zeros(k))
        cone_sizes.append(k)
    A = sp.vstack(blocks, format="csc")
    b = np.concatenate(rhs)
    cones = []
    if n_zero:
        cones.append(clarabel.ZeroConeT(n_zero))
    if n_nonneg:
        cones.append(clarabel.NonnegativeConeT(n_nonneg))
    cones.extend(clarabel.SecondOrderConeT(k) for k in cone_sizes)

    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.max_iter = max_iter
    settings.tol_feas = min(1e-9, tol_feas * 1e-2)
    settings.tol_gap_abs = min(1e-9, tol_gap * 1e-2)
    settings.tol_gap_rel = min(1e-9, tol_gap * 1e-2)
    settings.max_threads = 1
    P = sp.csc_matrix((n, n))
    if A.shape[0] == 0:
        # Clarabel rejects an empty constraint matrix; a free program is only
        # bounded when its objective is zero.
        if np.any(c != 0):
            return SolveReport(UNBOUNDED, np.full(n, np.nan), -INF, np.nan, np.nan, np.nan)
        return SolveReport(OPTIMAL, np.zeros(n), 0.0, 0.0, 0.0, 0.0)
    sol = clarabel.DefaultSolver(P, c, A, b, cones, settings).solve()
    status_name = str(sol.status)
    x = np.array(sol.x, dtype=float)
    z = np.array(sol.z, dtype=float)
    r_eq, r_bd, r_cone = residuals(prog, x)
    worst = max(r_eq, r_bd, r_cone)
    if status_name in ("Solved", "AlmostSolved"):
        status = OPTIMAL if worst <= tol_feas else NUMERICAL_ERROR
    elif status_name in ("PrimalInfeasible", "AlmostPrimalInfeasible"):
        status = INFEASIBLE
    elif status_name in ("DualInfeasible", "AlmostDualInfeasible"):
        status = UNBOUNDED
    else:
        status = NUMERICAL_ERROR
    obj = float(c @ x) if status == OPTIMAL else (-INF if status == UNBOUNDED else math.nan)

    m_eq = A_eq.shape[0]
    eq_duals = z[:m_eq]
    lo_duals = np.zeros(n)
    hi_duals = np.zeros(n)
    off = n_zero
    lo_duals[lo_rows] = z[off:off + len(lo_rows)]
    off += len(lo_rows)
    hi_duals[hi_rows] = z[off:off + len(hi_rows)]
    off += len(hi_rows)
    # pinned variables carry their multiplier in the zero-cone block
    pin_dual = z[m_eq:m_eq + len(pin_rows)]
    lo_duals[pin_rows] = np.maximum(pin_dual, 0.0)
    hi_duals[pin_rows] = np.maximum(-pin_dual, 0.0)
    cone_duals = []
    for k in cone_sizes:
        cone_duals.append(z[off:off + k])
        off += k
    return SolveReport(
        status, x, obj, r_eq, r_bd, r_cone, int(sol.iterations),
        eq_duals, lo_duals, hi_duals, cone_duals,
    )


def relaxation_gap(upper_obj: float, lower_obj: float, tol: float = 1e-9) -> float:
    """Percent gap ``(upper - lower) / upper * 100`` between an upper and lower bound."""
    if upper_obj == 0:
        raise DomainError("upper bound objective must be nonzero")
    if upper_obj < lower_obj - tol * max(1.0, abs(upper_obj)):
        raise DomainError(f"upper bound {upper_obj} is below lower bound {lower_obj}")
    return (upper_obj - lower_obj) / upper_obj * 100.0


def dump_lp(prog: ConicProgram) -> str:
    """Plain-text standard-form listing, one item per line."""
    lines = [f"* conic program: {prog.n} variables, {prog.m} equalities, {len(prog.cones)} cones",
             "MINIMIZE"]
    for j, cj in enumerate(prog.c):
        if cj != 0.0:
            lines.append(f"  {cj:+.17g} {prog.var_names[j]}")
    lines.append("EQUALITIES")
    A = prog.A().tocsr()
    for i in range(prog.m):
        lo, hi = A.indptr[i], A.indptr[i + 1]
        terms = " ".join(f"{A.data[k]:+.17g} {prog.var_names[A.indices[k]]}" for k in range(lo, hi))
        lines.append(f"  {prog.row_names[i]}: {terms} = {prog.b[i]:.17g}")
    lines.append("BOUNDS")
    for j in range(prog.n):
        lines.append(f"  {prog.lo[j]:.17g} <= {prog.var_names[j]} <= {prog.hi[j]:.17g}")
    lines.append("CONES")
    for cone in prog.cones:
        members = ", ".join(prog.var_names[j] for j in cone[1:])
        lines.append(f"  ||({members})|| <= {prog.var_names[cone[0]]}")
    lines.append("END")
    return "\n".join(lines) + "\n"
