"""Gaussian chance-constrained reserves and sample VaR/CVaR estimators."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import conic
from .errors import DomainError, InsufficientSamples, NotPSD, ParseError, ValidationError
from .netmodel import GridCase
from .robust import finish, reserve_program

# Wichura (1988) algorithm AS241, PPND16: relative accuracy about 1e-16.
_A = (3.387132872796366608, 133.14166789178437745, 1971.5909503065514427,
      13731.693765509461125, 45921.953931549871457, 67265.770927008700853,
      33430.575583588128105, 2509.0809287301226727)
_B = (1.0, 42.313330701600911252, 687.1870074920579083, 5394.1960214247511077,
      21213.794301586595867, 39307.89580009271061, 28729.085735721942674,
      5226.495278852545925)
_C = (1.42343711074968357734, 4.6303378461565452959, 5.7694972214606914055,
      3.64784832476320460504, 1.27045825245236838258, 0.24178072517745061177,
      0.0227238449892691845833, 7.7454501427834140764e-4)
_D = (1.0, 2.05319162663775882187, 1.6763848301838038494, 0.68976733498510000455,
      0.14810397642748007459, 0.0151986665636164571966, 5.475938084995344946e-4,
      1.05075007164441684324e-9)
_E = (6.6579046435011037772, 5.4637849111641143699, 1.7848265399172913358,
      0.29656057182850489123, 0.026532189526576123093, 0.0012426609473880784386,
      2.71155556874348757815e-5, 2.01033439929228813265e-7)
_F = (1.0, 0.59983220655588793769, 0.13692988092273580531, 0.0148753612908506148525,
      7.868691311456132591e-4, 1.8463183175100546818e-5, 1.4215117583164458887e-7,
      2.04426310338993978564e-15)


def _poly(c, x):
    acc = 0.0
    for coef in reversed(c):
        acc = acc * x + coef
    return acc


def norm_ppf(p: float) -> float:
    """Standard normal quantile."""
    if not 0.0 < p < 1.0:
        raise DomainError(f"probability {p} outside (0, 1)")
    q = p - 0.5
    if abs(q) <= 0.425:
        r = 0.180625 - q * q
        return q * _poly(_A, r) / _poly(_B, r)
    r = p if q < 0 else 1.0 - p
    r = math.sqrt(-math.log(r))
    if r <= 5.0:
        r -= 1.6
        val = _poly(_C, r) / _poly(_D, r)
    else:
        r -= 5.0
        val = _poly(_E, r) / _poly(_F, r)
    return -val if q < 0 else val


def check_psd(S: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    S = np.atleast_2d(np.asarray(S, dtype=float))
    if S.shape[0] != S.shape[1] or not np.allclose(S, S.T, atol=tol):
        raise NotPSD("covariance must be a symmetric square matrix")
    eig = np.linalg.eigvalsh(S) if S.size else np.zeros(0)
    if eig.size and eig.min() < -tol * max(1.0, float(np.abs(eig).max())):
        raise NotPSD(f"covariance has negative eigenvalue {eig.min():.3g}")
    return S


def gaussian_reserve_row(A, sigma, alpha: float) -> float:
    """Safety margin ``phi^-1(1 - alpha) * ||A Sigma^(1/2)||_2`` for one aggregate row."""
    if not 0.0 < alpha <= 0.5:
        raise DomainError(f"alpha {alpha} outside (0, 0.5]")
    S = check_psd(sigma)
    a = np.atleast_1d(np.asarray(A, dtype=float))
    spread = math.sqrt(max(float(a @ S @ a), 0.0))
    return norm_ppf(1.0 - alpha) * spread if alpha < 0.5 else 0.0


@dataclass(frozen=True)
class GaussianModel:
    mean: np.ndarray
    cov: np.ndarray
    rows: tuple[tuple[str, np.ndarray], ...]
    labels: tuple[str, ...] = ()

    def __post_init__(self):
        m = len(self.mean)
        if self.cov.shape != (m, m):
            raise ValidationError("covariance shape does not match the mean")
        check_psd(self.cov)
        for name, a in self.rows:
            if name != "balance":
                raise ValidationError(f"unsupported chance row {name!r}; only 'balance' is modelled")
            if len(a) != m:
                raise ValidationError("aggregation row length does not match the mean")

    @classmethod
    def from_dict(cls, doc) -> "GaussianModel":
        try:
            rows = tuple((r["constraint"], np.asarray(r["A"], float)) for r in doc["rows"])
            return cls(np.asarray(doc["mean"], float), np.atleast_2d(np.asarray(doc["cov"], float)),
                       rows, tuple(doc.get("labels", ())))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"malformed gaussian model: {exc}") from exc

    def requirements(self, alpha: float) -> list[tuple[float, float]]:
        """Per row, the (up, down) aggregate reserve needed at two-sided level ``alpha``."""
        out = []
        for _, a in self.rows:
            mu = float(a @ self.mean)
            margin = gaussian_reserve_row(a, self.cov, alpha / 2)
            out.append((max(mu + margin, 0.0), max(-mu + margin, 0.0)))
        return out


def load_gaussian(path) -> GaussianModel:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"cannot read gaussian model {path}: {exc}") from exc
    return GaussianModel.from_dict(doc)


def _solve_with_requirements(case: GridCase, up_req, dn_req, model: str):
    prog, nv, dv, Rup, Rdn, terms = reserve_program(case, model)
    devs = sorted({d for d, _ in Rup})
    for k in range(case.K):
        if up_req[k] > 0:
            prog.add_le({Rup[d, k]: -1.0 for d in devs}, -float(up_req[k]), f"req_up[{k}]")
        if dn_req[k] > 0:
            prog.add_le({Rdn[d, k]: -1.0 for d in devs}, -float(dn_req[k]), f"req_dn[{k}]")
    report = conic.solve(prog)
    report.raise_for_status()
    if not report.ok:
        from .errors import InfeasibleCase
        raise InfeasibleCase(f"case {case.name}: reserve requirement cannot be met", "reserve")
    return finish(case, prog, nv, dv, Rup, Rdn, terms, report)


def solve_chance(case: GridCase, model: GaussianModel, alpha: float, network: str = "linear"):
    """Dispatch with aggregate reserves covering each step's balance row with probability 1 - alpha.

    Both tails share ``alpha`` equally.
    """
    if not 0.0 < alpha < 0.5:
        raise DomainError(f"alpha {alpha} outside (0, 0.5)")
    reqs = model.requirements(alpha)
    up = max((u for u, _ in reqs), default=0.0)
    dn = max((d for _, d in reqs), default=0.0)
    return _solve_with_requirements(case, np.full(case.K, up), np.full(case.K, dn), network)


@dataclass(frozen=True)
class RiskEstimate:
    var_value: float
    cvar_value: float
    level: float
    n: int


def estimate_var_cvar(samples, rho: float) -> RiskEstimate:
    """Empirical VaR (higher quantile) and CVaR (mean of samples at or beyond VaR)."""
    if not 0.0 < rho <= 1.0:
        raise DomainError(f"rho {rho} outside (0, 1]")
    s = np.asarray(samples, dtype=float).ravel()
    if not np.all(np.isfinite(s)):
        raise DomainError("samples must be finite")
    need = math.ceil(1.0 / rho - 1e-12)
    if s.size < need:
        raise InsufficientSamples(f"{s.size} samples, need at least {need} at rho={rho}")
    var = float(np.quantile(s, 1.0 - rho, method="higher"))
    return RiskEstimate(var, float(np.mean(s[s >= var])), rho, int(s.size))


def cvar_requirements(deficits, rho: float) -> tuple[float, float]:
    """Up/down aggregate reserve sized by CVaR at ``rho/2`` on each tail."""
    d = np.asarray(deficits, dtype=float)
    up = estimate_var_cvar(d, rho / 2).cvar_value
    dn = estimate_var_cvar(-d, rho / 2).cvar_value
    return max(up, 0.0), max(dn, 0.0)


def solve_cvar(case: GridCase, samples, A, rho: float, network: str = "linear"):
    """Reserves sized to the CVaR of the sampled aggregate deficit ``A @ zeta``."""
    Z = np.atleast_2d(np.asarray(samples, dtype=float))
    up, dn = cvar_requirements(Z @ np.asarray(A, float), rho)
    return _solve_with_requirements(case, np.full(case.K, up), np.full(case.K, dn), network)
