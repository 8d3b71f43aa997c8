"""Wasserstein ambiguity sets from historical samples and their vertex counterpart."""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .errors import DomainError, NoFeasibleSigma, NonConvergence, ParseError, ValidationError, \
    VertexBudgetExceeded
from .netmodel import GridCase
from .robust import MAX_DIMS, DisturbanceSpec, solve_robust

EIG_FLOOR = 1e-10
ALPHA_RANGE = (1e-6, 50.0)
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def sqrtm_psd(S: np.ndarray, inverse: bool = False) -> np.ndarray:
    vals, vecs = np.linalg.eigh(np.atleast_2d(S))
    vals = np.maximum(vals, EIG_FLOOR)
    d = vals ** (-0.5 if inverse else 0.5)
    return (vecs * d) @ vecs.T


@dataclass(frozen=True)
class SampleSet:
    samples: np.ndarray
    labels: tuple[str, ...] = ()

    def __post_init__(self):
        Z = np.atleast_2d(np.asarray(self.samples, dtype=float))
        if Z.shape[0] < 2:
            raise ValidationError("a sample set needs at least two samples")
        if not np.all(np.isfinite(Z)):
            raise ValidationError("samples must be finite")
        object.__setattr__(self, "samples", Z)

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    @property
    def m(self) -> int:
        return self.samples.shape[1]

    @property
    def mean(self) -> np.ndarray:
        return self.samples.mean(axis=0)

    @property
    def cov(self) -> np.ndarray:
        return np.atleast_2d(np.cov(self.samples, rowvar=False))

    @property
    def whitened(self) -> np.ndarray:
        return (self.samples - self.mean) @ sqrtm_psd(self.cov, inverse=True)


def load_samples(path) -> SampleSet:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        Z = np.asarray(doc["samples"], dtype=float)
        labels = tuple(doc.get("labels", ()))
        dims = int(doc.get("dims", Z.shape[1] if Z.ndim == 2 else 1))
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"cannot read sample file {path}: {exc}") from exc
    Z = Z.reshape(len(Z), -1)
    if Z.shape[1] != dims:
        raise ValidationError(f"sample file {path}: rows have {Z.shape[1]} entries, dims is {dims}")
    return SampleSet(Z, labels)


def c_objective(alpha: float, d2: np.ndarray) -> float:
    """``sqrt((1 + log mean exp(alpha d^2)) / (2 alpha))`` evaluated stably."""
    lse = logsumexp(alpha * d2) - math.log(len(d2))
    return math.sqrt(max(1.0 + lse, 0.0) / (2.0 * alpha))


def estimate_C(samples, alpha_range=ALPHA_RANGE, tol: float = 1e-12, max_iter: int = 200) -> float:
    """Light-tail constant: twice the minimum over alpha of :func:`c_objective`.

    The objective is quasiconvex in alpha, so a golden-section search on
    ``log(alpha)`` finds the minimum over ``alpha_range``.
    """
    Z = np.atleast_2d(np.asarray(samples, dtype=float))
    if Z.shape[0] < 1:
        raise ValidationError("estimate_C needs at least one sample")
    d = np.abs(Z - Z.mean(axis=0)).sum(axis=1)
    if not np.any(d > 0):
        return 0.0  # infimum approached as alpha grows without bound
    d2 = d * d
    f = lambda t: c_objective(math.exp(t), d2)  # noqa: E731
    a, b = math.log(alpha_range[0]), math.log(alpha_range[1])
    x1, x2 = b - _GOLDEN * (b - a), a + _GOLDEN * (b - a)
    f1, f2 = f(x1), f(x2)
    for _ in range(max_iter):
        if b - a <= tol:
            break
        if f1 <= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - _GOLDEN * (b - a)
            f1 = f(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + _GOLDEN * (b - a)
            f2 = f(x2)
    else:
        raise NonConvergence(f"golden-section search did not converge in {max_iter} iterations")
    return 2.0 * min(f1, f2, f(a), f(b))


def wasserstein_radius(C: float, N: int, rho: float) -> float:
    if not 0.0 < rho < 1.0:
        raise DomainError(f"rho {rho} outside (0, 1)")
    if N < 1:
        raise DomainError("N must be at least 1")
    if C < 0:
        raise DomainError("C must be nonnegative")
    return C * math.sqrt(math.log(1.0 / rho) / N)


def h(sigma: float, lam: float, vnorms: np.ndarray, eps: float) -> float:
    """``lam*eps + mean((1 - lam*(sigma - |v|_inf)^+)^+)``."""
    gap = np.maximum(sigma - vnorms, 0.0)
    return float(lam * eps + np.mean(np.maximum(1.0 - lam * gap, 0.0)))


def inner_min(sigma: float, vnorms: np.ndarray, eps: float) -> tuple[float, float]:
    """Exact ``min_{lam >= 0} h``: h is convex piecewise-linear with kinks at 1/(sigma - a)."""
    gaps = sigma - vnorms
    cands = np.concatenate([[0.0], 1.0 / gaps[gaps > 0]])
    vals = [h(sigma, lam, vnorms, eps) for lam in cands]
    i = int(np.argmin(vals))
    return vals[i], float(cands[i])


def solve_sigma(whitened, eps: float, rho: float, sigma_max: float | None = None,
                tol: float = 1e-8, max_iter: int = 200) -> tuple[float, float]:
    """Smallest certified sigma with ``min_lam h(sigma, lam) <= rho``; returns ``(sigma, lam)``."""
    if eps < 0:
        raise DomainError("epsilon must be nonnegative")
    if not 0.0 < rho < 1.0:
        raise DomainError(f"rho {rho} outside (0, 1)")
    V = np.atleast_2d(np.asarray(whitened, dtype=float))
    vnorms = np.max(np.abs(V), axis=1)
    if sigma_max is None:
        # at lam = 1/(sigma - max|v|), h <= eps/(sigma - max|v|), so this sigma always certifies
        vmax = float(vnorms.max())
        sigma_max = max(10.0 * vmax, vmax + 2.0 * eps / rho + 1.0)
    val, lam = inner_min(sigma_max, vnorms, eps)
    if val > rho:
        raise NoFeasibleSigma(f"h({sigma_max:.6g}) = {val:.6g} exceeds rho = {rho}")
    lo, hi, best = 0.0, float(sigma_max), lam
    for _ in range(max_iter):
        if hi - lo <= tol:
            return hi, best
        mid = 0.5 * (lo + hi)
        v, l_mid = inner_min(mid, vnorms, eps)
        if v <= rho:
            hi, best = mid, l_mid
        else:
            lo = mid
    raise NonConvergence("sigma bisection did not converge")


def vertex_set(sigma: float, mu, cov) -> np.ndarray:
    """Images ``cov^(1/2) v + mu`` of the hypercube corners ``v in {+sigma, -sigma}^m``."""
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    m = len(mu)
    if m > MAX_DIMS:
        raise VertexBudgetExceeded(f"{m} dimensions exceed the limit of {MAX_DIMS}")
    if sigma == 0:
        return mu[None, :].copy()
    root = sqrtm_psd(np.atleast_2d(cov))
    signs = np.array(list(itertools.product([1.0, -1.0], repeat=m)))
    return sigma * signs @ root.T + mu


@dataclass
class AmbiguitySet:
    C: float
    epsilon: float
    rho: float
    sigma: float
    lam: float
    vertices: np.ndarray
    mu: np.ndarray
    cov: np.ndarray
    n: int
    beta: float | None = None
    labels: tuple[str, ...] = ()

    def certificate(self, whitened) -> float:
        vn = np.max(np.abs(np.atleast_2d(whitened)), axis=1)
        return h(self.sigma, self.lam, vn, self.epsilon)

    def to_dict(self) -> dict:
        return {
            "C": self.C, "epsilon": self.epsilon, "rho": self.rho, "beta": self.beta,
            "sigma": self.sigma, "lambda": self.lam, "n": self.n, "labels": list(self.labels),
            "mean": self.mu.tolist(), "cov": self.cov.tolist(), "vertices": self.vertices.tolist(),
        }

    @classmethod
    def from_dict(cls, doc) -> "AmbiguitySet":
        return cls(doc["C"], doc["epsilon"], doc["rho"], doc["sigma"], doc["lambda"],
                   np.asarray(doc["vertices"], float), np.asarray(doc["mean"], float),
                   np.asarray(doc["cov"], float), int(doc["n"]), doc.get("beta"),
                   tuple(doc.get("labels", ())))


def build_ambiguity_set(samples: SampleSet, rho: float, beta: float | None = None,
                        sigma_max: float | None = None) -> AmbiguitySet:
    """C on whitened samples, epsilon(N), certified sigma and the 2^m vertex set.

    ``beta`` switches the radius to the ``log(1/(1-beta))`` confidence form.
    """
    if not 0.0 < rho < 1.0:
        raise DomainError(f"rho {rho} outside (0, 1)")
    V = samples.whitened
    C = estimate_C(V)
    eps = wasserstein_radius(C, samples.n, rho if beta is None else 1.0 - beta)
    sigma, lam = solve_sigma(V, eps, rho, sigma_max)
    U = vertex_set(sigma, samples.mean, samples.cov)
    return AmbiguitySet(C, eps, rho, sigma, lam, U, samples.mean, samples.cov, samples.n, beta,
                        samples.labels)


def solve_dro(case: GridCase, amb: AmbiguitySet, mapping: DisturbanceSpec, model: str = "linear"):
    """One conic solve with a banded recourse at every vertex of the ambiguity set."""
    if mapping.m != amb.vertices.shape[1]:
        raise ValidationError(f"mapping has {mapping.m} dimensions, ambiguity set has "
                              f"{amb.vertices.shape[1]}")
    return solve_robust(case, mapping, model, vertices=amb.vertices)
