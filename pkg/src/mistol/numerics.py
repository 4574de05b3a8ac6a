"""Shared numerical kernels: normal/chi-square functions, Gaussian
expectations, partitioned information matrices, reproducible RNG streams.

Everything downstream (tolerance radii, risk curves, Monte Carlo studies)
funnels through this module so that quadrature rules and matrix algebra are
exercised by one set of tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import special


class NumericsError(RuntimeError):
    """Raised when a kernel cannot produce a trustworthy value."""


class SingularBlockError(NumericsError):
    """A block of a partitioned information matrix is not invertible.

    Attributes:
        block: which block failed ("narrow" for the upper-left block,
            "schur" for the wide-direction Schur complement).
    """

    def __init__(self, block: str, detail: str = ""):
        self.block = block
        msg = f"singular or non-positive-definite block: {block}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class DomainError(ValueError, NumericsError):
    """An argument lies outside a function's mathematical domain."""


# ---------------------------------------------------------------------------
# scalar special functions


def std_normal_pdf(x):
    x = np.asarray(x, dtype=float)
    return np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)


def std_normal_cdf(x):
    """Standard normal CDF, accurate to better than 1e-12 everywhere."""
    return special.ndtr(np.asarray(x, dtype=float))


def std_normal_quantile(p):
    p = np.asarray(p, dtype=float)
    if np.any((p <= 0.0) | (p >= 1.0)):
        raise DomainError("quantile argument must lie strictly in (0, 1)")
    return special.ndtri(p)


def chisq_quantile(p: float, df: int) -> float:
    """Quantile of the central chi-square distribution."""
    if not 0.0 < p < 1.0:
        raise DomainError("quantile argument must lie strictly in (0, 1)")
    if df <= 0:
        raise DomainError("degrees of freedom must be positive")
    return float(special.chdtri(df, 1.0 - p))


def central_chisq_cdf(x, df):
    x = np.asarray(x, dtype=float)
    return np.where(x <= 0.0, 0.0, special.gammainc(df / 2.0, x / 2.0))


def noncentral_chisq_cdf(x: float, df: int, ncp: float) -> float:
    """CDF of the noncentral chi-square distribution.

    Computed as the Poisson(ncp/2)-weighted mixture of central chi-square
    CDFs with df, df+2, df+4, ... degrees of freedom. The series is summed
    until a term falls below 1e-14 of the running total (and the Poisson
    mode has been passed), giving roughly 1e-8 absolute accuracy or better
    for the noncentralities that arise here.

    Raises DomainError for x < 0, df <= 0 or ncp < 0.
    """
    if df <= 0:
        raise DomainError("degrees of freedom must be positive")
    if ncp < 0.0:
        raise DomainError("noncentrality must be nonnegative")
    if x < 0.0:
        raise DomainError("chi-square argument must be nonnegative")
    if x == 0.0:
        return 0.0
    lam = 0.5 * ncp
    if lam == 0.0:
        return float(central_chisq_cdf(x, df))
    if lam > 700.0:
        # e^{-lam} underflows; no use case here needs such noncentralities.
        raise DomainError("noncentrality too large for series evaluation")
    weight = math.exp(-lam)  # Poisson(lam) mass at k = 0
    total = 0.0
    k = 0
    while True:
        term = weight * float(special.gammainc(df / 2.0 + k, x / 2.0))
        total += term
        if k > lam and term < 1e-14 * total:
            break
        if k > 100000:
            raise NumericsError("noncentral chi-square series failed to converge")
        k += 1
        weight *= lam / k
    return min(total, 1.0)


def gamma_log_derivatives(x):
    """First and second derivatives of log Gamma (digamma, trigamma).

    Returns a pair of arrays. Raises DomainError for arguments <= 0.
    """
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0.0):
        raise DomainError("log-gamma derivatives require positive arguments")
    return special.digamma(x), special.polygamma(1, x)


# ---------------------------------------------------------------------------
# expectations under a shifted standard normal


@lru_cache(maxsize=8)
def _hermite_rule(nodes: int):
    x, w = np.polynomial.hermite.hermgauss(nodes)
    return x, w


@lru_cache(maxsize=8)
def _legendre_rule(nodes: int):
    x, w = np.polynomial.legendre.leggauss(nodes)
    return x, w


def _check_finite(values: np.ndarray, context: str) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(values)):
        bad = int(np.count_nonzero(~np.isfinite(values)))
        raise NumericsError(
            f"integrand returned {bad} non-finite value(s) during {context}; "
            "aborting rather than degrading accuracy"
        )
    return values


@dataclass(frozen=True)
class GaussianExpectation:
    """Quadrature engine for E f(Z) with Z ~ N(shift, 1).

    Smooth integrands use a Gauss-Hermite rule; integrands flagged as
    non-smooth use an adaptive doubling trapezoid on [shift - halfwidth,
    shift + halfwidth], pre-split at supplied knot locations so that kinks
    and jumps land on panel boundaries.
    """

    nodes: int = 200
    halfwidth: float = 8.0
    trapezoid_tol: float = 1e-11
    max_doublings: int = 22

    def hermite_points(self, shift: float):
        x, w = _hermite_rule(self.nodes)
        return shift + math.sqrt(2.0) * x, w / math.sqrt(math.pi)

    def expect(self, f, shift: float, *, smooth: bool = True, knots=()) -> float:
        if smooth and not knots:
            z, w = self.hermite_points(shift)
            vals = _check_finite(f(z), "Gauss-Hermite expectation")
            return float(w @ vals)
        return self._expect_trapezoid(f, shift, knots)

    def _expect_trapezoid(self, f, shift: float, knots) -> float:
        lo, hi = shift - self.halfwidth, shift + self.halfwidth
        cuts = sorted({lo, hi, *(float(k) for k in knots if lo < float(k) < hi)})

        def g(z):
            z = np.asarray(z, dtype=float)
            return _check_finite(f(z), "trapezoid expectation") * std_normal_pdf(z - shift)

        total = 0.0
        for a, b in zip(cuts[:-1], cuts[1:]):
            total += _adaptive_trapezoid(
                g, a, b, tol=self.trapezoid_tol, max_doublings=self.max_doublings
            )
        return total


def _adaptive_trapezoid(g, a: float, b: float, *, tol: float, max_doublings: int) -> float:
    """Trapezoid rule with interval doubling until two refinements agree."""
    if b <= a:
        return 0.0
    width = b - a
    ends = g(np.array([a, b]))
    estimate = 0.5 * width * float(ends[0] + ends[1])
    n = 1
    for _ in range(max_doublings):
        mid = a + width * (np.arange(n) + 0.5) / n
        refined = 0.5 * estimate + 0.5 * (width / n) * float(np.sum(g(mid)))
        n *= 2
        if abs(refined - estimate) <= tol * (1.0 + abs(refined)):
            return refined
        estimate = refined
    raise NumericsError("adaptive trapezoid failed to converge")


_DEFAULT_EXPECTATION = GaussianExpectation()


def expect_under_shifted_normal(f, shift: float, *, smooth: bool = True, knots=(),
                                rule: GaussianExpectation | None = None) -> float:
    """E f(Z) for Z ~ N(shift, 1). See GaussianExpectation for the rules."""
    engine = rule if rule is not None else _DEFAULT_EXPECTATION
    return engine.expect(f, shift, smooth=smooth, knots=knots)


# ---------------------------------------------------------------------------
# partitioned information matrices


def _as_symmetric(m, label: str) -> np.ndarray:
    m = np.atleast_2d(np.asarray(m, dtype=float))
    if m.shape[0] != m.shape[1]:
        raise ValueError(f"{label} block must be square, got shape {m.shape}")
    scale = max(1.0, float(np.max(np.abs(m))))
    if np.max(np.abs(m - m.T)) > 1e-8 * scale:
        raise ValueError(f"{label} block is not symmetric")
    return 0.5 * (m + m.T)


@dataclass(frozen=True)
class PartitionedInfo:
    """Per-observation information matrix split into narrow and extra blocks.

    j11 is the p x p block for the protected parameters, j22 the q x q block
    for the departure parameters, j12 the p x q cross block.
    """

    j11: np.ndarray
    j12: np.ndarray
    j22: np.ndarray

    def __post_init__(self):
        j11 = _as_symmetric(self.j11, "narrow")
        j22 = _as_symmetric(self.j22, "departure")
        j12 = np.atleast_2d(np.asarray(self.j12, dtype=float))
        if j12.shape != (j11.shape[0], j22.shape[0]):
            raise ValueError(
                f"cross block has shape {j12.shape}, expected "
                f"{(j11.shape[0], j22.shape[0])}"
            )
        object.__setattr__(self, "j11", j11)
        object.__setattr__(self, "j12", j12)
        object.__setattr__(self, "j22", j22)

    @property
    def p(self) -> int:
        return self.j11.shape[0]

    @property
    def q(self) -> int:
        return self.j22.shape[0]

    @property
    def matrix(self) -> np.ndarray:
        top = np.hstack([self.j11, self.j12])
        bottom = np.hstack([self.j12.T, self.j22])
        return np.vstack([top, bottom])

    @classmethod
    def from_full(cls, full, p: int) -> "PartitionedInfo":
        full = _as_symmetric(full, "full information")
        if not 0 < p < full.shape[0]:
            raise ValueError("narrow dimension must split the matrix")
        return cls(full[:p, :p], full[:p, p:], full[p:, p:])


def _chol_inverse(m: np.ndarray, block: str, scale: float | None = None) -> np.ndarray:
    """Inverse of an SPD matrix via Cholesky; SingularBlockError otherwise.

    scale is the magnitude the pivots are judged against; for a Schur
    complement it must be the size of the terms that were subtracted,
    since exact cancellation can leave a rounding-level positive pivot
    that Cholesky happily accepts.
    """
    try:
        c = np.linalg.cholesky(m)
    except np.linalg.LinAlgError as err:
        raise SingularBlockError(block, str(err)) from None
    if scale is None:
        scale = float(np.max(np.abs(np.diag(m))))
    if float(np.min(np.diag(c))) ** 2 <= 1e-12 * max(scale, 1e-300):
        raise SingularBlockError(block, "singular to working precision")
    ident = np.eye(m.shape[0])
    inv = np.linalg.solve(c.T, np.linalg.solve(c, ident))
    return 0.5 * (inv + inv.T)


@dataclass(frozen=True)
class PartitionedInverse:
    """Blocks of the inverse of a partitioned information matrix.

    inv22 is the lower-right block of the full inverse: the limiting
    covariance of the departure-parameter estimator in the wide model.
    inv11 and inv12 are the matching upper-left and cross blocks.
    """

    inv11: np.ndarray
    inv12: np.ndarray
    inv22: np.ndarray
    j11_inv: np.ndarray = field(repr=False)


def partitioned_inverse(info: PartitionedInfo) -> PartitionedInverse:
    """Blockwise inverse via the Schur complement of the narrow block.

    Raises SingularBlockError naming the offending block if the narrow
    block or the Schur complement is not positive definite.
    """
    j11_inv = _chol_inverse(info.j11, "narrow")
    subtracted = info.j12.T @ j11_inv @ info.j12
    schur = info.j22 - subtracted
    schur_scale = float(
        max(np.max(np.abs(np.diag(info.j22))), np.max(np.abs(np.diag(subtracted))))
    )
    inv22 = _chol_inverse(0.5 * (schur + schur.T), "schur", scale=schur_scale)
    inv12 = -j11_inv @ info.j12 @ inv22
    inv11 = j11_inv + j11_inv @ info.j12 @ inv22 @ info.j12.T @ j11_inv
    return PartitionedInverse(
        inv11=0.5 * (inv11 + inv11.T), inv12=inv12, inv22=inv22, j11_inv=j11_inv
    )


# ---------------------------------------------------------------------------
# reproducible replication streams


def replication_rng(seed: int, rep: int) -> np.random.Generator:
    """Independent, order-free RNG stream for one Monte Carlo replication.

    Stream identity depends only on (seed, rep), so replications can run in
    any order or on any worker and still draw identical variates.
    """
    if seed < 0 or rep < 0:
        raise ValueError("seed and replication index must be nonnegative")
    return np.random.default_rng(np.random.SeedSequence(entropy=(int(seed), int(rep))))


def pairwise_sum(values) -> float:
    """Order-stable summation (numpy's pairwise algorithm over a 1-d copy)."""
    arr = np.ascontiguousarray(np.asarray(values, dtype=float).ravel())
    return float(np.sum(arr))
