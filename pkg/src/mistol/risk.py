"""Limiting risk of compromise estimators under root-n departures.

Everything here lives in the one-dimensional limit experiment: observe
Z ~ N(a, 1) where a is the departure divided by the tolerance radius, apply
a rule a_hat(z), and score (a_hat(Z) - a)^2 or |a_hat(Z) - a|. The geometry
object maps those unit-free curves back to a concrete model, focus quantity
and sample size.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .estimators import AEstimator
from .models import Design, Estimand, ModelSpec, information_at_null
from .numerics import (
    GaussianExpectation,
    NumericsError,
    _legendre_rule,
    partitioned_inverse,
    std_normal_cdf,
    std_normal_pdf,
    std_normal_quantile,
)
from .tolerance import kappa_squared_block

_DEFAULT_RULE = GaussianExpectation()


# ---------------------------------------------------------------------------
# geometry linking the limit experiment to a model and focus


@dataclass(frozen=True)
class LimitGeometry:
    """Constants that translate unit-free risk curves into focus-scale MSE.

    bias_slope is the sensitivity of the focus to the departure after the
    best narrow-model adjustment; tau0_sq and tau_sq are the limiting
    variances of the narrow and wide estimators of the focus.
    """

    bias_slope: float
    kappa: float
    tau0_sq: float
    tau_sq: float

    @property
    def tau0(self) -> float:
        return math.sqrt(self.tau0_sq)

    @property
    def tau(self) -> float:
        return math.sqrt(self.tau_sq)

    @property
    def rho(self) -> float:
        """Bias-to-noise ratio |bias_slope|*kappa/tau0."""
        return abs(self.bias_slope) * self.kappa / self.tau0

    def shift_at(self, delta: float) -> float:
        """Departure measured in tolerance units, a = delta/kappa."""
        return float(delta) / self.kappa


def limit_geometry(
    model: ModelSpec,
    design: Design,
    estimand=None,
    theta=None,
) -> LimitGeometry:
    """Compute the geometry constants for one model/design/focus triple.

    The wide-estimator variance is evaluated along two routes (adjusted
    narrow variance plus bias term, and the full-information sandwich) and
    the two must agree; disagreement signals an inconsistent gradient or
    information matrix and raises NumericsError.
    """
    if estimand is None:
        estimand = model.default_estimand
    if isinstance(estimand, str):
        estimand = model.estimand(estimand, design)
    if not isinstance(estimand, Estimand):
        raise TypeError("estimand must be an Estimand or the name of one")
    info = information_at_null(model, design, theta=theta)
    if info.q != 1:
        raise ValueError("limit geometry is defined for a scalar departure")
    inv = partitioned_inverse(info)
    theta0 = np.asarray(model.theta0, dtype=float) if theta is None else np.asarray(theta, dtype=float)
    gamma0 = np.asarray(model.gamma0, dtype=float)
    grad_theta, grad_gamma = estimand.gradients(theta0, gamma0)
    j11_inv = inv.j11_inv
    adjusted = info.j12.T @ (j11_inv @ grad_theta)
    b = float(adjusted[0] - grad_gamma[0])
    tau0_sq = float(grad_theta @ (j11_inv @ grad_theta))
    kap_sq = float(inv.inv22[0, 0])
    tau_sq = tau0_sq + b * b * kap_sq

    full_grad = np.concatenate([grad_theta, grad_gamma])
    sandwich = float(full_grad @ np.linalg.solve(info.matrix, full_grad))
    if abs(sandwich - tau_sq) > 1e-6 * (1.0 + abs(tau_sq)):
        raise NumericsError(
            f"variance routes disagree for {model.name}/{estimand.name}: "
            f"{tau_sq!r} vs {sandwich!r}"
        )
    return LimitGeometry(
        bias_slope=b, kappa=math.sqrt(kap_sq), tau0_sq=tau0_sq, tau_sq=tau_sq
    )


# ---------------------------------------------------------------------------
# squared-error risk in the limit experiment


def risk_closed_form(kind: str, a, *, m: float = 1.0, c: float = 0.5):
    """Exact limiting mean squared error for the rules that admit one.

    Kinds: narrow, wide, linear (weight c), pretest, restricted,
    efron_morris (threshold m). Vectorized over a.
    """
    a = np.asarray(a, dtype=float)
    if kind == "narrow":
        out = a * a
    elif kind == "wide":
        out = np.ones_like(a)
    elif kind == "linear":
        out = c * c + (1.0 - c) ** 2 * a * a
    elif kind == "pretest":
        hi, lo = m + a, m - a
        out = (
            1.0
            + (a * a - 1.0) * (std_normal_cdf(hi) + std_normal_cdf(lo) - 1.0)
            + hi * std_normal_pdf(hi)
            + lo * std_normal_pdf(lo)
        )
    elif kind == "restricted":
        hi, lo = m + a, m - a
        out = (
            std_normal_cdf(lo)
            + std_normal_cdf(hi)
            - 1.0
            - lo * std_normal_pdf(lo)
            - hi * std_normal_pdf(hi)
            + lo * lo * (1.0 - std_normal_cdf(lo))
            + hi * hi * (1.0 - std_normal_cdf(hi))
        )
    elif kind == "efron_morris":
        hi, lo = m + a, m - a
        out = (
            1.0
            + m * m
            + (a * a - m * m - 1.0) * (std_normal_cdf(hi) + std_normal_cdf(lo) - 1.0)
            - lo * std_normal_pdf(hi)
            - hi * std_normal_pdf(lo)
        )
    else:
        raise ValueError(f"no closed-form risk for kind {kind!r}")
    return out if out.shape else float(out)


def _piecewise_gaussian_expect(fn, center: float, knots, halfwidth: float = 8.0):
    """Integrate fn(z)*phi(z-center) splitting at the listed knots.

    Panels between knots are further cut to width <= 2 and handled by
    60-node Gauss-Legendre, which is exact to machine precision for the
    smooth pieces that arise here.
    """
    lo, hi = center - halfwidth, center + halfwidth
    edges = sorted({lo, hi, *(float(k) for k in knots if lo < float(k) < hi)})
    gx, gw = _legendre_rule(60)
    total = 0.0
    for left, right in zip(edges[:-1], edges[1:]):
        pieces = max(1, int(math.ceil((right - left) / 2.0)))
        bounds = np.linspace(left, right, pieces + 1)
        for a, b in zip(bounds[:-1], bounds[1:]):
            mid, half = (a + b) / 2.0, (b - a) / 2.0
            z = mid + half * gx
            total += half * float(
                (np.asarray(fn(z), dtype=float) * std_normal_pdf(z - center)) @ gw
            )
    return total


def risk_numeric(est: AEstimator, a, *, rule: GaussianExpectation | None = None):
    """Limiting MSE E{a_hat(Z) - a}^2 with Z ~ N(a, 1), by quadrature."""
    rule = rule or _DEFAULT_RULE
    a_arr = np.atleast_1d(np.asarray(a, dtype=float))
    out = np.empty_like(a_arr)
    for i, ai in enumerate(a_arr):
        def sq_err(z, ai=ai):
            return (np.asarray(est.a_fn(np.asarray(z, dtype=float))) - ai) ** 2

        if est.smooth and not est.knots:
            out[i] = rule.expect(sq_err, shift=ai)
        else:
            out[i] = _piecewise_gaussian_expect(
                sq_err, ai, est.knots, halfwidth=rule.halfwidth
            )
    return out if np.asarray(a).shape else float(out[0])


# ---------------------------------------------------------------------------
# absolute-error risk


def mean_abs_normal(shift):
    """E|shift + N(0,1)|, even in the shift, sqrt(2/pi) at zero."""
    x = np.asarray(shift, dtype=float)
    out = x * (2.0 * std_normal_cdf(x) - 1.0) + 2.0 * std_normal_pdf(x)
    return out if out.shape else float(out)


def l1_risk(
    est: AEstimator, a, rho: float, *, rule: GaussianExpectation | None = None
):
    """Limiting mean absolute error, in narrow-standard-deviation units.

    rho is the bias-to-noise ratio of the geometry; the curve is
    E_Z mean_abs_normal(rho*(a_hat(Z) - a)) with Z ~ N(a, 1).
    """
    rule = rule or _DEFAULT_RULE
    rho = float(rho)
    if rho < 0.0:
        raise ValueError("rho must be nonnegative")
    a_arr = np.atleast_1d(np.asarray(a, dtype=float))
    out = np.empty_like(a_arr)
    for i, ai in enumerate(a_arr):
        def abs_loss(z, ai=ai):
            return mean_abs_normal(rho * (np.asarray(est.a_fn(np.asarray(z, dtype=float))) - ai))

        if est.smooth and not est.knots:
            out[i] = rule.expect(abs_loss, shift=ai)
        else:
            out[i] = _piecewise_gaussian_expect(
                abs_loss, ai, est.knots, halfwidth=rule.halfwidth
            )
    return out if np.asarray(a).shape else float(out[0])


def l1_tolerance(rho: float) -> float:
    """Departure size where the narrow fit's absolute error matches the wide fit's.

    Solves mean_abs_normal(rho*a) = sqrt(1+rho^2)*sqrt(2/pi) for a >= 0.
    The rho -> 0 limit is exactly 1; for rho -> infinity the solution
    decreases to sqrt(2/pi).
    """
    rho = float(rho)
    if rho < 0.0:
        raise ValueError("rho must be nonnegative")
    if rho < 1e-6:
        return 1.0
    target = math.sqrt(1.0 + rho * rho) * math.sqrt(2.0 / math.pi)

    def gap(a):
        return mean_abs_normal(rho * a) - target

    lo, hi = 0.1, 2.0
    glo, ghi = gap(lo), gap(hi)
    if glo >= 0.0 or ghi <= 0.0:
        raise NumericsError("absolute-error tolerance bracket failed")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        gm = gap(mid)
        if gm <= 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-12:
            break
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# confidence intervals under departure


def ci_coverage(shift: float, halfwidth: float) -> float:
    """P(|N(shift,1)| <= halfwidth): coverage of a studentized interval
    whose center is biased by `shift` standard errors."""
    if halfwidth < 0.0:
        raise ValueError("interval halfwidth must be nonnegative")
    return float(
        std_normal_cdf(halfwidth - shift) - std_normal_cdf(-halfwidth - shift)
    )


def interval_risk(
    geometry: LimitGeometry,
    delta: float,
    *,
    level: float = 0.90,
    length_weight: float = 0.0,
) -> dict:
    """Non-coverage plus weighted expected length for both intervals.

    The narrow interval is shorter but its center carries bias
    bias_slope*delta; the wide interval holds the nominal level at any
    departure. Returns {'narrow': ..., 'wide': ...}.
    """
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    if length_weight < 0.0:
        raise ValueError("length weight must be nonnegative")
    z = float(std_normal_quantile((1.0 + level) / 2.0))
    shift = geometry.bias_slope * float(delta) / geometry.tau0
    narrow = (1.0 - ci_coverage(shift, z)) + 2.0 * length_weight * z * geometry.tau0
    wide = (1.0 - ci_coverage(0.0, z)) + 2.0 * length_weight * z * geometry.tau
    return {"narrow": narrow, "wide": wide}


# ---------------------------------------------------------------------------
# profiles, tables, crossings


def default_grid() -> np.ndarray:
    return np.linspace(0.0, 5.0, 101)


@dataclass(frozen=True)
class RiskProfile:
    """A risk curve sampled on a grid, with its worst point."""

    name: str
    loss: str
    grid: np.ndarray
    values: np.ndarray

    @property
    def max_risk(self) -> float:
        return float(np.max(self.values))

    @property
    def argmax(self) -> float:
        return float(self.grid[int(np.argmax(self.values))])


def _risk_evaluator(est: AEstimator, loss: str, rho, rule):
    if loss == "l2":
        return lambda a: risk_numeric(est, a, rule=rule)
    if loss == "l1":
        if rho is None:
            raise ValueError("absolute-error risk needs the geometry ratio rho")
        return lambda a: l1_risk(est, a, float(rho), rule=rule)
    raise ValueError(f"unknown loss {loss!r} (use 'l2' or 'l1')")


def risk_profile(
    est: AEstimator,
    grid=None,
    *,
    loss: str = "l2",
    rho: float | None = None,
    rule: GaussianExpectation | None = None,
) -> RiskProfile:
    grid = default_grid() if grid is None else np.asarray(grid, dtype=float)
    evaluate = _risk_evaluator(est, loss, rho, rule)
    values = np.array([float(evaluate(float(a))) for a in grid])
    label = loss if loss == "l2" else f"l1:rho={float(rho):g}"
    return RiskProfile(est.spec_string(), label, grid, values)


def limit_mse(geometry: LimitGeometry, est: AEstimator, delta: float, *, rule=None) -> float:
    """Scaled limiting MSE of the focus estimate at departure delta.

    Equals tau0^2 + bias_slope^2*kappa^2*R(delta/kappa) where R is the
    unit-free risk curve of the rule.
    """
    a = geometry.shift_at(delta)
    r = float(risk_numeric(est, a, rule=rule))
    return geometry.tau0_sq + geometry.bias_slope**2 * geometry.kappa**2 * r


def risk_table(
    estimators,
    grid=None,
    *,
    loss: str = "l2",
    rho: float | None = None,
    rule: GaussianExpectation | None = None,
):
    """Risk curves for several rules on a common grid.

    Returns (header, matrix) where the header starts with 'a' and the
    matrix has the grid in column 0.
    """
    grid = default_grid() if grid is None else np.asarray(grid, dtype=float)
    names = []
    columns = [grid]
    for est in estimators:
        profile = risk_profile(est, grid, loss=loss, rho=rho, rule=rule)
        names.append(profile.name.replace(",", ";"))
        columns.append(profile.values)
    header = ["a"] + names
    return header, np.column_stack(columns)


def write_risk_csv(path, estimators, grid=None, *, loss="l2", rho=None, rule=None):
    """Write a deterministic risk table as CSV (full-precision floats)."""
    header, matrix = risk_table(estimators, grid, loss=loss, rho=rho, rule=rule)
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in matrix:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    return path


def crossing_points(f, g, lo: float, hi: float, *, samples: int = 501, tol: float = 1e-6):
    """Abscissas in (lo, hi) where f - g changes sign, refined by bisection."""
    xs = np.linspace(float(lo), float(hi), int(samples))
    diffs = np.array([float(f(x)) - float(g(x)) for x in xs])
    found = []
    for x0, x1, d0, d1 in zip(xs[:-1], xs[1:], diffs[:-1], diffs[1:]):
        if d0 == 0.0:
            found.append(float(x0))
            continue
        if d0 * d1 < 0.0:
            a, b, da = float(x0), float(x1), d0
            while b - a > tol:
                mid = 0.5 * (a + b)
                dm = float(f(mid)) - float(g(mid))
                if dm == 0.0:
                    a = b = mid
                    break
                if da * dm < 0.0:
                    b = mid
                else:
                    a = mid
            found.append(0.5 * (a + b))
    if diffs[-1] == 0.0:
        found.append(float(xs[-1]))
    return found


def risk_crossings(
    est_a: AEstimator,
    est_b: AEstimator,
    lo: float = 0.0,
    hi: float = 5.0,
    *,
    loss: str = "l2",
    rho: float | None = None,
    rule: GaussianExpectation | None = None,
):
    """Departure sizes where two rules' risk curves cross."""
    fa = _risk_evaluator(est_a, loss, rho, rule)
    fb = _risk_evaluator(est_b, loss, rho, rule)
    return crossing_points(fa, fb, lo, hi)


def level_crossings(
    est: AEstimator,
    level: float,
    lo: float = 0.0,
    hi: float = 5.0,
    *,
    loss: str = "l2",
    rho: float | None = None,
    rule: GaussianExpectation | None = None,
):
    """Departure sizes where a rule's risk curve crosses a constant level."""
    fa = _risk_evaluator(est, loss, rho, rule)
    return crossing_points(fa, lambda _a: float(level), lo, hi)
