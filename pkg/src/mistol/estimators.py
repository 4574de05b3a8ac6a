"""Maximum-likelihood fitting plus the catalogue of compromise estimators.

Every compromise between the narrow and the wide fit is represented by a
weight function c(z) applied to the standardized departure statistic, or
equivalently by the one-dimensional rule a_hat(z) = c(z)*z for the mean of
a unit-variance normal. The AEstimator type carries both faces of that
correspondence; risk evaluation and Monte Carlo studies consume it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .models import Design, ModelSpec
from .numerics import (
    DomainError,
    NumericsError,
    std_normal_cdf,
    std_normal_pdf,
    _legendre_rule,
)


# ---------------------------------------------------------------------------
# the weight-function / shrinkage-rule pair


@dataclass(frozen=True)
class AEstimator:
    """A compromise estimator seen as a rule a_hat(z) = c(z)*z.

    c0 is the continuation value of the weight at z = 0 (the limit of
    a_hat(z)/z). Non-smooth rules list their kink/jump locations in knots so
    quadrature can split there.
    """

    name: str
    a_fn: Callable = field(repr=False)
    c0: float
    smooth: bool = True
    knots: tuple = ()
    params: tuple = ()  # ordered (key, value) pairs

    def a(self, z):
        return self.a_fn(np.asarray(z, dtype=float))

    def c(self, z):
        z = np.asarray(z, dtype=float)
        safe = np.where(z == 0.0, 1.0, z)
        out = np.where(z == 0.0, self.c0, self.a_fn(safe) / safe)
        return out if out.shape else float(out)

    def spec_string(self) -> str:
        if not self.params:
            return self.name
        inner = ";".join(f"{k}={v:g}" for k, v in self.params)
        return f"{self.name}:{inner}"


def _require(cond: bool, msg: str):
    if not cond:
        raise ValueError(msg)


def narrow_rule() -> AEstimator:
    return AEstimator("narrow", lambda z: np.zeros_like(z), c0=0.0)


def wide_rule() -> AEstimator:
    return AEstimator("wide", lambda z: z, c0=1.0)


def linear(c: float = 0.5) -> AEstimator:
    """Fixed-weight mixture of the two fits."""
    c = float(c)
    return AEstimator("linear", lambda z: c * z, c0=c, params=(("c", c),))


def pretest(m: float = 1.0) -> AEstimator:
    """Keep the narrow fit unless |z| reaches the cut-off m.

    The default cut-off 1 corresponds to testing at the point where the
    narrow and wide limiting risks cross; 1.645 and sqrt(2) are the usual
    10%-test and penalty-2 selection cut-offs (see PRETEST_PRESETS).
    """
    m = float(m)
    _require(m > 0.0, "pretest cut-off must be positive")
    return AEstimator(
        "pretest",
        lambda z: np.where(np.abs(z) >= m, z, 0.0),
        c0=0.0,
        smooth=False,
        knots=(-m, m),
        params=(("m", m),),
    )


PRETEST_PRESETS = {"pretest-10": 1.645, "pretest-sqrt2": math.sqrt(2.0)}


def eb() -> AEstimator:
    """Empirical-Bayes style shrinkage z^3/(1+z^2), weight z^2/(1+z^2)."""
    return AEstimator("eb", lambda z: z**3 / (1.0 + z * z), c0=0.0)


def qhat_weight(z, eps: float = 0.05):
    """Posterior-mean weight for a scale mixture restricted to [eps, 1].

    Evaluated as a ratio of two one-dimensional integrals by an adaptive
    (node-doubling) Gauss-Legendre rule. Vectorized in z.
    """
    eps = float(eps)
    _require(0.0 < eps < 1.0, "qhat needs eps strictly inside (0, 1)")
    z = np.asarray(z, dtype=float)
    tmax = math.sqrt(1.0 - eps)
    previous = None
    nodes = 60
    while nodes <= 1920:
        gx, gw = _legendre_rule(nodes)
        t = 0.5 * tmax * (gx + 1.0)
        w = 0.5 * tmax * gw
        kernel = np.exp(-0.5 * np.multiply.outer(z * z, t * t))
        num = kernel @ w
        den = kernel @ (w / (1.0 - t * t))
        ratio = num / den
        if previous is not None and np.max(np.abs(ratio - previous)) <= 1e-12 * (
            1.0 + np.max(np.abs(ratio))
        ):
            return ratio if ratio.shape else float(ratio)
        previous = ratio
        nodes *= 2
    raise NumericsError("qhat weight quadrature did not stabilize")


def qhat(eps: float = 0.05) -> AEstimator:
    w0 = float(qhat_weight(0.0, eps))
    return AEstimator(
        "qhat",
        lambda z: np.asarray(qhat_weight(z, eps)) * z,
        c0=w0,
        params=(("eps", float(eps)),),
    )


def bayes(sigma: float = 1.0) -> AEstimator:
    """Posterior mean under a centered normal prior with scale sigma."""
    sigma = float(sigma)
    _require(sigma > 0.0, "prior scale must be positive")
    shrink = sigma * sigma / (sigma * sigma + 1.0)
    return AEstimator("bayes", lambda z: shrink * z, c0=shrink, params=(("sigma", sigma),))


def epsilon_bayes(eps: float = 0.05, sigma: float = 3.0) -> AEstimator:
    """Posterior mean under the spike-and-normal prior.

    Prior: mass 1-eps at the null, mass eps spread as N(0, sigma^2).
    eps = 1 reduces to the plain normal-prior rule.
    """
    eps, sigma = float(eps), float(sigma)
    _require(0.0 < eps <= 1.0, "epsilon must lie in (0, 1]")
    _require(sigma > 0.0, "prior scale must be positive")
    s2 = sigma * sigma
    shrink = s2 / (s2 + 1.0)

    def bayes_factor(z):
        return math.sqrt(s2 + 1.0) * np.exp(-0.5 * shrink * z * z)

    def a_fn(z):
        w = eps / (eps + (1.0 - eps) * bayes_factor(z))
        return w * shrink * z

    c0 = eps / (eps + (1.0 - eps) * math.sqrt(s2 + 1.0)) * shrink
    return AEstimator(
        "epsilon_bayes", a_fn, c0=c0, params=(("eps", eps), ("sigma", sigma))
    )


def tanh_twopoint(m: float = 1.0) -> AEstimator:
    """Bayes rule for the symmetric two-point prior at -m and +m."""
    m = float(m)
    _require(m > 0.0, "two-point prior location must be positive")
    return AEstimator(
        "tanh_twopoint", lambda z: m * np.tanh(m * z), c0=m * m, params=(("m", m),)
    )


def bickel(m: float = 2.0) -> AEstimator:
    """Posterior mean under the cosine-squared prior on [-m, m].

    The prior density cos(pi*a/(2m))^2 / m is approximately least
    favourable for bounded means, so this rule is near minimax on the
    interval.
    """
    m = float(m)
    _require(m > 0.0, "interval half-width must be positive")
    prior = DensityPrior(
        lambda a: np.cos(math.pi * a / (2.0 * m)) ** 2 / m, -m, m, name="cosine-squared"
    )
    points, weights = _prior_nodes(prior)

    def a_fn(z):
        return _posterior_means(points, weights, z)

    c0 = float(a_fn(np.array([1e-6]))[0]) / 1e-6
    return AEstimator("bickel", a_fn, c0=c0, params=(("m", m),))


def restricted(m: float = 1.0) -> AEstimator:
    """ML estimate constrained to [-m, m]: clip the observation."""
    m = float(m)
    _require(m > 0.0, "restriction half-width must be positive")
    return AEstimator(
        "restricted",
        lambda z: np.clip(z, -m, m),
        c0=1.0,
        smooth=False,
        knots=(-m, m),
        params=(("m", m),),
    )


def efron_morris(m: float = 0.502) -> AEstimator:
    """Limited-translation rule: move z toward 0 by at most m (soft threshold)."""
    m = float(m)
    _require(m > 0.0, "translation limit must be positive")
    return AEstimator(
        "efron_morris",
        lambda z: np.sign(z) * np.maximum(np.abs(z) - m, 0.0),
        c0=0.0,
        smooth=False,
        knots=(-m, m),
        params=(("m", m),),
    )


def atan_shrink(m: float = 0.502) -> AEstimator:
    """Smooth analogue of limited translation: z - m*(2/pi)*arctan(z)."""
    m = float(m)
    _require(m > 0.0, "shrinkage scale must be positive")
    return AEstimator(
        "atan",
        lambda z: z - m * (2.0 / math.pi) * np.arctan(z),
        c0=1.0 - 2.0 * m / math.pi,
        params=(("m", m),),
    )


def uniform_bayes(m: float = 2.0) -> AEstimator:
    """Posterior mean under the uniform prior on [-m, m] (closed form)."""
    m = float(m)
    _require(m > 0.0, "interval half-width must be positive")

    def a_fn(z):
        num = std_normal_pdf(z + m) - std_normal_pdf(z - m)
        den = std_normal_cdf(z + m) - std_normal_cdf(z - m)
        return z + num / den

    c0 = float(a_fn(np.array([1e-6]))[0]) / 1e-6
    return AEstimator("uniform_bayes", a_fn, c0=c0, params=(("m", m),))


def mlplus() -> AEstimator:
    """Positive-part ML weight (z^2-1)_+ / z^2."""

    def a_fn(z):
        z2 = z * z
        return np.where(z2 > 1.0, z - z / np.where(z2 > 1.0, z2, 1.0), 0.0)

    return AEstimator("mlplus", a_fn, c0=0.0, smooth=False, knots=(-1.0, 1.0))


def qtilde(l: float = 0.5) -> AEstimator:
    """Positive-part family (z^2-l)_+ / (z^2+1-l), one knob l in [0, 1]."""
    l = float(l)
    _require(0.0 <= l <= 1.0, "the qtilde knob must lie in [0, 1]")

    def a_fn(z):
        z2 = z * z
        return z * np.maximum(z2 - l, 0.0) / (z2 + 1.0 - l)

    root = math.sqrt(l) if l > 0.0 else None
    return AEstimator(
        "qtilde",
        a_fn,
        c0=0.0,
        smooth=l == 0.0,
        knots=() if root is None else (-root, root),
        params=(("l", l),),
    )


def catalogue() -> list[AEstimator]:
    """Every built-in compromise rule at its documented default parameters."""
    return [
        narrow_rule(),
        wide_rule(),
        linear(),
        pretest(),
        eb(),
        qhat(),
        bayes(),
        epsilon_bayes(),
        tanh_twopoint(),
        bickel(),
        restricted(),
        efron_morris(),
        atan_shrink(),
        uniform_bayes(),
        mlplus(),
        qtilde(),
    ]


_FACTORIES: dict[str, tuple[Callable, tuple]] = {
    "narrow": (narrow_rule, ()),
    "wide": (wide_rule, ()),
    "linear": (linear, ("c",)),
    "pretest": (pretest, ("m",)),
    "eb": (eb, ()),
    "qhat": (qhat, ("eps",)),
    "bayes": (bayes, ("sigma",)),
    "epsilon_bayes": (epsilon_bayes, ("eps", "sigma")),
    "tanh_twopoint": (tanh_twopoint, ("m",)),
    "bickel": (bickel, ("m",)),
    "restricted": (restricted, ("m",)),
    "efron_morris": (efron_morris, ("m",)),
    "atan": (atan_shrink, ("m",)),
    "uniform_bayes": (uniform_bayes, ("m",)),
    "mlplus": (mlplus, ()),
    "qtilde": (qtilde, ("l",)),
}


def estimator_names() -> tuple:
    return tuple(_FACTORIES) + tuple(PRETEST_PRESETS)


def parse_estimator(spec: str) -> AEstimator:
    """Build an estimator from a spec string `name[:key=val,...]`.

    Raises ValueError for unknown names, unknown keys, or bad values.
    """
    spec = spec.strip()
    name, _, arg_text = spec.partition(":")
    name = name.strip()
    if name in PRETEST_PRESETS:
        if arg_text:
            raise ValueError(f"preset {name!r} takes no parameters")
        return pretest(PRETEST_PRESETS[name])
    if name not in _FACTORIES:
        known = ", ".join(sorted(_FACTORIES) + sorted(PRETEST_PRESETS))
        raise ValueError(f"unknown estimator {name!r} (known: {known})")
    factory, allowed = _FACTORIES[name]
    kwargs = {}
    if arg_text:
        for piece in arg_text.replace(";", ",").split(","):
            if not piece.strip():
                continue
            key, sep, val = piece.partition("=")
            key = key.strip()
            if not sep or key not in allowed:
                raise ValueError(
                    f"estimator {name!r} does not take parameter {key!r} "
                    f"(allowed: {', '.join(allowed) or 'none'})"
                )
            try:
                kwargs[key] = float(val)
            except ValueError:
                raise ValueError(f"bad numeric value for {name}:{key}: {val!r}") from None
    return factory(**kwargs)


# ---------------------------------------------------------------------------
# posteriors for general priors


@dataclass(frozen=True)
class DensityPrior:
    """Continuous prior given by a density on a bounded interval."""

    density: Callable
    lo: float
    hi: float
    name: str = "density-prior"


@dataclass(frozen=True)
class AtomPrior:
    """Discrete prior with finitely many support points."""

    atoms: tuple
    weights: tuple
    name: str = "atom-prior"

    def __post_init__(self):
        total = float(sum(self.weights))
        if total <= 0.0 or any(w < 0.0 for w in self.weights):
            raise ValueError("atom weights must be nonnegative with positive sum")
        object.__setattr__(
            self, "weights", tuple(float(w) / total for w in self.weights)
        )


@dataclass(frozen=True)
class Posterior:
    points: np.ndarray
    weights: np.ndarray
    mean: float


def _prior_nodes(prior):
    if isinstance(prior, AtomPrior):
        return np.asarray(prior.atoms, dtype=float), np.asarray(prior.weights)
    gx, gw = _legendre_rule(400)
    mid = (prior.hi + prior.lo) / 2.0
    half = (prior.hi - prior.lo) / 2.0
    points = mid + half * gx
    weights = half * gw * np.asarray(prior.density(points), dtype=float)
    if np.any(weights < -1e-12):
        raise ValueError("prior density must be nonnegative")
    return points, np.maximum(weights, 0.0)


def _posterior_means(points, prior_weights, z):
    z_in = np.asarray(z, dtype=float)
    z = np.atleast_1d(z_in)
    joint = std_normal_pdf(z[:, None] - points[None, :]) * prior_weights[None, :]
    evidence = joint.sum(axis=1)
    if np.any(evidence <= 0.0):
        raise NumericsError(
            "posterior evidence vanished; the prior puts no mass near the data"
        )
    means = (joint @ points) / evidence
    return means if z_in.ndim else float(means[0])


def bayes_posterior(prior, z: float):
    """Posterior over the shifted-normal mean after observing z.

    Returns (Posterior, posterior mean). The Posterior carries quadrature
    points and normalized weights (atoms and masses for a discrete prior).
    """
    points, prior_weights = _prior_nodes(prior)
    joint = np.asarray(std_normal_pdf(float(z) - points)) * prior_weights
    evidence = float(joint.sum())
    if evidence <= 0.0:
        raise NumericsError(
            "posterior evidence vanished; the prior puts no mass near the data"
        )
    weights = joint / evidence
    mean = float(weights @ points)
    return Posterior(points, weights, mean), mean


def bayes_estimator(prior, name: str = "bayes-custom") -> AEstimator:
    """Wrap a prior's posterior-mean rule as an AEstimator."""
    points, weights = _prior_nodes(prior)

    def a_fn(z):
        return _posterior_means(points, weights, z)

    c0 = float(a_fn(np.array([1e-6]))[0]) / 1e-6
    return AEstimator(name, a_fn, c0=c0)


# ---------------------------------------------------------------------------
# combining fits


def z_statistic(gamma_hat: float, gamma0: float, kappa_hat: float, n: int) -> float:
    """Standardized departure sqrt(n)*(gamma_hat - gamma0)/kappa_hat."""
    if kappa_hat <= 0.0:
        raise ValueError("kappa estimate must be positive")
    return math.sqrt(n) * (float(gamma_hat) - float(gamma0)) / float(kappa_hat)


def compromise_estimate(mu_narr: float, mu_wide: float, zn: float, est: AEstimator) -> float:
    """Weighted combination {1-c(zn)}*mu_narr + c(zn)*mu_wide."""
    c = float(est.c(float(zn)))
    return (1.0 - c) * float(mu_narr) + c * float(mu_wide)


def harmonic_compromise(mu_narr: float, mu_wide: float, zn: float, h: Callable) -> float:
    """Geometric-scale combination exp{(1-h(z)) log mu_narr + h(z) log mu_wide}.

    Both inputs must be positive; equal inputs are reproduced exactly for
    any weight.
    """
    if mu_narr <= 0.0 or mu_wide <= 0.0:
        raise DomainError("harmonic combination needs positive estimates")
    w = float(h(float(zn)))
    return math.exp((1.0 - w) * math.log(mu_narr) + w * math.log(mu_wide))


def debias_estimate(mu_narr: float, b: float, gamma_hat: float, gamma0: float) -> float:
    """First-order bias removal mu_narr - b*(gamma_hat - gamma0)."""
    return float(mu_narr) - float(b) * (float(gamma_hat) - float(gamma0))


# ---------------------------------------------------------------------------
# likelihood fitting


class FitError(NumericsError):
    """Raised when a likelihood maximization cannot be certified.

    Carries the iteration trace (loglik, gradient norm per step).
    """

    def __init__(self, message: str, trace=None):
        super().__init__(message)
        self.trace = list(trace or [])


@dataclass(frozen=True)
class FitResult:
    """One maximized likelihood.

    params holds theta for a narrow fit and theta followed by gamma for a
    wide fit; observed_info is the negative Hessian of the total
    log-likelihood at the optimum.
    """

    params: np.ndarray
    theta: np.ndarray
    gamma: np.ndarray | None
    loglik: float
    observed_info: np.ndarray
    iterations: int
    grad_norm: float
    method: str

    @property
    def converged(self) -> bool:
        return self.grad_norm <= 1e-8 * (1.0 + abs(self.loglik))


def _fd_gradient(f, x):
    g = np.empty_like(x)
    for j in range(x.size):
        h = 1e-6 * (1.0 + abs(x[j]))
        up, dn = x.copy(), x.copy()
        up[j] += h
        dn[j] -= h
        g[j] = (f(up) - f(dn)) / (2.0 * h)
    return g


def _fd_hessian(f, x):
    k = x.size
    h = 1e-4 * (1.0 + np.abs(x))
    hess = np.empty((k, k))
    f0 = f(x)
    for i in range(k):
        up, dn = x.copy(), x.copy()
        up[i] += h[i]
        dn[i] -= h[i]
        hess[i, i] = (f(up) - 2.0 * f0 + f(dn)) / h[i] ** 2
        for j in range(i + 1, k):
            pp, pm, mp, mm = x.copy(), x.copy(), x.copy(), x.copy()
            pp[[i, j]] += [h[i], h[j]]
            pm[i] += h[i]
            pm[j] -= h[j]
            mp[i] -= h[i]
            mp[j] += h[j]
            mm[[i, j]] -= [h[i], h[j]]
            hess[i, j] = hess[j, i] = (f(pp) - f(pm) - f(mp) + f(mm)) / (
                4.0 * h[i] * h[j]
            )
    return hess


def maximize_loglik(f, x0, max_iterations: int = 200):
    """Safeguarded Newton ascent with step-halving.

    Returns (x, loglik, iterations, grad_norm). Convergence requires the
    gradient norm to fall below 1e-8*(1+|loglik|); failure to do so raises
    FitError with the iteration trace.
    """
    x = np.asarray(x0, dtype=float).copy()
    loglik = f(x)
    if not np.isfinite(loglik):
        raise FitError("starting point lies outside the likelihood support")
    trace = []
    for iteration in range(max_iterations):
        grad = _fd_gradient(f, x)
        gnorm = float(np.linalg.norm(grad))
        trace.append((float(loglik), gnorm))
        if gnorm <= 1e-8 * (1.0 + abs(loglik)):
            return x, float(loglik), iteration, gnorm
        hess = _fd_hessian(f, x)
        step = None
        try:
            candidate = np.linalg.solve(hess, -grad)
            if float(candidate @ grad) > 0.0:
                step = candidate
        except np.linalg.LinAlgError:
            step = None
        if step is None:
            step = grad / max(1.0, float(np.linalg.norm(grad)))
        scale = 1.0
        improved = False
        for _ in range(60):
            trial = x + scale * step
            trial_ll = f(trial)
            if np.isfinite(trial_ll) and trial_ll > loglik:
                x, loglik = trial, trial_ll
                improved = True
                break
            scale *= 0.5
        if not improved:
            grad = _fd_gradient(f, x)
            gnorm = float(np.linalg.norm(grad))
            if gnorm <= 1e-8 * (1.0 + abs(loglik)):
                return x, float(loglik), iteration + 1, gnorm
            raise FitError(
                f"line search stalled at gradient norm {gnorm:.3e}", trace
            )
    raise FitError("maximum Newton iterations exceeded", trace)


def _finish_fit(model, y, design, params, p, iterations, method):
    gamma0 = np.asarray(model.gamma0, dtype=float)
    narrow = p == len(params)

    def objective(x):
        if narrow:
            return model.loglik(y, design, x, gamma0)
        return model.loglik(y, design, x[:p], x[p:])

    loglik = objective(params)
    if not np.isfinite(loglik):
        raise FitError(
            f"{method} fit of {model.name!r} lands outside the likelihood support"
        )
    grad = _fd_gradient(objective, params)
    gnorm = float(np.linalg.norm(grad))
    if not np.isfinite(gnorm) or gnorm > 1e-8 * (1.0 + abs(loglik)):
        raise FitError(
            f"{method} fit of {model.name!r} reports gradient norm {gnorm:.3e} "
            f"above tolerance", [(float(loglik), gnorm)]
        )
    observed = -_fd_hessian(objective, params)
    return FitResult(
        params=params,
        theta=params[:p],
        gamma=None if narrow else params[p:],
        loglik=float(loglik),
        observed_info=observed,
        iterations=iterations,
        grad_norm=gnorm,
        method=method,
    )


def fit_narrow(model: ModelSpec, y, design: Design) -> FitResult:
    """Maximize the narrow likelihood (departure pinned at its null value)."""
    y = np.asarray(y, dtype=float)
    if y.size == 0:
        raise DomainError("cannot fit an empty sample")
    if model.data_check is not None:
        model.data_check(y, design)
    gamma0 = np.asarray(model.gamma0, dtype=float)
    if model.narrow_fit_exact is not None:
        theta = np.asarray(model.narrow_fit_exact(y, design), dtype=float)
        return _finish_fit(model, y, design, theta, model.p, 0, "closed")
    theta, _, iters, _ = maximize_loglik(
        lambda th: model.loglik(y, design, th, gamma0),
        np.asarray(model.theta0, dtype=float),
    )
    return _finish_fit(model, y, design, theta, model.p, iters, "newton")


def fit_wide(model: ModelSpec, y, design: Design) -> FitResult:
    """Maximize the wide likelihood, warm-started at the narrow fit.

    The warm start plus monotone line search guarantees the wide maximum
    is no smaller than the narrow one on the same data.
    """
    y = np.asarray(y, dtype=float)
    if y.size == 0:
        raise DomainError("cannot fit an empty sample")
    if model.data_check is not None:
        model.data_check(y, design)
    p = model.p
    if model.wide_fit_exact is not None:
        theta, gamma = model.wide_fit_exact(y, design)
        params = np.concatenate([np.asarray(theta, float), np.asarray(gamma, float)])
        return _finish_fit(model, y, design, params, p, 0, "closed")
    narrow = fit_narrow(model, y, design)
    start = np.concatenate([narrow.theta, np.asarray(model.gamma0, dtype=float)])
    params, _, iters, _ = maximize_loglik(
        lambda x: model.loglik(y, design, x[:p], x[p:]), start
    )
    return _finish_fit(model, y, design, params, p, iters, "newton")
