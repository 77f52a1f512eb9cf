"""Quadrature, special functions and interference Laplace transforms.

Everything here is deterministic and vectorised: integrands receive numpy
arrays and may carry an arbitrary batch shape, so one adaptive pass can
integrate a whole family of related integrands at once.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np
from scipy import interpolate, special

__all__ = [
    "NonConvergence",
    "UnsupportedOrder",
    "QuadratureSettings",
    "Measure",
    "PowerLawKernel",
    "KFunctionSpec",
    "LineProcessField",
    "MAX_DERIVATIVE_ORDER",
    "erf",
    "erfc",
    "erfcx",
    "integrate",
    "k_function",
    "k_function_derivative",
    "log_laplace_derivatives",
    "laplace_derivatives",
    "product_laplace_derivative",
    "richardson_derivative",
]

MAX_DERIVATIVE_ORDER = 3


class NonConvergence(ArithmeticError):
    """Adaptive quadrature ran out of subdivisions before meeting tolerance."""


class UnsupportedOrder(ValueError):
    pass


@dataclass(frozen=True)
class QuadratureSettings:
    rel_tol: float = 1e-8
    abs_tol: float = 1e-12
    max_subdivisions: int = 2000
    # panels whose error is below tail_cutoff * |estimate| are never refined
    tail_cutoff: float = 1e-14

    def __post_init__(self):
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be > 0")
        if not self.abs_tol > 0:
            raise ValueError("abs_tol must be > 0")
        if self.max_subdivisions < 1:
            raise ValueError("max_subdivisions must be >= 1")

    def tightened(self, factor: float) -> "QuadratureSettings":
        return QuadratureSettings(
            rel_tol=self.rel_tol * factor,
            abs_tol=self.abs_tol * factor,
            max_subdivisions=self.max_subdivisions,
            tail_cutoff=self.tail_cutoff,
        )


DEFAULT_SETTINGS = QuadratureSettings()


# -- special functions -------------------------------------------------------

def erf(x):
    return special.erf(x)


def erfc(x):
    """Complementary error function, 1 - erf(x)."""
    return special.erfc(x)


def erfcx(x):
    """Scaled complementary error function exp(x**2) * erfc(x)."""
    return special.erfcx(x)


# -- adaptive Gauss-Kronrod (7/15) ------------------------------------------

_XGK = np.array([
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
])
_WGK = np.array([
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
])
_WG = np.array([
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
])

# full 15-node rule on [-1, 1]
_NODES = np.concatenate([-_XGK[:-1], _XGK[::-1]])
_KWEIGHTS = np.concatenate([_WGK[:-1], _WGK[::-1]])
_GWEIGHTS = np.zeros(15)
# Gauss nodes are the odd-indexed Kronrod nodes (xgk[1], xgk[3], xgk[5], 0)
for _i, _w in zip((1, 3, 5), _WG[:3]):
    _GWEIGHTS[_i] = _w
    _GWEIGHTS[14 - _i] = _w
_GWEIGHTS[7] = _WG[3]

_EPS = np.finfo(float).eps
_INITIAL_PANELS = 4
_MIN_PANEL_WIDTH = 1e-13


def _panel_rule(values, half_width):
    """Kronrod estimate and QUADPACK-style error for each panel.

    ``values`` has shape (..., P, 15); ``half_width`` has shape (P,).
    """
    kron = (values * _KWEIGHTS).sum(-1) * half_width
    gauss = (values * _GWEIGHTS).sum(-1) * half_width
    mean = kron / (2.0 * half_width)
    resasc = (np.abs(values - mean[..., None]) * _KWEIGHTS).sum(-1) * half_width
    resabs = (np.abs(values) * _KWEIGHTS).sum(-1) * half_width
    err = np.abs(kron - gauss)
    with np.errstate(divide="ignore", invalid="ignore"):
        scaled = resasc * np.minimum(1.0, (200.0 * err / resasc) ** 1.5)
    err = np.where((resasc != 0) & (err != 0), scaled, err)
    err = np.maximum(err, 50.0 * _EPS * resabs)
    return kron, err


def integrate(
    f: Callable[[np.ndarray], np.ndarray],
    lo,
    hi,
    settings: QuadratureSettings | None = None,
    scale=1.0,
):
    """Adaptive quadrature of ``f`` over ``[lo, hi]``; ``hi`` may be ``inf``.

    ``lo``, ``hi`` and ``scale`` broadcast to a common batch shape B.  ``f`` is
    called with an array of shape ``B + (k,)`` and must return the same shape.
    Semi-infinite ranges use ``x = lo + scale * u / (1 - u)`` on ``u in [0, 1)``;
    ``scale`` should be of the order of the integrand's decay length.  All batch
    members share one panel refinement and convergence requires every member to
    meet ``max(abs_tol, rel_tol * |I|)``.

    Returns a float for scalar limits, otherwise an array of shape B.
    """
    settings = settings or DEFAULT_SETTINGS
    lo, hi, scale = np.broadcast_arrays(
        np.asarray(lo, dtype=float), np.asarray(hi, dtype=float), np.asarray(scale, dtype=float)
    )
    if np.any(hi < lo):
        raise ValueError("integration limits must satisfy lo <= hi")
    batch = lo.shape
    infinite = np.isinf(hi)
    width = np.where(infinite, 0.0, hi - lo)[..., None]
    lo_ = lo[..., None]
    scale_ = scale[..., None]
    inf_ = infinite[..., None]
    any_inf = bool(infinite.any())

    def mapped(u):
        # u: (k,) nodes on [0, 1)
        x = lo_ + width * u
        jac = np.broadcast_to(width, x.shape)
        if any_inf:
            x_inf = lo_ + scale_ * u / (1.0 - u)
            jac_inf = scale_ / (1.0 - u) ** 2
            x = np.where(inf_, x_inf, x)
            jac = np.where(inf_, jac_inf, jac)
        with np.errstate(invalid="ignore", over="ignore"):
            out = np.asarray(f(x), dtype=float) * jac
        # the Jacobian is zero for zero-width ranges, keep those at exactly 0
        return np.where(jac == 0.0, 0.0, out)

    def evaluate(a, b):
        centre = 0.5 * (a + b)
        half = 0.5 * (b - a)
        u = (centre[:, None] + half[:, None] * _NODES).ravel()
        vals = mapped(u).reshape(batch + (a.size, 15))
        return _panel_rule(vals, half)

    edges = np.linspace(0.0, 1.0, _INITIAL_PANELS + 1)
    a, b = edges[:-1], edges[1:]
    est, err = evaluate(a, b)
    while True:
        total = est.sum(-1)
        error = err.sum(-1)
        tol = np.maximum(settings.abs_tol, settings.rel_tol * np.abs(total))
        if np.all(error <= tol):
            break
        if not np.all(np.isfinite(error)):
            raise NonConvergence("integrand produced non-finite values")
        ratio = err / tol[..., None]
        share = ratio.reshape(-1, a.size).max(axis=0) if batch else ratio
        floor = settings.tail_cutoff * np.abs(total)[..., None]
        negligible = np.all((err <= floor).reshape(-1, a.size), axis=0)
        splittable = ((b - a) > _MIN_PANEL_WIDTH) & ~negligible
        # refine every panel carrying more than its fair share of the budget
        pick = splittable & (share * a.size > 1.0)
        if not pick.any():
            pick = splittable & (share >= share[splittable].max()) if splittable.any() else pick
        if not pick.any():
            # nothing left that can be refined: accept if roundoff-limited
            if np.all(error <= 100.0 * tol):
                break
            raise NonConvergence(
                f"quadrature stalled at error {float(np.max(error / tol)):.3g} x tolerance"
            )
        if a.size + int(pick.sum()) > settings.max_subdivisions:
            raise NonConvergence(
                f"max_subdivisions={settings.max_subdivisions} exhausted "
                f"(error {float(np.max(error / tol)):.3g} x tolerance)"
            )
        mid = 0.5 * (a[pick] + b[pick])
        new_a = np.concatenate([a[pick], mid])
        new_b = np.concatenate([mid, b[pick]])
        new_est, new_err = evaluate(new_a, new_b)
        keep = ~pick
        a = np.concatenate([a[keep], new_a])
        b = np.concatenate([b[keep], new_b])
        est = np.concatenate([est[..., keep], new_est], axis=-1)
        err = np.concatenate([err[..., keep], new_err], axis=-1)

    result = est.sum(-1)
    return float(result) if result.ndim == 0 else result


# -- interference Laplace transforms -----------------------------------------

class Measure(enum.Enum):
    """Integration measure of an interferer field: along a line or over an area."""

    ONE = "1"
    X = "x"


class PowerLawKernel(NamedTuple):
    """d(x) = power_gain * x**(-alpha) / m, in linear units."""

    power_gain: float
    alpha: float
    m: int

    def __call__(self, x):
        return self.power_gain * np.power(x, -self.alpha) / self.m

    def inverse(self, x):
        return self.m * np.power(x, self.alpha) / self.power_gain


@dataclass(frozen=True)
class KFunctionSpec:
    """Descriptor for exp(-2 a int_b^c [1 - (1 + j d(x))^-e] f(x) dx).

    ``prefactor_a`` carries any factor pi (area fields pass pi * lambda);
    the constant 2 is always applied.  ``prefactor_a``, ``lower_b`` and
    ``upper_c`` may be arrays that broadcast against the transform variable.
    """

    prefactor_a: object
    lower_b: object
    upper_c: object
    kernel_d: PowerLawKernel
    exponent_e: int
    measure_f: Measure

    def __post_init__(self):
        a = np.asarray(self.prefactor_a, dtype=float)
        b = np.asarray(self.lower_b, dtype=float)
        c = np.asarray(self.upper_c, dtype=float)
        if np.any(a < 0):
            raise ValueError("prefactor_a must be >= 0")
        if np.any(b < 0):
            raise ValueError("lower_b must be >= 0")
        if np.any(c < b):
            raise ValueError("upper_c must be >= lower_b")
        if int(self.exponent_e) != self.exponent_e or self.exponent_e < 1:
            raise ValueError("exponent_e must be a positive integer")
        k = self.kernel_d
        if not (k.power_gain > 0 and k.alpha > 0 and k.m >= 1):
            raise ValueError("kernel_d needs power_gain > 0, alpha > 0, m >= 1")


def _rising(e: int, n: int) -> float:
    return float(math.prod(range(e, e + n))) if n else 1.0


def _g_integrand(spec: KFunctionSpec, j, order: int):
    """Integrand of the n-th j-derivative of the exponent g(j), n = 0..order.

    Returns a callable of x giving shape (order + 1,) + broadcast shape.
    """
    e = int(spec.exponent_e)
    kern = spec.kernel_d
    area = spec.measure_f is Measure.X
    coeffs = np.array([_rising(e, n) * (-1.0) ** (n + 1) for n in range(order + 1)])
    coeffs = coeffs.reshape((order + 1,) + (1,) * (np.ndim(j) + 1))

    def integrand(x):
        # x arrives as (order + 1,) + B + (k,); rows are identical
        x0 = x[0]
        inv_d = kern.inverse(x0)
        jd = j[..., None] / inv_d
        base = -np.expm1(-e * np.log1p(jd))  # 1 - (1 + j d)^-e
        if order == 0:
            out = base[None]
        else:
            # d^n (1 + j d)^(-e-n) written as (d / (1 + j d))^n (1 + j d)^-e
            ratio = 1.0 / (inv_d + j[..., None])
            tail = np.exp(-e * np.log1p(jd))
            powers = [base] + [ratio**n * tail for n in range(1, order + 1)]
            # n >= 1 terms carry -(-1)^n (e)_n; n = 0 is the plain base
            out = np.stack(powers)
            out[1:] *= coeffs[1:]
        if area:
            out = out * x0
        return out

    return integrand


def _log_beta_primitive(n: int, w, t):
    """int_0^w x^n / (1 - x) dx, where t = w / (1 - w) is passed for accuracy near 1."""
    w = np.asarray(w, dtype=float)
    small = np.minimum(w, 0.5)
    series = np.zeros_like(small)
    for k in range(n + 1, n + 64):
        series = series + small**k / k
    with np.errstate(divide="ignore", invalid="ignore"):
        large = np.log1p(t) - sum(w**i / i for i in range(1, n + 1))
    return np.where(w < 0.5, series, large)


def _power_beta_integral(p: float, q: float, alpha: float, z1, z2):
    """int_{z1}^{z2} u^p (1 + u^alpha)^-q du via incomplete beta functions.

    Substituting v = 1 / (1 + u^alpha) gives B(q - (p+1)/alpha, (p+1)/alpha)
    times a difference of regularized incomplete betas.  Returns ``None`` when
    the first beta parameter is negative (a divergent integrand at infinity).
    """
    bb = (p + 1.0) / alpha
    aa = q - bb
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        t1 = np.power(z1, alpha)
        t2 = np.power(z2, alpha)
        v1 = 1.0 / (1.0 + t1)
        v2 = 1.0 / (1.0 + t2)
        w1 = np.where(np.isinf(t1), 1.0, t1 / (1.0 + t1))
        w2 = np.where(np.isinf(t2), 1.0, t2 / (1.0 + t2))
    if aa > 1e-12:
        # v1 >= v2; near v = 1 only w = 1 - v is accurate, so use the
        # complementary function there
        lower = special.betainc(aa, bb, v2)
        direct = special.betainc(aa, bb, v1) - lower
        comp = special.betainc(bb, aa, w2) - special.betainc(bb, aa, w1)
        mixed = (1.0 - special.betainc(bb, aa, w1)) - lower
        diff = np.where(v2 > 0.5, comp, np.where(v1 > 0.5, mixed, direct))
        return special.beta(aa, bb) * diff / alpha
    n_int = round(bb) - 1
    if abs(aa) <= 1e-12 and abs(bb - round(bb)) < 1e-12:
        # int_{w1}^{w2} w^N / (1 - w) dw with w = 1 - v
        return (_log_beta_primitive(n_int, w2, t2) - _log_beta_primitive(n_int, w1, t1)) / alpha
    return None


def _g_closed_form(spec: KFunctionSpec, a, b, c, j, order: int):
    """Closed-form g^(n)(j) / (2a) for n = 0..order, or ``None`` if unavailable."""
    e = int(spec.exponent_e)
    kern = spec.kernel_d
    alpha = float(kern.alpha)
    lift = 1.0 if spec.measure_f is Measure.X else 0.0
    pm = kern.power_gain / kern.m
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        reach = j * pm * np.power(b, -alpha)
    # once j * d(b) is negligible the kernel is linear in j over the whole range
    positive = (j > 0) & ~(reach < 1e-12)
    jp = np.where(positive, j, 1.0)
    s = np.power(jp * pm, 1.0 / alpha)
    with np.errstate(divide="ignore", invalid="ignore"):
        z1 = b / s
        z2 = c / s
    log_size = (1.0 + lift) * np.log(s)

    def at_zero(n):
        ex = lift + 1.0 - alpha * n
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            if ex == 0:
                val = np.log(c / b)
            else:
                val = (np.where(np.isinf(c), 0.0 if ex < 0 else np.inf, np.power(c, ex))
                       - np.power(b, ex)) / ex
        return pm**n * val

    def scaled(part, n):
        with np.errstate(over="ignore", invalid="ignore"):
            return np.where(part == 0, 0.0, part * np.exp(log_size - n * np.log(jp)))

    out = np.empty((order + 1,) + j.shape)
    base = 0.0
    for k in range(e):
        part = _power_beta_integral(alpha * k + lift, e, alpha, z1, z2)
        if part is None:
            return None
        base = base + math.comb(e, k) * part
    with np.errstate(invalid="ignore"):
        linear = np.where(j > 0, j * e * at_zero(1), 0.0)
    out[0] = np.where(positive, scaled(base, 0), linear)
    for n in range(1, order + 1):
        part = _power_beta_integral(alpha * e + lift, e + n, alpha, z1, z2)
        if part is None:
            return None
        coeff = _rising(e, n) * (-1.0) ** (n + 1)
        out[n] = coeff * np.where(positive, scaled(part, n), at_zero(n))
    return out


def log_laplace_derivatives(
    spec: KFunctionSpec,
    j,
    order: int = 0,
    settings: QuadratureSettings | None = None,
    method: str = "auto",
) -> np.ndarray:
    """g(j), g'(j), ..., g^(order)(j) where the transform is exp(-g(j)).

    ``method="auto"`` uses the incomplete-beta closed form and falls back to
    adaptive quadrature; ``"quadrature"`` forces the quadrature path.
    Output shape is (order + 1,) + broadcast(j, spec arrays).
    """
    if order < 0 or order > MAX_DERIVATIVE_ORDER:
        raise UnsupportedOrder(f"derivative order {order} outside 0..{MAX_DERIVATIVE_ORDER}")
    if method not in ("auto", "quadrature"):
        raise ValueError("method must be 'auto' or 'quadrature'")
    j = np.asarray(j, dtype=float)
    if np.any(j < 0):
        raise ValueError("transform variable j must be >= 0")
    a, b, c, j = np.broadcast_arrays(
        np.asarray(spec.prefactor_a, dtype=float),
        np.asarray(spec.lower_b, dtype=float),
        np.asarray(spec.upper_c, dtype=float),
        j,
    )
    vals = _g_closed_form(spec, a, b, c, j, order) if method == "auto" else None
    if vals is None:
        kern = spec.kernel_d
        # knee of the kernel: j d(x) = 1
        knee = np.power(j * kern.power_gain / kern.m, 1.0 / kern.alpha)
        scale = np.maximum(np.maximum(knee, b), 1e-12)
        integrand = _g_integrand(spec, j, order)
        shape = (order + 1,) + j.shape
        lo = np.broadcast_to(b, shape)
        hi = np.broadcast_to(c, shape)
        sc = np.broadcast_to(scale, shape)
        vals = integrate(integrand, lo, hi, settings or DEFAULT_SETTINGS, scale=sc)
    with np.errstate(invalid="ignore"):
        vals = np.asarray(vals) * 2.0 * a
    # a == 0 means no interferers, even if the integral diverges
    return np.where(a == 0, 0.0, vals)


def _bell(g: np.ndarray) -> np.ndarray:
    """Derivatives of exp(-g) from derivatives of g (exponential Bell recursion)."""
    order = g.shape[0] - 1
    z = np.empty_like(g)
    z[0] = np.exp(-g[0])
    for n in range(1, order + 1):
        acc = np.zeros_like(g[0])
        for k in range(n):
            acc = acc + math.comb(n - 1, k) * g[k + 1] * z[n - 1 - k]
        z[n] = -acc
    return z


def laplace_derivatives(
    specs: Sequence[KFunctionSpec],
    j,
    order: int,
    settings: QuadratureSettings | None = None,
    extra_g: np.ndarray | None = None,
    method: str = "auto",
) -> np.ndarray:
    """All derivatives 0..order of the product of the specs' transforms.

    Besides :class:`KFunctionSpec`, any field with a
    ``log_laplace_derivatives(j, order)`` method (such as
    :class:`LineProcessField`) may appear in ``specs``.  ``extra_g`` adds a
    precomputed exponent (and its derivatives) to the sum, e.g. a
    deterministic noise term g(j) = j * sigma^2.
    """
    total = None
    for spec in specs:
        if isinstance(spec, KFunctionSpec):
            g = log_laplace_derivatives(spec, j, order, settings, method)
        else:
            g = spec.log_laplace_derivatives(j, order)
        total = g if total is None else total + g
    if total is None:
        total = np.zeros((order + 1,) + np.shape(j))
    if extra_g is not None:
        total = total + extra_g
    return _bell(total)


def k_function(spec: KFunctionSpec, j, settings: QuadratureSettings | None = None,
               method: str = "auto"):
    """Laplace transform of one interferer field at ``j`` (exactly 1 at j = 0)."""
    out = np.exp(-log_laplace_derivatives(spec, j, 0, settings, method)[0])
    return float(out) if out.ndim == 0 else out


def k_function_derivative(
    spec: KFunctionSpec, j, order: int, settings: QuadratureSettings | None = None,
    method: str = "auto",
):
    """order-th derivative of :func:`k_function` with respect to ``j``.

    Orders up to ``exponent_e - 1`` are what the gamma-series coverage needs;
    anything up to :data:`MAX_DERIVATIVE_ORDER` is accepted.
    """
    out = laplace_derivatives([spec], j, order, settings, method=method)[order]
    return float(out) if out.ndim == 0 else out


def product_laplace_derivative(
    specs: Sequence[KFunctionSpec], j, order: int, settings: QuadratureSettings | None = None,
    method: str = "auto",
):
    """order-th derivative of the product of independent interferer transforms."""
    out = laplace_derivatives(specs, j, order, settings, method=method)[order]
    return float(out) if out.ndim == 0 else out


# -- interferers on a Poisson line process -------------------------------------

def _gl_panels(panels: int, nodes: int):
    """Composite Gauss-Legendre nodes and weights on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(nodes)
    edges = np.linspace(0.0, 1.0, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[:-1] + edges[1:])
    return (mid[:, None] + half[:, None] * x).ravel(), (half[:, None] * w).ravel()


# trapezoid step in log distance for the integral over lines
_LINE_STEP = 0.1


@dataclass(frozen=True, eq=False)
class LineProcessField:
    """Interferers on the lines of a Poisson line process, seen from the origin.

    Lines have intensity ``line_density`` on (rho, theta) in R x [0, pi) and
    carry 1-D PPPs of ``point_density`` points per km.  Each point has its own
    log-normal shadowing and Nakagami fading with ``kernel.m``.  Unlike the
    planar approximation this keeps the clustering of interferers on roads.
    With a finite ``radius`` only points within that distance count, which is
    required when ``kernel.alpha <= 2``.

    The exponent g(j) = 2 pi lambda_l int_0^R (1 - exp(-h(rho, j))) drho, with
    h the exponent of a single line at distance rho, is tabulated over log j
    on first use and interpolated in log-log coordinates.
    """

    line_density: float
    point_density: float
    kernel: PowerLawKernel
    shadow_std_db: float
    shadow_mean_db: float = 0.0
    radius: float = math.inf
    hermite_nodes: int = 40
    per_decade: int = 8

    def __post_init__(self):
        if self.line_density < 0 or self.point_density < 0:
            raise ValueError("densities must be >= 0")
        if not math.isfinite(self.radius) and self.kernel.alpha <= 2:
            raise ValueError("alpha <= 2 needs a finite radius")
        if not self.radius > 0:
            raise ValueError("radius must be > 0")

    # single-point kernel average over shadowing, as psi_n(z) = y^n Phi^(n)(y)
    def _psi_table(self):
        e = int(self.kernel.m)
        cm = self.kernel.power_gain / self.kernel.m
        x, w = np.polynomial.hermite_e.hermegauss(self.hermite_nodes)
        w = w / w.sum()
        to_np = math.log(10.0) / 10.0
        ln_chi = (self.shadow_mean_db + self.shadow_std_db * x) * to_np
        spread = 7.0 * self.shadow_std_db * to_np
        lz = np.arange(math.log(1e-14) - spread, math.log(1e14) + spread, 0.002)
        z = np.exp(lz)[:, None] * np.exp(ln_chi)[None, :]  # c chi y
        tab = np.empty((MAX_DERIVATIVE_ORDER + 1, lz.size))
        tab[0] = (-np.expm1(-e * np.log1p(z))) @ w
        for n in range(1, MAX_DERIVATIVE_ORDER + 1):
            r = z / (1.0 + z)
            tab[n] = -((-1.0) ** n) * _rising(e, n) * (r**n * np.exp(-e * np.log1p(z))) @ w
        # small-z limits: Phi ~ e c E[chi] y, psi_n ~ -(-1)^n (e)_n E[chi^n] (c y)^n
        moments = [float(np.exp(n * ln_chi) @ w) for n in range(MAX_DERIVATIVE_ORDER + 1)]
        return lz - math.log(cm), tab, e, cm, moments

    def _psi(self, n: int, ly):
        lgrid, tab, e, cm, mom = self._psi_cache
        out = np.interp(ly, lgrid, tab[n], right=1.0 if n == 0 else 0.0)
        low = ly < lgrid[0]
        if np.any(low):
            cy = cm * np.exp(np.minimum(ly, lgrid[0]))
            lead = e * mom[1] * cy if n == 0 else -((-1.0) ** n) * _rising(e, n) * mom[n] * cy**n
            out = np.where(low, lead, out)
        return out

    def _g_at(self, lj: float):
        """g and its derivatives 0..3 at j = exp(lj) by direct quadrature."""
        alpha = float(self.kernel.alpha)
        lam = self.point_density
        tw, ww = _gl_panels(32, 6)
        if math.isfinite(self.radius):
            # rho = R / cosh(v): the chord half-angle acosh(R / rho) is just v
            # composite Gauss-Legendre: the integrand is not even about v = 0
            tv, wv = _gl_panels(int(round(3.0 / _LINE_STEP)), 8)
            v, wv = 30.0 * tv, 30.0 * wv
            rho = self.radius / np.cosh(v)
            W = v
            drho = self.radius * np.tanh(v) / np.cosh(v) * wv
        else:
            h_u = _LINE_STEP
            scale = math.exp(lj / alpha) * (self.kernel.power_gain / self.kernel.m) ** (1.0 / alpha)
            # the far tail decays like rho^(2 - alpha)
            u = np.arange(math.log(scale) - 25.0, math.log(scale) + min(30.0 / (alpha - 2.0), 200.0), h_u)
            rho = np.exp(u)
            W = np.full(rho.shape, 40.0 / (alpha - 1.0))
            drho = rho * h_u
        wnode = W[:, None] * tw[None, :]
        wweight = W[:, None] * ww[None, :] * np.cosh(wnode)
        ly = lj - alpha * (np.log(rho)[:, None] + np.log(np.cosh(wnode)))
        j = math.exp(lj)
        h = np.empty((MAX_DERIVATIVE_ORDER + 1, rho.size))
        for n in range(MAX_DERIVATIVE_ORDER + 1):
            h[n] = 2.0 * lam * rho * (self._psi(n, ly) * wweight).sum(axis=1) / j**n
        G = -_bell(h)
        G[0] = -np.expm1(-h[0])
        return 2.0 * math.pi * self.line_density * (G * drho).sum(axis=1)

    @property
    def _psi_cache(self):
        cached = self.__dict__.get("_psi_data")
        if cached is None:
            cached = self._psi_table()
            object.__setattr__(self, "_psi_data", cached)
        return cached

    @property
    def _table(self):
        cached = self.__dict__.get("_g_data")
        if cached is None:
            cm = self.kernel.power_gain / self.kernel.m
            # centre the grid where the kernel knee sits at unit distance
            centre = -math.log(cm)
            lj = np.arange(centre - 15 * math.log(10.0), centre + 15 * math.log(10.0) + 1e-9,
                           math.log(10.0) / self.per_decade)
            vals = np.stack([self._g_at(x) for x in lj], axis=1)
            sign = np.sign(vals[:, lj.size // 2])
            with np.errstate(divide="ignore"):
                logs = np.log(np.abs(vals))
            logs = np.maximum(logs, -700.0)
            splines = [interpolate.CubicSpline(lj, y) for y in logs]
            cached = (lj, logs, sign, splines)
            object.__setattr__(self, "_g_data", cached)
        return cached

    def log_laplace_derivatives(self, j, order: int = 0, settings=None, method: str = "auto") -> np.ndarray:
        """g(j), ..., g^(order)(j) for the transform exp(-g(j)); j = 0 gives g = 0."""
        if order < 0 or order > MAX_DERIVATIVE_ORDER:
            raise UnsupportedOrder(f"derivative order {order} outside 0..{MAX_DERIVATIVE_ORDER}")
        j = np.asarray(j, dtype=float)
        if np.any(j < 0):
            raise ValueError("transform variable j must be >= 0")
        out = np.zeros((order + 1,) + j.shape)
        if self.line_density == 0 or self.point_density == 0:
            return out
        lj_grid, logs, sign, splines = self._table
        with np.errstate(divide="ignore"):
            lj = np.log(j)
        # derivatives at j = 0 are those at the grid's lower end (they only
        # ever appear multiplied by a power of j)
        lj_eval = np.where(j > 0, lj, lj_grid[0])
        for n in range(order + 1):
            y = logs[n]
            lo_slope = (y[1] - y[0]) / (lj_grid[1] - lj_grid[0])
            hi_slope = (y[-1] - y[-2]) / (lj_grid[-1] - lj_grid[-2])
            inner = splines[n](np.clip(lj_eval, lj_grid[0], lj_grid[-1]))
            inner = np.where(lj_eval < lj_grid[0], y[0] + lo_slope * (lj_eval - lj_grid[0]), inner)
            inner = np.where(lj_eval > lj_grid[-1], y[-1] + hi_slope * (lj_eval - lj_grid[-1]), inner)
            out[n] = sign[n] * np.exp(inner)
        out[0] = np.where(j > 0, out[0], 0.0)
        return out


# -- finite-difference cross-check --------------------------------------------

def _central_difference(f, x, h, order):
    # sum_i (-1)^i C(n, i) f(x + (n/2 - i) h) / h^n, error O(h^2)
    total = 0.0
    for i in range(order + 1):
        total += (-1) ** i * math.comb(order, i) * f(x + (order / 2.0 - i) * h)
    return total / h**order


def richardson_derivative(f, x: float, order: int = 1, step: float = 0.1, levels: int = 6):
    """Richardson-extrapolated central finite difference of ``f`` at ``x``.

    Steps halve at each level; the Neville table eliminates even powers of h.
    Returns ``(estimate, error_estimate)``.
    """
    if order < 1:
        raise ValueError("order must be >= 1")
    table = [[_central_difference(f, x, step / 2**i, order)] for i in range(levels)]
    best, best_err = table[0][0], math.inf
    for i in range(1, levels):
        for k in range(1, i + 1):
            factor = 4.0**k
            prev = table[i][k - 1]
            val = prev + (prev - table[i - 1][k - 1]) / (factor - 1.0)
            table[i].append(val)
            err = max(abs(val - prev), abs(val - table[i - 1][k - 1]))
            if err < best_err:
                best, best_err = val, err
    return best, best_err
