"""Analytical association probabilities, serving-distance laws, SE and coverage.

Everything is evaluated in the displaced (shadowing-free) domain: serving and
interferer distances below are displaced distances, and the point densities
come from :func:`cv2x.channel.transform_intensities`.

Association is decided on long-term power.  With
``A = P_M G_M / (P_S G_S0)`` and ``B = G_V1 / G_V0`` the DL goes to the MBS when
``A x_M^-alpha_M > x_S^-alpha_S`` and the UL when ``B x_M^-alpha_M > x_S^-alpha_S``.
Because ``A > B`` the (UL MBS, DL SBS) combination is impossible, leaving

* case 1: UL MBS, DL MBS
* case 2: UL SBS, DL MBS
* case 4: UL SBS, DL SBS

Coupled access keeps UL and DL on the DL choice (``COUPLED_M`` / ``COUPLED_S``).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .channel import Direction, NetworkConfig, TransformedIntensities, transform_intensities
from .numerics import (
    KFunctionSpec,
    LineProcessField,
    Measure,
    PowerLawKernel,
    QuadratureSettings,
    _bell,
    erfcx,
    integrate,
    laplace_derivatives,
    log_laplace_derivatives,
)

__all__ = [
    "AssociationCase",
    "Tier",
    "Mode",
    "AssociationConstants",
    "Alphas",
    "ConservationViolation",
    "UnsupportedPair",
    "AnalysisOptions",
    "SEResult",
    "Model",
    "assoc_prob",
    "assoc_prob_sum_check",
    "distance_pdf",
    "se_link",
    "system_average_se",
    "coverage_prob",
]


class AssociationCase(str, enum.Enum):
    CASE1 = "1"
    CASE2 = "2"
    CASE3 = "3"
    CASE4 = "4"
    COUPLED_M = "M"
    COUPLED_S = "S"


class Tier(str, enum.Enum):
    MBS = "MBS"
    SBS = "SBS"


class Mode(str, enum.Enum):
    DECOUPLED = "decoupled"
    COUPLED = "coupled"


class ConservationViolation(ArithmeticError):
    pass


class UnsupportedPair(ValueError):
    pass


@dataclass(frozen=True)
class AssociationConstants:
    a_ms: float
    b_ms: float

    def __post_init__(self):
        if not (self.b_ms > 0 and self.a_ms > self.b_ms):
            raise ValueError("association constants need a_ms > b_ms > 0")

    @classmethod
    def from_config(cls, config: NetworkConfig) -> "AssociationConstants":
        return cls(config.a_ms, config.b_ms)


class Alphas(NamedTuple):
    alpha_m: float
    alpha_s: float


@dataclass(frozen=True)
class AnalysisOptions:
    """Numerical and modelling switches.

    case2_dl_sbs selects how typical-road SBSs interfere with a Case 2 DL:
      * ``"exact"``: SBSs beyond x2 form a PPP, and the window (x1, x2] holds at
        least one SBS (the one that attracts the UL); the mixture is evaluated
        in closed form.
      * ``"extended"``: every SBS beyond x1 treated as a PPP.
      * ``"window"``: only SBSs in (x1, x2) as a PPP.
    truncate_planar_alpha2: cut off-road fields with alpha_s <= 2 at the region
    radius, where the planar interference integral would diverge.
    other_roads: ``"ppp"`` replaces the nodes on other roads by a planar PPP of
    density pi lambda_l lambda; ``"cox"`` keeps them on a Poisson line process,
    which matters when roads are sparse.
    """

    case2_dl_sbs: str = "exact"
    truncate_planar_alpha2: bool = True
    other_roads: str = "ppp"
    outer: QuadratureSettings = field(default_factory=lambda: QuadratureSettings(rel_tol=1e-6, abs_tol=1e-10))
    middle: QuadratureSettings = field(default_factory=lambda: QuadratureSettings(rel_tol=1e-7, abs_tol=1e-10))
    inner: QuadratureSettings = field(default_factory=lambda: QuadratureSettings(rel_tol=1e-9, abs_tol=1e-13))
    t_chunk: float = 30.0
    t_cap: float = 300.0

    def __post_init__(self):
        if self.case2_dl_sbs not in ("exact", "extended", "window"):
            raise ValueError("case2_dl_sbs must be 'exact', 'extended' or 'window'")
        if self.other_roads not in ("ppp", "cox"):
            raise ValueError("other_roads must be 'ppp' or 'cox'")
        if not 0 < self.t_chunk <= self.t_cap:
            raise ValueError("need 0 < t_chunk <= t_cap")


class SEResult(NamedTuple):
    value: float
    diverged: bool = False


# -- association probabilities -------------------------------------------------

def _exclusion_integral(c: float, lam_M: float, lam_S: float, alphas: Alphas,
                        closed_form: bool | None = None,
                        settings: QuadratureSettings | None = None) -> float:
    """P(x_S^-alpha_S > c x_M^-alpha_M) = int 2 lam_S exp(-pi lam_M c^(2/a_M) x^(2 a_S/a_M) - 2 lam_S x) dx."""
    am, as_ = alphas
    if lam_S == 0:
        return 0.0
    if lam_M == 0:
        return 1.0
    kappa = math.pi * lam_M * c ** (2.0 / am)
    if closed_form is None:
        closed_form = am == as_
    if closed_form:
        if am != as_:
            raise ValueError("closed form needs alpha_m == alpha_s")
        return float(lam_S * math.sqrt(math.pi / kappa) * erfcx(lam_S / math.sqrt(kappa)))
    p = 2.0 * as_ / am
    scale = min(1.0 / (2.0 * lam_S), kappa ** (-1.0 / p))
    val = integrate(
        lambda x: 2.0 * lam_S * np.exp(-kappa * x**p - 2.0 * lam_S * x),
        0.0, math.inf, settings or QuadratureSettings(rel_tol=1e-10, abs_tol=1e-14), scale=scale,
    )
    return float(val)


def assoc_prob(case: AssociationCase | str, intensities: TransformedIntensities,
               constants: AssociationConstants, alphas: Alphas,
               closed_form: bool | None = None) -> float:
    """Joint UL/DL association probability of one case.

    ``closed_form=None`` uses the erfc form whenever the two pathloss exponents
    match and the quadrature path otherwise; ``False`` forces quadrature.
    """
    case = AssociationCase(case)
    if case is AssociationCase.CASE3:
        return 0.0
    I = lambda c: _exclusion_integral(c, intensities.lambda_M, intensities.lambda_S, alphas, closed_form)
    if case is AssociationCase.CASE1:
        return 1.0 - I(constants.b_ms)
    if case is AssociationCase.CASE2:
        return I(constants.b_ms) - I(constants.a_ms)
    if case in (AssociationCase.CASE4, AssociationCase.COUPLED_S):
        return I(constants.a_ms)
    return 1.0 - I(constants.a_ms)


def assoc_prob_sum_check(intensities: TransformedIntensities, constants: AssociationConstants,
                         alphas: Alphas, closed_form: bool | None = None,
                         tol: float = 1e-6) -> tuple[float, float, float]:
    p = tuple(assoc_prob(c, intensities, constants, alphas, closed_form)
              for c in (AssociationCase.CASE1, AssociationCase.CASE2, AssociationCase.CASE4))
    if abs(sum(p) - 1.0) > tol or min(p) < -tol:
        raise ConservationViolation(f"case probabilities {p} do not sum to 1")
    return p


# -- serving distance laws -------------------------------------------------------

_SUPPORTED_PAIRS = {
    (AssociationCase.CASE1, Tier.MBS),
    (AssociationCase.CASE2, Tier.MBS),
    (AssociationCase.CASE2, Tier.SBS),
    (AssociationCase.CASE4, Tier.SBS),
    (AssociationCase.COUPLED_M, Tier.MBS),
    (AssociationCase.COUPLED_S, Tier.SBS),
}


def _unnormalized_pdf(case, serving, x, lam_M, lam_S, constants, alphas):
    am, as_ = alphas
    A, B = constants.a_ms, constants.b_ms
    x = np.asarray(x, dtype=float)
    if serving is Tier.MBS:
        f = 2.0 * math.pi * lam_M * x * np.exp(-math.pi * lam_M * x**2)
        x1 = (x**am / A) ** (1.0 / as_)
        x2 = (x**am / B) ** (1.0 / as_)
        if case is AssociationCase.CASE1:
            return np.exp(-2.0 * lam_S * x2) * f
        if case is AssociationCase.CASE2:
            return (np.exp(-2.0 * lam_S * x1) - np.exp(-2.0 * lam_S * x2)) * f
        return np.exp(-2.0 * lam_S * x1) * f
    f = 2.0 * lam_S * np.exp(-2.0 * lam_S * x)
    y = x ** (2.0 * as_ / am)
    low = np.exp(-math.pi * lam_M * A ** (2.0 / am) * y)
    if case is AssociationCase.CASE2:
        return (np.exp(-math.pi * lam_M * B ** (2.0 / am) * y) - low) * f
    return low * f


def distance_pdf(case: AssociationCase | str, serving: Tier | str, x,
                 intensities: TransformedIntensities, constants: AssociationConstants,
                 alphas: Alphas):
    """Density of the serving displaced distance given the association case."""
    case, serving = AssociationCase(case), Tier(serving)
    if (case, serving) not in _SUPPORTED_PAIRS:
        raise UnsupportedPair(f"no serving-distance law for ({case.value}, {serving.value})")
    p = assoc_prob(case, intensities, constants, alphas)
    if p <= 0:
        raise ZeroDivisionError(f"case {case.value} has zero probability")
    out = _unnormalized_pdf(case, serving, x, intensities.lambda_M, intensities.lambda_S,
                            constants, alphas) / p
    return float(out) if np.ndim(out) == 0 else out


# -- conditional coverage --------------------------------------------------------

@dataclass(frozen=True)
class _Link:
    """Desired link, serving-distance law and interferer fields of one (case, direction)."""

    serving: Tier
    power_gain: float
    alpha: float
    m: int
    specs: Callable[[np.ndarray], list]
    # optional window field that must hold at least one point: x -> (spec, empty probability)
    window: Callable[[np.ndarray], tuple] | None = None


class Model:
    """Analytical evaluator bound to one configuration."""

    def __init__(self, config: NetworkConfig, options: AnalysisOptions | None = None):
        self.config = config
        self.options = options or AnalysisOptions()
        self.intensities = transform_intensities(config)
        self.constants = AssociationConstants.from_config(config)
        self.alphas = Alphas(config.alpha_m, config.alpha_s)
        self._cache: dict = {}
        self._line_fields: dict = {}

    # association
    def assoc_prob(self, case, closed_form: bool | None = None) -> float:
        return assoc_prob(case, self.intensities, self.constants, self.alphas, closed_form)

    def assoc_probs(self) -> tuple[float, float, float]:
        return assoc_prob_sum_check(self.intensities, self.constants, self.alphas)

    def distance_pdf(self, case, serving, x):
        return distance_pdf(case, serving, x, self.intensities, self.constants, self.alphas)

    # fields
    def _planar_limit(self, alpha: float) -> float:
        if alpha <= 2.0 and self.options.truncate_planar_alpha2:
            return self.config.region_radius_km
        return math.inf

    def _other_roads(self, density: float, power_gain: float, alpha: float, m: int,
                     shadow: tuple[float, float], fallback: Callable[[], KFunctionSpec]):
        """Field of nodes on the non-typical roads, as a planar PPP or a line process."""
        if self.options.other_roads == "ppp":
            return fallback()
        key = (density, power_gain, alpha, m, shadow)
        if key not in self._line_fields:
            # alpha <= 2 diverges without a cut-off, whatever truncate_planar_alpha2 says
            radius = self.config.region_radius_km if alpha <= 2.0 else math.inf
            self._line_fields[key] = LineProcessField(
                self.config.lambda_l, density, PowerLawKernel(power_gain, alpha, m),
                shadow[0], shadow[1], radius)
        return self._line_fields[key]

    def _link(self, case: AssociationCase, direction: Direction) -> _Link:
        c, it, k = self.config, self.intensities, self.constants
        am, as_ = self.alphas
        A, B = k.a_ms, k.b_ms
        serving = Tier.MBS if case in (AssociationCase.CASE1, AssociationCase.COUPLED_M) or (
            case is AssociationCase.CASE2 and direction is Direction.DL) else Tier.SBS
        if case is AssociationCase.CASE3:
            raise UnsupportedPair("case 3 never occurs")
        if case is AssociationCase.COUPLED_S:
            case = AssociationCase.CASE4

        x1 = lambda x: (x**am / A) ** (1.0 / as_)
        x2 = lambda x: (x**am / B) ** (1.0 / as_)
        s_planar = self._planar_limit(as_)

        def line(a, b, pg, alpha, m, upper=math.inf):
            return KFunctionSpec(a, b, upper, PowerLawKernel(pg, alpha, m), m, Measure.ONE)

        def plane(a, pg, alpha, m, upper):
            return KFunctionSpec(math.pi * a, 0.0, upper, PowerLawKernel(pg, alpha, m), m, Measure.X)

        pm, ps, pv = c.p_m * c.g_m, c.p_s * c.g_s0, c.p_v
        shadow_s1 = (c.shadow_std_s1_db, c.shadow_mean_s1_db)
        s1 = lambda: self._other_roads(
            c.lambda_s, c.p_s * c.g_s1, as_, c.m_s1, shadow_s1,
            lambda: plane(it.lambda_Sa, c.p_s * c.g_s1, as_, c.m_s1, s_planar))
        va = self._other_roads(c.lambda_v, pv * c.g_v1, as_, c.m_v1, shadow_s1,
                               lambda: plane(it.lambda_Va, pv * c.g_v1, as_, c.m_v1, s_planar))

        def mbs_field(lower):
            return KFunctionSpec(math.pi * it.lambda_M, lower, math.inf,
                                 PowerLawKernel(pm, am, c.m_m), c.m_m, Measure.X)

        if direction is Direction.DL and serving is Tier.MBS:
            def specs(x, lower_sbs):
                return [mbs_field(x), line(it.lambda_S, lower_sbs, ps, as_, c.m_s0), s1()]

            window = None
            if case is AssociationCase.CASE1:
                build = lambda x: specs(x, x2(x))
            elif case is AssociationCase.COUPLED_M:
                build = lambda x: specs(x, x1(x))
            else:
                mode = self.options.case2_dl_sbs
                if mode == "extended":
                    build = lambda x: specs(x, x1(x))
                elif mode == "window":
                    def build(x):
                        out = specs(x, x1(x))
                        out[1] = line(it.lambda_S, x1(x), ps, as_, c.m_s0, upper=x2(x))
                        return out
                else:
                    build = lambda x: specs(x, x2(x))

                    def window(x):
                        lo, hi = x1(x), x2(x)
                        empty = np.exp(-2.0 * it.lambda_S * (hi - lo))
                        return line(it.lambda_S, lo, ps, as_, c.m_s0, upper=hi), empty
            return _Link(Tier.MBS, pm, am, c.m_m, build, window)

        if direction is Direction.DL:
            def build(x):
                # MBSs cannot be closer than the DL association boundary
                return [mbs_field(A ** (1.0 / am) * x ** (as_ / am)),
                        line(it.lambda_S, x, ps, as_, c.m_s0), s1()]
            return _Link(Tier.SBS, ps, as_, c.m_s0, build)

        if serving is Tier.SBS:
            pg0, pg1 = pv * c.g_v0, pv * c.g_v1

            def build(x):
                return [
                    line(it.lambda_V, x, pg0, as_, c.m_v0),
                    va,
                ]
            return _Link(Tier.SBS, pg0, as_, c.m_v0, build)

        pg1 = pv * c.g_v1
        m_planar = self._planar_limit(am)

        va_m = self._other_roads(c.lambda_v, pg1, am, c.m_v1, (c.shadow_std_m_db, c.shadow_mean_m_db),
                                 lambda: plane(it.lambda_Va_m, pg1, am, c.m_v1, m_planar))

        def build(x):
            return [line(it.lambda_V_m, x, pg1, am, c.m_v1), va_m]
        return _Link(Tier.MBS, pg1, am, c.m_v1, build)

    def _pdf(self, case: AssociationCase, serving: Tier) -> Callable[[np.ndarray], np.ndarray]:
        if case is AssociationCase.COUPLED_S:
            case = AssociationCase.CASE4
        p = self.assoc_prob(case)
        it = self.intensities
        return lambda x: _unnormalized_pdf(case, serving, x, it.lambda_M, it.lambda_S,
                                           self.constants, self.alphas) / p

    def conditional_coverage(self, case, direction, x, theta, settings: QuadratureSettings | None = None):
        """P(SIR > theta | serving displaced distance x, case) for the given link."""
        case, direction = AssociationCase(case), Direction(direction)
        link = self._link(case, direction)
        x, theta = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(theta, dtype=float))
        return self._coverage(link, x, theta, settings or self.options.inner)

    def _coverage(self, link: _Link, x, theta, settings):
        m = int(link.m)
        order = m - 1
        j = m * theta * x**link.alpha / link.power_gain
        specs = link.specs(x)
        noise = self.config.noise_power
        extra = None
        if noise > 0:
            extra = np.zeros((order + 1,) + j.shape)
            extra[0] = j * noise
            if order >= 1:
                extra[1] = noise
        z = laplace_derivatives(specs, j, order, settings, extra_g=extra)
        if link.window is not None:
            wspec, empty = link.window(x)
            aw = _bell(log_laplace_derivatives(wspec, j, order, settings))
            full = -np.expm1(np.log(np.maximum(empty, 1e-300)))
            safe = np.where(full > 0, full, 1.0)
            w = np.empty_like(aw)
            w[0] = np.where(full > 0, (aw[0] - empty) / safe, aw[0])
            w[1:] = np.where(full > 0, aw[1:] / safe, aw[1:])
            z = np.stack([
                sum(math.comb(n, k) * z[k] * w[n - k] for k in range(n + 1)) for n in range(order + 1)
            ])
        cov = np.zeros_like(j)
        for k in range(order + 1):
            cov = cov + (-j) ** k / math.factorial(k) * z[k]
        return np.clip(cov, 0.0, 1.0)

    def _distance_scale(self, serving: Tier) -> float:
        it = self.intensities
        if serving is Tier.MBS:
            return 1.0 / math.sqrt(math.pi * it.lambda_M) if it.lambda_M > 0 else 1.0
        return 1.0 / (2.0 * it.lambda_S) if it.lambda_S > 0 else 1.0

    def coverage_given_case(self, case, direction, threshold) -> np.ndarray | float:
        """P(SIR > threshold | case) for linear thresholds (array allowed)."""
        case, direction = AssociationCase(case), Direction(direction)
        if self.assoc_prob(case) <= 0:
            return np.zeros_like(np.asarray(threshold, dtype=float)) if np.ndim(threshold) else 0.0
        link = self._link(case, direction)
        pdf = self._pdf(case, link.serving)
        theta = np.asarray(threshold, dtype=float)
        opts = self.options

        def integrand(x):
            th = theta[..., None] if theta.ndim else theta
            return pdf(x) * self._coverage(link, x, np.broadcast_to(th, x.shape), opts.inner)

        out = integrate(integrand, np.zeros(theta.shape), np.inf, opts.outer,
                        scale=self._distance_scale(link.serving))
        return out

    def coverage_prob(self, serving, direction, threshold):
        """Unconditional P(served by ``serving`` in ``direction`` and SIR > threshold)."""
        serving, direction = Tier(serving), Direction(direction)
        C1, C2, C4 = AssociationCase.CASE1, AssociationCase.CASE2, AssociationCase.CASE4
        terms = {
            (Tier.MBS, Direction.DL): (C1, C2),
            (Tier.MBS, Direction.UL): (C1,),
            (Tier.SBS, Direction.DL): (C4,),
            (Tier.SBS, Direction.UL): (C2, C4),
        }[(serving, direction)]
        total = 0.0
        for case in terms:
            p = self.assoc_prob(case)
            if p > 0:
                total = total + p * self.coverage_given_case(case, direction, threshold)
        return total

    def se_link(self, case, direction) -> SEResult:
        """Mean ln(1 + SIR) of one link given its association case."""
        case, direction = AssociationCase(case), Direction(direction)
        key = ("se", case, direction)
        if key in self._cache:
            return self._cache[key]
        if self.assoc_prob(case) <= 0:
            raise ZeroDivisionError(f"case {case.value} has zero probability")
        link = self._link(case, direction)
        pdf = self._pdf(case, link.serving)
        opts = self.options
        diverged = [False]

        def rate(x):
            # int_0^inf P(SIR > e^t - 1 | x) dt, extended in chunks until the tail is negligible
            cov = lambda t: self._coverage(link, x[..., None], np.expm1(t), opts.inner)
            lo = np.zeros(x.shape)
            total = integrate(cov, lo, lo + opts.t_chunk, opts.middle)
            t = opts.t_chunk
            while True:
                if t >= opts.t_cap:
                    diverged[0] = True
                    break
                piece = integrate(cov, lo + t, lo + t + opts.t_chunk, opts.middle)
                total = total + piece
                t += opts.t_chunk
                if np.all(piece <= opts.middle.rel_tol * np.maximum(total, 1e-300)):
                    break
            return pdf(x) * total

        val = float(integrate(rate, 0.0, math.inf, opts.outer, scale=self._distance_scale(link.serving)))
        res = SEResult(val, diverged[0])
        self._cache[key] = res
        return res

    def system_average_se(self, mode: Mode | str = Mode.DECOUPLED, direction: Direction | str | None = None) -> float:
        """Case-weighted SE summed over UL and DL (or one direction only)."""
        mode = Mode(mode)
        dirs = (Direction.UL, Direction.DL) if direction is None else (Direction(direction),)
        if mode is Mode.DECOUPLED:
            cases = (AssociationCase.CASE1, AssociationCase.CASE2, AssociationCase.CASE4)
        else:
            cases = (AssociationCase.COUPLED_M, AssociationCase.COUPLED_S)
        total = 0.0
        for case in cases:
            p = self.assoc_prob(case)
            if p <= 0:
                continue
            for d in dirs:
                total += p * self.se_link(case, d).value
        return total


# -- configuration-level wrappers ------------------------------------------------

def se_link(case, direction, config: NetworkConfig, options: AnalysisOptions | None = None) -> SEResult:
    return Model(config, options).se_link(case, direction)


def system_average_se(config: NetworkConfig, mode=Mode.DECOUPLED, direction=None,
                      options: AnalysisOptions | None = None) -> float:
    return Model(config, options).system_average_se(mode, direction)


def coverage_prob(serving, direction, threshold, config: NetworkConfig,
                  options: AnalysisOptions | None = None):
    return Model(config, options).coverage_prob(serving, direction, threshold)
