"""Monte Carlo network simulator.

Each drop samples a realization around a typical vehicle at the origin,
associates it on long-term (shadowed, unfaded) power, draws fresh fading and
measures the SIR of the UL and DL links.  Estimates are Palm averages over
drops of the typical vehicle unless the all-vehicles estimator is selected,
which only affects association statistics.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .analysis import AssociationCase, Tier
from .channel import Direction, NetworkConfig, sample_fading, sample_shadowing, speed_to_density
from .geometry import NetworkRealization, RngStream, build_realization, to_plane

__all__ = [
    "NoCandidate",
    "AssociationOutcome",
    "DropResult",
    "EstimateWithCI",
    "Metric",
    "SimulationOptions",
    "MonteCarloResult",
    "associate",
    "compute_sir",
    "simulate_drop",
    "run_monte_carlo",
    "run_speed_sweep",
    "write_samples",
]


class NoCandidate(RuntimeError):
    """Neither an MBS nor a typical-road SBS exists in the drop."""


class AssociationOutcome(NamedTuple):
    case: AssociationCase
    dl: Tier
    ul: Tier
    mbs_index: int  # -1 when there is no MBS
    sbs_index: int  # index into the typical-road SBS offsets, -1 if none
    x_m: float  # displaced distance to the best MBS (inf if none)
    x_s: float


@dataclass(frozen=True)
class EstimateWithCI:
    mean: float
    ci95_halfwidth: float
    n: int

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("an estimate needs at least one sample")

    @classmethod
    def from_samples(cls, samples) -> "EstimateWithCI":
        x = np.asarray(samples, dtype=float)
        n = x.size
        mean = float(x.mean())
        if n < 2 or not math.isfinite(mean):
            return cls(mean, math.inf, n)
        return cls(mean, float(1.96 * x.std(ddof=1) / math.sqrt(n)), n)


class Metric(NamedTuple):
    metric_id: str
    case: str = ""
    direction: str = ""
    threshold_db: float | None = None


@dataclass(frozen=True)
class SimulationOptions:
    """Simulator switches.

    ul_exclusion drops typical-road UL interferers whose displaced distance to
    the receiver is below the serving displaced distance.  vehicle_cap samples
    vehicles at a higher density and thins them to lambda_v, which keeps
    interferer sets nested when lambda_v is swept.
    """

    estimator: str = "typical-only"
    ul_exclusion: bool = True
    association_only: bool = False
    vehicle_cap: float | None = None
    thresholds_db: tuple[float, ...] = (0.0,)
    keep_samples: bool = False

    def __post_init__(self):
        if self.estimator not in ("typical-only", "all-vehicles"):
            raise ValueError("estimator must be 'typical-only' or 'all-vehicles'")


@dataclass
class DropResult:
    """Outcome of one drop for the typical vehicle.

    sir maps link labels (``dl``, ``ul_mbs``, ``ul_sbs``) to linear SIR; the
    UL entries exist only for receivers the typical vehicle can attach to.
    """

    outcome: AssociationOutcome
    sir: dict = field(default_factory=dict)
    vehicle_cases: np.ndarray | None = None


@dataclass
class MonteCarloResult:
    estimates: dict
    drops: int
    seed: int
    skipped_drops: int
    samples: dict | None = None


# -- association -----------------------------------------------------------------

def _case_of(dl_mbs: bool, ul_mbs: bool) -> AssociationCase:
    if dl_mbs:
        return AssociationCase.CASE1 if ul_mbs else AssociationCase.CASE2
    return AssociationCase.CASE3 if ul_mbs else AssociationCase.CASE4


def _prefers_mbs(ratio: float, x_m: float, x_s: float, config: NetworkConfig) -> bool:
    """ratio * x_m^-alpha_M >= x_s^-alpha_S, with ties resolved towards the MBS."""
    pm = ratio * x_m ** (-config.alpha_m) if math.isfinite(x_m) else 0.0
    ps = x_s ** (-config.alpha_s) if math.isfinite(x_s) else 0.0
    return pm >= ps


def associate(vehicle, realization: NetworkRealization, shadowing: dict,
              config: NetworkConfig) -> AssociationOutcome:
    """Pick DL and UL serving BSs on long-term received power.

    ``vehicle`` is (x, y) of the typical vehicle.  ``shadowing`` holds the
    linear shadowing gains ``"mbs"`` (per MBS) and ``"sbs"`` (per SBS on the
    typical road) of the links to this vehicle.
    """
    v = np.asarray(vehicle, dtype=float)
    t = realization.typical_road_index
    mbs = realization.mbs_points
    sbs = to_plane(realization.roads[t], realization.sbs_offsets[t]).reshape(-1, 2)
    x_m, i_m = math.inf, -1
    if len(mbs):
        disp = np.linalg.norm(mbs - v, axis=1) / shadowing["mbs"] ** (1.0 / config.alpha_m)
        i_m = int(np.argmin(disp))
        x_m = float(disp[i_m])
    x_s, i_s = math.inf, -1
    if len(sbs):
        disp = np.linalg.norm(sbs - v, axis=1) / shadowing["sbs"] ** (1.0 / config.alpha_s)
        i_s = int(np.argmin(disp))
        x_s = float(disp[i_s])
    if i_m < 0 and i_s < 0:
        raise NoCandidate("no MBS and no SBS on the typical road")
    dl_mbs = _prefers_mbs(config.a_ms, x_m, x_s, config)
    ul_mbs = _prefers_mbs(config.b_ms, x_m, x_s, config)
    dl = Tier.MBS if dl_mbs else Tier.SBS
    ul = Tier.MBS if ul_mbs else Tier.SBS
    return AssociationOutcome(_case_of(dl_mbs, ul_mbs), dl, ul, i_m, i_s, x_m, x_s)


def _vehicle_cases(realization: NetworkRealization, config: NetworkConfig,
                   rng: np.random.Generator) -> np.ndarray:
    """Association case of every vehicle in the window (SBS candidates on its own road)."""
    c = config
    mbs = realization.mbs_points
    out = []
    for i, (line, v_off) in enumerate(zip(realization.roads, realization.vehicle_offsets)):
        if not len(v_off):
            continue
        s_off = realization.sbs_offsets[i]
        n = len(v_off)
        if len(mbs):
            vpos = to_plane(line, v_off).reshape(-1, 2)
            r = np.linalg.norm(vpos[:, None, :] - mbs[None, :, :], axis=2)
            chi = sample_shadowing(c.shadow_std_m_db, rng, r.shape, c.shadow_mean_m_db)
            x_m = (r / chi ** (1.0 / c.alpha_m)).min(axis=1)
        else:
            x_m = np.full(n, np.inf)
        if len(s_off):
            r = np.abs(v_off[:, None] - s_off[None, :])
            chi = sample_shadowing(c.shadow_std_s0_db, rng, r.shape, c.shadow_mean_s0_db)
            x_s = (r / chi ** (1.0 / c.alpha_s)).min(axis=1)
        else:
            x_s = np.full(n, np.inf)
        with np.errstate(divide="ignore"):
            pm = np.where(np.isfinite(x_m), x_m ** (-c.alpha_m), 0.0)
            ps = np.where(np.isfinite(x_s), x_s ** (-c.alpha_s), 0.0)
        ok = (pm > 0) | (ps > 0)
        dl = c.a_ms * pm >= ps
        ul = c.b_ms * pm >= ps
        case = np.where(dl, np.where(ul, 1, 2), np.where(ul, 3, 4))
        out.append(case[ok])
    return np.concatenate(out) if out else np.empty(0, dtype=int)


# -- SIR ---------------------------------------------------------------------------

def _sir(signal: float, interference: float, noise: float) -> float:
    denom = interference + noise
    return math.inf if denom <= 0 else signal / denom


def compute_sir(outcome: AssociationOutcome, realization: NetworkRealization, draws: dict,
                direction: Direction | str, config: NetworkConfig, receiver: Tier | str | None = None,
                exclusion: bool = True, active: np.ndarray | None = None) -> float:
    """Linear SIR of the typical vehicle's link in ``direction``.

    DL uses the DL serving BS.  UL is measured at ``receiver`` (default: the UL
    serving BS).  ``draws`` supplies shadowing and fading arrays:

    * DL: ``chi_mbs``, ``chi_sbs`` (typical road), ``chi_other`` (other-road
      SBSs), ``h_mbs``, ``h_sbs``, ``h_other`` and ``h_serving``.
    * UL: ``chi_veh``, ``h_veh`` (one entry per non-typical vehicle, typical
      road first, in the order of :meth:`NetworkRealization.vehicle_points`)
      and ``h_serving``.

    ``active`` masks the interfering vehicles (used for density thinning).
    Returns ``inf`` when there is no interference and no noise.
    """
    c = config
    direction = Direction(direction)
    t = realization.typical_road_index
    road = realization.roads[t]
    if direction is Direction.DL:
        mbs = realization.mbs_points
        r_m = np.linalg.norm(mbs, axis=1)
        r_s = np.abs(realization.sbs_offsets[t])
        other, _ = realization.sbs_points(include_typical_road=False)
        r_o = np.linalg.norm(other, axis=1)
        p_mbs = c.p_m * c.g_m * draws["h_mbs"] * draws["chi_mbs"] * r_m ** (-c.alpha_m)
        p_sbs = c.p_s * c.g_s0 * draws["h_sbs"] * draws["chi_sbs"] * r_s ** (-c.alpha_s)
        p_oth = c.p_s * c.g_s1 * draws["h_other"] * draws["chi_other"] * r_o ** (-c.alpha_s)
        if outcome.dl is Tier.MBS:
            i = outcome.mbs_index
            signal = c.p_m * c.g_m * draws["h_serving"] * outcome.x_m ** (-c.alpha_m)
            interference = p_mbs.sum() - p_mbs[i] + p_sbs.sum()
        else:
            i = outcome.sbs_index
            signal = c.p_s * c.g_s0 * draws["h_serving"] * outcome.x_s ** (-c.alpha_s)
            interference = p_mbs.sum() + p_sbs.sum() - p_sbs[i]
        return _sir(signal, interference + p_oth.sum(), c.noise_power)

    receiver = outcome.ul if receiver is None else Tier(receiver)
    veh_t = realization.vehicle_offsets[t][1:]  # drop the typical vehicle
    others, _ = realization.vehicle_points(include_typical_road=False)
    n_t = len(veh_t)
    chi = draws["chi_veh"]
    h = draws["h_veh"]
    on_typ = np.zeros(n_t + len(others), dtype=bool)
    on_typ[:n_t] = True
    if receiver is Tier.MBS:
        if outcome.mbs_index < 0:
            raise NoCandidate("UL to an MBS requested but the drop has none")
        rx = realization.mbs_points[outcome.mbs_index]
        pos = np.concatenate([to_plane(road, veh_t).reshape(-1, 2), others])
        d = np.linalg.norm(pos - rx, axis=1)
        alpha, serving_x = c.alpha_m, outcome.x_m
        gain = np.full(d.shape, c.g_v1)
        signal = c.p_v * c.g_v1 * draws["h_serving"] * serving_x ** (-alpha)
    else:
        if outcome.sbs_index < 0:
            raise NoCandidate("UL to an SBS requested but the typical road has none")
        rx_off = realization.sbs_offsets[t][outcome.sbs_index]
        rx = to_plane(road, rx_off)
        d = np.concatenate([np.abs(veh_t - rx_off), np.linalg.norm(others - rx, axis=1)])
        alpha, serving_x = c.alpha_s, outcome.x_s
        gain = np.where(on_typ, c.g_v0, c.g_v1)
        signal = c.p_v * c.g_v0 * draws["h_serving"] * serving_x ** (-alpha)
    keep = np.ones(d.shape, dtype=bool) if active is None else active.copy()
    if exclusion:
        disp = d / chi ** (1.0 / alpha)
        keep &= ~(on_typ & (disp < serving_x))
    power = c.p_v * gain * h * chi * d ** (-alpha)
    return _sir(signal, float(power[keep].sum()), c.noise_power)


# -- one drop ------------------------------------------------------------------------

def _ul_draws(realization: NetworkRealization, config: NetworkConfig, receiver: Tier,
              rng: np.random.Generator) -> dict:
    c = config
    t = realization.typical_road_index
    n_t = len(realization.vehicle_offsets[t]) - 1
    n_o = sum(len(v) for i, v in enumerate(realization.vehicle_offsets) if i != t)
    if receiver is Tier.MBS:
        h_serv = sample_fading(c.m_v1, rng)
        chi = sample_shadowing(c.shadow_std_m_db, rng, n_t + n_o, c.shadow_mean_m_db)
        h = sample_fading(c.m_v1, rng, n_t + n_o)
    else:
        h_serv = sample_fading(c.m_v0, rng)
        chi = np.concatenate([
            sample_shadowing(c.shadow_std_s0_db, rng, n_t, c.shadow_mean_s0_db),
            sample_shadowing(c.shadow_std_s1_db, rng, n_o, c.shadow_mean_s1_db),
        ])
        h = np.concatenate([sample_fading(c.m_v0, rng, n_t), sample_fading(c.m_v1, rng, n_o)])
    return {"h_serving": h_serv, "chi_veh": chi, "h_veh": h}


def simulate_drop(config: NetworkConfig, stream: RngStream,
                  options: SimulationOptions | None = None) -> DropResult:
    """Sample one drop and evaluate the typical vehicle.

    Raises :class:`NoCandidate` when the drop offers no BS at all.
    """
    opts = options or SimulationOptions()
    c = config
    geom = c if opts.vehicle_cap is None else c.replace(lambda_v=max(opts.vehicle_cap, c.lambda_v))
    real = build_realization(geom, stream, typical_only=opts.association_only)
    t = real.typical_road_index
    sh = stream.generator("shadow")
    chi_mbs = sample_shadowing(c.shadow_std_m_db, sh, len(real.mbs_points), c.shadow_mean_m_db)
    chi_sbs = sample_shadowing(c.shadow_std_s0_db, sh, len(real.sbs_offsets[t]), c.shadow_mean_s0_db)
    outcome = associate((0.0, 0.0), real, {"mbs": chi_mbs, "sbs": chi_sbs}, c)
    result = DropResult(outcome)
    if opts.estimator == "all-vehicles":
        result.vehicle_cases = _vehicle_cases(real, c, stream.generator("allveh"))
    if opts.association_only:
        return result

    n_other = sum(len(s) for i, s in enumerate(real.sbs_offsets) if i != t)
    chi_other = sample_shadowing(c.shadow_std_s1_db, sh, n_other, c.shadow_mean_s1_db)
    dl = stream.generator("dl")
    h_serv = sample_fading(c.m_m if outcome.dl is Tier.MBS else c.m_s0, dl)
    draws = {
        "chi_mbs": chi_mbs, "chi_sbs": chi_sbs, "chi_other": chi_other,
        "h_mbs": sample_fading(c.m_m, dl, len(real.mbs_points)),
        "h_sbs": sample_fading(c.m_s0, dl, len(real.sbs_offsets[t])),
        "h_other": sample_fading(c.m_s1, dl, n_other),
        "h_serving": h_serv,
    }
    result.sir["dl"] = compute_sir(outcome, real, draws, Direction.DL, c)

    active = None
    if opts.vehicle_cap is not None and geom.lambda_v > 0:
        # thin the capped vehicle population down to lambda_v
        n_t = len(real.vehicle_offsets[t]) - 1
        n_o = sum(len(v) for i, v in enumerate(real.vehicle_offsets) if i != t)
        active = stream.generator("thin").random(n_t + n_o) < c.lambda_v / geom.lambda_v
    for rx in sorted({outcome.ul, outcome.dl}):
        name = "ul_mbs" if rx is Tier.MBS else "ul_sbs"
        ul_draws = _ul_draws(real, c, rx, stream.generator(name))
        result.sir[name] = compute_sir(outcome, real, ul_draws, Direction.UL, c, receiver=rx,
                                       exclusion=opts.ul_exclusion, active=active)
    return result


# -- aggregation ---------------------------------------------------------------------

_CASES = ("1", "2", "3", "4")


def _estimates(records: list[DropResult], opts: SimulationOptions) -> tuple[dict, dict]:
    n = len(records)
    case = np.array([int(r.outcome.case.value) for r in records])
    x_m = np.array([r.outcome.x_m for r in records])
    x_s = np.array([r.outcome.x_s for r in records])
    est: dict = {}
    samples: dict = {"case": case, "x_m": x_m, "x_s": x_s}

    if opts.estimator == "all-vehicles":
        pooled = np.concatenate([r.vehicle_cases for r in records])
        for k in _CASES:
            if pooled.size:
                est[Metric(f"p_case{k}", k)] = EstimateWithCI.from_samples(pooled == int(k))
    else:
        for k in _CASES:
            est[Metric(f"p_case{k}", k)] = EstimateWithCI.from_samples(case == int(k))
    if opts.association_only:
        return est, samples

    def sir_of(name):
        return np.array([r.sir.get(name, np.nan) for r in records])

    dl = sir_of("dl")
    ul_m, ul_s = sir_of("ul_mbs"), sir_of("ul_sbs")
    dl_mbs = case <= 2
    ul_is_mbs = case == 1
    ul_dec = np.where(ul_is_mbs, ul_m, ul_s)
    ul_cpl = np.where(dl_mbs, ul_m, ul_s)
    samples.update(dl=dl, ul=ul_dec, ul_coupled=ul_cpl)
    rate = lambda s: np.log1p(s)

    for k in ("1", "2", "4"):
        sel = case == int(k)
        if sel.any():
            est[Metric(f"se_case{k}_ul", k, "UL")] = EstimateWithCI.from_samples(rate(ul_dec[sel]))
            est[Metric(f"se_case{k}_dl", k, "DL")] = EstimateWithCI.from_samples(rate(dl[sel]))
        # probability-weighted UL+DL contribution of the case to the system average
        weighted = np.where(sel, rate(np.where(sel, ul_dec, 0.0)) + rate(np.where(sel, dl, 0.0)), 0.0)
        est[Metric(f"se_weighted_case{k}", k, "")] = EstimateWithCI.from_samples(weighted)
    for label, sel in (("M", dl_mbs), ("S", ~dl_mbs)):
        if sel.any():
            est[Metric(f"se_coupled_{label.lower()}_ul", label, "UL")] = EstimateWithCI.from_samples(rate(ul_cpl[sel]))
            est[Metric(f"se_coupled_{label.lower()}_dl", label, "DL")] = EstimateWithCI.from_samples(rate(dl[sel]))
    for mode, ul in (("decoupled", ul_dec), ("coupled", ul_cpl)):
        est[Metric(f"se_system_{mode}_ul", "", "UL")] = EstimateWithCI.from_samples(rate(ul))
        est[Metric(f"se_system_{mode}_dl", "", "DL")] = EstimateWithCI.from_samples(rate(dl))
        est[Metric(f"se_system_{mode}", "", "")] = EstimateWithCI.from_samples(rate(ul) + rate(dl))
    for t_db in opts.thresholds_db:
        th = 10.0 ** (t_db / 10.0)
        served = {
            ("mbs", "DL"): (dl_mbs, dl), ("sbs", "DL"): (~dl_mbs, dl),
            ("mbs", "UL"): (ul_is_mbs, ul_dec), ("sbs", "UL"): (~ul_is_mbs, ul_dec),
        }
        for (tier, d), (sel, sir) in served.items():
            hit = sel & (np.nan_to_num(sir, nan=-1.0) > th)
            est[Metric(f"cp_{tier}_{d.lower()}", "", d, float(t_db))] = EstimateWithCI.from_samples(hit)
    est[Metric("ul_sir_inf_rate", "", "UL")] = EstimateWithCI.from_samples(np.isinf(ul_dec))
    return est, samples


def run_monte_carlo(config: NetworkConfig, drops: int, seed: int,
                    options: SimulationOptions | None = None) -> MonteCarloResult:
    """Run ``drops`` independent drops; drop ``i`` uses stream ``(seed, i)``.

    Drops without any BS candidate are skipped and counted.
    """
    if drops < 1:
        raise ValueError("drops must be >= 1")
    opts = options or SimulationOptions()
    records, ids, skipped = [], [], 0
    for i in range(drops):
        try:
            records.append(simulate_drop(config, RngStream(seed, i), opts))
            ids.append(i)
        except NoCandidate:
            skipped += 1
    if not records:
        raise NoCandidate("every drop lacked a BS candidate")
    est, samples = _estimates(records, opts)
    samples["drop_id"] = np.array(ids)
    return MonteCarloResult(est, drops, seed, skipped, samples if opts.keep_samples else None)


def run_speed_sweep(config: NetworkConfig, speeds: Sequence[float], drops: int, seed: int,
                    options: SimulationOptions | None = None) -> dict:
    """Monte Carlo at each speed with lambda_v from the Greenshields law.

    Vehicles are sampled at the jam density and thinned, so every speed sees a
    subset of the interferers of any slower speed within the same drop.
    """
    opts = options or SimulationOptions()
    opts = SimulationOptions(**{**opts.__dict__, "vehicle_cap": config.lambda_max_per_km})
    out = {}
    for v in speeds:
        cfg = config.replace(lambda_v=speed_to_density(v, config))
        out[float(v)] = run_monte_carlo(cfg, drops, seed, opts)
    return out


def write_samples(result: MonteCarloResult, path, delimiter: str = ",") -> None:
    """Raw per-drop SIR export: drop_id, case, direction, sir_linear."""
    if result.samples is None or "dl" not in result.samples:
        raise ValueError("run with keep_samples=True and SIR evaluation enabled")
    s = result.samples
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter=delimiter)
        w.writerow(("drop_id", "case", "direction", "sir_linear"))
        for i, k, dl, ul in zip(s["drop_id"], s["case"], s["dl"], s["ul"]):
            w.writerow((int(i), int(k), "UL", repr(float(ul))))
            w.writerow((int(i), int(k), "DL", repr(float(dl))))
