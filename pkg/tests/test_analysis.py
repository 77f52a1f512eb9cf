import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate as sp_integrate

from cv2x.analysis import (
    Alphas,
    AnalysisOptions,
    AssociationCase,
    AssociationConstants,
    Mode,
    Model,
    Tier,
    UnsupportedPair,
    assoc_prob,
    assoc_prob_sum_check,
    distance_pdf,
)
from cv2x.channel import NetworkConfig, transform_intensities

configs = st.builds(
    lambda scenario, lm, ratio, am, sm, ss: NetworkConfig.for_scenario(
        scenario, lambda_m=lm, lambda_s=ratio * lm, alpha_m=am, shadow_std_m_db=sm, shadow_std_s0_db=ss),
    st.sampled_from(["LOS", "NLOS"]),
    st.floats(0.5, 20.0),
    st.floats(0.0, 8.0),
    st.floats(2.5, 5.0),
    st.floats(0.0, 8.0),
    st.floats(0.0, 8.0),
)


def _probs(cfg, closed_form=None):
    it = transform_intensities(cfg)
    k = AssociationConstants.from_config(cfg)
    a = Alphas(cfg.alpha_m, cfg.alpha_s)
    return {c: assoc_prob(c, it, k, a, closed_form) for c in "1234MS"}


@settings(max_examples=60, deadline=None)
@given(configs)
def test_case_probabilities_are_conserved(cfg):
    p = _probs(cfg)
    assert p["1"] + p["2"] + p["4"] == pytest.approx(1.0, abs=1e-6)
    assert p["3"] == 0.0
    assert min(p["1"], p["2"], p["4"]) >= -1e-12
    assert p["M"] == pytest.approx(p["1"] + p["2"], abs=1e-12)
    assert p["S"] == p["4"]


def test_sum_check_returns_the_three_cases(reference_los):
    p = Model(reference_los).assoc_probs()
    assert len(p) == 3 and sum(p) == pytest.approx(1.0, abs=1e-9)


@pytest.mark.parametrize("ratio", [0.5, 1.0, 2.0, 4.0, 6.0])
def test_erfc_closed_form_matches_quadrature(ratio):
    cfg = NetworkConfig.for_scenario("NLOS", lambda_s=5.0 * ratio)
    assert cfg.alpha_m == cfg.alpha_s == 4.0
    cf, quad = _probs(cfg, True), _probs(cfg, False)
    for c in "124":
        assert cf[c] == pytest.approx(quad[c], rel=1e-6, abs=1e-12)


def test_closed_form_needs_equal_exponents():
    with pytest.raises(ValueError):
        _probs(NetworkConfig.for_scenario("LOS"), True)


def _case1_oracle(cfg):
    # P(UL to MBS) straight from the nearest-neighbour laws of both tiers
    it = transform_intensities(cfg)
    lm, ls = it.lambda_M, it.lambda_S
    f = lambda x: 2 * math.pi * lm * x * math.exp(
        -math.pi * lm * x * x - 2 * ls * (x**cfg.alpha_m / cfg.b_ms) ** (1 / cfg.alpha_s))
    return sp_integrate.quad(f, 0, math.inf, epsabs=1e-13, epsrel=1e-11, limit=200)[0]


@pytest.mark.parametrize("scenario", ["LOS", "NLOS"])
@pytest.mark.parametrize("ratio", [0.5, 2.0, 6.0])
def test_case1_probability_matches_scipy_oracle(scenario, ratio):
    cfg = NetworkConfig.for_scenario(scenario, lambda_s=5.0 * ratio)
    assert _probs(cfg)["1"] == pytest.approx(_case1_oracle(cfg), rel=1e-7)


def test_association_probabilities_move_with_sbs_density():
    ps = [_probs(NetworkConfig.for_scenario("LOS", lambda_s=5.0 * r)) for r in (0.5, 1, 2, 4, 6)]
    assert all(a["1"] > b["1"] for a, b in zip(ps, ps[1:]))
    assert all(a["4"] < b["4"] for a, b in zip(ps, ps[1:]))
    assert all(a["M"] > b["M"] for a, b in zip(ps, ps[1:]))


def test_no_sbs_means_case_one():
    p = _probs(NetworkConfig(lambda_s=0.0))
    assert (p["1"], p["2"], p["4"]) == (1.0, 0.0, 0.0)


@pytest.mark.parametrize("scenario", ["LOS", "NLOS"])
@pytest.mark.parametrize("case,serving", [("1", "MBS"), ("2", "MBS"), ("2", "SBS"), ("4", "SBS"),
                                          ("M", "MBS"), ("S", "SBS")])
def test_distance_pdfs_are_normalised(scenario, case, serving):
    cfg = NetworkConfig.for_scenario(scenario, lambda_l=1 / math.pi)
    it = transform_intensities(cfg)
    k = AssociationConstants.from_config(cfg)
    a = Alphas(cfg.alpha_m, cfg.alpha_s)
    f = lambda x: distance_pdf(case, serving, x, it, k, a)
    total = sp_integrate.quad(f, 0, math.inf, epsabs=1e-12, epsrel=1e-10, limit=400)[0]
    assert total == pytest.approx(1.0, abs=1e-7)
    assert np.all(f(np.linspace(0.0, 2.0, 50)) >= 0)


def test_unsupported_pairs_raise():
    cfg = NetworkConfig()
    it, k, a = transform_intensities(cfg), AssociationConstants.from_config(cfg), Alphas(4.0, 2.0)
    for case, serving in (("1", "SBS"), ("4", "MBS"), ("3", "MBS")):
        with pytest.raises(UnsupportedPair):
            distance_pdf(case, serving, 0.1, it, k, a)
    with pytest.raises(UnsupportedPair):
        Model(cfg).conditional_coverage("3", "UL", 0.1, 1.0)


def test_association_constants_validation():
    with pytest.raises(ValueError):
        AssociationConstants(1.0, 1.0)
    with pytest.raises(ValueError):
        AssociationConstants(1.0, 0.0)


def test_options_validation():
    for bad in (dict(case2_dl_sbs="other"), dict(other_roads="grid"), dict(t_chunk=0.0),
                dict(t_chunk=400.0)):
        with pytest.raises(ValueError):
            AnalysisOptions(**bad)


# -- conditional coverage against a displaced-domain Monte Carlo oracle --------------

def _case4_ul_oracle(cfg, x, theta, trials, rng, planar_radius=5.0, line_length=5.0):
    # typical-road vehicles beyond displaced distance x plus a planar PPP of
    # other-road vehicles, all with power-law pathloss and Nakagami fading
    it = transform_intensities(cfg)
    a = cfg.alpha_s
    pg0, pg1 = cfg.p_v * cfg.g_v0, cfg.p_v * cfg.g_v1
    hits = 0
    for _ in range(trials):
        n_line = rng.poisson(2 * it.lambda_V * (line_length - x))
        r_line = rng.uniform(x, line_length, n_line)
        n_plane = rng.poisson(it.lambda_Va * math.pi * planar_radius**2)
        r_plane = planar_radius * np.sqrt(rng.random(n_plane))
        interference = (pg0 * rng.gamma(cfg.m_v0, 1 / cfg.m_v0, n_line) * r_line ** -a).sum() + (
            pg1 * rng.gamma(cfg.m_v1, 1 / cfg.m_v1, n_plane) * r_plane ** -a).sum()
        signal = pg0 * rng.gamma(cfg.m_v0, 1 / cfg.m_v0) * x ** -a
        hits += signal > theta * interference
    return hits / trials


@pytest.mark.parametrize("m_v0", [1, 2])
def test_conditional_ul_coverage_matches_monte_carlo(m_v0):
    cfg = NetworkConfig.for_scenario("NLOS", lambda_l=1 / math.pi, m_v0=m_v0)
    model = Model(cfg)
    x, theta, trials = 0.08, 1.0, 20_000
    mc = _case4_ul_oracle(cfg, x, theta, trials, np.random.default_rng(m_v0))
    exact = float(model.conditional_coverage("4", "UL", x, theta))
    se = math.sqrt(mc * (1 - mc) / trials)
    assert 0.05 < exact < 0.95
    assert abs(exact - mc) < 4 * se + 2e-3


def test_conditional_coverage_is_monotone():
    model = Model(NetworkConfig.for_scenario("NLOS", lambda_l=1 / math.pi))
    theta = np.logspace(-1, 2, 12)
    for case, d in (("1", "DL"), ("2", "UL"), ("4", "DL"), ("1", "UL")):
        cov = model.conditional_coverage(case, d, 0.1, theta)
        assert np.all(np.diff(cov) <= 1e-12)
        near = model.conditional_coverage(case, d, 0.05, 1.0)
        far = model.conditional_coverage(case, d, 0.2, 1.0)
        assert near >= far - 1e-12


def test_case2_dl_sbs_field_variants_are_ordered():
    # dropping SBSs beyond x2 removes interference; forcing a window SBS adds it
    cfg = NetworkConfig.for_scenario("LOS", lambda_l=1 / math.pi)
    cov = {mode: float(Model(cfg, AnalysisOptions(case2_dl_sbs=mode)).conditional_coverage("2", "DL", 0.15, 1.0))
           for mode in ("exact", "extended", "window")}
    assert cov["window"] >= cov["extended"] >= cov["exact"]
    assert cov["window"] > cov["exact"]


def test_coverage_probability_non_increasing_in_threshold():
    model = Model(NetworkConfig.for_scenario("NLOS", lambda_l=1 / math.pi))
    t = 10 ** (np.arange(-10, 21, 5) / 10)
    for tier in ("MBS", "SBS"):
        for d in ("UL", "DL"):
            cp = np.asarray(model.coverage_prob(tier, d, t))
            assert np.all(np.diff(cp) <= 1e-9)
            assert np.all((cp >= 0) & (cp <= 1))


def test_downlink_se_is_the_same_for_both_access_modes():
    model = Model(NetworkConfig.for_scenario("NLOS", lambda_l=1 / math.pi))
    dec = model.system_average_se(Mode.DECOUPLED, "DL")
    cpl = model.system_average_se(Mode.COUPLED, "DL")
    assert dec == pytest.approx(cpl, rel=1e-4)


def test_without_sbs_decoupling_changes_nothing():
    model = Model(NetworkConfig.for_scenario("NLOS", lambda_s=0.0, lambda_l=1 / math.pi))
    for d in ("UL", "DL", None):
        assert model.system_average_se("decoupled", d) == pytest.approx(model.system_average_se("coupled", d),
                                                                        rel=1e-12)
    with pytest.raises(ZeroDivisionError):
        model.se_link("4", "UL")


def test_se_from_coverage_integral():
    # E ln(1 + SIR) = int P(SIR > e^t - 1) dt, checked with scipy on the conditional law
    cfg = NetworkConfig.for_scenario("NLOS", lambda_l=1 / math.pi)
    model = Model(cfg)
    res = model.se_link("4", "UL")
    assert not res.diverged

    # dense Simpson grids: t up to 60 and log-spaced serving distances
    t = np.linspace(0.0, 60.0, 6001)
    x = np.geomspace(1e-7, 3.0, 801)
    cov = model.conditional_coverage("4", "UL", x[:, None], np.expm1(t)[None, :])
    rate = sp_integrate.simpson(cov, x=t, axis=1)
    oracle = sp_integrate.simpson(model.distance_pdf("4", "SBS", x) * rate * x, x=np.log(x))
    assert res.value == pytest.approx(oracle, rel=1e-4)


def test_line_process_roads_approach_ppp_when_dense():
    base = dict(lambda_l=100.0 / math.pi, lambda_v=0.15, lambda_s=0.15)
    cfg = NetworkConfig.for_scenario("NLOS", **base)
    ppp = Model(cfg)
    cox = Model(cfg, AnalysisOptions(other_roads="cox"))
    for case, d in (("1", "UL"), ("1", "DL")):
        a = float(ppp.conditional_coverage(case, d, 0.1, 1.0))
        b = float(cox.conditional_coverage(case, d, 0.1, 1.0))
        assert b == pytest.approx(a, rel=0.01)


def test_sparse_roads_leave_more_coverage_than_ppp():
    cfg = NetworkConfig.for_scenario("NLOS", lambda_l=1 / math.pi)
    ppp = float(Model(cfg).conditional_coverage("4", "UL", 0.1, 1.0))
    cox = float(Model(cfg, AnalysisOptions(other_roads="cox")).conditional_coverage("4", "UL", 0.1, 1.0))
    assert cox > ppp
