import numpy as np
import pytest

from cicattrition.inference import (
    BootstrapError,
    BootstrapSpec,
    _Resampler,
    bootstrap,
    bootstrap_many,
    diagnostic_pvalue,
    evaluate_statistics,
)
from cicattrition.panel import PanelDataError, PanelSample
from cicattrition.simulation import design_preset, draw_sample


def _mean_y0(s):
    return float(s.y0.mean())


def _iid_sample(n, seed, cluster=None):
    rng = np.random.default_rng(seed)
    g = rng.integers(0, 2, n)
    y0 = rng.normal(size=n)
    return PanelSample.from_arrays(g, np.ones(n, int), y0, y0 + g, cluster=cluster)


def test_constant_column_gives_zero_se():
    s = PanelSample.from_arrays([0, 1, 0, 1], [1, 1, 1, 1], [2.0] * 4, [1, 2, 3, 4])
    res = bootstrap(s, _mean_y0, BootstrapSpec(draws=50))
    assert res.se == 0 and res.ci == (2.0, 2.0)


def test_se_of_sample_mean_matches_analytic_value():
    s = _iid_sample(500, 11)
    res = bootstrap(s, _mean_y0, BootstrapSpec(draws=999, seed=1))
    analytic = s.y0.std(ddof=1) / np.sqrt(s.n)
    assert res.se == pytest.approx(analytic, rel=0.15)
    assert res.draws_used == 999 and res.failures == 0


def test_ate_ra_minus_naive_has_stable_sign():
    s = draw_sample(design_preset("I", 2000, 2.0, 1.0, seed=21))
    signs = set()
    for seed in (1, 2, 3):
        res = bootstrap(s, "ATE-RA - naive", BootstrapSpec(draws=99, seed=seed))
        assert res.se > 0
        signs.add(np.sign(res.point))
        assert res.ci[0] * res.ci[1] > 0  # interval excludes zero
    assert len(signs) == 1


def test_determinism_and_parallel_agreement():
    s = draw_sample(design_preset("I", 400, 2.0, 0.0, seed=5))
    stats = ["ATE-R", "ATE-RA - naive", "IPW1:ATE"]
    a = bootstrap_many(s, stats, BootstrapSpec(draws=40, seed=9, n_jobs=1))
    b = bootstrap_many(s, stats, BootstrapSpec(draws=40, seed=9, n_jobs=1))
    c = bootstrap_many(s, stats, BootstrapSpec(draws=40, seed=9, n_jobs=2))
    for name in stats:
        for other in (b, c):
            assert a[name].se == other[name].se
            assert a[name].ci == other[name].ci
            np.testing.assert_array_equal(a[name].replicates, other[name].replicates)


def test_point_estimate_does_not_depend_on_seed():
    s = draw_sample(design_preset("II", 300, 2.0, 1.0, seed=6))
    points = {bootstrap(s, "ATT-R", BootstrapSpec(draws=10, seed=k)).point for k in range(4)}
    assert points == {evaluate_statistics(s, ["ATT-R"])["ATT-R"]}


def test_cluster_resamples_contain_whole_clusters():
    cluster = np.repeat(np.arange(30), 5)
    s = _iid_sample(150, 2, cluster=cluster.astype(str))
    spec = BootstrapSpec(draws=5, resample_unit="cluster", seed=3)
    res = _Resampler(s, spec)
    sizes = {c: int(np.sum(cluster == c)) for c in range(30)}
    for k in range(20):
        idx = res.indices(k)
        picked = cluster[idx]
        for c in np.unique(picked):
            assert np.sum(picked == c) % sizes[c] == 0
    assert bootstrap(s, _mean_y0, spec).se > 0


def test_stratified_resampling_keeps_arm_sizes():
    s = _iid_sample(101, 3)
    res = _Resampler(s, BootstrapSpec(draws=5, stratify=True))
    for k in range(5):
        assert np.sum(s.g[res.indices(k)]) == np.sum(s.g)


def test_cluster_mode_requires_cluster_ids():
    with pytest.raises(ValueError, match="cluster"):
        bootstrap(_iid_sample(20, 1), _mean_y0, BootstrapSpec(draws=5, resample_unit="cluster"))


def test_narrower_level_nests_inside_wider():
    s = _iid_sample(200, 4)
    res = bootstrap(s, _mean_y0, BootstrapSpec(draws=199, ci_level=0.95))
    lo90, hi90 = res.interval(0.90)
    assert res.ci[0] <= lo90 <= hi90 <= res.ci[1]
    assert res.ci[0] <= res.ci[1]


def test_failure_ceiling():
    # a single attritor: most resamples lose it, so ATT-A fails too often
    g = [1] * 20 + [0] * 20
    r = [1] * 19 + [0] + [1] * 20
    y0 = np.arange(40.0)
    s = PanelSample.from_arrays(g, r, y0, np.where(np.array(r) == 1, y0, np.nan))
    with pytest.raises(BootstrapError):
        bootstrap(s, "ATT-A", BootstrapSpec(draws=50))
    kept = bootstrap_many(s, ["ATT-A", "ATT-R"], BootstrapSpec(draws=50), skip_failed=True)
    assert set(kept) == {"ATT-R"}


def test_statistic_must_be_computable_on_original_sample():
    s = PanelSample.from_arrays([0, 0, 1, 1], [1, 1, 1, 1], [0, 1, 2, 3], [0, 1, 2, 3])
    with pytest.raises(PanelDataError):
        bootstrap(s, "ATT-A", BootstrapSpec(draws=5))
    errors = {}
    evaluate_statistics(s, ["ATT-A"], errors=errors)
    assert "attritors" in errors["ATT-A"]


def test_unknown_statistic_and_invalid_spec():
    with pytest.raises(ValueError):
        evaluate_statistics(_iid_sample(10, 0), ["ATE-XYZ"])
    with pytest.raises(ValueError):
        BootstrapSpec(draws=1)
    with pytest.raises(ValueError):
        BootstrapSpec(ci_level=1.0)
    with pytest.raises(ValueError):
        BootstrapSpec(resample_unit="village")


def test_diagnostic_on_tiny_sample():
    g = [0, 0, 0, 0, 1, 1, 1, 1]
    r = [1, 1, 0, 0, 1, 1, 0, 0]
    y0 = [0.1, 0.9, 0.4, 0.6, 0.2, 0.8, 0.3, 0.7]
    y1 = [1.0, 2.0, None, None, 1.5, 2.5, None, None]
    s = PanelSample.from_arrays(g, r, y0, [np.nan if v is None else v for v in y1])
    # unstratified resamples of 8 units lose a respondent cell about 20% of the time
    res = diagnostic_pvalue(s, BootstrapSpec(draws=99, seed=2, stratify=True))
    for d in (0, 1):
        assert 0 < res.pvalue[d] <= 1
    assert res.draws_used + res.failures == 99


def test_diagnostic_detects_attritor_shift():
    design = design_preset("I", 4000, 2.0, 0.0, seed=17)
    s = draw_sample(design)
    y0 = s.y0.copy()
    y0[(s.g == 1) & (s.r == 0)] += 3.0
    shifted = PanelSample.from_arrays(s.g, s.r, y0, s.y1)
    res = diagnostic_pvalue(shifted, BootstrapSpec(draws=99, seed=1))
    assert min(res.pvalue.values()) < 0.05
