import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_rotation
from specinj.metrics import (
    UNDEFINED_DENOMINATOR,
    MetricReport,
    bootstrap_mean_ci,
    cluster_bootstrap_contrast,
    force_mae,
    leave_one_out_ratios,
    locate_cliff,
    normalized_error,
    r2_injected,
    raw_gain,
    recovery_fraction,
    seedwise_report,
    sharpness,
)

pos = st.floats(0.01, 10.0)


def test_force_mae_and_normalized_error():
    pred = np.zeros((2, 3))
    true = np.array([[1.0, -1.0, 2.0], [0.0, 0.0, 2.0]])
    assert force_mae(pred, true) == pytest.approx(1.0)
    ne = normalized_error(1.0, 4.0)
    assert ne.y == 0.25
    with pytest.raises(ValueError):
        normalized_error(1.0, 0.0)
    with pytest.raises(ValueError):
        force_mae(pred, np.zeros((3, 3)))


def test_recovery_fraction_examples():
    assert recovery_fraction(0.166, 0.134, 0.132) == pytest.approx(0.941, abs=1e-3)
    assert recovery_fraction(0.2, 0.2, 0.1) == 0.0
    assert recovery_fraction(0.2, 0.1, 0.1) == 1.0
    assert recovery_fraction(0.1, 0.1, 0.1) is None
    assert recovery_fraction(0.1, 0.05, 0.2) is None
    assert raw_gain(0.3, 0.1) == pytest.approx(0.2)


@settings(max_examples=60)
@given(pos, pos, pos, st.floats(0.1, 100.0))
def test_recovery_fraction_scale_invariance(a, b, c, k):
    lo, hi = max(a, c), min(a, c)
    if lo - hi < 1e-3:
        return
    r = recovery_fraction(lo, b, hi)
    assert recovery_fraction(k * lo, k * b, k * hi) == pytest.approx(r, rel=1e-9, abs=1e-12)
    assert recovery_fraction(lo, lo, hi) == 0.0
    assert recovery_fraction(lo, hi, hi) == 1.0


def test_sharpness_cases():
    s = sharpness(0.913, 0.078)
    assert s.method == "ratio" and s.value == pytest.approx(11.705, abs=1e-3)
    lb = sharpness(0.9, 0.01, ci_at=(0.8, 1.0), ci_above=(-0.02, 0.05))
    assert lb.method == "lower_bound" and lb.value == pytest.approx(16.0)
    fb = sharpness(None, 0.1, delta_at=0.03, delta_above=0.01)
    assert fb.method == "delta_fallback" and fb.value == pytest.approx(3.0)
    assert sharpness(0.5, -0.1).method == "undefined"


def test_r2_injected_examples():
    f = np.random.default_rng(0).normal(size=(4, 5, 3))
    assert r2_injected(f, f) == 1.0
    assert r2_injected(np.zeros_like(f), f) == 0.0
    assert r2_injected(0.5 * f, f) == pytest.approx(0.75)
    with pytest.raises(ValueError):
        r2_injected(f, np.zeros_like(f))


def test_r2_injected_rotation_invariant():
    rng = np.random.default_rng(1)
    f = rng.normal(size=(3, 6, 3))
    p = f + 0.3 * rng.normal(size=f.shape)
    Q = random_rotation(4)
    assert r2_injected(p @ Q.T, f @ Q.T) == pytest.approx(r2_injected(p, f), abs=1e-12)


def test_bootstrap_constant_and_determinism():
    assert bootstrap_mean_ci([2.5, 2.5, 2.5]) == (2.5, 2.5, 2.5)
    vals = np.random.default_rng(0).normal(size=40)
    a = bootstrap_mean_ci(vals, B=10_000, rng_seed=42)
    b = bootstrap_mean_ci(vals, B=10_000, rng_seed=42)
    assert a == b
    assert bootstrap_mean_ci(vals, B=10_000, rng_seed=43) != a


def test_bootstrap_two_point_oracle():
    # resamples of [0, 1] have means 0, 0.5, 1 with probabilities 1/4, 1/2, 1/4
    ci = bootstrap_mean_ci([0.0, 1.0], B=20_000, rng_seed=42)
    assert ci.mean == 0.5
    assert (ci.lo, ci.hi) == (0.0, 1.0)


def test_bootstrap_argument_errors():
    with pytest.raises(ValueError):
        bootstrap_mean_ci([1.0])
    with pytest.raises(ValueError):
        bootstrap_mean_ci([1.0, 2.0], B=10)


DELTA_AT = [0.194, 0.036, 0.283, 0.056]
DELTA_ABOVE = [0.043, 0.009, 0.021, 0.026]


def test_cluster_contrast_reference_clusters():
    c = cluster_bootstrap_contrast(DELTA_AT, DELTA_ABOVE, B=10_000, rng_seed=42)
    assert c.mean_at == pytest.approx(0.142, abs=5e-4)
    assert c.mean_above == pytest.approx(0.025, abs=5e-4)
    assert c.ratio == pytest.approx(5.7, abs=0.1)
    assert c.ratio_ci[0] < c.ratio < c.ratio_ci[1]
    assert c.diff_ci[0] < c.diff < c.diff_ci[1]
    assert c.n_excluded == 0


def test_cluster_ratio_ci_matches_exhaustive_enumeration():
    a, b = np.array(DELTA_AT), np.array(DELTA_ABOVE)
    ratios = [a[list(idx)].mean() / b[list(idx)].mean() for idx in itertools.product(range(4), repeat=4)]
    lo, hi = np.percentile(ratios, [2.5, 97.5])
    c = cluster_bootstrap_contrast(a, b, B=20_000, rng_seed=42)
    assert c.ratio_ci[0] == pytest.approx(lo, rel=0.1)
    assert c.ratio_ci[1] == pytest.approx(hi, rel=0.1)


def test_cluster_contrast_identical_lists():
    c = cluster_bootstrap_contrast([0.1, 0.2, 0.3], [0.1, 0.2, 0.3], B=2000)
    assert c.ratio == 1.0
    assert c.ratio_ci == pytest.approx((1.0, 1.0))


def test_cluster_contrast_exclusions_and_errors():
    c = cluster_bootstrap_contrast([0.1, 0.2], [-0.1, 0.05], B=2000)
    assert c.n_excluded > 0
    with pytest.raises(ValueError):
        cluster_bootstrap_contrast([0.1], [0.2])
    with pytest.raises(ValueError):
        cluster_bootstrap_contrast([0.1, 0.2], [0.2])


def test_leave_one_out_by_hand():
    loo = leave_one_out_ratios([1.0, 2.0, 3.0], [1.0, 1.0, 2.0])
    assert loo == pytest.approx([5 / 3, 4 / 3, 1.5])


def test_metric_report_invariant_and_json():
    r = MetricReport(ell=5, delta=0.01, undefined_reason=UNDEFINED_DENOMINATOR)
    d = json.loads(json.dumps(r.to_dict()))
    assert d["rho"] is None and d["delta"] == 0.01
    with pytest.raises(ValueError):
        MetricReport(ell=1, rho=None)
    with pytest.raises(ValueError):
        MetricReport(ell=1, rho=0.5, undefined_reason="x")


def test_seedwise_report():
    r = seedwise_report(4, [0.17, 0.16, 0.168], [0.135, 0.133, 0.134], [0.132, 0.131, 0.133], B=2000)
    assert r.n_seeds == 3 and r.ci_low <= r.rho <= r.ci_high
    u = seedwise_report(4, 0.1, 0.09, 0.12)
    assert u.rho is None and u.undefined_reason == UNDEFINED_DENOMINATOR
    assert u.delta == pytest.approx(0.01)


def test_locate_cliff_reference_series():
    reports = [MetricReport(ell=l, rho=r, delta=0.0) for l, r in [(3, 0.73), (4, 0.913), (5, 0.078)]]
    ell, s = locate_cliff(reports)
    assert ell == 4
    assert s.value == pytest.approx(11.7, abs=0.01)


def test_locate_cliff_flat_and_fallback():
    flat = [MetricReport(ell=l, rho=0.5, delta=0.0) for l in range(2, 6)]
    assert locate_cliff(flat) == (None, None)
    mixed = [MetricReport(ell=3, rho=0.8, delta=0.04),
             MetricReport(ell=4, delta=0.03, undefined_reason=UNDEFINED_DENOMINATOR),
             MetricReport(ell=5, delta=0.005, undefined_reason=UNDEFINED_DENOMINATOR)]
    ell, s = locate_cliff(mixed)
    assert ell == 4 and s.method == "delta_fallback" and s.value == pytest.approx(6.0)
