import numpy as np
import pytest

from misstmle import datagen
from misstmle.core import RngStream, complete_cases, logit, rows_complete
from misstmle.datagen import (CalibrationError, MissingnessModel, calibrate_intercept,
                              default_complete_model, default_missingness_model,
                              generate_complete, generate_complete_with_potentials,
                              impose_missingness)


@pytest.fixture(scope="module")
def simple_model():
    return default_complete_model("simple")


@pytest.fixture(scope="module")
def complex_model():
    return default_complete_model("complex")


@pytest.fixture(scope="module")
def mdag_a(simple_model):
    return default_missingness_model("simple", "A")


class TestCalibrateIntercept:
    def test_symmetric_target_is_zero(self):
        c = calibrate_intercept(0.5, lambda g, k: np.zeros(k), draws=10_000)
        assert c == pytest.approx(0.0, abs=1e-9)

    def test_no_covariates_closed_form(self):
        c = calibrate_intercept(0.21, lambda g, k: np.zeros(k), draws=10_000)
        assert c == pytest.approx(logit(0.21), abs=1e-8)

    def test_exposure_target_hit_in_simulation(self, simple_model):
        # Monte Carlo bisection oracle: simulated prevalence must sit in the
        # published band around 0.15
        d = generate_complete(simple_model, 400_000, RngStream(5, (1,)))
        assert 0.145 <= d.raw_column("X").mean() <= 0.155

    def test_unreachable_target_raises(self):
        with pytest.raises(CalibrationError, match="Z9"):
            calibrate_intercept(1e-12, lambda g, k: np.zeros(k), draws=1000, name="Z9")


class TestGenerateComplete:
    def test_pure_effect_model_recovers_difference(self):
        model = datagen.CompleteDataModel(
            scenario="simple", z1_intercept=0.0, z2_intercept=0.0, z2_on_aux=0.0,
            z3_intercept=0.0, z3_on_aux=0.0, z4_intercept=0.0, z4_on_aux=0.0,
            z5_intercept=0.0, exposure_intercept=0.0, exposure_main=(0.0,) * 6,
            exposure_pairwise=(0.0,) * 6, outcome_intercept=0.0, exposure_effect=0.2,
            outcome_main=(0.0,) * 5, outcome_pairwise=(0.0,) * 6,
            outcome_threeway=(0.0,) * 4, outcome_fourway=0.0)
        d = generate_complete(model, 400_000, RngStream(5, (2,)))
        x = d.raw_column("X")
        y = d.raw_column("Y")
        diff = y[x == 1].mean() - y[x == 0].mean()
        assert diff == pytest.approx(0.2, abs=0.02)

    def test_calibrated_marginals(self, simple_model):
        d = generate_complete(simple_model, 2_000_000, RngStream(5, (3,)))
        for name, target in datagen.PREVALENCE_TARGETS.items():
            assert d.raw_column(name).mean() == pytest.approx(target, abs=0.01)
        y = d.raw_column("Y")
        assert y.mean() == pytest.approx(0.0, abs=0.01)
        assert y.std() == pytest.approx(1.0, abs=0.25)

    def test_no_missing_cells(self, simple_model):
        d = generate_complete(simple_model, 100, RngStream(5, (4,)))
        assert not d.mask.any()

    def test_potential_outcome_oracle_complex(self, complex_model):
        # the exposure enters only additively, so averaging y1 - y0 must give
        # the true effect up to Monte Carlo error (3 MCSE at n = 1e6)
        n = 1_000_000
        d, pot = generate_complete_with_potentials(complex_model, n, RngStream(5, (5,)))
        diff = pot.y_exposed - pot.y_unexposed
        # additive effect: constant per record up to accumulation roundoff
        assert float(np.max(np.abs(diff - 0.2))) < 1e-9
        assert float(np.mean(diff)) == pytest.approx(0.2, abs=1e-12)
        x = d.raw_column("X")
        y = d.raw_column("Y")
        assert np.array_equal(y, np.where(x == 1.0, pot.y_exposed, pot.y_unexposed))

    def test_reproducible(self, simple_model):
        a = generate_complete(simple_model, 50, RngStream(9, (0,)))
        b = generate_complete(simple_model, 50, RngStream(9, (0,)))
        assert np.array_equal(a.values, b.values)


def _flat_missingness(p, outcome_coef=0.0):
    return MissingnessModel(mdag="A" if outcome_coef == 0.0 else "B",
                            intercepts=(logit(p),) * 5, outcome_coef=outcome_coef,
                            covariate_coef=0.0, indicator_coef=0.0)


class TestImposeMissingness:
    def test_constant_probability_case(self, simple_model):
        d = generate_complete(simple_model, 200_000, RngStream(6, (0,)))
        dm = impose_missingness(d, _flat_missingness(0.25), RngStream(6, (1,)))
        for name in ("Z2", "Z3", "Z4", "X", "Y"):
            assert (~dm.observed(name)).mean() == pytest.approx(0.25, abs=0.01)
        for name in ("A", "Z1", "Z5"):
            assert dm.observed(name).all()

    def test_calibrated_fractions_and_any_missing(self, simple_model, mdag_a):
        d = generate_complete(simple_model, 1_000_000, RngStream(6, (2,)))
        dm = impose_missingness(d, mdag_a, RngStream(6, (3,)))
        for name, target in datagen.MISSING_TARGETS.items():
            assert (~dm.observed(name)).mean() == pytest.approx(target, abs=0.01)
        retained = complete_cases(dm, ("Z2", "Z3", "Z4", "X", "Y")).n / dm.n
        assert retained == pytest.approx(0.50, abs=0.02)

    def test_mechanisms_coincide_when_outcome_coefficient_vanishes(self, simple_model):
        d = generate_complete(simple_model, 20_000, RngStream(6, (4,)))
        base = _flat_missingness(0.2)
        relabelled = MissingnessModel(mdag="B", intercepts=base.intercepts, outcome_coef=0.0,
                                      covariate_coef=base.covariate_coef,
                                      indicator_coef=base.indicator_coef)
        m1 = impose_missingness(d, base, RngStream(6, (5,)))
        m2 = impose_missingness(d, relabelled, RngStream(6, (5,)))
        assert np.array_equal(m1.mask, m2.mask)

    def test_mask_matches_indicator_draws(self, simple_model, mdag_a):
        d = generate_complete(simple_model, 5_000, RngStream(6, (6,)))
        dm = impose_missingness(d, mdag_a, RngStream(6, (7,)))
        obs = ~dm.mask
        assert np.array_equal(dm.values[obs], d.values[obs])
        assert np.array_equal(dm.values, d.values)  # raw values retained under the mask

    def test_requires_complete_input(self, simple_model, mdag_a):
        d = generate_complete(simple_model, 100, RngStream(6, (8,)))
        dm = impose_missingness(d, mdag_a, RngStream(6, (9,)))
        with pytest.raises(ValueError):
            impose_missingness(dm, mdag_a, RngStream(6, (10,)))

    def test_mechanism_a_ignores_outcome(self, simple_model, mdag_a):
        # permuting Y before imposing missingness must leave each indicator's
        # rate unchanged under mechanism A (two-sample proportion check)
        n = 120_000
        d = generate_complete(simple_model, n, RngStream(6, (11,)))
        perm = RngStream(6, (12,)).generator().permutation(n)
        values = d.values.copy()
        values[:, d.index("Y")] = values[perm, d.index("Y")]
        d_perm = d.with_values(values, d.mask)
        m1 = impose_missingness(d, mdag_a, RngStream(6, (13,)))
        m2 = impose_missingness(d_perm, mdag_a, RngStream(6, (14,)))
        for name in ("Z2", "Z3", "Z4", "X", "Y"):
            p1 = (~m1.observed(name)).mean()
            p2 = (~m2.observed(name)).mean()
            pooled = 0.5 * (p1 + p2)
            z = abs(p1 - p2) / np.sqrt(2 * pooled * (1 - pooled) / n)
            assert z < 4.0

    def test_mechanism_b_depends_on_outcome(self, simple_model):
        mdag_b = default_missingness_model("simple", "B")
        n = 120_000
        d = generate_complete(simple_model, n, RngStream(6, (15,)))
        y = d.raw_column("Y")
        hi = y > np.median(y)
        dm = impose_missingness(d, mdag_b, RngStream(6, (16,)))
        miss = ~dm.observed("Z2")
        assert miss[hi].mean() > miss[~hi].mean() + 0.005


def test_default_models_cached_and_calibrated():
    m1 = default_missingness_model("simple", "A")
    m2 = default_missingness_model("simple", "A")
    assert m1 is m2
    assert m1.outcome_coef == 0.0
    assert default_missingness_model("simple", "B").outcome_coef == 0.1
    assert all(np.isfinite(m1.intercepts))
