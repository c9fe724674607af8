"""Variant structure, substitution semantics, and model persistence."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chokevfm import autodiff as ad
from chokevfm import estimation, hybrid
from chokevfm.errors import ConfigurationError, ContractError, EvaluationError
from conftest import random_batch

ALL_SIX = ("rho_o", "rho_w", "kappa", "m_g", "p_rc", "c_d")

# variant -> (estimable physical set, network inputs)
TABLE = {
    "MM": (ALL_SIX, ()),
    "HM_A2": (("rho_o", "rho_w", "kappa", "m_g", "p_rc"), ("u",)),
    "HM_RHOG1": (("rho_o", "rho_w", "kappa", "p_rc", "c_d"), ("p1", "t1")),
    "HM_RHOG2": (("rho_o", "rho_w", "m_g", "p_rc", "c_d"), ("p1", "p2", "t1", "t2")),
    "HM_RHO": (ALL_SIX, ("p1", "p2", "t1", "t2", "eta_g", "eta_o")),
    "HM_EPS": (ALL_SIX, ("p1", "p2", "t1", "t2", "eta_g", "eta_o")),
    "DM": ((), ("p1", "p2", "t1", "t2", "u", "eta_g", "eta_o")),
}


def build_variant(tag, priors, cols, seed=3, widths=(6, 5), y_scale=0.01):
    stats = hybrid.Standardization.from_columns(cols)
    return hybrid.build(tag, priors, seed=seed, stats=stats, widths=widths, y_scale=y_scale)


class TestVariantTable:
    @pytest.mark.parametrize("tag", list(TABLE))
    def test_estimable_set_and_inputs_conform(self, tag):
        spec = hybrid.VARIANTS[tag]
        expected_phys, expected_inputs = TABLE[tag]
        assert tuple(spec.physical) == expected_phys
        assert tuple(spec.x_dm) == expected_inputs

    def test_mm_has_no_network(self, priors):
        model = build_variant("MM", priors, random_batch(np.random.default_rng(0)))
        assert model.net is None
        assert len(model.parameters()) == 6
        assert set(model.physical_values()) == set(ALL_SIX)

    def test_hm_a2_drops_discharge_coefficient(self, priors):
        model = build_variant("HM_A2", priors, random_batch(np.random.default_rng(0)))
        assert "c_d" not in model.phys
        assert model.variant.x_dm == ("u",)
        assert model.net is not None

    def test_hm_rhog2_keeps_kappa_fixed_at_prior_mean(self, priors):
        model = build_variant("HM_RHOG2", priors, random_batch(np.random.default_rng(0)))
        assert "kappa" not in model.phys
        assert model.fixed_phys["kappa"] == priors["kappa"][0]

    def test_dm_has_no_physical_parameters(self, priors):
        model = build_variant("DM", priors, random_batch(np.random.default_rng(0)))
        assert model.phys == {}
        assert model.variant.x_dm == hybrid.X_COLUMNS

    def test_unknown_variant_rejected(self, priors):
        with pytest.raises(ConfigurationError, match="unknown variant"):
            hybrid.build("HM_X", priors, seed=0)

    def test_missing_prior_named(self, priors):
        incomplete = {k: v for k, v in priors.items() if k != "kappa"}
        with pytest.raises(ConfigurationError, match="kappa"):
            hybrid.build("MM", incomplete, seed=0)

    def test_parameters_initialized_at_prior_means(self, priors):
        model = build_variant("MM", priors, random_batch(np.random.default_rng(0)))
        for name, value in model.physical_values().items():
            assert value == pytest.approx(priors[name][0], rel=1e-12)


class TestPositivityTransform:
    @given(s=st.floats(-40.0, 40.0))
    @settings(max_examples=200, deadline=None)
    def test_natural_value_positive_for_any_unconstrained(self, s):
        tp = hybrid.TransformedParameter("c_d", 0.84, 0.1)
        tp.s.value[...] = s
        assert tp.natural > 0.0

    def test_round_trip(self):
        tp = hybrid.TransformedParameter("rho_o", 780.0, 50.0)
        tp.set_natural(812.5)
        assert tp.natural == pytest.approx(812.5, rel=1e-14)

    def test_expression_matches_value(self):
        tp = hybrid.TransformedParameter("kappa", 1.3, 0.08)
        assert float(ad.value_of(tp.expression())) == tp.natural


class TestPredictionSemantics:
    def test_hm_eps_zero_network_equals_mm_exactly(self, priors):
        cols = random_batch(np.random.default_rng(2), 16)
        mm = build_variant("MM", priors, cols)
        eps = build_variant("HM_EPS", priors, cols)
        for w in eps._weight_leaves:
            w.value[...] = 0.0
        for b in eps._bias_leaves:
            b.value[...] = 0.0
        assert np.array_equal(eps.predict(cols), mm.predict(cols))

    def test_dm_zero_network_is_zero_flow(self, priors):
        cols = random_batch(np.random.default_rng(2), 16)
        dm = build_variant("DM", priors, cols)
        for leaf in dm.parameters():
            leaf.value[...] = 0.0
        assert np.array_equal(dm.predict(cols), np.zeros(16))

    def test_hm_eps_decomposition(self, priors):
        cols = random_batch(np.random.default_rng(3), 16)
        mm = build_variant("MM", priors, cols)
        eps = build_variant("HM_EPS", priors, cols, seed=11)
        raw = ad.value_of(eps.network_output(cols))
        np.testing.assert_allclose(
            eps.predict(cols) - mm.predict(cols), eps.y_scale * raw, rtol=1e-12, atol=1e-18
        )

    @pytest.mark.parametrize("tag", ["HM_A2", "HM_RHOG1", "HM_RHOG2", "HM_RHO"])
    def test_substitution_locality(self, tag, priors):
        """A network pinned to the mechanistic relation reproduces MM."""
        cols = random_batch(np.random.default_rng(4), 1)
        mm = build_variant("MM", priors, cols)
        model = build_variant(tag, priors, cols)
        reference = hybrid.reference_relation(
            model.variant.substitutes,
            dict(cols),
            {name: priors[name][0] for name in ALL_SIX},
            model.constants,
        )
        pinned = float(np.atleast_1d(reference)[0]) / model.out_scale
        for w in model._weight_leaves:
            w.value[...] = 0.0
        for b in model._bias_leaves:
            b.value[...] = 0.0
        model._bias_leaves[-1].value[...] = pinned
        np.testing.assert_allclose(model.predict(cols), mm.predict(cols), rtol=1e-10)

    def test_floor_saturation_signals_broken_fit(self, priors):
        cols = random_batch(np.random.default_rng(5), 32)
        model = build_variant("HM_RHOG1", priors, cols)
        for w in model._weight_leaves:
            w.value[...] = 0.0
        for b in model._bias_leaves:
            b.value[...] = 0.0
        model._bias_leaves[-1].value[...] = -5.0  # every output below the floor
        with pytest.raises(EvaluationError, match="floor"):
            model.predict(cols)

    def test_predict_point_matches_batch(self, priors):
        cols = random_batch(np.random.default_rng(6), 4)
        model = build_variant("MM", priors, cols)
        batch = model.predict(cols)
        for i, point in enumerate(_points_from(cols)):
            assert model.predict_point(point) == batch[i]


def _points_from(cols):
    from chokevfm.fluids import OperatingPoint

    n = len(cols["p1"])
    for i in range(n):
        yield OperatingPoint(
            timestamp=0.0, p1=cols["p1"][i], p2=cols["p2"][i], t1=cols["t1"][i],
            t2=cols["t2"][i], u=cols["u"][i], eta_g=cols["eta_g"][i],
            eta_o=cols["eta_o"][i], eta_w=cols["eta_w"][i],
        )


class TestSubfunction:
    def test_mm_has_no_subfunction(self, priors):
        model = build_variant("MM", priors, random_batch(np.random.default_rng(0)))
        with pytest.raises(ContractError, match="no subfunction"):
            model.subfunction_trace()

    def test_dm_has_no_subfunction(self, priors):
        model = build_variant("DM", priors, random_batch(np.random.default_rng(0)))
        with pytest.raises(ContractError):
            model.subfunction_trace()

    def test_pinned_network_traces_its_relation(self, priors):
        cols = random_batch(np.random.default_rng(7), 32)
        model = build_variant("HM_A2", priors, cols)
        for leaf in model.parameters()[len(model.variant.physical):]:
            leaf.value[...] = 0.0
        model._bias_leaves[-1].value[...] = 1.0  # constant output = out_scale
        trace = model.subfunction_trace(grid=np.linspace(0.1, 0.9, 9))
        assert trace["sweep"] == "u"
        np.testing.assert_allclose(trace["network"], model.out_scale)
        expected = priors["c_d"][0] * model.constants.a_max * trace["input"]
        np.testing.assert_allclose(trace["reference"], expected, rtol=1e-12)

    def test_hm_rho_trace_is_finite_over_pressure(self, priors):
        cols = random_batch(np.random.default_rng(8), 32)
        model = build_variant("HM_RHO", priors, cols, seed=21)
        trace = model.subfunction_trace(sweep="p1")
        assert np.all(np.isfinite(trace["network"]))
        assert np.all(np.isfinite(trace["reference"]))

    def test_unknown_sweep_rejected(self, priors):
        model = build_variant("HM_A2", priors, random_batch(np.random.default_rng(0)))
        with pytest.raises(ContractError):
            model.subfunction_trace(sweep="t2")


class TestArchive:
    @pytest.mark.parametrize("tag", list(TABLE))
    def test_round_trip_lossless(self, tag, priors, tmp_path):
        cols = random_batch(np.random.default_rng(9), 16)
        model = build_variant(tag, priors, cols, seed=13)
        rng = np.random.default_rng(1)
        for leaf in model.parameters():
            leaf.value += 0.01 * rng.standard_normal(leaf.value.shape)
        model.training_meta["final_epochs"] = 7
        path = tmp_path / f"{tag}.json"
        model.save(path)
        loaded = hybrid.HybridModel.load(path)
        assert loaded.variant.tag == tag
        for a, b in zip(model.parameters(), loaded.parameters()):
            assert a.value.tobytes() == b.value.tobytes()
        assert loaded.training_meta["final_epochs"] == 7
        a = ad.value_of(model.predict_tensor(cols))
        b = ad.value_of(loaded.predict_tensor(cols))
        assert a.tobytes() == b.tobytes()

    def test_version_mismatch_rejected(self, priors, tmp_path):
        model = build_variant("MM", priors, random_batch(np.random.default_rng(0)))
        payload = model.to_archive()
        payload["version"] = 99
        with pytest.raises(ConfigurationError, match="version"):
            hybrid.HybridModel.from_archive(payload)


class TestGradients:
    """Spot check; the full 50-seed sweep runs in the acceptance suite."""

    KINK_MARGINS = {"critical_clamp": 1e-3, "unit_clamp": 1e-3, "radicand": 1e-2,
                    "floor": 2e-3, "relu": 1e-3}

    @pytest.mark.parametrize("tag", list(TABLE))
    def test_map_gradient_matches_finite_differences(self, tag, priors):
        checked = 0
        for seed in range(30):
            rng = np.random.default_rng([seed, 17])
            cols = random_batch(rng)
            y = rng.uniform(0.005, 0.02, 8)
            model = build_variant(tag, priors, cols, seed=seed)
            for leaf in model.parameters():
                leaf.value += 0.02 * rng.standard_normal(leaf.value.shape)
            margins = model.kink_margins(cols)
            if any(margins[k] < self.KINK_MARGINS[k] for k in margins):
                continue
            f = lambda: estimation.map_loss_tensor(model, cols, y, noise_sigma=0.002)
            params = model.parameters()
            g_ad = ad.gradient(f(), params)
            g_fd = ad.central_difference(f, params)
            for a, b in zip(g_ad, g_fd):
                diff = np.abs(a - b)
                rel = diff / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-300)
                assert np.all((rel <= 1e-4) | (diff <= 1e-8))
            checked += 1
            if checked >= 3:
                return
        pytest.fail("fewer than 3 kink-free configurations in 30 seeds")
