"""Allometry oracle tests.

ORACLE_TABLE was precomputed with mpmath at 50 decimal digits, evaluating
each model formula directly; implementations must match to 1e-9 relative.
"""

import pytest

from forestcensus.allometry import (
    AllometricModel,
    SpeciesParams,
    agb,
    carbon_and_co2e,
    crown_from_dbh,
    dbh_from_crown,
    default_models,
    load_model_registry,
    stand_totals,
    tree_biomass,
)
from forestcensus.errors import NegativeInput

# (model_id, wood_density, dbh_cm, height_m, agb_kg at 50 digits)
ORACLE_TABLE = [
    ("tropical_with_height", 0.6, 30, 20, "581.61640754364119"),
    ("tropical_with_height", 0.47, 12.5, 9, "38.062000285016409"),
    ("tropical_with_height", 0.9, 85, 42, "13610.460010185788"),
    ("tropical_with_height", 0.32, 5, 4.5, "2.2231374003615617"),
    ("tropical_with_height", 1.1, 120, 55, "42225.043161530786"),
    ("tropical_with_height", 0.55, 47.3, 28.1, "1810.8203402668981"),
    ("tropical_with_height", 0.78, 64, 33, "5375.6664161077501"),
    ("tropical_with_height", 0.42, 18, 14, "106.95947546012501"),
    ("tropical_with_height", 0.68, 99.5, 48, "16039.316759166771"),
    ("tropical_with_height", 0.5, 1, 2, "0.0673"),
    ("tropical_no_height", 0.6, 30, 0.0, "724.10934809512108"),
    ("tropical_no_height", 0.47, 12.5, 0.0, "56.769570420656279"),
    ("tropical_no_height", 0.9, 85, 0.0, "14187.098046369223"),
    ("tropical_no_height", 0.32, 5, 0.0, "3.4476127993299736"),
    ("tropical_no_height", 1.1, 120, 0.0, "37831.387918201877"),
    ("tropical_no_height", 0.55, 47.3, 0.0, "2108.7895055473407"),
    ("tropical_no_height", 0.78, 64, 0.0, "6278.1393628672566"),
    ("tropical_no_height", 0.42, 18, 0.0, "133.32903490277802"),
    ("tropical_no_height", 0.68, 99.5, 0.0, "15390.004944895743"),
    ("tropical_no_height", 0.5, 2, 0.0, "0.5416304939279638"),
    ("custom", 0.6, 3, 20, "9.0"),
    ("custom", 0.5, 10, 5, "100.0"),
    ("custom", 0.9, 47.3, 28.1, "2237.29"),
]

SPECIES = SpeciesParams(1, "test", wood_density=0.6)


class TestDbhBridge:
    def test_linear_case(self):
        sp = SpeciesParams(1, "x", 0.6, crown_dbh_a=4.0, crown_dbh_b=1.0)
        assert dbh_from_crown(5.0, sp) == pytest.approx(20.0)

    def test_zero_crown_zero_dbh(self):
        assert dbh_from_crown(0.0, SPECIES) == 0.0

    def test_power_law_against_high_precision_value(self):
        # 3.48 * 6^1.2 computed with mpmath at 50 digits
        assert dbh_from_crown(6.0, SPECIES) == pytest.approx(
            29.878634413477735, rel=1e-12
        )

    def test_inverse_round_trip(self):
        for crown in (0.5, 2.0, 7.3, 15.0):
            assert crown_from_dbh(dbh_from_crown(crown, SPECIES), SPECIES) == pytest.approx(crown, rel=1e-12)

    def test_negative_rejected(self):
        with pytest.raises(NegativeInput):
            dbh_from_crown(-1.0, SPECIES)


class TestAgbOracle:
    @pytest.mark.parametrize("model_id,rho,dbh,height,expected", ORACLE_TABLE)
    def test_matches_arbitrary_precision_table(self, model_id, rho, dbh, height, expected):
        model = default_models()[model_id]
        value = agb(dbh, height, rho, model)
        assert value == pytest.approx(float(expected), rel=1e-9)

    def test_zero_dbh_zero_agb_all_models(self):
        for model in default_models().values():
            assert agb(0.0, 25.0, 0.6, model) == 0.0

    def test_custom_quadratic(self):
        model = AllometricModel("custom", {"c": 1.0, "p": 2.0, "q": 0.0, "r": 0.0})
        assert agb(3.0, 11.0, 0.6, model) == pytest.approx(9.0)

    def test_negative_inputs_rejected(self):
        model = default_models()["tropical_with_height"]
        with pytest.raises(NegativeInput):
            agb(-1.0, 5.0, 0.6, model)
        with pytest.raises(NegativeInput):
            agb(10.0, -5.0, 0.6, model)

    def test_monotonicity_over_domain(self, rng):
        # strictly increasing in dbh, height (where used) and density over
        # the documented domain (dbh 0.1..500 cm, height 1..90 m)
        models = default_models()
        for _ in range(10000):
            d = float(rng.uniform(0.1, 500))
            h = float(rng.uniform(1, 90))
            rho = float(rng.uniform(0.15, 1.1))
            bump = 1.0 + float(rng.uniform(0.001, 0.2))
            mid = rng.choice(["tropical_with_height", "tropical_no_height"])
            m = models[mid]
            assert agb(d * bump, h, rho, m) > agb(d, h, rho, m)
            assert agb(d, h, rho * bump if rho * bump < 1.2 else 1.19, m) >= agb(d, h, rho, m)
            if mid == "tropical_with_height":
                assert agb(d, h * bump, rho, m) > agb(d, h, rho, m)


class TestCarbon:
    def test_fixed_ratio(self):
        carbon, co2e = carbon_and_co2e(1000.0)
        assert carbon == pytest.approx(470.0)
        assert co2e == pytest.approx(1723.3333333333333)

    def test_zero(self):
        assert carbon_and_co2e(0.0) == (0.0, 0.0)

    def test_ratio_identity_random(self, rng):
        # co2e is carbon times the exact stoichiometric constant 44/12
        for _ in range(200):
            mass = float(rng.uniform(0, 1e5))
            carbon, co2e = carbon_and_co2e(mass)
            assert co2e == carbon * (44.0 / 12.0)


class TestStandTotals:
    def make_tree(self, agb_kg, tree_id=1):
        carbon, co2e = carbon_and_co2e(agb_kg)
        from forestcensus.allometry import TreeBiomass

        return TreeBiomass(tree_id, 10.0, agb_kg, carbon, co2e)

    def test_empty(self):
        sc = stand_totals([], 2.0)
        assert sc.total_agb_mg == 0.0 and sc.agb_mg_per_ha == 0.0

    def test_single_tree_density(self):
        sc = stand_totals([self.make_tree(1000.0)], 1.0)
        assert sc.agb_mg_per_ha == pytest.approx(1.0)

    def test_matches_naive_sum(self, rng):
        trees = [self.make_tree(float(rng.uniform(1, 2000)), i) for i in range(500)]
        sc = stand_totals(trees, 4.0)
        naive = sum(t.agb_kg for t in trees) / 1000.0
        assert sc.total_agb_mg == pytest.approx(naive, rel=1e-12)

    def test_area_scaling(self, rng):
        trees = [self.make_tree(float(rng.uniform(1, 2000)), i) for i in range(100)]
        a = stand_totals(trees, 2.0)
        b = stand_totals(trees, 4.0)
        assert a.total_agb_mg == b.total_agb_mg
        assert a.agb_mg_per_ha == pytest.approx(2.0 * b.agb_mg_per_ha)

    def test_order_independence(self, rng):
        trees = [self.make_tree(float(rng.uniform(0.1, 3000)), i) for i in range(300)]
        sc1 = stand_totals(trees, 3.0)
        sc2 = stand_totals(list(reversed(trees)), 3.0)
        assert sc1.total_agb_mg == sc2.total_agb_mg


class TestModelRegistry:
    def test_override_and_defaults(self):
        text = "model_id,param,value\ntropical_with_height,c,0.07\n"
        models = load_model_registry(text)
        assert models["tropical_with_height"].coefficients["c"] == 0.07
        assert models["tropical_with_height"].coefficients["e"] == 0.976
        assert models["tropical_no_height"].coefficients["c1"] == 2.148

    def test_unknown_model_rejected(self):
        with pytest.raises(ValueError, match="unknown model_id"):
            load_model_registry("model_id,param,value\nmagic,c,1\n")

    def test_model_swap_changes_only_biomass(self):
        models = default_models()
        a = tree_biomass(7, 5.0, 20.0, SPECIES, models["tropical_with_height"])
        b = tree_biomass(7, 5.0, 20.0, SPECIES, models["tropical_no_height"])
        assert a.tree_id == b.tree_id and a.dbh_cm == b.dbh_cm
        assert a.agb_kg != b.agb_kg
