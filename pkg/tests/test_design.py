"""Design layer: construction, validation, serialization, derived quantities."""

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mixedpower.design import (
    LatentDesign,
    OrdinalThresholds,
    OutcomeSpec,
    ResponderRule,
    RuleEntry,
    build_design,
    build_grid_cell,
    composite_verification_design,
    cut_interval,
    design_from_dict,
    design_to_dict,
    latent_effect_from_proportions,
    latent_mean_from_proportion,
    load_design,
    load_fixture,
    lupus_trial_design,
    rule_intervals,
    save_design,
    validate,
)
from mixedpower.exceptions import DesignError, ValidationError
from mixedpower.mvn import std_normal_cdf, std_normal_quantile


def small_design(rule=True):
    outcomes = [
        OutcomeSpec("score", "continuous", mean_treatment=1.0, mean_control=0.2, sd=2.0),
        OutcomeSpec(
            "grade", "ordinal", mean_treatment=0.4, mean_control=0.0,
            levels=3, cuts=(-0.5, 0.8), response_band=(1, "above"),
        ),
        OutcomeSpec("event", "binary", mean_treatment=0.3, mean_control=-0.1),
    ]
    responder = ResponderRule(
        (
            RuleEntry("score", "above", threshold=0.5),
            RuleEntry("grade", "above", cut=1),
            RuleEntry("event", "above", cut=1),
        )
    ) if rule else None
    return build_design(outcomes, [0.3, 0.2, 0.1], responder_rule=responder)


class TestOutcomeSpec:
    def test_binary_gets_fixed_cut_and_band(self):
        d = small_design()
        binary = d.outcomes[d.index_of("event")]
        assert binary.cuts == (0.0,)
        assert binary.response_band == (1, "above")
        assert binary.n_categories == 2

    def test_binary_rejects_moved_cut(self):
        bad = OutcomeSpec("event", "binary", 0.3, -0.1, cuts=(0.5,))
        with pytest.raises(ValidationError):
            build_design([bad], [])

    def test_latent_sd_is_unit_for_discrete(self):
        d = small_design()
        assert d.latent_sds().tolist() == [2.0, 1.0, 1.0]


class TestOrdinalThresholds:
    def test_from_probs_matches_quantiles(self):
        t = OrdinalThresholds.from_probs([0.2, 0.3, 0.5])
        assert t.cuts[0] == pytest.approx(std_normal_quantile(0.2), abs=1e-12)
        assert t.cuts[1] == pytest.approx(std_normal_quantile(0.5), abs=1e-12)

    @pytest.mark.parametrize("bad", [[0.5, 0.6], [1.0], [0.2, -0.1, 0.9], [0.3]])
    def test_rejects_bad_probs(self, bad):
        with pytest.raises(ValidationError):
            OrdinalThresholds.from_probs(bad)

    def test_rejects_unsorted_cuts(self):
        with pytest.raises(ValidationError):
            OrdinalThresholds((0.5, 0.2))


class TestBuildDesign:
    def test_canonical_order_continuous_ordinal_binary(self):
        outcomes = [
            OutcomeSpec("event", "binary", 0.3, -0.1),
            OutcomeSpec("score", "continuous", 1.0, 0.2, sd=2.0),
            OutcomeSpec("grade", "ordinal", 0.4, 0.0, levels=3, cuts=(-0.5, 0.8)),
        ]
        d = build_design(outcomes, np.eye(3))
        assert d.kinds == ("continuous", "ordinal", "binary")
        assert d.permutation == (1, 2, 0)

    def test_correlation_permuted_with_outcomes(self):
        # correlation given in input order (event, score, grade)
        corr = np.array([[1.0, 0.5, 0.2], [0.5, 1.0, 0.3], [0.2, 0.3, 1.0]])
        outcomes = [
            OutcomeSpec("event", "binary", 0.3, -0.1),
            OutcomeSpec("score", "continuous", 1.0, 0.2, sd=2.0),
            OutcomeSpec("grade", "ordinal", 0.4, 0.0, levels=3, cuts=(-0.5, 0.8)),
        ]
        d = build_design(outcomes, corr)
        i, j = d.index_of("score"), d.index_of("event")
        assert d.correlation[i, j] == 0.5
        i, j = d.index_of("grade"), d.index_of("event")
        assert d.correlation[i, j] == 0.2

    def test_standardized_effects(self):
        d = small_design()
        want = [(1.0 - 0.2) / 2.0, 0.4, 0.3 - (-0.1)]
        assert d.standardized_effects() == pytest.approx(want, abs=1e-15)

    def test_covariance_scales_by_sds(self):
        d = small_design()
        cov = d.covariance()
        i, j = d.index_of("score"), d.index_of("grade")
        assert cov[i, i] == pytest.approx(4.0)
        assert cov[i, j] == pytest.approx(d.correlation[i, j] * 2.0)


class TestValidation:
    def test_valid_design_has_no_problems(self):
        assert validate(small_design()) == []

    def test_missing_sd_reported(self):
        d = build_design([OutcomeSpec("x", "continuous", 1.0, 0.0)], [])
        assert any("sd" in p for p in validate(d))
        with pytest.raises(DesignError):
            d.require_valid()

    def test_rule_must_cover_every_outcome(self):
        base = small_design(rule=False)
        partial = ResponderRule((RuleEntry("score", "above", threshold=0.5),))
        d = LatentDesign(base.outcomes, base.correlation, responder_rule=partial)
        assert any("missing entries" in p for p in validate(d))

    def test_rule_unknown_outcome_reported(self):
        base = small_design(rule=False)
        rule = ResponderRule(
            (
                RuleEntry("score", "above", threshold=0.5),
                RuleEntry("grade", "above", cut=1),
                RuleEntry("event", "above", cut=1),
                RuleEntry("ghost", "above", cut=1),
            )
        )
        d = LatentDesign(base.outcomes, base.correlation, responder_rule=rule)
        assert any("ghost" in p for p in validate(d))

    def test_bad_allocation_reported(self):
        base = small_design()
        d = LatentDesign(base.outcomes, base.correlation, base.responder_rule, allocation=-1.0)
        assert any("allocation" in p for p in validate(d))


class TestIntervals:
    def test_cut_interval_directions(self):
        # 1-based: 'above' j selects categories >= j, the latent region
        # [cuts[j-1], inf); 'below' j selects categories < j
        cuts = (-1.0, 0.5, 2.0)
        assert cut_interval(cuts, 1, "above") == (-1.0, math.inf)
        assert cut_interval(cuts, 2, "above") == (0.5, math.inf)
        assert cut_interval(cuts, 2, "below") == (-math.inf, 0.5)
        assert cut_interval(cuts, 3, "below") == (-math.inf, 2.0)
        # index 0 'above' and index w+1 'below' never bind
        assert cut_interval(cuts, 0, "above") == (-math.inf, math.inf)
        assert cut_interval(cuts, 4, "below") == (-math.inf, math.inf)

    def test_band_interval_uses_response_band(self):
        d = small_design()
        k = d.index_of("grade")
        assert d.band_interval(k) == (-0.5, math.inf)

    def test_rule_intervals_standardizes_continuous(self):
        d = small_design()
        intervals = rule_intervals(d)
        lo, hi = intervals[d.index_of("score")]
        assert lo == pytest.approx(0.5) and hi == math.inf

    def test_rule_intervals_requires_a_rule(self):
        with pytest.raises(ValidationError):
            rule_intervals(small_design(rule=False))


class TestLatentConversions:
    def test_effect_from_proportions(self):
        got = latent_effect_from_proportions(0.97, 0.95)
        assert got == pytest.approx(
            std_normal_quantile(0.97) - std_normal_quantile(0.95), abs=1e-14
        )

    def test_mean_from_proportion_roundtrip(self):
        mu = latent_mean_from_proportion(0.7, cut=0.5)
        assert float(std_normal_cdf(mu - 0.5)) == pytest.approx(0.7, abs=1e-12)


class TestSerialization:
    def test_roundtrip_preserves_design(self):
        d = small_design()
        again = design_from_dict(design_to_dict(d))
        assert again.names == d.names
        assert np.allclose(again.correlation, d.correlation, atol=0)
        assert again.responder_rule == d.responder_rule
        assert again.design_hash() == d.design_hash()

    def test_save_load_file(self, tmp_path):
        d = small_design()
        path = tmp_path / "design.json"
        save_design(d, path)
        assert load_design(path).design_hash() == d.design_hash()

    def test_bad_payloads_raise(self, tmp_path):
        with pytest.raises(ValidationError):
            design_from_dict({"not": "a design"})
        with pytest.raises(ValidationError):
            design_from_dict({"outcomes": [{"name": "x"}]})
        p = tmp_path / "broken.json"
        p.write_text("{")
        with pytest.raises(ValidationError):
            load_design(p)

    def test_hash_changes_with_content(self):
        d = small_design()
        payload = design_to_dict(d)
        payload["outcomes"][0]["mean_treatment"] = 1.5
        assert design_from_dict(payload).design_hash() != d.design_hash()

    @settings(max_examples=25, deadline=None)
    @given(
        mt=st.floats(-2, 2), mc=st.floats(-2, 2), sd=st.floats(0.1, 5),
        rho=st.floats(-0.9, 0.9), cut=st.floats(-1.5, 1.5),
    )
    def test_roundtrip_random_two_outcome(self, mt, mc, sd, rho, cut):
        d = build_design(
            [
                OutcomeSpec("a", "continuous", mt, mc, sd=sd),
                OutcomeSpec("b", "ordinal", 0.2, 0.0, levels=3, cuts=(cut, cut + 1.0)),
            ],
            [rho],
        )
        again = design_from_dict(json.loads(json.dumps(design_to_dict(d))))
        assert again.design_hash() == d.design_hash()


class TestFixtures:
    def test_lupus_fixture_shape(self):
        d = lupus_trial_design()
        assert d.dim == 4
        assert d.kinds == ("continuous", "continuous", "ordinal", "binary")
        assert d.responder_rule is not None
        assert validate(d) == []

    def test_composite_verification_fixture(self):
        d = composite_verification_design()
        assert d.dim == 4
        assert validate(d) == []

    def test_unknown_fixture_lists_available(self):
        with pytest.raises(ValidationError) as err:
            load_fixture("no_such_design")
        assert "available" in str(err.value)


class TestGridCellFamily:
    def test_all_drivers_bind(self):
        d = build_grid_cell(("y1", "y2", "y3"), 0.5, 0.3, 0.2)
        assert d.dim == 3
        assert validate(d) == []
        entries = {e.outcome: e for e in d.responder_rule.entries}
        assert entries["y1"].threshold == pytest.approx(0.2)
        assert entries["y2"].cut == 2
        assert entries["y3"].cut == 1

    def test_non_drivers_never_bind(self):
        d = build_grid_cell(("y3",), 0.0, 0.3, 0.2)
        entries = {e.outcome: e for e in d.responder_rule.entries}
        assert entries["y1"].threshold == -math.inf
        assert entries["y2"].cut == 0
        intervals = rule_intervals(d)
        assert intervals[0] == (-math.inf, math.inf)
        assert intervals[1] == (-math.inf, math.inf)

    def test_driver_control_band_mass_is_placement_tail(self):
        # every driver's control-arm response probability is Phi(-placement)
        from mixedpower.power import response_probability

        c = 0.4
        for drivers in (("y1",), ("y2",), ("y3",)):
            d = build_grid_cell(drivers, 0.0, 0.25, c)
            got = response_probability(d, "C").value
            assert got == pytest.approx(float(std_normal_cdf(-c)), abs=2e-6), drivers
