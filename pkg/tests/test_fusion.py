import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nhalf import (
    ActivationParams,
    BranchMode,
    DomainError,
    FusedChannelRule,
    analyze_bitwidths,
    apply_rules,
    boundary_ties,
    derive_rule,
    fold_bn_prelu,
    func_reference,
    fused_decide,
    rules_to_arrays,
    sign,
)
from conftest import draw_params, identity_params, oracle_activation_values

NEAR_ZERO_EPS = 1e-12


def derived_affine(clip=31):
    p = ActivationParams(
        gamma=[2.0], beta=[1.0], mu=[3.0], sigma_sq=[4.0],
        prelu_slope=[0.25], epsilon=NEAR_ZERO_EPS, clip=clip,
    )
    return fold_bn_prelu(p, 0)


class TestFold:
    def test_identity(self):
        affine = fold_bn_prelu(identity_params(1), 0)
        assert affine.scale == pytest.approx(1.0, rel=1e-9)
        assert affine.offset == pytest.approx(0.0, abs=1e-9)

    def test_derived_values(self):
        affine = derived_affine()
        assert affine.scale == pytest.approx(1.0, rel=1e-9)
        assert affine.offset == pytest.approx(-2.0, rel=1e-9)
        assert affine.hi_value == pytest.approx(29.0, rel=1e-9)
        assert affine.lo_value == pytest.approx(-9.75, rel=1e-9)
        assert affine.pos_zero == pytest.approx(2.0, rel=1e-9)
        assert affine.neg_zero == pytest.approx(8.0, rel=1e-9)

    def test_negative_gamma_flips_scale(self):
        p = ActivationParams([-1.0], [0.0], [0.0], [1.0 - 1e-5], [1.0])
        assert fold_bn_prelu(p, 0).scale == pytest.approx(-1.0, rel=1e-9)

    def test_consistency_invariants(self, rng):
        p = draw_params(rng, 500, 31)
        for ch in range(500):
            c = fold_bn_prelu(p, ch)
            assert c.hi_value == pytest.approx(c.clip * c.scale + c.offset, rel=1e-9)
            assert c.lo_value == pytest.approx(
                c.prelu_slope * (-c.clip) * c.scale + c.offset, rel=1e-9
            )
            if c.pos_zero is not None and math.isfinite(c.pos_zero):
                assert c.scale * c.pos_zero + c.offset == pytest.approx(0.0, abs=1e-9)
            if c.neg_zero is not None and math.isfinite(c.neg_zero):
                assert c.prelu_slope * c.scale * c.neg_zero + c.offset == pytest.approx(
                    0.0, abs=1e-9
                )


class TestDeriveRule:
    def test_identity_rule_is_sign(self):
        rule = derive_rule(fold_bn_prelu(identity_params(1), 0))
        assert (rule.sat_hi, rule.sat_lo) == (1, -1)
        assert rule.pos_mode == BranchMode.GE and rule.pos_threshold == 0
        assert rule.neg_mode == BranchMode.GE and rule.neg_threshold == 0
        for x in range(-40, 41):
            assert fused_decide(x, rule) == sign(x)

    def test_derived_rule(self):
        rule = derive_rule(derived_affine())
        assert (rule.sat_hi, rule.sat_lo) == (1, -1)
        assert rule.pos_mode == BranchMode.GE and rule.pos_threshold == 2
        # neg_zero 8 is unreachable for x < 0, so the branch degenerates
        assert rule.neg_mode == BranchMode.GE and rule.neg_threshold == 0
        for x in range(-31, 0):
            assert fused_decide(x, rule) == -1

    def test_degenerate_flat_affine(self):
        p = ActivationParams([0.0], [-1.0], [0.0], [1.0 - 1e-5], [1.0])
        rule = derive_rule(fold_bn_prelu(p, 0))
        assert rule.pos_mode == BranchMode.CONST_NEG
        assert rule.neg_mode == BranchMode.CONST_NEG
        assert (rule.sat_hi, rule.sat_lo) == (-1, -1)

    def test_threshold_domain_invariants(self, rng):
        for clip in (8, 15, 31, 63):
            p = draw_params(rng, 2000, clip)
            for ch in range(2000):
                rule = derive_rule(fold_bn_prelu(p, ch))
                assert 0 <= rule.pos_threshold <= clip + 1
                assert -(clip + 1) <= rule.neg_threshold <= 0

    def test_rule_holds_integers_only(self):
        rule = derive_rule(derived_affine())
        for field in ("sat_hi", "sat_lo", "pos_threshold", "neg_threshold", "clip"):
            assert isinstance(getattr(rule, field), int)
        assert isinstance(rule.pos_mode, BranchMode)

    def test_rule_validation(self):
        with pytest.raises(DomainError):
            FusedChannelRule(1, -1, BranchMode.GE, 33, BranchMode.GE, 0, 31)
        with pytest.raises(DomainError):
            FusedChannelRule(0, -1, BranchMode.GE, 0, BranchMode.GE, 0, 31)


class TestFusedDecide:
    @pytest.mark.parametrize("x,expected", [(-7, -1), (0, 1)])
    def test_identity_rule(self, x, expected):
        rule = derive_rule(fold_bn_prelu(identity_params(1), 0))
        assert fused_decide(x, rule) == expected

    @pytest.mark.parametrize("x,expected", [(3, 1), (1, -1), (-5, -1), (32, 1)])
    def test_derived_rule_matches_reference_sign(self, x, expected):
        p = ActivationParams(
            gamma=[2.0], beta=[1.0], mu=[3.0], sigma_sq=[4.0],
            prelu_slope=[0.25], epsilon=NEAR_ZERO_EPS, clip=31,
        )
        rule = derive_rule(fold_bn_prelu(p, 0))
        assert fused_decide(x, rule) == expected
        assert expected == sign(func_reference(x, p, 0))

    def test_saturation(self):
        rule = derive_rule(derived_affine())
        assert fused_decide(rule.clip + 100, rule) == rule.sat_hi
        assert fused_decide(-rule.clip - 100, rule) == rule.sat_lo


@given(
    st.floats(min_value=-1000, max_value=1000, allow_nan=False),
    st.integers(min_value=-1000, max_value=1000),
)
@settings(max_examples=300)
def test_threshold_integrality(delta, x):
    assert (x >= delta) == (x >= math.ceil(delta))
    assert (x <= delta) == (x <= math.floor(delta))


class TestAgreementWithReference:
    """Fused decisions equal sign(reference) away from zero-margin points."""

    def run_agreement(self, rng, draws_per_clip, span):
        total = 0
        mismatches = 0
        for clip in (8, 15, 31, 63):
            p = draw_params(rng, draws_per_clip, clip)
            rules = [derive_rule(fold_bn_prelu(p, ch)) for ch in range(draws_per_clip)]
            arrays = rules_to_arrays(rules)
            xs = np.arange(-span * clip, span * clip + 1)
            fused = apply_rules(np.broadcast_to(xs, (draws_per_clip, xs.size)), arrays)
            values = oracle_activation_values(xs, p)
            oracle = np.where(values >= 0, 1, -1)
            differ = fused != oracle
            assert not np.any(differ & (np.abs(values) > 1e-6)), (
                "fused decision differs from the reference sign above the margin"
            )
            total += differ.size
            mismatches += int(differ.sum())
        assert mismatches / total < 1e-4

    def test_module_invariant_range(self, rng):
        # 100k draws split across clips, x exhaustive over [-4*clip, 4*clip]
        self.run_agreement(rng, 25_000, 4)

    def test_exhaustive_clip31_branch_coverage(self, rng):
        clip = 31
        p = draw_params(rng, 4000, clip)
        seen = set()
        for ch in range(4000):
            affine = fold_bn_prelu(p, ch)
            rule = derive_rule(affine)
            xs = list(range(-clip, clip + 1)) + [clip + 1, clip + 7, -clip - 1, -clip - 7]
            for x in xs:
                got = fused_decide(x, rule)
                value = func_reference(x, p, ch)
                if abs(value) > 1e-6:
                    assert got == sign(value)
                if x > clip:
                    seen.add("sat_hi")
                elif x < -clip:
                    seen.add("sat_lo")
                elif x >= 0:
                    seen.add("pos_up" if affine.scale > 0 else "pos_down")
                else:
                    slope = affine.prelu_slope * affine.scale
                    seen.add("neg_up" if slope > 0 else "neg_down")
        assert seen == {"sat_hi", "sat_lo", "pos_up", "pos_down", "neg_up", "neg_down"}


class TestApplyRules:
    def test_matches_scalar_decide(self, rng):
        p = draw_params(rng, 64, 15)
        rules = [derive_rule(fold_bn_prelu(p, ch)) for ch in range(64)]
        values = rng.integers(-40, 41, size=(64, 23))
        got = apply_rules(values, rules_to_arrays(rules))
        for ch in range(64):
            for j in range(23):
                assert got[ch, j] == fused_decide(int(values[ch, j]), rules[ch])


class TestBoundaryTies:
    def test_integer_crossing_is_flagged(self):
        affine = derived_affine()  # crossings at exactly 2 and 8
        assert boundary_ties(affine) == 0b11

    def test_fractional_crossing_not_flagged(self):
        p = ActivationParams([1.0], [-0.5], [0.0], [1.0 - 1e-5], [1.0])
        assert boundary_ties(fold_bn_prelu(p, 0)) == 0


class TestAnalyzeBitwidths:
    def test_clip31_widths(self):
        p = identity_params(4, 31)
        rules = tuple(derive_rule(fold_bn_prelu(p, ch)) for ch in range(4))
        report = analyze_bitwidths(
            [("2d", 200), ("1d", 1024), ("half", 2048)],
            clip=31,
            rules_per_block=[rules, rules, None],
            score_positions=12,
        )
        assert report.blocks[0].stored_activation_bits == 6
        assert report.blocks[1].accumulator_bits == 12
        assert report.max_threshold_bits <= 7
        assert report.float_op_count == 0

    def test_unclipped_bound_exceeds_six_bits(self):
        report = analyze_bitwidths(
            [("2d", 200), ("1d", 1024), ("half", 2048)],
            clip=31,
            rules_per_block=[(), (), None],
            score_positions=12,
            use_clip=False,
        )
        assert report.max_stored_activation_bits > 6

    def test_threshold_bits_cover_clamped_extremes(self):
        rule = FusedChannelRule(1, -1, BranchMode.GE, 32, BranchMode.LE, -32, 31)
        report = analyze_bitwidths(
            [("2d", 25), ("half", 50)],
            clip=31,
            rules_per_block=[(rule,), None],
            score_positions=4,
        )
        assert report.blocks[0].threshold_bits == 7
