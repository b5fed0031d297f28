import logging

import numpy as np
import pytest

from app.engine.netsim import (
    MaskEntry,
    MaskingRow,
    MaskPlan,
    MultiRatePoint,
    MultiSourceConfig,
    all_adversaries,
    allocate_portions,
    apply_masks,
    default_term,
    load_network,
    make_encoder,
    masked_rate_bound,
    mask_candidates,
    masking_comparison,
    plan_masks,
    region_member_multi,
    remove_masks,
    simulate_network,
    transmitted_words,
)
from app.engine.oracle import ObservationMap, concat_labels, exact_mutual_information
from app.engine.probcore import JointPmf, entropy, mutual_information, shared_terms
from app.errors import DomainError

FREE_BIT_OVERRIDE = {(0, 1): (1, 1)}


def approx(a: float, b: float, tol: float = 1e-9) -> bool:
    return abs(a - b) <= tol


def xor_triple() -> JointPmf:
    probs = np.zeros((2, 2, 2))
    for x in (0, 1):
        for y in (0, 1):
            probs[x, y, x ^ y] = 0.25
    return JointPmf((2, 2, 2), probs)


class TestConfig:
    def test_source_count(self):
        with pytest.raises(DomainError):
            MultiSourceConfig(JointPmf.identical(5, 2), 3)
        with pytest.raises(DomainError):
            MultiSourceConfig(JointPmf.independent([0.5, 0.5]), 3)

    def test_non_binary_alphabet(self, rng):
        with pytest.raises(DomainError):
            MultiSourceConfig(JointPmf.random((3, 2), rng), 3)

    def test_secure_index(self, chain):
        with pytest.raises(DomainError):
            MultiSourceConfig(chain, 3, secure=frozenset({3}))


class TestAllocation:
    def test_two_sources_follow_layout_rule(self, dsbs):
        layout = allocate_portions(MultiSourceConfig(dsbs, 10))
        assert layout.private == (5, 5)
        assert layout.widths() == {"P0": 5, "C0:01": 3, "P1": 5, "C1:01": 2}
        assert layout.term_width((1, 0)) == 5

    def test_chain_k3(self, chain):
        layout = allocate_portions(MultiSourceConfig(chain, 3))
        assert layout.private == (1, 1, 2)
        assert layout.segments(0) == [("P0", 1), ("C0:01", 1), ("C0:02", 0), ("C0:012", 1)]
        assert layout.total_width(1) == 1
        assert layout.total_width(2) == 2

    def test_shares_split_with_remainder_to_lowest(self, chain):
        layout = allocate_portions(MultiSourceConfig(chain, 3))
        shares = {s.name: s.width for s in layout.shares if s.term == (0, 1, 2)}
        assert shares == {"C0:012": 1, "C1:012": 0, "C2:012": 0}

    def test_independent_third_source(self, dsbs_plus_free_bit):
        layout = allocate_portions(MultiSourceConfig(dsbs_plus_free_bit, 4))
        assert layout.private == (2, 2, 4)
        assert layout.term_width((0, 1)) == 2
        for term in [(0, 2), (1, 2), (0, 1, 2)]:
            assert layout.term_width(term) == 0

    def test_term_widths_follow_co_information(self, chain):
        k = 4
        layout = allocate_portions(MultiSourceConfig(chain, k))
        for members, ci in shared_terms(chain):
            assert abs(layout.term_width(members) - k * ci) <= 0.5 + 1e-12

    def test_override(self, dsbs_plus_free_bit):
        layout = allocate_portions(MultiSourceConfig(dsbs_plus_free_bit, 2, FREE_BIT_OVERRIDE))
        assert layout.private == (1, 1, 2)
        assert [layout.total_width(i) for i in range(3)] == [2, 2, 2]

    @pytest.mark.parametrize("override", [{(0, 1): (3, 3)}, {(0, 1): (1,)}, {(0, 1): (2, -1)}])
    def test_bad_override(self, dsbs_plus_free_bit, override):
        with pytest.raises(DomainError):
            allocate_portions(MultiSourceConfig(dsbs_plus_free_bit, 2, override))

    def test_override_needing_too_many_rows(self, dsbs_plus_free_bit):
        with pytest.raises(DomainError):
            allocate_portions(MultiSourceConfig(dsbs_plus_free_bit, 2, {(0, 1): (2, 0)}))

    def test_negative_co_information(self):
        with pytest.raises(DomainError):
            allocate_portions(MultiSourceConfig(xor_triple(), 3))


class TestMaskPlan:
    def test_single_word_prefers_other_source(self, dsbs_plus_free_bit):
        cfg = MultiSourceConfig(dsbs_plus_free_bit, 2, FREE_BIT_OVERRIDE)
        plan = plan_masks(cfg, allocate_portions(cfg))
        assert [(e.target, e.masks, e.width) for e in plan.entries] == [
            ("P0", ("C1:01",), 1),
            ("P1", ("C0:01",), 1),
        ]

    def test_secure_link_comes_first(self, dsbs_plus_free_bit):
        cfg = MultiSourceConfig(dsbs_plus_free_bit, 2, FREE_BIT_OVERRIDE, secure=frozenset({0}))
        plan = plan_masks(cfg, allocate_portions(cfg))
        assert plan.entries[0].masks == ("C0:01",)
        assert plan.entries[1].masks == ("C0:01",)

    def test_combination_chain(self, chain, caplog):
        cfg = MultiSourceConfig(chain, 3)
        with caplog.at_level(logging.WARNING):
            plan = plan_masks(cfg, allocate_portions(cfg), combination=True)
        assert plan.combination
        by_source = {e.source: e for e in plan.entries}
        assert by_source[0].masks == ("C0:01", "C0:012")
        assert by_source[1].masks == ("C0:01", "C0:012")
        assert by_source[2].masks == ("C0:012",)
        assert by_source[2].width == 1
        assert "falls back" in caplog.text

    def test_rows(self, chain):
        cfg = MultiSourceConfig(chain, 3)
        rows = plan_masks(cfg, allocate_portions(cfg), combination=True).rows()
        assert rows[0] == {"source": 0, "target": "P0", "width": 1, "masks": "C0:01+C0:012", "link": "L0"}


class TestApplyMasks:
    def test_round_trip(self, chain):
        cfg = MultiSourceConfig(chain, 3)
        layout = allocate_portions(cfg)
        plan = plan_masks(cfg, layout, combination=True)
        widths = layout.widths()
        for seed in range(1000):
            rng = np.random.default_rng(seed)
            words = {name: int(rng.integers(0, 1 << w)) if w else 0 for name, w in widths.items()}
            assert remove_masks(plan, apply_masks(plan, words, widths), widths) == words

    def test_arrays(self, chain):
        cfg = MultiSourceConfig(chain, 3)
        layout = allocate_portions(cfg)
        encs = make_encoder(layout, 0)
        plan = plan_masks(cfg, layout)
        words = [np.arange(8, dtype=np.int64)] * 3
        sent = transmitted_words(encs, layout, plan, words)
        plain = transmitted_words(encs, layout, None, words)
        back = remove_masks(plan, sent, layout.widths())
        for name in plain:
            assert np.array_equal(back[name], plain[name])

    def test_errors(self):
        widths = {"P0": 2, "M1": 1}
        words = {"P0": 3, "M1": 1}
        with pytest.raises(DomainError):
            apply_masks(MaskPlan((MaskEntry(0, "P0", 1, ("M1", "M1"), "L0"),)), words, widths)
        with pytest.raises(DomainError):
            apply_masks(MaskPlan((MaskEntry(0, "P0", 1, ("M9",), "L0"),)), words, widths)
        with pytest.raises(DomainError):
            apply_masks(MaskPlan((MaskEntry(0, "P0", 2, ("M1",), "L0"),)), words, widths)

    def test_combination_needs_both_words(self):
        pmf = JointPmf.independent([0.5, 0.5], [0.5, 0.5], [0.5, 0.5])
        plan = MaskPlan((MaskEntry(0, "P0", 2, ("M1", "M2"), "L0"),), combination=True)
        widths = {"P0": 2, "M1": 2, "M2": 2}

        def view(reveal):
            def _observe(words, keys):
                sent = apply_masks(plan, {"P0": words[0], "M1": words[1], "M2": words[2]}, widths)
                return concat_labels([(sent[name], 2) for name in reveal])
            return ObservationMap(_observe, 2 * len(reveal), 0, "+".join(reveal))

        assert approx(exact_mutual_information(pmf, 2, view(["P0", "M2"]), 0).h_bits, 0.0)
        assert approx(exact_mutual_information(pmf, 2, view(["P0", "M1"]), 0).h_bits, 0.0)
        assert approx(exact_mutual_information(pmf, 2, view(["P0", "M1", "M2"]), 0).h_bits, 2.0)


    def test_combination_plan_needs_both_words(self, chain):
        cfg = MultiSourceConfig(chain, 3)
        layout = allocate_portions(cfg)
        plan = plan_masks(cfg, layout, combination=True)
        entry = next(e for e in plan.entries if e.source == 0)
        assert len(entry.masks) == 2
        widths = layout.widths()
        k = entry.width
        names = (entry.target,) + entry.masks
        pmf = JointPmf.independent([0.5, 0.5], [0.5, 0.5], [0.5, 0.5])

        def view(reveal):
            def _observe(words, keys):
                plain = {name: 0 for name in widths}
                plain.update(zip(names, words))
                sent = apply_masks(plan, plain, widths)
                return concat_labels([(sent[name] & ((1 << k) - 1), k) for name in reveal])
            return ObservationMap(_observe, k * len(reveal), 0, "+".join(reveal))

        target, first, second = names
        assert approx(exact_mutual_information(pmf, k, view([target]), 0).h_bits, 0.0)
        assert approx(exact_mutual_information(pmf, k, view([target, first]), 0).h_bits, 0.0)
        assert approx(exact_mutual_information(pmf, k, view([target, second]), 0).h_bits, 0.0)
        assert approx(exact_mutual_information(pmf, k, view([target, first, second]), 0).h_bits, float(k))


class TestSimulation:
    def test_nothing_tapped(self, chain):
        cfg = MultiSourceConfig(chain, 3)
        layout = allocate_portions(cfg)
        reports = simulate_network(cfg, layout, make_encoder(layout, 0), None, ())
        assert len(reports) == 3
        assert all(approx(r.measured_bits, 0.0) for r in reports)

    def test_everything_tapped(self, chain):
        cfg = MultiSourceConfig(chain, 3)
        layout = allocate_portions(cfg)
        reports = simulate_network(cfg, layout, make_encoder(layout, 0), None, (0, 1, 2))
        # source 0 sends K rows, so its word is recovered
        assert approx(reports[0].measured_bits, 3 * entropy(chain, 0).value)
        for i, r in enumerate(reports):
            assert r.measured_bits <= 3 * entropy(chain, i).value + 1e-9

    def test_tap_out_of_range(self, chain):
        cfg = MultiSourceConfig(chain, 3)
        layout = allocate_portions(cfg)
        with pytest.raises(DomainError):
            simulate_network(cfg, layout, make_encoder(layout, 0), None, (3,))

    def test_all_adversaries(self):
        assert all_adversaries(2) == [(), (0,), (1,), (0, 1)]
        assert len(all_adversaries(3)) == 8

    @pytest.mark.timeout(60)
    def test_masking_never_increases_leakage(self, dsbs_plus_free_bit):
        cfg = MultiSourceConfig(dsbs_plus_free_bit, 2, FREE_BIT_OVERRIDE)
        layout = allocate_portions(cfg)
        plan = plan_masks(cfg, layout)
        for seed in range(3):
            rows = masking_comparison(cfg, layout, make_encoder(layout, seed), plan, all_adversaries(3))
            assert len(rows) == 24
            for row in rows:
                assert row.masked_bits <= row.unmasked_bits + 1e-9
                if {0, 1} <= set(row.adversary):
                    assert approx(row.masked_bits, row.unmasked_bits)

    @pytest.mark.timeout(300)
    @pytest.mark.parametrize("combination", [False, True])
    def test_checked_plan_never_increases_chain_leakage(self, combination):
        for p, q in [(0.1, 0.2), (0.1, 0.1), (0.05, 0.3)]:
            for k in (2, 3):
                cfg = MultiSourceConfig(JointPmf.markov_chain(p, q), k, secure=frozenset({1}))
                layout = allocate_portions(cfg)
                for seed in range(3):
                    encs = make_encoder(layout, seed)
                    plan = plan_masks(cfg, layout, combination, encs)
                    for e in plan.entries:
                        names = {s.name for s in mask_candidates(cfg, layout, e.source)}
                        assert set(e.masks) <= names
                    for row in masking_comparison(cfg, layout, encs, plan, all_adversaries(3)):
                        assert row.masked_bits <= row.unmasked_bits + 1e-9, (p, q, k, seed, row)

    def test_masking_row(self):
        assert MaskingRow((), 1, 0.0, 0.0).row()["adversary"] == "none"
        assert MaskingRow((0, 2), 1, 1.0, 0.5).row()["adversary"] == "02"


class TestRates:
    def test_two_source_bound(self, dsbs):
        bound = masked_rate_bound(MultiSourceConfig(dsbs, 4))
        i_xy = mutual_information(dsbs, 0, 1).value
        assert approx(bound.bound_bits, entropy(dsbs, (0, 1)).value - i_xy)
        assert approx(bound.marginal_form, entropy(dsbs, (0, 1)).value)
        assert approx(bound.slepian_wolf_sum_rate, entropy(dsbs, (0, 1)).value)
        assert len(bound.per_source) == 2

    def test_identical_sources(self, same_bit):
        bound = masked_rate_bound(MultiSourceConfig(same_bit, 4))
        assert approx(bound.bound_bits, 0.0)
        assert approx(bound.marginal_form, 1.0)

    def test_chain_savings(self, chain):
        bound = masked_rate_bound(MultiSourceConfig(chain, 3))
        savings = sum((len(m) - 1) * ci for m, ci in shared_terms(chain))
        assert approx(bound.slepian_wolf_sum_rate - bound.bound_bits, savings)

    def test_default_term(self):
        assert default_term(0, 3) == (0, 2)
        assert default_term(2, 3) == (1, 2)
        assert default_term(1, 2) == (0, 1)

    def test_case1_region(self, chain):
        cfg = MultiSourceConfig(chain, 3)
        ok, violations = region_member_multi(MultiRatePoint(0, 1.0, 0.36, h_i=0.3), 1, cfg, term=(0, 1))
        assert ok and violations == ()
        ok, violations = region_member_multi(MultiRatePoint(0, 1.0, 0.35, h_i=0.3), 1, cfg, term=(0, 1))
        assert violations == ("R_ki",)
        ok, violations = region_member_multi(MultiRatePoint(0, 1.0, 0.36, h_i=0.4), 1, cfg, term=(0, 1))
        assert not ok and violations[0].startswith("h_i")

    def test_case1_default_term_is_markov_gap(self, chain):
        cfg = MultiSourceConfig(chain, 3)
        ok, _ = region_member_multi(MultiRatePoint(0, 1.0, 0.0), 1, cfg)
        assert ok

    def test_case2_region(self, chain):
        cfg = MultiSourceConfig(chain, 3)
        ok, _ = region_member_multi(MultiRatePoint(0, 1.9, 0.2, j=2, r_j=1.9, r_kj=0.2, h_j=1.0), 2, cfg)
        assert ok
        ok, violations = region_member_multi(MultiRatePoint(0, 1.9, 0.1, j=2, r_j=1.9, r_kj=0.2), 2, cfg)
        assert violations == ("R_ki",)

    def test_region_errors(self, chain):
        cfg = MultiSourceConfig(chain, 3)
        with pytest.raises(DomainError):
            region_member_multi(MultiRatePoint(0, 1.0, 0.5), 2, cfg)
        with pytest.raises(DomainError):
            region_member_multi(MultiRatePoint(0, 1.0, 0.5), 3, cfg)
        with pytest.raises(DomainError):
            region_member_multi(MultiRatePoint(0, 1.0, 0.5), 1, cfg, term=(1, 2))
        with pytest.raises(DomainError):
            MultiRatePoint(0, -1.0, 0.5)


class TestNetworkDocument:
    def test_load(self):
        spec = load_network({
            "k": 3,
            "pmf": {"kind": "markov_chain", "p": 0.1, "q": 0.2},
            "allocations": {"0,1": [1, 0]},
            "links": [{"source": 1, "secure": True}, {"source": 2}],
            "adversaries": "all",
            "combination": True,
            "seed": 4,
        })
        assert spec.cfg.k == 3
        assert spec.cfg.secure == frozenset({1})
        assert spec.cfg.share_overrides == {(0, 1): (1, 0)}
        assert len(spec.adversaries) == 8
        assert spec.combination and spec.seed == 4

    def test_explicit_adversaries(self):
        spec = load_network({"adversaries": [[1, 0], [2]]})
        assert spec.adversaries == ((0, 1), (2,))

    def test_bad_documents(self):
        with pytest.raises(DomainError):
            load_network([1, 2])
        with pytest.raises(DomainError):
            load_network({"k": "three"})
        with pytest.raises(DomainError):
            load_network({"pmf": {"kind": "dsbs"}})
