import itertools

import numpy as np
import pytest

from app.engine import gf2
from app.engine.probcore import JointPmf, conditional_entropy, mutual_information
from app.engine.swcodec import (
    PORTION_ORDER,
    CodewordBundle,
    LinearEncoder,
    MultiLinearEncoder,
    Portion,
    PortionLayout,
    SourceRealization,
    build_layout,
    corner_layout,
    decode,
    decode_source,
    decoder_error_rate,
    encode,
    golden_record,
    layout_rates,
    parse_layout,
    round_half_up,
    split_codeword,
)
from app.errors import DomainError
from scripts.calibrate import golden_records


class TestGf2:
    def test_rank_of_identity_and_duplicates(self):
        assert gf2.rank(np.eye(4, dtype=np.uint8)) == 4
        assert gf2.rank(np.array([[1, 1, 0], [1, 1, 0]], dtype=np.uint8)) == 1
        assert gf2.rank(np.zeros((0, 3), dtype=np.uint8)) == 0

    def test_random_full_row_rank(self, rng):
        for rows in range(0, 6):
            M = gf2.random_full_row_rank(rows, 5, rng)
            assert M.shape == (rows, 5)
            assert gf2.rank(M) == rows

    def test_too_many_rows(self, rng):
        with pytest.raises(ValueError):
            gf2.random_full_row_rank(4, 3, rng)

    def test_bits_are_lsb_first(self):
        assert gf2.int_to_bits(6, 4).tolist() == [0, 1, 1, 0]
        assert int(gf2.bits_to_int(np.array([1, 0, 1]))) == 5

    def test_apply_matches_matrix_product(self, rng):
        M = rng.integers(0, 2, size=(3, 6), dtype=np.uint8)
        words = np.arange(64)
        syn = gf2.apply(M, words, 6)
        for w in (0, 1, 17, 63):
            expected = (M.astype(int) @ gf2.int_to_bits(w, 6).astype(int)) % 2
            assert int(syn[w]) == int(gf2.bits_to_int(expected))

    def test_popcount(self):
        assert gf2.popcount(np.array([0, 1, 7, 255])).tolist() == [0, 1, 3, 8]


class TestLayout:
    def test_reference_layout(self, dsbs):
        lay = build_layout(dsbs, 10, 0.5)
        assert (lay.m_vx, lay.m_cx, lay.m_cy, lay.m_vy) == (5, 3, 2, 5)
        assert lay.describe() == "10:5,3,2,5"

    @pytest.mark.parametrize("k", [2, 5, 9])
    def test_independent_has_no_common_rows(self, independent_bits, k):
        lay = build_layout(independent_bits, k, 0.5)
        assert lay.m_cx == 0 and lay.m_cy == 0
        assert lay.m_vx == k and lay.m_vy == k

    def test_identical_sources(self, same_bit):
        lay = build_layout(same_bit, 8, 1.0)
        assert (lay.m_vx, lay.m_cx, lay.m_cy, lay.m_vy) == (0, 8, 0, 0)

    @pytest.mark.timeout(1)
    def test_rate_fidelity(self, dsbs):
        i_xy = mutual_information(dsbs, 0, 1).value
        h_x_y = conditional_entropy(dsbs, 0, 1).value
        h_y_x = conditional_entropy(dsbs, 1, 0).value
        for k, alpha in itertools.product((4, 8, 12), (0.3, 0.5, 0.7)):
            lay = build_layout(dsbs, k, alpha)
            assert abs(lay.common_width / k - i_xy) <= 1.0 / k
            assert abs(lay.m_vx - k * h_x_y) <= 1
            assert abs(lay.m_vy - k * h_y_x) <= 1
            assert abs(lay.m_cx - alpha * lay.common_width) <= 1
            assert lay.x_width <= k and lay.y_width <= k

    def test_k_out_of_range(self, dsbs):
        with pytest.raises(DomainError):
            build_layout(dsbs, 1, 0.5)
        with pytest.raises(DomainError):
            build_layout(dsbs, 17, 0.5)

    def test_needs_two_binary_sources(self, chain):
        with pytest.raises(DomainError):
            build_layout(chain, 4, 0.5)

    def test_parse_layout(self):
        lay = parse_layout("6:2,2,1,3")
        assert (lay.k, lay.m_vx, lay.m_cx, lay.m_cy, lay.m_vy) == (6, 2, 2, 1, 3)
        assert abs(lay.alpha - 2 / 3) < 1e-12
        for bad in ("6:2,2,1", "x:1,1,1,1", "6-2,2,1,3"):
            with pytest.raises(DomainError):
                parse_layout(bad)
        with pytest.raises(DomainError):
            parse_layout("4:3,2,0,0")

    def test_corner_layout(self, dsbs):
        lay = corner_layout(dsbs, 10)
        assert lay.m_cx == 0
        assert lay.m_vx == 6
        assert lay.y_width == 10

    def test_round_half_up(self):
        assert [round_half_up(v) for v in (0.5, 1.5, 2.5, 2.49)] == [1, 2, 3, 2]

    def test_rates(self, dsbs):
        rates = layout_rates(build_layout(dsbs, 10, 0.5))
        assert rates["r_common"] == pytest.approx(0.5)


class TestEncoder:
    def test_stacked_rank(self, dsbs):
        enc = LinearEncoder.random(build_layout(dsbs, 8, 0.5), seed=3)
        assert gf2.rank(np.vstack([enc.a_vx, enc.a_cx])) == enc.layout.x_width
        assert gf2.rank(np.vstack([enc.b_vy, enc.b_cy])) == enc.layout.y_width

    def test_same_seed_same_matrices(self, dsbs):
        lay = build_layout(dsbs, 8, 0.5)
        a, b = LinearEncoder.random(lay, seed=5), LinearEncoder.random(lay, seed=5)
        for p in PORTION_ORDER:
            assert np.array_equal(a.matrix(p), b.matrix(p))

    def test_rank_deficient_rejected(self):
        lay = PortionLayout(3, 2, 0, 0, 0)
        with pytest.raises(DomainError):
            LinearEncoder(lay, np.array([[1, 0, 0], [1, 0, 0]]), np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0, 3)))

    def test_zero_word_gives_zero_x_portions(self, encoder_k3):
        bundle = encode(encoder_k3, SourceRealization.pair(3, 0, 5))
        assert bundle.v_x == 0 and bundle.v_cx == 0

    def test_encode_is_linear(self, dsbs):
        enc = LinearEncoder.random(build_layout(dsbs, 8, 0.5), seed=9)
        a = encode(enc, SourceRealization.pair(8, 0x35, 0x0F))
        b = encode(enc, SourceRealization.pair(8, 0xA1, 0xF0))
        c = encode(enc, SourceRealization.pair(8, 0x35 ^ 0xA1, 0x0F ^ 0xF0))
        for p in PORTION_ORDER:
            assert c.value(p) == a.value(p) ^ b.value(p)

    def test_dimension_mismatch(self, encoder_k3):
        with pytest.raises(DomainError):
            encode(encoder_k3, SourceRealization.pair(4, 1, 1))

    def test_word_too_wide(self):
        with pytest.raises(DomainError):
            SourceRealization.pair(3, 8, 0)

    def test_bundle_width_checked(self, encoder_k3):
        with pytest.raises(DomainError):
            CodewordBundle(encoder_k3.layout, 4, 0, 0, 0)

    def test_golden_record_is_deterministic(self, dsbs, calibration):
        enc = LinearEncoder.random(build_layout(dsbs, 8, 0.5), seed=0)
        rec = golden_record(enc, SourceRealization.pair(8, 0xA5, 0x3C))
        again = golden_record(LinearEncoder.random(build_layout(dsbs, 8, 0.5), seed=0),
                              SourceRealization.pair(8, 0xA5, 0x3C))
        assert rec == again
        assert rec["layout"] == "8:4,2,2,4"
        records = golden_records(dsbs)
        assert records[0] == rec
        assert calibration.pin("golden_records", records) == records

    def test_golden_record_by_hand(self):
        enc = LinearEncoder(
            parse_layout("4:2,1,1,2"),
            a_vx=[[1, 0, 0, 0], [0, 1, 0, 0]],
            a_cx=[[1, 1, 1, 1]],
            b_vy=[[0, 0, 1, 0], [0, 0, 0, 1]],
            b_cy=[[1, 1, 0, 0]],
        )
        rec = golden_record(enc, SourceRealization.pair(4, 0b1011, 0b0110))
        # x bits LSB first 1,1,0,1 and y bits 0,1,1,0
        assert rec == {
            "seed": None,
            "k": 4,
            "layout": "4:2,1,1,2",
            "x": "b",
            "y": "6",
            "bundle": {"vx": "3", "cx": "1", "cy": "1", "vy": "1"},
        }


class TestSplit:
    @pytest.mark.parametrize("w,m1,expected", [(13, 4, (1, 3)), (0, 5, (0, 0)), (7, 8, (7, 0))])
    def test_examples(self, w, m1, expected):
        s = split_codeword(w, m1)
        assert (s.w1, s.w2) == expected
        assert s.join() == w

    def test_bijection(self):
        m1, m2 = 4, 8
        pairs = {(s.w1, s.w2) for s in (split_codeword(w, m1) for w in range(m1 * m2))}
        assert pairs == set(itertools.product(range(m1), range(m2)))

    def test_zero_modulus(self):
        with pytest.raises(DomainError):
            split_codeword(3, 0)


class TestDecoder:
    @pytest.mark.timeout(300)
    def test_full_rank_identity_exhaustive(self, dsbs):
        enc = LinearEncoder.random(parse_layout("8:5,3,3,5"), seed=1)
        for x in range(256):
            for y in range(256):
                real = SourceRealization.pair(8, x, y)
                decoded, posterior = decode(enc, encode(enc, real), dsbs)
                assert decoded == real
                assert posterior == pytest.approx(1.0)

    def test_three_portion_decoder_full_rank(self, dsbs):
        enc = LinearEncoder.random(parse_layout("4:2,2,2,2"), seed=2)
        for x, y in itertools.product(range(16), repeat=2):
            bundle = encode(enc, SourceRealization.pair(4, x, y))
            assert decode_source(enc, bundle, dsbs, "x")[0] == x
            assert decode_source(enc, bundle, dsbs, "y")[0] == y

    def test_decode_source_rejects_unknown(self, encoder_k3, dsbs):
        bundle = encode(encoder_k3, SourceRealization.pair(3, 1, 1))
        with pytest.raises(DomainError):
            decode_source(encoder_k3, bundle, dsbs, "z")

    def test_decode_too_large(self, dsbs):
        enc = LinearEncoder.random(build_layout(dsbs, 13, 0.5), seed=0)
        bundle = encode(enc, SourceRealization.pair(13, 0, 0))
        with pytest.raises(DomainError):
            decode(enc, bundle, dsbs)

    def test_decode_is_deterministic(self, dsbs):
        enc = LinearEncoder.random(build_layout(dsbs, 8, 0.5), seed=4)
        bundle = encode(enc, SourceRealization.pair(8, 0x5A, 0x5B))
        assert decode(enc, bundle, dsbs) == decode(enc, bundle, dsbs)

    def test_ties_break_to_smallest_pair(self, independent_bits):
        # No rows at all: every pair is equally likely, so (0, 0) wins
        enc = LinearEncoder.random(PortionLayout(3, 0, 0, 0, 0), seed=0)
        decoded, posterior = decode(enc, encode(enc, SourceRealization.pair(3, 6, 5)), independent_bits)
        assert decoded == SourceRealization.pair(3, 0, 0)
        assert posterior == pytest.approx(1 / 64)

    @pytest.mark.timeout(300)
    def test_corner_error_rate(self, dsbs, calibration):
        enc = LinearEncoder.random(corner_layout(dsbs, 10, extra=1), seed=0)
        report = decoder_error_rate(enc, dsbs, trials=10_000, seed=0)
        assert report.trials == 10_000
        assert 0.0 <= report.error_rate < 1.0
        assert report.error_rate <= calibration.pin("decoder_error_threshold", report.error_rate) + 1e-12

    def test_error_rate_independent_of_jobs(self, dsbs):
        enc = LinearEncoder.random(corner_layout(dsbs, 8), seed=1)
        a = decoder_error_rate(enc, dsbs, trials=2500, seed=3, jobs=1)
        b = decoder_error_rate(enc, dsbs, trials=2500, seed=3, jobs=3)
        assert a == b


class TestMultiEncoder:
    def test_segments_and_widths(self):
        encs = MultiLinearEncoder.random(4, [[("P0", 2), ("C0:01", 1)], [("P1", 3)]], seed=0)
        assert encs.num_sources == 2
        assert encs.width("C0:01") == 1
        assert encs.owner("P1") == 1
        out = encs.encode_source(0, np.arange(16))
        assert set(out) == {"P0", "C0:01"}
        assert out["P0"].max() < 4

    def test_too_many_rows(self):
        with pytest.raises(DomainError):
            MultiLinearEncoder.random(2, [[("P0", 3)]], seed=0)

    def test_unknown_segment(self):
        encs = MultiLinearEncoder.random(3, [[("P0", 1)]], seed=0)
        with pytest.raises(DomainError):
            encs.width("nope")
