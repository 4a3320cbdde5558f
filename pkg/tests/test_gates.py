from __future__ import annotations

import pytest
from hypothesis import assume, given, strategies as st

from crashground.gates import apply_gates, gate1_temporal, gate2_spatial
from crashground.parser import Pass2Result
from crashground.types import Source

from oracles import gate1_boundary_grid, gate1_oracle, gate2_boundary_grid, gate2_oracle

W = (7.0, 13.0)


def p2(t, x=500.0, y=500.0):
    return Pass2Result(float(t), float(x), float(y))


class TestGate1:
    @pytest.mark.parametrize("t2,expected,src", [
        (-1, 10.0, Source.PASS1),
        (7.1, 10.0, Source.PASS1),
        (11.4, 11.4, Source.PASS2),
        (7.3, 7.3, Source.PASS2),   # exactly tau away is not a hedge
        (12.7, 12.7, Source.PASS2),
        (12.8, 10.0, Source.PASS1),
        (7.0, 10.0, Source.PASS1),
        (13.0, 10.0, Source.PASS1),
    ])
    def test_examples(self, t2, expected, src):
        assert gate1_temporal(10.0, p2(t2), W, 0.3) == (expected, src)

    def test_clamped_left_edge_still_hedges(self):
        assert gate1_temporal(1.0, p2(0.1), (0.0, 4.0), 0.3) == (1.0, Source.PASS1)

    def test_boundary_grid_matches_exact_oracle(self):
        for t1, t2, lo, hi, tau in gate1_boundary_grid():
            src, val = gate1_oracle(t1, t2, lo, hi, tau)
            got, got_src = gate1_temporal(float(t1), p2(float(t2)), (float(lo), float(hi)), float(tau))
            assert got_src.value == src, (t2, lo, hi, tau)
            assert got == float(val)

    def test_rejects_non_positive_tau(self):
        with pytest.raises(ValueError):
            gate1_temporal(1.0, p2(2.0), W, 0.0)

    @given(st.floats(0, 100), st.floats(-2, 120), st.floats(0, 100), st.floats(0.01, 6), st.floats(0.01, 3))
    def test_output_is_one_of_inputs(self, t1, t2, w_min, width, tau):
        t, _ = gate1_temporal(t1, p2(t2), (w_min, w_min + width), tau)
        assert t in (t1, t2)

    @given(st.floats(0, 100), st.floats(0, 100), st.floats(0, 100), st.floats(0.01, 6))
    def test_tiny_tau_keeps_any_interior_answer(self, t1, t2, w_min, width):
        w_max = w_min + width
        assume(abs(t2 - w_min) > 1e-6 and abs(t2 - w_max) > 1e-6)
        assert gate1_temporal(t1, p2(t2), (w_min, w_max), 1e-7) == (t2, Source.PASS2)

    @given(st.floats(0, 60), st.floats(-1, 60), st.floats(0, 50), st.floats(0.1, 6),
           st.floats(0.01, 2), st.floats(0.01, 2))
    def test_monotone_in_tau(self, t1, t2, w_min, width, tau_a, tau_b):
        small, large = sorted((tau_a, tau_b))
        w = (w_min, w_min + width)
        if gate1_temporal(t1, p2(t2), w, small)[1] is Source.PASS1:
            assert gate1_temporal(t1, p2(t2), w, large)[1] is Source.PASS1


class TestGate2:
    @pytest.mark.parametrize("raw2,m,expected,src", [
        ((500, 500), 10, (0.5, 0.5), Source.PASS2),
        ((5, 500), 10, (0.3, 0.4), Source.PASS1),
        ((10, 990), 10, (0.01, 0.99), Source.PASS2),
        ((-1, -1), 0, (-0.001, -0.001), Source.PASS2),
        ((-1, -1), 10, (0.3, 0.4), Source.PASS1),
        ((500, 991), 10, (0.3, 0.4), Source.PASS1),
        ((0, 0), 0, (0.0, 0.0), Source.PASS2),
    ])
    def test_examples(self, raw2, m, expected, src):
        point, s = gate2_spatial((300.0, 400.0), raw2, m)
        assert s is src
        assert point == pytest.approx(expected, abs=1e-15)

    def test_boundary_grid_matches_exact_oracle(self):
        for raw1, raw2, m in gate2_boundary_grid():
            src, (ex, ey) = gate2_oracle(raw1, raw2, m)
            point, s = gate2_spatial(tuple(map(float, raw1)), tuple(map(float, raw2)), float(m))
            assert s.value == src, (raw2, m)
            assert point == pytest.approx((float(ex), float(ey)), abs=1e-15)

    def test_rejects_negative_margin(self):
        with pytest.raises(ValueError):
            gate2_spatial((1, 1), (1, 1), -1)

    @given(st.floats(0, 1000), st.floats(0, 1000), st.floats(-50, 1050), st.floats(-50, 1050),
           st.floats(0.5, 100))
    def test_pass2_branch_stays_inside_margin(self, x1, y1, x2, y2, m):
        (x, y), s = gate2_spatial((x1, y1), (x2, y2), m)
        if s is Source.PASS2:
            lo, hi = m / 1000 - 1e-12, 1 - m / 1000 + 1e-12
            assert lo <= x <= hi and lo <= y <= hi

    @given(st.floats(-50, 1050), st.floats(-50, 1050), st.floats(0.5, 100), st.floats(0.5, 100))
    def test_monotone_in_positive_margin(self, x2, y2, m_a, m_b):
        small, large = sorted((m_a, m_b))
        if gate2_spatial((300, 400), (x2, y2), small)[1] is Source.PASS1:
            assert gate2_spatial((300, 400), (x2, y2), large)[1] is Source.PASS1

    @given(st.floats(50, 950), st.floats(50, 950), st.floats(5, 50), st.floats(5, 50))
    def test_margins_in_5_to_50_agree_away_from_edges(self, x2, y2, m_a, m_b):
        assert gate2_spatial((300, 400), (x2, y2), m_a) == gate2_spatial((300, 400), (x2, y2), m_b)


class TestApplyGates:
    def test_all_switches_on(self):
        d = apply_gates(10.0, (640, 380), p2(11.4, 512, 488), W, 0.3, 10)
        assert (d.t_star, d.time_source, d.space_source) == (11.4, Source.PASS2, Source.PASS2)
        assert d.point_star == pytest.approx((0.512, 0.488))

    def test_switches_off_force_pass1(self):
        d = apply_gates(10.0, (640, 380), p2(11.4, 512, 488), W, 0.3, 10, False, False)
        assert (d.t_star, d.time_source, d.space_source) == (10.0, Source.PASS1, Source.PASS1)
        assert d.point_star == pytest.approx((0.64, 0.38))

    def test_sentinel_absorbed(self):
        d = apply_gates(10.0, (640, 380), Pass2Result(-1.0, 0.0, 0.0), W, 0.3, 10)
        assert d.t_star == 10.0
        assert d.point_star == pytest.approx((0.64, 0.38))
