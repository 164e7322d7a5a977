import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dgplan.pwl import (BreakpointDomainError, CoordinateFunction,
                        CoordinateFunctionSet, project_isotone)


def brute_force_projection(n):
    """Exhaustive oracle: the projection onto the isotone cone is piecewise
    constant on some partition into consecutive blocks, each block at its
    mean, with nondecreasing block means. Enumerate every composition and
    keep the feasible candidate closest to n."""
    n = np.asarray(n, dtype=float)
    size = n.size
    best = None
    best_d = np.inf
    for cuts in itertools.product([0, 1], repeat=size - 1):
        m = np.empty(size)
        start = 0
        means = []
        for i in range(size):
            if i == size - 1 or cuts[i]:
                mean = n[start:i + 1].mean()
                m[start:i + 1] = mean
                means.append(mean)
                start = i + 1
        if any(a > b + 1e-15 for a, b in zip(means, means[1:])):
            continue
        d = float(np.sum((m - n) ** 2))
        if d < best_d:
            best_d = d
            best = m
    return best


def random_perturbed(rng, size):
    """Isotone vector with one entry replaced, the projection precondition."""
    base = np.sort(rng.uniform(-10, 10, size))
    l = int(rng.integers(size))
    base[l] = rng.uniform(-10, 10)
    return base, l


class TestEvaluate:
    def test_zero_slopes(self):
        f = CoordinateFunction(0, 3, np.zeros(3))
        assert f.evaluate(2) == 0.0

    def test_hand_summation_integer(self):
        f = CoordinateFunction(0, 3, np.array([1.0, 2.0, 4.0]))
        assert f.evaluate(2) == pytest.approx(3.0)

    def test_hand_summation_fractional(self):
        f = CoordinateFunction(0, 3, np.array([1.0, 2.0, 4.0]))
        assert f.evaluate(1.5) == pytest.approx(2.0)

    def test_anchored_at_lower_break(self):
        f = CoordinateFunction(0, 4, np.array([-3.0, 1.0, 2.0, 5.0]))
        assert f.evaluate(0) == 0.0

    def test_domain_violation_raises(self):
        f = CoordinateFunction(0, 3, np.zeros(3))
        with pytest.raises(BreakpointDomainError):
            f.evaluate(3.5)
        with pytest.raises(BreakpointDomainError):
            f.evaluate(-0.1)


class TestBreakpointValues:
    def test_zeros(self):
        f = CoordinateFunction(0, 2, np.zeros(2))
        np.testing.assert_array_equal(f.breakpoint_values(), [0, 0, 0])

    def test_mixed_signs(self):
        f = CoordinateFunction(0, 2, np.array([-2.0, 1.0]))
        np.testing.assert_allclose(f.breakpoint_values(), [0, -2, -1])

    def test_cumulative(self):
        f = CoordinateFunction(0, 3, np.array([1.0, 2.0, 4.0]))
        np.testing.assert_allclose(f.breakpoint_values(), [0, 1, 3, 7])

    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=8))
    def test_differences_recover_slopes(self, slopes):
        f = CoordinateFunction(0, len(slopes), np.array(slopes))
        vals = f.breakpoint_values()
        np.testing.assert_allclose(np.diff(vals), slopes, rtol=0, atol=1e-12)


class TestSlopeUpdate:
    def test_update_toward_current(self):
        f = CoordinateFunction(0, 2, np.array([1.0, 2.0]))
        np.testing.assert_allclose(f.slope_update(0, 1.0, 0.5), [1, 2])

    def test_relaxation_arithmetic(self):
        f = CoordinateFunction(0, 2, np.array([1.0, 2.0]))
        np.testing.assert_allclose(f.slope_update(0, -3.0, 0.5), [-1, 2])

    def test_alpha_one_replaces(self):
        f = CoordinateFunction(0, 3, np.zeros(3))
        np.testing.assert_allclose(f.slope_update(2, 4.0, 1.0), [0, 0, 4])

    def test_original_untouched(self):
        f = CoordinateFunction(0, 2, np.array([1.0, 2.0]))
        f.slope_update(0, -3.0, 0.5)
        np.testing.assert_allclose(f.slopes, [1, 2])


class TestProjectIsotone:
    def test_already_isotone(self):
        np.testing.assert_allclose(project_isotone([1, 2, 3], 1), [1, 2, 3])

    def test_pair_average(self):
        np.testing.assert_allclose(project_isotone([3, 1], 1), [2, 2])

    def test_rightward_pool(self):
        np.testing.assert_allclose(project_isotone([1, 5, 2, 6], 1),
                                   [1, 3.5, 3.5, 6])

    def test_matches_brute_force_small_batch(self):
        rng = np.random.default_rng(7)
        for _ in range(300):
            size = int(rng.integers(1, 9))
            n, l = random_perturbed(rng, size)
            got = project_isotone(n, l)
            want = brute_force_projection(n)
            np.testing.assert_allclose(got, want, atol=1e-9)

    def test_idempotent(self):
        rng = np.random.default_rng(11)
        for _ in range(200):
            size = int(rng.integers(1, 9))
            n, l = random_perturbed(rng, size)
            once = project_isotone(n, l)
            for l2 in range(size):
                np.testing.assert_allclose(project_isotone(once, l2), once,
                                           atol=1e-12)

    def test_output_isotone(self):
        rng = np.random.default_rng(13)
        for _ in range(200):
            size = int(rng.integers(1, 9))
            n, l = random_perturbed(rng, size)
            out = project_isotone(n, l)
            assert np.all(np.diff(out) >= -1e-12)

    def test_bad_index_raises(self):
        with pytest.raises(BreakpointDomainError):
            project_isotone([1.0, 2.0], 2)


class TestConvexity:
    @given(st.lists(st.floats(-20, 20), min_size=2, max_size=6),
           st.data())
    @settings(max_examples=200)
    def test_midpoint_convexity_of_isotone_functions(self, raw, data):
        slopes = np.sort(np.array(raw))
        f = CoordinateFunction(0, len(slopes), slopes)
        top = len(slopes)
        a = data.draw(st.integers(0, top))
        b = data.draw(st.integers(0, top))
        mid = (a + b) / 2
        assert f.evaluate(mid) <= (f.evaluate(a) + f.evaluate(b)) / 2 + 1e-9


class TestFunctionSet:
    def test_zeros_and_names(self):
        s = CoordinateFunctionSet.zeros(3, 0, 4, names=["a", "b", "c"])
        assert len(s) == 3
        assert s["b"].num_segments == 4
        assert s.total_value([1, 2, 3]) == 0.0

    def test_name_count_mismatch(self):
        with pytest.raises(ValueError):
            CoordinateFunctionSet.zeros(2, 0, 3, names=["only"])

    def test_json_round_trip(self):
        rng = np.random.default_rng(3)
        funcs = [CoordinateFunction(0, 4, np.sort(rng.normal(size=4)))
                 for _ in range(3)]
        s = CoordinateFunctionSet(funcs, ("x", "y", "z"))
        back = CoordinateFunctionSet.from_json_dict(s.to_json_dict())
        assert back.names == s.names
        for f, g in zip(s, back):
            np.testing.assert_allclose(f.slopes, g.slopes)
            assert (f.lower_break, f.upper_break) == (g.lower_break,
                                                      g.upper_break)

    def test_unnamed_str_lookup_raises(self):
        s = CoordinateFunctionSet.zeros(2, 0, 3)
        with pytest.raises(KeyError):
            s["a"]
