"""Implicit derivative engine against independent oracles.

The oracles here are written from scratch: exact series inversion with
rational arithmetic, the literal permutation-sum form of the chain rule,
and Richardson finite differences.
"""

import itertools
import math
from fractions import Fraction

import numpy as np
import pytest

from gevrey_kit.envelopes import GevreyEnvelope, StabilityConstant, envelope_check, implicit_envelope
from gevrey_kit.implicit_diff import (
    DerivativeTable,
    LinearizationError,
    NonConvergenceError,
    PolynomialOracle,
    derivative_table,
    finite_difference_check,
    first_derivative,
    higher_derivative,
    higher_derivative_reference,
    scalar_cubic_oracle,
    scalar_quadratic_oracle,
    solve_residual,
)


def cubic_inverse_series(order):
    """Exact Taylor coefficients of the inverse of d = u + u**3 at 0,
    via fixed-point iteration u <- d - u**3 on truncated series."""

    def mul(a, b):
        out = [Fraction(0)] * (order + 1)
        for i, ai in enumerate(a):
            if ai == 0:
                continue
            for j, bj in enumerate(b):
                if i + j > order:
                    break
                out[i + j] += ai * bj
        return out

    u = [Fraction(0)] * (order + 1)
    u[1] = Fraction(1)
    for _ in range(order):
        cube = mul(mul(u, u), u)
        u = [Fraction(0)] + [-c for c in cube[1:]]
        u[1] += Fraction(1)
    return u


# Frozen from the series oracle: derivatives n! * c_n for n = 1..5.
CUBIC_DERIVATIVES = [1.0, 0.0, -6.0, 0.0, 360.0]


def test_series_oracle_consistency():
    series = cubic_inverse_series(5)
    assert series[:6] == [0, 1, 0, -1, 0, 3]
    got = [float(series[n] * math.factorial(n)) for n in range(1, 6)]
    assert got == CUBIC_DERIVATIVES


class TestSolveResidual:
    def test_quadratic_closed_form(self):
        oracle = scalar_quadratic_oracle()
        u = solve_residual(oracle, np.array([3.0]), 0.0, 1e-14)
        assert abs(u - 9.0) < 1e-12

    def test_cubic_closed_form_root(self):
        oracle = scalar_cubic_oracle()
        u = solve_residual(oracle, np.array([2.0]), 0.0, 1e-14)
        assert abs(u - 1.0) < 1e-12

    def test_damping_handles_overshoot(self):
        # strongly curved residual: plain Newton overshoots from far away
        oracle = scalar_cubic_oracle()
        u = solve_residual(oracle, np.array([100.0]), 50.0, 1e-12)
        assert abs(oracle.eval(np.array([100.0]), u)) <= 1e-12

    def test_nonconvergence_error_carries_norm(self):
        # u**2 + 1 has no real root; the iteration must stop with an error
        oracle = PolynomialOracle(1, {(0, 2): 1.0, (0, 0): 1.0})
        with pytest.raises(NonConvergenceError) as err:
            solve_residual(oracle, np.array([0.0]), 3.0, 1e-12, max_iter=40)
        assert err.value.residual_norm > 0.0

    def test_singular_linearization(self):
        oracle = PolynomialOracle(1, {(0, 2): 1.0})
        with pytest.raises(LinearizationError):
            oracle.solve_linearized(np.array([0.0]), 0.0, 1.0)


class TestFirstDerivative:
    def test_quadratic(self):
        oracle = scalar_quadratic_oracle()
        d = np.array([3.0])
        u = solve_residual(oracle, d, 0.0, 1e-14)
        assert abs(first_derivative(oracle, d, u, np.array([1.0])) - 6.0) < 1e-12

    def test_cubic_at_origin(self):
        oracle = scalar_cubic_oracle()
        got = first_derivative(oracle, np.array([0.0]), 0.0, np.array([1.0]))
        assert abs(got - 1.0) < 1e-14


class TestHigherDerivative:
    def test_quadratic_second(self):
        oracle = scalar_quadratic_oracle()
        table = derivative_table(oracle, np.array([3.0]), [np.array([1.0])], 2)
        assert abs(table.entry((0, 0)) - 2.0) < 1e-12

    def test_cubic_series_match(self):
        oracle = scalar_cubic_oracle()
        table = derivative_table(oracle, np.array([0.0]), [np.array([1.0])], 5)
        for n, expected in enumerate(CUBIC_DERIVATIVES, start=1):
            got = table.entry((0,) * n)
            assert abs(got - expected) <= 1e-10 * max(1.0, abs(expected))

    def test_affine_residual_vanishes_exactly(self):
        # R(d, u) = 2u - 3d - 1: every derivative of S beyond order 1 is zero
        oracle = PolynomialOracle(1, {(0, 1): 2.0, (1, 0): -3.0, (0, 0): -1.0})
        table = derivative_table(oracle, np.array([1.0]), [np.array([1.0])], 4)
        assert abs(table.entry((0,)) - 1.5) < 1e-12
        for n in range(2, 5):
            assert table.entry((0,) * n) == 0.0

    def test_vanishing_tail_is_finite(self):
        oracle = scalar_cubic_oracle()
        table = derivative_table(oracle, np.array([0.0]), [np.array([1.0])], 6)
        series = cubic_inverse_series(6)
        for n in range(1, 7):
            value = table.entry((0,) * n)
            assert math.isfinite(value)
            expected = float(series[n] * math.factorial(n))
            assert abs(value - expected) <= 1e-9 * max(1.0, abs(expected))

    def test_requires_two_directions(self):
        oracle = scalar_quadratic_oracle()
        table = derivative_table(oracle, np.array([3.0]), [np.array([1.0])], 1)
        with pytest.raises(ValueError):
            higher_derivative(oracle, table, (0,))

    def test_missing_entry_is_contract_violation(self):
        oracle = scalar_quadratic_oracle()
        d = np.array([3.0])
        u = solve_residual(oracle, d, 0.0, 1e-14)
        table = DerivativeTable(oracle, d, u, [np.array([1.0])])
        with pytest.raises(LookupError):
            higher_derivative(oracle, table, (0, 0))


def random_polynomial_oracle(rng, n_data=3, degree=3):
    exps = [e for e in itertools.product(range(degree + 1), repeat=n_data + 1)
            if 0 < sum(e) <= degree]
    coeffs = {e: 0.25 * rng.standard_normal() for e in exps}
    key = (0,) * n_data + (1,)
    coeffs[key] = coeffs.get(key, 0.0) + 1.0
    return PolynomialOracle(n_data, coeffs)


class TestCollapsedVsLiteral:
    def test_randomized_three_variable_oracle(self):
        rng = np.random.default_rng(20240811)
        oracle = random_polynomial_oracle(rng)
        d = 0.05 * rng.standard_normal(3)
        directions = [rng.standard_normal(3) for _ in range(3)]
        table = derivative_table(oracle, d, directions, 4)
        for idxs in [(0, 1), (1, 2), (0, 1, 2), (0, 0, 2), (0, 1, 2, 2), (0, 0, 1, 2)]:
            collapsed = higher_derivative(oracle, table, idxs)
            literal = higher_derivative_reference(oracle, table, idxs)
            assert abs(collapsed - literal) <= 1e-12 * max(1.0, abs(collapsed))

    def test_symmetry_under_direction_permutation(self):
        rng = np.random.default_rng(7)
        oracle = random_polynomial_oracle(rng)
        d = 0.02 * rng.standard_normal(3)
        dirs = [rng.standard_normal(3) for _ in range(3)]
        table_fwd = derivative_table(oracle, d, dirs, 3)
        table_rev = derivative_table(oracle, d, dirs[::-1], 3)
        remap = {0: 2, 1: 1, 2: 0}
        for key, value in table_fwd.items():
            if key == ():
                continue
            swapped = tuple(sorted(remap[i] for i in key))
            other = table_rev.entry(swapped)
            assert abs(value - other) <= 1e-12 * max(1.0, abs(value))


class TestPolynomialOracle:
    def test_eval_and_degree(self):
        oracle = scalar_cubic_oracle()
        assert oracle.eval(np.array([2.0]), 1.0) == 0.0
        assert oracle.max_derivative_order() == 3

    def test_multilinearity_and_symmetry(self):
        rng = np.random.default_rng(5)
        oracle = random_polynomial_oracle(rng)
        d = rng.standard_normal(3)
        u = rng.standard_normal()
        args = [(rng.standard_normal(3), rng.standard_normal()) for _ in range(3)]
        base = oracle.apply_derivative(3, d, u, args)
        scaled_args = [args[0], (2.5 * args[1][0], 2.5 * args[1][1]), args[2]]
        assert abs(oracle.apply_derivative(3, d, u, scaled_args) - 2.5 * base) < 1e-10
        for perm in itertools.permutations(args):
            assert abs(oracle.apply_derivative(3, d, u, list(perm)) - base) < 1e-12

    def test_linearized_solve_consistency(self):
        oracle = scalar_cubic_oracle()
        d = np.array([2.0])
        u = 1.0
        rhs = 0.7
        w = oracle.solve_linearized(d, u, rhs)
        back = oracle.apply_derivative(1, d, u, [(np.zeros(1), w)])
        assert abs(back - rhs) < 1e-13


class TestDerivativeTable:
    def test_key_counts(self):
        oracle = random_polynomial_oracle(np.random.default_rng(3), n_data=2)
        d = np.zeros(2)
        dirs = [np.array([1.0, 0.0]), np.array([0.0, 1.0])]
        table = derivative_table(oracle, d, dirs, 3)
        # multisets of size <= 3 over two directions: 2 + 3 + 4, plus the base
        assert len(table) == 10

    def test_determinism(self):
        rng_args = dict(n_data=2, degree=3)
        o1 = random_polynomial_oracle(np.random.default_rng(42), **rng_args)
        o2 = random_polynomial_oracle(np.random.default_rng(42), **rng_args)
        dirs = [np.array([1.0, 0.5]), np.array([-0.25, 1.0])]
        t1 = derivative_table(o1, np.zeros(2), dirs, 3)
        t2 = derivative_table(o2, np.zeros(2), dirs, 3)
        assert list(t1.items()) == list(t2.items())

    def test_norms_table(self):
        oracle = scalar_cubic_oracle()
        table = derivative_table(oracle, np.array([0.0]), [np.array([1.0])], 3)
        norms = table.norms()
        assert norms[(0, 0, 0)] == pytest.approx(6.0)


class TestFiniteDifferenceCheck:
    def test_quadratic_first_derivative(self):
        oracle = scalar_quadratic_oracle()
        smap = lambda d: solve_residual(oracle, d, 0.0, 1e-14)
        est, ind = finite_difference_check(smap, np.array([3.0]), [np.array([1.0])],
                                           [1e-2, 5e-3, 2.5e-3])
        assert abs(est - 6.0) < 1e-8
        assert ind < 1e-8

    def test_cubic_third_derivative(self):
        oracle = scalar_cubic_oracle()
        smap = lambda d: solve_residual(oracle, d, 0.0, 1e-14)
        h = np.array([1.0])
        est, ind = finite_difference_check(smap, np.array([0.0]), [h, h, h],
                                           [0.08, 0.04, 0.02, 0.01])
        assert abs(est + 6.0) <= max(ind, 1e-6)
        assert ind < 1e-4

    def test_constant_map(self):
        est, ind = finite_difference_check(lambda d: 0.0, np.array([0.0]),
                                           [np.array([1.0])], [0.1, 0.05])
        assert est == 0.0 and ind == 0.0

    def test_eval_noise_enters_indicator(self):
        smap = lambda d: float(d[0] ** 2)
        _, clean = finite_difference_check(smap, np.array([1.0]), [np.array([1.0])],
                                           [0.1, 0.05])
        _, noisy = finite_difference_check(smap, np.array([1.0]), [np.array([1.0])],
                                           [0.1, 0.05], eval_noise=1e-10)
        assert noisy >= clean + 2.0 * 1e-10 / 0.05

    def test_validation(self):
        smap = lambda d: 0.0
        with pytest.raises(ValueError):
            finite_difference_check(smap, np.array([0.0]), [np.array([1.0])] * 5,
                                    [0.1, 0.05])
        with pytest.raises(ValueError):
            finite_difference_check(smap, np.array([0.0]), [np.array([1.0])], [0.1])


class TestTableEnvelopeCompliance:
    def test_cubic_bounds_hold_with_measured_constants(self):
        oracle = scalar_cubic_oracle()
        d = np.array([0.0])
        table = derivative_table(oracle, d, [np.array([1.0])], 5)
        u = table.entry(())
        # exact multilinear norms: extreme points of the unit max-norm balls
        corners = list(itertools.product((-1.0, 1.0), repeat=2))
        norms_r = []
        for r in range(1, 4):
            best = 0.0
            for combo in itertools.product(corners, repeat=r):
                args = [(np.array([c[0]]), c[1]) for c in combo]
                best = max(best, abs(oracle.apply_derivative(r, d, u, args)))
            norms_r.append(best)
        sigma = max([1.0] + [m / math.factorial(r + 1) for r, m in enumerate(norms_r)])
        env = implicit_envelope(StabilityConstant(1.0), GevreyEnvelope(1.0, sigma, 1.0))
        measured = {n: abs(table.entry((0,) * n)) for n in range(1, 6)}
        assert envelope_check(measured, env, tolerance=1e-9).passed
