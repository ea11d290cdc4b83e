"""Parametric domain deformations of the unit interval and the
parameters-to-solution derivative pipeline.

A sine-mode displacement family V[y](x) = x + sum_k y_k gamma_k
sin(k pi x)/(k pi) deforms the interval; pulling the weak problem back to
the reference interval turns the deformation into coefficient data
(a/W, W b, W f, g) with W = V'[y].  Because W is affine in y, every mixed
partial of the data is available in closed form through a reciprocal
recursion, and mixed partials of the solution follow from the chain rule
applied to the residual equation: the term containing the unknown partial
is isolated and everything else moves to the right-hand side of a
linearized solve.

Tables are filled order by order (see implicit_diff) and treated as
immutable once complete.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np

from .combinatorics import (
    MultiIndex,
    multi_index_compositions,
    multi_indices_up_to,
)
from .envelopes import (
    GevreyEnvelope,
    ParametricEnvelope,
    StabilityConstant,
    compose_parametric,
    implicit_envelope,
)
from .implicit_diff import DerivativeTable, solve_residual
from .pde1d import (
    Mesh1D,
    Nonlinearity,
    PdeData,
    PdeOracle,
    estimate_constants,
    newton_solve,
)

__all__ = [
    "BILIPSCHITZ_CONSTANT",
    "DomainMap1D",
    "TildeData",
    "pullback",
    "data_map_partials",
    "parametric_solution_derivative",
    "parametric_derivative_table",
    "data_envelope",
    "solution_envelope",
    "verify_derivative_bounds",
    "DerivativeBoundRow",
    "DerivativeBoundReport",
    "gevrey_rate_fit",
    "GevreyFit",
]

#: Uniform bi-Lipschitz constant of the displacement family on the box.
BILIPSCHITZ_CONSTANT = 2.0


@dataclass(frozen=True)
class DomainMap1D:
    """Sine-mode displacement family on the unit interval.

    V[y](x) = x + sum_{k <= p} y_k gamma_k sin(k pi x)/(k pi) with weights
    gamma_k = c * k**(-vartheta) and parameters y in the closed box
    [-1/2, 1/2]^p.  The constructor enforces sum_k gamma_k <= 1, which
    keeps the deformation gradient W = V' inside [1/2, 3/2] on the whole
    box, so the family is uniformly bi-Lipschitz with constant 2.  The
    map is affine in y: all mixed partials of order two and higher vanish
    and the order-one partial in y_k is gamma_k sin(k pi x)/(k pi).
    """

    p: int
    c: float = 0.5
    vartheta: float = 2.0

    def __post_init__(self) -> None:
        if not 1 <= self.p <= 8:
            raise ValueError("active dimension p must be between 1 and 8")
        if self.c <= 0.0:
            raise ValueError("weight scale c must be positive")
        if self.vartheta <= 1.0:
            raise ValueError("decay exponent vartheta must exceed 1")
        if sum(self.gammas()) > 1.0 + 1e-12:
            raise ValueError(
                "weights violate the bi-Lipschitz margin: sum gamma_k must be <= 1"
            )

    def gamma(self, k: int) -> float:
        return self.c * float(k) ** (-self.vartheta)

    def gammas(self) -> tuple[float, ...]:
        return tuple(self.gamma(k) for k in range(1, self.p + 1))

    def validate_point(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if y.shape != (self.p,):
            raise ValueError(f"parameter point must have shape ({self.p},)")
        if np.any(np.abs(y) > 0.5 + 1e-12):
            raise ValueError("parameter outside the closed box [-1/2, 1/2]^p")
        return y

    def map_points(self, y, x):
        y = self.validate_point(y)
        out = np.asarray(x, dtype=float).copy()
        for k in range(1, self.p + 1):
            out = out + y[k - 1] * self.gamma(k) * np.sin(k * math.pi * x) / (k * math.pi)
        return out

    def deformation_gradient(self, y, x):
        y = self.validate_point(y)
        out = np.ones_like(np.asarray(x, dtype=float))
        for k in range(1, self.p + 1):
            out = out + y[k - 1] * self.mode_gradient(k, x)
        return out

    def mode_gradient(self, k: int, x):
        """d/dy_k of the deformation gradient: gamma_k cos(k pi x)."""
        return self.gamma(k) * np.cos(k * math.pi * np.asarray(x, dtype=float))


class TildeData:
    """Pulled-back data at a fixed parameter point, with cached partials.

    In one dimension the pullback is a -> a/W, b -> W b, f -> W f with the
    flux value unchanged.  W is affine in y, so the only nonlinearity in y
    sits in 1/W, whose mixed partials satisfy the reciprocal recursion

        W * d^alpha (1/W) = -sum_k alpha_k w_k d^(alpha - e_k) (1/W),

    with w_k the mode gradients; partials of W b and W f have exactly one
    Leibniz term and vanish beyond order one.
    """

    def __init__(self, dmap: DomainMap1D, hat: PdeData, mesh: Mesh1D, y):
        self.dmap = dmap
        self.hat = hat
        self.mesh = mesh
        self.y = dmap.validate_point(y)
        x = mesh.quad_x
        self.mode_grads = [dmap.mode_gradient(k, x) for k in range(1, dmap.p + 1)]
        self.w = dmap.deformation_gradient(self.y, x)
        self.winv = 1.0 / self.w
        self.data = PdeData(hat.a * self.winv, self.w * hat.b, self.w * hat.f, hat.g)
        self._winv_partials: dict[MultiIndex, np.ndarray] = {MultiIndex(): self.winv}
        self._zero = np.zeros_like(self.w)

    def winv_partial(self, alpha: MultiIndex) -> np.ndarray:
        cached = self._winv_partials.get(alpha)
        if cached is not None:
            return cached
        acc = self._zero
        for k, e in alpha.entries:
            if k > self.dmap.p:
                self._winv_partials[alpha] = self._zero
                return self._zero
            acc = acc + e * self.mode_grads[k - 1] * self.winv_partial(
                alpha - MultiIndex.unit(k)
            )
        out = -self.winv * acc
        self._winv_partials[alpha] = out
        return out

    def partial(self, alpha: MultiIndex) -> PdeData:
        """Mixed partial of the data tuple at this parameter point."""
        if alpha.is_zero():
            return self.data
        a_part = self.hat.a * self.winv_partial(alpha)
        if alpha.order() == 1:
            k = alpha.support()[0]
            if k > self.dmap.p:
                return PdeData(self._zero, self._zero, self._zero, 0.0)
            wk = self.mode_grads[k - 1]
            return PdeData(a_part, wk * self.hat.b, wk * self.hat.f, 0.0)
        return PdeData(a_part, self._zero, self._zero, 0.0)


def pullback(dmap: DomainMap1D, hat: PdeData, mesh: Mesh1D, y) -> PdeData:
    """Pulled-back data tuple (a/W, W b, W f, g) at the parameter point y.

    Ellipticity survives: on the box, inf a/W >= min(1, inf a) / 8.
    """
    return TildeData(dmap, hat, mesh, y).data


def data_map_partials(dmap: DomainMap1D, hat: PdeData, mesh: Mesh1D, y,
                      alpha: MultiIndex) -> PdeData:
    """Mixed partial of the parameters-to-data map; alpha = 0 gives the
    pullback itself.  Prefer TildeData when many partials are needed."""
    return TildeData(dmap, hat, mesh, y).partial(alpha)


def parametric_solution_derivative(oracle: PdeOracle, tilde: TildeData,
                                   table: DerivativeTable,
                                   alpha: MultiIndex) -> np.ndarray:
    """Mixed partial of the parameters-to-solution map at the table's base.

    Differentiating R(data(y), u(y)) = 0 with the multi-index chain rule
    and isolating the single term that contains the unknown partial gives

        d^alpha u = -(D2R)^{-1} [ D1R[d^alpha data]
            + sum_{r>=2} sum_{compositions beta of alpha into r parts}
              alpha!/(r! prod beta_j!) D^rR[(d^beta_j data, d^beta_j u)_j] ].

    All partials of strictly smaller order must already be in the table.
    """
    if alpha.is_zero():
        return table.u
    n = alpha.order()
    rhs = oracle.apply_derivative(
        1, table.d, table.u, [(tilde.partial(alpha), oracle.zero_state())]
    )
    mdo = oracle.max_derivative_order()
    alpha_fact = alpha.factorial()
    for r in range(2, n + 1):
        if mdo is not None and r > mdo:
            continue
        for comb in multi_index_compositions(alpha, r):
            denom = math.factorial(r)
            for beta in comb.parts:
                denom *= beta.factorial()
            coeff = float(Fraction(alpha_fact, denom))
            args = [(tilde.partial(beta), table.entry(beta)) for beta in comb.parts]
            rhs = rhs + coeff * oracle.apply_derivative(r, table.d, table.u, args)
    return -oracle.solve_linearized(table.d, table.u, rhs)


def parametric_derivative_table(oracle: PdeOracle, tilde: TildeData,
                                max_order: int, *, tol: float = 1e-12,
                                u: np.ndarray | None = None) -> DerivativeTable:
    """Fill d^alpha u for every alpha with |alpha| <= max_order over the
    active coordinates, order by order."""
    if u is None:
        u = solve_residual(oracle, tilde.data, oracle.zero_state(), tol)
    table = DerivativeTable(oracle, tilde.data, u, directions=None)
    for alpha in multi_indices_up_to(tilde.dmap.p, max_order):
        if alpha.is_zero():
            continue
        table.put(alpha, parametric_solution_derivative(oracle, tilde, table, alpha))
    return table


# -- envelope construction and verification ------------------------------------


def data_envelope(dmap: DomainMap1D, hat: PdeData, mesh: Mesh1D) -> ParametricEnvelope:
    """Constructive envelope for the parameters-to-data map.

    On the box, |d^alpha (1/W)| <= |alpha|! gamma^alpha 2^(|alpha|+1)
    (geometric series of the reciprocal of an affine function with
    W >= 1/2 and mode gradients bounded by gamma_k), and the W b, W f
    partials contribute only at order one.  This certifies the bound
    |alpha|! * mu * 2^|alpha| * gamma^alpha on the data-space norm with
    mu = max(2 sup|a|, sup|b|, ||f||_L2).
    """
    a_sup = float(np.max(np.abs(hat.a)))
    b_sup = float(np.max(np.abs(hat.b)))
    f_l2 = mesh.l2_norm_quad(hat.f)
    mu = max(2.0 * a_sup, b_sup, f_l2)
    return ParametricEnvelope(
        GevreyEnvelope(1.0, mu, 2.0),
        tuple(dmap.gammas()),
        tail=(dmap.c, dmap.vartheta),
    )


def _solve_at(dmap, hat, mesh, nl, y, tol):
    tilde = TildeData(dmap, hat, mesh, y)
    u = newton_solve(mesh, tilde.data, nl, tol=tol)
    return tilde, u


def _envelope_from_solves(dmap, hat, mesh, nl, solves):
    alpha_max = sigma_max = digamma_max = 1.0
    u_norm_max = 0.0
    per_point = []
    for tilde, u in solves:
        consts = estimate_constants(mesh, tilde.data, nl, u)
        per_point.append(consts)
        alpha_max = max(alpha_max, consts.alpha)
        sigma_max = max(sigma_max, consts.sigma)
        digamma_max = max(digamma_max, consts.digamma)
        u_norm_max = max(u_norm_max, mesh.h1_norm(u))
    solution_env = implicit_envelope(
        StabilityConstant(alpha_max), GevreyEnvelope(1.0, sigma_max, digamma_max)
    )
    composed = compose_parametric(data_envelope(dmap, hat, mesh), solution_env)
    # The composition rule covers alpha != 0 only; widen the scale so the
    # order-zero entries ||u(y)|| are covered as well.
    scale = max(composed.base.scale, u_norm_max)
    envelope = ParametricEnvelope(
        GevreyEnvelope(composed.base.s, scale, composed.base.rate),
        composed.weights,
        composed.tail,
    )
    constants = {
        "alpha": alpha_max,
        "sigma": sigma_max,
        "digamma": digamma_max,
        "sup_solution_norm": u_norm_max,
        "scale": envelope.base.scale,
        "rate": envelope.base.rate,
        "per_point": [c.as_dict() for c in per_point],
    }
    return envelope, constants


def solution_envelope(dmap: DomainMap1D, hat: PdeData, mesh: Mesh1D,
                      nl: Nonlinearity, ys: Sequence, tol: float = 1e-12):
    """Composed envelope for the parameters-to-solution map.

    Chains the constructive data envelope with the implicit-solution
    envelope built from constants measured at the sampled parameter
    points (stability bound, residual-derivative constants).  Returns
    (envelope, constants detail).
    """
    solves = [_solve_at(dmap, hat, mesh, nl, y, tol) for y in ys]
    return _envelope_from_solves(dmap, hat, mesh, nl, solves)


@dataclass(frozen=True)
class DerivativeBoundRow:
    alpha: MultiIndex
    y_index: int
    measured: float
    log_bound: float
    ratio: float
    ok: bool


@dataclass(frozen=True)
class DerivativeBoundReport:
    rows: tuple[DerivativeBoundRow, ...]
    envelope: ParametricEnvelope
    constants: dict

    @property
    def passed(self) -> bool:
        return all(r.ok for r in self.rows)

    @property
    def failures(self) -> tuple[DerivativeBoundRow, ...]:
        return tuple(r for r in self.rows if not r.ok)


def verify_derivative_bounds(dmap: DomainMap1D, hat: PdeData, mesh: Mesh1D,
                    nl: Nonlinearity, ys: Sequence, max_order: int = 4,
                    envelope: ParametricEnvelope | None = None,
                    tol: float = 1e-12) -> DerivativeBoundReport:
    """Measure H1 norms of every d^alpha u with |alpha| <= max_order at the
    sampled parameter points and compare them against the envelope.

    When no envelope is passed, the composed-envelope pipeline of
    `solution_envelope` is used with constants measured on the same
    samples.  An entry passes when measured <= bound.
    """
    solves = [_solve_at(dmap, hat, mesh, nl, y, tol) for y in ys]
    constants: dict = {}
    if envelope is None:
        envelope, constants = _envelope_from_solves(dmap, hat, mesh, nl, solves)
    alphas = multi_indices_up_to(dmap.p, max_order)
    rows = []
    for y_index, (tilde, u) in enumerate(solves):
        oracle = PdeOracle(mesh, nl)
        table = parametric_derivative_table(oracle, tilde, max_order, u=u, tol=tol)
        for alpha in alphas:
            measured = mesh.h1_norm(table.entry(alpha))
            log_bound = envelope.log_bound(alpha)
            if measured == 0.0:
                ratio, ok = 0.0, True
            else:
                lm = math.log(measured)
                ratio = math.exp(min(lm - log_bound, 700.0))
                ok = lm <= log_bound
            rows.append(DerivativeBoundRow(alpha, y_index, measured, log_bound, ratio, ok))
    return DerivativeBoundReport(tuple(rows), envelope, constants)


@dataclass(frozen=True)
class GevreyFit:
    s: float
    rate: float
    scale: float


def gevrey_rate_fit(norms: Mapping[MultiIndex, float],
                    weights: Sequence[float],
                    tail: tuple[float, float] | None = None) -> GevreyFit:
    """Least-squares fit of log(norm/gamma^alpha) against
    s*log(|alpha|!) + |alpha|*log(rate) + log(scale).

    Entries of order zero, zero norms and zero-weight entries are skipped;
    raises ValueError when the remaining design matrix is degenerate.
    """
    helper = ParametricEnvelope(GevreyEnvelope(1.0, 1.0, 1.0), tuple(weights), tail)
    rows, targets = [], []
    for alpha, value in norms.items():
        n = alpha.order()
        if n == 0 or value <= 0.0:
            continue
        lw = helper.log_weight_power(alpha)
        if lw == float("-inf"):
            continue
        rows.append([math.lgamma(n + 1), float(n), 1.0])
        targets.append(math.log(value) - lw)
    design = np.asarray(rows)
    if len(rows) < 3 or np.linalg.matrix_rank(design) < 3:
        raise ValueError("degenerate design matrix: need norms spanning >= 3 orders")
    sol, *_ = np.linalg.lstsq(design, np.asarray(targets), rcond=None)
    return GevreyFit(float(sol[0]), math.exp(sol[1]), math.exp(sol[2]))
