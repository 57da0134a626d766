"""Integration kernels.

Frequency integrals run on logarithmic grids with the ``1/omega^2``
weights folded in by the caller. Nested time integrals over simplices
``0 <= t1 <= t2 <= ... <= tau`` are evaluated with trapezoid prefix sums
on a time grid whose nodes include every segment boundary, so each nested
level costs O(M).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import special

__all__ = [
    "FrequencyGrid", "TimeGrid", "QuadratureError", "FrequencyIntegral",
    "integrate_frequency", "cumulative_transform", "nested_double", "nested_triple",
    "trapezoid_weights", "simplex_weight_matrix", "default_window",
]


class QuadratureError(RuntimeError):
    """Refinement did not reach the requested tolerance."""

    def __init__(self, message, estimates=()):
        super().__init__(message)
        self.estimates = tuple(estimates)


@dataclass(frozen=True)
class FrequencyGrid:
    """Nodes on ``[lo, hi]``, uniform in ``u``; ``n`` counts intervals (nodes = n + 1).

    Without ``knee`` the map is ``u = ln w`` (log spacing). With ``knee`` it is
    ``u = w / knee + ln(w / knee)``: logarithmic below the knee and linear
    above it, which keeps oscillatory high-frequency tails resolved without
    spending nodes on decades of uniform log steps.
    """

    lo: float
    hi: float
    n: int = 256
    knee: float | None = None

    def __post_init__(self):
        if not (0 < self.lo < self.hi) or not math.isfinite(self.hi):
            raise ValueError("frequency grid needs 0 < lo < hi < inf")
        if self.n < 16:
            raise ValueError("frequency grid needs at least 16 intervals")
        if self.knee is not None and not self.knee > 0:
            raise ValueError("knee must be positive")

    def to_u(self, w):
        w = np.asarray(w, dtype=float)
        if self.knee is None:
            return np.log(w)
        return w / self.knee + np.log(w / self.knee)

    def from_u(self, u):
        u = np.asarray(u, dtype=float)
        if self.knee is None:
            return np.exp(u)
        return self.knee * np.real(special.wrightomega(u))

    def jacobian(self, w):
        """``dw/du`` at ``w``."""
        w = np.asarray(w, dtype=float)
        if self.knee is None:
            return w
        return w / (1.0 + w / self.knee)

    @property
    def u_range(self) -> tuple[float, float]:
        return float(self.to_u(self.lo)), float(self.to_u(self.hi))

    @property
    def nodes(self) -> np.ndarray:
        u0, u1 = self.u_range
        w = self.from_u(np.linspace(u0, u1, self.n + 1))
        w[0], w[-1] = self.lo, self.hi
        return w

    @property
    def log_step(self) -> float:
        u0, u1 = self.u_range
        return (u1 - u0) / self.n

    def weights(self) -> np.ndarray:
        """Trapezoid weights for ``int f(w) dw`` (Jacobian included)."""
        w = np.full(self.n + 1, self.log_step)
        w[0] = w[-1] = self.log_step / 2
        nodes = self.nodes
        return w * self.jacobian(nodes)

    def refined(self) -> "FrequencyGrid":
        return FrequencyGrid(self.lo, self.hi, 2 * self.n, self.knee)


def default_window(tau: float, max_rate: float = 0.0, support=(0.0, math.inf),
                   lo_factor: float = 1e-3, hi_factor: float = 1e3,
                   hi_cap: float = 1e6) -> tuple[float, float]:
    """Integration window for a gate of duration ``tau``.

    The lower edge is ``lo_factor`` times the smaller of ``1 / tau`` and the
    upper support edge. A finite spectral support is
    integrated up to its edge (capped at ``hi_cap * scale``); an unbounded one
    is cut at ``hi_factor * scale``, with ``scale = max(max_rate, 2 pi / tau)``.
    """
    scale = max(max_rate, 2 * math.pi / tau)
    s_lo, s_hi = support
    lo = max(min(lo_factor / tau, lo_factor * s_hi), s_lo)
    hi = min(s_hi, hi_cap * scale) if math.isfinite(s_hi) else hi_factor * scale
    if not lo < hi:
        raise ValueError("spectrum support does not overlap the frequency window")
    return lo, hi


@dataclass(frozen=True)
class FrequencyIntegral:
    value: np.ndarray
    previous: np.ndarray
    n: int
    converged: bool


def integrate_frequency(f: Callable[[np.ndarray], np.ndarray], grid: FrequencyGrid,
                        rtol: float = 1e-6, n_max: int = 2 ** 20, atol: float = 0.0,
                        low_tail: bool = True, raise_on_failure: bool = True) -> FrequencyIntegral:
    """Trapezoid integral of ``f`` over ``[grid.lo, grid.hi]`` with interval doubling in ``u``.

    ``f`` maps an array of frequencies of shape ``(N,)`` to values of shape
    ``(N, ...)``. Successive trapezoid sums are Richardson-combined; the
    refinement stops once the relative change of the combined estimate is below
    ``rtol`` (measured on the largest component).

    With ``low_tail`` the contribution of ``[0, grid.lo]`` is added assuming
    ``f ~ w**p`` there, ``p`` estimated from the two lowest nodes.
    """
    n = grid.n
    nodes = grid.nodes
    u0, u1 = grid.u_range
    vals = np.asarray(f(nodes), dtype=float)
    trap = _log_trapz(vals, grid.log_step, grid.jacobian(nodes))
    best_prev = None
    best = trap
    while True:
        if n * 2 > n_max:
            break
        n2 = 2 * n
        h2 = (u1 - u0) / n2
        mids = grid.from_u(u0 + h2 * (2 * np.arange(n) + 1))
        mid_vals = np.asarray(f(mids), dtype=float)
        merged = np.empty((n2 + 1,) + vals.shape[1:])
        merged[0::2] = vals
        merged[1::2] = mid_vals
        merged_nodes = np.empty(n2 + 1)
        merged_nodes[0::2] = nodes
        merged_nodes[1::2] = mids
        trap2 = _log_trapz(merged, h2, grid.jacobian(merged_nodes))
        rich = (4 * trap2 - trap) / 3
        vals, nodes, n, trap = merged, merged_nodes, n2, trap2
        best_prev, best = best, rich
        if best_prev is not None and n >= 4 * grid.n:
            scale = max(float(np.max(np.abs(best))), atol)
            if float(np.max(np.abs(best - best_prev))) <= rtol * scale + atol or scale == 0:
                tail = _low_tail(vals, nodes) if low_tail else 0.0
                return FrequencyIntegral(best + tail, best_prev + tail, n, True)
    if raise_on_failure:
        raise QuadratureError(
            f"frequency integral not converged to rtol={rtol} with {n} intervals; "
            f"last estimates {best_prev!r} and {best!r}", (best_prev, best))
    tail = _low_tail(vals, nodes) if low_tail else 0.0
    prev = best if best_prev is None else best_prev
    return FrequencyIntegral(best + tail, prev + tail, n, False)


def _log_trapz(vals: np.ndarray, h: float, jac: np.ndarray) -> np.ndarray:
    g = vals * jac.reshape((-1,) + (1,) * (vals.ndim - 1))
    return h * (np.sum(g[1:-1], axis=0) + 0.5 * (g[0] + g[-1]))


def _low_tail(vals: np.ndarray, nodes: np.ndarray) -> np.ndarray:
    f0, f1 = vals[0], vals[1]
    w0, w1 = nodes[0], nodes[1]
    with np.errstate(divide="ignore", invalid="ignore"):
        p = np.log(np.abs(f1) / np.abs(f0)) / math.log(w1 / w0)
        tail = np.where((np.abs(f0) > 0) & np.isfinite(p) & (p > -1), f0 * w0 / (p + 1), 0.0)
    return tail


@dataclass(frozen=True)
class TimeGrid:
    """Trapezoid nodes on ``[0, tau]`` that include every segment boundary."""

    nodes: np.ndarray
    boundaries: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.nodes[0] != 0.0 or np.any(np.diff(self.nodes) <= 0):
            raise ValueError("time grid must start at 0 and increase strictly")

    @classmethod
    def for_boundaries(cls, boundaries, points_per_segment=64, max_frequency: float = 0.0,
                       rates=None, points_per_radian: float = 2.0) -> "TimeGrid":
        """Uniform nodes inside each segment.

        Each segment gets ``max(points_per_segment, points_per_radian * phase)``
        intervals, where ``phase = (max_frequency + |rate|) * duration``.
        """
        b = np.asarray(boundaries, dtype=float)
        rates = np.zeros(len(b) - 1) if rates is None else np.abs(np.asarray(rates, float))
        if points_per_segment < 8:
            raise ValueError("need at least 8 points per segment")
        parts = [np.array([0.0])]
        for j in range(len(b) - 1):
            d = b[j + 1] - b[j]
            phase = (max_frequency + rates[j]) * d
            m = max(int(points_per_segment), int(math.ceil(points_per_radian * phase)))
            parts.append(np.linspace(b[j], b[j + 1], m + 1)[1:])
        nodes = np.concatenate(parts)
        nodes[-1] = b[-1]
        return cls(nodes, b)

    @classmethod
    def for_sequence(cls, seq, points_per_segment=64, max_frequency=0.0,
                     points_per_radian=2.0) -> "TimeGrid":
        return cls.for_boundaries(seq.boundaries, points_per_segment, max_frequency,
                                  [s.rate for s in seq.segments], points_per_radian)

    def refined(self) -> "TimeGrid":
        mids = 0.5 * (self.nodes[1:] + self.nodes[:-1])
        nodes = np.empty(2 * len(self.nodes) - 1)
        nodes[0::2] = self.nodes
        nodes[1::2] = mids
        return TimeGrid(nodes, self.boundaries)

    @property
    def tau(self) -> float:
        return float(self.nodes[-1])

    @property
    def m(self) -> int:
        return len(self.nodes) - 1

    def weights(self) -> np.ndarray:
        return trapezoid_weights(self.nodes)


def trapezoid_weights(nodes: np.ndarray) -> np.ndarray:
    h = np.diff(nodes)
    w = np.zeros(len(nodes))
    w[:-1] += h / 2
    w[1:] += h / 2
    return w


def _cumtrapz(values: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Prefix trapezoid sums along the last axis, starting at 0."""
    out = np.zeros(values.shape, dtype=np.result_type(values, float))
    np.cumsum(0.5 * h * (values[..., 1:] + values[..., :-1]), axis=-1, out=out[..., 1:])
    return out


def cumulative_transform(f: np.ndarray, omega, grid: TimeGrid) -> np.ndarray:
    """Prefix integrals ``P(u_m) = int_0^{u_m} f(t) exp(i omega t) dt``.

    ``f`` has the time axis last; ``omega`` may be an array, in which case
    the result gains leading axes ``omega.shape``.
    """
    t = grid.nodes
    om = np.asarray(omega, dtype=float)
    phase = np.exp(1j * om[..., None] * t)
    f = np.asarray(f)
    vals = phase.reshape(om.shape + (1,) * (f.ndim - 1) + t.shape) * f
    return _cumtrapz(vals, np.diff(t))


def nested_double(f_a: np.ndarray, f_b: np.ndarray, omega_a, omega_b,
                  grid: TimeGrid) -> np.ndarray:
    """``int_0^tau f_a(t) e^{i wa t} int_0^t f_b(s) e^{i wb s} ds dt``."""
    t = grid.nodes
    inner = cumulative_transform(f_b, omega_b, grid)
    wa = np.asarray(omega_a, dtype=float)
    outer = np.exp(1j * wa[..., None] * t) * grid.weights()
    return np.sum(outer * np.asarray(f_a) * inner, axis=-1)


def nested_triple(f3: np.ndarray, f2: np.ndarray, f1: np.ndarray, w3, w2, w1,
                  grid: TimeGrid) -> np.ndarray:
    """``int f3 e^{i w3 t3} int^{t3} f2 e^{i w2 t2} int^{t2} f1 e^{i w1 t1}``."""
    t = grid.nodes
    p1 = cumulative_transform(f1, w1, grid)
    p2 = _cumtrapz(np.exp(1j * np.asarray(w2, float)[..., None] * t) * np.asarray(f2) * p1,
                   np.diff(t))
    outer = np.exp(1j * np.asarray(w3, float)[..., None] * t) * grid.weights()
    return np.sum(outer * np.asarray(f3) * p2, axis=-1)


def simplex_weight_matrix(nodes: np.ndarray) -> np.ndarray:
    """Dense ``W[m, n]`` with ``sum_{m,n} W F(u_n, u_m)`` equal to the nested trapezoid rule.

    Built entry by entry (outer trapezoid weight times the trapezoid weight of
    node ``n`` on ``[0, u_m]``); used by brute-force checks.
    """
    k = len(nodes)
    outer = trapezoid_weights(nodes)
    W = np.zeros((k, k))
    for m in range(1, k):
        inner = trapezoid_weights(nodes[: m + 1])
        W[m, : m + 1] = outer[m] * inner
    return W
