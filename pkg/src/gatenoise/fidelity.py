"""Error-vector moments and ensemble-averaged gate fidelity.

Second order:  ``<F> ~ 1/2 [exp(-chi) + 1]`` with
``chi = (1/2 pi) int F1 S / w^2 dw``.

Fourth order:

    <F> = 1 - (1/4 pi) int F1 S / w^2
            - (1/4 pi)^2 int int S S' F2 / (w^2 w'^2)

with ``F2 = sum_i (F2a_i + 2 F2b_i) - (1/3) sum_ij F2c_ij``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import filters
from .control import ControlSequence, control_vector, preset
from .quadrature import (FrequencyGrid, QuadratureError, default_window,
                         integrate_frequency)
from .spectra import (DivergentSpectrumError, NoiseSpectrum, PowerLaw, WhiteCutoff,
                      autocorrelation, noise_strength)

__all__ = [
    "MomentSet", "FidelityReport", "SweepRow", "moment_a1", "moment_a1_time_domain",
    "chi", "fidelity_first_order", "fidelity_fourth_order", "fourth_order_moments",
    "error_sweep", "frequency_window", "a1sq_a1sq_from_f2c", "F2_POINTS",
]

F2_POINTS = 65
_GL_X, _GL_W = np.polynomial.legendre.leggauss(16)


def frequency_window(seq: ControlSequence, spectrum: NoiseSpectrum,
                     lo_factor: float = 1e-3) -> tuple[float, float]:
    """Frequency range integrated for ``seq`` under ``spectrum``."""
    if isinstance(spectrum, PowerLaw) and spectrum.exponent >= 2 and spectrum.omega_min <= 0:
        raise DivergentSpectrumError(
            "S/w^2 with a 1/w^p spectrum (p >= 2) needs an infrared cutoff omega_min > 0")
    return default_window(seq.tau, seq.max_rate, spectrum.support, lo_factor=lo_factor)


def _grid(seq, spectrum, n=256, lo_factor=1e-3):
    lo, hi = frequency_window(seq, spectrum, lo_factor)
    return FrequencyGrid(lo, hi, n, knee=2 * math.pi / seq.tau)


def _is_zero(spectrum: NoiseSpectrum) -> bool:
    return getattr(spectrum, "alpha", None) == 0 or (
        hasattr(spectrum, "values") and not np.any(np.asarray(spectrum.values)))


def moment_a1(seq: ControlSequence, spectrum: NoiseSpectrum, rtol: float = 1e-9,
              grid: FrequencyGrid | None = None) -> np.ndarray:
    """``<a1_i a1_j> = (1/4 pi) int S Re[y1_i y1_j^*] / w^2 dw``; 3x3 symmetric."""
    if _is_zero(spectrum):
        return np.zeros((3, 3))
    grid = grid or _grid(seq, spectrum)

    def integrand(w):
        y = filters.y1(seq, w)
        outer = np.real(y[:, :, None] * y[:, None, :].conj())
        return outer * (spectrum(w) / w ** 2)[:, None, None]

    # the [0, lo] tail estimate only applies if the spectrum extends below lo
    tail = spectrum.support[0] < grid.lo
    res = integrate_frequency(integrand, grid, rtol=rtol, low_tail=tail)
    m = res.value / (4 * math.pi)
    return 0.5 * (m + m.T)


def _autocorrelation_fn(spectrum: NoiseSpectrum, tau: float):
    """Vectorised ``g(lag)``; non-closed-form models go through a lag table."""
    if isinstance(spectrum, WhiteCutoff):
        return lambda lag: autocorrelation(spectrum, lag)
    lags = np.linspace(0.0, tau, 2049)
    table = autocorrelation(spectrum, lags)
    from scipy.interpolate import CubicSpline
    spline = CubicSpline(lags, table)
    return lambda lag: spline(np.abs(lag))


def moment_a1_time_domain(seq: ControlSequence, spectrum: NoiseSpectrum,
                          max_nodes: int = 6000) -> np.ndarray:
    """``(1/4) int int s1_i(t2) s1_j(t1) g(t2 - t1) dt1 dt2`` over ``[0, tau]^2``.

    Product Gauss-Legendre rule with panels short enough to resolve both the
    control rotation and the autocorrelation; independent of the frequency-domain
    route used by :func:`moment_a1`.
    """
    if _is_zero(spectrum):
        return np.zeros((3, 3))
    w_hi = spectrum.support[1]
    if not math.isfinite(w_hi):
        raise DivergentSpectrumError("time-domain route needs a band-limited spectrum")
    ts, ws = [], []
    b = seq.boundaries
    for j, seg in enumerate(seq.segments):
        phase = (w_hi + abs(seg.rate)) * seg.duration
        n_pan = max(1, int(math.ceil(phase / 2.0)))
        edges = np.linspace(b[j], b[j + 1], n_pan + 1)
        half = 0.5 * np.diff(edges)
        mid = 0.5 * (edges[1:] + edges[:-1])
        ts.append((mid[:, None] + half[:, None] * _GL_X).ravel())
        ws.append((half[:, None] * _GL_W).ravel())
    t = np.concatenate(ts)
    w = np.concatenate(ws)
    if len(t) > max_nodes:
        raise ValueError(f"time-domain oracle would need {len(t)} nodes (> {max_nodes})")
    g = _autocorrelation_fn(spectrum, seq.tau)(t[:, None] - t[None, :])
    sw = control_vector(seq, t) * w[:, None]
    m = sw.T @ g @ sw / 4
    return 0.5 * (m + m.T)


def chi(seq: ControlSequence, spectrum: NoiseSpectrum, rtol: float = 1e-9) -> float:
    """``chi = (1/2 pi) int F1 S / w^2 dw`` (equals ``2 tr <a1 a1>``)."""
    return float(2 * np.trace(moment_a1(seq, spectrum, rtol)))


@dataclass(frozen=True)
class MomentSet:
    """Second- and fourth-order error-vector moments (rad^2, rad^4)."""

    a1a1: np.ndarray                  # <a1_i a1_j>
    a2sq: np.ndarray | None = None    # <a2_i^2>, per axis
    a1a3: np.ndarray | None = None    # <a1_i a3_i>, per axis
    a1sq_a1sq: np.ndarray | None = None  # <a1_i^2 a1_j^2>

    def bound_ratios(self, xi: float) -> dict[str, float]:
        """Largest moment over its worst-case bound; values <= 1 satisfy the bound."""
        x2, x4 = xi ** 2, xi ** 4
        out = {"a1a1": float(np.max(np.abs(self.a1a1))) / x2}
        if self.a2sq is not None:
            out["a2sq"] = float(np.max(self.a2sq)) / (0.75 * x4)
        if self.a1a3 is not None:
            out["a1a3"] = float(np.max(np.abs(self.a1a3))) / (0.25 * x4)
        if self.a1sq_a1sq is not None:
            out["a1sq_a1sq"] = float(np.max(self.a1sq_a1sq)) / (3 * x4)
        return out

    def gaussian_a1sq_a1sq(self) -> np.ndarray:
        """``<a1_i^2><a1_j^2> + 2 <a1_i a1_j>^2`` from the second moments."""
        d = np.diag(self.a1a1)
        return np.outer(d, d) + 2 * self.a1a1 ** 2


@dataclass(frozen=True)
class FidelityReport:
    chi: float
    error_2nd: float
    fidelity_2nd: float
    xi: float
    error_4th: float | None = None
    fidelity_4th: float | None = None
    moments: MomentSet | None = field(default=None, repr=False)
    flags: tuple[str, ...] = ()

    @property
    def order_difference(self) -> float | None:
        if self.fidelity_4th is None:
            return None
        return self.fidelity_4th - self.fidelity_2nd

    def to_dict(self) -> dict:
        out = {"chi": self.chi, "xi": self.xi, "error_2nd": self.error_2nd,
               "fidelity_2nd": self.fidelity_2nd, "error_4th": self.error_4th,
               "fidelity_4th": self.fidelity_4th, "order_difference": self.order_difference,
               "flags": list(self.flags)}
        if self.moments is not None:
            m = self.moments
            out["moments"] = {
                "a1a1": m.a1a1.tolist(),
                "a2sq": None if m.a2sq is None else m.a2sq.tolist(),
                "a1a3": None if m.a1a3 is None else m.a1a3.tolist(),
                "a1sq_a1sq": None if m.a1sq_a1sq is None else m.a1sq_a1sq.tolist(),
            }
        return out


def _flags(x: float, *fids) -> tuple[str, ...]:
    flags = []
    if x >= 1:
        flags.append("xi_ge_1")
    for f in fids:
        if f is not None and not (0.5 <= f <= 1.0):
            flags.append("fidelity_out_of_range")
            break
    return tuple(flags)


def _xi(seq, spectrum) -> float:
    try:
        return noise_strength(spectrum, seq.tau).xi
    except DivergentSpectrumError:
        return math.inf


def fidelity_first_order(seq: ControlSequence, spectrum: NoiseSpectrum,
                         rtol: float = 1e-9) -> FidelityReport:
    """Second-order-in-xi fidelity ``1/2 [exp(-chi) + 1]``."""
    flags = []
    try:
        m = moment_a1(seq, spectrum, rtol)
    except QuadratureError as exc:
        m = exc.estimates[-1] / (4 * math.pi)
        flags.append("quadrature_not_converged")
    c = float(2 * np.trace(m))
    fid = 0.5 * (math.exp(-c) + 1)
    x = _xi(seq, spectrum)
    if x >= 1:
        warnings.warn(f"xi = {x:.3g} >= 1: weak-noise expansion not justified",
                      RuntimeWarning, stacklevel=2)
    return FidelityReport(c, 1 - fid, fid, x, moments=MomentSet(m),
                          flags=tuple(flags) + _flags(x, fid))


def _f2_grid_for(seq, spectrum, points, lo_factor, cache):
    lo, hi = frequency_window(seq, spectrum, lo_factor)
    key = (lo, hi, points)
    if cache is not None and key in cache:
        return cache[key]
    g = filters.compute_f2_grid(seq, lo, hi, points)
    if cache is not None:
        cache[key] = g
    return g


def fourth_order_moments(seq: ControlSequence, spectrum: NoiseSpectrum,
                         f2grid: filters.F2Grid | None = None, points: int = F2_POINTS,
                         lo_factor: float = 1e-4, rtol: float = 1e-9) -> MomentSet:
    """All four moment families; fourth-order ones from the tabulated F2 grid."""
    if f2grid is None:
        f2grid = _f2_grid_for(seq, spectrum, points, lo_factor, None)
    m1 = moment_a1(seq, spectrum, rtol)
    return MomentSet(m1, f2grid.integrate(f2grid.f2a, spectrum),
                     f2grid.integrate(f2grid.f2b, spectrum),
                     f2grid.integrate(f2grid.f2c, spectrum))


def fidelity_fourth_order(seq: ControlSequence, spectrum: NoiseSpectrum,
                          f2grid: filters.F2Grid | None = None, points: int = F2_POINTS,
                          lo_factor: float = 1e-4, rtol: float = 1e-9,
                          cache: dict | None = None) -> FidelityReport:
    """Fidelity through fourth order in ``xi``; the report carries both orders.

    ``f2grid`` may be a precomputed :class:`~gatenoise.filters.F2Grid` for the
    same sequence, reused across spectra.
    """
    base = fidelity_first_order(seq, spectrum, rtol)
    if _is_zero(spectrum):
        return FidelityReport(0.0, 0.0, 1.0, base.xi, 0.0, 1.0, base.moments, base.flags)
    if f2grid is None:
        f2grid = _f2_grid_for(seq, spectrum, points, lo_factor, cache)
    elif not math.isclose(f2grid.tau, seq.tau, rel_tol=1e-12):
        raise ValueError("F2 grid was computed for a different gate duration")
    m1 = base.moments.a1a1
    fa = f2grid.integrate(f2grid.f2a, spectrum)
    fb = f2grid.integrate(f2grid.f2b, spectrum)
    fc = f2grid.integrate(f2grid.f2c, spectrum)
    second = float(np.trace(m1))
    fourth = float(fa.sum() + 2 * fb.sum() - fc.sum() / 3)
    fid4 = 1 - second - fourth
    flags = tuple(dict.fromkeys(base.flags + _flags(base.xi, fid4)))
    return FidelityReport(base.chi, base.error_2nd, base.fidelity_2nd, base.xi,
                          1 - fid4, fid4, MomentSet(m1, fa, fb, fc), flags)


@dataclass(frozen=True)
class SweepRow:
    gate: str
    tau_x: float
    xi: float
    chi: float
    error_2nd: float
    error_4th: float | None
    flags: tuple[str, ...]


def error_sweep(gates, spectrum: NoiseSpectrum, tau_x, fourth_order: bool = False,
                rtol: float = 1e-8, points: int = 32) -> list[SweepRow]:
    """Gate error versus primitive duration ``tau_x`` (rate ``pi / tau_x``).

    ``gates`` is a preset name or a list of them; rows come out grouped by
    gate in input order, then by ``tau_x``.
    """
    if isinstance(gates, str):
        gates = [gates]
    rows = []
    for name in gates:
        for tx in np.atleast_1d(np.asarray(tau_x, dtype=float)):
            rate = math.pi / tx
            seq, _ = preset(name, rate=rate, tau=tx if name == "free" else None)
            if fourth_order:
                rep = fidelity_fourth_order(seq, spectrum, points=points, rtol=rtol)
            else:
                rep = fidelity_first_order(seq, spectrum, rtol)
            rows.append(SweepRow(name, float(tx), rep.xi, rep.chi, rep.error_2nd,
                                 rep.error_4th, rep.flags))
    return rows


def a1sq_a1sq_from_f2c(seq: ControlSequence, spectrum: NoiseSpectrum, intervals: int = 1024,
                       lo_factor: float = 1e-8) -> np.ndarray:
    """``<a1_i^2 a1_j^2>`` as the double frequency integral of ``F2c``.

    The full ``(N, N, 3, 3)`` table of ``F2c`` is summed with product trapezoid
    weights on a knee-mapped frequency grid, Richardson-combined with the
    half-resolution grid. Serves as the check of the Gaussian factorisation
    built from :func:`moment_a1`.
    """
    grid = _grid(seq, spectrum, intervals, lo_factor)
    omega = grid.nodes
    y = filters.y1(seq, omega)
    fc = filters._f2c_from_y(y[:, None, :], y[None, :, :])
    q = grid.weights() * spectrum(omega) / omega ** 2
    fine = np.einsum("m,n,mnij->ij", q, q, fc)
    half = FrequencyGrid(grid.lo, grid.hi, intervals // 2, grid.knee)
    q2 = half.weights() * spectrum(omega[::2]) / omega[::2] ** 2
    coarse = np.einsum("m,n,mnij->ij", q2, q2, fc[::2, ::2])
    return (4 * fine - coarse) / 3 / (4 * math.pi) ** 2
