"""One-sided dephasing noise spectra.

Convention used throughout the package: ``S`` is even in frequency and only
its ``omega >= 0`` half is stored, so

    g(dt) = <eta(t) eta(t + dt)> = (1/pi) int_0^inf S(w) cos(w dt) dw

and the variance is ``g(0) = (1/pi) int_0^inf S(w) dw``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

__all__ = [
    "NoiseSpectrum", "PowerLaw", "WhiteCutoff", "Tabulated", "NoiseStrength",
    "DivergentSpectrumError", "variance", "xi", "noise_strength",
    "autocorrelation", "scaled_to_rms",
]


class DivergentSpectrumError(ValueError):
    """The requested integral of the spectrum does not converge."""


class NoiseSpectrum:
    """Base class; subclasses implement ``_eval`` and ``support``."""

    def __call__(self, omega):
        return evaluate(self, omega)

    @property
    def support(self) -> tuple[float, float]:
        raise NotImplementedError

    def scaled(self, factor: float) -> "NoiseSpectrum":
        raise NotImplementedError


def evaluate(spectrum: NoiseSpectrum, omega):
    """``S(omega)``; zero outside the model's support."""
    w = np.asarray(omega, dtype=float)
    if np.any(w < 0):
        raise ValueError("spectrum evaluated at negative frequency")
    out = spectrum._eval(w)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class WhiteCutoff(NoiseSpectrum):
    """``S(w) = alpha`` for ``w <= omega_c``, zero above."""

    alpha: float
    omega_c: float

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if not self.omega_c > 0:
            raise ValueError("omega_c must be positive")

    @property
    def support(self):
        return (0.0, float(self.omega_c))

    def _eval(self, w):
        return np.where(w <= self.omega_c, float(self.alpha), 0.0)

    def scaled(self, factor):
        return WhiteCutoff(self.alpha * factor, self.omega_c)


@dataclass(frozen=True)
class PowerLaw(NoiseSpectrum):
    """``S(w) = alpha / w**exponent`` on ``[omega_min, omega_max]``."""

    alpha: float
    exponent: float
    omega_min: float = 0.0
    omega_max: float = math.inf

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if self.omega_min < 0 or not self.omega_max > self.omega_min:
            raise ValueError("need 0 <= omega_min < omega_max")
        if self.exponent > 0 and self.omega_min <= 0:
            raise ValueError("power-law spectra with exponent > 0 need an infrared "
                             "cutoff omega_min > 0")

    @property
    def support(self):
        return (float(self.omega_min), float(self.omega_max))

    def _eval(self, w):
        inside = (w >= self.omega_min) & (w <= self.omega_max)
        with np.errstate(divide="ignore"):
            val = self.alpha / np.where(inside, w, 1.0) ** self.exponent
        return np.where(inside, val, 0.0)

    def scaled(self, factor):
        return PowerLaw(self.alpha * factor, self.exponent, self.omega_min, self.omega_max)


@dataclass(frozen=True)
class Tabulated(NoiseSpectrum):
    """Linear interpolation of ``(omega, S)`` points; zero outside the table."""

    omega: tuple
    values: tuple
    _w: np.ndarray = field(init=False, repr=False, compare=False)
    _s: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        w = np.asarray(self.omega, dtype=float)
        s = np.asarray(self.values, dtype=float)
        if w.ndim != 1 or w.shape != s.shape or w.size < 2:
            raise ValueError("tabulated spectrum needs at least two (omega, S) points")
        if np.any(np.diff(w) <= 0) or w[0] < 0:
            raise ValueError("tabulated frequencies must be non-negative and strictly increasing")
        if np.any(s < 0):
            raise ValueError("tabulated spectrum must be non-negative")
        object.__setattr__(self, "omega", tuple(w))
        object.__setattr__(self, "values", tuple(s))
        object.__setattr__(self, "_w", w)
        object.__setattr__(self, "_s", s)

    @classmethod
    def from_csv(cls, path) -> "Tabulated":
        """Two-column ``omega, S`` file; ``#`` comments and one header row are skipped."""
        with open(path) as fh:
            lines = [ln for ln in fh if ln.strip() and not ln.lstrip().startswith("#")]
        try:
            float(lines[0].split(",")[0])
        except (IndexError, ValueError):
            lines = lines[1:]
        data = np.loadtxt(lines, delimiter=",", ndmin=2)
        if data.shape[1] < 2:
            raise ValueError(f"{path}: expected two columns (omega, S)")
        return cls(tuple(data[:, 0]), tuple(data[:, 1]))

    @property
    def support(self):
        return (float(self._w[0]), float(self._w[-1]))

    def _eval(self, w):
        return np.interp(w, self._w, self._s, left=0.0, right=0.0)

    def scaled(self, factor):
        return Tabulated(self.omega, tuple(np.asarray(self.values) * factor))


def variance(spectrum: NoiseSpectrum) -> float:
    """``Delta_eta^2 = (1/pi) int_0^inf S dw``."""
    if isinstance(spectrum, WhiteCutoff):
        return spectrum.alpha * spectrum.omega_c / math.pi
    if isinstance(spectrum, Tabulated):
        return float(np.trapezoid(spectrum._s, spectrum._w)) / math.pi
    if isinstance(spectrum, PowerLaw):
        a, p, lo, hi = spectrum.alpha, spectrum.exponent, spectrum.omega_min, spectrum.omega_max
        if a == 0:
            return 0.0
        if math.isinf(hi) and p <= 1:
            raise DivergentSpectrumError(
                f"variance diverges at high frequency for exponent {p} <= 1; set omega_max")
        if lo == 0 and p >= 1:
            raise DivergentSpectrumError(
                f"variance diverges at low frequency for exponent {p} >= 1; set omega_min > 0")
        if p == 1:
            return a * math.log(hi / lo) / math.pi
        upper = 0.0 if math.isinf(hi) else hi ** (1 - p)
        lower = 0.0 if lo == 0 else lo ** (1 - p)
        return a * (upper - lower) / (1 - p) / math.pi
    raise TypeError(f"unsupported spectrum {type(spectrum).__name__}")


@dataclass(frozen=True)
class NoiseStrength:
    variance: float
    rms: float
    xi: float
    tau: float
    converges: bool  # False flags xi >= 1: series truncation not justified


def noise_strength(spectrum: NoiseSpectrum, tau: float) -> NoiseStrength:
    var = variance(spectrum)
    rms = math.sqrt(var)
    x = rms * tau / 2
    return NoiseStrength(var, rms, x, tau, x < 1)


def xi(spectrum: NoiseSpectrum, tau: float, warn: bool = True) -> float:
    """``xi = Delta_eta tau / 2``; warns when ``xi >= 1``."""
    ns = noise_strength(spectrum, tau)
    if warn and not ns.converges:
        warnings.warn(f"xi = {ns.xi:.3g} >= 1: weak-noise expansion not justified",
                      RuntimeWarning, stacklevel=2)
    return ns.xi


def scaled_to_rms(spectrum: NoiseSpectrum, rms: float) -> NoiseSpectrum:
    """Rescale the amplitude so that ``sqrt(variance) == rms``."""
    var = variance(spectrum)
    if var <= 0:
        raise ValueError("cannot rescale a spectrum with zero variance")
    return spectrum.scaled(rms ** 2 / var)


def autocorrelation(spectrum: NoiseSpectrum, lag) -> np.ndarray:
    """``g(lag) = (1/pi) int_0^inf S(w) cos(w lag) dw``.

    White-cutoff spectra use the closed form; other models are integrated
    numerically with a cosine-weighted rule.
    """
    lag = np.abs(np.asarray(lag, dtype=float))
    if isinstance(spectrum, WhiteCutoff):
        wc = spectrum.omega_c
        return spectrum.alpha * wc / math.pi * np.sinc(wc * lag / math.pi)
    if isinstance(spectrum, Tabulated):
        return _tabulated_autocorrelation(spectrum, lag)
    lo, hi = spectrum.support
    if math.isinf(hi):
        raise DivergentSpectrumError("autocorrelation needs a finite upper frequency")
    breaks = np.geomspace(max(lo, hi * 1e-12), hi, 40) if lo == 0 else np.geomspace(lo, hi, 40)
    if lo == 0:
        breaks = np.concatenate([[0.0], breaks])
    out = np.empty(lag.shape)
    for idx, d in np.ndenumerate(lag):
        total = 0.0
        for a, b in zip(breaks[:-1], breaks[1:]):
            if d == 0:
                val, _ = integrate.quad(spectrum._eval, a, b, limit=200)
            else:
                val, _ = integrate.quad(spectrum._eval, a, b, weight="cos", wvar=d, limit=200)
            total += val
        out[idx] = total / math.pi
    return out


def _tabulated_autocorrelation(spectrum: Tabulated, lag: np.ndarray) -> np.ndarray:
    # exact cosine transform of a piecewise-linear function
    w, s = spectrum._w, spectrum._s
    out = np.empty(lag.shape)
    for idx, d in np.ndenumerate(lag):
        if d == 0:
            out[idx] = np.trapezoid(s, w) / math.pi
            continue
        slope = np.diff(s) / np.diff(w)
        # int (s0 + m (x - w0)) cos(dx) dx = [S(x) sin(dx)/d + m cos(dx)/d^2]
        upper = s[1:] * np.sin(d * w[1:]) / d + slope * np.cos(d * w[1:]) / d ** 2
        lower = s[:-1] * np.sin(d * w[:-1]) / d + slope * np.cos(d * w[:-1]) / d ** 2
        out[idx] = np.sum(upper - lower) / math.pi
    return out
