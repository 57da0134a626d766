"""Piecewise-constant single-qubit control sequences.

A sequence is an ordered list of segments, each driving a constant-rate
rotation about one Cartesian axis (or idling). The noise-free propagator
``U_c(t)`` acts on the Bloch sphere through its SO(3) adjoint; the control
vector ``s1(t)`` is the image of z under the inverse of that rotation, i.e.
``U_c(t)^dag sigma_z U_c(t) = s1(t) . sigma``.

Everything here is evaluated analytically per segment; nothing is
integrated as an ODE.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "AXES", "ControlSegment", "ControlSequence", "TargetGate", "ParityCounts",
    "rotation_matrix", "cumulative_rotation", "control_vector", "s2", "s3",
    "s3_cross", "parity_counts", "target_gate", "preset", "PRESETS",
    "random_pi_sequence", "is_first_order_corrected",
]

AXES = ("i", "x", "y", "z")
_UNIT = {
    "x": np.array([1.0, 0.0, 0.0]),
    "y": np.array([0.0, 1.0, 0.0]),
    "z": np.array([0.0, 0.0, 1.0]),
}
_ZHAT = _UNIT["z"]

PAULI = {
    "i": np.eye(2, dtype=complex),
    "x": np.array([[0, 1], [1, 0]], dtype=complex),
    "y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "z": np.array([[1, 0], [0, -1]], dtype=complex),
}

_AXIS_ALIASES = {"i": "i", "I": "i", "identity": "i", "id": "i",
                 "x": "x", "X": "x", "y": "y", "Y": "y", "z": "z", "Z": "z"}


def _axis_tag(axis: str) -> str:
    try:
        return _AXIS_ALIASES[axis]
    except KeyError:
        raise ValueError(f"unknown axis {axis!r}; expected one of i, x, y, z") from None


@dataclass(frozen=True)
class ControlSegment:
    """Constant drive ``(rate/2) sigma_axis`` held for ``duration``.

    A negative rate is a rotation with a pi phase shift (e.g. X^-).
    """

    axis: str
    rate: float
    duration: float

    def __post_init__(self):
        object.__setattr__(self, "axis", _axis_tag(self.axis))
        object.__setattr__(self, "rate", float(self.rate))
        object.__setattr__(self, "duration", float(self.duration))
        if not (self.duration > 0.0 and math.isfinite(self.duration)):
            raise ValueError(f"segment duration must be positive and finite, got {self.duration}")
        if not math.isfinite(self.rate):
            raise ValueError("segment rate must be finite")
        if self.axis == "i" and self.rate != 0.0:
            raise ValueError("identity segments must have rate 0")

    @property
    def angle(self) -> float:
        """Signed net rotation angle."""
        return self.rate * self.duration

    @property
    def driven(self) -> bool:
        return self.axis != "i" and self.rate != 0.0

    def is_pi(self, tol: float = 1e-9) -> bool:
        return abs(abs(self.angle) - math.pi) <= tol * math.pi


@dataclass(frozen=True)
class ControlSequence:
    segments: tuple[ControlSegment, ...]
    name: str = ""
    boundaries: np.ndarray = field(init=False, repr=False, compare=False)
    _prefix: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        segs = tuple(s if isinstance(s, ControlSegment) else ControlSegment(**s)
                     for s in self.segments)
        if not segs:
            raise ValueError("a control sequence needs at least one segment")
        object.__setattr__(self, "segments", segs)
        bounds = np.concatenate([[0.0], np.cumsum([s.duration for s in segs])])
        if np.any(np.diff(bounds) <= 0):
            raise ValueError("segment boundaries must be strictly increasing")
        bounds.setflags(write=False)
        object.__setattr__(self, "boundaries", bounds)
        # rotation accumulated before each segment starts (R_c(t_{j-1}))
        prefix = np.empty((len(segs) + 1, 3, 3))
        prefix[0] = np.eye(3)
        for j, seg in enumerate(segs):
            prefix[j + 1] = rotation_matrix(seg.axis, seg.angle) @ prefix[j]
        prefix.setflags(write=False)
        object.__setattr__(self, "_prefix", prefix)

    @classmethod
    def from_list(cls, items: Iterable, name: str = "") -> "ControlSequence":
        """Build from ``(axis, rate, duration)`` tuples or dicts."""
        segs = []
        for it in items:
            if isinstance(it, ControlSegment):
                segs.append(it)
            elif isinstance(it, dict):
                segs.append(ControlSegment(it["axis"], it["rate"], it["duration"]))
            else:
                segs.append(ControlSegment(*it))
        return cls(tuple(segs), name=name)

    @property
    def tau(self) -> float:
        return float(self.boundaries[-1])

    @property
    def n_segments(self) -> int:
        return len(self.segments)

    @property
    def max_rate(self) -> float:
        return max(abs(s.rate) for s in self.segments)

    @property
    def min_duration(self) -> float:
        return min(s.duration for s in self.segments)

    def all_pi(self) -> bool:
        """True if every driven segment rotates through exactly +-pi."""
        return all(s.is_pi() for s in self.segments if s.driven)

    def segment_index(self, t) -> np.ndarray:
        """Index of the segment containing each time (right-closed, t=0 -> 0)."""
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.boundaries, t, side="left") - 1
        return np.clip(idx, 0, self.n_segments - 1)

    def to_dict(self) -> dict:
        return {"segments": [{"axis": s.axis, "rate": s.rate, "duration": s.duration}
                             for s in self.segments]}


def rotation_matrix(axis: str, angle: float) -> np.ndarray:
    """SO(3) matrix of ``exp(-i angle sigma_axis / 2)`` acting on Bloch vectors."""
    axis = _axis_tag(axis)
    if axis == "i" or angle == 0.0:
        return np.eye(3)
    c, s = math.cos(angle), math.sin(angle)
    if axis == "x":
        return np.array([[1, 0, 0], [0, c, -s], [0, s, c]], dtype=float)
    if axis == "y":
        return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]], dtype=float)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]], dtype=float)


def _check_times(seq: ControlSequence, t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    tol = 1e-12 * max(seq.tau, 1.0)
    if np.any(t < -tol) or np.any(t > seq.tau + tol):
        raise ValueError(f"time outside [0, {seq.tau}]")
    return np.clip(t, 0.0, seq.tau)


def cumulative_rotation(seq: ControlSequence, t: float) -> np.ndarray:
    """Adjoint rotation ``R_c(t)`` of the control propagator at time ``t``."""
    t = float(_check_times(seq, t))
    j = int(seq.segment_index(t))
    seg = seq.segments[j]
    partial = rotation_matrix(seg.axis, seg.rate * (t - seq.boundaries[j]))
    return partial @ seq._prefix[j]


def control_vector(seq: ControlSequence, t) -> np.ndarray:
    """Control vector ``s1(t)``; vectorised over ``t``, returns shape ``t.shape + (3,)``."""
    t = _check_times(seq, t)
    scalar = t.ndim == 0
    t = np.atleast_1d(t)
    idx = seq.segment_index(t)
    out = np.empty(t.shape + (3,))
    for j in np.unique(idx):
        sel = idx == j
        seg = seq.segments[j]
        theta = seg.rate * (t[sel] - seq.boundaries[j])
        # R_axis(-theta) z, written in the frame before the segment
        if seg.axis in ("i", "z"):
            local = np.broadcast_to(_ZHAT, theta.shape + (3,))
        else:
            ax = _UNIT[seg.axis]
            perp = np.cross(_ZHAT, ax)
            local = np.cos(theta)[:, None] * _ZHAT + np.sin(theta)[:, None] * perp
        out[sel] = local @ seq._prefix[j]  # == prefix^T applied to each local vector
    return out[0] if scalar else out


def s2(seq: ControlSequence, t1, t2) -> np.ndarray:
    """``s1(t2) x s1(t1)``."""
    return np.cross(control_vector(seq, t2), control_vector(seq, t1))


def s3_cross(seq: ControlSequence, t1, t2, t3) -> np.ndarray:
    """Third-order kernel from nested cross products."""
    a, b, c = control_vector(seq, t1), control_vector(seq, t2), control_vector(seq, t3)
    return np.cross(c, np.cross(b, a)) + np.cross(np.cross(c, b), a)


def s3(seq: ControlSequence, t1, t2, t3) -> np.ndarray:
    """Third-order kernel via the dot-product expansion."""
    a, b, c = control_vector(seq, t1), control_vector(seq, t2), control_vector(seq, t3)
    ca = np.sum(c * a, axis=-1)[..., None]
    cb = np.sum(c * b, axis=-1)[..., None]
    ab = np.sum(a * b, axis=-1)[..., None]
    return 2 * ca * b - cb * a - ab * c


@dataclass(frozen=True)
class ParityCounts:
    """Per-segment counts of earlier driven axes (strictly before segment j)."""

    xy: np.ndarray
    xz: np.ndarray
    yz: np.ndarray


def parity_counts(seq: ControlSequence) -> ParityCounts:
    k = seq.n_segments
    xy, xz, yz = np.zeros(k, int), np.zeros(k, int), np.zeros(k, int)
    nx = ny = nz = 0
    for j, seg in enumerate(seq.segments):
        xy[j], xz[j], yz[j] = nx + ny, nx + nz, ny + nz
        if seg.driven:
            nx += seg.axis == "x"
            ny += seg.axis == "y"
            nz += seg.axis == "z"
    return ParityCounts(xy, xz, yz)


@dataclass(frozen=True)
class TargetGate:
    """Ideal 2x2 unitary realised by the noise-free control."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        if m.shape != (2, 2):
            raise ValueError("target gate must be 2x2")
        if np.max(np.abs(m.conj().T @ m - np.eye(2))) > 1e-12:
            raise ValueError("target gate is not unitary")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @classmethod
    def from_axis_angle(cls, axis: str, angle: float) -> "TargetGate":
        axis = _axis_tag(axis)
        return cls(math.cos(angle / 2) * PAULI["i"] - 1j * math.sin(angle / 2) * PAULI[axis])

    def overlap(self, other) -> float:
        """``|Tr(Q^dag U)| / 2``."""
        u = other.matrix if isinstance(other, TargetGate) else np.asarray(other)
        return abs(np.trace(self.matrix.conj().T @ u)) / 2


def segment_unitary(seg: ControlSegment) -> np.ndarray:
    half = seg.angle / 2
    return math.cos(half) * PAULI["i"] - 1j * math.sin(half) * PAULI[seg.axis]


def target_gate(seq: ControlSequence) -> TargetGate:
    u = np.eye(2, dtype=complex)
    for seg in seq.segments:
        u = segment_unitary(seg) @ u
    return TargetGate(u)


# -- presets -----------------------------------------------------------------

def _first_order_integral(seq: ControlSequence) -> np.ndarray:
    """Exact ``int_0^tau s1(t) dt``, segment by segment."""
    total = np.zeros(3)
    for j, seg in enumerate(seq.segments):
        d = seg.duration
        if seg.axis in ("i", "z") or seg.rate == 0.0:
            local = _ZHAT * d
        else:
            th = seg.angle
            perp = np.cross(_ZHAT, _UNIT[seg.axis])
            local = _ZHAT * (math.sin(th) / seg.rate) + perp * ((1 - math.cos(th)) / seg.rate)
        total += local @ seq._prefix[j]
    return total


def is_first_order_corrected(seq: ControlSequence, tol: float = 1e-9) -> bool:
    """True when ``|int s1 dt| < tol * tau``."""
    return float(np.linalg.norm(_first_order_integral(seq))) < tol * seq.tau


def _x_blocks(rate: float, angles: Sequence[float], name: str) -> ControlSequence:
    return ControlSequence.from_list(
        [("x", math.copysign(rate, a), abs(a) / rate) for a in angles], name=name)


# Solutions of e^{i a} - e^{i(a-b)} = 1 with a - b + c = pi for X, X^-, X blocks.
CORRECTED_X_ANGLES = (math.pi / 3, -5 * math.pi / 3, 7 * math.pi / 3)
X_DCG_ANGLES = (5 * math.pi / 3, -7 * math.pi / 3, 5 * math.pi / 3)


def preset(name: str, rate: float = 1.0, tau: float | None = None):
    """Named gate constructions.

    Parameters
    ----------
    name : str
        One of ``PRESETS``.
    rate : float
        Drive rate ``Omega`` (rad/time); must be positive.
    tau : float, optional
        Total duration for ``free`` and ``hahn_echo``; defaults to ``pi/rate``
        for ``free`` and ``10 pi / rate`` for ``hahn_echo``.

    Returns
    -------
    (ControlSequence, TargetGate)
    """
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    if not rate > 0:
        raise ValueError("preset rate must be positive")
    t_pi = math.pi / rate
    if name == "free":
        seq = ControlSequence.from_list([("i", 0.0, tau if tau is not None else t_pi)], name=name)
    elif name.startswith("primitive_"):
        seq = ControlSequence.from_list([(name[-1], rate, t_pi)], name=name)
    elif name == "hahn_echo":
        tau = 10 * t_pi if tau is None else tau
        wait = (tau - t_pi) / 2
        if wait <= 0:
            raise ValueError("hahn_echo needs tau longer than the pi pulse")
        seq = ControlSequence.from_list(
            [("i", 0.0, wait), ("x", rate, t_pi), ("i", 0.0, wait)], name=name)
    elif name == "corrected_x":
        seq = _x_blocks(rate, CORRECTED_X_ANGLES, name)
    else:  # x_dcg
        seq = _x_blocks(rate, X_DCG_ANGLES, name)
        if not is_first_order_corrected(seq):
            raise ValueError(
                "x_dcg construction failed first-order validation "
                f"(|int s1 dt| = {np.linalg.norm(_first_order_integral(seq)):.3e})")
    return seq, target_gate(seq)


PRESETS = ("free", "primitive_x", "primitive_y", "primitive_z",
           "hahn_echo", "corrected_x", "x_dcg")


def random_pi_sequence(rng: np.random.Generator, n_segments: int | None = None,
                       rate_range=(0.5, 5.0), idle_range=(0.1, 2.0),
                       axes: str = "ixyz") -> ControlSequence:
    """Random sequence of +-pi rotations and idle periods (test helper)."""
    k = int(rng.integers(1, 7)) if n_segments is None else n_segments
    segs = []
    for _ in range(k):
        ax = str(rng.choice(list(axes)))
        if ax == "i":
            segs.append(ControlSegment("i", 0.0, float(rng.uniform(*idle_range))))
        else:
            r = float(rng.uniform(*rate_range)) * float(rng.choice([-1.0, 1.0]))
            segs.append(ControlSegment(ax, r, math.pi / abs(r)))
    return ControlSequence(tuple(segs), name="random")
