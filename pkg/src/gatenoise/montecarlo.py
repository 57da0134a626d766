"""Monte Carlo reference: noisy propagation under synthesised Gaussian noise.

Trajectories are sums of cosines with random phases,

    eta(t) = sum_k A_k cos(w_k t + phi_k),   A_k = sqrt(2 S(w_k) dw_k / pi),

whose ensemble variance is ``(1/pi) sum S dw``, the variance of ``S`` under
the package convention. Unitaries are stored as quaternions
``U = w - i v.sigma`` and every propagation step is an exact SU(2) exponential.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .control import ControlSequence, TargetGate, _UNIT, target_gate
from .spectra import NoiseSpectrum, PowerLaw, variance

__all__ = [
    "NoiseTrajectory", "EnsembleResult", "ErrorVector", "synthesize_trajectory",
    "propagate", "entanglement_fidelity", "error_vector_of", "ensemble_fidelity",
    "max_step", "frequency_components", "unitary_from_quaternion",
    "quaternion_from_unitary", "BLOCK",
]

K_DEFAULT = 1024
BLOCK = 256   # trajectories per work item; fixed so results do not depend on workers
_PAULI = np.array([[[0, 1], [1, 0]], [[0, -1j], [1j, 0]], [[1, 0], [0, -1]]], dtype=complex)


def frequency_components(spectrum: NoiseSpectrum, k: int = K_DEFAULT):
    """Frequencies ``w_k`` and amplitudes ``A_k`` covering the spectrum support.

    Linear bins for bounded white/tabulated support; log bins for power laws
    whose support spans more than two decades.
    """
    if k < 512:
        raise ValueError("at least 512 frequency components are required")
    lo, hi = spectrum.support
    if not math.isfinite(hi):
        raise ValueError("trajectory synthesis needs a band-limited spectrum (finite omega_max)")
    if not hi > lo:
        raise ValueError("spectrum has zero-width support")
    if isinstance(spectrum, PowerLaw) and lo > 0 and hi / lo > 100:
        edges = np.geomspace(lo, hi, k + 1)
        w = np.sqrt(edges[1:] * edges[:-1])
    else:
        edges = np.linspace(lo, hi, k + 1)
        w = 0.5 * (edges[1:] + edges[:-1])
    dw = np.diff(edges)
    amp = np.sqrt(2 * spectrum(w) * dw / math.pi)
    return w, amp


@dataclass(frozen=True)
class NoiseTrajectory:
    dt: float
    samples: np.ndarray   # eta at t_m = m dt (last node clipped to tau)
    seed: tuple
    spectrum: NoiseSpectrum = field(repr=False)
    omega: np.ndarray = field(repr=False)
    amplitude: np.ndarray = field(repr=False)
    phase: np.ndarray = field(repr=False)

    def __call__(self, t) -> np.ndarray:
        """``eta(t)`` evaluated exactly from the stored components."""
        t = np.asarray(t, dtype=float)
        return _eta(self.omega, self.amplitude, self.phase[None, :], t.ravel()[None, :])[0].reshape(t.shape)


def _eta(w, amp, phases, t):
    """``eta`` for phase rows ``phases`` (B, K) at times ``t`` (1, T) or (T,)."""
    t = np.asarray(t).ravel()
    c = amp * np.cos(phases)
    s = amp * np.sin(phases)
    arg = np.outer(w, t)
    return c @ np.cos(arg) - s @ np.sin(arg)


def _rng(index: int, master_seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=[int(index), int(master_seed)]))


def _phases(index: int, master_seed: int, k: int) -> np.ndarray:
    return _rng(index, master_seed).uniform(0.0, 2 * math.pi, k)


def synthesize_trajectory(spectrum: NoiseSpectrum, tau: float, dt: float, seed,
                          k: int = K_DEFAULT, segment_min: float | None = None) -> NoiseTrajectory:
    """One noise realisation sampled at ``ceil(tau/dt) + 1`` points.

    ``seed`` is an int or an ``(index, master_seed)`` pair; the pair form is
    what :func:`ensemble_fidelity` uses for trajectory ``index``.
    """
    w, amp = frequency_components(spectrum, k)
    limit = max_step(spectrum, segment_min if segment_min is not None else tau)
    if dt > limit * (1 + 1e-12):
        raise ValueError(f"dt = {dt:.3g} exceeds the resolution limit {limit:.3g}")
    index, master = (seed if isinstance(seed, tuple) else (0, seed))
    ph = _phases(index, master, k)
    n = int(math.ceil(tau / dt - 1e-12))
    t = np.minimum(np.arange(n + 1) * dt, tau)
    samples = _eta(w, amp, ph[None, :], t)[0]
    return NoiseTrajectory(dt, samples, (int(index), int(master)), spectrum, w, amp, ph)


def max_step(spectrum: NoiseSpectrum, segment_min: float) -> float:
    """``min(pi / (10 w_max), segment_min / 10)``."""
    hi = spectrum.support[1]
    return min(math.pi / (10 * hi), segment_min / 10)


# -- SU(2) as quaternions: U = w - i v.sigma ---------------------------------

def _qmul(w1, v1, w2, v2):
    """Quaternion of ``U1 U2``."""
    w = w1 * w2 - np.sum(v1 * v2, axis=-1)
    v = w1[..., None] * v2 + w2[..., None] * v1 + np.cross(v1, v2)
    return w, v


def _tree_product(w, v):
    """Time-ordered product along axis 1 (later steps to the left), pairwise."""
    while w.shape[1] > 1:
        if w.shape[1] % 2:
            one_w = np.ones(w.shape[:1] + (1,))
            zero_v = np.zeros(v.shape[:1] + (1, 3))
            w = np.concatenate([w, one_w], axis=1)
            v = np.concatenate([v, zero_v], axis=1)
        w, v = _qmul(w[:, 1::2], v[:, 1::2], w[:, 0::2], v[:, 0::2])
    return w[:, 0], v[:, 0]


def _step_plan(seq: ControlSequence, dt: float):
    """Sub-step midpoints, lengths and segment index, aligned to boundaries."""
    mids, hs, seg_idx = [], [], []
    b = seq.boundaries
    for j, seg in enumerate(seq.segments):
        n = max(1, int(math.ceil(seg.duration / dt - 1e-9)))
        edges = np.linspace(b[j], b[j + 1], n + 1)
        mids.append(0.5 * (edges[1:] + edges[:-1]))
        hs.append(np.diff(edges))
        seg_idx.append(np.full(n, j))
    return np.concatenate(mids), np.concatenate(hs), np.concatenate(seg_idx)


def _propagate_batch(seq: ControlSequence, eta_mid: np.ndarray, plan):
    """Quaternions of ``U(tau)`` for rows of midpoint noise samples (B, steps)."""
    _, hs, seg_idx = plan
    rates = np.array([s.rate for s in seq.segments])[seg_idx]
    axes = np.array([_UNIT[s.axis] if s.axis != "i" else np.zeros(3)
                     for s in seq.segments])[seg_idx]
    b = eta_mid[..., None] * _UNIT["z"] + (rates[:, None] * axes)[None]
    norm = np.linalg.norm(b, axis=-1)
    half = 0.5 * hs * norm
    safe = np.where(norm > 0, norm, 1.0)
    sinc = np.where(norm > 0, np.sin(half) / safe, 0.5 * hs)
    return _tree_product(np.cos(half), b * sinc[..., None])


def unitary_from_quaternion(w: float, v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return w * np.eye(2) - 1j * np.einsum("k,kab->ab", v, _PAULI)


def quaternion_from_unitary(u: np.ndarray, tol: float = 1e-8):
    """``(w, v)`` with ``u = e^{i phi} (w - i v.sigma)``; global phase removed."""
    u = np.asarray(u, dtype=complex)
    defect = np.max(np.abs(u.conj().T @ u - np.eye(2)))
    if defect > tol:
        raise ValueError(f"matrix is not unitary (defect {defect:.2e})")
    det = np.linalg.det(u)
    su = u / np.sqrt(det)
    w = 0.5 * np.trace(su).real
    v = np.array([0.5j * np.trace(su @ p) for p in _PAULI]).real
    return w, v


def propagate(seq: ControlSequence, trajectory: NoiseTrajectory, dt: float | None = None) -> np.ndarray:
    """Noisy propagator ``U(tau)`` as a 2x2 matrix (midpoint noise sampling)."""
    dt = trajectory.dt if dt is None else dt
    plan = _step_plan(seq, dt)
    eta_mid = trajectory(plan[0])[None, :]
    w, v = _propagate_batch(seq, eta_mid, plan)
    return unitary_from_quaternion(w[0], v[0])


def entanglement_fidelity(u: np.ndarray, q) -> float:
    """``|Tr(Q^dagger U)|^2 / 4``."""
    qm = q.matrix if isinstance(q, TargetGate) else np.asarray(q, dtype=complex)
    for m in (u, qm):
        defect = np.max(np.abs(np.asarray(m).conj().T @ m - np.eye(2)))
        if defect > 1e-8:
            raise ValueError(f"matrix is not unitary (defect {defect:.2e})")
    return float(abs(np.trace(qm.conj().T @ u)) ** 2 / 4)


@dataclass(frozen=True)
class ErrorVector:
    a: np.ndarray
    at_branch_boundary: bool


def _error_vectors(wq, vq, wu, vu):
    """Error vectors of ``Q^dagger U`` for quaternion arrays (sign fixed so w >= 0)."""
    # Q^dagger has quaternion (wq, -vq)
    w, v = _qmul(np.asarray(wq, float), -np.asarray(vq, float), wu, vu)
    sign = np.where(w < 0, -1.0, 1.0)
    w, v = w * sign, v * sign[..., None]
    vn = np.linalg.norm(v, axis=-1)
    ang = np.arctan2(vn, w)
    with np.errstate(invalid="ignore", divide="ignore"):
        a = np.where(vn[..., None] > 0, v * (ang / np.where(vn > 0, vn, 1.0))[..., None], v)
    return a, np.abs(ang - math.pi / 2) < 1e-9


def error_vector_of(u: np.ndarray, q) -> ErrorVector:
    """``a`` with ``Q^dagger U = exp(-i a.sigma)``, ``|a|`` in ``[0, pi/2]``."""
    qm = q.matrix if isinstance(q, TargetGate) else np.asarray(q, dtype=complex)
    wq, vq = quaternion_from_unitary(qm)
    wu, vu = quaternion_from_unitary(u)
    a, flag = _error_vectors(np.array(wq), np.array(vq), np.array(wu), np.array(vu))
    return ErrorVector(np.asarray(a), bool(flag))


@dataclass(frozen=True)
class EnsembleResult:
    n_traj: int
    mean_fidelity: float
    stderr: float
    master_seed: int
    dt: float
    fidelities: np.ndarray | None = field(default=None, repr=False)
    mean_abs_a: float = 0.0
    a_moment2: np.ndarray = field(default_factory=lambda: np.zeros(3), repr=False)   # <a_i^2>
    a_moment4: np.ndarray = field(default_factory=lambda: np.zeros(3), repr=False)   # <a_i^4>
    branch_flags: int = 0

    @property
    def mean_error(self) -> float:
        return 1.0 - self.mean_fidelity

    @property
    def kurtosis_ratio(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return self.a_moment4 / self.a_moment2 ** 2

    def to_dict(self) -> dict:
        return {"n_traj": self.n_traj, "mean_fidelity": self.mean_fidelity,
                "mean_error": self.mean_error, "stderr": self.stderr,
                "master_seed": self.master_seed, "dt": self.dt,
                "mean_abs_a": self.mean_abs_a, "a_moment2": self.a_moment2.tolist(),
                "a_moment4": self.a_moment4.tolist(), "branch_flags": self.branch_flags}


def _pairwise_sum(x: np.ndarray) -> np.ndarray:
    """Fixed-topology pairwise sum along axis 0."""
    x = np.asarray(x, dtype=float)
    while x.shape[0] > 1:
        if x.shape[0] % 2:
            x = np.concatenate([x, np.zeros((1,) + x.shape[1:])])
        x = x[0::2] + x[1::2]
    return x[0]


def ensemble_fidelity(seq: ControlSequence, spectrum: NoiseSpectrum, n_traj: int,
                      dt: float | None = None, master_seed: int = 0, target=None,
                      workers: int = 1, retain: bool = False, k: int = K_DEFAULT) -> EnsembleResult:
    """Mean entanglement fidelity over ``n_traj`` noise trajectories.

    Trajectory ``i`` draws its phases from a counter-based Philox stream keyed by
    ``(i, master_seed)``; work is split into fixed blocks of ``BLOCK``
    trajectories and reduced pairwise in index order, so the result is the same
    for any ``workers``.
    """
    if n_traj < 2:
        raise ValueError("need at least two trajectories")
    q = target_gate(seq) if target is None else target
    qm = q.matrix if isinstance(q, TargetGate) else np.asarray(q, dtype=complex)
    wq, vq = quaternion_from_unitary(qm)
    limit = max_step(spectrum, seq.min_duration)
    dt = limit if dt is None else float(dt)
    if dt > limit * (1 + 1e-12):
        raise ValueError(f"dt = {dt:.3g} exceeds the resolution limit {limit:.3g}")
    plan = _step_plan(seq, dt)
    if variance(spectrum) == 0:
        w, amp = np.zeros(0), np.zeros(0)
    else:
        w, amp = frequency_components(spectrum, k)
    ct, st = np.cos(np.outer(w, plan[0])), np.sin(np.outer(w, plan[0]))

    def block(start):
        idx = range(start, min(start + BLOCK, n_traj))
        if len(w):
            ph = np.stack([_phases(i, master_seed, k) for i in idx])
            eta = (amp * np.cos(ph)) @ ct - (amp * np.sin(ph)) @ st
        else:
            eta = np.zeros((len(idx), len(plan[0])))
        wu, vu = _propagate_batch(seq, eta, plan)
        fid = (wq * wu + vu @ vq) ** 2
        a, flag = _error_vectors(np.full(len(idx), wq), np.broadcast_to(vq, vu.shape), wu, vu)
        return fid, a, flag

    starts = list(range(0, n_traj, BLOCK))
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(block, starts))
    else:
        parts = [block(s) for s in starts]
    fid = np.concatenate([p[0] for p in parts])
    a = np.concatenate([p[1] for p in parts])
    flags = int(sum(int(np.sum(p[2])) for p in parts))
    fid = np.minimum(fid, 1.0)  # rounding can push |w| a hair above 1
    mean = float(_pairwise_sum(fid)) / n_traj
    var = float(_pairwise_sum((fid - mean) ** 2)) / (n_traj - 1)
    absa = np.linalg.norm(a, axis=-1)
    return EnsembleResult(
        n_traj, mean, math.sqrt(var / n_traj), int(master_seed), dt,
        fid.copy() if retain else None,
        float(_pairwise_sum(absa)) / n_traj,
        _pairwise_sum(a ** 2) / n_traj,
        _pairwise_sum(a ** 4) / n_traj,
        flags)
