"""Built-in invariant suite run by ``gatenoise validate``.

Each check is cheap (the whole suite runs in about a minute) and compares
two independent routes or an analytic limit.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import control, filters, fidelity, montecarlo
from .quadrature import TimeGrid, trapezoid_weights
from .spectra import PowerLaw, WhiteCutoff, noise_strength, scaled_to_rms


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float

    def to_dict(self) -> dict:
        # timings are left out so reports are reproducible byte for byte
        return {"name": self.name, "passed": self.passed, "detail": self.detail}


def _rel(a, b) -> float:
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b)) / max(float(np.max(np.abs(b))), 1e-300))


def check_y1_routes(n_seq: int = 20, seed: int = 0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_seq):
        seq = control.random_pi_sequence(rng)
        w = np.geomspace(1e-2, 50, 50) / seq.tau
        a = filters.y1_closed_form(seq, w)
        b = filters.y1_numeric(seq, w)
        err = np.linalg.norm(a - b, axis=1) / np.linalg.norm(b, axis=1)
        worst = max(worst, float(err.max()))
    return worst <= 1e-8, f"max relative difference {worst:.2e} over {n_seq} sequences"


def check_free_evolution():
    seq, _ = control.preset("free", tau=1.0)
    w = np.geomspace(1e-3, 1e3, 200)
    err_f1 = float(np.max(np.abs(filters.f1(seq, w).total - 4 * np.sin(w / 2) ** 2)))
    spec = WhiteCutoff(0.1, 1e4)
    c = fidelity.chi(seq, spec)
    rel = abs(c / 0.05 - 1)
    return err_f1 < 1e-10 and rel < 1e-3, f"F1 abs err {err_f1:.1e}; chi rel err {rel:.1e}"


def check_echo_limit():
    seq, _ = control.preset("hahn_echo", rate=1e4 * 2 * math.pi, tau=1.0)
    w = np.geomspace(1e-2, 10, 200)
    r = filters.f1(seq, w).total / (16 * np.sin(w / 4) ** 4)
    dev = float(np.max(np.abs(r - 1)))
    return dev < 0.01, f"max relative deviation {dev:.1e}"


def check_rolloff():
    prim, _ = control.preset("primitive_x")
    corr, _ = control.preset("corrected_x")
    sp = filters.low_frequency_slope(prim)
    sc = filters.low_frequency_slope(corr)
    resid = float(np.linalg.norm(control._first_order_integral(corr)))
    ok = abs(sp - 2) <= 0.1 and sc >= 3.5 and resid < 1e-9
    return ok, f"slopes {sp:.3f} / {sc:.3f}; |int s1| = {resid:.1e}"


def check_moment_routes():
    seq, _ = control.preset("primitive_x")
    spec = WhiteCutoff(0.01, 3.0)
    a = fidelity.moment_a1(seq, spec)
    b = fidelity.moment_a1_time_domain(seq, spec)
    rel = _rel(a, b)
    c = fidelity.chi(seq, spec)
    defn = abs(c - 2 * np.trace(a)) / c
    return rel < 1e-3 and defn < 1e-10, f"frequency vs time domain {rel:.1e}; chi vs 2 tr {defn:.1e}"


def check_gaussian_factorisation():
    worst = 0.0
    for name in ("primitive_x", "corrected_x", "hahn_echo"):
        seq, _ = control.preset(name)
        spec = WhiteCutoff(0.01, 5.0)
        direct = fidelity.a1sq_a1sq_from_f2c(seq, spec)
        m = fidelity.MomentSet(fidelity.moment_a1(seq, spec, rtol=1e-11))
        worst = max(worst, _rel(direct, m.gaussian_a1sq_a1sq()))
    return worst < 1e-6, f"max relative difference {worst:.1e}"


def check_bounds(n_seq: int = 4, seed: int = 3):
    rng = np.random.default_rng(seed)
    worst = {}
    for _ in range(n_seq):
        seq = control.random_pi_sequence(rng, n_segments=int(rng.integers(1, 4)))
        tau = seq.tau
        grid = filters.compute_f2_grid(seq, 1e-4 / tau, 10 / tau, 17, points_per_segment=16)
        for spec in (WhiteCutoff(1.0, 1.0 / tau), PowerLaw(1.0, 2.0, 0.01 / tau, 10 / tau)):
            spec = scaled_to_rms(spec, 2 * 0.5 / tau)
            m = fidelity.fourth_order_moments(seq, spec, f2grid=grid)
            for k, v in m.bound_ratios(noise_strength(spec, tau).xi).items():
                worst[k] = max(worst.get(k, 0.0), v)
    ok = all(v <= 1.05 for v in worst.values())
    return ok, "worst ratio to bound: " + ", ".join(f"{k} {v:.3f}" for k, v in sorted(worst.items()))


def check_fourth_order_free():
    seq, _ = control.preset("free", tau=1.0)
    spec = WhiteCutoff(0.2, 5.0)
    rep = fidelity.fidelity_fourth_order(seq, spec)
    c = rep.chi
    expected = 1 - c / 2 + c * c / 4
    rel = abs(rep.fidelity_4th - expected) / (c * c / 4)
    return rel < 1e-3, f"chi^2 term relative error {rel:.1e}"


def check_f2_oracle():
    seq = control.ControlSequence.from_list([("x", 1.0, math.pi), ("y", 2.0, math.pi / 2)])
    grid = TimeGrid.for_boundaries(seq.boundaries, 12)
    t = grid.nodes
    s = control.control_vector(seq, t)
    tw = trapezoid_weights(t)
    inner = np.zeros((len(t), len(t)))
    for m in range(1, len(t)):
        inner[m, : m + 1] = trapezoid_weights(t[: m + 1])
    w2 = tw[:, None] * inner
    cr = np.cross(s[:, None, :], s[None, :, :])
    om, omp = 0.8, 1.7
    total = np.zeros(3, complex)
    for a in (om, -om):
        for b in (omp, -omp):
            e = lambda g: np.exp(1j * g * t)
            y2 = 0
            for g4, g3, g2, g1 in ((b, -b, a, -a), (b, a, -b, -a), (a, b, -b, -a)):
                ph = np.einsum("p,q,r,s->pqrs", e(g4), e(g3), e(g2), e(g1))
                y2 = y2 + np.einsum("pq,rs,pqrs,pqi,rsi->i", w2, w2, ph, cr, cr)
            total += a * a * b * b / 4 * y2
    pipe = filters.f2_a(seq, om, omp, grid)
    rel = _rel(pipe, total.real)
    return rel < 1e-3, f"F2a pipeline vs dense 4-D sum: {rel:.1e}"


def check_mc_free():
    seq, _ = control.preset("free", tau=1.0)
    spec = WhiteCutoff(0.2, 50.0)
    res = montecarlo.ensemble_fidelity(seq, spec, 2000, master_seed=1)
    c = fidelity.chi(seq, spec)
    target = 0.5 * (math.exp(-c) + 1)
    z = abs(res.mean_fidelity - target) / res.stderr
    again = montecarlo.ensemble_fidelity(seq, spec, 2000, master_seed=1, workers=2)
    same = again.mean_fidelity == res.mean_fidelity and again.stderr == res.stderr
    # 3 sigma keeps a routine self-check from failing 5% of the time by chance
    return z <= 3 and same, f"{z:.2f} standard errors from analytic; deterministic {same}"


def check_mc_step_convergence():
    seq, _ = control.preset("primitive_x")
    spec = WhiteCutoff(0.01, 3.0)
    a = montecarlo.ensemble_fidelity(seq, spec, 32, dt=0.01, master_seed=2).mean_fidelity
    b = montecarlo.ensemble_fidelity(seq, spec, 32, dt=0.005, master_seed=2).mean_fidelity
    return abs(a - b) < 1e-6, f"dt halving changes fidelity by {abs(a - b):.1e}"


CHECKS = {
    "y1_closed_form_vs_numeric": check_y1_routes,
    "free_evolution_chain": check_free_evolution,
    "echo_limit": check_echo_limit,
    "dcg_rolloff": check_rolloff,
    "moment_dual_route": check_moment_routes,
    "gaussian_factorisation": check_gaussian_factorisation,
    "moment_bounds": check_bounds,
    "fourth_order_free_evolution": check_fourth_order_free,
    "f2_dense_oracle": check_f2_oracle,
    "mc_free_evolution": check_mc_free,
    "mc_step_convergence": check_mc_step_convergence,
}


def run_suite(names=None) -> list[CheckResult]:
    out = []
    for name in names or CHECKS:
        t0 = time.perf_counter()
        try:
            ok, detail = CHECKS[name]()
        except Exception as exc:  # a crashing check is a failed check
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        out.append(CheckResult(name, bool(ok), detail, time.perf_counter() - t0))
    return out
