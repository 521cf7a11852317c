"""Normality of the axis curve gamma.

The primary criterion is geometric: on the Martinet surface with psi = dpsi = 0,
gamma is normal on [t1, t2] iff its planar projection is a geodesic of the
metric diag(1, phi).  The coordinate normal Hamiltonian flow gives an
independent (evidence-only) cross-check.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .srmodel import DomainError, ModelParams, phi, phi_partials, psi


@dataclass(frozen=True)
class Metric2:
    """Riemannian metric diag(1, phi(x1, x2)) on the plane."""

    params: ModelParams

    def g(self, x1, x2):
        x1 = np.asarray(x1, dtype=float)
        g22 = phi(x1, x2, self.params)
        one, zero = np.ones_like(g22), np.zeros_like(g22)
        return np.array([[one, zero], [zero, g22]])

    def g22(self, x1, x2):
        return phi(x1, x2, self.params)

    def g22_partials(self, x1, x2):
        return phi_partials(x1, x2, self.params)


class PhasePoint(NamedTuple):
    x: tuple
    p: tuple


def christoffel(x12, m: Metric2) -> np.ndarray:
    """Christoffel symbols ``G[k, i, j]`` (0-based indices) of diag(1, phi)."""
    x1, x2 = float(x12[0]), float(x12[1])
    if abs(x1) > 0.5 + 1e-12 or abs(x2) > 1 + 1e-12:
        raise DomainError(f"({x1}, {x2}) outside the plane domain")
    f = float(m.g22(x1, x2))
    f1, f2 = (float(v) for v in m.g22_partials(x1, x2))
    G = np.zeros((2, 2, 2))
    G[0, 1, 1] = -0.5 * f1
    G[1, 0, 1] = G[1, 1, 0] = 0.5 * f1 / f
    G[1, 1, 1] = 0.5 * f2 / f
    return G


def geodesic_defect_on_axis(t, m: Metric2):
    """max_k |G[k, 2, 2](0, t)|: the acceleration the line x1 = 0 would need."""
    t = np.asarray(t, dtype=float)
    zero = np.zeros_like(t)
    f = m.g22(zero, t)
    f1, f2 = m.g22_partials(zero, t)
    return np.maximum(np.abs(0.5 * f1), np.abs(0.5 * f2 / f))


def is_normal_interval(t1: float, t2: float, m: Metric2, tol: float = 1e-9, grid: int = 1000):
    """Return ``(normal, max_defect)`` for gamma restricted to [t1, t2]."""
    if t2 < t1:
        raise ValueError("need t1 <= t2")
    if t1 == t2:
        return True, 0.0
    if t1 <= -1 or t2 >= 1:
        raise ValueError("interval must lie inside (-1, 1)")
    d = float(np.max(geodesic_defect_on_axis(np.linspace(t1, t2, grid), m)))
    return d < tol, d


def hamiltonian(ph, p: ModelParams) -> float:
    """Normal Hamiltonian ``(p1^2 + (p2 + psi p3)^2 / phi) / 2``."""
    (x1, x2, _), (p1, p2, p3) = ph
    q = p2 + psi(x1, x2, p.b) * p3
    return 0.5 * (p1 * p1 + q * q / float(phi(x1, x2, p)))


def _ham_rhs(z, p: ModelParams):
    x1, x2, _, p1, p2, p3 = z
    b = p.b
    ps = x1 * x1 * x2**b
    dps1 = 2.0 * x1 * x2**b
    dps2 = b * x1 * x1 * x2 ** (b - 1) if b >= 1 else 0.0
    f = float(phi(x1, x2, p))
    f1, f2 = (float(v) for v in phi_partials(x1, x2, p))
    q = p2 + ps * p3
    v = q / f
    return np.array([
        p1,
        v,
        ps * v,
        -(v * dps1 * p3 - 0.5 * v * v * f1),
        -(v * dps2 * p3 - 0.5 * v * v * f2),
        0.0,
    ])


def ham_flow(ph0, T: float, step: float, p: ModelParams):
    """RK4 integration of Hamilton's equations; returns ``(times, z)`` with z rows (x1, x2, x3, p1, p2, p3)."""
    if step <= 0:
        raise ValueError("step must be positive")
    n = max(1, int(math.ceil(T / step - 1e-9)))
    h = T / n
    z = np.empty((n + 1, 6))
    z[0] = [*ph0[0], *ph0[1]]
    for k in range(n):
        zk = z[k]
        k1 = _ham_rhs(zk, p)
        k2 = _ham_rhs(zk + 0.5 * h * k1, p)
        k3 = _ham_rhs(zk + 0.5 * h * k2, p)
        k4 = _ham_rhs(zk + h * k3, p)
        z[k + 1] = zk + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if abs(z[k + 1, 0]) > 0.5 or abs(z[k + 1, 1]) >= 1.0:
            raise DomainError(f"Hamiltonian flow leaves M at t={(k + 1) * h:.6g}")
    return np.linspace(0.0, T, n + 1), z


def hamiltonian_drift(times, z, p: ModelParams) -> float:
    """Max relative deviation of H along a phase path, per unit time."""
    H = np.array([hamiltonian((row[:3], row[3:]), p) for row in z])
    T = times[-1] - times[0]
    return float(np.max(np.abs(H - H[0])) / max(abs(H[0]), 1e-300) / T)


def normal_lift_residual(t1: float, t2: float, p0, p: ModelParams, step: float = 1e-4) -> float:
    """Max distance between the normal flow from (gamma(t1), p0) and gamma on [t1, t2].

    The flow runs at constant speed sqrt(2H), so it is compared with gamma
    traversed at that speed.
    """
    if t2 <= t1:
        return 0.0
    x0 = (0.0, t1, 0.0)
    H0 = hamiltonian((x0, p0), p)
    speed = math.sqrt(2.0 * H0)
    if speed == 0.0:
        return t2 - t1
    T = (t2 - t1) / speed
    try:
        times, z = ham_flow((x0, tuple(p0)), T, step, p)
    except DomainError:
        return math.inf
    ref = np.column_stack([np.zeros_like(times), t1 + speed * times, np.zeros_like(times)])
    return float(np.max(np.linalg.norm(z[:, :3] - ref, axis=1)))


def best_lift_residual(t1: float, t2: float, p: ModelParams, step: float = 1e-3) -> tuple[float, tuple]:
    """Minimum of :func:`normal_lift_residual` over a coarse covector grid."""
    best = (math.inf, None)
    for p1 in (-0.5, 0.0, 0.5):
        for p2 in (0.5, 1.0, 2.0):
            for p3 in (-1.0, 0.0, 1.0):
                r = normal_lift_residual(t1, t2, (p1, p2, p3), p, step)
                if r < best[0]:
                    best = (r, (p1, p2, p3))
    return best


def write_phase_csv(times, z, fname) -> None:
    with open(fname, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["t", "x1", "x2", "x3", "p1", "p2", "p3"])
        for t, row in zip(times, z):
            wr.writerow([f"{v:.17g}" for v in (t, *row)])
