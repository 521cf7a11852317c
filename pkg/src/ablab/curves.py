"""Horizontal curves: control -> trajectory, lengths, reparameterisation,
the functionals J, beta, P and the x3 correction loop.

A :class:`HorizontalPath` is stored as a start point plus per-segment
increments ``dx`` and durations ``dt``.  Within a segment the planar
projection moves along a straight line; only the time law differs between
parameterisations (``generic``: constant coordinate speed, ``arclength``: unit
sub-Riemannian speed).  Keeping increments instead of absolute nodes lets a
correction loop of size 1e-17 live at x2 = 0.9 without being rounded away.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .srmodel import DomainError, ModelParams, check_domain, phi, phi_minus_one, psi

STATIONARY_SPEED = 1e-10
GAUSS_POINTS = 8


class CorrectionError(ValueError):
    """The x3 defect cannot be cancelled by a loop that stays inside M."""


@dataclass(frozen=True, eq=False)
class ControlGrid:
    """Controls on a time grid given by interval durations ``dt``.

    ``pc``: one (u1, u2) per interval; ``pl``: one per node, linear in between.
    """

    dt: np.ndarray
    u1: np.ndarray
    u2: np.ndarray
    scheme: str = "pc"

    def __post_init__(self):
        dt = np.atleast_1d(np.asarray(self.dt, dtype=float))
        u1 = np.atleast_1d(np.asarray(self.u1, dtype=float))
        u2 = np.atleast_1d(np.asarray(self.u2, dtype=float))
        if self.scheme not in ("pc", "pl"):
            raise ValueError(f"unknown control scheme {self.scheme!r}")
        n = len(dt)
        if n < 1 or np.any(dt <= 0) or not np.all(np.isfinite(dt)):
            raise ValueError("need at least one interval with positive finite durations")
        want = n if self.scheme == "pc" else n + 1
        if len(u1) != want or len(u2) != want:
            raise ValueError(f"{self.scheme} controls need {want} samples, got {len(u1)}, {len(u2)}")
        object.__setattr__(self, "dt", dt)
        object.__setattr__(self, "u1", u1)
        object.__setattr__(self, "u2", u2)

    @classmethod
    def from_times(cls, times, u1, u2, scheme="pc") -> "ControlGrid":
        times = np.asarray(times, dtype=float)
        if times[0] != 0.0 or np.any(np.diff(times) <= 0):
            raise ValueError("times must start at 0 and increase strictly")
        return cls(np.diff(times), u1, u2, scheme)

    @classmethod
    def uniform(cls, tau: float, u1, u2, scheme="pc") -> "ControlGrid":
        u1 = np.atleast_1d(np.asarray(u1, dtype=float))
        n = len(u1) if scheme == "pc" else len(u1) - 1
        return cls(np.full(n, tau / n), u1, u2, scheme)

    @property
    def n(self) -> int:
        return len(self.dt)

    @property
    def times(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum(self.dt)])

    @property
    def tau(self) -> float:
        return math.fsum(self.dt)

    def to_pc(self, refine: int = 8) -> "ControlGrid":
        """Piecewise-constant control sampling a ``pl`` control at sub-interval midpoints."""
        if self.scheme == "pc":
            return self
        s = (np.arange(refine) + 0.5) / refine
        u1 = (self.u1[:-1, None] * (1 - s) + self.u1[1:, None] * s).ravel()
        u2 = (self.u2[:-1, None] * (1 - s) + self.u2[1:, None] * s).ravel()
        dt = np.repeat(self.dt / refine, refine)
        return ControlGrid(dt, u1, u2, "pc")


@dataclass(frozen=True, eq=False)
class HorizontalPath:
    start: np.ndarray
    dt: np.ndarray
    dx: np.ndarray
    parameterization: str = "generic"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "start", np.asarray(self.start, dtype=float).reshape(3))
        object.__setattr__(self, "dt", np.atleast_1d(np.asarray(self.dt, dtype=float)))
        object.__setattr__(self, "dx", np.asarray(self.dx, dtype=float).reshape(-1, 3))
        if self.parameterization not in ("generic", "arclength"):
            raise ValueError(f"unknown parameterization {self.parameterization!r}")
        if len(self.dt) != len(self.dx):
            raise ValueError("dt and dx must describe the same segments")

    @property
    def n(self) -> int:
        return len(self.dt)

    @property
    def tau(self) -> float:
        return math.fsum(self.dt)

    @property
    def times(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum(self.dt)])

    @property
    def states(self) -> np.ndarray:
        return self.start + np.concatenate([np.zeros((1, 3)), np.cumsum(self.dx, axis=0)])

    @property
    def end(self) -> np.ndarray:
        return np.array([math.fsum([self.start[i], *self.dx[:, i]]) for i in range(3)])

    def node_controls(self, p: ModelParams) -> np.ndarray:
        """Control (u1, u2) at the left node of every segment."""
        if self.parameterization == "generic":
            return self.dx[:, :2] / self.dt[:, None]
        x = self.states[:-1]
        speed = np.sqrt(self.dx[:, 0] ** 2 + phi(x[:, 0], x[:, 1], p) * self.dx[:, 1] ** 2)
        return self.dx[:, :2] / speed[:, None]

    def concat(self, other: "HorizontalPath") -> "HorizontalPath":
        if self.parameterization != other.parameterization:
            raise ValueError("cannot concatenate paths with different parameterizations")
        return HorizontalPath(
            self.start,
            np.concatenate([self.dt, other.dt]),
            np.concatenate([self.dx, other.dx]),
            self.parameterization,
            dict(self.meta),
        )


class EndpointDefect(NamedTuple):
    d1: float
    d2: float
    d3: float

    def max_abs(self) -> float:
        return max(abs(self.d1), abs(self.d2), abs(self.d3))


# ----------------------------------------------------------------------------
# segment quadrature


def _gauss(n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def _n_gauss(p: ModelParams) -> int:
    # exact for the degree-(b+2) polynomial psi along a straight segment
    return max(GAUSS_POINTS, p.b // 2 + 2)


def _segment_points(path: HorizontalPath, lam: np.ndarray):
    x = path.states[:-1]
    x1 = x[:, 0, None] + lam[None, :] * path.dx[:, 0, None]
    x2 = x[:, 1, None] + lam[None, :] * path.dx[:, 1, None]
    return x1, x2


def segment_lengths(path: HorizontalPath, p: ModelParams) -> np.ndarray:
    lam, w = _gauss(_n_gauss(p))
    x1, x2 = _segment_points(path, lam)
    d1, d2 = path.dx[:, 0, None], path.dx[:, 1, None]
    return np.sqrt(d1**2 + phi(x1, x2, p) * d2**2) @ w


def segment_excess(path: HorizontalPath, p: ModelParams) -> np.ndarray:
    """Per-segment ``L_k - dx2_k`` without cancellation.

    For upward segments ``sqrt(d1^2 + phi d2^2) - d2`` is rewritten as
    ``(d1^2 + (phi - 1) d2^2) / (sqrt(d1^2 + phi d2^2) + d2)``.
    """
    lam, w = _gauss(_n_gauss(p))
    x1, x2 = _segment_points(path, lam)
    d1, d2 = path.dx[:, 0, None], path.dx[:, 1, None]
    root = np.sqrt(d1**2 + phi(x1, x2, p) * d2**2)
    up = np.broadcast_to(d2 > 0, root.shape)
    num = d1**2 + phi_minus_one(x1, x2, p) * d2**2
    with np.errstate(divide="ignore", invalid="ignore"):
        stable = num / (root + d2)
    integrand = np.where(up, stable, root - d2)
    return integrand @ w


def lift_x3_gauss(start, dx12, p: ModelParams) -> np.ndarray:
    """x3 increments int psi dx2 along straight planar segments (exact Gauss rule)."""
    dx12 = np.asarray(dx12, dtype=float).reshape(-1, 2)
    nodes = np.asarray(start, dtype=float)[:2] + np.concatenate([np.zeros((1, 2)), np.cumsum(dx12, axis=0)])
    lam, w = _gauss(_n_gauss(p))
    x1 = nodes[:-1, 0, None] + lam * dx12[:, 0, None]
    x2 = nodes[:-1, 1, None] + lam * dx12[:, 1, None]
    return dx12[:, 1] * (psi(x1, x2, p.b) @ w)


def _lift_x3_rk4(start, control: ControlGrid, p: ModelParams, step: float) -> np.ndarray:
    # x1, x2 are linear in t inside each interval, so the classical RK4 stages
    # reduce to evaluations of u2 psi at the substep start, midpoint and end.
    dx12 = np.stack([control.u1 * control.dt, control.u2 * control.dt], axis=1)
    nodes = np.asarray(start, dtype=float)[:2] + np.concatenate([np.zeros((1, 2)), np.cumsum(dx12, axis=0)])
    m = np.maximum(1, np.ceil(control.dt / step - 1e-9).astype(int))
    seg = np.repeat(np.arange(control.n), m)
    j = np.arange(len(seg)) - np.repeat(np.cumsum(m) - m, m)
    h = control.dt[seg] / m[seg]
    out = np.zeros(control.n)
    f = []
    for frac in (0.0, 0.5, 1.0):
        s = (j + frac) / m[seg]
        x1 = nodes[seg, 0] + s * dx12[seg, 0]
        x2 = nodes[seg, 1] + s * dx12[seg, 1]
        f.append(control.u2[seg] * psi(x1, x2, p.b))
    k1, k23, k4 = f
    np.add.at(out, seg, h / 6.0 * (k1 + 4.0 * k23 + k4))
    return out


def planar_path(start, dx12, p: ModelParams, dt=None, parameterization="generic", meta=None) -> HorizontalPath:
    """Horizontal lift of a polygon given by planar increments.

    Without ``dt`` the time law is unit coordinate speed (``generic``) or
    unit sub-Riemannian speed (``arclength``).
    """
    dx12 = np.asarray(dx12, dtype=float).reshape(-1, 2)
    dx3 = lift_x3_gauss(start, dx12, p)
    dx = np.column_stack([dx12, dx3])
    path = HorizontalPath(start, np.ones(len(dx12)), dx, parameterization, dict(meta or {}))
    if dt is None:
        dt = segment_lengths(path, p) if parameterization == "arclength" else np.hypot(dx12[:, 0], dx12[:, 1])
    return replace(path, dt=np.asarray(dt, dtype=float))


# ----------------------------------------------------------------------------
# operations


def integrate(control: ControlGrid, x0, p: ModelParams, step: float | None = None, method: str = "rk4") -> HorizontalPath:
    """Roll out ``x1' = u1, x2' = u2, x3' = u2 psi(x)`` from ``x0``.

    ``method='rk4'`` uses fixed-step RK4 (default step tau / max(N, 1000));
    ``method='gauss'`` integrates x3 exactly by Gauss-Legendre quadrature.
    """
    x0 = check_domain(np.asarray(x0, dtype=float))
    if control.scheme == "pl":
        control = control.to_pc()
    if step is None:
        step = control.tau / max(control.n, 1000)
    if step <= 0:
        raise ValueError("step must be positive")
    dx12 = np.stack([control.u1 * control.dt, control.u2 * control.dt], axis=1)
    nodes = x0[:2] + np.concatenate([np.zeros((1, 2)), np.cumsum(dx12, axis=0)])
    out = (np.abs(nodes[:, 0]) > 0.5 + 1e-12) | (np.abs(nodes[:, 1]) > 1 + 1e-12)
    if np.any(out):
        k = int(np.argmax(out))
        t_exit = control.times[k]
        raise DomainError(f"trajectory leaves M by t={t_exit:.6g} at node {k}: {nodes[k]}")
    if method == "rk4":
        dx3 = _lift_x3_rk4(x0, control, p, step)
    elif method == "gauss":
        dx3 = lift_x3_gauss(x0, dx12, p)
    else:
        raise ValueError(f"unknown method {method!r}")
    return HorizontalPath(
        x0, control.dt.copy(), np.column_stack([dx12, dx3]), "generic", {"method": method, "step": step}
    )


def sr_length(path: HorizontalPath, p: ModelParams) -> float:
    return math.fsum(segment_lengths(path, p))


def length_excess(path: HorizontalPath, p: ModelParams) -> float:
    """``L(path) - (x2_end - x2_start)``, evaluated termwise."""
    return math.fsum(segment_excess(path, p))


def stable_margin(path: HorizontalPath, p: ModelParams, reference_length: float) -> float:
    """``reference_length - L(path)`` for a path climbing the x2-axis by ``reference_length``.

    Any mismatch between the path's x2 climb and ``reference_length`` is
    included exactly, so the value is meaningful down to the path's own
    representation error.
    """
    climb_gap = math.fsum([*path.dx[:, 1], -reference_length])
    return -climb_gap - length_excess(path, p)


def euclidean_length(path: HorizontalPath, p: ModelParams) -> float:
    lam, w = _gauss(_n_gauss(p))
    x1, x2 = _segment_points(path, lam)
    d1, d2 = path.dx[:, 0, None], path.dx[:, 1, None]
    return math.fsum(np.sqrt(d1**2 + d2**2 * (1.0 + psi(x1, x2, p.b) ** 2)) @ w)


def arclength_reparam(path: HorizontalPath, p: ModelParams) -> HorizontalPath:
    lengths = segment_lengths(path, p)
    slow = lengths < STATIONARY_SPEED * path.dt
    if np.any(slow):
        k = int(np.argmax(slow))
        raise ValueError(f"stationary segment {k}: speed {lengths[k] / path.dt[k]:.3g} below {STATIONARY_SPEED}")
    meta = dict(path.meta, reparameterized=True)
    return replace(path, dt=lengths, parameterization="arclength", meta=meta)


def node_speeds(path: HorizontalPath, p: ModelParams) -> np.ndarray:
    """Sub-Riemannian speed of each segment's control at its left node."""
    u = path.node_controls(p)
    x = path.states[:-1]
    return np.sqrt(u[:, 0] ** 2 + phi(x[:, 0], x[:, 1], p) * u[:, 1] ** 2)


def endpoint_defect(path: HorizontalPath, target) -> EndpointDefect:
    target = np.asarray(target, dtype=float)
    return EndpointDefect(*(math.fsum([path.start[i], *path.dx[:, i], -target[i]]) for i in range(3)))


def _time_weights(path: HorizontalPath, p: ModelParams, lam, x1, x2):
    if path.parameterization == "generic":
        return np.broadcast_to(path.dt[:, None], x1.shape)
    d1, d2 = path.dx[:, 0, None], path.dx[:, 1, None]
    return np.sqrt(d1**2 + phi(x1, x2, p) * d2**2)


def functional_J(path: HorizontalPath, p: ModelParams) -> float:
    """``J = int psi(omega(t)) dt``."""
    lam, w = _gauss(_n_gauss(p))
    x1, x2 = _segment_points(path, lam)
    return math.fsum((psi(x1, x2, p.b) * _time_weights(path, p, lam, x1, x2)) @ w)


def _sample_points(path: HorizontalPath, p: ModelParams):
    lam, _ = _gauss(_n_gauss(p))
    x1, x2 = _segment_points(path, lam)
    nodes = path.states
    return np.concatenate([nodes[:, 0], x1.ravel()]), np.concatenate([nodes[:, 1], x2.ravel()])


def beta(path: HorizontalPath, p: ModelParams) -> float:
    """``max |psi(omega)|^(1/2)`` over nodes and interior quadrature points."""
    x1, x2 = _sample_points(path, p)
    return float(np.sqrt(np.max(np.abs(psi(x1, x2, p.b)))))


def P_values(path: HorizontalPath, p: ModelParams) -> np.ndarray:
    """``P = omega1 * omega2^(b/2)`` at the nodes (b even only)."""
    if p.b % 2:
        raise ValueError("P is only real-valued for even b")
    x = path.states
    return x[:, 0] * x[:, 1] ** (p.b // 2)


def P_dot_max(path: HorizontalPath, p: ModelParams) -> float:
    """``max |dP/dt|`` over both ends and the interior quadrature points of every segment."""
    if p.b % 2:
        raise ValueError("P is only real-valued for even b")
    q = p.b // 2
    lam = np.concatenate([[0.0], _gauss(_n_gauss(p))[0], [1.0]])
    x1, x2 = _segment_points(path, lam)
    d1, d2 = path.dx[:, 0, None], path.dx[:, 1, None]
    if path.parameterization == "generic":
        speed = np.broadcast_to(path.dt[:, None], x1.shape)
    else:
        speed = np.sqrt(d1**2 + phi(x1, x2, p) * d2**2)
    u1, u2 = d1 / speed, d2 / speed
    dP = u1 * x2**q + (q * u2 * x1 * x2 ** (q - 1) if q >= 1 else 0.0)
    return float(np.max(np.abs(dP)))


# ----------------------------------------------------------------------------
# x3 correction


def loop_delta3(delta, x1e: float, x2e: float, b: int):
    """Signed x3 change of the forward loop at (x1e, x2e) with size ``delta``.

    Forward loop: up by x2e*delta, outwards by delta (away from x1 = 0), back
    down, back in.  At (0, eps) this is the clockwise boundary of
    (0, eps) + [0, delta] x [0, eps*delta].
    """
    delta = np.asarray(delta, dtype=float)
    growth = np.expm1((b + 1) * np.log1p(delta))  # (1+delta)^(b+1) - 1
    width = delta * (2.0 * abs(x1e) + delta)
    return -width * x2e ** (b + 1) * growth / (b + 1)


def loop_increments(delta: float, x1e: float, x2e: float, orientation: int = 1) -> np.ndarray:
    w = 1.0 if x1e >= 0 else -1.0
    hgt = x2e * delta
    seq = np.array([[0.0, hgt], [w * delta, 0.0], [0.0, -hgt], [-w * delta, 0.0]])
    if orientation < 0:
        seq = -seq[::-1]
    return seq


def solve_monotone(g, target: float, guess: float = 1.0, rtol: float = 1e-15, max_iter: int = 200) -> float:
    """Root of ``g(x) = target`` for ``g`` increasing on (0, inf) with ``g(0+) = 0``.

    Brackets geometrically from ``guess`` then bisects; ``rtol`` is relative in x.
    """
    if not target > 0:
        raise ValueError("target must be positive")
    lo = hi = float(guess)
    for _ in range(2100):
        if g(hi) >= target:
            break
        lo, hi = hi, hi * 2.0
    else:
        raise ValueError("could not bracket the root from above")
    if lo == hi:
        for _ in range(2100):
            lo = hi * 0.5
            if lo == 0.0 or g(lo) < target:
                break
            hi = lo
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if g(mid) < target:
            lo = mid
        else:
            hi = mid
        if hi - lo <= rtol * hi:
            break
    return 0.5 * (lo + hi)


def correct_x3(path: HorizontalPath, p: ModelParams, target_x3: float = 0.0, tol: float = 0.0) -> HorizontalPath:
    """Append a rectangular loop at the endpoint that cancels the x3 defect.

    The loop orientation is chosen from the defect's sign; its size solves the
    monotone equation ``|loop_delta3(delta)| = |defect|``.  The (x1, x2)
    endpoint and all earlier segments are unchanged.
    """
    end = path.end
    d3 = end[2] - target_x3
    if abs(d3) <= tol:
        return path
    x1e, x2e = end[0], end[1]
    if p.b >= 1 and x2e == 0.0:
        raise CorrectionError("endpoint on x2 = 0: a loop there moves x3 by nothing")
    forward_sign = -np.sign(x2e ** (p.b + 1)) if x2e != 0 else 0.0
    if forward_sign == 0:
        raise CorrectionError("degenerate loop at the endpoint")
    orientation = 1 if forward_sign * d3 < 0 else -1
    guess = (abs(d3) / abs(x2e) ** (p.b + 1)) ** (1 / 3) or 1e-300
    delta = solve_monotone(lambda s: abs(float(loop_delta3(s, x1e, x2e, p.b))), abs(d3), guess=guess)
    if abs(x1e) + delta > 0.5 or abs(x2e) * (1 + delta) >= 1.0:
        raise CorrectionError(f"correction loop of size {delta:.3g} would leave M")
    inc = loop_increments(delta, x1e, x2e, orientation)
    loop = planar_path(end, inc, p, parameterization=path.parameterization)
    if path.parameterization == "generic" and path.n:
        # keep the input's typical coordinate speed on the loop
        speed = np.median(np.hypot(path.dx[:, 0], path.dx[:, 1]) / path.dt)
        if speed > 0:
            loop = replace(loop, dt=loop.dt / speed)
    added = sr_length(loop, p)
    out = path.concat(loop)
    meta = dict(path.meta, correction={"delta": delta, "orientation": orientation, "added_length": added, "defect": d3})
    return replace(out, meta=meta)


# ----------------------------------------------------------------------------
# CSV


def write_path_csv(path: HorizontalPath, p: ModelParams, fname) -> None:
    """Columns t,u1,u2,x1,x2,x3; node controls belong to the outgoing segment."""
    u = path.node_controls(p)
    u = np.vstack([u, u[-1:]])
    t = path.times
    x = path.states
    with open(fname, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["t", "u1", "u2", "x1", "x2", "x3"])
        for k in range(len(t)):
            wr.writerow([f"{v:.17g}" for v in (t[k], u[k, 0], u[k, 1], x[k, 0], x[k, 1], x[k, 2])])


def read_path_csv(fname, parameterization: str = "generic") -> HorizontalPath:
    data = np.loadtxt(fname, delimiter=",", skiprows=1, ndmin=2)
    t, x = data[:, 0], data[:, 3:6]
    return HorizontalPath(x[0], np.diff(t), np.diff(x, axis=0), parameterization)


def write_control_csv(control: ControlGrid, fname) -> None:
    """Control certificate: columns t,dt,u1,u2 (one row per interval)."""
    if control.scheme != "pc":
        control = control.to_pc()
    t = control.times
    with open(fname, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["t", "dt", "u1", "u2"])
        for k in range(control.n):
            wr.writerow([f"{v:.17g}" for v in (t[k], control.dt[k], control.u1[k], control.u2[k])])


def read_control_csv(fname) -> ControlGrid:
    data = np.loadtxt(fname, delimiter=",", skiprows=1, ndmin=2)
    return ControlGrid(data[:, 1], data[:, 2], data[:, 3], "pc")


def path_to_control(path: HorizontalPath, p: ModelParams) -> ControlGrid:
    u = path.dx[:, :2] / path.dt[:, None]
    return ControlGrid(path.dt, u[:, 0], u[:, 1], "pc")
