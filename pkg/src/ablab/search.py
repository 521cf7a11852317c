"""Multistart direct-transcription search for competitors shorter than gamma.

Controls are piecewise constant on fixed intervals.  The smooth objective is
the energy excess over a straight climb at constant speed, plus a quadratic
endpoint penalty; descent directions preserve the planar endpoint exactly so
the penalty only has to steer x3.  Every final iterate is closed exactly
(planar snap, then an x3 loop), arc-length reparameterised and scored by the
stable length margin.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import competitor, curves
from .curves import ControlGrid, HorizontalPath
from .srmodel import ModelParams, phi_minus_one, psi

BARRIER = 1e30
DEFECT_TOL = 1e-10
MARGIN_RTOL = 1e-9
GRAD_TOL = 1e-6
MAX_ITER = 10_000
FD_STEP = 1e-6


@dataclass(frozen=True)
class SearchProblem:
    params: ModelParams
    epsilon: float
    symmetric: bool = True
    nodes: int = 100
    penalties: tuple[float, ...] = (1e2, 1e4, 1e6, 1e8)
    magnitudes: tuple[float, ...] = (1e-3, 1e-2, 1e-1, 0.3)
    max_iter: int = MAX_ITER

    def __post_init__(self):
        if self.nodes < 10:
            raise ValueError("need at least 10 nodes")
        if any(b <= a for a, b in zip(self.penalties, self.penalties[1:])) or not self.penalties:
            raise ValueError("penalty schedule must be nonempty and strictly increasing")
        if not 0 < self.epsilon < 1:
            raise ValueError("epsilon must lie in (0, 1)")

    @property
    def start(self) -> np.ndarray:
        return np.array([0.0, -self.epsilon if self.symmetric else 0.0, 0.0])

    @property
    def target(self) -> np.ndarray:
        return np.array([0.0, self.epsilon, 0.0])

    @property
    def climb(self) -> float:
        """Length of the reference segment of gamma."""
        return 2 * self.epsilon if self.symmetric else self.epsilon


@dataclass
class StartEntry:
    index: int
    kind: str
    status: str
    margin: float = -math.inf
    length: float = math.nan
    defect: float = math.nan
    start_margin: float = -math.inf
    iterations: int = 0
    history: list = field(default_factory=list)
    path: HorizontalPath | None = None

    def summary(self) -> dict:
        return {
            "index": self.index,
            "kind": self.kind,
            "status": self.status,
            "margin": self.margin,
            "length": self.length,
            "defect": self.defect,
            "start_margin": self.start_margin,
            "iterations": self.iterations,
            "history": self.history,
        }


@dataclass
class SearchResult:
    verdict: str
    best_index: int
    best_length: float
    best_margin: float
    best_defect: float
    reference_length: float
    best_path: HorizontalPath | None
    entries: list[StartEntry]

    @property
    def best_control(self) -> ControlGrid | None:
        return None if self.best_path is None else curves.path_to_control(self.best_path, self.best_path.meta["params"])

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "best_index": self.best_index,
            "best_length": self.best_length,
            "best_margin": self.best_margin,
            "best_defect": self.best_defect,
            "reference_length": self.reference_length,
            "starts": [e.summary() for e in self.entries],
        }


# ----------------------------------------------------------------------------
# rollout and objective


def _rollout(U, dt, problem: SearchProblem):
    """Batched planar nodes and x3 increments; ``U`` has shape (B, N, 2)."""
    p = problem.params
    lam, w = curves._gauss(curves._n_gauss(p))
    d = U * dt[None, :, None]
    x0 = problem.start
    nodes = x0[:2] + np.concatenate([np.zeros((U.shape[0], 1, 2)), np.cumsum(d, axis=1)], axis=1)
    x1 = nodes[:, :-1, 0, None] + lam * d[:, :, 0, None]
    x2 = nodes[:, :-1, 1, None] + lam * d[:, :, 1, None]
    return nodes, x1, x2, d, w


def objective_batch(U, dt, problem: SearchProblem, weight: float) -> np.ndarray:
    U = np.asarray(U, dtype=float)
    p = problem.params
    nodes, x1, x2, d, w = _rollout(U, dt, problem)
    c = problem.climb / math.fsum(dt)
    u1, u2 = U[..., 0], U[..., 1]
    fm1 = phi_minus_one(x1, x2, p) @ w
    climb_gap = np.array([math.fsum([*row, -problem.climb]) for row in dt * u2])
    energy = (dt * (u1**2 + (u2 - c) ** 2 + u2**2 * fm1)).sum(axis=1) + 2 * c * climb_gap
    x3 = problem.start[2] + (d[:, :, 1] * (psi(x1, x2, p.b) @ w)).sum(axis=1)
    end = nodes[:, -1, :]
    defect2 = ((end - problem.target[:2]) ** 2).sum(axis=1) + (x3 - problem.target[2]) ** 2
    out = energy + weight * defect2
    bad = (np.abs(nodes[..., 0]) >= 0.5).any(axis=1) | (np.abs(nodes[..., 1]) >= 1.0).any(axis=1)
    return np.where(bad | ~np.isfinite(out), BARRIER, out)


def objective(control: ControlGrid, problem: SearchProblem, weight: float = 0.0) -> float:
    """Energy excess ``E - climb^2 / tau`` plus ``weight * |endpoint defect|^2``."""
    U = np.stack([control.u1, control.u2], axis=1)[None]
    return float(objective_batch(U, control.dt, problem, weight)[0])


def gradient_fd(control: ControlGrid, problem: SearchProblem, weight: float = 0.0) -> np.ndarray:
    """Central differences in every control coordinate, evaluated as one batch; shape (N, 2)."""
    U = np.stack([control.u1, control.u2], axis=1)
    return _grad(U, control.dt, problem, weight)


def _grad(U, dt, problem, weight):
    n = U.size
    h = FD_STEP * np.maximum(1.0, np.abs(U.ravel()))
    E = np.zeros((n, n))
    E[np.arange(n), np.arange(n)] = h
    base = U.ravel()[None, :]
    batch = np.concatenate([base + E, base - E]).reshape(2 * n, *U.shape)
    f = objective_batch(batch, dt, problem, weight)
    return ((f[:n] - f[n:]) / (2 * h)).reshape(U.shape)


def _descent(g, dt):
    d = -g / dt[:, None]
    d -= (dt[:, None] * d).sum(axis=0) / dt.sum()
    return d


# ----------------------------------------------------------------------------
# closing and scoring


def close_and_score(U, dt, problem: SearchProblem, meta=None):
    """Snap the planar endpoint, cancel x3 with a loop, reparameterise, score.

    Returns ``(path, completed_margin, defect)``.
    """
    p = problem.params
    d = U * dt[:, None]
    goal = problem.target[:2] - problem.start[:2]
    for i in range(2):
        d[-1, i] = math.fsum([goal[i], *(-d[:-1, i])])
    path = curves.planar_path(problem.start, d, p, dt=dt, meta=dict(meta or {}))
    path = curves.correct_x3(path, p, problem.target[2])
    path = curves.arclength_reparam(path, p)
    defect = curves.endpoint_defect(path, problem.target).max_abs()
    return path, completed_margin(path, problem), defect


def completed_margin(path: HorizontalPath, problem: SearchProblem) -> float:
    """Stable ``climb - L`` for the path completed to the exact target.

    A planar endpoint miss is charged at the cost of straight completion
    segments (along x1, then along the x2-axis) instead of being credited.
    """
    gap1 = math.fsum([path.start[0], *path.dx[:, 0], -problem.target[0]])
    gap2 = math.fsum([path.start[1], *path.dx[:, 1], -problem.target[1]])
    return -curves.length_excess(path, problem.params) - gap2 - abs(gap2) - abs(gap1)


def margin_tolerance(path: HorizontalPath, problem: SearchProblem) -> float:
    return MARGIN_RTOL * float(np.sum(np.abs(curves.segment_excess(path, problem.params))))


# ----------------------------------------------------------------------------
# local descent


def minimize(start: ControlGrid, problem: SearchProblem, index: int = 0, kind: str = "custom") -> StartEntry:
    """Penalty-continuation gradient descent from ``start``; keeps the better of start and result."""
    dt = start.dt.copy()
    U = np.stack([start.u1, start.u2], axis=1)
    entry = StartEntry(index, kind, "ok")
    try:
        start_path, start_margin, start_defect = close_and_score(U.copy(), dt, problem, {"start": index})
    except (curves.CorrectionError, ValueError):
        start_path, start_margin, start_defect = None, -math.inf, math.inf
    entry.start_margin = start_margin

    f0 = objective_batch(U[None], dt, problem, problem.penalties[0])[0]
    total = 0
    for w in problem.penalties:
        f = objective_batch(U[None], dt, problem, w)[0]
        it = 0
        while total < problem.max_iter:
            g = _grad(U, dt, problem, w)
            d = _descent(g, dt)
            slope = float((g * d).sum())
            gnorm = math.sqrt(float((dt[:, None] * d * d).sum()))
            if gnorm < GRAD_TOL or slope >= 0:
                break
            step, accepted = 0.5, False
            for _ in range(40):
                trial = U + step * d
                ft = objective_batch(trial[None], dt, problem, w)[0]
                if ft <= f + 1e-4 * step * slope and ft < f:
                    U, f, accepted = trial, ft, True
                    break
                step *= 0.5
            it += 1
            total += 1
            if not accepted:
                break
        entry.history.append({"weight": w, "iterations": it, "objective": f})
    entry.iterations = total
    if f0 < BARRIER and objective_batch(U[None], dt, problem, problem.penalties[-1])[0] >= BARRIER:
        entry.status = "diverged"

    try:
        path, m, defect = close_and_score(U, dt, problem, {"start": index})
    except (curves.CorrectionError, ValueError):
        path, m, defect = None, -math.inf, math.inf
        entry.status = "correction-failed"
    if start_path is not None and (path is None or start_margin > m):
        path, m, defect = start_path, start_margin, start_defect
        entry.status = "ok"
    entry.path, entry.margin, entry.defect = path, m, defect
    entry.length = problem.climb - m if path is not None else math.nan
    if path is not None:
        path.meta["params"] = problem.params
    return entry


# ----------------------------------------------------------------------------
# starts


def gamma_control(problem: SearchProblem) -> ControlGrid:
    N = problem.nodes
    return ControlGrid(np.full(N, problem.climb / N), np.zeros(N), np.ones(N))


def perturbed_control(problem: SearchProblem, seed: int, magnitude: float, modes: int = 4) -> ControlGrid:
    """gamma plus random sine bumps (x1 amplitude ``magnitude * climb``), same planar endpoints."""
    rng = np.random.default_rng(seed)
    N = problem.nodes
    s = np.linspace(0.0, 1.0, N + 1)
    k = np.arange(1, modes + 1)
    basis = np.sin(np.pi * np.outer(s, k))
    x1 = magnitude * problem.climb * basis @ (rng.standard_normal(modes) / k)
    x2 = problem.start[1] + problem.climb * s + 0.25 * magnitude * problem.climb * basis @ (rng.standard_normal(modes) / k)
    x1 = np.clip(x1, -0.45, 0.45)
    x2 = np.clip(x2, -0.99, 0.99)
    dt = np.full(N, problem.climb / N)
    return ControlGrid(dt, np.diff(x1) / dt, np.diff(x2) / dt)


def competitor_regime(problem: SearchProblem) -> bool:
    p = problem.params
    return (not problem.symmetric) and p.alpha.kind == "constant" and p.alpha.c == 1.0 and p.b > 4 * p.a + 4


def competitor_control(problem: SearchProblem) -> ControlGrid | None:
    """Tent cut plus subdivided tail of the best scanned cut-and-correct plan (its loop is rebuilt on closing)."""
    p, eps = problem.params, problem.epsilon
    res = competitor.scan(eps, np.logspace(-6, -2, 41), "rho^3/4", p)
    best = res["best"]
    if best is None or best.margin <= 0:
        return None
    tail_n = problem.nodes - 2
    tail = np.tile([0.0, (eps - 2 * best.rho) / tail_n], (tail_n, 1))
    d = np.vstack([[[best.h, best.rho], [-best.h, best.rho]], tail])
    dt = np.hypot(d[:, 0], d[:, 1])
    return ControlGrid(dt, d[:, 0] / dt, d[:, 1] / dt)


def start_family(problem: SearchProblem, n_starts: int, seed: int) -> list[tuple[str, ControlGrid]]:
    if n_starts < 1:
        raise ValueError("need at least one start")
    starts = [("gamma", gamma_control(problem))]
    comp = competitor_control(problem) if competitor_regime(problem) and n_starts > 1 else None
    n_random = n_starts - 1 - (comp is not None)
    for k in range(n_random):
        mag = problem.magnitudes[k % len(problem.magnitudes)]
        starts.append((f"bump{mag:g}", perturbed_control(problem, seed + k + 1, mag)))
    if comp is not None:
        starts.append(("competitor", comp))
    return starts


def _verdict(entries: list[StartEntry], problem: SearchProblem):
    ok = [e for e in entries if e.path is not None]
    if not ok:
        return "inconclusive", None
    # highest completed margin is lowest length; ties go to the lowest index
    best = min(ok, key=lambda e: (-e.margin, e.index))
    tol = margin_tolerance(best.path, problem)
    if best.margin > tol:
        return ("improved" if best.defect < DEFECT_TOL else "inconclusive"), best
    return "no-improvement", best


def multistart(problem: SearchProblem, n_starts: int = 50, seed: int = 0, threads: int = 1) -> SearchResult:
    """Best of ``n_starts`` seeded local searches (start ``k`` seeded with ``seed + k``)."""
    starts = start_family(problem, n_starts, seed)
    jobs = [(k, kind, c) for k, (kind, c) in enumerate(starts)]
    run = lambda job: minimize(job[2], problem, job[0], job[1])  # noqa: E731
    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            entries = list(ex.map(run, jobs))
    else:
        entries = [run(j) for j in jobs]
    verdict, best = _verdict(entries, problem)
    if best is None:
        return SearchResult(verdict, -1, math.nan, -math.inf, math.inf, problem.climb, None, entries)
    return SearchResult(verdict, best.index, best.length, best.margin, best.defect, problem.climb, best.path, entries)


# ----------------------------------------------------------------------------
# certificates


def write_certificate(result: SearchResult, fname) -> None:
    if result.best_path is None:
        raise ValueError("no path to certify")
    curves.write_control_csv(result.best_control, fname)


def replay_certificate(fname, problem: SearchProblem) -> dict:
    """Re-evaluate a control CSV independently: integrate, close x3, reparameterise, measure."""
    p = problem.params
    control = curves.read_control_csv(fname)
    raw = curves.integrate(control, problem.start, p, method="gauss")
    raw_defect = curves.endpoint_defect(raw, problem.target)
    path = curves.correct_x3(raw, p, problem.target[2])
    path = curves.arclength_reparam(path, p)
    defect = curves.endpoint_defect(path, problem.target).max_abs()
    m = completed_margin(path, problem)
    return {
        "raw_defect": max(abs(raw_defect.d1), abs(raw_defect.d2), abs(raw_defect.d3)),
        "defect": defect,
        "length": curves.sr_length(path, p),
        "margin": m,
        "confirmed": bool(defect < DEFECT_TOL and m > 0),
    }
