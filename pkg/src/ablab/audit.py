"""Falsification audit of the estimates behind local minimality of gamma|[-eps, eps].

Each inequality is evaluated only on paths satisfying its own hypotheses;
failed hypotheses make a record "not applicable" for that path, never a
violation.  Small quantities (tau - 2 eps, the sqrt(1 - t) remainder) are
formed without cancellation.
"""
from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import curves
from .curves import HorizontalPath, planar_path
from .srmodel import ModelParams, phi, phi_minus_one

EPS1_DEFAULT = 0.5
REL_TOL = 1e-9
ENDPOINT_TOL = 1e-12


def epsilon_theorem1(b: int, eps1: float = EPS1_DEFAULT) -> float:
    """``min(eps1/16, (2+b)^(-2/b)/8, 1/65)``."""
    if b < 1:
        raise ValueError("b must be >= 1")
    return min(eps1 / 16, 0.125 * (2 + b) ** (-2 / b), 1 / 65)


# ----------------------------------------------------------------------------
# sample generation


def _sine_profile(rng, s, modes: int):
    coef = rng.standard_normal(modes) / np.arange(1, modes + 1)
    k = np.arange(1, modes + 1)
    return np.sin(np.pi * np.outer(s, k)) @ coef


def sample_admissible_competitor(seed: int, epsilon: float, magnitude: float, p: ModelParams,
                                 nodes: int = 200, modes: int = 4) -> HorizontalPath:
    """Random competitor of gamma|[-eps, eps]: sine bumps in x1 (and weaker ones in x2), x3 closed by a loop.

    ``magnitude`` is the x1 amplitude in units of eps.  The result is
    arc-length parameterised.
    """
    rng = np.random.default_rng(seed)
    s = np.linspace(0.0, 1.0, nodes + 1)
    x1 = magnitude * epsilon * _sine_profile(rng, s, modes)
    x2 = -epsilon + 2 * epsilon * s + 0.25 * magnitude * epsilon * _sine_profile(rng, s, modes)
    x1[[0, -1]] = 0.0
    x2[0], x2[-1] = -epsilon, epsilon
    dx12 = np.column_stack([np.diff(x1), np.diff(x2)])
    path = planar_path([0.0, -epsilon, 0.0], dx12, p, meta={"seed": seed, "magnitude": magnitude})
    path = curves.correct_x3(path, p)
    return curves.arclength_reparam(path, p)


def sample_axis_anchored_path(seed: int, p: ModelParams, nodes: int = 120, modes: int = 4) -> HorizontalPath:
    """Generic-time path with omega1 = 0 at both ends and max |dP/dt| in (0.3, 1]."""
    rng = np.random.default_rng(seed)
    s = np.linspace(0.0, 1.0, nodes + 1)
    x1 = 0.2 * _sine_profile(rng, s, modes)
    x1 = np.clip(x1, -0.45, 0.45)
    x1[[0, -1]] = 0.0
    lo, hi = np.sort(rng.uniform(-0.95, 0.95, 2))
    x2 = lo + (hi - lo) * s + 0.05 * _sine_profile(rng, s, modes)
    x2 = np.clip(x2, -0.95, 0.95)
    dx12 = np.column_stack([np.diff(x1), np.diff(x2)])
    dt = np.full(nodes, 1.0 / nodes)
    path = planar_path([0.0, x2[0], 0.0], dx12, p, dt=dt)
    target = rng.uniform(0.3, 1.0)
    pd = curves.P_dot_max(path, p)
    if pd > 0:
        path = HorizontalPath(path.start, path.dt * pd / target, path.dx, "generic", dict(path.meta))
    return path


# ----------------------------------------------------------------------------
# report types


@dataclass
class InequalityRecord:
    name: str
    hypotheses: tuple[str, ...]
    informational: bool = False
    samples: int = 0
    applicable: int = 0
    violations: int = 0
    worst_slack: float = math.inf
    worst_rel_slack: float = math.inf

    def add(self, applicable: bool, slack: float = 0.0, scale: float = 1.0) -> None:
        self.samples += 1
        if not applicable:
            return
        self.applicable += 1
        rel = slack / scale if scale > 0 else slack
        if slack < self.worst_slack:
            self.worst_slack = slack
        if rel < self.worst_rel_slack:
            self.worst_rel_slack = rel
        if slack < -REL_TOL * scale:
            self.violations += 1

    def merge(self, other: "InequalityRecord") -> None:
        self.samples += other.samples
        self.applicable += other.applicable
        self.violations += other.violations
        self.worst_slack = min(self.worst_slack, other.worst_slack)
        self.worst_rel_slack = min(self.worst_rel_slack, other.worst_rel_slack)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hypotheses"] = list(self.hypotheses)
        for k in ("worst_slack", "worst_rel_slack"):
            if not math.isfinite(d[k]):
                d[k] = None
        return d


INEQUALITIES: dict[str, tuple[tuple[str, ...], bool]] = {
    "euclidean_comparison": ((), False),
    "box_bound": (("length_within_2eps",), False),
    "sqrt_taylor_two_sided": (("taylor_radius",), False),
    "sqrt_taylor_literal_lower": (("taylor_radius",), True),
    "sqrt_taylor_literal_upper": (("taylor_radius",), True),
    "u2_bound_2": (("arclength",), False),
    "u2_bound_sqrt2": (("arclength",), False),
    "P_dot_bound": (("b_even", "box_within_8eps"), True),
    "J_upper": (("endpoint", "arclength", "b_le_2a"), False),
    "J_lower": (("b_even", "P_dot_le_1", "P_ends_zero"), False),
    "final_chain": (("endpoint", "arclength", "b_le_2a", "b_even", "P_dot_le_1", "P_ends_zero"), False),
}


def _fresh_records() -> dict[str, InequalityRecord]:
    return {k: InequalityRecord(k, h, info) for k, (h, info) in INEQUALITIES.items()}


@dataclass
class AuditReport:
    records: dict[str, InequalityRecord] = field(default_factory=_fresh_records)
    samples: int = 0
    failed: int = 0
    rows: list[dict] = field(default_factory=list)

    @property
    def violations(self) -> int:
        return sum(r.violations for r in self.records.values() if not r.informational)

    @property
    def verdict(self) -> str:
        return "pass" if self.violations == 0 else "fail"

    def merge(self, other: "AuditReport") -> "AuditReport":
        for k, r in other.records.items():
            self.records[k].merge(r)
        self.samples += other.samples
        self.failed += other.failed
        self.rows.extend(other.rows)
        return self

    def to_dict(self) -> dict:
        return {
            "samples": self.samples,
            "failed_samples": self.failed,
            "violations": self.violations,
            "verdict": self.verdict,
            "records": {k: r.to_dict() for k, r in self.records.items()},
        }


# ----------------------------------------------------------------------------
# evaluation


def _dense_points(path: HorizontalPath, p: ModelParams):
    lam = np.concatenate([[0.0], curves._gauss(curves._n_gauss(p))[0], [1.0]])
    x1, x2 = curves._segment_points(path, lam)
    return lam, x1, x2


def _add_pointwise(rec: InequalityRecord, applicable: bool, slack, scale) -> None:
    """Record the point with the smallest relative slack (points with zero scale hold trivially)."""
    slack, scale = np.ravel(slack), np.ravel(scale)
    live = scale > 0
    if not np.any(live):
        rec.add(applicable, 0.0, 1.0)
        return
    rel = np.where(live, slack / np.where(live, scale, 1.0), np.inf)
    k = int(np.argmin(rel))
    rec.add(applicable, float(slack[k]), float(scale[k]))


def _tau_minus_2eps(path: HorizontalPath, p: ModelParams, epsilon: float) -> float:
    """``L(path) - 2 eps`` from segment excesses plus the exact climb mismatch."""
    climb_gap = math.fsum([*path.dx[:, 1], -2 * epsilon])
    return curves.length_excess(path, p) + climb_gap


def hypotheses(path: HorizontalPath, epsilon: float, p: ModelParams) -> dict[str, bool]:
    target = (0.0, epsilon, 0.0)
    start_ok = abs(path.start[0]) <= ENDPOINT_TOL and abs(path.start[1] + epsilon) <= ENDPOINT_TOL and abs(path.start[2]) <= ENDPOINT_TOL
    defect = curves.endpoint_defect(path, target).max_abs()
    L = curves.sr_length(path, p)
    excess = _tau_minus_2eps(path, p, epsilon)
    _, x1, x2 = _dense_points(path, p)
    t = -phi_minus_one(x1, x2, p)
    h = {
        "endpoint": bool(start_ok and defect < ENDPOINT_TOL),
        "arclength": path.parameterization == "arclength",
        "length_within_2eps": bool(excess <= 1e-12 * 2 * epsilon),
        "box_within_8eps": bool(np.max(np.abs(path.states[:, :2])) <= 8 * epsilon),
        "b_le_2a": p.b <= 2 * p.a,
        "b_even": p.b % 2 == 0,
        "taylor_radius": bool(np.max(np.abs(t)) < EPS1_DEFAULT),
    }
    if h["b_even"]:
        P = curves.P_values(path, p)
        h["P_dot_le_1"] = bool(curves.P_dot_max(path, p) <= 1.0)
        h["P_ends_zero"] = bool(abs(P[0]) <= ENDPOINT_TOL and abs(P[-1]) <= ENDPOINT_TOL)
    else:
        h["P_dot_le_1"] = h["P_ends_zero"] = False
    h["_length"] = L
    h["_excess"] = excess
    return h


def audit_bounds(path: HorizontalPath, epsilon: float, p: ModelParams) -> AuditReport:
    """Evaluate every audited inequality on one path."""
    rep = AuditReport(samples=1)
    R = rep.records
    hyp = hypotheses(path, epsilon, p)
    L, excess = hyp["_length"], hyp["_excess"]
    ok = lambda name: all(hyp[h] for h in INEQUALITIES[name][0])  # noqa: E731

    L_eu = curves.euclidean_length(path, p)
    R["euclidean_comparison"].add(ok("euclidean_comparison"), min(L_eu - 0.5 * L, 2 * L - L_eu), max(L, L_eu))

    x = path.states
    box = float(np.max(np.abs(x[:, :2])))
    R["box_bound"].add(ok("box_bound"), 8 * epsilon - box, 8 * epsilon)

    lam, x1, x2 = _dense_points(path, p)
    t = -phi_minus_one(x1, x2, p)
    s = np.sqrt(1.0 - t) + 1.0 - 0.5 * t
    remainder = -0.25 * t * t / s  # sqrt(1 - t) - 1 + t/2, exact identity
    _add_pointwise(R["sqrt_taylor_two_sided"], ok("sqrt_taylor_two_sided"), 0.25 * t * t - np.abs(remainder), 0.25 * t * t)
    _add_pointwise(R["sqrt_taylor_literal_lower"], ok("sqrt_taylor_literal_lower"), remainder - t / 6, np.abs(t))
    _add_pointwise(R["sqrt_taylor_literal_upper"], ok("sqrt_taylor_literal_upper"), -remainder, np.abs(t))

    d1, d2 = path.dx[:, 0, None], path.dx[:, 1, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        u2 = np.abs(d2) / np.sqrt(d1**2 + phi(x1, x2, p) * d2**2)
    u2max = float(np.nanmax(u2)) if u2.size else 0.0
    R["u2_bound_2"].add(ok("u2_bound_2"), 2.0 - u2max, 2.0)
    R["u2_bound_sqrt2"].add(ok("u2_bound_sqrt2"), math.sqrt(2) - u2max, math.sqrt(2))

    J = curves.functional_J(path, p)
    B = curves.beta(path, p)
    tau = path.tau
    pdot = curves.P_dot_max(path, p) if hyp["b_even"] else math.nan
    R["P_dot_bound"].add(ok("P_dot_bound"), 1.0 - pdot, 1.0)

    upper = B * B * (excess + B * tau) + B**3 * tau
    R["J_upper"].add(ok("J_upper"), upper - J, max(abs(J), abs(upper), 1e-300))
    R["J_lower"].add(ok("J_lower"), J - B**3 / 8, max(abs(J), B**3 / 8, 1e-300))
    chain = excess - B * (0.125 - 2 * tau)
    R["final_chain"].add(ok("final_chain"), chain, max(abs(excess), B * abs(0.125 - 2 * tau), 1e-300))

    rep.rows.append({
        "seed": path.meta.get("seed", -1),
        "magnitude": path.meta.get("magnitude", math.nan),
        "tau": tau,
        "tau_minus_2eps": excess,
        "beta": B,
        "J": J,
        "J_upper": upper,
        "J_lower": B**3 / 8,
        "P_dot_max": pdot,
        "box": box,
        "L_eu": L_eu,
    })
    return rep


def _audit_one(args):
    seed, epsilon, magnitude, p, nodes = args
    try:
        path = sample_admissible_competitor(seed, epsilon, magnitude, p, nodes=nodes)
    except (curves.CorrectionError, ValueError):
        return None
    return audit_bounds(path, epsilon, p)


def magnitudes(n: int, lo: float = 1e-9, hi: float = 1.0) -> np.ndarray:
    """Zero (gamma itself) then log-spaced magnitudes, cycling so any prefix covers the range."""
    grid = np.concatenate([[0.0], np.logspace(math.log10(lo), math.log10(hi), 15)])
    return np.resize(grid, n)


def run_audit(n_samples: int, epsilon: float, p: ModelParams, seed: int = 0, threads: int = 1,
              nodes: int = 200, mag_range: tuple[float, float] = (1e-9, 1.0)) -> AuditReport:
    """Audit ``n_samples`` generated competitors; sample ``k`` uses seed ``seed + k``."""
    mags = magnitudes(n_samples, *mag_range)
    jobs = [(seed + k, epsilon, float(mags[k]), p, nodes) for k in range(n_samples)]
    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            parts = list(ex.map(_audit_one, jobs))
    else:
        parts = [_audit_one(j) for j in jobs]
    rep = AuditReport()
    for part in parts:
        if part is None:
            rep.failed += 1
        else:
            rep.merge(part)
    rep.rows.sort(key=lambda r: r["seed"])
    return rep


def write_rows_csv(rows: list[dict], fname) -> None:
    if not rows:
        open(fname, "w").close()
        return
    keys = list(rows[0])
    with open(fname, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(keys)
        for r in rows:
            wr.writerow([f"{r[k]:.17g}" if isinstance(r[k], float) else r[k] for k in keys])


def report_json(rep: AuditReport) -> str:
    return json.dumps(rep.to_dict(), sort_keys=True, indent=2)
