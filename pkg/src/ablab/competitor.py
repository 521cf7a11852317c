"""Cut-and-correct competitor for gamma|[0, eps].

omega = kappa * gamma|[2 rho, eps] * sigma where kappa is the tent through
(h, rho) and sigma the clockwise boundary of (0, eps) + [0, delta] x [0, eps delta],
with delta chosen so the x3 drift of kappa is cancelled exactly.

Length margins are tiny (1e-17 at desk scale, far smaller in the asymptotic
regime), so the double-precision margin is assembled from per-segment excess
terms; an mpmath oracle recomputes it by raw subtraction.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from fractions import Fraction
from typing import Callable

import mpmath
import numpy as np
from scipy import integrate as spi

from . import curves
from .curves import HorizontalPath, planar_path, segment_excess, segment_lengths, solve_monotone
from .srmodel import AlphaSpec, ModelParams

ORACLE_DPS = 100


class RegimeError(ValueError):
    """Parameters outside the range where the construction is defined."""


# ----------------------------------------------------------------------------
# closed forms


def c1_fraction(b: int) -> Fraction:
    """Exact rational value of int_0^1 t^(2+b) dt + int_1^2 (2-t)^2 t^b dt."""
    return (
        Fraction(1, b + 3)
        + Fraction(4 * (2 ** (b + 1) - 1), b + 1)
        - Fraction(4 * (2 ** (b + 2) - 1), b + 2)
        + Fraction(2 ** (b + 3) - 1, b + 3)
    )


def c1_constant(b: int) -> float:
    if b < 0 or int(b) != b:
        raise ValueError("b must be a natural number")
    return float(c1_fraction(int(b)))


def delta3_cut(rho: float, h: float, b: int) -> float:
    return c1_constant(b) * h * h * rho ** (b + 1)


def f_delta(delta, b: int):
    """((1 + delta)^(b+1) - 1) / delta, stable as delta -> 0 (limit b + 1)."""
    delta = np.asarray(delta, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.expm1((b + 1) * np.log1p(delta)) / delta
    return np.where(delta == 0, float(b + 1), out)


def delta3_rect(delta: float, epsilon: float, b: int, orientation: int = 1) -> float:
    """Signed x3 change along the boundary of (0, eps) + [0, delta] x [0, eps delta].

    ``orientation=1`` is clockwise (negative change); ``-1`` reverses it.
    """
    val = -(epsilon ** (b + 1) / (b + 1)) * delta * delta * math.expm1((b + 1) * math.log1p(delta))
    return orientation * val


def stokes_oracle(delta: float, epsilon: float, b: int, orientation: int = 1) -> float:
    """Numerical line integral of x1^2 x2^b dx2 around the rectangle (adaptive quadrature)."""
    corners = [(0.0, epsilon), (0.0, epsilon * (1 + delta)), (delta, epsilon * (1 + delta)), (delta, epsilon), (0.0, epsilon)]
    if orientation < 0:
        corners = corners[::-1]
    total = 0.0
    for (a1, a2), (c1, c2) in zip(corners[:-1], corners[1:]):
        d2 = c2 - a2
        if d2 == 0.0:
            continue

        def integrand(s, a1=a1, a2=a2, c1=c1, d2=d2):
            x1 = a1 + s * (c1 - a1)
            x2 = a2 + s * d2
            return x1 * x1 * x2**b * d2

        val, _ = spi.quad(integrand, 0.0, 1.0, epsabs=0.0, epsrel=1e-13, limit=200)
        total += val
    return total


def cut_delta3_quadrature(rho: float, h: float, b: int) -> float:
    """int_0^2 kappa1^2 kappa2^b kappa2' dt by adaptive quadrature."""
    first, _ = spi.quad(lambda t: (t * h) ** 2 * (t * rho) ** b * rho, 0.0, 1.0, epsabs=0.0, epsrel=1e-13)
    second, _ = spi.quad(lambda t: ((2 - t) * h) ** 2 * (t * rho) ** b * rho, 1.0, 2.0, epsabs=0.0, epsrel=1e-13)
    return first + second


def solve_delta_for_target(target: float, b: int) -> float:
    """Unique delta > 0 with delta^3 f(delta) = target."""
    if not target > 0:
        raise RegimeError("the x3 budget must be positive")
    g = lambda d: d * d * math.expm1((b + 1) * math.log1p(d))  # noqa: E731
    return solve_monotone(g, target, guess=(target / (b + 1)) ** (1 / 3))


def delta_budget(rho: float, h: float, epsilon: float, b: int) -> float:
    """Right-hand side C1 (b+1) h^2 rho^(b+1) / eps^(b+1) of the delta equation."""
    return c1_constant(b) * (b + 1) * h * h * rho ** (b + 1) / epsilon ** (b + 1)


def solve_delta(rho: float, h: float, epsilon: float, p: ModelParams) -> float:
    b = p.b
    target = delta_budget(rho, h, epsilon, b)
    if target == 0.0:
        raise RegimeError(f"x3 budget underflows double precision (rho={rho:g}, h={h:g})")
    delta = solve_delta_for_target(target, b)
    if not (delta < 0.5 and epsilon * (1 + delta) < 1.0):
        raise RegimeError(f"rectangle of size {delta:.3g} leaves M")
    return delta


def delta_residual(delta: float, rho: float, h: float, epsilon: float, b: int) -> float:
    target = delta_budget(rho, h, epsilon, b)
    return abs(delta**3 * float(f_delta(delta, b)) - target) / target


# ----------------------------------------------------------------------------
# plan and path


@dataclass(frozen=True)
class CompetitorPlan:
    epsilon: float
    rho: float
    h: float
    delta: float
    orientation: int = 1
    c_exponent: float | None = None

    def check(self, p: ModelParams) -> None:
        if not (0 < self.rho and 2 * self.rho < self.epsilon < 1):
            raise RegimeError("need 0 < 2 rho < eps < 1")
        if not (0 < self.h < 0.5):
            raise RegimeError("need 0 < h < 1/2")
        if not (0 < self.delta < 0.5 and self.epsilon * (1 + self.delta) < 1):
            raise RegimeError("rectangle leaves M")


def snap_rho(rho: float, epsilon: float) -> float:
    """Round rho to a multiple of ulp(eps)/2 so that 2 rho and eps - 2 rho are exact doubles."""
    q = math.ulp(epsilon) / 2
    if rho < 1e3 * q:
        return rho
    return round(rho / q) * q


def make_plan(epsilon: float, rho: float, h: float, p: ModelParams, c_exponent=None, snap: bool = True) -> CompetitorPlan:
    if snap:
        rho = snap_rho(rho, epsilon)
    if not (0 < rho and 2 * rho < epsilon < 1):
        raise RegimeError("need 0 < 2 rho < eps < 1")
    if not (0 < h < 0.5):
        raise RegimeError("need 0 < h < 1/2")
    delta = solve_delta(rho, h, epsilon, p)
    return CompetitorPlan(epsilon, rho, h, delta, 1, c_exponent)


def cut_curve(rho: float, h: float, p: ModelParams) -> HorizontalPath:
    """The tent kappa(t) = t (h, rho) on [0, 1], ((2 - t) h, t rho) on [1, 2]."""
    if not (0 < h < 0.5 and 0 < rho and 2 * rho < 1):
        raise RegimeError("cut curve leaves M")
    return planar_path([0.0, 0.0, 0.0], [[h, rho], [-h, rho]], p, dt=[1.0, 1.0])


def rectangle_loop(delta: float, epsilon: float, p: ModelParams, orientation: int = 1, parameterization="arclength") -> HorizontalPath:
    inc = curves.loop_increments(delta, 0.0, epsilon, orientation)
    return planar_path([0.0, epsilon, 0.0], inc, p, parameterization=parameterization)


def build_competitor(plan: CompetitorPlan, p: ModelParams) -> HorizontalPath:
    """Arc-length parameterised concatenation kappa * gamma|[2 rho, eps] * sigma."""
    plan.check(p)
    eps, rho, h = plan.epsilon, plan.rho, plan.h
    inc = np.vstack([
        [[h, rho], [-h, rho], [0.0, eps - 2 * rho]],
        curves.loop_increments(plan.delta, 0.0, eps, plan.orientation),
    ])
    return planar_path([0.0, 0.0, 0.0], inc, p, parameterization="arclength", meta={"plan": asdict(plan)})


# ----------------------------------------------------------------------------
# margins


@dataclass(frozen=True)
class MarginReport:
    epsilon: float
    rho: float
    h: float
    delta: float
    cut_gain: float
    tail_length: float
    loop_cost: float
    margin: float
    cut_length: float
    raw_total_length: float
    raw_margin: float
    loop_bound_ok: bool

    def to_dict(self) -> dict:
        return asdict(self)


def margin(plan: CompetitorPlan, p: ModelParams) -> MarginReport:
    """Length saved by the competitor, ``eps - L(omega) = cut_gain - loop_cost``."""
    plan.check(p)
    kappa = planar_path([0.0, 0.0, 0.0], [[plan.h, plan.rho], [-plan.h, plan.rho]], p)
    cut_gain = -math.fsum(segment_excess(kappa, p))
    cut_length = math.fsum(segment_lengths(kappa, p))
    loop = rectangle_loop(plan.delta, plan.epsilon, p, plan.orientation)
    loop_cost = math.fsum(segment_lengths(loop, p))
    tail = plan.epsilon - 2 * plan.rho
    raw_total = cut_length + tail + loop_cost
    return MarginReport(
        epsilon=plan.epsilon,
        rho=plan.rho,
        h=plan.h,
        delta=plan.delta,
        cut_gain=cut_gain,
        tail_length=tail,
        loop_cost=loop_cost,
        margin=cut_gain - loop_cost,
        cut_length=cut_length,
        raw_total_length=raw_total,
        raw_margin=plan.epsilon - raw_total,
        loop_bound_ok=loop_cost <= 4 * plan.delta * max(1.0, plan.epsilon),
    )


def _alpha_mp(alpha: AlphaSpec, t):
    if alpha.kind == "constant":
        return mpmath.mpf(alpha.c)
    if alpha.kind == "polynomial":
        return mpmath.polyval([mpmath.mpf(c) for c in alpha.coeffs[::-1]], t) if alpha.coeffs else mpmath.mpf(0)
    s = (t - mpmath.mpf(alpha.center)) / (mpmath.mpf(alpha.width) / 2)
    if abs(s) >= 1:
        return mpmath.mpf(0)
    return mpmath.mpf(alpha.height) * mpmath.exp(1 - 1 / (1 - s * s))


def margin_oracle(epsilon: float, rho: float, h: float, p: ModelParams, dps: int = ORACLE_DPS) -> dict:
    """Extended-precision ``eps - L(omega)`` by direct subtraction.

    delta is re-solved in mpmath from the same budget equation, and every
    length is integrated with tanh-sinh quadrature at ``dps`` digits.
    """
    if dps < 80:
        raise ValueError("oracle needs at least 80 digits")
    b, a = p.b, p.a
    with mpmath.workdps(dps):
        eps, rho_, h_ = mpmath.mpf(epsilon), mpmath.mpf(rho), mpmath.mpf(h)
        C1 = mpmath.mpf(c1_fraction(b).numerator) / c1_fraction(b).denominator
        K = C1 * (b + 1) * h_**2 * rho_ ** (b + 1) / eps ** (b + 1)
        logK = mpmath.log(K)
        F = lambda y: 2 * y + mpmath.log(mpmath.expm1((b + 1) * mpmath.log1p(mpmath.exp(y)))) - logK  # noqa: E731
        y0 = (logK - mpmath.log(b + 1)) / 3
        delta = mpmath.exp(mpmath.findroot(F, y0, tol=mpmath.mpf(10) ** (-dps + 10)))

        def phi_mp(x1, x2):
            return 1 - _alpha_mp(p.alpha, x2) * x1 * x2**a

        up = lambda t: mpmath.sqrt(h_**2 + phi_mp(t * h_, t * rho_) * rho_**2)  # noqa: E731
        down = lambda t: mpmath.sqrt(h_**2 + phi_mp((2 - t) * h_, t * rho_) * rho_**2)  # noqa: E731
        L_kappa = mpmath.quad(up, [0, 1]) + mpmath.quad(down, [1, 2])
        tail = eps - 2 * rho_
        right = mpmath.quad(lambda x2: mpmath.sqrt(phi_mp(delta, x2)), [eps, eps * (1 + delta)])
        L_sigma = eps * delta + 2 * delta + right
        total = L_kappa + tail + L_sigma
        m = eps - total
        return {
            "delta": float(delta),
            "margin": float(m),
            "margin_str": mpmath.nstr(m, 30),
            "cut_gain": float(2 * rho_ - L_kappa),
            "loop_cost": float(L_sigma),
            "dps": dps,
        }


def oracle_dps_for(margin_estimate: float, base: int = ORACLE_DPS) -> int:
    """Digits needed to resolve ``margin_estimate`` next to O(1) lengths with ~30 digits to spare."""
    if margin_estimate <= 0:
        return base
    return max(base, int(math.ceil(-math.log10(margin_estimate))) + 40)


# ----------------------------------------------------------------------------
# the asymptotic regime used in the non-minimality proof


def paper_regime_check(a: int, b: int, c: float, rho, epsilon, p: ModelParams | None = None, dps: int = ORACLE_DPS) -> dict:
    """Evaluate every hypothesis of the asymptotic construction in extended precision.

    Checks ``b > 4a + 4``, ``4a + 4 + 4c <= b``, the smallness condition
    ``rho^c < min(1/4, (eps^(b+1)/C)^(1/3) / 32)`` with ``C = (b+1) C1``,
    ``h = rho^(a+2+c)``, and reports the final chain value
    ``rho^(2a+3+c) (4 (C/eps^(b+1))^(1/3) rho^c - 1/8)`` whose negativity
    certifies a positive margin.
    """
    with mpmath.workdps(dps):
        eps = mpmath.mpf(epsilon)
        c_ = mpmath.mpf(c)
        C1 = mpmath.mpf(c1_fraction(b).numerator) / c1_fraction(b).denominator
        C = (b + 1) * C1
        kappa_bound = (eps ** (b + 1) / C) ** (mpmath.mpf(1) / 3) / 32
        rho_c_bound = min(mpmath.mpf(1) / 4, kappa_bound)
        rho_max = rho_c_bound ** (1 / c_) if c > 0 else mpmath.mpf(0)
        rho_ = mpmath.mpf(rho) if rho is not None else rho_max / 2
        h = rho_ ** (a + 2 + c_)
        chain = rho_ ** (2 * a + 3 + c_) * (4 * (C / eps ** (b + 1)) ** (mpmath.mpf(1) / 3) * rho_**c_ - mpmath.mpf(1) / 8)
        lenk_condition = (h / rho_) ** 2 <= h * rho_**a / 4
        delta_cube_bound = C / eps ** (b + 1) * h**2 * rho_ ** (b + 1)
        checks = {
            "b_gt_4a_plus_4": b > 4 * a + 4,
            "c_positive": c > 0,
            "c_constraint": 4 * a + 4 + 4 * c <= b,
            "epsilon_in_unit_interval": 0 < epsilon < 1,
            "rho_positive_below_eps": bool(0 < rho_ < eps),
            "rho_small": bool(rho_**c_ < rho_c_bound),
            "cut_length_condition": bool(lenk_condition),
        }
        if p is not None:
            checks["alpha_identically_one"] = p.alpha.kind == "constant" and p.alpha.c == 1.0
            checks["model_matches"] = p.a == a and p.b == b
        tiny = mpmath.mpf(2.2250738585072014e-308)
        extended_needed = bool(rho_max < tiny or h**2 < tiny or delta_cube_bound < tiny or abs(chain) < tiny)
        all_hold = all(checks.values())
        return {
            "a": a,
            "b": b,
            "c": c,
            "epsilon": float(epsilon),
            "rho": mpmath.nstr(rho_, 20),
            "h": mpmath.nstr(h, 20),
            "rho_max": mpmath.nstr(rho_max, 20),
            "rho_c_bound": mpmath.nstr(rho_c_bound, 20),
            "delta_cube_bound": mpmath.nstr(delta_cube_bound, 20),
            "final_chain": mpmath.nstr(chain, 20),
            "margin_lower_bound": mpmath.nstr(-chain, 20),
            "checks": checks,
            "all_hold": all_hold,
            "margin_positive": bool(all_hold and chain < 0),
            "extended_precision_required": extended_needed,
            "dps": dps,
        }


# ----------------------------------------------------------------------------
# scan


def h_rule_from_string(rule: str) -> Callable[[float], float]:
    """``'rho^3/4'`` style rules: ``rho^k/d`` or ``rho^k``."""
    rule = rule.replace(" ", "")
    if not rule.startswith("rho^"):
        raise ValueError(f"unsupported h rule {rule!r}")
    expo, _, den = rule[4:].partition("/")
    k, d = float(expo), float(den or 1)
    return lambda rho: rho**k / d


def _scan_point(args):
    epsilon, rho, h_rule, p = args
    h = h_rule(rho)
    try:
        plan = make_plan(epsilon, rho, h, p)
    except RegimeError:
        return None
    return margin(plan, p)


def scan(epsilon: float, rho_grid, h_rule, p: ModelParams, threads: int = 1) -> dict:
    """Best stable margin over ``rho_grid`` with ``h = h_rule(rho)`` and matched delta."""
    if isinstance(h_rule, str):
        h_rule = h_rule_from_string(h_rule)
    rho_grid = list(rho_grid)
    if not rho_grid:
        raise ValueError("empty rho grid")
    jobs = [(epsilon, float(r), h_rule, p) for r in rho_grid]
    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            reports = list(ex.map(_scan_point, jobs))
    else:
        reports = [_scan_point(j) for j in jobs]
    valid = [r for r in reports if r is not None]
    if not valid:
        return {"best": None, "points": []}
    best = max(valid, key=lambda r: (r.margin, -r.rho, -r.h))
    return {"best": best, "points": valid, "skipped": len(reports) - len(valid)}
