"""Rank-2 sub-Riemannian structure on M = (-1/2, 1/2) x (-1, 1) x R.

Frame ``X1 = d1``, ``X2 = d2 + psi d3`` with ``psi = x1^2 x2^b``, metric
``g(u1 X1 + u2 X2) = u1^2 + phi u2^2`` with ``phi = 1 - alpha(x2) x1 x2^a``.
The reference curve is ``gamma(t) = (0, t, 0)``.

Every scalar function here broadcasts over numpy arrays; the public ``eval_*``
entry points additionally validate that the point lies in the domain.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

X1_HALF_WIDTH = 0.5
X2_HALF_WIDTH = 1.0
DOMAIN_TOL = 1e-12

BRACKET_WORDS = ("[X1,X2]", "[X1,[X1,X2]]", "[X2,[X1,X2]]")


class DomainError(ValueError):
    """A point (or a trajectory) left the coordinate box of M."""


class Point3(NamedTuple):
    x1: float
    x2: float
    x3: float


class TangentVector(NamedTuple):
    v1: float
    v2: float
    v3: float


def gamma(t):
    """The abnormal reference curve t -> (0, t, 0)."""
    t = np.asarray(t, dtype=float)
    return np.stack([np.zeros_like(t), t, np.zeros_like(t)], axis=-1)


def check_domain(x, tol: float = DOMAIN_TOL) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != 3:
        raise ValueError(f"expected points with 3 coordinates, got shape {x.shape}")
    bad = (np.abs(x[..., 0]) > X1_HALF_WIDTH + tol) | (np.abs(x[..., 1]) > X2_HALF_WIDTH + tol)
    if np.any(bad) or not np.all(np.isfinite(x)):
        first = x[bad][0] if np.any(bad) else x
        raise DomainError(f"point outside M: {first}")
    return x


# ----------------------------------------------------------------------------
# alpha


@dataclass(frozen=True)
class AlphaSpec:
    """The weight alpha: (-1, 1) -> [0, 1] entering the x2-direction metric.

    ``kind`` is one of ``constant`` (``c``), ``polynomial`` (``coeffs``,
    ascending powers) or ``bump`` (smooth compact bump of full support
    ``width`` around ``center`` with peak ``height``).
    """

    kind: str
    c: float = 0.0
    coeffs: tuple = ()
    center: float = 0.0
    width: float = 0.0
    height: float = 0.0
    validate: bool = field(default=True, compare=False, repr=False)

    def __post_init__(self):
        if self.kind not in ("constant", "polynomial", "bump"):
            raise ValueError(f"unknown alpha kind {self.kind!r}")
        if self.kind == "polynomial":
            object.__setattr__(self, "coeffs", tuple(float(c) for c in self.coeffs))
        if self.kind == "bump" and self.width <= 0:
            raise ValueError("bump width must be positive")
        if self.validate:
            self._check()

    @classmethod
    def constant(cls, c: float) -> "AlphaSpec":
        return cls("constant", c=float(c))

    @classmethod
    def polynomial(cls, coeffs: Sequence[float]) -> "AlphaSpec":
        return cls("polynomial", coeffs=tuple(coeffs))

    @classmethod
    def bump(cls, center: float, width: float, height: float = 1.0) -> "AlphaSpec":
        return cls("bump", center=float(center), width=float(width), height=float(height))

    def _check(self):
        t = np.linspace(-1.0, 1.0, 2001)[1:-1]
        v = self.value(t)
        if np.any(v < -1e-12) or np.any(v > 1 + 1e-12):
            raise ValueError(f"alpha leaves [0, 1] on (-1, 1): range [{v.min()}, {v.max()}]")
        h = 1e-6
        ts = np.linspace(-0.99, 0.99, 199)
        fd = (self.value(ts + h) - self.value(ts - h)) / (2 * h)
        d = self.derivative(ts)
        err = np.abs(fd - d) / np.maximum(np.abs(d), 1.0)
        if np.any(err > 1e-5):
            raise ValueError("alpha derivative inconsistent with its value")

    def is_zero(self) -> bool:
        if self.kind == "constant":
            return self.c == 0.0
        if self.kind == "polynomial":
            return all(c == 0.0 for c in self.coeffs)
        return self.height == 0.0

    def value(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "constant":
            return np.full_like(t, self.c)
        if self.kind == "polynomial":
            return np.polynomial.polynomial.polyval(t, self.coeffs) if self.coeffs else np.zeros_like(t)
        s = np.atleast_1d((t - self.center) / (0.5 * self.width))
        out = np.zeros_like(s)
        inside = np.abs(s) < 1
        si = s[inside]
        out[inside] = self.height * np.exp(1.0 - 1.0 / (1.0 - si * si))
        return out.reshape(t.shape)

    def derivative(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "constant":
            return np.zeros_like(t)
        if self.kind == "polynomial":
            if len(self.coeffs) < 2:
                return np.zeros_like(t)
            return np.polynomial.polynomial.polyval(t, np.polynomial.polynomial.polyder(self.coeffs))
        hw = 0.5 * self.width
        s = np.atleast_1d((t - self.center) / hw)
        out = np.zeros_like(s)
        inside = np.abs(s) < 1
        si = s[inside]
        q = 1.0 - si * si
        out[inside] = self.height * np.exp(1.0 - 1.0 / q) * (-2.0 * si / (q * q)) / hw
        return out.reshape(t.shape)

    def vanishes_on(self, t1: float, t2: float) -> bool:
        """Exact support test, used as ground truth against the numerical criterion."""
        if self.kind == "constant":
            return self.c == 0.0
        if self.kind == "bump":
            lo, hi = self.center - 0.5 * self.width, self.center + 0.5 * self.width
            return self.height == 0.0 or t2 <= lo or t1 >= hi
        return self.is_zero()

    def to_dict(self) -> dict:
        if self.kind == "constant":
            return {"kind": "constant", "c": self.c}
        if self.kind == "polynomial":
            return {"kind": "polynomial", "coeffs": list(self.coeffs)}
        return {"kind": "bump", "center": self.center, "width": self.width, "height": self.height}

    @classmethod
    def from_dict(cls, d: dict) -> "AlphaSpec":
        allowed = {
            "constant": {"kind", "c"},
            "polynomial": {"kind", "coeffs"},
            "bump": {"kind", "center", "width", "height"},
        }
        kind = d.get("kind")
        if kind not in allowed:
            raise ValueError(f"unknown alpha kind {kind!r}")
        extra = set(d) - allowed[kind]
        if extra:
            raise ValueError(f"unknown alpha fields {sorted(extra)}")
        if kind == "constant":
            return cls.constant(d["c"])
        if kind == "polynomial":
            return cls.polynomial(d["coeffs"])
        return cls.bump(d["center"], d["width"], d.get("height", 1.0))

    @classmethod
    def parse(cls, text: str) -> "AlphaSpec":
        """Parse a CLI shorthand: ``0.5``, ``const:1``, ``poly:c0,c1,..`` or
        ``bump:center,width[,height]``; JSON objects are accepted too."""
        text = text.strip()
        if text.startswith("{"):
            return cls.from_dict(json.loads(text))
        if ":" not in text:
            return cls.constant(float(text))
        kind, _, rest = text.partition(":")
        nums = [float(v) for v in rest.split(",") if v]
        if kind in ("const", "constant"):
            return cls.constant(nums[0])
        if kind in ("poly", "polynomial"):
            return cls.polynomial(nums)
        if kind == "bump":
            return cls.bump(*nums)
        raise ValueError(f"cannot parse alpha {text!r}")


@dataclass(frozen=True)
class ModelParams:
    a: int
    b: int
    alpha: AlphaSpec

    def __post_init__(self):
        for name in ("a", "b"):
            v = getattr(self, name)
            if isinstance(v, bool) or int(v) != v or v < 0:
                raise ValueError(f"{name} must be a natural number, got {v!r}")
            object.__setattr__(self, name, int(v))

    def to_dict(self) -> dict:
        return {"a": self.a, "b": self.b, "alpha": self.alpha.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelParams":
        extra = set(d) - {"a", "b", "alpha"}
        if extra:
            raise ValueError(f"unknown model fields {sorted(extra)}")
        return cls(d["a"], d["b"], AlphaSpec.from_dict(d["alpha"]))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ModelParams":
        return cls.from_dict(json.loads(text))


# ----------------------------------------------------------------------------
# unchecked vectorised kernels


def psi(x1, x2, b: int):
    return x1 * x1 * x2**b


def dpsi_dx1(x1, x2, b: int):
    return 2.0 * x1 * x2**b


def phi_minus_one(x1, x2, p: ModelParams):
    """phi - 1 = -alpha(x2) x1 x2^a, computed without forming phi."""
    return -p.alpha.value(x2) * x1 * x2**p.a


def phi(x1, x2, p: ModelParams):
    return 1.0 + phi_minus_one(x1, x2, p)


def phi_partials(x1, x2, p: ModelParams):
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    al = p.alpha.value(x2)
    d1 = -al * x2**p.a
    dx2a = p.a * x2 ** (p.a - 1) if p.a >= 1 else np.zeros_like(x2)
    d2 = -(p.alpha.derivative(x2) * x2**p.a + al * dx2a) * x1
    return d1, d2


# ----------------------------------------------------------------------------
# checked operations


def eval_psi(x, p: ModelParams):
    x = check_domain(x)
    return psi(x[..., 0], x[..., 1], p.b)


def eval_phi(x, p: ModelParams):
    """Return ``(phi, dphi/dx1, dphi/dx2)`` at ``x``."""
    x = check_domain(x)
    x1, x2 = x[..., 0], x[..., 1]
    d1, d2 = phi_partials(x1, x2, p)
    return phi(x1, x2, p), d1, d2


def metric_eval(x, u, p: ModelParams):
    """Squared norm ``g(u1 X1 + u2 X2)`` of the horizontal vector with frame coefficients ``u``."""
    x = check_domain(x)
    u = np.asarray(u, dtype=float)
    return u[..., 0] ** 2 + phi(x[..., 0], x[..., 1], p) * u[..., 1] ** 2


def frame(x, p: ModelParams):
    """Coordinate components of X1(x) and X2(x)."""
    x = np.asarray(x, dtype=float)
    one = np.ones(x.shape[:-1])
    zero = np.zeros(x.shape[:-1])
    X1 = np.stack([one, zero, zero], axis=-1)
    X2 = np.stack([zero, one, psi(x[..., 0], x[..., 1], p.b)], axis=-1)
    return X1, X2


def bracket_vertical_coeff(word: str, x, p: ModelParams):
    """d3-coefficient of a bracket of the frame; all these brackets are vertical."""
    x = check_domain(x)
    x1, x2 = x[..., 0], x[..., 1]
    b = p.b
    if word == "[X1,X2]":
        return 2.0 * x1 * x2**b
    if word == "[X1,[X1,X2]]":
        return 2.0 * x2**b * np.ones_like(x1)
    if word == "[X2,[X1,X2]]":
        if b == 0:
            return np.zeros_like(x1)
        return 2.0 * b * x1 * x2 ** (b - 1)
    raise ValueError(f"unknown bracket word {word!r}; expected one of {BRACKET_WORDS}")


def degeneracy_margin(t, p: ModelParams):
    """max |<dx3, [Xi,[X1,X2]]>| along gamma(t); zero means the non-degeneracy condition fails."""
    g = gamma(t)
    c1 = np.abs(bracket_vertical_coeff("[X1,[X1,X2]]", g, p))
    c2 = np.abs(bracket_vertical_coeff("[X2,[X1,X2]]", g, p))
    return np.maximum(c1, c2)


def martinet_residual(x, p: ModelParams):
    """d psi / d x1; the Martinet surface is its zero set."""
    x = check_domain(x)
    return dpsi_dx1(x[..., 0], x[..., 1], p.b)


def zeta_pairing(x, v, p: ModelParams):
    """Pair ``v`` with the annihilator ``zeta = dx3 - psi dx2`` of the distribution."""
    x = check_domain(x)
    v = np.asarray(v, dtype=float)
    return v[..., 2] - psi(x[..., 0], x[..., 1], p.b) * v[..., 1]


def is_abnormal_path(states, p: ModelParams, tol: float = 0.0) -> bool:
    """A path is abnormal iff it stays on the Martinet surface."""
    return bool(np.all(np.abs(martinet_residual(states, p)) <= tol))
