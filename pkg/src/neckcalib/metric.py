"""Metric data on the neck M × N: factor profiles, fiber metrics, q0 search.

The fiber N is an axis-aligned box in R^t.  Every factor profile is a
function of ``r² = |q|²`` (for t = 1 simply ``s²``), which keeps all four
profile kinds even under ``q -> -q``.
"""

from __future__ import annotations

import dataclasses
import itertools
import math
from dataclasses import dataclass
from typing import Any, Callable, Optional, Sequence

import numpy as np
from scipy import optimize

from . import geometry as geo
from .errors import (DomainError, InvalidArgumentError, NumericalDegeneracyError,
                     SpecViolationError, StateError)
from .linalg import gram

PROFILE_KINDS = ("constant", "even-polynomial", "jlt", "reciprocal-jlt")
FIBER_KINDS = ("euclidean", "jlt-induced", "explicit")
POSITIVITY_SAMPLES = 1024
DOMAIN_TOL = 1e-12


@dataclass(frozen=True)
class FactorProfile:
    """One squared conformal factor f_j² on the fiber.

    ``constant``        params (c,)            f = c, so f² = c²
    ``even-polynomial`` params (c0, c2, ...)   f² = c0 + c2 r² + c4 r⁴ + ...
    ``jlt``             params (a,)            f² = 1/a + r²
    ``reciprocal-jlt``  params (a,)            f² = 1 / (1/a + r²)
    """

    kind: str
    params: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "params", tuple(float(x) for x in self.params))
        if self.kind not in PROFILE_KINDS:
            raise InvalidArgumentError(f"unknown profile kind {self.kind!r}")
        if not all(math.isfinite(x) for x in self.params):
            raise InvalidArgumentError("profile parameters must be finite")
        if self.kind == "even-polynomial":
            if not self.params:
                raise InvalidArgumentError("even-polynomial needs at least c0")
        elif len(self.params) != 1 or self.params[0] <= 0:
            raise InvalidArgumentError(f"{self.kind} profile needs one positive parameter")

    def sq_r2(self, r2):
        """f² as a function of r² (vectorised)."""
        r2 = np.asarray(r2, dtype=float)
        if self.kind == "constant":
            return np.full(r2.shape, self.params[0] ** 2)
        if self.kind == "even-polynomial":
            # Horner in r²
            acc = np.zeros(r2.shape)
            for c in reversed(self.params):
                acc = acc * r2 + c
            return acc
        a = self.params[0]
        if self.kind == "jlt":
            return 1.0 / a + r2
        return 1.0 / (1.0 / a + r2)

    def dsq_dr2(self, r2):
        r2 = np.asarray(r2, dtype=float)
        if self.kind == "constant":
            return np.zeros(r2.shape)
        if self.kind == "even-polynomial":
            acc = np.zeros(r2.shape)
            for i, c in reversed(list(enumerate(self.params))):
                if i:
                    acc = acc * r2 + i * c
            return acc
        a = self.params[0]
        if self.kind == "jlt":
            return np.ones(r2.shape)
        return -1.0 / (1.0 / a + r2) ** 2

    def sq(self, q):
        """f²(q) for fiber points q of shape (..., t)."""
        q = np.asarray(q, dtype=float)
        return self.sq_r2(np.sum(q * q, axis=-1))

    def to_config(self) -> dict[str, Any]:
        return {"kind": self.kind, "params": list(self.params)}


@dataclass(frozen=True)
class FiberMetricSpec:
    """Fiber metric h, evaluated at a base point p and a fiber point q.

    ``euclidean``    the identity on R^t
    ``jlt-induced``  t = 1, h = Π_j (1/a_j + s²) Σ_j x_j² / (1/a_j + s²)
    ``explicit``     ``func(p, q)`` returns a t×t SPD matrix (not serialisable)
    """

    kind: str = "euclidean"
    params: tuple[float, ...] = ()
    func: Optional[Callable[[np.ndarray, np.ndarray], Any]] = dataclasses.field(
        default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "params", tuple(float(x) for x in self.params))
        if self.kind not in FIBER_KINDS:
            raise InvalidArgumentError(f"unknown fiber metric kind {self.kind!r}")
        if self.kind == "jlt-induced" and (not self.params or min(self.params) <= 0):
            raise InvalidArgumentError("jlt-induced fiber metric needs positive a_1..a_n")
        if self.kind == "explicit" and self.func is None:
            raise InvalidArgumentError("explicit fiber metric needs a callable")

    def matrices(self, P, Q) -> np.ndarray:
        """Batched h(p, q): P (m, n), Q (m, t) -> (m, t, t)."""
        P = np.atleast_2d(np.asarray(P, dtype=float))
        Q = np.atleast_2d(np.asarray(Q, dtype=float))
        m, t = Q.shape
        if self.kind == "euclidean":
            return np.broadcast_to(np.eye(t), (m, t, t)).copy()
        if self.kind == "jlt-induced":
            inv_a = 1.0 / np.asarray(self.params)
            r2 = np.sum(Q * Q, axis=-1)
            den = inv_a[None, :] + r2[:, None]  # (m, n)
            coef = np.prod(den, axis=1) * np.sum(P * P / den, axis=1)
            return coef[:, None, None] * np.ones((1, 1, 1))
        H = np.stack([np.asarray(self.func(p, q), dtype=float).reshape(t, t)
                      for p, q in zip(P, Q)])
        _check_spd(H)
        return H

    def to_config(self) -> dict[str, Any]:
        if self.kind == "explicit":
            raise InvalidArgumentError("explicit fiber metrics cannot be serialised")
        cfg: dict[str, Any] = {"kind": self.kind}
        if self.params:
            cfg["params"] = list(self.params)
        return cfg


def _check_spd(H: np.ndarray) -> None:
    if not np.allclose(H, np.swapaxes(H, -1, -2), rtol=1e-12, atol=1e-14):
        raise SpecViolationError("fiber metric is not symmetric")
    if not np.all(np.isfinite(H)) or np.any(np.linalg.eigvalsh(H)[..., 0] <= 0):
        raise SpecViolationError("fiber metric is not positive definite")


@dataclass(frozen=True)
class NeckSpec:
    """The product (M × N, g(q) + h(p)) plus, once resolved, the point q0."""

    geometry: Any
    profiles: tuple[FactorProfile, ...]
    fiber_metric: FiberMetricSpec
    fiber_lo: tuple[float, ...]
    fiber_hi: tuple[float, ...]
    q0: Optional[tuple[float, ...]] = None
    coordinatewise_min: Optional[bool] = None
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "profiles", tuple(self.profiles))
        object.__setattr__(self, "fiber_lo", tuple(float(x) for x in self.fiber_lo))
        object.__setattr__(self, "fiber_hi", tuple(float(x) for x in self.fiber_hi))
        if len(self.fiber_lo) != len(self.fiber_hi) or not self.fiber_lo:
            raise InvalidArgumentError("fiber domain needs matching lo/hi of length t >= 1")
        if any(h <= l for l, h in zip(self.fiber_lo, self.fiber_hi)):
            raise InvalidArgumentError("fiber domain needs lo < hi on every axis")
        if len(self.profiles) != self.n:
            raise InvalidArgumentError(f"need {self.n} profiles, got {len(self.profiles)}")
        if self.k > self.n:
            raise InvalidArgumentError("base dimension exceeds ambient dimension")
        if self.fiber_metric.kind == "jlt-induced":
            if self.t != 1:
                raise InvalidArgumentError("jlt-induced fiber metric needs t = 1")
            if len(self.fiber_metric.params) != self.n:
                raise InvalidArgumentError("jlt-induced fiber metric needs n parameters")
        self._check_positive()
        if self.q0 is not None:
            object.__setattr__(self, "q0", tuple(float(x) for x in self.q0))
            self.check_fiber(self.q0)

    @property
    def n(self) -> int:
        return self.geometry.n

    @property
    def k(self) -> int:
        return self.geometry.k

    @property
    def t(self) -> int:
        return len(self.fiber_lo)

    @property
    def lo(self) -> np.ndarray:
        return np.array(self.fiber_lo)

    @property
    def hi(self) -> np.ndarray:
        return np.array(self.fiber_hi)

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    def _radial_range(self) -> tuple[float, float]:
        lo, hi = self.lo, self.hi
        near = np.where((lo <= 0) & (hi >= 0), 0.0, np.minimum(lo * lo, hi * hi))
        far = np.maximum(lo * lo, hi * hi)
        return math.sqrt(near.sum()), math.sqrt(far.sum())

    def _check_positive(self) -> None:
        rmin, rmax = self._radial_range()
        r = np.linspace(rmin, rmax, POSITIVITY_SAMPLES)
        for j, prof in enumerate(self.profiles):
            v = prof.sq_r2(r * r)
            if not np.all(np.isfinite(v)) or np.any(v <= 0):
                raise SpecViolationError(f"profile {j + 1} is not positive on the fiber domain")

    def check_fiber(self, q) -> np.ndarray:
        q = np.atleast_1d(np.asarray(q, dtype=float))
        if q.shape[-1] != self.t:
            raise InvalidArgumentError(f"fiber points live in R^{self.t}, got shape {q.shape}")
        slack = DOMAIN_TOL * np.maximum(1.0, np.abs(self.hi - self.lo))
        if np.any(q < self.lo - slack) or np.any(q > self.hi + slack):
            raise DomainError(f"fiber point {q.tolist()} outside {self.fiber_lo}..{self.fiber_hi}")
        return q

    def require_q0(self) -> np.ndarray:
        if self.q0 is None:
            raise StateError("q0 has not been resolved; call resolve_q0 first")
        return np.array(self.q0)

    def weights(self, Q) -> np.ndarray:
        """f_l²(q) for l = 1..n; Q (..., t) -> (..., n)."""
        Q = np.asarray(Q, dtype=float)
        return np.stack([prof.sq(Q) for prof in self.profiles], axis=-1)

    def fiber_matrices(self, P, Q) -> np.ndarray:
        return self.fiber_metric.matrices(P, Q)

    def with_q0(self, q0, coordinatewise_min: Optional[bool]) -> "NeckSpec":
        return dataclasses.replace(self, q0=tuple(np.atleast_1d(q0).tolist()),
                                   coordinatewise_min=coordinatewise_min)


# -- pointwise evaluation ------------------------------------------------

def eval_g(spec: NeckSpec, q, X, Y) -> float:
    """Base metric g(q)(X, Y) = Σ_l f_l²(q) X_l Y_l."""
    q = spec.check_fiber(q)
    w = spec.weights(q)
    return float(np.sum(w * np.asarray(X, dtype=float) * np.asarray(Y, dtype=float)))


def eval_h(spec: NeckSpec, p, U, W, q) -> float:
    """Fiber metric h(p)(U, W); the jlt-induced kind also reads the fiber point q."""
    p = spec.geometry.check_point(p)
    q = spec.check_fiber(q)
    H = spec.fiber_matrices(p[None, :], q[None, :])[0]
    return float(np.asarray(U, dtype=float) @ H @ np.asarray(W, dtype=float))


def product_factor(spec: NeckSpec, q) -> float:
    """Π_j f_j(q)."""
    q = spec.check_fiber(q)
    return float(np.prod(np.sqrt(spec.weights(q))))


def base_volume_form(spec: NeckSpec, q, X, orientation_sign: int = 1, p=None) -> float:
    """Signed vol_{g(q)}(X_1, ..., X_k) for rows X_i tangent to M.

    If ``p`` is given the rows are checked for tangency at p.
    """
    q = spec.check_fiber(q)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if p is not None:
        geo.orientation_sign(spec.geometry, p, X)
    G = gram(X, spec.weights(q))
    d = float(np.linalg.det(G)) if G.size else 1.0
    scale = max(1.0, float(np.prod(np.diag(G))))
    if d < -1e-12 * scale:
        raise NumericalDegeneracyError(f"Gram determinant {d:.3g} is negative")
    return orientation_sign * math.sqrt(max(d, 0.0))


# -- q0 search -----------------------------------------------------------

def _grid(spec: NeckSpec, per_axis: int) -> np.ndarray:
    axes = [np.linspace(l, h, per_axis) for l, h in zip(spec.fiber_lo, spec.fiber_hi)]
    pts = np.array(list(itertools.product(*axes)))
    return np.vstack([pts, spec.center[None, :]])


def _log_sq(spec: NeckSpec, idx: Sequence[int]):
    """Σ_{j in idx} log f_j² and its gradient in q."""
    profs = [spec.profiles[j] for j in idx]

    def value(Q):
        Q = np.asarray(Q, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            return sum(np.log(p.sq(Q)) for p in profs)

    def grad(q):
        q = np.asarray(q, dtype=float)
        r2 = float(q @ q)
        return sum(2.0 * q * float(p.dsq_dr2(r2)) / float(p.sq_r2(r2)) for p in profs)

    return value, grad


def _minimize(spec: NeckSpec, idx, per_axis: int, tol: float):
    """Grid search followed by local refinement of Σ_{j in idx} log f_j²."""
    value, grad = _log_sq(spec, idx)
    pts = _grid(spec, per_axis)
    vals = value(pts)
    if not np.all(np.isfinite(vals)):
        raise SpecViolationError("profile produced a non-finite value on the fiber grid")
    vmin = float(vals.min())
    tied = np.flatnonzero(vals <= vmin + 1e-12 * max(1.0, abs(vmin)))
    dist = np.round(np.linalg.norm(pts[tied] - spec.center, axis=1), 12)
    # closest to the centre first, then lexicographically smallest
    keys = [pts[tied, j] for j in reversed(range(spec.t))] + [dist]
    best = pts[tied[np.lexsort(keys)[0]]]
    best_val = float(value(best))

    lo, hi = spec.lo, spec.hi
    step = (hi - lo) / (per_axis - 1)
    a = np.maximum(lo, best - step)
    b = np.minimum(hi, best + step)
    if spec.t == 1:
        g = lambda s: float(grad(np.array([s]))[0])  # noqa: E731
        ga, gb = g(a[0]), g(b[0])
        if ga < 0 < gb:
            s = optimize.brentq(g, a[0], b[0], xtol=tol, rtol=4 * np.finfo(float).eps)
        else:
            s = optimize.minimize_scalar(lambda x: float(value(np.array([x]))),
                                         bounds=(a[0], b[0]), method="bounded",
                                         options={"xatol": tol}).x
        cand = np.array([s])
    else:
        res = optimize.minimize(lambda x: float(value(x)), best, jac=grad, method="L-BFGS-B",
                                bounds=list(zip(a, b)), options={"gtol": 1e-14, "ftol": 1e-16})
        cand = np.asarray(res.x)
    cand_val = float(value(cand))
    if cand_val < best_val - 1e-15 * max(1.0, abs(best_val)):
        best, best_val = cand, cand_val
    return best, best_val


def find_q0(spec: NeckSpec, grid_per_axis: int = 201, refine_tol: float = 1e-10):
    """Minimise Π f_j over the fiber box.

    Returns ``(q0, coordinatewise_min)``; the flag is true iff every
    individual f_j also attains its minimum over the box at q0.
    """
    if grid_per_axis < 3:
        raise InvalidArgumentError("grid_per_axis must be at least 3")
    if refine_tol <= 0:
        raise InvalidArgumentError("refine_tol must be positive")
    q0, _ = _minimize(spec, range(spec.n), grid_per_axis, refine_tol)
    tol = max(refine_tol, 1e-9)
    w0 = spec.weights(q0)
    coordwise = True
    for j in range(spec.n):
        _, vj = _minimize(spec, [j], grid_per_axis, refine_tol)
        mj = math.exp(vj)
        if w0[j] - mj > tol * max(1.0, mj):
            coordwise = False
            break
    return q0, coordwise


def resolve_q0(spec: NeckSpec, grid_per_axis: int = 201, refine_tol: float = 1e-10) -> NeckSpec:
    """Copy of ``spec`` with q0 and the coordinate-wise flag filled in."""
    q0, flag = find_q0(spec, grid_per_axis, refine_tol)
    return spec.with_q0(q0, flag)


# -- serialisation -------------------------------------------------------

def spec_to_config(spec: NeckSpec) -> dict[str, Any]:
    cfg: dict[str, Any] = {
        "n": spec.n,
        "k": spec.k,
        "t": spec.t,
        "profiles": [p.to_config() for p in spec.profiles],
        "fiber_metric": spec.fiber_metric.to_config(),
        "fiber_domain": {"lo": list(spec.fiber_lo), "hi": list(spec.fiber_hi)},
        "geometry": spec.geometry.to_config(),
    }
    if spec.name:
        cfg["name"] = spec.name
    return cfg


def spec_from_config(cfg: dict[str, Any]) -> NeckSpec:
    try:
        geom = geo.geometry_from_config(cfg["geometry"])
        profiles = [FactorProfile(p["kind"], tuple(p.get("params", ()))) for p in cfg["profiles"]]
        fm = cfg.get("fiber_metric", {"kind": "euclidean"})
        fiber = FiberMetricSpec(fm["kind"], tuple(fm.get("params", ())))
        dom = cfg["fiber_domain"]
        spec = NeckSpec(geom, tuple(profiles), fiber, tuple(dom["lo"]), tuple(dom["hi"]),
                        name=cfg.get("name", ""))
    except (KeyError, TypeError) as exc:
        raise InvalidArgumentError(f"malformed spec config: {exc!r}") from exc
    for key, actual in (("n", spec.n), ("k", spec.k), ("t", spec.t)):
        if key in cfg and int(cfg[key]) != actual:
            raise InvalidArgumentError(f"config declares {key}={cfg[key]} but the data gives {actual}")
    return spec
