"""Oriented base manifolds M ⊂ R^n: the round sphere and expression-table charts.

Both geometries expose the same small surface used by the engine:

* ``random_state(rng)`` / ``perturb_state`` / ``state_point`` -- a point
  representation convenient for sampling and local search (the ambient
  point itself for the sphere, chart parameters for a chart);
* ``bases_from_states`` -- batched tangent bases, shape ``(m, n, k)``;
* ``tangent_basis`` and ``orientation_sign`` for single points.

Orientation conventions: for the sphere ``(p, b_1, ..., b_{n-1})`` is a
positive frame of R^n (outward normal first); for a chart the Jacobian
columns in parameter order are positive.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Any

import numpy as np

from .errors import DegenerateChartError, DomainError, InvalidArgumentError

TANGENCY_TOL = 1e-8
ON_MANIFOLD_TOL = 1e-8
DEPENDENCE_TOL = 1e-12
FD_STEP = 1e-6


@dataclass(frozen=True)
class OrientedTangentBasis:
    point: np.ndarray
    vectors: np.ndarray  # (k, n), one basis vector per row
    orientation: int = 1


def _householder_bases(P: np.ndarray) -> np.ndarray:
    """Orthonormal positively oriented bases of p^⊥ for unit rows of P.

    Returns an array of shape (m, n, n-1) whose columns span p^⊥ with
    det[p | B] = +1.
    """
    m, n = P.shape
    e1 = np.zeros(n)
    e1[0] = 1.0
    flip = P[:, 0] > 0
    # reflect e1 onto -p when p is close to e1, onto p otherwise
    V = np.where(flip[:, None], P + e1, P - e1)
    vv = np.einsum("mi,mi->m", V, V)
    H = np.eye(n)[None, :, :] - 2.0 * V[:, :, None] * V[:, None, :] / vv[:, None, None]
    B = H[:, :, 1:].copy()
    # for the p - e1 reflection det[p|B] = det H = -1; negate one column
    B[~flip, :, -1] *= -1.0
    return B


class Sphere:
    """Unit sphere S^{n-1} in R^n."""

    kind = "sphere"

    def __init__(self, n: int):
        n = int(n)
        if n < 2:
            raise InvalidArgumentError(f"sphere needs ambient dimension n >= 2, got {n}")
        self.n = n
        self.k = n - 1

    def __repr__(self):
        return f"Sphere(n={self.n})"

    def __eq__(self, other):
        return isinstance(other, Sphere) and other.n == self.n

    def __hash__(self):
        return hash(("sphere", self.n))

    def to_config(self) -> dict[str, Any]:
        return {"kind": "sphere", "n": self.n}

    # -- points -----------------------------------------------------------
    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return sphere_point(self.n, rng)

    def check_point(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        if p.shape != (self.n,):
            raise InvalidArgumentError(f"expected a point in R^{self.n}, got shape {p.shape}")
        if abs(float(p @ p) - 1.0) > ON_MANIFOLD_TOL:
            raise DomainError(f"point {p} is not on the unit sphere")
        return p

    random_state = sample

    def perturb_state(self, state, step, rng):
        p = state + step * rng.standard_normal(self.n)
        return p / np.linalg.norm(p)

    def state_point(self, state) -> np.ndarray:
        return np.asarray(state, dtype=float)

    def state_of(self, p):
        return self.check_point(p)

    # -- tangent data -----------------------------------------------------
    def bases_from_states(self, states) -> np.ndarray:
        P = np.atleast_2d(np.asarray(states, dtype=float))
        return _householder_bases(P)

    def tangent_basis(self, p) -> OrientedTangentBasis:
        p = self.check_point(p)
        B = _householder_bases(p[None, :])[0]
        return OrientedTangentBasis(point=p, vectors=B.T.copy(), orientation=1)

    def reference_basis(self, p) -> np.ndarray:
        return _householder_bases(np.asarray(p, dtype=float)[None, :])[0]


def sphere_point(n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform point on S^{n-1} from a normalised Gaussian vector."""
    if n < 2:
        raise InvalidArgumentError("n must be at least 2")
    while True:
        x = rng.standard_normal(n)
        r = np.linalg.norm(x)
        if r > 1e-300:
            x = x / r
            # one Newton step on |x| = 1 keeps the norm error at a few ulp
            return x * (1.5 - 0.5 * float(x @ x))


# -- expression-table charts ---------------------------------------------

_FUNCS = ("pow", "cos", "sin")


def _factor_value(fn, arg, u):
    if fn == "pow":
        return u ** arg
    if fn == "cos":
        return np.cos(arg * u)
    return np.sin(arg * u)


def _factor_deriv(fn, arg, u):
    if fn == "pow":
        return arg * u ** (arg - 1) if arg else np.zeros_like(u)
    if fn == "cos":
        return -arg * np.sin(arg * u)
    return arg * np.cos(arg * u)


def _parse_term(term) -> tuple[float, tuple[tuple[int, str, float], ...]]:
    coef = float(term.get("coef", 1.0))
    factors = []
    for f in term.get("factors", []):
        var, fn, arg = f
        if fn not in _FUNCS:
            raise InvalidArgumentError(f"unknown factor function {fn!r}; expected one of {_FUNCS}")
        if fn == "pow" and (int(arg) != arg or arg < 0):
            raise InvalidArgumentError("pow factors need a non-negative integer exponent")
        factors.append((int(var), str(fn), int(arg) if fn == "pow" else float(arg)))
    return coef, tuple(factors)


class ImmersedChart:
    """M given by one parametrisation φ: box ⊂ R^k → R^n.

    Each component of φ is a sum of terms ``coef * Π factor(u_var)`` with
    factors ``("pow", e)``, ``("cos", ω)`` or ``("sin", ω)``.  The analytic
    Jacobian follows from the product rule; ``jacobian="fd"`` switches to
    central differences.
    """

    kind = "immersed-chart"

    def __init__(self, expressions, domain, jacobian: str = "analytic"):
        self.expressions = [[dict(t) for t in comp] for comp in expressions]
        self._terms = [[_parse_term(t) for t in comp] for comp in self.expressions]
        lo = np.asarray(domain["lo"], dtype=float).ravel()
        hi = np.asarray(domain["hi"], dtype=float).ravel()
        if lo.shape != hi.shape or np.any(hi <= lo):
            raise InvalidArgumentError("chart domain needs lo < hi per axis")
        self.lo, self.hi = lo, hi
        self.n = len(self._terms)
        self.k = lo.shape[0]
        if self.k > self.n or self.k < 1:
            raise InvalidArgumentError(f"chart dimension {self.k} invalid for ambient {self.n}")
        for comp in self._terms:
            for _, factors in comp:
                for var, _, _ in factors:
                    if not 0 <= var < self.k:
                        raise InvalidArgumentError(f"factor variable {var} outside 0..{self.k - 1}")
        if jacobian not in ("analytic", "fd"):
            raise InvalidArgumentError("jacobian must be 'analytic' or 'fd'")
        self.jacobian_mode = jacobian
        self._check_rank()

    def __repr__(self):
        return f"ImmersedChart(n={self.n}, k={self.k})"

    def to_config(self) -> dict[str, Any]:
        cfg = {
            "kind": "immersed-chart",
            "expressions": [[{"coef": c, "factors": [list(f) for f in fs]} for c, fs in comp]
                            for comp in self._terms],
            "domain": {"lo": self.lo.tolist(), "hi": self.hi.tolist()},
        }
        if self.jacobian_mode != "analytic":
            cfg["jacobian"] = self.jacobian_mode
        return cfg

    def __eq__(self, other):
        return isinstance(other, ImmersedChart) and other.to_config() == self.to_config()

    def __hash__(self):
        return hash(repr(self.to_config()))

    # -- evaluation (vectorised over leading axes of U) --------------------
    def phi(self, U) -> np.ndarray:
        U = np.asarray(U, dtype=float)
        out = []
        for comp in self._terms:
            val = np.zeros(U.shape[:-1])
            for coef, factors in comp:
                t = np.full(U.shape[:-1], coef)
                for var, fn, arg in factors:
                    t = t * _factor_value(fn, arg, U[..., var])
                val = val + t
            out.append(val)
        return np.stack(out, axis=-1)

    def jacobian(self, U) -> np.ndarray:
        """Shape (..., n, k)."""
        U = np.asarray(U, dtype=float)
        if self.jacobian_mode == "fd":
            cols = []
            for j in range(self.k):
                e = np.zeros(self.k)
                e[j] = FD_STEP
                cols.append((self.phi(U + e) - self.phi(U - e)) / (2 * FD_STEP))
            return np.stack(cols, axis=-1)
        J = np.zeros(U.shape[:-1] + (self.n, self.k))
        for i, comp in enumerate(self._terms):
            for coef, factors in comp:
                for j in range(self.k):
                    # product rule, one differentiated factor at a time
                    d = np.zeros(U.shape[:-1])
                    for a, (var, fn, arg) in enumerate(factors):
                        if var != j:
                            continue
                        t = np.full(U.shape[:-1], coef)
                        for b, (vb, fb, ab) in enumerate(factors):
                            if b == a:
                                t = t * _factor_deriv(fb, ab, U[..., vb])
                            else:
                                t = t * _factor_value(fb, ab, U[..., vb])
                        d = d + t
                    J[..., i, j] += d
        return J

    def _check_rank(self, samples: int = 256) -> None:
        rng = np.random.default_rng(0)
        U = self.lo + (self.hi - self.lo) * rng.random((samples, self.k))
        s = np.linalg.svd(self.jacobian(U), compute_uv=False)
        bad = s[:, -1] <= 1e-10 * np.maximum(1.0, s[:, 0])
        if np.any(bad):
            u = U[np.argmax(bad)]
            raise DegenerateChartError(f"chart Jacobian is rank deficient near u={u.tolist()}")

    # -- states ------------------------------------------------------------
    def random_state(self, rng):
        return self.lo + (self.hi - self.lo) * rng.random(self.k)

    sample_param = random_state

    def sample(self, rng):
        return self.phi(self.random_state(rng))

    def perturb_state(self, state, step, rng):
        u = state + step * (self.hi - self.lo) * rng.standard_normal(self.k)
        return np.clip(u, self.lo, self.hi)

    def state_point(self, state):
        return self.phi(np.asarray(state, dtype=float))

    def locate(self, p, tol: float = ON_MANIFOLD_TOL) -> np.ndarray:
        """Chart parameter u with φ(u) = p (coarse grid, then Gauss-Newton)."""
        p = np.asarray(p, dtype=float)
        if p.shape != (self.n,):
            raise InvalidArgumentError(f"expected a point in R^{self.n}, got shape {p.shape}")
        per_axis = max(3, int(round(4096 ** (1.0 / self.k))))
        axes = [np.linspace(lo, hi, per_axis) for lo, hi in zip(self.lo, self.hi)]
        grid = np.array(list(itertools.product(*axes)))
        u = grid[np.argmin(np.sum((self.phi(grid) - p) ** 2, axis=1))]
        for _ in range(50):
            r = self.phi(u) - p
            if np.linalg.norm(r) <= 1e-14:
                break
            du = np.linalg.lstsq(self.jacobian(u), -r, rcond=None)[0]
            u = np.clip(u + du, self.lo, self.hi)
            if np.linalg.norm(du) <= 1e-15:
                break
        if np.linalg.norm(self.phi(u) - p) > tol:
            raise DomainError(f"point {p.tolist()} is not on the chart image")
        return u

    state_of = locate

    def check_point(self, p):
        self.locate(p)
        return np.asarray(p, dtype=float)

    def bases_from_states(self, states) -> np.ndarray:
        U = np.atleast_2d(np.asarray(states, dtype=float))
        return self.jacobian(U)

    def tangent_basis(self, p, u=None) -> OrientedTangentBasis:
        if u is None:
            u = self.locate(p)
        J = self.jacobian(u)
        s = np.linalg.svd(J, compute_uv=False)
        if s[-1] <= 1e-10 * max(1.0, s[0]):
            raise DegenerateChartError(f"chart Jacobian is rank deficient at u={np.asarray(u).tolist()}")
        return OrientedTangentBasis(point=self.phi(u), vectors=J.T.copy(), orientation=1)

    def reference_basis(self, p) -> np.ndarray:
        return self.jacobian(self.locate(p))


def tangent_basis(geom, p) -> OrientedTangentBasis:
    return geom.tangent_basis(p)


def orientation_sign(geom, p, vectors) -> int:
    """Orientation of ``vectors`` (rows) relative to the reference tangent basis at p.

    Returns +1, -1, or 0 for a dependent family.
    """
    V = np.atleast_2d(np.asarray(vectors, dtype=float))
    if V.shape != (geom.k, geom.n):
        raise InvalidArgumentError(f"need {geom.k} vectors in R^{geom.n}, got shape {V.shape}")
    B = geom.reference_basis(p)
    coords, *_ = np.linalg.lstsq(B, V.T, rcond=None)
    resid = np.linalg.norm(B @ coords - V.T, axis=0)
    scale = np.maximum(1.0, np.linalg.norm(V, axis=1))
    if np.any(resid > TANGENCY_TOL * scale):
        raise InvalidArgumentError(
            f"vectors are not tangent at p (residual {float(resid.max()):.3g})")
    return _sign_of_coords(coords)


def _sign_of_coords(coords: np.ndarray) -> int:
    d = float(np.linalg.det(coords))
    scale = float(np.prod(np.linalg.norm(coords, axis=0)))
    if scale == 0.0 or abs(d) < DEPENDENCE_TOL * scale:
        return 0
    return 1 if d > 0 else -1


def geometry_from_config(cfg: dict[str, Any]):
    kind = cfg.get("kind")
    if kind == "sphere":
        return Sphere(cfg["n"])
    if kind == "immersed-chart":
        return ImmersedChart(cfg["expressions"], cfg["domain"], cfg.get("jacobian", "analytic"))
    raise InvalidArgumentError(f"unknown geometry kind {kind!r}")
