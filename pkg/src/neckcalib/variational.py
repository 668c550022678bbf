"""Volumes of graphs s = u(p) over the sphere, and their first variation.

A graph section is ``u = q0 + Σ c_m ψ_m`` with ψ_m restrictions of the
monomials 1, x_i, x_i x_j to the sphere.  Its graph in S^{n-1} × R has
tangent vectors (X_i, du(X_i)), so with a euclidean-orthonormal tangent
basis X of S^{n-1} the area density is

    sqrt det[ g(u)(X_i, X_j) + h(p, u) du(X_i) du(X_j) ]

integrated against the round area measure by a tensor Gauss-Legendre rule
in hyperspherical angles.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Optional, Sequence

import numpy as np

from .errors import DomainError, InvalidArgumentError
from .geometry import Sphere, _householder_bases
from .metric import NeckSpec
from .rng import SECTION_STREAM, stream_rng

MAX_N = 6
NODE_CHUNK = 8192
EXCESS_TOL = 1e-9

Mode = tuple[int, ...]


def sphere_area(n: int) -> float:
    """Area of the unit sphere S^{n-1} ⊂ R^n."""
    return 2.0 * math.pi ** (n / 2) / math.gamma(n / 2)


@dataclass(frozen=True)
class QuadratureRule:
    """Tensor Gauss-Legendre rule on S^{n-1}.

    ``weights`` already include the round area element, so they sum to the
    sphere's area.  The azimuth uses twice as many nodes as each polar angle.
    """

    n: int
    nodes_per_angle: int
    points: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        return self.weights.shape[0]


# default nodes per angle; total node count grows like 2 N^{n-1}
DEFAULT_NODES = {2: 32, 3: 24, 4: 16, 5: 12, 6: 12}


def quadrature_rule(n: int, nodes_per_angle: Optional[int] = None) -> QuadratureRule:
    if not 2 <= n <= MAX_N:
        raise InvalidArgumentError(f"hyperspherical quadrature supports 2 <= n <= {MAX_N}")
    if nodes_per_angle is None:
        nodes_per_angle = DEFAULT_NODES[n]
    if nodes_per_angle < 2:
        raise InvalidArgumentError("need at least 2 nodes per angle")
    polar_x, polar_w = np.polynomial.legendre.leggauss(nodes_per_angle)
    theta = 0.5 * math.pi * (polar_x + 1.0)
    theta_w = 0.5 * math.pi * polar_w
    az_x, az_w = np.polynomial.legendre.leggauss(2 * nodes_per_angle)
    phi = math.pi * (az_x + 1.0)
    phi_w = math.pi * az_w

    grids = [theta] * (n - 2) + [phi]
    wgrids = [theta_w] * (n - 2) + [phi_w]
    ang = np.array(list(itertools.product(*grids))).reshape(-1, n - 1)
    w = np.prod(np.array(list(itertools.product(*wgrids))).reshape(-1, n - 1), axis=1)

    pts = np.empty((ang.shape[0], n))
    s = np.ones(ang.shape[0])
    for i in range(n - 2):
        pts[:, i] = s * np.cos(ang[:, i])
        # area element sin^{n-2-i}(theta_i)
        w = w * np.sin(ang[:, i]) ** (n - 2 - i)
        s = s * np.sin(ang[:, i])
    pts[:, n - 2] = s * np.cos(ang[:, -1])
    pts[:, n - 1] = s * np.sin(ang[:, -1])
    return QuadratureRule(n, nodes_per_angle, pts, w)


# -- graph sections ------------------------------------------------------

def parse_mode(label: str | Sequence[int]) -> Mode:
    """``"1"`` -> (), ``"x2"`` -> (1,), ``"x1*x3"`` -> (0, 2)  (0-based indices)."""
    if not isinstance(label, str):
        mode = tuple(sorted(int(i) for i in label))
    elif label.strip() == "1":
        mode = ()
    else:
        try:
            mode = tuple(sorted(int(part.strip()[1:]) - 1 for part in label.split("*")))
        except ValueError:
            raise InvalidArgumentError(f"cannot parse mode {label!r}") from None
    if len(mode) > 2 or any(i < 0 for i in mode):
        raise InvalidArgumentError(f"modes are monomials of degree <= 2, got {label!r}")
    return mode


def mode_label(mode: Mode) -> str:
    return "*".join(f"x{i + 1}" for i in mode) if mode else "1"


def degree2_modes(n: int) -> list[Mode]:
    """1, x_i, x_i x_j (i <= j)."""
    modes: list[Mode] = [()]
    modes += [(i,) for i in range(n)]
    modes += [(i, j) for i in range(n) for j in range(i, n)]
    return modes


@dataclass(frozen=True)
class GraphSection:
    """u(p) = base + Σ amplitude_m · mode_m(p)."""

    modes: tuple[Mode, ...]
    amplitudes: tuple[float, ...]
    base: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "modes", tuple(parse_mode(m) for m in self.modes))
        object.__setattr__(self, "amplitudes", tuple(float(a) for a in self.amplitudes))
        if len(self.modes) != len(self.amplitudes):
            raise InvalidArgumentError("need one amplitude per mode")

    @classmethod
    def constant(cls, value: float) -> "GraphSection":
        return cls((), (), float(value))

    def scaled(self, c: float) -> "GraphSection":
        return GraphSection(self.modes, tuple(c * a for a in self.amplitudes), self.base)

    def value(self, P: np.ndarray) -> np.ndarray:
        u = np.full(P.shape[0], self.base)
        for mode, a in zip(self.modes, self.amplitudes):
            term = np.full(P.shape[0], a)
            for i in mode:
                term = term * P[:, i]
            u = u + term
        return u

    def gradient(self, P: np.ndarray) -> np.ndarray:
        """Ambient gradient of the polynomial extension, shape (m, n)."""
        g = np.zeros_like(P)
        for mode, a in zip(self.modes, self.amplitudes):
            if len(mode) == 1:
                g[:, mode[0]] += a
            elif len(mode) == 2:
                i, j = mode
                g[:, i] += a * P[:, j]
                g[:, j] += a * P[:, i]
        return g

    def to_dict(self) -> dict[str, Any]:
        return {mode_label(m): a for m, a in zip(self.modes, self.amplitudes)}


def _check_spec(spec: NeckSpec) -> None:
    if not isinstance(spec.geometry, Sphere):
        raise InvalidArgumentError("graph volumes are implemented for sphere bases only")
    if spec.t != 1:
        raise InvalidArgumentError("graph sections need a one-dimensional fiber")
    if spec.n > MAX_N:
        raise InvalidArgumentError(f"graph volumes support n <= {MAX_N}")


def _density(spec: NeckSpec, section: GraphSection, P: np.ndarray) -> np.ndarray:
    u = section.value(P)
    Q = u[:, None]
    spec.check_fiber(np.array([u.min()]))
    spec.check_fiber(np.array([u.max()]))
    X = _householder_bases(P)                         # (m, n, k)
    w = spec.weights(Q)                               # (m, n)
    du = np.einsum("mn,mnk->mk", section.gradient(P), X)
    h = spec.fiber_matrices(P, Q)[:, 0, 0]
    G = np.einsum("mnk,mn,mnl->mkl", X, w, X) + h[:, None, None] * du[:, :, None] * du[:, None, :]
    return np.sqrt(np.linalg.det(G))


def graph_volume(spec: NeckSpec, section: GraphSection, rule: QuadratureRule,
                 threads: int = 1) -> float:
    """Volume of the graph of ``section`` over the sphere."""
    _check_spec(spec)
    if rule.n != spec.n:
        raise InvalidArgumentError(f"rule is for n={rule.n}, spec has n={spec.n}")
    starts = range(0, rule.size, NODE_CHUNK)

    def work(s):
        P = rule.points[s:s + NODE_CHUNK]
        return rule.weights[s:s + NODE_CHUNK] * _density(spec, section, P)

    try:
        if threads > 1 and len(starts) > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                parts = list(pool.map(work, starts))
        else:
            parts = [work(s) for s in starts]
    except DomainError as exc:
        raise DomainError(f"graph leaves the fiber domain: {exc}") from exc
    # exactly rounded sum, independent of chunking
    return math.fsum(np.concatenate(parts).tolist())


# -- experiments ---------------------------------------------------------

def _q0_scalar(spec: NeckSpec) -> float:
    return float(spec.require_q0()[0])


def max_amplitude(spec: NeckSpec) -> float:
    """Largest sup-norm deviation from q0 that keeps graphs inside the fiber box."""
    q0 = _q0_scalar(spec)
    return min(q0 - spec.fiber_lo[0], spec.fiber_hi[0] - q0)


@dataclass
class PerturbationEntry:
    section: GraphSection
    volume: float
    excess: float

    def to_dict(self) -> dict[str, Any]:
        return {"amplitudes": self.section.to_dict(), "volume": self.volume,
                "excess": self.excess}


@dataclass
class VolumeReport:
    """Outcome of a volume comparison; ``excess`` is relative to the baseline."""

    baseline_volume: float
    entries: list[PerturbationEntry]
    min_excess: float
    defect: Optional[float] = None

    @property
    def worst(self) -> Optional[PerturbationEntry]:
        if not self.entries:
            return None
        return min(self.entries, key=lambda e: e.excess)

    @property
    def violated(self) -> bool:
        return self.min_excess < -EXCESS_TOL

    def to_dict(self) -> dict[str, Any]:
        return {
            "baseline_volume": self.baseline_volume,
            "entries": [e.to_dict() for e in self.entries],
            "min_excess": self.min_excess,
            "defect": self.defect,
        }


def random_section(spec: NeckSpec, modes: Sequence[Mode], scale: float,
                   rng: np.random.Generator) -> GraphSection:
    """Random combination with Σ|c_m| = scale, hence |u - q0| <= scale on the sphere."""
    z = rng.uniform(-1.0, 1.0, len(modes))
    norm = float(np.abs(z).sum())
    c = scale * z / norm if norm > 0 else np.zeros(len(modes))
    return GraphSection(tuple(modes), tuple(c.tolist()), _q0_scalar(spec))


def perturbation_test(spec: NeckSpec, amplitudes: Sequence[float],
                      modes: Optional[Sequence] = None, trials: int = 100,
                      rule: Optional[QuadratureRule] = None, seed: int = 0,
                      threads: int = 1) -> VolumeReport:
    """Compare graph volumes of random perturbations with the slice M × {q0}.

    Trial i uses amplitude scale ``amplitudes[i % len(amplitudes)]``.
    """
    _check_spec(spec)
    rule = rule or quadrature_rule(spec.n)
    modes = [parse_mode(m) for m in (modes if modes is not None else degree2_modes(spec.n))]
    if any(i >= spec.n for m in modes for i in m):
        raise InvalidArgumentError("mode index exceeds ambient dimension")
    if not modes or trials < 0:
        raise InvalidArgumentError("need at least one mode and trials >= 0")
    amps = [float(a) for a in amplitudes] or [0.0]
    eps_max = max_amplitude(spec)
    if any(a < 0 or a > eps_max for a in amps):
        raise InvalidArgumentError(f"amplitudes must lie in [0, {eps_max:g}]")

    base = graph_volume(spec, GraphSection.constant(_q0_scalar(spec)), rule, threads)
    entries = []
    for i in range(trials):
        sec = random_section(spec, modes, amps[i % len(amps)], stream_rng(seed, i, SECTION_STREAM))
        vol = graph_volume(spec, sec, rule, threads)
        entries.append(PerturbationEntry(sec, vol, (vol - base) / base))
    min_excess = min((e.excess for e in entries), default=0.0)
    return VolumeReport(base, entries, min_excess)


def first_variation(spec: NeckSpec, mode, step: float, rule: QuadratureRule,
                    threads: int = 1) -> float:
    """Central difference (V(q0 + εψ) - V(q0 - εψ)) / 2ε."""
    if step <= 0:
        raise InvalidArgumentError("step must be positive")
    q0 = _q0_scalar(spec)
    plus = GraphSection((mode,), (step,), q0)
    minus = GraphSection((mode,), (-step,), q0)
    return (graph_volume(spec, plus, rule, threads)
            - graph_volume(spec, minus, rule, threads)) / (2.0 * step)


def mean_curvature_defect(spec: NeckSpec, bump_modes: Optional[Sequence] = None,
                          step: float = 1e-3, rule: Optional[QuadratureRule] = None,
                          threads: int = 1) -> float:
    """Largest |first variation| over the given modes; zero for a minimal slice."""
    if step <= 0:
        raise InvalidArgumentError("step must be positive")
    _check_spec(spec)
    rule = rule or quadrature_rule(spec.n)
    modes = [parse_mode(m) for m in (bump_modes if bump_modes is not None
                                     else degree2_modes(spec.n))]
    return max(abs(first_variation(spec, m, step, rule, threads)) for m in modes)
