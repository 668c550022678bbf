"""Comass of φ = π* vol_{g(q0)} on (M × N, g(q) + h(p)).

A tangent k-plane at (p, q) is given by a frame of k vectors, each split
into a base part (in T_pM ⊂ R^n) and a fiber part (in R^t).  For such a
frame

    calib_value  = vol_{g(q0)}(π_* v_1, ..., π_* v_k)       (signed)
    frame_volume = sqrt det[(g(q) + h)(v_i, v_j)]
    ratio        = calib_value / frame_volume

and φ is a calibration iff ratio <= 1 on every plane.  The sweep and the
local search below estimate sup ratio; they corroborate, they do not prove.

Internally everything is batched: arrays carry a leading point axis ``m``
and, where relevant, a frames-per-point axis ``F``.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np

from . import geometry as geo
from .errors import InvalidArgumentError, NumericalDegeneracyError, SamplingError
from .linalg import cauchy_binet_check
from .metric import NeckSpec, spec_to_config
from .rng import SEARCH_STREAM, SWEEP_STREAM, stream_rng

VIOLATION_TOL = 1e-9
INDEPENDENCE_TOL = 1e-14
MAX_RESAMPLES = 16
CHUNK_POINTS = 256
MAX_STORED_VIOLATIONS = 1000


@dataclass(frozen=True)
class ProductPoint:
    p: np.ndarray
    q: np.ndarray

    def to_dict(self) -> dict[str, Any]:
        return {"p": self.p.tolist(), "q": self.q.tolist()}


@dataclass(frozen=True)
class TangentFrame:
    """k tangent vectors of M × N at ``at``; row i of base/fiber is v_i."""

    at: ProductPoint
    base: np.ndarray   # (k, n)
    fiber: np.ndarray  # (k, t)

    @property
    def k(self) -> int:
        return self.base.shape[0]

    def swapped(self, i: int = 0, j: int = 1) -> "TangentFrame":
        order = list(range(self.k))
        order[i], order[j] = order[j], order[i]
        return TangentFrame(self.at, self.base[order], self.fiber[order])

    def to_dict(self) -> dict[str, Any]:
        return {
            "point": self.at.to_dict(),
            "vectors": [{"base": b.tolist(), "fiber": f.tolist()}
                        for b, f in zip(self.base, self.fiber)],
        }


def spec_id(spec: NeckSpec) -> str:
    try:
        blob = json.dumps(spec_to_config(spec), sort_keys=True)
    except InvalidArgumentError:
        blob = repr(spec)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


# -- batched core --------------------------------------------------------

def _orthonormal_bases(spec: NeckSpec, B: np.ndarray, P: np.ndarray, Q: np.ndarray):
    """Product-orthonormal bases at a batch of points.

    B is the (m, n, k) reference tangent basis.  Returns ``Eb`` (m, n, k),
    whose columns are g(q)-orthonormal and span T_pM, and ``Ef`` (m, t, t),
    h-orthonormal columns of R^t.  Cholesky factors keep the orientation
    of B.
    """
    w = spec.weights(Q)                                   # (m, n)
    G = np.einsum("mnk,mn,mnl->mkl", B, w, B)
    L = np.linalg.cholesky(G)
    Eb = np.swapaxes(np.linalg.solve(L, np.swapaxes(B, 1, 2)), 1, 2)
    H = spec.fiber_matrices(P, Q)
    R = np.linalg.cholesky(H)
    Ef = np.swapaxes(np.linalg.inv(R), 1, 2)
    return Eb, Ef


def _evaluate(spec: NeckSpec, B, Q, X, U, H=None):
    """Calibration quantities for frames X (m, F, k, n), U (m, F, k, t).

    Returns a dict of (m, F) arrays: ``calib`` (signed φ value),
    ``volume`` (vol_V), ``proj`` (|vol_{g(q)}(π_* v)|) and ``ratio``.
    """
    q0 = spec.require_q0()
    w = spec.weights(Q)                                   # (m, n)
    w0 = spec.weights(q0)                                 # (n,)
    Gb = np.einsum("mfin,mn,mfjn->mfij", X, w, X)
    Gf = np.einsum("mfia,mab,mfjb->mfij", U, H, U)
    G0 = np.einsum("mfin,n,mfjn->mfij", X, w0, X)
    det_v = np.linalg.det(Gb + Gf)
    det_b = np.linalg.det(Gb)
    det_0 = np.linalg.det(G0)
    if np.any(det_v <= 0):
        raise NumericalDegeneracyError("frame Gram determinant is not positive")
    # coordinates of the base parts in the reference tangent basis
    coords = np.einsum("mkn,mfin->mfik", np.linalg.pinv(B), X)
    d = np.linalg.det(coords)
    scale = np.prod(np.linalg.norm(coords, axis=-1), axis=-1)
    sign = np.where(np.abs(d) <= geo.DEPENDENCE_TOL * scale, 0.0, np.sign(d))
    volume = np.sqrt(det_v)
    calib = sign * np.sqrt(np.maximum(det_0, 0.0))
    return {
        "calib": calib,
        "volume": volume,
        "proj": np.sqrt(np.maximum(det_b, 0.0)),
        "ratio": calib / volume,
    }


def _frame_arrays(spec: NeckSpec, frame: TangentFrame):
    p = spec.geometry.check_point(frame.at.p)
    q = spec.check_fiber(frame.at.q)
    base = np.atleast_2d(np.asarray(frame.base, dtype=float))
    fiber = np.atleast_2d(np.asarray(frame.fiber, dtype=float))
    if base.shape != (spec.k, spec.n) or fiber.shape != (spec.k, spec.t):
        raise InvalidArgumentError(
            f"frame needs {spec.k} vectors with base in R^{spec.n} and fiber in R^{spec.t}")
    B = spec.geometry.reference_basis(p)
    coords, *_ = np.linalg.lstsq(B, base.T, rcond=None)
    resid = np.linalg.norm(B @ coords - base.T, axis=0)
    if np.any(resid > geo.TANGENCY_TOL * np.maximum(1.0, np.linalg.norm(base, axis=1))):
        raise InvalidArgumentError("frame base components are not tangent to M")
    H = spec.fiber_matrices(p[None], q[None])
    G = (base * spec.weights(q)) @ base.T + fiber @ H[0] @ fiber.T
    if np.linalg.det(G) <= INDEPENDENCE_TOL * max(np.prod(np.diag(G)), 1e-300):
        raise InvalidArgumentError("frame vectors are linearly dependent")
    return B[None], q[None], base[None, None], fiber[None, None], H


def calib_value(spec: NeckSpec, frame: TangentFrame) -> float:
    """φ(v_1, ..., v_k) = vol_{g(q0)}(π_* v_1, ..., π_* v_k)."""
    B, Q, X, U, H = _frame_arrays(spec, frame)
    return float(_evaluate(spec, B, Q, X, U, H)["calib"][0, 0])


def frame_volume(spec: NeckSpec, frame: TangentFrame) -> float:
    """vol_V(v_1, ..., v_k) from the product-metric Gram determinant."""
    B, Q, X, U, H = _frame_arrays(spec, frame)
    w = spec.weights(Q[0])
    G = (X[0, 0] * w) @ X[0, 0].T + U[0, 0] @ H[0] @ U[0, 0].T
    d = float(np.linalg.det(G))
    if d <= 0:
        raise NumericalDegeneracyError(f"frame Gram determinant {d:.3g} is not positive")
    return math.sqrt(d)


def frame_coordinates(spec: NeckSpec, frame: TangentFrame) -> np.ndarray:
    """Coordinates (k, k+t) of the frame in a product-orthonormal basis."""
    B, Q, X, U, _ = _frame_arrays(spec, frame)
    p = np.asarray(frame.at.p, dtype=float)
    Eb, Ef = _orthonormal_bases(spec, B, p[None], Q)
    cb, *_ = np.linalg.lstsq(Eb[0], X[0, 0].T, rcond=None)
    cf = np.linalg.solve(Ef[0], U[0, 0].T)
    return np.hstack([cb.T, cf.T])


def frame_volume_minors(spec: NeckSpec, frame: TangentFrame) -> float:
    """vol_V as sqrt Σ_S det(C_S)² over k-column subsets of the coordinates C."""
    C = frame_coordinates(spec, frame)
    return math.sqrt(cauchy_binet_check(C)[1])


def comass_ratio(spec: NeckSpec, frame: TangentFrame) -> float:
    B, Q, X, U, H = _frame_arrays(spec, frame)
    return float(_evaluate(spec, B, Q, X, U, H)["ratio"][0, 0])


def projected_volume(spec: NeckSpec, frame: TangentFrame) -> float:
    """|vol_{g(q)}(π_* v_1, ..., π_* v_k)| at the frame's own fiber point."""
    B, Q, X, U, H = _frame_arrays(spec, frame)
    return float(_evaluate(spec, B, Q, X, U, H)["proj"][0, 0])


# -- sampling ------------------------------------------------------------

def _draw_coefficients(rng, k: int, t: int, count: int, lifted: bool) -> np.ndarray:
    """Gaussian coefficient matrices (count, k, k+t), independent rows."""
    out = np.empty((count, k, k + t))
    for f in range(count):
        for _ in range(MAX_RESAMPLES):
            C = rng.standard_normal((k, k + t))
            if lifted:
                C[:, k:] = 0.0
                if np.linalg.det(C[:, :k]) < 0:
                    C[0] *= -1.0
            G = C @ C.T
            if np.linalg.det(G) > INDEPENDENCE_TOL * np.prod(np.diag(G)):
                break
        else:
            raise SamplingError("could not draw an independent frame in 16 attempts")
        out[f] = C
    return out


@dataclass
class FrameBatch:
    """Frames sampled at m points, F per point."""

    index: np.ndarray   # (m,) global point indices
    P: np.ndarray       # (m, n)
    Q: np.ndarray       # (m, t)
    B: np.ndarray       # (m, n, k)
    X: np.ndarray       # (m, F, k, n)
    U: np.ndarray       # (m, F, k, t)
    H: np.ndarray       # (m, t, t)

    def frame(self, i: int, f: int) -> TangentFrame:
        return TangentFrame(ProductPoint(self.P[i].copy(), self.Q[i].copy()),
                            self.X[i, f].copy(), self.U[i, f].copy())


def sample_batch(spec: NeckSpec, indices, frames_per_point: int, seed: int,
                 q_mode: str = "uniform", lifted: bool = False) -> FrameBatch:
    """Sample points and frames for the given global point indices.

    ``q_mode="q0"`` pins the fiber coordinate at q0; ``lifted=True`` draws
    frames with zero fiber part and positive orientation.
    """
    geom = spec.geometry
    k, t = spec.k, spec.t
    lo, hi = spec.lo, spec.hi
    states, Q, coeffs = [], [], []
    for i in indices:
        rng = stream_rng(seed, i, SWEEP_STREAM)
        states.append(geom.random_state(rng))
        if q_mode == "q0":
            Q.append(spec.require_q0())
        elif q_mode == "uniform":
            Q.append(lo + (hi - lo) * rng.random(t))
        else:
            raise InvalidArgumentError(f"unknown q_mode {q_mode!r}")
        coeffs.append(_draw_coefficients(rng, k, t, frames_per_point, lifted))
    m = len(states)
    states = np.array(states).reshape(m, -1)
    Q = np.array(Q).reshape(m, t)
    P = np.array([geom.state_point(s) for s in states]).reshape(m, spec.n)
    B = geom.bases_from_states(states)
    H = spec.fiber_matrices(P, Q)
    C = np.array(coeffs).reshape(m, frames_per_point, k, k + t)
    if lifted:
        # lifted frames live in the reference basis itself, not a g-orthonormal one
        X = np.einsum("mfij,mnj->mfin", C[..., :k], B)
        U = np.zeros((m, frames_per_point, k, t))
    else:
        Eb, Ef = _orthonormal_bases(spec, B, P, Q)
        X = np.einsum("mfij,mnj->mfin", C[..., :k], Eb)
        U = np.einsum("mfij,maj->mfia", C[..., k:], Ef)
    return FrameBatch(np.asarray(list(indices)), P, Q, B, X, U, H)


def random_frame(spec: NeckSpec, at: ProductPoint, rng: np.random.Generator) -> TangentFrame:
    """Gaussian coefficients over a product-orthonormal basis of T_pM ⊕ R^t."""
    p = spec.geometry.check_point(at.p)
    q = spec.check_fiber(at.q)
    B = spec.geometry.reference_basis(p)[None]
    Eb, Ef = _orthonormal_bases(spec, B, p[None], q[None])
    C = _draw_coefficients(rng, spec.k, spec.t, 1, lifted=False)[0]
    return TangentFrame(ProductPoint(p, q), C[:, :spec.k] @ Eb[0].T, C[:, spec.k:] @ Ef[0].T)


def lifted_frame(spec: NeckSpec, p, q=None) -> TangentFrame:
    """The oriented reference tangent basis of M at p, with zero fiber parts."""
    q = spec.require_q0() if q is None else spec.check_fiber(q)
    basis = spec.geometry.tangent_basis(p)
    V = basis.vectors.copy()
    if basis.orientation < 0:
        V[0] *= -1.0
    return TangentFrame(ProductPoint(np.asarray(basis.point, dtype=float), q), V,
                        np.zeros((spec.k, spec.t)))


# -- comass sweep --------------------------------------------------------

@dataclass
class ComassReport:
    spec_id: str
    samples: int
    max_ratio: float
    argmax: Optional[TangentFrame]
    violations: list[tuple[TangentFrame, float]]
    seed: int
    wall_time: float
    violation_count: int = 0
    ratios: Optional[np.ndarray] = field(default=None, repr=False)

    def to_dict(self) -> dict[str, Any]:
        return {
            "spec_id": self.spec_id,
            "samples": self.samples,
            "max_ratio": self.max_ratio,
            "argmax": None if self.argmax is None else self.argmax.to_dict(),
            "violations": [{"frame": f.to_dict(), "ratio": r} for f, r in self.violations],
            "seed": self.seed,
            "wall_time_s": self.wall_time,
        }


def _chunks(points: int):
    return [range(s, min(s + CHUNK_POINTS, points)) for s in range(0, points, CHUNK_POINTS)]


def _sweep_chunk(spec, idx, frames_per_point, seed, q_mode, lifted):
    batch = sample_batch(spec, idx, frames_per_point, seed, q_mode, lifted)
    vals = _evaluate(spec, batch.B, batch.Q, batch.X, batch.U, batch.H)
    return batch, vals


def sweep_batches(spec, points, frames_per_point, seed, threads=1, q_mode="uniform",
                  lifted=False):
    """Yield ``(batch, values)`` per fixed-size chunk, in index order."""
    chunks = _chunks(points)
    args = (frames_per_point, seed, q_mode, lifted)
    if threads <= 1 or len(chunks) <= 1:
        for idx in chunks:
            yield _sweep_chunk(spec, idx, *args)
        return
    with ThreadPoolExecutor(max_workers=threads) as pool:
        yield from pool.map(lambda idx: _sweep_chunk(spec, idx, *args), chunks)


def comass_sweep(spec: NeckSpec, points: int, frames_per_point: int, seed: int = 0,
                 threads: int = 1, q_mode: str = "uniform", lifted: bool = False,
                 max_violations: int = MAX_STORED_VIOLATIONS,
                 keep_ratios: bool = False) -> ComassReport:
    """Monte-Carlo estimate of the comass of φ over ``points × frames_per_point`` frames.

    Points are drawn uniformly on M and on the fiber box (or pinned at q0).
    Violations are frames with ratio > 1 + 1e-9; at most ``max_violations``
    of them, the largest, are kept.
    """
    if points < 0 or frames_per_point < 0:
        raise InvalidArgumentError("sample counts must be non-negative")
    spec.require_q0()
    t0 = time.perf_counter()
    total = points * frames_per_point
    if total == 0:
        return ComassReport(spec_id(spec), 0, -math.inf, None, [], int(seed),
                            time.perf_counter() - t0)
    best = (-math.inf, None)
    hits: list[tuple[float, int, TangentFrame]] = []
    count = 0
    all_ratios = []
    for batch, vals in sweep_batches(spec, points, frames_per_point, seed, threads,
                                     q_mode, lifted):
        r = vals["ratio"]
        if keep_ratios:
            all_ratios.append(r.ravel())
        i, f = np.unravel_index(int(np.argmax(r)), r.shape)
        if r[i, f] > best[0]:
            best = (float(r[i, f]), batch.frame(i, f))
        bad = np.argwhere(r > 1.0 + VIOLATION_TOL)
        count += len(bad)
        for i, f in bad:
            flat = int(batch.index[i]) * frames_per_point + int(f)
            hits.append((float(r[i, f]), flat, batch.frame(i, f)))
        if len(hits) > 4 * max_violations:
            hits = sorted(hits, key=lambda h: (-h[0], h[1]))[:max_violations]
    hits = sorted(hits, key=lambda h: (-h[0], h[1]))[:max_violations]
    return ComassReport(
        spec_id=spec_id(spec),
        samples=total,
        max_ratio=best[0],
        argmax=best[1],
        violations=[(fr, r) for r, _, fr in hits],
        seed=int(seed),
        wall_time=time.perf_counter() - t0,
        violation_count=count,
        ratios=np.concatenate(all_ratios) if keep_ratios else None,
    )


# -- local search --------------------------------------------------------

def _orthonormalize(C: np.ndarray) -> np.ndarray:
    """Orthonormal rows spanning the same oriented row space as C (k, k+t)."""
    Qm, R = np.linalg.qr(C.T)
    s = np.sign(np.diag(R))
    s[s == 0] = 1.0
    return (Qm * s).T


def max_ratio_search(spec: NeckSpec, restarts: int = 100, iters: int = 200, seed: int = 0,
                     step0: float = 0.1, decay: float = 0.7):
    """Multi-start perturb-and-accept ascent on the comass ratio.

    The state of each restart is a point of M, a fiber point and a k×(k+t)
    coefficient matrix over the product-orthonormal basis there.  Each
    iteration perturbs all three; an improving move is kept and the step
    grows by 1/decay (capped at ``step0``), a failed move shrinks it by
    ``decay``.  Coefficients are re-orthonormalised every iteration, so the
    returned frame is product-orthonormal.

    Returns ``(best_ratio, best_frame)``.
    """
    spec.require_q0()
    if restarts <= 0 or iters < 0:
        raise InvalidArgumentError("restarts must be positive and iters non-negative")
    geom = spec.geometry
    k, t = spec.k, spec.t
    lo, hi = spec.lo, spec.hi
    half = 0.5 * (hi - lo)
    rngs = [stream_rng(seed, r, SEARCH_STREAM) for r in range(restarts)]
    states = [geom.random_state(g) for g in rngs]
    Q = np.array([lo + (hi - lo) * g.random(t) for g in rngs])
    C = np.array([_orthonormalize(g.standard_normal((k, k + t))) for g in rngs])
    steps = np.full(restarts, float(step0))

    def evaluate(states, Q, C):
        S = np.array(states).reshape(restarts, -1)
        P = np.array([geom.state_point(s) for s in S]).reshape(restarts, spec.n)
        B = geom.bases_from_states(S)
        Eb, Ef = _orthonormal_bases(spec, B, P, Q)
        X = np.einsum("mij,mnj->min", C[:, :, :k], Eb)[:, None]
        U = np.einsum("mij,maj->mia", C[:, :, k:], Ef)[:, None]
        H = spec.fiber_matrices(P, Q)
        return _evaluate(spec, B, Q, X, U, H)["ratio"][:, 0], P, X[:, 0], U[:, 0]

    cur, P, X, U = evaluate(states, Q, C)
    for _ in range(iters):
        new_states, new_Q, new_C = [], np.empty_like(Q), np.empty_like(C)
        for r, g in enumerate(rngs):
            s = steps[r]
            new_states.append(geom.perturb_state(states[r], s, g))
            new_Q[r] = np.clip(Q[r] + s * half * g.standard_normal(t), lo, hi)
            new_C[r] = _orthonormalize(C[r] + s * g.standard_normal((k, k + t)))
        val, nP, nX, nU = evaluate(new_states, new_Q, new_C)
        better = val > cur
        for r in np.flatnonzero(better):
            states[r] = new_states[r]
        Q[better], C[better], cur[better] = new_Q[better], new_C[better], val[better]
        P[better], X[better], U[better] = nP[better], nX[better], nU[better]
        steps = np.where(better, np.minimum(steps / decay, step0), steps * decay)
        steps = np.maximum(steps, 1e-14)
    r = int(np.argmax(cur))
    return float(cur[r]), TangentFrame(ProductPoint(P[r].copy(), Q[r].copy()),
                                       X[r].copy(), U[r].copy())


# -- hypothesis probe ----------------------------------------------------

@dataclass
class ProbeReport:
    coordinatewise_min: Optional[bool]
    max_ratio: float
    witness: Optional[TangentFrame]
    witness_ratio: Optional[float]
    sweep_max: float
    search_max: float

    @property
    def found(self) -> bool:
        return self.witness is not None

    def to_dict(self) -> dict[str, Any]:
        return {
            "coordinatewise_min": self.coordinatewise_min,
            "max_ratio": self.max_ratio,
            "witness": None if self.witness is None else {
                "frame": self.witness.to_dict(), "ratio": self.witness_ratio},
            "sweep_max": self.sweep_max,
            "search_max": self.search_max,
        }


def probe_hypothesis(spec: NeckSpec, points: int = 1000, frames_per_point: int = 10,
                     restarts: int = 50, iters: int = 200, seed: int = 0,
                     threads: int = 1) -> ProbeReport:
    """Look for planes with ratio > 1 + 1e-9 (a gap in the product-only hypothesis)."""
    sweep = comass_sweep(spec, points, frames_per_point, seed, threads, max_violations=1)
    search_ratio, search_frame = max_ratio_search(spec, restarts, iters, seed)
    if search_ratio >= sweep.max_ratio:
        best, frame = search_ratio, search_frame
    else:
        best, frame = sweep.max_ratio, sweep.argmax
    found = best > 1.0 + VIOLATION_TOL
    return ProbeReport(
        coordinatewise_min=spec.coordinatewise_min,
        max_ratio=best,
        witness=frame if found else None,
        witness_ratio=best if found else None,
        sweep_max=sweep.max_ratio,
        search_max=search_ratio,
    )
