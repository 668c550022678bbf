"""Ready-made neck specifications."""

from __future__ import annotations

from typing import Sequence

from .errors import InvalidArgumentError
from .geometry import Sphere
from .metric import FactorProfile, FiberMetricSpec, NeckSpec


def jlt_neck(a: Sequence[float], fiber_window: float = 3.0) -> NeckSpec:
    """S^{n-1} × [-w, w] with f_j² = 1/a_j + s² and the induced fiber metric.

    This is the metric of the Joyce-Lee-Tsui Lagrangian self-expander
    written in neck form.  q0 is left unresolved.
    """
    a = tuple(float(x) for x in a)
    if len(a) < 2:
        raise InvalidArgumentError("need at least two parameters a_j (n >= 2)")
    if min(a) <= 0:
        raise InvalidArgumentError("all a_j must be positive")
    if fiber_window <= 0:
        raise InvalidArgumentError("fiber_window must be positive")
    return NeckSpec(
        geometry=Sphere(len(a)),
        profiles=tuple(FactorProfile("jlt", (x,)) for x in a),
        fiber_metric=FiberMetricSpec("jlt-induced", a),
        fiber_lo=(-float(fiber_window),),
        fiber_hi=(float(fiber_window),),
        name="jlt(" + ",".join(f"{x:g}" for x in a) + ")",
    )


def probe_neck(fiber_window: float = 3.0) -> NeckSpec:
    """S¹ × [-w, w] with f_1² = 1 + s², f_2² = 1/(1 + s²).

    The product f_1 f_2 is identically 1, so every fiber point minimises it,
    yet f_2 alone is smallest at the window edges.
    """
    return NeckSpec(
        geometry=Sphere(2),
        profiles=(FactorProfile("jlt", (1.0,)), FactorProfile("reciprocal-jlt", (1.0,))),
        fiber_metric=FiberMetricSpec("euclidean"),
        fiber_lo=(-float(fiber_window),),
        fiber_hi=(float(fiber_window),),
        name="probe",
    )


def constant_neck(values: Sequence[float], fiber_window: float = 1.0) -> NeckSpec:
    """Sphere with constant factors f_j = values[j]: a plain Riemannian product."""
    return NeckSpec(
        geometry=Sphere(len(values)),
        profiles=tuple(FactorProfile("constant", (float(v),)) for v in values),
        fiber_metric=FiberMetricSpec("euclidean"),
        fiber_lo=(-float(fiber_window),),
        fiber_hi=(float(fiber_window),),
        name="constant",
    )


PRESETS = {"jlt", "probe", "constant"}


def preset_spec(cfg: dict) -> NeckSpec:
    """Expand a ``{"preset": ...}`` config block."""
    kind = cfg.get("preset")
    window = float(cfg.get("fiber_window", 3.0 if kind != "constant" else 1.0))
    if kind == "jlt":
        return jlt_neck(cfg["a"], window)
    if kind == "probe":
        return probe_neck(window)
    if kind == "constant":
        return constant_neck(cfg["values"], window)
    raise InvalidArgumentError(f"unknown preset {kind!r}; expected one of {sorted(PRESETS)}")
