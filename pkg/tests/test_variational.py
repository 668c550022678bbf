import math

import numpy as np
import pytest

from neckcalib import constant_neck, jlt_neck, resolve_q0
from neckcalib.errors import DomainError, InvalidArgumentError
from neckcalib.geometry import Sphere
from neckcalib.metric import FactorProfile, FiberMetricSpec, NeckSpec
from neckcalib.variational import (GraphSection, degree2_modes, first_variation, graph_volume,
                                   mean_curvature_defect, mode_label, parse_mode,
                                   perturbation_test, quadrature_rule, sphere_area)

AREAS = {2: 2 * math.pi, 3: 4 * math.pi, 4: 2 * math.pi ** 2}


@pytest.mark.parametrize("n", [2, 3, 4, 5, 6])
def test_rule_weights_sum_to_area(n):
    rule = quadrature_rule(n)
    assert np.all(rule.weights > 0)
    assert abs(rule.weights.sum() - sphere_area(n)) <= 1e-10
    assert np.allclose(np.sum(rule.points ** 2, axis=1), 1.0, atol=1e-14)


def test_rule_integrates_polynomials():
    # ∫ x_1² over S² is 4π/3
    rule = quadrature_rule(3)
    assert rule.weights @ rule.points[:, 0] ** 2 == pytest.approx(4 * math.pi / 3, rel=1e-13)


def test_rule_limits():
    with pytest.raises(InvalidArgumentError):
        quadrature_rule(7)
    with pytest.raises(InvalidArgumentError):
        quadrature_rule(3, 1)


def test_modes():
    assert parse_mode("1") == () and parse_mode("x3") == (2,) and parse_mode("x2*x1") == (0, 1)
    assert mode_label((0, 2)) == "x1*x3"
    assert len(degree2_modes(3)) == 1 + 3 + 6
    with pytest.raises(InvalidArgumentError):
        parse_mode("x1*x2*x3")


def test_section_gradient_matches_finite_difference(rng):
    sec = GraphSection(["1", "x1", "x2*x3", "x2*x2"], [0.3, -0.2, 0.5, 0.7])
    P = rng.standard_normal((5, 3))
    g = sec.gradient(P)
    for j in range(3):
        e = np.zeros(3)
        e[j] = 1e-6
        fd = (sec.value(P + e) - sec.value(P - e)) / 2e-6
        assert np.allclose(g[:, j], fd, atol=1e-8)


def test_volume_oracles():
    assert abs(graph_volume(resolve_q0(jlt_neck((1.0, 1.0))), GraphSection.constant(0.0),
                            quadrature_rule(2)) - 2 * math.pi) <= 1e-9
    assert abs(graph_volume(resolve_q0(jlt_neck((1.0, 1.0, 1.0))), GraphSection.constant(0.0),
                            quadrature_rule(3)) - 4 * math.pi) <= 1e-7


@pytest.mark.parametrize("n", [2, 3, 4])
def test_unit_profiles_give_sphere_area(n):
    s = resolve_q0(constant_neck((1.0,) * n))
    assert abs(graph_volume(s, GraphSection.constant(0.0), quadrature_rule(n)) - AREAS[n]) <= 1e-7


def test_volume_of_ellipsoidal_slice_converges():
    """jlt(1,4) at s=0: the circle with metric x-weight 1, y-weight 1/4.

    Its length is the perimeter of an ellipse with semi-axes 1 and 1/2.
    """
    s = resolve_q0(jlt_neck((1.0, 4.0)))
    a, b = 1.0, 0.5
    from scipy.special import ellipe
    exact = 4 * a * ellipe(1 - (b / a) ** 2)
    assert graph_volume(s, GraphSection.constant(0.0), quadrature_rule(2, 64)) == pytest.approx(
        exact, rel=1e-12)


def test_doubled_nodes_agree(jlt123):
    for sec in (GraphSection.constant(0.0), GraphSection(["x1", "x2*x3"], [0.2, -0.3])):
        a = graph_volume(jlt123, sec, quadrature_rule(3, 24))
        b = graph_volume(jlt123, sec, quadrature_rule(3, 48))
        assert abs(a - b) <= 1e-9


def test_zero_amplitudes_give_zero_excess(jlt123):
    rep = perturbation_test(jlt123, [0.0], trials=3, rule=quadrature_rule(3, 12))
    assert all(e.excess == 0.0 for e in rep.entries)


def test_cos_mode_increases_length(jlt11):
    rule = quadrature_rule(2)
    assert graph_volume(jlt11, GraphSection(["x1"], [0.3]), rule) > 2 * math.pi


def test_perturbations_do_not_decrease_volume(jlt123):
    rep = perturbation_test(jlt123, [0.05, 0.5, 2.0], trials=60, rule=quadrature_rule(3, 16),
                            seed=4)
    assert rep.min_excess >= -1e-9 and not rep.violated
    assert rep.worst.excess == rep.min_excess


def test_perturbation_amplitude_bound(jlt11):
    with pytest.raises(InvalidArgumentError):
        perturbation_test(jlt11, [3.5], trials=1)


def test_range_violation(jlt11):
    with pytest.raises(DomainError):
        graph_volume(jlt11, GraphSection(["x1"], [4.0]), quadrature_rule(2))


def test_graph_volume_even_for_jlt(jlt123, rng):
    rule = quadrature_rule(3, 16)
    modes = degree2_modes(3)
    for _ in range(10):
        c = rng.uniform(-0.3, 0.3, len(modes))
        plus = graph_volume(jlt123, GraphSection(modes, c), rule)
        minus = graph_volume(jlt123, GraphSection(modes, -c), rule)
        assert abs(plus - minus) <= 1e-9 * plus


def test_constant_slices_are_smallest_at_q0(jlt123, rng):
    rule = quadrature_rule(3, 16)
    base = graph_volume(jlt123, GraphSection.constant(0.0), rule)
    for q in rng.uniform(-3, 3, 20):
        assert base <= graph_volume(jlt123, GraphSection.constant(q), rule) * (1 + 1e-9)


def test_defect_examples(const23):
    s = resolve_q0(jlt_neck((1.0, 1.0, 1.0)))
    assert mean_curvature_defect(s, ["1", "x1", "x2", "x3"], 1e-3) <= 1e-4
    s = resolve_q0(jlt_neck((1.0, 4.0)))
    assert mean_curvature_defect(s, ["1"], 1e-3) <= 1e-4
    assert mean_curvature_defect(const23, None, 1e-3) <= 1e-10
    with pytest.raises(InvalidArgumentError):
        mean_curvature_defect(s, ["1"], 0.0)


def test_first_variation_is_second_order():
    # f_1² = 1 + (s² - 1)²: q0 = -1 is critical but the volume is not even about it
    s = resolve_q0(NeckSpec(Sphere(2), (FactorProfile("even-polynomial", (2.0, -2.0, 1.0)),
                                        FactorProfile("constant", (1.0,))),
                            FiberMetricSpec(), (-1.2,), (1.2,)))
    rule = quadrature_rule(2, 48)
    d = [first_variation(s, (), h, rule) for h in (0.04, 0.02, 0.01)]
    assert abs(d[0]) > 1e-5
    assert 3.5 <= d[0] / d[1] <= 4.5 and 3.5 <= d[1] / d[2] <= 4.5
    assert abs(d[0] - d[1]) <= 4 * abs(d[1] - d[2]) * 1.2


def test_thread_count_does_not_change_volume(jlt123):
    rule = quadrature_rule(3, 80)
    assert rule.size > 8192
    sec = GraphSection(["x1", "x2*x2"], [0.4, -0.2])
    assert graph_volume(jlt123, sec, rule, threads=1) == graph_volume(jlt123, sec, rule, threads=4)


def test_report_serialisation(jlt11):
    rep = perturbation_test(jlt11, [0.2], trials=2, rule=quadrature_rule(2))
    d = rep.to_dict()
    assert set(d) == {"baseline_volume", "entries", "min_excess", "defect"}
    assert set(d["entries"][0]) == {"amplitudes", "volume", "excess"}
