import numpy as np
import pytest

from safestab import (
    ConstraintData,
    ControlBranch,
    InfeasibleProblemError,
    PenaltyConfig,
    PenaltyMode,
    ScenarioError,
    SingularConstraintError,
    assemble_constraints,
    clf_cbf_qp_controller,
    lie_derivatives,
    nominal_adaptation,
    penalty_control,
    penalty_controller,
    qp_oracle,
    safety_filter_controller,
)
from conftest import sample_safe_states

SAFETY_HARD = PenaltyConfig(PenaltyMode.SAFETY_HARD, 0.01)


def test_assemble_safety_hard_at_0_9(planar):
    data = assemble_constraints(planar, SAFETY_HARD, np.array([0.0, 9.0]))
    assert data.a == 162.0
    assert np.allclose(data.b, [0.0, 9.0])
    assert data.c == -111.0
    assert np.allclose(data.d, [0.0, -10.0])


def test_assemble_stability_hard_swaps_roles(planar):
    cfg = PenaltyConfig(PenaltyMode.STABILITY_HARD, 0.01)
    data = assemble_constraints(planar, cfg, np.array([0.0, 9.0]))
    assert data.a == -111.0
    assert np.allclose(data.b, [0.0, -10.0])
    assert data.c == 162.0
    assert np.allclose(data.d, [0.0, 9.0])


def test_assemble_at_origin(planar):
    data = assemble_constraints(planar, SAFETY_HARD, np.zeros(2))
    assert np.allclose(data.b, 0.0)
    assert data.c == -12.0  # h(0)=12, Lfh(0)=0


def test_penalty_projection_branch_at_0_9(planar):
    data = assemble_constraints(planar, SAFETY_HARD, np.array([0.0, 9.0]))
    out = penalty_controller(data, 0.01)
    assert out.branch is ControlBranch.PROJECTED_ONTO_HARD
    assert out.e_value == pytest.approx(8889.0)
    assert np.allclose(out.u, [0.0, -11.1], atol=1e-12)
    assert abs(out.hard_residual) <= 1e-9


def test_penalty_origin_is_interior_zero(planar):
    out = penalty_control(planar, SAFETY_HARD, np.zeros(2))
    assert out.branch is ControlBranch.INTERIOR
    assert np.allclose(out.u, 0.0)
    assert out.e_value == -12.0


def test_penalty_interior_is_unconstrained_minimizer(planar):
    for x in sample_safe_states(planar, 300, seed=4):
        data = assemble_constraints(planar, SAFETY_HARD, x)
        out = penalty_controller(data, 0.01)
        if out.branch is ControlBranch.INTERIOR:
            assert np.array_equal(out.u, -100.0 * data.b)


def test_penalty_rejects_bad_epsilon(planar):
    data = assemble_constraints(planar, SAFETY_HARD, np.array([1.0, 1.0]))
    with pytest.raises(ScenarioError):
        penalty_controller(data, 0.0)
    with pytest.raises(ScenarioError):
        PenaltyConfig(PenaltyMode.SAFETY_HARD, -1.0)


def test_penalty_singular_hard_constraint():
    data = ConstraintData(a=1.0, b=np.array([1.0, 0.0]), c=5.0, d=np.zeros(2))
    with pytest.raises(SingularConstraintError):
        penalty_controller(data, 0.1)


def test_penalty_branch_tie_is_benign():
    # at e = 0 the projection of the interior minimizer is itself
    b = np.array([2.0, -1.0])
    d = np.array([0.5, 1.5])
    eps = 0.25
    c = float(d @ b) / eps  # makes e = 0 exactly
    interior = penalty_controller(ConstraintData(1.0, b, c, d), eps)
    assert interior.branch is ControlBranch.INTERIOR
    projected_u = (-b / eps) - ((d @ (-b / eps)) + c) / (d @ d) * d
    assert np.linalg.norm(interior.u - projected_u) <= 1e-9
    for bump in (-1e-12, 1e-12):
        out = penalty_controller(ConstraintData(1.0, b, c + bump, d), eps)
        assert np.linalg.norm(out.u - interior.u) <= 1e-9


def test_penalty_decrease_identity_on_interior_branch(planar):
    for x in sample_safe_states(planar, 400, seed=9):
        data = assemble_constraints(planar, SAFETY_HARD, x)
        out = penalty_controller(data, 0.01)
        if out.branch is ControlBranch.INTERIOR:
            d = lie_derivatives(planar, x)
            z = d.LfV + d.LgV @ out.u + d.W
            expected = data.a - 100.0 * float(data.b @ data.b)
            assert z == pytest.approx(expected, abs=1e-9 * max(1.0, abs(expected)))


def test_penalty_hard_residual_and_branch_consistency(planar, random_poly):
    for scenario, seed in ((planar, 21), (random_poly, 22)):
        for x in sample_safe_states(scenario, 500, seed=seed):
            out = penalty_control(scenario, SAFETY_HARD, x)
            assert out.hard_residual <= 1e-9
            assert (out.branch is ControlBranch.INTERIOR) == (out.e_value <= 0.0)


def test_stability_hard_returns_zero_near_origin(planar):
    cfg = PenaltyConfig(PenaltyMode.STABILITY_HARD, 0.01)
    out = penalty_control(planar, cfg, np.array([0.0, 1e-9]))
    assert np.allclose(out.u, 0.0)
    far = penalty_control(planar, cfg, np.array([1.0, 1.0]))
    assert np.linalg.norm(far.u) > 0.0


def test_penalty_matches_oracle(planar, random_poly):
    for scenario, seed in ((planar, 31), (random_poly, 32)):
        worst = 0.0
        for x in sample_safe_states(scenario, 2000, seed=seed):
            data = assemble_constraints(scenario, SAFETY_HARD, x)
            out = penalty_controller(data, 0.01)
            sol = qp_oracle(np.eye(2), data.b / 0.01, [(data.d, -data.c)])
            worst = max(worst, float(np.abs(out.u - sol.z).max()))
        assert worst <= 1e-8


@pytest.mark.parametrize("which", ["planar", "poly"])
def test_penalty_difference_quotient_bounded(which, planar, random_poly):
    # sampled Lipschitz estimate where the barrier gradient is nonzero;
    # measured maxima are ~185 (planar) and ~266 (poly)
    scenario = planar if which == "planar" else random_poly
    rng = np.random.default_rng(12)
    quotients = []
    for x in sample_safe_states(scenario, 1000, seed=13, min_norm=0.1):
        d = lie_derivatives(scenario, x)
        if np.linalg.norm(d.Lgh) < 1.0:
            continue
        delta = rng.normal(size=2)
        delta *= 1e-4 / np.linalg.norm(delta)
        y = x + delta
        if scenario.cbf.value(y) < 0.0:
            continue
        ux = penalty_control(scenario, SAFETY_HARD, x).u
        uy = penalty_control(scenario, SAFETY_HARD, y).u
        quotients.append(np.linalg.norm(ux - uy) / np.linalg.norm(delta))
    assert len(quotients) > 500
    assert max(quotients) < 1e3


def test_clf_cbf_qp_at_0_9(planar):
    # both constraints active at the optimum; verified against brute force
    u, delta = clf_cbf_qp_controller(planar, np.array([0.0, 9.0]), 1.0)
    assert np.allclose(u, [0.0, -11.1], atol=1e-9)
    assert delta == pytest.approx(62.1, abs=1e-9)


def test_clf_cbf_qp_at_origin(planar):
    u, delta = clf_cbf_qp_controller(planar, np.zeros(2), 1.0)
    assert np.allclose(u, 0.0)
    assert delta == 0.0


def test_clf_cbf_qp_unconstrained_when_feasible_at_zero(planar):
    # drift already satisfies both rows at u=0 on this adapted scenario
    adapted = nominal_adaptation(planar, lambda x: -2.0 * x)
    u, delta = clf_cbf_qp_controller(adapted, np.array([-1.0, -1.0]), 1.0)
    assert np.allclose(u, 0.0)
    assert delta == 0.0


def test_clf_cbf_qp_rejects_degenerate_inputs(planar):
    with pytest.raises(ScenarioError):
        clf_cbf_qp_controller(planar, np.array([1.0, 1.0]), 0.0)
    with pytest.raises(SingularConstraintError):
        clf_cbf_qp_controller(planar, np.array([0.0, 4.0]), 1.0)


def test_clf_cbf_qp_matches_oracle(planar, random_poly):
    q_mat = np.diag([1.0, 1.0, 2.0])
    for scenario, seed in ((planar, 41), (random_poly, 42)):
        worst = 0.0
        for x in sample_safe_states(scenario, 1500, seed=seed):
            d = lie_derivatives(scenario, x)
            u, delta = clf_cbf_qp_controller(scenario, x, 1.0)
            cons = [
                (np.array([-d.Lgh[0], -d.Lgh[1], 0.0]), d.Lfh + scenario.alpha(d.h)),
                (np.array([d.LgV[0], d.LgV[1], -1.0]), -(d.LfV + d.W)),
            ]
            sol = qp_oracle(q_mat, np.zeros(3), cons)
            worst = max(
                worst, float(np.abs(np.concatenate([u, [delta]]) - sol.z).max())
            )
        assert worst <= 1e-8


def test_safety_filter_passthrough(planar):
    u_nom = np.array([0.3, 0.1])
    x = np.array([5.0, -5.0])
    d = lie_derivatives(planar, x)
    assert d.Lfh + d.Lgh @ u_nom + planar.alpha(d.h) >= 0.0
    assert np.array_equal(safety_filter_controller(planar, x, u_nom), u_nom)


def test_safety_filter_projection_example(planar):
    u = safety_filter_controller(planar, np.array([0.0, 6.5]), np.array([0.0, -13.0]))
    assert np.allclose(u, [0.0, -6.95], atol=1e-12)


def test_safety_filter_zero_nominal(planar):
    x = np.array([3.0, 0.0])
    d = lie_derivatives(planar, x)
    assert d.Lfh + planar.alpha(d.h) >= 0.0
    assert np.allclose(safety_filter_controller(planar, x, np.zeros(2)), 0.0)


def test_safety_filter_singular(planar):
    # at the unsafe-ball center the barrier gradient vanishes and u=0 violates
    with pytest.raises(SingularConstraintError):
        safety_filter_controller(planar, np.array([0.0, 4.0]), np.zeros(2))


def test_safety_filter_matches_oracle(planar, random_poly):
    for scenario, seed in ((planar, 51), (random_poly, 52)):
        worst = 0.0
        for x in sample_safe_states(scenario, 1500, seed=seed):
            d = lie_derivatives(scenario, x)
            u_nom = -2.0 * np.asarray(x)
            u = safety_filter_controller(scenario, x, u_nom)
            sol = qp_oracle(
                np.eye(2), -u_nom, [(-d.Lgh, d.Lfh + scenario.alpha(d.h))]
            )
            worst = max(worst, float(np.abs(u - sol.z).max()))
        assert worst <= 1e-8


def test_nominal_adaptation_zero_is_identity(planar):
    derived = nominal_adaptation(planar, lambda x: np.zeros(2))
    rng = np.random.default_rng(6)
    for _ in range(100):
        x = rng.uniform(-10, 10, 2)
        a = lie_derivatives(planar, x)
        b = lie_derivatives(derived, x)
        assert a.LfV == pytest.approx(b.LfV)
        assert a.Lfh == pytest.approx(b.Lfh)


def test_nominal_adaptation_cancels_drift(planar):
    derived = nominal_adaptation(planar, lambda x: -2.0 * x)
    cfg = PenaltyConfig(PenaltyMode.SAFETY_HARD, 0.1)
    rng = np.random.default_rng(8)
    for _ in range(100):
        x = rng.uniform(-10, 10, 2)
        data = assemble_constraints(derived, cfg, x)
        # soft constraint constant L_fbar V + W = -||x||^2 + ||x||^2 = 0
        assert data.a == pytest.approx(0.0, abs=1e-12)
        d_old = lie_derivatives(planar, x)
        d_new = lie_derivatives(derived, x)
        assert np.allclose(d_old.Lgh, d_new.Lgh)  # actuation untouched


def test_qp_oracle_unconstrained_and_projection():
    sol = qp_oracle(np.eye(2), np.array([1.0, -2.0]), [])
    assert np.allclose(sol.z, [-1.0, 2.0])
    # single active constraint equals the half-space projection
    row = np.array([1.0, 1.0])
    sol = qp_oracle(np.eye(2), np.array([1.0, -2.0]), [(row, -3.0)])
    target = np.array([-1.0, 2.0])
    expected = target - ((row @ target) + 3.0) / (row @ row) * row
    assert np.allclose(sol.z, expected)
    assert sol.active == (0,)


def test_stability_hard_keeps_its_hard_constraint(planar):
    cfg = PenaltyConfig(PenaltyMode.STABILITY_HARD, 0.05)
    for x in sample_safe_states(planar, 300, seed=23, min_norm=0.01):
        out = penalty_control(planar, cfg, x)
        assert out.hard_residual <= 1e-9
        d = lie_derivatives(planar, x)
        # hard constraint is the decrease inequality itself
        assert d.LfV + d.LgV @ out.u + d.W <= 1e-9


def test_qp_oracle_three_constraints():
    sol = qp_oracle(
        np.eye(2),
        np.zeros(2),
        [
            (np.array([1.0, 0.0]), -1.0),
            (np.array([0.0, 1.0]), -1.0),
            (np.array([1.0, 1.0]), -3.0),
        ],
    )
    assert np.allclose(sol.z, [-1.5, -1.5])
    assert sol.active == (2,)


def test_qp_oracle_infeasible():
    with pytest.raises(InfeasibleProblemError):
        qp_oracle(
            np.eye(1), np.zeros(1), [(np.array([1.0]), -1.0), (np.array([-1.0]), -1.0)]
        )


def test_qp_oracle_input_validation():
    with pytest.raises(ScenarioError):
        qp_oracle(np.eye(2), np.zeros(2), [(np.ones(2), 0.0)] * 4)
    with pytest.raises(ScenarioError):
        qp_oracle(-np.eye(2), np.zeros(2), [])
