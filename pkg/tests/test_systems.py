import numpy as np
import pytest

from safestab import (
    ClassKFunction,
    NumericEvaluationError,
    ScalarCertificate,
    Scenario,
    ScenarioError,
    SystemDynamics,
    build_random_polynomial_scenario,
    lie_derivatives,
    resolve_scenario,
    scenario_from_tables,
    validate_scenario,
)
from conftest import sample_safe_states
from oracles import central_difference_gradient


def test_planar_lie_values_at_0_9(planar):
    d = lie_derivatives(planar, np.array([0.0, 9.0]))
    assert d.LfV == 81.0
    assert np.allclose(d.LgV, [0.0, 9.0])
    assert d.Lfh == 90.0
    assert np.allclose(d.Lgh, [0.0, 10.0])
    assert d.h == 21.0
    assert d.W == 81.0
    assert d.V == 40.5


def test_planar_lie_values_at_origin(planar):
    d = lie_derivatives(planar, np.zeros(2))
    assert d.LfV == 0.0
    assert np.allclose(d.LgV, 0.0)
    assert d.h == 12.0


def test_planar_lie_values_at_boundary_equilibrium(planar):
    d = lie_derivatives(planar, np.array([0.0, 6.0]))
    assert d.Lfh == 24.0
    assert np.allclose(d.Lgh, [0.0, 4.0])
    assert d.h == 0.0


def test_planar_landmarks(planar):
    assert planar.cbf.value(np.array([0.0, 4.0])) == -4.0
    assert planar.cbf.value(np.array([0.0, 6.0])) == 0.0
    assert planar.clf.value(np.array([2.0, 0.0])) == 2.0
    assert planar.name == "planar-v1"


def test_resolve_scenario_round_trip(planar):
    assert resolve_scenario("planar-v1").name == planar.name
    with pytest.raises(ScenarioError, match="planar-v1"):
        resolve_scenario("nope")


@pytest.mark.parametrize("which", ["planar", "poly"])
def test_gradient_consistency(which, planar, random_poly):
    scenario = planar if which == "planar" else random_poly
    rng = np.random.default_rng(3)
    lo = scenario.working_region[:, 0]
    hi = scenario.working_region[:, 1]
    for _ in range(1000):
        x = lo + (hi - lo) * rng.random(2)
        for cert in (scenario.clf, scenario.cbf):
            analytic = cert.gradient(x)
            numeric = central_difference_gradient(cert.value, x)
            scale = max(np.linalg.norm(analytic), 1.0)
            assert np.linalg.norm(analytic - numeric) <= 1e-5 * scale


@pytest.mark.parametrize("which", ["planar", "poly"])
def test_clf_is_positive_definite(which, planar, random_poly):
    scenario = planar if which == "planar" else random_poly
    assert scenario.clf.value(np.zeros(2)) == 0.0
    rng = np.random.default_rng(17)
    lo = scenario.working_region[:, 0]
    hi = scenario.working_region[:, 1]
    for _ in range(500):
        x = lo + (hi - lo) * rng.random(2)
        if np.linalg.norm(x) > 1e-12:
            assert scenario.clf.value(x) > 0.0


def test_planar_clf_inequality_with_reference_feedback(planar):
    # u = -2x certifies the decrease condition everywhere
    for x in sample_safe_states(planar, 500, seed=11):
        d = lie_derivatives(planar, x)
        u = -2.0 * x
        assert d.LfV + d.LgV @ u + d.W <= 1e-9


def test_class_k_functions():
    lin = ClassKFunction.linear(2.0)
    assert lin(0.0) == 0.0
    grid = np.linspace(0.0, 50.0, 101)
    assert np.all(np.diff([lin(s) for s in grid]) > 0)
    assert lin(1e6) > 1e5  # unbounded growth for the K-infinity use
    pw = ClassKFunction.power(0.5, 3.0)
    assert pw(0.0) == 0.0
    vals = [pw(s) for s in grid]
    assert np.all(np.diff(vals) > 0)
    cust = ClassKFunction.custom(lambda s: np.arctan(s))
    assert cust(0.0) == 0.0
    with pytest.raises(ScenarioError):
        ClassKFunction.linear(-1.0)
    with pytest.raises(ScenarioError):
        ClassKFunction.power(1.0, 0.0)
    with pytest.raises(ScenarioError):
        ClassKFunction("weird")


def test_drift_must_fix_origin():
    with pytest.raises(ScenarioError, match="drift"):
        SystemDynamics(
            state_dim=2,
            input_dim=2,
            drift=lambda x: x + 1.0,
            actuation=lambda x: np.eye(2),
        )


def test_origin_must_be_safe(planar):
    with pytest.raises(ScenarioError, match="safe set"):
        Scenario(
            dynamics=planar.dynamics,
            clf=planar.clf,
            clf_rate=planar.clf_rate,
            cbf=ScalarCertificate(
                value=lambda x: -1.0 - float(x @ x), gradient=lambda x: -2.0 * x
            ),
            alpha=planar.alpha,
            working_region=planar.working_region,
        )


def test_bad_working_region(planar):
    with pytest.raises(ScenarioError, match="working_region"):
        Scenario(
            dynamics=planar.dynamics,
            clf=planar.clf,
            clf_rate=planar.clf_rate,
            cbf=planar.cbf,
            alpha=planar.alpha,
            working_region=np.array([[1.0, -1.0], [-1.0, 1.0]]),
        )


def test_dimension_mismatch_rejected(planar):
    with pytest.raises(ScenarioError):
        lie_derivatives(planar, np.zeros(3))


def test_non_finite_evaluation_names_field(planar):
    bad = Scenario(
        dynamics=planar.dynamics,
        clf=planar.clf,
        clf_rate=ScalarCertificate(
            value=lambda x: float("nan") if x[0] > 5.0 else float(x @ x)
        ),
        cbf=planar.cbf,
        alpha=planar.alpha,
        working_region=planar.working_region,
    )
    with pytest.raises(NumericEvaluationError, match="clf_rate.value"):
        lie_derivatives(bad, np.array([6.0, 0.0]))


def test_validate_scenario_planar_passes(planar):
    validate_scenario(planar, samples=200, seed=1)


def test_zero_actuation_rejected_at_construction(planar):
    with pytest.raises(ScenarioError, match="L_g h"):
        Scenario(
            dynamics=SystemDynamics(
                state_dim=2,
                input_dim=2,
                drift=lambda x: np.asarray(x, float).copy(),
                actuation=lambda x: np.zeros((2, 2)),
            ),
            clf=planar.clf,
            clf_rate=planar.clf_rate,
            cbf=planar.cbf,
            alpha=planar.alpha,
            working_region=planar.working_region,
        )


def test_validate_scenario_catches_vanishing_barrier_gradient(planar):
    # gradient fine at the origin but flat over part of the safe set
    bad = Scenario(
        dynamics=planar.dynamics,
        clf=planar.clf,
        clf_rate=planar.clf_rate,
        cbf=ScalarCertificate(
            value=lambda x: min(float(x[0]), 2.0) + 10.0,
            gradient=lambda x: np.array([1.0 if x[0] < 2.0 else 0.0, 0.0]),
        ),
        alpha=planar.alpha,
        working_region=planar.working_region,
    )
    with pytest.raises(ScenarioError, match="L_g h"):
        validate_scenario(bad, samples=200, seed=1)


PLANAR_TABLES = {
    "name": "planar-from-tables",
    "state_dim": 2,
    "input_dim": 2,
    "drift": [[[1.0, 1, 0]], [[1.0, 0, 1]]],
    "actuation": [[1.0, 0.0], [0.0, 1.0]],
    "clf": [[0.5, 2, 0], [0.5, 0, 2]],
    "clf_rate": [[1.0, 2, 0], [1.0, 0, 2]],
    "cbf": [[1.0, 2, 0], [1.0, 0, 2], [-8.0, 0, 1], [12.0, 0, 0]],
    "alpha": {"kind": "linear", "slope": 1.0},
    "working_region": [[-10.0, 10.0], [-10.0, 10.0]],
}


def test_scenario_from_tables_matches_closures(planar):
    tabled = scenario_from_tables(PLANAR_TABLES)
    rng = np.random.default_rng(5)
    for _ in range(200):
        x = rng.uniform(-10, 10, 2)
        a = lie_derivatives(planar, x)
        b = lie_derivatives(tabled, x)
        assert abs(a.LfV - b.LfV) <= 1e-9 * max(abs(a.LfV), 1.0)
        assert np.allclose(a.LgV, b.LgV)
        assert np.allclose(a.Lgh, b.Lgh)
        assert abs(a.h - b.h) <= 1e-9 * max(abs(a.h), 1.0)


def test_scenario_from_tables_rejects_moving_origin():
    bad = dict(PLANAR_TABLES)
    bad["drift"] = [[[1.0, 1, 0], [0.5, 0, 0]], [[1.0, 0, 1]]]  # f1(0) = 0.5
    with pytest.raises(ScenarioError):
        scenario_from_tables(bad)


def test_scenario_from_tables_missing_key():
    bad = {k: v for k, v in PLANAR_TABLES.items() if k != "cbf"}
    with pytest.raises(ScenarioError, match="cbf"):
        scenario_from_tables(bad)


def test_random_poly_scenario_is_valid():
    for seed in (0, 7, 23):
        sc = build_random_polynomial_scenario(seed)
        validate_scenario(sc, samples=100, seed=2)
        assert sc.cbf.value(np.zeros(2)) > 0.0
