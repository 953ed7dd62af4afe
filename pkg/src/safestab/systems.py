"""Control-affine systems, certificate functions, and benchmark scenarios.

A scenario bundles the dynamics ``xdot = f(x) + g(x) u`` with a stability
certificate V (positive definite, with decrease rate W), a safety certificate
h (safe set = {h >= 0}), and a class-K function alpha.  All maps are plain
callables; gradients are analytic closures supplied by the user, never
differentiated numerically inside the control path.
"""

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import NumericEvaluationError, ScenarioError
from .polynomials import (
    matrix_field_from_tables,
    poly_from_table,
    scalar_with_gradient,
    vector_field_from_tables,
)

_ORIGIN_CHECK_TOL = 1e-9


def _as_state(x, n, where):
    x = np.asarray(x, dtype=float)
    if x.shape != (n,):
        raise ScenarioError(f"{where}: expected state of shape ({n},), got {x.shape}")
    if not np.isfinite(x).all():
        raise NumericEvaluationError(where, x, x)
    return x


def _check_finite(name, x, value):
    value = np.asarray(value, dtype=float)
    if not np.isfinite(value).all():
        raise NumericEvaluationError(name, x, value)
    return value


def _check_finite_scalar(name, x, value):
    value = float(value)
    if not math.isfinite(value):
        raise NumericEvaluationError(name, x, value)
    return value


@dataclass(frozen=True)
class SystemDynamics:
    """Control-affine dynamics xdot = drift(x) + actuation(x) @ u."""

    state_dim: int
    input_dim: int
    drift: Callable[[np.ndarray], np.ndarray]
    actuation: Callable[[np.ndarray], np.ndarray]

    def __post_init__(self):
        if self.state_dim <= 0 or self.input_dim <= 0:
            raise ScenarioError("state_dim and input_dim must be positive")
        origin = np.zeros(self.state_dim)
        f0 = np.asarray(self.drift(origin), dtype=float)
        if f0.shape != (self.state_dim,):
            raise ScenarioError(
                f"drift must return shape ({self.state_dim},), got {f0.shape}"
            )
        if np.linalg.norm(f0) > _ORIGIN_CHECK_TOL:
            raise ScenarioError(
                f"drift(0) must vanish (origin is the target equilibrium); got {f0}"
            )
        g0 = np.asarray(self.actuation(origin), dtype=float)
        if g0.shape != (self.state_dim, self.input_dim):
            raise ScenarioError(
                f"actuation must return shape ({self.state_dim},{self.input_dim}),"
                f" got {g0.shape}"
            )


@dataclass(frozen=True)
class ScalarCertificate:
    """Differentiable scalar field with an analytic gradient closure.

    The gradient may be omitted for rate functions that are never
    differentiated (the decrease rate W).
    """

    value: Callable[[np.ndarray], float]
    gradient: Optional[Callable[[np.ndarray], np.ndarray]] = None


class ClassKFunction:
    """Strictly increasing scalar function with value 0 at 0.

    kind is one of "linear" (slope), "power" (coefficient * s**exponent for
    s >= 0, odd-extended to s < 0), or "custom" (arbitrary callable).
    """

    def __init__(self, kind, slope=None, coefficient=None, exponent=None, fn=None):
        self.kind = kind
        if kind == "linear":
            if slope is None or slope <= 0:
                raise ScenarioError("linear class-K function needs a positive slope")
            self.slope = float(slope)
        elif kind == "power":
            if coefficient is None or coefficient <= 0 or exponent is None or exponent <= 0:
                raise ScenarioError(
                    "power class-K function needs positive coefficient and exponent"
                )
            self.coefficient = float(coefficient)
            self.exponent = float(exponent)
        elif kind == "custom":
            if fn is None:
                raise ScenarioError("custom class-K function needs a callable")
            self.fn = fn
        else:
            raise ScenarioError(f"unknown class-K kind {kind!r}")

    @classmethod
    def linear(cls, slope):
        return cls("linear", slope=slope)

    @classmethod
    def power(cls, coefficient, exponent):
        return cls("power", coefficient=coefficient, exponent=exponent)

    @classmethod
    def custom(cls, fn):
        return cls("custom", fn=fn)

    def __call__(self, s):
        if self.kind == "linear":
            return self.slope * s
        if self.kind == "power":
            return self.coefficient * np.sign(s) * np.abs(s) ** self.exponent
        return self.fn(s)


@dataclass(frozen=True)
class Scenario:
    """Dynamics plus certificates over a compact working box.

    working_region is an (n, 2) array of per-axis [lo, hi] bounds; every
    sampled supremum/infimum in the analysis module is taken over the safe
    set intersected with this box.  origin_tolerance is the radius of the
    excluded neighborhood where the stability certificate's gradient may
    vanish.
    """

    dynamics: SystemDynamics
    clf: ScalarCertificate
    clf_rate: ScalarCertificate
    cbf: ScalarCertificate
    alpha: ClassKFunction
    working_region: np.ndarray
    origin_tolerance: float = 1e-6
    name: str = "custom"

    def __post_init__(self):
        region = np.asarray(self.working_region, dtype=float)
        n = self.dynamics.state_dim
        if region.shape != (n, 2) or np.any(region[:, 0] >= region[:, 1]):
            raise ScenarioError(
                f"working_region must be an ({n}, 2) array of [lo, hi] bounds"
            )
        object.__setattr__(self, "working_region", region)
        if self.origin_tolerance <= 0:
            raise ScenarioError("origin_tolerance must be positive")
        if self.clf.gradient is None or self.cbf.gradient is None:
            raise ScenarioError("clf and cbf need analytic gradients")
        origin = np.zeros(n)
        h0 = float(self.cbf.value(origin))
        if h0 < 0:
            raise ScenarioError(f"origin must lie in the safe set; h(0) = {h0}")
        # the origin is safe, so the barrier's input-gradient must act there;
        # this also rejects structurally zero actuation up front
        lgh0 = np.asarray(self.cbf.gradient(origin), dtype=float) @ np.asarray(
            self.dynamics.actuation(origin), dtype=float
        )
        if float(np.linalg.norm(lgh0)) == 0.0:
            raise ScenarioError(
                "L_g h vanishes at the origin (degenerate actuation or barrier)"
            )

    @property
    def state_dim(self):
        return self.dynamics.state_dim

    @property
    def input_dim(self):
        return self.dynamics.input_dim


@dataclass(frozen=True)
class LieData:
    """Lie derivatives and raw certificate values at a fixed state."""

    LfV: float
    LgV: np.ndarray
    Lfh: float
    Lgh: np.ndarray
    W: float
    h: float
    V: float


def lie_derivatives(scenario: Scenario, x) -> LieData:
    """Evaluate L_f V, L_g V, L_f h, L_g h and the raw V, W, h values at x.

    L_f V = grad(V) . f and L_g V = grad(V)^T g (a length-m covector), and
    likewise for h.
    """
    n = scenario.state_dim
    x = _as_state(x, n, "lie_derivatives")
    f = _check_finite("drift", x, scenario.dynamics.drift(x))
    g = _check_finite("actuation", x, scenario.dynamics.actuation(x))
    if f.shape != (n,):
        raise ScenarioError(f"drift returned shape {f.shape}, expected ({n},)")
    if g.shape != (n, scenario.input_dim):
        raise ScenarioError(
            f"actuation returned shape {g.shape},"
            f" expected ({n},{scenario.input_dim})"
        )
    grad_v = _check_finite("clf.gradient", x, scenario.clf.gradient(x))
    grad_h = _check_finite("cbf.gradient", x, scenario.cbf.gradient(x))
    v = _check_finite_scalar("clf.value", x, scenario.clf.value(x))
    w = _check_finite_scalar("clf_rate.value", x, scenario.clf_rate.value(x))
    h = _check_finite_scalar("cbf.value", x, scenario.cbf.value(x))
    return LieData(
        LfV=float(grad_v @ f),
        LgV=grad_v @ g,
        Lfh=float(grad_h @ f),
        Lgh=grad_h @ g,
        W=w,
        h=h,
        V=v,
    )


def validate_scenario(scenario: Scenario, samples: int = 256, seed: int = 0) -> None:
    """Sampled standing-assumption checks over the safe set in the box.

    Verifies finite evaluations, ||L_g h|| > 0 on safe samples, and
    ||L_g V|| > 0 on safe samples outside the origin_tolerance ball.
    Raises ScenarioError on the first violation.
    """
    rng = np.random.default_rng(seed)
    region = scenario.working_region
    lo, hi = region[:, 0], region[:, 1]
    for _ in range(samples):
        x = lo + (hi - lo) * rng.random(scenario.state_dim)
        data = lie_derivatives(scenario, x)
        if data.h < 0:
            continue
        if np.linalg.norm(data.Lgh) == 0.0:
            raise ScenarioError(f"L_g h vanishes at safe state {x}")
        if (
            np.linalg.norm(x) > scenario.origin_tolerance
            and np.linalg.norm(data.LgV) == 0.0
        ):
            raise ScenarioError(f"L_g V vanishes at safe state {x}")


def build_planar_example() -> Scenario:
    """Planar benchmark: f(x)=x, g=I2, V=||x||^2/2, W=||x||^2, alpha(s)=s.

    The safe set is the complement of the ball of radius 2 centered at
    (0, 4): h(x) = x1^2 + (x2 - 4)^2 - 4.
    """
    dynamics = SystemDynamics(
        state_dim=2,
        input_dim=2,
        drift=lambda x: np.asarray(x, dtype=float).copy(),
        actuation=lambda x: np.eye(2),
    )
    clf = ScalarCertificate(
        value=lambda x: 0.5 * float(x @ x),
        gradient=lambda x: np.asarray(x, dtype=float).copy(),
    )
    clf_rate = ScalarCertificate(value=lambda x: float(x @ x))
    cbf = ScalarCertificate(
        value=lambda x: float(x[0] ** 2 + (x[1] - 4.0) ** 2 - 4.0),
        gradient=lambda x: np.array([2.0 * x[0], 2.0 * (x[1] - 4.0)]),
    )
    return Scenario(
        dynamics=dynamics,
        clf=clf,
        clf_rate=clf_rate,
        cbf=cbf,
        alpha=ClassKFunction.linear(1.0),
        working_region=np.array([[-10.0, 10.0], [-10.0, 10.0]]),
        name="planar-v1",
    )


def build_random_polynomial_scenario(seed: int = 0) -> Scenario:
    """Randomized planar scenario with polynomial data, for cross-validation.

    V = x'Px/2 with P random SPD, W = x'Qx with Q random SPD, h keeps the
    complement of a random ball (center away from the origin) safe, f is a
    random linear field with f(0)=0, and g is a random well-conditioned
    constant matrix.
    """
    rng = np.random.default_rng(seed)
    n = 2
    a = rng.normal(size=(n, n))
    p_mat = a.T @ a + 0.3 * np.eye(n)
    b = rng.normal(size=(n, n))
    q_mat = b.T @ b + 0.3 * np.eye(n)
    a_lin = rng.normal(scale=0.8, size=(n, n))
    g_mat = np.eye(n) + 0.3 * rng.normal(size=(n, n))
    while abs(np.linalg.det(g_mat)) < 0.3:
        g_mat = np.eye(n) + 0.3 * rng.normal(size=(n, n))
    direction = rng.normal(size=n)
    direction /= np.linalg.norm(direction)
    center = direction * rng.uniform(3.5, 5.5)
    radius = rng.uniform(1.0, 2.0)
    slope = rng.uniform(0.5, 2.0)

    dynamics = SystemDynamics(
        state_dim=n,
        input_dim=n,
        drift=lambda x: a_lin @ x,
        actuation=lambda x, g=g_mat: g,
    )
    clf = ScalarCertificate(
        value=lambda x: 0.5 * float(x @ p_mat @ x),
        gradient=lambda x: p_mat @ x,
    )
    clf_rate = ScalarCertificate(value=lambda x: float(x @ q_mat @ x))
    cbf = ScalarCertificate(
        value=lambda x: float((x - center) @ (x - center) - radius**2),
        gradient=lambda x: 2.0 * (x - center),
    )
    return Scenario(
        dynamics=dynamics,
        clf=clf,
        clf_rate=clf_rate,
        cbf=cbf,
        alpha=ClassKFunction.linear(slope),
        working_region=np.array([[-8.0, 8.0], [-8.0, 8.0]]),
        name=f"random-poly-{seed}",
    )


def scenario_from_tables(spec: dict) -> Scenario:
    """Build a Scenario from plain config data (polynomial coefficient tables).

    Expected keys: state_dim, input_dim, drift (list of term tables, one per
    component), actuation (nested table, scalar entries allowed), clf / cbf /
    clf_rate (term tables), alpha ({kind, ...}), working_region ([[lo, hi],
    ...]), optional origin_tolerance and name.  Each term table row is
    [coeff, e1, ..., en].
    """
    try:
        n = int(spec["state_dim"])
        m = int(spec["input_dim"])
        drift_fn, _ = vector_field_from_tables(n, spec["drift"])
        actuation_fn = matrix_field_from_tables(n, spec["actuation"])
        clf_poly = poly_from_table(n, spec["clf"])
        rate_poly = poly_from_table(n, spec["clf_rate"])
        cbf_poly = poly_from_table(n, spec["cbf"])
        alpha_spec = spec["alpha"]
        region = np.asarray(spec["working_region"], dtype=float)
    except KeyError as exc:
        raise ScenarioError(f"scenario table missing key {exc.args[0]!r}") from exc
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"bad scenario table: {exc}") from exc

    kind = alpha_spec.get("kind", "linear")
    if kind == "linear":
        alpha = ClassKFunction.linear(float(alpha_spec.get("slope", 1.0)))
    elif kind == "power":
        alpha = ClassKFunction.power(
            float(alpha_spec["coefficient"]), float(alpha_spec["exponent"])
        )
    else:
        raise ScenarioError(f"config alpha kind must be linear or power, got {kind!r}")

    clf_value, clf_grad = scalar_with_gradient(clf_poly)
    cbf_value, cbf_grad = scalar_with_gradient(cbf_poly)
    dynamics = SystemDynamics(
        state_dim=n, input_dim=m, drift=drift_fn, actuation=actuation_fn
    )
    return Scenario(
        dynamics=dynamics,
        clf=ScalarCertificate(value=clf_value, gradient=clf_grad),
        clf_rate=ScalarCertificate(value=lambda x: rate_poly(x)),
        cbf=ScalarCertificate(value=cbf_value, gradient=cbf_grad),
        alpha=alpha,
        working_region=region,
        origin_tolerance=float(spec.get("origin_tolerance", 1e-6)),
        name=str(spec.get("name", "custom")),
    )


BUILTIN_SCENARIOS = {
    "planar-v1": build_planar_example,
}


def resolve_scenario(name: str) -> Scenario:
    try:
        return BUILTIN_SCENARIOS[name]()
    except KeyError:
        known = ", ".join(sorted(BUILTIN_SCENARIOS))
        raise ScenarioError(f"unknown scenario {name!r}; available: {known}")
