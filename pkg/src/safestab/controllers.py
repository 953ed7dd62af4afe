"""Feedback controllers: closed-form penalty design and QP baselines.

The penalty controller minimizes ||u||^2/2 + (1/eps)(a + b.u) subject to the
hard half-space c + d.u <= 0 and has an explicit two-branch solution: the
unconstrained minimizer -b/eps when the switching value e = c - (1/eps) d.b
is nonpositive, and its projection onto the hyperplane {c + d.u = 0}
otherwise.  Two constraint selections turn this into "safety hard, stability
soft" or the reverse.

Baselines: the relaxed two-constraint QP in (u, delta) and the minimal
safety filter around a nominal controller.  qp_oracle is a generic dense
active-set enumerator used to cross-validate every closed form in the tests.
"""

from dataclasses import dataclass
from enum import Enum
from typing import Callable, Tuple

import numpy as np

from .errors import InfeasibleProblemError, ScenarioError, SingularConstraintError
from .systems import Scenario, SystemDynamics, lie_derivatives

_FEAS_TOL = 1e-9


class PenaltyMode(Enum):
    SAFETY_HARD = "safety-hard"
    STABILITY_HARD = "stability-hard"


@dataclass(frozen=True)
class PenaltyConfig:
    """Hard/soft constraint selection and penalty weight 1/epsilon."""

    mode: PenaltyMode
    epsilon: float

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ScenarioError("epsilon must be positive")


@dataclass(frozen=True)
class ConstraintData:
    """Soft constraint a + b.u <= 0 and hard constraint c + d.u <= 0 at a state."""

    a: float
    b: np.ndarray
    c: float
    d: np.ndarray


class ControlBranch(Enum):
    INTERIOR = "interior"
    PROJECTED_ONTO_HARD = "projected"


@dataclass(frozen=True)
class ControlOutput:
    u: np.ndarray
    branch: ControlBranch
    e_value: float
    hard_residual: float


def assemble_constraints(scenario: Scenario, config: PenaltyConfig, x) -> ConstraintData:
    """Map Lie-derivative data to the (a, b, c, d) constraint quadruple.

    SAFETY_HARD keeps the barrier inequality hard and penalizes the
    stability one; STABILITY_HARD swaps the roles.
    """
    data = lie_derivatives(scenario, x)
    stab_const = data.LfV + data.W
    stab_row = data.LgV
    safe_const = -data.Lfh - scenario.alpha(data.h)
    safe_row = -data.Lgh
    if config.mode is PenaltyMode.SAFETY_HARD:
        return ConstraintData(a=stab_const, b=stab_row, c=safe_const, d=safe_row)
    return ConstraintData(a=safe_const, b=safe_row, c=stab_const, d=stab_row)


def penalty_controller(data: ConstraintData, epsilon: float) -> ControlOutput:
    """Closed-form minimizer of ||u||^2/2 + (1/eps)(a + b.u) s.t. c + d.u <= 0.

    Returns -b/eps on the interior branch (e <= 0) and the hyperplane
    projection of -b/eps otherwise.  Raises SingularConstraintError when the
    projection is required but d = 0.
    """
    if epsilon <= 0:
        raise ScenarioError("epsilon must be positive")
    b = np.asarray(data.b, dtype=float)
    d = np.asarray(data.d, dtype=float)
    inv_eps = 1.0 / epsilon
    e = data.c - inv_eps * float(d @ b)
    v = -inv_eps * b
    if e <= 0.0:
        return ControlOutput(
            u=v, branch=ControlBranch.INTERIOR, e_value=e, hard_residual=e
        )
    dd = float(d @ d)
    if dd == 0.0:
        raise SingularConstraintError(
            "hard constraint has zero normal but positive switching value"
        )
    u = v - ((float(d @ v) + data.c) / dd) * d
    return ControlOutput(
        u=u,
        branch=ControlBranch.PROJECTED_ONTO_HARD,
        e_value=e,
        hard_residual=data.c + float(d @ u),
    )


def penalty_control(scenario: Scenario, config: PenaltyConfig, x) -> ControlOutput:
    """Assemble constraints at x and solve the penalty program.

    In STABILITY_HARD mode the hard-constraint normal L_g V vanishes at the
    origin, so evaluation inside the origin_tolerance ball returns u = 0
    instead of projecting onto a degenerate hyperplane.
    """
    x = np.asarray(x, dtype=float)
    if (
        config.mode is PenaltyMode.STABILITY_HARD
        and float(np.linalg.norm(x)) <= scenario.origin_tolerance
    ):
        data = assemble_constraints(scenario, config, x)
        u = np.zeros(scenario.input_dim)
        return ControlOutput(
            u=u,
            branch=ControlBranch.INTERIOR,
            e_value=data.c - (1.0 / config.epsilon) * float(data.d @ data.b),
            hard_residual=data.c,
        )
    return penalty_controller(assemble_constraints(scenario, config, x), config.epsilon)


def make_penalty_controller(
    scenario: Scenario, config: PenaltyConfig
) -> Callable[[np.ndarray], ControlOutput]:
    """Bind scenario and config into a state -> ControlOutput feedback map."""

    def controller(x):
        return penalty_control(scenario, config, x)

    return controller


def clf_cbf_qp_controller(
    scenario: Scenario, x, p: float
) -> Tuple[np.ndarray, float]:
    """Relaxed two-constraint QP: min ||u||^2/2 + p delta^2.

    Subject to the barrier inequality (hard) and the stability inequality
    relaxed by delta.  Solved exactly by enumerating the four active sets
    with closed-form KKT algebra; returns (u, delta).
    """
    if p <= 0:
        raise ScenarioError("p must be positive")
    data = lie_derivatives(scenario, x)
    lgh = data.Lgh
    lgv = data.LgV
    gg = float(lgh @ lgh)
    if gg == 0.0:
        raise SingularConstraintError(f"L_g h vanishes at {x!r}")
    r1 = data.Lfh + scenario.alpha(data.h)  # -Lgh.u <= r1
    r2 = -(data.LfV + data.W)  # LgV.u - delta <= r2
    vv = float(lgv @ lgv)
    q = float(lgh @ lgv)
    s = 1.0 / (2.0 * p)
    m = lgh.shape[0]

    candidates = []

    def try_candidate(u, delta, lams):
        if all(lam >= -_FEAS_TOL for lam in lams):
            c1 = -float(lgh @ u) - r1
            c2 = float(lgv @ u) - delta - r2
            if c1 <= _FEAS_TOL and c2 <= _FEAS_TOL:
                cost = 0.5 * float(u @ u) + p * delta * delta
                candidates.append((cost, float(u @ u), u, delta))

    # no active constraints
    try_candidate(np.zeros(m), 0.0, ())
    # barrier active only: u = lam1 * Lgh, delta = 0
    lam1 = -r1 / gg
    try_candidate(lam1 * lgh, 0.0, (lam1,))
    # stability active only: u = -lam2 * LgV, delta = lam2 / (2p)
    lam2 = -r2 / (vv + s)
    try_candidate(-lam2 * lgv, lam2 * s, (lam2,))
    # both active: 2x2 system in (lam1, lam2)
    det = gg * (vv + s) - q * q
    if det > 0.0:
        lam1 = (-(vv + s) * r1 - q * r2) / det
        lam2 = (-q * r1 - gg * r2) / det
        try_candidate(lam1 * lgh - lam2 * lgv, lam2 * s, (lam1, lam2))

    if not candidates:
        raise InfeasibleProblemError(
            f"relaxed QP infeasible at {x!r}: barrier certificate violated"
        )
    candidates.sort(key=lambda c: (c[0], c[1]))
    _, _, u, delta = candidates[0]
    return u, delta


def safety_filter_controller(scenario: Scenario, x, u_nom) -> np.ndarray:
    """Minimal modification of u_nom enforcing the barrier inequality.

    Returns u_nom unchanged when it already satisfies
    L_f h + L_g h u + alpha(h) >= 0, otherwise projects it onto that
    half-space.
    """
    u_nom = np.asarray(u_nom, dtype=float)
    data = lie_derivatives(scenario, x)
    resid = data.Lfh + float(data.Lgh @ u_nom) + scenario.alpha(data.h)
    if resid >= 0.0:
        return u_nom.copy()
    gg = float(data.Lgh @ data.Lgh)
    if gg == 0.0:
        raise SingularConstraintError(
            f"L_g h vanishes at {x!r} with the barrier inequality violated"
        )
    return u_nom + (-resid / gg) * data.Lgh


def nominal_adaptation(scenario: Scenario, u_nom) -> Scenario:
    """Fold a nominal controller into the drift: fbar = f + g u_nom.

    The returned scenario keeps g, V, W, h and alpha; running the penalty
    controller on it yields the correction v, and the applied input is
    u = v + u_nom(x).  u_nom must vanish at the origin so the derived drift
    still fixes it.
    """
    base = scenario.dynamics

    def drift(x):
        return np.asarray(base.drift(x), dtype=float) + np.asarray(
            base.actuation(x), dtype=float
        ) @ np.asarray(u_nom(x), dtype=float)

    dynamics = SystemDynamics(
        state_dim=base.state_dim,
        input_dim=base.input_dim,
        drift=drift,
        actuation=base.actuation,
    )
    return Scenario(
        dynamics=dynamics,
        clf=scenario.clf,
        clf_rate=scenario.clf_rate,
        cbf=scenario.cbf,
        alpha=scenario.alpha,
        working_region=scenario.working_region,
        origin_tolerance=scenario.origin_tolerance,
        name=f"{scenario.name}+nominal",
    )


@dataclass(frozen=True)
class OracleSolution:
    z: np.ndarray
    cost: float
    active: tuple


_PD_CACHE: dict = {}
_KKT_TEMPLATE_CACHE: dict = {}


def _ensure_positive_definite(Q):
    key = (Q.shape[0], Q.tobytes())
    hit = _PD_CACHE.get(key)
    if hit is None:
        try:
            np.linalg.cholesky(Q)
            hit = True
        except np.linalg.LinAlgError:
            hit = False
        if len(_PD_CACHE) > 64:
            _PD_CACHE.clear()
        _PD_CACHE[key] = hit
    if not hit:
        raise ScenarioError("qp_oracle needs a positive-definite cost matrix")


def qp_oracle(Q, q, constraints) -> OracleSolution:
    """Exact minimizer of z'Qz/2 + q'z s.t. each (row, rhs): row.z <= rhs.

    Full enumeration of active subsets with dense KKT solves; supports at
    most three constraints.  All 2^k systems are padded to a common size
    (identity rows for inactive multipliers) and solved as one stacked
    batch; singular subsets fall back to a sequential sweep.  Ties between
    optima are broken by least cost then least ||z||.  Used as the
    independent cross-check for every closed form in this module.
    """
    Q = np.asarray(Q, dtype=float)
    q = np.asarray(q, dtype=float)
    n = q.shape[0]
    if len(constraints) > 3:
        raise ScenarioError("qp_oracle handles at most 3 constraints")
    _ensure_positive_definite(Q)
    rows = [np.asarray(r, dtype=float) for r, _ in constraints]
    rhs = np.array([float(b) for _, b in constraints])
    k = len(rows)
    g_mat = np.vstack(rows) if k else np.zeros((0, n))
    nsub = 1 << k
    dim = n + k

    # the unconstrained stationary point, when feasible, is globally optimal
    z0 = np.linalg.solve(Q, -q)
    if k == 0 or not np.any(g_mat @ z0 > rhs + _FEAS_TOL):
        cost = 0.5 * float(z0 @ Q @ z0) + float(q @ z0)
        return OracleSolution(z=z0, cost=cost, active=())

    template_key = (n, k, Q.tobytes())
    template = _KKT_TEMPLATE_CACHE.get(template_key)
    if template is None:
        template = np.zeros((nsub, dim, dim))
        template[:, :n, :n] = Q
        idx = np.arange(n, dim)
        template[:, idx, idx] = 1.0
        if len(_KKT_TEMPLATE_CACHE) > 64:
            _KKT_TEMPLATE_CACHE.clear()
        _KKT_TEMPLATE_CACHE[template_key] = template
    kkts = template.copy()
    vecs = np.zeros((nsub, dim))
    vecs[:, :n] = -q
    for mask in range(nsub):
        for slot in range(k):
            if mask & (1 << slot):
                kkts[mask, :n, n + slot] = rows[slot]
                kkts[mask, n + slot, :n] = rows[slot]
                kkts[mask, n + slot, n + slot] = 0.0
                vecs[mask, n + slot] = rhs[slot]

    try:
        sols = np.linalg.solve(kkts, vecs[:, :, None])[:, :, 0]
    except np.linalg.LinAlgError:
        sols = np.full((nsub, dim), np.nan)
        for mask in range(nsub):
            try:
                sols[mask] = np.linalg.solve(kkts[mask], vecs[mask])
            except np.linalg.LinAlgError:
                continue

    zs = sols[:, :n]
    lams = sols[:, n:]
    valid = np.isfinite(sols).all(axis=1)
    valid &= (lams >= -_FEAS_TOL).all(axis=1)
    if k:
        valid &= (zs @ g_mat.T <= rhs + _FEAS_TOL).all(axis=1)
    if not valid.any():
        raise InfeasibleProblemError("oracle: no feasible active set")
    costs = 0.5 * np.einsum("ij,jk,ik->i", zs, Q, zs) + zs @ q
    norms = np.einsum("ij,ij->i", zs, zs)
    order = np.lexsort((norms, costs))
    winner = next(int(mask) for mask in order if valid[mask])
    active = tuple(i for i in range(k) if winner & (1 << i))
    return OracleSolution(
        z=zs[winner].copy(), cost=float(costs[winner]), active=active
    )
