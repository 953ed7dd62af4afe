"""Closed-loop analysis: spurious equilibria, incompatibility, ROA tuning.

Everything here works on sampled approximations over the scenario's working
box: sampled suprema underestimate and sampled infima overestimate the exact
constants, so certified thresholds are used with a 0.9 margin and backed by
an explicit sampled decrease check.  All scans are deterministic given the
SamplingPlan seed.
"""

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .controllers import PenaltyConfig, PenaltyMode, penalty_control
from .errors import CertificateRefusal, SingularConstraintError
from .systems import Scenario, lie_derivatives

DEP_TOL = 1e-8
C_TOL = 1e-6
BOUNDARY_TOL = 1e-6
BC_TOL = 1e-6
_BISECT_H_TOL = 1e-10
_NEWTON_FD_STEP = 1e-6
_NEWTON_MAX_ITER = 50
_NEWTON_ACCEPT = 1e-8


@dataclass(frozen=True)
class SamplingPlan:
    """Deterministic sampling budget for scans over the working box."""

    grid_resolution: int = 81
    random_samples: int = 2000
    boundary_samples: int = 512
    seed: int = 0

    def __post_init__(self):
        if self.grid_resolution < 2:
            raise ValueError("grid_resolution must be at least 2")
        if self.random_samples < 0 or self.boundary_samples < 0:
            raise ValueError("sample counts must be nonnegative")


@dataclass(frozen=True)
class EquilibriumScan:
    q1_candidates: List[Tuple[np.ndarray, float]]
    q2_candidates: List[Tuple[np.ndarray, float]]
    n1: float
    n2: Optional[float]
    n3: float
    n4: Optional[float]
    epsilon_q1_bound: float
    epsilon_q2_bound: Optional[float]
    neighborhood_radius: float
    boundary_count: int


@dataclass(frozen=True)
class RoaCertificate:
    nu: float
    m1: float
    m2: float
    m3: float
    m4: float
    epsilon_bar: float
    epsilon_hat: Optional[float]
    l1_estimate: Optional[float]
    l2_estimate: Optional[float]
    incompatible_free: bool
    neighborhood_radius_V: float
    neighborhood_radius_W: float
    degenerate: bool
    sample_count: int
    bc_margin: float


@dataclass(frozen=True)
class LimitEstimates:
    """Sphere-sampled origin limits of the two decrease ratios.

    l1 tracks ||LgV||^2 / |LfV + W| (interior branch); l2 tracks |C| / B
    restricted to directions where the hard constraint can activate
    (Lgh.LgV > 0) with B > 0, the only place where the ratio gates the
    decrease.  Values are the smallest sampled ratio per sphere.
    """

    radii: Tuple[float, ...]
    l1_by_radius: Tuple[float, ...]
    l2_by_radius: Tuple[float, ...]
    l1_estimate: float
    l2_estimate: float
    l1_monotone_nonincreasing: bool
    l2_monotone_nonincreasing: bool


@dataclass(frozen=True)
class LevelEstimate:
    nu_incompatibility: float
    nu_boundary: Optional[float]
    nu_star: float


@dataclass(frozen=True)
class IncompatibilityResult:
    incompatible: bool
    dependent: bool
    aligned: bool
    mu: float
    lhs: float
    rhs: float


def switching_function(scenario: Scenario, x, epsilon: float) -> float:
    """Branch selector of the safety-hard controller:
    e = -Lfh + (1/eps) Lgh.LgV - alpha(h)."""
    data = lie_derivatives(scenario, x)
    return float(
        -data.Lfh + (1.0 / epsilon) * float(data.Lgh @ data.LgV)
        - scenario.alpha(data.h)
    )


def q1_residual(scenario: Scenario, x, epsilon: float) -> np.ndarray:
    """Interior-branch equilibrium residual f(x) - (1/eps) g(x) LgV(x)."""
    data = lie_derivatives(scenario, x)
    f = np.asarray(scenario.dynamics.drift(x), dtype=float)
    g = np.asarray(scenario.dynamics.actuation(x), dtype=float)
    return f - (1.0 / epsilon) * (g @ data.LgV)


def q2_residual(scenario: Scenario, x, epsilon: float) -> np.ndarray:
    """Projection-branch equilibrium residual.

    f(x) - (Lfh + alpha(h)) / ||Lgh||^2 g Lgh
         - (1/eps) g (LgV - (Lgh.LgV)/||Lgh||^2 Lgh).
    """
    data = lie_derivatives(scenario, x)
    gg = float(data.Lgh @ data.Lgh)
    if gg == 0.0:
        raise SingularConstraintError(f"L_g h vanishes at {x!r}")
    f = np.asarray(scenario.dynamics.drift(x), dtype=float)
    g = np.asarray(scenario.dynamics.actuation(x), dtype=float)
    mu = float(data.Lgh @ data.LgV) / gg
    hard_part = (data.Lfh + scenario.alpha(data.h)) / gg * (g @ data.Lgh)
    soft_part = (1.0 / epsilon) * (g @ (data.LgV - mu * data.Lgh))
    return f - hard_part - soft_part


def incompatibility_test(scenario: Scenario, x, dep_tol: float = DEP_TOL) -> IncompatibilityResult:
    """Check whether the two certificate inequalities admit no common input.

    Incompatible iff LgV and Lgh are linearly dependent, point the same way
    (LgV.Lgh > 0), and LfV + W exceeds mu (Lfh + alpha(h)) with
    mu = LgV.Lgh / ||Lgh||^2.
    """
    data = lie_derivatives(scenario, x)
    gg = float(data.Lgh @ data.Lgh)
    if gg == 0.0:
        raise SingularConstraintError(f"L_g h vanishes at {x!r}")
    dot = float(data.LgV @ data.Lgh)
    mu = dot / gg
    norm_lgv = float(np.linalg.norm(data.LgV))
    rejection = float(np.linalg.norm(data.LgV - mu * data.Lgh))
    dependent = rejection <= dep_tol * max(norm_lgv, 1e-300)
    aligned = dot > 0.0
    lhs = data.LfV + data.W
    rhs = mu * (data.Lfh + scenario.alpha(data.h))
    return IncompatibilityResult(
        incompatible=dependent and aligned and lhs > rhs,
        dependent=dependent,
        aligned=aligned,
        mu=mu,
        lhs=lhs,
        rhs=rhs,
    )


def b_function(scenario: Scenario, x) -> float:
    """Decrease bound on the projection branch:
    B = LfV + W - (Lfh + alpha(h)) / ||Lgh||^2 LgV.Lgh."""
    data = lie_derivatives(scenario, x)
    gg = float(data.Lgh @ data.Lgh)
    if gg == 0.0:
        raise SingularConstraintError(f"L_g h vanishes at {x!r}")
    return float(
        data.LfV + data.W
        - (data.Lfh + scenario.alpha(data.h)) / gg * float(data.LgV @ data.Lgh)
    )


def c_function(scenario: Scenario, x) -> float:
    """Alignment defect C = (LgV.Lgh)^2 / ||Lgh||^2 - ||LgV||^2 (always <= 0)."""
    data = lie_derivatives(scenario, x)
    gg = float(data.Lgh @ data.Lgh)
    if gg == 0.0:
        raise SingularConstraintError(f"L_g h vanishes at {x!r}")
    value = float(data.LgV @ data.Lgh) ** 2 / gg - float(data.LgV @ data.LgV)
    if value > 1e-9:
        raise AssertionError(f"Cauchy-Schwarz violated at {x!r}: C = {value}")
    return value


def clf_decrease_margin(scenario: Scenario, x, epsilon: float) -> float:
    """z(x) = LfV + LgV.u + W under the safety-hard penalty controller."""
    data = lie_derivatives(scenario, x)
    out = penalty_control(
        scenario, PenaltyConfig(mode=PenaltyMode.SAFETY_HARD, epsilon=epsilon), x
    )
    return float(data.LfV + float(data.LgV @ out.u) + data.W)


# --- sampling helpers -------------------------------------------------------


def _grid_points(box, resolution):
    axes = [np.linspace(lo, hi, resolution) for lo, hi in box]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def _random_points(box, count, rng):
    lo = box[:, 0]
    hi = box[:, 1]
    return lo + (hi - lo) * rng.random((count, box.shape[0]))


def _bisect_boundary(scenario, xa, ha, xb, hb):
    """Bisect h over the segment [xa, xb] straddling a sign change."""
    for _ in range(200):
        xm = 0.5 * (xa + xb)
        hm = float(scenario.cbf.value(xm))
        if abs(hm) <= _BISECT_H_TOL:
            return xm
        if (ha < 0) == (hm < 0):
            xa, ha = xm, hm
        else:
            xb, hb = xm, hm
    return 0.5 * (xa + xb)


def boundary_points(scenario: Scenario, plan: SamplingPlan) -> np.ndarray:
    """Safe-set boundary samples: bisect h = 0 on sign-changing grid segments."""
    region = scenario.working_region
    n = region.shape[0]
    axes = [np.linspace(lo, hi, plan.grid_resolution) for lo, hi in region]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    hs = np.array([scenario.cbf.value(p) for p in pts])
    shape = tuple(plan.grid_resolution for _ in range(n))
    hs_grid = hs.reshape(shape)
    pts_grid = pts.reshape(shape + (n,))
    found = []
    for axis in range(n):
        sl_a = [slice(None)] * n
        sl_b = [slice(None)] * n
        sl_a[axis] = slice(None, -1)
        sl_b[axis] = slice(1, None)
        ha = hs_grid[tuple(sl_a)].ravel()
        hb = hs_grid[tuple(sl_b)].ravel()
        pa = pts_grid[tuple(sl_a)].reshape(-1, n)
        pb = pts_grid[tuple(sl_b)].reshape(-1, n)
        for i in np.nonzero((ha < 0) != (hb < 0))[0]:
            found.append(_bisect_boundary(scenario, pa[i], ha[i], pb[i], hb[i]))
    if not found:
        return np.zeros((0, n))
    out = np.array(sorted(found, key=lambda p: tuple(p)))
    if plan.boundary_samples and len(out) > plan.boundary_samples:
        idx = np.linspace(0, len(out) - 1, plan.boundary_samples).round().astype(int)
        out = out[idx]
    return out


def _newton_refine(residual_fn, x0):
    """Damped Newton on a state-space residual with FD Jacobian."""
    x = np.array(x0, dtype=float)
    n = x.shape[0]
    r = residual_fn(x)
    norm = float(np.linalg.norm(r))
    for _ in range(_NEWTON_MAX_ITER):
        if norm <= _NEWTON_ACCEPT:
            break
        jac = np.empty((n, n))
        for j in range(n):
            dx = np.zeros(n)
            dx[j] = _NEWTON_FD_STEP
            jac[:, j] = (residual_fn(x + dx) - residual_fn(x - dx)) / (
                2.0 * _NEWTON_FD_STEP
            )
        try:
            step = np.linalg.solve(jac, -r)
        except np.linalg.LinAlgError:
            break
        scale = 1.0
        improved = False
        for _ in range(20):
            x_new = x + scale * step
            r_new = residual_fn(x_new)
            norm_new = float(np.linalg.norm(r_new))
            if norm_new < norm:
                x, r, norm = x_new, r_new, norm_new
                improved = True
                break
            scale *= 0.5
        if not improved:
            break
    return x, norm


def _dedupe(points, tol=1e-6):
    kept = []
    for x, res in points:
        if all(np.linalg.norm(x - y) > tol for y, _ in kept):
            kept.append((x, res))
    return kept


def equilibrium_scan(
    scenario: Scenario,
    epsilon: float,
    plan: SamplingPlan,
    neighborhood_radius: float,
) -> EquilibriumScan:
    """Sampled equilibrium characterization for the safety-hard closed loop.

    Estimates the constants gating the two spurious-equilibrium families:
    n1 = sup ||f|| over the safe set, n2 / n4 = sup / inf of the projected
    fields over the boundary, n3 = inf ||g LgV|| off an origin neighborhood.
    Candidate equilibria are Newton-refined residual zeros filtered by the
    branch condition.
    """
    region = scenario.working_region
    rng = np.random.default_rng(plan.seed)
    pts = np.vstack(
        [
            _grid_points(region, plan.grid_resolution),
            _random_points(region, plan.random_samples, rng),
        ]
    )
    safe = []
    for x in pts:
        if float(scenario.cbf.value(x)) >= 0.0:
            safe.append(x)
    safe = np.array(safe)

    n1 = 0.0
    n3 = math.inf
    interior_seeds = []
    for x in safe:
        f = np.asarray(scenario.dynamics.drift(x), dtype=float)
        n1 = max(n1, float(np.linalg.norm(f)))
        data = lie_derivatives(scenario, x)
        g = np.asarray(scenario.dynamics.actuation(x), dtype=float)
        # the excluded neighborhood is open: samples on its sphere count
        if float(np.linalg.norm(x)) >= neighborhood_radius:
            n3 = min(n3, float(np.linalg.norm(g @ data.LgV)))
        e = -data.Lfh + (1.0 / epsilon) * float(data.Lgh @ data.LgV) - scenario.alpha(
            data.h
        )
        if e <= 0.0:
            res = f - (1.0 / epsilon) * (g @ data.LgV)
            interior_seeds.append((float(np.linalg.norm(res)), x))

    bpts = boundary_points(scenario, plan)
    n2 = None
    n4 = None
    boundary_seeds = []
    if len(bpts):
        n2 = 0.0
        n4 = math.inf
        for x in bpts:
            data = lie_derivatives(scenario, x)
            gg = float(data.Lgh @ data.Lgh)
            if gg == 0.0:
                continue
            f = np.asarray(scenario.dynamics.drift(x), dtype=float)
            g = np.asarray(scenario.dynamics.actuation(x), dtype=float)
            mu = float(data.Lgh @ data.LgV) / gg
            n2 = max(n2, float(np.linalg.norm(f - data.Lfh / gg * (g @ data.Lgh))))
            n4 = min(n4, float(np.linalg.norm(g @ (data.LgV - mu * data.Lgh))))
            e = (
                -data.Lfh
                + (1.0 / epsilon) * float(data.Lgh @ data.LgV)
                - scenario.alpha(data.h)
            )
            if e > 0.0:
                res = q2_residual(scenario, x, epsilon)
                boundary_seeds.append((float(np.linalg.norm(res)), x))

    q1_cands = []
    interior_seeds.sort(key=lambda t: (t[0], tuple(t[1])))
    for _, seed in interior_seeds[:32]:
        x_ref, res = _newton_refine(lambda y: q1_residual(scenario, y, epsilon), seed)
        if res > _NEWTON_ACCEPT:
            continue
        if float(scenario.cbf.value(x_ref)) < -BOUNDARY_TOL:
            continue
        e = switching_function(scenario, x_ref, epsilon)
        if e <= 0.0:
            q1_cands.append((x_ref, res))

    q2_cands = []
    boundary_seeds.sort(key=lambda t: (t[0], tuple(t[1])))
    for _, seed in boundary_seeds[:32]:
        try:
            x_ref, res = _newton_refine(
                lambda y: q2_residual(scenario, y, epsilon), seed
            )
        except SingularConstraintError:
            continue
        if res > _NEWTON_ACCEPT:
            continue
        if abs(float(scenario.cbf.value(x_ref))) > BOUNDARY_TOL:
            continue
        if switching_function(scenario, x_ref, epsilon) > 0.0:
            q2_cands.append((x_ref, res))

    # keep the best-residual representative of each cluster, list by position
    q1_cands = sorted(
        _dedupe(sorted(q1_cands, key=lambda t: (t[1], tuple(t[0])))),
        key=lambda t: tuple(t[0]),
    )
    q2_cands = sorted(
        _dedupe(sorted(q2_cands, key=lambda t: (t[1], tuple(t[0])))),
        key=lambda t: tuple(t[0]),
    )

    eps_q1 = math.inf if n1 == 0.0 else n3 / n1
    if n2 is None or n4 is None:
        eps_q2 = None
    elif n2 == 0.0:
        eps_q2 = math.inf
    else:
        eps_q2 = n4 / n2
    return EquilibriumScan(
        q1_candidates=q1_cands,
        q2_candidates=q2_cands,
        n1=n1,
        n2=n2,
        n3=n3,
        n4=n4,
        epsilon_q1_bound=eps_q1,
        epsilon_q2_bound=eps_q2,
        neighborhood_radius=neighborhood_radius,
        boundary_count=len(bpts),
    )


def q1_bound_curve(
    scenario: Scenario, plan: SamplingPlan, radii: Sequence[float]
) -> List[Tuple[float, float, float]]:
    """Trade-off between the origin neighborhood radius and the eps bound.

    For each radius r returns (r, n3(r), n3(r)/n1): shrinking the excluded
    neighborhood tightens where spurious interior equilibria may live but
    can force eps arbitrarily small.  One sampling pass serves all radii.
    """
    region = scenario.working_region
    rng = np.random.default_rng(plan.seed)
    pts = np.vstack(
        [
            _grid_points(region, plan.grid_resolution),
            _random_points(region, plan.random_samples, rng),
        ]
    )
    norms = []
    field_norms = []
    n1 = 0.0
    for x in pts:
        if float(scenario.cbf.value(x)) < 0.0:
            continue
        data = lie_derivatives(scenario, x)
        g = np.asarray(scenario.dynamics.actuation(x), dtype=float)
        f = np.asarray(scenario.dynamics.drift(x), dtype=float)
        n1 = max(n1, float(np.linalg.norm(f)))
        norms.append(float(np.linalg.norm(x)))
        field_norms.append(float(np.linalg.norm(g @ data.LgV)))
    norms = np.array(norms)
    field_norms = np.array(field_norms)
    curve = []
    for r in radii:
        outside = norms >= r
        n3 = float(np.min(field_norms[outside])) if np.any(outside) else math.inf
        curve.append((float(r), n3, math.inf if n1 == 0.0 else n3 / n1))
    return curve


def sample_sublevel(scenario: Scenario, nu: float, plan: SamplingPlan) -> np.ndarray:
    """Deterministic samples of {V <= nu} within the working box.

    Two-stage: a coarse region grid locates the sublevel set's bounding box,
    then a full-resolution grid plus seeded random points over that box are
    filtered by V <= nu.  The per-axis extreme points of the sublevel set
    (found by bisection along the axis rays) are always included.
    """
    region = scenario.working_region
    n = region.shape[0]
    coarse = _grid_points(region, plan.grid_resolution)
    values = np.array([scenario.clf.value(p) for p in coarse])
    inside = coarse[values <= nu]
    if len(inside) == 0:
        inside = np.zeros((1, n))
    pad = np.max(region[:, 1] - region[:, 0]) / (plan.grid_resolution - 1)
    box = np.stack(
        [
            np.maximum(inside.min(axis=0) - pad, region[:, 0]),
            np.minimum(inside.max(axis=0) + pad, region[:, 1]),
        ],
        axis=1,
    )
    rng = np.random.default_rng(plan.seed)
    pts = np.vstack(
        [
            _grid_points(box, plan.grid_resolution),
            _random_points(box, plan.random_samples, rng),
        ]
    )
    keep = np.array([float(scenario.clf.value(p)) <= nu for p in pts])
    samples = [pts[keep]]
    for axis in range(n):
        for sign in (-1.0, 1.0):
            direction = np.zeros(n)
            direction[axis] = sign
            limit = region[axis, 1] if sign > 0 else -region[axis, 0]
            lo, hi = 0.0, float(limit)
            if float(scenario.clf.value(direction * hi)) <= nu:
                samples.append((direction * hi)[None, :])
                continue
            for _ in range(80):
                mid = 0.5 * (lo + hi)
                if float(scenario.clf.value(direction * mid)) <= nu:
                    lo = mid
                else:
                    hi = mid
            samples.append((direction * lo)[None, :])
    return np.vstack(samples)


def roa_certify(
    scenario: Scenario,
    nu: float,
    plan: SamplingPlan,
    neighborhood_radius_V: float = 0.05,
    neighborhood_radius_W: float = 0.1,
    c_tol: float = C_TOL,
    limit_radii: Optional[Sequence[float]] = None,
) -> RoaCertificate:
    """Certify the sublevel set {V <= nu} and compute the usable eps range.

    Steps: (i) every sample must be compatible; (ii) no sample off the
    origin may have B and C simultaneously near zero; (iii) near-alignment
    samples on the activatable side (|C| <= c_tol, Lgh.LgV > 0) must have
    B < 0 and seed the exclusion balls W; (iv) sampled sup/inf constants
    m1..m4 yield epsilon_bar = min(m4/(m1+m2), m3/m1).  Raises
    CertificateRefusal with a witness state on any violation.

    m4 and the W construction are restricted to the activatable side: on the
    other side the hard constraint stays inactive for small eps, so
    alignment there does not gate the decrease (the sampled decrease check
    in the test suite verifies this independently).
    """
    if nu <= 0:
        raise ValueError("nu must be positive")
    if neighborhood_radius_V <= 0 or neighborhood_radius_W <= 0:
        raise ValueError("neighborhood radii must be positive")
    samples = sample_sublevel(scenario, nu, plan)
    if len(samples) == 0:
        raise CertificateRefusal("sublevel set does not intersect the working box")

    origin_tol = scenario.origin_tolerance
    m1 = 0.0
    m2 = 0.0
    bc_margin = math.inf
    p_nu = []
    rows = []
    for x in samples:
        data = lie_derivatives(scenario, x)
        gg = float(data.Lgh @ data.Lgh)
        norm_x = float(np.linalg.norm(x))
        lfv_w = data.LfV + data.W
        lgv_sq = float(data.LgV @ data.LgV)
        m1 = max(m1, abs(lfv_w))
        if gg == 0.0:
            rows.append((x, norm_x, lgv_sq, None, None, None))
            continue
        q = float(data.LgV @ data.Lgh)
        mu = q / gg
        rejection = float(np.linalg.norm(data.LgV - mu * data.Lgh))
        dependent = rejection <= DEP_TOL * max(float(np.linalg.norm(data.LgV)), 1e-300)
        rhs = mu * (data.Lfh + scenario.alpha(data.h))
        if dependent and q > 0.0 and lfv_w > rhs:
            raise CertificateRefusal(
                f"incompatible point inside the nu={nu} sublevel set", witness=x
            )
        b_val = lfv_w - rhs
        c_val = q * q / gg - lgv_sq
        m2 = max(m2, abs(rhs))
        if norm_x > origin_tol:
            bc_margin = min(bc_margin, max(abs(b_val), abs(c_val)))
            if max(abs(b_val), abs(c_val)) <= BC_TOL:
                raise CertificateRefusal(
                    "B and C vanish together off the origin"
                    f" inside the nu={nu} sublevel set",
                    witness=x,
                )
        if abs(c_val) <= c_tol and q > 0.0 and norm_x > origin_tol:
            if b_val >= 0.0:
                raise CertificateRefusal(
                    "exclusion neighborhood failed: B >= 0 at a near-alignment"
                    " sample",
                    witness=x,
                )
            p_nu.append(x)
        rows.append((x, norm_x, lgv_sq, q, b_val, c_val))

    p_nu_arr = np.array(p_nu) if p_nu else np.zeros((0, samples.shape[1]))
    m3 = math.inf
    m4 = math.inf
    for x, norm_x, lgv_sq, q, b_val, c_val in rows:
        if norm_x < neighborhood_radius_V:
            continue
        m3 = min(m3, lgv_sq)
        if c_val is None or q is None or q < 0.0:
            continue
        if len(p_nu_arr) and float(
            np.min(np.linalg.norm(p_nu_arr - x, axis=1))
        ) <= neighborhood_radius_W:
            continue
        m4 = min(m4, abs(c_val))

    degenerate = not (math.isfinite(m3) and math.isfinite(m4)) or m1 == 0.0
    if degenerate:
        epsilon_bar = math.inf
    else:
        epsilon_bar = min(m4 / (m1 + m2), m3 / m1)

    l1 = l2 = None
    epsilon_hat = None
    if limit_radii is None:
        limit_radii = tuple(0.64 / (2**k) for k in range(7))
    if limit_radii:
        limits = limit_estimates(scenario, limit_radii)
        l1, l2 = limits.l1_estimate, limits.l2_estimate
        epsilon_hat = min(epsilon_bar, 0.9 * l1, 0.9 * l2)

    return RoaCertificate(
        nu=nu,
        m1=m1,
        m2=m2,
        m3=m3,
        m4=m4,
        epsilon_bar=epsilon_bar,
        epsilon_hat=epsilon_hat,
        l1_estimate=l1,
        l2_estimate=l2,
        incompatible_free=True,
        neighborhood_radius_V=neighborhood_radius_V,
        neighborhood_radius_W=neighborhood_radius_W,
        degenerate=degenerate,
        sample_count=len(samples),
        bc_margin=bc_margin,
    )


def largest_certified_level(scenario: Scenario, plan: SamplingPlan) -> LevelEstimate:
    """Largest sublevel set of V free of incompatible samples.

    Bisects nu to relative precision 1e-3.  Also reports the level at which
    the sublevel set first reaches the safe-set boundary (min V over the
    boundary samples); the usable estimate is the smaller of the two.  The
    bisection predicate thins the sampling plan (the per-axis extreme points
    of the sublevel set are always tested, which pins detection exactly when
    the incompatible locus meets an axis).
    """
    region = scenario.working_region
    corners = _grid_points(region, 2)
    coarse = _grid_points(region, plan.grid_resolution)
    nu_max = max(
        float(np.max([scenario.clf.value(p) for p in coarse])),
        float(np.max([scenario.clf.value(p) for p in corners])),
    )
    thin = SamplingPlan(
        grid_resolution=min(plan.grid_resolution, 41),
        random_samples=min(plan.random_samples, 500),
        boundary_samples=plan.boundary_samples,
        seed=plan.seed,
    )

    def free_of_incompatibility(nu):
        for x in sample_sublevel(scenario, nu, thin):
            try:
                if incompatibility_test(scenario, x).incompatible:
                    return False
            except SingularConstraintError:
                continue
        return True

    if free_of_incompatibility(nu_max):
        nu_raw = nu_max
    else:
        lo, hi = 0.0, nu_max
        while hi - lo > 1e-3 * max(hi, 1e-12):
            mid = 0.5 * (lo + hi)
            if free_of_incompatibility(mid):
                lo = mid
            else:
                hi = mid
        nu_raw = lo

    bpts = boundary_points(scenario, plan)
    nu_boundary = None
    if len(bpts):
        nu_boundary = float(np.min([scenario.clf.value(p) for p in bpts]))
    nu_star = nu_raw if nu_boundary is None else min(nu_raw, nu_boundary)
    return LevelEstimate(
        nu_incompatibility=nu_raw, nu_boundary=nu_boundary, nu_star=nu_star
    )


def limit_estimates(
    scenario: Scenario, radii: Sequence[float], sphere_samples: int = 4096
) -> LimitEstimates:
    """Sphere-sampled origin limits backing the convergence-to-origin bound.

    For each radius, samples the sphere and records the per-sphere minimum of
    ||LgV||^2 / |LfV + W| and of |C| / B over directions with Lgh.LgV > 0 and
    B > 0.  A sphere with no valid directions contributes +inf (the
    corresponding condition is vacuous there).
    """
    radii = tuple(float(r) for r in radii)
    if any(r <= 0 for r in radii) or any(
        radii[i] <= radii[i + 1] for i in range(len(radii) - 1)
    ):
        raise ValueError("radii must be strictly decreasing and positive")
    n = scenario.state_dim
    if n == 2:
        theta = 2.0 * np.pi * (np.arange(sphere_samples) + 0.5) / sphere_samples
        directions = np.stack([np.cos(theta), np.sin(theta)], axis=1)
    else:
        rng = np.random.default_rng(0)
        directions = rng.normal(size=(sphere_samples, n))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)

    l1_vals = []
    l2_vals = []
    for r in radii:
        best1 = math.inf
        best2 = math.inf
        for d in directions:
            x = r * d
            data = lie_derivatives(scenario, x)
            denom = abs(data.LfV + data.W)
            num = float(data.LgV @ data.LgV)
            if denom > 0.0:
                best1 = min(best1, num / denom)
            gg = float(data.Lgh @ data.Lgh)
            if gg == 0.0:
                continue
            q = float(data.LgV @ data.Lgh)
            if q <= 0.0:
                continue
            b_val = (
                data.LfV
                + data.W
                - (data.Lfh + scenario.alpha(data.h)) / gg * q
            )
            if b_val <= 0.0:
                continue
            c_val = q * q / gg - num
            best2 = min(best2, abs(c_val) / b_val)
        l1_vals.append(best1)
        l2_vals.append(best2)

    def monotone_nonincreasing(vals):
        finite = [v for v in vals if math.isfinite(v)]
        return all(a >= b - 1e-12 for a, b in zip(finite, finite[1:]))

    return LimitEstimates(
        radii=radii,
        l1_by_radius=tuple(l1_vals),
        l2_by_radius=tuple(l2_vals),
        l1_estimate=l1_vals[-1],
        l2_estimate=l2_vals[-1],
        l1_monotone_nonincreasing=monotone_nonincreasing(l1_vals),
        l2_monotone_nonincreasing=monotone_nonincreasing(l2_vals),
    )
