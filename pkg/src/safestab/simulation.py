"""Closed-loop integration with event detection.

Fixed-step classical Runge-Kutta keeps runs reproducible; the feedback is
re-evaluated at every internal stage (the closed loop is treated as an
autonomous ODE) unless zero-order hold is requested.  Each trajectory
terminates on the first of: convergence to the origin ball, safety
violation, stagnation at a spurious equilibrium, or timeout.
"""

from dataclasses import dataclass
from enum import Enum
from typing import Callable, List, Optional, Sequence, Union

import numpy as np

from .controllers import ControlOutput
from .errors import SafeStabError
from .systems import Scenario


@dataclass(frozen=True)
class SimConfig:
    dt: float = 1e-3
    t_max: float = 20.0
    convergence_radius: float = 1e-3
    stagnation_speed: float = 1e-4
    stagnation_window: float = 0.5
    zero_order_hold: bool = False

    def __post_init__(self):
        if min(
            self.dt,
            self.t_max,
            self.convergence_radius,
            self.stagnation_speed,
            self.stagnation_window,
        ) <= 0:
            raise ValueError("all SimConfig parameters must be positive")
        if self.dt >= self.t_max:
            raise ValueError("dt must be smaller than t_max")


class OutcomeKind(Enum):
    CONVERGED_TO_ORIGIN = "converged-to-origin"
    STUCK_AT_EQUILIBRIUM = "stuck-at-equilibrium"
    SAFETY_VIOLATED = "safety-violated"
    TIMED_OUT = "timed-out"


@dataclass(frozen=True)
class Outcome:
    kind: OutcomeKind
    t: float
    state: np.ndarray


@dataclass(frozen=True)
class Trajectory:
    """Timestamped closed-loop record.

    Columns: time, state, applied input, barrier value h, certificate value
    V, switching value e (nan for controllers without one), and branch label.
    """

    times: np.ndarray
    states: np.ndarray
    inputs: np.ndarray
    h_values: np.ndarray
    v_values: np.ndarray
    e_values: np.ndarray
    branches: List[str]
    outcome: Outcome

    @property
    def final_state(self):
        return self.states[-1]

    @property
    def min_h(self):
        return float(np.min(self.h_values))


class SimulationAbort(SafeStabError):
    """Controller evaluation failed mid-run; carries the failing state."""

    def __init__(self, state, t, cause):
        self.state = state
        self.t = t
        self.cause = cause
        super().__init__(f"controller failed at t={t} x={state!r}: {cause}")


def _normalize(output) -> tuple:
    if isinstance(output, ControlOutput):
        return output.u, output.e_value, output.branch.value
    u = np.asarray(output, dtype=float)
    return u, float("nan"), ""


def simulate(
    scenario: Scenario,
    controller: Callable[[np.ndarray], Union[np.ndarray, ControlOutput]],
    x0,
    config: SimConfig,
) -> Trajectory:
    """Integrate xdot = f(x) + g(x) u(x) from x0 until an event triggers."""
    drift = scenario.dynamics.drift
    actuation = scenario.dynamics.actuation
    x = np.asarray(x0, dtype=float).copy()
    dt = config.dt

    times, states, inputs, hs, vs, es = [], [], [], [], [], []
    branches: List[str] = []

    def eval_controller(y, t):
        try:
            return _normalize(controller(y))
        except Exception as exc:
            raise SimulationAbort(y.copy(), t, exc) from exc

    def derivative(y, t):
        u, _, _ = eval_controller(y, t)
        return np.asarray(drift(y), dtype=float) + np.asarray(
            actuation(y), dtype=float
        ) @ u

    stagnation_start: Optional[float] = None
    step = 0
    while True:
        t = step * dt
        u, e, branch = eval_controller(x, t)
        xdot = np.asarray(drift(x), dtype=float) + np.asarray(
            actuation(x), dtype=float
        ) @ u
        h = float(scenario.cbf.value(x))
        times.append(t)
        states.append(x.copy())
        inputs.append(np.asarray(u, dtype=float).copy())
        hs.append(h)
        vs.append(float(scenario.clf.value(x)))
        es.append(e)
        branches.append(branch)

        norm_x = float(np.linalg.norm(x))
        if norm_x <= config.convergence_radius:
            outcome = Outcome(OutcomeKind.CONVERGED_TO_ORIGIN, t, x.copy())
            break
        if h < -1e-6:
            outcome = Outcome(OutcomeKind.SAFETY_VIOLATED, t, x.copy())
            break
        if float(np.linalg.norm(xdot)) <= config.stagnation_speed:
            if stagnation_start is None:
                stagnation_start = t
            elif t - stagnation_start >= config.stagnation_window:
                outcome = Outcome(OutcomeKind.STUCK_AT_EQUILIBRIUM, t, x.copy())
                break
        else:
            stagnation_start = None
        if t >= config.t_max:
            outcome = Outcome(OutcomeKind.TIMED_OUT, t, x.copy())
            break

        if config.zero_order_hold:
            held = u

            def F(y, _t=t):
                return np.asarray(drift(y), dtype=float) + np.asarray(
                    actuation(y), dtype=float
                ) @ held

        else:

            def F(y, _t=t):
                return derivative(y, _t)

        k1 = xdot
        k2 = F(x + 0.5 * dt * k1)
        k3 = F(x + 0.5 * dt * k2)
        k4 = F(x + dt * k3)
        x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        step += 1

    return Trajectory(
        times=np.array(times),
        states=np.array(states),
        inputs=np.array(inputs),
        h_values=np.array(hs),
        v_values=np.array(vs),
        e_values=np.array(es),
        branches=branches,
        outcome=outcome,
    )


def batch_simulate(
    scenario: Scenario,
    controller,
    x0_list: Sequence,
    config: SimConfig,
) -> List[Union[Trajectory, SimulationAbort]]:
    """Map simulate over initial conditions; failures are isolated in place."""
    results: List[Union[Trajectory, SimulationAbort]] = []
    for x0 in x0_list:
        try:
            results.append(simulate(scenario, controller, x0, config))
        except SimulationAbort as exc:
            results.append(exc)
    return results


def trajectory_csv_lines(traj: Trajectory) -> List[str]:
    """Serialize with 17 significant digits: t,x1..xn,u1..um,h,V,e,branch."""
    n = traj.states.shape[1]
    m = traj.inputs.shape[1]
    header = (
        "t,"
        + ",".join(f"x{i + 1}" for i in range(n))
        + ","
        + ",".join(f"u{j + 1}" for j in range(m))
        + ",h,V,e,branch"
    )
    lines = [header]
    for k in range(len(traj.times)):
        fields = [f"{traj.times[k]:.17g}"]
        fields += [f"{v:.17g}" for v in traj.states[k]]
        fields += [f"{v:.17g}" for v in traj.inputs[k]]
        fields += [
            f"{traj.h_values[k]:.17g}",
            f"{traj.v_values[k]:.17g}",
            f"{traj.e_values[k]:.17g}",
            traj.branches[k],
        ]
        lines.append(",".join(fields))
    return lines


def write_trajectory_csv(traj: Trajectory, path) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(trajectory_csv_lines(traj)))
        fh.write("\n")
