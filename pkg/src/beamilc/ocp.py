"""Point-to-point vibration-suppression optimal control.

A multiple-shooting transcription over the prediction horizon: controls
act on the first part (pinned to zero at the first node and everywhere
past the control horizon), the end-effector must reach the goal pose at
rest at the end of the control horizon, and the remaining prediction
window carries exponentially weighted l1 penalties pushing the pendulum
angle, its rate and the predicted reaction torque onto their equilibrium
values as early as possible.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import ad, nlp
from .dynamics import (equilibrium_for_rotation, fast_rollout, rk4_step,
                       state_dim)
from .kinematics import forward_kinematics, frame_state, orientation_error
from .trajectory import Trajectory


@dataclass(frozen=True)
class TaskDefinition:
    """Rest-to-rest task: start configuration, goal pose, horizons."""

    q0: np.ndarray
    goal_position: np.ndarray
    goal_rotation: np.ndarray
    n_ctrl: int = 48
    n_pred: int = 144
    dt: float = 1e-2

    def __post_init__(self):
        object.__setattr__(self, "q0", np.asarray(self.q0, dtype=float))
        object.__setattr__(self, "goal_position", np.asarray(self.goal_position, dtype=float))
        object.__setattr__(self, "goal_rotation", np.asarray(self.goal_rotation, dtype=float))
        if not (0 < self.n_ctrl < self.n_pred):
            raise ValueError("need 0 < n_ctrl < n_pred")
        if self.dt <= 0:
            raise ValueError("dt must be positive")

    @staticmethod
    def from_goal_joints(chain, q0, q_goal, n_ctrl=48, n_pred=144, dt=1e-2):
        pose = forward_kinematics(chain, np.asarray(q_goal, dtype=float))
        return TaskDefinition(q0, pose.position, pose.rotation, n_ctrl, n_pred, dt)

    @staticmethod
    def from_displacement(chain, q0, displacement, n_ctrl=48, n_pred=144, dt=1e-2):
        pose = forward_kinematics(chain, np.asarray(q0, dtype=float))
        return TaskDefinition(q0, pose.position + np.asarray(displacement, dtype=float),
                              pose.rotation, n_ctrl, n_pred, dt)


@dataclass(frozen=True)
class OcpWeights:
    """Objective weights: control-horizon quadratics and prediction-horizon l1."""

    q_state: np.ndarray | None = None   # diag over the state; default: 1 on q entries
    r1: float = 1e-2                    # input magnitude
    r2: float = 1e-1                    # input rate (jerk proxy)
    r0: float = 0.0                     # optional prior-input deviation weight
    rho1: float = 10.0                  # pendulum angle deviation, l1
    rho2: float = 1.0                   # pendulum rate, l1
    rho3: float = 10.0                  # reaction torque deviation, l1
    gamma: float = 1.05                 # exponential weight, > 1

    def __post_init__(self):
        if self.gamma <= 1.0:
            raise ValueError("gamma must be above 1")
        for nm in ("r1", "r2", "r0", "rho1", "rho2", "rho3"):
            if getattr(self, nm) < 0:
                raise ValueError(f"{nm} must be nonnegative")

    def state_diag(self, n_dof):
        n_x = state_dim(n_dof)
        if self.q_state is None:
            w = np.zeros(n_x)
            w[:n_dof] = 1.0
            return w
        w = np.asarray(self.q_state, dtype=float)
        if w.shape != (n_x,):
            raise ValueError("q_state must have the state dimension")
        return w


@dataclass
class PlannedMotion:
    """Feedforward plan plus its model prediction."""

    u: Trajectory                 # n_pred rows; zero from node n_ctrl-1 on
    states: np.ndarray            # (n_pred+1, n_x) predicted trace
    tau: np.ndarray               # (n_pred,) predicted reaction torque
    tau_hat: np.ndarray           # (n_pred,) predicted filtered output
    theta_goal: float
    tau_goal: float
    objective: float
    solution: nlp.NlpSolution
    fell_back: bool = False

    def limit_violations(self, chain, task):
        """Worst violation of each limit class along the plan (<= 0 is ok)."""
        n = chain.n_joints
        q = self.states[:, :n]
        dq = self.states[:, n + 1:2 * n + 1]
        u = self.u.data
        du = np.diff(u, axis=0, prepend=np.zeros((1, n)))
        return {
            "q": float(np.max(np.maximum(q - chain.q_max, chain.q_min - q))),
            "dq": float(np.max(np.abs(dq) - chain.dq_max)),
            "u": float(np.max(np.abs(u) - chain.ddq_max)),
            "jerk": float(np.max(np.abs(du) / task.dt - chain.jerk_max)),
        }


def resample_disturbance(d, dt_new, n_new):
    """Linear interpolation of a disturbance record onto a new uniform grid.

    Past the source horizon the value is held at the tail mean (the mean of
    the trailing tenth of the samples, at least one).
    """
    if not isinstance(d, Trajectory) or len(d) < 1:
        raise ValueError("d must be a non-empty Trajectory")
    src = d.data[:, 0]
    n_tail = max(1, len(src) // 10)
    tail = float(np.mean(src[-n_tail:]))
    t_new = np.arange(n_new) * dt_new
    t_src = d.times
    out = np.interp(t_new, t_src, src, left=src[0], right=tail)
    return Trajectory(dt_new, out[:, None], ("d",))


def _terminal_pose_group(problem, chain, node, goal_pos, goal_rot, n, n_x):
    """Six equality rows: end-effector position and orientation at ``node``."""
    q_cols = problem.block("x").offset + node * n_x + np.arange(n)

    def build(q, m=None):
        if m is None:
            res = frame_state(chain, q, None, None)
            e_o = orientation_error(res["R"], goal_rot)
            return np.concatenate([res["p"] - goal_pos, e_o])
        qd = ad.seed(q, m, 0)
        res = frame_state(chain, qd, None, None)
        e_p = res["p"] - ad.constant(goal_pos, m)
        e_o = orientation_error(res["R"], ad.constant(goal_rot, m))
        return ad.concat_last([e_p, e_o])

    def eval_(z):
        return build(z[q_cols])

    def eval_jac(z):
        r = build(z[q_cols], m=n)
        rows = np.repeat(np.arange(6), n)
        cols = np.tile(q_cols, 6)
        jac = sp.csr_matrix((r.dot.ravel(), (rows, cols)), shape=(6, problem.n))
        return r.val, jac

    return nlp.CallableGroup(6, eval_, eval_jac)


def solve_ptp_ocp(chain, task, params, d=None, u_prev=None, weights=None, opts=None):
    """Plan the feedforward joint accelerations for one task execution.

    ``d`` is the learned disturbance already resampled to the OCP grid
    (Trajectory or array of n_pred samples; None for zero). ``u_prev`` warm
    starts the solve and serves as the fallback on solver failure.
    """
    weights = weights or OcpWeights()
    n = chain.n_joints
    n_x = state_dim(n)
    n_c, n_p, dt = task.n_ctrl, task.n_pred, task.dt

    if d is None:
        d_arr = np.zeros(n_p)
    elif isinstance(d, Trajectory):
        if abs(d.dt - dt) > 1e-12:
            raise ValueError("disturbance must be resampled to the OCP grid")
        d_arr = d.data[:n_p, 0].copy()
        if d_arr.shape[0] < n_p:
            raise ValueError("disturbance shorter than the prediction horizon")
    else:
        d_arr = np.asarray(d, dtype=float).copy()
        if d_arr.shape != (n_p,):
            raise ValueError("disturbance must have n_pred samples")

    theta_0 = equilibrium_for_rotation(forward_kinematics(chain, task.q0).rotation, params)
    theta_f = equilibrium_for_rotation(task.goal_rotation, params)
    tau_f = -params.k * theta_f + float(np.mean(d_arr[n_c:]))

    # controls exist on nodes 0..n_ctrl-2; the first is pinned to zero and
    # the nodes from n_ctrl-1 on have no variable (input identically zero)
    control_map = np.concatenate([np.arange(n_c - 1), np.full(n_p - n_c + 1, -1)])

    def dyn(x, u, _p, _d):
        dd = d_arr if not ad.is_dual(x) else ad.constant(d_arr, x.nseeds)
        return rk4_step(chain, x, u, params, dd, dt, check=False)

    state_lb = np.full(n_x, -np.inf)
    state_ub = np.full(n_x, np.inf)
    state_lb[:n] = chain.q_min
    state_ub[:n] = chain.q_max
    state_lb[n] = -np.pi / 2
    state_ub[n] = np.pi / 2
    state_lb[n + 1:2 * n + 1] = -chain.dq_max
    state_ub[n + 1:2 * n + 1] = chain.dq_max

    problem = nlp.transcribe_shooting(
        dyn, n_x, n_p, n_u=n, control_map=control_map,
        state_lb=state_lb, state_ub=state_ub,
        control_lb=-chain.ddq_max, control_ub=chain.ddq_max)

    x0 = np.concatenate([task.q0, [theta_0], np.zeros(n + 1),
                         [-params.k * theta_0 + d_arr[0], 0.0]])
    problem.pin_state(0, range(n_x), x0)
    ublk = problem.block("u")
    ublk.lb[:n] = 0.0
    ublk.ub[:n] = 0.0

    # terminal rest: pose at the goal, joint velocities zero at node n_ctrl
    problem.eq_groups.append(_terminal_pose_group(problem, chain, n_c,
                                                  task.goal_position,
                                                  task.goal_rotation, n, n_x))
    dq_cols = problem.block("x").offset + n_c * n_x + n + 1 + np.arange(n)
    a_dq = sp.csr_matrix((np.ones(n), (np.arange(n), dq_cols)), shape=(n, problem.n))
    problem.eq_groups.append(nlp.LinearGroup(a_dq, np.zeros(n)))

    # control-horizon quadratics
    q_diag = weights.state_diag(n)
    act = np.flatnonzero(q_diag > 0)
    if act.size:
        rows = []
        cols = []
        vals = []
        rhs = []
        for k in range(n_c + 1):
            base = len(rhs)
            rows.extend(base + np.arange(act.size))
            cols.extend(problem.block("x").offset + k * n_x + act)
            vals.extend(np.sqrt(q_diag[act]))
            rhs.extend(np.sqrt(q_diag[act]) * x0[act])
        a_q = sp.csr_matrix((vals, (rows, cols)), shape=(len(rhs), problem.n))
        problem.residual_groups.append(nlp.LinearGroup(a_q, np.asarray(rhs)))

    u_off = problem.block("u").offset
    n_un = problem.n_control_nodes
    eye_u = sp.csr_matrix((np.ones(n_un * n), (np.arange(n_un * n),
                                               u_off + np.arange(n_un * n))),
                          shape=(n_un * n, problem.n))
    if weights.r1 > 0:
        problem.residual_groups.append(
            nlp.LinearGroup(np.sqrt(weights.r1) * eye_u, np.zeros(n_un * n)))
    if weights.r0 > 0 and u_prev is not None:
        u_prev_var = np.asarray(u_prev, dtype=float)[:n_un].ravel()
        problem.residual_groups.append(
            nlp.LinearGroup(np.sqrt(weights.r0) * eye_u, np.sqrt(weights.r0) * u_prev_var))
    if weights.r2 > 0:
        # input-rate rows, including the step onto the zero tail
        rr, cc, vv = [], [], []
        row = 0
        for k in range(n_c - 1):
            for j in range(n):
                if k + 1 < n_un:
                    rr += [row, row]
                    cc += [u_off + (k + 1) * n + j, u_off + k * n + j]
                    vv += [np.sqrt(weights.r2), -np.sqrt(weights.r2)]
                else:
                    rr.append(row)
                    cc.append(u_off + k * n + j)
                    vv.append(-np.sqrt(weights.r2))
                row += 1
        a_r2 = sp.csr_matrix((vv, (rr, cc)), shape=(row, problem.n))
        problem.residual_groups.append(nlp.LinearGroup(a_r2, np.zeros(row)))

    # jerk limits on input rate, again including the step onto the zero tail
    rr, cc, vv, hh = [], [], [], []
    row = 0
    for k in range(n_c - 1):
        for j in range(n):
            lim = chain.jerk_max[j] * dt
            for sign in (1.0, -1.0):
                if k + 1 < n_un:
                    rr += [row, row]
                    cc += [u_off + (k + 1) * n + j, u_off + k * n + j]
                    vv += [sign, -sign]
                else:
                    rr.append(row)
                    cc.append(u_off + k * n + j)
                    vv.append(-sign)
                hh.append(lim)
                row += 1
    g_jerk = sp.csr_matrix((vv, (rr, cc)), shape=(row, problem.n))
    problem.ineq_groups.append(nlp.LinearGroup(g_jerk, np.asarray(hh)))

    # prediction-horizon l1 terms with exponentially increasing weights
    ks = np.arange(n_c, n_p)
    gam = weights.gamma ** ks
    x_off = problem.block("x").offset
    th_cols = x_off + ks * n_x + n
    dth_cols = x_off + ks * n_x + 2 * n + 1
    n_t = ks.size
    a1 = sp.csr_matrix((np.ones(n_t), (np.arange(n_t), th_cols)), shape=(n_t, problem.n))
    a2 = sp.csr_matrix((np.ones(n_t), (np.arange(n_t), dth_cols)), shape=(n_t, problem.n))
    rows3 = np.repeat(np.arange(n_t), 2)
    cols3 = np.ravel(np.column_stack([th_cols, dth_cols]))
    vals3 = np.tile([-params.k, -params.c], n_t)
    a3 = sp.csr_matrix((vals3, (rows3, cols3)), shape=(n_t, problem.n))
    if weights.rho1 > 0:
        problem.l1_terms.append(nlp.L1Term(a1, np.full(n_t, theta_f), weights.rho1 * gam))
    if weights.rho2 > 0:
        problem.l1_terms.append(nlp.L1Term(a2, np.zeros(n_t), weights.rho2 * gam))
    if weights.rho3 > 0:
        problem.l1_terms.append(nlp.L1Term(a3, tau_f - d_arr[ks], weights.rho3 * gam))

    # warm start: previous plan, else zero controls; states from a rollout
    if u_prev is not None:
        u_guess = np.asarray(u_prev, dtype=float)[:n_p]
    else:
        u_guess = np.zeros((n_p, n))
    u_guess = np.vstack([u_guess, np.zeros((n_p - u_guess.shape[0], n))]) \
        if u_guess.shape[0] < n_p else u_guess.copy()
    u_guess[0] = 0.0
    u_guess[n_c - 1:] = 0.0
    xs_guess, _ = fast_rollout(chain, x0, u_guess, params, d_arr, dt)
    problem.set_state_guess(xs_guess)
    problem.set_initial_guess("u", u_guess[:n_un].ravel())

    sol = nlp.solve(problem, opts or nlp.SolverOptions(max_iter=150))

    # a feasible plan is executable even when optimality stalled; only an
    # infeasible iterate forces the fallback to the previous input
    fell_back = sol.constraint_violation > 1e-6
    if fell_back:
        u_full = u_guess
        xs, _ = fast_rollout(chain, x0, u_full, params, d_arr, dt)
    else:
        u_full = np.zeros((n_p, n))
        u_var = sol.variables["u"].reshape(n_un, n)
        u_full[:n_un] = u_var
        xs = sol.variables["x"].reshape(n_p + 1, n_x)

    theta_tr = xs[:n_p, n]
    dtheta_tr = xs[:n_p, 2 * n + 1]
    tau = -params.k * theta_tr - params.c * dtheta_tr + d_arr
    u_traj = Trajectory(dt, u_full, tuple(f"u{i+1}" for i in range(n)))
    return PlannedMotion(u_traj, xs, tau, xs[:n_p, -2].copy(), theta_f, tau_f,
                         sol.objective, sol, fell_back)
