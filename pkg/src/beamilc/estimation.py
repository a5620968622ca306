"""Learning step of the ILC: parameter and equivalent-disturbance estimation.

Both problems are multiple-shooting nonlinear least squares over one
experiment's input/output record. The parameter step fits the lumped model
with the disturbance ignored; the disturbance step then freezes the
parameters and absorbs what is left of the output error into a per-sample
torque disturbance.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import ad, nlp
from .dynamics import (BeamParams, equilibrium_for_rotation, equilibrium_residual,
                       fast_rollout, rest_state, rk4_step, state_dim)
from .kinematics import forward_kinematics
from .trajectory import Trajectory

DEFAULT_PARAM_BOX = {
    "lb": np.array([1e-2, 0.0, 1e-3, 1e-2, 1.0, 1e-2, -5.0]),
    "ub": np.array([1e3, 10.0, 50.0, 5.0, 1e3, 1e2, 5.0]),
}


@dataclass(frozen=True)
class EstimationConfig:
    """Weights, parameter box and grid of the two estimation problems."""

    v1: np.ndarray               # Tikhonov diag, per parameter (applied N times)
    v2: np.ndarray               # iteration-change diag, per parameter
    w1: float = 1e-4             # disturbance magnitude weight
    w2: float = 1e-3             # disturbance iteration-change weight
    w3: float = 1e-2             # disturbance smoothness weight
    p_lb: np.ndarray = field(default_factory=lambda: DEFAULT_PARAM_BOX["lb"].copy())
    p_ub: np.ndarray = field(default_factory=lambda: DEFAULT_PARAM_BOX["ub"].copy())
    horizon: int = 240
    dt: float = 6e-3

    def __post_init__(self):
        for nm in ("v1", "v2", "p_lb", "p_ub"):
            object.__setattr__(self, nm, np.asarray(getattr(self, nm), dtype=float))
        if np.any(self.v1 < 0) or np.any(self.v2 < 0) or min(self.w1, self.w2, self.w3) < 0:
            raise ValueError("regularizer weights must be nonnegative")
        if np.any(self.p_lb >= self.p_ub):
            raise ValueError("empty parameter box")

    @staticmethod
    def default(p0, horizon=240, dt=6e-3):
        """Scale-invariant defaults anchored at the prior parameters."""
        scale = np.maximum(np.abs(p0.as_array()), 0.05)
        return EstimationConfig(v1=1e-6 / scale**2, v2=1e-2 / scale**2,
                                horizon=horizon, dt=dt)


@dataclass
class EstimationResult:
    params: BeamParams
    theta0: float
    tau_hat0: float
    tau_e0: float
    solution: nlp.NlpSolution
    fell_back: bool
    hessian_condition: float = np.nan


@dataclass
class DisturbanceResult:
    d: Trajectory
    solution: nlp.NlpSolution
    fell_back: bool


@dataclass
class LearnedModel:
    """Per-iteration bundle produced by the learning step."""

    params: BeamParams
    theta0: float
    tau_hat0: float
    tau_e0: float
    disturbance: Trajectory
    rmse_before: float
    rmse_params_only: float
    rmse_after: float
    statuses: dict = field(default_factory=dict)

    def as_dict(self):
        return {
            "params": self.params.as_dict(),
            "theta0": self.theta0,
            "tau_hat0": self.tau_hat0,
            "tau_e0": self.tau_e0,
            "rmse_before": self.rmse_before,
            "rmse_params_only": self.rmse_params_only,
            "rmse_after": self.rmse_after,
            "statuses": dict(self.statuses),
        }


def _check_grids(y, u, cfg):
    if not isinstance(y, Trajectory) or not isinstance(u, Trajectory):
        raise TypeError("y and u must be Trajectory instances")
    if abs(y.dt - u.dt) > 1e-12 or abs(y.dt - cfg.dt) > 1e-12:
        raise ValueError("y, u and the estimation config must share one grid")
    if len(y) < cfg.horizon or len(u) < cfg.horizon:
        raise ValueError("records shorter than the estimation horizon")


def _model_init_state(chain, q0, p, d0=0.0):
    th = equilibrium_for_rotation(forward_kinematics(chain, q0).rotation, p)
    tau_hat = -p.k * th + d0 + p.tau_e0
    x0 = rest_state(chain, q0, p, theta=th)
    x0[-2] = tau_hat
    x0[-1] = p.tau_e0
    return x0, th


def _output_fit_group(problem, y_data, n_x, n):
    """Rows (tau_hat_k - y_k) for k = 0..N-1 over the x block."""
    horizon = y_data.shape[0]
    rows = np.arange(horizon)
    cols = problem.block("x").offset + rows * n_x + (2 * n + 2)
    a = sp.csr_matrix((np.ones(horizon), (rows, cols)), shape=(horizon, problem.n))
    return nlp.LinearGroup(a, y_data)


def fit_rmse(chain, q0, p, u_data, y_data, dt, d=None, theta0=None, tau_hat0=None, tau_e0=None):
    """Output RMSE of the nominal model rollout against a measured record."""
    x0, _ = _model_init_state(chain, q0, p, d0=float(d[0]) if d is not None else 0.0)
    if theta0 is not None:
        n = chain.n_joints
        x0[n] = theta0
        x0[-2] = tau_hat0
        x0[-1] = tau_e0
    _, ys = fast_rollout(chain, x0, u_data, p, d, dt)
    return float(np.sqrt(np.mean((ys - y_data) ** 2)))


def estimate_parameters(chain, y, u, p_prev, q0, cfg, opts=None):
    """Fit the lumped model parameters to one experiment (disturbance ignored).

    Solves the shooting NLS over the state trajectory and the decision
    parameters, with the initial pendulum angle tied to the parameters
    through the equilibrium equality and the initial filter/bias states
    free. Falls back to ``p_prev`` when the solver fails.
    """
    _check_grids(y, u, cfg)
    n = chain.n_joints
    n_x = state_dim(n)
    horizon = cfg.horizon
    y_data = y.data[:horizon, 0]
    u_data = u.data[:horizon, :n]
    q0 = np.asarray(q0, dtype=float)
    rb0 = forward_kinematics(chain, q0).rotation
    dt = cfg.dt

    def dyn(x, _u, p, _d):
        du = u_data if not ad.is_dual(x) else ad.constant(u_data, x.nseeds)
        return rk4_step(chain, x, du, p, 0.0, dt, check=False)

    problem = nlp.transcribe_shooting(dyn, n_x, horizon, n_p=7,
                                      param_lb=cfg.p_lb, param_ub=cfg.p_ub)
    # state bounds: pendulum angle stays inside (-pi, pi)
    xblk = problem.block("x")
    theta_idx = np.arange(horizon + 1) * n_x + n
    xblk.lb[theta_idx] = -np.pi + 1e-3
    xblk.ub[theta_idx] = np.pi - 1e-3

    # initial node: q pinned at rest, rates zero; theta/tau_hat/tau_e free
    problem.pin_state(0, range(n), q0)
    problem.pin_state(0, range(n + 1, 2 * n + 2), np.zeros(n + 1))

    # data fit + regularizers exactly as summed over the horizon
    problem.residual_groups.append(_output_fit_group(problem, y_data, n_x, n))
    p_off = problem.block("p").offset
    scale1 = np.sqrt(horizon * cfg.v1)
    scale2 = np.sqrt(horizon * cfg.v2)
    eye_p = sp.csr_matrix((np.ones(7), (np.arange(7), p_off + np.arange(7))),
                          shape=(7, problem.n))
    problem.residual_groups.append(nlp.LinearGroup(sp.diags(scale1) @ eye_p, np.zeros(7)))
    problem.residual_groups.append(
        nlp.LinearGroup(sp.diags(scale2) @ eye_p, scale2 * p_prev.as_array()))

    # tie the tau_e entry of the initial state to the tau_e0 parameter
    tie = sp.csr_matrix(
        (np.array([1.0, -1.0]), (np.zeros(2, dtype=int),
                                 np.array([problem.x_index(0, 2 * n + 3), p_off + 6]))),
        shape=(1, problem.n))
    problem.eq_groups.append(nlp.LinearGroup(tie, np.zeros(1)))

    # equilibrium equality f_eq(theta_0, p) = 0
    th_idx = problem.x_index(0, n)

    def eq_eval(z):
        return np.atleast_1d(ad.value(
            equilibrium_residual(rb0, z[th_idx], z[p_off:p_off + 7])))

    def eq_jac(z):
        th_d = ad.Dual(np.asarray(z[th_idx]), np.eye(8)[0])
        p_d = ad.seed(z[p_off:p_off + 7], 8, 1)
        r = equilibrium_residual(ad.constant(rb0, 8), th_d, p_d)
        jac = sp.csr_matrix((r.dot, (np.zeros(8, dtype=int),
                                     np.concatenate([[th_idx], p_off + np.arange(7)]))),
                            shape=(1, problem.n))
        return np.atleast_1d(r.val), jac

    problem.eq_groups.append(nlp.CallableGroup(1, eq_eval, eq_jac))

    # feasible initial guess: rollout at the previous parameters
    x0_guess, _ = _model_init_state(chain, q0, p_prev)
    xs, _ = fast_rollout(chain, x0_guess, u_data, p_prev, None, dt)
    problem.set_state_guess(xs)
    problem.set_initial_guess("p", p_prev.as_array())

    sol = nlp.solve(problem, opts or nlp.SolverOptions(max_iter=80))
    cond = _param_condition(problem, sol)
    if not sol.converged and sol.status != "max-iter":
        x0f, thf = _model_init_state(chain, q0, p_prev)
        return EstimationResult(p_prev, thf, x0f[-2], x0f[-1], sol, True, cond)
    p_arr = np.clip(sol.variables["p"], cfg.p_lb, cfg.p_ub)
    params = BeamParams.from_array(p_arr)
    xsol = sol.variables["x"].reshape(horizon + 1, n_x)
    return EstimationResult(params, float(xsol[0, n]), float(xsol[0, -2]),
                            float(xsol[0, -1]), sol, False, cond)


def _param_condition(problem, sol):
    """Condition number of the parameter block of the GN normal matrix."""
    try:
        z = np.concatenate([sol.variables[b.name] for b in problem.blocks])
        _, jr = nlp._eval_groups(problem.residual_groups, z, True)
        p_off = problem.block("p").offset
        jp = jr[:, p_off:p_off + 7].toarray()
        return float(np.linalg.cond(jp.T @ jp))
    except Exception:
        return np.nan


def estimate_disturbance(chain, y, u, params, theta0, tau_hat0, tau_e0, d_prev, q0,
                         cfg, opts=None):
    """Estimate the equivalent output disturbance with the parameters fixed.

    One scalar disturbance sample per grid step; the objective trades the
    output fit against magnitude, iteration-change and smoothness penalties.
    Falls back to ``d_prev`` when the solver fails.
    """
    _check_grids(y, u, cfg)
    n = chain.n_joints
    n_x = state_dim(n)
    horizon = cfg.horizon
    y_data = y.data[:horizon, 0]
    u_data = u.data[:horizon, :n]
    d_prev_data = np.zeros(horizon) if d_prev is None else np.asarray(d_prev.data[:horizon, 0])
    dt = cfg.dt
    q0 = np.asarray(q0, dtype=float)

    def dyn(x, _u, _p, d):
        du = u_data if not ad.is_dual(x) else ad.constant(u_data, x.nseeds)
        return rk4_step(chain, x, du, params, ad.comp(d, 0), dt, check=False)

    problem = nlp.transcribe_shooting(dyn, n_x, horizon, n_d=1)
    x0 = np.concatenate([q0, [theta0], np.zeros(n + 1), [tau_hat0, tau_e0]])
    problem.pin_state(0, range(n_x), x0)

    problem.residual_groups.append(_output_fit_group(problem, y_data, n_x, n))
    d_off = problem.block("d").offset
    rows = np.arange(horizon)
    eye_d = sp.csr_matrix((np.ones(horizon), (rows, d_off + rows)),
                          shape=(horizon, problem.n))
    if cfg.w1 > 0:
        problem.residual_groups.append(
            nlp.LinearGroup(np.sqrt(cfg.w1) * eye_d, np.zeros(horizon)))
    if cfg.w2 > 0:
        problem.residual_groups.append(
            nlp.LinearGroup(np.sqrt(cfg.w2) * eye_d, np.sqrt(cfg.w2) * d_prev_data))
    if cfg.w3 > 0 and horizon > 1:
        rr = np.repeat(np.arange(horizon - 1), 2)
        cc = d_off + np.ravel(np.column_stack([rows[:-1], rows[:-1] + 1]))
        vv = np.tile([-1.0, 1.0], horizon - 1) * np.sqrt(cfg.w3)
        diff = sp.csr_matrix((vv, (rr, cc)), shape=(horizon - 1, problem.n))
        problem.residual_groups.append(nlp.LinearGroup(diff, np.zeros(horizon - 1)))

    xs, _ = fast_rollout(chain, x0, u_data, params, d_prev_data, dt)
    problem.set_state_guess(xs)
    problem.set_initial_guess("d", d_prev_data)

    sol = nlp.solve(problem, opts or nlp.SolverOptions(max_iter=60))
    if not sol.converged and sol.status != "max-iter":
        d_traj = Trajectory(dt, d_prev_data[:, None], ("d",))
        return DisturbanceResult(d_traj, sol, True)
    d_traj = Trajectory(dt, sol.variables["d"][:, None], ("d",))
    return DisturbanceResult(d_traj, sol, False)


def learn_iteration(chain, y, u, p_prev, d_prev, q0, cfg, include_disturbance=True,
                    opts=None):
    """Run both estimation problems and collect fit diagnostics."""
    n = chain.n_joints
    horizon = cfg.horizon
    y_data = y.data[:horizon, 0]
    u_data = u.data[:horizon, :n]
    d_prev_data = None if d_prev is None else d_prev.data[:horizon, 0]
    rmse_before = fit_rmse(chain, q0, p_prev, u_data, y_data, cfg.dt, d_prev_data)

    est = estimate_parameters(chain, y, u, p_prev, q0, cfg, opts=opts)
    rmse_params = fit_rmse(chain, q0, est.params, u_data, y_data, cfg.dt, None,
                           est.theta0, est.tau_hat0, est.tau_e0)
    statuses = {"parameters": est.solution.status,
                "parameters_fell_back": est.fell_back}

    if include_disturbance:
        dist = estimate_disturbance(chain, y, u, est.params, est.theta0,
                                    est.tau_hat0, est.tau_e0, d_prev, q0, cfg,
                                    opts=opts)
        statuses["disturbance"] = dist.solution.status
        statuses["disturbance_fell_back"] = dist.fell_back
        d_traj = dist.d
    else:
        d_traj = Trajectory(cfg.dt, np.zeros((horizon, 1)), ("d",))
        statuses["disturbance"] = "skipped"
        statuses["disturbance_fell_back"] = False

    rmse_after = fit_rmse(chain, q0, est.params, u_data, y_data, cfg.dt,
                          d_traj.data[:, 0], est.theta0, est.tau_hat0, est.tau_e0)
    return LearnedModel(est.params, est.theta0, est.tau_hat0, est.tau_e0, d_traj,
                        rmse_before, rmse_params, rmse_after, statuses)
