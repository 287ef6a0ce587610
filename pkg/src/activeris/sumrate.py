"""Sum-rate maximization with a sparsity-aware RIS power budget.

The l0 count in the budget is replaced by a reweighted l1 surrogate and the
sum of log-SINR terms is handled with the quadratic transform: for fixed
auxiliary variables ``omega`` the problem in ``a`` is concave, and for fixed
``a`` the best ``omega`` is available in closed form.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .conic import ConvexQuadraticProgram, LogTerm, QuadConstraint, OPTIMAL, solve_qcqp
from .nulling import min_interference_qcqp
from .report import SolveReport
from .scenario import ChannelRealization, ScenarioConfig
from .system_model import (PowerKind, PowerModel, SinrDecomposition, achievable_rates,
                           denominator_factors, desired_amplitudes, opd_weights,
                           power_consumption, sinr_decomposition)

LN2 = math.log(2.0)


class SolverError(RuntimeError):
    pass


def update_weights(a, tau: float) -> np.ndarray:
    if tau <= 0:
        raise ValueError("tau must be positive")
    return 1.0 / (np.abs(np.asarray(a)) ** 2 + tau)


def update_omega(a, decomp: SinrDecomposition, ch: ChannelRealization, powers) -> np.ndarray:
    p = np.asarray(powers, float)
    return np.sqrt(p) * desired_amplitudes(a, ch) / decomp.denominator(a)


def surrogate_objective(a, omega, decomp: SinrDecomposition, ch: ChannelRealization,
                        powers) -> float:
    """sum_k log2(1 + 2 sqrt(p_k) Re(w_k^* s_k(a)) - |w_k|^2 den_k(a))."""
    p = np.asarray(powers, float)
    s = desired_amplitudes(a, ch)
    arg = 1 + 2 * np.sqrt(p) * np.real(np.conj(omega) * s) - np.abs(omega) ** 2 * decomp.denominator(a)
    if np.any(arg <= 0):
        return -np.inf
    return float(np.sum(np.log2(arg)))


def zero_setting(a, threshold: float = 1.0) -> np.ndarray:
    if threshold < 0:
        raise ValueError("threshold must be nonnegative")
    a = np.array(a, dtype=complex)
    a[np.abs(a) < threshold] = 0
    return a


@dataclass
class BudgetSpec:
    """``a^H diag(weights) a <= limit``; ``weights`` None means no budget."""

    weights: np.ndarray | None
    limit: float


def fp_program(omega, ch: ChannelRealization, noises, powers, alpha_max: float,
               budget: BudgetSpec) -> ConvexQuadraticProgram:
    """Surrogate maximization at fixed ``omega`` as a conic-representable program."""
    p = np.asarray(powers, float)
    terms = []
    for k in range(ch.K):
        w = abs(omega[k])
        sp = np.sqrt(p[k])
        F, f, const = denominator_factors(ch, p, noises, k)
        d = 2 * sp * np.real(np.conj(omega[k]) * ch.h_d[k, k]) - w ** 2 * const
        c = sp * omega[k] * ch.h_b[k, k]
        terms.append(LogTerm(w * F, w * f, c, d, 1.0 / LN2))
    cons = []
    if budget.weights is not None:
        cons.append(QuadConstraint.diagonal(budget.weights, budget.limit))
    return ConvexQuadraticProgram(ch.Q, log_terms=terms, constraints=cons,
                                  modulus_bounds=np.full(ch.Q, float(alpha_max)))


def budget_weights(beta, ch: ChannelRealization, powers, config: ScenarioConfig,
                   sigma_r_sq: float | None = None) -> np.ndarray:
    """Diagonal of E_a = (P_bias + P_DC) beta + xi E_p."""
    s = config.sigma_r_sq_w if sigma_r_sq is None else sigma_r_sq
    return (config.p_bias_w + config.p_dc_w) * np.asarray(beta) + config.xi * opd_weights(ch, powers, s)


def fp_subproblem(omega, beta, ch: ChannelRealization, powers, alpha_max: float,
                  p_ris_budget: float, *, config: ScenarioConfig, tol: float = 1e-9) -> np.ndarray:
    """Maximizer of the quadratic-transform surrogate at fixed ``omega`` and ``beta``."""
    if p_ris_budget <= 0:
        return np.zeros(ch.Q, complex)
    noises = (config.sigma_r_sq_w, config.sigma_s_sq_w)
    budget = BudgetSpec(budget_weights(beta, ch, powers, config), p_ris_budget)
    return _solve_fp(omega, ch, noises, powers, alpha_max, budget, tol)


def _solve_fp(omega, ch, noises, powers, alpha_max, budget, tol):
    prob = fp_program(omega, ch, noises, powers, alpha_max, budget)
    out = solve_qcqp(prob, tol=tol)
    if out.status != OPTIMAL:
        raise SolverError(f"FP subproblem failed: {out.status}")
    return _project(out.solution, alpha_max, budget)


def _project(a, alpha_max, budget):
    """Pull an interior-point solution exactly onto the feasible set."""
    mag = np.abs(a)
    over = mag > alpha_max
    a = a.copy()
    a[over] *= alpha_max / mag[over]
    if budget.weights is not None:
        used = float(budget.weights @ np.abs(a) ** 2)
        if used > budget.limit:
            a *= np.sqrt(budget.limit / used)
    return a


class _FpRun:
    """Shared state of one FP-based optimization on a fixed realization."""

    def __init__(self, ch, config, mode="active", alpha_max=None):
        self.ch = ch
        self.config = config
        self.mode = mode
        self.powers = config.powers_w
        self.sigma_r_sq = 0.0 if mode == "passive" else config.sigma_r_sq_w
        self.noises = (self.sigma_r_sq, config.sigma_s_sq_w)
        self.alpha_max = config.alpha_max if alpha_max is None else alpha_max
        self.decomp = sinr_decomposition(ch, self.powers, self.noises)
        self.tol = config.tolerances

    def rates(self, a):
        return achievable_rates(a, self.ch, self.powers, self.noises, self.mode,
                                alpha_max=self.alpha_max * (1 + 1e-9))

    def sum_rate(self, a):
        return float(np.sum(self.rates(a)))

    def omega(self, a):
        return update_omega(a, self.decomp, self.ch, self.powers)

    def surrogate(self, a, omega):
        return surrogate_objective(a, omega, self.decomp, self.ch, self.powers)

    def step(self, a, budget):
        """One quadratic-transform step (omega update then a update)."""
        om = self.omega(a)
        return _solve_fp(om, self.ch, self.noises, self.powers, self.alpha_max, budget, 1e-9), om

    def consistent(self, a) -> bool:
        """Budget met with the weights computed from ``a`` itself."""
        beta = update_weights(a, self.tol.tau_reweight)
        used = float(self.sparse_budget(beta).weights @ np.abs(a) ** 2)
        return used <= self.config.p_ris_w * (1 + 1e-9)

    def sparse_budget(self, beta):
        return BudgetSpec(budget_weights(beta, self.ch, self.powers, self.config, self.sigma_r_sq),
                          self.config.p_ris_w)


class _Accepted:
    """Best budget-consistent iterate seen so far and its sum-rate record."""

    def __init__(self, run: _FpRun, a):
        self.run = run
        self.count = 0
        if run.consistent(a):
            self.a, self.trajectory = a, [run.sum_rate(a)]
        else:
            zero = np.zeros(run.ch.Q, complex)
            self.a, self.trajectory = zero, [run.sum_rate(zero)]

    def offer(self, a, rate):
        if rate >= self.trajectory[-1] and self.run.consistent(a):
            self.a = a
            self.trajectory.append(rate)
            self.count += 1


def _converged(traj, rel_tol, window=3):
    if len(traj) <= window:
        return False
    recent = traj[-(window + 1):]
    return all(abs(b - a) <= rel_tol * max(abs(a), 1e-12) for a, b in zip(recent, recent[1:]))


def initial_point(ch: ChannelRealization, config: ScenarioConfig, alpha_max=None):
    """Interference-minimizing start pulled inside the sparse power budget.

    Returns ``(a, beta)`` where ``beta`` are the weights of the unscaled
    interference solution; ``a`` satisfies a^H E_a(beta) a <= P_RIS.
    """
    alpha = config.alpha_max if alpha_max is None else alpha_max
    a0, _ = min_interference_qcqp(ch, config.powers_w, alpha)
    beta = update_weights(a0, config.tolerances.tau_reweight)
    e = budget_weights(beta, ch, config.powers_w, config)
    used = float(e @ np.abs(a0) ** 2)
    c = 1.0 if used <= config.p_ris_w else math.sqrt(config.p_ris_w / used)
    return c * a0, beta


def _finish(run: _FpRun, a, status, traj, iters, outer=0, info=None):
    model = PowerModel.from_config(run.config, PowerKind.ACTIVE_SPARSE)
    return SolveReport(a=a, status=status, trajectory=traj, rates=run.rates(a),
                       power_w=power_consumption(a, run.ch, run.powers, model, run.sigma_r_sq),
                       active_res=int(np.count_nonzero(a)), iterations=iters,
                       outer_iters=outer, info=info or {})


def aligned_point(ch: ChannelRealization, config: ScenarioConfig, k: int):
    """Full-amplitude start whose reflected paths add in phase with user k's
    direct link, scaled into the sparse budget like :func:`initial_point`."""
    h = ch.h_b[k, k]
    a = config.alpha_max * np.exp(1j * (np.angle(ch.h_d[k, k]) + np.angle(h)))
    beta = update_weights(a, config.tolerances.tau_reweight)
    used = float(budget_weights(beta, ch, config.powers_w, config) @ np.abs(a) ** 2)
    c = 1.0 if used <= config.p_ris_w else math.sqrt(config.p_ris_w / used)
    return c * a, beta


def _starts(ch, config):
    starts = [initial_point(ch, config)]
    if config.tolerances.fp_multistart:
        starts += [aligned_point(ch, config, k) for k in range(ch.K)]
    return starts


def _best_of(reports):
    """Highest final sum rate; the earliest start wins ties."""
    best = max(range(len(reports)), key=lambda i: (reports[i].sum_rate, -i))
    rep = reports[best]
    rep.info["start"] = best
    rep.info["start_sum_rates"] = [r.sum_rate for r in reports]
    return rep


def sumrate_one_loop(ch: ChannelRealization, config: ScenarioConfig, init=None) -> SolveReport:
    """Reweight, update omega and solve the FP subproblem once per iteration.

    The iterates follow the plain reweighted recursion.  An iterate is
    *accepted* when it meets the budget under its own weights (see
    :meth:`_FpRun.consistent`) and does not lower the sum rate of the last
    accepted one; the trajectory lists the accepted sum rates and the best
    accepted point is returned (a = 0 if none).  Without ``init`` the loop
    runs from the interference-minimizing start and, if ``fp_multistart``
    is set, from each user's phase-aligned start; the best run wins.
    """
    run = _FpRun(ch, config)
    if init is not None:
        return _one_loop(run, np.asarray(init, complex))
    return _best_of([_one_loop(run, a) for a, _ in _starts(ch, config)])


def _one_loop(run: _FpRun, a) -> SolveReport:
    tol = run.tol
    acc = _Accepted(run, a)
    iterates = [run.sum_rate(a)]
    status = "max_iters"
    it = 0
    while it < tol.fp_max_iters:
        it += 1
        beta = update_weights(a, tol.tau_reweight)
        a, _ = run.step(a, run.sparse_budget(beta))
        iterates.append(run.sum_rate(a))
        acc.offer(a, iterates[-1])
        if _converged(iterates, tol.fp_rel_tol):
            status = "optimal"
            break
    return _finish(run, acc.a, status, acc.trajectory, it,
                   info={"iterate_sum_rates": iterates, "accepted": acc.count})


def fractional_programming(run: _FpRun, a, budget: BudgetSpec, max_iters: int, rel_tol: float):
    """Plain quadratic-transform iterations at a fixed budget.

    Returns ``(a, true_sum_rates, surrogate_pairs, status)``; each surrogate
    pair holds the surrogate before and after the ``a`` update at the same
    omega.
    """
    traj = [run.sum_rate(a)]
    pairs = []
    status = "max_iters"
    for _ in range(max_iters):
        new, om = run.step(a, budget)
        pairs.append((run.surrogate(a, om), run.surrogate(new, om)))
        a = new
        traj.append(run.sum_rate(a))
        if _converged(traj, rel_tol):
            status = "optimal"
            break
    return a, traj, pairs, status


def sumrate_two_loop(ch: ChannelRealization, config: ScenarioConfig, init=None) -> SolveReport:
    """Outer reweighting loop around a full FP solve at fixed weights.

    Starting points are chosen as in :func:`sumrate_one_loop`.
    """
    run = _FpRun(ch, config)
    if init is not None:
        return _two_loop(run, np.asarray(init, complex))
    return _best_of([_two_loop(run, a) for a, _ in _starts(ch, config)])


def _two_loop(run: _FpRun, a) -> SolveReport:
    tol = run.tol
    acc = _Accepted(run, a)
    iterates = [run.sum_rate(a)]
    inner_counts = []
    inner_pairs = []
    status = "max_iters"
    outer = 0
    while outer < tol.fp_outer_max_iters:
        outer += 1
        beta = update_weights(a, tol.tau_reweight)
        a, inner, pairs, _ = fractional_programming(run, a, run.sparse_budget(beta),
                                                     tol.fp_inner_max_iters, tol.fp_rel_tol)
        inner_counts.append(len(inner) - 1)
        inner_pairs.append(pairs)
        iterates.append(run.sum_rate(a))
        acc.offer(a, iterates[-1])
        if _converged(iterates, tol.fp_rel_tol, window=1):
            status = "optimal"
            break
    return _finish(run, acc.a, status, acc.trajectory, sum(inner_counts), outer,
                   info={"inner_iters": inner_counts, "inner_surrogates": inner_pairs,
                         "iterate_sum_rates": iterates, "accepted": acc.count})


def fixed_active_count(config: ScenarioConfig) -> int:
    pe = config.p_bias_w + config.p_dc_w
    return min(int(math.floor(config.p_ris_w / pe * (1 + 1e-12))), config.Q)


def passive_count(config: ScenarioConfig) -> int:
    return int(math.floor(config.p_ris_w / config.p_dc_w * (1 + 1e-12)))


def sumrate_baseline(ch: ChannelRealization, config: ScenarioConfig, kind: str) -> SolveReport:
    """Conventional designs.

    ``fixed_active``: the first Q_F elements are always on and charged the
    full static power; the rest are off.  ``passive_upper``: every element of
    ``ch`` (pass the Q_P-element surface, see ``scenario.sample_surface``) is
    used with |a_q| <= 1, no RIS noise and no budget.
    """
    tol = config.tolerances
    if kind == "fixed_active":
        q_f = fixed_active_count(config)
        pe = config.p_bias_w + config.p_dc_w
        if q_f * pe > config.p_ris_w or q_f == 0:
            a = np.zeros(ch.Q, complex)
            run = _FpRun(ch, config)
            rep = _finish(run, a, "infeasible", [run.sum_rate(a)], 0)
            rep.feasible = False
            return rep
        sub = ch.subset(np.arange(q_f))
        run = _FpRun(sub, config)
        e = config.xi * opd_weights(sub, run.powers, run.sigma_r_sq)
        budget = BudgetSpec(e, config.p_ris_w - q_f * pe)
        a0, _ = min_interference_qcqp(sub, run.powers, run.alpha_max)
        used = float(e @ np.abs(a0) ** 2)
        if used > budget.limit:
            a0 = a0 * math.sqrt(budget.limit / used)
        a_sub, traj, _, status = fractional_programming(run, a0, budget, tol.fp_max_iters,
                                                        tol.fp_rel_tol)
        a = np.zeros(ch.Q, complex)
        a[:q_f] = a_sub
        full = _FpRun(ch, config)
        return SolveReport(a=a, status=status, trajectory=traj, rates=full.rates(a),
                           power_w=q_f * pe + float(e @ np.abs(a_sub) ** 2), active_res=q_f,
                           iterations=len(traj) - 1, info={"q_f": q_f})
    if kind == "passive_upper":
        run = _FpRun(ch, config, mode="passive", alpha_max=1.0)
        a0, _ = min_interference_qcqp(ch, run.powers, 1.0)
        a, traj, _, status = fractional_programming(run, a0, BudgetSpec(None, np.inf),
                                                    tol.fp_max_iters, tol.fp_rel_tol)
        return SolveReport(a=a, status=status, trajectory=traj, rates=run.rates(a),
                           power_w=ch.Q * config.p_dc_w, active_res=ch.Q,
                           iterations=len(traj) - 1, info={"q_p": ch.Q})
    raise ValueError(f"unknown baseline {kind!r}")
