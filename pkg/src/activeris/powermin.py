"""RIS power minimization under per-pair rate requirements.

The rate constraints are rewritten as SNR constraints on the lifted matrix
A = [a; 1][a; 1]^H.  Dropping rank one gives a semidefinite relaxation; a
penalty on Tr(A) - ||A||_2 handled with the difference-of-convex algorithm
then drives A back to rank one.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .conic import (INFEASIBLE, MAX_ITERS, NUMERICAL_FAILURE, OPTIMAL, SemidefiniteProgram,
                    SolverOutcome, TraceConstraint, solve_sdp)
from .nulling import min_interference_qcqp
from .report import SolveReport
from .scenario import ChannelRealization, ScenarioConfig
from .sumrate import update_weights
from .system_model import (PowerKind, PowerModel, achievable_rates, opd_weights,
                           power_consumption, sinr_decomposition)

RATE_SLACK = 1e-4
RANK_RATIO = 1e-4
# consecutive outer iterations with unchanged zero-set power before stopping
POWER_WINDOW = 3


def gamma_from_rate(rate_req):
    r = np.asarray(rate_req, float)
    if np.any(r < 0):
        raise ValueError("rate requirement must be nonnegative")
    g = 2.0 ** r - 1
    return float(g) if g.ndim == 0 else g


@dataclass
class SdrInstance:
    R_kk: np.ndarray  # (K, Q+1, Q+1)
    R_rb: np.ndarray  # (K, Q+1, Q+1)
    E_a_bar: np.ndarray  # (Q+1, Q+1)
    gamma: np.ndarray
    alpha_max: float

    @property
    def size(self) -> int:
        return self.E_a_bar.shape[0]

    @property
    def Q(self) -> int:
        return self.size - 1

    def constraints(self) -> list:
        n = self.size
        cons = [TraceConstraint(self.R_kk[k] - g * self.R_rb[k], ">=", 0.0)
                for k, g in enumerate(self.gamma)]
        for q in range(n - 1):
            E = np.zeros((n, n), complex)
            E[q, q] = 1.0
            cons.append(TraceConstraint(E, "<=", self.alpha_max ** 2))
        E = np.zeros((n, n), complex)
        E[-1, -1] = 1.0
        cons.append(TraceConstraint(E, "==", 1.0))
        return cons

    def program(self, F) -> SemidefiniteProgram:
        return SemidefiniteProgram(np.asarray(F, complex), self.constraints())

    def sinr_of(self, A) -> np.ndarray:
        num = np.real(np.einsum("kij,ji->k", self.R_kk, A))
        den = np.real(np.einsum("kij,ji->k", self.R_rb, A))
        return num / den


def build_sdr_instance(ch: ChannelRealization, config: ScenarioConfig, beta=None, *,
                       mode: str = "active", alpha_max=None, objective: str = "sparse",
                       rate_req=None) -> SdrInstance:
    """Lifted matrices for the SNR-constrained problem.

    ``objective`` picks the diagonal of E_a: ``sparse`` uses
    (P_bias + P_DC) beta + xi E_p, ``opd`` only xi E_p and ``none`` zero.
    Passive mode drops the RIS noise.
    """
    p = config.powers_w
    sigma_r_sq = 0.0 if mode == "passive" else config.sigma_r_sq_w
    dec = sinr_decomposition(ch, p, (sigma_r_sq, config.sigma_s_sq_w))
    K, Q = ch.K, ch.Q
    n = Q + 1
    R_kk = np.zeros((K, n, n), complex)
    R_rb = np.zeros((K, n, n), complex)
    for k in range(K):
        h = ch.h_b[k, k]
        hd = ch.h_d[k, k]
        v = np.append(h, np.conj(hd))
        # a_bar^H (v v^H) a_bar = |h^H a + h_d|^2 for a_bar = [a; 1]
        R_kk[k] = p[k] * np.outer(v, v.conj())
        R_rb[k, :Q, :Q] = dec.quad(k)
        R_rb[k, :Q, Q] = dec.g[k]
        R_rb[k, Q, :Q] = dec.g[k].conj()
        R_rb[k, Q, Q] = dec.C[k]
    e = np.zeros(n)
    if objective == "sparse":
        if beta is None:
            raise ValueError("sparse objective needs beta")
        e[:Q] = (config.p_bias_w + config.p_dc_w) * np.asarray(beta) \
            + config.xi * opd_weights(ch, p, sigma_r_sq)
    elif objective == "opd":
        e[:Q] = config.xi * opd_weights(ch, p, sigma_r_sq)
    elif objective != "none":
        raise ValueError(f"unknown objective {objective!r}")
    req = config.rate_req_bps_hz if rate_req is None else np.broadcast_to(rate_req, (K,))
    alpha = config.alpha_max if alpha_max is None else alpha_max
    return SdrInstance(R_kk, R_rb, np.diag(e).astype(complex),
                       np.atleast_1d(gamma_from_rate(req)).astype(float), float(alpha))


def solve_sdr(inst: SdrInstance, tol: float = 1e-7):
    """Returns ``(outcome, A)``; A is None unless the relaxation solved."""
    out = solve_sdp(inst.program(inst.E_a_bar), tol=tol)
    return out, (out.solution if out.ok else None)


def penalty(A) -> float:
    """Tr(A) - ||A||_2, nonnegative for PSD A and zero iff rank <= 1."""
    w = np.linalg.eigvalsh(A)
    return float(np.sum(w) - w[-1])


def rank_one_ratio(A) -> float:
    s = np.linalg.svd(A, compute_uv=False)
    return float(s[1] / s[0]) if s[0] > 0 else 0.0


@dataclass
class DcaState:
    A: np.ndarray
    Z: np.ndarray | None
    penalty: float
    rho: float
    objective: float  # Tr(E A) + rho * penalty(A)


@dataclass
class DcaResult:
    A: np.ndarray
    status: str
    trace: list = field(default_factory=list)
    info: dict = field(default_factory=dict)

    @property
    def iterations(self) -> int:
        return max(len(self.trace) - 1, 0)


def _penalized(inst, A, rho):
    return float(np.real(np.trace(inst.E_a_bar @ A))) + rho * penalty(A)


def dca_rank_one(A_star, inst: SdrInstance, rho: float = 10.0, tol: float = 1e-6,
                 max_iters: int = 60, sdp_tol: float = 1e-7) -> DcaResult:
    """Penalty DCA: minimize Tr(E A) + rho (Tr A - ||A||_2) over the SDR set.

    The concave part -rho ||A||_2 is linearized at the leading eigenvector u
    of the current iterate (subgradient rho u u^H), so each step is one SDP.
    """
    A = np.asarray(A_star, complex)
    n = inst.size
    trace = [DcaState(A, None, penalty(A), rho, _penalized(inst, A, rho))]

    def done(A):
        return penalty(A) <= tol * max(1.0, float(np.real(np.trace(A))))

    if done(A):
        return DcaResult(A, OPTIMAL, trace)
    best = trace[0]
    status = MAX_ITERS
    for _ in range(max_iters):
        w, V = np.linalg.eigh(A)
        u = V[:, -1]
        Z = rho * np.outer(u, u.conj())
        F = inst.E_a_bar + rho * np.eye(n) - Z
        out = solve_sdp(inst.program(F), tol=sdp_tol)
        if not out.ok:
            status = NUMERICAL_FAILURE if out.status != INFEASIBLE else INFEASIBLE
            break
        A = out.solution
        st = DcaState(A, Z, penalty(A), rho, _penalized(inst, A, rho))
        trace.append(st)
        if st.objective < best.objective:
            best = st
        if done(A):
            status = OPTIMAL
            best = st
            break
    return DcaResult(best.A, status, trace)


def extract_reflect_vector(A) -> np.ndarray:
    """a = a_bar[:Q] / a_bar[Q] from the leading eigenpair of A."""
    A = np.asarray(A, complex)
    ratio = rank_one_ratio(A)
    if ratio > RANK_RATIO:
        raise ValueError(f"matrix is not rank one (sigma2/sigma1 = {ratio:.3g})")
    w, V = np.linalg.eigh(A)
    a_bar = math.sqrt(max(w[-1], 0.0)) * V[:, -1]
    if abs(a_bar[-1]) < 1e-6:
        raise ArithmeticError("auxiliary entry of the rank-one factor is degenerate")
    return a_bar[:-1] / a_bar[-1]


def _recover(A_star, inst, config, rng=None):
    """DCA then extraction, with one retry from a perturbed relaxation point."""
    tol = config.tolerances
    res = dca_rank_one(A_star, inst, config.rho, tol.dca_penalty_tol, tol.dca_max_iters)
    try:
        return res, extract_reflect_vector(res.A)
    except (ArithmeticError, ValueError) as exc:
        first_error = str(exc)
    rng = np.random.default_rng(0) if rng is None else rng
    n = inst.size
    X = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    A_pert = A_star + 1e-3 * np.abs(np.trace(A_star)) / n * (X @ X.conj().T) / n
    res = dca_rank_one(A_pert, inst, config.rho, tol.dca_penalty_tol, tol.dca_max_iters)
    res.info["retry"] = first_error
    try:
        return res, extract_reflect_vector(res.A)
    except (ArithmeticError, ValueError) as exc:
        res.info["error"] = str(exc)
        return res, None


def meets_rates(a, ch, config, rate_req=None, mode="active", alpha_max=None) -> bool:
    alpha = config.alpha_max if alpha_max is None else alpha_max
    if np.any(np.abs(a) > alpha * (1 + 1e-3)):
        return False
    a = _clip(a, alpha)
    noises = (0.0 if mode == "passive" else config.sigma_r_sq_w, config.sigma_s_sq_w)
    req = config.rate_req_bps_hz if rate_req is None else np.broadcast_to(rate_req, (ch.K,))
    r = achievable_rates(a, ch, config.powers_w, noises, mode)
    return bool(np.all(r >= np.asarray(req) - RATE_SLACK))


def _clip(a, alpha):
    mag = np.abs(a)
    over = mag > alpha
    a = np.array(a, complex)
    a[over] *= alpha / mag[over]
    return a


def feasible_zero_setting(a, ch, config, threshold: float = 1.0, rate_req=None) -> np.ndarray:
    """Close entries below ``threshold``, weakest first, while the rates still hold."""
    a = np.array(a, complex)
    for q in np.argsort(np.abs(a)):
        if abs(a[q]) >= threshold:
            break
        if a[q] == 0:
            continue
        trial = a.copy()
        trial[q] = 0
        if meets_rates(trial, ch, config, rate_req):
            a = trial
    return a


def refit_on_support(a, beta, ch, config, threshold: float = 1.0):
    """Zero-set ``a`` and re-solve the relaxation on the surviving elements.

    The relaxation solution sits on the rate boundary, so dropping even tiny
    entries can break a constraint; re-optimizing over the kept support
    restores it.  If the support is too small, closed entries are returned
    to it, largest first.  Falls back to :func:`feasible_zero_setting`.
    Returns ``(a_zero_set, dca_iterations)``.
    """
    a = np.asarray(a, complex)
    mag = np.abs(a)
    keep = mag >= threshold
    if not keep.any() and meets_rates(np.zeros_like(a), ch, config):
        return np.zeros_like(a), 0
    iters = 0
    reopen = [q for q in np.argsort(-mag) if not keep[q]]
    while True:
        S = np.flatnonzero(keep)
        if S.size:
            sub = ch.subset(S)
            inst = build_sdr_instance(sub, config, np.asarray(beta)[S])
            out, A_star = solve_sdr(inst)
            if A_star is not None:
                res, a_s = _recover(A_star, inst, config)
                iters += res.iterations
                if a_s is not None and meets_rates(a_s, sub, config):
                    full = np.zeros_like(a)
                    full[S] = _clip(a_s, config.alpha_max)
                    return full, iters
        if not reopen:
            break
        keep[reopen.pop(0)] = True
    return feasible_zero_setting(a, ch, config, threshold), iters


def _fit_support(S, ch, config):
    """Least-power rank-one fit with only the elements in ``S`` switched on.

    On a fixed support the static term is constant, so only the amplification
    power is minimized.  Returns ``(a, dca_iterations)`` with ``a`` None on
    failure.
    """
    a = np.zeros(ch.Q, complex)
    if S.size == 0:
        return (a if meets_rates(a, ch, config) else None), 0
    sub = ch.subset(S)
    inst = build_sdr_instance(sub, config, objective="opd")
    _, A_star = solve_sdr(inst)
    if A_star is None:
        return None, 0
    res, a_s = _recover(A_star, inst, config)
    if a_s is None or not meets_rates(a_s, sub, config):
        return None, res.iterations
    a[S] = _clip(a_s, config.alpha_max)
    return a, res.iterations


def prune_support(a, ch, config):
    """Local search over the set of switched-on elements.

    The current support is re-fitted first.  Each pass then tries closing one
    element (weakest first) and, failing that, swapping one active element
    for an inactive one; the first move that lowers the ActiveSparse power is
    kept.  Returns ``(a, dca_iterations)``.
    """
    model = PowerModel.from_config(config, PowerKind.ACTIVE_SPARSE)

    def power(x):
        return power_consumption(x, ch, config.powers_w, model, config.sigma_r_sq_w)

    a = np.asarray(a, complex)
    best = power(a)
    iters = 0
    S = np.flatnonzero(a)
    cand, n = _fit_support(S, ch, config)
    iters += n
    if cand is not None and power(cand) < best:
        a, best = cand, power(cand)
    for _ in range(2 * ch.Q):
        S = np.flatnonzero(a)
        order = S[np.argsort(np.abs(a[S]))]
        moves = [S[S != q] for q in order]
        moves += [np.sort(np.append(S[S != q], r)) for q in order
                  for r in np.flatnonzero(a == 0)]
        for T in moves:
            cand, n = _fit_support(T, ch, config)
            iters += n
            if cand is not None and power(cand) < best * (1 - 1e-9):
                a, best = cand, power(cand)
                break
        else:
            break
    return a, iters


def _stalled(powers, rel_tol, window):
    if len(powers) <= window:
        return False
    recent = powers[-(window + 1):]
    return all(abs(b - a) <= rel_tol * a for a, b in zip(recent, recent[1:]))


def powermin_sparse(ch: ChannelRealization, config: ScenarioConfig) -> SolveReport:
    """Reweighted-l1 loop around SDR + DCA, reporting ActiveSparse power."""
    tol = config.tolerances
    model = PowerModel.from_config(config, PowerKind.ACTIVE_SPARSE)
    p, s_r = config.powers_w, config.sigma_r_sq_w
    if np.all(np.asarray(config.rate_req_bps_hz) == 0):
        a = np.zeros(ch.Q, complex)
        return _report(a, "optimal", [0.0], ch, config, 0.0, 0, 0)
    a, _ = min_interference_qcqp(ch, p, config.alpha_max)
    powers = []
    best = None
    dca_iters = 0
    outer = 0
    status = MAX_ITERS
    closed_counts = []
    while outer < tol.powermin_max_outer:
        outer += 1
        beta = update_weights(a, tol.tau_reweight)
        inst = build_sdr_instance(ch, config, beta)
        out, A_star = solve_sdr(inst)
        if A_star is None:
            if outer == 1:
                return _report(np.zeros(ch.Q, complex), INFEASIBLE if out.status == INFEASIBLE
                               else out.status, [], ch, config, np.nan, 0, outer, feasible=False)
            status = out.status
            break
        res, a_new = _recover(A_star, inst, config)
        dca_iters += res.iterations
        if a_new is None or not meets_rates(a_new, ch, config):
            if best is None and outer == 1:
                status = "recovery_failed"
                break
            status = "recovery_failed"
            break
        a = _clip(a_new, config.alpha_max)
        a_zs, refit_iters = refit_on_support(a, beta, ch, config, tol.zero_set_amp_threshold)
        dca_iters += refit_iters
        closed_counts.append(int(np.sum(np.abs(a) < 1)))
        pw = power_consumption(a_zs, ch, p, model, s_r)
        powers.append(pw)
        if best is None or pw < best[1]:
            best = (a_zs, pw)
        if _stalled(powers, tol.powermin_rel_tol, POWER_WINDOW):
            status = OPTIMAL
            break
    if best is None:
        return _report(np.zeros(ch.Q, complex), status, powers, ch, config, np.nan, dca_iters,
                       outer, feasible=False)
    a_pruned, prune_iters = prune_support(best[0], ch, config)
    dca_iters += prune_iters
    best = (a_pruned, power_consumption(a_pruned, ch, p, model, s_r))
    rep = _report(best[0], status if status != "recovery_failed" else OPTIMAL, powers, ch, config,
                  best[1], dca_iters, outer)
    rep.info["closed_counts"] = closed_counts
    if status == "recovery_failed":
        rep.info["stopped"] = "recovery_failed"
    return rep


def _report(a, status, traj, ch, config, power, dca_iters, outer, feasible=True, mode="active"):
    noises = (0.0 if mode == "passive" else config.sigma_r_sq_w, config.sigma_s_sq_w)
    rates = achievable_rates(a, ch, config.powers_w, noises, mode) if feasible else None
    return SolveReport(a=np.asarray(a, complex), status=status, trajectory=list(traj), rates=rates,
                       power_w=float(power), active_res=int(np.count_nonzero(a)),
                       iterations=dca_iters, outer_iters=outer, feasible=feasible)


def powermin_baseline(ch: ChannelRealization, config: ScenarioConfig, kind: str) -> SolveReport:
    """``fully_active``: every element on, minimize the amplification power.
    ``passive_feasibility``: search for a unit-bounded a meeting the rates."""
    p = config.powers_w
    if kind == "fully_active":
        model = PowerModel.from_config(config, PowerKind.ACTIVE_ORIGINAL)
        if np.all(np.asarray(config.rate_req_bps_hz) == 0):
            a = np.zeros(ch.Q, complex)
            return _report(a, OPTIMAL, [], ch, config, ch.Q * model.per_element_w, 0, 1)
        inst = build_sdr_instance(ch, config, objective="opd")
        return _single_shot(ch, config, inst, model, "active", config.alpha_max)
    if kind == "passive_feasibility":
        model = PowerModel.from_config(config, PowerKind.PASSIVE)
        if np.all(np.asarray(config.rate_req_bps_hz) == 0):
            a = np.zeros(ch.Q, complex)
            return _report(a, OPTIMAL, [], ch, config, ch.Q * config.p_dc_w, 0, 1, mode="passive")
        inst = build_sdr_instance(ch, config, mode="passive", alpha_max=1.0, objective="none")
        return _single_shot(ch, config, inst, model, "passive", 1.0)
    raise ValueError(f"unknown baseline {kind!r}")


def _single_shot(ch, config, inst, model, mode, alpha):
    sigma_r_sq = 0.0 if mode == "passive" else config.sigma_r_sq_w
    out, A_star = solve_sdr(inst)
    if A_star is None:
        return _report(np.zeros(ch.Q, complex), out.status, [], ch, config, np.nan, 0, 1,
                       feasible=False, mode=mode)
    res, a = _recover(A_star, inst, config)
    if a is None or not meets_rates(a, ch, config, mode=mode, alpha_max=alpha):
        rep = _report(np.zeros(ch.Q, complex), "recovery_failed", [], ch, config, np.nan,
                      res.iterations, 1, feasible=False, mode=mode)
        rep.info["dca_status"] = res.status
        return rep
    a = _clip(a, alpha)
    pw = power_consumption(a, ch, config.powers_w, model, sigma_r_sq)
    rep = _report(a, OPTIMAL, [pw], ch, config, pw, res.iterations, 1, mode=mode)
    rep.active_res = ch.Q
    return rep


def check_feasible(ch: ChannelRealization, config: ScenarioConfig, scheme: str) -> bool:
    """Feasibility as used for success-fraction sweeps (first SDR + DCA only)."""
    if scheme == "passive":
        return powermin_baseline(ch, config, "passive_feasibility").feasible
    a, _ = min_interference_qcqp(ch, config.powers_w, config.alpha_max)
    inst = build_sdr_instance(ch, config, update_weights(a, config.tolerances.tau_reweight))
    out, A_star = solve_sdr(inst)
    if A_star is None:
        return False
    _, a = _recover(A_star, inst, config)
    return a is not None and meets_rates(a, ch, config)
