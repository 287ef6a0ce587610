"""Interference nulling with the RIS.

The cross links are cancelled when ``H_b^H a = -h_d`` (stacked over all
ordered pairs k != j).  With enough elements the minimum-norm solution is
available in closed form; under an amplitude cap the interference power is
minimized instead.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .conic import ConvexQuadraticProgram, solve_qcqp, OPTIMAL
from .scenario import ChannelRealization, sample_iid_setup, trial_rng


class NullingPreconditionError(ValueError):
    pass


def stacked_powers(powers, K: int) -> np.ndarray:
    """Diagonal of P_I = diag(p) kron I_{K-1}; entry (k, j) carries p_j."""
    return np.repeat(np.asarray(powers, float), K - 1)


def nulling_closed_form(ch: ChannelRealization, rank_tol: float = 1e-10) -> np.ndarray:
    """Minimum-norm a with H_b^H a = -h_d."""
    H = ch.H_b_stack
    Q, n = H.shape
    if Q < n:
        raise NullingPreconditionError(
            f"the number of REs should be greater than the number of interference channels "
            f"(Q={Q} < K(K-1)={n})")
    # least-norm solve of H^H a = -h via QR of H
    Qm, R = scipy.linalg.qr(H, mode="economic")
    d = np.abs(np.diag(R))
    if d.size and d.min() <= rank_tol * d.max():
        raise NullingPreconditionError("stacked cascaded channel matrix is not full column rank")
    sv = np.linalg.svd(H, compute_uv=False)
    if sv[-1] <= rank_tol * sv[0]:
        raise NullingPreconditionError("stacked cascaded channel matrix is not full column rank")
    # H^H a = R^H Qm^H a = -h  ->  a = Qm y with R^H y = -h
    y = scipy.linalg.solve_triangular(R.conj().T, -ch.h_d_stack, lower=True)
    return Qm @ y


def residual_power(a, ch: ChannelRealization, powers) -> float:
    w = stacked_powers(powers, ch.K)
    r = ch.H_b_stack.conj().T @ np.asarray(a, complex) + ch.h_d_stack
    return float(np.sum(w * np.abs(r) ** 2))


def interference_program(ch: ChannelRealization, powers, alpha_max: float,
                         scale: float = 1.0) -> ConvexQuadraticProgram:
    """max -||P^1/2 (H^H a + h)||^2 / scale  s.t. |a_q| <= alpha_max."""
    w = np.sqrt(stacked_powers(powers, ch.K) / scale)
    F0 = w[:, None] * ch.H_b_stack.conj().T
    f0 = w * ch.h_d_stack
    return ConvexQuadraticProgram(ch.Q, quad=(F0, f0),
                                  modulus_bounds=np.full(ch.Q, float(alpha_max)))


def min_interference_qcqp(ch: ChannelRealization, powers, alpha_max: float,
                          tol: float = 1e-10, rank_tol: float = 1e-10):
    """Amplitude-constrained interference-power minimizer.

    Returns ``(a, residual_power)``.  Raises ``RuntimeError`` if the solver
    fails.
    """
    if alpha_max < 0:
        raise ValueError("alpha_max must be nonnegative")
    Q = ch.Q
    base = residual_power(np.zeros(Q), ch, powers)
    if alpha_max == 0 or base == 0:
        return np.zeros(Q, complex), base
    # exact nulling is optimal whenever the least-norm solution fits the cap
    try:
        a_cf = nulling_closed_form(ch, rank_tol)
        if np.max(np.abs(a_cf)) <= alpha_max:
            return a_cf, residual_power(a_cf, ch, powers)
    except NullingPreconditionError:
        pass
    prob = interference_program(ch, powers, alpha_max, scale=base)
    out = solve_qcqp(prob, tol=tol)
    if out.status != OPTIMAL:
        raise RuntimeError(f"interference minimization failed: {out.status}")
    # interior-point output may sit a hair outside the cap
    a = _clip_modulus(out.solution, alpha_max)
    return a, residual_power(a, ch, powers)


def _clip_modulus(a, bound):
    mag = np.abs(a)
    over = mag > bound
    a = a.copy()
    a[over] *= bound / mag[over]
    return a


@dataclass
class NullingTrial:
    q: int
    alpha_max_sq_db: float
    trial: int
    residual_power: float
    success: bool


def nulling_trials(q_list, alpha_max_sq_db_list, trials: int, seed: int = 0, K: int = 4,
                   gain_ratio_db: float = 20.0, snr_db: float = 10.0,
                   threshold: float = 1e-3, trial_indices=None):
    """Per-trial rows of the nulling success experiment.

    Each trial draws one surface with ``max(q_list)`` elements; smaller
    surfaces use its leading elements, so results are paired across Q.
    Noise power is 1 and every transmitter uses ``snr_db``.
    """
    q_list = sorted(int(q) for q in q_list)
    sigma_s_sq = 1.0
    powers = np.full(K, 10 ** (snr_db / 10) * sigma_s_sq)
    rows = []
    idx = range(trials) if trial_indices is None else trial_indices
    for t in idx:
        full = sample_iid_setup(q_list[-1], K, gain_ratio_db, trial_rng(seed, t))
        for q in q_list:
            ch = full.subset(np.arange(q))
            for adb in alpha_max_sq_db_list:
                alpha = 10 ** (adb / 20)
                _, res = min_interference_qcqp(ch, powers, alpha)
                rows.append(NullingTrial(q, float(adb), t, res, res <= threshold * sigma_s_sq))
    return rows


def nulling_success_probability(q_list, alpha_max_sq_db_list, trials: int, rng=None,
                                seed: int | None = None, **kwargs):
    """Fraction of trials reaching ||P^1/2(H^H a* + h)||^2 <= 0.001 sigma_s^2.

    Returns ``{(q, alpha_max_sq_db): probability}``.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if seed is None:
        seed = int(np.random.default_rng(rng).integers(2**63))
    rows = nulling_trials(q_list, alpha_max_sq_db_list, trials, seed, **kwargs)
    table = {}
    for r in rows:
        table.setdefault((r.q, r.alpha_max_sq_db), []).append(r.success)
    return {key: float(np.mean(v)) for key, v in sorted(table.items())}
