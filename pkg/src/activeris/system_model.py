"""SINR, achievable rates and RIS power consumption."""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .scenario import ChannelRealization, ScenarioConfig

AMP_SLACK = 1e-9


class PowerKind(enum.Enum):
    ACTIVE_SPARSE = "active_sparse"
    ACTIVE_ORIGINAL = "active_original"
    PASSIVE = "passive"


@dataclass(frozen=True)
class PowerModel:
    kind: PowerKind
    p_bias_w: float
    p_dc_w: float
    xi: float = 1.25

    def __post_init__(self):
        if self.p_bias_w < 0 or self.p_dc_w < 0:
            raise ValueError("static powers must be nonnegative")
        if self.xi <= 0:
            raise ValueError("xi must be positive")

    @classmethod
    def from_config(cls, config: ScenarioConfig, kind: PowerKind) -> "PowerModel":
        return cls(kind, config.p_bias_w, config.p_dc_w, config.xi)

    @property
    def per_element_w(self) -> float:
        return self.p_bias_w + self.p_dc_w


@dataclass
class SinrDecomposition:
    """Per-user pieces of the SINR denominator.

    ``denominator_k(a) = a^H (diag(R_r[k]) + R_b[k]) a + 2 Re(g[k]^H a) + C[k]``;
    ``R_r`` holds only the diagonal (K x Q), already scaled by the RIS noise.
    """

    R_r: np.ndarray
    R_b: np.ndarray
    g: np.ndarray
    C: np.ndarray

    def quad(self, k: int) -> np.ndarray:
        return np.diag(self.R_r[k]) + self.R_b[k]

    def denominator(self, a) -> np.ndarray:
        a = np.asarray(a, dtype=complex)
        Rb_a = np.einsum("kqp,p->kq", self.R_b, a)
        quad = np.real(np.einsum("q,kq->k", a.conj(), Rb_a)) + self.R_r @ np.abs(a) ** 2
        return quad + 2 * np.real(self.g.conj() @ a) + self.C


def sinr_decomposition(ch: ChannelRealization, powers, noises) -> SinrDecomposition:
    """``noises`` is ``(sigma_r_sq, sigma_s_sq)`` in watts."""
    sigma_r_sq, sigma_s_sq = noises
    p = np.asarray(powers, dtype=float)
    K, Q = ch.K, ch.Q
    R_r = sigma_r_sq * np.abs(ch.H_r.T) ** 2
    R_b = np.zeros((K, Q, Q), dtype=complex)
    g = np.zeros((K, Q), dtype=complex)
    C = np.full(K, float(sigma_s_sq))
    for k in range(K):
        for j in range(K):
            if j == k:
                continue
            h = ch.h_b[k, j]
            R_b[k] += p[j] * np.outer(h, h.conj())
            g[k] += p[j] * ch.h_d[k, j] * h
            C[k] += p[j] * abs(ch.h_d[k, j]) ** 2
    return SinrDecomposition(R_r, R_b, g, C)


def denominator_factors(ch: ChannelRealization, powers, noises, k: int):
    """``(F, f, const)`` with denominator_k(a) = ||F a + f||^2 + const.

    Rows of F are the scaled cross links and the RIS-noise amplitudes; this
    form avoids the cancellation in the expanded quadratic when the
    interference is nearly nulled.
    """
    sigma_r_sq, sigma_s_sq = noises
    p = np.asarray(powers, dtype=float)
    others = [j for j in range(ch.K) if j != k]
    sp = np.sqrt(p[others])
    F = np.vstack([sp[:, None] * ch.h_b[k, others].conj(),
                   np.diag(np.sqrt(sigma_r_sq) * np.abs(ch.H_r[:, k]))])
    f = np.concatenate([sp * ch.h_d[k, others], np.zeros(ch.Q)])
    return F, f, float(sigma_s_sq)


def desired_amplitudes(a, ch: ChannelRealization) -> np.ndarray:
    """Effective desired links h_d,kk + h_b,kk^H a for every k."""
    a = np.asarray(a, dtype=complex)
    idx = np.arange(ch.K)
    return ch.h_d[idx, idx] + np.einsum("kq,q->k", ch.h_b[idx, idx].conj(), a)


def interference_power(a, ch: ChannelRealization, powers) -> np.ndarray:
    """Per-receiver interference sum_{j != k} p_j |h_d,kj + h_b,kj^H a|^2."""
    a = np.asarray(a, dtype=complex)
    p = np.asarray(powers, dtype=float)
    eff = ch.h_d + np.einsum("kjq,q->kj", ch.h_b.conj(), a)
    P = np.abs(eff) ** 2 * p[None, :]
    np.fill_diagonal(P, 0.0)
    return P.sum(axis=1)


def sinr(a, ch: ChannelRealization, powers, noises, mode: str = "active") -> np.ndarray:
    sigma_r_sq, sigma_s_sq = noises
    if mode == "passive":
        sigma_r_sq = 0.0
    a = np.asarray(a, dtype=complex)
    p = np.asarray(powers, dtype=float)
    sig = p * np.abs(desired_amplitudes(a, ch)) ** 2
    noise_r = sigma_r_sq * (np.abs(ch.H_r.T) ** 2 @ np.abs(a) ** 2)
    return sig / (interference_power(a, ch, p) + noise_r + sigma_s_sq)


def achievable_rates(a, ch: ChannelRealization, powers, noises, mode: str = "active",
                     alpha_max: float | None = None) -> np.ndarray:
    """Per-pair rates in bps/Hz. Passive mode drops the RIS noise and caps |a_q| at 1."""
    a = np.asarray(a, dtype=complex)
    bound = 1.0 if mode == "passive" else alpha_max
    if bound is not None and np.any(np.abs(a) > bound + AMP_SLACK):
        raise ValueError(f"reflection amplitude exceeds the bound {bound}")
    if mode not in ("active", "passive"):
        raise ValueError(f"unknown mode {mode!r}")
    return np.log2(1 + sinr(a, ch, powers, noises, mode))


def opd_weights(ch: ChannelRealization, powers, sigma_r_sq: float) -> np.ndarray:
    """Diagonal of E_p: [H_t P H_t^H]_qq + sigma_r^2."""
    p = np.asarray(powers, dtype=float)
    return np.abs(ch.H_t) ** 2 @ p + sigma_r_sq


def power_consumption(a, ch: ChannelRealization, powers, model: PowerModel,
                      sigma_r_sq: float = 0.0) -> float:
    """RIS power draw in watts under ``model``.

    The sparse model charges static power only for elements with a_q != 0;
    callers are expected to have zeroed closed elements exactly.
    """
    a = np.asarray(a, dtype=complex)
    Q = a.shape[0]
    if model.kind is PowerKind.PASSIVE:
        return Q * model.p_dc_w
    opd = model.xi * float(opd_weights(ch, powers, sigma_r_sq) @ np.abs(a) ** 2)
    if model.kind is PowerKind.ACTIVE_ORIGINAL:
        return Q * model.per_element_w + opd
    return np.count_nonzero(a) * model.per_element_w + opd
