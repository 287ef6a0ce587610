"""Node geometry and fading channel generation.

Channels follow the narrowband K-pair interference-channel model: a Rayleigh
direct link between every transmitter/receiver pair, and Rician links between
each node and a uniform planar RIS lying in the y-z plane.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np


def dbm_to_w(dbm):
    return 10.0 ** ((np.asarray(dbm, dtype=float) - 30.0) / 10.0)


def db_to_lin(db):
    return 10.0 ** (np.asarray(db, dtype=float) / 10.0)


@dataclass(frozen=True)
class Tolerances:
    tau_reweight: float = 1e-3
    fp_rel_tol: float = 1e-4
    fp_max_iters: int = 300
    fp_inner_max_iters: int = 50
    fp_outer_max_iters: int = 50
    # also start the sum-rate loops from one phase-aligned point per user
    fp_multistart: bool = True
    dca_penalty_tol: float = 1e-6
    dca_max_iters: int = 60
    powermin_rel_tol: float = 1e-3
    powermin_max_outer: int = 20
    zero_set_amp_threshold: float = 1.0
    rank_tol: float = 1e-10
    feas_tol: float = 1e-7


@dataclass(frozen=True)
class ScenarioConfig:
    """Physical and algorithmic parameters of one simulated deployment.

    Powers are given in dBm / dB as in the usual link-budget tables; the
    ``*_w`` properties expose the linear values used by the solvers.
    """

    K: int = 4
    Q1: int = 4
    Q2: int = 4
    tx_area: tuple = ((20.0, 5.0), (60.0, 45.0))
    rx_area: tuple = ((20.0, -245.0), (60.0, -205.0))
    user_z: float = -20.0
    ris_origin: tuple = (0.0, 0.0, 0.0)
    wavelength_m: float = 0.1
    d1_m: Optional[float] = None
    d2_m: Optional[float] = None
    rician_kappa: float = 9.0
    pathloss_ris: tuple = (-30.0, 22.0)
    pathloss_direct: tuple = (-30.0, 40.0)
    sigma_r_sq_dbm: float = -100.0
    sigma_s_sq_dbm: float = -100.0
    p_k_dbm: tuple = (23.0, 23.0, 23.0, 23.0)
    alpha_max_sq_db: float = 30.0
    p_bias_dbm: float = -6.0
    p_dc_dbm: float = -10.0
    xi: float = 1.25
    p_ris_budget_dbm: float = 10.0
    rate_req_bps_hz: tuple = (0.0, 0.0, 0.0, 0.0)
    rho: float = 10.0
    seed: int = 0
    tolerances: Tolerances = field(default_factory=Tolerances)

    def __post_init__(self):
        # scalars are broadcast to per-user vectors
        for name in ("p_k_dbm", "rate_req_bps_hz"):
            v = getattr(self, name)
            if np.ndim(v) == 0:
                v = (float(v),) * self.K
            elif len(v) != self.K and len(set(v)) == 1:
                v = (float(v[0]),) * self.K
            object.__setattr__(self, name, tuple(float(x) for x in v))
        for name in ("tx_area", "rx_area"):
            (x0, y0), (x1, y1) = getattr(self, name)
            object.__setattr__(self, name, ((float(x0), float(y0)), (float(x1), float(y1))))
        if isinstance(self.tolerances, dict):
            object.__setattr__(self, "tolerances", Tolerances(**self.tolerances))
        self.validate()

    def validate(self):
        if self.K < 2:
            raise ValueError("K must be at least 2")
        if self.Q1 < 1 or self.Q2 < 1:
            raise ValueError("Q1 and Q2 must be positive")
        if len(self.p_k_dbm) != self.K or len(self.rate_req_bps_hz) != self.K:
            raise ValueError("per-user vectors must have length K")
        for name in ("tx_area", "rx_area"):
            (x0, y0), (x1, y1) = getattr(self, name)
            if x0 == x1 or y0 == y1:
                raise ValueError(f"{name} is a degenerate rectangle")
        powers = [self.sigma_r_sq_dbm, self.sigma_s_sq_dbm, self.p_bias_dbm,
                  self.p_dc_dbm, self.p_ris_budget_dbm, self.alpha_max_sq_db, *self.p_k_dbm]
        if not all(math.isfinite(p) for p in powers):
            raise ValueError("all powers must be finite")
        if self.alpha_max_sq_db < 0:
            raise ValueError("active RIS requires alpha_max >= 1")
        if self.xi <= 0:
            raise ValueError("xi must be positive")
        if self.wavelength_m <= 0:
            raise ValueError("wavelength must be positive")

    def replace(self, **changes) -> "ScenarioConfig":
        if "tolerances" in changes and isinstance(changes["tolerances"], dict):
            changes["tolerances"] = dataclasses.replace(self.tolerances, **changes["tolerances"])
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = [list(x) if isinstance(x, tuple) else x for x in v]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        d = dict(d)
        if "tolerances" in d:
            d["tolerances"] = Tolerances(**d["tolerances"])
        for k in ("tx_area", "rx_area"):
            if k in d:
                d[k] = tuple(tuple(x) for x in d[k])
        for k in ("ris_origin", "pathloss_ris", "pathloss_direct"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)

    # linear-unit views
    @property
    def Q(self) -> int:
        return self.Q1 * self.Q2

    @property
    def alpha_max(self) -> float:
        return float(np.sqrt(db_to_lin(self.alpha_max_sq_db)))

    @property
    def powers_w(self) -> np.ndarray:
        return dbm_to_w(self.p_k_dbm)

    @property
    def sigma_r_sq_w(self) -> float:
        return float(dbm_to_w(self.sigma_r_sq_dbm))

    @property
    def sigma_s_sq_w(self) -> float:
        return float(dbm_to_w(self.sigma_s_sq_dbm))

    @property
    def p_bias_w(self) -> float:
        return float(dbm_to_w(self.p_bias_dbm))

    @property
    def p_dc_w(self) -> float:
        return float(dbm_to_w(self.p_dc_dbm))

    @property
    def p_ris_w(self) -> float:
        return float(dbm_to_w(self.p_ris_budget_dbm))

    @property
    def spacing(self) -> tuple:
        d1 = self.d1_m if self.d1_m is not None else self.wavelength_m / 2
        d2 = self.d2_m if self.d2_m is not None else self.wavelength_m / 2
        return d1, d2


@dataclass
class ChannelRealization:
    """One draw of all links.

    ``h_d[k, j]`` is Tx j -> Rx k; columns of ``H_t``/``H_r`` are per-user
    forward (Tx -> RIS) and backward (RIS -> Rx) vectors.
    """

    h_d: np.ndarray
    H_t: np.ndarray
    H_r: np.ndarray
    tx_pos: Optional[np.ndarray] = None
    rx_pos: Optional[np.ndarray] = None

    def __post_init__(self):
        self.h_d = np.asarray(self.h_d, dtype=complex)
        self.H_t = np.asarray(self.H_t, dtype=complex)
        self.H_r = np.asarray(self.H_r, dtype=complex)
        K = self.h_d.shape[0]
        # h_b[k, j] = conj(h_t,j) * conj(h_r,k), so h_b[k, j]^H a = h_r,k^T diag(a) h_t,j
        self.h_b = np.conj(self.H_r.T)[:, None, :] * np.conj(self.H_t.T)[None, :, :]
        self.pairs = cross_pairs(K)
        ks = np.array([k for k, _ in self.pairs], dtype=int)
        js = np.array([j for _, j in self.pairs], dtype=int)
        self.H_b_stack = self.h_b[ks, js].T.copy() if len(ks) else np.zeros((self.Q, 0), complex)
        self.h_d_stack = self.h_d[ks, js].copy()

    @property
    def K(self) -> int:
        return self.h_d.shape[0]

    @property
    def Q(self) -> int:
        return self.H_t.shape[0]

    def subset(self, elements) -> "ChannelRealization":
        """Realization seen by a surface made of the given element indices."""
        idx = np.asarray(elements)
        return ChannelRealization(self.h_d, self.H_t[idx], self.H_r[idx], self.tx_pos, self.rx_pos)


def cross_pairs(K: int) -> list:
    """Ordered (k, j) interference links: j outer, k != j inner, ascending."""
    return [(k, j) for j in range(K) for k in range(K) if k != j]


def pathloss_db(distance_m: float, link_kind: str = "ris_link",
                ris=(-30.0, 22.0), direct=(-30.0, 40.0)) -> float:
    if not np.all(np.asarray(distance_m) > 0):
        raise ValueError("distance must be positive")
    if link_kind == "ris_link":
        intercept, coeff = ris
    elif link_kind == "direct":
        intercept, coeff = direct
    else:
        raise ValueError(f"unknown link kind {link_kind!r}")
    return intercept - coeff * np.log10(distance_m)


def element_indices(Q1: int, Q2: int):
    """Horizontal and vertical indices of each element, horizontal fastest.

    For 0-based q: i1 = q mod Q1 and i2 = q div Q1, so every (i1, i2) pair of
    the Q1 x Q2 grid appears exactly once.
    """
    q = np.arange(Q1 * Q2)
    return q % Q1, q // Q1


def steering_vector(azimuth, elevation, Q1, Q2, d1_m, d2_m, wavelength_m) -> np.ndarray:
    if Q1 * Q2 < 1:
        raise ValueError("array must have at least one element")
    if wavelength_m <= 0:
        raise ValueError("wavelength must be positive")
    i1, i2 = element_indices(Q1, Q2)
    k0 = 2 * np.pi / wavelength_m
    phase = k0 * (i1 * d1_m * np.sin(azimuth) * np.cos(elevation) + i2 * d2_m * np.sin(elevation))
    return np.exp(1j * phase)


def angles_to(pos, origin):
    """Azimuth in the x-y plane and elevation from it, as seen from ``origin``."""
    d = np.asarray(pos, float) - np.asarray(origin, float)
    az = np.arctan2(d[..., 1], d[..., 0])
    el = np.arctan2(d[..., 2], np.hypot(d[..., 0], d[..., 1]))
    return az, el


def cn(rng, size, var=1.0):
    """Circular complex Gaussian samples."""
    s = np.sqrt(var / 2)
    return s * (rng.standard_normal(size) + 1j * rng.standard_normal(size))


def sample_positions(config: ScenarioConfig, rng):
    def draw(area):
        (x0, y0), (x1, y1) = area
        xy = np.column_stack([rng.uniform(min(x0, x1), max(x0, x1), config.K),
                              rng.uniform(min(y0, y1), max(y0, y1), config.K)])
        return np.column_stack([xy, np.full(config.K, config.user_z)])

    return draw(config.tx_area), draw(config.rx_area)


def rician_links(config: ScenarioConfig, positions, rng, Q1=None, Q2=None) -> np.ndarray:
    """Q x K matrix of RIS links to the nodes at ``positions``."""
    Q1 = config.Q1 if Q1 is None else Q1
    Q2 = config.Q2 if Q2 is None else Q2
    d1, d2 = config.spacing
    kappa = config.rician_kappa
    origin = np.asarray(config.ris_origin, float)
    dist = np.linalg.norm(positions - origin, axis=1)
    rho = np.sqrt(db_to_lin(pathloss_db(dist, "ris_link", ris=config.pathloss_ris)))
    az, el = angles_to(positions, origin)
    K = positions.shape[0]
    los = np.column_stack([steering_vector(az[k], el[k], Q1, Q2, d1, d2, config.wavelength_m)
                           for k in range(K)])
    nlos = cn(rng, (Q1 * Q2, K))
    return rho * (np.sqrt(kappa / (1 + kappa)) * los + np.sqrt(1 / (1 + kappa)) * nlos)


def sample_channels(config: ScenarioConfig, rng, *, positions=None, h_d=None,
                    array_shape=None) -> ChannelRealization:
    """Draw a realization for ``config``.

    ``positions`` and ``h_d`` may be passed to reuse the users and direct links
    of another draw (e.g. a differently sized surface in the same scene).
    """
    if positions is None:
        positions = sample_positions(config, rng)
    tx, rx = positions
    if h_d is None:
        dist = np.linalg.norm(rx[:, None, :] - tx[None, :, :], axis=2)
        gain = db_to_lin(pathloss_db(dist, "direct", direct=config.pathloss_direct))
        h_d = cn(rng, (config.K, config.K)) * np.sqrt(gain)
    Q1, Q2 = array_shape if array_shape is not None else (config.Q1, config.Q2)
    H_t = rician_links(config, tx, rng, Q1, Q2)
    H_r = rician_links(config, rx, rng, Q1, Q2)
    return ChannelRealization(h_d, H_t, H_r, tx, rx)


def sample_surface(config: ScenarioConfig, base: ChannelRealization, n_elements: int,
                   rng) -> ChannelRealization:
    """Realization of an ``n_elements`` surface in the same scene as ``base``.

    The surface is the first ``n_elements`` of the smallest square array that
    holds them.
    """
    side = int(math.ceil(math.sqrt(n_elements)))
    ch = sample_channels(config, rng, positions=(base.tx_pos, base.rx_pos), h_d=base.h_d,
                         array_shape=(side, side))
    return ch.subset(np.arange(n_elements))


def sample_iid_setup(Q: int, K: int, gain_ratio_db: float, rng) -> ChannelRealization:
    """Rayleigh links with E|h_d|^2 = 1 and E|[h_r]_q|^2 |[h_t]_q|^2 = 10^(-ratio/10)."""
    var = 10.0 ** (-gain_ratio_db / 20.0)
    h_d = cn(rng, (K, K))
    H_t = cn(rng, (Q, K), var)
    H_r = cn(rng, (Q, K), var)
    return ChannelRealization(h_d, H_t, H_r)


def trial_rng(seed: int, *index: int) -> np.random.Generator:
    """Independent stream for one Monte Carlo trial."""
    return np.random.default_rng(np.random.SeedSequence([int(seed) & (2**64 - 1), *map(int, index)]))
