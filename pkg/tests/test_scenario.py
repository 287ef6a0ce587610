import math

import numpy as np
import pytest

from activeris.scenario import (ChannelRealization, ScenarioConfig, Tolerances, cross_pairs,
                                dbm_to_w, element_indices, pathloss_db, sample_channels,
                                sample_iid_setup, sample_surface, steering_vector, trial_rng)


class TestPathloss:
    @pytest.mark.parametrize("d, kind, expected", [
        (1.0, "ris_link", -30.0),
        (100.0, "ris_link", -74.0),
        (10.0, "direct", -70.0),
    ])
    def test_table_values(self, d, kind, expected):
        assert pathloss_db(d, kind) == pytest.approx(expected, abs=1e-12)

    @pytest.mark.parametrize("d", [0.0, -1.0])
    def test_nonpositive_distance(self, d):
        with pytest.raises(ValueError):
            pathloss_db(d)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            pathloss_db(1.0, "satellite")


class TestSteering:
    def test_broadside_is_all_ones(self):
        v = steering_vector(0.0, 0.0, 3, 5, 0.05, 0.05, 0.1)
        np.testing.assert_allclose(v, np.ones(15))

    def test_unit_modulus(self, rng):
        for _ in range(1000):
            az, el = rng.uniform(-np.pi, np.pi, 2)
            v = steering_vector(az, el, 4, 3, 0.05, 0.07, 0.1)
            np.testing.assert_allclose(np.abs(v), 1.0, atol=1e-12)

    def test_half_wavelength_endfire(self):
        lam = 0.1
        v = steering_vector(np.pi / 2, 0.0, 2, 2, lam / 2, lam / 2, lam)
        np.testing.assert_allclose(v, np.exp(1j * np.array([0, np.pi, 0, np.pi])), atol=1e-12)

    def test_indices_cover_rectangular_grid(self):
        i1, i2 = element_indices(8, 4)
        assert sorted(zip(i1, i2)) == [(a, b) for a in range(8) for b in range(4)]

    def test_rejects_bad_wavelength(self):
        with pytest.raises(ValueError):
            steering_vector(0, 0, 2, 2, 0.05, 0.05, 0.0)


class TestConfig:
    def test_defaults_in_watts(self):
        c = ScenarioConfig()
        assert c.Q == 16
        assert c.alpha_max == pytest.approx(math.sqrt(1000))
        np.testing.assert_allclose(c.powers_w, 10 ** 2.3 * 1e-3)
        assert c.p_bias_w + c.p_dc_w == pytest.approx(3.5119e-4, rel=1e-4)
        assert c.spacing == (0.05, 0.05)

    def test_scalar_broadcast(self):
        c = ScenarioConfig(p_k_dbm=20.0, rate_req_bps_hz=1.0)
        assert c.p_k_dbm == (20.0,) * 4
        assert c.rate_req_bps_hz == (1.0,) * 4

    @pytest.mark.parametrize("changes", [
        {"K": 1},
        {"Q1": 0},
        {"alpha_max_sq_db": -3.0},
        {"xi": 0.0},
        {"p_ris_budget_dbm": float("inf")},
        {"tx_area": ((0, 0), (0, 10))},
        {"p_k_dbm": (1.0, 2.0)},
    ])
    def test_invalid(self, changes):
        with pytest.raises(ValueError):
            ScenarioConfig(**changes)

    def test_round_trip(self):
        c = ScenarioConfig(Q1=8, Q2=4, p_k_dbm=(20, 21, 22, 23),
                           tolerances=Tolerances(tau_reweight=1e-2))
        assert ScenarioConfig.from_dict(c.to_dict()) == c

    def test_replace_merges_tolerances(self):
        c = ScenarioConfig().replace(tolerances={"fp_max_iters": 5})
        assert c.tolerances.fp_max_iters == 5
        assert c.tolerances.tau_reweight == 1e-3

    def test_dbm(self):
        assert dbm_to_w(30.0) == pytest.approx(1.0)


class TestChannels:
    def test_cross_pair_order(self):
        assert cross_pairs(3) == [(1, 0), (2, 0), (0, 1), (2, 1), (0, 2), (1, 2)]

    def test_stack_columns(self, rng):
        K, Q = 3, 5
        ch = sample_iid_setup(Q, K, 10.0, rng)
        assert ch.H_b_stack.shape == (Q, K * (K - 1))
        for col, (k, j) in enumerate(ch.pairs):
            np.testing.assert_allclose(ch.H_b_stack[:, col],
                                       np.conj(ch.H_t[:, j]) * np.conj(ch.H_r[:, k]))
            assert ch.h_d_stack[col] == ch.h_d[k, j]

    def test_cascade_identity(self, rng):
        ch = sample_iid_setup(6, 3, 0.0, rng)
        a = rng.standard_normal(6) + 1j * rng.standard_normal(6)
        for k in range(3):
            for j in range(3):
                lhs = ch.h_b[k, j].conj() @ a
                rhs = ch.H_r[:, k] @ (a * ch.H_t[:, j])
                assert lhs == pytest.approx(rhs)

    def test_seed_determinism(self):
        c = ScenarioConfig()
        a = sample_channels(c, trial_rng(3, 1))
        b = sample_channels(c, trial_rng(3, 1))
        np.testing.assert_array_equal(a.H_b_stack, b.H_b_stack)
        other = sample_channels(c, trial_rng(3, 2))
        assert not np.allclose(a.H_b_stack, other.H_b_stack)

    def test_los_limit(self):
        c = ScenarioConfig(rician_kappa=1e9)
        ch = sample_channels(c, trial_rng(0, 0))
        d1, d2 = c.spacing
        for k in range(c.K):
            pos = ch.tx_pos[k]
            dist = np.linalg.norm(pos)
            rho = math.sqrt(10 ** (pathloss_db(dist) / 10))
            az = math.atan2(pos[1], pos[0])
            el = math.atan2(pos[2], math.hypot(pos[0], pos[1]))
            ref = rho * steering_vector(az, el, c.Q1, c.Q2, d1, d2, c.wavelength_m)
            assert np.linalg.norm(ch.H_t[:, k] - ref) <= 1e-3 * np.linalg.norm(ref)

    def test_rician_normalization(self):
        c = ScenarioConfig(K=2, Q1=2, Q2=2, rician_kappa=3.0)
        rng = trial_rng(5)
        pos = (np.array([[30.0, 20.0, -20.0], [40.0, 30.0, -20.0]]),
               np.array([[30.0, -220.0, -20.0], [40.0, -230.0, -20.0]]))
        rho_sq = 10 ** (pathloss_db(np.linalg.norm(pos[0], axis=1)) / 10)
        acc = np.zeros(2)
        n = 10_000
        for _ in range(n // 4):
            ch = sample_channels(c, rng, positions=pos)
            acc += np.mean(np.abs(ch.H_t) ** 2, axis=0)
        ratio = acc / (n // 4) / rho_sq
        np.testing.assert_allclose(ratio, 1.0, rtol=0.05)

    def test_iid_gain_ratio(self):
        rng = trial_rng(9)
        num = den = 0.0
        for _ in range(10_000 // 12):
            ch = sample_iid_setup(4, 4, 20.0, rng)
            num += np.mean(np.abs(ch.h_d_stack) ** 2)
            den += np.mean(np.abs(ch.H_b_stack) ** 2)
        assert abs(10 * np.log10(num / den) - 20.0) <= 1.0

    def test_subset_and_surface(self):
        c = ScenarioConfig()
        ch = sample_channels(c, trial_rng(1, 0))
        sub = ch.subset([0, 3])
        np.testing.assert_array_equal(sub.H_t, ch.H_t[[0, 3]])
        np.testing.assert_array_equal(sub.h_d, ch.h_d)
        big = sample_surface(c, ch, 10, trial_rng(1, 0, 1))
        assert big.Q == 10
        np.testing.assert_array_equal(big.h_d, ch.h_d)
        np.testing.assert_array_equal(big.tx_pos, ch.tx_pos)

    def test_rejects_mismatched_shapes(self):
        with pytest.raises(ValueError):
            ChannelRealization(np.eye(2), np.ones((3, 2)), np.ones((4, 2)))
