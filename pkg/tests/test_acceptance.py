"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The lines are also collected and repeated in the pytest terminal summary
(see ``conftest.pytest_terminal_summary``).  Run with::

    pytest tests/test_acceptance.py -v -s
"""
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from activeris.nulling import nulling_closed_form, nulling_trials, residual_power
from activeris.powermin import (build_sdr_instance, check_feasible, dca_rank_one,
                                extract_reflect_vector, penalty, powermin_baseline,
                                powermin_sparse, rank_one_ratio, solve_sdr)
from activeris.conic import solve_sdp
from activeris.scenario import ScenarioConfig, sample_channels, sample_iid_setup, sample_surface, trial_rng
from activeris.sumrate import (passive_count, sumrate_baseline, sumrate_one_loop,
                               sumrate_two_loop, surrogate_objective, update_omega, zero_setting)
from activeris.system_model import (PowerKind, PowerModel, achievable_rates, opd_weights,
                                    power_consumption, sinr_decomposition)

from grid_oracle import entry_grid, grid_rates, product_grid

pytestmark = pytest.mark.slow

RESULTS = {}


def verdict(n, checks, started):
    """Record and print the outcome of criterion ``n``; fail if any check failed.

    ``checks`` is a list of ``(label, ok, detail)``.
    """
    ok = all(c[1] for c in checks)
    parts = "; ".join(f"{label}: {'ok' if good else 'FAILED'} ({detail})"
                      for label, good, detail in checks)
    line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'} [{time.time() - started:.0f}s] {parts}"
    RESULTS[n] = line
    print("\n" + line)
    assert ok, line


def noises(cfg):
    return cfg.sigma_r_sq_w, cfg.sigma_s_sq_w


def bernoulli_se(x):
    x = np.asarray(x, float)
    return float(np.sqrt(max(x.mean() * (1 - x.mean()), 0.0) / x.size))


def paired_se(x, y):
    d = np.asarray(x, float) - np.asarray(y, float)
    return float(d.std(ddof=1) / np.sqrt(d.size)) if d.size > 1 else 0.0


# ---------------------------------------------------------------------------

def test_criterion_01_nulling_exactness():
    t0 = time.time()
    worst = 0.0
    for t in range(100):
        ch = sample_iid_setup(16, 4, 0.0, trial_rng(101, t))
        a = nulling_closed_form(ch)
        r = np.linalg.norm(ch.H_b_stack.conj().T @ a + ch.h_d_stack) / np.linalg.norm(ch.h_d_stack)
        worst = max(worst, r)
    elapsed = time.time() - t0
    verdict(1, [("relative residual <= 1e-8", worst <= 1e-8, f"worst {worst:.2e}"),
                ("runtime < 10 s", elapsed < 10, f"{elapsed:.1f}s")], t0)


def test_criterion_02_nulling_probability():
    t0 = time.time()
    qs = list(range(8, 21))
    alphas = [0.0, 10.0, 20.0, 30.0]
    trials = 200
    rows = nulling_trials(qs, alphas, trials=trials, seed=202)
    S = np.zeros((len(qs), len(alphas), trials))
    for r in rows:
        S[qs.index(r.q), alphas.index(r.alpha_max_sq_db), r.trial] = r.success
    p = S.mean(axis=2)
    i16, i30 = qs.index(16), alphas.index(30.0)
    p16 = p[i16, i30]
    se16 = max(bernoulli_se(S[i16, i30]), 1.0 / trials)
    q_viol = [(qs[i], alphas[j]) for j in range(len(alphas)) for i in range(len(qs) - 1)
              if p[i + 1, j] < p[i, j] - 2 * paired_se(S[i + 1, j], S[i, j])]
    a_viol = [(qs[i], alphas[j]) for i in range(len(qs)) for j in range(len(alphas) - 1)
              if p[i, j + 1] < p[i, j] - 2 * paired_se(S[i, j + 1], S[i, j])]
    elapsed = time.time() - t0
    verdict(2, [
        ("P(Q=16, 30 dB) = 1", 1 - p16 <= 2 * se16, f"{p16:.3f}"),
        ("P(Q=8) = 0 for all bounds", np.all(p[0] == 0), f"{p[0].tolist()}"),
        ("nondecreasing in Q", not q_viol, f"violations {q_viol}"),
        ("nondecreasing in alpha", not a_viol, f"violations {a_viol}"),
        ("runtime < 5 min", elapsed < 300, f"{elapsed:.0f}s"),
    ], t0)


def test_criterion_03_quadratic_transform_identity():
    t0 = time.time()
    cfg = ScenarioConfig()
    rng = np.random.default_rng(303)
    worst = 0.0
    for t in range(100):
        ch = sample_channels(cfg, trial_rng(303, t))
        a = cfg.alpha_max * rng.random(ch.Q) * np.exp(2j * np.pi * rng.random(ch.Q))
        d = sinr_decomposition(ch, cfg.powers_w, noises(cfg))
        om = update_omega(a, d, ch, cfg.powers_w)
        sur = surrogate_objective(a, om, d, ch, cfg.powers_w)
        true = float(np.sum(achievable_rates(a, ch, cfg.powers_w, noises(cfg))))
        worst = max(worst, abs(sur - true) / abs(true))
    elapsed = time.time() - t0
    verdict(3, [("relative gap <= 1e-9", worst <= 1e-9, f"worst {worst:.1e}"),
                ("runtime < 5 s", elapsed < 5, f"{elapsed:.1f}s")], t0)


def test_criterion_04_fp_convergence():
    t0 = time.time()
    cfg = ScenarioConfig(Q1=4, Q2=4, p_ris_budget_dbm=10.0, p_k_dbm=23.0)
    drops, converged, finals = [], [], []
    for t in range(50):
        ch = sample_channels(cfg, trial_rng(404, t))
        one = sumrate_one_loop(ch, cfg)
        two = sumrate_two_loop(ch, cfg)
        for rep in (one, two):
            traj = np.asarray(rep.trajectory)
            drops.append(float(np.min(np.diff(traj))) if traj.size > 1 else 0.0)
        converged.append(one.status == "optimal" and one.iterations <= 300
                         and two.status == "optimal" and two.iterations <= 300)
        finals.append((one.sum_rate, two.sum_rate))
    finals = np.array(finals)
    mean_gap = abs(finals[:, 0].mean() - finals[:, 1].mean()) / finals.max(axis=1).mean()
    per_trial = np.abs(finals[:, 0] - finals[:, 1]) / finals.max(axis=1)
    elapsed = time.time() - t0
    verdict(4, [
        ("trajectories nondecreasing", min(drops) >= -1e-8, f"largest drop {max(0.0, -min(drops)):.1e}"),
        ("converged within 300 iterations in >= 95%", np.mean(converged) >= 0.95,
         f"{np.mean(converged):.0%}"),
        ("one-loop vs two-loop within 2%", mean_gap <= 0.02,
         f"mean-level gap {mean_gap:.2%}; per-trial median {np.median(per_trial):.2%}, "
         f"max {per_trial.max():.1%}"),
        ("runtime < 30 min", elapsed < 1800, f"{elapsed:.0f}s"),
    ], t0)


def test_criterion_05_small_instance_oracle():
    t0 = time.time()
    cfg = ScenarioConfig(K=2, Q1=2, Q2=1, p_k_dbm=(23.0, 23.0), p_ris_budget_dbm=10.0)
    grid = product_grid(entry_grid(cfg.alpha_max, 64, 16), 2)
    model = PowerModel.from_config(cfg, PowerKind.ACTIVE_SPARSE)
    ratios = []
    for t in range(20):
        ch = sample_channels(cfg, trial_rng(505, t))
        e = cfg.xi * opd_weights(ch, cfg.powers_w, cfg.sigma_r_sq_w)
        used = np.count_nonzero(grid, axis=1) * model.per_element_w + np.abs(grid) ** 2 @ e
        ok = used <= cfg.p_ris_w
        best = grid_rates(grid[ok], ch, cfg.powers_w, noises(cfg)).sum(axis=1).max()
        ratios.append(sumrate_one_loop(ch, cfg).sum_rate / best)
    elapsed = time.time() - t0
    verdict(5, [("one-loop >= 0.98 x grid optimum", min(ratios) >= 0.98,
                 f"worst ratio {min(ratios):.4f}"),
                ("runtime < 10 min", elapsed < 600, f"{elapsed:.0f}s")], t0)


def test_criterion_06_scheme_ordering():
    t0 = time.time()
    cfg = ScenarioConfig(Q1=8, Q2=8, alpha_max_sq_db=30.0, p_ris_budget_dbm=10.0)
    srb, no_zs, rb, passive = [], [], [], []
    for t in range(50):
        ch = sample_channels(cfg, trial_rng(606, t))
        rep = sumrate_one_loop(ch, cfg)
        a = zero_setting(rep.a)
        srb.append(float(np.sum(achievable_rates(a, ch, cfg.powers_w, noises(cfg)))))
        no_zs.append(rep.sum_rate)
        rb.append(sumrate_baseline(ch, cfg, "fixed_active").sum_rate)
        surf = sample_surface(cfg, ch, passive_count(cfg), trial_rng(606, t, 1))
        passive.append(sumrate_baseline(surf, cfg, "passive_upper").sum_rate)
    m = {k: float(np.mean(v)) for k, v in
         dict(srb=srb, no_zs=no_zs, rb=rb, passive=passive).items()}
    zs_gap = abs(m["srb"] - m["no_zs"]) / m["no_zs"]
    verdict(6, [
        ("SRB >= RB", m["srb"] >= m["rb"], f"{m['srb']:.3f} vs {m['rb']:.3f}"),
        ("active >= passive upper bound", min(m["srb"], m["rb"]) >= m["passive"],
         f"SRB {m['srb']:.3f}, RB {m['rb']:.3f}, passive {m['passive']:.3f}"),
        ("zero-setting within 1%", zs_gap <= 0.01, f"{zs_gap:.3%}"),
    ], t0)


def _feasible_start(inst, A_star, rng):
    """Rank-two SDR-feasible point: midpoint of A_star and another vertex."""
    F = np.diag(rng.uniform(0.5, 1.5, inst.size)).astype(complex)
    F[-1, -1] = 0
    out = solve_sdp(inst.program(inst.E_a_bar + F * np.real(np.trace(inst.E_a_bar)) / inst.size))
    if not out.ok:
        return None
    return 0.5 * (A_star + out.solution)


def test_criterion_07_dca_correctness():
    t0 = time.time()
    cfg = ScenarioConfig(Q1=8, Q2=4, rate_req_bps_hz=1.0)
    rng = np.random.default_rng(707)
    found, t = 0, 0
    neg_pen, obj_rise, rank_bad, rate_bad, amp_bad, iters = 0.0, 0.0, 0.0, 0.0, 0.0, []
    while found < 50 and t < 200:
        ch = sample_channels(cfg, trial_rng(707, t))
        t += 1
        inst = build_sdr_instance(ch, cfg, np.ones(ch.Q))
        out, A_star = solve_sdr(inst)
        if A_star is None:
            continue
        found += 1
        starts = [A_star]
        mid = _feasible_start(inst, A_star, rng)
        if mid is not None:
            starts.append(mid)
        for A0 in starts:
            res = dca_rank_one(A0, inst, rho=cfg.rho)
            iters.append(res.iterations)
            objs = [s.objective for s in res.trace]
            scale = max(1e-12, max(abs(o) for o in objs))
            neg_pen = min(neg_pen, min(s.penalty for s in res.trace))
            if len(objs) > 1:
                obj_rise = max(obj_rise, max(np.diff(objs)) / scale)
            rank_bad = max(rank_bad, rank_one_ratio(res.A))
            a = extract_reflect_vector(res.A)
            amp_bad = max(amp_bad, np.max(np.abs(a)) / cfg.alpha_max)
            a = np.where(np.abs(a) > cfg.alpha_max, a * cfg.alpha_max / np.abs(a), a)
            r = achievable_rates(a, ch, cfg.powers_w, noises(cfg))
            rate_bad = min(rate_bad, float(np.min(r - 1.0)))
    verdict(7, [
        ("50 feasible instances", found == 50, f"{found} of {t} draws"),
        ("penalty >= 0", neg_pen >= -1e-9, f"min {neg_pen:.1e}"),
        ("objective nonincreasing", obj_rise <= 1e-6, f"max relative rise {obj_rise:.1e}"),
        ("sigma2/sigma1 <= 1e-4", rank_bad <= 1e-4, f"max {rank_bad:.1e}"),
        ("rate slack >= -1e-4", rate_bad >= -1e-4, f"min {rate_bad:.1e}"),
        ("|a_q| <= alpha_max(1+1e-3)", amp_bad <= 1 + 1e-3, f"max ratio {amp_bad:.6f}"),
        ("DCA exercised", max(iters) > 0, f"iterations up to {max(iters)}"),
        ("runtime < 30 min", time.time() - t0 < 1800, f"{time.time() - t0:.0f}s"),
    ], t0)


def test_criterion_08_power_ordering():
    t0 = time.time()
    rates = [0.5, 1.0, 1.5, 2.0]
    base = ScenarioConfig(Q1=8, Q2=4, alpha_max_sq_db=30.0)
    order_viol, mono_viol, pairs = [], [], 0
    for t in range(10):
        ch = sample_channels(base, trial_rng(808, t))
        prev = None
        for r in rates:
            cfg = base.replace(rate_req_bps_hz=r)
            srb = powermin_sparse(ch, cfg)
            fa = powermin_baseline(ch, cfg, "fully_active")
            if srb.feasible and fa.feasible:
                pairs += 1
                if srb.power_w > fa.power_w:
                    order_viol.append((t, r))
            if srb.feasible:
                if prev is not None and srb.power_w < prev * (1 - 1e-6):
                    mono_viol.append((t, r))
                prev = srb.power_w
    opi_exact = True
    ch = sample_channels(base, trial_rng(808, 0))
    a = powermin_baseline(ch, base.replace(rate_req_bps_hz=1.0), "fully_active").a
    for p_bias in (-10.0, -6.0, -2.0, 2.0):
        cfg = base.replace(p_bias_dbm=p_bias)
        model = PowerModel.from_config(cfg, PowerKind.ACTIVE_ORIGINAL)
        opd = cfg.xi * float(opd_weights(ch, cfg.powers_w, cfg.sigma_r_sq_w) @ np.abs(a) ** 2)
        total = power_consumption(a, ch, cfg.powers_w, model, cfg.sigma_r_sq_w)
        opi_exact &= total - opd == pytest.approx(ch.Q * (cfg.p_bias_w + cfg.p_dc_w), rel=1e-12)
    verdict(8, [
        ("SRB <= fully active", not order_viol and pairs > 0,
         f"{pairs} feasible pairs, violations {order_viol}"),
        ("SRB nondecreasing in rate", not mono_viol, f"violations {mono_viol}"),
        ("fully-active OPI = Q(P_bias+P_DC)", opi_exact, "4 biasing levels"),
    ], t0)


def test_criterion_09_feasibility_frontier():
    t0 = time.time()
    cfg = ScenarioConfig(Q1=8, Q2=4, p_k_dbm=23.0, alpha_max_sq_db=10.0)
    rates = [1.2, 1.8, 1.9]
    act = {r: [] for r in rates}
    pas = []
    for t in range(100):
        ch = sample_channels(cfg, trial_rng(909, t))
        for r in rates:
            act[r].append(check_feasible(ch, cfg.replace(rate_req_bps_hz=r), "active"))
        pas.append(check_feasible(ch, cfg.replace(rate_req_bps_hz=1.2), "passive"))
    pa, pp = np.mean(act[1.2]), np.mean(pas)
    se = paired_se(act[1.2], pas)
    verdict(9, [
        ("passive <= 5% at 1.2", pp <= 0.05, f"{pp:.0%}"),
        ("active > passive at 1.2 (2 sigma)", pa - pp > 2 * se, f"{pa:.0%} vs {pp:.0%}"),
        ("active not ~0 up to 1.8", np.mean(act[1.8]) > 0.05, f"{np.mean(act[1.8]):.0%} at 1.8"),
        ("active <= 10% at 1.9", np.mean(act[1.9]) <= 0.10, f"{np.mean(act[1.9]):.0%}"),
    ], t0)


_identity_failures = []


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), Q=st.integers(1, 40), zeroed=st.integers(0, 40),
       p_bias=st.floats(-30, 10), p_dc=st.floats(-30, 10), xi=st.floats(1.0, 2.0))
def _power_identities(seed, Q, zeroed, p_bias, p_dc, xi):
    rng = np.random.default_rng(seed)
    ch = sample_iid_setup(Q, 2, 0.0, rng)
    powers = rng.uniform(0.1, 1.0, 2)
    a = (rng.uniform(0.1, 3.0, Q) * np.exp(2j * np.pi * rng.random(Q))).astype(complex)
    kw = dict(p_bias_w=10 ** (p_bias / 10) / 1e3, p_dc_w=10 ** (p_dc / 10) / 1e3, xi=xi)
    sparse = PowerModel(PowerKind.ACTIVE_SPARSE, **kw)
    orig = PowerModel(PowerKind.ACTIVE_ORIGINAL, **kw)
    pas = PowerModel(PowerKind.PASSIVE, **kw)
    if power_consumption(a, ch, powers, sparse, 1e-10) != power_consumption(a, ch, powers, orig,
                                                                             1e-10):
        _identity_failures.append(("equal when dense", seed))
    if zeroed % (Q + 1):
        b = a.copy()
        b[rng.choice(Q, zeroed % (Q + 1), replace=False)] = 0
        if not power_consumption(b, ch, powers, sparse, 1e-10) < power_consumption(
                b, ch, powers, orig, 1e-10):
            _identity_failures.append(("strictly less when zeroed", seed))
    if power_consumption(a, ch, powers, pas) != Q * kw["p_dc_w"]:
        _identity_failures.append(("passive = Q P_DC", seed))


def test_criterion_10_power_model_identities():
    t0 = time.time()
    _identity_failures.clear()
    _power_identities()
    kinds = sorted({f[0] for f in _identity_failures})
    verdict(10, [("identities over 200 random draws", not _identity_failures,
                  f"failures {kinds}" if kinds else "none failed")], t0)
