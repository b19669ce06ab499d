"""
Acceptance criteria. Each test prints one PASS/FAIL line with the measured
value and the pinned tolerance; the lines are repeated in the pytest summary.

Run directly (``python tests/test_acceptance.py``) to print only the lines.
"""
import json
import os
import subprocess
import sys
import time

import numpy as np
import pytest
from scipy.special import expit

import dense_oracles as dense
from sentinelnet import gsbl
from sentinelnet.blockmat import ProjectiveMatrix, lift, pm_inverse, pm_multiply, project
from sentinelnet.dynsys import LagPair, SyntheticConfig, generate_synthetic
from sentinelnet.predict import SurveillanceRow, failure_rate, moderated_sigmoid, rmse_paper, rollout
from sentinelnet.snma import SnmaConfig, run_snma

RESULTS = []


def report(label, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {label}: {detail}"
    RESULTS.append(line)
    print(line)
    return ok


def rel_err(a, b):
    scale = max(np.linalg.norm(b), np.finfo(float).tiny)
    return float(np.linalg.norm(a - b) / scale)


# 1 ---------------------------------------------------------------------------

def test_c1_structured_algebra():
    rng = np.random.default_rng(101)
    tick = time.perf_counter()
    worst_mul = worst_inv = 0.0
    for _ in range(200):
        n, m, r = rng.integers(1, 9, 3)
        k = int(rng.integers(1, 6))
        a = ProjectiveMatrix(rng.standard_normal((n, m)), k)
        b = ProjectiveMatrix(rng.standard_normal((m, r)), k)
        dense_prod = project(lift(a) @ lift(b), k).entries
        worst_mul = max(worst_mul, rel_err(pm_multiply(a, b).entries, dense_prod))
        sq = ProjectiveMatrix(rng.standard_normal((n, n)) + np.sqrt(n) * np.eye(n), k)
        inv = np.linalg.inv(lift(sq))
        # LAPACK does not keep the off-structure zeros exact
        dense_inv = project(inv, k, atol=1e-12 * max(1.0, np.abs(inv).max()) * inv.shape[0]).entries
        worst_inv = max(worst_inv, rel_err(pm_inverse(sq).entries, dense_inv))
    secs = time.perf_counter() - tick
    ok = worst_mul <= 1e-10 and worst_inv <= 1e-8 and secs < 5
    assert report("1", ok, f"200 cases, max rel err multiply {worst_mul:.1e} (<=1e-10), "
                           f"inverse {worst_inv:.1e} (<=1e-8), {secs:.2f}s (<5s)")


# 2 ---------------------------------------------------------------------------

def test_c2_posterior_oracle():
    rng = np.random.default_rng(202)
    tick = time.perf_counter()
    worst_lin = worst_log = 0.0
    for _ in range(50):
        N = int(rng.integers(1, 7))
        T = int(rng.integers(1, 11))
        sizes = np.ones(N, dtype=int)
        X = rng.standard_normal((T, N))
        gamma = rng.uniform(0.1, 3.0, N)
        prior = gsbl.GroupPrior(gamma, sizes)
        Y = rng.standard_normal((T, N))
        lam = float(rng.uniform(0.1, 2.0))
        post = gsbl.linear_posterior(LagPair(X, Y, sizes), prior, gsbl.LinearHyper(lam))
        mu, Sig = dense.linear_posterior(X, Y, gamma, sizes, lam)
        worst_lin = max(worst_lin, rel_err(post.M.reshape(-1), mu),
                        rel_err(np.kron(post.Sigma, np.eye(N)), Sig))
        B = (rng.random((T, N)) < 0.5).astype(float)
        xi = rng.uniform(0.0, 4.0, (T, N))
        post = gsbl.logistic_posterior(LagPair(X, B, sizes), prior, gsbl.LogisticHyper(xi))
        mu, Sig = dense.logistic_posterior(X, B, gamma, sizes, xi)
        worst_log = max(worst_log, rel_err(post.M.reshape(-1), mu),
                        rel_err(post.Sigma, dense.per_target_blocks(Sig, N, N)))
    secs = time.perf_counter() - tick
    ok = worst_lin <= 1e-8 and worst_log <= 1e-8 and secs < 30
    assert report("2", ok, f"50 instances, max rel err linear {worst_lin:.1e}, "
                           f"logistic {worst_log:.1e} (<=1e-8), {secs:.2f}s (<30s)")


# 3 ---------------------------------------------------------------------------

def test_c3_em_monotonicity():
    rng = np.random.default_rng(303)
    worst_drop = 0.0
    for _ in range(20):
        N = int(rng.integers(2, 9))
        T = int(rng.integers(5, 31))
        S = rng.standard_normal((N, N)) * (rng.random(N) < 0.5)[:, None]
        X = rng.standard_normal((T, N))
        Y = X @ S + rng.uniform(0.1, 1.0) * rng.standard_normal((T, N))
        res = gsbl.fit(LagPair(X, Y, np.ones(N, dtype=int)))
        ll = np.array(res.trace.log_likelihood)
        worst_drop = max(worst_drop, float(np.max(ll[:-1] - ll[1:], initial=0.0)))
    ok = worst_drop <= 1e-8
    assert report("3", ok, f"20 fits, largest per-iteration decrease {worst_drop:.1e} (<=1e-8)")


# 4 ---------------------------------------------------------------------------

def test_c4_variational_bound():
    rng = np.random.default_rng(404)
    worst_excess = -np.inf
    worst_gap = 0.0
    for _ in range(1000):
        n, p = rng.integers(1, 6, 2)
        Phi = rng.standard_normal((n, p))
        s = rng.normal(0, 2, p)
        y = rng.integers(0, 2, n)
        z = Phi @ s
        xi = rng.exponential(2.0, n)
        exact = np.exp(gsbl.bernoulli_log_likelihood(z, y))
        bound = np.exp(gsbl.jj_log_bound(z, xi, y))
        worst_excess = max(worst_excess, float(np.max(bound - exact)))
        tight = np.exp(gsbl.jj_log_bound(z, np.abs(z), y))
        worst_gap = max(worst_gap, float(np.max(np.abs(tight - exact))))
    ok = worst_excess <= 0.0 and worst_gap <= 1e-12
    assert report("4", ok, f"1000 draws, max(bound - likelihood) {worst_excess:.1e} (<=0), "
                           f"gap at xi=|Phi s| {worst_gap:.1e} (<=1e-12)")


# 5 ---------------------------------------------------------------------------

def _recovery(kind, level, seeds=range(10)):
    rates = []
    for seed in seeds:
        noise = {"snr_db": level} if kind == "linear" else {"ber": level}
        # a 10-sentinel truth: only the planted rows of S are nonzero
        cfg = SyntheticConfig(50, 10, kind, t_over_n=4, sigma_small2=0.0, seed=seed, **noise)
        d, truth = generate_synthetic(cfg)
        sel = run_snma(d, SnmaConfig(10, kind, seed=seed))
        rates.append(failure_rate(truth.sentinels, sel.sentinels))
    return np.array(rates)


C5_SECONDS = []


@pytest.mark.slow
def test_c5_recovery_linear():
    tick = time.perf_counter()
    clean = _recovery("linear", 20.0)
    noisy = _recovery("linear", 0.0)
    C5_SECONDS.append(time.perf_counter() - tick)
    zeros = int(np.sum(clean == 0))
    ok = zeros >= 9 and noisy.mean() > clean.mean()
    assert report("5 (linear)", ok,
                  f"N=50 k=10 T/N=4: 20 dB zero-failure seeds {zeros}/10 (>=9), mean failure "
                  f"20 dB {clean.mean():.3f} < 0 dB {noisy.mean():.3f}, {C5_SECONDS[-1]:.0f}s")


@pytest.mark.slow
def test_c5_recovery_logistic():
    tick = time.perf_counter()
    clean = _recovery("logistic", 0.01)
    noisy = _recovery("logistic", 0.3)
    C5_SECONDS.append(time.perf_counter() - tick)
    zeros = int(np.sum(clean == 0))
    total = sum(C5_SECONDS)
    ok = zeros >= 9 and noisy.mean() > clean.mean() and total < 600
    assert report("5 (logistic)", ok,
                  f"N=50 k=10 T/N=4: BER 0.01 zero-failure seeds {zeros}/10 (>=9), mean failure "
                  f"BER 0.01 {clean.mean():.3f} < BER 0.3 {noisy.mean():.3f}, "
                  f"criterion total {total:.0f}s (<600s)")


# 6 ---------------------------------------------------------------------------

def _budget_curve(sigma_small2, seeds=range(10), ks=range(2, 15)):
    ks = list(ks)
    curves = []
    for seed in seeds:
        cfg = SyntheticConfig(50, 10, "linear", t_over_n=4, snr_db=20.0,
                              sigma_small2=sigma_small2, seed=seed)
        d, _ = generate_synthetic(cfg)
        cut = int(0.8 * d.T)
        sels = run_snma(d.window(0, cut), SnmaConfig(ks[0], seed=seed), keep_at=ks)
        test = d.values[cut:]
        row = []
        for k in ks:
            sel = sels[k]
            out = rollout(sel.posterior_final, sel.hyper_final.lam,
                          SurveillanceRow.from_panel(test[:-1], sel.sentinels))
            row.append(rmse_paper(test[1:], out.point))
        curves.append(row)
    return ks, np.mean(curves, axis=0)


@pytest.mark.slow
def test_c6_budget_tradeoff():
    ks, curve = _budget_curve(0.0)
    at10 = curve[ks.index(10)]
    rise = float(np.max(curve[1:] / curve[:-1]))
    tail = np.abs(curve[[ks.index(k) for k in ks if k > 10]] - at10) / at10
    ok = rise <= 1.05 and float(tail.max()) <= 0.05
    assert report("6", ok, f"seed-mean rmse_paper over k=2..14: max rmse(k+1)/rmse(k) "
                           f"{rise:.3f} (<=1.05), max |rmse(k)-rmse(10)|/rmse(10) for k>10 "
                           f"{tail.max():.3f} (<=0.05)")


@pytest.mark.slow
def test_c6_informational_dense_background():
    # not a criterion line: with every non-sentinel carrying some influence the
    # curve keeps improving slowly past k=10
    ks, curve = _budget_curve(0.1, seeds=range(5))
    ratio = curve / curve[ks.index(10)]
    line = "[INFO] criterion 6 with sigma_small2=0.1: rmse(k)/rmse(10) = " + \
           " ".join(f"{k}:{r:.3f}" for k, r in zip(ks, ratio))
    RESULTS.append(line)
    print(line)


# 7 ---------------------------------------------------------------------------

def test_c7_predictive_approximation():
    rng = np.random.default_rng(707)
    a = rng.uniform(-6.0, 6.0, 500)
    v = 10.0 ** rng.uniform(-3.0, 2.0, 500)
    worst = 0.0
    for ai, vi in zip(a, v):
        z = ai + np.sqrt(vi) * rng.standard_normal(100_000)
        worst = max(worst, abs(float(moderated_sigmoid(ai, vi)) - float(expit(z).mean())))
    ok = worst <= 0.02
    assert report("7", ok, f"500 (a, v) pairs, max |closed form - MC(1e5)| {worst:.4f} (<=0.02)")


# 8 ---------------------------------------------------------------------------

def _projective_iteration(N, T, rng):
    lp = LagPair(rng.standard_normal((T, N)), rng.standard_normal((T, N)), np.ones(N, dtype=int))
    prior = gsbl.GroupPrior(rng.uniform(0.5, 2.0, N), lp.group_sizes)
    hyper = gsbl.LinearHyper(1.0)
    tick = time.perf_counter()
    post = gsbl.linear_posterior(lp, prior, hyper)
    gsbl.update_gamma(post, lp.group_sizes)
    gsbl.update_lambda(lp, post)
    return time.perf_counter() - tick


def _dense_iteration(N, T, rng):
    X, Y = rng.standard_normal((2, T, N))
    sizes = np.ones(N, dtype=int)
    gamma = rng.uniform(0.5, 2.0, N)
    tick = time.perf_counter()
    mu, Sig = dense.linear_posterior(X, Y, gamma, sizes, 1.0)
    dense.gamma_update(mu, Sig, sizes, N)
    dense.lambda_update(X, Y, mu, Sig)
    return time.perf_counter() - tick


def test_c8_scaling():
    rng = np.random.default_rng(808)
    t100 = min(_projective_iteration(100, 200, rng) for _ in range(7))
    t200 = min(_projective_iteration(200, 200, rng) for _ in range(7))
    growth = t200 / t100
    sizes = np.array([12, 16, 20, 24, 28])
    dense_t = np.array([min(_dense_iteration(int(n), int(n), rng) for _ in range(2)) for n in sizes])
    exponent = float(np.polyfit(np.log(sizes), np.log(dense_t), 1)[0])
    # dense N^2 x N^2 covariance alone, in bytes, at N = 200
    dense_bytes = 8.0 * 200 ** 4
    ram = os.sysconf("SC_PAGE_SIZE") * os.sysconf("SC_PHYS_PAGES")
    # size at which one dense iteration would exceed the 2 s budget
    n_budget = float(sizes[-1] * (2.0 / dense_t[-1]) ** (1.0 / exponent))
    ok = (t200 < 2.0 and growth <= 10.0 and exponent >= 4.0
          and dense_bytes > ram and n_budget < 100)
    assert report("8", ok,
                  f"projective iteration N=200,T=200 {t200 * 1e3:.1f} ms (<2 s), growth "
                  f"N=100->200 x{growth:.1f} (<=10); dense measured exponent {exponent:.1f} "
                  f"(>=4), dense covariance at N=200 needs {dense_bytes / 1e9:.1f} GB vs "
                  f"{ram / 1e9:.1f} GB RAM, dense exceeds 2 s/iteration at N~{n_budget:.0f}")


# 9 ---------------------------------------------------------------------------

def test_c9_noise_free_exactness():
    worst = worst_rel = 0.0
    for seed in range(5):
        cfg = SyntheticConfig(50, 10, "linear", t_over_n=4, sigma_small2=0.0, seed=seed)
        d, truth = generate_synthetic(cfg)
        cut = int(0.8 * d.T)
        sel = run_snma(d.window(0, cut), SnmaConfig(10, seed=seed))
        test = d.values[cut:]
        out = rollout(sel.posterior_final, sel.hyper_final.lam,
                      SurveillanceRow.from_panel(test[:-1], sel.sentinels))
        err = rmse_paper(test[1:], out.point)
        # the decaying noise-free signal is small, so also compare against predicting zero
        baseline = rmse_paper(test[1:], np.zeros_like(test[1:]))
        worst = max(worst, err)
        worst_rel = max(worst_rel, err / baseline)
    ok = worst < 1e-6 and worst_rel < 1e-6
    assert report("9", ok, f"5 seeds N=50 k=10, max rollout rmse_paper {worst:.1e} (<1e-6), "
                           f"relative to zero predictor {worst_rel:.1e} (<1e-6)")


# 10 --------------------------------------------------------------------------

def _pipeline(root):
    root.mkdir()
    (root / "gen.json").write_text(json.dumps(
        {"n_components": 20, "n_sentinels": 4, "T": 120, "snr_db": 15}))
    (root / "sel.json").write_text(json.dumps(
        {"dynamics": "g/dynamics.csv", "k": 4, "train_window": [0, 100],
         "fit": {"init": "random"}}))
    (root / "pe.json").write_text(json.dumps(
        {"model": "s/model.json", "dynamics": "g/dynamics.csv", "window": [100, 120]}))
    for cmd, cfg, out in (("generate", "gen.json", "g"), ("select", "sel.json", "s"),
                          ("predict-eval", "pe.json", "p")):
        subprocess.run([sys.executable, "-m", "sentinelnet", cmd, "--config", str(root / cfg),
                        "--seed", "12345", "--out", str(root / out)], check=True)
    return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*"))
            if p.is_file() and p.name != "timing.json"}


def test_c10_reproducibility(tmp_path):
    a = _pipeline(tmp_path / "a")
    b = _pipeline(tmp_path / "b")
    same = a.keys() == b.keys() and all(a[k] == b[k] for k in a)
    diff = [str(k) for k in a if a[k] != b.get(k)]
    ok = same and len(a) >= 9
    assert report("10", ok, f"{len(a)} artifacts from two generate/select/predict-eval runs, "
                            f"byte-identical: {same}" + (f" (differs: {diff})" if diff else ""))


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
