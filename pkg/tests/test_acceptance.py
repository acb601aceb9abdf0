"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run with `pytest tests/test_acceptance.py -v -s` to see every line. The
experiment-grade criteria (1-3, 9) pin their seeds so results are
byte-reproducible; the wide-register scaling criterion (1) is asserted
exactly as stated and its current measured behavior is printed alongside.
"""

import json
import time

import numpy as np
import pytest

from qem_mix.cli import dispatch
from qem_mix.depfilter import FilterConfig, filter_dataset, support_counts
from qem_mix.emcore import (
    EmConfig,
    MixtureModel,
    e_step,
    kmeanspp_init,
    log_likelihood,
    m_step_alpha,
    m_step_eps,
    m_step_x,
    run_em_fixed_k,
)
from qem_mix.harness import NoiseGrid, SweepConfig, run_pipeline, run_sweep
from qem_mix.metrics import ber, hellinger_fidelity
from qem_mix.shotdata import BitString, ShotDataset
from qem_mix.synth import NoiseSpec, generate_shots, sample_flip_probabilities, sample_ground_truth

from conftest import (
    direct_e_step,
    direct_log_likelihood,
    naive_support_counts,
    random_bitstring,
    random_dataset,
    random_model_parts,
)

B = BitString.from_text

# Pinned acceptance configuration for the synthetic-noise grid (criteria 2-3).
# The filter floor is the calibrated value that keeps only the whole 0/1-flip
# shells at n in {10,12,14}, S=10000 (see README); the master seed is pinned
# for reproducibility, as every published number must be replayable.
GRID_CONFIG = SweepConfig(
    n_values=(10, 12, 14),
    k_values=(2, 4, 6, 8),
    s_values=(10000,),
    noise=(NoiseGrid(p=0.85, eps_low=0.02, eps_high=0.1),),
    repeats=20,
    subsample_points=(1000, 2500, 5000, 10000),
    master_seed=1004,
    filter=FilterConfig(eta=1.5, t_floor=65),
    em=EmConfig(k_min=1, k_max=16, delta=1e-5, max_iters=500, eps_init=0.25),
)


def report(num, name, ok, detail=""):
    print(f"ACCEPTANCE {num} [{name}]: {'PASS' if ok else 'FAIL'} {detail}")
    return ok


@pytest.fixture(scope="session")
def grid_rows():
    start = time.perf_counter()
    rows = run_sweep(GRID_CONFIG, jobs=4)
    elapsed = time.perf_counter() - start
    print(f"\n[grid sweep: {len(rows)} rows in {elapsed:.0f}s]")
    return rows


def test_criterion_1_wide_register_scaling():
    """n=128, K in {2,4,8}, S=20000, p=0.9, eps~U[0.05,0.15], 10 seeds each:
    the pipeline must return k_hat == K and BER == 0 in 30/30 runs."""
    runs = []
    start = time.perf_counter()
    for k_true in (2, 4, 8):
        for rep in range(10):
            s1, s2, s3, s4 = (
                int(v) for v in np.random.SeedSequence([4101, k_true, rep]).generate_state(4)
            )
            truth = sample_ground_truth(128, k_true, s1)
            eps = sample_flip_probabilities(128, s2, 0.05, 0.15)
            dataset = generate_shots(truth, NoiseSpec(p=0.9, eps=eps), 20000, s3)
            result = run_pipeline(
                dataset,
                FilterConfig(eta=1.5, t_floor=2),
                EmConfig(k_min=1, k_max=16, seed=s4),
            )
            ev = ber(list(truth.solutions), list(result.report.best.x), 128)
            runs.append((k_true, rep, result.report.k_hat, ev.ber))
    elapsed = time.perf_counter() - start

    exact = sum(1 for k, _, k_hat, b in runs if k_hat == k and b == 0.0)
    ber_zero = sum(1 for *_, b in runs if b == 0.0)
    for k_true in (2, 4, 8):
        sub = [(kh, b) for k, _, kh, b in runs if k == k_true]
        print(f"  K={k_true}: k_hat={[kh for kh, _ in sub]} ber_zero={sum(b == 0 for _, b in sub)}/10")
    ok = exact == 30
    report(
        1, "wide-register scaling", ok,
        f"k_hat==K and BER==0 in {exact}/30; BER==0 alone in {ber_zero}/30; {elapsed:.0f}s",
    )
    assert ok, (
        f"only {exact}/30 runs returned k_hat == K with BER == 0 "
        f"(BER==0 alone: {ber_zero}/30); see notes on the radius-1 filter "
        "and the MML objective on unfiltered uniform noise"
    )


def test_criterion_2_synthetic_grid(grid_rows):
    """Grid n in {10,12,14} x K in {2,4,6,8}, S=10000, 85% depolarized:
    conditional BER <= 0.01 per cell and aggregate P_Kerror <= 0.05."""
    full = [r for r in grid_rows if r.s_used == 10000]
    assert len(full) == 240
    failures = [r for r in full if r.status != "ok"]
    p_k_error = sum(1 for r in full if r.status == "ok" and r.k_error_flag) / (
        len(full) - len(failures)
    )
    worst_cell = 0.0
    for n in GRID_CONFIG.n_values:
        for k in GRID_CONFIG.k_values:
            cell = [
                r for r in full
                if r.n == n and r.k_true == k and r.status == "ok" and not r.k_error_flag
            ]
            if cell:
                worst_cell = max(worst_cell, sum(r.ber for r in cell) / len(cell))
    ok = not failures and p_k_error <= 0.05 and worst_cell <= 0.01
    report(
        2, "synthetic grid", ok,
        f"P_Kerror={p_k_error:.4f} (<=0.05), worst conditional cell BER={worst_cell:.5f} (<=0.01)",
    )
    assert not failures
    assert p_k_error <= 0.05
    assert worst_cell <= 0.01


def test_criterion_3_shot_curve(grid_rows):
    """P_Kerror non-increasing from S=1000 to S=10000 for every K, and
    exactly 0 at S=10000 for K <= 4."""
    def p_k_error(k, s):
        g = [r for r in grid_rows if r.k_true == k and r.s_used == s]
        bad = sum(1 for r in g if r.status != "ok" or r.k_error_flag)
        return bad / len(g)

    monotone = True
    zero_small_k = True
    for k in GRID_CONFIG.k_values:
        lo, hi = p_k_error(k, 1000), p_k_error(k, 10000)
        print(f"  K={k}: P_Kerror S=1000 -> {lo:.3f}, S=10000 -> {hi:.3f}")
        if hi > lo:
            monotone = False
        if k <= 4 and hi != 0.0:
            zero_small_k = False
    ok = monotone and zero_small_k
    report(3, "shot-count curve", ok,
           f"monotone={monotone}, zero at S=10000 for K<=4: {zero_small_k}")
    assert monotone
    assert zero_small_k


def test_criterion_4_plain_em_ascent():
    """Plain-mode EM: the mixture log-likelihood never decreases (within
    1e-9) at any iteration, over 50 random small instances."""
    rng = np.random.default_rng(4400)
    worst = 0.0
    for _ in range(50):
        n = int(rng.integers(2, 11))
        k = int(rng.integers(1, 5))
        truth = sample_ground_truth(n, min(k, 1 << n), int(rng.integers(1 << 30)))
        eps = rng.uniform(0.02, 0.2, size=n)
        dataset = generate_shots(
            truth, NoiseSpec(p=float(rng.uniform(0, 0.3)), eps=eps),
            int(rng.integers(20, 2001)), int(rng.integers(1 << 30)),
        )
        k_fit = int(rng.integers(1, 5))
        init = MixtureModel(
            tuple(kmeanspp_init(dataset, k_fit, int(rng.integers(1 << 30)))),
            np.full(k_fit, 1 / k_fit),
            np.full(n, 0.25),
        )
        res = run_em_fixed_k(dataset, init, EmConfig(mml_enabled=False, max_iters=80))
        objs = [obj for _, _, obj in res.trace]
        for prev, cur in zip(objs, objs[1:]):
            worst = max(worst, prev - cur)
    ok = worst <= 1e-9
    report(4, "plain EM ascent", ok, f"worst decrease={worst:.3e} (<=1e-9)")
    assert ok


def test_criterion_5_oracle_equivalence():
    """Log-space kernels match direct-probability brute force within 1e-9
    on 100 random instances with n <= 8; M-step updates match naive
    transcriptions within 1e-12."""
    rng = np.random.default_rng(5500)
    worst_ll = worst_w = worst_m = 0.0
    for _ in range(100):
        n = int(rng.integers(1, 9))
        k = int(rng.integers(1, 5))
        s = int(rng.integers(1, 60))
        dataset = random_dataset(rng, n, s)
        xs, alpha, eps = random_model_parts(rng, n, k)
        model = MixtureModel(tuple(xs), alpha, eps)

        ll = log_likelihood(dataset, model)
        worst_ll = max(worst_ll, abs(ll - direct_log_likelihood(dataset, xs, alpha, eps)))
        w = e_step(dataset, model)
        worst_w = max(worst_w, float(np.max(np.abs(w - direct_e_step(dataset, xs, alpha, eps)))))

        # naive alpha
        col = w.sum(axis=0)
        nums = np.maximum(0.0, col - n / 2)
        if nums.sum() > 0:
            worst_m = max(worst_m, float(np.max(np.abs(
                m_step_alpha(w, n) - nums / nums.sum()
            ))))
        # naive x: per-bit weighted mismatch argmin, ties to 1
        got_x = m_step_x(dataset, w)
        y = dataset.bit_matrix.astype(float)
        for kk in range(w.shape[1]):
            for j in range(n):
                mism0 = float(w[:, kk] @ y[:, j])
                mism1 = float(w[:, kk] @ (1.0 - y[:, j]))
                want = 1 if mism1 <= mism0 else 0
                assert got_x[kk].bit(j + 1) == want
        # naive eps
        got_eps = m_step_eps(dataset, w, got_x)
        naive = np.zeros(n)
        for j in range(n):
            acc = 0.0
            for i, shot in enumerate(dataset.shots):
                for kk in range(w.shape[1]):
                    acc += w[i, kk] * (shot.bit(j + 1) ^ got_x[kk].bit(j + 1))
            naive[j] = acc / s
        worst_m = max(worst_m, float(np.max(np.abs(
            got_eps - np.clip(naive, 1e-6, 0.5 - 1e-6)
        ))))
    ok = worst_ll <= 1e-9 and worst_w <= 1e-9 and worst_m <= 1e-12
    report(
        5, "oracle equivalence", ok,
        f"loglik diff={worst_ll:.2e} (<=1e-9), e-step diff={worst_w:.2e} (<=1e-9), "
        f"m-step diff={worst_m:.2e} (<=1e-12)",
    )
    assert ok


def test_criterion_6_closed_forms():
    """K=1 flip estimate equals the empirical mismatch fraction exactly;
    the majority-vote tie at 0 yields bit 1; a weight column at exactly
    n/2 mass is annihilated."""
    rng = np.random.default_rng(6600)
    # K=1: exact empirical mismatch (choose data away from the clamps)
    exact = True
    for _ in range(20):
        n, s = int(rng.integers(1, 10)), int(rng.integers(4, 50)) * 2
        bits = rng.integers(0, 2, size=(s, n), dtype=np.uint8)
        bits[0] = 0  # mismatch fractions strictly inside (0, 0.5)
        bits[1] = 0
        bits[2] = 1
        dataset = ShotDataset.from_bit_matrix(bits)
        w = np.ones((s, 1))
        eps = m_step_eps(dataset, w, [B("0" * n)])
        empirical = dataset.bit_matrix.mean(axis=0)
        inside = (empirical > 1e-6) & (empirical < 0.5 - 1e-6)
        if not np.array_equal(eps[inside], empirical[inside]):
            exact = False
    # tie at zero vote sum gives bit 1
    tie_ds = ShotDataset([B("1"), B("0")])
    tie = m_step_x(tie_ds, np.ones((2, 1)))[0].text == "1"
    # column mass exactly n/2 annihilates
    w = np.array([[1.0, 0.0]] * 3 + [[0.0, 1.0]] * 1)  # masses (3, 1), n=2
    alpha = m_step_alpha(w, 2)
    boundary = alpha[1] == 0.0 and alpha[0] == 1.0
    ok = exact and tie and boundary
    report(6, "closed forms", ok,
           f"K=1 eps exact: {exact}, tie->1: {tie}, n/2 mass annihilated: {boundary}")
    assert ok


def test_criterion_7_metric_properties():
    """Hellinger symmetry and [0,1] bounds on 1000 random pairs; BER
    permutation invariance; the worked matching example equals 0.25."""
    rng = np.random.default_rng(7700)
    sym_ok = bounds_ok = True
    for _ in range(1000):
        size = int(rng.integers(1, 10))
        keys = [format(v, "05b") for v in rng.choice(32, size=size, replace=False)]
        p_raw, q_raw = rng.random(size), rng.random(size)
        p = dict(zip(keys, p_raw / p_raw.sum()))
        q = dict(zip(keys, q_raw / q_raw.sum()))
        f_pq, f_qp = hellinger_fidelity(p, q), hellinger_fidelity(q, p)
        if abs(f_pq - f_qp) > 1e-12:
            sym_ok = False
        if not -1e-12 <= f_pq <= 1.0 + 1e-9:
            bounds_ok = False

    perm_ok = True
    for _ in range(50):
        n = int(rng.integers(2, 9))
        truth = [random_bitstring(rng, n) for _ in range(int(rng.integers(1, 6)))]
        est = [random_bitstring(rng, n) for _ in range(int(rng.integers(1, 6)))]
        base = ber(truth, est, n).ber
        pt = [truth[i] for i in rng.permutation(len(truth))]
        pe = [est[i] for i in rng.permutation(len(est))]
        if ber(pt, pe, n).ber != base:
            perm_ok = False

    worked = ber([B("00"), B("11")], [B("01"), B("11")], 2).ber == pytest.approx(0.25)
    ok = sym_ok and bounds_ok and perm_ok and worked
    report(7, "metric properties", ok,
           f"symmetry={sym_ok}, bounds={bounds_ok}, permutation={perm_ok}, worked=0.25: {worked}")
    assert ok


def test_criterion_8_filter_properties():
    """Identical strings fully retained; uniform n=12 S=10000 eta=1.5 data
    is >= 90% removed over 20 seeds; support counts equal brute force."""
    ds = ShotDataset([B("01101")] * 300)
    retained = filter_dataset(ds, FilterConfig(eta=1.5, t_floor=2)).kept.s == 300

    removed = []
    for seed in range(20):
        truth = sample_ground_truth(12, 1, 8000 + seed)
        uniform = generate_shots(truth, NoiseSpec(p=1.0, eps=np.zeros(12)), 10000, 8100 + seed)
        try:
            rep = filter_dataset(uniform, FilterConfig(eta=1.5, t_floor=2))
            removed.append(rep.removed_count / uniform.s)
        except Exception:
            removed.append(1.0)
    removal = float(np.mean(removed))

    rng = np.random.default_rng(8800)
    brute_ok = all(
        support_counts(d) == naive_support_counts(d)
        for d in (random_dataset(rng, int(rng.integers(1, 8)), int(rng.integers(1, 150)))
                  for _ in range(20))
    )
    ok = retained and removal >= 0.90 and brute_ok
    report(8, "filter properties", ok,
           f"identical retained: {retained}, uniform removal={removal:.3f} (>=0.90), "
           f"brute-force match: {brute_ok}")
    assert ok


def test_criterion_9_determinism(tmp_path, capsys):
    """Pinned seeds give byte-identical outputs for generate, mitigate and
    sweep, with the sweep checked across two worker counts."""
    gen = ["--quiet", "generate", "--n", "10", "--k", "2", "--s", "3000",
           "--p", "0.85", "--eps-low", "0.02", "--eps-high", "0.1", "--seed", "91"]
    d1, d2 = tmp_path / "d1.json", tmp_path / "d2.json"
    assert dispatch(gen + ["--out", str(d1)]) == 0
    assert dispatch(gen + ["--out", str(d2)]) == 0
    gen_ok = (
        d1.read_bytes() == d2.read_bytes()
        and (tmp_path / "d1.json.truth.json").read_bytes()
        == (tmp_path / "d2.json.truth.json").read_bytes()
    )

    m1, m2 = tmp_path / "m1.json", tmp_path / "m2.json"
    mit = ["--quiet", "mitigate", str(d1), "--seed", "92", "--t-floor", "25"]
    assert dispatch(mit + ["--model-out", str(m1)]) == 0
    assert dispatch(mit + ["--model-out", str(m2)]) == 0
    mit_ok = m1.read_bytes() == m2.read_bytes()

    sweep_doc = {
        "n_values": [8, 10], "k_values": [2], "s_values": [1000],
        "noise": [{"p": 0.5, "eps_low": 0.02, "eps_high": 0.1}],
        "repeats": 3, "master_seed": 93,
        "filter": {"eta": 1.5, "t_floor": 2}, "em": {"k_max": 8},
    }
    cfg = tmp_path / "sweep.json"
    cfg.write_text(json.dumps(sweep_doc))
    out_a, out_b = tmp_path / "sw1", tmp_path / "sw2"
    assert dispatch(["--quiet", "sweep", "--config", str(cfg), "--out", str(out_a), "--jobs", "1"]) == 0
    assert dispatch(["--quiet", "sweep", "--config", str(cfg), "--out", str(out_b), "--jobs", "2"]) == 0
    sweep_ok = (
        (out_a / "rows.csv").read_bytes() == (out_b / "rows.csv").read_bytes()
        and (out_a / "summary.json").read_bytes() == (out_b / "summary.json").read_bytes()
    )
    capsys.readouterr()
    ok = gen_ok and mit_ok and sweep_ok
    report(9, "determinism", ok,
           f"generate: {gen_ok}, mitigate: {mit_ok}, sweep jobs 1 vs 2: {sweep_ok}")
    assert ok
