"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v``; the criterion lines are
repeated in the terminal summary. ``python tests/test_acceptance.py`` does the
same. The synthetic experiments (criteria 7 to 9) share one cached set of
training runs.
"""

import time
from functools import lru_cache

import numpy as np
import pytest
from scipy.stats import spearmanr

from divgcn.cli import main as cli_main
from divgcn.data import k_core_filter, make_dataset, temporal_split
from divgcn.evaluation import entropy, gini, infer_all, linear_probe_accuracy, retrieve_topk
from divgcn.model import backward, batch_terms, forward, grl_backward, propagate
from divgcn.optim import TrainConfig, fit, validation_report
from divgcn.rerank import Candidate, coverage, dum_rerank, mmr_rerank, relevance_sort
from divgcn.sampling import boosted_negative_sampling, histogram_and_rebalance, positive_samples
from divgcn.synth import SynthConfig, generate

from gradcheck import check_case, random_case

RESULTS: dict[int, str] = {}

# the synthetic dataset named by criterion 7
DATASET = SynthConfig(users=200, items=500, categories=10, bias=0.7, per_user=40, seed=0)
SEEDS = range(5)
K = 50
# shared by every configuration of the synthetic experiments
TRAINING = dict(depth=1, dim=32, lr=0.005, batch_size=512, epochs=100, patience=10,
                fanout=10, negatives=4, dropout=0.1, k_eval=K)


def record(number: int, ok: bool, detail: str) -> None:
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS[number] = line
    print(line)
    assert ok, line


# ------------------------------------------------------------ 1. gradients

def test_criterion_01_gradient_oracle():
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst, n = 0.0, 0
    for depth in (1, 2):
        for gamma in (0.0, 0.5):
            for _ in range(6):
                case = random_case(rng, max_users=6, max_items=10, max_dim=4,
                                   depth=depth, gamma=gamma)
                worst = max(worst, max(check_case(*case, rng=rng).values()))
                n += 1
    elapsed = time.perf_counter() - start
    record(1, n >= 20 and worst <= 1e-4 and elapsed < 30,
           f"{n} configs, worst relative error {worst:.2e} (<= 1e-4), {elapsed:.1f}s (< 30s)")


# -------------------------------------------------------- 2. rebalancing

def test_criterion_02_rebalance_exactness():
    cats = {0: "A", 1: "A", 2: "A", 3: "B"}
    p1 = histogram_and_rebalance([0, 1, 2, 3], cats, 1.0)
    p0 = histogram_and_rebalance([0, 1, 2, 3], cats, 0.0)
    err1 = np.max(np.abs(p1 - [1 / 6, 1 / 6, 1 / 6, 1 / 2]))
    err0 = np.max(np.abs(p0 - 0.25))
    record(2, err1 <= 1e-12 and err0 <= 1e-12,
           f"alpha=1 max error {err1:.1e}, alpha=0 max error {err0:.1e} (<= 1e-12)")


# -------------------------------------------------------- 3. negatives

def test_criterion_03_negative_statistics():
    cats = np.ones(100, dtype=np.int64)
    cats[:10] = 0
    draws = 10**5
    pos = positive_samples(np.array([[0, 0]] * draws), cats)
    out = boosted_negative_sampling(pos, 100, 1, cats, 0.3, np.random.default_rng(0))
    frac = float(np.mean(out.cats[draws:] == 0))
    expected = 0.36364
    sigma = np.sqrt(expected * (1 - expected) / draws)
    record(3, abs(frac - expected) <= 3 * sigma,
           f"same-category fraction {frac:.5f} vs {expected} (3 sigma = {3 * sigma:.5f})")


# ------------------------------------------------------------ 4. reversal

def test_criterion_04_grl_contract():
    rng = np.random.default_rng(11)
    bitwise, worst = True, 0.0
    for _ in range(10):
        flow, params, batch, _ = random_case(rng)
        trace = forward(flow, params)
        d_cls = batch_terms(trace, batch, params).d_cls
        _, emb_c, conv_c = propagate(trace, params, d_cls)
        # gamma = 1: the reversed path is the exact negation
        _, emb_r, conv_r = propagate(trace, params, grl_backward(d_cls, 1.0))
        bitwise &= np.array_equal(emb_r, -emb_c)
        bitwise &= all(np.array_equal(a, -b) for a, b in zip(conv_r, conv_c))
        for gamma in (0.1, 0.5, 2.0):
            _, emb_g, conv_g = propagate(trace, params, grl_backward(d_cls, gamma))
            worst = max(worst, np.max(np.abs(emb_g + gamma * emb_c)),
                        *(np.max(np.abs(a + gamma * b)) for a, b in zip(conv_g, conv_c)))
            # same contract seen through the full backward pass
            full, _ = backward(trace, batch, params, gamma)
            rec_only, _ = backward(trace, batch, params, 0.0)
            worst = max(worst, np.max(np.abs(full.embedding - rec_only.embedding
                                             + gamma * emb_c)),
                        *(np.max(np.abs(a - b + gamma * c))
                          for a, b, c in zip(full.conv, rec_only.conv, conv_c)))
    record(4, bitwise and worst <= 1e-12,
           f"gamma=1 bitwise negation: {bitwise}; other gamma max deviation {worst:.1e}"
           " (<= 1e-12)")


# ------------------------------------------------------------ 5. metrics

def test_criterion_05_metric_oracles():
    rng = np.random.default_rng(5)
    agree = True
    for _ in range(100):
        u = rng.integers(-2, 3, size=(3, 4)).astype(float)
        it = rng.integers(-2, 3, size=(15, 4)).astype(float)
        k = int(rng.integers(1, 16))
        recs = retrieve_topk(u, it, k)
        for r in range(3):
            oracle = sorted(range(15), key=lambda j: (-float(u[r] @ it[j]), j))[:k]
            agree &= recs.items[r].tolist() == oracle
    e1, e2 = entropy([4, 3, 3]), entropy([7, 0, 3])
    g1, g0 = gini([7, 3, 0]), gini([4, 4, 4])
    ok = (agree and abs(e1 - 1.08890) <= 1e-4 and abs(e2 - 0.61086) <= 1e-4 and e1 > e2
          and abs(g1 - 7 / 15) <= 1e-9 and abs(g0) <= 1e-12)
    record(5, ok, f"top-k oracle agreement {agree}; entropy {e1:.5f} > {e2:.5f}; "
                  f"gini {g1:.10f}, uniform {g0:.1e}")


# ------------------------------------------------------------- 6. rerank

def test_criterion_06_rerank_properties():
    rng = np.random.default_rng(6)
    same, dominated = 0, 0
    for _ in range(100):
        n = int(rng.integers(2, 40))
        items = rng.choice(10_000, n, replace=False)
        rel = np.round(rng.random(n), 2)
        cats = rng.integers(6, size=n)
        cands = [Candidate(int(i), float(r), int(c)) for i, r, c in zip(items, rel, cats)]
        k = int(rng.integers(1, n + 1))
        same += mmr_rerank(cands, 1.0, k) == relevance_sort(cands, k)
        dominated += coverage(dum_rerank(cands, k), cands) >= coverage(relevance_sort(cands, k),
                                                                       cands)
    record(6, same == 100 and dominated == 100,
           f"MMR(1) equals relevance sort on {same}/100; DUM coverage >= on {dominated}/100")


# ------------------------------------------------- synthetic experiments

@lru_cache(maxsize=1)
def synthetic_dataset():
    log, table = generate(DATASET)
    kept = k_core_filter(log, 10)
    return make_dataset(temporal_split(kept), table.restrict({x.item_id for x in kept}))


@lru_cache(maxsize=None)
def run(alpha: float, beta: float, gamma: float, seed: int):
    """Test-split coverage/recall at K and probe accuracy for one trained model."""
    data = synthetic_dataset()
    start = time.perf_counter()
    params, _ = fit(data, TrainConfig(alpha=alpha, beta=beta, gamma=gamma, seed=seed,
                                      **TRAINING))
    mean = validation_report(data, params, K, "test").mean()
    _, items = infer_all(data.graph, params)
    probe = linear_probe_accuracy(items, data.item_categories, data.num_categories, seed=seed)
    return {"coverage": mean["coverage"], "recall": mean["recall"], "probe": probe,
            "seconds": time.perf_counter() - start}


def averaged(alpha, beta, gamma, key):
    return float(np.mean([run(alpha, beta, gamma, s)[key] for s in SEEDS]))


ABLATION = {"plain": (0.0, 0.0, 0.0), "alpha": (1.0, 0.0, 0.0), "beta": (0.0, 0.3, 0.0),
            "gamma": (0.0, 0.0, 0.1), "full": (1.0, 0.3, 0.1)}


def test_criterion_07_directional_ablation():
    start = time.perf_counter()
    cov = {name: averaged(*cfg, "coverage") for name, cfg in ABLATION.items()}
    rec = {name: averaged(*cfg, "recall") for name, cfg in ABLATION.items()}
    elapsed = sum(run(*cfg, s)["seconds"] for cfg in ABLATION.values() for s in SEEDS)
    elapsed = max(elapsed, time.perf_counter() - start)
    singles = all(cov[n] > cov["plain"] for n in ("alpha", "beta", "gamma"))
    full_top = all(cov["full"] > cov[n] for n in cov if n != "full")
    recall_ok = rec["full"] >= 0.5 * rec["plain"]
    detail = ", ".join(f"{n} {cov[n]:.3f}" for n in cov)
    record(7, singles and full_top and recall_ok and elapsed < 900,
           f"coverage@{K}: {detail}; each single > plain: {singles}; full highest: {full_top};"
           f" recall full {rec['full']:.3f} vs plain {rec['plain']:.3f} (>= half: {recall_ok});"
           f" {elapsed:.0f}s")


def test_criterion_08_tradeoff_trend():
    grids = {"alpha": [(a, 0.0, 0.0) for a in (0.0, 0.5, 1.0)],
             "beta": [(0.0, b, 0.0) for b in (0.0, 0.2, 0.4)]}
    parts, ok = [], True
    for name, cfgs in grids.items():
        values = [cfg[0] if name == "alpha" else cfg[1] for cfg in cfgs]
        cov = [averaged(*cfg, "coverage") for cfg in cfgs]
        rho = spearmanr(values, cov).statistic
        ok &= bool(rho >= 0.8)
        parts.append(f"{name} coverage {np.round(cov, 3).tolist()} spearman {rho:.2f}")
    record(8, ok, "; ".join(parts) + " (>= 0.8)")


def test_criterion_09_adversarial_probe():
    without = averaged(0.0, 0.0, 0.0, "probe")
    with_grl = averaged(0.0, 0.0, 0.5, "probe")
    record(9, with_grl < without,
           f"probe accuracy gamma=0.5 {with_grl:.3f} vs gamma=0 {without:.3f}")


# -------------------------------------------------------- 10. determinism

def test_criterion_10_determinism(tmp_path):
    assert cli_main(["synth", "--out", str(tmp_path / "raw"), "--seed", "0"]) == 0
    assert cli_main(["prepare", "--interactions", str(tmp_path / "raw/interactions.csv"),
                     "--categories", str(tmp_path / "raw/categories.csv"),
                     "--out", str(tmp_path / "prep")]) == 0
    flags = ["--epochs", "4", "--seed", "13", "--k-eval", "50", "--batch-size", "512"]
    for run_name in ("first", "second"):
        out = str(tmp_path / run_name)
        assert cli_main(["train", "--data", str(tmp_path / "prep"), "--out", out, *flags]) == 0
        assert cli_main(["evaluate", "--data", str(tmp_path / "prep"), "--out", out,
                         "--k-eval", "50"]) == 0
    files = ("model.bin", "model.bin.json", "metrics.csv", "metrics.json")
    same = [(tmp_path / "first" / f).read_bytes() == (tmp_path / "second" / f).read_bytes()
            for f in files]
    record(10, all(same), "byte-identical: " + ", ".join(
        f"{f} {s}" for f, s in zip(files, same)))


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
