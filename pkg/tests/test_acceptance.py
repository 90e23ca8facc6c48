"""Acceptance criteria, one test per criterion.

Run with `pytest -v tests/test_acceptance.py` to get one pass/fail line
per criterion; each test also prints its measured numbers (visible with
`-s` or on failure). Criterion 10 is informational wall-clock and only
runs when RUN_SOFT_BENCH=1 is set; it never gates.
"""

import json
import os
import time

import numpy as np
import pytest

from sparseprefill.attn_core import (
    HeadGeometry,
    default_scale,
    dense_causal_attention,
)
from sparseprefill.cli import main as cli_main
from sparseprefill.criticality import (
    estimate_criticality,
    locality_matrix,
    locality_summary,
    segment_representatives,
)
from sparseprefill.flops import count_flops
from sparseprefill.oracles import (
    criticality_transcription_oracle,
    gather_then_dense_oracle,
)
from sparseprefill.partition import num_segments
from sparseprefill.pipeline import gen_synthetic_inputs, gen_synthetic_model, prefill
from sparseprefill.pruned_attn import PrunedAttnConfig, pruned_attention, select_blocks
from sparseprefill.rng import RngSpec, SplitMix64
from sparseprefill.synth import drifting_queries, iid_matrix, needle_verdict

REFERENCE_DEFAULTS = PrunedAttnConfig()  # segment 512, block 32, budget 1024, alpha 0.25


def announce(criterion: int, ok: bool, detail: str) -> None:
    print(f"\nCRITERION {criterion:02d} {'PASS' if ok else 'FAIL'} - {detail}")
    assert ok, detail


def test_criterion_01_full_budget_equivalence():
    geom = HeadGeometry(n_heads=4, head_dim=16)  # model_dim 64
    cfg = PrunedAttnConfig(budget=1024)  # budget == n
    rng = RngSpec(1)
    model = gen_synthetic_model(geom, 4, rng)
    x0 = gen_synthetic_inputs(1024, geom, rng)

    t0 = time.perf_counter()
    dense = prefill(model, x0, cfg, mode="dense", keep_layer_outputs=True)
    pruned = prefill(
        model, x0, cfg, mode="pruned", allow_fallback=False, keep_layer_outputs=True
    )
    elapsed = time.perf_counter() - t0

    worst = max(
        float(np.abs(a.astype(np.float64) - b.astype(np.float64)).max())
        for a, b in zip(dense.layer_hidden, pruned.layer_hidden)
    )
    # The engine's own policy path must agree too (it falls back to dense).
    policy = prefill(model, x0, cfg, mode="pruned", keep_layer_outputs=True)
    policy_worst = max(
        float(np.abs(a - b).max())
        for a, b in zip(dense.layer_hidden, policy.layer_hidden)
    )
    ok = worst < 1e-5 and policy_worst == 0.0 and elapsed < 10.0
    announce(
        1,
        ok,
        f"full-budget pruned vs dense: layerwise max-abs {worst:.2e} "
        f"(policy path {policy_worst:.1e}), runtime {elapsed:.2f}s",
    )


def test_criterion_02_estimator_transcription_50_seeds():
    n, d, seg, blk, alpha = 128, 8, 16, 8, 0.25
    worst = 0.0
    for seed in range(50):
        stream = SplitMix64(seed)
        q1, k1 = stream.normal_matrix(n, d), stream.normal_matrix(n, d)
        q2, k2 = stream.normal_matrix(n, d), stream.normal_matrix(n, d)

        prev = estimate_criticality(segment_representatives(q1, seg, k1, blk), None)
        prev_oracle = criticality_transcription_oracle(q1, k1, seg, blk, None, alpha)
        got = estimate_criticality(
            segment_representatives(q2, seg, k2, blk), prev, alpha=alpha
        )
        want = criticality_transcription_oracle(q2, k2, seg, blk, prev_oracle, alpha)

        for impl, oracle in ((prev.scores, prev_oracle), (got.scores, want)):
            unmasked = oracle > 0
            rel = np.abs(impl[unmasked] - oracle[unmasked]) / oracle[unmasked]
            worst = max(worst, float(rel.max()))
    ok = worst < 1e-10
    announce(2, ok, f"estimator vs line-by-line oracle, 50 seeds: max rel {worst:.2e}")


def test_criterion_03_gather_oracle_50_seeds():
    n, d = 512, 16
    cfg = PrunedAttnConfig(segment_size=64, block_size=16, budget=128)
    scale = cfg.attention_scale(d)
    worst = 0.0
    for seed in range(50):
        stream = SplitMix64(seed)
        q = stream.normal_matrix(n, d).astype(np.float32)
        k = stream.normal_matrix(n, d).astype(np.float32)
        v = stream.normal_matrix(n, d).astype(np.float32)
        reps = segment_representatives(q, cfg.segment_size, k, cfg.block_size)
        scores = estimate_criticality(reps, None, alpha=cfg.alpha)
        got, _ = pruned_attention(q, k, v, scores, cfg)
        selections = [
            select_blocks(scores.scores[j], j, cfg, n).block_indices
            for j in range(num_segments(n, cfg.segment_size))
        ]
        want = gather_then_dense_oracle(
            q, k, v, cfg.segment_size, cfg.block_size, selections, scale
        )
        worst = max(worst, float(np.abs(got - want).max()))
    ok = worst < 1e-5
    announce(3, ok, f"pruned kernel vs gather-then-dense oracle, 50 seeds: max abs {worst:.2e}")


def test_criterion_04_causality_20_trials_per_mode():
    n, d = 256, 8
    cfg = PrunedAttnConfig(segment_size=32, block_size=8, budget=64)
    dense_worst = 0.0
    pruned_worst = 0.0
    for trial in range(20):
        stream = SplitMix64(9000 + trial)
        q = stream.normal_matrix(n, d).astype(np.float32)
        k = stream.normal_matrix(n, d).astype(np.float32)
        v = stream.normal_matrix(n, d).astype(np.float32)
        t = 1 + int(stream.next_words(1)[0] % (n - 1))
        qp, kp, vp = q.copy(), k.copy(), v.copy()
        for m in (qp, kp, vp):
            m[t] += np.float32(0.5)

        base, _ = dense_causal_attention(q, k, v, default_scale(d))
        pert, _ = dense_causal_attention(qp, kp, vp, default_scale(d))
        dense_worst = max(dense_worst, float(np.abs(pert[:t] - base[:t]).max()))

        reps = segment_representatives(q, cfg.segment_size, k, cfg.block_size)
        scores = estimate_criticality(reps, None, alpha=cfg.alpha)
        base_p, _ = pruned_attention(q, k, v, scores, cfg)
        pert_p, _ = pruned_attention(qp, kp, vp, scores, cfg)
        pruned_worst = max(pruned_worst, float(np.abs(pert_p[:t] - base_p[:t]).max()))
    ok = dense_worst == 0.0 and pruned_worst == 0.0
    announce(
        4,
        ok,
        "causality over 20 trials/mode: leakage before perturbed token "
        f"dense {dense_worst}, pruned (fixed selection) {pruned_worst}",
    )


def test_criterion_05_planted_recall_9_of_9():
    found = []
    for n in (8192, 32768, 65536):
        for depth in (0.1, 0.5, 0.9):
            case = needle_verdict(
                n, 16, REFERENCE_DEFAULTS, depth, magnitude=10.0, rng=RngSpec(0)
            )
            found.append(case.found)
    ok = all(found)
    announce(5, ok, f"planted-block recall grid: {sum(found)}/9 cells selected the plant")


def test_criterion_06_locality_margins():
    n, d, k, stride = 4096, 64, 512, 128
    stream = SplitMix64(0)
    q = drifting_queries(n, d, stream)
    keys = iid_matrix(n, d, stream)
    drift = locality_summary(*locality_matrix(q, keys, k, stride), n)

    stream = SplitMix64(0)
    qi = iid_matrix(n, d, stream)
    ki = iid_matrix(n, d, stream)
    control = locality_summary(*locality_matrix(qi, ki, k, stride), n)

    ok = drift["gap"] >= 0.1 and abs(control["gap"]) <= 0.05
    announce(
        6,
        ok,
        f"locality at k=512: drifting gap {drift['gap']:.3f} (>= 0.1), "
        f"i.i.d. control gap {control['gap']:.3f} (<= 0.05)",
    )


def test_criterion_07_fusion_recurrence_and_alpha_one():
    geom = HeadGeometry(n_heads=2, head_dim=8)
    cfg = PrunedAttnConfig(segment_size=64, block_size=16, budget=128, alpha=0.25)
    rng = RngSpec(4)
    model = gen_synthetic_model(geom, 3, rng, element_width="f64")
    x0 = gen_synthetic_inputs(384, geom, rng, element_width="f64")
    res = prefill(model, x0, cfg, mode="pruned", keep_raw_scores=True)

    worst = 0.0
    a = cfg.alpha
    for h in range(geom.n_heads):
        r = [res.raw_scores[i][h].scores for i in range(3)]
        unrolled_layer2 = a * r[2] + (1 - a) * (a * r[1] + (1 - a) * r[0])
        got = res.layer_scores[2][h].scores
        worst = max(worst, float(np.abs(got - unrolled_layer2).max()))

    cfg_one = PrunedAttnConfig(segment_size=64, block_size=16, budget=128, alpha=1.0)
    res_one = prefill(model, x0, cfg_one, mode="pruned", keep_raw_scores=True)
    identical = all(
        np.array_equal(res_one.layer_scores[i][h].scores, res_one.raw_scores[i][h].scores)
        for i in range(3)
        for h in range(geom.n_heads)
    )
    ok = worst < 1e-6 and identical
    announce(
        7,
        ok,
        f"layer-2 fused scores vs unrolled recurrence: max abs {worst:.2e}; "
        f"alpha=1 entry-identical to no-fusion: {identical}",
    )


def _independent_flop_tally(n, d):
    """Pure-arithmetic re-derivation at the reference operating point."""
    seg, blk, budget = 512, 32, 1024
    dense = 4 * d * sum(range(1, n + 1))
    budget_blocks = budget // blk
    pruned = 0
    for j in range((n + seg - 1) // seg):
        first = j * seg
        last = min(first + seg, n) - 1
        eligible = last // blk + 1
        diag = last // blk - first // blk + 1
        n_sel = max(min(budget_blocks, eligible), diag)
        pruned += 4 * d * (last - first + 1) * (n_sel * blk)
    n1 = (n + seg - 1) // seg
    n2 = (n + blk - 1) // blk
    overhead = 4 * n * d + 8 * d * n1 * n2 + 5 * n1 * n2
    return dense, pruned, overhead


def test_criterion_08_flop_accounting_reference_sweep():
    geom = HeadGeometry(n_heads=1, head_dim=64)
    ratios = []
    exact = True
    for n in (16384, 32768, 65536, 131072):
        report = count_flops(n, 1, geom, REFERENCE_DEFAULTS, mode="pruned")
        dense, pruned, overhead = _independent_flop_tally(n, 64)
        exact = exact and (
            report.dense == dense
            and report.pruned == pruned
            and report.overhead == overhead
        )
        ratios.append(report.ratio)
    increasing = all(b > a for a, b in zip(ratios, ratios[1:]))
    ok = exact and increasing
    announce(
        8,
        ok,
        f"closed form matches independent arithmetic to the last integer ({exact}); "
        f"ratios {['%.1f' % r for r in ratios]} strictly increasing ({increasing})",
    )


def test_criterion_09_verify_report_byte_identical(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    code_a = cli_main(["verify", "--seed", "123", "--out", str(a)])
    code_b = cli_main(["verify", "--seed", "123", "--out", str(b)])
    identical = a.read_bytes() == b.read_bytes()
    report = json.loads(a.read_text())
    ok = code_a == 0 and code_b == 0 and identical and report["all_pass"]
    announce(
        9,
        ok,
        f"verify twice at seed 123: exit codes ({code_a}, {code_b}), "
        f"byte-identical reports: {identical}",
    )


@pytest.mark.skipif(
    os.environ.get("RUN_SOFT_BENCH") != "1",
    reason="informational wall-clock benchmark; set RUN_SOFT_BENCH=1 to record it",
)
def test_criterion_10_soft_benchmark_informational():
    geom = HeadGeometry(n_heads=8, head_dim=64)  # model_dim 512
    rng = RngSpec(0)
    model = gen_synthetic_model(geom, 2, rng)
    x0 = gen_synthetic_inputs(32768, geom, rng)

    t0 = time.perf_counter()
    prefill(model, x0, REFERENCE_DEFAULTS, mode="dense")
    dense_s = time.perf_counter() - t0
    t0 = time.perf_counter()
    prefill(model, x0, REFERENCE_DEFAULTS, mode="pruned")
    pruned_s = time.perf_counter() - t0

    speedup = dense_s / pruned_s
    # Recorded, not asserted: desk-CPU wall clock is informational only.
    print(
        f"\nCRITERION 10 INFO - n=32768, model_dim=512, L=2: dense {dense_s:.1f}s, "
        f"pruned {pruned_s:.1f}s, speedup {speedup:.2f}x (target >= 2x, non-gating)"
    )
