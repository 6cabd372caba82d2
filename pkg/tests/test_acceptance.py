"""Acceptance gate: one PASS/FAIL line per criterion, echoed in the terminal summary.

The end-to-end criteria (7, 8) train the default network on generated scenes
and take several minutes each on one core.
"""
import os
import statistics
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from gdnet import tensor_numerics as tn
from gdnet.cli import main
from gdnet.evaluation import compute_metrics, read_report
from gdnet.model import GDConvLayer, ModelConfig, gdconv_forward, init_model, model_summary
from gdnet.preclassification import fcm_cluster
from oracles import naive_conv2d_same, smooth_gradient_instance

E2E_EPOCHS = 50
ABLATION_SEEDS = (42, 43, 44)


def report(number, ok, detail):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


# ------------------------------------------------------------------ helpers

class SceneRuns:
    """Synthesizes scenes and runs the CLI pipeline, memoized per setting."""

    def __init__(self, root):
        self.root = root
        self.cache = {}

    def run(self, seed, conv="gdconv", mixup="two-stage", tag=""):
        key = (seed, conv, mixup, tag)
        if key in self.cache:
            return self.cache[key]
        scene = os.path.join(self.root, f"scene{seed}")
        if not os.path.exists(os.path.join(scene, "t1.pgm")):
            assert main(["synth", "--seed", str(seed), "--output", scene]) == 0
        out = os.path.join(self.root, f"run{seed}-{conv}-{mixup}{tag}")
        start = time.perf_counter()
        code = main(["pipeline", "--seed", str(seed), "--epochs", str(E2E_EPOCHS), "--conv", conv,
                     "--mixup", mixup, "--t1", os.path.join(scene, "t1.pgm"), "--t2", os.path.join(scene, "t2.pgm"),
                     "--ground-truth", os.path.join(scene, "ground_truth.pgm"), "--output", out])
        seconds = time.perf_counter() - start
        assert code == 0
        result = (read_report(os.path.join(out, "report.txt")), out, seconds)
        self.cache[key] = result
        return result


@pytest.fixture(scope="module")
def scenes(tmp_path_factory):
    return SceneRuns(str(tmp_path_factory.mktemp("acceptance")))


# ------------------------------------------------------------------ criteria

def test_c1_gradient_integrity():
    start = time.perf_counter()
    seed, err = smooth_gradient_instance(ModelConfig(r=6, h1=4, h2=4, h3=4), h=1e-4)
    seconds = time.perf_counter() - start
    ok = err < 1e-3 and seconds < 60
    assert report(1, ok, f"max rel err {err:.2e} (instance seed {seed}), {seconds:.1f} s")


def test_c2_zero_expansion_anchor():
    rng = np.random.default_rng(0)
    worst = 0.0
    for trial in range(100):
        c, n = int(rng.integers(1, 6)), int(rng.integers(1, 6))
        layer = GDConvLayer(c, n, 3, 4, 8, np.float32)
        layer.init(rng)
        for name in ("expand_g_weight", "expand_g_bias", "expand_c_weight", "expand_c_bias"):
            layer.params[name].value[...] = 0
        x = rng.standard_normal((c, 8, 8)).astype(np.float32)
        out, _ = gdconv_forward(layer, x)
        worst = max(worst, float(np.abs(out - 0.5 * tn.conv2d_same(x, layer["base_kernel"])).max()))
    assert report(2, worst < 1e-6, f"max |GDConv - 0.5 conv| = {worst:.2e} over 100 inputs")


def test_c3_convolution_oracle():
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(200):
        c, n = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        k = int(rng.choice([1, 3, 5]))
        h, w = int(rng.integers(k, 10)), int(rng.integers(k, 10))
        x = rng.standard_normal((c, h, w))
        kernel = rng.standard_normal((n, c, k, k))
        worst = max(worst, float(np.abs(tn.conv2d_same(x, kernel) - naive_conv2d_same(x, kernel)).max()))
    assert report(3, worst < 1e-5, f"max deviation from sliding-window oracle {worst:.2e} over 200 instances")


def test_c4_fcm_behavior():
    rng = np.random.default_rng(2)
    monotone = True
    for _ in range(50):
        values = rng.random(int(rng.integers(10, 500))) ** float(rng.uniform(0.5, 3))
        hist = np.array(fcm_cluster(values).objective_history)
        monotone &= bool(np.all(np.diff(hist) <= 1e-12 * max(1.0, hist[0])))
    means = np.array([0.2, 0.5, 0.8])
    values = np.concatenate([rng.normal(mu, 0.03, size) for mu, size in zip(means, (5000, 3000, 2000))])
    res = fcm_cluster(values)
    hist = np.array(res.objective_history)
    monotone &= bool(np.all(np.diff(hist) <= 1e-12 * hist[0]))
    dev = float(np.abs(res.centers - means).max())
    assert report(4, monotone and dev <= 0.02,
                  f"objective non-increasing on 51 runs: {monotone}; center deviation {dev:.4f}")


def test_c5_metric_arithmetic():
    n = 384 * 384
    rows = []
    for fp, fn, oe, pcc in ((3029, 1034, "2.76", "97.24"), (1821, 768, "1.76", "98.24")):
        r = compute_metrics(0, n - fp - fn, fp, fn)
        rows.append((f"{r.oe_percent:.2f}", f"{r.pcc_percent:.2f}") == (oe, pcc))
    assert report(5, all(rows), "Chao Lake I OE 2.76 PCC 97.24; Chao Lake II OE 1.76 PCC 98.24"
                  if all(rows) else f"mismatch {rows}")


def test_c6_mixup_schedule():
    # mirrors the training loop: one fresh decision per minibatch
    from gdnet.training import mixing_decision
    rng = np.random.default_rng(3)
    num, per_epoch = 200, 1000
    rate = {i: np.mean([mixing_decision(i, num, "two-stage", rng) for _ in range(per_epoch)])
            for i in (1, 50, 100, 150, 200)}
    ok = rate[1] == rate[50] == rate[100] == 1.0 and abs(rate[150] - 0.5) <= 0.05 and rate[200] == 0.0
    assert report(6, ok, f"rates epoch 1/50/100: {rate[1]:.2f}/{rate[50]:.2f}/{rate[100]:.2f}, "
                         f"150: {rate[150]:.3f}, 200: {rate[200]:.2f} ({per_epoch} minibatches each)")


def test_c7_end_to_end_synthetic(scenes):
    first, out_a, seconds = scenes.run(42)
    second, out_b, _ = scenes.run(42, tag="-repeat")
    same = all(open(os.path.join(out_a, f), "rb").read() == open(os.path.join(out_b, f), "rb").read()
               for f in ("change_map.pgm", "report.txt", "model.gdnt", "loss.csv"))
    ok = first["pcc_percent"] >= 95 and first["kc_percent"] >= 75 and seconds <= 600 and same
    assert report(7, ok, f"PCC {first['pcc_percent']:.2f}%, KC {first['kc_percent']:.2f}%, "
                         f"{seconds:.0f} s, bit-identical rerun: {same}")


def test_c8_ablation_direction(scenes):
    full = [scenes.run(s)[0]["pcc_percent"] for s in ABLATION_SEEDS]
    base = [scenes.run(s, conv="static", mixup="none")[0]["pcc_percent"] for s in ABLATION_SEEDS]
    med_full, med_base = statistics.median(full), statistics.median(base)
    ok = med_full >= med_base
    report(8, ok, f"median PCC gdconv+two-stage {med_full:.2f}% vs static+none {med_base:.2f}%"
                  + ("" if ok else "  [FLAGGED: soft inequality not met on this run]"))
    # the inequality is soft: medians are always reported, the run is flagged rather than failed
    assert all(np.isfinite(full + base))


def test_c9_model_summary():
    summary = model_summary(init_model())
    width = ModelConfig().feature_width
    ok = 1e4 <= summary.param_count <= 1.3e5 and width == 864
    assert report(9, ok, f"{summary.param_count} parameters, feature width {width}")


REAL = [os.environ.get(k) for k in ("GDNET_REAL_T1", "GDNET_REAL_T2", "GDNET_REAL_GT")]


@pytest.mark.skipif(not all(REAL), reason="set GDNET_REAL_T1, GDNET_REAL_T2, GDNET_REAL_GT to run")
def test_c10_real_data_harness(tmp_path):
    t1, t2, gt = REAL
    code = main(["pipeline", "--t1", t1, "--t2", t2, "--ground-truth", gt, "--output", str(tmp_path)])
    values = read_report(tmp_path / "report.txt") if code == 0 else {}
    ok = code == 0 and len(values) == 7
    assert report(10, ok, f"report: PCC {values.get('pcc_percent', float('nan')):.2f}%, "
                          f"KC {values.get('kc_percent', float('nan')):.2f}% (reference PCC 96.75/97.24/98.24)")


def test_c10_harness_presence():
    if not all(REAL):
        ACCEPTANCE_LINES.append("criterion 10: SKIP  no real-data files supplied (GDNET_REAL_T1/T2/GT)")
