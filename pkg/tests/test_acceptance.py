"""Acceptance suite: one test per criterion, each printing a PASS line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines. The training-based criteria use the 16-image synthetic dataset at
32x32 (the stage stack is unchanged; image size is a config knob) so the
whole suite stays desk-scale.
"""
import math
import time

import numpy as np
import pytest

from c2fnet import metrics, ops
from c2fnet.checkpoint import load_checkpoint
from c2fnet.cli import build_config, eval_checkpoint, train_run
from c2fnet.net import build_network
from c2fnet.optim import TrainHyper, adam_step, adamw_step, make_optimizer, rmsprop_step, sgd_step
from c2fnet.tsne import conditional_affinities, squared_distances, tsne_embed
from conftest import assert_grads_close, fd_gradient, projection_loss

from test_tsne import silhouette, three_gaussian_clusters

ADAMW_ROW = (89.64, 88.57, 89.53, 90.51)  # accuracy, precision, f1, recall
SGD_ROW = (89.30, 88.57, 89.21, 89.86)
ADAMW_COUNTS = (124, 16, 13, 127)
SGD_COUNTS = (124, 16, 14, 126)


def _ok(line):
    print(f"\nACCEPTANCE PASS: {line}")


@pytest.fixture(scope="module")
def train_runs(synth_root, tmp_path_factory):
    """AdamW / SGD / RMSprop runs on the shared synthetic set, default hyper."""
    results = {}
    for kind in ("adamw", "sgd", "rmsprop"):
        out = tmp_path_factory.mktemp(f"accept_{kind}")
        config = build_config(overrides=dict(
            data_root=str(synth_root), optimizer=kind, lr0=0.001, momentum=0.97,
            epochs=120, batch_size=16, img_size=32, seed=0, output_dir=str(out),
        ))
        results[kind] = (config, train_run(config))
    return results


class TestCriterion1GradientCorrectness:
    def test_primitive_and_whole_network_gradients(self):
        start = time.monotonic()
        rng = np.random.default_rng(100)

        # -- primitives, h = 1e-3, relative error <= 1e-3 --
        x = rng.uniform(-1, 1, (1, 2, 5, 5)).astype(np.float32)
        conv = ops.ConvParams(2, 3, (3, 3), 2, 1,
                              rng.uniform(-0.5, 0.5, (3, 2, 3, 3)).astype(np.float32),
                              rng.uniform(-0.5, 0.5, 3).astype(np.float32))
        c = rng.choice([-1.0, 1.0], ops.conv2d_forward(x, conv).shape).astype(np.float32)
        gx, gw, gb = ops.conv2d_backward(x, conv, c)
        for arr, analytic in ((x, gx), (conv.weight, gw), (conv.bias, gb)):
            fd = fd_gradient(lambda: projection_loss(ops.conv2d_forward(x, conv), c), arr)
            assert_grads_close(analytic, fd, rtol=1e-3)

        xb = rng.uniform(-2, 2, (2, 3, 2, 2)).astype(np.float32)
        bn = ops.BatchNormParams(rng.uniform(0.5, 1.5, 3).astype(np.float32),
                                 rng.uniform(-1, 1, 3).astype(np.float32),
                                 np.zeros(3, np.float32), np.ones(3, np.float32))
        cb = rng.choice([-1.0, 1.0], xb.shape).astype(np.float32)
        _, cache = ops.batchnorm_forward(xb, bn, training=True)
        gxb, gg, gbeta = ops.batchnorm_backward(xb, bn, cb, cache)

        def bn_loss():
            y, _ = ops.batchnorm_forward(xb, bn, training=True)
            return projection_loss(y, cb)

        for arr, analytic in ((xb, gxb), (bn.gamma, gg), (bn.beta, gbeta)):
            assert_grads_close(analytic, fd_gradient(bn_loss, arr), rtol=1e-3)

        xs = rng.uniform(-3, 3, (4, 6)).astype(np.float32)
        cs = rng.choice([-1.0, 1.0], xs.shape).astype(np.float32)
        assert_grads_close(ops.silu_backward(xs, cs),
                           fd_gradient(lambda: projection_loss(ops.silu(xs), cs), xs),
                           rtol=1e-3)

        xl = rng.uniform(-1, 1, (3, 4)).astype(np.float32)
        wl = rng.uniform(-1, 1, (2, 4)).astype(np.float32)
        bl = rng.uniform(-1, 1, 2).astype(np.float32)
        cl = rng.choice([-1.0, 1.0], (3, 2)).astype(np.float32)
        glx, glw, glb = ops.linear_backward(xl, wl, cl)
        for arr, analytic in ((xl, glx), (wl, glw), (bl, glb)):
            assert_grads_close(
                analytic,
                fd_gradient(lambda: projection_loss(ops.linear_forward(xl, wl, bl), cl), arr),
                rtol=1e-3)

        xg = rng.uniform(-1, 1, (2, 3, 4, 4)).astype(np.float32)
        cg = rng.choice([-1.0, 1.0], (2, 3)).astype(np.float32)
        analytic = ops.global_avg_pool_backward(xg.shape, cg)
        assert_grads_close(
            analytic,
            fd_gradient(lambda: projection_loss(ops.global_avg_pool(xg), cg), xg),
            rtol=1e-3)

        logits = rng.normal(0, 1, (4, 2)).astype(np.float32)
        labels = list(rng.integers(0, 2, 4))
        _, grad = ops.softmax_cross_entropy(logits, labels)
        assert_grads_close(
            grad,
            fd_gradient(lambda: ops.softmax_cross_entropy(logits, labels)[0], logits),
            rtol=1e-3, atol=1e-5)

        # -- whole network on 16x16 inputs, 50 sampled parameters, <= 1e-2 --
        net = build_network(seed=5, img_size=16)
        xn = rng.uniform(0, 1, (8, 3, 16, 16)).astype(np.float32)
        yn = list(rng.integers(0, 2, 8))
        out = net.forward(xn, training=True)
        _, gl = ops.softmax_cross_entropy(out, yn)
        grads = net.backward(gl)
        params = net.parameters()

        def net_loss():
            return ops.softmax_cross_entropy(net.forward(xn, training=True), yn)[0]

        names = list(params)
        checked = 0
        attempts = 0
        h = 3e-3
        while checked < 50:
            attempts += 1
            assert attempts < 500, "could not find 50 resolvable parameter coordinates"
            name = names[rng.integers(len(names))]
            g = grads[name].reshape(-1)
            candidates = rng.integers(g.size, size=min(20, g.size))
            idx = int(candidates[np.argmax(np.abs(g[candidates]))])
            if abs(g[idx]) < 1e-3:
                continue  # below the f32 finite-difference noise floor
            w = params[name].reshape(-1)
            orig = w[idx]
            w[idx] = orig + h
            hi = float(w[idx])
            f_hi = net_loss()
            w[idx] = orig - h
            lo = float(w[idx])
            f_lo = net_loss()
            w[idx] = orig
            fd = (f_hi - f_lo) / (hi - lo)
            an = float(g[idx])
            rel = abs(fd - an) / max(abs(fd), abs(an))
            assert rel <= 1e-2, f"{name}[{idx}]: analytic {an:.5e} vs fd {fd:.5e} (rel {rel:.2e})"
            checked += 1

        elapsed = time.monotonic() - start
        assert elapsed <= 120.0
        _ok(f"gradient correctness (primitives rel<=1e-3, whole net 50 params rel<=1e-2, "
            f"{elapsed:.1f}s <= 120s)")


class TestCriterion2ArchitectureFidelity:
    def test_shape_trace_and_stage_census(self):
        net = build_network(seed=0)
        kinds = [type(b).__name__ for _, b in net.stages]
        assert kinds.count("ConvBlock") == 5
        assert kinds.count("C2fBlock") == 4
        assert kinds.count("ClassifyHead") == 1

        x = np.random.default_rng(0).uniform(0, 1, (1, 3, 128, 128)).astype(np.float32)
        shapes = []
        for _, block in net.stages:
            x = block.forward(x, training=False)
            shapes.append(x.shape)
        assert shapes[0] == (1, 16, 64, 64)      # conv-1 halves 128 -> 64
        assert shapes[-2] == (1, 256, 4, 4)      # entering the classify head
        assert shapes[-1] == (1, 2)
        _ok("architecture fidelity (conv1 -> 64x64, head input 4x4x256, census 5 conv + 4 C2f + 1 classify)")


def _search_count_matrices(n, targets, tol):
    """All (tp, fp, fn, tn) with tp+fp+fn+tn = n matching the percentage row."""
    acc_t, p_t, f1_t, r_t = targets
    found = []
    for tp in range(n + 1):
        fp_grid, fn_grid = np.meshgrid(np.arange(n + 1 - tp), np.arange(n + 1 - tp),
                                       indexing="ij")
        mask = fp_grid + fn_grid <= n - tp
        fp_v = fp_grid[mask].astype(np.float64)
        fn_v = fn_grid[mask].astype(np.float64)
        tn_v = n - tp - fp_v - fn_v
        with np.errstate(divide="ignore", invalid="ignore"):
            acc = (tp + tn_v) / n * 100
            prec = np.where(tp + fp_v > 0, tp / (tp + fp_v) * 100, 0.0)
            rec = np.where(tp + fn_v > 0, tp / (tp + fn_v) * 100, 0.0)
            f1v = np.where(prec + rec > 0, 2 * prec * rec / (prec + rec), 0.0)
        ok = (np.abs(acc - acc_t) <= tol[0]) & (np.abs(prec - p_t) <= tol[1]) \
            & (np.abs(f1v - f1_t) <= tol[2]) & (np.abs(rec - r_t) <= tol[3])
        for fp, fn in zip(fp_v[ok], fn_v[ok]):
            found.append((tp, int(fp), int(fn), int(n - tp - fp - fn)))
    return found


class TestCriterion3MetricTableReproduction:
    def test_adamw_and_sgd_rows(self):
        rep = metrics.report_from_predictions(
            [0] * 124 + [0] * 16 + [1] * 13 + [1] * 127,
            [0] * 124 + [1] * 16 + [0] * 13 + [1] * 127,
            positive_class=0)
        assert rep.accuracy * 100 == pytest.approx(ADAMW_ROW[0], abs=0.01)
        assert rep.precision * 100 == pytest.approx(ADAMW_ROW[1], abs=0.01)
        assert rep.f1 * 100 == pytest.approx(ADAMW_ROW[2], abs=0.01)
        assert rep.recall * 100 == pytest.approx(ADAMW_ROW[3], abs=0.01)

        cm = metrics.ConfusionMatrix2(*SGD_COUNTS, positive_class=0)
        assert metrics.accuracy(cm) * 100 == pytest.approx(SGD_ROW[0], abs=0.02)
        assert metrics.precision(cm) * 100 == pytest.approx(SGD_ROW[1], abs=0.01)
        assert metrics.f1(cm) * 100 == pytest.approx(SGD_ROW[2], abs=0.01)
        assert metrics.recall(cm) * 100 == pytest.approx(SGD_ROW[3], abs=0.01)

        # exhaustive oracle over every 2x2 matrix with N = 280
        adamw_matches = _search_count_matrices(280, ADAMW_ROW, (0.005, 0.005, 0.005, 0.005))
        assert ADAMW_COUNTS in adamw_matches
        assert adamw_matches == [ADAMW_COUNTS]
        sgd_matches = _search_count_matrices(280, SGD_ROW, (0.02, 0.005, 0.005, 0.005))
        assert SGD_COUNTS in sgd_matches
        _ok("metric table reproduction (AdamW row to +-0.01pp, SGD row, counts validated "
            "by exhaustive 2x2 search over N=280)")


def _ap_bruteforce(scores, positives):
    """Independent AP: explicit threshold sweep + per-point envelope max."""
    pts = []
    total_pos = sum(positives)
    for th in sorted(set(scores), reverse=True):
        tp = sum(1 for s, y in zip(scores, positives) if s >= th and y == 1)
        fp = sum(1 for s, y in zip(scores, positives) if s >= th and y == 0)
        pts.append((tp / total_pos, tp / (tp + fp)))
    ap = 0.0
    prev_r = 0.0
    for r, _ in pts:
        env = max(p for rr, p in pts if rr >= r - 1e-15)
        ap += (r - prev_r) * env
        prev_r = r
    return ap


class TestCriterion4MetricOracleEquivalence:
    def test_thousand_random_lists(self):
        rng = np.random.default_rng(123)
        for _ in range(1000):
            n = int(rng.integers(2, 501))
            preds = rng.integers(0, 2, n).tolist()
            labels = rng.integers(0, 2, n).tolist()
            cm = metrics.confusion(preds, labels, positive_class=0)
            tp = sum(1 for p, l in zip(preds, labels) if p == 0 and l == 0)
            fp = sum(1 for p, l in zip(preds, labels) if p == 0 and l == 1)
            fn = sum(1 for p, l in zip(preds, labels) if p == 1 and l == 0)
            tn = n - tp - fp - fn
            assert (cm.tp, cm.fp, cm.fn, cm.tn) == (tp, fp, fn, tn)
            assert metrics.precision(cm) == (tp / (tp + fp) if tp + fp else 0.0)
            assert metrics.recall(cm) == (tp / (tp + fn) if tp + fn else 0.0)
            p, r = metrics.precision(cm), metrics.recall(cm)
            assert metrics.f1(cm) == (2 * p * r / (p + r) if p + r else 0.0)
            assert metrics.accuracy(cm) == (tp + tn) / n

        for i in range(200):
            n = int(rng.integers(3, 120))
            scores = (rng.integers(0, 25, n) / 24.0).tolist()
            positives = rng.integers(0, 2, n).tolist()
            if sum(positives) == 0:
                positives[0] = 1
            got = metrics.average_precision(scores, positives)
            want = _ap_bruteforce(scores, positives)
            assert abs(got - want) <= 1e-9, f"case {i}: {got} vs {want}"
        _ok("metric oracle equivalence (1000 random lists exact, AP vs brute-force sweep <= 1e-9)")


class TestCriterion5OptimizerClosedForm:
    def test_hand_derived_steps(self):
        # float64 carriers: the 1e-7 bound is about the update formulas
        p = {"w": np.array([1.0])}
        s = make_optimizer("sgd")
        h = TrainHyper(lr0=0.1, momentum=0.97)
        sgd_step(p, {"w": np.array([0.5])}, s, h)
        assert abs(p["w"][0] - 0.95) <= 1e-7
        sgd_step(p, {"w": np.array([0.5])}, s, h)
        assert abs(p["w"][0] - 0.8515) <= 1e-7
        assert abs(s.v["w"][0] - 0.985) <= 1e-7

        p = {"w": np.array([0.0])}
        adam_step(p, {"w": np.array([1.0])}, make_optimizer("adam"), TrainHyper(momentum=0.0))
        assert abs(p["w"][0] - (-0.000999999990)) <= 1e-7

        p = {"w": np.array([1.0])}
        adamw_step(p, {"w": np.array([0.0])}, make_optimizer("adamw"),
                   TrainHyper(momentum=0.0, weight_decay=0.05))
        assert abs(p["w"][0] - 0.99995) <= 1e-7

        p = {"w": np.array([0.0])}
        adamw_step(p, {"w": np.array([1.0])}, make_optimizer("adamw"),
                   TrainHyper(momentum=0.0, weight_decay=0.05))
        assert abs(p["w"][0] - (-0.001)) <= 1e-7

        p = {"w": np.array([0.0])}
        st = make_optimizer("rmsprop")
        rmsprop_step(p, {"w": np.array([1.0])}, st, TrainHyper(momentum=0.0))
        assert abs(st.s["w"][0] - 0.01) <= 1e-7
        assert abs(p["w"][0] - (-0.01)) <= 1e-7

        # adamw with wd=0 is bitwise adam, float32 carriers
        rng = np.random.default_rng(7)
        pa = {f"t{i}": rng.normal(0, 1, (4, 3)).astype(np.float32) for i in range(3)}
        pw = {k: v.copy() for k, v in pa.items()}
        sa, sw = make_optimizer("adam"), make_optimizer("adamw")
        h0 = TrainHyper(momentum=0.0, weight_decay=0.0)
        for _ in range(4):
            g = {k: rng.normal(0, 1, v.shape).astype(np.float32) for k, v in pa.items()}
            adam_step(pa, g, sa, h0)
            adamw_step(pw, {k: v.copy() for k, v in g.items()}, sw, h0)
        for k in pa:
            np.testing.assert_array_equal(pa[k], pw[k])
        _ok("optimizer closed-form steps (all four to 1e-7; adamw(wd=0) bitwise == adam)")


class TestCriterion6OverfitProperty:
    def test_adamw_and_sgd_fit_the_synthetic_set(self, synth_root, train_runs):
        start = time.monotonic()
        for kind, epoch_budget in (("adamw", 200), ("sgd", 500)):
            config, result = train_runs[kind]
            fit_epochs = [epoch for epoch, train_loss, _, _ in result.rows if train_loss < 0.08]
            assert fit_epochs, f"{kind}: train_loss never fell below 0.08"
            assert min(fit_epochs) <= epoch_budget
            rep = eval_checkpoint(config.output_dir + "/last.ckpt", synth_root,
                                  split="train", batch_size=16)
            assert rep.accuracy == 1.0, f"{kind}: train accuracy {rep.accuracy} != 1.0"
        elapsed = time.monotonic() - start
        _ok(f"overfit property (AdamW loss<0.08 + 100% train acc within 200 epochs, "
            f"SGD within 500; checks took {elapsed:.0f}s after shared runs)")


class TestCriterion7RmspropContrast:
    def test_rmsprop_validation_trace_has_higher_variance(self, train_runs):
        _, adamw = train_runs["adamw"]
        _, rms = train_runs["rmsprop"]
        var_adamw = float(np.var([r[3] for r in adamw.rows]))
        var_rms = float(np.var([r[3] for r in rms.rows]))
        assert var_rms > var_adamw, (
            f"expected rmsprop val-accuracy variance ({var_rms:.5f}) to exceed "
            f"adamw's ({var_adamw:.5f})")
        _ok(f"rmsprop contrast signature (val-acc variance {var_rms:.4f} > adamw {var_adamw:.4f})")


class TestCriterion8TsneQuality:
    def test_clusters_affinities_and_runtime(self):
        start = time.monotonic()
        points, labels = three_gaussian_clusters(n_per=30, dim=50, sep=25.0, seed=7)
        aff = conditional_affinities(points, perplexity=30.0)
        assert abs(aff.P.sum() - 1.0) <= 1e-9
        d = squared_distances(points)
        for i in range(len(points)):
            beta = 0.5 / aff.sigmas[i] ** 2
            row = np.exp(-np.delete(d[i], i) * beta)
            row /= row.sum()
            realized = math.exp(-np.sum(row * np.log(np.maximum(row, 1e-300))))
            assert abs(realized - 30.0) <= 1e-3
        result = tsne_embed(points, d=2, perplexity=30.0, iters=500, seed=1)
        score = silhouette(result.points, labels)
        assert score > 0.5
        elapsed = time.monotonic() - start
        assert elapsed <= 60.0
        _ok(f"t-sne quality (silhouette {score:.3f} > 0.5, per-row perplexity within 1e-3, "
            f"P sums to 1 within 1e-9, {elapsed:.1f}s <= 60s)")


class TestCriterion9DeterminismPersistence:
    def test_byte_identical_reruns_and_bit_exact_resume(self, synth_root, tmp_path):
        import shutil

        def config(epochs):
            return build_config(overrides=dict(
                data_root=str(synth_root), optimizer="adamw", epochs=epochs,
                batch_size=16, img_size=32, seed=2, output_dir=str(tmp_path / "d")))

        straight = train_run(config(6))
        saved = {p.name: p.read_bytes() for p in (tmp_path / "d").iterdir()}
        shutil.rmtree(tmp_path / "d")

        rerun = train_run(config(6))
        assert (tmp_path / "d" / "curves.csv").read_bytes() == saved["curves.csv"]
        assert (tmp_path / "d" / "last.ckpt").read_bytes() == saved["last.ckpt"]
        assert rerun.rows == straight.rows
        shutil.rmtree(tmp_path / "d")

        train_run(config(3))
        resumed = train_run(config(6), resume=str(tmp_path / "d" / "last.ckpt"))
        assert (tmp_path / "d" / "curves.csv").read_bytes() == saved["curves.csv"]
        assert (tmp_path / "d" / "last.ckpt").read_bytes() == saved["last.ckpt"]
        final = load_checkpoint(tmp_path / "d" / "last.ckpt")
        for name, blob in final.params.items():
            assert blob.tobytes() == load_checkpoint_params_ref(saved["last.ckpt"], name)
        assert resumed.rows == straight.rows
        _ok("determinism and persistence (byte-identical rerun; 3+3 epoch resume "
            "reproduces the 6-epoch run bit-exactly)")


def load_checkpoint_params_ref(blob, name):
    import tempfile
    from pathlib import Path
    with tempfile.TemporaryDirectory() as d:
        p = Path(d) / "ref.ckpt"
        p.write_bytes(blob)
        return load_checkpoint(p).params[name].tobytes()


@pytest.mark.skip(reason="full-scale run needs the external Kaggle dataset and multi-hour "
                         "CPU training; explicitly optional for acceptance")
class TestCriterion10FullScale:
    def test_adamw_500_epochs_on_real_data(self):
        pass
