import math
import sys
import textwrap

import numpy as np
import pytest

from shrubmap import classifier as C
from shrubmap.augment import hflip
from shrubmap.dataset import PatchDataset, assign_splits


def separable_features(n=400, d=5, seed=0):
    """Two Gaussian blobs (unit sigma) whose first coordinate is split by a 2-sigma gap."""
    rng = np.random.default_rng(seed)
    X, y = [], []
    while len(y) < n:
        label = len(y) % 2
        x = rng.normal(0, 1, d)
        x[0] += 3.0 if label else -3.0
        if abs(x[0]) >= 1.0:
            X.append(x)
            y.append(label)
    X = np.array(X)
    return np.hstack([X, np.ones((n, 1))]), np.array(y)


def naive_glcm_mean(gray, levels=32):
    q = (gray.astype(int) * levels) // 256
    h, w = q.shape
    P = np.zeros((levels, levels))
    for r in range(h):
        for c in range(w - 1):
            P[q[r, c], q[r, c + 1]] += 1
            P[q[r, c + 1], q[r, c]] += 1
    P /= P.sum()
    return sum(i * P[i, j] for i in range(levels) for j in range(levels))


# ----------------------------------------------------------------------------- features


def test_uniform_gray_patch_features():
    f = C.extract_features(np.full((80, 80, 3), 128, dtype=np.uint8))
    names = C.FEATURE_NAMES
    assert len(f) == C.N_FEATURES
    assert [f[names.index(k)] for k in ("mean_r", "mean_g", "mean_b")] == [128, 128, 128]
    assert [f[names.index(k)] for k in ("std_r", "std_g", "std_b")] == [0, 0, 0]
    hist = f[6:6 + C.HIST_BINS]
    assert hist[8] == 1.0 and hist.sum() == 1.0
    assert f[names.index("glcm_mean")] == 16
    assert f[names.index("center_gray_25")] == 128 and f[names.index("center_gray_50")] == 128


def test_hflip_keeps_histogram_and_channel_statistics():
    p = np.random.default_rng(0).integers(0, 256, (80, 80, 3), dtype=np.uint8)
    a, b = C.extract_features(p), C.extract_features(hflip(p))
    assert np.allclose(a[:6 + C.HIST_BINS], b[:6 + C.HIST_BINS], atol=1e-12)
    # the center boxes are symmetric about the vertical axis too
    assert np.allclose(a[-2:], b[-2:], atol=1e-12)


def test_histogram_sums_to_one_and_finite():
    rng = np.random.default_rng(1)
    for _ in range(20):
        f = C.extract_features(rng.integers(0, 256, (rng.integers(2, 40), rng.integers(2, 40), 3), dtype=np.uint8))
        assert abs(f[6:6 + C.HIST_BINS].sum() - 1) < 1e-9 and np.isfinite(f).all()


@pytest.mark.parametrize("seed", range(5))
def test_glcm_mean_matches_double_loop(seed):
    gray = np.random.default_rng(seed).integers(0, 256, (23, 31)).astype(np.uint8)
    assert C.glcm_mean(gray) == pytest.approx(naive_glcm_mean(gray), abs=1e-12)


def test_glcm_single_column_fallback():
    gray = np.array([[0], [255]], dtype=np.uint8)
    assert C.glcm_mean(gray) == pytest.approx((0 + 31) / 2)


def test_center_box_mean():
    g = np.zeros((80, 80))
    g[30:50, 30:50] = 100
    assert C.center_box_mean(g, 0.25) == 100
    assert C.center_box_mean(g, 0.5) == pytest.approx(25)
    assert C.center_box_mean(np.array([[7.0]]), 0.25) == 7
    assert C.center_box_mean(np.array([[1.0, 3.0], [5.0, 7.0]]), 0.25) == 4


# ----------------------------------------------------------------------------- loss and gradient


def test_loss_perfect_fit_is_zero():
    X = np.array([[50.0, 1], [-50.0, 1]])
    assert C.loss(np.array([1.0, 0.0]), X, np.array([1, 0]), 0.0) <= 1e-10


def test_loss_half_probability_is_ln2():
    assert C.loss(np.zeros(3), np.array([[1.0, 2.0, 1.0]]), np.array([1]), 0.0) == pytest.approx(math.log(2), abs=1e-12)


def test_regularizer_zero_at_zero_weights():
    X, y = separable_features(20)
    assert C.loss(np.zeros(X.shape[1]), X, y, 0.5) == pytest.approx(math.log(2))


def test_regularizer_excludes_bias():
    X = np.array([[0.0, 1.0]])
    w = np.array([0.0, 3.0])
    assert C.loss(w, X, np.array([1]), 10.0) == pytest.approx(C.loss(w, X, np.array([1]), 0.0))


def test_gradient_matches_central_differences():
    rng = np.random.default_rng(42)
    h = 1e-5
    for _ in range(100):
        n, d = rng.integers(1, 12), rng.integers(1, 6)
        X = np.hstack([rng.normal(0, 1, (n, d)), np.ones((n, 1))])
        y = rng.integers(0, 2, n)
        w = rng.normal(0, 1, d + 1)
        lam = rng.uniform(0, 0.5)
        g = C.gradient(w, X, y, lam)
        num = np.array([(C.loss(w + h * e, X, y, lam) - C.loss(w - h * e, X, y, lam)) / (2 * h)
                        for e in np.eye(d + 1)])
        rel = np.linalg.norm(g - num) / max(np.linalg.norm(g) + np.linalg.norm(num), 1e-12)
        assert rel < 1e-5


def test_full_batch_descent_decreases_loss():
    X, y = separable_features(200, seed=3)
    w = np.zeros(X.shape[1])
    prev = C.loss(w, X, y, 1e-4)
    for _ in range(50):
        w = w - 1e-3 * C.gradient(w, X, y, 1e-4)
        cur = C.loss(w, X, y, 1e-4)
        assert cur < prev
        prev = cur


# ----------------------------------------------------------------------------- updates


def test_momentum_zero_is_gradient_descent():
    m = C.ModelState(np.array([1.0, -2.0]), np.array([0.3, 0.1]))
    g = np.array([0.5, 1.0])
    out = C.momentum_update(m, g, alpha=0.1, mu=0.0)
    assert np.allclose(out.w, m.w - 0.1 * g) and out.t == 1


def test_zero_learning_rate_and_velocity_keeps_weights():
    m = C.ModelState(np.array([1.0, 2.0]), np.zeros(2))
    assert np.array_equal(C.momentum_update(m, np.array([5.0, 5.0]), 0.0, 0.9).w, m.w)


def test_quadratic_surrogate_one_step():
    m = C.ModelState(np.array([0.0]), np.array([0.0]))
    grad = 2 * (m.w - 3)
    assert C.momentum_update(m, grad, 0.1, 0.0).w[0] == pytest.approx(0.6)


def test_classical_momentum_two_steps():
    m = C.ModelState(np.array([0.0]), np.array([0.0]))
    m1 = C.momentum_update(m, np.array([1.0]), 0.1, 0.9)
    m2 = C.momentum_update(m1, np.array([1.0]), 0.1, 0.9)
    assert m1.v[0] == pytest.approx(-0.1) and m2.v[0] == pytest.approx(-0.19)
    assert m2.w[0] == pytest.approx(-0.29)


def test_literal_update_flag():
    m = C.ModelState(np.array([2.0]), np.array([0.0]))
    assert C.momentum_update(m, np.array([1.0]), 0.1, 0.9, literal=True).w[0] == pytest.approx(1.7)


def test_non_finite_gradient_is_an_error():
    m = C.ModelState(np.zeros(2), np.zeros(2))
    with pytest.raises(C.ClassifierError):
        C.momentum_update(m, np.array([np.nan, 0.0]), 0.1, 0.9)


def test_sgd_step_rejects_oversized_batch():
    X, y = separable_features(40)
    with pytest.raises(ValueError):
        C.sgd_step(C.ModelState.zeros(X.shape[1]), X, y, C.TrainConfig(batch_size=8))


@pytest.mark.parametrize("kwargs", [{"alpha": 0}, {"mu": 1.0}, {"lam": -1}, {"batch_size": 0}, {"max_iterations": -1}])
def test_train_config_invariants(kwargs):
    with pytest.raises(ValueError):
        C.TrainConfig(**kwargs)


# ----------------------------------------------------------------------------- training


def test_separable_features_converge_within_100_iterations():
    X, y = separable_features(400)
    state, hist = C.train_matrix(X, y, C.TrainConfig(max_iterations=100))
    assert hist.iteration[-1] == 100 and state.t == 100
    assert max(hist.train_accuracy) >= 0.99
    assert C.accuracy(state.w, X, y) >= 0.99


def test_zero_iterations_returns_initial_state():
    X, y = separable_features(100)
    state, hist = C.train_matrix(X, y, C.TrainConfig(max_iterations=0))
    assert not state.w.any() and state.t == 0
    # sigmoid(0) = 0.5 is never > 0.5, so every sample is called background
    assert C.accuracy(state.w, X, y) == pytest.approx(0.5)


def test_training_is_deterministic():
    X, y = separable_features(100, seed=5)
    a, ha = C.train_matrix(X, y, C.TrainConfig(max_iterations=30, rng_seed=3))
    b, hb = C.train_matrix(X, y, C.TrainConfig(max_iterations=30, rng_seed=3))
    assert np.array_equal(a.w, b.w) and ha.train_loss == hb.train_loss


def test_single_class_is_an_error():
    X, _ = separable_features(10)
    with pytest.raises(C.ClassifierError):
        C.train_matrix(X, np.ones(10), C.TrainConfig())


def _blob_patches(n, seed):
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:80, 0:80]
    out, labels = [], []
    for i in range(n):
        p = np.clip(rng.normal(180, 6, (80, 80, 3)), 0, 255)
        if i % 2:
            r = rng.uniform(12, 28)
            p[(xx - 40) ** 2 + (yy - 40) ** 2 <= r * r] = rng.uniform(30, 70)
        out.append(p.astype(np.uint8))
        labels.append(i % 2)
    return np.array(out), np.array(labels)


def test_train_on_patches_and_predict_held_out(tmp_path):
    patches, labels = _blob_patches(40, 0)
    ds = PatchDataset(patches, labels, assign_splits(labels))
    tm = C.train(ds, C.TrainConfig(max_iterations=200))
    assert tm.history.train_accuracy[-1] >= 0.99
    clf = C.BuiltinClassifier.from_trained(tm)
    test_p, test_l = _blob_patches(10, 99)
    probs = clf.predict_proba(list(test_p))
    assert (probs[test_l == 1] > 0.5).all() and (probs[test_l == 0] < 0.5).all()
    tm.history.to_csv(tmp_path / "curve.csv")
    lines = (tmp_path / "curve.csv").read_text().splitlines()
    assert lines[0] == "iteration,train_loss,train_accuracy,validation_accuracy" and len(lines) == 202


# ----------------------------------------------------------------------------- persistence and handles


def test_model_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    m = C.ModelState(rng.normal(size=C.N_FEATURES + 1), np.zeros(C.N_FEATURES + 1), 17)
    sc = C.Standardizer(rng.normal(size=C.N_FEATURES), rng.uniform(0.5, 2, C.N_FEATURES))
    C.save_model(m, sc, tmp_path / "m.txt")
    m2, sc2 = C.load_model(tmp_path / "m.txt")
    assert np.array_equal(m2.w, m.w) and m2.t == 17
    assert np.array_equal(sc2.mean, sc.mean) and np.array_equal(sc2.std, sc.std)
    header = (tmp_path / "m.txt").read_text().splitlines()[:2]
    assert header[0].startswith(C.MODEL_MAGIC) and header[1] == f"schema {C.SCHEMA_HASH}"


def test_model_schema_mismatch(tmp_path):
    C.save_model(C.ModelState.zeros(), C.Standardizer.identity(), tmp_path / "m.txt")
    text = (tmp_path / "m.txt").read_text().replace(C.SCHEMA_HASH, "0" * 16)
    (tmp_path / "m.txt").write_text(text)
    with pytest.raises(C.ClassifierError):
        C.load_model(tmp_path / "m.txt")


def test_model_missing_file(tmp_path):
    with pytest.raises(C.ClassifierError):
        C.load_model(tmp_path / "none.txt")


def test_zero_weight_builtin_gives_half():
    patches = [np.random.default_rng(i).integers(0, 256, (80, 80, 3), dtype=np.uint8) for i in range(4)]
    assert np.array_equal(C.predict_proba(C.BuiltinClassifier(), patches), np.full(4, 0.5))


def test_constant_classifier_and_call_count():
    clf = C.ConstantClassifier(0.7)
    out = clf.predict_proba([np.zeros((80, 80, 3), np.uint8)] * 3)
    assert np.array_equal(out, [0.7] * 3) and clf.calls == 3
    # complementary probabilities sum to one
    assert np.allclose(out + (1 - out), 1)


def _stub(tmp_path, body):
    script = tmp_path / "stub.py"
    script.write_text(textwrap.dedent(body))
    return [sys.executable, str(script)]


ECHO_STUB = """
import sys
for line in sys.stdin:
    parts = line.split()
    if parts and parts[0] == "PREDICT":
        n = int(parts[1])
        for _ in range(n):
            sys.stdin.readline()
        sys.stdout.write("0.9\\n" * n)
        sys.stdout.flush()
"""


def test_external_stub_answers(tmp_path):
    patches = [np.zeros((80, 80, 3), np.uint8)] * 3
    with C.ExternalClassifier(_stub(tmp_path, ECHO_STUB)) as clf:
        assert np.array_equal(clf.predict_proba(patches), [0.9] * 3)
        assert np.array_equal(clf.predict_proba(patches[:1]), [0.9])
        assert clf.calls == 4


@pytest.mark.parametrize("reply", ["'hello\\n'", "'1.5\\n' * n", "'nan\\n' * n"])
def test_external_protocol_violations(tmp_path, reply):
    body = ECHO_STUB.replace('"0.9\\n" * n', reply)
    assert body != ECHO_STUB
    with C.ExternalClassifier(_stub(tmp_path, body)) as clf:
        with pytest.raises(C.ClassifierError):
            clf.predict_proba([np.zeros((8, 8, 3), np.uint8)])


def test_external_process_dies(tmp_path):
    with C.ExternalClassifier(_stub(tmp_path, "import sys; sys.exit(0)\n")) as clf:
        with pytest.raises(C.ClassifierError):
            clf.predict_proba([np.zeros((8, 8, 3), np.uint8)])


def test_external_missing_executable():
    clf = C.ExternalClassifier(["/nonexistent/classifier"])
    with pytest.raises(C.ClassifierError):
        clf.predict_proba([np.zeros((8, 8, 3), np.uint8)])
    clf.close()


def test_external_timeout(tmp_path):
    body = "import sys, time\nsys.stdin.readline()\ntime.sleep(30)\n"
    with C.ExternalClassifier(_stub(tmp_path, body), timeout=0.5) as clf:
        with pytest.raises(C.ClassifierError, match="no answer"):
            clf.predict_proba([np.zeros((8, 8, 3), np.uint8)])
