"""
Patch classifier: hand-crafted features, a logistic-regression model trained
with momentum SGD, and an adapter for external classifier processes.

Training minimizes the regularized average loss

    J(w) = 1/N * sum_i BCE(sigmoid(w . x_i), y_i) + lambda * 0.5 * ||w[:-1]||^2

where the last weight is the bias and is not regularized.
"""

from __future__ import annotations

import hashlib
import logging
import os
import shlex
import subprocess
import tempfile
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from .dataset import TRAIN, VALIDATION, PatchDataset
from .preprocess import to_gray

logger = logging.getLogger(__name__)

PATCH_SIZE = 80
HIST_BINS = 16
GLCM_LEVELS = 32
GLCM_OFFSET = (1, 0)  # (dx, dy): right-hand neighbour
CENTER_BOXES = (0.25, 0.5)  # side of the central box as a fraction of the patch side

FEATURE_NAMES = (
    ["mean_r", "mean_g", "mean_b", "std_r", "std_g", "std_b"]
    + [f"hist_{i:02d}" for i in range(HIST_BINS)]
    + ["glcm_mean"]
    + [f"center_gray_{int(f * 100):02d}" for f in CENTER_BOXES]
)
N_FEATURES = len(FEATURE_NAMES)  # 25
SCHEMA = (f"{','.join(FEATURE_NAMES)};glcm={GLCM_LEVELS}@{GLCM_OFFSET};hist={HIST_BINS};"
          f"center={CENTER_BOXES};bias")
SCHEMA_HASH = hashlib.sha256(SCHEMA.encode()).hexdigest()[:16]
MODEL_MAGIC = "shrubmap-logreg"
MODEL_VERSION = 3

PROB_EPS = 1e-12


class ClassifierError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Features
# ---------------------------------------------------------------------------


def quantize(gray: np.ndarray, levels: int = GLCM_LEVELS) -> np.ndarray:
    return (np.asarray(gray, dtype=np.int64) * levels) // 256


def glcm(gray: np.ndarray, levels: int = GLCM_LEVELS, offset=GLCM_OFFSET, symmetric: bool = True) -> np.ndarray:
    """Normalized gray-level co-occurrence matrix for one pixel offset."""
    q = quantize(gray, levels)
    dx, dy = offset
    if dx < 0 or dy < 0:
        raise ValueError("GLCM offsets must be non-negative")
    h, w = q.shape
    a = q[:h - dy, :w - dx]
    b = q[dy:, dx:]
    m = np.zeros((levels, levels), dtype=float)
    np.add.at(m, (a.ravel(), b.ravel()), 1)
    if symmetric:
        m = m + m.T
    total = m.sum()
    return m / total if total else m


def glcm_mean(gray: np.ndarray, levels: int = GLCM_LEVELS) -> float:
    """sum_i i * sum_j P(i, j)."""
    p = glcm(gray, levels)
    if p.sum() == 0:
        # no pixel pairs (single column): fall back to the mean quantized level
        return float(quantize(gray, levels).mean())
    return float(np.arange(levels) @ p.sum(axis=1))


def center_box_mean(gray: np.ndarray, fraction: float) -> float:
    """Mean gray level of the central box whose side is ``fraction`` of the patch side.

    The box is symmetric about the patch center and never empty.  Global
    statistics cannot tell a window centered on a shrub from one that merely
    clips a shrub at its border; these features can.
    """
    h, w = gray.shape
    a = min(int(np.floor(h * (1 - fraction) / 2 + 0.5)), (h - 1) // 2)
    b = min(int(np.floor(w * (1 - fraction) / 2 + 0.5)), (w - 1) // 2)
    return float(np.asarray(gray[a:h - a, b:w - b], dtype=float).mean())


def extract_features(patch: np.ndarray) -> np.ndarray:
    """The raw features of one RGB patch, in ``FEATURE_NAMES`` order."""
    px = np.asarray(patch, dtype=float)
    flat = px.reshape(-1, 3)
    gray = to_gray(patch)
    hist = np.bincount((gray // (256 // HIST_BINS)).ravel(), minlength=HIST_BINS).astype(float)
    hist /= hist.sum()
    center = [center_box_mean(gray, f) for f in CENTER_BOXES]
    return np.concatenate([flat.mean(axis=0), flat.std(axis=0), hist, [glcm_mean(gray)], center])


def feature_matrix(patches: Sequence[np.ndarray]) -> np.ndarray:
    if len(patches) == 0:
        return np.zeros((0, N_FEATURES))
    return np.stack([extract_features(p) for p in patches])


@dataclass(frozen=True)
class Standardizer:
    """Per-feature z-scoring fitted on a training split."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def identity(cls, n: int = N_FEATURES) -> "Standardizer":
        return cls(np.zeros(n), np.ones(n))

    @classmethod
    def fit(cls, features: np.ndarray) -> "Standardizer":
        f = np.asarray(features, dtype=float)
        std = f.std(axis=0)
        return cls(f.mean(axis=0), np.where(std > 1e-12, std, 1.0))

    def apply(self, features: np.ndarray) -> np.ndarray:
        return (np.atleast_2d(np.asarray(features, dtype=float)) - self.mean) / self.std


def design_matrix(features: np.ndarray, scaler: Standardizer | None = None) -> np.ndarray:
    """Standardize raw features and append the constant bias column."""
    f = np.atleast_2d(np.asarray(features, dtype=float))
    if scaler is not None:
        f = scaler.apply(f)
    return np.hstack([f, np.ones((len(f), 1))])


# ---------------------------------------------------------------------------
# Model, loss and updates
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    alpha: float = 0.01
    mu: float = 0.9
    lam: float = 1e-4
    batch_size: int = 32
    max_iterations: int = 500
    rng_seed: int = 0
    # w <- mu * w - alpha * grad, the update as literally printed; for study only
    literal_update: bool = False

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be > 0")
        if not 0 <= self.mu < 1:
            raise ValueError("mu must be in [0, 1)")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")


@dataclass(frozen=True)
class ModelState:
    w: np.ndarray
    v: np.ndarray
    t: int = 0

    def __post_init__(self):
        w = np.array(self.w, dtype=float)
        v = np.array(self.v, dtype=float)
        if w.shape != v.shape or w.ndim != 1:
            raise ValueError("w and v must be 1-D vectors of equal length")
        if not (np.isfinite(w).all() and np.isfinite(v).all()):
            raise ValueError("model state must be finite")
        w.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "v", v)

    @classmethod
    def zeros(cls, n: int = N_FEATURES + 1) -> "ModelState":
        return cls(np.zeros(n), np.zeros(n), 0)


def sigmoid(z):
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _reg_mask(n: int) -> np.ndarray:
    m = np.ones(n)
    m[-1] = 0.0
    return m


def loss(w: np.ndarray, X: np.ndarray, y: np.ndarray, lam: float) -> float:
    """Mean binary cross-entropy plus lam * 0.5 * ||w without bias||^2."""
    w = np.asarray(w, dtype=float)
    X = np.atleast_2d(X)
    y = np.asarray(y, dtype=float)
    if len(y) == 0:
        raise ValueError("loss of an empty batch")
    p = np.clip(sigmoid(X @ w), PROB_EPS, 1 - PROB_EPS)
    ce = -np.mean(y * np.log(p) + (1 - y) * np.log(1 - p))
    wr = w * _reg_mask(len(w))
    return float(ce + lam * 0.5 * wr @ wr)


def gradient(w: np.ndarray, X: np.ndarray, y: np.ndarray, lam: float) -> np.ndarray:
    X = np.atleast_2d(X)
    y = np.asarray(y, dtype=float)
    p = sigmoid(X @ w)
    return X.T @ (p - y) / len(y) + lam * w * _reg_mask(len(w))


def momentum_update(m: ModelState, grad: np.ndarray, alpha: float, mu: float, literal: bool = False) -> ModelState:
    """One momentum step given a gradient: v <- mu v - alpha g; w <- w + v."""
    grad = np.asarray(grad, dtype=float)
    if not np.isfinite(grad).all():
        raise ClassifierError(f"non-finite gradient at iteration {m.t}")
    if literal:
        w = mu * m.w - alpha * grad
        return ModelState(w, m.v, m.t + 1)
    v = mu * m.v - alpha * grad
    return ModelState(m.w + v, v, m.t + 1)


def sgd_step(m: ModelState, X: np.ndarray, y: np.ndarray, cfg: TrainConfig) -> ModelState:
    if len(y) > cfg.batch_size:
        raise ValueError(f"batch of {len(y)} exceeds batch_size {cfg.batch_size}")
    return momentum_update(m, gradient(m.w, X, y, cfg.lam), cfg.alpha, cfg.mu, cfg.literal_update)


def accuracy(w: np.ndarray, X: np.ndarray, y: np.ndarray) -> float:
    if len(y) == 0:
        return float("nan")
    return float(np.mean((sigmoid(X @ w) > 0.5) == (np.asarray(y) == 1)))


@dataclass
class TrainingHistory:
    iteration: list[int] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)
    train_accuracy: list[float] = field(default_factory=list)
    validation_accuracy: list[float] = field(default_factory=list)

    def record(self, it, tl, ta, va):
        self.iteration.append(it)
        self.train_loss.append(tl)
        self.train_accuracy.append(ta)
        self.validation_accuracy.append(va)

    def to_csv(self, path: str | Path) -> None:
        lines = ["iteration,train_loss,train_accuracy,validation_accuracy"]
        for row in zip(self.iteration, self.train_loss, self.train_accuracy, self.validation_accuracy):
            lines.append(",".join([str(row[0])] + [f"{v:.10g}" for v in row[1:]]))
        Path(path).write_text("\n".join(lines) + "\n")


def train_matrix(X: np.ndarray, y: np.ndarray, cfg: TrainConfig = TrainConfig(),
                 X_val: np.ndarray | None = None, y_val: np.ndarray | None = None,
                 ) -> tuple[ModelState, TrainingHistory]:
    """Mini-batch momentum SGD on a design matrix (bias column included).

    Batches are drawn without replacement from a seeded per-epoch shuffle.
    Iteration 0 of the history is the initial state.
    """
    y = np.asarray(y)
    if len(np.unique(y)) < 2:
        raise ClassifierError("training split must contain both classes")
    rng = np.random.default_rng(cfg.rng_seed)
    m = ModelState.zeros(X.shape[1])
    hist = TrainingHistory()
    has_val = X_val is not None and y_val is not None and len(y_val) > 0

    def log(state):
        hist.record(state.t, loss(state.w, X, y, cfg.lam), accuracy(state.w, X, y),
                    accuracy(state.w, X_val, y_val) if has_val else float("nan"))

    log(m)
    order = np.empty(0, dtype=int)
    pos = 0
    for _ in range(cfg.max_iterations):
        if pos + cfg.batch_size > len(order):
            order = rng.permutation(len(y))
            pos = 0
        idx = order[pos:pos + cfg.batch_size]
        pos += cfg.batch_size
        m = sgd_step(m, X[idx], y[idx], cfg)
        log(m)
    return m, hist


@dataclass
class TrainedModel:
    state: ModelState
    scaler: Standardizer
    history: TrainingHistory


def train(ds: PatchDataset, cfg: TrainConfig = TrainConfig()) -> TrainedModel:
    """Train on the dataset's training split, tracking validation accuracy."""
    tr = ds.subset(TRAIN)
    va = ds.subset(VALIDATION)
    if len(set(tr.labels.tolist())) < 2:
        raise ClassifierError("training split must contain both classes")
    raw = feature_matrix(tr.patches)
    scaler = Standardizer.fit(raw)
    X = design_matrix(raw, scaler)
    Xv = design_matrix(feature_matrix(va.patches), scaler) if len(va) else None
    state, hist = train_matrix(X, tr.labels, cfg, Xv, va.labels if len(va) else None)
    return TrainedModel(state, scaler, hist)


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def save_model(m: ModelState, scaler: Standardizer, path: str | Path) -> None:
    """Versioned text format: header, then one real per line in three sections."""
    lines = [f"{MODEL_MAGIC} {MODEL_VERSION}", f"schema {SCHEMA_HASH}", f"iterations {m.t}"]
    for name, values in (("weights", m.w), ("feature_mean", scaler.mean), ("feature_std", scaler.std)):
        lines.append(f"{name} {len(values)}")
        lines += [repr(float(v)) for v in values]
    Path(path).write_text("\n".join(lines) + "\n")


def load_model(path: str | Path) -> tuple[ModelState, Standardizer]:
    try:
        lines = Path(path).read_text().split("\n")
    except OSError as exc:
        raise ClassifierError(f"cannot read model {path}: {exc}") from exc
    try:
        magic, version = lines[0].split()
        if magic != MODEL_MAGIC or int(version) != MODEL_VERSION:
            raise ClassifierError(f"{path}: not a version-{MODEL_VERSION} model file")
        if lines[1].split()[1] != SCHEMA_HASH:
            raise ClassifierError(f"{path}: feature schema mismatch")
        t = int(lines[2].split()[1])
        pos = 3
        sections = {}
        for expected in ("weights", "feature_mean", "feature_std"):
            name, n = lines[pos].split()
            if name != expected:
                raise ClassifierError(f"{path}: expected section {expected!r}, found {name!r}")
            n = int(n)
            sections[name] = np.array([float(v) for v in lines[pos + 1:pos + 1 + n]])
            if len(sections[name]) != n:
                raise ClassifierError(f"{path}: section {name} is truncated")
            pos += 1 + n
    except (ValueError, IndexError) as exc:
        raise ClassifierError(f"{path}: malformed model file: {exc}") from exc
    w = sections["weights"]
    if len(w) != N_FEATURES + 1 or len(sections["feature_mean"]) != N_FEATURES:
        raise ClassifierError(f"{path}: wrong vector lengths for the feature schema")
    return ModelState(w, np.zeros_like(w), t), Standardizer(sections["feature_mean"], sections["feature_std"])


# ---------------------------------------------------------------------------
# Classifier handles
# ---------------------------------------------------------------------------


class Classifier:
    """Probability-of-target for batches of RGB patches.

    ``calls`` counts patches scored over the handle's lifetime.
    """

    kind = "abstract"

    def __init__(self):
        self.calls = 0

    def predict_proba(self, patches: Sequence[np.ndarray]) -> np.ndarray:
        probs = np.asarray(self._predict(patches), dtype=float)
        if probs.shape != (len(patches),):
            raise ClassifierError(f"expected {len(patches)} probabilities, got shape {probs.shape}")
        if not np.isfinite(probs).all() or (probs < 0).any() or (probs > 1).any():
            raise ClassifierError("classifier returned probabilities outside [0, 1]")
        self.calls += len(patches)
        return probs

    def _predict(self, patches):
        raise NotImplementedError

    def close(self):
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class BuiltinClassifier(Classifier):
    kind = "builtin"

    def __init__(self, model: ModelState | None = None, scaler: Standardizer | None = None):
        super().__init__()
        self.model = model if model is not None else ModelState.zeros()
        self.scaler = scaler if scaler is not None else Standardizer.identity()

    @classmethod
    def from_file(cls, path: str | Path) -> "BuiltinClassifier":
        return cls(*load_model(path))

    @classmethod
    def from_trained(cls, tm: TrainedModel) -> "BuiltinClassifier":
        return cls(tm.state, tm.scaler)

    def _predict(self, patches):
        if len(patches) == 0:
            return np.zeros(0)
        return sigmoid(design_matrix(feature_matrix(patches), self.scaler) @ self.model.w)


class ConstantClassifier(Classifier):
    """Returns the same probability for every patch; a test fixture and baseline."""

    kind = "constant"

    def __init__(self, p: float):
        super().__init__()
        self.p = float(p)

    def _predict(self, patches):
        return np.full(len(patches), self.p)


class ExternalClassifier(Classifier):
    """Talks to a long-lived child process over stdin/stdout.

    Request: ``PREDICT <n>`` then n PNG paths, one per line.
    Response: exactly n lines, each a decimal probability in [0, 1].
    """

    kind = "external"

    def __init__(self, command: str | Sequence[str], cwd: str | Path | None = None, timeout: float = 300.0):
        super().__init__()
        self.command = shlex.split(command) if isinstance(command, str) else list(command)
        self.cwd = cwd
        self.timeout = timeout
        self._proc = None
        self._lock = threading.Lock()
        self._tmp = tempfile.TemporaryDirectory(prefix="shrubmap-ext-")

    def _ensure(self):
        if self._proc is None or self._proc.poll() is not None:
            try:
                self._proc = subprocess.Popen(
                    self.command, cwd=self.cwd, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                    text=True, bufsize=1,
                )
            except OSError as exc:
                raise ClassifierError(f"cannot start external classifier {self.command}: {exc}") from exc
        return self._proc

    def _predict(self, patches):
        if len(patches) == 0:
            return np.zeros(0)
        with self._lock:
            paths = []
            for i, p in enumerate(patches):
                path = os.path.join(self._tmp.name, f"{i:06d}.png")
                Image.fromarray(np.asarray(p, dtype=np.uint8)).save(path)
                paths.append(path)
            proc = self._ensure()
            try:
                proc.stdin.write(f"PREDICT {len(paths)}\n" + "".join(p + "\n" for p in paths))
                proc.stdin.flush()
            except (BrokenPipeError, OSError) as exc:
                raise ClassifierError(f"external classifier failed: {exc}") from exc
            lines = self._read_lines(proc, len(paths))
        out = []
        for ln in lines:
            if not ln.endswith("\n"):
                raise ClassifierError("external classifier closed its output early")
            try:
                v = float(ln.strip())
            except ValueError:
                raise ClassifierError(f"protocol violation: {ln.strip()!r} is not a probability") from None
            if not (np.isfinite(v) and 0 <= v <= 1):
                raise ClassifierError(f"protocol violation: probability {v} outside [0, 1]")
            out.append(v)
        return np.array(out)

    def _read_lines(self, proc, n: int) -> list[str]:
        """Read n response lines, killing the child if it exceeds ``timeout`` seconds."""
        lines: list[str] = []

        def reader():
            for _ in range(n):
                lines.append(proc.stdout.readline())

        t = threading.Thread(target=reader, daemon=True)
        t.start()
        t.join(self.timeout)
        if t.is_alive():
            proc.kill()
            t.join()
            self._proc = None
            raise ClassifierError(f"external classifier gave no answer within {self.timeout:g} s")
        return lines

    def close(self):
        if self._proc is not None:
            try:
                self._proc.stdin.close()
                self._proc.wait(timeout=5)
            except (OSError, subprocess.TimeoutExpired):
                self._proc.kill()
            self._proc = None
        self._tmp.cleanup()


def predict_proba(handle: Classifier, patches: Sequence[np.ndarray]) -> np.ndarray:
    return handle.predict_proba(patches)

