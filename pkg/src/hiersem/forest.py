"""Random forest of axis-aligned Gini decision trees.

Each tree is grown on its own bootstrap sample drawn from a generator
seeded by ``(rng_seed, tree_index)``, so serial and parallel training
build identical forests and out-of-bag membership can be replayed.
"""

from __future__ import annotations

import io
import json
import math
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import InputError

MAGIC = b"RFOR"
VERSION = 1
_TIE = 1e-12


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 500
    max_depth: int | None = None
    min_samples_leaf: int = 1
    features_per_split: int | None = None  # None means ceil(sqrt(d))
    bootstrap: bool = True
    class_weight: str | None = None  # None or "balanced"
    rng_seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.max_depth is not None and self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")
        if self.class_weight not in (None, "balanced"):
            raise ValueError(f"unknown class_weight {self.class_weight!r}")

    def mtry(self, d: int) -> int:
        m = self.features_per_split if self.features_per_split is not None else math.ceil(math.sqrt(d))
        if not 1 <= m <= d:
            raise ValueError(f"features_per_split {m} outside [1, {d}]")
        return m


@dataclass
class Tree:
    """Preorder node arrays; ``feature[i] == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    counts: np.ndarray  # (n_nodes, K) uint64, meaningful at leaves

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def n_leaves(self) -> int:
        return int((self.feature < 0).sum())

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index reached by every row of ``X``."""
        node = np.zeros(len(X), dtype=np.int64)
        rows = np.arange(len(X))
        active = self.feature[node] >= 0
        while active.any():
            r = rows[active]
            nd = node[r]
            go_left = X[r, self.feature[nd]] <= self.threshold[nd]
            node[r] = np.where(go_left, self.left[nd], self.right[nd])
            active[r] = self.feature[node[r]] >= 0
        return node


@dataclass
class Forest:
    config: ForestConfig
    n_classes: int
    n_features: int
    trees: list
    class_weights: np.ndarray
    n_train: int = 0
    metadata: dict = field(default_factory=dict)


def _class_weights(y: np.ndarray, K: int, mode) -> np.ndarray:
    if mode is None:
        return np.ones(K)
    freq = np.bincount(y, minlength=K).astype(float)
    w = np.zeros(K)
    nz = freq > 0
    w[nz] = len(y) / (nz.sum() * freq[nz])
    return w


def _best_split(Xn: np.ndarray, yn: np.ndarray, feats: np.ndarray, cw: np.ndarray, K: int, min_leaf: int):
    """Best (feature, threshold, impurity) over candidate features, or None."""
    m = len(yn)
    sub = Xn[:, feats]
    order = np.argsort(sub, axis=0, kind="stable")
    xs = np.take_along_axis(sub, order, axis=0)
    onehot = np.zeros((m, K))
    onehot[np.arange(m), yn] = cw[yn]
    cum = np.cumsum(onehot[order], axis=0)[:-1]  # (m-1, f, K): left weights after position i
    total = onehot.sum(axis=0)
    right = total - cum
    wl = cum.sum(axis=2)
    wr = right.sum(axis=2)
    wt = total.sum()
    with np.errstate(divide="ignore", invalid="ignore"):
        imp = (wl - (cum**2).sum(axis=2) / wl + wr - (right**2).sum(axis=2) / wr) / wt
    pos = np.arange(1, m)[:, None]
    ok = (xs[1:] > xs[:-1]) & (pos >= min_leaf) & (m - pos >= min_leaf) & (wl > 0) & (wr > 0)
    imp = np.where(ok, imp, np.inf)
    best = imp.min()
    if not np.isfinite(best):
        return None
    # lowest feature index, then lowest threshold, among near-ties
    col = int(np.flatnonzero((imp <= best + _TIE).any(axis=0))[0])
    i = int(np.flatnonzero(imp[:, col] <= best + _TIE)[0])
    thr = 0.5 * (xs[i, col] + xs[i + 1, col])
    if not thr < xs[i + 1, col]:  # adjacent floats: midpoint rounds up
        thr = xs[i, col]
    return int(feats[col]), float(thr), float(imp[i, col])


def _gini(w: np.ndarray) -> float:
    s = w.sum()
    return float(1.0 - ((w / s) ** 2).sum()) if s > 0 else 0.0


def grow_tree(X: np.ndarray, y: np.ndarray, K: int, cfg: ForestConfig, index: int, cw: np.ndarray) -> Tree:
    n, d = X.shape
    rng = np.random.default_rng([cfg.rng_seed, index])
    sample = rng.integers(0, n, n) if cfg.bootstrap else np.arange(n)
    mtry = cfg.mtry(d)
    feature, threshold, left, right, counts = [], [], [], [], []
    # stack entries: (sample indices, depth, parent node, is_left)
    stack = [(sample, 0, -1, False)]
    while stack:
        idx, depth, parent, is_left = stack.pop()
        node = len(feature)
        if parent >= 0:
            (left if is_left else right)[parent] = node
        yn = y[idx]
        raw = np.bincount(yn, minlength=K)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        counts.append(raw)
        if (
            (raw > 0).sum() <= 1
            or len(idx) < 2 * cfg.min_samples_leaf
            or (cfg.max_depth is not None and depth >= cfg.max_depth)
        ):
            continue
        feats = np.sort(rng.choice(d, size=mtry, replace=False))
        split = _best_split(X[idx], yn, feats, cw, K, cfg.min_samples_leaf)
        if split is None:
            continue
        f, thr, imp = split
        if not imp < _gini(raw * cw) - _TIE:
            continue
        feature[node] = f
        threshold[node] = thr
        go_left = X[idx, f] <= thr
        # right pushed first so the left subtree is numbered first (preorder)
        stack.append((idx[~go_left], depth + 1, node, False))
        stack.append((idx[go_left], depth + 1, node, True))
    return Tree(
        np.array(feature, dtype=np.int64),
        np.array(threshold, dtype=np.float64),
        np.array(left, dtype=np.int64),
        np.array(right, dtype=np.int64),
        np.array(counts, dtype=np.uint64).reshape(-1, K),
    )


_shared = {}


def _init_worker(X, y, K, cfg, cw):
    _shared.update(X=X, y=y, K=K, cfg=cfg, cw=cw)


def _grow_shared(index):
    s = _shared
    return grow_tree(s["X"], s["y"], s["K"], s["cfg"], index, s["cw"])


def _check_features(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise InputError(f"feature matrix must be 2-D, got shape {X.shape}")
    if not np.isfinite(X).all():
        raise InputError("feature matrix contains non-finite values")
    return X


def train(X, y, cfg: ForestConfig | None = None, n_classes: int | None = None, jobs: int = 1) -> Forest:
    """Fit a forest on ``X`` (n, d) with integer labels ``y`` in ``[0, K)``."""
    cfg = cfg or ForestConfig()
    X = _check_features(X)
    y = np.asarray(y)
    if len(X) == 0:
        raise InputError("empty training set")
    if y.shape != (len(X),):
        raise InputError(f"{len(y)} labels for {len(X)} samples")
    if not np.issubdtype(y.dtype, np.integer):
        if not np.all(np.equal(np.mod(y, 1), 0)):
            raise InputError("labels must be integers")
    y = y.astype(np.int64)
    K = int(n_classes if n_classes is not None else y.max() + 1)
    if y.min() < 0 or y.max() >= K:
        raise InputError(f"labels outside [0, {K})")
    cfg.mtry(X.shape[1])
    cw = _class_weights(y, K, cfg.class_weight)
    if jobs > 1 and cfg.n_trees > 1:
        with ProcessPoolExecutor(jobs, initializer=_init_worker, initargs=(X, y, K, cfg, cw)) as ex:
            trees = list(ex.map(_grow_shared, range(cfg.n_trees), chunksize=8))
    else:
        trees = [grow_tree(X, y, K, cfg, i, cw) for i in range(cfg.n_trees)]
    return Forest(cfg, K, X.shape[1], trees, cw, n_train=len(X))


def _tree_posteriors(f: Forest, tree: Tree, X: np.ndarray) -> np.ndarray:
    w = tree.counts[tree.apply(X)].astype(np.float64) * f.class_weights
    return w / w.sum(axis=1, keepdims=True)


def predict_proba(f: Forest, X) -> np.ndarray:
    """Mean of per-tree normalized leaf counts, shape (n, K)."""
    X = _check_features(np.atleast_2d(X))
    if X.shape[1] != f.n_features:
        raise InputError(f"expected {f.n_features} features, got {X.shape[1]}")
    acc = np.zeros((len(X), f.n_classes))
    for t in f.trees:
        acc += _tree_posteriors(f, t, X)
    return acc / len(f.trees)


def predict(f: Forest, v):
    """Classify one vector: ``(class id, posterior)``; ties go to the lowest id."""
    p = predict_proba(f, np.asarray(v, dtype=float).reshape(1, -1))[0]
    return int(np.argmax(p)), p


def predict_many(f: Forest, X) -> tuple[np.ndarray, np.ndarray]:
    p = predict_proba(f, X)
    return np.argmax(p, axis=1), p


def bootstrap_sample(cfg: ForestConfig, index: int, n: int) -> np.ndarray:
    rng = np.random.default_rng([cfg.rng_seed, index])
    return rng.integers(0, n, n)


def oob_error(f: Forest, X, y) -> float:
    """Misclassification rate using, per sample, only trees that never saw it."""
    if not f.config.bootstrap:
        raise InputError("out-of-bag error needs bootstrap training")
    X = _check_features(X)
    y = np.asarray(y, dtype=np.int64)
    n = len(X)
    if n != f.n_train:
        raise InputError(f"forest was trained on {f.n_train} samples, got {n}")
    acc = np.zeros((n, f.n_classes))
    votes = np.zeros(n, dtype=np.int64)
    for i, t in enumerate(f.trees):
        inbag = np.zeros(n, dtype=bool)
        inbag[bootstrap_sample(f.config, i, n)] = True
        out = ~inbag
        if out.any():
            acc[out] += _tree_posteriors(f, t, X[out])
            votes[out] += 1
    has = votes > 0
    if not has.any():
        return 0.0
    pred = np.argmax(acc[has], axis=1)
    return float(np.mean(pred != y[has]))


# -- serialization -----------------------------------------------------------

_HEADER = struct.Struct("<4sIIIIiIIBBQQ")


def dumps(f: Forest) -> bytes:
    c = f.config
    buf = io.BytesIO()
    buf.write(
        _HEADER.pack(
            MAGIC,
            VERSION,
            f.n_features,
            f.n_classes,
            c.n_trees,
            -1 if c.max_depth is None else c.max_depth,
            c.min_samples_leaf,
            c.mtry(f.n_features),
            int(c.bootstrap),
            int(c.class_weight == "balanced"),
            c.rng_seed,
            f.n_train,
        )
    )
    buf.write(np.asarray(f.class_weights, dtype="<f8").tobytes())
    buf.write(struct.pack("<I", len(f.trees)))
    for t in f.trees:
        buf.write(struct.pack("<I", t.n_nodes))
        for i in range(t.n_nodes):
            if t.feature[i] >= 0:
                buf.write(struct.pack("<BId", 0, int(t.feature[i]), float(t.threshold[i])))
            else:
                buf.write(b"\x01")
                buf.write(t.counts[i].astype("<u8").tobytes())
    meta = json.dumps(f.metadata, sort_keys=True).encode()
    buf.write(struct.pack("<I", len(meta)))
    buf.write(meta)
    return buf.getvalue()


def loads(data: bytes) -> Forest:
    if data[:4] != MAGIC:
        raise InputError("not a forest model file")
    (_, version, d, K, n_trees, max_depth, min_leaf, mtry, boot, balanced, seed, n_train) = _HEADER.unpack_from(
        data, 0
    )
    if version != VERSION:
        raise InputError(f"unsupported model version {version}")
    pos = _HEADER.size
    cw = np.frombuffer(data, dtype="<f8", count=K, offset=pos).astype(np.float64)
    pos += 8 * K
    cfg = ForestConfig(
        n_trees=n_trees,
        max_depth=None if max_depth < 0 else max_depth,
        min_samples_leaf=min_leaf,
        features_per_split=mtry,
        bootstrap=bool(boot),
        class_weight="balanced" if balanced else None,
        rng_seed=seed,
    )
    (count,) = struct.unpack_from("<I", data, pos)
    pos += 4
    trees = []
    for _ in range(count):
        (nn,) = struct.unpack_from("<I", data, pos)
        pos += 4
        feature = np.full(nn, -1, dtype=np.int64)
        threshold = np.zeros(nn)
        counts = np.zeros((nn, K), dtype=np.uint64)
        for i in range(nn):
            tag = data[pos]
            if tag == 0:
                _, feature[i], threshold[i] = struct.unpack_from("<BId", data, pos)
                pos += 13
            else:
                counts[i] = np.frombuffer(data, dtype="<u8", count=K, offset=pos + 1)
                pos += 1 + 8 * K
        left, right = _link_preorder(feature)
        trees.append(Tree(feature, threshold, left, right, counts))
    (mlen,) = struct.unpack_from("<I", data, pos)
    pos += 4
    meta = json.loads(data[pos : pos + mlen]) if mlen else {}
    return Forest(cfg, K, d, trees, cw, n_train=n_train, metadata=meta)


def _link_preorder(feature: np.ndarray):
    """Recover child links from a preorder stream of internal/leaf markers."""
    n = len(feature)
    left = np.full(n, -1, dtype=np.int64)
    right = np.full(n, -1, dtype=np.int64)
    pending = []  # internal nodes still waiting for their right child
    for i in range(n):
        if i > 0:
            p = i - 1
            if feature[p] >= 0 and left[p] < 0:
                left[p] = i
            else:
                right[pending.pop()] = i
        if feature[i] >= 0:
            pending.append(i)
    return left, right


def save(f: Forest, path) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(f))


def load(path) -> Forest:
    with open(path, "rb") as fh:
        return loads(fh.read())


def config_dict(cfg: ForestConfig) -> dict:
    return asdict(cfg)
