"""Per-task MLP classifier heads: forward pass, backprop, Adam, training.

Each head is a two-hidden-layer ReLU network with a softmax output over
the classes of one task. Global inference concatenates the softmax
blocks of all heads and takes the argmax, so earlier heads are never
touched again after their task finishes.

Head checkpoint layout (little-endian, all in one blob):
    magic b"MLPH" | u32 version=1 | u32 d | u32 h1 | u32 h2 | u32 k |
    k x u32 class_ids | W1 | b1 | W2 | b2 | W3 | b3 as float32 row-major.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DataError, DimensionError, FormatError

Params = dict[str, np.ndarray]

_PARAM_ORDER = ("w1", "b1", "w2", "b2", "w3", "b3")


@dataclass
class MlpHead:
    """Weights of one task head plus the global class indices it covers."""

    w1: np.ndarray  # (h1, d)
    b1: np.ndarray  # (h1,)
    w2: np.ndarray  # (h2, h1)
    b2: np.ndarray  # (h2,)
    w3: np.ndarray  # (k, h2)
    b3: np.ndarray  # (k,)
    class_ids: tuple[int, ...]

    def __post_init__(self):
        h1, d = self.w1.shape
        h2 = self.w2.shape[0]
        k = self.w3.shape[0]
        if self.w2.shape != (h2, h1) or self.w3.shape != (k, h2):
            raise DimensionError("weight matrices are mutually inconsistent")
        if self.b1.shape != (h1,) or self.b2.shape != (h2,) or self.b3.shape != (k,):
            raise DimensionError("bias shapes do not match weight matrices")
        if len(self.class_ids) != k:
            raise DimensionError(f"{len(self.class_ids)} class_ids for {k} outputs")
        if len(set(self.class_ids)) != len(self.class_ids):
            raise ConfigurationError("class_ids must be unique")

    @property
    def dim(self) -> int:
        return self.w1.shape[1]

    @property
    def n_classes(self) -> int:
        return self.w3.shape[0]

    def params(self) -> Params:
        return {name: getattr(self, name) for name in _PARAM_ORDER}

    def with_params(self, params: Params) -> "MlpHead":
        return replace(self, **{name: params[name] for name in _PARAM_ORDER})

    def fingerprint(self) -> bytes:
        """Hashable byte digest of all parameters (for frozen-past checks)."""
        import hashlib

        h = hashlib.sha256()
        for name in _PARAM_ORDER:
            h.update(np.ascontiguousarray(getattr(self, name)).tobytes())
        h.update(repr(self.class_ids).encode())
        return h.digest()


@dataclass
class AdamState:
    """Adam moment accumulators for one parameter set."""

    m: Params
    v: Params
    step_count: int = 0
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class TrainConfig:
    lr: float = 0.001
    batch_size: int = 200
    max_epochs: int = 200
    patience: int = 20
    hidden_dims: tuple[int, int] = (256, 128)
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ConfigurationError("batch_size, max_epochs, patience must be >= 1")


@dataclass
class TrainHistory:
    """Per-epoch training record returned by ``train_head``."""

    train_loss: list[float] = field(default_factory=list)
    val_accuracy: list[float] = field(default_factory=list)
    best_val_accuracy: list[float] = field(default_factory=list)
    best_epoch: int = 0
    stopped_epoch: int = 0
    warnings: list[str] = field(default_factory=list)


def init_head(
    d: int, hidden: tuple[int, int], class_ids, seed: int = 0
) -> MlpHead:
    """Kaiming-style head init: weight entries ~ N(0, 2/fan_in), zero biases."""
    class_ids = tuple(int(c) for c in class_ids)
    if not class_ids:
        raise ConfigurationError("class_ids must be non-empty")
    h1, h2 = hidden
    if d < 1 or h1 < 1 or h2 < 1:
        raise ConfigurationError("d and hidden dims must be >= 1")
    k = len(class_ids)
    rng = np.random.default_rng(seed)
    return MlpHead(
        w1=rng.normal(0.0, np.sqrt(2.0 / d), size=(h1, d)),
        b1=np.zeros(h1),
        w2=rng.normal(0.0, np.sqrt(2.0 / h1), size=(h2, h1)),
        b2=np.zeros(h2),
        w3=rng.normal(0.0, np.sqrt(2.0 / h2), size=(k, h2)),
        b3=np.zeros(k),
        class_ids=class_ids,
    )


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _forward_batch(head: MlpHead, Z: np.ndarray):
    """Forward pass over a (B, d) batch, keeping intermediates for backprop."""
    a1 = Z @ head.w1.T + head.b1
    r1 = np.maximum(a1, 0.0)
    a2 = r1 @ head.w2.T + head.b2
    r2 = np.maximum(a2, 0.0)
    logits = r2 @ head.w3.T + head.b3
    return a1, r1, a2, r2, logits, _softmax(logits)


def head_forward(head: MlpHead, z: np.ndarray) -> np.ndarray:
    """Softmax probabilities of one head for a single embedding."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (head.dim,):
        raise DimensionError(f"input shape {z.shape}, head expects ({head.dim},)")
    return _forward_batch(head, z[None, :])[-1][0]


def _plain_accuracy(head: MlpHead, Z: np.ndarray, y_local: np.ndarray) -> float:
    probs = _forward_batch(head, Z)[-1]
    return float(np.mean(probs.argmax(axis=1) == y_local))


def loss_and_grad(head: MlpHead, batch) -> tuple[float, Params]:
    """Mean cross-entropy over a batch of (embedding, local label) pairs,
    with exact analytic gradients for every head parameter."""
    if len(batch) == 0:
        raise ValueError("batch must be non-empty")
    Z = np.stack([np.asarray(z, dtype=np.float64) for z, _ in batch])
    y = np.array([label for _, label in batch], dtype=np.int64)
    if Z.shape[1] != head.dim:
        raise DimensionError(f"batch dim {Z.shape[1]}, head expects {head.dim}")
    if (y < 0).any() or (y >= head.n_classes).any():
        raise ValueError("local label outside head range")
    B = len(y)

    a1, r1, a2, r2, logits, probs = _forward_batch(head, Z)
    # log-softmax form keeps the loss finite even when probs saturate
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss = float(-np.mean(log_probs[np.arange(B), y]))

    dlogits = probs.copy()
    dlogits[np.arange(B), y] -= 1.0
    dlogits /= B
    grads: Params = {}
    grads["w3"] = dlogits.T @ r2
    grads["b3"] = dlogits.sum(axis=0)
    dr2 = dlogits @ head.w3
    da2 = dr2 * (a2 > 0)
    grads["w2"] = da2.T @ r1
    grads["b2"] = da2.sum(axis=0)
    dr1 = da2 @ head.w2
    da1 = dr1 * (a1 > 0)
    grads["w1"] = da1.T @ Z
    grads["b1"] = da1.sum(axis=0)
    return loss, grads


def adam_init(params: Params, lr: float = 0.001) -> AdamState:
    return AdamState(
        m={k: np.zeros_like(v) for k, v in params.items()},
        v={k: np.zeros_like(v) for k, v in params.items()},
        lr=lr,
    )


def adam_step(params: Params, grads: Params, state: AdamState) -> tuple[Params, AdamState]:
    """One Adam update with bias correction; returns fresh params and state."""
    if set(params) != set(grads) or set(params) != set(state.m):
        raise DimensionError("params, grads and state cover different parameter sets")
    t = state.step_count + 1
    new_params: Params = {}
    new_m: Params = {}
    new_v: Params = {}
    for key, p in params.items():
        g = grads[key]
        if g.shape != p.shape:
            raise DimensionError(f"grad shape {g.shape} != param shape {p.shape} for {key!r}")
        m = state.beta1 * state.m[key] + (1 - state.beta1) * g
        v = state.beta2 * state.v[key] + (1 - state.beta2) * g * g
        m_hat = m / (1 - state.beta1**t)
        v_hat = v / (1 - state.beta2**t)
        new_params[key] = p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        new_m[key] = m
        new_v[key] = v
    new_state = AdamState(
        m=new_m, v=new_v, step_count=t,
        lr=state.lr, beta1=state.beta1, beta2=state.beta2, eps=state.eps,
    )
    return new_params, new_state


def train_head(d: int, class_ids, train_view, val_view, cfg: TrainConfig):
    """Train one task head with mini-batch Adam and early stopping.

    Labels are remapped to local indices by ``class_ids`` order. After each
    epoch, plain accuracy on the val view is recorded; training stops when
    it has not improved for ``cfg.patience`` epochs (or at max_epochs) and
    the weights of the best-val-accuracy epoch are returned. An empty val
    view disables early stopping and trains the full epoch budget.
    """
    class_ids = tuple(int(c) for c in class_ids)
    if len(train_view.records) == 0:
        raise DataError("train view is empty")
    local = {c: i for i, c in enumerate(class_ids)}
    try:
        Ztr = train_view.embeddings()
        ytr = np.array([local[r.label] for r in train_view.records], dtype=np.int64)
    except KeyError as exc:
        raise DataError(f"train label {exc.args[0]} not in class_ids") from None

    history = TrainHistory()
    use_early_stop = len(val_view.records) > 0
    if use_early_stop:
        Zval = val_view.embeddings()
        yval = np.array([local[r.label] for r in val_view.records], dtype=np.int64)
    else:
        msg = "val view is empty: early stopping disabled, training full max_epochs"
        warnings.warn(msg)
        history.warnings.append(msg)

    head = init_head(d, cfg.hidden_dims, class_ids, seed=cfg.seed)
    params = head.params()
    state = adam_init(params, lr=cfg.lr)
    shuffle_rng = np.random.default_rng(cfg.seed)

    best_acc = -1.0
    best_params = {k: v.copy() for k, v in params.items()}
    best_epoch = 0
    epochs_since_improve = 0
    n = len(ytr)

    for epoch in range(1, cfg.max_epochs + 1):
        perm = shuffle_rng.permutation(n)
        epoch_losses = []
        for start in range(0, n, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            batch = [(Ztr[i], int(ytr[i])) for i in idx]
            loss, grads = loss_and_grad(head.with_params(params), batch)
            params, state = adam_step(params, grads, state)
            epoch_losses.append(loss * len(idx))
        history.train_loss.append(float(np.sum(epoch_losses) / n))

        if use_early_stop:
            acc = _plain_accuracy(head.with_params(params), Zval, yval)
            history.val_accuracy.append(acc)
            # ties keep the later (more-trained) weights, but only a strict
            # improvement resets the patience counter
            if acc >= best_acc:
                best_params = {k: v.copy() for k, v in params.items()}
                best_epoch = epoch
            if acc > best_acc:
                best_acc = acc
                epochs_since_improve = 0
            else:
                epochs_since_improve += 1
            history.best_val_accuracy.append(best_acc)
            if epochs_since_improve >= cfg.patience:
                history.stopped_epoch = epoch
                break
        else:
            best_params = params
            best_epoch = epoch
    else:
        history.stopped_epoch = cfg.max_epochs

    history.best_epoch = best_epoch
    return head.with_params(best_params), history


def predict_global(heads, z: np.ndarray) -> tuple[int, np.ndarray]:
    """Concatenated-softmax inference across all task heads.

    Each head's block is its own softmax output (blocks are not
    re-normalized against each other). The returned class is the global
    argmax; exact ties go to the lowest global class index.
    """
    heads = list(heads)
    if not heads:
        raise ConfigurationError("predict_global needs at least one head")
    seen: set[int] = set()
    for head in heads:
        overlap = seen & set(head.class_ids)
        if overlap:
            raise ConfigurationError(f"heads share class ids {sorted(overlap)}")
        seen |= set(head.class_ids)

    blocks = [head_forward(head, z) for head in heads]
    concat = np.concatenate(blocks)
    all_ids = [c for head in heads for c in head.class_ids]
    best = concat.max()
    winner = min(cid for cid, p in zip(all_ids, concat) if p == best)
    return winner, concat


# ---------------------------------------------------------------------------
# Checkpointing
# ---------------------------------------------------------------------------

_HEAD_MAGIC = b"MLPH"


def save_head(head: MlpHead, path):
    with open(Path(path), "wb") as fh:
        h1, d = head.w1.shape
        h2 = head.w2.shape[0]
        k = head.n_classes
        fh.write(_HEAD_MAGIC)
        fh.write(struct.pack("<IIIII", 1, d, h1, h2, k))
        fh.write(struct.pack(f"<{k}I", *head.class_ids))
        for name in _PARAM_ORDER:
            fh.write(np.ascontiguousarray(getattr(head, name), dtype="<f4").tobytes())


def load_head(path) -> MlpHead:
    with open(Path(path), "rb") as fh:
        if fh.read(4) != _HEAD_MAGIC:
            raise FormatError("bad head checkpoint magic")
        version, d, h1, h2, k = struct.unpack("<IIIII", fh.read(20))
        if version != 1:
            raise FormatError(f"unsupported head checkpoint version {version}")
        class_ids = struct.unpack(f"<{k}I", fh.read(4 * k))
        shapes = {
            "w1": (h1, d), "b1": (h1,), "w2": (h2, h1),
            "b2": (h2,), "w3": (k, h2), "b3": (k,),
        }
        arrays = {}
        for name in _PARAM_ORDER:
            shape = shapes[name]
            count = int(np.prod(shape))
            buf = fh.read(4 * count)
            if len(buf) != 4 * count:
                raise FormatError("truncated head checkpoint")
            arrays[name] = np.frombuffer(buf, dtype="<f4").astype(np.float64).reshape(shape)
    return MlpHead(class_ids=tuple(int(c) for c in class_ids), **arrays)
