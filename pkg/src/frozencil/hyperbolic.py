"""Poincare-ball geometry and a learnable hyperbolic projection head.

Points live strictly inside the ball of radius 1/sqrt(c); every map
clips its result so sqrt(c)*||x|| <= 1 - 1e-5 and atanh arguments are
clamped at 1 - 1e-7. The projection maps an embedding z through a
learnable linear map followed by the exponential map at the origin; it
is trained with a prototypical distance-softmax loss and the Adam
optimizer from the mlp module, then frozen for all later tasks so
earlier prototypes stay valid.

Two algebraically identical distance forms are used: the public scalar
operation goes through Mobius addition and atanh, while the batched
training kernel and the analytic gradient use the arcosh form
arcosh(1 + 2c||x-y||^2 / ((1-c||x||^2)(1-c||y||^2))) / sqrt(c).

Checkpoint layout (little-endian):
    magic b"HYPP" | u32 version=1 | u32 p | u32 d | f64 curvature |
    f64 temperature | u8 normalize_input | A as float64 row-major.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DataError, DimensionError, FormatError
from .mlp import TrainConfig, adam_init, adam_step
from .prototypes import FeatureSpace

BALL_EPS = 1e-5  # clip sqrt(c)*norm at 1 - BALL_EPS
ATANH_EPS = 1e-7  # clamp atanh arguments at 1 - ATANH_EPS


def _clip_to_ball(x: np.ndarray, c: float) -> np.ndarray:
    """Rescale x (last axis = coordinates) so sqrt(c)*||x|| <= 1 - 1e-5."""
    norm = np.linalg.norm(x, axis=-1, keepdims=True)
    max_norm = (1.0 - BALL_EPS) / np.sqrt(c)
    scale = np.where(norm > max_norm, max_norm / np.maximum(norm, 1e-300), 1.0)
    return x * scale


def _atanh(arg):
    return np.arctanh(np.clip(arg, None, 1.0 - ATANH_EPS))


@dataclass(frozen=True)
class BallPoint:
    """A point strictly inside the Poincare ball of curvature c."""

    x: np.ndarray
    c: float = 1.0

    def __post_init__(self):
        if self.c <= 0:
            raise ConfigurationError(f"curvature must be > 0, got {self.c}")
        if np.sqrt(self.c) * np.linalg.norm(self.x) >= 1.0:
            raise ValueError("point lies on or outside the ball")

    @property
    def dim(self) -> int:
        return self.x.shape[0]


def _check_pair(x: BallPoint, y: BallPoint):
    if x.c != y.c:
        raise ConfigurationError(f"curvature mismatch: {x.c} vs {y.c}")
    if x.dim != y.dim:
        raise DimensionError(f"ball dimension mismatch: {x.dim} vs {y.dim}")


def _mobius_add(x: np.ndarray, y: np.ndarray, c: float) -> np.ndarray:
    xy = float(x @ y)
    xx = float(x @ x)
    yy = float(y @ y)
    num = (1.0 + 2.0 * c * xy + c * yy) * x + (1.0 - c * xx) * y
    den = 1.0 + 2.0 * c * xy + c * c * xx * yy
    return _clip_to_ball(num / den, c)


def mobius_add(x: BallPoint, y: BallPoint) -> BallPoint:
    """Mobius gyrovector addition, clipped back into the ball."""
    _check_pair(x, y)
    return BallPoint(_mobius_add(x.x, y.x, x.c), x.c)


def _exp0(v: np.ndarray, c: float) -> np.ndarray:
    norm = np.linalg.norm(v)
    if norm < 1e-15:
        return np.zeros_like(v)
    sq = np.sqrt(c)
    return _clip_to_ball(np.tanh(sq * norm) * v / (sq * norm), c)


def exp_map0(v: np.ndarray, c: float = 1.0) -> BallPoint:
    """Exponential map at the origin: tanh(sqrt(c)||v||) v / (sqrt(c)||v||)."""
    if c <= 0:
        raise ConfigurationError(f"curvature must be > 0, got {c}")
    v = np.asarray(v, dtype=np.float64)
    return BallPoint(_exp0(v, c), c)


def _log0(x: np.ndarray, c: float) -> np.ndarray:
    norm = np.linalg.norm(x)
    if norm < 1e-15:
        return np.zeros_like(x)
    sq = np.sqrt(c)
    return _atanh(sq * norm) * x / (sq * norm)


def log_map0(x: BallPoint) -> np.ndarray:
    """Logarithmic map at the origin; inverse of exp_map0 on the ball."""
    return _log0(np.asarray(x.x, dtype=np.float64), x.c)


def _distance(x: np.ndarray, y: np.ndarray, c: float) -> float:
    if np.array_equal(x, y):
        return 0.0  # exact identity axiom; Mobius cancellation leaves ~1e-17
    diff = _mobius_add(-x, y, c)
    return float(2.0 / np.sqrt(c) * _atanh(np.sqrt(c) * np.linalg.norm(diff)))


def poincare_distance(x: BallPoint, y: BallPoint) -> float:
    """Geodesic distance (2/sqrt(c)) atanh(sqrt(c) ||(-x) + y||_mobius)."""
    _check_pair(x, y)
    return _distance(x.x, y.x, x.c)


def _distance_matrix(X: np.ndarray, M: np.ndarray, c: float) -> np.ndarray:
    """All-pairs distances, arcosh form: X (B, p) vs M (C, p) -> (B, C)."""
    alpha = 1.0 - c * np.sum(X * X, axis=1)  # (B,)
    beta = 1.0 - c * np.sum(M * M, axis=1)  # (C,)
    sq = np.sum((X[:, None, :] - M[None, :, :]) ** 2, axis=2)  # (B, C)
    gamma = 1.0 + 2.0 * c * sq / (alpha[:, None] * beta[None, :])
    return np.arccosh(np.maximum(gamma, 1.0)) / np.sqrt(c)


@dataclass
class HypProjParams:
    """Learnable linear map into the ball, with fixed geometry knobs."""

    a: np.ndarray  # (p, d)
    curvature: float = 1.0
    temperature: float = 0.1
    normalize_input: bool = False

    def __post_init__(self):
        if self.curvature <= 0:
            raise ConfigurationError(f"curvature must be > 0, got {self.curvature}")
        if self.temperature <= 0:
            raise ConfigurationError(f"temperature must be > 0, got {self.temperature}")

    @property
    def ball_dim(self) -> int:
        return self.a.shape[0]

    @property
    def in_dim(self) -> int:
        return self.a.shape[1]

    def fingerprint(self) -> bytes:
        import hashlib

        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.a).tobytes())
        h.update(struct.pack("<ddB", self.curvature, self.temperature, self.normalize_input))
        return h.digest()


def init_hyp_projection(
    d: int,
    p: int = 128,
    curvature: float = 1.0,
    temperature: float = 0.1,
    seed: int = 0,
    normalize_input: bool = False,
    input_scale: float = 1.0,
) -> HypProjParams:
    """Seeded init of the projection matrix.

    ``input_scale`` should be the RMS norm of the (preprocessed) training
    embeddings; entries are N(0, 1/(input_scale^2 * p)) so initial
    projections have roughly unit tangent norm and land mid-ball instead
    of saturating tanh near the boundary.
    """
    if d < 1 or p < 1:
        raise ConfigurationError("d and p must be >= 1")
    if input_scale <= 0:
        raise ConfigurationError("input_scale must be > 0")
    rng = np.random.default_rng(seed)
    a = rng.normal(0.0, 1.0 / (input_scale * np.sqrt(p)), size=(p, d))
    return HypProjParams(
        a=a, curvature=curvature, temperature=temperature, normalize_input=normalize_input
    )


def _preprocess(params: HypProjParams, z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if params.normalize_input:
        from .projections import l2_normalize

        return l2_normalize(z)
    return z


def hyp_project(params: HypProjParams, z: np.ndarray) -> BallPoint:
    """Map an embedding into the ball: exp_map0(A z), clipped."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (params.in_dim,):
        raise DimensionError(f"input shape {z.shape}, projection expects ({params.in_dim},)")
    return exp_map0(params.a @ _preprocess(params, z), params.curvature)


def hyp_prototype(points) -> BallPoint:
    """Tangent-space mean: exp_map0 of the average log_map0 of the points."""
    points = list(points)
    if not points:
        raise ValueError("hyp_prototype needs at least one point")
    c = points[0].c
    for pt in points[1:]:
        if pt.c != c:
            raise ConfigurationError("points have mixed curvatures")
    tangent = np.mean([log_map0(pt) for pt in points], axis=0)
    return exp_map0(tangent, c)


# ---------------------------------------------------------------------------
# Projection training
# ---------------------------------------------------------------------------

def _project_batch(a: np.ndarray, U: np.ndarray, c: float):
    """exp_map0 of A u for every row of U, with the scalars needed by the
    exp-map jacobian: V = tangent vectors, r = row norms, s = tanh scale."""
    V = U @ a.T  # (B, p)
    r = np.linalg.norm(V, axis=1)
    sq = np.sqrt(c)
    safe_r = np.maximum(r, 1e-15)
    s = np.where(r < 1e-15, 1.0, np.tanh(sq * safe_r) / (sq * safe_r))
    X = _clip_to_ball(s[:, None] * V, c)
    return X, V, r, s


def _tangent_prototypes(a: np.ndarray, U: np.ndarray, y: np.ndarray, classes, c: float) -> np.ndarray:
    X = _project_batch(a, U, c)[0]
    protos = []
    for cls in classes:
        rows = X[y == cls]
        logs = np.array([_log0(row, c) for row in rows])
        protos.append(_exp0(logs.mean(axis=0), c))
    return np.array(protos)


def projection_loss_and_grad(
    params: HypProjParams, U: np.ndarray, y_local: np.ndarray, prototypes: np.ndarray
) -> tuple[float, np.ndarray]:
    """Prototypical cross-entropy with logits -d(proj(u), mu_c)/tau and its
    analytic gradient w.r.t. the projection matrix (prototypes fixed).

    ``U`` holds already-preprocessed input rows; ``prototypes`` is a
    (C, p) array of ball points; ``y_local`` indexes rows of it.
    """
    a = params.a
    c = params.curvature
    tau = params.temperature
    B = len(U)
    X, V, r, s = _project_batch(a, U, c)

    D = _distance_matrix(X, prototypes, c)  # (B, C)
    logits = -D / tau
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss = float(-np.mean(log_probs[np.arange(B), y_local]))

    probs = np.exp(log_probs)
    dD = probs.copy()
    dD[np.arange(B), y_local] -= 1.0
    dD *= -1.0 / (tau * B)  # dL/dD, shape (B, C)

    # dL/dX via the arcosh-form distance gradient
    alpha = 1.0 - c * np.sum(X * X, axis=1)  # (B,)
    beta = 1.0 - c * np.sum(prototypes * prototypes, axis=1)  # (C,)
    diff = X[:, None, :] - prototypes[None, :, :]  # (B, C, p)
    sqdiff = np.sum(diff * diff, axis=2)  # (B, C)
    gamma = 1.0 + 2.0 * c * sqdiff / (alpha[:, None] * beta[None, :])
    denom = np.sqrt(np.maximum(gamma * gamma - 1.0, 1e-30))
    coef = dD * (4.0 * c / np.sqrt(c)) / (alpha[:, None] ** 2 * beta[None, :] * denom)
    # sum over prototypes of coef * (alpha diff + c ||diff||^2 x)
    G = np.einsum("bc,bcp->bp", coef * alpha[:, None], diff)
    G += np.einsum("bc,bp->bp", coef * c * sqdiff, X)

    # back through exp_map0: dL/dV = s g + (s'(r)/r) <v, g> v
    sq = np.sqrt(c)
    safe_r = np.maximum(r, 1e-15)
    tanh_ar = np.tanh(sq * safe_r)
    ds = np.where(
        r < 1e-12,
        0.0,
        (sq * safe_r * (1.0 - tanh_ar**2) - tanh_ar) / (sq * safe_r**2),
    )
    vg = np.sum(V * G, axis=1)
    dV = s[:, None] * G + (ds / safe_r * vg)[:, None] * V
    dA = dV.T @ U
    return loss, dA


@dataclass
class HypTrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)


def train_hyp_projection(
    params: HypProjParams,
    train_view,
    cfg: TrainConfig,
    val_view=None,
    initial_prototypes: np.ndarray | None = None,
) -> tuple[HypProjParams, HypTrainHistory]:
    """Optimize the projection matrix on one task's training view.

    Class prototypes (tangent-space means under the current projection)
    are recomputed at each epoch boundary and held fixed within the
    epoch. The recorded per-epoch loss is the full-view loss after the
    epoch's updates, under freshly recomputed prototypes. The caller
    freezes the returned parameters for all later tasks.
    """
    if len(train_view.records) == 0:
        raise DataError("train view is empty")
    U = np.stack([_preprocess(params, r.embedding) for r in train_view.records])
    y_global = np.array([r.label for r in train_view.records])
    classes = sorted(set(int(v) for v in y_global))
    local = {cls: i for i, cls in enumerate(classes)}
    y = np.array([local[int(v)] for v in y_global])

    if val_view is not None and len(val_view.records) > 0:
        Uval = np.stack([_preprocess(params, r.embedding) for r in val_view.records])
        yval = np.array([local.get(int(r.label), -1) for r in val_view.records])
        if (yval < 0).any():
            raise DataError("val view contains classes absent from the train view")
    else:
        Uval = None

    c = params.curvature
    opt_params = {"a": params.a.copy()}
    state = adam_init(opt_params, lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    history = HypTrainHistory()
    n = len(U)

    for epoch in range(cfg.max_epochs):
        if epoch == 0 and initial_prototypes is not None:
            protos = np.asarray(initial_prototypes, dtype=np.float64)
        else:
            protos = _tangent_prototypes(opt_params["a"], U, y, range(len(classes)), c)
        perm = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            cur = replace(params, a=opt_params["a"])
            _, dA = projection_loss_and_grad(cur, U[idx], y[idx], protos)
            opt_params, state = adam_step(opt_params, {"a": dA}, state)

        cur = replace(params, a=opt_params["a"])
        protos = _tangent_prototypes(opt_params["a"], U, y, range(len(classes)), c)
        epoch_loss, _ = projection_loss_and_grad(cur, U, y, protos)
        history.train_loss.append(epoch_loss)
        if Uval is not None:
            val_loss, _ = projection_loss_and_grad(cur, Uval, yval, protos)
            history.val_loss.append(val_loss)

    return replace(params, a=opt_params["a"]), history


class HyperbolicSpace(FeatureSpace):
    """Prototype feature space over a (trained, frozen) ball projection."""

    def __init__(self, params: HypProjParams):
        self.params = params
        self.space_id = "hyperbolic+norm" if params.normalize_input else "hyperbolic"

    def preprocess(self, z):
        return _preprocess(self.params, z)

    def project(self, u):
        return _exp0(self.params.a @ np.asarray(u, dtype=np.float64), self.params.curvature)

    def mean(self, points):
        c = self.params.curvature
        logs = np.array([_log0(np.asarray(pt, dtype=np.float64), c) for pt in points])
        return _exp0(logs.mean(axis=0), c)

    def distance(self, a, b):
        return _distance(
            np.asarray(a, dtype=np.float64),
            np.asarray(b, dtype=np.float64),
            self.params.curvature,
        )


# ---------------------------------------------------------------------------
# Checkpointing
# ---------------------------------------------------------------------------

def save_hyp_projection(params: HypProjParams, path):
    p, d = params.a.shape
    with open(Path(path), "wb") as fh:
        fh.write(b"HYPP")
        fh.write(
            struct.pack(
                "<IIIddB", 1, p, d, params.curvature, params.temperature,
                int(params.normalize_input),
            )
        )
        fh.write(np.ascontiguousarray(params.a, dtype="<f8").tobytes())


def load_hyp_projection(path) -> HypProjParams:
    with open(Path(path), "rb") as fh:
        if fh.read(4) != b"HYPP":
            raise FormatError("bad hyperbolic checkpoint magic")
        version, p, d, curvature, temperature, normalize = struct.unpack(
            "<IIIddB", fh.read(29)
        )
        if version != 1:
            raise FormatError(f"unsupported checkpoint version {version}")
        a = np.frombuffer(fh.read(8 * p * d), dtype="<f8").reshape(p, d).copy()
    return HypProjParams(
        a=a, curvature=curvature, temperature=temperature, normalize_input=bool(normalize)
    )
