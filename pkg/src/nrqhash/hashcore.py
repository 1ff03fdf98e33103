"""Joint learning of a relaxed-orthogonality projection, a rotation, and sign codes.

The trained objective is

    J(W, R, B) = Tr{W^T X^T X W} - alpha * ||X W R - B||_F^2 - beta * penalty(W)

maximized by coordinate ascent over B (entrywise sign), R (orthogonal
Procrustes), and W (quasi-Newton, either the full matrix at once or one
column at a time). Columns are solved with the quartic surrogate

    J(z) = z^T Q z + 2 alpha u^T z - beta (z^T z)^2,
    Q = (1 - alpha) Cx - 2 beta W' W'^T + 2 beta I,

which differs from J by a constant when only that column varies. The rigid
baseline keeps W fixed at the top principal directions and alternates only
B and R.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .dataio import BinaryCodeMatrix, FeatureMatrix
from .numopt import (
    MaximizeResult,
    NonFiniteError,
    ObjectiveFn,
    SolverSettings,
    maximize,
    svd,
    top_eigenvectors,
)

REGULARIZERS = ("so", "dso", "mc")
VARIANTS = ("itq", "nrq", "snrq")

# Rotation init: alternation count used by the rigid baseline literature.
ITQ_INIT_ITERATIONS = 50

# Sharpness of the softmax surrogate that smooths the mutual-coherence max.
MC_SMOOTHMAX_TEMPERATURE = 1e4


@dataclass(frozen=True)
class TrainConfig:
    """Training knobs; ``validate`` enforces the constraints before a run."""

    bits: int
    variant: str = "snrq"
    alpha: float = 3.0
    beta: float = 0.01
    iterations: int = 70
    regularizer: str = "so"
    solver: SolverSettings = field(default_factory=SolverSettings)
    seed: int = 0

    def validate(self, dim: int | None = None) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}, expected one of {VARIANTS}")
        if self.regularizer not in REGULARIZERS:
            raise ValueError(f"unknown regularizer {self.regularizer!r}, expected one of {REGULARIZERS}")
        if self.bits < 1:
            raise ValueError(f"bits must be >= 1, got {self.bits}")
        if dim is not None and self.bits > dim:
            raise ValueError(f"need bits <= data dimension {dim}, got bits={self.bits}")
        if self.alpha <= 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if self.variant != "itq" and self.alpha <= 1.0:
            raise ValueError(
                f"alpha must be larger than 1 for variant {self.variant!r}, got {self.alpha}"
            )
        if self.beta <= 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if self.iterations < 0:
            raise ValueError(f"iterations must be >= 0, got {self.iterations}")
        if self.seed < 0:
            raise ValueError(f"seed must be non-negative, got {self.seed}")


@dataclass(frozen=True)
class HashModel:
    """The deployable artifact: projection, rotation, and the training mean."""

    projection: np.ndarray  # D x K
    rotation: np.ndarray  # K x K
    mean: np.ndarray  # D
    config: TrainConfig

    @property
    def dim(self) -> int:
        return self.projection.shape[0]

    @property
    def bits(self) -> int:
        return self.projection.shape[1]

    def validate(self) -> None:
        k = self.bits
        if self.rotation.shape != (k, k):
            raise ValueError(f"rotation shape {self.rotation.shape} != ({k}, {k})")
        if self.mean.shape != (self.dim,):
            raise ValueError(f"mean shape {self.mean.shape} != ({self.dim},)")
        for name, arr in (("projection", self.projection), ("rotation", self.rotation), ("mean", self.mean)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite entries")
        residual = np.linalg.norm(self.rotation.T @ self.rotation - np.eye(k))
        if residual > 1e-8:
            raise ValueError(f"rotation is not orthogonal (residual {residual:.3e})")


@dataclass(frozen=True)
class LossRecord:
    iteration: int
    objective: float
    quantization: float


@dataclass
class TrainerState:
    """Mutable alternating-optimization state; caches X^T X and X W."""

    projection: np.ndarray
    rotation: np.ndarray
    codes: BinaryCodeMatrix
    gram: np.ndarray
    projected: np.ndarray
    trace: list = field(default_factory=list)

    @classmethod
    def from_arrays(cls, data, projection, rotation, codes) -> "TrainerState":
        data = np.asarray(data, dtype=np.float64)
        projection = np.asarray(projection, dtype=np.float64)
        gram = data.T @ data
        gram = 0.5 * (gram + gram.T)
        if not isinstance(codes, BinaryCodeMatrix):
            codes = BinaryCodeMatrix(codes)
        return cls(
            projection=projection,
            rotation=np.asarray(rotation, dtype=np.float64),
            codes=codes,
            gram=gram,
            projected=data @ projection,
        )


def sign_codes(values: np.ndarray) -> np.ndarray:
    """Entrywise sign with sgn(0) = +1 so ties are deterministic."""
    return np.where(np.asarray(values, dtype=np.float64) >= 0.0, 1.0, -1.0)


def quantization_loss(projected, rotation, codes: BinaryCodeMatrix) -> float:
    """Squared Frobenius distance between the rotated projection and its codes."""
    projected = np.asarray(projected, dtype=np.float64)
    b = codes.signs
    if projected.shape != b.shape or rotation.shape != (b.shape[1], b.shape[1]):
        raise ValueError(
            f"shape mismatch: projected {projected.shape}, rotation {rotation.shape}, codes {b.shape}"
        )
    resid = projected @ rotation - b
    return float(np.einsum("ij,ij->", resid, resid))


def regularizer_penalty(w, kind: str) -> float:
    """Orthogonality relaxation penalty on the projection W.

    so:  ||W^T W - I_K||_F^2
    dso: the above plus ||W W^T - I_D||_F^2
    mc:  the squared largest absolute entry of W^T W - I_K
    """
    w = np.asarray(w, dtype=np.float64)
    m = w.T @ w - np.eye(w.shape[1])
    if kind == "so":
        return float(np.einsum("ij,ij->", m, m))
    if kind == "dso":
        md = w @ w.T - np.eye(w.shape[0])
        return float(np.einsum("ij,ij->", m, m) + np.einsum("ij,ij->", md, md))
    if kind == "mc":
        return float(np.max(np.abs(m)) ** 2)
    raise ValueError(f"unknown regularizer {kind!r}")


def regularizer_gradient(w, kind: str) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    m = w.T @ w - np.eye(w.shape[1])
    if kind == "so":
        return 4.0 * (w @ m)
    if kind == "dso":
        md = w @ w.T - np.eye(w.shape[0])
        return 4.0 * (w @ m) + 4.0 * (md @ w)
    if kind == "mc":
        # Gradient of the exact max through a sharp softmax; the value itself
        # stays exact. With nothing off orthogonal (m == 0) the max sits at 0
        # and the gradient vanishes.
        a = np.abs(m)
        peak = float(a.max())
        wts = np.exp(MC_SMOOTHMAX_TEMPERATURE * (a - peak))
        wts /= wts.sum()
        g = wts * np.sign(m)
        return 2.0 * peak * (w @ (g + g.T))
    raise ValueError(f"unknown regularizer {kind!r}")


def _objective_from_projected(projected, w, rotation, signs, alpha, beta, kind) -> float:
    resid = projected @ rotation - signs
    variance = float(np.einsum("ij,ij->", projected, projected))  # = Tr{W^T X^T X W}
    quant = float(np.einsum("ij,ij->", resid, resid))
    return variance - alpha * quant - beta * regularizer_penalty(w, kind)


def objective_value(state: TrainerState, config: TrainConfig) -> float:
    """The joint objective at the current state (uses the cached X W)."""
    return _objective_from_projected(
        state.projected,
        state.projection,
        state.rotation,
        state.codes.signs,
        config.alpha,
        config.beta,
        config.regularizer,
    )


def update_codes(projected, rotation) -> BinaryCodeMatrix:
    """The sign matrix maximizing Tr{(V R)^T B}: the entrywise sign of V R."""
    return BinaryCodeMatrix(sign_codes(np.asarray(projected) @ np.asarray(rotation)))


def update_rotation(projected, codes: BinaryCodeMatrix) -> np.ndarray:
    """Orthogonal Procrustes alignment of the projected data onto its codes."""
    projected = np.asarray(projected, dtype=np.float64)
    if projected.shape != codes.signs.shape:
        raise ValueError(f"shape mismatch: projected {projected.shape}, codes {codes.signs.shape}")
    left, _, right = svd(codes.signs.T @ projected)
    return right @ left.T


def full_projection_objective(data, rotation, codes: BinaryCodeMatrix, alpha, beta, kind) -> ObjectiveFn:
    """The joint objective over a flattened W with the rotation and codes fixed."""
    data = np.asarray(data, dtype=np.float64)
    signs = codes.signs
    dim = data.shape[1]
    k = rotation.shape[0]

    def value(wflat):
        w = wflat.reshape(dim, k)
        return _objective_from_projected(data @ w, w, rotation, signs, alpha, beta, kind)

    def gradient(wflat):
        w = wflat.reshape(dim, k)
        projected = data @ w
        resid = projected @ rotation - signs
        grad = 2.0 * (data.T @ (projected - alpha * (resid @ rotation.T)))
        grad -= beta * regularizer_gradient(w, kind)
        return grad.ravel()

    return ObjectiveFn(value, gradient)


def update_projection_full(state: TrainerState, data, config: TrainConfig) -> np.ndarray:
    """One quasi-Newton solve over the whole projection matrix (the direct variant)."""
    fobj = full_projection_objective(
        data, state.rotation, state.codes, config.alpha, config.beta, config.regularizer
    )
    result = maximize(fobj, state.projection.ravel().copy(), config.solver)
    return result.x.reshape(state.projection.shape)


def _assemble_column_quadratic(gram, other_outer, alpha, beta) -> np.ndarray:
    dim = gram.shape[0]
    q = (1.0 - alpha) * gram - 2.0 * beta * other_outer + 2.0 * beta * np.eye(dim)
    return 0.5 * (q + q.T)


def column_quadratic(gram, other_columns, alpha, beta) -> np.ndarray:
    """Quadratic coefficient matrix of the single-column subproblem."""
    gram = np.asarray(gram, dtype=np.float64)
    other = np.asarray(other_columns, dtype=np.float64)
    dim = gram.shape[0]
    if gram.shape != (dim, dim) or other.shape[0] != dim:
        raise ValueError(f"shape mismatch: gram {gram.shape}, other columns {other.shape}")
    return _assemble_column_quadratic(gram, other @ other.T, alpha, beta)


def column_objective(quad, linear, alpha, beta) -> ObjectiveFn:
    """The per-column objective z^T Q z + 2 alpha u^T z - beta (z^T z)^2."""
    quad = np.asarray(quad, dtype=np.float64)
    linear = np.asarray(linear, dtype=np.float64)

    def value(z):
        return float(z @ (quad @ z) + 2.0 * alpha * (linear @ z) - beta * (z @ z) ** 2)

    def gradient(z):
        return 2.0 * (quad @ z) + 2.0 * alpha * linear - 4.0 * beta * (z @ z) * z

    return ObjectiveFn(value, gradient)


def update_column(start, quad, linear, alpha, beta, solver: SolverSettings) -> np.ndarray:
    """Maximize one column's subproblem from the given start vector."""
    result = _solve_column(start, quad, linear, alpha, beta, solver)
    return result.x


def _solve_column(start, quad, linear, alpha, beta, solver) -> MaximizeResult:
    return maximize(column_objective(quad, linear, alpha, beta), np.asarray(start, dtype=np.float64).copy(), solver)


def update_projection_sequential(state: TrainerState, data, config: TrainConfig) -> np.ndarray:
    """One sweep of single-column solves in ascending column order.

    The cross term R B^T X is fixed for the whole sweep; the quadratic matrix
    is rebuilt per column from the freshest columns, so updates made earlier
    in the sweep feed the later solves.
    """
    data = np.asarray(data, dtype=np.float64)
    w = state.projection.copy()
    cross = state.rotation @ (state.codes.signs.T @ data)  # K x D
    outer = w @ w.T  # maintained by rank-1 updates so each column costs O(D^2)
    for k in range(w.shape[1]):
        z_old = w[:, k].copy()
        other_outer = outer - np.outer(z_old, z_old)
        quad = _assemble_column_quadratic(state.gram, other_outer, config.alpha, config.beta)
        result = _solve_column(w[:, k], quad, cross[k], config.alpha, config.beta, config.solver)
        w[:, k] = result.x
        outer = other_outer + np.outer(result.x, result.x)
    return w


def train_itq(projected, iterations: int, seed: int = 0) -> np.ndarray:
    """The rigid-baseline alternation: sign codes vs. Procrustes rotation.

    Starts from a seeded random orthogonal matrix (QR of a Gaussian draw with
    the diagonal sign fixed). The quantization loss is non-increasing at every
    step because each half-update is the exact minimizer given the other.
    """
    projected = np.asarray(projected, dtype=np.float64)
    k = projected.shape[1]
    rng = np.random.default_rng(seed)
    q, r = np.linalg.qr(rng.standard_normal((k, k)))
    rotation = q * np.where(np.diag(r) >= 0.0, 1.0, -1.0)
    for _ in range(iterations):
        codes = update_codes(projected, rotation)
        rotation = update_rotation(projected, codes)
    return rotation


def train(features: FeatureMatrix, config: TrainConfig, callback=None):
    """Run the full alternating optimization; returns (model, loss trace).

    The projection starts at the top principal directions of the centered
    data; the rotation starts from the rigid baseline's alternation. Each
    outer iteration updates the codes, then the rotation, then (for the
    non-rigid variants) the projection. ``callback(phase, iteration, state)``,
    when given, fires after each sub-step with phase one of "codes",
    "rotation", "projection", and "final".

    A solver failure mid-run stops the loop early with a warning; the model
    from the last consistent state is still returned.
    """
    if not features.centered:
        raise ValueError("training data must be centered first")
    if features.n < 2:
        raise ValueError(f"need at least 2 samples, got {features.n}")
    config.validate(features.dim)

    x = features.data
    gram = x.T @ x
    gram = 0.5 * (gram + gram.T)
    w = top_eigenvectors(gram, config.bits)
    v = x @ w
    if np.any(np.all(v == 0.0, axis=0)):
        warnings.warn("projected data has an all-zero column; its codes default to +1")

    rotation = train_itq(v, ITQ_INIT_ITERATIONS, config.seed)
    state = TrainerState(
        projection=w,
        rotation=rotation,
        codes=update_codes(v, rotation),
        gram=gram,
        projected=v,
    )
    _record(state, config, 0)

    for it in range(1, config.iterations + 1):
        state.codes = update_codes(state.projected, state.rotation)
        if callback:
            callback("codes", it, state)
        state.rotation = update_rotation(state.projected, state.codes)
        if callback:
            callback("rotation", it, state)
        if config.variant != "itq":
            update = update_projection_full if config.variant == "nrq" else update_projection_sequential
            try:
                state.projection = update(state, x, config)
            except NonFiniteError as exc:
                warnings.warn(f"projection solver failed at iteration {it} ({exc}); stopping early")
                break
            state.projected = x @ state.projection
            if callback:
                callback("projection", it, state)
        _record(state, config, it)

    # Refresh the codes so they match the final projection and rotation; this
    # is exactly what encode() computes for the training set.
    state.codes = update_codes(state.projected, state.rotation)
    if callback:
        callback("final", config.iterations, state)

    model = HashModel(
        projection=state.projection,
        rotation=state.rotation,
        mean=features.mean,
        config=config,
    )
    model.validate()
    return model, state.trace


def _record(state: TrainerState, config: TrainConfig, iteration: int) -> None:
    state.trace.append(
        LossRecord(
            iteration=iteration,
            objective=objective_value(state, config),
            quantization=quantization_loss(state.projected, state.rotation, state.codes),
        )
    )


def encode(model: HashModel, features: FeatureMatrix) -> BinaryCodeMatrix:
    """Codes for raw (uncentered) features: sign((X - mean) W R)."""
    if features.centered:
        raise ValueError("encode expects raw features; the model's training mean is applied here")
    if features.dim != model.dim:
        raise ValueError(f"feature dimension {features.dim} != model dimension {model.dim}")
    from .dataio import apply_center

    centered = apply_center(features, model.mean)
    return update_codes(centered.data @ model.projection, model.rotation)
