"""Hashing RBM trained with contrastive divergence and a batch entropy regularizer.

The RBM has I visible and J hidden logistic units,

    P(z_j = 1 | x) = sigmoid(W_j . x + b_j)
    P(x_i = 1 | z) = sigmoid(W[:, i] . z + c_i)

Training maximizes  log-likelihood + lam * h(B)  over each batch B, where

    h(B) = sum_{alpha, j} t_ja log z_ja + (1 - t_ja) log(1 - z_ja)

pulls the data-driven hidden probabilities z towards targets t drawn i.i.d.
from U(0, 1).  This keeps every bit near 50% activation across images and
within each hash.  Hashes are the hidden probabilities thresholded at 0.5.

Real-valued inputs are fed to binary-visible units; the negative phase uses
mean-field visible probabilities and sampled hidden states.  :class:`RbmHasher`
first maps each input dimension onto [0, 1] with a min/max range fitted on the
training set, so descriptors look like visible-unit probabilities.
"""
from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import expit, logsumexp

from .errors import DimError, NumericalDivergence, OracleTooLarge
from .postproc import pack_bits

CLAMP = 1e-7
ORACLE_MAX_UNITS = 12


def sigmoid(u):
    return expit(u)


@dataclass
class RbmParams:
    W: np.ndarray  # (J, I)
    b: np.ndarray  # (J,) hidden bias
    c: np.ndarray  # (I,) visible bias

    @property
    def n_visible(self) -> int:
        return self.W.shape[1]

    @property
    def n_hidden(self) -> int:
        return self.W.shape[0]

    def copy(self) -> "RbmParams":
        return RbmParams(self.W.copy(), self.b.copy(), self.c.copy())

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in (self.W, self.b, self.c))


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    cd_k: int = 1
    batch_size: int = 100
    epochs: int = 100
    lam: float = 0.1
    momentum: float = 0.5
    weight_decay: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.cd_k < 1 or self.batch_size < 1 or self.epochs < 0:
            raise ValueError("cd_k and batch_size must be >= 1, epochs >= 0")
        if self.lam < 0 or self.weight_decay < 0:
            raise ValueError("lam and weight_decay must be non-negative")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.lam > 0 and self.batch_size < 2:
            raise ValueError("the batch regularizer needs batch_size >= 2")

    def as_dict(self) -> dict:
        return asdict(self)


def init_rbm(n_visible: int, n_hidden: int, seed) -> RbmParams:
    if n_visible < 1 or n_hidden < 1:
        raise DimError("RBM needs at least one visible and one hidden unit")
    rng = np.random.default_rng(seed)
    W = 0.01 * rng.standard_normal((n_hidden, n_visible))
    return RbmParams(W, np.zeros(n_hidden), np.zeros(n_visible))


def hidden_probs(p: RbmParams, x: np.ndarray) -> np.ndarray:
    """P(z=1 | x) for a vector or each row of a matrix."""
    return sigmoid(np.asarray(x, dtype=np.float64) @ p.W.T + p.b)


def visible_probs(p: RbmParams, z: np.ndarray) -> np.ndarray:
    return sigmoid(np.asarray(z, dtype=np.float64) @ p.W + p.c)


def sample_targets(batch_size: int, n_bits: int, rng: np.random.Generator) -> np.ndarray:
    """i.i.d. U(0,1) targets, strictly inside the open interval."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    k = rng.integers(0, 1 << 53, size=(batch_size, n_bits), dtype=np.int64)
    return (k + 0.5) / float(1 << 53)


def regularizer(z_probs: np.ndarray, t: np.ndarray) -> float:
    z = np.clip(np.asarray(z_probs, dtype=np.float64), CLAMP, 1 - CLAMP)
    t = np.asarray(t, dtype=np.float64)
    return float(np.sum(t * np.log(z) + (1 - t) * np.log1p(-z)))


def regularizer_grad(p: RbmParams, batch: np.ndarray, t: np.ndarray):
    """d h(B) / d(W, b) with z = sigmoid(W x + b); returns (dW, db)."""
    x = np.asarray(batch, dtype=np.float64)
    delta = t - hidden_probs(p, x)
    return delta.T @ x, delta.sum(axis=0)


def cd_gradient(p: RbmParams, batch: np.ndarray, cd_k: int, rng: np.random.Generator):
    """CD-k estimate of the batch-mean log-likelihood gradient.

    Returns ``(dW, db, dc, z_data, v_recon)``.
    """
    x = np.asarray(batch, dtype=np.float64)
    n = x.shape[0]
    z_data = hidden_probs(p, x)
    h = (rng.random(z_data.shape) < z_data).astype(np.float64)
    for step in range(cd_k):
        v = visible_probs(p, h)
        z = hidden_probs(p, v)
        if step + 1 < cd_k:
            h = (rng.random(z.shape) < z).astype(np.float64)
    dW = (z_data.T @ x - z.T @ v) / n
    db = (z_data.sum(axis=0) - z.sum(axis=0)) / n
    dc = (x.sum(axis=0) - v.sum(axis=0)) / n
    return dW, db, dc, z_data, v


@dataclass
class BatchStats:
    recon_error: float
    reg_value: float
    hidden_mean: np.ndarray
    velocity: RbmParams


def cd_update(
    p: RbmParams,
    batch: np.ndarray,
    cfg: TrainConfig,
    rng: np.random.Generator,
    velocity: RbmParams | None = None,
) -> tuple[RbmParams, BatchStats]:
    """One momentum step of gradient ascent on log-likelihood + lam * h(B)."""
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != p.n_visible:
        raise DimError(f"batch shape {x.shape} does not match {p.n_visible} visible units")
    n = x.shape[0]
    t = sample_targets(n, p.n_hidden, rng)
    dW, db, dc, z_data, v = cd_gradient(p, x, cfg.cd_k, rng)
    reg = regularizer(z_data, t)
    if cfg.lam > 0:
        delta = t - z_data
        dW = dW + cfg.lam * (delta.T @ x) / n
        db = db + cfg.lam * delta.sum(axis=0) / n
    dW = dW - cfg.weight_decay * p.W

    if velocity is None:
        velocity = RbmParams(np.zeros_like(p.W), np.zeros_like(p.b), np.zeros_like(p.c))
    mu, lr = cfg.momentum, cfg.learning_rate
    vel = RbmParams(mu * velocity.W + lr * dW, mu * velocity.b + lr * db, mu * velocity.c + lr * dc)
    new = RbmParams(p.W + vel.W, p.b + vel.b, p.c + vel.c)
    if not new.is_finite():
        raise NumericalDivergence("non-finite RBM parameters after update; lower the learning rate")
    stats = BatchStats(
        recon_error=float(np.mean((x - v) ** 2)),
        reg_value=reg,
        hidden_mean=z_data.mean(axis=0),
        velocity=vel,
    )
    return new, stats


@dataclass
class TrainHistory:
    recon_error: list[float] = field(default_factory=list)
    reg_value: list[float] = field(default_factory=list)
    bit_means: list[np.ndarray] = field(default_factory=list)

    def __len__(self):
        return len(self.recon_error)


def train(p: RbmParams, data: np.ndarray, cfg: TrainConfig) -> tuple[RbmParams, TrainHistory]:
    """``cfg.epochs`` passes over seeded shuffles of ``data``.

    Each epoch makes ceil(N / batch_size) updates; the last batch may be short.
    """
    X = np.asarray(data, dtype=np.float64)
    n = X.shape[0]
    if n < cfg.batch_size:
        raise DimError(f"need at least batch_size={cfg.batch_size} samples, got {n}")
    if X.shape[1] != p.n_visible:
        raise DimError(f"data dim {X.shape[1]} != {p.n_visible} visible units")
    rng = np.random.default_rng(cfg.seed)
    history = TrainHistory()
    velocity = None
    p = p.copy()
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        err = reg = 0.0
        means = np.zeros(p.n_hidden)
        n_batches = 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            p, stats = cd_update(p, X[idx], cfg, rng, velocity)
            velocity = stats.velocity
            err += stats.recon_error * len(idx)
            means += stats.hidden_mean * len(idx)
            reg += stats.reg_value
            n_batches += 1
        history.recon_error.append(err / n)
        history.reg_value.append(reg / n_batches)
        history.bit_means.append(means / n)
    return p, history


def preactivation(p: RbmParams, d: np.ndarray) -> np.ndarray:
    d = np.asarray(d, dtype=np.float64)
    if d.shape[-1] != p.n_visible:
        raise DimError(f"descriptor dim {d.shape[-1]} != {p.n_visible} visible units")
    return d @ p.W.T + p.b


def hash_bits(p: RbmParams, d: np.ndarray) -> np.ndarray:
    """Unpacked bits: hidden probability > 0.5, i.e. pre-activation > 0."""
    return preactivation(p, d) > 0


def hash_codes(p: RbmParams, d: np.ndarray) -> np.ndarray:
    """Packed codes (one row per descriptor, LSB-first)."""
    return pack_bits(hash_bits(p, d))


# --- exact likelihood oracle for tiny RBMs -------------------------------------------------


def _binary_states(n: int) -> np.ndarray:
    return np.array(list(itertools.product((0.0, 1.0), repeat=n))).reshape(-1, n)


def _check_oracle(p: RbmParams):
    if p.n_visible > ORACLE_MAX_UNITS or p.n_hidden > ORACLE_MAX_UNITS:
        raise OracleTooLarge(
            f"exact enumeration limited to {ORACLE_MAX_UNITS} visible and hidden units, "
            f"got I={p.n_visible}, J={p.n_hidden}"
        )


def log_likelihood(p: RbmParams, batch: np.ndarray) -> float:
    """sum_alpha log P(x_alpha), by enumerating every joint (visible, hidden) state."""
    _check_oracle(p)
    x = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    V = _binary_states(p.n_visible)
    H = _binary_states(p.n_hidden)
    neg_energy = (H @ p.W) @ V.T + (H @ p.b)[:, None] + (V @ p.c)[None, :]
    log_z = logsumexp(neg_energy)
    data_ne = (H @ p.W) @ x.T + (H @ p.b)[:, None] + (x @ p.c)[None, :]
    return float(np.sum(logsumexp(data_ne, axis=0)) - x.shape[0] * log_z)


def exact_ll_grad(p: RbmParams, batch: np.ndarray):
    """Exact gradient of sum_alpha log P(x_alpha) w.r.t. (W, b, c).

    Hidden units are summed out analytically; the partition function is an
    explicit sum over all 2**I visible states.
    """
    _check_oracle(p)
    x = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    n = x.shape[0]
    V = _binary_states(p.n_visible)
    act = V @ p.W.T + p.b
    neg_free = V @ p.c + np.logaddexp(0.0, act).sum(axis=1)
    prob = np.exp(neg_free - logsumexp(neg_free))
    zv = sigmoid(act)
    zx = hidden_probs(p, x)
    dW = zx.T @ x - n * (zv * prob[:, None]).T @ V
    db = zx.sum(axis=0) - n * prob @ zv
    dc = x.sum(axis=0) - n * prob @ V
    return dW, db, dc


@dataclass
class RbmHasher:
    """Trained RBM plus the input range used to map descriptors onto [0, 1]."""

    params: RbmParams
    lo: np.ndarray
    span: np.ndarray
    config: TrainConfig = field(default_factory=TrainConfig)

    @property
    def in_dim(self) -> int:
        return self.params.n_visible

    @property
    def n_bits(self) -> int:
        return self.params.n_hidden

    def scale(self, d: np.ndarray) -> np.ndarray:
        d = np.asarray(d, dtype=np.float64)
        if d.shape[-1] != self.in_dim:
            raise DimError(f"descriptor dim {d.shape[-1]} != {self.in_dim} visible units")
        return (d - self.lo) / self.span

    def hash(self, d: np.ndarray) -> np.ndarray:
        return hash_codes(self.params, self.scale(d))


def fit_input_range(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    lo, hi = X.min(axis=0), X.max(axis=0)
    return lo, np.where(hi > lo, hi - lo, 1.0)


def fit_rbmh(descs: np.ndarray, n_bits: int, cfg: TrainConfig) -> tuple[RbmHasher, TrainHistory]:
    X = np.asarray(descs, dtype=np.float64)
    if X.ndim != 2 or not np.all(np.isfinite(X)):
        raise DimError("training descriptors must be a finite N x D matrix")
    lo, span = fit_input_range(X)
    # weight init on its own stream, separate from the training stream
    params, history = train(init_rbm(X.shape[1], n_bits, [cfg.seed, 1]), (X - lo) / span, cfg)
    return RbmHasher(params, lo, span, cfg), history
