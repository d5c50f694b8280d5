"""Embedding + single-layer autoencoder + per-field extractor.

Each record's token indices are embedded and concatenated into a vector V,
compressed/decompressed by the autoencoder (tanh encoder, linear decoder),
and a shared linear+softmax extractor predicts each original token from its
d-wide slice of the reconstruction.  The loss is the prevalence-weighted
cross entropy over the 27 fields plus an alpha-scaled squared L2
reconstruction term.  Gradients are analytic; training is plain Adam over
weighted-sampled batches.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field, asdict
from typing import Callable, Optional

import numpy as np

log = logging.getLogger(__name__)

TENSOR_NAMES = ("E", "W_enc", "b_enc", "W_dec", "b_dec", "U", "c")


class ModelError(Exception):
    pass


class TrainingDiverged(ModelError):
    pass


@dataclass
class ModelConfig:
    vocab_size: int
    embed_dim: int = 8
    hidden: int = 32
    alpha: float = 5.0
    n_fields: int = 27
    seed: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 32
    max_batches: int = 200_000

    def __post_init__(self):
        if self.embed_dim < 2:
            raise ModelError("embed_dim must be >= 2")
        if self.hidden >= self.n_fields * self.embed_dim:
            raise ModelError("hidden width must be smaller than the record vector")
        if self.alpha < 0:
            raise ModelError("alpha must be non-negative")

    @property
    def record_dim(self) -> int:
        return self.n_fields * self.embed_dim


@dataclass
class ModelParams:
    E: np.ndarray  # |V| x d embeddings
    W_enc: np.ndarray  # m x n
    b_enc: np.ndarray  # m
    W_dec: np.ndarray  # n x m
    b_dec: np.ndarray  # n
    U: np.ndarray  # |V| x d shared extractor
    c: np.ndarray  # |V|

    @classmethod
    def init(cls, config: ModelConfig, rng: np.random.Generator) -> "ModelParams":
        n, m, d, v = config.record_dim, config.hidden, config.embed_dim, config.vocab_size
        u = lambda shape: rng.uniform(-0.05, 0.05, size=shape)
        return cls(
            E=u((v, d)),
            W_enc=u((m, n)),
            b_enc=np.zeros(m),
            W_dec=u((n, m)),
            b_dec=np.zeros(n),
            U=u((v, d)),
            c=np.zeros(v),
        )

    def tensors(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in TENSOR_NAMES}

    def copy(self) -> "ModelParams":
        return ModelParams(**{k: v.copy() for k, v in self.tensors().items()})

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(t)) for t in self.tensors().values())


@dataclass
class Gradients:
    E: np.ndarray
    W_enc: np.ndarray
    b_enc: np.ndarray
    W_dec: np.ndarray
    b_dec: np.ndarray
    U: np.ndarray
    c: np.ndarray

    def tensors(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in TENSOR_NAMES}


@dataclass
class ForwardTrace:
    token_ids: np.ndarray  # (F,)
    V: np.ndarray  # (n,)
    h: np.ndarray  # (m,)
    V_hat: np.ndarray  # (n,)
    probs: np.ndarray  # (F, |V|)
    ce: np.ndarray  # (F,) per-field cross entropy
    field_weights: np.ndarray  # (F,) w_{y_i}
    weighted_ce: float
    recon: float  # ||V - V_hat||^2
    alpha: float
    total: float


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


def forward(
    params: ModelParams,
    token_ids,
    weights: np.ndarray,
    alpha: float,
) -> ForwardTrace:
    """Single-record forward pass with full trace for backprop."""
    ids = np.asarray(token_ids, dtype=np.int64)
    v_size, d = params.E.shape
    if ids.min() < 0 or ids.max() >= v_size:
        raise ModelError("token index out of vocabulary range")

    V = params.E[ids].reshape(-1)
    h = np.tanh(params.W_enc @ V + params.b_enc)
    V_hat = params.W_dec @ h + params.b_dec
    slices = V_hat.reshape(len(ids), d)
    logits = slices @ params.U.T + params.c  # (F, |V|)
    probs = _softmax(logits)
    ce = -np.log(probs[np.arange(len(ids)), ids])
    field_weights = weights[ids]
    weighted_ce = float(field_weights @ ce)
    recon = float(np.sum((V - V_hat) ** 2))
    total = weighted_ce + alpha * recon
    if not np.isfinite(total):
        raise ModelError("non-finite loss in forward pass")
    return ForwardTrace(
        token_ids=ids,
        V=V,
        h=h,
        V_hat=V_hat,
        probs=probs,
        ce=ce,
        field_weights=field_weights,
        weighted_ce=weighted_ce,
        recon=recon,
        alpha=alpha,
        total=total,
    )


def backward(trace: ForwardTrace, params: ModelParams) -> Gradients:
    """Analytic gradients of trace.total for every parameter tensor."""
    ids = trace.token_ids
    F = len(ids)
    v_size, d = params.E.shape
    alpha = trace.alpha

    # Extractor: dlogits_i = w_{y_i} * (p_i - onehot(y_i))
    dlogits = trace.probs * trace.field_weights[:, None]
    dlogits[np.arange(F), ids] -= trace.field_weights
    slices = trace.V_hat.reshape(F, d)
    dU = dlogits.T @ slices
    dc = dlogits.sum(axis=0)

    # Back into the reconstruction: CE path plus the alpha L2 term.
    dV_hat = (dlogits @ params.U).reshape(-1)
    dV_hat += 2.0 * alpha * (trace.V_hat - trace.V)

    dW_dec = np.outer(dV_hat, trace.h)
    db_dec = dV_hat
    dh = params.W_dec.T @ dV_hat
    da = dh * (1.0 - trace.h ** 2)
    dW_enc = np.outer(da, trace.V)
    db_enc = da

    dV = params.W_enc.T @ da + 2.0 * alpha * (trace.V - trace.V_hat)
    dE = np.zeros_like(params.E)
    np.add.at(dE, ids, dV.reshape(F, d))

    return Gradients(
        E=dE, W_enc=dW_enc, b_enc=db_enc, W_dec=dW_dec, b_dec=db_dec.copy(), U=dU, c=dc
    )


def batch_forward_backward(
    params: ModelParams,
    ids: np.ndarray,  # (B, F)
    weights: np.ndarray,
    alpha: float,
) -> tuple[float, float, float, Gradients]:
    """Mean loss over a batch plus gradients of that mean, vectorized."""
    B, F = ids.shape
    v_size, d = params.E.shape
    V = params.E[ids].reshape(B, F * d)
    h = np.tanh(V @ params.W_enc.T + params.b_enc)
    V_hat = h @ params.W_dec.T + params.b_dec
    slices = V_hat.reshape(B, F, d)
    logits = slices @ params.U.T + params.c  # (B, F, |V|)
    probs = _softmax(logits)
    rows = np.arange(B)[:, None], np.arange(F)[None, :]
    ce = -np.log(probs[rows[0], rows[1], ids])
    fw = weights[ids]  # (B, F)
    weighted_ce = (fw * ce).sum(axis=1)
    recon = ((V - V_hat) ** 2).sum(axis=1)
    mean_wce = float(weighted_ce.mean())
    mean_recon = float(recon.mean())
    mean_total = mean_wce + alpha * mean_recon

    dlogits = probs * fw[..., None]
    dlogits[rows[0], rows[1], ids] -= fw
    dlogits /= B
    dU = np.einsum("bfv,bfd->vd", dlogits, slices)
    dc = dlogits.sum(axis=(0, 1))
    dV_hat = (dlogits @ params.U).reshape(B, F * d)
    dV_hat += (2.0 * alpha / B) * (V_hat - V)
    dW_dec = dV_hat.T @ h
    db_dec = dV_hat.sum(axis=0)
    dh = dV_hat @ params.W_dec
    da = dh * (1.0 - h ** 2)
    dW_enc = da.T @ V
    db_enc = da.sum(axis=0)
    dV = da @ params.W_enc + (2.0 * alpha / B) * (V - V_hat)
    dE = np.zeros_like(params.E)
    np.add.at(dE, ids.reshape(-1), dV.reshape(B * F, d).reshape(-1, d))

    grads = Gradients(
        E=dE, W_enc=dW_enc, b_enc=db_enc, W_dec=dW_dec, b_dec=db_dec, U=dU, c=dc
    )
    return mean_wce, mean_recon, mean_total, grads


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def init(cls, params: ModelParams) -> "AdamState":
        return cls(
            m={k: np.zeros_like(t) for k, t in params.tensors().items()},
            v={k: np.zeros_like(t) for k, t in params.tensors().items()},
        )


def adam_step(
    params: ModelParams,
    grads: Gradients,
    state: AdamState,
    config: ModelConfig,
) -> None:
    """Standard bias-corrected Adam update, in place."""
    state.t += 1
    b1, b2 = config.beta1, config.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for name, grad in grads.tensors().items():
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1 - b1) * grad
        v *= b2
        v += (1 - b2) * grad ** 2
        update = config.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + config.epsilon)
        if not np.all(np.isfinite(update)):
            raise TrainingDiverged(f"non-finite Adam update for {name}")
        getattr(params, name)[...] -= update


def compute_sampling_weights(ids: np.ndarray, vocab) -> np.ndarray:
    """Per-record sampling weight: information content of the rarest term.

    Records whose rarest term is also the most common (weight <= 0) get the
    smallest positive weight present so no record is unsampleable.
    """
    counts = vocab.counts.copy()
    counts[counts <= 0] = 1  # reserved slots that never occurred
    wvec = vocab.weight_vector()
    rarest = counts[ids].argmin(axis=1)
    s = wvec[ids[np.arange(len(ids)), rarest]]
    positive = s[s > 0]
    if positive.size:
        s = np.where(s > 0, s, positive.min())
    else:
        s = np.ones_like(s)
    return s


def sample_batch(
    n_records: int,
    probabilities: np.ndarray,
    rng: np.random.Generator,
    batch_size: int,
) -> np.ndarray:
    """Draw record indices with replacement, P(record) proportional to weight."""
    if n_records == 0:
        raise ModelError("cannot sample from an empty corpus")
    return rng.choice(n_records, size=batch_size, replace=True, p=probabilities)


@dataclass
class TrainResult:
    params: ModelParams
    history: list[tuple[int, float, float, float]]  # (batch, wce, recon, total)


def train(
    ids: np.ndarray,  # (N, F) tokenized corpus
    vocab,
    config: ModelConfig,
    callback: Optional[Callable[[int, float, float, float], None]] = None,
    log_every: int = 1000,
) -> TrainResult:
    """Sample -> forward -> backward -> Adam loop, deterministic per seed.

    History rows are running means over each log_every-batch window.
    """
    if ids.ndim != 2 or ids.shape[1] != config.n_fields:
        raise ModelError(f"corpus shape {ids.shape} does not match config")
    rng = np.random.default_rng(config.seed)
    params = ModelParams.init(config, rng)
    state = AdamState.init(params)
    weights = vocab.weight_vector()
    s = compute_sampling_weights(ids, vocab)
    probabilities = s / s.sum()

    history: list[tuple[int, float, float, float]] = []
    window = np.zeros(3)
    window_n = 0
    last_good = params.copy()

    for batch_idx in range(config.max_batches):
        batch = ids[sample_batch(len(ids), probabilities, rng, config.batch_size)]
        try:
            wce, recon, total, grads = batch_forward_backward(
                params, batch, weights, config.alpha
            )
            if not np.isfinite(total):
                raise TrainingDiverged(f"non-finite loss at batch {batch_idx}")
            adam_step(params, grads, state, config)
        except TrainingDiverged:
            log.error("training diverged at batch %d; keeping last checkpoint", batch_idx)
            return TrainResult(params=last_good, history=history)
        window += (wce, recon, total)
        window_n += 1
        if window_n == log_every or batch_idx == config.max_batches - 1:
            means = window / window_n
            history.append((batch_idx + 1, float(means[0]), float(means[1]), float(means[2])))
            if callback is not None:
                callback(batch_idx + 1, *map(float, means))
            window[:] = 0.0
            window_n = 0
            last_good = params.copy()

    return TrainResult(params=params, history=history)


def score_records(
    params: ModelParams,
    ids: np.ndarray,  # (N, F)
    weights: np.ndarray,
    alpha: float,
    mode: str = "ce",
    chunk: int = 4096,
) -> np.ndarray:
    """Anomaly score per record: weighted CE, plus alpha*recon in full mode."""
    if mode not in ("ce", "full"):
        raise ModelError(f"unknown scoring mode {mode!r}")
    N, F = ids.shape
    v_size, d = params.E.shape
    out = np.empty(N)
    for lo in range(0, N, chunk):
        part = ids[lo : lo + chunk]
        B = len(part)
        V = params.E[part].reshape(B, F * d)
        h = np.tanh(V @ params.W_enc.T + params.b_enc)
        V_hat = h @ params.W_dec.T + params.b_dec
        slices = V_hat.reshape(B, F, d)
        logits = slices @ params.U.T + params.c
        probs = _softmax(logits)
        ce = -np.log(
            probs[np.arange(B)[:, None], np.arange(F)[None, :], part]
        )
        scores = (weights[part] * ce).sum(axis=1)
        if mode == "full":
            scores = scores + alpha * ((V - V_hat) ** 2).sum(axis=1)
        out[lo : lo + chunk] = scores
    return out


# --- checkpoint files: JSON header line + little-endian float64 tensors ---

def vocab_file_checksum(path: str) -> str:
    with open(path, "rb") as handle:
        return hashlib.sha256(handle.read()).hexdigest()


def save_checkpoint(
    path: str,
    params: ModelParams,
    config: ModelConfig,
    vocab_checksum: str,
) -> None:
    header = {
        "format": "logbaseline-checkpoint",
        "version": 1,
        "config": asdict(config),
        "vocab_sha256": vocab_checksum,
        "tensors": {name: list(t.shape) for name, t in params.tensors().items()},
    }
    with open(path, "wb") as handle:
        handle.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        handle.write(b"\n")
        for name in TENSOR_NAMES:
            handle.write(np.ascontiguousarray(getattr(params, name), dtype="<f8").tobytes())


def load_checkpoint(path: str) -> tuple[ModelParams, ModelConfig, str]:
    with open(path, "rb") as handle:
        header_line = handle.readline()
        blob = handle.read()
    header = json.loads(header_line.decode("utf-8"))
    if header.get("format") != "logbaseline-checkpoint" or header.get("version") != 1:
        raise ModelError(f"{path}: not a recognized checkpoint file")
    config = ModelConfig(**header["config"])
    tensors = {}
    offset = 0
    for name in TENSOR_NAMES:
        shape = tuple(header["tensors"][name])
        size = int(np.prod(shape)) * 8
        chunk = blob[offset : offset + size]
        if len(chunk) != size:
            raise ModelError(f"{path}: truncated tensor {name}")
        tensors[name] = np.frombuffer(chunk, dtype="<f8").reshape(shape).copy()
        offset += size
    return ModelParams(**tensors), config, header["vocab_sha256"]
