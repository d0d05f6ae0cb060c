"""Joint-embedding predictive model over frame chunks.

An online encoder maps a flattened chunk to an embedding; a predictor maps
the context embedding to the expected next-chunk embedding. Training
regresses the prediction onto the embedding produced by an EMA copy of the
encoder (stop-gradient target), which is what keeps the representation
from collapsing.

The surprise score between a context and a candidate chunk is
1 - cosine(predicted next embedding, candidate embedding): zero when the
candidate lands exactly where the predictor expects it, up to 2 for an
anti-aligned embedding.
"""

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .diffusion import TrainConfig
from .nnkit import io as nnio
from .nnkit import kernels
from .nnkit.mlp import MLPSpec, ParamVector, init_params
from .nnkit.optim import Adam

NORM_FLOOR = 1e-12


class DegenerateEmbeddingError(Exception):
    """An embedding norm fell below the cosine floor."""


@dataclass(frozen=True)
class JepaHandles:
    encoder_spec: MLPSpec
    encoder: ParamVector
    predictor_spec: MLPSpec
    predictor: ParamVector
    ema_encoder: ParamVector
    momentum: float = 0.99

    def __post_init__(self):
        if not 0.0 <= self.momentum <= 1.0:
            raise ValueError("momentum must be in [0, 1]")
        if self.encoder.manifest != self.ema_encoder.manifest:
            raise ValueError("online and EMA encoders must share a manifest")

    @property
    def embed_dim(self) -> int:
        return self.encoder_spec.out_dim


def _flat_chunk(handles, chunk):
    flat = np.asarray(chunk, dtype=np.float64).ravel()
    if flat.size != handles.encoder_spec.in_dim:
        raise ValueError(
            f"chunk has {flat.size} entries, encoder expects "
            f"{handles.encoder_spec.in_dim}"
        )
    return flat


def encode(handles: JepaHandles, chunk) -> np.ndarray:
    """Online-encoder embedding of a chunk."""
    flat = _flat_chunk(handles, chunk)
    return kernels.forward(
        handles.encoder_spec.widths_array(), handles.encoder.values, flat
    )


def encode_target(handles: JepaHandles, chunk) -> np.ndarray:
    """EMA-encoder embedding (the stop-gradient training target)."""
    flat = _flat_chunk(handles, chunk)
    return kernels.forward(
        handles.encoder_spec.widths_array(), handles.ema_encoder.values, flat
    )


def predict_next(handles: JepaHandles, embedding) -> np.ndarray:
    embedding = np.asarray(embedding, dtype=np.float64)
    if embedding.size != handles.predictor_spec.in_dim:
        raise ValueError(
            f"embedding has {embedding.size} entries, predictor expects "
            f"{handles.predictor_spec.in_dim}"
        )
    return kernels.forward(
        handles.predictor_spec.widths_array(), handles.predictor.values, embedding
    )


def cosine_surprise(u, v) -> float:
    """1 - cos(u, v): 0 identical direction, 1 orthogonal, 2 opposite."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu <= NORM_FLOOR or nv <= NORM_FLOOR:
        raise DegenerateEmbeddingError(
            f"degenerate embedding: norms ({nu:.3e}, {nv:.3e})"
        )
    return float(1.0 - (u @ v) / (nu * nv))


def surprise(handles: JepaHandles, context_chunk, candidate_chunk) -> float:
    """How far the candidate's embedding is from the predicted one."""
    predicted = predict_next(handles, encode(handles, context_chunk))
    return cosine_surprise(predicted, encode(handles, candidate_chunk))


def surprise_grad(handles: JepaHandles, context_chunk, candidate_chunk) -> np.ndarray:
    """Exact gradient of surprise w.r.t. the candidate chunk entries."""
    candidate = np.asarray(candidate_chunk, dtype=np.float64)
    flat = _flat_chunk(handles, candidate)
    predicted = predict_next(handles, encode(handles, context_chunk))
    emb = kernels.forward(
        handles.encoder_spec.widths_array(), handles.encoder.values, flat
    )
    nu = np.linalg.norm(predicted)
    nv = np.linalg.norm(emb)
    if nu <= NORM_FLOOR or nv <= NORM_FLOOR:
        raise DegenerateEmbeddingError(
            f"degenerate embedding: norms ({nu:.3e}, {nv:.3e})"
        )
    cos = (predicted @ emb) / (nu * nv)
    # d(1 - cos)/d emb, with the predicted embedding held fixed
    d_emb = -(predicted / (nu * nv) - cos * emb / (nv * nv))
    grad_flat = kernels.vjp_input(
        handles.encoder_spec.widths_array(), handles.encoder.values, flat, d_emb
    )
    return grad_flat.reshape(candidate.shape)


def surprise_grad_fn(handles: JepaHandles):
    """Adapter for the sampler: (context, candidate) -> gradient."""

    def fn(context_chunk, candidate_chunk):
        return surprise_grad(handles, context_chunk, candidate_chunk)

    return fn


# ---------------------------------------------------------------------------
# training


def jepa_loss(handles: JepaHandles, chunks):
    """Mean squared embedding-prediction error over consecutive chunk pairs.

    Returns (loss, encoder grad, predictor grad). The EMA branch is a
    constant: no gradient flows into the target encoder.
    """
    if len(chunks) < 2:
        raise ValueError("jepa_loss needs at least two chunks")
    contexts = np.stack([_flat_chunk(handles, c) for c in chunks[:-1]])
    nexts = np.stack([_flat_chunk(handles, c) for c in chunks[1:]])
    return _pairs_loss(handles, contexts, nexts)


def _pairs_loss(handles, contexts, nexts):
    dim = handles.embed_dim
    n_pairs = len(contexts)
    enc_w = handles.encoder_spec.widths_array()
    pred_w = handles.predictor_spec.widths_array()
    enc_cache = kernels.forward_batch_cache(enc_w, handles.encoder.values, contexts)
    pred_cache = kernels.forward_batch_cache(
        pred_w, handles.predictor.values, enc_cache[-1]
    )
    target = kernels.forward_batch(enc_w, handles.ema_encoder.values, nexts)

    resid = pred_cache[-1] - target
    loss = float((resid**2).sum() / (n_pairs * dim))
    cot = 2.0 * resid / (n_pairs * dim)
    grad_emb, grad_pred = kernels.backward_from_cache(
        pred_w, handles.predictor.values, pred_cache, cot
    )
    _, grad_enc = kernels.backward_from_cache(
        enc_w, handles.encoder.values, enc_cache, grad_emb
    )
    return loss, grad_enc, grad_pred


def ema_update(handles: JepaHandles) -> JepaHandles:
    """ema' = m * ema + (1 - m) * online, elementwise."""
    m = handles.momentum
    new_values = m * handles.ema_encoder.values + (1.0 - m) * handles.encoder.values
    return replace(
        handles,
        ema_encoder=ParamVector(new_values, handles.ema_encoder.manifest),
    )


def init_handles(
    encoder_spec: MLPSpec,
    predictor_spec: MLPSpec,
    seed: int,
    momentum: float = 0.99,
) -> JepaHandles:
    if encoder_spec.out_dim != predictor_spec.in_dim or (
        predictor_spec.out_dim != encoder_spec.out_dim
    ):
        raise ValueError("predictor must map the embedding space to itself")
    encoder = init_params(encoder_spec, seed)
    predictor = init_params(predictor_spec, seed + 1)
    return JepaHandles(
        encoder_spec=encoder_spec,
        encoder=encoder,
        predictor_spec=predictor_spec,
        predictor=predictor,
        ema_encoder=encoder.copy(),
        momentum=momentum,
    )


def train_jepa(
    episode_chunks,
    encoder_spec: MLPSpec,
    predictor_spec: MLPSpec,
    config: TrainConfig,
    momentum: float = 0.99,
) -> JepaHandles:
    """Adam on jepa_loss with one EMA update per optimizer step.

    ``episode_chunks`` is a list of chunk lists, one per episode; batches
    group whole episodes. Deterministic in (episode_chunks, config).
    """
    episode_chunks = [ep for ep in episode_chunks if len(ep) >= 2]
    if not episode_chunks:
        raise ValueError("need at least one episode with two or more chunks")
    handles = init_handles(encoder_spec, predictor_spec, config.seed, momentum)
    if config.epochs == 0:
        return handles
    rng = np.random.default_rng(np.random.SeedSequence(entropy=config.seed, spawn_key=(1,)))
    adam_enc = Adam(handles.encoder.values.size, config.learning_rate)
    adam_pred = Adam(handles.predictor.values.size, config.learning_rate)
    for _ in range(config.epochs):
        order = rng.permutation(len(episode_chunks))
        for start in range(0, len(order), config.batch_size):
            group = [episode_chunks[i] for i in order[start : start + config.batch_size]]
            # a batch is the concatenation of every episode's consecutive pairs
            contexts = np.concatenate(
                [np.stack([_flat_chunk(handles, c) for c in ep[:-1]]) for ep in group]
            )
            nexts = np.concatenate(
                [np.stack([_flat_chunk(handles, c) for c in ep[1:]]) for ep in group]
            )
            _, g_enc, g_pred = _pairs_loss(handles, contexts, nexts)
            handles = replace(
                handles,
                encoder=ParamVector(
                    adam_enc.step(handles.encoder.values, g_enc),
                    handles.encoder.manifest,
                ),
                predictor=ParamVector(
                    adam_pred.step(handles.predictor.values, g_pred),
                    handles.predictor.manifest,
                ),
            )
            handles = ema_update(handles)
    return handles


# ---------------------------------------------------------------------------
# checkpointing: encoder (with its EMA copy) and predictor as two files
# plus a JSON sidecar


def save_handles(handles: JepaHandles, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    combined = ParamVector(
        np.concatenate([handles.encoder.values, handles.ema_encoder.values]),
        handles.encoder.manifest
        + tuple((f"ema.{name}", shape) for name, shape in handles.ema_encoder.manifest),
    )
    nnio.save_params(
        combined, directory / "encoder.ckpt", handles.encoder_spec.layer_widths
    )
    nnio.save_params(
        handles.predictor,
        directory / "predictor.ckpt",
        handles.predictor_spec.layer_widths,
    )
    sidecar = {"E": handles.embed_dim, "momentum": handles.momentum}
    (directory / "jepa.json").write_text(json.dumps(sidecar), encoding="utf-8")


def load_handles(directory) -> JepaHandles:
    directory = Path(directory)
    combined = nnio.load_params(directory / "encoder.ckpt")
    predictor = nnio.load_params(directory / "predictor.ckpt")
    sidecar = json.loads((directory / "jepa.json").read_text(encoding="utf-8"))
    encoder_spec = MLPSpec(combined.spec_widths)
    online_entries = [e for e in combined.manifest if not e[0].startswith("ema.")]
    online_size = sum(int(np.prod(shape)) for _, shape in online_entries)
    manifest = tuple(online_entries)
    return JepaHandles(
        encoder_spec=encoder_spec,
        encoder=ParamVector(combined.values[:online_size], manifest),
        predictor_spec=MLPSpec(predictor.spec_widths),
        predictor=predictor,
        ema_encoder=ParamVector(combined.values[online_size:], manifest),
        momentum=float(sidecar["momentum"]),
    )
