"""Chunkwise denoising diffusion.

One epsilon-prediction network serves three conditioning branches
(unconditional, context-only, context+condition) via learned null tokens
and independent dropout during training. Sampling runs the DDPM ancestral
update on a composed guidance score; an optional surprise-gradient term is
chained through the denoiser at the Tweedie clean-chunk estimate.
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import guidance
from .nnkit import kernels
from .nnkit.mlp import MLPSpec, ParamVector
from .nnkit.optim import Adam

DEFAULT_STEPS = 100
DEFAULT_BETA_MIN = 1e-4
DEFAULT_BETA_MAX = 0.02

_TIME_FREQS = 4


@dataclass(frozen=True)
class NoiseSchedule:
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray

    @property
    def T(self) -> int:
        return len(self.betas)

    def beta(self, t: int) -> float:
        return float(self.betas[t - 1])

    def alpha(self, t: int) -> float:
        return float(self.alphas[t - 1])

    def alpha_bar(self, t: int) -> float:
        return float(self.alpha_bars[t - 1])

    def check_t(self, t: int) -> int:
        t = int(t)
        if not 1 <= t <= self.T:
            raise ValueError(f"t={t} outside [1, {self.T}]")
        return t


def make_schedule(
    T: int = DEFAULT_STEPS,
    beta_min: float = DEFAULT_BETA_MIN,
    beta_max: float = DEFAULT_BETA_MAX,
) -> NoiseSchedule:
    """Linear beta schedule with precomputed cumulative products."""
    if T < 1:
        raise ValueError("T must be >= 1")
    if not (0.0 < beta_min <= beta_max < 1.0):
        raise ValueError(f"need 0 < beta_min <= beta_max < 1, got ({beta_min}, {beta_max})")
    betas = np.linspace(beta_min, beta_max, T)
    alphas = 1.0 - betas
    return NoiseSchedule(betas=betas, alphas=alphas, alpha_bars=np.cumprod(alphas))


def forward_noise(x0, t, eps, sched: NoiseSchedule):
    """x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps."""
    t = sched.check_t(t)
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != x0.shape:
        raise ValueError(f"noise shape {eps.shape} != data shape {x0.shape}")
    abar = sched.alpha_bar(t)
    return np.sqrt(abar) * x0 + np.sqrt(1.0 - abar) * eps


def score_from_eps(eps_hat, t, sched: NoiseSchedule):
    """Noise prediction to score: grad log p ~ -eps_hat / sqrt(1 - abar_t)."""
    t = sched.check_t(t)
    abar = sched.alpha_bar(t)
    if 1.0 - abar <= 0.0:
        raise ValueError(f"alpha_bar({t}) = 1: score undefined")
    return -np.asarray(eps_hat, dtype=np.float64) / np.sqrt(1.0 - abar)


def eps_from_score(score, t, sched: NoiseSchedule):
    t = sched.check_t(t)
    abar = sched.alpha_bar(t)
    if 1.0 - abar <= 0.0:
        raise ValueError(f"alpha_bar({t}) = 1: conversion undefined")
    return -np.asarray(score, dtype=np.float64) * np.sqrt(1.0 - abar)


def tweedie_x0(x_t, eps_hat, t, sched: NoiseSchedule):
    """Posterior-mean clean-chunk estimate implied by the noise prediction."""
    t = sched.check_t(t)
    abar = sched.alpha_bar(t)
    x_t = np.asarray(x_t, dtype=np.float64)
    eps_hat = np.asarray(eps_hat, dtype=np.float64)
    return (x_t - np.sqrt(1.0 - abar) * eps_hat) / np.sqrt(abar)


def sample_step(x_t, eps_composed, t, sched: NoiseSchedule, rng):
    """One DDPM ancestral update; deterministic (no noise) at t = 1."""
    t = sched.check_t(t)
    x_t = np.asarray(x_t, dtype=np.float64)
    eps_composed = np.asarray(eps_composed, dtype=np.float64)
    beta = sched.beta(t)
    abar = sched.alpha_bar(t)
    mean = (x_t - beta / np.sqrt(1.0 - abar) * eps_composed) / np.sqrt(
        sched.alpha(t)
    )
    if t == 1:
        return mean
    return mean + np.sqrt(beta) * rng.standard_normal(x_t.shape)


# ---------------------------------------------------------------------------
# denoiser network


@dataclass(frozen=True)
class DenoiserSpec:
    """Composite denoiser: MLP trunk plus learned null tokens.

    Trunk input is [x_t | context-or-null | condition-embedding | timestep
    embedding]; NULL context and NULL condition are dedicated learned
    vectors, not zeros.
    """

    chunk_dim: int
    conditions: int
    cond_embed_dim: int = 8
    hidden: tuple[int, ...] = (256, 256)

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    @cached_property
    def trunk(self) -> MLPSpec:
        in_dim = 2 * self.chunk_dim + self.cond_embed_dim + 2 * _TIME_FREQS
        return MLPSpec((in_dim, *self.hidden, self.chunk_dim))

    @cached_property
    def trunk_size(self) -> int:
        return self.trunk.num_params()

    def manifest(self):
        return self.trunk.manifest() + (
            ("null_ctx", (self.chunk_dim,)),
            ("cond_embed", (self.conditions + 1, self.cond_embed_dim)),
        )

    def num_params(self) -> int:
        return (
            self.trunk_size
            + self.chunk_dim
            + (self.conditions + 1) * self.cond_embed_dim
        )


@dataclass(frozen=True)
class DenoiserInput:
    x_t: np.ndarray  # flattened chunk, length chunk_dim
    t: int
    context: np.ndarray | None  # flattened previous chunk, or None
    condition: int | None


def init_denoiser(spec: DenoiserSpec, seed: int) -> ParamVector:
    """Glorot trunk, small random null/embedding tokens; seed-deterministic."""
    rng = np.random.default_rng(seed)
    chunks = []
    widths = spec.trunk.layer_widths
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        chunks.append(rng.uniform(-bound, bound, size=fan_in * fan_out))
        chunks.append(np.zeros(fan_out))
    chunks.append(rng.uniform(-0.1, 0.1, size=spec.chunk_dim))  # null_ctx
    chunks.append(
        rng.uniform(-0.5, 0.5, size=(spec.conditions + 1) * spec.cond_embed_dim)
    )
    return ParamVector(np.concatenate(chunks), spec.manifest())


def time_embedding(t: int, T: int) -> np.ndarray:
    """Sin/cos pairs of normalized time at four octave frequencies.

    The base frequency spans only a quarter turn over (0, 1], so the
    embedding never wraps: t = T and t = 1 stay maximally separated.
    """
    tau = t / T
    freqs = 2.0 ** np.arange(_TIME_FREQS)
    angles = 0.5 * np.pi * freqs * tau
    return np.stack([np.sin(angles), np.cos(angles)], axis=1).ravel()


def _split_params(spec: DenoiserSpec, params: ParamVector):
    flat = params.values
    trunk = flat[: spec.trunk_size]
    null_ctx = flat[spec.trunk_size : spec.trunk_size + spec.chunk_dim]
    embed = flat[spec.trunk_size + spec.chunk_dim :].reshape(
        spec.conditions + 1, spec.cond_embed_dim
    )
    return trunk, null_ctx, embed


def _embed_row(spec: DenoiserSpec, condition) -> int:
    if condition is None:
        return spec.conditions
    condition = int(condition)
    if not 0 <= condition < spec.conditions:
        raise ValueError(f"condition {condition} outside [0, {spec.conditions})")
    return condition


def _trunk_input(spec, trunk_flat, null_ctx, embed, x_t, context, condition, t, T):
    ctx_vec = null_ctx if context is None else context
    row = _embed_row(spec, condition)
    return np.concatenate([x_t, ctx_vec, embed[row], time_embedding(t, T)])


def predict_eps(
    spec: DenoiserSpec, params: ParamVector, inp: DenoiserInput, sched: NoiseSchedule
) -> np.ndarray:
    """Noise prediction for one branch; NULLs select the learned tokens."""
    t = sched.check_t(inp.t)
    x_t = np.asarray(inp.x_t, dtype=np.float64).ravel()
    if x_t.size != spec.chunk_dim:
        raise ValueError(f"x_t has {x_t.size} entries, expected {spec.chunk_dim}")
    context = inp.context
    if context is not None:
        context = np.asarray(context, dtype=np.float64).ravel()
        if context.size != spec.chunk_dim:
            raise ValueError(
                f"context has {context.size} entries, expected {spec.chunk_dim}"
            )
    trunk, null_ctx, embed = _split_params(spec, params)
    vec = _trunk_input(
        spec, trunk, null_ctx, embed, x_t, context, inp.condition, t, sched.T
    )
    return kernels.forward(spec.trunk.widths_array(), trunk, vec)


def _predict_eps_and_input(spec, params, x_t, context, condition, t, sched):
    """Forward one branch, returning the assembled trunk input for reuse."""
    trunk, null_ctx, embed = _split_params(spec, params)
    vec = _trunk_input(spec, trunk, null_ctx, embed, x_t, context, condition, t, sched.T)
    return kernels.forward(spec.trunk.widths_array(), trunk, vec), vec


def _vjp_x_t(spec, params, trunk_input, cotangent):
    """Gradient of <cotangent, eps_hat> w.r.t. the x_t slice of the input."""
    trunk = params.values[: spec.trunk_size]
    grad_in = kernels.vjp_input(
        spec.trunk.widths_array(), trunk, trunk_input, cotangent
    )
    return grad_in[: spec.chunk_dim]


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    batch_size: int
    learning_rate: float
    dropout_ctx: float = 0.1
    dropout_txt: float = 0.1
    # std of Gaussian noise on (non-dropped) training contexts; hardens the
    # sampler against the imperfect chunks it feeds back to itself
    ctx_noise: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.ctx_noise < 0:
            raise ValueError("ctx_noise must be >= 0")
        for name in ("dropout_ctx", "dropout_txt"):
            p = getattr(self, name)
            if not 0.0 <= p < 1.0:
                raise ValueError(f"{name} must be in [0, 1), got {p}")


def training_pairs(episodes, frames_per_chunk):
    """(x0, context, condition) triples from consecutive chunks.

    The first chunk of each episode only ever appears as context; the
    unconditional branch is produced by dropout, not by synthetic pairs.
    """
    pairs = []
    for ep in episodes:
        frames = np.asarray(ep.frames, dtype=np.float64)
        n_chunks = len(frames) // frames_per_chunk
        chunks = frames[: n_chunks * frames_per_chunk].reshape(
            n_chunks, frames_per_chunk * frames.shape[1]
        )
        for k in range(1, n_chunks):
            pairs.append((chunks[k], chunks[k - 1], ep.condition))
    return pairs


def dsm_loss(spec, params, batch, sched, config: TrainConfig, rng):
    """Denoising score-matching loss and its parameter gradient.

    Per item the rng supplies, in order: timesteps, noise, context-dropout
    uniforms, condition-dropout uniforms, then (only when
    config.ctx_noise > 0) the context perturbation; each drawn as one
    vectorized batch. Loss is mean ||eps_hat - eps||^2 / chunk_dim over
    the batch.
    """
    if not batch:
        raise ValueError("batch must be non-empty")
    n = len(batch)
    dim = spec.chunk_dim
    x0 = np.stack([np.asarray(item[0], dtype=np.float64).ravel() for item in batch])
    ctx = np.stack([np.asarray(item[1], dtype=np.float64).ravel() for item in batch])
    conds = [item[2] for item in batch]

    t = rng.integers(1, sched.T + 1, size=n)
    eps = rng.standard_normal((n, dim))
    drop_ctx = rng.random(n) < config.dropout_ctx
    drop_txt = rng.random(n) < config.dropout_txt
    if config.ctx_noise > 0.0:
        # per-item scale in [0, ctx_noise]: the model keeps full precision
        # on clean contexts while learning to contract corrupted ones
        scales = config.ctx_noise * rng.random(n)
        ctx = ctx + scales[:, None] * rng.standard_normal((n, dim))

    abar = sched.alpha_bars[t - 1][:, None]
    x_t = np.sqrt(abar) * x0 + np.sqrt(1.0 - abar) * eps

    trunk, null_ctx, embed = _split_params(spec, params)
    ctx_in = np.where(drop_ctx[:, None], null_ctx[None, :], ctx)
    rows = np.array(
        [
            spec.conditions if dropped else _embed_row(spec, c)
            for c, dropped in zip(conds, drop_txt)
        ]
    )
    time_emb = np.stack([time_embedding(int(ti), sched.T) for ti in t])
    X = np.concatenate([x_t, ctx_in, embed[rows], time_emb], axis=1)

    widths = spec.trunk.widths_array()
    cache = kernels.forward_batch_cache(widths, trunk, X)
    eps_hat = cache[-1]
    resid = eps_hat - eps
    loss = float((resid**2).sum() / (n * dim))

    cot = 2.0 * resid / (n * dim)
    grad_X, grad_trunk = kernels.backward_from_cache(widths, trunk, cache, cot)

    grad = np.zeros(spec.num_params())
    grad[: spec.trunk_size] = grad_trunk
    g_null = grad[spec.trunk_size : spec.trunk_size + dim]
    if drop_ctx.any():
        g_null += grad_X[drop_ctx, dim : 2 * dim].sum(axis=0)
    g_embed = grad[spec.trunk_size + dim :].reshape(
        spec.conditions + 1, spec.cond_embed_dim
    )
    np.add.at(g_embed, rows, grad_X[:, 2 * dim : 2 * dim + spec.cond_embed_dim])
    return loss, grad


def train_denoiser(
    episodes, frames_per_chunk, spec: DenoiserSpec, sched, config: TrainConfig
) -> ParamVector:
    """Adam over dsm_loss; deterministic in (episodes, config)."""
    pairs = training_pairs(episodes, frames_per_chunk)
    if not pairs:
        raise ValueError("no training pairs: episodes need at least two chunks")
    params = init_denoiser(spec, config.seed)
    if config.epochs == 0:
        return params
    rng = np.random.default_rng(np.random.SeedSequence(entropy=config.seed, spawn_key=(1,)))
    adam = Adam(params.values.size, config.learning_rate)
    values = params.values
    for _ in range(config.epochs):
        order = rng.permutation(len(pairs))
        for start in range(0, len(order), config.batch_size):
            batch = [pairs[i] for i in order[start : start + config.batch_size]]
            current = ParamVector(values, spec.manifest())
            _, grad = dsm_loss(spec, current, batch, sched, config, rng)
            values = adam.step(values, grad)
    return ParamVector(values, spec.manifest())


# ---------------------------------------------------------------------------
# guided sampling


def generate_chunk(
    spec: DenoiserSpec,
    params: ParamVector,
    context: np.ndarray,
    condition: int,
    weights: guidance.GuidanceWeights,
    sched: NoiseSchedule,
    rng,
    surprise_grad_fn=None,
    surprise_input: str = "x0hat",
    guidance_start_step: int | None = None,
) -> np.ndarray:
    """Sample one chunk with the composed guidance score.

    ``surprise_grad_fn(context_chunk, candidate_chunk) -> (F, D) gradient``
    is required when weights.omega_s > 0 and is never called otherwise.
    With ``surprise_input="x0hat"`` the gradient is taken at the Tweedie
    estimate and chain-ruled through the denoiser (one extra vjp); with
    ``"xt"`` it is taken at the noisy iterate directly. Surprise guidance
    is active for t <= guidance_start_step (default: every step).

    Branches whose composition coefficient is zero are never evaluated, so
    weights (1, 1, 0) reduce bit-exactly to plain conditional sampling.
    """
    if surprise_input not in ("x0hat", "xt"):
        raise ValueError(f"surprise_input must be 'x0hat' or 'xt', got {surprise_input!r}")
    context = np.asarray(context, dtype=np.float64)
    chunk_shape = context.shape
    ctx_flat = context.ravel()
    if ctx_flat.size != spec.chunk_dim:
        raise ValueError(f"context has {ctx_flat.size} entries, expected {spec.chunk_dim}")
    c_u, c_c, c_f, _ = guidance.coefficients(weights)
    use_surprise = weights.omega_s > 0.0
    if use_surprise and surprise_grad_fn is None:
        raise ValueError("omega_s > 0 requires a surprise_grad_fn")
    start = sched.T if guidance_start_step is None else int(guidance_start_step)

    x = rng.standard_normal(spec.chunk_dim)
    for t in range(sched.T, 0, -1):
        abar = sched.alpha_bar(t)
        s_uncond = s_ctx = s_full = grad_s = None
        eps_full = full_input = None
        surprise_now = use_surprise and t <= start
        if c_f != 0.0 or (surprise_now and surprise_input == "x0hat"):
            eps_full, full_input = _predict_eps_and_input(
                spec, params, x, ctx_flat, condition, t, sched
            )
        if c_f != 0.0:
            s_full = score_from_eps(eps_full, t, sched)
        if c_c != 0.0:
            eps_ctx, _ = _predict_eps_and_input(
                spec, params, x, ctx_flat, None, t, sched
            )
            s_ctx = score_from_eps(eps_ctx, t, sched)
        if c_u != 0.0:
            eps_un, _ = _predict_eps_and_input(spec, params, x, None, None, t, sched)
            s_uncond = score_from_eps(eps_un, t, sched)
        if surprise_now:
            if surprise_input == "x0hat":
                x0_hat = tweedie_x0(x, eps_full, t, sched)
                g = surprise_grad_fn(
                    context, x0_hat.reshape(chunk_shape)
                ).ravel()
                # chain rule of the Tweedie map: d x0hat / d x_t
                jt_g = _vjp_x_t(spec, params, full_input, g)
                grad_s = (g - np.sqrt(1.0 - abar) * jt_g) / np.sqrt(abar)
            else:
                g = surprise_grad_fn(context, x.reshape(chunk_shape)).ravel()
                grad_s = g
        if c_u == 0.0 and c_c == 0.0 and c_f == 1.0 and not surprise_now:
            # identity composition: skip the score conversions so the
            # reduction to plain conditional sampling is bit-exact
            eps_composed = eps_full
        else:
            terms = guidance.ScoreTerms(
                s_uncond=s_uncond, s_ctx=s_ctx, s_full=s_full, grad_surprise=grad_s
            )
            step_weights = weights
            if use_surprise and not surprise_now:
                step_weights = guidance.GuidanceWeights(
                    weights.omega_ctx, weights.omega_txt, 0.0
                )
            composed = guidance.compose_score(terms, step_weights)
            eps_composed = eps_from_score(composed, t, sched)
        x = sample_step(x, eps_composed, t, sched, rng)
    return x.reshape(chunk_shape)


def generate_sequence(
    spec: DenoiserSpec,
    params: ParamVector,
    seed_context: np.ndarray,
    condition: int,
    num_chunks: int,
    weights: guidance.GuidanceWeights,
    sched: NoiseSchedule,
    rng,
    **kwargs,
) -> list[np.ndarray]:
    """Autoregressive chunk generation; each output becomes the next context."""
    if num_chunks < 1:
        raise ValueError("num_chunks must be >= 1")
    context = np.asarray(seed_context, dtype=np.float64)
    out = []
    for _ in range(num_chunks):
        chunk = generate_chunk(
            spec, params, context, condition, weights, sched, rng, **kwargs
        )
        out.append(chunk)
        context = chunk
    return out
