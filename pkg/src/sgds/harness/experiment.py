"""Three-arm experiment orchestration.

Arms share the exact same evaluation rows (context chunk + condition):
  (a) vanilla   -- guidance weights (w_ctx, w_txt, 0), single sample
  (b) guided    -- surprise gradient on, single sample
  (c) guided+BoN -- surprise gradient on, N candidates, lowest average
                    surprise wins

Trained artifacts are cached keyed by a hash of everything that affects
them; a run always evaluates the checkpoint as loaded from disk, so warm
and cold runs produce byte-identical reports.
"""

import hashlib
import json
import time
from pathlib import Path

import numpy as np

from .. import bon, diffusion, jepa, worldsim
from ..guidance import GuidanceWeights
from ..nnkit import io as nnio
from ..nnkit.mlp import MLPSpec
from .config import ExperimentConfig
from .report import Report

_CACHE_VERSION = 1
_EVAL_SEED_OFFSET = 1_000_000

ARMS = ("a", "b", "c")


class CacheError(Exception):
    """A cached artifact does not match the requesting configuration."""


def world_config(cfg: ExperimentConfig) -> worldsim.WorldConfig:
    return worldsim.WorldConfig(
        pixels=cfg["world.pixels"],
        frames_per_chunk=cfg["world.frames_per_chunk"],
        conditions=cfg["world.conditions"],
        sigma_px=cfg["world.sigma_px"],
        v_max=cfg["world.v_max"],
    )


def schedule(cfg: ExperimentConfig) -> diffusion.NoiseSchedule:
    return diffusion.make_schedule(
        cfg["schedule.steps"], cfg["schedule.beta_min"], cfg["schedule.beta_max"]
    )


def denoiser_spec(cfg: ExperimentConfig) -> diffusion.DenoiserSpec:
    wcfg = world_config(cfg)
    return diffusion.DenoiserSpec(
        chunk_dim=wcfg.chunk_dim,
        conditions=wcfg.conditions,
        cond_embed_dim=cfg["denoiser.cond_embed_dim"],
        hidden=cfg["denoiser.hidden"],
    )


def _train_config(cfg, section) -> diffusion.TrainConfig:
    return diffusion.TrainConfig(
        epochs=cfg[f"{section}.epochs"],
        batch_size=cfg[f"{section}.batch_size"],
        learning_rate=cfg[f"{section}.learning_rate"],
        dropout_ctx=cfg["denoiser.dropout_ctx"],
        dropout_txt=cfg["denoiser.dropout_txt"],
        ctx_noise=cfg["denoiser.ctx_noise"] if section == "denoiser" else 0.0,
        seed=cfg[f"{section}.seed"],
    )


def _subset_hash(cfg, keys) -> str:
    payload = {k: cfg.echo()[k] for k in keys}
    payload["_cache_version"] = _CACHE_VERSION
    blob = json.dumps(payload, sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


_DATA_KEYS = (
    "world.pixels",
    "world.frames_per_chunk",
    "world.conditions",
    "world.sigma_px",
    "world.v_max",
    "data.train_episodes",
    "data.chunks_per_episode",
    "run.base_seed",
)
_DENOISER_KEYS = _DATA_KEYS + (
    "schedule.steps",
    "schedule.beta_min",
    "schedule.beta_max",
    "denoiser.hidden",
    "denoiser.cond_embed_dim",
    "denoiser.epochs",
    "denoiser.batch_size",
    "denoiser.learning_rate",
    "denoiser.dropout_ctx",
    "denoiser.dropout_txt",
    "denoiser.ctx_noise",
    "denoiser.seed",
)
_JEPA_KEYS = _DATA_KEYS + (
    "jepa.embed_dim",
    "jepa.encoder_hidden",
    "jepa.predictor_hidden",
    "jepa.momentum",
    "jepa.epochs",
    "jepa.batch_size",
    "jepa.learning_rate",
    "jepa.seed",
    "jepa.noise_aug",
    "jepa.aug_copies",
)


def _check_meta(meta_path: Path, expected_hash: str, kind: str):
    try:
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise CacheError(f"unreadable cache metadata {meta_path}: {exc}") from exc
    if meta.get("hash") != expected_hash or meta.get("kind") != kind:
        raise CacheError(
            f"training-cache checksum mismatch for {meta_path} "
            f"(expected {kind} {expected_hash[:16]})"
        )


def _write_meta(meta_path: Path, full_hash: str, kind: str):
    meta_path.write_text(
        json.dumps({"kind": kind, "hash": full_hash}), encoding="utf-8"
    )


def ensure_dataset(cfg: ExperimentConfig):
    """Materialize (or reuse) the training dataset file; returns episodes
    as loaded from disk, so training always sees float32-rounded frames."""
    wcfg = world_config(cfg)
    cache_dir = Path(cfg["run.cache_dir"])
    cache_dir.mkdir(parents=True, exist_ok=True)
    h = _subset_hash(cfg, _DATA_KEYS)
    path = cache_dir / f"dataset-{h[:16]}.bin"
    meta = cache_dir / f"dataset-{h[:16]}.meta.json"
    if not path.exists():
        base = cfg["run.base_seed"]
        frames = cfg["data.chunks_per_episode"] * wcfg.frames_per_chunk
        episodes = [
            worldsim.make_episode(wcfg, base + i, i % wcfg.conditions, frames)
            for i in range(cfg["data.train_episodes"])
        ]
        worldsim.save_dataset(path, wcfg, episodes)
        _write_meta(meta, h, "dataset")
    _check_meta(meta, h, "dataset")
    _, episodes = worldsim.load_dataset(path)
    return episodes


def ensure_denoiser(cfg: ExperimentConfig):
    """Train (or load) the denoiser; always returns the on-disk params."""
    cache_dir = Path(cfg["run.cache_dir"])
    cache_dir.mkdir(parents=True, exist_ok=True)
    h = _subset_hash(cfg, _DENOISER_KEYS)
    path = cache_dir / f"denoiser-{h[:16]}.ckpt"
    meta = cache_dir / f"denoiser-{h[:16]}.meta.json"
    spec = denoiser_spec(cfg)
    if not path.exists():
        episodes = ensure_dataset(cfg)
        params = diffusion.train_denoiser(
            episodes,
            cfg["world.frames_per_chunk"],
            spec,
            schedule(cfg),
            _train_config(cfg, "denoiser"),
        )
        nnio.save_params(params, path, spec.trunk.layer_widths)
        _write_meta(meta, h, "denoiser")
    _check_meta(meta, h, "denoiser")
    params = nnio.load_params(path)
    return spec, diffusion.ParamVector(params.values, spec.manifest())


def ensure_jepa(cfg: ExperimentConfig) -> jepa.JepaHandles:
    """Train (or load) the JEPA; always returns the on-disk handles."""
    cache_dir = Path(cfg["run.cache_dir"])
    cache_dir.mkdir(parents=True, exist_ok=True)
    h = _subset_hash(cfg, _JEPA_KEYS)
    directory = cache_dir / f"jepa-{h[:16]}"
    meta = cache_dir / f"jepa-{h[:16]}.meta.json"
    if not directory.exists():
        wcfg = world_config(cfg)
        episodes = ensure_dataset(cfg)
        chunks = [
            worldsim.chunk_episode(ep, wcfg.frames_per_chunk) for ep in episodes
        ]
        chunks.extend(_augmented_chunks(cfg, wcfg, episodes))
        encoder_spec = MLPSpec(
            (wcfg.chunk_dim, *cfg["jepa.encoder_hidden"], cfg["jepa.embed_dim"])
        )
        predictor_spec = MLPSpec(
            (
                cfg["jepa.embed_dim"],
                *cfg["jepa.predictor_hidden"],
                cfg["jepa.embed_dim"],
            )
        )
        handles = jepa.train_jepa(
            chunks,
            encoder_spec,
            predictor_spec,
            _train_config(cfg, "jepa"),
            momentum=cfg["jepa.momentum"],
        )
        jepa.save_handles(handles, directory)
        _write_meta(meta, h, "jepa")
    _check_meta(meta, h, "jepa")
    return jepa.load_handles(directory)


def _augmented_chunks(cfg, wcfg, episodes):
    """Noisy replicas of the training episodes for the JEPA diet.

    The generated chunks the sampler feeds back are never perfectly clean,
    so the encoder must embed slightly-off-manifold frames by ball
    position rather than by noise artifacts. The loss and operators are
    untouched; this only widens the dataset.
    """
    sigma = cfg["jepa.noise_aug"]
    copies = cfg["jepa.aug_copies"]
    if sigma <= 0 or copies == 0:
        return []
    rng = np.random.default_rng(
        np.random.SeedSequence(entropy=cfg["run.base_seed"], spawn_key=(3,))
    )
    out = []
    for ep in episodes:
        for _ in range(copies):
            noisy = worldsim.Episode(
                condition=ep.condition,
                frames=ep.frames + rng.normal(0.0, sigma, ep.frames.shape),
                seed=ep.seed,
            )
            out.append(worldsim.chunk_episode(noisy, wcfg.frames_per_chunk))
    return out


def arm_weights(cfg: ExperimentConfig, arm: str) -> GuidanceWeights:
    omega_s = 0.0 if arm == "a" else cfg["guidance.omega_s"]
    return GuidanceWeights(
        cfg["guidance.omega_ctx"], cfg["guidance.omega_txt"], omega_s
    )


def _arm_base_seed(base_seed: int, row: int, arm_index: int) -> int:
    # distinct integers per (row, arm); streams are split per candidate
    return (base_seed * 1_000_003 + row) * 8 + arm_index


def eval_rows(cfg: ExperimentConfig):
    """Held-out (seed, condition) pairs with their context episodes."""
    wcfg = world_config(cfg)
    rows = []
    frames = (1 + cfg["eval.horizon_chunks"]) * wcfg.frames_per_chunk
    for i in range(cfg["eval.conditions"]):
        seed = cfg["run.base_seed"] + _EVAL_SEED_OFFSET + i
        condition = i % wcfg.conditions
        episode = worldsim.make_episode(wcfg, seed, condition, frames)
        rows.append((seed, condition, episode))
    return rows


def _version_string() -> str:
    import subprocess

    from .. import __version__

    try:
        described = subprocess.run(
            ["git", "describe", "--always", "--tags"],
            capture_output=True,
            text=True,
            timeout=5,
            cwd=Path(__file__).parent,
        )
        if described.returncode == 0 and described.stdout.strip():
            return f"sgds {__version__} ({described.stdout.strip()})"
    except (OSError, subprocess.SubprocessError):
        pass
    return f"sgds {__version__}"


def run_experiment(cfg: ExperimentConfig, threads: int = 1) -> Report:
    """Run all three arms over the evaluation rows; deterministic in cfg."""
    timings = {}
    t0 = time.perf_counter()
    spec, params = ensure_denoiser(cfg)
    timings["denoiser_s"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    handles = ensure_jepa(cfg)
    timings["jepa_s"] = time.perf_counter() - t0

    wcfg = world_config(cfg)
    sched = schedule(cfg)
    start_step = cfg["guidance.start_step"] or None
    surprise_input = cfg["guidance.surprise_input"]
    grad_fn = jepa.surprise_grad_fn(handles)

    def surprise_fn(context, chunk):
        return jepa.surprise(handles, context, chunk)

    t0 = time.perf_counter()
    rows = []
    for row_index, (seed, condition, episode) in enumerate(eval_rows(cfg)):
        chunks = worldsim.chunk_episode(episode, wcfg.frames_per_chunk)
        context = chunks[0]
        row = {"row": row_index, "seed": seed, "condition": condition, "arms": {}}
        for arm_index, arm in enumerate(ARMS):
            weights = arm_weights(cfg, arm)
            n = cfg["bon.n"] if arm == "c" else 1

            def generator(rng, weights=weights):
                return diffusion.generate_sequence(
                    spec,
                    params,
                    context,
                    condition,
                    cfg["eval.horizon_chunks"],
                    weights,
                    sched,
                    rng,
                    surprise_grad_fn=grad_fn if weights.omega_s > 0 else None,
                    surprise_input=surprise_input,
                    guidance_start_step=start_step,
                )

            base = _arm_base_seed(cfg["run.base_seed"], row_index, arm_index)
            candidates = bon.generate_candidates(
                n, generator, surprise_fn, base, context, max_workers=threads
            )
            best = bon.select_best(candidates)
            generated = np.concatenate(candidates.candidates[best])
            row["arms"][arm] = {
                "plausibility_error": worldsim.plausibility_error(
                    generated, context, condition
                ),
                "mean_surprise": bon.average_surprise(candidates, best),
            }
        rows.append(row)
    timings["evaluate_s"] = time.perf_counter() - t0

    arms_summary = {}
    for arm in ARMS:
        errors = np.array([r["arms"][arm]["plausibility_error"] for r in rows])
        surprises = np.array([r["arms"][arm]["mean_surprise"] for r in rows])
        arms_summary[arm] = {
            "mean_plausibility_error": float(errors.mean()),
            "median_plausibility_error": float(np.median(errors)),
            "mean_surprise": float(surprises.mean()),
            "n_conditions": len(rows),
        }
    wins = sum(
        1
        for r in rows
        if r["arms"]["c"]["plausibility_error"] <= r["arms"]["a"]["plausibility_error"]
    )
    arms_summary["c_vs_a_win_or_tie_fraction"] = wins / len(rows)

    return Report(
        version=_version_string(),
        config=cfg.echo(),
        arms=arms_summary,
        rows=rows,
        timings=timings,
    )
