"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 configuration error, 3 runtime
failure, 4 oracle acceptance check failed.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import bon, diffusion, gaussoracle, jepa, worldsim
from .guidance import GuidanceWeights
from .harness import config as config_mod
from .harness import experiment, report as report_mod

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CONFIG = 2
EXIT_RUNTIME = 3
EXIT_CHECK_FAILED = 4

ORACLE_WEIGHT_GRID = (
    GuidanceWeights(1.0, 1.0, 0.0),
    GuidanceWeights(1.5, 2.0, 0.5),
    GuidanceWeights(1.0, 1.0, 0.5),
    GuidanceWeights(2.0, 1.0, 0.0),
    GuidanceWeights(0.5, 1.5, 0.25),
)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="sgds", description=__doc__)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("train-denoiser", help="train (or reuse) the denoiser")
    p.add_argument("config")

    p = sub.add_parser("train-jepa", help="train (or reuse) the JEPA networks")
    p.add_argument("config")

    p = sub.add_parser("generate", help="generate one evaluation sequence")
    p.add_argument("config")
    p.add_argument("--seed", type=int, required=True, help="episode seed")
    p.add_argument("--arm", choices=experiment.ARMS, required=True)
    p.add_argument("--out", help="write generated frames to this .npz file")

    p = sub.add_parser("evaluate", help="run the three-arm comparison")
    p.add_argument("config")
    p.add_argument("--out", required=True, help="report output directory")
    p.add_argument("--threads", type=int, default=1)

    p = sub.add_parser("oracle-check", help="closed-form sampler verification")
    p.add_argument("config")
    p.add_argument("--out", required=True, help="report output directory")
    return parser


def _oracle_model(cfg) -> gaussoracle.LinGaussModel:
    d = cfg["oracle.dimension"]
    return gaussoracle.LinGaussModel(
        dim=d,
        coupling=cfg["oracle.coupling"],
        shifts=((cfg["oracle.shift"],) * d,),
        sigma=cfg["oracle.sigma"],
        mu0=(cfg["oracle.mu0"],) * d,
        sigma0=cfg["oracle.sigma0"],
        mu_surprise=(cfg["oracle.mu_surprise"],) * d,
        tilt=cfg["oracle.tilt"],
    )


def _cmd_train_denoiser(args) -> int:
    cfg = config_mod.parse_config(args.config)
    experiment.ensure_denoiser(cfg)
    print(f"denoiser ready in {cfg['run.cache_dir']}")
    return EXIT_OK


def _cmd_train_jepa(args) -> int:
    cfg = config_mod.parse_config(args.config)
    experiment.ensure_jepa(cfg)
    print(f"jepa ready in {cfg['run.cache_dir']}")
    return EXIT_OK


def _cmd_generate(args) -> int:
    cfg = config_mod.parse_config(args.config)
    spec, params = experiment.ensure_denoiser(cfg)
    handles = experiment.ensure_jepa(cfg)
    wcfg = experiment.world_config(cfg)
    sched = experiment.schedule(cfg)
    frames = (1 + cfg["eval.horizon_chunks"]) * wcfg.frames_per_chunk
    condition = args.seed % wcfg.conditions
    episode = worldsim.make_episode(wcfg, args.seed, condition, frames)
    context = worldsim.chunk_episode(episode, wcfg.frames_per_chunk)[0]
    weights = experiment.arm_weights(cfg, args.arm)
    n = cfg["bon.n"] if args.arm == "c" else 1

    def generator(rng):
        return diffusion.generate_sequence(
            spec,
            params,
            context,
            condition,
            cfg["eval.horizon_chunks"],
            weights,
            sched,
            rng,
            surprise_grad_fn=(
                jepa.surprise_grad_fn(handles) if weights.omega_s > 0 else None
            ),
            surprise_input=cfg["guidance.surprise_input"],
            guidance_start_step=cfg["guidance.start_step"] or None,
        )

    candidates = bon.generate_candidates(
        n,
        generator,
        lambda ctx, chunk: jepa.surprise(handles, ctx, chunk),
        args.seed,
        context,
    )
    best = bon.select_best(candidates)
    generated = np.concatenate(candidates.candidates[best])
    positions = []
    for frame in generated:
        try:
            positions.append(worldsim.decode_position(frame))
        except worldsim.UndecodableFrameError:
            positions.append(None)
    summary = {
        "seed": args.seed,
        "arm": args.arm,
        "condition": condition,
        "selected_candidate": best,
        "mean_surprise": bon.average_surprise(candidates, best),
        "plausibility_error": worldsim.plausibility_error(
            generated, context, condition
        ),
        "decoded_positions": positions,
    }
    print(json.dumps(report_mod.stable_floats(summary), indent=2))
    if args.out:
        np.savez(args.out, frames=generated, context=context)
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    cfg = config_mod.parse_config(args.config)
    result = experiment.run_experiment(cfg, threads=args.threads)
    report_mod.write_report(result, args.out)
    for arm in experiment.ARMS:
        summary = result.arms[arm]
        print(
            f"arm {arm}: mean_plausibility_error="
            f"{summary['mean_plausibility_error']:.9g} "
            f"mean_surprise={summary['mean_surprise']:.9g}"
        )
    print(f"report written to {args.out}")
    return EXIT_OK


def _cmd_oracle_check(args) -> int:
    cfg = config_mod.parse_config(args.config)
    model = _oracle_model(cfg)
    base_seed = cfg["run.base_seed"]
    composition = gaussoracle.composition_identity_report(
        model,
        ORACLE_WEIGHT_GRID,
        n_points=20,
        rng=np.random.default_rng(base_seed),
    )
    context = np.ones(model.dim) * cfg["oracle.context"]
    sampling = []
    for i, weights in enumerate(ORACLE_WEIGHT_GRID):
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=base_seed, spawn_key=(71, i))
        )
        sampling.append(
            gaussoracle.sample_and_compare(
                model,
                weights,
                context,
                0,
                cfg["oracle.samples"],
                cfg["oracle.steps"],
                rng,
                beta_min=cfg["oracle.beta_min"],
                beta_max=cfg["oracle.beta_max"],
                surprise_input=cfg["oracle.surprise_input"],
            )
        )
    # variance is only pinned where the guided target equals the plain
    # conditional: weights (1, 1, 0) with the tilt off
    ok = composition["ok"] and all(run["mean_ok"] for run in sampling)
    ok = ok and all(
        run["variance_ok"]
        for run in sampling
        if run["weights"] == {"omega_ctx": 1.0, "omega_txt": 1.0, "omega_s": 0.0}
    )
    payload = {"composition": composition, "sampling": sampling, "ok": ok}
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "oracle_report.json").write_text(
        json.dumps(report_mod.stable_floats(payload), indent=2) + "\n", encoding="utf-8"
    )
    for run in sampling:
        w = run["weights"]
        print(
            f"w=({w['omega_ctx']}, {w['omega_txt']}, {w['omega_s']}): "
            f"max|z|={run['max_abs_z']:.3f} "
            f"var_ratio={[f'{v:.4f}' for v in run['variance_ratio']]}"
        )
    print(f"composition max errors ok={composition['ok']}; overall ok={ok}")
    return EXIT_OK if ok else EXIT_CHECK_FAILED


_COMMANDS = {
    "train-denoiser": _cmd_train_denoiser,
    "train-jepa": _cmd_train_jepa,
    "generate": _cmd_generate,
    "evaluate": _cmd_evaluate,
    "oracle-check": _cmd_oracle_check,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.command is None:
        parser.print_help()
        return EXIT_USAGE
    try:
        return _COMMANDS[args.command](args)
    except config_mod.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
