"""Acceptance suite.

One test per criterion; each prints a single pass/fail line (run with
``pytest -s tests/test_acceptance.py`` to see them live). The expensive
criteria share the session-scoped reference fixtures from conftest.
"""

import time
from contextlib import contextmanager

import numpy as np
import pytest

from sgds import bon, diffusion, gaussoracle, jepa, worldsim
from sgds.cli import ORACLE_WEIGHT_GRID
from sgds.guidance import GuidanceWeights, ScoreTerms, coefficients, compose_score
from sgds.nnkit import grad_check
from sgds.nnkit.mlp import MLPSpec


@contextmanager
def criterion(number, label):
    try:
        yield
    except BaseException:
        print(f"[acceptance] criterion {number} ({label}): FAIL")
        raise
    print(f"[acceptance] criterion {number} ({label}): PASS")


def test_criterion_1_reduction_and_coefficient_sum():
    with criterion(1, "composition reduction identities"):
        start = time.perf_counter()
        rng = np.random.default_rng(0)
        s_full = rng.standard_normal(128)
        out = compose_score(
            ScoreTerms(s_uncond=None, s_ctx=None, s_full=s_full),
            GuidanceWeights(1.0, 1.0, 0.0),
        )
        assert out.tobytes() == s_full.tobytes()
        for _ in range(1000):
            w_ctx, w_txt = rng.uniform(-5, 5, size=2)
            w_s = rng.uniform(0, 5)
            c_u, c_c, c_f, _ = coefficients(GuidanceWeights(w_ctx, w_txt, w_s))
            assert abs(c_u + c_c + c_f - 1.0) <= 1e-15
        assert time.perf_counter() - start < 1.0


def test_criterion_2_hand_arithmetic_composition():
    with criterion(2, "hand-arithmetic composition"):
        terms = ScoreTerms(
            s_uncond=np.array([1.0, 0.0]),
            s_ctx=np.array([0.0, 1.0]),
            s_full=np.array([1.0, 1.0]),
            grad_surprise=np.array([2.0, 0.0]),
        )
        out = compose_score(terms, GuidanceWeights(1.5, 2.0, 0.1))
        np.testing.assert_allclose(out, [1.3, 1.5], atol=1e-12)


def test_criterion_3_surprise_gradient_finite_differences():
    with criterion(3, "surprise gradient vs finite differences"):
        start = time.perf_counter()
        worst = 0.0
        for draw in range(100):
            rng = np.random.default_rng(9000 + draw)
            chunk_dim = int(rng.choice([12, 18, 24]))
            embed = int(rng.choice([4, 6, 8]))
            hidden = int(rng.choice([8, 12]))
            handles = jepa.init_handles(
                MLPSpec((chunk_dim, hidden, embed)),
                MLPSpec((embed, hidden, embed)),
                seed=draw,
            )
            context = rng.uniform(-1, 1, chunk_dim)
            candidate = rng.uniform(-1, 1, chunk_dim)

            def f(x):
                return (
                    jepa.surprise(handles, context, x),
                    jepa.surprise_grad(handles, context, x).ravel(),
                )

            worst = max(worst, grad_check(f, candidate, 1e-5))
        elapsed = time.perf_counter() - start
        assert worst <= 1e-4, f"max relative error {worst:.3e}"
        assert elapsed < 30.0, f"took {elapsed:.1f}s"


def test_criterion_4_oracle_composition_identity():
    with criterion(4, "Gaussian oracle composition"):
        for model in (
            gaussoracle.LinGaussModel(),  # the hand-worked parameters
            gaussoracle.LinGaussModel(sigma0=0.2),  # the sampling reference
        ):
            context = np.ones(model.dim)
            rng = np.random.default_rng(4)
            for weights in ORACLE_WEIGHT_GRID:
                mean, var = gaussoracle.analytic_guided_target(
                    model, weights, context, 0
                )
                for _ in range(20):
                    x = rng.normal(scale=2.0, size=model.dim)
                    composed = compose_score(
                        gaussoracle.analytic_scores(model, x, context, 0), weights
                    )
                    np.testing.assert_allclose(
                        composed, -(x - mean) / var, atol=1e-10
                    )


def test_criterion_5_oracle_sampling():
    with criterion(5, "Gaussian oracle sampling"):
        start = time.perf_counter()
        model = gaussoracle.LinGaussModel(sigma0=0.2)
        context = np.ones(model.dim)
        for index, weights in enumerate(ORACLE_WEIGHT_GRID):
            rng = np.random.default_rng(
                np.random.SeedSequence(entropy=1234, spawn_key=(71, index))
            )
            report = gaussoracle.sample_and_compare(
                model, weights, context, 0, 20000, 200, rng
            )
            assert report["mean_ok"], (
                f"weights {report['weights']}: z={report['z_mean']}"
            )
            if weights == GuidanceWeights(1.0, 1.0, 0.0):
                # tilt off: the guided target is the plain conditional
                assert report["variance_ok"], report["variance_ratio"]
        elapsed = time.perf_counter() - start
        assert elapsed <= 60.0, f"took {elapsed:.1f}s"


def test_criterion_6_best_of_n_selection():
    with criterion(6, "best-of-N selection"):
        assert bon.DEFAULT_N == 16
        from sgds.harness.config import default_config

        assert default_config()["bon.n"] == 16
        rng = np.random.default_rng(6)
        for trial in range(200):
            n = int(rng.integers(1, 24))
            k = int(rng.integers(1, 5))
            matrix = rng.random((n, k))
            if trial % 4 == 0 and n >= 3:
                matrix[rng.integers(0, n)] = matrix[rng.integers(0, n)]
            cset = bon.CandidateSet(
                candidates=[None] * n, chunk_surprises=matrix, base_seed=0
            )
            averages = [sum(row) / len(row) for row in matrix.tolist()]
            best, best_avg = 0, averages[0]
            for i, avg in enumerate(averages):
                if avg < best_avg:
                    best, best_avg = i, avg
            assert bon.select_best(cset) == best


def test_criterion_7_evaluate_determinism(reference_evaluation):
    with criterion(7, "byte-identical evaluate reports"):
        run1, run2, run3 = reference_evaluation["dirs"]
        for name in ("report.json", "summary.csv"):
            bytes1 = (run1 / name).read_bytes()
            assert bytes1 == (run2 / name).read_bytes(), f"{name}: rerun differs"
            assert bytes1 == (run3 / name).read_bytes(), (
                f"{name}: thread count changed the bytes"
            )


def test_criterion_8_directional_improvement(reference_evaluation):
    with criterion(8, "guided+BoN beats vanilla"):
        report = reference_evaluation["report"]
        arm_a = report.arms["a"]["mean_plausibility_error"]
        arm_c = report.arms["c"]["mean_plausibility_error"]
        wins = report.arms["c_vs_a_win_or_tie_fraction"]
        assert arm_c <= arm_a, f"arm c {arm_c:.4f} > arm a {arm_a:.4f}"
        assert wins >= 0.6, f"win-or-tie fraction {wins:.2f} < 0.6"
        cold = reference_evaluation["cold_seconds"]
        warm = reference_evaluation["warm_seconds"]
        assert cold <= 1800.0, f"cold run took {cold:.0f}s"
        assert warm <= 300.0, f"warm run took {warm:.0f}s"
        print(
            f"  arm a mean {arm_a:.4f}, arm c mean {arm_c:.4f}, "
            f"wins {wins:.2f}, cold {cold:.0f}s, warm {warm:.0f}s"
        )


def test_criterion_9_jepa_sanity(reference_config, reference_models):
    with criterion(9, "JEPA surprise sanity and non-collapse"):
        handles = reference_models["handles"]
        cfg = reference_config
        wcfg = worldsim.WorldConfig(
            pixels=cfg["world.pixels"],
            frames_per_chunk=cfg["world.frames_per_chunk"],
            conditions=cfg["world.conditions"],
        )
        rng = np.random.default_rng(99)
        truth, shuffled = [], []
        embeddings = []
        for k in range(50):
            seed = cfg["run.base_seed"] + 2_000_000 + k
            episode = worldsim.make_episode(
                wcfg, seed, k % wcfg.conditions, 2 * wcfg.frames_per_chunk
            )
            ctx, nxt = worldsim.chunk_episode(episode, wcfg.frames_per_chunk)
            truth.append(jepa.surprise(handles, ctx, nxt))
            perm = rng.permutation(wcfg.frames_per_chunk)
            while np.array_equal(perm, np.arange(wcfg.frames_per_chunk)):
                perm = rng.permutation(wcfg.frames_per_chunk)
            shuffled.append(jepa.surprise(handles, ctx, nxt[perm]))
            embeddings.append(jepa.encode(handles, ctx))
        mean_truth = float(np.mean(truth))
        mean_shuffled = float(np.mean(shuffled))
        assert mean_truth < mean_shuffled, (
            f"ground truth {mean_truth:.4f} !< shuffled {mean_shuffled:.4f}"
        )
        min_var = float(np.stack(embeddings).var(axis=0).min())
        assert min_var >= 1e-3, f"embedding collapse: min variance {min_var:.2e}"
        print(
            f"  surprise truth {mean_truth:.4f} < shuffled {mean_shuffled:.4f}; "
            f"min embedding variance {min_var:.2e}"
        )
