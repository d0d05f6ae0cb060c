"""Shared fixtures.

The reference artifacts (trained denoiser + JEPA at the default
configuration) are expensive, so they are built once per session and
reused by every test that needs them. The evaluation fixture keeps its
own cache directory so its first run is genuinely cold.
"""

import time

import pytest

from sgds.harness import parse_config, run_experiment, write_report
from sgds.harness.experiment import ensure_denoiser, ensure_jepa


def _reference_config(root):
    path = root / "reference.cfg"
    path.write_text(f"run.cache_dir = {root / 'cache'}\n", encoding="utf-8")
    return parse_config(path)


@pytest.fixture(scope="session")
def reference_config(tmp_path_factory):
    """The reference configuration (all defaults) with a session cache."""
    return _reference_config(tmp_path_factory.mktemp("reference"))


@pytest.fixture(scope="session")
def reference_models(reference_config):
    """Trained (cached) reference denoiser and JEPA handles."""
    spec, params = ensure_denoiser(reference_config)
    handles = ensure_jepa(reference_config)
    return {"spec": spec, "params": params, "handles": handles}


@pytest.fixture(scope="session")
def reference_evaluation(tmp_path_factory):
    """Two full evaluate runs: the first cold, the second warm.

    Uses a private cache so the cold timing includes training. Returns
    reports, output directories and wall-clock timings for the
    determinism and runtime-budget checks.
    """
    root = tmp_path_factory.mktemp("evaluation")
    cfg = _reference_config(root)
    t0 = time.perf_counter()
    first = run_experiment(cfg)
    cold_seconds = time.perf_counter() - t0
    write_report(first, root / "run1")
    t0 = time.perf_counter()
    second = run_experiment(cfg)
    warm_seconds = time.perf_counter() - t0
    write_report(second, root / "run2")
    third = run_experiment(cfg, threads=2)
    write_report(third, root / "run3-threads")
    return {
        "report": first,
        "dirs": [root / "run1", root / "run2", root / "run3-threads"],
        "cold_seconds": cold_seconds,
        "warm_seconds": warm_seconds,
    }
