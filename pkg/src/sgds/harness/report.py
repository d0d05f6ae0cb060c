"""Report serialization with byte-stable formatting.

Floats are rounded to 9 significant digits before JSON/CSV encoding so
reruns and cross-platform runs diff cleanly. Wall-clock timings are
inherently non-deterministic and therefore live in a separate sidecar
file, keeping report.json and summary.csv pure functions of the config.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path


@dataclass
class Report:
    version: str
    config: dict
    arms: dict
    rows: list
    timings: dict = field(default_factory=dict)


def stable_floats(value):
    if isinstance(value, float):
        return float(f"{value:.9g}")
    if isinstance(value, dict):
        return {k: stable_floats(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [stable_floats(v) for v in value]
    return value


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.9g}"
    return str(value)


def report_payload(report: Report) -> dict:
    """The deterministic portion of a report (no timings)."""
    return {
        "version": report.version,
        "config": stable_floats(report.config),
        "arms": stable_floats(report.arms),
        "rows": stable_floats(report.rows),
    }


def write_report(report: Report, out_dir) -> None:
    """Write report.json, summary.csv and the timings sidecar."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = report_payload(report)
    (out_dir / "report.json").write_text(
        json.dumps(payload, indent=2, sort_keys=False) + "\n", encoding="utf-8"
    )
    lines = [
        "arm,mean_plausibility_error,median_plausibility_error,"
        "mean_surprise,n_conditions"
    ]
    for arm in ("a", "b", "c"):
        summary = report.arms[arm]
        lines.append(
            ",".join(
                [
                    arm,
                    _fmt(summary["mean_plausibility_error"]),
                    _fmt(summary["median_plausibility_error"]),
                    _fmt(summary["mean_surprise"]),
                    str(summary["n_conditions"]),
                ]
            )
        )
    (out_dir / "summary.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    (out_dir / "timings.json").write_text(
        json.dumps(_runtime_info(report), indent=2) + "\n", encoding="utf-8"
    )


def _runtime_info(report: Report) -> dict:
    from ..nnkit import KERNEL_BACKEND

    return {"kernel_backend": KERNEL_BACKEND, **report.timings}


def load_report(path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))
