"""Per-iteration telemetry rows and their CSV encoding."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Iterable

CSV_HEADER = ("run_id", "t", "oracle_calls", "loss", "grad_norm", "align_cos",
              "mc_alignment", "mu_norm", "skipped", "seed")


@dataclass(frozen=True)
class TraceRecord:
    """One iteration of a run.

    ``loss`` and ``grad_norm`` are measured at the post-step iterate;
    ``align_cos`` (cosine between the x-update estimate and the true gradient)
    and ``mc_alignment`` (mean squared cosine of the sampled batch) refer to the
    point the step was taken from. Gradient-derived fields are ``None`` when
    the objective has no gradient.
    """

    run_id: str
    t: int
    oracle_calls: int
    loss: float
    grad_norm: float | None
    align_cos: float | None
    mc_alignment: float | None
    mu_norm: float
    skipped: bool
    seed: int

    def __post_init__(self):
        for f in ("loss", "grad_norm", "align_cos", "mc_alignment", "mu_norm"):
            val = getattr(self, f)
            if val is not None and not math.isfinite(val):
                raise ValueError(f"trace field {f} is not finite: {val!r}")

    def as_row(self) -> list[str]:
        out = []
        for f in fields(self):
            val = getattr(self, f.name)
            if val is None:
                out.append("")
            elif isinstance(val, bool):
                out.append("1" if val else "0")
            elif isinstance(val, float):
                out.append(repr(val))
            else:
                out.append(str(val))
        return out


def write_trace(records: Iterable[TraceRecord], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(trace_to_csv(records))
    return path


def trace_to_csv(records: Iterable[TraceRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in records:
        w.writerow(r.as_row())
    return buf.getvalue()


def read_trace(path: str | Path) -> list[dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))
