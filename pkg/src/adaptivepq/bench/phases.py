"""Workload phases and the phase-file formats.

Table format (``.txt``/``.tbl``, whitespace separated, ``#`` comments)::

    # time_s  size  key_range  threads  insert-delete
    0         1M    10M        57       50-50
    25        26    10M        36       70-30
    end       50

Each row starts a phase at ``time_s``; it lasts until the next row, and the
``end`` row closes the last one. ``size`` of the first row is the initial
queue size; later sizes are what the queue happened to hold and are kept for
reference only. Counts accept ``K``/``M`` suffixes.

TOML format (``.toml``): an array ``[[phase]]`` of tables with the same
column names (``time``, ``size``, ``key_range``, ``threads``, ``insert``) and
a top-level ``end``.
"""

from __future__ import annotations

import re
import sys
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path
from typing import Union

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__all__ = ["WorkloadPhase", "PhaseFileError", "parse_count", "parse_table", "load_phases", "preset", "PRESETS", "scale_phases"]

PRESETS = ("dynamic_range", "dynamic_threads", "dynamic_operation", "dynamic_total")
PAPER_PHASE_SECONDS = 25.0


class PhaseFileError(ValueError):
    pass


@dataclass(frozen=True)
class WorkloadPhase:
    duration: float
    n_threads: int
    key_range: int
    insert_pct: float
    initial_size: int = 0

    def __post_init__(self) -> None:
        if self.duration <= 0:
            raise ValueError(f"phase duration must be positive, got {self.duration}")
        if self.n_threads < 1:
            raise ValueError(f"phase needs at least one thread, got {self.n_threads}")
        if self.key_range < 1:
            raise ValueError(f"key range must be >= 1, got {self.key_range}")
        if not 0.0 <= self.insert_pct <= 1.0:
            raise ValueError(f"insert_pct must lie in [0, 1], got {self.insert_pct}")
        if self.initial_size < 0:
            raise ValueError(f"initial size must be >= 0, got {self.initial_size}")


_SUFFIX = {"": 1, "K": 10**3, "M": 10**6, "G": 10**9}


def parse_count(text: Union[str, int]) -> int:
    if isinstance(text, int):
        return text
    m = re.fullmatch(r"\s*(\d+(?:\.\d+)?)\s*([KMG]?)\s*", str(text), re.IGNORECASE)
    if not m:
        raise ValueError(f"bad count {text!r}")
    return int(round(float(m.group(1)) * _SUFFIX[m.group(2).upper()]))


def _parse_split(text: Union[str, float]) -> float:
    """``"70-30"`` -> 0.7; a bare fraction is accepted as well."""
    if isinstance(text, (int, float)):
        return float(text)
    m = re.fullmatch(r"\s*(\d+(?:\.\d+)?)\s*-\s*(\d+(?:\.\d+)?)\s*", text)
    if m:
        ins, dels = float(m.group(1)), float(m.group(2))
        if ins + dels <= 0:
            raise ValueError(f"bad insert-delete split {text!r}")
        return ins / (ins + dels)
    return float(text)


def _build(rows: list[tuple[float, int, int, int, float]], end: float | None, where: str) -> list[WorkloadPhase]:
    if not rows:
        raise PhaseFileError(f"{where}: no phases")
    starts = [r[0] for r in rows]
    if any(b <= a for a, b in zip(starts, starts[1:])):
        raise PhaseFileError(f"{where}: phase start times must increase")
    if end is None:
        step = starts[-1] - starts[-2] if len(starts) > 1 else PAPER_PHASE_SECONDS
        end = starts[-1] + step
    if end <= starts[-1]:
        raise PhaseFileError(f"{where}: end time {end} is not after the last phase")
    bounds = starts[1:] + [end]
    phases = []
    for i, ((t, size, key_range, threads, pct), stop) in enumerate(zip(rows, bounds)):
        phases.append(WorkloadPhase(stop - t, threads, key_range, pct, size if i == 0 else 0))
    return phases


def parse_table(text: str, where: str = "<table>") -> list[WorkloadPhase]:
    rows = []
    end = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            if parts[0].lower() == "end":
                if len(parts) != 2:
                    raise ValueError("'end' takes one time value")
                end = float(parts[1])
                continue
            if len(parts) != 5:
                raise ValueError(f"expected 5 columns, got {len(parts)}")
            rows.append(
                (float(parts[0]), parse_count(parts[1]), parse_count(parts[2]), parse_count(parts[3]), _parse_split(parts[4]))
            )
        except ValueError as exc:
            raise PhaseFileError(f"{where}:{lineno}: {exc}") from None
    return _build(rows, end, where)


def parse_toml(text: str, where: str = "<toml>") -> list[WorkloadPhase]:
    try:
        doc = tomllib.loads(text)
        rows = [
            (
                float(p["time"]),
                parse_count(p.get("size", 0)),
                parse_count(p["key_range"]),
                parse_count(p["threads"]),
                _parse_split(p["insert"]),
            )
            for p in doc.get("phase", [])
        ]
    except (tomllib.TOMLDecodeError, KeyError, ValueError, TypeError) as exc:
        raise PhaseFileError(f"{where}: {exc}") from None
    end = doc.get("end")
    return _build(rows, None if end is None else float(end), where)


def load_phases(path: Union[str, Path]) -> list[WorkloadPhase]:
    """Read a phase file, or a preset when ``path`` names one."""
    if str(path) in PRESETS:
        return preset(str(path))
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise PhaseFileError(f"{path}: {exc.strerror or exc}") from None
    if path.suffix == ".toml":
        return parse_toml(text, str(path))
    return parse_table(text, str(path))


def preset(name: str) -> list[WorkloadPhase]:
    if name not in PRESETS:
        raise PhaseFileError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    text = resources.files("adaptivepq.bench").joinpath("presets", f"{name}.txt").read_text()
    return parse_table(text, name)


def scale_phases(
    phases: list[WorkloadPhase],
    *,
    phase_seconds: float | None = None,
    thread_scale: float = 1.0,
    size_scale: float = 1.0,
    max_threads: int | None = None,
) -> list[WorkloadPhase]:
    """Shrink a paper-scale phase list to desk scale.

    ``phase_seconds`` rescales every duration so the longest phase lasts that
    long (relative lengths are kept).
    """
    longest = max(p.duration for p in phases)
    out = []
    for p in phases:
        threads = max(1, round(p.n_threads * thread_scale))
        if max_threads is not None:
            threads = min(threads, max_threads)
        duration = p.duration if phase_seconds is None else p.duration * phase_seconds / longest
        size = round(p.initial_size * size_scale)
        out.append(replace(p, duration=duration, n_threads=threads, initial_size=min(size, p.key_range)))
    return out
