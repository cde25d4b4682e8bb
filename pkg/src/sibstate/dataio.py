"""Parsing, resampling, rescaling and target construction for charging data.

Input formats (UTF-8 CSV, ``#`` comment lines ignored):

* profile:   ``cycle,time_s,voltage_v,current_a`` sorted by (cycle, time_s)
* capacity:  ``cycle,discharge_capacity_ah``
* manifest:  JSON ``{"cells": [{"label", "temperature_c", "profile_path",
  "capacity_path", "excluded_cycles", "n_parallel"}, ...]}`` with paths
  relative to the manifest file.

All functions are pure over immutable inputs and safe to call concurrently.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import (
    DataError,
    ParseError,
    ReferenceCapacityError,
    SchemaError,
    SplitError,
)

GRID_PERIOD_S = 30.0
V_SCALE_LOW, V_SCALE_HIGH = 2.15, 4.0
I_SCALE_LOW, I_SCALE_HIGH = 0.5, 5.0
TEMP_MIN_C, TEMP_MAX_C = 0.0, 45.0
REFERENCE_CYCLE = 3
Q_NOMINAL_AH = 10.0
SPLIT_RATIOS = (0.7, 0.1, 0.2)


class RawSample(NamedTuple):
    time_s: float
    voltage_v: float
    current_a: float


@dataclass
class RawCycle:
    """One cycle's charging samples plus its measured discharge capacity.

    ``discharge_capacity_ah`` is ``None`` for unlabeled prediction input; any
    path needing targets will then fail loudly.
    """

    cycle_index: int
    times_s: np.ndarray
    voltages_v: np.ndarray
    currents_a: np.ndarray
    discharge_capacity_ah: float | None = None

    def __post_init__(self):
        self.times_s = np.asarray(self.times_s, dtype=np.float64)
        self.voltages_v = np.asarray(self.voltages_v, dtype=np.float64)
        self.currents_a = np.asarray(self.currents_a, dtype=np.float64)
        if self.cycle_index < 1:
            raise DataError(f"cycle_index must be positive, got {self.cycle_index}")
        if self.times_s.size < 2:
            raise DataError(f"cycle {self.cycle_index}: needs at least 2 samples")
        if self.times_s[0] < 0:
            raise DataError(f"cycle {self.cycle_index}: negative start time")
        d = np.diff(self.times_s)
        if np.any(d == 0):
            raise DataError(f"cycle {self.cycle_index}: duplicate timestamps")
        if np.any(d < 0):
            raise DataError(f"cycle {self.cycle_index}: timestamps not increasing")
        if not (np.all(np.isfinite(self.voltages_v)) and np.all(np.isfinite(self.currents_a))):
            raise DataError(f"cycle {self.cycle_index}: non-finite sample values")
        if self.discharge_capacity_ah is not None and not self.discharge_capacity_ah > 0:
            raise DataError(f"cycle {self.cycle_index}: non-positive capacity")

    @classmethod
    def from_samples(cls, cycle_index: int, samples: list[RawSample],
                     discharge_capacity_ah: float) -> "RawCycle":
        arr = np.array(samples, dtype=np.float64).reshape(-1, 3)
        return cls(cycle_index, arr[:, 0], arr[:, 1], arr[:, 2], discharge_capacity_ah)

    @property
    def samples(self) -> list[RawSample]:
        return [RawSample(*row) for row in
                zip(self.times_s, self.voltages_v, self.currents_a)]


@dataclass
class CellRecord:
    """A cell's labelled cycles with its reference-cycle capacity."""

    label: str
    temperature_c: float
    cycles: list[RawCycle]
    reference_capacity_ah: float
    excluded_cycles: list[int] = field(default_factory=list)

    def __post_init__(self):
        if not TEMP_MIN_C <= self.temperature_c <= TEMP_MAX_C:
            raise DataError(
                f"cell {self.label}: temperature {self.temperature_c} degC outside "
                f"[{TEMP_MIN_C}, {TEMP_MAX_C}]")
        if not self.reference_capacity_ah > 0:
            raise ReferenceCapacityError(
                f"cell {self.label}: reference capacity must be positive")


@dataclass
class ResampledCycle:
    """A cycle on the uniform 30 s grid with scaled signals and targets."""

    cycle_index: int
    v_scaled: np.ndarray
    i_scaled: np.ndarray
    soc_targets: np.ndarray
    soh_target: float
    q_target_ah: float
    grid_period_s: float = GRID_PERIOD_S

    @property
    def n_samples(self) -> int:
        return len(self.v_scaled)


def scale_voltage(v):
    """Affine volts -> unitless; 2.15 V maps to 0 and 4 V to 1, no clamping."""
    v = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise DataError("non-finite voltage")
    out = (v - V_SCALE_LOW) / (V_SCALE_HIGH - V_SCALE_LOW)
    return float(out) if out.ndim == 0 else out


def scale_current(i):
    """Affine amperes -> unitless; 0.5 A maps to 0 and 5 A to 1, no clamping."""
    i = np.asarray(i, dtype=np.float64)
    if not np.all(np.isfinite(i)):
        raise DataError("non-finite current")
    out = (i - I_SCALE_LOW) / (I_SCALE_HIGH - I_SCALE_LOW)
    return float(out) if out.ndim == 0 else out


def resample(cycle: RawCycle, period_s: float = GRID_PERIOD_S):
    """Piecewise-linear resampling onto the grid 0, period, 2*period, ...

    The grid extends to the largest multiple of ``period_s`` not beyond the
    last raw timestamp. Returns (times, voltages, currents).
    """
    last = cycle.times_s[-1]
    n = int(np.floor(last / period_s)) + 1
    grid = np.arange(n, dtype=np.float64) * period_s
    v = np.interp(grid, cycle.times_s, cycle.voltages_v)
    i = np.interp(grid, cycle.times_s, cycle.currents_a)
    return grid, v, i


def compute_soc_targets(currents_a: np.ndarray, period_s: float = GRID_PERIOD_S) -> np.ndarray:
    """Per-grid-point SOC: cumulative trapezoidal charge over total charge.

    The first point is 0 and the last is exactly 1; monotone because charging
    currents are non-negative.
    """
    currents_a = np.asarray(currents_a, dtype=np.float64)
    if np.any(currents_a < 0):
        raise DataError("negative current in a charging profile")
    if currents_a.size < 2:
        raise DataError("degenerate cycle: fewer than 2 grid points")
    steps = 0.5 * (currents_a[1:] + currents_a[:-1]) * period_s
    cum = np.concatenate([[0.0], np.cumsum(steps)])
    total = cum[-1]
    if total <= 0:
        raise DataError("degenerate cycle: zero total charge")
    soc = cum / total
    soc[-1] = 1.0
    return soc


def compute_soh(q_k: float, q_3: float) -> float:
    """Capacity ratio against the reference cycle; may exceed 1 early in life."""
    if not q_3 > 0:
        raise ReferenceCapacityError(f"reference capacity must be positive, got {q_3}")
    return q_k / q_3


def split_cycles(n_or_record, ratios=SPLIT_RATIOS):
    """Chronological, contiguous split of cycle positions into train/valid/test.

    The first ``floor(r_train*n)`` cycles train, the next ``floor(r_valid*n)``
    validate, and the remainder tests. Returns three lists of positions into
    the (sorted) cycle list.
    """
    n = n_or_record if isinstance(n_or_record, int) else len(n_or_record.cycles)
    if n < 10:
        raise SplitError(f"need at least 10 cycles to split, got {n}")
    n_train = int(np.floor(ratios[0] * n))
    n_valid = int(np.floor(ratios[1] * n))
    idx = list(range(n))
    return idx[:n_train], idx[n_train:n_train + n_valid], idx[n_train + n_valid:]


# ---- CSV / manifest parsing ---------------------------------------------


def _data_lines(text: str):
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        yield lineno, stripped


def parse_profile_csv(text: str) -> dict[int, np.ndarray]:
    """Profile CSV -> {cycle_index: (n, 3) array of time_s, voltage_v, current_a}."""
    rows = _data_lines(text)
    try:
        _, header = next(rows)
    except StopIteration:
        raise ParseError("empty profile file") from None
    if [c.strip() for c in header.split(",")] != ["cycle", "time_s", "voltage_v", "current_a"]:
        raise SchemaError(f"unexpected profile header: {header!r}")
    by_cycle: dict[int, list[tuple[float, float, float]]] = {}
    for lineno, line in rows:
        parts = line.split(",")
        if len(parts) != 4:
            raise ParseError(f"profile line {lineno}: expected 4 fields, got {len(parts)}")
        try:
            cyc = int(parts[0])
            t, v, i = float(parts[1]), float(parts[2]), float(parts[3])
        except ValueError as exc:
            raise ParseError(f"profile line {lineno}: {exc}") from None
        by_cycle.setdefault(cyc, []).append((t, v, i))
    if not by_cycle:
        raise ParseError("profile file has a header but no data rows")
    return {cyc: np.array(vals, dtype=np.float64) for cyc, vals in by_cycle.items()}


def parse_capacity_csv(text: str) -> dict[int, float]:
    """Capacity CSV -> {cycle_index: discharge_capacity_ah}."""
    rows = _data_lines(text)
    try:
        _, header = next(rows)
    except StopIteration:
        raise ParseError("empty capacity file") from None
    if [c.strip() for c in header.split(",")] != ["cycle", "discharge_capacity_ah"]:
        raise SchemaError(f"unexpected capacity header: {header!r}")
    caps: dict[int, float] = {}
    for lineno, line in rows:
        parts = line.split(",")
        if len(parts) != 2:
            raise ParseError(f"capacity line {lineno}: expected 2 fields, got {len(parts)}")
        try:
            caps[int(parts[0])] = float(parts[1])
        except ValueError as exc:
            raise ParseError(f"capacity line {lineno}: {exc}") from None
    if not caps:
        raise ParseError("capacity file has a header but no data rows")
    return caps


def parse_cell(
    profile_text: str,
    capacity_text: str,
    label: str,
    temperature_c: float,
    excluded_cycles: list[int] | None = None,
) -> CellRecord:
    """Assemble a cell record from its profile and capacity files.

    Excluded cycles are dropped after the reference capacity is read, so an
    outlier reference would still be an explicit, visible choice. Every
    profiled cycle must have a capacity row; the reference cycle must exist.
    """
    excluded = sorted(set(excluded_cycles or []))
    profiles = parse_profile_csv(profile_text)
    capacities = parse_capacity_csv(capacity_text)
    missing = sorted(set(profiles) - set(capacities))
    if missing:
        raise SchemaError(f"cell {label}: no capacity for cycles {missing[:5]}")
    if REFERENCE_CYCLE not in capacities:
        raise ReferenceCapacityError(
            f"cell {label}: reference cycle {REFERENCE_CYCLE} missing from capacity file")
    q3 = capacities[REFERENCE_CYCLE]
    cycles = []
    for cyc in sorted(profiles):
        if cyc in excluded:
            continue
        arr = profiles[cyc]
        cycles.append(RawCycle(cyc, arr[:, 0], arr[:, 1], arr[:, 2], capacities[cyc]))
    return CellRecord(label, temperature_c, cycles, q3, excluded)


@dataclass
class ManifestEntry:
    label: str
    temperature_c: float
    profile_path: Path
    capacity_path: Path
    excluded_cycles: list[int]
    n_parallel: int = 1


def load_manifest(path) -> list[ManifestEntry]:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"cannot read manifest {path}: {exc}") from exc
    if not isinstance(doc, dict) or "cells" not in doc:
        raise SchemaError(f"manifest {path} lacks a 'cells' list")
    entries = []
    for cell in doc["cells"]:
        try:
            entries.append(ManifestEntry(
                label=str(cell["label"]),
                temperature_c=float(cell["temperature_c"]),
                profile_path=path.parent / cell["profile_path"],
                capacity_path=path.parent / cell["capacity_path"],
                excluded_cycles=[int(c) for c in cell.get("excluded_cycles", [])],
                n_parallel=int(cell.get("n_parallel", 1)),
            ))
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"manifest {path}: bad cell entry {cell!r}: {exc}") from exc
    return entries


# ---- prepared (model-ready) dataset --------------------------------------


@dataclass
class PreparedCycle:
    cycle_index: int
    v_scaled: np.ndarray
    i_scaled: np.ndarray
    soc_targets: np.ndarray
    soh_target: float
    q_target_ah: float

    @property
    def n_samples(self) -> int:
        return len(self.v_scaled)


@dataclass
class PreparedCell:
    label: str
    temperature_c: float
    reference_capacity_ah: float
    cycles: list[PreparedCycle]
    train_idx: list[int]
    valid_idx: list[int]
    test_idx: list[int]

    def split(self, name: str) -> list[int]:
        return {"train": self.train_idx, "valid": self.valid_idx,
                "test": self.test_idx, "all": list(range(len(self.cycles)))}[name]

    def n_segments(self, split: str) -> int:
        return sum(self.cycles[i].n_samples for i in self.split(split))


def prepare_record(record: CellRecord, do_split: bool = True) -> PreparedCell:
    """Resample, rescale and attach targets to every cycle of a record."""
    prepared = []
    for cyc in record.cycles:
        try:
            _, v, i = resample(cyc)
            if len(v) < 2:
                raise DataError("too short for the 30 s grid")
            soc = compute_soc_targets(i)
            labeled = cyc.discharge_capacity_ah is not None
            prepared.append(PreparedCycle(
                cycle_index=cyc.cycle_index,
                v_scaled=scale_voltage(v),
                i_scaled=scale_current(i),
                soc_targets=soc,
                soh_target=compute_soh(cyc.discharge_capacity_ah,
                                       record.reference_capacity_ah)
                if labeled else float("nan"),
                q_target_ah=cyc.discharge_capacity_ah if labeled else float("nan"),
            ))
        except DataError as exc:
            raise DataError(f"cell {record.label} cycle {cyc.cycle_index}: {exc}") from exc
    if do_split:
        tr, va, te = split_cycles(len(prepared))
    else:
        tr, va, te = [], [], []
    return PreparedCell(record.label, record.temperature_c,
                        record.reference_capacity_ah, prepared, tr, va, te)


def prepare_entry(entry: ManifestEntry, do_split: bool = True) -> PreparedCell:
    record = parse_cell(
        entry.profile_path.read_text(encoding="utf-8"),
        entry.capacity_path.read_text(encoding="utf-8"),
        entry.label,
        entry.temperature_c,
        entry.excluded_cycles,
    )
    return prepare_record(record, do_split=do_split)


def prepare_dataset(manifest_path, cache_dir=None, do_split: bool = True) -> list[PreparedCell]:
    """Prepare every cell in a manifest, optionally through an on-disk cache."""
    entries = load_manifest(manifest_path)
    cells = []
    for entry in entries:
        cached = None
        if cache_dir is not None:
            cached = _load_cached_cell(Path(cache_dir), entry)
        if cached is None:
            cached = prepare_entry(entry, do_split=do_split)
            if cache_dir is not None:
                _save_cached_cell(Path(cache_dir), entry, cached)
        cells.append(cached)
    return cells


def _cache_path(cache_dir: Path, entry: ManifestEntry) -> Path:
    return cache_dir / f"{entry.label}.npz"


def _save_cached_cell(cache_dir: Path, entry: ManifestEntry, cell: PreparedCell) -> None:
    cache_dir.mkdir(parents=True, exist_ok=True)
    lengths = np.array([c.n_samples for c in cell.cycles], dtype=np.int64)
    np.savez(
        _cache_path(cache_dir, entry),
        label=np.array(cell.label),
        temperature_c=np.array(cell.temperature_c),
        q3=np.array(cell.reference_capacity_ah),
        cycle_index=np.array([c.cycle_index for c in cell.cycles], dtype=np.int64),
        lengths=lengths,
        v=np.concatenate([c.v_scaled for c in cell.cycles]),
        i=np.concatenate([c.i_scaled for c in cell.cycles]),
        soc=np.concatenate([c.soc_targets for c in cell.cycles]),
        soh=np.array([c.soh_target for c in cell.cycles]),
        q=np.array([c.q_target_ah for c in cell.cycles]),
        train_idx=np.array(cell.train_idx, dtype=np.int64),
        valid_idx=np.array(cell.valid_idx, dtype=np.int64),
        test_idx=np.array(cell.test_idx, dtype=np.int64),
    )


def _load_cached_cell(cache_dir: Path, entry: ManifestEntry) -> PreparedCell | None:
    path = _cache_path(cache_dir, entry)
    if not path.exists():
        return None
    with np.load(path) as z:
        if str(z["label"]) != entry.label:
            return None
        offsets = np.concatenate([[0], np.cumsum(z["lengths"])])
        cycles = []
        for k, cyc in enumerate(z["cycle_index"]):
            a, b = offsets[k], offsets[k + 1]
            cycles.append(PreparedCycle(
                cycle_index=int(cyc),
                v_scaled=z["v"][a:b].copy(),
                i_scaled=z["i"][a:b].copy(),
                soc_targets=z["soc"][a:b].copy(),
                soh_target=float(z["soh"][k]),
                q_target_ah=float(z["q"][k]),
            ))
        return PreparedCell(
            label=entry.label,
            temperature_c=float(z["temperature_c"]),
            reference_capacity_ah=float(z["q3"]),
            cycles=cycles,
            train_idx=[int(v) for v in z["train_idx"]],
            valid_idx=[int(v) for v in z["valid_idx"]],
            test_idx=[int(v) for v in z["test_idx"]],
        )
