"""Zero-prepended sliding-window segmentation of resampled charging curves.

A cycle with N samples yields exactly N segments. Segment s (1-based) covers
scaled-signal indices s-window_size+1 .. s; indices before the first sample
are zeros, the scaled image of the pre-charge rest values (2.15 V, 0.5 A).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .dataio import GRID_PERIOD_S, PreparedCycle, ResampledCycle
from .errors import DataError


@dataclass(frozen=True)
class WindowConfig:
    window_size: int = 128
    period_s: float = GRID_PERIOD_S

    def __post_init__(self):
        if self.window_size < 2:
            raise ValueError(f"window_size must be >= 2, got {self.window_size}")


@dataclass
class Segment:
    """One 2 x window_size feature window and its per-sample SOC target."""

    feature: np.ndarray
    soc_target: float
    cycle_index: int
    position: int  # 1-based sample index of the window's last entry


@dataclass
class CycleSegments:
    cycle_index: int
    segments: list[Segment]
    soh_target: float
    q_target_ah: float
    temperature_c: float


def segment_time_span(config: WindowConfig) -> float:
    """Seconds covered by one window: (window_size - 1) grid periods."""
    return (config.window_size - 1) * config.period_s


def window_matrix(series: np.ndarray, window_size: int) -> np.ndarray:
    """All windows of a zero-prepended series, as an (n, window_size) array.

    Row s-1 is the window ending at sample s. This is the vectorized
    equivalent of materializing the prepended series and slicing it.
    """
    series = np.asarray(series, dtype=np.float64)
    padded = np.concatenate([np.zeros(window_size - 1), series])
    return sliding_window_view(padded, window_size)


def segment_features(
    v_scaled: np.ndarray,
    i_scaled: np.ndarray,
    config: WindowConfig,
    positions: Sequence[int] | None = None,
) -> np.ndarray:
    """Stack voltage/current windows into an (n, 2, window_size) feature array.

    ``positions`` selects 1-based segment positions; default is all of them.
    """
    if len(v_scaled) != len(i_scaled):
        raise DataError("voltage/current series lengths differ")
    if len(v_scaled) == 0:
        raise DataError("cannot window an empty cycle")
    vw = window_matrix(v_scaled, config.window_size)
    iw = window_matrix(i_scaled, config.window_size)
    if positions is not None:
        rows = np.asarray(positions, dtype=np.int64) - 1
        if rows.size == 0:
            raise DataError("empty position selection")
        if rows.min() < 0 or rows.max() >= len(v_scaled):
            raise DataError(f"segment positions out of range 1..{len(v_scaled)}")
        vw, iw = vw[rows], iw[rows]
    return np.ascontiguousarray(np.stack([vw, iw], axis=1))


def iter_segments(
    cycle: PreparedCycle | ResampledCycle, config: WindowConfig
) -> Iterator[Segment]:
    """Lazily yield a cycle's segments in position order."""
    vw = window_matrix(cycle.v_scaled, config.window_size)
    iw = window_matrix(cycle.i_scaled, config.window_size)
    for s in range(cycle.n_samples):
        yield Segment(
            feature=np.stack([vw[s], iw[s]]),
            soc_target=float(cycle.soc_targets[s]),
            cycle_index=cycle.cycle_index,
            position=s + 1,
        )


def build_segments(
    cycle: PreparedCycle | ResampledCycle,
    config: WindowConfig,
    temperature_c: float,
) -> CycleSegments:
    """Materialize every segment of a cycle with its targets."""
    if cycle.n_samples < 1:
        raise DataError(f"cycle {cycle.cycle_index}: no samples to window")
    return CycleSegments(
        cycle_index=cycle.cycle_index,
        segments=list(iter_segments(cycle, config)),
        soh_target=float(cycle.soh_target),
        q_target_ah=float(cycle.q_target_ah),
        temperature_c=temperature_c,
    )


def dump_segments_csv(cycle_segments: CycleSegments, path) -> None:
    """Debug dump: one row per segment row, ``cycle,position,row,values...``."""
    from .output import fmt

    with open(path, "w", encoding="utf-8") as fh:
        for seg in cycle_segments.segments:
            for row in range(2):
                values = ",".join(fmt(v) for v in seg.feature[row])
                fh.write(f"{seg.cycle_index},{seg.position},{row},{values}\n")
