"""Synthetic CC-CV ageing data with analytically known SOC/SOH/capacity.

Each cycle charges at constant current until a capacity-dependent fraction of
the cycle's charge has entered, then holds the upper voltage while the current
decays exponentially to the cutoff. Capacity follows a temperature-dependent
fade law with a saturating early rise, so realized ageing curves are known in
closed form and every emitted target can be checked exactly. Files use the
package's documented CSV/manifest formats; float columns are written in
shortest-exact form so derived quantities (e.g. pack currents divided by the
cell count) round-trip bit-identically.

This is a stylized signal generator for desk-scale verification, not an
electrochemical model.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataio import RawCycle
from .errors import GenerationError
from .output import fmt, header_line

V_START_ANCHORS = ((0.0, 2.30), (25.0, 2.18), (35.0, 2.15), (45.0, 2.12))
FADE_ANCHORS = ((0.0, 8.0e-4), (25.0, 3.0e-4), (45.0, 5.0e-4))


def v_start_for_temperature(temperature_c: float) -> float:
    """CC-phase starting voltage, interpolated over the tested-band anchors."""
    t, v = zip(*V_START_ANCHORS)
    return float(np.interp(temperature_c, t, v))


def fade_rate_for_temperature(temperature_c: float) -> float:
    """Per-cycle fractional capacity loss; coldest cells fade fastest."""
    t, f = zip(*FADE_ANCHORS)
    return float(np.interp(temperature_c, t, f))


@dataclass(frozen=True)
class SynthCellParams:
    q_nominal_ah: float = 10.0
    cc_current_a: float = 5.0
    cv_voltage_v: float = 4.0
    cv_cutoff_a: float = 0.5
    v_start_v: float | None = None        # None: temperature anchor table
    cc_shape_exp: float = 0.8
    cc_charge_fraction: float = 0.85
    fade_rate: float | None = None        # None: temperature anchor table
    early_rise: float = 0.03
    early_rise_tau_cycles: float = 100.0
    cv_tau_s: float | None = None         # None: solved so charge balances
    noise_sd_v: float = 0.005
    noise_sd_i: float = 0.020
    sample_period_s: float = 30.0
    jitter_s: float = 3.0
    regime_shift_cycle: int | None = None  # optional mid-life SOH jump
    regime_shift_delta: float = 0.0

    def __post_init__(self):
        if self.q_nominal_ah <= 0:
            raise GenerationError("nominal capacity must be positive")
        if not 0 < self.cv_cutoff_a < self.cc_current_a:
            raise GenerationError("need 0 < cv_cutoff < cc_current")
        if self.fade_rate is not None and self.fade_rate < 0:
            raise GenerationError("fade_rate must be non-negative")
        if min(self.noise_sd_v, self.noise_sd_i) < 0:
            raise GenerationError("noise levels must be non-negative")
        if not 0 < self.cc_charge_fraction < 1:
            raise GenerationError("cc_charge_fraction must lie in (0, 1)")


@dataclass(frozen=True)
class SynthCell:
    label: str
    temperature_c: float
    n_cycles: int
    params: SynthCellParams
    n_parallel: int = 1

    def __post_init__(self):
        if self.n_cycles < 3:
            raise GenerationError("need at least 3 cycles so the reference exists")
        if self.n_parallel < 1:
            raise GenerationError("n_parallel must be >= 1")


def soh_law(params: SynthCellParams, cycle_index: int, temperature_c: float) -> float:
    """Closed-form SOH(k, T): saturating early rise minus linear fade, floored."""
    fade = params.fade_rate if params.fade_rate is not None \
        else fade_rate_for_temperature(temperature_c)
    raw = 1.0 + params.early_rise * (1.0 - np.exp(-cycle_index / params.early_rise_tau_cycles)) \
        - fade * cycle_index
    if params.regime_shift_cycle is not None and cycle_index >= params.regime_shift_cycle:
        raw += params.regime_shift_delta
    if raw <= 0:
        raise GenerationError(
            f"fade rate {fade:g} drives capacity non-positive by cycle {cycle_index}")
    return max(raw, 0.5)


@dataclass(frozen=True)
class CyclePhases:
    """Analytic description of one generated cycle's charge trajectory."""

    q_ah: float
    t_cc_s: float
    t_total_s: float
    cv_tau_s: float
    v_start: float

    def current_a(self, t, params: SynthCellParams):
        t = np.asarray(t, dtype=np.float64)
        cv = params.cc_current_a * np.exp(-(t - self.t_cc_s) / self.cv_tau_s)
        return np.where(t <= self.t_cc_s, params.cc_current_a, cv)

    def voltage_v(self, t, params: SynthCellParams):
        t = np.asarray(t, dtype=np.float64)
        frac = np.clip(t / self.t_cc_s, 0.0, 1.0)
        cc = self.v_start + (params.cv_voltage_v - self.v_start) * frac ** params.cc_shape_exp
        return np.where(t <= self.t_cc_s, cc, params.cv_voltage_v)

    def soc(self, t, params: SynthCellParams):
        """Charged fraction of the cycle's total charge at time t (exact)."""
        t = np.asarray(t, dtype=np.float64)
        q_cc = params.cc_current_a * t / 3600.0
        cv_charge = self.cv_tau_s * params.cc_current_a * \
            (1.0 - np.exp(-(np.maximum(t, self.t_cc_s) - self.t_cc_s) / self.cv_tau_s)) / 3600.0
        q = np.where(t <= self.t_cc_s, q_cc,
                     params.cc_charge_fraction * self.q_ah + cv_charge)
        return np.minimum(q / self.q_ah, 1.0)


def cycle_phases(params: SynthCellParams, cycle_index: int,
                 temperature_c: float) -> CyclePhases:
    q_ah = params.q_nominal_ah * soh_law(params, cycle_index, temperature_c)
    q_cc = params.cc_charge_fraction * q_ah
    t_cc = q_cc / params.cc_current_a * 3600.0
    q_cv = (1.0 - params.cc_charge_fraction) * q_ah
    if params.cv_tau_s is not None:
        tau = params.cv_tau_s
    else:
        # exponential from cc_current to cutoff delivering exactly q_cv
        tau = q_cv * 3600.0 / (params.cc_current_a - params.cv_cutoff_a)
    t_total = t_cc + tau * np.log(params.cc_current_a / params.cv_cutoff_a)
    v_start = params.v_start_v if params.v_start_v is not None \
        else v_start_for_temperature(temperature_c)
    return CyclePhases(q_ah, t_cc, t_total, tau, v_start)


def sample_times(phases: CyclePhases, params: SynthCellParams,
                 rng: np.random.Generator) -> np.ndarray:
    """Jittered ~period sampling, always including the CC/CV corner and the end."""
    times = [0.0]
    t = 0.0
    while True:
        t += params.sample_period_s
        if params.jitter_s > 0:
            t += rng.uniform(-params.jitter_s, params.jitter_s)
        if t >= phases.t_total_s - 1.0:
            break
        times.append(t)
    anchored = np.append(times, [phases.t_cc_s, phases.t_total_s])
    anchored = np.unique(anchored)
    # drop any jittered point closer than 1 s to an anchor
    keep = np.ones(len(anchored), dtype=bool)
    gaps = np.diff(anchored)
    for j in np.nonzero(gaps < 1.0)[0]:
        victim = j if anchored[j] not in (phases.t_cc_s, phases.t_total_s) else j + 1
        keep[victim] = False
    return anchored[keep]


def gen_cycle(params: SynthCellParams, cycle_index: int, temperature_c: float,
              rng: np.random.Generator) -> tuple[RawCycle, np.ndarray]:
    """One synthetic charging cycle plus the exact SOC at its sample times."""
    phases = cycle_phases(params, cycle_index, temperature_c)
    t = sample_times(phases, params, rng)
    v = phases.voltage_v(t, params)
    i = phases.current_a(t, params)
    if params.noise_sd_v > 0:
        v = v + rng.normal(0.0, params.noise_sd_v, size=len(t))
    if params.noise_sd_i > 0:
        i = i + rng.normal(0.0, params.noise_sd_i, size=len(t))
    cycle = RawCycle(cycle_index, t, v, i, phases.q_ah)
    return cycle, phases.soc(t, params)


def gen_cell_files(cell: SynthCell, seed: int, out_dir) -> dict:
    """Write one cell's profile/capacity/sidecar CSVs; returns a manifest entry.

    For a parallel pack (``n_parallel > 1``) the emitted current and capacity
    are the per-cell values scaled by the cell count, with noise generated at
    cell level first so dividing the unit series back down is exact.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    scale = float(cell.n_parallel)
    head = header_line(seed)

    profile = [head, "cycle,time_s,voltage_v,current_a"]
    capacity = [head, "cycle,discharge_capacity_ah"]
    soc_side = [head, "cycle,time_s,soc_true"]
    truth = [head, "cycle,q_true_ah,soh_true"]
    # the fade law is closed-form, so the reference capacity is known up front
    q3 = cell.params.q_nominal_ah * soh_law(cell.params, 3, cell.temperature_c)
    for k in range(1, cell.n_cycles + 1):
        cyc, soc_true = gen_cycle(cell.params, k, cell.temperature_c, rng)
        for t, v, i, s in zip(cyc.times_s, cyc.voltages_v, cyc.currents_a, soc_true):
            profile.append(f"{k},{fmt(t)},{fmt(v)},{fmt(i * scale)}")
            soc_side.append(f"{k},{fmt(t)},{fmt(s)}")
        q_unit = cyc.discharge_capacity_ah * scale
        capacity.append(f"{k},{fmt(q_unit)}")
        truth.append(f"{k},{fmt(q_unit)},{fmt(cyc.discharge_capacity_ah / q3)}")

    base = out_dir / cell.label
    Path(f"{base}_profile.csv").write_text("\n".join(profile) + "\n", encoding="utf-8")
    Path(f"{base}_capacity.csv").write_text("\n".join(capacity) + "\n", encoding="utf-8")
    Path(f"{base}_soc_true.csv").write_text("\n".join(soc_side) + "\n", encoding="utf-8")
    Path(f"{base}_truth.csv").write_text("\n".join(truth) + "\n", encoding="utf-8")
    return {
        "label": cell.label,
        "temperature_c": cell.temperature_c,
        "profile_path": f"{cell.label}_profile.csv",
        "capacity_path": f"{cell.label}_capacity.csv",
        "excluded_cycles": [],
        "n_parallel": cell.n_parallel,
    }


def gen_dataset(
    out_dir,
    temps: tuple[float, ...] = (0.0, 25.0, 45.0),
    cells_per_temp: int = 4,
    n_cycles: int = 200,
    seed: int = 0,
    params: SynthCellParams = SynthCellParams(),
    holdout_temp: float | None = None,
    holdout_cells: int = 2,
    pack_n_parallel: int | None = None,
    pack_cycles: int | None = None,
) -> dict:
    """Generate a full training dataset, with optional unseen-temperature cells
    and an optional parallel pack, each under its own manifest.

    Per-cell seeds are spawned deterministically from the master seed, so a
    rerun with the same arguments reproduces every file byte for byte.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cells = [SynthCell(f"{t:g}C-c{j + 1}", t, n_cycles, params)
             for t in temps for j in range(cells_per_temp)]
    holdout = [SynthCell(f"{holdout_temp:g}C-h{j + 1}", holdout_temp, n_cycles, params)
               for j in range(holdout_cells)] if holdout_temp is not None else []
    packs = [SynthCell(f"pack4p-{pack_n_parallel}x", temps[len(temps) // 2],
                       pack_cycles or n_cycles, params, n_parallel=pack_n_parallel)] \
        if pack_n_parallel else []

    seeds = iter(np.random.SeedSequence(seed).spawn(len(cells) + len(holdout) + len(packs)))
    manifests = {}
    for name, group in (("manifest.json", cells),
                        ("manifest_holdout.json", holdout),
                        ("manifest_pack.json", packs)):
        entries = [gen_cell_files(cell, int(next(seeds).generate_state(1)[0]), out_dir)
                   for cell in group]
        if entries:
            payload = {"seed": seed, "cells": entries}
            (out_dir / name).write_text(
                json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
            manifests[name] = len(entries)
    return manifests
