"""Evaluation, capacity-calibrated SOH, and parallel-pack inference.

``SOH_cali`` divides the model's predicted capacity by the cell's true
reference capacity, as opposed to ``SOH_pred``, the model's direct output.
Reports carry R2/MSE/MAE/max-error per target, with SOH maxima also in
percent, plus a per-temperature breakdown.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataio import PreparedCell, PreparedCycle, RawCycle, prepare_record, CellRecord
from .errors import DataError, ReferenceCapacityError
from .model import FullModel, PredictedCycle
from .output import write_csv, write_json
from .training import r2
from .windowing import WindowConfig


def soh_cali(q_pred_ah: float, q3_true_ah: float) -> float:
    """State of health recovered from predicted capacity and the true reference."""
    if not q3_true_ah > 0:
        raise ReferenceCapacityError(f"reference capacity must be positive, got {q3_true_ah}")
    return q_pred_ah / q3_true_ah


@dataclass
class TargetMetrics:
    r2: float
    mse: float
    mae: float
    max_abs_err: float

    @classmethod
    def from_arrays(cls, pred, truth) -> "TargetMetrics":
        pred = np.asarray(pred, dtype=np.float64)
        truth = np.asarray(truth, dtype=np.float64)
        err = pred - truth
        return cls(r2=r2(pred, truth), mse=float(np.mean(err ** 2)),
                   mae=float(np.mean(np.abs(err))), max_abs_err=float(np.max(np.abs(err))))

    def to_dict(self, in_percent: bool = False) -> dict:
        d = {"r2": self.r2, "mse": self.mse, "mae": self.mae,
             "max_abs_err": self.max_abs_err}
        if in_percent:
            d["max_abs_err_pct"] = 100.0 * self.max_abs_err
        return d


@dataclass
class CycleRow:
    cell: str
    temperature_c: float
    cycle_index: int
    q_true: float
    q_pred: float
    soh_true: float
    soh_pred: float
    soh_cali: float


@dataclass
class EvalReport:
    split: str
    n_cells: int
    n_cycles: int
    n_segments: int
    soc: TargetMetrics
    q_ah: TargetMetrics
    soh_pred: TargetMetrics
    soh_cali: TargetMetrics
    by_temperature: dict[float, dict] = field(default_factory=dict)
    rows: list[CycleRow] = field(default_factory=list)
    soc_true: np.ndarray | None = None
    soc_pred: np.ndarray | None = None

    def to_dict(self) -> dict:
        return {
            "split": self.split,
            "counts": {"cells": self.n_cells, "cycles": self.n_cycles,
                       "segments": self.n_segments},
            "targets": {
                "soc": self.soc.to_dict(),
                "q_ah": self.q_ah.to_dict(),
                "soh_pred": self.soh_pred.to_dict(in_percent=True),
                "soh_cali": self.soh_cali.to_dict(in_percent=True),
            },
            "by_temperature": {str(t): d for t, d in sorted(self.by_temperature.items())},
        }


def evaluate(
    model: FullModel | None,
    cells: list[PreparedCell],
    split: str = "test",
    wcfg: WindowConfig | None = None,
    predict_fn=None,
    fixed_q3: float | None = None,
    clamp_soc: bool = False,
) -> EvalReport:
    """Model metrics over a split: SOC per segment, Q/SOH per cycle.

    ``predict_fn(cell, cycle) -> (soc_pred, soh_pred, q_pred_ah)`` overrides
    the model path (used to verify the report machinery against oracles).
    ``fixed_q3`` switches the calibrated SOH to a shared reference capacity.
    """
    if predict_fn is None:
        if model is None:
            raise DataError("evaluate needs a model or a predict_fn")
        wcfg = wcfg or WindowConfig(window_size=model.config.window_size)

        def predict_fn(cell, cyc):
            pred = model.predict_prepared(cyc, cell.temperature_c, wcfg)
            return pred.soc, pred.soh, pred.q_ah

    soc_true_all, soc_pred_all, rows = [], [], []
    n_cycles = 0
    for cell in cells:
        idx = cell.split(split)
        if not cell.reference_capacity_ah > 0:
            raise ReferenceCapacityError(f"cell {cell.label}: invalid reference capacity")
        for k in idx:
            cyc = cell.cycles[k]
            soc_pred, soh_pred, q_pred = predict_fn(cell, cyc)
            soc_pred = np.asarray(soc_pred, dtype=np.float64)
            if clamp_soc:
                soc_pred = np.clip(soc_pred, 0.0, 1.0)
            if len(soc_pred) != cyc.n_samples:
                raise DataError(
                    f"cell {cell.label} cycle {cyc.cycle_index}: predictor returned "
                    f"{len(soc_pred)} SOC values for {cyc.n_samples} segments")
            soc_true_all.append(cyc.soc_targets)
            soc_pred_all.append(soc_pred)
            rows.append(CycleRow(
                cell=cell.label, temperature_c=cell.temperature_c,
                cycle_index=cyc.cycle_index,
                q_true=cyc.q_target_ah, q_pred=q_pred,
                soh_true=cyc.soh_target, soh_pred=soh_pred,
                soh_cali=soh_cali(q_pred, fixed_q3 if fixed_q3 is not None
                                  else cell.reference_capacity_ah),
            ))
            n_cycles += 1
    if n_cycles == 0:
        raise DataError(f"split {split!r} is empty")

    soc_true = np.concatenate(soc_true_all)
    soc_pred = np.concatenate(soc_pred_all)
    report = EvalReport(
        split=split,
        n_cells=len(cells),
        n_cycles=n_cycles,
        n_segments=len(soc_true),
        soc=TargetMetrics.from_arrays(soc_pred, soc_true),
        q_ah=TargetMetrics.from_arrays([r.q_pred for r in rows], [r.q_true for r in rows]),
        soh_pred=TargetMetrics.from_arrays([r.soh_pred for r in rows],
                                           [r.soh_true for r in rows]),
        soh_cali=TargetMetrics.from_arrays([r.soh_cali for r in rows],
                                           [r.soh_true for r in rows]),
        rows=rows,
        soc_true=soc_true,
        soc_pred=soc_pred,
    )
    for temp in sorted({r.temperature_c for r in rows}):
        sub = [r for r in rows if r.temperature_c == temp]
        breakdown = {
            "n_cycles": len(sub),
            "q_mae": float(np.mean([abs(r.q_pred - r.q_true) for r in sub])),
            "soh_cali_max_err_pct": 100.0 * max(abs(r.soh_cali - r.soh_true) for r in sub),
        }
        if len(sub) >= 2 and len({r.q_true for r in sub}) > 1:
            breakdown["q_r2"] = r2([r.q_pred for r in sub], [r.q_true for r in sub])
        report.by_temperature[temp] = breakdown
    return report


def write_report_files(report: EvalReport, out_dir, seed: int | None = None,
                       config: dict | None = None) -> list[Path]:
    """Emit report.json, per-cycle predictions and tidy plot-data CSVs."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = [out_dir / "report.json"]
    write_json(written[-1], report.to_dict(), seed=seed, config=config)

    written.append(out_dir / "predictions.csv")
    write_csv(written[-1],
              ["cell", "cycle", "q_true", "q_pred", "soh_true", "soh_pred", "soh_cali"],
              [[r.cell, r.cycle_index, r.q_true, r.q_pred, r.soh_true, r.soh_pred,
                r.soh_cali] for r in report.rows], seed=seed, config=config)

    written.append(out_dir / "parity_capacity.csv")
    write_csv(written[-1], ["q_true", "q_pred"],
              [[r.q_true, r.q_pred] for r in report.rows], seed=seed, config=config)

    if report.soc_true is not None:
        written.append(out_dir / "parity_soc.csv")
        write_csv(written[-1], ["soc_true", "soc_pred"],
                  zip(report.soc_true.tolist(), report.soc_pred.tolist()),
                  seed=seed, config=config)

    written.append(out_dir / "soh_trace.csv")
    write_csv(written[-1],
              ["cell", "cycle", "soh_true", "soh_pred", "soh_cali"],
              [[r.cell, r.cycle_index, r.soh_true, r.soh_pred, r.soh_cali]
               for r in report.rows], seed=seed, config=config)
    return written


# ---- parallel packs -------------------------------------------------------


@dataclass
class PackSpec:
    """A unit of identical cells in parallel: shared voltage, summed current."""

    n_parallel: int
    cycles: list[RawCycle]

    def __post_init__(self):
        if self.n_parallel < 1:
            raise DataError(f"n_parallel must be >= 1, got {self.n_parallel}")


def pack_predict(
    model: FullModel,
    pack: PackSpec,
    temperature_c: float,
    wcfg: WindowConfig | None = None,
    subset=None,
) -> list[PredictedCycle]:
    """Infer pack state through the single-cell pipeline.

    The unit current divides by the cell count (voltage is shared across a
    parallel connection), the single-cell model runs unchanged, and the
    predicted capacity scales back up by the cell count. With one cell this
    is exactly the single-cell prediction.
    """
    wcfg = wcfg or WindowConfig(window_size=model.config.window_size)
    n = pack.n_parallel
    per_cell = CellRecord(
        label=f"pack-{n}p",
        temperature_c=temperature_c,
        cycles=[RawCycle(c.cycle_index, c.times_s, c.voltages_v, c.currents_a / n,
                         None if c.discharge_capacity_ah is None
                         else c.discharge_capacity_ah / n) for c in pack.cycles],
        reference_capacity_ah=1.0,  # unused: prediction never reads targets
    )
    prepared = prepare_record(per_cell, do_split=False)
    out = []
    for cyc in prepared.cycles:
        pred = model.predict_prepared(cyc, temperature_c, wcfg, subset=subset)
        out.append(PredictedCycle(positions=pred.positions, soc=pred.soc,
                                  soh=pred.soh, q_ah=n * pred.q_ah))
    return out
