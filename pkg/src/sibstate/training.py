"""Combined-loss training over cycle batches with validation-driven selection.

Each step draws a batch of cycles, samples a capped number of segment windows
per cycle, encodes them once, and reuses the encodings for both loss paths:
every sampled segment contributes to the SOC term, while a random keep-subset
of each cycle's encodings is averaged for the SOH/capacity term (feature
dropping regularizes the aggregate). After every epoch the capacity and SOH
coefficients of determination on the validation split (all segments, no
dropping) select the best checkpoint.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataio import PreparedCell, Q_NOMINAL_AH
from .errors import DataError, NumericError
from .model import FullModel, ModelConfig
from .numerics import Tensor, adam_step, matmul, mse
from .output import write_csv
from .windowing import WindowConfig, segment_features

TRACE_COLUMNS = ["epoch", "train_loss", "valid_r2_q", "valid_r2_soh", "valid_r2_avg", "lr"]


def _print_log(message: str) -> None:
    print(message, flush=True)


@dataclass(frozen=True)
class LossConfig:
    """Trade-off weight between the SOC term and the SOH/capacity term."""

    gamma: float = 0.2

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 3e-4
    weight_decay: float = 1e-6
    batch_cycles: int = 16
    epochs: int = 50
    sched_step_epochs: int = 10
    sched_factor: float = 0.5
    max_segments_per_cycle: int = 32
    keep_fraction: tuple[float, float] = (0.5, 1.0)
    seed: int = 0

    def __post_init__(self):
        if min(self.lr0, self.batch_cycles, self.epochs, self.sched_step_epochs,
               self.sched_factor, self.max_segments_per_cycle) <= 0:
            raise ValueError("all training constants must be positive")
        lo, hi = self.keep_fraction
        if not (0.0 < lo <= hi <= 1.0):
            raise ValueError(f"keep_fraction must be within (0, 1], got {self.keep_fraction}")

    def lr_at(self, epoch: int) -> float:
        """Step schedule: lr0 * factor ** floor(epoch / step), epoch 0-based."""
        return self.lr0 * self.sched_factor ** (epoch // self.sched_step_epochs)


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    valid_r2_q: float
    valid_r2_soh: float
    valid_r2_avg: float
    lr: float

    def row(self):
        return [self.epoch, self.train_loss, self.valid_r2_q,
                self.valid_r2_soh, self.valid_r2_avg, self.lr]


@dataclass
class TrainState:
    trace: list[EpochStats] = field(default_factory=list)
    best_r2_avg: float = -np.inf
    best_epoch: int = -1
    best_snapshot: dict | None = None
    wall_time_s: float = 0.0


def r2(pred, truth) -> float:
    """Coefficient of determination, 1 - SS_res / SS_tot about the truth mean."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape or pred.ndim != 1:
        raise DataError(f"r2 needs two equal-length vectors, got {pred.shape} vs {truth.shape}")
    if pred.size < 2:
        raise DataError("r2 needs at least 2 points")
    ss_tot = float(np.sum((truth - truth.mean()) ** 2))
    if ss_tot == 0.0:
        raise DataError("r2 undefined for constant truth")
    ss_res = float(np.sum((pred - truth) ** 2))
    return 1.0 - ss_res / ss_tot


def r2_avg(r2_q: float, r2_soh: float) -> float:
    """Model-selection metric: the mean of the capacity and SOH R2 scores."""
    if not (np.isfinite(r2_q) and np.isfinite(r2_soh)):
        raise DataError("r2_avg requires finite inputs")
    return 0.5 * (r2_q + r2_soh)


def combined_loss(soc_pred, soc_true, soh_pred, soh_true, q_pred, q_true,
                  gamma: float) -> Tensor:
    """Scalar training loss joining the segment-level and cycle-level errors.

    ``gamma/N_s * sum(SOC err^2) + (1-gamma)/(2M) * sum(SOH err^2 + Q err^2)``
    where N_s counts the supplied segments and M the supplied cycles. Capacity
    inputs are expected pre-normalized to the nominal-capacity scale.
    """
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
    soc_pred = soc_pred if isinstance(soc_pred, Tensor) else Tensor(soc_pred)
    if soc_pred.size == 0 or np.asarray(
            soh_pred.data if isinstance(soh_pred, Tensor) else soh_pred).size == 0:
        raise DataError("combined_loss over an empty batch")
    soc_term = mse(soc_pred, soc_true)
    cycle_term = mse(soh_pred, soh_true) + mse(q_pred, q_true)
    return gamma * soc_term + ((1.0 - gamma) * 0.5) * cycle_term


def validate(model: FullModel, cells: list[PreparedCell], wcfg: WindowConfig,
             split: str = "valid") -> tuple[float, float]:
    """R2 of capacity and SOH over a split, pooled across cells, full segments."""
    q_true, q_pred, soh_true, soh_pred = [], [], [], []
    for cell in cells:
        for k in cell.split(split):
            cyc = cell.cycles[k]
            pred = model.predict_prepared(cyc, cell.temperature_c, wcfg)
            q_true.append(cyc.q_target_ah)
            q_pred.append(pred.q_ah)
            soh_true.append(cyc.soh_target)
            soh_pred.append(pred.soh)
    return r2(q_pred, q_true), r2(soh_pred, soh_true)


def train(
    cells: list[PreparedCell],
    model_cfg: ModelConfig = ModelConfig(),
    loss_cfg: LossConfig = LossConfig(),
    train_cfg: TrainConfig = TrainConfig(),
    wcfg: WindowConfig | None = None,
    out_dir=None,
    log=_print_log,
) -> tuple[TrainState, FullModel]:
    """Run the full optimization; returns the trace and the last-epoch model.

    When ``out_dir`` is given, writes ``trace.csv`` plus ``best.ckpt`` and
    ``last.ckpt``. The best snapshot (highest validation R2 average) is also
    kept in memory on the returned state.
    """
    wcfg = wcfg or WindowConfig(window_size=model_cfg.window_size)
    train_items = [(ci, k) for ci, cell in enumerate(cells) for k in cell.train_idx]
    has_valid = any(cell.valid_idx for cell in cells)
    if not train_items or not has_valid:
        raise DataError("training requires non-empty train and valid splits")

    model = FullModel(model_cfg, seed=train_cfg.seed)
    rng = np.random.default_rng(train_cfg.seed)
    state = TrainState()
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    run_cfg = {"model": model_cfg.to_dict(), "loss": {"gamma": loss_cfg.gamma},
               "train": {k: getattr(train_cfg, k) for k in
                         ("lr0", "weight_decay", "batch_cycles", "epochs",
                          "sched_step_epochs", "sched_factor",
                          "max_segments_per_cycle", "keep_fraction", "seed")}}
    t_start = time.perf_counter()

    for epoch in range(train_cfg.epochs):
        lr = train_cfg.lr_at(epoch)
        order = rng.permutation(len(train_items))
        losses = []
        for b0 in range(0, len(order), train_cfg.batch_cycles):
            batch = [train_items[j] for j in order[b0:b0 + train_cfg.batch_cycles]]
            loss = _train_step(model, cells, batch, wcfg, loss_cfg, train_cfg, rng, lr)
            if not np.isfinite(loss):
                raise NumericError(
                    f"non-finite loss at epoch {epoch}, batch {b0 // train_cfg.batch_cycles}, "
                    f"lr {lr:g}")
            losses.append(loss)
        r2_q, r2_soh = validate(model, cells, wcfg)
        stats = EpochStats(epoch, float(np.mean(losses)), r2_q, r2_soh,
                           r2_avg(r2_q, r2_soh), lr)
        state.trace.append(stats)
        if stats.valid_r2_avg > state.best_r2_avg:
            state.best_r2_avg = stats.valid_r2_avg
            state.best_epoch = epoch
            state.best_snapshot = model.store.snapshot()
            if out_dir is not None:
                model.save(out_dir / "best.ckpt")
        log(f"epoch {epoch:3d}  loss {stats.train_loss:.3e}  "
            f"R2(Q) {r2_q:+.4f}  R2(SOH) {r2_soh:+.4f}  lr {lr:g}")

    state.wall_time_s = time.perf_counter() - t_start
    if out_dir is not None:
        model.save(out_dir / "last.ckpt")
        write_csv(out_dir / "trace.csv", TRACE_COLUMNS,
                  [s.row() for s in state.trace], seed=train_cfg.seed, config=run_cfg)
    return state, model


def _train_step(model, cells, batch, wcfg, loss_cfg, train_cfg, rng, lr) -> float:
    cap = train_cfg.max_segments_per_cycle
    lo, hi = train_cfg.keep_fraction

    feats, soc_targets, slices = [], [], []
    start = 0
    for ci, k in batch:
        cyc = cells[ci].cycles[k]
        n = cyc.n_samples
        if n > cap:
            rows = np.sort(rng.choice(n, size=cap, replace=False))
        else:
            rows = np.arange(n)
        feats.append(segment_features(cyc.v_scaled, cyc.i_scaled, wcfg, positions=rows + 1))
        soc_targets.append(cyc.soc_targets[rows])
        slices.append((start, start + len(rows)))
        start += len(rows)

    n_total = start
    pools = model.encode_segments(np.concatenate(feats))
    soc_pred = model.predict_soc(pools)

    # aggregation path: average a random keep-subset of each cycle's encodings
    sel = np.zeros((len(batch), n_total))
    for j, (a, b) in enumerate(slices):
        k_keep = max(1, int(round(rng.uniform(lo, hi) * (b - a))))
        keep = a + np.sort(rng.choice(b - a, size=k_keep, replace=False))
        sel[j, keep] = 1.0 / k_keep
    x_aggs = matmul(Tensor(sel), pools)
    t_nums = model.encode_temperature(
        np.array([cells[ci].temperature_c for ci, _ in batch]))
    out = model.soh_q_raw(x_aggs, t_nums)

    soh_true = np.array([cells[ci].cycles[k].soh_target for ci, k in batch])
    qn_true = np.array([cells[ci].cycles[k].q_target_ah for ci, k in batch]) / \
        model.config.q_nominal_ah
    loss = combined_loss(
        soc_pred, np.concatenate(soc_targets),
        out[:, 0], soh_true,
        out[:, 1], qn_true,
        loss_cfg.gamma,
    )
    value = loss.item()
    loss.backward()
    adam_step(model.store, lr, weight_decay=train_cfg.weight_decay)
    model.store.zero_grad()
    return value
