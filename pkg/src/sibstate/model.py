"""Full architecture: segment encoder -> SOC head; cycle aggregation plus
temperature embedding -> SOH/capacity head.

A 2 x window_size scaled V/I window gains a leading singleton channel axis,
passes through five strided convolution stages, is refined by the integrated
dynamics field (shape-preserving), average-pooled over time and flattened to
a feature vector. Per-segment features feed the SOC head directly; features
of one cycle are averaged (any non-empty subset is allowed) and concatenated
with the encoded test temperature before the two-output SOH/capacity head.
"""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .errors import AggregationError, ShapeError
from .node import DynamicsNet, NodeConfig, integrate
from .numerics import (
    ParamStore,
    Tensor,
    avg_pool_last,
    concat,
    conv2d,
    embedding_lookup,
    linear,
    matmul,
    mean_over_set,
    no_grad,
    relu,
    tanh,
)
from .numerics.checkpoint import load_checkpoint, restore_into, save_checkpoint


@dataclass(frozen=True)
class ModelConfig:
    """Dimensions and hyperparameters that define the network."""

    window_size: int = 128
    conv_channels: tuple[int, ...] = (8, 16, 32, 64, 64)
    conv_kernel_w: int = 5
    conv_stride_w: int = 2
    conv_pad_w: int = 2
    node_steps: int = 2
    node_kernel_w: int = 3
    temp_min_c: float = 0.0
    temp_max_c: float = 45.0
    n_temp_bins: int = 9
    embed_dim: int = 16
    ffn_hidden: int = 16
    head_hidden: int = 64
    q_nominal_ah: float = 10.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conv_channels"] = list(self.conv_channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["conv_channels"] = tuple(d["conv_channels"])
        return cls(**d)

    @property
    def pool_dim(self) -> int:
        return self.conv_channels[-1] * 2

    @property
    def temp_dim(self) -> int:
        return self.embed_dim + self.ffn_hidden


@dataclass
class PredictedCycle:
    """Per-cycle inference output; positions are sorted ascending."""

    positions: np.ndarray
    soc: np.ndarray
    soh: float
    q_ah: float


class FullModel:
    """Parameter set and forward passes for the whole estimator."""

    def __init__(self, config: ModelConfig = ModelConfig(), seed: int = 0):
        self.config = config
        self.store = ParamStore()
        rng = np.random.default_rng(seed)

        chans = (1,) + tuple(config.conv_channels)
        self.enc = []
        for i in range(len(config.conv_channels)):
            ci, co = chans[i], chans[i + 1]
            bound = 1.0 / np.sqrt(ci * config.conv_kernel_w)
            self.enc.append((
                self.store.add(f"enc{i}.weight",
                               rng.uniform(-bound, bound, (co, ci, 1, config.conv_kernel_w))),
                self.store.add(f"enc{i}.bias", np.zeros(co)),
            ))
        self.node = DynamicsNet(self.store, rng, channels=config.conv_channels[-1],
                                kernel_w=config.node_kernel_w)
        self.node_config = NodeConfig(n_steps=config.node_steps)

        def _linear_params(name, n_out, n_in):
            bound = 1.0 / np.sqrt(n_in)
            return (self.store.add(f"{name}.weight", rng.uniform(-bound, bound, (n_out, n_in))),
                    self.store.add(f"{name}.bias", np.zeros(n_out)))

        pd, hh = config.pool_dim, config.head_hidden
        self.soc_fc1 = _linear_params("soc.fc1", hh, pd)
        self.soc_fc2 = _linear_params("soc.fc2", 1, hh)
        self.temp_table = self.store.add(
            "temp.embedding", rng.uniform(-0.05, 0.05, (config.n_temp_bins, config.embed_dim)))
        self.temp_fc1 = _linear_params("temp.ffn1", config.ffn_hidden, 1)
        self.temp_fc2 = _linear_params("temp.ffn2", config.ffn_hidden, config.ffn_hidden)
        self.sohq_fc1 = _linear_params("sohq.fc1", hh, pd + config.temp_dim)
        self.sohq_fc2 = _linear_params("sohq.fc2", 2, hh)

        self.shape_chain = self.verify_shapes()

    # ---- shape contract ---------------------------------------------------

    def verify_shapes(self) -> list[tuple[int, ...]]:
        """Trace one dummy segment through the network, asserting every stage.

        Returns the realized shape chain (without the batch axis). Raises
        ``ShapeError`` on the first inconsistent stage.
        """
        cfg = self.config
        chain: list[tuple[int, ...]] = [(1, 2, cfg.window_size)]
        with no_grad():
            x = Tensor(np.zeros((1, 1, 2, cfg.window_size)))
            w = cfg.window_size
            for i, (weight, bias) in enumerate(self.enc):
                x = relu(conv2d(x, weight, bias, stride=(1, cfg.conv_stride_w),
                                padding=(0, cfg.conv_pad_w)))
                w = (w + 2 * cfg.conv_pad_w - cfg.conv_kernel_w) // cfg.conv_stride_w + 1
                expect = (1, cfg.conv_channels[i], 2, w)
                if x.shape != expect:
                    raise ShapeError(f"encoder stage {i}: got {x.shape}, expected {expect}")
            chain.append(x.shape[1:])
            y = integrate(self.node, x, self.node_config)
            if y.shape != x.shape:
                raise ShapeError(f"dynamics block changed shape: {x.shape} -> {y.shape}")
            chain.append(y.shape[1:])
            p = avg_pool_last(y)
            if p.shape != x.shape[:3] + (1,):
                raise ShapeError(f"pooling produced {p.shape}")
            chain.append(p.shape[1:])
            flat = p.reshape(1, cfg.pool_dim)
            chain.append(flat.shape[1:])
            soc = linear(relu(linear(flat, *self.soc_fc1)), *self.soc_fc2)
            if soc.shape != (1, 1):
                raise ShapeError(f"SOC head produced {soc.shape}")
            t = self.encode_temperature(cfg.temp_min_c)
            if t.shape != (cfg.temp_dim,):
                raise ShapeError(f"temperature encoding produced {t.shape}")
            joint = concat(flat, t.reshape(1, cfg.temp_dim), axis=1)
            chain.append(joint.shape[1:])
            out = linear(relu(linear(joint, *self.sohq_fc1)), *self.sohq_fc2)
            if out.shape != (1, 2):
                raise ShapeError(f"SOH/capacity head produced {out.shape}")
            chain.append(out.shape[1:])
        return chain

    # ---- forward passes ---------------------------------------------------

    def encode_segments(self, features) -> Tensor:
        """Encode an (n, 2, window_size) feature batch to (n, pool_dim)."""
        x = features if isinstance(features, Tensor) else Tensor(features)
        if x.data.ndim != 3 or x.data.shape[1] != 2 or \
                x.data.shape[2] != self.config.window_size:
            raise ShapeError(f"expected (n, 2, {self.config.window_size}) features, "
                             f"got {x.shape}")
        n = x.data.shape[0]
        h = x.reshape(n, 1, 2, self.config.window_size)
        for weight, bias in self.enc:
            h = relu(conv2d(h, weight, bias, stride=(1, self.config.conv_stride_w),
                            padding=(0, self.config.conv_pad_w)))
        h = integrate(self.node, h, self.node_config)
        h = avg_pool_last(h)
        return h.reshape(n, self.config.pool_dim)

    def encode_segment(self, feature) -> Tensor:
        """Encode one 2 x window_size segment to a pool_dim feature vector."""
        feature = feature.data if isinstance(feature, Tensor) else np.asarray(feature)
        if feature.shape != (2, self.config.window_size):
            raise ShapeError(f"expected (2, {self.config.window_size}) feature, "
                             f"got {feature.shape}")
        return self.encode_segments(feature[None]).reshape(self.config.pool_dim)

    def predict_soc(self, x_pool) -> Tensor:
        """Raw SOC head output; reporting layers may clamp to [0, 1] on request."""
        x = x_pool if isinstance(x_pool, Tensor) else Tensor(x_pool)
        batched = x.data.ndim == 2
        out = linear(relu(linear(x, *self.soc_fc1)), *self.soc_fc2)
        return out.reshape(x.data.shape[0]) if batched else out.reshape(())

    def aggregate_cycle(self, x_pools, positions: Sequence[int] | None = None) -> Tensor:
        """Mean segment feature of one cycle, order-independent by construction.

        Accepts a (k, pool_dim) tensor/array or a list of pool_dim vectors.
        When ``positions`` is given rows are averaged in ascending-position
        order; otherwise a canonical lexicographic order is used.
        """
        if isinstance(x_pools, (list, tuple)):
            if len(x_pools) == 0:
                raise AggregationError("cannot aggregate an empty segment set")
            if positions is None:
                return mean_over_set(x_pools)
            order = np.argsort(np.asarray(positions), kind="stable")
            return mean_over_set([x_pools[j] for j in order])
        x = x_pools if isinstance(x_pools, Tensor) else Tensor(x_pools)
        k = x.data.shape[0]
        if k == 0:
            raise AggregationError("cannot aggregate an empty segment set")
        if positions is not None:
            order = np.argsort(np.asarray(positions), kind="stable")
            x = x[order]
        weights = Tensor(np.full((1, k), 1.0 / k))
        return matmul(weights, x).reshape(x.data.shape[1])

    def temperature_bin(self, t_c: float) -> int:
        """Equal-width bin index over [temp_min, temp_max], top edge clamped."""
        cfg = self.config
        t_norm = (t_c - cfg.temp_min_c) / (cfg.temp_max_c - cfg.temp_min_c)
        return int(np.clip(np.floor(t_norm * cfg.n_temp_bins), 0, cfg.n_temp_bins - 1))

    def encode_temperature(self, t_c) -> Tensor:
        """Embedding of the discretized temperature joined with an FFN of the
        normalized temperature; scalar in -> (temp_dim,), array in -> (M, temp_dim)."""
        cfg = self.config
        t_arr = np.atleast_1d(np.asarray(t_c, dtype=np.float64))
        if not np.all(np.isfinite(t_arr)):
            raise ShapeError("temperature must be finite")
        if np.any(t_arr < cfg.temp_min_c - 5.0) or np.any(t_arr > cfg.temp_max_c + 5.0):
            warnings.warn(
                f"temperature {t_arr} degC far outside [{cfg.temp_min_c}, "
                f"{cfg.temp_max_c}]; binning is clamped", stacklevel=2)
        t_norm = (t_arr - cfg.temp_min_c) / (cfg.temp_max_c - cfg.temp_min_c)
        bins = np.clip(np.floor(t_norm * cfg.n_temp_bins), 0, cfg.n_temp_bins - 1)
        emb = embedding_lookup(self.temp_table, bins.astype(np.int64))
        hidden = tanh(linear(Tensor(t_norm[:, None]), *self.temp_fc1))
        ffn = linear(hidden, *self.temp_fc2)
        out = concat(emb, ffn, axis=1)
        return out.reshape(cfg.temp_dim) if np.ndim(t_c) == 0 else out

    def soh_q_raw(self, x_agg: Tensor, t_num: Tensor) -> Tensor:
        """Head output rows (soh, q/q_nominal); accepts single vectors or batches."""
        batched = x_agg.data.ndim == 2
        if not batched:
            x_agg = x_agg.reshape(1, x_agg.data.shape[0])
            t_num = t_num.reshape(1, t_num.data.shape[0])
        joint = concat(x_agg, t_num, axis=1)
        out = linear(relu(linear(joint, *self.sohq_fc1)), *self.sohq_fc2)
        return out if batched else out.reshape(2)

    def predict_soh_q(self, x_agg, t_num) -> tuple[float, float]:
        """State of health and capacity in Ah for one aggregated cycle."""
        x_agg = x_agg if isinstance(x_agg, Tensor) else Tensor(x_agg)
        t_num = t_num if isinstance(t_num, Tensor) else Tensor(t_num)
        with no_grad():
            out = self.soh_q_raw(x_agg, t_num)
        soh, q_norm = float(out.data[0]), float(out.data[1])
        return soh, q_norm * self.config.q_nominal_ah

    def _predict_features(self, feats: np.ndarray, agg_rows: np.ndarray,
                          temperature: float) -> tuple[np.ndarray, float, float]:
        """Single inference route shared by every prediction entry point.

        Encoding one cycle per call (never merged into larger batches) keeps
        results bit-identical between the evaluation and prediction paths.
        """
        with no_grad():
            pools = self.encode_segments(feats)
            soc = self.predict_soc(pools).data.copy()
            x_agg = self.aggregate_cycle(pools[agg_rows])
            t_num = self.encode_temperature(float(temperature))
            out = self.soh_q_raw(x_agg, t_num)
        return soc, float(out.data[0]), float(out.data[1]) * self.config.q_nominal_ah

    def predict_cycle(self, cycle_segments, subset: Sequence[int] | None = None,
                      t_c: float | None = None) -> PredictedCycle:
        """SOC for every provided segment plus one (SOH, capacity) estimate.

        ``subset`` names the 1-based positions used for aggregation (default:
        all provided segments), supporting partial-charge inference. Segments
        are re-sorted by position internally, so any supply order gives a
        bit-identical result.
        """
        segs = cycle_segments.segments
        if not segs:
            raise AggregationError("predict_cycle needs at least one segment")
        order = np.argsort([s.position for s in segs], kind="stable")
        positions = np.array([segs[j].position for j in order])
        feats = np.stack([segs[j].feature for j in order])
        temperature = cycle_segments.temperature_c if t_c is None else t_c
        agg_rows = _subset_rows(positions, subset)
        soc, soh, q_ah = self._predict_features(feats, agg_rows, temperature)
        return PredictedCycle(positions=positions, soc=soc, soh=soh, q_ah=q_ah)

    def predict_prepared(self, cycle, temperature_c: float, window_config,
                         subset: Sequence[int] | None = None) -> PredictedCycle:
        """Run inference on a prepared (resampled, scaled) cycle."""
        from .windowing import segment_features

        feats = segment_features(cycle.v_scaled, cycle.i_scaled, window_config)
        positions = np.arange(1, cycle.n_samples + 1)
        agg_rows = _subset_rows(positions, subset)
        soc, soh, q_ah = self._predict_features(feats, agg_rows, temperature_c)
        return PredictedCycle(positions=positions, soc=soc, soh=soh, q_ah=q_ah)

    # ---- persistence ------------------------------------------------------

    def save(self, path) -> None:
        save_checkpoint(path, self.store, self.config.to_dict())

    @classmethod
    def load(cls, path) -> "FullModel":
        ckpt = load_checkpoint(path)
        model = cls(ModelConfig.from_dict(ckpt.model_config))
        restore_into(model.store, ckpt)
        return model


def _subset_rows(positions: np.ndarray, subset: Sequence[int] | None) -> np.ndarray:
    if subset is None:
        return np.arange(len(positions))
    subset_arr = np.unique(np.asarray(subset, dtype=np.int64))
    if subset_arr.size == 0:
        raise AggregationError("aggregation subset is empty")
    missing = np.setdiff1d(subset_arr, positions)
    if missing.size:
        raise AggregationError(f"subset positions {missing[:5]} not provided")
    return np.searchsorted(positions, subset_arr)
