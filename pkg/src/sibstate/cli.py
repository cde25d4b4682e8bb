"""Command-line front door for the estimation pipeline.

Subcommands: ``synth``, ``prepare``, ``train``, ``evaluate``, ``predict``,
``pack-eval`` (predict with a parallel-cell count) and ``report``. Every run
is deterministic under a fixed seed and every output file starts with a
header recording tool version, seed and a config digest.

Environment overrides: ``SIBSTATE_OUTPUT_DIR`` (default output directory),
``SIBSTATE_THREADS`` (BLAS/OpenMP thread count, set before numpy loads).

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def build_parser() -> _Parser:
    p = _Parser(prog="sibstate",
                description="Joint SOC/SOH/capacity estimation from charging profiles")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="generate a synthetic CC-CV ageing dataset")
    sp.add_argument("--out", default=None, help="output directory")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--temps", default="0,25,45", help="comma-separated temperatures [degC]")
    sp.add_argument("--cells-per-temp", type=int, default=4)
    sp.add_argument("--n-cycles", type=int, default=200)
    sp.add_argument("--holdout-temp", type=float, default=None,
                    help="extra unseen temperature written to manifest_holdout.json")
    sp.add_argument("--holdout-cells", type=int, default=2)
    sp.add_argument("--n-parallel", type=int, default=None,
                    help="also emit a parallel pack with this many cells")
    sp.add_argument("--pack-cycles", type=int, default=None)
    sp.add_argument("--noise-sd-v", type=float, default=0.005)
    sp.add_argument("--noise-sd-i", type=float, default=0.020)

    sp = sub.add_parser("prepare", help="parse, resample and cache a dataset")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out", default=None, help="cache directory")

    sp = sub.add_parser("train", help="train the estimator")
    sp.add_argument("--config", default=None, help="JSON run config (flags override it)")
    sp.add_argument("--manifest", default=None)
    sp.add_argument("--cache", default=None, help="prepared-data cache directory")
    sp.add_argument("--out", default=None, help="run output directory")
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--gamma", type=float, default=None)
    sp.add_argument("--lr", type=float, default=None)
    sp.add_argument("--weight-decay", type=float, default=None)
    sp.add_argument("--epochs", type=int, default=None)
    sp.add_argument("--batch-cycles", type=int, default=None)
    sp.add_argument("--max-segments-per-cycle", type=int, default=None)
    sp.add_argument("--window-size", type=int, default=None)
    sp.add_argument("--node-steps", type=int, default=None)

    sp = sub.add_parser("evaluate", help="evaluate a checkpoint on a split")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--cache", default=None)
    sp.add_argument("--split", default="test", choices=["train", "valid", "test", "all"])
    sp.add_argument("--out", default=None)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--temperature-holdout", action="store_true",
                    help="treat the manifest as unseen-temperature cells: "
                    "evaluate all cycles and report per temperature")
    sp.add_argument("--fixed-q3", type=float, default=None)
    sp.add_argument("--clamp-soc", action="store_true")
    sp.add_argument("--no-figures", action="store_true")

    for name in ("predict", "pack-eval"):
        sp = sub.add_parser(name, help="predict SOC/SOH/capacity from a profile CSV")
        sp.add_argument("--checkpoint", required=True)
        sp.add_argument("--profile", required=True)
        sp.add_argument("--temperature", type=float, required=True)
        sp.add_argument("--out", default=None)
        sp.add_argument("--subset", default=None,
                        help="lo:hi fraction range of segments used for SOH/Q")
        sp.add_argument("--n-parallel", type=int,
                        default=None if name == "predict" else 4)
        sp.add_argument("--clamp-soc", action="store_true")

    sp = sub.add_parser("report", help="re-render figures and a summary from an "
                        "evaluation directory")
    sp.add_argument("--eval-dir", required=True)
    sp.add_argument("--no-figures", action="store_true")
    return p


def _default_out(args, fallback: str) -> Path:
    if getattr(args, "out", None):
        return Path(args.out)
    env = os.environ.get("SIBSTATE_OUTPUT_DIR")
    return Path(env) / fallback if env else Path(fallback)


def _echo(resolved: dict) -> None:
    for key in sorted(resolved):
        print(f"  {key} = {resolved[key]}")


def cmd_synth(args) -> int:
    from .synthgen import SynthCellParams, gen_dataset

    out = _default_out(args, "synth_data")
    temps = tuple(float(t) for t in args.temps.split(","))
    params = SynthCellParams(noise_sd_v=args.noise_sd_v, noise_sd_i=args.noise_sd_i)
    resolved = {"out": out, "seed": args.seed, "temps": temps,
                "cells_per_temp": args.cells_per_temp, "n_cycles": args.n_cycles,
                "holdout_temp": args.holdout_temp, "n_parallel": args.n_parallel}
    print("synth: resolved configuration")
    _echo(resolved)
    manifests = gen_dataset(
        out, temps=temps, cells_per_temp=args.cells_per_temp, n_cycles=args.n_cycles,
        seed=args.seed, params=params, holdout_temp=args.holdout_temp,
        holdout_cells=args.holdout_cells, pack_n_parallel=args.n_parallel,
        pack_cycles=args.pack_cycles)
    for name, count in manifests.items():
        print(f"wrote {out / name} ({count} cells)")
    return EXIT_OK


def cmd_prepare(args) -> int:
    from .dataio import prepare_dataset

    out = _default_out(args, "prepared")
    cells = prepare_dataset(args.manifest, cache_dir=out)
    print(f"prepared {len(cells)} cells -> cache {out}")
    print(f"{'cell':>12} {'T[degC]':>8} {'cycles':>7} {'train/valid/test':>18} "
          f"{'segments':>9}")
    totals = [0, 0]
    for cell in cells:
        n_seg = sum(c.n_samples for c in cell.cycles)
        split = f"{len(cell.train_idx)}/{len(cell.valid_idx)}/{len(cell.test_idx)}"
        print(f"{cell.label:>12} {cell.temperature_c:>8g} {len(cell.cycles):>7} "
              f"{split:>18} {n_seg:>9}")
        totals[0] += len(cell.cycles)
        totals[1] += n_seg
    print(f"total: {totals[0]} cycles, {totals[1]} segments")
    return EXIT_OK


def _load_run_config(path) -> dict:
    if path is None:
        return {}
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(doc, dict):
        raise _UsageError(f"run config {path} must be a JSON object")
    return doc


def cmd_train(args) -> int:
    from .dataio import prepare_dataset
    from .metrics import evaluate, write_report_files
    from .model import FullModel, ModelConfig
    from .plots import training_trace_plot
    from .training import LossConfig, TrainConfig, train

    file_cfg = _load_run_config(args.config)
    cli_cfg = {k: v for k, v in {
        "manifest": args.manifest, "out": args.out, "seed": args.seed,
        "gamma": args.gamma, "lr0": args.lr, "weight_decay": args.weight_decay,
        "epochs": args.epochs, "batch_cycles": args.batch_cycles,
        "max_segments_per_cycle": args.max_segments_per_cycle,
        "window_size": args.window_size, "node_steps": args.node_steps,
        "cache": args.cache,
    }.items() if v is not None}
    cfg = {"seed": 0, "gamma": LossConfig().gamma, **file_cfg, **cli_cfg}
    if "manifest" not in cfg:
        raise _UsageError("train needs --manifest (or a config file providing it)")

    model_keys = {"window_size", "node_steps"}
    train_keys = {"lr0", "weight_decay", "batch_cycles", "epochs",
                  "sched_step_epochs", "sched_factor", "max_segments_per_cycle", "seed"}
    model_cfg = ModelConfig(**{k: cfg[k] for k in model_keys if k in cfg})
    train_cfg = TrainConfig(**{k: cfg[k] for k in train_keys if k in cfg})
    loss_cfg = LossConfig(gamma=cfg["gamma"])
    out = Path(cfg.get("out") or _default_out(args, "run"))

    print("train: resolved configuration")
    _echo({**cfg, "out": out})
    cells = prepare_dataset(cfg["manifest"], cache_dir=cfg.get("cache"))
    state, _ = train(cells, model_cfg, loss_cfg, train_cfg, out_dir=out)
    print(f"best validation R2_avg {state.best_r2_avg:.4f} at epoch {state.best_epoch} "
          f"({state.wall_time_s:.0f} s)")

    best = FullModel.load(out / "best.ckpt")
    report = evaluate(best, cells, split="valid")
    write_report_files(report, out / "valid_report", seed=train_cfg.seed)
    training_trace_plot([vars(s) for s in state.trace], out / "training_trace.png")
    print(f"validation: R2(Q) {report.q_ah.r2:.4f}, R2(SOH_pred) {report.soh_pred.r2:.4f}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from .dataio import prepare_dataset
    from .metrics import evaluate, write_report_files
    from .model import FullModel

    model = FullModel.load(args.checkpoint)
    split = "all" if args.temperature_holdout else args.split
    cells = prepare_dataset(args.manifest, cache_dir=args.cache,
                            do_split=not args.temperature_holdout)
    out = _default_out(args, "eval")
    print(f"evaluate: checkpoint={args.checkpoint} split={split} out={out}")
    report = evaluate(model, cells, split=split, fixed_q3=args.fixed_q3,
                      clamp_soc=args.clamp_soc)
    files = write_report_files(report, out, seed=args.seed,
                               config=model.config.to_dict())
    if not args.no_figures:
        from .plots import render_report_figures
        files += render_report_figures(report, out)
    _print_report_summary(report)
    if args.temperature_holdout:
        for temp, d in report.by_temperature.items():
            print(f"  unseen {temp:g} degC: q_mae {d['q_mae']:.4f} Ah, "
                  f"soh_cali max err {d['soh_cali_max_err_pct']:.2f}%")
    for f in files:
        print(f"wrote {f}")
    return EXIT_OK


def _print_report_summary(report) -> None:
    print(f"split={report.split}: {report.n_cells} cells, {report.n_cycles} cycles, "
          f"{report.n_segments} segments")
    print(f"  SOC      R2 {report.soc.r2:+.4f}  MSE {report.soc.mse:.3e}  "
          f"MAE {report.soc.mae:.3e}")
    print(f"  Q [Ah]   R2 {report.q_ah.r2:+.4f}  MSE {report.q_ah.mse:.3e}  "
          f"MAE {report.q_ah.mae:.3e}")
    print(f"  SOH_pred R2 {report.soh_pred.r2:+.4f}  max err "
          f"{100 * report.soh_pred.max_abs_err:.2f}%")
    print(f"  SOH_cali R2 {report.soh_cali.r2:+.4f}  max err "
          f"{100 * report.soh_cali.max_abs_err:.2f}%")


def parse_subset_fractions(spec: str | None) -> tuple[float, float] | None:
    if spec is None:
        return None
    try:
        lo, hi = (float(v) for v in spec.split(":"))
    except ValueError:
        raise _UsageError(f"--subset expects lo:hi fractions, got {spec!r}") from None
    if not (0.0 <= lo < hi <= 1.0):
        raise _UsageError(f"--subset fractions must satisfy 0 <= lo < hi <= 1, got {spec!r}")
    return lo, hi


def subset_positions(fractions: tuple[float, float] | None, n: int) -> list[int] | None:
    """1-based positions covered by a fraction range of a cycle's segments."""
    if fractions is None:
        return None
    lo, hi = fractions
    start = int(lo * n)
    stop = max(start + 1, int(hi * n))
    return list(range(start + 1, stop + 1))


def cmd_predict(args) -> int:
    import numpy as np

    from .dataio import RawCycle, parse_profile_csv, resample
    from .metrics import PackSpec, pack_predict
    from .model import FullModel
    from .output import write_csv

    model = FullModel.load(args.checkpoint)
    profiles = parse_profile_csv(Path(args.profile).read_text(encoding="utf-8"))
    n_parallel = args.n_parallel or 1
    fractions = parse_subset_fractions(args.subset)

    out = _default_out(args, "predict")
    out.mkdir(parents=True, exist_ok=True)
    meta = {"checkpoint": str(args.checkpoint), "temperature": args.temperature,
            "n_parallel": n_parallel, "subset": args.subset}
    soc_rows, cycle_rows = [], []
    for cyc_index, arr in sorted(profiles.items()):
        cyc = RawCycle(cyc_index, arr[:, 0], arr[:, 1], arr[:, 2])
        subset = subset_positions(fractions, len(resample(cyc)[0]))
        pred = pack_predict(model, PackSpec(n_parallel=n_parallel, cycles=[cyc]),
                            temperature_c=args.temperature, subset=subset)[0]
        soc = np.clip(pred.soc, 0.0, 1.0) if args.clamp_soc else pred.soc
        for pos, s in zip(pred.positions, soc):
            soc_rows.append([cyc_index, pos, (pos - 1) * 30.0, float(s)])
        cycle_rows.append([cyc_index, pred.soh, pred.q_ah])
        print(f"cycle {cyc_index}: SOH {pred.soh:.4f}, capacity {pred.q_ah:.4f} Ah "
              f"({len(pred.positions)} segments, {len(subset) if subset else 'all'} "
              f"aggregated)")
    write_csv(out / "soc_pred.csv", ["cycle", "position", "time_s", "soc_pred"],
              soc_rows, config=meta)
    write_csv(out / "cycle_pred.csv", ["cycle", "soh_pred", "q_pred_ah"],
              cycle_rows, config=meta)
    print(f"wrote {out / 'soc_pred.csv'}")
    print(f"wrote {out / 'cycle_pred.csv'}")
    return EXIT_OK


def cmd_report(args) -> int:
    import numpy as np

    doc = json.loads((Path(args.eval_dir) / "report.json").read_text(encoding="utf-8"))
    print(f"report for split={doc['split']}; counts: {doc['counts']}")
    for target, metrics in doc["targets"].items():
        line = "  ".join(f"{k} {v:.6g}" for k, v in metrics.items())
        print(f"  {target:9s} {line}")
    for temp, d in doc.get("by_temperature", {}).items():
        print(f"  {temp} degC: " + "  ".join(f"{k} {v:.6g}" for k, v in d.items()
                                             if isinstance(v, float)))
    if not args.no_figures:
        import csv

        from .plots import parity_plot

        path = Path(args.eval_dir) / "parity_capacity.csv"
        with open(path, encoding="utf-8") as fh:
            rows = [r for r in csv.reader(line for line in fh if not line.startswith("#"))]
        data = np.array(rows[1:], dtype=np.float64)
        out = parity_plot(data[:, 0], data[:, 1], "capacity [Ah]",
                          Path(args.eval_dir) / "parity_capacity.png",
                          doc["targets"]["q_ah"]["r2"])
        print(f"wrote {out}")
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "prepare": cmd_prepare,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "predict": cmd_predict,
    "pack-eval": cmd_predict,
    "report": cmd_report,
}


def main(argv=None) -> int:
    # thread env vars must be set before anything imports numpy
    threads = os.environ.get("SIBSTATE_THREADS")
    if threads:
        for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, threads)

    from .errors import NumericError, SibstateError

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return COMMANDS[args.command](args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (SibstateError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
