"""Command-line entry point: ``karma {decompose,train,predict,evaluate}``.

Exit codes: 0 success, 1 bad input or pipeline failure, 2 internal error.
All outputs go to ``--out`` (created if missing); inputs are never written.
"""
from __future__ import annotations

import argparse
import csv
import os
import sys
import warnings
from dataclasses import replace

import numpy as np

from .dataset import FORMATS, load_cycle_data, load_manifest, split_fleet
from .degradation import PfConfig
from .errors import KarmaError, ParseError
from .features import partition_bands, zero_crossing_rate
from .metrics import EvalReport, evaluate_horizon, evaluate_one_cycle, write_report as write_eval
from .neural import FULL_SCALE, ModelConfig, TrainConfig, load_model, save_model
from .pipeline import PipelineConfig, fit_model
from .prognosis import forecast, oracle_predictor, write_report
from .pso import PsoConfig
from .vmd import VmdConfig, decompose, tune_vmd


def _common(p):
    p.add_argument("--manifest", help="fleet manifest (INI)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")


def _vmd_args(p):
    p.add_argument("--kmax", type=int, default=3)
    p.add_argument("--alpha", type=float, default=2000.0)
    p.add_argument("--tau", type=float, default=0.0)
    p.add_argument("--tol", type=float, default=1e-7)
    p.add_argument("--max-iters", type=int, default=500)
    p.add_argument("--auto-tune", action="store_true", help="search k_max and alpha with PSO")


def _split_args(p):
    p.add_argument("--test-id", required=True)
    p.add_argument("--sp", type=int, required=True, help="start point (last observed cycle)")


def build_parser():
    parser = argparse.ArgumentParser(prog="karma", description="Battery capacity prognostics.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("decompose", help="split one capacity series into modes")
    p.add_argument("input", nargs="?", help="capacity CSV (or use --manifest with --battery)")
    p.add_argument("--battery", help="battery id inside --manifest")
    p.add_argument("--format", choices=FORMATS, default="generic_csv")
    p.add_argument("--rated", type=float, default=None,
                   help="rated capacity in Ah; without it the input is read as a plain signal")
    _vmd_args(p)
    _common(p)

    p = sub.add_parser("train", help="train the dual-stream model for one leave-one-out split")
    _split_args(p)
    _vmd_args(p)
    p.add_argument("--window", type=int, default=8)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--validation", type=float, default=0.1)
    p.add_argument("--full-scale", action="store_true", help="use the large layer widths")
    _common(p)

    p = sub.add_parser("predict", help="forecast capacity, end of life and RUL")
    _split_args(p)
    p.add_argument("--model", help="model file from 'train'")
    p.add_argument("--predictor", choices=("model", "oracle"), default="model",
                   help="'oracle' feeds the recorded capacities instead of model estimates")
    p.add_argument("--particles", type=int, default=500)
    p.add_argument("--sigma-err", type=float, default=0.01)
    p.add_argument("--q-rel", type=float, default=1e-3)
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--horizon-cap", type=int, default=None)
    p.add_argument("--dump-particles", action="store_true")
    _common(p)

    p = sub.add_parser("evaluate", help="1-cycle and multi-step error report")
    p.add_argument("--test-id", required=True, help="battery id, or several separated by commas")
    p.add_argument("--sp", type=int, required=True)
    p.add_argument("--model", help="model file from 'train'")
    p.add_argument("--predictor", choices=("model", "oracle"), default="model")
    p.add_argument("--horizons", default="5,10,15", help="comma-separated step counts")
    _common(p)
    return parser


def _need(value, flag):
    if value is None:
        raise KarmaError(f"{flag} is required here")
    return value


def _vmd_config(args):
    return VmdConfig(k_max=args.kmax, alpha=args.alpha, tau=args.tau, tol=args.tol,
                     max_iters=args.max_iters)


def _write_rows(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(header)
        out.writerows(rows)


def _fmt(v):
    return repr(float(v))


def _read_signal(path):
    """Two-column numeric CSV with a header row; values need not be capacities."""
    try:
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from None
    if data.shape[0] == 0 or data.shape[1] < 2:
        raise ParseError(f"{path}: expected two columns of numbers")
    return os.path.splitext(os.path.basename(path))[0], data[:, 0].astype(int), data[:, 1]


def cmd_decompose(args):
    if args.input:
        if not os.path.exists(args.input):
            raise FileNotFoundError(f"no such file: {args.input}")
        if args.rated is None and args.format == "generic_csv":
            bid, cycles, signal = _read_signal(args.input)
        else:
            series = load_cycle_data(args.input, args.format, rated_capacity=_need(args.rated, "--rated"))
            bid, cycles, signal = series.battery_id, series.cycles, np.asarray(series.capacity)
    else:
        fleet = load_manifest(_need(args.manifest, "input file or --manifest"))
        ids = [s.battery_id for s in fleet]
        bid = _need(args.battery, "--battery")
        if bid not in ids:
            raise KarmaError(f"battery {bid!r} not in manifest {ids}")
        series = fleet[ids.index(bid)]
        cycles, signal = series.cycles, np.asarray(series.capacity)
    cfg = _vmd_config(args)
    if args.auto_tune:
        k, alpha = tune_vmd(signal, PsoConfig(seed=args.seed), cfg)
        cfg = VmdConfig(k_max=k, alpha=alpha, tau=cfg.tau, tol=cfg.tol, max_iters=cfg.max_iters)
    imfs = decompose(signal, cfg)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        part = partition_bands(imfs)
    for i, mode in enumerate(imfs.modes):
        _write_rows(os.path.join(args.out, f"mode_{i}.csv"), ["cycle", "value"],
                    [[int(c), _fmt(v)] for c, v in zip(cycles, mode)])
    with open(os.path.join(args.out, "summary.txt"), "w", encoding="utf-8") as fh:
        fh.write(f"battery_id = {bid}\n")
        fh.write(f"k_max = {cfg.k_max}\nalpha = {cfg.alpha!r}\n")
        fh.write(f"iterations = {imfs.iterations_used}\nconverged = {imfs.converged}\n")
        fh.write(f"residual_l2 = {float(np.linalg.norm(imfs.residual))!r}\n")
        fh.write("mode,omega,zcr,band\n")
        for i, (w, m) in enumerate(zip(imfs.omegas, imfs.modes)):
            band = "low" if i in part.low else "high"
            fh.write(f"{i},{float(w)!r},{zero_crossing_rate(m)!r},{band}\n")
    print(f"{imfs.k_max} modes written to {args.out}")


def cmd_train(args):
    fleet = load_manifest(_need(args.manifest, "--manifest"))
    split = split_fleet(fleet, args.test_id, args.sp)
    base = FULL_SCALE if args.full_scale else ModelConfig()
    model_cfg = replace(base, seed=args.seed)
    cfg = PipelineConfig(vmd=_vmd_config(args), pso=PsoConfig(seed=args.seed), auto_tune=args.auto_tune,
                         window_len=args.window, model=model_cfg,
                         train=TrainConfig(epochs=args.epochs, batch_size=args.batch_size,
                                           learning_rate=args.lr, seed=args.seed,
                                           validation_fraction=args.validation))
    fit = fit_model(split, cfg)
    save_model(fit.model, os.path.join(args.out, "model.kmdl"))
    hist = fit.history
    rows = [[0, _fmt(hist.initial), ""]]
    for i, loss in enumerate(hist.train):
        val = _fmt(hist.validation[i]) if i < len(hist.validation) else ""
        rows.append([i + 1, _fmt(loss), val])
    _write_rows(os.path.join(args.out, "loss_history.csv"), ["epoch", "train_loss", "val_loss"], rows)
    print(f"parameters: {fit.model.n_params}")
    print(f"k_max={fit.vmd.k_max} alpha={fit.vmd.alpha!r} low_channels={fit.n_low} samples={fit.n_samples}")
    print(f"epochs run: {len(hist.train)} (best {hist.best_epoch})")


def _predictor(args, split):
    if args.predictor == "oracle":
        return oracle_predictor(split.test.capacity)
    model = load_model(_need(args.model, "--model"))
    meta = model.meta
    if meta.get("test_id") not in (None, split.test.battery_id):
        print(f"warning: model was trained for {meta['test_id']}", file=sys.stderr)
    return model


def cmd_predict(args):
    fleet = load_manifest(_need(args.manifest, "--manifest"))
    split = split_fleet(fleet, args.test_id, args.sp)
    predictor = _predictor(args, split)
    pf = PfConfig(n=args.particles, sigma_err=args.sigma_err, q_rel=args.q_rel, seed=args.seed)
    dump = os.path.join(args.out, "particles") if args.dump_particles else None
    prog = forecast(split, predictor, pf, level=args.level, horizon_cap=args.horizon_cap, dump_dir=dump)
    write_report(prog, os.path.join(args.out, "prognosis.csv"), os.path.join(args.out, "summary.txt"))
    observed = np.asarray(split.test.capacity)
    rows = []
    for c in range(1, int(prog.cycles[-1]) + 1 if prog.cycles.size else split.sp + 1):
        obs = _fmt(observed[c - 1]) if c <= observed.size else ""
        i = c - split.sp - 1
        if i >= 0:
            rows.append([c, obs, _fmt(prog.mean_capacity[i]), _fmt(prog.ci_low[i]), _fmt(prog.ci_high[i]),
                         _fmt(prog.eol_capacity)])
        else:
            rows.append([c, obs, "", "", "", _fmt(prog.eol_capacity)])
    _write_rows(os.path.join(args.out, "plot_capacity.csv"),
                ["cycle", "observed", "mean", "ci_low", "ci_high", "eol_capacity"], rows)
    ci = prog.rul_ci
    print(f"eol_cycle={prog.eol_cycle} rul={prog.rul} rul_ci=[{ci[0]}, {ci[1]}] "
          f"terminated_by={prog.terminated_by}")


def cmd_evaluate(args):
    fleet = load_manifest(_need(args.manifest, "--manifest"))
    try:
        horizons = sorted({int(h) for h in args.horizons.split(",") if h.strip()})
    except ValueError:
        raise KarmaError(f"bad --horizons {args.horizons!r}") from None
    if any(h < 1 for h in horizons):
        raise KarmaError("horizons must be positive")
    ids = [t.strip() for t in args.test_id.split(",") if t.strip()]
    one = EvalReport("one_cycle")
    multi = {h: EvalReport(f"horizon_{h}") for h in horizons if h > 1}
    for tid in ids:
        split = split_fleet(fleet, tid, args.sp)
        predictor = _predictor(args, split)
        one.rows.append(evaluate_one_cycle(predictor, split))
        for h, rep in multi.items():
            rep.rows.append(evaluate_horizon(predictor, split, h))
    reports = [one, *multi.values()]
    write_eval(reports, os.path.join(args.out, "report.csv"))
    for rep in reports:
        print(f"{rep.task}: mean MAPE {rep.average_mape:.4f}%")


COMMANDS = {"decompose": cmd_decompose, "train": cmd_train, "predict": cmd_predict,
            "evaluate": cmd_evaluate}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        os.makedirs(args.out, exist_ok=True)
        COMMANDS[args.command](args)
    except (KarmaError, OSError, ValueError) as exc:
        print(f"karma {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - report anything else as internal
        print(f"karma {args.command}: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
