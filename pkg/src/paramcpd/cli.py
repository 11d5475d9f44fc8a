"""Config-driven command line: simulate corpora, train the posterior model,
run detection, evaluate metrics, calibrate, and sweep hyperparameters.

Every command is a pure function of (config file, seed, input files); outputs
are written with deterministic formatting (sorted JSON keys, repr floats) so a
rerun with the same inputs is byte-identical. Exit codes: 0 success, 2 config
error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import dataset as ds
from . import evaluation as ev
from . import npe
from .config import ExperimentConfig, dump_json, load_config
from .errors import ConfigError, DataError, DivergenceError, TrainingError
from .pipeline import DetectionConfig, detect_obs_cpd, detect_param_cpd

KINDS = ("sigma", "rho", "beta")
_KIND_TAG = {"sigma": 0, "rho": 1, "beta": 2}

# seed-derivation namespaces, one per purpose
_NS_CORPUS, _NS_STATIONARY, _NS_TRAINSET, _NS_TRAIN, _NS_DETECT, _NS_CALIBRATE = range(1, 7)


def derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def _cell(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_cell(v) for v in row) + "\n")


def _snapshot(cfg: ExperimentConfig, outdir: Path) -> None:
    outdir.mkdir(parents=True, exist_ok=True)
    dump_json(cfg.to_dict(), outdir / "config_used.json")


def _require_empty(path: Path, force: bool) -> None:
    if path.exists() and any(path.iterdir()) and not force:
        raise DataError(f"output directory {path} is not empty (use --force to overwrite)")


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(cfg: ExperimentConfig, kind: str, force: bool) -> None:
    kinds = KINDS if kind in ("all", "stationary") else (kind,)
    base = cfg.corpora_dir()
    sim, dcfg = cfg.simulator, cfg.dataset
    if kind != "stationary":
        for k in kinds:
            out = base / k
            _require_empty(out, force)
            seqs = ds.build_changepoint_corpus(
                k, dcfg.n_sequences, derive_seed(cfg.seed, _NS_CORPUS, _KIND_TAG[k]),
                n_segments=dcfg.n_segments, segment_length=dcfg.segment_length,
                dt=sim.dt, eta=sim.eta, burn_in=sim.burn_in, ranges=sim.ranges(),
                bound=sim.divergence_bound,
            )
            ds.save_corpus(out, seqs, extra={"eta": sim.eta, "dt": sim.dt,
                                             "segment_length": dcfg.segment_length})
            _snapshot(cfg, out)
            print(f"wrote {len(seqs)} sequences to {out}")
    if kind in ("stationary", "all"):
        for k in KINDS:
            out = base / f"stationary_{k}"
            _require_empty(out, force)
            recs = ds.build_stationary_corpus(
                k, dcfg.n_stationary, derive_seed(cfg.seed, _NS_STATIONARY, _KIND_TAG[k]),
                length=dcfg.stationary_length, dt=sim.dt, eta=sim.eta,
                burn_in=sim.burn_in, ranges=sim.ranges(), bound=sim.divergence_bound,
            )
            ds.save_corpus(out, recs, extra={"eta": sim.eta, "dt": sim.dt})
            _snapshot(cfg, out)
            print(f"wrote {len(recs)} stationary trajectories to {out}")


def _training_set(cfg: ExperimentConfig) -> ds.TrainingSet:
    path = cfg.paths.training_set
    if path and Path(path).exists():
        ts = ds.load_training_set(path)
        if ts.w != cfg.dataset.window_length or ts.n != cfg.dataset.n_pairs:
            raise ConfigError(
                f"persisted training set {path} has (n={ts.n}, w={ts.w}), config wants "
                f"(n={cfg.dataset.n_pairs}, w={cfg.dataset.window_length})"
            )
        return ts
    ts = ds.build_training_set(
        cfg.dataset.prior(), cfg.dataset.n_pairs, cfg.dataset.window_length,
        dt=cfg.simulator.dt, sim_steps=cfg.dataset.sim_steps, noise_eta=cfg.simulator.eta,
        seed=derive_seed(cfg.seed, _NS_TRAINSET), burn_in=cfg.simulator.burn_in,
        bound=cfg.simulator.divergence_bound,
    )
    if path:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        ds.save_training_set(ts, path)
    return ts


def cmd_train(cfg: ExperimentConfig) -> None:
    ts = _training_set(cfg)
    m = cfg.model
    config = npe.MdnConfig(
        input_dim=4 * ts.w, hidden_sizes=tuple(m.hidden_sizes),
        n_components=m.n_components, std_floor=m.std_floor,
    )
    opt = npe.OptimizerParams(
        learning_rate=m.learning_rate, batch_size=m.batch_size,
        epochs=m.epochs, val_fraction=m.val_fraction,
    )
    model = npe.train(ts, config, opt, seed=derive_seed(cfg.seed, _NS_TRAIN))
    ckpt = cfg.checkpoint_path()
    ckpt.parent.mkdir(parents=True, exist_ok=True)
    npe.save_checkpoint(model, ckpt)
    write_csv(
        ckpt.parent / "train_log.csv",
        ["epoch", "train_nll", "val_nll"],
        model.training_meta["history"],
    )
    _snapshot(cfg, ckpt.parent)
    meta = model.training_meta
    print(f"trained on {ts.n} pairs ({ts.n_rejected} divergent draws resampled); "
          f"best val NLL {meta['best_val_nll']:.4f} at epoch {meta['best_epoch']}; "
          f"checkpoint {ckpt}")


def _detect_one(model, seq: ds.CorpusSequence, cfg: ExperimentConfig, method: str):
    det = cfg.detection
    dconf = DetectionConfig(
        w=cfg.dataset.window_length, s=det.stride, m_samples=det.m_samples,
        aggregator=det.aggregator, varying_dim=seq.kind, penalty_scale=det.penalty_scale,
        min_size=det.min_size, smoothing_width=det.smoothing_width, seed=cfg.seed,
    )
    if method == "param_cpd":
        seed = derive_seed(cfg.seed, _NS_DETECT, _KIND_TAG[seq.kind], seq.index)
        return detect_param_cpd(seq.trajectory, model, dconf, seed=seed)
    return detect_obs_cpd(seq.trajectory, dconf)


def _detect_worker(task):
    # module-level for multiprocessing picklability
    model, seq, cfg, method = task
    return seq.index, method, _detect_one(model, seq, cfg, method)


def cmd_detect(cfg: ExperimentConfig, kind: str, method: str, force: bool, jobs: int) -> None:
    kinds = KINDS if kind == "all" else (kind,)
    methods = ("param_cpd", "obs_cpd") if method == "both" else (method,)
    model = None
    if "param_cpd" in methods:
        ckpt = cfg.checkpoint_path()
        if not ckpt.exists():
            raise DataError(f"checkpoint not found: {ckpt} (run `paramcpd train` first)")
        model = npe.load_checkpoint(ckpt)
    for k in kinds:
        corpus_dir = cfg.corpora_dir() / k
        seqs, _ = ds.load_corpus(corpus_dir)
        out = cfg.results_dir() / k
        _require_empty(out, force)
        out.mkdir(parents=True, exist_ok=True)
        tasks = [(model, seq, cfg, m) for seq in seqs for m in methods]
        if jobs > 1:
            import multiprocessing as mp

            with mp.Pool(jobs) as pool:
                results = pool.map(_detect_worker, tasks)
        else:
            results = [_detect_worker(t) for t in tasks]
        for index, m, res in sorted(results, key=lambda r: (r[0], r[1])):
            payload = json.loads(res.to_json())
            payload["sequence_index"] = index
            payload["kind"] = k
            dump_json(payload, out / f"{m}_seq_{index:04d}.json")
            if res.param_trajectory is not None:
                res.param_trajectory.to_csv(out / f"{m}_seq_{index:04d}_trajectory.csv")
        _snapshot(cfg, out)
        print(f"detected {sorted(set(m for _, m, _ in results))} on {len(seqs)} sequences -> {out}")


def _load_results(cfg: ExperimentConfig):
    """(kind, method, sequence_index, predicted, truths, T) tuples from disk."""
    rdir = cfg.results_dir()
    if not rdir.exists():
        raise DataError(f"results directory {rdir} does not exist (run `paramcpd detect`)")
    rows = []
    for kdir in sorted(p for p in rdir.iterdir() if p.is_dir()):
        kind = kdir.name
        if kind not in KINDS:
            continue
        seqs, _ = ds.load_corpus(cfg.corpora_dir() / kind)
        truth_by_index = {s.index: (s.changepoints, len(s.trajectory)) for s in seqs}
        for f in sorted(kdir.glob("*_seq_*.json")):
            with open(f) as fh:
                payload = json.load(fh)
            idx = payload["sequence_index"]
            truths, t_len = truth_by_index[idx]
            rows.append(
                (kind, payload["method"], idx, payload["predicted_changepoints"], truths, t_len)
            )
    if not rows:
        raise DataError(f"no detection results under {rdir}")
    return rows


_METRIC_HEADER = ["method", "param_kind", "seed", "f1", "mae_steps", "fp_per_1000",
                  "precision", "recall", "tp", "fp", "fn"]


def _metric_row(method, kind, idx, bundle):
    return [method, kind, idx, bundle.f1, bundle.mae_steps, bundle.fp_per_1000,
            bundle.precision, bundle.recall, bundle.tp, bundle.fp, bundle.fn]


def cmd_evaluate(cfg: ExperimentConfig) -> None:
    results = _load_results(cfg)
    delta = cfg.eval.reference_delta
    per_seq, curve_rows = [], []
    for kind, method, idx, predicted, truths, t_len in results:
        bundle = ev.metrics(ev.match(predicted, truths, delta), t_len)
        per_seq.append(_metric_row(method, kind, idx, bundle))
        for d, b in ev.f1_delta_curve(predicted, truths, t_len, cfg.eval.deltas):
            ref = 1 if d == delta else 0
            curve_rows.append([method, kind, idx, d, ref, b.f1, b.precision, b.recall,
                               b.mae_steps, b.fp_per_1000])
    summary = _summarize(per_seq)
    out = cfg.workdir() / "eval"
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "metrics.csv", _METRIC_HEADER, per_seq)
    write_csv(out / "metrics_summary.csv",
              ["method", "param_kind", "n_seq", "f1", "mae_steps", "fp_per_1000",
               "precision", "recall"],
              summary)
    dump_json(
        {f"{m}/{k}": {"n_seq": n, "f1": f1, "mae_steps": mae, "fp_per_1000": fpk,
                      "precision": p, "recall": r}
         for m, k, n, f1, mae, fpk, p, r in summary},
        out / "metrics.json",
    )
    write_csv(out / "f1_delta.csv",
              ["method", "param_kind", "seed", "delta", "is_reference", "f1", "precision",
               "recall", "mae_steps", "fp_per_1000"],
              curve_rows)
    _snapshot(cfg, out)
    for row in summary:
        print(f"{row[0]:>10} {row[1]:>6}: F1={row[3]:.3f} MAE={row[4]:.2f} FP/1000={row[5]:.2f}")


def _summarize(per_seq):
    groups = {}
    for row in per_seq:
        groups.setdefault((row[0], row[1]), []).append(row)
    out = []
    for (method, kind), rows in sorted(groups.items()):
        f1 = float(np.mean([r[3] for r in rows]))
        maes = [r[4] for r in rows if not np.isnan(r[4])]
        mae = float(np.mean(maes)) if maes else float("nan")
        fpk = float(np.mean([r[5] for r in rows]))
        prec = float(np.mean([r[6] for r in rows]))
        rec = float(np.mean([r[7] for r in rows]))
        out.append([method, kind, len(rows), f1, mae, fpk, prec, rec])
    return out


def cmd_calibrate(cfg: ExperimentConfig) -> None:
    ckpt = cfg.checkpoint_path()
    if not ckpt.exists():
        raise DataError(f"checkpoint not found: {ckpt} (run `paramcpd train` first)")
    model = npe.load_checkpoint(ckpt)
    out = cfg.workdir() / "calibration"
    out.mkdir(parents=True, exist_ok=True)
    reports = {}
    for k in KINDS:
        cdir = cfg.corpora_dir() / f"stationary_{k}"
        if not cdir.exists():
            # deterministic from config, so generating in place preserves purity
            recs = ds.build_stationary_corpus(
                k, cfg.dataset.n_stationary,
                derive_seed(cfg.seed, _NS_STATIONARY, _KIND_TAG[k]),
                length=cfg.dataset.stationary_length, dt=cfg.simulator.dt,
                eta=cfg.simulator.eta, burn_in=cfg.simulator.burn_in,
                ranges=cfg.simulator.ranges(), bound=cfg.simulator.divergence_bound,
            )
            ds.save_corpus(cdir, recs, extra={"eta": cfg.simulator.eta, "dt": cfg.simulator.dt})
            _snapshot(cfg, cdir)
        recs, _ = ds.load_corpus(cdir)
        report = ev.calibrate(
            recs, model, w=cfg.dataset.window_length, s=cfg.detection.stride,
            m_samples=cfg.detection.m_samples, aggregator=cfg.detection.aggregator,
            seed=derive_seed(cfg.seed, _NS_CALIBRATE, _KIND_TAG[k]),
        )
        reports[k] = report.as_dict()
        write_csv(out / f"scatter_{k}.csv", ["theta_true", "theta_hat"],
                  [[a, b] for a, b in report.points])
        print(f"{k}: slope={report.slope:.4f} intercept={report.intercept:+.4f} "
              f"R2={report.r2:.4f} MAE={report.mae:.4f}")
    dump_json(reports, out / "calibration.json")
    _snapshot(cfg, out)


def cmd_sweep(cfg: ExperimentConfig, axis: str, values: list[float], jobs: int) -> None:
    out = cfg.workdir() / "sweep"
    out.mkdir(parents=True, exist_ok=True)
    header = ["axis", "value", *_METRIC_HEADER]
    rows = []
    if axis == "delta":
        results = _load_results(cfg)
        for value in values:
            for kind, method, idx, predicted, truths, t_len in results:
                b = ev.metrics(ev.match(predicted, truths, int(value)), t_len)
                rows.append(["delta", int(value), *_metric_row(method, kind, idx, b)])
    elif axis == "eta":
        model = npe.load_checkpoint(cfg.checkpoint_path())
        for value in values:
            for k in KINDS:
                seqs = ds.build_changepoint_corpus(
                    k, cfg.dataset.n_sequences,
                    derive_seed(cfg.seed, _NS_CORPUS, _KIND_TAG[k]),
                    n_segments=cfg.dataset.n_segments,
                    segment_length=cfg.dataset.segment_length,
                    dt=cfg.simulator.dt, eta=float(value), burn_in=cfg.simulator.burn_in,
                    ranges=cfg.simulator.ranges(), bound=cfg.simulator.divergence_bound,
                )
                for seq in seqs:
                    for m in ("param_cpd", "obs_cpd"):
                        res = _detect_one(model, seq, cfg, m)
                        b = ev.metrics(
                            ev.match(res.predicted_changepoints, seq.changepoints,
                                     cfg.eval.reference_delta),
                            len(seq.trajectory),
                        )
                        rows.append(["eta", float(value), *_metric_row(m, k, seq.index, b)])
    elif axis == "w":
        by_w = cfg.paths.checkpoint_by_w
        missing = [str(int(v)) for v in values if str(int(v)) not in by_w]
        if missing:
            raise ConfigError(
                f"w sweep needs paths.checkpoint_by_w entries for {missing} "
                "(the network input width is 4*w, so each w needs its own checkpoint)"
            )
        for value in values:
            w = int(value)
            model = npe.load_checkpoint(by_w[str(w)])
            for k in KINDS:
                seqs, _ = ds.load_corpus(cfg.corpora_dir() / k)
                for seq in seqs:
                    for m in ("param_cpd", "obs_cpd"):
                        sub = _with_w(cfg, w)
                        res = _detect_one(model, seq, sub, m)
                        b = ev.metrics(
                            ev.match(res.predicted_changepoints, seq.changepoints,
                                     cfg.eval.reference_delta),
                            len(seq.trajectory),
                        )
                        rows.append(["w", w, *_metric_row(m, k, seq.index, b)])
    else:
        raise ConfigError(f"unknown sweep axis {axis!r}")
    write_csv(out / f"sweep_{axis}.csv", header, rows)
    _snapshot(cfg, out)
    print(f"wrote {len(rows)} rows to {out / f'sweep_{axis}.csv'}")


def _with_w(cfg: ExperimentConfig, w: int) -> ExperimentConfig:
    import copy

    sub = copy.deepcopy(cfg)
    sub.dataset.window_length = w
    return sub


# ---------------------------------------------------------------------------
# entry point


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="JSON config file (defaults built in)")
    common.add_argument("--seed", type=int, default=None, help="override the master seed")
    common.add_argument("--force", action="store_true", help="overwrite non-empty output dirs")
    common.add_argument("--jobs", type=int, default=1, help="worker processes where supported")

    p = argparse.ArgumentParser(prog="paramcpd", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    sp = sub.add_parser("simulate", parents=[common], help="generate evaluation corpora")
    sp.add_argument("--kind", required=True, choices=[*KINDS, "stationary", "all"])
    sub.add_parser("train", parents=[common], help="build training set and train the estimator")
    dp = sub.add_parser("detect", parents=[common], help="run changepoint detection on a corpus")
    dp.add_argument("--kind", required=True, choices=[*KINDS, "all"])
    dp.add_argument("--method", default="both", choices=["param_cpd", "obs_cpd", "both"])
    sub.add_parser("evaluate", parents=[common], help="score detection results")
    sub.add_parser("calibrate", parents=[common], help="posterior calibration on stationary corpora")
    wp = sub.add_parser("sweep", parents=[common], help="metric sweep along one axis")
    wp.add_argument("--axis", required=True, choices=["delta", "w", "eta"])
    wp.add_argument("--values", required=True, help="comma-separated axis values")
    return p


def main(argv=None) -> int:
    try:
        args = _build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = load_config(args.config) if args.config else ExperimentConfig()
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("--seed must be non-negative")
            cfg.seed = args.seed
        if args.command == "simulate":
            cmd_simulate(cfg, args.kind, args.force)
        elif args.command == "train":
            cmd_train(cfg)
        elif args.command == "detect":
            cmd_detect(cfg, args.kind, args.method, args.force, args.jobs)
        elif args.command == "evaluate":
            cmd_evaluate(cfg)
        elif args.command == "calibrate":
            cmd_calibrate(cfg)
        elif args.command == "sweep":
            values = [float(v) for v in args.values.split(",") if v]
            if not values:
                raise ConfigError("--values must list at least one value")
            cmd_sweep(cfg, args.axis, values, args.jobs)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except (DivergenceError, TrainingError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
