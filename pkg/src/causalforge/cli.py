"""Command-line pipeline: every experiment shape is one subcommand.

All randomness flows from one global --seed through named substreams
(sim, split, undersample, noise, init, shuffle), so one stage's seed can
change without perturbing the others.  Every output directory gets a
manifest.json recording the command, its arguments and input hashes;
wall time is reported on stderr so manifests stay deterministic.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import (NoiseSpec, SplitPlan, add_noise, build_split,
                      gen_linear_network, make_pairs, read_dataset,
                      write_dataset)
from .errors import CausalForgeError, ValidationError
from .estimator import (EstimatorConfig, TrainConfig, load_checkpoint,
                        save_checkpoint, train)
from .metrics import (evaluate_method, ground_truth_stats, write_report_csv,
                      write_stats_csv)
from .netlist import gen_synthetic_netlist, load_netlist, save_netlist
from .perturb import (PerturbSpec, ground_truth_sweep, read_ground_truth,
                      write_ground_truth)
from .probes import grad_cam, temporal_reversal_probe
from .sim import SimConfig, read_recording, simulate_periods, write_recording

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2


def substream(seed: int, name: str) -> int:
    digest = hashlib.sha256(f"{seed}:{name}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def _hash_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir: Path, command: str, args: dict,
                   inputs: list[str], t0: float) -> None:
    # Wall time goes to stderr only: manifests must be byte-identical
    # across reruns with the same inputs.
    manifest = {
        "tool": f"causalforge {__version__}",
        "command": command,
        "args": {k: str(v) if isinstance(v, Path) else v
                 for k, v in sorted(args.items()) if k != "func"},
        "inputs": {p: _hash_file(Path(p)) for p in inputs if Path(p).is_file()},
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    print(f"{command}: {time.time() - t0:.3f}s", file=sys.stderr)


def load_config(path: str | None) -> dict:
    if path is None:
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _opt(args, config: dict, section: str, key: str, default):
    """Flag wins over config file wins over default."""
    flag = getattr(args, key.replace("-", "_"), None)
    if flag is not None:
        return flag
    return config.get(section, {}).get(key, default)


def _sim_config(args, config) -> SimConfig:
    return SimConfig(k=_opt(args, config, "sim", "k", 30),
                     l=_opt(args, config, "sim", "half_clocks", 16),
                     M=_opt(args, config, "sim", "periods", 20),
                     max_fixpoint_iters=_opt(args, config, "sim",
                                             "max_fixpoint_iters", 100))


def cmd_gen_circuit(args) -> int:
    t0 = time.time()
    config = load_config(args.config)
    net = gen_synthetic_netlist(
        n_transistors=_opt(args, config, "gen", "n", 64),
        fanout_mean=_opt(args, config, "gen", "fanout", 1.5),
        seed=substream(args.seed, "sim"))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_netlist(net, out / "netlist.json")
    write_manifest(out, "gen-circuit", vars(args), [], t0)
    return EXIT_OK


def cmd_simulate(args) -> int:
    t0 = time.time()
    config = load_config(args.config)
    net = load_netlist(args.netlist)
    cfg = _sim_config(args, config)
    recs = simulate_periods(net, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for rec in recs:
        write_recording(rec, out / f"period_{rec.m:04d}.cfrc", cfg.k, cfg.l)
    write_manifest(out, "simulate", vars(args), [args.netlist], t0)
    return EXIT_OK


def cmd_perturb(args) -> int:
    t0 = time.time()
    config = load_config(args.config)
    net = load_netlist(args.netlist)
    cfg = _sim_config(args, config)
    spec = PerturbSpec(value=_opt(args, config, "perturb", "value", "invert"),
                       hold=_opt(args, config, "perturb", "hold", 1),
                       window=_opt(args, config, "perturb", "window", 1))
    results = ground_truth_sweep(net, cfg, spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for rec, gt in results:
        write_recording(rec, out / f"period_{rec.m:04d}.cfrc", cfg.k, cfg.l)
        write_ground_truth(gt, out / f"period_{gt.m:04d}.cfgt")
    write_manifest(out, "perturb", vars(args), [args.netlist], t0)
    return EXIT_OK


def _load_sweep(gt_dir: Path):
    recs, gts = [], []
    for gt_path in sorted(gt_dir.glob("period_*.cfgt")):
        gts.append(read_ground_truth(gt_path))
        rec_path = gt_path.with_suffix(".cfrc")
        if not rec_path.is_file():
            raise ValidationError(f"missing recording for {gt_path}")
        recs.append(read_recording(rec_path)[0])
    if not gts:
        raise ValidationError(f"no ground-truth periods in {gt_dir}")
    return recs, gts


def cmd_build_dataset(args) -> int:
    t0 = time.time()
    config = load_config(args.config)
    gt_dir = Path(args.ground_truth)
    recs, gts = _load_sweep(gt_dir)
    plan = SplitPlan(
        test_periods=_opt(args, config, "dataset", "test_periods", [0, 1]),
        val_periods=_opt(args, config, "dataset", "val_periods", [2]),
        undersample_ratio=_opt(args, config, "dataset", "ratio", 3),
        seed=substream(args.seed, "undersample"))
    splits = build_split(gts, recs, plan)
    noise_scale = _opt(args, config, "dataset", "noise_scale", 0.0)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, samples in splits.items():
        if noise_scale > 0 and name != "train":
            samples = add_noise(samples, NoiseSpec(
                scale=noise_scale, seed=substream(args.seed, "noise")))
        write_dataset(samples, out / f"{name}.cfds",
                      sidecar_extra={"split": name,
                                     "noise_scale": noise_scale})
    write_manifest(out, "build-dataset", vars(args), [], t0)
    return EXIT_OK


def cmd_train(args) -> int:
    t0 = time.time()
    config = load_config(args.config)
    train_samples = [s for path in args.dataset for s in read_dataset(path)]
    val_samples = read_dataset(args.val) if args.val else []
    L = train_samples[0].X.shape[0]
    est_cfg = EstimatorConfig(
        L=L,
        W=_opt(args, config, "train", "window", 32),
        C=_opt(args, config, "train", "embed_dim", 64),
        depth=_opt(args, config, "train", "depth", 2),
        heads=_opt(args, config, "train", "heads", 2),
        ff_hidden=_opt(args, config, "train", "ff_hidden", 256))
    train_cfg = TrainConfig(
        lr=_opt(args, config, "train", "lr", 0.001),
        weight_decay=_opt(args, config, "train", "weight_decay", 0.05),
        batch_size=_opt(args, config, "train", "batch_size", 128),
        n_epochs=_opt(args, config, "train", "epochs", 30),
        shift_quantum=_opt(args, config, "train", "shift_quantum", 1),
        seed=substream(args.seed, "init"))
    ckpt = train(train_samples, val_samples, train_cfg, est_cfg,
                 log=(lambda e: print(json.dumps(e), file=sys.stderr))
                 if args.verbose else None)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(ckpt, out / "estimator.cfck")
    with open(out / "history.json", "w", encoding="utf-8") as fh:
        json.dump(ckpt.history, fh, indent=1)
    write_manifest(out, "train", vars(args),
                   list(args.dataset) + ([args.val] if args.val else []), t0)
    return EXIT_OK


def _resolve_method(tag: str):
    if tag.startswith("checkpoint:"):
        return load_checkpoint(tag.split(":", 1)[1])
    return tag


def cmd_eval(args) -> int:
    t0 = time.time()
    samples = read_dataset(args.dataset)
    if args.noise_scale:
        samples = add_noise(samples, NoiseSpec(
            scale=args.noise_scale, seed=substream(args.seed, "noise")))
    reports = []
    for tag in args.method:
        method = _resolve_method(tag)
        reports.append(evaluate_method(method, samples,
                                       noise_scale=args.noise_scale or 0.0,
                                       method_name=tag))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_report_csv(reports, out / "report.csv")
    with open(out / "summary.json", "w", encoding="utf-8") as fh:
        json.dump([r.summary() for r in reports], fh, indent=1)
    write_manifest(out, "eval", vars(args), [args.dataset], t0)
    return EXIT_OK


def cmd_probe(args) -> int:
    t0 = time.time()
    ckpt = load_checkpoint(args.checkpoint)
    samples = read_dataset(args.dataset)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.kind == "gradcam":
        rows = []
        for n, s in enumerate(samples[:args.limit]):
            sal = grad_cam(ckpt, s.X.astype(np.float64), meta=s)
            rows.append({"sample": n, "i": s.i, "j": s.j, "m": s.m,
                         "label": s.label, "confidence": sal.confidence,
                         "degenerate": sal.degenerate})
            with open(out / f"saliency_{n:04d}.csv", "w", encoding="utf-8") as fh:
                fh.write("index,value\n")
                for idx, v in enumerate(sal.values):
                    fh.write(f"{idx},{v:.6f}\n")
    else:
        rows = []
        for n, s in enumerate(samples[:args.limit]):
            res = temporal_reversal_probe(ckpt, s.X, shift=args.shift)
            rows.append({"sample": n, "i": s.i, "j": s.j, "m": s.m,
                         "label": s.label, **res})
    with open(out / "probe.json", "w", encoding="utf-8") as fh:
        json.dump(rows, fh, indent=1)
    write_manifest(out, f"probe-{args.kind}", vars(args),
                   [args.checkpoint, args.dataset], t0)
    return EXIT_OK


def cmd_stats(args) -> int:
    t0 = time.time()
    recs, gts = _load_sweep(Path(args.ground_truth))
    report = ground_truth_stats(gts, recs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_stats_csv(report, out / "stats.csv")
    with open(out / "stats.json", "w", encoding="utf-8") as fh:
        json.dump(report.summary(), fh, indent=1)
    write_manifest(out, "stats", vars(args), [], t0)
    return EXIT_OK


def cmd_ingest(args) -> int:
    t0 = time.time()
    rec, _ = read_recording(args.recordings)
    gt = read_ground_truth(args.adjacency)
    if gt.adjacency.shape[0] != rec.data.shape[0]:
        raise ValidationError("adjacency dimension does not match recording")
    samples = make_pairs(rec, gt.adjacency, rec.element_ids)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_dataset(samples, out / "ingested.cfds",
                  sidecar_extra={"split": "ingested"})
    write_manifest(out, "ingest", vars(args),
                   [args.recordings, args.adjacency], t0)
    return EXIT_OK


def cmd_gen_linear(args) -> int:
    t0 = time.time()
    subjects = gen_linear_network(
        n_nodes=args.n_nodes, edge_density=args.density,
        seq_len=args.seq_len, n_subjects=args.subjects,
        seed=substream(args.seed, "sim"))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    samples = []
    for rec, adjacency in subjects:
        samples.extend(make_pairs(rec, adjacency, rec.element_ids,
                                  source="linear-network"))
    write_dataset(samples, out / "linear.cfds",
                  sidecar_extra={"split": "linear-network"})
    write_manifest(out, "gen-linear", vars(args), [], t0)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="causalforge")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--config", default=None,
                        help="JSON config tree; flags override it")
    parser.add_argument("--jobs", type=int,
                        default=int(os.environ.get("CF_JOBS", "1")))
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-circuit")
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--fanout", type=float, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_circuit)

    p = sub.add_parser("simulate")
    p.add_argument("--netlist", required=True)
    p.add_argument("--periods", type=int, default=None)
    p.add_argument("--half-clocks", type=int, default=None)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("perturb")
    p.add_argument("--netlist", required=True)
    p.add_argument("--periods", type=int, default=None)
    p.add_argument("--half-clocks", type=int, default=None)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_perturb)

    p = sub.add_parser("build-dataset")
    p.add_argument("--ground-truth", required=True)
    p.add_argument("--noise-scale", type=float, default=None)
    p.add_argument("--ratio", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_dataset)

    p = sub.add_parser("train")
    p.add_argument("--dataset", required=True, nargs="+")
    p.add_argument("--val", default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--shift-quantum", type=int, default=None)
    p.add_argument("--verbose", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval")
    p.add_argument("--dataset", required=True)
    p.add_argument("--method", nargs="+", required=True,
                   help="corr | mi | granger | oracle | constant | checkpoint:PATH")
    p.add_argument("--noise-scale", type=float, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("probe")
    p.add_argument("kind", choices=["gradcam", "reversal"])
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--shift", type=int, default=30)
    p.add_argument("--limit", type=int, default=50)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("stats")
    p.add_argument("--ground-truth", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("ingest")
    p.add_argument("--recordings", required=True)
    p.add_argument("--adjacency", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("gen-linear")
    p.add_argument("--n-nodes", type=int, default=5)
    p.add_argument("--density", type=float, default=0.2)
    p.add_argument("--seq-len", type=int, default=200)
    p.add_argument("--subjects", type=int, default=10)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_linear)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CausalForgeError, FileNotFoundError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:   # runtime failure contract
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
