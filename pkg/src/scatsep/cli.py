"""``scatsep`` command-line interface.

Verbs: features, train-nmf, train-dnn, separate, evaluate, plus the helpers
``toy`` (write a synthetic dataset) and ``prepare`` (write 0 dB test
mixtures with their references).
"""

from __future__ import annotations

import argparse
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .audio import AudioError, DatasetManifest, load_wav, mix_at_0db, mixture_pairs, save_wav
from .config import RunConfig, load_config
from .formats import (FormatError, load_network, load_nmf_model, save_feature_map,
                      save_network, save_nmf_model, write_loss_csv)
from .metrics import aggregate, evaluate_separation
from .neural import TrainConfig
from .pipeline import (FEATURE_MODES, extract_features, prepare_clip, separate_dnn,
                       separate_nmf, train_dnn, train_nmf_models, training_mixtures)
from .toy import TOY_DATASETS, write_toy_dataset

DNN_FILE = "dnn.bin"
LOSS_FILE = "dnn_loss.csv"


def nmf_file(level: int, source: int) -> str:
    return f"nmf_level{level}_source{source}.bin"


def _map(fn, items, jobs: int):
    if jobs > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(item) for item in items]


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if getattr(args, "mode", None):
        cfg = cfg.replace("features", mode=args.mode)
    if args.seed is not None:
        cfg = cfg.replace("nmf", seed=args.seed).replace("neural", seed=args.seed)
    if getattr(args, "q", None) is not None:
        cfg = cfg.replace("nmf", q=args.q)
    if getattr(args, "arch", None):
        cfg = cfg.replace("neural", arch=args.arch)
    if getattr(args, "epochs", None) is not None:
        cfg = cfg.replace("neural", epochs=args.epochs)
    if getattr(args, "manifest", None):
        cfg = cfg.replace("paths", manifest=args.manifest)
    return cfg


def _manifest(cfg: RunConfig) -> DatasetManifest:
    if not cfg.paths.manifest:
        raise ValueError("no manifest given (use --manifest or [paths] manifest)")
    return DatasetManifest.load(cfg.paths.manifest)


def _out_dir(args, default: str) -> Path:
    return Path(args.out if args.out else default)


# ---- verbs ----------------------------------------------------------------


def _features_one(item):
    path, settings, out = item
    maps = extract_features(load_wav(path), settings)
    written = []
    for fm in maps:
        target = out / f"{Path(path).stem}.L{fm.level}.feat"
        save_feature_map(target, fm)
        written.append((target, fm.n_bins, fm.n_frames, fm.stride))
    return written


def cmd_features(args) -> int:
    cfg = _config(args)
    if not args.inputs:
        args.parser.error("features: no input clips given")
    for p in args.inputs:
        if not Path(p).exists():
            raise AudioError(f"{p}: no such file")
    out = _out_dir(args, cfg.paths.out_dir)
    items = [(p, cfg.features, out) for p in args.inputs]
    for written in _map(_features_one, items, args.jobs):
        for target, rows, frames, stride in written:
            print(f"{target}: rows={rows} frames={frames} stride={stride}")
    return 0


def cmd_train_nmf(args) -> int:
    cfg = _config(args)
    manifest = _manifest(cfg)
    manifest.require_both_sources("train")
    clips = [[load_wav(p) for p in manifest.select(label, "train")]
             for label in ("source1", "source2")]
    models, hist = train_nmf_models(clips[0], clips[1], cfg.features, cfg.nmf,
                                    return_history=True)
    out = _out_dir(args, cfg.paths.model_dir)
    for level, (pair, hpair) in enumerate(zip(models, hist), start=1):
        for src, (model, h) in enumerate(zip(pair, hpair), start=1):
            target = out / nmf_file(level, src)
            save_nmf_model(target, model)
            print(f"{target}: rows={model.n_rows} atoms={model.n_atoms} "
                  f"objective={h[-1]:.6g} sweeps={len(h) - 1}")
    return 0


def cmd_train_dnn(args) -> int:
    cfg = _config(args)
    manifest = _manifest(cfg)
    manifest.require_both_sources("train")
    ns = cfg.neural
    cap = ns.max_mixtures or None
    mixtures = training_mixtures(manifest.select("source1", "train"),
                                 manifest.select("source2", "train"), cfg.features,
                                 cap, ns.seed)
    tcfg = TrainConfig(ns.learning_rate, ns.momentum, ns.batch_size, ns.epochs, ns.seed)
    result = train_dnn(mixtures, ns.arch, cfg.features, tcfg, branch_width=ns.branch_width)
    out = _out_dir(args, cfg.paths.model_dir)
    save_network(out / DNN_FILE, result.network)
    write_loss_csv(out / LOSS_FILE, result.losses)
    final = result.losses[-1] if len(result.losses) else result.initial_loss
    print(f"{out / DNN_FILE}: arch={ns.arch} mixtures={len(mixtures)} "
          f"initial_loss={result.initial_loss:.6g} final_loss={final:.6g}")
    return 0


def _load_nmf_models(model_dir: Path, n_levels: int):
    models = []
    for level in range(1, n_levels + 1):
        pair = []
        for src in (1, 2):
            path = model_dir / nmf_file(level, src)
            if not path.exists():
                raise FileNotFoundError(f"missing model file {path}")
            pair.append(load_nmf_model(path))
        models.append(tuple(pair))
    return models


def _separate_one(item):
    path, out, cfg, method, model_dir = item
    y = load_wav(path)
    if method == "dnn":
        x1, x2 = separate_dnn(y, load_network(model_dir / DNN_FILE), cfg.features)
    else:
        models = _load_nmf_models(model_dir, cfg.features.n_levels)
        x1, x2 = separate_nmf(y, models, cfg.features, cfg.nmf)
    save_wav(out / "source1.wav", x1)
    save_wav(out / "source2.wav", x2)
    y = prepare_clip(y, cfg.features).samples
    resid = np.linalg.norm(x1.samples + x2.samples - y) / max(np.linalg.norm(y), 1e-300)
    return out, resid


def cmd_separate(args) -> int:
    cfg = _config(args)
    if not args.inputs:
        args.parser.error("separate: no mixture given")
    model_dir = Path(args.models or cfg.paths.model_dir)
    out = _out_dir(args, cfg.paths.out_dir)
    items = []
    for p in args.inputs:
        p = Path(p)
        # prepared mixtures (<dir>/mixture.wav) keep their directory name
        if p.stem == "mixture":
            target = out / p.parent.name
        elif len(args.inputs) == 1:
            target = out
        else:
            target = out / p.stem
        items.append((p, target, cfg, args.method, model_dir))
    for target, resid in _map(_separate_one, items, args.jobs):
        print(f"{target}: wrote source1.wav source2.wav (relative |x1+x2-y| = {resid:.2g})")
    return 0


def _pairs(est_dir: Path, ref_dir: Path):
    def index(root):
        return {f.parent.relative_to(root).as_posix() for f in root.rglob("source1.wav")}

    est, ref = index(est_dir), index(ref_dir)
    if not est:
        raise FileNotFoundError(f"no source1.wav estimates under {est_dir}")
    missing = sorted(est ^ ref)
    if missing:
        raise ValueError(f"unmatched estimate/reference directories: {', '.join(missing)}")
    return sorted(est)


def cmd_evaluate(args) -> int:
    est_dir, ref_dir = Path(args.estimates), Path(args.references)
    rows = []
    for name in _pairs(est_dir, ref_dir):
        e = [load_wav(est_dir / name / f"source{i}.wav") for i in (1, 2)]
        r = [load_wav(ref_dir / name / f"source{i}.wav") for i in (1, 2)]
        n = min(len(c) for c in e + r)
        e = [c.with_samples(c.samples[:n]) for c in e]
        r = [c.with_samples(c.samples[:n]) for c in r]
        rows.append(evaluate_separation(e[0], e[1], r, name))
    report = aggregate({args.method: rows})
    out = Path(args.out) if args.out else est_dir
    report.write_csv(out / "metrics.csv")
    table = report.table()
    (out / "metrics.txt").write_text(table + "\n")
    print(f"{len(rows)} mixtures")
    print(table)
    return 0


def cmd_toy(args) -> int:
    path = write_toy_dataset(args.out or "toy", args.kind, args.n_train, args.n_test,
                             args.duration, seed=args.seed or 0)
    print(path)
    return 0


def cmd_prepare(args) -> int:
    cfg = _config(args)
    manifest = _manifest(cfg)
    manifest.require_both_sources(args.split)
    out = _out_dir(args, cfg.paths.out_dir)
    pairs = mixture_pairs(manifest.select("source1", args.split),
                          manifest.select("source2", args.split), args.cap or None,
                          cfg.nmf.seed)
    for k, (p1, p2) in enumerate(pairs):
        y, x1, x2 = mix_at_0db(load_wav(p1), load_wav(p2))
        d = out / f"mix_{k:03d}"
        save_wav(d / "mixture.wav", y)
        save_wav(d / "source1.wav", x1)
        save_wav(d / "source2.wav", x2)
    print(f"{len(pairs)} mixtures written to {out}")
    return 0


# ---- parser ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scatsep", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, manifest=False):
        p.add_argument("--config", help="INI run configuration")
        p.add_argument("--seed", type=int, help="random seed (overrides the config)")
        p.add_argument("--jobs", type=int, default=1, help="worker processes")
        p.add_argument("--out", help="output directory")
        if manifest:
            p.add_argument("--manifest", help="dataset manifest (path,label,split CSV)")
        p.set_defaults(parser=p)
        return p

    p = common(sub.add_parser("features", help="dump feature maps of clips"))
    p.add_argument("--mode", choices=FEATURE_MODES)
    p.add_argument("inputs", nargs="*")
    p.set_defaults(func=cmd_features)

    p = common(sub.add_parser("train-nmf", help="train per-source NMF dictionaries"), True)
    p.add_argument("--mode", choices=("stft", "scatt1", "scatt2"))
    p.add_argument("--q", type=int, help="atoms per level-1 dictionary")
    p.set_defaults(func=cmd_train_nmf)

    p = common(sub.add_parser("train-dnn", help="train a mask network"), True)
    p.add_argument("--mode", choices=("scatt1", "haar"))
    p.add_argument("--arch")
    p.add_argument("--epochs", type=int)
    p.set_defaults(func=cmd_train_dnn)

    p = common(sub.add_parser("separate", help="separate mixtures into two WAVs"))
    p.add_argument("--mode", choices=FEATURE_MODES)
    p.add_argument("--models", help="model directory")
    p.add_argument("--method", choices=("nmf", "dnn"), default="nmf")
    p.add_argument("inputs", nargs="*")
    p.set_defaults(func=cmd_separate)

    p = common(sub.add_parser("evaluate", help="SDR/SIR/SAR of estimates vs references"))
    p.add_argument("estimates")
    p.add_argument("references")
    p.add_argument("--method", default="method", help="row name in the report")
    p.set_defaults(func=cmd_evaluate)

    p = common(sub.add_parser("toy", help="write a synthetic two-class dataset"))
    p.add_argument("--kind", choices=sorted(TOY_DATASETS), default="bands")
    p.add_argument("--n-train", type=int, default=4)
    p.add_argument("--n-test", type=int, default=2)
    p.add_argument("--duration", type=float, default=2.0)
    p.set_defaults(func=cmd_toy)

    p = common(sub.add_parser("prepare", help="write 0 dB test mixtures and references"), True)
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.add_argument("--cap", type=int, default=0, help="maximum number of mixtures")
    p.set_defaults(func=cmd_prepare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, FormatError, AudioError, FloatingPointError) as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"scatsep: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
