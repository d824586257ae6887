"""Command line driving the full pipeline on container files.

Subcommands: synth (benchmark data), ingest (features -> store), train
(noise predictor), score (per-sample OOD scores), eval (AUROC / FPR@95),
ablate (sweep grids to CSV).
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, containers
from .bias_removal import ClassifierHead, complete_head, encode
from .errors import NodiError
from .feature_store import (
    FeatureSet,
    NormalizedFeatureSet,
    default_radius,
    ingest,
    load_features,
    load_store,
    normalize,
)
from .metrics import evaluate
from .predictor import PredictorBackend, TrainConfig, load_predictor, save_predictor
from .predictor import train as train_predictor
from .scale_search import ScaleSearchConfig
from .schedule import linear_schedule
from .scorer import ScorerConfig, StableBackend, score_set, write_scores
from .synth import SynthSpec, generate, write_bundle


def _add_schedule_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--timesteps", type=int, default=10)
    p.add_argument("--beta-lo", type=float, default=1e-4)
    p.add_argument("--beta-hi", type=float, default=1e-2)
    p.add_argument("--alpha-literal", action="store_true",
                   help="read the grid as retention alpha instead of beta")


def _add_scale_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scale-thr", type=float, default=None)
    p.add_argument("--scale-max-iters", type=int, default=50)
    p.add_argument("--scale-orientation", choices=("paper", "auto"), default=None,
                   help="default: auto for the stable backend, paper for the model backend")


def _schedule(args):
    return linear_schedule(
        args.timesteps, args.beta_lo, args.beta_hi, alpha_literal=args.alpha_literal
    )


def _default_score_t(dim: int, num_classes: int) -> int:
    return 3 if dim >= num_classes else 2


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nodi",
                                     description="diffusion-based OOD scoring over feature files")
    parser.add_argument("--version", action="version", version=f"nodi {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the synthetic benchmark bundle")
    p.add_argument("--spec", help="JSON file of generator fields; defaults used when omitted")
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("ingest", help="encode + normalize features into a store")
    p.add_argument("--features", required=True)
    p.add_argument("--head")
    p.add_argument("--r", type=float, default=None,
                   help="sphere radius; default 7 when dim >= classes else 4")
    p.add_argument("--split-tag", default="unspecified")
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="fit the noise predictor to a store")
    p.add_argument("--store", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=600)
    p.add_argument("--lr-high", type=float, default=0.01)
    p.add_argument("--lr-low", type=float, default=0.0001)
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--init-mode", choices=("symmetric-small", "uniform-0-1"),
                   default="symmetric-small")
    p.add_argument("--hidden", type=int, default=256)
    p.add_argument("--blocks", type=int, default=3)
    p.add_argument("--agnostic", action="store_true",
                   help="train on the pooled store under the shared class token")
    _add_schedule_flags(p)

    p = sub.add_parser("score", help="score a feature file against a store or checkpoint")
    p.add_argument("--features", required=True)
    p.add_argument("--backend", choices=("stable", "model"), default="stable")
    p.add_argument("--store")
    p.add_argument("--ckpt")
    p.add_argument("--head", help="fold this classifier head into each query")
    p.add_argument("--r", type=float, default=None,
                   help="scoring radius for the model backend (stable uses the store's)")
    p.add_argument("--score-t", type=int, default=None)
    p.add_argument("--agnostic", action="store_true")
    p.add_argument("--keep-per-class", action="store_true")
    p.add_argument("--split-tag", default=None)
    p.add_argument("--out", required=True)
    _add_schedule_flags(p)
    _add_scale_flags(p)

    p = sub.add_parser("eval", help="AUROC and FPR@TPR from two score files")
    p.add_argument("--id", dest="id_path", required=True)
    p.add_argument("--ood", dest="ood_path", required=True)
    p.add_argument("--tpr", type=float, default=0.95)
    p.add_argument("--out")

    p = sub.add_parser("ablate", help="sweep settings over a benchmark bundle, emit CSV")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ood", choices=("near", "far"), default="near")
    p.add_argument("--sweep", action="append", choices=("encoding", "r", "t", "classmode"),
                   help="repeatable; default runs every sweep")
    p.add_argument("--r-grid", default="4,5.5,7,8.5,10")
    p.add_argument("--t-grid", default="0,1,2,3,4,5,6,7,8,9")
    p.add_argument("--score-t", type=int, default=None)
    _add_schedule_flags(p)
    _add_scale_flags(p)
    return parser


def _cmd_synth(args) -> int:
    if args.spec:
        fields = json.loads(Path(args.spec).read_text())
        spec = SynthSpec(**fields)
    else:
        spec = SynthSpec()
    data = generate(spec)
    write_bundle(data, args.out_dir)
    n_eval = spec.points_per_eval_cluster
    print(
        f"wrote {args.out_dir}: dim={spec.dim} classes={spec.num_classes} "
        f"train={spec.num_classes * spec.points_per_class} eval-per-cluster={n_eval}"
    )
    return 0


def _cmd_ingest(args) -> int:
    store = ingest(args.features, args.head, r=args.r, split_tag=args.split_tag)
    store.save(args.out)
    print(
        f"wrote {args.out}: n={store.vectors.shape[0]} dim={store.dim} "
        f"r={store.r:g} bias_removed={store.bias_removed}"
    )
    return 0


def _cmd_train(args) -> int:
    store = load_store(args.store)
    sched = _schedule(args)
    cfg = TrainConfig(
        epochs=args.epochs,
        lr_high=args.lr_high,
        lr_low=args.lr_low,
        batch_size=args.batch_size,
        seed=args.seed,
        init_mode=args.init_mode,
    )
    model = train_predictor(
        store, sched, cfg, hidden=args.hidden, blocks=args.blocks, agnostic=args.agnostic
    )
    save_predictor(model, args.out)
    stride = max(1, args.epochs // 10)
    for e in range(0, args.epochs, stride):
        print(f"epoch {e}: loss {model.history[e]:.6f}")
    print(f"epoch {args.epochs - 1}: loss {model.history[-1]:.6f}")
    print(f"wrote {args.out}: params={model.n_params}")
    return 0


def _load_completed(head_path):
    if head_path is None:
        return None
    w, b = containers.read_head_file(head_path)
    return complete_head(ClassifierHead(w=w, b=b))


def _cmd_score(args) -> int:
    feats = load_features(args.features)
    completed = _load_completed(args.head)
    if args.head is not None:
        shape_d, shape_c = completed.head.dim, completed.head.num_classes
    else:
        shape_d, shape_c = feats.dim, feats.num_classes

    if args.backend == "stable":
        if not args.store:
            print("error: --backend stable requires --store", file=sys.stderr)
            return 2
        store = load_store(args.store)
        backend = StableBackend(store)
        if args.r is not None and args.r != store.r:
            print(
                f"note: ignoring --r {args.r:g}; the stable backend scores at the "
                f"store radius {store.r:g}",
                file=sys.stderr,
            )
    else:
        if not args.ckpt:
            print("error: --backend model requires --ckpt", file=sys.stderr)
            return 2
        model = load_predictor(args.ckpt)
        r = args.r if args.r is not None else default_radius(shape_d, shape_c)
        backend = PredictorBackend(model, r=r)

    sched = _schedule(args)
    score_t = args.score_t if args.score_t is not None else _default_score_t(shape_d, shape_c)
    orientation = args.scale_orientation or backend.default_orientation
    search = ScaleSearchConfig(
        thr=args.scale_thr, max_iters=args.scale_max_iters, orientation=orientation
    )
    cfg = ScorerConfig(
        score_t=score_t,
        agnostic=args.agnostic,
        keep_per_class=args.keep_per_class,
        search=search,
    )
    failures: list = []
    records = score_set(feats, backend, sched, cfg, completed=completed, failures=failures)
    meta = {
        "backend": args.backend,
        "orientation": orientation,
        "score_t": score_t,
        "r": backend.r,
        "timesteps": args.timesteps,
        "beta_lo": args.beta_lo,
        "beta_hi": args.beta_hi,
        "alpha_literal": bool(args.alpha_literal),
        "agnostic": bool(args.agnostic),
        "n_failures": len(failures),
    }
    if args.split_tag is not None:
        meta["split_tag"] = args.split_tag
    write_scores(args.out, records, meta=meta)
    for index, exc in failures:
        print(f"sample {index} failed: {exc}", file=sys.stderr)
    print(f"wrote {args.out}: {len(records)} scored, {len(failures)} failed")
    return 0


def _cmd_eval(args) -> int:
    from .scorer import read_scores

    ids = [rec.score for rec in read_scores(args.id_path)[0]]
    oods = [rec.score for rec in read_scores(args.ood_path)[0]]
    report = evaluate(ids, oods, tpr_target=args.tpr).as_dict()
    text = json.dumps(report, indent=2, sort_keys=True)
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n")
    return 0


def _fmt(x: float) -> str:
    return f"{x:g}"


def _cmd_ablate(args) -> int:
    bundle = Path(args.data_dir)
    w, b = containers.read_head_file(bundle / "head.bin")
    head = ClassifierHead(w=w, b=b)
    completed = complete_head(head)
    id_train = load_features(bundle / "id_train.bin")
    id_test = load_features(bundle / "id_test.bin")
    ood = load_features(bundle / f"ood_{args.ood}.bin")
    sched = _schedule(args)

    r0 = default_radius(head.dim, head.num_classes)
    t0 = args.score_t if args.score_t is not None else _default_score_t(head.dim, head.num_classes)
    r_grid = [float(x) for x in args.r_grid.split(",") if x]
    t_grid = [int(x) for x in args.t_grid.split(",") if x]
    for s in t_grid:
        if not 0 <= s < sched.timesteps:
            raise NodiError(f"t-grid entry {s} outside the {sched.timesteps}-step schedule")
    sweeps = args.sweep or ["encoding", "r", "t", "classmode"]

    encoded_train = encode(completed, id_train.vectors)

    def run(bias: bool, norm: bool, r: float, agnostic: bool, score_t: int):
        vectors = encoded_train if bias else id_train.vectors
        fs = FeatureSet(vectors=vectors, labels=id_train.labels, num_classes=id_train.num_classes)
        if norm:
            store = normalize(fs, r=r, split_tag="train", bias_removed=bias)
        else:
            store = NormalizedFeatureSet(
                vectors=fs.vectors, labels=fs.labels, num_classes=fs.num_classes,
                r=r, split_tag="train", bias_removed=bias,
            )
        backend = StableBackend(store)
        search = ScaleSearchConfig(
            thr=args.scale_thr, max_iters=args.scale_max_iters,
            orientation=args.scale_orientation or backend.default_orientation,
        )
        cfg = ScorerConfig(score_t=score_t, agnostic=agnostic, search=search)
        comp_q = completed if bias else None
        id_scores = [rec.score for rec in score_set(id_test, backend, sched, cfg, completed=comp_q)]
        ood_scores = [rec.score for rec in score_set(ood, backend, sched, cfg, completed=comp_q)]
        report = evaluate(id_scores, ood_scores)
        return report.auroc, report.fpr_at_tpr

    rows = []
    for sweep in sweeps:
        if sweep == "encoding":
            for bias in (True, False):
                for norm in (True, False):
                    a, f = run(bias, norm, r0, False, t0)
                    setting = f"bias={'on' if bias else 'off'},norm={'on' if norm else 'off'}"
                    rows.append((sweep, setting, a, f))
        elif sweep == "r":
            for r in r_grid:
                a, f = run(True, True, r, False, t0)
                rows.append((sweep, f"r={_fmt(r)}", a, f))
        elif sweep == "t":
            for s in t_grid:
                a, f = run(True, True, r0, False, s + 1)
                rows.append((sweep, f"t={s}", a, f))
        elif sweep == "classmode":
            for r in r_grid:
                for agnostic in (False, True):
                    a, f = run(True, True, r, agnostic, t0)
                    mode = "agnostic" if agnostic else "classwise"
                    rows.append((sweep, f"r={_fmt(r)},mode={mode}", a, f))

    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("sweep", "setting", "auroc", "fpr_at_95"))
        for sweep, setting, a, f in rows:
            writer.writerow((sweep, setting, f"{a:.6f}", f"{f:.6f}"))
    print(f"wrote {args.out}: {len(rows)} settings on ood_{args.ood}")
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "ingest": _cmd_ingest,
    "train": _cmd_train,
    "score": _cmd_score,
    "eval": _cmd_eval,
    "ablate": _cmd_ablate,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (NodiError, OSError, ValueError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
