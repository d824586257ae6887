#!/usr/bin/env python3
"""Trace trained-backend quality against its training budget.

Scores the default benchmark with the closed-form backend once, then trains
nets across an epoch x width grid and reports where the trained scores meet,
then overtake, the closed-form reference.  Small synthetic manifolds are easy
enough that a fully converged net out-resolves the closed-form operating
point, so matched comparisons want a matched budget."""

import argparse

from nodi.bias_removal import complete_head, encode
from nodi.feature_store import FeatureSet, default_radius, normalize
from nodi.metrics import evaluate
from nodi.predictor import PredictorBackend, TrainConfig, train
from nodi.scale_search import ScaleSearchConfig
from nodi.schedule import linear_schedule
from nodi.scorer import ScorerConfig, StableBackend, score_set
from nodi.synth import SynthSpec, generate


def aurocs(data, backend, sched, cfg, comp):
    scores = {}
    for split in ("id_test", "ood_near", "ood_far"):
        recs = score_set(getattr(data, split).vectors, backend, sched, cfg, completed=comp)
        scores[split] = [r.score for r in recs]
    return (evaluate(scores["id_test"], scores["ood_far"]).auroc,
            evaluate(scores["id_test"], scores["ood_near"]).auroc)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--epochs", default="100,200,300,400")
    ap.add_argument("--hidden", default="64,128,256")
    args = ap.parse_args()

    data = generate(SynthSpec(seed=args.seed))
    comp = complete_head(data.head)
    r = default_radius(data.id_train.dim, data.id_train.num_classes)
    store = normalize(
        FeatureSet(vectors=encode(comp, data.id_train.vectors),
                   labels=data.id_train.labels,
                   num_classes=data.id_train.num_classes),
        r=r, split_tag="train", bias_removed=True,
    )
    sched = linear_schedule(10)

    far0, near0 = aurocs(data, StableBackend(store), sched, ScorerConfig(), comp)
    print(f"closed-form reference: far={far0:.4f} near={near0:.4f}\n")
    print(f"{'epochs':>7} {'hidden':>7} {'far':>8} {'near':>8} {'near gap':>9}")

    cfg = ScorerConfig(search=ScaleSearchConfig(orientation="auto"))
    for h in (int(x) for x in args.hidden.split(",")):
        for ep in (int(x) for x in args.epochs.split(",")):
            model = train(store, sched, TrainConfig(epochs=ep), hidden=h, blocks=3)
            far, near = aurocs(data, PredictorBackend(model, r=r), sched, cfg, comp)
            print(f"{ep:>7} {h:>7} {far:>8.4f} {near:>8.4f} {near - near0:>+9.4f}")


if __name__ == "__main__":
    main()
