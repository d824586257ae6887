"""Detection metrics over scalar scores, higher score = more OOD.

AUROC is the probability that a random OOD score outranks a random ID score,
ties counted half.  It is computed from midranks in O(n log n); the suite
checks it against an explicit quadratic pair count.  FPR at a TPR target
flags everything at or above a threshold, with the threshold placed at the
smallest score that still captures the target fraction of OOD (the k-th
largest OOD score, k = ceil(target * n)).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from nodi.errors import MetricError


def _validate(scores, name: str) -> np.ndarray:
    arr = np.asarray(scores, dtype=np.float64).ravel()
    if arr.size == 0:
        raise MetricError(f"{name} score list is empty")
    if not np.all(np.isfinite(arr)):
        raise MetricError(f"{name} scores contain non-finite values")
    return arr


def auroc(id_scores, ood_scores) -> float:
    """P(ood > id) + P(ood == id) / 2 via midranks."""
    ids = _validate(id_scores, "ID")
    oods = _validate(ood_scores, "OOD")
    pooled = np.concatenate([ids, oods])
    _, inverse, counts = np.unique(pooled, return_inverse=True, return_counts=True)
    # 1-based midrank of each tie group: group end position minus half the group
    ends = np.cumsum(counts)
    midranks = ends - (counts - 1) / 2.0
    ood_rank_sum = midranks[inverse[ids.size :]].sum()
    n_ood = oods.size
    u = ood_rank_sum - n_ood * (n_ood + 1) / 2.0
    return float(u / (ids.size * n_ood))


def fpr_at_tpr(id_scores, ood_scores, tpr_target: float = 0.95) -> float:
    """Fraction of ID flagged when the threshold captures tpr_target of OOD.

    The threshold is the k-th largest OOD score with k = ceil(target * n),
    compared with >= on both sides, so the achieved TPR is always >= target.
    """
    ids = _validate(id_scores, "ID")
    oods = _validate(ood_scores, "OOD")
    if not 0.0 < tpr_target <= 1.0:
        raise MetricError(f"tpr_target must lie in (0, 1], got {tpr_target}")
    # the epsilon guards against float fuzz when target * n is an exact integer
    k = math.ceil(tpr_target * oods.size - 1e-9)
    gamma = np.sort(oods)[oods.size - k]
    return float(np.mean(ids >= gamma))


@dataclass(frozen=True)
class MetricsReport:
    auroc: float
    fpr_at_tpr: float
    tpr_target: float
    n_id: int
    n_ood: int

    def as_dict(self) -> dict:
        return {
            "auroc": self.auroc,
            "fpr_at_tpr": self.fpr_at_tpr,
            "tpr_target": self.tpr_target,
            "n_id": self.n_id,
            "n_ood": self.n_ood,
            "score_convention": "higher_is_ood",
        }


def evaluate(id_scores, ood_scores, tpr_target: float = 0.95) -> MetricsReport:
    ids = _validate(id_scores, "ID")
    oods = _validate(ood_scores, "OOD")
    return MetricsReport(
        auroc=auroc(ids, oods),
        fpr_at_tpr=fpr_at_tpr(ids, oods, tpr_target),
        tpr_target=tpr_target,
        n_id=ids.size,
        n_ood=oods.size,
    )
