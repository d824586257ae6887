"""Score queries against per-class reference geometry.

A query is encoded (optionally), reduced to its direction, and the scale
search places it back on a plausible radius for each class.  The score is
the norm of the noise recovered at that radius, minimized over classes.
Higher scores mean further from every class.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

import numpy as np

from .bias_removal import CompletedHead, encode
from .errors import DegenerateFeature, FormatError, StepError
from .feature_store import FeatureSet, NormalizedFeatureSet
from .scale_search import ScaleSearchConfig, find_scale
from .schedule import DiffusionSchedule
from .stable_point import StablePointConfig, stable_noise

SCORE_CONVENTION = "higher_is_ood"


@dataclass(frozen=True)
class ScorerConfig:
    """How to score: which step, which classes, what to keep."""

    score_t: int = 3
    agnostic: bool = False
    keep_per_class: bool = False
    search: ScaleSearchConfig | None = None

    def __post_init__(self) -> None:
        if self.score_t < 1:
            raise StepError(f"score_t must be >= 1, got {self.score_t}")


@dataclass(frozen=True)
class ScoreRecord:
    sample_id: int
    score: float
    argmin_class: int
    r_of_y: float
    scale_err: float
    no_bracket_classes: tuple[int, ...] = ()
    per_class_norms: tuple[float, ...] | None = None


class StableBackend:
    """Noise from weighted reference points, one bound function per class."""

    default_orientation = "auto"

    def __init__(
        self, store: NormalizedFeatureSet, stable_config: StablePointConfig | None = None
    ) -> None:
        self.store = store
        self.config = stable_config if stable_config is not None else StablePointConfig()

    @property
    def num_classes(self) -> int:
        return self.store.num_classes

    @property
    def r(self) -> float:
        return self.store.r

    @property
    def dim(self) -> int:
        return self.store.dim

    def noise_fn(self, class_index: int | None, s: int, abar: float):
        if class_index is None:
            points = self.store.pooled()
        else:
            points = self.store.class_points(class_index)
        cfg = self.config
        return lambda v: stable_noise(v, points, abar, cfg)


def _resolve_search(backend, config: ScorerConfig) -> ScaleSearchConfig:
    if config.search is not None:
        return config.search
    return ScaleSearchConfig(orientation=backend.default_orientation)


def _class_plan(backend, config: ScorerConfig) -> list[int | None]:
    if config.agnostic:
        return [None]
    return list(range(backend.num_classes))


def score_sample(
    y,
    sample_id: int,
    backend,
    schedule: DiffusionSchedule,
    config: ScorerConfig | None = None,
    completed: CompletedHead | None = None,
) -> ScoreRecord:
    """Score a single raw feature vector."""
    config = config if config is not None else ScorerConfig()
    if config.score_t > schedule.timesteps:
        raise StepError(
            f"score_t {config.score_t} exceeds the {schedule.timesteps}-step schedule"
        )
    s = config.score_t - 1
    abar = float(schedule.alpha_bar[s])
    search = _resolve_search(backend, config)

    y = np.asarray(y, dtype=np.float64)
    if completed is not None:
        y = encode(completed, y)
    norm = float(np.linalg.norm(y))
    if norm == 0.0 or not np.isfinite(norm):
        raise DegenerateFeature(f"query {sample_id} has norm {norm}")
    yhat = y / norm

    best = None
    norms: list[float] = []
    flagged: list[int] = []
    for c in _class_plan(backend, config):
        fn = backend.noise_fn(c, s, abar)
        res = find_scale(yhat, fn, backend.r, abar, search)
        value = float(np.linalg.norm(fn(res.scale * yhat)))
        norms.append(value)
        label = -1 if c is None else c
        if res.no_bracket:
            flagged.append(label)
        if best is None or value < best[0]:
            best = (value, label, res.scale, res.err)
    assert best is not None
    return ScoreRecord(
        sample_id=sample_id,
        score=best[0],
        argmin_class=best[1],
        r_of_y=best[2],
        scale_err=best[3],
        no_bracket_classes=tuple(flagged),
        per_class_norms=tuple(norms) if config.keep_per_class else None,
    )


def score_set(
    features,
    backend,
    schedule: DiffusionSchedule,
    config: ScorerConfig | None = None,
    completed: CompletedHead | None = None,
    failures: list | None = None,
) -> list[ScoreRecord]:
    """Score each row of a feature array or FeatureSet, in order.

    With a `failures` list, per-sample errors are appended as
    (row index, exception) and scoring continues; without one, the first
    bad row raises.
    """
    if isinstance(features, FeatureSet):
        vectors = features.vectors
    else:
        vectors = np.asarray(features, dtype=np.float64)
    if vectors.ndim != 2:
        raise DegenerateFeature(f"expected a 2-D batch, got shape {vectors.shape}")
    records = []
    for i in range(vectors.shape[0]):
        try:
            records.append(
                score_sample(vectors[i], i, backend, schedule, config, completed)
            )
        except Exception as exc:
            if failures is None:
                raise
            failures.append((i, exc))
    return records


def write_scores(path, records, meta: dict | None = None) -> None:
    """One metadata line, then one JSON object per record."""
    head = {"format": "nodi-scores", "score_convention": SCORE_CONVENTION}
    if meta:
        head.update(meta)
    lines = [json.dumps(head, sort_keys=True, separators=(",", ":"))]
    for rec in records:
        row = dataclasses.asdict(rec)
        row["no_bracket_classes"] = list(rec.no_bracket_classes)
        if rec.per_class_norms is None:
            del row["per_class_norms"]
        else:
            row["per_class_norms"] = list(rec.per_class_norms)
        lines.append(json.dumps(row, sort_keys=True, separators=(",", ":")))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_scores(path) -> tuple[list[ScoreRecord], dict]:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().splitlines() if ln]
    if not lines:
        raise FormatError("empty score file", offset=0)
    meta = json.loads(lines[0])
    if meta.get("format") != "nodi-scores":
        raise FormatError("missing nodi-scores metadata line", offset=0)
    records = []
    for ln in lines[1:]:
        row = json.loads(ln)
        records.append(
            ScoreRecord(
                sample_id=row["sample_id"],
                score=row["score"],
                argmin_class=row["argmin_class"],
                r_of_y=row["r_of_y"],
                scale_err=row["scale_err"],
                no_bracket_classes=tuple(row.get("no_bracket_classes", ())),
                per_class_norms=tuple(row["per_class_norms"])
                if "per_class_norms" in row
                else None,
            )
        )
    return records, meta
