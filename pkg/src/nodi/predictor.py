"""Trainable noise predictor: residual MLP with timestep and class tokens.

The network regresses the injected noise from a perturbed feature vector.
Conditioning is additive at the input: a timestep embedding row and a class
embedding row (one extra row serves as the class-agnostic token).  Gradients
are exact, computed by hand, and the optimizer is plain SGD under a cosine
learning-rate schedule.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .containers import read_checkpoint_file, write_checkpoint_file
from .errors import FormatError, TrainingDiverged
from .feature_store import NormalizedFeatureSet
from .schedule import DiffusionSchedule
from .stable_point import StablePointConfig, stable_noise

INIT_MODES = ("symmetric-small", "uniform-0-1")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 600
    lr_high: float = 0.01
    lr_low: float = 0.0001
    batch_size: int = 256
    seed: int = 0
    init_mode: str = "symmetric-small"

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not (self.lr_high >= self.lr_low > 0.0):
            raise ValueError(
                f"need lr_high >= lr_low > 0, got {self.lr_high} and {self.lr_low}"
            )
        if self.init_mode not in INIT_MODES:
            raise ValueError(f"init_mode must be one of {INIT_MODES}, got {self.init_mode!r}")


def cosine_lr(step: int, total_steps: int, lr_high: float, lr_low: float) -> float:
    """Cosine interpolation from lr_high at step 0 to lr_low at the last step."""
    if lr_high == lr_low or total_steps <= 1:
        return lr_high
    frac = min(step, total_steps - 1) / (total_steps - 1)
    return lr_low + 0.5 * (lr_high - lr_low) * (1.0 + math.cos(math.pi * frac))


class NoisePredictor:
    """Residual MLP over D inputs, width H, R blocks, additive tokens."""

    def __init__(
        self,
        dim: int,
        num_classes: int,
        timesteps: int,
        hidden: int = 256,
        blocks: int = 3,
        init_mode: str = "symmetric-small",
        seed: int = 0,
        rng: np.random.Generator | None = None,
    ) -> None:
        if min(dim, num_classes, timesteps, hidden, blocks) < 1:
            raise ValueError("dim, num_classes, timesteps, hidden, blocks must be >= 1")
        if init_mode not in INIT_MODES:
            raise ValueError(f"init_mode must be one of {INIT_MODES}, got {init_mode!r}")
        self.dim = dim
        self.num_classes = num_classes
        self.timesteps = timesteps
        self.hidden = hidden
        self.blocks = blocks
        self.history: list[float] = []

        shapes = [("win", (dim, hidden)), ("bin", (hidden,)),
                  ("temb", (timesteps, hidden)), ("cemb", (num_classes + 1, hidden))]
        for k in range(blocks):
            shapes += [(f"w1_{k}", (hidden, hidden)), (f"b1_{k}", (hidden,)),
                       (f"w2_{k}", (hidden, hidden)), (f"b2_{k}", (hidden,))]
        shapes += [("wout", (hidden, dim)), ("bout", (dim,))]
        self.param_order = [name for name, _ in shapes]
        self._shapes = dict(shapes)

        if rng is None:
            rng = np.random.default_rng(seed)
        self.params: dict[str, np.ndarray] = {}
        for name, shape in shapes:
            if init_mode == "uniform-0-1":
                self.params[name] = rng.uniform(0.0, 1.0, size=shape)
            elif name.startswith("b"):
                self.params[name] = np.zeros(shape)
            else:
                fan_in = dim if name == "win" else hidden
                bound = math.sqrt(1.0 / fan_in)
                self.params[name] = rng.uniform(-bound, bound, size=shape)

        self._slices: dict[str, slice] = {}
        offset = 0
        for name, shape in shapes:
            size = int(np.prod(shape))
            self._slices[name] = slice(offset, offset + size)
            offset += size
        self.n_params = offset

    # -- parameter vector view ------------------------------------------

    def flat(self) -> np.ndarray:
        return np.concatenate([self.params[n].ravel() for n in self.param_order])

    def load_flat(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (self.n_params,):
            raise FormatError(
                f"expected {self.n_params} parameters, got shape {flat.shape}"
            )
        for name in self.param_order:
            self.params[name] = flat[self._slices[name]].reshape(self._shapes[name]).copy()

    def sgd_step(self, flat_grads: np.ndarray, lr: float) -> None:
        for name in self.param_order:
            chunk = flat_grads[self._slices[name]].reshape(self._shapes[name])
            self.params[name] -= lr * chunk

    # -- forward --------------------------------------------------------

    def _check_indices(self, tt: np.ndarray, cc: np.ndarray) -> None:
        if np.any(tt < 0) or np.any(tt >= self.timesteps):
            raise IndexError(f"timestep out of [0, {self.timesteps})")
        if np.any(cc < 0) or np.any(cc > self.num_classes):
            raise IndexError(
                f"class token out of [0, {self.num_classes}] (last slot is agnostic)"
            )

    def forward_batch(self, x, tt, cc, want_cache: bool = False):
        x = np.asarray(x, dtype=np.float64)
        tt = np.asarray(tt, dtype=np.int64)
        cc = np.asarray(cc, dtype=np.int64)
        self._check_indices(tt, cc)
        p = self.params
        h = x @ p["win"] + p["bin"] + p["temb"][tt] + p["cemb"][cc]
        hs, acts = [h], []
        for k in range(self.blocks):
            a = np.tanh(h @ p[f"w1_{k}"] + p[f"b1_{k}"])
            h = h + a @ p[f"w2_{k}"] + p[f"b2_{k}"]
            acts.append(a)
            hs.append(h)
        out = h @ p["wout"] + p["bout"]
        if want_cache:
            return out, (x, tt, cc, hs, acts)
        return out

    def predict(self, y, s: int, c: int) -> np.ndarray:
        y = np.asarray(y, dtype=np.float64)
        return self.forward_batch(y[None, :], np.array([s]), np.array([c]))[0]


def forward(model: NoisePredictor, y, t: int, c: int) -> np.ndarray:
    """Predict the noise for one vector at timestep t under class token c."""
    return model.predict(y, t, c)


def loss_and_grads(model, x, tt, cc, targets, need_grads: bool = True):
    """Mean over the batch of the squared noise residual, with exact
    parameter gradients in flat() order."""
    targets = np.asarray(targets, dtype=np.float64)
    out, cache = model.forward_batch(x, tt, cc, want_cache=True)
    diff = out - targets
    batch = diff.shape[0]
    loss = float(np.sum(diff * diff) / batch)
    if not need_grads:
        return loss, None

    x, tt, cc, hs, acts = cache
    p = model.params
    grads = {name: None for name in model.param_order}
    d_out = (2.0 / batch) * diff
    grads["wout"] = hs[-1].T @ d_out
    grads["bout"] = d_out.sum(axis=0)
    dh = d_out @ p["wout"].T
    for k in range(model.blocks - 1, -1, -1):
        a = acts[k]
        grads[f"w2_{k}"] = a.T @ dh
        grads[f"b2_{k}"] = dh.sum(axis=0)
        dz = (dh @ p[f"w2_{k}"].T) * (1.0 - a * a)
        grads[f"w1_{k}"] = hs[k].T @ dz
        grads[f"b1_{k}"] = dz.sum(axis=0)
        dh = dh + dz @ p[f"w1_{k}"].T
    grads["win"] = x.T @ dh
    grads["bin"] = dh.sum(axis=0)
    dtemb = np.zeros_like(p["temb"])
    np.add.at(dtemb, tt, dh)
    grads["temb"] = dtemb
    dcemb = np.zeros_like(p["cemb"])
    np.add.at(dcemb, cc, dh)
    grads["cemb"] = dcemb
    flat = np.concatenate([grads[n].ravel() for n in model.param_order])
    return loss, flat


def train(
    store: NormalizedFeatureSet,
    sched: DiffusionSchedule,
    cfg: TrainConfig | None = None,
    hidden: int = 256,
    blocks: int = 3,
    agnostic: bool = False,
) -> NoisePredictor:
    """Fit the predictor to the reference store by noise regression.

    Each step samples reference points with replacement, perturbs them at
    uniformly drawn timesteps, and regresses onto the injected noise.
    Raises TrainingDiverged the moment the loss or a parameter leaves the
    finite range.
    """
    cfg = cfg if cfg is not None else TrainConfig()
    rng = np.random.default_rng(cfg.seed)
    model = NoisePredictor(
        dim=store.dim,
        num_classes=store.num_classes,
        timesteps=sched.timesteps,
        hidden=hidden,
        blocks=blocks,
        init_mode=cfg.init_mode,
        rng=rng,
    )
    x0_all = store.vectors
    labels = store.labels
    n = x0_all.shape[0]
    abar = sched.alpha_bar
    steps_per_epoch = max(1, math.ceil(n / cfg.batch_size))
    total_steps = cfg.epochs * steps_per_epoch

    step = 0
    for epoch in range(cfg.epochs):
        epoch_losses = []
        for _ in range(steps_per_epoch):
            idx = rng.integers(0, n, size=cfg.batch_size)
            tt = rng.integers(0, sched.timesteps, size=cfg.batch_size)
            eps = rng.normal(size=(cfg.batch_size, store.dim))
            a = abar[tt][:, None]
            xt = np.sqrt(a) * x0_all[idx] + np.sqrt(1.0 - a) * eps
            cc = np.full(cfg.batch_size, store.num_classes) if agnostic else labels[idx]
            loss, grads = loss_and_grads(model, xt, tt, cc, eps)
            if not np.isfinite(loss):
                raise TrainingDiverged(epoch=epoch, loss=loss)
            model.sgd_step(grads, cosine_lr(step, total_steps, cfg.lr_high, cfg.lr_low))
            step += 1
            epoch_losses.append(loss)
        if not all(np.all(np.isfinite(model.params[p])) for p in model.param_order):
            raise TrainingDiverged(epoch=epoch, loss=epoch_losses[-1])
        model.history.append(float(np.mean(epoch_losses)))
    return model


def _apply(model, x, tt, cc) -> np.ndarray:
    fb = getattr(model, "forward_batch", None)
    if callable(fb):
        return fb(x, tt, cc)
    return np.stack(
        [model.predict(x[i], int(tt[i]), int(cc[i])) for i in range(x.shape[0])]
    )


def loss_eval(
    model,
    store: NormalizedFeatureSet,
    sched: DiffusionSchedule,
    seed: int = 0,
    n_samples: int = 1000,
) -> float:
    """Fixed-seed Monte-Carlo estimate of the noise-regression loss."""
    if n_samples < 1:
        raise ValueError(f"n_samples must be >= 1, got {n_samples}")
    rng = np.random.default_rng(seed)
    n = store.vectors.shape[0]
    idx = rng.integers(0, n, size=n_samples)
    tt = rng.integers(0, sched.timesteps, size=n_samples)
    eps = rng.normal(size=(n_samples, store.dim))
    a = sched.alpha_bar[tt][:, None]
    xt = np.sqrt(a) * store.vectors[idx] + np.sqrt(1.0 - a) * eps
    cc = store.labels[idx]
    total = 0.0
    for start in range(0, n_samples, 1024):
        stop = min(start + 1024, n_samples)
        pred = _apply(model, xt[start:stop], tt[start:stop], cc[start:stop])
        d = pred - eps[start:stop]
        total += float(np.sum(d * d))
    return total / n_samples


class StableWrapper:
    """Exposes the closed-form noise estimate through the predictor protocol.

    The class token equal to num_classes selects the pooled store, matching
    the predictor's agnostic slot.
    """

    def __init__(
        self,
        store: NormalizedFeatureSet,
        sched: DiffusionSchedule,
        config: StablePointConfig | None = None,
    ) -> None:
        self.store = store
        self.sched = sched
        self.config = config if config is not None else StablePointConfig()
        self._points: dict[int, np.ndarray] = {}

    def _class_points(self, c: int) -> np.ndarray:
        if c not in self._points:
            if c == self.store.num_classes:
                self._points[c] = self.store.pooled()
            else:
                self._points[c] = self.store.class_points(c)
        return self._points[c]

    def predict(self, y, s: int, c: int) -> np.ndarray:
        abar = float(self.sched.alpha_bar[s])
        return stable_noise(y, self._class_points(int(c)), abar, self.config)


class PredictorBackend:
    """Adapter so the scorer can drive a trained model per class."""

    default_orientation = "paper"

    def __init__(self, model: NoisePredictor, r: float) -> None:
        if not (np.isfinite(r) and r > 0):
            raise ValueError(f"r must be positive and finite, got {r}")
        self.model = model
        self.r = float(r)

    @property
    def num_classes(self) -> int:
        return self.model.num_classes

    @property
    def dim(self) -> int:
        return self.model.dim

    def noise_fn(self, class_index: int | None, s: int, abar: float):
        token = self.model.num_classes if class_index is None else class_index
        model = self.model
        return lambda v: model.predict(v, s, token)


def save_predictor(model: NoisePredictor, path) -> None:
    hyper = {
        "R": model.blocks,
        "H": model.hidden,
        "D": model.dim,
        "T": model.timesteps,
        "C": model.num_classes,
    }
    write_checkpoint_file(path, hyper, model.flat())


def load_predictor(path) -> NoisePredictor:
    hyper, flat = read_checkpoint_file(path)
    for key in ("R", "H", "D", "T", "C"):
        if key not in hyper:
            raise FormatError(f"{path}: checkpoint hyper is missing {key!r}")
    model = NoisePredictor(
        dim=hyper["D"],
        num_classes=hyper["C"],
        timesteps=hyper["T"],
        hidden=hyper["H"],
        blocks=hyper["R"],
    )
    if flat.size != model.n_params:
        raise FormatError(
            f"{path}: checkpoint holds {flat.size} parameters, model needs {model.n_params}"
        )
    model.load_flat(flat)
    return model
