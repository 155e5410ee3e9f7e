"""Two-view contrastive training loop (PaCo with a momentum key network, GPaCo
without one), plus the cross-entropy and SupCon baselines."""

from __future__ import annotations

import copy
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from ..contrast import FeatureQueue, class_priors_from_counts, momentum_update
from ..losses import LossConfig, batch_loss
from .data import Dataset, augment_view
from .encoder import EncoderSpec, Network


class TrainingDivergedError(FloatingPointError):
    def __init__(self, step: int, value: float):
        super().__init__(f"non-finite loss {value!r} at step {step}")
        self.step = step


# loss settings a partial "loss" block is merged over
TOY_LOSS_DEFAULTS = {"variant": "gpaco", "alpha": 0.01, "tau": 0.07, "center_rebalance": True,
                     "center_tau": False}


@dataclass
class TrainConfig:
    loss: LossConfig = field(default_factory=lambda: LossConfig(**TOY_LOSS_DEFAULTS))
    epochs: int = 200
    batch_size: int = 32
    lr: float = 0.1
    sgd_momentum: float = 0.9
    weight_decay: float = 5e-4
    key_momentum: float = 0.999
    queue_size: int = 256
    two_views: bool = True
    momentum_encoder: bool | None = None
    aug_noise: float = 1.0
    aug_scale_jitter: float = 0.2
    probe_epochs: int = 100
    probe_lr: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.loss, dict):
            self.loss = LossConfig(**{**TOY_LOSS_DEFAULTS, **self.loss})
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.two_views and self.batch_size < 2:
            raise ValueError("two-view training needs batch_size >= 2")
        if self.queue_size < self.batch_size or self.queue_size % self.batch_size:
            raise ValueError("queue_size must be a positive multiple of batch_size")
        if self.lr <= 0 or not 0 <= self.sgd_momentum < 1 or not 0 <= self.key_momentum <= 1:
            raise ValueError("lr must be positive and momenta lie in [0, 1)")
        if self.loss.variant == "info_nce" and not self.two_views:
            raise ValueError("info_nce needs the second view as its positive")
        if self.momentum_encoder is None:
            self.momentum_encoder = self.loss.variant not in ("gpaco", "cross_entropy")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise KeyError(f"unknown train keys: {', '.join(unknown)}")
        d = dict(d)
        if "loss" in d:
            loss_known = {f.name for f in fields(LossConfig)}
            bad = sorted(set(d["loss"]) - loss_known)
            if bad:
                raise KeyError(f"unknown loss keys: {', '.join(bad)}")
            d["loss"] = LossConfig(**{**TOY_LOSS_DEFAULTS, **d["loss"]})
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def uses_queue(self) -> bool:
        return self.loss.variant != "cross_entropy"


@dataclass
class TrainState:
    params: np.ndarray
    centers: np.ndarray
    key_params: np.ndarray | None
    velocity: np.ndarray
    center_velocity: np.ndarray
    queue: FeatureQueue
    rng: np.random.Generator
    step: int = 0

    def copy(self) -> "TrainState":
        return copy.deepcopy(self)


def init_state(net: Network, n_classes: int, config: TrainConfig) -> TrainState:
    rng = np.random.default_rng(config.seed)
    params = net.init(rng)
    bound = 1.0 / np.sqrt(net.spec.embed_dim)
    centers = rng.uniform(-bound, bound, size=(n_classes, net.spec.embed_dim))
    return TrainState(
        params=params,
        centers=centers,
        key_params=params.copy() if config.momentum_encoder else None,
        velocity=np.zeros_like(params),
        center_velocity=np.zeros_like(centers),
        queue=FeatureQueue(config.queue_size, net.spec.transform_dim),
        rng=rng,
    )


def cosine_lr(lr0: float, t: int, total: int) -> float:
    """0.5 * lr0 * (1 + cos(pi * t / T))."""
    return 0.5 * lr0 * (1.0 + math.cos(math.pi * t / total))


@dataclass
class StepInputs:
    """Everything a step's loss depends on besides the parameters."""

    v1: np.ndarray
    v2: np.ndarray | None
    labels: np.ndarray
    queue_emb: np.ndarray
    queue_lab: np.ndarray


def make_step_inputs(state: TrainState, x, y, config: TrainConfig) -> StepInputs:
    v1 = augment_view(x, config.aug_noise, config.aug_scale_jitter, state.rng)
    v2 = augment_view(x, config.aug_noise, config.aug_scale_jitter, state.rng) if config.two_views else None
    qe, ql = state.queue.snapshot()
    return StepInputs(v1, v2, np.asarray(y), qe, ql)


def step_loss(net: Network, state: TrainState, inputs: StepInputs, config: TrainConfig,
              priors=None, with_grad: bool = True):
    """Loss of one batch at the current parameters.

    Returns (BatchLoss, parameter gradient or None, embeddings to enqueue).
    """
    lc = config.loss
    normalize = lc.normalize_samples
    B = inputs.labels.size
    f1, g1, cache1 = net.encode(state.params, inputs.v1, normalize)

    cache2 = None
    if inputs.v2 is None:
        g2 = np.zeros((0, g1.shape[1]))
        enqueue = g1.copy()
    elif config.momentum_encoder:
        _, g2, _ = net.encode(state.key_params, inputs.v2, normalize)
        enqueue = g2
    else:
        _, g2, cache2 = net.encode(state.params, inputs.v2, normalize)
        enqueue = g2.copy()

    Qn = inputs.queue_lab.size
    keys = np.concatenate([inputs.queue_emb.reshape(Qn, g1.shape[1]), g1, g2])
    key_labels = np.concatenate([inputs.queue_lab, inputs.labels, inputs.labels[:g2.shape[0]]])
    M = key_labels.size
    exclude = np.zeros((B, M), dtype=bool)
    exclude[np.arange(B), Qn + np.arange(B)] = True
    positive = None
    if lc.variant == "info_nce":
        positive = np.zeros((B, M), dtype=bool)
        positive[np.arange(B), Qn + B + np.arange(B)] = True

    res = batch_loss(lc, g1, f1, keys, key_labels, inputs.labels, exclude, state.centers,
                     priors=priors, positive=positive)
    if not with_grad:
        return res, None, enqueue

    dG1 = res.grad_g + res.grad_keys[Qn:Qn + B]
    needs_g = lc.variant != "cross_entropy"
    grad = net.backward(state.params, cache1, res.grad_f, dG1 if needs_g else None)
    if cache2 is not None and needs_g:
        grad += net.backward(state.params, cache2, None, res.grad_keys[Qn + B:])
    return res, grad, enqueue


def train_step(net: Network, state: TrainState, x, y, config: TrainConfig, total_steps: int,
               priors=None, inputs: StepInputs | None = None):
    """One SGD step in place; returns (state, stats)."""
    if inputs is None:
        inputs = make_step_inputs(state, x, y, config)
    res, grad, enqueue = step_loss(net, state, inputs, config, priors)
    if not np.isfinite(res.value):
        raise TrainingDivergedError(state.step, res.value)

    lr = cosine_lr(config.lr, state.step, total_steps)
    wd, mu = config.weight_decay, config.sgd_momentum
    state.velocity = mu * state.velocity + grad + wd * state.params
    state.params = state.params - lr * state.velocity
    if not config.loss.two_stage:
        state.center_velocity = mu * state.center_velocity + res.grad_centers + wd * state.centers
        state.centers = state.centers - lr * state.center_velocity

    if not (np.all(np.isfinite(state.params)) and np.all(np.isfinite(state.centers))):
        raise TrainingDivergedError(state.step, float("nan"))
    if state.key_params is not None:
        state.key_params = momentum_update(state.params, state.key_params, config.key_momentum)
    if config.uses_queue:
        state.queue.push(enqueue, inputs.labels)
    state.step += 1
    return state, {"loss": res.value, "lr": lr, "step": state.step}


def batches(n: int, batch_size: int, rng: np.random.Generator):
    """Shuffled full batches; the remainder that does not fill a batch is dropped."""
    order = rng.permutation(n)
    for k in range(n // batch_size):
        yield order[k * batch_size:(k + 1) * batch_size]


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    acc_all: float
    acc_many: float
    acc_medium: float
    acc_few: float


@dataclass
class RunResult:
    state: TrainState
    history: list
    final: dict

    @property
    def initial_loss(self) -> float:
        """Mean training loss of the first epoch. The very first step sees an
        empty queue and hence a smaller contrast set, so it is not comparable
        with later losses."""
        return self.history[0].loss


def train_priors(train: Dataset):
    return class_priors_from_counts(train.counts)


def fit(train: Dataset, test: Dataset, config: TrainConfig, enc: EncoderSpec | None = None,
        on_epoch=None) -> tuple[Network, RunResult]:
    """Full run: contrastive (or CE) training, then a linear probe for the
    two-stage losses. Each epoch is evaluated on ``test``."""
    from .evaluate import evaluate, linear_probe

    if enc is None:
        enc = EncoderSpec(input_dim=train.x.shape[1])
    net = Network(enc)
    state = init_state(net, train.n_classes, config)
    priors = train_priors(train) if config.loss.rebalanced else None
    steps_per_epoch = len(train) // config.batch_size
    if steps_per_epoch < 1:
        raise ValueError("training set smaller than one batch")
    total = steps_per_epoch * config.epochs
    history = []
    for epoch in range(config.epochs):
        losses = []
        for idx in batches(len(train), config.batch_size, state.rng):
            _, stats = train_step(net, state, train.x[idx], train.y[idx], config, total, priors)
            losses.append(stats["loss"])
        m = evaluate(net, state, test, train.counts)
        rec = EpochRecord(epoch + 1, float(np.mean(losses)), m.acc_all, m.acc_many, m.acc_medium, m.acc_few)
        history.append(rec)
        if on_epoch is not None:
            on_epoch(rec)
    if config.loss.two_stage:
        linear_probe(net, state, train, config)
    final = evaluate(net, state, test, train.counts)
    return net, RunResult(state, history, asdict(final))
