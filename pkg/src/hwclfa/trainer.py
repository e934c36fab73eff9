"""Adam training of the adapter stack on one source task, plus checkpoints."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import blobio
from . import tensor as tn
from .adapter import AdapterParams, AdapterStack, init_adapters, sample_loss
from .backbone import frozen_prefix
from .errors import EmptyTask, ManifestMismatch, ShapeMismatch, SingleClassTask


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 1
    epochs: int = 1
    seed: int = 0
    alpha: float = 0.1
    tau: float = 0.07
    slope: float = 0.01
    tapped_layers: tuple = (1, 2, 3, 4)
    pooling: str = "mean"
    aggregation: str = "mean"
    bottleneck: int = 16
    kernel_size: int = 3

    def __post_init__(self):
        self.tapped_layers = tuple(int(l) for l in self.tapped_layers)
        if not self.learning_rate > 0:
            raise ValueError(f"learning rate must be positive, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ValueError(f"batch size must be at least 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be at least 1, got {self.epochs}")

    @classmethod
    def from_dict(cls, d):
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown train config keys: {sorted(extra)}")
        return cls(**d)

    def to_dict(self):
        d = asdict(self)
        d["tapped_layers"] = list(self.tapped_layers)
        return d


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    step: int = 0


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update, in place on each Tensor's data."""
    if len(params) != len(grads):
        raise ShapeMismatch(f"{len(params)} parameters but {len(grads)} gradients")
    if not state.m:
        state.m = [np.zeros(p.shape) for p in params]
        state.v = [np.zeros(p.shape) for p in params]
    state.step += 1
    c1 = 1.0 - beta1**state.step
    c2 = 1.0 - beta2**state.step
    for i, (p, g) in enumerate(zip(params, grads)):
        g = np.asarray(g, dtype=np.float64)
        if g.shape != p.shape or state.m[i].shape != p.shape:
            raise ShapeMismatch(f"parameter {i}: shape {p.shape}, gradient {g.shape}")
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g
        p.data -= lr * (state.m[i] / c1) / (np.sqrt(state.v[i] / c2) + eps)
    return params, state


# ---------------------------------------------------------------------------
# training


@dataclass
class Sample:
    """One image of one subject, kept as its frozen-prefix stream."""

    subject_id: str
    task_id: int
    label: int
    prefix: np.ndarray = field(repr=False)


def encode_samples(backbone, images, task_id, labels, subject_ids=None):
    subject_ids = subject_ids or [str(i) for i in range(len(images))]
    return [
        Sample(sid, int(task_id), int(y), frozen_prefix(backbone, img))
        for sid, img, y in zip(subject_ids, images, labels)
    ]


def new_stack(config, width):
    return init_adapters(config.seed, config.tapped_layers, width, config.bottleneck, config.kernel_size,
                         alpha=config.alpha, slope=config.slope, tau=config.tau,
                         pooling=config.pooling, aggregation=config.aggregation)


@dataclass
class TrainResult:
    stack: AdapterStack
    losses: list
    epoch_means: list


def train(samples, source_task, config, backbone, prototypes):
    """Fit a fresh adapter stack on ``samples`` of ``source_task``.

    ``samples`` is either a list of Sample or a mapping task id -> list.
    ``prototypes`` is the source task's T x 2 (normal, abnormal) matrix.
    Only adapter tensors are ever updated; the backbone is read-only.
    """
    if isinstance(samples, dict):
        samples = samples.get(source_task, [])
    samples = [s for s in samples if s.task_id == source_task]
    if not samples:
        raise EmptyTask(f"no samples for task {source_task}")
    if len({s.label for s in samples}) < 2:
        raise SingleClassTask(f"task {source_task} has only label {samples[0].label}")
    E = np.asarray(getattr(prototypes, "matrix", prototypes), dtype=np.float64)
    if E.shape != (config.bottleneck, 2):
        raise ShapeMismatch(f"prototypes {E.shape} do not match bottleneck {config.bottleneck}")

    stack = new_stack(config, backbone.config.width)
    params = stack.parameters()
    state = AdamState()
    rng = np.random.default_rng([int(config.seed), int(source_task), 0x7A1])
    losses, epoch_means = [], []
    for _ in range(config.epochs):
        order = rng.permutation(len(samples))
        start = len(losses)
        for b in range(0, len(order), config.batch_size):
            batch = [samples[i] for i in order[b : b + config.batch_size]]
            terms = [sample_loss(backbone, stack, E, s.label, prefix=s.prefix) for s in batch]
            loss = terms[0] if len(terms) == 1 else tn.mean_of(terms)
            grads = tn.backward(loss, params)
            adam_step(params, grads, state, config.learning_rate)
            losses.append(float(loss.data))
        epoch_means.append(float(np.mean(losses[start:])))
    return TrainResult(stack, losses, epoch_means)


# ---------------------------------------------------------------------------
# checkpoints

_PARAM_FIELDS = ("W1", "kernels", "Wz", "W2")


def save_checkpoint(stack, manifest=None):
    """Serialize adapter weights (float32) with hyperparameters and metadata."""
    doc = {
        "format": "hwclfa-adapters",
        "version": 1,
        "layers": list(stack.layers),
        "alpha": stack.alpha,
        "slope": stack.slope,
        "tau": stack.tau,
        "pooling": stack.pooling,
        "aggregation": stack.aggregation,
        "meta": dict(stack.extra if manifest is None else manifest),
    }
    return blobio.pack(doc, {name: t.data for name, t in stack.named_parameters()})


def load_checkpoint(data):
    doc, tensors = blobio.unpack(data)
    if doc.get("format") != "hwclfa-adapters":
        raise ManifestMismatch("not an adapter checkpoint")
    layers = tuple(doc["layers"])
    expected = {f"layer{l}.{k}" for i, l in enumerate(layers) for k in _PARAM_FIELDS if k != "Wz" or i}
    if set(tensors) != expected:
        raise ManifestMismatch(f"checkpoint tensors {sorted(tensors)} do not match layers {layers}")
    params = {}
    for l in layers:
        got = [tensors.get(f"layer{l}.{k}") for k in _PARAM_FIELDS]
        params[l] = AdapterParams(
            *(None if a is None else tn.Tensor(a.astype(np.float64), requires_grad=True) for a in got)
        )
    return AdapterStack(layers, params, doc["alpha"], doc["slope"], doc["tau"],
                        doc["pooling"], doc["aggregation"], dict(doc.get("meta", {})))
