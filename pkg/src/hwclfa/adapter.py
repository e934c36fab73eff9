"""Cross-layer fusion adapters, prototype matching, pooling and the detection loss."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import tensor as tn
from .errors import EmptyLayerList, ShapeMismatch, UnknownMode


@dataclass
class AdapterParams:
    """Trainable weights of one adapter: W1 (C x T), kernels (T x k), Wz (T x T), W2 (T x C).

    ``Wz`` is None for the first tapped layer, which has no incoming fused
    descriptor.
    """

    W1: tn.Tensor
    kernels: tn.Tensor
    Wz: tn.Tensor | None
    W2: tn.Tensor

    def named(self):
        out = {"W1": self.W1, "kernels": self.kernels}
        if self.Wz is not None:
            out["Wz"] = self.Wz
        out["W2"] = self.W2
        return out


@dataclass
class AdapterStack:
    layers: tuple
    params: dict
    alpha: float = 0.1
    slope: float = 0.01
    tau: float = 0.07
    pooling: str = "mean"
    aggregation: str = "mean"
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")

    def named_parameters(self):
        """Ordered ``(name, Tensor)`` pairs, e.g. ``layer2.Wz``."""
        return [(f"layer{l}.{k}", t) for l in self.layers for k, t in self.params[l].named().items()]

    def parameters(self):
        return [t for _, t in self.named_parameters()]

    @property
    def width(self):
        return self.params[self.layers[0]].W1.shape[0]

    @property
    def bottleneck(self):
        return self.params[self.layers[0]].W1.shape[1]

    @property
    def kernel_size(self):
        return self.params[self.layers[0]].kernels.shape[1]

    def copy(self):
        params = {}
        for l, p in self.params.items():
            params[l] = AdapterParams(
                *(None if t is None else tn.Tensor(t.data.copy(), requires_grad=True)
                  for t in (p.W1, p.kernels, p.Wz, p.W2))
            )
        return AdapterStack(tuple(self.layers), params, self.alpha, self.slope, self.tau,
                            self.pooling, self.aggregation, dict(self.extra))


def init_adapters(seed, layers, width, bottleneck, kernel_size=3, *, alpha=0.1, slope=0.01,
                  tau=0.07, pooling="mean", aggregation="mean"):
    """W1, Wz ~ U(+-1/sqrt(fan_in)); kernels = identity tap + N(0, 0.01); W2 = 0."""
    if kernel_size % 2 == 0:
        from .errors import EvenKernel

        raise EvenKernel(f"kernel size must be odd, got {kernel_size}")
    rng = np.random.default_rng([int(seed), 0xADA])
    C, T, k = width, bottleneck, kernel_size
    params = {}
    for i, l in enumerate(layers):
        ident = np.zeros((T, k))
        ident[:, k // 2] = 1.0
        params[l] = AdapterParams(
            W1=tn.Tensor(rng.uniform(-1, 1, (C, T)) / np.sqrt(C), requires_grad=True),
            kernels=tn.Tensor(ident + 0.01 * rng.standard_normal((T, k)), requires_grad=True),
            Wz=None if i == 0 else tn.Tensor(rng.uniform(-1, 1, (T, T)) / np.sqrt(T), requires_grad=True),
            W2=tn.Tensor(np.zeros((T, C)), requires_grad=True),
        )
    return AdapterStack(tuple(layers), params, alpha, slope, tau, pooling, aggregation)


class AdapterOutput(NamedTuple):
    X_out: tn.Tensor
    M: tn.Tensor
    Z: tn.Tensor
    H: tn.Tensor
    M_prime: tn.Tensor
    Y: tn.Tensor


def adapter_forward(X, Z_prev, params, alpha=0.1, slope=0.01):
    """One fusion adapter.

    H = X W1; M' = phi(H + dwconv(H)); M = M' + Z_prev Wz; Y = phi(M W2);
    X_out = (1 - alpha) X + alpha Y. The fused descriptor Z equals M.
    """
    X = tn.as_tensor(X)
    if (Z_prev is None) != (params.Wz is None):
        raise ShapeMismatch("Z_prev must be given exactly when the adapter has a fusion weight")
    if X.shape[1] != params.W1.shape[0]:
        raise ShapeMismatch(f"stream width {X.shape[1]} != adapter width {params.W1.shape[0]}")
    H = tn.matmul(X, params.W1)
    M_prime = tn.leaky_relu(tn.add(H, tn.dwconv1d(H, params.kernels)), slope)
    if Z_prev is None:
        M = M_prime
    else:
        if tn.as_tensor(Z_prev).shape != M_prime.shape:
            raise ShapeMismatch(f"Z_prev {tn.as_tensor(Z_prev).shape} != {M_prime.shape}")
        M = tn.add(M_prime, tn.matmul(Z_prev, params.Wz))
    Y = tn.leaky_relu(tn.matmul(M, params.W2), slope)
    X_out = tn.add(tn.scale(X, 1.0 - alpha), tn.scale(Y, alpha))
    return AdapterOutput(X_out, M, M, H, M_prime, Y)


def match_prototypes(M, E, tau=0.07):
    """Per-token (normal, abnormal) probabilities: softmax(norm(M) E / tau) over 2 classes."""
    M, E = tn.as_tensor(M), tn.as_tensor(E)
    if E.data.ndim != 2 or E.shape[1] != 2 or M.shape[1] != E.shape[0]:
        raise ShapeMismatch(f"descriptors {M.shape} vs prototypes {E.shape}")
    logits = tn.scale(tn.matmul(tn.l2_normalize(M, axis=1), E), 1.0 / tau)
    return tn.softmax(logits, axis=1)


def pool_abnormal(A, mode="mean"):
    """Pool the abnormal column over patch tokens (row 0, the class token, excluded)."""
    A = tn.as_tensor(A)
    patches = tn.getitem(A, (slice(1, None), 1))
    if mode == "mean":
        return tn.mean_all(patches)
    if mode == "max":
        return tn.getitem(patches, int(np.argmax(patches.data)))
    raise UnknownMode(f"pooling mode must be 'mean' or 'max', got {mode!r}")


def detection_loss(p_per_layer, y, eps=1e-7):
    """Mean BCE over layers."""
    if not p_per_layer:
        raise EmptyLayerList("no layer probabilities")
    return tn.mean_of([tn.bce(p, y, eps) for p in p_per_layer])


def image_score(p_per_layer, mode="mean"):
    if not len(p_per_layer):
        raise EmptyLayerList("no layer probabilities")
    vals = [float(tn.as_tensor(p).data) for p in p_per_layer]
    if mode == "mean":
        return float(np.mean(vals))
    if mode == "max":
        return float(np.max(vals))
    raise UnknownMode(f"aggregation mode must be 'mean' or 'max', got {mode!r}")


# ---------------------------------------------------------------------------
# whole-model helpers


def layer_probabilities(backbone, stack, E, image=None, *, tokens=None, prefix=None):
    from .backbone import forward_with_hooks

    records = forward_with_hooks(backbone, image, stack, tokens=tokens, prefix=prefix)
    return [pool_abnormal(match_prototypes(records[l][1], E, stack.tau), stack.pooling) for l in stack.layers]


def anomaly_score(backbone, stack, E, image=None, *, tokens=None, prefix=None):
    probs = layer_probabilities(backbone, stack, E, image, tokens=tokens, prefix=prefix)
    return image_score(probs, stack.aggregation)


def sample_loss(backbone, stack, E, y, image=None, *, tokens=None, prefix=None):
    return detection_loss(layer_probabilities(backbone, stack, E, image, tokens=tokens, prefix=prefix), y)


def stack_grad_check(backbone, stack, E, y, tokens, step=1e-5, floor=1e-6):
    """Max relative error of every adapter gradient against central differences.

    The numeric side reuses the frozen prefix: perturbing a weight of the
    adapter at layer l only re-runs the graph from that adapter onward.
    """
    from .backbone import HookState, run_from

    work = stack.copy()
    params = work.parameters()
    loss = sample_loss(backbone, work, E, y, tokens=tokens)
    analytic = dict(zip([n for n, _ in work.named_parameters()], tn.backward(loss, params)))

    frozen = work.copy()
    for p in frozen.parameters():
        p.requires_grad = False
    # cache the state entering each adapter and the per-layer probabilities
    entering, probs = {}, {}
    x, z = tn.Tensor(tokens), None
    block = 1
    for l in frozen.layers:
        for i in range(block, l + 1):
            x = backbone.block(i, x)
        block = l + 1
        entering[l] = (x, z)
        out = adapter_forward(x, z, frozen.params[l], frozen.alpha, frozen.slope)
        probs[l] = float(pool_abnormal(match_prototypes(out.M, E, frozen.tau), frozen.pooling).data)
        x, z = out.X_out, out.Z

    def loss_from(l):
        x_in, z_in = entering[l]
        out = adapter_forward(x_in, z_in, frozen.params[l], frozen.alpha, frozen.slope)
        ps = [p for k, p in probs.items() if k < l]
        ps.append(float(pool_abnormal(match_prototypes(out.M, E, frozen.tau), frozen.pooling).data))
        rest = run_from(backbone, HookState(out.X_out, out.Z, l + 1), frozen)
        ps += [float(pool_abnormal(match_prototypes(m, E, frozen.tau), frozen.pooling).data)
               for _, m in rest.values()]
        return float(detection_loss(ps, y).data)

    worst = 0.0
    for l in frozen.layers:
        for name, t in frozen.params[l].named().items():
            flat = t.data.reshape(-1)
            num = np.empty(flat.size)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + step
                fp = loss_from(l)
                flat[i] = orig - step
                fm = loss_from(l)
                flat[i] = orig
                num[i] = (fp - fm) / (2 * step)
            err = tn.relative_error(analytic[f"layer{l}.{name}"].reshape(-1), num, floor)
            worst = max(worst, float(err.max()))
    return worst
