"""Low-precision CNN training through synaptic-device weight storage.

Each weighted layer keeps its weights as device state. The network reads an
effective weight ``scale * w`` where ``w`` in ``[-1, 1]`` is the affine image
of cell conductance and ``scale`` is a per-layer power of two. Training per
batch: forward, error back-propagation, gradient accumulation over the
batch, one update. Updates turn into programming pulses on analog devices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import device as dev
from .errors import StateError, TopologyError
from .mapping import ADCModel, im2col, col2im, mapped_error, mapped_forward
from .quant import QuantTensor, quantize
from .reporting import EpochTrace, LayerTrace, input_activity
from .topology import NetworkTopology


# -- optimizer -----------------------------------------------------------------

@dataclass
class MomentumState:
    v: np.ndarray
    beta: float = 0.9
    lr: float = 0.1


def momentum_update(state: MomentumState, g):
    """``v' = beta v + (1 - beta) g``; returns ``(state', lr * v')``.

    The returned delta is what gets subtracted from the weights.
    """
    g = np.asarray(g, dtype=float)
    if np.shape(state.v) != g.shape:
        raise TopologyError(f"velocity {np.shape(state.v)} and gradient {g.shape} differ")
    v = state.beta * state.v + (1.0 - state.beta) * g
    return MomentumState(v, state.beta, state.lr), state.lr * v


@dataclass
class BatchSchedule:
    batch_size: int = 16
    epochs: int = 10
    batches_per_epoch: int | None = None

    def __post_init__(self):
        for key in ("batch_size", "epochs"):
            if getattr(self, key) < 1:
                raise TopologyError(f"{key} must be >= 1")
        if self.batches_per_epoch is not None and self.batches_per_epoch < 1:
            raise TopologyError("batches_per_epoch must be >= 1")


# -- gradients -----------------------------------------------------------------

def weight_gradient(layer, activations, errors):
    """Batch-summed weight gradient of one layer.

    ``activations`` is the layer input, ``errors`` the error at its output.
    For conv layers every kernel position accumulates the error map against
    the matching shifted activation window, channel by channel.
    """
    a = np.asarray(activations, dtype=float)
    e = np.asarray(errors, dtype=float)
    if layer.kind == "fc":
        if a.ndim != 2 or e.ndim != 2 or a.shape[0] != e.shape[0]:
            raise TopologyError(f"fc gradient shapes {a.shape} / {e.shape}")
        return a.T @ e
    if a.ndim != 4 or e.ndim != 4 or a.shape[0] != e.shape[0] or e.shape[1] != layer.out_channels:
        raise TopologyError(f"conv gradient shapes {a.shape} / {e.shape}")
    cols, (ho, wo) = im2col(a, layer.kernel, layer.stride, layer.padding)
    if (ho, wo) != e.shape[2:]:
        raise TopologyError("error map does not match the layer output size")
    emat = e.transpose(0, 2, 3, 1).reshape(-1, layer.out_channels)
    grad = cols.reshape(-1, cols.shape[-1]).T @ emat
    return grad.reshape(layer.weight_shape)


def softmax_cross_entropy(logits, labels):
    """Mean loss and its gradient with respect to the logits."""
    z = logits - logits.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    n = logits.shape[0]
    loss = -np.mean(np.log(p[np.arange(n), labels] + 1e-300))
    grad = p.copy()
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


# -- weight storage ------------------------------------------------------------

@dataclass
class LayerWeights:
    """Weights of one layer: analog cells, a digital grid, or plain floats."""

    shape: tuple
    scale: float
    mode: str  # "analog" | "digital" | "float"
    w: np.ndarray | None = None  # digital/float storage, matrix form
    array: dev.SynapticArrayState | None = None
    p_max: int | None = None
    weight_range: tuple = (-1.0, 1.0)

    def matrix(self) -> np.ndarray:
        if self.mode == "analog":
            return self.array.weights()
        return self.w

    def values(self) -> np.ndarray:
        return self.matrix().reshape(self.shape)

    def effective(self) -> np.ndarray:
        return self.scale * self.values()

    def copy(self) -> "LayerWeights":
        return LayerWeights(self.shape, self.scale, self.mode,
                            None if self.w is None else self.w.copy(),
                            None if self.array is None else self.array.copy(),
                            self.p_max, self.weight_range)


def _as_matrix(shape):
    return (int(np.prod(shape[:-1])), shape[-1])


def layer_scale(fan_in: int) -> float:
    return float(2.0 ** round(math.log2(2.0 * math.sqrt(3.0 / fan_in))))


# -- network -------------------------------------------------------------------

@dataclass
class TrainOptions:
    lr: float = 0.1
    momentum: float | None = 0.9
    full_precision: bool = False
    adc_bits: int | None = None
    array_rows: int = 128
    per_pulse_c2c: bool = False
    lr_step_epoch: int | None = None
    lr_step_factor: float = 1.0
    # round each update to whole pulses stochastically (unbiased) before programming
    stochastic_update: bool = True


class QuantNet:
    """Network state: topology, device-backed weights and caches.

    ``device`` selects the storage: an analog :class:`DeviceSpec`, an SRAM
    spec (exact digital writes on a ``2**weight_bits`` grid) or ``None`` for
    unquantized float weights.
    """

    def __init__(self, topology: NetworkTopology, device: dev.DeviceSpec | None = None,
                 seed: int = 0, options: TrainOptions | None = None,
                 weight_range=(-1.0, 1.0)):
        self.topology = topology
        self.device = device
        self.options = options or TrainOptions()
        self.weight_range = tuple(weight_range)
        self._shapes = topology.shapes()
        self.weighted = [i for i, _, _, _ in topology.weighted()]
        seeds = np.random.SeedSequence(seed)
        init_seed, cell_seed, self._noise_seed, update_seed = seeds.spawn(4)
        rng = np.random.default_rng(init_seed)
        cell_rngs = cell_seed.spawn(len(self.weighted))
        self.weights: dict[int, LayerWeights] = {}
        for k, idx in enumerate(self.weighted):
            layer = topology.layers[idx]
            shape = layer.weight_shape
            w0 = rng.uniform(-0.5, 0.5, size=shape)
            self.weights[idx] = self._make_weights(shape, layer_scale(layer.fan_in), w0, cell_rngs[k])
        self.noise_rng = np.random.default_rng(self._noise_seed)
        self.update_rng = np.random.default_rng(update_seed)
        self.adc_forward: dict[int, ADCModel] = {}
        self.adc_error: dict[int, ADCModel] = {}
        self.reset_adcs()
        self._cache = None

    def _make_weights(self, shape, scale, w0, seed) -> LayerWeights:
        rows, cols = _as_matrix(shape)
        mat = w0.reshape(rows, cols)
        d = self.device
        if d is None:
            return LayerWeights(shape, scale, "float", w=mat.copy(), weight_range=self.weight_range)
        if d.is_sram:
            p_max = 2 ** d.weight_bits - 1
            lw = LayerWeights(shape, scale, "digital", w=mat.copy(), p_max=p_max,
                              weight_range=self.weight_range)
            lw.w = self._snap(lw.w, p_max)
            return lw
        array = dev.init_array(rows, cols, d, seed, weights=mat, weight_range=self.weight_range)
        return LayerWeights(shape, scale, "analog", array=array, p_max=d.p_max,
                            weight_range=self.weight_range)

    def _snap(self, w, p_max):
        w_min, w_max = self.weight_range
        step = (w_max - w_min) / p_max
        return np.clip(w_min + np.rint((w - w_min) / step) * step, w_min, w_max)

    def reset_adcs(self):
        bits = self.options.adc_bits
        if bits is None:
            self.adc_forward, self.adc_error = {}, {}
            return
        self.adc_forward = {i: ADCModel(bits) for i in self.weighted}
        self.adc_error = {i: ADCModel(bits) for i in self.weighted}

    # -- forward / backward -------------------------------------------------

    def _quant(self, t, bits, mode="nearest", rng=None):
        if self.options.full_precision:
            return t, None
        q = quantize(t, bits, mode=mode, rng=rng)
        return q.values, q

    def forward(self, x, cache: bool = True):
        """Logits for a batch; caches what back-propagation needs."""
        x = np.asarray(x, dtype=float)
        if x.shape[1:] != self.topology.input_shape:
            raise TopologyError(f"input {x.shape[1:]} does not match {self.topology.input_shape}")
        topo = self.topology
        acts, qacts, masks = {}, {}, {}
        h = x
        for i, layer in enumerate(topo.layers):
            kind = layer.kind
            if kind in ("conv", "fc"):
                h, q = self._quant(h, topo.activation_bits)
                acts[i], qacts[i] = h, q
                w = self.weights[i].effective()
                h = mapped_forward(layer, h, w, self.adc_forward.get(i),
                                   topo.activation_bits, self.options.array_rows)
            elif kind == "relu":
                masks[i] = h > 0
                h = h * masks[i]
            elif kind == "pool":
                b, c, hh, ww = h.shape
                s = layer.size
                blocks = h.reshape(b, c, hh // s, s, ww // s, s).transpose(0, 1, 2, 4, 3, 5)
                blocks = blocks.reshape(b, c, hh // s, ww // s, s * s)
                arg = blocks.argmax(axis=-1)
                masks[i] = arg
                h = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]
            elif kind == "flatten":
                masks[i] = h.shape
                h = h.reshape(h.shape[0], -1)
        if cache:
            self._cache = {"acts": acts, "qacts": qacts, "masks": masks}
        return h

    def predict(self, x):
        return self.forward(x, cache=False).argmax(axis=1)

    def backward(self, output_error, error_rng=None):
        """Errors at every weighted layer's output and batch gradients.

        Returns ``(errors, grads, qerrors)`` keyed by layer index; gradients
        are with respect to the effective weights.
        """
        if self._cache is None:
            raise StateError("backward called before forward")
        topo = self.topology
        acts, masks = self._cache["acts"], self._cache["masks"]
        errors, grads, qerrors = {}, {}, {}
        e = np.asarray(output_error, dtype=float)
        first = self.weighted[0] if self.weighted else None
        for i in range(len(topo.layers) - 1, -1, -1):
            layer = topo.layers[i]
            kind = layer.kind
            if kind in ("conv", "fc"):
                e, q = self._quant(e, topo.error_bits)
                errors[i], qerrors[i] = e, q
                grads[i] = weight_gradient(layer, acts[i], e)
                if i == first:
                    break
                w = self.weights[i].effective()
                e = mapped_error(layer, e, w, acts[i].shape, self.adc_error.get(i),
                                 topo.error_bits, self.options.array_rows)
            elif kind == "relu":
                e = e * masks[i]
            elif kind == "pool":
                arg = masks[i]
                s = layer.size
                b, c, ho, wo = arg.shape
                up = np.zeros((b, c, ho, wo, s * s))
                np.put_along_axis(up, arg[..., None], e[..., None], axis=-1)
                e = up.reshape(b, c, ho, wo, s, s).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, ho * s, wo * s)
            elif kind == "flatten":
                e = e.reshape(masks[i])
        return errors, grads, qerrors

    def loss(self, x, y):
        return softmax_cross_entropy(self.forward(x, cache=False), np.asarray(y))[0]

    # -- update ---------------------------------------------------------------

    def apply_delta(self, idx: int, delta_w, rng=None):
        """Move layer ``idx`` by ``-delta_w`` (device weight units)."""
        lw = self.weights[idx]
        delta = np.asarray(delta_w, dtype=float).reshape(_as_matrix(lw.shape))
        if lw.mode == "float":
            lw.w = np.clip(lw.w - delta, *lw.weight_range)
            return
        if self.options.stochastic_update:
            step = (lw.weight_range[1] - lw.weight_range[0]) / lw.p_max
            x = delta / step
            lo = np.floor(x)
            delta = (lo + (self.update_rng.random(x.shape) < x - lo)) * step
        n = dev.pulses_for_delta(-delta, lw.weight_range, lw.p_max)
        if lw.mode == "digital":
            step = (lw.weight_range[1] - lw.weight_range[0]) / lw.p_max
            lw.w = self._snap(np.clip(lw.w + n * step, *lw.weight_range), lw.p_max)
            return
        d = self.device
        arr = lw.array
        arr.conductance = np.asarray(dev.update_conductance(
            arr.conductance, n, arr.curve, arr.a_ltp, arr.a_ltd, d.c2c_sigma,
            rng if rng is not None else self.noise_rng, self.options.per_pulse_c2c), dtype=float)

    def snapshot(self) -> dict:
        return {i: self.weights[i].values().copy() for i in self.weighted}


class Optimizer:
    """Per-layer momentum (or plain SGD when ``beta`` is ``None``)."""

    def __init__(self, net: QuantNet, lr: float, beta: float | None = 0.9):
        self.lr = lr
        self.beta = beta
        self.states = {i: MomentumState(np.zeros(net.weights[i].shape), beta or 0.0, lr)
                       for i in net.weighted}

    def set_lr(self, lr):
        self.lr = lr
        for s in self.states.values():
            s.lr = lr

    def step(self, idx, grad):
        if self.beta is None:
            return self.lr * np.asarray(grad, dtype=float)
        self.states[idx], delta = momentum_update(self.states[idx], grad)
        return delta


def train_epoch(net: QuantNet, x, y, schedule: BatchSchedule, optimizer: Optimizer,
                rng: np.random.Generator, epoch: int = 1):
    """One epoch of mini-batch training. Returns ``(net, trace)``.

    The trace holds activations, errors and weights of the last iteration.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y)
    n = len(x)
    if n == 0:
        raise TopologyError("empty dataset")
    topo = net.topology
    order = rng.permutation(n)
    b = schedule.batch_size
    batches = [order[i:i + b] for i in range(0, n, b)]
    if schedule.batches_per_epoch is not None:
        batches = batches[:schedule.batches_per_epoch]
    if net.options.adc_bits is not None:
        net.reset_adcs()
    last = len(batches) - 1
    losses = []
    trace = None
    for k, idx in enumerate(batches):
        logits = net.forward(x[idx])
        loss, dlogits = softmax_cross_entropy(logits, y[idx])
        losses.append(loss)
        errors, grads, qerrors = net.backward(dlogits)
        old = net.snapshot() if k == last else None
        for i in net.weighted:
            lw = net.weights[i]
            g = grads[i] * lw.scale
            if not net.options.full_precision:
                g = quantize(g, topo.gradient_bits, mode="stochastic", rng=rng).values
            net.apply_delta(i, optimizer.step(i, g))
        if k == last:
            new = net.snapshot()
            layers = []
            for i in net.weighted:
                qa = net._cache["qacts"][i]
                qe = qerrors[i]
                if qa is None:
                    qa = quantize(net._cache["acts"][i], topo.activation_bits)
                if qe is None:
                    qe = quantize(errors[i], topo.error_bits)
                layers.append(LayerTrace(
                    layer_index=i, activations=qa, errors=qe,
                    old_weights=old[i], new_weights=new[i],
                    act_ones_fraction=input_activity(qa),
                    err_ones_fraction=input_activity(qe),
                ))
            trace = EpochTrace(epoch=epoch, layers=layers, loss=float(np.mean(losses)),
                               batches=len(batches), batch_size=b)
    return net, trace


def evaluate(net: QuantNet, x, y, batch: int = 512) -> float:
    """Fraction of correct argmax predictions."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y)
    if len(x) == 0:
        return 0.0
    correct = 0
    for i in range(0, len(x), batch):
        correct += int(np.sum(net.predict(x[i:i + batch]) == y[i:i + batch]))
    return correct / len(x)


def train(net: QuantNet, x_train, y_train, x_test, y_test, schedule: BatchSchedule,
          seed: int = 0, callback=None):
    """Run every epoch; returns the list of traces with test accuracy filled in."""
    opts = net.options
    optimizer = Optimizer(net, opts.lr, opts.momentum)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 7]))
    traces = []
    for epoch in range(1, schedule.epochs + 1):
        if opts.lr_step_epoch is not None and epoch == opts.lr_step_epoch:
            optimizer.set_lr(opts.lr * opts.lr_step_factor)
        net, trace = train_epoch(net, x_train, y_train, schedule, optimizer, rng, epoch)
        trace.accuracy = evaluate(net, x_test, y_test)
        traces.append(trace)
        if callback is not None:
            callback(trace)
    return traces
