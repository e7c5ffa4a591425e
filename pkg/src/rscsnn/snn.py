"""LIF spiking layers and the time-unrolled network.

The neuron follows the iterative LIF form::

    u[t+1] = h[t] + f(w, x[t])
    s[t]   = H(u[t+1] - threshold)
    h[t+1] = tau * u[t+1] * (1 - s[t])

with ``H(0) = 1``. During backprop ``H'`` is replaced by the triangular
surrogate ``max(gamma - |u - threshold|, 0) / gamma**2``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as tn
from .tensor import Tensor

LAYER_KINDS = ("conv", "fc", "lif", "batchnorm", "avgpool", "flatten")


@dataclass(frozen=True)
class LifParams:
    tau: float = 1.0
    threshold: float = 1.0
    gamma: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.tau <= 1.0:
            raise ValueError(f"tau must lie in (0, 1], got {self.tau}")
        if self.threshold <= 0:
            raise ValueError(f"threshold must be positive, got {self.threshold}")
        if self.gamma <= 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")


def surrogate_gradient(u, threshold: float = 1.0, gamma: float = 1.0) -> np.ndarray:
    """Triangular stand-in for the derivative of the Heaviside spike."""
    z = np.asarray(u, dtype=np.float64) - threshold
    return np.maximum(gamma - np.abs(z), 0.0) / (gamma * gamma)


@dataclass(frozen=True)
class LayerSpec:
    """One layer of the stack.

    ``out`` is the channel count for ``conv`` and the feature count for ``fc``;
    ``kernel``, ``stride`` and ``padding`` apply to ``conv``; ``size`` is the
    pooling window of ``avgpool``.
    """

    kind: str
    out: int = 0
    kernel: int = 3
    stride: int = 1
    padding: int = 0
    size: int = 2
    bias: bool = True

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}; expected one of {LAYER_KINDS}")
        if self.kind in ("conv", "fc") and self.out < 1:
            raise ValueError(f"{self.kind} layer needs out >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown layer keys {sorted(extra)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class NetworkSpec:
    input_shape: tuple[int, ...]
    layers: tuple[LayerSpec, ...]
    lif: LifParams = field(default_factory=LifParams)

    def to_dict(self) -> dict:
        return {
            "input_shape": list(self.input_shape),
            "layers": [layer.to_dict() for layer in self.layers],
            "lif": asdict(self.lif),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        extra = set(d) - {"input_shape", "layers", "lif"}
        if extra:
            raise ValueError(f"unknown network keys {sorted(extra)}")
        return cls(
            input_shape=tuple(int(v) for v in d["input_shape"]),
            layers=tuple(LayerSpec.from_dict(dict(layer)) for layer in d["layers"]),
            lif=LifParams(**d.get("lif", {})),
        )


def toy_spec(input_shape=(1, 8, 8), classes: int = 2, channels: int = 8, hidden: int = 32,
             batchnorm: bool = False) -> NetworkSpec:
    """Small conv -> LIF -> pool -> FC -> LIF -> FC stack for desk-scale runs."""
    layers = [LayerSpec("conv", out=channels, kernel=3, padding=1)]
    if batchnorm:
        layers.append(LayerSpec("batchnorm"))
    layers += [
        LayerSpec("lif"),
        LayerSpec("avgpool", size=2),
        LayerSpec("flatten"),
        LayerSpec("fc", out=hidden),
        LayerSpec("lif"),
        LayerSpec("fc", out=classes),
    ]
    return NetworkSpec(tuple(input_shape), tuple(layers))


def mlp_spec(input_shape=(1, 8, 8), classes: int = 2, hidden=(32,)) -> NetworkSpec:
    layers = [LayerSpec("flatten")]
    for width in hidden:
        layers += [LayerSpec("fc", out=width), LayerSpec("lif")]
    layers.append(LayerSpec("fc", out=classes))
    return NetworkSpec(tuple(input_shape), tuple(layers))


class NetworkState:
    """Per-LIF-layer post-reset potentials ``h`` plus the timestep counter.

    With ``record=True`` each step appends ``(u, s, h)`` arrays per layer to
    ``history``.
    """

    def __init__(self, n_lif: int, record: bool = False):
        self.n_lif = n_lif
        self.record = record
        self.reset()

    def reset(self) -> None:
        self.h: list[Tensor | None] = [None] * self.n_lif
        self.u: list[np.ndarray | None] = [None] * self.n_lif
        self.t = 0
        self.history: list[list[tuple[np.ndarray, np.ndarray, np.ndarray]]] = [[] for _ in range(self.n_lif)]

    def is_zero(self) -> bool:
        return self.t == 0 and all(h is None or not np.any(h.data) for h in self.h)


def reset_state(state: NetworkState) -> None:
    state.reset()


def lif_step(input_current: Tensor, state: NetworkState, index: int, params: LifParams) -> Tensor:
    """Advance LIF layer ``index`` by one step and return its spikes."""
    h_prev = state.h[index]
    if h_prev is None:
        u = input_current if isinstance(input_current, Tensor) else Tensor(input_current)
    else:
        if h_prev.shape != input_current.shape:
            raise tn.ShapeError(
                f"LIF input shape {input_current.shape} does not match stored state {h_prev.shape}"
            )
        u = tn.add(h_prev, input_current)
    s, h = tn.lif_fire(u, params.threshold, params.tau, params.gamma)
    state.h[index] = h
    state.u[index] = u.data
    if state.record:
        state.history[index].append((u.data.copy(), s.data.copy(), h.data.copy()))
    return s


def _fan_in(layer: LayerSpec, shape: tuple[int, ...]) -> int:
    if layer.kind == "conv":
        return shape[0] * layer.kernel * layer.kernel
    return shape[0]


class Network:
    """A layer stack with parameters, usable either as an SNN or, with
    ``ann=True``, as the matching ANN in which every LIF layer is a ReLU."""

    def __init__(self, spec: NetworkSpec, seed: int = 0, ann: bool = False):
        self.spec = spec
        self.ann = ann
        self.params: dict[str, Tensor] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self.shapes: list[tuple[int, ...]] = []
        rng = np.random.default_rng(seed)
        shape = tuple(spec.input_shape)
        n_lif = 0
        for i, layer in enumerate(spec.layers):
            shape = self._build_layer(i, layer, shape, rng)
            self.shapes.append(shape)
            if layer.kind == "lif":
                n_lif += 1
        if len(shape) != 1:
            raise tn.ShapeError(f"network must end in a flat output, got per-sample shape {shape}")
        self.n_lif = n_lif
        self.num_classes = shape[0]

    def _build_layer(self, i: int, layer: LayerSpec, shape, rng) -> tuple[int, ...]:
        if layer.kind == "conv":
            if len(shape) != 3:
                raise tn.ShapeError(f"layer {i}: conv needs (C, H, W) input, got {shape}")
            c, h, w = shape
            ho = tn.conv_output_size(h, layer.kernel, layer.stride, layer.padding)
            wo = tn.conv_output_size(w, layer.kernel, layer.stride, layer.padding)
            if ho <= 0 or wo <= 0:
                raise tn.ShapeError(f"layer {i}: conv output size non-positive for input {shape}")
            bound = np.sqrt(6.0 / _fan_in(layer, shape))
            self.params[f"{i}.weight"] = Tensor(
                rng.uniform(-bound, bound, (layer.out, c, layer.kernel, layer.kernel)), requires_grad=True)
            if layer.bias:
                self.params[f"{i}.bias"] = Tensor(np.zeros(layer.out), requires_grad=True)
            return (layer.out, ho, wo)
        if layer.kind == "fc":
            if len(shape) != 1:
                raise tn.ShapeError(f"layer {i}: fc needs flat input, got {shape}; insert a flatten layer")
            bound = np.sqrt(6.0 / shape[0])
            self.params[f"{i}.weight"] = Tensor(rng.uniform(-bound, bound, (layer.out, shape[0])),
                                                requires_grad=True)
            if layer.bias:
                self.params[f"{i}.bias"] = Tensor(np.zeros(layer.out), requires_grad=True)
            return (layer.out,)
        if layer.kind == "batchnorm":
            c = shape[0]
            self.params[f"{i}.gamma"] = Tensor(np.ones(c), requires_grad=True)
            self.params[f"{i}.beta"] = Tensor(np.zeros(c), requires_grad=True)
            self.buffers[f"{i}.running_mean"] = np.zeros(c)
            self.buffers[f"{i}.running_var"] = np.ones(c)
            return shape
        if layer.kind == "avgpool":
            if len(shape) != 3 or shape[1] % layer.size or shape[2] % layer.size:
                raise tn.ShapeError(f"layer {i}: avgpool size {layer.size} does not divide {shape}")
            return (shape[0], shape[1] // layer.size, shape[2] // layer.size)
        if layer.kind == "flatten":
            return (int(np.prod(shape)),)
        return shape  # lif

    # -- parameter access ----------------------------------------------------
    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def flat_parameters(self) -> np.ndarray:
        parts = [p.data.ravel() for p in self.params.values()]
        parts += [b.ravel() for b in self.buffers.values()]
        return np.concatenate(parts) if parts else np.zeros(0)

    def load_flat_parameters(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        expected = sum(p.data.size for p in self.params.values()) + sum(b.size for b in self.buffers.values())
        if flat.size != expected:
            raise ValueError(f"parameter blob has {flat.size} values, network expects {expected}")
        k = 0
        for p in self.params.values():
            n = p.data.size
            p.data = flat[k:k + n].reshape(p.data.shape).copy()
            k += n
        for name, b in self.buffers.items():
            n = b.size
            self.buffers[name] = flat[k:k + n].reshape(b.shape).copy()
            k += n

    def copy(self) -> "Network":
        other = Network.__new__(Network)
        other.spec, other.ann, other.shapes = self.spec, self.ann, list(self.shapes)
        other.n_lif, other.num_classes = self.n_lif, self.num_classes
        other.params = {k: Tensor(v.data.copy(), requires_grad=True) for k, v in self.params.items()}
        other.buffers = {k: v.copy() for k, v in self.buffers.items()}
        return other

    def new_state(self, record: bool = False) -> NetworkState:
        return NetworkState(self.n_lif, record=record)

    # -- forward ------------------------------------------------------------
    def forward_step(self, x: Tensor, state: NetworkState | None, training: bool = False) -> Tensor:
        """Push one frame through every layer; LIF layers read/write ``state``."""
        lif_index = 0
        for i, layer in enumerate(self.spec.layers):
            kind = layer.kind
            if kind == "conv":
                x = tn.conv2d(x, self.params[f"{i}.weight"], layer.stride, layer.padding,
                              self.params.get(f"{i}.bias"))
            elif kind == "fc":
                x = tn.linear(x, self.params[f"{i}.weight"], self.params.get(f"{i}.bias"))
            elif kind == "batchnorm":
                x = tn.batch_norm(x, self.params[f"{i}.gamma"], self.params[f"{i}.beta"],
                                  self.buffers[f"{i}.running_mean"], self.buffers[f"{i}.running_var"],
                                  training)
            elif kind == "avgpool":
                x = tn.avg_pool2d(x, layer.size)
            elif kind == "flatten":
                x = tn.flatten(x)
            elif kind == "lif":
                if self.ann:
                    x = tn.relu(x)
                else:
                    x = lif_step(x, state, lif_index, self.spec.lif)
                lif_index += 1
        if state is not None:
            state.t += 1
        return x

    def __call__(self, frames, training: bool = False, state: NetworkState | None = None) -> Tensor:
        return snn_forward(self, frames, training=training, state=state)


def snn_forward(net: Network, frames, T: int | None = None, training: bool = False,
                state: NetworkState | None = None) -> Tensor:
    """Run ``T`` timesteps and return the stacked logits, shape (T, N, classes).

    ``frames`` is a sequence of per-timestep tensors, a time-major array, or
    anything with a time-major ``frames`` array (a ``SpikeSequence``). The
    state is reset before the first step.
    """
    if hasattr(frames, "frames"):
        frames = frames.frames
    if isinstance(frames, np.ndarray):
        frames = [Tensor(frames[t]) for t in range(frames.shape[0])]
    if T is not None and len(frames) != T:
        raise ValueError(f"coded input has {len(frames)} timesteps but T={T} was requested")
    if state is None:
        state = net.new_state()
    else:
        state.reset()
    outs = [net.forward_step(f, state, training) for f in frames]
    return tn.stack(outs, axis=0)
