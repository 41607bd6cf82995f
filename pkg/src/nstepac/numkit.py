"""Dense multilayer perceptrons, Adam and Polyak interpolation in float64 numpy.

Everything here is value-semantic: update functions return fresh parameter
and optimizer objects and never mutate their arguments.  Weight matrices are
stored with shape ``(fan_out, fan_in)`` so a layer computes ``x @ W.T + b``.

Batched inputs are supported throughout: ``mlp_forward`` accepts either a
single vector of length ``layer_sizes[0]`` or a 2-D array of such rows.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field
from typing import BinaryIO, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError, ContractError, DimensionError, NumericalError, ParseError

SNAPSHOT_MAGIC = b"NKMLP\x01"


class Activation(enum.IntEnum):
    RELU = 0
    TANH = 1


class OutputActivation(enum.IntEnum):
    IDENTITY = 0
    TANH = 1


@dataclass
class MlpParams:
    """Weights of a fully connected network.

    ``output_scale`` and ``output_offset`` are fixed (non-trainable) affine
    terms applied after a Tanh head so that actor outputs land inside the
    action box; they are ignored for Identity heads.
    """

    layer_sizes: Tuple[int, ...]
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    activation: Activation = Activation.RELU
    output_activation: OutputActivation = OutputActivation.IDENTITY
    output_scale: Optional[np.ndarray] = None
    output_offset: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        self.layer_sizes = tuple(int(s) for s in self.layer_sizes)
        if len(self.layer_sizes) < 2:
            raise DimensionError("an MLP needs at least input and output sizes")
        if len(self.weights) != len(self.layer_sizes) - 1 or len(self.biases) != len(self.weights):
            raise DimensionError("weights/biases do not match layer_sizes")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            expect = (self.layer_sizes[i + 1], self.layer_sizes[i])
            if w.shape != expect:
                raise DimensionError(f"weights[{i}] has shape {w.shape}, expected {expect}")
            if b.shape != (self.layer_sizes[i + 1],):
                raise DimensionError(f"biases[{i}] has shape {b.shape}, expected ({expect[0]},)")
        n_out = self.layer_sizes[-1]
        if self.output_scale is None:
            self.output_scale = np.ones(n_out)
        if self.output_offset is None:
            self.output_offset = np.zeros(n_out)
        self.output_scale = np.asarray(self.output_scale, dtype=np.float64).reshape(n_out)
        self.output_offset = np.asarray(self.output_offset, dtype=np.float64).reshape(n_out)

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def copy(self) -> "MlpParams":
        return MlpParams(
            self.layer_sizes,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.activation,
            self.output_activation,
            self.output_scale.copy(),
            self.output_offset.copy(),
        )

    def arrays(self) -> List[np.ndarray]:
        """Trainable arrays in declaration order (w0, b0, w1, b1, ...)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def num_parameters(self) -> int:
        return sum(a.size for a in self.arrays())

    def same_shape(self, other: "MlpParams") -> bool:
        return self.layer_sizes == other.layer_sizes

    def bitwise_equal(self, other: "MlpParams") -> bool:
        if not self.same_shape(other):
            return False
        return all(
            a.tobytes() == b.tobytes() for a, b in zip(self.arrays(), other.arrays())
        ) and self.output_scale.tobytes() == other.output_scale.tobytes()


@dataclass
class Gradients:
    """Parameter gradients shaped like an :class:`MlpParams`.

    ``input_grad`` holds the gradient with respect to the network input,
    which the actor update needs (dQ/da).
    """

    weights: List[np.ndarray]
    biases: List[np.ndarray]
    input_grad: Optional[np.ndarray] = None

    def arrays(self) -> List[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def norm(self) -> float:
        return float(np.sqrt(sum(float(np.sum(a * a)) for a in self.arrays())))

    def scaled(self, factor: float) -> "Gradients":
        return Gradients(
            [w * factor for w in self.weights],
            [b * factor for b in self.biases],
            None if self.input_grad is None else self.input_grad * factor,
        )


@dataclass
class ForwardCache:
    params: MlpParams
    single: bool
    # inputs to each layer (post-activation of previous layer), then pre-activations
    layer_inputs: List[np.ndarray] = field(default_factory=list)
    pre_activations: List[np.ndarray] = field(default_factory=list)
    head: Optional[np.ndarray] = None  # tanh(z_last) when the head is Tanh


@dataclass
class AdamState:
    first_moments: List[np.ndarray]
    second_moments: List[np.ndarray]
    step_count: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


def _check_finite(arr: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericalError(f"non-finite values in {what}")


def init_mlp(
    layer_sizes: Sequence[int],
    rng: np.random.Generator,
    activation: Activation = Activation.RELU,
    output_activation: OutputActivation = OutputActivation.IDENTITY,
    final_init: float = 3e-3,
    output_scale: Optional[np.ndarray] = None,
    output_offset: Optional[np.ndarray] = None,
) -> MlpParams:
    """Uniform fan-in initialisation; the last layer uses ``±final_init``."""
    weights, biases = [], []
    n = len(layer_sizes) - 1
    for i in range(n):
        fan_in, fan_out = int(layer_sizes[i]), int(layer_sizes[i + 1])
        bound = final_init if i == n - 1 else 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return MlpParams(
        tuple(layer_sizes), weights, biases, activation, output_activation, output_scale, output_offset
    )


def zeros_like_params(params: MlpParams) -> List[np.ndarray]:
    return [np.zeros_like(a) for a in params.arrays()]


def mlp_forward(params: MlpParams, x: np.ndarray) -> Tuple[np.ndarray, ForwardCache]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    h = x[None, :] if single else x
    if h.ndim != 2 or h.shape[1] != params.layer_sizes[0]:
        raise DimensionError(
            f"input has shape {x.shape}, network expects {params.layer_sizes[0]} features"
        )
    _check_finite(h, "network input")
    cache = ForwardCache(params=params, single=single)
    last = params.n_layers - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        cache.layer_inputs.append(h)
        with np.errstate(over="ignore", invalid="ignore"):
            z = h @ w.T + b
        cache.pre_activations.append(z)
        if i < last:
            h = np.maximum(z, 0.0) if params.activation == Activation.RELU else np.tanh(z)
        elif params.output_activation == OutputActivation.TANH:
            t = np.tanh(z)
            cache.head = t
            h = t * params.output_scale + params.output_offset
        else:
            h = z
    _check_finite(h, "network output")
    return (h[0] if single else h), cache


def mlp_backward(params: MlpParams, cache: ForwardCache, output_grad: np.ndarray) -> Gradients:
    """Gradients of ``sum(output * output_grad)`` w.r.t. weights, biases and input."""
    if cache.params is not params:
        raise ContractError("forward cache was produced by a different parameter set")
    g = np.asarray(output_grad, dtype=np.float64)
    if cache.single:
        g = g[None, :] if g.ndim == 1 else g
    out_shape = cache.pre_activations[-1].shape
    if g.shape != out_shape:
        raise DimensionError(f"output_grad has shape {np.shape(output_grad)}, expected {out_shape}")
    _check_finite(g, "output gradient")
    n = params.n_layers
    gw: List[np.ndarray] = [None] * n  # type: ignore[list-item]
    gb: List[np.ndarray] = [None] * n  # type: ignore[list-item]
    if params.output_activation == OutputActivation.TANH:
        g = g * params.output_scale * (1.0 - cache.head * cache.head)
    for i in range(n - 1, -1, -1):
        gw[i] = g.T @ cache.layer_inputs[i]
        gb[i] = g.sum(axis=0)
        g = g @ params.weights[i]
        if i > 0:
            z = cache.pre_activations[i - 1]
            if params.activation == Activation.RELU:
                g = g * (z > 0.0)
            else:
                t = np.tanh(z)
                g = g * (1.0 - t * t)
    return Gradients(gw, gb, g[0] if cache.single else g)


def adam_init(
    params: MlpParams,
    learning_rate: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    epsilon: float = 1e-8,
) -> AdamState:
    return AdamState(
        zeros_like_params(params), zeros_like_params(params), 0, learning_rate, beta1, beta2, epsilon
    )


def adam_step(params: MlpParams, grads: Gradients, state: AdamState) -> Tuple[MlpParams, AdamState]:
    """One bias-corrected Adam update, returning new params and state."""
    p_arrays = params.arrays()
    g_arrays = grads.arrays()
    if len(g_arrays) != len(p_arrays) or any(p.shape != g.shape for p, g in zip(p_arrays, g_arrays)):
        raise DimensionError("gradients are not shape-congruent with parameters")
    t = state.step_count + 1
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1**t
    corr2 = 1.0 - b2**t
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(p_arrays, g_arrays, state.first_moments, state.second_moments):
        _check_finite(g, "gradient")
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        step = state.learning_rate * (m / corr1) / (np.sqrt(v / corr2) + state.epsilon)
        new_p.append(p - step)
        new_m.append(m)
        new_v.append(v)
    out = MlpParams(
        params.layer_sizes,
        new_p[0::2],
        new_p[1::2],
        params.activation,
        params.output_activation,
        params.output_scale,
        params.output_offset,
    )
    new_state = AdamState(
        new_m, new_v, t, state.learning_rate, state.beta1, state.beta2, state.epsilon
    )
    return out, new_state


def soft_update(target: MlpParams, online: MlpParams, tau: float) -> MlpParams:
    """Polyak interpolation ``(1 - tau) * target + tau * online``."""
    if not 0.0 < tau <= 1.0:
        raise ConfigError(f"tau must lie in (0, 1], got {tau}")
    if not target.same_shape(online):
        raise DimensionError("target and online networks differ in shape")
    if tau == 1.0:
        out = online.copy()
        out.output_scale = target.output_scale.copy()
        out.output_offset = target.output_offset.copy()
        return out
    keep = 1.0 - tau
    return MlpParams(
        target.layer_sizes,
        [keep * a + tau * b for a, b in zip(target.weights, online.weights)],
        [keep * a + tau * b for a, b in zip(target.biases, online.biases)],
        target.activation,
        target.output_activation,
        target.output_scale,
        target.output_offset,
    )


# --- snapshots ---------------------------------------------------------------
#
# Layout (all little-endian):
#   magic "NKMLP\x01"
#   u32 number of layer sizes, then that many u32 sizes
#   u8 hidden activation, u8 output activation
#   f64 payload: w0 (row-major), b0, w1, b1, ..., output_scale, output_offset


def params_to_bytes(params: MlpParams) -> bytes:
    head = SNAPSHOT_MAGIC + struct.pack("<I", len(params.layer_sizes))
    head += struct.pack(f"<{len(params.layer_sizes)}I", *params.layer_sizes)
    head += struct.pack("<BB", int(params.activation), int(params.output_activation))
    body = b"".join(
        np.ascontiguousarray(a, dtype="<f8").tobytes()
        for a in params.arrays() + [params.output_scale, params.output_offset]
    )
    return head + body


def params_from_stream(stream: BinaryIO) -> MlpParams:
    magic = stream.read(len(SNAPSHOT_MAGIC))
    if magic != SNAPSHOT_MAGIC:
        raise ParseError("not an MLP snapshot (bad magic)")
    (count,) = struct.unpack("<I", _read_exact(stream, 4))
    sizes = struct.unpack(f"<{count}I", _read_exact(stream, 4 * count))
    act, out_act = struct.unpack("<BB", _read_exact(stream, 2))

    def take(shape: Tuple[int, ...]) -> np.ndarray:
        n = int(np.prod(shape))
        buf = _read_exact(stream, 8 * n)
        return np.frombuffer(buf, dtype="<f8").astype(np.float64).reshape(shape)

    weights, biases = [], []
    for i in range(count - 1):
        weights.append(take((sizes[i + 1], sizes[i])))
        biases.append(take((sizes[i + 1],)))
    scale = take((sizes[-1],))
    offset = take((sizes[-1],))
    return MlpParams(
        sizes, weights, biases, Activation(act), OutputActivation(out_act), scale, offset
    )


def params_from_bytes(data: bytes) -> MlpParams:
    import io

    return params_from_stream(io.BytesIO(data))


def _read_exact(stream: BinaryIO, n: int) -> bytes:
    buf = stream.read(n)
    if len(buf) != n:
        raise ParseError("snapshot truncated")
    return buf
