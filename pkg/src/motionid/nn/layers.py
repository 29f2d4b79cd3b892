"""
Layers with hand-written backward passes.

Every layer caches what its backward pass needs during forward(), so a layer
instance handles one forward/backward pair at a time. backward() returns the
gradient with respect to the layer input and accumulates parameter gradients
into Parameter.grad.
"""

from dataclasses import dataclass, field
from typing import Dict, Optional
import logging

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from motionid.errors import ShapeMismatch


logger = logging.getLogger(__name__)


@dataclass(eq=False)
class Parameter:
    data: np.ndarray
    grad: np.ndarray = field(init=False)
    trainable: bool = True

    def __post_init__(self):
        self.grad = np.zeros_like(self.data)

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self) -> int:
        return int(self.data.size)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)


class Layer:
    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dout: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def parameters(self) -> Dict[str, Parameter]:
        return {}

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)


def he_normal(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    return (rng.normal(size=shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


class Conv1d(Layer):
    """
    Valid (unpadded), stride-1 1-D convolution over G independent groups.

    Input (B, G, C_in, L), weight (G, C_out, C_in, K), bias (G, C_out),
    output (B, G, C_out, L - K + 1). With G = 1 this is an ordinary conv
    layer; the verification model runs its 22 branches as 22 groups.
    """

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        groups: int = 1,
        rng: Optional[np.random.Generator] = None,
        dtype=np.float32,
    ):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.groups = groups
        shape = (groups, out_channels, in_channels, kernel_size)
        self.weight = Parameter(he_normal(rng, shape, in_channels * kernel_size, dtype))
        self.bias = Parameter(np.zeros((groups, out_channels), dtype=dtype))
        self._cols: Optional[np.ndarray] = None
        self._input_shape = None

    def parameters(self) -> Dict[str, Parameter]:
        return {"weight": self.weight, "bias": self.bias}

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 4 or x.shape[1] != self.groups or x.shape[2] != self.in_channels:
            raise ShapeMismatch(
                f"Conv1d expects (B, {self.groups}, {self.in_channels}, L), got {x.shape}"
            )
        b, g, c, length = x.shape
        k = self.kernel_size
        if length < k:
            raise ShapeMismatch(f"Input length {length} is shorter than kernel {k}")
        out_len = length - k + 1
        # (B, G, C, L', K) -> (G, B * L', C * K)
        cols = sliding_window_view(x, k, axis=-1).transpose(1, 0, 3, 2, 4)
        cols = cols.reshape(g, b * out_len, c * k)
        self._cols = cols
        self._input_shape = x.shape
        w = self.weight.data.reshape(g, self.out_channels, c * k).transpose(0, 2, 1)
        out = np.matmul(cols, w).reshape(g, b, out_len, self.out_channels)
        return out.transpose(1, 0, 3, 2) + self.bias.data[None, :, :, None]

    def backward(self, dout: np.ndarray) -> np.ndarray:
        b, g, c, length = self._input_shape
        k = self.kernel_size
        out_len = length - k + 1
        d2 = dout.transpose(1, 0, 3, 2).reshape(g, b * out_len, self.out_channels)
        dw = np.matmul(self._cols.transpose(0, 2, 1), d2)
        self.weight.grad += dw.transpose(0, 2, 1).reshape(self.weight.shape)
        self.bias.grad += dout.sum(axis=(0, 3))
        w = self.weight.data.reshape(g, self.out_channels, c * k)
        dcols = np.matmul(d2, w).reshape(g, b, out_len, c, k).transpose(1, 0, 3, 2, 4)
        dx = np.zeros(self._input_shape, dtype=dout.dtype)
        for j in range(k):
            dx[..., j : j + out_len] += dcols[..., j]
        return dx


class Linear(Layer):
    def __init__(
        self,
        in_features: int,
        out_features: int,
        rng: Optional[np.random.Generator] = None,
        dtype=np.float32,
    ):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_features = in_features
        self.out_features = out_features
        self.weight = Parameter(he_normal(rng, (in_features, out_features), in_features, dtype))
        self.bias = Parameter(np.zeros(out_features, dtype=dtype))
        self._x: Optional[np.ndarray] = None

    def parameters(self) -> Dict[str, Parameter]:
        return {"weight": self.weight, "bias": self.bias}

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeMismatch(f"Linear expects (B, {self.in_features}), got {x.shape}")
        self._x = x
        return x @ self.weight.data + self.bias.data

    def backward(self, dout: np.ndarray) -> np.ndarray:
        self.weight.grad += self._x.T @ dout
        self.bias.grad += dout.sum(axis=0)
        return dout @ self.weight.data.T


class ReLU(Layer):
    def __init__(self):
        self._mask: Optional[np.ndarray] = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._mask = x > 0
        return np.where(self._mask, x, 0).astype(x.dtype, copy=False)

    def backward(self, dout: np.ndarray) -> np.ndarray:
        return np.where(self._mask, dout, 0).astype(dout.dtype, copy=False)


class GlobalAvgPool(Layer):
    """Mean over the last (time) axis."""

    def __init__(self):
        self._shape = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._shape = x.shape
        return x.mean(axis=-1)

    def backward(self, dout: np.ndarray) -> np.ndarray:
        length = self._shape[-1]
        return np.broadcast_to(dout[..., None] / length, self._shape).copy()


class Flatten(Layer):
    def __init__(self):
        self._shape = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout: np.ndarray) -> np.ndarray:
        return dout.reshape(self._shape)


class L2Normalize(Layer):
    """Scale every row to unit Euclidean norm."""

    def __init__(self, eps: float = 1e-12):
        self.eps = eps
        self._z: Optional[np.ndarray] = None
        self._norm: Optional[np.ndarray] = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        norm = np.maximum(np.linalg.norm(x, axis=1, keepdims=True), self.eps)
        self._norm = norm
        self._z = x / norm
        return self._z

    def backward(self, dout: np.ndarray) -> np.ndarray:
        z = self._z
        return (dout - z * np.sum(z * dout, axis=1, keepdims=True)) / self._norm


class Sequential(Layer):
    def __init__(self, **layers: Layer):
        self.layers = layers

    def forward(self, x: np.ndarray) -> np.ndarray:
        for layer in self.layers.values():
            x = layer.forward(x)
        return x

    def backward(self, dout: np.ndarray) -> np.ndarray:
        for layer in reversed(list(self.layers.values())):
            dout = layer.backward(dout)
        return dout

    def parameters(self) -> Dict[str, Parameter]:
        return {
            f"{name}.{pname}": p
            for name, layer in self.layers.items()
            for pname, p in layer.parameters().items()
        }


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = logits - logits.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
