"""Parameter containers, dense layers and the fused LSTM sequence op."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from stepcast import kernels
from stepcast.autodiff import tensor as T
from stepcast.autodiff.tensor import ShapeError, Tensor

ACTIVATIONS = {
    "identity": T.identity,
    "relu": T.relu,
    "sigmoid": T.sigmoid,
    "tanh": T.tanh,
}


class ParameterSet:
    """Named trainable tensors, iterated in sorted-name order."""

    def __init__(self, params: dict[str, Tensor] | None = None):
        self._params: dict[str, Tensor] = {}
        for name, p in (params or {}).items():
            self.add(name, p)

    def add(self, name: str, value) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        p = value if isinstance(value, Tensor) else Tensor(value)
        p.requires_grad = True
        p.name = name
        self._params[name] = p
        return p

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def __iter__(self) -> Iterator[str]:
        return iter(sorted(self._params))

    def items(self) -> Iterator[tuple[str, Tensor]]:
        for name in self:
            yield name, self._params[name]

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None

    def grads(self) -> dict[str, np.ndarray]:
        return {
            name: (np.zeros_like(p.value) if p.grad is None else p.grad)
            for name, p in self.items()
        }

    def state(self) -> dict[str, np.ndarray]:
        return {name: p.value.copy() for name, p in self.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        if set(state) != set(self._params):
            missing = set(self._params) ^ set(state)
            raise KeyError(f"parameter names differ: {sorted(missing)}")
        for name, value in state.items():
            value = np.asarray(value, dtype=np.float64)
            if value.shape != self._params[name].shape:
                raise ShapeError(f"{name}: expected {self._params[name].shape}, got {value.shape}")
            self._params[name].value = value.copy()

    def num_parameters(self) -> int:
        return int(sum(p.value.size for p in self._params.values()))


def glorot_uniform(rng: np.random.Generator, shape: tuple[int, int]) -> np.ndarray:
    fan_out, fan_in = shape
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def dense_forward(x, W, b, activation: str = "identity") -> Tensor:
    """``activation(x @ W.T + b)`` for a vector or a batch of row vectors."""
    if activation not in ACTIVATIONS:
        raise ValueError(f"unknown activation {activation!r}")
    x, W, b = T.as_tensor(x), T.as_tensor(W), T.as_tensor(b)
    if W.ndim != 2 or x.shape[-1] != W.shape[1] or b.shape != (W.shape[0],):
        raise ShapeError(f"dense shapes incompatible: x{x.shape}, W{W.shape}, b{b.shape}")
    return ACTIVATIONS[activation](T.matmul(x, _transpose(W)) + b)


def _transpose(W: Tensor) -> Tensor:
    return T._node(W.value.T, (W,), lambda g: (g.T,))


@dataclass
class LSTMCellParams:
    """Weights of one LSTM layer; gate blocks are ordered input, forget, output, candidate."""

    W_ih: Tensor
    W_hh: Tensor
    b: Tensor
    hidden_size: int
    input_size: int

    def __post_init__(self):
        h, d = self.hidden_size, self.input_size
        if self.W_ih.shape != (4 * h, d) or self.W_hh.shape != (4 * h, h) or self.b.shape != (4 * h,):
            raise ShapeError(
                f"LSTM params inconsistent with h={h}, d={d}: "
                f"W_ih{self.W_ih.shape}, W_hh{self.W_hh.shape}, b{self.b.shape}"
            )

    @classmethod
    def init(cls, rng: np.random.Generator, input_size: int, hidden_size: int,
             params: ParameterSet | None = None, prefix: str = "lstm") -> "LSTMCellParams":
        h = hidden_size
        b = np.zeros(4 * h)
        b[h : 2 * h] = 1.0
        values = {
            "W_ih": glorot_uniform(rng, (4 * h, input_size)),
            "W_hh": glorot_uniform(rng, (4 * h, h)),
            "b": b,
        }
        if params is not None:
            tensors = {k: params.add(f"{prefix}.{k}", v) for k, v in values.items()}
        else:
            tensors = {k: Tensor(v, requires_grad=True, name=f"{prefix}.{k}") for k, v in values.items()}
        return cls(hidden_size=h, input_size=input_size, **tensors)

    @classmethod
    def from_params(cls, params: ParameterSet, prefix: str) -> "LSTMCellParams":
        W_ih = params[f"{prefix}.W_ih"]
        return cls(W_ih=W_ih, W_hh=params[f"{prefix}.W_hh"], b=params[f"{prefix}.b"],
                   hidden_size=W_ih.shape[0] // 4, input_size=W_ih.shape[1])


def lstm_sequence(x, W_ih, W_hh, b, h0=None, c0=None) -> tuple[Tensor, Tensor]:
    """Fused LSTM over a batch ``x`` of shape (B, T, D).

    Returns a packed tensor of shape (B, T, 2H) holding hidden states in the
    first H channels and cell states in the last H, plus the hidden size. The
    forward and BPTT passes run in :mod:`stepcast.kernels`.
    """
    x, W_ih, W_hh, b = (T.as_tensor(v) for v in (x, W_ih, W_hh, b))
    B, steps, D = x.shape
    H = W_hh.shape[1]
    if W_ih.shape != (4 * H, D) or W_hh.shape != (4 * H, H) or b.shape != (4 * H,):
        raise ShapeError(
            f"LSTM shape mismatch: input dim {D}, W_ih{W_ih.shape}, W_hh{W_hh.shape}, b{b.shape}"
        )
    h0 = T.as_tensor(np.zeros((B, H)) if h0 is None else h0)
    c0 = T.as_tensor(np.zeros((B, H)) if c0 is None else c0)
    if h0.shape != (B, H) or c0.shape != (B, H):
        raise ShapeError(f"initial state shapes {h0.shape}, {c0.shape} != {(B, H)}")
    hs, cs, gates = kernels.lstm_forward(x.value, W_ih.value, W_hh.value, b.value, h0.value, c0.value)

    def backward(g):
        dx, dWi, dWh, db, dh0, dc0 = kernels.lstm_backward(
            x.value, W_ih.value, W_hh.value, h0.value, c0.value, hs, cs, gates,
            np.ascontiguousarray(g[..., :H]), np.ascontiguousarray(g[..., H:]),
        )
        return dx, dWi, dWh, db, dh0, dc0

    packed = T._node(np.concatenate([hs, cs], axis=-1), (x, W_ih, W_hh, b, h0, c0), backward)
    return packed, H


def lstm_forward(sequence, params: LSTMCellParams, h0=None, c0=None) -> tuple[Tensor, Tensor, Tensor]:
    """Run one LSTM layer.

    ``sequence`` is (w, d) or batched (B, w, d). Returns ``(hidden_states,
    final_h, final_c)`` with the same batching. A zero-length sequence returns
    the initial state unchanged.
    """
    seq = T.as_tensor(sequence)
    batched = seq.ndim == 3
    if seq.ndim not in (2, 3):
        raise ShapeError(f"sequence must be (w, d) or (B, w, d), got {seq.shape}")
    if seq.shape[-1] != params.input_size:
        raise ShapeError(f"input dim {seq.shape[-1]} != LSTM input size {params.input_size}")
    H = params.hidden_size
    if not batched:
        seq = T.reshape(seq, (1,) + seq.shape)
        h0 = None if h0 is None else T.reshape(T.as_tensor(h0), (1, H))
        c0 = None if c0 is None else T.reshape(T.as_tensor(c0), (1, H))
    B, steps = seq.shape[0], seq.shape[1]
    if steps == 0:
        h = T.as_tensor(np.zeros((B, H)) if h0 is None else h0)
        c = T.as_tensor(np.zeros((B, H)) if c0 is None else c0)
        empty = Tensor(np.zeros((B, 0, H)))
        if not batched:
            return Tensor(np.zeros((0, H))), T.reshape(h, (H,)), T.reshape(c, (H,))
        return empty, h, c
    packed, _ = lstm_sequence(seq, params.W_ih, params.W_hh, params.b, h0, c0)
    hs = packed[:, :, :H]
    h_last = packed[:, -1, :H]
    c_last = packed[:, -1, H:]
    if not batched:
        return T.reshape(hs, (steps, H)), T.reshape(h_last, (H,)), T.reshape(c_last, (H,))
    return hs, h_last, c_last
