"""Banks of identically shaped affine experts and their activations."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .tensor_core import DimensionError, Rng, as_matrix

__all__ = [
    "Activation",
    "BankFormatError",
    "ExpertBank",
    "Placement",
    "activate",
    "activation_grad",
    "expert_forward",
    "init_bank",
    "load_bank",
    "save_bank",
]

_SQRT_2_OVER_PI = float(np.sqrt(2.0 / np.pi))  # python float keeps float32 inputs float32


class Activation(str, Enum):
    IDENTITY = "identity"
    RELU = "relu"
    GELU = "gelu"
    TANH = "tanh"


class Placement(str, Enum):
    """Where the activation sits relative to the score-weighted sum."""

    INSIDE = "in"
    OUTSIDE = "out"


def activate(z: np.ndarray, kind: Activation) -> np.ndarray:
    kind = Activation(kind)
    if kind is Activation.IDENTITY:
        return z
    if kind is Activation.RELU:
        return np.maximum(z, 0)
    if kind is Activation.TANH:
        return np.tanh(z)
    # tanh approximation of GELU
    return 0.5 * z * (1.0 + np.tanh(_SQRT_2_OVER_PI * (z + 0.044715 * (z * z * z))))


def activation_grad(z: np.ndarray, kind: Activation) -> np.ndarray:
    """Elementwise derivative of ``activate(z, kind)`` with respect to ``z``."""
    kind = Activation(kind)
    if kind is Activation.IDENTITY:
        return np.ones_like(z)
    if kind is Activation.RELU:
        return (z > 0).astype(z.dtype)
    if kind is Activation.TANH:
        return 1.0 - np.tanh(z) ** 2
    inner = _SQRT_2_OVER_PI * (z + 0.044715 * (z * z * z))
    t = np.tanh(inner)
    d_inner = _SQRT_2_OVER_PI * (1.0 + 3 * 0.044715 * (z * z))
    return 0.5 * (1.0 + t) + 0.5 * z * (1.0 - t**2) * d_inner


@dataclass
class ExpertBank:
    """``n`` experts ``x -> x @ W_k + b_k``.

    ``weights`` has shape ``(n, d_in, d_out)`` and ``biases`` ``(n, d_out)``.
    """

    weights: np.ndarray
    biases: np.ndarray
    activation: Activation = Activation.IDENTITY

    def __post_init__(self):
        w = np.asarray(self.weights)
        b = np.asarray(self.biases)
        if w.dtype not in (np.float32, np.float64):
            w = w.astype(np.float64)
        b = b.astype(w.dtype, copy=False)
        if w.ndim != 3 or w.shape[0] < 1:
            raise DimensionError(f"weights must have shape (n>=1, d_in, d_out), got {w.shape}")
        if b.shape != (w.shape[0], w.shape[2]):
            raise DimensionError(f"biases {b.shape} do not match weights {w.shape}")
        self.weights = w
        self.biases = b
        self.activation = Activation(self.activation)

    @property
    def n(self) -> int:
        return self.weights.shape[0]

    @property
    def d_in(self) -> int:
        return self.weights.shape[1]

    @property
    def d_out(self) -> int:
        return self.weights.shape[2]

    def astype(self, dtype) -> "ExpertBank":
        return ExpertBank(self.weights.astype(dtype), self.biases.astype(dtype), self.activation)

    def permuted(self, perm) -> "ExpertBank":
        """Bank whose expert ``j`` is this bank's expert ``perm[j]``."""
        perm = np.asarray(perm)
        return ExpertBank(self.weights[perm], self.biases[perm], self.activation)


def init_bank(n: int, d_in: int, d_out: int, activation: Activation = Activation.IDENTITY,
              seed: int = 0) -> ExpertBank:
    """Glorot-uniform weights, zero biases."""
    if n < 1 or d_in < 1 or d_out < 1:
        raise ValueError(f"bank sizes must be positive, got n={n}, d_in={d_in}, d_out={d_out}")
    a = np.sqrt(6.0 / (d_in + d_out))
    weights = Rng(seed).uniform(-a, a, (n, d_in, d_out))
    return ExpertBank(weights, np.zeros((n, d_out)), activation)


def expert_forward(x, bank: ExpertBank, k: int, apply_activation: bool = True) -> np.ndarray:
    if not 0 <= k < bank.n:
        raise IndexError(f"expert {k} out of range for a bank of {bank.n}")
    x = as_matrix(x)
    if x.shape[1] != bank.d_in:
        raise DimensionError(f"input {x.shape} does not match expert input width {bank.d_in}")
    z = x @ bank.weights[k] + bank.biases[k]
    return activate(z, bank.activation) if apply_activation else z


# on-disk layout: magic, version, n, d_in, d_out, activation tag; then
# little-endian float64 weights and biases in expert-major order
_MAGIC = b"MEOBANK\x00"
_VERSION = 1
_HEADER = struct.Struct("<8sIQQQI")
_TAGS = list(Activation)


class BankFormatError(ValueError):
    pass


def save_bank(bank: ExpertBank, path) -> None:
    header = _HEADER.pack(_MAGIC, _VERSION, bank.n, bank.d_in, bank.d_out, _TAGS.index(bank.activation))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(bank.weights.astype("<f8").tobytes(order="C"))
        fh.write(bank.biases.astype("<f8").tobytes(order="C"))


def load_bank(path) -> ExpertBank:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise BankFormatError(f"{path}: truncated header")
    magic, version, n, d_in, d_out, tag = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise BankFormatError(f"{path}: bad magic {magic!r}")
    if version != _VERSION:
        raise BankFormatError(f"{path}: unsupported version {version}")
    if tag >= len(_TAGS):
        raise BankFormatError(f"{path}: unknown activation tag {tag}")
    n_w = n * d_in * d_out
    expected = _HEADER.size + 8 * (n_w + n * d_out)
    if len(raw) != expected:
        raise BankFormatError(f"{path}: expected {expected} bytes, found {len(raw)}")
    body = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    weights = body[:n_w].reshape(n, d_in, d_out).astype(np.float64)
    biases = body[n_w:].reshape(n, d_out).astype(np.float64)
    return ExpertBank(weights, biases, _TAGS[tag])
