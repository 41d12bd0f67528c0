"""Dense float64 vector helpers, counter-based randomness, finite differences.

The random primitives are pure functions of (seed, stream_id, counter): the
same triple always yields the same output, on any host, with no hidden state.
That contract is what lets two synchronized runs consume one shared sample
index stream without sharing a mutable generator.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DimensionError, NumericBlowupError, ValidationError

_MASK64 = 0xFFFFFFFFFFFFFFFF
_GOLDEN = 0x9E3779B97F4A7C15
_STREAM_SALT = 0xD1B54A32D192ED03
_DRAW_SALT = 0x8CB92BA72F3D8DD7


def as_vec(x) -> np.ndarray:
    """Coerce to a 1-D float64 array."""
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise DimensionError(f"expected a 1-D vector, got shape {v.shape}")
    return v


def require_finite(name: str, v: np.ndarray) -> np.ndarray:
    finite = np.isfinite(v)
    if not finite.all():
        coord = int(np.argmin(finite))
        raise NumericBlowupError(f"{name} is not finite", coordinate=coord)
    return v


def _check_dims(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")


def add(a, b) -> np.ndarray:
    a, b = as_vec(a), as_vec(b)
    _check_dims(a, b)
    return a + b


def sub(a, b) -> np.ndarray:
    a, b = as_vec(a), as_vec(b)
    _check_dims(a, b)
    return a - b


def mul(a, b) -> np.ndarray:
    a, b = as_vec(a), as_vec(b)
    _check_dims(a, b)
    return a * b


def div(a, b) -> np.ndarray:
    """Element-wise division; a zero divisor is an error, never a silent Inf."""
    a = as_vec(a)
    if np.isscalar(b) or np.ndim(b) == 0:
        if float(b) == 0.0:
            raise ValidationError("division by zero scalar")
        return a / float(b)
    b = as_vec(b)
    _check_dims(a, b)
    if (b == 0.0).any():
        coord = int(np.argmax(b == 0.0))
        raise ValidationError(f"division by zero at coordinate {coord}")
    return a / b


def square(a) -> np.ndarray:
    a = as_vec(a)
    return a * a


def scale(a, s: float) -> np.ndarray:
    return as_vec(a) * float(s)


def min_elem(a) -> float:
    a = as_vec(a)
    if a.size == 0:
        raise ValidationError("min_elem of an empty vector")
    return float(a.min())


def l2_norm(a) -> float:
    return float(np.linalg.norm(as_vec(a)))


def linf_norm(a) -> float:
    a = as_vec(a)
    return float(np.abs(a).max()) if a.size else 0.0


@dataclass(frozen=True)
class RngStream:
    """Address of a deterministic random stream.

    ``counter`` is a base offset; draw k of the stream reads position
    ``counter + k``. Streams with equal (seed, stream_id) are identical.
    """

    seed: int
    stream_id: int = 0
    counter: int = 0


def _mix(x: int) -> int:
    # splitmix64 finalizer
    x &= _MASK64
    x ^= x >> 30
    x = (x * 0xBF58476D1CE4E5B9) & _MASK64
    x ^= x >> 27
    x = (x * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def rng_u64(stream: RngStream, counter: int, salt: int = 0) -> int:
    """Uniform 64-bit word at a (seed, stream_id, counter, salt) address."""
    h = _mix(stream.seed & _MASK64)
    h = _mix(h ^ ((stream.stream_id * _GOLDEN) & _MASK64))
    h = _mix(h ^ (((stream.counter + counter) * _STREAM_SALT) & _MASK64))
    if salt:
        h = _mix(h ^ ((salt * _DRAW_SALT) & _MASK64))
    return h


def uniform01(stream: RngStream, counter: int, salt: int = 0) -> float:
    """Uniform double in [0, 1) with 53 random bits."""
    return (rng_u64(stream, counter, salt) >> 11) * (2.0 ** -53)


def draw_index(stream: RngStream, t: int, n: int, salt: int = 0) -> int:
    """Uniform index in [0, n) at step t, with modulo-rejection correction."""
    if n < 1:
        raise ValidationError(f"cannot draw an index from an empty range (n={n})")
    if n == 1:
        return 0
    bound = (2 ** 64 // n) * n
    attempt = 0
    while True:
        u = rng_u64(stream, t, salt ^ (attempt * _GOLDEN) if attempt else salt)
        if u < bound:
            return u % n
        attempt += 1


def derive_seed(*parts: int) -> int:
    """Fold integers into one 64-bit seed deterministically."""
    h = _GOLDEN
    for p in parts:
        h = _mix(h ^ ((int(p) * _STREAM_SALT) & _MASK64))
    return h


def fd_gradient(f: Callable[[np.ndarray], float], theta, h: float) -> np.ndarray:
    """Central-difference gradient: (f(x + h e_j) - f(x - h e_j)) / (2h)."""
    if not h > 0:
        raise ValidationError(f"finite-difference step must be positive, got {h}")
    theta = as_vec(theta)
    grad = np.empty_like(theta)
    for j in range(theta.size):
        e = np.zeros_like(theta)
        e[j] = h
        fp = float(f(theta + e))
        fm = float(f(theta - e))
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericBlowupError("non-finite function value in fd_gradient",
                                     coordinate=j)
        grad[j] = (fp - fm) / (2.0 * h)
    return grad
