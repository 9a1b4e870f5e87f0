"""Strictly proper SISO filters in controllable canonical form."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit


@dataclass(frozen=True)
class TransferFunction:
    """``num(s)/den(s)`` with coefficients in ascending powers of ``s``.

    The denominator is normalized to be monic. Construction fails for
    improper or unstable filters.
    """

    num: tuple
    den: tuple

    def __post_init__(self):
        num = np.trim_zeros(np.asarray(self.num, dtype=float), "b")
        den = np.trim_zeros(np.asarray(self.den, dtype=float), "b")
        if den.size < 2:
            raise ValueError("denominator must have degree >= 1")
        if num.size == 0:
            raise ValueError("numerator is identically zero")
        if not (np.all(np.isfinite(num)) and np.all(np.isfinite(den))):
            raise ValueError("non-finite filter coefficient")
        if num.size >= den.size:
            raise ValueError(
                f"filter must be strictly proper: deg num = {num.size - 1}, deg den = {den.size - 1}"
            )
        lead = den[-1]
        num, den = num / lead, den / lead
        poles = np.roots(den[::-1])
        if np.any(poles.real >= 0):
            raise ValueError(f"filter is not asymptotically stable, poles {poles}")
        object.__setattr__(self, "num", tuple(float(c) for c in num))
        object.__setattr__(self, "den", tuple(float(c) for c in den))

    @classmethod
    def from_poles(cls, poles, gain: float = 1.0) -> TransferFunction:
        den = np.real(np.poly(poles))[::-1]
        return cls((gain,), tuple(den))

    @property
    def order(self) -> int:
        return len(self.den) - 1

    def __call__(self, s):
        s = np.asarray(s, dtype=complex)
        return np.polyval(self.num[::-1], s) / np.polyval(self.den[::-1], s)

    def to_dict(self) -> dict:
        return {"num": list(self.num), "den": list(self.den)}


@dataclass(frozen=True)
class StateSpace:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray

    @property
    def order(self) -> int:
        return self.A.shape[0]

    def frequency_response(self, s):
        n = self.order
        return np.array(
            [self.C @ np.linalg.solve(si * np.eye(n) - self.A, self.B) for si in np.atleast_1d(s)]
        )


def realize(tf: TransferFunction) -> StateSpace:
    """Controllable canonical realization; state-derivative chain ending in the input row."""
    n = tf.order
    den = np.asarray(tf.den)
    A = np.zeros((n, n))
    A[:-1, 1:] = np.eye(n - 1)
    A[-1, :] = -den[:-1]
    B = np.zeros(n)
    B[-1] = 1.0
    C = np.zeros(n)
    C[: len(tf.num)] = tf.num
    return StateSpace(A, B, C)


@njit(cache=True)
def _filter_step(A, B, C, n, x, u, dx):
    """dx = A x + B u over the first n entries; returns the output C x."""
    y = 0.0
    for i in range(n):
        acc = B[i] * u
        for j in range(n):
            acc += A[i, j] * x[j]
        dx[i] = acc
        y += C[i] * x[i]
    return y


class FilterBank:
    """Replicated copies of one SISO filter, one per input channel."""

    def __init__(self, tf: TransferFunction, channels: int):
        if channels < 1:
            raise ValueError("a filter bank needs at least one channel")
        self.tf = tf
        self.ss = realize(tf)
        self.channels = channels
        self.x = np.zeros((channels, self.ss.order))

    @property
    def outputs(self) -> np.ndarray:
        return self.x @ self.ss.C

    def derivative(self, inputs, x=None):
        """Returns (state derivative, outputs) for the given per-channel inputs."""
        return filter_derivative(self, inputs, x)


def filter_derivative(bank: FilterBank, inputs, x=None):
    inputs = np.atleast_1d(np.asarray(inputs, dtype=float))
    if inputs.shape != (bank.channels,):
        raise ValueError(f"expected {bank.channels} input channels, got shape {inputs.shape}")
    x = bank.x if x is None else np.asarray(x, dtype=float).reshape(bank.x.shape)
    A, B, C = bank.ss.A, bank.ss.B, bank.ss.C
    dx = np.empty_like(x)
    y = np.empty(bank.channels)
    for k in range(bank.channels):
        y[k] = _filter_step(A, B, C, bank.ss.order, x[k], inputs[k], dx[k])
    return dx, y
