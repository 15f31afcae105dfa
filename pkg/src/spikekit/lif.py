"""Leaky integrate-and-fire neuron primitives.

Array conventions used throughout the package: the leading axis is time,
spike tensors contain exactly 0.0 or 1.0, and membrane tensors hold finite
reals. Everything here is a pure function over value-semantics arrays; no
state is shared between calls, so concurrent use on disjoint data is safe.

The neuron update per timestep is

    u[t] = h[t-1] + x[t]
    s[t] = step(u[t] - u_th)          (fires at u >= u_th)
    h[t] = v_reset * s[t] + beta * u[t] * (1 - s[t])

with h[-1] = 0. Training-time gradients replace the firing step's
derivative with a rectangular window (``surrogate_grad``); the leak gate
s[t] inside the h-update is treated as a constant during backpropagation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

__all__ = [
    "LifParams",
    "LifTrace",
    "heaviside",
    "surrogate_grad",
    "surrogate_integral",
    "lif_forward",
    "lif_run",
    "lif_backward",
    "lif_forward_smooth",
]


@dataclass(frozen=True)
class LifParams:
    """Constants of one spiking neuron layer.

    ``u_th`` is the firing threshold, ``beta`` the leak factor applied to a
    non-firing membrane, ``v_reset`` the post-spike reset value, and
    ``surrogate_width`` the half-width of the rectangular window used as the
    training-time derivative of the firing step.
    """

    u_th: float = 1.0
    beta: float = 0.5
    v_reset: float = 0.0
    surrogate_width: float = 0.5

    def __post_init__(self) -> None:
        for name in ("u_th", "beta", "v_reset", "surrogate_width"):
            value = getattr(self, name)
            if not np.isfinite(value):
                raise ValueError(f"{name} must be finite, got {value}")
        if not 0.0 < self.beta < 1.0:
            raise ValueError(f"beta must lie in (0, 1), got {self.beta}")
        if not self.u_th > self.v_reset:
            raise ValueError(
                f"u_th ({self.u_th}) must exceed v_reset ({self.v_reset})"
            )
        if not self.surrogate_width > 0.0:
            raise ValueError(
                f"surrogate_width must be positive, got {self.surrogate_width}"
            )


class LifTrace(NamedTuple):
    """Full record of one forward pass."""

    spikes: np.ndarray  # binary, same shape as the input
    membranes: np.ndarray  # pre-threshold u[t], same shape as the input
    h_final: np.ndarray  # carry state after the last step


def _as_float_array(x, name: str) -> np.ndarray:
    arr = np.asarray(x)
    if arr.dtype.kind != "f":
        arr = arr.astype(np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must contain only finite values")
    return arr


def heaviside(x):
    """Firing step: 1.0 where ``x >= 0``, else 0.0.

    Accepts scalars or arrays and rejects non-finite input. The returned
    dtype matches the (float) input dtype.
    """
    arr = _as_float_array(x, "heaviside input")
    out = (arr >= 0).astype(arr.dtype)
    if np.ndim(x) == 0:
        return float(out)
    return out


def surrogate_grad(x, width: float):
    """Rectangular surrogate for the firing step's derivative.

    Returns ``1 / (2 * width)`` where ``|x| <= width`` and 0 elsewhere.
    The caller is expected to have subtracted the threshold already.
    """
    if not width > 0.0:
        raise ValueError(f"surrogate width must be positive, got {width}")
    arr = _as_float_array(x, "surrogate_grad input")
    inside = np.abs(arr) <= width
    out = inside.astype(arr.dtype) / arr.dtype.type(2.0 * width)
    if np.ndim(x) == 0:
        return float(out)
    return out


def surrogate_integral(x, width: float):
    """Antiderivative of ``surrogate_grad``: a hard sigmoid on [-width, width].

    This is the smoothed replacement for the firing step used by the
    gradient-check oracles; its exact derivative is ``surrogate_grad``.
    """
    if not width > 0.0:
        raise ValueError(f"surrogate width must be positive, got {width}")
    arr = _as_float_array(x, "surrogate_integral input")
    w = arr.dtype.type(width)
    out = np.clip((arr + w) / (2 * w), 0.0, 1.0)
    if np.ndim(x) == 0:
        return float(out)
    return out


def lif_run(x, params: LifParams) -> LifTrace:
    """Run the neuron over a ``[T, ...]`` input and keep all intermediate state.

    The arithmetic is carried out in the input's float dtype with a fixed
    expression order, so results are bit-identical to an element-wise scalar
    simulation of the same dtype.
    """
    arr = _as_float_array(x, "lif input")
    if arr.ndim < 1 or arr.shape[0] < 1:
        raise ValueError("lif input needs a leading time axis of length >= 1")
    dt = arr.dtype.type
    u_th, beta = dt(params.u_th), dt(params.beta)
    v_reset, one = dt(params.v_reset), dt(1.0)

    spikes = np.empty_like(arr)
    membranes = np.empty_like(arr)
    h = np.zeros_like(arr[0])
    for t in range(arr.shape[0]):
        u = h + arr[t]
        s = (u >= u_th).astype(arr.dtype)
        h = v_reset * s + (beta * u) * (one - s)
        membranes[t] = u
        spikes[t] = s
    return LifTrace(spikes=spikes, membranes=membranes, h_final=h)


def lif_forward(x, params: LifParams):
    """Spiking forward pass. Returns ``(spikes, h_final)``.

    Use :func:`lif_run` when the pre-threshold membranes are needed, e.g.
    to drive :func:`lif_backward`.
    """
    trace = lif_run(x, params)
    return trace.spikes, trace.h_final


def lif_backward(
    upstream_grad,
    membranes,
    params: LifParams,
    grad_h_final=None,
    gates: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Backpropagate through the neuron given saved pre-threshold membranes.

    ``upstream_grad`` holds dLoss/dSpike per step. The spatial path uses the
    rectangular surrogate at ``u[t] - u_th``; the temporal path propagates
    through ``h[t]`` with the leak factor ``beta * (1 - gate[t])`` where the
    gate is held constant (no derivative through the gate itself). By
    default the gate is the binary firing decision recomputed from the
    membranes; pass ``gates`` to reuse the values of a smoothed forward.

    Returns dLoss/dInput with the shape of ``membranes``.
    """
    g_up = np.asarray(upstream_grad, dtype=np.float64)
    u = np.asarray(membranes, dtype=np.float64)
    if u.size == 0 or u.ndim < 1:
        raise ValueError("saved membranes are missing or empty")
    if g_up.shape != u.shape:
        raise ValueError(
            f"upstream grad shape {g_up.shape} does not match membranes {u.shape}"
        )
    if gates is None:
        gate_arr = (u >= params.u_th).astype(np.float64)
    else:
        gate_arr = np.asarray(gates, dtype=np.float64)
        if gate_arr.shape != u.shape:
            raise ValueError("gate shape does not match membranes")

    width = params.surrogate_width
    beta = params.beta
    g_h = (
        np.zeros_like(u[0])
        if grad_h_final is None
        else np.asarray(grad_h_final, dtype=np.float64)
    )
    grad_x = np.empty_like(u)
    for t in range(u.shape[0] - 1, -1, -1):
        window = surrogate_grad(u[t] - params.u_th, width)
        g_u = g_up[t] * window + g_h * (beta * (1.0 - gate_arr[t]))
        grad_x[t] = g_u
        g_h = g_u
    return grad_x


def lif_forward_smooth(x, params: LifParams, frozen_gates=None):
    """Smoothed relaxation of the forward pass, for gradient checking.

    The firing step is replaced by :func:`surrogate_integral`. The leak gate
    defaults to the smooth output itself; passing ``frozen_gates`` (the gate
    values of an unperturbed base run) makes the h-update's gate independent
    of the input, which mirrors the constant-gate treatment of
    :func:`lif_backward` so central differences of this function match it.

    Returns ``(outputs, gates, membranes)``.
    """
    arr = _as_float_array(x, "lif input").astype(np.float64)
    if arr.ndim < 1 or arr.shape[0] < 1:
        raise ValueError("lif input needs a leading time axis of length >= 1")
    u_th, beta = params.u_th, params.beta
    v_reset, width = params.v_reset, params.surrogate_width

    outputs = np.empty_like(arr)
    gates_out = np.empty_like(arr)
    membranes = np.empty_like(arr)
    h = np.zeros_like(arr[0])
    for t in range(arr.shape[0]):
        u = h + arr[t]
        s = surrogate_integral(u - u_th, width)
        gate = s if frozen_gates is None else np.asarray(frozen_gates[t], dtype=np.float64)
        h = v_reset * gate + (beta * u) * (1.0 - gate)
        outputs[t] = s
        gates_out[t] = gate
        membranes[t] = u
    return outputs, gates_out, membranes
