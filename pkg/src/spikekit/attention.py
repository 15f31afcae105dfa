"""Addition-only attention over binary spike tensors.

All variants gate channels with a binary vector obtained from token-wise
column sums, so the only arithmetic inside the operator is integer
accumulation over the nonzero entries of an element-wise mask; there are no
multiplications, no scaling, and no softmax. Inputs are arrays shaped
``[..., N, D]`` (leading axes are typically timestep and batch), with every
entry exactly 0 or 1.

Because both the mask and the column sum act per channel, splitting D into
head slices and applying the operator per head yields exactly the same
values as applying it once to the full tensor; the ``heads`` argument is
validated for interface parity and determines how gate vectors group into
per-head rows, but it cannot change the output.

A dense softmax attention (`dense_attention_reference`) is included as the
behavioural and energy baseline.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "spike_attention_v1",
    "spike_attention_v2",
    "spike_attention_per_channel",
    "dense_attention_reference",
    "addition_count",
    "variant_agreement",
]


def _check_spikes(name: str, arr: np.ndarray) -> np.ndarray:
    a = np.asarray(arr)
    if a.ndim < 2:
        raise ValueError(f"{name} must have shape [..., tokens, channels]")
    if not np.all((a == 0) | (a == 1)):
        raise ValueError(f"{name} must be binary (entries exactly 0 or 1)")
    return a.astype(np.float64) if a.dtype.kind != "f" else a


def _check_inputs(q_s, k_s, v_s, heads: int):
    q = _check_spikes("q_s", q_s)
    k = _check_spikes("k_s", k_s)
    v = _check_spikes("v_s", v_s)
    if not (q.shape == k.shape == v.shape):
        raise ValueError(
            f"spike inputs must share a shape, got {q.shape}, {k.shape}, {v.shape}"
        )
    if heads < 1 or q.shape[-1] % heads != 0:
        raise ValueError(
            f"channel count {q.shape[-1]} is not divisible by heads={heads}"
        )
    return q, k, v


def _gate(colsum: np.ndarray, u_th: float) -> np.ndarray:
    return (colsum >= u_th).astype(colsum.dtype)


def spike_attention_v1(q_s, k_s, v_s, heads: int = 1, u_th: float = 1.0) -> np.ndarray:
    """Mask the value tensor by a query/key coincidence gate.

    The query and key spikes are multiplied element-wise (a mask), summed
    over tokens, and thresholded at ``u_th`` into a binary gate row per
    channel; the gate then zeroes or keeps whole channels of ``v_s``. The
    output is binary and never fires where ``v_s`` did not.
    """
    q, k, v = _check_inputs(q_s, k_s, v_s, heads)
    colsum = (q * k).sum(axis=-2)
    gate = _gate(colsum, u_th)
    return v * gate[..., None, :]


def spike_attention_v2(q_s, k_s, v_s, heads: int = 1, u_th: float = 1.0) -> np.ndarray:
    """Mask the query tensor by a key/value coincidence gate.

    Same construction as :func:`spike_attention_v1` with the roles
    rearranged so keys and values combine first, which makes the token-sum
    stage independent of the query and the cost linear in both tokens and
    channels.
    """
    q, k, v = _check_inputs(q_s, k_s, v_s, heads)
    colsum = (k * v).sum(axis=-2)
    gate = _gate(colsum, u_th)
    return q * gate[..., None, :]


def spike_attention_per_channel(q_s, k_s, v_s, heads=None, u_th: float = 1.0) -> np.ndarray:
    """One-channel-per-head form: each channel is gated by a key/value dot.

    For channel ``i`` the gate is ``step(k[:, i] . v[:, i] - u_th)`` and the
    output column is the query column masked by that scalar gate. ``heads``
    must be omitted or equal to the channel count.
    """
    q, k, v = _check_inputs(q_s, k_s, v_s, 1)
    channels = q.shape[-1]
    if heads is not None and heads != channels:
        raise ValueError(
            f"per-channel form requires heads == channels ({channels}), got {heads}"
        )
    dots = np.einsum("...nc,...nc->...c", k, v)
    gate = _gate(dots, u_th)
    return q * gate[..., None, :]


def dense_attention_reference(q, k, v, heads: int = 1, scale=None) -> np.ndarray:
    """Standard softmax attention, used as oracle and energy baseline.

    Operates per head on real-valued ``[..., N, D]`` tensors; ``scale``
    defaults to ``1 / sqrt(D / heads)``.
    """
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if not (q.shape == k.shape == v.shape) or q.ndim < 2:
        raise ValueError("q, k, v must share a shape [..., tokens, channels]")
    d = q.shape[-1]
    if heads < 1 or d % heads != 0:
        raise ValueError(f"channel count {d} is not divisible by heads={heads}")
    head_dim = d // heads
    if scale is None:
        scale = 1.0 / np.sqrt(head_dim)

    lead = q.shape[:-2]
    n = q.shape[-2]
    qh = q.reshape(*lead, n, heads, head_dim)
    kh = k.reshape(*lead, n, heads, head_dim)
    vh = v.reshape(*lead, n, heads, head_dim)
    logits = np.einsum("...nhd,...mhd->...hnm", qh, kh) * scale
    logits -= logits.max(axis=-1, keepdims=True)
    weights = np.exp(logits)
    weights /= weights.sum(axis=-1, keepdims=True)
    out = np.einsum("...hnm,...mhd->...nhd", weights, vh)
    return out.reshape(q.shape)


def addition_count(a_s, b_s) -> int:
    """Exact number of scalar additions in the token-sum stage.

    Summing the columns of the element-wise mask ``a_s * b_s`` accumulates
    one addition per nonzero mask entry; mask (Hadamard) operations
    themselves cost nothing. For the query/key-gated variant pass
    ``(q_s, k_s)``; for the key/value-gated variant pass ``(k_s, v_s)``.
    """
    a = _check_spikes("a_s", a_s)
    b = _check_spikes("b_s", b_s)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return int(np.count_nonzero(a * b))


def variant_agreement(q_s, k_s, v_s, u_th: float = 1.0) -> float:
    """Fraction of elements where the two gated variants agree.

    The two forms are not algebraically identical in general; this
    diagnostic reports their element-wise agreement rate instead of
    asserting equivalence.
    """
    out1 = spike_attention_v1(q_s, k_s, v_s, u_th=u_th)
    out2 = spike_attention_v2(q_s, k_s, v_s, u_th=u_th)
    return float(np.mean(out1 == out2))
