"""Spiking transformer with membrane-potential residual connections.

The network is a convolutional patch-splitting front end followed by
encoder blocks whose attention masks value channels with a binary gate
(see :mod:`spikekit.attention`) and a token-wise classification head.
Residual additions always happen on pre-threshold membranes, so every
linear and convolution after the first image convolution consumes a
strictly binary tensor. A spike-sum residual variant (``shortcut="sew"``)
exists only as the negative control for that property.

Tensors flow as ``[T, B, ...]`` with the time axis first. Spiking layers
are implemented with a custom autograd step whose backward is the
rectangular surrogate window from :mod:`spikekit.lif`; the leak gate in
the temporal state update is detached, matching ``lif.lif_backward``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .lif import LifParams

__all__ = [
    "ModelConfig",
    "standard_sps_channels",
    "SpikingTransformer",
    "build_model",
    "count_params",
    "param_breakdown",
    "LIF",
    "ThresholdGate",
    "gated_value_mask",
    "set_spike_mode",
    "set_gate_mode",
    "set_kink_tracking",
    "clear_kinks",
    "collect_kinks",
]

REDUCTION = 16  # four conv stages, each followed by a 2x2 max-pool


@dataclass(frozen=True)
class ModelConfig:
    """Architecture description; the parameter count is a pure function of it."""

    timesteps: int = 4
    depth: int = 2
    dim: int = 64
    heads: int = 4
    mlp_ratio: float = 4.0
    in_channels: int = 3
    height: int = 32
    width: int = 32
    num_classes: int = 4
    sps_channels: Optional[tuple] = None
    lif: LifParams = LifParams()

    def __post_init__(self) -> None:
        if min(self.timesteps, self.depth, self.dim, self.heads) < 1:
            raise ValueError("timesteps, depth, dim and heads must be positive")
        if self.in_channels < 1 or self.num_classes < 2:
            raise ValueError("need at least one input channel and two classes")
        if self.dim % self.heads != 0:
            raise ValueError(f"dim {self.dim} not divisible by heads {self.heads}")
        if self.height % REDUCTION or self.width % REDUCTION:
            raise ValueError(
                f"height and width must be divisible by {REDUCTION}, "
                f"got {self.height}x{self.width}"
            )
        if self.mlp_ratio <= 0:
            raise ValueError("mlp_ratio must be positive")
        hidden = self.dim * self.mlp_ratio
        if abs(hidden - round(hidden)) > 1e-9:
            raise ValueError("dim * mlp_ratio must be an integer")
        channels = self.sps_channels
        if channels is None:
            channels = standard_sps_channels(self.dim)
            object.__setattr__(self, "sps_channels", channels)
        channels = tuple(int(c) for c in channels)
        object.__setattr__(self, "sps_channels", channels)
        if len(channels) != 4 or min(channels) < 1:
            raise ValueError("sps_channels must be four positive integers")
        if channels[-1] != self.dim:
            raise ValueError(
                f"last patch-embed stage must output dim={self.dim}, got {channels[-1]}"
            )

    @property
    def grid(self) -> tuple:
        return (self.height // REDUCTION, self.width // REDUCTION)

    @property
    def tokens(self) -> int:
        gh, gw = self.grid
        return gh * gw

    @property
    def hidden_dim(self) -> int:
        return int(round(self.dim * self.mlp_ratio))


def standard_sps_channels(dim: int) -> tuple:
    """Default doubling channel progression ending at ``dim``."""
    if dim % 8 != 0:
        raise ValueError(f"default progression needs dim divisible by 8, got {dim}")
    return (dim // 8, dim // 4, dim // 2, dim)


# ---------------------------------------------------------------------------
# spiking steps
# ---------------------------------------------------------------------------


class _SpikeStep(torch.autograd.Function):
    """Binary firing step with a rectangular surrogate backward."""

    @staticmethod
    def forward(ctx, v, width):
        ctx.save_for_backward(v)
        ctx.width = width
        return (v >= 0).to(v.dtype)

    @staticmethod
    def backward(ctx, grad_out):
        (v,) = ctx.saved_tensors
        window = (v.abs() <= ctx.width).to(v.dtype) / (2.0 * ctx.width)
        return grad_out * window, None


class _SmoothStep(torch.autograd.Function):
    """Hard-sigmoid relaxation of the firing step; same backward window."""

    @staticmethod
    def forward(ctx, v, width):
        ctx.save_for_backward(v)
        ctx.width = width
        return ((v + width) / (2.0 * width)).clamp(0.0, 1.0)

    @staticmethod
    def backward(ctx, grad_out):
        (v,) = ctx.saved_tensors
        window = (v.abs() <= ctx.width).to(v.dtype) / (2.0 * ctx.width)
        return grad_out * window, None


def _region_codes(v: torch.Tensor, width: float) -> torch.Tensor:
    # -1 below the surrogate window, 0 inside, +1 above; used to detect
    # probes whose perturbation crosses a kink of the relaxed network.
    return (v > width).to(torch.int8) - (v < -width).to(torch.int8)


class LIF(nn.Module):
    """Temporal spiking layer over the leading time axis.

    ``mode`` selects the binary step or its smooth relaxation. The leak
    gate is always detached; in ``record``/``replay`` gate modes the gate
    values of a base forward are captured and reused so that finite
    differences of the smooth model probe exactly the gradient the
    backward computes.
    """

    def __init__(self, params: LifParams):
        super().__init__()
        self.u_th = float(params.u_th)
        self.beta = float(params.beta)
        self.v_reset = float(params.v_reset)
        self.width = float(params.surrogate_width)
        self.mode = "spike"
        self.gate_mode = "live"
        self.gate_tape = None
        self.track_kinks = False
        self._kinks = []

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        step = _SpikeStep if self.mode == "spike" else _SmoothStep
        steps = x.shape[0]
        if self.gate_mode == "replay":
            if self.gate_tape is None or len(self.gate_tape) != steps:
                raise RuntimeError("gate replay requested without a matching tape")
        tape = [] if self.gate_mode == "record" else None
        h = torch.zeros_like(x[0])
        outs = []
        for t in range(steps):
            u = h + x[t]
            v = u - self.u_th
            if self.track_kinks:
                self._kinks.append(_region_codes(v.detach(), self.width))
            s = step.apply(v, self.width)
            if self.gate_mode == "replay":
                gate = self.gate_tape[t]
            else:
                gate = s.detach()
                if tape is not None:
                    tape.append(gate.clone())
            h = self.v_reset * gate + (self.beta * u) * (1.0 - gate)
            outs.append(s)
        if tape is not None:
            self.gate_tape = tape
        return torch.stack(outs)


class ThresholdGate(nn.Module):
    """Stateless firing step at ``u_th``; the attention gate's neuron."""

    def __init__(self, params: LifParams):
        super().__init__()
        self.u_th = float(params.u_th)
        self.width = float(params.surrogate_width)
        self.mode = "spike"
        self.track_kinks = False
        self._kinks = []

    def forward(self, pre: torch.Tensor) -> torch.Tensor:
        v = pre - self.u_th
        if self.track_kinks:
            self._kinks.append(_region_codes(v.detach(), self.width))
        step = _SpikeStep if self.mode == "spike" else _SmoothStep
        return step.apply(v, self.width)


class TrackedPool(nn.Module):
    """2x2 max-pool that can record its argmax routing for kink detection."""

    def __init__(self):
        super().__init__()
        self.track_kinks = False
        self._kinks = []

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if self.track_kinks:
            out, idx = F.max_pool2d(x, kernel_size=2, return_indices=True)
            self._kinks.append(idx)
            return out
        return F.max_pool2d(x, kernel_size=2)


# ---------------------------------------------------------------------------
# mode helpers
# ---------------------------------------------------------------------------


def set_spike_mode(model: nn.Module, mode: str) -> None:
    """Switch every spiking layer between ``spike`` and ``smooth``."""
    if mode not in ("spike", "smooth"):
        raise ValueError(f"unknown spike mode {mode!r}")
    for m in model.modules():
        if isinstance(m, (LIF, ThresholdGate)):
            m.mode = mode


def set_gate_mode(model: nn.Module, mode: str) -> None:
    """Switch LIF leak gates between live, record and replay behaviour."""
    if mode not in ("live", "record", "replay"):
        raise ValueError(f"unknown gate mode {mode!r}")
    for m in model.modules():
        if isinstance(m, LIF):
            m.gate_mode = mode
            if mode == "live":
                m.gate_tape = None


def set_kink_tracking(model: nn.Module, enabled: bool) -> None:
    for m in model.modules():
        if isinstance(m, (LIF, ThresholdGate, TrackedPool)):
            m.track_kinks = enabled
            m._kinks = []


def clear_kinks(model: nn.Module) -> None:
    for m in model.modules():
        if isinstance(m, (LIF, ThresholdGate, TrackedPool)):
            m._kinks = []


def collect_kinks(model: nn.Module) -> list:
    """Flat list of kink signatures (region codes / pool routes) in module order."""
    out = []
    for _, m in model.named_modules():
        if isinstance(m, (LIF, ThresholdGate, TrackedPool)):
            out.extend(m._kinks)
    return out


# ---------------------------------------------------------------------------
# network components
# ---------------------------------------------------------------------------


def _over_time(fn, x: torch.Tensor) -> torch.Tensor:
    t, b = x.shape[:2]
    y = fn(x.reshape(t * b, *x.shape[2:]))
    return y.reshape(t, b, *y.shape[1:])


class TokenNorm(nn.Module):
    """Per-channel batch normalisation of ``[T, B, N, D]`` token tensors.

    Statistics are shared across timestep, batch and token axes; at
    inference the running estimates act as folded constants.
    """

    def __init__(self, dim: int):
        super().__init__()
        self.bn = nn.BatchNorm1d(dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        t, b, n, d = x.shape
        y = x.reshape(t * b, n, d).transpose(1, 2)
        y = self.bn(y)
        return y.transpose(1, 2).reshape(t, b, n, d)


class PatchEmbed(nn.Module):
    """Convolutional front end producing token membranes ``[T, B, N, D]``.

    Three conv/norm/spike/pool stages, a fourth conv/norm/pool stage whose
    pooled membrane is the shortcut carrier, a spiking layer on that
    membrane, and a position-embedding convolution over the spikes whose
    normalised output is added back onto the membrane.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        c1, c2, c3, c4 = cfg.sps_channels
        chain = (cfg.in_channels, c1, c2, c3, c4)
        self.convs = nn.ModuleList(
            nn.Conv2d(chain[i], chain[i + 1], 3, padding=1, bias=False)
            for i in range(4)
        )
        self.norms = nn.ModuleList(nn.BatchNorm2d(c) for c in (c1, c2, c3, c4))
        self.spikes = nn.ModuleList(LIF(cfg.lif) for _ in range(3))
        self.pools = nn.ModuleList(TrackedPool() for _ in range(4))
        self.out_spike = LIF(cfg.lif)
        self.pos_conv = nn.Conv2d(c4, c4, 3, padding=1, bias=False)
        self.pos_norm = nn.BatchNorm2d(c4)

    def forward(self, x: torch.Tensor, trace=None) -> torch.Tensor:
        for i in range(3):
            x = _over_time(lambda z, i=i: self.norms[i](self.convs[i](z)), x)
            x = self.spikes[i](x)
            if trace is not None:
                trace.record_spikes(f"sps.conv{i + 1}", x)
            x = _over_time(self.pools[i], x)
        x = _over_time(lambda z: self.norms[3](self.convs[3](z)), x)
        u = _over_time(self.pools[3], x)
        s = self.out_spike(u)
        if trace is not None:
            trace.record_spikes("sps.conv4", s)
        pos = _over_time(lambda z: self.pos_norm(self.pos_conv(z)), s)
        u0 = u + pos
        return u0.flatten(3).transpose(2, 3)


def gated_value_mask(q_s, k_s, v_s, gate_module: ThresholdGate):
    """Token-sum the query/key mask, fire the gate, mask value channels.

    The gate acts per channel, so per-head application is implied by any
    head slicing of the channel axis. Returns ``(masked_values, gate)``.
    """
    coincidence = (q_s * k_s).sum(dim=-2)
    gate = gate_module(coincidence)
    return v_s * gate.unsqueeze(-2), gate


class GatedAttention(nn.Module):
    """Attention with binary channel gating and no multiplies between spikes."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        dim = cfg.dim
        self.heads = cfg.heads
        self.q_proj = nn.Linear(dim, dim, bias=False)
        self.k_proj = nn.Linear(dim, dim, bias=False)
        self.v_proj = nn.Linear(dim, dim, bias=False)
        self.out_proj = nn.Linear(dim, dim, bias=False)
        self.q_norm = TokenNorm(dim)
        self.k_norm = TokenNorm(dim)
        self.v_norm = TokenNorm(dim)
        self.out_norm = TokenNorm(dim)
        self.q_spike = LIF(cfg.lif)
        self.k_spike = LIF(cfg.lif)
        self.v_spike = LIF(cfg.lif)
        self.gate = ThresholdGate(cfg.lif)

    def forward(self, s: torch.Tensor, trace=None, prefix: str = "") -> torch.Tensor:
        q = self.q_spike(self.q_norm(self.q_proj(s)))
        k = self.k_spike(self.k_norm(self.k_proj(s)))
        v = self.v_spike(self.v_norm(self.v_proj(s)))
        if trace is not None:
            trace.record_spikes(prefix + ".query", q)
            trace.record_spikes(prefix + ".key", k)
            trace.record_spikes(prefix + ".value", v)
            trace.record_token_map(prefix + ".value", v)
        masked, gate = gated_value_mask(q, k, v, self.gate)
        if trace is not None:
            trace.record_spikes(prefix + ".gate", gate)
            trace.record_spikes(prefix + ".output", masked)
            trace.record_token_map(prefix + ".output", masked)
        return self.out_norm(self.out_proj(masked))


class FeedForward(nn.Module):
    """Two spiking linear layers with a configurable hidden width."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        hidden = cfg.hidden_dim
        self.lin1 = nn.Linear(cfg.dim, hidden, bias=False)
        self.norm1 = TokenNorm(hidden)
        self.spike = LIF(cfg.lif)
        self.lin2 = nn.Linear(hidden, cfg.dim, bias=False)
        self.norm2 = TokenNorm(cfg.dim)

    def forward(self, s: torch.Tensor, trace=None, prefix: str = "") -> torch.Tensor:
        if trace is not None:
            trace.record_spikes(prefix + ".layer1", s)
        h = self.spike(self.norm1(self.lin1(s)))
        if trace is not None:
            trace.record_spikes(prefix + ".layer2", h)
        return self.norm2(self.lin2(h))


class EncoderBlock(nn.Module):
    """One attention + feed-forward block.

    With the membrane shortcut (default) the block maps a membrane tensor
    to a membrane tensor and every operator inside sees binary input. With
    the spike-sum (``sew``) shortcut it maps spike counts to spike counts,
    which makes operator inputs multi-bit; that variant exists only so the
    binary-input certifier has a negative control.
    """

    def __init__(self, cfg: ModelConfig, index: int, shortcut: str = "membrane"):
        super().__init__()
        if shortcut not in ("membrane", "sew"):
            raise ValueError(f"unknown shortcut kind {shortcut!r}")
        self.index = index
        self.shortcut = shortcut
        self.entry_spike = LIF(cfg.lif)
        self.attn = GatedAttention(cfg)
        self.mid_spike = LIF(cfg.lif)
        self.mlp = FeedForward(cfg)

    def forward(self, x: torch.Tensor, trace=None) -> torch.Tensor:
        p = f"block{self.index}"
        if self.shortcut == "membrane":
            s = self.entry_spike(x)
            if trace is not None:
                trace.record_spikes(p + ".attn.input", s)
            u_attn = self.attn(s, trace, p + ".attn") + x
            s_mid = self.mid_spike(u_attn)
            return self.mlp(s_mid, trace, p + ".mlp") + u_attn
        # spike-sum residual: additions between spike tensors (negative control)
        if trace is not None:
            trace.record_spikes(p + ".attn.input", x)
        s_attn = self.entry_spike(self.attn(x, trace, p + ".attn"))
        x = x + s_attn
        s_mlp = self.mid_spike(self.mlp(x, trace, p + ".mlp"))
        return x + s_mlp


class SpikingTransformer(nn.Module):
    """Full network: patch embed, encoder blocks, token-wise head.

    The classification head is applied per token before global average
    pooling; because the head is affine, this equals pooling first and
    keeps its input binary. Logits are averaged over tokens and then over
    timesteps.
    """

    def __init__(self, cfg: ModelConfig, shortcut: str = "membrane"):
        super().__init__()
        self.cfg = cfg
        self.shortcut = shortcut
        self.patch_embed = PatchEmbed(cfg)
        self.blocks = nn.ModuleList(
            EncoderBlock(cfg, i + 1, shortcut) for i in range(cfg.depth)
        )
        self.final_spike = LIF(cfg.lif)
        self.head = nn.Linear(cfg.dim, cfg.num_classes, bias=True)

    def forward(self, images: torch.Tensor, trace=None) -> torch.Tensor:
        cfg = self.cfg
        if images.ndim != 4 or images.shape[1:] != (
            cfg.in_channels,
            cfg.height,
            cfg.width,
        ):
            raise ValueError(
                f"expected images [B, {cfg.in_channels}, {cfg.height}, {cfg.width}], "
                f"got {tuple(images.shape)}"
            )
        x = images.unsqueeze(0).repeat(cfg.timesteps, 1, 1, 1, 1)
        if trace is not None:
            trace.set_input_density(images)
        u0 = self.patch_embed(x, trace)
        return self.forward_tokens(u0, trace)

    def forward_tokens(self, u0: torch.Tensor, trace=None) -> torch.Tensor:
        if self.shortcut == "membrane":
            u = u0
            for block in self.blocks:
                u = block(u, trace)
            s = self.final_spike(u)
        else:
            s = self.final_spike(u0)
            for block in self.blocks:
                s = block(s, trace)
        if trace is not None:
            trace.record_spikes("head.fc", s)
        logits = self.head(s)
        return logits.mean(dim=2).mean(dim=0)


# ---------------------------------------------------------------------------
# construction and counting
# ---------------------------------------------------------------------------


def build_model(
    cfg: ModelConfig, seed: int = 0, shortcut: str = "membrane"
) -> SpikingTransformer:
    """Build a network with weights drawn deterministically from ``seed``."""
    model = SpikingTransformer(cfg, shortcut)
    _init_weights(model, seed)
    return model


def _init_weights(model: SpikingTransformer, seed: int) -> None:
    rng = np.random.default_rng(seed)
    with torch.no_grad():
        for name, m in model.named_modules():
            if isinstance(m, nn.Conv2d):
                fan_in = m.in_channels * m.kernel_size[0] * m.kernel_size[1]
                std = float(np.sqrt(2.0 / fan_in))
                m.weight.copy_(
                    torch.from_numpy(rng.normal(0.0, std, m.weight.shape))
                )
            elif isinstance(m, nn.Linear):
                scale = 1.0 if name == "head" else 2.0
                std = float(np.sqrt(scale / m.in_features))
                m.weight.copy_(
                    torch.from_numpy(rng.normal(0.0, std, m.weight.shape))
                )
                if m.bias is not None:
                    m.bias.zero_()
            elif isinstance(m, (nn.BatchNorm1d, nn.BatchNorm2d)):
                m.weight.fill_(1.0)
                m.bias.zero_()
                m.running_mean.zero_()
                m.running_var.fill_(1.0)
                m.num_batches_tracked.zero_()


def count_params(model: nn.Module) -> int:
    """Exact number of learnable scalars, normalisation affines included."""
    return sum(p.numel() for p in model.parameters())


def param_breakdown(model: SpikingTransformer) -> dict:
    """Learnable-scalar counts keyed by top-level component."""
    out = {}
    for name, child in model.named_children():
        n = sum(p.numel() for p in child.parameters())
        if n:
            out[name] = n
    return out


def replace_timesteps(cfg: ModelConfig, timesteps: int) -> ModelConfig:
    """Same architecture run for a different number of timesteps."""
    return dataclasses.replace(cfg, timesteps=timesteps)
