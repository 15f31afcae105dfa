"""Firing-rate instrumentation and the theoretical MAC/AC energy model.

Energy accounting follows the standard 45nm per-operation costs
(multiply-accumulate 4.6 pJ, accumulate 0.9 pJ). For the dense baseline
every operator is costed in MACs; for the spiking network the first image
convolution keeps MAC cost while every other convolution or linear costs
accumulates scaled by the timestep count and a firing rate:

    first conv        e_mac * T * R_input * k^2 h w c_in c_out
    other conv        e_ac  * T * R       * k^2 h w c_in c_out
    q/k/v generation  e_ac  * T * mean(Rq, Rk, Rv) * 3 N D^2
    attention map     e_ac  * T * (Rq + Rk) * N D
    scale / softmax   no spiking cost (dense side: e_mac per op)
    output linear     e_ac  * T * R * N D^2
    mlp layers        e_ac  * T * R * N D_in D_out

The q/k/v row's rate follows the literal mean-of-q/k/v definition; the
block input rate is recorded alongside so the alternative accounting can
be recomputed from the same trace. The dense scale row is costed at
``e_mac`` because no separate multiply-only constant is defined; its
share is negligible at any realistic width.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch
from torch import nn

from .model import ModelConfig, SpikingTransformer

__all__ = [
    "firing_rate",
    "flops_conv",
    "flops_mlp",
    "EnergyConstants",
    "energy_vsa_layer",
    "linear_layer_energy",
    "attention_map_energy",
    "FiringRateTrace",
    "trace_sites",
    "sfr_trace",
    "zeroed_trace",
    "EnergyRow",
    "EnergyReport",
    "energy_spike_model",
    "token_grid",
    "export_heatmap",
    "export_attention_maps",
    "read_netpbm",
    "write_pgm",
    "certify_spike_driven",
    "CertificationReport",
    "SiteCheck",
]


def _to_numpy(tensor) -> np.ndarray:
    if isinstance(tensor, torch.Tensor):
        return tensor.detach().cpu().numpy()
    return np.asarray(tensor)


def firing_rate(spikes) -> float:
    """Proportion of nonzero elements of a binary spike tensor."""
    arr = _to_numpy(spikes)
    if arr.size == 0:
        raise ValueError("firing rate of an empty tensor is undefined")
    if not np.all((arr == 0) | (arr == 1)):
        raise ValueError("firing_rate expects a binary tensor")
    return float(np.count_nonzero(arr) / arr.size)


def flops_conv(k: int, h_out: int, w_out: int, c_in: int, c_out: int) -> int:
    """MACs of one convolution: kernel^2 x output area x channel product."""
    dims = (k, h_out, w_out, c_in, c_out)
    if any(int(d) != d or d < 1 for d in dims):
        raise ValueError(f"conv dimensions must be positive integers, got {dims}")
    return int(k) ** 2 * int(h_out) * int(w_out) * int(c_in) * int(c_out)


def flops_mlp(i: int, o: int) -> int:
    """MACs of one linear map per token: input width x output width."""
    if any(int(d) != d or d < 1 for d in (i, o)):
        raise ValueError(f"linear dimensions must be positive integers, got {(i, o)}")
    return int(i) * int(o)


@dataclass(frozen=True)
class EnergyConstants:
    """Per-operation energies in pJ (32-bit float, 45nm)."""

    e_mac: float = 4.6
    e_ac: float = 0.9

    def __post_init__(self) -> None:
        if self.e_mac <= 0 or self.e_ac <= 0:
            raise ValueError("energy constants must be positive")

    @property
    def e_scale(self) -> float:
        # no separate multiply-only constant is defined; use the MAC cost
        return self.e_mac


def energy_vsa_layer(
    n_tokens: int, d_channels: int, constants: EnergyConstants = EnergyConstants()
) -> float:
    """Dense softmax-attention energy per layer, in pJ.

    Rows: q/k/v generation (3ND^2), attention-map products (2N^2 D),
    softmax (2N^2), output linear (ND^2) at MAC cost, plus the scale row
    (N^2) at the multiply cost, here equal to ``e_mac``.
    """
    n, d = int(n_tokens), int(d_channels)
    if n < 1 or d < 1:
        raise ValueError("token and channel counts must be positive")
    macs = 3 * n * d * d + 2 * n * n * d + 2 * n * n + n * d * d
    return constants.e_mac * macs + constants.e_scale * n * n


def linear_layer_energy(
    n_tokens: int,
    d_in: int,
    d_out: int,
    timesteps: int,
    rate: float,
    constants: EnergyConstants = EnergyConstants(),
) -> float:
    """Spiking cost of one linear layer over all tokens: e_ac * T * R * N * d_in * d_out."""
    return constants.e_ac * timesteps * rate * n_tokens * flops_mlp(d_in, d_out)


def attention_map_energy(
    n_tokens: int,
    d_channels: int,
    timesteps: int,
    rate_q: float,
    rate_k: float,
    constants: EnergyConstants = EnergyConstants(),
) -> float:
    """Spiking cost of the attention-map stage: e_ac * T * (Rq + Rk) * N * D."""
    return constants.e_ac * timesteps * (rate_q + rate_k) * n_tokens * d_channels


# ---------------------------------------------------------------------------
# firing-rate traces
# ---------------------------------------------------------------------------


class FiringRateTrace:
    """Per-site firing rates, one row per spike tensor of the network.

    Sites follow a fixed schema (see :func:`trace_sites`): the four patch
    embed stages, six attention sites and two MLP sites per block, and the
    head input. Each row stores one rate per timestep plus their mean.
    ``input_density`` (the nonzero fraction of the raw image) feeds the
    first-conv energy row and is not part of the row schema.
    """

    def __init__(self, timesteps: int, collect_token_maps: bool = False):
        self.timesteps = int(timesteps)
        self.collect_token_maps = collect_token_maps
        self.input_density: Optional[float] = None
        self._rates: "OrderedDict[str, np.ndarray]" = OrderedDict()
        self.token_maps: "OrderedDict[str, np.ndarray]" = OrderedDict()

    def record_spikes(self, site: str, tensor) -> None:
        arr = _to_numpy(tensor)
        if arr.ndim < 1 or arr.shape[0] != self.timesteps:
            raise ValueError(
                f"site {site!r}: expected a [T={self.timesteps}, ...] tensor, "
                f"got shape {arr.shape}"
            )
        if site in self._rates:
            raise ValueError(f"site {site!r} recorded twice in one trace")
        flat = arr.reshape(self.timesteps, -1)
        per_t = np.count_nonzero(flat, axis=1) / flat.shape[1]
        self._rates[site] = per_t.astype(np.float64)

    def record_token_map(self, site: str, tensor) -> None:
        if not self.collect_token_maps:
            return
        arr = _to_numpy(tensor)
        if arr.ndim != 4:
            raise ValueError(f"token map for {site!r} expects [T, B, N, D]")
        self.token_maps[site] = arr.mean(axis=(0, 1, 3))

    def set_input_density(self, images) -> None:
        arr = _to_numpy(images)
        self.input_density = float(np.count_nonzero(arr) / arr.size)

    @property
    def sites(self) -> list:
        return list(self._rates)

    def per_timestep(self, site: str) -> np.ndarray:
        return self.require(site).copy()

    def rate(self, site: str) -> float:
        return float(self.require(site).mean())

    def require(self, site: str) -> np.ndarray:
        if site not in self._rates:
            raise ValueError(f"trace is missing site {site!r}")
        return self._rates[site]

    def set_rates(self, site: str, per_t) -> None:
        arr = np.asarray(per_t, dtype=np.float64)
        if arr.shape != (self.timesteps,):
            raise ValueError(f"per-timestep rates must have shape ({self.timesteps},)")
        self._rates[site] = arr

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            cols = ",".join(f"t{i + 1}" for i in range(self.timesteps))
            fh.write(f"site,{cols},average\n")
            for site, per_t in self._rates.items():
                rates = ",".join(f"{r:.6f}" for r in per_t)
                fh.write(f"{site},{rates},{per_t.mean():.6f}\n")


def trace_sites(cfg: ModelConfig) -> list:
    """Row schema of a firing-rate trace for this architecture."""
    sites = [f"sps.conv{i}" for i in range(1, 5)]
    for i in range(1, cfg.depth + 1):
        sites += [
            f"block{i}.attn.input",
            f"block{i}.attn.query",
            f"block{i}.attn.key",
            f"block{i}.attn.value",
            f"block{i}.attn.gate",
            f"block{i}.attn.output",
            f"block{i}.mlp.layer1",
            f"block{i}.mlp.layer2",
        ]
    sites.append("head.fc")
    return sites


def sfr_trace(
    model: SpikingTransformer, images, collect_token_maps: bool = False
) -> FiringRateTrace:
    """Run an instrumented inference pass and return its firing rates."""
    trace = FiringRateTrace(model.cfg.timesteps, collect_token_maps)
    images_t = torch.as_tensor(np.asarray(images), dtype=torch.float32)
    model.eval()
    with torch.no_grad():
        model(images_t, trace=trace)
    expected = trace_sites(model.cfg)
    if trace.sites != expected:
        missing = [s for s in expected if s not in trace.sites]
        raise RuntimeError(f"trace rows deviate from the schema; missing {missing}")
    return trace


def zeroed_trace(cfg: ModelConfig) -> FiringRateTrace:
    """A trace with every rate (and the input density) forced to zero."""
    trace = FiringRateTrace(cfg.timesteps)
    zeros = np.zeros(cfg.timesteps)
    for site in trace_sites(cfg):
        trace.set_rates(site, zeros)
    trace.input_density = 0.0
    return trace


# ---------------------------------------------------------------------------
# energy report
# ---------------------------------------------------------------------------


@dataclass
class EnergyRow:
    layer: str
    kind: str
    macs: float
    acs: float
    rate: Optional[float]
    timesteps: int
    energy_pj: float


@dataclass
class EnergyReport:
    """Per-layer MAC/AC counts and energies for both execution styles."""

    config: ModelConfig
    constants: EnergyConstants
    spike_rows: list = field(default_factory=list)
    dense_rows: list = field(default_factory=list)
    notes: list = field(default_factory=list)
    attention_dense_pj: float = 0.0
    attention_spike_pj: list = field(default_factory=list)

    @property
    def spike_total(self) -> float:
        return sum(r.energy_pj for r in self.spike_rows)

    @property
    def dense_total(self) -> float:
        return sum(r.energy_pj for r in self.dense_rows)

    @property
    def ratio(self) -> float:
        spike = self.spike_total
        return math.inf if spike == 0 else self.dense_total / spike

    @property
    def attention_ratio(self) -> float:
        if not self.attention_spike_pj:
            return math.inf
        mean_spike = sum(self.attention_spike_pj) / len(self.attention_spike_pj)
        return math.inf if mean_spike == 0 else self.attention_dense_pj / mean_spike

    def rows(self, side: str) -> list:
        if side not in ("spike", "dense"):
            raise ValueError(f"unknown report side {side!r}")
        return self.spike_rows if side == "spike" else self.dense_rows

    def to_csv(self, path, side: str = "spike") -> None:
        rows = self.rows(side)
        with open(path, "w") as fh:
            fh.write("layer,kind,macs,acs,rate,timesteps,energy_pj\n")
            for r in rows:
                rate = "" if r.rate is None else f"{r.rate:.6f}"
                fh.write(
                    f"{r.layer},{r.kind},{r.macs:.6f},{r.acs:.6f},"
                    f"{rate},{r.timesteps},{r.energy_pj:.6f}\n"
                )
            macs = sum(r.macs for r in rows)
            acs = sum(r.acs for r in rows)
            total = sum(r.energy_pj for r in rows)
            fh.write(f"TOTAL,,{macs:.6f},{acs:.6f},,,{total:.6f}\n")


def energy_spike_model(
    cfg: ModelConfig,
    trace: FiringRateTrace,
    constants: EnergyConstants = EnergyConstants(),
) -> EnergyReport:
    """Instantiate the energy-model rows for every layer of the network.

    The spiking side consumes the trace's firing rates; the dense side
    costs the identical layer list in MACs. Raises if the trace lacks a
    required site.
    """
    report = EnergyReport(config=cfg, constants=constants)
    t = cfg.timesteps
    n, d, hidden = cfg.tokens, cfg.dim, cfg.hidden_dim
    e_mac, e_ac = constants.e_mac, constants.e_ac

    def spike_row(layer, kind, fl, rate, mac_cost=False):
        if mac_cost:
            macs = t * rate * fl
            report.spike_rows.append(
                EnergyRow(layer, kind, macs, 0.0, rate, t, e_mac * macs)
            )
        else:
            acs = t * rate * fl
            report.spike_rows.append(
                EnergyRow(layer, kind, 0.0, acs, rate, t, e_ac * acs)
            )
        return report.spike_rows[-1]

    def dense_row(layer, kind, fl, cost=None):
        cost = e_mac if cost is None else cost
        report.dense_rows.append(
            EnergyRow(layer, kind, float(fl), 0.0, None, 1, cost * fl)
        )
        return report.dense_rows[-1]

    def zero_row(side_rows, layer, kind):
        side_rows.append(EnergyRow(layer, kind, 0.0, 0.0, None, t, 0.0))

    if trace.input_density is None:
        raise ValueError("trace is missing the input density of the raw image")

    # patch-embed convolutions; stage i sees the image at 1/2^(i-1) scale
    c_prev = cfg.in_channels
    for i, c_out in enumerate(cfg.sps_channels, start=1):
        h_out = cfg.height // (2 ** (i - 1))
        w_out = cfg.width // (2 ** (i - 1))
        fl = flops_conv(3, h_out, w_out, c_prev, c_out)
        rate = trace.input_density if i == 1 else trace.rate(f"sps.conv{i - 1}")
        spike_row(f"sps.conv{i}", "conv", fl, rate, mac_cost=(i == 1))
        dense_row(f"sps.conv{i}", "conv", fl)
        c_prev = c_out
    gh, gw = cfg.grid
    fl_pos = flops_conv(3, gh, gw, d, d)
    spike_row("sps.rpe", "conv", fl_pos, trace.rate("sps.conv4"))
    dense_row("sps.rpe", "conv", fl_pos)

    for i in range(1, cfg.depth + 1):
        prefix = f"block{i}"
        r_q = trace.rate(f"{prefix}.attn.query")
        r_k = trace.rate(f"{prefix}.attn.key")
        r_v = trace.rate(f"{prefix}.attn.value")
        r_bar = (r_q + r_k + r_v) / 3.0
        qkv = spike_row(f"{prefix}.attn.qkv", "linear", 3 * n * d * d, r_bar)
        dense_row(f"{prefix}.attn.qkv", "linear", 3 * n * d * d)
        amap = spike_row(f"{prefix}.attn.map", "mask-sum", n * d, r_q + r_k)
        dense_row(f"{prefix}.attn.map", "matmul", 2 * n * n * d)
        zero_row(report.spike_rows, f"{prefix}.attn.scale", "scale")
        dense_row(f"{prefix}.attn.scale", "scale", n * n, cost=constants.e_scale)
        zero_row(report.spike_rows, f"{prefix}.attn.softmax", "softmax")
        dense_row(f"{prefix}.attn.softmax", "softmax", 2 * n * n)
        out = spike_row(
            f"{prefix}.attn.out", "linear", n * d * d, trace.rate(f"{prefix}.attn.output")
        )
        dense_row(f"{prefix}.attn.out", "linear", n * d * d)
        report.attention_spike_pj.append(qkv.energy_pj + amap.energy_pj + out.energy_pj)
        spike_row(
            f"{prefix}.mlp.layer1", "linear", n * d * hidden,
            trace.rate(f"{prefix}.mlp.layer1"),
        )
        dense_row(f"{prefix}.mlp.layer1", "linear", n * d * hidden)
        spike_row(
            f"{prefix}.mlp.layer2", "linear", n * hidden * d,
            trace.rate(f"{prefix}.mlp.layer2"),
        )
        dense_row(f"{prefix}.mlp.layer2", "linear", n * hidden * d)

    fl_head = flops_mlp(d, cfg.num_classes)
    spike_row("head.fc", "linear", fl_head, trace.rate("head.fc"))
    dense_row("head.fc", "linear", fl_head)

    report.attention_dense_pj = energy_vsa_layer(n, d, constants)
    report.notes = [
        "scale row multiply cost taken equal to e_mac (no separate constant defined)",
        "dense attention figure is per layer",
        "qkv row rate = mean of q/k/v spike rates; the block input rate is the "
        "block*.attn.input trace row if the alternative accounting is wanted",
    ]
    return report


# ---------------------------------------------------------------------------
# attention maps and netpbm I/O
# ---------------------------------------------------------------------------


def token_grid(values, rows: int, cols: int) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64).reshape(-1)
    if arr.size != rows * cols:
        raise ValueError(f"{arr.size} token values do not fill a {rows}x{cols} grid")
    return arr.reshape(rows, cols)


def write_pgm(path, grid: np.ndarray) -> None:
    """8-bit binary portable graymap."""
    data = np.asarray(grid)
    if data.ndim != 2:
        raise ValueError("pgm output expects a 2-D grid")
    data = data.astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{data.shape[1]} {data.shape[0]}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def export_heatmap(values, rows: int, cols: int, base_path) -> tuple:
    """Write one token map as a CSV matrix and a min/max-scaled graymap.

    Returns ``(csv_path, pgm_path)``. A constant map scales to all zeros.
    """
    grid = token_grid(values, rows, cols)
    base = Path(base_path)
    csv_path = base.with_suffix(".csv")
    pgm_path = base.with_suffix(".pgm")
    with open(csv_path, "w") as fh:
        for row in grid:
            fh.write(",".join(f"{v:.6f}" for v in row) + "\n")
    span = grid.max() - grid.min()
    if span == 0:
        scaled = np.zeros_like(grid)
    else:
        scaled = np.round((grid - grid.min()) / span * 255.0)
    write_pgm(pgm_path, scaled)
    return csv_path, pgm_path


def export_attention_maps(trace: FiringRateTrace, grid: tuple, out_dir) -> dict:
    """Export every captured value/output token map of a trace.

    Returns ``{site: (csv_path, pgm_path)}``.
    """
    if not trace.token_maps:
        raise ValueError("trace has no token maps; rerun with collect_token_maps=True")
    rows, cols = grid
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = {}
    for site, values in trace.token_maps.items():
        stem = site.replace(".", "_")
        written[site] = export_heatmap(values, rows, cols, out_dir / stem)
    return written


def read_netpbm(path) -> np.ndarray:
    """Read P2/P3/P5/P6 netpbm images into float32 ``[C, H, W]`` in [0, 1]."""
    blob = Path(path).read_bytes()
    if blob[:1] != b"P" or blob[1:2] not in b"2356":
        raise ValueError(f"{path}: unsupported netpbm flavour")
    kind = blob[:2].decode("ascii")

    tokens = []
    pos = 2
    while len(tokens) < 3:
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        if blob[pos : pos + 1] == b"#":
            while pos < len(blob) and blob[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        tokens.append(int(blob[start:pos]))
    width, height, maxval = tokens
    pos += 1  # single whitespace after maxval

    channels = 3 if kind in ("P3", "P6") else 1
    count = width * height * channels
    if kind in ("P5", "P6"):
        dtype = np.dtype(">u2") if maxval > 255 else np.uint8
        flat = np.frombuffer(blob, dtype=dtype, count=count, offset=pos)
    else:
        ascii_values = blob[pos:].split()
        flat = np.array([int(v) for v in ascii_values[:count]], dtype=np.float64)
    img = np.asarray(flat, dtype=np.float32).reshape(height, width, channels)
    return (img / float(maxval)).transpose(2, 0, 1)


# ---------------------------------------------------------------------------
# binary-input certification
# ---------------------------------------------------------------------------


@dataclass
class SiteCheck:
    name: str
    binary: bool
    detail: str


@dataclass
class CertificationReport:
    ok: bool
    sites: list

    def failures(self) -> list:
        return [s for s in self.sites if not s.binary]


def certify_spike_driven(model: SpikingTransformer, images) -> CertificationReport:
    """Record the input of every conv/linear operator and check binariness.

    The first image convolution is exempt (it consumes the real-valued
    image by design); every other operator of a membrane-shortcut network
    must see strictly binary input. A spike-sum shortcut produces integer
    inputs and fails this check.
    """
    first_conv = model.patch_embed.convs[0]
    checks: list = []

    def make_hook(name):
        def hook(_module, inputs):
            x = inputs[0]
            binary = bool(((x == 0) | (x == 1)).all())
            detail = (
                "binary"
                if binary
                else f"non-binary (min={float(x.min()):.3f}, max={float(x.max()):.3f})"
            )
            checks.append(SiteCheck(name, binary, detail))

        return hook

    handles = []
    for name, m in model.named_modules():
        if isinstance(m, (nn.Conv2d, nn.Linear)) and m is not first_conv:
            handles.append(m.register_forward_pre_hook(make_hook(name)))
    try:
        images_t = torch.as_tensor(np.asarray(images), dtype=torch.float32)
        model.eval()
        with torch.no_grad():
            model(images_t)
    finally:
        for h in handles:
            h.remove()
    return CertificationReport(ok=all(c.binary for c in checks), sites=checks)
