"""Spiking transformer kernels, training and energy profiling."""

from .lif import (
    LifParams,
    LifTrace,
    heaviside,
    lif_backward,
    lif_forward,
    lif_forward_smooth,
    lif_run,
    surrogate_grad,
    surrogate_integral,
)
from .attention import (
    addition_count,
    dense_attention_reference,
    spike_attention_per_channel,
    spike_attention_v1,
    spike_attention_v2,
    variant_agreement,
)
from .model import (
    ModelConfig,
    SpikingTransformer,
    build_model,
    count_params,
    param_breakdown,
    standard_sps_channels,
)
from .checkpoint import load_checkpoint, load_model, save_checkpoint
from .data import Dataset, synth_dataset
from .train import (
    GradCheckReport,
    NonFiniteLossError,
    TrainConfig,
    Trainer,
    evaluate,
    grad_check,
)
from .profiling import (
    CertificationReport,
    EnergyConstants,
    EnergyReport,
    FiringRateTrace,
    certify_spike_driven,
    energy_spike_model,
    energy_vsa_layer,
    export_attention_maps,
    export_heatmap,
    firing_rate,
    flops_conv,
    flops_mlp,
    sfr_trace,
    trace_sites,
)

__version__ = "0.1.0"
