"""Multi-scale ReLU linear attention: inference, verification, and benchmarks.

The package implements the attention kernels (softmax, naive ReLU, linearized
ReLU), the multi-scale attention module and its convolutional blocks, the
B0-B3 backbone/segmentation/classification architectures with analytic
parameter and MAC accounting, deterministic initialization and checkpointing,
and a microbenchmark harness. See the `lmanet` CLI for the packaged entry
points.
"""

__version__ = "0.1.0"

from .attention import (
    ATTENTION_KINDS,
    AttentionConfig,
    attend,
    multi_head_attention,
    relu_attention_fast,
    relu_attention_fast_backward,
    relu_attention_naive,
    softmax_attention,
)
from .bench import BenchRecord, attention_macs, fit_loglog_slope, scaling_experiment, time_op, write_csv
from .blocks import DsConvConfig, MBConvConfig, MsaBlockConfig
from .errors import (
    ConfigurationError,
    DimensionError,
    FormatError,
    InputError,
    LmaError,
    ParameterError,
)
from .io import init_weights, load_checkpoint, load_ppm, save_checkpoint, save_pgm
from .model import (
    VARIANTS,
    Model,
    Pyramid,
    VariantConfig,
    backbone_forward,
    build_model,
    cls_head_forward,
    count_macs,
    count_params,
    macs_breakdown,
    model_forward,
    scaled_variant,
    seg_head_forward,
    weight_spec,
)
from .msa import MsaConfig, MsaWeights, aggregate_scale, msa_forward, qkv_project
from .verify import PropertyResult, run_suite
