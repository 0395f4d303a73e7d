"""hf_bridge: LWSPEC01 specification files from real causal language models.

Registers real models with the same dock as the toy pipeline: the descriptor
names the shared pretrained anchor, adapters train B only on its q/k/v
projections, and the flattened result is written in the dock's binary spec
format.
"""

from .descriptor import PAPER_PRESET, RealAnchorDescriptor
from .genspec import (
    BridgeTrainConfig,
    LowRankAdapter,
    attach_adapters,
    encode_spec_file,
    flatten_adapters,
    gen_real_spec,
    load_instruction_dataset,
    submit_spec,
    train_b_factors,
)

__version__ = "0.1.0"

__all__ = [
    "BridgeTrainConfig",
    "LowRankAdapter",
    "PAPER_PRESET",
    "RealAnchorDescriptor",
    "attach_adapters",
    "encode_spec_file",
    "flatten_adapters",
    "gen_real_spec",
    "load_instruction_dataset",
    "submit_spec",
    "train_b_factors",
    "__version__",
]
