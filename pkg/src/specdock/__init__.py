"""specdock: a learnware dock for language-model tasks.

Models are registered together with a low-rank parameter-vector
specification fitted on a shared anchor model; user tasks are matched to
registered models by cosine similarity between specification vectors. The
dock never sees anyone's raw data, only spec vectors and model URIs.
"""

from .anchor import (
    AnchorConfig,
    AnchorModel,
    LabeledExample,
    LoraAdapter,
    TokenSeq,
    forward,
    grad_b,
    init_adapter,
    init_anchor,
    loss,
    predict,
    tokenize,
)
from .bench import BenchConfig, BenchReport, TaskFamily, make_family, run_bench
from .errors import SpecDockError
from .estimator import SpecificationVectorizer
from .identify import RankedMatch, cosine, identify, low_rank_agreement_probe
from .registry import AnchorDescriptor, Learnware, Registry, open_registry, read_spec_file, write_spec_file
from .specgen import (
    GroundTruth,
    ModelLabeler,
    PRESETS,
    Specification,
    TrainConfig,
    build_spec,
    load_jsonl_dataset,
    lr_at,
    opt_step,
    preset,
    save_jsonl_dataset,
    spec_from_adapter,
    train_adapter,
)

__version__ = "0.1.0"

__all__ = [
    "AnchorConfig",
    "AnchorModel",
    "AnchorDescriptor",
    "BenchConfig",
    "BenchReport",
    "GroundTruth",
    "LabeledExample",
    "Learnware",
    "LoraAdapter",
    "ModelLabeler",
    "PRESETS",
    "RankedMatch",
    "Registry",
    "SpecDockError",
    "Specification",
    "SpecificationVectorizer",
    "TaskFamily",
    "TokenSeq",
    "TrainConfig",
    "build_spec",
    "cosine",
    "forward",
    "grad_b",
    "identify",
    "init_adapter",
    "init_anchor",
    "load_jsonl_dataset",
    "loss",
    "low_rank_agreement_probe",
    "lr_at",
    "make_family",
    "open_registry",
    "opt_step",
    "predict",
    "preset",
    "read_spec_file",
    "run_bench",
    "save_jsonl_dataset",
    "spec_from_adapter",
    "tokenize",
    "train_adapter",
    "write_spec_file",
    "__version__",
]
