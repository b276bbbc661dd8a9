from .corpus import (
    Recording,
    SubjectPairIndex,
    read_corpus,
    write_corpus,
    select_dynamic_records,
    CorpusError,
)
from .sampling import WindowSample, TrainingBatch, plan_offsets, sample_window, build_batch
from .synth import SynthConfig, generate_corpus

__all__ = [
    "Recording",
    "SubjectPairIndex",
    "read_corpus",
    "write_corpus",
    "select_dynamic_records",
    "CorpusError",
    "WindowSample",
    "TrainingBatch",
    "plan_offsets",
    "sample_window",
    "build_batch",
    "SynthConfig",
    "generate_corpus",
]
