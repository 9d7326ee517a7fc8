"""Configuration, persistence and the staged command-line pipeline."""

from .config import RunConfig, load_config, preset, save_config, with_overrides
from .pipeline import (
    RunManifest,
    configure_threads,
    decode_states,
    encode,
    evaluate,
    evaluate_arrays,
    forecast,
    forecast_pipeline,
    generate,
    ingest,
    load_decoder,
    load_propagator,
    train_decoder_stage,
    train_propagator_stage,
)

__all__ = [
    "RunConfig",
    "load_config",
    "preset",
    "save_config",
    "with_overrides",
    "RunManifest",
    "configure_threads",
    "decode_states",
    "encode",
    "evaluate",
    "evaluate_arrays",
    "forecast",
    "forecast_pipeline",
    "generate",
    "ingest",
    "load_decoder",
    "load_propagator",
    "train_decoder_stage",
    "train_propagator_stage",
]
