"""Size models, trace format and synthetic workload generation."""
from .generator import CalibrationError, TraceParams, TraceReport, gen_trace, sample_code_sizes, trace_statistics
from .sizes import (
    DEFAULT_MODEL,
    SIZE_MODEL_VERSION,
    FitError,
    LogFit,
    MessageSize,
    SizeModel,
    VerkleWitnessModel,
    default_verkle_model,
    fit_log_regression,
    hexary_proof_sizes,
    message_bytes,
    reference_access_set,
)
from .storage import monte_carlo_loss, savings_from_fractions, storage_savings
from .trace import AccessTrace, TraceOp, TraceParseError, TraceSchemaError, emit_trace, parse_trace, read_trace, write_trace

__all__ = [
    "AccessTrace",
    "CalibrationError",
    "DEFAULT_MODEL",
    "FitError",
    "LogFit",
    "MessageSize",
    "SIZE_MODEL_VERSION",
    "SizeModel",
    "TraceOp",
    "TraceParams",
    "TraceParseError",
    "TraceReport",
    "TraceSchemaError",
    "VerkleWitnessModel",
    "default_verkle_model",
    "emit_trace",
    "fit_log_regression",
    "gen_trace",
    "hexary_proof_sizes",
    "message_bytes",
    "monte_carlo_loss",
    "parse_trace",
    "read_trace",
    "sample_code_sizes",
    "savings_from_fractions",
    "storage_savings",
    "reference_access_set",
    "trace_statistics",
    "write_trace",
]
