"""Experiment specifications: one experiment kind, one sweep axis, a SimConfig and a trace source.

Specs are TOML files::

    schema = "statenet-experiment/1"
    kind = "search-iterations"
    name = "search_k"
    [sim]
    nodes = 1000
    prefix_lens = 6
    [trace]            # or: file = "trace.csv"
    seed = 1
    [trace.params]
    blocks = 50
    [sweep]
    axis = "k"
    values = [4, 8, 16, 32]
    [options]
    lookups = 400
"""
from __future__ import annotations

import functools
import hashlib
import json
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from importlib import resources
from pathlib import Path
from typing import Any, Optional

from .network import SimConfig
from .workload.generator import TraceParams, gen_trace
from .workload.trace import AccessTrace, read_trace

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

SCHEMA = "statenet-experiment/1"

AXES = {
    "search-iterations": ("k", "prefix_len", "nodes"),
    "bandwidth-vs-prefix": ("prefix_len",),
    "bandwidth-vs-cache": ("cache_fraction", "cache_bytes"),
    "verkle-bandwidth": ("cache_fraction", "cache_bytes"),
    "propagation-latency": ("block_bytes",),
    "storage-savings": ("stored_fraction", "prefix_len"),
    "protocol-convergence": ("blocks",),
}
KINDS = tuple(AXES)

OPTIONS = {
    "search-iterations": {"lookups": 400},
    "bandwidth-vs-prefix": {"measured_nodes": 64, "warmup": 0, "prewarm": False},
    "bandwidth-vs-cache": {"measured_nodes": 16, "warmup": 0, "prewarm": True, "prefix_len": 6},
    "verkle-bandwidth": {"measured_nodes": 16, "warmup": 0, "prewarm": True, "prefix_len": 6},
    "propagation-latency": {"validation_ms": 0.0, "table_peers": 64},
    "storage-savings": {"trials": 1_000_000, "replication_items": 10_000},
    "protocol-convergence": {},
}


class ConfigError(ValueError):
    """Malformed or inconsistent experiment specification."""


@dataclass(frozen=True)
class TraceSource:
    file: Optional[str] = None
    params: TraceParams = TraceParams()
    seed: int = 1

    def load(self) -> AccessTrace:
        if self.file is not None:
            return read_trace(self.file)
        return _generated(self.params, self.seed)

    def describe(self) -> dict:
        if self.file is not None:
            data = Path(self.file).read_bytes()
            return {"file": Path(self.file).name, "sha256": hashlib.sha256(data).hexdigest()}
        return {"seed": self.seed, "params": self.params.to_dict()}


@functools.lru_cache(maxsize=4)
def _generated(params: TraceParams, seed: int) -> AccessTrace:
    trace, _ = gen_trace(params, seed)
    return trace


@dataclass
class ExperimentSpec:
    kind: str
    axis: str
    values: list
    sim: SimConfig = field(default_factory=SimConfig)
    trace: TraceSource = TraceSource()
    options: dict = field(default_factory=dict)
    name: str = ""
    output: Optional[str] = None

    def __post_init__(self) -> None:
        if self.kind not in AXES:
            raise ConfigError(f"unknown experiment kind {self.kind!r}; expected one of {', '.join(KINDS)}")
        if self.axis not in AXES[self.kind]:
            raise ConfigError(f"{self.kind} sweeps over {' | '.join(AXES[self.kind])}, not {self.axis!r}")
        if not self.values:
            raise ConfigError("sweep needs at least one value")
        unknown = set(self.options) - set(OPTIONS[self.kind])
        if unknown:
            raise ConfigError(f"unknown options for {self.kind}: {sorted(unknown)}")
        self.options = {**OPTIONS[self.kind], **self.options}
        self.name = self.name or self.kind

    @property
    def seed(self) -> int:
        return self.sim.seed

    def to_dict(self) -> dict:
        sim = asdict(self.sim)
        return {
            "schema": SCHEMA,
            "kind": self.kind,
            "name": self.name,
            "sim": sim,
            "trace": self.trace.describe() if self.kind in TRACE_KINDS else None,
            "sweep": {"axis": self.axis, "values": list(self.values)},
            "options": dict(sorted(self.options.items())),
        }

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=list)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


TRACE_KINDS = ("bandwidth-vs-prefix", "bandwidth-vs-cache", "verkle-bandwidth", "protocol-convergence")


def _sim_config(d: dict) -> SimConfig:
    names = {f.name for f in fields(SimConfig)}
    unknown = set(d) - names
    if unknown:
        raise ConfigError(f"unknown [sim] keys: {sorted(unknown)}")
    d = dict(d)
    for key in ("prefix_lens", "latency_ms"):
        if isinstance(d.get(key), list):
            d[key] = tuple(d[key])
    return SimConfig(**d)


def _trace_source(d: dict, base: Optional[Path]) -> TraceSource:
    unknown = set(d) - {"file", "seed", "params"}
    if unknown:
        raise ConfigError(f"unknown [trace] keys: {sorted(unknown)}")
    if "file" in d:
        p = Path(d["file"])
        if base is not None and not p.is_absolute():
            p = base / p
        return TraceSource(file=str(p))
    names = {f.name for f in fields(TraceParams)}
    params = d.get("params", {})
    bad = set(params) - names
    if bad:
        raise ConfigError(f"unknown trace params: {sorted(bad)}")
    # TOML has no null: false switches off an optional calibration target
    params = {k: (None if v is False else v) for k, v in params.items()}
    return TraceSource(params=TraceParams(**params), seed=int(d.get("seed", 1)))


def spec_from_dict(d: dict, base: Optional[Path] = None) -> ExperimentSpec:
    if d.get("schema", SCHEMA) != SCHEMA:
        raise ConfigError(f"unsupported schema {d.get('schema')!r}")
    allowed = {"schema", "kind", "name", "sim", "trace", "sweep", "options", "output"}
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    if "kind" not in d:
        raise ConfigError("missing 'kind'")
    sweep = d.get("sweep", {})
    if "axis" not in sweep or "values" not in sweep:
        raise ConfigError("[sweep] needs 'axis' and 'values'")
    try:
        return ExperimentSpec(
            kind=d["kind"],
            axis=sweep["axis"],
            values=list(sweep["values"]),
            sim=_sim_config(d.get("sim", {})),
            trace=_trace_source(d.get("trace", {}), base),
            options=dict(d.get("options", {})),
            name=d.get("name", ""),
            output=d.get("output"),
        )
    except TypeError as e:
        raise ConfigError(str(e)) from e


def load_spec(path) -> ExperimentSpec:
    p = Path(path)
    try:
        d = tomllib.loads(p.read_text())
    except (OSError, tomllib.TOMLDecodeError) as e:
        raise ConfigError(f"{p}: {e}") from e
    return spec_from_dict(d, p.parent)


def acceptance_spec(name: str) -> ExperimentSpec:
    """One of the shipped acceptance configurations (``data/acceptance/<name>.toml``)."""
    ref = resources.files("statenet") / "data" / "acceptance" / f"{name}.toml"
    try:
        text = ref.read_text()
    except FileNotFoundError as e:
        raise ConfigError(f"no shipped acceptance config named {name!r}") from e
    return spec_from_dict(tomllib.loads(text))


def acceptance_names() -> list[str]:
    d = resources.files("statenet") / "data" / "acceptance"
    return sorted(p.name[:-5] for p in d.iterdir() if p.name.endswith(".toml"))


def with_sim(spec: ExperimentSpec, **changes: Any) -> ExperimentSpec:
    return replace(spec, sim=replace(spec.sim, **changes))
