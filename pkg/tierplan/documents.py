"""
Versioned JSON documents exchanged by the CLI and the test fixtures.

Every document carries ``schema`` and ``version``; writers emit sorted keys
with a fixed indent so identical inputs give byte-identical files.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import replace
from pathlib import Path
from types import MappingProxyType
from typing import Any, Iterable, Mapping, Optional, Sequence

import numpy as np

from tierplan.errors import ConfigError, GraphError, TierPlanError
from tierplan.graph_core import DnnGraph, LayerConfig, LayerKind, ShapeMode, build_graph, dump_layer, parse_layer
from tierplan.hpa_planner import PartitionPlan, Provenance, Thresholds
from tierplan.latency_model import (
    BandwidthConfig,
    Profile,
    Sample,
    TierCapability,
    TierTimes,
    WeightedGraph,
    network_preset,
)
from tierplan.tiers import Tier
from tierplan.vsm_tiler import OverlapReport, Tile, TilePlan, check_stack

logger = logging.getLogger(__name__)

VERSION = 1

_UNITS = {"s": 1.0, "ms": 1e-3}


def read_json(path: str | Path) -> dict[str, Any]:
    try:
        with open(path, "r") as f:
            doc = json.load(f)
    except FileNotFoundError as e:
        raise ConfigError(f"file not found: {path}") from e
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read {path}: {e}") from e
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: expected a JSON object at the top level")
    return doc


def dumps(doc: Mapping[str, Any]) -> str:
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def write_json(path: str | Path, doc: Mapping[str, Any]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(doc))
    logger.debug(f"🔍 Wrote {path}")
    return path


def write_csv(path: str | Path, rows: Sequence[Mapping[str, Any]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fields: list[str] = []
    for row in rows:
        fields.extend(k for k in row if k not in fields)
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=fields)
        writer.writeheader()
        writer.writerows(rows)
    return path


def envelope(kind: str, body: Mapping[str, Any]) -> dict[str, Any]:
    return {"schema": f"tierplan.{kind}", "version": VERSION, **body}


def expect(doc: Mapping[str, Any], kind: str) -> Mapping[str, Any]:
    """Check schema and version; documents without a schema field are accepted."""
    schema = doc.get("schema", f"tierplan.{kind}")
    if schema != f"tierplan.{kind}":
        raise ConfigError(f"expected a tierplan.{kind} document, got {schema!r}")
    version = doc.get("version", VERSION)
    if not isinstance(version, int) or version != VERSION:
        raise ConfigError(f"unsupported {kind} document version {version!r}")
    return doc


def _number(value: Any, label: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{label} must be a number, got {value!r}")
    return float(value)


def _unit(doc: Mapping[str, Any]) -> float:
    unit = doc.get("unit", "s")
    if unit not in _UNITS:
        raise ConfigError(f"time unit must be one of {', '.join(_UNITS)}, got {unit!r}")
    return _UNITS[unit]


def _tier_times(raw: Any, scale: float, label: str) -> TierTimes:
    if isinstance(raw, Mapping):
        try:
            values = [raw[t.value] if t.value in raw else raw[t.label] for t in Tier.ordered()]
        except KeyError as e:
            raise ConfigError(f"{label}: missing time for tier {e}") from e
    elif isinstance(raw, (list, tuple)) and len(raw) == 3:
        values = list(raw)
    else:
        raise ConfigError(f"{label}: expected {{d, e, c}} or a [d, e, c] list, got {raw!r}")
    return TierTimes(*(_number(v, label) * scale for v in values))


# graph

def load_graph(path: str | Path, shape_mode: Optional[str] = None) -> DnnGraph:
    doc = read_json(path)
    expect(doc, "graph")
    return build_graph(doc, shape_mode)


# profile, capabilities, bandwidth, thresholds

def profile_from_document(doc: Mapping[str, Any]) -> Profile:
    expect(doc, "profile")
    scale = _unit(doc)
    times = doc.get("times")
    if not isinstance(times, Mapping):
        raise ConfigError("profile document needs a 'times' object")
    return Profile(MappingProxyType({str(v): _tier_times(raw, scale, f"profile[{v}]") for v, raw in times.items()}))


def profile_to_document(wg: WeightedGraph) -> dict[str, Any]:
    return envelope("profile", {
        "unit": "s",
        "times": {v: dict(zip("dec", t.as_tuple())) for v, t in wg.vertex_weights.items()},
    })


def capabilities_from_document(doc: Mapping[str, Any]) -> dict[Tier, TierCapability]:
    expect(doc, "capabilities")
    tiers = doc.get("tiers")
    if not isinstance(tiers, Mapping):
        raise ConfigError("capabilities document needs a 'tiers' object")
    caps = {}
    for key, raw in tiers.items():
        try:
            tier = Tier.parse(key)
        except ValueError as e:
            raise ConfigError(str(e)) from e
        caps[tier] = TierCapability(tier, _number(raw.get("cpu_score", 0), f"{key}.cpu_score"),
                                    _number(raw.get("gpu_score", 0), f"{key}.gpu_score"),
                                    int(raw.get("memory_bytes", 0)))
    missing = [t.label for t in Tier if t not in caps]
    if missing:
        raise ConfigError(f"capabilities missing for: {', '.join(missing)}")
    return caps


def bandwidth_from_document(doc: Mapping[str, Any]) -> BandwidthConfig:
    """Bandwidths in Mbps (default) or bits/s, or a named network preset."""
    expect(doc, "bandwidth")
    if "preset" in doc:
        return network_preset(str(doc["preset"]))
    unit = doc.get("unit", "mbps")
    if unit not in ("mbps", "bps"):
        raise ConfigError(f"bandwidth unit must be 'mbps' or 'bps', got {unit!r}")
    try:
        values = [_number(doc[k], k) for k in ("device_edge", "edge_cloud", "device_cloud")]
    except KeyError as e:
        raise ConfigError(f"bandwidth document missing {e}") from e
    if unit == "mbps":
        return BandwidthConfig.from_mbps(*values)
    return BandwidthConfig(*values)


def bandwidth_to_document(bw: BandwidthConfig) -> dict[str, Any]:
    return envelope("bandwidth", {"unit": "bps", "device_edge": bw.sigma_de,
                                  "edge_cloud": bw.sigma_ec, "device_cloud": bw.sigma_dc})


def thresholds_from_document(doc: Mapping[str, Any]) -> Thresholds:
    expect(doc, "thresholds")
    values = {k: _number(doc[k], k) for k in Thresholds.__dataclass_fields__ if k in doc}
    try:
        return Thresholds(**values)
    except TierPlanError as e:
        raise ConfigError(str(e)) from e


def perturbation_from_document(doc: Mapping[str, Any], wg: WeightedGraph) -> tuple[WeightedGraph, list[str]]:
    """New weights for some vertices and optionally new bandwidths."""
    expect(doc, "perturbation")
    scale = _unit(doc)
    times = doc.get("times", {})
    changed = []
    weights = {}
    for v, raw in times.items():
        if v not in wg.graph:
            raise GraphError(f"changed vertex not in graph: {v}")
        weights[str(v)] = _tier_times(raw, scale, f"perturbation[{v}]")
        changed.append(str(v))
    bw = bandwidth_from_document(doc["bandwidth"]) if "bandwidth" in doc else None
    return wg.with_weights(weights, bw), changed


# plans

def plan_to_document(plan: PartitionPlan) -> dict[str, Any]:
    tiers = plan.subgraphs()
    return envelope("plan", {
        "assignment": {v: t.value for v, t in plan.assignment.items()},
        "order": list(plan.assignment),
        "theta": plan.theta,
        "provenance": plan.provenance.value,
        "subgraphs": {t.label: list(vs) for t, vs in tiers.items()},
    })


def plan_from_document(doc: Mapping[str, Any], wg: Optional[WeightedGraph] = None) -> PartitionPlan:
    expect(doc, "plan")
    raw = doc.get("assignment")
    if not isinstance(raw, Mapping):
        raise ConfigError("plan document needs an 'assignment' object")
    order = doc.get("order", list(raw))
    try:
        assignment = {str(v): Tier.parse(raw[v]) for v in order}
        provenance = Provenance(doc.get("provenance", Provenance.FULL.value))
    except (KeyError, ValueError) as e:
        raise ConfigError(f"malformed plan document: {e}") from e
    if wg is not None:
        missing = [v for v in wg.graph.vertices if v not in assignment]
        if missing:
            raise ConfigError(f"plan does not match the graph; missing: {', '.join(missing)}")
        assignment = {v: assignment[v] for v in wg.graph.vertices}
    return PartitionPlan(MappingProxyType(assignment), _number(doc.get("theta", 0.0), "theta"), provenance, wg)


# stacks and tile plans

def stack_from_document(doc: Mapping[str, Any]) -> tuple[LayerConfig, ...]:
    """Stack layers chained from ``input_dims``; each layer's input is the previous output."""
    expect(doc, "stack")
    mode = ShapeMode(doc.get("shape_mode", ShapeMode.EXACT.value))
    dims = doc.get("input_dims")
    if dims is None:
        raise ConfigError("stack document needs 'input_dims' [W, H, D]")
    layers = []
    current = tuple(int(x) for x in dims)
    for i, entry in enumerate(doc.get("layers", []), start=1):
        entry = dict(entry)
        entry.setdefault("input_dims", list(current))
        try:
            cfg = parse_layer(entry, int(doc.get("element_size", 4)), mode)
        except GraphError as e:
            raise type(e)(f"layer {i}: {e}") from e
        if cfg.kind is LayerKind.CONVOLUTION and cfg.filter.depth is None:
            cfg = replace(cfg, filter=replace(cfg.filter, depth=current[2]))
        layers.append(cfg)
        current = cfg.output_dims
    if layers:
        check_stack(layers)
    return tuple(layers)


def stack_to_document(stack: Sequence[LayerConfig]) -> dict[str, Any]:
    mode = stack[0].shape_mode.value if stack else ShapeMode.EXACT.value
    return envelope("stack", {
        "shape_mode": mode,
        "input_dims": list(stack[0].input_dims) if stack else None,
        "layers": [{k: v for k, v in dump_layer(cfg).items() if k != "output_elements"} for cfg in stack],
    })


def tiles_to_document(plan: TilePlan, report: OverlapReport, chain: Iterable[str] = ()) -> dict[str, Any]:
    cells = []
    for a, b in plan.cells():
        cell = plan.cell(a, b)
        cells.append({
            "cell": [a, b],
            "tiles": [t.as_dict() for t in cell.tiles + (cell.output,)],
        })
    return envelope("tiles", {
        "grid": list(plan.grid),
        "stack_depth": plan.stack_depth,
        "chain": list(chain),
        "stack": stack_to_document(plan.layer_configs),
        "cells": cells,
        "redundancy": report.as_dict(),
    })


def tile_plan_from_document(doc: Mapping[str, Any]) -> TilePlan:
    expect(doc, "tiles")
    stack = stack_from_document(doc["stack"])
    coords = {}
    try:
        for entry in doc["cells"]:
            a, b = entry["cell"]
            for t in entry["tiles"]:
                tile = Tile(tuple(t["alpha"]), tuple(t["beta"]), int(t["layer"]))
                coords[(tile.layer_index, int(a), int(b))] = tile
        grid = tuple(int(x) for x in doc["grid"])
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"malformed tiles document: {e}") from e
    return TilePlan(grid, int(doc.get("stack_depth", len(stack))), MappingProxyType(coords), stack)


# tensors and samples

def tensor_from_document(doc: Mapping[str, Any]) -> np.ndarray:
    """(D, H, W) array from dims [W, H, D] and row-major values, x fastest."""
    expect(doc, "tensor")
    w, h, d = (int(x) for x in doc["dims"])
    dtype = np.int64 if doc.get("dtype", "int") == "int" else np.float64
    values = np.asarray(doc["values"], dtype=dtype)
    if values.size != w * h * d:
        raise ConfigError(f"tensor has {values.size} values, dims {w}x{h}x{d} need {w * h * d}")
    if dtype is np.float64 and not np.all(np.isfinite(values)):
        raise ConfigError("tensor values must be finite")
    return values.reshape(d, h, w)


def tensor_to_document(x: np.ndarray) -> dict[str, Any]:
    d, h, w = x.shape
    kind = "int" if np.issubdtype(x.dtype, np.integer) else "float"
    return envelope("tensor", {"dims": [w, h, d], "dtype": kind, "values": x.reshape(-1).tolist()})


def samples_from_document(doc: Mapping[str, Any]) -> list[Sample]:
    """Measured layer times; capability records are looked up by tier."""
    expect(doc, "samples")
    caps = capabilities_from_document({"tiers": doc.get("capabilities", {})})
    scale = _unit(doc)
    samples = []
    for i, entry in enumerate(doc.get("samples", [])):
        try:
            layer = parse_layer(entry["layer"], int(doc.get("element_size", 4)))
            tier = Tier.parse(entry["tier"])
        except (KeyError, ValueError) as e:
            raise ConfigError(f"sample {i}: {e}") from e
        samples.append(Sample(layer, caps[tier], _number(entry.get("seconds", entry.get("time")), f"sample {i}") * scale))
    if not samples:
        raise ConfigError("samples document has no samples")
    return samples


def report_to_document(report_body: Mapping[str, Any], kind: str = "report") -> dict[str, Any]:
    return envelope(kind, report_body)
