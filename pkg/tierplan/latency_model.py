"""
Per-layer processing-time estimation and inter-tier link delays.

Processing times come either from a profile (measured per-vertex times per
tier) or from a least-squares model over layer features. Link delays are the
producer's output size divided by the bandwidth between the two tiers.
"""
from __future__ import annotations

import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Any, Iterable, Mapping, Optional, Sequence

import numpy as np

from tierplan.errors import ConfigError, LatencyModelError
from tierplan.graph_core import DnnGraph, LayerConfig, LayerKind
from tierplan.tiers import Tier

logger = logging.getLogger(__name__)

MODEL_SCHEMA = "tierplan.latency-model"
MODEL_VERSION = 1
FEATURE_NAMES = ("intercept", "flops", "input_elements", "output_elements", "parameters")
MBPS = 1_000_000.0


@dataclass(frozen=True)
class TierCapability:
    tier: Tier
    cpu_score: float
    gpu_score: float = 0.0
    memory_bytes: int = 0

    def __post_init__(self):
        if self.cpu_score < 0 or self.gpu_score < 0 or self.memory_bytes < 0:
            raise ConfigError(f"capability scores for {self.tier.label} must be non-negative")

    @property
    def throughput(self) -> float:
        total = self.cpu_score + self.gpu_score
        return total if total > 0 else 1.0


@dataclass(frozen=True)
class BandwidthConfig:
    """Symmetric bandwidths between tiers, in bits per second."""

    sigma_de: float
    sigma_ec: float
    sigma_dc: float

    def __post_init__(self):
        for label, value in (("device-edge", self.sigma_de), ("edge-cloud", self.sigma_ec),
                             ("device-cloud", self.sigma_dc)):
            if not value > 0 or math.isinf(value):
                raise ConfigError(f"{label} bandwidth must be positive and finite, got {value}")

    @classmethod
    def from_mbps(cls, device_edge: float, edge_cloud: float, device_cloud: float) -> "BandwidthConfig":
        return cls(device_edge * MBPS, edge_cloud * MBPS, device_cloud * MBPS)

    def sigma(self, a: Tier, b: Tier) -> Optional[float]:
        """Bandwidth between two tiers; None within a tier."""
        if a == b:
            return None
        pair = frozenset((a, b))
        if pair == {Tier.DEVICE, Tier.EDGE}:
            return self.sigma_de
        if pair == {Tier.EDGE, Tier.CLOUD}:
            return self.sigma_ec
        return self.sigma_dc

    def as_dict(self) -> dict[str, float]:
        return {"sigma_de": self.sigma_de, "sigma_ec": self.sigma_ec, "sigma_dc": self.sigma_dc}


def network_preset(name: str, presets: Optional[Mapping[str, Mapping[str, float]]] = None) -> BandwidthConfig:
    """BandwidthConfig for one of the measured uplink conditions (wifi, 4g, 5g, optical)."""
    if presets is None:
        from config.settings import settings
        presets = settings.NETWORK_PRESETS
    key = name.strip().lower()
    if key not in presets:
        raise ConfigError(f"unknown network preset {name!r}; known: {', '.join(sorted(presets))}")
    p = presets[key]
    return BandwidthConfig.from_mbps(p["device_edge"], p["edge_cloud"], p["device_cloud"])


def link_delay(output_bytes: int, sigma: Optional[float]) -> float:
    """Seconds to ship ``output_bytes`` over ``sigma`` bits/s; None means same tier."""
    if sigma is None:
        return 0.0
    if sigma <= 0:
        raise LatencyModelError(f"bandwidth must be positive, got {sigma}")
    return output_bytes * 8 / sigma


@dataclass(frozen=True)
class TierTimes:
    device: float
    edge: float
    cloud: float

    def at(self, tier: Tier) -> float:
        return (self.device, self.edge, self.cloud)[tier.rank]

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.device, self.edge, self.cloud)


@dataclass(frozen=True)
class LinkDelays:
    device_edge: float
    edge_cloud: float
    device_cloud: float

    def between(self, a: Tier, b: Tier) -> float:
        if a == b:
            return 0.0
        pair = frozenset((a, b))
        if pair == {Tier.DEVICE, Tier.EDGE}:
            return self.device_edge
        if pair == {Tier.EDGE, Tier.CLOUD}:
            return self.edge_cloud
        return self.device_cloud


def flop_count(cfg: LayerConfig) -> int:
    if cfg.kind is LayerKind.INPUT:
        return 0
    if cfg.kind is LayerKind.CONVOLUTION:
        out_w, out_h, _ = cfg.output_dims
        depth = cfg.filter.depth or cfg.input_dims[2]
        return 2 * cfg.filter.width * cfg.filter.height * depth * out_w * out_h * cfg.filter.count
    if cfg.kind is LayerKind.FULLY_CONNECTED:
        return 2 * cfg.input_elements * cfg.output_elements
    return cfg.output_elements


def parameter_count(cfg: LayerConfig) -> int:
    if cfg.kind is LayerKind.CONVOLUTION:
        depth = cfg.filter.depth or cfg.input_dims[2]
        return cfg.filter.width * cfg.filter.height * depth * cfg.filter.count + cfg.filter.count
    if cfg.kind is LayerKind.FULLY_CONNECTED:
        return cfg.input_elements * cfg.output_elements + cfg.output_elements
    if cfg.kind is LayerKind.BATCH_NORM:
        channels = cfg.input_dims[2] if cfg.input_dims is not None else cfg.input_elements
        return 2 * channels
    return 0


def layer_features(cfg: LayerConfig) -> np.ndarray:
    """[1, flops, input elements, output elements, parameter count]."""
    return np.array([1.0, float(flop_count(cfg)), float(cfg.input_elements),
                     float(cfg.output_elements), float(parameter_count(cfg))], dtype=np.float64)


def _normalized(features: np.ndarray, capability: TierCapability) -> np.ndarray:
    scaled = features / capability.throughput
    scaled[0] = 1.0
    return scaled


@dataclass(frozen=True)
class Sample:
    layer: LayerConfig
    capability: TierCapability
    seconds: float


@dataclass(frozen=True)
class BucketFit:
    coefficients: tuple[float, ...]
    samples: int
    rank: int
    normalized: bool = False

    def predict(self, features: np.ndarray) -> float:
        return float(np.dot(np.asarray(self.coefficients, dtype=np.float64), features))

    def as_dict(self) -> dict[str, Any]:
        return {"coefficients": list(self.coefficients), "samples": self.samples,
                "rank": self.rank, "normalized": self.normalized}

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "BucketFit":
        coefs = tuple(float(c) for c in doc["coefficients"])
        if len(coefs) != len(FEATURE_NAMES):
            raise ConfigError(f"expected {len(FEATURE_NAMES)} coefficients, got {len(coefs)}")
        return cls(coefs, int(doc.get("samples", 0)), int(doc.get("rank", len(coefs))),
                   bool(doc.get("normalized", False)))


def _solve(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, int]:
    """Least squares with column scaling; minimum-norm when rank deficient."""
    if not np.any(x[:, 1:]):
        coef = np.zeros(x.shape[1])
        coef[0] = np.mean(y)
        return coef, 1
    scale = np.max(np.abs(x), axis=0)
    scale[scale == 0] = 1.0
    coef, _, rank, _ = np.linalg.lstsq(x / scale, y, rcond=None)
    return coef / scale, int(rank)


@dataclass(frozen=True)
class RegressionModel:
    """Per-(kind, tier) least-squares fits with per-kind and global fallbacks.

    The fallbacks are fitted on features divided by the tier's throughput
    score so they transfer across tiers.
    """

    buckets: Mapping[tuple[LayerKind, Tier], BucketFit]
    kind_models: Mapping[LayerKind, BucketFit] = field(default_factory=dict)
    global_model: Optional[BucketFit] = None
    diagnostics: tuple[str, ...] = ()

    def predict(self, layer: LayerConfig, capability: TierCapability) -> float:
        if layer.kind is LayerKind.INPUT:
            return 0.0
        features = layer_features(layer)
        bucket = self.buckets.get((layer.kind, capability.tier))
        if bucket is None:
            bucket = self.kind_models.get(layer.kind, self.global_model)
        if bucket is None:
            raise LatencyModelError(f"model has no fit usable for {layer.kind.value} layers")
        if bucket.normalized:
            features = _normalized(features, capability)
        return max(0.0, bucket.predict(features))

    def to_document(self) -> dict[str, Any]:
        return {
            "schema": MODEL_SCHEMA,
            "version": MODEL_VERSION,
            "features": list(FEATURE_NAMES),
            "buckets": [{"kind": k.value, "tier": t.value, **fit.as_dict()}
                        for (k, t), fit in self.buckets.items()],
            "kinds": [{"kind": k.value, **fit.as_dict()} for k, fit in self.kind_models.items()],
            "global": self.global_model.as_dict() if self.global_model else None,
            "diagnostics": list(self.diagnostics),
        }

    @classmethod
    def from_document(cls, doc: Mapping[str, Any]) -> "RegressionModel":
        if doc.get("schema", MODEL_SCHEMA) != MODEL_SCHEMA or int(doc.get("version", MODEL_VERSION)) != MODEL_VERSION:
            raise ConfigError("not a tierplan latency model document (schema/version mismatch)")
        buckets = {(LayerKind(b["kind"]), Tier.parse(b["tier"])): BucketFit.from_dict(b)
                   for b in doc.get("buckets", [])}
        kinds = {LayerKind(k["kind"]): BucketFit.from_dict(k) for k in doc.get("kinds", [])}
        glob = BucketFit.from_dict(doc["global"]) if doc.get("global") else None
        return cls(MappingProxyType(buckets), MappingProxyType(kinds), glob, tuple(doc.get("diagnostics", [])))


def fit(samples: Sequence[Sample]) -> RegressionModel:
    """Fit the latency model; deterministic for a given sample order."""
    if not samples:
        raise LatencyModelError("cannot fit a latency model without samples")
    by_bucket: dict[tuple[LayerKind, Tier], list[Sample]] = defaultdict(list)
    by_kind: dict[LayerKind, list[Sample]] = defaultdict(list)
    for s in samples:
        if s.seconds < 0 or not math.isfinite(s.seconds):
            raise LatencyModelError(f"measured time must be finite and non-negative, got {s.seconds}")
        by_bucket[(s.layer.kind, s.capability.tier)].append(s)
        by_kind[s.layer.kind].append(s)

    diagnostics: list[str] = []
    n_features = len(FEATURE_NAMES)

    def _fit(group: list[Sample], normalized: bool, label: str) -> BucketFit:
        rows = [layer_features(s.layer) for s in group]
        if normalized:
            rows = [_normalized(r, s.capability) for r, s in zip(rows, group)]
        x = np.vstack(rows)
        y = np.array([s.seconds for s in group], dtype=np.float64)
        coef, rank = _solve(x, y)
        if rank < n_features:
            msg = f"{label}: rank-deficient design matrix (rank {rank} of {n_features}, {len(group)} samples); using minimum-norm fit"
            diagnostics.append(msg)
            logger.warning(f"⚠️ {msg}")
        return BucketFit(tuple(float(c) for c in coef), len(group), rank, normalized)

    buckets = {key: _fit(group, False, f"{key[0].value}@{key[1].label}") for key, group in by_bucket.items()}
    kinds = {kind: _fit(group, True, f"{kind.value}@all-tiers") for kind, group in by_kind.items()}
    glob = _fit(list(samples), True, "global")
    logger.info(f"✅ Fitted latency model: {len(buckets)} buckets over {len(samples)} samples")
    return RegressionModel(MappingProxyType(buckets), MappingProxyType(kinds), glob, tuple(diagnostics))


def predict_layer(m: RegressionModel, layer: LayerConfig, tier: TierCapability) -> float:
    return m.predict(layer, tier)


@dataclass(frozen=True)
class Profile:
    """Measured per-vertex processing times per tier, in seconds."""

    times: Mapping[str, TierTimes]


class WeightedGraph:
    """A DnnGraph with per-vertex tier times and per-link inter-tier delays."""

    def __init__(self, graph: DnnGraph, vertex_weights: Mapping[str, TierTimes], bandwidth: BandwidthConfig):
        missing = [v for v in graph.vertices if v not in vertex_weights]
        if missing:
            raise LatencyModelError(f"vertices without processing times: {', '.join(missing)}")
        for v in graph.vertices:
            for t in vertex_weights[v].as_tuple():
                if not math.isfinite(t) or t < 0:
                    raise LatencyModelError(f"{v}: processing times must be finite and non-negative, got {t}")
        self.graph = graph
        self.bandwidth = bandwidth
        self.vertex_weights: Mapping[str, TierTimes] = MappingProxyType(
            {v: vertex_weights[v] for v in graph.vertices})
        self._source_delays = {v: source_delays(graph.output_bytes(v), bandwidth) for v in graph.vertices}
        self.link_weights: Mapping[tuple[str, str], LinkDelays] = MappingProxyType(
            {(u, v): self._source_delays[u] for u, v in graph.links})

    def __repr__(self) -> str:
        return f"WeightedGraph({self.graph!r})"

    def time(self, vertex: str, tier: Tier) -> float:
        return self.vertex_weights[vertex].at(tier)

    def transfer(self, source: str, a: Tier, b: Tier) -> float:
        """Delay of shipping ``source``'s output from tier ``a`` to tier ``b``."""
        return self._source_delays[source].between(a, b)

    def with_weights(self, vertex_weights: Optional[Mapping[str, TierTimes]] = None,
                     bandwidth: Optional[BandwidthConfig] = None) -> "WeightedGraph":
        merged = dict(self.vertex_weights)
        merged.update(vertex_weights or {})
        return WeightedGraph(self.graph, merged, bandwidth or self.bandwidth)


def source_delays(output_bytes: int, bw: BandwidthConfig) -> LinkDelays:
    return LinkDelays(
        device_edge=link_delay(output_bytes, bw.sigma_de),
        edge_cloud=link_delay(output_bytes, bw.sigma_ec),
        device_cloud=link_delay(output_bytes, bw.sigma_dc),
    )


def weight_graph(g: DnnGraph, bw: BandwidthConfig, *, profile: Optional[Profile] = None,
                 model: Optional[RegressionModel] = None,
                 caps: Optional[Mapping[Tier, TierCapability]] = None) -> WeightedGraph:
    """Attach processing times and link delays to every vertex and link.

    Profiled times take precedence; vertices absent from the profile are
    estimated with ``model``, which needs a capability per tier.
    """
    if model is not None:
        if caps is None or any(t not in caps for t in Tier):
            raise ConfigError("a capability record is required for every tier when estimating times")
    weights: dict[str, TierTimes] = {}
    estimated = 0
    for v in g.vertices:
        cfg = g.config(v)
        if cfg.kind is LayerKind.INPUT:
            weights[v] = TierTimes(0.0, 0.0, 0.0)
        elif profile is not None and v in profile.times:
            weights[v] = profile.times[v]
        elif model is not None:
            weights[v] = TierTimes(*(model.predict(cfg, caps[t]) for t in Tier.ordered()))
            estimated += 1
        else:
            raise LatencyModelError(f"missing profile entry for vertex {v} and no latency model supplied")
    logger.debug(f"🔍 Weighted {len(g)} vertices ({estimated} estimated by regression)")
    return WeightedGraph(g, weights, bw)
