"""
Seeded random instances for the verification and oracle harnesses.

Every generator takes a ``numpy.random.Generator`` so a harness run is
reproducible from its seed.
"""
from __future__ import annotations

from typing import Optional

import numpy as np

from tierplan.conv_oracle import FilterBank, StackLayer
from tierplan.graph_core import DnnGraph, FilterShape, LayerConfig, LayerKind, ShapeMode, build_graph
from tierplan.hpa_planner import Thresholds
from tierplan.latency_model import BandwidthConfig, TierTimes, WeightedGraph
from tierplan.vsm_tiler import Tile, output_dims


def rng_for(seed: int) -> np.random.Generator:
    return np.random.default_rng(seed)


def random_dag(rng: np.random.Generator, n_vertices: int, max_preds: int = 3,
               max_elements: int = 4096) -> DnnGraph:
    """Input vertex v0 plus ``n_vertices - 1`` layers, each fed by 1..max_preds earlier vertices."""
    vertices = [{"id": "v0", "kind": "input", "output_elements": int(rng.integers(1, max_elements + 1))}]
    links = []
    for j in range(1, n_vertices):
        k = int(rng.integers(1, min(max_preds, j) + 1))
        for h in sorted(int(p) for p in rng.choice(j, size=k, replace=False)):
            links.append([f"v{h}", f"v{j}"])
        vertices.append({"id": f"v{j}", "kind": "other", "output_elements": int(rng.integers(1, max_elements + 1))})
    return build_graph({"vertices": vertices, "links": links})


def random_times(rng: np.random.Generator, g: DnnGraph, monotone: bool = False,
                 scale: float = 1e-3) -> dict[str, TierTimes]:
    """Per-vertex (d, e, c) times; ``monotone`` sorts them so t^d >= t^e >= t^c."""
    times = {}
    for v in g.vertices:
        if v == g.source:
            times[v] = TierTimes(0.0, 0.0, 0.0)
            continue
        values = rng.uniform(0.1, 10.0, size=3) * scale
        if monotone:
            values = np.sort(values)[::-1]
        times[v] = TierTimes(*(float(x) for x in values))
    return times


def random_bandwidth(rng: np.random.Generator) -> BandwidthConfig:
    de, ec, dc = rng.uniform(1.0, 100.0, size=3)
    return BandwidthConfig.from_mbps(float(de), float(ec), float(dc))


def random_weighted_graph(rng: np.random.Generator, n_vertices: int, monotone: bool = False,
                          max_preds: int = 3) -> WeightedGraph:
    g = random_dag(rng, n_vertices, max_preds)
    return WeightedGraph(g, random_times(rng, g, monotone), random_bandwidth(rng))


def random_perturbation(rng: np.random.Generator, wg: WeightedGraph, thresholds: Thresholds,
                        count: int = 2, within: bool = False) -> tuple[WeightedGraph, list[str]]:
    """Rescale the times of ``count`` random vertices, inside or outside the thresholds."""
    candidates = list(wg.graph.vertices[1:])
    count = min(count, len(candidates))
    changed = sorted((candidates[int(i)] for i in rng.choice(len(candidates), size=count, replace=False)),
                     key=wg.graph.order)
    weights = {}
    for v in changed:
        if within:
            # half-way to each bound so the rescaled ratio cannot round past it
            factors = rng.uniform((thresholds.time_lower + 1) / 2, (thresholds.time_upper + 1) / 2, size=3)
        else:
            factors = rng.choice([thresholds.time_lower / 2, thresholds.time_upper * 2], size=3)
        old = wg.vertex_weights[v].as_tuple()
        weights[v] = TierTimes(*(float(o * f) for o, f in zip(old, factors)))
    return wg.with_weights(weights), changed


def random_layer(rng: np.random.Generator, dims: tuple[int, int, int], kind: Optional[LayerKind] = None,
                 max_window: int = 5, max_stride: int = 3, max_padding: int = 2, max_filters: int = 4) -> LayerConfig:
    """A layer that accepts ``dims``; spatial layers use floor mode so any stride is legal."""
    w, h, d = dims
    if kind is None:
        options = (LayerKind.CONVOLUTION, LayerKind.CONVOLUTION, LayerKind.POOLING,
                   LayerKind.ACTIVATION, LayerKind.BATCH_NORM)
        kind = options[int(rng.integers(len(options)))]
    if not kind.is_spatial:
        return LayerConfig(kind=kind, input_dims=dims, shape_mode=ShapeMode.FLOOR)
    windows = []
    paddings = []
    for size in (w, h):
        f = int(rng.integers(1, max_window + 1))
        p = int(rng.integers(0, min(max_padding, f - 1) + 1))
        while size + 2 * p < f:
            f -= 1
            p = min(p, f - 1)
        windows.append(f)
        paddings.append(p)
    stride = (int(rng.integers(1, max_stride + 1)), int(rng.integers(1, max_stride + 1)))
    if kind is LayerKind.CONVOLUTION:
        filt = FilterShape(windows[0], windows[1], d, int(rng.integers(1, max_filters + 1)))
        return LayerConfig(kind=kind, input_dims=dims, filter=filt, stride=stride,
                           padding=tuple(paddings), shape_mode=ShapeMode.FLOOR)
    mode = str(rng.choice(["max", "average"]))
    return LayerConfig(kind=kind, input_dims=dims, filter=FilterShape(windows[0], windows[1]), stride=stride,
                       padding=tuple(paddings), pool_mode=mode, shape_mode=ShapeMode.FLOOR)


def random_tile(rng: np.random.Generator, cfg: LayerConfig) -> Tile:
    """Non-empty tile inside the layer's output."""
    out_w, out_h = output_dims(cfg)
    xa = int(rng.integers(0, out_w))
    xb = int(rng.integers(xa + 1, out_w + 1))
    ya = int(rng.integers(0, out_h))
    yb = int(rng.integers(ya + 1, out_h + 1))
    return Tile((xa, ya), (xb, yb), 2)


def random_parameters(rng: np.random.Generator, cfg: LayerConfig) -> StackLayer:
    """Small integer parameters so tiled and whole runs can be compared exactly."""
    if cfg.kind is LayerKind.CONVOLUTION:
        f = cfg.filter
        weights = rng.integers(-3, 4, size=(f.count, cfg.input_dims[2], f.height, f.width), dtype=np.int64)
        bias = rng.integers(-2, 3, size=f.count, dtype=np.int64)
        return StackLayer(cfg, bank=FilterBank(weights, bias))
    if cfg.kind is LayerKind.BATCH_NORM:
        d = cfg.input_dims[2]
        return StackLayer(cfg, scale=rng.integers(-2, 3, size=d, dtype=np.int64),
                          shift=rng.integers(-2, 3, size=d, dtype=np.int64))
    return StackLayer(cfg)


def random_stack(rng: np.random.Generator, max_layers: int = 6, max_dim: int = 32,
                 max_depth: int = 3, max_grid: int = 4) -> tuple[list[StackLayer], tuple[int, int]]:
    """Random executable stack with integer parameters and a legal grid."""
    dims = (int(rng.integers(4, max_dim + 1)), int(rng.integers(4, max_dim + 1)),
            int(rng.integers(1, max_depth + 1)))
    stack = []
    for _ in range(int(rng.integers(1, max_layers + 1))):
        cfg = random_layer(rng, dims)
        stack.append(random_parameters(rng, cfg))
        dims = cfg.output_dims
    out_w, out_h = dims[0], dims[1]
    grid = (int(rng.integers(1, min(max_grid, out_w) + 1)), int(rng.integers(1, min(max_grid, out_h) + 1)))
    return stack, grid


def random_tensor(rng: np.random.Generator, dims: tuple[int, int, int], low: int = -5, high: int = 5) -> np.ndarray:
    """Integer tensor of shape (D, H, W) for dims (W, H, D)."""
    w, h, d = dims
    return rng.integers(low, high + 1, size=(d, h, w), dtype=np.int64)
