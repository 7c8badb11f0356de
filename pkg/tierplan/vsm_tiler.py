"""
Vertical separation of a convolution/pooling stack into fused tile stacks.

The output of the last layer is cut into an A x B grid of disjoint tiles.
Each tile is mapped back through the stack with the reverse tile
calculation, giving for every grid cell the crop of each layer's input it
needs. Cells can then run the whole stack independently.

Coordinates are half-open: a tile covers columns [x_a, x_b) and rows
[y_a, y_b). Layer i (1-based) is the input of the i-th stack layer; layer
k + 1 is the output of the last one.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from types import MappingProxyType
from typing import Mapping, Optional, Sequence

import numpy as np

from tierplan.errors import ShapeError, TileError
from tierplan.graph_core import DnnGraph, LayerConfig, LayerKind, window_extent
from tierplan.tiers import Tier

logger = logging.getLogger(__name__)

STACK_KINDS = (LayerKind.CONVOLUTION, LayerKind.POOLING, LayerKind.ACTIVATION, LayerKind.BATCH_NORM)


@dataclass(frozen=True)
class Tile:
    alpha: tuple[int, int]
    beta: tuple[int, int]
    layer_index: int = 0

    def __post_init__(self):
        for axis, lo, hi in (("x", self.alpha[0], self.beta[0]), ("y", self.alpha[1], self.beta[1])):
            if lo < 0 or hi < lo:
                raise TileError(f"layer {self.layer_index}, {axis} axis: need 0 <= alpha <= beta, got [{lo}, {hi})")

    @property
    def width(self) -> int:
        return self.beta[0] - self.alpha[0]

    @property
    def height(self) -> int:
        return self.beta[1] - self.alpha[1]

    @property
    def area(self) -> int:
        return self.width * self.height

    @property
    def degenerate(self) -> bool:
        return self.area == 0

    def contains(self, other: "Tile") -> bool:
        return (self.alpha[0] <= other.alpha[0] and other.beta[0] <= self.beta[0]
                and self.alpha[1] <= other.alpha[1] and other.beta[1] <= self.beta[1])

    def within(self, width: int, height: int) -> bool:
        return self.beta[0] <= width and self.beta[1] <= height

    def as_dict(self) -> dict:
        return {"alpha": list(self.alpha), "beta": list(self.beta), "layer": self.layer_index}


def output_dims(cfg: LayerConfig) -> tuple[int, int]:
    """(W, H) of a layer's output."""
    if cfg.input_dims is None:
        raise ShapeError(f"{cfg.kind.value} layer has no input dims")
    if not cfg.kind.is_spatial:
        return cfg.input_dims[0], cfg.input_dims[1]
    w, h, _ = cfg.input_dims
    return (
        window_extent(w, cfg.filter.width, cfg.padding[0], cfg.stride[0], cfg.shape_mode, "width"),
        window_extent(h, cfg.filter.height, cfg.padding[1], cfg.stride[1], cfg.shape_mode, "height"),
    )


def _reverse_axis(lo: int, hi: int, size: int, window: int, stride: int, padding: int) -> tuple[int, int]:
    padded_lo = stride * lo
    padded_hi = stride * (hi - 1) + window
    new_lo = max(0, padded_lo - padding)
    if padded_hi == size + 2 * padding:
        new_hi = size
    else:
        new_hi = min(size, max(0, padded_hi - padding))
    return new_lo, new_hi


def rtc(cfg: LayerConfig, tile: Tile) -> Tile:
    """Input region of ``cfg`` that the output ``tile`` reads, padding removed."""
    out_w, out_h = output_dims(cfg)
    if not tile.within(out_w, out_h):
        raise TileError(f"tile {tile.alpha}-{tile.beta} exceeds layer output {out_w}x{out_h}")
    if tile.degenerate:
        raise TileError(f"cannot reverse an empty tile {tile.alpha}-{tile.beta}")
    layer = tile.layer_index - 1
    if not cfg.kind.is_spatial:
        return Tile(tile.alpha, tile.beta, layer)
    w, h, _ = cfg.input_dims
    xa, xb = _reverse_axis(tile.alpha[0], tile.beta[0], w, cfg.filter.width, cfg.stride[0], cfg.padding[0])
    ya, yb = _reverse_axis(tile.alpha[1], tile.beta[1], h, cfg.filter.height, cfg.stride[1], cfg.padding[1])
    for axis, lo, hi in (("x", xa, xb), ("y", ya, yb)):
        if hi <= lo:
            raise TileError(f"layer {layer}, {axis} axis: reverse tile is empty ([{lo}, {hi}))")
    return Tile((xa, ya), (xb, yb), layer)


def split_extent(n: int, parts: int) -> tuple[tuple[int, int], ...]:
    """Cut [0, n) into ``parts`` contiguous blocks; the last ``n % parts`` blocks get one extra."""
    if parts < 1:
        raise TileError(f"grid dimension must be positive, got {parts}")
    if parts > n:
        raise TileError(f"grid dimension {parts} exceeds output extent {n}")
    base, extra = divmod(n, parts)
    bounds = []
    start = 0
    for i in range(parts):
        size = base + (1 if i >= parts - extra else 0)
        bounds.append((start, start + size))
        start += size
    return tuple(bounds)


def padding_for(cfg: LayerConfig, out_tile: Tile) -> tuple[int, int, int, int]:
    """(left, right, top, bottom) padding a cell synthesizes around its crop.

    Non-zero only where the crop touches the true input border.
    """
    if not cfg.kind.is_spatial:
        return (0, 0, 0, 0)
    w, h, _ = cfg.input_dims
    fw, fh = cfg.window
    sw, sh = cfg.stride
    pw, ph = cfg.padding
    left = max(0, pw - sw * out_tile.alpha[0])
    right = max(0, sw * (out_tile.beta[0] - 1) - pw + fw - w)
    top = max(0, ph - sh * out_tile.alpha[1])
    bottom = max(0, sh * (out_tile.beta[1] - 1) - ph + fh - h)
    return (left, right, top, bottom)


@dataclass(frozen=True)
class FusedTileStack:
    position: tuple[int, int]
    tiles: tuple[Tile, ...]
    output: Tile

    @property
    def crop(self) -> Tile:
        return self.tiles[0] if self.tiles else self.output


@dataclass(frozen=True)
class TilePlan:
    grid: tuple[int, int]
    stack_depth: int
    coords: Mapping[tuple[int, int, int], Tile]
    layer_configs: tuple[LayerConfig, ...]

    def cells(self) -> tuple[tuple[int, int], ...]:
        a_count, b_count = self.grid
        return tuple((a, b) for b in range(b_count) for a in range(a_count))

    def cell(self, a: int, b: int) -> FusedTileStack:
        if (self.stack_depth + 1, a, b) not in self.coords:
            raise TileError(f"no grid cell ({a}, {b}) in a {self.grid[0]}x{self.grid[1]} plan")
        tiles = tuple(self.coords[(i, a, b)] for i in range(1, self.stack_depth + 1))
        return FusedTileStack((a, b), tiles, self.coords[(self.stack_depth + 1, a, b)])

    def layer_dims(self, i: int) -> tuple[int, int, int]:
        """(W, H, D) of layer i, 1 <= i <= k + 1."""
        if i <= self.stack_depth:
            return self.layer_configs[i - 1].input_dims
        last = self.layer_configs[-1]
        w, h = output_dims(last)
        depth = last.filter.count if last.kind is LayerKind.CONVOLUTION else last.input_dims[2]
        return (w, h, depth)


def check_stack(stack: Sequence[LayerConfig]):
    """Every layer has input dims equal to the previous layer's output."""
    if not stack:
        raise TileError("cannot tile an empty stack")
    for i, cfg in enumerate(stack, start=1):
        if cfg.kind not in STACK_KINDS:
            raise TileError(f"layer {i}: {cfg.kind.value} layers cannot be tiled")
        if cfg.input_dims is None:
            raise TileError(f"layer {i}: input dims unknown")
        if i > 1:
            prev = stack[i - 2]
            expected = prev.output_dims
            if tuple(cfg.input_dims) != tuple(expected):
                raise TileError(f"layer {i}: input dims {tuple(cfg.input_dims)} do not match previous output {expected}")


def plan_tiles(stack: Sequence[LayerConfig], grid: tuple[int, int]) -> TilePlan:
    stack = tuple(stack)
    check_stack(stack)
    k = len(stack)
    out_w, out_h = output_dims(stack[-1])
    a_count, b_count = grid
    if a_count > out_w or b_count > out_h:
        raise TileError(f"grid {a_count}x{b_count} exceeds output {out_w}x{out_h}")
    columns = split_extent(out_w, a_count)
    rows = split_extent(out_h, b_count)

    coords: dict[tuple[int, int, int], Tile] = {}
    for b, (ya, yb) in enumerate(rows):
        for a, (xa, xb) in enumerate(columns):
            tile = Tile((xa, ya), (xb, yb), k + 1)
            coords[(k + 1, a, b)] = tile
            for i in range(k, 0, -1):
                tile = rtc(stack[i - 1], tile)
                coords[(i, a, b)] = tile
    logger.debug(f"🔍 Planned {a_count}x{b_count} fused tile stacks over {k} layers")
    return TilePlan((a_count, b_count), k, MappingProxyType(coords), stack)


@dataclass(frozen=True)
class LayerOverlap:
    """Tile coverage of one layer.

    ``needed_area`` is the union of the cells' tiles. It equals the layer
    area unless strides skip entries (stride larger than the window), in
    which case no cell reads the skipped entries.
    """

    layer: int
    tile_area: int
    layer_area: int
    needed_area: int
    depth: int

    @property
    def factor(self) -> float:
        return self.tile_area / self.needed_area

    @property
    def redundant_elements(self) -> int:
        return (self.tile_area - self.needed_area) * self.depth


def needed_area(plan: TilePlan, i: int) -> int:
    """Entries of layer i read by at least one cell."""
    w, h, _ = plan.layer_dims(i)
    covered = np.zeros((h, w), dtype=bool)
    for a, b in plan.cells():
        t = plan.coords[(i, a, b)]
        covered[t.alpha[1]:t.beta[1], t.alpha[0]:t.beta[0]] = True
    return int(covered.sum())


@dataclass(frozen=True)
class OverlapReport:
    layers: tuple[LayerOverlap, ...]
    crops: Mapping[tuple[int, int], tuple[int, int]]

    @property
    def redundant_elements(self) -> int:
        return sum(layer.redundant_elements for layer in self.layers)

    @property
    def input_factor(self) -> float:
        return self.layers[0].factor

    def as_dict(self) -> dict:
        return {
            "layers": [{"layer": o.layer, "factor": o.factor, "tile_area": o.tile_area,
                        "layer_area": o.layer_area, "needed_area": o.needed_area,
                        "redundant_elements": o.redundant_elements}
                       for o in self.layers],
            "redundant_elements": self.redundant_elements,
            "crops": [{"cell": [a, b], "width": w, "height": h} for (a, b), (w, h) in self.crops.items()],
        }


def overlap_stats(plan: TilePlan) -> OverlapReport:
    layers = []
    for i in range(1, plan.stack_depth + 2):
        w, h, d = plan.layer_dims(i)
        area = sum(plan.coords[(i, a, b)].area for a, b in plan.cells())
        layers.append(LayerOverlap(i, area, w * h, needed_area(plan, i), d))
    crops = {(a, b): (plan.cell(a, b).crop.width, plan.cell(a, b).crop.height) for a, b in plan.cells()}
    return OverlapReport(tuple(layers), MappingProxyType(crops))


def stitch(outputs: Mapping[tuple[int, int], np.ndarray], plan: TilePlan) -> np.ndarray:
    """Place per-cell output tiles at their grid coordinates; arrays are (D, H, W)."""
    w, h, d = plan.layer_dims(plan.stack_depth + 1)
    missing = [cell for cell in plan.cells() if cell not in outputs]
    if missing:
        raise TileError(f"missing output tiles for cells: {missing}")
    dtype = np.result_type(*(outputs[cell] for cell in plan.cells()))
    whole = np.zeros((d, h, w), dtype=dtype)
    for a, b in plan.cells():
        tile = plan.coords[(plan.stack_depth + 1, a, b)]
        part = outputs[(a, b)]
        expected = (d, tile.height, tile.width)
        if part.shape != expected:
            raise TileError(f"cell ({a}, {b}) output has shape {part.shape}, expected {expected}")
        whole[:, tile.alpha[1]:tile.beta[1], tile.alpha[0]:tile.beta[0]] = part
    return whole


def find_edge_chain(g: DnnGraph, assignment: Mapping[str, Tier]) -> tuple[str, ...]:
    """Longest run of edge-resident stack layers linked one-to-one.

    Runs must contain at least one convolution or pooling layer; ties go to
    the run that starts first.
    """
    best: tuple[str, ...] = ()

    def eligible(v: str) -> bool:
        return assignment.get(v) is Tier.EDGE and g.config(v).kind in STACK_KINDS and g.config(v).input_dims is not None

    for v in g.topological_order():
        if not eligible(v):
            continue
        preds = g.predecessors(v)
        if len(preds) == 1:
            (h,) = preds
            if eligible(h) and len(g.successors(h)) == 1:
                continue  # not the head of a run
        run = [v]
        while len(g.successors(run[-1])) == 1:
            nxt = g.successors(run[-1])[0]
            if not eligible(nxt) or len(g.predecessors(nxt)) != 1:
                break
            run.append(nxt)
        while run and not g.config(run[-1]).kind.is_spatial:
            run.pop()
        while run and not g.config(run[0]).kind.is_spatial:
            run.pop(0)
        if len(run) > len(best):
            best = tuple(run)
    return best


def chain_stack(g: DnnGraph, chain: Sequence[str]) -> tuple[LayerConfig, ...]:
    return tuple(g.config(v) for v in chain)


def edge_plan(g: DnnGraph, assignment: Mapping[str, Tier], grid: tuple[int, int]) -> tuple[tuple[str, ...], TilePlan]:
    chain = find_edge_chain(g, assignment)
    if not chain:
        raise TileError("plan assigns no convolution or pooling chain to the edge tier")
    return chain, plan_tiles(chain_stack(g, chain), grid)


def describe(plan: TilePlan, report: Optional[OverlapReport] = None) -> str:
    report = report or overlap_stats(plan)
    return (f"{plan.grid[0]}x{plan.grid[1]} grid over {plan.stack_depth} layers, "
            f"input redundancy {report.input_factor:.3f}")
