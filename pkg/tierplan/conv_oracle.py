"""
Reference executor for convolution/pooling stacks on small tensors.

Tensors are numpy arrays of shape (D, H, W), so a C-order flattening lists
x fastest. Accumulation order is fixed (input channel, then filter row,
then filter column, each step applied to all output positions at once), so
an output entry sums the same terms in the same order whether it is
computed on the whole input or on a tile crop.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from tierplan.errors import ShapeError, TileError
from tierplan.graph_core import LayerConfig, LayerKind
from tierplan.vsm_tiler import TilePlan, padding_for, stitch

logger = logging.getLogger(__name__)

ACTIVATIONS = ("relu", "sigmoid", "tanh", "identity")


@dataclass(frozen=True)
class FilterBank:
    """Filters of shape (N, D, F_h, F_w) and one bias per filter."""

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        if self.weights.ndim != 4 or self.weights.shape[0] < 1:
            raise ShapeError(f"filter bank needs shape (N>=1, D, F_h, F_w), got {self.weights.shape}")
        if self.bias.shape != (self.weights.shape[0],):
            raise ShapeError(f"bias shape {self.bias.shape} does not match {self.weights.shape[0]} filters")

    @property
    def count(self) -> int:
        return self.weights.shape[0]

    @property
    def depth(self) -> int:
        return self.weights.shape[1]


@dataclass(frozen=True)
class StackLayer:
    """A layer's hyper-parameters plus whatever parameters it runs with."""

    config: LayerConfig
    bank: Optional[FilterBank] = None
    scale: Optional[np.ndarray] = None
    shift: Optional[np.ndarray] = None
    activation: str = "relu"

    def __post_init__(self):
        kind = self.config.kind
        if kind is LayerKind.CONVOLUTION:
            if self.bank is None:
                raise ShapeError("convolution layer needs a filter bank")
            f = self.config.filter
            if (self.bank.count, self.bank.weights.shape[2], self.bank.weights.shape[3]) != (f.count, f.height, f.width):
                raise ShapeError(f"filter bank shape {self.bank.weights.shape} does not match config {f}")
        elif kind is LayerKind.BATCH_NORM:
            if self.scale is None or self.shift is None:
                raise ShapeError("batch-norm layer needs scale and shift")
        elif kind is LayerKind.ACTIVATION:
            if self.activation not in ACTIVATIONS:
                raise ShapeError(f"unknown activation {self.activation!r}")
        elif kind is not LayerKind.POOLING:
            raise ShapeError(f"{kind.value} layers are not executable by the reference executor")


def _pad(x: np.ndarray, pads: tuple[int, int, int, int], value) -> np.ndarray:
    left, right, top, bottom = pads
    if not any(pads):
        return x
    return np.pad(x, ((0, 0), (top, bottom), (left, right)), mode="constant", constant_values=value)


def _out_extent(length: int, window: int, stride: int) -> int:
    if length < window:
        raise ShapeError(f"window {window} does not fit padded extent {length}")
    return (length - window) // stride + 1


def _window_view(padded: np.ndarray, r: int, c: int, out_h: int, out_w: int, stride: tuple[int, int]) -> np.ndarray:
    sw, sh = stride
    return padded[..., r:r + sh * (out_h - 1) + 1:sh, c:c + sw * (out_w - 1) + 1:sw]


def _conv_padded(x: np.ndarray, bank: FilterBank, stride: tuple[int, int],
                 pads: tuple[int, int, int, int]) -> np.ndarray:
    if x.ndim != 3:
        raise ShapeError(f"input must be (D, H, W), got shape {x.shape}")
    if x.shape[0] != bank.depth:
        raise ShapeError(f"input depth {x.shape[0]} does not match filter depth {bank.depth}")
    padded = _pad(x, pads, 0)
    _, fh, fw = bank.weights.shape[1:]
    out_h = _out_extent(padded.shape[1], fh, stride[1])
    out_w = _out_extent(padded.shape[2], fw, stride[0])
    dtype = np.result_type(x, bank.weights, bank.bias)
    out = np.zeros((bank.count, out_h, out_w), dtype=dtype)
    for n in range(bank.count):
        acc = np.zeros((out_h, out_w), dtype=dtype)
        for d in range(bank.depth):
            for r in range(fh):
                for c in range(fw):
                    acc += bank.weights[n, d, r, c] * _window_view(padded[d], r, c, out_h, out_w, stride)
        out[n] = acc + bank.bias[n]
    return out


def conv2d(x: np.ndarray, bank: FilterBank, stride: tuple[int, int] = (1, 1),
           padding: tuple[int, int] = (0, 0)) -> np.ndarray:
    """Zero-padded 2-D convolution (cross-correlation), output depth = filter count."""
    pw, ph = padding
    return _conv_padded(x, bank, stride, (pw, pw, ph, ph))


def _pool_padded(x: np.ndarray, window: tuple[int, int], stride: tuple[int, int],
                 pads: tuple[int, int, int, int], mode: str) -> np.ndarray:
    if x.ndim != 3:
        raise ShapeError(f"input must be (D, H, W), got shape {x.shape}")
    fw, fh = window
    if mode == "max":
        fill = -np.inf if np.issubdtype(x.dtype, np.floating) else np.iinfo(x.dtype).min
        padded = _pad(x, pads, fill)
        out_h = _out_extent(padded.shape[1], fh, stride[1])
        out_w = _out_extent(padded.shape[2], fw, stride[0])
        out = np.full((x.shape[0], out_h, out_w), fill, dtype=x.dtype)
        for r in range(fh):
            for c in range(fw):
                np.maximum(out, _window_view(padded, r, c, out_h, out_w, stride), out=out)
        return out
    if mode == "average":
        padded = _pad(x.astype(np.float64), pads, 0.0)
        mask = _pad(np.ones((1,) + x.shape[1:], dtype=np.float64), pads, 0.0)[0]
        out_h = _out_extent(padded.shape[1], fh, stride[1])
        out_w = _out_extent(padded.shape[2], fw, stride[0])
        total = np.zeros((x.shape[0], out_h, out_w), dtype=np.float64)
        count = np.zeros((out_h, out_w), dtype=np.float64)
        for r in range(fh):
            for c in range(fw):
                total += _window_view(padded, r, c, out_h, out_w, stride)
                count += _window_view(mask, r, c, out_h, out_w, stride)
        return total / count
    raise ShapeError(f"pooling mode must be 'max' or 'average', got {mode!r}")


def pool2d(x: np.ndarray, window: tuple[int, int], stride: tuple[int, int] = (1, 1),
           padding: tuple[int, int] = (0, 0), mode: str = "max") -> np.ndarray:
    """Max pooling pads with -inf; average pooling leaves padding out of the divisor."""
    pw, ph = padding
    return _pool_padded(x, window, stride, (pw, pw, ph, ph), mode)


def _activate(x: np.ndarray, name: str) -> np.ndarray:
    if name == "relu":
        return np.maximum(x, 0)
    if name == "sigmoid":
        return 1.0 / (1.0 + np.exp(-x))
    if name == "tanh":
        return np.tanh(x)
    return x


def _apply(layer: StackLayer, x: np.ndarray, pads: tuple[int, int, int, int]) -> np.ndarray:
    cfg = layer.config
    if cfg.kind is LayerKind.CONVOLUTION:
        return _conv_padded(x, layer.bank, cfg.stride, pads)
    if cfg.kind is LayerKind.POOLING:
        return _pool_padded(x, cfg.window, cfg.stride, pads, cfg.pool_mode)
    if cfg.kind is LayerKind.BATCH_NORM:
        return x * layer.scale[:, None, None] + layer.shift[:, None, None]
    return _activate(x, layer.activation)


def _dims(x: np.ndarray) -> tuple[int, int, int]:
    d, h, w = x.shape
    return (w, h, d)


def run_stack(stack: Sequence[StackLayer], x: np.ndarray) -> np.ndarray:
    """Apply every layer in order on the whole input."""
    for i, layer in enumerate(stack, start=1):
        cfg = layer.config
        if cfg.input_dims is not None and _dims(x) != tuple(cfg.input_dims):
            raise ShapeError(f"layer {i}: input dims {_dims(x)} do not match config {tuple(cfg.input_dims)}")
        pw, ph = cfg.padding if cfg.kind.is_spatial else (0, 0)
        x = _apply(layer, x, (pw, pw, ph, ph))
    return x


def _zero_interior(x: np.ndarray, cfg: LayerConfig, tile, width: int, height: int) -> np.ndarray:
    """Overwrite the outer P columns/rows on crop sides that face a neighbouring cell."""
    pw, ph = cfg.padding
    x = x.copy()
    if pw:
        if tile.alpha[0] > 0:
            x[..., :, :pw] = 0
        if tile.beta[0] < width:
            x[..., :, -pw:] = 0
    if ph:
        if tile.alpha[1] > 0:
            x[..., :ph, :] = 0
        if tile.beta[1] < height:
            x[..., -ph:, :] = 0
    return x


def run_cell(plan: TilePlan, stack: Sequence[StackLayer], x: np.ndarray, a: int, b: int,
             interior_zero_padding: bool = False) -> np.ndarray:
    """Run one fused tile stack on its crop of the whole input."""
    cell = plan.cell(a, b)
    crop = cell.crop
    part = x[:, crop.alpha[1]:crop.beta[1], crop.alpha[0]:crop.beta[0]]
    tiles = cell.tiles + (cell.output,)
    for i, layer in enumerate(stack):
        cfg = layer.config
        if interior_zero_padding and cfg.kind.is_spatial:
            w, h, _ = cfg.input_dims
            part = _zero_interior(part, cfg, tiles[i], w, h)
        part = _apply(layer, part, padding_for(cfg, tiles[i + 1]))
    return part


def run_tiled(plan: TilePlan, stack: Sequence[StackLayer], x: np.ndarray, *,
              interior_zero_padding: bool = False, max_workers: Optional[int] = None) -> np.ndarray:
    """Run every grid cell independently and stitch the output tiles.

    ``interior_zero_padding`` reproduces the lossy scheme that zero-pads
    interior crop edges instead of reading the neighbouring data.
    """
    if tuple(layer.config for layer in stack) != tuple(plan.layer_configs):
        raise TileError("stack parameters do not match the tile plan's layer configs")
    if _dims(x) != tuple(plan.layer_dims(1)):
        raise ShapeError(f"input dims {_dims(x)} do not match tile plan input {plan.layer_dims(1)}")
    cells = plan.cells()
    if max_workers and max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            parts = list(pool.map(lambda cell: run_cell(plan, stack, x, *cell, interior_zero_padding), cells))
    else:
        parts = [run_cell(plan, stack, x, a, b, interior_zero_padding) for a, b in cells]
    return stitch(dict(zip(cells, parts)), plan)


def cell_macs(plan: TilePlan) -> Mapping[tuple[int, int], int]:
    """Per-cell work: multiply-accumulates for convolutions, window reads for pooling."""
    work = {}
    for a, b in plan.cells():
        cell = plan.cell(a, b)
        tiles = cell.tiles + (cell.output,)
        total = 0
        for i, cfg in enumerate(plan.layer_configs):
            if not cfg.kind.is_spatial:
                continue
            out = tiles[i + 1]
            fw, fh = cfg.window
            per_output = fw * fh * cfg.input_dims[2]
            if cfg.kind is LayerKind.CONVOLUTION:
                total += out.area * per_output * cfg.filter.count
            else:
                total += out.area * per_output
        work[(a, b)] = total
    return work


def whole_macs(stack: Sequence[LayerConfig]) -> int:
    total = 0
    for cfg in stack:
        if not cfg.kind.is_spatial:
            continue
        w, h, d = cfg.output_dims
        fw, fh = cfg.window
        per_output = fw * fh * cfg.input_dims[2]
        total += w * h * (per_output * cfg.filter.count if cfg.kind is LayerKind.CONVOLUTION else per_output)
    return total


def tensor_equal(a: np.ndarray, b: np.ndarray) -> bool:
    """Exact equality, shapes included."""
    return a.shape == b.shape and bool(np.array_equal(a, b))
