"""
DAG model of a DNN: layer metadata, longest-distance layering, subset-input
siblings and feature-map shape propagation.

A graph always starts with a virtual input vertex that carries only the raw
input size. Vertex ids are strings; every id tie-break in the package uses
declaration order (``DnnGraph.order``), with the input vertex first.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from math import prod
from types import MappingProxyType
from typing import Any, Iterable, Mapping, Optional, Sequence

import networkx as nx

from tierplan.errors import GraphError, ShapeError

logger = logging.getLogger(__name__)

GRAPH_SCHEMA = "tierplan.graph"
GRAPH_VERSION = 1
DEFAULT_ELEMENT_SIZE = 4
DEFAULT_INPUT_ID = "v0"


class LayerKind(str, Enum):
    INPUT = "input"
    CONVOLUTION = "convolution"
    POOLING = "pooling"
    FULLY_CONNECTED = "fully-connected"
    ACTIVATION = "activation"
    BATCH_NORM = "batch-norm"
    CONCAT = "concat"
    ADD = "add"
    OTHER = "other"

    @property
    def is_spatial(self) -> bool:
        return self in (LayerKind.CONVOLUTION, LayerKind.POOLING)

    @property
    def is_transparent(self) -> bool:
        """Element-wise layers that keep the feature-map volume."""
        return self in (LayerKind.ACTIVATION, LayerKind.BATCH_NORM)


# Common spellings found in exported model descriptions.
_KIND_ALIASES: dict[str, tuple[LayerKind, Optional[str]]] = {
    "conv": (LayerKind.CONVOLUTION, None),
    "conv2d": (LayerKind.CONVOLUTION, None),
    "pool": (LayerKind.POOLING, "max"),
    "maxpool": (LayerKind.POOLING, "max"),
    "avgpool": (LayerKind.POOLING, "average"),
    "fc": (LayerKind.FULLY_CONNECTED, None),
    "linear": (LayerKind.FULLY_CONNECTED, None),
    "dense": (LayerKind.FULLY_CONNECTED, None),
    "relu": (LayerKind.ACTIVATION, "relu"),
    "sigmoid": (LayerKind.ACTIVATION, "sigmoid"),
    "tanh": (LayerKind.ACTIVATION, "tanh"),
    "bn": (LayerKind.BATCH_NORM, None),
    "batchnorm": (LayerKind.BATCH_NORM, None),
}


class ShapeMode(str, Enum):
    EXACT = "exact"
    FLOOR = "floor"


def window_extent(size: int, window: int, padding: int, stride: int,
                  mode: ShapeMode = ShapeMode.EXACT, axis: str = "width") -> int:
    """Number of window positions along one axis: (size - window + 2*padding)/stride + 1."""
    span = size - window + 2 * padding
    if span < 0:
        raise ShapeError(f"{axis}: window {window} does not fit input {size} with padding {padding}")
    if span % stride and ShapeMode(mode) is ShapeMode.EXACT:
        raise ShapeError(
            f"{axis}: ({size} - {window} + 2*{padding}) / {stride} is not an integer "
            f"(use floor mode for architectures that rely on truncation)"
        )
    return span // stride + 1


@dataclass(frozen=True)
class FilterShape:
    width: int
    height: int
    depth: Optional[int] = None
    count: Optional[int] = None


@dataclass(frozen=True)
class LayerConfig:
    """Hyper-parameters of one layer.

    Spatial layers (convolution, pooling) carry ``input_dims`` as
    (width, height, depth) plus filter, stride and padding. Other kinds may
    only know element counts, which are stored in the ``*_elements_declared``
    fields until dims can be derived.
    """

    kind: LayerKind
    input_dims: Optional[tuple[int, int, int]] = None
    filter: Optional[FilterShape] = None
    stride: Optional[tuple[int, int]] = None
    padding: Optional[tuple[int, int]] = None
    pool_mode: Optional[str] = None
    name: Optional[str] = None
    element_size: int = DEFAULT_ELEMENT_SIZE
    input_elements_declared: Optional[int] = None
    output_elements_declared: Optional[int] = None
    shape_mode: ShapeMode = ShapeMode.EXACT

    def __post_init__(self):
        if self.element_size <= 0:
            raise GraphError(f"element size must be positive, got {self.element_size}")
        if self.input_dims is not None:
            if len(self.input_dims) != 3 or any(d <= 0 for d in self.input_dims):
                raise ShapeError(f"input dims must be three positive entries, got {self.input_dims}")
        for label, value in (("input elements", self.input_elements_declared),
                             ("output elements", self.output_elements_declared)):
            if value is not None and value < 0:
                raise GraphError(f"{label} must be non-negative, got {value}")
        if self.kind.is_spatial:
            self._validate_spatial()
        if self.input_dims is not None and self.output_elements_declared is not None:
            dims = self.output_dims
            if dims is not None and prod(dims) != self.output_elements_declared:
                raise ShapeError(
                    f"declared output of {self.output_elements_declared} elements contradicts dims {dims}"
                )

    def _validate_spatial(self):
        missing = [n for n, v in (("filter", self.filter), ("stride", self.stride),
                                  ("padding", self.padding)) if v is None]
        if missing:
            raise GraphError(f"{self.kind.value} layer is missing hyper-parameters: {', '.join(missing)}")
        f = self.filter
        if f.width <= 0 or f.height <= 0:
            raise ShapeError(f"filter extent must be positive, got {f.width}x{f.height}")
        if any(s <= 0 for s in self.stride):
            raise ShapeError(f"stride must be positive, got {self.stride}")
        if any(p < 0 for p in self.padding):
            raise ShapeError(f"padding must be non-negative, got {self.padding}")
        if self.padding[0] >= f.width or self.padding[1] >= f.height:
            raise ShapeError(
                f"padding {self.padding} must be smaller than the window {f.width}x{f.height}; "
                "windows lying wholly in the padding are not supported"
            )
        if self.kind is LayerKind.CONVOLUTION:
            if f.count is None or f.count <= 0:
                raise GraphError("convolution needs a positive filter count")
            if f.depth is not None and f.depth <= 0:
                raise ShapeError(f"filter depth must be positive, got {f.depth}")
            if f.depth is not None and self.input_dims is not None and f.depth != self.input_dims[2]:
                raise ShapeError(f"filter depth {f.depth} differs from input depth {self.input_dims[2]}")
        if self.kind is LayerKind.POOLING and self.pool_mode not in ("max", "average"):
            raise GraphError(f"pooling mode must be 'max' or 'average', got {self.pool_mode!r}")
        if self.input_dims is not None:
            self.output_dims

    @property
    def window(self) -> tuple[int, int]:
        return (self.filter.width, self.filter.height)

    @property
    def output_dims(self) -> Optional[tuple[int, int, int]]:
        if self.input_dims is None:
            return None
        if not self.kind.is_spatial:
            if self.kind in (LayerKind.FULLY_CONNECTED, LayerKind.OTHER):
                return None
            return self.input_dims
        w, h, d = self.input_dims
        out_w = window_extent(w, self.filter.width, self.padding[0], self.stride[0], self.shape_mode, "width")
        out_h = window_extent(h, self.filter.height, self.padding[1], self.stride[1], self.shape_mode, "height")
        depth = self.filter.count if self.kind is LayerKind.CONVOLUTION else d
        return (out_w, out_h, depth)

    @property
    def input_elements(self) -> int:
        if self.input_dims is not None:
            return prod(self.input_dims)
        return self.input_elements_declared or 0

    @property
    def output_elements(self) -> int:
        dims = self.output_dims
        if dims is not None:
            return prod(dims)
        if self.output_elements_declared is not None:
            return self.output_elements_declared
        return self.input_elements

    @property
    def input_bytes(self) -> int:
        return self.input_elements * self.element_size

    @property
    def output_bytes(self) -> int:
        return self.output_elements * self.element_size


@dataclass(frozen=True)
class GraphLayering:
    delta: Mapping[str, int]
    layers: tuple[tuple[str, ...], ...]

    def layer_of(self, vertex: str) -> int:
        return self.delta[vertex]

    @property
    def depth(self) -> int:
        return len(self.layers)


class DnnGraph:
    """Immutable DAG of layer vertices rooted at a virtual input vertex."""

    def __init__(self, vertices: Sequence[str], links: Iterable[tuple[str, str]],
                 configs: Mapping[str, LayerConfig]):
        self._vertices = tuple(vertices)
        if not self._vertices:
            raise GraphError("graph has no input vertex")
        if len(set(self._vertices)) != len(self._vertices):
            raise GraphError("vertex ids must be unique")
        self._order = {v: i for i, v in enumerate(self._vertices)}

        link_list = [tuple(link) for link in links]
        seen: set[tuple[str, str]] = set()
        for u, v in link_list:
            if u not in self._order or v not in self._order:
                missing = u if u not in self._order else v
                raise GraphError(f"link ({u}, {v}) references unknown vertex {missing}")
            if u == v:
                raise GraphError(f"self-link on vertex {u}")
            if (u, v) in seen:
                raise GraphError(f"duplicate link ({u}, {v})")
            seen.add((u, v))
        self._links = tuple(sorted(seen, key=lambda l: (self._order[l[0]], self._order[l[1]])))

        missing_cfg = [v for v in self._vertices if v not in configs]
        if missing_cfg:
            raise GraphError(f"vertices without layer configuration: {', '.join(missing_cfg)}")
        self._configs = MappingProxyType({v: configs[v] for v in self._vertices})
        if self._configs[self.source].kind is not LayerKind.INPUT:
            raise GraphError(f"first vertex {self.source} must be the virtual input vertex")
        extra_inputs = [v for v in self._vertices[1:] if self._configs[v].kind is LayerKind.INPUT]
        if extra_inputs:
            raise GraphError(f"only one input vertex is allowed, found extra: {', '.join(extra_inputs)}")

        dag = nx.DiGraph()
        dag.add_nodes_from(self._vertices)
        dag.add_edges_from(self._links)
        if not nx.is_directed_acyclic_graph(dag):
            cycle = nx.find_cycle(dag)
            raise GraphError(f"cycle detected: {' -> '.join(u for u, _ in cycle)}")
        if dag.in_degree(self.source) != 0:
            raise GraphError(f"input vertex {self.source} must not have predecessors")
        reachable = nx.descendants(dag, self.source) | {self.source}
        unreachable = [v for v in self._vertices if v not in reachable]
        if unreachable:
            raise GraphError(f"unreachable vertex: {', '.join(unreachable)}")
        self._dag = dag

        self._preds = {v: frozenset(dag.predecessors(v)) for v in self._vertices}
        self._succs = {v: tuple(sorted(dag.successors(v), key=self._order.__getitem__))
                       for v in self._vertices}
        self._topo = tuple(nx.lexicographical_topological_sort(dag, key=self._order.__getitem__))

    @property
    def vertices(self) -> tuple[str, ...]:
        return self._vertices

    @property
    def links(self) -> tuple[tuple[str, str], ...]:
        return self._links

    @property
    def configs(self) -> Mapping[str, LayerConfig]:
        return self._configs

    @property
    def source(self) -> str:
        return self._vertices[0]

    def __contains__(self, vertex: object) -> bool:
        return vertex in self._order

    def __len__(self) -> int:
        return len(self._vertices)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DnnGraph):
            return NotImplemented
        return (self._vertices == other._vertices and self._links == other._links
                and dict(self._configs) == dict(other._configs))

    def __repr__(self) -> str:
        return f"DnnGraph({len(self._vertices)} vertices, {len(self._links)} links)"

    def _require(self, vertex: str):
        if vertex not in self._order:
            raise GraphError(f"unknown vertex {vertex!r}")

    def order(self, vertex: str) -> int:
        self._require(vertex)
        return self._order[vertex]

    def config(self, vertex: str) -> LayerConfig:
        self._require(vertex)
        return self._configs[vertex]

    def predecessors(self, vertex: str) -> frozenset[str]:
        self._require(vertex)
        return self._preds[vertex]

    def sorted_predecessors(self, vertex: str) -> tuple[str, ...]:
        return tuple(sorted(self.predecessors(vertex), key=self._order.__getitem__))

    def successors(self, vertex: str) -> tuple[str, ...]:
        self._require(vertex)
        return self._succs[vertex]

    def topological_order(self) -> tuple[str, ...]:
        return self._topo

    def output_bytes(self, vertex: str) -> int:
        """λ_out: size of the vertex's output tensor."""
        return self.config(vertex).output_bytes

    def input_bytes(self, vertex: str) -> int:
        """λ_in: total size of everything the vertex reads."""
        return sum(self._configs[h].output_bytes for h in self.predecessors(vertex))

    def is_chain(self) -> bool:
        return all(len(self._preds[v]) <= 1 and len(self._succs[v]) <= 1 for v in self._vertices)

    def with_configs(self, configs: Mapping[str, LayerConfig]) -> "DnnGraph":
        merged = dict(self._configs)
        merged.update(configs)
        return DnnGraph(self._vertices, self._links, merged)


def longest_distances(g: DnnGraph) -> GraphLayering:
    """Longest distance from the input vertex, in one topological pass."""
    delta: dict[str, int] = {}
    for v in g.topological_order():
        preds = g.predecessors(v)
        delta[v] = 1 + max(delta[h] for h in preds) if preds else 0
    depth = max(delta.values()) + 1
    buckets: list[list[str]] = [[] for _ in range(depth)]
    for v in g.vertices:
        buckets[delta[v]].append(v)
    return GraphLayering(delta=MappingProxyType(delta), layers=tuple(tuple(b) for b in buckets))


def direct_predecessors(g: DnnGraph, vertex: str) -> frozenset[str]:
    return g.predecessors(vertex)


def sis_vertices(g: DnnGraph, vertex: str, scope: Iterable[str]) -> frozenset[str]:
    """Subset-input siblings of ``vertex``: same-scope vertices whose
    predecessor set is a non-empty strict subset of ``vertex``'s."""
    preds = g.predecessors(vertex)
    found = set()
    for u in scope:
        if u == vertex:
            continue
        other = g.predecessors(u)
        if other and other < preds:
            found.add(u)
    return frozenset(found)


def _joined_dims(dims: list[tuple[int, int, int]], kind: LayerKind, vertex: str) -> tuple[int, int, int]:
    widths = {d[0] for d in dims}
    heights = {d[1] for d in dims}
    if len(widths) != 1 or len(heights) != 1:
        raise ShapeError(f"{vertex}: inputs disagree on spatial size: {dims}")
    if kind is LayerKind.ADD:
        if len({d[2] for d in dims}) != 1:
            raise ShapeError(f"{vertex}: add inputs disagree on depth: {dims}")
        return dims[0]
    return (dims[0][0], dims[0][1], sum(d[2] for d in dims))


def infer_shapes(g: DnnGraph) -> DnnGraph:
    """Propagate feature-map dims and element counts along the links.

    Missing dims are filled where derivable; declared dims that contradict
    the derived ones raise ShapeError. Applying it twice is a no-op.
    """
    configs = dict(g.configs)
    for v in g.topological_order():
        cfg = configs[v]
        preds = g.sorted_predecessors(v)
        if not preds:
            continue
        pred_cfgs = [configs[h] for h in preds]
        pred_dims = [c.output_dims for c in pred_cfgs]
        in_elements = sum(c.output_elements for c in pred_cfgs)
        updates: dict[str, Any] = {}

        dims_kind = cfg.kind.is_spatial or cfg.kind.is_transparent or cfg.kind in (LayerKind.CONCAT, LayerKind.ADD)
        if dims_kind and all(d is not None for d in pred_dims):
            derived = _joined_dims(pred_dims, cfg.kind, v)
            if cfg.input_dims is None:
                updates["input_dims"] = derived
            elif tuple(cfg.input_dims) != derived:
                raise ShapeError(f"{v}: declared input dims {tuple(cfg.input_dims)} contradict derived {derived}")
        elif cfg.kind is LayerKind.ADD:
            in_elements = pred_cfgs[0].output_elements
            if any(c.output_elements != in_elements for c in pred_cfgs):
                raise ShapeError(f"{v}: add inputs disagree on element count")

        if cfg.input_dims is None and "input_dims" not in updates:
            if cfg.kind.is_spatial:
                raise ShapeError(f"{v}: cannot derive input dims for {cfg.kind.value} layer")
            if cfg.input_elements_declared is None:
                updates["input_elements_declared"] = in_elements
            elif cfg.input_elements_declared != in_elements:
                raise ShapeError(
                    f"{v}: declared input of {cfg.input_elements_declared} elements contradicts "
                    f"{in_elements} produced by predecessors"
                )

        if cfg.kind is LayerKind.CONVOLUTION and cfg.filter.depth is None:
            depth = (updates.get("input_dims") or cfg.input_dims)[2]
            updates["filter"] = replace(cfg.filter, depth=depth)

        if updates:
            # output_dims is evaluated eagerly so the error names the vertex
            try:
                configs[v] = replace(cfg, **updates)
                configs[v].output_dims
            except ShapeError as e:
                raise ShapeError(f"{v}: {e}") from e
    if configs == dict(g.configs):
        return g
    return DnnGraph(g.vertices, g.links, configs)


def _pair(value: Any, label: str, vertex: str) -> Optional[tuple[int, int]]:
    if value is None:
        return None
    if isinstance(value, int):
        return (value, value)
    if isinstance(value, Mapping):
        value = (value.get("w", value.get("width")), value.get("h", value.get("height")))
    try:
        w, h = (int(x) for x in value)
    except (TypeError, ValueError) as e:
        raise GraphError(f"{vertex}: {label} must be an int or a [w, h] pair, got {value!r}") from e
    return (w, h)


def _parse_kind(raw: str) -> tuple[LayerKind, Optional[str]]:
    key = str(raw).strip().lower()
    try:
        return LayerKind(key), None
    except ValueError:
        pass
    if key in _KIND_ALIASES:
        return _KIND_ALIASES[key]
    return LayerKind.OTHER, key


def _parse_vertex(entry: Mapping[str, Any], element_size: int, shape_mode: ShapeMode) -> tuple[str, LayerConfig]:
    if "id" not in entry:
        raise GraphError(f"vertex entry without id: {dict(entry)}")
    vid = str(entry["id"])
    kind, alias_name = _parse_kind(entry.get("kind", "other"))
    es = int(entry.get("element_size", element_size))
    name = entry.get("name", alias_name)

    dims = entry.get("input_dims", entry.get("dims"))
    input_dims = tuple(int(x) for x in dims) if dims is not None else None

    filt = None
    raw_filter = entry.get("filter", entry.get("window"))
    if raw_filter is not None:
        if isinstance(raw_filter, Mapping):
            filt = FilterShape(int(raw_filter["width"]), int(raw_filter["height"]),
                               raw_filter.get("depth"), raw_filter.get("count"))
        else:
            values = [int(x) for x in raw_filter]
            if len(values) == 2:
                values += [None, None]
            elif len(values) == 3:
                values.insert(2, None)
            if len(values) != 4:
                raise GraphError(f"{vid}: filter must be [w, h], [w, h, count] or [w, h, depth, count]")
            filt = FilterShape(*values)
        if kind is LayerKind.CONVOLUTION and entry.get("filters") is not None:
            filt = replace(filt, count=int(entry["filters"]))

    pool_mode = entry.get("mode", alias_name if kind is LayerKind.POOLING else None)
    if kind is LayerKind.POOLING and pool_mode is None:
        pool_mode = "max"
    if pool_mode == "avg":
        pool_mode = "average"

    out_elems = entry.get("output_elements")
    if entry.get("output_bytes") is not None:
        out_bytes = int(entry["output_bytes"])
        if out_bytes % es:
            raise GraphError(f"{vid}: output_bytes {out_bytes} is not a multiple of element size {es}")
        if out_elems is not None and int(out_elems) * es != out_bytes:
            raise GraphError(f"{vid}: output_bytes {out_bytes} contradicts output_elements {out_elems}")
        out_elems = out_bytes // es
    in_elems = entry.get("input_elements")

    try:
        cfg = LayerConfig(
            kind=kind,
            input_dims=input_dims,
            filter=filt,
            stride=_pair(entry.get("stride"), "stride", vid),
            padding=_pair(entry.get("padding"), "padding", vid),
            pool_mode=pool_mode if kind is LayerKind.POOLING else None,
            name=name,
            element_size=es,
            input_elements_declared=int(in_elems) if in_elems is not None else None,
            output_elements_declared=int(out_elems) if out_elems is not None else None,
            shape_mode=shape_mode,
        )
    except GraphError as e:
        raise type(e)(f"{vid}: {e}") from e
    return vid, cfg


def build_graph(doc: Mapping[str, Any], shape_mode: Optional[str] = None) -> DnnGraph:
    """Build and validate a DnnGraph from a graph description document.

    When no vertex has kind ``input``, a virtual input vertex is inserted
    from the document's ``input`` section and linked to every vertex that
    has no declared predecessor.
    """
    version = doc.get("version", GRAPH_VERSION)
    if int(version) != GRAPH_VERSION:
        raise GraphError(f"unsupported graph document version {version}")
    element_size = int(doc.get("element_size", DEFAULT_ELEMENT_SIZE))
    mode = ShapeMode(shape_mode or doc.get("shape_mode", ShapeMode.EXACT.value))

    vertices: list[str] = []
    configs: dict[str, LayerConfig] = {}
    for entry in doc.get("vertices", []):
        vid, cfg = _parse_vertex(entry, element_size, mode)
        if vid in configs:
            raise GraphError(f"duplicate vertex id {vid}")
        vertices.append(vid)
        configs[vid] = cfg

    links = [(str(u), str(v)) for u, v in doc.get("links", [])]
    inputs = [v for v in vertices if configs[v].kind is LayerKind.INPUT]
    if len(inputs) > 1:
        raise GraphError(f"only one input vertex is allowed, found: {', '.join(inputs)}")
    if inputs:
        source = inputs[0]
        vertices.remove(source)
        vertices.insert(0, source)
    else:
        raw = doc.get("input")
        if raw is None and doc.get("input_bytes") is not None:
            raw = {"bytes": doc["input_bytes"]}
        if raw is None:
            raise GraphError("graph needs an input vertex or an 'input' section with the raw input size")
        source = str(raw.get("id", DEFAULT_INPUT_ID))
        if source in configs:
            raise GraphError(f"input id {source} collides with a declared vertex")
        entry = {"id": source, "kind": "input", "element_size": raw.get("element_size", element_size)}
        if raw.get("dims") is not None:
            entry["dims"] = raw["dims"]
        if raw.get("bytes") is not None:
            entry["output_bytes"] = raw["bytes"]
        _, configs[source] = _parse_vertex(entry, element_size, mode)
        targets = {v for _, v in links}
        links = [(source, v) for v in vertices if v not in targets] + links
        vertices.insert(0, source)
        logger.debug(f"🔍 Inserted virtual input vertex {source}")

    graph = infer_shapes(DnnGraph(vertices, links, configs))
    logger.debug(f"✅ Built graph with {len(graph)} vertices and {len(graph.links)} links")
    return graph


def parse_layer(entry: Mapping[str, Any], element_size: int = DEFAULT_ELEMENT_SIZE,
                shape_mode: ShapeMode = ShapeMode.EXACT) -> LayerConfig:
    """LayerConfig from a single vertex/layer entry (``id`` optional)."""
    return _parse_vertex({"id": "layer", **entry}, element_size, ShapeMode(shape_mode))[1]


def dump_layer(cfg: LayerConfig) -> dict[str, Any]:
    entry: dict[str, Any] = {"kind": cfg.kind.value, "element_size": cfg.element_size}
    if cfg.name is not None:
        entry["name"] = cfg.name
    if cfg.input_dims is not None:
        entry["input_dims"] = list(cfg.input_dims)
    if cfg.filter is not None:
        f = cfg.filter
        entry["filter"] = {"width": f.width, "height": f.height, "depth": f.depth, "count": f.count}
    if cfg.stride is not None:
        entry["stride"] = list(cfg.stride)
    if cfg.padding is not None:
        entry["padding"] = list(cfg.padding)
    if cfg.pool_mode is not None:
        entry["mode"] = cfg.pool_mode
    if cfg.input_dims is None and cfg.input_elements_declared is not None:
        entry["input_elements"] = cfg.input_elements_declared
    entry["output_elements"] = cfg.output_elements
    return entry


def dump_graph(g: DnnGraph) -> dict[str, Any]:
    """Normalized, fully explicit graph document."""
    return {
        "schema": GRAPH_SCHEMA,
        "version": GRAPH_VERSION,
        "shape_mode": g.config(g.source).shape_mode.value,
        "vertices": [{"id": v, **dump_layer(g.config(v))} for v in g.vertices],
        "links": [list(link) for link in g.links],
    }
