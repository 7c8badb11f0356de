from pathlib import Path

import pytest

from tierplan import documents
from tierplan.graph_core import build_graph
from tierplan.latency_model import BandwidthConfig, TierTimes, WeightedGraph, network_preset, weight_graph

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"


def fixture_path(name: str) -> Path:
    return FIXTURES / name


def load_weighted(graph: str, profile: str, bandwidth: BandwidthConfig) -> WeightedGraph:
    g = documents.load_graph(fixture_path(graph))
    prof = documents.profile_from_document(documents.read_json(fixture_path(profile)))
    return weight_graph(g, bandwidth, profile=prof)


def uniform_weights(g, times=(3e-3, 2e-3, 1e-3)) -> dict:
    return {v: TierTimes(0.0, 0.0, 0.0) if v == g.source else TierTimes(*times) for v in g.vertices}


def chain_graph(*output_bytes: int):
    """v0 -> v1 -> ... with the given output sizes (bytes, element size 1)."""
    vertices = [{"id": f"v{i}", "kind": "input" if i == 0 else "other", "output_bytes": b}
                for i, b in enumerate(output_bytes)]
    links = [[f"v{i}", f"v{i + 1}"] for i in range(len(output_bytes) - 1)]
    return build_graph({"element_size": 1, "vertices": vertices, "links": links})


@pytest.fixture
def wifi() -> BandwidthConfig:
    return network_preset("wifi")


@pytest.fixture
def branching_graph():
    return documents.load_graph(fixture_path("branching_graph.json"))


@pytest.fixture
def branching_wg(wifi):
    return load_weighted("branching_graph.json", "branching_profile.json", wifi)


@pytest.fixture
def three_stage_wg(wifi):
    return load_weighted("three_stage_graph.json", "three_stage_profile.json", wifi)


@pytest.fixture
def vgg_wg(wifi):
    return load_weighted("vgg_block_graph.json", "vgg_block_profile.json", wifi)


@pytest.fixture
def sibling_wg(wifi):
    g = documents.load_graph(fixture_path("sibling_graph.json"))
    return WeightedGraph(g, uniform_weights(g), wifi)
