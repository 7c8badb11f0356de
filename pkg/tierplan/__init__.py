"""
tierplan: partition DNN inference across device, edge and cloud tiers.
"""

from tierplan.graph_core import DnnGraph, build_graph, longest_distances
from tierplan.hpa_planner import PartitionPlan, hpa, incremental_update, total_latency
from tierplan.latency_model import BandwidthConfig, WeightedGraph, weight_graph
from tierplan.tiers import Tier
from tierplan.vsm_tiler import TilePlan, plan_tiles

__version__ = "0.1.0"

__all__ = [
    "BandwidthConfig",
    "DnnGraph",
    "PartitionPlan",
    "Tier",
    "TilePlan",
    "WeightedGraph",
    "build_graph",
    "hpa",
    "incremental_update",
    "longest_distances",
    "plan_tiles",
    "total_latency",
    "weight_graph",
]
