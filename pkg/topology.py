"""
內建拓樸
NSF 14 節點骨幹網路與最少跳數路徑預先計算
"""

from typing import Dict, Iterable, List, Mapping, Sequence, Tuple

import networkx as nx

from bandwidth_model import LinkId, NetworkGraph, mbps_to_kbps
from path_admission import NoPath, PathTable, segments_from_hops

# NSF 骨幹網路的 21 條雙向鏈路
NSF14_EDGES: List[Tuple[int, int]] = [
    (0, 1), (0, 2), (0, 7), (1, 2), (1, 3), (2, 5), (3, 4),
    (3, 10), (4, 5), (4, 6), (5, 9), (5, 12), (6, 7), (7, 8),
    (8, 9), (8, 11), (8, 13), (10, 11), (10, 13), (11, 12), (12, 13),
]


def bidirectional_links(edges: Iterable[Tuple[int, int]], bandwidth_kbps: int) -> Dict[LinkId, int]:
    """雙向鏈路展開為兩條有向鏈路"""
    links: Dict[LinkId, int] = {}
    for i, j in edges:
        links[(i, j)] = bandwidth_kbps
        links[(j, i)] = bandwidth_kbps
    return links


def nsf14_graph(bandwidth_mbps: float = 1000) -> NetworkGraph:
    """
    取得 NSF 14 節點拓樸

    Args:
        bandwidth_mbps: 每條鏈路的頻寬

    Returns:
        14 個交換器、42 條有向鏈路的 NetworkGraph
    """
    return NetworkGraph(tuple(range(14)), bidirectional_links(NSF14_EDGES, mbps_to_kbps(bandwidth_mbps)))


def to_networkx(graph: NetworkGraph) -> nx.DiGraph:
    digraph = nx.DiGraph()
    digraph.add_nodes_from(graph.switches)
    digraph.add_edges_from(sorted(graph.links))
    return digraph


def shortest_hop_paths(graph: NetworkGraph, pairs: Iterable[Tuple[int, int]]) -> Dict[Tuple[int, int], List[int]]:
    """以最少跳數計算 (來源, 目的) 的交換器序列"""
    digraph = to_networkx(graph)
    paths = {}
    for src, dst in pairs:
        try:
            paths[(src, dst)] = nx.shortest_path(digraph, src, dst)
        except (nx.NetworkXNoPath, nx.NodeNotFound):
            raise NoPath(f"拓樸中 {src} 無法到達 {dst}")
    return paths


def build_path_table(hops: Mapping[Tuple[int, int], Sequence[int]]) -> PathTable:
    return PathTable({pair: segments_from_hops(seq) for pair, seq in sorted(hops.items())})
