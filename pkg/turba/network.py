from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd
import networkx as nx
from scipy import sparse

from turba.utils import get_file_path


NETWORK_KINDS = ("complete", "erdos_renyi", "watts_strogatz", "barabasi_albert")


class SocialNetwork:
    """Undirected simple graph of influence links between agents, in canonical form.

    Attributes:
        n (int): number of agents, nodes are 0, ..., n - 1.
        edges (np.ndarray): int array of shape (n_edges, 2), rows (i, j) with i < j,
            sorted lexicographically.
        degrees (np.ndarray): degree of every node.
        adjacency (scipy.sparse.csr_matrix): symmetric 0/1 adjacency matrix,
            column indices sorted in every row.

    Args:
        n (int): number of agents.
        edges (array_like, optional (default=None)): pairs of node indices, in any order.

    Raises:
        ValueError: on self-loops, duplicate edges or indices outside [0, n).

    """

    def __init__(self, n: int, edges=None):
        if isinstance(n, bool) or not isinstance(n, (int, np.integer)) or n < 1:
            raise ValueError(f"Number of agents should be a positive integer, not {n!r}.")
        self.n = int(n)
        if edges is None:
            edges = np.zeros((0, 2), dtype=np.int64)
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if np.any(edges < 0) or np.any(edges >= self.n):
            raise ValueError(f"Edge endpoints should be within [0, {self.n}).")
        if np.any(edges[:, 0] == edges[:, 1]):
            loops = np.unique(edges[edges[:, 0] == edges[:, 1], 0]).tolist()
            raise ValueError(f"Self-loops are not allowed, found on nodes {loops}.")
        edges = np.sort(edges, axis=1)
        edges = edges[np.lexsort((edges[:, 1], edges[:, 0]))]
        if len(edges) > 1:
            duplicated = np.all(edges[1:] == edges[:-1], axis=1)
            if np.any(duplicated):
                raise ValueError(f"Duplicate edge {tuple(edges[1:][duplicated][0].tolist())}.")
        self.edges = edges
        self.edges.setflags(write=False)

        rows = np.concatenate([edges[:, 0], edges[:, 1]])
        cols = np.concatenate([edges[:, 1], edges[:, 0]])
        adjacency = sparse.csr_matrix(
            (np.ones(len(rows)), (rows, cols)), shape=(self.n, self.n)
        )
        adjacency.sort_indices()
        self.adjacency = adjacency
        self.degrees = np.diff(adjacency.indptr)

    def __repr__(self) -> str:
        _repr = f"{self.__class__.__module__}.{self.__class__.__qualname__}"
        return _repr + f"(n={self.n}, n_edges={self.n_edges})"

    def __eq__(self, other: object) -> bool:
        if isinstance(other, SocialNetwork):
            return self.n == other.n and np.array_equal(self.edges, other.edges)
        else:
            return False

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def neighbors(self, i: int) -> np.ndarray:
        """Neighbours of node i, ascending."""
        return self.adjacency.indices[self.adjacency.indptr[i] : self.adjacency.indptr[i + 1]]

    def neighbour_mean(self, values: np.ndarray) -> np.ndarray:
        """Mean of values over the neighbours of every node.

        Isolated nodes get their own value.

        """
        values = np.asarray(values, dtype=float)
        out = values.copy()
        np.divide(self.adjacency @ values, self.degrees, out=out, where=self.degrees > 0)
        return out

    def to_graph(self) -> nx.Graph:
        graph = nx.Graph()
        graph.add_nodes_from(range(self.n))
        graph.add_edges_from(self.edges.tolist())
        return graph

    @classmethod
    def from_graph(cls, graph: nx.Graph) -> "SocialNetwork":
        """Build from a networkx graph whose nodes are 0, ..., n - 1."""
        n = graph.number_of_nodes()
        if set(graph.nodes) != set(range(n)):
            raise ValueError("Graph nodes should be labelled 0, ..., n - 1.")
        return cls(n, list(graph.edges()))

    def summary(self) -> Dict[str, Any]:
        """Audit statistics of the network."""
        graph = self.to_graph()
        return {
            "n": self.n,
            "n_edges": self.n_edges,
            "mean_degree": float(np.mean(self.degrees)),
            "max_degree": int(np.max(self.degrees)),
            "isolated": int(np.sum(self.degrees == 0)),
            "clustering": float(nx.average_clustering(graph)),
            "n_components": int(nx.number_connected_components(graph)),
        }


def _barabasi_albert_edges(n: int, m: int, rng: np.random.Generator) -> List[tuple]:
    """Preferential attachment grown from an m-clique.

    Each new node links to m distinct existing nodes drawn with probability proportional to
    their degree, uniformly while every degree is zero.

    """
    edges = [(i, j) for i in range(m) for j in range(i + 1, m)]
    degrees = np.zeros(n, dtype=float)
    degrees[:m] = m - 1
    for v in range(m, n):
        weights = degrees[:v]
        total = weights.sum()
        p = weights / total if total > 0 else None
        targets = rng.choice(v, size=m, replace=False, p=p)
        for t in targets:
            edges.append((int(t), v))
        degrees[targets] += 1
        degrees[v] = m
    return edges


def generate_network(
    kind: str,
    n: int,
    seed: int,
    p: Optional[float] = None,
    k: Optional[int] = None,
    beta: Optional[float] = None,
    m: Optional[int] = None,
) -> SocialNetwork:
    """Build a seeded social network.

    Args:
        kind (str): one of complete, erdos_renyi, watts_strogatz, barabasi_albert.
        n (int): number of agents.
        seed (int): seed of the construction, equal arguments give equal edge sets.
        p (float, optional (default=None)): edge probability of erdos_renyi, in [0, 1].
        k (int, optional (default=None)): even lattice degree of watts_strogatz, k < n.
        beta (float, optional (default=None)): rewiring probability of watts_strogatz.
        m (int, optional (default=None)): attachments per new node of barabasi_albert,
            1 <= m < n.

    Returns:
        SocialNetwork: the network.

    Raises:
        ValueError: if kind is unknown or its parameters are out of range.

    """
    if isinstance(n, bool) or not isinstance(n, (int, np.integer)) or n < 1:
        raise ValueError(f"Number of agents should be a positive integer, not {n!r}.")
    if kind == "complete":
        graph = nx.complete_graph(n)
    elif kind == "erdos_renyi":
        if p is None or not 0 <= p <= 1:
            raise ValueError(f"erdos_renyi needs an edge probability p in [0, 1], not {p}.")
        graph = nx.fast_gnp_random_graph(n, p, seed=seed)
    elif kind == "watts_strogatz":
        if k is None or int(k) != k or k < 0 or k % 2 or k >= n:
            raise ValueError(f"watts_strogatz needs an even degree 0 <= k < n={n}, not {k}.")
        if beta is None or not 0 <= beta <= 1:
            raise ValueError(
                f"watts_strogatz needs a rewiring probability beta in [0, 1], not {beta}."
            )
        graph = nx.watts_strogatz_graph(n, int(k), beta, seed=seed)
    elif kind == "barabasi_albert":
        if m is None or int(m) != m or not 1 <= m < n:
            raise ValueError(f"barabasi_albert needs 1 <= m < n={n}, not {m}.")
        rng = np.random.default_rng(seed)
        return SocialNetwork(n, _barabasi_albert_edges(n, int(m), rng))
    else:
        raise ValueError(f"Unknown network kind {kind}, choose from {NETWORK_KINDS}.")
    return SocialNetwork.from_graph(graph)


def network_from_config(
    config: Dict[str, Any], seed: int, folder_list: Optional[List[str]] = None
) -> SocialNetwork:
    """Build the network described by the network section of a run configuration.

    Either ``{"edge_list": path, "n": n}`` for a fixed topology, or ``{"kind": kind, "n": n,
    ...}`` with the arguments of generate_network.

    """
    config = dict(config)
    if "edge_list" in config:
        path = get_file_path(config.pop("edge_list"), folder_list)
        return read_edge_list(path, n=config.get("n"))
    if "kind" not in config or "n" not in config:
        raise ValueError("The network configuration needs kind and n, or an edge_list.")
    return generate_network(seed=seed, **config)


def read_edge_list(path: str, n: Optional[int] = None) -> SocialNetwork:
    """Read a two-column CSV edge list with header i,j.

    Args:
        path (str): csv file.
        n (int, optional (default=None)): number of agents, the largest index + 1 by default.

    """
    df = pd.read_csv(path)
    if list(df.columns) != ["i", "j"]:
        raise ValueError(f"{path} should have the header i,j, not {','.join(df.columns)}.")
    for column in ("i", "j"):
        if not pd.api.types.is_integer_dtype(df[column]):
            raise ValueError(f"Column {column} of {path} should hold integer node indices.")
    edges = df[["i", "j"]].to_numpy(dtype=np.int64)
    if n is None:
        n = int(edges.max()) + 1 if len(edges) else 1
    return SocialNetwork(n, edges)


def write_edge_list(net: SocialNetwork, path: str) -> None:
    print(f"Saving {path}")
    pd.DataFrame(net.edges, columns=["i", "j"]).to_csv(path, index=False)
