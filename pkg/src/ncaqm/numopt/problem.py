"""Flattened index arrays for one NUM instance.

Every (flow, hyperarc, code) triple with H = 1 becomes an *entry*. Entries are
grouped three ways: by code (the dominance simplex), by partition (entries
sharing one split variable) and partitions by coding path (the split simplex).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..topology import CodeCatalog, Hypergraph, Scenario


def _padded(groups: list[list[int]]) -> np.ndarray:
    width = max((len(g) for g in groups), default=1)
    out = np.full((len(groups), max(width, 1)), -1, dtype=np.intp)
    for row, g in enumerate(groups):
        out[row, : len(g)] = g
    return out


@dataclass
class Problem:
    hypergraph: Hypergraph
    catalog: CodeCatalog
    n_flows: int
    rates: np.ndarray            # R_h
    entry_flow: np.ndarray
    entry_hyperarc: np.ndarray
    entry_code: np.ndarray
    entry_partition: np.ndarray
    partition_flow: np.ndarray
    partition_path: np.ndarray   # (flow, coding path) group index of each partition
    code_groups: np.ndarray      # padded entry indices per code
    code_hyperarc: np.ndarray
    split_groups: np.ndarray     # padded partition indices per coding path
    clique_matrix: np.ndarray    # cliques x hyperarcs, boolean
    overprovision: float

    @property
    def n_entries(self) -> int:
        return len(self.entry_flow)

    @property
    def n_hyperarcs(self) -> int:
        return len(self.rates)

    @property
    def n_partitions(self) -> int:
        return len(self.partition_flow)

    @property
    def is_one_hop(self) -> bool:
        return bool(np.all(np.bincount(self.entry_partition, minlength=self.n_partitions) == 1))

    @classmethod
    def from_scenario(cls, scenario: Scenario, coding_depth: int | None = None) -> "Problem":
        hg, cat = scenario.build(coding_depth)
        return cls.build(hg, cat)

    @classmethod
    def build(cls, hypergraph: Hypergraph, catalog: CodeCatalog) -> "Problem":
        e_flow, e_h, e_k, e_part = [], [], [], []
        p_flow, p_path = [], []
        split_groups: list[list[int]] = []
        for flow in hypergraph.flows:
            for path in catalog.nc_paths[flow.id]:
                group = []
                for part in path.partitions:
                    pid = len(p_flow)
                    p_flow.append(flow.id)
                    p_path.append(len(split_groups))
                    group.append(pid)
                    for h, k in part.entries:
                        e_flow.append(flow.id)
                        e_h.append(h)
                        e_k.append(k)
                        e_part.append(pid)
                split_groups.append(group)
        by_code: dict[int, list[int]] = {}
        for e, k in enumerate(e_k):
            by_code.setdefault(k, []).append(e)
        code_ids = sorted(by_code)
        cliques = hypergraph.cliques
        cm = np.zeros((len(cliques), len(hypergraph.hyperarcs)), dtype=bool)
        for c, members in enumerate(cliques):
            cm[c, sorted(members)] = True
        return cls(
            hypergraph=hypergraph,
            catalog=catalog,
            n_flows=len(hypergraph.flows),
            rates=hypergraph.rates,
            entry_flow=np.array(e_flow, dtype=np.intp),
            entry_hyperarc=np.array(e_h, dtype=np.intp),
            entry_code=np.array(e_k, dtype=np.intp),
            entry_partition=np.array(e_part, dtype=np.intp),
            partition_flow=np.array(p_flow, dtype=np.intp),
            partition_path=np.array(p_path, dtype=np.intp),
            code_groups=_padded([by_code[k] for k in code_ids]),
            code_hyperarc=np.array([catalog.codes[k].hyperarc for k in code_ids], dtype=np.intp),
            split_groups=_padded(split_groups),
            clique_matrix=cm,
            overprovision=hypergraph.overprovision,
        )

    def uniform_split(self) -> np.ndarray:
        sizes = (self.split_groups >= 0).sum(axis=1)
        return 1.0 / sizes[self.partition_path]

    def uniform_dominance(self) -> np.ndarray:
        sizes = (self.code_groups >= 0).sum(axis=1)
        out = np.empty(self.n_entries)
        for row, size in zip(self.code_groups, sizes):
            out[row[:size]] = 1.0 / size
        return out

    def code_load(self, alpha: np.ndarray, x: np.ndarray) -> np.ndarray:
        """Per-hyperarc inflow: sum over codes of the largest member rate."""
        v = alpha * x[self.entry_flow]
        padded = np.where(self.code_groups >= 0, v[self.code_groups], -np.inf)
        per_code = padded.max(axis=1)
        return np.bincount(self.code_hyperarc, weights=per_code, minlength=self.n_hyperarcs)

    def clique_usage(self, alpha: np.ndarray, x: np.ndarray) -> np.ndarray:
        """Airtime each clique needs to carry the given rates."""
        return self.clique_matrix @ (self.code_load(alpha, x) / self.rates)
