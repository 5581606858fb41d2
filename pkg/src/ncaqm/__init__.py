"""Network-coding-aware queue management: NUM solver and TCP/XOR mesh simulator."""
from .topology import (CodeCatalog, Flow, Hypergraph, Link, Network, Scenario, TopologyError,
                       build_code_catalog, build_hypergraph, enumerate_cliques, load_scenario,
                       named_scenario)

__version__ = "0.1.0"
from . import simcore  # noqa: E402  (loads before qm; the engine imports qm)
