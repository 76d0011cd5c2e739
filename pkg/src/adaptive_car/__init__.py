"""Adaptive-neighbourhood spatio-temporal CAR models for areal disease counts.

The package is organised bottom-up: ``graph`` (area and border graphs),
``precision`` (sparse precision matrices and Cholesky factors), ``model``
(likelihood and priors), ``sampler`` (Metropolis-within-Gibbs), ``diagnostics``
(DIC, boundary probabilities, ROC), ``simulation`` (synthetic studies) and
``io``/``cli`` (files and the command line).
"""

__version__ = "0.1.0"

from .graph import (AreaGraph, EdgeGraph, EdgeSet, GraphError, build_area_graph,  # noqa: E402
                    build_edge_graph, build_edge_set, build_lattice)
from .model import Dataset, ModelSpec, ParameterState, Variant  # noqa: E402
from .sampler import ChainConfig, GibbsSampler, McmcSamples, run_chain  # noqa: E402

__all__ = [
    "AreaGraph", "EdgeGraph", "EdgeSet", "GraphError", "build_area_graph",
    "build_edge_graph", "build_edge_set", "build_lattice", "Dataset", "ModelSpec",
    "ParameterState", "Variant", "ChainConfig", "GibbsSampler", "McmcSamples", "run_chain",
]
