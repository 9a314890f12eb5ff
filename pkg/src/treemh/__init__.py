"""Tree-structured multiple-try Metropolis-Hastings samplers.

A proposal kernel is applied along every edge of an undirected tree; the
chain alternates a Gibbs sweep over the non-root vertices with a Gibbs draw
of the root, so every vertex value is a candidate for the next state.
"""
from .tree_graph import TreeGraph, build_symmetric_tree, orient_from_root, path_between, symmetric_tree_size

__all__ = ["TreeGraph", "build_symmetric_tree", "orient_from_root", "path_between", "symmetric_tree_size"]
__version__ = "0.1.0"
