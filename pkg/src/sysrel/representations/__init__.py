"""Bayesian-network and flowgraph system representations."""

from .bayesnet import (
    BayesNet,
    BNError,
    FaultTree,
    bn_joint_probability,
    bn_marginal,
    bn_structure_function,
    bn_system_reliability,
    bn_validate,
    fault_tree_to_bn,
)
from .flowgraph import (
    Branch,
    Flowgraph,
    FlowgraphError,
    Transmittance,
    flowgraph_solve,
    flowgraph_validate,
    mgf_invert,
    mgf_moments,
)

__all__ = [
    "BayesNet",
    "BNError",
    "FaultTree",
    "bn_joint_probability",
    "bn_marginal",
    "bn_structure_function",
    "bn_system_reliability",
    "bn_validate",
    "fault_tree_to_bn",
    "Branch",
    "Flowgraph",
    "FlowgraphError",
    "Transmittance",
    "flowgraph_solve",
    "flowgraph_validate",
    "mgf_invert",
    "mgf_moments",
]
