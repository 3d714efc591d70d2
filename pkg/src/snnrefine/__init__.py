"""Spiking concept-recognition networks, their fault-tolerant refinements, and checkers.

Modules:

``hierarchy``      concept hierarchies and exact support sets
``engine``         synchronous threshold-network execution
``abstract_nets``  single-rep networks A1 and A2
``detailed_nets``  multi-rep networks H (fully connected) and L (partially connected)
``refinement``     implementation relations and the combined pipeline
``sampler``        random failure / connectivity patterns and Monte-Carlo estimates
``cli``            the ``snnrefine`` command
"""
from .errors import ContractError, ParameterError, PreconditionError, QueryError
from .hierarchy import (ConceptHierarchy, ConceptId, HierarchyParams, SupportQuery,
                        build_uniform_hierarchy, support, validate_hierarchy)
from .engine import ExecutionTrace, Network, NetworkConfig, NeuronId, Presentation, execute
from .abstract_nets import AbstractParams, build_A1, build_A2
from .detailed_nets import (DetailedParams, EdgeSet, FailurePattern, MultiRepAssignment,
                            build_H, build_L, canonical_multi_assignment)
from .refinement import InputEnumeration, check_impl1, check_impl2, combined_pipeline

__version__ = "0.1.0"
