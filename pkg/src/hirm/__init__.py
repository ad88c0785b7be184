"""Hierarchical infinite relational model.

Bayesian nonparametric structure discovery, co-clustering, and density
estimation over multi-domain relational data, with collapsed Gibbs inference
and an exact enumeration oracle for correctness testing.
"""

from .schema import (
    ObservationStore,
    RelationSignature,
    RelationalSystem,
    SchemaError,
    ObservationError,
    load_observations,
    parse_schema,
    render_schema,
)
from .partition import NEW_TABLE, CrpPartition
from .likelihood import (
    BetaBernoulli,
    DirichletCategorical,
    UniformBernoulli,
    LikelihoodError,
    logp_given_theta,
    make_family,
)
from .irm import Subsystem
from .hirm import HirmState
from .query import (
    Ensemble,
    QueryRow,
    cocluster_matrix,
    ensemble_logp,
    impute,
    parse_query_rows,
    predictive_logp,
    simulate,
)
from .oracle import (
    EnumerationReport,
    FeasibilityError,
    bell_number,
    enumerate_posterior,
    exact_fresh_row_logp,
    set_partitions,
)

__version__ = "0.1.0"

__all__ = [
    "BetaBernoulli",
    "CrpPartition",
    "DirichletCategorical",
    "Ensemble",
    "EnumerationReport",
    "FeasibilityError",
    "HirmState",
    "LikelihoodError",
    "NEW_TABLE",
    "ObservationError",
    "ObservationStore",
    "QueryRow",
    "RelationSignature",
    "RelationalSystem",
    "SchemaError",
    "Subsystem",
    "UniformBernoulli",
    "bell_number",
    "cocluster_matrix",
    "ensemble_logp",
    "enumerate_posterior",
    "exact_fresh_row_logp",
    "impute",
    "load_observations",
    "logp_given_theta",
    "make_family",
    "parse_query_rows",
    "parse_schema",
    "predictive_logp",
    "render_schema",
    "set_partitions",
    "simulate",
]
