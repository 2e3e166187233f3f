"""Latent tree models: construction, simulation, learning and diagnostics."""

__version__ = "0.1.0"

from .data import Dataset, read_csv, write_csv
from .distance import (
    EmpiricalSecondOrder,
    distances_from_second_order,
    edge_correlations_from_lengths,
    empirical_second_order,
    neighbor_joining,
    quartet_select,
    symmetric_discrete_recover,
    triple_recover,
)
from .em import ScoredModel, bic_score, em_fixed_tree, fit_em
from .errors import (
    ArborError,
    DataError,
    DegenerateError,
    InconsistentInputError,
    NewickError,
    NonIdentifiableError,
    NumericalError,
    TreeError,
)
from .invariants import InvariantReport, edge_rank_test, quartet_inequality_check, tetrad_residuals
from .models import (
    GaussianParams,
    MarkovParams,
    RateModel,
    VectorMoments,
    gaussian_leaf_correlations,
    infer_hidden,
    linear_tau,
    loglik,
    map_hidden,
    markov_pairwise,
    rate_transition,
    regularity_check,
    saturation_bound,
    simulate,
    tau_edge,
    tau_matrix,
)
from .structure import (
    MarkedTree,
    WeightedGraph,
    chow_liu,
    learn_chow_liu,
    learn_structural_em,
    mutual_information_weights,
    structural_em,
    tree_surgery,
)
from .tree import (
    LeafLabeledTree,
    contract_edge,
    four_point_check,
    leaf_distances,
    newick_parse,
    newick_write,
    path_between,
    quartet_topology,
    suppress_degree_two,
    tree_depth,
)
