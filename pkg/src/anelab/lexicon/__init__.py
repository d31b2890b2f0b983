"""Applications built on phone and word embeddings."""

from .dialect import dialect_dissimilarity, read_dissimilarity_csv, write_dissimilarity_csv
from .editdist import CostMatrix, min_edit_distance, oov_recover, substitution_costs
from .lengths import LengthDistribution, empirical_distribution, length_distribution
from .tree import AdditiveTree, fit_additive_tree
from .wakeword import wakeword_confusion, wakeword_sweep

__all__ = [
    "AdditiveTree",
    "CostMatrix",
    "LengthDistribution",
    "dialect_dissimilarity",
    "empirical_distribution",
    "fit_additive_tree",
    "length_distribution",
    "min_edit_distance",
    "oov_recover",
    "read_dissimilarity_csv",
    "substitution_costs",
    "wakeword_confusion",
    "wakeword_sweep",
    "write_dissimilarity_csv",
]
