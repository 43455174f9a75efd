"""Sparse logistic stability selection for transfer-learning voxel screening."""

__version__ = "0.1.0"

from .ale import AleParams, AleTransformer, ale_featurize, ale_map, extract_peaks
from .exceptions import (ArgumentError, ConfigError, DegenerateLabels, EmptyMask, FormatError,
                         IoError, NumericError, ShapeError, StabselError)
from .inference import (anova_screen, bh_fdr, bonferroni, paired_t_map, qq_series,
                        screened_inference)
from .parcellation import Parcellation, WardAgglomeration, build_tree, cut
from .sparse_logit import SparseLogisticRegression, lambda_max
from .stability import (RandomizedLogisticRegression, k_max_heuristic, max_recoverable_group,
                        run_stability, select)
from .synth import SynthConfig
from .transfer import FeatureSpace, inline_learn, run_study, screening_study, transfer_apply
from .volume import AdjacencyGraph, ContrastImage, Dataset, VolumeSpace, adjacency, build_space

__all__ = [name for name in dir() if not name.startswith("_")]
