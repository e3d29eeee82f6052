"""Tree-based multi-label conformal prediction with FWER-controlled label trees."""

from .bench import ExperimentConfig, ExperimentReport, evaluate, lambda_diagnostics, run_experiment
from .conformal import RandomStream, calibrate, pvalue_matrix, pvalues_for, smoothed_pvalue
from .data import (DataError, DataSplit, MultiLabelDataset, ParseError, SplitError,
                   decode_labelset, encode_labelset, filter_rare_labelsets, load_dataset,
                   observed_labelsets, split)
from .labeltree import LabelTree, build_tree, complete_linkage, hamming, layered_view, node_of
from .model import GaussianNB, fit_gnb, nonconformity, predict_proba
from .predictors import (MethodConfig, PredictionSet, br_predict, fit_pipeline, ps1_predict,
                         ps2_predict, tb_predict)
from .simulate import SimConfig, gen_dataset, gen_features, gen_labels
from .testing import (adaptive_allocation, bonferroni_allocation, hierarchical_test,
                      lambda_star_oracle, tune_alpha_star)

__version__ = "0.1.0"
