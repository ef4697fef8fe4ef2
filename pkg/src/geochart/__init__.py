"""Dissimilarity-metric channel charting with geodesic and uncertainty-aware losses."""

from ._backend import BACKEND
from .dataset import ArrayGeometry, Dataset, DatasetError, load_dataset, restrict_to_array, save_dataset
from .dissimilarity import (DissimilarityMatrix, DistanceModel, calibrate_adp_model, compute_matrix,
                            fuse, fuse_with_choice)
from .evaluation import (AffineTransform, EvalReport, continuity_trustworthiness, error_stats,
                         evaluate, kruskal_stress, optimal_affine)
from .geodesic import (GeodesicRealization, KnnGraph, all_pairs_shortest, ensure_connected,
                       geodesic_from_matrix, knn_graph, path_moments, reconstruct_path,
                       sample_realizations)
from .losses import loss_acc, loss_geo, loss_geo_unc, loss_siam, rho_geo
from .model import ChartModel, classical_mds, forward_all, init_free, init_parametric
from .pipeline import PipelineConfig
from .synth import SceneConfig, synth_scene
from .training import DivergenceError, TrainConfig, TrainingArtifacts, train

__version__ = "0.1.0"
