from .dtw import DtwResult, dtw, mean_dtw
from .fcn import FcnClassifier, extract_features, train_fcn
from .fid import GaussianStats, fid_ramp, frechet_distance, gaussian_stats, mts_fid
from .pca import PcaModel, pca_fit, pca_project, pca_reconstruct
from .stats import histogram_pair, stat_features

__all__ = [
    "DtwResult", "dtw", "mean_dtw", "FcnClassifier", "extract_features", "train_fcn",
    "GaussianStats", "fid_ramp", "frechet_distance", "gaussian_stats", "mts_fid",
    "PcaModel", "pca_fit", "pca_project", "pca_reconstruct", "histogram_pair", "stat_features",
]
