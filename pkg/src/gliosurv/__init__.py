"""Radiomics, relative invasiveness and survival prediction for glioma tumour structure maps."""

__version__ = "0.1.0"

from .ellipsoid import Ellipsoid, RICValue, min_volume_ellipsoid, relative_invasiveness  # noqa: E402
from .evaluation import EvalReport, classify_survival, cross_validate, filter_gtr, metrics  # noqa: E402
from .fusion import SegScore, majority_vote, postprocess, seg_metrics  # noqa: E402
from .models import EpsilonSVR, LinearSurvivalRegressor, RandomForestSurvivalRegressor  # noqa: E402
from .morphology import MorphFeatures, morphology  # noqa: E402
from .nifti import read_volume, write_volume  # noqa: E402
from .pipeline import PipelineConfig, PrognosticModel, extract_all, feature_names, run_study  # noqa: E402
from .selection import CorrelationPruner, RFESelector, SelectionReport  # noqa: E402
from .synth import CohortSpec, make_cohort, make_phantom  # noqa: E402
from .table import FeatureTable  # noqa: E402
from .texture import GrayLevelMatrix, TextureFeatures, build_matrix, texture_features  # noqa: E402
from .volume import (  # noqa: E402
    ComponentSet,
    IntensityVolume,
    LabelVolume,
    ROIMask,
    connected_components,
    roi_mask,
    zscore_normalize,
)
