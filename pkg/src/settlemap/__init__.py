"""Settlement extent mapping from multitemporal optical and radar imagery.

The package turns co-registered optical and radar raster time series
into a fused binary settlement mask: spectral-index temporal statistics
and backscatter statistics feed automatic training-point selection, two
SVM ensembles classify the stacks separately, and an object-based
post-classification merges the maps and removes false alarms.  A
complete accuracy-assessment protocol (stratified sampling, 3x3 block
response design, kappa/accuracy metrics) is included.
"""

from .errors import (
    ConfigError,
    ContractError,
    DomainError,
    PipelineStageError,
    RasterFormatError,
    SettlemapError,
    TrainingError,
    UnclassifiableUnitError,
)
from .grid import (
    GeoTransform,
    Grid,
    TemporalStack,
    downsample_percent,
    read_grid,
    read_mask,
    resample_nearest,
    write_grid,
)
from .features import FeatureStack, cov_texture, temporal_statistics
from .optical import OpticalFeatureStack, SpectralScene, build_optical_stack, spectral_index
from .radar import RadarFeatureStack, RadarScene, build_radar_stack, to_decibel
from .training import (
    CandidateMasks,
    ThresholdTable,
    TrainingSet,
    candidate_masks,
    load_threshold_table,
    sample_training,
    slope_from_dem,
)
from .svm import (
    EnsembleModel,
    HyperGrid,
    SvmModel,
    classify_map,
    default_hyper_grid,
    grid_search_cv,
    load_ensemble,
    rbf_kernel,
    save_ensemble,
    train_ensemble,
    train_svm,
)
from .objects import (
    ObjectSet,
    ReferenceLayerSet,
    agreement_mask,
    connected_components,
    exclusion_mask,
    filter_objects,
    merge_maps,
)
from .validation import (
    AssessmentBlock,
    ConfusionMatrix,
    SettlementDefinition,
    assess_blocks,
    block_agreement,
    compute_metrics,
    draw_samples,
    stratify_tiles,
)
from .config import PipelineConfig, load_config
from .pipeline import WorkingUnit, load_unit, mosaic, run_unit, run_units
from .synth import SyntheticScenario, generate_synthetic

__version__ = "0.1.0"
