"""Multi-building/multi-floor indoor localization from Wi-Fi fingerprints.

One dense network answers building, floor and location at once through a
hierarchical multi-label target encoding; its location scores drive a
candidate-averaging coordinate estimator. See README.md for the pipeline.
"""

from .classifier import FingerprintClassifier, FitReport, fit_classifier
from .dataset import (
    DatasetStats,
    FingerprintRecord,
    HierarchicalLabel,
    NormalizedSample,
    RefPoint,
    build_reference_index,
    compute_stats,
    normalize_rss,
    parse_csv,
    read_cache,
    samples_from_records,
    split_train_val,
    write_cache,
)
from .errors import (
    BflocError,
    DivergenceError,
    FormatError,
    ParseError,
    SchemaError,
    TruncationError,
    UnknownIdentifierError,
    ValidationError,
    VersionError,
)
from .evaluation import (
    KnnReport,
    MetricsReport,
    best_report,
    evaluate,
    evaluate_scores,
    format_report,
    knn_baseline,
    run_sweep,
)
from .labels import LabelCodec
from .localizer import (
    CoordinateEstimate,
    estimate_coordinates,
    localize,
    localize_batch,
    surviving_candidates,
    top_candidates,
)
from .neuralnet import (
    Adam,
    AdamParams,
    DenseNetwork,
    Layer,
    glorot_uniform,
    load_network,
    save_network,
    train_network,
)
from .sae import build_autoencoder, encode, encoder_layers, train_autoencoder

__version__ = "0.1.0"
