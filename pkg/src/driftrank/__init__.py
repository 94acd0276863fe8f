"""Cost-efficient hyperparameter ranking for online learners on
non-stationary data streams: data-reduction schedulers, final-performance
predictors, ranking metrics, and a deterministic stream simulator."""

from .errors import DriftRankError
from .models import HyperConfig, ModelState, resume, train_online
from .predictors import (
    LawFit,
    SliceWeights,
    constant_predict,
    fit_trajectory_joint,
    slice_weights_from_assignment,
    stratified_predict,
    stratified_predict_all,
    trajectory_predict,
)
from .ranking import (
    GroundTruth,
    normalized_regret_at_k,
    pairwise_error_rate,
    rank_by_metric,
    regret,
    regret_at_k,
)
from .scheduler import (
    PredictorSpec,
    SearchOutcome,
    StoppingPlan,
    TraceArchive,
    cost_of_plan,
    equally_spaced_stops,
    late_start_search,
    one_shot_search,
    performance_based_search,
)
from .streams import (
    ClusterSpec,
    Stream,
    StreamSpec,
    SubsampleSpec,
    apply_subsample,
    generate,
    kmeans_slices,
    subsample_cost,
)
from .traces import (
    EvalWindow,
    PerformanceTrace,
    final_window_mean,
    relative_trace,
    window_mean,
)

__version__ = "0.1.0"
