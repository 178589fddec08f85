"""Machine-learning based auto-tuning for finite configuration spaces.

Pipeline: measure a random sample of configurations, train a bagged
ensemble of small neural networks on log execution times, predict over the
whole space, then measure the best-predicted candidates and return the
fastest one.
"""

from .errors import (
    AllCandidatesInvalidError,
    ConfigMismatchError,
    DivergenceError,
    EmptySpaceError,
    InsufficientDataError,
    InvalidConfigurationError,
    MltuneError,
    ParseError,
    RunnerError,
)
from .paramspace import (
    BUILTIN_SPACE_NAMES,
    Configuration,
    ParamDef,
    ParamSpace,
    ValidityRule,
    builtin_space,
    load_space,
    save_space,
)
from .measurement import (
    ExternalRunner,
    Outcome,
    Sample,
    SampleSet,
    SurrogateRunner,
    SurrogateSpec,
    SurrogateTerm,
    load_samples,
    load_surrogate_spec,
    save_samples,
    save_surrogate_spec,
    surrogate_true_time,
)
from .model import (
    Encoder,
    Ensemble,
    Network,
    TrainConfig,
    load_model,
    save_model,
    train_ensemble,
    train_network,
)
from .profiles import PROFILE_NAMES, builtin_surrogate
from .tuner import (
    TunerConfig,
    TuningReport,
    autotune,
    exhaustive_search,
    top_m_predicted,
)
from .evaluation import (
    learning_curve,
    mean_relative_error,
    random_baseline,
    scatter_export,
    slowdown_grid,
    transfer_report,
)

__version__ = "0.1.0"
