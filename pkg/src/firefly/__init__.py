"""Progressive network growth by firefly descent, with a mask-based continual variant."""
from .continual import (
    ContinualConfig,
    MasterNetwork,
    TaskMask,
    evaluate_all_tasks,
    grow_for_task,
    retrieve_task_model,
    train_selection_mask,
)
from .data import Dataset, gen_cl_tasks, gen_toy_dataset, gen_toy_truth
from .estimators import FireflyClassifier, FireflyRegressor
from .exceptions import (
    ConfigError,
    ContractError,
    FireflyError,
    NumericError,
    StructuralError,
)
from .growth import (
    GrowthConfig,
    Schedule,
    ScoreVector,
    firefly_train,
    grow_step,
    integrated_gradient_scores,
    select_depth,
    select_width,
    step_one,
)
from .network import AugmentedNetwork, CandidateGate, GrowableNetwork, materialize

__version__ = "0.1.0"
