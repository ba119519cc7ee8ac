"""Histogram-based gradient-boosted decision trees.

Regression and 4-band softmax classification with deterministic training,
gain/split feature importances, and a canonical-JSON model format. The hot
histogram kernels have a compiled backend with a numpy fallback; see
``kernels.BACKEND`` for which one is active.
"""

from .booster import (  # noqa: F401
    GbdtModel,
    GbdtParams,
    TASK_BANDS,
    TASK_REGRESSION,
    Tree,
    TreeNode,
    fit_multiclass,
    fit_regression,
    grid_search,
)
from .kernels import BACKEND, available_backends  # noqa: F401
from .serialize import (  # noqa: F401
    canonical_dumps,
    load_json,
    load_model,
    model_from_dict,
    model_to_dict,
    save_json,
    save_model,
)
