"""Backend selection for the fixed-point loops.

The compiled Cython module is used when it was built; otherwise the numpy
fallback is imported. Set ``DRCRL_PURE_PYTHON=1`` to force the fallback.
"""

import os

if os.environ.get("DRCRL_PURE_PYTHON", "") not in ("", "0"):
    from drcrl import _kernels_py as _impl

    BACKEND = "python"
else:
    try:
        from drcrl import _kernels as _impl

        BACKEND = "cython"
    except ImportError:
        from drcrl import _kernels_py as _impl

        BACKEND = "python"

policy_eval = _impl.policy_eval
value_iteration = _impl.value_iteration
q_values = _impl.q_values
apply_policy = _impl.apply_policy

__all__ = ["BACKEND", "policy_eval", "value_iteration", "q_values", "apply_policy"]
