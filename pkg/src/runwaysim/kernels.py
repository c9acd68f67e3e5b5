"""Backend selection for the numeric kernels.

The compiled extension is used when it was built; otherwise the pure-Python
module is loaded. Setting ``RUNWAYSIM_PURE_PYTHON=1`` forces the fallback.
"""

import os

BACKEND = "python"

if os.environ.get("RUNWAYSIM_PURE_PYTHON", "") not in ("", "0"):
    from . import _pykernels as _impl
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]

        BACKEND = "compiled"
    except ImportError:  # pragma: no cover - depends on the build
        from . import _pykernels as _impl

KERNEL_NAMES = ("ig_cdf", "ig_quantile", "ig_quantiles", "erlang_unit_quantile",
                "erlang_unit_quantiles", "erlang_residual_quantile", "sequence_costs",
                "order_cost", "first_hits", "h_moves", "fill_population", "keep_best",
                "running_update", "row_in", "row_union", "predict_unreleased", "predict_queue",
                "PassContext")


def _bind(impl):
    g = globals()
    for name in KERNEL_NAMES:
        g[name] = getattr(impl, name)


_bind(_impl)


def load_backend(name):
    """Return the kernel module for ``name`` ('compiled' or 'python')."""
    if name == "python":
        from . import _pykernels

        return _pykernels
    if name == "compiled":
        from . import _kernels  # type: ignore[attr-defined]

        return _kernels
    raise ValueError(f"unknown backend {name!r}")


def use_backend(name):
    """Switch every kernel in this module to backend ``name`` and return the
    previous backend name. Callers resolve kernels through this module at
    call time, so the switch takes effect immediately."""
    global BACKEND
    prev = BACKEND
    _bind(load_backend(name))
    BACKEND = name
    return prev
