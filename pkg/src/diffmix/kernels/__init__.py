"""Hot numeric kernels with a numba fast path and a pure-numpy fallback.

The numba path is used when numba imports cleanly and the environment
variable ``DIFFMIX_DISABLE_NUMBA`` is unset or ``0``. Both implementations
stay importable as ``kernels.numpy_impl`` and ``kernels.numba_impl`` (the
latter is ``None`` when numba is unavailable) for parity tests and the
benchmark.
"""

import os

from . import _numpy as numpy_impl

try:
    from . import _numba as numba_impl
except ImportError:  # pragma: no cover - exercised only without numba
    numba_impl = None

NUMBA_DISABLED = os.environ.get("DIFFMIX_DISABLE_NUMBA", "0") not in ("", "0")
USE_NUMBA = numba_impl is not None and not NUMBA_DISABLED

KERNELS = (
    "attention_forward",
    "attention_backward",
    "silu_forward",
    "silu_backward",
    "ancestral_step",
    "cutmix_paste",
    "nearest_centroid",
    "soft_xent",
)

_active = numba_impl if USE_NUMBA else numpy_impl

# numpy's vectorized exp beats numba's scalar loop without SVML (see
# benchmarks/bench_kernels.py), so SiLU stays on numpy in both modes
NUMPY_ALWAYS = ("silu_forward", "silu_backward")

attention_forward = _active.attention_forward
attention_backward = _active.attention_backward
silu_forward = numpy_impl.silu_forward
silu_backward = numpy_impl.silu_backward
ancestral_step = _active.ancestral_step
cutmix_paste = _active.cutmix_paste
nearest_centroid = _active.nearest_centroid
soft_xent = _active.soft_xent


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"
