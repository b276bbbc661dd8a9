"""Hot-loop kernels with backend dispatch.

``numpy_ref`` is always importable; ``numba_jit`` loads only when the active
backend is numba (import compiles lazily, first call per dtype pays the jit
cost once, then the on-disk cache serves later processes).

Import the chosen implementation's functions from this module; import the
submodules directly when you need both, e.g. for agreement tests or the
benchmark.
"""

from .. import backend
from . import numpy_ref

if backend.using_numba():
    from . import numba_jit as _impl
else:
    _impl = numpy_ref

layernorm_fwd = _impl.layernorm_fwd
layernorm_bwd = _impl.layernorm_bwd
softmax_fwd = _impl.softmax_fwd
softmax_bwd = _impl.softmax_bwd
gelu_fwd = _impl.gelu_fwd
gelu_bwd = _impl.gelu_bwd
adam_update = _impl.adam_update
polyphase_apply = _impl.polyphase_apply
gauss_accum = _impl.gauss_accum
min_window_var = _impl.min_window_var

__all__ = [
    "layernorm_fwd",
    "layernorm_bwd",
    "softmax_fwd",
    "softmax_bwd",
    "gelu_fwd",
    "gelu_bwd",
    "adam_update",
    "polyphase_apply",
    "gauss_accum",
    "min_window_var",
    "numpy_ref",
]
