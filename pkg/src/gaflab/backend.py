"""Kernel backend selection.

The compiled extension is preferred when it imported cleanly; the
pure-numpy module is the fallback.  The extension only carries the
kernels where fusion beats numpy (backward passes, layer norm, Adam), so
the compiled backend is a blend: extension kernels plus numpy for the
SIMD-transcendental forwards.  ``GAFLAB_KERNELS=python|compiled`` forces
a choice (forcing ``compiled`` raises if the extension is absent), and
:func:`use_backend` switches at runtime, which the backend benchmark
relies on.
"""

import os
from types import SimpleNamespace

from gaflab import kernels_py

try:
    from gaflab import _kernels as _ext
except ImportError:
    _ext = None

_compiled = None
if _ext is not None:
    _compiled = SimpleNamespace(
        softmax_fwd=kernels_py.softmax_fwd,
        softmax_bwd=_ext.softmax_bwd,
        layernorm_fwd=_ext.layernorm_fwd,
        layernorm_bwd=_ext.layernorm_bwd,
        tanh_fwd=kernels_py.tanh_fwd,
        tanh_bwd=_ext.tanh_bwd,
        adam_step=_ext.adam_step,
    )

kernels = kernels_py
_name = "python"


def available_backends():
    names = ["python"]
    if _compiled is not None:
        names.append("compiled")
    return names


def use_backend(name):
    """Select the active kernel set ("python" or "compiled")."""
    global kernels, _name
    if name == "python":
        kernels = kernels_py
    elif name == "compiled":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not available in this install")
        kernels = _compiled
    else:
        raise ValueError(f"unknown backend {name!r}; expected 'python' or 'compiled'")
    _name = name


def backend_name():
    return _name


_forced = os.environ.get("GAFLAB_KERNELS", "auto")
if _forced == "auto":
    use_backend("compiled" if _compiled is not None else "python")
else:
    use_backend(_forced)
