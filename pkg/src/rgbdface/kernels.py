"""Hot-loop kernels with a compiled core and a numpy fallback.

The Cython extension ``rgbdface._kernels`` is used when it was built;
otherwise (or when ``RGBDFACE_PURE_PYTHON=1``) the numpy versions in
``rgbdface._kernels_py`` are used. The two agree up to floating-point rounding.

``pupil_objective(gx, gy, keep, weight)``
    Objective map of the gradient-alignment pupil locator. For every
    candidate pixel c it returns ``weight[c] * mean_i (d_i . g_i)^2`` over
    the gradient pixels i selected by ``keep``.

``zbuffer_rects(x0, x1, y0, y1, z, height, width)``
    Rasterises half-open pixel rectangles with a nearest-depth test and
    returns, per pixel, the index of the winning rectangle (-1 if empty).
"""

import os

import numpy as np

from . import _kernels_py

if os.environ.get("RGBDFACE_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"


def available_backends():
    """Return ``{name: module}`` for every importable implementation."""
    out = {"python": _kernels_py}
    try:
        from . import _kernels  # type: ignore[attr-defined]

        out["cython"] = _kernels
    except ImportError:
        pass
    return out


def pupil_objective(gx, gy, keep, weight, impl=None):
    impl = impl or _impl
    return impl.pupil_objective(
        np.ascontiguousarray(gx, dtype=np.float64),
        np.ascontiguousarray(gy, dtype=np.float64),
        np.ascontiguousarray(keep, dtype=np.uint8),
        np.ascontiguousarray(weight, dtype=np.float64),
    )


def zbuffer_rects(x0, x1, y0, y1, z, height, width, impl=None):
    impl = impl or _impl
    as_i64 = lambda a: np.ascontiguousarray(a, dtype=np.int64)  # noqa: E731
    return impl.zbuffer_rects(
        as_i64(x0), as_i64(x1), as_i64(y0), as_i64(y1),
        np.ascontiguousarray(z, dtype=np.float64), int(height), int(width),
    )
