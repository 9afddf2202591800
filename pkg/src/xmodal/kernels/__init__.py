"""Hot inner loops. Each kernel has a numba-compiled path and a pure-numpy
path with matching semantics. Set ``XMODAL_NUMBA=0`` to force numpy (the
numpy path is also used when numba cannot be imported)."""
import os

from . import planefit, raycast

TYPE_PLANE, TYPE_SPHERE, TYPE_BOX, TYPE_CYLINDER = raycast.TYPE_PLANE, raycast.TYPE_SPHERE, raycast.TYPE_BOX, raycast.TYPE_CYLINDER


def numba_enabled():
    if os.environ.get("XMODAL_NUMBA", "1").strip().lower() in ("0", "false", "no", "off"):
        return False
    return raycast.HAVE_NUMBA


def cast_rays(origin, dirs, prims, max_t, backend=None):
    """Closest hit per ray. Returns ``(t, prim_index, world_normal)``; misses
    have ``t = inf`` and index -1."""
    backend = backend or ("numba" if numba_enabled() else "numpy")
    if backend == "numba":
        return raycast.cast_numba(origin, dirs, prims, max_t)
    return raycast.cast_numpy(origin, dirs, prims, max_t)


def fit_normals(points, depth, valid, window, ratio, backend=None):
    """Windowed least-squares plane normals. Returns ``(normals, ok)``."""
    backend = backend or ("numba" if numba_enabled() else "numpy")
    if backend == "numba":
        return planefit.fit_numba(points, depth, valid, window, ratio)
    return planefit.fit_numpy(points, depth, valid, window, ratio)
