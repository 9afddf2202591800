"""Ray / analytic-primitive intersection.

Primitive table rows are ``[type, p0, ..., p6]``:

* plane     z = p0
* sphere    centre (p0, p1, p2), radius p3
* box       min (p0, p1, p2), max (p3, p4, p5)
* cylinder  vertical axis at (p0, p1), radius p2, z in [p3, p4], capped
"""
import numpy as np

try:
    import numba
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

TYPE_PLANE, TYPE_SPHERE, TYPE_BOX, TYPE_CYLINDER = 0, 1, 2, 3
T_MIN = 1e-6
PRIM_WIDTH = 8


# ---------------------------------------------------------------------------
# numpy path: loop over primitives, vectorised over rays


def _np_plane(o, d, p):
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (p[1] - o[2]) / d[:, 2]
    t = np.where(np.isfinite(t) & (t > T_MIN), t, np.inf)
    n = np.zeros_like(d)
    n[:, 2] = 1.0
    return t, n


def _np_sphere(o, d, p):
    c = p[1:4]
    r = p[4]
    oc = o - c
    a = np.einsum("ij,ij->i", d, d)
    b = 2.0 * (d @ oc)
    cc = oc @ oc - r * r
    disc = b * b - 4 * a * cc
    hit = disc >= 0
    sq = np.sqrt(np.where(hit, disc, 0.0))
    t1 = (-b - sq) / (2 * a)
    t2 = (-b + sq) / (2 * a)
    t = np.where(t1 > T_MIN, t1, np.where(t2 > T_MIN, t2, np.inf))
    t = np.where(hit, t, np.inf)
    tt = np.where(np.isfinite(t), t, 0.0)
    n = (o + tt[:, None] * d - c) / r
    return t, n


def _np_box(o, d, p):
    lo, hi = p[1:4], p[4:7]
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        ta = (lo - o) * inv
        tb = (hi - o) * inv
    # rays parallel to a slab: inside -> (-inf, inf), outside -> empty
    par = d == 0
    inside = (o >= lo) & (o <= hi)
    ta = np.where(par, np.where(inside, -np.inf, np.inf), ta)
    tb = np.where(par, np.where(inside, np.inf, -np.inf), tb)
    t0 = np.minimum(ta, tb)
    t1 = np.maximum(ta, tb)
    near_axis = np.argmax(t0, axis=1)
    far_axis = np.argmin(t1, axis=1)
    tnear = t0.max(axis=1)
    tfar = t1.min(axis=1)
    ok = tnear <= tfar
    use_near = tnear > T_MIN
    t = np.where(ok & use_near, tnear, np.where(ok & (tfar > T_MIN), tfar, np.inf))
    axis = np.where(use_near, near_axis, far_axis)
    rows = np.arange(len(d))
    dax = d[rows, axis]
    n = np.zeros_like(d)
    # entering face opposes the ray; exit face follows it
    n[rows, axis] = np.where(use_near, -np.sign(dax), np.sign(dax))
    return t, n


def _np_cylinder(o, d, p):
    cx, cy, r, z0, z1 = p[1], p[2], p[3], p[4], p[5]
    ox, oy = o[0] - cx, o[1] - cy
    a = d[:, 0] ** 2 + d[:, 1] ** 2
    b = 2 * (ox * d[:, 0] + oy * d[:, 1])
    cc = ox * ox + oy * oy - r * r
    disc = b * b - 4 * a * cc
    good = (disc >= 0) & (a > 0)
    sq = np.sqrt(np.where(good, disc, 0.0))
    aa = np.where(a > 0, a, 1.0)
    best = np.full(len(d), np.inf)
    n = np.zeros_like(d)
    for sign in (-1.0, 1.0):
        t = (-b + sign * sq) / (2 * aa)
        z = o[2] + t * d[:, 2]
        take = good & (t > T_MIN) & (z >= z0) & (z <= z1) & (t < best)
        best = np.where(take, t, best)
        hx = ox + t * d[:, 0]
        hy = oy + t * d[:, 1]
        n[take] = np.stack([hx / r, hy / r, np.zeros_like(hx)], axis=1)[take]
    for zc, nz in ((z0, -1.0), (z1, 1.0)):
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (zc - o[2]) / d[:, 2]
        hx = ox + t * d[:, 0]
        hy = oy + t * d[:, 1]
        take = np.isfinite(t) & (t > T_MIN) & (hx * hx + hy * hy <= r * r) & (t < best)
        best = np.where(take, t, best)
        n[take] = np.array([0.0, 0.0, nz])
    return best, n


_NP_FUNCS = {TYPE_PLANE: _np_plane, TYPE_SPHERE: _np_sphere, TYPE_BOX: _np_box,
             TYPE_CYLINDER: _np_cylinder}


def cast_numpy(origin, dirs, prims, max_t):
    o = np.asarray(origin, dtype=np.float64)
    d = np.asarray(dirs, dtype=np.float64)
    best_t = np.full(len(d), np.inf)
    best_i = np.full(len(d), -1, dtype=np.int64)
    best_n = np.zeros_like(d)
    for i, p in enumerate(np.asarray(prims, dtype=np.float64)):
        t, n = _NP_FUNCS[int(p[0])](o, d, p)
        take = (t < best_t) & (t <= max_t)
        best_t = np.where(take, t, best_t)
        best_i = np.where(take, i, best_i)
        best_n[take] = n[take]
    return best_t, best_i, best_n


# ---------------------------------------------------------------------------
# numba path: one ray at a time


if HAVE_NUMBA:

    @numba.njit(cache=True)
    def _nb_hit(o, d, p, out_n):
        kind = int(p[0])
        inf = np.inf
        if kind == 0:
            if d[2] == 0.0:
                return inf
            t = (p[1] - o[2]) / d[2]
            if t <= T_MIN:
                return inf
            out_n[0] = 0.0
            out_n[1] = 0.0
            out_n[2] = 1.0
            return t
        if kind == 1:
            ocx, ocy, ocz = o[0] - p[1], o[1] - p[2], o[2] - p[3]
            r = p[4]
            a = d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
            b = 2.0 * (d[0] * ocx + d[1] * ocy + d[2] * ocz)
            c = ocx * ocx + ocy * ocy + ocz * ocz - r * r
            disc = b * b - 4.0 * a * c
            if disc < 0.0:
                return inf
            sq = np.sqrt(disc)
            t = (-b - sq) / (2.0 * a)
            if t <= T_MIN:
                t = (-b + sq) / (2.0 * a)
                if t <= T_MIN:
                    return inf
            out_n[0] = (ocx + t * d[0]) / r
            out_n[1] = (ocy + t * d[1]) / r
            out_n[2] = (ocz + t * d[2]) / r
            return t
        if kind == 2:
            tnear, tfar = -inf, inf
            na, fa = 0, 0
            for ax in range(3):
                lo, hi = p[1 + ax], p[4 + ax]
                if d[ax] == 0.0:
                    if o[ax] < lo or o[ax] > hi:
                        return inf
                    continue
                ta = (lo - o[ax]) / d[ax]
                tb = (hi - o[ax]) / d[ax]
                t0 = min(ta, tb)
                t1 = max(ta, tb)
                if t0 > tnear:
                    tnear, na = t0, ax
                if t1 < tfar:
                    tfar, fa = t1, ax
            if tnear > tfar:
                return inf
            out_n[0] = 0.0
            out_n[1] = 0.0
            out_n[2] = 0.0
            if tnear > T_MIN:
                out_n[na] = -np.sign(d[na])
                return tnear
            if tfar > T_MIN:
                out_n[fa] = np.sign(d[fa])
                return tfar
            return inf
        # cylinder
        ox, oy = o[0] - p[1], o[1] - p[2]
        r, z0, z1 = p[3], p[4], p[5]
        best = inf
        a = d[0] * d[0] + d[1] * d[1]
        if a > 0.0:
            b = 2.0 * (ox * d[0] + oy * d[1])
            c = ox * ox + oy * oy - r * r
            disc = b * b - 4.0 * a * c
            if disc >= 0.0:
                sq = np.sqrt(disc)
                for sgn in (-1.0, 1.0):
                    t = (-b + sgn * sq) / (2.0 * a)
                    z = o[2] + t * d[2]
                    if t > T_MIN and z >= z0 and z <= z1 and t < best:
                        best = t
                        out_n[0] = (ox + t * d[0]) / r
                        out_n[1] = (oy + t * d[1]) / r
                        out_n[2] = 0.0
        if d[2] != 0.0:
            for k in range(2):
                zc = z0 if k == 0 else z1
                t = (zc - o[2]) / d[2]
                hx = ox + t * d[0]
                hy = oy + t * d[1]
                if t > T_MIN and hx * hx + hy * hy <= r * r and t < best:
                    best = t
                    out_n[0] = 0.0
                    out_n[1] = 0.0
                    out_n[2] = -1.0 if k == 0 else 1.0
        return best

    @numba.njit(cache=True)
    def _nb_cast(o, d, prims, max_t):
        n_rays = d.shape[0]
        best_t = np.full(n_rays, np.inf)
        best_i = np.full(n_rays, -1, dtype=np.int64)
        best_n = np.zeros((n_rays, 3))
        tmp = np.zeros(3)
        for r in range(n_rays):
            for i in range(prims.shape[0]):
                t = _nb_hit(o, d[r], prims[i], tmp)
                if t < best_t[r] and t <= max_t:
                    best_t[r] = t
                    best_i[r] = i
                    best_n[r, 0] = tmp[0]
                    best_n[r, 1] = tmp[1]
                    best_n[r, 2] = tmp[2]
        return best_t, best_i, best_n


def cast_numba(origin, dirs, prims, max_t):
    if not HAVE_NUMBA:  # pragma: no cover
        return cast_numpy(origin, dirs, prims, max_t)
    o = np.ascontiguousarray(origin, dtype=np.float64)
    d = np.ascontiguousarray(dirs, dtype=np.float64)
    p = np.ascontiguousarray(prims, dtype=np.float64)
    return _nb_cast(o, d, p, float(max_t))
