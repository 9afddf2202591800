"""Per-pixel plane fit over a square window of back-projected points.

A neighbour enters the fit when it is valid and its depth differs from the
centre depth by less than ``ratio`` (relative). Points are centred on the
centre pixel before accumulation to keep far-field scatter well conditioned.
The normal is the eigenvector of the smallest scatter eigenvalue, oriented
so that <n, X> < 0. Pixels with fewer than 3 usable points, or whose usable
points are collinear, are not ok.
"""
import numpy as np

from .raycast import HAVE_NUMBA

COLLINEAR_TOL = 1e-9  # middle / largest scatter eigenvalue below this: no plane

if HAVE_NUMBA:
    import numba


def _orient(n, points):
    flip = np.einsum("...i,...i->...", n, points) > 0
    n[flip] *= -1
    return n


def fit_numpy(points, depth, valid, window, ratio):
    h, w = depth.shape
    r = window // 2
    P = np.pad(points, ((r, r), (r, r), (0, 0)))
    D = np.pad(depth, r, constant_values=1.0)
    V = np.pad(valid, r, constant_values=False)
    count = np.zeros((h, w))
    s = np.zeros((h, w, 3))
    S = np.zeros((h, w, 3, 3))
    for dy in range(window):
        for dx in range(window):
            q = P[dy:dy + h, dx:dx + w] - points
            dn = D[dy:dy + h, dx:dx + w]
            use = V[dy:dy + h, dx:dx + w] & valid & (np.abs(dn - depth) < ratio * depth)
            q = np.where(use[..., None], q, 0.0)
            count += use
            s += q
            S += q[..., :, None] * q[..., None, :]
    ok = valid & (count >= 3)
    normals = np.zeros((h, w, 3))
    if ok.any():
        c = count[ok][:, None, None]
        m = s[ok]
        cov = S[ok] - m[:, :, None] * m[:, None, :] / c
        vals, vecs = np.linalg.eigh(cov)
        planar = vals[:, 1] > COLLINEAR_TOL * np.maximum(vals[:, 2], 1e-300)
        normals[ok] = np.where(planar[:, None], vecs[:, :, 0], 0.0)
        ok[ok] = planar
    return _orient(normals, points), ok


if HAVE_NUMBA:

    @numba.njit(cache=True)
    def _nb_fit(points, depth, valid, window, ratio):
        h, w = depth.shape
        r = window // 2
        normals = np.zeros((h, w, 3))
        ok = np.zeros((h, w), dtype=np.bool_)
        cov = np.zeros((3, 3))
        s = np.zeros(3)
        for y in range(h):
            for x in range(w):
                if not valid[y, x]:
                    continue
                dc = depth[y, x]
                cnt = 0
                s[:] = 0.0
                cov[:, :] = 0.0
                for yy in range(y - r, y + r + 1):
                    if yy < 0 or yy >= h:
                        continue
                    for xx in range(x - r, x + r + 1):
                        if xx < 0 or xx >= w or not valid[yy, xx]:
                            continue
                        if abs(depth[yy, xx] - dc) >= ratio * dc:
                            continue
                        cnt += 1
                        for i in range(3):
                            qi = points[yy, xx, i] - points[y, x, i]
                            s[i] += qi
                            for j in range(3):
                                cov[i, j] += qi * (points[yy, xx, j] - points[y, x, j])
                if cnt < 3:
                    continue
                for i in range(3):
                    for j in range(3):
                        cov[i, j] -= s[i] * s[j] / cnt
                vals, vecs = np.linalg.eigh(cov)
                if not vals[1] > COLLINEAR_TOL * max(vals[2], 1e-300):
                    continue
                nx, ny, nz = vecs[0, 0], vecs[1, 0], vecs[2, 0]
                if nx * points[y, x, 0] + ny * points[y, x, 1] + nz * points[y, x, 2] > 0:
                    nx, ny, nz = -nx, -ny, -nz
                normals[y, x, 0] = nx
                normals[y, x, 1] = ny
                normals[y, x, 2] = nz
                ok[y, x] = True
        return normals, ok


def fit_numba(points, depth, valid, window, ratio):
    if not HAVE_NUMBA:  # pragma: no cover
        return fit_numpy(points, depth, valid, window, ratio)
    return _nb_fit(np.ascontiguousarray(points, dtype=np.float64),
                   np.ascontiguousarray(depth, dtype=np.float64),
                   np.ascontiguousarray(valid, dtype=np.bool_), int(window), float(ratio))
