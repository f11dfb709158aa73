"""Numba-jitted kernel implementations.

Loop-structured twins of ``_numpy_impl`` with identical exported names,
tie-break rules, and tolerances. Keep the two modules in sync; the backend
parity tests compare them on shared inputs.
"""

import numpy as np
from numba import njit

SUPPORT_TOL = 1e-9


# ---------------------------------------------------------------------------
# point cloud primitives

@njit(cache=True)
def fps_indices(pts, n, start):
    count = pts.shape[0]
    chosen = np.empty(n, dtype=np.int64)
    chosen[0] = start
    d2 = np.empty(count)
    for i in range(count):
        dx = pts[i, 0] - pts[start, 0]
        dy = pts[i, 1] - pts[start, 1]
        dz = pts[i, 2] - pts[start, 2]
        d2[i] = dx * dx + dy * dy + dz * dz
    d2[start] = -1.0
    for i in range(1, n):
        nxt = 0
        best = -np.inf
        for j in range(count):
            if d2[j] > best:
                best = d2[j]
                nxt = j
        chosen[i] = nxt
        for j in range(count):
            dx = pts[j, 0] - pts[nxt, 0]
            dy = pts[j, 1] - pts[nxt, 1]
            dz = pts[j, 2] - pts[nxt, 2]
            c = dx * dx + dy * dy + dz * dz
            if c < d2[j]:
                d2[j] = c
        d2[nxt] = -1.0
    return chosen


@njit(cache=True)
def _lex_less(pts, a, b):
    for k in range(3):
        if pts[a, k] < pts[b, k]:
            return True
        if pts[a, k] > pts[b, k]:
            return False
    return False


@njit(cache=True)
def _lex_pick_max(pts, d2):
    # lexicographically smallest point among the exact maxima of d2
    best = -np.inf
    for j in range(d2.shape[0]):
        if d2[j] > best:
            best = d2[j]
    pick = -1
    for j in range(d2.shape[0]):
        if d2[j] == best:
            if pick < 0 or _lex_less(pts, j, pick):
                pick = j
    return pick


@njit(cache=True)
def fps_indices_geometric(pts, n):
    count = pts.shape[0]
    cen = np.empty(3)
    for k in range(3):
        col = np.sort(pts[:, k].copy())
        s = 0.0
        for j in range(count):
            s += col[j]
        cen[k] = s / count
    d2 = np.empty(count)
    for i in range(count):
        dx = pts[i, 0] - cen[0]
        dy = pts[i, 1] - cen[1]
        dz = pts[i, 2] - cen[2]
        d2[i] = dx * dx + dy * dy + dz * dz
    chosen = np.empty(n, dtype=np.int64)
    cur = _lex_pick_max(pts, d2)
    chosen[0] = cur
    for i in range(count):
        dx = pts[i, 0] - pts[cur, 0]
        dy = pts[i, 1] - pts[cur, 1]
        dz = pts[i, 2] - pts[cur, 2]
        d2[i] = dx * dx + dy * dy + dz * dz
    d2[cur] = -1.0
    for i in range(1, n):
        cur = _lex_pick_max(pts, d2)
        chosen[i] = cur
        for j in range(count):
            dx = pts[j, 0] - pts[cur, 0]
            dy = pts[j, 1] - pts[cur, 1]
            dz = pts[j, 2] - pts[cur, 2]
            c = dx * dx + dy * dy + dz * dz
            if c < d2[j]:
                d2[j] = c
        d2[cur] = -1.0
    return chosen


@njit(cache=True)
def knn_indices(pts, k):
    count = pts.shape[0]
    out = np.empty((count, k), dtype=np.int64)
    row = np.empty(count)
    for i in range(count):
        for j in range(count):
            dx = pts[i, 0] - pts[j, 0]
            dy = pts[i, 1] - pts[j, 1]
            dz = pts[i, 2] - pts[j, 2]
            row[j] = dx * dx + dy * dy + dz * dz
        row[i] = np.inf
        for kk in range(k):
            best = np.inf
            pick = -1
            for j in range(count):
                if row[j] < best:
                    best = row[j]
                    pick = j
            out[i, kk] = pick
            row[pick] = np.inf
    return out


@njit(cache=True)
def normals_from_knn(pts, k, center):
    count = pts.shape[0]
    nbr = knn_indices(pts, k)
    normals = np.empty((count, 3))
    valid = np.empty(count, dtype=np.bool_)
    cov = np.empty((3, 3))
    for i in range(count):
        mx = 0.0
        my = 0.0
        mz = 0.0
        for jj in range(k):
            p = nbr[i, jj]
            mx += pts[p, 0]
            my += pts[p, 1]
            mz += pts[p, 2]
        mx /= k
        my /= k
        mz /= k
        for a in range(3):
            for b in range(3):
                cov[a, b] = 0.0
        for jj in range(k):
            p = nbr[i, jj]
            x = pts[p, 0] - mx
            y = pts[p, 1] - my
            z = pts[p, 2] - mz
            cov[0, 0] += x * x
            cov[0, 1] += x * y
            cov[0, 2] += x * z
            cov[1, 1] += y * y
            cov[1, 2] += y * z
            cov[2, 2] += z * z
        cov[1, 0] = cov[0, 1]
        cov[2, 0] = cov[0, 2]
        cov[2, 1] = cov[1, 2]
        for a in range(3):
            for b in range(3):
                cov[a, b] /= k
        evals, evecs = np.linalg.eigh(cov)
        big = evals[2]
        if big < 1e-300:
            big = 1e-300
        ok = evals[1] > 1e-12 * big
        valid[i] = ok
        if not ok:
            normals[i, 0] = np.nan
            normals[i, 1] = np.nan
            normals[i, 2] = np.nan
            continue
        nx = evecs[0, 0]
        ny = evecs[1, 0]
        nz = evecs[2, 0]
        s = nx * (pts[i, 0] - center[0]) + ny * (pts[i, 1] - center[1]) \
            + nz * (pts[i, 2] - center[2])
        if s < 0.0:
            nx = -nx
            ny = -ny
            nz = -nz
        normals[i, 0] = nx
        normals[i, 1] = ny
        normals[i, 2] = nz
    return normals, valid


@njit(cache=True)
def chamfer_sq(a, b):
    na = a.shape[0]
    nb = b.shape[0]
    s_ab = 0.0
    for i in range(na):
        best = np.inf
        for j in range(nb):
            dx = a[i, 0] - b[j, 0]
            dy = a[i, 1] - b[j, 1]
            dz = a[i, 2] - b[j, 2]
            d = dx * dx + dy * dy + dz * dz
            if d < best:
                best = d
        s_ab += best
    s_ba = 0.0
    for j in range(nb):
        best = np.inf
        for i in range(na):
            dx = a[i, 0] - b[j, 0]
            dy = a[i, 1] - b[j, 1]
            dz = a[i, 2] - b[j, 2]
            d = dx * dx + dy * dy + dz * dz
            if d < best:
                best = d
        s_ba += best
    return s_ab / na + s_ba / nb


@njit(cache=True)
def raycast(origins, dirs, verts, faces):
    nr = origins.shape[0]
    nf = faces.shape[0]
    tbest = np.full(nr, np.inf)
    fbest = np.full(nr, -1, dtype=np.int64)
    e1 = np.empty((nf, 3))
    e2 = np.empty((nf, 3))
    v0 = np.empty((nf, 3))
    for f in range(nf):
        for k in range(3):
            v0[f, k] = verts[faces[f, 0], k]
            e1[f, k] = verts[faces[f, 1], k] - verts[faces[f, 0], k]
            e2[f, k] = verts[faces[f, 2], k] - verts[faces[f, 0], k]
    for r in range(nr):
        ox, oy, oz = origins[r, 0], origins[r, 1], origins[r, 2]
        dx, dy, dz = dirs[r, 0], dirs[r, 1], dirs[r, 2]
        for f in range(nf):
            px = dy * e2[f, 2] - dz * e2[f, 1]
            py = dz * e2[f, 0] - dx * e2[f, 2]
            pz = dx * e2[f, 1] - dy * e2[f, 0]
            det = px * e1[f, 0] + py * e1[f, 1] + pz * e1[f, 2]
            if abs(det) <= 1e-14:
                continue
            inv = 1.0 / det
            tx = ox - v0[f, 0]
            ty = oy - v0[f, 1]
            tz = oz - v0[f, 2]
            u = (tx * px + ty * py + tz * pz) * inv
            if u < -1e-12:
                continue
            qx = ty * e1[f, 2] - tz * e1[f, 1]
            qy = tz * e1[f, 0] - tx * e1[f, 2]
            qz = tx * e1[f, 1] - ty * e1[f, 0]
            v = (dx * qx + dy * qy + dz * qz) * inv
            if v < -1e-12 or u + v > 1.0 + 1e-12:
                continue
            t = (qx * e2[f, 0] + qy * e2[f, 1] + qz * e2[f, 2]) * inv
            if t > 1e-9 and t < tbest[r]:
                tbest[r] = t
                fbest[r] = f
    return tbest, fbest


# ---------------------------------------------------------------------------
# wrench space

@njit(cache=True)
def cone_edges(normal, mu, m):
    nn = np.sqrt(normal[0] ** 2 + normal[1] ** 2 + normal[2] ** 2)
    n = normal / nn
    k = 0
    if abs(n[1]) < abs(n[k]):
        k = 1
    if abs(n[2]) < abs(n[k]):
        k = 2
    e = np.zeros(3)
    e[k] = 1.0
    t1 = np.empty(3)
    t1[0] = n[1] * e[2] - n[2] * e[1]
    t1[1] = n[2] * e[0] - n[0] * e[2]
    t1[2] = n[0] * e[1] - n[1] * e[0]
    t1 /= np.sqrt(t1[0] ** 2 + t1[1] ** 2 + t1[2] ** 2)
    t2 = np.empty(3)
    t2[0] = n[1] * t1[2] - n[2] * t1[1]
    t2[1] = n[2] * t1[0] - n[0] * t1[2]
    t2[2] = n[0] * t1[1] - n[1] * t1[0]
    sq = np.sqrt(1.0 + mu * mu)
    out = np.empty((m, 3))
    for i in range(m):
        phi = 2.0 * np.pi * i / m
        c = np.cos(phi)
        s = np.sin(phi)
        for j in range(3):
            out[i, j] = (-n[j] + mu * (c * t1[j] + s * t2[j])) / sq
    return out


@njit(cache=True)
def build_wrenches(points, normals, mu, m, origin, rho):
    nc = points.shape[0]
    out = np.empty((nc * m, 6))
    for i in range(nc):
        edges = cone_edges(normals[i], mu, m)
        rx = points[i, 0] - origin[0]
        ry = points[i, 1] - origin[1]
        rz = points[i, 2] - origin[2]
        for jj in range(m):
            ex, ey, ez = edges[jj, 0], edges[jj, 1], edges[jj, 2]
            row = i * m + jj
            out[row, 0] = ex
            out[row, 1] = ey
            out[row, 2] = ez
            out[row, 3] = (ry * ez - rz * ey) / rho
            out[row, 4] = (rz * ex - rx * ez) / rho
            out[row, 5] = (rx * ey - ry * ex) / rho
    return out


@njit(cache=True)
def _hyperplane_value(w, m, p0, pc, nvec):
    """Signed origin offset of the supporting hyperplane through the rows of
    m (already normalized diffs, destroyed in place) anchored at p0, or nan
    when the subset is degenerate or not supporting."""
    dim = w.shape[1]
    rows = dim - 1
    # null vector of m via one elimination pass instead of dim cofactor dets
    row = 0
    free_col = -1
    for col in range(dim):
        if row < rows:
            piv = -1
            best = 1e-12
            for r in range(row, rows):
                a = abs(m[r, col])
                if a > best:
                    best = a
                    piv = r
            if piv < 0:
                if free_col >= 0:
                    return np.nan
                free_col = col
                continue
            if piv != row:
                for c2 in range(col, dim):
                    tmp = m[row, c2]
                    m[row, c2] = m[piv, c2]
                    m[piv, c2] = tmp
            inv = 1.0 / m[row, col]
            for r in range(row + 1, rows):
                f = m[r, col] * inv
                if f != 0.0:
                    m[r, col] = 0.0
                    for c2 in range(col + 1, dim):
                        m[r, c2] -= f * m[row, c2]
            pc[row] = col
            row += 1
        else:
            if free_col >= 0:
                return np.nan
            free_col = col
    if row < rows or free_col < 0:
        return np.nan
    for j in range(dim):
        nvec[j] = 0.0
    nvec[free_col] = 1.0
    for r in range(rows - 1, -1, -1):
        s = 0.0
        for c2 in range(pc[r] + 1, dim):
            s += m[r, c2] * nvec[c2]
        nvec[pc[r]] = -s / m[r, pc[r]]
    nn = 0.0
    for j in range(dim):
        nn += nvec[j] * nvec[j]
    nn = np.sqrt(nn)
    for j in range(dim):
        nvec[j] /= nn
    c0 = 0.0
    for j in range(dim):
        c0 += p0[j] * nvec[j]
    has_below = False
    has_above = False
    for i in range(w.shape[0]):
        g = -c0
        for j in range(dim):
            g += w[i, j] * nvec[j]
        if g < -SUPPORT_TOL:
            has_below = True
        if g > SUPPORT_TOL:
            has_above = True
        if has_below and has_above:
            return np.nan
    # orient nvec in place so the hull lies in {x . nvec <= returned value}
    if not has_below and not has_above:
        if -c0 < c0:
            for j in range(dim):
                nvec[j] = -nvec[j]
            return -c0
        return c0
    if not has_below:
        for j in range(dim):
            nvec[j] = -nvec[j]
        return -c0
    return c0


@njit(cache=True)
def epsilon_bruteforce(w):
    count, dim = w.shape
    if count < dim + 1:
        return 0.0
    best = np.inf
    m = np.empty((dim - 1, dim))
    pc = np.empty(dim - 1, np.int64)
    nvec = np.empty(dim)
    idx = np.arange(dim)
    while True:
        degen = False
        for r in range(dim - 1):
            nrm = 0.0
            for j in range(dim):
                v = w[idx[r + 1], j] - w[idx[0], j]
                m[r, j] = v
                nrm += v * v
            nrm = np.sqrt(nrm)
            if nrm < 1e-14:
                degen = True
                break
            for j in range(dim):
                m[r, j] /= nrm
        if not degen:
            val = _hyperplane_value(w, m, w[idx[0]], pc, nvec)
            if not np.isnan(val) and val < best:
                best = val
        # advance the combination odometer
        pos = dim - 1
        while pos >= 0 and idx[pos] == count - dim + pos:
            pos -= 1
        if pos < 0:
            break
        idx[pos] += 1
        for t in range(pos + 1, dim):
            idx[t] = idx[t - 1] + 1
    if not np.isfinite(best):
        return 0.0
    return best


@njit(cache=True)
def nearest_point_dist(w):
    """Distance from the origin to conv(w) by Wolfe's nearest-point method.

    Maintains an affinely independent active vertex set; each major cycle
    adds the most violating vertex, each minor cycle projects onto the
    affine hull of the active set and drops vertices whose barycentric
    weight would go negative. Returns 0.0 when the origin is inside or on
    the hull. Exact up to the termination tolerance (relative 1e-12).
    """
    count, dim = w.shape
    if dim == 0:
        return 0.0
    scale2 = 0.0
    besti = 0
    bestv = np.inf
    for i in range(count):
        s = 0.0
        for j in range(dim):
            s += w[i, j] * w[i, j]
        if s > scale2:
            scale2 = s
        if s < bestv:
            bestv = s
            besti = i
    if scale2 == 0.0:
        return 0.0
    tol = 1e-12 * scale2
    cap = dim + 3
    active = np.empty(cap, np.int64)
    lam = np.zeros(cap)
    active[0] = besti
    lam[0] = 1.0
    ns = 1
    x = np.empty(dim)
    for j in range(dim):
        x[j] = w[besti, j]
    for _major in range(64 * (count + dim)):
        xx = 0.0
        for j in range(dim):
            xx += x[j] * x[j]
        if xx <= tol:
            return 0.0
        bg = np.inf
        arg = 0
        for i in range(count):
            s = 0.0
            for j in range(dim):
                s += w[i, j] * x[j]
            if s < bg:
                bg = s
                arg = i
        if bg >= xx - tol:
            return np.sqrt(xx)
        dup = False
        for k in range(ns):
            if active[k] == arg:
                dup = True
        if dup:
            return np.sqrt(xx)
        active[ns] = arg
        lam[ns] = 0.0
        ns += 1
        for _minor in range(4 * (dim + 2)):
            a = np.zeros((ns + 1, ns + 1))
            b = np.zeros(ns + 1)
            for r in range(ns):
                for c in range(ns):
                    g = 0.0
                    for j in range(dim):
                        g += w[active[r], j] * w[active[c], j]
                    a[r, c] = 2.0 * g
                a[r, ns] = 1.0
                a[ns, r] = 1.0
            b[ns] = 1.0
            sol = np.linalg.lstsq(a, b, 1e-12)[0]
            okfin = True
            for r in range(ns):
                if not np.isfinite(sol[r]):
                    okfin = False
            if not okfin:
                return np.sqrt(xx)
            allpos = True
            for r in range(ns):
                if sol[r] < -1e-12:
                    allpos = False
            if allpos:
                for r in range(ns):
                    lam[r] = sol[r] if sol[r] > 0.0 else 0.0
                break
            theta = np.inf
            for r in range(ns):
                if sol[r] < -1e-12:
                    t = lam[r] / (lam[r] - sol[r])
                    if t < theta:
                        theta = t
            minl = np.inf
            minr = 0
            anydrop = False
            for r in range(ns):
                lam[r] = (1.0 - theta) * lam[r] + theta * sol[r]
                if lam[r] < minl:
                    minl = lam[r]
                    minr = r
                if lam[r] <= 1e-14:
                    anydrop = True
            if not anydrop:
                lam[minr] = 0.0
            wpos = 0
            ssum = 0.0
            for r in range(ns):
                if lam[r] > 1e-14:
                    active[wpos] = active[r]
                    lam[wpos] = lam[r]
                    ssum += lam[r]
                    wpos += 1
            ns = wpos
            if ns == 0:
                return np.sqrt(xx)
            if ssum > 0.0:
                for r in range(ns):
                    lam[r] /= ssum
            else:
                for r in range(ns):
                    lam[r] = 1.0 / ns
        for j in range(dim):
            x[j] = 0.0
        for r in range(ns):
            lr = lam[r]
            for j in range(dim):
                x[j] += lr * w[active[r], j]
    xx = 0.0
    for j in range(dim):
        xx += x[j] * x[j]
    return np.sqrt(xx if xx > 0.0 else 0.0)


@njit(cache=True)
def _bruteforce_dir(w, nout):
    """Facet enumeration that also reports the minimal facet's oriented
    normal (hull inside {x . n <= value}). Returns inf when no supporting
    facet exists."""
    count, dim = w.shape
    for j in range(dim):
        nout[j] = 0.0
    if count < dim + 1:
        return np.inf
    best = np.inf
    m = np.empty((dim - 1, dim))
    pc = np.empty(dim - 1, np.int64)
    nvec = np.empty(dim)
    idx = np.arange(dim)
    while True:
        degen = False
        for r in range(dim - 1):
            nrm = 0.0
            for j in range(dim):
                v = w[idx[r + 1], j] - w[idx[0], j]
                m[r, j] = v
                nrm += v * v
            nrm = np.sqrt(nrm)
            if nrm < 1e-14:
                degen = True
                break
            for j in range(dim):
                m[r, j] /= nrm
        if not degen:
            val = _hyperplane_value(w, m, w[idx[0]], pc, nvec)
            if not np.isnan(val) and val < best:
                best = val
                for j in range(dim):
                    nout[j] = nvec[j]
        pos = dim - 1
        while pos >= 0 and idx[pos] == count - dim + pos:
            pos -= 1
        if pos < 0:
            break
        idx[pos] += 1
        for t in range(pos + 1, dim):
            idx[t] = idx[t - 1] + 1
    return best


@njit(cache=True)
def epsilon_epa(w, dirs, n_seed):
    """Exact hull-offset quality by expanding-support enumeration.

    Grows a working subset from directional extremes; the minimal facet of
    the subset hull is a lower bound of the full value, and once that facet
    also supports the full set it is an upper bound too, so the returned
    value is exact. Falls back to full enumeration only if the working
    subset degenerates and no seed direction can grow it.
    """
    count, dim = w.shape
    in_s = np.zeros(count, np.bool_)
    order = np.empty(count, np.int64)
    ns = 0
    nd = dirs.shape[0]
    take = n_seed if n_seed < nd else nd
    for t in range(take):
        for sgn in range(2):
            best = -np.inf
            arg = 0
            for i in range(count):
                s = 0.0
                for j in range(dim):
                    s += w[i, j] * dirs[t, j]
                if sgn == 1:
                    s = -s
                if s > best:
                    best = s
                    arg = i
            if not in_s[arg]:
                in_s[arg] = True
                order[ns] = arg
                ns += 1
    nxt = 0
    while ns < dim + 1 and nxt < count:
        if not in_s[nxt]:
            in_s[nxt] = True
            order[ns] = nxt
            ns += 1
        nxt += 1
    nout = np.empty(dim)
    extra = take
    while True:
        sub = np.empty((ns, dim))
        for r in range(ns):
            for j in range(dim):
                sub[r, j] = w[order[r], j]
        val = _bruteforce_dir(sub, nout)
        if np.isinf(val):
            grown = False
            while extra < nd and not grown:
                best = -np.inf
                arg = 0
                for i in range(count):
                    s = 0.0
                    for j in range(dim):
                        s += w[i, j] * dirs[extra, j]
                    if s > best:
                        best = s
                        arg = i
                extra += 1
                if not in_s[arg]:
                    in_s[arg] = True
                    order[ns] = arg
                    ns += 1
                    grown = True
            if grown:
                continue
            return epsilon_bruteforce(w)
        gmax = -np.inf
        karg = 0
        for i in range(count):
            s = 0.0
            for j in range(dim):
                s += w[i, j] * nout[j]
            if s > gmax:
                gmax = s
                karg = i
        if gmax <= val + SUPPORT_TOL or in_s[karg]:
            return val
        in_s[karg] = True
        order[ns] = karg
        ns += 1


@njit(cache=True)
def _support_max(w, d):
    dim = w.shape[1]
    best = -np.inf
    arg = 0
    for i in range(w.shape[0]):
        s = 0.0
        for j in range(dim):
            s += w[i, j] * d[j]
        if s > best:
            best = s
            arg = i
    return best, arg


@njit(cache=True)
def _support_descend(w, d, iters):
    dim = w.shape[1]
    h, _ = _support_max(w, d)
    step = 0.3
    d2 = np.empty(dim)
    for _ in range(iters):
        _, i = _support_max(w, d)
        gd = 0.0
        for j in range(dim):
            gd += w[i, j] * d[j]
        nrm = 0.0
        for j in range(dim):
            d2[j] = w[i, j] - gd * d[j]
            nrm += d2[j] * d2[j]
        nrm = np.sqrt(nrm)
        if nrm < 1e-13:
            break
        nn = 0.0
        for j in range(dim):
            d2[j] = d[j] - step * d2[j] / nrm
            nn += d2[j] * d2[j]
        nn = np.sqrt(nn)
        for j in range(dim):
            d2[j] /= nn
        h2, _ = _support_max(w, d2)
        if h2 < h - 1e-15:
            for j in range(dim):
                d[j] = d2[j]
            h = h2
        else:
            step *= 0.5
            if step < 1e-7:
                break
    return d, h


@njit(cache=True)
def _polish(w, d, top_m):
    count, dim = w.shape
    tm = top_m if top_m < count else count
    score = np.empty(count)
    for i in range(count):
        s = 0.0
        for j in range(dim):
            s += w[i, j] * d[j]
        score[i] = s
    # stable descending selection: ties keep the lower index
    order = np.empty(tm, dtype=np.int64)
    used = np.zeros(count, dtype=np.bool_)
    for slot in range(tm):
        bv = -np.inf
        pick = -1
        for i in range(count):
            if not used[i] and score[i] > bv:
                bv = score[i]
                pick = i
        order[slot] = pick
        used[pick] = True
    best = np.inf
    if tm < dim:
        return best
    m = np.empty((dim - 1, dim))
    pc = np.empty(dim - 1, np.int64)
    nvec = np.empty(dim)
    pos_idx = np.arange(dim)
    while True:
        i0 = order[pos_idx[0]]
        degen = False
        for r in range(dim - 1):
            sel = order[pos_idx[r + 1]]
            nrm = 0.0
            for j in range(dim):
                v = w[sel, j] - w[i0, j]
                m[r, j] = v
                nrm += v * v
            nrm = np.sqrt(nrm)
            if nrm < 1e-14:
                degen = True
                break
            for j in range(dim):
                m[r, j] /= nrm
        if not degen:
            val = _hyperplane_value(w, m, w[i0], pc, nvec)
            if not np.isnan(val) and val < best:
                best = val
        pos = dim - 1
        while pos >= 0 and pos_idx[pos] == tm - dim + pos:
            pos -= 1
        if pos < 0:
            break
        pos_idx[pos] += 1
        for t in range(pos + 1, dim):
            pos_idx[t] = pos_idx[t - 1] + 1
    return best


@njit(cache=True)
def epsilon_iterative(w, dirs, n_starts, iters, top_m):
    dim = w.shape[1]
    ns = dirs.shape[0]
    h_all = np.empty(ns)
    for s in range(ns):
        h_all[s], _ = _support_max(w, dirs[s])
    # stable ascending insertion sort: ties keep input order
    order = np.arange(ns)
    for i in range(1, ns):
        key = order[i]
        kh = h_all[key]
        j = i - 1
        while j >= 0 and h_all[order[j]] > kh:
            order[j + 1] = order[j]
            j -= 1
        order[j + 1] = key
    starts = np.empty(n_starts, dtype=np.int64)
    n_acc = 0
    for oi in range(ns):
        idx = order[oi]
        ok = True
        for t in range(n_acc):
            dd = 0.0
            for j in range(dim):
                dd += dirs[idx, j] * dirs[starts[t], j]
            if dd >= 0.95:
                ok = False
                break
        if ok:
            starts[n_acc] = idx
            n_acc += 1
            if n_acc >= n_starts:
                break
    best = h_all[order[0]]
    d = np.empty(dim)
    for t in range(n_acc):
        for j in range(dim):
            d[j] = dirs[starts[t], j]
        d, h = _support_descend(w, d, iters)
        if h < best:
            best = h
        val = _polish(w, d, top_m)
        if np.isfinite(val) and val < best:
            best = val
    return best


@njit(cache=True)
def _quality_two_tier(w, dirs_coarse, dirs_fine, starts, iters, top_m):
    dim = w.shape[1]
    d = np.empty(dim)
    hbest = np.inf
    ibest = 0
    for s in range(dirs_coarse.shape[0]):
        h, _ = _support_max(w, dirs_coarse[s])
        if h < hbest:
            hbest = h
            ibest = s
    for j in range(dim):
        d[j] = dirs_coarse[ibest, j]
    d, h = _support_descend(w, d, 12)
    if h < hbest:
        hbest = h
    if hbest < -SUPPORT_TOL:
        # a negative support value is an exact separation certificate
        return hbest
    return epsilon_iterative(w, dirs_fine, starts, iters, top_m)


@njit(cache=True)
def subspace_coords(w):
    count = w.shape[0]
    countp = count if count >= 6 else 6
    wbar = np.empty(6)
    for j in range(6):
        s = 0.0
        for i in range(count):
            s += w[i, j]
        wbar[j] = s / count
    # transposed, zero-padded to >= 6 columns: svd returns the complete
    # 6-vector basis without a count×count left factor
    at = np.zeros((6, countp))
    for i in range(count):
        for j in range(6):
            at[j, i] = w[i, j] - wbar[j]
    v6, sv, _ = np.linalg.svd(at, False)
    if sv[0] < 1e-300:
        nb = 0.0
        for j in range(6):
            nb += wbar[j] * wbar[j]
        return 0, np.sqrt(nb), w[:, :0].copy()
    rank = 0
    for j in range(sv.shape[0]):
        if sv[j] > 1e-9 * sv[0]:
            rank += 1
    perp2 = 0.0
    for j in range(rank, 6):
        o = 0.0
        for k in range(6):
            o += wbar[k] * v6[k, j]
        perp2 += o * o
    coords = np.empty((count, rank))
    for i in range(count):
        for j in range(rank):
            s = 0.0
            for k in range(6):
                s += w[i, k] * v6[k, j]
            coords[i, j] = s
    return rank, np.sqrt(perp2), coords


@njit(cache=True)
def quality_batch(cands, pts, normals, mu, m, origin, rho,
                  dirs_coarse, dirs_fine, dirs_coarse5, dirs_fine5,
                  starts, iters, top_m):
    nc = cands.shape[0]
    nf = cands.shape[1]
    out = np.empty(nc)
    cp = np.empty((nf, 3))
    cn = np.empty((nf, 3))
    for c in range(nc):
        used = 0
        for f in range(nf):
            src = cands[c, f]
            if src < 0:              # -1 entries pad unused finger slots
                continue
            for j in range(3):
                cp[used, j] = pts[src, j]
                cn[used, j] = normals[src, j]
            used += 1
        w = build_wrenches(cp[:used], cn[:used], mu, m, origin, rho)
        rank, perp, coords = subspace_coords(w)
        if rank == 6:
            out[c] = _quality_two_tier(w, dirs_coarse, dirs_fine,
                                       starts, iters, top_m)
            continue
        wscale = 0.0
        for i in range(w.shape[0]):
            for j in range(6):
                v = abs(w[i, j])
                if v > wscale:
                    wscale = v
        if wscale < 1e-300:
            wscale = 1e-300
        if perp > 1e-9 * wscale:
            out[c] = -perp
            continue
        if rank < 5:
            out[c] = 0.0
            continue
        out[c] = _quality_two_tier(coords, dirs_coarse5, dirs_fine5,
                                   starts, iters, top_m)
    return out


# ---------------------------------------------------------------------------
# candidate filters

@njit(cache=True)
def pair_ok(n1, n2):
    return n1[0] * n2[0] + n1[1] * n2[1] + n1[2] * n2[2] < -0.5


@njit(cache=True)
def triplet_ok(p1, p2, p3, n1, n2, n3, min_side):
    e12 = p2 - p1
    e13 = p3 - p1
    e23 = p3 - p2
    a = np.sqrt(e12[0] ** 2 + e12[1] ** 2 + e12[2] ** 2)
    b = np.sqrt(e13[0] ** 2 + e13[1] ** 2 + e13[2] ** 2)
    c = np.sqrt(e23[0] ** 2 + e23[1] ** 2 + e23[2] ** 2)
    if a <= min_side or b <= min_side or c <= min_side:
        return False
    d1213 = e12[0] * e13[0] + e12[1] * e13[1] + e12[2] * e13[2]
    d1223 = e12[0] * e23[0] + e12[1] * e23[1] + e12[2] * e23[2]
    d1323 = e13[0] * e23[0] + e13[1] * e23[1] + e13[2] * e23[2]
    if d1213 / (a * b) <= -0.5:
        return False
    if -d1223 / (a * c) <= -0.5:
        return False
    if d1323 / (b * c) <= -0.5:
        return False
    if n1[0] * e12[0] + n1[1] * e12[1] + n1[2] * e12[2] <= 0.0:
        return False
    if n1[0] * e13[0] + n1[1] * e13[1] + n1[2] * e13[2] <= 0.0:
        return False
    if -(n2[0] * e12[0] + n2[1] * e12[1] + n2[2] * e12[2]) <= 0.0:
        return False
    if n2[0] * e23[0] + n2[1] * e23[1] + n2[2] * e23[2] <= 0.0:
        return False
    if -(n3[0] * e13[0] + n3[1] * e13[1] + n3[2] * e13[2]) <= 0.0:
        return False
    if -(n3[0] * e23[0] + n3[1] * e23[1] + n3[2] * e23[2]) <= 0.0:
        return False
    return True


@njit(cache=True)
def enumerate_pairs(normals, limit):
    count = normals.shape[0]
    scanned = count * (count - 1) // 2
    npass = 0
    for i in range(count - 1):
        for j in range(i + 1, count):
            if pair_ok(normals[i], normals[j]):
                npass += 1
    if npass > limit:
        npass = limit
    out = np.empty((npass, 2), dtype=np.int64)
    at = 0
    for i in range(count - 1):
        if at >= npass:
            break
        for j in range(i + 1, count):
            if at >= npass:
                break
            if pair_ok(normals[i], normals[j]):
                out[at, 0] = i
                out[at, 1] = j
                at += 1
    return out, scanned


@njit(cache=True)
def enumerate_triplets(pts, normals, min_side, limit):
    count = pts.shape[0]
    scanned = count * (count - 1) * (count - 2) // 6
    cap = 4096
    out = np.empty((cap, 3), dtype=np.int64)
    at = 0
    for i in range(count - 2):
        if at >= limit:
            break
        for j in range(i + 1, count - 1):
            if at >= limit:
                break
            for k in range(j + 1, count):
                if at >= limit:
                    break
                if triplet_ok(pts[i], pts[j], pts[k],
                              normals[i], normals[j], normals[k], min_side):
                    if at == cap:
                        cap *= 2
                        grown = np.empty((cap, 3), dtype=np.int64)
                        grown[:at] = out
                        out = grown
                    out[at, 0] = i
                    out[at, 1] = j
                    out[at, 2] = k
                    at += 1
    return out[:at].copy(), scanned


# ---------------------------------------------------------------------------
# kinematics, reach, collision

@njit(cache=True)
def _rodrigues(axis, angle):
    c = np.cos(angle)
    s = np.sin(angle)
    x, y, z = axis[0], axis[1], axis[2]
    k = np.empty((3, 3))
    k[0, 0] = 0.0
    k[0, 1] = -z
    k[0, 2] = y
    k[1, 0] = z
    k[1, 1] = 0.0
    k[1, 2] = -x
    k[2, 0] = -y
    k[2, 1] = x
    k[2, 2] = 0.0
    return np.eye(3) + s * k + (1.0 - c) * (k @ k)


@njit(cache=True)
def fk_links(link_parent, link_pre_r, link_pre_t, link_jtype, link_axis,
             link_dof, link_mult, link_off, q):
    nl = link_parent.shape[0]
    lr = np.empty((nl, 3, 3))
    lt = np.empty((nl, 3))
    jr = np.empty((nl, 3, 3))
    jt = np.empty((nl, 3))
    for l in range(nl):
        p = link_parent[l]
        if p < 0:
            lr[l] = np.eye(3)
            lt[l] = np.zeros(3)
            jr[l] = np.eye(3)
            jt[l] = np.zeros(3)
            continue
        jr[l] = lr[p] @ link_pre_r[l]
        jt[l] = lr[p] @ link_pre_t[l] + lt[p]
        jtype = link_jtype[l]
        if jtype == 1:
            val = q[link_dof[l]] * link_mult[l] + link_off[l]
            lr[l] = jr[l] @ _rodrigues(link_axis[l], val)
            lt[l] = jt[l].copy()
        elif jtype == 2:
            val = q[link_dof[l]] * link_mult[l] + link_off[l]
            lr[l] = jr[l].copy()
            lt[l] = jt[l] + jr[l] @ (link_axis[l] * val)
        else:
            lr[l] = jr[l].copy()
            lt[l] = jt[l].copy()
    return lr, lt, jr, jt


@njit(cache=True)
def _prim_surface_point(p, ptype, param):
    out = np.empty(3)
    if ptype == 0:
        inside = True
        for k in range(3):
            v = p[k]
            if v < -param[k]:
                v = -param[k]
                inside = False
            elif v > param[k]:
                v = param[k]
                inside = False
            out[k] = v
        if inside:
            kbest = 0
            gbest = param[0] - abs(p[0])
            for k in range(1, 3):
                g = param[k] - abs(p[k])
                if g < gbest:
                    gbest = g
                    kbest = k
            out[kbest] = param[kbest] if p[kbest] >= 0.0 else -param[kbest]
        return out
    if ptype == 1:
        r = param[0]
        n = np.sqrt(p[0] ** 2 + p[1] ** 2 + p[2] ** 2)
        if n < 1e-12:
            out[0] = r
            out[1] = 0.0
            out[2] = 0.0
            return out
        for k in range(3):
            out[k] = p[k] * (r / n)
        return out
    if ptype == 2:
        r = param[0]
        hl = param[1]
        cz = p[2]
        if cz < -hl:
            cz = -hl
        elif cz > hl:
            cz = hl
        dx = p[0]
        dy = p[1]
        dz = p[2] - cz
        n = np.sqrt(dx * dx + dy * dy + dz * dz)
        if n < 1e-12:
            out[0] = r
            out[1] = 0.0
            out[2] = cz
            return out
        out[0] = dx * (r / n)
        out[1] = dy * (r / n)
        out[2] = cz + dz * (r / n)
        return out
    r = param[0]
    hl = param[1]
    rho = np.sqrt(p[0] ** 2 + p[1] ** 2)
    if rho > 1e-12:
        ux = p[0] / rho
        uy = p[1] / rho
    else:
        ux = 1.0
        uy = 0.0
    if rho <= r and abs(p[2]) <= hl:
        if r - rho <= hl - abs(p[2]):
            out[0] = ux * r
            out[1] = uy * r
            out[2] = p[2]
        else:
            out[0] = p[0]
            out[1] = p[1]
            out[2] = hl if p[2] >= 0.0 else -hl
        return out
    rr = rho if rho < r else r
    zz = p[2]
    if zz < -hl:
        zz = -hl
    elif zz > hl:
        zz = hl
    out[0] = ux * rr
    out[1] = uy * rr
    out[2] = zz
    return out


@njit(cache=True)
def _prim_solid_distance(p, ptype, param):
    if ptype == 0:
        s = 0.0
        for k in range(3):
            d = abs(p[k]) - param[k]
            if d > 0.0:
                s += d * d
        return np.sqrt(s)
    if ptype == 1:
        d = np.sqrt(p[0] ** 2 + p[1] ** 2 + p[2] ** 2) - param[0]
        return d if d > 0.0 else 0.0
    if ptype == 2:
        hl = param[1]
        cz = p[2]
        if cz < -hl:
            cz = -hl
        elif cz > hl:
            cz = hl
        d = np.sqrt(p[0] ** 2 + p[1] ** 2 + (p[2] - cz) ** 2) - param[0]
        return d if d > 0.0 else 0.0
    dr = np.sqrt(p[0] ** 2 + p[1] ** 2) - param[0]
    if dr < 0.0:
        dr = 0.0
    dz = abs(p[2]) - param[1]
    if dz < 0.0:
        dz = 0.0
    return np.sqrt(dr * dr + dz * dz)


@njit(cache=True)
def collision_points(link_r, link_t, prim_link, prim_type, prim_r, prim_t,
                     prim_param, prim_finger, obj_pts, clearance,
                     targets, exempt_r):
    # Fingertip primitives are contact surfaces, never collision sources.
    # Object points within exempt_r of a supplied target are expected
    # contact patches and exempt from every primitive.
    npr = prim_link.shape[0]
    nt = targets.shape[0]
    local = np.empty(3)
    for pi in range(npr):
        if prim_finger[pi] >= 0:
            continue
        l = prim_link[pi]
        rw = link_r[l] @ prim_r[pi]
        tw = link_r[l] @ prim_t[pi] + link_t[l]
        for oi in range(obj_pts.shape[0]):
            exempt = False
            for f in range(nt):
                dx = obj_pts[oi, 0] - targets[f, 0]
                dy = obj_pts[oi, 1] - targets[f, 1]
                dz = obj_pts[oi, 2] - targets[f, 2]
                if dx * dx + dy * dy + dz * dz <= exempt_r * exempt_r:
                    exempt = True
                    break
            if exempt:
                continue
            for k in range(3):
                local[k] = rw[0, k] * (obj_pts[oi, 0] - tw[0]) \
                    + rw[1, k] * (obj_pts[oi, 1] - tw[1]) \
                    + rw[2, k] * (obj_pts[oi, 2] - tw[2])
            if _prim_solid_distance(local, prim_type[pi], prim_param[pi]) <= clearance:
                return True
    return False


@njit(cache=True)
def _finger_contacts(link_r, link_t, palm_r, palm_t, prim_link, prim_type,
                     prim_r, prim_t, prim_param, prim_finger, targets,
                     contacts, owner):
    nf = targets.shape[0]
    best = np.full(nf, np.inf)
    for f in range(nf):
        owner[f] = -1
    local = np.empty(3)
    for pi in range(prim_link.shape[0]):
        fid = prim_finger[pi]
        if fid < 0:
            continue
        l = prim_link[pi]
        rw = (palm_r @ link_r[l]) @ prim_r[pi]
        tw = palm_r @ (link_r[l] @ prim_t[pi] + link_t[l]) + palm_t
        for k in range(3):
            local[k] = rw[0, k] * (targets[fid, 0] - tw[0]) \
                + rw[1, k] * (targets[fid, 1] - tw[1]) \
                + rw[2, k] * (targets[fid, 2] - tw[2])
        sp = _prim_surface_point(local, prim_type[pi], prim_param[pi])
        wx = rw[0, 0] * sp[0] + rw[0, 1] * sp[1] + rw[0, 2] * sp[2] + tw[0]
        wy = rw[1, 0] * sp[0] + rw[1, 1] * sp[1] + rw[1, 2] * sp[2] + tw[1]
        wz = rw[2, 0] * sp[0] + rw[2, 1] * sp[1] + rw[2, 2] * sp[2] + tw[2]
        dx = wx - targets[fid, 0]
        dy = wy - targets[fid, 1]
        dz = wz - targets[fid, 2]
        d = np.sqrt(dx * dx + dy * dy + dz * dz)
        if d < best[fid]:
            best[fid] = d
            contacts[fid, 0] = wx
            contacts[fid, 1] = wy
            contacts[fid, 2] = wz
            owner[fid] = prim_link[pi]


@njit(cache=True)
def dls_reach(link_parent, link_pre_r, link_pre_t, link_jtype, link_axis,
              link_dof, link_mult, link_off, dof_lo, dof_hi,
              prim_link, prim_type, prim_r, prim_t, prim_param, prim_finger,
              targets, tnormals, obj_pts,
              start_r, start_t, q0,
              damping, step_cap, max_iters, tol_pos, align_w,
              clearance, exempt_r, first_success):
    nf = targets.shape[0]
    nl = link_parent.shape[0]
    ndof = q0.shape[0]
    nvar = 6 + ndof
    n_starts = start_r.shape[0]
    best_err = np.inf
    best_r = np.eye(3)
    best_t = np.zeros(3)
    best_q = q0.copy()
    found = False
    any_converged = False
    lam2 = damping * damping
    contacts = np.empty((nf, 3))
    owner = np.empty(nf, dtype=np.int64)
    res = np.empty(6 * nf)
    jac = np.empty((6 * nf, nvar))
    hmat = np.empty((nvar, nvar))
    grad = np.empty(nvar)
    ax = np.empty(3)
    wr = np.empty((nl, 3, 3))
    wt = np.empty((nl, 3))
    for s in range(n_starts):
        palm_r = start_r[s].copy()
        palm_t = start_t[s].copy()
        q = q0.copy()
        stall = 0
        run_best = np.inf
        for _ in range(max_iters):
            lr, lt, jr, jt = fk_links(link_parent, link_pre_r, link_pre_t,
                                      link_jtype, link_axis, link_dof,
                                      link_mult, link_off, q)
            _finger_contacts(lr, lt, palm_r, palm_t, prim_link, prim_type,
                             prim_r, prim_t, prim_param, prim_finger,
                             targets, contacts, owner)
            gcx = 0.0
            gcy = 0.0
            gcz = 0.0
            for f in range(nf):
                gcx += contacts[f, 0]
                gcy += contacts[f, 1]
                gcz += contacts[f, 2]
            gcx /= nf
            gcy /= nf
            gcz /= nf
            err = 0.0
            for f in range(nf):
                dx = contacts[f, 0] - targets[f, 0]
                dy = contacts[f, 1] - targets[f, 1]
                dz = contacts[f, 2] - targets[f, 2]
                e = np.sqrt(dx * dx + dy * dy + dz * dz)
                if e > err:
                    err = e
            if err < run_best - 1e-10:
                run_best = err
                stall = 0
            else:
                stall += 1
                if stall >= 12:
                    break
            if err < tol_pos:
                break
            for r in range(6 * nf):
                res[r] = 0.0
                for c in range(nvar):
                    jac[r, c] = 0.0
            for f in range(nf):
                px = contacts[f, 0]
                py = contacts[f, 1]
                pz = contacts[f, 2]
                res[3 * f] = px - targets[f, 0]
                res[3 * f + 1] = py - targets[f, 1]
                res[3 * f + 2] = pz - targets[f, 2]
                jac[3 * f, 0] = 1.0
                jac[3 * f + 1, 1] = 1.0
                jac[3 * f + 2, 2] = 1.0
                rx = px - palm_t[0]
                ry = py - palm_t[1]
                rz = pz - palm_t[2]
                # palm rotation columns: e_k x (p - palm_t)
                jac[3 * f + 1, 3] = -rz
                jac[3 * f + 2, 3] = ry
                jac[3 * f, 4] = rz
                jac[3 * f + 2, 4] = -rx
                jac[3 * f, 5] = -ry
                jac[3 * f + 1, 5] = rx
                ax[0] = 0.0
                ax[1] = 0.0
                ax[2] = 0.0
                if nf > 1:
                    ax[0] = gcx - px
                    ax[1] = gcy - py
                    ax[2] = gcz - pz
                    nn = np.sqrt(ax[0] ** 2 + ax[1] ** 2 + ax[2] ** 2)
                    if nn > 1e-12:
                        ax /= nn
                    else:
                        ax[0] = 0.0
                        ax[1] = 0.0
                        ax[2] = 0.0
                    ro = 3 * nf + 3 * f
                    res[ro] = align_w * (ax[0] + tnormals[f, 0])
                    res[ro + 1] = align_w * (ax[1] + tnormals[f, 1])
                    res[ro + 2] = align_w * (ax[2] + tnormals[f, 2])
                    jac[ro + 1, 3] = -align_w * ax[2]
                    jac[ro + 2, 3] = align_w * ax[1]
                    jac[ro, 4] = align_w * ax[2]
                    jac[ro + 2, 4] = -align_w * ax[0]
                    jac[ro, 5] = -align_w * ax[1]
                    jac[ro + 1, 5] = align_w * ax[0]
                l = owner[f]
                while l >= 0:
                    d = link_dof[l]
                    if d >= 0:
                        a0 = jr[l, 0, 0] * link_axis[l, 0] \
                            + jr[l, 0, 1] * link_axis[l, 1] \
                            + jr[l, 0, 2] * link_axis[l, 2]
                        a1 = jr[l, 1, 0] * link_axis[l, 0] \
                            + jr[l, 1, 1] * link_axis[l, 1] \
                            + jr[l, 1, 2] * link_axis[l, 2]
                        a2 = jr[l, 2, 0] * link_axis[l, 0] \
                            + jr[l, 2, 1] * link_axis[l, 1] \
                            + jr[l, 2, 2] * link_axis[l, 2]
                        awx = palm_r[0, 0] * a0 + palm_r[0, 1] * a1 + palm_r[0, 2] * a2
                        awy = palm_r[1, 0] * a0 + palm_r[1, 1] * a1 + palm_r[1, 2] * a2
                        awz = palm_r[2, 0] * a0 + palm_r[2, 1] * a1 + palm_r[2, 2] * a2
                        if link_jtype[l] == 1:
                            ox = palm_r[0, 0] * jt[l, 0] + palm_r[0, 1] * jt[l, 1] \
                                + palm_r[0, 2] * jt[l, 2] + palm_t[0]
                            oy = palm_r[1, 0] * jt[l, 0] + palm_r[1, 1] * jt[l, 1] \
                                + palm_r[1, 2] * jt[l, 2] + palm_t[1]
                            oz = palm_r[2, 0] * jt[l, 0] + palm_r[2, 1] * jt[l, 1] \
                                + palm_r[2, 2] * jt[l, 2] + palm_t[2]
                            vx = px - ox
                            vy = py - oy
                            vz = pz - oz
                            jac[3 * f, 6 + d] += (awy * vz - awz * vy) * link_mult[l]
                            jac[3 * f + 1, 6 + d] += (awz * vx - awx * vz) * link_mult[l]
                            jac[3 * f + 2, 6 + d] += (awx * vy - awy * vx) * link_mult[l]
                            if nf > 1:
                                ro = 3 * nf + 3 * f
                                am = align_w * link_mult[l]
                                jac[ro, 6 + d] += (awy * ax[2] - awz * ax[1]) * am
                                jac[ro + 1, 6 + d] += (awz * ax[0] - awx * ax[2]) * am
                                jac[ro + 2, 6 + d] += (awx * ax[1] - awy * ax[0]) * am
                        else:
                            jac[3 * f, 6 + d] += awx * link_mult[l]
                            jac[3 * f + 1, 6 + d] += awy * link_mult[l]
                            jac[3 * f + 2, 6 + d] += awz * link_mult[l]
                    l = link_parent[l]
            for a in range(nvar):
                for b in range(nvar):
                    s2 = 0.0
                    for r in range(6 * nf):
                        s2 += jac[r, a] * jac[r, b]
                    hmat[a, b] = s2
                hmat[a, a] += lam2
                g = 0.0
                for r in range(6 * nf):
                    g += jac[r, a] * res[r]
                grad[a] = g
            delta = np.linalg.solve(hmat, grad)
            nd = 0.0
            for a in range(nvar):
                nd += delta[a] * delta[a]
            nd = np.sqrt(nd)
            if nd > step_cap:
                for a in range(nvar):
                    delta[a] *= step_cap / nd
            palm_t[0] -= delta[0]
            palm_t[1] -= delta[1]
            palm_t[2] -= delta[2]
            wx = delta[3]
            wy = delta[4]
            wz = delta[5]
            ang = np.sqrt(wx * wx + wy * wy + wz * wz)
            if ang > 1e-14:
                axv = np.empty(3)
                axv[0] = wx / ang
                axv[1] = wy / ang
                axv[2] = wz / ang
                palm_r = _rodrigues(axv, -ang) @ palm_r
            for dd in range(ndof):
                v = q[dd] - delta[6 + dd]
                if v < dof_lo[dd]:
                    v = dof_lo[dd]
                elif v > dof_hi[dd]:
                    v = dof_hi[dd]
                q[dd] = v
        lr, lt, jr, jt = fk_links(link_parent, link_pre_r, link_pre_t,
                                  link_jtype, link_axis, link_dof,
                                  link_mult, link_off, q)
        _finger_contacts(lr, lt, palm_r, palm_t, prim_link, prim_type,
                         prim_r, prim_t, prim_param, prim_finger,
                         targets, contacts, owner)
        err = 0.0
        for f in range(nf):
            dx = contacts[f, 0] - targets[f, 0]
            dy = contacts[f, 1] - targets[f, 1]
            dz = contacts[f, 2] - targets[f, 2]
            e = np.sqrt(dx * dx + dy * dy + dz * dz)
            if e > err:
                err = e
        if err >= tol_pos:
            continue
        any_converged = True
        for l in range(nl):
            wr[l] = palm_r @ lr[l]
            wt[l] = palm_r @ lt[l] + palm_t
        if collision_points(wr, wt, prim_link, prim_type, prim_r, prim_t,
                            prim_param, prim_finger, obj_pts, clearance,
                            targets, exempt_r):
            continue
        if err < best_err:
            best_err = err
            best_r = palm_r.copy()
            best_t = palm_t.copy()
            best_q = q.copy()
            found = True
            if first_success != 0:
                break
    if found:
        return 0, best_err, best_r, best_t, best_q
    if any_converged:
        return 2, np.inf, best_r, best_t, best_q
    return 1, np.inf, best_r, best_t, best_q
