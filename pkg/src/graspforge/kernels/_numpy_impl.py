"""Pure-numpy kernel implementations.

Reference semantics for the jitted twins in ``_numba_impl``. The two modules
export the same names and must stay behaviorally interchangeable: same
tie-break rules, same tolerances, same return conventions. Anything changed
here needs the mirror change there (the backend parity tests will catch
drift).
"""

import itertools

import numpy as np

SUPPORT_TOL = 1e-9


# ---------------------------------------------------------------------------
# point cloud primitives

def fps_indices(pts, n, start):
    """Greedy farthest-point subset of size n seeded at index ``start``.

    Ties resolve to the lowest index (first maximum). Chosen points are
    masked with a negative distance so duplicates in the input can never be
    selected twice.
    """
    chosen = np.empty(n, dtype=np.int64)
    chosen[0] = start
    d2 = np.sum((pts - pts[start]) ** 2, axis=1)
    d2[start] = -1.0
    for i in range(1, n):
        nxt = int(np.argmax(d2))
        chosen[i] = nxt
        cand = np.sum((pts - pts[nxt]) ** 2, axis=1)
        np.minimum(d2, cand, out=d2)
        d2[nxt] = -1.0
    return chosen


def _lex_pick(pts, mask):
    # index of the lexicographically smallest point among mask
    idx = np.flatnonzero(mask)
    sub = pts[idx]
    order = np.lexsort((sub[:, 2], sub[:, 1], sub[:, 0]))
    return int(idx[order[0]])


def fps_indices_geometric(pts, n):
    """Farthest-point subset with permutation-stable tie handling.

    Start point is the one farthest from an order-invariant centroid
    (coordinates summed in sorted order); all ties break to the
    lexicographically smallest point, never to an index. Permuting the
    input rows therefore permutes the selection consistently.
    """
    count = pts.shape[0]
    cen = np.array([np.sort(pts[:, k]).sum() for k in range(3)]) / count
    d2 = np.sum((pts - cen) ** 2, axis=1)
    chosen = np.empty(n, dtype=np.int64)
    cur = _lex_pick(pts, d2 == d2.max())
    chosen[0] = cur
    d2 = np.sum((pts - pts[cur]) ** 2, axis=1)
    d2[cur] = -1.0
    for i in range(1, n):
        cur = _lex_pick(pts, d2 == d2.max())
        chosen[i] = cur
        cand = np.sum((pts - pts[cur]) ** 2, axis=1)
        np.minimum(d2, cand, out=d2)
        d2[cur] = -1.0
    return chosen


def knn_indices(pts, k):
    """Indices of the k nearest neighbors per point, self excluded.

    Neighbor order is by distance, ties by ascending index.
    """
    g = pts @ pts.T
    sq = np.diag(g)
    d2 = sq[:, None] + sq[None, :] - 2.0 * g
    np.fill_diagonal(d2, np.inf)
    return np.argsort(d2, axis=1, kind="stable")[:, :k].astype(np.int64)


def normals_from_knn(pts, k, center):
    """Least-eigenvalue covariance normals, oriented away from ``center``.

    Returns (normals, valid). Degenerate neighborhoods (rank < 2 covariance)
    get a NaN row and valid=False.
    """
    nbr = knn_indices(pts, k)
    nb = pts[nbr]                       # (N,k,3)
    mu = nb.mean(axis=1, keepdims=True)
    x = nb - mu
    cov = np.einsum("nki,nkj->nij", x, x) / k
    evals, evecs = np.linalg.eigh(cov)
    normals = evecs[:, :, 0].copy()
    # need two non-trivial principal directions for a surface patch
    valid = evals[:, 1] > 1e-12 * np.maximum(evals[:, 2], 1e-300)
    flip = np.einsum("ni,ni->n", normals, pts - center[None, :]) < 0.0
    normals[flip] *= -1.0
    normals[~valid] = np.nan
    return normals, valid


def chamfer_sq(a, b):
    """Symmetric mean-of-squared nearest-neighbor distance."""
    ga = np.sum(a * a, axis=1)
    gb = np.sum(b * b, axis=1)
    d2 = ga[:, None] + gb[None, :] - 2.0 * (a @ b.T)
    np.maximum(d2, 0.0, out=d2)
    return float(d2.min(axis=1).mean() + d2.min(axis=0).mean())


def raycast(origins, dirs, verts, faces):
    """Nearest ray-triangle hit per ray (Moller-Trumbore).

    Returns (t, face_index); misses carry t=inf, face=-1. Equal-distance hits
    resolve to the lowest face index.
    """
    nr = origins.shape[0]
    tbest = np.full(nr, np.inf)
    fbest = np.full(nr, -1, dtype=np.int64)
    v0 = verts[faces[:, 0]]
    e1 = verts[faces[:, 1]] - v0
    e2 = verts[faces[:, 2]] - v0
    for f in range(faces.shape[0]):
        pvec = np.cross(dirs, e2[f])
        det = pvec @ e1[f]
        ok = np.abs(det) > 1e-14
        inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
        tvec = origins - v0[f]
        u = np.einsum("ri,ri->r", tvec, pvec) * inv
        qvec = np.cross(tvec, e1[f])
        v = np.einsum("ri,ri->r", dirs, qvec) * inv
        t = (qvec @ e2[f]) * inv
        hit = ok & (u >= -1e-12) & (v >= -1e-12) & (u + v <= 1.0 + 1e-12)
        hit &= (t > 1e-9) & (t < tbest)
        tbest[hit] = t[hit]
        fbest[hit] = f
    return tbest, fbest


# ---------------------------------------------------------------------------
# wrench space

def _tangent_basis(n):
    k = int(np.argmin(np.abs(n)))
    e = np.zeros(3)
    e[k] = 1.0
    t1 = np.cross(n, e)
    t1 /= np.linalg.norm(t1)
    t2 = np.cross(n, t1)
    return t1, t2


def cone_edges(normal, mu, m):
    """m unit edge vectors of the friction cone about -normal.

    Every edge satisfies e.(-n) = cos(arctan mu) exactly (up to roundoff in
    the 1/sqrt(1+mu^2) scale).
    """
    n = normal / np.linalg.norm(normal)
    t1, t2 = _tangent_basis(n)
    phi = 2.0 * np.pi * np.arange(m) / m
    raw = -n[None, :] + mu * (np.cos(phi)[:, None] * t1 + np.sin(phi)[:, None] * t2)
    return raw / np.sqrt(1.0 + mu * mu)


def build_wrenches(points, normals, mu, m, origin, rho):
    """Stacked contact wrenches, contact-major then edge-minor order."""
    nc = points.shape[0]
    out = np.empty((nc * m, 6))
    for i in range(nc):
        edges = cone_edges(normals[i], mu, m)
        r = points[i] - origin
        out[i * m:(i + 1) * m, :3] = edges
        out[i * m:(i + 1) * m, 3:] = np.cross(np.broadcast_to(r, (m, 3)), edges) / rho
    return out


def _combo_chunks(n, r, chunk):
    it = itertools.combinations(range(n), r)
    while True:
        block = list(itertools.islice(it, chunk))
        if not block:
            return
        yield np.array(block, dtype=np.int64)


def epsilon_bruteforce(w):
    """Exact inscribed-ball radius by facet-subset hyperplane enumeration.

    Works in the ambient dimension of ``w`` (6 for raw wrench sets, 5 for
    sets projected onto a degenerate span). Enumerates every
    dimension-sized wrench subset, fits the hyperplane through the
    affinely independent ones, keeps the globally supporting ones, and
    returns the minimum signed origin offset. Positive iff the origin is
    strictly inside the hull; 0.0 when no supporting hyperplane exists
    (degenerate, lower-dimensional hull).
    """
    count, dim = w.shape
    if count < dim + 1:
        # hull of < dim+1 points has empty interior
        return 0.0
    best = np.inf
    cols = np.arange(dim)
    for combos in _combo_chunks(count, dim, 100_000):
        a = w[combos]                       # (B,dim,dim)
        m = a[:, 1:, :] - a[:, 0:1, :]      # (B,dim-1,dim)
        rn = np.linalg.norm(m, axis=2, keepdims=True)
        bad = (rn < 1e-14).any(axis=(1, 2))
        m = m / np.where(rn < 1e-14, 1.0, rn)
        # null direction via cofactor expansion over the dropped column
        n = np.empty((m.shape[0], dim))
        for j in range(dim):
            sub = m[:, :, cols != j]
            n[:, j] = ((-1.0) ** j) * np.linalg.det(sub)
        nn = np.linalg.norm(n, axis=1)
        keep = (~bad) & (nn > 1e-9)
        if not keep.any():
            continue
        n = n[keep] / nn[keep, None]
        c = np.einsum("bi,bi->b", a[keep, 0, :], n)
        g = w @ n.T                         # (count,B)
        gmin = g.min(axis=0) - c
        gmax = g.max(axis=0) - c
        up = gmin >= -SUPPORT_TOL           # hull in {x.n >= c}
        dn = gmax <= SUPPORT_TOL
        if up.any():
            best = min(best, float((-c[up]).min()))
        if dn.any():
            best = min(best, float(c[dn].min()))
    return float(best) if np.isfinite(best) else 0.0


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
    sq = (w * w).sum(axis=1)
    scale2 = float(sq.max())
    if scale2 == 0.0:
        return 0.0
    tol = 1e-12 * scale2
    active = [int(np.argmin(sq))]
    lam = np.array([1.0])
    x = w[active[0]].astype(np.float64)
    for _ in range(64 * (count + dim)):
        xx = float(x @ x)
        if xx <= tol:
            return 0.0
        g = w @ x
        arg = int(np.argmin(g))
        if g[arg] >= xx - tol:
            return float(np.sqrt(xx))
        if arg in active:
            return float(np.sqrt(xx))
        active.append(arg)
        lam = np.append(lam, 0.0)
        for _minor in range(4 * (dim + 2)):
            ns = len(active)
            rows = w[np.array(active)]
            a = np.zeros((ns + 1, ns + 1))
            a[:ns, :ns] = 2.0 * (rows @ rows.T)
            a[:ns, ns] = 1.0
            a[ns, :ns] = 1.0
            b = np.zeros(ns + 1)
            b[ns] = 1.0
            sol = np.linalg.lstsq(a, b, rcond=1e-12)[0]
            alpha = sol[:ns]
            if not np.isfinite(alpha).all():
                return float(np.sqrt(xx))
            if (alpha >= -1e-12).all():
                lam = np.maximum(alpha, 0.0)
                break
            neg = alpha < -1e-12
            theta = float((lam[neg] / (lam[neg] - alpha[neg])).min())
            lam = (1.0 - theta) * lam + theta * alpha
            keep = lam > 1e-14
            if keep.all():
                keep[int(np.argmin(lam))] = False
            active = [active[k] for k in range(ns) if keep[k]]
            lam = lam[keep]
            s = lam.sum()
            lam = lam / s if s > 0 else np.full(len(active), 1.0 / len(active))
        x = lam @ w[np.array(active)]
    return float(np.sqrt(max(float(x @ x), 0.0)))


def _bruteforce_dir(w):
    """Facet enumeration returning (value, oriented normal) for the minimal
    supporting facet (hull inside {x . n <= value}), or (inf, None)."""
    count, dim = w.shape
    if count < dim + 1:
        return np.inf, None
    best = np.inf
    bestn = None
    cols = np.arange(dim)
    for combos in _combo_chunks(count, dim, 100_000):
        a = w[combos]
        m = a[:, 1:, :] - a[:, 0:1, :]
        rn = np.linalg.norm(m, axis=2, keepdims=True)
        bad = (rn < 1e-14).any(axis=(1, 2))
        m = m / np.where(rn < 1e-14, 1.0, rn)
        n = np.empty((m.shape[0], dim))
        for j in range(dim):
            sub = m[:, :, cols != j]
            n[:, j] = ((-1.0) ** j) * np.linalg.det(sub)
        nn = np.linalg.norm(n, axis=1)
        keep = (~bad) & (nn > 1e-9)
        if not keep.any():
            continue
        n = n[keep] / nn[keep, None]
        c = np.einsum("bi,bi->b", a[keep, 0, :], n)
        g = w @ n.T
        gmin = g.min(axis=0) - c
        gmax = g.max(axis=0) - c
        up = gmin >= -SUPPORT_TOL
        dn = gmax <= SUPPORT_TOL
        if up.any():
            vals = -c[up]
            i = int(np.argmin(vals))
            if vals[i] < best:
                best = float(vals[i])
                bestn = -n[up][i]
        if dn.any():
            vals = c[dn]
            i = int(np.argmin(vals))
            if vals[i] < best:
                best = float(vals[i])
                bestn = n[dn][i]
    return best, bestn


def epsilon_epa(w, dirs, n_seed):
    """Exact hull-offset quality by expanding-support enumeration.

    Grows a working subset from directional extremes; the minimal facet of
    the subset hull is a lower bound of the full value, and once that facet
    also supports the full set it is an upper bound too, so the returned
    value is exact. Falls back to full enumeration only if the working
    subset degenerates and no seed direction can grow it.
    """
    count, dim = w.shape
    take = min(n_seed, dirs.shape[0])
    proj = w @ dirs[:take].T
    in_s = np.zeros(count, dtype=bool)
    order = []
    for t in range(take):
        for arg in (int(np.argmax(proj[:, t])), int(np.argmin(proj[:, t]))):
            if not in_s[arg]:
                in_s[arg] = True
                order.append(arg)
    nxt = 0
    while len(order) < dim + 1 and nxt < count:
        if not in_s[nxt]:
            in_s[nxt] = True
            order.append(nxt)
        nxt += 1
    extra = take
    while True:
        val, nrm = _bruteforce_dir(w[np.array(order)])
        if np.isinf(val):
            grown = False
            while extra < dirs.shape[0] and not grown:
                arg = int(np.argmax(w @ dirs[extra]))
                extra += 1
                if not in_s[arg]:
                    in_s[arg] = True
                    order.append(arg)
                    grown = True
            if grown:
                continue
            return epsilon_bruteforce(w)
        g = w @ nrm
        karg = int(np.argmax(g))
        if g[karg] <= val + SUPPORT_TOL or in_s[karg]:
            return val
        in_s[karg] = True
        order.append(karg)


def _support_descend(w, d, iters):
    h = float((w @ d).max())
    step = 0.3
    for _ in range(iters):
        i = int(np.argmax(w @ d))
        g = w[i]
        gp = g - (g @ d) * d
        nrm = np.linalg.norm(gp)
        if nrm < 1e-13:
            break
        d2 = d - step * gp / nrm
        d2 /= np.linalg.norm(d2)
        h2 = float((w @ d2).max())
        if h2 < h - 1e-15:
            d, h = d2, h2
        else:
            step *= 0.5
            if step < 1e-7:
                break
    return d, h


def _polish(w, d, top_m):
    """Exact facet value near direction d: fit hyperplanes through
    dimension-sized subsets of the most-active wrenches and keep the
    globally supporting ones."""
    dim = w.shape[1]
    score = w @ d
    order = np.argsort(-score, kind="stable")[: min(top_m, w.shape[0])]
    best = np.inf
    if order.shape[0] < dim:
        return best
    for sub in itertools.combinations(range(order.shape[0]), dim):
        pts = w[order[np.array(sub)]]
        m = pts[1:] - pts[0:1]
        rn = np.linalg.norm(m, axis=1, keepdims=True)
        if (rn < 1e-14).any():
            continue
        m = m / rn
        n = np.empty(dim)
        cols = np.arange(dim)
        for j in range(dim):
            n[j] = ((-1.0) ** j) * np.linalg.det(m[:, cols != j])
        nn = np.linalg.norm(n)
        if nn < 1e-9:
            continue
        n /= nn
        c = pts[0] @ n
        g = w @ n - c
        if g.min() >= -SUPPORT_TOL:
            best = min(best, -c)
        if g.max() <= SUPPORT_TOL:
            best = min(best, c)
    return best


def epsilon_iterative(w, dirs, n_starts, iters, top_m):
    """Support-function minimization over sampled directions plus local
    descent and a facet polish with a global support certificate.

    Any h(d) value is an upper bound on the true radius when the origin is
    interior, so the returned minimum can only overestimate if every descent
    start misses the globally minimal facet basin.
    """
    h_all = (dirs @ w.T).max(axis=1)
    order = np.argsort(h_all, kind="stable")
    starts = []
    for idx in order:
        d = dirs[idx]
        if all(float(d @ dirs[s]) < 0.95 for s in starts):
            starts.append(int(idx))
        if len(starts) >= n_starts:
            break
    best = float(h_all[order[0]])
    for s in starts:
        d, h = _support_descend(w, dirs[s].copy(), iters)
        best = min(best, h)
        val = _polish(w, d, top_m)
        if np.isfinite(val):
            best = min(best, float(val))
    return best


def subspace_coords(w):
    """Affine-rank analysis of a wrench set.

    Returns (rank, perp, coords): the affine rank at a 1e-9 relative
    singular-value cut, the distance from the origin to the affine hull
    along the discarded directions, and the wrenches expressed in the
    rank-sized orthonormal basis of their span (valid when perp ~ 0).
    """
    wbar = w.mean(axis=0)
    a = w - wbar
    if a.shape[0] < 6:
        # pad so the full 6-vector basis (span + complement) comes back
        a = np.vstack([a, np.zeros((6 - a.shape[0], 6))])
    v6, s, _ = np.linalg.svd(np.ascontiguousarray(a.T), full_matrices=False)
    if s[0] < 1e-300:
        return 0, float(np.linalg.norm(wbar)), w[:, :0]
    rank = int((s > 1e-9 * s[0]).sum())
    off = wbar @ v6[:, rank:]
    perp = float(np.sqrt((off * off).sum()))
    return rank, perp, w @ v6[:, :rank]


def _quality_two_tier(w, dirs_coarse, dirs_fine, starts, iters, top_m):
    h_all = (dirs_coarse @ w.T).max(axis=1)
    i0 = int(np.argmin(h_all))
    _, h = _support_descend(w, dirs_coarse[i0].copy(), 12)
    h = min(h, float(h_all[i0]))
    if h < -SUPPORT_TOL:
        # a negative support value is an exact separation certificate
        return h
    return epsilon_iterative(w, dirs_fine, starts, iters, top_m)


def quality_batch(cands, pts, normals, mu, m, origin, rho,
                  dirs_coarse, dirs_fine, dirs_coarse5, dirs_fine5,
                  starts, iters, top_m):
    """Epsilon quality for each candidate index tuple.

    Two-tier schedule per candidate: a coarse direction scan plus a short
    descent settles clear negatives; survivors get the full iterative
    treatment. Wrench sets with a degenerate affine span (every 2-contact
    set: no moment about the interfinger axis) are scored inside their
    5-d span; lower ranks score 0, origin off the hull scores negative.
    """
    nc = cands.shape[0]
    out = np.empty(nc)
    for c in range(nc):
        idx = cands[c]
        idx = idx[idx >= 0]          # -1 entries pad unused finger slots
        w = build_wrenches(pts[idx], normals[idx], mu, m, origin, rho)
        rank, perp, coords = subspace_coords(w)
        if rank == 6:
            out[c] = _quality_two_tier(w, dirs_coarse, dirs_fine,
                                       starts, iters, top_m)
            continue
        wscale = float(np.abs(w).max())
        if perp > 1e-9 * max(wscale, 1e-300):
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

def pair_ok(n1, n2):
    # angle(n1,n2) > 120 deg, strict
    return float(n1 @ n2) < -0.5


def triplet_ok(p1, p2, p3, n1, n2, n3, min_side):
    e12 = p2 - p1
    e13 = p3 - p1
    e23 = p3 - p2
    a = np.linalg.norm(e12)
    b = np.linalg.norm(e13)
    c = np.linalg.norm(e23)
    if a <= min_side or b <= min_side or c <= min_side:
        return False
    # max internal angle < 120 deg  <=>  every cos > -0.5
    if (e12 @ e13) / (a * b) <= -0.5:
        return False
    if (-e12 @ e23) / (a * c) <= -0.5:
        return False
    if (-e13 @ -e23) / (b * c) <= -0.5:
        return False
    # normals point outward of the triangle: angle(normal, incident edge) < 90
    if n1 @ e12 <= 0.0 or n1 @ e13 <= 0.0:
        return False
    if n2 @ -e12 <= 0.0 or n2 @ e23 <= 0.0:
        return False
    if n3 @ -e13 <= 0.0 or n3 @ -e23 <= 0.0:
        return False
    return True


def enumerate_pairs(normals, limit):
    """Index pairs passing the 120-degree rule, lexicographic order."""
    count = normals.shape[0]
    g = normals @ normals.T
    iu, ju = np.triu_indices(count, 1)
    mask = g[iu, ju] < -0.5
    pairs = np.column_stack((iu[mask], ju[mask])).astype(np.int64)
    if pairs.shape[0] > limit:
        pairs = pairs[:limit]
    return pairs, int(iu.shape[0])


def enumerate_triplets(pts, normals, min_side, limit):
    """Index triples passing the triangle rules, lexicographic order."""
    count = pts.shape[0]
    scanned = count * (count - 1) * (count - 2) // 6
    g = pts @ pts.T
    sq = np.diag(g)
    d2 = sq[:, None] + sq[None, :] - 2.0 * g
    side2 = min_side * min_side
    out = []
    total = 0
    for i in range(count - 2):
        if total >= limit:
            break
        for j in range(i + 1, count - 1):
            if total >= limit:
                break
            if d2[i, j] <= side2:
                continue
            ks = np.arange(j + 1, count)
            keep = (d2[i, ks] > side2) & (d2[j, ks] > side2)
            ks = ks[keep]
            if ks.size == 0:
                continue
            e12 = pts[j] - pts[i]
            a = np.sqrt(d2[i, j])
            e13 = pts[ks] - pts[i]
            e23 = pts[ks] - pts[j]
            b = np.sqrt(d2[i, ks])
            cl = np.sqrt(d2[j, ks])
            cos1 = (e13 @ e12) / (a * b)
            cos2 = (-(e23 @ e12)) / (a * cl)
            cos3 = np.einsum("kj,kj->k", e13, e23) / (b * cl)
            ok = (cos1 > -0.5) & (cos2 > -0.5) & (cos3 > -0.5)
            ok &= (normals[i] @ e12 > 0.0) & (e13 @ normals[i] > 0.0)
            ok &= (normals[j] @ e12 < 0.0) & (e23 @ normals[j] > 0.0)
            ok &= np.einsum("kj,kj->k", -e13, normals[ks]) > 0.0
            ok &= np.einsum("kj,kj->k", -e23, normals[ks]) > 0.0
            sel = ks[ok]
            for k in sel[: max(0, limit - total)]:
                out.append((i, j, int(k)))
            total = len(out)
    arr = np.array(out, dtype=np.int64).reshape(-1, 3)
    return arr, scanned


# ---------------------------------------------------------------------------
# kinematics, reach, collision

def _rodrigues(axis, angle):
    c = np.cos(angle)
    s = np.sin(angle)
    x, y, z = axis
    k = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    return np.eye(3) + s * k + (1.0 - c) * (k @ k)


def fk_links(link_parent, link_pre_r, link_pre_t, link_jtype, link_axis,
             link_dof, link_mult, link_off, q):
    """Link and joint-frame poses in the palm frame for joint values q.

    Links must be topologically ordered (parent index < child index).
    Returns (link_R, link_t, joint_R, joint_t).
    """
    nl = link_parent.shape[0]
    lr = np.empty((nl, 3, 3))
    lt = np.empty((nl, 3))
    jr = np.empty((nl, 3, 3))
    jt = np.empty((nl, 3))
    for l in range(nl):
        p = link_parent[l]
        if p < 0:
            lr[l] = np.eye(3)
            lt[l] = 0.0
            jr[l] = np.eye(3)
            jt[l] = 0.0
            continue
        jr[l] = lr[p] @ link_pre_r[l]
        jt[l] = lr[p] @ link_pre_t[l] + lt[p]
        jtype = link_jtype[l]
        if jtype == 1:
            val = q[link_dof[l]] * link_mult[l] + link_off[l]
            lr[l] = jr[l] @ _rodrigues(link_axis[l], val)
            lt[l] = jt[l]
        elif jtype == 2:
            val = q[link_dof[l]] * link_mult[l] + link_off[l]
            lr[l] = jr[l]
            lt[l] = jt[l] + jr[l] @ (link_axis[l] * val)
        else:
            lr[l] = jr[l]
            lt[l] = jt[l]
    return lr, lt, jr, jt


def _prim_surface_point(p, ptype, param):
    """Nearest point on the primitive surface to local point p."""
    if ptype == 0:                      # box, half extents
        q = np.minimum(np.maximum(p, -param), param)
        if np.any(q != p):
            return q
        gap = param - np.abs(p)
        k = int(np.argmin(gap))
        q = p.copy()
        q[k] = param[k] if p[k] >= 0.0 else -param[k]
        return q
    if ptype == 1:                      # sphere
        r = param[0]
        n = np.linalg.norm(p)
        if n < 1e-12:
            return np.array([r, 0.0, 0.0])
        return p * (r / n)
    if ptype == 2:                      # capsule along z
        r, hl = param[0], param[1]
        cz = min(max(p[2], -hl), hl)
        d = p - np.array([0.0, 0.0, cz])
        n = np.linalg.norm(d)
        if n < 1e-12:
            return np.array([r, 0.0, cz])
        return np.array([0.0, 0.0, cz]) + d * (r / n)
    # capped cylinder along z
    r, hl = param[0], param[1]
    rho = np.hypot(p[0], p[1])
    ux, uy = (p[0] / rho, p[1] / rho) if rho > 1e-12 else (1.0, 0.0)
    inside = rho <= r and abs(p[2]) <= hl
    if inside:
        if r - rho <= hl - abs(p[2]):
            return np.array([ux * r, uy * r, p[2]])
        return np.array([p[0], p[1], hl if p[2] >= 0.0 else -hl])
    rr = min(rho, r)
    zz = min(max(p[2], -hl), hl)
    return np.array([ux * rr, uy * rr, zz])


def _prim_solid_distance(p, ptype, param):
    """Distance from local point p to the solid primitive (0 inside)."""
    if ptype == 0:
        d = np.maximum(np.abs(p) - param, 0.0)
        return np.linalg.norm(d)
    if ptype == 1:
        return max(np.linalg.norm(p) - param[0], 0.0)
    if ptype == 2:
        r, hl = param[0], param[1]
        cz = min(max(p[2], -hl), hl)
        return max(np.linalg.norm(p - np.array([0.0, 0.0, cz])) - r, 0.0)
    r, hl = param[0], param[1]
    dr = max(np.hypot(p[0], p[1]) - r, 0.0)
    dz = max(abs(p[2]) - hl, 0.0)
    return np.hypot(dr, dz)


def collision_points(link_r, link_t, prim_link, prim_type, prim_r, prim_t,
                     prim_param, prim_finger, obj_pts, clearance,
                     targets, exempt_r):
    """True iff any object point is within clearance of a non-fingertip
    primitive.

    All poses are world poses (palm already composed in). Fingertip
    primitives are contact surfaces, never collision sources. Object
    points within exempt_r of a supplied target are expected contact
    patches and exempt from every primitive.
    """
    pts = obj_pts
    for f in range(targets.shape[0]):
        d = pts - targets[f]
        pts = pts[np.einsum("ij,ij->i", d, d) > exempt_r * exempt_r]
    if pts.shape[0] == 0:
        return False
    for pi in range(prim_link.shape[0]):
        if prim_finger[pi] >= 0:
            continue
        l = prim_link[pi]
        rw = link_r[l] @ prim_r[pi]
        tw = link_r[l] @ prim_t[pi] + link_t[l]
        local = (pts - tw) @ rw
        for oi in range(local.shape[0]):
            if _prim_solid_distance(local[oi], prim_type[pi], prim_param[pi]) <= clearance:
                return True
    return False


def _finger_contacts(link_r, link_t, palm_r, palm_t, prim_link, prim_type,
                     prim_r, prim_t, prim_param, prim_finger, targets,
                     contacts, owner):
    """Per finger: world contact point (nearest fingertip-surface point to
    the target) and the index of the link carrying it, filled in place."""
    nf = targets.shape[0]
    owner[:] = -1
    best = np.full(nf, np.inf)
    for pi in range(prim_link.shape[0]):
        fid = prim_finger[pi]
        if fid < 0:
            continue
        l = prim_link[pi]
        rw = palm_r @ link_r[l] @ prim_r[pi]
        tw = palm_r @ (link_r[l] @ prim_t[pi] + link_t[l]) + palm_t
        local = rw.T @ (targets[fid] - tw)
        sp = _prim_surface_point(local, prim_type[pi], prim_param[pi])
        wp = rw @ sp + tw
        d = np.linalg.norm(wp - targets[fid])
        if d < best[fid]:
            best[fid] = d
            contacts[fid] = wp
            owner[fid] = prim_link[pi]


def dls_reach(link_parent, link_pre_r, link_pre_t, link_jtype, link_axis,
              link_dof, link_mult, link_off, dof_lo, dof_hi,
              prim_link, prim_type, prim_r, prim_t, prim_param, prim_finger,
              targets, tnormals, obj_pts,
              start_r, start_t, q0,
              damping, step_cap, max_iters, tol_pos, align_w,
              clearance, exempt_r, first_success):
    """Damped-least-squares reach over palm pose plus joint values.

    Runs every start, returns the lowest-error collision-free success
    (ties to the earlier start); with first_success nonzero it exits at the
    first collision-free convergence, which leaves the success/failure
    outcome unchanged. Codes: 0 success, 1 unreachable, 2 collision only.
    """
    nf = targets.shape[0]
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
            contacts = np.empty((nf, 3))
            owner = np.empty(nf, dtype=np.int64)
            _finger_contacts(
                lr, lt, palm_r, palm_t, prim_link, prim_type, prim_r, prim_t,
                prim_param, prim_finger, targets, contacts, owner)
            gc = contacts.mean(axis=0)
            err = 0.0
            for f in range(nf):
                err = max(err, float(np.linalg.norm(contacts[f] - targets[f])))
            if err < run_best - 1e-10:
                run_best = err
                stall = 0
            else:
                stall += 1
                if stall >= 12:
                    break
            if err < tol_pos:
                break
            res = np.zeros(6 * nf)
            jac = np.zeros((6 * nf, nvar))
            for f in range(nf):
                p = contacts[f]
                res[3 * f:3 * f + 3] = p - targets[f]
                jac[3 * f:3 * f + 3, 0:3] = np.eye(3)
                rel = p - palm_t
                for k in range(3):
                    ek = np.zeros(3)
                    ek[k] = 1.0
                    jac[3 * f:3 * f + 3, 3 + k] = np.cross(ek, rel)
                ax = np.zeros(3)
                if nf > 1:
                    ax = gc - p
                    nn = np.linalg.norm(ax)
                    ax = ax / nn if nn > 1e-12 else ax * 0.0
                    res[3 * nf + 3 * f:3 * nf + 3 * f + 3] = align_w * (ax + tnormals[f])
                    for k in range(3):
                        ek = np.zeros(3)
                        ek[k] = 1.0
                        jac[3 * nf + 3 * f:3 * nf + 3 * f + 3, 3 + k] = \
                            align_w * np.cross(ek, ax)
                l = owner[f]
                while l >= 0:
                    d = link_dof[l]
                    if d >= 0:
                        aw = jr[l] @ link_axis[l]
                        aw = palm_r @ aw
                        if link_jtype[l] == 1:
                            ow = palm_r @ jt[l] + palm_t
                            col = np.cross(aw, p - ow) * link_mult[l]
                            acol = np.cross(aw, ax) * (align_w * link_mult[l])
                        else:
                            col = aw * link_mult[l]
                            acol = np.zeros(3)
                        jac[3 * f:3 * f + 3, 6 + d] += col
                        if nf > 1:
                            jac[3 * nf + 3 * f:3 * nf + 3 * f + 3, 6 + d] += acol
                    l = link_parent[l]
            h = jac.T @ jac + lam2 * np.eye(nvar)
            g = jac.T @ res
            delta = np.linalg.solve(h, g)
            nd = np.linalg.norm(delta)
            if nd > step_cap:
                delta *= step_cap / nd
            palm_t = palm_t - delta[0:3]
            omega = delta[3:6]
            ang = np.linalg.norm(omega)
            if ang > 1e-14:
                palm_r = _rodrigues(omega / ang, -ang) @ palm_r
            for d in range(ndof):
                q[d] = min(max(q[d] - delta[6 + d], dof_lo[d]), dof_hi[d])
        # final evaluation of this start
        lr, lt, jr, jt = fk_links(link_parent, link_pre_r, link_pre_t,
                                  link_jtype, link_axis, link_dof,
                                  link_mult, link_off, q)
        contacts = np.empty((nf, 3))
        owner = np.empty(nf, dtype=np.int64)
        _finger_contacts(
            lr, lt, palm_r, palm_t, prim_link, prim_type, prim_r, prim_t,
            prim_param, prim_finger, targets, contacts, owner)
        err = 0.0
        for f in range(nf):
            err = max(err, float(np.linalg.norm(contacts[f] - targets[f])))
        if err >= tol_pos:
            continue
        any_converged = True
        wr = np.empty((link_parent.shape[0], 3, 3))
        wt = np.empty((link_parent.shape[0], 3))
        for l in range(link_parent.shape[0]):
            wr[l] = palm_r @ lr[l]
            wt[l] = palm_r @ lt[l] + palm_t
        if collision_points(wr, wt, prim_link, prim_type, prim_r, prim_t,
                            prim_param, prim_finger, obj_pts, clearance,
                            targets, exempt_r):
            continue
        if err < best_err:
            best_err = err
            best_r = palm_r
            best_t = palm_t
            best_q = q.copy()
            found = True
            if first_success:
                break
    if found:
        return 0, best_err, best_r, best_t, best_q
    if any_converged:
        return 2, np.inf, best_r, best_t, best_q
    return 1, np.inf, best_r, best_t, best_q
