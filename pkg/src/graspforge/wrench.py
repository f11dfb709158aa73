"""Contact wrench construction and force-closure quality.

Contacts are modeled as hard point contacts with Coulomb friction.  Each
friction cone is discretized into a fixed number of unit force edges; a
contact then contributes one 6-vector per edge, stacking the force with the
torque about a reference origin scaled by 1/rho so both halves are
commensurate.  Closure is decided by a linear program over convex
combinations of the wrenches, and graded by the offset of the deepest
supporting facet of their convex hull.

Two-contact grasps never span all six wrench dimensions (no contact force
can produce a moment about the line through the two points), so the facet
offset is always computed inside the affine span of the wrench set: the set
is projected onto its span, and the hull radius is measured there.  If the
origin falls outside the span the quality is the negated distance to it.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from . import kernels
from .errors import IndeterminateError, InputError

# Closure margin demanded of the LP optimum; also the relative
# singular-value cut used when detecting the affine span.
LP_TOL = 1e-9

# Iterative search budgets.  The direction tables are regenerated from
# fixed seeds, so results are deterministic for a given build.  The
# single-set path grows a support subset from N_SEED directional extremes
# and terminates with an exactness certificate; the batch path trades that
# certificate for speed and only guarantees the sign.
N_COARSE = 32
N_FINE = 128
N_SEED = 8
N_STARTS = 8
N_ITERS = 120
TOP_M = 12
ITERATIVE_SLACK = 1e-4

_DIRS_SEED = 90210
_dirs_cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _unit_dirs(dim):
    """Cached (coarse, fine) unit direction tables in R^dim."""
    hit = _dirs_cache.get(dim)
    if hit is not None:
        return hit
    rng = np.random.default_rng(_DIRS_SEED + dim)
    tabs = []
    for n in (N_COARSE, N_FINE):
        d = rng.standard_normal((n, dim))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        tabs.append(np.ascontiguousarray(d))
    _dirs_cache[dim] = (tabs[0], tabs[1])
    return _dirs_cache[dim]


@dataclass(frozen=True)
class FrictionModel:
    """Coulomb friction coefficient plus cone discretization level."""

    mu: float
    edge_count: int = 16

    def __post_init__(self):
        if not np.isfinite(self.mu) or self.mu <= 0.0:
            raise InputError(f"friction coefficient must be positive, got {self.mu}")
        if self.edge_count < 3:
            raise InputError(f"need at least 3 cone edges, got {self.edge_count}")


@dataclass(frozen=True)
class WrenchSet:
    """Stacked contact wrenches with the torque reference they were built in.

    wrenches is (n, 6): unit force in the first three components, torque
    about origin divided by rho in the last three.
    """

    wrenches: np.ndarray
    origin: np.ndarray
    rho: float

    def __post_init__(self):
        w = np.asarray(self.wrenches, dtype=np.float64)
        if w.ndim != 2 or w.shape[1] != 6 or w.shape[0] == 0:
            raise InputError(f"wrenches must be (n, 6) with n >= 1, got {w.shape}")
        if not np.isfinite(w).all():
            raise InputError("wrenches contain non-finite values")
        o = np.asarray(self.origin, dtype=np.float64).reshape(-1)
        if o.shape != (3,) or not np.isfinite(o).all():
            raise InputError("origin must be a finite 3-vector")
        if not np.isfinite(self.rho) or self.rho <= 0.0:
            raise InputError(f"rho must be positive, got {self.rho}")
        object.__setattr__(self, "wrenches", np.ascontiguousarray(w))
        object.__setattr__(self, "origin", o)

    def __len__(self):
        return self.wrenches.shape[0]


@dataclass(frozen=True)
class QualityScore:
    """Hull-offset quality with the method that produced it.

    is_lower_bound is False for bruteforce scores, which enumerate every
    supporting facet and are exact for the discretized cones; the iterative
    search carries True because its value is only certified to the
    configured slack.
    """

    value: float
    method: str
    is_lower_bound: bool = field(default=False)

    def __post_init__(self):
        if self.method not in ("iterative", "bruteforce"):
            raise InputError(f"unknown quality method {self.method!r}")
        if not np.isfinite(self.value):
            raise InputError("quality value must be finite")


def friction_cone_edges(normal, model):
    """Unit force edges of the discretized friction cone at one contact.

    normal is the outward surface normal; forces push into the surface, so
    every edge makes angle arctan(mu) with -normal.
    """
    n = np.asarray(normal, dtype=np.float64).reshape(-1)
    if n.shape != (3,) or not np.isfinite(n).all():
        raise InputError("normal must be a finite 3-vector")
    norm = np.linalg.norm(n)
    if norm < 1e-12:
        raise InputError("zero surface normal has no friction cone")
    if abs(norm - 1.0) > 1e-6:
        raise InputError(f"normal must be unit length, |n| = {norm}")
    return kernels.cone_edges(n, float(model.mu), int(model.edge_count))


def contact_wrenches(points, normals, model, origin, rho):
    """WrenchSet for a set of contacts: one wrench per cone edge per contact."""
    p = np.ascontiguousarray(np.asarray(points, dtype=np.float64))
    n = np.ascontiguousarray(np.asarray(normals, dtype=np.float64))
    if p.ndim != 2 or p.shape[1] != 3 or p.shape[0] == 0:
        raise InputError(f"points must be (n, 3) with n >= 1, got {p.shape}")
    if n.shape != p.shape:
        raise InputError(f"normals shape {n.shape} does not match points {p.shape}")
    if not (np.isfinite(p).all() and np.isfinite(n).all()):
        raise InputError("contact points and normals must be finite")
    lens = np.linalg.norm(n, axis=1)
    if (np.abs(lens - 1.0) > 1e-6).any():
        raise InputError("contact normals must be unit length")
    if not np.isfinite(rho) or rho <= 0.0:
        raise InputError(f"rho must be positive, got {rho}")
    o = np.asarray(origin, dtype=np.float64).reshape(-1)
    if o.shape != (3,) or not np.isfinite(o).all():
        raise InputError("origin must be a finite 3-vector")
    w = kernels.build_wrenches(p, n, float(model.mu), int(model.edge_count), o, float(rho))
    return WrenchSet(wrenches=w, origin=o, rho=float(rho))


def force_closure_test(wrench_set):
    """True iff the origin lies in the relative interior of the wrench hull.

    Solves max epsilon s.t. sum(l_i w_i) = 0, sum(l_i) = 1, l_i >= epsilon
    and reports closure when the optimum exceeds LP_TOL.  An infeasible
    program (origin outside the affine hull) is a definite False; any other
    solver failure raises IndeterminateError rather than guessing.
    """
    w = wrench_set.wrenches
    nw = w.shape[0]
    if nw < 2:
        raise InputError(f"closure test needs at least 2 wrenches, got {nw}")
    # variables: lambda (nw) then epsilon
    c = np.zeros(nw + 1)
    c[-1] = -1.0
    a_eq = np.zeros((7, nw + 1))
    a_eq[:6, :nw] = w.T
    a_eq[6, :nw] = 1.0
    b_eq = np.zeros(7)
    b_eq[6] = 1.0
    a_ub = np.hstack([-np.eye(nw), np.ones((nw, 1))])
    b_ub = np.zeros(nw)
    res = linprog(
        c,
        A_ub=a_ub,
        b_ub=b_ub,
        A_eq=a_eq,
        b_eq=b_eq,
        bounds=[(None, None)] * (nw + 1),
        method="highs",
    )
    if res.status == 2:
        return False
    if res.status != 0:
        raise IndeterminateError(
            f"closure LP did not converge (status {res.status}: {res.message})"
        )
    return float(res.x[-1]) > LP_TOL


def _iterative_value(w):
    _, dirs_fine = _unit_dirs(w.shape[1])
    return kernels.epsilon_epa(w, dirs_fine, N_SEED)


def epsilon_quality(wrench_set, method="iterative"):
    """Signed radius of the largest origin-centered ball inside the hull.

    Measured inside the affine span of the wrench set: sets that span fewer
    than six dimensions (every two-contact grasp does) are projected onto
    their span first, so a grasp that resists all wrenches it can physically
    see still grades positive.  When the origin is outside the hull the
    value is the negated exact distance to the hull (facet offsets are not
    well defined there: the nearest feature may be a ridge or vertex), and
    degenerate spans of dimension < 5 score zero.  For interior origins,
    bruteforce enumerates every facet and refuses sets larger than 64
    wrenches, while iterative grows a support subset from fixed seed
    directions and terminates with an exactness certificate.
    """
    w = wrench_set.wrenches
    if method not in ("iterative", "bruteforce"):
        raise InputError(f"unknown quality method {method!r}")
    if method == "bruteforce" and w.shape[0] > 64:
        raise InputError(
            f"bruteforce facet enumeration refuses {w.shape[0]} > 64 wrenches"
        )
    rank, perp, coords = kernels.subspace_coords(w)
    wscale = float(np.abs(w).max())
    din = kernels.nearest_point_dist(np.ascontiguousarray(coords)) if rank else 0.0
    dist = float(np.hypot(perp, din))
    if wscale > 0.0 and dist > 1e-9 * wscale:
        value = -dist
    elif rank < 5:
        value = 0.0
    else:
        body = w if rank == 6 else np.ascontiguousarray(coords)
        if method == "bruteforce":
            value = kernels.epsilon_bruteforce(body)
        else:
            value = _iterative_value(body)
    return QualityScore(
        value=float(value), method=method, is_lower_bound=method == "iterative"
    )


def batch_quality(candidates, points, normals, model, origin, rho):
    """Iterative quality for many candidate contact tuples against one cloud.

    candidates is (n, k) point indices with -1 padding for unused slots.
    Returns an (n,) array of signed quality values using the same rank-aware
    scoring as epsilon_quality(method="iterative").
    """
    cands = np.ascontiguousarray(np.asarray(candidates, dtype=np.int64))
    if cands.ndim != 2 or cands.shape[0] == 0:
        raise InputError(f"candidates must be (n, k) with n >= 1, got {cands.shape}")
    p = np.ascontiguousarray(np.asarray(points, dtype=np.float64))
    nv = np.ascontiguousarray(np.asarray(normals, dtype=np.float64))
    if p.ndim != 2 or p.shape[1] != 3 or nv.shape != p.shape:
        raise InputError("points and normals must be matching (n, 3) arrays")
    if cands.max() >= p.shape[0] or (cands < -1).any():
        raise InputError("candidate indices out of range")
    if not np.isfinite(rho) or rho <= 0.0:
        raise InputError(f"rho must be positive, got {rho}")
    o = np.asarray(origin, dtype=np.float64).reshape(-1)
    c6, f6 = _unit_dirs(6)
    c5, f5 = _unit_dirs(5)
    return kernels.quality_batch(
        cands, p, nv, float(model.mu), int(model.edge_count), o, float(rho),
        c6, f6, c5, f5, N_STARTS, N_ITERS, TOP_M,
    )


def label_from_quality(score, finger_count):
    """Closure label at the threshold appropriate for the finger count.

    Two-finger grasps need any positive margin; three-finger grasps must
    clear 0.0001 because their extra cone makes weak positives too easy.
    """
    if finger_count == 2:
        threshold = 0.0
    elif finger_count == 3:
        threshold = 0.0001
    else:
        raise InputError(f"no label threshold for finger_count {finger_count}")
    return bool(score.value > threshold)
