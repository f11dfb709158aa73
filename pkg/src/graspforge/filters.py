"""Geometric rejection rules that shrink the contact-set candidate space.

Exhaustive enumeration of finger placements over a dense cloud is
combinatorial (three fingers on 2048 points is already ~1.4e9 triples),
but most tuples cannot possibly close: fingers squeezing from nearly the
same side, triangles thinner than a fingertip, or contact normals that
point away from the triangle they are supposed to pin.  The rules here cut
those before any wrench is built.

A pair survives when its normals are more than 120 degrees apart.  A
triplet survives when every triangle side exceeds ``min_side``, every
internal angle is below 120 degrees, and at each vertex the normal makes
an angle below 90 degrees with both incident edge directions, i.e. the
normal presses toward the opposite side of the triangle.  All bounds are
strict.

The vertex-edge rule means triplet normals must be pressing directions
(into the object).  Surface clouds carry outward normals by convention, so
triplet callers negate them; the pair rule is unchanged by negating both
normals.
"""

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import InputError
from .geometry import PointCloud

DEFAULT_MIN_SIDE = 0.01
DEFAULT_LIMIT = 1_000_000

# A triangle is called degenerate when its area is this small relative to
# the square of its longest side (exactly collinear points cancel to zero;
# merely skinny triangles fall to the angle rule instead).
DEGENERATE_AREA_TOL = 1e-12


@dataclass(frozen=True)
class CandidateSet:
    """A tuple of candidate contacts: indices into a cloud plus geometry.

    indices are distinct, in any order; positions and normals are
    row-aligned with them.  Enumeration produces ascending tuples.
    """

    indices: tuple
    positions: np.ndarray
    normals: np.ndarray

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        n = len(idx)
        if n not in (2, 3):
            raise InputError(f"candidate sets have 2 or 3 contacts, got {n}")
        if len(set(idx)) != n:
            raise InputError(f"candidate indices must be distinct, got {idx}")
        if any(i < 0 for i in idx):
            raise InputError(f"candidate indices must be non-negative, got {idx}")
        p = np.ascontiguousarray(np.asarray(self.positions, dtype=np.float64))
        m = np.ascontiguousarray(np.asarray(self.normals, dtype=np.float64))
        if p.shape != (n, 3):
            raise InputError(f"positions must be ({n}, 3), got {p.shape}")
        if m.shape != (n, 3):
            raise InputError(f"normals must be ({n}, 3), got {m.shape}")
        if not (np.isfinite(p).all() and np.isfinite(m).all()):
            raise InputError("candidate geometry must be finite")
        mags = np.linalg.norm(m, axis=1)
        if (np.abs(mags - 1.0) > 1e-6).any():
            raise InputError("candidate normals must be unit length within 1e-6")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "positions", p)
        object.__setattr__(self, "normals", m)

    def __len__(self):
        return len(self.indices)


def pair_filter(c):
    """True when the two contact normals are more than 120 degrees apart."""
    if len(c) != 2:
        raise InputError(f"pair_filter needs a 2-contact candidate, got {len(c)}")
    return bool(kernels.pair_ok(c.normals[0], c.normals[1]))


def triplet_filter(c, min_side=DEFAULT_MIN_SIDE):
    """True when the contact triangle passes the side/angle/normal rules.

    Expects pressing-direction normals (see module docstring).  Degenerate
    triangles always fail; ``triplet_reject_reason`` tells them apart from
    ordinary rejections.
    """
    if len(c) != 3:
        raise InputError(f"triplet_filter needs a 3-contact candidate, got {len(c)}")
    _check_min_side(min_side)
    p, m = c.positions, c.normals
    return bool(kernels.triplet_ok(p[0], p[1], p[2], m[0], m[1], m[2],
                                   float(min_side)))


def triplet_reject_reason(c, min_side=DEFAULT_MIN_SIDE):
    """None when the triplet passes, else the first violated rule.

    Reasons, checked in order: "degenerate" (zero-area triangle, including
    repeated or collinear positions), "side" (some side <= min_side),
    "angle" (some internal angle >= 120 degrees), "normal" (some normal at
    or beyond 90 degrees from an incident edge).  Mirrors the kernel
    predicate: the reason is None exactly when triplet_filter is True.
    """
    if len(c) != 3:
        raise InputError(f"need a 3-contact candidate, got {len(c)}")
    _check_min_side(min_side)
    p1, p2, p3 = c.positions
    n1, n2, n3 = c.normals
    e12 = p2 - p1
    e13 = p3 - p1
    e23 = p3 - p2
    a = float(np.sqrt(e12 @ e12))
    b = float(np.sqrt(e13 @ e13))
    cl = float(np.sqrt(e23 @ e23))
    longest = max(a, b, cl)
    if np.linalg.norm(np.cross(e12, e13)) <= DEGENERATE_AREA_TOL * longest**2:
        return "degenerate"
    if a <= min_side or b <= min_side or cl <= min_side:
        return "side"
    # Same expressions and order as the kernel so boundary cases agree.
    if float(e12 @ e13) / (a * b) <= -0.5:
        return "angle"
    if -float(e12 @ e23) / (a * cl) <= -0.5:
        return "angle"
    if float(e13 @ e23) / (b * cl) <= -0.5:
        return "angle"
    if float(n1 @ e12) <= 0.0 or float(n1 @ e13) <= 0.0:
        return "normal"
    if -float(n2 @ e12) <= 0.0 or float(n2 @ e23) <= 0.0:
        return "normal"
    if -float(n3 @ e13) <= 0.0 or -float(n3 @ e23) <= 0.0:
        return "normal"
    return None


class FilterEnumeration(Sequence):
    """Surviving candidates in lexicographic index order, plus counts.

    Behaves as a sequence of CandidateSet; items are materialized on
    access so a million-candidate enumeration costs one index array, not a
    million objects.  ``scanned`` is the size of the index space the scan
    covered (all pairs/triples of usable points) and ``passed`` the number
    of survivors retained, after truncation at the caller's limit.
    """

    __slots__ = ("_points", "_normals", "index_array", "scanned", "passed")

    def __init__(self, points, normals, index_array, scanned):
        self._points = points
        self._normals = normals
        self.index_array = index_array
        self.scanned = int(scanned)
        self.passed = int(index_array.shape[0])

    def __len__(self):
        return self.passed

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[j] for j in range(*i.indices(self.passed))]
        j = int(i)
        if j < 0:
            j += self.passed
        if not 0 <= j < self.passed:
            raise IndexError(f"candidate index {i} out of range")
        row = self.index_array[j]
        return CandidateSet(tuple(int(k) for k in row),
                            self._points[row], self._normals[row])


def enumerate_filtered_sets(cloud, n_fingers, min_side=DEFAULT_MIN_SIDE,
                            limit=DEFAULT_LIMIT):
    """All filter-passing index pairs or triples of a cloud, up to limit.

    The cloud must carry normals; rows whose normal estimate is flagged
    invalid are excluded from the scan entirely.  Filters see the normals
    exactly as stored, so the result always equals a brute-force re-check
    of pair_filter / triplet_filter over the usable rows.  Triplet callers
    therefore hand in a cloud whose normals are pressing directions
    (negate an outward-normal cloud first; the pair rule is orientation
    blind either way).  Enumeration is lexicographic over ascending index
    tuples and stops once ``limit`` candidates have been kept.
    """
    if not isinstance(cloud, PointCloud):
        raise InputError("enumerate_filtered_sets needs a PointCloud")
    if cloud.normals is None:
        raise InputError("cloud has no normals; estimate them first")
    if n_fingers not in (2, 3):
        raise InputError(f"n_fingers must be 2 or 3, got {n_fingers}")
    _check_min_side(min_side)
    limit = int(limit)
    if limit < 0:
        raise InputError(f"limit must be non-negative, got {limit}")
    usable = np.flatnonzero(cloud.normals_valid)
    pts = np.ascontiguousarray(cloud.points[usable])
    nrm = np.ascontiguousarray(cloud.normals[usable])
    if n_fingers == 2:
        local, scanned = kernels.enumerate_pairs(nrm, limit)
    else:
        local, scanned = kernels.enumerate_triplets(pts, nrm, float(min_side),
                                                    limit)
    rows = usable[local] if local.size else local
    return FilterEnumeration(cloud.points, cloud.normals,
                             np.ascontiguousarray(rows), scanned)


def _check_min_side(min_side):
    if not np.isfinite(min_side) or min_side < 0.0:
        raise InputError(f"min_side must be a non-negative length, got {min_side}")
