import itertools
import math

import numpy as np
import pytest

from graspforge.errors import InputError
from graspforge.filters import (
    CandidateSet,
    FilterEnumeration,
    enumerate_filtered_sets,
    pair_filter,
    triplet_filter,
    triplet_reject_reason,
)
from graspforge.geometry import PointCloud


def random_rotation(rng):
    q = rng.standard_normal(4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def pair_candidate(n1, n2):
    pos = np.array([[0.0, 0.0, 0.0], [0.1, 0.0, 0.0]])
    return CandidateSet((0, 1), pos, np.array([n1, n2], dtype=np.float64))


def triplet_candidate(positions, normals, indices=(0, 1, 2)):
    return CandidateSet(indices, np.asarray(positions, dtype=np.float64),
                        np.asarray(normals, dtype=np.float64))


def centroid_normals(positions):
    p = np.asarray(positions, dtype=np.float64)
    n = p.mean(axis=0) - p
    return n / np.linalg.norm(n, axis=1, keepdims=True)


def rim_triplet(side, inward):
    """Equilateral triangle on a disk rim, radial in-plane normals."""
    r = side / math.sqrt(3.0)
    ang = np.radians([90.0, 210.0, 330.0])
    pos = r * np.stack([np.cos(ang), np.sin(ang), np.zeros(3)], axis=1)
    nrm = pos / np.linalg.norm(pos, axis=1, keepdims=True)
    if inward:
        nrm = -nrm
    return triplet_candidate(pos, nrm)


# --- independent re-derivations of the rules, in degrees -------------------

def angle_deg(u, v):
    c = float(u @ v) / (np.linalg.norm(u) * np.linalg.norm(v))
    return math.degrees(math.acos(min(1.0, max(-1.0, c))))


def oracle_pair(n1, n2):
    return angle_deg(n1, n2) > 120.0


def oracle_triplet(p, n, min_side=0.01):
    for i, j in itertools.combinations(range(3), 2):
        if np.linalg.norm(p[i] - p[j]) <= min_side:
            return False
    for v in range(3):
        a, b = [k for k in range(3) if k != v]
        da, db = p[a] - p[v], p[b] - p[v]
        if angle_deg(da, db) >= 120.0:
            return False
        if angle_deg(n[v], da) >= 90.0 or angle_deg(n[v], db) >= 90.0:
            return False
    return True


def sphere_cloud(count, seed, inward=False):
    rng = np.random.default_rng(seed)
    v = rng.normal(size=(count, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return PointCloud(0.05 * v, -v if inward else v)


class TestCandidateSet:
    def test_holds_validated_geometry(self):
        c = pair_candidate([0.0, 0.0, 1.0], [0.0, 0.0, -1.0])
        assert c.indices == (0, 1)
        assert len(c) == 2
        assert c.positions.shape == (2, 3)

    def test_rejects_duplicate_indices(self):
        pos = np.zeros((2, 3))
        pos[1, 0] = 0.1
        nrm = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, -1.0]])
        with pytest.raises(InputError):
            CandidateSet((4, 4), pos, nrm)

    def test_rejects_wrong_cardinality(self):
        with pytest.raises(InputError):
            CandidateSet((0,), np.zeros((1, 3)), np.array([[0.0, 0.0, 1.0]]))
        with pytest.raises(InputError):
            CandidateSet((0, 1, 2, 3), np.zeros((4, 3)),
                         np.tile([0.0, 0.0, 1.0], (4, 1)))

    def test_rejects_negative_index(self):
        nrm = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, -1.0]])
        with pytest.raises(InputError):
            CandidateSet((-1, 2), np.zeros((2, 3)), nrm)

    def test_rejects_non_unit_normal(self):
        nrm = np.array([[0.0, 0.0, 2.0], [0.0, 0.0, -1.0]])
        with pytest.raises(InputError):
            CandidateSet((0, 1), np.zeros((2, 3)), nrm)

    def test_rejects_non_finite_position(self):
        pos = np.zeros((2, 3))
        pos[0, 0] = np.nan
        nrm = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, -1.0]])
        with pytest.raises(InputError):
            CandidateSet((0, 1), pos, nrm)

    def test_shape_mismatch(self):
        nrm = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, -1.0]])
        with pytest.raises(InputError):
            CandidateSet((0, 1), np.zeros((3, 3)), nrm)


class TestPairFilter:
    def test_opposite_normals_pass(self):
        assert pair_filter(pair_candidate([0, 0, 1.0], [0, 0, -1.0])) is True

    def test_perpendicular_normals_fail(self):
        assert pair_filter(pair_candidate([1.0, 0, 0], [0, 1.0, 0])) is False

    def test_exact_120_boundary_fails_strict(self):
        # dot = cos 120 deg = -0.5 exactly in floats
        n2 = [-0.5, math.sqrt(3.0) / 2.0, 0.0]
        assert pair_filter(pair_candidate([1.0, 0.0, 0.0], n2)) is False

    def test_just_past_120_passes(self):
        a = math.radians(121.0)
        n2 = [math.cos(a), math.sin(a), 0.0]
        assert pair_filter(pair_candidate([1.0, 0.0, 0.0], n2)) is True

    def test_orientation_blind_under_joint_negation(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            n = rng.normal(size=(2, 3))
            n /= np.linalg.norm(n, axis=1, keepdims=True)
            c = pair_candidate(n[0], n[1])
            flipped = pair_candidate(-n[0], -n[1])
            assert pair_filter(c) == pair_filter(flipped)

    def test_matches_angle_oracle(self):
        rng = np.random.default_rng(11)
        seen = {True: 0, False: 0}
        for _ in range(200):
            n = rng.normal(size=(2, 3))
            n /= np.linalg.norm(n, axis=1, keepdims=True)
            got = pair_filter(pair_candidate(n[0], n[1]))
            assert got == oracle_pair(n[0], n[1])
            seen[got] += 1
        assert seen[True] > 0 and seen[False] > 0

    def test_needs_two_contacts(self):
        c = rim_triplet(0.05, inward=True)
        with pytest.raises(InputError):
            pair_filter(c)


class TestTripletFilter:
    def test_disk_rim_outward_fails(self):
        c = rim_triplet(0.05, inward=False)
        assert triplet_filter(c) is False
        assert triplet_reject_reason(c) == "normal"

    def test_disk_rim_inward_passes(self):
        c = rim_triplet(0.05, inward=True)
        assert triplet_filter(c) is True
        assert triplet_reject_reason(c) is None

    def test_tiny_equilateral_fails(self):
        c = rim_triplet(0.005, inward=True)
        assert triplet_filter(c) is False
        assert triplet_reject_reason(c) == "side"

    def test_side_exactly_min_side_fails_strict(self):
        c = rim_triplet(0.05, inward=True)
        assert triplet_filter(c, min_side=0.05) is False

    def test_min_side_override(self):
        c = rim_triplet(0.005, inward=True)
        assert triplet_filter(c, min_side=0.003) is True

    def test_apex_150_fails(self):
        arm = 0.05
        a = math.radians(75.0)
        pos = np.array([[0.0, 0.0, 0.0],
                        [arm * math.cos(a), arm * math.sin(a), 0.0],
                        [arm * math.cos(a), -arm * math.sin(a), 0.0]])
        c = triplet_candidate(pos, centroid_normals(pos))
        assert triplet_filter(c) is False
        assert triplet_reject_reason(c) == "angle"

    def test_collinear_flagged_degenerate(self):
        pos = np.array([[0.0, 0.0, 0.0], [0.05, 0.0, 0.0], [0.11, 0.0, 0.0]])
        nrm = np.tile([0.0, 0.0, 1.0], (3, 1))
        c = triplet_candidate(pos, nrm)
        assert triplet_filter(c) is False
        assert triplet_reject_reason(c) == "degenerate"

    def test_coincident_positions_flagged_degenerate(self):
        pos = np.array([[0.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.05, 0.0, 0.0]])
        nrm = np.tile([0.0, 0.0, 1.0], (3, 1))
        c = triplet_candidate(pos, nrm)
        assert triplet_reject_reason(c) == "degenerate"
        assert triplet_filter(c) is False

    def test_needs_three_contacts(self):
        c = pair_candidate([0, 0, 1.0], [0, 0, -1.0])
        with pytest.raises(InputError):
            triplet_filter(c)
        with pytest.raises(InputError):
            triplet_reject_reason(c)

    def test_bad_min_side(self):
        c = rim_triplet(0.05, inward=True)
        with pytest.raises(InputError):
            triplet_filter(c, min_side=-1.0)
        with pytest.raises(InputError):
            triplet_filter(c, min_side=np.inf)

    def test_matches_angle_oracle_on_random_triangles(self):
        rng = np.random.default_rng(23)
        passes = 0
        for trial in range(400):
            scale = rng.choice([0.004, 0.02, 0.1])
            pos = rng.normal(size=(3, 3)) * scale
            if trial % 2 == 0:
                nrm = centroid_normals(pos)
            else:
                nrm = rng.normal(size=(3, 3))
                nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
            c = triplet_candidate(pos, nrm)
            got = triplet_filter(c)
            assert got == oracle_triplet(pos, nrm)
            assert got == (triplet_reject_reason(c) is None)
            passes += got
        assert passes > 20


class TestInvariances:
    def test_permutation_symmetry(self):
        rng = np.random.default_rng(31)
        for trial in range(60):
            pos = rng.normal(size=(3, 3)) * 0.05
            nrm = centroid_normals(pos) if trial % 2 else rng.normal(size=(3, 3))
            nrm = nrm / np.linalg.norm(nrm, axis=1, keepdims=True)
            base = triplet_candidate(pos, nrm)
            want = triplet_filter(base)
            reason = triplet_reject_reason(base)
            for perm in itertools.permutations(range(3)):
                p = list(perm)
                c = triplet_candidate(pos[p], nrm[p], indices=(0, 1, 2))
                assert triplet_filter(c) == want
                assert triplet_reject_reason(c) == reason

    def test_pair_swap_symmetry(self):
        rng = np.random.default_rng(37)
        for _ in range(60):
            n = rng.normal(size=(2, 3))
            n /= np.linalg.norm(n, axis=1, keepdims=True)
            assert (pair_filter(pair_candidate(n[0], n[1]))
                    == pair_filter(pair_candidate(n[1], n[0])))

    def test_rigid_transform_invariance(self):
        rng = np.random.default_rng(41)
        for trial in range(40):
            pos = rng.normal(size=(3, 3)) * 0.05
            nrm = centroid_normals(pos) if trial % 2 else rng.normal(size=(3, 3))
            nrm = nrm / np.linalg.norm(nrm, axis=1, keepdims=True)
            rot = random_rotation(rng)
            shift = rng.normal(size=3)
            moved = triplet_candidate(pos @ rot.T + shift, nrm @ rot.T)
            assert triplet_filter(moved) == triplet_filter(
                triplet_candidate(pos, nrm))
            n2 = nrm[:2]
            a = pair_filter(pair_candidate(n2[0], n2[1]))
            b = pair_filter(pair_candidate(rot @ n2[0], rot @ n2[1]))
            assert a == b


class TestEnumeration:
    def test_pairs_match_exhaustive_oracle(self):
        cloud = sphere_cloud(64, seed=3)
        enum = enumerate_filtered_sets(cloud, 2)
        want = [(i, j) for i, j in itertools.combinations(range(64), 2)
                if oracle_pair(cloud.normals[i], cloud.normals[j])]
        got = [c.indices for c in enum]
        assert got == want
        assert enum.scanned == math.comb(64, 2)
        assert enum.passed == len(want) > 0

    def test_triplets_match_exhaustive_oracle(self):
        cloud = sphere_cloud(48, seed=5, inward=True)
        enum = enumerate_filtered_sets(cloud, 3)
        want = [t for t in itertools.combinations(range(48), 3)
                if oracle_triplet(cloud.points[list(t)],
                                  cloud.normals[list(t)])]
        got = [c.indices for c in enum]
        assert got == want
        assert enum.scanned == math.comb(48, 3)
        assert enum.passed == len(want) > 0

    def test_candidates_pass_their_filter(self):
        cloud = sphere_cloud(40, seed=9, inward=True)
        for c in enumerate_filtered_sets(cloud, 3, limit=200):
            assert triplet_filter(c) is True
        for c in enumerate_filtered_sets(cloud, 2, limit=200):
            assert pair_filter(c) is True

    def test_limit_truncates_prefix(self):
        cloud = sphere_cloud(48, seed=5, inward=True)
        full = enumerate_filtered_sets(cloud, 3)
        cut = enumerate_filtered_sets(cloud, 3, limit=7)
        assert cut.passed == 7
        np.testing.assert_array_equal(cut.index_array, full.index_array[:7])
        pcut = enumerate_filtered_sets(cloud, 2, limit=5)
        pfull = enumerate_filtered_sets(cloud, 2)
        np.testing.assert_array_equal(pcut.index_array, pfull.index_array[:5])

    def test_scanned_counts_full_index_space(self):
        cloud = sphere_cloud(2048, seed=13, inward=True)
        enum = enumerate_filtered_sets(cloud, 3, limit=50)
        assert enum.scanned == math.comb(2048, 3)
        assert enum.scanned > 1_400_000_000
        assert enum.passed == 50

    def test_all_parallel_normals_yield_nothing(self):
        pts = np.random.default_rng(17).normal(size=(32, 3)) * 0.05
        nrm = np.tile([0.0, 0.0, 1.0], (32, 1))
        enum = enumerate_filtered_sets(PointCloud(pts, nrm), 2)
        assert enum.passed == 0
        assert len(enum) == 0
        assert enum.scanned == math.comb(32, 2)

    def test_missing_normals_error(self):
        cloud = PointCloud(np.random.default_rng(19).normal(size=(8, 3)))
        with pytest.raises(InputError):
            enumerate_filtered_sets(cloud, 2)

    def test_invalid_normal_rows_excluded(self):
        cloud = sphere_cloud(12, seed=21)
        nrm = cloud.normals.copy()
        valid = np.ones(12, dtype=bool)
        for row in (3, 7):
            nrm[row] = np.nan
            valid[row] = False
        holed = PointCloud(cloud.points, nrm, valid)
        enum = enumerate_filtered_sets(holed, 2)
        assert enum.scanned == math.comb(10, 2)
        keep = [i for i in range(12) if i not in (3, 7)]
        want = [(i, j) for i, j in itertools.combinations(keep, 2)
                if oracle_pair(nrm[i], nrm[j])]
        assert [c.indices for c in enum] == want

    def test_all_normals_invalid_empty_scan(self):
        pts = np.random.default_rng(29).normal(size=(6, 3))
        nrm = np.full((6, 3), np.nan)
        cloud = PointCloud(pts, nrm, np.zeros(6, dtype=bool))
        for n_fingers in (2, 3):
            enum = enumerate_filtered_sets(cloud, n_fingers)
            assert enum.scanned == 0
            assert enum.passed == 0

    def test_input_validation(self):
        cloud = sphere_cloud(8, seed=25)
        with pytest.raises(InputError):
            enumerate_filtered_sets(cloud, 4)
        with pytest.raises(InputError):
            enumerate_filtered_sets(cloud, 3, min_side=-0.1)
        with pytest.raises(InputError):
            enumerate_filtered_sets(cloud, 2, limit=-1)
        with pytest.raises(InputError):
            enumerate_filtered_sets(cloud.points, 2)

    def test_sequence_protocol(self):
        cloud = sphere_cloud(24, seed=27)
        enum = enumerate_filtered_sets(cloud, 2)
        assert isinstance(enum, FilterEnumeration)
        assert len(enum) == enum.passed
        assert enum.index_array.dtype == np.int64
        assert enum.index_array.shape == (enum.passed, 2)
        first = enum[0]
        assert isinstance(first, CandidateSet)
        assert enum[-1].indices == tuple(enum.index_array[-1])
        assert [c.indices for c in enum[:3]] == [enum[i].indices
                                                 for i in range(3)]
        with pytest.raises(IndexError):
            enum[enum.passed]
        np.testing.assert_allclose(first.positions,
                                   cloud.points[list(first.indices)])
