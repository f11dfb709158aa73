"""Numeric kernel dispatch.

Selects the jitted or pure-numpy implementations at import time based on
``graspforge._accel.USE_NUMBA``. Both modules stay importable so the
benchmark and the parity tests can pit them against each other directly.
"""

from .._accel import USE_NUMBA

if USE_NUMBA:
    from . import _numba_impl as _impl
else:
    from . import _numpy_impl as _impl

SUPPORT_TOL = _impl.SUPPORT_TOL
fps_indices = _impl.fps_indices
fps_indices_geometric = _impl.fps_indices_geometric
knn_indices = _impl.knn_indices
normals_from_knn = _impl.normals_from_knn
chamfer_sq = _impl.chamfer_sq
raycast = _impl.raycast
cone_edges = _impl.cone_edges
build_wrenches = _impl.build_wrenches
epsilon_bruteforce = _impl.epsilon_bruteforce
epsilon_epa = _impl.epsilon_epa
epsilon_iterative = _impl.epsilon_iterative
nearest_point_dist = _impl.nearest_point_dist
quality_batch = _impl.quality_batch
subspace_coords = _impl.subspace_coords
pair_ok = _impl.pair_ok
triplet_ok = _impl.triplet_ok
enumerate_pairs = _impl.enumerate_pairs
enumerate_triplets = _impl.enumerate_triplets
fk_links = _impl.fk_links
collision_points = _impl.collision_points
finger_contacts = _impl._finger_contacts
dls_reach = _impl.dls_reach

ACTIVE_IMPL = "numba" if USE_NUMBA else "numpy"
