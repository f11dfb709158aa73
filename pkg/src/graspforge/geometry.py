"""Point clouds, meshes, normals, downsampling, Chamfer, partial-view rendering.

Cloud normals follow one canonical convention: outward from the object
surface (camera-facing at render time). Consumers that want inward normals
(the planning baseline, the triangle filter) negate explicitly.
"""

import struct

import numpy as np

from . import kernels
from .errors import FormatError, InputError

GFPC_MAGIC = b"GFPC"
GFPC_VERSION = 1


class PointCloud:
    """Immutable-by-convention point set with optional unit normals.

    ``normals_valid`` marks rows whose normal estimate is trustworthy;
    invalid rows carry NaN normals. A cloud without normals has both set
    to None.
    """

    __slots__ = ("points", "normals", "normals_valid")

    def __init__(self, points, normals=None, normals_valid=None):
        pts = np.ascontiguousarray(points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] == 0:
            raise InputError("point cloud must be a non-empty (N,3) array")
        if not np.isfinite(pts).all():
            raise InputError("point coordinates must be finite")
        self.points = pts
        if normals is None:
            self.normals = None
            self.normals_valid = None
            return
        nrm = np.ascontiguousarray(normals, dtype=np.float64)
        if nrm.shape != pts.shape:
            raise InputError("normals must match point array shape")
        if normals_valid is None:
            valid = np.ones(pts.shape[0], dtype=bool)
        else:
            valid = np.ascontiguousarray(normals_valid, dtype=bool)
            if valid.shape != (pts.shape[0],):
                raise InputError("normals_valid must be a length-N mask")
        mags = np.linalg.norm(nrm[valid], axis=1)
        if mags.size and (np.abs(mags - 1.0) > 1e-6).any():
            raise InputError("normals must be unit length within 1e-6")
        self.normals = nrm
        self.normals_valid = valid

    def __len__(self):
        return self.points.shape[0]

    def subset(self, indices):
        idx = np.asarray(indices, dtype=np.int64)
        if self.normals is None:
            return PointCloud(self.points[idx])
        return PointCloud(self.points[idx], self.normals[idx],
                          self.normals_valid[idx])


class TriangleMesh:
    __slots__ = ("vertices", "faces", "scale")

    def __init__(self, vertices, faces, scale=1.0):
        verts = np.ascontiguousarray(vertices, dtype=np.float64)
        fcs = np.ascontiguousarray(faces, dtype=np.int64)
        if verts.ndim != 2 or verts.shape[1] != 3 or verts.shape[0] == 0:
            raise InputError("mesh vertices must be a non-empty (V,3) array")
        if fcs.ndim != 2 or fcs.shape[1] != 3 or fcs.shape[0] == 0:
            raise InputError("mesh faces must be a non-empty (F,3) array")
        if fcs.min() < 0 or fcs.max() >= verts.shape[0]:
            raise InputError("face indices out of range")
        if not scale > 0.0:
            raise InputError("mesh scale must be positive")
        self.vertices = verts
        self.faces = fcs
        self.scale = float(scale)


class CameraPose:
    __slots__ = ("position", "look_at", "fov", "resolution")

    def __init__(self, position, look_at, fov, resolution):
        pos = np.ascontiguousarray(position, dtype=np.float64)
        tgt = np.ascontiguousarray(look_at, dtype=np.float64)
        if pos.shape != (3,) or tgt.shape != (3,):
            raise InputError("camera position and look-at must be 3-vectors")
        if np.allclose(pos, tgt):
            raise InputError("camera position must differ from look-at")
        w, h = int(resolution[0]), int(resolution[1])
        if w < 16 or h < 16:
            raise InputError("camera resolution must be at least 16x16")
        if not 0.0 < float(fov) < np.pi:
            raise InputError("field of view must be in (0, pi)")
        self.position = pos
        self.look_at = tgt
        self.fov = float(fov)
        self.resolution = (w, h)


def estimate_normals(cloud, k, center):
    """k-NN covariance normals oriented away from ``center``.

    Degenerate neighborhoods (rank-deficient covariance) are flagged
    invalid and carry NaN normals rather than raising.
    """
    if k < 3:
        raise InputError("normal estimation needs k >= 3")
    if len(cloud) < k + 1:
        raise InputError("normal estimation needs at least k+1 points")
    ctr = np.ascontiguousarray(center, dtype=np.float64)
    normals, valid = kernels.normals_from_knn(cloud.points, int(k), ctr)
    return PointCloud(cloud.points, normals, valid)


def farthest_point_downsample(cloud, n, seed):
    """Greedy farthest-point subset of size n, seeded start index."""
    count = len(cloud)
    if n > count:
        raise InputError("cannot downsample %d points to %d" % (count, n))
    if n <= 0:
        raise InputError("downsample size must be positive")
    start = int(seed) % count
    idx = kernels.fps_indices(cloud.points, int(n), start)
    return cloud.subset(idx)


def chamfer_distance(a, b):
    """Symmetric mean squared nearest-neighbor distance."""
    return float(kernels.chamfer_sq(a.points, b.points))


def _camera_rays(cam):
    """Pinhole ray grid: (origins, dirs), row-major over pixels."""
    fwd = cam.look_at - cam.position
    fwd = fwd / np.linalg.norm(fwd)
    up = np.array([0.0, 0.0, 1.0])
    if abs(fwd @ up) > 0.999:
        up = np.array([0.0, 1.0, 0.0])
    right = np.cross(fwd, up)
    right /= np.linalg.norm(right)
    upv = np.cross(right, fwd)
    w, h = cam.resolution
    half = np.tan(cam.fov / 2.0)
    xs = (2.0 * (np.arange(w) + 0.5) / w - 1.0) * half
    ys = (1.0 - 2.0 * (np.arange(h) + 0.5) / h) * half * (h / w)
    gx, gy = np.meshgrid(xs, ys)
    dirs = (fwd[None, :] + gx.reshape(-1, 1) * right[None, :]
            + gy.reshape(-1, 1) * upv[None, :])
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    origins = np.broadcast_to(cam.position, dirs.shape).copy()
    return origins, dirs


def render_partial_cloud(mesh, cameras, n, seed):
    """Merged multi-view depth back-projection, downsampled to n points.

    Ground-truth normals come from the hit triangle's face normal,
    oriented toward the observing camera.
    """
    if not cameras:
        raise InputError("need at least one camera")
    verts = mesh.vertices * mesh.scale
    faces = mesh.faces
    e1 = verts[faces[:, 1]] - verts[faces[:, 0]]
    e2 = verts[faces[:, 2]] - verts[faces[:, 0]]
    fn = np.cross(e1, e2)
    fn_len = np.linalg.norm(fn, axis=1, keepdims=True)
    fn = fn / np.where(fn_len < 1e-300, 1.0, fn_len)
    all_pts = []
    all_nrm = []
    for cam in cameras:
        origins, dirs = _camera_rays(cam)
        t, fidx = kernels.raycast(origins, dirs, verts, faces)
        hit = fidx >= 0
        if not hit.any():
            continue
        pts = origins[hit] + t[hit, None] * dirs[hit]
        nrm = fn[fidx[hit]].copy()
        toward = np.einsum("ri,ri->r", nrm, origins[hit] - pts)
        nrm[toward < 0.0] *= -1.0
        all_pts.append(pts)
        all_nrm.append(nrm)
    if not all_pts:
        raise InputError("no camera ray hit the mesh")
    pts = np.vstack(all_pts)
    nrm = np.vstack(all_nrm)
    if n > pts.shape[0]:
        raise InputError("requested %d points but only %d rays hit"
                         % (n, pts.shape[0]))
    start = int(seed) % pts.shape[0]
    idx = kernels.fps_indices(pts, int(n), start)
    return PointCloud(pts[idx], nrm[idx])


def write_cloud(path, cloud):
    """Binary point-cloud file: GFPC header then per-point records.

    The normal-present flag is written per record; a single cloud is
    uniform, so every record carries the same flag value.
    """
    has_n = cloud.normals is not None
    with open(path, "wb") as fh:
        fh.write(GFPC_MAGIC)
        fh.write(struct.pack("<HQ", GFPC_VERSION, len(cloud)))
        for i in range(len(cloud)):
            fh.write(struct.pack("<3d", *cloud.points[i]))
            fh.write(struct.pack("<B", 1 if has_n else 0))
            if has_n:
                fh.write(struct.pack("<3d", *cloud.normals[i]))


def read_cloud(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != GFPC_MAGIC:
        raise FormatError("bad point-cloud magic")
    version, count = struct.unpack_from("<HQ", raw, 4)
    if version != GFPC_VERSION:
        raise FormatError("unsupported point-cloud version %d" % version)
    if count == 0:
        raise FormatError("point-cloud file with zero points")
    off = 14
    pts = np.empty((count, 3))
    nrm = np.empty((count, 3))
    flag0 = None
    for i in range(count):
        if off + 25 > len(raw):
            raise FormatError("truncated point-cloud file")
        pts[i] = struct.unpack_from("<3d", raw, off)
        off += 24
        flag = raw[off]
        off += 1
        if flag not in (0, 1):
            raise FormatError("invalid normal-present flag %d" % flag)
        if flag0 is None:
            flag0 = flag
        elif flag != flag0:
            # a cloud either has normals or does not
            raise FormatError("mixed normal-present flags in one file")
        if flag:
            if off + 24 > len(raw):
                raise FormatError("truncated point-cloud file")
            nrm[i] = struct.unpack_from("<3d", raw, off)
            off += 24
    if off != len(raw):
        raise FormatError("trailing bytes in point-cloud file")
    if flag0:
        return PointCloud(pts, nrm)
    return PointCloud(pts)


def read_off(text):
    """ASCII OFF triangle mesh; non-triangular faces are rejected."""
    tokens = []
    for line in text.splitlines():
        body = line.split("#", 1)[0].strip()
        if body:
            tokens.extend(body.split())
    if not tokens or tokens[0] != "OFF":
        raise FormatError("missing OFF header")
    try:
        nv, nf = int(tokens[1]), int(tokens[2])
        pos = 4  # skip edge count
        verts = np.empty((nv, 3))
        for i in range(nv):
            verts[i] = [float(tokens[pos]), float(tokens[pos + 1]),
                        float(tokens[pos + 2])]
            pos += 3
        faces = np.empty((nf, 3), dtype=np.int64)
        for i in range(nf):
            arity = int(tokens[pos])
            if arity != 3:
                raise FormatError("OFF face %d has %d vertices, need 3"
                                  % (i, arity))
            faces[i] = [int(tokens[pos + 1]), int(tokens[pos + 2]),
                        int(tokens[pos + 3])]
            pos += 4
    except FormatError:
        raise
    except (ValueError, IndexError) as exc:
        raise FormatError("malformed OFF content: %s" % exc) from exc
    try:
        return TriangleMesh(verts, faces)
    except InputError as exc:
        raise FormatError(str(exc)) from exc
