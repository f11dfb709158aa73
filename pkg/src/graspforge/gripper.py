"""Gripper models: URDF parsing, kinematics, sampling, reach and collision.

A gripper is a single-rooted kinematic tree of links carrying geometric
primitives (boxes, spheres, capsules, capped cylinders), with revolute or
prismatic joints between them.  The root link is the palm; designated
fingertip links are the intended contact surfaces, grouped into fingers by
the palm subtree they live in.

Parsing collapses structure the rest of the package never needs: fixed
joints fold their child link's geometry into the parent (fingertip links
are kept so their names and contact surfaces survive), and mimic joints
share the degree of freedom of their source, so a joint configuration has
exactly one value per independent degree of freedom.

All lengths are meters, angles radians.  Joint configurations, palm poses
and clouds returned here feed the wrench/filter stack and the learned
selector without further conversion.
"""

import math
import xml.etree.ElementTree as ET
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .errors import FormatError, InputError
from .geometry import PointCloud, read_off

# Reach solver defaults: damped least squares over palm pose plus joints.
REACH_TOL = 0.005
REACH_DAMPING = 1e-3
REACH_STEP_CAP = 0.1
REACH_MAX_ITERS = 300
REACH_STARTS = 8
ALIGN_WEIGHT = 0.01

# Collision defaults: object points closer than CLEARANCE to a checked
# primitive collide; fingertip primitives are exempt within EXEMPT_RADIUS
# of their assigned target (a contact patch, not a collision).
CLEARANCE = 0.002
EXEMPT_RADIUS = 0.005

# Corner-configuration enumeration is 2^D; the generator never exceeds
# twelve joints and the enumeration refuses beyond it.
MAX_ENUM_JOINTS = 12

_PRIM_CODES = {"box": 0, "sphere": 1, "capsule": 2, "cylinder": 3}
_JTYPE_CODES = {"fixed": 0, "revolute": 1, "prismatic": 2}


@dataclass(frozen=True)
class Primitive:
    """One solid shape in a link frame.

    params by kind: box = half extents (hx, hy, hz); sphere = (radius,);
    capsule and cylinder = (radius, half_length) along the local z axis.
    A capsule's total tip-to-tip extent is 2*half_length + 2*radius.
    """

    kind: str
    params: tuple
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        if self.kind not in _PRIM_CODES:
            raise InputError(f"unknown primitive kind {self.kind!r}")
        want = 3 if self.kind == "box" else (1 if self.kind == "sphere" else 2)
        p = tuple(float(v) for v in self.params)
        if len(p) != want or any(not np.isfinite(v) or v <= 0.0 for v in p):
            raise InputError(f"bad {self.kind} params {self.params!r}")
        r = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64).reshape(-1)
        if r.shape != (3, 3) or not np.isfinite(r).all():
            raise InputError("primitive rotation must be a finite 3x3 matrix")
        if t.shape != (3,) or not np.isfinite(t).all():
            raise InputError("primitive translation must be a finite 3-vector")
        object.__setattr__(self, "params", p)
        object.__setattr__(self, "rotation", np.ascontiguousarray(r))
        object.__setattr__(self, "translation", np.ascontiguousarray(t))

    def surface_area(self):
        if self.kind == "box":
            hx, hy, hz = self.params
            return 8.0 * (hx * hy + hy * hz + hz * hx)
        if self.kind == "sphere":
            return 4.0 * math.pi * self.params[0] ** 2
        r, hl = self.params
        side = 4.0 * math.pi * r * hl
        caps = 4.0 * math.pi * r * r if self.kind == "capsule" \
            else 2.0 * math.pi * r * r
        return side + caps

    def bounding_radius(self):
        """Radius of the circumscribed sphere about the primitive center."""
        if self.kind == "box":
            return float(np.linalg.norm(self.params))
        if self.kind == "sphere":
            return self.params[0]
        r, hl = self.params
        return hl + r if self.kind == "capsule" else math.hypot(r, hl)


@dataclass(frozen=True)
class Joint:
    """Connection from a parent link to the child link that owns it.

    dof indexes the shared configuration vector; mimic joints reuse the
    source joint's dof with value = q[dof] * multiplier + offset.  Fixed
    joints (only kept for fingertip children) carry dof -1.
    """

    name: str
    type: str
    axis: np.ndarray
    lower: float
    upper: float
    origin_rotation: np.ndarray
    origin_translation: np.ndarray
    dof: int
    multiplier: float = 1.0
    offset: float = 0.0

    def __post_init__(self):
        if self.type not in _JTYPE_CODES:
            raise InputError(f"unknown joint type {self.type!r}")
        ax = np.asarray(self.axis, dtype=np.float64).reshape(-1)
        if ax.shape != (3,) or not np.isfinite(ax).all():
            raise InputError(f"joint {self.name}: axis must be a 3-vector")
        mag = np.linalg.norm(ax)
        if self.type != "fixed":
            if mag < 1e-12:
                raise InputError(f"joint {self.name}: zero axis")
            ax = ax / mag
            if not self.lower <= self.upper:
                raise InputError(
                    f"joint {self.name}: limits {self.lower} > {self.upper}")
        object.__setattr__(self, "axis", np.ascontiguousarray(ax))
        object.__setattr__(self, "origin_rotation", np.ascontiguousarray(
            np.asarray(self.origin_rotation, dtype=np.float64)))
        object.__setattr__(self, "origin_translation", np.ascontiguousarray(
            np.asarray(self.origin_translation, dtype=np.float64).reshape(3)))


@dataclass(frozen=True)
class Link:
    """Tree node: parent is a link index (-1 for the palm root)."""

    name: str
    parent: int
    joint: object
    primitives: tuple
    fingertip: bool = False
    finger: int = -1


@dataclass(frozen=True)
class JointConfig:
    """One value per independent degree of freedom, in dof order."""

    values: tuple

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        if any(not np.isfinite(v) for v in vals):
            raise InputError("joint values must be finite")
        object.__setattr__(self, "values", vals)

    def __len__(self):
        return len(self.values)

    def array(self):
        return np.array(self.values, dtype=np.float64)


def _quat_to_mat(q):
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def _mat_to_quat(r):
    tr = r[0, 0] + r[1, 1] + r[2, 2]
    if tr > 0.0:
        s = math.sqrt(tr + 1.0) * 2.0
        q = np.array([0.25 * s, (r[2, 1] - r[1, 2]) / s,
                      (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s])
    elif r[0, 0] >= r[1, 1] and r[0, 0] >= r[2, 2]:
        s = math.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2]) * 2.0
        q = np.array([(r[2, 1] - r[1, 2]) / s, 0.25 * s,
                      (r[0, 1] + r[1, 0]) / s, (r[0, 2] + r[2, 0]) / s])
    elif r[1, 1] >= r[2, 2]:
        s = math.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2]) * 2.0
        q = np.array([(r[0, 2] - r[2, 0]) / s, (r[0, 1] + r[1, 0]) / s,
                      0.25 * s, (r[1, 2] + r[2, 1]) / s])
    else:
        s = math.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1]) * 2.0
        q = np.array([(r[1, 0] - r[0, 1]) / s, (r[0, 2] + r[2, 0]) / s,
                      (r[1, 2] + r[2, 1]) / s, 0.25 * s])
    return q / np.linalg.norm(q)


@dataclass(frozen=True)
class PalmPose:
    """SE(3) pose of the palm frame: unit quaternion (w, x, y, z) + meters."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.rotation, dtype=np.float64).reshape(-1)
        t = np.asarray(self.translation, dtype=np.float64).reshape(-1)
        if q.shape != (4,) or not np.isfinite(q).all():
            raise InputError("rotation must be a quaternion (w, x, y, z)")
        if abs(np.linalg.norm(q) - 1.0) > 1e-9:
            raise InputError(f"quaternion not normalized: |q| = {np.linalg.norm(q)}")
        if t.shape != (3,) or not np.isfinite(t).all():
            raise InputError("translation must be a finite 3-vector")
        object.__setattr__(self, "rotation", np.ascontiguousarray(q))
        object.__setattr__(self, "translation", np.ascontiguousarray(t))

    @classmethod
    def identity(cls):
        return cls(np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(3))

    @classmethod
    def from_matrix(cls, rotation, translation):
        r = np.asarray(rotation, dtype=np.float64)
        if r.shape != (3, 3) or np.abs(r @ r.T - np.eye(3)).max() > 1e-6:
            raise InputError("rotation must be an orthonormal 3x3 matrix")
        return cls(_mat_to_quat(r), translation)

    def matrix(self):
        return _quat_to_mat(self.rotation), self.translation.copy()

    def compose(self, other):
        """self after other: (self o other).apply(p) = self.apply(other.apply(p))."""
        w1, x1, y1, z1 = self.rotation
        w2, x2, y2, z2 = other.rotation
        q = np.array([
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ])
        q /= np.linalg.norm(q)
        t = _quat_to_mat(self.rotation) @ other.translation + self.translation
        return PalmPose(q, t)

    def apply(self, points):
        r = _quat_to_mat(self.rotation)
        return np.asarray(points, dtype=np.float64) @ r.T + self.translation


@dataclass(frozen=True)
class FingertipFrame:
    """World pose of one fingertip link frame."""

    name: str
    rotation: np.ndarray
    position: np.ndarray
    finger: int


@dataclass(frozen=True)
class ReachResult:
    """Outcome of solve_reach.

    status is "success", "unreachable" (no start converged within
    tolerance) or "collision" (every converged start collides).  palm and
    config are filled only on success; max_error is the largest fingertip
    position error of the returned pose.
    """

    status: str
    palm: object
    config: object
    max_error: float

    @property
    def success(self):
        return self.status == "success"


@dataclass(frozen=True, eq=False)
class GripperModel:
    """Kinematic tree plus compiled arrays for the numeric kernels.

    links are topologically ordered (parent index before child); links[0]
    is the palm root.  dof_names, lower and upper describe the independent
    degrees of freedom in configuration order.
    """

    name: str
    links: tuple
    dof_names: tuple
    lower: np.ndarray
    upper: np.ndarray
    fingertips: tuple
    finger_count: int

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=np.float64).reshape(-1)
        hi = np.asarray(self.upper, dtype=np.float64).reshape(-1)
        if lo.shape != hi.shape or len(self.dof_names) != lo.shape[0]:
            raise InputError("dof names and limit arrays disagree")
        if (lo > hi).any():
            raise InputError("joint limits must satisfy lower <= upper")
        if not self.links or self.links[0].parent != -1:
            raise InputError("links[0] must be the parentless palm root")
        names = [l.name for l in self.links]
        if len(set(names)) != len(names):
            raise InputError("duplicate link names")
        for i, link in enumerate(self.links):
            if i > 0 and not 0 <= link.parent < i:
                raise InputError(
                    f"link {link.name}: parent must precede it in the tree")
            if (link.joint is None) != (i == 0):
                raise InputError("exactly the root link has no joint")
        if self.finger_count not in (2, 3):
            raise InputError(
                f"gripper must have 2 or 3 fingers, got {self.finger_count}")
        tips = tuple(l.name for l in self.links if l.fingertip)
        if tips != tuple(self.fingertips):
            raise InputError("fingertips list disagrees with link flags")
        fingers = {l.finger for l in self.links if l.fingertip}
        if fingers != set(range(self.finger_count)):
            raise InputError("every finger needs at least one fingertip")
        object.__setattr__(self, "lower", np.ascontiguousarray(lo))
        object.__setattr__(self, "upper", np.ascontiguousarray(hi))
        object.__setattr__(self, "links", tuple(self.links))
        object.__setattr__(self, "dof_names", tuple(self.dof_names))
        object.__setattr__(self, "fingertips", tuple(self.fingertips))
        object.__setattr__(self, "_tables", _compile(self))

    # -- configuration helpers ------------------------------------------

    @property
    def dof_count(self):
        return self.lower.shape[0]

    def central_config(self):
        return JointConfig(tuple(0.5 * (self.lower + self.upper)))

    def config_array(self, config):
        """Validated joint vector for this model (limits within 1e-9)."""
        if not isinstance(config, JointConfig):
            raise InputError("expected a JointConfig")
        if len(config) != self.dof_count:
            raise InputError(
                f"config has {len(config)} values, model has {self.dof_count}")
        q = config.array()
        if ((q < self.lower - 1e-9) | (q > self.upper + 1e-9)).any():
            raise InputError("joint values violate limits")
        return q

    def diameter(self):
        """Overall size: circumscribed-sphere diameter about the palm origin.

        Maximized over the corner and central configurations (central only
        when there are too many joints to enumerate corners).  The measure
        scales linearly with all model lengths, which the random generator
        relies on to hit an exact target diameter.
        """
        cached = self.__dict__.get("_diam")
        if cached is not None:
            return cached
        if self.dof_count <= MAX_ENUM_JOINTS:
            configs = boundary_and_central_configs(self)
        else:
            configs = [self.central_config()]
        t = self._tables
        best = 0.0
        for cfg in configs:
            lr, lt, _, _ = kernels.fk_links(
                t["link_parent"], t["link_pre_r"], t["link_pre_t"],
                t["link_jtype"], t["link_axis"], t["link_dof"],
                t["link_mult"], t["link_off"], cfg.array())
            for pi in range(t["prim_link"].shape[0]):
                l = t["prim_link"][pi]
                center = lr[l] @ t["prim_t"][pi] + lt[l]
                best = max(best, float(np.linalg.norm(center))
                           + t["prim_bound"][pi])
        object.__setattr__(self, "_diam", 2.0 * best)
        return 2.0 * best

    def __eq__(self, other):
        if not isinstance(other, GripperModel):
            return NotImplemented
        return _models_equal(self, other)

    __hash__ = None


def _compile(model):
    """Flat kernel arrays: one row per link, one row per primitive."""
    nl = len(model.links)
    link_parent = np.empty(nl, dtype=np.int64)
    link_pre_r = np.empty((nl, 3, 3))
    link_pre_t = np.empty((nl, 3))
    link_jtype = np.zeros(nl, dtype=np.int64)
    link_axis = np.zeros((nl, 3))
    link_axis[:, 2] = 1.0
    link_dof = np.full(nl, -1, dtype=np.int64)
    link_mult = np.ones(nl)
    link_off = np.zeros(nl)
    prims = []
    for i, link in enumerate(model.links):
        link_parent[i] = link.parent
        if link.joint is None:
            link_pre_r[i] = np.eye(3)
            link_pre_t[i] = 0.0
        else:
            j = link.joint
            link_pre_r[i] = j.origin_rotation
            link_pre_t[i] = j.origin_translation
            link_jtype[i] = _JTYPE_CODES[j.type]
            if j.type != "fixed":
                link_axis[i] = j.axis
                link_dof[i] = j.dof
                link_mult[i] = j.multiplier
                link_off[i] = j.offset
        for prim in link.primitives:
            prims.append((i, prim))
    np_count = len(prims)
    prim_link = np.empty(np_count, dtype=np.int64)
    prim_type = np.empty(np_count, dtype=np.int64)
    prim_r = np.empty((np_count, 3, 3))
    prim_t = np.empty((np_count, 3))
    prim_param = np.zeros((np_count, 3))
    prim_finger = np.empty(np_count, dtype=np.int64)
    prim_area = np.empty(np_count)
    prim_bound = np.empty(np_count)
    for pi, (li, prim) in enumerate(prims):
        prim_link[pi] = li
        prim_type[pi] = _PRIM_CODES[prim.kind]
        prim_r[pi] = prim.rotation
        prim_t[pi] = prim.translation
        prim_param[pi, :len(prim.params)] = prim.params
        prim_finger[pi] = model.links[li].finger if model.links[li].fingertip \
            else -1
        prim_area[pi] = prim.surface_area()
        prim_bound[pi] = prim.bounding_radius()
    return {
        "link_parent": link_parent,
        "link_pre_r": np.ascontiguousarray(link_pre_r),
        "link_pre_t": np.ascontiguousarray(link_pre_t),
        "link_jtype": link_jtype,
        "link_axis": np.ascontiguousarray(link_axis),
        "link_dof": link_dof,
        "link_mult": link_mult,
        "link_off": link_off,
        "prim_link": prim_link,
        "prim_type": prim_type,
        "prim_r": np.ascontiguousarray(prim_r),
        "prim_t": np.ascontiguousarray(prim_t),
        "prim_param": np.ascontiguousarray(prim_param),
        "prim_finger": prim_finger,
        "prim_area": prim_area,
        "prim_bound": prim_bound,
    }


def _models_equal(a, b, tol=1e-9):
    if (a.name != b.name or len(a.links) != len(b.links)
            or a.dof_names != b.dof_names or a.fingertips != b.fingertips
            or a.finger_count != b.finger_count):
        return False
    if not (np.allclose(a.lower, b.lower, rtol=0.0, atol=tol)
            and np.allclose(a.upper, b.upper, rtol=0.0, atol=tol)):
        return False
    for la, lb in zip(a.links, b.links):
        if (la.name != lb.name or la.parent != lb.parent
                or la.fingertip != lb.fingertip or la.finger != lb.finger
                or len(la.primitives) != len(lb.primitives)):
            return False
        ja, jb = la.joint, lb.joint
        if (ja is None) != (jb is None):
            return False
        if ja is not None:
            if (ja.name != jb.name or ja.type != jb.type or ja.dof != jb.dof):
                return False
            scalars = ((ja.lower, jb.lower), (ja.upper, jb.upper),
                       (ja.multiplier, jb.multiplier), (ja.offset, jb.offset))
            if any(abs(x - y) > tol for x, y in scalars):
                return False
            # a fixed joint's axis is inert (parsers may default it)
            if ja.type != "fixed" and not np.allclose(ja.axis, jb.axis,
                                                      rtol=0.0, atol=tol):
                return False
            if not (np.allclose(ja.origin_rotation, jb.origin_rotation,
                                rtol=0.0, atol=tol)
                    and np.allclose(ja.origin_translation,
                                    jb.origin_translation, rtol=0.0, atol=tol)):
                return False
        for pa, pb in zip(la.primitives, lb.primitives):
            if pa.kind != pb.kind or len(pa.params) != len(pb.params):
                return False
            if any(abs(x - y) > tol for x, y in zip(pa.params, pb.params)):
                return False
            if not (np.allclose(pa.rotation, pb.rotation, rtol=0.0, atol=tol)
                    and np.allclose(pa.translation, pb.translation,
                                    rtol=0.0, atol=tol)):
                return False
    return True


# ---------------------------------------------------------------------------
# URDF parsing

def _rpy_to_mat(r, p, y):
    cr, sr = math.cos(r), math.sin(r)
    cp, sp = math.cos(p), math.sin(p)
    cy, sy = math.cos(y), math.sin(y)
    return np.array([
        [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
        [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
        [-sp, cp * sr, cp * cr],
    ])


def _mat_to_rpy(m):
    p = math.atan2(-m[2, 0], math.hypot(m[0, 0], m[1, 0]))
    if abs(math.cos(p)) < 1e-9:
        return math.atan2(-m[1, 2], m[1, 1]), p, 0.0
    return (math.atan2(m[2, 1], m[2, 2]), p, math.atan2(m[1, 0], m[0, 0]))


def _parse_floats(text, count, what):
    try:
        vals = [float(v) for v in text.split()]
    except ValueError:
        vals = []
    if len(vals) != count or not all(np.isfinite(v) for v in vals):
        raise FormatError(f"{what}: expected {count} numbers, got {text!r}")
    return vals


def _attr_float(elem, attr, what, default=None):
    raw = elem.get(attr, default)
    if raw is None:
        raise FormatError(f"{what}: missing {attr}")
    try:
        val = float(raw)
    except ValueError:
        val = math.nan
    if not np.isfinite(val):
        raise FormatError(f"{what}: bad {attr} value {raw!r}")
    return val


def _parse_origin(elem):
    origin = elem.find("origin")
    if origin is None:
        return np.eye(3), np.zeros(3)
    xyz = _parse_floats(origin.get("xyz", "0 0 0"), 3, "origin xyz")
    rpy = _parse_floats(origin.get("rpy", "0 0 0"), 3, "origin rpy")
    return _rpy_to_mat(*rpy), np.array(xyz)


def _mesh_capsule(path, scale):
    """Bounding capsule of a mesh: principal axis, covering radius."""
    mesh = read_off(Path(path).read_text())
    v = mesh.vertices * scale
    center = v.mean(axis=0)
    d = v - center
    _, _, vt = np.linalg.svd(d, full_matrices=False)
    axis = vt[0]
    t = d @ axis
    radial = np.linalg.norm(d - np.outer(t, axis), axis=1)
    hl = max(0.5 * (t.max() - t.min()) - radial.max(), 0.0)
    seg = np.clip(t, -hl + 0.5 * (t.max() + t.min()),
                  hl + 0.5 * (t.max() + t.min()))
    radius = float(np.linalg.norm(d - np.outer(seg, axis), axis=1).max())
    mid = center + axis * 0.5 * (t.max() + t.min())
    zloc = np.array([0.0, 0.0, 1.0])
    w = np.cross(zloc, axis)
    s = np.linalg.norm(w)
    if s < 1e-12:
        rot = np.eye(3) if axis[2] > 0 else np.diag([1.0, -1.0, -1.0])
    else:
        w = w / s
        ang = math.atan2(s, float(axis[2]))
        k = np.array([[0, -w[2], w[1]], [w[2], 0, -w[0]], [-w[1], w[0], 0]])
        rot = np.eye(3) + math.sin(ang) * k + (1 - math.cos(ang)) * (k @ k)
    return Primitive("capsule", (max(radius, 1e-6), max(hl, 1e-6)),
                     rot, mid)


def _parse_geometry(link_elem, link_name, mesh_dir):
    """Primitives from the link's collision elements (visual fallback)."""
    elems = link_elem.findall("collision") or link_elem.findall("visual")
    prims = []
    for elem in elems:
        rot, trans = _parse_origin(elem)
        geom = elem.find("geometry")
        if geom is None or len(geom) != 1:
            raise FormatError(
                f"link {link_name}: geometry needs exactly one shape")
        shape = geom[0]
        if shape.tag == "box":
            size = _parse_floats(shape.get("size", ""), 3,
                                 f"link {link_name} box size")
            prim = Primitive("box", tuple(0.5 * s for s in size), rot, trans)
        elif shape.tag == "sphere":
            prim = Primitive(
                "sphere",
                (_attr_float(shape, "radius", f"link {link_name} sphere"),),
                rot, trans)
        elif shape.tag in ("cylinder", "capsule"):
            what = f"link {link_name} {shape.tag}"
            prim = Primitive(shape.tag,
                             (_attr_float(shape, "radius", what),
                              0.5 * _attr_float(shape, "length", what)),
                             rot, trans)
        elif shape.tag == "mesh":
            if mesh_dir is None:
                raise FormatError(
                    f"link {link_name}: mesh geometry needs mesh_dir")
            scale = np.array(_parse_floats(shape.get("scale", "1 1 1"), 3,
                                           f"link {link_name} mesh scale"))
            path = Path(mesh_dir) / shape.get("filename", "")
            if not path.is_file():
                raise FormatError(f"link {link_name}: mesh file {path} missing")
            cap = _mesh_capsule(path, scale)
            prim = Primitive("capsule", cap.params, rot @ cap.rotation,
                             rot @ cap.translation + trans)
        else:
            raise FormatError(
                f"link {link_name}: unknown geometry <{shape.tag}>")
        prims.append(prim)
    return tuple(prims)


def _default_fingertip(name):
    low = name.lower()
    return low.endswith("_tip") or "fingertip" in low


def parse_urdf(xml_text, mesh_dir=None, fingertips=None):
    """GripperModel from URDF text.

    Supported subset: robot/link/joint, joint types revolute, prismatic
    and fixed (fixed joints are collapsed), geometry box, cylinder, sphere,
    capsule and mesh (meshes become their bounding capsule and need
    ``mesh_dir`` to resolve OFF files).  Movable joints require limits.
    ``fingertips`` names the contact links; by default links named
    "*_tip" or containing "fingertip" are taken.
    """
    try:
        root = ET.fromstring(xml_text)
    except ET.ParseError as exc:
        raise FormatError(f"invalid URDF XML: {exc}") from exc
    if root.tag != "robot":
        raise FormatError(f"root element must be <robot>, got <{root.tag}>")
    robot_name = root.get("name", "gripper")

    link_elems = {}
    for elem in root.findall("link"):
        name = elem.get("name")
        if not name or name in link_elems:
            raise FormatError(f"duplicate or unnamed link {name!r}")
        link_elems[name] = elem

    joints = []
    child_of = {}
    for elem in root.findall("joint"):
        name = elem.get("name") or "<unnamed>"
        jtype = elem.get("type")
        if jtype not in ("revolute", "prismatic", "fixed"):
            raise FormatError(f"joint {name}: unknown joint type {jtype!r}")
        parent = elem.find("parent")
        child = elem.find("child")
        if parent is None or child is None:
            raise FormatError(f"joint {name}: needs parent and child")
        pname, cname = parent.get("link"), child.get("link")
        if pname not in link_elems or cname not in link_elems:
            raise FormatError(f"joint {name}: unknown link reference")
        if cname in child_of:
            raise FormatError(f"link {cname} has two parent joints")
        rot, trans = _parse_origin(elem)
        axis_elem = elem.find("axis")
        axis = np.array([1.0, 0.0, 0.0]) if axis_elem is None else \
            np.array(_parse_floats(axis_elem.get("xyz", ""), 3,
                                   f"joint {name} axis"))
        lower = upper = 0.0
        if jtype != "fixed":
            limit = elem.find("limit")
            if limit is None:
                raise FormatError(f"joint {name}: missing limit element")
            lower = _attr_float(limit, "lower", f"joint {name} limit")
            upper = _attr_float(limit, "upper", f"joint {name} limit")
            if lower > upper:
                raise FormatError(f"joint {name}: bad limits [{lower}, {upper}]")
        mimic = elem.find("mimic")
        mimic_spec = None
        if mimic is not None:
            if jtype == "fixed":
                raise FormatError(f"joint {name}: fixed joints cannot mimic")
            mimic_spec = (mimic.get("joint"),
                          _attr_float(mimic, "multiplier", f"joint {name}",
                                      default="1"),
                          _attr_float(mimic, "offset", f"joint {name}",
                                      default="0"))
        rec = {"name": name, "type": jtype, "parent": pname, "child": cname,
               "rot": rot, "trans": trans, "axis": axis, "lower": lower,
               "upper": upper, "mimic": mimic_spec}
        joints.append(rec)
        child_of[cname] = rec

    roots = [n for n in link_elems if n not in child_of]
    if len(roots) != 1:
        raise FormatError(f"need exactly one root link, found {roots}")
    children = {}
    for rec in joints:
        children.setdefault(rec["parent"], []).append(rec)

    # Reachability doubles as cycle detection: a cycle needs a link with
    # two parents (caught above) or a subtree disconnected from the root.
    order = [roots[0]]
    seen = {roots[0]}
    at = 0
    while at < len(order):
        for rec in children.get(order[at], []):
            seen.add(rec["child"])
            order.append(rec["child"])
        at += 1
    if len(seen) != len(link_elems):
        stray = sorted(set(link_elems) - seen)
        raise FormatError(f"links {stray} unreachable from root (cycle?)")

    if fingertips is None:
        tip_names = {n for n in link_elems
                     if n != roots[0] and _default_fingertip(n)}
    else:
        tip_names = set(fingertips)
        unknown = tip_names - set(link_elems)
        if unknown:
            raise FormatError(f"fingertip links {sorted(unknown)} not defined")
    if not tip_names:
        raise FormatError("no fingertip links (name them *_tip or pass "
                          "fingertips=)")

    # Assign dofs to movable non-mimic joints in tree order, then resolve
    # mimic chains onto their source dof.
    by_name = {rec["name"]: rec for rec in joints}
    dof_names = []
    for lname in order[1:]:
        rec = child_of[lname]
        if rec["type"] != "fixed" and rec["mimic"] is None:
            rec["dof"] = len(dof_names)
            rec["mult"], rec["off"] = 1.0, 0.0
            dof_names.append(rec["name"])
    for lname in order[1:]:
        rec = child_of[lname]
        if rec["mimic"] is None:
            continue
        mult, off = 1.0, 0.0
        cur = rec
        hops = 0
        while cur["mimic"] is not None:
            src_name, m, o = cur["mimic"]
            src = by_name.get(src_name)
            if src is None or src["type"] == "fixed":
                raise FormatError(
                    f"joint {rec['name']}: mimic source {src_name!r} is not "
                    f"a movable joint")
            mult, off = mult * m, mult * o + off
            cur = src
            hops += 1
            if hops > len(joints):
                raise FormatError(f"joint {rec['name']}: mimic cycle")
        rec["dof"] = cur["dof"]
        rec["mult"], rec["off"] = mult, off

    # Build links in tree order, folding fixed-jointed non-fingertip
    # children into their parents.
    links = [Link(roots[0], -1, None,
                  _parse_geometry(link_elems[roots[0]], roots[0], mesh_dir))]
    index_of = {roots[0]: 0}
    # extra transform accumulated by collapsed fixed ancestors, per link
    pre = {roots[0]: (np.eye(3), np.zeros(3))}
    fold_into = {roots[0]: roots[0]}
    for lname in order[1:]:
        rec = child_of[lname]
        host = fold_into[rec["parent"]]
        acc_r, acc_t = pre[rec["parent"]]
        rot = acc_r @ rec["rot"]
        trans = acc_r @ rec["trans"] + acc_t
        prims = _parse_geometry(link_elems[lname], lname, mesh_dir)
        if rec["type"] == "fixed" and lname not in tip_names:
            folded = tuple(
                Primitive(p.kind, p.params, rot @ p.rotation,
                          rot @ p.translation + trans) for p in prims)
            hi = index_of[host]
            host_link = links[hi]
            links[hi] = Link(host_link.name, host_link.parent,
                             host_link.joint,
                             host_link.primitives + folded,
                             host_link.fingertip, host_link.finger)
            fold_into[lname] = host
            pre[lname] = (rot, trans)
            continue
        joint = Joint(rec["name"], rec["type"], rec["axis"], rec["lower"],
                      rec["upper"], rot, trans,
                      rec.get("dof", -1), rec.get("mult", 1.0),
                      rec.get("off", 0.0))
        links.append(Link(lname, index_of[host], joint, prims,
                          lname in tip_names, -1))
        index_of[lname] = len(links) - 1
        fold_into[lname] = lname
        pre[lname] = (np.eye(3), np.zeros(3))

    for tip in sorted(tip_names):
        if tip not in index_of:
            raise FormatError(f"fingertip link {tip} was collapsed away")
    return _finalize_model(robot_name, links, dof_names)


def _finalize_model(name, links, dof_names):
    """Assign finger ids by palm subtree and assemble the model."""
    branch = [-1] * len(links)
    for i in range(1, len(links)):
        parent = links[i].parent
        branch[i] = i if parent == 0 else branch[parent]
    finger_of_branch = {}
    for i, link in enumerate(links):
        if link.fingertip:
            finger_of_branch.setdefault(branch[i], len(finger_of_branch))
    final = []
    for i, link in enumerate(links):
        fid = finger_of_branch.get(branch[i], -1) if link.fingertip else -1
        final.append(Link(link.name, link.parent, link.joint,
                          link.primitives, link.fingertip, fid))
    lo, hi = [], []
    by_name = {}
    for link in final:
        if link.joint is not None:
            by_name[link.joint.name] = link.joint
    for dn in dof_names:
        lo.append(by_name[dn].lower)
        hi.append(by_name[dn].upper)
    tips = tuple(l.name for l in final if l.fingertip)
    return GripperModel(name, tuple(final), tuple(dof_names),
                        np.array(lo, dtype=np.float64),
                        np.array(hi, dtype=np.float64),
                        tips, len(finger_of_branch))


# ---------------------------------------------------------------------------
# URDF serialization

def _fmt(values):
    return " ".join(repr(float(v)) for v in np.atleast_1d(values))


def _r(value):
    return repr(float(value))


def serialize_urdf(model):
    """URDF text for the model; parse_urdf reads it back to an equal model."""
    robot = ET.Element("robot", {"name": model.name})
    for link in model.links:
        le = ET.SubElement(robot, "link", {"name": link.name})
        for prim in link.primitives:
            ce = ET.SubElement(le, "collision")
            rpy = _mat_to_rpy(prim.rotation)
            ET.SubElement(ce, "origin", {"xyz": _fmt(prim.translation),
                                         "rpy": _fmt(rpy)})
            ge = ET.SubElement(ce, "geometry")
            if prim.kind == "box":
                ET.SubElement(ge, "box",
                              {"size": _fmt([2 * v for v in prim.params])})
            elif prim.kind == "sphere":
                ET.SubElement(ge, "sphere", {"radius": _r(prim.params[0])})
            else:
                ET.SubElement(ge, prim.kind,
                              {"radius": _r(prim.params[0]),
                               "length": _r(2 * prim.params[1])})
    for i, link in enumerate(model.links):
        if link.joint is None:
            continue
        j = link.joint
        je = ET.SubElement(robot, "joint", {"name": j.name, "type": j.type})
        rpy = _mat_to_rpy(j.origin_rotation)
        ET.SubElement(je, "origin", {"xyz": _fmt(j.origin_translation),
                                     "rpy": _fmt(rpy)})
        ET.SubElement(je, "parent", {"link": model.links[link.parent].name})
        ET.SubElement(je, "child", {"link": link.name})
        if j.type != "fixed":
            ET.SubElement(je, "axis", {"xyz": _fmt(j.axis)})
            ET.SubElement(je, "limit", {"lower": _r(j.lower),
                                        "upper": _r(j.upper),
                                        "effort": "10", "velocity": "1"})
            if j.name not in model.dof_names:
                ET.SubElement(je, "mimic",
                              {"joint": model.dof_names[j.dof],
                               "multiplier": _r(j.multiplier),
                               "offset": _r(j.offset)})
    ET.indent(robot)
    return ET.tostring(robot, encoding="unicode")


# ---------------------------------------------------------------------------
# configurations and sampling

def boundary_and_central_configs(model):
    """The 2^D joint-limit corners plus the central configuration, in
    binary counting order (joint 0 is the least significant bit), central
    last.  Zero-joint models return three empty configurations so
    consumers that reduce over configurations still see a population.
    """
    d = model.dof_count
    if d > MAX_ENUM_JOINTS:
        raise InputError(f"corner enumeration refuses D > {MAX_ENUM_JOINTS} "
                         f"joints, model has {d}")
    if d == 0:
        empty = JointConfig(())
        return [empty, empty, empty]
    configs = []
    for c in range(2 ** d):
        vals = tuple(model.upper[i] if (c >> i) & 1 else model.lower[i]
                     for i in range(d))
        configs.append(JointConfig(vals))
    configs.append(model.central_config())
    return configs


def _sample_primitive(prim, count, rng):
    """count area-uniform surface points in the primitive's local frame."""
    if count == 0:
        return np.zeros((0, 3))
    if prim.kind == "box":
        hx, hy, hz = prim.params
        areas = np.array([hy * hz, hx * hz, hx * hy])
        axis = rng.choice(3, size=count, p=areas / areas.sum())
        sign = rng.choice([-1.0, 1.0], size=count)
        pts = rng.uniform(-1.0, 1.0, size=(count, 3)) * prim.params
        pts[np.arange(count), axis] = sign * np.take(prim.params, axis)
        return pts
    if prim.kind == "sphere":
        v = rng.normal(size=(count, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        return v * prim.params[0]
    r, hl = prim.params
    if prim.kind == "capsule":
        side = 4.0 * math.pi * r * hl
        caps = 4.0 * math.pi * r * r
        on_side = rng.uniform(size=count) < side / (side + caps)
        pts = np.empty((count, 3))
        ns = int(on_side.sum())
        phi = rng.uniform(0.0, 2.0 * math.pi, size=ns)
        pts[on_side, 0] = r * np.cos(phi)
        pts[on_side, 1] = r * np.sin(phi)
        pts[on_side, 2] = rng.uniform(-hl, hl, size=ns)
        v = rng.normal(size=(count - ns, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        pts[~on_side] = v * r
        pts[~on_side, 2] += np.sign(v[:, 2]) * hl
        return pts
    side = 4.0 * math.pi * r * hl
    disks = 2.0 * math.pi * r * r
    on_side = rng.uniform(size=count) < side / (side + disks)
    pts = np.empty((count, 3))
    ns = int(on_side.sum())
    phi = rng.uniform(0.0, 2.0 * math.pi, size=ns)
    pts[on_side, 0] = r * np.cos(phi)
    pts[on_side, 1] = r * np.sin(phi)
    pts[on_side, 2] = rng.uniform(-hl, hl, size=ns)
    nd = count - ns
    rho = r * np.sqrt(rng.uniform(size=nd))
    phi = rng.uniform(0.0, 2.0 * math.pi, size=nd)
    pts[~on_side, 0] = rho * np.cos(phi)
    pts[~on_side, 1] = rho * np.sin(phi)
    pts[~on_side, 2] = np.sign(rng.uniform(-1.0, 1.0, size=nd)) * hl
    return pts


def sample_gripper_cloud(model, config, n, seed):
    """n surface points of the posed gripper in the palm frame.

    Points are drawn area-uniformly per primitive (largest-remainder
    apportionment by surface area) and mapped through forward kinematics,
    so two configurations see the same local samples moved rigidly with
    their links.
    """
    if n < 1:
        raise InputError(f"need n >= 1 points, got {n}")
    q = model.config_array(config)
    t = model._tables
    np_count = t["prim_link"].shape[0]
    if np_count == 0:
        raise InputError("gripper has no geometry to sample")
    areas = t["prim_area"]
    quota = np.floor(n * areas / areas.sum()).astype(np.int64)
    frac = n * areas / areas.sum() - quota
    short = n - int(quota.sum())
    if short:
        quota[np.argsort(-frac, kind="stable")[:short]] += 1
    lr, lt, _, _ = kernels.fk_links(
        t["link_parent"], t["link_pre_r"], t["link_pre_t"], t["link_jtype"],
        t["link_axis"], t["link_dof"], t["link_mult"], t["link_off"], q)
    rng = np.random.default_rng(seed)
    prim_index = 0
    out = np.empty((n, 3))
    at = 0
    for link_i, link in enumerate(model.links):
        for prim in link.primitives:
            k = int(quota[prim_index])
            local = _sample_primitive(prim, k, rng)
            world = (local @ prim.rotation.T + prim.translation) @ \
                lr[link_i].T + lt[link_i]
            out[at:at + k] = world
            at += k
            prim_index += 1
    return PointCloud(out)


def fingertip_fk(model, config, palm):
    """World pose of each fingertip link frame, in fingertips order."""
    q = model.config_array(config)
    if not isinstance(palm, PalmPose):
        raise InputError("palm must be a PalmPose")
    t = model._tables
    lr, lt, _, _ = kernels.fk_links(
        t["link_parent"], t["link_pre_r"], t["link_pre_t"], t["link_jtype"],
        t["link_axis"], t["link_dof"], t["link_mult"], t["link_off"], q)
    pr, pt = palm.matrix()
    frames = []
    for i, link in enumerate(model.links):
        if link.fingertip:
            frames.append(FingertipFrame(link.name, pr @ lr[i],
                                         pr @ lt[i] + pt, link.finger))
    return frames


# ---------------------------------------------------------------------------
# collision and reach

def collision_check(model, config, palm, obj, clearance=CLEARANCE,
                    fingertip_targets=None):
    """True iff an object point is within clearance of a non-fingertip
    primitive.

    Fingertip primitives are the intended contact surfaces and are never
    collision sources.  When ``fingertip_targets`` (one 3-vector per
    finger) supplies the assigned contacts, object points inside a contact
    patch (within EXEMPT_RADIUS of a target) are expected to touch the
    hand and are exempt from every primitive.
    """
    q = model.config_array(config)
    if not isinstance(obj, PointCloud):
        raise InputError("object must be a PointCloud")
    t = model._tables
    lr, lt, _, _ = kernels.fk_links(
        t["link_parent"], t["link_pre_r"], t["link_pre_t"], t["link_jtype"],
        t["link_axis"], t["link_dof"], t["link_mult"], t["link_off"], q)
    pr, pt = palm.matrix()
    wr = np.ascontiguousarray(np.einsum("ij,ljk->lik", pr, lr))
    wt = np.ascontiguousarray(lt @ pr.T + pt)
    if fingertip_targets is None:
        targets = np.zeros((0, 3))
    else:
        targets = np.ascontiguousarray(
            np.asarray(fingertip_targets, dtype=np.float64))
        if targets.shape != (model.finger_count, 3):
            raise InputError(
                f"need one target per finger, got {targets.shape}")
    return bool(kernels.collision_points(
        wr, wt, t["prim_link"], t["prim_type"], t["prim_r"], t["prim_t"],
        t["prim_param"], t["prim_finger"], obj.points, float(clearance),
        targets, EXEMPT_RADIUS))


def _palm_axis(model):
    """Unit direction from palm origin toward the fingertips, palm frame."""
    frames = fingertip_fk(model, model.central_config(), PalmPose.identity())
    mean = np.mean([f.position for f in frames], axis=0)
    norm = np.linalg.norm(mean)
    return mean / norm if norm > 1e-9 else np.array([0.0, 0.0, 1.0])


def _align_rotation(src, dst):
    """Minimal rotation taking unit vector src to unit vector dst."""
    c = float(src @ dst)
    w = np.cross(src, dst)
    s = np.linalg.norm(w)
    if s < 1e-12:
        if c > 0.0:
            return np.eye(3)
        # antiparallel: half turn about any perpendicular axis
        perp = np.eye(3)[int(np.argmin(np.abs(src)))]
        perp = perp - src * (perp @ src)
        perp /= np.linalg.norm(perp)
        return 2.0 * np.outer(perp, perp) - np.eye(3)
    w = w / s
    k = np.array([[0, -w[2], w[1]], [w[2], 0, -w[0]], [-w[1], w[0], 0]])
    return np.eye(3) + s * k + (1.0 - c) * (k @ k)


_START_DIRS = np.array([[sx, sy, sz] for sx in (-1.0, 1.0)
                        for sy in (-1.0, 1.0) for sz in (-1.0, 1.0)])
_START_DIRS /= np.linalg.norm(_START_DIRS, axis=1, keepdims=True)


def solve_reach(model, targets, target_normals, obj, clearance=CLEARANCE,
                align_weight=ALIGN_WEIGHT, first_success=False):
    """Palm pose and joint values placing one fingertip on each target.

    Damped-least-squares iteration over the palm pose and all joints from
    8 palm starts arranged around the targets, facing them.  Success needs
    every fingertip surface within REACH_TOL of its target, limits
    respected and no collision with ``obj``; the soft alignment term pulls
    each fingertip's inward axis toward the negated target normal.
    Returns a ReachResult; failures distinguish "unreachable" (nothing
    converged) from "collision" (converged starts all collide).
    """
    tg = np.ascontiguousarray(np.asarray(targets, dtype=np.float64))
    tn = np.ascontiguousarray(np.asarray(target_normals, dtype=np.float64))
    nf = model.finger_count
    if tg.shape != (nf, 3):
        raise InputError(f"need {nf} targets, got shape {tg.shape}")
    if tn.shape != (nf, 3):
        raise InputError(f"need {nf} target normals, got shape {tn.shape}")
    if not (np.isfinite(tg).all() and np.isfinite(tn).all()):
        raise InputError("targets and normals must be finite")
    if (np.abs(np.linalg.norm(tn, axis=1) - 1.0) > 1e-6).any():
        raise InputError("target normals must be unit length")
    for i in range(nf):
        for j in range(i + 1, nf):
            if np.linalg.norm(tg[i] - tg[j]) < 1e-9:
                raise InputError("targets must be mutually distinct")
    if not isinstance(obj, PointCloud):
        raise InputError("object must be a PointCloud")

    centroid = tg.mean(axis=0)
    spread = float(np.linalg.norm(tg - centroid, axis=1).max())
    radius = 0.6 * model.diameter() + spread
    axis = _palm_axis(model)
    start_r = np.empty((REACH_STARTS, 3, 3))
    start_t = np.empty((REACH_STARTS, 3))
    for s in range(REACH_STARTS):
        d = _START_DIRS[s]
        start_r[s] = _align_rotation(axis, -d)
        start_t[s] = centroid + d * radius
    t = model._tables
    q0 = 0.5 * (model.lower + model.upper)
    code, err, pr, pt, q = kernels.dls_reach(
        t["link_parent"], t["link_pre_r"], t["link_pre_t"], t["link_jtype"],
        t["link_axis"], t["link_dof"], t["link_mult"], t["link_off"],
        model.lower, model.upper,
        t["prim_link"], t["prim_type"], t["prim_r"], t["prim_t"],
        t["prim_param"], t["prim_finger"],
        tg, tn, obj.points,
        np.ascontiguousarray(start_r), np.ascontiguousarray(start_t),
        np.ascontiguousarray(q0),
        REACH_DAMPING, REACH_STEP_CAP, REACH_MAX_ITERS, REACH_TOL,
        float(align_weight), float(clearance), EXEMPT_RADIUS,
        1 if first_success else 0)
    if code == 0:
        return ReachResult("success", PalmPose.from_matrix(pr, pt),
                           JointConfig(tuple(q)), float(err))
    status = "unreachable" if code == 1 else "collision"
    return ReachResult(status, None, None, float("inf"))


def fingertip_contacts(model, config, palm, targets):
    """Nearest fingertip-surface point to each target, world frame."""
    q = model.config_array(config)
    tg = np.ascontiguousarray(np.asarray(targets, dtype=np.float64))
    if tg.shape != (model.finger_count, 3):
        raise InputError(f"need one target per finger, got {tg.shape}")
    t = model._tables
    lr, lt, _, _ = kernels.fk_links(
        t["link_parent"], t["link_pre_r"], t["link_pre_t"], t["link_jtype"],
        t["link_axis"], t["link_dof"], t["link_mult"], t["link_off"], q)
    pr, pt = palm.matrix()
    contacts = np.zeros((model.finger_count, 3))
    owner = np.zeros(model.finger_count, dtype=np.int64)
    kernels.finger_contacts(
        lr, lt, pr, pt, t["prim_link"], t["prim_type"], t["prim_r"],
        t["prim_t"], t["prim_param"], t["prim_finger"], tg, contacts, owner)
    return contacts


# ---------------------------------------------------------------------------
# procedural generation

def generate_random_gripper(seed):
    """Random 2- or 3-finger gripper with 1..12 joints, exact diameter.

    Deterministic per seed.  Fingers are capsule chains on a box palm with
    a mix of revolute (bend) and prismatic (slide) joints; the whole model
    is scaled so diameter() lands exactly on a draw from [0.10, 0.30] m.
    Links are laid out level by level so the serialized model re-parses to
    the identical link and dof order.
    """
    rng = np.random.default_rng(seed)
    n_fingers = int(rng.integers(2, 4))
    total_joints = int(rng.integers(1, 13))
    per_finger = np.zeros(n_fingers, dtype=np.int64)
    for _ in range(total_joints):
        per_finger[int(rng.integers(n_fingers))] += 1

    pw = float(rng.uniform(0.025, 0.045))
    ph = float(rng.uniform(0.008, 0.02))
    mount_r = 0.65 * pw
    mimic_first = (n_fingers == 2 and per_finger.min() >= 1
                   and rng.uniform() < 0.25)

    z_axis = np.array([0.0, 0.0, 1.0])
    plans = []
    first_spec = None
    for f in range(n_fingers):
        ang = 2.0 * math.pi * f / n_fingers
        radial = np.array([math.cos(ang), math.sin(ang), 0.0])
        tangent = np.array([-math.sin(ang), math.cos(ang), 0.0])
        seg_r = float(rng.uniform(0.004, 0.009))
        count = int(per_finger[f])
        segs = []
        for s in range(max(count, 1)):
            seg_len = max(float(rng.uniform(0.02, 0.05)), 3.0 * seg_r)
            if count == 0:
                spec = ("fixed", z_axis, 0.0, 0.0, False)
            elif f > 0 and s == 0 and mimic_first:
                jtype, radial_axis, lo, hi = first_spec
                axis = tangent if jtype == "revolute" else \
                    (-radial if radial_axis else z_axis)
                spec = (jtype, axis, lo, hi, True)
            else:
                if rng.uniform() < 0.6:
                    jtype, radial_axis = "revolute", False
                    axis = tangent
                    lo = -float(rng.uniform(0.2, 0.6))
                    hi = float(rng.uniform(0.2, 0.6))
                else:
                    jtype = "prismatic"
                    radial_axis = bool(rng.uniform() < 0.5)
                    axis = -radial if radial_axis else z_axis
                    lo, hi = 0.0, float(rng.uniform(0.015, 0.04))
                spec = (jtype, axis, lo, hi, False)
                if f == 0 and s == 0:
                    first_spec = (jtype, radial_axis, lo, hi)
            segs.append((spec, seg_len, seg_r))
        mount_t = mount_r * radial + np.array([0.0, 0.0, ph])
        plans.append((segs, mount_t))

    links = [Link("palm", -1, None,
                  (Primitive("box", (pw, pw, ph), np.eye(3), np.zeros(3)),))]
    dof_names = []
    parent_idx = [0] * n_fingers
    prev_len = [0.0] * n_fingers
    f0_dof = -1
    for level in range(max(len(p[0]) for p in plans)):
        for f in range(n_fingers):
            segs, mount_t = plans[f]
            if level >= len(segs):
                continue
            (jtype, axis, lo, hi, is_mimic), seg_len, seg_r = segs[level]
            last = level == len(segs) - 1
            name = f"f{f}_tip" if last else f"f{f}_l{level}"
            origin_t = mount_t if level == 0 else \
                np.array([0.0, 0.0, prev_len[f]])
            if jtype == "fixed":
                joint = Joint(f"f{f}_mount", "fixed", axis, 0.0, 0.0,
                              np.eye(3), origin_t, -1)
            elif is_mimic:
                joint = Joint(f"f{f}_j{level}", jtype, axis, lo, hi,
                              np.eye(3), origin_t, f0_dof, 1.0, 0.0)
            else:
                if f == 0 and level == 0:
                    f0_dof = len(dof_names)
                joint = Joint(f"f{f}_j{level}", jtype, axis, lo, hi,
                              np.eye(3), origin_t, len(dof_names))
                dof_names.append(joint.name)
            prim = Primitive("capsule",
                             (seg_r, max(seg_len / 2 - seg_r, 1e-4)),
                             np.eye(3), np.array([0.0, 0.0, seg_len / 2]))
            links.append(Link(name, parent_idx[f], joint, (prim,), last, -1))
            parent_idx[f] = len(links) - 1
            prev_len[f] = seg_len

    model = _finalize_model(f"gripper_{seed}", links, dof_names)
    target = float(rng.uniform(0.10, 0.30))
    return _scaled(model, target / model.diameter())


def _scaled(model, f):
    """Every length scaled by f: geometry, origins, prismatic limits."""
    links = []
    for link in model.links:
        prims = tuple(Primitive(p.kind, tuple(f * v for v in p.params),
                                p.rotation, f * p.translation)
                      for p in link.primitives)
        joint = link.joint
        if joint is not None:
            prismatic = joint.type == "prismatic"
            joint = Joint(joint.name, joint.type, joint.axis,
                          f * joint.lower if prismatic else joint.lower,
                          f * joint.upper if prismatic else joint.upper,
                          joint.origin_rotation, f * joint.origin_translation,
                          joint.dof, joint.multiplier,
                          f * joint.offset if prismatic else joint.offset)
        links.append(Link(link.name, link.parent, joint, prims,
                          link.fingertip, link.finger))
    return _finalize_model(model.name, links, list(model.dof_names))
