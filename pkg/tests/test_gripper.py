"""Tests for URDF gripper models: parsing, kinematics, sampling, reach.

Oracles are independent re-derivations: hand-composed forward kinematics
for the fixture grippers, closed-form circles for revolute joints, and
per-primitive surface-distance formulas for sampled clouds.
"""

import math
from pathlib import Path

import numpy as np
import pytest

from graspforge.errors import FormatError, InputError
from graspforge.geometry import PointCloud
from graspforge.gripper import (
    CLEARANCE,
    EXEMPT_RADIUS,
    REACH_TOL,
    GripperModel,
    JointConfig,
    PalmPose,
    boundary_and_central_configs,
    collision_check,
    fingertip_contacts,
    fingertip_fk,
    generate_random_gripper,
    parse_urdf,
    sample_gripper_cloud,
    serialize_urdf,
    solve_reach,
)

ASSETS = Path(__file__).parent / "assets"


def load(name):
    return parse_urdf((ASSETS / name).read_text())


def random_pose(seed):
    rng = np.random.default_rng(seed)
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    return PalmPose(q, rng.uniform(-0.2, 0.2, size=3))


# --- independent surface-distance oracles (local primitive frames) -------

def box_surface_dist(p, half):
    d = np.abs(p) - np.asarray(half)
    outside = np.linalg.norm(np.maximum(d, 0.0))
    return outside if outside > 0.0 else -float(d.max())


def capsule_surface_dist(p, r, hl):
    z = np.clip(p[2], -hl, hl)
    return abs(math.hypot(p[0], p[1], p[2] - z) - r)


def cylinder_surface_dist(p, r, hl):
    d = np.array([math.hypot(p[0], p[1]) - r, abs(p[2]) - hl])
    outside = np.linalg.norm(np.maximum(d, 0.0))
    return outside if outside > 0.0 else -float(d.max())


# --- inline fixtures ------------------------------------------------------

ARC_URDF = """
<robot name="arc">
  <link name="palm">
    <collision><geometry><box size="0.04 0.04 0.01"/></geometry></collision>
  </link>
  <link name="elbow">
    <collision>
      <origin xyz="0 0 0.02"/>
      <geometry><capsule radius="0.004" length="0.03"/></geometry>
    </collision>
  </link>
  <link name="arc_tip">
    <collision><geometry><sphere radius="0.004"/></geometry></collision>
  </link>
  <link name="anchor_tip">
    <collision><geometry><sphere radius="0.004"/></geometry></collision>
  </link>
  <joint name="swing" type="revolute">
    <origin xyz="0.02 0 0"/>
    <parent link="palm"/>
    <child link="elbow"/>
    <axis xyz="0 1 0"/>
    <limit lower="-1.0" upper="1.2"/>
  </joint>
  <joint name="wrist" type="fixed">
    <origin xyz="0 0 0.04"/>
    <parent link="elbow"/>
    <child link="arc_tip"/>
  </joint>
  <joint name="anchor" type="fixed">
    <origin xyz="-0.02 0 0"/>
    <parent link="palm"/>
    <child link="anchor_tip"/>
  </joint>
</robot>
"""

MESH_URDF = """
<robot name="meshy">
  <link name="palm">
    <collision><geometry><box size="0.04 0.04 0.01"/></geometry></collision>
  </link>
  <link name="a_tip">
    <collision><geometry>
      <mesh filename="probe.off"/>
    </geometry></collision>
  </link>
  <link name="b_tip">
    <collision><geometry>
      <mesh filename="probe.off" scale="2 1 1"/>
    </geometry></collision>
  </link>
  <joint name="ja" type="fixed">
    <origin xyz="0.03 0 0"/>
    <parent link="palm"/><child link="a_tip"/>
  </joint>
  <joint name="jb" type="fixed">
    <origin xyz="-0.03 0 0"/>
    <parent link="palm"/><child link="b_tip"/>
  </joint>
</robot>
"""


def chain_urdf(n_joints):
    """Palm with one n-joint prismatic finger chain plus a fixed anchor."""
    parts = ['<robot name="chain">',
             '<link name="palm"><collision><geometry>'
             '<box size="0.04 0.04 0.01"/></geometry></collision></link>']
    prev = "palm"
    for i in range(n_joints):
        name = "a_tip" if i == n_joints - 1 else f"seg{i}"
        parts.append(f'<link name="{name}"><collision>'
                     '<origin xyz="0 0 0.005"/><geometry>'
                     '<capsule radius="0.003" length="0.006"/>'
                     "</geometry></collision></link>")
        parts.append(f'<joint name="j{i}" type="prismatic">'
                     '<origin xyz="0 0 0.01"/>'
                     f'<parent link="{prev}"/><child link="{name}"/>'
                     '<axis xyz="0 0 1"/>'
                     '<limit lower="0.0" upper="0.01"/></joint>')
        prev = name
    parts.append('<link name="b_tip"><collision><geometry>'
                 '<sphere radius="0.004"/></geometry></collision></link>')
    parts.append('<joint name="jb" type="fixed">'
                 '<origin xyz="-0.02 0 0"/>'
                 '<parent link="palm"/><child link="b_tip"/></joint>')
    parts.append("</robot>")
    return "".join(parts)


def box_object(seed=0, n_face=250, n_fill=50, half_x=0.015):
    """Box-shaped cloud with graspable faces at x = +-half_x."""
    rng = np.random.default_rng(seed)
    face = rng.uniform(-0.01, 0.01, size=(n_face, 2))
    side = rng.integers(0, 2, n_face) * 2 - 1
    pts = np.column_stack([side * half_x, face[:, 0], face[:, 1]])
    fill = rng.uniform(-1, 1, size=(n_fill, 3)) * [half_x - 0.001, 0.01, 0.01]
    return PointCloud(np.vstack([pts, fill]))


# --- parsing --------------------------------------------------------------

class TestParsing:
    def test_parallel_jaw_golden(self):
        m = load("two_finger.urdf")
        assert m.name == "parallel_jaw"
        assert [l.name for l in m.links] == ["palm", "left_tip", "right_tip"]
        assert m.dof_names == ("left_slide", "right_slide")
        assert np.allclose(m.lower, [0.0, 0.0])
        assert np.allclose(m.upper, [0.03, 0.03])
        assert m.fingertips == ("left_tip", "right_tip")
        assert m.finger_count == 2
        assert [l.finger for l in m.links] == [-1, 0, 1]

        palm = m.links[0]
        assert palm.parent == -1 and palm.joint is None
        (box,) = palm.primitives
        assert box.kind == "box"
        assert np.allclose(box.params, (0.045, 0.02, 0.01))
        assert np.allclose(box.translation, (0.0, 0.0, -0.01))

        left = m.links[1]
        assert left.parent == 0 and left.fingertip
        assert left.joint.type == "prismatic"
        assert np.allclose(left.joint.axis, (-1.0, 0.0, 0.0))
        assert (left.joint.lower, left.joint.upper) == (0.0, 0.03)
        assert np.allclose(left.joint.origin_translation, (-0.008, 0.0, 0.0))
        (cap,) = left.primitives
        assert cap.kind == "capsule"
        assert np.allclose(cap.params, (0.006, 0.019))
        assert np.allclose(cap.translation, (0.0, 0.0, 0.025))

    def test_fixed_joint_collapse(self):
        m = load("three_finger.urdf")
        # crown is welded to base: its cylinder folds into the base link
        assert [l.name for l in m.links] == [
            "base", "finger_a_tip", "finger_b_tip", "finger_c_tip"]
        base = m.links[0]
        assert [p.kind for p in base.primitives] == ["cylinder", "cylinder"]
        folded = base.primitives[1]
        assert np.allclose(folded.translation, (0.0, 0.0, 0.012))
        # bend joints compose the collapsed weld offset into their origins
        bend_a = m.links[1].joint
        assert np.allclose(bend_a.origin_translation, (0.022, 0.0, 0.016))
        assert m.dof_names == ("bend_a", "bend_b", "bend_c")
        assert m.finger_count == 3
        assert sorted(l.finger for l in m.links[1:]) == [0, 1, 2]

    def test_mimic_shares_dof(self):
        m = load("mimic_jaw.urdf")
        assert m.dof_names == ("drive",)
        assert m.dof_count == 1
        follow = next(l for l in m.links if l.name == "follow_tip")
        assert follow.joint.dof == 0
        assert follow.joint.multiplier == 1.0 and follow.joint.offset == 0.0

    def test_mimic_motion_is_mirrored(self):
        m = load("mimic_jaw.urdf")
        for q in (0.0, 0.01, 0.025):
            frames = fingertip_fk(m, JointConfig((q,)), PalmPose.identity())
            drive = next(f for f in frames if f.name == "drive_tip")
            follow = next(f for f in frames if f.name == "follow_tip")
            assert np.allclose(drive.position, (-0.01 - q, 0, 0), atol=1e-12)
            assert np.allclose(follow.position, (0.01 + q, 0, 0), atol=1e-12)

    def test_missing_limit_names_joint(self):
        bad = ARC_URDF.replace(
            '<limit lower="-1.0" upper="1.2"/>', "")
        with pytest.raises(FormatError, match="swing.*missing limit"):
            parse_urdf(bad)

    def test_unknown_joint_type(self):
        bad = ARC_URDF.replace('type="revolute"', 'type="planar"')
        with pytest.raises(FormatError, match="unknown joint type"):
            parse_urdf(bad)

    def test_bad_numeric_attribute(self):
        bad = ARC_URDF.replace('lower="-1.0"', 'lower="wide"')
        with pytest.raises(FormatError, match="swing"):
            parse_urdf(bad)

    def test_inverted_limits(self):
        bad = ARC_URDF.replace('lower="-1.0" upper="1.2"',
                               'lower="1.2" upper="-1.0"')
        with pytest.raises(FormatError, match="bad limits"):
            parse_urdf(bad)

    def test_link_with_two_parents(self):
        extra = ('<joint name="dup" type="fixed">'
                 '<parent link="palm"/><child link="arc_tip"/></joint>'
                 "</robot>")
        with pytest.raises(FormatError, match="two parent"):
            parse_urdf(ARC_URDF.replace("</robot>", extra))

    def test_cycle_is_rejected(self):
        cyc = """
        <robot name="c">
          <link name="palm"/><link name="a"/><link name="b"/>
          <link name="x_tip"/><link name="y_tip"/>
          <joint name="jx" type="fixed">
            <parent link="palm"/><child link="x_tip"/></joint>
          <joint name="jy" type="fixed">
            <parent link="palm"/><child link="y_tip"/></joint>
          <joint name="j1" type="fixed">
            <parent link="a"/><child link="b"/></joint>
          <joint name="j2" type="fixed">
            <parent link="b"/><child link="a"/></joint>
        </robot>
        """
        with pytest.raises(FormatError, match="unreachable"):
            parse_urdf(cyc)

    def test_no_fingertips(self):
        bad = ARC_URDF.replace("arc_tip", "arcend").replace(
            "anchor_tip", "anchorend")
        with pytest.raises(FormatError, match="fingertip"):
            parse_urdf(bad)

    def test_explicit_fingertip_names(self):
        m = parse_urdf(
            ARC_URDF.replace("arc_tip", "arcend").replace(
                "anchor_tip", "anchorend"),
            fingertips=("arcend", "anchorend"))
        assert m.fingertips == ("anchorend", "arcend") or \
            m.fingertips == ("arcend", "anchorend")
        assert m.finger_count == 2

    def test_unknown_geometry(self):
        bad = ARC_URDF.replace('<sphere radius="0.004"/>',
                               '<cone radius="0.004"/>', 1)
        with pytest.raises(FormatError, match="unknown geometry"):
            parse_urdf(bad)

    def test_invalid_xml(self):
        with pytest.raises(FormatError, match="invalid URDF XML"):
            parse_urdf("<robot name='x'>")

    def test_mesh_needs_mesh_dir(self):
        with pytest.raises(FormatError, match="mesh_dir"):
            parse_urdf(MESH_URDF)

    def test_mesh_bounding_capsule(self):
        m = parse_urdf(MESH_URDF, mesh_dir=ASSETS)
        a = next(l for l in m.links if l.name == "a_tip")
        (cap,) = a.primitives
        assert cap.kind == "capsule"
        # the probe mesh is a double pyramid: half-width 0.01, apex 0.05
        assert np.allclose(cap.params, (0.01, 0.04), atol=1e-9)
        assert np.allclose(cap.translation, (0, 0, 0), atol=1e-12)
        axis = cap.rotation @ np.array([0.0, 0.0, 1.0])
        assert np.allclose(np.abs(axis), (1, 0, 0), atol=1e-9)
        # every mesh vertex lies inside (here: exactly on) the capsule
        verts = np.array([[0.05, 0, 0], [-0.05, 0, 0], [0, 0.01, 0],
                          [0, -0.01, 0], [0, 0, 0.01], [0, 0, -0.01]])
        local = (verts - cap.translation) @ cap.rotation
        for p in local:
            assert capsule_surface_dist(p, *cap.params) <= 1e-9

    def test_mesh_scale(self):
        m = parse_urdf(MESH_URDF, mesh_dir=ASSETS)
        b = next(l for l in m.links if l.name == "b_tip")
        (cap,) = b.primitives
        assert np.allclose(cap.params, (0.01, 0.09), atol=1e-9)


# --- serialization round trip ---------------------------------------------

class TestRoundTrip:
    @pytest.mark.parametrize("asset", ["two_finger.urdf",
                                       "three_finger.urdf",
                                       "mimic_jaw.urdf"])
    def test_assets_round_trip(self, asset):
        m = load(asset)
        again = parse_urdf(serialize_urdf(m))
        assert again == m

    def test_round_trip_preserves_mimic(self):
        m = load("mimic_jaw.urdf")
        text = serialize_urdf(m)
        assert "<mimic" in text
        assert parse_urdf(text).dof_names == ("drive",)

    def test_mesh_capsule_survives_round_trip(self):
        m = parse_urdf(MESH_URDF, mesh_dir=ASSETS)
        assert parse_urdf(serialize_urdf(m)) == m


# --- configurations -------------------------------------------------------

class TestConfigs:
    def test_corner_order_two_joints(self):
        m = load("two_finger.urdf")
        cfgs = boundary_and_central_configs(m)
        vals = [c.values for c in cfgs]
        # joint 0 is the least significant bit; central configuration last
        assert vals == [(0.0, 0.0), (0.03, 0.0), (0.0, 0.03), (0.03, 0.03),
                        (0.015, 0.015)]

    def test_single_joint_order(self):
        m = load("mimic_jaw.urdf")
        vals = [c.values for c in boundary_and_central_configs(m)]
        assert vals == [(0.0,), (0.025,), (0.0125,)]

    def test_twelve_joint_count(self):
        m = parse_urdf(chain_urdf(12))
        assert m.dof_count == 12
        assert len(boundary_and_central_configs(m)) == 2 ** 12 + 1

    def test_thirteen_joints_refused(self):
        m = parse_urdf(chain_urdf(13))
        assert m.dof_count == 13
        with pytest.raises(InputError, match="13"):
            boundary_and_central_configs(m)

    def test_zero_joint_model(self):
        m = parse_urdf(MESH_URDF, mesh_dir=ASSETS)
        assert m.dof_count == 0
        cfgs = boundary_and_central_configs(m)
        assert len(cfgs) == 3
        assert all(c.values == () for c in cfgs)

    def test_central_is_midpoint(self):
        m = load("three_finger.urdf")
        # limits are [-0.5, 0.6] on every bend joint
        assert np.allclose(m.central_config().array(), [0.05] * 3,
                           atol=1e-12)

    def test_config_limit_validation(self):
        m = load("two_finger.urdf")
        with pytest.raises(InputError, match="limits"):
            m.config_array(JointConfig((0.0, 0.031)))
        with pytest.raises(InputError, match="values"):
            m.config_array(JointConfig((0.0,)))
        # within the 1e-9 slack is accepted
        q = m.config_array(JointConfig((0.03 + 5e-10, 0.0)))
        assert q.shape == (2,)

    def test_joint_config_rejects_non_finite(self):
        with pytest.raises(InputError, match="finite"):
            JointConfig((0.0, float("nan")))


# --- surface sampling -----------------------------------------------------

class TestSampling:
    def test_exact_count_and_determinism(self):
        m = load("two_finger.urdf")
        cfg = m.central_config()
        a = sample_gripper_cloud(m, cfg, 2048, seed=3)
        b = sample_gripper_cloud(m, cfg, 2048, seed=3)
        assert a.points.shape == (2048, 3)
        assert np.array_equal(a.points, b.points)
        c = sample_gripper_cloud(m, cfg, 2048, seed=4)
        assert not np.array_equal(a.points, c.points)

    def test_points_lie_on_primitive_surfaces(self):
        m = load("two_finger.urdf")
        cloud = sample_gripper_cloud(m, m.central_config(), 1500, seed=7)
        # hand-composed primitive poses at the central configuration
        box_c = np.array([0.0, 0.0, -0.01])
        left_c = np.array([-0.023, 0.0, 0.025])
        right_c = np.array([0.023, 0.0, 0.025])
        for p in cloud.points:
            d = min(
                box_surface_dist(p - box_c, (0.045, 0.02, 0.01)),
                capsule_surface_dist(p - left_c, 0.006, 0.019),
                capsule_surface_dist(p - right_c, 0.006, 0.019),
            )
            assert d <= 1e-6

    def test_area_proportional_apportionment(self):
        m = load("two_finger.urdf")
        cloud = sample_gripper_cloud(m, m.central_config(), 2048, seed=1)
        box_area = 8 * (0.045 * 0.02 + 0.045 * 0.01 + 0.02 * 0.01)
        cap_area = 2 * math.pi * 0.006 * 0.038 + 4 * math.pi * 0.006 ** 2
        total = box_area + 2 * cap_area
        box_c = np.array([0.0, 0.0, -0.01])
        on_box = sum(
            box_surface_dist(p - box_c, (0.045, 0.02, 0.01)) <= 1e-6
            for p in cloud.points)
        expect = 2048 * box_area / total
        assert abs(on_box - expect) <= 2.0

    def test_joint_motion_moves_points_rigidly(self):
        m = load("two_finger.urdf")
        a = sample_gripper_cloud(m, JointConfig((0.0, 0.0)), 1024, seed=5)
        b = sample_gripper_cloud(m, JointConfig((0.02, 0.005)), 1024, seed=5)
        diff = b.points - a.points
        shifts = {"palm": np.zeros(3),
                  "left": np.array([-0.02, 0.0, 0.0]),
                  "right": np.array([0.005, 0.0, 0.0])}
        counts = dict.fromkeys(shifts, 0)
        for row in diff:
            for name, s in shifts.items():
                if np.allclose(row, s, atol=1e-12):
                    counts[name] += 1
                    break
            else:
                pytest.fail(f"point moved non-rigidly: {row}")
        assert counts["palm"] > 500
        assert counts["left"] > 50 and counts["right"] > 50

    def test_rejects_bad_count(self):
        m = load("two_finger.urdf")
        with pytest.raises(InputError, match="n >= 1"):
            sample_gripper_cloud(m, m.central_config(), 0, seed=0)


# --- fingertip kinematics -------------------------------------------------

class TestFingertipFK:
    def test_parallel_jaw_symmetry(self):
        m = load("two_finger.urdf")
        frames = fingertip_fk(m, m.central_config(), PalmPose.identity())
        left = next(f for f in frames if f.name == "left_tip")
        right = next(f for f in frames if f.name == "right_tip")
        assert np.allclose(left.position, (-0.023, 0, 0), atol=1e-12)
        assert np.allclose(right.position, (0.023, 0, 0), atol=1e-12)
        assert {left.finger, right.finger} == {0, 1}

    def test_revolute_joint_traces_circle(self):
        m = parse_urdf(ARC_URDF)
        assert m.dof_names == ("swing",)
        for q in np.linspace(-1.0, 1.2, 23):
            frames = fingertip_fk(m, JointConfig((q,)), PalmPose.identity())
            tip = next(f for f in frames if f.name == "arc_tip")
            expect = np.array([0.02 + 0.04 * math.sin(q), 0.0,
                               0.04 * math.cos(q)])
            assert np.allclose(tip.position, expect, atol=1e-12)
            ry = np.array([[math.cos(q), 0, math.sin(q)],
                           [0, 1, 0],
                           [-math.sin(q), 0, math.cos(q)]])
            assert np.allclose(tip.rotation, ry, atol=1e-12)

    def test_palm_pose_equivariance(self):
        m = load("three_finger.urdf")
        cfg = JointConfig((0.2, -0.1, 0.45))
        base = fingertip_fk(m, cfg, PalmPose.identity())
        pose = random_pose(21)
        moved = fingertip_fk(m, cfg, pose)
        r, t = pose.matrix()
        for f0, f1 in zip(base, moved):
            assert np.allclose(f1.position, r @ f0.position + t, atol=1e-9)
            assert np.allclose(f1.rotation, r @ f0.rotation, atol=1e-9)

    def test_requires_palm_pose(self):
        m = load("two_finger.urdf")
        with pytest.raises(InputError, match="PalmPose"):
            fingertip_fk(m, m.central_config(), np.eye(4))


# --- palm pose algebra ----------------------------------------------------

class TestPalmPose:
    def test_identity(self):
        p = PalmPose.identity()
        pts = np.array([[0.1, -0.2, 0.3]])
        assert np.allclose(p.apply(pts), pts)

    def test_rejects_unnormalized_quaternion(self):
        with pytest.raises(InputError, match="not normalized"):
            PalmPose(np.array([1.0, 1.0, 0.0, 0.0]), np.zeros(3))

    def test_rejects_bad_matrix(self):
        with pytest.raises(InputError, match="orthonormal"):
            PalmPose.from_matrix(np.eye(3) * 2.0, np.zeros(3))

    def test_matrix_round_trip(self):
        p = random_pose(3)
        r, t = p.matrix()
        again = PalmPose.from_matrix(r, t)
        r2, t2 = again.matrix()
        assert np.allclose(r, r2, atol=1e-12) and np.allclose(t, t2)

    def test_compose_matches_matrix_product(self):
        a, b = random_pose(1), random_pose(2)
        ra, ta = a.matrix()
        rb, tb = b.matrix()
        rc, tc = a.compose(b).matrix()
        assert np.allclose(rc, ra @ rb, atol=1e-12)
        assert np.allclose(tc, ra @ tb + ta, atol=1e-12)
        pts = np.random.default_rng(0).normal(size=(5, 3))
        assert np.allclose(a.compose(b).apply(pts), a.apply(b.apply(pts)),
                           atol=1e-12)


# --- collision ------------------------------------------------------------

class TestCollision:
    def setup_method(self):
        self.m = load("two_finger.urdf")
        self.cfg = self.m.central_config()
        self.eye = PalmPose.identity()

    def check(self, pts, **kw):
        return collision_check(self.m, self.cfg, self.eye,
                               PointCloud(np.atleast_2d(pts)), **kw)

    def test_far_point_is_free(self):
        assert self.check([1.0, 0.0, 0.0]) is False

    def test_point_inside_palm_collides(self):
        assert self.check([0.0, 0.0, -0.01]) is True

    def test_clearance_shell(self):
        # 1.5 mm off the palm face: inside the default 2 mm clearance
        p = [0.0, 0.0215, -0.01]
        assert self.check(p) is True
        assert self.check(p, clearance=0.001) is False

    def test_target_patch_exempts_near_points(self):
        p = [0.0, 0.0215, -0.01]
        targets = np.array([p, [0.2, 0.2, 0.2]])
        assert self.check(p, fingertip_targets=targets) is False

    def test_fingertips_are_never_collision_sources(self):
        # a point on the left fingertip capsule surface, far from the palm
        p = [-0.017, 0.0, 0.025]
        assert self.check(p) is False
        targets = np.array([[0.2, 0.2, 0.2], [-0.2, -0.2, -0.2]])
        assert self.check(p, fingertip_targets=targets) is False

    def test_palm_pose_moves_the_gripper(self):
        pose = PalmPose(np.array([1.0, 0.0, 0.0, 0.0]),
                        np.array([0.5, 0.0, 0.0]))
        inside_moved = [0.5, 0.0, -0.01]
        assert collision_check(self.m, self.cfg, pose,
                               PointCloud(np.atleast_2d(inside_moved)))
        assert not collision_check(self.m, self.cfg, pose,
                                   PointCloud(np.zeros((1, 3))))

    def test_input_validation(self):
        with pytest.raises(InputError, match="PointCloud"):
            collision_check(self.m, self.cfg, self.eye, np.zeros((4, 3)))
        with pytest.raises(InputError, match="target per finger"):
            self.check([1.0, 0.0, 0.0],
                       fingertip_targets=np.zeros((3, 3)))


# --- reach solving --------------------------------------------------------

class TestReach:
    def setup_method(self):
        self.m = load("two_finger.urdf")

    def test_pinch_succeeds(self):
        obj = box_object()
        targets = np.array([[-0.015, 0.0, 0.0], [0.015, 0.0, 0.0]])
        normals = np.array([[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]])
        res = solve_reach(self.m, targets, normals, obj)
        assert res.status == "success" and res.success
        assert res.max_error <= REACH_TOL
        assert res.palm is not None and res.config is not None
        # re-evaluating the returned pose reproduces the claimed contact
        contacts = fingertip_contacts(self.m, res.config, res.palm, targets)
        err = np.linalg.norm(contacts - targets, axis=1).max()
        assert abs(err - res.max_error) <= 1e-9
        assert not collision_check(self.m, res.config, res.palm, obj,
                                   fingertip_targets=targets)

    def test_first_success_mode(self):
        obj = box_object()
        targets = np.array([[-0.015, 0.0, 0.0], [0.015, 0.0, 0.0]])
        normals = np.array([[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]])
        res = solve_reach(self.m, targets, normals, obj, first_success=True)
        assert res.success and res.max_error <= REACH_TOL

    def test_too_wide_is_unreachable(self):
        obj = box_object()
        targets = np.array([[-0.05, 0.0, 0.0], [0.05, 0.0, 0.0]])
        normals = np.array([[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]])
        res = solve_reach(self.m, targets, normals, obj)
        assert res.status == "unreachable"
        assert res.palm is None and res.config is None
        assert math.isinf(res.max_error)

    def test_enclosed_targets_report_collision(self):
        # targets inside a closed shell: fingertips can converge but every
        # palm placement leaves the palm box crossing the wall
        rng = np.random.default_rng(3)
        v = rng.normal(size=(2500, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        obj = PointCloud(0.055 * v)
        targets = np.array([[-0.012, 0.0, 0.0], [0.012, 0.0, 0.0]])
        normals = np.array([[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]])
        res = solve_reach(self.m, targets, normals, obj)
        assert res.status == "collision"

    def test_input_validation(self):
        obj = box_object()
        t2 = np.array([[-0.01, 0, 0], [0.01, 0, 0]])
        n2 = np.array([[1.0, 0, 0], [-1.0, 0, 0]])
        with pytest.raises(InputError, match="targets"):
            solve_reach(self.m, np.zeros((3, 3)), n2, obj)
        with pytest.raises(InputError, match="unit"):
            solve_reach(self.m, t2, 2.0 * n2, obj)
        with pytest.raises(InputError, match="distinct"):
            solve_reach(self.m, np.zeros((2, 3)), n2, obj)
        with pytest.raises(InputError, match="PointCloud"):
            solve_reach(self.m, t2, n2, [[0, 0, 0]])


# --- random gripper generation --------------------------------------------

class TestGenerate:
    def test_deterministic_per_seed(self):
        assert generate_random_gripper(11) == generate_random_gripper(11)
        assert not (generate_random_gripper(11) == generate_random_gripper(12))

    def test_ranges_over_seeds(self):
        fingers, dofs = set(), set()
        for seed in range(40):
            m = generate_random_gripper(seed)
            fingers.add(m.finger_count)
            dofs.add(m.dof_count)
            assert 0.10 - 1e-9 <= m.diameter() <= 0.30 + 1e-9
            assert 1 <= m.dof_count <= 12
        assert fingers == {2, 3}
        assert len(dofs) >= 5

    @pytest.mark.parametrize("seed", range(8))
    def test_round_trip(self, seed):
        m = generate_random_gripper(seed)
        assert parse_urdf(serialize_urdf(m)) == m

    def test_generated_model_is_usable(self):
        m = generate_random_gripper(4)
        cloud = sample_gripper_cloud(m, m.central_config(), 256, seed=0)
        assert cloud.points.shape == (256, 3)
        frames = fingertip_fk(m, m.central_config(), PalmPose.identity())
        assert len(frames) == len(m.fingertips)
