"""Staged point-set selection: ranked contact tuples for a gripper.

An object cloud is encoded by a simplified single-level set abstraction
(farthest-point centroids, ball-query max-pool, nearest-centroid feature
propagation), fused with the pooled gripper feature, and fed through up to
three beam-search stages.  Stage one scores single points, stage two
scores (point, point) pairs built by pairwise concatenation, stage three
extends surviving pairs with a third point.  Each stage keeps its top-K
candidates by score with stable ascending-index tie-breaking.

Training is stage-wise: earlier stages stay frozen, beam elements are
labeled positive when their tuple can be extended to (or, at the final
stage, matched against) a ground-truth valid set within MATCH_TOL, and the
listwise softmax cross-entropy of the beam is minimized (stage one adds a
normal-alignment term for the per-point normal head).  The geometric
pair/triplet rejection rules are applied as score masks at inference only;
zero-length predicted normals fail them conservatively.
"""

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import filters, kernels, neural
from .embedding import GripperFeature, gripper_feature
from .errors import ConfigError, FormatError, IndeterminateError, InputError
from .geometry import PointCloud

__all__ = [
    "MATCH_TOL",
    "PAPER_PSSN",
    "PSSN",
    "PSSNConfig",
    "PSSNSample",
    "FusedFeatures",
    "GraspPrediction",
    "ObjectEncoding",
    "StageBeam",
    "StageTrainMetrics",
    "fuse",
    "label_beam",
    "load_pssn",
    "object_features",
    "predict",
    "prediction_records",
    "read_predictions",
    "save_pssn",
    "stage_one",
    "stage_three",
    "stage_two",
    "train_stage",
    "write_predictions",
]

# A predicted or selected contact matches a ground-truth one when they lie
# within this distance (meters).
MATCH_TOL = 0.005

STAGE_COUNT = 3

_NORMAL_EPS = 1e-12


# ---------------------------------------------------------------------------
# configuration

@dataclass(frozen=True)
class PSSNConfig:
    """Network dimensions; defaults are the desk-scale profile."""

    points: int = 256
    c: int = 64
    feature_size: int = 192
    k1: int = 64
    k2: int = 64
    k3: int = 64
    k4: int = 64
    output_size: int = 32
    abstraction_ratio: int = 4
    ball_radius_scale: float = 0.1

    def __post_init__(self):
        for name in ("points", "c", "feature_size", "k1", "k2", "k3", "k4",
                     "output_size", "abstraction_ratio"):
            value = getattr(self, name)
            if not (isinstance(value, int) and value > 0):
                raise ConfigError(f"{name} must be a positive int, got {value}")
        if self.c % 2:
            raise ConfigError(f"c must be even, got {self.c}")
        if self.k1 > self.points or self.k2 > self.points:
            raise ConfigError(
                f"k1={self.k1} and k2={self.k2} cannot exceed the cloud "
                f"size {self.points}")
        scale = float(self.ball_radius_scale)
        if not (math.isfinite(scale) and scale > 0.0):
            raise ConfigError(
                f"ball_radius_scale must be positive, got {scale}")
        object.__setattr__(self, "ball_radius_scale", scale)

    def meta(self):
        return {
            "points": self.points,
            "c": self.c,
            "feature_size": self.feature_size,
            "k1": self.k1,
            "k2": self.k2,
            "k3": self.k3,
            "k4": self.k4,
            "output_size": self.output_size,
            "abstraction_ratio": self.abstraction_ratio,
            "ball_radius_scale": self.ball_radius_scale,
            "stages": STAGE_COUNT,
        }

    @staticmethod
    def from_meta(meta):
        try:
            return PSSNConfig(
                points=int(meta["points"]), c=int(meta["c"]),
                feature_size=int(meta["feature_size"]),
                k1=int(meta["k1"]), k2=int(meta["k2"]),
                k3=int(meta["k3"]), k4=int(meta["k4"]),
                output_size=int(meta["output_size"]),
                abstraction_ratio=int(meta["abstraction_ratio"]),
                ball_radius_scale=float(meta["ball_radius_scale"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"bad selector metadata: {exc}") from exc


PAPER_PSSN = PSSNConfig(points=2048, c=64, feature_size=768, k1=1024,
                        k2=1024, k3=1024, k4=1024, output_size=256)


def _group_specs(config):
    """LayerSpec chains for every named weight group, in a fixed order.

    Set-axis normalization follows each hidden linear so activations stay at
    unit scale whatever the physical units of the inputs; without it the
    beam softmax over desk-scale features is flat and listwise training
    stalls.  The fusion layer is deliberately left unnormalized: the gripper
    feature enters as a per-channel constant across rows and set-norm would
    subtract it back out.  Its ReLU is what lets that constant shift change
    the relative scores.
    """
    c = config.c
    pw = lambda a, b: neural.LayerSpec("pointwise-linear", a, b)
    rl = lambda w: neural.LayerSpec("relu", w, w)
    sn = lambda w: neural.LayerSpec("set-norm", w, w)
    return {
        "trunk_pre": [pw(3, c // 2), sn(c // 2), rl(c // 2),
                      pw(c // 2, c), sn(c), rl(c)],
        "trunk_post": [pw(2 * c, c), sn(c), rl(c)],
        "normal_head": [pw(c, 3)],
        "fuse": [pw(c + config.feature_size, c), rl(c)],
        "score1": [pw(c, 1)],
        "score2": [pw(c, 1)],
        "pair": [pw(2 * c, c), sn(c), rl(c)],
        "score_pair": [pw(c, 1)],
        "triple": [pw(2 * c, c), sn(c), rl(c)],
        "pair_of_pair": [pw(2 * c, c), sn(c), rl(c)],
        "score_triple": [pw(c, 1)],
    }


# Weight groups owned by each stage; groups of stages < n stay frozen while
# stage n trains.  Stage one owns the shared trunk, normal head and fusion.
STAGE_GROUPS = {
    1: ("trunk_pre", "trunk_post", "normal_head", "fuse", "score1"),
    2: ("score2", "pair", "score_pair"),
    3: ("triple", "pair_of_pair", "score_triple"),
}


class PSSN:
    """All selector weights: one small Network per named group."""

    def __init__(self, config, seed):
        if not isinstance(config, PSSNConfig):
            raise InputError("PSSN needs a PSSNConfig")
        self.config = config
        self.nets = {}
        rng = np.random.default_rng(seed)
        for name, specs in _group_specs(config).items():
            self.nets[name] = neural.Network(
                specs, int(rng.integers(0, 2 ** 63 - 1)))

    def parameters(self, stages=None):
        """Flat ``group.layerI.weight`` dict, optionally stage-filtered."""
        if stages is None:
            groups = list(self.nets)
        else:
            groups = [g for n in stages for g in STAGE_GROUPS[n]]
        out = {}
        for group in groups:
            for name, p in self.nets[group].params.items():
                out[f"{group}.{name}"] = p
        return out

    def zero_grad(self):
        for net in self.nets.values():
            net.zero_grad()


# ---------------------------------------------------------------------------
# domain types

@dataclass(frozen=True)
class ObjectEncoding:
    """Per-point features and raw normal predictions for one cloud."""

    features: neural.Tensor
    normals: neural.Tensor
    cloud: PointCloud

    def unit_normals(self):
        """Row-normalized predicted normals; zero rows stay zero."""
        raw = self.normals.data
        norms = np.linalg.norm(raw, axis=1, keepdims=True)
        return np.where(norms > _NORMAL_EPS, raw / np.maximum(norms, 1.0e-300),
                        0.0)


@dataclass(frozen=True)
class FusedFeatures:
    """Gripper-conditioned per-point features F0 plus the source cloud."""

    f0: neural.Tensor
    cloud: PointCloud

    def __post_init__(self):
        if self.f0.data.ndim != 2 or self.f0.data.shape[0] != len(self.cloud):
            raise InputError(
                f"fused features must have one row per cloud point, got "
                f"{self.f0.data.shape} for {len(self.cloud)} points")


@dataclass(frozen=True)
class StageBeam:
    """Top candidates of one stage: index tuples, scores, features.

    tuples index the original cloud; scores are softmax probabilities in
    non-increasing order; features holds one fused feature row per tuple
    and logits the pre-softmax scores (kept on the tape for training).
    """

    stage: int
    tuples: tuple
    scores: np.ndarray
    features: neural.Tensor
    capacity: int
    logits: neural.Tensor

    def __post_init__(self):
        scores = np.ascontiguousarray(self.scores, dtype=np.float64)
        tuples = tuple(tuple(int(i) for i in t) for t in self.tuples)
        if not tuples:
            raise InputError("a beam cannot be empty")
        if len(tuples) > self.capacity:
            raise InputError(
                f"beam holds {len(tuples)} tuples, capacity {self.capacity}")
        if len(set(tuples)) != len(tuples):
            raise InputError("beam tuples must be distinct")
        if any(len(t) != self.stage for t in tuples):
            raise InputError(f"stage-{self.stage} tuples must have length "
                             f"{self.stage}")
        if any(len(set(t)) != len(t) for t in tuples):
            raise InputError("tuple members must be distinct")
        if scores.shape != (len(tuples),) or (np.diff(scores) > 0.0).any():
            raise InputError("scores must align with tuples, non-increasing")
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "tuples", tuples)

    def __len__(self):
        return len(self.tuples)


@dataclass(frozen=True)
class GraspPrediction:
    """Ranked contact tuples plus the predicted per-point normals."""

    tuples: tuple
    positions: np.ndarray
    scores: np.ndarray
    normals: np.ndarray

    def __post_init__(self):
        tuples = tuple(tuple(int(i) for i in t) for t in self.tuples)
        pos = np.ascontiguousarray(self.positions, dtype=np.float64)
        scores = np.ascontiguousarray(self.scores, dtype=np.float64)
        normals = np.ascontiguousarray(self.normals, dtype=np.float64)
        if not tuples:
            raise InputError("prediction needs at least one tuple")
        arity = len(tuples[0])
        if any(len(t) != arity for t in tuples):
            raise InputError("prediction tuples must share one arity")
        if len(set(tuples)) != len(tuples):
            raise InputError("prediction tuples must be distinct")
        if pos.shape != (len(tuples), arity, 3):
            raise InputError(f"positions must be (tuples, {arity}, 3)")
        if scores.shape != (len(tuples),) or (np.diff(scores) > 0.0).any():
            raise InputError("scores must align with tuples, non-increasing")
        if normals.ndim != 2 or normals.shape[1] != 3:
            raise InputError("normals must be (L, 3)")
        object.__setattr__(self, "tuples", tuples)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "normals", normals)

    def __len__(self):
        return len(self.tuples)


@dataclass(frozen=True)
class PSSNSample:
    """One training sample: a cloud, its gripper feature, its valid sets.

    The cloud's own normals (where valid) supervise the normal head during
    stage-one training; valid_sets are index tuples of ground-truth
    force-closure grasps for this cloud/gripper combination.
    """

    cloud: PointCloud
    feature: GripperFeature
    valid_sets: tuple

    def __post_init__(self):
        sets = tuple(tuple(int(i) for i in v) for v in self.valid_sets)
        count = len(self.cloud)
        for v in sets:
            if len(v) not in (2, 3):
                raise InputError(f"valid sets have 2 or 3 members, got {v}")
            if len(set(v)) != len(v):
                raise InputError(f"valid set members must be distinct: {v}")
            if any(not 0 <= i < count for i in v):
                raise InputError(f"valid set index out of range: {v}")
        object.__setattr__(self, "valid_sets", sets)


@dataclass(frozen=True)
class StageTrainMetrics:
    """Per-epoch mean loss plus the zero-positive sample tally."""

    stage: int
    curve: tuple
    zero_positive_samples: int


# ---------------------------------------------------------------------------
# forward passes

def object_features(net, cloud):
    """Per-point features (L, c) and raw normal predictions (L, 3).

    Coordinates are centered on the cloud mean, so translated copies of a
    cloud encode identically (up to roundoff).  Farthest-point centroids
    use geometric tie-breaking, making the whole encoding permutation
    equivariant.
    """
    config = net.config
    if not isinstance(cloud, PointCloud):
        raise InputError("object_features expects a PointCloud")
    if len(cloud) != config.points:
        raise InputError(
            f"encoder expects {config.points} points, got {len(cloud)}")
    centered = cloud.points - cloud.points.mean(axis=0)
    count = centered.shape[0]
    m = max(1, count // config.abstraction_ratio)
    cidx = kernels.fps_indices_geometric(centered, m)

    gram = np.einsum("ij,ij->i", centered, centered)
    d2 = gram[:, None] + gram[cidx][None, :] - 2.0 * (centered @ centered[cidx].T)
    np.maximum(d2, 0.0, out=d2)
    radius2 = (config.ball_radius_scale * _cloud_diameter(centered)) ** 2

    h = neural.forward(net.nets["trunk_pre"], neural.Tensor(centered))
    groups = [np.nonzero(d2[:, g] <= radius2)[0] for g in range(m)]
    centroid_feats = neural.group_max(h, groups)
    nearest = np.argmin(d2, axis=1)
    propagated = neural.gather_rows(centroid_feats, nearest)
    feats = neural.forward(net.nets["trunk_post"],
                           neural.concat([h, propagated], axis=-1))
    normals = neural.forward(net.nets["normal_head"], feats)
    return ObjectEncoding(feats, normals, cloud)


def _cloud_diameter(points):
    """Largest pairwise distance in the cloud."""
    gram = np.einsum("ij,ij->i", points, points)
    d2 = gram[:, None] + gram[None, :] - 2.0 * (points @ points.T)
    return math.sqrt(max(float(d2.max()), 0.0))


def fuse(net, encoding, feature):
    """Tile the gripper feature onto every row and mix down to c channels."""
    if not isinstance(encoding, ObjectEncoding):
        raise InputError("fuse expects an ObjectEncoding")
    if not isinstance(feature, GripperFeature):
        raise InputError("fuse expects a GripperFeature")
    config = net.config
    if feature.vector.shape[0] != config.feature_size:
        raise InputError(
            f"gripper feature has size {feature.vector.shape[0]}, selector "
            f"expects {config.feature_size}")
    count = encoding.features.data.shape[0]
    tiled = neural.Tensor(np.tile(feature.vector, (count, 1)))
    f0 = neural.forward(net.nets["fuse"],
                        neural.concat([encoding.features, tiled], axis=-1))
    return FusedFeatures(f0, encoding.cloud)


def _softmax_np(logits):
    shifted = logits - logits.max()
    e = np.exp(shifted)
    return e / e.sum()


def _descending(values):
    """Indices by descending value; ties keep ascending index order."""
    return np.argsort(-values, kind="stable")


def _point_scores(net, head, fused):
    """Per-point logits (L,) from one pointwise scoring head."""
    count = fused.f0.data.shape[0]
    return neural.reshape(
        neural.forward(net.nets[head], fused.f0), (count,))


def _point_beam(net, head, fused, k, capacity_name):
    """Top-k single points under ``head`` with softmax probabilities."""
    count = fused.f0.data.shape[0]
    if not 1 <= k <= count:
        raise InputError(f"{capacity_name} must be in [1, {count}], got {k}")
    logits = _point_scores(net, head, fused)
    probs = _softmax_np(logits.data)
    order = _descending(logits.data)[:k]
    return StageBeam(
        stage=1,
        tuples=tuple((int(i),) for i in order),
        scores=probs[order],
        features=neural.gather_rows(fused.f0, order),
        capacity=k,
        logits=neural.gather_rows(logits, order),
    )


def stage_one(net, fused, k1):
    """Top-k1 single points by the stage-one scoring head."""
    return _point_beam(net, "score1", fused, k1, "k1")


def _mask_and_select(logits, valid, capacity, what):
    """Top ``capacity`` flat positions among the valid ones, by logit."""
    masked = np.where(valid, logits, -np.inf)
    available = int(valid.sum())
    if available == 0:
        raise InputError(f"{what}: every candidate was masked; empty beam")
    order = _descending(masked)[:min(capacity, available)]
    return order, _softmax_np(masked)


def stage_two_selection(net, fused, k2):
    """Top-k2 single points under the fresh stage-two scoring head.

    Stage two pairs these with the stage-one beam; during training this
    beam carries its own listwise term, since the discrete top-k2 cut
    otherwise leaves the fresh head without a gradient path.
    """
    return _point_beam(net, "score2", fused, k2, "k2")


def stage_two(net, fused, beam1, k2, k3, filter_normals=None, selection=None):
    """Top-k3 (i, j) pairs: i from a fresh top-k2 head, j from beam1.

    Candidates with i == j are never produced; when ``filter_normals`` is
    given (inference), pairs whose predicted normals fail the geometric
    pair rule are masked out before ranking.  ``selection`` may supply a
    precomputed ``stage_two_selection`` beam to share its tape.
    """
    if beam1.stage != 1:
        raise InputError("stage_two needs a stage-1 beam")
    count = fused.f0.data.shape[0]
    if k3 < 1:
        raise InputError(f"k3 must be positive, got {k3}")
    if selection is None:
        selection = stage_two_selection(net, fused, k2)
    s2 = np.array([t[0] for t in selection.tuples], dtype=np.int64)
    s1 = np.array([t[0] for t in beam1.tuples], dtype=np.int64)

    pair_map = neural.pairwise_concat(selection.features, beam1.features)
    pair_feats = neural.forward(net.nets["pair"], pair_map)
    flat_feats = neural.reshape(pair_feats, (len(s2) * len(s1), net.config.c))
    logits = neural.reshape(
        neural.forward(net.nets["score_pair"], pair_feats),
        (len(s2) * len(s1),))

    valid = (s2[:, None] != s1[None, :])
    if filter_normals is not None:
        n = _checked_unit_normals(filter_normals, count)
        usable = np.einsum("ij,ij->i", n, n) > 0.5  # zero rows fail
        dots = n[s2] @ n[s1].T
        valid &= (dots < -0.5) & usable[s2][:, None] & usable[s1][None, :]
    sel, probs = _mask_and_select(logits.data, valid.reshape(-1), k3,
                                  "stage two")
    return StageBeam(
        stage=2,
        tuples=tuple((int(s2[p // len(s1)]), int(s1[p % len(s1)]))
                     for p in sel),
        scores=probs[sel],
        features=neural.gather_rows(flat_feats, sel),
        capacity=k3,
        logits=neural.gather_rows(logits, sel),
    )


def stage_three(net, fused, beam1, beam2, k4, filter_normals=None):
    """Top-k4 triples: a beam2 pair extended with a third beam1 point."""
    if beam1.stage != 1 or beam2.stage != 2:
        raise InputError("stage_three needs a stage-1 and a stage-2 beam")
    if k4 < 1:
        raise InputError(f"k4 must be positive, got {k4}")
    count = fused.f0.data.shape[0]
    members = np.array(beam2.tuples, dtype=np.int64)
    s1 = np.array([t[0] for t in beam1.tuples], dtype=np.int64)

    pair_feats = neural.forward(
        net.nets["triple"],
        neural.concat([neural.gather_rows(fused.f0, members[:, 0]),
                       neural.gather_rows(fused.f0, members[:, 1])],
                      axis=-1))
    triple_map = neural.pairwise_concat(pair_feats, beam1.features)
    triple_feats = neural.forward(net.nets["pair_of_pair"], triple_map)
    flat_feats = neural.reshape(
        triple_feats, (len(members) * len(s1), net.config.c))
    logits = neural.reshape(
        neural.forward(net.nets["score_triple"], triple_feats),
        (len(members) * len(s1),))

    valid = (s1[None, :] != members[:, 0:1]) & (s1[None, :] != members[:, 1:2])
    if filter_normals is not None:
        n = _checked_unit_normals(filter_normals, count)
        usable = np.einsum("ij,ij->i", n, n) > 0.5
        pressing = -n
        pos = fused.cloud.points
        for u in range(len(members)):
            i, j = members[u]
            if not (usable[i] and usable[j]):
                valid[u, :] = False
                continue
            for v in range(len(s1)):
                if not valid[u, v]:
                    continue
                w = s1[v]
                if not usable[w] or not kernels.triplet_ok(
                        pos[i], pos[j], pos[w], pressing[i], pressing[j],
                        pressing[w], filters.DEFAULT_MIN_SIDE):
                    valid[u, v] = False
    sel, probs = _mask_and_select(logits.data, valid.reshape(-1), k4,
                                  "stage three")
    width = len(s1)
    return StageBeam(
        stage=3,
        tuples=tuple((int(members[p // width, 0]), int(members[p // width, 1]),
                      int(s1[p % width])) for p in sel),
        scores=probs[sel],
        features=neural.gather_rows(flat_feats, sel),
        capacity=k4,
        logits=neural.gather_rows(logits, sel),
    )


def _checked_unit_normals(normals, count):
    arr = np.ascontiguousarray(normals, dtype=np.float64)
    if arr.shape != (count, 3):
        raise InputError(
            f"filter normals must be ({count}, 3), got {arr.shape}")
    norms = np.linalg.norm(arr, axis=1, keepdims=True)
    return np.where(norms > _NORMAL_EPS, arr / np.maximum(norms, 1.0e-300),
                    0.0)


# ---------------------------------------------------------------------------
# labels and training

def _injective_match(tuple_pos, set_pos, tol):
    """True when each tuple point matches a distinct set point within tol."""
    n, big = tuple_pos.shape[0], set_pos.shape[0]
    if n > big:
        return False
    d = np.linalg.norm(tuple_pos[:, None, :] - set_pos[None, :, :], axis=2)
    return any(
        all(d[a, p] <= tol for a, p in enumerate(perm))
        for perm in itertools.permutations(range(big), n))


def label_beam(beam, cloud, valid_sets, tol=MATCH_TOL):
    """Binary label per beam tuple: 1 iff it matches into some valid set.

    A stage-n tuple is positive when its points map injectively onto
    distinct members of one valid set, each within ``tol`` — equality for
    full-arity tuples, prefix semantics for partial ones.
    """
    pos = cloud.points
    set_positions = [pos[list(v)] for v in valid_sets]
    labels = np.zeros(len(beam.tuples))
    for bi, t in enumerate(beam.tuples):
        tuple_pos = pos[list(t)]
        if any(_injective_match(tuple_pos, sp, tol) for sp in set_positions):
            labels[bi] = 1.0
    return labels


def _stage_forward(net, sample, stage):
    """Beams up to ``stage`` for one sample, unmasked (training path).

    Returns (encoding, beams, selection) where ``selection`` is the
    stage-two point-selection beam (None below stage two).
    """
    config = net.config
    encoding = object_features(net, sample.cloud)
    fused = fuse(net, encoding, sample.feature)
    beams = [stage_one(net, fused, config.k1)]
    selection = None
    if stage >= 2:
        selection = stage_two_selection(net, fused, config.k2)
        beams.append(stage_two(net, fused, beams[0], config.k2, config.k3,
                               selection=selection))
    if stage >= 3:
        beams.append(stage_three(net, fused, beams[0], beams[1], config.k4))
    return encoding, beams, selection


def _truth_normals(cloud):
    """Unit ground-truth normals with invalid rows zeroed (= skipped)."""
    if cloud.normals is None:
        return np.zeros((len(cloud), 3))
    truth = np.where(cloud.normals_valid[:, None], cloud.normals, 0.0)
    norms = np.linalg.norm(truth, axis=1, keepdims=True)
    return np.where(norms > _NORMAL_EPS, truth / np.maximum(norms, 1.0e-300),
                    0.0)


def train_stage(samples, stage, net, epochs, seed, learning_rate=neural.ADAM_LR,
                dump_path=None):
    """Train one stage's weight groups; everything earlier stays frozen.

    Beam elements are labeled by ``label_beam``; the listwise loss runs on
    the beam logits, plus the normal-alignment loss during stage one.
    Samples whose beam has no positive label contribute no selection
    gradient and are tallied in the metrics.  Mutates ``net`` in place and
    returns per-epoch mean losses.
    """
    samples = list(samples)
    if not samples:
        raise InputError("train_stage needs at least one sample")
    if stage not in STAGE_GROUPS:
        raise InputError(f"stage must be 1..{STAGE_COUNT}, got {stage}")
    if not (isinstance(epochs, int) and epochs >= 1):
        raise InputError(f"epochs must be a positive int, got {epochs}")
    for sample in samples:
        if not isinstance(sample, PSSNSample):
            raise InputError("train_stage needs PSSNSample entries")
        if len(sample.cloud) != net.config.points:
            raise InputError(
                f"sample cloud has {len(sample.cloud)} points, selector "
                f"expects {net.config.points}")
    rng = np.random.default_rng(seed)
    trained = net.parameters(stages=(stage,))
    state = neural.AdamState(trained, lr=learning_rate)

    def diverged(epoch, step, value):
        where = f"epoch {epoch} step {step}: loss {value!r}"
        if dump_path is not None:
            meta = dict(net.config.meta(), stage=stage, epoch=epoch,
                        step=step, loss=repr(value))
            neural.save_checkpoint(dump_path, net.parameters(), meta)
            where += f"; parameters dumped to {dump_path}"
        raise IndeterminateError(f"stage-{stage} training diverged at {where}")

    zero_positive = 0
    curve = []
    for epoch in range(1, epochs + 1):
        running = 0.0
        for step, si in enumerate(rng.permutation(len(samples))):
            sample = samples[int(si)]
            net.zero_grad()
            encoding, beams, selection = _stage_forward(net, sample, stage)
            beam = beams[stage - 1]
            labels = label_beam(beam, sample.cloud, sample.valid_sets)
            if not labels.any():
                zero_positive += 1
            loss = neural.listnet_loss(beam.logits, labels)
            if stage == 1:
                normal_loss, _skipped = neural.normal_alignment_loss(
                    encoding.normals, _truth_normals(sample.cloud))
                loss = neural.add(loss, normal_loss)
            elif stage == 2:
                # The discrete top-k2 cut gives the fresh selection head no
                # gradient through the pair scores; its own listwise term
                # (prefix labels on single points) trains it instead.
                sel_labels = label_beam(selection, sample.cloud,
                                        sample.valid_sets)
                loss = neural.add(loss, neural.listnet_loss(
                    selection.logits, sel_labels))
                if not (labels.any() or sel_labels.any()):
                    continue
            elif not labels.any():
                continue
            value = float(loss.data)
            if not math.isfinite(value):
                diverged(epoch, step, value)
            neural.backward(loss)
            grads = {name: p.grad for name, p in trained.items()}
            missing = [name for name, g in grads.items() if g is None]
            if missing:
                raise IndeterminateError(
                    f"stage-{stage} loss reached no gradient for {missing}")
            neural.adam_step(state, grads)
            running += value
        curve.append((epoch, running / len(samples)))
    return StageTrainMetrics(stage, tuple(curve), zero_positive)


# ---------------------------------------------------------------------------
# prediction

def predict(cloud, model, encoder, embed_config, net, output_size=None,
            apply_filters=True):
    """Ranked contact tuples for one cloud under one gripper.

    Runs the pooled gripper feature, fusion and stages 1..N where N is the
    gripper's finger count; returns the top ``output_size`` tuples (the
    configured default when None) with scores and the predicted unit
    normals.  With ``apply_filters`` the geometric pair/triplet rules mask
    candidates before ranking.
    """
    if model.finger_count not in (2, 3):
        raise InputError("gripper must have 2 or 3 fingers")
    if output_size is None:
        output_size = net.config.output_size
    if not (isinstance(output_size, int) and output_size >= 1):
        raise InputError(f"output_size must be positive, got {output_size}")
    feature = gripper_feature(model, encoder, embed_config)
    encoding = object_features(net, cloud)
    unit = encoding.unit_normals()
    fused = fuse(net, encoding, feature)
    masks = unit if apply_filters else None
    beam1 = stage_one(net, fused, net.config.k1)
    beam = stage_two(net, fused, beam1, net.config.k2, net.config.k3, masks)
    if model.finger_count == 3:
        beam = stage_three(net, fused, beam1, beam, net.config.k4, masks)
    keep = min(output_size, len(beam))
    tuples = beam.tuples[:keep]
    positions = np.stack([cloud.points[list(t)] for t in tuples])
    return GraspPrediction(tuples, positions, beam.scores[:keep], unit)


def prediction_records(object_id, gripper_id, prediction):
    """JSON-friendly rows, rank starting at 1."""
    return [
        {"object_id": object_id, "gripper_id": gripper_id, "rank": rank + 1,
         "indices": list(t), "score": float(score)}
        for rank, (t, score) in enumerate(
            zip(prediction.tuples, prediction.scores))]


def write_predictions(path, records):
    """One JSON object per line."""
    with open(path, "w") as fh:
        for record in records:
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def read_predictions(path):
    """Parse prediction JSONL; every row must carry the standard keys."""
    records = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: bad JSON: {exc}") from exc
            missing = {"object_id", "gripper_id", "rank", "indices",
                       "score"} - set(record)
            if missing:
                raise FormatError(
                    f"{path}:{lineno}: missing keys {sorted(missing)}")
            records.append(record)
    return records


# ---------------------------------------------------------------------------
# persistence

def save_pssn(path, net):
    """GFNN checkpoint of all weight groups plus the config manifest."""
    neural.save_checkpoint(path, net.parameters(), net.config.meta())


def load_pssn(path):
    """Rebuild a PSSN from a checkpoint written by ``save_pssn``."""
    params, meta = neural.load_checkpoint(path)
    config = PSSNConfig.from_meta(meta)
    net = PSSN(config, seed=0)
    expected = net.parameters()
    if set(params) != set(expected):
        raise FormatError("checkpoint parameters do not match the selector "
                          "architecture in its metadata")
    for group, network in net.nets.items():
        prefix = f"{group}."
        network.load_state({name[len(prefix):]: value
                            for name, value in params.items()
                            if name.startswith(prefix)})
    return net
