"""Gripper shape autoencoder and the pooled per-gripper feature.

A shared pointwise MLP, max-pooled over the point axis, compresses a
fixed-size gripper surface cloud into a k-vector; a small fully connected
decoder reconstructs the cloud, and training minimizes the symmetric mean
squared Chamfer distance between the two.  A whole gripper is summarized
by encoding the surface clouds of its joint-limit corner configurations
plus the central one and concatenating the elementwise max, min and mean
of those latent codes into a single 3k feature.
"""

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import gripper, neural
from .errors import ConfigError, FormatError, IndeterminateError, InputError
from .geometry import PointCloud

__all__ = [
    "AutoencoderResult",
    "EmbeddingConfig",
    "GripperFeature",
    "GripperLatent",
    "PAPER_EMBEDDING",
    "build_decoder",
    "build_encoder",
    "chamfer_loss",
    "decode",
    "encode",
    "gripper_feature",
    "interpolate_latent",
    "load_autoencoder",
    "pooled_feature",
    "read_loss_curve",
    "save_autoencoder",
    "train_autoencoder",
    "write_loss_curve",
]


# ---------------------------------------------------------------------------
# configuration

@dataclass(frozen=True)
class EmbeddingConfig:
    """Autoencoder dimensions and training hyperparameters.

    The defaults are the desk-scale profile (256-point clouds, 64-wide
    latents); ``PAPER_EMBEDDING`` holds the full-scale profile for anyone
    with the compute to train it.
    """

    points: int = 256
    k: int = 64
    encoder_widths: tuple = (16, 16, 32, 32, 64, 64)
    decoder_hidden: tuple = (128, 256)
    configs_per_gripper: int = 10
    learning_rate: float = neural.ADAM_LR

    def __post_init__(self):
        for name in ("points", "k", "configs_per_gripper"):
            value = getattr(self, name)
            if not (isinstance(value, int) and value > 0):
                raise ConfigError(f"{name} must be a positive int, got {value}")
        for name in ("encoder_widths", "decoder_hidden"):
            widths = tuple(getattr(self, name))
            if not widths or any(
                    not (isinstance(w, int) and w > 0) for w in widths):
                raise ConfigError(
                    f"{name} must be a non-empty tuple of positive ints, "
                    f"got {widths}")
            object.__setattr__(self, name, widths)
        if self.encoder_widths[-1] != self.k:
            raise ConfigError(
                f"last encoder width {self.encoder_widths[-1]} must equal "
                f"the latent size k={self.k}")
        lr = float(self.learning_rate)
        if not (math.isfinite(lr) and lr > 0.0):
            raise ConfigError(f"learning_rate must be positive, got {lr}")
        object.__setattr__(self, "learning_rate", lr)

    def meta(self):
        """JSON-friendly dict capturing every field."""
        return {
            "points": self.points,
            "k": self.k,
            "encoder_widths": list(self.encoder_widths),
            "decoder_hidden": list(self.decoder_hidden),
            "configs_per_gripper": self.configs_per_gripper,
            "learning_rate": self.learning_rate,
        }

    @staticmethod
    def from_meta(meta):
        try:
            return EmbeddingConfig(
                points=int(meta["points"]),
                k=int(meta["k"]),
                encoder_widths=tuple(int(w) for w in meta["encoder_widths"]),
                decoder_hidden=tuple(int(w) for w in meta["decoder_hidden"]),
                configs_per_gripper=int(meta["configs_per_gripper"]),
                learning_rate=float(meta["learning_rate"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"bad embedding metadata: {exc}") from exc


PAPER_EMBEDDING = EmbeddingConfig(
    points=2048, k=256, encoder_widths=(64, 64, 128, 128, 256, 256),
    decoder_hidden=(512, 1024))


# ---------------------------------------------------------------------------
# domain types

@dataclass(frozen=True)
class GripperLatent:
    """A finite k-vector latent code for one posed gripper cloud."""

    code: np.ndarray

    def __post_init__(self):
        code = np.ascontiguousarray(self.code, dtype=np.float64)
        if code.ndim != 1 or code.shape[0] == 0:
            raise InputError(
                f"latent code must be a non-empty vector, got {code.shape}")
        if not np.isfinite(code).all():
            raise InputError("latent code must be finite")
        object.__setattr__(self, "code", code)

    @property
    def k(self):
        return self.code.shape[0]


@dataclass(frozen=True)
class GripperFeature:
    """Pooled whole-gripper descriptor: concat(max, min, mean) of latents.

    The three k-wide segments satisfy max >= mean >= min elementwise.
    """

    vector: np.ndarray

    def __post_init__(self):
        vec = np.ascontiguousarray(self.vector, dtype=np.float64)
        if vec.ndim != 1 or vec.shape[0] == 0 or vec.shape[0] % 3:
            raise InputError(
                f"feature must be a 3k vector, got shape {vec.shape}")
        if not np.isfinite(vec).all():
            raise InputError("feature must be finite")
        k = vec.shape[0] // 3
        mx, mn, mean = vec[:k], vec[k:2 * k], vec[2 * k:]
        if (mx < mean).any() or (mean < mn).any():
            raise InputError(
                "feature segments must satisfy max >= mean >= min")
        object.__setattr__(self, "vector", vec)

    @property
    def k(self):
        return self.vector.shape[0] // 3


@dataclass(frozen=True)
class AutoencoderResult:
    """Trained networks plus the loss curve and the gripper split."""

    encoder: neural.Network
    decoder: neural.Network
    config: EmbeddingConfig
    curve: tuple = field(default_factory=tuple)
    train_indices: tuple = ()
    test_indices: tuple = ()


# ---------------------------------------------------------------------------
# network construction

def build_encoder(config, seed):
    """Pointwise MLP (ReLU after every width) max-pooled to a k-vector."""
    layers = []
    fan = 3
    for width in config.encoder_widths:
        layers.append(neural.LayerSpec("pointwise-linear", fan, width))
        layers.append(neural.LayerSpec("relu", width, width))
        fan = width
    layers.append(neural.LayerSpec("max-pool", fan, fan, axis=0))
    return neural.Network(layers, seed)


def build_decoder(config, seed):
    """Fully connected ReLU stack ending in a linear points*3 output."""
    layers = []
    fan = config.k
    for width in config.decoder_hidden:
        layers.append(neural.LayerSpec("fully-connected", fan, width))
        layers.append(neural.LayerSpec("relu", width, width))
        fan = width
    layers.append(
        neural.LayerSpec("fully-connected", fan, config.points * 3))
    return neural.Network(layers, seed)


# ---------------------------------------------------------------------------
# encode / decode

def encode(encoder, cloud, config):
    """Latent code of one gripper cloud with the configured point count.

    Exact permutation invariance: every point passes through the same
    pointwise map and the max-pool is order-free.
    """
    if not isinstance(cloud, PointCloud):
        raise InputError("encode expects a PointCloud")
    if len(cloud) != config.points:
        raise InputError(
            f"encoder expects {config.points} points, got {len(cloud)}")
    out = neural.forward(encoder, neural.Tensor(cloud.points))
    if out.data.shape != (config.k,):
        raise InputError(
            f"encoder produced shape {out.data.shape}, config wants "
            f"({config.k},); network and config disagree")
    return GripperLatent(out.data.copy())


def decode(decoder, latent, config):
    """Reconstructed cloud for one latent code."""
    if not isinstance(latent, GripperLatent):
        raise InputError("decode expects a GripperLatent")
    if latent.k != config.k:
        raise InputError(
            f"latent has k={latent.k}, config wants k={config.k}")
    out = neural.forward(decoder, neural.Tensor(latent.code))
    if out.data.shape != (config.points * 3,):
        raise InputError(
            f"decoder produced shape {out.data.shape}, config wants "
            f"({config.points * 3},); network and config disagree")
    return PointCloud(out.data.reshape(config.points, 3).copy())


def chamfer_loss(pred, target):
    """Differentiable symmetric mean squared nearest-neighbor distance.

    Matches the value of ``geometry.chamfer_distance``; the gradient
    treats each point's nearest neighbor as locally constant (ties take
    the first index), which is the exact derivative away from ties.
    """
    if not isinstance(pred, neural.Tensor):
        raise InputError("chamfer_loss expects a Tensor prediction")
    p = pred.data
    t = np.ascontiguousarray(target, dtype=np.float64)
    if p.ndim != 2 or p.shape[1] != 3 or p.shape[0] == 0:
        raise InputError(f"prediction must be (n, 3), got {p.shape}")
    if t.ndim != 2 or t.shape[1] != 3 or t.shape[0] == 0:
        raise InputError(f"target must be (m, 3), got {t.shape}")
    diff = p[:, None, :] - t[None, :, :]
    d2 = np.einsum("ijk,ijk->ij", diff, diff)
    n, m = d2.shape
    nn_f = np.argmin(d2, axis=1)
    nn_b = np.argmin(d2, axis=0)
    value = d2[np.arange(n), nn_f].mean() + d2[nn_b, np.arange(m)].mean()

    def back(g):
        gp = (2.0 / n) * (p - t[nn_f])
        np.add.at(gp, nn_b, (2.0 / m) * (p[nn_b] - t))
        return ((pred, gp * float(g)),)

    return neural._make(np.float64(value), (pred,), back)


# ---------------------------------------------------------------------------
# training

def _reconstruct(encoder, decoder, points, config):
    latent = neural.forward(encoder, neural.Tensor(points))
    flat = neural.forward(decoder, latent)
    return neural.reshape(flat, (config.points, 3))


def _mean_loss(encoder, decoder, clouds, config):
    total = 0.0
    for points in clouds:
        recon = _reconstruct(encoder, decoder, points, config)
        total += float(chamfer_loss(recon, points).data)
    return total / len(clouds)


def train_autoencoder(grippers, epochs, seed, config=None, dump_path=None):
    """Train the autoencoder on random within-limit gripper clouds.

    Grippers split 9:1 into train/test (at least one test gripper), each
    contributing ``configs_per_gripper`` seeded random configurations.
    Per-epoch train loss is the running mean over the shuffled pass; the
    test loss is evaluated after each epoch.  Row 0 of the curve is the
    pre-training evaluation.  A non-finite loss aborts with
    ``IndeterminateError`` after dumping the parameters to ``dump_path``
    (when given).  Everything is deterministic in ``seed``.
    """
    if config is None:
        config = EmbeddingConfig()
    grippers = list(grippers)
    if len(grippers) < 2:
        raise InputError(
            f"training needs at least 2 grippers, got {len(grippers)}")
    if not (isinstance(epochs, int) and epochs >= 1):
        raise InputError(f"epochs must be a positive int, got {epochs}")
    rng = np.random.default_rng(seed)

    count = len(grippers)
    order = rng.permutation(count)
    test_count = max(1, count // 10)
    test_indices = tuple(sorted(int(i) for i in order[:test_count]))
    train_indices = tuple(sorted(int(i) for i in order[test_count:]))

    clouds = []
    for model in grippers:
        rows = rng.uniform(
            model.lower, model.upper,
            size=(config.configs_per_gripper, model.dof_count))
        per_model = []
        for row in rows:
            cloud_seed = int(rng.integers(0, 2 ** 63 - 1))
            cloud = gripper.sample_gripper_cloud(
                model, gripper.JointConfig(tuple(row)), config.points,
                cloud_seed)
            per_model.append(cloud.points)
        clouds.append(per_model)
    train_clouds = [pts for i in train_indices for pts in clouds[i]]
    test_clouds = [pts for i in test_indices for pts in clouds[i]]

    encoder = build_encoder(config, int(rng.integers(0, 2 ** 63 - 1)))
    decoder = build_decoder(config, int(rng.integers(0, 2 ** 63 - 1)))
    params = {f"encoder.{k}": v for k, v in encoder.params.items()}
    params.update({f"decoder.{k}": v for k, v in decoder.params.items()})
    state = neural.AdamState(params, lr=config.learning_rate)

    def diverged(epoch, step, value):
        where = f"epoch {epoch} step {step}: loss {value!r}"
        if dump_path is not None:
            meta = dict(config.meta(), epoch=epoch, step=step,
                        loss=repr(value))
            neural.save_checkpoint(dump_path, params, meta)
            where += f"; parameters dumped to {dump_path}"
        raise IndeterminateError(f"autoencoder training diverged at {where}")

    curve = [(0, _mean_loss(encoder, decoder, train_clouds, config),
              _mean_loss(encoder, decoder, test_clouds, config))]
    for epoch in range(1, epochs + 1):
        running = 0.0
        for step, ci in enumerate(rng.permutation(len(train_clouds))):
            points = train_clouds[ci]
            encoder.zero_grad()
            decoder.zero_grad()
            loss = chamfer_loss(
                _reconstruct(encoder, decoder, points, config), points)
            value = float(loss.data)
            if not math.isfinite(value):
                diverged(epoch, step, value)
            neural.backward(loss)
            neural.adam_step(
                state, {name: p.grad for name, p in params.items()})
            running += value
        test_loss = _mean_loss(encoder, decoder, test_clouds, config)
        if not math.isfinite(test_loss):
            diverged(epoch, len(train_clouds), test_loss)
        curve.append((epoch, running / len(train_clouds), test_loss))

    return AutoencoderResult(encoder, decoder, config, tuple(curve),
                             train_indices, test_indices)


# ---------------------------------------------------------------------------
# gripper feature

def pooled_feature(latents):
    """Concat(max, min, mean) over a set of same-width latent codes.

    Channels are sorted before pooling so the result is bit-identical
    under any reordering of the latent list; the mean is clipped into
    [min, max] to absorb final-ulp summation rounding, keeping the
    segment ordering invariant exact.
    """
    latents = list(latents)
    if not latents:
        raise InputError("pooled_feature needs at least one latent")
    widths = {lat.k for lat in latents}
    if len(widths) != 1:
        raise InputError(f"latent widths disagree: {sorted(widths)}")
    codes = np.sort(np.stack([lat.code for lat in latents]), axis=0)
    mx = codes[-1]
    mn = codes[0]
    mean = np.clip(codes.sum(axis=0) / codes.shape[0], mn, mx)
    return GripperFeature(np.concatenate([mx, mn, mean]))


def gripper_feature(model, encoder, config, seed=0):
    """Pooled 3k feature over the joint-limit corner and central clouds.

    Every configuration's cloud reuses the same sampling seed, so the
    per-primitive local samples are identical and only move rigidly with
    the links; the feature is therefore a pure function of the gripper
    and invariant to the configuration order by construction.
    """
    configs = gripper.boundary_and_central_configs(model)
    latents = [
        encode(encoder,
               gripper.sample_gripper_cloud(model, cfg, config.points, seed),
               config)
        for cfg in configs]
    return pooled_feature(latents)


def interpolate_latent(f1, f2, alpha):
    """Convex blend alpha*f1 + (1-alpha)*f2 of two latent codes."""
    if not (isinstance(f1, GripperLatent) and isinstance(f2, GripperLatent)):
        raise InputError("interpolate_latent expects GripperLatent inputs")
    if f1.k != f2.k:
        raise InputError(f"latent widths disagree: {f1.k} vs {f2.k}")
    a = float(alpha)
    if not (math.isfinite(a) and 0.0 <= a <= 1.0):
        raise InputError(f"alpha must lie in [0, 1], got {alpha}")
    return GripperLatent(a * f1.code + (1.0 - a) * f2.code)


# ---------------------------------------------------------------------------
# persistence

def save_autoencoder(path, encoder, decoder, config):
    """One GFNN checkpoint holding both networks plus the config."""
    params = {f"encoder.{k}": v for k, v in encoder.params.items()}
    params.update({f"decoder.{k}": v for k, v in decoder.params.items()})
    neural.save_checkpoint(path, params, config.meta())


def load_autoencoder(path):
    """Rebuild ``(encoder, decoder, config)`` from a saved checkpoint."""
    params, meta = neural.load_checkpoint(path)
    config = EmbeddingConfig.from_meta(meta)
    enc_state, dec_state = {}, {}
    for name, value in params.items():
        if name.startswith("encoder."):
            enc_state[name[len("encoder."):]] = value
        elif name.startswith("decoder."):
            dec_state[name[len("decoder."):]] = value
        else:
            raise FormatError(f"unexpected checkpoint parameter {name!r}")
    encoder = build_encoder(config, seed=0)
    decoder = build_decoder(config, seed=0)
    if set(enc_state) != set(encoder.params) or \
            set(dec_state) != set(decoder.params):
        raise FormatError("checkpoint parameters do not match the "
                          "architecture in its metadata")
    encoder.load_state(enc_state)
    decoder.load_state(dec_state)
    return encoder, decoder, config


def write_loss_curve(path, curve):
    """CSV loss curve: epoch, train_loss, test_loss."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "test_loss"])
        for epoch, train_loss, test_loss in curve:
            writer.writerow([int(epoch), repr(float(train_loss)),
                             repr(float(test_loss))])


def read_loss_curve(path):
    """Parse a loss-curve CSV back into (epoch, train, test) tuples."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["epoch", "train_loss", "test_loss"]:
        raise FormatError(f"{path}: not a loss-curve CSV")
    try:
        return tuple(
            (int(r[0]), float(r[1]), float(r[2])) for r in rows[1:])
    except (IndexError, ValueError) as exc:
        raise FormatError(f"{path}: bad loss-curve row: {exc}") from exc
