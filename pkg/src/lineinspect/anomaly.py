"""GAN-based anomaly scoring with latent inversion and threshold calibration.

A generator maps a latent vector to an image of a normal part; scoring an
image searches the latent space for the closest reconstruction and combines
pixel dissimilarity (residual loss, a sum of absolute differences) with how
real the discriminator finds that reconstruction (discrimination loss, a
sigmoid cross entropy against target 1):

    score = (1 - lam) * residual + lam * discrimination

The detection threshold is calibrated as the maximum score over a set of
known-normal images. Signed residual maps render through a jet colormap
(-1 deep blue, 0 green, +1 deep red) for visual triage.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, DivergenceError, ValidationError
from .imagecore import Image
from .neuralnet import (
    AdamOptimizer,
    AdamParams,
    ConvSpec,
    load_weights,
    save_weights,
    sigmoid,
    sigmoid_ce_with_logits,
)
from .neuralnet.layers import ConvLayer, DenseLayer, ReshapeLayer, Stack, TransposedConvLayer, accumulate

DEFAULT_Z_DIM = 100


def _as_array(x) -> np.ndarray:
    return x.pixels if isinstance(x, Image) else np.asarray(x, dtype=np.float64)


class GeneratorModel:
    """Dense projection then a stack of stride-2 transposed convs, tanh output.

    The tanh range (-1, 1) is affinely mapped to [0, 1] so outputs compare
    directly against images.
    """

    def __init__(self, image_size: int = 32, channels: int = 3, z_dim: int = DEFAULT_Z_DIM,
                 up_channels=(64, 32, 16), params=None, seed: int = 0):
        self.image_size = int(image_size)
        self.channels = int(channels)
        self.z_dim = int(z_dim)
        self.up_channels = tuple(int(c) for c in up_channels)
        start = self.image_size // (2 ** len(self.up_channels))
        if start < 1 or start * 2 ** len(self.up_channels) != self.image_size:
            raise ValidationError(
                f"image size {self.image_size} not reachable with {len(self.up_channels)} upsamplings"
            )
        c0 = self.up_channels[0]
        layers = [
            DenseLayer("project", self.z_dim, start * start * c0, act="relu"),
            ReshapeLayer((start, start, c0)),
        ]
        chain = list(self.up_channels[1:]) + [self.channels]
        c_in = c0
        for i, c_out in enumerate(chain):
            last = i == len(chain) - 1
            layers.append(
                TransposedConvLayer(
                    f"up{i}", c_in, c_out, kernel=4, stride=2, pad=1,
                    act="tanh" if last else "relu",
                )
            )
            c_in = c_out
        self.stack = Stack(layers)
        self.params = params if params is not None else self.stack.init_params(
            np.random.default_rng(seed)
        )

    def forward_z(self, z: np.ndarray):
        z = np.asarray(z, dtype=np.float64).reshape(-1)
        if z.shape != (self.z_dim,):
            raise DimensionError(f"latent vector has shape {z.shape}, want ({self.z_dim},)")
        out, caches = self.stack.forward(z, self.params)
        return (out + 1.0) / 2.0, caches

    def backward_z(self, caches, d_img: np.ndarray) -> np.ndarray:
        dz, _ = self.backward_full(caches, d_img)
        return dz

    def backward_full(self, caches, d_img: np.ndarray):
        grads: dict[str, np.ndarray] = {}
        dz = self.stack.backward(caches, np.asarray(d_img) * 0.5, self.params, grads)
        return dz, grads

    def generate(self, z: np.ndarray) -> Image:
        out, _ = self.forward_z(z)
        return Image(np.clip(out, 0.0, 1.0))


class DiscriminatorModel:
    """Stride-2 conv stack with leaky-relu down to a single scalar logit."""

    def __init__(self, image_size: int = 32, channels: int = 3,
                 down_channels=(16, 32, 64), params=None, seed: int = 0):
        self.image_size = int(image_size)
        self.channels = int(channels)
        self.down_channels = tuple(int(c) for c in down_channels)
        spatial = self.image_size
        layers = []
        c_in = self.channels
        for i, c_out in enumerate(self.down_channels):
            layers.append(
                ConvLayer(
                    f"down{i}",
                    ConvSpec(c_in, c_out, 4, 4, stride=2, padding=(1, 1, 1, 1)),
                    act="leaky_relu",
                )
            )
            c_in = c_out
            spatial //= 2
        layers.append(DenseLayer("logit", spatial * spatial * c_in, 1))
        self.stack = Stack(layers)
        self.params = params if params is not None else self.stack.init_params(
            np.random.default_rng(seed)
        )

    def forward_logit(self, img):
        x = _as_array(img)
        if x.shape != (self.image_size, self.image_size, self.channels):
            raise DimensionError(
                f"image shape {x.shape} does not match discriminator input "
                f"({self.image_size}, {self.image_size}, {self.channels})"
            )
        out, caches = self.stack.forward(x * 2.0 - 1.0, self.params)
        return float(out[0]), caches

    def backward_input(self, caches, d_logit: float) -> np.ndarray:
        dx, _ = self.backward_full(caches, d_logit)
        return dx

    def backward_full(self, caches, d_logit: float):
        grads: dict[str, np.ndarray] = {}
        dx = self.stack.backward(caches, np.array([float(d_logit)]), self.params, grads)
        return dx * 2.0, grads

    def realness(self, img) -> float:
        logit, _ = self.forward_logit(img)
        return float(sigmoid(np.array(logit)))


def train_gan(
    normals: list,
    steps: int,
    batch: int = 16,
    d_adam: AdamParams = AdamParams(lr=1e-5, beta1=0.1),
    g_adam: AdamParams = AdamParams(lr=2e-4, beta1=0.5),
    seed: int = 0,
    z_dim: int = DEFAULT_Z_DIM,
) -> tuple[GeneratorModel, DiscriminatorModel, list[tuple[float, float]]]:
    """Alternate one discriminator and one generator update per step.

    The discriminator distinguishes dataset images (target 1) from generated
    ones (target 0); the generator is pushed toward discriminator target 1.
    """
    if steps < 1:
        raise ValidationError(f"steps must be >= 1, got {steps}")
    if not normals:
        raise ValidationError("empty training dataset")
    arrays = [_as_array(x) for x in normals]
    size, channels = arrays[0].shape[0], arrays[0].shape[2]
    gen = GeneratorModel(image_size=size, channels=channels, z_dim=z_dim, seed=seed)
    disc = DiscriminatorModel(image_size=size, channels=channels, seed=seed + 1)
    g_opt = AdamOptimizer(g_adam)
    d_opt = AdamOptimizer(d_adam)
    rng = np.random.default_rng(seed + 2)
    losses: list[tuple[float, float]] = []
    for step in range(steps):
        idx = rng.integers(0, len(arrays), size=batch)
        z_batch = rng.uniform(-1.0, 1.0, size=(batch, z_dim))

        d_grads: dict[str, np.ndarray] = {}
        d_loss = 0.0
        for i, z in zip(idx, z_batch):
            logit_r, cache_r = disc.forward_logit(arrays[i])
            d_loss += sigmoid_ce_with_logits(np.array([logit_r]), np.array([1.0]))
            _, gr = disc.backward_full(cache_r, (sigmoid(np.array(logit_r))[()] - 1.0) / batch)
            accumulate(d_grads, gr)
            fake, _ = gen.forward_z(z)
            logit_f, cache_f = disc.forward_logit(fake)
            d_loss += sigmoid_ce_with_logits(np.array([logit_f]), np.array([0.0]))
            _, gf = disc.backward_full(cache_f, sigmoid(np.array(logit_f))[()] / batch)
            accumulate(d_grads, gf)
        d_loss /= batch
        if not np.isfinite(d_loss):
            raise DivergenceError("discriminator loss diverged", step=step)
        d_opt.step(disc.params, d_grads)

        g_grads: dict[str, np.ndarray] = {}
        g_loss = 0.0
        for z in rng.uniform(-1.0, 1.0, size=(batch, z_dim)):
            fake, g_cache = gen.forward_z(z)
            logit, d_cache = disc.forward_logit(fake)
            g_loss += sigmoid_ce_with_logits(np.array([logit]), np.array([1.0]))
            d_img = disc.backward_input(d_cache, (sigmoid(np.array(logit))[()] - 1.0) / batch)
            _, gg = gen.backward_full(g_cache, d_img)
            accumulate(g_grads, gg)
        g_loss /= batch
        if not np.isfinite(g_loss):
            raise DivergenceError("generator loss diverged", step=step)
        g_opt.step(gen.params, g_grads)
        losses.append((float(d_loss), float(g_loss)))
    return gen, disc, losses


def residual_loss(x, gz) -> float:
    """Sum of per-pixel absolute differences (the scalar form of the residual)."""
    a, b = _as_array(x), _as_array(gz)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.abs(a - b).sum())


def discrimination_loss(disc, gz) -> float:
    """Sigmoid cross entropy of the discriminator logit against target 1."""
    logit, _ = disc.forward_logit(gz)
    return sigmoid_ce_with_logits(np.array([logit]), np.array([1.0]))


@dataclass
class InversionParams:
    iters: int = 300
    step_size: float = 0.05
    decay: float = 0.97
    seed: int = 0

    def __post_init__(self):
        if self.iters < 1:
            raise ValidationError(f"iters must be >= 1, got {self.iters}")
        if self.step_size <= 0 or not (0.0 < self.decay <= 1.0):
            raise ValidationError(f"bad inversion schedule {self}")

    @classmethod
    def from_dict(cls, d: dict) -> "InversionParams":
        return cls(**d)


def invert_latent(
    x,
    gen,
    disc,
    lam: float,
    iters: int = 300,
    step_size: float = 0.05,
    seed: int = 0,
    z0: np.ndarray | None = None,
    decay: float = 0.97,
) -> tuple[np.ndarray, list[float]]:
    """Search the latent space for the best reconstruction of x.

    Adam on z with an exponentially decaying step size; the best-scoring z
    visited is returned (not necessarily the last). The trace holds the
    combined loss at each iterate, so trace[0] is the initial loss.
    """
    if iters < 1:
        raise ValidationError(f"iters must be >= 1, got {iters}")
    if not (0.0 <= lam <= 1.0):
        raise ValidationError(f"lambda {lam} outside [0, 1]")
    target = _as_array(x)
    z = (
        np.array(z0, dtype=np.float64).reshape(-1).copy()
        if z0 is not None
        else np.random.default_rng(seed).uniform(-1.0, 1.0, size=gen.z_dim)
    )
    m = np.zeros_like(z)
    v = np.zeros_like(z)
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    best_loss, best_z = np.inf, z.copy()
    trace: list[float] = []
    for k in range(iters):
        img, g_cache = gen.forward_z(z)
        if img.shape != target.shape:
            raise DimensionError(f"generator output {img.shape} vs query {target.shape}")
        diff = target - img
        l_r = float(np.abs(diff).sum())
        d_img = -(1.0 - lam) * np.sign(diff)
        l_d = 0.0
        if lam > 0.0:
            logit, d_cache = disc.forward_logit(img)
            l_d = sigmoid_ce_with_logits(np.array([logit]), np.array([1.0]))
            d_img = d_img + lam * disc.backward_input(d_cache, sigmoid(np.array(logit))[()] - 1.0)
        loss = (1.0 - lam) * l_r + lam * l_d
        if not np.isfinite(loss):
            raise DivergenceError("inversion loss diverged", step=k)
        trace.append(loss)
        if loss < best_loss:
            best_loss, best_z = loss, z.copy()
        dz = gen.backward_z(g_cache, d_img)
        m = beta1 * m + (1 - beta1) * dz
        v = beta2 * v + (1 - beta2) * dz * dz
        m_hat = m / (1 - beta1 ** (k + 1))
        v_hat = v / (1 - beta2 ** (k + 1))
        z = z - (step_size * decay**k) * m_hat / (np.sqrt(v_hat) + eps)
    return best_z, trace


@dataclass
class AnomalyReport:
    score: float
    residual_loss: float
    discrimination_loss: float
    lam: float
    best_z: np.ndarray
    residual_signed: np.ndarray  # x - G(best_z), clipped to [-1, 1]
    loss_trace: list[float] = field(repr=False, default_factory=list)


def anomaly_score(x, gen, disc, lam: float, inversion: InversionParams | None = None,
                  z0: np.ndarray | None = None) -> AnomalyReport:
    """Invert, then evaluate the combined score at the best latent point."""
    inv = inversion or InversionParams()
    best_z, trace = invert_latent(
        x, gen, disc, lam,
        iters=inv.iters, step_size=inv.step_size, seed=inv.seed, decay=inv.decay, z0=z0,
    )
    img, _ = gen.forward_z(best_z)
    l_r = residual_loss(x, img)
    l_d = discrimination_loss(disc, img)
    score = (1.0 - lam) * l_r + lam * l_d
    residual = np.clip(_as_array(x) - img, -1.0, 1.0)
    return AnomalyReport(
        score=float(score),
        residual_loss=l_r,
        discrimination_loss=l_d,
        lam=lam,
        best_z=best_z,
        residual_signed=residual,
        loss_trace=trace,
    )


@dataclass
class CalibrationResult:
    threshold: float
    sample_count: int
    lam: float
    score_min: float
    score_median: float
    score_max: float

    def to_json(self, path) -> None:
        doc = {
            "lambda": self.lam,
            "threshold": self.threshold,
            "n": self.sample_count,
            "scores": {
                "min": self.score_min,
                "median": self.score_median,
                "max": self.score_max,
            },
        }
        with open(path, "w") as f:
            json.dump(doc, f, indent=1)

    @classmethod
    def from_json(cls, path) -> "CalibrationResult":
        with open(path) as f:
            doc = json.load(f)
        return cls(
            threshold=float(doc["threshold"]),
            sample_count=int(doc["n"]),
            lam=float(doc["lambda"]),
            score_min=float(doc["scores"]["min"]),
            score_median=float(doc["scores"]["median"]),
            score_max=float(doc["scores"]["max"]),
        )


def calibrate_threshold(
    gen, disc, normals: list, lam: float, inversion: InversionParams | None = None
) -> CalibrationResult:
    """Threshold = highest score over the known-normal calibration set."""
    if not normals:
        raise ValidationError("empty calibration dataset")
    scores = [anomaly_score(x, gen, disc, lam, inversion).score for x in normals]
    return CalibrationResult(
        threshold=float(max(scores)),
        sample_count=len(scores),
        lam=lam,
        score_min=float(min(scores)),
        score_median=float(np.median(scores)),
        score_max=float(max(scores)),
    )


def render_colormap(residual_signed: np.ndarray) -> Image:
    """Jet lookup over signed residuals in [-1, 1]; channels reduce to their mean."""
    arr = np.asarray(residual_signed, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr.mean(axis=2)
    if arr.ndim != 2:
        raise DimensionError(f"residual must be [H, W] or [H, W, C], got {residual_signed.shape}")
    if arr.min() < -1.0 or arr.max() > 1.0:
        raise ValidationError(
            f"residual values outside [-1, 1]: min={arr.min():.4g} max={arr.max():.4g}"
        )
    t = (arr + 1.0) / 2.0
    r = np.clip(1.5 - np.abs(4.0 * t - 3.0), 0.0, 1.0)
    g = np.clip(1.5 - np.abs(4.0 * t - 2.0), 0.0, 1.0)
    b = np.clip(1.5 - np.abs(4.0 * t - 1.0), 0.0, 1.0)
    return Image(np.stack([r, g, b], axis=2))


def save_anomaly_model(gen: GeneratorModel, disc: DiscriminatorModel, model_dir) -> None:
    os.makedirs(model_dir, exist_ok=True)
    config = {
        "image_size": gen.image_size,
        "channels": gen.channels,
        "z_dim": gen.z_dim,
        "up_channels": list(gen.up_channels),
        "down_channels": list(disc.down_channels),
    }
    with open(os.path.join(model_dir, "config.json"), "w") as f:
        json.dump(config, f, indent=1)
    save_weights(gen.params, os.path.join(model_dir, "generator.lscw"))
    save_weights(disc.params, os.path.join(model_dir, "discriminator.lscw"))


def load_anomaly_model(model_dir) -> tuple[GeneratorModel, DiscriminatorModel]:
    with open(os.path.join(model_dir, "config.json")) as f:
        config = json.load(f)
    gen = GeneratorModel(
        image_size=config["image_size"],
        channels=config["channels"],
        z_dim=config["z_dim"],
        up_channels=tuple(config["up_channels"]),
        params=load_weights(os.path.join(model_dir, "generator.lscw")),
    )
    disc = DiscriminatorModel(
        image_size=config["image_size"],
        channels=config["channels"],
        down_channels=tuple(config["down_channels"]),
        params=load_weights(os.path.join(model_dir, "discriminator.lscw")),
    )
    return gen, disc
