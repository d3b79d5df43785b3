"""The four trainable pieces: convolutional encoder, hash projection,
upsampling generator, and convolutional discriminator.

Scale is config-driven and deliberately small.  The encoder halves the
spatial extent per block with stride-2 convs and relu, ends in a dense
feature layer; the projection maps features to one pre-activation per
code bit.  The generator seeds a coarse grid from the code via a dense
layer and doubles it back up with transposed convs (eLU), finishing with
a 1x1 conv and sigmoid into pixel range.  The discriminator is strided
convs (eLU, no pooling) into a dense head with a sigmoid probability;
its last conv activation doubles as the feature map for the perceptual
term.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .config import RunConfig
from .continuation import pack_codes, sign_binarize, surrogate_activation
from .datatypes import ImageSet, ValidationError


@dataclass(frozen=True)
class Architecture:
    """Geometry shared by the four networks; checked once at build time."""

    image_shape: tuple
    code_bits: int
    encoder_channels: tuple
    encoder_dense: int
    generator_channels: tuple
    discriminator_channels: tuple
    discriminator_dense: int
    use_batchnorm: bool = False
    hash_bias: bool = True

    def __post_init__(self):
        c, h, w = self.image_shape
        if c < 1 or h < 1 or w < 1:
            raise ValidationError(f"bad image shape {self.image_shape}")
        enc_factor = 2 ** len(self.encoder_channels)
        if h < enc_factor or w < enc_factor:
            raise ValidationError(
                f"{h}x{w} images collapse below 1x1 over {len(self.encoder_channels)} "
                "stride-2 encoder blocks"
            )
        d = self.upsample_stages
        if h % (2**d) or w % (2**d):
            raise ValidationError(
                f"image extent {h}x{w} not divisible by {2 ** d}, "
                "so the generator cannot reproduce it by doubling"
            )
        dis_factor = 2 ** len(self.discriminator_channels)
        if h < dis_factor or w < dis_factor:
            raise ValidationError("too many discriminator blocks for this image size")

    @classmethod
    def from_config(cls, cfg: RunConfig, image_shape) -> "Architecture":
        return cls(
            image_shape=tuple(image_shape),
            code_bits=cfg.code_bits,
            encoder_channels=cfg.encoder_channels,
            encoder_dense=cfg.encoder_dense,
            generator_channels=cfg.generator_channels,
            discriminator_channels=cfg.discriminator_channels,
            discriminator_dense=cfg.discriminator_dense,
            use_batchnorm=cfg.use_batchnorm,
            hash_bias=cfg.hash_bias,
        )

    @property
    def upsample_stages(self) -> int:
        return len(self.generator_channels) - 1

    @property
    def seed_hw(self) -> tuple:
        _, h, w = self.image_shape
        d = self.upsample_stages
        return h // (2**d), w // (2**d)

    def encoder_spatial(self) -> tuple:
        _, h, w = self.image_shape
        for _ in self.encoder_channels:
            h = (h - 1) // 2 + 1
            w = (w - 1) // 2 + 1
        return h, w

    def discriminator_spatial(self) -> tuple:
        _, h, w = self.image_shape
        for _ in self.discriminator_channels:
            h = (h - 1) // 2 + 1
            w = (w - 1) // 2 + 1
        return h, w


@dataclass
class DiscriminatorOutput:
    p: ad.Tensor  # (N, 1) sigmoid probabilities
    phi_map: ad.Tensor  # (N, C, H, W) last-conv activations


def _uniform(rng, shape, fan_in, dtype):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Dense:
    def __init__(self, rng, n_in, n_out, dtype, name):
        self.w = ad.Tensor(_uniform(rng, (n_in, n_out), n_in, dtype), requires_grad=True, name=f"{name}.w")
        self.b = ad.Tensor(np.zeros(n_out, dtype=dtype), requires_grad=True, name=f"{name}.b")

    def __call__(self, x):
        return ad.add(ad.matmul(x, self.w), self.b)

    def params(self):
        return [self.w, self.b]


class Conv:
    def __init__(self, rng, c_in, c_out, k, stride, pad, dtype, name):
        fan_in = c_in * k * k
        self.w = ad.Tensor(
            _uniform(rng, (c_out, c_in, k, k), fan_in, dtype), requires_grad=True, name=f"{name}.w"
        )
        self.b = ad.Tensor(np.zeros(c_out, dtype=dtype), requires_grad=True, name=f"{name}.b")
        self.stride, self.pad = stride, pad

    def __call__(self, x):
        y = ad.conv2d(x, self.w, stride=self.stride, pad=self.pad)
        return ad.add(y, ad.reshape(self.b, (1, -1, 1, 1)))

    def params(self):
        return [self.w, self.b]


class TConv:
    """Stride-2 transposed conv with k=4, p=1: exact doubling."""

    def __init__(self, rng, c_in, c_out, dtype, name):
        k = 4
        self.w = ad.Tensor(
            _uniform(rng, (c_in, c_out, k, k), c_in * k * k, dtype),
            requires_grad=True,
            name=f"{name}.w",
        )
        self.b = ad.Tensor(np.zeros(c_out, dtype=dtype), requires_grad=True, name=f"{name}.b")

    def __call__(self, x):
        y = ad.transposed_conv2d(x, self.w, stride=2, pad=1)
        return ad.add(y, ad.reshape(self.b, (1, -1, 1, 1)))

    def params(self):
        return [self.w, self.b]


class BatchNorm:
    def __init__(self, width, dtype, name):
        self.gamma = ad.Tensor(np.ones(width, dtype=dtype), requires_grad=True, name=f"{name}.gamma")
        self.beta = ad.Tensor(np.zeros(width, dtype=dtype), requires_grad=True, name=f"{name}.beta")
        self.running_mean = np.zeros(width, dtype=dtype)
        self.running_var = np.ones(width, dtype=dtype)

    def __call__(self, x, training):
        return ad.batchnorm(
            x, self.gamma, self.beta, self.running_mean, self.running_var, training
        )

    def params(self):
        return [self.gamma, self.beta]

    def stats(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}


class _Net:
    """Shared bookkeeping: ordered layers with named parameters."""

    def __init__(self):
        self.layers = {}

    def add(self, name, layer):
        self.layers[name] = layer
        return layer

    def params(self) -> dict:
        out = {}
        for name, layer in self.layers.items():
            for p in layer.params():
                out[p.name] = p
        return out

    def stats(self) -> dict:
        out = {}
        for name, layer in self.layers.items():
            if isinstance(layer, BatchNorm):
                for key, arr in layer.stats().items():
                    out[f"{name}.{key}"] = arr
        return out


class Encoder(_Net):
    def __init__(self, arch, rng, dtype):
        super().__init__()
        self.arch = arch
        c_in = arch.image_shape[0]
        for i, c_out in enumerate(arch.encoder_channels):
            self.add(f"conv{i}", Conv(rng, c_in, c_out, k=3, stride=2, pad=1, dtype=dtype, name=f"conv{i}"))
            if arch.use_batchnorm:
                self.add(f"bn{i}", BatchNorm(c_out, dtype, name=f"bn{i}"))
            c_in = c_out
        eh, ew = arch.encoder_spatial()
        self.flat_dim = c_in * eh * ew
        self.add("dense", Dense(rng, self.flat_dim, arch.encoder_dense, dtype, name="dense"))

    def __call__(self, x, training):
        h = x
        for i in range(len(self.arch.encoder_channels)):
            h = self.layers[f"conv{i}"](h)
            if self.arch.use_batchnorm:
                h = self.layers[f"bn{i}"](h, training)
            h = ad.relu(h)
        h = ad.reshape(h, (h.shape[0], self.flat_dim))
        return ad.relu(self.layers["dense"](h))


class Generator(_Net):
    def __init__(self, arch, rng, dtype):
        super().__init__()
        self.arch = arch
        widths = arch.generator_channels
        sh, sw = arch.seed_hw
        self.seed_shape = (widths[0], sh, sw)
        self.add("dense", Dense(rng, arch.code_bits, widths[0] * sh * sw, dtype, name="dense"))
        for i, (c_in, c_out) in enumerate(zip(widths, widths[1:])):
            self.add(f"tconv{i}", TConv(rng, c_in, c_out, dtype, name=f"tconv{i}"))
            if arch.use_batchnorm:
                self.add(f"bn{i}", BatchNorm(c_out, dtype, name=f"bn{i}"))
        self.add("out", Conv(rng, widths[-1], arch.image_shape[0], k=1, stride=1, pad=0, dtype=dtype, name="out"))

    def __call__(self, codes, training):
        h = ad.elu(self.layers["dense"](codes))
        h = ad.reshape(h, (h.shape[0],) + self.seed_shape)
        for i in range(self.arch.upsample_stages):
            h = self.layers[f"tconv{i}"](h)
            if self.arch.use_batchnorm:
                h = self.layers[f"bn{i}"](h, training)
            h = ad.elu(h)
        return ad.sigmoid(self.layers["out"](h))


class Discriminator(_Net):
    def __init__(self, arch, rng, dtype):
        super().__init__()
        self.arch = arch
        c_in = arch.image_shape[0]
        for i, c_out in enumerate(arch.discriminator_channels):
            self.add(f"conv{i}", Conv(rng, c_in, c_out, k=5, stride=2, pad=2, dtype=dtype, name=f"conv{i}"))
            if arch.use_batchnorm:
                self.add(f"bn{i}", BatchNorm(c_out, dtype, name=f"bn{i}"))
            c_in = c_out
        dh, dw = arch.discriminator_spatial()
        self.flat_dim = c_in * dh * dw
        self.add("dense", Dense(rng, self.flat_dim, arch.discriminator_dense, dtype, name="dense"))
        self.add("head", Dense(rng, arch.discriminator_dense, 1, dtype, name="head"))

    def __call__(self, x, training) -> DiscriminatorOutput:
        h = x
        for i in range(len(self.arch.discriminator_channels)):
            h = self.layers[f"conv{i}"](h)
            if self.arch.use_batchnorm:
                h = self.layers[f"bn{i}"](h, training)
            h = ad.elu(h)
        phi_map = h
        h = ad.reshape(h, (h.shape[0], self.flat_dim))
        h = ad.elu(self.layers["dense"](h))
        p = ad.sigmoid(self.layers["head"](h))
        return DiscriminatorOutput(p=p, phi_map=phi_map)


class HashGanModel:
    """Encoder, hash projection, generator, discriminator with grouped parameters."""

    def __init__(self, arch: Architecture, seed: int = 0, dtype=np.float32):
        self.arch = arch
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        self.encoder = Encoder(arch, rng, self.dtype)
        bound = 1.0 / np.sqrt(arch.encoder_dense)
        self.hash_w = ad.Tensor(
            rng.uniform(-bound, bound, size=(arch.encoder_dense, arch.code_bits)).astype(self.dtype),
            requires_grad=True,
            name="w",
        )
        self.hash_b = ad.Tensor(
            np.zeros(arch.code_bits, dtype=self.dtype), requires_grad=True, name="b"
        )
        self.generator = Generator(arch, rng, self.dtype)
        self.discriminator = Discriminator(arch, rng, self.dtype)

    # -- parameter bookkeeping -------------------------------------------

    def param_groups(self) -> dict:
        w_h = {"w": self.hash_w}
        if self.arch.hash_bias:
            w_h["b"] = self.hash_b
        return {
            "theta": self.encoder.params(),
            "w_h": w_h,
            "pi": self.generator.params(),
            "psi": self.discriminator.params(),
        }

    def named_arrays(self) -> dict:
        """Flat name -> array view of all parameters and running stats."""
        out = {}
        for group, params in self.param_groups().items():
            for name, p in params.items():
                out[f"{group}/{name}"] = p.data
        for group, net in (("theta", self.encoder), ("pi", self.generator), ("psi", self.discriminator)):
            for name, arr in net.stats().items():
                out[f"{group}/{name}"] = arr
        return out

    def load_arrays(self, arrays: dict) -> None:
        own = self.named_arrays()
        if set(arrays) != set(own):
            missing = sorted(set(own) - set(arrays))
            extra = sorted(set(arrays) - set(own))
            raise ValidationError(f"checkpoint mismatch: missing {missing}, unexpected {extra}")
        for name, arr in arrays.items():
            if own[name].shape != arr.shape:
                raise ValidationError(
                    f"checkpoint array '{name}' has shape {arr.shape}, expected {own[name].shape}"
                )
            own[name][...] = arr.astype(own[name].dtype)

    # -- forward passes ---------------------------------------------------

    def _check_images(self, images: ad.Tensor):
        if tuple(images.shape[1:]) != self.arch.image_shape:
            raise ValidationError(
                f"images shaped {tuple(images.shape[1:])}, model expects {self.arch.image_shape}"
            )

    def as_input(self, pixels: np.ndarray) -> ad.Tensor:
        return ad.Tensor(np.asarray(pixels, dtype=self.dtype))

    def hash_preactivation(self, images: ad.Tensor, training=False) -> ad.Tensor:
        self._check_images(images)
        z = self.encoder(images, training)
        u = ad.matmul(z, self.hash_w)
        if self.arch.hash_bias:
            u = ad.add(u, self.hash_b)
        return u

    def encode(self, images: ad.Tensor, beta: float, kind: str, training=False) -> ad.Tensor:
        """Relaxed codes in [-1, 1] for the given surrogate sharpness."""
        return surrogate_activation(self.hash_preactivation(images, training), beta, kind)

    def encode_hard(self, images: ad.Tensor) -> np.ndarray:
        """Inference codes: hard +-1 via thresholding, no gradient."""
        with ad.no_grad():
            u = self.hash_preactivation(images, training=False)
        return sign_binarize(u.data)

    def generate(self, codes: ad.Tensor, training=False) -> ad.Tensor:
        if codes.ndim != 2 or codes.shape[1] != self.arch.code_bits:
            raise ValidationError(
                f"codes shaped {tuple(codes.shape)}, expected (n, {self.arch.code_bits})"
            )
        return self.generator(codes, training)

    def discriminate(self, images: ad.Tensor, training=False) -> DiscriminatorOutput:
        self._check_images(images)
        return self.discriminator(images, training)


def build_model(cfg: RunConfig, image_shape, seed=None) -> HashGanModel:
    arch = Architecture.from_config(cfg, image_shape)
    dtype = np.float32 if cfg.dtype == "float32" else np.float64
    return HashGanModel(arch, seed=cfg.seed if seed is None else seed, dtype=dtype)


def encode_images(model: HashGanModel, images: ImageSet, batch_size: int = 64):
    """Hard codes for a whole image set, packed; batched to bound memory."""
    if batch_size < 1:
        raise ValidationError("batch_size must be >= 1")
    chunks = []
    for start in range(0, images.n, batch_size):
        x = model.as_input(images.pixels[start : start + batch_size])
        chunks.append(model.encode_hard(x))
    bits = np.concatenate(chunks, axis=0)
    return pack_codes(images.ids, bits, model.arch.code_bits)
