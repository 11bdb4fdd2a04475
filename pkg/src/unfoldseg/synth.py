"""Deterministic concealed-scene generator with exact ground truth.

A scene is a textured background whose object region carries the *same*
texture shifted up by ``delta``, plus clamped Gaussian noise.  All randomness
comes from :class:`SplitMix64`, a counter-based 64-bit mixer, so a spec maps
to the same pixels on every platform:

    state_0   = mix(seed * 0x9E3779B97F4A7C15 + stream)
    x_i       = mix(state_0 + i * 0x9E3779B97F4A7C15),  i = 1, 2, ...
    mix(z)    = z ^= z >> 30; z *= 0xBF58476D1CE4E5B9;
                z ^= z >> 27; z *= 0x94D049BB133111EB; z ^= z >> 31

(all arithmetic mod 2**64).  Uniforms are ``(x >> 11) * 2**-53``; normals use
Box-Muller on consecutive uniform pairs.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError
from .io.pnm import image_bytes, load_image, load_mask

GOLDEN = 0x9E3779B97F4A7C15
_MASK64 = (1 << 64) - 1

SHAPES = ("ellipse", "blob", "annulus")
TEXTURES = ("flat", "value", "stripes")

BASE_LEVEL = 0.58
TEXTURE_AMPLITUDE = 0.05

DIFFICULTY = {
    "easy": (0.35, 0.01),
    "medium": (0.2, 0.03),
    "hard": (0.1, 0.05),
}

# streams keep geometry, texture and noise draws independent of each other
_GEOMETRY, _TEXTURE, _NOISE, _SUITE = 0, 1, 2, 3


def _mix(z):
    z = np.asarray(z, dtype=np.uint64)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


class SplitMix64:
    def __init__(self, seed, stream=0):
        start = (int(seed) * GOLDEN + int(stream)) & _MASK64
        self.state = int(_mix(np.array([start], dtype=np.uint64))[0])

    def next_u64(self, n):
        steps = np.arange(1, n + 1, dtype=np.uint64) * np.uint64(GOLDEN)
        out = _mix(np.uint64(self.state) + steps)
        self.state = (self.state + n * GOLDEN) & _MASK64
        return out

    def uniform(self, n=None):
        k = 1 if n is None else n
        u = (self.next_u64(k) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return float(u[0]) if n is None else u

    def normal(self, n):
        u1 = 1.0 - self.uniform(n)
        u2 = self.uniform(n)
        return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)

    def choice(self, options):
        return options[int(self.uniform() * len(options))]


@dataclass(frozen=True)
class SceneSpec:
    seed: int
    size: int = 64
    shape: str = "ellipse"
    texture: str = "value"
    delta: float = 0.35
    sigma: float = 0.01
    scale: float = 0.45
    channels: int = 1

    def validate(self):
        if self.size < 8:
            raise InvalidArgumentError("scene size must be >= 8")
        if self.shape not in SHAPES:
            raise InvalidArgumentError(f"shape must be one of {SHAPES}")
        if self.texture not in TEXTURES:
            raise InvalidArgumentError(f"texture must be one of {TEXTURES}")
        if not 0.0 <= self.delta <= 0.5:
            raise InvalidArgumentError("delta must lie in [0, 0.5]")
        if self.sigma < 0:
            raise InvalidArgumentError("sigma must be >= 0")
        if not 0.0 < self.scale < 1.0:
            raise InvalidArgumentError("scale must lie in (0, 1)")
        if self.channels not in (1, 3):
            raise InvalidArgumentError("channels must be 1 or 3")


def _region(spec, rng):
    n = spec.size
    y, x = np.mgrid[0:n, 0:n] + 0.5
    # equal-area radius: object area fraction ~ scale^2
    r_eff = spec.scale * n / np.sqrt(np.pi)
    u = rng.uniform(6)
    if spec.shape == "ellipse":
        aspect = 0.75 + 0.5 * u[0]
        a, b = r_eff * np.sqrt(aspect), r_eff / np.sqrt(aspect)
        extent = max(a, b)
    elif spec.shape == "blob":
        extent = r_eff * 1.3
    else:
        r_out = spec.scale * n * np.sqrt(4.0 / (3.0 * np.pi))
        extent = r_out
    slack = max(n / 2.0 - extent - 1.0, 0.0)
    cx = n / 2.0 + (2.0 * u[1] - 1.0) * slack
    cy = n / 2.0 + (2.0 * u[2] - 1.0) * slack
    dx, dy = x - cx, y - cy
    if spec.shape == "ellipse":
        theta = np.pi * u[3]
        xr = dx * np.cos(theta) + dy * np.sin(theta)
        yr = -dx * np.sin(theta) + dy * np.cos(theta)
        inside = (xr / a) ** 2 + (yr / b) ** 2 <= 1.0
    elif spec.shape == "blob":
        ang = np.arctan2(dy, dx)
        radius = r_eff * (
            1.0 + 0.2 * np.sin(2 * ang + 2 * np.pi * u[4]) + 0.1 * np.sin(3 * ang + 2 * np.pi * u[5])
        )
        inside = np.hypot(dx, dy) <= radius
    else:
        rr = np.hypot(dx, dy)
        inside = (rr <= r_out) & (rr >= 0.5 * r_out)
    return inside.astype(np.float64)


def _value_noise(n, cells, rng):
    lattice = 2.0 * rng.uniform((cells + 1) * (cells + 1)).reshape(cells + 1, cells + 1) - 1.0
    t = (np.arange(n) + 0.5) * cells / n
    i0 = np.minimum(np.floor(t).astype(int), cells - 1)
    f = t - i0
    f = f * f * (3.0 - 2.0 * f)
    ty, tx = np.meshgrid(f, f, indexing="ij")
    iy, ix = np.meshgrid(i0, i0, indexing="ij")
    top = lattice[iy, ix] * (1 - tx) + lattice[iy, ix + 1] * tx
    bottom = lattice[iy + 1, ix] * (1 - tx) + lattice[iy + 1, ix + 1] * tx
    return top * (1 - ty) + bottom * ty


def _texture(spec, rng):
    n = spec.size
    if spec.texture == "flat":
        return np.zeros((n, n))
    if spec.texture == "value":
        tex = _value_noise(n, 4, rng) + 0.5 * _value_noise(n, 8, rng)
        return tex / 1.5
    u = rng.uniform(3)
    period = n / (3.0 + 4.0 * u[0])
    theta = np.pi * u[1]
    y, x = np.mgrid[0:n, 0:n] + 0.5
    return np.sin(2 * np.pi * (x * np.cos(theta) + y * np.sin(theta)) / period + 2 * np.pi * u[2])


def generate(spec: SceneSpec):
    """Render a scene: returns ``(c, gt)`` with ``c`` (H, W, C) in [0, 1], ``gt`` binary (H, W)."""
    spec.validate()
    gt = _region(spec, SplitMix64(spec.seed, _GEOMETRY))
    if gt.sum() == 0:
        raise InvalidArgumentError("object region is empty; increase scale")
    tex = _texture(spec, SplitMix64(spec.seed, _TEXTURE))
    base = BASE_LEVEL + TEXTURE_AMPLITUDE * tex + spec.delta * gt
    c = np.repeat(base[..., None], spec.channels, axis=-1)
    if spec.sigma > 0:
        noise = SplitMix64(spec.seed, _NOISE).normal(c.size).reshape(c.shape)
        c = c + spec.sigma * noise
    return np.clip(c, 0.0, 1.0), gt


def scene_checksum(c, gt):
    """sha256 over the encoded image file followed by the encoded mask file."""
    h = hashlib.sha256()
    h.update(image_bytes(c))
    h.update(image_bytes(gt))
    return h.hexdigest()


# --------------------------------------------------------------------------
# suites and manifests


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    seed: int
    shape: str
    texture: str
    delta: float
    sigma: float
    checksum: str

    @property
    def mask_path(self):
        return mask_path_for(self.path)


@dataclass
class Manifest:
    size: int
    scale: float
    channels: int
    difficulty: str
    entries: list[ManifestEntry]
    root: str = "."

    def spec(self, entry: ManifestEntry) -> SceneSpec:
        return SceneSpec(
            seed=entry.seed, size=self.size, shape=entry.shape, texture=entry.texture,
            delta=entry.delta, sigma=entry.sigma, scale=self.scale, channels=self.channels,
        )

    def load(self, entry: ManifestEntry):
        c = load_image(os.path.join(self.root, entry.path))
        gt = load_mask(os.path.join(self.root, entry.mask_path))
        return c, gt

    def load_all(self):
        return [self.load(e) for e in self.entries]


def mask_path_for(image_path):
    stem, ext = os.path.splitext(image_path)
    return f"{stem}_gt{ext}"


def suite_specs(n, difficulty="easy", seed=0, size=64, scale=0.45, channels=1):
    """The scene specs ``make_suite`` would write, without touching disk."""
    if n < 1:
        raise InvalidArgumentError("suite needs n >= 1")
    try:
        delta, sigma = DIFFICULTY[difficulty]
    except KeyError:
        raise InvalidArgumentError(f"difficulty must be one of {tuple(DIFFICULTY)}") from None
    rng = SplitMix64(seed, _SUITE)
    specs = []
    for _ in range(n):
        scene_seed = int(rng.next_u64(1)[0] >> np.uint64(33))
        shape = rng.choice(SHAPES)
        texture = rng.choice(TEXTURES)
        specs.append(
            SceneSpec(seed=scene_seed, size=size, shape=shape, texture=texture,
                      delta=delta, sigma=sigma, scale=scale, channels=channels)
        )
    return specs


def make_suite(n, difficulty, seed, out_dir, size=64, scale=0.45, channels=1):
    """Write ``n`` scenes (image + ``_gt`` mask PGM/PPM) and ``manifest.tsv``.

    Returns the manifest path.
    """
    specs = suite_specs(n, difficulty, seed, size, scale, channels)
    os.makedirs(out_dir, exist_ok=True)
    ext = ".pgm" if channels == 1 else ".ppm"
    lines = [
        "# unfoldseg-manifest v1\n",
        f"# size={size} scale={scale!r} channels={channels} difficulty={difficulty}\n",
    ]
    for i, spec in enumerate(specs):
        c, gt = generate(spec)
        name = f"scene_{i:04d}{ext}"
        img, msk = image_bytes(c), image_bytes(gt)
        with open(os.path.join(out_dir, name), "wb") as fh:
            fh.write(img)
        with open(os.path.join(out_dir, mask_path_for(name)), "wb") as fh:
            fh.write(msk)
        checksum = hashlib.sha256(img + msk).hexdigest()
        lines.append(
            "\t".join([name, str(spec.seed), spec.shape, spec.texture,
                       repr(spec.delta), repr(spec.sigma), checksum]) + "\n"
        )
    path = os.path.join(out_dir, "manifest.tsv")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(lines)
    return path


def read_manifest(path) -> Manifest:
    header = {"size": "64", "scale": "0.45", "channels": "1", "difficulty": "custom"}
    entries = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                for token in line[1:].split():
                    if "=" in token:
                        k, v = token.split("=", 1)
                        header[k] = v
                continue
            fields = line.split("\t")
            if len(fields) != 7:
                raise InvalidArgumentError(f"{path}:{lineno}: expected 7 tab-separated fields")
            name, seed, shape, texture, delta, sigma, checksum = fields
            entries.append(
                ManifestEntry(name, int(seed), shape, texture, float(delta), float(sigma), checksum)
            )
    return Manifest(
        size=int(header["size"]), scale=float(header["scale"]), channels=int(header["channels"]),
        difficulty=header["difficulty"], entries=entries, root=os.path.dirname(os.fspath(path)),
    )


def verify_manifest(manifest: Manifest):
    """Regenerate every scene from its spec; return entries whose checksum differs."""
    bad = []
    for entry in manifest.entries:
        c, gt = generate(manifest.spec(entry))
        if scene_checksum(c, gt) != entry.checksum:
            bad.append(entry)
    return bad
