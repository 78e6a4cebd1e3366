"""Procedural multi-face forgery scenes and test-time perturbations.

Scenes contain 2-6 textured ellipse "faces" with eye and mouth blobs on a
smooth textured background. Tampering swaps a face interior for a texture
with different noise statistics, smooths it, and blends it in with a soft
boundary that stays inside the face mask. Genuine and tampered renders of the
same scene are identical outside the mask.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image as PILImage
from scipy import ndimage

logger = logging.getLogger(__name__)

GENUINE, MANIPULATED = 0, 1
PERTURB_FAMILIES = ("color", "edge", "corruption", "convolution", "external")
SPLITS = ("train", "val", "test")


@dataclass
class SceneConfig:
    height: int = 64
    width: int = 64
    min_faces: int = 2
    max_faces: int = 6
    tamper_prob: float = 0.5
    fake_ratio: float = 0.5
    radius_range: tuple = (0.12, 0.2)
    blend_px: float = 2.0
    smooth_sigma: float = 1.5
    max_mask_fraction: float = 0.5
    placement_retries: int = 200

    def validate(self):
        if self.height % 32 or self.width % 32 or self.height < 32 or self.width < 32:
            raise ValueError(
                f"image size must be a positive multiple of 32, got {self.height}x{self.width}"
            )
        if not 1 <= self.min_faces <= self.max_faces:
            raise ValueError(f"invalid face range [{self.min_faces}, {self.max_faces}]")
        for name in ("tamper_prob", "fake_ratio", "max_mask_fraction"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {value}")
        lo, hi = self.radius_range
        if not 0 < lo <= hi:
            raise ValueError(f"invalid radius_range {self.radius_range}")
        return self


@dataclass
class PerturbConfig:
    families: tuple = PERTURB_FAMILIES
    intensity: float = 0.5
    seed: int = 0

    def validate(self):
        unknown = set(self.families) - set(PERTURB_FAMILIES)
        if unknown:
            raise ValueError(f"unknown perturbation families {sorted(unknown)}")
        if not self.families:
            raise ValueError("at least one perturbation family must be enabled")
        if not 0.0 <= self.intensity <= 1.0:
            raise ValueError(f"intensity must lie in [0, 1], got {self.intensity}")
        return self


@dataclass
class Sample:
    """``image`` is (3, H, W) float64 in [0, 1]; ``gt_mask`` is (H, W) uint8 in {0, 1}."""

    image: np.ndarray
    gt_mask: np.ndarray
    label: int
    seed: int = 0
    n_faces: int = 0


@dataclass
class Face:
    cy: float
    cx: float
    ry: float
    rx: float
    color: np.ndarray
    tampered: bool = False
    extra: dict = field(default_factory=dict)


def _smooth_noise(rng, shape, sigma):
    noise = rng.standard_normal(shape)
    noise = ndimage.gaussian_filter(noise, sigma)
    return noise / (noise.std() + 1e-12)


def _place_faces(cfg, rng, n_faces):
    h, w = cfg.height, cfg.width
    size = min(h, w)
    faces = []
    for _ in range(n_faces):
        for _ in range(cfg.placement_retries):
            ry = size * rng.uniform(*cfg.radius_range)
            rx = ry * rng.uniform(0.75, 0.95)
            cy = rng.uniform(ry + 1, h - ry - 1)
            cx = rng.uniform(rx + 1, w - rx - 1)
            # keep a gap so tampered regions never touch
            if all(
                np.hypot(cy - f.cy, cx - f.cx) > max(ry, rx) + max(f.ry, f.rx) + 3 for f in faces
            ):
                color = np.array([0.78, 0.57, 0.45]) * rng.uniform(0.7, 1.15) + rng.normal(0, 0.04, 3)
                faces.append(Face(cy, cx, ry, rx, np.clip(color, 0.05, 0.95)))
                break
        else:
            logger.info("placed %d of %d faces after bounded retries", len(faces), n_faces)
            break
    return faces


def _face_region(face, yy, xx):
    return ((yy - face.cy) / face.ry) ** 2 + ((xx - face.cx) / face.rx) ** 2 <= 1.0


def _render_genuine(cfg, rng, faces):
    h, w = cfg.height, cfg.width
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    base = rng.uniform(0.15, 0.85, 3)
    tint = rng.normal(0, 0.12, 3)
    low = _smooth_noise(rng, (h, w), sigma=max(h, w) / 8)
    image = base[:, None, None] + tint[:, None, None] * low[None]
    image += 0.015 * rng.standard_normal((3, h, w))
    for face in faces:
        region = _face_region(face, yy, xx)
        skin = face.color[:, None, None] + 0.03 * _smooth_noise(rng, (h, w), 1.0)[None]
        skin += 0.02 * rng.standard_normal((3, h, w))
        image = np.where(region[None], skin, image)
        for dy, dx, r, shade in (
            (-0.3, -0.35, 0.14, 0.15),
            (-0.3, 0.35, 0.14, 0.15),
            (0.4, 0.0, 0.18, 0.35),
        ):
            blob = ((yy - face.cy - dy * face.ry) / (r * face.ry * (0.6 if dy > 0 else 1))) ** 2
            blob += ((xx - face.cx - dx * face.rx) / (r * face.rx * (2.0 if dy > 0 else 1))) ** 2
            image = np.where((blob <= 1.0)[None], shade * face.color[:, None, None], image)
    return np.clip(image, 0.0, 1.0)


def _tamper(cfg, rng, image, faces):
    h, w = cfg.height, cfg.width
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    out = image.copy()
    mask = np.zeros((h, w), dtype=np.uint8)
    for face in faces:
        if not face.tampered:
            continue
        region = _face_region(face, yy, xx)
        color = np.clip(face.color + rng.normal(0, 0.08, 3), 0.05, 0.95)
        swap = color[:, None, None] + 0.06 * _smooth_noise(rng, (h, w), 2.5)[None]
        swap += 0.06 * rng.standard_normal((3, h, w))
        # darker features at shifted positions, as a re-enacted face would have
        for dy, dx in ((-0.25, -0.3), (-0.25, 0.3), (0.45, 0.0)):
            blob = ((yy - face.cy - dy * face.ry) / (0.13 * face.ry)) ** 2
            blob += ((xx - face.cx - dx * face.rx) / (0.2 * face.rx)) ** 2
            swap = np.where((blob <= 1.0)[None], 0.25 * color[:, None, None], swap)
        swap = np.stack([ndimage.gaussian_filter(c, cfg.smooth_sigma) for c in swap])
        inside = ndimage.distance_transform_edt(region)
        alpha = np.clip(inside / cfg.blend_px, 0.0, 1.0) if cfg.blend_px > 0 else region * 1.0
        out = alpha[None] * swap + (1 - alpha[None]) * out
        mask |= region.astype(np.uint8)
    return np.clip(out, 0.0, 1.0), mask


def _enforce_area(cfg, faces):
    budget = cfg.max_mask_fraction * cfg.height * cfg.width
    used = 0.0
    for face in faces:
        if face.tampered:
            area = np.pi * face.ry * face.rx
            if used + area > budget and used > 0:
                face.tampered = False
            else:
                used += area


def render_scene(cfg, seed):
    """Scene layout and genuine render for ``seed``: returns ``(faces, image, rng)``.

    The returned generator continues the scene's stream and drives tampering.
    """
    cfg.validate()
    rng = np.random.default_rng(seed)
    n_faces = int(rng.integers(cfg.min_faces, cfg.max_faces + 1))
    faces = _place_faces(cfg, rng, n_faces)
    image = _render_genuine(cfg, rng, faces)
    return faces, image, rng


def generate_sample(cfg, seed, manipulated=None):
    """Render one sample.

    ``manipulated=None`` tampers each face with ``cfg.tamper_prob``;
    ``True`` does the same but forces at least one tampered face; ``False``
    renders the genuine scene.
    """
    faces, image, rng = render_scene(cfg, seed)
    if manipulated is not False and faces:
        picks = rng.random(len(faces)) < cfg.tamper_prob
        if manipulated and not picks.any():
            picks[rng.integers(len(faces))] = True
        for face, pick in zip(faces, picks):
            face.tampered = bool(pick)
        _enforce_area(cfg, faces)
    image, mask = _tamper(cfg, rng, image, faces)
    label = MANIPULATED if mask.any() else GENUINE
    return Sample(image, mask, label, seed=seed, n_faces=len(faces))


# --- perturbations -----------------------------------------------------------


def _color(image, rng, s):
    out = image + rng.uniform(-0.2, 0.2) * s
    mean = out.mean()
    out = (out - mean) * (1 + rng.uniform(-0.3, 0.3) * s) + mean
    angle = rng.uniform(-np.pi / 6, np.pi / 6) * s
    to_yiq = np.array([[0.299, 0.587, 0.114], [0.596, -0.274, -0.322], [0.211, -0.523, 0.312]])
    rot = np.array([[1, 0, 0], [0, np.cos(angle), -np.sin(angle)], [0, np.sin(angle), np.cos(angle)]])
    mix = np.linalg.inv(to_yiq) @ rot @ to_yiq
    return np.einsum("ij,jhw->ihw", mix, out)


def _edge(image, rng, s):
    blurred = np.stack([ndimage.gaussian_filter(c, 1.0) for c in image])
    return image + rng.uniform(0.5, 1.5) * s * (image - blurred)


def _corruption(image, rng, s, block=8):
    out = image + rng.normal(0, 0.05 * s, image.shape)
    c, h, w = out.shape
    hb, wb = h // block * block, w // block * block
    blocks = out[:, :hb, :wb].reshape(c, hb // block, block, wb // block, block)
    means = blocks.mean(axis=(2, 4), keepdims=True)
    levels = max(2, int(round(64 * (1 - s))) + 2)
    quant = np.round((blocks - means) * levels) / levels + means
    out[:, :hb, :wb] = (blocks + s * (quant - blocks)).reshape(c, hb, wb)
    return out


def _convolution(image, rng, s):
    if rng.random() < 0.5:
        sigma = 2.0 * s
        return np.stack([ndimage.gaussian_filter(c, sigma) for c in image])
    length = 1 + int(round(6 * s))
    kernel = np.zeros((length, length))
    if rng.random() < 0.5:
        kernel[length // 2, :] = 1.0
    else:
        np.fill_diagonal(kernel, 1.0)
    kernel /= kernel.sum()
    return np.stack([ndimage.convolve(c, kernel, mode="reflect") for c in image])


def _external(image, rng, s):
    _, h, w = image.shape
    ph = int(rng.integers(max(1, h // 8), max(2, h // 2)))
    pw = int(rng.integers(max(1, w // 8), max(2, w // 2)))
    y0 = int(rng.integers(0, h - ph + 1))
    x0 = int(rng.integers(0, w - pw + 1))
    out = image.copy()
    color = rng.uniform(0, 1, 3)[:, None, None]
    alpha = 0.5 * s
    out[:, y0 : y0 + ph, x0 : x0 + pw] = (1 - alpha) * out[:, y0 : y0 + ph, x0 : x0 + pw] + alpha * color
    return out


_FAMILY_FNS = {
    "color": _color,
    "edge": _edge,
    "corruption": _corruption,
    "convolution": _convolution,
    "external": _external,
}


def perturb(image, cfg, rng=None):
    """Apply a random non-empty subset of the enabled families, then clip to [0, 1]."""
    cfg.validate()
    image = np.asarray(image, dtype=np.float64)
    if cfg.intensity == 0:
        return image.copy()
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    families = list(cfg.families)
    chosen = [f for f in families if rng.random() < 0.5]
    if not chosen:
        chosen = [families[int(rng.integers(len(families)))]]
    out = image
    for name in families:
        if name in chosen:
            out = _FAMILY_FNS[name](out, rng, cfg.intensity)
    return np.clip(out, 0.0, 1.0)


# --- persistence ---------------------------------------------------------------

SPLIT_OFFSETS = {"train": 0, "val": 1, "test": 2}
_SPLIT_STRIDE = 1_000_003


def split_seed(seed, split):
    return seed + SPLIT_OFFSETS[split] * _SPLIT_STRIDE


def to_uint8(image):
    """(3, H, W) float in [0, 1] to (H, W, 3) uint8."""
    return np.round(np.clip(image, 0, 1) * 255).astype(np.uint8).transpose(1, 2, 0)


def save_sample(sample, image_path, mask_path):
    PILImage.fromarray(to_uint8(sample.image), mode="RGB").save(image_path)
    PILImage.fromarray((sample.gt_mask > 0).astype(np.uint8) * 255, mode="L").save(mask_path)


def build_split(root, n_train, n_val, n_test, cfg, seed=0):
    """Write ``root/{train,val,test}/{images,masks}/NNNNN.png`` plus ``manifest.jsonl`` per split.

    Each sample is manipulated with probability ``cfg.fake_ratio``. Returns
    all manifest records.
    """
    cfg.validate()
    counts = {"train": n_train, "val": n_val, "test": n_test}
    for split, n in counts.items():
        if n < 0:
            raise ValueError(f"{split} count must be >= 0, got {n}")
    root = Path(root)
    records = []
    for split, n in counts.items():
        base = split_seed(seed, split)
        image_dir = root / split / "images"
        mask_dir = root / split / "masks"
        try:
            image_dir.mkdir(parents=True, exist_ok=True)
            mask_dir.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise OSError(f"cannot create dataset directory under {root / split}: {exc}") from exc
        split_records = []
        for index in range(n):
            sample_seed = base + index
            manipulated = bool(np.random.default_rng([sample_seed, 7]).random() < cfg.fake_ratio)
            sample = generate_sample(cfg, sample_seed, manipulated=manipulated)
            name = f"{index:05d}.png"
            try:
                save_sample(sample, image_dir / name, mask_dir / name)
            except OSError as exc:
                raise OSError(f"cannot write sample {image_dir / name}: {exc}") from exc
            split_records.append(
                {
                    "split": split,
                    "index": index,
                    "image": f"{split}/images/{name}",
                    "mask": f"{split}/masks/{name}",
                    "label": int(sample.label),
                    "seed": int(sample_seed),
                    "n_faces": int(sample.n_faces),
                }
            )
        with open(root / split / "manifest.jsonl", "w") as fh:
            for record in split_records:
                fh.write(json.dumps(record, sort_keys=True) + "\n")
        records.extend(split_records)
    return records


def read_manifest(root, split):
    path = Path(root) / split / "manifest.jsonl"
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def load_image(path):
    """Read an RGB image file as (3, H, W) float64 in [0, 1]."""
    with PILImage.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.float64).transpose(2, 0, 1) / 255.0


def load_split(root, split):
    """Return ``(images (N, 3, H, W), masks (N, H, W), labels (N,), records)``."""
    records = read_manifest(root, split)
    root = Path(root)
    images, masks = [], []
    for record in records:
        images.append(load_image(root / record["image"]))
        with PILImage.open(root / record["mask"]) as m:
            masks.append((np.asarray(m.convert("L")) > 127).astype(np.uint8))
    labels = np.array([r["label"] for r in records], dtype=np.int64)
    if not records:
        return np.zeros((0, 3, 0, 0)), np.zeros((0, 0, 0), np.uint8), labels, records
    return np.stack(images), np.stack(masks), labels, records
