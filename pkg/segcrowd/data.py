"""
SegCrowd - Data Pipeline

Responsibilities:
- Dataset manifests: JSON documents listing PGM images with their head
  points, optional scene id and ROI polygon
- Training-set augmentation: random quarter-area crops, horizontal flips,
  Gaussian pixel noise
- Synthetic dot-annotated scenes for desk-scale runs

Augmentation draws from a generator derived from (seed, image index), so the
output does not depend on the number of workers.
"""

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence, Union

import cv2
import numpy as np

from .config import AugmentationConfig
from .errors import DomainError, InputSizeError, ManifestError, SceneGenerationError
from .formats import read_pgm, to_uint8, write_pgm
from .groundtruth import AnnotatedImage
from .logging_utils import RunLogger
from .utils import dump_json, ensure_dir, item_rng
from .validation import AnnotationValidator


SPLITS = ("train", "test")
MANIFEST_NAME = "manifest.json"

RngLike = Union[int, np.random.Generator]


def _rng(seed: RngLike) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


# ======================================================================
# Manifests
# ======================================================================

@dataclass
class ManifestEntry:
    """One image of a dataset manifest."""
    path: str
    points: list[list[float]] = field(default_factory=list)
    scene: Optional[str] = None
    roi: Optional[list[list[float]]] = None

    @property
    def image_id(self) -> str:
        return Path(self.path).with_suffix("").as_posix()

    @property
    def count(self) -> int:
        return len(self.points)

    def to_dict(self) -> dict:
        data: dict[str, Any] = {
            "path": self.path,
            "points": [[float(r), float(c)] for r, c in self.points],
        }
        if self.scene is not None:
            data["scene"] = self.scene
        if self.roi is not None:
            data["roi"] = [[float(r), float(c)] for r, c in self.roi]
        return data


@dataclass
class DatasetManifest:
    """Manifest entries plus, once loaded, their annotated images."""
    entries: list[ManifestEntry] = field(default_factory=list)
    split: Optional[str] = None
    root: Path = field(default_factory=lambda: Path("."))
    images: list[AnnotatedImage] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def counts(self) -> list[int]:
        return [e.count for e in self.entries]

    @property
    def total_count(self) -> int:
        return sum(self.counts)

    def resolve(self, entry: ManifestEntry) -> Path:
        return self.root / entry.path

    def to_dict(self) -> dict:
        data: dict[str, Any] = {"images": [e.to_dict() for e in self.entries]}
        if self.split is not None:
            data["split"] = self.split
        return data


def _point_list(value: Any, what: str, entry_id: str) -> list[list[float]]:
    if not isinstance(value, list):
        raise ManifestError(f"{what} must be a list of [row, col] pairs", entry_id=entry_id)
    pairs = []
    for k, p in enumerate(value):
        if (
            not isinstance(p, (list, tuple)) or len(p) != 2
            or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in p)
        ):
            raise ManifestError(f"{what}[{k}] is not a numeric [row, col] pair: {p!r}", entry_id=entry_id)
        pairs.append([float(p[0]), float(p[1])])
    return pairs


def parse_manifest(text: str, root: Path = Path("."), source: str = "<manifest>") -> DatasetManifest:
    """Parse manifest JSON text; image paths resolve against root."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ManifestError(f"{source}: invalid JSON ({e.msg})", line=e.lineno) from None
    if not isinstance(doc, dict) or not isinstance(doc.get("images"), list):
        raise ManifestError(f"{source}: expected an object with an \"images\" list", line=1)
    split = doc.get("split")
    if split is not None and split not in SPLITS:
        raise ManifestError(f"{source}: split must be one of {SPLITS}, got {split!r}")

    entries = []
    for index, raw in enumerate(doc["images"]):
        if not isinstance(raw, dict) or not isinstance(raw.get("path"), str):
            raise ManifestError(f"{source}: entry needs a string \"path\"", entry_id=f"#{index}")
        entry_id = raw["path"]
        scene = raw.get("scene")
        if scene is not None and not isinstance(scene, (str, int)):
            raise ManifestError("scene must be a string", entry_id=entry_id)
        roi = raw.get("roi")
        entries.append(ManifestEntry(
            path=raw["path"],
            points=_point_list(raw.get("points", []), "points", entry_id),
            scene=str(scene) if scene is not None else None,
            roi=_point_list(roi, "roi", entry_id) if roi is not None else None,
        ))
    return DatasetManifest(entries=entries, split=split, root=Path(root))


def read_manifest(path: Path) -> DatasetManifest:
    """Parse a manifest file without loading its images."""
    path = Path(path)
    if not path.exists():
        raise ManifestError(f"manifest not found: {path}")
    return parse_manifest(path.read_text(encoding="utf-8"), root=path.parent, source=str(path))


def write_manifest(path: Path, manifest: DatasetManifest) -> Path:
    """Deterministic JSON (fixed key order, indent 2, floats for coordinates)."""
    path = Path(path)
    ensure_dir(path.parent)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(dump_json(manifest.to_dict()))
    return path


def load_manifest(
    path: Path,
    validator: Optional[AnnotationValidator] = None,
) -> DatasetManifest:
    """
    Read a manifest and its images, validating every entry.

    Raises:
        ManifestError: malformed JSON (with line number) or an entry that
            fails validation (with entry id)
    """
    manifest = read_manifest(path)
    validator = validator or AnnotationValidator()
    for entry in manifest.entries:
        image_path = manifest.resolve(entry)
        if not image_path.exists():
            raise ManifestError(f"image file not found: {image_path}", entry_id=entry.path)
        img = AnnotatedImage(
            pixels=read_pgm(image_path),
            points=np.asarray(entry.points, dtype=np.float64).reshape(-1, 2),
            image_id=entry.image_id,
            scene=entry.scene,
            roi=entry.roi,
        )
        result = validator.validate_image(img)
        if not result.is_valid:
            first = result.failures[0]
            raise ManifestError(first.message, entry_id=entry.path, suggested_fix=first.suggested_fix)
        manifest.images.append(img)
    validator.log_summary()
    return manifest


def write_dataset(
    images: Sequence[AnnotatedImage],
    out_dir: Path,
    split: Optional[str] = None,
) -> DatasetManifest:
    """Write images as PGM under out_dir/images/ plus out_dir/manifest.json."""
    out_dir = ensure_dir(Path(out_dir))
    entries = []
    for img in images:
        rel = Path("images") / f"{img.image_id}.pgm"
        write_pgm(out_dir / rel, img.pixels)
        entries.append(ManifestEntry(
            path=rel.as_posix(),
            points=img.points.tolist(),
            scene=img.scene,
            roi=img.roi.tolist() if img.roi is not None else None,
        ))
    manifest = DatasetManifest(entries=entries, split=split, root=out_dir, images=list(images))
    write_manifest(out_dir / MANIFEST_NAME, manifest)
    return manifest


# ======================================================================
# Augmentation
# ======================================================================

def patch_dims(height: int, width: int, fraction: float = 0.5) -> tuple[int, int]:
    return math.ceil(height * fraction), math.ceil(width * fraction)


def crop_patches(
    img: AnnotatedImage,
    cfg: AugmentationConfig,
    rng: RngLike,
    min_size: int = 1,
) -> list[AnnotatedImage]:
    """
    cfg.patches_per_image uniformly placed crops of ceil(H * f) x ceil(W * f).

    Points inside a crop are kept and shifted into its frame. Crops carry no
    ROI.
    """
    rng = _rng(rng)
    ph, pw = patch_dims(img.height, img.width, cfg.patch_fraction)
    if ph < min_size or pw < min_size:
        raise InputSizeError(
            f"crop_patches: image {img.height}x{img.width} gives {ph}x{pw} patches, "
            f"below the minimum {min_size}",
            suggested_fix="Use images at least twice the network minimum per axis",
        )
    patches = []
    for k in range(cfg.patches_per_image):
        r0 = int(rng.integers(0, img.height - ph + 1))
        c0 = int(rng.integers(0, img.width - pw + 1))
        pts = img.points
        keep = (
            (pts[:, 0] >= r0) & (pts[:, 0] < r0 + ph)
            & (pts[:, 1] >= c0) & (pts[:, 1] < c0 + pw)
        )
        patches.append(AnnotatedImage(
            pixels=img.pixels[r0:r0 + ph, c0:c0 + pw].copy(),
            points=pts[keep] - np.array([r0, c0], dtype=np.float64),
            image_id=f"{img.image_id}_p{k}",
            scene=img.scene,
        ))
    return patches


def hflip(img: AnnotatedImage) -> AnnotatedImage:
    """
    Mirror about the vertical axis. A point on pixel column c moves to
    column W - 1 - c, keeping its sub-pixel offset.
    """
    w = img.width

    def mirror(pts: np.ndarray) -> np.ndarray:
        out = pts.copy()
        cols = np.floor(pts[:, 1])
        out[:, 1] = (w - 1 - cols) + (pts[:, 1] - cols)
        return out

    roi = None
    if img.roi is not None:
        roi = img.roi.copy()
        roi[:, 1] = w - roi[:, 1]
    return img.replace(
        pixels=img.pixels[:, ::-1].copy(),
        points=mirror(img.points),
        roi=roi,
    )


def add_noise(img: AnnotatedImage, std: float, seed: RngLike) -> AnnotatedImage:
    """Additive Gaussian pixel noise, clamped to [0, 1]; points untouched."""
    if std < 0:
        raise DomainError(f"add_noise: std must be >= 0, got {std}")
    if std == 0:
        return img.replace(pixels=img.pixels.copy())
    noise = _rng(seed).normal(0.0, std, size=img.shape)
    return img.replace(pixels=np.clip(img.pixels + noise, 0.0, 1.0))


def augment_image(
    img: AnnotatedImage,
    cfg: AugmentationConfig,
    rng: RngLike,
    min_size: int = 1,
) -> list[AnnotatedImage]:
    """Crops of one image, each optionally flipped and noised."""
    rng = _rng(rng)
    out = []
    for patch in crop_patches(img, cfg, rng, min_size):
        if cfg.hflip and rng.random() < cfg.flip_probability:
            patch = hflip(patch)
        if cfg.noise_std > 0:
            patch = add_noise(patch, cfg.noise_std, rng)
        out.append(patch)
    return out


def augment_dataset(
    images: Sequence[AnnotatedImage],
    cfg: AugmentationConfig,
    min_size: int = 1,
    workers: Optional[int] = None,
) -> list[AnnotatedImage]:
    """
    Training set for a list of images, in image order.

    With augmentation disabled the images are returned unchanged.
    """
    if not cfg.enabled:
        return list(images)
    workers = workers or cfg.workers

    def one(index: int) -> list[AnnotatedImage]:
        return augment_image(images[index], cfg, item_rng(cfg.seed, index), min_size)

    if workers <= 1:
        batches = [one(i) for i in range(len(images))]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            batches = list(pool.map(one, range(len(images))))
    return [patch for batch in batches for patch in batch]


# ======================================================================
# Synthetic scenes
# ======================================================================

@dataclass
class SceneStyle:
    """Appearance of synthetic scenes."""
    radius_range: tuple[float, float] = (2.0, 4.0)
    brightness_range: tuple[float, float] = (0.7, 1.0)
    background_range: tuple[float, float] = (0.1, 0.35)
    texture_sigma: float = 3.0
    min_separation: float = 3.0
    max_attempts: int = 200


class SceneSynthesizer:
    """
    Renders bright discs ("heads") on a blurred-noise background; the disc
    centers are the annotations.
    """

    MODULE_NAME = "SceneSynthesizer"

    def __init__(self, style: Optional[SceneStyle] = None, logger: Optional[RunLogger] = None):
        self.style = style or SceneStyle()
        self.logger = logger or RunLogger(self.MODULE_NAME)
        self._scenes = 0
        self._heads = 0
        self.logger.log_init(
            radius_range=self.style.radius_range,
            min_separation=self.style.min_separation,
        )

    def _capacity(self, height: int, width: int) -> int:
        spacing = self.style.min_separation
        return int((height / spacing + 1) * (width / spacing + 1))

    def render(
        self,
        seed: int,
        count_range: tuple[int, int],
        dims: tuple[int, int],
        image_id: Optional[str] = None,
        scene: Optional[str] = None,
    ) -> AnnotatedImage:
        lo, hi = int(count_range[0]), int(count_range[1])
        h, w = int(dims[0]), int(dims[1])
        if lo < 0 or hi < lo:
            raise DomainError(f"synth_scene: invalid count range [{lo}, {hi}]")
        if h < 1 or w < 1:
            raise DomainError(f"synth_scene: invalid dims {h}x{w}")
        style = self.style
        rng = np.random.default_rng(seed)
        n = int(rng.integers(lo, hi + 1))
        if n > self._capacity(h, w):
            raise SceneGenerationError(
                f"synth_scene: {n} heads cannot be packed into {h}x{w} at separation {style.min_separation}",
                suggested_fix="Lower the count range or enlarge the image",
            )

        lo_bg, hi_bg = style.background_range
        texture = cv2.GaussianBlur(rng.random((h, w)), (0, 0), sigmaX=style.texture_sigma)
        span = texture.max() - texture.min()
        texture = (texture - texture.min()) / span if span > 0 else np.zeros_like(texture)
        pixels = lo_bg + (hi_bg - lo_bg) * texture

        centers = np.zeros((0, 2))
        rows, cols = np.ogrid[:h, :w]
        min_sq = style.min_separation ** 2
        for k in range(n):
            for _ in range(style.max_attempts):
                cand = np.array([rng.integers(0, h), rng.integers(0, w)], dtype=np.float64)
                if not len(centers) or np.min(((centers - cand) ** 2).sum(axis=1)) >= min_sq:
                    break
            else:
                raise SceneGenerationError(
                    f"synth_scene: placed {k} of {n} heads in {h}x{w} before running out of attempts",
                    suggested_fix="Lower the count range or enlarge the image",
                )
            centers = np.vstack([centers, cand])
            radius = rng.uniform(*style.radius_range)
            level = rng.uniform(*style.brightness_range)
            disc = (rows - cand[0]) ** 2 + (cols - cand[1]) ** 2 <= radius * radius
            pixels[disc] = np.maximum(pixels[disc], level)

        self._scenes += 1
        self._heads += n
        img = AnnotatedImage(
            pixels=to_uint8(pixels).astype(np.float64) / 255.0,
            points=centers,
            image_id=image_id or f"synth_{seed}",
            scene=scene,
        )
        self.logger.log_output("scene", image_id=img.image_id, count=n, dims=[h, w])
        return img

    def render_many(
        self,
        seed: int,
        num_images: int,
        count_range: tuple[int, int],
        dims: tuple[int, int],
        scenes: int = 0,
    ) -> list[AnnotatedImage]:
        """
        num_images scenes with per-image seeds derived from seed; with
        scenes > 0 images are assigned round-robin to scene ids S1..Sn.
        """
        images = []
        for i in range(num_images):
            child = int(item_rng(seed, i).integers(0, 2**31 - 1))
            scene = f"S{i % scenes + 1}" if scenes > 0 else None
            images.append(self.render(child, count_range, dims, image_id=f"img_{i:04d}", scene=scene))
        self.logger.info("Synthetic dataset rendered", images=num_images, heads=sum(i.count for i in images))
        return images

    def get_statistics(self) -> dict:
        return {
            "scenes": self._scenes,
            "heads": self._heads,
            "avg_heads_per_scene": self._heads / max(self._scenes, 1),
        }


def synth_scene(
    seed: int,
    count_range: tuple[int, int],
    dims: tuple[int, int],
    logger: Optional[RunLogger] = None,
) -> AnnotatedImage:
    return SceneSynthesizer(logger=logger).render(seed, count_range, dims)
