"""Synthetic tiled-slide corpus and patch-manifest machinery.

A slide is an RGB image plus a per-pixel class mask. The generator partitions
the plane into seeded Voronoi blobs, assigns each blob a class, and renders
every class with its own base color and procedural texture so classes are
separable by local statistics. Class 0 is a near-white background.

Extraction produces patch records in two flavors: unlabeled center/neighbor
groups for contrastive pretraining, and non-overlapping labeled grid patches
for the linear probe. Records round-trip through a line-delimited manifest.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np
from PIL import Image

from .config import CorpusConfig
from .errors import ExtractionError, ManifestError

# The 8 neighbor offsets of a tile, in units of the patch size, row-major.
NEIGHBOR_OFFSETS: tuple[tuple[int, int], ...] = (
    (-1, -1), (0, -1), (1, -1),
    (-1, 0), (1, 0),
    (-1, 1), (0, 1), (1, 1),
)

ROLE_CENTER = "center"
SPLIT_UNLABELED = "unlabeled"
SPLIT_TRAIN = "train"
SPLIT_TEST = "test"
SPLITS = (SPLIT_UNLABELED, SPLIT_TRAIN, SPLIT_TEST)

MANIFEST_MAGIC = "#patch-manifest v1"
_MANIFEST_FIELDS = ("slide_id", "x", "y", "size", "role", "group_id", "label", "split")

# Seed-stream tags keeping per-purpose RNGs independent under one corpus seed.
_STREAM_TEXTURE = 0
_STREAM_UNLABELED = 1
_STREAM_LABELED = 2


def role_nearby(k: int) -> str:
    if not 0 <= k < len(NEIGHBOR_OFFSETS):
        raise ValueError(f"neighbor slot {k} outside [0, 8)")
    return f"nearby{k}"


def parse_role(role: str) -> int | None:
    """Return the neighbor slot for a nearby role, or None for a center."""
    if role == ROLE_CENTER:
        return None
    if role.startswith("nearby"):
        try:
            k = int(role[len("nearby"):])
        except ValueError:
            raise ValueError(f"malformed role {role!r}") from None
        if 0 <= k < len(NEIGHBOR_OFFSETS):
            return k
    raise ValueError(f"malformed role {role!r}")


@dataclass
class SlideImage:
    """One synthetic slide: RGB pixels in [0, 1] plus a per-pixel class mask."""

    slide_id: str
    pixels: np.ndarray  # (H, W, 3) float32 in [0, 1]
    mask: np.ndarray  # (H, W) uint8 class ids

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class PatchRecord:
    """One extracted patch: location, role within its group, label and split."""

    slide_id: str
    x: int
    y: int
    size: int
    role: str
    group_id: int
    label: int | None
    split: str


@dataclass
class Manifest:
    """Header plus ordered patch records; the on-disk corpus description."""

    patch_size: int
    nearby_count: int
    num_classes: int
    seed: int
    records: list[PatchRecord]


@dataclass
class PatchGroup:
    """Materialized pixel data for one center patch and its chosen neighbors."""

    slide_id: str
    group_id: int
    center: np.ndarray  # (S, S, 3) float32
    nearby: list[np.ndarray]


# ---------------------------------------------------------------------------
# Synthetic slide generation
# ---------------------------------------------------------------------------

# Base colors per class. Classes 1/2 and 3/4 deliberately share a color so
# that mean color alone cannot separate them; their textures differ instead.
_BASE_COLORS = np.array(
    [
        (0.955, 0.955, 0.955),  # 0: near-white background
        (0.760, 0.540, 0.640),  # 1: pink, horizontal stripes
        (0.760, 0.540, 0.640),  # 2: pink, diagonal stripes
        (0.520, 0.470, 0.700),  # 3: violet, vertical stripes
        (0.520, 0.470, 0.700),  # 4: violet, checkerboard
        (0.620, 0.690, 0.540),  # 5: olive, dot lattice
    ],
    dtype=np.float64,
)

_EXTRA_COLOR_RNG_SPAN = (0.35, 0.85)  # base colors for classes beyond the palette

# Texture rendering knobs. The noise and per-slide frequency wobble are what
# make raw local statistics unreliable across slides.
TEXTURE_AMPLITUDE = 0.16
NOISE_SIGMA = 0.18
ILLUMINATION_AMPLITUDE = 0.10
FREQ_WOBBLE = (0.85, 1.2)


def _class_base_colors(num_classes: int, rng: np.random.Generator) -> np.ndarray:
    colors = _BASE_COLORS[: min(num_classes, len(_BASE_COLORS))].copy()
    if num_classes > len(colors):
        lo, hi = _EXTRA_COLOR_RNG_SPAN
        extra = rng.uniform(lo, hi, size=(num_classes - len(colors), 3))
        colors = np.concatenate([colors, extra], axis=0)
    return colors


def _texture_field(
    cls: int, xx: np.ndarray, yy: np.ndarray, phase: np.ndarray, freq_scale: float
) -> np.ndarray:
    """Per-class oriented pattern in [-1, 1] over pixel coordinates.

    ``freq_scale`` wobbles the base wavelength per slide so that single-slide
    frequency statistics do not transfer directly across slides.
    """
    lam = (8.0 + 2.0 * (cls % 3)) * freq_scale
    kind = cls % 5
    if cls == 0:
        return np.zeros_like(xx)
    if kind == 1:  # horizontal stripes
        return np.sin(2 * np.pi * yy / lam + phase[0])
    if kind == 2:  # diagonal stripes
        return np.sin(2 * np.pi * (xx + yy) / (lam * math.sqrt(2.0)) + phase[0])
    if kind == 3:  # vertical stripes
        return np.sin(2 * np.pi * xx / lam + phase[0])
    if kind == 4:  # checkerboard
        return np.sin(2 * np.pi * xx / lam + phase[0]) * np.sin(2 * np.pi * yy / lam + phase[1])
    # dot lattice (kind == 0 for classes 5, 10, ...)
    gx = np.sin(2 * np.pi * xx / lam + phase[0])
    gy = np.sin(2 * np.pi * yy / lam + phase[1])
    return gx * gx * gy * gy * 2.0 - 1.0


def generate_synthetic_slide(
    config: CorpusConfig, seed: int, slide_id: str | None = None
) -> SlideImage:
    """Generate one seeded slide with a blob-partition mask and textured classes.

    Deterministic: the same (config, seed) yields byte-identical pixels and
    mask. Every class id in [0, num_classes) appears in the mask.
    """
    config.validate()
    if slide_id is None:
        slide_id = f"slide{seed:08d}"
    size = config.slide_size
    k = config.num_classes
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(_STREAM_TEXTURE,)))

    # Blob partition: several Voronoi sites per class, nearest-site labeling.
    sites_per_class = 3
    n_sites = k * sites_per_class
    sites = rng.uniform(0, size, size=(n_sites, 2))
    site_class = np.arange(n_sites) % k
    # Pin one site per class to a distinct coarse grid cell so small classes
    # cannot be swallowed entirely by a neighbor.
    grid = max(1, int(math.ceil(math.sqrt(k))))
    cell = size / grid
    for c in range(k):
        gx, gy = c % grid, c // grid
        sites[c] = (gx * cell + cell * 0.5, gy * cell + cell * 0.5)

    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    best = np.full((size, size), np.inf)
    mask = np.zeros((size, size), dtype=np.uint8)
    for s in range(n_sites):
        d2 = (xs - sites[s, 0]) ** 2 + (ys - sites[s, 1]) ** 2
        closer = d2 < best
        best[closer] = d2[closer]
        mask[closer] = site_class[s]

    colors = _class_base_colors(k, rng)
    pixels = colors[mask]  # (H, W, 3)

    # Oriented texture per class plus a slow illumination field and heavy white
    # noise (see the module constants above).
    freq_scale = float(rng.uniform(*FREQ_WOBBLE))
    phases = rng.uniform(0, 2 * np.pi, size=(k, 2))
    pattern = np.zeros((size, size), dtype=np.float64)
    for c in range(k):
        sel = mask == c
        if not sel.any():
            continue
        field = _texture_field(c, xs, ys, phases[c], freq_scale)
        pattern[sel] = field[sel]
    pattern[mask == 0] = 0.0
    pixels += TEXTURE_AMPLITUDE * pattern[..., None]

    illum = ILLUMINATION_AMPLITUDE * np.sin(
        2 * np.pi * xs / size + rng.uniform(0, 2 * np.pi)
    ) * np.sin(2 * np.pi * ys / size + rng.uniform(0, 2 * np.pi))
    pixels += illum[..., None]
    pixels += rng.normal(0.0, NOISE_SIGMA, size=pixels.shape)

    # Quantize to the 8-bit grid so PNG round trips are exact.
    quantized = np.clip(np.rint(pixels * 255.0), 0, 255).astype(np.uint8)
    return SlideImage(slide_id=slide_id, pixels=quantized.astype(np.float32) / 255.0, mask=mask)


# ---------------------------------------------------------------------------
# Patch extraction
# ---------------------------------------------------------------------------


def crop_patch(slide: SlideImage, x: int, y: int, size: int) -> np.ndarray:
    if x < 0 or y < 0 or x + size > slide.width or y + size > slide.height:
        raise ExtractionError(
            f"patch ({x},{y},{size}) exceeds slide {slide.slide_id} bounds"
        )
    return np.ascontiguousarray(slide.pixels[y : y + size, x : x + size])


def majority_label(mask_region: np.ndarray, num_classes: int) -> int:
    """Most frequent class id in the region; ties break to the lowest id."""
    counts = np.bincount(mask_region.ravel(), minlength=num_classes)
    return int(counts.argmax())


def extract_unlabeled_groups(
    slide: SlideImage,
    nearby_count: int,
    count: int,
    patch_size: int,
    seed: int,
) -> list[PatchRecord]:
    """Sample ``count`` center patches with ``nearby_count`` neighbors each.

    Centers are drawn from the interior margin so that all 8 neighbor
    positions stay inside the slide regardless of how many are kept; the kept
    neighbor slots are drawn uniformly without replacement per group. Centers
    may overlap one another.
    """
    if count < 1:
        raise ExtractionError("count must be >= 1")
    if not 0 <= nearby_count <= len(NEIGHBOR_OFFSETS):
        raise ExtractionError(f"nearby_count {nearby_count} outside [0, 8]")
    lo = patch_size
    hi_x = slide.width - 2 * patch_size
    hi_y = slide.height - 2 * patch_size
    if hi_x < lo or hi_y < lo:
        raise ExtractionError(
            f"slide {slide.slide_id} too small for centers with a full neighborhood"
        )
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed))
    records: list[PatchRecord] = []
    for gid in range(count):
        cx = int(rng.integers(lo, hi_x + 1))
        cy = int(rng.integers(lo, hi_y + 1))
        records.append(
            PatchRecord(slide.slide_id, cx, cy, patch_size, ROLE_CENTER, gid, None, SPLIT_UNLABELED)
        )
        slots = sorted(rng.choice(len(NEIGHBOR_OFFSETS), size=nearby_count, replace=False).tolist())
        for k in slots:
            dx, dy = NEIGHBOR_OFFSETS[k]
            records.append(
                PatchRecord(
                    slide.slide_id,
                    cx + dx * patch_size,
                    cy + dy * patch_size,
                    patch_size,
                    role_nearby(k),
                    gid,
                    None,
                    SPLIT_UNLABELED,
                )
            )
    return records


def extract_labeled_patches(
    slide: SlideImage,
    count: int,
    patch_size: int,
    seed: int,
    split: str,
    num_classes: int,
    start_group: int = 0,
) -> list[PatchRecord]:
    """Sample ``count`` non-overlapping grid patches, labeled by mask majority."""
    if split not in (SPLIT_TRAIN, SPLIT_TEST):
        raise ExtractionError(f"labeled split must be train or test, got {split!r}")
    cells_x = slide.width // patch_size
    cells_y = slide.height // patch_size
    capacity = cells_x * cells_y
    if count > capacity:
        raise ExtractionError(
            f"requested {count} labeled patches but slide {slide.slide_id} "
            f"has only {capacity} disjoint grid cells"
        )
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed))
    chosen = rng.choice(capacity, size=count, replace=False)
    records = []
    for offset, cell in enumerate(sorted(chosen.tolist())):
        cx = (cell % cells_x) * patch_size
        cy = (cell // cells_x) * patch_size
        region = slide.mask[cy : cy + patch_size, cx : cx + patch_size]
        records.append(
            PatchRecord(
                slide.slide_id,
                cx,
                cy,
                patch_size,
                ROLE_CENTER,
                start_group + offset,
                majority_label(region, num_classes),
                split,
            )
        )
    return records


# ---------------------------------------------------------------------------
# Manifest validation and I/O
# ---------------------------------------------------------------------------


def _rects_overlap(a: PatchRecord, b: PatchRecord) -> bool:
    return (
        a.x < b.x + b.size
        and b.x < a.x + a.size
        and a.y < b.y + b.size
        and b.y < a.y + a.size
    )


def validate_manifest(manifest: Manifest) -> None:
    """Check structural invariants; raises ManifestError on the first violation."""
    n = manifest.nearby_count
    if not 0 <= n <= len(NEIGHBOR_OFFSETS):
        raise ManifestError(f"header nearby count {n} outside [0, 8]")
    by_slide: dict[str, dict[int, list[PatchRecord]]] = {}
    labeled_by_slide: dict[str, list[PatchRecord]] = {}
    for rec in manifest.records:
        if rec.split not in SPLITS:
            raise ManifestError(f"unknown split {rec.split!r}")
        if rec.size != manifest.patch_size:
            raise ManifestError(
                f"record size {rec.size} differs from header patch_size {manifest.patch_size}"
            )
        if rec.x < 0 or rec.y < 0:
            raise ManifestError(f"negative patch position ({rec.x},{rec.y})")
        if rec.split == SPLIT_UNLABELED and rec.label is not None:
            raise ManifestError("unlabeled record carries a label")
        if rec.split != SPLIT_UNLABELED:
            if rec.label is None:
                raise ManifestError(f"{rec.split} record missing its label")
            if not 0 <= rec.label < manifest.num_classes:
                raise ManifestError(f"label {rec.label} outside [0, {manifest.num_classes})")
            labeled_by_slide.setdefault(rec.slide_id, []).append(rec)
        parse_role(rec.role)
        by_slide.setdefault(rec.slide_id, {}).setdefault(rec.group_id, []).append(rec)

    for slide_id, groups in by_slide.items():
        gids = sorted(groups)
        if gids != list(range(len(gids))):
            raise ManifestError(f"slide {slide_id}: group ids not contiguous from 0")
        for gid, recs in groups.items():
            split = recs[0].split
            centers = [r for r in recs if r.role == ROLE_CENTER]
            nearby = [r for r in recs if r.role != ROLE_CENTER]
            if len(centers) != 1:
                raise ManifestError(f"slide {slide_id} group {gid}: needs exactly one center")
            expected_nearby = n if split == SPLIT_UNLABELED else 0
            if len(nearby) != expected_nearby:
                raise ManifestError(
                    f"slide {slide_id} group {gid}: expected {expected_nearby} nearby "
                    f"records, found {len(nearby)}"
                )
            center = centers[0]
            slots = set()
            for r in nearby:
                k = parse_role(r.role)
                if k in slots:
                    raise ManifestError(
                        f"slide {slide_id} group {gid}: duplicate neighbor slot {k}"
                    )
                slots.add(k)
                dx, dy = NEIGHBOR_OFFSETS[k]
                if (r.x - center.x, r.y - center.y) != (dx * r.size, dy * r.size):
                    raise ManifestError(
                        f"slide {slide_id} group {gid}: neighbor slot {k} at offset "
                        f"({r.x - center.x},{r.y - center.y}), expected "
                        f"({dx * r.size},{dy * r.size})"
                    )

    for slide_id, recs in labeled_by_slide.items():
        recs = sorted(recs, key=lambda r: (r.x, r.y))
        for i, a in enumerate(recs):
            for b in recs[i + 1 :]:
                if b.x >= a.x + a.size:
                    break
                if _rects_overlap(a, b):
                    raise ManifestError(
                        f"slide {slide_id}: labeled patches at ({a.x},{a.y}) and "
                        f"({b.x},{b.y}) overlap"
                    )


def write_manifest(manifest: Manifest, path: str | Path) -> None:
    validate_manifest(manifest)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [
        f"{MANIFEST_MAGIC} patch_size={manifest.patch_size} "
        f"nearby={manifest.nearby_count} classes={manifest.num_classes} "
        f"seed={manifest.seed}"
    ]
    lines.append("\t".join(_MANIFEST_FIELDS))
    for rec in manifest.records:
        label = "" if rec.label is None else str(rec.label)
        lines.append(
            "\t".join(
                (
                    rec.slide_id,
                    str(rec.x),
                    str(rec.y),
                    str(rec.size),
                    rec.role,
                    str(rec.group_id),
                    label,
                    rec.split,
                )
            )
        )
    path.write_text("\n".join(lines) + "\n")


def read_manifest(path: str | Path) -> Manifest:
    path = Path(path)
    if not path.exists():
        raise ManifestError(f"manifest not found: {path}")
    lines = path.read_text().splitlines()
    if not lines or not lines[0].startswith(MANIFEST_MAGIC):
        raise ManifestError(f"{path}:1: missing manifest header")
    header: dict[str, int] = {}
    for token in lines[0][len(MANIFEST_MAGIC) :].split():
        key, _, value = token.partition("=")
        try:
            header[key] = int(value)
        except ValueError:
            raise ManifestError(f"{path}:1: bad header field {token!r}") from None
    for key in ("patch_size", "nearby", "classes", "seed"):
        if key not in header:
            raise ManifestError(f"{path}:1: header missing {key}")
    if len(lines) < 2 or lines[1] != "\t".join(_MANIFEST_FIELDS):
        raise ManifestError(f"{path}:2: missing or reordered column header")
    records = []
    for lineno, line in enumerate(lines[2:], start=3):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != len(_MANIFEST_FIELDS):
            raise ManifestError(
                f"{path}:{lineno}: expected {len(_MANIFEST_FIELDS)} fields, got {len(parts)}"
            )
        slide_id, x, y, size, role, group_id, label, split = parts
        try:
            rec = PatchRecord(
                slide_id=slide_id,
                x=int(x),
                y=int(y),
                size=int(size),
                role=role,
                group_id=int(group_id),
                label=None if label == "" else int(label),
                split=split,
            )
            parse_role(role)
        except ValueError as exc:
            raise ManifestError(f"{path}:{lineno}: {exc}") from None
        records.append(rec)
    manifest = Manifest(
        patch_size=header["patch_size"],
        nearby_count=header["nearby"],
        num_classes=header["classes"],
        seed=header["seed"],
        records=records,
    )
    try:
        validate_manifest(manifest)
    except ManifestError as exc:
        raise ManifestError(f"{path}: {exc}") from None
    return manifest


# ---------------------------------------------------------------------------
# Image file I/O
# ---------------------------------------------------------------------------


def save_image(path: str | Path, pixels: np.ndarray) -> None:
    """Write float [0, 1] RGB pixels as a lossless 8-bit PNG."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = np.clip(np.rint(pixels * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(data, mode="RGB").save(path, format="PNG")


def load_image(path: str | Path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise ManifestError(f"patch image not found: {path}")
    with Image.open(path) as img:
        data = np.asarray(img.convert("RGB"), dtype=np.uint8)
    return data.astype(np.float32) / 255.0


def save_mask(path: str | Path, mask: np.ndarray) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(mask.astype(np.uint8), mode="L").save(path, format="PNG")


def load_mask(path: str | Path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("L"), dtype=np.uint8)


def patch_filename(rec: PatchRecord) -> str:
    return f"{rec.slide_id}_{rec.group_id}_{rec.role}.png"


def write_patch_images(slide: SlideImage, records: Iterable[PatchRecord], out_dir: str | Path) -> None:
    out_dir = Path(out_dir)
    for rec in records:
        if rec.slide_id != slide.slide_id:
            continue
        save_image(out_dir / patch_filename(rec), crop_patch(slide, rec.x, rec.y, rec.size))


def load_patch_groups(manifest: Manifest, patches_dir: str | Path) -> list[PatchGroup]:
    """Materialize pixel data for every group in an unlabeled manifest."""
    patches_dir = Path(patches_dir)
    groups: dict[tuple[str, int], dict[str, np.ndarray]] = {}
    order: list[tuple[str, int]] = []
    for rec in manifest.records:
        key = (rec.slide_id, rec.group_id)
        if key not in groups:
            groups[key] = {}
            order.append(key)
        groups[key][rec.role] = load_image(patches_dir / patch_filename(rec))
    out = []
    for slide_id, gid in order:
        roles = groups[(slide_id, gid)]
        nearby = [roles[r] for r in sorted(roles) if r != ROLE_CENTER]
        out.append(PatchGroup(slide_id=slide_id, group_id=gid, center=roles[ROLE_CENTER], nearby=nearby))
    return out


def load_labeled_patches(
    manifest: Manifest, patches_dir: str | Path, split: str
) -> tuple[list[np.ndarray], np.ndarray]:
    """Images and integer labels for one labeled split of a manifest."""
    patches_dir = Path(patches_dir)
    images, labels = [], []
    for rec in manifest.records:
        if rec.split != split:
            continue
        images.append(load_image(patches_dir / patch_filename(rec)))
        labels.append(rec.label)
    return images, np.asarray(labels, dtype=np.int64)


# ---------------------------------------------------------------------------
# Whole-corpus construction
# ---------------------------------------------------------------------------


@dataclass
class CorpusPaths:
    root: Path

    @property
    def slides_dir(self) -> Path:
        return self.root / "slides"

    @property
    def manifests_dir(self) -> Path:
        return self.root / "manifests"

    def unlabeled_manifest(self, nearby_count: int) -> Path:
        return self.manifests_dir / f"unlabeled_n{nearby_count}.tsv"

    @property
    def labeled_manifest(self) -> Path:
        return self.manifests_dir / "labeled.tsv"

    def patches_dir(self, nearby_count: int | None) -> Path:
        sub = "labeled" if nearby_count is None else f"n{nearby_count}"
        return self.root / "patches" / sub

    def slide_image(self, slide_id: str) -> Path:
        return self.slides_dir / f"{slide_id}.png"

    def slide_mask(self, slide_id: str) -> Path:
        return self.slides_dir / f"{slide_id}_mask.png"


def _slide_seed(seed: int, split_tag: int, index: int) -> int:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(_STREAM_TEXTURE, split_tag, index))
    return int(ss.generate_state(1, dtype=np.uint64)[0] % (2**63))


def _extract_seed(seed: int, stream: int, split_tag: int, index: int, n: int) -> int:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(stream, split_tag, index, n))
    return int(ss.generate_state(1, dtype=np.uint64)[0] % (2**63))


def build_corpus(config: CorpusConfig, seed: int, out_dir: str | Path) -> dict[str, dict[str, int]]:
    """Generate slides, extract all requested subsets, write manifests and patches.

    Returns per-manifest record counts, keyed like ``{"unlabeled_n4":
    {"center": 200, "nearby": 800}, "labeled": {"train": ..., "test": ...}}``.
    Fully deterministic in (config, seed).
    """
    config.validate()
    paths = CorpusPaths(Path(out_dir))
    counts: dict[str, dict[str, int]] = {}

    unlabeled_records: dict[int, list[PatchRecord]] = {n: [] for n in config.nearby_counts}
    labeled_records: list[PatchRecord] = []
    label_group_counter = 0

    slide_plan = (
        [(SPLIT_UNLABELED, 0, i, f"unlab{i:03d}") for i in range(config.unlabeled_slides)]
        + [(SPLIT_TRAIN, 1, i, f"train{i:03d}") for i in range(config.train_slides)]
        + [(SPLIT_TEST, 2, i, f"test{i:03d}") for i in range(config.test_slides)]
    )

    for split, split_tag, index, slide_id in slide_plan:
        slide = generate_synthetic_slide(
            config, _slide_seed(seed, split_tag, index), slide_id=slide_id
        )
        save_image(paths.slide_image(slide_id), slide.pixels)
        save_mask(paths.slide_mask(slide_id), slide.mask)

        if split == SPLIT_UNLABELED:
            for n in config.nearby_counts:
                centers = config.centers_for(n)
                recs = extract_unlabeled_groups(
                    slide,
                    n,
                    centers,
                    config.patch_size,
                    _extract_seed(seed, _STREAM_UNLABELED, split_tag, index, n),
                )
                unlabeled_records[n].extend(recs)
                write_patch_images(slide, recs, paths.patches_dir(n))
        else:
            grid_capacity = (slide.width // config.patch_size) * (slide.height // config.patch_size)
            count = config.labeled_per_slide or grid_capacity
            recs = extract_labeled_patches(
                slide,
                count,
                config.patch_size,
                _extract_seed(seed, _STREAM_LABELED, split_tag, index, 0),
                split,
                config.num_classes,
                start_group=0,
            )
            labeled_records.extend(recs)
            write_patch_images(slide, recs, paths.patches_dir(None))
        del slide

    for n in config.nearby_counts:
        manifest = Manifest(
            patch_size=config.patch_size,
            nearby_count=n,
            num_classes=config.num_classes,
            seed=seed,
            records=unlabeled_records[n],
        )
        write_manifest(manifest, paths.unlabeled_manifest(n))
        centers = sum(1 for r in unlabeled_records[n] if r.role == ROLE_CENTER)
        counts[f"unlabeled_n{n}"] = {
            "center": centers,
            "nearby": len(unlabeled_records[n]) - centers,
        }

    labeled_manifest = Manifest(
        patch_size=config.patch_size,
        nearby_count=0,
        num_classes=config.num_classes,
        seed=seed,
        records=labeled_records,
    )
    write_manifest(labeled_manifest, paths.labeled_manifest)
    counts["labeled"] = {
        "train": sum(1 for r in labeled_records if r.split == SPLIT_TRAIN),
        "test": sum(1 for r in labeled_records if r.split == SPLIT_TEST),
    }
    return counts
