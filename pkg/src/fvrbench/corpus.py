"""Loading, partitioning and summarising labeled face galleries.

Images are grayscale float64 arrays of shape (h, w) with pixels in [0, 1].
A :class:`Gallery` stacks them as (n, h, w) next to a parallel label column.
"""

import csv
import math
import os
from collections import namedtuple
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from ._validation import check_images, check_pixel_range

IMAGE_SUFFIXES = (".pgm", ".png")

GalleryStats = namedtuple(
    "GalleryStats", ["n_identities", "n_images", "min_per_identity", "max_per_identity"]
)


class GalleryError(ValueError):
    pass


@dataclass(frozen=True)
class Gallery:
    """Immutable stack of same-sized grayscale images with identity labels."""

    images: np.ndarray
    labels: tuple
    paths: tuple = field(default=None)

    def __post_init__(self):
        labels = tuple(str(lbl) for lbl in self.labels)
        if len(labels) == 0:
            images = np.zeros((0,) + tuple(np.shape(self.images)[1:3] or (0, 0)))
        else:
            images = check_pixel_range(check_images(self.images, name="images"), "images")
        if images.shape[0] != len(labels):
            raise GalleryError(
                f"{images.shape[0]} images but {len(labels)} labels"
            )
        if any(lbl == "" for lbl in labels):
            raise GalleryError("identity labels must be non-empty")
        paths = self.paths
        if paths is None:
            paths = (None,) * len(labels)
        elif len(paths) != len(labels):
            raise GalleryError("paths column length differs from labels")
        images = np.array(images, dtype=np.float64, copy=True)
        images.flags.writeable = False
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "paths", tuple(paths))

    def __len__(self):
        return len(self.labels)

    @property
    def image_shape(self):
        return tuple(self.images.shape[1:])

    @property
    def identities(self):
        """Map each label to the indices of its images, in gallery order."""
        index = {}
        for i, label in enumerate(self.labels):
            index.setdefault(label, []).append(i)
        return index

    @property
    def identity_labels(self):
        return sorted(set(self.labels))

    def subset(self, indices):
        indices = list(indices)
        return Gallery(
            self.images[indices] if indices else np.zeros((0,) + self.image_shape),
            [self.labels[i] for i in indices],
            [self.paths[i] for i in indices],
        )

    def select_identities(self, labels):
        keep = set(labels)
        return self.subset(i for i, lbl in enumerate(self.labels) if lbl in keep)


def _read_image(path):
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode in ("I;16", "I;16B", "I;16L", "I"):
                arr = np.asarray(im, dtype=np.float64) / 65535.0
            else:
                arr = np.asarray(im.convert("L"), dtype=np.float64) / 255.0
    except (OSError, UnidentifiedImageError, ValueError) as exc:
        raise GalleryError(f"cannot read image {path}: {exc}") from exc
    return arr


def _resize(arr, target_size):
    w, h = target_size
    if arr.shape == (h, w):
        return arr
    im = Image.fromarray(arr.astype(np.float32), mode="F")
    return np.asarray(im.resize((w, h), Image.BILINEAR), dtype=np.float64)


def load_image(path, target_size=None):
    """Decode one PGM/PNG file to a float image in [0, 1]."""
    arr = _read_image(path)
    if target_size is not None:
        arr = _resize(arr, target_size)
    return np.clip(arr, 0.0, 1.0)


def load_gallery(root_path, target_size=(32, 32)):
    """Load ``<root>/<identity>/<image>.{pgm,png}`` into a :class:`Gallery`.

    Every image is converted to grayscale, resized to ``target_size``
    (width, height) with bilinear interpolation and scaled to [0, 1]. The
    identity label is the subdirectory name.
    """
    root = Path(root_path)
    if not root.is_dir():
        raise GalleryError(f"gallery root {root} is not a directory")
    identity_dirs = sorted(
        p for p in root.iterdir() if p.is_dir() and not p.name.startswith(".")
    )
    if not identity_dirs:
        raise GalleryError(f"no identities found under {root}")

    images, labels, paths = [], [], []
    for d in identity_dirs:
        files = sorted(p for p in d.iterdir() if p.is_file() and not p.name.startswith("."))
        if not files:
            raise GalleryError(f"identity directory {d} holds no images")
        for f in files:
            if f.suffix.lower() not in IMAGE_SUFFIXES:
                raise GalleryError(f"unsupported image format: {f}")
            images.append(load_image(f, target_size))
            labels.append(d.name)
            paths.append(str(f.relative_to(root)))
    return Gallery(np.stack(images), labels, paths)


def save_gallery_tree(g, root_path, fmt="pgm"):
    """Write a gallery as ``<root>/<identity>/<nnnn>.<fmt>`` 8-bit images."""
    root = Path(root_path)
    counters = {}
    written = []
    for img, label in zip(g.images, g.labels):
        k = counters.get(label, 0)
        counters[label] = k + 1
        out = root / label / f"{k:04d}.{fmt}"
        out.parent.mkdir(parents=True, exist_ok=True)
        save_image(img, out)
        written.append(out)
    return written


def save_image(img, path):
    arr = np.round(np.clip(np.asarray(img), 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path)


def attacker_count(n_identities, attacker_fraction):
    # round half up, unlike Python's banker's rounding
    return int(math.floor(attacker_fraction * n_identities + 0.5))


def split_gallery(g, attacker_fraction, seed):
    """Partition a gallery by identity into (attacker, victim) galleries.

    Labels are sorted, permuted with ``numpy.random.default_rng(seed)`` and
    the first ``round(attacker_fraction * n_identities)`` go to the attacker.
    """
    if not 0.0 < attacker_fraction < 1.0:
        raise GalleryError(f"attacker_fraction must be in (0, 1), got {attacker_fraction}")
    labels = g.identity_labels
    if len(labels) < 2:
        raise GalleryError("splitting requires at least 2 identities")
    n_att = attacker_count(len(labels), attacker_fraction)
    if n_att == 0 or n_att == len(labels):
        raise GalleryError(
            f"fraction {attacker_fraction} of {len(labels)} identities leaves one side empty"
        )
    order = np.random.default_rng(seed).permutation(len(labels))
    shuffled = [labels[i] for i in order]
    return g.select_identities(shuffled[:n_att]), g.select_identities(shuffled[n_att:])


def hold_out_probes(g, n_probes, seed):
    """Hold one image out of ``n_probes`` identities as query probes.

    Only identities with at least two images are eligible, so every probe
    identity keeps at least one enrolled image. Returns (enrolled, probes).
    """
    index = g.identities
    eligible = sorted(lbl for lbl, ids in index.items() if len(ids) >= 2)
    if n_probes > len(eligible):
        raise GalleryError(
            f"requested {n_probes} probes but only {len(eligible)} identities have >= 2 images"
        )
    rng = np.random.default_rng(seed)
    chosen = sorted(rng.choice(len(eligible), size=n_probes, replace=False).tolist())
    probe_idx = []
    for c in chosen:
        ids = index[eligible[c]]
        probe_idx.append(ids[int(rng.integers(len(ids)))])
    held = set(probe_idx)
    enrolled = [i for i in range(len(g)) if i not in held]
    return g.subset(enrolled), g.subset(probe_idx)


def gallery_stats(g):
    """Identity/image counts and per-identity image count range.

    Accepts a :class:`Gallery` or any sequence of manifest rows carrying an
    ``identity`` field.
    """
    if isinstance(g, Gallery):
        labels = g.labels
    else:
        labels = [row["identity"] if isinstance(row, dict) else row[0] for row in g]
    counts = {}
    for lbl in labels:
        counts[lbl] = counts.get(lbl, 0) + 1
    if not counts:
        return GalleryStats(0, 0, None, None)
    return GalleryStats(len(counts), len(labels), min(counts.values()), max(counts.values()))


MANIFEST_FIELDS = ["identity", "image_path", "width", "height"]


def write_manifest(g, path):
    h, w = g.image_shape
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_FIELDS)
        for label, p in zip(g.labels, g.paths):
            writer.writerow([label, "" if p is None else p, w, h])


def read_manifest(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != MANIFEST_FIELDS:
            raise GalleryError(f"{path}: manifest header must be {','.join(MANIFEST_FIELDS)}")
        return [dict(row) for row in reader]


def load_manifest_gallery(manifest_path, root_path):
    """Rebuild a gallery from a manifest whose image paths are relative to ``root_path``."""
    rows = read_manifest(manifest_path)
    if not rows:
        raise GalleryError(f"{manifest_path}: empty manifest")
    images, labels, paths = [], [], []
    for row in rows:
        size = (int(row["width"]), int(row["height"]))
        images.append(load_image(os.path.join(root_path, row["image_path"]), size))
        labels.append(row["identity"])
        paths.append(row["image_path"])
    return Gallery(np.stack(images), labels, paths)
