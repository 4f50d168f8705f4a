"""Image I/O, manifests, padding, and synthetic dataset generation.

Images travel as binary PPM (P6) and single-channel maps as binary PGM
(P5), both 8-bit; loaders scale to [0, 1] floats and savers quantize with
round(v * 255).  A manifest is a tab-separated file of image/ground-truth
path pairs relative to its own directory.

The synthetic generators are pure in (seed, index): sample i of a dataset
is always the same arrays, no matter how many samples are drawn around it.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError

MANIFEST_KINDS = ("saliency", "edge")
PAD_MULTIPLE = 16


# ---------------------------------------------------------------------------
# PGM / PPM
# ---------------------------------------------------------------------------

def _read_header_int(blob: bytes, pos: int, path: Path) -> tuple[int, int]:
    while pos < len(blob):
        byte = blob[pos]
        if byte in b" \t\r\n\x0b\x0c":
            pos += 1
        elif byte == ord("#"):
            while pos < len(blob) and blob[pos] != ord("\n"):
                pos += 1
        else:
            break
    start = pos
    while pos < len(blob) and blob[pos] in b"0123456789":
        pos += 1
    if start == pos:
        raise DataError(f"{path}: malformed header, expected an integer")
    return int(blob[start:pos]), pos


def _parse_pnm(path) -> tuple[int, np.ndarray]:
    """Returns (channels, uint8 array of shape (H, W) or (H, W, 3))."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"image file not found: {path}")
    blob = path.read_bytes()
    magic = blob[:2]
    if magic == b"P5":
        channels = 1
    elif magic == b"P6":
        channels = 3
    else:
        raise DataError(f"{path}: not a binary PGM (P5) or PPM (P6) file")
    pos = 2
    width, pos = _read_header_int(blob, pos, path)
    height, pos = _read_header_int(blob, pos, path)
    maxval, pos = _read_header_int(blob, pos, path)
    if width < 1 or height < 1:
        raise DataError(f"{path}: invalid dimensions {width}x{height}")
    if maxval != 255:
        raise DataError(f"{path}: only 8-bit depth (maxval 255) is supported, got {maxval}")
    if pos >= len(blob) or blob[pos] not in b" \t\r\n":
        raise DataError(f"{path}: malformed header, expected whitespace before pixel data")
    pos += 1
    need = width * height * channels
    payload = blob[pos:pos + need]
    if len(payload) < need:
        raise DataError(f"{path}: truncated pixel data, expected {need} bytes, "
                        f"got {len(payload)}")
    arr = np.frombuffer(payload, dtype=np.uint8)
    shape = (height, width) if channels == 1 else (height, width, 3)
    return channels, arr.reshape(shape)


def load_image(path) -> np.ndarray:
    """Read an image as (3, H, W) floats in [0, 1]; grayscale is replicated."""
    channels, raw = _parse_pnm(path)
    if channels == 1:
        plane = raw.astype(np.float64) / 255.0
        return np.stack([plane, plane, plane])
    return np.ascontiguousarray(raw.transpose(2, 0, 1)).astype(np.float64) / 255.0


def load_map(path) -> np.ndarray:
    """Read a single-channel map as (H, W) floats in [0, 1]."""
    channels, raw = _parse_pnm(path)
    if channels != 1:
        raise DataError(f"{path}: expected a single-channel PGM map, got a color image")
    return raw.astype(np.float64) / 255.0


def _quantize(values: np.ndarray, path) -> np.ndarray:
    if values.min() < 0 or values.max() > 1:
        raise DataError(f"cannot save {path}: values outside [0, 1]")
    return np.rint(values * 255.0).astype(np.uint8)


def save_map(values, path) -> None:
    """Write a 2-D map in [0, 1] as an 8-bit binary PGM."""
    values = np.asarray(values)
    if values.ndim != 2:
        raise DataError(f"cannot save {path}: map must be 2-D, got shape {values.shape}")
    h, w = values.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(_quantize(values, path).tobytes())


def save_image(values, path) -> None:
    """Write a (3, H, W) image in [0, 1] as an 8-bit binary PPM."""
    values = np.asarray(values)
    if values.ndim != 3 or values.shape[0] != 3:
        raise DataError(f"cannot save {path}: image must be (3, H, W), got shape {values.shape}")
    _, h, w = values.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(_quantize(values.transpose(1, 2, 0), path).tobytes())


# ---------------------------------------------------------------------------
# samples and padding
# ---------------------------------------------------------------------------

@dataclass
class Sample:
    """One training/eval item; ``pad`` is (right, bottom) relative to original."""

    image: np.ndarray   # (3, H, W) in [0, 1]
    target: np.ndarray  # (1, H, W)
    original_size: tuple[int, int]  # (W, H)
    pad: tuple[int, int] = (0, 0)


def pad_to_multiple(sample: Sample, multiple: int = PAD_MULTIPLE) -> Sample:
    """Replicate-pad the image and zero-pad the target on the right/bottom."""
    _, h, w = sample.image.shape
    pad_bottom = (-h) % multiple
    pad_right = (-w) % multiple
    if pad_bottom == 0 and pad_right == 0:
        return sample
    spec = ((0, 0), (0, pad_bottom), (0, pad_right))
    return Sample(image=np.pad(sample.image, spec, mode="edge"),
                  target=np.pad(sample.target, spec),
                  original_size=sample.original_size,
                  pad=(pad_right, pad_bottom))


def crop_to_original(values: np.ndarray, sample: Sample) -> np.ndarray:
    """Undo ``pad_to_multiple`` on a prediction of any channel count."""
    w, h = sample.original_size
    return values[..., :h, :w]


# ---------------------------------------------------------------------------
# manifests
# ---------------------------------------------------------------------------

@dataclass
class Manifest:
    """An ordered image/ground-truth pairing rooted at the manifest's directory."""

    root: Path
    entries: list  # of (image_path, gt_path), absolute
    kind: str

    def __len__(self) -> int:
        return len(self.entries)


def load_manifest(path, kind: str) -> Manifest:
    if kind not in MANIFEST_KINDS:
        raise DataError(f"manifest kind must be one of {MANIFEST_KINDS}, got {kind!r}")
    path = Path(path)
    if not path.is_file():
        raise DataError(f"manifest not found: {path}")
    root = path.parent
    entries = []
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise DataError(f"{path}:{lineno}: expected 'image<TAB>ground-truth', got {raw!r}")
        image_path = root / parts[0]
        gt_path = root / parts[1]
        for p in (image_path, gt_path):
            if not p.is_file():
                raise DataError(f"{path}:{lineno}: referenced file missing: {p}")
        entries.append((image_path, gt_path))
    if not entries:
        raise DataError(f"{path}: manifest is empty")
    return Manifest(root=root, entries=entries, kind=kind)


def write_manifest(path, entries) -> None:
    """Write (image, gt) path pairs relative to the manifest directory."""
    path = Path(path)
    lines = [f"{img}\t{gt}" for img, gt in entries]
    path.write_text("\n".join(lines) + "\n")


def load_entry(manifest: Manifest, index: int) -> Sample:
    image_path, gt_path = manifest.entries[index]
    image = load_image(image_path)
    target = load_map(gt_path)
    if target.shape != image.shape[1:]:
        raise DataError(f"{gt_path}: ground truth size {target.shape} does not match "
                        f"image size {image.shape[1:]}")
    _, h, w = image.shape
    return Sample(image=image, target=target[None], original_size=(w, h))


# ---------------------------------------------------------------------------
# synthetic datasets
# ---------------------------------------------------------------------------

_SALIENCY_STREAM = 0
_EDGE_STREAM = 1


def _coordinate_grid(size: int) -> tuple[np.ndarray, np.ndarray]:
    yy, xx = np.meshgrid(np.arange(size, dtype=np.float64),
                         np.arange(size, dtype=np.float64), indexing="ij")
    return yy, xx


def _random_shape(rng: np.random.Generator, size: int,
                  radius_range: tuple[float, float]) -> np.ndarray:
    yy, xx = _coordinate_grid(size)
    cy, cx = rng.uniform(0.25 * size, 0.75 * size, size=2)
    lo, hi = radius_range
    ry, rx = rng.uniform(lo * size, hi * size, size=2)
    if rng.integers(0, 2) == 0:
        angle = rng.uniform(0.0, np.pi)
        du = np.cos(angle) * (xx - cx) + np.sin(angle) * (yy - cy)
        dv = -np.sin(angle) * (xx - cx) + np.cos(angle) * (yy - cy)
        return (du / rx) ** 2 + (dv / ry) ** 2 <= 1.0
    return (np.abs(yy - cy) <= ry) & (np.abs(xx - cx) <= rx)


def _textured_background(rng: np.random.Generator, size: int) -> np.ndarray:
    yy, xx = _coordinate_grid(size)
    base = rng.uniform(0.2, 0.8, size=3)
    gy, gx = rng.uniform(-0.15, 0.15, size=2)
    ramp = gy * yy / size + gx * xx / size
    noise = rng.normal(0.0, 0.03, size=(size, size))
    return np.clip(base[:, None, None] + ramp + noise, 0.0, 1.0)


def _contrasting_color(rng: np.random.Generator, background_level: float) -> np.ndarray:
    if background_level > 0.5:
        return rng.uniform(0.0, 0.2, size=3)
    return rng.uniform(0.8, 1.0, size=3)


def _inner_boundary(mask: np.ndarray) -> np.ndarray:
    """Shape pixels with at least one 4-neighbour outside the shape."""
    padded = np.pad(mask, 1)
    core = (padded[1:-1, 1:-1] & padded[:-2, 1:-1] & padded[2:, 1:-1]
            & padded[1:-1, :-2] & padded[1:-1, 2:])
    return mask & ~core


def synth_saliency_sample(size: int, seed: int, index: int) -> tuple[np.ndarray, np.ndarray]:
    """One image with 1-2 high-contrast shapes; target is the exact shape mask."""
    rng = np.random.default_rng([seed, _SALIENCY_STREAM, index])
    image = _textured_background(rng, size)
    level = float(image.mean())
    mask = np.zeros((size, size), dtype=bool)
    for _ in range(int(rng.integers(1, 3))):
        shape = _random_shape(rng, size, (0.12, 0.28))
        color = _contrasting_color(rng, level)
        image[:, shape] = color[:, None]
        mask |= shape
    return image, mask.astype(np.float64)


def synth_edge_sample(size: int, seed: int, index: int) -> tuple[np.ndarray, np.ndarray]:
    """Overlapping shapes; target marks every shape's one-pixel boundary,
    including parts later shapes paint over."""
    rng = np.random.default_rng([seed, _EDGE_STREAM, index])
    image = _textured_background(rng, size)
    edges = np.zeros((size, size), dtype=bool)
    for _ in range(int(rng.integers(3, 5))):
        shape = _random_shape(rng, size, (0.10, 0.22))
        image[:, shape] = rng.uniform(0.0, 1.0, size=3)[:, None]
        edges |= _inner_boundary(shape)
    return image, edges.astype(np.float64)


def _write_dataset(out_dir, n: int, size: int, seed: int, sample_fn, kind: str) -> Manifest:
    if n < 1:
        raise DataError(f"dataset size must be >= 1, got {n}")
    if size < 8:
        raise DataError(f"image size must be >= 8, got {size}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(n):
        image, target = sample_fn(size, seed, i)
        image_name = f"img_{i:04d}.ppm"
        gt_name = f"gt_{i:04d}.pgm"
        save_image(image, out_dir / image_name)
        save_map(target, out_dir / gt_name)
        entries.append((image_name, gt_name))
    manifest_path = out_dir / "manifest.tsv"
    write_manifest(manifest_path, entries)
    return load_manifest(manifest_path, kind)


def synth_saliency_dataset(out_dir, n: int, size: int, seed: int) -> Manifest:
    return _write_dataset(out_dir, n, size, seed, synth_saliency_sample, "saliency")


def synth_edge_dataset(out_dir, n: int, size: int, seed: int) -> Manifest:
    return _write_dataset(out_dir, n, size, seed, synth_edge_sample, "edge")
