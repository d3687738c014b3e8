"""Volume data model, QAV1 file IO, and the slice preprocessing chain.

A QAV1 file is a one-line JSON header followed by the raw little-endian
voxel payload, x-fastest ordering. Preprocessing turns a (CT slice, mask
slice) pair into a fixed 224x224 crop: normalize to uint8, crop to the
mask bounding box plus margin, resize.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, ValidationError

MAGIC = "QAV1"
CROP_SIZE = 224
DEFAULT_WINDOW = (-1000.0, 1000.0)
DEFAULT_MARGIN = 8

_DTYPES = {
    "u8": np.dtype("<u1"),
    "i16": np.dtype("<i2"),
    "f32": np.dtype("<f4"),
}


def _round_half_away(x: np.ndarray) -> np.ndarray:
    """Round half away from zero (np.round would round half to even)."""
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


@dataclass(frozen=True, eq=False)
class Volume:
    """3-D scalar grid (CT intensities or binary mask) with physical spacing.

    voxels is a flat array in x-fastest ordering: index = x + nx*(y + ny*z).
    Volumes are treated as immutable after construction; `mask` marks a
    binary {0,1} u8 volume and is metadata, not part of the file format.
    """

    dims: tuple[int, int, int]
    spacing: tuple[float, float, float]
    dtype: str
    voxels: np.ndarray
    mask: bool = False

    def __post_init__(self):
        if len(self.dims) != 3 or any(int(n) < 1 for n in self.dims):
            raise ValidationError(f"dims must be three counts >= 1, got {self.dims}")
        if len(self.spacing) != 3 or any(float(s) <= 0 for s in self.spacing):
            raise ValidationError(f"spacing must be three positive mm values, got {self.spacing}")
        if self.dtype not in _DTYPES:
            raise ValidationError(f"unsupported dtype {self.dtype!r}, expected one of {sorted(_DTYPES)}")
        object.__setattr__(self, "dims", tuple(int(n) for n in self.dims))
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))
        vox = np.ascontiguousarray(self.voxels, dtype=_DTYPES[self.dtype])
        if vox.ndim != 1 or vox.size != self.nvox:
            raise ValidationError(
                f"voxels length {vox.size} does not match dims {self.dims} ({self.nvox} expected)"
            )
        object.__setattr__(self, "voxels", vox)
        if self.mask:
            _check_mask_values(self)

    @property
    def nvox(self) -> int:
        nx, ny, nz = self.dims
        return nx * ny * nz

    @property
    def grid(self) -> np.ndarray:
        """View shaped (nz, ny, nx); grid[z, y, x] matches the flat ordering."""
        nx, ny, nz = self.dims
        return self.voxels.reshape(nz, ny, nx)

    def slice2d(self, z: int) -> np.ndarray:
        """Copy of axial slice z, shape (ny, nx), indexed [row=y, col=x]."""
        return np.array(self.grid[z])

    def __eq__(self, other) -> bool:
        if not isinstance(other, Volume):
            return NotImplemented
        return (
            self.dims == other.dims
            and self.spacing == other.spacing
            and self.dtype == other.dtype
            and self.voxels.tobytes() == other.voxels.tobytes()
        )

    __hash__ = None


def _check_mask_values(v: Volume) -> None:
    if v.dtype != "u8":
        raise ValidationError(f"mask volume must have dtype u8, got {v.dtype}")
    if v.voxels.size and v.voxels.max() > 1:
        raise ValidationError("mask volume contains values outside {0, 1}")


def volume_from_grid(
    grid: np.ndarray,
    spacing: tuple[float, float, float],
    dtype: str,
    mask: bool = False,
) -> Volume:
    """Build a Volume from a (nz, ny, nx) array."""
    arr = np.asarray(grid)
    if arr.ndim != 3:
        raise ValidationError(f"grid must be 3-D (nz, ny, nx), got shape {arr.shape}")
    nz, ny, nx = arr.shape
    flat = np.ascontiguousarray(arr, dtype=_DTYPES[dtype]).reshape(-1)
    return Volume((nx, ny, nz), spacing, dtype, flat, mask=mask)


def mask_from_slices(slices: np.ndarray, spacing: tuple[float, float, float]) -> Volume:
    """Binary mask Volume from a (nz, ny, nx) array of {0,1}."""
    return volume_from_grid(np.asarray(slices, dtype=np.uint8), spacing, "u8", mask=True)


def load_volume(path) -> Volume:
    """Read a QAV1 file. The header line declares dims/spacing/dtype; the
    payload length is verified against them."""
    path = Path(path)
    with open(path, "rb") as fh:
        header_line = fh.readline(65536)
        if not header_line.endswith(b"\n"):
            raise FormatError(f"{path}: missing newline-terminated header line")
        try:
            header = json.loads(header_line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError(f"{path}: header is not valid JSON: {exc}") from exc
        if not isinstance(header, dict) or header.get("magic") != MAGIC:
            raise FormatError(f"{path}: bad magic, expected {MAGIC!r}")
        try:
            dims = tuple(int(n) for n in header["dims"])
            spacing = tuple(float(s) for s in header["spacing"])
            dtype = header["dtype"]
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"{path}: malformed header fields: {exc}") from exc
        if dtype not in _DTYPES:
            raise FormatError(f"{path}: unsupported dtype {dtype!r}")
        if len(dims) != 3 or any(n < 1 for n in dims):
            raise FormatError(f"{path}: bad dims {dims}")
        if len(spacing) != 3 or any(s <= 0 for s in spacing):
            raise FormatError(f"{path}: bad spacing {spacing}")
        payload = fh.read()
    itemsize = _DTYPES[dtype].itemsize
    expected = dims[0] * dims[1] * dims[2] * itemsize
    if len(payload) != expected:
        raise FormatError(
            f"{path}: payload is {len(payload)} bytes, header declares {expected}"
        )
    voxels = np.frombuffer(payload, dtype=_DTYPES[dtype]).copy()
    return Volume(dims, spacing, dtype, voxels)


def save_volume(v: Volume, path) -> None:
    """Write a QAV1 file; load_volume(save_volume(v)) == v bit-exactly."""
    if v.mask:
        _check_mask_values(v)
    header = {
        "magic": MAGIC,
        "dims": list(v.dims),
        "spacing": list(v.spacing),
        "dtype": v.dtype,
    }
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("utf-8"))
        fh.write(b"\n")
        fh.write(v.voxels.tobytes())


def normalize_u8(ct: Volume, window: tuple[float, float] = DEFAULT_WINDOW) -> Volume:
    """Window-clamp and rescale intensities to uint8.

    v maps to round(255*(clamp(v, lo, hi) - lo)/(hi - lo)), rounding half
    away from zero. Monotone in v and the identity on u8 input with the
    (0, 255) window.
    """
    lo, hi = float(window[0]), float(window[1])
    if not lo < hi:
        raise ValidationError(f"window must satisfy lo < hi, got ({lo}, {hi})")
    x = ct.voxels.astype(np.float64)
    scaled = 255.0 * (np.clip(x, lo, hi) - lo) / (hi - lo)
    out = _round_half_away(scaled).astype(np.uint8)
    return Volume(ct.dims, ct.spacing, "u8", out)


def crop_to_mask(
    image_slice: np.ndarray,
    mask_slice: np.ndarray,
    margin: int = DEFAULT_MARGIN,
) -> tuple[np.ndarray, np.ndarray, tuple[int, int, int, int]]:
    """Crop both grids to the tight mask bounding box expanded by margin.

    Returns (sub_image, sub_mask, bbox) with bbox = (row_min, row_max,
    col_min, col_max), inclusive, clipped to the slice.
    """
    image_slice = np.asarray(image_slice)
    mask_slice = np.asarray(mask_slice)
    if image_slice.shape != mask_slice.shape or image_slice.ndim != 2:
        raise ValidationError(
            f"image and mask slices must be 2-D with equal shapes, "
            f"got {image_slice.shape} vs {mask_slice.shape}"
        )
    if margin < 0:
        raise ValidationError(f"margin must be >= 0, got {margin}")
    rows, cols = np.nonzero(mask_slice)
    if rows.size == 0:
        raise ValidationError("cannot crop to an empty mask")
    h, w = mask_slice.shape
    r0 = max(int(rows.min()) - margin, 0)
    r1 = min(int(rows.max()) + margin, h - 1)
    c0 = max(int(cols.min()) - margin, 0)
    c1 = min(int(cols.max()) + margin, w - 1)
    bbox = (r0, r1, c0, c1)
    return (
        np.array(image_slice[r0 : r1 + 1, c0 : c1 + 1]),
        np.array(mask_slice[r0 : r1 + 1, c0 : c1 + 1]),
        bbox,
    )


@dataclass(frozen=True)
class CropProvenance:
    """Where a SliceCrop came from: dataset case, organ, axial slice, and
    the bounding box in the original slice frame."""

    case_id: str = ""
    organ: str = ""
    slice_index: int = -1
    bbox: tuple[int, int, int, int] | None = None


@dataclass(frozen=True)
class SliceCrop:
    """A 224x224 image/mask pair ready for feature extraction."""

    pixels: np.ndarray
    mask: np.ndarray
    provenance: CropProvenance | None = None

    def __post_init__(self):
        pixels = np.ascontiguousarray(self.pixels, dtype=np.uint8)
        mask = np.ascontiguousarray(self.mask, dtype=np.uint8)
        if pixels.shape != (CROP_SIZE, CROP_SIZE) or mask.shape != (CROP_SIZE, CROP_SIZE):
            raise ValidationError(
                f"crop grids must be exactly {CROP_SIZE}x{CROP_SIZE}, "
                f"got {pixels.shape} and {mask.shape}"
            )
        if mask.max() > 1:
            raise ValidationError("crop mask contains values outside {0, 1}")
        if not mask.any():
            raise ValidationError("crop mask must have at least one nonzero pixel")
        object.__setattr__(self, "pixels", pixels)
        object.__setattr__(self, "mask", mask)


def _src_coords(n_in: int, n_out: int) -> np.ndarray:
    """Corner-aligned sampling coordinates into an n_in-long axis."""
    if n_in == 1 or n_out == 1:
        return np.zeros(n_out, dtype=np.float64)
    return np.arange(n_out, dtype=np.float64) * (n_in - 1) / (n_out - 1)


def resize_bilinear(
    image: np.ndarray,
    mask: np.ndarray,
    provenance: CropProvenance | None = None,
) -> SliceCrop:
    """Resize an image/mask crop to 224x224.

    The image is bilinearly interpolated with corner-aligned sampling; the
    mask uses nearest-neighbor so it stays binary.
    """
    image = np.asarray(image, dtype=np.uint8)
    mask = np.asarray(mask)
    if image.ndim != 2 or image.shape != mask.shape:
        raise ValidationError(
            f"image and mask must be 2-D with equal shapes, got {image.shape} vs {mask.shape}"
        )
    h, w = image.shape
    if h < 1 or w < 1:
        raise ValidationError("input crop must be at least 1x1")

    ry = _src_coords(h, CROP_SIZE)
    rx = _src_coords(w, CROP_SIZE)

    y0 = np.floor(ry).astype(np.intp)
    x0 = np.floor(rx).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ry - y0)[:, None]
    fx = (rx - x0)[None, :]

    img = image.astype(np.float64)
    top = img[np.ix_(y0, x0)] * (1.0 - fx) + img[np.ix_(y0, x1)] * fx
    bot = img[np.ix_(y1, x0)] * (1.0 - fx) + img[np.ix_(y1, x1)] * fx
    interp = top * (1.0 - fy) + bot * fy
    out_img = np.clip(_round_half_away(interp), 0, 255).astype(np.uint8)

    ny = np.minimum(np.floor(ry + 0.5).astype(np.intp), h - 1)
    nx = np.minimum(np.floor(rx + 0.5).astype(np.intp), w - 1)
    out_mask = (np.asarray(mask)[np.ix_(ny, nx)] != 0).astype(np.uint8)

    return SliceCrop(out_img, out_mask, provenance)


def preprocess_slice(
    image_slice: np.ndarray,
    mask_slice: np.ndarray,
    margin: int = DEFAULT_MARGIN,
    case_id: str = "",
    organ: str = "",
    slice_index: int = -1,
) -> SliceCrop:
    """Full per-slice chain: crop to the mask, then resize to 224x224."""
    sub_img, sub_mask, bbox = crop_to_mask(image_slice, mask_slice, margin)
    prov = CropProvenance(case_id, organ, slice_index, bbox)
    return resize_bilinear(sub_img, sub_mask, prov)
