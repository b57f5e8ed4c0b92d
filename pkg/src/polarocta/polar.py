"""Cartesian <-> polar resampling of fovea-centered retinal layers.

Coordinates: a Cartesian image is indexed ``pixels[row, col]``; a point
(x, y) has x along columns and y along rows.  Angles are measured from
the +x axis, increasing counterclockwise in (x, y) index space, i.e.
``x = x0 + r cos(theta)``, ``y = y0 + r sin(theta)``.  The polar image
puts the angle on its row axis and the radius on its column axis, with
half-pixel sample centering so neither the pole nor the 0/360 seam is
sampled twice.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np

from .errors import DomainError

OD = "OD"
OS = "OS"


@dataclass
class CartesianImage:
    pixels: np.ndarray  # [height, width] floats in [0, 1]
    laterality: str = OD

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class TransformSpec:
    """Geometry of one polar resampling; enough to invert it."""

    pole: tuple[float, float]  # (x0, y0), FAZ center, subpixel
    radius_px: float
    out_width: int = 224  # radial samples
    out_height: int = 448  # angular samples
    angular_origin_deg: float = 0.0
    # angular direction is counterclockwise in (x, y) index space

    def validate(self, height: int, width: int) -> None:
        x0, y0 = self.pole
        if not (0 < x0 < width - 1 and 0 < y0 < height - 1):
            raise DomainError(f"pole {self.pole} outside image bounds {width}x{height}")
        rmax = largest_inscribed_radius(height, width, self.pole)
        if self.radius_px > rmax + 1e-9:
            raise DomainError(
                f"radius {self.radius_px} exceeds largest inscribed radius {rmax}"
            )
        if self.out_width < 8 or self.out_height < 8:
            raise DomainError("polar output must be at least 8x8")


@dataclass
class PolarImage:
    """rows = angle axis, cols = radius axis (0 at the pole, R outermost)."""

    pixels: np.ndarray
    spec: TransformSpec

    @property
    def out_height(self) -> int:
        return self.pixels.shape[0]

    @property
    def out_width(self) -> int:
        return self.pixels.shape[1]


def largest_inscribed_radius(height: int, width: int, pole) -> float:
    """Min distance from the pole to the four image borders (pixel centers)."""
    x0, y0 = pole
    if not (0 <= x0 <= width - 1 and 0 <= y0 <= height - 1):
        raise DomainError(f"pole {pole} outside image bounds {width}x{height}")
    return float(min(x0, y0, width - 1 - x0, height - 1 - y0))


def _bilinear(img: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    h, w = img.shape
    xs = np.clip(xs, 0.0, w - 1.0)
    ys = np.clip(ys, 0.0, h - 1.0)
    x0 = np.floor(xs).astype(np.intp)
    y0 = np.floor(ys).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = xs - x0
    fy = ys - y0
    top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def _nearest(img: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    h, w = img.shape
    xi = np.clip(np.rint(xs), 0, w - 1).astype(np.intp)
    yi = np.clip(np.rint(ys), 0, h - 1).astype(np.intp)
    return img[yi, xi]


def polar_sample_points(spec: TransformSpec):
    """(r, theta) grids for every output pixel, half-pixel centered."""
    j = np.arange(spec.out_width)
    i = np.arange(spec.out_height)
    r = (j + 0.5) / spec.out_width * spec.radius_px
    theta = np.deg2rad(spec.angular_origin_deg) + (i + 0.5) / spec.out_height * 2.0 * np.pi
    return r, theta


def to_polar(img: CartesianImage, spec: TransformSpec) -> PolarImage:
    """Resample a Cartesian image onto the (angle, radius) grid.

    Bilinear everywhere except within 1 px of the pole, which is filled
    by nearest-neighbor lookup.
    """
    spec.validate(img.height, img.width)
    x0, y0 = spec.pole
    r, theta = polar_sample_points(spec)
    xs = x0 + r[None, :] * np.cos(theta)[:, None]
    ys = y0 + r[None, :] * np.sin(theta)[:, None]
    out = _bilinear(img.pixels, xs, ys)
    near_pole = r < 1.0
    if near_pole.any():
        cols = np.where(near_pole)[0]
        out[:, cols] = _nearest(img.pixels, xs[:, cols], ys[:, cols])
    return PolarImage(out.astype(img.pixels.dtype, copy=False), spec)


def from_polar(p: PolarImage, out_height: int, out_width: int) -> CartesianImage:
    """Invert the polar resampling onto a Cartesian canvas.

    The angle axis wraps cyclically; the radius axis is clamped.  Pixels
    beyond the transform radius are exactly zero.
    """
    spec = p.spec
    x0, y0 = spec.pole
    ys, xs = np.mgrid[0:out_height, 0:out_width]
    dx = xs - x0
    dy = ys - y0
    r = np.hypot(dx, dy)
    theta = np.arctan2(dy, dx) - np.deg2rad(spec.angular_origin_deg)
    rows = theta / (2.0 * np.pi) * p.out_height - 0.5
    rows = np.mod(rows, p.out_height)
    cols = np.clip(r / spec.radius_px * p.out_width - 0.5, 0.0, p.out_width - 1.0)

    r0 = np.floor(rows).astype(np.intp)
    r1 = (r0 + 1) % p.out_height  # cyclic in angle
    c0 = np.floor(cols).astype(np.intp)
    c1 = np.minimum(c0 + 1, p.out_width - 1)
    fr = rows - r0
    fc = cols - c0
    img = p.pixels
    top = img[r0, c0] * (1 - fc) + img[r0, c1] * fc
    bot = img[r1, c0] * (1 - fc) + img[r1, c1] * fc
    out = top * (1 - fr) + bot * fr
    out[r > spec.radius_px] = 0.0
    return CartesianImage(out.astype(p.pixels.dtype, copy=False), laterality=OD)


def flip_os_to_od(img: CartesianImage) -> CartesianImage:
    """Horizontal mirror of a left-eye image; no-op (with warning) on OD."""
    if img.laterality == OD:
        warnings.warn("flip_os_to_od called on an OD image; returning it unchanged")
        return img
    return CartesianImage(img.pixels[:, ::-1].copy(), laterality=OD)


def flip_pole(pole, width: int):
    """Pole coordinates after a horizontal mirror."""
    x0, y0 = pole
    return (width - 1 - x0, y0)


def rotation_row_shift(angle_deg: float, out_height: int) -> int:
    return int(round(angle_deg / 360.0 * out_height))


def polar_rotate(p: PolarImage, angle_deg: float) -> PolarImage:
    """Rotate around the pole by a cyclic row shift; exact, no resampling."""
    if abs(angle_deg) > 180.0:
        raise DomainError(f"rotation angle {angle_deg} outside [-180, 180]")
    shift = rotation_row_shift(angle_deg, p.out_height)
    spec = replace(p.spec)  # geometry unchanged; rotation moves content only
    return PolarImage(np.roll(p.pixels, shift, axis=0), spec)
