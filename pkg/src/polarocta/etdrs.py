"""The nine-region macular grid and per-region vessel statistics.

Region ids: C (central disc) plus quadrant x ring sectors TI, TE, SI,
SE, NI, NE, II, IE.  The grid exists in two coordinate systems: as
(row-span, column-span) bins on a polar image, and as a label map over
a Cartesian disk.  Vessel statistics are area density (VAD), skeleton
length density (VLD), and box-counting fractal dimension (VFD).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DomainError

QUADRANTS = ("T", "S", "N", "I")
SECTORS = ("TI", "TE", "SI", "SE", "NI", "NE", "II", "IE")
REGIONS = ("C",) + SECTORS
LAYERS = ("SVC", "DVC", "CC")

_DEFAULT_QUADRANT_OFFSETS = {
    "T": (-45.0, 45.0),
    "S": (45.0, 135.0),
    "N": (135.0, 225.0),
    "I": (225.0, 315.0),
}


@dataclass(frozen=True)
class EtdrsSpec:
    """Ring fractions are relative to the transform radius R."""

    ring_fractions: tuple[float, float] = (1.0 / 6.0, 0.5)
    quadrant_offsets_deg: dict = field(
        default_factory=lambda: dict(_DEFAULT_QUADRANT_OFFSETS)
    )

    def validate(self) -> None:
        f_center, f_inner = self.ring_fractions
        if not 0.0 < f_center < f_inner < 1.0:
            raise ConfigError(f"ring fractions must satisfy 0 < fc < fi < 1, got {self.ring_fractions}")
        if set(self.quadrant_offsets_deg) != set(QUADRANTS):
            raise ConfigError(f"quadrant offsets must cover exactly {QUADRANTS}")
        spans = sorted((a % 360.0, (b - a) % 360.0) for a, b in self.quadrant_offsets_deg.values())
        total = sum(width if width else 360.0 for _, width in spans)
        if abs(total - 360.0) > 1e-9:
            raise ConfigError("quadrant intervals must partition [0, 360)")


@dataclass
class RegionStats:
    region: str
    layer: str
    vad: float
    vld: float
    vfd: float  # nan when the region holds no vessel foreground


def _in_interval(angles_deg: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Membership in the cyclic interval [lo, hi) of width (hi-lo) mod 360."""
    a = np.mod(angles_deg - lo, 360.0)
    width = (hi - lo) % 360.0
    if width == 0.0:
        width = 360.0
    return a < width


def _spans(mask: np.ndarray) -> list[tuple[int, int]]:
    """Contiguous True runs as half-open (start, stop) index pairs."""
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        return []
    breaks = np.flatnonzero(np.diff(idx) > 1)
    starts = np.concatenate(([idx[0]], idx[breaks + 1]))
    stops = np.concatenate((idx[breaks] + 1, [idx[-1] + 1]))
    return list(zip(starts.tolist(), stops.tolist()))


def polar_region_bins(spec: EtdrsSpec, polar_dims: tuple[int, int]) -> dict:
    """Region -> (row spans, column span) on an (angle, radius) image.

    Row sample i covers the angle (i + 0.5) / H * 360 degrees relative
    to the angular origin; a quadrant whose interval wraps the seam gets
    two row spans.  The eight sector bins tile everything outside the C
    columns exactly once.
    """
    spec.validate()
    h, w = polar_dims
    f_center, f_inner = spec.ring_fractions
    c0 = int(np.floor(f_center * w))
    c1 = int(np.floor(f_inner * w))
    centers = (np.arange(h) + 0.5) / h * 360.0
    bins = {"C": ([(0, h)], (0, c0))}
    for quad in QUADRANTS:
        lo, hi = spec.quadrant_offsets_deg[quad]
        rows = _spans(_in_interval(centers, lo, hi))
        bins[quad + "I"] = (rows, (c0, c1))
        bins[quad + "E"] = (rows, (c1, w))
    return bins


def bins_to_mask(bins_entry, polar_dims: tuple[int, int]) -> np.ndarray:
    rows, (clo, chi) = bins_entry
    mask = np.zeros(polar_dims, dtype=bool)
    for rlo, rhi in rows:
        mask[rlo:rhi, clo:chi] = True
    return mask


def cartesian_region_labels(
    spec: EtdrsSpec,
    dims: tuple[int, int],
    pole,
    radius: float,
    angular_origin_deg: float = 0.0,
) -> np.ndarray:
    """Label map over ``dims``: -1 outside the disk, else an index into REGIONS."""
    spec.validate()
    h, w = dims
    x0, y0 = pole
    ys, xs = np.mgrid[0:h, 0:w]
    dx = xs - x0
    dy = ys - y0
    r = np.hypot(dx, dy)
    theta = np.rad2deg(np.arctan2(dy, dx)) - angular_origin_deg
    f_center, f_inner = spec.ring_fractions
    labels = np.full(dims, -1, dtype=np.int8)
    inside = r <= radius
    labels[inside & (r < f_center * radius)] = 0
    ring_outer = inside & (r >= f_inner * radius)
    ring_inner = inside & (r >= f_center * radius) & ~ring_outer
    for quad in QUADRANTS:
        lo, hi = spec.quadrant_offsets_deg[quad]
        in_quad = _in_interval(theta, lo, hi)
        labels[ring_inner & in_quad] = REGIONS.index(quad + "I")
        labels[ring_outer & in_quad] = REGIONS.index(quad + "E")
    return labels


def vessel_binarize(img: np.ndarray, method: str = "otsu", threshold: float = 0.5) -> np.ndarray:
    """Foreground = vessel pixels.  Otsu runs on a 256-bin histogram."""
    if img.min() < -1e-9 or img.max() > 1.0 + 1e-9:
        raise DomainError("vessel_binarize expects values in [0, 1]")
    if method == "fixed":
        return img > threshold
    if method != "otsu":
        raise ConfigError(f"unknown binarization method '{method}'")
    counts, edges = np.histogram(img, bins=256, range=(0.0, 1.0))
    total = counts.sum()
    if np.count_nonzero(counts) <= 1:
        warnings.warn("otsu on a degenerate (constant) image; returning all background")
        return np.zeros(img.shape, dtype=bool)
    centers = 0.5 * (edges[:-1] + edges[1:])
    w0 = np.cumsum(counts)
    w1 = total - w0
    mass = np.cumsum(counts * centers)
    mu0 = np.divide(mass, w0, out=np.zeros_like(mass), where=w0 > 0)
    mu1 = np.divide(mass[-1] - mass, w1, out=np.zeros_like(mass), where=w1 > 0)
    between = w0 * w1 * (mu0 - mu1) ** 2
    t = centers[np.argmax(between)]
    return img > t


def vad(binary: np.ndarray, region: np.ndarray) -> float:
    """Vessel-pixel count over region-pixel count."""
    n = int(region.sum())
    if n == 0:
        raise DomainError("empty region")
    return float(np.count_nonzero(binary & region)) / n


_ZS_NEIGHBOR_OFFSETS = (
    (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1),
)  # P2..P9, clockwise from north


def skeletonize(binary: np.ndarray) -> np.ndarray:
    """Zhang-Suen thinning to a 1-px skeleton; idempotent, never adds pixels."""
    img = np.pad(binary.astype(np.uint8), 1)
    while True:
        changed = False
        for step in (0, 1):
            p = [np.roll(np.roll(img, -dy, axis=0), -dx, axis=1) for dy, dx in _ZS_NEIGHBOR_OFFSETS]
            b = sum(p)
            ring = p + [p[0]]
            a = sum((ring[k] == 0) & (ring[k + 1] == 1) for k in range(8))
            cond = (img == 1) & (b >= 2) & (b <= 6) & (a == 1)
            if step == 0:
                cond &= (p[0] * p[2] * p[4] == 0) & (p[2] * p[4] * p[6] == 0)
            else:
                cond &= (p[0] * p[2] * p[6] == 0) & (p[0] * p[4] * p[6] == 0)
            if cond.any():
                img[cond] = 0
                changed = True
        if not changed:
            break
    return img[1:-1, 1:-1].astype(bool)


def vld(binary: np.ndarray, region: np.ndarray, skeleton: np.ndarray | None = None) -> float:
    """Skeleton-pixel count over region-pixel count (skeleton of the full map)."""
    n = int(region.sum())
    if n == 0:
        raise DomainError("empty region")
    if skeleton is None:
        skeleton = skeletonize(binary)
    return float(np.count_nonzero(skeleton & region)) / n


BOX_SIZES = (2, 4, 8, 16, 32)


def vfd_boxcount(binary: np.ndarray) -> float:
    """Least-squares slope of log(boxes occupied) vs log(1/box size).

    Box sizes are fixed at {2, 4, 8, 16, 32}; the grid is anchored at
    the origin with partial edge boxes included.  The fit is clamped to
    [0, 2.2].
    """
    if not binary.any():
        raise DomainError("empty foreground")
    counts = []
    for s in BOX_SIZES:
        h, w = binary.shape
        hpad = (-h) % s
        wpad = (-w) % s
        z = np.pad(binary, ((0, hpad), (0, wpad)))
        blocks = z.reshape(z.shape[0] // s, s, z.shape[1] // s, s)
        counts.append(int(blocks.any(axis=(1, 3)).sum()))
    xs = np.log(1.0 / np.asarray(BOX_SIZES, dtype=float))
    ys = np.log(np.asarray(counts, dtype=float))
    slope = np.polyfit(xs, ys, 1)[0]
    return float(np.clip(slope, 0.0, 2.2))


def region_stats(
    img: np.ndarray,
    labels: np.ndarray,
    layer: str,
    method: str = "otsu",
    threshold: float = 0.5,
) -> list[RegionStats]:
    """VAD/VLD/VFD for all nine regions of one layer image."""
    binary = vessel_binarize(img, method=method, threshold=threshold)
    skeleton = skeletonize(binary)
    out = []
    for idx, region in enumerate(REGIONS):
        mask = labels == idx
        fg = binary & mask
        out.append(
            RegionStats(
                region=region,
                layer=layer,
                vad=vad(binary, mask),
                vld=vld(binary, mask, skeleton=skeleton),
                vfd=vfd_boxcount(fg) if fg.any() else float("nan"),
            )
        )
    return out
