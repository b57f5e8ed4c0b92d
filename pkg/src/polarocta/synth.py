"""Synthetic OCTA-like layer stacks with a plantable regional effect.

Each subject gets three layer images: SVC (few thick vessel trees), DVC
(many fine trees) and CC (granular texture), all drawn over low
frequency background noise.  Positive-class subjects have their vessel
strokes inside the planted regions kept only with probability equal to
the density multiplier, which lowers regional vessel density by roughly
that factor.  Generation is a pure function of (spec, subject index).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter, zoom

from . import etdrs
from .errors import ConfigError, DomainError

FAZ_FRACTION = 0.14  # vessel-free zone around the pole, fraction of R


@dataclass(frozen=True)
class SynthSpec:
    n_subjects: int = 200
    image_size: int = 64
    branch_count: int = 6
    tortuosity: float = 0.2
    thickness: float = 1.7  # SVC stroke sigma in px; DVC uses a bit over half
    noise_level: float = 0.05
    planted_layers: tuple = ("DVC",)
    planted_regions: tuple = ("SI", "NI")
    density_multiplier: float = 1.0
    class_balance: float = 0.5
    seed: int = 0

    def validate(self) -> None:
        if not 0.0 < self.density_multiplier <= 1.0:
            raise ConfigError(f"density multiplier must be in (0, 1], got {self.density_multiplier}")
        bad = set(self.planted_regions) - set(etdrs.SECTORS)
        if bad:
            raise ConfigError(f"unknown planted regions {sorted(bad)}")
        bad = set(self.planted_layers) - set(etdrs.LAYERS)
        if bad:
            raise ConfigError(f"unknown planted layers {sorted(bad)}")
        if self.n_subjects < 2:
            raise ConfigError("need at least 2 subjects")
        if self.image_size < 16:
            raise DomainError("image size too small for the grid geometry")


def perlin_field(rng: np.random.Generator, size: int, scales=(8, 16, 32)) -> np.ndarray:
    """Low-frequency multi-octave noise in [0, 1]."""
    out = np.zeros((size, size))
    amp = 1.0
    for s in scales:
        coarse = rng.normal(size=(size // s + 2, size // s + 2))
        up = zoom(coarse, s, order=1)[:size, :size]
        out += amp * up
        amp *= 0.6
    lo, hi = out.min(), out.max()
    return (out - lo) / (hi - lo + 1e-12)


def _vessel_paths(rng, size, pole, radius, n_seeds, tortuosity):
    """Random outward-biased walks with occasional branching."""
    x0, y0 = pole
    queue = []
    for _ in range(n_seeds):
        phi = rng.uniform(0.0, 2.0 * np.pi)
        r0 = FAZ_FRACTION * radius * rng.uniform(1.0, 1.3)
        queue.append((x0 + r0 * np.cos(phi), y0 + r0 * np.sin(phi), phi))
    paths = []
    budget = n_seeds * 3
    while queue and budget > 0:
        budget -= 1
        x, y, ang = queue.pop()
        pts = []
        for _ in range(int(3 * radius)):
            radial = np.arctan2(y - y0, x - x0)
            # drift back toward the outward direction so walks do not curl up
            ang += 0.25 * np.angle(np.exp(1j * (radial - ang))) + rng.normal(0.0, tortuosity)
            x += np.cos(ang)
            y += np.sin(ang)
            if np.hypot(x - x0, y - y0) > 0.97 * radius:
                break
            pts.append((x, y))
            if rng.random() < 0.02 and budget > 0:
                queue.append((x, y, ang + rng.choice([-1.0, 1.0]) * rng.uniform(0.4, 0.9)))
        if len(pts) > 2:
            paths.append(np.asarray(pts))
    return paths


def _paint_paths(paths, size, rng, keep_mask=None, keep_prob=1.0, chunk=8):
    """Stamp path points onto a canvas, dropping in-mask chunks randomly."""
    canvas = np.zeros((size, size))
    for pts in paths:
        xi = np.clip(np.rint(pts[:, 0]).astype(int), 0, size - 1)
        yi = np.clip(np.rint(pts[:, 1]).astype(int), 0, size - 1)
        for lo in range(0, len(pts), chunk):
            sl = slice(lo, lo + chunk)
            if keep_mask is not None and keep_prob < 1.0:
                inside = keep_mask[yi[sl], xi[sl]].mean() > 0.5
                if inside and rng.random() > keep_prob:
                    continue
            canvas[yi[sl], xi[sl]] = 1.0
    return canvas


def planted_region_mask(spec: SynthSpec, size: int) -> np.ndarray:
    pole = ((size - 1) / 2.0, (size - 1) / 2.0)
    radius = (size - 1) / 2.0
    labels = etdrs.cartesian_region_labels(etdrs.EtdrsSpec(), (size, size), pole, radius)
    mask = np.zeros((size, size), dtype=bool)
    for region in spec.planted_regions:
        mask |= labels == etdrs.REGIONS.index(region)
    return mask


def _layer_rng(spec: SynthSpec, subject: int, layer: str):
    return np.random.default_rng(
        np.random.SeedSequence([spec.seed, subject, etdrs.LAYERS.index(layer)])
    )


def synth_layer(spec: SynthSpec, subject: int, layer: str, label: int) -> np.ndarray:
    """One layer image in [0, 1]; pole is the image center."""
    size = spec.image_size
    rng = _layer_rng(spec, subject, layer)
    pole = ((size - 1) / 2.0, (size - 1) / 2.0)
    radius = (size - 1) / 2.0
    planted = label == 1 and layer in spec.planted_layers and spec.density_multiplier < 1.0
    keep_mask = planted_region_mask(spec, size) if planted else None

    bg = 0.22 * perlin_field(rng, size)
    if layer == "CC":
        texture = gaussian_filter(rng.random((size, size)), 0.7)
        lo, hi = texture.min(), texture.max()
        texture = (texture - lo) / (hi - lo + 1e-12)
        if planted:
            texture = np.where(keep_mask, spec.density_multiplier * texture, texture)
        img = 0.35 * bg + 0.65 * texture
    else:
        seeds = spec.branch_count if layer == "SVC" else 2 * spec.branch_count
        sigma = spec.thickness if layer == "SVC" else 0.55 * spec.thickness
        paths = _vessel_paths(rng, size, pole, radius, seeds, spec.tortuosity)
        strokes = _paint_paths(
            paths, size, rng, keep_mask=keep_mask, keep_prob=spec.density_multiplier
        )
        vessels = gaussian_filter(strokes, sigma)
        peak = vessels.max()
        if peak > 0:
            vessels = vessels / peak
        img = bg + 0.8 * vessels
    img = img + rng.normal(0.0, spec.noise_level, size=(size, size))
    return np.clip(img, 0.0, 1.0)


def subject_label(spec: SynthSpec, subject: int) -> int:
    n_pos = int(round(spec.n_subjects * spec.class_balance))
    return 1 if subject < n_pos else 0


def subject_laterality(spec: SynthSpec, subject: int) -> str:
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, subject, 99]))
    return "OD" if rng.random() < 0.5 else "OS"


def generate_subject(spec: SynthSpec, subject: int) -> dict:
    """All three layer images plus metadata for one subject.

    Images are generated in right-eye orientation and mirrored for OS
    subjects, so the loader's OS->OD flip restores canonical geometry.
    """
    spec.validate()
    label = subject_label(spec, subject)
    laterality = subject_laterality(spec, subject)
    layers = {}
    for layer in etdrs.LAYERS:
        img = synth_layer(spec, subject, layer, label)
        if laterality == "OS":
            img = img[:, ::-1].copy()
        layers[layer] = img
    return {"label": label, "laterality": laterality, "layers": layers}


def smooth_image(seed: int, size: int) -> np.ndarray:
    """Smooth mode: a band-limited vessel-like field for geometry oracles."""
    spec = SynthSpec(n_subjects=2, image_size=size, thickness=3.0, noise_level=0.0, seed=seed)
    img = synth_layer(spec, 0, "SVC", 0)
    img = gaussian_filter(img, 2.0)
    lo, hi = img.min(), img.max()
    return (img - lo) / (hi - lo + 1e-12)
