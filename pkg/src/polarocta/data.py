"""Image files, dataset manifests, and polar stack assembly.

Images are 8- or 16-bit grayscale PNG or binary PGM (P5), normalized to
[0, 1] on load.  A dataset manifest is a CSV with columns subject_id,
label, laterality, svc, dvc, cc, pole_x, pole_y, fold; image paths are
relative to the manifest's directory.
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from . import etdrs, polar, synth
from .errors import FormatError, UsageError

MANIFEST_COLUMNS = (
    "subject_id", "label", "laterality", "svc", "dvc", "cc", "pole_x", "pole_y", "fold",
)


def write_pgm(path, img01: np.ndarray, maxval: int = 65535) -> None:
    """Binary P5; 16-bit samples are big-endian per the Netpbm spec."""
    q = np.clip(np.rint(img01 * maxval), 0, maxval)
    h, w = img01.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n{maxval}\n".encode())
        if maxval > 255:
            fh.write(q.astype(">u2").tobytes())
        else:
            fh.write(q.astype(np.uint8).tobytes())


def _read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    m = re.match(rb"P5\s+(?:#[^\n]*\n\s*)?(\d+)\s+(\d+)\s+(\d+)\s", raw)
    if not m:
        raise FormatError(f"{path}: not a binary PGM")
    w, h, maxval = (int(g) for g in m.groups())
    data = raw[m.end():]
    dtype = ">u2" if maxval > 255 else np.uint8
    arr = np.frombuffer(data, dtype=dtype, count=h * w).reshape(h, w)
    return arr.astype(np.float64) / maxval


def read_image(path) -> np.ndarray:
    """Grayscale image as float64 in [0, 1]."""
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        return _read_pgm(path)
    with Image.open(path) as im:
        if im.mode in ("I;16", "I;16B", "I"):
            arr = np.asarray(im, dtype=np.float64)
            return arr / 65535.0
        arr = np.asarray(im.convert("L"), dtype=np.float64)
        return arr / 255.0


@dataclass
class ManifestRow:
    subject_id: str
    label: int
    laterality: str
    paths: dict  # layer -> absolute Path
    pole: tuple[float, float]
    fold: int


def write_manifest(path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=MANIFEST_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)


def load_manifest(path) -> list[ManifestRow]:
    path = Path(path)
    base = path.parent
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            try:
                rows.append(
                    ManifestRow(
                        subject_id=rec["subject_id"],
                        label=int(rec["label"]),
                        laterality=rec["laterality"],
                        paths={k: base / rec[k.lower()] for k in etdrs.LAYERS},
                        pole=(float(rec["pole_x"]), float(rec["pole_y"])),
                        fold=int(rec["fold"]),
                    )
                )
            except (KeyError, ValueError) as exc:
                raise FormatError(f"{path}: bad manifest row {rec}: {exc}") from None
    if not rows:
        raise FormatError(f"{path}: empty manifest")
    return rows


def stratified_folds(ids_labels: list[tuple[str, int]], folds: int, seed: int) -> dict:
    """Subject id -> fold, stratified by label; independent of input order."""
    by_class: dict[int, list[str]] = {}
    for sid, label in sorted(ids_labels):
        by_class.setdefault(label, []).append(sid)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xF01D]))
    assign = {}
    for label in sorted(by_class):
        ids = sorted(by_class[label])
        rng.shuffle(ids)
        for pos, sid in enumerate(ids):
            assign[sid] = pos % folds
    return assign


def generate_dataset(spec: synth.SynthSpec, out_dir, folds: int = 5) -> Path:
    """Write layer images and the manifest; returns the manifest path."""
    spec.validate()
    out_dir = Path(out_dir)
    img_dir = out_dir / "images"
    img_dir.mkdir(parents=True, exist_ok=True)
    ids_labels = [
        (f"sub{idx:04d}", synth.subject_label(spec, idx)) for idx in range(spec.n_subjects)
    ]
    fold_of = stratified_folds(ids_labels, folds, spec.seed)
    pole = ((spec.image_size - 1) / 2.0, (spec.image_size - 1) / 2.0)
    rows = []
    for idx in range(spec.n_subjects):
        sid = f"sub{idx:04d}"
        subj = synth.generate_subject(spec, idx)
        rec = {
            "subject_id": sid,
            "label": subj["label"],
            "laterality": subj["laterality"],
            "pole_x": f"{pole[0]:.2f}",
            "pole_y": f"{pole[1]:.2f}",
            "fold": fold_of[sid],
        }
        for layer in etdrs.LAYERS:
            rel = f"images/{sid}_{layer.lower()}.pgm"
            write_pgm(out_dir / rel, subj["layers"][layer])
            rec[layer.lower()] = rel
        rows.append(rec)
    manifest = out_dir / "manifest.csv"
    write_manifest(manifest, rows)
    return manifest


def load_polar_stack(row: ManifestRow, out_height: int, out_width: int) -> np.ndarray:
    """Load, flip OS to OD, and polar-transform one subject -> [3, H_p, W_p]."""
    imgs = []
    pole = row.pole
    for layer in etdrs.LAYERS:
        img = polar.CartesianImage(read_image(row.paths[layer]), laterality=row.laterality)
        if img.laterality == polar.OS:
            pole = polar.flip_pole(row.pole, img.width)
            img = polar.flip_os_to_od(img)
        imgs.append(img)
    radius = polar.largest_inscribed_radius(imgs[0].height, imgs[0].width, pole)
    spec = polar.TransformSpec(
        pole=pole, radius_px=radius, out_width=out_width, out_height=out_height
    )
    stack = np.stack([polar.to_polar(img, spec).pixels for img in imgs])
    return stack.astype(np.float32)


class PolarStackCache:
    """Per-run cache of transformed stacks keyed by subject id."""

    def __init__(self, rows: list[ManifestRow], out_height: int, out_width: int):
        self.rows = {r.subject_id: r for r in rows}
        self.dims = (out_height, out_width)
        self._cache: dict[str, np.ndarray] = {}

    def stack(self, subject_id: str) -> np.ndarray:
        got = self._cache.get(subject_id)
        if got is None:
            row = self.rows.get(subject_id)
            if row is None:
                raise UsageError(f"unknown subject id {subject_id}")
            got = load_polar_stack(row, *self.dims)
            self._cache[subject_id] = got
        return got

    def label(self, subject_id: str) -> int:
        return self.rows[subject_id].label
