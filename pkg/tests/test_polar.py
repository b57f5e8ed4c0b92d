"""Geometry tests for the Cartesian <-> polar resampling."""

import numpy as np
import pytest

from polarocta import polar, synth
from polarocta.errors import DomainError
from polarocta.polar import CartesianImage, TransformSpec


def rotate_about_pole(img: np.ndarray, pole, angle_deg: float) -> np.ndarray:
    """Independent bilinear rotation oracle (counterclockwise about the pole)."""
    h, w = img.shape
    x0, y0 = pole
    ys, xs = np.mgrid[0:h, 0:w]
    a = np.deg2rad(angle_deg)
    # output point at angle theta samples the input at theta - a
    sx = x0 + np.cos(-a) * (xs - x0) - np.sin(-a) * (ys - y0)
    sy = y0 + np.sin(-a) * (xs - x0) + np.cos(-a) * (ys - y0)
    sx = np.clip(sx, 0, w - 1)
    sy = np.clip(sy, 0, h - 1)
    i0 = np.floor(sx).astype(int)
    j0 = np.floor(sy).astype(int)
    i1 = np.minimum(i0 + 1, w - 1)
    j1 = np.minimum(j0 + 1, h - 1)
    fx = sx - i0
    fy = sy - j0
    top = img[j0, i0] * (1 - fx) + img[j0, i1] * fx
    bot = img[j1, i0] * (1 - fx) + img[j1, i1] * fx
    return top * (1 - fy) + bot * fy


def centered_spec(size, out_width=96, out_height=192):
    pole = ((size - 1) / 2.0, (size - 1) / 2.0)
    return TransformSpec(
        pole=pole,
        radius_px=(size - 1) / 2.0,
        out_width=out_width,
        out_height=out_height,
    )


@pytest.fixture(scope="module")
def smooth():
    return synth.smooth_image(seed=5, size=128)


class TestInscribedRadius:
    def test_centered_pole(self):
        # pixel-center convention: borders sit at 0 and size-1
        assert polar.largest_inscribed_radius(224, 224, (112, 112)) == 111

    def test_nearest_border(self):
        assert polar.largest_inscribed_radius(224, 224, (100, 112)) == 100

    def test_min_over_borders(self):
        # min(150, 160, 303-150, 303-160) = 143
        assert polar.largest_inscribed_radius(304, 304, (150, 160)) == 143

    def test_pole_outside(self):
        with pytest.raises(DomainError):
            polar.largest_inscribed_radius(100, 100, (120, 50))


class TestToPolar:
    def test_constant_image(self):
        img = CartesianImage(np.full((64, 64), 0.4))
        p = polar.to_polar(img, centered_spec(64))
        assert np.allclose(p.pixels, 0.4, atol=1e-12)

    def test_radial_field_becomes_column_ramp(self):
        size = 129
        spec = centered_spec(size)
        ys, xs = np.mgrid[0:size, 0:size]
        r = np.hypot(xs - spec.pole[0], ys - spec.pole[1])
        img = CartesianImage(np.clip(r / spec.radius_px, 0, 1))
        p = polar.to_polar(img, spec)
        # constant along each column (away from the pole fill region)
        col_spread = p.pixels[:, 2:].max(axis=0) - p.pixels[:, 2:].min(axis=0)
        assert col_spread.max() < 0.02
        expected = (np.arange(spec.out_width) + 0.5) / spec.out_width
        assert np.allclose(p.pixels.mean(axis=0), expected, atol=0.02)

    def test_pole_column_nearly_constant(self, smooth):
        p = polar.to_polar(CartesianImage(smooth), centered_spec(128))
        col0 = p.pixels[:, 0]
        assert col0.max() - col0.min() < 0.02

    def test_round_trip_interior(self, smooth):
        spec = centered_spec(128, out_width=128, out_height=256)
        img = CartesianImage(smooth)
        p = polar.to_polar(img, spec)
        back = polar.from_polar(p, 128, 128)
        ys, xs = np.mgrid[0:128, 0:128]
        r = np.hypot(xs - spec.pole[0], ys - spec.pole[1])
        annulus = (r > 0.1 * spec.radius_px) & (r < 0.9 * spec.radius_px)
        err = np.abs(back.pixels - smooth)[annulus].mean()
        assert err < 0.02

    def test_spec_mismatch_rejected(self):
        img = CartesianImage(np.zeros((32, 32)))
        with pytest.raises(DomainError):
            polar.to_polar(img, TransformSpec(pole=(16, 16), radius_px=40))


class TestFromPolar:
    def test_constant_disk_zero_exterior(self):
        spec = centered_spec(64)
        p = polar.PolarImage(np.full((spec.out_height, spec.out_width), 0.8), spec)
        back = polar.from_polar(p, 64, 64)
        ys, xs = np.mgrid[0:64, 0:64]
        r = np.hypot(xs - spec.pole[0], ys - spec.pole[1])
        assert np.allclose(back.pixels[r <= spec.radius_px * 0.98], 0.8, atol=1e-6)
        assert np.all(back.pixels[r > spec.radius_px] == 0.0)

    def test_bright_column_becomes_ring(self):
        spec = centered_spec(129, out_width=64, out_height=128)
        px = np.zeros((128, 64))
        j = 40
        px[:, j] = 1.0
        back = polar.from_polar(polar.PolarImage(px, spec), 129, 129)
        ys, xs = np.mgrid[0:129, 0:129]
        r = np.hypot(xs - spec.pole[0], ys - spec.pole[1])
        ring_r = (j + 0.5) / 64 * spec.radius_px
        on_ring = np.abs(r - ring_r) < 0.5
        off_ring = (np.abs(r - ring_r) > 2.5) & (r <= spec.radius_px)
        assert back.pixels[on_ring].mean() > 0.5
        assert back.pixels[off_ring].max() < 1e-6


class TestFlip:
    def test_mirror_definition(self, rng):
        img = CartesianImage(rng.random((8, 10)), laterality=polar.OS)
        flipped = polar.flip_os_to_od(img)
        assert flipped.laterality == polar.OD
        assert np.array_equal(flipped.pixels[:, ::-1], img.pixels)

    def test_double_flip_identity(self, rng):
        img = CartesianImage(rng.random((8, 10)), laterality=polar.OS)
        once = polar.flip_os_to_od(img)
        again = CartesianImage(once.pixels, laterality=polar.OS)
        assert np.array_equal(polar.flip_os_to_od(again).pixels, img.pixels)

    def test_od_noop_with_warning(self, rng):
        img = CartesianImage(rng.random((8, 10)), laterality=polar.OD)
        with pytest.warns(UserWarning):
            out = polar.flip_os_to_od(img)
        assert np.array_equal(out.pixels, img.pixels)


class TestPolarRotate:
    def test_full_cycle_identity(self, rng):
        spec = centered_spec(64)
        p = polar.PolarImage(rng.random((spec.out_height, spec.out_width)), spec)
        out = polar.polar_rotate(polar.polar_rotate(p, 180.0), 180.0)
        assert np.array_equal(out.pixels, p.pixels)

    def test_shift_proportionality(self):
        spec = TransformSpec(pole=(50, 50), radius_px=40, out_width=32, out_height=360)
        px = np.zeros((360, 32))
        px[0, :] = 1.0
        out = polar.polar_rotate(polar.PolarImage(px, spec), 90.0)
        assert out.pixels[90, 0] == 1.0 and out.pixels[0, 0] == 0.0

    def test_inverse_shift(self, rng):
        spec = centered_spec(64)
        p = polar.PolarImage(rng.random((spec.out_height, spec.out_width)), spec)
        out = polar.polar_rotate(polar.polar_rotate(p, 45.0), -45.0)
        assert np.array_equal(out.pixels, p.pixels)

    @pytest.mark.parametrize("angle", [-20.0, -10.0, 10.0, 20.0, 90.0])
    def test_equivariance_with_cartesian_rotation(self, smooth, angle):
        spec = centered_spec(128, out_width=128, out_height=256)
        rotated = rotate_about_pole(smooth, spec.pole, angle)
        via_cart = polar.to_polar(CartesianImage(rotated), spec)
        via_shift = polar.polar_rotate(polar.to_polar(CartesianImage(smooth), spec), angle)
        diff = np.abs(via_cart.pixels[:, 2:] - via_shift.pixels[:, 2:]).mean()
        assert diff < 0.03


class TestRectangularWindowIsSector:
    def test_row_band_maps_to_annular_sector(self):
        spec = centered_spec(129, out_width=64, out_height=128)
        k = 16  # quarter of 45 degrees
        px = np.zeros((128, 64))
        px[20 : 20 + k, :] = 1.0
        back = polar.from_polar(polar.PolarImage(px, spec), 129, 129)
        ys, xs = np.mgrid[0:129, 0:129]
        dx = xs - spec.pole[0]
        dy = ys - spec.pole[1]
        r = np.hypot(dx, dy)
        theta = np.rad2deg(np.arctan2(dy, dx)) % 360.0
        lo = 20 / 128 * 360.0
        hi = (20 + k) / 128 * 360.0
        margin = 360.0 / 128  # one polar row
        inside = (r < 0.95 * spec.radius_px) & (r > 2.0)
        core = inside & (theta > lo + margin) & (theta < hi - margin)
        outside = inside & ((theta < lo - margin) | (theta > hi + margin))
        assert back.pixels[core].min() > 0.9
        assert back.pixels[outside].max() < 0.1
