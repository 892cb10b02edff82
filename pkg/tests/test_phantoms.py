"""Phantom construction and image file round trips."""

import numpy as np
import pytest

from demotion.errors import ContractViolationError
from demotion.phantoms import (
    load_f32,
    load_pgm16,
    random_phantom,
    save_f32,
    save_pgm16,
    shepp_logan,
)


def test_shepp_logan_canonical_values():
    img = shepp_logan(64)
    assert img.shape == (64, 64)
    assert img.max() == pytest.approx(1.0)
    # background (outside the skull ellipse) is exactly zero
    assert img[0, 0] == 0.0
    assert img[0, -1] == 0.0
    assert img[-1, 0] == 0.0
    assert img.min() >= 0.0
    # interior tissue steps exist: more than a binary image
    assert len(np.unique(np.round(img, 6))) > 3


def test_shepp_logan_rejects_tiny_size():
    with pytest.raises(ContractViolationError):
        shepp_logan(4)


def test_random_phantom_deterministic_and_bounded():
    a = random_phantom(48, np.random.default_rng(9))
    b = random_phantom(48, np.random.default_rng(9))
    c = random_phantom(48, np.random.default_rng(10))
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert a.min() >= 0.0 and a.max() == pytest.approx(1.0)


def test_f32_round_trip_exact(tmp_path):
    img = random_phantom(32, np.random.default_rng(0))
    path = tmp_path / "img.f32"
    save_f32(path, img)
    back = load_f32(path, 32, 32)
    assert np.array_equal(back, img.astype(np.float32).astype(np.float64))
    with pytest.raises(ContractViolationError):
        load_f32(path, 32, 33)


def test_pgm16_round_trip_and_determinism(tmp_path):
    img = shepp_logan(32)
    p1 = tmp_path / "a.pgm"
    p2 = tmp_path / "b.pgm"
    save_pgm16(p1, img)
    save_pgm16(p2, img)
    assert p1.read_bytes() == p2.read_bytes()
    back = load_pgm16(p1)
    assert back.shape == (32, 32)
    assert np.max(np.abs(back - img)) <= 0.5 / 65535.0 + 1e-12


def test_pgm16_rejects_foreign_files(tmp_path):
    bad = tmp_path / "bad.pgm"
    bad.write_bytes(b"P2\n4 4\n255\n" + b"0 " * 16)
    with pytest.raises(ContractViolationError):
        load_pgm16(bad)
    trunc = tmp_path / "trunc.pgm"
    trunc.write_bytes(b"P5\n8 8\n65535\n" + b"\x00" * 10)
    with pytest.raises(ContractViolationError):
        load_pgm16(trunc)
