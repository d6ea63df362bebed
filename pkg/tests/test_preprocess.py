import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from holoml.optics import OpticsConfig, Particle, propagate, synthesize_hologram
from holoml.preprocess import assemble_input, depth_map, phase_map, reconstruct_volume, reference_carrier


def brute_depth(volume):
    z, ny, nx = volume.shape
    out = np.zeros((ny, nx), dtype=int)
    for y in range(ny):
        for x in range(nx):
            best, arg = -1.0, 0
            for j in range(z):
                v = volume[j, y, x]
                val = v.real * v.real + v.imag * v.imag
                if val > best:
                    best, arg = val, j
            out[y, x] = arg
    return out


def brute_phase(volume):
    import cmath
    import math

    z, ny, nx = volume.shape
    out = np.zeros((ny, nx))
    for y in range(ny):
        for x in range(nx):
            vals = []
            for j in range(z):
                a = cmath.phase(complex(volume[j, y, x]))
                vals.append(math.pi if a == -math.pi else a)
            out[y, x] = max(vals)
    return out


def test_uniform_hologram_reconstructs_to_unit_modulus():
    cfg = OpticsConfig(nx=16, ny=16, z_count=4)
    vol = reconstruct_volume(np.ones(cfg.shape), cfg)
    assert vol.shape == (4, 16, 16)
    assert np.allclose(vol, 1.0, atol=1e-12)
    for j in range(4):
        assert np.allclose(vol[j], vol[j, 0, 0], atol=1e-12)


def test_volume_slices_match_direct_propagation():
    cfg = OpticsConfig(nx=32, ny=32, z_count=8, z_step=50e-6)
    holo = synthesize_hologram([Particle(11, 7, 3)], cfg)
    vol = reconstruct_volume(holo, cfg)
    for j in range(cfg.z_count):
        assert np.array_equal(vol[j], propagate(holo, -cfg.depth(j), cfg) * reference_carrier(cfg, j))


def test_particle_focus_is_dark_at_its_own_slice():
    cfg = OpticsConfig(nx=64, ny=64)
    for z in (5, 40, 70, 120):
        vol = reconstruct_volume(synthesize_hologram([Particle(30, 22, z)], cfg), cfg)
        axial = np.abs(vol[:, 22, 30]) ** 2
        assert abs(int(axial.argmin()) - z) <= 2
        assert axial.min() < 0.05


def test_two_slices():
    cfg = OpticsConfig(nx=16, ny=16, z_count=2)
    vol = reconstruct_volume(np.ones(cfg.shape) * 2, cfg)
    assert vol.shape[0] == 2
    assert cfg.depth(0) == cfg.z_min and cfg.depth(1) == cfg.z_min + cfg.z_step


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        reconstruct_volume(np.ones((8, 9)), OpticsConfig(nx=8, ny=8))


def test_depth_map_constructed_cases():
    vol = np.ones((8, 4, 4), dtype=complex)
    vol[5] = 2.0
    assert np.all(depth_map(vol) == 5)
    assert np.all(depth_map(np.ones((8, 4, 4), dtype=complex)) == 0)


def test_phase_map_constructed_cases():
    assert np.all(phase_map(np.ones((5, 3, 3), dtype=complex)) == 0)
    vol = np.ones((5, 3, 3), dtype=complex)
    vol[2] = 1j
    assert np.allclose(phase_map(vol), np.pi / 2)
    negative_real = np.full((2, 2, 2), complex(-1.0, -0.0))
    assert np.all(phase_map(negative_real) == np.pi)


def test_maps_match_brute_force_on_random_volumes():
    rng = np.random.default_rng(0)
    for _ in range(20):
        vol = rng.standard_normal((8, 4, 4)) + 1j * rng.standard_normal((8, 4, 4))
        assert np.array_equal(depth_map(vol), brute_depth(vol))
        assert np.allclose(phase_map(vol), brute_phase(vol), rtol=0, atol=1e-15)


def test_assemble_input_endpoints():
    cfg = OpticsConfig(nx=16, ny=16, z_count=4)
    stack = assemble_input(np.ones(cfg.shape), cfg)
    assert stack.shape == (3, 16, 16)
    assert np.all(stack[0] == 0)


def test_channel_normalizations(monkeypatch):
    import holoml.preprocess as pre

    cfg = OpticsConfig(nx=8, ny=8, z_count=6)
    monkeypatch.setattr(pre, "depth_map", lambda v: np.full((8, 8), 5))
    monkeypatch.setattr(pre, "phase_map", lambda v: np.full((8, 8), np.pi))
    stack = pre.assemble_input(np.random.default_rng(0).random((8, 8)), cfg)
    assert np.all(stack[1] == 1.0)
    assert np.all(stack[2] == 1.0)


@settings(max_examples=25, deadline=None)
@given(arrays(np.float64, (8, 8), elements=st.floats(0, 4)))
def test_input_stack_in_unit_range(holo):
    cfg = OpticsConfig(nx=8, ny=8, z_count=5)
    stack = assemble_input(holo, cfg)
    assert np.all(stack >= 0) and np.all(stack <= 1)
    steps = stack[1] * (cfg.z_count - 1)
    assert np.allclose(steps, np.round(steps))


def test_depth_map_invariant_to_positive_scaling():
    cfg = OpticsConfig(nx=32, ny=32, z_count=16, z_step=40e-6)
    holo = synthesize_hologram([Particle(5, 5, 3), Particle(20, 25, 12)], cfg)
    a = depth_map(reconstruct_volume(holo, cfg))
    b = depth_map(reconstruct_volume(holo * 3.7, cfg))
    assert np.array_equal(a, b)


def test_sensor_modes_and_determinism():
    cfg = OpticsConfig(nx=16, ny=16, z_count=3)
    holo = synthesize_hologram([Particle(4, 4, 1)], cfg)
    for mode in ("raw", "sqrt", "contrast"):
        assert np.array_equal(assemble_input(holo, cfg, mode), assemble_input(holo, cfg, mode))
    with pytest.raises(ValueError):
        assemble_input(holo, cfg, "bogus")


def test_depth_channel_finds_isolated_particles():
    cfg = OpticsConfig(nx=64, ny=64)
    found = []
    for z in (0, 5, 40, 90, 127):
        stack = assemble_input(synthesize_hologram([Particle(30, 33, z)], cfg), cfg)
        found.append(stack[1, 33, 30] * (cfg.z_count - 1))
        # a 1-px aperture focuses over ~pitch^2/wavelength, so allow a few slices of bias
        assert abs(found[-1] - z) <= 8
    assert found == sorted(found)
