import math

import numpy as np
import pytest

from errors import DegenerateSignalError, DimensionError, FormatError, NumericError
from models import MeasurementVector, SensingConfig, SimulatedSet
from patterns import build_measurement_matrix
from sensing import (
    add_awgn,
    derive_seed,
    empirical_snr_db,
    measure,
    read_container,
    simulate_batch,
    write_container,
)


def test_constant_image_only_excites_the_dc_pattern():
    A = build_measurement_matrix(4, 16)
    y = measure(np.ones((4, 4)), A)
    assert y.values[0] == 16
    assert np.all(y.values[1:] == 0)
    assert y.config.m == 16


def test_measure_checks_shape_and_values(matrix_32_128):
    with pytest.raises(DimensionError):
        measure(np.zeros((16, 16)), matrix_32_128)
    image = np.zeros((32, 32))
    image[3, 3] = np.nan
    with pytest.raises(NumericError):
        measure(image, matrix_32_128)


def test_measurement_vector_length_must_match():
    with pytest.raises(DimensionError):
        MeasurementVector(values=np.zeros(5), config=SensingConfig(image_side=4, m=6))


def test_noiseless_leaves_measurements_untouched(matrix_32_128, rng):
    y = measure(rng.random((32, 32)), matrix_32_128)
    assert add_awgn(y, None, seed=1) is y


def test_zero_signal_with_finite_snr():
    y = measure(np.zeros((4, 4)), build_measurement_matrix(4, 4))
    with pytest.raises(DegenerateSignalError):
        add_awgn(y, 25.0, seed=0)


def test_noise_is_seeded(matrix_32_128, rng):
    y = measure(rng.random((32, 32)), matrix_32_128)
    a = add_awgn(y, 10.0, seed=7).values
    b = add_awgn(y, 10.0, seed=7).values
    c = add_awgn(y, 10.0, seed=8).values
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_noise_power_matches_requested_snr(rng):
    A = build_measurement_matrix(64, 4096)
    y = measure(rng.random((64, 64)), A)
    measured = [empirical_snr_db(y.values, add_awgn(y, 10.0, seed=s).values) for s in range(10)]
    assert np.mean(measured) == pytest.approx(10.0, abs=0.2)


def test_noise_power_references_mean_square_with_dc(rng):
    A = build_measurement_matrix(32, 128)
    y = measure(rng.random((32, 32)), A)
    noisy = add_awgn(y, 0.0, seed=3)
    expected_sigma = math.sqrt(np.mean(y.values ** 2))
    noise = noisy.values - y.values
    assert np.std(noise) == pytest.approx(expected_sigma, rel=0.2)
    assert noisy.config.snr_db == 0.0


def test_batch_seeds_do_not_depend_on_batch_composition(matrix_32_128, rng):
    images = rng.random((5, 32, 32))
    batch = simulate_batch(images, matrix_32_128, 25.0, global_seed=11)
    alone = simulate_batch(images[3:4], matrix_32_128, 25.0, global_seed=11, offset=3)
    assert np.array_equal(batch[3], alone[0])
    single = add_awgn(measure(images[3], matrix_32_128), 25.0, derive_seed(11, 3)).values
    assert np.array_equal(batch[3], single)


def test_derive_seed_is_stable():
    assert derive_seed(1, 2) == derive_seed(1, 2)
    assert derive_seed(1, 2) != derive_seed(2, 1)


def test_container_with_reconstructions(tmp_path, rng):
    data = SimulatedSet(
        image_side=8,
        m=16,
        snr_db=None,
        truths=rng.random((3, 8, 8)).astype(np.float32),
        measurements=rng.standard_normal((3, 16)).astype(np.float32),
        reconstructions=rng.random((3, 8, 8)).astype(np.float32),
    )
    path = write_container(tmp_path / "set.spi", data)
    raw = path.read_bytes()
    assert raw[:4] == b"SPI1"
    loaded = read_container(path)
    assert loaded.snr_db is None
    assert loaded.count == 3
    assert np.array_equal(loaded.truths, data.truths)
    assert np.array_equal(loaded.measurements, data.measurements)
    assert np.array_equal(loaded.reconstructions, data.reconstructions)


def test_container_without_reconstructions(tmp_path, rng):
    data = SimulatedSet(8, 16, 25.0, rng.random((2, 8, 8)), rng.standard_normal((2, 16)))
    loaded = read_container(write_container(tmp_path / "set.spi", data))
    assert loaded.snr_db == 25.0
    assert loaded.reconstructions is None


def test_container_rejects_damage(tmp_path, rng):
    data = SimulatedSet(8, 16, 25.0, rng.random((2, 8, 8)), rng.standard_normal((2, 16)))
    path = write_container(tmp_path / "set.spi", data)
    raw = path.read_bytes()

    (tmp_path / "short.spi").write_bytes(raw[:-4])
    with pytest.raises(FormatError):
        read_container(tmp_path / "short.spi")

    (tmp_path / "magic.spi").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(FormatError):
        read_container(tmp_path / "magic.spi")

    (tmp_path / "header.spi").write_bytes(raw[:10])
    with pytest.raises(FormatError):
        read_container(tmp_path / "header.spi")


def test_measure_is_linear(matrix_32_128, rng):
    x1, x2 = rng.random((32, 32)), rng.random((32, 32))
    a, b = 1.7, -0.4
    combined = measure(a * x1 + b * x2, matrix_32_128).values
    separate = a * measure(x1, matrix_32_128).values + b * measure(x2, matrix_32_128).values
    assert np.linalg.norm(combined - separate) / np.linalg.norm(separate) < 1e-12


def test_single_corner_pixel_enumerates_the_patterns():
    A = build_measurement_matrix(2, 4)
    image = np.array([[1.0, 0.0], [0.0, 0.0]])
    y = measure(image, A)
    # every Sylvester pattern is +1 in the top-left corner
    assert np.array_equal(y.values, A.dense()[:, 0].astype(np.float64))
    assert np.array_equal(y.values, np.ones(4))
    assert np.allclose(A.adjoint(y.values).reshape(2, 2) / 4, image)
    assert np.all(measure(np.zeros((2, 2)), A).values == 0)
