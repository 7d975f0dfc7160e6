import json

import numpy as np
import pytest

from mcssl.arrays import (SPEED_OF_SOUND, ArrayGeometry, DirectionGrid,
                          SteeringField, build_field, steering_vector,
                          unit_direction)


class TestArrayGeometry:
    def test_circular_radius_and_first_mic(self):
        g = ArrayGeometry.circular(6, diameter=0.20)
        assert g.n_mics == 6
        np.testing.assert_allclose(np.linalg.norm(g.mic_positions, axis=1), 0.10)
        np.testing.assert_allclose(g.mic_positions[0], [0.10, 0.0, 0.0], atol=1e-15)

    def test_centroid_recentered(self):
        g = ArrayGeometry(np.array([[1.0, 2.0, 0.0], [3.0, 2.0, 0.0]]))
        np.testing.assert_allclose(g.mic_positions.mean(axis=0), 0.0, atol=1e-15)

    def test_validation(self):
        with pytest.raises(ValueError):
            ArrayGeometry(np.zeros((1, 3)))
        with pytest.raises(ValueError):
            ArrayGeometry(np.full((3, 3), np.nan))
        with pytest.raises(ValueError):
            ArrayGeometry(np.zeros((3, 2)))

    def test_json_round_trip(self, tmp_path):
        g = ArrayGeometry.circular(4, 0.3, speed_of_sound=340.0)
        g.to_json(tmp_path / "g.json")
        back = ArrayGeometry.from_json(tmp_path / "g.json")
        np.testing.assert_allclose(back.mic_positions, g.mic_positions, atol=1e-12)
        assert back.speed_of_sound == 340.0

    def test_from_json_default_speed(self, tmp_path):
        with open(tmp_path / "g.json", "w") as f:
            json.dump({"mics": [[0, 0, 0], [0.1, 0, 0]]}, f)
        assert ArrayGeometry.from_json(tmp_path / "g.json").speed_of_sound \
            == SPEED_OF_SOUND


class TestDirectionGrid:
    def test_spacing(self):
        grid = DirectionGrid(72)
        assert grid.degrees[1] == pytest.approx(5.0)
        assert grid.azimuths.shape == (72,)

    def test_nearest_bin_wraps(self):
        grid = DirectionGrid(72)
        assert grid.nearest_bin(0.0) == 0
        assert grid.nearest_bin(7.4) == 1
        assert grid.nearest_bin(7.6) == 2
        assert grid.nearest_bin(359.0) == 0
        assert grid.nearest_bin(357.4) == 71

    def test_needs_a_direction(self):
        with pytest.raises(ValueError):
            DirectionGrid(0)


class TestSteering:
    def test_unit_modulus(self):
        g = ArrayGeometry.circular(6)
        a = steering_vector(g, 1.0, 2000.0)
        np.testing.assert_allclose(np.abs(a), 1.0)

    def test_phase_oracle_two_mics(self):
        # mics at +/- d/2 on x, source on +x: the +x mic hears the wave
        # earlier, so its phase leads by 2 pi f (d/2) / c.
        d, f = 0.1, 1000.0
        g = ArrayGeometry(np.array([[d / 2, 0, 0], [-d / 2, 0, 0]]))
        a = steering_vector(g, 0.0, f)
        expected = 2 * np.pi * f * (d / 2) / SPEED_OF_SOUND
        np.testing.assert_allclose(np.angle(a[0]), expected, rtol=1e-12)
        np.testing.assert_allclose(np.angle(a[1]), -expected, rtol=1e-12)

    def test_matches_fractionally_delayed_signal(self):
        # a plane wave synthesized as per-mic delayed sinusoids has the same
        # relative phases as the steering vector
        g = ArrayGeometry.circular(6)
        az, f, fs = np.deg2rad(40.0), 1500.0, 16000
        tau = -(g.mic_positions @ unit_direction(az)) / g.speed_of_sound
        t = np.arange(1024) / fs
        x = np.cos(2 * np.pi * f * (t[:, None] - tau[None, :]))
        X = np.fft.rfft(x, axis=0)
        k = int(round(f * 1024 / fs))
        a = steering_vector(g, az, f)
        ratio = (X[k] / X[k, 0]) / (a / a[0])
        np.testing.assert_allclose(ratio, 1.0, atol=1e-3)

    def test_negative_freq_rejected(self):
        with pytest.raises(ValueError):
            steering_vector(ArrayGeometry.circular(4), 0.0, -1.0)


class TestSteeringField:
    def test_matches_steering_vector(self, field6):
        grid = field6.grid
        for fi in (10, 100):
            for d in (0, 18, 40):
                np.testing.assert_allclose(
                    field6.vectors[fi, d],
                    steering_vector(field6.geometry, grid.azimuths[d],
                                    field6.freqs[fi]), rtol=1e-12)

    def test_template_is_rank_one_outer_product(self, field6):
        S = field6.template(50, 7)
        a = field6.vectors[50, 7]
        np.testing.assert_allclose(S, np.outer(a, a.conj()), rtol=1e-12)
        np.testing.assert_allclose(S, S.conj().T, rtol=1e-12)
        vals = np.linalg.eigvalsh(S)
        np.testing.assert_allclose(vals[-1], field6.n_mics, rtol=1e-12)
        np.testing.assert_allclose(vals[:-1], 0.0, atol=1e-9)

    def test_templates_stack(self, field6):
        T = field6.templates(30)
        assert T.shape == (72, 6, 6)
        np.testing.assert_allclose(T[5], field6.template(30, 5), rtol=1e-12)

    def test_band_indices(self, field6):
        band = field6.band_indices(100.0, 7600.0)
        assert field6.freqs[band[0]] >= 100.0
        assert field6.freqs[band[-1]] <= 7600.0
        assert field6.freqs[band[0] - 1] < 100.0
        assert np.all(np.diff(band) == 1)

    def test_dims(self, field6):
        assert (field6.n_bins, field6.n_directions, field6.n_mics) == (257, 72, 6)
