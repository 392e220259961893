"""The analytic sine-boundary labelers and the low-fidelity design."""

import math

import numpy as np
import pytest

from mfgpc.data import LOW
from mfgpc.errors import ConfigError
from mfgpc.synthetic import (
    BOUNDARY_MARGIN,
    LOW_BOUNDARY,
    label_high,
    label_low,
    make_low_fidelity_design,
)


class TestLabelHigh:
    def test_peak_of_sine(self):
        # margin = sin(pi/2)/3 = 1/3 > 0
        assert label_high([0.2, 0.5]) == 1

    def test_top_left_corner(self):
        assert label_high([0.0, 1.0]) == 0

    def test_boundary_is_strict(self):
        assert label_high([0.0, 0.5]) == 0

    def test_out_of_domain(self):
        with pytest.raises(ConfigError):
            label_high([1.2, 0.5])

    def test_vectorized(self):
        out = label_high([[0.2, 0.5], [0.0, 1.0]])
        np.testing.assert_array_equal(out, [1, 0])


class TestLabelLow:
    def test_origin(self):
        assert label_low([0.0, 0.0]) == 1

    def test_boundary_is_strict(self):
        assert label_low([0.0, 0.45]) == 0

    def test_negative_sine_lobe(self):
        # 0.45 + sin(1.1 pi)/2.5 - 0.2 = 0.126393 > 0
        margin = 0.45 + math.sin(1.1 * math.pi) / 2.5 - 0.2
        assert margin > 0
        assert label_low([0.5, 0.2]) == 1


class TestDeterminismAndDisagreement:
    def test_labels_pure(self):
        x = [0.37, 0.61]
        assert label_high(x) == label_high(x)
        assert label_low(x) == label_low(x)

    def test_disagreement_rate_on_grid(self):
        g = np.linspace(0.0, 1.0, 100)
        xx, yy = np.meshgrid(g, g)
        pts = np.column_stack([xx.ravel(), yy.ravel()])
        rate = float(np.mean(label_high(pts) != label_low(pts)))
        assert 0.02 <= rate <= 0.20


class TestLowFidelityDesign:
    def test_size_and_fidelity(self):
        ds = make_low_fidelity_design(seed=0)
        assert ds.n == 45
        assert np.all(ds.fidelity == LOW)

    def test_near_boundary_margin(self):
        ds = make_low_fidelity_design(seed=1)
        near = ds.inputs[:30]
        margins = np.abs(LOW_BOUNDARY.margin(near))
        assert np.all(margins <= BOUNDARY_MARGIN + 1e-12)

    def test_both_classes_present(self):
        for seed in range(5):
            ds = make_low_fidelity_design(seed=seed)
            assert 0 < ds.labels.sum() < 45

    def test_labels_match_oracle(self):
        ds = make_low_fidelity_design(seed=3)
        np.testing.assert_array_equal(ds.labels, label_low(ds.inputs))

    def test_deterministic(self):
        a = make_low_fidelity_design(seed=9)
        b = make_low_fidelity_design(seed=9)
        np.testing.assert_array_equal(a.inputs, b.inputs)
