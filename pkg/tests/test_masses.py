"""Mass policies: uniform, prior-match boosting, intensity mapping, parsing."""
import numpy as np
import pytest

from mbga import (PointCloud, PriorMatchSet, apply_prior_matches, load_priors,
                  masses_from_intensity, set_uniform_masses)
from mbga.errors import (IndexOutOfRange, MissingIntensities, NonPositive,
                         ParseError)


def cloud(n=5, dim=3, intensities=None):
    pts = np.arange(n * dim, dtype=float).reshape(n, dim)
    return PointCloud.from_points(pts, intensities=intensities)


class TestUniform:
    def test_sets_value(self):
        out = set_uniform_masses(cloud(), 2.5)
        np.testing.assert_array_equal(out.masses, np.full(5, 2.5))

    def test_rejects_non_positive(self):
        with pytest.raises(NonPositive):
            set_uniform_masses(cloud(), 0.0)


class TestPriorMatches:
    def test_multiplicative_boost(self):
        clouds = [cloud(), cloud()]
        priors = [PriorMatchSet(((0, 1), (1, 3)), weight=100.0)]
        out = apply_prior_matches(clouds, priors)
        np.testing.assert_array_equal(out[0].masses, [1, 100, 1, 1, 1])
        np.testing.assert_array_equal(out[1].masses, [1, 1, 1, 100, 1])

    def test_stacked_priors_multiply(self):
        clouds = [cloud(), cloud()]
        priors = [PriorMatchSet(((0, 0), (1, 0)), weight=10.0),
                  PriorMatchSet(((0, 0), (1, 1)), weight=5.0)]
        out = apply_prior_matches(clouds, priors)
        assert out[0].masses[0] == 50.0

    def test_inputs_unchanged(self):
        clouds = [cloud(), cloud()]
        apply_prior_matches(clouds, [PriorMatchSet(((0, 0), (1, 0)), 7.0)])
        np.testing.assert_array_equal(clouds[0].masses, np.ones(5))

    def test_bad_cloud_index(self):
        with pytest.raises(IndexOutOfRange):
            apply_prior_matches([cloud()], [PriorMatchSet(((3, 0),), 2.0)])

    def test_bad_point_index(self):
        with pytest.raises(IndexOutOfRange):
            apply_prior_matches([cloud()], [PriorMatchSet(((0, 99),), 2.0)])

    def test_weight_below_one_rejected(self):
        with pytest.raises(ValueError):
            PriorMatchSet(((0, 0),), weight=0.5)


class TestIntensity:
    def test_linear_map(self):
        c = cloud(intensities=[0.0, 0.25, 0.5, 0.75, 1.0])
        out = masses_from_intensity(c, 1.0, 9.0)
        np.testing.assert_allclose(out.masses, [1, 3, 5, 7, 9])

    def test_clamped_to_bounds(self):
        c = cloud(intensities=[-0.5, 2.0, 0.5, 0.5, 0.5])
        out = masses_from_intensity(c, 1.0, 3.0)
        assert out.masses.min() >= 1.0 and out.masses.max() <= 3.0

    def test_missing_intensities(self):
        with pytest.raises(MissingIntensities):
            masses_from_intensity(cloud(), 1.0, 2.0)

    def test_non_positive_bounds(self):
        c = cloud(intensities=np.full(5, 0.5))
        with pytest.raises(NonPositive):
            masses_from_intensity(c, 0.0, 2.0)


class TestLoadPriors:
    def test_round_trip(self, tmp_path):
        p = tmp_path / "priors.txt"
        p.write_text("# cloud point group weight\n"
                     "0 4 g1 100\n"
                     "1 7 g1 100\n"
                     "\n"
                     "0 2 g2 50  # another group\n"
                     "2 9 g2 50\n")
        priors = load_priors(p)
        by_weight = {pr.weight: pr.matches for pr in priors}
        assert by_weight[100.0] == ((0, 4), (1, 7))
        assert by_weight[50.0] == ((0, 2), (2, 9))

    def test_bad_field_count(self, tmp_path):
        p = tmp_path / "bad.txt"
        p.write_text("0 4 g1\n")
        with pytest.raises(ParseError) as e:
            load_priors(p)
        assert e.value.line == 1

    def test_bad_number(self, tmp_path):
        p = tmp_path / "bad.txt"
        p.write_text("0 x g1 100\n")
        with pytest.raises(ParseError):
            load_priors(p)

    def test_conflicting_weights(self, tmp_path):
        p = tmp_path / "bad.txt"
        p.write_text("0 1 g1 100\n1 2 g1 99\n")
        with pytest.raises(ParseError):
            load_priors(p)
