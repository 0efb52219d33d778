import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dfsim import DisorderSpec, Geometry, linear_array, linear_array_xi, sample_disorder


class TestLinearArray:
    def test_xi13_doubles_xi12(self):
        g = linear_array_xi(0.5, n=3, alpha=0.0)
        xi = g.xi_matrix()
        assert xi[0, 1] == pytest.approx(0.5, rel=1e-12)
        assert xi[0, 2] == pytest.approx(1.0, rel=1e-12)

    def test_symmetric_placement(self):
        g = linear_array_xi(0.37, n=3, alpha=0.3)
        xi = g.xi_matrix()
        assert xi[1, 2] == pytest.approx(xi[0, 1], rel=1e-12)

    def test_perpendicular_dipole_geometry(self):
        g = linear_array_xi(0.15, n=3, alpha=np.pi / 2)
        assert g.xi12 == pytest.approx(0.15, rel=1e-12)
        assert np.allclose(g.dipole, [0.0, 1.0, 0.0], atol=1e-12)

    def test_three_emitters_centred(self):
        g = linear_array(0.1, n=3)
        assert np.allclose(g.positions[:, 0], [-0.1, 0.0, 0.1])
        assert np.allclose(g.positions[:, 1:], 0.0)

    def test_four_emitters_equally_spaced(self):
        g = linear_array(0.2, n=4)
        gaps = np.diff(g.positions[:, 0])
        assert np.allclose(gaps, 0.2)
        assert abs(g.positions[:, 0].sum()) < 1e-15

    def test_rejects_bad_inputs(self):
        with pytest.raises(ValueError):
            linear_array(0.0, n=3)
        with pytest.raises(ValueError):
            linear_array(-0.1, n=3)
        with pytest.raises(ValueError):
            linear_array(0.1, n=5)

    def test_rejects_coincident_positions(self):
        pos = np.zeros((3, 3))
        pos[2, 0] = 0.5
        with pytest.raises(ValueError):
            Geometry(positions=pos, alpha=0.0)


class TestXiMatrixProperties:
    @settings(max_examples=25, deadline=None)
    @given(r=st.floats(min_value=0.005, max_value=0.2),
           alpha=st.floats(min_value=0.0, max_value=np.pi),
           shift=st.tuples(st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5)))
    def test_translation_invariance(self, r, alpha, shift):
        g = linear_array(r, n=3, alpha=alpha)
        moved = Geometry(positions=g.positions + np.asarray(shift),
                         alpha=alpha)
        assert np.allclose(moved.xi_matrix(), g.xi_matrix(), atol=1e-9)

    @settings(max_examples=25, deadline=None)
    @given(r=st.floats(min_value=0.005, max_value=0.2))
    def test_symmetric_zero_diagonal(self, r):
        g = linear_array(r, n=4)
        xi = g.xi_matrix()
        assert np.allclose(xi, xi.T)
        assert np.allclose(np.diag(xi), 0.0)


class TestDisorder:
    def test_zero_variance_reproduces_nominal(self):
        g = linear_array_xi(0.5)
        samples = sample_disorder(g, DisorderSpec(variance=0.0, samples=5, seed=1))
        for s in samples:
            assert np.max(np.abs(s.positions - g.positions)) < 1e-12

    def test_seed_determinism(self):
        g = linear_array_xi(0.5)
        spec = DisorderSpec(variance=0.005, samples=20, seed=42)
        a = sample_disorder(g, spec)
        b = sample_disorder(g, spec)
        for x, y in zip(a, b):
            assert np.array_equal(x.positions, y.positions)

    def test_alpha_preserved(self):
        g = linear_array_xi(0.5, alpha=0.4)
        samples = sample_disorder(g, DisorderSpec(variance=1e-4, samples=3, seed=0))
        assert all(s.alpha == 0.4 for s in samples)

    def test_displacement_statistics(self):
        # Sample variance of the displacements should sit within three
        # standard errors of the requested variance.
        g = linear_array_xi(0.5)
        v = 1e-4
        n = 10000
        samples = sample_disorder(g, DisorderSpec(variance=v, samples=n, seed=7))
        disp = np.array([s.positions - g.positions for s in samples]).ravel()
        sample_var = disp.var(ddof=1)
        se = v * np.sqrt(2.0 / (len(disp) - 1))
        assert abs(sample_var - v) < 3.0 * se
        assert abs(disp.mean()) < 3.0 * np.sqrt(v / len(disp))

    def test_invalid_spec(self):
        with pytest.raises(ValueError):
            DisorderSpec(variance=-1.0, samples=10)
        with pytest.raises(ValueError):
            DisorderSpec(variance=0.1, samples=0)
