import numpy as np
import pytest
from scipy.linalg import expm

from orthant_ld.transient import endpoint_probability, network_generator, uniformize


def test_uniformize_matches_expm(tandem):
    _, _, q = network_generator(tandem, 4)
    dense = q.toarray()
    for t in (0.0, 0.3, 2.0):
        assert np.allclose(uniformize(q, t), expm(t * dense), atol=1e-13)
        assert np.allclose(uniformize(dense, t, np.eye(len(dense))[3]), expm(t * dense)[3], atol=1e-13)


def test_uniformize_rejects_negative_off_diagonal():
    with pytest.raises(ValueError):
        uniformize(np.array([[-1.0, -0.5], [1.0, -1.0]]), 1.0)


def test_mass_is_conserved_inside_box(mm1):
    # from 1 over a short time, almost no mass reaches the edge of a wide box
    p = endpoint_probability(mm1, [1], 1.0, [0.0], 1000.0, radius=60)
    assert p == pytest.approx(1.0, abs=1e-12)


def test_avoid_kills_paths(mm1):
    free = endpoint_probability(mm1, [1], 1.0, [2.0], 0.5)
    kept = endpoint_probability(mm1, [1], 1.0, [2.0], 0.5, avoid={0})
    assert 0 < kept < free
    assert kept == pytest.approx(0.09248036471879502, rel=1e-12)
