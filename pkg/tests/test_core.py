import json

import numpy as np
import pytest

from nodalgp.core import (
    Grid,
    ParamsError,
    SystemParams,
    VecField,
    classify,
    classify_component,
    grid_for,
    make_params,
)


def test_scalar_beta_expands_for_two_components():
    p = make_params([1, 2], 0.3, [1, 1], 1, [1.0])
    assert p.beta == ((0.0, 0.3), (0.3, 0.0))
    assert p.m == 2


@pytest.mark.parametrize(
    "kw, msg",
    [
        (dict(beta=[[0, 0], [0, 0]]), "coupling must be nonzero"),
        (dict(beta=[[0, 0]]), "coupling must be nonzero"),
        (dict(mu=[0, 1]), "self-interaction"),
        (dict(beta=[[0, 1], [2, 0]]), "symmetric"),
        (dict(beta=[[1, 1], [1, 0]]), "diagonal"),
        (dict(masses=[1, -1]), "positive"),
        (dict(masses=[1]), "masses"),
        (dict(dim=4, lengths=[1, 1, 1, 1]), "dim"),
        (dict(lengths=[1, 1]), "lengths"),
    ],
)
def test_validation_errors(kw, msg):
    args = dict(mu=[1, 1], beta=[[0, 0.1], [0.1, 0]], masses=[1, 1], dim=1, lengths=[1.0])
    args.update(kw)
    with pytest.raises(ParamsError, match=msg):
        make_params(**args)


def test_scalar_beta_rejected_for_three():
    with pytest.raises(ParamsError):
        make_params([1, 1, 1], 0.1, [1, 1, 1], 1, [1.0])


def test_sign_summaries():
    p = make_params([1.5, -2], -0.4, [1, 1], 1, [1.0])
    assert p.mu_max_plus == 1.5 and p.mu_min_minus == -2.0
    assert p.beta_max_plus == 0.0 and p.beta_min_minus == -0.4


def test_params_round_trip():
    p = make_params([1, -1, 2], [[0, 1, 2], [1, 0, -3], [2, -3, 0]], [1, 2, 3], 2, [1, 2])
    assert SystemParams.from_dict(json.loads(json.dumps(p.to_dict()))) == p
    assert p.restrict([0, 2]).beta == ((0.0, 2.0), (2.0, 0.0))


def test_grid_geometry():
    g = Grid((np.pi, 2.0), (9, 4))
    assert g.node_count == 36
    assert g.spacings == pytest.approx((np.pi / 10, 0.4))
    x, y = g.coordinates()
    assert x.shape == (36,) and y.max() == pytest.approx(1.6)
    with pytest.raises(ParamsError):
        grid_for(make_params([1, 1], 1, [1, 1], 1, [1.0]), [10, 10])


def test_vecfield_json_round_trip_and_read_only():
    g = Grid((1.0,), (5,))
    u = VecField(g, np.arange(10.0).reshape(2, 5))
    v = VecField.from_json(u.to_json())
    assert np.array_equal(u.data, v.data) and v.grid == g
    with pytest.raises(ValueError):
        u.data[0, 0] = 1.0
    assert np.allclose((u * 2 - u).data, u.data)


def test_classify_component_thresholds():
    x = np.array([1.0, 0.5, -0.0005])
    assert classify_component(x, 1e-3) == "Positive"
    assert classify_component(-x, 1e-3) == "Negative"
    assert classify_component(np.array([1.0, -0.5]), 1e-3) == "SignChanging"
    assert classify_component(np.zeros(3), 1e-3) == "Zero"


def test_classify_tags():
    g = Grid((np.pi,), (50,))
    x = g.axes()[0]
    s1, s2 = np.sin(x), np.sin(2 * x)
    assert classify(VecField(g, np.vstack([s2, s2]))).tag == "SignChanging"
    assert classify(VecField(g, np.vstack([s1, s1]))).tag == "Positive"
    assert str(classify(VecField(g, np.vstack([s2, s1])))) == "SemiNodal(1)"
    assert classify(VecField(g, np.vstack([s1, s2])), order=(1, 0)).tag == "SemiNodal"
    assert classify(VecField(g, np.vstack([s2, 0 * s1]))).tag == "SemiTrivial"
    assert classify(VecField(g, np.vstack([s1, 0 * s1]))).tag == "SemiTrivial"
    assert classify(VecField(g, np.zeros((2, 50)))).tag == "Trivial"
