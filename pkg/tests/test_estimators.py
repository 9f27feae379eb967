import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from lapforge import datagen
from lapforge.core import total_cost, permutation_to_matrix
from lapforge.datagen import DatasetSpec
from lapforge.estimators import (
    GLANAssigner,
    HungarianAssigner,
    RandomAssigner,
    SinkhornAssigner,
    check_instances,
    check_targets,
)


@pytest.fixture(scope="module")
def data():
    return datagen.generate(DatasetSpec(sizes=[4, 6], samples_per_size=12, seed=6))


def test_check_instances_forms(rng):
    C = rng.uniform(size=(3, 3))
    assert len(check_instances(C)) == 1
    assert len(check_instances(np.stack([C, C]))) == 2
    with pytest.raises(ValueError):
        check_instances([])
    with pytest.raises(TypeError):
        check_instances("abc")
    with pytest.raises(ValueError):
        check_instances([np.ones((2, 3))])


def test_check_targets_accepts_matrices(rng):
    C = [rng.uniform(size=(3, 3))]
    assert check_targets([permutation_to_matrix(np.array([2, 0, 1]))], C)[0].tolist() == [2, 0, 1]
    with pytest.raises(ValueError):
        check_targets([[0, 0, 1]], C)
    with pytest.raises(ValueError):
        check_targets([[0, 1, 2], [0, 1, 2]], C)


def test_hungarian_scores_one(data):
    assert HungarianAssigner().fit().score(data, data) == 1.0


def test_predictions_are_permutations(data):
    for est in (HungarianAssigner(), SinkhornAssigner(), RandomAssigner(random_state=1)):
        for C, p in zip(check_instances(data), est.fit().predict(data)):
            assert sorted(p.tolist()) == list(range(C.shape[0]))


def test_sinkhorn_never_beats_exact(data):
    exact = HungarianAssigner().fit().predict(data)
    soft = SinkhornAssigner().fit().predict(data)
    for r, a, b in zip(data, exact, soft):
        assert total_cost(r.cost, permutation_to_matrix(b)) >= total_cost(r.cost, permutation_to_matrix(a)) - 1e-12


def test_not_fitted():
    with pytest.raises(NotFittedError):
        GLANAssigner().predict([np.eye(3)])
    with pytest.raises(NotFittedError):
        SinkhornAssigner().predict([np.eye(3)])


def test_clone_and_params():
    est = GLANAssigner(t=4, epochs=2, ablate_channel_attention=True)
    params = est.get_params()
    assert params["t"] == 4 and params["ablate_channel_attention"] is True
    twin = clone(est)
    assert twin.get_params() == params and twin is not est
    twin.set_params(latent_dim=8)
    assert twin.latent_dim == 8 and est.latent_dim == 16
    assert clone(SinkhornAssigner(temperature=0.3)).temperature == 0.3


def test_glan_fit_predict_save(data, tmp_path):
    est = GLANAssigner(latent_dim=8, hidden_width=16, conv_iterations=2, epochs=2, random_state=3)
    X = [r.cost for r in data]
    assert est.fit(X) is est  # labels solved internally
    assert len(est.history_) == 2
    pred = est.predict(X)
    assert all(sorted(p.tolist()) == list(range(len(p))) for p in pred)
    assert 0.0 <= est.score(X, [r.optimal for r in data]) <= 1.0
    path = tmp_path / "g.ckpt"
    est.save(path)
    back = GLANAssigner.from_checkpoint(path)
    assert back.get_params() == est.get_params()
    for a, b in zip(est.decision_function(X), back.decision_function(X)):
        assert np.array_equal(a, b)


def test_glan_eval_set(data):
    est = GLANAssigner(latent_dim=8, hidden_width=16, conv_iterations=2, epochs=1)
    est.fit(data, data, eval_set=(data, data))
    assert est.history_[0]["eval_precision"] is not None
