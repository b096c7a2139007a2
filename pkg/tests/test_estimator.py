import numpy as np
import pytest
from sklearn.base import clone

from sagefin.baseline import LogisticBaseline, logistic_baseline
from sagefin.data import SyntheticConfig, generate_synthetic
from sagefin.estimator import SageFinDetector
from sagefin.exceptions import DimensionMismatch, InsufficientLabels, NonFiniteLoss, UntrainedModel
from sagefin.graph import BipartiteGraph
from sagefin.metrics import evaluate
from sagefin.preprocessing import SPLITS, GraphStandardizer, make_splits

SMALL = dict(n_u=120, n_v=120, n_communities=12, n_clusters=2, cluster_size=8, label_fraction=0.5)


def prepared(seed=0, **overrides):
    g, truth = generate_synthetic(SyntheticConfig(**{**SMALL, **overrides, "seed": seed}))
    splits = make_splits(g, seed=seed)
    return GraphStandardizer().fit(g, splits).transform(g), splits, truth


@pytest.fixture(scope="module")
def fitted():
    g, splits, _ = prepared()
    return SageFinDetector(epochs=40, hidden_dim=16, latent_dim=16).fit(g, splits), g, splits


def test_get_params_and_clone():
    det = SageFinDetector(hidden_dim=8, epochs=3)
    params = det.get_params()
    assert params["hidden_dim"] == 8 and params["learning_rate"] == 0.005
    assert clone(det).get_params() == params


def test_default_hyperparameters():
    p = SageFinDetector().get_params()
    assert (p["learning_rate"], p["hidden_dim"], p["latent_dim"], p["n_layers"],
            p["negative_ratio"], p["epochs"]) == (0.005, 32, 32, 4, 5, 200)


def test_unfitted_model_refuses_to_predict():
    g, _, _ = prepared()
    with pytest.raises(UntrainedModel):
        SageFinDetector().predict(g)


def test_outputs_and_report(fitted):
    det, g, splits = fitted
    assert det.predict(g, "u").shape == (g.n_u,)
    proba = det.predict_proba(g, "v")
    assert proba.shape == (g.n_v, 2) and np.allclose(proba.sum(1), 1)
    assert len(det.report_.epochs) == 40 and 0 <= det.report_.best_epoch < 40
    assert all(np.isfinite(r["loss"]["total"]) for r in det.report_.epochs)
    assert det.edge_proba(g, g.edges[:5]).shape == (5,)
    assert 0.0 <= det.score(g, "u") <= 1.0


def test_selected_epoch_has_best_validation_score(fitted):
    det, _, _ = fitted
    scores = [r["val"]["node_f1"] for r in det.report_.epochs]
    best = det.report_.best_epoch
    assert scores[best] == max(scores) and all(s < scores[best] for s in scores[best + 1:])


def test_save_load_reproduces_predictions(fitted, tmp_path):
    det, g, splits = fitted
    det.save(tmp_path / "m.npz")
    back = SageFinDetector.load(tmp_path / "m.npz", splits)
    for p in "uv":
        np.testing.assert_array_equal(det.decision_function(g, p), back.decision_function(g, p))
    assert back.get_params() == det.get_params()
    assert back.report_.best_epoch == det.report_.best_epoch


def test_same_seed_same_model():
    g, splits, _ = prepared(1)
    a = SageFinDetector(epochs=5, hidden_dim=8, latent_dim=8).fit(g, splits)
    b = SageFinDetector(epochs=5, hidden_dim=8, latent_dim=8).fit(g, splits)
    np.testing.assert_array_equal(a.decision_function(g, "u"), b.decision_function(g, "u"))
    assert a.report_.to_jsonl() == b.report_.to_jsonl()


def test_fit_never_reads_test_masks():
    g, splits, _ = prepared(2)
    reads = []

    class Spy(type(splits)):
        def node_mask(self, partition, split):
            reads.append(split)
            return super().node_mask(partition, split)

        def edge_mask(self, split):
            reads.append(split)
            return super().edge_mask(split)

    spy = Spy(splits.node, splits.edge)
    SageFinDetector(epochs=2, hidden_dim=8, latent_dim=8).fit(g, spy)
    assert "test" not in reads and "train" in reads


def test_dimension_mismatch_after_fit(fitted):
    det, _, _ = fitted
    other = BipartiteGraph(np.zeros((3, 2)), np.zeros((3, 8)), [(0, 0)], np.zeros((1, 4)))
    with pytest.raises(DimensionMismatch):
        det.predict(other, "u")


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_loss_is_reported():
    g, splits, _ = prepared(3)
    x = g.u_features.copy()
    x[0, 0] = 1e300  # finite, but its square overflows
    bad = BipartiteGraph(x, g.v_features, g.edges, g.e_features, g.u_labels, g.v_labels)
    with pytest.raises(NonFiniteLoss) as info:
        SageFinDetector(epochs=2, hidden_dim=8, latent_dim=8).fit(bad, splits)
    assert "total" in info.value.terms


def test_evaluate_returns_all_three_tasks(fitted):
    det, g, splits = fitted
    res = evaluate(det, g, splits, "test")
    assert set(res) == {"u", "v", "edge"}
    assert res["edge"].tp + res["edge"].fn == splits.edge_mask("test").sum()


def test_logistic_baseline_learns_a_separable_problem():
    rng = np.random.default_rng(0)
    x = np.r_[rng.normal(-2, 1, size=(50, 2)), rng.normal(2, 1, size=(50, 2))]
    y = np.r_[np.zeros(50), np.ones(50)]
    model = LogisticBaseline().fit(x, y)
    assert (model.predict(x) == y).mean() > 0.95
    assert model.predict_proba(x).shape == (100, 2)
    with pytest.raises(InsufficientLabels):
        LogisticBaseline().fit(x, np.zeros(100))


def test_feature_only_baseline_is_near_chance_without_a_feature_shift():
    f1 = []
    for seed in range(3):
        g, splits, _ = prepared(seed, shift=0.0)
        res = logistic_baseline(g, splits, "test")
        f1 += [res["u"].f1, res["v"].f1]
    assert np.mean(f1) < 0.3


def test_every_split_holds_labelled_nodes():
    _, splits, _ = prepared(4)
    for p in "uv":
        for s in SPLITS:
            assert splits.node_mask(p, s).any()
