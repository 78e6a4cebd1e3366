import numpy as np
import pytest
import torch
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from monfap.estimator import CheckpointMismatch, MoNFAPDetector
from monfap.noise_experts import SRM_KERNELS, BayarConv, HFConv, SRMConv
from monfap.synth import SceneConfig, generate_sample


def _data(n=8, size=32, seed=0):
    cfg = SceneConfig(height=size, width=size, max_faces=3)
    samples = [generate_sample(cfg, seed + i, manipulated=bool(i % 2)) for i in range(n)]
    X = np.stack([s.image for s in samples])
    masks = np.stack([s.gt_mask for s in samples])
    y = np.array([s.label for s in samples])
    return X, y, masks


def _small(**kw):
    params = dict(base_channels=2, blocks_per_stage=1, max_iter=3, batch_size=4,
                  learning_rate=1e-3, log_every=1)
    params.update(kw)
    return MoNFAPDetector(**params)


def test_get_set_params_and_clone():
    est = MoNFAPDetector(base_channels=4, lam=5.0)
    params = est.get_params()
    assert params["base_channels"] == 4 and params["lam"] == 5.0
    est.set_params(top_k=2)
    assert clone(est).get_params()["top_k"] == 2


def test_not_fitted():
    with pytest.raises(NotFittedError):
        MoNFAPDetector().predict(np.zeros((1, 3, 32, 32)))


@pytest.mark.parametrize(
    "X, message",
    [
        (np.zeros((1, 3, 48, 32)), "divisible by 32"),
        (np.zeros((1, 1, 32, 32)), "shape"),
        (np.full((1, 3, 32, 32), 2.0), r"\[0, 1\]"),
        (np.full((1, 3, 32, 32), np.nan), "non-finite"),
    ],
)
def test_input_validation(X, message):
    with pytest.raises(ValueError, match=message):
        _small().fit(X, [0])


def test_mask_label_consistency():
    X, y, masks = _data(2)
    with pytest.raises(ValueError, match="masks are required"):
        _small().fit(X, y)
    with pytest.raises(ValueError, match="genuine samples"):
        _small().fit(X, [0, 0], masks)


def test_fit_predict_shapes_and_callback():
    X, y, masks = _data()
    records = []
    est = _small().fit(X, y, masks, callback=lambda r, e: records.append(r))
    assert [r["iter"] for r in records] == [1, 2, 3]
    assert set(records[0]) >= {"loss", "loss_img", "loss_pix", "loss_aux", "loss_mone", "lr"}
    proba = est.predict_proba(X)
    assert proba.shape == (8, 2) and np.allclose(proba.sum(axis=1), 1)
    assert set(est.predict(X)) <= {0, 1}
    assert est.predict_mask(X).shape == (8, 32, 32)
    report = est.evaluate(X, y, masks)
    assert set(report) == {"acc", "auc", "f1_f", "iou_f"}
    assert 0 <= est.score(X, y) <= 1


def test_fit_is_reproducible():
    X, y, masks = _data()
    a = _small().fit(X, y, masks)
    b = _small().fit(X, y, masks)
    for (k, va), vb in zip(a.model_.state_dict().items(), b.model_.state_dict().values()):
        assert torch.equal(va, vb), k


def test_constraints_hold_after_training():
    X, y, masks = _data()
    est = _small(max_iter=10, learning_rate=5e-2).fit(X, y, masks)
    for module in est.model_.modules():
        if isinstance(module, BayarConv):
            w = module.weight.detach()
            assert torch.all(w[:, :, 2, 2] == -1)
            assert torch.allclose(w.sum(dim=(2, 3)), torch.zeros(w.shape[:2]), atol=1e-5)
        if isinstance(module, HFConv):
            w = module.weight.detach()
            assert torch.allclose(w.sum(dim=(2, 3)), torch.zeros(w.shape[:2]), atol=1e-5)
        if isinstance(module, SRMConv):
            for c in range(module.channels):
                assert torch.equal(module.weight[c, 0], SRM_KERNELS[c % 3])


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    X, y, masks = _data()
    est = _small().fit(X, y, masks)
    est.save(tmp_path / "m.pt")
    loaded = MoNFAPDetector.load(tmp_path / "m.pt")
    for (k, va), vb in zip(est.model_.state_dict().items(), loaded.model_.state_dict().values()):
        assert torch.equal(va, vb), k
    assert loaded.get_params() == est.get_params()
    assert np.array_equal(loaded.predict_proba(X), est.predict_proba(X))
    with pytest.raises(CheckpointMismatch, match="backbone"):
        MoNFAPDetector.load(tmp_path / "m.pt", base_channels=4)


def test_diverged_training_raises():
    from monfap.training import TrainingDiverged

    X, y, masks = _data(4)
    est = _small(max_iter=2)
    est.fit(X, y, masks)
    with torch.no_grad():
        est.model_.predictor.head[2].bias.fill_(float("inf"))
    with pytest.raises((TrainingDiverged, FloatingPointError)):
        est.fit(X, y, masks, warm_start=True)
