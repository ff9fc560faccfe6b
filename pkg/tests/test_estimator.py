import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from hdgt.estimator import HDGTPredictor, check_scene, check_scenes
from hdgt.scene import save_scene

from conftest import make_scene, mixed_scenes

TINY = dict(hidden=16, n_heads=2, n_layers=1, n_modes=2, batch_size=2, epochs=1, agent_drop_p=0.0)


@pytest.fixture(scope="module")
def fitted():
    scenes = mixed_scenes(2, start=80)
    return HDGTPredictor(**TINY).fit(scenes), scenes


def test_get_params_and_clone():
    est = HDGTPredictor(hidden=32, lr=1e-3)
    params = est.get_params()
    assert params["hidden"] == 32 and params["lr"] == 1e-3 and params["delta_frame"] == "target"
    copy = clone(est)
    assert copy.get_params() == params
    est.set_params(n_modes=3)
    assert est.n_modes == 3 and copy.n_modes == 6


def test_unfitted_calls_raise():
    est = HDGTPredictor()
    for call in (est.predict, est.transform, est.evaluate):
        with pytest.raises(NotFittedError):
            call([make_scene(0)])


def test_scene_validation_helpers(tmp_path):
    s = make_scene(1)
    blob = save_scene(s)
    path = tmp_path / "s.json"
    path.write_bytes(blob)
    for form in (s, blob, blob.decode(), path, str(path)):
        assert save_scene(check_scene(form)) == blob
    assert len(check_scenes(s)) == 1
    with pytest.raises(TypeError):
        check_scene(42)
    with pytest.raises(ValueError):
        check_scenes([])


def test_fit_predict_transform(fitted):
    est, scenes = fitted
    assert est.n_steps_ == 1 and len(est.history_) == 1
    out = est.predict(scenes)
    assert [o["scene_id"] for o in out] == [s.id for s in scenes]
    rec = next(iter(out[0]["agents"].values()))
    assert np.asarray(rec["modes"]).shape == (2, 30, 2)
    assert sum(rec["conf"]) == pytest.approx(1.0, abs=1e-6)
    feats = est.transform(scenes)
    assert feats[0].shape == (len(scenes[0].agents), 16)
    assert np.isfinite(est.score(scenes))
    assert est.score(scenes) == -est.evaluate(scenes).min_ade


def test_save_load_round_trip(fitted, tmp_path):
    est, scenes = fitted
    est.save(tmp_path / "est.ckpt")
    back = HDGTPredictor.load(tmp_path / "est.ckpt")
    assert back.get_params() == est.get_params()
    assert back.predict(scenes) == est.predict(scenes)
