import json

import numpy as np
import pytest

import deepwarp

SMALL = {
    "architecture": [{"type": "awu", "axis": 0, "r": 11}],
    "top_layer": {"per_dim": 15},
    "schedule": {"warp": 20, "top": 20, "joint": 20},
}


def sim(n=120, seed=3):
    return deepwarp.simulate({"simulate": {"process": "y11", "n": n, "noise_var": 0.01}}, seed=seed)


def test_simulate_is_reproducible():
    a, b = sim(), sim()
    assert a["locations"].shape == (120, 1)
    np.testing.assert_array_equal(a["z"], b["z"])
    assert not np.array_equal(a["z"], sim(seed=4)["z"])


@pytest.mark.parametrize("kind", ["siwgp", "sdsp", "frk", "gp"])
def test_fit_predict_score(kind):
    data = sim()
    config = dict(SMALL, model=kind, n_mc=2, gp_steps=50)
    if kind in ("frk", "gp"):
        del config["architecture"]
    model, report = deepwarp.fit(data["locations"], data["z"], config, seed=1)
    assert model.kind == kind and model.dim == 1
    assert report["n"] == 120 and np.isfinite(report["final_objective"])

    pred = model.predict(data["truth_locations"], seed=1)
    assert pred["mean"].shape == data["truth"].shape
    assert np.all(pred["lower95"] <= pred["upper95"])
    s = deepwarp.score(pred, data["truth"])
    assert 0 < s["rmspe"] < 1 and s["crps"] > 0


def test_model_round_trip_and_warp(tmp_path):
    data = sim()
    model, _ = deepwarp.fit(data["locations"], data["z"], SMALL, seed=2)
    path = str(tmp_path / "model.json")
    model.save(path)
    again = deepwarp.Model.load(path)
    grid = np.linspace(-0.5, 0.5, 7).reshape(-1, 1)
    np.testing.assert_array_equal(model.predict(grid)["mean"], again.predict(grid)["mean"])
    np.testing.assert_array_equal(model.to_json(), deepwarp.Model.from_json(model.to_json()).to_json())
    warped = model.warp(grid)
    assert np.all(np.diff(warped[:, 0]) > 0)  # monotone in 1D
    assert json.loads(model.to_json())["format"] == "deepwarp-model"


def test_threat_score_counts():
    assert deepwarp.threat_score(np.array([0.0, 9.0]), np.array([0.0, 9.0]), 5, 5) == 1.0
    assert deepwarp.threat_score(np.array([0.0, 9.0]), np.array([9.0, 0.0]), 5, 5) == 0.0


def test_errors_carry_codes():
    data = sim()
    model, _ = deepwarp.fit(data["locations"], data["z"], SMALL, seed=1)
    with pytest.raises(deepwarp.Error, match="mismatch"):
        model.predict(np.zeros((3, 2)))
    with pytest.raises(deepwarp.Error):
        deepwarp.fit(data["locations"], data["z"], {"no_such_key": 1})
