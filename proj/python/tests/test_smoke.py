import json

import numpy as np
import pytest

import retgate


def small_spec(**overrides):
    spec = {"n_samples": 200, "d_t": 8, "d_v": 4, "n_patches": 3, "separation": 6.0, "seed": 3}
    spec.update(overrides)
    return spec


def test_derive_label_table():
    assert retgate.derive_label(False, False) == "S1"
    assert retgate.derive_label(True, False) == "S2"
    assert retgate.derive_label(False, True) == "S3"
    assert retgate.derive_label(True, True) == "S4"


def test_pooling_matches_numpy():
    rng = np.random.default_rng(0)
    m = rng.normal(size=(5, 7)).astype(np.float32)
    np.testing.assert_allclose(retgate.max_pool(m), m.max(axis=0).astype(np.float64))
    np.testing.assert_allclose(retgate.mean_pool(m), m.astype(np.float64).mean(axis=0), rtol=1e-12)


def test_gate_policies():
    assert retgate.gate("S2", "pessimistic") is True
    assert retgate.gate("S4", "pessimistic") is False
    assert retgate.gate("S4", "optimistic") is True
    assert retgate.gate("S3", "optimistic") is False
    assert retgate.gate("S1", "oracle", (False, False)) is True
    with pytest.raises(retgate.Error):
        retgate.gate("S1", "oracle")


def test_error_hierarchy(tmp_path):
    bad = tmp_path / "bad.jsonl"
    bad.write_text("{not json\n")
    with pytest.raises(retgate.ParseError) as info:
        retgate.load_records(bad)
    assert isinstance(info.value, retgate.Error)
    with pytest.raises(retgate.ValidationError):
        retgate.mean_pool(np.zeros((0, 3), dtype=np.float32))


def test_records_round_trip(tmp_path):
    records = retgate.generate(small_spec())
    assert len(records) == 200
    assert retgate.validate(records)["ok"]
    path = tmp_path / "r.jsonl"
    retgate.save_records(records, path, blob_threshold=0)
    back = retgate.load_records(path)
    assert [r.id for r in back] == [r.id for r in records]
    np.testing.assert_array_equal(back[0].v1, records[0].v1)
    assert records[0].v1.dtype == np.float32
    again = retgate.FeatureRecord.from_dict(json.loads(json.dumps(records[1].to_dict())))
    assert again.label == records[1].label


def test_train_predict_evaluate(tmp_path):
    records = retgate.generate(small_spec(n_samples=400))
    model = retgate.train(records, {"modality": "multimodal", "pooling": "max"},
                          {"hidden_dims": [16], "max_epochs": 20, "seed": 1})
    assert model.train_meta["val_accuracy"] > 0.9
    path = tmp_path / "m.json"
    model.save(path)
    loaded = retgate.ClassifierModel.load(path)
    assert loaded.predict_all(records) == model.predict_all(records)

    report = retgate.compare_policies(records, model)
    names = {p["policy"] for p in report["policies"]}
    assert names == {"pessimistic", "optimistic", "always_rir", "never_rir", "oracle"}

    labels = [p["label"] for p in model.predict_all(records)]
    decisions = retgate.decide(records, labels, "pessimistic")
    evaluated = retgate.evaluate(records, decisions)
    assert evaluated["policies"][0]["policy"] == "pessimistic"


def test_sweep_and_gradient_check():
    by_layer = retgate.generate_layers(small_spec(layer_profile={"2": 0.0, "4": 6.0}))
    grid = retgate.sweep(by_layer, [{"modality": "text_only", "pooling": "mean"}],
                         {"hidden_dims": [8], "max_epochs": 5}, master_seed=9)
    assert len(grid) == 2
    assert grid.csv().splitlines()[0].startswith("layer,modality,pooling")
    report = retgate.gradient_check(6, [5], n_trials=3)
    assert report["passed"]


def test_cli_usage_error_code():
    assert retgate.run_cli(["retgate", "gate", "--policy", "bogus"]) == 2
