import numpy as np
import pytest

from pvf.io.datasets import gen_ctr, gen_tokens
from pvf.nn import layers as L
from pvf.nn.models import (BertConfig, BertMini, DlrmMini, LeNetMini, ToyConfig, ToyLinear, make_model,
                           model_from_tensors)


def digits(n, seed=0):
    return np.random.default_rng(seed).random((n, 1, 28, 28), dtype=np.float32)


def test_lenet_table1_counts():
    m = LeNetMini(seed=0)
    counts = {g: grp.n_elements for g, grp in m.groups().items()}
    assert counts == {"conv1": 150, "conv2": 2400, "fc1": 30720, "fc2": 10080, "fc3": 840}
    assert m.params["conv1.weight"].shape == (6, 1, 5, 5)
    assert m.flat_width == 256


def test_lenet_outputs_ten_scores():
    pred = LeNetMini(seed=0).predict_batch({"image": digits(3)})
    assert pred.scores.shape == (3, 10)


def test_dlrm_shapes():
    m = DlrmMini(seed=0)
    assert m.top_input_width == 8 + 8 * 8 == 72
    assert m.params["top.0.weight"].shape == (32, 72)
    assert m.params["bot.0.weight"].shape == (16, 4)
    assert [m.params[f"emb.{t}"].shape[0] for t in range(8)] == [16, 32, 64, 128, 256, 512, 1024, 4096]
    assert set(m.groups()) == {f"emb_{i}" for i in range(8)} | {"bot_mlp", "top_mlp"}
    ds = gen_ctr(1, 5)
    p = m.predict_batch(ds.inputs)
    assert p.scores.shape == (5, 1)
    assert np.all((p.scores >= 0) & (p.scores <= 1))
    assert np.array_equal(p.labels, (p.scores[:, 0] >= 0.5).astype(int))


def test_bert_groups_and_shapes():
    m = BertMini(seed=0)
    assert set(m.groups()) == {f"l{l}.{p}" for l in range(4) for p in "qkv"}
    assert m.group("l2.v").n_elements == 64 * 64
    p = m.predict_batch(gen_tokens(1, 4).inputs)
    assert p.scores.shape == (4, 4)


def test_bert_width_configurable():
    m = BertMini(BertConfig(width=32, heads=2, layers=2), seed=0)
    assert m.group("l1.q").n_elements == 32 * 32
    assert m.predict_batch(gen_tokens(1, 3).inputs).scores.shape == (3, 4)


def test_bert_zero_qk_is_finite_and_driven_by_v():
    m = BertMini(seed=3)
    params = dict(m.params)
    for l in range(4):
        for p in "qk":
            params[f"l{l}.{p}.weight"] = np.zeros_like(params[f"l{l}.{p}.weight"])
    toks = gen_tokens(2, 6).inputs
    out = m.predict_batch(toks, params)
    assert np.all(np.isfinite(out.scores))
    params["l0.v.weight"] = params["l0.v.weight"] * np.float32(2)
    assert not np.array_equal(m.predict_batch(toks, params).scores, out.scores)


@pytest.mark.parametrize("tensor", ["bot.0.weight", "bot.1.bias", "top.0.weight", "top.1.weight"])
def test_nan_in_dlrm_mlp_reaches_output(tensor):
    m = DlrmMini(seed=0)
    params = dict(m.params)
    t = params[tensor].copy()
    t.reshape(-1)[0] = np.nan
    params[tensor] = t
    assert m.predict_batch(gen_ctr(1, 4).inputs, params).has_nan.all()


@pytest.mark.parametrize("tensor", ["fc1.weight", "fc2.weight", "fc3.weight", "fc1.bias"])
def test_nan_in_lenet_fc_reaches_output(tensor):
    m = LeNetMini(seed=0)
    params = dict(m.params)
    t = params[tensor].copy()
    t.reshape(-1)[-1] = np.nan
    params[tensor] = t
    assert m.predict_batch({"image": digits(3)}, params).has_nan.all()


def test_params_read_only_and_copied():
    w = np.ones((1, 4), np.float32)
    m = ToyLinear(params={"fc.weight": w, "fc.bias": np.zeros(1, np.float32)})
    w[0, 0] = 5
    assert m.params["fc.weight"][0, 0] == 1
    with pytest.raises(ValueError):
        m.params["fc.weight"][0, 0] = 2


def test_determinism_and_batch_invariance():
    m = LeNetMini(seed=1)
    x = digits(5, 1)
    a = m.predict_batch({"image": x})
    b = m.predict_batch({"image": x})
    assert np.array_equal(a.scores.view(np.uint32), b.scores.view(np.uint32))
    single = m.forward({"image": x[2]})
    assert np.array_equal(single.scores.view(np.uint32), a.scores[2].view(np.uint32))


def test_stage_caching_matches_full_run():
    m = BertMini(seed=2)
    state = m.initial_state(gen_tokens(1, 3).inputs)
    mid = m.run_stages(state, stop=4)
    rest = m.run_stages(mid, start=4)
    full = m.run_stages(state)
    assert np.array_equal(rest["out"].view(np.uint32), full["out"].view(np.uint32))
    assert m.first_stage(["l1.q.weight"]) == 3
    assert m.first_stage(["nothing"]) == len(m.stages)


@pytest.mark.parametrize("kind", ["dlrm-mini", "lenet-mini", "bert-mini", "toy"])
def test_checkpoint_tensors_rebuild(kind):
    m = make_model(kind, seed=4)
    m2 = model_from_tensors(m.tensors())
    assert type(m2) is type(m)
    for k, v in m.params.items():
        assert np.array_equal(v.view(np.uint32), m2.params[k].view(np.uint32))


def test_lenet_standardises_pixels():
    m = LeNetMini(seed=0)
    assert m.standardize(np.zeros((1,), np.float32))[0] == np.float32(-0.1307) / np.float32(0.3081)


def test_unknown_group_lists_valid():
    with pytest.raises(KeyError, match="top_mlp"):
        DlrmMini(seed=0).group("nope")


def test_input_validation():
    with pytest.raises(ValueError):
        LeNetMini(seed=0).predict_batch({"image": np.zeros((1, 1, 20, 20), np.float32)})
    with pytest.raises(ValueError):
        DlrmMini(seed=0).predict_batch({"dense": np.zeros((1, 4), np.float32)})
    with pytest.raises(L.ShapeError):
        ds = gen_ctr(1, 2)
        cats = ds.inputs["cats"].copy()
        cats[0, 0] = 99
        DlrmMini(seed=0).predict_batch({"dense": ds.inputs["dense"], "cats": cats})


def test_wrong_tensor_shape_rejected():
    with pytest.raises(ValueError):
        ToyLinear(params={"fc.weight": np.ones((1, 3), np.float32), "fc.bias": np.zeros(1, np.float32)})


def test_toy_dead_tensor_unused():
    m = ToyLinear(ToyConfig(dead=3), seed=0)
    assert m.first_stage(m.group("dead.weight").tensors) == len(m.stages)
