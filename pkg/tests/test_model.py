import numpy as np
import pytest

from cascademat.dgr import DgrConfig, count_dgr_params
from cascademat.model import (
    AlphaPrediction, ModelConfig, build, count_params, desk_config, full_config,
)
from cascademat.tensor import Tensor

from gradcheck import max_grad_error


@pytest.fixture
def rng():
    return np.random.default_rng(11)


def tiny_config():
    return ModelConfig(stages=2, resolution=16, channels=8,
                       rsu_depths=(1, 1),
                       dgr=DgrConfig(neighbors=5, iterations=2, channels=8))


class TestBuild:
    def test_same_seed_identical_params(self):
        cfg = tiny_config()
        a = dict(build(cfg, 9).named_params())
        b = dict(build(cfg, 9).named_params())
        assert a.keys() == b.keys()
        for k in a:
            assert np.array_equal(a[k].data, b[k].data), k

    def test_different_seed_differs(self):
        cfg = tiny_config()
        a = build(cfg, 1).param_dict()
        b = build(cfg, 2).param_dict()
        assert any(not np.array_equal(a[k].data, b[k].data) for k in a)

    def test_dgr_offset_convs_zero_at_build(self):
        model = build(desk_config(), 5)
        for m in model.cfg.dgr_stages:
            stage = model.stages[m - 1]
            assert np.all(stage.dgr.offset_conv.weight.data == 0.0)
            assert np.all(stage.dgr.offset_conv.bias.data == 0.0)

    def test_param_count_pure_function_of_config(self):
        counts = [count_params(build(desk_config(), s))["total"] for s in (1, 2)]
        assert counts[0] == counts[1]

    def test_invalid_schedule_rejected(self):
        with pytest.raises(ValueError):
            ModelConfig(stages=5, resolution=48, channels=8,
                        rsu_depths=(1, 1, 1, 1, 1),
                        dgr=DgrConfig(channels=8))
        with pytest.raises(ValueError):
            ModelConfig(stages=2, resolution=16, channels=8,
                        rsu_depths=(1, 5),
                        dgr=DgrConfig(channels=8))


class TestForward:
    def test_desk_resolution_ladder(self, rng):
        model = build(desk_config(), 0)
        preds = model.forward(Tensor(rng.uniform(size=(1, 3, 64, 64))))
        sizes = [a.shape[-1] for a in preds.per_stage]
        assert sizes == [4, 8, 16, 32, 64]
        assert all(a.shape[:2] == (1, 1) for a in preds.per_stage)
        assert len(preds.per_stage) == 5
        assert preds.final is preds.per_stage[-1]

    def test_halving_ladder_invariant(self, rng):
        model = build(tiny_config(), 0)
        preds = model.forward(Tensor(rng.uniform(size=(2, 3, 16, 16))))
        for lo, hi in zip(preds.per_stage, preds.per_stage[1:]):
            assert 2 * lo.shape[-1] == hi.shape[-1]
            assert 2 * lo.shape[-2] == hi.shape[-2]

    def test_wrong_input_size_rejected(self, rng):
        model = build(tiny_config(), 0)
        with pytest.raises(ValueError):
            model.forward(Tensor(rng.uniform(size=(1, 3, 8, 8))))

    def test_deterministic_inference(self, rng):
        model = build(tiny_config(), 4)
        x = Tensor(rng.uniform(size=(1, 3, 16, 16)))
        a = model.forward(x)
        b = model.forward(x)
        for pa, pb in zip(a.per_stage, b.per_stage):
            assert np.array_equal(pa.data, pb.data)

    def test_refined_channels_and_resolution(self, rng):
        model = build(desk_config(), 0)
        image2 = Tensor(rng.uniform(size=(1, 3, 8, 8)))
        prev = Tensor(rng.normal(size=(1, 16, 8, 8)))
        alpha, refined = model.stage_forward(2, image2, prev)
        assert alpha.shape == (1, 1, 8, 8)
        assert refined.shape == (1, 16, 8, 8)

    def test_stage1_rejects_prev_and_later_require_it(self, rng):
        model = build(desk_config(), 0)
        img1 = Tensor(rng.uniform(size=(1, 3, 4, 4)))
        with pytest.raises(ValueError):
            model.stage_forward(1, img1, Tensor(np.zeros((1, 16, 4, 4))))
        with pytest.raises(ValueError):
            model.stage_forward(2, Tensor(rng.uniform(size=(1, 3, 8, 8))), None)

    def test_stage5_bypasses_dgr(self):
        model = build(desk_config(), 0)
        assert model.stages[4].dgr is None
        assert all(model.stages[m - 1].dgr is not None for m in (1, 2, 3, 4))

    def test_stage_isolation_with_zeroed_interstage_feature(self, rng):
        # with the inter-stage feature zeroed, stage 5 depends only on its
        # own pyramid level: perturbing DGR params of stages 1-4 is invisible
        model = build(desk_config(), 21)
        image5 = Tensor(rng.uniform(size=(1, 3, 64, 64)))
        zero_prev = Tensor(np.zeros((1, 16, 64, 64)))
        ref_alpha, ref_refined = model.stage_forward(5, image5, zero_prev)
        for m in (1, 2, 3, 4):
            dgr = model.stages[m - 1].dgr
            dgr.offset_conv.weight.data[...] += rng.normal(
                size=dgr.offset_conv.weight.shape)
            for t in dgr.w1 + dgr.w2:
                t.data[...] += rng.normal(size=t.shape)
        again_alpha, again_refined = model.stage_forward(5, image5, zero_prev)
        assert np.array_equal(ref_alpha.data, again_alpha.data)
        assert np.array_equal(ref_refined.data, again_refined.data)


class TestAblationConfigs:
    def test_single_stage_baseline(self, rng):
        cfg = ModelConfig(stages=1, resolution=16, channels=8, rsu_depths=(2,),
                          dgr=DgrConfig(channels=8))
        assert cfg.dgr_stages == ()
        model = build(cfg, 0)
        preds = model.forward(Tensor(rng.uniform(size=(1, 3, 16, 16))))
        assert len(preds.per_stage) == 1
        assert count_params(model)["dgr_total"] == 0

    def test_cascade_without_dgr(self, rng):
        cfg = desk_config(dgr_stages=())
        model = build(cfg, 0)
        assert all(s.dgr is None for s in model.stages)
        assert count_params(model)["dgr_total"] == 0
        preds = model.forward(Tensor(rng.uniform(size=(1, 3, 64, 64))))
        assert len(preds.per_stage) == 5


class TestCountParams:
    def test_dgr_total_matches_module_count(self):
        model = build(desk_config(), 0)
        expect = 4 * count_dgr_params(model.cfg.dgr)
        assert count_params(model)["dgr_total"] == expect

    def test_full_scale_dgr_increment(self):
        model_cfg = full_config()
        assert count_dgr_params(model_cfg.dgr) == 22154
        model = build(model_cfg, 0)
        assert count_params(model)["dgr_total"] == 88616

    def test_total_is_sum_of_stages(self):
        model = build(desk_config(), 0)
        breakdown = count_params(model)
        assert breakdown["total"] == sum(breakdown["per_stage"])

    def test_channel_doubling_roughly_quadruples(self):
        small = count_params(build(desk_config(), 0))["total"]
        big_cfg = desk_config(channels=32,
                              dgr=DgrConfig(neighbors=5, iterations=2,
                                            channels=32))
        big = count_params(build(big_cfg, 0))["total"]
        assert 3.0 < big / small < 4.5


def test_end_to_end_gradients_tiny_model(rng):
    model = build(tiny_config(), 13)
    # move sampling positions off the bilinear lattice
    dgr = model.stages[0].dgr
    dgr.offset_conv.weight.data[...] = rng.normal(size=dgr.offset_conv.weight.shape) * 0.02
    dgr.offset_conv.bias.data[...] = rng.uniform(0.1, 0.25, size=10)
    image = Tensor(rng.uniform(0.2, 0.8, size=(1, 3, 16, 16)), requires_grad=True)
    names = dict(model.named_params())
    picked = [
        names["stage1.in_conv.conv.weight"],
        names["stage1.rsu.enc0.conv.weight"],
        names["stage1.rsu.proj.weight"],
        names["stage1.dgr.w1_0"],
        names["stage1.dgr.w2_1"],
        names["stage1.dgr.offset.weight"],
        names["stage2.rsu.bottom0.gamma"],
        names["stage2.head.weight"],
        names["stage2.head.bias"],
        image,
    ]

    def loss():
        preds = model.forward(image)
        acc = None
        for a in preds.per_stage:
            term = (a * a).mean()
            acc = term if acc is None else acc + term
        return acc

    err = max_grad_error(loss, picked, rng, samples_per_tensor=3)
    assert err <= 1e-4
