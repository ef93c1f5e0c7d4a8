"""NT-Xent, AdamW, cosine schedule, pretraining and ensemble fine-tuning."""
from __future__ import annotations

import math
import warnings
from dataclasses import replace

import numpy as np
import pytest

from chaostex.autograd import Tensor, backward, grad_check
from chaostex.data import SynthSpec, gen_synthetic_textures, kfold_split
from chaostex.imaging import image_rng, make_view_pair
from chaostex.network import (
    CheckpointMismatchError,
    encoder_forward,
    init_encoder,
    init_projector,
    projector_forward,
)
from chaostex.training import (
    AdamW,
    FinetuneConfig,
    NumericalError,
    OptimState,
    PretrainConfig,
    adamw_step,
    cosine_lr,
    finetune,
    images_to_batch,
    init_chaos_encoder,
    nt_xent,
    pretrain,
    standardize,
)


def nt_xent_loops(z, tau):
    """Pairwise double loop over anchors and candidates."""
    m = z.shape[0]
    zn = z / np.linalg.norm(z, axis=1, keepdims=True)
    total = 0.0
    for i in range(m):
        pos = i + 1 if i % 2 == 0 else i - 1
        num = math.exp(float(zn[i] @ zn[pos]) / tau)
        den = 0.0
        for k in range(m):
            if k != i:
                den += math.exp(float(zn[i] @ zn[k]) / tau)
        total += -math.log(num / den)
    return total / m


def loss64(z, tau=0.5):
    return nt_xent(Tensor(np.asarray(z, dtype=np.float64)), tau).item()


class TestNTXent:
    def test_single_pair_is_zero(self, rng):
        assert loss64(rng.normal(size=(2, 5))) == 0.0

    def test_orthogonal_rows(self):
        assert abs(loss64(np.eye(4) * 3.0) - math.log(3)) < 1e-12

    def test_matches_double_loop(self, rng):
        z = rng.normal(size=(8, 16))
        assert abs(loss64(z) - nt_xent_loops(z, 0.5)) < 1e-10
        for _ in range(20):
            n = int(rng.integers(1, 9))
            tau = float(rng.uniform(0.1, 2.0))
            z = rng.normal(size=(2 * n, int(rng.integers(2, 20))))
            assert abs(loss64(z, tau) - nt_xent_loops(z, tau)) < 1e-10

    def test_scale_invariant(self, rng):
        z = rng.normal(size=(8, 6))
        assert abs(loss64(7.3 * z) - loss64(z)) < 1e-9

    def test_pair_swap_invariant(self, rng):
        z = rng.normal(size=(10, 6))
        swapped = z.copy()
        swapped[[0, 1, 6, 7]] = z[[1, 0, 7, 6]]
        assert abs(loss64(swapped) - loss64(z)) < 1e-9

    def test_decreases_when_positive_pair_aligns(self, rng):
        z = rng.normal(size=(8, 6))
        base = loss64(z)
        closer = z.copy()
        closer[1] = 0.7 * z[1] + 0.3 * z[0] * np.linalg.norm(z[1]) / np.linalg.norm(z[0])
        assert np.dot(closer[0], closer[1]) / np.linalg.norm(closer[1]) > np.dot(z[0], z[1]) / np.linalg.norm(z[1])
        assert loss64(closer) < base

    def test_gradient(self, rng):
        assert grad_check(lambda t: nt_xent(t, 0.5), Tensor(rng.normal(size=(4, 8)))) < 1e-5

    def test_errors(self, rng):
        with pytest.raises(ValueError):
            nt_xent(Tensor(rng.normal(size=(4, 3))), 0.0)
        with pytest.raises(ValueError):
            nt_xent(Tensor(rng.normal(size=(3, 3))), 0.5)
        with pytest.raises(ValueError):
            nt_xent(Tensor(np.zeros((0, 3))), 0.5)


def _state(params, lr, wd=0.01):
    return OptimState(
        m={k: np.zeros_like(v) for k, v in params.items()},
        v={k: np.zeros_like(v) for k, v in params.items()},
        base_lr={k: lr for k in params},
        weight_decay=wd,
    )


class TestAdamW:
    def test_hand_trace_quadratic(self):
        # f(p) = 0.5 * (a p0^2 + b p1^2): gradient (a p0, b p1); reference steps written out longhand.
        a, b, lr, wd = 3.0, 0.5, 0.1, 0.01
        b1, b2, eps = 0.9, 0.999, 1e-8
        params = {"p": np.array([1.0, -2.0])}
        st = _state(params, lr, wd)
        p = [1.0, -2.0]
        m = [0.0, 0.0]
        v = [0.0, 0.0]
        for t in range(1, 4):
            g = [a * p[0], b * p[1]]
            adamw_step(params, {"p": np.array([a, b]) * params["p"]}, st, 1.0)
            for i in range(2):
                m[i] = b1 * m[i] + (1 - b1) * g[i]
                v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i]
                p[i] = p[i] - lr * wd * p[i]
                mhat = m[i] / (1 - b1**t)
                vhat = v[i] / (1 - b2**t)
                p[i] = p[i] - lr * mhat / (math.sqrt(vhat) + eps)
            assert np.abs(params["p"] - np.array(p)).max() < 1e-12

    def test_zero_grad_pure_decay(self):
        params = {"w": np.array([2.0, -4.0])}
        st = _state(params, 0.1, 0.05)
        for k in range(1, 4):
            adamw_step(params, {"w": np.zeros(2)}, st, 1.0)
            np.testing.assert_allclose(params["w"], np.array([2.0, -4.0]) * (1 - 0.1 * 0.05) ** k, rtol=1e-15)

    def test_constant_gradient_step_tends_to_lr(self):
        params = {"w": np.zeros(3)}
        st = _state(params, 0.01, 0.0)
        g = {"w": np.array([0.5, -3.0, 1e-3])}
        prev = params["w"].copy()
        for _ in range(200):
            adamw_step(params, g, st, 1.0)
            step = params["w"] - prev
            prev = params["w"].copy()
        np.testing.assert_allclose(step, -0.01 * np.sign(g["w"]), rtol=1e-4)

    @pytest.mark.parametrize("wd", [0.0, 0.01])
    def test_zero_lr_scale_is_noop(self, rng, wd):
        # Decoupled decay is scaled by the learning rate, so a zero scale also stops decay.
        params = {"w": rng.normal(size=(3, 2))}
        before = params["w"].copy()
        st = _state(params, 0.1, wd)
        adamw_step(params, {"w": rng.normal(size=(3, 2))}, st, 0.0)
        assert params["w"].tobytes() == before.tobytes()

    def test_shape_mismatch(self):
        params = {"w": np.zeros(3)}
        with pytest.raises(ValueError):
            adamw_step(params, {"w": np.zeros(2)}, _state(params, 0.1), 1.0)

    def test_group_learning_rates(self):
        a, b = Tensor(np.ones(2), requires_grad=True), Tensor(np.ones(2), requires_grad=True)
        opt = AdamW([({"a": a}, 0.1), ({"b": b}, 0.0)], weight_decay=0.0)
        backward((a.sum() + b.sum()))
        opt.step()
        np.testing.assert_allclose(a.data, 0.9)
        np.testing.assert_array_equal(b.data, 1.0)
        with pytest.raises(ValueError):
            AdamW([({"a": a}, 0.1), ({"a": a}, 0.1)])


class TestCosine:
    def test_endpoints(self):
        assert cosine_lr(0, 100, 0.3) == 0.3
        assert cosine_lr(100, 100, 0.3) == 0.0
        assert cosine_lr(50, 100, 0.3) == pytest.approx(0.15, abs=1e-16)

    def test_monotone(self):
        vals = [cosine_lr(s, 37, 1.0) for s in range(38)]
        assert all(x > y for x, y in zip(vals, vals[1:]))

    @pytest.mark.parametrize("step,total", [(-1, 10), (11, 10), (0, 0)])
    def test_range(self, step, total):
        with pytest.raises(ValueError):
            cosine_lr(step, total, 1.0)


class TestInputs:
    def test_standardize(self, rng):
        x = rng.random((3, 1, 5, 5)) * 0.3 + 0.2
        y = standardize(x)
        np.testing.assert_allclose(y.mean(axis=(1, 2, 3)), 0.0, atol=1e-12)
        assert (y.std(axis=(1, 2, 3)) < 1.0).all() and (y.std(axis=(1, 2, 3)) > 0.9).all()

    def test_constant_image_maps_to_zero(self):
        np.testing.assert_array_equal(standardize(np.full((1, 1, 4, 4), 0.7)), 0.0)

    def test_batch_layout(self, rng):
        imgs = [rng.random((6, 5, 3)) for _ in range(2)]
        b = images_to_batch(imgs)
        assert b.shape == (2, 3, 6, 5) and b.dtype == np.float32
        np.testing.assert_allclose(b.data[1, 2], standardize(imgs[1].transpose(2, 0, 1)[None])[0, 2], rtol=1e-6)


def tiny_cfg(**kw):
    base = dict(epochs=2, batch_size=8, crop_size=12, seed=3)
    base.update(kw)
    return PretrainConfig(**base)


def frozen_trace(ds, cfg):
    """Epoch-mean NT-Xent of the initial model over the documented batch and view streams."""
    enc = init_chaos_encoder(ds.channels, cfg)
    proj = init_projector(enc.feature_dim, cfg.proj_hidden, cfg.proj_dim, np.random.default_rng([cfg.seed, 4]))
    n = len(ds)
    bs = min(cfg.batch_size, n)
    out = []
    for epoch in range(cfg.epochs):
        order = np.random.default_rng([cfg.seed, 1, epoch]).permutation(n)
        losses = []
        for start in range(0, n - bs + 1, bs):
            views = []
            for i in order[start : start + bs]:
                vp = make_view_pair(ds.images[i], image_rng(cfg.seed, int(i), 2, epoch), cfg.augment)
                views += [vp.view_i, vp.view_j]
            z = projector_forward(encoder_forward(images_to_batch(views), enc), proj)
            losses.append(float(nt_xent(z, cfg.tau).data))
        out.append(float(np.mean(losses)))
    return out


class TestPretrain:
    def test_zero_lr_freezes_model(self, small_corpus):
        cfg = tiny_cfg(epochs=3, lr_encoder=0.0, lr_projector=0.0)
        res = pretrain(small_corpus, cfg)
        init = init_chaos_encoder(1, cfg)
        for k, v in init.weights.items():
            assert res.encoder.weights[k].data.tobytes() == v.data.tobytes()
        # Views are resampled every epoch, so the trace is the frozen model's loss on each epoch's views.
        np.testing.assert_allclose(res.epoch_losses, frozen_trace(small_corpus, cfg), rtol=0, atol=1e-6)

    def test_deterministic(self, small_corpus):
        a = pretrain(small_corpus, tiny_cfg())
        b = pretrain(small_corpus, tiny_cfg())
        assert a.batch_losses == b.batch_losses
        for k in a.encoder.weights:
            assert a.encoder.weights[k].data.tobytes() == b.encoder.weights[k].data.tobytes()

    def test_full_batches_only(self, small_corpus):
        res = pretrain(small_corpus, tiny_cfg(batch_size=16, epochs=1))
        assert len(res.batch_losses) == len(small_corpus) // 16

    def test_small_dataset_single_batch(self, small_corpus):
        res = pretrain(small_corpus.subset([0, 9, 17]), tiny_cfg(epochs=1))
        assert len(res.batch_losses) == 1

    def test_snapshots_equal_shorter_runs(self, small_corpus):
        long = pretrain(small_corpus, tiny_cfg(epochs=3), snapshot_at=[1, 3])
        short = pretrain(small_corpus, tiny_cfg(epochs=1))
        for k, v in short.encoder.weights.items():
            assert long.snapshots[1].weights[k].data.tobytes() == v.data.tobytes()
            assert long.snapshots[3].weights[k].data.tobytes() == long.encoder.weights[k].data.tobytes()

    def test_errors(self, small_corpus):
        with pytest.raises(ValueError):
            pretrain(small_corpus.subset([0]), tiny_cfg())
        with pytest.raises(ValueError):
            pretrain(small_corpus, tiny_cfg(crop_size=20))
        with pytest.raises(ValueError):
            PretrainConfig(tau=0.0)
        with pytest.raises(ValueError):
            PretrainConfig(batch_size=1)

    def test_nan_abort_with_diagnostics(self, small_corpus):
        cfg = tiny_cfg()
        enc = init_chaos_encoder(1, cfg)
        enc.weights["stage0.weight"].data[...] = np.nan
        with pytest.raises(NumericalError) as err:
            pretrain(small_corpus, cfg, encoder=enc)
        diag = err.value.diagnostics
        assert diag["where"].startswith("epoch 0")
        assert {"batch_min", "batch_max", "batch_mean", "batch_shape"} <= set(diag)

    def test_default_run_loss_decreases_first_five_epochs(self, default_corpus):
        res = pretrain(default_corpus, PretrainConfig(epochs=5))
        losses = res.epoch_losses
        print("first five epoch losses:", [round(v, 4) for v in losses])
        assert all(b < a for a, b in zip(losses, losses[1:]))


def tiny_ft(**kw):
    base = dict(epochs=2, sup_epochs=2, folds=4, batch_size=8, crop_size=12, seed=3)
    base.update(kw)
    return FinetuneConfig(**base)


class TestFinetune:
    def test_untrained_is_near_chance(self, default_corpus):
        chaos = init_chaos_encoder(1, PretrainConfig())
        res = finetune(default_corpus, chaos, replace(tiny_ft(), epochs=0, sup_epochs=0, crop_size=28))
        n = len(default_corpus)
        p = 1 / default_corpus.n_classes
        pooled = float(np.mean(res.accuracies))
        assert abs(pooled - p) <= 3 * math.sqrt(p * (1 - p) / n)

    def test_folds_partition(self):
        ds = gen_synthetic_textures(SynthSpec(n_per_class=20, size=16))
        splits = kfold_split(ds, 4, 7)
        val = np.concatenate([v for _, v in splits])
        assert sorted(val.tolist()) == list(range(100))
        sizes = [len(v) for _, v in splits]
        assert max(sizes) - min(sizes) <= 1

    def test_result_shape_and_summary(self, small_corpus):
        res = finetune(small_corpus, init_chaos_encoder(1, tiny_cfg()), tiny_ft())
        assert len(res.folds) == 4 and len(res.models) == 4
        s = res.summary()
        assert s["folds"] == 4 and 0 <= s["mean_accuracy"] <= 1
        for f in res.folds:
            assert f.confusion.sum() == 10
            assert len(f.train_losses) == 2

    def test_jobs_do_not_change_results(self, small_corpus):
        chaos = init_chaos_encoder(1, tiny_cfg())
        a = finetune(small_corpus, chaos, tiny_ft(), jobs=1)
        b = finetune(small_corpus, chaos, tiny_ft(), jobs=2)
        np.testing.assert_array_equal(a.accuracies, b.accuracies)
        for ma, mb in zip(a.models, b.models):
            for k, v in ma.head_tensors().items():
                assert v.data.tobytes() == mb.head_tensors()[k].data.tobytes()

    def test_branches(self, small_corpus):
        chaos = init_chaos_encoder(1, tiny_cfg())
        sup_only = finetune(small_corpus, None, tiny_ft(), branches="sup")
        assert sup_only.models[0].chaos is None and sup_only.models[0].se.width == 64
        chaos_only = finetune(small_corpus, chaos, tiny_ft(), branches="chaos")
        assert chaos_only.models[0].sup is None and chaos_only.models[0].se.width == 16
        with pytest.raises(ValueError):
            finetune(small_corpus, chaos, tiny_ft(), branches="neither")

    def test_chaos_encoder_is_not_mutated(self, small_corpus):
        chaos = init_chaos_encoder(1, tiny_cfg())
        before = {k: v.data.copy() for k, v in chaos.weights.items()}
        finetune(small_corpus, chaos, tiny_ft())
        for k, v in chaos.weights.items():
            np.testing.assert_array_equal(v.data, before[k])

    def test_checkpoint_mismatch(self, small_corpus):
        chaos = init_encoder(3, (8, 16), np.random.default_rng(0))
        with pytest.raises(CheckpointMismatchError, match="3 channels, dataset has 1"):
            finetune(small_corpus, chaos, tiny_ft())

    def test_fold_count_warning(self):
        with pytest.warns(UserWarning, match="outside"):
            FinetuneConfig(folds=3)
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            FinetuneConfig(folds=10)
        with pytest.raises(ValueError):
            FinetuneConfig(folds=1)
