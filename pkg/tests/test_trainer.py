import logging

import numpy as np
import pytest

from lptm import pipeline
from lptm.errors import ContractError, FormatError, LptmError
from lptm.gradcheck import check_gradients, relative_error, tiny_instance
from lptm.metrics import psnr
from lptm.predictor import init_state
from lptm.synthetic import make_pairs, write_dataset
from lptm.trainer import (LOG_HEADER, PairedDataset, TrainConfig, adam_step, evaluate,
                          format_metrics_table, l1_loss, loss_and_grads, lut_regularizers,
                          total_loss, train, train_pairs, write_metrics_csv)

from conftest import random_image


class TestConfig:
    def test_defaults(self):
        cfg = TrainConfig()
        assert (cfg.lr, cfg.beta1, cfg.beta2, cfg.epsilon, cfg.batch) == (2e-4, 0.9, 0.999,
                                                                          1e-8, 1)
        assert (cfg.lambda_s, cfg.lambda_m, cfg.lambda_p) == (1e-4, 10.0, 0.0)

    @pytest.mark.parametrize("kwargs", [{"lr": 0}, {"beta1": 1.0}, {"beta2": -0.1},
                                        {"lambda_m": -1}, {"batch": 2}])
    def test_invalid(self, kwargs):
        with pytest.raises(ContractError):
            TrainConfig(**kwargs)


class TestLosses:
    def test_l1_zero(self, rng):
        a, lo = random_image(rng, 8, 8), random_image(rng, 2, 2)
        assert l1_loss(a, a, lo, lo) == 0.0

    def test_l1_offset(self, rng):
        a, lo = random_image(rng, 8, 8), random_image(rng, 2, 2)
        assert l1_loss(a + 0.1, a, lo, lo) == pytest.approx(0.1)

    def test_l1_symmetric(self, rng):
        a, b = random_image(rng, 8, 8), random_image(rng, 8, 8)
        c, d = random_image(rng, 2, 2), random_image(rng, 2, 2)
        assert l1_loss(a, b, c, d) == l1_loss(b, a, d, c)

    def test_l1_shape_mismatch(self, rng):
        with pytest.raises(ContractError):
            l1_loss(np.zeros((4, 4, 3)), np.zeros((4, 5, 3)), np.zeros((1, 1, 3)),
                    np.zeros((1, 1, 3)))

    def test_total_identity_luts(self):
        state = init_state()
        state.luts = [state.luts[0], state.luts[0].copy(), state.luts[0].copy()]
        ls, lm = lut_regularizers(state.luts)
        assert total_loss(0.0, ls, lm) == pytest.approx(3 * 1e-4 * 102.09375, rel=1e-9)

    def test_total_no_lambdas(self):
        assert total_loss(0.3, 5.0, 2.0, 1.0, 0.0, 0.0, 0.0) == 0.3

    def test_total_nonnegative(self, rng):
        for _ in range(20):
            parts = rng.uniform(0, 10, 4)
            assert total_loss(*parts) >= 0


class TestAdam:
    def test_zero_grads(self):
        state = init_state(n_levels=1, n_luts=2, n_bins=3, dtype=np.float64)
        before = {k: v.copy() for k, v in state.named_parameters().items()}
        grads = {k: np.zeros_like(v) for k, v in before.items()}
        adam_step(state, grads, 1, TrainConfig())
        for k, v in state.named_parameters().items():
            np.testing.assert_array_equal(v, before[k])

    def test_first_step_magnitude(self):
        state = init_state(n_levels=1, n_luts=2, n_bins=3, dtype=np.float64)
        before = {k: v.copy() for k, v in state.named_parameters().items()}
        grads = {k: np.ones_like(v) for k, v in before.items()}
        cfg = TrainConfig()
        adam_step(state, grads, 1, cfg)
        for k, v in state.named_parameters().items():
            np.testing.assert_allclose(before[k] - v, cfg.lr, rtol=1e-6)
        assert state.step == 1

    def test_non_finite_skipped(self, caplog):
        state = init_state(n_levels=1, n_luts=1, n_bins=3, dtype=np.float64)
        before = {k: v.copy() for k, v in state.named_parameters().items()}
        grads = {k: np.ones_like(v) for k, v in before.items()}
        grads["lut.0"][0, 0, 0, 0] = np.nan
        with caplog.at_level(logging.WARNING):
            adam_step(state, grads, 1, TrainConfig())
        assert "non-finite" in caplog.text
        for k, v in state.named_parameters().items():
            np.testing.assert_array_equal(v, before[k])

    def test_step_index(self):
        state = init_state(n_levels=1, n_luts=1, n_bins=3)
        with pytest.raises(ContractError):
            adam_step(state, {}, 0, TrainConfig())


class TestPipeline:
    def test_identity_at_init(self, rng):
        yy, xx = np.mgrid[0:96, 0:128] / 128
        img = np.stack([xx, yy, 0.5 + 0.3 * np.sin(8 * xx)], axis=2)
        out = pipeline.forward(init_state(n_bins=17), img, pipeline.PipelineConfig(32)).output
        assert np.abs(out - img).max() <= 2e-2

    def test_deterministic(self, rng):
        img = random_image(rng, 64, 64)
        state = init_state(n_levels=2, n_bins=9)
        cfg = pipeline.PipelineConfig(target_low=16)
        a = pipeline.tonemap(state, img, cfg)
        b = pipeline.tonemap(state, img, cfg)
        assert a.tobytes() == b.tobytes()

    def test_timings_reported(self, rng):
        fwd = pipeline.forward(init_state(n_levels=1, n_bins=5), random_image(rng, 32, 32),
                               pipeline.PipelineConfig(target_low=16))
        assert {"decompose", "predict_weights", "fuse_luts", "canny", "refine",
                "reconstruct"} <= set(fwd.timings)

    def test_rejects_gray(self, rng):
        with pytest.raises(ValueError):
            pipeline.forward(init_state(n_bins=3), random_image(rng, 64, 64, 1))


class TestGradients:
    def test_relative_error_zero_scale(self):
        assert relative_error(np.zeros(3), np.zeros(3)) == 0.0

    def test_tiny_instance_all_groups(self):
        state, img, ref, cfg = tiny_instance(seed=1)
        results = check_gradients(state, img, ref, cfg, max_coords=8, seed=1)
        names = {r.name for r in results}
        assert names == set(state.named_parameters())
        for r in results:
            assert r.analytic_norm > 0, r.name
            assert r.rel_error <= 1e-3, (r.name, r.rel_error)

    def test_every_parameter_gets_gradient(self):
        (img, ref), = make_pairs(1, 64, 64, seed=5)
        cfg = TrainConfig(target_low=16, n_bins=9)
        state = init_state(n_levels=2, n_bins=9)
        _, grads, _ = loss_and_grads(state, img, ref, cfg)
        dead = [n for n, g in grads.items() if not np.any(g != 0)]
        assert dead == []


def _small_cfg(**kw):
    base = dict(epochs=2, n_bins=9, n_luts=2, target_low=16, seed=3)
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="module")
def pairs():
    return [(f"p{i}", a, b) for i, (a, b) in enumerate(make_pairs(2, 48, 48, seed=2))]


class TestTraining:
    def test_log_shape(self, pairs):
        res = train_pairs(pairs, _small_cfg())
        assert len(res.log) == 4 and res.state.step == 4
        lines = res.log_text().splitlines()
        assert lines[0] == LOG_HEADER == "step,epoch,l1,ls,lm,total"
        assert len(lines) == 5 and lines[1].startswith("1,0,")

    def test_deterministic(self, pairs):
        a = train_pairs(pairs, _small_cfg())
        b = train_pairs(pairs, _small_cfg())
        assert a.log_text() == b.log_text()
        for (n, x), y in zip(a.state.named_parameters().items(),
                             b.state.named_parameters().values()):
            assert x.tobytes() == y.tobytes(), n

    def test_seed_changes_order(self, pairs):
        a = train_pairs(pairs, _small_cfg(seed=1))
        b = train_pairs(pairs, _small_cfg(seed=2))
        assert a.log_text() != b.log_text()

    def test_zero_epochs(self, pairs):
        res = train_pairs(pairs, _small_cfg(epochs=0))
        assert res.log == [] and res.state.step == 0
        ref = init_state(n_levels=len(res.state.ppbs), n_luts=2, n_bins=9, seed=3)
        for x, y in zip(res.state.named_parameters().values(), ref.named_parameters().values()):
            np.testing.assert_array_equal(x, y)

    def test_max_steps(self, pairs):
        assert len(train_pairs(pairs, _small_cfg(epochs=5, max_steps=3)).log) == 3

    def test_loss_goes_down(self, pairs):
        res = train_pairs(pairs, _small_cfg(epochs=15, lr=2e-3, augment_flips=False))
        l1 = [r["l1"] for r in res.log]
        assert np.mean(l1[-4:]) < np.mean(l1[:4])

    def test_refine_off_reports_dead_ppbs(self, pairs, caplog):
        with caplog.at_level(logging.WARNING):
            res = train_pairs(pairs, _small_cfg(epochs=1, refine=False))
        assert res.dead_parameters and all(n.startswith("ppb.") for n in res.dead_parameters)

    def test_empty(self):
        with pytest.raises(ContractError):
            train_pairs([], _small_cfg())


class TestDataset:
    @pytest.fixture
    def root(self, tmp_path):
        write_dataset(tmp_path / "ds", 3, 48, 48, seed=4)
        return tmp_path / "ds"

    def test_open_and_splits(self, root):
        (root / "test.txt").write_text("pair001\n")
        ds = PairedDataset.open(str(root))
        assert ds.split("train") == ["pair000", "pair001", "pair002"]
        assert ds.split("test") == ["pair001"]
        img, ref = ds.load_pair("pair000")
        assert img.shape == ref.shape == (48, 48, 3)

    def test_missing_root(self, tmp_path):
        with pytest.raises(FileNotFoundError, match="nowhere"):
            PairedDataset.open(str(tmp_path / "nowhere"))

    def test_missing_reference(self, root):
        (root / "reference" / "pair002.png").unlink()
        with pytest.raises(FormatError, match="pair002"):
            PairedDataset.open(str(root))

    def test_unknown_split_stem(self, root):
        (root / "train.txt").write_text("pair009\n")
        with pytest.raises(FormatError):
            PairedDataset.open(str(root))

    def test_unreadable_pair_skipped(self, root, caplog):
        (root / "input" / "pair001.png").write_bytes(b"not a png")
        ds = PairedDataset.open(str(root))
        with caplog.at_level(logging.WARNING):
            res = train(ds, _small_cfg(epochs=1))
        assert res.skipped == ["pair001"] and len(res.log) == 2
        assert "pair001" in caplog.text

    def test_all_unreadable(self, root):
        for p in (root / "input").iterdir():
            p.write_bytes(b"junk")
        with pytest.raises(LptmError):
            train(PairedDataset.open(str(root)), _small_cfg(epochs=1))

    def test_evaluate_identity_model(self, root, tmp_path):
        ds = PairedDataset.open(str(root))
        state = init_state(n_levels=2, n_bins=33)
        rows = evaluate(ds, state, "test", _small_cfg())
        assert [r["stem"] for r in rows] == ds.split("test")
        for r in rows:
            img, ref = ds.load_pair(r["stem"])
            assert abs(r["psnr"] - psnr(img, ref)) <= 0.5
        csv_path = tmp_path / "m.csv"
        write_metrics_csv(rows, csv_path)
        lines = csv_path.read_text().splitlines()
        assert lines[0] == "stem,psnr,ssim,delta_e" and len(lines) == 1 + len(rows)
        assert "mean" in format_metrics_table(rows)

    def test_evaluate_reference_against_itself(self, root):
        from lptm.trainer import image_metrics
        _, ref = PairedDataset.open(str(root)).load_pair("pair000")
        m = image_metrics(ref, ref)
        assert (m["psnr"], m["ssim"], m["delta_e"]) == (99.0, pytest.approx(1.0), 0.0)
