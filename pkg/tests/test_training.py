import numpy as np
import pytest

from esoseg import phantom
from esoseg.fcnn import checkpoint, network, training
from esoseg.volume import KIND_HU, KIND_MASK, Volume3D


@pytest.fixture(scope="module")
def small_dataset():
    cfg = phantom.PhantomConfig(dims=(32, 32, 12), seed=50)
    out = []
    for s in range(2):
        from dataclasses import replace

        out.append(phantom.generate_phantom(replace(cfg, seed=50 + s)))
    return out


def quick_config(**kw):
    base = dict(
        epochs=1,
        subepochs_per_epoch=1,
        samples_per_subepoch=4,
        batch_size=2,
        seed=3,
    )
    base.update(kw)
    return training.TrainingConfig(**base)


class TestLearningRateSchedule:
    def test_halving_from_epoch_ten(self):
        cfg = training.TrainingConfig(lr0=0.001)
        for e in range(1, 10):
            assert cfg.learning_rate(e) == 0.001
        for e in range(10, 15):
            assert cfg.learning_rate(e) == 0.0005
        for e in range(15, 20):
            assert cfg.learning_rate(e) == 0.00025
        for e in range(20, 25):
            assert cfg.learning_rate(e) == 0.000125
        assert cfg.learning_rate(25) == 0.0000625

    def test_config_validation(self):
        with pytest.raises(ValueError):
            training.TrainingConfig(lr0=0.0)
        with pytest.raises(ValueError):
            training.TrainingConfig(momentum=1.0)
        with pytest.raises(ValueError):
            training.TrainingConfig(batch_size=0)


class TestRmsprop:
    class _OneTensor:
        def __init__(self, value):
            self.t = np.array([value])

        def tensors(self):
            return [self.t]

        def set_tensors(self, arrays):
            (self.t,) = arrays

    def test_hand_computed_step(self):
        p = self._OneTensor(1.0)
        state = {"cache": [np.zeros(1)], "velocity": [np.zeros(1)]}
        g = np.array([2.0])
        training.rmsprop_step(p, [g], state, lr=0.1, momentum=0.5, rms_decay=0.9,
                              epsilon=1e-6)
        cache = 0.1 * 4.0
        v = -0.1 * 2.0 / np.sqrt(cache + 1e-6)
        assert abs(state["cache"][0][0] - cache) < 1e-15
        assert abs(state["velocity"][0][0] - v) < 1e-15
        assert abs(p.t[0] - (1.0 + v)) < 1e-15
        # second step applies momentum to the velocity
        training.rmsprop_step(p, [g], state, lr=0.1, momentum=0.5, rms_decay=0.9,
                              epsilon=1e-6)
        cache2 = 0.9 * cache + 0.1 * 4.0
        v2 = 0.5 * v - 0.1 * 2.0 / np.sqrt(cache2 + 1e-6)
        assert abs(p.t[0] - (1.0 + v + v2)) < 1e-14

    def test_rejects_nonfinite_gradient(self):
        p = self._OneTensor(1.0)
        state = {"cache": [np.zeros(1)], "velocity": [np.zeros(1)]}
        with pytest.raises(FloatingPointError):
            training.rmsprop_step(p, [np.array([np.nan])], state, 0.1, 0.5, 0.9, 1e-6)


class TestSampling:
    def test_shapes_and_balance(self, small_dataset):
        spec = network.tiny_spec()
        cfg = quick_config(samples_per_subepoch=20)
        rng = np.random.default_rng(0)
        samples = training.sample_training_batch(small_dataset, cfg, rng, spec=spec)
        assert len(samples) == 20
        out = spec.output_size(cfg.train_subvol)
        ctx = spec.context_size(cfg.train_subvol)
        fg_centers = 0
        for i, (main, c, lab) in enumerate(samples):
            assert main.shape == (27, 27, 27) and main.dtype == np.float32
            assert c.shape == (ctx, ctx, ctx) and c.dtype == np.float32
            assert lab.shape == (out, out, out)
            center = lab[out // 2, out // 2, out // 2]
            if i % 2 == 0:
                assert center == 1  # foreground-centered draw
                fg_centers += 1
            else:
                assert center == 0
        assert fg_centers == 10

    def test_empty_dataset_rejected(self):
        with pytest.raises(ValueError):
            training.sample_training_batch([], quick_config(), np.random.default_rng(0))


class TestTrainLoop:
    def test_zero_epochs_returns_init(self, small_dataset):
        cfg = quick_config(epochs=0)
        params, history, _ = training.train(small_dataset, cfg)
        init_rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 0)))
        ref = network.init_params(network.tiny_spec(), init_rng, dtype=np.float32)
        for a, b in zip(params.tensors(), ref.tensors()):
            assert np.array_equal(a, b)
        assert history == []

    def test_deterministic(self, small_dataset):
        cfg = quick_config()
        p1, h1, _ = training.train(small_dataset, cfg)
        p2, h2, _ = training.train(small_dataset, cfg)
        assert h1 == h2
        for a, b in zip(p1.tensors(), p2.tensors()):
            assert np.array_equal(a, b)

    def test_loss_logged_per_subepoch(self, small_dataset):
        cfg = quick_config(epochs=2, subepochs_per_epoch=2)
        rows = []
        _, history, _ = training.train(
            small_dataset, cfg, log=lambda *a: rows.append(a)
        )
        assert len(history) == 4
        assert [r[:2] for r in rows] == [(1, 1), (1, 2), (2, 1), (2, 2)]
        assert all(np.isfinite(r[3]) for r in rows)

    def test_loss_decreases_on_separable_toy_task(self):
        # bright tube on a dark background: trivially separable by intensity
        hu = np.full((32, 32, 12), -100.0)
        m = np.zeros((32, 32, 12))
        hu[14:19, 14:19, :] = 100.0
        m[14:19, 14:19, :] = 1.0
        vol = Volume3D(hu, (1, 1, 3), KIND_HU)
        mask = Volume3D(m, (1, 1, 3), KIND_MASK)
        cfg = quick_config(
            epochs=1, subepochs_per_epoch=3, samples_per_subepoch=20,
            batch_size=5, seed=0,
        )
        _, history, _ = training.train([(vol, mask)], cfg)
        assert history[-1] < history[0]

    def test_resume_is_bit_identical(self, small_dataset, tmp_path):
        cfg = quick_config(epochs=2)
        straight, _, _ = training.train(small_dataset, cfg)

        cfg1 = quick_config(epochs=1)
        p1, _, s1 = training.train(small_dataset, cfg1)
        path = str(tmp_path / "mid.ckpt")
        checkpoint.save_checkpoint(path, p1, cfg.seed, 1, state=s1)
        p1b, _, epoch, s1b = checkpoint.load_checkpoint(path)
        resumed, _, _ = training.train(
            small_dataset, cfg, params=p1b, state=s1b, start_epoch=epoch + 1
        )
        for a, b in zip(straight.tensors(), resumed.tensors()):
            assert np.array_equal(a, b)


class TestCheckpoint:
    def test_round_trip_exact(self, tmp_path):
        spec = network.tiny_spec()
        params = network.init_params(spec, np.random.default_rng(9))
        state = training.rmsprop_init(params)
        for c in state["cache"]:
            c += 0.125
        path = str(tmp_path / "m.ckpt")
        checkpoint.save_checkpoint(path, params, seed=42, epoch=7, state=state)
        p2, seed, epoch, s2 = checkpoint.load_checkpoint(path)
        assert (seed, epoch) == (42, 7)
        assert p2.spec == spec
        for a, b in zip(params.tensors(), p2.tensors()):
            assert np.array_equal(a, b)
        for a, b in zip(state["cache"], s2["cache"]):
            assert np.array_equal(a, b)

    def test_without_state(self, tmp_path):
        params = network.init_params(network.tiny_spec(), np.random.default_rng(9))
        path = str(tmp_path / "m.ckpt")
        checkpoint.save_checkpoint(path, params, seed=0, epoch=1)
        _, _, _, state = checkpoint.load_checkpoint(path)
        assert state is None

    def test_corruption_detected(self, tmp_path):
        params = network.init_params(network.tiny_spec(), np.random.default_rng(9))
        path = str(tmp_path / "m.ckpt")
        checkpoint.save_checkpoint(path, params, seed=0, epoch=1)
        blob = open(path, "rb").read()
        with open(path, "wb") as fh:
            fh.write(blob[:-8])
        with pytest.raises(checkpoint.CheckpointError):
            checkpoint.load_checkpoint(path)
        with open(path, "wb") as fh:
            fh.write(blob + b"\x00" * 4)
        with pytest.raises(checkpoint.CheckpointError):
            checkpoint.load_checkpoint(path)
        with open(path, "wb") as fh:
            fh.write(b"not a checkpoint\n")
        with pytest.raises(checkpoint.CheckpointError):
            checkpoint.load_checkpoint(path)
