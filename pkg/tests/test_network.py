"""Network assembly: spec validation, forward semantics, checkpoints."""

import numpy as np
import pytest

from spikeadapt.container import load_container, save_container
from spikeadapt.errors import (BadMagic, InvalidConfig, MissingStats,
                               ModeError, ShapeMismatch, TruncatedFile)
from spikeadapt.network import (ConvSpec, FlattenSpec, LinearSpec, Mode,
                                NetworkSpec, SpikeProbes, SpikingNet,
                                load_checkpoint, predict, reference_spec,
                                save_checkpoint)


def tiny_spec(t_steps=2):
    return NetworkSpec(
        input_shape=(1, 2, 2),
        layers=(ConvSpec(1, 1), FlattenSpec(), LinearSpec(2)),
        t_steps=t_steps, num_classes=2)


class TestSpecValidation:
    def test_reference_spec_shapes(self):
        spec = reference_spec(num_classes=3)
        shapes = spec.shape_walk()
        assert shapes == [(8, 16, 16), (16, 8, 8), (16, 8, 8), (1024,), (3,)]

    def test_missing_readout_rejected(self):
        with pytest.raises(InvalidConfig):
            NetworkSpec((3, 8, 8), (ConvSpec(4, 3, 1, 1),), 2, 10)

    def test_two_readouts_rejected(self):
        with pytest.raises(InvalidConfig):
            NetworkSpec((1, 2, 2),
                        (ConvSpec(1, 1), FlattenSpec(), LinearSpec(2),
                         LinearSpec(2)), 2, 2)

    def test_readout_width_must_match_classes(self):
        with pytest.raises(InvalidConfig):
            NetworkSpec((1, 2, 2), (ConvSpec(1, 1), FlattenSpec(),
                                    LinearSpec(3)), 2, 2)

    def test_kernel_larger_than_input_rejected(self):
        with pytest.raises(InvalidConfig):
            NetworkSpec((1, 2, 2), (ConvSpec(1, 5), FlattenSpec(),
                                    LinearSpec(2)), 2, 2)

    def test_zero_time_steps_rejected(self):
        with pytest.raises(InvalidConfig):
            tiny_spec(t_steps=0)

    def test_spec_dict_round_trip(self):
        spec = reference_spec(num_classes=5, t_steps=3)
        assert NetworkSpec.from_dict(spec.to_dict()) == spec


class TestForward:
    def test_zero_weights_give_zero_logits(self):
        net = SpikingNet(tiny_spec(), _init=False)
        x = np.random.default_rng(0).uniform(0, 1, (4, 1, 2, 2))
        logits = net.forward(x, Mode.TRAIN)
        assert np.array_equal(logits.data, np.zeros((4, 2)))

    def test_predict_ties_resolve_to_lowest_index(self):
        net = SpikingNet(tiny_spec(), _init=False)
        # populate running stats so EVAL mode is legal
        x = np.ones((2, 1, 2, 2))
        net.forward(x, Mode.TRAIN)
        assert np.array_equal(predict(net, x, Mode.EVAL), [0, 0])

    def test_hand_unrolled_two_step_forward(self):
        # 1x1 conv (identity), identity normalization, two steps, tau=2:
        #   step 1: h = x          -> spikes where x > 1
        #   step 2: h = x + u1/2   -> spikes where that sum exceeds 1
        # readout = mean over the two steps of fc(spikes)
        net = SpikingNet(tiny_spec(t_steps=2), _init=False)
        net.stage("conv1").weight.data = np.ones((1, 1, 1, 1))
        lif1 = net.stage("lif1")
        lif1.norm.mu = np.zeros(1)
        lif1.norm.sigma2 = np.ones(1)
        net.stage("fc").weight.data = np.array([[1.0, 0.0, 0.0, 0.0],
                                                [0.0, 1.0, 1.0, 1.0]])
        x = np.array([[[[0.8, 1.2], [0.3, 2.0]]]])
        # step 1 spikes: [0,1,0,1]; step 2: h=[1.2,1.2,0.45,2.0] -> [1,1,0,1]
        logits = net.forward(x, Mode.EVAL)
        assert np.array_equal(logits.data, [[0.5, 2.0]])

    def test_eval_is_deterministic(self):
        net = SpikingNet(reference_spec(), seed=3)
        x = np.random.default_rng(1).uniform(0, 1, (3, 3, 16, 16))
        net.forward(x, Mode.TRAIN)
        a = net.forward(x, Mode.EVAL).data
        b = net.forward(x, Mode.EVAL).data
        assert np.array_equal(a, b)

    def test_calibrate_mode_leaves_running_stats_alone(self):
        net = SpikingNet(reference_spec(), seed=3)
        rng = np.random.default_rng(1)
        net.forward(rng.uniform(0, 1, (3, 3, 16, 16)), Mode.TRAIN)
        stats = [(s.norm.mu.copy(), s.norm.sigma2.copy())
                 for s in net.norm_lif_stages()]
        net.forward(rng.uniform(0, 1, (3, 3, 16, 16)), Mode.CALIBRATE)
        for s, (mu, sig) in zip(net.norm_lif_stages(), stats):
            assert np.array_equal(s.norm.mu, mu)
            assert np.array_equal(s.norm.sigma2, sig)

    def test_train_mode_updates_running_stats(self):
        net = SpikingNet(reference_spec(), seed=3)
        assert net.stage("lif1").norm.mu is None
        net.forward(np.random.default_rng(1).uniform(0, 1, (3, 3, 16, 16)),
                    Mode.TRAIN)
        assert net.stage("lif1").norm.mu is not None

    def test_eval_before_any_training_raises(self):
        net = SpikingNet(reference_spec(), seed=3)
        x = np.zeros((1, 3, 16, 16))
        with pytest.raises(MissingStats):
            net.forward(x, Mode.EVAL)

    def test_deployed_mode_on_undeployed_model_raises(self):
        net = SpikingNet(reference_spec(), seed=3)
        with pytest.raises(ModeError):
            net.forward(np.zeros((1, 3, 16, 16)), Mode.DEPLOYED)

    def test_wrong_input_shape_raises(self):
        net = SpikingNet(reference_spec(), seed=3)
        with pytest.raises(ShapeMismatch):
            net.forward(np.zeros((1, 3, 8, 8)), Mode.TRAIN)

    def test_empty_batch_raises(self):
        from spikeadapt.errors import EmptyBatch
        net = SpikingNet(reference_spec(), seed=3)
        with pytest.raises(EmptyBatch):
            net.forward(np.zeros((0, 3, 16, 16)), Mode.TRAIN)

    def test_trace_and_probes_collect_binary_spikes(self):
        net = SpikingNet(reference_spec(t_steps=3), seed=3)
        x = np.random.default_rng(5).uniform(0, 1, (2, 3, 16, 16))
        trace = []
        probes = SpikeProbes()
        net.forward(x, Mode.TRAIN, trace=trace, probes=probes)
        assert len(trace) == 3
        assert set(trace[0]) == {"lif1", "lif2", "lif3"}
        for step in trace:
            for o in step.values():
                assert set(np.unique(o)) <= {0.0, 1.0}
        rates = probes.rates()
        assert rates["lif3"].shape == (16,)
        assert np.all(rates["lif3"] >= 0) and np.all(rates["lif3"] <= 1)


class TestCheckpoint:
    def test_round_trip_is_bit_exact(self, tmp_path):
        net = SpikingNet(reference_spec(), seed=11)
        x = np.random.default_rng(2).uniform(0, 1, (4, 3, 16, 16))
        net.forward(x, Mode.TRAIN)
        path = tmp_path / "model.spkc"
        save_checkpoint(path, net)
        clone = load_checkpoint(path)
        for a, b in zip(net.parameters(), clone.parameters()):
            assert np.array_equal(a.data, b.data)
        for sa, sb in zip(net.norm_lif_stages(), clone.norm_lif_stages()):
            assert np.array_equal(sa.norm.mu, sb.norm.mu)
            assert np.array_equal(sa.norm.sigma2, sb.norm.sigma2)
        assert np.array_equal(net.forward(x, Mode.EVAL).data,
                              clone.forward(x, Mode.EVAL).data)

    def test_save_is_byte_deterministic(self, tmp_path):
        net = SpikingNet(reference_spec(), seed=11)
        net.forward(np.ones((2, 3, 16, 16)) * 0.5, Mode.TRAIN)
        p1, p2 = tmp_path / "a.spkc", tmp_path / "b.spkc"
        save_checkpoint(p1, net)
        save_checkpoint(p2, net)
        assert p1.read_bytes() == p2.read_bytes()

    def test_unsaved_stats_block_checkpointing(self, tmp_path):
        net = SpikingNet(reference_spec(), seed=11)
        with pytest.raises(MissingStats):
            save_checkpoint(tmp_path / "m.spkc", net)

    def test_bad_magic_rejected(self, tmp_path):
        p = tmp_path / "junk.spkc"
        p.write_bytes(b"NOTMAGIC" + b"\x00" * 64)
        with pytest.raises(BadMagic):
            load_container(p)

    def test_truncated_file_rejected(self, tmp_path):
        net = SpikingNet(reference_spec(), seed=11)
        net.forward(np.ones((2, 3, 16, 16)) * 0.5, Mode.TRAIN)
        p = tmp_path / "m.spkc"
        save_checkpoint(p, net)
        clipped = tmp_path / "clipped.spkc"
        clipped.write_bytes(p.read_bytes()[:-20])
        with pytest.raises(TruncatedFile):
            load_container(clipped)

    def test_container_meta_and_arrays_survive(self, tmp_path):
        p = tmp_path / "c.spkc"
        meta = {"k": [1, 2], "s": "text", "f": 0.25}
        arrays = {"w": np.arange(6, dtype=np.float64).reshape(2, 3),
                  "i": np.array([3, 4], dtype=np.int64),
                  "b": np.array([0, 255], dtype=np.uint8)}
        save_container(p, meta, arrays)
        meta2, arrays2 = load_container(p)
        assert meta2 == meta
        for k in arrays:
            assert np.array_equal(arrays[k], arrays2[k])
            assert arrays[k].dtype == arrays2[k].dtype
