"""Threshold folding and the deployed model's equivalence guarantees."""

import numpy as np
import pytest

from spikeadapt.errors import MissingStats, ModeError, ZeroGamma
from spikeadapt.neurons import TmConfig
from spikeadapt.network import (Mode, SpikeProbes, SpikingNet,
                                load_checkpoint, reference_spec,
                                save_checkpoint)
from spikeadapt.reparam import deploy, reparam_threshold


class TestThresholdFolding:
    def test_identity_normalization_keeps_v_th(self):
        v = reparam_threshold(1.0, gamma=[1.0], beta=[0.0], mu=[0.0],
                              sigma2=[1.0], eps=0.0)
        assert v == pytest.approx([1.0], abs=1e-15)

    def test_beta_at_threshold_reduces_to_mu(self):
        v = reparam_threshold(1.0, gamma=[2.0], beta=[1.0], mu=[0.37],
                              sigma2=[5.0], eps=0.0)
        assert v == pytest.approx([0.37], abs=1e-15)

    def test_hand_value(self):
        # (1 - 0.5) * sqrt(4) / 2 + 0.3 = 0.8
        v = reparam_threshold(1.0, gamma=[2.0], beta=[0.5], mu=[0.3],
                              sigma2=[4.0], eps=0.0)
        assert v == pytest.approx([0.8], abs=1e-15)

    def test_eps_sits_under_the_root(self):
        v = reparam_threshold(1.0, gamma=[1.0], beta=[0.0], mu=[0.0],
                              sigma2=[0.0], eps=0.25)
        assert v == pytest.approx([0.5], abs=1e-15)

    def test_zero_gamma_rejected(self):
        with pytest.raises(ZeroGamma):
            reparam_threshold(1.0, gamma=[1.0, 0.0], beta=[0.0, 0.0],
                              mu=[0.0, 0.0], sigma2=[1.0, 1.0], eps=1e-5)

    def test_vectorized_over_channels(self):
        v = reparam_threshold(1.0, gamma=[1.0, 2.0], beta=[0.0, 0.5],
                              mu=[0.1, 0.3], sigma2=[1.0, 4.0], eps=0.0)
        assert v == pytest.approx([1.1, 0.8], abs=1e-14)


def prepared_model(t_steps, seed=9):
    """A stats-populated model with non-trivial positive scales."""
    net = SpikingNet(reference_spec(t_steps=t_steps), seed=seed)
    rng = np.random.default_rng(seed + 1)
    for s in net.norm_lif_stages():
        c = s.channels
        s.norm.gamma.data = rng.uniform(0.5, 1.5, c)
        s.norm.beta.data = rng.normal(0.0, 0.2, c)
    net.forward(rng.uniform(0, 1, (8, 3, 16, 16)), Mode.TRAIN)
    return net


def spikes_of(model, x, mode):
    trace = []
    logits = model.forward(x, mode, trace=trace)
    return logits.data, trace


class TestDeploy:
    def test_deploy_requires_stats(self):
        net = SpikingNet(reference_spec(), seed=0)
        with pytest.raises(MissingStats):
            deploy(net)

    def test_deploy_twice_rejected(self):
        net = prepared_model(t_steps=1)
        deployed = deploy(net)
        with pytest.raises(ModeError):
            deploy(deployed)

    def test_deployed_model_rejects_training_modes(self):
        deployed = deploy(prepared_model(t_steps=1))
        x = np.zeros((1, 3, 16, 16))
        for mode in (Mode.TRAIN, Mode.EVAL, Mode.CALIBRATE):
            with pytest.raises(ModeError):
                deployed.forward(x, mode)

    def test_source_model_is_untouched(self):
        net = prepared_model(t_steps=1)
        w_before = net.stage("conv1").weight.data.copy()
        deployed = deploy(net)
        deployed.stage("conv1").weight.data[:] = 0.0
        deployed.stage("lif1").norm.gamma.data[:] = 99.0
        assert np.array_equal(net.stage("conv1").weight.data, w_before)
        assert np.all(net.stage("lif1").norm.gamma.data < 99.0)

    def test_single_step_frozen_deploy_matches_eval(self):
        net = prepared_model(t_steps=1)
        deployed = deploy(net, TmConfig(rho0=0.0, r=0))
        rng = np.random.default_rng(30)
        x = rng.uniform(0, 1, (100, 3, 16, 16))
        ref_logits, ref_trace = spikes_of(net, x, Mode.EVAL)
        dep_logits, dep_trace = spikes_of(deployed, x, Mode.DEPLOYED)
        for a, b in zip(ref_trace, dep_trace):
            for name in a:
                assert np.array_equal(a[name], b[name]), name
        assert np.max(np.abs(ref_logits - dep_logits)) < 1e-12

    def test_multi_step_frozen_deploy_with_carry_norm_matches_eval(self):
        net = prepared_model(t_steps=4)
        deployed = deploy(net, TmConfig(rho0=0.0, r=1))
        rng = np.random.default_rng(31)
        x = rng.uniform(0, 1, (16, 3, 16, 16))
        ref_logits, ref_trace = spikes_of(net, x, Mode.EVAL)
        dep_logits, dep_trace = spikes_of(deployed, x, Mode.DEPLOYED)
        for a, b in zip(ref_trace, dep_trace):
            for name in a:
                assert np.array_equal(a[name], b[name]), name
        assert np.max(np.abs(ref_logits - dep_logits)) < 1e-12

    def test_multi_step_raw_carry_diverges_from_eval(self):
        # without carry normalization the membrane history differs, so this
        # is the witness that r=1 is doing real work at t_steps > 1
        net = prepared_model(t_steps=4)
        deployed = deploy(net, TmConfig(rho0=0.0, r=0))
        rng = np.random.default_rng(31)
        x = rng.uniform(0, 1, (16, 3, 16, 16))
        ref_logits, _ = spikes_of(net, x, Mode.EVAL)
        dep_logits, _ = spikes_of(deployed, x, Mode.DEPLOYED)
        assert np.max(np.abs(ref_logits - dep_logits)) > 1e-6

    def test_always_refreshed_stats_match_direct_calibration(self):
        # rho0=1, omega=1 replaces the estimates with the batch statistics
        # every step; with carry normalization that is exactly the
        # recompute-per-batch calibration mode of the source model
        net = prepared_model(t_steps=4)
        deployed = deploy(net, TmConfig(rho0=1.0, omega=1.0, r=1))
        rng = np.random.default_rng(32)
        x = rng.uniform(0, 1, (16, 3, 16, 16))
        ref_logits, ref_trace = spikes_of(net, x, Mode.CALIBRATE)
        dep_logits, dep_trace = spikes_of(deployed, x, Mode.DEPLOYED)
        for a, b in zip(ref_trace, dep_trace):
            for name in a:
                assert np.array_equal(a[name], b[name]), name
        assert np.max(np.abs(ref_logits - dep_logits)) < 1e-12

    def test_adapting_stats_persist_across_batches(self):
        net = prepared_model(t_steps=2)
        deployed = deploy(net, TmConfig(rho0=0.5, omega=0.9))
        lif1 = deployed.stage("lif1")
        mu0 = lif1.tm.mu_hat.copy()
        rng = np.random.default_rng(33)
        deployed.forward(rng.uniform(0, 1, (4, 3, 16, 16)), Mode.DEPLOYED)
        mu1 = lif1.tm.mu_hat.copy()
        assert not np.array_equal(mu0, mu1)
        deployed.forward(rng.uniform(0, 1, (4, 3, 16, 16)), Mode.DEPLOYED)
        assert not np.array_equal(mu1, lif1.tm.mu_hat)

    def test_frozen_stats_never_move(self):
        net = prepared_model(t_steps=2)
        deployed = deploy(net, TmConfig(rho0=0.0))
        lif1 = deployed.stage("lif1")
        mu0 = lif1.tm.mu_hat.copy()
        thr0 = lif1.tm.v_th_mod.copy()
        rng = np.random.default_rng(34)
        deployed.forward(rng.uniform(0, 1, (4, 3, 16, 16)), Mode.DEPLOYED)
        assert np.array_equal(lif1.tm.mu_hat, mu0)
        assert np.array_equal(lif1.tm.v_th_mod, thr0)

    def test_deployed_checkpoint_round_trip(self, tmp_path):
        net = prepared_model(t_steps=2)
        deployed = deploy(net, TmConfig(rho0=0.5, omega=0.9, r=1))
        rng = np.random.default_rng(35)
        deployed.forward(rng.uniform(0, 1, (4, 3, 16, 16)), Mode.DEPLOYED)
        path = tmp_path / "deployed.spkc"
        save_checkpoint(path, deployed)
        clone = load_checkpoint(path)
        assert clone.deployed
        x = rng.uniform(0, 1, (4, 3, 16, 16))
        a = deployed.forward(x, Mode.DEPLOYED).data
        b = clone.forward(x, Mode.DEPLOYED).data
        assert np.array_equal(a, b)
        for sa, sb in zip(deployed.norm_lif_stages(),
                          clone.norm_lif_stages()):
            assert np.array_equal(sa.tm.mu_hat, sb.tm.mu_hat)
            assert np.array_equal(sa.tm.v_th_mod, sb.tm.v_th_mod)
            assert sa.tm.rho == sb.tm.rho
            assert sa.tm_cfg == sb.tm_cfg
