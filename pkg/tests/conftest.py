"""Shared fixtures: one trained model reused by the acceptance criteria."""

import time
from types import SimpleNamespace

import numpy as np
import pytest

from spikeadapt.data import corrupt, gen_synthetic
from spikeadapt.network import SpikingNet, reference_spec
from spikeadapt.training import TrainConfig, evaluate, train

NUM_CLASSES = 5
CONTRAST = 0.25


@pytest.fixture(scope="session")
def trained_setup():
    """Train the reference classifier once for the whole session.

    The training set mixes in a lightly noised copy of itself so the
    features tolerate noise; heavy test-time noise then mostly misaligns
    activation statistics, which is the failure mode the adaptive
    thresholds are built to undo.
    """
    t0 = time.monotonic()
    kw = dict(num_classes=NUM_CLASSES, contrast=CONTRAST)
    x_tr, y_tr = gen_synthetic(512, seed=100, **kw)
    x_va, y_va = gen_synthetic(128, seed=101, **kw)
    x_te, y_te = gen_synthetic(256, seed=102, **kw)
    x_tr = np.concatenate([x_tr, corrupt(x_tr, "gaussian", 3, seed=9)])
    y_tr = np.concatenate([y_tr, y_tr])
    net = SpikingNet(reference_spec(num_classes=NUM_CLASSES), seed=1)
    train(net, x_tr, y_tr,
          TrainConfig(epochs=8, batch_size=32, lr=2e-3, seed=2),
          val=(x_va, y_va))
    clean_acc = evaluate(net, x_te, y_te)
    return SimpleNamespace(
        net=net,
        x_test=x_te,
        y_test=y_te,
        x_noisy=corrupt(x_te, "gaussian", 5, seed=7),
        clean_acc=clean_acc,
        setup_seconds=time.monotonic() - t0,
    )
