"""Shared fixtures.

The default-scale model and corpora are expensive (a few minutes), so they are
session-scoped and shared by the calibration/detection acceptance tests. Set
PARAMCPD_TEST_CACHE to a directory to persist the trained checkpoint between
runs; generation is deterministic, so a cache hit is byte-equivalent to
retraining.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np
import pytest

import paramcpd as pc
from paramcpd import npe

# seeds for the default-scale artifacts; fixed so every test run sees the
# same model and corpora
TRAIN_SEED = 11
CORPUS_SEED = 55
STATIONARY_SEED = 100
DETECT_SEED = 77

N_EVAL_SEQUENCES = 3  # sequences ("seeds") per parameter kind
N_STATIONARY = 50


def make_tiny_model(seed=0, w=16, n_pairs=600, epochs=6):
    """Small but genuinely trained model for unit tests (seconds)."""
    ts = pc.build_training_set(
        pc.DEFAULT_PRIOR, n_pairs=n_pairs, w=w, sim_steps=1100, burn_in=1000, seed=seed,
    )
    config = npe.MdnConfig(input_dim=4 * w, hidden_sizes=(24, 24), n_components=3)
    opt = npe.OptimizerParams(epochs=epochs, batch_size=128)
    return npe.train(ts, config, opt, seed=seed)


@pytest.fixture(scope="session")
def tiny_model():
    return make_tiny_model()


@pytest.fixture(scope="session")
def default_model():
    """Default-scale model: N=50k pairs, w=100, hidden (256, 256), 30 epochs."""
    cache = os.environ.get("PARAMCPD_TEST_CACHE")
    ckpt = Path(cache) / "default_model.ckpt" if cache else None
    if ckpt is not None and ckpt.exists():
        return npe.load_checkpoint(ckpt)
    ts = pc.build_training_set(
        pc.DEFAULT_PRIOR, n_pairs=50000, w=100, dt=0.01, sim_steps=1400,
        noise_eta=0.01, seed=TRAIN_SEED, burn_in=1000,
    )
    model = npe.train(ts, npe.MdnConfig(input_dim=400), npe.OptimizerParams(), seed=TRAIN_SEED)
    if ckpt is not None:
        ckpt.parent.mkdir(parents=True, exist_ok=True)
        npe.save_checkpoint(model, ckpt)
    return model


@pytest.fixture(scope="session")
def changepoint_corpora():
    """K=12, L=800, eta=1% corpora: N_EVAL_SEQUENCES per parameter kind."""
    return {
        kind: pc.build_changepoint_corpus(kind, N_EVAL_SEQUENCES, seed=CORPUS_SEED)
        for kind in ("sigma", "rho", "beta")
    }


@pytest.fixture(scope="session")
def stationary_corpora():
    """T=3000 stationary trajectories, N_STATIONARY per parameter kind."""
    return {
        kind: pc.build_stationary_corpus(kind, N_STATIONARY, seed=STATIONARY_SEED)
        for kind in ("sigma", "rho", "beta")
    }


@pytest.fixture(scope="session")
def detection_runs(default_model, changepoint_corpora):
    """Both methods on every corpus sequence at default settings."""
    runs = {}
    for kind, seqs in changepoint_corpora.items():
        per_kind = []
        for seq in seqs:
            config = pc.DetectionConfig(varying_dim=kind)
            seed = int(np.random.SeedSequence([DETECT_SEED, seq.index]).generate_state(1)[0])
            rp = pc.detect_param_cpd(seq.trajectory, default_model, config, seed=seed)
            ro = pc.detect_obs_cpd(seq.trajectory, config)
            per_kind.append({"sequence": seq, "param_cpd": rp, "obs_cpd": ro})
        runs[kind] = per_kind
    return runs
