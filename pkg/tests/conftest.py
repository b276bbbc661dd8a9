import numpy as np
import pytest

from plita.data.synth import SynthConfig, generate_corpus
from plita import trainer
from plita.model import EncoderConfig, HeadConfig


@pytest.fixture(scope="session")
def tiny_corpus():
    """4 subjects x 2 records x 240 s; enough for sampler and probe tests."""
    return generate_corpus(SynthConfig(subjects=4, duration_s=240.0, seed=8))


@pytest.fixture(scope="session")
def tiny_corpus_cfg():
    return SynthConfig(subjects=4, duration_s=240.0, seed=8)


def micro_train_config(**overrides):
    """Smallest config that exercises every training code path."""
    cfg = trainer.TrainConfig(
        iterations=6,
        batch_size=2,
        n_inputs=3,
        window_s=40.0,
        checkpoint_every=3,
        encoder=EncoderConfig(input_len=1000, patch=100, dim=16, depth=1, heads=2),
        heads=HeadConfig(proj_hidden=32, proj_out=16, pred_hidden=16),
    )
    for k, v in overrides.items():
        setattr(cfg, k, v)
    return cfg


@pytest.fixture()
def micro_cfg():
    return micro_train_config()


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(0)
