import numpy as np
import pytest

from kinetic_triage import corpus
from kinetic_triage.encoder import ModelConfig, init_params
from kinetic_triage.tokenizer import CLS, PAD, SEP, UNK, Vocab


def synthetic_vocab() -> Vocab:
    """Whole-word vocabulary covering everything the synthetic generator emits."""
    return Vocab([PAD, UNK, CLS, SEP, *corpus.synthetic_vocabulary()])


@pytest.fixture(scope="session")
def toy_vocab() -> Vocab:
    return synthetic_vocab()


def toy_config(vocab: Vocab, hidden: int = 8, layers: int = 2, heads: int = 2,
               max_positions: int = 16, **kwargs) -> ModelConfig:
    return ModelConfig(layers=layers, hidden=hidden, heads=heads,
                       ff_dim=2 * hidden, vocab_size=len(vocab),
                       max_positions=max_positions, **kwargs)


@pytest.fixture(scope="session")
def toy_cfg(toy_vocab) -> ModelConfig:
    return toy_config(toy_vocab)


@pytest.fixture(scope="session")
def toy_params(toy_cfg):
    return init_params(toy_cfg, seed=7)


def fresh_toy_params(toy_cfg, seed=7, dtype=np.float32):
    return init_params(toy_cfg, seed=seed, dtype=dtype)
