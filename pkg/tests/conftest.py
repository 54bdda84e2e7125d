"""Shared fixtures: small vocabularies, model presets, and data paths."""
import pathlib

import pytest

from tokaudit import ModelSpec, PromptCorpus, Vocabulary

ROOT = pathlib.Path(__file__).resolve().parent.parent
DATA = ROOT / "data"
CONFIGS = ROOT / "configs"


@pytest.fixture(scope="session")
def vocab_tiny():
    return Vocabulary.from_tokens(["a", "b", "ab"])


@pytest.fixture(scope="session")
def vocab_abc():
    return Vocabulary.from_tokens(["a", "b", "c", "ab", "bc", "abc"])


@pytest.fixture(scope="session")
def vocab_default():
    return Vocabulary.from_tokens(["a", "b", "e", "s", "t", "ab", "be", "st", "te"])


@pytest.fixture(scope="session")
def spec_tiny4(vocab_tiny):
    # short horizon keeps enumeration and constrained sampling cheap
    return ModelSpec(seed=7, vocab=vocab_tiny, context_window=2, max_len=4)


@pytest.fixture(scope="session")
def spec_tiny6(vocab_tiny):
    return ModelSpec(seed=7, vocab=vocab_tiny, context_window=2, max_len=6)


@pytest.fixture(scope="session")
def spec_tiny_short(vocab_tiny):
    # boosted EOS concentrates mass on short outputs, good for enumeration
    return ModelSpec(seed=7, vocab=vocab_tiny, context_window=2, eos_boost=0.7, max_len=5)


@pytest.fixture(scope="session")
def spec_abc(vocab_abc):
    return ModelSpec(seed=11, vocab=vocab_abc, context_window=2, eos_boost=0.3, max_len=8)


@pytest.fixture(scope="session")
def corpus_tiny():
    return PromptCorpus.from_lines(["ab", "ba"])


@pytest.fixture(scope="session")
def data_dir():
    return DATA


@pytest.fixture(scope="session")
def configs_dir():
    return CONFIGS
