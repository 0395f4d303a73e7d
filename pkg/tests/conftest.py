import numpy as np
import pytest

from specdock.anchor import AnchorConfig, LabeledExample, init_anchor, tokenize

# Small config used for gradient checks and most unit math: cheap, and the
# low-dimensional case exercises the same code paths as the default.
SMALL = AnchorConfig(
    vocab_size=33,
    embed_dim=8,
    max_len=12,
    num_classes=3,
    rank=2,
    lora_alpha=4.0,
    base_seed=7,
    lora_seed=8,
)


@pytest.fixture(scope="session")
def small_config():
    return SMALL


@pytest.fixture(scope="session")
def small_anchor():
    return init_anchor(SMALL)


@pytest.fixture(scope="session")
def default_config():
    return AnchorConfig()


@pytest.fixture(scope="session")
def default_anchor(default_config):
    return init_anchor(default_config)


def random_texts(rng, n, config, min_len=3, max_len=None):
    """Texts whose UTF-8 bytes stay inside the config's vocabulary."""
    hi = min(config.vocab_size - 1, 128)
    max_len = max_len or config.max_len
    out = []
    for _ in range(n):
        length = int(rng.integers(min_len, max_len + 1))
        ids = rng.integers(1, hi + 1, size=length)
        out.append(bytes((ids - 1).astype(np.uint8)).decode("utf-8"))
    return out


def random_batch(rng, n, config):
    texts = random_texts(rng, n, config)
    return [
        (tokenize(t, config.max_len), int(rng.integers(0, config.num_classes)))
        for t in texts
    ]


def separable_dataset(config, n_per_class=16):
    """One distinct repeated byte per class: trivially separable."""
    data = []
    for c in range(config.num_classes):
        for k in range(n_per_class):
            data.append(LabeledExample(chr(c + 1) * (4 + k % 8), c))
    return data
