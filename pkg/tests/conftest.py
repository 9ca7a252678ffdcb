import numpy as np
import pytest

from berm.data import SyntheticWorldConfig, generate_world
from berm.graph import CLICK, PURCHASE, BipartiteGraph, build_graph
from berm.model import AblationVariant, BermParameters, ContextEncoder, ModelConfig
from berm.text import EmbeddingTable, Vocabulary, build_vocabulary


def random_params(config: ModelConfig, n_words: int, seed: int = 0, dtype=np.float64,
                  bias_scale: float = 0.1, emb_scale: float = 0.5) -> BermParameters:
    """Parameters with non-zero biases and embeddings large enough to matter."""
    rng = np.random.default_rng(seed)
    table = EmbeddingTable(rng.uniform(-emb_scale, emb_scale, size=(n_words + 1, config.d)).astype(dtype))
    params = BermParameters.init(config, n_words, rng, dtype=dtype, embedding=table)
    for name, w in params.weights.items():
        if name.startswith("b"):
            w[...] = rng.uniform(-bias_scale, bias_scale, size=w.shape)
    return params


# Six sentences over a handful of words; every word is in the vocabulary.
FIXTURE_LOG = [
    ("red shoe", "red running shoe", CLICK, 5),
    ("red shoe", "red leather boot", CLICK, 2),
    ("red shoe", "red running shoe", PURCHASE, 1),
    ("blue shoe", "red running shoe", CLICK, 3),
    ("blue shoe", "blue canvas shoe", CLICK, 4),
    ("leather boot", "red leather boot", CLICK, 6),
    ("leather boot", "blue canvas shoe", CLICK, 1),
]


@pytest.fixture
def fixture_graph() -> BipartiteGraph:
    return build_graph(FIXTURE_LOG)


@pytest.fixture
def fixture_vocab() -> Vocabulary:
    texts = [t for q, i, _, _ in FIXTURE_LOG for t in (q, i)] + ["green hat"]
    return build_vocabulary(texts, min_count=1)


def fixture_encoder(vocab, graph, d=6, l_q=3, l_i=4, k=2, b=2, variant=AblationVariant(), **kw):
    config = ModelConfig(d=d, l_q=l_q, l_i=l_i, k=k, b=b, variant=variant, **kw)
    return ContextEncoder(vocab, graph, config)


FIXTURE_PAIRS = [
    ("red shoe", "red running shoe"),
    ("blue shoe", "red leather boot"),
    ("leather boot", "blue canvas shoe"),
    ("green hat", "red running shoe"),   # query outside the graph
]


@pytest.fixture(scope="session")
def small_world():
    return generate_world(SyntheticWorldConfig(n_categories=4, queries_per_category=10,
                                               test_queries_per_category=3, items_per_category=12,
                                               seed=3))


# One line per acceptance criterion, echoed in the terminal summary.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
