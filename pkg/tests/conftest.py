import pytest

from forgetbench.synth import write_corpus


@pytest.fixture(scope="session")
def synth_corpus_file(tmp_path_factory):
    """Full-size synthetic corpus (150 intents, published JSON layout)."""
    path = tmp_path_factory.mktemp("corpus") / "data_full.json"
    write_corpus(path, seed=7)
    return path
