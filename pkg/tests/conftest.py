import warnings

import pytest

# starlette's TestClient import path warns on newer httpx; unrelated to us
warnings.filterwarnings("ignore", message=".*httpx.*", category=DeprecationWarning)


@pytest.fixture()
def small_corpus(tmp_path):
    from owclip.service.bench import make_synthetic_corpus

    return make_synthetic_corpus(
        tmp_path / "corpus", n_known=3, n_unknown=2, dim=16,
        train_per_class=30, eval_per_class=10, sigma=0.2, seed=0)


@pytest.fixture()
def workbench(tmp_path, small_corpus):
    from owclip.service.config import load_config
    from owclip.service.workbench import Workbench

    # softmax-prob routing needs a strict threshold when Q is small, else
    # unseen classes leak into the known pool
    config = load_config(None, data_dir=str(tmp_path / "wb"), backend="precomputed",
                         store_path=str(small_corpus.store_path), dim=16, seed=0,
                         epochs=8, t_threshold=0.9)
    wb = Workbench(config)
    wb.ingest(small_corpus.manifest_path)
    return wb
