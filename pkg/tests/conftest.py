import numpy as np
import pytest

from when2talk.cli import main
from when2talk.training import load_checkpoint


@pytest.fixture(scope="session")
def synth_dir(tmp_path_factory):
    """The 500-dialogue synthetic corpus, split 80/10/10 with seed 7."""
    out = tmp_path_factory.mktemp("synth")
    assert main(["synth", "--out", str(out), "--dialogues", "500", "--seed", "7"]) == 0
    return out


@pytest.fixture(scope="session")
def trained_ckpt_path(tmp_path_factory, synth_dir):
    """Desk-preset DGGNN trained on the synthetic corpus (seed 7)."""
    import json

    cfg_path = tmp_path_factory.mktemp("train") / "cfg.json"
    ckpt_path = cfg_path.parent / "model.w2t"
    cfg_path.write_text(json.dumps({"epochs": 6, "batch_size": 16, "seed": 7}))
    assert main(["train", "--config", str(cfg_path), "--data-dir", str(synth_dir),
                 "--out", str(ckpt_path)]) == 0
    return ckpt_path


@pytest.fixture(scope="session")
def trained_ckpt(trained_ckpt_path):
    return load_checkpoint(trained_ckpt_path)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
