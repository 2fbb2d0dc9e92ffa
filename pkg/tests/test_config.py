import pytest

from cvcap.config import ConfigError, ExperimentConfig
from cvcap.rae import Variant


def test_defaults():
    cfg = ExperimentConfig()
    assert (cfg.hidden_dim, cfg.embed_dim, cfg.lr, cfg.batch_size, cfg.beam_size) == (512, 500, 1e-4, 8, 5)
    assert (cfg.n_train, cfg.n_test, cfg.epochs) == (500, 100, 30)
    assert cfg.variant is Variant.FULL
    assert cfg.gate_dim == 512


def test_text_round_trip():
    cfg = ExperimentConfig(seed=4, variant="NO_GATE", ablation_seeds=(3, 5), frozen=True, lr=0.002)
    back = ExperimentConfig.from_text(cfg.to_text())
    assert back == cfg
    assert back.fingerprint() == cfg.fingerprint()
    assert cfg.replace(seed=5).fingerprint() != cfg.fingerprint()


def test_comments_and_base():
    base = ExperimentConfig(hidden_dim=16)
    cfg = ExperimentConfig.from_text("# desk\nepochs = 3  # short\n\nvariant = iframe_only\n", base)
    assert cfg.epochs == 3 and cfg.hidden_dim == 16 and cfg.variant is Variant.IFRAME_ONLY


@pytest.mark.parametrize(
    "text",
    [
        "bogus = 1",
        "epochs = 1\nepochs = 2",
        "epochs",
        "epochs = three",
        "batch_size = 0",
        "dropout = 1.0",
        "shapes = square,hexagon",
        "variant = SOMETHING",
        "height = 50",
        "residual_mode = sideways",
        "frozen = maybe",
        "lr = -1",
    ],
)
def test_rejects_bad_configs(text):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_text(text)


def test_load_desk_config():
    from pathlib import Path

    cfg = ExperimentConfig.load(Path(__file__).parent.parent / "configs" / "desk.cfg")
    assert cfg.hidden_dim < 512 and cfg.n_train == 500 and cfg.n_test == 100
