import pytest

from kpmatch.config import KEYS, RunConfig, load_config, parse_pairs
from kpmatch.errors import ParseError, UsageError


def test_defaults():
    c = RunConfig()
    assert (c.th, c.mg, c.match_threshold, c.prior_sigma) == (3.0, 10.0, 0.2, 0.1)
    assert (c.lr, c.beta1, c.beta2, c.eps) == (1e-4, 0.9, 0.999, 1e-8)
    assert c.patience == 20 and c.epochs == 300


def test_file_and_overrides(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# comment\nmodel.layers = 3\nmodel.variant=direct  # trailing\n\nloss.kind=matching\n")
    c = load_config(path, {"model.layers": "4", "model.position_encoder": "false"})
    assert c.layers == 4 and c.variant == "direct" and c.loss == "matching"
    assert c.use_encoder is False


def test_text_round_trip():
    c = RunConfig(dim=16, lr=3e-3, relaxation=1.3, use_encoder=False)
    again = load_config(None, parse_pairs(c.to_text().splitlines()))
    assert again == c


def test_every_key_maps_to_a_field():
    text = RunConfig().to_text()
    assert sorted(line.split("=")[0] for line in text.splitlines()) == sorted(KEYS)


@pytest.mark.parametrize(
    "items",
    [
        {"model.sigma_init": "0"},
        {"loss.th": "10", "loss.mg": "3"},
        {"loss.th": "0"},
        {"model.layers": "0"},
        {"match.threshold": "1.0"},
        {"model.variant": "bogus"},
        {"loss.kind": "focal"},
        {"sinkhorn.temperature": "0"},
        {"sinkhorn.relaxation": "2"},
        {"train.val_fraction": "0"},
        {"no.such.key": "1"},
        {"model.layers": "two"},
        {"model.position_encoder": "maybe"},
    ],
)
def test_invalid(items):
    with pytest.raises(UsageError):
        load_config(None, items)


def test_malformed_line(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("model.layers 2\n")
    with pytest.raises(ParseError, match="bad.cfg:1"):
        load_config(path)


def test_model_config():
    m = RunConfig(dim=16, layers=3, variant="vanilla").model_config()
    assert (m.dim, m.layers, m.variant) == (16, 3, "vanilla")
