import pytest

from popkit.apuf import StageModel
from popkit.config import ExperimentConfig, flag_name, load_config, save_config
from popkit.errors import ParameterError


def test_defaults():
    cfg = load_config()
    assert cfg.seed == 0
    assert cfg.format == "csv"
    assert cfg.stage_model == StageModel.DELAY
    assert cfg.timestamp
    assert cfg.pick("crps", 1000) == 1000
    assert cfg.pop_config.rounds == 1


def test_file_values_are_loaded(tmp_path):
    path = tmp_path / "run.env"
    path.write_text("SEED=9\nK=4\nSTAGE_MODEL=linear\nHIDDEN=64,32\n")
    cfg = load_config(path)
    assert cfg.seed == 9
    assert cfg.k == 4
    assert cfg.stage_model == StageModel.LINEAR
    assert cfg.hidden_layers == (64, 32)


def test_flags_override_file(tmp_path):
    path = tmp_path / "run.env"
    path.write_text("SEED=9\nVOTES=7\n")
    cfg = load_config(path, seed=2, votes=None)
    assert cfg.seed == 2
    assert cfg.votes == 7


def test_unknown_key_rejected(tmp_path):
    path = tmp_path / "run.env"
    path.write_text("SEEDS=1\n")
    with pytest.raises(ParameterError) as e:
        load_config(path)
    assert e.value.name == "config"
    assert "SEEDS" in e.value.detail


def test_missing_file_rejected(tmp_path):
    with pytest.raises(ParameterError):
        load_config(tmp_path / "absent.env")


@pytest.mark.parametrize("field, value", [("votes", 4), ("hw", 3), ("threads", 0),
                                          ("ber", 1.0), ("hidden", "a,b"), ("format", "xml")])
def test_validation_names_the_field(field, value):
    with pytest.raises(ParameterError) as e:
        load_config(**{field: value})
    assert e.value.name == field


def test_environment_is_ignored(monkeypatch):
    monkeypatch.setenv("SEED", "42")
    monkeypatch.setenv("VOTES", "4")
    assert load_config().seed == 0


def test_save_then_load_round_trip(tmp_path):
    cfg = load_config(seed=5, k=6, rounds=3, noise=0.5, no_timestamp=True, verbose=True)
    path = save_config(cfg, tmp_path / "saved.env")
    text = path.read_text()
    assert "VERBOSE" not in text
    assert "NOISE=0.5" in text
    loaded = load_config(path)
    assert loaded.model_dump(exclude={"verbose"}) == cfg.model_dump(exclude={"verbose"})


def test_train_config_defaults_per_attack():
    cfg = load_config()
    assert cfg.train_config("lr").learning_rate == 1.0
    assert cfg.train_config("mlp").learning_rate == pytest.approx(1e-3)
    assert load_config(epochs=3).train_config("mlp").epochs == 3


def test_flag_name():
    assert flag_name("instance_seed") == "--instance-seed"
    assert set(ExperimentConfig.model_fields) >= {"seed", "threads", "out", "format"}


def test_noise_defaults_to_a_tenth_of_stage_sigma():
    assert load_config().noise_model.sigma_noise == pytest.approx(0.1)
    assert load_config(sigma=2.0).noise_model.sigma_noise == pytest.approx(0.2)
    assert load_config(sigma=2.0, noise=0.0).noise_model.noiseless
    assert load_config(noise=0.5, eval_seed=3).noise_model.eval_seed == 3


def test_true_ber_is_optional():
    assert load_config().pick("true_ber", 0.1) == 0.1
    assert load_config(true_ber=0.0).true_ber == 0.0
    with pytest.raises(ParameterError) as e:
        load_config(true_ber=-0.1)
    assert e.value.name == "true_ber"


def test_mlp_preset_selects_scale():
    desk = load_config().train_config("mlp")
    assert desk.hidden == (128, 128, 128)
    assert desk.batch_size == 256
    assert desk.validation_fraction == 0.05
    assert load_config().train_config("lr").validation_fraction == 0
    full = load_config(preset="full").train_config("mlp")
    assert full.hidden == (2000,) * 10
    assert full.budget_seconds == 72 * 3600.0
    tuned = load_config(preset="full", hidden="64", epochs=2, budget=5.0).train_config("mlp")
    assert tuned.hidden == (64,)
    assert tuned.epochs == 2
    assert tuned.budget_seconds == 5.0
    assert tuned.batch_size == full.batch_size
