import csv
import io
import math

import pytest

import promptdoor


def small_config():
    cfg = promptdoor.parse_config(
        "data.per_class = 40\n"
        "data.pretrain_per_class = 150\n"
        "model.width = 16\n"
        "pretrain.epochs = 5\n"
        "clean.epochs = 8\n"
        "backdoor.epochs = 8\n"
        "run.seeds = 2\n"
    )
    return cfg


def test_config_round_trip():
    cfg = promptdoor.RunConfig()
    cfg.set("trigger.length", "4")
    again = promptdoor.parse_config(str(cfg))
    assert str(again) == str(cfg)
    assert "trigger.length = 4" in str(again)
    assert len(promptdoor.config_keys()) == str(cfg).count("\n")


def test_unknown_key_raises_config_error():
    with pytest.raises(promptdoor.PromptdoorError, match="config"):
        promptdoor.parse_config("trigger.lenght = 3\n")


def test_gumbel_relax_zero_noise_is_identity():
    alpha = [0.2, 0.3, 0.5]
    beta = promptdoor.gumbel_relax(alpha, 1.0, [0.0, 0.0, 0.0])
    assert all(abs(a - b) < 1e-12 for a, b in zip(alpha, beta))
    assert math.isclose(sum(promptdoor.softmax([1.0, -2.0, 0.5])), 1.0, abs_tol=1e-12)


def test_pipeline_is_deterministic():
    cfg = small_config()
    a = promptdoor.run_pipeline(cfg)
    b = promptdoor.run_pipeline(cfg)
    assert a == b
    assert 0.0 <= a["asr"] <= 1.0
    assert a["sum"] == pytest.approx(a["ca"] + a["asr"])
    assert a["candidates"]


def test_sweep_csv_shape():
    cfg = small_config()
    cfg.sweep_values = "2,4"
    text = promptdoor.sweep_csv(cfg, "poison_count")
    assert text.startswith("# fingerprint=")
    rows = list(csv.reader(line for line in io.StringIO(text) if not line.startswith("#")))
    assert rows[0][:3] == ["axis", "value", "seed_count"]
    assert [r[1] for r in rows[1:]] == ["2", "4"]
    assert all(r[2] == "2" for r in rows[1:])
