import json

import pytest
import tomlkit

from haptest.cli import main
from haptest.config import ExperimentConfig, config_from_mapping, dump_config, load_config
from haptest.errors import ConfigError
from haptest.exploration import dataset_digest

QUICK = """
[campaign]
trials_per_pair = 2
objects = [1, 2, 11]

[actions.tapping]
duration = 1.1

[actions.indentation]
duration = 1.1

[actions.sliding]
duration = 1.1
settle = 0.3

[features]
window = 0.5

[learning]
folds = 2
repetitions = 3
k = 3
cluster_repetitions = 2
"""


@pytest.fixture(scope="module")
def quick_config(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "quick.toml"
    path.write_text(QUICK)
    return path


@pytest.fixture(scope="module")
def pipeline(quick_config, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert main(["simulate", "--config", str(quick_config), "--out", str(out), "--campaign-id", "q"]) == 0
    dataset = out / "dataset" / "q"
    assert main(["features", str(dataset), "--config", str(quick_config), "--out", str(out / "feat"),
                 "--schema", "MP,SF,CSSF"]) == 0
    return out, dataset


# ---------------------------------------------------------------- config

def test_defaults_round_trip_through_toml():
    text = dump_config()
    back = config_from_mapping(tomlkit.parse(text).unwrap())
    assert back.to_dict() == ExperimentConfig().to_dict()
    assert back.digest() == ExperimentConfig().digest()
    assert back.controller.kp == 1000.0 and back.controller.kd == 200.0
    assert back.campaign.variation_surface == 0.03 and back.campaign.variation_action == 0.1


@pytest.mark.parametrize("data, where", [
    ({"campaign": {"trails_per_pair": 3}}, "campaign.trails_per_pair"),
    ({"robot": {"mass": "heavy"}}, "robot.mass"),
    ({"actions": {"sliding": {"duration": -1.0}}}, "actions.sliding"),
    ({"campaign": {"variation_surface": -0.1}}, "campaign.variation_surface"),
    ({"plotting": {}}, "plotting"),
    ({"features": {"schemas": ["MP", "XYZ"]}}, "features.schemas"),
])
def test_invalid_config_names_the_field(data, where):
    with pytest.raises(ConfigError) as err:
        config_from_mapping(data)
    assert where in str(err.value)


def test_objects_and_catalog_are_checked(tmp_path):
    with pytest.raises(ConfigError, match="campaign.objects"):
        config_from_mapping({"campaign": {"objects": [99]}}).catalog()
    with pytest.raises(ConfigError, match="campaign.catalog"):
        config_from_mapping({"campaign": {"catalog": str(tmp_path / "none.json")}}).catalog()


def test_missing_config_file_is_a_config_error(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.toml")


def test_dump_defaults_command(capsys):
    assert main(["config", "--dump-defaults"]) == 0
    assert capsys.readouterr().out == dump_config()
    assert main(["config"]) == 2


# ---------------------------------------------------------------- exit codes

def test_missing_catalog_exits_two(tmp_path, capsys):
    cfg = tmp_path / "c.toml"
    cfg.write_text('[campaign]\ncatalog = "nowhere.json"\n')
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path)]) == 2
    assert "campaign.catalog" in capsys.readouterr().err


def test_missing_dataset_exits_two(tmp_path):
    assert main(["features", str(tmp_path / "nothing"), "--out", str(tmp_path)]) == 2


def test_bad_overrides_exit_two(tmp_path):
    assert main(["simulate", "--objects", "1,x", "--out", str(tmp_path)]) == 2
    assert main(["simulate", "--trials", "0", "--out", str(tmp_path)]) == 2
    assert main(["features", str(tmp_path), "--schema", "ZZ", "--out", str(tmp_path)]) == 2


# ---------------------------------------------------------------- pipeline

def test_simulate_two_objects_one_trial(quick_config, tmp_path, capsys):
    assert main(["simulate", "--config", str(quick_config), "--objects", "1,11", "--trials", "1",
                 "--out", str(tmp_path), "--campaign-id", "pair"]) == 0
    ds = tmp_path / "dataset" / "pair"
    assert len(list(ds.glob("*.csv"))) == 6
    assert (ds / "meta.json").is_file()
    assert "k est" in capsys.readouterr().out


def test_output_root_falls_back_to_environment(quick_config, tmp_path, monkeypatch):
    monkeypatch.setenv("HAPTEST_OUT", str(tmp_path / "env"))
    assert main(["simulate", "--config", str(quick_config), "--objects", "1", "--trials", "1",
                 "--campaign-id", "e"]) == 0
    assert len(list((tmp_path / "env" / "dataset" / "e").glob("*.csv"))) == 3


def test_feature_files_have_schema_widths(pipeline):
    out, _ = pipeline
    widths = {s: len((out / "feat" / f"features_{s}.csv").read_text().splitlines()[0].split(","))
              for s in ("MP", "SF", "CSSF")}
    assert widths == {"MP": 5, "SF": 36, "CSSF": 5}
    rows = (out / "feat" / "features_MP.csv").read_text().splitlines()
    assert len(rows) == 1 + 3 * 2


def test_recognize_single_schema(pipeline, quick_config):
    out, _ = pipeline
    dest = out / "rec_mp"
    files = [str(out / "feat" / f"features_{s}.csv") for s in ("MP", "SF")]
    assert main(["recognize", *files, "--schema", "MP", "--config", str(quick_config),
                 "--out", str(dest)]) == 0
    report = json.loads((dest / "report.json").read_text())
    assert list(report["schemas"]) == ["MP"]
    assert report["config_digest"] == load_config(quick_config).digest()
    mp = report["schemas"]["MP"]
    assert len(mp["ablation"]) == 15
    assert "nmi_mean" in mp["clustering"]
    assert (dest / "confusion_MP.txt").is_file()


def test_commands_are_idempotent(pipeline, quick_config, tmp_path):
    out, dataset = pipeline
    assert main(["simulate", "--config", str(quick_config), "--out", str(tmp_path), "--campaign-id", "q"]) == 0
    assert dataset_digest(tmp_path / "dataset" / "q") == dataset_digest(dataset)
    assert main(["features", str(dataset), "--config", str(quick_config), "--out", str(tmp_path / "feat"),
                 "--schema", "MP,SF,CSSF"]) == 0
    for s in ("MP", "SF", "CSSF"):
        name = f"features_{s}.csv"
        assert (tmp_path / "feat" / name).read_bytes() == (out / "feat" / name).read_bytes()
    reports = []
    for dest in (tmp_path / "r1", tmp_path / "r2"):
        assert main(["recognize", str(out / "feat" / "features_MP.csv"), "--config", str(quick_config),
                     "--out", str(dest)]) == 0
        reports.append((dest / "report.json").read_bytes())
    assert reports[0] == reports[1]
