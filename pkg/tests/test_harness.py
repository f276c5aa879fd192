import json
from dataclasses import replace
from pathlib import Path

import pytest

from tracephase import cli
from tracephase.errors import CalibrationUnstable, ConfigInvalid, ExperimentFailed
from tracephase.harness import (
    PINNED_PATH,
    PinnedConstants,
    compare_calibration_runs,
    execute,
    load_config,
    pin_constants,
    pin_key,
    resolve_field,
    rows_to_csv,
    run,
)

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def config(name, tmp_path, **changes):
    cfg = load_config(CONFIGS / f"{name}.json", environ={})
    return replace(cfg, output=str(tmp_path / name), **changes)


class TestConfig:
    def test_every_shipped_config_loads(self):
        names = sorted(p.stem for p in CONFIGS.glob("*.json"))
        assert len(names) >= 15
        for name in names:
            cfg = load_config(CONFIGS / f"{name}.json", environ={})
            resolve_field(cfg.field)

    @pytest.mark.parametrize("bad", [{}, {"field": "Q"}, {"experiment": "nope", "field": "Q"},
                                     {"experiment": "cover", "field": "Q", "colour": 1},
                                     {"experiment": "cover", "field": "Q", "tol": 0.5}])
    def test_invalid(self, bad):
        with pytest.raises(ConfigInvalid):
            load_config(bad, environ={})

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.json"
        path.write_text("{}")
        with pytest.raises(ConfigInvalid):
            load_config(path, environ={})

    def test_environment_overrides_file(self):
        cfg = load_config({"experiment": "cover", "field": "Q", "seed": 3, "threads": 1},
                          environ={"TRACEPHASE_SEED": "11", "TRACEPHASE_THREADS": "2"})
        assert cfg.seed == 11 and cfg.threads == 2

    def test_bad_environment_value(self):
        with pytest.raises(ConfigInvalid):
            load_config({"experiment": "cover", "field": "Q"}, environ={"TRACEPHASE_SEED": "x"})


class TestPinned:
    def test_fixture_has_every_pinned_experiment(self):
        store = PinnedConstants(PINNED_PATH)
        experiments = {key.split("|")[0] for key in store.entries}
        assert experiments == {"calibration", "stability", "cover", "sublevel", "tarry-sfrak", "tarry-sharpness"}

    def test_drift_names_the_constant(self, tmp_path):
        cfg = config("cover-q", tmp_path)
        field, result = execute(cfg)
        store = PinnedConstants(tmp_path / "pins.json")
        key = pin_key("cover", field, result.degree, result.n)
        store.record(key, {"N_overlap": result.constants["N_overlap"] * 2}, cfg.seed)
        with pytest.raises(ExperimentFailed) as info:
            run(cfg, store)
        assert info.value.assertion == "N_overlap"

    def test_repin_reproduces_fixture(self, tmp_path):
        cfg = config("stability-sqrt2", tmp_path)
        store = PinnedConstants(tmp_path / "pins.json")
        values = pin_constants(cfg, store)
        shipped = PinnedConstants(PINNED_PATH)
        key = next(iter(store.entries))
        assert values == shipped.get(key)
        assert json.loads((tmp_path / "pins.json").read_text())[key]["seed"] == 42

    def test_unstable_calibration(self):
        assert compare_calibration_runs([{"c": 1.0}, {"c": 1.05}]) == {"c": 1.0}
        with pytest.raises(CalibrationUnstable):
            compare_calibration_runs([{"c": 1.0}, {"c": 1.2}])
        with pytest.raises(CalibrationUnstable):
            compare_calibration_runs([{"c": 1.0}, {"d": 1.0}])

    def test_nothing_to_pin(self, tmp_path):
        cfg = config("fourier-q", tmp_path)
        with pytest.raises(ConfigInvalid):
            pin_constants(cfg, PinnedConstants(tmp_path / "pins.json"))


class TestRun:
    def test_outputs_and_manifest(self, tmp_path):
        out = run(config("cover-gaussian", tmp_path))
        assert out.status == 0
        manifest = json.loads(out.manifest_path.read_text())
        assert manifest["seed"] == 42
        assert set(manifest["versions"]) >= {"tracephase", "python", "numpy"}
        assert json.loads(out.json_path.read_text())["key"] == out.key

    @pytest.mark.parametrize("name", ["stability-gaussian", "sublevel-q", "tarry-sfrak-q"])
    def test_csv_independent_of_threads(self, tmp_path, name):
        a = run(config(name, tmp_path / "one", threads=1))
        b = run(config(name, tmp_path / "two", threads=2))
        assert a.csv_path.read_bytes() == b.csv_path.read_bytes()
        outputs = [json.loads(o.manifest_path.read_text())["outputs"] for o in (a, b)]
        assert outputs[0] == outputs[1]

    def test_csv_format(self):
        text = rows_to_csv([{"a": 1, "b": 0.5}, {"a": 2, "c": True}])
        assert text == "a,b,c\n1,0.5,\n2,,True\n"


class TestCli:
    def test_field_info(self, capsys):
        assert cli.main(["field", "info", "--field", "Q(sqrt2)"]) == 0
        assert json.loads(capsys.readouterr().out)["real_embeddings"] == 2

    def test_phase_eval(self, capsys):
        code = cli.main(["phase", "eval", "--field", "Q(i)", "--poly", '{"n": 1, "coeffs": {"(2)": [1, 0]}}',
                         "--x", "1 0"])
        assert code == 0 and capsys.readouterr().out.strip()

    def test_bad_field_is_config_error(self, capsys):
        assert cli.main(["field", "info", "--field", "[1, 2, 3, 0]"]) == 2

    def test_run_verify_main_gaussian(self, tmp_path, capsys):
        assert cli.main(["--out", str(tmp_path), "run", "--config", str(CONFIGS / "verify-main-gaussian.json")]) == 0
        assert (tmp_path / "verify-main.csv").is_file()

    def test_pin_to_custom_store(self, tmp_path, capsys):
        store = tmp_path / "pins.json"
        assert cli.main(["pin", "--config", str(CONFIGS / "cover-q.json"), "--store", str(store)]) == 0
        assert "N_overlap" in capsys.readouterr().out
        assert "cover|minpoly=0,1|d=2|n=1" in json.loads(store.read_text())

    @pytest.mark.parametrize("exc, code", [(ExperimentFailed("N_overlap", "drift"), 1),
                                           (ConfigInvalid("bad"), 2),
                                           (CalibrationUnstable("moved"), 3)])
    def test_exit_codes(self, monkeypatch, capsys, exc, code):
        def boom(cfg):
            raise exc
        monkeypatch.setattr(cli, "run", boom)
        assert cli.main(["run", "--config", str(CONFIGS / "cover-q.json")]) == code
        assert str(exc) in capsys.readouterr().err
