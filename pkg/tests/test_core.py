"""Tests for src/core models, reference store, grids and file handling."""

import json

import numpy as np
import pytest

from src.config import DeblurConfig, ErrorRuleKind, GammaRule, RunMode
from src.core.errors import (
    ConfigError,
    DimensionMismatchError,
    NonFiniteError,
    SplittingError,
    StepsizeError,
)
from src.core.grids import GradientField, ImageGrid
from src.core.models import FLAT_KEYS, ExperimentSpec, RunReport
from src.core.operators import MetricProxRule
from src.core.reference_store import ReferenceStore
from src.utils.file_handler import FileHandler


class TestDeblurConfig:
    def test_defaults(self):
        cfg = DeblurConfig()
        assert cfg.lambda_reg == 0.003
        assert cfg.kernel_size == 9
        assert cfg.init_scalar == 0.466
        assert cfg.gamma_rule is GammaRule.ERROR_FREE
        assert cfg.prox_rule is MetricProxRule.EXACT

    def test_parses_strings(self):
        cfg = DeblurConfig(gamma_rule="with-error", error_rule="half-k", prox_rule="scaled")
        assert cfg.gamma_rule is GammaRule.WITH_ERROR
        assert cfg.error_rule is ErrorRuleKind.HALF_POW_K
        assert cfg.prox_rule is MetricProxRule.SCALED

    def test_invalid_enum_lists_choices(self):
        with pytest.raises(ConfigError, match="inv-k2"):
            DeblurConfig(error_rule="inv-k3")

    @pytest.mark.parametrize("kwargs", [
        {"lambda_reg": 0.0},
        {"kernel_size": 8},
        {"kernel_sigma": -1.0},
        {"noise_sigma": -0.1},
    ])
    def test_invalid_values(self, kwargs):
        with pytest.raises(ConfigError):
            DeblurConfig(**kwargs)

    def test_dict_round_trip(self):
        cfg = DeblurConfig(lambda_reg=0.01, error_rule="inv-kk", tau_rule="k-over-k1")
        data = cfg.to_dict()
        assert data["error_rule"] == "inv-kk"
        assert DeblurConfig.from_dict(data) == cfg


class TestExperimentSpec:
    def test_from_flat(self):
        spec = ExperimentSpec.from_flat(
            {"lambda": 0.01, "errors": "inv-k2", "max_iters": 50, "seed": 7, "out": "runs"},
            RunMode.DEBLUR,
        )
        assert spec.deblur.lambda_reg == 0.01
        assert spec.deblur.error_rule is ErrorRuleKind.INV_K2
        assert spec.deblur.noise_seed == 7
        assert spec.seed == 7
        assert spec.max_iters == 50
        assert spec.output_dir == "runs"

    def test_unknown_keys_named(self):
        with pytest.raises(ConfigError, match="gama_rule"):
            ExperimentSpec.from_flat({"gama_rule": "error-free"})

    def test_known_keys_listed(self):
        assert "lambda" in FLAT_KEYS and "criteria" in FLAT_KEYS

    def test_criteria_split(self):
        spec = ExperimentSpec.from_flat({"criteria": "step:1e-2,fval:1e-3"}, RunMode.BENCH)
        assert spec.criteria == ["step:1e-2", "fval:1e-3"]
        assert spec.mode is RunMode.BENCH

    @pytest.mark.parametrize("data", [{"max_iters": -1}, {"trace_every": 0}, {"reference_iters": 0}])
    def test_invalid_counts(self, data):
        with pytest.raises(ConfigError):
            ExperimentSpec.from_flat(data)

    def test_needs_seed(self):
        assert ExperimentSpec().needs_seed
        assert not ExperimentSpec.from_flat({"noise_sigma": 0.0}).needs_seed

    def test_dict_round_trip(self):
        spec = ExperimentSpec.from_flat({"tau": "one-minus-inv-k", "stop": "step:1e-3", "seed": 1})
        restored = ExperimentSpec.from_dict(json.loads(json.dumps(spec.to_dict())))
        assert restored.to_dict() == spec.to_dict()

    def test_flat_round_trip(self, tmp_path):
        spec = ExperimentSpec.from_flat(
            {"sigma2": "k-over-k1", "errors": "inv-k5", "seed": 3, "criteria": "step:1e-2,dist:1e-1",
             "out": "runs", "prox_rule": "scaled"},
            RunMode.BENCH,
        )
        path = FileHandler.save_yaml(tmp_path / "run_config.yaml", spec.to_flat())
        restored = ExperimentSpec.from_flat(FileHandler.load_yaml(path), RunMode.BENCH)
        assert restored.to_dict() == spec.to_dict()

    def test_flat_omits_unset(self):
        flat = ExperimentSpec.from_flat({"noise_sigma": 0.0}).to_flat()
        assert "seed" not in flat and "stop" not in flat
        assert set(flat) <= set(FLAT_KEYS)

    def test_reference_key(self):
        spec = ExperimentSpec.from_flat({"seed": 0})
        key = spec.reference_key("abc")
        assert len(key) == 64
        assert key == ExperimentSpec.from_flat({"seed": 0}).reference_key("abc")
        assert key != spec.reference_key("abd")
        assert key != ExperimentSpec.from_flat({"seed": 1}).reference_key("abc")

    def test_reference_key_ignores_run_settings(self):
        a = ExperimentSpec.from_flat({"seed": 0, "max_iters": 10, "stop": "step:1e-2"})
        b = ExperimentSpec.from_flat({"seed": 0, "max_iters": 99})
        assert a.reference_key("d") == b.reference_key("d")


class TestRunReport:
    def test_per_iteration(self):
        report = RunReport(method="tseng", iterations=10, stop_reason="budget", b_evaluations=20)
        assert report.b_evaluations_per_iteration == 2.0
        assert RunReport(method="x", iterations=0, stop_reason="budget", b_evaluations=1).b_evaluations_per_iteration is None

    def test_json_line(self):
        report = RunReport(method="tseng_ep", iterations=3, stop_reason="step_norm", final_fval=1.5)
        line = report.to_json_line()
        assert "\n" not in line
        data = json.loads(line)
        assert data["method"] == "tseng_ep"
        assert data["final_fval"] == 1.5
        assert RunReport.from_dict(data) == report


class TestErrors:
    def test_hierarchy(self):
        assert issubclass(StepsizeError, ConfigError)
        assert issubclass(ConfigError, SplittingError)
        assert issubclass(DimensionMismatchError, ValueError)

    def test_non_finite_message(self):
        err = NonFiniteError("q_2,i,n", 12, "tv")
        assert "q_2,i,n" in str(err) and "tv" in str(err) and "12" in str(err)


class TestGrids:
    def test_image_flat_round_trip(self):
        img = ImageGrid(np.arange(6.0).reshape(2, 3))
        assert img.M == 2 and img.N == 3 and img.size == 6
        np.testing.assert_array_equal(ImageGrid.from_flat(img.flatten(), img.shape).pixels, img.pixels)

    def test_image_from_flat_size(self):
        with pytest.raises(DimensionMismatchError):
            ImageGrid.from_flat(np.zeros(5), (2, 3))

    def test_image_rejects_bad_input(self):
        with pytest.raises(ValueError):
            ImageGrid(np.zeros(4))
        with pytest.raises(ValueError):
            ImageGrid(np.array([[np.inf]]))

    def test_field_flatten_order(self):
        field = GradientField(np.ones((2, 2)), 2 * np.ones((2, 2)))
        np.testing.assert_array_equal(field.flatten(), [1, 1, 1, 1, 2, 2, 2, 2])
        restored = GradientField.from_flat(field.flatten(), (2, 2))
        assert restored.inner(field) == field.inner(field) == 20.0

    def test_field_shape_mismatch(self):
        with pytest.raises(ValueError):
            GradientField(np.zeros((2, 2)), np.zeros((2, 3)))


class TestReferenceStore:
    KEY = "ab" * 32

    def test_save_and_load(self, tmp_path):
        store = ReferenceStore(tmp_path / "cache")
        solution = np.linspace(0.0, 1.0, 9)
        store.save(self.KEY, solution, 1.25, {"iterations": 100, "image": "synthetic:3"})
        entry = store.load(self.KEY)
        assert entry is not None
        np.testing.assert_array_equal(entry.solution, solution)
        assert entry.fval == 1.25
        assert entry.meta["iterations"] == 100
        assert entry.path == store.solution_path(self.KEY)

    def test_load_missing(self, tmp_path):
        assert ReferenceStore(tmp_path).load(self.KEY) is None

    def test_list_and_delete(self, tmp_path):
        store = ReferenceStore(tmp_path)
        store.save(self.KEY, np.zeros(2), 0.0, {"image": "a"})
        store.save("cd" * 32, np.ones(3), 2.0)
        entries = store.list_entries()
        assert [e["key"] for e in entries] == [self.KEY, "cd" * 32]
        assert entries[1]["dim"] == 3
        assert store.delete(self.KEY)
        assert not store.delete(self.KEY)
        assert len(store.list_entries()) == 1

    @pytest.mark.parametrize("key", ["../escape", "ABCDEF12", "short", ""])
    def test_invalid_keys(self, tmp_path, key):
        with pytest.raises(ValueError):
            ReferenceStore(tmp_path).solution_path(key)


class TestFileHandler:
    def test_json_is_sorted(self, tmp_path):
        path = FileHandler.save_json(tmp_path / "out.json", {"b": 1, "a": 2})
        assert path.read_text().index('"a"') < path.read_text().index('"b"')
        assert FileHandler.load_json(path) == {"a": 2, "b": 1}

    def test_yaml_mapping(self, tmp_path):
        path = FileHandler.save_yaml(tmp_path / "cfg.yaml", {"lambda": 0.01, "errors": "none"})
        assert FileHandler.load_yaml(path) == {"lambda": 0.01, "errors": "none"}

    def test_yaml_empty(self, tmp_path):
        path = tmp_path / "empty.yaml"
        path.write_text("")
        assert FileHandler.load_yaml(path) == {}

    def test_yaml_not_mapping(self, tmp_path):
        path = tmp_path / "list.yaml"
        path.write_text("- 1\n- 2\n")
        with pytest.raises(ValueError):
            FileHandler.load_yaml(path)

    def test_atomic_write_leaves_no_temp(self, tmp_path):
        FileHandler.atomic_write_bytes(tmp_path / "sub" / "data.bin", b"xyz")
        assert [p.name for p in (tmp_path / "sub").iterdir()] == ["data.bin"]

    def test_array_round_trip(self, tmp_path):
        arr = np.arange(5.0)
        np.testing.assert_array_equal(FileHandler.load_array(FileHandler.save_array(tmp_path / "a.npy", arr)), arr)
