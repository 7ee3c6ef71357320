"""Scenario schema validation and error reporting."""

import json

import pytest

from fedfreeze.scenario import (Scenario, ScenarioError, default_scenario,
                                parse_scenario_text)


def as_text(sc: Scenario, **mutations) -> str:
    raw = sc.model_dump(mode="json")
    raw.update(mutations)
    return json.dumps(raw, indent=2)


class TestParsing:
    def test_default_round_trips(self):
        sc = default_scenario()
        again = parse_scenario_text(as_text(sc))
        assert again == sc

    def test_unknown_key_rejected_with_line(self):
        text = as_text(default_scenario(), zzz_not_a_field=1)
        with pytest.raises(ScenarioError) as exc:
            parse_scenario_text(text, name="scn.json")
        msg = str(exc.value)
        line = int(msg.split(":")[1])
        assert text.split("\n")[line - 1].strip().startswith('"zzz_not_a_field"')

    def test_bad_json_reports_line(self):
        with pytest.raises(ScenarioError) as exc:
            parse_scenario_text('{\n  "topology": ,\n}', name="scn.json")
        assert "scn.json:2" in str(exc.value)

    def test_fraction_sum_rejected(self):
        sc = default_scenario()
        raw = sc.model_dump(mode="json")
        raw["device_classes"][0]["fraction"] = 0.9
        with pytest.raises(ScenarioError) as exc:
            parse_scenario_text(json.dumps(raw))
        assert "sum to 1" in str(exc.value)

    def test_negative_learning_rate_rejected(self):
        text = as_text(default_scenario(), learning_rate=-0.1)
        with pytest.raises(ScenarioError):
            parse_scenario_text(text)

    def test_idx_dataset_variant(self):
        text = as_text(default_scenario(), dataset={
            "kind": "idx_files",
            "train_images": "a", "train_labels": "b",
            "test_images": "c", "test_labels": "d"})
        sc = parse_scenario_text(text)
        assert sc.dataset.kind == "idx_files"

    def test_both_budget_forms_rejected(self):
        raw = default_scenario().model_dump(mode="json")
        raw["device_classes"][0]["upload_budget_bytes"] = 100
        raw["device_classes"][0]["upload_budget_range"] = [10, 20]
        with pytest.raises(ScenarioError):
            parse_scenario_text(json.dumps(raw))

    def test_shards_exceeding_dataset_rejected(self):
        raw = default_scenario().model_dump(mode="json")
        raw["dataset"]["train_samples"] = 100
        with pytest.raises(ScenarioError) as exc:
            parse_scenario_text(json.dumps(raw))
        assert "train_samples" in str(exc.value)
