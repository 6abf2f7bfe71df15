import json

import pytest

from conftest import SCHEMA_DIR

fedshadow = pytest.importorskip("fedshadow")
jsonschema = pytest.importorskip("jsonschema")


@pytest.mark.parametrize("path", sorted(SCHEMA_DIR.glob("*.schema.json")), ids=lambda p: p.name)
def test_schema_is_well_formed(path):
    schema = json.loads(path.read_text())
    jsonschema.validators.validator_for(schema).check_schema(schema)
    assert schema["$id"].endswith("/" + path.name)


def test_configs_and_scenarios_validate(validate):
    validate("config.schema.json", fedshadow.default_config())
    catalog = fedshadow.scenarios()
    validate("scenarios.schema.json", catalog)
    for entry in catalog:
        validate("config.schema.json", entry["config"])


def test_invalid_config_is_rejected(validate):
    config = fedshadow.default_config()
    config["participants_per_round"] = "five"
    with pytest.raises(jsonschema.ValidationError):
        validate("config.schema.json", config)


def test_store_documents_validate(tmp_path, small_config, validate):
    run_id = fedshadow.simulate_to_store(small_config, tmp_path, run_id="run-schema-01")
    run_dir = tmp_path / run_id
    validate("config.schema.json", json.loads((run_dir / "config.json").read_text()))
    validate("status.schema.json", json.loads((run_dir / "status.json").read_text()))
    for line in (run_dir / "rounds.jsonl").read_text().splitlines():
        validate("round.schema.json", json.loads(line))
