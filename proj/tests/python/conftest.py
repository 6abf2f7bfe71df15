import json
import os
import pathlib

import pytest

SCHEMA_DIR = pathlib.Path(os.environ.get("FEDSHADOW_SCHEMA_DIR", pathlib.Path(__file__).resolve().parents[2] / "schemas"))
BASE = "https://fedshadow.invalid/schemas/"


@pytest.fixture(scope="session")
def validate():
    jsonschema = pytest.importorskip("jsonschema")
    referencing = pytest.importorskip("referencing")
    resources = []
    for path in sorted(SCHEMA_DIR.glob("*.schema.json")):
        doc = json.loads(path.read_text())
        resources.append((BASE + path.name, referencing.Resource.from_contents(doc)))
    registry = referencing.Registry().with_resources(resources)

    def check(schema_name, instance):
        schema = registry.contents(BASE + schema_name)
        cls = jsonschema.validators.validator_for(schema)
        cls(schema, registry=registry).validate(instance)

    return check


@pytest.fixture()
def small_config():
    fedshadow = pytest.importorskip("fedshadow")
    config = fedshadow.default_config()
    config.update(n_clients=10, participants_per_round=4, n_rounds=6, master_seed=3)
    config["data_spec"].update(n_classes=4, n_features=8, samples_per_class=60)
    config["train_spec"]["hidden_width"] = 8
    config["attack"] = {
        "victim_class": 1,
        "target_class": 3,
        "n_malicious": 3,
        "window": [1, 6],
        "availability_bias": 0.6,
    }
    return config
