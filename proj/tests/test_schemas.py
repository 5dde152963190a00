import json
import os
import subprocess
from pathlib import Path

import jsonschema
import pytest

BIN = os.environ["STVIT_BIN"]
SCHEMAS = Path(os.environ["STVIT_SCHEMAS"])
FIXTURE = Path(os.environ["STVIT_FIXTURE_DIR"])


def schema(name):
    return json.loads((SCHEMAS / f"{name}.schema.json").read_text())


def validate(path, name):
    jsonschema.Draft202012Validator(schema(name)).validate(json.loads(Path(path).read_text()))


def stvit(*args):
    return subprocess.run([BIN, *map(str, args)], check=True, capture_output=True, text=True).stdout


@pytest.mark.parametrize("name", [p.stem.removesuffix(".schema") for p in sorted(Path(SCHEMAS).glob("*.json"))])
def test_schemas_are_valid(name):
    jsonschema.Draft202012Validator.check_schema(schema(name))


def test_presets_validate():
    names = stvit("presets").split()
    assert "deit-s-16" in names
    for name in names:
        doc = json.loads(stvit("presets", "--show", name))
        jsonschema.validate(doc, schema("model_config"))


def test_fixture_validates():
    validate(FIXTURE / "config.json", "model_config")
    validate(FIXTURE / "weights" / "manifest.json", "weights_manifest")
    validate(FIXTURE / "trace.json", "trace")


def test_forward_outputs(tmp_path):
    out = tmp_path / "fwd"
    stvit("forward", "--config", FIXTURE / "config.json", "--weights", FIXTURE / "weights", "--seed", 7,
          "--export-attention", "--timings", "--out", out)
    validate(out / "trace.json", "trace")
    validate(out / "manifest.json", "run_manifest")
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["weights_hash"] is not None


def test_local_forward_trace(tmp_path):
    out = tmp_path / "local"
    stvit("forward", "--preset", "stvit-swin-tiny", "--seed", 1, "--out", out)
    validate(out / "trace.json", "trace")


def test_flops_outputs(tmp_path):
    out = tmp_path / "flops"
    stvit("flops", "--preset", "stvit-r-swin-s", "--out", out)
    validate(out / "flops.json", "flops_report")
    validate(out / "manifest.json", "run_manifest")


def test_recover_outputs(tmp_path):
    out = tmp_path / "rec"
    stvit("recover", "--samples", 100, "--seeds", 3, "--out", out)
    validate(out / "recovery.json", "recovery_report")
    validate(out / "manifest.json", "run_manifest")
    stvit("recover", "-K", 4, "-d", 8, "--samples", 50, "--init", "random", "--updates", 2, "--out", out)
    validate(out / "recovery.json", "recovery_report")


def test_init_weights_and_bench(tmp_path):
    weights = tmp_path / "w"
    stvit("init-weights", "--preset", "stvit-r-tiny", "--seed", 3, "--f32", "--out", weights)
    validate(weights / "manifest.json", "weights_manifest")
    validate(weights / "config.json", "model_config")
    out = tmp_path / "bench"
    stvit("bench", "--preset-a", "stvit-tiny", "--preset-b", "stvit-tiny", "--repeats", 3, "--out", out)
    validate(out / "manifest.json", "run_manifest")
