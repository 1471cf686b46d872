import json

from pydefgen.manifest import (
    MANIFEST_NAME,
    RunManifest,
    canonical_json,
    content_hash,
    file_hash,
)


def test_content_hash_matches_git_blob_hash():
    assert content_hash("") == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391"
    assert content_hash("hello\n") == "ce013625030ba8dba906f756967f9e9ca394464a"


def test_canonical_json_sorts_keys():
    assert canonical_json({"b": 1, "a": [1, 2]}) == '{"a":[1,2],"b":1}'


def test_config_hash_ignores_key_order():
    first = RunManifest("train", {"tau": 0.1, "lambda": 0.8}, seed=1)
    second = RunManifest("train", {"lambda": 0.8, "tau": 0.1}, seed=1)

    assert first.config_hash == second.config_hash
    reseeded = RunManifest("train", {"tau": 0.1, "lambda": 0.8}, seed=2)
    assert reseeded.config_hash != first.config_hash


def test_run_name():
    manifest = RunManifest("prepare", {}, seed=0)

    assert manifest.run_name == f"prepare-{manifest.config_hash[:12]}"
    assert len(manifest.run_name) == len("prepare-") + 12


def test_write_and_read(tmp_path):
    manifest = RunManifest("train", {"stage": 1}, seed=0, inputs={"data": "abc"})
    manifest.outputs["checkpoint"] = "def"
    manifest.finish()
    path = manifest.write(tmp_path / "run")

    assert path == tmp_path / "run" / MANIFEST_NAME
    written = json.loads(path.read_text(encoding="utf-8"))
    assert written["outputs"] == {"checkpoint": "def"}
    assert RunManifest.read(tmp_path / "run") == manifest


def test_file_hash(tmp_path):
    path = tmp_path / "blob"
    path.write_bytes(b"")

    assert file_hash(path) == (
        "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
    )
