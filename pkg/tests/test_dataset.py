from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np
import pytest

from asdkit.dataset import (ClipRecord, DatasetManifest, build_eval_set,
                            check_first_shot, check_single_section,
                            load_attributes_csv, apply_attributes,
                            load_manifest, official_layout_violations,
                            parse_clip_name, save_manifest, scan_dataset)
from asdkit.dsp import read_wav
from asdkit.errors import ConfigError, DatasetError
from asdkit.synth import SynthCounts, SynthSpec, synth_generate

from conftest import SMALL_MACHINE


# ---------------------------------------------------------------------------
# filename parsing

def test_parse_full_train_name():
    parsed = parse_clip_name("section_00_source_train_normal_0001_spd_28V.wav")
    assert parsed["section"] == "00"
    assert parsed["domain"] == "source"
    assert parsed["split"] == "train"
    assert parsed["condition"] == "normal"
    assert parsed["index"] == 1
    assert parsed["attributes"] == {"spd": "28V"}


def test_parse_eval_name_without_condition():
    parsed = parse_clip_name("section_00_0042.wav")
    assert parsed["condition"] == "unknown"
    assert parsed["domain"] == "unknown"
    assert parsed["split"] is None
    assert parsed["index"] == 42


def test_parse_rejects_foreign_name():
    with pytest.raises(ValueError):
        parse_clip_name("recording_17.wav")


# ---------------------------------------------------------------------------
# scanning

def make_tree(root: Path, machine: str, names_by_split: dict[str, list[str]]):
    for split, names in names_by_split.items():
        d = root / machine / split
        d.mkdir(parents=True, exist_ok=True)
        for name in names:
            (d / name).touch()


def test_scan_basic_tree(tmp_path):
    make_tree(tmp_path, "fan", {
        "train": ["section_00_source_train_normal_0000.wav",
                  "section_00_target_train_normal_0000.wav"],
        "test": ["section_00_source_test_anomaly_0000.wav",
                 "section_00_0001.wav"],
    })
    manifest = scan_dataset(tmp_path)
    assert manifest.machines() == ["fan"]
    assert len(manifest.records) == 4
    by_name = manifest.by_filename()
    assert by_name["section_00_target_train_normal_0000.wav"].domain == "target"
    # split token missing -> taken from the directory; condition stays unknown
    eval_clip = by_name["section_00_0001.wav"]
    assert eval_clip.split == "test"
    assert eval_clip.condition == "unknown"


def test_scan_collects_skipped_files(tmp_path):
    make_tree(tmp_path, "fan", {"train": ["section_00_source_train_normal_0000.wav",
                                          "garbage_name.wav"]})
    manifest = scan_dataset(tmp_path)
    assert len(manifest.records) == 1
    assert len(manifest.skipped) == 1
    assert manifest.skipped[0][0].endswith("garbage_name.wav")


def test_scan_empty_tree(tmp_path):
    (tmp_path / "fan").mkdir()
    with pytest.raises(DatasetError):
        scan_dataset(tmp_path)


def test_scan_missing_root(tmp_path):
    with pytest.raises(DatasetError):
        scan_dataset(tmp_path / "nope")


def test_official_dev_layout_counts(tmp_path):
    names = {"train": [], "test": []}
    for i in range(990):
        names["train"].append(f"section_00_source_train_normal_{i:04d}.wav")
    for i in range(10):
        names["train"].append(f"section_00_target_train_normal_{i:04d}.wav")
    for i in range(50):
        for domain in ("source", "target"):
            names["test"].append(f"section_00_{domain}_test_normal_{i:04d}.wav")
            names["test"].append(f"section_00_{domain}_test_anomaly_{i:04d}.wav")
    make_tree(tmp_path, "bearing", names)
    manifest = scan_dataset(tmp_path)
    assert official_layout_violations(manifest) == []
    assert len(manifest.select(machine="bearing", split="train")) == 1000
    assert len(manifest.select(machine="bearing", split="test")) == 200


def test_official_layout_violations_reported(small_dataset):
    _, manifest = small_dataset
    problems = official_layout_violations(manifest)
    assert any("source-train" in p for p in problems)


# ---------------------------------------------------------------------------
# record invariants

def test_train_clip_must_be_normal():
    with pytest.raises(DatasetError):
        ClipRecord(machine_type="fan", section="00", domain="source",
                   split="train", condition="anomaly", path="x.wav")


def test_bad_enum_values_rejected():
    with pytest.raises(DatasetError):
        ClipRecord(machine_type="fan", section="00", domain="both",
                   split="train", condition="normal", path="x.wav")


# ---------------------------------------------------------------------------
# attribute CSVs

def test_attributes_merge(tmp_path, small_dataset):
    _, manifest = small_dataset
    target = manifest.records[0]
    csv_path = tmp_path / "attributes_00.csv"
    csv_path.write_text("file_name,k,v\n"
                        f"{target.filename},spd,28V\n")
    attrs = load_attributes_csv(csv_path)
    assert attrs[target.filename] == {"spd": "28V"}
    warnings = apply_attributes(manifest, attrs)
    assert warnings == []
    assert target.attributes["spd"] == "28V"


def test_attributes_empty_csv(tmp_path, small_dataset):
    _, manifest = small_dataset
    csv_path = tmp_path / "empty.csv"
    csv_path.write_text("file_name\n")
    before = [dict(r.attributes) for r in manifest.records]
    warnings = apply_attributes(manifest, load_attributes_csv(csv_path))
    assert warnings == []
    assert [dict(r.attributes) for r in manifest.records] == before


def test_attributes_unknown_clip_warns(tmp_path, small_dataset):
    _, manifest = small_dataset
    csv_path = tmp_path / "attrs.csv"
    csv_path.write_text("file_name,k,v\nghost_clip.wav,spd,28V\n")
    warnings = apply_attributes(manifest, load_attributes_csv(csv_path))
    assert len(warnings) == 1


# ---------------------------------------------------------------------------
# manifest serialization

def test_manifest_roundtrip(tmp_path, small_dataset):
    _, manifest = small_dataset
    path = tmp_path / "manifest.csv"
    save_manifest(manifest, path)
    loaded = load_manifest(path)
    assert loaded.role == manifest.role
    original = sorted(manifest.records, key=lambda r: r.path)
    restored = sorted(loaded.records, key=lambda r: r.path)
    assert len(original) == len(restored)
    for a, b in zip(original, restored):
        assert (a.machine_type, a.section, a.domain, a.split, a.condition,
                a.path, a.attributes) == \
               (b.machine_type, b.section, b.domain, b.split, b.condition,
                b.path, b.attributes)


def test_manifest_load_rejects_missing_columns(tmp_path):
    path = tmp_path / "manifest.csv"
    path.write_text("machine_type,path\nfan,x.wav\n")
    with pytest.raises(DatasetError):
        load_manifest(path)


def test_manifest_load_rejects_duplicates(tmp_path):
    path = tmp_path / "manifest.csv"
    row = "fan,00,source,train,normal,fan/train/a.wav,,development\n"
    path.write_text("machine_type,section,domain,split,condition,path,attributes,role\n"
                    + row + row)
    with pytest.raises(DatasetError):
        load_manifest(path)


# ---------------------------------------------------------------------------
# dataset-level validators

def manifest_with_machines(machines, role="development"):
    records = [ClipRecord(machine_type=m, section="00", domain="source",
                          split="train", condition="normal", path=f"{m}/train/a.wav")
               for m in machines]
    return DatasetManifest(records=records, role=role)


def test_first_shot_validator():
    dev = manifest_with_machines(["fan", "valve"])
    eva = manifest_with_machines(["grinder"], role="evaluation")
    check_first_shot(dev, eva)  # disjoint: fine
    with pytest.raises(DatasetError):
        check_first_shot(dev, manifest_with_machines(["valve"], role="evaluation"))


def test_single_section_validator():
    manifest = manifest_with_machines(["fan"])
    check_single_section(manifest)
    manifest.records.append(ClipRecord(
        machine_type="fan", section="01", domain="source", split="train",
        condition="normal", path="fan/train/b.wav"))
    with pytest.raises(DatasetError):
        check_single_section(manifest)


# ---------------------------------------------------------------------------
# synthetic generator

def tree_digest(root: Path) -> str:
    h = hashlib.sha256()
    for path in sorted(root.rglob("*")):
        if path.is_file():
            h.update(str(path.relative_to(root)).encode())
            h.update(path.read_bytes())
    return h.hexdigest()


def test_synth_deterministic_trees(tmp_path):
    spec = SynthSpec(clip_seconds=0.5, machines=["m1"],
                     counts=SynthCounts(source_train=3, target_train=2,
                                        test_normal_source=1, test_normal_target=1,
                                        test_anomaly_source=1, test_anomaly_target=1,
                                        supplementary=2))
    synth_generate(spec, tmp_path / "a", seed=7)
    synth_generate(spec, tmp_path / "b", seed=7)
    assert tree_digest(tmp_path / "a") == tree_digest(tmp_path / "b")
    synth_generate(spec, tmp_path / "c", seed=8)
    assert tree_digest(tmp_path / "a") != tree_digest(tmp_path / "c")


def test_synth_counts_match_spec(tmp_path):
    spec = SynthSpec(clip_seconds=0.5, machines=["m1"],
                     counts=SynthCounts(source_train=20, target_train=2,
                                        test_normal_source=5, test_normal_target=5,
                                        test_anomaly_source=5, test_anomaly_target=5,
                                        supplementary=0))
    manifest = synth_generate(spec, tmp_path / "d", seed=1)
    assert len(manifest.select(split="train", domain="source")) == 20
    assert len(manifest.select(split="train", domain="target")) == 2
    assert len(manifest.select(split="test", condition="normal")) == 10
    assert len(manifest.select(split="test", condition="anomaly")) == 10


def test_synth_scan_roundtrip(small_dataset):
    root, manifest = small_dataset
    rescanned = scan_dataset(root)
    assert rescanned.skipped == []
    original = {(r.path, r.machine_type, r.section, r.domain, r.split,
                 r.condition, tuple(sorted(r.attributes.items())))
                for r in manifest.records}
    recovered = {(r.path, r.machine_type, r.section, r.domain, r.split,
                  r.condition, tuple(sorted(r.attributes.items())))
                 for r in rescanned.records}
    assert original == recovered


def test_synth_anomalies_have_click_transients(small_dataset):
    root, manifest = small_dataset

    def peak_derivative(rec):
        clip = read_wav(root / rec.path)
        return float(np.max(np.abs(np.diff(clip.samples))))

    normal_peaks = [peak_derivative(r)
                    for r in manifest.select(split="test", condition="normal")]
    anomaly_peaks = [peak_derivative(r)
                     for r in manifest.select(split="test", condition="anomaly")]
    assert min(anomaly_peaks) > max(normal_peaks)


def test_synth_supplementary_clips_tagged(small_dataset):
    _, manifest = small_dataset
    sup = manifest.select(split="supplementary")
    assert len(sup) == 2
    kinds = {r.attributes.get("aux") for r in sup}
    assert kinds == {"clean", "noise"}


def test_synth_invalid_specs():
    with pytest.raises(ConfigError):
        SynthSpec(machines=[]).validate()
    zero = SynthSpec(counts=SynthCounts(source_train=0, target_train=0,
                                        test_normal_source=0, test_normal_target=0,
                                        test_anomaly_source=0, test_anomaly_target=0,
                                        supplementary=0))
    with pytest.raises(ConfigError):
        zero.validate()
    with pytest.raises(ConfigError):
        SynthSpec.from_dict({"nonsense_key": 1})


def test_eval_set_counts(small_dataset):
    _, manifest = small_dataset
    eval_set = build_eval_set(manifest, SMALL_MACHINE, "00")
    assert eval_set.n_normal_source == 5
    assert eval_set.n_normal_target == 5
    assert eval_set.n_normal == 10
    assert eval_set.n_anomaly == 8
    with pytest.raises(DatasetError):
        build_eval_set(manifest, "ghost_machine", "00")
