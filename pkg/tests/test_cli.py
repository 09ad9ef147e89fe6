"""End-to-end CLI tests over a tiny generated corpus.

The heavy artifacts (collages, features, archive) are built once per
session in a module fixture chain and shared across assertions.
"""

import json
from pathlib import Path

import pytest

from splice.barcode import load_archive
from splice.cli import run
from splice.embedding import ingest_external_features
from splice.splice_core import load_collages


@pytest.fixture(scope="module")
def workdir(tmp_path_factory, tiny_corpus):
    """Run the whole pipeline once: splice -> embed -> index."""
    d = tmp_path_factory.mktemp("cli")
    collages = d / "collages.json"
    features = d / "features.csv"
    archive = d / "archive.bin"
    assert run(["splice", "--manifest", str(tiny_corpus), "--out", str(collages)]) == 0
    assert run([
        "embed", "--method", "histogram", "--manifest", str(tiny_corpus),
        "--selection", str(collages), "--out", str(features),
    ]) == 0
    assert run([
        "index", "build", "--features", str(features),
        "--manifest", str(tiny_corpus), "--out", str(archive),
    ]) == 0
    return {"dir": d, "manifest": tiny_corpus, "collages": collages,
            "features": features, "archive": archive}


class TestUsageErrors:
    def test_no_subcommand(self):
        assert run([]) == 1

    def test_unknown_subcommand(self):
        assert run(["frobnicate"]) == 1

    def test_missing_required_flag(self):
        assert run(["splice", "--out", "x.json"]) == 1

    def test_bare_index_is_usage_error(self):
        assert run(["index"]) == 1

    def test_bare_synth_is_usage_error(self):
        assert run(["synth"]) == 1

    def test_bare_eval_is_usage_error(self):
        assert run(["eval"]) == 1


class TestDataErrors:
    def test_missing_manifest_file(self, tmp_path):
        code = run(["splice", "--manifest", str(tmp_path / "nope.csv"),
                    "--out", str(tmp_path / "c.json")])
        assert code == 2

    def test_corrupt_archive(self, tmp_path):
        bad = tmp_path / "bad.bin"
        bad.write_bytes(b"not an archive")
        assert run(["search", "--archive", str(bad), "--query", "x"]) == 2

    def test_embed_external_requires_features(self, tmp_path):
        assert run(["embed", "--method", "external",
                    "--out", str(tmp_path / "f.csv")]) == 2


class TestSynthCommand:
    def test_generate_writes_manifest(self, tmp_path, capsys):
        out = tmp_path / "corpus"
        code = run(["synth", "generate", "--out", str(out),
                    "--per-class", "2", "--image-size", "128", "--seed", "4"])
        assert code == 0
        printed = capsys.readouterr().out.strip()
        assert Path(printed) == out / "manifest.csv"
        assert (out / "manifest.csv").exists()


class TestSegmentCommand:
    def test_writes_one_mask_per_image(self, tmp_path, tiny_corpus):
        out = tmp_path / "masks"
        assert run(["segment", "--manifest", str(tiny_corpus), "--out", str(out)]) == 0
        assert len(list(out.glob("*_mask.png"))) == 6


class TestPipelineArtifacts:
    def test_collages_cover_manifest(self, workdir):
        collages = load_collages(workdir["collages"])
        assert len(collages) == 6
        assert all(c.entries for c in collages)

    def test_features_reference_collage_patches(self, workdir):
        features = ingest_external_features(workdir["features"])
        collaged = {(c.wsi_id, e.patch.x0, e.patch.y0)
                    for c in load_collages(workdir["collages"]) for e in c.entries}
        assert features
        for fv in features:
            assert (fv.wsi_id, fv.patch.x0, fv.patch.y0) in collaged

    def test_archive_contents(self, workdir):
        archive = load_archive(workdir["archive"])
        assert len(archive.sets) == 6
        labels = {s.label for s in archive.sets}
        assert labels == {"eosin", "hematoxylin", "stroma"}

    def test_search_output(self, workdir, capsys):
        archive = load_archive(workdir["archive"])
        query = archive.sets[0].wsi_id
        code = run(["search", "--archive", str(workdir["archive"]),
                    "--query", query, "--top", "3", "--exclude-self"])
        assert code == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert len(lines) == 3
        for line in lines:
            wsi_id, label, dist = line.split("\t")
            assert wsi_id != query
            assert float(dist) >= 0

    def test_mosaic_command(self, workdir, tmp_path):
        out = tmp_path / "mosaics.json"
        code = run(["mosaic", "--manifest", str(workdir["manifest"]),
                    "--out", str(out), "--seed", "3"])
        assert code == 0
        assert out.exists()


class TestEvalCommand:
    def test_report_and_csv_twin(self, workdir, tmp_path):
        report = tmp_path / "report.json"
        code = run(["eval", "loo", "--manifest", str(workdir["manifest"]),
                    "--method", "splice", "--top", "1,3", "--report", str(report)])
        assert code == 0
        data = json.loads(report.read_text())
        assert data["method"] == "splice"
        assert set(data["metrics"]) == {"1", "3"}
        assert data["accounting"]["n_patches"] > 0
        csv_twin = report.with_suffix(".csv")
        lines = csv_twin.read_text().splitlines()
        assert lines[0].startswith("method,n_patches,")
        assert len(lines) == 3

    def test_reports_reproducible(self, workdir, tmp_path):
        paths = [tmp_path / "r1.json", tmp_path / "r2.json"]
        for p in paths:
            assert run(["eval", "loo", "--manifest", str(workdir["manifest"]),
                        "--method", "mosaic", "--seed", "5", "--top", "1",
                        "--report", str(p)]) == 0

        def stripped(p):
            d = json.loads(p.read_text())
            d["accounting"].pop("search_seconds")
            return d

        assert stripped(paths[0]) == stripped(paths[1])


class TestConfigPrecedence:
    def test_config_file_overrides_default(self, tmp_path, workdir):
        cfg = tmp_path / "opts.cfg"
        cfg.write_text("percentile = 50  # tighter selection\n")
        out_default = tmp_path / "c_default.json"
        out_cfg = tmp_path / "c_cfg.json"
        assert run(["splice", "--manifest", str(workdir["manifest"]),
                    "--out", str(out_default)]) == 0
        assert run(["splice", "--manifest", str(workdir["manifest"]),
                    "--out", str(out_cfg), "--config", str(cfg)]) == 0
        assert load_collages(out_cfg)[0].config.percentile_k == 50.0
        assert load_collages(out_default)[0].config.percentile_k == 30.0

    def test_flag_overrides_config_file(self, tmp_path, workdir):
        cfg = tmp_path / "opts.cfg"
        cfg.write_text("percentile=50\n")
        out = tmp_path / "c_flag.json"
        assert run(["splice", "--manifest", str(workdir["manifest"]),
                    "--out", str(out), "--config", str(cfg),
                    "--percentile", "20"]) == 0
        assert load_collages(out)[0].config.percentile_k == 20.0

    def test_bad_config_line_is_data_error(self, tmp_path, workdir):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("this is not a key value pair\n")
        assert run(["splice", "--manifest", str(workdir["manifest"]),
                    "--out", str(tmp_path / "x.json"), "--config", str(cfg)]) == 2
