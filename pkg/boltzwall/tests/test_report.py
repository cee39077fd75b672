import json
import os

import pytest
from freezegun import freeze_time

from boltzwall.__about__ import __version__
from boltzwall.models import Trend
from boltzwall.report import (
    NORMS_FILE,
    SUMMARY_FILE,
    VERIFY_FILE,
    read_norms,
    read_verify,
    rebuild_summary,
    summary_lines,
    write_artifacts,
    write_norms,
)

from .factories import LemmaCheckFactory, RunConfigFactory, decaying_series


@freeze_time("2026-03-01 12:30:00")
def test_summary_lines():
    checks = [
        LemmaCheckFactory(lemma_id="tb_bound", elapsed=1.25),
        LemmaCheckFactory(lemma_id="chi_cutoff", passed=False, elapsed=0.5),
    ]
    lines = summary_lines(checks, "abc123", 4, 2, "verify")
    assert lines[0] == f"boltzwall {__version__}"
    assert "config: abc123" in lines
    assert "generated: 2026-03-01T12:30:00Z" in lines
    assert lines[-3] == "FAIL  chi_cutoff      0.50s"
    assert lines[-1] == "1/2 checks passed"


def test_summary_without_timings():
    lines = summary_lines([LemmaCheckFactory(lemma_id="wall_flux")], "abc", 0, 1, "steady", elapsed=False)
    assert lines[-3] == "PASS  wall_flux         -"


def test_norms_file(tmp_path):
    series = decaying_series(0.4, horizon=2.0)
    series.decay_rate, series.decay_r2, series.decay_band = 0.4, 0.999, 0.001
    path = tmp_path / NORMS_FILE
    write_norms(path, series, "deadbeef", 3)
    with open(path, encoding="utf-8") as norms_file:
        first = norms_file.readline()
    assert first.startswith("# boltzwall norms schema=1")
    header, restored = read_norms(path)
    assert header["config"] == "deadbeef"
    assert header["seed"] == "3"
    assert len(restored) == len(series)
    assert restored.sup_wf[-1] == pytest.approx(series.sup_wf[-1], rel=1e-11)
    assert restored.decay_rate == pytest.approx(0.4)


def test_norms_file_rejects_other_columns(tmp_path):
    path = tmp_path / NORMS_FILE
    path.write_text("t,a,b\n0,1,2\n", encoding="utf-8")
    with pytest.raises(ValueError):
        read_norms(path)


class TestArtifacts:
    @freeze_time("2026-03-01")
    def test_write_and_rebuild(self, tmp_path):
        config = RunConfigFactory()
        checks = [
            LemmaCheckFactory(lemma_id="w1p_singular_integral[p=3.5]", trend=Trend.DIVERGING),
            LemmaCheckFactory(lemma_id="exit_oracle", trend=None, values=[float("nan")], passed=False),
        ]
        out_dir = str(tmp_path / "out")
        write_artifacts(out_dir, config, "verify", checks, decaying_series())
        assert sorted(os.listdir(out_dir)) == [NORMS_FILE, SUMMARY_FILE, VERIFY_FILE]

        with open(os.path.join(out_dir, VERIFY_FILE), encoding="utf-8") as verify_file:
            text = verify_file.read()
        document = json.loads(text)
        assert list(document) == sorted(document)
        assert document["config_hash"] == config.config_hash
        assert document["lemmas"][1]["values"] == ["nan"]
        assert "elapsed" not in text

        meta, restored = read_verify(os.path.join(out_dir, VERIFY_FILE))
        assert meta["seed"] == config.seed
        assert [check.lemma_id for check in restored] == [check.lemma_id for check in checks]

        rebuilt = rebuild_summary(out_dir)
        assert len(rebuilt) == 2
        with open(os.path.join(out_dir, SUMMARY_FILE), encoding="utf-8") as summary_file:
            summary = summary_file.read()
        assert "generated: 2026-03-01T00:00:00Z" in summary
        assert "1/2 checks passed" in summary

    def test_verify_file_is_reproducible(self, tmp_path):
        config = RunConfigFactory()
        for name in ("first", "second"):
            checks = [LemmaCheckFactory(lemma_id="chi_cutoff", elapsed=float(len(name)))]
            write_artifacts(str(tmp_path / name), config, "verify", checks)
        first = (tmp_path / "first" / VERIFY_FILE).read_text(encoding="utf-8")
        second = (tmp_path / "second" / VERIFY_FILE).read_text(encoding="utf-8")
        assert first == second

    def test_rebuild_needs_verify_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            rebuild_summary(str(tmp_path))
