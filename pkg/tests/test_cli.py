import json

import pytest

from gallop.cli import dispatch
from gallop.taxonomy import FootfallSequence


@pytest.fixture()
def seq_file(tmp_path):
    seq = FootfallSequence(
        lh_td=0.55, lh_lo=0.80, lf_td=0.10, lf_lo=0.35,
        rf_td=0.00, rf_lo=0.25, rh_td=0.45, rh_lo=0.70)
    path = tmp_path / "seq.json"
    path.write_text(seq.to_json())
    return str(path)


class TestGaitsList:
    def test_fr_filter_lists_eight(self, capsys):
        assert dispatch(["gaits-list", "--leading", "FR"]) == 0
        out = capsys.readouterr().out
        rows = [l for l in out.splitlines() if l.strip() and "name" not in l]
        assert len(rows) == 8
        assert all("-FR" in r for r in rows)

    def test_json_format(self, capsys):
        assert dispatch(["gaits-list", "--format", "json"]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert len(doc["templates"]) == 16

    def test_unknown_flag_rejected(self):
        assert dispatch(["gaits-list", "--bogus"]) == 2


class TestClassify:
    def test_valid_sequence(self, capsys, seq_file):
        assert dispatch(["classify", "--sequence", seq_file, "--format", "json"]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["category"] == "G2"

    def test_not_a_gallop_exits_one(self, tmp_path, capsys):
        seq = FootfallSequence(
            lh_td=0.55, lh_lo=0.80, lf_td=0.10, lf_lo=0.35,
            rf_td=0.10, rf_lo=0.42, rh_td=0.45, rh_lo=0.70)
        path = tmp_path / "bad.json"
        path.write_text(seq.to_json())
        assert dispatch(["classify", "--sequence", str(path)]) == 1
        assert "not a gallop" in capsys.readouterr().err

    def test_missing_file_exits_one(self):
        assert dispatch(["classify", "--sequence", "/nonexistent.json"]) == 1


class TestDiagram:
    def test_renders_text_and_svg(self, tmp_path, capsys):
        out = tmp_path / "art"
        assert dispatch(["diagram", "--gait", "G2-rotary-FR",
                         "--out", str(out)]) == 0
        text = capsys.readouterr().out
        assert text.count("|") >= 8
        assert (out / "gait_diagram.svg").exists()

    def test_sequence_input(self, seq_file, capsys):
        assert dispatch(["diagram", "--sequence", seq_file]) == 0
        assert "flight" in capsys.readouterr().out

    def test_requires_exactly_one_source(self):
        assert dispatch(["diagram"]) == 2


class TestUsage:
    def test_no_verb_is_usage_error(self):
        assert dispatch([]) == 2

    def test_unknown_verb_is_usage_error(self):
        assert dispatch(["fly"]) == 2

    def test_version_exits_zero(self):
        assert dispatch(["--version"]) == 0
