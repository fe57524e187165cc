import json
import subprocess
import sys

import pytest

from mu3e_filter import config as cfgio
from mu3e_filter.cli import main
from mu3e_filter.cuts import CutConfig
from mu3e_filter.framestore import parse_chunk, read_frames, read_header
from mu3e_filter.toygen import read_truth

CAP = "65536"


def _gen(tmp_path, name, *extra, frames=200):
    out = tmp_path / f"{name}.m3c"
    truth = tmp_path / f"{name}.jsonl"
    argv = ["gen", "--frames", str(frames), "--out", str(out), "--truth", str(truth),
            "--capacity", CAP, *extra]
    assert main(argv) == 0
    return out, truth


def test_gen_is_reproducible(tmp_path, capsys):
    a, ta = _gen(tmp_path, "a", "--seed", "5")
    b, tb = _gen(tmp_path, "b", "--seed", "5")
    assert a.read_bytes() == b.read_bytes()
    assert ta.read_text() == tb.read_text()
    assert "mean Michel decays per frame" in capsys.readouterr().out


def test_gen_zero_frames(tmp_path):
    out, _ = _gen(tmp_path, "z", frames=0)
    assert list(read_frames(out)) == []
    assert read_header(out)["chunks"] == 1


def test_run_writes_outputs(tmp_path, capsys):
    src, truth = _gen(tmp_path, "s", "--seed", "3", "--signal-fraction", "0.2")
    out, rep = tmp_path / "kept.m3c", tmp_path / "r.jsonl"
    argv = ["run", "--in", str(src), "--out", str(out), "--report", str(rep), "--truth", str(truth)]
    assert main(argv) == 0
    table = capsys.readouterr().out
    assert "vertex found" in table and "reduction factor" in table
    lines = [json.loads(x) for x in rep.read_text().splitlines()]
    assert lines[0]["record"] == "summary" and lines[0]["frames_total"] == 200
    assert len(lines) - 1 == lines[0]["frames_kept"] == len(list(read_frames(out)))
    assert lines[0]["config"]["pipeline"]["chunk_capacity"] == int(CAP)


def test_corrupt_input_exit_2(tmp_path, capsys):
    src, _ = _gen(tmp_path, "c", "--seed", "4")
    data = bytearray(src.read_bytes())
    data[int(CAP) - 1] ^= 0x40  # frame count of chunk 0
    src.write_bytes(bytes(data))
    assert main(["run", "--in", str(src), "--out", str(tmp_path / "o.m3c")]) == 2
    assert "chunk 0" in capsys.readouterr().err


def test_usage_errors_exit_1(tmp_path, capsys):
    assert main([]) == 1
    assert main(["run", "--in", str(tmp_path / "missing.m3c"), "--out", "x"]) == 1
    bad = tmp_path / "bad.ini"
    bad.write_text("[cuts]\nnope = 1\n")
    src, _ = _gen(tmp_path, "u")
    assert main(["run", "--config", str(bad), "--in", str(src), "--out", "x"]) == 1
    assert main(["bench", "--workers", "0", "--frames", "1"]) == 1
    assert main(["gen", "--frames", "3", "--out", str(tmp_path / "g"), "--rate", "-5"]) == 1


def test_inspect(tmp_path, capsys):
    clean = tmp_path / "clean.ini"
    clean.write_text("[gen]\nsigma_ms = 0\npixel_sigma = 0\nms_tail_fraction = 0\n")
    src, truth = _gen(
        tmp_path, "i", "--config", str(clean), "--seed", "6", "--signal-fraction", "1",
        "--noise", "0", "--rate", "0", frames=20,
    )
    fid = next(t.frame_id for t in read_truth(truth).values() if t.signal_in_acceptance)
    capsys.readouterr()
    assert main(["inspect", "--in", str(src), "--frame", str(fid), "--truth", str(truth)]) == 0
    out = capsys.readouterr().out
    assert out.count("signal_e") == 3
    assert "decision: keep (vertex_found)" in out
    assert main(["inspect", "--in", str(src), "--frame", "99"]) == 1


def test_inspect_empty_frame(tmp_path, capsys):
    src, _ = _gen(tmp_path, "e", "--rate", "0", "--noise", "0", frames=2)
    capsys.readouterr()
    assert main(["inspect", "--in", str(src), "--frame", "1"]) == 0
    out = capsys.readouterr().out
    assert "hits per layer: 0 0 0 0" in out
    assert "decision: discard (none)" in out


def test_tune_full_retention_gives_vacuous_cuts(tmp_path, capsys):
    src, truth = _gen(tmp_path, "t", "--seed", "7", "--signal-fraction", "0.5")
    out = tmp_path / "tuned.ini"
    assert main(["tune", "--in", str(src), "--truth", str(truth), "--retention", "1.0",
                 "--vertex-retention", "0.9", "--out", str(out)]) == 0
    cfg = cfgio.load(out)
    assert cfg.cuts == CutConfig.vacuous(cfg.cuts.cuts_max)


def test_tune_zero_retention_warns(tmp_path):
    src, truth = _gen(tmp_path, "w", "--seed", "8", "--signal-fraction", "0.5")
    with pytest.warns(UserWarning, match="retention 0"):
        main(["tune", "--in", str(src), "--truth", str(truth), "--retention", "0",
              "--out", str(tmp_path / "t.ini")])


def test_tune_unreachable_exit_3(tmp_path, capsys):
    src, truth = _gen(tmp_path, "x", "--seed", "9", "--signal-fraction", "1")
    strict = tmp_path / "strict.ini"
    strict.write_text("[vertex]\np_total_max = 1e-6\n")
    code = main(["tune", "--config", str(strict), "--in", str(src), "--truth", str(truth),
                 "--vertex-retention", "0.9", "--out", str(tmp_path / "t.ini")])
    assert code == 3
    assert "not reachable" in capsys.readouterr().err
    assert (tmp_path / "t.ini").exists()


def test_bench_json(tmp_path, capsys):
    js = tmp_path / "b.jsonl"
    assert main(["bench", "--frames", "50", "--repeat", "1", "--workers", "1",
                 "--capacity", CAP, "--json", str(js)]) == 0
    row = json.loads(js.read_text())
    assert row["workers"] == [1] and row["median_fps"][0] > 0


def test_module_entry_point(tmp_path):
    out = tmp_path / "m.m3c"
    proc = subprocess.run(
        [sys.executable, "-m", "mu3e_filter.cli", "gen", "--frames", "3", "--out", str(out)],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0, proc.stderr
    blocks = out.read_bytes()
    assert len(parse_chunk(blocks)) == 3
