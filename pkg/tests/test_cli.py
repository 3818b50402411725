import json
import subprocess
import sys
from pathlib import Path

import pytest

from xleditor.cli import main

GOLDEN = Path(__file__).parent / "golden"

SMALL = ["--set", "model.n_layers=1", "--set", "model.d_model=16", "--set", "model.n_heads=2",
         "--set", "model.d_ff=32", "--set", "train.steps=4", "--set", "train.batch_size=4",
         "--set", "train.log_every=2"]


def run(capsys, *argv, stdin=None, monkeypatch=None):
    if stdin is not None:
        import io
        monkeypatch.setattr(sys, "stdin", io.StringIO(stdin))
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_help_matches_golden(capsys, monkeypatch):
    monkeypatch.setenv("COLUMNS", "100")
    code, out, _ = run(capsys, "--help")
    assert code == 0
    assert out == (GOLDEN / "help.txt").read_text()


def test_inspect_offsets(capsys):
    code, out, _ = run(capsys, "inspect-offsets", "--len", "6", "--a", "2", "--b", "5")
    assert code == 0
    rows = [ln.split() for ln in out.splitlines()]
    assert rows[3][1:] == ["+2", "+1", "+0", ".", ".", "-2"]
    code, _, err = run(capsys, "inspect-offsets", "--len", "3", "--a", "3", "--b", "2")
    assert code == 1 and "invalid span layout" in err


def test_usage_errors_exit_1(capsys):
    assert run(capsys)[0] == 1
    assert run(capsys, "frobnicate")[0] == 1
    assert run(capsys, "train", "--steps", "3")[0] == 1
    assert run(capsys, "train")[0] == 1  # no corpus given


def test_bad_log_level(capsys, monkeypatch):
    monkeypatch.setenv("XLEDIT_LOG", "chatty")
    code, _, err = run(capsys, "inspect-offsets", "--len", "2", "--a", "1", "--b", "1")
    assert code == 1 and "XLEDIT_LOG" in err


def test_data_errors_exit_2(capsys, tmp_path):
    assert run(capsys, "train", "--corpus", str(tmp_path / "none.txt"), "--checkpoint", str(tmp_path / "m"))[0] == 2
    (tmp_path / "c.txt").write_text("a b c\n")
    code, _, err = run(capsys, "train", "--corpus", str(tmp_path / "c.txt"), "--checkpoint",
                       str(tmp_path / "m"), "--set", "model.nope=3")
    assert code == 2 and "model.nope" in err
    (tmp_path / "junk.ckpt").write_bytes(b"junk")
    assert run(capsys, "eval", "--checkpoint", str(tmp_path / "junk.ckpt"), "--tasks", str(tmp_path / "c.txt"))[0] == 2
    assert run(capsys, "eval", "--checkpoint", str(tmp_path / "missing.ckpt"),
               "--tasks", str(tmp_path / "c.txt"))[0] == 2


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["gen-corpus", "--kind", "cycle", "--n", "30", "--seed", "1", "--min-sents", "5",
                 "--max-sents", "5", "--out", str(d / "cyc.txt")]) == 0
    assert main(["gen-corpus", "--kind", "lexicon", "--n", "20", "--seed", "1", "--out", str(d / "lex.tsv"),
                 "--references", str(d / "lex_ref.txt")]) == 0
    for tag in ("a", "b"):
        assert main(["train", "--corpus", str(d / "cyc.txt"), "--checkpoint", str(d / f"{tag}.ckpt"),
                     "--metrics", str(d / f"{tag}.jsonl"), "--seed", "5", *SMALL]) == 0
    assert main(["train", "--corpus", str(d / "lex.tsv"), "--styled", "--checkpoint", str(d / "sty.ckpt"),
                 "--seed", "5", *SMALL]) == 0
    return d


def test_train_is_byte_identical(workdir):
    assert (workdir / "a.jsonl").read_bytes() == (workdir / "b.jsonl").read_bytes()
    assert (workdir / "a.ckpt").read_bytes() == (workdir / "b.ckpt").read_bytes()
    recs = [json.loads(ln) for ln in (workdir / "a.jsonl").read_text().splitlines()]
    assert [r["step"] for r in recs] == [2, 4]


@pytest.mark.parametrize("kind", ["locate", "delete", "infill"])
def test_gen_tasks_then_eval(capsys, workdir, kind):
    tasks = workdir / f"{kind}.jsonl"
    assert main(["gen-tasks", "--corpus", str(workdir / "cyc.txt"), "--kind", kind, "--n", "6",
                 "--out", str(tasks), "--seed", "2"]) == 0
    metrics = workdir / f"{kind}_m.json"
    code, out, _ = run(capsys, "eval", "--checkpoint", str(workdir / "a.ckpt"), "--tasks", str(tasks),
                       "--out", str(metrics))
    assert code == 0
    rep = json.loads(out)
    assert rep["kind"] == kind and rep["n_instances"] == 6
    assert metrics.read_text() == out
    run(capsys, "eval", "--checkpoint", str(workdir / "a.ckpt"), "--tasks", str(tasks), "--out",
        str(workdir / "again.json"))
    assert (workdir / "again.json").read_bytes() == metrics.read_bytes()


def test_transfer_identity_and_trace(capsys, workdir):
    src = workdir / "lex_in.txt"
    src.write_text("".join(ln.split("\t", 1)[1] for ln in (workdir / "lex.tsv").read_text().splitlines(True)[:4]))
    out1, tr1 = workdir / "o1.txt", workdir / "t1.jsonl"
    assert main(["transfer", "--checkpoint", str(workdir / "sty.ckpt"), "--src-style", "0", "--tgt-style", "1",
                 "--v-thres", "1e9", "--input", str(src), "--output", str(out1), "--trace", str(tr1)]) == 0
    assert out1.read_text() == src.read_text()
    assert tr1.read_text() == ""
    args = ["transfer", "--checkpoint", str(workdir / "sty.ckpt"), "--src-style", "0", "--tgt-style", "1",
            "--v-thres", "0.5", "--set", "transfer.max_iters=2", "--input", str(src)]
    assert main(args + ["--output", str(workdir / "o2.txt"), "--trace", str(workdir / "t2.jsonl")]) == 0
    assert main(args + ["--output", str(workdir / "o3.txt"), "--trace", str(workdir / "t3.jsonl")]) == 0
    assert (workdir / "o2.txt").read_bytes() == (workdir / "o3.txt").read_bytes()
    assert (workdir / "t2.jsonl").read_bytes() == (workdir / "t3.jsonl").read_bytes()
    assert run(capsys, *args[:3], "--src-style", "0", "--tgt-style", "7", "--input", str(src))[0] == 2


def test_transfer_tasks_eval_copy(capsys, workdir):
    tasks = workdir / "tr.jsonl"
    assert main(["gen-tasks", "--corpus", str(workdir / "lex.tsv"), "--styled", "--kind", "transfer", "--n", "5",
                 "--references", str(workdir / "lex_ref.txt"), "--out", str(tasks)]) == 0
    code, out, _ = run(capsys, "eval", "--mode", "copy", "--classifier", str(workdir / "sty.ckpt"),
                       "--tasks", str(tasks))
    assert code == 0 and json.loads(out)["mean_edits"] == 0


def test_edit_ops(capsys, monkeypatch, workdir):
    ck = str(workdir / "a.ckpt")
    line = (workdir / "cyc.txt").read_text().splitlines()[0]
    words = line.split()
    code, out, _ = run(capsys, "edit", "--checkpoint", ck, "--op", "locate", stdin=line + "\n", monkeypatch=monkeypatch)
    assert code == 0 and 0 <= int(out) <= len(words)
    code, out, _ = run(capsys, "edit", "--checkpoint", ck, "--op", "delete", "--i", "1", "--j", "2",
                       stdin=line + "\n", monkeypatch=monkeypatch)
    assert out.split() == words[2:]
    code, out, _ = run(capsys, "edit", "--checkpoint", ck, "--op", "replace", "--i", "1", "--j", "1",
                       "--y", words[0], stdin=line + "\n", monkeypatch=monkeypatch)
    text, odds = out.rstrip("\n").split("\t")
    assert text == line and float(odds) == 1.0
    code, out, _ = run(capsys, "edit", "--checkpoint", ck, "--op", "infill", "--i", "1",
                       stdin=line + "\n", monkeypatch=monkeypatch)
    assert code == 0 and out.split()[0] == words[0]
    code, _, _ = run(capsys, "edit", "--checkpoint", ck, "--op", "replace", stdin=line + "\n",
                     monkeypatch=monkeypatch)
    assert code == 1


def test_info_logging_goes_to_stderr(tmp_path):
    (tmp_path / "c.txt").write_text("a b c d\nb c d a\n")
    cmd = [sys.executable, "-m", "xleditor", "train", "--corpus", str(tmp_path / "c.txt"),
           "--checkpoint", str(tmp_path / "m.ckpt"), *SMALL]
    quiet = subprocess.run(cmd, capture_output=True, text=True, env={"PATH": "", "XLEDIT_LOG": "error"})
    loud = subprocess.run(cmd, capture_output=True, text=True, env={"PATH": "", "XLEDIT_LOG": "info"})
    assert quiet.returncode == loud.returncode == 0
    assert quiet.stderr == "" and quiet.stdout == ""
    assert "ins_nll" in loud.stderr
