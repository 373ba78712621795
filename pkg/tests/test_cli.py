import json

import pytest

from ecctlin.cli import EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, main
from ecctlin.codes import load_alist

REG = ["--code", "regular", "--n", "12", "--v", "3", "--c", "6"]


def test_unknown_flag(capsys):
    assert main(["ber", "--decoder", "uncoded", "--bogus"]) == EXIT_USAGE
    err = capsys.readouterr().err
    assert "--bogus" in err and "usage:" in err


def test_missing_subcommand(capsys):
    assert main([]) == EXIT_USAGE


def test_help(capsys):
    assert main(["--help"]) == EXIT_OK


def test_ber_seven_points(tmp_path):
    out = tmp_path / "r.csv"
    argv = ["ber", "--code", "regular", "--n", "26", "--v", "3", "--c", "6", "--decoder", "bp:1",
            "--ebno", "2:1:8", "--seed", "1", "--max-bits", "2e4", "--out", str(out)]
    assert main(argv) == EXIT_OK
    lines = out.read_text().splitlines()
    assert len(lines) == 8
    assert lines[0] == "decoder,n,k,ebno_db,bits,bit_errors,block_errors,ber,bler,seconds,config_hash"


def test_ber_stdout_and_json(capsys):
    assert main(["ber", "--decoder", "uncoded", "--ebno", "4", "--max-bits", "1e4"]) == EXIT_OK
    assert capsys.readouterr().out.startswith("decoder,")
    assert main(["ber", "--decoder", "uncoded", "--ebno", "4", "--max-bits", "1e4", "--format", "json"]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["decoder"] == "uncoded"


def test_no_clock_reproducible(capsys):
    argv = ["ber", *REG, "--decoder", "bp:2", "--ebno", "1,3", "--max-bits", "1e4", "--no-clock"]
    main(argv)
    first = capsys.readouterr().out
    main(argv)
    assert capsys.readouterr().out == first
    assert all(row.split(",")[9] == "0" for row in first.splitlines()[1:])


def test_runtime_errors(tmp_path, capsys):
    assert main(["ber", *REG, "--decoder", str(tmp_path / "missing.ckpt")]) == EXIT_RUNTIME
    assert main(["ber", "--decoder", "bp:1"]) == EXIT_RUNTIME
    assert main(["makecode", "--code", "regular", "--n", "13"]) == EXIT_RUNTIME
    assert "error" in capsys.readouterr().err


def test_code_flag_usage(capsys):
    assert main(["makecode", "--code", "regular"]) == EXIT_USAGE
    assert main(["makecode", "--code", "alist"]) == EXIT_USAGE


def test_makecode_alist_round_trip(tmp_path):
    out = tmp_path / "c.alist"
    assert main(["makecode", *REG, "--out", str(out)]) == EXIT_OK
    pcm = load_alist(out.read_text())
    assert pcm.shape == (6, 12)
    again = tmp_path / "d.alist"
    assert main(["makecode", "--code", "alist", "--alist", str(out), "--out", str(again)]) == EXIT_OK
    assert again.read_text() == out.read_text()


def test_makecode_lifted(tmp_path):
    proto = tmp_path / "p.txt"
    proto.write_text("2 4 3\n0 1 -1 2\n1 -1 0 0\n")
    out = tmp_path / "l.alist"
    assert main(["makecode", "--code", "lifted", "--protograph", str(proto), "--out", str(out)]) == EXIT_OK
    assert load_alist(out.read_text()).shape == (6, 12)


def test_train_then_ber(tmp_path):
    ckpt = tmp_path / "m.ckpt"
    log = tmp_path / "log.csv"
    argv = ["train", *REG, "--attn", "linear", "--dim", "8", "--heads", "2", "--blocks", "1",
            "--iters", "4", "--batch", "8", "--log", str(log), "--out", str(ckpt)]
    assert main(argv) == EXIT_OK
    assert len(log.read_text().splitlines()) == 5
    assert main(["ber", *REG, "--decoder", str(ckpt), "--ebno", "5", "--max-bits", "1200",
                 "--out", str(tmp_path / "r.csv")]) == EXIT_OK
    assert (tmp_path / "r.csv").read_text().splitlines()[1].startswith("transformer-linear,12,")
    # wrong code for this checkpoint
    assert main(["ber", "--code", "regular", "--n", "24", "--decoder", str(ckpt), "--ebno", "5"]) == EXIT_RUNTIME


def test_train_resume(tmp_path):
    common = [*REG, "--dim", "8", "--heads", "2", "--blocks", "1", "--batch", "8", "--iters", "6"]
    whole, part, rest = tmp_path / "w", tmp_path / "p", tmp_path / "r"
    assert main(["train", *common, "--out", str(whole)]) == EXIT_OK
    assert main(["train", *common, "--out", str(part)]) == EXIT_OK
    assert main(["train", *REG, "--resume", str(part), "--out", str(rest)]) == EXIT_OK
    # resuming a finished run is a no-op
    assert rest.read_bytes() == whole.read_bytes()


def test_timing_attention_only(tmp_path):
    out = tmp_path / "t.json"
    assert main(["timing", "--attention-only", "--sizes", "16,32", "--fixed-k", "4", "--batch", "1",
                 "--out", str(out)]) == EXIT_OK
    data = json.loads(out.read_text())
    assert set(data["slopes"]) == {"standard", "linear"}


@pytest.mark.slow
def test_gradcheck(capsys):
    assert main(["gradcheck"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "worst" in out and "FAIL" not in out
