import json
import subprocess
import sys

import pytest

from nl2code import cli
from nl2code import corpus as C
from nl2code import synthetic
from nl2code.errors import ConfigurationError

SMALL = ["--model.d_model", "16", "--model.n_heads", "2", "--model.n_encoder_layers", "1",
         "--model.n_decoder_layers", "1", "--model.d_ff", "32", "--model.max_len", "24",
         "--model.dropout", "0.0", "--tokenizer.kind", "rule_code", "--train.batch_size", "8",
         "--train.valid_bleu", "false"]


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    C.export(synthetic.labeled_set(40, seed=0), str(d / "train.json"))
    C.export(synthetic.labeled_set(10, seed=1), str(d / "valid.json"))
    return d


@pytest.fixture(scope="module")
def run_dir(data):
    out = data / "run"
    code = cli.main(["train", "--out", str(out), "--seed", "3", "--data.train", str(data / "train.json"),
                     "--data.valid", str(data / "valid.json"), "--train.epochs", "2"] + SMALL)
    assert code == 0
    return out


def test_overrides_and_unknown_keys():
    over = cli.parse_overrides(["--train.lr", "0.01", "--decode.strategy=greedy", "--model.d_model", "32"])
    assert over == {"train": {"lr": 0.01}, "decode": {"strategy": "greedy"}, "model": {"d_model": 32}}
    cfg = cli.resolve_config(None, over, seed=7)
    assert cfg["train"]["seed"] == 7 and cfg["decode"]["seed"] == 7 and cfg["train"]["lr"] == 0.01
    with pytest.raises(ConfigurationError):
        cli.resolve_config(None, {"train": {"nope": 1}})


def test_train_writes_run(run_dir):
    for name in ("model.nlcf", "src_tokenizer.json", "tgt_tokenizer.json", "history.json", "config.json"):
        assert (run_dir / name).exists()
    assert len(json.loads((run_dir / "history.json").read_text())) == 2


def test_translate_one_line_per_input_and_deterministic(run_dir, tmp_path):
    inp = tmp_path / "in.txt"
    inp.write_text("sort list x\nprint y\nget length of items\n")
    outs = []
    for i in range(2):
        o = tmp_path / f"out{i}.jsonl"
        assert cli.main(["translate", "--checkpoint", str(run_dir), "--input", str(inp), "--out", str(o),
                         "--decode.beam_size", "3", "--decode.num_return_sequences", "2",
                         "--decode.max_length", "8"]) == 0
        outs.append(o.read_bytes())
    assert outs[0] == outs[1]
    rows = [json.loads(line) for line in outs[0].decode().splitlines()]
    assert len(rows) == 3 and all(len(r["candidates"]) == 2 for r in rows)
    assert rows[0]["source"] == "sort list x"


def test_finetune_from_run(run_dir, data, tmp_path):
    out = tmp_path / "ft"
    assert cli.main(["finetune", "--init", str(run_dir), "--out", str(out), "--data.train",
                     str(data / "valid.json"), "--train.epochs", "1"] + SMALL) == 0
    assert (out / "model.nlcf").exists()


def test_eval_and_bootstrap(tmp_path, capsys):
    h = tmp_path / "h.txt"
    r = tmp_path / "r.txt"
    h.write_text("len(s)\nx = 1 +\n")
    r.write_text("len(s)\nx = 1\n")
    assert cli.main(["eval", "--hyps", str(h), "--refs", str(r)]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["parsable_count"] == 1 and sum(rep["sentence_bleu_histogram"]["bins"]) == 2
    assert cli.main(["bootstrap", "--hyps-a", str(h), "--hyps-b", str(h), "--refs", str(r),
                     "--samples", "200"]) == 0
    res = json.loads(capsys.readouterr().out)
    assert res["ties"] == 200 and res["win_ratio_a"] == 0.0


def test_augment_command(run_dir, data, tmp_path):
    out = tmp_path / "aug"
    assert cli.main(["augment", "--base", str(data / "valid.json"), "--intent-model", str(run_dir),
                     "--rewritten-model", str(run_dir), "--out", str(out),
                     "--decode.max_length", "8"]) == 0
    merged = C.load_labeled(str(out / "assembled.json"))
    assert len(merged) <= 3 * 10 and len(merged) >= 10
    assert (out / "intent_top1.json").exists()


def test_fill_mask(data, tmp_path, capsys):
    out = tmp_path / "mlm"
    assert cli.main(["train", "--out", str(out), "--data.train", str(data / "train.json"),
                     "--train.objective", "mlm", "--train.epochs", "1"] + SMALL) == 0
    capsys.readouterr()
    assert cli.main(["fill-mask", "--checkpoint", str(out), "--text", "<mask> os", "--top-k", "3"]) == 0
    ranked = json.loads(capsys.readouterr().out)
    assert len(ranked) == 3
    probs = [x["probability"] for x in ranked]
    assert probs == sorted(probs, reverse=True)
    assert cli.main(["fill-mask", "--checkpoint", str(out), "--text", "no marker"]) == 2


def test_exit_codes(tmp_path, capsys):
    assert cli.main(["train", "--train.bogus", "1"]) == 2
    err = capsys.readouterr().err.strip().splitlines()[-1]
    assert json.loads(err)["exit_code"] == 2
    assert cli.main(["translate", "--checkpoint", str(tmp_path / "none"), "--input", "x"]) == 3
    assert cli.main(["not-a-command"]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert cli.main(["train", "--data.train", str(bad)]) == 3


def test_module_entry_point_subprocess(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "nl2code", "eval", "--hyps", str(tmp_path / "missing"),
                           "--refs", str(tmp_path / "missing")], capture_output=True, text=True)
    assert proc.returncode == 3
    last = proc.stderr.strip().splitlines()[-1]
    assert json.loads(last)["error"] == "data"
