import json
import subprocess
import sys

import pytest

from meo.bench import BENCH_HEADER
from meo.cli import EQUIV_HEADER, FLOPS_HEADER, main


def _write(tmp_path, raw, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(raw))
    return str(path)


def _run(tmp_path, mode, raw, *extra):
    out = tmp_path / f"{mode}.csv"
    code = main([mode, "--config", _write(tmp_path, raw), "--out", str(out), *extra])
    return code, out.read_text() if out.exists() else ""


FLOPS = {"profile": "bert-small", "variants": ["Vanilla", "MoE", "MEO"], "m_sweep": [1, 2, 4, 8, 16, 32]}


def test_flops_table_and_csv(tmp_path, capsys):
    code, text = _run(tmp_path, "flops", FLOPS)
    assert code == 0
    lines = text.splitlines()
    assert lines[0] == ",".join(FLOPS_HEADER) and len(lines) == 1 + 18
    assert "total_flops" in capsys.readouterr().out


@pytest.mark.parametrize("mode, raw", [
    ("flops", FLOPS),
    ("equiv", {"equiv_count": 6}),
    ("gradcheck", {}),
    ("train-toy", {"train": {"epochs": 20}}),
])
def test_reruns_are_byte_identical(tmp_path, mode, raw):
    code_a, a = _run(tmp_path, mode, raw)
    code_b, b = _run(tmp_path, mode, raw)
    assert code_a == code_b == 0
    assert a == b and a


def test_seed_override_changes_output(tmp_path):
    raw = {"train": {"epochs": 5}}
    _, a = _run(tmp_path, "train-toy", raw)
    _, b = _run(tmp_path, "train-toy", raw, "--seed", "5")
    assert a != b


def test_equiv_rows(tmp_path):
    code, text = _run(tmp_path, "equiv", {"equiv_count": 4})
    lines = text.splitlines()
    assert code == 0 and lines[0] == ",".join(EQUIV_HEADER)
    assert [l.split(",")[0] for l in lines[-2:]] == ["witness-relu", "witness-identity"]
    assert all(l.endswith("True") for l in lines[1:])


def test_bench_header_on_small_profile(tmp_path):
    raw = {"profile": {"d_model": 16, "d_ff": 32, "seq_len": 4, "n_experts": 2}, "m_sweep": [1, 2],
           "repeats": 3, "warmup": 3}
    code, text = _run(tmp_path, "bench", raw)
    lines = text.splitlines()
    assert code == 0 and lines[0] == BENCH_HEADER and len(lines) == 5


@pytest.mark.parametrize("raw", [{"mystery": 1}, {"m_sweep": [99]}, {"mode": "flops"}])
def test_config_errors_exit_2(tmp_path, capsys, raw):
    assert main(["bench", "--config", _write(tmp_path, raw)]) == 2
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and err[0].startswith("meo-error: config:")


def test_usage_errors_exit_2(tmp_path, capsys):
    assert main(["warp", "--config", "x.json"]) == 2
    assert main(["flops"]) == 2
    assert main(["flops", "--config", str(tmp_path / "nope.json")]) == 2
    assert main(["flops", "--config", _write(tmp_path, FLOPS), "--seed", "-3"]) == 2
    assert all(l.startswith("meo-error:") for l in capsys.readouterr().err.splitlines())


def test_divergence_exits_3(tmp_path, capsys):
    raw = {"train": {"epochs": 200, "lr": 1e308}}
    assert main(["train-toy", "--config", _write(tmp_path, raw)]) == 3
    assert capsys.readouterr().err.startswith("meo-error: diverged:")


def test_console_script(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "meo.cli", "flops", "--config", _write(tmp_path, FLOPS)],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0 and "MEO" in proc.stdout
