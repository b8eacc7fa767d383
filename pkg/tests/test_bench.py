import csv
import io
import json
import subprocess
import sys
import time

import pytest

from cnalock.avl import AvlMap
from cnalock.bench import (
    REPORT_FIELDS,
    BenchConfig,
    ConfigError,
    emit_report,
    main,
    prefill,
    run_kv_bench,
    run_model_bench,
    run_raw_bench,
)
from cnalock.topology import TopologyProvider

MOCK = TopologyProvider("mock", {i: i % 2 for i in range(8)})


def _cfg(**kw):
    kw.setdefault("topology", MOCK)
    return BenchConfig(**kw)


def test_prefill_half():
    tree = AvlMap()
    prefill(tree, 1024, 0)
    assert len(tree) == 512
    tree.check()


def test_kv_single_thread_timed():
    report = run_kv_bench(_cfg(lock="mcs", threads=1, duration=0.2))
    assert report.total_ops > 0 and report.ops_per_us > 0
    assert report.fairness == 1.0 and not report.fairness_defined
    assert report.total_ops == sum(report.per_thread)
    assert report.ops_per_us == pytest.approx(report.total_ops / (report.duration_s * 1e6))


def test_kv_single_thread_deterministic():
    a = run_kv_bench(_cfg(lock="cna", threads=1, ops_per_thread=2000, seed=5))
    b = run_kv_bench(_cfg(lock="cna", threads=1, ops_per_thread=2000, seed=5))
    assert a.total_ops == b.total_ops == 2000
    assert a.extra == b.extra


def test_kv_results_match_sequential_model():
    import random

    cfg = _cfg(lock="cna", threads=1, ops_per_thread=3000, seed=11, key_range=64, update_pct=60)
    tree = AvlMap()
    prefill(tree, 64, 11)
    model = set(tree.keys())
    report = run_kv_bench(cfg, tree)
    # replay the same op stream against a set
    rng = random.Random(11 * 7919)
    tallies = {"insert": [0, 0], "remove": [0, 0], "lookup": [0, 0]}
    for _ in range(3000):
        r = rng.random() * 100
        key = rng.randrange(64)
        if r < 30:
            op, ok = "insert", key not in model
            model.add(key)
        elif r < 60:
            op, ok = "remove", key in model
            model.discard(key)
        else:
            op, ok = "lookup", key in model
        tallies[op][0 if ok else 1] += 1
    assert report.extra["ops"] == tallies
    assert set(tree.keys()) == model
    assert 0 <= len(tree) <= 64


def test_read_only_run_leaves_map_unchanged():
    tree = AvlMap()
    prefill(tree, 128, 3)
    before = list(tree.keys())
    run_kv_bench(_cfg(lock="ticket", threads=1, ops_per_thread=1000, key_range=128, update_pct=0, seed=3), tree)
    assert list(tree.keys()) == before


@pytest.mark.parametrize("kind", ["cna", "cna-opt", "mcs", "tas", "ticket", "word-mcs", "word-cna"])
def test_raw_counter_equals_ops(kind):
    report = run_raw_bench(_cfg(lock=kind, threads=8, ops_per_thread=500, mode="raw"))
    assert report.counter == report.total_ops == 4000


def test_raw_short_duration_is_bounded():
    t0 = time.perf_counter()
    run_raw_bench(_cfg(lock="cna", threads=4, duration=0.1, mode="raw"))
    assert time.perf_counter() - t0 < 1.0


def test_model_mode_fairness():
    mcs = run_model_bench(_cfg(lock="mcs", threads=8, mode="model", handovers=80_000))
    assert mcs.fairness == pytest.approx(0.5, abs=0.02)
    cna = run_model_bench(_cfg(lock="cna", threads=8, mode="model", handovers=80_000))
    assert 0.5 <= cna.fairness <= 1.0
    assert cna.extra["locality"] > mcs.extra["locality"]


@pytest.mark.parametrize(
    "bad",
    [
        dict(lock="spin"),
        dict(threads=0),
        dict(duration=0),
        dict(key_range=1),
        dict(update_pct=101),
        dict(update_pct=-1),
        dict(output_format="xml"),
        dict(mode="model", lock="tas"),
    ],
)
def test_config_validation(bad):
    with pytest.raises(ConfigError):
        _cfg(**bad).validate()


def test_emit_csv_and_json():
    reports = [run_raw_bench(_cfg(lock=k, threads=2, ops_per_thread=50, mode="raw")) for k in ("mcs", "cna")]
    text = emit_report(reports, "csv")
    rows = list(csv.DictReader(io.StringIO(text)))
    assert text.splitlines()[0] == ",".join(REPORT_FIELDS)
    assert [r["lock"] for r in rows] == ["mcs", "cna"]
    obj = json.loads(emit_report(reports[0], "json"))
    assert set(REPORT_FIELDS) <= set(obj)
    assert obj["total_ops"] == 100


def test_cli_main(capsys):
    env = {"CNA_MOCK_TOPOLOGY": "t0:0,t1:1"}
    assert main(["--lock", "mcs,cna", "--threads", "2", "--ops", "100", "--format", "csv"], env) == 0
    out = capsys.readouterr().out
    assert out.splitlines()[0].startswith("lock,threads")
    assert len(out.splitlines()) == 3


def test_cli_config_error_exit_code(capsys):
    assert main(["--lock", "nope"], {}) == 2
    assert main(["--update-pct", "150"], {}) == 2
    assert main(["--threads", "1", "--duration", "0.1"], {"CNA_THRESHOLD": "12"}) == 2
    assert "error" in capsys.readouterr().err


def test_cli_module_entry():
    proc = subprocess.run(
        [sys.executable, "-m", "cnalock.bench", "--lock", "tas", "--threads", "2", "--duration", "0.1"],
        capture_output=True,
        text=True,
        timeout=30,
    )
    assert proc.returncode == 0, proc.stderr
    assert json.loads(proc.stdout)["lock"] == "tas"
