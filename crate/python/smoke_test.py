#!/usr/bin/env python3
"""End-to-end smoke test for the navtrans_py extension module.

Builds the extension with cargo, loads it, and exercises graphs, metrics,
corpus generation, training, translation, and checkpointing.
"""

import json
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]


def load_extension():
    subprocess.run(
        ["cargo", "build", "-p", "navtrans-py"],
        check=True,
        cwd=ROOT,
    )
    stage = Path(tempfile.mkdtemp(prefix="navtrans-py-"))
    for name in ("libnavtrans_py.so", "libnavtrans_py.dylib", "navtrans_py.dll"):
        built = ROOT / "target" / "debug" / name
        if built.exists():
            shutil.copy(built, stage / "navtrans_py.so")
            break
    else:
        sys.exit("extension library not found under target/debug")
    sys.path.insert(0, str(stage))
    import navtrans_py

    return navtrans_py


def main():
    nt = load_extension()
    tmp = Path(tempfile.mkdtemp(prefix="navtrans-smoke-"))

    # Graphs: construction, plan execution, shortest plans, JSON round trip.
    graph = nt.BehaviorGraph(
        ["office", "hall", "kitchen"],
        ["exit_office", "cross_hall", "enter_kitchen"],
        [
            ("office", "exit_office", "hall"),
            ("hall", "cross_hall", "kitchen"),
            ("kitchen", "enter_kitchen", "office"),
            ("office", "cross_hall", "kitchen"),
        ],
    )
    assert graph.validate_plan("office", ["exit_office", "cross_hall"]) == "kitchen"
    assert graph.shortest_plan("office", "kitchen") == ["cross_hall"]
    same = nt.BehaviorGraph.from_json(graph.to_json())
    assert same.edges() == graph.edges()
    try:
        graph.validate_plan("office", ["enter_kitchen"])
    except ValueError as e:
        assert "enter_kitchen" in str(e)
    else:
        sys.exit("invalid plan was accepted")

    # Metrics on behavior-name sequences.
    assert nt.edit_distance(["a", "b", "c"], ["a", "b", "c"]) == 0
    assert nt.edit_distance(["a", "b"], ["a", "x", "b"]) == 1
    assert nt.plan_f1(["a", "b"], ["a", "b"]) == 1.0
    assert nt.plan_f1(["a"], ["b"]) == 0.0

    # Corpus generation is deterministic for a fixed seed.
    corpus_cfg = json.dumps(
        {
            "num_maps": 3,
            "rooms_min": 4,
            "rooms_max": 6,
            "samples_per_map": 8,
            "split_ratios": [0.6, 0.2, 0.2],
        }
    )
    maps, samples = nt.generate_corpus(str(tmp / "corpus"), 11, corpus_cfg)
    assert maps == 3 and samples > 0
    nt.generate_corpus(str(tmp / "corpus2"), 11, corpus_cfg)
    a = (tmp / "corpus" / "corpus.jsonl").read_bytes()
    b = (tmp / "corpus2" / "corpus.jsonl").read_bytes()
    assert a == b, "same seed produced different corpora"

    # A short training run on the tiny corpus.
    train_cfg = json.dumps(
        {
            "epochs": 4,
            "batch_size": 4,
            "heads": 2,
            "hidden": 8,
            "embed_dim": 6,
            "behavior_dim": 4,
            "d_ctx": 6,
            "max_decode_len": 6,
            "learning_rate": 0.01,
            "seed": 7,
        }
    )
    model = nt.Model.train(str(tmp / "corpus"), train_cfg)
    logs = model.logs()
    assert len(logs) == 4
    assert logs[-1][1] < logs[0][1], f"loss did not decrease: {logs}"

    # Translation returns executable metadata.
    graph_json = (tmp / "corpus" / "graphs" / "map000.json").read_text()
    g0 = nt.BehaviorGraph.from_json(graph_json)
    start = g0.nodes()[0]
    out = model.translate(g0, start, "enter the kitchen then cross the hall")
    assert isinstance(out["plan"], list)
    assert isinstance(out["truncated"], bool)

    # Checkpoint round trip preserves evaluation results.
    report = model.evaluate(str(tmp / "corpus"), "test_new")
    model.save(str(tmp / "model.ntck"))
    reloaded = nt.Model.load(str(tmp / "model.ntck"))
    report2 = reloaded.evaluate(str(tmp / "corpus"), "test_new")
    assert report == report2, f"{report} != {report2}"
    assert report["n"] > 0
    assert 0.0 <= report["m_at_0"] <= report["m_at_1"] <= report["m_at_2"] <= 100.0

    print("smoke test passed:", report)


if __name__ == "__main__":
    main()
