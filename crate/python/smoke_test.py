"""Smoke test for the entity_match extension.

Build and run from the repository root:

    cargo build -p em-py --release
    cp target/release/libentity_match.so python/entity_match.so
    python3 python/smoke_test.py
"""

import os
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import entity_match as em  # noqa: E402


def main():
    left = em.Record("l1", [("title", "sony a7 iii"), ("price", "1999")])
    right = em.Record("r1", [("title", "sony alpha 7 iii"), ("price", "1999")], source="D2")
    other = em.Record("r2", [("title", "nikon z6"), ("price", "1799")], source="D2")
    assert left.serialize() == "title: sony a7 iii; price: 1999"

    prompt = em.render_matching(left, right)
    assert prompt.startswith("Do the two entity records refer to the same real-world entity?")
    assert prompt.endswith("Record 2: title: sony alpha 7 iii; price: 1999")
    sel = em.render_selecting(left, [other, right])
    assert sel.splitlines()[-1] == "[2] title: sony alpha 7 iii; price: 1999"

    assert em.parse_label("Yes, they match.", "matching") == ("yes", True)
    assert em.parse_label("Record B is closer", "comparing") == ("b", True)
    assert em.parse_label("The answer is [2].", "selecting", n=3) == (2, True)
    assert em.parse_label("none of them", "selecting", n=3) == (0, False)

    task = em.Task("t1", left, [other, right], gold=2)
    data = em.Dataset([task], name="tiny")
    oracle = em.Backend.oracle(data)
    r = em.select_from_list(task, oracle)
    assert (r.prediction, r.invocations, r.input_records) == (2, 1, 3)
    r = em.compare_then_match(task, oracle)
    assert r.prediction == 2 and r.invocations == 3
    r = em.run_comem(task, oracle, oracle, top_k=1)
    assert r.prediction == 2
    assert [s[0] for s in r.stages] == ["filter", "select"]

    synth = em.Dataset.synthetic(tasks=100, with_gold=75)
    assert len(synth) == 100
    perfect = em.Backend.oracle(synth)
    biased = em.Backend.oracle(synth, seed=4, position_bias=[1.0 - 0.05 * i for i in range(10)])
    plain = em.evaluate(synth, "selecting", biased)
    comem = em.evaluate(synth, "comem", perfect, select_backend=biased, parallelism=4)
    print(f"selecting F1={plain['metrics']['f1']:.3f}  comem F1={comem['metrics']['f1']:.3f}")
    assert comem["metrics"]["f1"] >= plain["metrics"]["f1"]
    assert comem["metrics"]["ledger"]["invocations"] == 100 * 11

    rescored = em.score(synth, comem["predictions"])
    assert rescored["tp"] == comem["metrics"]["tp"]

    report = em.validate([("A", "B"), ("A", "C")])
    assert [v["kind"] for v in report["violations"]] == ["mutual_exclusivity"]
    assert em.validate([("A", "B"), ("B", "A")])["violations"] == []

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "tasks.jsonl")
        synth.save(path)
        again = em.Dataset.load(path)
        assert len(again) == 100 and again.tasks[0].gold == synth.tasks[0].gold

    try:
        em.Task("bad", left, [right], gold=5)
    except em.EntityMatchError as e:
        assert "out of range" in str(e)
    else:
        raise AssertionError("expected EntityMatchError")

    print("smoke test passed")


if __name__ == "__main__":
    main()
