"""Smoke test for the sumcap_py extension module.

Build and install first:  pip install -e crates/python --no-build-isolation
Run:                      python python/smoke_test.py
"""

import math
import tempfile
from pathlib import Path

import sumcap_py as sc


def check_latency():
    rates = sc.RateConstants()
    assert (rates.reading_wpm, rates.speaking_wpm) == (238.0, 150.0)

    b = sc.transmission_time(sc.TimingParams(20, 1.0))
    assert math.isclose(b.reading_s, 1200 / 238, abs_tol=1e-12)
    assert math.isclose(b.speaking_s, 8.0, abs_tol=1e-12)
    assert math.isclose(b.total_s, b.reading_s + b.speaking_s, abs_tol=1e-9)

    assert abs(sc.savings(20, 0.0) - 5.042) <= 0.005
    assert abs(sc.savings(20, 2 / 3) - 1.681) <= 0.005

    lo, hi = sc.epsilon_bounds()
    assert math.isclose(lo, 0.4) and math.isclose(hi, 0.4 + 60 / 238)

    total, turns = sc.simulate_dialogue([sc.TimingParams(20, 1.0), sc.TimingParams(20, 1.0)])
    assert len(turns) == 2 and math.isclose(total, 2 * b.total_s)

    try:
        sc.TimingParams(20, 1.5)
    except ValueError:
        pass
    else:
        raise AssertionError("sigma > 1 accepted")


def check_providers():
    text = "one two three four five six seven eight nine"
    translated = sc.mock_translate(text)
    assert translated.split()[0] == "ja:one"
    summary = sc.truncate_summarize(translated, 2 / 3)
    assert sc.word_count(summary) == 6
    assert math.isclose(sc.measure_sigma(translated, summary), 6 / 9)
    assert sc.build_prompt("hello") == "Summarize this sentence: hello"


def check_bench():
    assert "mock-chatgpt" in sc.summarizer_presets()
    r = sc.run_bench("mock-chatgpt", "a b c d e f", n_reps=50, seed=7)
    xs = [s["seconds"] for s in r["per_run_samples"]]
    mean = sum(xs) / len(xs)
    sd = math.sqrt(sum((x - mean) ** 2 for x in xs) / (len(xs) - 1))
    assert abs(r["mean_s"] - mean) <= 1e-9 and abs(r["sd_s"] - sd) <= 1e-9
    assert "mock-chatgpt" in r["table"]
    assert r == {**sc.run_bench("mock-chatgpt", "a b c d e f", n_reps=50, seed=7)}


def check_store():
    with tempfile.TemporaryDirectory() as tmp:
        store = sc.DataStore(Path(tmp) / "store")
        rid = store.append("s1", "en", "good morning all", "ja", "tgt:good tgt:morning tgt:all", "tgt:good tgt:morning", 2 / 3)
        store.apply_correction(rid, "tgt:morning", "reviewer")
        assert len(store) == 1
        assert store.export_rows(prefer_corrections=True)[0]["summarized_text"] == "tgt:morning"
        out = Path(tmp) / "export.jsonl"
        assert store.export_jsonl(out) == 1
        copy = sc.DataStore(Path(tmp) / "copy")
        assert copy.import_jsonl(out) == [1]
        assert copy.export_rows() == store.export_rows()
        assert store.stats()["records"] == 1


if __name__ == "__main__":
    for check in (check_latency, check_providers, check_bench, check_store):
        check()
        print(f"ok  {check.__name__}")
    print("smoke test passed")
