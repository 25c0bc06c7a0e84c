"""Smoke test for the propdial_py extension.

Build and install first:  maturin develop -m crates/python/Cargo.toml
"""

import json

import propdial_py as pd


def main():
    assert pd.tokenize("Fax VA-Form 10182!") == ["fax", "va", "form", "10182"]
    assert len(pd.split_sentences("One thing. Another thing.")) == 2
    assert pd.chunk_units([f"u{i}" for i in range(5)], 2) == [["u0", "u1"], ["u2", "u3"], ["u4"]]

    docs = [
        ("va#0", "A Board Appeal is filed with VA Form 10182."),
        ("va#1", "You can send the form by mail or by fax."),
        ("tax#0", "Estimated tax payments are due four times a year."),
    ]
    bm25 = pd.Bm25Index(docs)
    top = bm25.query("fax the form", 2)
    assert top[0][0] == "va#1", top
    assert len(bm25) == 3
    assert pd.Bm25Index.from_json(bm25.to_json()).score_all("fax") == bm25.score_all("fax")

    dense = pd.DenseIndex([("a", [1.0, 0.0]), ("b", [0.6, 0.8])])
    assert dense.dim == 2
    assert dense.query([0.0, 1.0], 1)[0][0] == "b"

    fused = pd.rrf_fuse(["a", "b"], ["b", "c"])
    assert fused[0] == ("b", 1 / 62 + 1 / 61)

    assert pd.average_precision(["x", "r1", "r2"], {"r1", "r2"}) == (1 / 2 + 2 / 3) / 2
    assert pd.recall_at_k(["x", "r1", "r2"], {"r1", "r2"}, 2) == 0.5
    assert pd.corpus_bleu4(["the cat sat on the mat"], ["the cat sat on the mat"]) == 100.0

    assert pd.conditional_rewrite("no_rewrite", "When is it due?") == ("When is it due?", False)
    assert pd.conditional_rewrite("rewrite When is the tax due?", "When is it due?") == ("When is the tax due?", True)

    prompt = pd.render_prompt("response_gen", {"question": "Q?", "propositions": "P."})
    assert "Q?" in prompt
    try:
        pd.render_prompt("response_gen", {})
    except ValueError:
        pass
    else:
        raise AssertionError("missing binding accepted")

    assert json.loads(pd.extract_structured('sure: ```json\n{"a": [1]}\n```')) == {"a": [1]}
    print("smoke test ok")


if __name__ == "__main__":
    main()
