"""Quick end-to-end check of the Python bindings.

Build and install first:

    pip install --no-build-isolation ./crates/py
    python python/smoke_test.py
"""

import json
import os
import tempfile

import nuer

TINY = json.dumps({"d_model": 16, "n_layers": 1, "n_heads": 2, "d_ffn": 32, "max_len": 64})


def main():
    corpus = nuer.Corpus.generate(n=200, seed=3, questions=True)
    assert len(corpus) == 200
    train, val, test = corpus.split(seed=1)
    assert len(train) + len(val) + len(test) == 200
    vocab = nuer.Vocabulary.build(corpus)
    assert "[CLS]" in vocab and len(vocab) > 20

    first = corpus.sentences()[0]
    assert len(first["tokens"]) == len(first["labels"])
    assert nuer.numeral_value("1,200") == 1200.0
    assert nuer.tokenize("In 1999 , sales rose 5 %")[1] == "1999"

    tagger = nuer.train_tagger(train, vocab, val=val, epochs=2, lr=1e-3, batch=8, encoder_json=TINY)
    metrics = nuer.evaluate_tagger(tagger, vocab, test)
    print("tagger micro F1", round(metrics["total"]["f1"], 2))
    labels = tagger.tag(first["tokens"], vocab)
    assert len(labels) == len(first["tokens"])
    assert all(lab in nuer.LABELS for lab, _ in labels)

    qa = nuer.train_qa(train, vocab, mode="jem", epochs=1, encoder_json=TINY)
    print("qa", nuer.evaluate_qa(qa, vocab, test, tagger=tagger))

    fitb = nuer.train_fitb(train, vocab, mode="entity", epochs=1, encoder_json=TINY)
    scores = nuer.evaluate_fitb(fitb, vocab, test, ks=[1, 5])
    assert scores["top_k"]["1"] <= scores["top_k"]["5"]
    print("fitb", scores)

    annotated = nuer.annotate(tagger, vocab, test, threshold=0.0)
    assert len(annotated) == len(test)
    assert all(s.get("confidences") is not None for s in annotated.sentences())

    with tempfile.TemporaryDirectory() as d:
        ckpt = os.path.join(d, "tagger.ckpt")
        tagger.save(ckpt, vocab)
        again = nuer.Model.load(ckpt, vocab)
        assert again.tag(first["tokens"], vocab) == labels
        other = nuer.Vocabulary.build(nuer.Corpus.generate(n=50, seed=99))
        try:
            nuer.Model.load(ckpt, other)
        except nuer.NuerError as e:
            assert str(e).startswith("vocab_hash")
        else:
            raise AssertionError("vocabulary mismatch not detected")
        assert nuer.run_cli(["gen", "--out", d, "--n", "20"]) == 0
        assert os.path.exists(os.path.join(d, "corpus.jsonl"))

    assert all(c["max_rel_error"] < 1e-6 for c in nuer.primitive_checks(0))
    print("smoke test passed")


if __name__ == "__main__":
    main()
