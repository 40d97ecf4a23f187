"""Smoke test for the sgnws extension module.

Build it first, e.g. `maturin develop -m crates/python/Cargo.toml`, then run
`python python/smoke_test.py`.
"""

import os
import tempfile

import sgnws

LINES = [
    "the cat sat on the mat .",
    "a dog ran to the red door .",
    "the red cat ran on a mat .",
    "a cat and a dog sat down .",
]


def main():
    assert "sgnws" in sgnws.VARIANTS
    assert sgnws.tags_from_segmentation(["ab", "c"]) == "BEXS"
    assert sgnws.tags_from_segmentation(["ab", "c"], [True]) == "BES"
    assert sgnws.segmentation_from_tags("ab c", "BEXS") == ["ab", "c"]
    assert sgnws.normalize_line("  a \t b  ") == "a b"

    cfg = sgnws.Config("sgnws", d_emb=8, hidden=8, epochs=2)
    assert cfg.get("d_emb") == "8" and cfg.get("use_attention") == "true"
    try:
        sgnws.Config("lstm_softmax", constrained_decode=True)
    except ValueError:
        pass
    else:
        raise AssertionError("inconsistent config accepted")

    with tempfile.TemporaryDirectory() as d:
        train, dev = os.path.join(d, "train.tsv"), os.path.join(d, "dev.tsv")
        sgnws.write_labeled(train, LINES)
        sgnws.write_labeled(dev, LINES[:2])
        assert [t for t, _ in sgnws.read_labeled(train)] == LINES

        vocab = sgnws.Vocab.build(LINES)
        model = sgnws.Model(cfg, vocab)
        log = model.train(train, dev)
        assert [int(r["epoch"]) for r in log] == [1, 2]
        assert all(r["loss"] == r["loss"] for r in log)

        path = os.path.join(d, "model.ckpt")
        model.save(path)
        again = sgnws.Model.load(path, vocab)
        line = "the cat ran"
        assert again.segment(line) == model.segment(line)
        assert "".join(again.segment(line)) == line.replace(" ", "")
        assert len(again.predict(line)) == len(line)
        scores = again.evaluate(dev)
        assert 0.0 <= scores["f1"] <= 1.0

    print("smoke test ok")


if __name__ == "__main__":
    main()
