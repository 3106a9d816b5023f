import json
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from nnlens.corpus import build_vocab, generate_lakretz_tasks, load_lexicon
from nnlens.errors import ActivationKeyError, EntryLookupError, MissingArtifactError
from nnlens.extract import ActivationStore, extract, read
from nnlens.model import ActivationKey, LstmLm, TransformerLm, init_states_from_phrase, lstm_step


@pytest.fixture(scope="module")
def setup():
    tasks = generate_lakretz_tasks(load_lexicon(), seed=1, per_task_count=24, tasks=["Simple", "NounPP"])
    vocab = build_vocab(tasks.values())
    corpus = tasks["NounPP"].with_vocab(vocab)
    model = LstmLm(vocab, d=8, hidden=6, seed=5)
    return corpus, vocab, model


def store_bytes(path):
    return {p.name: p.read_bytes() for p in sorted(path.iterdir())}


def test_keep_all_rows(tmp_path, setup):
    corpus, vocab, model = setup
    simple = generate_lakretz_tasks(load_lexicon(), seed=1, per_task_count=2, tasks=["Simple"])["Simple"]
    sentence = [s for s in simple.with_vocab(vocab) if len(s.words) == 3]
    from nnlens.corpus import Corpus

    store = extract(model, Corpus(sentence, vocab=vocab), keys=["0:hx"], out_dir=tmp_path)
    (rows,) = store.read([0], "0:hx")
    assert rows.shape == (3, model.hidden)


def test_verb_selection_one_row(tmp_path, setup):
    corpus, _, model = setup
    store = extract(model, corpus, keys=[(1, "fx"), (0, "hx")], selection="verb", out_dir=tmp_path)
    for block in store.read(range(len(corpus)), (1, "fx")):
        assert block.shape == (1, model.hidden)
    assert all(store.positions(i, "1:fx") == [corpus[i].meta["verb_index"]] for i in range(len(corpus)))


def test_gate_rows_match_recompute_oracle(tmp_path, setup):
    corpus, vocab, model = setup
    store = extract(model, corpus, keys=["1:fx"], out_dir=tmp_path, batch_size=5)
    # recompute the layer-1 forget gate with explicit lstm_step calls
    for sid in (0, 7, len(corpus) - 1):
        states = init_states_from_phrase(model)
        expected = []
        emb = model.params["embedding"].data
        for tok in vocab.encode(corpus[sid].words):
            inp = emb[tok]
            for layer in range(model.layers):
                h, c, gates = lstm_step(inp, states[layer], model.layer_weights(layer))
                states[layer] = (h, c)
                if layer == 1:
                    expected.append(gates["f"].data)
                inp = h
        (stored,) = store.read([sid], "1:fx")
        assert stored.data.tobytes() == np.stack(expected).tobytes()


def test_round_trip_and_subset(tmp_path, setup):
    corpus, vocab, model = setup
    store = extract(model, corpus, out_dir=tmp_path, batch_size=4, flush_every=2)
    for key in model.activation_names:
        everything = store.read(range(len(corpus)), key)
        _, acts = model.forward(vocab.encode(corpus[3].words), state=init_states_from_phrase(model))
        assert everything[3].data.tobytes() == acts[key].data.tobytes()
        subset = store.read([5, 2, 9], key)
        for sid, block in zip([5, 2, 9], subset):
            assert block.data.tobytes() == everything[sid].data.tobytes()
    assert read(tmp_path, [1], "0:cx")[0].data.tobytes() == store.read([1], "0:cx")[0].data.tobytes()


def test_batch_size_invariance(tmp_path, setup):
    corpus, _, model = setup
    extract(model, corpus, selection="subject", out_dir=tmp_path / "b1", batch_size=1, flush_every=1)
    extract(model, corpus, selection="subject", out_dir=tmp_path / "b32", batch_size=32, flush_every=3)
    assert store_bytes(tmp_path / "b1") == store_bytes(tmp_path / "b32")


def test_rerun_byte_identical(tmp_path, setup):
    corpus, _, model = setup
    extract(model, corpus, keys=["1:hx"], out_dir=tmp_path)
    first = store_bytes(tmp_path)
    extract(model, corpus, keys=["1:hx"], out_dir=tmp_path)
    assert store_bytes(tmp_path) == first


def test_memory_bound_independent_of_corpus_size(tmp_path, setup):
    corpus, _, model = setup
    small = extract(model, corpus.subset(range(8)), out_dir=tmp_path / "s", batch_size=2, flush_every=2)
    large = extract(model, corpus, out_dir=tmp_path / "l", batch_size=2, flush_every=2)
    for store in (small, large):
        assert store.stats.peak_buffered_batches <= 2
    assert large.stats.flushes > small.stats.flushes
    # one batch holds at most 2 sentences of <= 6 tokens; 12 keys of width 6
    assert large.stats.peak_buffered_bytes <= 2 * 2 * 6 * 12 * 6 * 8


def test_concurrent_reads_match_serial(tmp_path, setup):
    corpus, _, model = setup
    store = extract(model, corpus, keys=["0:hx", "1:ox"], out_dir=tmp_path)
    ids = list(range(len(corpus)))
    chunks = [ids[i::4] for i in range(4)]
    serial = [[t.data.tobytes() for t in store.read(c, "1:ox")] for c in chunks]
    with ThreadPoolExecutor(4) as pool:
        parallel = list(pool.map(lambda c: [t.data.tobytes() for t in store.read(c, "1:ox")], chunks))
    assert parallel == serial


def test_unknown_key_lists_advertised(tmp_path, setup):
    corpus, _, model = setup
    with pytest.raises(ActivationKeyError, match="0:hx"):
        extract(model, corpus, keys=["0:hidden"], out_dir=tmp_path)


def test_missing_entry(tmp_path, setup):
    corpus, _, model = setup
    store = extract(model, corpus.subset(range(3)), keys=["0:hx"], out_dir=tmp_path)
    with pytest.raises(EntryLookupError, match="sentence_id=3"):
        store.read([3], "0:hx")
    with pytest.raises(ActivationKeyError):
        store.read([0], "1:hx")


def test_io_failure_marks_index_invalid(tmp_path, setup, monkeypatch):
    corpus, _, model = setup
    from nnlens import extract as ex

    calls = {"n": 0}
    original = ex._Writer.write_rows

    def failing(self, key, blocks):
        calls["n"] += 1
        if calls["n"] > 1:
            raise OSError("disk full")
        return original(self, key, blocks)

    monkeypatch.setattr(ex._Writer, "write_rows", failing)
    with pytest.raises(OSError, match="disk full"):
        extract(model, corpus, keys=["0:hx"], out_dir=tmp_path, batch_size=2, flush_every=1)
    assert json.loads((tmp_path / "index.json").read_text())["status"] == "invalid"
    assert not (tmp_path / "finalized").exists()
    with pytest.raises(MissingArtifactError):
        ActivationStore(tmp_path)


def test_transformer_store(tmp_path, setup):
    corpus, vocab, _ = setup
    model = TransformerLm(vocab, d=8, ffn=16, mode="masked")
    store = extract(model, corpus, selection="subject", out_dir=tmp_path)
    rows, owners = store.matrix(ActivationKey(1, "hidden"))
    assert rows.shape == (len(corpus), 8) and owners == list(range(len(corpus)))
