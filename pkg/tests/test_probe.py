import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nnlens.corpus import Corpus, Sentence, generate_lakretz_tasks, load_lexicon
from nnlens.errors import ContractError
from nnlens.probe import (
    ProbeHyper,
    load_probe,
    make_control_labels,
    make_control_map,
    number_labels,
    save_probe,
    split_by_group,
    train_probe,
)


@pytest.fixture(scope="module")
def simple():
    return generate_lakretz_tasks(load_lexicon(), seed=0, per_task_count=40, tasks=["Simple"])["Simple"]


def blobs(n=200, d=8, seed=0):
    rng = np.random.default_rng(seed)
    y = np.arange(n) % 2
    centers = np.stack([-np.ones(d), np.ones(d)]) * 2.0
    return centers[y] + rng.normal(0, 0.5, size=(n, d)), y


def test_separable_blobs():
    x, y = blobs()
    _, report = train_probe(x, y)
    assert report.task.test >= 0.99


def test_noise_labels_near_chance():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(2000, 8))
    y = rng.permutation(np.arange(2000) % 2)
    _, report = train_probe(x, y)
    assert abs(report.task.test - 0.5) <= 0.1


def test_huge_l2_gives_majority_rate():
    x, _ = blobs(300)
    y = (np.arange(300) % 3 == 0).astype(int)  # one third positive
    probe, report = train_probe(x, y, ProbeHyper(l2=1e6))
    assert np.max(np.abs(probe.weights)) < 1e-6
    parts = split_by_group(np.arange(300), (0.8, 0.1, 0.1), 0)
    assert report.task.test == pytest.approx(np.mean(y[parts[2]] == 0))


def test_single_class_rejected():
    with pytest.raises(ContractError):
        train_probe(np.zeros((10, 3)), np.zeros(10, dtype=int))


def test_selectivity_identity_and_determinism():
    x, y = blobs(120)
    control = np.random.default_rng(1).integers(0, 2, size=120)
    p1, r1 = train_probe(x, y, control_labels=control)
    p2, r2 = train_probe(x, y, control_labels=control)
    assert r1.selectivity == r1.task.test - r1.control.test
    assert p1.weights.tobytes() == p2.weights.tobytes() and r1 == r2


def test_oracle_feature_ceiling():
    rng = np.random.default_rng(0)
    y = rng.integers(0, 2, size=300)
    x = np.column_stack([rng.normal(size=(300, 6)), np.eye(2)[y]])
    _, report = train_probe(x, y)
    assert report.task.train == report.task.dev == report.task.test == 1.0


def test_split_by_group_disjoint():
    groups = np.repeat(np.arange(50), 3)
    parts = split_by_group(groups, (0.8, 0.1, 0.1), 4)
    seen = [set(groups[p]) for p in parts]
    assert not (seen[0] & seen[1] or seen[0] & seen[2] or seen[1] & seen[2])
    assert sum(len(p) for p in parts) == len(groups)


def test_control_same_word_same_label(simple):
    labels = make_control_labels(simple, "subject", 2, seed=0)
    by_word = {}
    for s, lab in zip(simple, labels):
        by_word.setdefault(s.words[1], set()).add(int(lab))
    assert all(len(v) == 1 for v in by_word.values())


def test_control_seeds_differ():
    words = [f"w{i}" for i in range(100)]
    a, b = make_control_map(words, 2, 0), make_control_map(words, 2, 1)
    assert a.mapping != b.mapping


def test_control_uniform_within_3_sigma():
    n, classes = 600, 3
    cmap = make_control_map([f"type{i}" for i in range(n)], classes, seed=11)
    counts = np.bincount(list(cmap.mapping.values()), minlength=classes)
    p = 1 / classes
    sigma = np.sqrt(n * p * (1 - p))
    assert np.all(np.abs(counts - n * p) <= 3 * sigma)


def test_number_labels(simple):
    labels = number_labels(simple, "subject")
    for s, lab in zip(simple, labels):
        assert lab == {"S": 0, "P": 1}[s.meta["condition"]]
    plural = Sentence(("the", "athletes", "approve"), {"condition": "P", "subject_index": 1})
    singular = Sentence(("the", "uncle", "probably", "avoids"), {"condition": "S", "subject_index": 1})
    assert list(number_labels(Corpus([plural, singular]), "subject")) == [1, 0]


@settings(max_examples=10, deadline=None)
@given(st.randoms(use_true_random=False))
def test_number_labels_shuffle_invariant(rnd):
    tasks = generate_lakretz_tasks(load_lexicon(), seed=2, per_task_count=20, tasks=["NounPP"])
    corpus = tasks["NounPP"]
    order = list(range(len(corpus)))
    rnd.shuffle(order)
    base = number_labels(corpus, "subject")
    assert list(number_labels(corpus.subset(order), "subject")) == [base[i] for i in order]


def test_number_labels_missing_meta():
    with pytest.raises(ContractError):
        number_labels(Corpus([Sentence(("a",), {})]))


def test_probe_checkpoint_round_trip(tmp_path):
    x, y = blobs(60)
    probe, _ = train_probe(x, y, label_names=["neg", "pos"])
    save_probe(probe, tmp_path / "probe", ProbeHyper(), "1:hx")
    loaded, meta = load_probe(tmp_path / "probe")
    assert loaded.weights.tobytes() == probe.weights.tobytes()
    assert loaded.labels == ["neg", "pos"] and meta["activation_key"] == "1:hx"
    np.testing.assert_array_equal(loaded.predict(x), probe.predict(x))
