import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nnlens import tensor as T
from nnlens.attribute import (
    CDPairwise,
    DecomposedTensor,
    Exact,
    PlayerPartition,
    Sampling,
    cd_pairwise,
    decompose_forward,
    decompose_logits,
    exact_shapley,
    initial_embedding,
    render_text,
    rule_add,
    rule_interaction,
    rule_linear,
    sampled_shapley,
)
from nnlens.corpus import Vocab
from nnlens.errors import CapabilityError, ContractError
from nnlens.model import LanguageModel, LstmLm, TransformerLm, init_states_from_phrase
from nnlens.model.base import ActivationKey
from nnlens.tensor import Primitive, Tensor, apply, tracing

WORDS = "the athlete athletes approve approves near beside table tables john".split()


@pytest.fixture(scope="module")
def vocab():
    return Vocab.build(WORDS)


def table_game(values):
    """Game backed by an explicit table indexed by coalition bitmask."""
    return lambda C: values[sum(1 << g for g in C)]


def permutation_oracle(game, G):
    """Average marginal contribution over all G! orderings."""
    phi = np.zeros(G)
    perms = list(itertools.permutations(range(G)))
    for perm in perms:
        seen = set()
        for g in perm:
            phi[g] += game(frozenset(seen | {g})) - game(frozenset(seen))
            seen.add(g)
    return phi / len(perms)


def subset_oracle(game, G):
    """Shapley formula by explicit subset enumeration with factorial weights."""
    phi = []
    for g in range(G):
        others = [x for x in range(G) if x != g]
        total = 0.0
        for r in range(G):
            for C in itertools.combinations(others, r):
                w = math.factorial(r) * math.factorial(G - r - 1) / math.factorial(G)
                total = total + w * (np.asarray(game(frozenset(C) | {g})) - np.asarray(game(frozenset(C))))
        phi.append(total)
    return np.array(phi)


def scaled(model, factor, seed=0):
    """Copy of ``model`` with weights scaled up so its nonlinearities matter."""
    rng = np.random.default_rng(seed)
    params = {k: np.asarray(v.data) * factor + (0 if "bias" not in k else rng.normal(0, 0.3, v.shape))
              for k, v in model.params.items()}
    return model.replace_params(params)


# --- exact_shapley ---------------------------------------------------------

def test_exact_additive_game():
    w = np.array([0.5, -2.0, 3.0])
    np.testing.assert_allclose(exact_shapley(lambda C: sum(w[i] for i in C), 3), w, atol=1e-15)


def test_exact_symmetric_product():
    x, y = 1.7, -0.6
    game = lambda C: (x if 0 in C else 0.0) * (y if 1 in C else 0.0)
    np.testing.assert_allclose(exact_shapley(game, 2), [x * y / 2, x * y / 2], atol=1e-15)


@pytest.mark.parametrize("seed", range(5))
def test_exact_matches_permutation_oracle(seed):
    values = np.random.default_rng(seed).normal(size=16)
    game = table_game(values)
    np.testing.assert_allclose(exact_shapley(game, 4), permutation_oracle(game, 4), atol=1e-12, rtol=0)


def test_exact_cap():
    with pytest.raises(ContractError, match="capped"):
        exact_shapley(lambda C: 0.0, 13)
    with pytest.raises(ContractError):
        exact_shapley(lambda C: 0.0, 5, cap=4)


def test_exact_vector_game():
    rng = np.random.default_rng(3)
    table = rng.normal(size=(8, 2, 3))
    game = table_game(table)
    np.testing.assert_allclose(exact_shapley(game, 3), subset_oracle(game, 3), atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 5), st.integers(0, 10**6))
def test_axioms_additivity_symmetry_null(G, seed):
    rng = np.random.default_rng(seed)
    w = rng.normal(size=G)
    np.testing.assert_allclose(exact_shapley(lambda C: sum(w[i] for i in C), G), w, atol=1e-12)
    if G >= 3:
        # players 0 and 1 are interchangeable, player 2 never changes the value
        base = rng.normal(size=1 << G)

        def game(C):
            key = set(C) - {2}
            if {0, 1} & key and not {0, 1} <= key:
                key = (key - {0, 1}) | {0}
            return base[sum(1 << g for g in key)]

        phi = exact_shapley(game, G)
        assert phi[0] == pytest.approx(phi[1], abs=1e-12)
        assert phi[2] == pytest.approx(0.0, abs=1e-12)


# --- sampled_shapley -------------------------------------------------------

def test_sampling_all_permutations_equals_exact():
    values = np.random.default_rng(4).normal(size=16)
    game = table_game(values)
    perms = list(itertools.permutations(range(4)))
    np.testing.assert_allclose(sampled_shapley(game, 4, len(perms), permutations=perms), exact_shapley(game, 4),
                               atol=1e-12, rtol=0)


def test_sampling_additive_single_permutation():
    w = np.array([1.0, -0.25, 4.0, 2.0])
    np.testing.assert_array_equal(sampled_shapley(lambda C: sum(w[i] for i in C), 4, m=1, seed=9), w)


def test_sampling_efficiency_and_determinism():
    values = np.random.default_rng(5).normal(size=64)
    game = table_game(values)
    for seed in range(5):
        phi = sampled_shapley(game, 6, m=7, seed=seed)
        assert abs(phi.sum() - (values[63] - values[0])) <= 1e-12
        np.testing.assert_array_equal(phi, sampled_shapley(game, 6, m=7, seed=seed))
    assert not np.array_equal(sampled_shapley(game, 6, 7, seed=0), sampled_shapley(game, 6, 7, seed=1))


def test_sampling_converges():
    values = np.random.default_rng(6).normal(size=64)
    game = table_game(values)
    exact = exact_shapley(game, 6)
    errors = [np.mean(np.abs(sampled_shapley(game, 6, m=2000, seed=s) - exact)) for s in range(5)]
    assert np.mean(errors) <= 0.05 * np.max(np.abs(exact))


# --- cd_pairwise -----------------------------------------------------------

def test_cd_two_groups_equals_exact():
    values = np.random.default_rng(7).normal(size=4)
    game = table_game(values)
    np.testing.assert_allclose(cd_pairwise(game, 2), exact_shapley(game, 2), atol=1e-12, rtol=0)
    np.testing.assert_allclose(cd_pairwise(game, 2, normalize=False), exact_shapley(game, 2), atol=1e-12, rtol=0)


def test_cd_additive():
    w = np.array([0.3, -1.2, 2.2, 0.1])
    game = lambda C: sum(w[i] for i in C)
    np.testing.assert_allclose(cd_pairwise(game, 4, normalize=False), w, atol=1e-14)
    np.testing.assert_allclose(cd_pairwise(game, 4), w, atol=1e-14)


def test_cd_three_groups_hand_formula():
    game = lambda C: math.tanh(sum({0: 0.7, 1: -0.4, 2: 1.3}[g] for g in C)) ** 2
    N = frozenset({0, 1, 2})
    raw = cd_pairwise(game, 3, normalize=False)
    for g in range(3):
        hand = 0.5 * ((game(frozenset({g})) - game(frozenset())) + (game(N) - game(N - {g})))
        assert raw[g] == pytest.approx(hand, abs=1e-15)
        assert cd_pairwise(game, 3, g=g, normalize=False) == raw[g]
    normed = cd_pairwise(game, 3)
    assert normed.sum() == pytest.approx(game(N) - game(frozenset()), abs=1e-14)


def test_cd_cancelling_pairwise_values_keep_efficiency():
    # pairwise values sum to zero while the total does not
    table = {0: 0.0, 1: 1.0, 2: -1.0, 4: 0.0, 3: 0.0, 5: 1.0, 6: -1.0, 7: 0.5}
    game = lambda C: table[sum(1 << g for g in C)]
    phi = cd_pairwise(game, 3)
    assert np.all(np.isfinite(phi)) and phi.sum() == pytest.approx(0.5, abs=1e-14)


# --- local rules -----------------------------------------------------------

def random_slots(G, shape, seed):
    return DecomposedTensor.from_slots(np.random.default_rng(seed).normal(size=(G + 1,) + shape), Exact())


def test_rule_linear_zero_bias_and_recomposition():
    x = random_slots(3, (4,), 0)
    W = np.random.default_rng(1).normal(size=(4, 5))
    out = rule_linear(x, W)
    np.testing.assert_allclose(out.slots, x.slots @ W, atol=1e-14, rtol=0)
    b = np.random.default_rng(2).normal(size=5)
    out = rule_linear(x, W, b)
    np.testing.assert_allclose(out.total(), x.total() @ W + b, atol=1e-12)


def test_rule_linear_per_slot_oracle():
    x = random_slots(3, (2, 4), 3)
    rng = np.random.default_rng(4)
    W, b = rng.normal(size=(4, 3)), rng.normal(size=3)
    out = rule_linear(x, Tensor(W), Tensor(b))
    for s in range(4):
        expected = np.array([[sum(x.slots[s, r, k] * W[k, c] for k in range(4)) for c in range(3)] for r in range(2)])
        if s == 3:
            expected = expected + b
        np.testing.assert_allclose(out.slots[s], expected, atol=1e-12)


def test_rule_add():
    a, b = random_slots(2, (3,), 5), random_slots(2, (3,), 6)
    zero = DecomposedTensor.from_slots(np.zeros((3, 3)), Exact())
    np.testing.assert_array_equal(rule_add(a, zero).slots, a.slots)
    np.testing.assert_array_equal(rule_add(a, b).slots, rule_add(b, a).slots)
    np.testing.assert_allclose(rule_add(a, b).total(), a.total() + b.total(), atol=1e-12)
    with pytest.raises(ContractError, match="group counts"):
        rule_add(a, random_slots(3, (3,), 7))


def test_rule_interaction_identity():
    x = random_slots(3, (5,), 8)
    out = rule_interaction([x], "identity", Exact())
    np.testing.assert_allclose(out.slots, x.slots, atol=1e-14)


def test_rule_interaction_sigmoid_closed_form():
    beta, gamma = 0.8, -1.7
    x = DecomposedTensor.from_slots(np.array([[beta], [gamma], [0.0]]), Exact())
    out = rule_interaction([x], "sigmoid", Exact())
    s = lambda v: 1 / (1 + math.exp(-v))
    assert out.slots[0, 0] == pytest.approx(0.5 * (s(beta) - s(0) + s(beta + gamma) - s(gamma)), abs=1e-15)
    assert out.slots[2, 0] == pytest.approx(0.5, abs=1e-15)


def test_rule_interaction_product_matches_subset_oracle():
    a, b = random_slots(3, (4,), 9), random_slots(3, (4,), 10)
    out = rule_interaction([a, b], "mul", Exact())

    def game(C):
        pick = lambda x: x.slots[3] + sum((x.slots[g] for g in C), np.zeros(4))
        return pick(a) * pick(b)

    np.testing.assert_allclose(out.slots[:3], subset_oracle(game, 3), atol=1e-10)
    np.testing.assert_allclose(out.slots[3], a.slots[3] * b.slots[3], atol=1e-15)


def test_rule_interaction_rejects_non_primitive():
    x = random_slots(2, (3,), 11)
    with pytest.raises(CapabilityError):
        rule_interaction([x], np.sin, Exact())
    with pytest.raises(CapabilityError):
        rule_interaction([x], "fft", Exact())


def test_rule_interaction_cd_equals_exact_for_two_groups():
    a, b = random_slots(2, (6,), 12), random_slots(2, (6,), 13)
    for f in ("mul", "div"):
        ex = rule_interaction([a, b], f, Exact()).slots
        cd = rule_interaction([a, b], f, CDPairwise()).slots
        np.testing.assert_allclose(cd, ex, atol=1e-12, rtol=0)


def test_unsupported_primitive_in_graph():
    cube = Primitive("cube", lambda x: x ** 3, lambda g, o, x: (3 * g * x * x,))
    x = random_slots(2, (3,), 14)
    with pytest.raises(CapabilityError, match="cube"):
        apply(cube, (x,))


# --- decomposed forward ----------------------------------------------------

class SumLinearLm(LanguageModel):
    """Sum of embeddings followed by a linear decoder, repeated at every position."""

    model_type = "sum-linear"

    def __init__(self, vocab, d=5, seed=0):
        rng = np.random.default_rng(seed)
        self.vocab = vocab
        self.params = {"embedding": Tensor(rng.normal(size=(len(vocab), d))),
                       "W": Tensor(rng.normal(size=(d, len(vocab)))), "b": Tensor(rng.normal(size=len(vocab)))}

    num_layers = 1
    activation_names = [ActivationKey(0, "sum")]

    def config(self):
        return {}

    def run(self, x, state=None, params=None, collect=True):
        p = params or self.params
        h = T.sum(x, axis=-2)
        logits = T.add(T.matmul(h, p["W"]), p["b"])
        steps = x.shape[-2]
        return T.stack([logits] * steps, axis=-2), {ActivationKey(0, "sum"): T.stack([h] * steps, axis=-2)}


@pytest.mark.parametrize("method", [Exact(), Sampling(m=3, seed=1), CDPairwise()])
@pytest.mark.parametrize("form", ["coalition", "slots"])
def test_linear_model_all_methods_coincide(vocab, method, form):
    model = SumLinearLm(vocab)
    ids = vocab.encode("the athletes near the table".split())
    partition = PlayerPartition.of([0, 1, 2, 0, 1])
    (attr,) = decompose_forward(model, ids, partition, method, targets=[4], form=form)
    E, W, b = (model.params[k].data for k in ("embedding", "W", "b"))
    for g in range(3):
        expected = sum(E[ids[p]] @ W[:, 4] for p in partition.members(g))
        assert attr.contributions[g] == pytest.approx(expected, abs=1e-12)
    assert attr.bias == pytest.approx(b[4], abs=1e-12)


@pytest.mark.parametrize("form", ["coalition", "slots"])
def test_single_group(vocab, form):
    model = LstmLm(vocab, d=8, hidden=8, seed=3)
    ids = vocab.encode("the athlete near the tables".split())
    (attr,) = decompose_forward(model, ids, [0] * 5, "exact", targets=[vocab.index("approves")], form=form)
    assert attr.contributions[0] == pytest.approx(attr.full_logit - attr.bias, abs=1e-10)


def occlusion_value(model, ids, members, target, state):
    emb = np.array(model.embed(ids).data)
    for p in range(len(ids)):
        if p not in members:
            emb[p] = 0.0
    logits, _ = model.run(Tensor(emb), state=state, collect=False)
    return logits.data[-1, target]


def test_lstm_exact_matches_occlusion_oracle(vocab):
    model = scaled(LstmLm(vocab, d=8, hidden=8, seed=5), 3.0)
    ids = vocab.encode("the athletes beside the table".split())
    target = vocab.index("approve")
    state = init_states_from_phrase(model)
    oracle = subset_oracle(lambda C: occlusion_value(model, ids, C, target, state), 5)
    (attr,) = decompose_forward(model, ids, None, "exact", targets=[target])
    np.testing.assert_allclose(attr.contributions, oracle, atol=1e-6, rtol=0)
    assert attr.bias == pytest.approx(occlusion_value(model, ids, set(), target, state), abs=1e-12)


@pytest.mark.parametrize("kind", ["lstm", "causal", "masked"])
@pytest.mark.parametrize("form", ["coalition", "slots"])
@pytest.mark.parametrize("method", [Exact(), Sampling(m=4, seed=2), CDPairwise()])
def test_slot_sum_reproduces_every_node(vocab, kind, form, method):
    if kind == "lstm":
        model = scaled(LstmLm(vocab, d=6, hidden=6, seed=1), 2.0)
    else:
        model = scaled(TransformerLm(vocab, d=8, ffn=12, heads=2, mode=kind, seed=1), 1.5)
    ids = vocab.encode("the athletes near the tables".split())
    if kind == "masked":
        ids[2] = vocab.mask_id
    state = init_states_from_phrase(model) if kind == "lstm" else None
    x = initial_embedding(model, np.array(ids), PlayerPartition.per_token(5), method, form)
    embedded = model.embed(ids)
    with tracing() as plain:
        model.run(embedded, state=state)
    with tracing() as decomposed:
        model.run(x, state=state)
    assert [n for n, _ in plain] == [n for n, _ in decomposed]
    for (name, ref), (_, got) in zip(plain, decomposed):
        np.testing.assert_allclose(got, ref, atol=1e-8, rtol=0, err_msg=name)


@settings(max_examples=12, deadline=None)
@given(st.sampled_from(["lstm", "causal", "masked"]), st.integers(3, 8),
       st.sampled_from(["exact", "sampling", "cd"]), st.integers(0, 10**6))
def test_efficiency_property(kind, length, method, seed):
    vocab = Vocab.build(WORDS)
    rng = np.random.default_rng(seed)
    if kind == "lstm":
        model = scaled(LstmLm(vocab, d=6, hidden=6, seed=seed % 5), 2.0, seed)
    else:
        model = scaled(TransformerLm(vocab, d=8, ffn=12, heads=2, mode=kind, seed=seed % 5), 1.5, seed)
    ids = list(rng.integers(4, len(vocab), size=length))
    if kind == "masked":
        ids[rng.integers(length)] = vocab.mask_id
    for attr in decompose_forward(model, ids, None, method, targets=[4, 5]):
        total = sum(attr.contributions) + attr.bias
        assert abs(total - attr.full_logit) <= 1e-6 * max(1.0, abs(attr.full_logit))


@pytest.mark.parametrize("kind", ["lstm", "causal"])
def test_cd_equals_exact_for_two_groups_in_models(vocab, kind):
    model = (scaled(LstmLm(vocab, d=6, hidden=6, seed=4), 2.0) if kind == "lstm"
             else scaled(TransformerLm(vocab, d=8, ffn=12, seed=4), 1.5))
    ids = vocab.encode("the athlete beside the tables near john".split())
    partition = PlayerPartition.of([0, 0, 1, 1, 1, 0, 1])
    targets = list(range(len(vocab)))
    for form in ("coalition", "slots"):
        ex = decompose_forward(model, ids, partition, Exact(), targets, form=form)
        cd = decompose_forward(model, ids, partition, CDPairwise(), targets, form=form)
        for a, b in zip(ex, cd):
            np.testing.assert_allclose(a.contributions, b.contributions, atol=1e-12, rtol=0)
            assert a.bias == pytest.approx(b.bias, abs=1e-12)


def test_sampling_deterministic_per_seed(vocab):
    model = scaled(LstmLm(vocab, d=6, hidden=6), 2.0)
    ids = vocab.encode("the athletes near the table".split())
    a = decompose_forward(model, ids, None, Sampling(m=5, seed=3), targets=[6])[0]
    b = decompose_forward(model, ids, None, Sampling(m=5, seed=3), targets=[6])[0]
    c = decompose_forward(model, ids, None, Sampling(m=5, seed=4), targets=[6])[0]
    assert a.contributions == b.contributions and a.contributions != c.contributions


def test_exact_cap_in_forward(vocab):
    model = LstmLm(vocab, d=4, hidden=4)
    with pytest.raises(ContractError, match="capped"):
        decompose_forward(model, [4] * 13, None, "exact")
    decompose_forward(model, [4] * 13, None, "cd")


def test_masked_readout_position(vocab):
    model = TransformerLm(vocab, d=8, ffn=12, mode="masked")
    ids = vocab.encode("the athletes near the table".split())
    with pytest.raises(ContractError, match="mask"):
        decompose_forward(model, ids)
    ids[1] = vocab.mask_id
    (attr,) = decompose_forward(model, ids)
    logits, _ = model.forward(ids)
    assert attr.position == 1 and attr.target == int(np.argmax(logits.data[1]))


def test_partition_validation(vocab):
    model = LstmLm(vocab, d=4, hidden=4)
    with pytest.raises(ContractError):
        decompose_forward(model, [4, 5, 6], [0, 1])
    with pytest.raises(ContractError):
        PlayerPartition((0, 3), 2)


def test_report_json_and_text(vocab):
    model = LstmLm(vocab, d=6, hidden=6)
    ids = vocab.encode("the athletes near the table".split())
    (attr,) = decompose_forward(model, ids, [0, 0, 1, 2, 2], "exact", targets=[vocab.index("approve")])
    data = json.loads(json.dumps(attr.to_json()))
    assert data["tokens"] == "the athletes near the table".split() and data["target"] == "approve"
    assert [c["label"] for c in data["contributions"]] == ["the athletes", "near", "the table"]
    assert sum(c["value"] for c in data["contributions"]) + data["bias"] == pytest.approx(data["full_logit"])
    text = render_text(attr)
    assert "the athletes" in text and "<bias>" in text and "approve" in text


def test_decompose_logits_shapes(vocab):
    model = TransformerLm(vocab, d=8, ffn=12)
    logits, plain = decompose_logits(model, [4, 5, 6], None, "exact")
    assert logits.slots.shape == (4, 3, len(vocab)) and plain.shape == (3, len(vocab))
