import pytest
import torch
from hypothesis import given, settings, strategies as st

from convrec.graph_encoder import (RgcnParams, edge_arrays, init_params,
                                   rgcn_forward, validate_table)
from convrec.kg import INVERSE_SUFFIX, SELF_LOOP_RELATION, KnowledgeGraph


# --- oracle ---

def rgcn_reference(kg: KnowledgeGraph, params: RgcnParams,
                   layers: int = 1) -> torch.Tensor:
    """Per-triple loop over the update rule, rebuilt from the raw triples.

    A triple (e1, r, e2) sends W_r h_{e1} into e2; materialized inverse
    relations send the reverse message; the self-loop adds W_self h_e.
    Duplicate edges collapse, matching the graph's set semantics.
    """
    weights = params.materialized_weights()
    edges = set()
    for head, rel, tail in kg.triples:
        edges.add((rel, head, tail))
        inverse = kg.relation_index.get(kg.relation_names[rel] + INVERSE_SUFFIX)
        if inverse is not None:
            edges.add((inverse, tail, head))
    hidden = params.entity_embeddings
    for _ in range(layers):
        pre = torch.zeros_like(hidden)
        for e in range(kg.num_entities):
            pre[e] = weights[kg.self_loop_relation] @ hidden[e]
        for rel, src, dst in sorted(edges):
            pre[dst] = pre[dst] + weights[rel] @ hidden[src]
        hidden = torch.relu(pre)
    return hidden


def random_graph(seed: int, max_entities: int = 20, max_relations: int = 3,
                 add_inverse: bool = True) -> KnowledgeGraph:
    gen = torch.Generator().manual_seed(seed)

    def randint(low, high):
        return int(torch.randint(low, high + 1, (1,), generator=gen))

    n = randint(1, max_entities)
    r = randint(1, max_relations)
    base = [f"rel{i}" for i in range(r)]
    relations = base + ([name + INVERSE_SUFFIX for name in base]
                        if add_inverse else []) + [SELF_LOOP_RELATION]
    triples = []
    for _ in range(randint(0, 3 * n)):
        triples.append((randint(0, n - 1), randint(0, r - 1),
                        randint(0, n - 1)))
    mask = [bool(randint(0, 1)) for _ in range(n)]
    if not any(mask):
        mask[0] = True
    return KnowledgeGraph(entity_names=[f"e{i}" for i in range(n)],
                          relation_names=relations,
                          triples=sorted(set(triples)), item_mask=mask)


# --- forward equivalence ---

@pytest.mark.parametrize("seed", range(8))
@pytest.mark.parametrize("add_inverse", [True, False])
def test_rgcn_matches_per_triple_oracle(seed, add_inverse):
    kg = random_graph(seed, add_inverse=add_inverse)
    d = 1 + seed % 8
    params = init_params(kg, d=d, seed=seed, dtype=torch.float64)
    got = rgcn_forward(kg, params)
    want = rgcn_reference(kg, params)
    assert torch.allclose(got, want, atol=1e-6)


@pytest.mark.parametrize("layers", [1, 2, 3])
def test_rgcn_multi_layer_matches_oracle(layers):
    kg = random_graph(11)
    params = init_params(kg, d=5, seed=2, dtype=torch.float64)
    got = rgcn_forward(kg, params, layers=layers)
    want = rgcn_reference(kg, params, layers=layers)
    assert torch.allclose(got, want, atol=1e-6)


def test_rgcn_basis_decomposition_matches_oracle():
    kg = random_graph(5)
    params = init_params(kg, d=6, seed=9, num_bases=2, dtype=torch.float64)
    assert params.relation_weights is None
    got = rgcn_forward(kg, params)
    want = rgcn_reference(kg, params)
    assert torch.allclose(got, want, atol=1e-6)


def test_basis_with_full_rank_matches_direct_weights():
    kg = random_graph(3)
    direct = init_params(kg, d=4, seed=1, dtype=torch.float64)
    banked = RgcnParams(entity_embeddings=direct.entity_embeddings,
                        basis=direct.relation_weights,
                        coefficients=torch.eye(kg.num_relations,
                                               dtype=torch.float64))
    assert torch.allclose(rgcn_forward(kg, direct),
                          rgcn_forward(kg, banked), atol=1e-12)


@settings(max_examples=30)
@given(seed=st.integers(0, 10_000))
def test_rgcn_oracle_property(seed):
    kg = random_graph(seed)
    params = init_params(kg, d=1 + seed % 8, seed=seed + 1,
                         dtype=torch.float64)
    assert torch.allclose(rgcn_forward(kg, params),
                          rgcn_reference(kg, params), atol=1e-6)


def test_hand_checked_two_entity_graph():
    """One edge a->b under rel0, identity self-loop: b = relu(W a + b)."""
    kg = KnowledgeGraph(entity_names=["a", "b"],
                        relation_names=["rel0", SELF_LOOP_RELATION],
                        triples=[(0, 0, 1)], item_mask=[True, True])
    emb = torch.tensor([[1.0, 2.0], [3.0, 4.0]], dtype=torch.float64)
    w_rel = torch.tensor([[1.0, 1.0], [0.0, 1.0]], dtype=torch.float64)
    weights = torch.stack([w_rel, torch.eye(2, dtype=torch.float64)])
    out = rgcn_forward(kg, RgcnParams(entity_embeddings=emb,
                                      relation_weights=weights))
    assert torch.allclose(out[0], emb[0])
    assert torch.allclose(out[1], torch.tensor([3.0 + 3.0, 4.0 + 2.0],
                                               dtype=torch.float64))


# --- structure and validation ---

def test_edge_arrays_skip_self_loop_and_cache():
    kg = random_graph(4)
    arrays = edge_arrays(kg)
    assert all(rel != kg.self_loop_relation for rel, _, _ in arrays)
    assert edge_arrays(kg) is arrays


def test_init_params_deterministic():
    kg = random_graph(2)
    a = init_params(kg, d=4, seed=7)
    b = init_params(kg, d=4, seed=7)
    c = init_params(kg, d=4, seed=8)
    assert torch.equal(a.entity_embeddings, b.entity_embeddings)
    assert torch.equal(a.relation_weights, b.relation_weights)
    assert not torch.equal(a.entity_embeddings, c.entity_embeddings)


def test_rgcn_shape_validation():
    kg = random_graph(6)
    params = init_params(kg, d=4, seed=0)
    with pytest.raises(ValueError):
        rgcn_forward(kg, params, layers=0)
    bad = RgcnParams(entity_embeddings=params.entity_embeddings,
                     relation_weights=params.relation_weights[:-1])
    with pytest.raises(ValueError):
        rgcn_forward(kg, bad)
    bad = RgcnParams(entity_embeddings=params.entity_embeddings[:-1],
                     relation_weights=params.relation_weights)
    if kg.num_entities > 1:
        with pytest.raises(ValueError):
            rgcn_forward(kg, bad)
    with pytest.raises(ValueError):
        RgcnParams(entity_embeddings=params.entity_embeddings).materialized_weights()
    with pytest.raises(ValueError):
        init_params(kg, d=0, seed=0)


def test_validate_table():
    validate_table(torch.ones(3, 2))
    with pytest.raises(ValueError):
        validate_table(torch.tensor([[1.0, float("nan")]]))
    with pytest.raises(ValueError):
        validate_table(torch.tensor([[-0.1, 1.0]]))


def test_output_non_negative_after_relu():
    kg = random_graph(9)
    params = init_params(kg, d=6, seed=3)
    table = rgcn_forward(kg, params)
    assert (table >= 0).all()
    validate_table(table)
