import logging

import numpy as np
import pytest

from orthoforge.errors import DomainError, NormalizationError, SchemaError
from orthoforge.retrieval import (
    SATELLITE_TO_DRONE, ClassLabels, Descriptor, DescriptorSet, LatentTensor, average_precision,
    cosine_sim, evaluate, query_average_precision, rank_all, readout, recall_at_k
)


def small_sets():
    queries = DescriptorSet(['q1', 'q2'], [[1, 0], [0, 1]], ['x', 'y'])
    references = DescriptorSet(['r1', 'r2', 'r3'], [[0.6, 0.8], [1, 0], [0, 1]], ['x', 'y', 'x'])
    return queries, references


def random_sets(seed=0, n_queries=200, n_refs=200, dim=32, classes=20):
    gen = np.random.default_rng(seed)
    ref_ids = [f'r{i:03d}' for i in gen.permutation(n_refs)]
    queries = DescriptorSet.from_raw(
        [f'q{i:03d}' for i in range(n_queries)], gen.normal(size=(n_queries, dim)),
        [f'c{c}' for c in gen.integers(0, classes, n_queries)]
    )
    references = DescriptorSet.from_raw(
        ref_ids, gen.normal(size=(n_refs, dim)), [f'c{c}' for c in gen.integers(0, classes, n_refs)]
    )
    return queries, references


def oracle(queries, references, ks):
    """Metrics straight from the definitions, one query at a time."""
    refs = references.vectors.astype(np.float64)
    hits = {k: [] for k in ks}
    aps = []
    for q, label in zip(queries.vectors.astype(np.float64), queries.labels):
        sims = refs @ q
        ranked = sorted(range(len(references)), key=lambda i: (-sims[i], references.ids[i]))
        relevant = [references.labels[i] == label for i in ranked]
        if not any(relevant):
            continue
        for k in ks:
            hits[k].append(any(relevant[:k]))
        found, precisions = 0, []
        for rank, ok in enumerate(relevant, start=1):
            if ok:
                found += 1
                precisions.append(found / rank)
        aps.append(sum(precisions) / len(precisions))
    return {k: 100 * sum(v) / len(v) for k, v in hits.items()}, 100 * sum(aps) / len(aps)


def test_flatten_readout_normalizes():
    d = readout(LatentTensor('a', np.full((2, 2, 2), 3.0)), class_label='x')
    assert d.dim == 8
    assert d.class_label == 'x'
    assert np.linalg.norm(d.vector) == pytest.approx(1.0, abs=1e-6)


def test_mean_readout_pools_spatially():
    values = np.zeros((3, 2, 2))
    values[0] = 2.0
    values[2] = 2.0
    d = readout(LatentTensor('a', values), 'mean')
    np.testing.assert_allclose(d.vector, [np.sqrt(0.5), 0, np.sqrt(0.5)], rtol=1e-6)
    with pytest.raises(DomainError):
        readout(LatentTensor('b', np.ones(4)), 'mean')
    with pytest.raises(DomainError):
        readout(LatentTensor('c', np.ones(4)), 'max')


def test_zero_latent_cannot_be_normalized():
    with pytest.raises(NormalizationError, match='z0'):
        readout(LatentTensor('z0', np.zeros((2, 3))))
    with pytest.raises(NormalizationError) as info:
        DescriptorSet.from_raw(['a', 'b'], [[1.0, 0.0], [0.0, 0.0]], ['x', 'x'])
    assert info.value.exit_code == 6


def test_cosine_similarity():
    a = Descriptor('a', np.array([1.0, 0.0], dtype=np.float32))
    b = Descriptor('b', np.array([0.6, 0.8], dtype=np.float32))
    assert cosine_sim(a, a) == 1.0
    assert cosine_sim(a, b) == pytest.approx(0.6, abs=1e-7)
    with pytest.raises(DomainError):
        cosine_sim(a, Descriptor('c', np.ones(3, dtype=np.float32)))


def test_small_example():
    queries, references = small_sets()
    rankings = rank_all(queries, references)
    assert rankings.ranked_ids(0) == ['r2', 'r1', 'r3']
    assert rankings.ranked_ids(1) == ['r3', 'r1', 'r2']
    labels = ClassLabels.of(queries, references)
    assert recall_at_k(rankings, labels, 1) == 0.0
    assert recall_at_k(rankings, labels, 2) == 50.0
    assert recall_at_k(rankings, labels, 3) == 100.0
    assert average_precision(rankings, labels) == pytest.approx(100 * (7 / 12 + 1 / 3) / 2)


def test_matches_definitional_oracle():
    queries, references = random_sets()
    ks = (1, 5, 10)
    recall, ap = oracle(queries, references, ks)
    report = evaluate(queries, references, ks)
    assert report.recall_at == recall
    assert report.ap_mean == pytest.approx(ap, rel=1e-12)


def test_recall_grows_with_k():
    queries, references = random_sets(seed=1)
    rankings = rank_all(queries, references)
    labels = ClassLabels.of(queries, references)
    values = [recall_at_k(rankings, labels, k) for k in (1, 2, 5, 10, 50, 200)]
    assert values == sorted(values)
    assert values[-1] == 100.0


def test_rescaled_descriptors_rank_the_same():
    gen = np.random.default_rng(3)
    matrix = gen.normal(size=(50, 16))
    ids = [f'r{i}' for i in range(50)]
    labels = ['x'] * 50
    plain = DescriptorSet.from_raw(ids, matrix, labels)
    scaled = DescriptorSet.from_raw(ids, 8.0 * matrix, labels)
    np.testing.assert_array_equal(plain.vectors, scaled.vectors)
    np.testing.assert_allclose(DescriptorSet.from_raw(ids, 3.0 * matrix, labels).vectors, plain.vectors, atol=1e-7)
    queries = DescriptorSet.from_raw(['q'], gen.normal(size=(1, 16)), ['x'])
    np.testing.assert_array_equal(rank_all(queries, plain).order, rank_all(queries, scaled).order)


def test_ties_break_by_ascending_id():
    references = DescriptorSet(['b', 'a', 'c'], [[1, 0], [1, 0], [1, 0]], ['x', 'x', 'x'])
    queries = DescriptorSet(['q'], [[1, 0]], ['x'])
    assert rank_all(queries, references).ranked_ids(0) == ['a', 'b', 'c']


def test_reference_order_does_not_matter():
    queries, references = random_sets(seed=2, n_queries=20)
    perm = np.random.default_rng(9).permutation(len(references))
    shuffled = DescriptorSet(
        [references.ids[i] for i in perm], references.vectors[perm], [references.labels[i] for i in perm]
    )
    a, b = rank_all(queries, references), rank_all(queries, shuffled)
    for q in range(len(queries)):
        assert a.ranked_ids(q) == b.ranked_ids(q)


def test_threads_do_not_change_rankings():
    queries, references = random_sets(seed=4)
    one = rank_all(queries, references, threads=1)
    four = rank_all(queries, references, threads=4)
    np.testing.assert_array_equal(one.order, four.order)
    np.testing.assert_array_equal(one.scores, four.scores)


def test_query_average_precision():
    assert query_average_precision(np.array([False, True, False, True])) == 0.5
    assert query_average_precision(np.array([True, True])) == 1.0
    assert query_average_precision(np.array([False, False])) == 0.0


def test_rank_all_argument_checks():
    queries, references = small_sets()
    with pytest.raises(DomainError):
        rank_all(queries, DescriptorSet([], np.zeros((0, 2)), []))
    with pytest.raises(DomainError):
        rank_all(queries, DescriptorSet(['r'], [[1.0, 0.0, 0.0]], ['x']))
    with pytest.raises(DomainError):
        recall_at_k(rank_all(queries, references), ClassLabels.of(queries, references), 0)


def test_queries_without_a_match_are_excluded(caplog):
    queries = DescriptorSet(['q1', 'q2'], [[1, 0], [0, 1]], ['x', 'lonely'])
    references = DescriptorSet(['r1', 'r2'], [[1, 0], [0, 1]], ['x', 'y'])
    with caplog.at_level(logging.WARNING):
        report = evaluate(queries, references, ks=(1,))
    assert report.excluded_queries == ['q2']
    assert report.recall_at == {1: 100.0}
    assert [entry['id'] for entry in report.per_query] == ['q1']
    assert 'excluded' in caplog.text


def test_no_valid_query_is_an_error():
    queries = DescriptorSet(['q'], [[1, 0]], ['x'])
    references = DescriptorSet(['r'], [[1, 0]], ['y'])
    with pytest.raises(DomainError):
        evaluate(queries, references)


def test_report_dictionary():
    queries, references = small_sets()
    queries.meta['t'] = '500'
    report = evaluate(queries, references, ks=(1, 3), direction=SATELLITE_TO_DRONE)
    data = report.to_dict()
    assert data['schema_version'] == 1
    assert data['direction'] == 'satellite->drone'
    assert data['recall_at'] == {'1': 0.0, '3': 100.0}
    assert data['meta'] == {'queries.t': '500'}
    assert data['per_query'][1] == {'id': 'q2', 'label': 'y', 'first_rank': 3, 'ap': pytest.approx(100 / 3)}


def test_descriptor_set_is_immutable_and_unique():
    source = np.eye(2, dtype=np.float32)
    descriptors = DescriptorSet(['a', 'b'], source, ['x', 'y'])
    assert source.flags.writeable
    with pytest.raises(ValueError):
        descriptors.vectors[0, 0] = 5.0
    with pytest.raises(SchemaError, match='dup'):
        DescriptorSet(['dup', 'dup'], source, ['x', 'y'])
    with pytest.raises(DomainError):
        DescriptorSet(['a'], source, ['x'])
    assert descriptors.descriptor('b').class_label == 'y'


def test_from_descriptors():
    parts = [Descriptor('a', np.array([1, 0], dtype=np.float32), 'x'),
             Descriptor('b', np.array([0, 1], dtype=np.float32), 'y')]
    descriptors = DescriptorSet.from_descriptors(parts, meta={'k': 'v'})
    assert len(descriptors) == 2
    assert descriptors.dim == 2
    assert descriptors.meta == {'k': 'v'}
    with pytest.raises(DomainError):
        DescriptorSet.from_descriptors(parts + [Descriptor('c', np.ones(3, dtype=np.float32))])
