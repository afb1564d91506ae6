from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from orthoforge.errors import DomainError, NormalizationError, SchemaError

logger = logging.getLogger(__name__)

READOUTS = ('flatten', 'mean')
DRONE_TO_SATELLITE = 'drone->satellite'
SATELLITE_TO_DRONE = 'satellite->drone'
REPORT_SCHEMA_VERSION = 1
QUERIES_PER_TASK = 64


@dataclass(eq=False)
class LatentTensor:
    id: str
    values: np.ndarray  # (C, H, W) or flat
    domain: str = 'query'

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)

    @property
    def shape(self):
        return self.values.shape


@dataclass(frozen=True, eq=False)
class Descriptor:
    id: str
    vector: np.ndarray
    class_label: str = ''

    @property
    def dim(self) -> int:
        return len(self.vector)


def _unit_rows(matrix: np.ndarray, ids: Sequence[str]) -> np.ndarray:
    matrix = np.asarray(matrix, dtype=np.float64)
    if not np.isfinite(matrix).all():
        raise DomainError('descriptor values must be finite')
    norms = np.linalg.norm(matrix, axis=1)
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        raise NormalizationError(f'descriptor {ids[zero[0]]!r} is all zeros')
    return (matrix / norms[:, None]).astype(np.float32)


def readout(t: LatentTensor, operator: str = 'flatten', class_label: str = '') -> Descriptor:
    """phi(t) followed by l2 normalization; ``flatten`` is row-major."""
    if operator not in READOUTS:
        raise DomainError(f'unknown readout {operator!r}; choose from {", ".join(READOUTS)}')
    values = t.values.astype(np.float64)
    if operator == 'mean':
        if values.ndim != 3:
            raise DomainError(f'mean readout needs a (C, H, W) tensor, got shape {values.shape}')
        values = values.mean(axis=(1, 2))
    return Descriptor(t.id, _unit_rows(values.reshape(1, -1), [t.id])[0], class_label)


def cosine_sim(a: Descriptor, b: Descriptor) -> float:
    if a.dim != b.dim:
        raise DomainError(f'dimension mismatch: {a.dim} vs {b.dim}')
    dot = np.einsum('i,i->', a.vector.astype(np.float64), b.vector.astype(np.float64))
    return float(np.clip(dot, -1.0, 1.0))


class DescriptorSet:
    """Immutable, ordered unit descriptors with unique ids."""

    def __init__(self, ids: Sequence[str], vectors: np.ndarray, labels: Sequence[str],
                 meta: Optional[Dict[str, str]] = None):
        vectors = np.array(vectors, dtype=np.float32)
        if vectors.ndim != 2:
            raise DomainError(f'vectors must be a 2-D matrix, got shape {vectors.shape}')
        if not (len(ids) == len(labels) == len(vectors)):
            raise DomainError(f'{len(ids)} ids, {len(labels)} labels, {len(vectors)} vectors')
        self.ids = [str(i) for i in ids]
        self.index = {}
        for position, key in enumerate(self.ids):
            if key in self.index:
                raise SchemaError(f'duplicate descriptor id {key!r}')
            self.index[key] = position
        self.labels = [str(label) for label in labels]
        self.vectors = vectors
        self.vectors.setflags(write=False)
        self.meta = dict(meta or {})

    @classmethod
    def from_descriptors(cls, descriptors: Sequence[Descriptor], meta=None) -> DescriptorSet:
        dims = {d.dim for d in descriptors}
        if len(dims) > 1:
            raise DomainError(f'descriptors differ in dimension: {sorted(dims)}')
        dim = dims.pop() if dims else 0
        vectors = np.array([d.vector for d in descriptors], dtype=np.float32).reshape(-1, dim)
        return cls([d.id for d in descriptors], vectors, [d.class_label for d in descriptors], meta)

    @classmethod
    def from_raw(cls, ids: Sequence[str], matrix: np.ndarray, labels: Sequence[str], meta=None) -> DescriptorSet:
        """Normalize every row of ``matrix`` (flatten readout of flat latents)."""
        return cls(ids, _unit_rows(matrix, ids), labels, meta)

    def __len__(self):
        return len(self.ids)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def descriptor(self, key: str) -> Descriptor:
        position = self.index[key]
        return Descriptor(key, self.vectors[position], self.labels[position])


@dataclass(eq=False)
class Rankings:
    query_ids: List[str]
    reference_ids: List[str]
    order: np.ndarray  # (Q, N) reference positions, best first
    scores: np.ndarray  # (Q, N) similarities in ranked order

    def ranked_ids(self, query: int) -> List[str]:
        return [self.reference_ids[i] for i in self.order[query]]


@dataclass
class ClassLabels:
    queries: List[str]
    references: List[str]

    @classmethod
    def of(cls, queries: DescriptorSet, references: DescriptorSet) -> ClassLabels:
        return cls(list(queries.labels), list(references.labels))

    def relevance(self, rankings: Rankings) -> np.ndarray:
        """(Q, N) booleans: ranked reference shares the query's class."""
        references = np.asarray(self.references, dtype=object)
        queries = np.asarray(self.queries, dtype=object)
        if len(queries) != len(rankings.query_ids) or len(references) != len(rankings.reference_ids):
            raise DomainError('labels do not line up with the rankings')
        if rankings.order.size == 0:
            return np.zeros(rankings.order.shape, dtype=bool)
        return references[rankings.order] == queries[:, None]


def _rank_queries(queries: np.ndarray, references: np.ndarray, tie_rank: np.ndarray):
    order = np.empty((len(queries), len(references)), dtype=np.int64)
    scores = np.empty((len(queries), len(references)))
    for row, query in enumerate(queries):
        sims = np.einsum('ij,j->i', references, query)
        order[row] = np.lexsort((tie_rank, -sims))
        scores[row] = sims[order[row]]
    return order, scores


def rank_all(queries: DescriptorSet, references: DescriptorSet, threads: int = 1) -> Rankings:
    """Every reference for every query, by descending cosine, ties by ascending id."""
    if len(references) == 0:
        raise DomainError('reference set is empty')
    if queries.dim != references.dim:
        raise DomainError(f'dimension mismatch: queries {queries.dim}, references {references.dim}')

    reference_matrix = references.vectors.astype(np.float64)
    query_matrix = queries.vectors.astype(np.float64)
    tie_rank = np.empty(len(references), dtype=np.int64)
    tie_rank[np.argsort(np.asarray(references.ids, dtype=object), kind='stable')] = np.arange(len(references))

    chunks = [slice(i, i + QUERIES_PER_TASK) for i in range(0, len(queries), QUERIES_PER_TASK)]
    work = lambda s: _rank_queries(query_matrix[s], reference_matrix, tie_rank)  # noqa: E731
    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, chunks))
    else:
        parts = [work(s) for s in chunks]

    if parts:
        order = np.concatenate([p[0] for p in parts])
        scores = np.concatenate([p[1] for p in parts])
    else:
        order = np.empty((0, len(references)), dtype=np.int64)
        scores = np.empty((0, len(references)))
    return Rankings(list(queries.ids), list(references.ids), order, scores)


def _valid(relevance: np.ndarray) -> np.ndarray:
    return relevance.any(axis=1)


def recall_at_k(rankings: Rankings, labels: ClassLabels, k: int) -> float:
    if k < 1:
        raise DomainError(f'K must be >= 1, got {k}')
    relevance = labels.relevance(rankings)
    valid = _valid(relevance)
    if not valid.any():
        raise DomainError('no query has a same-class reference')
    return 100.0 * float(np.mean(relevance[valid, :k].any(axis=1)))


def query_average_precision(relevant: np.ndarray) -> float:
    """Non-interpolated AP of one ranked relevance row, in [0, 1]."""
    ranks = np.flatnonzero(relevant) + 1
    if ranks.size == 0:
        return 0.0
    return float(np.mean(np.arange(1, ranks.size + 1) / ranks))


def average_precision(rankings: Rankings, labels: ClassLabels) -> float:
    relevance = labels.relevance(rankings)
    valid = _valid(relevance)
    if not valid.any():
        raise DomainError('no query has a same-class reference')
    return 100.0 * float(np.mean([query_average_precision(row) for row in relevance[valid]]))


@dataclass
class RetrievalReport:
    recall_at: Dict[int, float]
    ap_mean: float
    per_query: List[dict]
    excluded_queries: List[str]
    direction: str = DRONE_TO_SATELLITE
    meta: Dict[str, str] = field(default_factory=dict)
    schema_version: int = REPORT_SCHEMA_VERSION

    def to_dict(self) -> dict:
        return {
            'schema_version': self.schema_version,
            'direction': self.direction,
            'recall_at': {str(k): v for k, v in sorted(self.recall_at.items())},
            'ap_mean': self.ap_mean,
            'per_query': self.per_query,
            'excluded_queries': self.excluded_queries,
            'meta': self.meta,
        }


def evaluate(queries: DescriptorSet, references: DescriptorSet, ks: Sequence[int] = (1, 5, 10),
             direction: str = DRONE_TO_SATELLITE, threads: int = 1) -> RetrievalReport:
    rankings = rank_all(queries, references, threads)
    labels = ClassLabels.of(queries, references)
    relevance = labels.relevance(rankings)
    valid = _valid(relevance)

    excluded = [key for key, ok in zip(rankings.query_ids, valid) if not ok]
    if excluded:
        logger.warning('%d queries have no same-class reference and are excluded', len(excluded))

    per_query = []
    for row, key in enumerate(rankings.query_ids):
        if not valid[row]:
            continue
        per_query.append({
            'id': key,
            'label': labels.queries[row],
            'first_rank': int(np.argmax(relevance[row])) + 1,
            'ap': 100.0 * query_average_precision(relevance[row]),
        })

    meta = {f'queries.{k}': v for k, v in queries.meta.items()}
    meta.update({f'references.{k}': v for k, v in references.meta.items()})
    return RetrievalReport(
        recall_at={k: recall_at_k(rankings, labels, k) for k in ks},
        ap_mean=average_precision(rankings, labels),
        per_query=per_query,
        excluded_queries=excluded,
        direction=direction,
        meta=meta,
    )
