"""
Graph neural network for the decision TSP.

Edges carry embeddings initialized from (weight, C/n); vertices start from a
shared learned vector. For t_max iterations vertices aggregate edge messages
through EV^T and update with a layer-norm LSTM, then edges aggregate
messages from the updated vertices through EV and update likewise. Every
edge finally votes a logit; the instance prediction is the logistic of the
mean logit.
"""

from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import sparse
from scipy.special import expit

from decision_tsp.autodiff import ParamStore, Tensor, concat, matmul, reshape, sparse_matmul
from decision_tsp.exceptions import ConfigError, InvalidInstanceError, InvariantError
from decision_tsp.layers import Dense, add_lstm_params, add_mlp_params, glorot_init, lstm_cell, mlp_forward, mlp_layers

VERTEX_INIT = "vertex_init"
EDGE_INIT = "edge_init"
VERTEX_MSG = "vertex_msg"
EDGE_MSG = "edge_msg"
VERTEX_UPDATE = "vertex_update"
EDGE_UPDATE = "edge_update"
EDGE_VOTE = "edge_vote"


@dataclass
class TSPInstance:
    """
    A complete weighted graph.

    Attributes:
        weights: Symmetric n x n matrix with zero diagonal and entries in [0, 1].
        coords: Optional n x 2 city positions; weights must be their distances.
        optimal_cost: Cost of an optimal tour, if known.
    """

    weights: np.ndarray
    coords: Optional[np.ndarray] = None
    optimal_cost: Optional[float] = None

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.coords is not None:
            self.coords = np.asarray(self.coords, dtype=np.float64)
        self.validate()

    @property
    def n(self) -> int:
        return self.weights.shape[0]

    def validate(self) -> None:
        w = self.weights
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise InvalidInstanceError(f"weight matrix must be square, got shape {w.shape}")
        if w.shape[0] < 3:
            raise InvalidInstanceError(f"instance needs at least 3 cities, got {w.shape[0]}")
        if not np.all(np.isfinite(w)):
            raise InvalidInstanceError("weights must be finite")
        if not np.array_equal(w, w.T):
            raise InvalidInstanceError("weight matrix must be symmetric")
        if np.any(np.diag(w) != 0.0):
            raise InvalidInstanceError("weight matrix must have a zero diagonal")
        if w.min() < 0.0 or w.max() > 1.0:
            raise InvalidInstanceError("weights must lie in [0, 1]")
        if self.coords is not None:
            if self.coords.shape != (self.n, 2):
                raise InvalidInstanceError(f"coords must have shape ({self.n}, 2), got {self.coords.shape}")
            diff = self.coords[:, None, :] - self.coords[None, :, :]
            if not np.allclose(np.sqrt((diff ** 2).sum(axis=-1)), w, rtol=0.0, atol=1e-12):
                raise InvalidInstanceError("weights do not match euclidean distances of coords")


@dataclass
class DecisionInstance:
    """Is there a tour of cost below target_cost? label is the known answer."""

    graph: TSPInstance
    target_cost: float
    label: Optional[bool] = None

    @property
    def normalized_target(self) -> float:
        return self.target_cost / self.graph.n


@dataclass
class IncidenceMatrices:
    """
    Edge-to-vertex incidence of an undirected graph.

    S marks the lower endpoint i and T the upper endpoint j of each edge
    (i, j), i < j; EV = S + T.
    """

    S: sparse.csr_matrix
    T: sparse.csr_matrix
    EV: sparse.csr_matrix
    edges: np.ndarray
    weights: np.ndarray

    @property
    def n_edges(self) -> int:
        return self.EV.shape[0]

    @property
    def n_vertices(self) -> int:
        return self.EV.shape[1]


def complete_incidence(weights: np.ndarray) -> IncidenceMatrices:
    """Incidence of the complete graph on len(weights) >= 2 vertices, edges in lexicographic order."""
    n = weights.shape[0]
    rows, cols = np.triu_indices(n, k=1)
    m = rows.size
    index = np.arange(m)
    ones = np.ones(m)
    S = sparse.csr_matrix((ones, (index, rows)), shape=(m, n))
    T = sparse.csr_matrix((ones, (index, cols)), shape=(m, n))
    return IncidenceMatrices(S=S, T=T, EV=(S + T).tocsr(), edges=np.column_stack([rows, cols]),
                             weights=weights[rows, cols].astype(np.float64))


def build_incidence(instance: TSPInstance) -> IncidenceMatrices:
    if instance.n < 3:
        raise InvalidInstanceError(f"instance needs at least 3 cities, got {instance.n}")
    return complete_incidence(instance.weights)


@dataclass
class ModelConfig:
    """
    Sizes of the network.

    msg_sizes defaults to (d, d, d) and vote_sizes to (d, d); the message
    MLPs must end at width d. The edge-init MLP runs init_sizes as hidden
    layers followed by a linear layer of width d.
    """

    d: int = 64
    t_max: int = 32
    msg_sizes: Optional[Tuple[int, ...]] = None
    init_sizes: Tuple[int, ...] = (8, 16, 32)
    vote_sizes: Optional[Tuple[int, ...]] = None

    def __post_init__(self):
        if self.msg_sizes is None:
            self.msg_sizes = (self.d, self.d, self.d)
        if self.vote_sizes is None:
            self.vote_sizes = (self.d, self.d)
        self.msg_sizes = tuple(int(s) for s in self.msg_sizes)
        self.init_sizes = tuple(int(s) for s in self.init_sizes)
        self.vote_sizes = tuple(int(s) for s in self.vote_sizes)
        sizes = (self.d, self.t_max, *self.msg_sizes, *self.init_sizes, *self.vote_sizes)
        if any(s <= 0 for s in sizes):
            raise ConfigError(f"model sizes must be positive: {self}")
        if not self.msg_sizes or self.msg_sizes[-1] != self.d:
            raise ConfigError(f"message MLP must end at width d={self.d}, got {self.msg_sizes}")

    def to_dict(self) -> Dict:
        return {key: list(value) if isinstance(value, tuple) else value for key, value in asdict(self).items()}

    @classmethod
    def from_dict(cls, values: Dict) -> "ModelConfig":
        unknown = set(values) - {"d", "t_max", "msg_sizes", "init_sizes", "vote_sizes"}
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**{key: tuple(v) if isinstance(v, list) else v for key, v in values.items()})

    @property
    def edge_init_layers(self) -> List[Dense]:
        return mlp_layers(2, self.init_sizes, self.d)

    @property
    def msg_layers(self) -> List[Dense]:
        return mlp_layers(self.d, self.msg_sizes[:-1], self.msg_sizes[-1])

    @property
    def vote_layers(self) -> List[Dense]:
        return mlp_layers(self.d, self.vote_sizes, 1)


@dataclass
class ModelParams:
    """The learned components of the network, stored by name in one ParamStore."""

    config: ModelConfig
    store: ParamStore = field(default_factory=ParamStore)

    @classmethod
    def initialize(cls, config: ModelConfig, rng: Union[int, np.random.Generator]) -> "ModelParams":
        """Glorot weights, zero biases, layer-norm gains 1, forget-gate bias +1."""
        rng = np.random.default_rng(rng) if isinstance(rng, (int, np.integer)) else rng
        store = ParamStore()
        d = config.d
        store.add(VERTEX_INIT, glorot_init((1, d), rng))
        add_mlp_params(store, EDGE_INIT, config.edge_init_layers, rng)
        add_mlp_params(store, VERTEX_MSG, config.msg_layers, rng)
        add_mlp_params(store, EDGE_MSG, config.msg_layers, rng)
        add_lstm_params(store, VERTEX_UPDATE, d, d, rng)
        add_lstm_params(store, EDGE_UPDATE, d, d, rng)
        add_mlp_params(store, EDGE_VOTE, config.vote_layers, rng)
        return cls(config, store)

    @classmethod
    def zeros(cls, config: ModelConfig) -> "ModelParams":
        params = cls.initialize(config, 0)
        for name, tensor in params.store.items():
            tensor.data[...] = 0.0
        return params

    def expected_shapes(self) -> Dict[str, Tuple[int, ...]]:
        return {name: tensor.shape for name, tensor in self.store.items()}


@dataclass
class EmbeddingState:
    vertex: Tensor
    vertex_cell: Tensor
    edge: Tensor
    edge_cell: Tensor
    t: int = 0


@dataclass
class BatchGraph:
    """
    Disjoint union of decision instances.

    segments is a (k x |E|) matrix averaging each instance's own edge rows.
    """

    incidence: IncidenceMatrices
    edge_inputs: np.ndarray
    segments: sparse.csr_matrix
    EV_T: sparse.csr_matrix

    @property
    def size(self) -> int:
        return self.segments.shape[0]


def build_batch(batch: Sequence[DecisionInstance]) -> BatchGraph:
    if not batch:
        raise InvalidInstanceError("batch must not be empty")
    parts = [build_incidence(item.graph) for item in batch]
    S = sparse.block_diag([p.S for p in parts], format="csr")
    T = sparse.block_diag([p.T for p in parts], format="csr")
    EV = sparse.block_diag([p.EV for p in parts], format="csr")
    incidence = IncidenceMatrices(
        S=S, T=T, EV=EV,
        edges=np.vstack([p.edges + offset for p, offset in zip(parts, _vertex_offsets(batch))]),
        weights=np.concatenate([p.weights for p in parts]),
    )
    edge_inputs = np.vstack([
        np.column_stack([p.weights, np.full(p.n_edges, item.normalized_target)])
        for p, item in zip(parts, batch)
    ])

    rows, cols, vals = [], [], []
    offset = 0
    for i, p in enumerate(parts):
        rows.append(np.full(p.n_edges, i))
        cols.append(np.arange(offset, offset + p.n_edges))
        vals.append(np.full(p.n_edges, 1.0 / p.n_edges))
        offset += p.n_edges
    segments = sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(len(batch), offset),
    )
    return BatchGraph(incidence=incidence, edge_inputs=edge_inputs, segments=segments, EV_T=EV.T.tocsr())


def _vertex_offsets(batch: Sequence[DecisionInstance]) -> List[int]:
    offsets = np.cumsum([0] + [item.graph.n for item in batch])[:-1]
    return [int(o) for o in offsets]


def init_embeddings(incidence: IncidenceMatrices, normalized_target: Union[float, np.ndarray],
                    params: ModelParams) -> EmbeddingState:
    """
    Initial state: E[i] = E_init([w_i, C/n]), every vertex row = vertex_init, zero cells.

    Args:
        incidence: Incidence of one graph or of a disjoint union.
        normalized_target: C/n, scalar or one value per edge row.
        params: Model parameters.
    """
    config = params.config
    targets = np.broadcast_to(np.asarray(normalized_target, dtype=np.float64), (incidence.n_edges,))
    features = concat([incidence.weights[:, None], targets[:, None]], axis=1)
    edge = mlp_forward(features, config.edge_init_layers, params.store, EDGE_INIT)
    vertex = matmul(Tensor(np.ones((incidence.n_vertices, 1))), params.store[VERTEX_INIT])
    return EmbeddingState(
        vertex=vertex,
        vertex_cell=Tensor(np.zeros((incidence.n_vertices, config.d))),
        edge=edge,
        edge_cell=Tensor(np.zeros((incidence.n_edges, config.d))),
        t=0,
    )


def mp_iteration(state: EmbeddingState, incidence: IncidenceMatrices, params: ModelParams,
                 EV_T: Optional[sparse.csr_matrix] = None) -> EmbeddingState:
    """Vertices update from EV^T x E_msg(E), then edges from EV x V_msg(V) of the updated vertices."""
    config = params.config
    if state.t >= config.t_max:
        raise InvariantError(f"message passing already ran {state.t} of {config.t_max} iterations")
    if state.vertex.shape[0] != incidence.n_vertices or state.edge.shape[0] != incidence.n_edges:
        raise InvariantError("embedding rows do not match the incidence structure")
    EV_T = incidence.EV.T.tocsr() if EV_T is None else EV_T

    edge_messages = sparse_matmul(EV_T, mlp_forward(state.edge, config.msg_layers, params.store, EDGE_MSG))
    vertex, vertex_cell = lstm_cell(edge_messages, state.vertex, state.vertex_cell, params.store, VERTEX_UPDATE)

    vertex_messages = sparse_matmul(incidence.EV, mlp_forward(vertex, config.msg_layers, params.store, VERTEX_MSG))
    edge, edge_cell = lstm_cell(vertex_messages, state.edge, state.edge_cell, params.store, EDGE_UPDATE)

    return EmbeddingState(vertex, vertex_cell, edge, edge_cell, state.t + 1)


def edge_logits(state: EmbeddingState, params: ModelParams) -> Tensor:
    return mlp_forward(state.edge, params.config.vote_layers, params.store, EDGE_VOTE)


def mean_logit_probability(logits: np.ndarray) -> float:
    return float(expit(np.mean(logits)))


def vote(state: EmbeddingState, params: ModelParams) -> Tuple[float, np.ndarray]:
    """Probability of YES for a single-graph state, plus the raw edge logits."""
    if state.t != params.config.t_max:
        raise InvariantError(f"vote requires {params.config.t_max} iterations, state has {state.t}")
    logits = edge_logits(state, params)
    m = logits.shape[0]
    segments = sparse.csr_matrix((np.full(m, 1.0 / m), (np.zeros(m, dtype=int), np.arange(m))), shape=(1, m))
    mean = sparse_matmul(segments, logits)
    return float(expit(mean.data[0, 0])), logits.data[:, 0].copy()


def run_message_passing(graph: BatchGraph, params: ModelParams) -> EmbeddingState:
    state = init_embeddings(graph.incidence, graph.edge_inputs[:, 1], params)
    for _ in range(params.config.t_max):
        state = mp_iteration(state, graph.incidence, params, graph.EV_T)
    return state


def batch_logits(batch: Union[Sequence[DecisionInstance], BatchGraph], params: ModelParams) -> Tensor:
    """
    Mean edge logit of every instance in a disjoint-union batch, shape (k,).

    Differentiable when called under a Tape.
    """
    graph = batch if isinstance(batch, BatchGraph) else build_batch(batch)
    state = run_message_passing(graph, params)
    means = sparse_matmul(graph.segments, edge_logits(state, params))
    return reshape(means, (graph.size,))


def forward_batch(batch: Sequence[DecisionInstance], params: ModelParams) -> np.ndarray:
    """Per-instance YES probabilities of a batch; messages never cross instances."""
    return expit(batch_logits(batch, params).data)


def forward(instance: TSPInstance, target_cost: float, params: ModelParams) -> float:
    """Probability that a tour of cost below target_cost exists."""
    if not target_cost > 0:
        raise InvalidInstanceError(f"target cost must be positive, got {target_cost}")
    return float(forward_batch([DecisionInstance(instance, target_cost)], params)[0])
