"""Thread-level decoding of Good/Bad labels.

Given per-comment Good/Bad probabilities and per-pair same-label
probabilities, the decoders here pick a joint labeling:

* :func:`local_decode`: independent argmax.
* :func:`graph_cut_decode`: exact minimizer of the partition cost
  ``lam * [sum_{i in G} s_iB + sum_{i in B} s_iG] + (1 - lam) * sum_{i in G, j in B} s_ij``
  through a minimum s-t cut.
* :func:`ilp_decode`: exact minimizer of the -log-probability assignment
  cost with XOR-consistent pair variables, by branch and bound.

Comment indices are 0-based throughout.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterable, Mapping, Sequence

import numpy as np

from .corpus import BAD, GOOD
from .exceptions import InferenceError

EPSILON = 1e-6
FLOW_TOL = 1e-12
ORACLE_LIMIT = 20
DEFAULT_NODE_BUDGET = 10**7

LOCAL, CUT, ILP, BRUTE_CUT, BRUTE_ILP = "local", "cut", "ilp", "brute_cut", "brute_ilp"
DECODERS = (LOCAL, CUT, ILP)


@dataclass(frozen=True, eq=False)
class ThreadScores:
    """Floored local and pairwise probabilities for one thread.

    ``local`` has shape ``(n, 2)`` with columns ``(s_G, s_B)``; ``pairwise`` is a
    symmetric ``(n, n)`` matrix of same-label probabilities (diagonal unused).
    """

    local: np.ndarray
    pairwise: np.ndarray
    question_id: str = ""

    def __post_init__(self):
        local = np.asarray(self.local, dtype=np.float64)
        pairwise = np.asarray(self.pairwise, dtype=np.float64)
        n = local.shape[0] if local.ndim == 2 else -1
        if local.ndim != 2 or local.shape[1] != 2:
            raise ValueError(f"local scores must have shape (n, 2), got {local.shape}")
        if pairwise.shape != (n, n):
            raise ValueError(f"pairwise scores must have shape ({n}, {n}), got {pairwise.shape}")
        if not np.allclose(pairwise, pairwise.T, rtol=0, atol=1e-12):
            raise ValueError("pairwise scores must be symmetric")
        local.setflags(write=False)
        pairwise.setflags(write=False)
        object.__setattr__(self, "local", local)
        object.__setattr__(self, "pairwise", pairwise)

    @property
    def n(self) -> int:
        return self.local.shape[0]

    @property
    def good(self) -> np.ndarray:
        return self.local[:, 0]

    @property
    def bad(self) -> np.ndarray:
        return self.local[:, 1]

    @classmethod
    def from_probabilities(
        cls,
        s_good: Sequence[float],
        pairwise: Mapping[tuple[int, int], float] | np.ndarray | None = None,
        epsilon: float = EPSILON,
        question_id: str = "",
        s_bad: Sequence[float] | None = None,
    ) -> "ThreadScores":
        """Build scores, clipping every probability into ``[epsilon, 1 - epsilon]``.

        ``pairwise`` may be a dict keyed by ``(i, j)`` with ``i < j`` or a
        symmetric matrix.  Missing pairs default to 0.5.
        """
        s_good = np.asarray(s_good, dtype=np.float64)
        n = len(s_good)
        if s_bad is None:
            s_bad = 1.0 - s_good
        else:
            s_bad = np.asarray(s_bad, dtype=np.float64)
            if s_bad.shape != s_good.shape or np.any(np.abs(s_good + s_bad - 1.0) > 1e-6):
                raise ValueError("local scores s_G + s_B must sum to 1")
        _check_probs(s_good, "local")
        if pairwise is None:
            mat = np.full((n, n), 0.5)
        elif isinstance(pairwise, Mapping):
            mat = np.full((n, n), 0.5)
            for (i, j), p in pairwise.items():
                if not 0 <= i < j < n:
                    raise ValueError(f"pair ({i}, {j}) out of range for n={n}")
                mat[i, j] = mat[j, i] = p
        else:
            mat = np.array(pairwise, dtype=np.float64)
        _check_probs(mat, "pairwise")
        lo, hi = epsilon, 1.0 - epsilon
        local = np.column_stack([np.clip(s_good, lo, hi), np.clip(s_bad, lo, hi)])
        np.fill_diagonal(mat, 0.5)
        return cls(local.reshape(n, 2), np.clip(mat, lo, hi), question_id)

    def permuted(self, order: Sequence[int]) -> "ThreadScores":
        """Scores with comments reordered so that new position k is old ``order[k]``."""
        order = np.asarray(order)
        return ThreadScores(self.local[order], self.pairwise[np.ix_(order, order)], self.question_id)


def _check_probs(a: np.ndarray, what: str):
    if a.size and (not np.all(np.isfinite(a)) or a.min() < 0.0 or a.max() > 1.0):
        raise ValueError(f"{what} scores must be probabilities in [0, 1]")


@dataclass(frozen=True)
class InferenceConfig:
    lam: float = 0.95
    tie_break: str = "prefer_good"
    epsilon: float = EPSILON
    node_budget: int = DEFAULT_NODE_BUDGET

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda must lie in [0, 1], got {self.lam}")
        if self.tie_break != "prefer_good":
            raise ValueError(f"unsupported tie_break {self.tie_break!r}")


@dataclass(frozen=True)
class LabelAssignment:
    labels: tuple[str, ...]
    objective_value: float
    decoder: str

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def is_good(self) -> np.ndarray:
        return np.array([lab == GOOD for lab in self.labels], dtype=bool)


def _labels(is_good: Iterable[bool]) -> tuple[str, ...]:
    return tuple(GOOD if g else BAD for g in is_good)


def _as_bad_mask(labels) -> np.ndarray:
    if isinstance(labels, LabelAssignment):
        labels = labels.labels
    return np.array([lab == BAD for lab in labels], dtype=bool)


def partition_cost(labels, scores: ThreadScores, cfg: InferenceConfig) -> float:
    """Partition cost of a labeling: misclassification mass plus cut pair mass."""
    bad = _as_bad_mask(labels)
    if len(bad) != scores.n:
        raise ValueError(f"{len(bad)} labels for {scores.n} comments")
    local = float(np.sum(np.where(bad, scores.good, scores.bad)))
    cross = bad[:, None] != bad[None, :]
    pair = float(np.sum(np.triu(scores.pairwise * cross, k=1)))
    return cfg.lam * local + (1.0 - cfg.lam) * pair


def _ilp_costs(scores: ThreadScores, eps: float):
    lo, hi = eps, 1.0 - eps
    cost_good = -np.log(np.clip(scores.good, lo, hi))
    cost_bad = -np.log(np.clip(scores.bad, lo, hi))
    p = np.clip(scores.pairwise, lo, hi)
    return cost_good, cost_bad, -np.log(p), -np.log1p(-p)


def assignment_cost(labels, scores: ThreadScores, cfg: InferenceConfig) -> float:
    """-log-probability cost of the assignment implied by a comment labeling.

    Pair variables follow from the labels (same iff equal labels), so the
    XOR consistency constraints hold by construction.
    """
    bad = _as_bad_mask(labels)
    if len(bad) != scores.n:
        raise ValueError(f"{len(bad)} labels for {scores.n} comments")
    cg, cb, cs, cd = _ilp_costs(scores, cfg.epsilon)
    local = float(np.sum(np.where(bad, cb, cg)))
    same = bad[:, None] == bad[None, :]
    pair = float(np.sum(np.triu(np.where(same, cs, cd), k=1)))
    return cfg.lam * local + (1.0 - cfg.lam) * pair


def local_decode(scores: ThreadScores, cfg: InferenceConfig | None = None) -> LabelAssignment:
    cfg = cfg or InferenceConfig(lam=1.0)
    labels = _labels(scores.good >= scores.bad)
    return LabelAssignment(labels, partition_cost(labels, scores, cfg), LOCAL)


# -- max-flow -----------------------------------------------------------------


@dataclass
class FlowNetwork:
    """Directed network given as a dense capacity matrix."""

    capacity: list[list[float]]
    source: int
    sink: int
    meta: dict = field(default_factory=dict)

    @property
    def n_nodes(self) -> int:
        return len(self.capacity)

    @classmethod
    def from_scores(cls, scores: ThreadScores, lam: float) -> "FlowNetwork":
        """Comments are nodes ``0..n-1``; the source is ``n`` and the sink ``n + 1``."""
        n = scores.n
        s, t = n, n + 1
        cap = [[0.0] * (n + 2) for _ in range(n + 2)]
        for i in range(n):
            cap[s][i] = lam * float(scores.good[i])
            cap[i][t] = lam * float(scores.bad[i])
        w = (1.0 - lam) * scores.pairwise
        for i, j in combinations(range(n), 2):
            cap[i][j] = cap[j][i] = float(w[i, j])
        return cls(cap, s, t)


def cut_capacity(net: FlowNetwork, source_side: Iterable[int]) -> float:
    side = set(source_side)
    return sum(
        net.capacity[u][v]
        for u in side
        for v in range(net.n_nodes)
        if v not in side and net.capacity[u][v] > 0.0
    )


def max_flow(net: FlowNetwork) -> tuple[float, set[int]]:
    """Highest-label push-relabel with the gap heuristic.

    Returns the flow value and the set of nodes reachable from the source in
    the final residual network (the source side of a minimum cut).
    """
    N = net.n_nodes
    s, t = net.source, net.sink
    for row in net.capacity:
        if any(c < 0 for c in row):
            raise ValueError("capacities must be non-negative")
    res = [row[:] for row in net.capacity]
    nbrs = [
        [v for v in range(N) if v != u and (net.capacity[u][v] > 0 or net.capacity[v][u] > 0)]
        for u in range(N)
    ]
    height = [0] * N
    height[s] = N
    excess = [0.0] * N
    count = [0] * (2 * N + 1)
    count[0] = N - 1
    count[N] += 1
    buckets: list[list[int]] = [[] for _ in range(2 * N + 1)]
    active = [False] * N
    current = [0] * N

    top = 0

    def activate(v):
        nonlocal top
        if v != s and v != t and not active[v] and excess[v] > FLOW_TOL:
            active[v] = True
            buckets[height[v]].append(v)
            top = max(top, height[v])

    for v in nbrs[s]:
        c = res[s][v]
        if c > 0:
            res[s][v] -= c
            res[v][s] += c
            excess[v] += c
            excess[s] -= c
            activate(v)

    # Pushes only go one level down, so after popping from the highest
    # bucket every newly activated node sits below it.
    while True:
        while top >= 0 and not buckets[top]:
            top -= 1
        if top < 0:
            break
        u = buckets[top].pop()
        active[u] = False
        adj = nbrs[u]
        while excess[u] > FLOW_TOL:
            if current[u] < len(adj):
                v = adj[current[u]]
                r = res[u][v]
                if r > FLOW_TOL and height[u] == height[v] + 1:
                    delta = excess[u] if excess[u] < r else r
                    res[u][v] -= delta
                    res[v][u] += delta
                    excess[u] -= delta
                    excess[v] += delta
                    activate(v)
                else:
                    current[u] += 1
                continue
            old = height[u]
            new = min(height[v] for v in adj if res[u][v] > FLOW_TOL) + 1
            count[old] -= 1
            if count[old] == 0 and old < N:
                # gap: nodes above it can no longer reach the sink
                for w in range(N):
                    if w != s and old < height[w] < N:
                        count[height[w]] -= 1
                        height[w] = N + 1
                        count[N + 1] += 1
                new = max(new, N + 1)
            height[u] = new
            count[new] += 1
            current[u] = 0

    source_side = {s}
    queue = deque([s])
    while queue:
        u = queue.popleft()
        for v in nbrs[u]:
            if v not in source_side and res[u][v] > FLOW_TOL:
                source_side.add(v)
                queue.append(v)
    return excess[t], source_side


def graph_cut_decode(scores: ThreadScores, cfg: InferenceConfig | None = None) -> LabelAssignment:
    """Exact partition-cost minimizer; source-side comments are Good."""
    cfg = cfg or InferenceConfig()
    net = FlowNetwork.from_scores(scores, cfg.lam)
    _, side = max_flow(net)
    labels = _labels(i in side for i in range(scores.n))
    return LabelAssignment(labels, partition_cost(labels, scores, cfg), CUT)


# -- ILP by branch and bound ----------------------------------------------------


def ilp_decode(scores: ThreadScores, cfg: InferenceConfig | None = None) -> LabelAssignment:
    """Exact minimizer of the assignment cost by depth-first branch and bound.

    Only comment labels are branched on; pair variables are implied by XOR
    consistency.  Comments are expanded by decreasing ``|c_iG - c_iB|`` and
    the cheaper label is tried first.  The lower bound adds, for everything
    undecided, the cheaper of its two options.
    """
    cfg = cfg or InferenceConfig()
    n = scores.n
    if n == 0:
        return LabelAssignment((), 0.0, ILP)
    lam, mu = cfg.lam, 1.0 - cfg.lam
    cg, cb, cs, cd = _ilp_costs(scores, cfg.epsilon)
    order = sorted(range(n), key=lambda i: (-abs(cg[i] - cb[i]), i))
    # reindex everything into expansion order
    lg = [lam * float(cg[i]) for i in order]
    lb = [lam * float(cb[i]) for i in order]
    ps = [[mu * float(cs[a, b]) for b in order] for a in order]
    pd = [[mu * float(cd[a, b]) for b in order] for a in order]
    # remaining[k]: optimistic cost of everything introduced at depth >= k
    remaining = [0.0] * (n + 1)
    for k in range(n - 1, -1, -1):
        pairs = sum(min(ps[m][k], pd[m][k]) for m in range(k))
        remaining[k] = remaining[k + 1] + min(lg[k], lb[k]) + pairs

    # greedy incumbent: local argmax in expansion order
    best_bad = [lb[k] < lg[k] for k in range(n)]
    best_cost = _ordered_cost(best_bad, lg, lb, ps, pd)
    assign = [False] * n
    nodes = 0

    def search(k: int, acc: float):
        nonlocal best_cost, best_bad, nodes
        nodes += 1
        if nodes > cfg.node_budget:
            raise InferenceError(f"ILP node budget of {cfg.node_budget} exceeded (n={n})")
        if k == n:
            if acc < best_cost:
                best_cost = acc
                best_bad = assign[:]
            return
        options = []
        for is_bad in (False, True):
            step = lb[k] if is_bad else lg[k]
            for m in range(k):
                step += ps[m][k] if assign[m] == is_bad else pd[m][k]
            options.append((step, is_bad))
        options.sort(key=lambda o: o[0])
        for step, is_bad in options:
            if acc + step + remaining[k + 1] >= best_cost:
                continue
            assign[k] = is_bad
            search(k + 1, acc + step)

    search(0, 0.0)
    bad = [False] * n
    for pos, i in enumerate(order):
        bad[i] = best_bad[pos]
    labels = _labels(not b for b in bad)
    return LabelAssignment(labels, assignment_cost(labels, scores, cfg), ILP)


def _ordered_cost(bad, lg, lb, ps, pd) -> float:
    total = 0.0
    for k in range(len(bad)):
        total += lb[k] if bad[k] else lg[k]
        for m in range(k):
            total += ps[m][k] if bad[m] == bad[k] else pd[m][k]
    return total


# -- exhaustive oracles -----------------------------------------------------


def _all_labelings(n: int) -> np.ndarray:
    """Rows enumerate all labelings in lexicographic order (0 = Good < 1 = Bad)."""
    if n > ORACLE_LIMIT:
        raise InferenceError(f"oracle limit: n={n} exceeds {ORACLE_LIMIT}")
    idx = np.arange(2**n, dtype=np.int64)
    return ((idx[:, None] >> np.arange(n - 1, -1, -1)) & 1).astype(bool)


def _brute(scores, cfg, pair_same, pair_diff, loc_good, loc_bad, decoder, evaluate):
    n = scores.n
    B = _all_labelings(n)
    total = cfg.lam * (np.where(B, loc_bad, loc_good).sum(axis=1) if n else np.zeros(1))
    for i, j in combinations(range(n), 2):
        differ = B[:, i] != B[:, j]
        total = total + (1.0 - cfg.lam) * np.where(differ, pair_diff[i, j], pair_same[i, j])
    best = int(np.argmin(total))
    labels = _labels(~B[best])
    return LabelAssignment(labels, evaluate(labels, scores, cfg), decoder)


def brute_force_cut_decode(scores: ThreadScores, cfg: InferenceConfig | None = None) -> LabelAssignment:
    cfg = cfg or InferenceConfig()
    zeros = np.zeros_like(scores.pairwise)
    # Good pays s_B, Bad pays s_G
    return _brute(
        scores, cfg, zeros, scores.pairwise, scores.bad, scores.good, BRUTE_CUT, partition_cost
    )


def brute_force_ilp_decode(scores: ThreadScores, cfg: InferenceConfig | None = None) -> LabelAssignment:
    cfg = cfg or InferenceConfig()
    cg, cb, cs, cd = _ilp_costs(scores, cfg.epsilon)
    return _brute(scores, cfg, cs, cd, cg, cb, BRUTE_ILP, assignment_cost)


def decode(scores: ThreadScores, decoder: str, cfg: InferenceConfig | None = None) -> LabelAssignment:
    cfg = cfg or InferenceConfig()
    if decoder == LOCAL:
        return local_decode(scores, cfg)
    if decoder == CUT:
        return graph_cut_decode(scores, cfg)
    if decoder == ILP:
        return ilp_decode(scores, cfg)
    if decoder == BRUTE_CUT:
        return brute_force_cut_decode(scores, cfg)
    if decoder == BRUTE_ILP:
        return brute_force_ilp_decode(scores, cfg)
    raise ValueError(f"unknown decoder {decoder!r}")


# -- scores interchange ----------------------------------------------------------


def scores_to_dict(scores: ThreadScores) -> dict:
    return {
        "question_id": scores.question_id,
        "local": [[float(g), float(b)] for g, b in scores.local],
        "pairwise": {
            f"{i},{j}": float(scores.pairwise[i, j]) for i, j in combinations(range(scores.n), 2)
        },
    }


def scores_from_dict(doc: Mapping, epsilon: float = EPSILON) -> ThreadScores:
    try:
        local = np.asarray(doc["local"], dtype=np.float64).reshape(-1, 2)
        pairs = {}
        for key, p in doc.get("pairwise", {}).items():
            i, j = (int(x) for x in key.split(","))
            pairs[(i, j)] = float(p)
        return ThreadScores.from_probabilities(
            local[:, 0], pairs, epsilon, str(doc.get("question_id", "")), s_bad=local[:, 1]
        )
    except (KeyError, ValueError, TypeError) as exc:
        raise ValueError(f"invalid scores record: {exc}") from None


def write_scores_jsonl(all_scores: Iterable[ThreadScores]) -> bytes:
    return "".join(json.dumps(scores_to_dict(s)) + "\n" for s in all_scores).encode("utf-8")


def read_scores_jsonl(data: bytes, epsilon: float = EPSILON) -> list[ThreadScores]:
    out = []
    for lineno, line in enumerate(data.decode("utf-8").split("\n"), 1):
        if not line.strip():
            continue
        try:
            out.append(scores_from_dict(json.loads(line), epsilon))
        except (json.JSONDecodeError, ValueError) as exc:
            raise ValueError(f"scores line {lineno}: {exc}") from None
    return out
