"""Causal DAGs for the missingness scenarios and d-separation queries.

d-separation uses a reachability ("Bayes-ball") traversal that runs in
time linear in the graph size. :func:`d_separated_by_paths` enumerates
every simple path instead and is kept as an independent check.
"""
from collections import deque
from dataclasses import dataclass
from enum import Enum
from typing import Iterable


class ScenarioDagId(str, Enum):
    MCAR = "mcar"
    MAR = "mar"
    OA_INTERNAL = "oa_internal"
    OA_EXTERNAL = "oa_external"
    SA_INTERNAL = "sa_internal"
    SA_EXTERNAL = "sa_external"
    OA_EXTERNAL_PR = "oa_external_pr"
    SA_EXTERNAL_PR = "sa_external_pr"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        text = str(value).strip().lower().replace("-", "_")
        for member in cls:
            if text in (member.value, member.name.lower()):
                return member
        raise ValueError(f"unknown scenario {value!r}; expected one of "
                         f"{', '.join(m.value for m in cls)}")

    @property
    def is_pr(self):
        return self in (ScenarioDagId.OA_EXTERNAL_PR, ScenarioDagId.SA_EXTERNAL_PR)


POTENTIAL_RESPONSE = "cA"


class Dag:
    """Immutable directed acyclic graph with per-node observability."""

    def __init__(self, edges: Iterable, nodes: Iterable = (), unobserved: Iterable = ()):
        edge_list = [tuple(e) for e in edges]
        seen = set()
        for parent, child in edge_list:
            if parent == child:
                raise ValueError(f"self-loop on {parent!r}")
            if (parent, child) in seen:
                raise ValueError(f"duplicate edge {parent} -> {child}")
            seen.add((parent, child))
        names = list(dict.fromkeys(list(nodes) + [v for e in edge_list for v in e]))
        self._nodes = tuple(names)
        self._edges = frozenset(seen)
        self._unobserved = frozenset(unobserved)
        missing = self._unobserved - set(names)
        if missing:
            raise ValueError(f"unobserved node(s) not in graph: {sorted(missing)}")
        self._parents = {v: frozenset(p for p, c in seen if c == v) for v in names}
        self._children = {v: frozenset(c for p, c in seen if p == v) for v in names}
        self._order = self._toposort()

    def _toposort(self):
        indeg = {v: len(self._parents[v]) for v in self._nodes}
        queue = deque(v for v in self._nodes if indeg[v] == 0)
        order = []
        while queue:
            v = queue.popleft()
            order.append(v)
            for c in sorted(self._children[v]):
                indeg[c] -= 1
                if indeg[c] == 0:
                    queue.append(c)
        if len(order) != len(self._nodes):
            raise ValueError("graph contains a directed cycle")
        return tuple(order)

    @property
    def nodes(self):
        return self._nodes

    @property
    def edges(self):
        return self._edges

    @property
    def unobserved(self):
        return self._unobserved

    @property
    def observed(self):
        return frozenset(self._nodes) - self._unobserved

    def parents(self, v):
        return self._parents[v]

    def children(self, v):
        return self._children[v]

    def descendants(self, v):
        out, stack = set(), [v]
        while stack:
            for c in self._children[stack.pop()]:
                if c not in out:
                    out.add(c)
                    stack.append(c)
        return out

    def ancestors(self, nodes):
        out, stack = set(nodes), list(nodes)
        while stack:
            for p in self._parents[stack.pop()]:
                if p not in out:
                    out.add(p)
                    stack.append(p)
        return out

    def with_edge(self, parent, child):
        return Dag(set(self._edges) | {(parent, child)}, self._nodes, self._unobserved)

    def __contains__(self, v):
        return v in self._parents

    def __eq__(self, other):
        return (isinstance(other, Dag) and self._edges == other._edges
                and set(self._nodes) == set(other._nodes) and self._unobserved == other._unobserved)

    def __hash__(self):
        return hash((self._edges, frozenset(self._nodes), self._unobserved))

    def __repr__(self):
        return f"Dag(nodes={list(self._nodes)}, edges={sorted(self._edges)})"


def _check_query(g, xs, ys, zs):
    xs, ys, zs = set(xs), set(ys), set(zs)
    for v in xs | ys | zs:
        if v not in g:
            raise ValueError(f"unknown node {v!r}")
    if xs & ys or xs & zs or ys & zs:
        raise ValueError("node sets must be pairwise disjoint")
    return xs, ys, zs


def d_separated(g: Dag, xs, ys, zs=()) -> bool:
    """True iff ``zs`` blocks every path between ``xs`` and ``ys``."""
    xs, ys, zs = _check_query(g, xs, ys, zs)
    if not xs or not ys:
        return True
    anc_z = g.ancestors(zs)
    # (node, arrived_from_child): True means the ball travels up the edge.
    queue = deque((x, True) for x in xs)
    visited = set()
    while queue:
        v, up = queue.popleft()
        if (v, up) in visited:
            continue
        visited.add((v, up))
        if v not in zs and v in ys:
            return False
        if up:
            if v in zs:
                continue
            queue.extend((p, True) for p in g.parents(v))
            queue.extend((c, False) for c in g.children(v))
        else:
            if v not in zs:
                queue.extend((c, False) for c in g.children(v))
            if v in anc_z:
                queue.extend((p, True) for p in g.parents(v))
    return True


def _simple_paths(g, source, targets):
    adj = {v: g.parents(v) | g.children(v) for v in g.nodes}
    stack = [(source, [source])]
    while stack:
        v, path = stack.pop()
        for nxt in adj[v]:
            if nxt in path:
                continue
            if nxt in targets:
                yield path + [nxt]
            else:
                stack.append((nxt, path + [nxt]))


def path_blocked(g: Dag, path, zs) -> bool:
    """Blocking test for one undirected path, straight from the definition."""
    zs = set(zs)
    for i in range(1, len(path) - 1):
        prev, v, nxt = path[i - 1], path[i], path[i + 1]
        collider = prev in g.parents(v) and nxt in g.parents(v)
        if collider:
            if v not in zs and not (g.descendants(v) & zs):
                return True
        elif v in zs:
            return True
    return False


def d_separated_by_paths(g: Dag, xs, ys, zs=()) -> bool:
    """Exhaustive oracle: enumerate all simple paths and test each."""
    xs, ys, zs = _check_query(g, xs, ys, zs)
    for x in xs:
        for path in _simple_paths(g, x, ys):
            if not path_blocked(g, path, zs):
                return False
    return True


# Shared structure of every trial graph.
_CORE = [("T", "S"), ("T", "O"), ("S", "O"), ("X", "S"), ("X", "O"), ("U", "S"), ("U", "O")]

_INTO_A = {
    ScenarioDagId.MCAR: (),
    ScenarioDagId.MAR: ("S", "X"),
    ScenarioDagId.OA_INTERNAL: ("O", "X"),
    ScenarioDagId.OA_EXTERNAL: ("O", "X", "U"),
    ScenarioDagId.SA_INTERNAL: ("O", "S", "X"),
    ScenarioDagId.SA_EXTERNAL: ("O", "S", "X", "U"),
    ScenarioDagId.OA_EXTERNAL_PR: ("O", POTENTIAL_RESPONSE),
    ScenarioDagId.SA_EXTERNAL_PR: ("O", "S", POTENTIAL_RESPONSE),
}


def builtin_dag(scenario) -> Dag:
    sid = ScenarioDagId.parse(scenario)
    edges = list(_CORE) + [(p, "A") for p in _INTO_A[sid]]
    nodes = ["T", "S", "O", "X", "U", "A"]
    unobserved = {"U"}
    if sid.is_pr:
        edges += [("X", POTENTIAL_RESPONSE), ("U", POTENTIAL_RESPONSE)]
        nodes.append(POTENTIAL_RESPONSE)
        unobserved.add(POTENTIAL_RESPONSE)
    return Dag(edges, nodes, unobserved)


@dataclass(frozen=True)
class AdjustmentVerdict:
    valid: bool
    message: str

    def __bool__(self):
        return self.valid


# Elicited propensities stand in for the potential-response node.
_PROXY_NAMES = {"pa", "cpa", POTENTIAL_RESPONSE.lower()}


def _normalize_node(name, g):
    key = str(name).strip()
    low = key.lower()
    if low in _PROXY_NAMES or low.startswith("pa_"):
        return POTENTIAL_RESPONSE
    if low.startswith("x_") or low.startswith("x"):
        return "X"
    for v in g.nodes:
        if v.lower() == low:
            return v
    return key


def validate_adjustment(scenario, adjustment) -> AdjustmentVerdict:
    """Check that T and A are d-separated by the adjustment set plus O.

    Covariate names (``x``, ``x_age``, ``age1``...) map onto the single
    node X; ``pa``/``pa_xx`` map onto the potential-response node, which
    is allowed only in the elicited-propensity scenarios.
    """
    sid = ScenarioDagId.parse(scenario)
    g = builtin_dag(sid)
    nodes = {_normalize_node(v, g) for v in adjustment}
    for v in nodes:
        if v not in g:
            raise ValueError(f"unknown node {v!r} for scenario {sid.value}")
        if v in ("T", "A", "O"):
            raise ValueError(f"{v} cannot be part of the adjustment set")
        if v in g.unobserved and v != POTENTIAL_RESPONSE:
            raise ValueError(f"{v} is unobserved and cannot be adjusted for")
    listed = ", ".join(sorted(nodes)) or "(empty)"
    if d_separated(g, {"T"}, {"A"}, nodes | {"O"}):
        return AdjustmentVerdict(True, f"{{{listed}}} with O d-separates T from A in {sid.value}")
    return AdjustmentVerdict(
        False, f"{{{listed}}} with O does not d-separate T from A in {sid.value}; "
               "estimators relying on T independent of A given W, O would be biased")


def parse_dag_text(text: str) -> Dag:
    """Parse ``parent -> child`` lines; ``unobserved: U, V`` marks latent nodes.

    Chains such as ``A -> B -> C`` and ``#`` comments are accepted.
    """
    edges, unobserved, nodes = [], set(), []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.lower().startswith("unobserved:"):
            unobserved.update(v.strip() for v in line.split(":", 1)[1].split(",") if v.strip())
            continue
        if line.lower().startswith("nodes:"):
            nodes.extend(v.strip() for v in line.split(":", 1)[1].split(",") if v.strip())
            continue
        parts = [p.strip() for p in line.split("->")]
        if len(parts) < 2 or any(not p for p in parts):
            raise ValueError(f"line {lineno}: expected 'parent -> child', got {raw!r}")
        edges.extend(zip(parts[:-1], parts[1:]))
    return Dag(edges, nodes, unobserved)


def dag_to_text(g: Dag) -> str:
    lines = [f"{p} -> {c}" for p, c in sorted(g.edges)]
    isolated = [v for v in g.nodes if not g.parents(v) and not g.children(v)]
    if isolated:
        lines.append("nodes: " + ", ".join(isolated))
    if g.unobserved:
        lines.append("unobserved: " + ", ".join(sorted(g.unobserved)))
    return "\n".join(lines) + "\n"
