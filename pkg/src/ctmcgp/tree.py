"""Rooted binary phylogenies with branch lengths.

Node numbering: tips are ``0..N-1``, internal nodes ``N..2N-2`` and the
root is ``2N-2``. Internal nodes are numbered so that every node has a
smaller index than its parent, which makes ``range(N, 2N-1)`` a valid
post-order over internal nodes.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InputError

__all__ = ["Phylogeny", "yule_tree", "caterpillar_tree", "random_tree"]


@dataclass(frozen=True, eq=False)
class Phylogeny:
    """A fixed rooted binary tree.

    Attributes
    ----------
    parent : ndarray of int, shape (2N-1,)
        Parent of each node; ``-1`` for the root.
    children : ndarray of int, shape (2N-1, 2)
        Children of each node; ``-1`` rows for tips.
    branch_length : ndarray, shape (2N-1,)
        Length of the branch above each node (0 for the root).
    tip_labels : tuple of str
    """

    parent: np.ndarray
    children: np.ndarray
    branch_length: np.ndarray
    tip_labels: tuple

    def __post_init__(self):
        parent = np.asarray(self.parent, dtype=np.int64)
        children = np.asarray(self.children, dtype=np.int64).reshape(-1, 2)
        lengths = np.asarray(self.branch_length, dtype=float)
        labels = tuple(str(x) for x in self.tip_labels)
        n = parent.size
        N = len(labels)
        if n != 2 * N - 1 or children.shape[0] != n or lengths.shape != (n,):
            raise InputError(
                f"inconsistent tree arrays: {N} tips need {2 * N - 1} nodes, "
                f"got parent {parent.shape}, children {children.shape}, lengths {lengths.shape}")
        if N < 1:
            raise InputError("a tree needs at least one tip")
        if len(set(labels)) != N:
            raise InputError("tip labels are not unique")
        root = n - 1
        if parent[root] != -1:
            raise InputError(f"node {root} must be the root")
        if np.any(~np.isfinite(lengths)) or np.any(lengths < 0):
            raise InputError("branch lengths must be finite and nonnegative")
        if np.any(children[:N] != -1):
            raise InputError("tips cannot have children")
        for v in range(N, n):
            a, b = children[v]
            if not (0 <= a < v and 0 <= b < v and a != b):
                raise InputError(f"internal node {v} must have two distinct children with smaller indices")
            if parent[a] != v or parent[b] != v:
                raise InputError(f"parent/children disagree at node {v}")
        for v in range(root):
            p = parent[v]
            if not (v < p <= root) or v not in children[p]:
                raise InputError(f"node {v} has an invalid parent {p}")
        lengths = lengths.copy()
        lengths[root] = 0.0
        for name, arr in (("parent", parent), ("children", children), ("branch_length", lengths)):
            arr = arr.copy()
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "tip_labels", labels)

    @property
    def n_tips(self):
        return len(self.tip_labels)

    @property
    def n_nodes(self):
        return self.parent.size

    @property
    def root(self):
        return self.n_nodes - 1

    def postorder(self):
        return range(self.n_nodes)

    def preorder(self):
        return range(self.n_nodes - 1, -1, -1)

    def sibling(self, v):
        a, b = self.children[self.parent[v]]
        return b if a == v else a

    def tip_index(self, label):
        try:
            return self.tip_labels.index(label)
        except ValueError:
            raise InputError(f"unknown taxon {label!r}") from None

    def heights(self):
        """Distance from the root to every node."""
        h = np.zeros(self.n_nodes)
        for v in self.preorder():
            if v != self.root:
                h[v] = h[self.parent[v]] + self.branch_length[v]
        return h

    def with_branch_lengths(self, lengths):
        return Phylogeny(self.parent, self.children, lengths, self.tip_labels)

    def scaled(self, factor):
        return self.with_branch_lengths(self.branch_length * factor)

    @classmethod
    def from_clades(cls, clades, lengths, labels):
        """Build from a list of ``(left, right)`` child pairs in post-order.

        ``clades[k]`` defines internal node ``N + k``; ``lengths`` holds the
        branch length above every node in final numbering.
        """
        N = len(labels)
        n = 2 * N - 1
        parent = np.full(n, -1, dtype=np.int64)
        children = np.full((n, 2), -1, dtype=np.int64)
        for k, (a, b) in enumerate(clades):
            v = N + k
            children[v] = (a, b)
            parent[a] = v
            parent[b] = v
        return cls(parent, children, lengths, labels)


def _relabel(merges, N, lengths_by_key, labels):
    """Turn a merge history over arbitrary node keys into canonical numbering."""
    index = {("tip", k): k for k in range(N)}
    clades = []
    for key, (a, b) in merges:
        index[key] = N + len(clades)
        clades.append((index[a], index[b]))
    lengths = np.zeros(2 * N - 1)
    for key, length in lengths_by_key.items():
        lengths[index[key]] = length
    return Phylogeny.from_clades(clades, lengths, labels)


def yule_tree(n_tips, rng, height=1.0, labels=None):
    """Ultrametric pure-birth tree rescaled to the given root-to-tip height."""
    if n_tips < 1:
        raise InputError("n_tips must be positive")
    labels = labels or tuple(f"t{k + 1}" for k in range(n_tips))
    if n_tips == 1:
        return Phylogeny([-1], [[-1, -1]], [0.0], labels)
    # Generate backwards in time: with k lineages the waiting time to the
    # previous split is Exp(k); merge two random lineages at each split.
    lineages = [("tip", k) for k in range(n_tips)]
    node_time = {key: 0.0 for key in lineages}
    merges = []
    t = 0.0
    for k in range(n_tips, 1, -1):
        t += rng.exponential(1.0 / k)
        i, j = rng.choice(len(lineages), size=2, replace=False)
        a, b = lineages[i], lineages[j]
        key = ("node", len(merges))
        merges.append((key, (a, b)))
        node_time[key] = t
        lineages = [x for m, x in enumerate(lineages) if m not in (i, j)] + [key]
    parent_of = {}
    for key, (a, b) in merges:
        parent_of[a] = key
        parent_of[b] = key
    scale = height / t
    lengths = {key: (node_time[p] - node_time[key]) * scale for key, p in parent_of.items()}
    return _relabel(merges, n_tips, lengths, labels)


def random_tree(n_tips, rng, max_length=2.0, labels=None):
    """Random topology with independent uniform(0, max_length) branch lengths."""
    labels = labels or tuple(f"t{k + 1}" for k in range(n_tips))
    if n_tips == 1:
        return Phylogeny([-1], [[-1, -1]], [0.0], labels)
    lineages = [("tip", k) for k in range(n_tips)]
    merges = []
    while len(lineages) > 1:
        i, j = rng.choice(len(lineages), size=2, replace=False)
        key = ("node", len(merges))
        merges.append((key, (lineages[i], lineages[j])))
        lineages = [x for m, x in enumerate(lineages) if m not in (i, j)] + [key]
    keys = [("tip", k) for k in range(n_tips)] + [key for key, _ in merges[:-1]]
    lengths = {key: rng.uniform(0.0, max_length) for key in keys}
    return _relabel(merges, n_tips, lengths, labels)


def caterpillar_tree(intervals, labels=None):
    """Path-shaped tree reproducing a sequence of observations.

    Tip ``k`` hangs off the spine with a zero-length branch; consecutive
    spine nodes are separated by ``intervals[k-1]``. With ``n`` observations
    the tips are numbered in observation order.
    """
    intervals = np.asarray(intervals, dtype=float)
    n = intervals.size + 1
    labels = labels or tuple(f"x{k + 1}" for k in range(n))
    if n == 1:
        return Phylogeny([-1], [[-1, -1]], [0.0], labels)
    # Build bottom-up: the deepest internal node joins the last two tips.
    lengths = np.zeros(2 * n - 1)
    clades = [(n - 2, n - 1)]
    lengths[n - 2] = 0.0
    lengths[n - 1] = intervals[-1]
    for k in range(n - 3, -1, -1):
        below = n + len(clades) - 1
        clades.append((k, below))
        lengths[k] = 0.0
        lengths[below] = intervals[k]
    return Phylogeny.from_clades(clades, lengths, labels)
