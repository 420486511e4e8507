"""Dense-matrix reverse-mode automatic differentiation.

A :class:`Tape` is built per forward pass (define-by-run). Values are 2-D
float64 matrices; scalars are ``(1, 1)`` matrices. Broadcasting in the
elementwise ops is limited to scalar-with-matrix. Backward visits nodes in
reverse creation order exactly once; the first adjoint contribution to a
node is written directly (no zero-filled buffers), later ones accumulate.
The pass is deterministic for a fixed graph.

The numeric work is delegated to the active kernel backend (compiled
extension or numpy fallback, see :mod:`cobex.kernels`).
"""

import numpy as np

from cobex import kernels
from cobex.errors import (
    ContractError,
    InvalidCandidateSetError,
    MathDomainError,
    ShapeError,
)

_SCALAR = (1, 1)


def as_matrix(data):
    """Coerce to a C-contiguous float64 2-D array without copying if possible."""
    arr = np.ascontiguousarray(data, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise ShapeError(f"expected a matrix, got ndim={arr.ndim}")
    return arr


class Value:
    """One tape node: cached forward value plus its local backward closure."""

    __slots__ = ("data", "_idx", "_parents", "_bwd", "_track", "tape")

    def __init__(self, data, idx, parents, bwd, track, tape):
        self.data = data
        self._idx = idx
        self._parents = parents
        self._bwd = bwd
        self._track = track
        self.tape = tape

    @property
    def shape(self):
        return self.data.shape

    def item(self):
        if self.data.shape != _SCALAR:
            raise ContractError(f"item() on non-scalar value of shape {self.data.shape}")
        return float(self.data[0, 0])

    def __repr__(self):
        return f"Value(shape={self.data.shape}, idx={self._idx})"


def _scalar_acc(adj, node, contribution):
    """Accumulate into a (1, 1) adjoint."""
    cur = adj[node._idx]
    if cur is None:
        adj[node._idx] = np.array([[contribution]])
    else:
        cur[0, 0] += contribution


class Tape:
    """Ordered DAG of values; inputs of a node always precede it."""

    def __init__(self):
        self._nodes = []
        self.leaves = []

    def __len__(self):
        return len(self._nodes)

    # -- node creation -------------------------------------------------

    def _append(self, data, parents=(), bwd=None):
        track = any(p._track for p in parents)
        node = Value(data, len(self._nodes), parents, bwd if track else None, track, self)
        self._nodes.append(node)
        return node

    def leaf(self, data):
        """A differentiable input (parameters); gradients are reported for it."""
        arr = as_matrix(data)
        if not np.isfinite(arr).all():
            raise MathDomainError("leaf contains non-finite entries")
        node = Value(arr, len(self._nodes), (), None, True, self)
        self._nodes.append(node)
        self.leaves.append(node)
        return node

    def const(self, data):
        """A non-differentiable input; no adjoint is tracked for it."""
        node = Value(as_matrix(data), len(self._nodes), (), None, False, self)
        self._nodes.append(node)
        return node

    # -- ops -----------------------------------------------------------

    def matmul(self, a, b):
        if a.data.shape[1] != b.data.shape[0]:
            raise ShapeError(f"matmul: {a.data.shape} x {b.data.shape}")
        K = kernels.backend

        def bwd(dy, adj):
            if a._track:
                adj[a._idx] = K.matmul_acc_da(dy, b.data, adj[a._idx])
            if b._track:
                adj[b._idx] = K.matmul_acc_db(a.data, dy, adj[b._idx])

        return self._append(K.matmul(a.data, b.data), (a, b), bwd)

    def _elementwise_pair(self, a, b, op):
        """add/sub/mul with equal shapes or scalar-with-matrix broadcast."""
        K = kernels.backend
        sa, sb = a.data.shape, b.data.shape
        if sa == sb:
            data = getattr(K, op)(a.data, b.data)

            def bwd(dy, adj):
                if a._track:
                    if op == "mul":
                        adj[a._idx] = K.acc(adj[a._idx], K.mul(dy, b.data))
                    else:
                        adj[a._idx] = K.acc(adj[a._idx], dy)
                if b._track:
                    if op == "mul":
                        adj[b._idx] = K.acc(adj[b._idx], K.mul(dy, a.data))
                    elif op == "sub":
                        adj[b._idx] = K.acc_scaled(adj[b._idx], dy, -1.0)
                    else:
                        adj[b._idx] = K.acc(adj[b._idx], dy)

        elif sb == _SCALAR:
            s = float(b.data[0, 0])
            if op == "add":
                data = K.scalar_add(a.data, s)
            elif op == "sub":
                data = K.scalar_add(a.data, -s)
            else:
                data = K.scalar_mul(a.data, s)

            def bwd(dy, adj):
                if a._track:
                    if op == "mul":
                        adj[a._idx] = K.acc_scaled(adj[a._idx], dy, s)
                    else:
                        adj[a._idx] = K.acc(adj[a._idx], dy)
                if b._track:
                    if op == "mul":
                        _scalar_acc(adj, b, K.sum_all(K.mul(dy, a.data)))
                    elif op == "sub":
                        _scalar_acc(adj, b, -K.sum_all(dy))
                    else:
                        _scalar_acc(adj, b, K.sum_all(dy))

        elif sa == _SCALAR:
            s = float(a.data[0, 0])
            if op == "add":
                data = K.scalar_add(b.data, s)
            elif op == "sub":
                data = K.scalar_add(K.scalar_mul(b.data, -1.0), s)
            else:
                data = K.scalar_mul(b.data, s)

            def bwd(dy, adj):
                if b._track:
                    if op == "mul":
                        adj[b._idx] = K.acc_scaled(adj[b._idx], dy, s)
                    elif op == "sub":
                        adj[b._idx] = K.acc_scaled(adj[b._idx], dy, -1.0)
                    else:
                        adj[b._idx] = K.acc(adj[b._idx], dy)
                if a._track:
                    if op == "mul":
                        _scalar_acc(adj, a, K.sum_all(K.mul(dy, b.data)))
                    else:
                        _scalar_acc(adj, a, K.sum_all(dy))

        else:
            raise ShapeError(f"{op}: incompatible shapes {sa} and {sb}")
        return self._append(data, (a, b), bwd)

    def add(self, a, b):
        return self._elementwise_pair(a, b, "add")

    def sub(self, a, b):
        return self._elementwise_pair(a, b, "sub")

    def mul(self, a, b):
        return self._elementwise_pair(a, b, "mul")

    def scale(self, a, s):
        """a * s for a plain python scalar (no extra node for the constant)."""
        K = kernels.backend
        s = float(s)

        def bwd(dy, adj):
            if a._track:
                adj[a._idx] = K.acc_scaled(adj[a._idx], dy, s)

        return self._append(K.scalar_mul(a.data, s), (a,), bwd)

    def shift(self, a, s):
        """a + s for a plain python scalar."""
        K = kernels.backend

        def bwd(dy, adj):
            if a._track:
                adj[a._idx] = K.acc(adj[a._idx], dy)

        return self._append(K.scalar_add(a.data, float(s)), (a,), bwd)

    def tanh(self, a):
        K = kernels.backend
        data = K.tanh(a.data)

        def bwd(dy, adj):
            if a._track:
                adj[a._idx] = K.tanh_acc_bwd(data, dy, adj[a._idx])

        return self._append(data, (a,), bwd)

    def exp(self, a):
        K = kernels.backend
        data = K.exp(a.data)

        def bwd(dy, adj):
            if a._track:
                adj[a._idx] = K.exp_acc_bwd(data, dy, adj[a._idx])

        return self._append(data, (a,), bwd)

    def log(self, a):
        if np.any(a.data <= 0.0):
            raise MathDomainError("log of a non-positive value")
        K = kernels.backend

        def bwd(dy, adj):
            if a._track:
                adj[a._idx] = K.log_acc_bwd(a.data, dy, adj[a._idx])

        return self._append(K.log(a.data), (a,), bwd)

    def relu(self, a):
        K = kernels.backend

        def bwd(dy, adj):
            if a._track:
                # subgradient at 0 is 0: strict comparison in the kernel
                adj[a._idx] = K.relu_acc_bwd(a.data, dy, adj[a._idx])

        return self._append(K.relu(a.data), (a,), bwd)

    def max0(self, a):
        """Hinge max(0, .); identical to relu, named for its use in penalties."""
        return self.relu(a)

    def add_bias(self, x, b):
        """x + b with b a (1, n) row vector broadcast over rows."""
        if b.data.shape != (1, x.data.shape[1]):
            raise ShapeError(f"add_bias: {x.data.shape} with bias {b.data.shape}")
        K = kernels.backend

        def bwd(dy, adj):
            if x._track:
                adj[x._idx] = K.acc(adj[x._idx], dy)
            if b._track:
                adj[b._idx] = K.bias_acc_bwd(dy, adj[b._idx])

        return self._append(K.add_bias(x.data, b.data), (x, b), bwd)

    def softmax_row(self, logits, mask=None):
        """Row-wise softmax with optional candidate mask (1 = active).

        Masked entries get probability exactly 0; rows must keep at least one
        active entry. Computed with max-subtraction for stability.
        """
        K = kernels.backend
        if mask is None:
            mask = np.ones(logits.data.shape, dtype=np.uint8)
        else:
            mask = np.ascontiguousarray(mask, dtype=np.uint8)
            if mask.shape != logits.data.shape:
                raise ShapeError(f"mask shape {mask.shape} != logits {logits.data.shape}")
        if not mask.any(axis=1).all():
            raise InvalidCandidateSetError("softmax row with all entries masked")
        p = K.masked_softmax(logits.data, mask)

        def bwd(dy, adj):
            if logits._track:
                adj[logits._idx] = K.softmax_acc_bwd(p, dy, adj[logits._idx])

        return self._append(p, (logits,), bwd)

    def sum(self, a):
        """Sum of all entries, as a (1, 1) scalar."""
        K = kernels.backend
        data = np.array([[K.sum_all(a.data)]])

        def bwd(dy, adj):
            if a._track:
                adj[a._idx] = K.acc_fill(adj[a._idx], float(dy[0, 0]), a.data.shape)

        return self._append(data, (a,), bwd)

    def sum_rows(self, a):
        """Row sums, shape (m, 1)."""
        K = kernels.backend

        def bwd(dy, adj):
            if a._track:
                adj[a._idx] = K.sum_rows_acc_bwd(dy, adj[a._idx], a.data.shape[1])

        return self._append(K.sum_rows(a.data), (a,), bwd)

    def mean(self, a):
        return self.scale(self.sum(a), 1.0 / a.data.size)

    def reshape(self, a, rows, cols):
        if rows * cols != a.data.size:
            raise ShapeError(f"reshape: {a.data.shape} to ({rows}, {cols})")
        K = kernels.backend

        def bwd(dy, adj):
            if a._track:
                adj[a._idx] = K.acc(adj[a._idx], dy.reshape(a.data.shape))

        return self._append(a.data.reshape(rows, cols), (a,), bwd)

    def gather_rows(self, x, idx):
        """out[i, :] = x[idx[i], :] for an int index vector."""
        idx = np.ascontiguousarray(idx, dtype=np.int64)
        if idx.ndim != 1:
            raise ShapeError("gather_rows: index must be a vector")
        if idx.size and (idx.min() < 0 or idx.max() >= x.data.shape[0]):
            raise ShapeError("gather_rows: index out of range")
        K = kernels.backend

        def bwd(dy, adj):
            if x._track:
                adj[x._idx] = K.gather_rows_acc_bwd(dy, idx, adj[x._idx], x.data.shape[0])

        return self._append(K.gather_rows(x.data, idx), (x,), bwd)

    def take_per_row(self, x, cols):
        """out[i, 0] = x[i, cols[i]]."""
        cols = np.ascontiguousarray(cols, dtype=np.int64)
        if cols.shape != (x.data.shape[0],):
            raise ShapeError("take_per_row: need one column index per row")
        if cols.size and (cols.min() < 0 or cols.max() >= x.data.shape[1]):
            raise ShapeError("take_per_row: column index out of range")
        K = kernels.backend

        def bwd(dy, adj):
            if x._track:
                adj[x._idx] = K.take_per_row_acc_bwd(dy, cols, adj[x._idx], x.data.shape[1])

        return self._append(K.take_per_row(x.data, cols), (x,), bwd)

    # -- backward ------------------------------------------------------

    def backward(self, root):
        """Adjoints of a scalar root for every leaf (zeros if unreached)."""
        if root.tape is not self:
            raise ContractError("root belongs to a different tape")
        if root.data.shape != _SCALAR:
            raise ContractError(f"backward root must be scalar, got {root.data.shape}")
        return self._run_backward(root, np.ones(_SCALAR))

    def backward_from(self, node, adjoint):
        """Seeded backward from an arbitrary node (used for weighted sub-roots)."""
        if node.tape is not self:
            raise ContractError("node belongs to a different tape")
        adjoint = as_matrix(adjoint)
        if adjoint.shape != node.data.shape:
            raise ShapeError(f"seed shape {adjoint.shape} != node shape {node.data.shape}")
        return self._run_backward(node, adjoint)

    def _run_backward(self, root, seed):
        adj = [None] * len(self._nodes)
        adj[root._idx] = seed.copy()
        for i in range(root._idx, -1, -1):
            node = self._nodes[i]
            dy = adj[i]
            if dy is None or node._bwd is None:
                continue
            node._bwd(dy, adj)
        return {
            leaf: (adj[leaf._idx] if adj[leaf._idx] is not None else np.zeros_like(leaf.data))
            for leaf in self.leaves
        }
