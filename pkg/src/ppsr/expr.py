"""Expression trees for symbolic regression.

Trees are immutable. Each node caches its size (node count) and depth (edges
on the longest root-to-leaf path, so a lone terminal has depth 0), which the
variation operators use to address nodes by prefix-order index in
``O(depth)``.

Text form is a prefix s-expression::

    (+ (sin x1) (sin (* x2 x2)))

with operators ``+ - * sin cos``, variables ``x1 .. xn`` and real constants.
"""

from __future__ import annotations

import math
import operator
from fractions import Fraction
from typing import Union

import numpy as np
from scipy.stats import qmc

from .errors import ExpressionSyntaxError

BINARY_OPS = {"+": operator.add, "-": operator.sub, "*": operator.mul}
UNARY_OPS = {"sin": np.sin, "cos": np.cos}
_MATH_UNARY = {"sin": math.sin, "cos": math.cos}


class Node:
    __slots__ = ("size", "depth", "_hash")

    def evaluate(self, cols):
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}({format_expr(self)!r})"

    def __str__(self):
        return format_expr(self)


class Binary(Node):
    __slots__ = ("op", "left", "right")

    def __init__(self, op: str, left: Node, right: Node):
        if op not in BINARY_OPS:
            raise ValueError(f"unknown binary operator {op!r}")
        self.op = op
        self.left = left
        self.right = right
        self.size = 1 + left.size + right.size
        self.depth = 1 + max(left.depth, right.depth)
        self._hash = None

    def evaluate(self, cols):
        return BINARY_OPS[self.op](self.left.evaluate(cols), self.right.evaluate(cols))

    def __eq__(self, other):
        return (
            type(other) is Binary
            and self.size == other.size
            and self.op == other.op
            and self.left == other.left
            and self.right == other.right
        )

    def __hash__(self):
        if self._hash is None:
            self._hash = hash((self.op, self.left, self.right))
        return self._hash


class Unary(Node):
    __slots__ = ("op", "child")

    def __init__(self, op: str, child: Node):
        if op not in UNARY_OPS:
            raise ValueError(f"unknown unary operator {op!r}")
        self.op = op
        self.child = child
        self.size = 1 + child.size
        self.depth = 1 + child.depth
        self._hash = None

    def evaluate(self, cols):
        return UNARY_OPS[self.op](self.child.evaluate(cols))

    def __eq__(self, other):
        return type(other) is Unary and self.op == other.op and self.child == other.child

    def __hash__(self):
        if self._hash is None:
            self._hash = hash((self.op, self.child))
        return self._hash


class Variable(Node):
    """Input column ``x_index``; indices start at 1."""

    __slots__ = ("index",)

    def __init__(self, index: int):
        if index < 1:
            raise ValueError("variable indices start at 1")
        self.index = int(index)
        self.size = 1
        self.depth = 0
        self._hash = hash(("x", self.index))

    def evaluate(self, cols):
        return cols[self.index - 1]

    def __eq__(self, other):
        return type(other) is Variable and self.index == other.index

    def __hash__(self):
        return self._hash


class Constant(Node):
    __slots__ = ("value",)

    def __init__(self, value: float):
        self.value = float(value)
        self.size = 1
        self.depth = 0
        self._hash = hash(("c", self.value))

    def evaluate(self, cols):
        return self.value

    def __eq__(self, other):
        return type(other) is Constant and self.value == other.value

    def __hash__(self):
        return self._hash


ExpressionTree = Union[Binary, Unary, Variable, Constant]


def children(node: Node) -> tuple:
    if isinstance(node, Binary):
        return (node.left, node.right)
    if isinstance(node, Unary):
        return (node.child,)
    return ()


def max_variable(tree: Node) -> int:
    if isinstance(tree, Variable):
        return tree.index
    return max((max_variable(c) for c in children(tree)), default=0)


def has_variable(tree: Node) -> bool:
    if isinstance(tree, Variable):
        return True
    return any(has_variable(c) for c in children(tree))


# -- evaluation ---------------------------------------------------------------


def eval_plain(tree: Node, row) -> float:
    """Value of the tree at one sample ``row`` (``row[k-1]`` is ``x_k``)."""
    if isinstance(tree, Constant):
        return tree.value
    if isinstance(tree, Variable):
        return float(row[tree.index - 1])
    if isinstance(tree, Unary):
        return _MATH_UNARY[tree.op](eval_plain(tree.child, row))
    return BINARY_OPS[tree.op](eval_plain(tree.left, row), eval_plain(tree.right, row))


def eval_rows(tree: Node, X) -> np.ndarray:
    """Vectorised evaluation over the rows of an ``m x n`` matrix."""
    X = np.asarray(X, dtype=np.float64)
    cols = [X[:, k] for k in range(X.shape[1])]
    with np.errstate(all="ignore"):
        out = tree.evaluate(cols)
    return np.broadcast_to(np.asarray(out, dtype=np.float64), (X.shape[0],))


# -- addressing by prefix index ----------------------------------------------


def node_at(tree: Node, k: int) -> Node:
    while k:
        k -= 1
        if isinstance(tree, Unary):
            tree = tree.child
        elif k < tree.left.size:
            tree = tree.left
        else:
            k -= tree.left.size
            tree = tree.right
    return tree


def replace_at(tree: Node, k: int, new: Node) -> Node:
    if k == 0:
        return new
    k -= 1
    if isinstance(tree, Unary):
        return Unary(tree.op, replace_at(tree.child, k, new))
    if k < tree.left.size:
        return Binary(tree.op, replace_at(tree.left, k, new), tree.right)
    return Binary(tree.op, tree.left, replace_at(tree.right, k - tree.left.size, new))


def depth_at(tree: Node, k: int) -> int:
    """Depth of the node at prefix index ``k`` below the root."""
    d = 0
    while k:
        k -= 1
        d += 1
        if isinstance(tree, Unary):
            tree = tree.child
        elif k < tree.left.size:
            tree = tree.left
        else:
            k -= tree.left.size
            tree = tree.right
    return d


# -- text format --------------------------------------------------------------


def format_constant(v: float) -> str:
    text = format(v, ".9g")
    return "0" if text == "-0" else text


def format_expr(tree: Node) -> str:
    if isinstance(tree, Variable):
        return f"x{tree.index}"
    if isinstance(tree, Constant):
        return format_constant(tree.value)
    if isinstance(tree, Unary):
        return f"({tree.op} {format_expr(tree.child)})"
    return f"({tree.op} {format_expr(tree.left)} {format_expr(tree.right)})"


def _tokenize(text: str):
    tokens = []
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch.isspace():
            i += 1
        elif ch in "()":
            tokens.append((ch, i))
            i += 1
        else:
            j = i
            while j < n and not text[j].isspace() and text[j] not in "()":
                j += 1
            tokens.append((text[i:j], i))
            i = j
    return tokens


def parse(text: str) -> Node:
    """Parse a prefix s-expression; raises ``ExpressionSyntaxError`` with an offset."""
    tokens = _tokenize(text)
    pos = 0

    def peek():
        return tokens[pos] if pos < len(tokens) else (None, len(text))

    def expr():
        nonlocal pos
        tok, off = peek()
        if tok is None:
            raise ExpressionSyntaxError("unexpected end of input", off)
        pos += 1
        if tok == "(":
            op, op_off = peek()
            if op is None:
                raise ExpressionSyntaxError("unexpected end of input", op_off)
            pos += 1
            if op in BINARY_OPS:
                node = Binary(op, expr(), expr())
            elif op in UNARY_OPS:
                node = Unary(op, expr())
            else:
                raise ExpressionSyntaxError(f"unknown operator {op!r}", op_off)
            close, close_off = peek()
            if close != ")":
                what = "end of input" if close is None else repr(close)
                raise ExpressionSyntaxError(f"expected ')' but found {what}", close_off)
            pos += 1
            return node
        if tok == ")":
            raise ExpressionSyntaxError("unexpected ')'", off)
        return _atom(tok, off)

    node = expr()
    if pos != len(tokens):
        raise ExpressionSyntaxError("trailing input", tokens[pos][1])
    return node


def _atom(tok: str, off: int) -> Node:
    if tok[0] == "x" and tok[1:].isdigit() and int(tok[1:]) >= 1:
        return Variable(int(tok[1:]))
    try:
        value = float(tok)
    except ValueError:
        raise ExpressionSyntaxError(f"bad token {tok!r}", off) from None
    if not math.isfinite(value):
        raise ExpressionSyntaxError(f"non-finite constant {tok!r}", off)
    return Constant(value)


# -- simplification -----------------------------------------------------------


def _sort_key(node: Node):
    rank = 0 if isinstance(node, Constant) else 1
    return rank, format_expr(node)


def _flatten(node: Node, op: str, out: list):
    if isinstance(node, Binary) and node.op == op:
        _flatten(node.left, op, out)
        _flatten(node.right, op, out)
    else:
        out.append(node)


def _rebuild(op: str, terms: list) -> Node:
    acc = terms[0]
    for t in terms[1:]:
        acc = Binary(op, acc, t)
    return acc


def simplify(tree: Node) -> Node:
    """Fold constants, drop additive/multiplicative identities, order commutative terms.

    The result is functionally equal to the input; ``+`` and ``*`` chains are
    flattened so constants anywhere in a chain fold together.
    """
    if isinstance(tree, (Variable, Constant)):
        return tree
    if isinstance(tree, Unary):
        child = simplify(tree.child)
        if isinstance(child, Constant):
            return Constant(_MATH_UNARY[tree.op](child.value))
        return Unary(tree.op, child)

    left, right = simplify(tree.left), simplify(tree.right)
    if tree.op == "-":
        if isinstance(left, Constant) and isinstance(right, Constant):
            return Constant(left.value - right.value)
        if isinstance(right, Constant) and right.value == 0.0:
            return left
        if left == right:
            return Constant(0.0)
        return Binary("-", left, right)

    terms: list = []
    _flatten(left, tree.op, terms)
    _flatten(right, tree.op, terms)
    consts = [t.value for t in terms if isinstance(t, Constant)]
    rest = [t for t in terms if not isinstance(t, Constant)]
    if tree.op == "+":
        c = math.fsum(consts)
        if c != 0.0 or not rest:
            rest.append(Constant(c))
    else:
        c = math.prod(consts)
        if c == 0.0 and consts:
            return Constant(0.0)
        if c != 1.0 or not rest:
            rest.append(Constant(c))
    rest.sort(key=_sort_key)
    return _rebuild(tree.op, rest)


# -- equivalence ----------------------------------------------------------------

SNAP_TOLERANCE = 1e-6
SNAP_MAX_DENOMINATOR = 64
EQUIVALENCE_TOLERANCE = 1e-7
EQUIVALENCE_POINTS = 256


def snap_constant(v: float) -> float:
    """Nearest simple rational (denominator <= 64) or +-pi, if within 1e-6."""
    for target in (math.pi, -math.pi):
        if abs(v - target) <= SNAP_TOLERANCE:
            return target
    frac = Fraction(v).limit_denominator(SNAP_MAX_DENOMINATOR)
    if abs(v - float(frac)) <= SNAP_TOLERANCE:
        return float(frac)
    return v


def snap_constants(tree: Node) -> Node:
    if isinstance(tree, Constant):
        return Constant(snap_constant(tree.value))
    if isinstance(tree, Variable):
        return tree
    if isinstance(tree, Unary):
        return Unary(tree.op, snap_constants(tree.child))
    return Binary(tree.op, snap_constants(tree.left), snap_constants(tree.right))


def canonical(tree: Node) -> Node:
    return simplify(snap_constants(simplify(tree)))


def _sample_points(n_vars: int) -> np.ndarray:
    unit = qmc.Halton(d=n_vars, scramble=True, seed=20240611).random(EQUIVALENCE_POINTS)
    return np.vstack([unit, 2.0 * unit - 1.0])


def equivalent(f: Node, g: Node, n_vars: int) -> bool:
    """Whether ``f`` and ``g`` define the same function of ``n_vars`` inputs.

    Canonical-form equality first; otherwise agreement to 1e-7 (relative to
    magnitudes above one) at 256 quasi-random points in each of ``[0,1]^n``
    and ``[-1,1]^n``.
    """
    cf, cg = canonical(f), canonical(g)
    if cf == cg:
        return True
    n = max(n_vars, max_variable(cf), max_variable(cg), 1)
    X = _sample_points(n)
    a, b = eval_rows(cf, X), eval_rows(cg, X)
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        return False
    scale = np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))
    return bool(np.all(np.abs(a - b) <= EQUIVALENCE_TOLERANCE * scale))
