"""Parser and evaluator for weight expressions k(x).

Grammar (``^`` is right-associative, whitespace is ignored)::

    expr   := term (('+' | '-') term)*
    term   := factor (('*' | '/') factor)*
    factor := '-' factor | power
    power  := atom ('^' factor)?
    atom   := number | var | func '(' expr ')' | '(' expr ')'

Unary minus binds looser than ``^``: ``-r^2`` is ``-(r^2)`` and ``2^-1`` is 0.5.

Variables are ``x1..x4`` and ``r = |x - c|``; functions are exp, log, sqrt,
sin, cos.  Trees are nested tuples so they compare by value.
"""

import re

import numpy as np

from .errors import DomainError, NonFinite, ParseError, UnknownIdentifier
from .weights import Weight

VARIABLES = ("x1", "x2", "x3", "x4", "r")
FUNCTIONS = {"exp": np.exp, "log": np.log, "sqrt": np.sqrt, "sin": np.sin, "cos": np.cos}
MAX_DEPTH = 200

_TOKEN = re.compile(r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<id>[A-Za-z_][A-Za-z0-9_]*)|(?P<op>[-+*/^()]))")
_ATOM_START = ("number", "variable", "function", "'('", "'-'")


def _tokenize(src):
    tokens = []
    pos = 0
    n = len(src)
    while True:
        while pos < n and src[pos].isspace():
            pos += 1
        if pos >= n:
            break
        m = _TOKEN.match(src, pos)
        if m is None or m.end() == pos:
            raise ParseError("unexpected character %r" % src[pos], pos, _ATOM_START)
        start = m.start(m.lastgroup)
        tokens.append((m.lastgroup, m.group(m.lastgroup), start))
        pos = m.end()
    tokens.append(("end", "", n))
    return tokens


class _Parser:
    def __init__(self, src):
        self.src = src
        self.tokens = _tokenize(src)
        self.i = 0
        self.depth = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value, expected):
        kind, text, pos = self.peek()
        if text != value or kind != "op":
            raise ParseError("unexpected %s" % (repr(text) if kind != "end" else "end of input"), pos, expected)
        return self.take()

    def enter(self):
        self.depth += 1
        if self.depth > MAX_DEPTH:
            raise ParseError("expression nested too deeply", self.peek()[2])

    def parse(self):
        node = self.expr()
        kind, text, pos = self.peek()
        if kind != "end":
            raise ParseError("unexpected %r" % text, pos, ("operator", "end of input"))
        return node

    def expr(self):
        self.enter()
        node = self.term()
        while self.peek()[0] == "op" and self.peek()[1] in "+-":
            op = self.take()[1]
            node = ("bin", op, node, self.term())
        self.depth -= 1
        return node

    def term(self):
        node = self.factor()
        while self.peek()[0] == "op" and self.peek()[1] in "*/":
            op = self.take()[1]
            node = ("bin", op, node, self.factor())
        return node

    def factor(self):
        self.enter()
        if self.peek()[0] == "op" and self.peek()[1] == "-":
            self.take()
            node = ("neg", self.factor())
        else:
            node = self.power()
        self.depth -= 1
        return node

    def power(self):
        base = self.atom()
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            self.take()
            return ("bin", "^", base, self.factor())
        return base

    def atom(self):
        kind, text, pos = self.take()
        if kind == "num":
            value = float(text)
            if not np.isfinite(value):
                raise ParseError("number out of range", pos)
            return ("num", value)
        if kind == "id":
            if text in VARIABLES:
                return ("var", text)
            if text in FUNCTIONS:
                self.expect("(", ("'('",))
                arg = self.expr()
                self.expect(")", ("')'", "operator"))
                return ("call", text, arg)
            raise UnknownIdentifier("unknown identifier %r" % text, pos, VARIABLES + tuple(FUNCTIONS))
        if kind == "op" and text == "(":
            node = self.expr()
            self.expect(")", ("')'", "operator"))
            return node
        what = "end of input" if kind == "end" else repr(text)
        raise ParseError("unexpected %s" % what, pos, _ATOM_START)


def _fmt_num(v):
    return repr(float(v))


def to_text(node):
    """Canonical text: every binary operation parenthesised, numbers in shortest round-trip form."""
    tag = node[0]
    if tag == "num":
        return _fmt_num(node[1])
    if tag == "var":
        return node[1]
    if tag == "neg":
        return "(-%s)" % to_text(node[1])
    if tag == "call":
        return "%s(%s)" % (node[1], to_text(node[2]))
    return "(%s %s %s)" % (to_text(node[2]), node[1], to_text(node[3]))


class KExpr:
    """A parsed weight expression; ``centre`` is the point ``r`` is measured from."""

    def __init__(self, tree, source=None, centre=None):
        self.tree = tree
        self.source = source
        self.centre = None if centre is None else np.asarray(centre, dtype=float)

    def __eq__(self, other):
        return isinstance(other, KExpr) and self.tree == other.tree

    def __hash__(self):
        return hash(self.tree)

    def __repr__(self):
        return "KExpr(%s)" % to_text(self.tree)

    def __str__(self):
        return to_text(self.tree)

    def with_centre(self, centre):
        return KExpr(self.tree, self.source, centre)

    def uses_r(self):
        return _uses(self.tree, "r")

    def evaluate(self, x):
        return evaluate(self, x)

    def to_weight(self):
        return Weight(lambda a, b, c, d: _eval_axes(self, (a, b, c, d)), label=str(self))


def _uses(node, name):
    tag = node[0]
    if tag == "var":
        return node[1] == name
    if tag == "num":
        return False
    return any(_uses(child, name) for child in node[1:] if isinstance(child, tuple))


def parse(src, centre=None):
    if not isinstance(src, str):
        raise TypeError("expression must be a string")
    return KExpr(_Parser(src).parse(), src, centre)


def _eval_axes(e, coords):
    """Evaluate on broadcast-compatible coordinate arrays ``(x1, x2, x3, x4)``."""
    coords = tuple(np.asarray(c, dtype=float) for c in coords)
    centre = np.zeros(4) if e.centre is None else e.centre

    def point_at(bad):
        shape = np.broadcast(*coords, bad).shape
        bad = np.broadcast_to(bad, shape)
        idx = tuple(np.argwhere(bad)[0]) if bad.ndim else ()
        return [float(np.broadcast_to(c, shape)[idx]) for c in coords]

    def ev(node):
        tag = node[0]
        if tag == "num":
            return np.float64(node[1])
        if tag == "var":
            name = node[1]
            if name == "r":
                return np.sqrt(sum((coords[a] - centre[a]) ** 2 for a in range(4)))
            return coords[int(name[1]) - 1]
        if tag == "neg":
            return -ev(node[1])
        if tag == "call":
            arg = ev(node[2])
            if node[1] == "log" and np.any(arg <= 0):
                raise DomainError("log", point_at(arg <= 0))
            if node[1] == "sqrt" and np.any(arg < 0):
                raise DomainError("sqrt", point_at(arg < 0))
            return FUNCTIONS[node[1]](arg)
        op, a, b = node[1], ev(node[2]), ev(node[3])
        if op == "+":
            return a + b
        if op == "-":
            return a - b
        if op == "*":
            return a * b
        if op == "/":
            return a / b
        return np.power(a, b)

    with np.errstate(all="ignore"):
        out = ev(e.tree)
    bad = ~np.isfinite(out)
    if np.any(bad):
        raise NonFinite(point_at(bad))
    return out


def evaluate(e, x):
    """IEEE-double evaluation at one point ``(4,)`` or at points ``(..., 4)``."""
    if isinstance(e, str):
        e = parse(e)
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != 4:
        raise ValueError("points must have 4 coordinates")
    out = _eval_axes(e, tuple(x[..., a] for a in range(4)))
    out = np.broadcast_to(out, x.shape[:-1])
    return float(out) if x.ndim == 1 else np.array(out)


def check_positive_on(e, mask, margin=0.0):
    """Minimum of ``e`` over Interior nodes; ``ok`` is False when it is ``<= margin``."""
    vals = _eval_axes(e, mask.grid.open_axes())
    vals = np.broadcast_to(vals, mask.grid.shape)
    inner = mask.interior
    masked = np.where(inner, vals, np.inf)
    flat = int(np.argmin(masked))
    idx = np.unravel_index(flat, mask.grid.shape)
    vmin = float(masked[idx])
    return {"min": vmin, "argmin": mask.grid.node(idx).tolist(), "margin": float(margin), "ok": vmin > margin}
