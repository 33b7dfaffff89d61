"""Tokenizer, parser, and renderer for the SQLite SELECT dialect subset.

Covers SELECT cores with joins, WHERE/GROUP BY/HAVING, set operations, CTEs,
scalar and aggregate functions, CASE, CAST, IN/LIKE/BETWEEN/EXISTS, and
subqueries. Constructs outside the subset (window functions, FILTER clauses)
are captured as opaque expression nodes instead of failing; genuinely
malformed input raises SqlParseError with a character position.

AST nodes compare structurally (source spans are excluded from equality), so
render/&parse round-trips can be checked with plain ==.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from ..errors import SqlParseError

# ---------------------------------------------------------------------------
# Tokens

_TOKEN_RE = re.compile(
    r"""
      (?P<space>\s+|--[^\n]*|/\*.*?\*/)
    | (?P<string>'(?:[^']|'')*')
    | (?P<qname>"(?:[^"]|"")*"|`(?:[^`]|``)*`|\[[^\]]*\])
    | (?P<number>0[xX][0-9a-fA-F]+|(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
    | (?P<name>[A-Za-z_][A-Za-z0-9_$]*)
    | (?P<op><<|>>|<=|>=|==|!=|<>|\|\||[-+*/%&|<>=(),.;~])
    """,
    re.VERBOSE | re.DOTALL,
)


@dataclass(frozen=True)
class Token:
    kind: str  # string | qname | number | name | op | eof
    text: str
    value: object
    pos: int
    end: int

    @property
    def upper(self) -> str:
        return self.text.upper() if self.kind == "name" else ""


def _unquote_ident(text: str) -> str:
    if text[0] == '"':
        return text[1:-1].replace('""', '"')
    if text[0] == "`":
        return text[1:-1].replace("``", "`")
    return text[1:-1]  # [bracketed]


def tokenize(sql: str) -> list[Token]:
    tokens: list[Token] = []
    pos = 0
    while pos < len(sql):
        match = _TOKEN_RE.match(sql, pos)
        if match is None:
            raise SqlParseError(f"unexpected character {sql[pos]!r}", pos)
        kind = match.lastgroup
        text = match.group(0)
        end = match.end()
        if kind == "space":
            pos = end
            continue
        value: object = text
        if kind == "string":
            value = text[1:-1].replace("''", "'")
        elif kind == "qname":
            value = _unquote_ident(text)
        elif kind == "number":
            lowered = text.lower()
            if lowered.startswith("0x"):
                value = int(text, 16)
            elif "." in text or "e" in lowered:
                value = float(text)
            else:
                value = int(text)
        tokens.append(Token(kind, text, value, pos, end))
        pos = end
    tokens.append(Token("eof", "", None, len(sql), len(sql)))
    return tokens


# Words that terminate an implicit alias position.
RESERVED = frozenset(
    """
    ALL AND AS ASC BETWEEN BY CASE CAST COLLATE CROSS CURRENT_DATE CURRENT_TIME
    CURRENT_TIMESTAMP DESC DISTINCT ELSE END ESCAPE EXCEPT EXISTS FROM FULL GLOB
    GROUP HAVING IN INNER INTERSECT IS ISNULL JOIN LEFT LIKE LIMIT MATCH NATURAL
    NOT NOTNULL NULL NULLS OFFSET ON OR ORDER OUTER RECURSIVE REGEXP RIGHT SELECT
    SET THEN UNION USING VALUES WHEN WHERE WITH
    """.split()
)


# ---------------------------------------------------------------------------
# AST nodes


class Node:
    """Base for all AST nodes; ``span`` is (start, end) into the source text."""

    span: tuple[int, int] | None = None


@dataclass(eq=True)
class Literal(Node):
    value: object  # int | float | str | None
    text: str | None = None  # raw source text for numbers / keyword literals


@dataclass(eq=True)
class ColumnRef(Node):
    table: str | None
    column: str


@dataclass(eq=True)
class Star(Node):
    table: str | None = None


@dataclass(eq=True)
class FuncCall(Node):
    name: str
    args: list = field(default_factory=list)
    distinct: bool = False


@dataclass(eq=True)
class Cast(Node):
    expr: object
    type_name: str


@dataclass(eq=True)
class Case(Node):
    operand: object | None
    whens: list  # list of (condition, result) tuples
    else_: object | None


@dataclass(eq=True)
class Unary(Node):
    op: str
    operand: object


@dataclass(eq=True)
class Binary(Node):
    op: str
    left: object
    right: object


@dataclass(eq=True)
class Between(Node):
    expr: object
    low: object
    high: object
    negated: bool = False


@dataclass(eq=True)
class InExpr(Node):
    expr: object
    values: object  # list of exprs, Select, or TableRef
    negated: bool = False


@dataclass(eq=True)
class LikeExpr(Node):
    op: str  # LIKE | GLOB | MATCH | REGEXP
    expr: object
    pattern: object
    escape: object | None = None
    negated: bool = False


@dataclass(eq=True)
class Exists(Node):
    select: object


@dataclass(eq=True)
class Subquery(Node):
    select: object


@dataclass(eq=True)
class Collate(Node):
    expr: object
    collation: str


@dataclass(eq=True)
class Tuple_(Node):
    items: list


@dataclass(eq=True)
class OpaqueExpr(Node):
    text: str


@dataclass(eq=True)
class ResultColumn(Node):
    expr: object
    alias: str | None = None


@dataclass(eq=True)
class TableRef(Node):
    name: str
    alias: str | None = None


@dataclass(eq=True)
class SubquerySource(Node):
    select: object
    alias: str | None = None


@dataclass(eq=True)
class Join(Node):
    left: object
    right: object
    kind: str  # INNER | LEFT | RIGHT | FULL | CROSS
    natural: bool = False
    on: object | None = None
    using: list | None = None


@dataclass(eq=True)
class OrderingTerm(Node):
    expr: object
    direction: str | None = None  # ASC | DESC
    nulls: str | None = None  # FIRST | LAST


@dataclass(eq=True)
class SelectCore(Node):
    distinct: bool
    columns: list
    source: object | None
    where: object | None
    group_by: list
    having: object | None


@dataclass(eq=True)
class Cte(Node):
    name: str
    columns: list
    select: object


@dataclass(eq=True)
class Select(Node):
    ctes: list
    recursive: bool
    cores: list
    ops: list  # compound operators between cores: UNION | UNION ALL | INTERSECT | EXCEPT
    order_by: list
    limit: object | None = None
    offset: object | None = None


_COMPARISON_OPS = {"=", "==", "!=", "<>", "<", "<=", ">", ">="}
_LIKE_OPS = {"LIKE", "GLOB", "MATCH", "REGEXP"}

# SQLite treats these as ordinary identifiers when no clause can start here
_USABLE_AS_COLUMN = frozenset({"LEFT", "RIGHT", "FULL", "CROSS", "NATURAL", "MATCH", "GLOB", "LIKE", "REGEXP", "FIRST", "LAST"})
_NOT_A_COLUMN = RESERVED - _USABLE_AS_COLUMN


class _Parser:
    def __init__(self, sql: str):
        self.sql = sql
        self.tokens = tokenize(sql)
        self.index = 0

    # -- token plumbing ----------------------------------------------------

    def peek(self, offset: int = 0) -> Token:
        i = min(self.index + offset, len(self.tokens) - 1)
        return self.tokens[i]

    def advance(self) -> Token:
        tok = self.tokens[self.index]
        if tok.kind != "eof":
            self.index += 1
        return tok

    def _prev_end(self) -> int:
        return self.tokens[max(self.index - 1, 0)].end

    def _finish(self, node: Node, start: int) -> Node:
        node.span = (start, self._prev_end())
        return node

    def error(self, message: str) -> SqlParseError:
        return SqlParseError(message, self.peek().pos)

    def at_kw(self, *words: str) -> bool:
        return self.peek().upper in words

    def accept_kw(self, *words: str) -> bool:
        if self.at_kw(*words):
            self.advance()
            return True
        return False

    def expect_kw(self, word: str) -> None:
        if not self.accept_kw(word):
            raise self.error(f"expected {word}, found {self.peek().text!r}")

    def at_op(self, *ops: str) -> bool:
        tok = self.peek()
        return tok.kind == "op" and tok.text in ops

    def accept_op(self, *ops: str) -> bool:
        if self.at_op(*ops):
            self.advance()
            return True
        return False

    def expect_op(self, op: str) -> None:
        if not self.accept_op(op):
            raise self.error(f"expected {op!r}, found {self.peek().text!r}")

    def ident(self) -> str:
        tok = self.peek()
        if tok.kind == "qname":
            self.advance()
            return str(tok.value)
        if tok.kind == "name":
            self.advance()
            return tok.text
        raise self.error(f"expected identifier, found {tok.text!r}")

    def _maybe_alias(self) -> str | None:
        if self.accept_kw("AS"):
            return self.ident()
        tok = self.peek()
        if tok.kind == "qname":
            self.advance()
            return str(tok.value)
        if tok.kind == "name" and tok.upper not in RESERVED:
            self.advance()
            return tok.text
        return None

    # -- statements --------------------------------------------------------

    def parse_statement(self) -> Select:
        stmt = self.parse_select()
        self.accept_op(";")
        if self.peek().kind != "eof":
            raise self.error(f"trailing input {self.peek().text!r}")
        return stmt

    def parse_select(self) -> Select:
        start = self.peek().pos
        ctes: list = []
        recursive = False
        if self.accept_kw("WITH"):
            recursive = self.accept_kw("RECURSIVE")
            while True:
                ctes.append(self._parse_cte())
                if not self.accept_op(","):
                    break
        cores = [self._parse_core()]
        ops: list[str] = []
        while self.at_kw("UNION", "INTERSECT", "EXCEPT"):
            word = self.advance().upper
            if word == "UNION" and self.accept_kw("ALL"):
                word = "UNION ALL"
            ops.append(word)
            cores.append(self._parse_core())
        order_by: list = []
        if self.accept_kw("ORDER"):
            self.expect_kw("BY")
            while True:
                order_by.append(self._parse_ordering_term())
                if not self.accept_op(","):
                    break
        limit = offset = None
        if self.accept_kw("LIMIT"):
            first = self.parse_expr()
            if self.accept_kw("OFFSET"):
                limit, offset = first, self.parse_expr()
            elif self.accept_op(","):
                offset, limit = first, self.parse_expr()
            else:
                limit = first
        node = Select(ctes, recursive, cores, ops, order_by, limit, offset)
        return self._finish(node, start)  # type: ignore[return-value]

    def _parse_cte(self) -> Cte:
        start = self.peek().pos
        name = self.ident()
        columns: list = []
        if self.accept_op("("):
            while True:
                columns.append(self.ident())
                if not self.accept_op(","):
                    break
            self.expect_op(")")
        self.expect_kw("AS")
        self.expect_op("(")
        select = self.parse_select()
        self.expect_op(")")
        return self._finish(Cte(name, columns, select), start)  # type: ignore[return-value]

    def _parse_core(self) -> SelectCore:
        start = self.peek().pos
        self.expect_kw("SELECT")
        distinct = False
        if self.accept_kw("DISTINCT"):
            distinct = True
        else:
            self.accept_kw("ALL")
        columns = [self._parse_result_column()]
        while self.accept_op(","):
            columns.append(self._parse_result_column())
        source = None
        if self.accept_kw("FROM"):
            source = self._parse_from()
        where = self.parse_expr() if self.accept_kw("WHERE") else None
        group_by: list = []
        if self.accept_kw("GROUP"):
            self.expect_kw("BY")
            group_by.append(self.parse_expr())
            while self.accept_op(","):
                group_by.append(self.parse_expr())
        having = self.parse_expr() if self.accept_kw("HAVING") else None
        node = SelectCore(distinct, columns, source, where, group_by, having)
        return self._finish(node, start)  # type: ignore[return-value]

    def _parse_result_column(self):
        start = self.peek().pos
        if self.accept_op("*"):
            return self._finish(Star(None), start)
        if (
            self.peek().kind in ("name", "qname")
            and self.peek(1).kind == "op"
            and self.peek(1).text == "."
            and self.peek(2).kind == "op"
            and self.peek(2).text == "*"
        ):
            table = self.ident()
            self.advance()  # .
            self.advance()  # *
            return self._finish(Star(table), start)
        expr = self.parse_expr()
        alias = self._maybe_alias()
        return self._finish(ResultColumn(expr, alias), start)

    # -- FROM clause -------------------------------------------------------

    def _parse_from(self):
        left = self._parse_source()
        while True:
            start = left.span[0] if left.span else self.peek().pos
            if self.accept_op(","):
                right = self._parse_source()
                left = self._finish(Join(left, right, "CROSS"), start)
                continue
            natural = self.accept_kw("NATURAL")
            kind = None
            if self.accept_kw("LEFT"):
                self.accept_kw("OUTER")
                kind = "LEFT"
            elif self.accept_kw("RIGHT"):
                self.accept_kw("OUTER")
                kind = "RIGHT"
            elif self.accept_kw("FULL"):
                self.accept_kw("OUTER")
                kind = "FULL"
            elif self.accept_kw("INNER"):
                kind = "INNER"
            elif self.accept_kw("CROSS"):
                kind = "CROSS"
            if kind is None and not natural and not self.at_kw("JOIN"):
                break
            self.expect_kw("JOIN")
            kind = kind or "INNER"
            right = self._parse_source()
            on = using = None
            if self.accept_kw("ON"):
                on = self.parse_expr()
            elif self.accept_kw("USING"):
                self.expect_op("(")
                using = [self.ident()]
                while self.accept_op(","):
                    using.append(self.ident())
                self.expect_op(")")
            left = self._finish(Join(left, right, kind, natural, on, using), start)
        return left

    def _parse_source(self):
        start = self.peek().pos
        if self.accept_op("("):
            if self.at_kw("SELECT", "WITH"):
                select = self.parse_select()
                self.expect_op(")")
                alias = self._maybe_alias()
                return self._finish(SubquerySource(select, alias), start)
            inner = self._parse_from()
            self.expect_op(")")
            return inner
        name = self.ident()
        if self.accept_op("."):
            name = self.ident()  # drop schema qualifier
        alias = self._maybe_alias()
        return self._finish(TableRef(name, alias), start)

    def _parse_ordering_term(self) -> OrderingTerm:
        start = self.peek().pos
        expr = self.parse_expr()
        direction = None
        if self.accept_kw("ASC"):
            direction = "ASC"
        elif self.accept_kw("DESC"):
            direction = "DESC"
        nulls = None
        if self.accept_kw("NULLS"):
            nulls = "FIRST" if self.accept_kw("FIRST") else "LAST"
            if nulls == "LAST":
                self.expect_kw("LAST")
        return self._finish(OrderingTerm(expr, direction, nulls), start)  # type: ignore[return-value]

    # -- expressions (precedence climbing, lowest first) --------------------

    def parse_expr(self):
        return self._parse_or()

    def _parse_or(self):
        start = self.peek().pos
        left = self._parse_and()
        while self.accept_kw("OR"):
            left = self._finish(Binary("OR", left, self._parse_and()), start)
        return left

    def _parse_and(self):
        start = self.peek().pos
        left = self._parse_not()
        while self.accept_kw("AND"):
            left = self._finish(Binary("AND", left, self._parse_not()), start)
        return left

    def _parse_not(self):
        start = self.peek().pos
        if self.at_kw("NOT") and self.peek(1).upper != "EXISTS":
            self.advance()
            return self._finish(Unary("NOT", self._parse_not()), start)
        return self._parse_comparison()

    def _parse_comparison(self):
        start = self.peek().pos
        left = self._parse_bitwise()
        while True:
            tok = self.peek()
            if tok.kind == "op" and tok.text in _COMPARISON_OPS:
                self.advance()
                op = {"==": "=", "!=": "<>"}.get(tok.text, tok.text)
                left = self._finish(Binary(op, left, self._parse_bitwise()), start)
                continue
            if self.at_kw("IS"):
                self.advance()
                negated = self.accept_kw("NOT")
                right = self._parse_bitwise()
                left = self._finish(Binary("IS NOT" if negated else "IS", left, right), start)
                continue
            if self.accept_kw("ISNULL"):
                left = self._finish(Binary("IS", left, Literal(None, "NULL")), start)
                continue
            if self.accept_kw("NOTNULL"):
                left = self._finish(Binary("IS NOT", left, Literal(None, "NULL")), start)
                continue
            negated = False
            if self.at_kw("NOT") and self.peek(1).upper in ({"IN", "BETWEEN"} | _LIKE_OPS):
                self.advance()
                negated = True
            if self.accept_kw("IN"):
                left = self._finish(InExpr(left, self._parse_in_values(), negated), start)
                continue
            if self.at_kw(*_LIKE_OPS):
                op = self.advance().upper
                pattern = self._parse_bitwise()
                escape = None
                if self.accept_kw("ESCAPE"):
                    escape = self._parse_bitwise()
                left = self._finish(LikeExpr(op, left, pattern, escape, negated), start)
                continue
            if self.accept_kw("BETWEEN"):
                low = self._parse_bitwise()
                self.expect_kw("AND")
                high = self._parse_bitwise()
                left = self._finish(Between(left, low, high, negated), start)
                continue
            if negated:
                raise self.error("expected IN, LIKE, or BETWEEN after NOT")
            return left

    def _parse_in_values(self):
        if self.accept_op("("):
            if self.at_kw("SELECT", "WITH"):
                select = self.parse_select()
                self.expect_op(")")
                return select
            values: list = []
            if not self.accept_op(")"):
                values.append(self.parse_expr())
                while self.accept_op(","):
                    values.append(self.parse_expr())
                self.expect_op(")")
            return values
        start = self.peek().pos
        name = self.ident()
        return self._finish(TableRef(name, None), start)

    def _binary_level(self, ops: tuple[str, ...], next_level):
        start = self.peek().pos
        left = next_level()
        while self.at_op(*ops):
            op = self.advance().text
            left = self._finish(Binary(op, left, next_level()), start)
        return left

    def _parse_bitwise(self):
        return self._binary_level(("<<", ">>", "&", "|"), self._parse_addsub)

    def _parse_addsub(self):
        return self._binary_level(("+", "-"), self._parse_muldiv)

    def _parse_muldiv(self):
        return self._binary_level(("*", "/", "%"), self._parse_concat)

    def _parse_concat(self):
        return self._binary_level(("||",), self._parse_unary)

    def _parse_unary(self):
        start = self.peek().pos
        if self.at_op("-", "+", "~"):
            op = self.advance().text
            return self._finish(Unary(op, self._parse_unary()), start)
        return self._parse_postfix()

    def _parse_postfix(self):
        start = self.peek().pos
        expr = self._parse_primary()
        while self.accept_kw("COLLATE"):
            expr = self._finish(Collate(expr, self.ident()), start)
        return expr

    def _parse_primary(self):
        tok = self.peek()
        start = tok.pos
        if tok.kind == "string":
            self.advance()
            return self._finish(Literal(tok.value), start)
        if tok.kind == "number":
            self.advance()
            return self._finish(Literal(tok.value, tok.text), start)
        if tok.kind == "qname":
            return self._parse_column_ref()
        if tok.kind == "op" and tok.text == "(":
            self.advance()
            if self.at_kw("SELECT", "WITH"):
                select = self.parse_select()
                self.expect_op(")")
                return self._finish(Subquery(select), start)
            first = self.parse_expr()
            if self.accept_op(","):
                items = [first, self.parse_expr()]
                while self.accept_op(","):
                    items.append(self.parse_expr())
                self.expect_op(")")
                return self._finish(Tuple_(items), start)
            self.expect_op(")")
            return first
        if tok.kind == "name":
            upper = tok.upper
            if upper == "NULL":
                self.advance()
                return self._finish(Literal(None, "NULL"), start)
            if upper in ("TRUE", "FALSE"):
                self.advance()
                return self._finish(Literal(1 if upper == "TRUE" else 0, upper), start)
            if upper in ("CURRENT_DATE", "CURRENT_TIME", "CURRENT_TIMESTAMP"):
                self.advance()
                return self._finish(Literal(upper, upper), start)
            if upper == "CASE":
                return self._parse_case()
            if upper == "CAST":
                return self._parse_cast()
            if upper == "EXISTS":
                self.advance()
                self.expect_op("(")
                select = self.parse_select()
                self.expect_op(")")
                return self._finish(Exists(select), start)
            if upper == "NOT" and self.peek(1).upper == "EXISTS":
                self.advance()
                inner = self._parse_primary()
                return self._finish(Unary("NOT", inner), start)
            if self.peek(1).kind == "op" and self.peek(1).text == "(":
                return self._parse_function(start)
            if upper in _NOT_A_COLUMN:
                raise self.error(f"unexpected keyword {tok.text!r}")
            return self._parse_column_ref()
        raise self.error(f"unexpected token {tok.text!r}")

    def _parse_function(self, start: int):
        name = self.advance().text.upper()
        self.expect_op("(")
        distinct = self.accept_kw("DISTINCT")
        args: list = []
        if self.accept_op("*"):
            args.append(Star(None))
            self.expect_op(")")
        elif not self.accept_op(")"):
            args.append(self.parse_expr())
            while self.accept_op(","):
                args.append(self.parse_expr())
            self.expect_op(")")
        node = self._finish(FuncCall(name, args, distinct), start)
        if self.at_kw("OVER", "FILTER"):
            # window machinery is outside the supported subset: swallow the
            # trailing clauses and keep the raw text as one opaque expression
            while self.at_kw("OVER", "FILTER"):
                self.advance()
                if self.at_op("("):
                    self._consume_balanced()
                else:
                    self.ident()
            return self._finish(OpaqueExpr(self.sql[start:self._prev_end()]), start)
        return node

    def _consume_balanced(self) -> None:
        self.expect_op("(")
        depth = 1
        while depth:
            tok = self.advance()
            if tok.kind == "eof":
                raise self.error("unbalanced parentheses")
            if tok.kind == "op" and tok.text == "(":
                depth += 1
            elif tok.kind == "op" and tok.text == ")":
                depth -= 1

    def _parse_column_ref(self):
        start = self.peek().pos
        parts = [self.ident()]
        while self.at_op(".") and self.peek(1).kind in ("name", "qname"):
            self.advance()
            parts.append(self.ident())
        if len(parts) == 1:
            node = ColumnRef(None, parts[0])
        else:
            node = ColumnRef(parts[-2], parts[-1])  # drop any schema qualifier
        return self._finish(node, start)

    def _parse_case(self):
        start = self.peek().pos
        self.expect_kw("CASE")
        operand = None
        if not self.at_kw("WHEN"):
            operand = self.parse_expr()
        whens: list = []
        while self.accept_kw("WHEN"):
            condition = self.parse_expr()
            self.expect_kw("THEN")
            whens.append((condition, self.parse_expr()))
        if not whens:
            raise self.error("CASE without WHEN branch")
        else_ = self.parse_expr() if self.accept_kw("ELSE") else None
        self.expect_kw("END")
        return self._finish(Case(operand, whens, else_), start)

    def _parse_cast(self):
        start = self.peek().pos
        self.advance()  # CAST
        self.expect_op("(")
        expr = self.parse_expr()
        self.expect_kw("AS")
        words = [self.ident().upper()]
        while self.peek().kind == "name" and self.peek().upper not in RESERVED:
            words.append(self.ident().upper())
        type_name = " ".join(words)
        if self.accept_op("("):
            nums = [self.advance().text]
            while self.accept_op(","):
                nums.append(self.advance().text)
            self.expect_op(")")
            type_name += f"({', '.join(nums)})"
        self.expect_op(")")
        return self._finish(Cast(expr, type_name), start)


def parse_sql(sql: str) -> Select:
    """Parse one SELECT statement (optionally CTE-prefixed) into an AST."""
    return _Parser(sql).parse_statement()


# ---------------------------------------------------------------------------
# Rendering

_PLAIN_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_]*$")

_BINARY_PREC = {
    "OR": 1,
    "AND": 2,
    "=": 4, "<>": 4, "IS": 4, "IS NOT": 4,
    "<": 4, "<=": 4, ">": 4, ">=": 4,
    "<<": 5, ">>": 5, "&": 5, "|": 5,
    "+": 6, "-": 6,
    "*": 7, "/": 7, "%": 7,
    "||": 8,
}


def _ident(name: str) -> str:
    if _PLAIN_IDENT.match(name) and name.upper() not in RESERVED:
        return name
    return "`" + name.replace("`", "``") + "`"


def _prec(node) -> int:
    if isinstance(node, Binary):
        return _BINARY_PREC[node.op]
    if isinstance(node, Unary):
        return 3 if node.op == "NOT" else 10
    if isinstance(node, (Between, InExpr, LikeExpr)):
        return 4
    if isinstance(node, Collate):
        return 9
    return 11


def _wrap(node, parent_prec: int, *, strict: bool = False) -> str:
    text = render_expr(node)
    prec = _prec(node)
    if prec < parent_prec or (strict and prec == parent_prec):
        return f"({text})"
    return text


def _string_literal(value: str) -> str:
    return "'" + value.replace("'", "''") + "'"


def render_expr(node) -> str:
    if isinstance(node, Literal):
        if node.text is not None:
            return node.text
        if node.value is None:
            return "NULL"
        if isinstance(node.value, str):
            return _string_literal(node.value)
        return repr(node.value)
    if isinstance(node, ColumnRef):
        if node.table:
            return f"{_ident(node.table)}.{_ident(node.column)}"
        return _ident(node.column)
    if isinstance(node, Star):
        return f"{_ident(node.table)}.*" if node.table else "*"
    if isinstance(node, FuncCall):
        inner = ", ".join(render_expr(a) for a in node.args)
        if node.distinct:
            inner = "DISTINCT " + inner
        return f"{node.name}({inner})"
    if isinstance(node, Cast):
        return f"CAST({render_expr(node.expr)} AS {node.type_name})"
    if isinstance(node, Case):
        parts = ["CASE"]
        if node.operand is not None:
            parts.append(render_expr(node.operand))
        for condition, result in node.whens:
            parts.append(f"WHEN {render_expr(condition)} THEN {render_expr(result)}")
        if node.else_ is not None:
            parts.append(f"ELSE {render_expr(node.else_)}")
        parts.append("END")
        return " ".join(parts)
    if isinstance(node, Unary):
        if node.op == "NOT":
            return f"NOT {_wrap(node.operand, 3)}"
        return f"{node.op}{_wrap(node.operand, 10)}"
    if isinstance(node, Binary):
        prec = _BINARY_PREC[node.op]
        return f"{_wrap(node.left, prec)} {node.op} {_wrap(node.right, prec, strict=True)}"
    if isinstance(node, Between):
        keyword = "NOT BETWEEN" if node.negated else "BETWEEN"
        return (
            f"{_wrap(node.expr, 4)} {keyword} "
            f"{_wrap(node.low, 4, strict=True)} AND {_wrap(node.high, 4, strict=True)}"
        )
    if isinstance(node, InExpr):
        keyword = "NOT IN" if node.negated else "IN"
        if isinstance(node.values, Select):
            rhs = f"({render_select(node.values)})"
        elif isinstance(node.values, TableRef):
            rhs = _ident(node.values.name)
        else:
            rhs = "(" + ", ".join(render_expr(v) for v in node.values) + ")"
        return f"{_wrap(node.expr, 4)} {keyword} {rhs}"
    if isinstance(node, LikeExpr):
        keyword = f"NOT {node.op}" if node.negated else node.op
        text = f"{_wrap(node.expr, 4)} {keyword} {_wrap(node.pattern, 4, strict=True)}"
        if node.escape is not None:
            text += f" ESCAPE {render_expr(node.escape)}"
        return text
    if isinstance(node, Exists):
        return f"EXISTS ({render_select(node.select)})"
    if isinstance(node, Subquery):
        return f"({render_select(node.select)})"
    if isinstance(node, Collate):
        return f"{_wrap(node.expr, 9)} COLLATE {node.collation}"
    if isinstance(node, Tuple_):
        return "(" + ", ".join(render_expr(i) for i in node.items) + ")"
    if isinstance(node, OpaqueExpr):
        return node.text
    raise TypeError(f"cannot render {type(node).__name__}")


def _render_source(source) -> str:
    if isinstance(source, TableRef):
        text = _ident(source.name)
        if source.alias:
            text += f" AS {_ident(source.alias)}"
        return text
    if isinstance(source, SubquerySource):
        text = f"({render_select(source.select)})"
        if source.alias:
            text += f" AS {_ident(source.alias)}"
        return text
    if isinstance(source, Join):
        left = _render_source(source.left)
        right = _render_source(source.right)
        if isinstance(source.right, Join):
            right = f"({right})"
        keyword = {"INNER": "JOIN"}.get(source.kind, f"{source.kind} JOIN")
        if source.natural:
            keyword = f"NATURAL {keyword}"
        text = f"{left} {keyword} {right}"
        if source.on is not None:
            text += f" ON {render_expr(source.on)}"
        elif source.using:
            text += " USING (" + ", ".join(_ident(c) for c in source.using) + ")"
        return text
    raise TypeError(f"cannot render source {type(source).__name__}")


def _render_core(core: SelectCore) -> str:
    parts = ["SELECT"]
    if core.distinct:
        parts.append("DISTINCT")
    columns = []
    for col in core.columns:
        if isinstance(col, Star):
            columns.append(render_expr(col))
        else:
            text = render_expr(col.expr)
            if col.alias:
                text += f" AS {_ident(col.alias)}"
            columns.append(text)
    parts.append(", ".join(columns))
    if core.source is not None:
        parts.append("FROM " + _render_source(core.source))
    if core.where is not None:
        parts.append("WHERE " + render_expr(core.where))
    if core.group_by:
        parts.append("GROUP BY " + ", ".join(render_expr(e) for e in core.group_by))
    if core.having is not None:
        parts.append("HAVING " + render_expr(core.having))
    return " ".join(parts)


def render_select(select: Select) -> str:
    parts = []
    if select.ctes:
        rendered = []
        for cte in select.ctes:
            header = _ident(cte.name)
            if cte.columns:
                header += "(" + ", ".join(_ident(c) for c in cte.columns) + ")"
            rendered.append(f"{header} AS ({render_select(cte.select)})")
        keyword = "WITH RECURSIVE" if select.recursive else "WITH"
        parts.append(f"{keyword} " + ", ".join(rendered))
    body = _render_core(select.cores[0])
    for op, core in zip(select.ops, select.cores[1:]):
        body += f" {op} {_render_core(core)}"
    parts.append(body)
    if select.order_by:
        terms = []
        for term in select.order_by:
            text = render_expr(term.expr)
            if term.direction:
                text += f" {term.direction}"
            if term.nulls:
                text += f" NULLS {term.nulls}"
            terms.append(text)
        parts.append("ORDER BY " + ", ".join(terms))
    if select.limit is not None:
        parts.append("LIMIT " + render_expr(select.limit))
        if select.offset is not None:
            parts.append("OFFSET " + render_expr(select.offset))
    return " ".join(parts)


def render_sql(node) -> str:
    """Render an AST back to SQL text (single line, canonical spacing)."""
    if isinstance(node, Select):
        return render_select(node)
    return render_expr(node)


def iter_children(node):
    """Yield direct child nodes (lists and when-tuples are flattened)."""
    for attr in vars(node).values():
        if isinstance(attr, Node):
            yield attr
        elif isinstance(attr, (list, tuple)):
            for element in attr:
                if isinstance(element, Node):
                    yield element
                elif isinstance(element, tuple):
                    for sub in element:
                        if isinstance(sub, Node):
                            yield sub


def walk(node):
    """Depth-first pre-order traversal over all nodes."""
    yield node
    for child in iter_children(node):
        yield from walk(child)
