"""Batch reduction DSL: a minimal line-oriented script language.

Grammar (newline-terminated statements, no conditionals):

    script    := {statement NEWLINE}
    statement := NAME "=" expr | command-call | "for" NAME "in" expr
                 NEWLINE {statement NEWLINE} "endfor"
    expr      := term {"&" term}
    term      := NUMBER | STRING | NAME | COMMAND "(" [expr {"," expr}] ")"

Strings are double-quoted, numbers are f64, `&` concatenates strings.
Commands map one-to-one onto package operations (Load, ExtractBank,
Normalize, SetLabel, Merge, Focus, ConvertUnits, Group, Save, Echo, plus
the constructors EmptyDataSet and files).
"""

from __future__ import annotations

import glob as _glob
import sys
from dataclasses import dataclass, field, replace
from functools import reduce
from typing import Optional, Sequence

import numpy as np

from .dataset import DataSet, attrs_set
from .operators import (
    FocusParams,
    convert_units,
    extract_group,
    group_spectra,
    merge,
    normalize,
    relabel,
    time_focus,
)
from .retrievers import (
    Run,
    RunFileError,
    read_run,
    write_ascii_columns,
    write_hierarchical,
    write_runfile,
)

__all__ = [
    "ScriptError",
    "ParseError",
    "Script",
    "parse",
    "pretty",
    "execute",
    "builtin_files",
    "COMMAND_NAMES",
    "REFERENCE_SCRIPT",
]

# the canonical batch-reduction job: load every run in a directory, pull
# the 90-degree bank, normalize to the beam monitor, label each spectrum
# by run and start time, and merge everything into one dataset
REFERENCE_SCRIPT = """\
all = EmptyDataSet("tof_us")
for f in files("runs/*.trf")
  r = Load(f)
  b = ExtractBank(r, "bank_angle_deg", 90)
  b = Normalize(b, "monitor")
  b = SetLabel(b, "{run_number} {start_time}")
  all = Merge(all, b)
endfor
Save(all, "merged.trf", "trf")
"""


class ScriptError(ValueError):
    """Script failure with line attribution."""

    def __init__(self, message: str, line: int, column: Optional[int] = None):
        at = f"line {line}" if column is None else f"line {line}, column {column}"
        super().__init__(f"{at}: {message}")
        self.line = line
        self.column = column


class ParseError(ScriptError):
    pass


# ---------------------------------------------------------------------- AST
# line/column fields never take part in equality so a pretty-printed and
# re-parsed script compares equal to the original


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Str:
    value: str


@dataclass(frozen=True)
class Name:
    ident: str


@dataclass(frozen=True)
class Concat:
    left: object
    right: object


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple
    line: int = field(compare=False, default=0)


@dataclass(frozen=True)
class Assign:
    name: str
    expr: object
    line: int = field(compare=False, default=0)


@dataclass(frozen=True)
class ExprStmt:
    expr: Call
    line: int = field(compare=False, default=0)


@dataclass(frozen=True)
class ForLoop:
    var: str
    iterable: object
    body: tuple
    line: int = field(compare=False, default=0)


@dataclass(frozen=True)
class Script:
    statements: tuple


COMMAND_NAMES = frozenset(
    {
        "EmptyDataSet",
        "files",
        "Load",
        "ExtractBank",
        "Normalize",
        "SetLabel",
        "Merge",
        "Focus",
        "ConvertUnits",
        "Group",
        "Save",
        "Echo",
    }
)

_KEYWORDS = frozenset({"for", "in", "endfor"})


# -------------------------------------------------------------------- lexer


@dataclass(frozen=True)
class _Token:
    kind: str
    text: str
    line: int
    column: int


def _lex(text: str) -> list:
    tokens = []
    line, col = 1, 1
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch == "\n":
            tokens.append(_Token("NEWLINE", "\n", line, col))
            line += 1
            col = 1
            i += 1
            continue
        if ch in " \t\r":
            i += 1
            col += 1
            continue
        start_col = col
        if ch == '"':
            j = i + 1
            out = []
            while j < n and text[j] != '"':
                if text[j] == "\n":
                    raise ParseError("unterminated string", line, start_col)
                if text[j] == "\\":
                    if j + 1 >= n:
                        raise ParseError("unterminated string", line, start_col)
                    esc = text[j + 1]
                    if esc == "n":
                        out.append("\n")
                    elif esc in ('"', "\\"):
                        out.append(esc)
                    else:
                        raise ParseError(f"bad escape \\{esc}", line, start_col)
                    j += 2
                else:
                    out.append(text[j])
                    j += 1
            if j >= n:
                raise ParseError("unterminated string", line, start_col)
            tokens.append(_Token("STRING", "".join(out), line, start_col))
            col += j + 1 - i
            i = j + 1
            continue
        if ch.isdigit() or (
            ch == "-" and i + 1 < n and text[i + 1].isdigit()
        ):
            j = i + 1 if ch == "-" else i
            while j < n and (text[j].isdigit() or text[j] in ".eE"):
                if text[j] in "eE" and j + 1 < n and text[j + 1] in "+-":
                    j += 2
                else:
                    j += 1
            lit = text[i:j]
            try:
                value = float(lit)
            except ValueError:
                raise ParseError(f"bad number literal {lit!r}", line, start_col)
            tokens.append(_Token("NUMBER", lit, line, start_col))
            col += j - i
            i = j
            continue
        if ch.isalpha() or ch == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            word = text[i:j]
            kind = word if word in _KEYWORDS else "NAME"
            tokens.append(_Token(kind, word, line, start_col))
            col += j - i
            i = j
            continue
        if ch in "=(),&":
            tokens.append(_Token(ch, ch, line, start_col))
            i += 1
            col += 1
            continue
        raise ParseError(f"unexpected character {ch!r}", line, start_col)
    tokens.append(_Token("EOF", "", line, col))
    return tokens


# ------------------------------------------------------------------- parser


class _Parser:
    def __init__(self, tokens: list):
        self.tokens = tokens
        self.pos = 0

    def peek(self) -> _Token:
        return self.tokens[self.pos]

    def advance(self) -> _Token:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect(self, kind: str) -> _Token:
        tok = self.peek()
        if tok.kind != kind:
            what = tok.text or "end of input"
            raise ParseError(f"expected {kind}, found {what!r}", tok.line, tok.column)
        return self.advance()

    def skip_newlines(self) -> None:
        while self.peek().kind == "NEWLINE":
            self.advance()

    def parse_script(self) -> Script:
        statements = []
        self.skip_newlines()
        while self.peek().kind != "EOF":
            statements.append(self.parse_statement())
            self.skip_newlines()
        return Script(statements=tuple(statements))

    def end_statement(self) -> None:
        tok = self.peek()
        if tok.kind not in ("NEWLINE", "EOF"):
            raise ParseError(
                f"unexpected {tok.text!r} after statement", tok.line, tok.column
            )

    def parse_statement(self):
        tok = self.peek()
        if tok.kind == "for":
            return self.parse_for()
        if tok.kind == "NAME":
            nxt = self.tokens[self.pos + 1]
            if nxt.kind == "=":
                self.advance()
                self.advance()
                expr = self.parse_expr()
                self.end_statement()
                return Assign(name=tok.text, expr=expr, line=tok.line)
            if nxt.kind == "(":
                call = self.parse_expr()
                if not isinstance(call, Call):
                    raise ParseError(
                        "only command calls can stand alone", tok.line, tok.column
                    )
                self.end_statement()
                return ExprStmt(expr=call, line=tok.line)
        raise ParseError(
            f"expected a statement, found {tok.text or 'end of input'!r}",
            tok.line,
            tok.column,
        )

    def parse_for(self) -> ForLoop:
        head = self.expect("for")
        var = self.expect("NAME").text
        self.expect("in")
        iterable = self.parse_expr()
        self.expect("NEWLINE")
        body = []
        self.skip_newlines()
        while self.peek().kind != "endfor":
            if self.peek().kind == "EOF":
                raise ParseError(
                    f"for-loop at line {head.line} is missing endfor",
                    self.peek().line,
                    self.peek().column,
                )
            body.append(self.parse_statement())
            self.skip_newlines()
        self.expect("endfor")
        self.end_statement()
        return ForLoop(var=var, iterable=iterable, body=tuple(body), line=head.line)

    def parse_expr(self):
        left = self.parse_term()
        while self.peek().kind == "&":
            self.advance()
            right = self.parse_term()
            left = Concat(left=left, right=right)
        return left

    def parse_term(self):
        tok = self.peek()
        if tok.kind == "NUMBER":
            self.advance()
            return Num(value=float(tok.text))
        if tok.kind == "STRING":
            self.advance()
            return Str(value=tok.text)
        if tok.kind == "NAME":
            nxt = self.tokens[self.pos + 1]
            if nxt.kind == "(":
                return self.parse_call()
            self.advance()
            return Name(ident=tok.text)
        raise ParseError(
            f"expected an expression, found {tok.text or 'end of input'!r}",
            tok.line,
            tok.column,
        )

    def parse_call(self) -> Call:
        name_tok = self.advance()
        if name_tok.text not in COMMAND_NAMES:
            raise ParseError(
                f"unknown command {name_tok.text!r}", name_tok.line, name_tok.column
            )
        self.expect("(")
        args = []
        if self.peek().kind != ")":
            args.append(self.parse_expr())
            while self.peek().kind == ",":
                self.advance()
                args.append(self.parse_expr())
        self.expect(")")
        return Call(name=name_tok.text, args=tuple(args), line=name_tok.line)


def parse(text: str) -> Script:
    """Parse script text; syntax errors carry line and column."""
    return _Parser(_lex(text)).parse_script()


# ------------------------------------------------------------ pretty print


def _escape(s: str) -> str:
    return s.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n")


def _pretty_expr(expr) -> str:
    if isinstance(expr, Num):
        return repr(expr.value)
    if isinstance(expr, Str):
        return f'"{_escape(expr.value)}"'
    if isinstance(expr, Name):
        return expr.ident
    if isinstance(expr, Concat):
        return f"{_pretty_expr(expr.left)} & {_pretty_expr(expr.right)}"
    if isinstance(expr, Call):
        args = ", ".join(_pretty_expr(a) for a in expr.args)
        return f"{expr.name}({args})"
    raise TypeError(f"not an expression node: {expr!r}")


def _pretty_stmt(stmt, indent: int, out: list) -> None:
    pad = "  " * indent
    if isinstance(stmt, Assign):
        out.append(f"{pad}{stmt.name} = {_pretty_expr(stmt.expr)}")
    elif isinstance(stmt, ExprStmt):
        out.append(f"{pad}{_pretty_expr(stmt.expr)}")
    elif isinstance(stmt, ForLoop):
        out.append(f"{pad}for {stmt.var} in {_pretty_expr(stmt.iterable)}")
        for inner in stmt.body:
            _pretty_stmt(inner, indent + 1, out)
        out.append(f"{pad}endfor")
    else:
        raise TypeError(f"not a statement node: {stmt!r}")


def pretty(script: Script) -> str:
    """Canonical text form; parse(pretty(parse(s))) == parse(s)."""
    out: list = []
    for stmt in script.statements:
        _pretty_stmt(stmt, 0, out)
    return "\n".join(out) + "\n" if out else ""


# -------------------------------------------------------------- interpreter


def builtin_files(pattern: str) -> list:
    """Sorted glob matches, so scripted iteration order is deterministic."""
    depth = 0
    for ch in pattern:
        if ch == "[":
            depth += 1
        elif ch == "]" and depth > 0:
            depth -= 1
    if depth != 0:
        raise ValueError(f"unbalanced brackets in pattern {pattern!r}")
    return sorted(_glob.glob(pattern))


def _monitor_sum(datasets: Sequence[DataSet]) -> Optional[float]:
    total = 0.0
    seen = False
    for ds in datasets:
        for s in ds.spectra:
            if s.attr("monitor") == 1:
                total += float(np.sum(s.counts, dtype=np.float64))
                seen = True
    return total if seen else None


class _Interpreter:
    def __init__(self, env: Optional[dict], output) -> None:
        self.env: dict = dict(env) if env else {}
        self.output = output if output is not None else sys.stdout
        self.loop_line: Optional[int] = None

    def fail(self, message: str, line: int):
        context = (
            f" (in for-loop at line {self.loop_line})"
            if self.loop_line is not None
            else ""
        )
        raise ScriptError(f"{message}{context}", line)

    def run(self, script: Script) -> dict:
        for stmt in script.statements:
            self.exec_stmt(stmt)
        return self.env

    def exec_stmt(self, stmt) -> None:
        if isinstance(stmt, Assign):
            value = self.eval(stmt.expr, stmt.line)
            if value is None:
                self.fail(f"command returns nothing to assign to {stmt.name!r}", stmt.line)
            self.env[stmt.name] = value
        elif isinstance(stmt, ExprStmt):
            self.eval(stmt.expr, stmt.line)
        elif isinstance(stmt, ForLoop):
            items = self.eval(stmt.iterable, stmt.line)
            if not isinstance(items, list):
                self.fail("for-loop iterable must be a list", stmt.line)
            shadowed = self.env.get(stmt.var, _MISSING)
            outer = self.loop_line
            self.loop_line = stmt.line
            try:
                for item in items:
                    self.env[stmt.var] = item
                    for inner in stmt.body:
                        self.exec_stmt(inner)
            finally:
                self.loop_line = outer
                if shadowed is _MISSING:
                    self.env.pop(stmt.var, None)
                else:
                    self.env[stmt.var] = shadowed
        else:
            raise TypeError(f"not a statement node: {stmt!r}")

    def eval(self, expr, line: int):
        if isinstance(expr, Num):
            return expr.value
        if isinstance(expr, Str):
            return expr.value
        if isinstance(expr, Name):
            if expr.ident not in self.env:
                self.fail(f"name {expr.ident!r} is not bound", line)
            return self.env[expr.ident]
        if isinstance(expr, Concat):
            left = self.eval(expr.left, line)
            right = self.eval(expr.right, line)
            if not isinstance(left, str) or not isinstance(right, str):
                self.fail("& joins strings only", line)
            return left + right
        if isinstance(expr, Call):
            args = [self.eval(a, expr.line) for a in expr.args]
            handler = getattr(self, f"cmd_{expr.name}", None)
            if handler is None:
                self.fail(f"unknown command {expr.name!r}", expr.line)
            try:
                return handler(args)
            except ScriptError:
                raise
            except (ValueError, KeyError, OSError, RunFileError) as exc:
                self.fail(f"{expr.name}: {exc}", expr.line)
        raise TypeError(f"not an expression node: {expr!r}")

    # ---- command handlers; each checks its own arity and argument kinds

    def arity(self, args, n, name):
        if len(args) != n:
            raise ValueError(f"{name} takes {n} argument(s), got {len(args)}")

    def want(self, value, kind, what):
        if not isinstance(value, kind):
            raise ValueError(f"{what} must be a {kind.__name__}, got {type(value).__name__}")
        return value

    def cmd_EmptyDataSet(self, args):
        self.arity(args, 1, "EmptyDataSet")
        units = self.want(args[0], str, "EmptyDataSet units")
        return DataSet(title="", x_units=units)

    def cmd_files(self, args):
        self.arity(args, 1, "files")
        return builtin_files(self.want(args[0], str, "files pattern"))

    def cmd_Load(self, args):
        self.arity(args, 1, "Load")
        return read_run(self.want(args[0], str, "Load path"))

    def cmd_ExtractBank(self, args):
        self.arity(args, 3, "ExtractBank")
        source, key, value = args
        key = self.want(key, str, "ExtractBank attribute name")
        if isinstance(source, DataSet):
            return extract_group(source, key, value)
        if not isinstance(source, Run):
            raise ValueError("ExtractBank needs a run or dataset")
        # spectra matching the key can sit in any of the run's datasets;
        # the run header, not the stored dataset, carries run identity
        matches = [
            m
            for m in (extract_group(ds, key, value) for ds in source.datasets)
            if m.spectra
        ]
        if not matches:
            units = source.datasets[0].x_units if source.datasets else "tof_us"
            result = DataSet(title="", x_units=units)
        else:
            result = reduce(merge, matches)
        attrs = attrs_set(result.attributes, "run_number", source.run_number)
        attrs = attrs_set(attrs, "start_time", source.start_time)
        mon = _monitor_sum(source.datasets)
        if mon is not None:
            attrs = attrs_set(attrs, "monitor_counts", mon)
        return replace(result, attributes=attrs)

    def cmd_Normalize(self, args):
        self.arity(args, 2, "Normalize")
        ds = self.want(args[0], DataSet, "Normalize target")
        how = args[1]
        if isinstance(how, float):
            return normalize(ds, scalar=how)
        if how == "monitor":
            own = [s for s in ds.spectra if s.attr("monitor") == 1]
            if own:
                counts = np.concatenate([s.counts for s in own])
                return normalize(ds, monitor=counts)
            stored = ds.attr("monitor_counts")
            if stored is not None:
                return normalize(ds, monitor=np.array([stored], dtype=np.float64))
            raise ValueError("dataset carries no monitor information")
        raise ValueError(f"Normalize mode must be a number or \"monitor\", got {how!r}")

    def cmd_SetLabel(self, args):
        self.arity(args, 2, "SetLabel")
        ds = self.want(args[0], DataSet, "SetLabel target")
        return relabel(ds, self.want(args[1], str, "SetLabel template"))

    def cmd_Merge(self, args):
        self.arity(args, 2, "Merge")
        return merge(
            self.want(args[0], DataSet, "Merge left"),
            self.want(args[1], DataSet, "Merge right"),
        )

    def cmd_Focus(self, args):
        self.arity(args, 4, "Focus")
        ds = self.want(args[0], DataSet, "Focus target")
        theta_deg = self.want(args[1], float, "Focus reference theta (degrees)")
        l2 = self.want(args[2], float, "Focus reference L2")
        l1 = self.want(args[3], float, "Focus reference L1")
        params = FocusParams(
            ref_theta_rad=float(np.radians(theta_deg)), ref_l2_m=l2, ref_l1_m=l1
        )
        return time_focus(ds, params)

    def cmd_ConvertUnits(self, args):
        self.arity(args, 2, "ConvertUnits")
        ds = self.want(args[0], DataSet, "ConvertUnits target")
        return convert_units(ds, self.want(args[1], str, "ConvertUnits target units"))

    def cmd_Group(self, args):
        self.arity(args, 1, "Group")
        ds = self.want(args[0], DataSet, "Group target")
        grouping = {s.id: s.group_id for s in ds.spectra}
        return group_spectra(ds, grouping)

    def cmd_Save(self, args):
        self.arity(args, 3, "Save")
        target, path, fmt = args
        path = self.want(path, str, "Save path")
        fmt = self.want(fmt, str, "Save format")
        if fmt == "trf":
            if isinstance(target, Run):
                write_runfile(
                    path,
                    target.instrument,
                    target.run_number,
                    target.start_time,
                    list(target.datasets),
                )
            elif isinstance(target, DataSet):
                write_runfile(
                    path,
                    "script",
                    int(target.attr("run_number") or 0),
                    int(target.attr("start_time") or 0),
                    [target],
                )
            else:
                raise ValueError("Save needs a run or dataset")
            return None
        if fmt == "ascii":
            ds = self.want(target, DataSet, "Save ascii target")
            write_ascii_columns(ds, path)
            return None
        if fmt == "json":
            if isinstance(target, DataSet):
                target = Run(
                    instrument="script",
                    run_number=int(target.attr("run_number") or 0),
                    start_time=int(target.attr("start_time") or 0),
                    datasets=(target,),
                )
            if not isinstance(target, Run):
                raise ValueError("Save needs a run or dataset")
            write_hierarchical(target, path)
            return None
        raise ValueError(f'Save format must be "trf", "ascii" or "json", got {fmt!r}')

    def cmd_Echo(self, args):
        self.arity(args, 1, "Echo")
        value = args[0]
        if isinstance(value, DataSet):
            text = f"DataSet({value.title!r}, {len(value)} spectra)"
        elif isinstance(value, Run):
            text = (
                f"Run({value.instrument!r}, {value.run_number},"
                f" {len(value.datasets)} datasets)"
            )
        elif isinstance(value, float) and value.is_integer():
            text = str(int(value))
        else:
            text = str(value)
        print(text, file=self.output)
        return None


class _Missing:
    pass


_MISSING = _Missing()


def execute(script: Script, env: Optional[dict] = None, output=None) -> dict:
    """Run a parsed script; returns the final environment.

    Any operation failure is re-raised as ScriptError with the line of the
    offending statement (and the enclosing loop, if any).
    """
    return _Interpreter(env, output).run(script)
