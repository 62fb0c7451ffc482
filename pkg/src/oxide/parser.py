"""Recursive-descent parser for the ``.ox`` surface syntax.

Programs are a list of ``struct``/``fn`` items followed by a body made of
``;``-separated statements.  ``let x: T = e;`` scopes over the remainder of
its block.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import List, Optional, Tuple

from oxide.ast import (
    ArrayExpr, ArrayTy, Abort, App, Assign, BOOL, BoolLit, Borrow, BorrowIdx, BorrowSlice,
    Closure, Concrete, FnDef, FnTy, GlobalEnv, If, Let, Loan, NumLit, OwnQual, Place,
    ProvVar, RefTy, Seq, SliceTy, SourceSpan, STR, StrLit, StructDef, StructExpr, StructTy,
    TupleExpr, TupleTy, TyVar, U32_T, UNIT, UnitLit, Use, Expr, Type, Proj, FieldProj,
)


class OxideError(Exception):
    """Raised with a diagnostic code, message and optional source span."""

    def __init__(self, code: str, message: str, span: Optional[SourceSpan] = None):
        super().__init__(f"{code}: {message}")
        self.code = code
        self.message = message
        self.span = span

    @property
    def diagnostic(self) -> "Diagnostic":
        return Diagnostic(self.code, self.message, self.span)


@dataclass(frozen=True)
class Diagnostic:
    code: str
    message: str
    span: Optional[SourceSpan]

    def render(self) -> str:
        where = f" at {self.span}" if self.span is not None else ""
        return f"error[{self.code}]: {self.message}{where}"


_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r\n]+)
  | (?P<comment>//[^\n]*)
  | (?P<string>"(?:[^"\\\n]|\\.)*")
  | (?P<lifetime>'[A-Za-z_][A-Za-z0-9_]*)
  | (?P<int>[0-9]+)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<punct>::|->|:=|\.\.|\|\||[{}()\[\];:,.<>&*=|])
    """,
    re.VERBOSE,
)

KEYWORDS = {"let", "mut", "if", "else", "fn", "struct", "true", "false", "abort",
            "uniq", "shrd", "u32", "bool", "String", "unit"}
RUNTIME_KEYWORDS = {"pop", "ptr", "closure"}


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    line: int
    col: int
    end_line: int
    end_col: int


def tokenize(src: str, file: str = "<input>") -> List[Token]:
    tokens = []
    pos, line, col = 0, 1, 1
    while pos < len(src):
        m = _TOKEN_RE.match(src, pos)
        if m is None:
            span = SourceSpan(file, line, col, line, col)
            raise OxideError("E-PARSE", f"unexpected character {src[pos]!r}", span)
        text = m.group()
        kind = m.lastgroup
        end_line, end_col = line, col
        for ch in text:
            if ch == "\n":
                end_line += 1
                end_col = 1
            else:
                end_col += 1
        if kind not in ("ws", "comment"):
            if kind == "ident" and text in KEYWORDS:
                kind = "kw"
            tokens.append(Token(kind, text, line, col, end_line, end_col))
        line, col = end_line, end_col
        pos = m.end()
    tokens.append(Token("eof", "", line, col, line, col))
    return tokens


class Parser:
    def __init__(self, src: str, file: str = "<input>"):
        self.file = file
        self.toks = tokenize(src, file)
        self.i = 0
        self.struct_names = {self.toks[k + 1].text for k in range(len(self.toks) - 1)
                             if self.toks[k].text == "struct" and self.toks[k + 1].kind == "ident"}

    # -- token helpers

    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def peek(self, k: int = 1) -> Token:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def at(self, *texts: str) -> bool:
        return self.tok.text in texts and self.tok.kind not in ("string", "eof")

    def error(self, msg: str, tok: Optional[Token] = None):
        tok = tok or self.tok
        found = "end of input" if tok.kind == "eof" else repr(tok.text)
        raise OxideError("E-PARSE", f"{msg}, found {found}", self._span(tok, tok))

    def _span(self, start: Token, end: Token) -> SourceSpan:
        return SourceSpan(self.file, start.line, start.col, end.end_line, end.end_col)

    def span_from(self, start: Token) -> SourceSpan:
        return self._span(start, self.toks[max(self.i - 1, 0)])

    def advance(self) -> Token:
        t = self.tok
        self.i += 1
        return t

    def expect(self, text: str) -> Token:
        if not self.at(text):
            self.error(f"expected {text!r}")
        return self.advance()

    def accept(self, text: str) -> bool:
        if self.at(text):
            self.advance()
            return True
        return False

    def ident(self) -> str:
        if self.tok.kind != "ident":
            self.error("expected identifier")
        if self.tok.text in RUNTIME_KEYWORDS:
            self.error("runtime-only syntax is not allowed in source")
        return self.advance().text

    # -- items

    def program(self) -> Tuple[GlobalEnv, Expr]:
        fns, structs = [], []
        while self.at("struct", "fn"):
            if self.at("struct"):
                d = self.struct_def()
                structs.append((d.name, d))
            else:
                d = self.fn_def()
                fns.append((d.name, d))
        body = self.seq(top=True)
        if self.tok.kind != "eof":
            self.error("expected end of program")
        return GlobalEnv(tuple(fns), tuple(structs)), body

    def generic_params(self) -> Tuple[Tuple[str, ...], Tuple[str, ...]]:
        provs, tys = [], []
        if self.accept("<"):
            while not self.at(">"):
                if self.tok.kind == "lifetime":
                    if tys:
                        self.error("provenance parameters must precede type parameters")
                    provs.append(self.advance().text[1:])
                else:
                    tys.append(self.ident())
                if not self.accept(","):
                    break
            self.expect(">")
        return tuple(provs), tuple(tys)

    def struct_def(self) -> StructDef:
        start = self.expect("struct")
        name = self.ident()
        provs, tys = self.generic_params()
        if self.accept("("):
            types = self.comma_list(")", self.type_)
            self.expect(";")
            return StructDef(name, provs, tys, tuple(types), None, span=self.span_from(start))
        self.expect("{")
        names, types = [], []
        while not self.at("}"):
            names.append(self.ident())
            self.expect(":")
            types.append(self.type_())
            if not self.accept(","):
                break
        self.expect("}")
        self.accept(";")
        return StructDef(name, provs, tys, tuple(types), tuple(names), span=self.span_from(start))

    def fn_def(self) -> FnDef:
        start = self.expect("fn")
        name = self.ident()
        provs, tys = self.generic_params()
        self.expect("(")
        params = self.comma_list(")", self.param)
        ret = UNIT
        if self.accept("->"):
            ret = self.type_()
        body = self.block()
        return FnDef(name, provs, tys, tuple(params), ret, body, span=self.span_from(start))

    def param(self) -> Tuple[str, Type]:
        self.accept("mut")
        name = self.ident()
        self.expect(":")
        return name, self.type_()

    def comma_list(self, close: str, item) -> list:
        out = []
        while not self.at(close):
            out.append(item())
            if not self.accept(","):
                break
        self.expect(close)
        return out

    # -- types

    def qual(self) -> OwnQual:
        if self.accept("uniq"):
            return OwnQual.UNIQ
        if self.accept("shrd"):
            return OwnQual.SHRD
        self.error("expected ownership qualifier 'uniq' or 'shrd'")

    def provenance(self):
        if self.tok.kind == "lifetime":
            return ProvVar(self.advance().text[1:])
        if self.accept("{"):
            loans = self.comma_list("}", lambda: Loan(self.qual(), self.place()))
            return Concrete(loans)
        self.error("expected provenance")

    def type_(self) -> Type:
        t = self.tok
        if self.accept("u32"):
            return U32_T
        if self.accept("bool"):
            return BOOL
        if self.accept("String"):
            return STR
        if self.accept("unit"):
            return UNIT
        if self.accept("("):
            if self.accept(")"):
                return UNIT
            elems = [self.type_()]
            trailing = False
            while self.accept(","):
                trailing = True
                if self.at(")"):
                    break
                elems.append(self.type_())
                trailing = False
            self.expect(")")
            if len(elems) == 1 and not trailing:
                return elems[0]
            return TupleTy(tuple(elems))
        if self.accept("&"):
            prov = self.provenance()
            q = self.qual()
            return RefTy(prov, q, self.type_())
        if self.accept("["):
            elem = self.type_()
            if self.accept(";"):
                if self.tok.kind != "int":
                    self.error("expected array length")
                n = int(self.advance().text)
                self.expect("]")
                return ArrayTy(elem, n)
            self.expect("]")
            return SliceTy(elem)
        if self.accept("fn"):
            provs, tys = self.generic_params()
            self.expect("(")
            params = self.comma_list(")", self.type_)
            self.expect("->")
            ret = self.type_()
            captured = ()
            if self.tok.text == "captures" and self.tok.kind == "ident":
                self.advance()
                self.expect("{")
                captured = tuple(self.comma_list("}", self._captured_entry))
            return FnTy(provs, tys, tuple(params), ret, captured)
        if t.kind == "ident":
            name = self.ident()
            if name in self.struct_names:
                provs, tys = (), ()
                if self.at("<"):
                    provs, tys = self.type_args()
                return StructTy(name, provs, tys)
            return TyVar(name)
        self.error("expected type")

    def _captured_entry(self):
        p = self.place()
        self.expect(":")
        return p, self.type_()

    def type_args(self):
        """``<'a, {shrd x}, u32>``: provenances first, then types."""
        self.expect("<")
        provs, tys = [], []
        while not self.at(">"):
            if self.tok.kind == "lifetime" or self.at("{"):
                if tys:
                    self.error("provenance arguments must precede type arguments")
                provs.append(self.provenance())
            else:
                tys.append(self.type_())
            if not self.accept(","):
                break
        self.expect(">")
        return tuple(provs), tuple(tys)

    # -- places

    def place(self) -> Place:
        if self.accept("*"):
            return self.place().deref()
        if self.accept("("):
            p = self.place()
            self.expect(")")
        else:
            p = Place(self.ident())
        while self.at(".") and self.peek().kind in ("int", "ident"):
            self.advance()
            t = self.advance()
            p = p.proj(int(t.text)) if t.kind == "int" else p.field(t.text)
        return p

    # -- expressions

    def block(self) -> Expr:
        self.expect("{")
        e = self.seq()
        self.expect("}")
        return e

    def seq(self, top: bool = False) -> Expr:
        """Statements up to the closing brace (or end of input at top level)."""
        def at_end():
            return self.tok.kind == "eof" if top else self.at("}")

        if at_end():
            return UnitLit(span=self.span_from(self.tok))
        start = self.tok
        if self.at("let"):
            self.advance()
            self.accept("mut")
            name = self.ident()
            self.expect(":")
            annot = self.type_()
            if not (self.accept("=") or self.accept(":=")):
                self.error("expected '='")
            rhs = self.expr()
            self.expect(";")
            span = self.span_from(start)
            body = self.seq(top)
            return Let(name, annot, rhs, body, span=span)
        e = self.expr()
        block_like = isinstance(e, If) or start.text == "{"
        if self.accept(";"):
            if at_end():
                return Seq(e, UnitLit(span=self.span_from(self.tok)), span=e.span)
            return Seq(e, self.seq(top), span=e.span)
        if at_end():
            return e
        if block_like and self.toks[self.i - 1].text == "}":
            return Seq(e, self.seq(top), span=e.span)
        self.error("expected ';'")

    def expr(self, no_struct: bool = False) -> Expr:
        start = self.tok
        lhs = self.unary(no_struct)
        if self.at("=", ":="):
            if not isinstance(lhs, Use):
                self.error("left-hand side of assignment must be a place", start)
            self.advance()
            rhs = self.expr(no_struct)
            return Assign(lhs.place, rhs, span=self.span_from(start))
        return lhs

    def unary(self, no_struct: bool = False) -> Expr:
        start = self.tok
        if self.accept("*"):
            inner = self.unary(no_struct)
            if not isinstance(inner, Use):
                self.error("only places can be dereferenced", start)
            return Use(inner.place.deref(), span=self.span_from(start))
        if self.accept("&"):
            q = self.qual()
            target_tok = self.tok
            inner = self.unary(no_struct)
            if not isinstance(inner, Use):
                self.error("only places can be borrowed", target_tok)
            if self.accept("["):
                lo = self.expr()
                if self.accept(".."):
                    hi = self.expr()
                    self.expect("]")
                    return BorrowSlice(q, inner.place, lo, hi, span=self.span_from(start))
                self.expect("]")
                return BorrowIdx(q, inner.place, lo, span=self.span_from(start))
            return Borrow(q, inner.place, span=self.span_from(start))
        return self.postfix(no_struct)

    def postfix(self, no_struct: bool) -> Expr:
        start = self.tok
        e = self.primary(no_struct)
        while True:
            if self.at(".") and self.peek().kind in ("int", "ident"):
                if not isinstance(e, Use):
                    self.error("projection of a non-place expression")
                self.advance()
                t = self.advance()
                p = e.place.proj(int(t.text)) if t.kind == "int" else e.place.field(t.text)
                e = Use(p, span=self.span_from(start))
            elif self.at("::") or self.at("("):
                provs, tys = (), ()
                if self.accept("::"):
                    provs, tys = self.type_args()
                self.expect("(")
                args = self.comma_list(")", self.expr)
                e = App(e, provs, tys, tuple(args), span=self.span_from(start))
            else:
                return e

    def primary(self, no_struct: bool) -> Expr:
        start = self.tok
        t = self.tok
        if t.kind == "int":
            self.advance()
            return NumLit(int(t.text), span=self.span_from(start))
        if t.kind == "string":
            self.advance()
            return StrLit(json.loads(t.text), span=self.span_from(start))
        if self.accept("true"):
            return BoolLit(True, span=self.span_from(start))
        if self.accept("false"):
            return BoolLit(False, span=self.span_from(start))
        if self.accept("("):
            if self.accept(")"):
                return UnitLit(span=self.span_from(start))
            first = self.expr()
            if self.accept(")"):
                return first
            elems = [first]
            while self.accept(","):
                if self.at(")"):
                    break
                elems.append(self.expr())
            self.expect(")")
            return TupleExpr(tuple(elems), span=self.span_from(start))
        if self.accept("["):
            elems = self.comma_list("]", self.expr)
            return ArrayExpr(tuple(elems), span=self.span_from(start))
        if self.at("{"):
            return self.block()
        if self.accept("if"):
            cond = self.expr(no_struct=True)
            then = self.block()
            else_ = UnitLit(span=self.span_from(self.tok))
            if self.accept("else"):
                if self.at("if"):
                    else_ = self.primary(no_struct)
                else:
                    else_ = self.block()
            return If(cond, then, else_, span=self.span_from(start))
        if self.accept("abort"):
            self.expect("(")
            if self.tok.kind != "string":
                self.error("abort expects a string literal")
            msg = json.loads(self.advance().text)
            self.expect(")")
            return Abort(msg, span=self.span_from(start))
        if self.at("<", "|", "||"):
            return self.closure()
        if t.kind == "ident":
            name = self.ident()
            if name in self.struct_names:
                return self.struct_ctor(name, start, no_struct)
            return Use(Place(name), span=self.span_from(start))
        self.error("expected expression")

    def closure(self) -> Expr:
        start = self.tok
        provs, tys = self.generic_params()
        if self.accept("||"):
            params = []
        else:
            self.expect("|")
            params = self.comma_list("|", self.param)
        body = self.block()
        return Closure(provs, tys, tuple(params), body, span=self.span_from(start))

    def struct_ctor(self, name: str, start: Token, no_struct: bool) -> Expr:
        provs, tys = (), ()
        if self.accept("::"):
            provs, tys = self.type_args()
        if self.accept("("):
            args = self.comma_list(")", self.expr)
            return StructExpr(name, provs, tys, tuple(args), None, span=self.span_from(start))
        if self.at("{") and not no_struct:
            self.advance()
            names, args = [], []
            while not self.at("}"):
                names.append(self.ident())
                self.expect(":")
                args.append(self.expr())
                if not self.accept(","):
                    break
            self.expect("}")
            return StructExpr(name, provs, tys, tuple(args), tuple(names), span=self.span_from(start))
        if not provs and not tys:
            # a unit-like use of a struct name; left to the checker to reject
            return Use(Place(name), span=self.span_from(start))
        self.error("expected struct constructor arguments")


def parse_program(src: str, file: str = "<input>") -> Tuple[GlobalEnv, Expr]:
    """Parse a whole program into its global definitions and body."""
    return Parser(src, file).program()


def parse_expr(src: str, file: str = "<input>") -> Expr:
    p = Parser(src, file)
    e = p.seq(top=True)
    if p.tok.kind != "eof":
        p.error("expected end of expression")
    return e


def parse_type(src: str, struct_names=()) -> Type:
    p = Parser(src)
    p.struct_names |= set(struct_names)
    t = p.type_()
    if p.tok.kind != "eof":
        p.error("expected end of type")
    return t


def parse_place(src: str) -> Place:
    p = Parser(src)
    pl = p.place()
    if p.tok.kind != "eof":
        p.error("expected end of place")
    return pl
