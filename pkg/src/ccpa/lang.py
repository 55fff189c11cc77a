"""Parser, pretty-printer and static checker for the ``.ccpa`` model DSL.

A model file declares symbolic tokens, physical environments, process and
attack definitions, and systems (environment + secured devices + process).
The grammar is documented in ``docs/dsl.md``.  Parse and resolution errors
carry source spans and print as ``file:line:col: message``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from . import expr as E
from .expr import Expr, MODE_LITERALS, Num
from .model import (
    Environment,
    EvolutionSpec,
    MeasurementSpec,
    ModelError,
    SystemConfig,
    well_formed,
)
from .process import (
    Call,
    Choice,
    Definition,
    Guarded,
    IfElse,
    Nil,
    NIL,
    Par,
    Persist,
    ReadDev,
    Recv,
    Restrict,
    Send,
    Term,
    Tick,
    TickPow,
    WriteDev,
    check_time_guarded,
    is_honest,
    iter_prefixes,
    mk_call,
    mk_choice,
    mk_guarded,
    mk_ifelse,
    mk_par,
    mk_persist,
    mk_restrict,
    mk_tick,
    mk_tickpow,
    mk_ticks,
    prefix_to_str,
    reachable_defs,
    term_to_str,
)

KEYWORDS = {
    "env", "var", "unc", "act", "sensor", "err", "evolve", "inv", "safe",
    "proc", "attack", "system", "secured", "tokens", "if", "then", "else",
    "read", "write", "hread", "hwrite", "tick", "on", "off", "min", "max",
    "noise", "unguarded",
}

TOKEN_BASE = 1000.0  # declared tokens encode as 1001.0, 1002.0, ...


@dataclass(frozen=True)
class Diagnostic:
    severity: str  # "error" | "warning"
    message: str
    line: int
    col: int

    def render(self, path: str = "<model>") -> str:
        return f"{path}:{self.line}:{self.col}: {self.severity}: {self.message}"


class ModelSyntaxError(Exception):
    def __init__(self, diagnostics: list[Diagnostic], path: str = "<model>"):
        self.diagnostics = diagnostics
        self.path = path
        super().__init__("\n".join(d.render(path) for d in diagnostics))


@dataclass
class SystemDecl:
    name: str
    env_name: str
    secured: frozenset[str]
    process: Term


@dataclass
class ModelFile:
    tokens: dict[str, float] = field(default_factory=dict)
    envs: dict[str, Environment] = field(default_factory=dict)
    defs: dict[str, Definition] = field(default_factory=dict)
    systems: dict[str, SystemDecl] = field(default_factory=dict)
    order: list[tuple[str, str]] = field(default_factory=list)  # (kind, name)

    def system(self, name: str | None = None) -> SystemConfig:
        if name is None:
            if len(self.systems) == 1:
                name = next(iter(self.systems))
            elif "Sys" in self.systems:
                name = "Sys"
            else:
                raise ModelError(
                    f"model declares {len(self.systems)} systems; name one of "
                    f"{sorted(self.systems)}"
                )
        decl = self.systems[name]
        cfg = SystemConfig(
            env=self.envs[decl.env_name],
            secured=decl.secured,
            process=decl.process,
            defs=self.defs,
        )
        if not well_formed(cfg):
            raise ModelError(f"system {name!r} is not well-formed")
        return cfg

    def attack_names(self) -> list[str]:
        return [n for n, d in self.defs.items() if d.is_attack]

    def instantiate(self, name: str, params: dict[str, float] | None = None) -> Term:
        """Instantiate a (possibly parameterised) definition as a term."""
        d = self.defs[name]
        args = tuple(Num(float((params or {})[p])) for p in d.params)
        return mk_call(name, args)

    def guard_literals(self) -> list[float]:
        lits: set[float] = set()

        def walk_expr(e: Expr, in_guard: bool):
            if isinstance(e, Num) and in_guard:
                lits.add(e.value)
            for attr in ("left", "right", "arg"):
                sub = getattr(e, attr, None)
                if sub is not None:
                    walk_expr(sub, in_guard or isinstance(e, E.Cmp))
            if isinstance(e, E.Fn):
                for a in e.args:
                    walk_expr(a, in_guard)
            if isinstance(e, E.IfExpr):
                walk_expr(e.cond, True)
                walk_expr(e.then, in_guard)
                walk_expr(e.els, in_guard)

        def walk_term(t: Term):
            if isinstance(t, IfElse):
                walk_expr(t.cond, True)
                walk_term(t.then)
                walk_term(t.els)
            elif isinstance(t, (Guarded, Persist)):
                walk_term(t.body)
                if isinstance(t, Guarded):
                    walk_term(t.alt)
            elif isinstance(t, (Tick, TickPow)):
                walk_term(t.cont)
            elif isinstance(t, (Par, Choice)):
                walk_term(t.left)
                walk_term(t.right)
            elif isinstance(t, Restrict):
                walk_term(t.body)

        for d in self.defs.values():
            walk_term(d.body)
        return sorted(lits)

    def palette(self, extras: tuple[float, ...] = ()) -> tuple[float, ...]:
        """Finite value palette: every guard literal, each offset by every
        sensor error, the actuator mode encodings and declared tokens."""
        vals: set[float] = {0.0, E.ON, E.OFF}
        vals.update(self.tokens.values())
        errors = {0.0}
        for env in self.envs.values():
            errors.update(env.sensor_error.values())
        for g in self.guard_literals():
            for e in errors:
                vals.update((g - e, g, g + e))
        vals.update(extras)
        return tuple(sorted(vals))


# ---------------------------------------------------------------------------
# Lexer
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+|//[^\n]*)
  | (?P<num>(?:\d+\.\d+|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op><\+>|\|\||\|>|&&|<-|[<>!=]=|['{}()\[\],;.!?<>=+\-*/\\^])
    """,
    re.VERBOSE,
)


@dataclass
class Tok:
    kind: str  # num | name | op | eof
    text: str
    line: int
    col: int


def _lex(text: str) -> list[Tok]:
    toks: list[Tok] = []
    pos = 0
    line = 1
    col = 1
    n = len(text)
    while pos < n:
        m = _TOKEN_RE.match(text, pos)
        if not m:
            raise ModelSyntaxError(
                [Diagnostic("error", f"unexpected character {text[pos]!r}", line, col)]
            )
        chunk = m.group(0)
        if m.lastgroup != "ws":
            toks.append(Tok(m.lastgroup, chunk, line, col))
        nl = chunk.count("\n")
        if nl:
            line += nl
            col = len(chunk) - chunk.rfind("\n")
        else:
            col += len(chunk)
        pos = m.end()
    toks.append(Tok("eof", "", line, col))
    return toks


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


class _Parser:
    def __init__(self, text: str, path: str = "<model>"):
        self.toks = _lex(text)
        self.pos = 0
        self.path = path
        self.model = ModelFile()
        self.diags: list[Diagnostic] = []
        self._unguarded_next = False

    # -- token helpers ---------------------------------------------------

    @property
    def cur(self) -> Tok:
        return self.toks[self.pos]

    def at(self, text: str) -> bool:
        return self.cur.text == text and self.cur.kind in ("op", "name")

    def eat(self, text: str | None = None, kind: str | None = None) -> Tok:
        t = self.cur
        if text is not None and t.text != text:
            self.fail(f"expected {text!r}, found {t.text!r}" if t.text else f"expected {text!r}")
        if kind is not None and t.kind != kind:
            self.fail(f"expected {kind}, found {t.text!r}")
        self.pos += 1
        return t

    def try_eat(self, text: str) -> bool:
        if self.at(text):
            self.pos += 1
            return True
        return False

    def fail(self, message: str):
        t = self.cur
        raise ModelSyntaxError(
            self.diags + [Diagnostic("error", message, t.line, t.col)], self.path
        )

    def name(self, what: str = "name") -> str:
        t = self.cur
        if t.kind != "name" or t.text in KEYWORDS:
            self.fail(f"expected {what}")
        self.pos += 1
        return t.text

    # -- model -------------------------------------------------------------

    def parse(self) -> ModelFile:
        if self.cur.kind == "eof":
            self.fail("expected declaration")
        while self.cur.kind != "eof":
            if self.at("tokens"):
                self._tokens()
            elif self.at("env"):
                self._env()
            elif self.at("proc"):
                self._proc(is_attack=False)
            elif self.at("attack"):
                self._proc(is_attack=True)
            elif self.at("unguarded"):
                self.eat("unguarded")
                self._unguarded_next = True
                if not self.at("attack") and not self.at("proc"):
                    self.fail("'unguarded' must precede a proc or attack definition")
            elif self.at("system"):
                self._system()
            else:
                self.fail("expected declaration")
        return self.model

    def _tokens(self):
        self.eat("tokens")
        while True:
            t = self.cur
            n = self.name("token name")
            if n in self.model.tokens:
                self.diags.append(Diagnostic("error", f"duplicate token {n}", t.line, t.col))
            self.model.tokens[n] = TOKEN_BASE + len(self.model.tokens) + 1
            if not self.try_eat(","):
                break
        self.eat(";")

    def _num(self) -> float:
        neg = self.try_eat("-")
        t = self.eat(kind="num")
        v = float(t.text)
        return -v if neg else v

    def _env(self):
        self.eat("env")
        t0 = self.cur
        name = self.name("environment name")
        self.eat("{")
        state: dict[str, float] = {}
        unc: dict[str, float] = {}
        acts: dict[str, float] = {}
        errs: dict[str, float] = {}
        sources: dict[str, Expr] = {}
        updates: dict[str, Expr] = {}
        inv: Expr | None = None
        safe: Expr | None = None
        while not self.try_eat("}"):
            if self.try_eat("var"):
                x = self.name("variable")
                self.eat("=")
                state[x] = self._num()
                self.eat("unc")
                unc[x] = self._num()
                self.eat(";")
            elif self.try_eat("act"):
                a = self.name("actuator")
                self.eat("=")
                if self.try_eat("on"):
                    acts[a] = E.ON
                elif self.try_eat("off"):
                    acts[a] = E.OFF
                else:
                    acts[a] = self._num()
                self.eat(";")
            elif self.try_eat("sensor"):
                s = self.name("sensor")
                self.eat("err")
                errs[s] = self._num()
                self.eat("<-")
                sources[s] = self._expr()
                self.eat(";")
            elif self.try_eat("evolve"):
                self.eat("{")
                while not self.try_eat("}"):
                    x = self.name("variable")
                    self.eat("'")
                    self.eat("=")
                    updates[x] = self._expr()
                    self.eat(";")
            elif self.try_eat("inv"):
                inv = self._expr()
                self.eat(";")
            elif self.try_eat("safe"):
                safe = self._expr()
                self.eat(";")
            else:
                self.fail("expected environment item")
        if inv is None or safe is None:
            self.diags.append(
                Diagnostic("error", f"env {name}: missing inv or safe", t0.line, t0.col)
            )
            self.fail(f"env {name}: missing inv or safe")
        env = Environment(
            state=state,
            actuators=acts,
            uncertainty=unc,
            evolution=EvolutionSpec(updates),
            sensor_error=errs,
            measurement=MeasurementSpec(sources),
            invariant=inv,
            safety=safe,
        )
        if name in self.model.envs:
            self.fail(f"duplicate env {name}")
        self.model.envs[name] = env
        self.model.order.append(("env", name))

    def _proc(self, is_attack: bool):
        unguarded = self._unguarded_next
        self._unguarded_next = False
        self.eat("attack" if is_attack else "proc")
        name = self.name("definition name")
        params: tuple[str, ...] = ()
        if self.try_eat("("):
            ps = []
            while not self.try_eat(")"):
                ps.append(self.name("parameter"))
                if not self.at(")"):
                    self.eat(",")
            params = tuple(ps)
        self.eat("=")
        body = self._process()
        if name in self.model.defs:
            self.fail(f"duplicate definition {name}")
        self.model.defs[name] = Definition(name, params, body, unguarded, is_attack)
        self.model.order.append(("def", name))

    def _system(self):
        self.eat("system")
        name = self.name("system name")
        self.eat("=")
        env_name = self.name("environment name")
        secured: frozenset[str] = frozenset()
        if self.try_eat("["):
            self.eat("secured")
            self.eat("{")
            names = []
            while not self.try_eat("}"):
                names.append(self.name("device"))
                if not self.at("}"):
                    self.eat(",")
            secured = frozenset(names)
            self.eat("]")
        self.eat("|>")
        proc = self._process()
        if name in self.model.systems:
            self.fail(f"duplicate system {name}")
        self.model.systems[name] = SystemDecl(name, env_name, secured, proc)
        self.model.order.append(("system", name))

    # -- processes -----------------------------------------------------------

    def _process(self) -> Term:
        left = self._par()
        while self.try_eat("<+>"):
            left = mk_choice(left, self._par())
        return left

    def _par(self) -> Term:
        left = self._restrict()
        while self.try_eat("||"):
            left = mk_par(left, self._restrict())
        return left

    def _restrict(self) -> Term:
        t = self._prefix_term()
        while self.try_eat("\\"):
            self.eat("{")
            chans = []
            while not self.try_eat("}"):
                chans.append(self.name("channel"))
                if not self.at("}"):
                    self.eat(",")
            t = mk_restrict(t, frozenset(chans))
        return t

    def _block(self) -> Term:
        if self.try_eat("{"):
            t = self._process()
            self.eat("}")
            return t
        return self._prefix_term()

    def _prefix_term(self) -> Term:
        t = self.cur
        if self.try_eat("0"):
            return NIL
        if t.kind == "num" and t.text == "0":  # lexer yields "0" as num
            self.pos += 1
            return NIL
        if self.try_eat("("):
            inner = self._process()
            self.eat(")")
            return inner
        if self.at("tick"):
            self.eat("tick")
            if self.try_eat("^"):
                if self.cur.kind == "num":
                    k = int(self.eat(kind="num").text)
                    cont = self._cont()
                    return mk_ticks(k, cont)
                self.eat("(")
                e = self._expr()
                self.eat(")")
                cont = self._cont()
                return mk_tickpow(e, cont)
            cont = self._cont()
            return mk_tick(cont)
        if self.at("if"):
            self.eat("if")
            cond = self._expr()
            self.eat("then")
            then = self._block()
            els: Term = NIL
            if self.try_eat("else"):
                els = self._block()
            return mk_ifelse(cond, then, els)
        if self.at("["):
            self.eat("[")
            pfx = self._try_prefix()
            if pfx is None:
                self.fail("expected prefix")
            body: Term = NIL
            if self.try_eat("."):
                body = self._process()
            self.eat("]")
            alt: Term = NIL
            if self.try_eat(">"):
                alt = self._prefix_term()
            return mk_guarded(pfx, body, alt)
        # bare prefix (time-persistent) or call
        pfx = self._try_prefix()
        if pfx is not None:
            body: Term = NIL
            if self.try_eat("."):
                body = self._prefix_term()
            return mk_persist(pfx, body)
        if self.cur.kind == "name" and self.cur.text not in KEYWORDS:
            name = self.name()
            args: tuple[Expr, ...] = ()
            if self.try_eat("("):
                a = []
                while not self.try_eat(")"):
                    a.append(self._expr())
                    if not self.at(")"):
                        self.eat(",")
                args = tuple(a)
            return mk_call(name, args)
        self.fail("expected process")

    def _cont(self) -> Term:
        if self.try_eat("."):
            return self._prefix_term()
        return NIL

    def _try_prefix(self):
        """Prefix lookahead: read/write/hread/hwrite keywords, or NAME!/NAME?."""
        if self.at("read") or self.at("hread"):
            hacked = self.cur.text == "hread"
            self.pos += 1
            dev = self.name("device")
            self.eat("(")
            binder = self.name("binder")
            self.eat(")")
            return ReadDev(dev, binder, hacked)
        if self.at("write") or self.at("hwrite"):
            hacked = self.cur.text == "hwrite"
            self.pos += 1
            dev = self.name("device")
            self.eat("(")
            value = self._expr()
            self.eat(")")
            return WriteDev(dev, value, hacked)
        if (
            self.cur.kind == "name"
            and self.cur.text not in KEYWORDS
            and self.toks[self.pos + 1].text in ("!", "?")
        ):
            chan = self.name()
            if self.try_eat("!"):
                if self._starts_expr():
                    return Send(chan, self._expr())
                return Send(chan, Num(0.0))
            self.eat("?")
            if self.try_eat("("):
                binder = self.name("binder")
                self.eat(")")
                return Recv(chan, binder)
            return Recv(chan, "_")
        return None

    def _starts_expr(self) -> bool:
        t = self.cur
        if t.kind == "num":
            return True
        if t.text in ("(", "-", "!"):
            # '(' would also start nothing else after '!', '-x' negation
            return t.text != "!"
        if t.kind == "name" and (t.text not in KEYWORDS or t.text in ("on", "off", "min", "max", "if", "noise")):
            return True
        return False

    # -- expressions -----------------------------------------------------------

    def _expr(self) -> Expr:
        return self._or()

    def _or(self) -> Expr:
        left = self._and()
        while self.try_eat("||"):
            left = E.BoolOp("||", left, self._and())
        return left

    def _and(self) -> Expr:
        left = self._cmp()
        while self.try_eat("&&"):
            left = E.BoolOp("&&", left, self._cmp())
        return left

    def _cmp(self) -> Expr:
        left = self._add()
        for op in (">=", "<=", "==", "!=", ">", "<"):
            if self.at(op):
                self.eat(op)
                return E.Cmp(op, left, self._add())
        return left

    def _add(self) -> Expr:
        left = self._mul()
        while True:
            if self.try_eat("+"):
                left = E.BinOp("+", left, self._mul())
            elif self.try_eat("-"):
                left = E.BinOp("-", left, self._mul())
            else:
                return left

    def _mul(self) -> Expr:
        left = self._unary()
        while True:
            if self.try_eat("*"):
                left = E.BinOp("*", left, self._unary())
            elif self.try_eat("/"):
                left = E.BinOp("/", left, self._unary())
            else:
                return left

    def _unary(self) -> Expr:
        if self.try_eat("-"):
            return E.Neg(self._unary())
        if self.try_eat("!"):
            return E.Not(self._unary())
        return self._atom()

    def _atom(self) -> Expr:
        t = self.cur
        if t.kind == "num":
            self.pos += 1
            return Num(float(t.text))
        if self.try_eat("("):
            e = self._expr()
            self.eat(")")
            return e
        if self.at("if"):
            self.eat("if")
            cond = self._expr()
            self.eat("then")
            then = self._expr()
            self.eat("else")
            els = self._expr()
            return E.IfExpr(cond, then, els)
        if self.at("min") or self.at("max"):
            fn = self.cur.text
            self.pos += 1
            self.eat("(")
            args = [self._expr()]
            while self.try_eat(","):
                args.append(self._expr())
            self.eat(")")
            return E.Fn(fn, tuple(args))
        if self.at("noise"):
            self.eat("noise")
            self.eat("(")
            x = self.name("variable")
            self.eat(")")
            return E.Noise(x)
        if self.at("on") or self.at("off"):
            name = self.cur.text
            self.pos += 1
            return E.Name(name)
        if t.kind == "name" and t.text not in KEYWORDS:
            self.pos += 1
            if t.text in self.model.tokens:
                return Num(self.model.tokens[t.text])
            return E.Name(t.text)
        self.fail("expected expression")


def parse_model(text: str, path: str = "<model>") -> ModelFile:
    """Parse and statically check a complete model file."""
    parser = _Parser(text, path)
    model = parser.parse()
    diags = parser.diags + static_check(model)
    errors = [d for d in diags if d.severity == "error"]
    if errors:
        raise ModelSyntaxError(errors, path)
    return model


def parse_model_file(path: str) -> ModelFile:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_model(fh.read(), path)


# ---------------------------------------------------------------------------
# Static checks
# ---------------------------------------------------------------------------


def _expr_type(e: Expr, diags: list[Diagnostic], where: str) -> str:
    def err(msg: str) -> str:
        diags.append(Diagnostic("error", f"{where}: {msg}", 1, 1))
        return "real"

    if isinstance(e, (Num, E.Lit, E.Noise)):
        return "real"
    if isinstance(e, E.Name):
        return "real"
    if isinstance(e, E.Neg):
        if _expr_type(e.arg, diags, where) != "real":
            return err("negation of a boolean")
        return "real"
    if isinstance(e, E.Not):
        if _expr_type(e.arg, diags, where) != "bool":
            return err("'!' applied to a number")
        return "bool"
    if isinstance(e, E.BinOp):
        if (
            _expr_type(e.left, diags, where) != "real"
            or _expr_type(e.right, diags, where) != "real"
        ):
            return err(f"arithmetic '{e.op}' on a boolean")
        return "real"
    if isinstance(e, E.Cmp):
        if (
            _expr_type(e.left, diags, where) != "real"
            or _expr_type(e.right, diags, where) != "real"
        ):
            return err(f"comparison '{e.op}' on a boolean")
        return "bool"
    if isinstance(e, E.BoolOp):
        if (
            _expr_type(e.left, diags, where) != "bool"
            or _expr_type(e.right, diags, where) != "bool"
        ):
            err(f"'{e.op}' on a number")
        return "bool"
    if isinstance(e, E.Fn):
        for a in e.args:
            if _expr_type(a, diags, where) != "real":
                err(f"{e.name}() argument is boolean")
        return "real"
    if isinstance(e, E.IfExpr):
        if _expr_type(e.cond, diags, where) != "bool":
            err("conditional guard is not boolean")
        t1 = _expr_type(e.then, diags, where)
        t2 = _expr_type(e.els, diags, where)
        if t1 != t2:
            err("conditional branches have different types")
        return t1
    raise TypeError(e)


def _noise_positions_ok(e: Expr, var: str) -> bool:
    """noise(var) may only occur in additive position with unit weight."""

    def walk(e: Expr, additive: bool) -> bool:
        if isinstance(e, E.Noise):
            return additive
        if isinstance(e, E.BinOp):
            if e.op in ("+", "-"):
                return walk(e.left, additive) and walk(e.right, additive)
            return walk(e.left, False) and walk(e.right, False)
        if isinstance(e, E.Neg):
            return walk(e.arg, additive)
        if isinstance(e, (E.Cmp, E.BoolOp)):
            return walk(e.left, False) and walk(e.right, False)
        if isinstance(e, E.Not):
            return walk(e.arg, False)
        if isinstance(e, E.Fn):
            return all(walk(a, False) for a in e.args)
        if isinstance(e, E.IfExpr):
            return (
                walk(e.cond, False)
                and walk(e.then, additive)
                and walk(e.els, additive)
            )
        return True

    return walk(e, True)


def _free_value_names(t: Term, bound: frozenset[str]) -> set[str]:
    """Free expression-level names in a term (binders and params removed)."""
    out: set[str] = set()

    def expr_frees(e: Expr, bound: frozenset[str]):
        for n in E.free_names(e):
            if n not in bound and n not in MODE_LITERALS:
                out.add(n)

    def walk(t: Term, bound: frozenset[str]):
        if isinstance(t, Tick):
            walk(t.cont, bound)
        elif isinstance(t, TickPow):
            expr_frees(t.count, bound)
            walk(t.cont, bound)
        elif isinstance(t, (Par, Choice)):
            walk(t.left, bound)
            walk(t.right, bound)
        elif isinstance(t, Restrict):
            walk(t.body, bound)
        elif isinstance(t, IfElse):
            expr_frees(t.cond, bound)
            walk(t.then, bound)
            walk(t.els, bound)
        elif isinstance(t, Call):
            for a in t.args:
                expr_frees(a, bound)
        elif isinstance(t, (Guarded, Persist)):
            p = t.prefix
            inner = bound
            if isinstance(p, (Send,)):
                expr_frees(p.value, bound)
            elif isinstance(p, WriteDev):
                expr_frees(p.value, bound)
            elif isinstance(p, (Recv, ReadDev)):
                inner = bound | {p.binder}
            walk(t.body, inner)
            if isinstance(t, Guarded):
                walk(t.alt, bound)

    walk(t, bound)
    return out


def static_check(model: ModelFile) -> list[Diagnostic]:
    diags: list[Diagnostic] = []

    def err(msg: str):
        diags.append(Diagnostic("error", msg, 1, 1))

    # namespace disjointness
    all_vars: set[str] = set()
    all_sensors: set[str] = set()
    all_acts: set[str] = set()
    for env in model.envs.values():
        all_vars |= set(env.state)
        all_sensors |= set(env.sensor_error)
        all_acts |= set(env.actuators)
    chans: set[str] = set()
    for d in model.defs.values():
        for p in iter_prefixes(d.body):
            if isinstance(p, (Send, Recv)):
                chans.add(p.chan)
    for sys in model.systems.values():
        for p in iter_prefixes(sys.process):
            if isinstance(p, (Send, Recv)):
                chans.add(p.chan)
    spaces = {
        "variable": all_vars,
        "sensor": all_sensors,
        "actuator": all_acts,
        "channel": chans,
        "token": set(model.tokens),
        "definition": set(model.defs),
    }
    names = sorted(set().union(*spaces.values()))
    for n in names:
        kinds = [k for k, s in spaces.items() if n in s]
        if len(kinds) > 1:
            err(f"name {n!r} used in several namespaces: {', '.join(kinds)}")

    # environment expressions
    for name, env in model.envs.items():
        phys = set(env.state) | set(env.actuators)
        for x, upd in env.evolution.updates.items():
            for n in E.free_names(upd) - MODE_LITERALS.keys():
                if n not in phys:
                    err(f"env {name}: update of {x} references undeclared {n!r}")
            for node in _noise_nodes(upd):
                if node.var != x:
                    err(f"env {name}: update of {x} uses noise({node.var})")
            if not _noise_positions_ok(upd, x):
                err(f"env {name}: noise({x}) must be an additive term")
            _expr_type(upd, diags, f"env {name}: update of {x}")
        for s, src in env.measurement.sources.items():
            for n in E.free_names(src) - MODE_LITERALS.keys():
                if n not in env.state:
                    err(f"env {name}: sensor {s} references {n!r} (not a variable)")
            _expr_type(src, diags, f"env {name}: sensor {s}")
        for kind, pred in (("inv", env.invariant), ("safe", env.safety)):
            for n in E.free_names(pred) - MODE_LITERALS.keys():
                if n not in env.state:
                    err(f"env {name}: {kind} references {n!r} (not a variable)")
            if _expr_type(pred, diags, f"env {name}: {kind}") != "bool":
                err(f"env {name}: {kind} is not boolean")

    # definitions
    guardedness = check_time_guarded(model.defs)
    for name, d in model.defs.items():
        for called in reachable_defs(d.body, model.defs) | {name}:
            if called not in model.defs:
                err(f"{name}: call to undefined {called!r}")
        free = _free_value_names(d.body, frozenset(d.params))
        free -= set(model.defs)  # bare calls parse as calls, not names
        if free:
            err(f"{name}: unbound names {sorted(free)}")
        if not guardedness.get(name, True) and not d.time_unguarded:
            err(f"{name}: recursion is not time-guarded (mark 'unguarded')")
        for p in iter_prefixes(d.body):
            if isinstance(p, ReadDev):
                if p.hacked:
                    if p.device not in all_sensors | all_acts:
                        err(f"{name}: hread of undeclared device {p.device!r}")
                elif p.device not in all_sensors:
                    err(f"{name}: read from {p.device!r} (not a sensor)")
            elif isinstance(p, WriteDev):
                if p.hacked:
                    if p.device not in all_sensors | all_acts:
                        err(f"{name}: hwrite to undeclared device {p.device!r}")
                elif p.device not in all_acts:
                    err(f"{name}: write to {p.device!r} (not an actuator)")
            if isinstance(p, (Send, WriteDev)):
                _expr_type(p.value, diags, name)
        if d.is_attack:
            for helper in reachable_defs(d.body, model.defs) | {name}:
                hd = model.defs.get(helper)
                if hd is None:
                    continue
                for p in iter_prefixes(hd.body):
                    if isinstance(p, (Send, Recv)):
                        err(f"attack {name}: channel prefix in {helper}")
                    elif isinstance(p, (ReadDev, WriteDev)) and not p.hacked:
                        err(f"attack {name}: genuine device access in {helper}")

    # conditional guards must be boolean
    def check_guards(t: Term, where: str):
        if isinstance(t, IfElse):
            if _expr_type(t.cond, diags, where) != "bool":
                err(f"{where}: 'if' guard is not boolean")
            check_guards(t.then, where)
            check_guards(t.els, where)
        elif isinstance(t, (Tick, TickPow)):
            check_guards(t.cont, where)
        elif isinstance(t, (Par, Choice)):
            check_guards(t.left, where)
            check_guards(t.right, where)
        elif isinstance(t, Restrict):
            check_guards(t.body, where)
        elif isinstance(t, (Guarded, Persist)):
            check_guards(t.body, where)
            if isinstance(t, Guarded):
                check_guards(t.alt, where)

    for name, d in model.defs.items():
        check_guards(d.body, name)

    # systems
    for name, sys in model.systems.items():
        if sys.env_name not in model.envs:
            err(f"system {name}: unknown environment {sys.env_name!r}")
            continue
        env = model.envs[sys.env_name]
        unknown = sys.secured - env.devices()
        if unknown:
            err(f"system {name}: secured devices not declared: {sorted(unknown)}")
        for called in reachable_defs(sys.process, model.defs):
            if called not in model.defs:
                err(f"system {name}: call to undefined {called!r}")
        free = _free_value_names(sys.process, frozenset())
        free -= set(model.defs)
        if free:
            err(f"system {name}: unbound names {sorted(free)}")
        check_guards(sys.process, f"system {name}")
        try:
            cfg = SystemConfig(env, sys.secured, sys.process, model.defs)
            if not well_formed(cfg):
                err(f"system {name}: not well-formed (undeclared device use)")
        except (ModelError, KeyError) as exc:
            err(f"system {name}: {exc}")

    return diags


def _noise_nodes(e: Expr):
    if isinstance(e, E.Noise):
        yield e
    for attr in ("left", "right", "arg", "cond", "then", "els"):
        sub = getattr(e, attr, None)
        if sub is not None:
            yield from _noise_nodes(sub)
    for a in getattr(e, "args", ()) or ():
        yield from _noise_nodes(a)


# ---------------------------------------------------------------------------
# Pretty printer
# ---------------------------------------------------------------------------


def _fmt_num(v: float) -> str:
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def print_model(model: ModelFile) -> str:
    out: list[str] = []
    if model.tokens:
        toks = sorted(model.tokens, key=lambda n: model.tokens[n])
        out.append(f"tokens {', '.join(toks)};")
        out.append("")
    done: set[tuple[str, str]] = set()
    for kind, name in model.order:
        if (kind, name) in done:
            continue
        done.add((kind, name))
        if kind == "env":
            out.append(print_env(name, model.envs[name]))
        elif kind == "def":
            d = model.defs[name]
            kw = "attack" if d.is_attack else "proc"
            if d.time_unguarded:
                kw = "unguarded " + kw
            params = f"({', '.join(d.params)})" if d.params else ""
            out.append(f"{kw} {name}{params} = {term_to_str(d.body)}")
        elif kind == "system":
            sys = model.systems[name]
            sec = ", ".join(sorted(sys.secured))
            out.append(
                f"system {name} = {sys.env_name} [secured {{{sec}}}] |> "
                f"{term_to_str(sys.process)}"
            )
        out.append("")
    return "\n".join(out).rstrip() + "\n"


def print_env(name: str, env: Environment) -> str:
    lines = [f"env {name} {{"]
    for x, v in env.state.items():
        lines.append(f"  var {x} = {_fmt_num(v)} unc {_fmt_num(env.uncertainty[x])};")
    for a, v in env.actuators.items():
        if v == E.ON:
            init = "on"
        elif v == E.OFF:
            init = "off"
        else:
            init = _fmt_num(v)
        lines.append(f"  act {a} = {init};")
    for s, e in env.sensor_error.items():
        src = E.expr_to_str(env.measurement.sources[s])
        lines.append(f"  sensor {s} err {_fmt_num(e)} <- {src};")
    lines.append("  evolve {")
    for x, upd in env.evolution.updates.items():
        lines.append(f"    {x}' = {E.expr_to_str(upd)};")
    lines.append("  }")
    lines.append(f"  inv {E.expr_to_str(env.invariant)};")
    lines.append(f"  safe {E.expr_to_str(env.safety)};")
    lines.append("}")
    return "\n".join(lines)


def models_equal(m1: ModelFile, m2: ModelFile) -> bool:
    """Structural model equality (terms are interned, so identity works)."""
    if m1.tokens != m2.tokens:
        return False
    if set(m1.defs) != set(m2.defs) or set(m1.envs) != set(m2.envs):
        return False
    for n, d in m1.defs.items():
        if d != m2.defs[n]:
            return False
    for n, e in m1.envs.items():
        o = m2.envs[n]
        if (
            e.state != o.state
            or e.actuators != o.actuators
            or e.uncertainty != o.uncertainty
            or e.sensor_error != o.sensor_error
            or dict(e.evolution.updates) != dict(o.evolution.updates)
            or dict(e.measurement.sources) != dict(o.measurement.sources)
            or e.invariant != o.invariant
            or e.safety != o.safety
        ):
            return False
    if set(m1.systems) != set(m2.systems):
        return False
    for n, s in m1.systems.items():
        o = m2.systems[n]
        if (s.env_name, s.secured, s.process) != (o.env_name, o.secured, o.process):
            return False
    return True
