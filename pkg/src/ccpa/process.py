"""Process terms of the calculus: nil, tick prefix, parallel composition,
prefixing with timeout, conditionals, channel restriction and recursion,
plus an internal nondeterministic choice used by synthesised attackers.

Terms are immutable and hash-consed so that executors can memoise on term
identity; the running control states of a model collapse onto a small set
of shared nodes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Mapping

from .expr import Expr, Lit, expr_to_str, free_names, subst_expr

# ---------------------------------------------------------------------------
# Prefixes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Prefix:
    pass


@dataclass(frozen=True)
class Send(Prefix):
    chan: str
    value: Expr


@dataclass(frozen=True)
class Recv(Prefix):
    chan: str
    binder: str


@dataclass(frozen=True)
class ReadDev(Prefix):
    """Sensor/device read; ``hacked`` marks the malicious variant."""

    device: str
    binder: str
    hacked: bool = False


@dataclass(frozen=True)
class WriteDev(Prefix):
    """Actuator/device write; ``hacked`` marks the malicious variant."""

    device: str
    value: Expr
    hacked: bool = False


# ---------------------------------------------------------------------------
# Terms
# ---------------------------------------------------------------------------


class Term:
    """Base class; subclasses are interned via the mk_* constructors."""

    __slots__ = ("_key", "_hash")

    def __eq__(self, other) -> bool:  # interning makes identity equality valid
        return self is other

    def __hash__(self) -> int:
        return self._hash

    def __repr__(self) -> str:
        return term_to_str(self)


class Nil(Term):
    __slots__ = ()


class Tick(Term):
    __slots__ = ("cont",)


class Par(Term):
    __slots__ = ("left", "right")


class Guarded(Term):
    """Prefix with timeout:  [pi . body] > alt."""

    __slots__ = ("prefix", "body", "alt")


class Persist(Term):
    """Time-persistent prefix  pi . body  (retries every slot)."""

    __slots__ = ("prefix", "body")


class IfElse(Term):
    __slots__ = ("cond", "then", "els")


class Restrict(Term):
    __slots__ = ("body", "chans")


class Call(Term):
    __slots__ = ("name", "args")


class Choice(Term):
    """Internal nondeterministic branch (used by the top attacker)."""

    __slots__ = ("left", "right")


class TickPow(Term):
    """tick^e with a parameter-dependent exponent, unfolded at run time."""

    __slots__ = ("count", "cont")


_INTERN: dict[tuple, Term] = {}
_INTERN_LOCK = __import__("threading").Lock()


def _intern(cls, key: tuple, fill) -> Term:
    full_key = (cls.__name__,) + key
    t = _INTERN.get(full_key)
    if t is None:
        with _INTERN_LOCK:
            t = _INTERN.get(full_key)
            if t is None:
                t = object.__new__(cls)
                fill(t)
                t._key = full_key
                t._hash = hash(full_key)
                _INTERN[full_key] = t
    return t


NIL: Nil = _intern(Nil, (), lambda t: None)  # type: ignore[assignment]


def mk_tick(cont: Term) -> Term:
    def fill(t):
        t.cont = cont

    return _intern(Tick, (cont,), fill)


def mk_par(left: Term, right: Term) -> Term:
    def fill(t):
        t.left = left
        t.right = right

    return _intern(Par, (left, right), fill)


def mk_guarded(prefix: Prefix, body: Term, alt: Term) -> Term:
    def fill(t):
        t.prefix = prefix
        t.body = body
        t.alt = alt

    return _intern(Guarded, (prefix, body, alt), fill)


def mk_persist(prefix: Prefix, body: Term) -> Term:
    def fill(t):
        t.prefix = prefix
        t.body = body

    return _intern(Persist, (prefix, body), fill)


def mk_ifelse(cond: Expr, then: Term, els: Term) -> Term:
    def fill(t):
        t.cond = cond
        t.then = then
        t.els = els

    return _intern(IfElse, (cond, then, els), fill)


def mk_restrict(body: Term, chans: frozenset[str]) -> Term:
    if not chans:
        return body

    def fill(t):
        t.body = body
        t.chans = chans

    return _intern(Restrict, (body, tuple(sorted(chans))), fill)


def mk_call(name: str, args: tuple[Expr, ...] = ()) -> Term:
    def fill(t):
        t.name = name
        t.args = args

    return _intern(Call, (name, args), fill)


def mk_choice(left: Term, right: Term) -> Term:
    def fill(t):
        t.left = left
        t.right = right

    return _intern(Choice, (left, right), fill)


def mk_tickpow(count: Expr, cont: Term) -> Term:
    def fill(t):
        t.count = count
        t.cont = cont

    return _intern(TickPow, (count, cont), fill)


def mk_ticks(k: int, cont: Term) -> Term:
    for _ in range(k):
        cont = mk_tick(cont)
    return cont


# ---------------------------------------------------------------------------
# Definitions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Definition:
    name: str
    params: tuple[str, ...]
    body: Term
    time_unguarded: bool = False
    is_attack: bool = False


Defs = Mapping[str, Definition]


# ---------------------------------------------------------------------------
# Substitution (binder -> runtime value)
# ---------------------------------------------------------------------------


def subst_term(t: Term, binding: Mapping[str, object]) -> Term:
    if not binding:
        return t
    if isinstance(t, Nil):
        return t
    if isinstance(t, Tick):
        return mk_tick(subst_term(t.cont, binding))
    if isinstance(t, TickPow):
        return mk_tickpow(subst_expr(t.count, binding), subst_term(t.cont, binding))
    if isinstance(t, Par):
        return mk_par(subst_term(t.left, binding), subst_term(t.right, binding))
    if isinstance(t, Guarded):
        pfx, inner = _subst_prefix(t.prefix, binding)
        return mk_guarded(pfx, subst_term(t.body, inner), subst_term(t.alt, binding))
    if isinstance(t, Persist):
        pfx, inner = _subst_prefix(t.prefix, binding)
        return mk_persist(pfx, subst_term(t.body, inner))
    if isinstance(t, IfElse):
        return mk_ifelse(
            subst_expr(t.cond, binding),
            subst_term(t.then, binding),
            subst_term(t.els, binding),
        )
    if isinstance(t, Restrict):
        return mk_restrict(subst_term(t.body, binding), t.chans)
    if isinstance(t, Call):
        return mk_call(t.name, tuple(subst_expr(a, binding) for a in t.args))
    if isinstance(t, Choice):
        return mk_choice(subst_term(t.left, binding), subst_term(t.right, binding))
    raise TypeError(t)


def _subst_prefix(p: Prefix, binding: Mapping[str, object]):
    """Returns the substituted prefix and the binding for the prefix body
    (binders shadow outer bindings)."""
    if isinstance(p, Send):
        return Send(p.chan, subst_expr(p.value, binding)), binding
    if isinstance(p, WriteDev):
        return WriteDev(p.device, subst_expr(p.value, binding), p.hacked), binding
    if isinstance(p, Recv):
        inner = {k: v for k, v in binding.items() if k != p.binder}
        return p, inner
    if isinstance(p, ReadDev):
        inner = {k: v for k, v in binding.items() if k != p.binder}
        return p, inner
    raise TypeError(p)


# ---------------------------------------------------------------------------
# Structural queries
# ---------------------------------------------------------------------------


def iter_prefixes(t: Term) -> Iterator[Prefix]:
    """All prefixes syntactically present in the term (not through calls)."""
    if isinstance(t, (Guarded, Persist)):
        yield t.prefix
        yield from iter_prefixes(t.body)
        if isinstance(t, Guarded):
            yield from iter_prefixes(t.alt)
    elif isinstance(t, Tick):
        yield from iter_prefixes(t.cont)
    elif isinstance(t, TickPow):
        yield from iter_prefixes(t.cont)
    elif isinstance(t, (Par, Choice)):
        yield from iter_prefixes(t.left)
        yield from iter_prefixes(t.right)
    elif isinstance(t, IfElse):
        yield from iter_prefixes(t.then)
        yield from iter_prefixes(t.els)
    elif isinstance(t, Restrict):
        yield from iter_prefixes(t.body)


def called_names(t: Term) -> set[str]:
    if isinstance(t, Call):
        return {t.name}
    if isinstance(t, (Guarded, Persist)):
        out = called_names(t.body)
        if isinstance(t, Guarded):
            out |= called_names(t.alt)
        return out
    if isinstance(t, (Tick, TickPow)):
        return called_names(t.cont)
    if isinstance(t, (Par, Choice)):
        return called_names(t.left) | called_names(t.right)
    if isinstance(t, IfElse):
        return called_names(t.then) | called_names(t.els)
    if isinstance(t, Restrict):
        return called_names(t.body)
    return set()


def reachable_defs(t: Term, defs: Defs) -> set[str]:
    """Definition names reachable from the term through calls."""
    seen: set[str] = set()
    todo = list(called_names(t))
    while todo:
        n = todo.pop()
        if n in seen:
            continue
        seen.add(n)
        if n in defs:
            todo.extend(called_names(defs[n].body))
    return seen


def mentioned_devices(t: Term, defs: Defs) -> set[tuple[str, bool, bool]]:
    """(device, is_read, hacked) triples mentioned in the term and in every
    definition reachable from it."""
    out: set[tuple[str, bool, bool]] = set()
    bodies = [t] + [defs[n].body for n in reachable_defs(t, defs) if n in defs]
    for b in bodies:
        for p in iter_prefixes(b):
            if isinstance(p, ReadDev):
                out.add((p.device, True, p.hacked))
            elif isinstance(p, WriteDev):
                out.add((p.device, False, p.hacked))
    return out


def is_honest(t: Term, defs: Defs) -> bool:
    """True iff no malicious read/write prefix occurs, including in called
    definitions, transitively."""
    for name in called_names(t):
        if name not in defs:
            raise KeyError(f"unresolved definition {name!r}")
    for dev, _read, hacked in mentioned_devices(t, defs):
        if hacked:
            return False
    return True


def check_time_guarded(defs: Defs) -> dict[str, bool]:
    """Per-definition time-guardedness: every recursive call (to any process
    identifier) occurs under a tick prefix or in a timeout alternative."""

    def unguarded_calls(t: Term) -> set[str]:
        if isinstance(t, Call):
            return {t.name}
        if isinstance(t, Tick):
            return set()  # time-guarded
        if isinstance(t, TickPow):
            return unguarded_calls(t.cont)  # exponent may evaluate to zero
        if isinstance(t, Guarded):
            return unguarded_calls(t.body)  # alt is time-guarded
        if isinstance(t, Persist):
            return unguarded_calls(t.body)
        if isinstance(t, (Par, Choice)):
            return unguarded_calls(t.left) | unguarded_calls(t.right)
        if isinstance(t, IfElse):
            return unguarded_calls(t.then) | unguarded_calls(t.els)
        if isinstance(t, Restrict):
            return unguarded_calls(t.body)
        return set()

    # A definition is time-guarded iff no cycle of unguarded calls passes
    # through it.
    graph = {name: unguarded_calls(d.body) & set(defs) for name, d in defs.items()}
    result: dict[str, bool] = {}
    for name in defs:
        stack = [name]
        seen: set[str] = set()
        ok = True
        while stack:
            cur = stack.pop()
            for nxt in graph.get(cur, ()):
                if nxt == name:
                    ok = False
                    stack = []
                    break
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        result[name] = ok
    return result


# ---------------------------------------------------------------------------
# Printing
# ---------------------------------------------------------------------------


def prefix_to_str(p: Prefix) -> str:
    if isinstance(p, Send):
        from .expr import Num

        if isinstance(p.value, Num) and p.value.value == 0.0:
            return f"{p.chan}!"
        return f"{p.chan}!{expr_to_str(p.value, 6)}"
    if isinstance(p, Recv):
        if p.binder == "_":
            return f"{p.chan}?"
        return f"{p.chan}?({p.binder})"
    if isinstance(p, ReadDev):
        kw = "hread" if p.hacked else "read"
        return f"{kw} {p.device}({p.binder})"
    if isinstance(p, WriteDev):
        kw = "hwrite" if p.hacked else "write"
        return f"{kw} {p.device}({expr_to_str(p.value)})"
    raise TypeError(p)


def term_to_str(t: Term, prec: int = 0) -> str:
    # precedence: 0 choice, 1 parallel, 2 restriction, 3 prefix/atoms
    if isinstance(t, Nil):
        return "0"
    if isinstance(t, Tick):
        n = 0
        cur: Term = t
        while isinstance(cur, Tick):
            n += 1
            cur = cur.cont
        head = "tick" if n == 1 else f"tick^{n}"
        if isinstance(cur, Nil):
            s = head
        else:
            s = f"{head}.{term_to_str(cur, 3)}"
        return s
    if isinstance(t, TickPow):
        head = f"tick^({expr_to_str(t.count)})"
        if isinstance(t.cont, Nil):
            return head
        return f"{head}.{term_to_str(t.cont, 3)}"
    if isinstance(t, Par):
        s = f"{term_to_str(t.left, 2)} || {term_to_str(t.right, 1)}"
        return f"({s})" if prec > 1 else s
    if isinstance(t, Choice):
        s = f"{term_to_str(t.left, 1)} <+> {term_to_str(t.right, 0)}"
        return f"({s})" if prec > 0 else s
    if isinstance(t, Guarded):
        body = "" if isinstance(t.body, Nil) else f" . {term_to_str(t.body, 3)}"
        s = f"[{prefix_to_str(t.prefix)}{body}]"
        if not isinstance(t.alt, Nil):
            s += f" > {term_to_str(t.alt, 3)}"
        return s
    if isinstance(t, Persist):
        if isinstance(t.body, Nil):
            return prefix_to_str(t.prefix)
        return f"{prefix_to_str(t.prefix)} . {term_to_str(t.body, 3)}"
    if isinstance(t, IfElse):
        s = f"if {expr_to_str(t.cond)} then {{ {term_to_str(t.then)} }}"
        if not isinstance(t.els, Nil):
            s += f" else {{ {term_to_str(t.els)} }}"
        return s
    if isinstance(t, Restrict):
        chans = ", ".join(sorted(t.chans))
        return f"{term_to_str(t.body, 3)} \\ {{{chans}}}"
    if isinstance(t, Call):
        if not t.args:
            return t.name
        return f"{t.name}({', '.join(expr_to_str(a) for a in t.args)})"
    raise TypeError(t)
