"""Programmatic builders for the bundled engine case study and its attack
catalog, guaranteed structurally identical to parsing the bundled
``models/*.ccpa`` sources.
"""

from __future__ import annotations

import importlib.resources
from functools import lru_cache
from pathlib import Path

from . import expr as E
from .expr import Num
from .lang import ModelFile, parse_model
from .model import ModelError, SystemConfig
from .process import (
    Definition,
    NIL,
    ReadDev,
    Recv,
    Send,
    Term,
    WriteDev,
    mk_call,
    mk_guarded,
    mk_ifelse,
    mk_par,
    mk_persist,
    mk_restrict,
    mk_tick,
    mk_tickpow,
    mk_ticks,
)

_ROOT = Path(__file__).resolve().parents[2]

ENGINE_PATH = _ROOT / "models" / "engine.ccpa"
ATTACKS_PATH = _ROOT / "models" / "attacks.ccpa"

PARAM_RANGES = {
    "a_dos": {"m": (1, 10_000)},
    "a_dos_iter": {"m": (1, 10_000), "len": (1, 100)},
    "a_freeze": {},
    "a_offset": {"n": (0, 100)},
    "a_offset_k": {"n": (0, 100), "k": (2, 10)},
    "b_warmup": {"n": (1, 15), "k": (2, 10)},
}


def model_text() -> str:
    return ENGINE_PATH.read_text() + "\n" + ATTACKS_PATH.read_text()


@lru_cache(maxsize=1)
def load() -> ModelFile:
    """The parsed engine model with the attack catalog merged in."""
    return parse_model(model_text(), str(ENGINE_PATH))


def engine_system(secured: bool = False) -> SystemConfig:
    return load().system("SysSecured" if secured else "Sys")


def build(name: str, **params: float):
    """Catalog constructor: systems by name, attacks by name + parameters.

    Raises ModelError for unknown names or out-of-range parameters.
    """
    m = load()
    if name in m.systems:
        if params:
            raise ModelError(f"system {name} takes no parameters")
        return m.system(name)
    if name not in m.defs or not m.defs[name].is_attack:
        raise ModelError(f"unknown catalog entry {name!r}")
    ranges = PARAM_RANGES.get(name)
    if ranges is not None:
        if set(params) != set(ranges):
            raise ModelError(
                f"{name} expects parameters {sorted(ranges)}, got {sorted(params)}"
            )
        for p, v in params.items():
            lo, hi = ranges[p]
            if not (lo <= v <= hi):
                raise ModelError(f"{name}: parameter {p}={v} outside {lo}..{hi}")
    return m.instantiate(name, params)


# ---------------------------------------------------------------------------
# Programmatic twins of the bundled text (used by equivalence tests)
# ---------------------------------------------------------------------------


def programmatic_defs() -> dict[str, Definition]:
    """The controller and attack definitions built in code."""
    x = E.Name("x")
    y = E.Name("y")
    n = E.Name("n")
    k = E.Name("k")
    i = E.Name("i")
    m = E.Name("m")
    tokens = {"high_temp": 1001.0, "keep_cooling": 1002.0, "stop": 1003.0}

    ctrl = mk_persist(
        ReadDev("st", "x"),
        mk_ifelse(
            E.Cmp(">", x, Num(10.0)), mk_call("Cooling"), mk_tick(mk_call("Ctrl"))
        ),
    )
    cooling = mk_persist(
        WriteDev("cool", E.Name("on")), mk_ticks(5, mk_call("Check"))
    )
    check = mk_persist(
        Send("sync", Num(0.0)),
        mk_persist(
            Recv("ins", "y"),
            mk_ifelse(
                E.Cmp("==", y, Num(tokens["keep_cooling"])),
                mk_ticks(5, mk_call("Check")),
                mk_persist(
                    WriteDev("cool", E.Name("off")), mk_tick(mk_call("Ctrl"))
                ),
            ),
        ),
    )
    ids = mk_persist(
        Recv("sync", "_"),
        mk_persist(
            ReadDev("st", "x"),
            mk_ifelse(
                E.Cmp(">", x, Num(10.0)),
                mk_persist(
                    Send("alarm", Num(tokens["high_temp"])),
                    mk_persist(
                        Send("ins", Num(tokens["keep_cooling"])),
                        mk_tick(mk_call("IDS")),
                    ),
                ),
                mk_persist(
                    Send("ins", Num(tokens["stop"])), mk_tick(mk_call("IDS"))
                ),
            ),
        ),
    )

    a_dos = mk_tickpow(
        E.BinOp("-", m, Num(1.0)),
        mk_guarded(
            ReadDev("cool", "x", hacked=True),
            mk_ifelse(
                E.Cmp("==", x, E.Name("off")),
                mk_guarded(WriteDev("cool", E.Name("off"), hacked=True), NIL, NIL),
                NIL,
            ),
            NIL,
        ),
    )
    dos_burst = mk_ifelse(
        E.Cmp(">=", i, Num(1.0)),
        mk_guarded(
            ReadDev("cool", "x", hacked=True),
            mk_ifelse(
                E.Cmp("==", x, E.Name("off")),
                mk_guarded(
                    WriteDev("cool", E.Name("off"), hacked=True),
                    mk_tick(mk_call("dos_burst", (E.BinOp("-", i, Num(1.0)),))),
                    NIL,
                ),
                NIL,
            ),
            mk_call("dos_burst", (E.BinOp("-", i, Num(1.0)),)),
        ),
        NIL,
    )
    a_dos_iter = mk_tickpow(
        E.BinOp("-", m, Num(1.0)), mk_call("dos_burst", (E.Name("len"),))
    )
    a_freeze = mk_tick(
        mk_guarded(
            ReadDev("st", "x", hacked=True), mk_call("freeze_loop", (x,)), NIL
        )
    )
    freeze_loop = mk_guarded(
        WriteDev("st", y, hacked=True),
        mk_tick(mk_call("freeze_loop", (y,))),
        mk_call("freeze_loop", (y,)),
    )

    def offset_body(name: str, minus: E.Expr, extra: tuple[str, ...]) -> Term:
        nm1 = E.BinOp("-", n, Num(1.0))
        rec_args = (nm1,) + tuple(E.Name(p) for p in extra)
        rec = mk_call(name, rec_args)
        return mk_ifelse(
            E.Cmp(">=", n, Num(1.0)),
            mk_guarded(
                ReadDev("st", "x", hacked=True),
                mk_guarded(
                    WriteDev("st", E.BinOp("-", x, minus), hacked=True),
                    mk_tick(rec),
                    rec,
                ),
                rec,
            ),
            NIL,
        )

    a_offset = offset_body("a_offset", Num(2.0), ())
    a_offset_k = offset_body("a_offset_k", k, ("k",))
    b_warmup = mk_ticks(300, mk_call("a_offset_k", (n, k)))

    return {
        "Ctrl": Definition("Ctrl", (), ctrl),
        "Cooling": Definition("Cooling", (), cooling),
        "Check": Definition("Check", (), check),
        "IDS": Definition("IDS", (), ids),
        "a_dos": Definition("a_dos", ("m",), a_dos, is_attack=True),
        "a_dos_iter": Definition(
            "a_dos_iter", ("m", "len"), a_dos_iter, is_attack=True
        ),
        "dos_burst": Definition("dos_burst", ("i",), dos_burst, is_attack=True),
        "a_freeze": Definition("a_freeze", (), a_freeze, is_attack=True),
        "freeze_loop": Definition(
            "freeze_loop", ("y",), freeze_loop, is_attack=True
        ),
        "a_offset": Definition("a_offset", ("n",), a_offset, is_attack=True),
        "a_offset_k": Definition(
            "a_offset_k", ("n", "k"), a_offset_k, is_attack=True
        ),
        "b_warmup": Definition("b_warmup", ("n", "k"), b_warmup, is_attack=True),
    }


def programmatic_system() -> Term:
    return mk_restrict(
        mk_par(mk_call("Ctrl"), mk_call("IDS")), frozenset({"sync", "ins"})
    )
