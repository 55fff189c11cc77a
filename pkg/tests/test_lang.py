"""Parser, printer round-trips, static diagnostics and the catalog/DSL
equivalence."""

from __future__ import annotations

import pytest
from hypothesis import given, settings, strategies as st

from ccpa import casestudy
from ccpa.lang import (
    ModelSyntaxError,
    models_equal,
    parse_model,
    print_model,
)
from ccpa.process import check_time_guarded, term_to_str


class TestParseEngine:
    def test_environment_content(self, engine_model):
        env = engine_model.envs["Engine"]
        assert env.state == {"temp": 0.0, "stress": 0.0}
        assert env.uncertainty == {"temp": 0.4, "stress": 0.0}
        assert env.sensor_error == {"st": 0.1}
        assert env.actuators == {"cool": 1.0}  # off encodes positive

    def test_definitions_present(self, engine_model):
        assert {"Ctrl", "Cooling", "Check", "IDS"} <= set(engine_model.defs)
        assert set(engine_model.systems) == {"Sys", "SysSecured"}

    def test_restriction(self, engine_model):
        sys = engine_model.systems["Sys"]
        assert term_to_str(sys.process).endswith("\\ {ins, sync}")

    def test_empty_input(self):
        with pytest.raises(ModelSyntaxError) as err:
            parse_model("")
        assert "expected declaration" in str(err.value)


class TestRoundTrip:
    def test_bundled_corpus(self, engine_model):
        text1 = print_model(engine_model)
        m2 = parse_model(text1)
        assert models_equal(engine_model, m2)
        assert print_model(m2) == text1

    def test_synthetics(self, synthetic_model):
        text1 = print_model(synthetic_model)
        m2 = parse_model(text1)
        assert models_equal(synthetic_model, m2)

    @given(
        unc=st.floats(0, 2, allow_nan=False),
        thr=st.floats(-5, 15, allow_nan=False),
        k=st.integers(1, 6),
    )
    @settings(max_examples=30, deadline=None)
    def test_generated_models(self, unc, thr, k):
        text = f"""
        env E {{
          var x = 0 unc {unc!r};
          act a = off;
          sensor s err 0.5 <- x;
          evolve {{ x' = x + (if a == on then -1 else 1) + noise(x); }}
          inv x >= -100 && x <= 100;
          safe x < {thr!r};
        }}
        proc P = read s(v) . if v > {thr!r} then {{ write a(on) . tick^{k} . P }} else tick.P
        system S = E [secured {{}}] |> P
        """
        m1 = parse_model(text)
        m2 = parse_model(print_model(m1))
        assert models_equal(m1, m2)


class TestDiagnostics:
    def test_duplicate_definition(self):
        with pytest.raises(ModelSyntaxError, match="duplicate"):
            parse_model("proc A = 0\nproc A = 0\n")

    def test_unbound_name(self):
        with pytest.raises(ModelSyntaxError, match="unbound"):
            parse_model("proc A = [c!x . 0]\n")

    def test_boolean_in_arithmetic(self):
        with pytest.raises(ModelSyntaxError, match="arithmetic"):
            parse_model("proc A = [c!(1 + (2 > 3)) . 0]\n")

    def test_namespace_clash(self):
        text = """
        env E { var x = 0 unc 0; act x = off;
          sensor s err 0 <- x; evolve { x' = x; }
          inv x >= 0; safe x >= 0; }
        """
        with pytest.raises(ModelSyntaxError, match="namespace"):
            parse_model(text)

    def test_unguarded_recursion_flagged(self):
        with pytest.raises(ModelSyntaxError, match="time-guarded"):
            parse_model("proc H = H\n")

    def test_unguarded_annotation_allows(self):
        m = parse_model("unguarded attack H = [hread cool(x) . H]\n"
                        "env E { var t = 0 unc 0; act cool = off; sensor s err 0 <- t;\n"
                        "evolve { t' = t; } inv t >= 0; safe t >= 0; }\n")
        assert m.defs["H"].time_unguarded

    def test_attack_with_channel_rejected(self):
        with pytest.raises(ModelSyntaxError, match="channel prefix"):
            parse_model("attack A = [c!1 . 0]\n")

    def test_genuine_access_in_attack_rejected(self):
        text = """
        env E { var t = 0 unc 0; act a = off; sensor s err 0 <- t;
          evolve { t' = t; } inv t >= 0; safe t >= 0; }
        attack A = [read s(x) . 0]
        """
        with pytest.raises(ModelSyntaxError, match="genuine device"):
            parse_model(text)

    def test_diagnostics_render_position(self):
        try:
            parse_model("proc A = [c!5 .\n  ?? ]\n", path="m.ccpa")
        except ModelSyntaxError as err:
            assert "m.ccpa:2" in str(err)
        else:
            pytest.fail("expected a syntax error")

    def test_deterministic_diagnostics(self):
        msgs = set()
        for _ in range(3):
            try:
                parse_model("proc A = B\nproc C = [c!(1 + (2>3)).0]\n")
            except ModelSyntaxError as err:
                msgs.add(str(err))
        assert len(msgs) == 1


class TestTimeGuardedness:
    def test_engine_definitions_guarded(self, engine_model):
        table = check_time_guarded(engine_model.defs)
        for name in ("Ctrl", "Cooling", "Check", "IDS", "a_offset", "a_freeze"):
            assert table[name], name

    def test_self_call_unguarded(self):
        m = parse_model("unguarded proc H = H\n")
        assert not check_time_guarded(m.defs)["H"]

    def test_top_attacker_marked_unguarded(self, engine_model):
        from ccpa.attacks import infer_class, top_attacker

        cls = infer_class(
            casestudy.build("a_dos", m=3), engine_model.defs, 10, engine_model.palette()
        )
        bundle = top_attacker(cls)
        table = check_time_guarded(bundle.defs)
        assert any(not ok for ok in table.values())
        assert all(d.time_unguarded for d in bundle.defs.values())


class TestCatalogEquivalence:
    def test_programmatic_matches_parsed(self, engine_model):
        prog = casestudy.programmatic_defs()
        for name, d in prog.items():
            parsed = engine_model.defs[name]
            assert parsed.params == d.params, name
            assert parsed.body is d.body, f"{name}: ASTs differ"
            assert parsed.is_attack == d.is_attack
        assert engine_model.systems["Sys"].process is casestudy.programmatic_system()

    def test_build_checks_ranges(self):
        from ccpa.model import ModelError

        with pytest.raises(ModelError):
            casestudy.build("a_offset_k", n=3, k=99)
        with pytest.raises(ModelError):
            casestudy.build("nonesuch")

    def test_offset_zero_is_nil(self, engine_model):
        from ccpa.attacks import infer_class

        cls = infer_class(
            casestudy.build("a_offset", n=0), engine_model.defs, 10, engine_model.palette()
        )
        assert cls.is_empty()
