import json
import math
import re

import pytest
from click.testing import CliRunner

from ehi.cli import (
    EXIT_INCONCLUSIVE,
    EXIT_NUMERICAL,
    EXIT_OK,
    EXIT_SPEC,
    SpecError,
    Table,
    cli,
    dumps_json,
    emit_report,
    main,
    parse_report,
    parse_spec,
    parse_spec_text,
)


@pytest.fixture
def specs(tmp_path):
    files = {
        "stable": "kind=kernel, dim=1, form=stable, alpha=1.0\n",
        "bad_alpha": "kind=kernel, dim=1, form=stable, alpha=2.5\n",
        "counterexample": "form=builtin:counterexample, n_max=6\n",
        "gamma": "form=builtin:geometric-stable, beta=2\n",
        # j drops by six decades between r = 0.01 and 0.02: doubling fails
        "cliff": "form=table, path=cliff.csv\n",
    }
    (tmp_path / "cliff.csv").write_text("r,j\n0.001,1e6\n0.01,1e4\n0.02,1e-2\n1,1e-4\n")
    out = {}
    for name, text in files.items():
        p = tmp_path / f"{name}.spec"
        p.write_text(text)
        out[name] = str(p)
    return out


def run(*args):
    return CliRunner().invoke(cli, list(args))


# -- spec parsing -------------------------------------------------------------

def test_parse_stable(specs):
    spec = parse_spec(specs["stable"])
    assert spec.dim == 1
    assert spec.params["alpha"] == 1.0
    assert float(spec.kernel.density(2.0)) == pytest.approx(0.25, rel=1e-14)


def test_parse_rejects_alpha_outside_range():
    with pytest.raises(SpecError, match="α ∉ \\(0,2\\)") as info:
        parse_spec_text("kind=kernel, dim=1, form=stable, alpha=2.5")
    assert (info.value.line, info.value.column) == (1, 34)


def test_parse_builtin_dispatch():
    spec, digest = parse_spec_text("form=builtin:counterexample, n_max=6")
    assert spec.name == "counterexample"
    assert spec.params == {"n_max": 6}
    assert len(digest) == 64


@pytest.mark.parametrize("text,needle,loc", [
    ("form=stable\nalpha=1, colour=red", "unknown key", (2, 10)),
    ("form=stable, alpha=1, alpha=2", "duplicate", (1, 23)),
    ("alpha=1", "missing required key", (None, None)),
    ("form=stable, alpha=one", "expected a number", (1, 14)),
    ("form=stable, alpha", "expected key=value", (1, 14)),
    ("form=wavelet", "unknown form", (1, 1)),
    ("form=builtin:nope", "unknown builtin", (1, 1)),
    ("form=stable, dim=0", "dim must be", (1, 14)),
    ("form=builtin:counterexample, n_max=6, truncate=1", "kernel forms only", (1, 39)),
])
def test_parse_errors_carry_location(text, needle, loc):
    with pytest.raises(SpecError, match=needle) as info:
        parse_spec_text(text)
    assert (info.value.line, info.value.column) == loc


def test_parse_names_divergent_end(tmp_path):
    # j = r^-3 in d = 1 has a divergent second moment at the origin
    (tmp_path / "steep.csv").write_text("r,j\n0.001,1e9\n0.01,1e6\n0.1,1e3\n1,1\n")
    with pytest.raises(SpecError, match="divergent at 0"):
        parse_spec_text("form=table, path=steep.csv", tmp_path)
    with pytest.raises(SpecError, match="alpha = 2 with beta < -1"):
        parse_spec_text("form=log_stable, alpha=2, beta=0.5")


def test_parse_comments_and_truncation():
    spec, _ = parse_spec_text("# a comment\nform=stable, alpha=1  # trailing\ntruncate=1")
    assert float(spec.kernel.density(2.0)) == 0.0
    assert float(spec.kernel.density(0.5)) > 0


def test_digest_ignores_layout():
    _, a = parse_spec_text("form=stable, alpha=1")
    _, b = parse_spec_text("alpha=1\n  form=stable  # same spec")
    _, c = parse_spec_text("form=stable, alpha=1.5")
    assert a == b != c


# -- reports ------------------------------------------------------------------

def test_json_round_trip_and_float_digits():
    x = {"b": [0.1 + 0.2, 1e-300, -2.5], "a": {"n": 3, "s": "α", "none": None, "t": True}}
    text = emit_report(x, "json")
    assert parse_report(text, "json") == x
    assert "0.30000000000000004" in text
    assert text.index('"a"') < text.index('"b"')


def test_csv_round_trip(tmp_path):
    t = Table(("r", "jd2", "m2", "tail2"), ((1.0, 1.0, 2.0, 2.0), (0.5, 1 / 3, 2 / 3, 0.1 + 0.2)))
    path = tmp_path / "t.csv"
    text = emit_report(t, "csv", path)
    assert path.read_text() == text
    assert text.splitlines()[0] == "r,jd2,m2,tail2"
    assert parse_report(text, "csv") == t


def test_report_type_errors():
    with pytest.raises(TypeError):
        emit_report({"a": 1}, "csv")
    with pytest.raises(ValueError):
        emit_report({"a": 1}, "xml")
    with pytest.raises(TypeError):
        dumps_json({"a": object()})


# -- commands -----------------------------------------------------------------

def test_classify_json_keys(specs):
    res = run("classify", "--spec", specs["stable"], "--scales", "8", "--seed", "1", "--json")
    assert res.exit_code == EXIT_OK
    d = json.loads(res.stdout)
    assert {"verdict", "fired", "profiles", "config", "manifest"} <= set(d)
    assert d["verdict"] == "holds"
    assert d["manifest"]["seed"] == 1
    assert d["manifest"]["command"][:2] == ["ehi", "classify"]


def test_classify_exit_codes(specs):
    assert run("classify", "--spec", specs["stable"], "--seed", "1").exit_code == EXIT_OK
    res = run("classify", "--spec", specs["cliff"], "--seed", "1")
    assert res.exit_code == EXIT_INCONCLUSIVE
    assert "doubling fails" in res.stdout
    res = run("classify", "--spec", specs["bad_alpha"], "--seed", "1")
    assert res.exit_code == EXIT_SPEC
    assert "α ∉ (0,2)" in res.stderr
    # far below the radii the subordinated kernel was tabulated for
    res = run("profile", "--spec", specs["gamma"], "--r-start", "1e-200", "--scales", "3", "--seed", "1")
    assert res.exit_code == EXIT_NUMERICAL
    assert "numerical failure" in res.stderr


def test_main_returns_exit_codes(specs):
    assert main(["classify", "--spec", specs["bad_alpha"], "--seed", "1"]) == EXIT_SPEC
    assert main(["classify", "--no-such-flag"]) == EXIT_SPEC
    assert main(["catalog", "list", "--seed", "1"]) == EXIT_OK


def test_profile_csv(specs):
    res = run("profile", "--spec", specs["stable"], "--scales", "4", "--seed", "1")
    assert res.exit_code == 0
    table = parse_report(res.stdout, "csv")
    assert table.header == ("r", "jd2", "m2", "tail2")
    assert table.rows[0] == pytest.approx((1.0, 1.0, 2.0, 2.0), rel=1e-8)
    assert len(table.rows) == 4


def test_outputs_are_byte_identical(specs, tmp_path):
    cases = [
        ("classify", "--spec", specs["stable"], "--scales", "6", "--json"),
        ("profile", "--spec", specs["stable"], "--scales", "6"),
        ("simulate", "--spec", specs["stable"], "--paths", "3", "--cutoff", "0.1", "--step", "0.01"),
        ("probe", "harnack", "--spec", specs["stable"], "--replicas", "300", "--json"),
        ("probe", "histogram", "--spec", specs["stable"], "--replicas", "300", "--cutoff", "0.05",
         "--step", "0.01"),
        ("probe", "counterexample", "--n", "2", "--replicas", "200", "--json"),
    ]
    for args in cases:
        outs = []
        path = tmp_path / "out"
        for _ in range(2):
            res = run(*args, "--seed", "7", "--out", str(path))
            assert res.exit_code == 0, res.output
            outs.append(path.read_bytes())
            side = json.loads((tmp_path / "out.manifest.json").read_text())
            assert side["seed"] == 7 and side["wall_time"] >= 0
        assert outs[0] == outs[1], args


def test_different_seeds_differ(specs):
    a = run("simulate", "--spec", specs["stable"], "--paths", "2", "--cutoff", "0.1", "--seed", "1")
    b = run("simulate", "--spec", specs["stable"], "--paths", "2", "--cutoff", "0.1", "--seed", "2")
    assert a.stdout != b.stdout
    assert a.stdout.splitlines()[0] == "path,t,dx1,tag"


def test_missing_seed_is_generated_printed_and_embedded(specs):
    res = run("probe", "harnack", "--spec", specs["stable"], "--replicas", "100", "--json")
    assert res.exit_code == 0
    m = re.search(r"seed: (\d+)", res.stderr)
    assert m
    d = json.loads(res.stdout)
    assert d["seed"] == int(m.group(1)) == d["manifest"]["seed"]


@pytest.mark.parametrize("args", [
    ("classify",), ("profile",), ("simulate",), ("probe", "harnack"), ("probe", "histogram"),
    ("probe", "counterexample"), ("catalog", "list"),
])
def test_every_subcommand_has_common_flags(args):
    res = run(*args, "--help")
    assert res.exit_code == 0
    for flag in ("--seed", "--json", "--out"):
        assert flag in res.stdout


def test_harnack_report_schema(specs):
    res = run("probe", "harnack", "--spec", specs["stable"], "--replicas", "200", "--seed", "3", "--json")
    d = json.loads(res.stdout)
    assert set(d) == {"params", "estimates", "seed", "runtime", "manifest"}
    assert d["runtime"] is None
    for key in ("h0", "hy", "ratio"):
        assert {"mean", "stderr", "n"} <= set(d["estimates"][key])


def test_histogram_csv_header(specs):
    res = run("probe", "histogram", "--spec", specs["stable"], "--replicas", "200", "--bins", "4",
              "--cutoff", "0.05", "--step", "0.01", "--seed", "3")
    table = parse_report(res.stdout, "csv")
    assert table.header == ("bin_lo", "bin_hi", "count", "phat", "stderr")
    assert len(table.rows) == 4


def test_counterexample_level_out_of_range():
    res = run("probe", "counterexample", "--n", "8", "--seed", "1")
    assert res.exit_code == EXIT_SPEC


def test_catalog_list_json():
    res = run("catalog", "list", "--seed", "1", "--json")
    d = json.loads(res.stdout)
    assert {"stable", "counterexample", "geometric-stable"} <= set(d["builtins"])
