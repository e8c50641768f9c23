"""Command-line interface.

Process specs are plain ``key=value`` files (pairs separated by newlines or
commas, ``#`` starts a comment)::

    kind=kernel, dim=1, form=stable, alpha=1.0
    form=log_stable, alpha=2, beta=-1.5
    form=table, path=kernel.csv          # two columns r,j
    form=builtin:counterexample, n_max=6

Kernel forms accept ``truncate=r0`` to cut jumps longer than ``r0``.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import platform
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence

import click
import numpy as np
import scipy

from . import __version__
from .catalog import BUILTINS, ProcessSpec, builtin, describe_builtins
from .classifier import LARGE, SMALL, ClassifierConfig, classify, compute_profiles
from .kernels import (
    levy_khintchine_check,
    log_corrected_kernel,
    power_kernel,
    table_kernel,
    truncated,
)
from .parallel import new_seed
from .probe import (
    HarnackExperiment,
    counterexample_experiment,
    exit_histogram,
    harnack_ratio,
    symmetric_bins,
)
from .quadrature import DivergenceError
from .simulate import MODES, SimConfig, sample_path

__all__ = ["SpecError", "Table", "RunManifest", "parse_spec", "parse_spec_text", "emit_report",
           "dumps_json", "parse_report", "cli", "main"]

EXIT_OK, EXIT_SPEC, EXIT_INCONCLUSIVE, EXIT_NUMERICAL = 0, 2, 3, 4


class SpecError(ValueError):
    """Invalid process spec; carries a location when the text is at fault."""

    def __init__(self, message: str, line: Optional[int] = None, column: Optional[int] = None):
        self.line, self.column = line, column
        where = f"line {line}, column {column}: " if line is not None else ""
        super().__init__(where + message)


# ---------------------------------------------------------------------------
# spec parsing

_KERNEL_KEYS = {
    "stable": {"alpha", "scale"},
    "log_stable": {"alpha", "beta", "cutoff", "regime"},
    "table": {"path"},
}
_COMMON_KEYS = {"kind", "dim", "form", "truncate", "name"}


def _tokens(text: str):
    """Yield ``(key, value, line, column)`` for every ``key=value`` pair."""
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0]
        col = 0
        for piece in line.split(","):
            start = col + 1
            col += len(piece) + 1
            stripped = piece.strip()
            if not stripped:
                continue
            offset = start + (len(piece) - len(piece.lstrip()))
            if "=" not in stripped:
                raise SpecError(f"expected key=value, got {stripped!r}", ln, offset)
            key, value = (s.strip() for s in stripped.split("=", 1))
            if not key:
                raise SpecError("empty key", ln, offset)
            yield key, value, ln, offset


def _number(value: str, key: str, loc) -> float | int:
    try:
        return int(value)
    except ValueError:
        pass
    try:
        return float(value)
    except ValueError:
        raise SpecError(f"{key}: expected a number, got {value!r}", *loc) from None


def parse_spec_text(text: str, base_dir: Path = Path(".")) -> tuple[ProcessSpec, str]:
    """Parse spec text; returns the spec and a digest of its canonical form."""
    entries: dict[str, tuple[str, tuple[int, int]]] = {}
    for key, value, ln, col in _tokens(text):
        if key in entries:
            raise SpecError(f"duplicate key {key!r}", ln, col)
        entries[key] = (value, (ln, col))
    if "form" not in entries:
        raise SpecError("missing required key 'form'")
    form, form_loc = entries["form"]
    kind = entries.get("kind", ("kernel", None))[0]
    if kind not in ("kernel", "process", "subordinator"):
        raise SpecError(f"kind must be kernel, process or subordinator, got {kind!r}",
                        *entries["kind"][1])
    dim = 1
    if "dim" in entries:
        dim = _number(entries["dim"][0], "dim", entries["dim"][1])
        if not isinstance(dim, int) or dim < 1:
            raise SpecError("dim must be a positive integer", *entries["dim"][1])

    extra_digest = b""
    if form.startswith("builtin:"):
        name = form.split(":", 1)[1]
        if name not in BUILTINS:
            raise SpecError(f"unknown builtin {name!r}; choose from {sorted(BUILTINS)}", *form_loc)
        allowed = set(BUILTINS[name].schema)
        params = {}
        for key, (value, loc) in entries.items():
            if key in _COMMON_KEYS:
                continue
            if key not in allowed:
                raise SpecError(f"{name}: unknown parameter {key!r}", *loc)
            params[key] = _number(value, key, loc)
        if "truncate" in entries:
            raise SpecError("truncate applies to kernel forms only", *entries["truncate"][1])
        try:
            spec = builtin(name, params, dim)
        except ValueError as exc:
            raise SpecError(str(exc), *form_loc) from None
        target = spec.subordinator if spec.subordinator is not None else spec.kernel
    elif form in _KERNEL_KEYS:
        allowed = _KERNEL_KEYS[form]
        params = {}
        for key, (value, loc) in entries.items():
            if key in _COMMON_KEYS:
                continue
            if key not in allowed:
                raise SpecError(f"form={form}: unknown key {key!r}", *loc)
            params[key] = value if key in ("regime", "path") else _number(value, key, loc)
        try:
            if form == "stable":
                alpha = float(params.get("alpha", 1.0))
                if not 0 < alpha < 2:
                    raise SpecError(f"alpha={alpha}: α ∉ (0,2), the Lévy-Khintchine condition fails",
                                    *entries.get("alpha", (None, form_loc))[1])
                kernel = power_kernel(dim, alpha, float(params.get("scale", 1.0)))
            elif form == "log_stable":
                if "alpha" not in params or "beta" not in params:
                    raise SpecError("log_stable needs alpha and beta", *form_loc)
                kernel = log_corrected_kernel(dim, float(params["alpha"]), float(params["beta"]),
                                              cutoff=params.get("cutoff"),
                                              regime=params.get("regime", "small"))
            else:
                if "path" not in params:
                    raise SpecError("table needs path=<csv>", *form_loc)
                path = Path(params["path"])
                path = path if path.is_absolute() else base_dir / path
                try:
                    raw = path.read_bytes()
                except OSError as exc:
                    raise SpecError(f"cannot read table: {exc}", *entries["path"][1]) from None
                extra_digest = raw
                radii, values = _read_table(raw.decode("utf-8"))
                kernel = table_kernel(dim, radii, values)
        except SpecError:
            raise
        except ValueError as exc:
            raise SpecError(str(exc), *form_loc) from None
        if "truncate" in entries:
            r0 = _number(entries["truncate"][0], "truncate", entries["truncate"][1])
            try:
                kernel = truncated(kernel, float(r0))
            except ValueError as exc:
                raise SpecError(str(exc), *entries["truncate"][1]) from None
        spec = ProcessSpec(name=entries.get("name", (f"kernel:{form}", None))[0], dim=dim,
                           params={k: v for k, v in params.items() if k != "path"},
                           kernel_factory=lambda: kernel)
        target = kernel
    else:
        raise SpecError(f"unknown form {form!r}; use stable, log_stable, table or builtin:<name>",
                        *form_loc)

    lk = levy_khintchine_check(target)
    if not lk.valid:
        raise SpecError(f"Lévy-Khintchine condition fails: {lk.reason}")
    canonical = "\n".join(f"{k}={entries[k][0]}" for k in sorted(entries)).encode()
    digest = hashlib.sha256(canonical + b"\0" + extra_digest).hexdigest()
    return spec, digest


def parse_spec(path: str | Path) -> ProcessSpec:
    """Read and validate a spec file."""
    return _parse_spec_file(path)[0]


def _parse_spec_file(path: str | Path) -> tuple[ProcessSpec, str]:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise SpecError(f"cannot read spec: {exc}") from None
    return parse_spec_text(text, p.parent)


def _read_table(text: str) -> tuple[list[float], list[float]]:
    radii, values = [], []
    for i, row in enumerate(csv.reader(io.StringIO(text)), start=1):
        if not row or row[0].strip().startswith("#"):
            continue
        try:
            r, j = float(row[0]), float(row[1])
        except (ValueError, IndexError):
            if i == 1:
                continue  # header
            raise SpecError(f"table row {i}: expected two numbers") from None
        radii.append(r)
        values.append(j)
    return radii, values


# ---------------------------------------------------------------------------
# report emission


@dataclass(frozen=True)
class Table:
    header: tuple[str, ...]
    rows: tuple[tuple, ...]


def _fmt_float(x: float) -> str:
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    return format(x, ".17g")


def _plain(obj: Any) -> Any:
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    return obj


def dumps_json(obj: Any, indent: int = 2, _level: int = 0) -> str:
    """JSON text with sorted keys and 17-significant-digit floats."""
    obj = _plain(obj)
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if obj is None:
        return "null"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        return _fmt_float(obj)
    if isinstance(obj, str):
        return json.dumps(obj, ensure_ascii=False)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k), ensure_ascii=False)}: {dumps_json(obj[k], indent, _level + 1)}"
                 for k in sorted(obj, key=str)]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        items = [pad + dumps_json(v, indent, _level + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _csv_text(table: Table) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(table.header)
    for row in table.rows:
        w.writerow([_fmt_float(v) if isinstance(v, float) else _plain(v) for v in row])
    return buf.getvalue()


def emit_report(result: Any, fmt: str, path: Optional[str | Path] = None) -> str:
    """Serialize ``result`` (a dict for json, a :class:`Table` for csv).

    Writes to ``path`` when given; always returns the text.
    """
    if fmt == "json":
        text = dumps_json(result) + "\n"
    elif fmt == "csv":
        if not isinstance(result, Table):
            raise TypeError("csv reports need a Table")
        text = _csv_text(result)
    else:
        raise ValueError("format must be 'json' or 'csv'")
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def _cell(v: str):
    for conv in (int, float):
        try:
            return conv(v)
        except ValueError:
            continue
    return v


def parse_report(text: str, fmt: str) -> Any:
    """Inverse of :func:`emit_report`."""
    if fmt == "json":
        return json.loads(text)
    rows = list(csv.reader(io.StringIO(text)))
    return Table(tuple(rows[0]), tuple(tuple(_cell(v) for v in r) for r in rows[1:]))


@dataclass
class RunManifest:
    command: list[str]
    spec_digest: Optional[str]
    seed: int
    versions: dict = field(default_factory=lambda: {
        "ehi": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
        "python": platform.python_version(),
    })
    outputs: list[str] = field(default_factory=list)
    wall_time: Optional[float] = None

    def as_dict(self, with_time: bool = False) -> dict:
        d = {"command": self.command, "spec_digest": self.spec_digest, "seed": self.seed,
             "versions": self.versions, "outputs": self.outputs}
        if with_time:
            d["wall_time"] = self.wall_time
        return d


# ---------------------------------------------------------------------------
# commands


def _command_line() -> list[str]:
    """Subcommand path and its resolved parameters, independent of how it was invoked."""
    ctx = click.get_current_context(silent=True)
    if ctx is None:
        return ["ehi"]
    args = [f"--{k}={_plain(v)}" for k, v in sorted(ctx.params.items()) if v is not None]
    return ["ehi", *ctx.command_path.split()[1:], *args]


class _Run:
    """Per-invocation state shared by the output helpers."""

    def __init__(self, seed: Optional[int], out: Optional[str], spec_digest: Optional[str] = None):
        if seed is None:
            seed = new_seed()
            click.echo(f"seed: {seed}", err=True)
        self.seed = int(seed)
        self.out = out
        self.t0 = time.perf_counter()
        self.manifest = RunManifest(command=_command_line(), spec_digest=spec_digest,
                                    seed=self.seed, outputs=[out] if out else [])

    def emit(self, result: Any, fmt: str) -> None:
        if fmt == "json" and isinstance(result, dict):
            result = {**result, "manifest": self.manifest.as_dict()}
        text = emit_report(result, fmt, self.out)
        if self.out is None:
            click.echo(text, nl=False)
        else:
            self.manifest.wall_time = time.perf_counter() - self.t0
            side = Path(str(self.out) + ".manifest.json")
            side.write_text(dumps_json(self.manifest.as_dict(with_time=True)) + "\n", encoding="utf-8")

    def text(self, lines: Sequence[str]) -> None:
        body = "\n".join(lines) + "\n"
        if self.out is None:
            click.echo(body, nl=False)
        else:
            Path(self.out).write_text(body, encoding="utf-8")


def _load(spec_path: str) -> tuple[ProcessSpec, str]:
    return _parse_spec_file(spec_path)


def _guard(fn):
    """Map failures onto the documented exit codes."""
    import functools

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except SpecError as exc:
            click.echo(f"spec invalid: {exc}", err=True)
            sys.exit(EXIT_SPEC)
        except (DivergenceError, ArithmeticError, FloatingPointError) as exc:
            click.echo(f"numerical failure: {exc}", err=True)
            sys.exit(EXIT_NUMERICAL)

    return wrapper


def _common(fn):
    fn = click.option("--out", type=click.Path(dir_okay=False), default=None,
                      help="Write the report here instead of stdout.")(fn)
    fn = click.option("--json", "as_json", is_flag=True, help="Emit JSON.")(fn)
    fn = click.option("--seed", type=int, default=None,
                      help="RNG seed; generated and printed when omitted.")(fn)
    return fn


@click.group()
@click.version_option(__version__, prog_name="ehi")
def cli():
    """Scale quantities, Harnack classifiers and Monte Carlo probes for isotropic jump processes."""


_DIRECTIONS = {"small": SMALL, "large": LARGE, SMALL: SMALL, LARGE: LARGE}


def _classifier_options(fn):
    fn = click.option("--direction", type=click.Choice(sorted(_DIRECTIONS)), default="small",
                      show_default=True)(fn)
    fn = click.option("--scales", "n_scales", type=int, default=30, show_default=True)(fn)
    fn = click.option("--r-start", type=float, default=1.0, show_default=True)(fn)
    fn = click.option("--base", "grid_base", type=float, default=2.0, show_default=True)(fn)
    return fn


def _verdict_dict(v) -> dict:
    d = {
        "verdict": v.conclusion,
        "fired": [[r, c] for r, c in v.fired],
        "profiles": [{"r": p.r, "jd2": p.jd2, "m2": p.m2, "tail2": p.tail2} for p in v.profiles],
        "config": v.config,
        "notes": list(v.notes),
        "ratio": None,
        "negative": None,
    }
    if v.ratio is not None:
        f = v.ratio.fit
        d["ratio"] = {"fired": list(v.ratio.fired), "power": f.power, "power_se": f.power_se,
                      "polylog": f.polylog, "polylog_se": f.polylog_se, "n_points": f.n_points}
    if v.negative is not None:
        n = v.negative
        d["negative"] = {"fires": n.fires, "witness_scales": list(n.witness_scales),
                         "gap_series": list(n.gap_series), "rise": n.rise}
    return d


@cli.command("classify")
@click.option("--spec", "spec_path", required=True, type=click.Path(exists=True, dir_okay=False),
              help="Process spec file.")
@_classifier_options
@_common
@_guard
def classify_cmd(spec_path, direction, n_scales, r_start, grid_base, seed, as_json, out):
    """Run the positive and negative classifiers on a spec's kernel."""
    spec, digest = _load(spec_path)
    run = _Run(seed, out, digest)
    direction = _DIRECTIONS[direction]
    try:
        cfg = ClassifierConfig(direction=direction, n_scales=n_scales, r_start=r_start, grid_base=grid_base)
    except ValueError as exc:
        raise SpecError(str(exc)) from None
    v = classify(spec.kernel, cfg)
    if as_json:
        run.emit(_verdict_dict(v), "json")
    else:
        lines = [f"verdict: {v.conclusion}", f"direction: {direction}"]
        lines += [f"note: {n}" for n in v.notes]
        if v.ratio is not None and v.ratio.fired:
            lines.append(f"ratio conditions: {', '.join(v.ratio.fired)}")
        if v.negative is not None and v.negative.fires:
            lines.append(f"negative evidence at scales {list(v.negative.witness_scales)}")
        run.text(lines)
    if v.conclusion == "inconclusive":
        sys.exit(EXIT_INCONCLUSIVE)


@cli.command("profile")
@click.option("--spec", "spec_path", required=True, type=click.Path(exists=True, dir_okay=False),
              help="Process spec file.")
@_classifier_options
@_common
@_guard
def profile_cmd(spec_path, direction, n_scales, r_start, grid_base, seed, as_json, out):
    """Tabulate r^(d+2) j(r), m2(r) and r^2 lambda(r) on a geometric grid."""
    spec, digest = _load(spec_path)
    run = _Run(seed, out, digest)
    direction = _DIRECTIONS[direction]
    try:
        cfg = ClassifierConfig(direction=direction, n_scales=n_scales, r_start=r_start, grid_base=grid_base)
    except ValueError as exc:
        raise SpecError(str(exc)) from None
    profiles = compute_profiles(spec.kernel, cfg)
    if as_json:
        run.emit({"profiles": [{"r": p.r, "jd2": p.jd2, "m2": p.m2, "tail2": p.tail2} for p in profiles],
                  "config": cfg.as_dict()}, "json")
    else:
        run.emit(Table(("r", "jd2", "m2", "tail2"), tuple(p.as_row() for p in profiles)), "csv")


@cli.command("simulate")
@click.option("--spec", "spec_path", required=True, type=click.Path(exists=True, dir_okay=False),
              help="Process spec file.")
@click.option("--mode", type=click.Choice(MODES), default=None,
              help="Default: direct_kernel for explicit kernels, sbm otherwise.")
@click.option("--paths", type=int, default=1, show_default=True)
@click.option("--horizon", type=float, default=1.0, show_default=True)
@click.option("--cutoff", type=float, default=0.01, show_default=True)
@click.option("--step", type=float, default=1e-3, show_default=True)
@click.option("--no-surrogate", is_flag=True, help="Drop the small-jump part instead of stepping it.")
@_common
@_guard
def simulate_cmd(spec_path, mode, paths, horizon, cutoff, step, no_surrogate, seed, as_json, out):
    """Sample trajectories; CSV columns path,t,dx1..dxd,tag."""
    spec, digest = _load(spec_path)
    run = _Run(seed, out, digest)
    cfg = SimConfig(cutoff=cutoff, step=step, horizon=horizon, seed=run.seed,
                    gaussian_surrogate=not no_surrogate)
    try:
        trajs = [sample_path(spec, cfg, mode, replica=i) for i in range(paths)]
    except ValueError as exc:
        raise SpecError(str(exc)) from None
    d = trajs[0].dim if trajs else spec.dim
    if as_json:
        run.emit({"trajectories": [
            {"path": i, "times": t.times, "displacements": t.displacements, "tags": list(t.tags),
             "drift": t.drift, "surrogate_m2": t.surrogate_m2}
            for i, t in enumerate(trajs)], "horizon": horizon, "seed": run.seed}, "json")
    else:
        rows = []
        for i, t in enumerate(trajs):
            for k in range(t.times.size):
                rows.append((i, float(t.times[k]), *map(float, t.displacements[k]), t.tags[k]))
        header = ("path", "t", *(f"dx{c + 1}" for c in range(d)), "tag")
        run.emit(Table(header, tuple(rows)), "csv")


@cli.group("probe")
def probe_group():
    """Monte Carlo probes."""


def _estimate(e) -> dict:
    return {"mean": e.mean, "stderr": e.stderr, "n": e.n, "censored": e.censored}


@probe_group.command("harnack")
@click.option("--spec", "spec_path", required=True, type=click.Path(exists=True, dir_okay=False),
              help="Process spec file.")
@click.option("--R1", "r1", type=float, default=1.0, show_default=True)
@click.option("--R2", "r2", type=float, default=5.0, show_default=True)
@click.option("--R3", "r3", type=float, default=30.0, show_default=True)
@click.option("--replicas", type=int, default=10000, show_default=True)
@click.option("--cutoff", type=float, default=0.05, show_default=True)
@click.option("--step", type=float, default=0.01, show_default=True)
@click.option("--horizon", type=float, default=1e4, show_default=True)
@click.option("--timing", is_flag=True, help="Record wall time in the report (breaks byte-identity).")
@_common
@_guard
def harnack_cmd(spec_path, r1, r2, r3, replicas, cutoff, step, horizon, timing, seed, as_json, out):
    """Estimate h(0)/h(y) for h(x) = P_x(exit of B(0,R1+R2) lands in B(0,R3))."""
    spec, digest = _load(spec_path)
    run = _Run(seed, out, digest)
    try:
        exp = HarnackExperiment(R1=r1, R2=r2, R3=r3, replicas=replicas, spec=spec,
                                cfg=SimConfig(cutoff=cutoff, step=step, horizon=horizon, seed=run.seed))
    except ValueError as exc:
        raise SpecError(str(exc)) from None
    t0 = time.perf_counter()
    res = harnack_ratio(exp)
    report = {
        "params": {"R1": r1, "R2": r2, "R3": r3, "y": exp.y, "replicas": replicas,
                   "cutoff": cutoff, "step": step, "horizon": horizon, "spec": spec.name},
        "estimates": {"h0": _estimate(res.h0), "hy": _estimate(res.hy),
                      "ratio": {"mean": res.ratio, "stderr": res.ratio_stderr, "n": replicas,
                                "ci": list(res.ratio_ci)}},
        "seed": run.seed,
        "runtime": (time.perf_counter() - t0) if timing else None,
    }
    if as_json:
        run.emit(report, "json")
    else:
        run.text([f"h(0) = {res.h0.mean:.6g} +- {res.h0.stderr:.2g}",
                  f"h(y) = {res.hy.mean:.6g} +- {res.hy.stderr:.2g}",
                  f"ratio = {res.ratio:.6g}, 95% CI [{res.ratio_ci[0]:.6g}, {res.ratio_ci[1]:.6g}]"])


@probe_group.command("histogram")
@click.option("--spec", "spec_path", required=True, type=click.Path(exists=True, dir_okay=False),
              help="Process spec file.")
@click.option("--radius", type=float, default=1.0, show_default=True)
@click.option("--x", "x0", type=float, default=0.5, show_default=True, help="Start on the first axis.")
@click.option("--outer", type=float, default=3.0, show_default=True)
@click.option("--bins", "n_bins", type=int, default=20, show_default=True)
@click.option("--replicas", type=int, default=10000, show_default=True)
@click.option("--cutoff", type=float, default=0.01, show_default=True)
@click.option("--step", type=float, default=1e-3, show_default=True)
@click.option("--horizon", type=float, default=1e4, show_default=True)
@_common
@_guard
def histogram_cmd(spec_path, radius, x0, outer, n_bins, replicas, cutoff, step, horizon, seed, as_json, out):
    """Binned exit-position law from B(0, radius); CSV bin_lo,bin_hi,count,phat,stderr."""
    spec, digest = _load(spec_path)
    run = _Run(seed, out, digest)
    start = np.zeros(spec.dim)
    start[0] = x0
    try:
        bins = symmetric_bins(radius, outer, n_bins)
        h = exit_histogram(spec, SimConfig(cutoff=cutoff, step=step, horizon=horizon, seed=run.seed),
                           radius, start, bins, replicas)
    except ValueError as exc:
        raise SpecError(str(exc)) from None
    if as_json:
        run.emit({"bins": [list(b) for b in h.bins], "counts": h.counts, "phat": h.phat,
                  "stderr": h.stderr, "n": h.n, "far": h.far, "censored": h.censored,
                  "seed": run.seed}, "json")
    else:
        run.emit(Table(("bin_lo", "bin_hi", "count", "phat", "stderr"), tuple(h.rows())), "csv")


@probe_group.command("counterexample")
@click.option("--n", "level", type=int, required=True, help="Level index, 2..6.")
@click.option("--replicas", type=int, default=10000, show_default=True)
@click.option("--dim", type=int, default=1, show_default=True)
@click.option("--timing", is_flag=True, help="Record wall time in the report (breaks byte-identity).")
@_common
@_guard
def counterexample_cmd(level, replicas, dim, timing, seed, as_json, out):
    """Sandwich probabilities and Harnack ratio for the scale-mixture counterexample."""
    run = _Run(seed, out)
    try:
        rep = counterexample_experiment(level, replicas, run.seed, dim)
    except ValueError as exc:
        raise SpecError(str(exc)) from None
    d = rep.as_dict()
    if not timing:
        d["runtime"] = None
    if as_json:
        run.emit(d, "json")
    else:
        sw, hr = d["estimates"]["sandwich"], d["estimates"]["harnack"]
        run.text([
            f"level n = {level}, explicit types 1..{d['params']['n_keep']}",
            f"lambda{{s_n}} / H_n = {sw['clock_rate_over_H']:.6g}",
            f"p_exit = {sw['p_exit']['mean']:.6g} +- {sw['p_exit']['stderr']:.2g}",
            f"p_scatter_small = {sw['p_scatter_small']:.6g} (ratio {sw['scatter_to_exit']:.4g})",
            f"h(0)/h(y) = {hr['ratio']:.6g}, 95% CI [{hr['ratio_ci'][0]:.6g}, {hr['ratio_ci'][1]:.6g}]",
        ])


@cli.group("catalog")
def catalog_group():
    """Built-in process families."""


@catalog_group.command("list")
@_common
def catalog_list(seed, as_json, out):
    """List built-in families and their parameters."""
    run = _Run(seed, out)
    if as_json:
        run.emit({"builtins": {name: {"params": e.schema, "summary": e.summary}
                               for name, e in BUILTINS.items()}}, "json")
    else:
        run.text(describe_builtins())


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        cli.main(args=list(argv) if argv is not None else None, prog_name="ehi", standalone_mode=False)
    except click.exceptions.UsageError as exc:
        exc.show()
        return EXIT_SPEC
    except click.exceptions.Abort:
        return 1
    except SystemExit as exc:
        return int(exc.code or 0)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
