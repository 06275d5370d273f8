"""Experiment configuration files.

A config is a flat ``[section] key = value`` file with five sections::

    [problem]   kind, n, p, sigma0, sigma1, sigma2, seed, plus kind parameters
    [graph]     topology, er_prob, weights, seed
    [schedule]  regime and the schedule constants
    [run]       T, record_every, seeds, seed, x0, x0_scale, workers, chunk,
                sweep_axis, sweep_values
    [output]    dir, formats

Values are read as JSON when they parse (numbers, lists, ``true``) and as bare
strings otherwise. Unknown sections and keys are errors that name the line.
Comments start with ``#`` or ``;``, also after a value when preceded by a space.
"""

from __future__ import annotations

import configparser
import json
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .graph import Graph, advisor_c2, advisor_d1, build_topology
from .oracle import Noise, Problem, make_problem
from .schedule import Schedule

SECTIONS = ("problem", "graph", "schedule", "run", "output")
_NOISE_KEYS = ("sigma0", "sigma1", "sigma2")
_PROBLEM_KEYS = {"kind", "n", "p", "seed", *_NOISE_KEYS} | {
    "A", "b", "mu", "condition_number", "b_scale", "scale_spread", "a", "samples", "reg",
}
_GRAPH_KEYS = {"topology", "er_prob", "weights", "seed"}
_SCHEDULE_KEYS = {f.name for f in fields(Schedule)}
_RUN_KEYS = {
    "T", "record_every", "seeds", "seed", "x0", "x0_scale", "workers", "chunk",
    "sweep_axis", "sweep_values",
}
_OUTPUT_KEYS = {"dir", "formats"}
_KEYS = {
    "problem": _PROBLEM_KEYS,
    "graph": _GRAPH_KEYS,
    "schedule": _SCHEDULE_KEYS,
    "run": _RUN_KEYS,
    "output": _OUTPUT_KEYS,
}
FORMATS = ("csv", "json", "svg")
SWEEP_AXES = ("n", "p", "regime")

# fractions applied when a schedule constant is given as "auto"
AUTO_KAPPA2 = 0.9
AUTO_GAMMA = 0.5
C2_CAP = 0.2


class ConfigError(ValueError):
    """Malformed or inconsistent configuration; carries a location when known."""


def _value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw.strip()


def _key_lines(text: str) -> dict[tuple[str, str], int]:
    out, section = {}, None
    for lineno, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if not s or s[0] in "#;":
            continue
        if s.startswith("[") and s.endswith("]"):
            section = s[1:-1].strip()
            continue
        for sep in ("=", ":"):
            if sep in s:
                out.setdefault((section, s.split(sep, 1)[0].strip()), lineno)
                break
    return out


@dataclass(frozen=True)
class RunSection:
    T: int
    record_every: int = 1
    seeds: tuple[int, ...] = (0,)
    x0: str = "gaussian"
    x0_scale: float = 1.0
    workers: int = 1
    chunk: int | None = None
    sweep_axis: str | None = None
    sweep_values: tuple = ()


@dataclass(frozen=True)
class OutputSection:
    dir: str | None = None
    formats: tuple[str, ...] = FORMATS


@dataclass(frozen=True)
class ExperimentConfig:
    problem: dict
    graph: dict
    schedule: dict
    run: RunSection
    output: OutputSection = field(default_factory=OutputSection)
    source: str = "<string>"

    @property
    def n(self) -> int:
        return int(self.problem["n"])

    @property
    def p(self) -> int:
        return int(self.problem["p"])

    def with_override(self, axis: str, value) -> "ExperimentConfig":
        """Copy with one sweep axis fixed to ``value``."""
        if axis in ("n", "p"):
            return replace(self, problem={**self.problem, axis: int(value)})
        if axis == "regime":
            return replace(self, schedule={**self.schedule, "regime": value})
        raise ConfigError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")

    def build_graph(self) -> Graph:
        g = self.graph
        params = {k: g[k] for k in ("er_prob", "weights") if k in g}
        rng = np.random.default_rng(g.get("seed", 0))
        return build_topology(g["topology"], self.n, params, rng)

    def build_problem(self) -> Problem:
        pr = self.problem
        noise = Noise(**{k: float(pr.get(k, 0.0)) for k in _NOISE_KEYS})
        extra = {k: v for k, v in pr.items() if k not in ("kind", "n", "p", "seed", *_NOISE_KEYS)}
        rng = np.random.default_rng(pr.get("seed", 0))
        return make_problem(pr["kind"], self.n, self.p, noise, rng, **extra)

    def build_schedule(self, g: Graph, allow_unvalidated: bool = False) -> Schedule:
        """Resolve the schedule against a graph.

        ``kappa2 = "auto"`` becomes 0.9 c2(kappa1) and ``gamma = "auto"``
        becomes 0.5 d1 on ``g``; the horizon ``T`` defaults to the run's.
        On a single agent the Laplacian vanishes and neither constant
        affects the iterates, so ``auto`` falls back to fixed placeholders.
        """
        d = dict(self.schedule)
        single = g.n == 1
        if d.get("kappa2") == "auto":
            if "kappa1" not in d:
                raise ConfigError(f"{self.source}: kappa2 = auto needs kappa1")
            c2 = C2_CAP if single else advisor_c2(g, float(d["kappa1"]))
            d["kappa2"] = AUTO_KAPPA2 * c2
        if d.get("gamma") == "auto":
            d["gamma"] = AUTO_GAMMA * (1.0 if single else advisor_d1(g))
        for k, v in d.items():
            if isinstance(v, str) and k != "regime":
                raise ConfigError(f"{self.source}: [schedule] {k} = {v!r} is not a number")
        d.setdefault("T", self.run.T)
        if allow_unvalidated:
            d["allow_unvalidated"] = True
        try:
            return Schedule.from_dict(d)
        except ValueError as exc:
            raise ConfigError(f"{self.source}: [schedule] {exc}") from None


def _seeds(raw, base) -> tuple[int, ...]:
    if isinstance(raw, bool):
        raise ConfigError("seeds must be a count or a list of integers")
    if isinstance(raw, int):
        if raw < 1:
            raise ConfigError(f"seeds = {raw}: need at least one seed")
        return tuple(base + j for j in range(raw))
    if isinstance(raw, list) and raw and all(isinstance(s, int) and not isinstance(s, bool) for s in raw):
        if len(set(raw)) != len(raw):
            raise ConfigError("seeds list has duplicates")
        return tuple(raw)
    raise ConfigError("seeds must be a positive count or a nonempty list of integers")


def parse_config(text: str, source: str = "<string>") -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None, strict=True, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str  # keep key case (T, A)
    try:
        cp.read_string(text, source=source)
    except configparser.ParsingError as exc:
        lineno = exc.errors[0][0]
        line = text.splitlines()[lineno - 1].strip()
        raise ConfigError(f"{source}:{lineno}: cannot parse {line!r}") from None
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    lines = _key_lines(text)

    def where(section, key=None):
        ln = lines.get((section, key)) if key else None
        return f"{source}:{ln}" if ln else source

    for sec in cp.sections():
        if sec not in SECTIONS:
            raise ConfigError(f"{source}: unknown section [{sec}]; expected {', '.join(SECTIONS)}")
        for key in cp[sec]:
            if key not in _KEYS[sec]:
                raise ConfigError(f"{where(sec, key)}: unknown key {key!r} in [{sec}]")

    def section(name):
        if not cp.has_section(name):
            return {}
        return {k: _value(v) for k, v in cp[name].items()}

    problem, graph, sched, run, out = (section(s) for s in SECTIONS)
    for sec, d, req in (
        ("problem", problem, ("kind", "n", "p")),
        ("graph", graph, ("topology",)),
        ("schedule", sched, ("regime",)),
        ("run", run, ("T",)),
    ):
        for key in req:
            if key not in d:
                raise ConfigError(f"{source}: [{sec}] missing required key {key!r}")

    for key in ("n", "p"):
        if not isinstance(problem[key], int) or problem[key] < 1:
            raise ConfigError(f"{where('problem', key)}: {key} must be a positive integer")
    T = run["T"]
    if not isinstance(T, int) or isinstance(T, bool) or T < 1:
        raise ConfigError(f"{where('run', 'T')}: T must be an integer >= 1")
    record_every = run.get("record_every", 1)
    if not isinstance(record_every, int) or record_every < 1:
        raise ConfigError(f"{where('run', 'record_every')}: record_every must be an integer >= 1")
    try:
        seeds = _seeds(run.get("seeds", 1), int(run.get("seed", 0)))
    except ConfigError as exc:
        raise ConfigError(f"{where('run', 'seeds')}: {exc}") from None
    x0 = run.get("x0", "gaussian")
    if x0 not in ("gaussian", "zeros"):
        raise ConfigError(f"{where('run', 'x0')}: x0 must be gaussian or zeros")
    axis = run.get("sweep_axis")
    values = run.get("sweep_values", [])
    if axis is not None:
        if axis not in SWEEP_AXES:
            raise ConfigError(f"{where('run', 'sweep_axis')}: sweep_axis must be one of {SWEEP_AXES}")
        if not isinstance(values, list) or not values:
            raise ConfigError(f"{where('run', 'sweep_values')}: sweep_values must be a nonempty list")
    formats = out.get("formats", list(FORMATS))
    if isinstance(formats, str):
        formats = [formats]
    bad = [f for f in formats if f not in FORMATS]
    if bad:
        raise ConfigError(f"{where('output', 'formats')}: unknown formats {bad}; expected {FORMATS}")
    for key, val in sched.items():
        if isinstance(val, float) and not math.isfinite(val):
            raise ConfigError(f"{where('schedule', key)}: {key} must be finite")

    rs = RunSection(
        T=T,
        record_every=record_every,
        seeds=seeds,
        x0=x0,
        x0_scale=float(run.get("x0_scale", 1.0)),
        workers=int(run.get("workers", 1)),
        chunk=run.get("chunk"),
        sweep_axis=axis,
        sweep_values=tuple(values),
    )
    return ExperimentConfig(
        problem=problem,
        graph=graph,
        schedule=sched,
        run=rs,
        output=OutputSection(out.get("dir"), tuple(formats)),
        source=source,
    )


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, str(path))
