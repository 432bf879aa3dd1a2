"""Readers and writers: Newick trees, CSV tables, flat config files and sample logs.

All floats are written with ``repr`` so that reading a file back gives the
same doubles. Text is UTF-8 with ``\\n`` newlines.
"""

import configparser
import csv
import math
import os
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .ctmc import ObservationSequence, PairIndex, StateSpace
from .errors import InputError, ParseError
from .gp import CovariateSet
from .likelihood import TipData
from .tree import Phylogeny

__all__ = [
    "parse_newick", "write_newick", "read_newick",
    "read_tip_states", "write_tip_states", "read_covariates", "write_pair_table",
    "read_pair_table", "read_observations", "write_observations",
    "SampleWriter", "write_samples", "read_samples", "sample_columns",
    "write_gradcheck", "RunConfig", "load_config", "state_space",
]

_DELIMS = set("():,;[]'")


def fmt(x):
    return repr(float(x))


# ---------------------------------------------------------------- Newick

class _NewickParser:
    def __init__(self, text):
        self.text = text
        self.pos = 0
        self.labels = []
        self.clades = []
        self.lengths = {}

    def error(self, message, pos=None):
        pos = self.pos if pos is None else pos
        raise ParseError(message, len(self.text[:pos].encode("utf-8")))

    def skip(self):
        t = self.text
        while self.pos < len(t):
            if t[self.pos].isspace():
                self.pos += 1
            elif t[self.pos] == "[":
                end = t.find("]", self.pos)
                if end < 0:
                    self.error("unterminated comment")
                self.pos = end + 1
            else:
                break

    def peek(self):
        self.skip()
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def label(self):
        self.skip()
        t = self.text
        if self.pos < len(t) and t[self.pos] == "'":
            out = []
            self.pos += 1
            while True:
                if self.pos >= len(t):
                    self.error("unterminated quoted label")
                if t[self.pos] == "'":
                    if t[self.pos + 1:self.pos + 2] == "'":
                        out.append("'")
                        self.pos += 2
                        continue
                    self.pos += 1
                    return "".join(out)
                out.append(t[self.pos])
                self.pos += 1
        start = self.pos
        while self.pos < len(t) and t[self.pos] not in _DELIMS and not t[self.pos].isspace():
            self.pos += 1
        return t[start:self.pos]

    def length(self, required):
        if self.peek() != ":":
            if required:
                self.error("missing branch length")
            return None
        self.pos += 1
        self.skip()
        start = self.pos
        t = self.text
        while self.pos < len(t) and (t[self.pos] not in _DELIMS and not t[self.pos].isspace()):
            self.pos += 1
        token = t[start:self.pos]
        try:
            value = float(token)
        except ValueError:
            self.error(f"invalid branch length {token!r}", start)
        if not math.isfinite(value) or value < 0:
            self.error(f"branch length must be finite and nonnegative, got {token!r}", start)
        return value

    def node(self):
        """Parse one subtree; returns a node key ``('tip', k)`` or ``('node', k)``."""
        if self.peek() == "(":
            open_pos = self.pos
            self.pos += 1
            kids = [self.subtree()]
            while self.peek() == ",":
                self.pos += 1
                kids.append(self.subtree())
            if self.peek() != ")":
                if self.pos >= len(self.text) or self.peek() == ";":
                    self.error("unbalanced parentheses: missing ')'")
                self.error(f"unexpected character {self.peek()!r}")
            if len(kids) > 2:
                self.error(f"polytomy with {len(kids)} children; only binary trees are supported", open_pos)
            if len(kids) < 2:
                self.error("internal node with a single child", open_pos)
            self.pos += 1
            self.label()
            key = ("node", len(self.clades))
            self.clades.append((key, tuple(kids)))
            return key
        self.skip()
        start = self.pos
        name = self.label()
        if not name:
            self.error(f"expected a taxon name or '(' but found {self.peek()!r}" if self.peek() else "unexpected end of input")
        if name in self.labels:
            self.error(f"duplicate taxon {name!r}", start)
        self.labels.append(name)
        return ("tip", len(self.labels) - 1)

    def subtree(self):
        key = self.node()
        self.lengths[key] = self.length(required=True)
        return key

    def parse(self):
        root = self.node()
        self.length(required=False)
        if self.peek() == ")":
            self.error("unbalanced parentheses: unexpected ')'")
        if self.peek() != ";":
            self.error("expected ';' at end of tree")
        self.pos += 1
        if self.peek():
            self.error("trailing characters after ';'")
        return root


def parse_newick(text):
    """Parse a rooted binary Newick string with lengths on every non-root branch.

    Tips are numbered in order of appearance; internal nodes in the order
    their closing parenthesis is read, which places every child before its
    parent.
    """
    p = _NewickParser(text)
    p.parse()
    N = len(p.labels)
    if N == 1:
        return Phylogeny([-1], [[-1, -1]], [0.0], tuple(p.labels))
    index = {("tip", k): k for k in range(N)}
    clades = []
    for key, (a, b) in p.clades:
        index[key] = N + len(clades)
        clades.append((index[a], index[b]))
    lengths = np.zeros(2 * N - 1)
    for key, value in p.lengths.items():
        lengths[index[key]] = value
    return Phylogeny.from_clades(clades, lengths, tuple(p.labels))


def _quote(label):
    if label and not any(c in _DELIMS or c.isspace() for c in label):
        return label
    return "'" + label.replace("'", "''") + "'"


def write_newick(tree):
    def walk(v):
        if v < tree.n_tips:
            s = _quote(tree.tip_labels[v])
        else:
            a, b = tree.children[v]
            s = f"({walk(a)},{walk(b)})"
        if v != tree.root:
            s += ":" + fmt(tree.branch_length[v])
        return s
    return walk(tree.root) + ";"


def _read_text(path):
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise InputError(f"cannot read {path}: {e.strerror}") from None


def _write_text(path, text):
    try:
        Path(path).write_text(text, encoding="utf-8", newline="\n")
    except OSError as e:
        raise InputError(f"cannot write {path}: {e.strerror}") from None


def read_newick(path):
    return parse_newick(_read_text(path).strip())


# ---------------------------------------------------------------- CSV tables

def _rows(path, expected):
    """Header and ``(line number, fields)`` rows of a CSV file after checking the leading columns."""
    text = _read_text(path)
    reader = csv.reader(text.splitlines())
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise InputError(f"{path}: empty file") from None
    if header[:len(expected)] != list(expected):
        raise InputError(f"{path}: header must start with {','.join(expected)}, got {','.join(header)}")
    out = []
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise InputError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        out.append((lineno, [c.strip() for c in row]))
    return header, out


def _state(states, label, where):
    try:
        return states.index(label)
    except (KeyError, ValueError, InputError):
        raise InputError(f"{where}: unknown state label {label!r}") from None


def _float(token, where):
    try:
        value = float(token)
    except ValueError:
        raise InputError(f"{where}: not a number: {token!r}") from None
    if not math.isfinite(value):
        raise InputError(f"{where}: non-finite value {token!r}")
    return value


def read_tip_states(path, tree, states):
    """``taxon,state`` table to :class:`TipData`; every tip exactly once."""
    _, rows = _rows(path, ("taxon", "state"))
    out = {}
    for lineno, (taxon, label) in rows:
        where = f"{path}:{lineno}"
        if taxon not in tree.tip_labels:
            raise InputError(f"{where}: unknown taxon {taxon!r}")
        k = tree.tip_labels.index(taxon)
        if k in out:
            raise InputError(f"{where}: duplicate row for taxon {taxon!r}")
        out[k] = _state(states, label, where)
    missing = [tree.tip_labels[k] for k in range(tree.n_tips) if k not in out]
    if missing:
        raise InputError(f"{path}: no state for taxon {missing[0]!r}")
    return TipData.from_mapping(out, tree, states.size)


def write_tip_states(path, tree, tips, states):
    tips = tips.states if isinstance(tips, TipData) else np.asarray(tips)
    lines = ["taxon,state"] + [f"{tree.tip_labels[k]},{states.labels[s]}" for k, s in enumerate(tips)]
    _write_text(path, "\n".join(lines) + "\n")


def read_pair_table(path, states):
    """``from,to,<col>...`` table to an array ``(n_cols, S^2 - S)`` in pair order."""
    header, rows = _rows(path, ("from", "to"))
    names = tuple(header[2:])
    if not names:
        raise InputError(f"{path}: no value column after from,to")
    S = states.size
    pairs = PairIndex(S)
    values = np.full((len(names), len(pairs)), np.nan)
    seen = set()
    for lineno, row in rows:
        where = f"{path}:{lineno}"
        i, j = _state(states, row[0], where), _state(states, row[1], where)
        if i == j:
            raise InputError(f"{where}: diagonal pair ({row[0]},{row[1]}) is not allowed")
        if (i, j) in seen:
            raise InputError(f"{where}: duplicate pair ({row[0]},{row[1]})")
        seen.add((i, j))
        values[:, pairs.index(i, j)] = [_float(x, where) for x in row[2:]]
    for k, (i, j) in enumerate(pairs.pairs()):
        if (i, j) not in seen:
            raise InputError(f"{path}: missing pair ({states.labels[i]},{states.labels[j]})")
    return names, values


def read_covariates(path, states):
    names, values = read_pair_table(path, states)
    return CovariateSet(names, values)


def write_pair_table(path, states, columns):
    """Write ``from,to,<name>...`` with one row per ordered pair; ``columns`` maps name to values."""
    pairs = PairIndex(states.size)
    names = list(columns)
    lines = [",".join(["from", "to"] + names)]
    for k, (i, j) in enumerate(pairs.pairs()):
        vals = [fmt(np.asarray(columns[n])[k]) for n in names]
        lines.append(",".join([states.labels[i], states.labels[j]] + vals))
    _write_text(path, "\n".join(lines) + "\n")


def read_observations(path, states):
    """``time,state`` table (absolute times) to an :class:`ObservationSequence`."""
    _, rows = _rows(path, ("time", "state"))
    if not rows:
        raise InputError(f"{path}: no observations")
    times = [_float(r[0], f"{path}:{n}") for n, r in rows]
    xs = [_state(states, r[1], f"{path}:{n}") for n, r in rows]
    return ObservationSequence(xs, times)


def write_observations(path, obs, states):
    lines = ["time,state"] + [f"{fmt(t)},{states.labels[s]}" for t, s in zip(obs.times, obs.states)]
    _write_text(path, "\n".join(lines) + "\n")


# ---------------------------------------------------------------- samples

def sample_columns(states, hyper_names):
    pairs = PairIndex(states.size)
    theta = [f"theta_{states.labels[i]}_{states.labels[j]}" for i, j in pairs.pairs()]
    return ["iteration", "log_posterior", *hyper_names, *theta]


class SampleWriter:
    """Streams :class:`SampleRecord` rows to a CSV file; usable as a chain callback."""

    def __init__(self, path, states, hyper_names=()):
        self.path = path
        self.columns = sample_columns(states, hyper_names)
        try:
            self.handle = open(path, "w", encoding="utf-8", newline="\n")
        except OSError as e:
            raise InputError(f"cannot write {path}: {e.strerror}") from None
        self.handle.write(",".join(self.columns) + "\n")

    def __call__(self, record):
        values = [str(int(record.iteration)), fmt(record.log_posterior)]
        values += [fmt(h) for h in record.hypers] + [fmt(t) for t in record.theta]
        if len(values) != len(self.columns):
            raise InputError(f"record has {len(values)} fields, schema has {len(self.columns)}")
        self.handle.write(",".join(values) + "\n")

    def close(self):
        self.handle.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_samples(records, path, states, hyper_names=()):
    with SampleWriter(path, states, hyper_names) as w:
        for r in records:
            w(r)


def read_samples(path):
    """Columns of a sample file as a dict of float arrays (header order kept)."""
    text = _read_text(path)
    reader = csv.reader(text.splitlines())
    header = next(reader)
    rows = [list(map(float, r)) for r in reader if r]
    data = np.array(rows, dtype=float).reshape(len(rows), len(header))
    return {name: data[:, k] for k, name in enumerate(header)}


def write_gradcheck(rows, summary, path):
    """Per-coordinate table to ``path`` and per-method summary to ``<stem>.summary.csv``.

    ``rows`` are dicts sharing keys; ``summary`` is a list of dicts.
    """
    path = Path(path)
    for table, target in ((rows, path), (summary, path.with_suffix(".summary.csv"))):
        if not table:
            _write_text(target, "")
            continue
        keys = list(table[0])
        lines = [",".join(keys)]
        for r in table:
            lines.append(",".join(fmt(r[k]) if isinstance(r[k], (float, np.floating)) else str(r[k]) for k in keys))
        _write_text(target, "\n".join(lines) + "\n")
    return path, path.with_suffix(".summary.csv")


# ---------------------------------------------------------------- config

def _floats(s):
    return tuple(float(x) for x in s.split(",") if x.strip())


def _ints(s):
    return tuple(int(x) for x in s.split(",") if x.strip())


def _strs(s):
    return tuple(x.strip() for x in s.split(",") if x.strip())


def _bool(s):
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _opt_float(s):
    return None if str(s).strip().lower() in ("", "none") else float(s)


def _opt_str(s):
    return None if str(s).strip().lower() in ("", "none") else str(s).strip()


@dataclass(frozen=True)
class RunConfig:
    """Every setting of a run. Relative paths are resolved against the config file."""

    model: str = "tree"
    states: int = 4
    labels: tuple = None
    tree: str = None
    tips: str = None
    observations: str = None
    covariates: str = None
    truth_file: str = None
    out: str = "out"
    seed: int = 0
    threads: int = 1
    pi: tuple = None
    pi_init: tuple = None
    prior: str = "gp"
    likelihood: bool = True
    kernel: str = "se"
    rate_sigma2: float = 1.0
    rate_ell: float = 1.0
    ell_floor: float = None
    coef_sd: float = 10.0
    whitened: bool = True
    gradient: str = "approx"
    series_k: int = 30
    step_size: float = 0.1
    leapfrog_steps: int = 50
    target_accept: float = 0.65
    warmup: int = 500
    iterations: int = 1000
    thin: int = 1
    hyper_every: int = 10
    hyper_scale: float = 0.5
    hyper_move: str = "both"
    adapt_mass: bool = False
    truth: str = "quadratic"
    covariate: str = "uniform-distance"
    covariate_high: float = 3.0
    quad_a: float = -0.5
    quad_b: float = 2.0
    quad_c: float = -0.8
    n_tips: int = 100
    tree_height: float = 5.0
    n_obs: int = 200
    obs_interval: float = 0.3
    methods: tuple = ("exact", "series", "approx", "central-diff")
    max_states: int = 16
    bench_states: tuple = (4, 8, 16, 32, 64)
    bench_methods: tuple = ("approx", "exact")
    exact_max_states: int = 16
    reps: int = 5
    bench_tips: int = 372

    def replace(self, **kw):
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        values.update(kw)
        return RunConfig(**values)


_CONVERT = {
    int: int, float: float, str: str, bool: _bool,
}
_SPECIAL = {
    "labels": _strs, "pi": _floats, "pi_init": _floats, "methods": _strs,
    "bench_states": _ints, "bench_methods": _strs, "ell_floor": _opt_float,
    "tree": _opt_str, "tips": _opt_str, "observations": _opt_str,
    "covariates": _opt_str, "truth_file": _opt_str,
}
PATH_KEYS = ("tree", "tips", "observations", "covariates", "truth_file")
_VALID = {
    "model": ("tree", "sequential"),
    "prior": ("gp", "loglinear", "both"),
    "kernel": ("se", "matern52"),
    "hyper_move": ("centered", "whitened", "both"),
    "gradient": ("approx", "exact", "series"),
    "truth": ("quadratic", "log-L1", "custom-csv"),
    "covariate": ("uniform-distance", "l1", "file"),
}


def _convert(name, raw):
    f = {f.name: f for f in fields(RunConfig)}.get(name)
    if f is None:
        raise InputError(f"unknown config key {name!r}")
    conv = _SPECIAL.get(name) or _CONVERT[type(f.default) if f.default is not None else str]
    try:
        return conv(raw) if isinstance(raw, str) else raw
    except ValueError as e:
        raise InputError(f"config key {name!r}: {e}") from None


def load_config(path=None, overrides=None, check_files=True):
    """Defaults, then ``key = value`` lines from ``path``, then ``overrides``.

    ``overrides`` maps keys to values (strings or already-typed); ``None``
    values are ignored. Referenced input files must exist when
    ``check_files`` is set.
    """
    values = {}
    base = Path(".")
    if path is not None:
        base = Path(path).parent
        parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",),
                                           comment_prefixes=("#",), delimiters=("=",))
        parser.optionxform = str
        try:
            parser.read_string("[run]\n" + _read_text(path))
        except configparser.Error as e:
            raise InputError(f"{path}: {e.message.splitlines()[0]}") from None
        for key, raw in parser["run"].items():
            values[key.strip()] = _convert(key.strip(), raw.strip())
    for key, raw in (overrides or {}).items():
        if raw is not None:
            values[key] = _convert(key, raw)
    for key in PATH_KEYS:
        if values.get(key):
            p = Path(values[key])
            values[key] = str(p if p.is_absolute() else base / p)
    if values.get("labels") == ():
        values["labels"] = None
    cfg = RunConfig(**values)
    for key, allowed in _VALID.items():
        if getattr(cfg, key) not in allowed:
            raise InputError(f"config key {key!r} must be one of {allowed}, got {getattr(cfg, key)!r}")
    if cfg.states < 2:
        raise InputError("states must be >= 2")
    if cfg.labels is not None and len(cfg.labels) != cfg.states:
        raise InputError(f"{len(cfg.labels)} labels given for {cfg.states} states")
    if check_files:
        for key in PATH_KEYS:
            p = getattr(cfg, key)
            if p is not None and not os.path.exists(p):
                raise InputError(f"config key {key!r}: file not found: {p}")
    return cfg


def state_space(cfg):
    return StateSpace(cfg.labels) if cfg.labels else StateSpace.of_size(cfg.states)
