"""Experiment configuration: a flat ``section.key = value`` text format.

Grammar (one entry per line)::

    # comment             blank lines and lines starting with '#' are ignored
    aps.k = 5             key = value; trailing ' # comment' is stripped
    paths.pool = "a b"    values may be double-quoted to keep spaces or '#'

Keys must be known, may appear once, and are validated against the ranges
in :data:`FIELDS`.  Relative paths resolve against the config file's
directory.  Every field has a default, so an empty file is a valid config.
"""
import difflib
import hashlib
import os
import re
from dataclasses import dataclass

from .aps import METHODS, OUTLIER_SIGNS
from .dcrd import DcrdHyper
from .distill import SCHEDULES, TrainConfig
from .errors import ConfigError
from .nets import AUG_KINDS, SYNTH_PRESETS, AugmentationSpec

_KEY = re.compile(r"^[a-z][a-z0-9_]*\.[a-z][a-z0-9_]*$")


@dataclass(frozen=True)
class Field:
    kind: str  # int | float | bool | str | path | ints | choice
    default: object
    lo: float | None = None
    hi: float | None = None
    choices: tuple = ()
    open_lo: bool = False
    open_hi: bool = False
    help: str = ""


def _f(kind, default, lo=None, hi=None, choices=(), open_lo=False, open_hi=False, help=""):
    return Field(kind, default, lo, hi, tuple(choices), open_lo, open_hi, help)


FIELDS = {
    # inputs and outputs; empty means "derive from paths.out"
    "paths.train": _f("path", "", help="labeled train dataset directory"),
    "paths.test": _f("path", "", help="labeled test dataset directory"),
    "paths.pool": _f("path", "", help="unlabeled pool dataset directory"),
    "paths.teacher": _f("path", "", help="teacher checkpoint directory"),
    "paths.student": _f("path", "", help="student checkpoint directory"),
    "paths.out": _f("path", "out", help="output directory"),
    "model.classes": _f("int", 0, lo=0, help="class count; 0 infers it from the data"),
    "model.teacher_hidden": _f("ints", (64, 64)),
    "model.student_hidden": _f("ints", (16,)),
    "teacher.epochs": _f("int", 20, lo=0),
    "teacher.batch": _f("int", 64, lo=1),
    "teacher.lr": _f("float", 0.025, lo=0),
    "teacher.momentum": _f("float", 0.9, lo=0, hi=1, open_hi=True),
    "teacher.weight_decay": _f("float", 5e-4, lo=0),
    "teacher.schedule": _f("choice", "constant", choices=SCHEDULES),
    "teacher.seed": _f("int", 0),
    "aps.k": _f("int", 5, lo=1),
    "aps.seed": _f("int", 0),
    "aps.n_select": _f("int", 1000, lo=1),
    "aps.outlier_sign": _f("choice", "as-printed", choices=OUTLIER_SIGNS),
    "aps.method": _f("choice", "aps", choices=METHODS),
    "dcrd.tau": _f("float", 4.0, lo=0, open_lo=True),
    "dcrd.tau1": _f("float", 0.5, lo=0, open_lo=True),
    "dcrd.tau2": _f("float", 0.5, lo=0, open_lo=True),
    "dcrd.lambda1": _f("float", 10.0, lo=0),
    "dcrd.lambda2": _f("float", 0.5, lo=0),
    "dcrd.delta": _f("float", 1.0, lo=0, open_lo=True),
    "dcrd.embed_dim": _f("int", 0, lo=0, help="0 picks min(2N - 1, C)"),
    "dcrd.kd_tau_squared": _f("bool", True),
    "train.epochs": _f("int", 10, lo=0),
    "train.batch": _f("int", 64, lo=1, help="N; the paired batch holds 2N rows"),
    "train.lr": _f("float", 0.025, lo=0),
    "train.momentum": _f("float", 0.9, lo=0, hi=1, open_hi=True),
    "train.weight_decay": _f("float", 5e-4, lo=0),
    "train.schedule": _f("choice", "constant", choices=SCHEDULES),
    "train.seed": _f("int", 0),
    "train.record_wall_time": _f("bool", False, help="off keeps metrics byte-identical across runs"),
    "aug.kind": _f("choice", "gaussian-noise", choices=AUG_KINDS),
    "aug.sigma": _f("float", 0.1, lo=0),
    "aug.dropout": _f("float", 0.1, lo=0, hi=1),
    "aug.max_shift": _f("int", 1, lo=0),
    "aug.grid": _f("ints", ()),
    "aug.seed": _f("int", 0),
    "synth.preset": _f("choice", "benchmark", choices=tuple(SYNTH_PRESETS)),
    "synth.seed": _f("int", 0),
    "synth.dim": _f("int", 8, lo=1),
    "synth.ood_fraction": _f("float", 0.3, lo=0, hi=1),
    "gradcheck.seed": _f("int", 0),
    "gradcheck.n_pairs": _f("int", 4, lo=1),
    "gradcheck.classes": _f("int", 4, lo=2),
    "gradcheck.step": _f("float", 1e-5, lo=0, open_lo=True),
    "gradcheck.tol": _f("float", 1e-4, lo=0, open_lo=True),
    "embed.d": _f("int", 2, lo=1),
    "embed.batch": _f("int", 64, lo=1),
    "embed.data": _f("path", "", help="dataset to embed; empty uses paths.test"),
}

# keys that do not change any produced number; kept out of the run id
_NON_SEMANTIC = ("paths.", "train.record_wall_time")


def _suggest(key):
    close = difflib.get_close_matches(key, FIELDS, n=1)
    return f" (did you mean {close[0]!r}?)" if close else ""


def _strip_comment(text):
    out, quoted = [], False
    for i, ch in enumerate(text):
        if ch == '"':
            quoted = not quoted
        elif ch == "#" and not quoted and (i == 0 or text[i - 1].isspace()):
            break
        out.append(ch)
    return "".join(out).strip()


def _unquote(raw, where):
    if raw.startswith('"'):
        if len(raw) < 2 or not raw.endswith('"') or '"' in raw[1:-1]:
            raise ConfigError(f"{where}: unbalanced quotes in {raw!r}")
        return raw[1:-1]
    return raw


def _check_range(key, field, v, where):
    lo_bad = field.lo is not None and (v <= field.lo if field.open_lo else v < field.lo)
    hi_bad = field.hi is not None and (v >= field.hi if field.open_hi else v > field.hi)
    if lo_bad or hi_bad:
        lo = "" if field.lo is None else f"{field.lo} {'<' if field.open_lo else '<='} "
        hi = "" if field.hi is None else f" {'<' if field.open_hi else '<='} {field.hi}"
        raise ConfigError(f"{where}: {key} = {v} is out of range (need {lo}{key}{hi})")


def parse_value(key, raw, where="config"):
    """Convert the text ``raw`` to the type declared for ``key``."""
    if key not in FIELDS:
        raise ConfigError(f"{where}: unknown key {key!r}{_suggest(key)}")
    field = FIELDS[key]
    text = _unquote(raw.strip(), where)
    kind = field.kind
    if kind == "choice" and text not in field.choices:
        raise ConfigError(f"{where}: {key} must be one of {', '.join(field.choices)}; got {text!r}")
    try:
        if kind == "int":
            v = int(text, 10)
        elif kind == "float":
            v = float(text)
            if v != v or v in (float("inf"), float("-inf")):
                raise ValueError
        elif kind == "bool":
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError
            v = low in ("true", "1", "yes")
        elif kind == "ints":
            v = tuple(int(p, 10) for p in re.split(r"[,x\s]+", text) if p) if text else ()
            if any(p < 1 for p in v):
                raise ValueError
        else:
            v = text
    except ValueError:
        raise ConfigError(f"{where}: {key} expects {kind}, got {raw.strip()!r}") from None
    if kind in ("int", "float"):
        _check_range(key, field, v, where)
    return v


def parse_text(text, source="<config>"):
    """Parse config text to a ``{key: value}`` dict of explicitly set entries."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        where = f"{source}:{lineno}"
        body = _strip_comment(line)
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"{where}: expected 'section.key = value', got {line.strip()!r}")
        key, raw = body.split("=", 1)
        key = key.strip()
        if not _KEY.match(key):
            raise ConfigError(f"{where}: malformed key {key!r}; keys look like 'section.name'")
        if key in values:
            raise ConfigError(f"{where}: duplicate key {key!r}")
        if not raw.strip():
            raise ConfigError(f"{where}: {key} has no value")
        values[key] = parse_value(key, raw, where)
    return values


class ExperimentConfig:
    """Validated configuration with typed accessors for each subsystem."""

    def __init__(self, values=None, base_dir="."):
        self.base_dir = os.path.abspath(base_dir)
        self._values = {k: f.default for k, f in FIELDS.items()}
        for k, v in (values or {}).items():
            if k not in FIELDS:
                raise ConfigError(f"unknown key {k!r}{_suggest(k)}")
            self._values[k] = v
        self._check_cross()

    @classmethod
    def load(cls, path=None, overrides=()):
        """Read ``path`` (None means all defaults) and apply ``key=value`` overrides."""
        values, base = {}, "."
        if path is not None:
            with open(path, encoding="utf-8") as fh:
                values = parse_text(fh.read(), str(path))
            base = os.path.dirname(os.path.abspath(path))
        for item in overrides:
            if "=" not in item:
                raise ConfigError(f"override {item!r} is not key=value")
            key, raw = item.split("=", 1)
            values[key.strip()] = parse_value(key.strip(), raw, "override")
        return cls(values, base)

    def _check_cross(self):
        grid = self["aug.grid"]
        if self["aug.kind"] == "shift-flip" and len(grid) != 2:
            raise ConfigError("aug.kind = shift-flip needs aug.grid = H,W")
        if grid and len(grid) != 2:
            raise ConfigError("aug.grid must be empty or H,W")

    def __getitem__(self, key):
        return self._values[key]

    def replace(self, **changes):
        """Copy with ``section__key=value`` style overrides (dots spelled as double underscores)."""
        vals = dict(self._values)
        for k, v in changes.items():
            vals[k.replace("__", ".")] = v
        return ExperimentConfig(vals, self.base_dir)

    def path(self, key, fallback=None):
        """Resolved path for ``key``; empty values fall back to ``paths.out``/``fallback``."""
        raw = self._values[key]
        if not raw:
            if fallback is None:
                return None
            return os.path.join(self.path("paths.out"), fallback)
        return raw if os.path.isabs(raw) else os.path.join(self.base_dir, raw)

    def items(self):
        return sorted(self._values.items())

    def dump(self):
        """Canonical text form; parsing it back yields the same values."""
        lines = []
        for k, v in self.items():
            if isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, tuple):
                v = ",".join(str(x) for x in v) or '""'
            elif isinstance(v, float):
                v = repr(v)
            elif isinstance(v, str) and (not v or "#" in v or " " in v):
                v = f'"{v}"'
            lines.append(f"{k} = {v}")
        return "\n".join(lines) + "\n"

    def run_id(self):
        """Short hash of every setting that can change a produced number."""
        text = "\n".join(line for line in self.dump().splitlines() if not line.startswith(_NON_SEMANTIC))
        return hashlib.sha256(text.encode()).hexdigest()[:12]

    # typed views

    def hyper(self):
        return DcrdHyper(
            tau=self["dcrd.tau"], tau1=self["dcrd.tau1"], tau2=self["dcrd.tau2"],
            lambda1=self["dcrd.lambda1"], lambda2=self["dcrd.lambda2"], delta=self["dcrd.delta"],
            embed_dim=self["dcrd.embed_dim"] or None, kd_tau_squared=self["dcrd.kd_tau_squared"],
        )

    def train(self):
        return TrainConfig(
            epochs=self["train.epochs"], batch=self["train.batch"], lr=self["train.lr"],
            momentum=self["train.momentum"], weight_decay=self["train.weight_decay"],
            schedule=self["train.schedule"], seed=self["train.seed"],
        )

    def teacher_train(self):
        return TrainConfig(
            epochs=self["teacher.epochs"], batch=self["teacher.batch"], lr=self["teacher.lr"],
            momentum=self["teacher.momentum"], weight_decay=self["teacher.weight_decay"],
            schedule=self["teacher.schedule"], seed=self["teacher.seed"],
        )

    def aug(self):
        grid = self["aug.grid"] or None
        return AugmentationSpec(
            kind=self["aug.kind"], sigma=self["aug.sigma"], dropout=self["aug.dropout"],
            max_shift=self["aug.max_shift"], grid=grid, seed=self["aug.seed"],
        )

    def with_seed(self, seed):
        """Apply ``--seed``: every named seed becomes ``seed`` (aug/synth/aps/train/teacher)."""
        return self.replace(**{k.replace(".", "__"): int(seed) for k in FIELDS if k.endswith(".seed")})
