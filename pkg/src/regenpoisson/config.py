"""Run configuration: ``key = value`` pairs grouped in ``[sections]``.

Grammar (``#`` and ``;`` start comments)::

    [chain]
    name = birth_death        # two_state | reflected_walk | birth_death | example1 | current_age | triplets
    p = 0.3                   # birth_death, example1
    a = 0.5                   # two_state (with b)
    increments = -1:0.7, 1:0.3   # reflected_walk
    r = 0.25, 0.25            # example1 rail feeds
    alpha = 3                 # current_age (optional c)
    path = kernel.csv         # triplets: CSV with columns row, col, prob

    [function]
    kind = identity           # identity | indicator | polynomial | constant | csv
    states = 0                # indicator: states where f = 1
    coeffs = 0, 1             # polynomial in the level i of the state
    value = 1                 # constant
    path = f.csv              # csv: columns state, value

    [solve]
    z = 0
    method = gz               # gz | direct | gstar | all

    [truncation]
    size = 64
    max_size = 16384
    policy = redirect_self    # redirect_self | renormalize
    tol = 1e-8

    [lyapunov]
    mode = queue              # queue | drift | thm5 | thm7
    K = 0, 1
    v = 0, 2.5                # polynomial coefficients in the level, also v1..v4
    w = 1

    [mc]
    seed = 20240101
    cycles = 100000
    replications = 2000
    horizon = 10000
    n_max = 1000000

    [output]
    dir = out

States are written as Python literals (``0``, ``(1, 2)``).
"""

import ast
import configparser
import csv
from dataclasses import dataclass, field
from pathlib import Path

from .chain import LeakPolicy, TransitionKernel
from .errors import ConfigError
from .gallery import GalleryChain, birth_death, current_age, example1, reflected_walk, state_level, two_state

SECTIONS = ("chain", "function", "solve", "truncation", "lyapunov", "mc", "output")
MC_COMMANDS = ("simulate", "clt", "lil")


def _line_numbers(text):
    """Map ``(section, key)`` to the line where the key is defined."""
    lines, section = {}, None
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip().lower()
            lines[(section, None)] = no
            continue
        for sep in ("=", ":"):
            if sep in line:
                lines[(section, line.split(sep, 1)[0].strip().lower())] = no
                break
    return lines


def parse_state(text):
    try:
        return ast.literal_eval(text.strip())
    except (ValueError, SyntaxError):
        return text.strip()


@dataclass
class RunConfig:
    """Parsed configuration; ``raw`` echoes every section for run metadata."""

    raw: dict
    lines: dict = field(default_factory=dict)
    base: Path = Path(".")

    def get(self, section, key, default=None):
        return self.raw.get(section, {}).get(key, default)

    def lineno(self, section, key=None):
        return self.lines.get((section, key)) or self.lines.get((section, None))

    def error(self, section, key, message):
        return ConfigError(f"[{section}] {key}: {message}", self.lineno(section, key))

    def number(self, section, key, default=None, kind=float, positive=False):
        text = self.get(section, key)
        if text is None:
            if default is None:
                raise self.error(section, key, "missing required value")
            return default
        try:
            val = kind(float(text)) if kind is int else kind(text)
        except ValueError:
            raise self.error(section, key, f"cannot parse {text!r} as {kind.__name__}") from None
        if positive and not val > 0:
            raise self.error(section, key, f"must be positive, got {text!r}")
        return val

    def floats(self, section, key):
        text = self.get(section, key)
        if text is None:
            raise self.error(section, key, "missing required value")
        try:
            return [float(t) for t in text.replace(",", " ").split()]
        except ValueError:
            raise self.error(section, key, f"cannot parse {text!r} as a list of numbers") from None

    def states(self, section, key, default=None):
        text = self.get(section, key)
        if text is None:
            if default is None:
                raise self.error(section, key, "missing required value")
            return default
        try:
            val = ast.literal_eval(f"[{text}]")
        except (ValueError, SyntaxError):
            raise self.error(section, key, f"cannot parse states {text!r}") from None
        return val

    @property
    def z(self):
        return parse_state(self.get("solve", "z", "0"))

    @property
    def truncation(self):
        policy = self.get("truncation", "policy", LeakPolicy.REDIRECT_SELF.value)
        try:
            policy = LeakPolicy(policy.lower())
        except ValueError:
            raise self.error("truncation", "policy", f"unknown leak policy {policy!r}") from None
        return {
            "size": self.number("truncation", "size", 64, int, positive=True),
            "max_size": self.number("truncation", "max_size", 2**17, int, positive=True),
            "tol": self.number("truncation", "tol", 1e-8, float, positive=True),
            "policy": policy,
        }

    @property
    def seed(self):
        return self.number("mc", "seed", kind=int)

    def require_seed(self, command):
        if command in MC_COMMANDS and self.get("mc", "seed") is None:
            raise ConfigError(f"command {command!r} needs [mc] seed", self.lineno("mc"))


def load_config(path=None, text=None):
    """Parse a configuration file (or string) into a :class:`RunConfig`."""
    base = Path(".")
    if text is None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file {str(path)!r} not found")
        text = path.read_text()
        base = path.parent
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    try:
        parser.read_string(text)
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError("expected a [section] header", exc.lineno) from None
    except configparser.DuplicateOptionError as exc:
        raise ConfigError(f"duplicate key {exc.option!r} in [{exc.section}]", exc.lineno) from None
    except configparser.DuplicateSectionError as exc:
        raise ConfigError(f"duplicate section [{exc.section}]", exc.lineno) from None
    except configparser.ParsingError as exc:
        lineno = exc.errors[0][0]
        line = text.splitlines()[lineno - 1].strip()
        raise ConfigError(f"expected 'key = value', got {line!r}", lineno) from None
    lines = _line_numbers(text)
    raw = {}
    for sec in parser.sections():
        name = sec.lower()
        if name not in SECTIONS:
            raise ConfigError(f"unknown section [{sec}]", lines.get((name, None)))
        raw[name] = dict(parser[sec])
    return RunConfig(raw, lines, base)


def build_chain(cfg):
    """Gallery chain (or triplet kernel) named in ``[chain]``."""
    name = cfg.get("chain", "name")
    if name is None:
        raise cfg.error("chain", "name", "missing required value")
    name = name.lower()
    try:
        if name == "two_state":
            return two_state(cfg.number("chain", "a"), cfg.number("chain", "b"))
        if name == "birth_death":
            return birth_death(cfg.number("chain", "p"))
        if name == "reflected_walk":
            return reflected_walk(_increments(cfg))
        if name == "example1":
            return example1(cfg.number("chain", "p"), cfg.floats("chain", "r"))
        if name == "current_age":
            return current_age(cfg.number("chain", "alpha"), cfg.number("chain", "c", 1.0))
        if name == "triplets":
            return GalleryChain(_triplets(cfg), {}, {}, "triplet file")
    except ConfigError:
        raise
    except ValueError as exc:
        raise cfg.error("chain", "name", str(exc)) from None
    raise cfg.error("chain", "name", f"unknown chain {name!r}")


def _increments(cfg):
    text = cfg.get("chain", "increments")
    if text is None:
        raise cfg.error("chain", "increments", "missing required value")
    law = {}
    try:
        for item in text.split(","):
            z, p = item.split(":")
            law[int(z)] = float(p)
    except ValueError:
        raise cfg.error("chain", "increments", f"expected 'z:p, ...', got {text!r}") from None
    return law


def _resolve(cfg, section, key):
    text = cfg.get(section, key)
    if text is None:
        raise cfg.error(section, key, "missing required value")
    path = Path(text)
    if not path.is_absolute():
        path = cfg.base / path
    if not path.exists():
        raise cfg.error(section, key, f"file {text!r} not found")
    return path


def _triplets(cfg):
    path = _resolve(cfg, "chain", "path")
    triplets = []
    with open(path, newline="") as fh:
        for no, row in enumerate(csv.reader(fh), start=1):
            if not row or row[0].strip().lower() in ("row", "#"):
                continue
            try:
                triplets.append((int(row[0]), int(row[1]), float(row[2])))
            except (ValueError, IndexError):
                raise ConfigError(f"{path.name}: bad triplet {row!r}", no) from None
    if not triplets:
        raise cfg.error("chain", "path", "no triplets found")
    return TransitionKernel.from_triplets(triplets, label=f"triplets({path.name})")


def build_function(cfg):
    """The function ``f`` of ``[function]`` as a callable on states."""
    kind = cfg.get("function", "kind", "identity").lower()
    if kind == "identity":
        return lambda s: float(state_level(s))
    if kind == "indicator":
        targets = set(cfg.states("function", "states"))
        return lambda s: 1.0 if s in targets else 0.0
    if kind == "polynomial":
        coeffs = cfg.floats("function", "coeffs")
        return _poly(coeffs)
    if kind == "constant":
        c = cfg.number("function", "value")
        return lambda s: c
    if kind == "csv":
        path = _resolve(cfg, "function", "path")
        table = {}
        with open(path, newline="") as fh:
            for no, row in enumerate(csv.reader(fh), start=1):
                if not row or row[0].strip().lower() == "state":
                    continue
                try:
                    table[parse_state(row[0])] = float(row[1])
                except (ValueError, IndexError):
                    raise ConfigError(f"{path.name}: bad row {row!r}", no) from None
        return lambda s: table.get(s, 0.0)
    raise cfg.error("function", "kind", f"unknown function kind {kind!r}")


def _poly(coeffs):
    def f(s):
        i = float(state_level(s))
        return sum(c * i**k for k, c in enumerate(coeffs))

    return f


def polynomial(cfg, section, key):
    """Polynomial in the state level from a coefficient list, or ``None`` if absent."""
    if cfg.get(section, key) is None:
        return None
    return _poly(cfg.floats(section, key))
