"""Experiment configuration: flat ``key = value`` text with section headers.

Every key has a default below.  Values on the command line written as
``--section.key=value`` override the file.  Lists are comma separated.
"""
from __future__ import annotations

import configparser
import io

import numpy as np

from .lattice import HaarSampler, Lattice
from .observables import DEFAULT_CENTERS, BumpObservable, constant_tau, make_tau, zero_mean


class ConfigError(ValueError):
    pass


DEFAULTS = """\
[run]
seed = 20240611
batches = 32

[lattice]
ball_cap = 10.0
maxit = 10000
acceptance_floor = 0.2

[model]
beta = 0.45

[tau]
# tau = (1 + c * bump) / normalizer; c = 0 gives the horocycle flow itself
c = 0.3
center = 1.0 0.0 0.0 1.0
radius = 0.35
amplitude = 1.0
ball_radius = 4.0
normalizer_samples = 100000

[flow]
step_init = 0.01
tol = 1e-8
max_steps = 1000000
horizon = 10000.0

[observables]
# the three default bumps share these shape parameters
radius = 0.35
amplitude = 1.0
ball_radius = 4.0
mean_samples = 100000

[experiment_observables]
# wider bumps used by the correlation and average experiments
radius = 0.7
ball_radius = 7.0

[flow_check]
additivity_samples = 1000
additivity_tmax = 50.0
invariance_samples = 20000
invariance_times = 10, 100

[correlate]
k = 2
gaps = 10, 30, 100, 300
window = 200.0
n = 20000
# bump: experiment bump number `bump` plus `offset`; constant: just `offset`
observable = bump
bump = 1
offset = 0.0

[vdc]
N = 50, 100, 200
L = 5, 10, 20
n = 20000
nodes = 16
# bump: zero-mean default bump number `bump`; constant: the unit-norm constant 1
observable = bump
bump = 1

[shear]
s = 0.1
T = 10, 30, 100, 300, 1000
samples = 50

[l2avg]
K = 0.5
windows = 25, 400
m = 0.0
n = 10000
steps = 0
bumps = 1, 2

[arc]
steps = 256

[cluster]
times = 0, 500, 1000
zetas = 0.5, 0.5

[plan]
times = 0, 10, 10000

[sample]
n = 10
"""

# (section, key) -> (kind, low, high); bounds are inclusive
RANGES = {
    ("run", "seed"): (int, 0, 2 ** 64 - 1),
    ("run", "batches"): (int, 2, 10 ** 6),
    ("lattice", "ball_cap"): (float, 1.0, 12.0),
    ("lattice", "maxit"): (int, 10, 10 ** 7),
    ("lattice", "acceptance_floor"): (float, 0.0, 1.0),
    ("model", "beta"): (float, 1e-9, 0.5),
    ("tau", "c"): (float, -0.5, 0.5),
    ("tau", "radius"): (float, 1e-6, 5.0),
    ("tau", "amplitude"): (float, -10.0, 10.0),
    ("tau", "ball_radius"): (float, 0.0, 12.0),
    ("tau", "normalizer_samples"): (int, 1000, 10 ** 8),
    ("flow", "step_init"): (float, 1e-9, 10.0),
    ("flow", "tol"): (float, 1e-14, 1e-2),
    ("flow", "max_steps"): (int, 1, 10 ** 10),
    ("flow", "horizon"): (float, 1.0, 1e7),
    ("observables", "radius"): (float, 1e-6, 5.0),
    ("observables", "amplitude"): (float, -10.0, 10.0),
    ("observables", "ball_radius"): (float, 0.0, 12.0),
    ("observables", "mean_samples"): (int, 1000, 10 ** 8),
    ("experiment_observables", "radius"): (float, 1e-6, 5.0),
    ("experiment_observables", "ball_radius"): (float, 0.0, 12.0),
    ("flow_check", "additivity_samples"): (int, 1, 10 ** 7),
    ("flow_check", "additivity_tmax"): (float, 0.0, 1e6),
    ("flow_check", "invariance_samples"): (int, 2, 10 ** 8),
    ("correlate", "k"): (int, 2, 5),
    ("correlate", "window"): (float, 1e-6, 1e6),
    ("correlate", "n"): (int, 2, 10 ** 8),
    ("correlate", "bump"): (int, 0, 2),
    ("correlate", "offset"): (float, -1e3, 1e3),
    ("vdc", "n"): (int, 2, 10 ** 8),
    ("vdc", "nodes"): (int, 1, 1000),
    ("vdc", "bump"): (int, 0, 2),
    ("shear", "s"): (float, 0.0, 0.999999),
    ("shear", "samples"): (int, 1, 10 ** 7),
    ("l2avg", "K"): (float, 1e-9, 0.999999),
    ("l2avg", "m"): (float, 0.0, 1e6),
    ("l2avg", "n"): (int, 2, 10 ** 8),
    ("l2avg", "steps"): (int, 0, 10 ** 6),
    ("arc", "steps"): (int, 1, 10 ** 6),
    ("sample", "n"): (int, 1, 10 ** 7),
}

LISTS = {
    ("flow_check", "invariance_times"), ("correlate", "gaps"), ("vdc", "N"), ("vdc", "L"),
    ("shear", "T"), ("l2avg", "windows"), ("l2avg", "bumps"), ("cluster", "times"),
    ("cluster", "zetas"), ("plan", "times"),
}


def _parser():
    p = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    p.optionxform = str
    return p


class ExperimentConfig:
    """Typed view of a validated config."""

    def __init__(self, parser):
        self._p = parser
        self.validate()

    # -- construction -------------------------------------------------------

    @classmethod
    def default(cls):
        return cls.from_text("")

    @classmethod
    def from_text(cls, text, overrides=()):
        p = _parser()
        try:
            p.read_string(DEFAULTS)
            user = _parser()
            user.read_string(text)
        except configparser.Error as e:
            raise ConfigError(f"cannot parse config: {e}") from None
        for sec in user.sections():
            if not p.has_section(sec):
                raise ConfigError(f"unknown section [{sec}]")
            for key, val in user.items(sec):
                if not p.has_option(sec, key):
                    raise ConfigError(f"unknown key {sec}.{key}")
                p.set(sec, key, val)
        for item in overrides:
            _apply_override(p, item)
        return cls(p)

    @classmethod
    def from_file(cls, path, overrides=()):
        try:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from None
        return cls.from_text(text, overrides)

    def to_text(self):
        buf = io.StringIO()
        self._p.write(buf)
        return buf.getvalue()

    def as_dict(self):
        return {s: dict(self._p.items(s)) for s in self._p.sections()}

    def __eq__(self, other):
        return isinstance(other, ExperimentConfig) and self.as_dict() == other.as_dict()

    def with_overrides(self, *items):
        return ExperimentConfig.from_text(self.to_text(), items)

    # -- typed access ---------------------------------------------------------

    def raw(self, section, key):
        return self._p.get(section, key)

    def get(self, section, key):
        kind = RANGES.get((section, key), (float,))[0]
        return self._convert(section, key, kind)

    def getlist(self, section, key, kind=float):
        raw = self._p.get(section, key)
        try:
            return [kind(v) for v in raw.replace(",", " ").split()]
        except ValueError:
            raise ConfigError(f"{section}.{key}: expected a list of numbers, got {raw!r}") from None

    def _convert(self, section, key, kind):
        raw = self._p.get(section, key)
        try:
            return int(raw, 0) if kind is int else float(raw)
        except ValueError:
            raise ConfigError(f"{section}.{key}: expected {kind.__name__}, got {raw!r}") from None

    def validate(self):
        for (sec, key), (kind, lo, hi) in RANGES.items():
            v = self._convert(sec, key, kind)
            if not (lo <= v <= hi) or (kind is float and not np.isfinite(v)):
                raise ConfigError(f"{sec}.{key} = {v} outside [{lo}, {hi}]")
        for sec, key in LISTS:
            if not self.getlist(sec, key):
                raise ConfigError(f"{sec}.{key} must not be empty")
        center = self.getlist("tau", "center")
        if len(center) != 4 or abs(center[0] * center[3] - center[1] * center[2] - 1) > 1e-9:
            raise ConfigError("tau.center must be four entries of a determinant-one matrix")
        if any(t <= 0 for t in self.getlist("correlate", "gaps")):
            raise ConfigError("correlate.gaps must be positive")
        for sec in ("correlate", "vdc"):
            if self.raw(sec, "observable") not in ("bump", "constant"):
                raise ConfigError(f"{sec}.observable must be 'bump' or 'constant'")
        if any(not 0 <= b <= 2 for b in self.getlist("l2avg", "bumps", int)):
            raise ConfigError("l2avg.bumps picks among bumps 0, 1, 2")

    # -- builders -------------------------------------------------------------

    @property
    def seed(self):
        return self.get("run", "seed")

    @property
    def beta(self):
        return self.get("model", "beta")

    def lattice(self):
        return Lattice(self.get("lattice", "ball_cap"), self.get("lattice", "maxit"))

    def sampler(self, seed=None, index=None):
        s = HaarSampler(self.seed if seed is None else seed,
                        acceptance_floor=self.get("lattice", "acceptance_floor"))
        return s if index is None else s.spawn(index)

    def tau(self):
        c = self.get("tau", "c")
        if c == 0:
            return constant_tau()
        bump = BumpObservable(np.reshape(self.getlist("tau", "center"), (2, 2)),
                              self.get("tau", "radius"), self.get("tau", "amplitude"),
                              self.get("tau", "ball_radius"))
        # the normalizer has its own stream so that it does not move with --seed
        return make_tau(bump, c, self.get("tau", "normalizer_samples"), HaarSampler(7).spawn(0))

    def clock(self, tau=None):
        from .timechange import FlowClock
        return FlowClock(self.tau() if tau is None else tau, self.get("flow", "step_init"),
                         self.get("flow", "tol"), self.get("flow", "max_steps"),
                         self.get("flow", "horizon"), self.lattice())

    def bumps(self, experiment=False):
        sec = "experiment_observables" if experiment else "observables"
        return [BumpObservable(c, self.get(sec, "radius"), self.get("observables", "amplitude"),
                               self.get(sec, "ball_radius")) for c in DEFAULT_CENTERS]

    def zero_mean_family(self, tau=None, experiment=False):
        """The bumps minus their ``mu^tau`` means."""
        n = self.get("observables", "mean_samples")
        return [zero_mean(b, n, HaarSampler(7).spawn(1 + i), tau)[0]
                for i, b in enumerate(self.bumps(experiment))]


def _apply_override(p, item):
    body = item[2:] if item.startswith("--") else item
    name, sep, val = body.partition("=")
    sec, dot, key = name.partition(".")
    if not sep or not dot:
        raise ConfigError(f"override {item!r} is not --section.key=value")
    if not p.has_option(sec, key):
        raise ConfigError(f"unknown key {sec}.{key}")
    p.set(sec, key, val.strip())

