"""Flat ``key=value`` experiment configuration.

Keys carry a section prefix (``model.``, ``grid.``, ``tilt.``, ``samples.``,
``constants.``, ``zvonkin.``, ``concentration.``, ``report.``, ``run.``).
Lines starting with ``#`` and blank lines are ignored.  Overrides may use any
unambiguous suffix of a key, e.g. ``T=0`` for ``grid.T``.
"""

from dataclasses import dataclass, field

__all__ = ["ConfigError", "ExperimentConfig", "DEFAULTS", "parse_config", "load_config"]


class ConfigError(ValueError):
    pass


def _floats(text):
    return tuple(float(v) for v in str(text).replace(" ", "").split(",") if v != "")


def _ints(text):
    return tuple(int(v) for v in str(text).replace(" ", "").split(",") if v != "")


def _bool(text):
    v = str(text).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# key -> (parser, default)
DEFAULTS = {
    "experiment.id": (str, "run"),
    "model.name": (str, "driftless"),
    "model.dim": (int, 1),
    "model.particles": (int, 5),
    "model.x0": (_floats, (0.0,)),
    "model.sigma": (float, 1.0),
    "model.drift_scale": (float, 1.0),
    "model.regime_in": (float, -1.0),
    "model.regime_out": (float, 0.5),
    "model.threshold": (float, 0.0),
    "model.deltas": (_floats, (1.0, 0.5, 0.0, -0.5, -1.0)),
    "model.delta": (float, 1.0),
    "model.perm": (_ints, ()),
    "model.alpha": (float, 0.5),
    "model.kappa": (float, 1.0),
    "grid.T": (float, 0.5),
    "grid.n": (int, 1000),
    "tilt.kind": (str, "constant"),
    "tilt.c": (_floats, (1.0,)),
    "tilt.scale": (float, 1.0),
    "samples.N": (int, 10_000),
    "samples.B": (int, 512),
    "samples.R": (int, 8),
    "constants.C_bdg": (float, 2.0),
    "constants.eps_min": (float, 1e-3),
    "constants.sigma_sup": (float, 0.0),
    "zvonkin.enabled": (_bool, False),
    "zvonkin.L": (float, 6.0),
    "zvonkin.h": (float, 0.01),
    "zvonkin.C_b": (float, 0.5),
    "zvonkin.n": (int, 500),
    "zvonkin.boundary_layer": (float, 1.0),
    "zvonkin.case": (str, "B"),
    "zvonkin.max_rounds": (int, 10),
    "zvonkin.n_paths": (int, 100_000),
    "zvonkin.blocks": (int, 10),
    "zvonkin.pairs": (int, 10_000),
    "concentration.functional": (str, "terminal"),
    "concentration.coord": (int, 0),
    "concentration.r": (_floats, (0.5, 1.0, 1.5, 2.0)),
    "concentration.samples": (int, 100_000),
    "report.out": (str, "out"),
    "report.paths": (int, 10),
    "run.seed": (int, 0),
}

MODELS = ("driftless", "sgn", "regime", "rank", "atlas", "quantile")
TILTS = ("zero", "constant", "time", "path")


def _format(value):
    if isinstance(value, tuple):
        return ",".join(_format(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def resolve_key(key):
    key = key.strip()
    if key in DEFAULTS:
        return key
    hits = [k for k in DEFAULTS if k.endswith("." + key)]
    if len(hits) == 1:
        return hits[0]
    if not hits:
        raise ConfigError(f"unknown configuration key {key!r}")
    raise ConfigError(f"ambiguous key {key!r}: matches {', '.join(sorted(hits))}")


@dataclass
class ExperimentConfig:
    values: dict = field(default_factory=lambda: {k: d for k, (_, d) in DEFAULTS.items()})

    def __getitem__(self, key):
        return self.values[resolve_key(key)]

    def set(self, key, raw):
        key = resolve_key(key)
        parser = DEFAULTS[key][0]
        try:
            self.values[key] = parser(raw) if isinstance(raw, str) else raw
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {raw!r} ({exc})") from None
        return self

    def override(self, pairs):
        for item in pairs:
            if "=" not in item:
                raise ConfigError(f"override must look like key=value, got {item!r}")
            k, v = item.split("=", 1)
            self.set(k, v)
        self.validate()
        return self

    def copy(self):
        return ExperimentConfig(dict(self.values))

    def validate(self):
        v = self.values
        if v["model.name"] not in MODELS:
            raise ConfigError(f"model.name must be one of {MODELS}")
        if v["tilt.kind"] not in TILTS:
            raise ConfigError(f"tilt.kind must be one of {TILTS}")
        if v["grid.T"] < 0 or v["grid.n"] < 1:
            raise ConfigError("need grid.T >= 0 and grid.n >= 1")
        if v["model.sigma"] <= 0:
            raise ConfigError("model.sigma must be positive")
        if v["model.dim"] < 1 or v["model.particles"] < 1:
            raise ConfigError("dimensions must be positive")
        if not 0 <= v["model.alpha"] <= 1:
            raise ConfigError("model.alpha must lie in [0, 1]")
        if v["samples.B"] < 1 or v["samples.R"] < 2 or v["samples.N"] < v["samples.B"] * v["samples.R"]:
            raise ConfigError("need samples.B >= 1, samples.R >= 2 and samples.N >= B * R")
        if v["constants.C_bdg"] <= 0 or not 0 < v["constants.eps_min"] < 0.5:
            raise ConfigError("need constants.C_bdg > 0 and 0 < constants.eps_min < 1/2")
        if v["zvonkin.case"] not in ("A", "B"):
            raise ConfigError("zvonkin.case must be A or B")
        if v["zvonkin.n"] < v["zvonkin.blocks"] or v["zvonkin.n"] % v["zvonkin.blocks"]:
            raise ConfigError("zvonkin.n must be a positive multiple of zvonkin.blocks")
        if v["zvonkin.h"] <= 0 or v["zvonkin.L"] <= v["zvonkin.boundary_layer"]:
            raise ConfigError("need zvonkin.h > 0 and zvonkin.L > zvonkin.boundary_layer")
        if not 0 <= v["run.seed"] < 2**64:
            raise ConfigError("run.seed must be an unsigned 64-bit integer")
        return self

    def dumps(self):
        """Canonical text form; ``parse_config(cfg.dumps())`` reproduces ``cfg``."""
        return "".join(f"{k}={_format(self.values[k])}\n" for k in sorted(self.values))


def parse_config(text):
    cfg = ExperimentConfig()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        k, v = line.split("=", 1)
        cfg.set(k.strip(), v.strip())
    return cfg.validate()


def load_config(path):
    try:
        with open(path) as fh:
            return parse_config(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
