"""Named models and tilt families resolved from a config."""

import math
from dataclasses import dataclass

import numpy as np

from ..girsanov import constant_tilt, path_tilt, time_tilt
from ..particles import (QuantileModelSpec, RankModelSpec, atlas_drift_field,
                         quantile_drift_field, rank_drift_field)
from ..sde import (DiffusionField, DriftField, diagonal_time_diffusion, identity_diffusion,
                   regime_switching_drift, sign_drift, zero_drift)
from .config import ConfigError

PARTICLE_MODELS = ("rank", "atlas", "quantile")


@dataclass
class Model:
    name: str
    drift: DriftField
    diffusion: DiffusionField
    x0: np.ndarray

    @property
    def dim(self):
        return self.drift.dim

    @property
    def sigma_sup(self):
        return self.diffusion.sup_bound


def _x0(cfg, d):
    x0 = np.asarray(cfg["model.x0"], dtype=float)
    if x0.size == 1:
        return np.full(d, float(x0[0]))
    if x0.size != d:
        raise ConfigError(f"model.x0 has {x0.size} entries, model dimension is {d}")
    return x0


def _particle_sigma(n, sigma):
    # time-dependent diagonal coefficients in [0.75 sigma, 1.25 sigma]
    phase = np.arange(n, dtype=float)

    def rule(t):
        return sigma * (1.0 + 0.25 * np.sin(2.0 * math.pi * t + phase))
    return rule, 0.75 * sigma, 1.25 * sigma


def build_model(cfg):
    name = cfg["model.name"]
    sigma = cfg["model.sigma"]
    if name in PARTICLE_MODELS:
        n = cfg["model.particles"]
        if name == "quantile":
            kappa = cfg["model.kappa"]
            spec = QuantileModelSpec(n, cfg["model.alpha"],
                                     lambda t, x, v: kappa * np.sign(v - x), b_sup=abs(kappa))
            drift = quantile_drift_field(spec)
            diff = identity_diffusion(n, sigma)
        else:
            rule, lo, hi = _particle_sigma(n, sigma)
            perm = cfg["model.perm"] or tuple(range(n))
            if len(perm) != n:
                raise ConfigError(f"model.perm must list {n} ranks")
            if name == "rank":
                if len(cfg["model.deltas"]) != n:
                    raise ConfigError(f"model.deltas must have {n} entries")
                spec = RankModelSpec(n, deltas=cfg["model.deltas"])
                drift = rank_drift_field(spec)
            else:
                spec = RankModelSpec(n, delta=cfg["model.delta"], perm=perm)
                drift = atlas_drift_field(spec)
            diff = diagonal_time_diffusion(rule, n, lo, hi)
        default_x0 = np.linspace(-1.0, 1.0, n) if n > 1 else np.zeros(1)
        x0 = default_x0 if cfg["model.x0"] == (0.0,) else _x0(cfg, n)
        return Model(name, drift, diff, x0)

    if name == "regime":
        d = 1
        thr = cfg["model.threshold"]
        b_in, b_out = cfg["model.regime_in"], cfg["model.regime_out"]
        drift = regime_switching_drift(
            lambda t, x: np.full_like(x, b_in),
            lambda t, x: b_out * np.cos(2.0 * math.pi * t) * np.ones_like(x),
            lambda x: x[:, 0] >= thr, d, max(abs(b_in), abs(b_out)))
    else:
        d = cfg["model.dim"]
        drift = zero_drift(d) if name == "driftless" else sign_drift(d, cfg["model.drift_scale"])
    return Model(name, drift, identity_diffusion(d, sigma), _x0(cfg, d))


def build_tilt(cfg, d):
    kind = cfg["tilt.kind"]
    c = np.asarray(cfg["tilt.c"], dtype=float)
    if c.size == 1:
        c = np.full(d, float(c[0]))
    if c.size != d:
        raise ConfigError(f"tilt.c has {c.size} entries, model dimension is {d}")
    if kind == "zero":
        return constant_tilt(np.zeros(d))
    if kind == "constant":
        return constant_tilt(c)
    if kind == "time":
        T = cfg["grid.T"]
        return time_tilt(lambda t: c * (t / T if T > 0 else 0.0), d,
                         float(np.linalg.norm(c)), name="linear-ramp")
    return path_tilt(c, cfg["tilt.scale"])
