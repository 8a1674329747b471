"""Named parameter presets and config-dict model/event construction.

The three shipped presets reproduce the desk-scale experiment setups:

* ``heston-t1``   — Heston tail probability P(S_T > log 1.08), T = 1/12,
                    dt = 1/120 (10 steps), mu=0.02, kappa=3, alpha=0.015,
                    sigma=0.25, rho=0.05.
* ``sird-t2``     — SIRD overflow P(tau_c <= 100) with (alpha, beta, gamma) =
                    (0.319, 0.1, 0.00147), N0 = 5e6, I0 = 100, c = 0.3325 N0.
* ``vargarch-t3`` — three-institution VAR-GARCH joint event
                    {S^1_T <= -0.25, tau^0_{-0.15} <= T}, T = 5.

Models can also be specified inline in experiment files; matrices are given
as row-major lists.
"""

from __future__ import annotations

import math

import numpy as np

from .core.chain import FiniteChainSpec, GaussianIncrements, LatticeIncrements, build_finite_chain
from .core.events import (
    EventSpec,
    FirstPassageBeforeT,
    FixedTimeThreshold,
    JointPassageAndTerminal,
)
from .errors import ValidationError
from .models.heston import HestonParams, build_heston
from .models.sird import SirdParams, build_sird
from .models.vargarch import VarGarchParams, build_var_garch

__all__ = ["PRESETS", "get_preset", "build_model", "build_event", "event_to_dict"]


def _mat3(rows):
    m = np.asarray(rows, dtype=float).reshape(3, 3)
    return m


_VG_SCALE = 1.0 / 360.0

PRESETS = {
    "heston-t1": {
        "model": {
            "type": "heston",
            "mu": 0.02,
            "kappa": 3.0,
            "alpha": 0.015,
            "sigma": 0.25,
            "rho": 0.05,
            "dt": 1.0 / 120.0,
        },
        "event": {
            "kind": "fixed_time",
            "n": 10,
            "component": 0,
            "threshold": math.log(1.08),
            "direction": "above",
        },
    },
    "sird-t2": {
        "model": {
            "type": "sird",
            "alpha": 0.319,
            "beta": 0.1,
            "gamma": 0.00147,
            "n0": 5.0e6,
            "i0": 100.0,
            "dt": 1.0,
            "barrier": 0.3325 * 5.0e6,
            "horizon": 100,
        },
        "event": {
            "kind": "first_passage",
            "component": 1,
            "barrier": 0.3325 * 5.0e6,
            "horizon": 100,
            "direction": "above",
        },
    },
    "vargarch-t3": {
        "model": {
            "type": "var_garch",
            "mu": [0.0, 0.0, 0.0],
            "rho": (_VG_SCALE * _mat3([[0.3, 0.05, 0.1], [0.1, 0.2, 0.3], [0.1, 0.3, 0.2]])).reshape(-1).tolist(),
            "w": (_VG_SCALE * _mat3([[0.2, 0.1, 0.01], [0.1, 0.4, 0.0], [0.01, 0.0, 0.9]])).reshape(-1).tolist(),
            "a": (_VG_SCALE * _mat3([[0.0815, 0.091, 0.0203], [0.091, 0.0632, 0.0322], [0.0203, 0.0322, 0.0958]])).reshape(-1).tolist(),
            "b": (_VG_SCALE * _mat3([[0.193, 0.1115, 0.1112], [0.1115, 0.0971, 0.1222], [0.1112, 0.1222, 0.1831]])).reshape(-1).tolist(),
            "horizon": 5,
        },
        "event": {
            "kind": "joint",
            "passage": {
                "component": 0,
                "barrier": -0.15,
                "horizon": 5,
                "direction": "below",
            },
            "terminal_component": 1,
            "terminal_threshold": -0.25,
            "terminal_direction": "below",
        },
    },
}


def get_preset(name: str) -> dict:
    if name not in PRESETS:
        raise ValidationError(f"unknown preset {name!r}; available: {sorted(PRESETS)}")
    # deep-ish copy so callers can override entries
    import copy

    return copy.deepcopy(PRESETS[name])


def build_model(cfg: dict):
    """Construct a model from a flat parameter mapping ({"type": ..., ...})."""
    cfg = dict(cfg)
    kind = cfg.pop("type", None)
    if kind == "heston":
        return build_heston(HestonParams(**cfg))
    if kind == "sird":
        return build_sird(SirdParams(**cfg))
    if kind == "var_garch":
        return build_var_garch(
            VarGarchParams(
                mu=np.asarray(cfg["mu"], dtype=float),
                rho=_mat3(cfg["rho"]),
                w=_mat3(cfg["w"]),
                a=_mat3(cfg["a"]),
                b=_mat3(cfg["b"]),
                horizon=int(cfg.get("horizon", 5)),
            )
        )
    if kind == "finite_chain":
        K = int(cfg["n_states"])
        P = np.asarray(cfg["transition"], dtype=float).reshape(K, K)
        if "values" in cfg:
            vals = np.asarray(cfg["values"], dtype=float)
            probs = np.asarray(cfg["probs"], dtype=float)
            S = vals.size // (K * K)
            inc = LatticeIncrements(vals.reshape(K, K, S), probs.reshape(K, K, S))
        else:
            inc = GaussianIncrements(
                np.asarray(cfg["mean"], dtype=float).reshape(K, K),
                np.asarray(cfg["var"], dtype=float).reshape(K, K),
            )
        return build_finite_chain(FiniteChainSpec(P, inc))
    raise ValidationError(f"unknown model type {kind!r}")


def build_event(cfg: dict) -> EventSpec:
    kind = cfg.get("kind")
    if kind == "fixed_time":
        return FixedTimeThreshold(
            n=int(cfg["n"]),
            component=int(cfg.get("component", 0)),
            threshold=float(cfg["threshold"]),
            direction=cfg.get("direction", "above"),
        )
    if kind == "first_passage":
        return FirstPassageBeforeT(
            component=int(cfg.get("component", 0)),
            barrier=float(cfg["barrier"]),
            horizon=int(cfg["horizon"]),
            direction=cfg.get("direction", "above"),
        )
    if kind == "joint":
        return JointPassageAndTerminal(
            passage=build_event({"kind": "first_passage", **cfg["passage"]}),
            terminal_component=int(cfg["terminal_component"]),
            terminal_threshold=float(cfg["terminal_threshold"]),
            terminal_direction=cfg.get("terminal_direction", "below"),
        )
    raise ValidationError(f"unknown event kind {kind!r}")


def event_to_dict(event: EventSpec) -> dict:
    if isinstance(event, FixedTimeThreshold):
        return {
            "kind": "fixed_time",
            "n": event.n,
            "component": event.component,
            "threshold": event.threshold,
            "direction": event.direction,
        }
    if isinstance(event, FirstPassageBeforeT):
        return {
            "kind": "first_passage",
            "component": event.component,
            "barrier": event.barrier,
            "horizon": event.horizon,
            "direction": event.direction,
        }
    if isinstance(event, JointPassageAndTerminal):
        return {
            "kind": "joint",
            "passage": {
                "component": event.passage.component,
                "barrier": event.passage.barrier,
                "horizon": event.passage.horizon,
                "direction": event.passage.direction,
            },
            "terminal_component": event.terminal_component,
            "terminal_threshold": event.terminal_threshold,
            "terminal_direction": event.terminal_direction,
        }
    raise ValidationError(f"cannot serialize event {type(event).__name__}")
