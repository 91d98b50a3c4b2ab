"""Scenario files: strict YAML descriptions of a system, gains, and a run.

Keys carry explicit units where the quantity has one (``psi_deg``,
``t_end_s``); generalized coordinates are plain ``q_u``/``q_a`` in radians
and meters for the cart-pendulum builtin.  Unknown keys are rejected so a
typo cannot silently fall back to a default.
"""

from __future__ import annotations

import importlib
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import yaml

from .mechanics import MechanicalSystem
from .controller import Gains
from .sim import SetpointStep
from . import systems


class ScenarioError(ValueError):
    """Malformed scenario file."""


def _require_keys(section: dict, allowed: set, name: str):
    unknown = set(section) - allowed
    if unknown:
        raise ScenarioError(f"unknown keys in [{name}]: {sorted(unknown)}; "
                            f"allowed: {sorted(allowed)}")


def _vec(value, length: int, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float).reshape(-1)
    if arr.size != length:
        raise ScenarioError(f"{name} must have {length} entries, got {arr.size}")
    return arr


@dataclass
class Scenario:
    label: str
    system: MechanicalSystem
    gains: Gains
    q0: np.ndarray
    qd0: np.ndarray
    t_end: float
    dt: float
    controller: str
    setpoints: list
    disturbance: Optional[Callable[[float], np.ndarray]]
    check_box: np.ndarray          # (n, 2) sampling box for assumption checks
    check_samples: int
    seed: int
    gate_grid: np.ndarray          # q_u grid for the A5/A7 scans
    final_target: np.ndarray = field(init=False)

    def __post_init__(self):
        g = self.gains
        q_u_star, q_a_star = g.q_u_star, g.q_a_star
        for sp in self.setpoints:
            q_a_star = np.asarray(sp.q_a_star, dtype=float)
            if sp.q_u_star is not None:
                q_u_star = np.asarray(sp.q_u_star, dtype=float)
        self.final_target = np.concatenate([q_u_star, q_a_star])


_SYSTEM_KEYS = {
    "cart_pendulum_incline": {"kind", "pendulum_mass_kg", "cart_mass_kg",
                              "pendulum_length_m", "psi_deg", "gravity_mps2"},
    "linear_chain": {"kind", "inertia", "stiffness_unactuated", "stiffness_actuated"},
    "custom": {"kind", "factory"},
}


def _build_system(section: dict) -> MechanicalSystem:
    kind = section.get("kind")
    if kind not in _SYSTEM_KEYS:
        raise ScenarioError(f"system.kind must be one of {sorted(_SYSTEM_KEYS)}, got {kind!r}")
    _require_keys(section, _SYSTEM_KEYS[kind], "system")
    if kind == "cart_pendulum_incline":
        return systems.cart_pendulum_incline(
            pendulum_mass=float(section.get("pendulum_mass_kg", 0.14)),
            cart_mass=float(section.get("cart_mass_kg", 0.44)),
            length=float(section.get("pendulum_length_m", 0.215)),
            psi=np.deg2rad(float(section.get("psi_deg", 20.0))),
            gravity=float(section.get("gravity_mps2", systems.GRAVITY)),
        )
    if kind == "linear_chain":
        M = section.get("inertia", [[2.0, 1.0], [1.0, 1.0]])
        S_u = section.get("stiffness_unactuated", [[1.0]])
        S_a = section.get("stiffness_actuated")
        return systems.linear_system(M, S_u, S_a, name="linear-chain")
    spec = section.get("factory")
    if not spec or ":" not in spec:
        raise ScenarioError("custom system needs factory: \"module:callable\"")
    mod_name, fn_name = spec.split(":", 1)
    factory = getattr(importlib.import_module(mod_name), fn_name)
    sys_ = factory()
    if not isinstance(sys_, MechanicalSystem):
        raise ScenarioError(f"factory {spec} did not return a MechanicalSystem")
    return sys_


def _build_disturbance(section: Optional[dict], m: int):
    if section is None:
        return None
    _require_keys(section, {"kind", "amplitude", "frequency_hz", "phase_rad"}, "disturbance")
    kind = section.get("kind", "none")
    if kind == "none":
        return None
    if kind != "sinusoid":
        raise ScenarioError(f"disturbance.kind must be 'none' or 'sinusoid', got {kind!r}")
    amp = _vec(section.get("amplitude", np.zeros(m)), m, "disturbance.amplitude")
    freq = float(section.get("frequency_hz", 1.0))
    phase = float(section.get("phase_rad", 0.0))
    omega = 2.0 * np.pi * freq
    return lambda t: amp * np.sin(omega * t + phase)


_TOP_KEYS = {"label", "system", "gains", "initial", "target", "run",
             "disturbance", "check"}
_GAIN_KEYS = {"k_e", "k_a", "k_u", "K_P", "K_I", "K_D", "mode",
              "filter_a", "filter_b"}
_INITIAL_KEYS = {"q_u", "q_a", "qd_u", "qd_a"}
_TARGET_KEYS = {"q_u", "q_a", "steps"}
_RUN_KEYS = {"t_end_s", "dt_s", "controller"}
_CHECK_KEYS = {"q_u_box", "q_a_box", "samples", "seed", "gate_pad", "gate_points",
               "gate_grid"}


def scenario_from_dict(doc: dict) -> Scenario:
    if not isinstance(doc, dict):
        raise ScenarioError("scenario document must be a mapping")
    _require_keys(doc, _TOP_KEYS, "scenario")
    if "system" not in doc or "gains" not in doc:
        raise ScenarioError("scenario needs [system] and [gains] sections")

    sys_ = _build_system(dict(doc["system"]))
    s, m = sys_.s, sys_.m

    gsec = dict(doc["gains"])
    _require_keys(gsec, _GAIN_KEYS, "gains")
    for key in ("k_e", "k_a", "k_u", "K_P", "K_I"):
        if key not in gsec:
            raise ScenarioError(f"gains.{key} is required")

    tsec = dict(doc.get("target", {}))
    _require_keys(tsec, _TARGET_KEYS, "target")
    q_u_star = _vec(tsec.get("q_u", np.zeros(s)), s, "target.q_u")
    q_a_star = _vec(tsec.get("q_a", np.zeros(m)), m, "target.q_a")

    gains = Gains(
        k_e=float(gsec["k_e"]), k_a=float(gsec["k_a"]), k_u=float(gsec["k_u"]),
        K_P=gsec["K_P"], K_I=gsec["K_I"], K_D=gsec.get("K_D", 0.0),
        q_u_star=q_u_star, q_a_star=q_a_star,
        mode=gsec.get("mode", "cancel_Va"),
        filter_a=float(gsec.get("filter_a", 200.0)),
        filter_b=float(gsec.get("filter_b", 200.0)),
    )

    isec = dict(doc.get("initial", {}))
    _require_keys(isec, _INITIAL_KEYS, "initial")
    q0 = np.concatenate([_vec(isec.get("q_u", np.zeros(s)), s, "initial.q_u"),
                         _vec(isec.get("q_a", np.zeros(m)), m, "initial.q_a")])
    qd0 = np.concatenate([_vec(isec.get("qd_u", np.zeros(s)), s, "initial.qd_u"),
                          _vec(isec.get("qd_a", np.zeros(m)), m, "initial.qd_a")])

    setpoints = []
    for step in tsec.get("steps", []) or []:
        step = dict(step)
        _require_keys(step, {"t_s", "q_a", "q_u"}, "target.steps[]")
        if "t_s" not in step or "q_a" not in step:
            raise ScenarioError("each target step needs t_s and q_a")
        setpoints.append(SetpointStep(
            t=float(step["t_s"]),
            q_a_star=_vec(step["q_a"], m, "target.steps[].q_a"),
            q_u_star=None if "q_u" not in step else _vec(step["q_u"], s, "target.steps[].q_u"),
        ))

    rsec = dict(doc.get("run", {}))
    _require_keys(rsec, _RUN_KEYS, "run")
    t_end = float(rsec.get("t_end_s", 10.0))
    dt = float(rsec.get("dt_s", 1e-3))
    controller = rsec.get("controller", "exact")

    csec = dict(doc.get("check", {}))
    _require_keys(csec, _CHECK_KEYS, "check")
    qu_box = np.asarray(csec.get("q_u_box", [[-1.0, 1.0]] * s), dtype=float).reshape(s, 2)
    qa_box = np.asarray(csec.get("q_a_box", [[-1.0, 1.0]] * m), dtype=float).reshape(m, 2)
    check_box = np.vstack([qu_box, qa_box])
    samples = int(csec.get("samples", 400))
    seed = int(csec.get("seed", 0))

    # A5/A7 gate grid: either explicit, or the hull of the initial and target
    # unactuated positions padded outward (gain certificates are checked where
    # the run is expected to live, not on an arbitrary symmetric box)
    points = int(csec.get("gate_points", 121))
    if "gate_grid" in csec:
        bounds = np.asarray(csec["gate_grid"], dtype=float).reshape(s, 2)
    else:
        pad = float(csec.get("gate_pad", 0.2618))
        anchors = [q0[:s], q_u_star]
        anchors += [sp.q_u_star for sp in setpoints if sp.q_u_star is not None]
        anchors = np.stack(anchors)
        bounds = np.stack([anchors.min(axis=0) - pad, anchors.max(axis=0) + pad], axis=1)
    axes = [np.linspace(lo, hi, points) for lo, hi in bounds]
    if s == 1:
        gate_grid = axes[0].reshape(-1, 1)
    else:
        mesh = np.meshgrid(*axes, indexing="ij")
        gate_grid = np.stack([ax.ravel() for ax in mesh], axis=1)

    return Scenario(
        label=str(doc.get("label", "scenario")),
        system=sys_, gains=gains, q0=q0, qd0=qd0,
        t_end=t_end, dt=dt, controller=controller,
        setpoints=setpoints,
        disturbance=_build_disturbance(doc.get("disturbance"), m),
        check_box=check_box, check_samples=samples, seed=seed,
        gate_grid=gate_grid,
    )


def load_scenario(path) -> Scenario:
    with open(path) as fh:
        doc = yaml.safe_load(fh)
    return scenario_from_dict(doc)


# ---------------------------------------------------------------------------
# Pinned builtin scenarios
# ---------------------------------------------------------------------------

def builtin_scenario(name: str) -> dict:
    """Pinned scenario documents for the bundled examples."""
    if name in ("cart_pendulum", "cart_pendulum_ku450"):
        doc = {
            "label": name,
            "system": {"kind": "cart_pendulum_incline", "pendulum_mass_kg": 0.14,
                       "cart_mass_kg": 0.44, "pendulum_length_m": 0.215,
                       "psi_deg": 20.0, "gravity_mps2": 9.81},
            "gains": {"k_e": 5.0, "k_a": 50.0, "k_u": -500.0,
                      "K_P": 1.0, "K_I": 2.0, "K_D": 0.1, "mode": "cancel_Va"},
            "initial": {"q_u": [float(np.deg2rad(20.0))], "q_a": [-0.6]},
            "target": {"q_u": [0.0], "q_a": [0.0],
                       "steps": [{"t_s": 5.0, "q_a": [-0.3]}]},
            "run": {"t_end_s": 10.0, "dt_s": 1e-3, "controller": "exact"},
            "check": {"q_u_box": [[-1.0471975511965976, 1.0471975511965976]],
                      "q_a_box": [[-1.0, 1.0]], "samples": 400, "seed": 0},
        }
        if name == "cart_pendulum_ku450":
            doc["gains"]["k_u"] = -450.0
        return doc
    if name == "linear":
        return {
            "label": "linear",
            "system": {"kind": "linear_chain", "inertia": [[2.0, 1.0], [1.0, 1.0]],
                       "stiffness_unactuated": [[1.0]], "stiffness_actuated": [[0.0]]},
            "gains": {"k_e": 2.0, "k_a": 0.75, "k_u": 0.25,
                      "K_P": 2.0, "K_I": 1.5, "K_D": 0.3},
            "initial": {"q_u": [0.4], "q_a": [-0.3]},
            "target": {"q_u": [0.0], "q_a": [0.0]},
            "run": {"t_end_s": 60.0, "dt_s": 5e-3, "controller": "exact"},
            "check": {"q_u_box": [[-1.0, 1.0]], "q_a_box": [[-1.0, 1.0]],
                      "samples": 400, "seed": 0},
        }
    raise ScenarioError(f"unknown builtin scenario {name!r}; "
                        "options: cart_pendulum, cart_pendulum_ku450, linear")


def builtin(name: str) -> Scenario:
    return scenario_from_dict(builtin_scenario(name))
