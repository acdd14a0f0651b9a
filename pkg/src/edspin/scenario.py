"""Scenario files: loading, schema validation and construction of simulation objects."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import dynamics as dyn
from . import snapshot
from .errors import ConfigError
from .expressions import ExpressionError, evaluate, uses_name
from .field import PolarChart, SpinorField, amplitudes_from_polar
from .lattice import Constants, Lattice
from .trajectories import SGConfig, SubQuantumParams


def load_schema() -> dict:
    return json.loads(resources.files("edspin").joinpath("schema/scenario.json").read_text())


@dataclass(frozen=True)
class Scenario:
    """A validated scenario document plus the directory relative paths resolve against."""

    doc: dict
    base_dir: Path

    @property
    def name(self) -> str:
        return self.doc.get("name", "scenario")

    @property
    def seed(self) -> int:
        return int(self.doc.get("seed", 0))

    def with_seed(self, seed: int) -> "Scenario":
        return Scenario({**self.doc, "seed": int(seed)}, self.base_dir)

    @property
    def outputs(self) -> list:
        return list(self.doc.get("outputs", ["ledger", "report"]))

    def constants(self) -> Constants:
        return Constants(**self.doc.get("constants", {}))

    def lattice(self) -> Lattice:
        spec = self.doc["lattice"]
        return Lattice(tuple(spec["points"]), tuple(spec["extents"]), spec.get("directions"))

    def environment(self, lattice: Lattice, t: float = 0.0) -> dict:
        k = self.constants()
        pos = lattice.positions()
        env = {"x": pos[0], "y": pos[1], "z": pos[2], "r": np.sqrt(np.sum(pos**2, axis=0)), "t": t}
        env.update(hbar=k.hbar, m=k.m, c=k.c, q=k.q)
        env.update(self.doc.get("parameters", {}))
        return env

    # state -------------------------------------------------------------

    def initial_state(self) -> SpinorField:
        lat = self.lattice()
        spec = self.doc.get("state", {"type": "gaussian"})
        env = self.environment(lat)
        kind = spec["type"]
        k = self.constants()
        if kind == "polar":
            parts = {name: np.broadcast_to(np.real(evaluate(spec.get(name, default), env)), lat.shape)
                     for name, default in (("rho", 1.0), ("Phi", 0.0), ("theta", 0.0), ("phi", 0.0))}
            field = amplitudes_from_polar(PolarChart(lat, parts["rho"], parts["Phi"], parts["theta"], parts["phi"], hbar=k.hbar))
        elif kind == "amplitudes":
            plus = np.broadcast_to(evaluate(spec["plus"], env), lat.shape)
            minus = np.broadcast_to(evaluate(spec["minus"], env), lat.shape)
            field = SpinorField(lat, np.stack([plus, minus]))
        elif kind == "gaussian":
            field = _gaussian(lat, spec, k)
        elif kind == "snapshot":
            field = snapshot.read_snapshot(self.base_dir / spec["path"], lat.directions)
            lat.require_same(field.lattice)
        elif kind == "ground_state":
            potential = np.broadcast_to(np.real(evaluate(spec["potential"], env)), lat.shape)
            _, amp = dyn.scalar_ground_state(lat, potential, k)
            theta, phi = spec.get("theta", 0.0), spec.get("phi", 0.0)
            field = SpinorField(
                lat, np.stack([np.cos(theta / 2) * np.exp(-0.5j * phi) * amp, np.sin(theta / 2) * np.exp(0.5j * phi) * amp])
            )
            return field
        else:
            raise ConfigError("unknown state type", [("/state/type", kind)])
        if spec.get("normalize", True):
            field = field.normalized()
        return field

    # fields ------------------------------------------------------------

    def _fields_at(self, lat: Lattice, t: float) -> dyn.ExternalFields:
        spec = self.doc.get("fields", {})
        env = self.environment(lat, t)

        def scalar(value):
            return None if value is None else np.broadcast_to(np.real(evaluate(value, env)), lat.shape)

        def vector(value):
            if value is None:
                return None
            return np.stack([np.broadcast_to(np.real(evaluate(v, env)), lat.shape) for v in value])

        return dyn.ExternalFields(
            lat,
            V=scalar(spec.get("V")),
            A=vector(spec.get("A")),
            B=vector(spec.get("B")),
            E=vector(spec.get("E")),
            kappa_m=float(spec.get("kappa_m", 0.0)),
            kappa_e=float(spec.get("kappa_e", 0.0)),
            constants=self.constants(),
            derivative=spec.get("derivative", "central"),
            mismatch_rtol=float(spec.get("mismatch_rtol", 1e-2)),
        )

    def time_dependent(self) -> bool:
        spec = self.doc.get("fields", {})
        values = [spec.get("V")] + [v for key in ("A", "B", "E") for v in (spec.get(key) or [])]
        return any(v is not None and uses_name(v, "t") for v in values)

    def fields(self):
        """Fixed :class:`ExternalFields`, or a callable of time when any expression uses ``t``."""
        lat = self.lattice()
        if not self.time_dependent():
            return self._fields_at(lat, 0.0)
        cache = {}

        def at(t):
            if t not in cache:
                cache.clear()
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    cache[t] = self._fields_at(lat, t)
            return cache[t]

        self._fields_at(lat, self.t_span()[0])  # surface warnings once
        return at

    # integrators -------------------------------------------------------

    def evolver_config(self) -> dyn.EvolverConfig:
        spec = {k: v for k, v in self.doc["evolver"].items() if k not in ("t_start", "t_end")}
        return dyn.EvolverConfig(**spec)

    def t_span(self) -> tuple:
        spec = self.doc["evolver"]
        return float(spec.get("t_start", 0.0)), float(spec["t_end"])

    def ensemble_spec(self) -> dict:
        return dict(self.doc.get("ensemble", {"particles": 1000}))

    def subquantum(self) -> SubQuantumParams | None:
        spec = self.ensemble_spec().get("subquantum")
        if spec is None:
            return None
        k = self.constants()
        dt = spec.get("dt_sub", self.doc["evolver"]["dt"])
        return SubQuantumParams(
            eta=spec.get("eta", k.hbar), dt_sub=dt, m=k.m, hbar=k.hbar, q=k.q, c=k.c, gamma=spec.get("gamma", 0.5)
        )

    def sg_config(self) -> tuple:
        spec = dict(self.doc.get("sg", {}))
        particles = int(spec.pop("particles", 10000))
        return SGConfig(constants=self.constants(), **spec), particles


def _gaussian(lat: Lattice, spec: dict, k: Constants) -> SpinorField:
    dim = lat.dim
    center = np.asarray(spec.get("center", [0.0] * dim), dtype=float)
    momentum = np.asarray(spec.get("momentum", [0.0] * dim), dtype=float)
    width = float(spec.get("width", 1.0))
    grids = lat.grid()
    envelope = np.ones(lat.shape, dtype=complex)
    for axis in range(dim):
        d = grids[axis] - center[axis]
        envelope *= np.exp(-(d**2) / (4 * width**2) + 1j * momentum[axis] * grids[axis] / k.hbar)
    theta, phi = spec.get("theta", 0.0), spec.get("phi", 0.0)
    psi = np.stack([np.cos(theta / 2) * np.exp(-0.5j * phi) * envelope, np.sin(theta / 2) * np.exp(0.5j * phi) * envelope])
    return SpinorField(lat, psi)


# loading and validation -------------------------------------------------------


def _schema_diagnostics(doc) -> list:
    validator = jsonschema.Draft202012Validator(load_schema())
    out = []
    for err in sorted(validator.iter_errors(doc), key=lambda e: list(map(str, e.absolute_path))):
        path = "/" + "/".join(str(p) for p in err.absolute_path)
        out.append((path, err.message))
    return out


def _cross_reference_diagnostics(scenario: Scenario, command: str) -> list:
    doc = scenario.doc
    out = []
    needs_lattice = command in ("evolve", "trajectories")
    if needs_lattice:
        for key in ("lattice", "evolver"):
            if key not in doc:
                out.append((f"/{key}", f"required by the {command} command"))
    if out:
        return out
    if "lattice" in doc:
        spec = doc["lattice"]
        dim = len(spec["points"])
        if len(spec["extents"]) != dim:
            out.append(("/lattice/extents", f"expected {dim} entries to match points"))
        if "directions" in spec and (len(spec["directions"]) != dim or len(set(spec["directions"])) != dim):
            out.append(("/lattice/directions", f"expected {dim} distinct entries"))
        state = doc.get("state", {})
        for key in ("center", "momentum"):
            if key in state and len(state[key]) != dim:
                out.append((f"/state/{key}", f"expected {dim} entries to match the lattice"))
        if out:
            return out
        lat = scenario.lattice()
        env = scenario.environment(lat)
        exprs = []
        for key in ("rho", "Phi", "theta", "phi", "plus", "minus", "potential"):
            if key in state:
                exprs.append((f"/state/{key}", state[key]))
        fields = doc.get("fields", {})
        if "V" in fields:
            exprs.append(("/fields/V", fields["V"]))
        for key in ("A", "B", "E"):
            for i, v in enumerate(fields.get(key, [])):
                exprs.append((f"/fields/{key}/{i}", v))
        for path, text in exprs:
            try:
                value = np.asarray(evaluate(text, env))
                np.broadcast_to(value, lat.shape)
            except ExpressionError as exc:
                out.append((path, str(exc)))
            except ValueError as exc:
                out.append((path, f"does not fit the lattice: {exc}"))
        if state.get("type") == "snapshot" and not (scenario.base_dir / state["path"]).exists():
            out.append(("/state/path", "file not found"))
    if "evolver" in doc:
        ev = doc["evolver"]
        t0 = ev.get("t_start", 0.0)
        span = ev["t_end"] - t0
        n = round(span / ev["dt"])
        if span < 0 or abs(n * ev["dt"] - span) > 1e-9 * max(1.0, abs(span)):
            out.append(("/evolver/t_end", "t_end - t_start must be a non-negative multiple of dt"))
    if doc.get("ensemble", {}).get("subquantum", {}).get("gamma", 0.5) != 0.5:
        out.append(("/ensemble/subquantum/gamma", "gamma is fixed at 1/2"))
    if command == "sg":
        try:
            cfg, _ = scenario.sg_config()
            cfg.validate()
        except (TypeError, ValueError) as exc:
            out.append(("/sg", str(exc)))
    return out


def load_scenario(source, command: str = "evolve") -> Scenario:
    """Read and validate a scenario file (or dict) for ``command``; raises :class:`ConfigError`."""
    if isinstance(source, dict):
        doc, base = source, Path.cwd()
    else:
        path = Path(source)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read {path}", [(str(path), exc.strerror or str(exc))]) from None
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path} is not valid JSON", [(f"line {exc.lineno} column {exc.colno}", exc.msg)]) from None
        base = path.parent
    diagnostics = _schema_diagnostics(doc)
    if diagnostics:
        raise ConfigError("scenario does not match the schema", diagnostics)
    scenario = Scenario(doc, base)
    diagnostics = _cross_reference_diagnostics(scenario, command)
    if diagnostics:
        raise ConfigError("scenario failed cross-reference checks", diagnostics)
    return scenario
