"""Scenario files: parsing, validation and the canonical dictionary form.

A scenario is a YAML mapping with the sections ``plant``, ``reference``,
``constraints``, ``gains``, ``controller``, ``signals`` and ``sim``, plus an
optional ``baseline`` section holding the adaptation gains of the classical
comparison run. Any error is raised as :class:`ConfigError` with the dotted
field path and, when the value came from a file, its line number.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from importlib import resources

import numpy as np
import yaml

from .controller import LAWS, ControllerGains
from .errors import CmracError, ConfigError
from .models import AUX_VARIANTS, ConstraintSpec, PlantModel, ReferenceModel
from .signals import PRIMITIVES, DisturbanceSpec, SignalSpec, primitive_to_dict
from .sim import SimConfig

SECTIONS = ("name", "plant", "reference", "constraints", "gains", "baseline", "controller", "signals", "sim")
PRESETS = ("paper_sec5", "paper_sec5_nodist", "degenerate")


def _line_map(text):
    """Map dotted paths ('plant.A', 'sim.x0') to 1-based source lines."""
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError:
        return {}
    lines = {}

    def walk(node, path):
        lines[path] = node.start_mark.line + 1
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                key = f"{path}.{k.value}" if path else str(k.value)
                lines[key] = k.start_mark.line + 1
                walk(v, key)
        elif isinstance(node, yaml.SequenceNode):
            for i, v in enumerate(node.value):
                walk(v, f"{path}[{i}]")

    if root is not None:
        walk(root, "")
    return lines


class _Reader:
    """Typed accessors that turn bad values into located ConfigErrors."""

    def __init__(self, data, lines=None, source="<config>"):
        self.data = data
        self.lines = lines or {}
        self.source = source

    def fail(self, path, message):
        line = self.lines.get(path)
        while line is None and path:
            path = path.rsplit(".", 1)[0] if "." in path else ""
            line = self.lines.get(path)
        where = f"{self.source}:{line}" if line else self.source
        raise ConfigError(message, where=where)

    def section(self, name, required=True):
        val = self.data.get(name)
        if val is None:
            if required:
                self.fail(name, f"missing section '{name}'")
            return {}
        if not isinstance(val, dict):
            self.fail(name, f"section '{name}' must be a mapping")
        return val

    def get(self, sec, key, path, required=True, default=None):
        if key not in sec or sec[key] is None:
            if required:
                self.fail(path.rsplit(".", 1)[0], f"missing field '{path}'")
            return default
        return sec[key]

    def number(self, sec, key, path, required=True, default=None):
        val = self.get(sec, key, path, required, default)
        if val is None:
            return None
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            self.fail(path, f"'{path}' must be a number, got {val!r}")
        val = float(val)
        if not math.isfinite(val):
            self.fail(path, f"'{path}' must be finite")
        return val

    def matrix(self, sec, key, path, required=True, size=None):
        """Nested list -> 2-D array. A bare number c means c * I (needs ``size``)."""
        val = self.get(sec, key, path, required)
        if val is None:
            return None
        if isinstance(val, (int, float)) and not isinstance(val, bool):
            if size is None:
                self.fail(path, f"'{path}' must be a nested list")
            return float(val) * np.eye(size)
        if not isinstance(val, list) or not val or not all(isinstance(r, list) for r in val):
            self.fail(path, f"'{path}' must be a non-empty list of rows")
        width = len(val[0])
        for i, row in enumerate(val):
            if len(row) != width:
                self.fail(f"{path}[{i}]", f"'{path}' row {i} has {len(row)} entries, expected {width}")
            for x in row:
                if isinstance(x, bool) or not isinstance(x, (int, float)):
                    self.fail(f"{path}[{i}]", f"'{path}' row {i} has a non-numeric entry {x!r}")
        return np.array(val, dtype=float)

    def vector(self, sec, key, path, required=True):
        val = self.get(sec, key, path, required)
        if val is None:
            return None
        if not isinstance(val, list) or any(isinstance(x, bool) or not isinstance(x, (int, float)) for x in val):
            self.fail(path, f"'{path}' must be a list of numbers")
        return np.array(val, dtype=float)

    def choice(self, sec, key, path, options, default):
        val = self.get(sec, key, path, False, default)
        if val not in options:
            self.fail(path, f"'{path}' must be one of {', '.join(options)}; got {val!r}")
        return val


def _parse_channels(rd, channels, path):
    if not isinstance(channels, list):
        rd.fail(path, f"'{path}' must be a list of channels")
    out = []
    for j, ch in enumerate(channels):
        cpath = f"{path}[{j}]"
        if isinstance(ch, dict):
            ch = [ch]
        if isinstance(ch, (int, float)) and not isinstance(ch, bool):
            ch = [{"type": "constant", "value": ch}]
        if not isinstance(ch, list):
            rd.fail(cpath, f"channel {j} of '{path}' must be a list of primitives")
        prims = []
        for k, p in enumerate(ch):
            ppath = f"{cpath}[{k}]"
            if not isinstance(p, dict) or "type" not in p:
                rd.fail(ppath, f"primitive {k} of channel {j} needs a 'type'")
            kind = p["type"]
            if kind not in PRIMITIVES:
                rd.fail(ppath, f"unknown signal type {kind!r} (choose from {', '.join(PRIMITIVES)})")
            params = {k2: v for k2, v in p.items() if k2 != "type"}
            if kind == "noise":
                params.setdefault("channel", j)
            try:
                prims.append(PRIMITIVES[kind](**params))
            except (TypeError, ValueError) as exc:
                rd.fail(ppath, f"bad {kind} primitive: {exc}")
        out.append(tuple(prims))
    return SignalSpec(tuple(out))


@dataclass(eq=False)
class Scenario:
    """A parsed scenario file. ``sim_config`` builds the run for either law."""

    name: str
    plant: PlantModel
    reference: ReferenceModel
    constraints: ConstraintSpec
    Q: np.ndarray
    gamma_x: np.ndarray
    gamma_r: np.ndarray
    baseline_gamma_x: np.ndarray
    baseline_gamma_r: np.ndarray
    law: str
    aux_variant: str
    projection_epsilon: float
    khat_x0: np.ndarray | None
    khat_r0: np.ndarray | None
    reference_signal: SignalSpec
    disturbance: DisturbanceSpec
    x0: np.ndarray
    xr0: np.ndarray
    t_end: float
    dt: float
    log_stride: int
    source: str = "<config>"
    digest: str = ""
    _gains: dict = field(default_factory=dict, repr=False)

    def gains(self, law=None):
        """Controller gains for ``law``; the classical law uses the baseline adaptation gains."""
        law = law or self.law
        if law not in self._gains:
            gx, gr = (self.gamma_x, self.gamma_r) if law == "blf" else (self.baseline_gamma_x, self.baseline_gamma_r)
            self._gains[law] = ControllerGains.from_reference(self.reference.A_r, self.Q, gx, gr, law)
        return self._gains[law]

    def sim_config(self, law=None, **overrides):
        law = law or self.law
        cfg = SimConfig(
            plant=self.plant,
            reference=self.reference,
            constraints=self.constraints,
            gains=self.gains(law),
            reference_signal=self.reference_signal,
            disturbance=self.disturbance,
            x0=self.x0,
            xr0=self.xr0,
            t_end=self.t_end,
            dt=self.dt,
            khat_x0=self.khat_x0,
            khat_r0=self.khat_r0,
            aux_variant=self.aux_variant,
            projection_epsilon=self.projection_epsilon,
            log_stride=self.log_stride,
            meta={"scenario": self.name},
        )
        return cfg.replace(**overrides) if overrides else cfg

    def to_dict(self):
        return scenario_to_dict(self)


def parse_scenario(data, lines=None, source="<config>", digest=""):
    """Validate a decoded mapping and build a :class:`Scenario`."""
    rd = _Reader(data if isinstance(data, dict) else {}, lines, source)
    if not isinstance(data, dict):
        rd.fail("", "top level must be a mapping of sections")
    unknown = sorted(set(data) - set(SECTIONS))
    if unknown:
        rd.fail(unknown[0], f"unknown section '{unknown[0]}'")

    try:
        ps = rd.section("plant")
        A = rd.matrix(ps, "A", "plant.A")
        B = rd.matrix(ps, "B", "plant.B")
        try:
            plant = PlantModel(A, B)
        except (CmracError, ValueError) as exc:
            rd.fail("plant", f"invalid plant: {exc}")
        n, m = plant.n, plant.m

        rs = rd.section("reference")
        try:
            reference = ReferenceModel(rd.matrix(rs, "A_r", "reference.A_r"), rd.matrix(rs, "B_r", "reference.B_r"))
        except (CmracError, ValueError) as exc:
            rd.fail("reference", f"invalid reference model: {exc}")
        if (reference.n, reference.m) != (n, m):
            rd.fail("reference", f"reference model is {reference.n}x{reference.m}, plant is {n}x{m}")

        cs_sec = rd.section("constraints")
        cvals = {
            k: rd.number(cs_sec, k, f"constraints.{k}", required=k not in ("x0_bar", "xr_bar"))
            for k in ("x_bar", "u_bar", "xa_bar", "d_bar", "kx_bar", "kr_bar", "x0_bar", "xr_bar")
        }
        try:
            constraints = ConstraintSpec(**cvals)
        except ValueError as exc:
            rd.fail("constraints", str(exc))

        gs = rd.section("gains")
        Q = rd.matrix(gs, "Q", "gains.Q", size=n)
        gamma_x = rd.matrix(gs, "gamma_x", "gains.gamma_x", size=m)
        gamma_r = rd.matrix(gs, "gamma_r", "gains.gamma_r", size=m)
        bs = rd.section("baseline", required=False)
        bgx = rd.matrix(bs, "gamma_x", "baseline.gamma_x", required=False, size=m)
        bgr = rd.matrix(bs, "gamma_r", "baseline.gamma_r", required=False, size=m)
        bgx = gamma_x if bgx is None else bgx
        bgr = gamma_r if bgr is None else bgr
        for path, M, k in (
            ("gains.Q", Q, n),
            ("gains.gamma_x", gamma_x, m),
            ("gains.gamma_r", gamma_r, m),
            ("baseline.gamma_x", bgx, m),
            ("baseline.gamma_r", bgr, m),
        ):
            if M.shape != (k, k):
                rd.fail(path, f"'{path}' must be {k}x{k}, got {M.shape[0]}x{M.shape[1]}")
            if np.abs(M - M.T).max() > 1e-9 * max(1.0, np.abs(M).max()) or np.linalg.eigvalsh(M).min() <= 0:
                rd.fail(path, f"'{path}' must be symmetric positive definite")

        ct = rd.section("controller", required=False)
        law = rd.choice(ct, "law", "controller.law", LAWS, "blf")
        aux = rd.choice(ct, "aux_variant", "controller.aux_variant", AUX_VARIANTS, "self_consistent")
        eps = rd.number(ct, "projection_epsilon", "controller.projection_epsilon", required=False, default=0.1)
        if not 0 < eps < 1:
            rd.fail("controller.projection_epsilon", "'controller.projection_epsilon' must lie in (0, 1)")
        kx0 = rd.matrix(ct, "khat_x0", "controller.khat_x0", required=False)
        kr0 = rd.matrix(ct, "khat_r0", "controller.khat_r0", required=False)
        if kx0 is not None and kx0.shape != (m, n):
            rd.fail("controller.khat_x0", f"'controller.khat_x0' must be {m}x{n}")
        if kr0 is not None and kr0.shape != (m, m):
            rd.fail("controller.khat_r0", f"'controller.khat_r0' must be {m}x{m}")

        ss = rd.section("signals")
        ref_sig = _parse_channels(rd, rd.get(ss, "reference", "signals.reference"), "signals.reference")
        if ref_sig.dim != m:
            rd.fail("signals.reference", f"'signals.reference' has {ref_sig.dim} channels, expected {m}")
        ds = ss.get("disturbance") or {}
        if not isinstance(ds, dict):
            rd.fail("signals.disturbance", "'signals.disturbance' must be a mapping")
        chans = ds.get("channels")
        base = SignalSpec() if not chans else _parse_channels(rd, chans, "signals.disturbance.channels")
        if base.dim not in (0, n):
            rd.fail("signals.disturbance.channels", f"disturbance has {base.dim} channels, expected {n}")
        onset = rd.number(ds, "onset", "signals.disturbance.onset", required=False, default=0.0)
        cap = rd.number(ds, "cap", "signals.disturbance.cap", required=False, default=constraints.d_bar)
        seed = ds.get("seed", 0)
        if isinstance(seed, bool) or not isinstance(seed, int):
            rd.fail("signals.disturbance.seed", "'signals.disturbance.seed' must be an integer")
        if onset < 0 or cap < 0:
            rd.fail("signals.disturbance", "disturbance onset and cap must be non-negative")
        if cap > constraints.d_bar:
            rd.fail("signals.disturbance.cap", f"disturbance cap {cap} exceeds constraints.d_bar {constraints.d_bar}")
        disturbance = DisturbanceSpec(base, onset, cap, seed)

        sm = rd.section("sim")
        x0 = rd.vector(sm, "x0", "sim.x0", required=False)
        xr0 = rd.vector(sm, "xr0", "sim.xr0", required=False)
        x0 = np.zeros(n) if x0 is None else x0
        xr0 = x0.copy() if xr0 is None else xr0
        for path, v in (("sim.x0", x0), ("sim.xr0", xr0)):
            if v.shape != (n,):
                rd.fail(path, f"'{path}' must have {n} entries")
        t_end = rd.number(sm, "t_end", "sim.t_end")
        dt = rd.number(sm, "dt", "sim.dt")
        if not (t_end > 0 and dt > 0):
            rd.fail("sim", "'sim.t_end' and 'sim.dt' must be positive")
        stride = sm.get("log_stride", 1)
        if isinstance(stride, bool) or not isinstance(stride, int) or stride < 1:
            rd.fail("sim.log_stride", "'sim.log_stride' must be a positive integer")
        if constraints.x0_bar is not None and not np.linalg.norm(x0) < constraints.x0_bar:
            rd.fail("sim.x0", "||x0|| must be below constraints.x0_bar")
    except ConfigError:
        raise
    except (CmracError, ValueError, TypeError) as exc:
        rd.fail("", str(exc))

    name = data.get("name") or "scenario"
    return Scenario(
        name=str(name),
        plant=plant,
        reference=reference,
        constraints=constraints,
        Q=Q,
        gamma_x=gamma_x,
        gamma_r=gamma_r,
        baseline_gamma_x=bgx,
        baseline_gamma_r=bgr,
        law=law,
        aux_variant=aux,
        projection_epsilon=eps,
        khat_x0=kx0,
        khat_r0=kr0,
        reference_signal=ref_sig,
        disturbance=disturbance,
        x0=x0,
        xr0=xr0,
        t_end=t_end,
        dt=dt,
        log_stride=stride,
        source=source,
        digest=digest,
    )


def digest_text(text):
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def loads(text, source="<config>"):
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{source}:{mark.line + 1}" if mark else source
        raise ConfigError(f"YAML syntax error: {getattr(exc, 'problem', exc)}", where=where) from exc
    return parse_scenario(data, _line_map(text), source, digest_text(text))


def load(path):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config ({exc.strerror})", where=str(path)) from exc
    return loads(text, str(path))


def preset_text(name):
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(PRESETS)}")
    return resources.files("cmrac.presets").joinpath(f"{name}.yaml").read_text(encoding="utf-8")


def load_preset(name):
    return loads(preset_text(name), f"preset:{name}")


def resolve(spec):
    """Load a preset by name or a file by path."""
    return load_preset(spec) if spec in PRESETS else load(spec)


def _mat(M):
    return None if M is None else np.asarray(M, dtype=float).tolist()


def _channels(spec):
    return [[primitive_to_dict(p) for p in ch] for ch in spec.channels]


def scenario_to_dict(sc):
    """Canonical mapping that :func:`parse_scenario` turns back into the same scenario."""
    cs = sc.constraints
    constraints = {k: getattr(cs, k) for k in ("x_bar", "u_bar", "xa_bar", "d_bar", "kx_bar", "kr_bar")}
    for k in ("x0_bar", "xr_bar"):
        if getattr(cs, k) is not None:
            constraints[k] = getattr(cs, k)
    controller = {"law": sc.law, "aux_variant": sc.aux_variant, "projection_epsilon": sc.projection_epsilon}
    if sc.khat_x0 is not None:
        controller["khat_x0"] = _mat(sc.khat_x0)
    if sc.khat_r0 is not None:
        controller["khat_r0"] = _mat(sc.khat_r0)
    dist = sc.disturbance
    return {
        "name": sc.name,
        "plant": {"A": _mat(sc.plant.A), "B": _mat(sc.plant.B)},
        "reference": {"A_r": _mat(sc.reference.A_r), "B_r": _mat(sc.reference.B_r)},
        "constraints": constraints,
        "gains": {"Q": _mat(sc.Q), "gamma_x": _mat(sc.gamma_x), "gamma_r": _mat(sc.gamma_r)},
        "baseline": {"gamma_x": _mat(sc.baseline_gamma_x), "gamma_r": _mat(sc.baseline_gamma_r)},
        "controller": controller,
        "signals": {
            "reference": _channels(sc.reference_signal),
            "disturbance": {
                "onset": dist.onset,
                "cap": dist.norm_cap,
                "seed": dist.seed,
                "channels": _channels(dist.base),
            },
        },
        "sim": {
            "x0": sc.x0.tolist(),
            "xr0": sc.xr0.tolist(),
            "t_end": sc.t_end,
            "dt": sc.dt,
            "log_stride": sc.log_stride,
        },
    }


def dumps(sc):
    return yaml.safe_dump(scenario_to_dict(sc), sort_keys=False, default_flow_style=None)
