"""Feeder, scenario and solver-configuration data model plus JSON ingestion.

All electrical quantities are stored in per-unit on the base declared by the
input file (``base.s_mva``, ``base.v_kv``). Input files carry engineering
units: kW / kvar / kVA for powers, ohms for impedances. Voltage bounds and
regulator ratios are dimensionless and pass through unchanged.

Feeder and Scenario are immutable after construction and safe to share
across concurrently running agent solvers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import ConfigError, ParseError
from .graphs import RootedTree, connected_components, node_sort_key

LINE_KINDS = ("plain", "switchable", "tie", "regulator")

# Kinds that carry a connection binary: ties are normally-open switches.
SWITCHABLE_KINDS = ("switchable", "tie")


@dataclass(frozen=True)
class Line:
    id: str
    from_node: str
    to_node: str
    r: np.ndarray           # (ph, ph) p.u.
    x: np.ndarray           # (ph, ph) p.u.
    s_max: np.ndarray       # (ph,) p.u. apparent-power cap
    kind: str = "plain"
    switch_priority: float = 1.0
    regulator_ratio: np.ndarray | None = None  # (ph,) fixed tap gain

    @property
    def switchable(self) -> bool:
        return self.kind in SWITCHABLE_KINDS

    @property
    def normally_open(self) -> bool:
        return self.kind == "tie"

    def other(self, node):
        return self.to_node if node == self.from_node else self.from_node


@dataclass(frozen=True)
class Load:
    node: str
    p_max: np.ndarray       # (ph,) p.u.
    q_max: np.ndarray       # (ph,) p.u.
    priority: np.ndarray    # (ph,) weights
    dispatchable: bool = False


@dataclass(frozen=True)
class DerUnit:
    node: str
    s_inv_max: np.ndarray   # (ph,) p.u. inverter cap


@dataclass(frozen=True)
class CapBank:
    node: str
    q_cap_max: np.ndarray   # (ph,) p.u.


@dataclass(frozen=True)
class Feeder:
    nodes: tuple
    lines: tuple
    loads: tuple
    ders: tuple
    caps: tuple
    substation_node: str
    phase_count: int = 1
    s_base_mva: float = 1.0
    v_base_kv: float = 1.0

    def line_by_id(self, line_id) -> Line:
        for ln in self.lines:
            if ln.id == line_id:
                return ln
        raise KeyError(line_id)

    def loads_at(self, node):
        return [ld for ld in self.loads if ld.node == node]

    def normal_closed_lines(self):
        """Lines carrying power under the normal (pre-event) topology."""
        return [ln for ln in self.lines if not ln.normally_open]

    def normal_tree(self) -> RootedTree:
        """The normal radial topology rooted at the substation."""
        edges = [(ln.id, ln.from_node, ln.to_node) for ln in self.normal_closed_lines()]
        return RootedTree(self.nodes, edges, self.substation_node)


@dataclass(frozen=True)
class Scenario:
    faulted_lines: frozenset
    substation_profile: tuple    # ((P, Q) p.u.) per step
    horizon: int
    v_min: float = 0.95
    v_max: float = 1.05
    step_minutes: float = 15.0
    # Pre-event pickup per load node (p.u., per phase); absent node -> zeros.
    # Blackout scenarios leave this empty.
    initial_pickup: Mapping[str, tuple] = field(default_factory=dict)

    def initial_pickup_vector(self, node, phase_count) -> np.ndarray:
        v = self.initial_pickup.get(node)
        if v is None:
            return np.zeros(phase_count)
        return np.asarray(v, dtype=float)


@dataclass(frozen=True)
class SolverConfig:
    rho: float = 1.0
    c: float = 0.1
    eps: float = 1e-4
    relax_tol_factor: float = 10.0
    max_iters: int = 600
    max_prox_iters: int = 150
    big_m: float = 5.0
    polygon_sides: int = 12
    c1: float = 1.0
    c2: float | None = None     # None -> 0.01 * mean load priority of the feeder
    mode: str = "nc_admm"
    qp_tol: float = 1e-6
    threads: int = 0            # 0 -> sequential

    def __post_init__(self):
        if self.rho <= 0:
            raise ConfigError("rho must be > 0")
        if self.c < 0:
            raise ConfigError("c must be >= 0")
        if self.eps <= 0:
            raise ConfigError("eps must be > 0")
        if self.big_m <= 0:
            raise ConfigError("big_m must be > 0")
        if self.polygon_sides < 8 or self.polygon_sides % 2:
            raise ConfigError("polygon_sides must be even and >= 8")
        if self.c1 <= 0 or (self.c2 is not None and self.c2 <= 0):
            raise ConfigError("objective weights c1, c2 must be > 0")
        if self.mode not in ("nc_admm", "projection"):
            raise ConfigError(f"unknown mode {self.mode!r}")

    def resolved_c2(self, feeder: Feeder) -> float:
        if self.c2 is not None:
            return self.c2
        prios = [float(np.mean(ld.priority)) for ld in feeder.loads]
        mean_prio = sum(prios) / len(prios) if prios else 1.0
        return 0.01 * mean_prio


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple

    @property
    def ok(self) -> bool:
        return not self.violations


# ---------------------------------------------------------------------------
# parsing


def _req(obj, key, where):
    if key not in obj:
        raise ParseError(f"{where}: missing field {key!r}")
    return obj[key]


def _phase_vector(value, phase_count, where):
    arr = np.atleast_1d(np.asarray(value, dtype=float))
    if arr.shape == (1,) and phase_count > 1:
        arr = np.repeat(arr, phase_count)
    if arr.shape != (phase_count,):
        raise ParseError(f"{where}: expected {phase_count} per-phase entries, got {arr.shape}")
    return arr


def _phase_matrix(value, phase_count, where):
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    if arr.shape == (1, 1) and phase_count > 1:
        arr = np.eye(phase_count) * arr[0, 0]
    if arr.ndim == 1 and arr.shape == (phase_count,):
        arr = np.diag(arr)
    if arr.shape != (phase_count, phase_count):
        raise ParseError(f"{where}: expected {phase_count}x{phase_count} impedance, got {arr.shape}")
    return arr


def parse_feeder(path):
    """Read a feeder JSON file, convert to per-unit, and validate.

    Returns (Feeder, Scenario | None): the scenario is present when the file
    carries an embedded ``scenario`` section.
    """
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    feeder = feeder_from_dict(doc, where=str(path))
    scenario = None
    if doc.get("scenario") is not None:
        scenario = scenario_from_dict(feeder, doc["scenario"], where=f"{path}:scenario")
    return feeder, scenario


def feeder_from_dict(doc, where="feeder"):
    base = _req(doc, "base", where)
    s_mva = float(_req(base, "s_mva", f"{where}.base"))
    v_kv = float(_req(base, "v_kv", f"{where}.base"))
    if s_mva <= 0 or v_kv <= 0:
        raise ConfigError(f"{where}.base: s_mva and v_kv must be positive")
    z_base = v_kv * v_kv / s_mva          # ohms
    p_base_kw = s_mva * 1000.0            # kW per 1 p.u.

    phase_count = int(doc.get("phase_count", 1))
    if phase_count not in (1, 3):
        raise ParseError(f"{where}: phase_count must be 1 or 3")

    raw_nodes = _req(doc, "nodes", where)
    if not raw_nodes:
        raise ParseError(f"{where}: no nodes")
    nodes = []
    for n in raw_nodes:
        nodes.append(str(n["id"]) if isinstance(n, dict) else str(n))
    node_set = set(nodes)

    lines = []
    for i, ln in enumerate(_req(doc, "lines", where)):
        loc = f"{where}.lines[{i}]"
        lid = str(_req(ln, "id", loc))
        a, b = str(_req(ln, "from", loc)), str(_req(ln, "to", loc))
        for endpoint in (a, b):
            if endpoint not in node_set:
                raise ParseError(f"{loc}: unknown node {endpoint!r}")
        kind = ln.get("kind", "plain")
        if kind not in LINE_KINDS:
            raise ParseError(f"{loc}: unknown kind {kind!r}")
        ratio = ln.get("regulator_ratio")
        if (ratio is not None) != (kind == "regulator"):
            raise ParseError(f"{loc}: regulator_ratio present iff kind=regulator")
        lines.append(Line(
            id=lid,
            from_node=a,
            to_node=b,
            r=_phase_matrix(_req(ln, "r", loc), phase_count, loc + ".r") / z_base,
            x=_phase_matrix(_req(ln, "x", loc), phase_count, loc + ".x") / z_base,
            s_max=_phase_vector(_req(ln, "s_max", loc), phase_count, loc + ".s_max") / p_base_kw,
            kind=kind,
            switch_priority=float(ln.get("switch_priority", 1.0)),
            regulator_ratio=None if ratio is None
            else _phase_vector(ratio, phase_count, loc + ".regulator_ratio"),
        ))

    loads = []
    for i, ld in enumerate(doc.get("loads", [])):
        loc = f"{where}.loads[{i}]"
        node = str(_req(ld, "node", loc))
        if node not in node_set:
            raise ParseError(f"{loc}: unknown node {node!r}")
        loads.append(Load(
            node=node,
            p_max=_phase_vector(_req(ld, "p_max", loc), phase_count, loc) / p_base_kw,
            q_max=_phase_vector(_req(ld, "q_max", loc), phase_count, loc) / p_base_kw,
            priority=_phase_vector(ld.get("priority", 1.0), phase_count, loc),
            dispatchable=bool(ld.get("dispatchable", False)),
        ))

    ders = []
    for i, g in enumerate(doc.get("ders", [])):
        loc = f"{where}.ders[{i}]"
        node = str(_req(g, "node", loc))
        if node not in node_set:
            raise ParseError(f"{loc}: unknown node {node!r}")
        ders.append(DerUnit(
            node=node,
            s_inv_max=_phase_vector(_req(g, "s_inv_max", loc), phase_count, loc) / p_base_kw,
        ))

    caps = []
    for i, cb in enumerate(doc.get("caps", [])):
        loc = f"{where}.caps[{i}]"
        node = str(_req(cb, "node", loc))
        if node not in node_set:
            raise ParseError(f"{loc}: unknown node {node!r}")
        caps.append(CapBank(
            node=node,
            q_cap_max=_phase_vector(_req(cb, "q_cap_max", loc), phase_count, loc) / p_base_kw,
        ))

    substation = str(_req(doc, "substation", where))
    if substation not in node_set:
        raise ParseError(f"{where}: unknown substation node {substation!r}")

    feeder = Feeder(
        nodes=tuple(nodes),
        lines=tuple(lines),
        loads=tuple(loads),
        ders=tuple(ders),
        caps=tuple(caps),
        substation_node=substation,
        phase_count=phase_count,
        s_base_mva=s_mva,
        v_base_kv=v_kv,
    )
    report = validate_feeder(feeder)
    if not report.ok:
        raise ParseError(f"{where}: invalid feeder: " + "; ".join(report.violations))
    return feeder


def scenario_from_dict(feeder, doc, where="scenario"):
    p_base_kw = feeder.s_base_mva * 1000.0
    faults = [str(f) for f in doc.get("faults", [])]
    horizon = int(_req(doc, "horizon", where))
    profile = []
    for i, entry in enumerate(_req(doc, "profile", where)):
        if isinstance(entry, (list, tuple)):
            p, q = entry
        else:
            p, q = entry, 0.0
        profile.append((float(p) / p_base_kw, float(q) / p_base_kw))
    initial = {}
    for node, vec in (doc.get("initial_pickup") or {}).items():
        initial[str(node)] = tuple(
            _phase_vector(vec, feeder.phase_count, f"{where}.initial_pickup") / p_base_kw
        )
    return make_scenario(
        feeder, faults, profile, horizon,
        v_min=float(doc.get("v_min", 0.95)),
        v_max=float(doc.get("v_max", 1.05)),
        step_minutes=float(doc.get("step_minutes", 15.0)),
        initial_pickup=initial,
    )


def make_scenario(feeder, faults, profile, horizon, v_min=0.95, v_max=1.05,
                  step_minutes=15.0, initial_pickup=None):
    """Build a Scenario against a feeder; fault ids and profile are validated.

    `profile` entries are (P, Q) pairs already in p.u.
    """
    line_ids = {ln.id for ln in feeder.lines}
    for f in faults:
        if f not in line_ids:
            raise ParseError(f"scenario: unknown faulted line {f!r}")
    if horizon < 1:
        raise ParseError("scenario: horizon must be >= 1")
    profile = tuple((float(p), float(q)) for p, q in profile)
    if len(profile) != horizon:
        raise ParseError(f"scenario: profile length {len(profile)} != horizon {horizon}")
    for (p0, _), (p1, _) in zip(profile, profile[1:]):
        if p1 < p0 - 1e-12:
            raise ParseError("scenario: substation P profile must be nondecreasing")
    if not (0.0 < v_min < v_max):
        raise ParseError("scenario: need 0 < v_min < v_max")
    return Scenario(
        faulted_lines=frozenset(faults),
        substation_profile=profile,
        horizon=horizon,
        v_min=v_min,
        v_max=v_max,
        step_minutes=step_minutes,
        initial_pickup=dict(initial_pickup or {}),
    )


# ---------------------------------------------------------------------------
# validation and serialization


def validate_feeder(feeder: Feeder) -> ValidationReport:
    """Structural invariants as data: the report lists violations, ok iff none."""
    v = []
    seen = set()
    for n in feeder.nodes:
        if n in seen:
            v.append(f"duplicate id {n!r}")
        seen.add(n)
    node_set = set(feeder.nodes)
    if not feeder.nodes:
        v.append("no nodes")
    line_ids = set()
    for ln in feeder.lines:
        if ln.id in line_ids:
            v.append(f"duplicate line id {ln.id!r}")
        line_ids.add(ln.id)
        for endpoint in (ln.from_node, ln.to_node):
            if endpoint not in node_set:
                v.append(f"line {ln.id}: unknown node {endpoint!r}")
        if not np.allclose(ln.r, ln.r.T) or not np.allclose(ln.x, ln.x.T):
            v.append(f"line {ln.id}: impedance matrices must be symmetric")
        if np.any(ln.s_max <= 0):
            v.append(f"line {ln.id}: s_max must be > 0")
        if ln.kind == "regulator":
            if ln.regulator_ratio is None:
                v.append(f"line {ln.id}: regulator without ratio")
            elif np.any(ln.regulator_ratio < 0.9) or np.any(ln.regulator_ratio > 1.1):
                v.append(f"line {ln.id}: regulator_ratio outside [0.9, 1.1]")
        elif ln.regulator_ratio is not None:
            v.append(f"line {ln.id}: regulator_ratio on non-regulator")
    if feeder.substation_node not in node_set:
        v.append(f"substation {feeder.substation_node!r} is not a node")
    for ld in feeder.loads:
        if ld.node not in node_set:
            v.append(f"load at unknown node {ld.node!r}")
        if np.any(ld.p_max < 0) or np.any(ld.q_max < 0):
            v.append(f"load at {ld.node}: negative demand cap")
        if np.any(ld.priority <= 0):
            v.append(f"load at {ld.node}: priority must be > 0")
    for g in feeder.ders:
        if g.node not in node_set:
            v.append(f"DER at unknown node {g.node!r}")
        if np.any(g.s_inv_max < 0):
            v.append(f"DER at {g.node}: negative inverter cap")
    for cb in feeder.caps:
        if cb.node not in node_set:
            v.append(f"capacitor at unknown node {cb.node!r}")
        if np.any(cb.q_cap_max < 0):
            v.append(f"capacitor at {cb.node}: negative cap")

    if not v:
        all_edges = [(ln.id, ln.from_node, ln.to_node) for ln in feeder.lines]
        if len(connected_components(feeder.nodes, all_edges)) != 1:
            v.append("graph disconnected even with all switchable lines closed")
        closed = [(ln.id, ln.from_node, ln.to_node) for ln in feeder.normal_closed_lines()]
        n, e = len(node_set), len(closed)
        if e >= n:
            v.append(f"cycle under normal topology ({e} closed lines for {n} nodes)")
        elif e < n - 1:
            v.append(f"normal topology disconnected: {e} closed lines for {n} nodes")
        else:
            try:
                feeder.normal_tree()
            except Exception as exc:
                v.append(f"normal topology is not a substation-rooted tree: {exc}")
    return ValidationReport(tuple(v))


def serialize_feeder(feeder: Feeder, scenario: Scenario | None = None) -> dict:
    """Inverse of parsing: a dict in file schema and engineering units."""
    z_base = feeder.v_base_kv ** 2 / feeder.s_base_mva
    p_base_kw = feeder.s_base_mva * 1000.0

    def mat(m):
        m = np.asarray(m) * z_base
        return m[0][0] if feeder.phase_count == 1 else m.tolist()

    def vec(x, scale):
        x = np.asarray(x) * scale
        return float(x[0]) if feeder.phase_count == 1 else x.tolist()

    doc = {
        "base": {"s_mva": feeder.s_base_mva, "v_kv": feeder.v_base_kv},
        "phase_count": feeder.phase_count,
        "nodes": list(feeder.nodes),
        "lines": [],
        "loads": [],
        "ders": [],
        "caps": [],
        "substation": feeder.substation_node,
    }
    for ln in feeder.lines:
        entry = {
            "id": ln.id, "from": ln.from_node, "to": ln.to_node,
            "r": mat(ln.r), "x": mat(ln.x),
            "s_max": vec(ln.s_max, p_base_kw),
            "kind": ln.kind, "switch_priority": ln.switch_priority,
        }
        if ln.regulator_ratio is not None:
            entry["regulator_ratio"] = vec(ln.regulator_ratio, 1.0)
        doc["lines"].append(entry)
    for ld in feeder.loads:
        doc["loads"].append({
            "node": ld.node,
            "p_max": vec(ld.p_max, p_base_kw), "q_max": vec(ld.q_max, p_base_kw),
            "priority": vec(ld.priority, 1.0), "dispatchable": ld.dispatchable,
        })
    for g in feeder.ders:
        doc["ders"].append({"node": g.node, "s_inv_max": vec(g.s_inv_max, p_base_kw)})
    for cb in feeder.caps:
        doc["caps"].append({"node": cb.node, "q_cap_max": vec(cb.q_cap_max, p_base_kw)})
    if scenario is not None:
        doc["scenario"] = {
            "faults": sorted(scenario.faulted_lines),
            "profile": [[p * p_base_kw, q * p_base_kw] for p, q in scenario.substation_profile],
            "horizon": scenario.horizon,
            "v_min": scenario.v_min, "v_max": scenario.v_max,
            "step_minutes": scenario.step_minutes,
        }
        if scenario.initial_pickup:
            doc["scenario"]["initial_pickup"] = {
                n: (np.asarray(v) * p_base_kw).tolist()
                for n, v in scenario.initial_pickup.items()
            }
    return doc
