"""Per-cluster convex restoration subproblem over the full horizon.

Variable keys are tuples, one entry per (cluster, step):

    continuous:  ("PL", li, ph, t) ("QL", li, ph, t)   load pickup (load index)
                 ("U", node, ph, t)                     squared voltage
                 ("PF", lid, ph, t) ("QF", lid, ph, t)  line flow, from->to ref
                 ("PG", gi, ph, t) ("QG", gi, ph, t)    DER dispatch
                 ("QC", ci, ph, t)                      capacitor output
    relaxed 0/1: ("XL", li, t)    non-dispatchable pickup status
                 ("XB", node, t)  node energization
                 ("AL", lid, t)   switch/tie connection status
                 ("BT", lid, v, t) orientation: v is the parent endpoint

A cluster registers its own nodes' quantities plus copies of boundary-node
voltages and joint-line flows; those copies and the joint lines' AL/BT are
the binding (consensus) variables. Interior binaries still get consensus
entries with a single sharer.

The constraint set per step: load-pickup coupling and caps, energization-
gated voltage boxes, polygonizable flow caps gated by switch status,
substation capacity in the root cluster, capacitor and inverter caps,
fixed-ratio regulator coupling, linearized voltage drop (big-M relaxed on
switchable lines), nodal power balance, pickup monotonicity across steps,
fault pinning, and per-node spanning-tree rows. Consensus penalties are
quadratic terms centered at (consensus - multiplier).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .clustering import Clustering
from .errors import StateError
from .feeder import Feeder, Scenario, SolverConfig
from .program import ConvexProgram

CONTINUOUS_ORDER = ("PL", "QL", "U", "PF", "QF", "PG", "QG", "QC")
BINARY_ORDER = ("XL", "XB", "AL", "BT")


@dataclass(frozen=True)
class VarEntry:
    key: tuple
    binary: bool
    sharers: frozenset

    @property
    def binding(self):
        return len(self.sharers) >= 2


@dataclass
class VarIndex:
    cluster_id: int
    entries: list = field(default_factory=list)

    def __post_init__(self):
        self.by_key = {e.key: e for e in self.entries}

    def add(self, key, binary, sharers):
        e = VarEntry(key, binary, frozenset(sharers))
        self.entries.append(e)
        self.by_key[key] = e

    @property
    def binary_keys(self):
        return [e.key for e in self.entries if e.binary]

    @property
    def binding_keys(self):
        return [e.key for e in self.entries if e.binding]

    @property
    def binding_continuous_keys(self):
        return [e.key for e in self.entries if e.binding and not e.binary]

    @property
    def binding_binary_keys(self):
        return [e.key for e in self.entries if e.binding and e.binary]

    def penalized_keys(self):
        """Entries carrying a consensus penalty: binding continuous + all binaries."""
        return [e.key for e in self.entries if e.binary or e.binding]


class ClusterView:
    """Cluster-local slices of the feeder used by both classify and build."""

    def __init__(self, feeder: Feeder, clustering: Clustering, cluster_id,
                 scenario: Scenario):
        self.feeder = feeder
        self.clustering = clustering
        self.cluster_id = cluster_id
        self.scenario = scenario
        members = clustering.clusters[cluster_id]
        # feeder declaration order keeps every registry deterministic
        self.nodes = [v for v in feeder.nodes if v in members]
        self.node_set = frozenset(members)
        self.assignment = clustering.assignment
        self.lines = [ln for ln in feeder.lines
                      if ln.from_node in self.node_set or ln.to_node in self.node_set]
        self.joint = [ln for ln in self.lines
                      if clustering.assignment[ln.from_node] != clustering.assignment[ln.to_node]]
        self.boundary_others = []
        for ln in self.joint:
            for v in (ln.from_node, ln.to_node):
                if v not in self.node_set and v not in self.boundary_others:
                    self.boundary_others.append(v)
        self.loads = [(li, ld) for li, ld in enumerate(feeder.loads) if ld.node in self.node_set]
        self.ders = [(gi, g) for gi, g in enumerate(feeder.ders) if g.node in self.node_set]
        self.caps = [(ci, cb) for ci, cb in enumerate(feeder.caps) if cb.node in self.node_set]
        self.has_substation = feeder.substation_node in self.node_set
        self.faulted = scenario.faulted_lines

    def u_sharers(self, node):
        sharers = {self.assignment[node]}
        for ln in self.feeder.lines:
            if self.assignment[ln.from_node] != self.assignment[ln.to_node]:
                if ln.from_node == node:
                    sharers.add(self.assignment[ln.to_node])
                elif ln.to_node == node:
                    sharers.add(self.assignment[ln.from_node])
        return sharers

    def line_sharers(self, ln):
        return {self.assignment[ln.from_node], self.assignment[ln.to_node]}


def classify_variables(feeder: Feeder, clustering: Clustering, cluster_id,
                       scenario: Scenario) -> VarIndex:
    """Register every subproblem variable of one cluster with its sharers."""
    view = ClusterView(feeder, clustering, cluster_id, scenario)
    me = {cluster_id}
    idx = VarIndex(cluster_id)
    phases = range(feeder.phase_count)
    for t in range(scenario.horizon):
        for li, ld in view.loads:
            for ph in phases:
                idx.add(("PL", li, ph, t), False, me)
        for li, ld in view.loads:
            for ph in phases:
                idx.add(("QL", li, ph, t), False, me)
        for v in view.nodes + view.boundary_others:
            for ph in phases:
                idx.add(("U", v, ph, t), False, view.u_sharers(v))
        for ln in view.lines:
            for ph in phases:
                idx.add(("PF", ln.id, ph, t), False, view.line_sharers(ln))
        for ln in view.lines:
            for ph in phases:
                idx.add(("QF", ln.id, ph, t), False, view.line_sharers(ln))
        for gi, g in view.ders:
            for ph in phases:
                idx.add(("PG", gi, ph, t), False, me)
        for gi, g in view.ders:
            for ph in phases:
                idx.add(("QG", gi, ph, t), False, me)
        for ci, cb in view.caps:
            for ph in phases:
                idx.add(("QC", ci, ph, t), False, me)
        for li, ld in view.loads:
            if not ld.dispatchable:
                idx.add(("XL", li, t), True, me)
        for v in view.nodes:
            idx.add(("XB", v, t), True, me)
        for ln in view.lines:
            if ln.switchable:
                idx.add(("AL", ln.id, t), True, view.line_sharers(ln))
        for ln in view.lines:
            if ln.id not in view.faulted:
                idx.add(("BT", ln.id, ln.from_node, t), True, view.line_sharers(ln))
                idx.add(("BT", ln.id, ln.to_node, t), True, view.line_sharers(ln))
    return idx


def build_subproblem(feeder: Feeder, scenario: Scenario, clustering: Clustering,
                     cluster_id, var_index: VarIndex, config: SolverConfig,
                     centers=None) -> ConvexProgram:
    """Assemble one cluster's convex program for the whole horizon.

    `centers` maps penalized keys (binding continuous + every binary) to the
    quadratic-penalty center, i.e. consensus minus scaled multiplier; pass
    None to build the bare relaxation (no penalty terms). SOC flow and
    inverter caps are flagged on the program, not yet polygonized.
    """
    view = ClusterView(feeder, clustering, cluster_id, scenario)
    phases = range(feeder.phase_count)
    vmax2 = scenario.v_max ** 2
    vmin2 = scenario.v_min ** 2
    big_m = config.big_m
    c1 = config.c1
    c2 = config.resolved_c2(feeder)
    prog = ConvexProgram()

    # variables with static bounds
    for e in var_index.entries:
        kind = e.key[0]
        if kind in ("XL", "XB", "AL", "BT"):
            prog.add_var(e.key, 0.0, 1.0, binary=True)
        elif kind == "PL":
            _, li, ph, t = e.key
            prog.add_var(e.key, 0.0, float(feeder.loads[li].p_max[ph]))
        elif kind == "QL":
            _, li, ph, t = e.key
            prog.add_var(e.key, 0.0, float(feeder.loads[li].q_max[ph]))
        elif kind == "U":
            prog.add_var(e.key, 0.0, vmax2)
        elif kind in ("PF", "QF"):
            _, lid, ph, t = e.key
            s = float(feeder.line_by_id(lid).s_max[ph])
            prog.add_var(e.key, -s, s)
        elif kind == "PG":
            _, gi, ph, t = e.key
            prog.add_var(e.key, 0.0, float(feeder.ders[gi].s_inv_max[ph]))
        elif kind == "QG":
            _, gi, ph, t = e.key
            s = float(feeder.ders[gi].s_inv_max[ph])
            prog.add_var(e.key, -s, s)
        elif kind == "QC":
            _, ci, ph, t = e.key
            prog.add_var(e.key, 0.0, float(feeder.caps[ci].q_cap_max[ph]))
        else:
            raise StateError(f"unknown variable kind {kind!r}")

    # objective: maximize restored priority-weighted load + switch rewards
    for t in range(scenario.horizon):
        for li, ld in view.loads:
            for ph in phases:
                prog.add_linear_cost(("PL", li, ph, t), -c1 * float(ld.priority[ph]))
        for ln in view.lines:
            if ln.switchable:
                share = len(view.line_sharers(ln))
                prog.add_linear_cost(("AL", ln.id, t),
                                     -c2 * ln.switch_priority / share)

    sub = feeder.substation_node
    for t in range(scenario.horizon):
        p_sub, q_sub = scenario.substation_profile[t]

        for li, ld in view.loads:
            if not ld.dispatchable:
                for ph in phases:
                    prog.add_eq({("PL", li, ph, t): 1.0,
                                 ("XL", li, t): -float(ld.p_max[ph])},
                                0.0, f"nd_pickup_p[{ld.node},{ph},{t}]")
                    prog.add_eq({("QL", li, ph, t): 1.0,
                                 ("XL", li, t): -float(ld.q_max[ph])},
                                0.0, f"nd_pickup_q[{ld.node},{ph},{t}]")

        for v in view.nodes:
            for ph in phases:
                prog.add_row({("U", v, ph, t): 1.0, ("XB", v, t): -vmax2},
                             -np.inf, 0.0, f"vbox_hi[{v},{ph},{t}]")
                prog.add_row({("U", v, ph, t): 1.0, ("XB", v, t): -vmin2},
                             0.0, np.inf, f"vbox_lo[{v},{ph},{t}]")

        for ln in view.lines:
            if ln.id in view.faulted:
                continue
            gate = ("AL", ln.id, t) if ln.switchable else None
            for ph in phases:
                prog.add_soc_cap(("PF", ln.id, ph, t), ("QF", ln.id, ph, t),
                                 float(ln.s_max[ph]), gate_key=gate,
                                 name=f"scap[{ln.id},{ph},{t}]")

        if view.has_substation:
            p_coeffs, q_coeffs = {}, {}
            for ln in view.lines:
                sign = 0.0
                if ln.from_node == sub:
                    sign = 1.0
                elif ln.to_node == sub:
                    sign = -1.0
                if sign:
                    for ph in phases:
                        p_coeffs[("PF", ln.id, ph, t)] = sign
                        q_coeffs[("QF", ln.id, ph, t)] = sign
            for li, ld in view.loads:
                if ld.node == sub:
                    for ph in phases:
                        p_coeffs[("PL", li, ph, t)] = 1.0
                        q_coeffs[("QL", li, ph, t)] = 1.0
            for gi, g in view.ders:
                if g.node == sub:
                    for ph in phases:
                        p_coeffs[("PG", gi, ph, t)] = -1.0
                        q_coeffs[("QG", gi, ph, t)] = -1.0
            for ci, cb in view.caps:
                if cb.node == sub:
                    for ph in phases:
                        q_coeffs[("QC", ci, ph, t)] = -1.0
            prog.add_row(p_coeffs, 0.0, p_sub, f"sub_cap_p[{t}]")
            prog.add_row(q_coeffs, 0.0, q_sub, f"sub_cap_q[{t}]")
            # slack voltage reference: energized substation sits at 1 p.u.
            for ph in phases:
                prog.add_eq({("U", sub, ph, t): 1.0, ("XB", sub, t): -1.0},
                            0.0, f"slack_ref[{ph},{t}]")

        for ci, cb in view.caps:
            for ph in phases:
                prog.add_row({("QC", ci, ph, t): 1.0,
                              ("XB", cb.node, t): -float(cb.q_cap_max[ph])},
                             -np.inf, 0.0, f"capbank[{cb.node},{ph},{t}]")

        for gi, g in view.ders:
            for ph in phases:
                prog.add_soc_cap(("PG", gi, ph, t), ("QG", gi, ph, t),
                                 float(g.s_inv_max[ph]),
                                 gate_key=("XB", g.node, t),
                                 name=f"inv[{g.node},{ph},{t}]")

        for ln in view.lines:
            if ln.id in view.faulted:
                # isolation: a faulted branch carries nothing
                for ph in phases:
                    prog.set_bounds(("PF", ln.id, ph, t), 0.0, 0.0)
                    prog.set_bounds(("QF", ln.id, ph, t), 0.0, 0.0)
                if ln.switchable:
                    prog.set_bounds(("AL", ln.id, t), 0.0, 0.0)
                for v in (ln.from_node, ln.to_node):
                    if v in view.node_set:
                        prog.set_bounds(("XB", v, t), 0.0, 0.0)
                continue
            if ln.kind == "regulator":
                for ph in phases:
                    gain = float(ln.regulator_ratio[ph]) ** 2
                    prog.add_eq({("U", ln.to_node, ph, t): 1.0,
                                 ("U", ln.from_node, ph, t): -gain},
                                0.0, f"vreg[{ln.id},{ph},{t}]")
                continue
            for ph in phases:
                coeffs = {("U", ln.to_node, ph, t): 1.0,
                          ("U", ln.from_node, ph, t): -1.0}
                for ph2 in phases:
                    coeffs[("PF", ln.id, ph2, t)] = 2.0 * float(ln.r[ph, ph2])
                    coeffs[("QF", ln.id, ph2, t)] = 2.0 * float(ln.x[ph, ph2])
                if ln.switchable:
                    up = dict(coeffs)
                    up[("AL", ln.id, t)] = big_m
                    prog.add_row(up, -np.inf, big_m, f"vdrop_hi[{ln.id},{ph},{t}]")
                    lo = dict(coeffs)
                    lo[("AL", ln.id, t)] = -big_m
                    prog.add_row(lo, -big_m, np.inf, f"vdrop_lo[{ln.id},{ph},{t}]")
                else:
                    prog.add_eq(coeffs, 0.0, f"vdrop[{ln.id},{ph},{t}]")

        for v in view.nodes:
            if v == sub:
                continue
            for ph in phases:
                p_coeffs, q_coeffs = {}, {}
                for ln in view.lines:
                    if ln.to_node == v:
                        p_coeffs[("PF", ln.id, ph, t)] = 1.0
                        q_coeffs[("QF", ln.id, ph, t)] = 1.0
                    elif ln.from_node == v:
                        p_coeffs[("PF", ln.id, ph, t)] = -1.0
                        q_coeffs[("QF", ln.id, ph, t)] = -1.0
                for gi, g in view.ders:
                    if g.node == v:
                        p_coeffs[("PG", gi, ph, t)] = 1.0
                        q_coeffs[("QG", gi, ph, t)] = 1.0
                for ci, cb in view.caps:
                    if cb.node == v:
                        q_coeffs[("QC", ci, ph, t)] = 1.0
                for li, ld in view.loads:
                    if ld.node == v:
                        p_coeffs[("PL", li, ph, t)] = -1.0
                        q_coeffs[("QL", li, ph, t)] = -1.0
                prog.add_eq(p_coeffs, 0.0, f"bal_p[{v},{ph},{t}]")
                prog.add_eq(q_coeffs, 0.0, f"bal_q[{v},{ph},{t}]")

        for li, ld in view.loads:
            for ph in phases:
                if t == 0:
                    init = float(scenario.initial_pickup_vector(ld.node, feeder.phase_count)[ph])
                    if init > 0.0:
                        prog.add_row({("PL", li, ph, t): 1.0}, init, np.inf,
                                     f"seq_init[{ld.node},{ph}]")
                else:
                    prog.add_row({("PL", li, ph, t): 1.0,
                                  ("PL", li, ph, t - 1): -1.0},
                                 0.0, np.inf, f"seq[{ld.node},{ph},{t}]")

        for ln in view.lines:
            if ln.id in view.faulted:
                continue
            pair = {("BT", ln.id, ln.from_node, t): 1.0,
                    ("BT", ln.id, ln.to_node, t): 1.0}
            if ln.switchable:
                pair[("AL", ln.id, t)] = -1.0
                prog.add_eq(pair, 0.0, f"orient_sw[{ln.id},{t}]")
            else:
                prog.add_eq(pair, 1.0, f"orient[{ln.id},{t}]")

        for v in view.nodes:
            coeffs = {}
            for ln in view.lines:
                if ln.id in view.faulted:
                    continue
                if ln.from_node == v:
                    coeffs[("BT", ln.id, ln.to_node, t)] = 1.0
                elif ln.to_node == v:
                    coeffs[("BT", ln.id, ln.from_node, t)] = 1.0
            if not coeffs:
                continue
            if v == sub:
                for key in coeffs:
                    prog.set_bounds(key, 0.0, 0.0)   # the root never has a parent
            else:
                prog.add_row(coeffs, -np.inf, 1.0, f"one_parent[{v},{t}]")

    if centers is not None:
        for key in var_index.penalized_keys():
            if key not in centers:
                raise StateError(f"missing consensus center for {key!r}")
            prog.set_penalty(key, config.rho, float(centers[key]))
    return prog

