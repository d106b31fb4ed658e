"""Planar spring-lattice representation of a finger.

Topology for n units (ids in build order):

    base nodes   B_0 .. B_n     on the limiting layer (y = 0), pitch per unit
    top nodes    T_0 .. T_{n-1} over each unit's mid-span at y = -(H_i + t_ch)
    tip node     TIP            end wall top, above B_n at the last unit's height

    rigid   B_i-T_i, B_{i+1}-T_i per unit, plus the end wall B_n-TIP
    linear  B_i-B_{i+1} (limiting-layer stretching, k_l of unit i)
    nonlin  T_i-T_{i+1} (dome of unit i; the last spans T_{n-1}-TIP)
    torsion see BuildOptions.torsion_attachment

    node count 2n + 2; element count 4n + 1 plus the torsional elements.

The chamber side sits at negative y so that dome inversion (extension of the
top chain) curls the finger toward +y, matching the sign convention of the
design targets.  Base of unit 1 (B_0, B_1) is clamped.

Pressure faces: each inter-unit gap at B_{i+1} is a chamber with two wall
faces (B_{i+1}, T_i) and (B_{i+1}, T_next); pressurizing pushes the walls
apart along their current normals, driving the nonlinear spring of unit i.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import DegenerateElement, GeometryInfeasible
from .geometry import FingerGeometry
from .springs import SpringParams, snap_threshold, spring_params
from . import backends

PITCH_MODES = ("uc", "uc_plus_sep", "length_plus_sep", "stack", "stack_walls")
TORSION_MODES = ("layer", "mast", "none")
MAST_HEIGHT_MODES = ("dome", "dome_layer", "half_cell")
# Length over which limiting-layer bending concentrates at a joint.  "sep"
# uses the printed constant unchanged (hinge = the separation gap); the
# alternatives spread the hinge over the cavity, the cell, or the node pitch.
TORSION_HINGES = ("sep", "cavity", "cell", "pitch")


@dataclass(frozen=True)
class BuildOptions:
    """Lattice construction knobs.

    pitch_mode: node pitch along the finger.  "uc" places base nodes one cell
        size apart (cells tile the finger; cavity length and separation enter
        only through the spring constants).  The alternatives use
        UC + U_sep or U_L + U_sep.
    torsion_attachment: "mast" attaches each unit's two bending springs
        between its rigid mast and its own layer segment (they engage only
        through triangle distortion, leaving inter-unit hinges governed by
        the dome springs); "layer" places one spring per interior joint on
        the layer chain (collinear at build), which resists global curvature
        directly; "none" omits them.
    end_wall_torsion: add a bending spring at the wall joint B_n.
    rigid_factor: penalty stiffness multiple for the rigid links.
    mass_scale: multiplies all lumped masses (dynamics time-scale knob).
    contact_factor: stiffness multiple of k_b for the quadratic contact stop
        engaging when a dome spring extends past its travel d (the everted
        dome pressing into the neighboring wall); 0 disables.
    kb_relax_tau / kb_relax_depth: optional first-order relaxation of k_b
        while a unit is held inverted (off when tau == 0).
    """

    pitch_mode: str = "uc"
    torsion_attachment: str = "mast"
    torsion_hinge: str = "sep"
    end_wall_torsion: bool = False
    mast_height_mode: str = "dome"
    mast_height_override: float = 0.0
    tip_at: str = "last_top"
    rigid_factor: float = 1e4
    contact_factor: float = 25.0
    mass_scale: float = 1.0
    kb_relax_tau: float = 0.0
    kb_relax_depth: float = 0.3

    def __post_init__(self):
        if self.pitch_mode not in PITCH_MODES:
            raise ValueError(f"pitch_mode must be one of {PITCH_MODES}")
        if self.torsion_attachment not in TORSION_MODES:
            raise ValueError(f"torsion_attachment must be one of {TORSION_MODES}")
        if self.mast_height_mode not in MAST_HEIGHT_MODES:
            raise ValueError(f"mast_height_mode must be one of {MAST_HEIGHT_MODES}")
        if self.tip_at not in ("wall", "last_top"):
            raise ValueError("tip_at must be 'wall' or 'last_top'")
        if self.torsion_hinge not in TORSION_HINGES:
            raise ValueError(f"torsion_hinge must be one of {TORSION_HINGES}")


class ElementKind(Enum):
    LINEAR = "linear"
    NONLINEAR = "nonlinear"
    TORSIONAL = "torsional"
    RIGID = "rigid"


@dataclass(frozen=True)
class Node:
    id: int
    position: tuple[float, float]
    on_limiting_layer: bool


@dataclass(frozen=True)
class Element:
    kind: ElementKind
    node_ids: tuple[int, ...]
    rest_length: float = 0.0
    rest_angle: float = 0.0
    stiffness: float = 0.0
    unit: int = -1
    params: SpringParams | None = None


@dataclass
class SystemState:
    """Flat coordinates [x0, y0, x1, y1, ...], velocities, and time."""

    q: np.ndarray
    v: np.ndarray
    time: float = 0.0

    def copy(self) -> "SystemState":
        return SystemState(self.q.copy(), self.v.copy(), self.time)


@dataclass
class LatticeModel:
    finger: FingerGeometry
    options: BuildOptions
    nodes: list[Node]
    elements: list[Element]
    fixed_dof: frozenset[int]
    masses: np.ndarray                    # per node, ton
    unit_params: list[SpringParams]
    base_ids: list[int]
    top_ids: list[int]                    # per-unit top node; tip appended last
    tip_id: int
    q0: np.ndarray                        # as-built coordinates
    arrays: dict = field(repr=False, default_factory=dict)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_dof(self) -> int:
        return 2 * len(self.nodes)

    @property
    def report_tip_id(self) -> int:
        """Node whose coordinates are reported as the finger tip."""
        return self.tip_id if self.options.tip_at == "wall" else self.top_ids[-1]

    def rest_state(self) -> SystemState:
        return SystemState(self.q0.copy(), np.zeros_like(self.q0), 0.0)

    def nonlinear_extensions(self, q: np.ndarray) -> np.ndarray:
        a = self.arrays
        pos = q.reshape(-1, 2)
        dvec = pos[a["nl_ij"][:, 0]] - pos[a["nl_ij"][:, 1]]
        return np.hypot(dvec[:, 0], dvec[:, 1]) - a["nl_s"]


def _unit_pitch(u, mode: str) -> float:
    if mode == "uc":
        return u.unit_cell_size
    if mode == "uc_plus_sep":
        return u.unit_cell_size + u.unit_separation
    if mode == "stack":
        # full repeating stack: cavity + separation + both chamber walls + dome sheets
        return (u.unit_length + u.unit_separation + 2.0 * u.chamber_thickness
                + 2.0 * u.dome_thickness)
    if mode == "stack_walls":
        return u.unit_length + u.unit_separation + 2.0 * u.chamber_thickness
    return u.unit_length + u.unit_separation


def build_lattice(f: FingerGeometry, options: BuildOptions | None = None) -> LatticeModel:
    """Assemble the lattice; the as-built configuration is an exact equilibrium."""
    opts = options or BuildOptions()
    n = f.n_units
    params = [spring_params(u, f.material) for u in f.units]

    def mast_h(u):
        if opts.mast_height_override > 0.0:
            return opts.mast_height_override
        if opts.mast_height_mode == "dome":
            return u.dome_height + u.chamber_thickness
        if opts.mast_height_mode == "dome_layer":
            return u.dome_height + u.chamber_thickness + u.limiting_layer_thickness
        return 0.5 * u.unit_cell_size

    # Node coordinates.
    base_x = [0.0]
    for u in f.units:
        base_x.append(base_x[-1] + _unit_pitch(u, opts.pitch_mode))
    nodes: list[Node] = []
    for i in range(n + 1):
        nodes.append(Node(i, (base_x[i], 0.0), True))
    top_ids = []
    for i, u in enumerate(f.units):
        nid = n + 1 + i
        nodes.append(Node(nid, (0.5 * (base_x[i] + base_x[i + 1]), -mast_h(u)), False))
        top_ids.append(nid)
    tip_id = 2 * n + 1
    nodes.append(Node(tip_id, (base_x[n], -mast_h(f.units[-1])), False))

    q0 = np.array([c for nd in nodes for c in nd.position], dtype=float)
    pos = q0.reshape(-1, 2)

    def dist(i, j):
        return float(np.hypot(*(pos[i] - pos[j])))

    def angle(a, v, b):
        e0 = pos[a] - pos[v]
        e1 = pos[b] - pos[v]
        c = np.dot(e0, e1) / (np.linalg.norm(e0) * np.linalg.norm(e1))
        return float(np.arccos(np.clip(c, -1.0, 1.0)))

    elements: list[Element] = []
    k_rigid = opts.rigid_factor * max(max(p.k_l, p.k_b) for p in params)

    def k_theta_eff(i):
        u = f.units[i]
        if opts.torsion_hinge == "sep":
            hinge = u.unit_separation
        elif opts.torsion_hinge == "cavity":
            hinge = u.unit_length
        elif opts.torsion_hinge == "cell":
            hinge = u.unit_cell_size
        else:
            hinge = _unit_pitch(u, opts.pitch_mode)
        return params[i].k_theta * u.unit_separation / hinge

    for i, p in enumerate(params):
        elements.append(Element(ElementKind.LINEAR, (i, i + 1), dist(i, i + 1), 0.0, p.k_l, i, p))
    for i, p in enumerate(params):
        t = top_ids[i]
        elements.append(Element(ElementKind.RIGID, (i, t), dist(i, t), 0.0, k_rigid, i, p))
        elements.append(Element(ElementKind.RIGID, (i + 1, t), dist(i + 1, t), 0.0, k_rigid, i, p))
    elements.append(Element(ElementKind.RIGID, (n, tip_id), dist(n, tip_id), 0.0, k_rigid, n - 1, params[-1]))
    for i, p in enumerate(params):
        a = top_ids[i]
        b = top_ids[i + 1] if i + 1 < n else tip_id
        elements.append(Element(ElementKind.NONLINEAR, (a, b), dist(a, b), 0.0, p.k_b, i, p))

    if opts.torsion_attachment == "layer":
        for i in range(1, n):
            elements.append(Element(
                ElementKind.TORSIONAL, (i - 1, i, i + 1), 0.0,
                angle(i - 1, i, i + 1), k_theta_eff(i), i, params[i]))
        if opts.end_wall_torsion:
            elements.append(Element(
                ElementKind.TORSIONAL, (n - 1, n, tip_id), 0.0,
                angle(n - 1, n, tip_id), k_theta_eff(n - 1), n - 1, params[-1]))
    elif opts.torsion_attachment == "mast":
        for i, p in enumerate(params):
            t = top_ids[i]
            elements.append(Element(
                ElementKind.TORSIONAL, (t, i, i + 1), 0.0, angle(t, i, i + 1), k_theta_eff(i), i, p))
            elements.append(Element(
                ElementKind.TORSIONAL, (t, i + 1, i), 0.0, angle(t, i + 1, i), k_theta_eff(i), i, p))
        if opts.end_wall_torsion:
            elements.append(Element(
                ElementKind.TORSIONAL, (n - 1, n, tip_id), 0.0,
                angle(n - 1, n, tip_id), k_theta_eff(n - 1), n - 1, params[-1]))

    for e in elements:
        if e.kind is not ElementKind.TORSIONAL and e.rest_length <= 0.0:
            raise GeometryInfeasible(
                f"{e.kind.value} element {e.node_ids} has rest length {e.rest_length:.4g}")

    # Mass lumping: unit volume UC*U_L*(t_ch + t_lim + 2t) split over the
    # unit's three nodes; the tip wall gets one top-node share of the last unit.
    masses = np.zeros(len(nodes))
    rho = f.material.density
    for i, u in enumerate(f.units):
        vol = u.unit_cell_size * u.unit_length * (
            u.chamber_thickness + u.limiting_layer_thickness + 2.0 * u.dome_thickness)
        share = rho * vol / 3.0
        masses[i] += share
        masses[i + 1] += share
        masses[top_ids[i]] += share
    masses[tip_id] += rho * f.units[-1].unit_cell_size * f.units[-1].unit_length * (
        f.units[-1].chamber_thickness + f.units[-1].limiting_layer_thickness
        + 2.0 * f.units[-1].dome_thickness) / 3.0
    masses *= opts.mass_scale

    fixed = frozenset({0, 1, 2, 3})  # B_0 and B_1, x and y

    model = LatticeModel(
        finger=f, options=opts, nodes=nodes, elements=elements,
        fixed_dof=fixed, masses=masses, unit_params=params,
        base_ids=list(range(n + 1)), top_ids=top_ids, tip_id=tip_id, q0=q0,
    )
    model.arrays = _pack_arrays(model)
    return model


def _pack_arrays(model: LatticeModel) -> dict:
    lin, nl, tor = [], [], []
    for e in model.elements:
        if e.kind in (ElementKind.LINEAR, ElementKind.RIGID):
            lin.append(e)
        elif e.kind is ElementKind.NONLINEAR:
            nl.append(e)
        else:
            tor.append(e)
    a = {
        "lin_ij": np.array([e.node_ids for e in lin], dtype=np.int64).reshape(-1, 2),
        "lin_k": np.array([e.stiffness for e in lin]),
        "lin_s": np.array([e.rest_length for e in lin]),
        "nl_ij": np.array([e.node_ids for e in nl], dtype=np.int64).reshape(-1, 2),
        "nl_kb": np.array([e.params.k_b for e in nl]),
        "nl_alpha": np.array([e.params.alpha for e in nl]),
        "nl_d": np.array([e.params.d for e in nl]),
        "nl_s": np.array([e.rest_length for e in nl]),
        "nl_kc": np.array([model.options.contact_factor * e.params.k_b for e in nl]),
        "nl_gap": np.array([
            model.finger.units[e.unit].unit_separation
            + model.finger.units[e.unit].chamber_thickness / 2.0
            + model.finger.units[e.unit].dome_thickness / 2.0 for e in nl]),
        "nl_unit": np.array([e.unit for e in nl], dtype=np.int64),
        "tor_ijk": np.array([e.node_ids for e in tor], dtype=np.int64).reshape(-1, 3),
        "tor_k": np.array([e.stiffness for e in tor]),
        "tor_th0": np.array([e.rest_angle for e in tor]),
    }
    a["nl_thr"] = np.array(
        [snap_threshold(e.params.alpha, e.params.d) for e in nl])
    pair_ij = np.vstack([a["lin_ij"], a["nl_ij"]]) if len(nl) else a["lin_ij"]
    a["pair_ij"] = pair_ij
    a["pair_s"] = np.concatenate([a["lin_s"], a["nl_s"]])
    mask = np.zeros(model.n_dof, dtype=bool)
    mask[list(model.fixed_dof)] = True
    a["fixed_mask"] = mask
    a["free"] = np.nonzero(~mask)[0].astype(np.int64)
    a["masses_dof"] = np.repeat(model.masses, 2)
    # Faces per chamber wall: edge runs base joint -> wall top.  The normal
    # sign is fixed at build relative to the edge's body frame (the wall
    # rotates rigidly with its unit), so the follower force direction is
    # smooth in the state and cannot flip however violently the chain whips.
    fe, fo, fw = [], [], []
    n = model.finger.n_units
    pos0 = model.q0.reshape(-1, 2)

    def orient(edge, anchor, toward):
        e = pos0[edge[1]] - pos0[edge[0]]
        perp = np.array([-e[1], e[0]])
        s = float(np.sign(perp @ (pos0[anchor] - 0.5 * (pos0[edge[0]] + pos0[edge[1]]))))
        return s if toward else -s

    for i in range(n):
        joint = i + 1
        t_prev = model.top_ids[i]
        t_next = model.top_ids[i + 1] if i + 1 < n else model.tip_id
        w = model.finger.units[i].channel_width
        # back wall of the gap belongs to unit i: pushed toward its own far
        # base node B_i; front wall toward B_{i+2}; the end wall away from
        # B_{n-1}
        fe.append((joint, t_prev)); fo.append(orient((joint, t_prev), i, True)); fw.append(w)
        if i + 1 < n:
            fe.append((joint, t_next)); fo.append(orient((joint, t_next), i + 2, True)); fw.append(w)
        else:
            fe.append((joint, t_next)); fo.append(orient((joint, t_next), n - 1, False)); fw.append(w)
    a["face_edge"] = np.array(fe, dtype=np.int64).reshape(-1, 2)
    a["face_orient"] = np.array(fo, dtype=np.float64)
    a["face_w"] = np.array(fw)
    a["eta_int"] = model.finger.material.eta_internal
    a["eta_iso"] = model.finger.material.eta_isotropic
    a["relax_tau"] = model.options.kb_relax_tau
    a["relax_depth"] = model.options.kb_relax_depth
    return a


def _elastic(model: LatticeModel, q: np.ndarray, kb_scale=None):
    a = model.arrays
    e, g, status = backends.active.elastic_energy_grad(
        q, a["lin_ij"], a["lin_k"], a["lin_s"],
        a["nl_ij"], a["nl_kb"], a["nl_alpha"], a["nl_d"], a["nl_s"], a["nl_kc"], a["nl_gap"],
        a["tor_ijk"], a["tor_k"], a["tor_th0"], kb_scale)
    if status:
        raise DegenerateElement("coincident nodes or zero-length torsional ray")
    return e, g


def total_energy(model: LatticeModel, state: SystemState | np.ndarray) -> float:
    """Sum of linear, nonlinear, torsional, and rigid-penalty energies (N*mm)."""
    q = state.q if isinstance(state, SystemState) else state
    return _elastic(model, np.asarray(q, dtype=float))[0]


def energy_gradient(model: LatticeModel, state: SystemState | np.ndarray) -> np.ndarray:
    """dE/dq over all dofs; entries at fixed dofs are reported, not masked."""
    q = state.q if isinstance(state, SystemState) else state
    return _elastic(model, np.asarray(q, dtype=float))[1]


def dump_lattice(model: LatticeModel, q: np.ndarray | None = None) -> str:
    """Plain-text record stream (one node or element per line) for plotting."""
    q = model.q0 if q is None else q
    pos = q.reshape(-1, 2)
    lines = ["# kind\tid\tfields"]
    for nd in model.nodes:
        lines.append(
            f"node\t{nd.id}\t{pos[nd.id][0]:.10g}\t{pos[nd.id][1]:.10g}\t"
            f"{int(nd.on_limiting_layer)}")
    for i, e in enumerate(model.elements):
        ids = ",".join(str(j) for j in e.node_ids)
        ref = e.rest_length if e.kind is not ElementKind.TORSIONAL else e.rest_angle
        lines.append(f"element\t{i}\t{e.kind.value}\t{ids}\t{ref:.10g}\t{e.stiffness:.10g}")
    return "\n".join(lines) + "\n"
