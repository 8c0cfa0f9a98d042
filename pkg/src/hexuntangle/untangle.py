"""Outer untangling loop: eps schedule, tet escalation, boundary relaxation, blobs."""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .energy import ActiveTetSet, EnergyModel, EnergyParams, chi
from .mesh import HexMesh, hex_vertex_neighbors
from .metrics import BoundaryMovementReport, boundary_report
from .optimizer import OptimizeBudget, minimize
from .tets import TetTable, enumerate_tet_patterns
from .validity import DEFAULT_MAX_DEPTH, METHODS, ValidityReport, mesh_validity

log = logging.getLogger(__name__)

SIGMA_FLOOR = 0.1
FAST_EPS_FACTOR = 0.2
FAST_EPS_MIN_GAIN = 1e-4
STUCK_EPS_RATIO = 1e2
STUCK_REL_CHANGE = 1e-12
STRATEGIES = ("global", "blob-whole", "blob-individual")


# --- eps schedule ---------------------------------------------------------------


def sigma_k(f_prev: float, f_next: float) -> float:
    return max(SIGMA_FLOOR, 1.0 - f_next / f_prev)


def update_epsilon(f_prev: float, f_next: float, eps: float, d_min: float) -> float:
    # 1 - sigma taken directly; 1 - (1 - r) would cancel when F barely changes
    keep = min(1.0 - SIGMA_FLOOR, f_next / f_prev)
    mu = keep * chi(d_min, eps)
    if d_min < mu:
        return 2.0 * math.sqrt(mu * (mu - d_min))
    return 0.0


def fast_epsilon_applicable(d_min: float, d_min_prev, eps: float) -> bool:
    if d_min_prev is None or d_min_prev == 0:
        return False
    return d_min < 0 and eps > abs(d_min) and (d_min - d_min_prev) / abs(d_min_prev) > FAST_EPS_MIN_GAIN


def fast_epsilon(d_min: float) -> float:
    if d_min >= 0:
        raise ValueError("fast eps update needs a negative det_min")
    return -FAST_EPS_FACTOR * d_min


def stuck_check(eps, d_min, d_min_prev, inv_count, inv_count_prev) -> bool:
    if d_min_prev is None or d_min_prev == 0 or inv_count_prev is None:
        return False
    return (
        STUCK_EPS_RATIO * eps < abs(d_min)
        and inv_count - inv_count_prev == 0
        and abs((d_min - d_min_prev) / d_min_prev) < STUCK_REL_CHANGE
    )


# --- blobs ----------------------------------------------------------------------


@dataclass
class Blob:
    core: frozenset
    rings: list  # rings[i] = hexes exactly i + 1 adjacency hops from the core
    movable: frozenset
    layers: int

    @property
    def ring(self) -> frozenset:
        return frozenset().union(*self.rings) if self.rings else frozenset()

    @property
    def support(self) -> frozenset:
        return self.core | self.ring


def _grow_rings(mesh, core, layers):
    seen = set(core)
    frontier = set(core)
    rings = []
    for _ in range(layers):
        nxt = set()
        for h in frontier:
            nxt |= hex_vertex_neighbors(mesh, h)
        nxt -= seen
        rings.append(frozenset(nxt))
        seen |= nxt
        frontier = nxt
    return rings


def make_blob(mesh: HexMesh, core, layers: int, unlocked=()) -> Blob:
    core = frozenset(int(h) for h in core)
    rings = _grow_rings(mesh, core, layers)
    inner = set(core).union(*rings[: layers - 1])
    verts = set(int(v) for h in inner for v in mesh.hexes[h])
    unlocked = set(unlocked)
    movable = frozenset(v for v in verts if not mesh.boundary_flags[v] or v in unlocked)
    return Blob(core, rings, movable, layers)


def build_blobs(mesh: HexMesh, invalid, layers: int = 1, unlocked=()) -> list[Blob]:
    """Connected components of ``invalid`` (vertex sharing) plus neighbour rings."""
    if layers < 1:
        raise ValueError("layers must be >= 1")
    invalid = set(int(h) for h in invalid)
    blobs = []
    todo = sorted(invalid)
    seen = set()
    for start in todo:
        if start in seen:
            continue
        comp, stack = set(), [start]
        seen.add(start)
        while stack:
            h = stack.pop()
            comp.add(h)
            for n in hex_vertex_neighbors(mesh, h):
                if n in invalid and n not in seen:
                    seen.add(n)
                    stack.append(n)
        blobs.append(make_blob(mesh, comp, layers, unlocked))
    return blobs


# --- configuration / telemetry ----------------------------------------------------


@dataclass
class UntangleConfig:
    strategy: str = "blob-whole"
    validity: str = "bezier"
    penalty_factor: float = 1e6
    lam: float = 0.0
    inner_iterations: int = 100
    max_outer_iterations: int = 10000
    fast_epsilon: bool = True
    boundary: str = "auto"  # locked | auto
    initial_tets: str = "corner"  # corner | all
    layers: int = 1
    layer_growth: bool | None = None  # None: on for blob-individual only
    max_layers: int = 5
    max_depth: int = DEFAULT_MAX_DEPTH
    snap_back: bool = True
    gradient_tolerance: float = 1e-10
    stall_limit: int = 3

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.validity not in METHODS:
            raise ValueError(f"unknown validity method {self.validity!r}")
        if self.boundary not in ("locked", "auto"):
            raise ValueError("boundary must be 'locked' or 'auto'")
        if self.initial_tets not in ("corner", "all"):
            raise ValueError("initial_tets must be 'corner' or 'all'")
        if self.penalty_factor <= 0 or self.inner_iterations < 1 or self.max_outer_iterations < 0 or self.layers < 1:
            raise ValueError("penalty_factor, inner_iterations, layers must be positive")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.layer_growth is None:
            self.layer_growth = self.strategy == "blob-individual"


@dataclass
class IterationRecord:
    k: int
    epsilon: float
    det_min: float
    invalid_count: int
    f_before: float
    f_after: float
    penalty_energy: float
    active_tet_count: int
    unlocked_boundary_count: int
    epsilon_next: float = math.nan
    eps_rule: str = ""
    escalated: int = 0
    blob: int = -1
    optimizer: str = ""


LOG_FIELDS = [f for f in IterationRecord.__dataclass_fields__]


def records_to_csv(records) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=LOG_FIELDS, lineterminator="\n")
    w.writeheader()
    for r in records:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in asdict(r).items()})
    return buf.getvalue()


@dataclass
class UntangleResult:
    mesh: HexMesh
    success: bool
    iterations: int
    records: list
    boundary: BoundaryMovementReport
    report: ValidityReport
    ever_unlocked: frozenset
    optimizer_calls: int = 0
    chi_nonpositive_events: int = 0
    escalations: list = field(default_factory=list)  # (k, hex ids) per-hex events
    global_escalation_at: int | None = None
    status: str = ""


@dataclass
class UntangleState:
    mesh: HexMesh
    full: np.ndarray
    eps: float = 1.0
    unlocked: set = field(default_factory=set)
    global_escalated: bool = False
    d_prev: float | None = None
    inv_prev: int | None = None
    k: int = 0
    optimizer_calls: int = 0
    chi_events: int = 0
    stall: int = 0
    layers: int = 1


# --- main driver ------------------------------------------------------------------


class Untangler:
    def __init__(self, mesh: HexMesh, config: UntangleConfig | None = None, table: TetTable | None = None):
        self.source = mesh
        self.config = config or UntangleConfig()
        self.table = table or enumerate_tet_patterns()
        self.records: list[IterationRecord] = []
        self.escalations: list = []
        self.global_escalation_at = None
        work = mesh.copy()
        full = np.full(mesh.n_hexes, self.config.initial_tets == "all")
        self.state = UntangleState(work, full, layers=self.config.layers)
        self.budget = OptimizeBudget(self.config.inner_iterations, self.config.gradient_tolerance)

    # helpers

    def validity(self) -> ValidityReport:
        return mesh_validity(self.state.mesh, self.config.validity, self.table, self.config.max_depth)

    def escalate_tets(self, report: ValidityReport, hexes=None) -> list[int]:
        """Activate all 58 patterns on invalid hexes whose corner dets are positive."""
        st = self.state
        cand = report.invalid_ids if hexes is None else [h for h in report.invalid_ids if h in hexes]
        new = [h for h in cand if not st.full[h] and report.corner_det_min[h] > 0]
        if new:
            st.full[new] = True
            self.escalations.append((st.k, new))
        return new

    def escalate_all(self):
        self.state.full[:] = True
        self.state.global_escalated = True
        self.global_escalation_at = self.state.k

    def unlock_boundary(self, report: ValidityReport):
        st, mesh = self.state, self.state.mesh
        for h in report.invalid_ids:
            for v in mesh.hexes[h]:
                if mesh.boundary_flags[v]:
                    st.unlocked.add(int(v))

    def _model(self, support, eps) -> EnergyModel:
        st = self.state
        params = EnergyParams(eps, self.config.lam, self.config.penalty_factor, frozenset(st.unlocked))
        return EnergyModel(st.mesh, ActiveTetSet.from_flags(support, st.full), params, self.table)

    def _free_mask(self, movable=None) -> np.ndarray:
        mesh = self.state.mesh
        if movable is None:
            free = ~mesh.boundary_flags.copy()
            free[list(self.state.unlocked)] = True
        else:
            free = np.zeros(mesh.n_vertices, dtype=bool)
            free[list(movable)] = True
        return np.repeat(free, 3)

    def det_min(self, support) -> float:
        return float(self._model(support, 1.0).determinants().min())

    def _support(self, report):
        cfg, st = self.config, self.state
        if cfg.strategy == "global":
            return np.arange(st.mesh.n_hexes), None
        blobs = build_blobs(st.mesh, report.invalid_ids, st.layers, st.unlocked)
        support = sorted(set().union(*(b.support for b in blobs)))
        movable = set().union(*(b.movable for b in blobs))
        return support, movable

    def step(self, support, movable, blob_id=-1):
        """One outer iteration at fixed eps and active set."""
        st = self.state
        model = self._model(support, st.eps)
        x0 = st.mesh.vertices.ravel().copy()
        free = self._free_mask(movable)
        try:
            out = minimize(model.value_and_grad, x0, free, self.budget, hessian=model.hessian)
        finally:
            st.chi_events += model.chi_nonpositive
        st.optimizer_calls += 1
        st.mesh.vertices[:] = out.x.reshape(-1, 3)
        bd = model.breakdown(out.x)
        rec = IterationRecord(
            k=st.k,
            epsilon=st.eps,
            det_min=bd.det_min,
            invalid_count=-1,
            f_before=out.f_before,
            f_after=out.f_after,
            penalty_energy=bd.penalty,
            active_tet_count=model.active.count(self.table),
            unlocked_boundary_count=len(st.unlocked),
            blob=blob_id,
            optimizer=f"{out.reason}:{out.iterations}",
        )
        return out, rec

    def schedule(self, rec, out, report, support_fn):
        """Escalation, eps update, stuck fallback and boundary relaxation.

        ``support_fn()`` returns the hex support the next step will use; the
        eps update acts on det_min over that support's active tets.
        """
        cfg, st = self.config, self.state
        eps_old = st.eps
        new = self.escalate_tets(report)
        rec.escalated = len(new)
        support = support_fn()
        d = self.det_min(support)

        def next_eps(d_cur):
            if cfg.fast_epsilon and fast_epsilon_applicable(d_cur, st.d_prev, eps_old):
                return fast_epsilon(d_cur), "fast"
            return update_epsilon(out.f_before, out.f_after, eps_old, d_cur), "standard"

        eps, rule = next_eps(d)
        event = ""
        if stuck_check(eps, d, st.d_prev, report.invalid_count, st.inv_prev):
            if not st.global_escalated:
                self.escalate_all()
                support = support_fn()
                d = self.det_min(support)
                eps, rule = next_eps(d)
                rule += "+global58"
                rec.escalated += 1
            elif cfg.layer_growth and st.layers < cfg.max_layers:
                st.layers += 1
                event = "grew"
                rule += f"+layers{st.layers}"
            else:
                event = "stuck"
        if cfg.boundary == "auto" and rule.split("+")[0] != "fast":
            self.unlock_boundary(report)

        no_progress = out.iterations == 0 and eps == eps_old and not new and "+" not in rule
        st.stall = st.stall + 1 if no_progress else 0
        st.eps = eps
        st.d_prev = d
        st.inv_prev = report.invalid_count
        rec.epsilon_next = eps
        rec.eps_rule = rule
        return event

    def _finish(self, success, status, report) -> UntangleResult:
        st = self.state
        if success and self.config.snap_back and st.unlocked:
            self._snap_back()
            report = self.validity()
            success = report.valid
        bnd = boundary_report(self.source, st.mesh, st.unlocked)
        return UntangleResult(
            mesh=st.mesh,
            success=success,
            iterations=st.k,
            records=self.records,
            boundary=bnd,
            report=report,
            ever_unlocked=frozenset(st.unlocked),
            optimizer_calls=st.optimizer_calls,
            chi_nonpositive_events=st.chi_events,
            escalations=self.escalations,
            global_escalation_at=self.global_escalation_at,
            status=status,
        )

    def _snap_back(self):
        """Return unlocked boundary vertices to their input position where validity allows."""
        mesh = self.state.mesh
        vh = mesh.vertex_hexes()
        from .validity import classify_hexes, HexClass

        for v in sorted(self.state.unlocked):
            if np.array_equal(mesh.vertices[v], mesh.original_positions[v]):
                continue
            keep = mesh.vertices[v].copy()
            mesh.vertices[v] = mesh.original_positions[v]
            hs = vh[v]
            classes, _ = classify_hexes(mesh.vertices[mesh.hexes[hs]], self.config.validity, self.table, self.config.max_depth)
            if any(c is not HexClass.VALID for c in classes):
                mesh.vertices[v] = keep

    # strategies

    def run(self) -> UntangleResult:
        cfg, st = self.config, self.state
        report = self.validity()
        if report.valid:
            return self._finish(True, "already valid", report)
        self.escalate_tets(report)
        if cfg.strategy == "blob-individual":
            return self._run_individual(report)

        support, movable = self._support(report)
        st.d_prev = self.det_min(support)
        st.inv_prev = report.invalid_count
        while st.k < cfg.max_outer_iterations:
            out, rec = self.step(support, movable)
            report = self.validity()
            rec.invalid_count = report.invalid_count
            self.records.append(rec)
            log.info("k=%d eps=%.3e dmin=%.3e invalid=%d F=%.6e->%.6e", st.k, rec.epsilon, rec.det_min, rec.invalid_count, rec.f_before, rec.f_after)
            st.k += 1
            if report.valid:
                rec.epsilon_next = st.eps
                return self._finish(True, "valid", report)

            holder = {}

            def support_fn():
                holder["s"] = self._support(report)
                return holder["s"][0]

            self.schedule(rec, out, report, support_fn)
            support, movable = holder["s"]
            if st.stall >= cfg.stall_limit:
                return self._finish(False, "stalled", report)
        return self._finish(False, "max outer iterations", report)

    def _run_individual(self, report) -> UntangleResult:
        cfg, st = self.config, self.state
        failed: set[frozenset] = set()
        blob_no = 0
        while st.k < cfg.max_outer_iterations:
            if report.valid:
                return self._finish(True, "valid", report)
            blobs = [b for b in build_blobs(st.mesh, report.invalid_ids, cfg.layers, st.unlocked) if b.core not in failed]
            if not blobs:
                return self._finish(False, "blobs failed", report)
            core = blobs[0].core
            st.layers = cfg.layers
            blob = blobs[0]
            # every blob starts its own eps schedule
            st.eps, st.inv_prev, st.stall = 1.0, report.invalid_count, 0
            st.d_prev = self.det_min(sorted(blob.support))
            solved = False
            while st.k < cfg.max_outer_iterations:
                out, rec = self.step(sorted(blob.support), blob.movable, blob_no)
                report = self.validity()
                rec.invalid_count = report.invalid_count
                self.records.append(rec)
                st.k += 1
                if all(report.classes[h].value == "valid" for h in blob.core):
                    solved = True
                    break
                event = self.schedule(rec, out, report, lambda: sorted(blob.support))
                if event == "grew" or st.unlocked - set(blob.movable):
                    blob = make_blob(st.mesh, core, st.layers, st.unlocked)
                if event == "stuck" or st.stall >= cfg.stall_limit:
                    break
            if not solved:
                failed.add(core)
            blob_no += 1
        return self._finish(report.valid, "valid" if report.valid else "max outer iterations", report)


def untangle(mesh: HexMesh, config: UntangleConfig | None = None, table: TetTable | None = None) -> UntangleResult:
    return Untangler(mesh, config, table).run()
