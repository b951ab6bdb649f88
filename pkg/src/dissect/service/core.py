"""Service handlers: the one implementation behind both HTTP and CLI.

Every handler takes a request model and returns a response model, so the
CLI can call them in-process and a remote client can POST the same JSON.
"""

import itertools
import threading
import uuid

import numpy as np

from .. import metrics as metrics_mod
from .. import scheduler as scheduler_mod
from .. import solver as solver_mod
from .. import tree as tree_mod
from ..errors import InvalidArgumentError
from ..mesh import generate_mesh, manufactured_problem, mesh_from_dict, mesh_to_dict
from . import schemas

CACHE_META_VERSION = 1


def build_mesh(source: schemas.MeshSource):
    """Materialize a mesh from either generator parameters or a document."""
    if source.params is not None:
        p = source.params
        mesh = generate_mesh(p.nx, p.ny, p.nz, p.extents, p.degree)
        if p.case is not None:
            manufactured_problem(mesh, p.case)
        return mesh
    return mesh_from_dict(source.document.model_dump(exclude_none=True))


def build_annotated_tree(mesh, aspect_threshold):
    tree = tree_mod.build_tree(
        [(e.id, e.bbox) for e in mesh.elements], aspect_threshold
    )
    tree_mod.assign_dofs(tree, mesh)
    return tree


def mesh_payload(params: schemas.MeshParams):
    mesh = generate_mesh(params.nx, params.ny, params.nz, params.extents, params.degree)
    if params.case is not None:
        manufactured_problem(mesh, params.case)
    return mesh, mesh_to_dict(mesh)


def _trace_rows(result, phase):
    return [
        schemas.TraceRow(worker_id=w, task_id=task, start=start, end=end)
        for (w, task, start, end) in sorted(
            (w, task, s, e) for (w, s, e, task, ph) in result.intervals if ph == phase
        )
    ]


def _metrics_summary(result, tree, phase="up"):
    doc = metrics_mod.report(result, tree)
    rep = doc.phase_reports[phase]
    return schemas.MetricsSummary(
        mean_omega=rep.mean_omega,
        frac_above_0_9=rep.frac_above_0_9,
        min_omega=rep.min_omega,
        speedup=doc.speedup,
        efficiency=doc.efficiency,
        n_workers=doc.n_workers,
        n_traders=doc.n_traders,
        phase=phase,
        omegas=list(rep.omegas),
    )


def _cache_b64(cache, mesh, aspect_threshold):
    meta = {"version": CACHE_META_VERSION, "aspect_threshold": aspect_threshold}
    return solver_mod.cache_to_base64(cache, mesh=mesh, meta=meta)


def solve(req: schemas.SolveRequest) -> schemas.SolveResponse:
    mesh = build_mesh(req.mesh)
    opts = req.options
    tree = build_annotated_tree(mesh, opts.aspect_threshold)

    traces = traces_down = summary = None
    assignment = None
    if opts.mode == "seq":
        solution, cache = solver_mod.solve_sequential(tree, mesh)
    elif opts.mode == "par":
        assignment = tree_mod.partition_tasks(tree, opts.traders, opts.alpha)
        result = scheduler_mod.run_parallel(
            tree, mesh, assignment, opts.workers, latency=opts.latency
        )
        solution, cache = result.solution, result.cache
        if req.include_traces:
            traces = _trace_rows(result, "up")
            traces_down = _trace_rows(result, "down")
        summary = _metrics_summary(result, tree)
    else:  # static-levelcut
        result = scheduler_mod.run_static_levelcut(tree, opts.workers, mesh=mesh)
        solution, cache = result.solution, result.cache
        if req.include_traces:
            traces = _trace_rows(result, "up")
            traces_down = _trace_rows(result, "down")
        summary = _metrics_summary(result, tree)

    return schemas.SolveResponse(
        n_dofs=mesh.n_dofs,
        n_nodes=len(tree.nodes),
        tree_depth=tree.depth,
        mode=opts.mode,
        solution=list(solution.values) if req.include_solution else None,
        traces=traces,
        traces_down=traces_down,
        metrics=summary,
        cache_b64=_cache_b64(cache, mesh, opts.aspect_threshold)
        if req.include_cache
        else None,
        tree=tree_mod.tree_to_dict(tree, assignment) if req.include_tree else None,
    )


def verify(req: schemas.VerifyRequest) -> schemas.VerifyResponse:
    mesh = build_mesh(req.mesh)
    tree = build_annotated_tree(mesh, req.aspect_threshold)
    solution, _ = solver_mod.solve_sequential(tree, mesh)
    dense = solver_mod.dense_reference_solve(mesh)
    if mesh.n_dofs == 0:
        max_rel = 0.0
        residual = 0.0
    else:
        denom = float(np.max(np.abs(dense.values)))
        diff = float(np.max(np.abs(solution.values - dense.values)))
        max_rel = diff / denom if denom > 0 else diff
        residual = solver_mod.global_residual(mesh, solution)
    return schemas.VerifyResponse(
        n_dofs=mesh.n_dofs,
        max_rel_error=max_rel,
        residual_rel=residual,
        tolerance=req.tolerance,
        passed=max_rel <= req.tolerance and residual <= req.tolerance,
    )


def resolve(req: schemas.ResolveRequest) -> schemas.ResolveResponse:
    cache, mesh, meta = solver_mod.cache_from_base64(req.cache_b64)
    if mesh is None:
        raise InvalidArgumentError(
            "record cache does not embed a mesh; re-create it with solve"
        )
    tree = build_annotated_tree(mesh, meta.get("aspect_threshold", 2.0))
    mods = {m.element_id: m.factor for m in req.modifications}
    result = solver_mod.incremental_resolve(tree, mesh, cache, mods)
    return schemas.ResolveResponse(
        recompute_count=result.recompute_count,
        n_tasks=len(tree.nodes),
        solution=list(result.solution.values) if req.include_solution else None,
        cache_b64=_cache_b64(
            result.cache, result.mesh, meta.get("aspect_threshold", 2.0)
        )
        if req.include_cache
        else None,
    )


def trace_report(req: schemas.ReportRequest) -> schemas.MetricsSummary:
    rows = [(r.worker_id, r.task_id, r.start, r.end) for r in req.traces]
    doc = metrics_mod.report_from_intervals(
        rows, n_workers=req.n_workers, n_traders=req.n_traders, t_seq=req.t_seq
    )
    rep = doc.phase_reports["up"]
    return schemas.MetricsSummary(
        mean_omega=rep.mean_omega,
        frac_above_0_9=rep.frac_above_0_9,
        min_omega=rep.min_omega,
        speedup=doc.speedup,
        efficiency=doc.efficiency,
        n_workers=doc.n_workers,
        n_traders=doc.n_traders,
        phase="up",
        omegas=list(rep.omegas),
    )


class SteeringSession:
    """One interactive session: mesh, tree and records held in memory."""

    def __init__(self, session_id, mesh, tree):
        self.session_id = session_id
        self.mesh = mesh
        self.tree = tree
        solution, cache = solver_mod.solve_sequential(tree, mesh)
        self.solution = solution
        self.cache = cache
        self.resolve_count = 0

    def info(self):
        return schemas.SessionInfo(
            session_id=self.session_id,
            n_dofs=self.mesh.n_dofs,
            n_nodes=len(self.tree.nodes),
            tree_depth=self.tree.depth,
            resolve_count=self.resolve_count,
        )

    def resolve(self, req: schemas.SessionResolveRequest):
        mods = {m.element_id: m.factor for m in req.modifications}
        result = solver_mod.incremental_resolve(self.tree, self.mesh, self.cache, mods)
        if len(result.solution.values):
            change = float(
                np.max(np.abs(result.solution.values - self.solution.values))
            )
        else:
            change = 0.0
        self.mesh = result.mesh
        self.cache = result.cache
        self.solution = result.solution
        self.resolve_count += 1
        return schemas.SessionResolveResponse(
            session_id=self.session_id,
            recompute_count=result.recompute_count,
            n_tasks=len(self.tree.nodes),
            max_abs_change=change,
            solution=list(result.solution.values) if req.include_solution else None,
        )


class SessionStore:
    def __init__(self):
        self._lock = threading.Lock()
        self._sessions = {}
        self._counter = itertools.count()

    def create(self, req: schemas.SessionCreateRequest) -> SteeringSession:
        mesh = build_mesh(req.mesh)
        tree = build_annotated_tree(mesh, req.aspect_threshold)
        session_id = f"s{next(self._counter)}-{uuid.uuid4().hex[:8]}"
        session = SteeringSession(session_id, mesh, tree)
        with self._lock:
            self._sessions[session_id] = session
        return session

    def get(self, session_id) -> SteeringSession:
        with self._lock:
            if session_id not in self._sessions:
                raise KeyError(session_id)
            return self._sessions[session_id]

    def drop(self, session_id):
        with self._lock:
            return self._sessions.pop(session_id, None) is not None

    def __len__(self):
        with self._lock:
            return len(self._sessions)
