"""Command-line client of the solver service.

Subcommands build the same request models the HTTP endpoints consume and,
by default, call the service handlers in-process; with ``--server URL``
the identical JSON goes over the wire instead. All file I/O (mesh JSON,
solution CSV, record cache, trace CSV, metrics files) happens on the
client side.

Exit status is 0 iff no module error occurred; any DissectError is turned
into a one-line diagnostic on stderr and exit status 1.
"""

import argparse
import base64
import csv
import json
import os
import sys

from . import __version__
from .errors import DissectError, FormatError
from .metrics import read_trace_csv
from .service import schemas
from .service import core as service_core
from .service.app import configure_logging


class ServiceClient:
    """Thin dispatch layer: in-process handlers or HTTP, same models."""

    def __init__(self, server=None):
        self.server = server.rstrip("/") if server else None

    def _post(self, path, payload, response_model):
        import httpx

        resp = httpx.post(
            f"{self.server}{path}", json=payload, timeout=httpx.Timeout(600.0)
        )
        if resp.status_code >= 400:
            try:
                detail = resp.json().get("detail", resp.text)
            except Exception:
                detail = resp.text
            raise DissectError(f"server rejected {path}: {detail}")
        data = resp.json()
        return response_model.model_validate(data) if response_model else data

    def mesh_generate(self, params):
        if self.server:
            return self._post("/mesh/generate", params.model_dump(mode="json"), None)
        _, doc = service_core.mesh_payload(params)
        return doc

    def solve(self, req):
        if self.server:
            return self._post(
                "/solve", req.model_dump(mode="json"), schemas.SolveResponse
            )
        return service_core.solve(req)

    def verify(self, req):
        if self.server:
            return self._post(
                "/verify", req.model_dump(mode="json"), schemas.VerifyResponse
            )
        return service_core.verify(req)

    def resolve(self, req):
        if self.server:
            return self._post(
                "/resolve", req.model_dump(mode="json"), schemas.ResolveResponse
            )
        return service_core.resolve(req)

    def report(self, req):
        if self.server:
            return self._post(
                "/report", req.model_dump(mode="json"), schemas.MetricsSummary
            )
        return service_core.trace_report(req)


# ---------------------------------------------------------------------------
# argument helpers
# ---------------------------------------------------------------------------


def _triple(text, kind=float):
    parts = text.split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected three comma-separated values: {text!r}")
    return tuple(kind(p) for p in parts)


def _pair(text):
    parts = text.split(",")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected 'c0,c1': {text!r}")
    return (float(parts[0]), float(parts[1]))


def _modifications(text):
    mods = []
    if not text:
        return mods
    for chunk in text.split(","):
        try:
            eid, factor = chunk.split(":")
            mods.append(
                schemas.Modification(element_id=int(eid), factor=float(factor))
            )
        except ValueError as exc:
            raise argparse.ArgumentTypeError(
                f"expected 'id:factor' entries, got {chunk!r}: {exc}"
            )
    return mods


def _add_mesh_args(parser, with_file=True):
    parser.add_argument("--nx", type=int, default=None)
    parser.add_argument("--ny", type=int, default=None)
    parser.add_argument("--nz", type=int, default=None)
    parser.add_argument(
        "--extents", type=lambda s: _triple(s), default=(1.0, 1.0, 1.0),
        metavar="LX,LY,LZ",
    )
    parser.add_argument("--degree", "-p", type=int, default=1)
    parser.add_argument(
        "--case", choices=["poly2", "trig", "none"], default="trig",
        help="manufactured load case written into the elements",
    )
    if with_file:
        parser.add_argument(
            "--mesh-file", default=None, help="read the mesh JSON instead of generating"
        )


def _mesh_source(args, with_file=True):
    has_grid = args.nx is not None or args.ny is not None or args.nz is not None
    mesh_file = getattr(args, "mesh_file", None) if with_file else None
    if mesh_file is not None and has_grid:
        raise DissectError("give either --mesh-file or --nx/--ny/--nz, not both")
    if mesh_file is not None:
        with open(mesh_file, "r") as fh:
            text = fh.read()
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise FormatError(
                f"invalid JSON in {mesh_file} at byte {exc.pos}: {exc.msg}",
                offset=exc.pos,
            )
        return schemas.MeshSource(document=schemas.MeshDocument.model_validate(doc))
    if not has_grid:
        raise DissectError("no mesh source: give --nx/--ny/--nz or --mesh-file")
    params = schemas.MeshParams(
        nx=args.nx or 1,
        ny=args.ny or 1,
        nz=args.nz or 1,
        extents=args.extents,
        degree=args.degree,
        case=None if args.case == "none" else args.case,
    )
    return schemas.MeshSource(params=params)


def _solver_options(args):
    return schemas.SolverOptions(
        mode=args.mode,
        workers=args.workers,
        traders=args.traders,
        alpha=args.alpha,
        aspect_threshold=args.aspect_threshold,
        latency=args.latency,
        seed=args.seed,
    )


# ---------------------------------------------------------------------------
# file writers
# ---------------------------------------------------------------------------


def _write_solution_csv(path, values):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["dof_id", "value"])
        for dof, value in enumerate(values):
            writer.writerow([dof, repr(float(value))])


def _write_trace_csv(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["worker_id", "task_id", "start", "end"])
        for r in rows:
            writer.writerow([r.worker_id, r.task_id, r.start, r.end])


def _write_metrics(summary, json_path=None, omega_csv=None):
    if json_path:
        with open(json_path, "w") as fh:
            json.dump(summary.model_dump(mode="json", by_alias=True), fh, indent=2)
    if omega_csv:
        with open(omega_csv, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["worker_id", "omega"])
            order = sorted(
                range(len(summary.omegas)), key=lambda i: -summary.omegas[i]
            )
            for rank, i in enumerate(order):
                writer.writerow([rank, repr(summary.omegas[i])])


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _cmd_mesh(args, client):
    source = _mesh_source(args, with_file=False)
    if source.params is None:
        raise DissectError("mesh subcommand generates meshes; give --nx/--ny/--nz")
    doc = client.mesh_generate(source.params)
    with open(args.output, "w") as fh:
        json.dump(doc, fh)
    print(f"mesh written to {args.output} (n_dofs={doc['n_dofs']}, "
          f"elements={len(doc['elements'])})")
    return 0


def _cmd_solve(args, client):
    req = schemas.SolveRequest(
        mesh=_mesh_source(args),
        options=_solver_options(args),
        include_solution=True,
        include_cache=args.cache is not None,
        include_traces=args.traces is not None or args.metrics_json is not None
        or args.omega_csv is not None,
        include_tree=args.tree_dump is not None,
    )
    resp = client.solve(req)
    if args.output:
        _write_solution_csv(args.output, resp.solution)
    if args.tree_dump:
        with open(args.tree_dump, "w") as fh:
            json.dump(resp.tree, fh, indent=2)
    if args.cache:
        with open(args.cache, "wb") as fh:
            fh.write(base64.b64decode(resp.cache_b64))
    if args.traces:
        if resp.traces is None:
            raise DissectError(f"mode {resp.mode} produced no traces")
        _write_trace_csv(args.traces, resp.traces)
    if args.traces_down and resp.traces_down is not None:
        _write_trace_csv(args.traces_down, resp.traces_down)
    if resp.metrics is not None:
        _write_metrics(resp.metrics, args.metrics_json, args.omega_csv)
    line = f"solved n_dofs={resp.n_dofs} nodes={resp.n_nodes} mode={resp.mode}"
    if resp.metrics is not None:
        line += f" mean_omega={resp.metrics.mean_omega:.4f} speedup={resp.metrics.speedup:.3f}"
    print(line)
    return 0


def _cmd_resolve(args, client):
    with open(args.cache, "rb") as fh:
        cache_b64 = base64.b64encode(fh.read()).decode()
    req = schemas.ResolveRequest(
        cache_b64=cache_b64,
        modifications=args.modify,
        include_solution=args.output is not None,
        include_cache=args.cache_out is not None,
    )
    resp = client.resolve(req)
    if args.output:
        _write_solution_csv(args.output, resp.solution)
    if args.cache_out:
        with open(args.cache_out, "wb") as fh:
            fh.write(base64.b64decode(resp.cache_b64))
    print(f"recompute_count={resp.recompute_count} of {resp.n_tasks} tasks")
    return 0


def _cmd_verify(args, client):
    req = schemas.VerifyRequest(
        mesh=_mesh_source(args),
        aspect_threshold=args.aspect_threshold,
        tolerance=args.tol,
    )
    resp = client.verify(req)
    status = "PASS" if resp.passed else "FAIL"
    print(
        f"max rel error = {resp.max_rel_error:.3e}  residual = {resp.residual_rel:.3e}  "
        f"n_dofs = {resp.n_dofs}  [{status}]"
    )
    return 0 if resp.passed else 1


def _cmd_report(args, client):
    rows = read_trace_csv(args.traces)
    req = schemas.ReportRequest(
        traces=[
            schemas.TraceRow(worker_id=w, task_id=t, start=s, end=e)
            for (w, t, s, e) in rows
        ],
        n_workers=args.workers,
        n_traders=args.traders,
        t_seq=args.t_seq,
    )
    summary = client.report(req)
    _write_metrics(summary, args.summary_json, args.omega_csv)
    print(
        f"workers={summary.n_workers} mean_omega={summary.mean_omega:.4f} "
        f"frac_above_0.9={summary.frac_above_0_9:.3f} speedup={summary.speedup:.3f}"
    )
    return 0


def _cmd_serve(args, client):
    import uvicorn

    from .service.app import create_app

    uvicorn.run(create_app(), host=args.host, port=args.port, log_level="info")
    return 0


# ---------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(
        prog="dissect",
        description="Nested-dissection solver with a dynamic task scheduler.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument(
        "--server", default=None, help="base URL of a running service; default in-process"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_mesh = sub.add_parser("mesh", help="generate a mesh and write its JSON")
    _add_mesh_args(p_mesh, with_file=False)
    p_mesh.add_argument("--output", "-o", required=True)
    p_mesh.set_defaults(func=_cmd_mesh)

    p_solve = sub.add_parser("solve", help="solve a problem, write artifacts")
    _add_mesh_args(p_solve)
    p_solve.add_argument("--mode", choices=["seq", "par", "static-levelcut"], default="seq")
    p_solve.add_argument("--workers", type=int, default=4)
    p_solve.add_argument("--traders", type=int, default=2)
    p_solve.add_argument("--alpha", type=float, default=2.0)
    p_solve.add_argument("--aspect-threshold", type=float, default=2.0)
    p_solve.add_argument("--latency", type=_pair, default=(0.0, 0.0), metavar="C0,C1")
    p_solve.add_argument("--seed", type=int, default=None, help="reserved; runs are deterministic")
    p_solve.add_argument("--output", "-o", default=None, help="solution CSV path")
    p_solve.add_argument("--cache", default=None, help="record cache output path")
    p_solve.add_argument("--traces", default=None, help="condensation-phase trace CSV")
    p_solve.add_argument("--traces-down", default=None, help="back-substitution trace CSV")
    p_solve.add_argument("--metrics-json", default=None)
    p_solve.add_argument("--omega-csv", default=None)
    p_solve.add_argument("--tree-dump", default=None, help="partition tree debug JSON")
    p_solve.set_defaults(func=_cmd_solve)

    p_res = sub.add_parser("resolve", help="incremental re-solve from a record cache")
    p_res.add_argument("--cache", required=True)
    p_res.add_argument(
        "--modify", type=_modifications, default=[], metavar="ID:FACTOR,...",
        help="element stiffness scalings to apply",
    )
    p_res.add_argument("--output", "-o", default=None)
    p_res.add_argument("--cache-out", default=None, help="write the updated cache")
    p_res.set_defaults(func=_cmd_resolve)

    p_ver = sub.add_parser("verify", help="compare against the dense reference solve")
    _add_mesh_args(p_ver)
    p_ver.add_argument("--aspect-threshold", type=float, default=2.0)
    p_ver.add_argument("--tol", type=float, default=1e-8)
    p_ver.set_defaults(func=_cmd_verify)

    p_rep = sub.add_parser("report", help="working-index metrics from a trace CSV")
    p_rep.add_argument("--traces", required=True)
    p_rep.add_argument("--workers", type=int, default=None)
    p_rep.add_argument("--traders", type=int, default=0)
    p_rep.add_argument("--t-seq", type=int, default=None)
    p_rep.add_argument("--summary-json", default=None)
    p_rep.add_argument("--omega-csv", default=None)
    p_rep.set_defaults(func=_cmd_report)

    p_srv = sub.add_parser("serve", help="run the HTTP service")
    p_srv.add_argument("--host", default="127.0.0.1")
    p_srv.add_argument("--port", type=int, default=8000)
    p_srv.set_defaults(func=_cmd_serve)

    return parser


def main(argv=None):
    configure_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    client = ServiceClient(server=args.server)
    try:
        return args.func(args, client)
    except DissectError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
