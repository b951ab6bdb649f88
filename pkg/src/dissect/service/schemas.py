"""Pydantic request/response models of the solver service."""

from typing import List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator


class MeshParams(BaseModel):
    nx: int = Field(ge=1)
    ny: int = Field(ge=1)
    nz: int = Field(ge=1)
    extents: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    degree: int = Field(default=1, ge=1)
    case: Optional[Literal["poly2", "trig"]] = "trig"


class ElementRecord(BaseModel):
    id: int
    dofs: List[int]
    k_lower: List[float]
    f: List[float]
    bbox: Optional[List[List[float]]] = None


class MeshDocument(BaseModel):
    n_dofs: int
    elements: List[ElementRecord]
    extents: Optional[List[float]] = None


class MeshSource(BaseModel):
    """Exactly one of a generator parameter set or a full mesh document."""

    params: Optional[MeshParams] = None
    document: Optional[MeshDocument] = None

    @model_validator(mode="after")
    def _exactly_one(self):
        if (self.params is None) == (self.document is None):
            raise ValueError("provide exactly one of 'params' or 'document'")
        return self


class SolverOptions(BaseModel):
    mode: Literal["seq", "par", "static-levelcut"] = "seq"
    workers: int = Field(default=4, ge=1)
    traders: int = Field(default=2, ge=1)
    alpha: float = Field(default=2.0, ge=1.0)
    aspect_threshold: float = Field(default=2.0, ge=1.0)
    latency: Tuple[float, float] = (0.0, 0.0)
    seed: Optional[int] = None  # reserved; the pipeline is deterministic


class TraceRow(BaseModel):
    worker_id: int
    task_id: int
    start: int
    end: int


class MetricsSummary(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    mean_omega: float
    frac_above_0_9: float = Field(alias="frac_above_0.9")
    min_omega: float
    speedup: float
    efficiency: float
    n_workers: int
    n_traders: int
    phase: str
    omegas: List[float]


class SolveRequest(BaseModel):
    mesh: MeshSource
    options: SolverOptions = SolverOptions()
    include_solution: bool = True
    include_cache: bool = False
    include_traces: bool = True
    include_tree: bool = False


class SolveResponse(BaseModel):
    n_dofs: int
    n_nodes: int
    tree_depth: int
    mode: str
    solution: Optional[List[float]] = None
    traces: Optional[List[TraceRow]] = None
    traces_down: Optional[List[TraceRow]] = None
    metrics: Optional[MetricsSummary] = None
    cache_b64: Optional[str] = None
    tree: Optional[dict] = None


class VerifyRequest(BaseModel):
    mesh: MeshSource
    aspect_threshold: float = Field(default=2.0, ge=1.0)
    tolerance: float = 1e-8


class VerifyResponse(BaseModel):
    n_dofs: int
    max_rel_error: float
    residual_rel: float
    tolerance: float
    passed: bool


class Modification(BaseModel):
    element_id: int
    factor: float = Field(gt=0.0)


class ResolveRequest(BaseModel):
    cache_b64: str
    modifications: List[Modification] = []
    include_solution: bool = True
    include_cache: bool = False


class ResolveResponse(BaseModel):
    recompute_count: int
    n_tasks: int
    solution: Optional[List[float]] = None
    cache_b64: Optional[str] = None


class ReportRequest(BaseModel):
    traces: List[TraceRow]
    n_workers: Optional[int] = None
    n_traders: int = 0
    t_seq: Optional[int] = None


class SessionCreateRequest(BaseModel):
    mesh: MeshSource
    aspect_threshold: float = Field(default=2.0, ge=1.0)


class SessionInfo(BaseModel):
    session_id: str
    n_dofs: int
    n_nodes: int
    tree_depth: int
    resolve_count: int


class SessionResolveRequest(BaseModel):
    modifications: List[Modification]
    include_solution: bool = False


class SessionResolveResponse(BaseModel):
    session_id: str
    recompute_count: int
    n_tasks: int
    max_abs_change: float
    solution: Optional[List[float]] = None


class ServiceInfo(BaseModel):
    name: str
    version: str
    endpoints: List[str]
