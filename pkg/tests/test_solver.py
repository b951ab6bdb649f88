"""Condensation kernels, the nested-dissection drivers and re-solve."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from conftest import make_problem
from dissect import mesh as M
from dissect import solver as S
from dissect import tree as T
from dissect.errors import (
    AssemblyScopeError,
    FormatError,
    IncompleteSolutionError,
    InvalidArgumentError,
    SingularSystemError,
)


class StubNode:
    def __init__(self, node_id, eliminated, interface):
        self.id = node_id
        self.eliminated_dofs = eliminated
        self.interface_dofs = interface


def random_spd(rng, n):
    a = rng.standard_normal((n, n))
    return a @ a.T + n * np.eye(n)


def schur_block(block):
    return S.ElementBlock(
        source=block[0], dof_ids=np.array(block[1]), K=np.array(block[2], float),
        f=np.array(block[3], float),
    )


# ---------------------------------------------------------------------------
# assemble
# ---------------------------------------------------------------------------


def test_scalar_superposition():
    node = StubNode(0, [7], [])
    contribs = [
        schur_block((0, [7], [[3.0]], [1.0])),
        schur_block((1, [7], [[4.0]], [2.0])),
    ]
    sys_ = S.assemble(contribs, node)
    assert sys_.K.tolist() == [[7.0]]
    assert sys_.d.tolist() == [3.0]


def test_disjoint_contributions_block_diagonal():
    node = StubNode(0, [0, 1], [])
    contribs = [
        schur_block((0, [0], [[2.0]], [1.0])),
        schur_block((1, [1], [[5.0]], [0.0])),
    ]
    sys_ = S.assemble(contribs, node)
    assert sys_.K.tolist() == [[2.0, 0.0], [0.0, 5.0]]


def test_assembly_order_is_canonical():
    rng = np.random.default_rng(0)
    node = StubNode(0, [0, 1, 2], [3])
    contribs = []
    for src in range(6):
        ids = rng.permutation(4)[:3]
        mat = rng.standard_normal((3, 3))
        mat = mat + mat.T
        contribs.append(
            S.SchurContribution(
                source=src, dof_ids=np.sort(ids), S=mat, g=rng.standard_normal(3)
            )
        )
    base = S.assemble(contribs, node)
    flipped = S.assemble(list(reversed(contribs)), node)
    assert np.array_equal(base.K, flipped.K)
    assert np.array_equal(base.d, flipped.d)


def test_out_of_scope_dof_rejected():
    node = StubNode(0, [0], [1])
    with pytest.raises(AssemblyScopeError):
        S.assemble([schur_block((0, [0, 99], np.eye(2), [0.0, 0.0]))], node)


# ---------------------------------------------------------------------------
# condense / back_substitute
# ---------------------------------------------------------------------------


def test_condense_nothing_to_eliminate():
    node = StubNode(0, [], [4, 5])
    sys_ = S.assemble([schur_block((0, [4, 5], [[2.0, 1.0], [1.0, 3.0]], [1.0, 2.0]))], node)
    con, rec = S.condense(sys_)
    assert np.array_equal(con.S, sys_.K)
    assert np.array_equal(con.g, sys_.d)
    assert rec.chol_lower.shape == (0, 0)


def test_condense_two_by_two_hand_example():
    node = StubNode(0, [0], [1])
    sys_ = S.assemble([schur_block((0, [0, 1], [[2.0, 1.0], [1.0, 2.0]], [1.0, 0.0]))], node)
    con, rec = S.condense(sys_)
    assert_allclose(con.S, [[1.5]], rtol=1e-15)
    assert_allclose(con.g, [-0.5], rtol=1e-15)
    u_i = S.back_substitute(rec, np.array([-1.0 / 3.0]))
    assert_allclose(u_i, [2.0 / 3.0], rtol=1e-14)
    # full-system check K [2/3, -1/3] = [1, 0]
    assert_allclose(sys_.K @ np.array([2.0 / 3.0, -1.0 / 3.0]), [1.0, 0.0], atol=1e-15)


def test_schur_matches_dense_inverse_single_interface():
    rng = np.random.default_rng(42)
    k_mat = random_spd(rng, 6)
    node = StubNode(0, list(range(5)), [5])
    sys_ = S.assemble(
        [schur_block((0, list(range(6)), k_mat, rng.standard_normal(6)))], node
    )
    con, _ = S.condense(sys_)
    oracle = 1.0 / np.linalg.inv(k_mat)[5, 5]
    assert_allclose(con.S[0, 0], oracle, rtol=1e-12)


@pytest.mark.parametrize("seed", range(8))
def test_schur_spd_preserved(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 21))
    ni = int(rng.integers(1, n))
    k_mat = random_spd(rng, n)
    node = StubNode(0, list(range(ni)), list(range(ni, n)))
    sys_ = S.assemble([schur_block((0, list(range(n)), k_mat, np.zeros(n)))], node)
    con, _ = S.condense(sys_)
    assert np.array_equal(con.S, con.S.T)
    assert np.linalg.eigvalsh(con.S).min() > 0.0


def test_two_stage_condensation_matches_one_stage():
    rng = np.random.default_rng(1)
    n, ni = 10, 6
    k_mat = random_spd(rng, n)
    d = rng.standard_normal(n)
    one = StubNode(0, list(range(ni)), list(range(ni, n)))
    sys_one = S.assemble([schur_block((0, list(range(n)), k_mat, d))], one)
    con_one, _ = S.condense(sys_one)

    first = StubNode(0, list(range(3)), list(range(3, n)))
    sys_first = S.assemble([schur_block((0, list(range(n)), k_mat, d))], first)
    con_first, _ = S.condense(sys_first)
    second = StubNode(1, list(range(3, ni)), list(range(ni, n)))
    sys_second = S.assemble([con_first], second)
    con_second, _ = S.condense(sys_second)

    scale = np.max(np.abs(con_one.S))
    assert np.max(np.abs(con_one.S - con_second.S)) <= 1e-10 * scale
    assert np.max(np.abs(con_one.g - con_second.g)) <= 1e-10 * max(np.max(np.abs(con_one.g)), 1.0)


def test_singular_pivot_names_dof():
    node = StubNode(0, [3, 4], [5])
    k_mat = np.array([[1.0, 1.0, 0.0], [1.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    sys_ = S.assemble([schur_block((0, [3, 4, 5], k_mat, np.zeros(3)))], node)
    with pytest.raises(SingularSystemError) as err:
        S.condense(sys_)
    assert err.value.dof_id == 4  # second pivot collapses


def test_back_substitute_without_interface():
    node = StubNode(0, [0, 1], [])
    sys_ = S.assemble([schur_block((0, [0, 1], [[2.0, 0.0], [0.0, 4.0]], [2.0, 8.0]))], node)
    _, rec = S.condense(sys_)
    assert_allclose(S.back_substitute(rec, np.zeros(0)), [1.0, 2.0], rtol=1e-15)


def test_back_substitute_zero_rhs():
    rng = np.random.default_rng(3)
    k_mat = random_spd(rng, 5)
    node = StubNode(0, [0, 1, 2], [3, 4])
    sys_ = S.assemble([schur_block((0, list(range(5)), k_mat, np.zeros(5)))], node)
    _, rec = S.condense(sys_)
    assert_allclose(S.back_substitute(rec, np.zeros(2)), np.zeros(3), atol=0.0)


def test_back_substitute_missing_value_rejected():
    node = StubNode(0, [0], [1])
    sys_ = S.assemble([schur_block((0, [0, 1], [[2.0, 1.0], [1.0, 2.0]], [1.0, 0.0]))], node)
    _, rec = S.condense(sys_)
    with pytest.raises(IncompleteSolutionError):
        S.back_substitute(rec, {})
    with pytest.raises(IncompleteSolutionError):
        S.back_substitute(rec, np.zeros(3))


# ---------------------------------------------------------------------------
# tree-level solves vs the dense oracle
# ---------------------------------------------------------------------------


def test_single_dof_problem_matches_oracle(cube222_p1):
    mesh, tree, _ = cube222_p1
    sol, _ = S.solve_sequential(tree, mesh)
    dense = S.dense_reference_solve(mesh)
    assert np.array_equal(sol.values, dense.values) or np.allclose(
        sol.values, dense.values, rtol=1e-14
    )


@pytest.mark.parametrize(
    "grid,p,case",
    [((4, 4, 4), 2, "trig"), ((3, 3, 3), 2, "poly2"), ((4, 1, 1), 2, "trig")],
)
def test_nested_dissection_matches_dense(grid, p, case):
    extents = (float(grid[0]), float(grid[1]), float(grid[2])) if grid[1] == 1 else (1.0, 1.0, 1.0)
    mesh, tree, _ = make_problem(*grid, p, extents=extents, case=case)
    sol, _ = S.solve_sequential(tree, mesh)
    dense = S.dense_reference_solve(mesh)
    denom = np.max(np.abs(dense.values))
    assert np.max(np.abs(sol.values - dense.values)) <= 1e-8 * denom
    assert S.global_residual(mesh, sol) <= 1e-8


def test_single_element_tree():
    mesh, tree, _ = make_problem(1, 1, 1, 3)
    assert tree.nodes[tree.root].is_leaf
    sol, cache = S.solve_sequential(tree, mesh)
    dense = S.dense_reference_solve(mesh)
    assert_allclose(sol.values, dense.values, rtol=1e-12)
    assert len(cache.records) == 1


def test_poly2_exact_for_quadratic_degree():
    # u = x(1-x)y(1-y)z(1-z) lies in the p=2 space: the discrete solution
    # reproduces it to round-off at the Gauss points
    mesh, tree, ms = make_problem(3, 3, 3, 2, case="poly2")
    sol, _ = S.solve_sequential(tree, mesh)
    err = M.solution_error_at_gauss(mesh, sol.values, ms.u)
    assert err < 1e-10


def test_h_convergence_order_at_least_two():
    errors = []
    for n in (2, 4):
        mesh, tree, ms = make_problem(n, n, n, 2, case="trig")
        sol = S.dense_reference_solve(mesh)
        errors.append(M.solution_error_at_gauss(mesh, sol.values, ms.u))
    assert errors[0] / errors[1] >= 4.0


def test_p_convergence_error_non_increasing():
    errors = []
    for p in (1, 2, 3):
        mesh, tree, ms = make_problem(3, 3, 3, p, case="trig")
        sol, _ = S.solve_sequential(tree, mesh)
        errors.append(M.solution_error_at_gauss(mesh, sol.values, ms.u))
    assert errors[0] >= errors[1] >= errors[2]


def test_relabeling_dofs_permutes_solution():
    mesh, tree, _ = make_problem(3, 3, 3, 1)
    base = S.dense_reference_solve(mesh)
    rng = np.random.default_rng(9)
    perm = rng.permutation(mesh.n_dofs)
    relabeled = M.Mesh(
        elements=[
            M.Element(
                id=e.id, corners=e.corners, degree=e.degree,
                dof_ids=perm[e.dof_ids], K=e.K, f=e.f, kept=e.kept, bbox=e.bbox,
            )
            for e in mesh.elements
        ],
        n_dofs=mesh.n_dofs,
        extents=mesh.extents,
    )
    other = S.dense_reference_solve(relabeled)
    assert_allclose(other.values[perm], base.values, rtol=1e-12)


# ---------------------------------------------------------------------------
# incremental re-solve
# ---------------------------------------------------------------------------


def test_no_modifications_is_identity(cube444_p2):
    mesh, tree, _ = cube444_p2
    sol, cache = S.solve_sequential(tree, mesh)
    res = S.incremental_resolve(tree, mesh, cache, {})
    assert res.recompute_count == 0
    assert np.array_equal(res.solution.values, sol.values)


def test_single_modification_recomputes_root_path(cube444_p2):
    mesh, tree, _ = cube444_p2
    _, cache = S.solve_sequential(tree, mesh)
    eid = 13
    res = S.incremental_resolve(tree, mesh, cache, {eid: 2.0})
    depth = tree.nodes[tree.element_leaf(eid)].depth
    assert res.recompute_count == depth + 1


def test_resolve_matches_from_scratch_bitwise(cube444_p2):
    mesh, tree, _ = cube444_p2
    _, cache = S.solve_sequential(tree, mesh)
    mods = {5: 2.0, 44: 0.25}
    res = S.incremental_resolve(tree, mesh, cache, mods)
    scratch, _ = S.solve_sequential(tree, S.apply_modifications(mesh, mods))
    assert np.array_equal(res.solution.values, scratch.values)


def test_untouched_records_reused_not_recomputed(cube444_p2):
    mesh, tree, _ = cube444_p2
    _, cache = S.solve_sequential(tree, mesh)
    res = S.incremental_resolve(tree, mesh, cache, {0: 3.0})
    dirty = set(res.dirty_nodes)
    for nid, rec in cache.records.items():
        if nid in dirty:
            assert res.cache.records[nid] is not rec
        else:
            assert res.cache.records[nid] is rec  # same object, bit for bit


def test_unknown_element_or_bad_factor_rejected(cube222_p1):
    mesh, tree, _ = cube222_p1
    _, cache = S.solve_sequential(tree, mesh)
    with pytest.raises(InvalidArgumentError):
        S.incremental_resolve(tree, mesh, cache, {999: 2.0})
    with pytest.raises(InvalidArgumentError):
        S.incremental_resolve(tree, mesh, cache, {0: -1.0})


# ---------------------------------------------------------------------------
# record cache persistence
# ---------------------------------------------------------------------------


def test_cache_file_roundtrip_bitwise(tmp_path, cube222_p1):
    mesh, tree, _ = cube222_p1
    _, cache = S.solve_sequential(tree, mesh)
    path = tmp_path / "cache.bin"
    S.save_record_cache(path, cache, mesh=mesh, meta={"aspect_threshold": 2.0})
    loaded, mesh2, meta = S.load_record_cache(path)
    assert meta["aspect_threshold"] == 2.0
    assert set(loaded.records) == set(cache.records)
    for nid in cache.records:
        assert np.array_equal(loaded.records[nid].chol_lower, cache.records[nid].chol_lower)
        assert np.array_equal(loaded.records[nid].coupling, cache.records[nid].coupling)
    for a, b in zip(mesh.elements, mesh2.elements):
        assert np.array_equal(a.K, b.K)


def test_cache_bad_magic_and_version(tmp_path):
    with pytest.raises(FormatError) as err:
        S.loads_record_cache(b"JUNKDATA")
    assert err.value.offset == 0
    blob = S.dumps_record_cache(S.RecordCache())
    bad = blob[:4] + b"\xff\x7f" + blob[6:]
    with pytest.raises(FormatError) as err:
        S.loads_record_cache(bad)
    assert err.value.offset == 4


def test_cache_resume_resolve_via_file(tmp_path, cube222_p1):
    mesh, tree, _ = cube222_p1
    _, cache = S.solve_sequential(tree, mesh)
    path = tmp_path / "cache.bin"
    S.save_record_cache(path, cache, mesh=mesh)
    loaded, mesh2, _ = S.load_record_cache(path)
    tree2 = T.build_tree([(e.id, e.bbox) for e in mesh2.elements], 2.0)
    T.assign_dofs(tree2, mesh2)
    res = S.incremental_resolve(tree2, mesh2, loaded, {3: 1.5})
    scratch, _ = S.solve_sequential(tree2, S.apply_modifications(mesh2, {3: 1.5}))
    assert np.array_equal(res.solution.values, scratch.values)
