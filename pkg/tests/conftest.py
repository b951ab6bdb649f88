import numpy as np
import pytest

from dissect import mesh as mesh_mod
from dissect import tree as tree_mod


def make_problem(nx, ny, nz, p, extents=(1.0, 1.0, 1.0), case="trig", threshold=2.0):
    """Mesh with manufactured loads plus its annotated partition tree."""
    mesh = mesh_mod.generate_mesh(nx, ny, nz, extents, p)
    manufactured = mesh_mod.manufactured_problem(mesh, case) if case else None
    tree = tree_mod.build_tree([(e.id, e.bbox) for e in mesh.elements], threshold)
    tree_mod.assign_dofs(tree, mesh)
    return mesh, tree, manufactured


def unit_boxes_grid(n_side, count=None):
    """(id, bbox) pairs for unit cubes filling an n_side^3 grid."""
    out = []
    i = 0
    for iz in range(n_side):
        for iy in range(n_side):
            for ix in range(n_side):
                if count is not None and i >= count:
                    return out
                lo = np.array([ix, iy, iz], dtype=float)
                out.append((i, np.array([lo, lo + 1.0])))
                i += 1
    return out


@pytest.fixture(scope="session")
def cube222_p1():
    return make_problem(2, 2, 2, 1)


@pytest.fixture(scope="session")
def cube444_p2():
    return make_problem(4, 4, 4, 2)
