import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from quasidd import fem, partition
from quasidd.partition import PartitionError, decompose


@pytest.fixture(scope="module")
def mesh_dofs(small_system):
    return small_system.mesh, small_system.dofmap


@pytest.mark.parametrize("S", [1, 2, 4, 8, 16])
@pytest.mark.parametrize("overlap", [1, 2])
@pytest.mark.parametrize("layout", ["strips_x", "grid"])
def test_partition_of_unity(mesh_dofs, S, overlap, layout, rng):
    mesh, dofs = mesh_dofs
    dec = decompose(mesh, dofs, S, layout, overlap)
    V = rng.standard_normal((dofs.n_dofs, 5)) + 1j * rng.standard_normal((dofs.n_dofs, 5))
    out = partition.partition_of_unity(dec, V)
    assert np.linalg.norm(out - V) <= 1e-14 * np.linalg.norm(V)


def test_single_subdomain_is_whole_problem(small_system):
    dec = decompose(small_system.mesh, small_system.dofmap, 1)
    sub = dec[0]
    np.testing.assert_array_equal(sub.dofs, np.arange(small_system.n))
    np.testing.assert_array_equal(sub.weights, 1.0)
    assert len(sub.interface_edges) == 0
    lp = partition.build_local_problems(small_system, dec)[0]
    assert abs(lp.B - small_system.A).max() <= 1e-14 * abs(small_system.A).max()


def test_two_strips_half_weights_in_overlap(small_system):
    dec = decompose(small_system.mesh, small_system.dofmap, 2, "strips_x", 1)
    shared = np.intersect1d(dec[0].dofs, dec[1].dofs)
    assert len(shared) > 0
    for sub in dec:
        w = dict(zip(sub.dofs, sub.weights))
        np.testing.assert_array_equal([w[d] for d in shared], 0.5)
        own = np.setdiff1d(sub.dofs, shared)
        np.testing.assert_array_equal([w[d] for d in own], 1.0)


def test_local_sizes_exceed_global(small_system):
    dec = decompose(small_system.mesh, small_system.dofmap, 8, "grid", 2)
    assert sum(dec.sizes) > small_system.n
    assert all(np.all(np.diff(sub.dofs) > 0) for sub in dec)


def test_overlap_grows_with_layers(small_system):
    a = decompose(small_system.mesh, small_system.dofmap, 4, "strips_x", 1)
    b = decompose(small_system.mesh, small_system.dofmap, 4, "strips_x", 2)
    for sa, sb in zip(a, b):
        assert set(sa.dofs) < set(sb.dofs)


def test_interior_block_matches_global(small_system):
    """Rows of dofs away from the subdomain boundary coincide with A."""
    dec = decompose(small_system.mesh, small_system.dofmap, 4, "grid", 2)
    lps = partition.build_local_problems(small_system, dec)
    for s, (sub, lp) in enumerate(zip(dec, lps)):
        # interior dofs: every element touching them belongs to the subdomain
        owned = np.zeros(small_system.n, bool)
        owned[sub.dofs] = True
        touching = np.zeros(small_system.n, np.int64)
        ed = small_system.dofmap.elem_dofs
        inside = np.zeros(len(ed), bool)
        inside[sub.elements] = True
        for e_in, row in zip(inside, ed):
            if not e_in:
                touching[row[row >= 0]] += 1
        interior = np.nonzero(owned & (touching == 0))[0]
        loc = partition.local_index(dec, s)
        Ag = small_system.A[interior][:, sub.dofs].toarray()
        Al = lp.B[loc[interior]].toarray()
        np.testing.assert_allclose(Al, Ag, atol=1e-12 * abs(small_system.A).max())
        # and the rows couple to nothing outside the subdomain
        assert small_system.A[interior][:, ~owned].nnz == 0


def test_interface_edges_separate_subdomain(small_system):
    mesh = small_system.mesh
    dec = decompose(mesh, small_system.dofmap, 4, "grid", 1)
    obs_or_ext = {tuple(e) for e in mesh.edges}
    for sub in dec:
        assert len(sub.interface_edges) > 0
        for i0, j0, i1, j1 in sub.interface_edges:
            assert (i0, j0, i1, j1) not in obs_or_ext
            # one adjacent cell inside, the other kept but outside
            if i0 == i1:
                a, b = (i0 - 1, j0), (i0, j0)
            else:
                a, b = (i0, j0 - 1), (i0, j0)
            assert sub.cells[a] != sub.cells[b]
            assert mesh.cell_mask[a] and mesh.cell_mask[b]


def test_local_matrix_is_robin(small_system):
    dec = decompose(small_system.mesh, small_system.dofmap, 4, "strips_x", 1)
    lp = partition.build_local_problems(small_system, dec)[1]
    k = small_system.geometry.k
    diff = lp.B - (lp.A_neumann - 1j * k * lp.interface_mass)
    assert abs(diff).max() == 0
    # without Dirichlet elimination the interface mass integrates 1 to the interface length
    m = small_system.mesh
    full = fem.assemble(small_system.geometry, m, fem.build_dofmap(m, 2, eliminate_dirichlet=False))
    dec = decompose(m, full.dofmap, 4, "strips_x", 1)
    lp = partition.build_local_problems(full, dec)[1]
    one = np.ones(lp.B.shape[0])
    length = sum(np.hypot(m.xs[i1] - m.xs[i0], m.ys[j1] - m.ys[j0]) for i0, j0, i1, j1 in dec[1].interface_edges)
    assert (one @ lp.interface_mass @ one).real == pytest.approx(length)


def test_restrict_extend_roundtrip(small_system, rng):
    dec = decompose(small_system.mesh, small_system.dofmap, 4, "grid", 1)
    w = rng.standard_normal(dec[2].size)
    v = partition.extend(dec, 2, w)
    np.testing.assert_array_equal(partition.restrict(dec, 2, v), w)
    with pytest.raises(ValueError):
        partition.extend(dec, 2, w[:-1])
    with pytest.raises(ValueError):
        partition.restrict(dec, 2, w)


def test_errors(small_system):
    mesh, d = small_system.mesh, small_system.dofmap
    with pytest.raises(PartitionError):
        decompose(mesh, d, 0)
    with pytest.raises(PartitionError):
        decompose(mesh, d, 4, "spiral")
    with pytest.raises(PartitionError):
        decompose(mesh, d, 4, "strips_x", 0)
    with pytest.raises(PartitionError):
        decompose(mesh, d, mesh.shape[0] + 1, "strips_x")


def test_grid_shape():
    assert partition.grid_shape(16, 1.0) == (4, 4)
    assert partition.grid_shape(8, 2.0) == (4, 2)
    assert partition.grid_shape(7, 1.0) in {(7, 1), (1, 7)}


def test_decomposition_csv(tmp_path, small_system):
    dec = decompose(small_system.mesh, small_system.dofmap, 2, "strips_x", 1)
    partition.write_decomposition_csv(tmp_path / "d.csv", dec, small_system.dofmap.coords)
    lines = (tmp_path / "d.csv").read_text().splitlines()
    assert lines[0] == "dof,x,y,subdomain,weight"
    assert len(lines) - 1 == sum(dec.sizes)


@settings(max_examples=20, deadline=None)
@given(S=st.integers(1, 12), overlap=st.integers(1, 3), layout=st.sampled_from(["strips_x", "grid"]),
       seed=st.integers(0, 1000))
def test_partition_of_unity_property(small_system, S, overlap, layout, seed):
    dec = decompose(small_system.mesh, small_system.dofmap, S, layout, overlap)
    v = np.random.default_rng(seed).standard_normal(small_system.n)
    assert np.linalg.norm(partition.partition_of_unity(dec, v) - v) <= 1e-14 * np.linalg.norm(v)
    np.testing.assert_array_equal(dec.multiplicity, sum(np.isin(np.arange(dec.n), s.dofs) for s in dec))
