from collections import deque
from fractions import Fraction
from itertools import product

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from skullrec.volume import DimsMismatch, Volume
from skullrec.voxel_ops import (
    CropRegion,
    PhantomSpec,
    RegionOutOfBounds,
    SpecDoesNotFit,
    area_weights,
    axial_region,
    bounding_box,
    boolean,
    crop,
    crop_axial,
    intersect,
    label_components,
    largest_component,
    make_phantom,
    phantom,
    resize_area,
    subtract,
    uncrop,
    union,
)


def fraction_weights(n_in, n_out):
    """Exact rational box-overlap weights."""
    w = [[Fraction(0)] * n_in for _ in range(n_out)]
    for j in range(n_out):
        a, b = Fraction(j * n_in, n_out), Fraction((j + 1) * n_in, n_out)
        for i in range(n_in):
            w[j][i] = max(Fraction(0), min(b, i + 1) - max(a, i)) / (b - a)
    return w


def flood_fill_components(mask: np.ndarray) -> list[set]:
    """BFS over 26-neighbours; components listed in C-order of first voxel."""
    seen = np.zeros(mask.shape, bool)
    comps = []
    offsets = [d for d in product((-1, 0, 1), repeat=3) if d != (0, 0, 0)]
    for start in zip(*np.nonzero(mask)):
        if seen[start]:
            continue
        comp, queue = set(), deque([start])
        seen[start] = True
        while queue:
            p = queue.popleft()
            comp.add(p)
            for d in offsets:
                q = tuple(a + b for a, b in zip(p, d))
                if all(0 <= c < n for c, n in zip(q, mask.shape)) and mask[q] and not seen[q]:
                    seen[q] = True
                    queue.append(q)
        comps.append(comp)
    return comps


# -- resize -----------------------------------------------------------------

@pytest.mark.parametrize("n_in, n_out", [(4, 2), (3, 5), (7, 3), (5, 5), (1, 4), (6, 1)])
def test_area_weights_match_exact_fractions(n_in, n_out):
    exact = np.array([[float(v) for v in row] for row in fraction_weights(n_in, n_out)])
    np.testing.assert_allclose(area_weights(n_in, n_out), exact, rtol=0, atol=1e-15)


def test_resize_constant():
    vol = Volume(np.ones((5, 7, 3), np.float32))
    for target in [(2, 3, 1), (9, 11, 6), (5, 7, 3)]:
        assert np.all(resize_area(vol, target).data == 1.0)


def test_resize_examples():
    vol = Volume(np.array([1, 1, 0, 0], np.float32).reshape(4, 1, 1))
    assert resize_area(vol, (2, 1, 1)).data.ravel().tolist() == [1.0, 0.0]
    cube = Volume(np.arange(8, dtype=np.float32).reshape(2, 2, 2))
    assert resize_area(cube, (1, 1, 1)).data.ravel().tolist() == [28 / 8]


def test_resize_u8_promotes_and_rescales_spacing():
    vol = Volume(np.ones((4, 4, 4), np.uint8), spacing=(1.0, 2.0, 0.5))
    out = resize_area(vol, (2, 8, 4))
    assert out.dtype == np.float32
    assert out.spacing == (2.0, 1.0, 0.5)


@settings(max_examples=30)
@given(st.integers(0, 2 ** 32 - 1), st.sampled_from([1, 2, 3, 4]))
def test_resize_integer_factor_is_block_mean(seed, k):
    rng = np.random.default_rng(seed)
    dims = tuple(int(k * rng.integers(1, 4)) for _ in range(3))
    data = rng.random(dims).astype(np.float32)
    out = resize_area(Volume(data), tuple(n // k for n in dims)).data
    blocks = data.astype(np.float64).reshape(dims[0] // k, k, dims[1] // k, k, dims[2] // k, k).mean(axis=(1, 3, 5))
    assert np.array_equal(out, blocks.astype(np.float32))


@settings(max_examples=30)
@given(st.integers(0, 2 ** 32 - 1))
def test_resize_matches_fraction_oracle(seed):
    rng = np.random.default_rng(seed)
    dims = tuple(int(n) for n in rng.integers(1, 6, 3))
    target = tuple(int(n) for n in rng.integers(1, 6, 3))
    data = rng.integers(0, 5, dims).astype(np.float32)
    ws = [fraction_weights(a, b) for a, b in zip(dims, target)]
    oracle = np.zeros(target)
    for j in product(*(range(n) for n in target)):
        acc = Fraction(0)
        for i in product(*(range(n) for n in dims)):
            w = ws[0][j[0]][i[0]] * ws[1][j[1]][i[1]] * ws[2][j[2]][i[2]]
            if w:
                acc += w * int(data[i])
        oracle[j] = float(acc)
    np.testing.assert_allclose(resize_area(Volume(data), target).data, oracle, rtol=1e-6, atol=1e-6)


@settings(max_examples=30)
@given(st.integers(0, 2 ** 32 - 1))
def test_resize_preserves_mean(seed):
    rng = np.random.default_rng(seed)
    target = tuple(int(n) for n in rng.integers(1, 6, 3))
    factors = rng.integers(1, 4, 3)
    dims = tuple(int(t * f) for t, f in zip(target, factors))
    data = rng.random(dims).astype(np.float32)
    out = resize_area(Volume(data), target).data
    assert abs(out.astype(np.float64).mean() - data.astype(np.float64).mean()) <= 1e-6 * abs(data.mean())
    # non-dividing target: within 1e-6 relative
    odd = tuple(int(n) for n in rng.integers(1, 7, 3))
    up = resize_area(Volume(data), odd).data.astype(np.float64)
    assert abs(up.mean() - data.astype(np.float64).mean()) <= 1e-6 * abs(data.mean())


# -- crop -------------------------------------------------------------------

def test_crop_identity_and_corner():
    vol = Volume(np.arange(60, dtype=np.uint8).reshape(3, 4, 5), (0.5, 1, 2), (10, 20, 30))
    assert crop(vol, CropRegion((0, 0, 0), vol.dims)) == vol
    corner = crop(vol, CropRegion((0, 0, 0), (1, 1, 1)))
    assert corner.data.tolist() == [[[0]]]


def test_crop_offsets_origin():
    vol = Volume(np.arange(60, dtype=np.uint8).reshape(3, 4, 5), (0.5, 1, 2), (10, 20, 30))
    out = crop(vol, CropRegion((1, 2, 3), (3, 4, 5)))
    assert out.dims == (2, 2, 2)
    assert out.data[0, 0, 0] == vol.data[1, 2, 3]
    assert out.origin == (10.5, 22.0, 36.0)


@pytest.mark.parametrize("lo, hi", [((0, 0, 0), (4, 4, 5)), ((-1, 0, 0), (2, 2, 2)), ((1, 1, 1), (1, 2, 2))])
def test_crop_out_of_bounds(lo, hi):
    vol = Volume(np.zeros((3, 4, 5), np.uint8))
    with pytest.raises(RegionOutOfBounds):
        crop(vol, CropRegion(lo, hi))


@settings(max_examples=40)
@given(st.integers(0, 2 ** 32 - 1))
def test_crop_uncrop_restores_region(seed):
    rng = np.random.default_rng(seed)
    dims = tuple(int(n) for n in rng.integers(1, 9, 3))
    vol = Volume(rng.integers(0, 2, dims, dtype=np.uint8), (1.5, 1, 0.5), (3, -2, 7))
    lo = tuple(int(rng.integers(0, n)) for n in dims)
    hi = tuple(int(rng.integers(l + 1, n + 1)) for l, n in zip(lo, dims))
    region = CropRegion(lo, hi)
    back = uncrop(crop(vol, region), region, dims)
    assert np.array_equal(back.data[region.slices], vol.data[region.slices])
    outside = np.ones(dims, bool)
    outside[region.slices] = False
    assert not back.data[outside].any()
    assert back.origin == vol.origin


def test_axial_crop_centered():
    vol = Volume(np.arange(10, dtype=np.uint8).reshape(1, 1, 10))
    assert crop_axial(vol, 4).data.ravel().tolist() == [3, 4, 5, 6]
    assert axial_region((4, 4, 3), 8) == CropRegion((0, 0, 0), (4, 4, 3))


def test_bounding_box():
    data = np.zeros((5, 5, 5), np.uint8)
    data[1, 2, 3] = data[3, 2, 1] = 1
    assert bounding_box(Volume(data)) == CropRegion((1, 2, 1), (4, 3, 4))
    assert bounding_box(Volume(np.zeros((2, 2, 2), np.uint8))) is None


# -- booleans ---------------------------------------------------------------

def test_boolean_examples():
    rng = np.random.default_rng(0)
    a = Volume(rng.integers(0, 2, (6, 6, 6), dtype=np.uint8))
    assert subtract(a, a).count() == 0
    complete = union(a, Volume(rng.integers(0, 2, (6, 6, 6), dtype=np.uint8)))
    assert union(a, subtract(complete, a)) == complete
    p = np.zeros((4, 4, 4), np.uint8)
    q = p.copy()
    p[0, 0, 0] = 1
    q[3, 3, 3] = 1
    assert intersect(Volume(p), Volume(q)).count() == 0
    assert union(Volume(p), Volume(q)).count() == 2


def test_boolean_errors():
    a = Volume(np.zeros((2, 2, 2), np.uint8))
    with pytest.raises(DimsMismatch):
        union(a, Volume(np.zeros((2, 2, 3), np.uint8)))
    with pytest.raises(ValueError):
        union(a, Volume(np.full((2, 2, 2), 3, np.uint8)))
    with pytest.raises(ValueError):
        boolean(a, a, "xor")


@settings(max_examples=40)
@given(st.integers(0, 2 ** 32 - 1))
def test_boolean_identities_vs_per_voxel_oracle(seed):
    rng = np.random.default_rng(seed)
    a, b = (Volume(rng.integers(0, 2, (8, 8, 8), dtype=np.uint8)) for _ in range(2))
    assert union(subtract(a, b), intersect(a, b)) == a
    u, i, s = union(a, b), intersect(a, b), subtract(a, b)
    for idx in product(range(8), repeat=3):
        x, y = bool(a.data[idx]), bool(b.data[idx])
        assert u.data[idx] == (x or y) and i.data[idx] == (x and y) and s.data[idx] == (x and not y)
    # De Morgan with complements taken against the full grid
    full = Volume(np.ones((8, 8, 8), np.uint8))
    assert subtract(full, union(a, b)) == intersect(subtract(full, a), subtract(full, b))
    assert subtract(full, intersect(a, b)) == union(subtract(full, a), subtract(full, b))


# -- components -------------------------------------------------------------

def test_largest_component_examples():
    blob = np.zeros((8, 8, 8), np.uint8)
    blob[1:3, 1:3, 1:4] = 1
    assert largest_component(Volume(blob)) == Volume(blob)
    ten = np.zeros((8, 8, 8), np.uint8)
    ten[0, 0, 0:5] = 1
    ten[1, 1, 0:5] = 1  # diagonal neighbour: same component under 26-connectivity
    ten[6, 6, 6] = 1
    out = largest_component(Volume(ten))
    assert out.count() == 10 and out.data[6, 6, 6] == 0
    empty = Volume(np.zeros((3, 3, 3), np.uint8))
    assert largest_component(empty) == empty


def test_largest_component_tie_goes_to_first_voxel():
    data = np.zeros((6, 6, 6), np.uint8)
    data[4, 0, 0] = 1  # x-fastest index 4
    data[0, 1, 0] = 1  # x-fastest index 6
    out = largest_component(Volume(data))
    assert out.data[4, 0, 0] == 1 and out.count() == 1


@settings(max_examples=25)
@given(st.integers(0, 2 ** 32 - 1), st.floats(0.05, 0.45))
def test_labels_match_flood_fill(seed, fill):
    rng = np.random.default_rng(seed)
    mask = (rng.random((7, 6, 5)) < fill).astype(np.uint8)
    labels, count = label_components(Volume(mask))
    comps = flood_fill_components(mask)
    assert count == len(comps)
    for comp in comps:
        assert len({int(labels[p]) for p in comp}) == 1
    assert sorted(np.bincount(labels.ravel())[1:].tolist()) == sorted(len(c) for c in comps)
    if comps:
        biggest = max(len(c) for c in comps)
        assert largest_component(Volume(mask)).count() == biggest


# -- phantoms ---------------------------------------------------------------

def test_phantom_deterministic():
    assert phantom(3, (24, 28, 20)) == phantom(3, (24, 28, 20))
    assert phantom(3, (24, 24, 24)) != phantom(4, (24, 24, 24))


@pytest.mark.parametrize("seed", range(4))
@pytest.mark.parametrize("dims", [(24, 24, 24), (32, 32, 32), (40, 36, 32)])
def test_phantom_geometry(seed, dims):
    spec = PhantomSpec.from_seed(seed, dims)
    vol = make_phantom(spec)
    assert vol.is_binary
    c = np.asarray(spec.center)
    mid = c + np.array([spec.radii[0] - spec.thickness / 2, 0, 0])
    assert vol.data[tuple(np.rint(mid).astype(int))] == 1
    assert vol.data[tuple(np.rint(c).astype(int))] == 0
    assert len(flood_fill_components(vol.data)) == 1


def test_phantom_does_not_fit():
    with pytest.raises(SpecDoesNotFit):
        phantom(0, (8, 8, 8))
    spec = PhantomSpec.from_seed(0, (32, 32, 32))
    bad = PhantomSpec(**{**spec.__dict__, "radii": (20.0, 20.0, 20.0)})
    with pytest.raises(SpecDoesNotFit):
        make_phantom(bad)
