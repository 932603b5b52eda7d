import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bidpm.datasets import (DatasetError, GaussianRingSpec, SOURCE_RING, TARGET_RING, check_bijection, denormalize,
                            gen_ring, make_paired, make_toy, minibatch, normalization, normalize, rotation_map)
from bidpm.rng import Stream, derive_key, mix64


def test_component_mean_geometry():
    np.testing.assert_allclose(GaussianRingSpec(8, 1.0, 0.1).means()[2], [0.0, 1.0], atol=1e-15)
    np.testing.assert_allclose(GaussianRingSpec(8, 1.4, 0.1).means()[0], [1.4, 0.0], atol=1e-15)


def test_zero_std_collapses_to_means():
    spec = GaussianRingSpec(8, 1.0, 0.0)
    pts, labels = gen_ring(spec, 5)
    np.testing.assert_array_equal(pts, spec.means()[labels])


def test_law_of_large_numbers():
    spec = GaussianRingSpec(8, 1.0, 0.1, seed=11)
    pts, labels = gen_ring(spec, 10_000)
    for k in (0, 3):
        err = np.linalg.norm(pts[labels == k].mean(axis=0) - spec.means()[k])
        assert err < 5 * 0.1 / 100
        assert pts[labels == k].std(axis=0) == pytest.approx([0.1, 0.1], rel=0.05)


@pytest.mark.parametrize("kwargs", [dict(components=0), dict(radius=0.0), dict(std=-0.1)])
def test_ring_spec_invariants(kwargs):
    with pytest.raises(DatasetError):
        GaussianRingSpec(**kwargs)


def test_generation_is_pure():
    a = make_toy(16, 0.5, seed=3)
    b = make_toy(16, 0.5, seed=3)
    for name in ("source", "target", "paired_source", "paired_target", "unpaired_source", "unpaired_target"):
        assert getattr(a, name).tobytes() == getattr(b, name).tobytes()
    c = make_toy(16, 0.5, seed=4)
    assert not np.array_equal(a.source, c.source)


def test_dataset_arrays_are_read_only():
    ds = make_toy(4)
    with pytest.raises(ValueError):
        ds.source[0, 0] = 1.0


def test_full_pairing_has_empty_pools():
    ds = make_toy(16, 1.0)
    assert ds.n_paired == len(ds.source) == 128
    assert len(ds.unpaired_source) == len(ds.unpaired_target) == 0


def test_zero_pairing_has_empty_paired_slice():
    ds = make_toy(16, 0.0)
    assert ds.n_paired == 0
    assert len(ds.unpaired_source) == len(ds.unpaired_target) == 128


@pytest.mark.parametrize("rho", [0.01, 0.1, 0.5, 0.73])
def test_pair_count_and_label_audit(rho):
    ds = make_toy(32, rho, rotation_map(8), seed=2)
    n = len(ds.source)
    assert ds.n_paired == round(rho * n)
    src_lab = ds.source_labels[ds.paired_source]
    tgt_lab = ds.target_labels[ds.paired_target]
    np.testing.assert_array_equal(tgt_lab, (src_lab + 1) % 8)
    # paired and unpaired sets partition both sides
    assert sorted(np.concatenate([ds.paired_source, ds.unpaired_source]).tolist()) == list(range(n))
    assert sorted(np.concatenate([ds.paired_target, ds.unpaired_target]).tolist()) == list(range(n))


def test_partners_match_by_draw_order():
    ds = make_toy(8, 1.0, seed=1)
    for s, t in zip(ds.paired_source, ds.paired_target):
        k = ds.source_labels[s]
        j = s - k * 8  # draw index within its component
        assert ds.target_labels[t] == ds.pi[k]
        assert t == ds.pi[k] * 8 + j


def test_coupled_partners_share_noise():
    ds = make_toy(8, 1.0, seed=1)
    x, z = ds.paired_arrays()
    sl = ds.source_labels[ds.paired_source]
    xi_s = (x - SOURCE_RING.means()[sl]) / SOURCE_RING.std
    xi_t = (z - TARGET_RING.means()[(sl + 1) % 8]) / TARGET_RING.std
    np.testing.assert_allclose(xi_s, xi_t, atol=1e-12)


def test_uncoupled_partners_are_independent():
    ds = make_toy(64, 1.0, seed=1, coupled=False)
    x, z = ds.paired_arrays()
    sl = ds.source_labels[ds.paired_source]
    xi_s = (x - SOURCE_RING.means()[sl]) / SOURCE_RING.std
    xi_t = (z - TARGET_RING.means()[(sl + 1) % 8]) / TARGET_RING.std
    assert abs(np.corrcoef(xi_s[:, 0], xi_t[:, 0])[0, 1]) < 0.15


def test_custom_component_map():
    pi = (3, 0, 1, 2, 7, 4, 5, 6)
    ds = make_toy(8, 1.0, pi)
    np.testing.assert_array_equal(ds.target_labels[ds.paired_target],
                                  np.array(pi)[ds.source_labels[ds.paired_source]])


def test_errors():
    with pytest.raises(DatasetError):
        check_bijection((0, 0, 1), 3)
    with pytest.raises(DatasetError):
        make_toy(8, 1.5)
    src = (np.zeros((4, 2)), np.array([0, 0, 0, 1]))
    tgt = (np.zeros((4, 2)), np.array([0, 1, 1, 1]))
    with pytest.raises(DatasetError, match="no draw"):
        make_paired(src, tgt, (0, 1), 1.0)


def test_minibatch_all_paired():
    ds = make_toy(16, 1.0)
    b = minibatch(ds, 32, seed=0, step=0)
    assert len(b.x_paired) == 32 and len(b.x_unpaired) == 0 and len(b.z_unpaired) == 0


def test_minibatch_halves():
    ds = make_toy(16, 0.5)
    b = minibatch(ds, 32, seed=0, step=3)
    assert len(b.x_paired) == len(b.z_paired) == 16
    assert len(b.x_unpaired) == len(b.z_unpaired) == 16
    assert not b.warnings


def test_minibatch_is_deterministic():
    ds = make_toy(16, 0.5)
    a, b = minibatch(ds, 32, 5, 7), minibatch(ds, 32, 5, 7)
    for name in ("x_paired", "z_paired", "x_unpaired", "z_unpaired"):
        assert getattr(a, name).tobytes() == getattr(b, name).tobytes()


def test_one_epoch_covers_each_pair_once():
    ds = make_toy(16, 1.0)  # 128 pairs, batch 32 -> 4 steps per epoch
    x, _ = ds.paired_arrays()
    seen = np.concatenate([minibatch(ds, 32, 1, s).x_paired for s in range(4)])
    assert sorted(map(tuple, seen)) == sorted(map(tuple, x))
    # the next epoch is a different order of the same multiset
    nxt = np.concatenate([minibatch(ds, 32, 1, s).x_paired for s in range(4, 8)])
    assert sorted(map(tuple, nxt)) == sorted(map(tuple, x))
    assert not np.array_equal(seen, nxt)


def test_minibatch_pairs_stay_aligned():
    ds = make_toy(16, 0.5, seed=3)
    b = minibatch(ds, 16, 0, 2)
    partner = {tuple(ds.source[s]): tuple(ds.target[t]) for s, t in zip(ds.paired_source, ds.paired_target)}
    for x, z in zip(b.x_paired, b.z_paired):
        assert partner[tuple(x)] == tuple(z)


def test_minibatch_shrinks_to_small_pool_with_warning():
    ds = make_toy(16, 0.01)  # 1 pair out of 128
    b = minibatch(ds, 32, 0, 0)
    assert len(b.x_paired) == 1
    assert len(b.x_unpaired) == 16
    assert any("paired pool" in w for w in b.warnings)


def test_minibatch_errors():
    ds = make_toy(16, 0.5)
    with pytest.raises(DatasetError):
        minibatch(ds, 31, 0, 0)
    with pytest.raises(DatasetError):
        minibatch(ds, 0, 0, 0)


def test_normalization_round_trip():
    pts = make_toy(16).source
    c, h = normalization(pts)
    n = normalize(pts, c, h)
    assert n.min() >= -1 - 1e-15 and n.max() <= 1 + 1e-15
    np.testing.assert_allclose(denormalize(n, c, h), pts, atol=1e-12)


# -------------------------------------------------------------------- rng


def test_splitmix_reference_values():
    # first outputs of SplitMix64 seeded with 0 (published reference sequence)
    state, out = 0, []
    for _ in range(3):
        state = (state + 0x9E3779B97F4A7C15) % 2 ** 64
        out.append(mix64(state))
    assert out == [0xE220A8397B1DCDAF, 0x6E789E6AA1B965F4, 0x06C45D188009454F]


def test_stream_counter_access():
    s = Stream(7, "x")
    np.testing.assert_array_equal(s.bits(10)[4:], s.bits(6, offset=4))
    u = s.uniform(10_000)
    assert 0 < u.min() and u.max() < 1
    assert abs(u.mean() - 0.5) < 0.01
    z = s.normal(20_000)
    assert abs(z.mean()) < 0.03 and abs(z.std() - 1) < 0.02


def test_stream_labels_separate():
    assert derive_key(1, "a") != derive_key(1, "b")
    assert derive_key(1, "a", 2) == derive_key(1, "a", 2)
    assert not np.array_equal(Stream(1, "a").bits(4), Stream(1, "b").bits(4))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 40), st.integers(1, 200))
def test_permutation_is_a_permutation(seed, n):
    p = Stream(seed, "perm").permutation(n)
    assert sorted(p.tolist()) == list(range(n))
