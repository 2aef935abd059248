import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from daglab import transforms as tf
from daglab.harness import collision_pair
from daglab.transforms import ImageGrid, Kind, PointKind, PointTransform, Transform

INVERTIBLE = [Transform(k) for k in Kind if Transform(k).invertible]
LOSSY = [Transform(k) for k in Kind if k.name.startswith("TRANSLATE")] + [
    Transform(Kind.CROP_CORNER, corner=c) for c in tf.CORNERS
]

grids = st.tuples(st.integers(1, 9), st.integers(1, 9), st.integers(1, 3)).flatmap(
    lambda shape: arrays(np.float64, shape, elements=st.floats(0.0, 1.0))
)


def test_catalogue_orders():
    assert [str(t) for t in tf.build_augmentation_set("rotation", 4)] == ["identity", "rot90", "rot180", "rot270"]
    assert [str(t) for t in tf.build_augmentation_set("flipping", 4)] == ["identity", "flip_lr", "flip_ud", "flip_both"]
    assert [str(t) for t in tf.build_augmentation_set("translation", 5, n_t=2)] == [
        "identity", "translate_up(2)", "translate_down(2)", "translate_left(2)", "translate_right(2)",
    ]
    assert len(tf.build_augmentation_set("cropping", 5)) == 5
    assert len(tf.build_augmentation_set("combined", 10)) == 10
    assert [str(t) for t in tf.build_augmentation_set("point_rotation", 4)] == [
        "identity", "plane_rot90", "plane_rot180", "plane_rot270",
    ]


@pytest.mark.parametrize("family", tf.FAMILIES)
def test_first_transform_is_identity(family):
    for k in range(1, tf.catalogue_size(family) + 1):
        first = tf.build_augmentation_set(family, k)[0]
        assert first.kind in (Kind.IDENTITY, PointKind.IDENTITY)


def test_catalogue_bounds():
    with pytest.raises(ValueError):
        tf.build_augmentation_set("rotation", 5)
    with pytest.raises(ValueError):
        tf.build_augmentation_set("rotation", 0)
    with pytest.raises(ValueError):
        tf.build_augmentation_set("shear", 2)


def test_rotation_is_counter_clockwise():
    g = ImageGrid(np.array([[1.0, 0.0], [0.0, 0.0]]))
    # the top-left pixel moves to the bottom-left
    np.testing.assert_array_equal(tf.apply(Transform(Kind.ROT90), g).pixels[:, :, 0], [[0.0, 0.0], [1.0, 0.0]])


def test_fliprot_composition():
    g = ImageGrid(np.random.default_rng(0).uniform(size=(4, 5, 2)))
    rot = tf.apply(Transform(Kind.ROT90), g)
    assert tf.apply(Transform(Kind.FLIPROT90_LR), g) == tf.apply(Transform(Kind.FLIP_LR), rot)
    assert tf.apply(Transform(Kind.FLIPROT90_UD), g) == tf.apply(Transform(Kind.FLIP_UD), rot)


@pytest.mark.parametrize("t", INVERTIBLE, ids=str)
@settings(max_examples=30, deadline=None)
@given(pixels=grids)
def test_permutation_transforms_round_trip_exactly(t, pixels):
    g = ImageGrid(pixels)
    assert tf.invert(t, tf.apply(t, g)) == g


@pytest.mark.parametrize("t", INVERTIBLE, ids=str)
@settings(max_examples=30, deadline=None)
@given(pixels=grids)
def test_permutation_transforms_keep_the_pixel_multiset(t, pixels):
    out = tf.apply(t, ImageGrid(pixels)).pixels
    np.testing.assert_array_equal(np.sort(out, axis=None), np.sort(pixels, axis=None))


@pytest.mark.parametrize("t", LOSSY, ids=str)
def test_lossy_transforms_refuse_inversion(t):
    g = ImageGrid(np.random.default_rng(1).uniform(size=(8, 8, 1)))
    with pytest.raises(tf.NonInvertible):
        tf.invert(t, tf.apply(t, g))


@pytest.mark.parametrize("t", LOSSY, ids=str)
def test_lossy_transforms_have_collisions(t):
    a, b = collision_pair(t)
    assert a != b
    assert tf.apply(t, a) == tf.apply(t, b)


def test_translation_zero_fills():
    g = ImageGrid(np.ones((6, 6, 1)))
    out = tf.apply(Transform(Kind.TRANSLATE_DOWN, n_t=2), g).pixels[:, :, 0]
    assert np.all(out[:2] == 0.0) and np.all(out[2:] == 1.0)


def test_crop_keeps_shape_and_corner():
    px = np.arange(64, dtype=np.float64).reshape(8, 8, 1) / 64
    out = tf.apply(Transform(Kind.CROP_CORNER, corner="bottom_right", n_c=0.5), ImageGrid(px)).pixels
    assert out.shape == px.shape
    # 4x4 bottom-right window, each source pixel repeated 2x2
    np.testing.assert_array_equal(out[::2, ::2, 0], px[4:, 4:, 0])


def test_crop_too_small_grid():
    with pytest.raises(ValueError):
        tf.apply(Transform(Kind.CROP_CORNER, n_c=0.3), ImageGrid(np.zeros((2, 2, 1))))


def test_image_grid_validation():
    with pytest.raises(ValueError):
        ImageGrid(np.full((2, 2, 1), 1.5))
    with pytest.raises(ValueError):
        ImageGrid(np.zeros((2, 2, 1, 1)))


@pytest.mark.parametrize("family", tf.IMAGE_FAMILIES)
def test_batch_and_linear_forms_agree_with_apply(family):
    shape = (8, 8, 1)
    rng = np.random.default_rng(3)
    flat = rng.uniform(size=(5, 64))
    for t in tf.build_augmentation_set(family, tf.catalogue_size(family)):
        batch = tf.apply_batch(t, flat, shape)
        for row, out in zip(flat, batch):
            np.testing.assert_array_equal(tf.apply(t, ImageGrid(row.reshape(shape))).pixels.reshape(-1), out)
        m, off = tf.linear_action(t, 64, shape)
        np.testing.assert_array_equal(flat @ m + off, batch)


# points


ROTS_AND_REFLECTIONS = [PointTransform(k) for k in PointKind if k not in (PointKind.TRANSLATE, PointKind.SCALE)]
points = arrays(
    np.float64, st.tuples(st.integers(1, 20), st.just(2)), elements=st.floats(-1e6, 1e6, allow_subnormal=False)
)


@pytest.mark.parametrize("t", ROTS_AND_REFLECTIONS, ids=str)
@settings(max_examples=30, deadline=None)
@given(p=points)
def test_point_isometries_round_trip_exactly(t, p):
    np.testing.assert_array_equal(tf.invert(t, tf.apply(t, p)), p)
    np.testing.assert_array_equal(np.linalg.norm(tf.apply(t, p), axis=1), np.linalg.norm(p, axis=1))


def test_point_rotation_group():
    p = np.array([[1.0, 2.0]])
    r90 = PointTransform(PointKind.ROT90)
    np.testing.assert_array_equal(tf.apply(r90, p), [[-2.0, 1.0]])
    four = p
    for _ in range(4):
        four = tf.apply(r90, four)
    np.testing.assert_array_equal(four, p)


@settings(max_examples=50, deadline=None)
@given(
    p=arrays(np.float64, (8, 2), elements=st.integers(-2**20, 2**20).map(lambda v: v / 1024)),
    off=st.tuples(st.integers(-64, 64), st.integers(-64, 64)).map(lambda o: (o[0] / 8, o[1] / 8)),
)
def test_translation_round_trip_exact_on_dyadic_points(p, off):
    t = PointTransform(PointKind.TRANSLATE, offset=off)
    np.testing.assert_array_equal(tf.invert(t, tf.apply(t, p)), p)


@settings(max_examples=50, deadline=None)
@given(p=points, factor=st.sampled_from([0.25, 0.5, 2.0, 4.0, -2.0]))
def test_power_of_two_scale_round_trips_exactly(p, factor):
    t = PointTransform(PointKind.SCALE, factor=factor)
    np.testing.assert_array_equal(tf.invert(t, tf.apply(t, p)), p)


@settings(max_examples=50, deadline=None)
@given(p=points)
def test_general_scale_round_trips_to_rounding(p):
    t = PointTransform(PointKind.SCALE, factor=0.75)
    np.testing.assert_allclose(tf.invert(t, tf.apply(t, p)), p, rtol=1e-12, atol=0)


def test_scale_zero_is_not_invertible():
    t = PointTransform(PointKind.SCALE, factor=0.0)
    assert not t.invertible
    with pytest.raises(tf.NonInvertible):
        tf.invert(t, np.zeros((1, 2)))


def test_jacobian_determinants():
    assert PointTransform(PointKind.ROT90).jacobian_det == 1.0
    assert PointTransform(PointKind.REFLECT_ANTIDIAG).jacobian_det == -1.0
    assert PointTransform(PointKind.SCALE, factor=3.0).jacobian_det == 9.0


def test_point_batch_shape_checked():
    with pytest.raises(ValueError):
        tf.apply(PointTransform(PointKind.ROT90), np.zeros((3, 3)))


@pytest.mark.parametrize("family", tf.POINT_FAMILIES)
def test_point_linear_action(family):
    p = np.random.default_rng(4).normal(size=(10, 2))
    for t in tf.build_augmentation_set(family, tf.catalogue_size(family)):
        m, off = tf.linear_action(t, 2)
        np.testing.assert_allclose(p @ m + off, tf.apply(t, p), rtol=0, atol=1e-15)


def test_self_test_passes():
    from daglab.harness import transform_self_test
    import io

    code, results = transform_self_test(seed=0, stream=io.StringIO())
    assert code == 0 and all(r.passed for r in results)
