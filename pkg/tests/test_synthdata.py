import math

import numpy as np
import pytest

from dulearn.errors import ContractViolation
from dulearn.synthdata import (
    FuncSpec,
    corrupt_fraction,
    gen_hetreg,
    gen_identities,
    load_hetreg_csv,
    load_identity,
    load_identity_bin,
    load_identity_csv,
    regenerate,
    save_hetreg_csv,
    save_identity_bin,
    save_identity_csv,
    spec_hash,
)


def test_zero_noise_samples_equal_centers():
    ds = gen_identities(num_classes=3, per_class=5, input_dim=4,
                        center_spread=0.5, base_noise=0.0, seed=1)
    for c in range(3):
        block = ds.x[ds.labels == c]
        assert np.array_equal(block, np.tile(ds.centers[c], (5, 1)))


def test_generation_deterministic():
    a = gen_identities(5, 10, 6, 0.4, 0.1, seed=42)
    b = gen_identities(5, 10, 6, 0.4, 0.1, seed=42)
    assert np.array_equal(a.x, b.x)
    assert np.array_equal(a.labels, b.labels)
    assert np.array_equal(a.noise_levels, b.noise_levels)
    c = gen_identities(5, 10, 6, 0.4, 0.1, seed=43)
    assert not np.array_equal(a.x, c.x)


def test_centers_respect_min_angle():
    ds = gen_identities(8, 3, 5, 0.7, 0.0, seed=2)
    cos = ds.centers @ ds.centers.T
    np.fill_diagonal(cos, 0.0)
    assert np.arccos(np.clip(cos, -1, 1)).min() >= 0.7 - 1e-9
    assert np.allclose(np.linalg.norm(ds.centers, axis=1), 1.0)


def test_center_rejection_gives_up():
    # 60 centers at >= 0.5 rad pairwise cannot fit on a 2-d circle
    with pytest.raises(ContractViolation):
        gen_identities(60, 2, 2, 0.5, 0.0, seed=3, max_attempts=50)


def test_nearest_center_classifier_on_separated_data():
    ds = gen_identities(2, 200, 8, math.pi / 2, 0.01, seed=4)
    sims = ds.x @ ds.centers.T
    assert np.mean(np.argmax(sims, axis=1) == ds.labels) == 1.0


def test_sample_center_distance_matches_chi_mean():
    # E||x - center|| = b sqrt(2) Gamma((d+1)/2) / Gamma(d/2)
    d, b = 3, 0.2
    ds = gen_identities(2, 2000, d, 0.5, b, seed=5)
    dist = np.linalg.norm(ds.x - ds.centers[ds.labels], axis=1)
    expected = b * math.sqrt(2.0) * math.gamma((d + 1) / 2) / math.gamma(d / 2)
    assert abs(dist.mean() / expected - 1.0) < 0.05


def test_corrupt_fraction_zero_is_identity():
    ds = gen_identities(3, 10, 4, 0.5, 0.1, seed=6)
    out = corrupt_fraction(ds, 0.0, 2.0, seed=7)
    assert np.array_equal(out.x, ds.x)
    assert np.array_equal(out.noise_levels, ds.noise_levels)


def test_corrupt_full_fraction_zero_scale_is_identity():
    ds = gen_identities(3, 10, 4, 0.5, 0.1, seed=6)
    out = corrupt_fraction(ds, 1.0, 0.0, seed=7)
    assert np.array_equal(out.x, ds.x)
    assert np.array_equal(out.noise_levels, ds.noise_levels)


def test_corrupt_exact_count_and_labels():
    ds = gen_identities(10, 100, 6, 0.4, 0.05, seed=8)
    out = corrupt_fraction(ds, 0.3, 1.5, seed=9)
    raised = out.noise_levels > ds.noise_levels.min()
    assert int(raised.sum()) == 300
    assert np.array_equal(out.labels, ds.labels)
    # raised level follows variance addition
    assert np.allclose(out.noise_levels[raised], math.sqrt(0.05 ** 2 + 1.5 ** 2))
    # untouched rows are bit-identical
    assert np.array_equal(out.x[~raised], ds.x[~raised])


@pytest.mark.parametrize("fraction,n,expected", [(0.25, 10, 3), (0.05, 10, 1), (0.333, 9, 3)])
def test_corrupt_count_rounds_half_up(fraction, n, expected):
    ds = gen_identities(2, n // 2 if n % 2 == 0 else n, 3, 0.4, 0.1, seed=12)
    # build a dataset with exactly n samples
    ds = gen_identities(2, 5, 3, 0.4, 0.1, seed=12)
    sub = type(ds)(x=ds.x[:n], labels=(ds.labels[:n] * 0), noise_levels=ds.noise_levels[:n],
                   num_classes=2)
    out = corrupt_fraction(sub, fraction, 1.0, seed=13)
    assert int((out.noise_levels > sub.noise_levels.min()).sum()) == int(math.floor(fraction * n + 0.5)) == expected


def test_regenerate_bit_identical_including_corruption():
    ds = gen_identities(4, 20, 5, 0.4, 0.1, seed=10)
    ds = corrupt_fraction(ds, 0.25, 1.0, seed=11)
    again = regenerate(ds.generator_spec)
    assert np.array_equal(ds.x, again.x)
    assert np.array_equal(ds.noise_levels, again.noise_levels)
    assert spec_hash(ds.generator_spec) == spec_hash(again.generator_spec)


# ---------------------------------------------------------------------------
# regression task
# ---------------------------------------------------------------------------

def test_hetreg_zero_sigma_residuals():
    f = FuncSpec("affine", (2.0, -1.0))
    ds = gen_hetreg(100, f, FuncSpec("const", (0.0,)), (0.0, 1.0), seed=1)
    assert np.allclose(ds.y, f.evaluate(ds.x))


def test_hetreg_binned_residual_std():
    # sigma(x) = 0.1 + 0.5 x on [0, 1]: residual std in the [0.9, 1] bin
    f = FuncSpec("affine", (1.0, 0.0))
    sg = FuncSpec("affine", (0.5, 0.1))
    ds = gen_hetreg(10_000, f, sg, (0.0, 1.0), seed=2)
    sel = ds.x >= 0.9
    resid = ds.y[sel] - f.evaluate(ds.x[sel])
    assert 0.55 * 0.9 <= resid.std() <= 0.55 * 1.1


def test_hetreg_deterministic():
    f, sg = FuncSpec("affine", (1.0, 0.0)), FuncSpec("const", (0.2,))
    a = gen_hetreg(50, f, sg, (0.0, 1.0), seed=3)
    b = gen_hetreg(50, f, sg, (0.0, 1.0), seed=3)
    assert np.array_equal(a.x, b.x) and np.array_equal(a.y, b.y)


def test_hetreg_least_squares_recovers_mean():
    f = FuncSpec("affine", (1.7, -0.4))
    sg = FuncSpec("const", (0.3,))
    ds = gen_hetreg(20_000, f, sg, (0.0, 1.0), seed=4)
    design = np.stack([ds.x, np.ones_like(ds.x)], axis=1)
    coef, *_ = np.linalg.lstsq(design, ds.y, rcond=None)
    # noise-limited tolerance: a few standard errors of the fit
    assert abs(coef[0] - 1.7) < 0.03
    assert abs(coef[1] + 0.4) < 0.02


def test_funcspec_parse_round_trip():
    for text in ("affine:1.0,0.0", "sine:1.5,2.0,0.25", "const:0.3"):
        spec = FuncSpec.parse(text)
        assert FuncSpec.parse(str(spec)) == spec
    with pytest.raises(ContractViolation):
        FuncSpec.parse("cubic:1,2,3")
    with pytest.raises(ContractViolation):
        gen_hetreg(5, FuncSpec("const", (1.0,)), FuncSpec("const", (0.1,)), (0, 1), seed=0)


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------

def test_identity_csv_round_trip(tmp_path):
    ds = gen_identities(4, 12, 5, 0.4, 0.17, seed=20)
    ds = corrupt_fraction(ds, 0.25, 0.9, seed=21)
    path = tmp_path / "ds.csv"
    save_identity_csv(path, ds)
    back = load_identity_csv(path)
    assert np.array_equal(back.x, ds.x)
    assert np.array_equal(back.labels, ds.labels)
    assert np.array_equal(back.noise_levels, ds.noise_levels)
    assert back.num_classes == ds.num_classes


def test_identity_bin_round_trip(tmp_path):
    ds = gen_identities(3, 8, 6, 0.4, 0.05, seed=22)
    path = tmp_path / "ds.bin"
    save_identity_bin(path, ds)
    back = load_identity_bin(path)
    assert np.array_equal(back.x, ds.x)
    assert np.array_equal(back.labels, ds.labels)
    assert np.array_equal(back.noise_levels, ds.noise_levels)


def test_identity_formats_agree(tmp_path):
    ds = gen_identities(3, 8, 4, 0.4, 0.05, seed=23)
    save_identity_csv(tmp_path / "a.csv", ds)
    save_identity_bin(tmp_path / "a.bin", ds)
    from_csv = load_identity(tmp_path / "a.csv")
    from_bin = load_identity(tmp_path / "a.bin")
    assert np.array_equal(from_csv.x, from_bin.x)
    assert np.array_equal(from_csv.labels, from_bin.labels)


def test_identity_save_deterministic_bytes(tmp_path):
    ds = gen_identities(3, 8, 4, 0.4, 0.05, seed=24)
    save_identity_csv(tmp_path / "a.csv", ds)
    save_identity_csv(tmp_path / "b.csv", ds)
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    save_identity_bin(tmp_path / "a.bin", ds)
    save_identity_bin(tmp_path / "b.bin", ds)
    assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()


def test_hetreg_csv_round_trip(tmp_path):
    ds = gen_hetreg(40, FuncSpec("sine", (1.0, 3.0, 0.2)), FuncSpec("affine", (0.5, 0.1)),
                    (0.0, 2.0), seed=25)
    path = tmp_path / "reg.csv"
    save_hetreg_csv(path, ds)
    back = load_hetreg_csv(path)
    assert np.array_equal(back.x, ds.x)
    assert np.array_equal(back.y, ds.y)
    assert back.f == ds.f and back.sigma == ds.sigma
    assert back.x_range == ds.x_range


def test_load_missing_file(tmp_path):
    from dulearn.errors import MissingInputError
    with pytest.raises(MissingInputError):
        load_identity(tmp_path / "nope.csv")
