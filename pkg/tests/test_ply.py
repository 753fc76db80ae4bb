import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from shellsplat.model import GaussianCloud
from shellsplat.ply import attribute_names, load_ply, save_ply

from synth import build_cloud


def _random_cloud(rng, n=5, sh_degree=1):
    k_rest = (sh_degree + 1) ** 2 - 1
    return GaussianCloud.from_arrays(
        positions=rng.normal(size=(n, 3)).astype(np.float32),
        rotations=rng.normal(size=(n, 4)).astype(np.float32),
        log_scales=rng.normal(size=(n, 3)).astype(np.float32),
        opacity_logits=rng.normal(size=(n, 1)).astype(np.float32),
        features_dc=rng.normal(size=(n, 1, 3)).astype(np.float32),
        features_rest=rng.normal(size=(n, k_rest, 3)).astype(np.float32),
        requires_grad=False,
    )


def _read_raw(path):
    """Independent decode: parse the header by hand, then numpy-read the body."""
    data = path.read_bytes()
    header, _, body = data.partition(b"end_header\n")
    lines = header.decode("ascii").splitlines()
    assert lines[0] == "ply"
    assert lines[1] == "format binary_little_endian 1.0"
    n = int(lines[2].split()[-1])
    names = [ln.split()[2] for ln in lines[3:] if ln.startswith("property")]
    arr = np.frombuffer(body, dtype=np.dtype([(nm, "<f4") for nm in names]))
    assert len(arr) == n
    return names, arr


def test_attribute_name_layout_degree1():
    # Frozen layout shared with other splatting tools.
    assert attribute_names(3) == [
        "x", "y", "z", "nx", "ny", "nz",
        "f_dc_0", "f_dc_1", "f_dc_2",
        "f_rest_0", "f_rest_1", "f_rest_2", "f_rest_3", "f_rest_4",
        "f_rest_5", "f_rest_6", "f_rest_7", "f_rest_8",
        "opacity",
        "scale_0", "scale_1", "scale_2",
        "rot_0", "rot_1", "rot_2", "rot_3",
    ]


def test_save_ply_channel_major_rest_layout(tmp_path, rng):
    cloud = _random_cloud(rng, n=2, sh_degree=1)
    path = tmp_path / "c.ply"
    save_ply(cloud, path)
    names, arr = _read_raw(path)
    assert names == attribute_names(3)

    rest = cloud._features_rest.numpy()  # (n, 3 coeffs, 3 channels)
    # channel-major: f_rest_0..2 = red coeffs, 3..5 green, 6..8 blue.
    for i in range(2):
        for ch in range(3):
            for k in range(3):
                assert arr[f"f_rest_{ch * 3 + k}"][i] == rest[i, k, ch]
        assert arr["x"][i] == cloud._xyz.numpy()[i, 0]
        assert arr["opacity"][i] == cloud._opacity.numpy()[i, 0]
        for k in range(3):
            assert arr[f"f_dc_{k}"][i] == cloud._features_dc.numpy()[i, 0, k]
            assert arr[f"scale_{k}"][i] == cloud._scaling.numpy()[i, k]
        for k in range(4):
            assert arr[f"rot_{k}"][i] == cloud._rotation.numpy()[i, k]
        for nrm in ("nx", "ny", "nz"):
            assert arr[nrm][i] == 0.0


@pytest.mark.parametrize("sh_degree", [0, 1, 2, 3])
def test_round_trip_bit_exact(tmp_path, rng, sh_degree):
    cloud = _random_cloud(rng, n=7, sh_degree=sh_degree)
    path = tmp_path / "c.ply"
    save_ply(cloud, path)
    back = load_ply(path)
    assert back.max_sh_degree == sh_degree
    assert len(back) == 7
    assert back.state_bytes() == cloud.state_bytes()


def test_round_trip_twice_is_byte_identical_file(tmp_path, rng):
    cloud = _random_cloud(rng, n=4)
    p1, p2 = tmp_path / "a.ply", tmp_path / "b.ply"
    save_ply(cloud, p1)
    save_ply(load_ply(p1), p2)
    assert p1.read_bytes() == p2.read_bytes()


@settings(max_examples=25, deadline=None)
@given(
    n=st.integers(min_value=1, max_value=9),
    sh_degree=st.integers(min_value=0, max_value=2),
    seed=st.integers(min_value=0, max_value=2**31 - 1),
)
def test_round_trip_property(tmp_path_factory, n, sh_degree, seed):
    rng = np.random.default_rng(seed)
    cloud = _random_cloud(rng, n=n, sh_degree=sh_degree)
    path = tmp_path_factory.mktemp("ply") / "c.ply"
    save_ply(cloud, path)
    assert load_ply(path).state_bytes() == cloud.state_bytes()


def test_load_rejects_truncation(tmp_path, rng):
    cloud = _random_cloud(rng, n=3)
    path = tmp_path / "c.ply"
    save_ply(cloud, path)
    data = path.read_bytes()
    path.write_bytes(data[:-8])
    with pytest.raises(ValueError, match="truncated"):
        load_ply(path)


def test_load_rejects_missing_property(tmp_path, rng):
    cloud = _random_cloud(rng, n=3)
    path = tmp_path / "c.ply"
    save_ply(cloud, path)
    data = path.read_bytes()
    path.write_bytes(data.replace(b"property float opacity\n", b""))
    with pytest.raises(ValueError, match="opacity"):
        load_ply(path)


def test_load_rejects_partial_sh_band(tmp_path, rng):
    # 6 rest columns = 2 coefficients, which is not a complete band.
    names = attribute_names(2)
    header = (
        "ply\nformat binary_little_endian 1.0\nelement vertex 1\n"
        + "".join(f"property float {nm}\n" for nm in names)
        + "end_header\n"
    )
    body = np.zeros(1, dtype=np.dtype([(nm, "<f4") for nm in names]))
    path = tmp_path / "c.ply"
    path.write_bytes(header.encode() + body.tobytes())
    with pytest.raises(ValueError, match="full SH band"):
        load_ply(path)


def test_load_rejects_non_ply(tmp_path):
    path = tmp_path / "c.ply"
    path.write_bytes(b"not a ply at all")
    with pytest.raises(ValueError):
        load_ply(path)


def test_load_requires_grad_flag(tmp_path, rng):
    path = tmp_path / "c.ply"
    save_ply(_random_cloud(rng), path)
    assert not load_ply(path)._xyz.requires_grad
    assert load_ply(path, requires_grad=True)._xyz.requires_grad


def test_degree0_cloud_round_trip(tmp_path):
    cloud = build_cloud(
        positions=[[0.0, 1.0, 2.0]],
        colors=[[0.3, 0.6, 0.9]],
        scales=[[0.5, 0.5, 0.5]],
        sh_degree=0,
        requires_grad=False,
    )
    path = tmp_path / "c.ply"
    save_ply(cloud, path)
    back = load_ply(path)
    assert back.max_sh_degree == 0
    assert back._features_rest.shape == (1, 0, 3)
    assert back.state_bytes() == cloud.state_bytes()
