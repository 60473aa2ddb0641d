"""Tests for the binary weight container and its schema adapters."""

import numpy as np
import pytest

from regkit.featnet import FeatNetWeights, extract
from regkit.reagent import ActorWeights
from regkit.weights import (
    MAGIC,
    WeightFormatError,
    actors_from_file,
    actors_to_file,
    bundle_from_file,
    bundle_to_file,
    featnet_from_file,
    featnet_to_file,
    pack,
    read_file,
    unpack,
    write_file,
)


def sample_tensors() -> dict[str, np.ndarray]:
    rng = np.random.default_rng(11)
    return {
        "conv.weight": rng.normal(size=(4, 3)).astype(np.float32),
        "conv.bias": rng.normal(size=4).astype(np.float32),
        "conv.wgt.lut": rng.integers(-127, 128, size=19, dtype=np.int8),
        "conv.act.lut": rng.integers(0, 256, size=(2, 5), dtype=np.uint8),
        "meta.bits": np.array([8], dtype=np.uint8),
    }


class TestPackUnpack:
    def test_round_trip_preserves_values_dtypes_shapes_and_order(self):
        tensors = sample_tensors()
        out = unpack(pack(tensors))
        assert list(out) == list(tensors)
        for name, array in tensors.items():
            assert out[name].dtype == array.dtype
            assert out[name].shape == array.shape
            np.testing.assert_array_equal(out[name], array)

    def test_repacking_a_parsed_container_is_byte_identical(self):
        blob = pack(sample_tensors())
        assert pack(unpack(blob)) == blob

    def test_container_starts_with_the_magic_bytes(self):
        assert pack(sample_tensors())[:4] == MAGIC

    def test_non_ascii_names_survive(self):
        tensors = {"größe.scale": np.array([1.5], dtype=np.float32)}
        assert list(unpack(pack(tensors))) == ["größe.scale"]

    def test_file_round_trip(self, tmp_path):
        path = tmp_path / "model.rgkw"
        write_file(path, sample_tensors())
        again = tmp_path / "again.rgkw"
        write_file(again, read_file(path))
        assert path.read_bytes() == again.read_bytes()


class TestValidation:
    def test_rejects_unsupported_dtypes(self):
        with pytest.raises(WeightFormatError, match="float32, int8, or uint8"):
            pack({"w": np.zeros(3, dtype=np.float64)})

    def test_rejects_zero_rank_tensors(self):
        with pytest.raises(WeightFormatError, match="rank"):
            pack({"w": np.float32(1.0).reshape(())})

    def test_rejects_empty_names(self):
        with pytest.raises(WeightFormatError, match="1..65535"):
            pack({"": np.zeros(1, dtype=np.float32)})

    def test_rejects_bad_magic(self):
        with pytest.raises(WeightFormatError, match="magic"):
            unpack(b"NOPE" + b"\x00" * 16)

    def test_rejects_unknown_version(self):
        blob = bytearray(pack(sample_tensors()))
        blob[4] = 99
        with pytest.raises(WeightFormatError, match="version"):
            unpack(bytes(blob))

    def test_rejects_truncated_data(self):
        blob = pack(sample_tensors())
        with pytest.raises(WeightFormatError, match="truncated"):
            unpack(blob[:-3])

    def test_rejects_trailing_garbage(self):
        with pytest.raises(WeightFormatError, match="trailing"):
            unpack(pack(sample_tensors()) + b"\x00")

    def test_rejects_unknown_dtype_tag(self):
        blob = bytearray(pack({"w": np.zeros(2, dtype=np.float32)}))
        # tag byte sits right after header(10) + name_len(2) + name(1)
        blob[13] = 7
        with pytest.raises(WeightFormatError, match="dtype tag"):
            unpack(bytes(blob))


class TestNetworkAdapters:
    def test_backbone_file_round_trip_is_byte_identical(self, tmp_path):
        weights = FeatNetWeights.random(seed=3)
        path = tmp_path / "backbone.rgkw"
        featnet_to_file(path, weights)
        loaded = featnet_from_file(path)
        again = tmp_path / "backbone2.rgkw"
        featnet_to_file(again, loaded)
        assert path.read_bytes() == again.read_bytes()

    def test_loaded_backbone_extracts_identically_to_itself(self, tmp_path):
        path = tmp_path / "backbone.rgkw"
        featnet_to_file(path, FeatNetWeights.random(seed=5))
        first = featnet_from_file(path)
        second = featnet_from_file(path)
        cloud = np.random.default_rng(2).normal(size=(40, 3))
        np.testing.assert_array_equal(
            extract(cloud, first, tile_size=7), extract(cloud, second, tile_size=16)
        )

    def test_actor_pair_file_round_trip(self, tmp_path):
        trans = ActorWeights.random(seed=0)
        rot = ActorWeights.random(seed=1)
        path = tmp_path / "actors.rgkw"
        actors_to_file(path, trans, rot)
        loaded_trans, loaded_rot = actors_from_file(path)
        for orig, loaded, prefix in ((trans, loaded_trans, "t"), (rot, loaded_rot, "r")):
            a, b = orig.to_tensors(prefix), loaded.to_tensors(prefix)
            assert list(a) == list(b)
            for name in a:
                np.testing.assert_array_equal(a[name], b[name])

    def test_bundle_holds_backbone_and_both_heads(self, tmp_path):
        path = tmp_path / "bundle.rgkw"
        bundle_to_file(path, FeatNetWeights.random(seed=7),
                       ActorWeights.random(seed=8), ActorWeights.random(seed=9))
        backbone, trans, rot = bundle_from_file(path)
        assert backbone.conv1_w.shape == (64, 3)
        assert trans.fc1_w.shape == (512, 2048)
        assert rot.fc3_w.shape == (39, 256)
        again = tmp_path / "bundle2.rgkw"
        bundle_to_file(again, backbone, trans, rot)
        assert path.read_bytes() == again.read_bytes()
