import io

import numpy as np
import pytest

from wmc.errors import DataError, FormatError, ManifestError
from wmc.rng import SplitMix64
from wmc.data_io import (
    AugmentPolicy,
    BodyMap,
    ManifestRecord,
    augment,
    bilinear_resize,
    decode_meta_json,
    encode_meta_json,
    hflip,
    ingest_image,
    load_checkpoint,
    load_manifest,
    load_raster,
    save_checkpoint,
    save_manifest,
    save_raster,
    simplify_location,
)


class TestManifest:
    def write(self, tmp_path, body):
        p = tmp_path / "m.csv"
        p.write_text("image_path,label,raw_location_id\n" + body)
        return p

    def test_three_valid_rows(self, tmp_path):
        p = self.write(tmp_path, "a.jpg,D,10\nb.jpg,P,484\nc.jpg,V,1\n")
        records = load_manifest(p)
        assert len(records) == 3
        assert records[0] == ManifestRecord("a.jpg", "D", 10)

    def test_out_of_range_location(self, tmp_path):
        p = self.write(tmp_path, "a.jpg,D,485\n")
        with pytest.raises(ManifestError) as e:
            load_manifest(p)
        msg = str(e.value)
        assert "row 2" in msg and "484" in msg

    def test_all_bad_rows_reported(self, tmp_path):
        p = self.write(tmp_path, "a.jpg,D,485\nb.jpg,X,3\n,D,5\nok.jpg,V,2\n")
        with pytest.raises(ManifestError) as e:
            load_manifest(p)
        assert len(e.value.problems) == 3
        rows = [n for n, _ in e.value.problems]
        assert rows == [2, 3, 4]

    def test_duplicate_paths_accepted(self, tmp_path):
        p = self.write(tmp_path, "a.jpg,D,10\na.jpg,D,11\n")
        assert len(load_manifest(p)) == 2

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError):
            load_manifest(tmp_path / "absent.csv")

    def test_bad_header(self, tmp_path):
        p = tmp_path / "m.csv"
        p.write_text("path,label,loc\n")
        with pytest.raises(DataError):
            load_manifest(p)

    def test_round_trip_byte_identical(self, tmp_path):
        p = self.write(tmp_path, "a.jpg,D,10\nb.jpg,P,484\n")
        records = load_manifest(p)
        out = tmp_path / "copy.csv"
        save_manifest(records, out)
        assert out.read_bytes() == p.read_bytes()


class TestBodyMap:
    def test_default_map_cardinalities(self):
        bm = BodyMap.default()
        assert bm.raw_count == 484
        assert len(bm.simplified_ids) == 323
        assert len(bm.mapping) == 484

    def test_documented_merges(self):
        bm = BodyMap.default()
        assert simplify_location(437, bm) == 436
        assert simplify_location(438, bm) == 436
        assert simplify_location(391, bm) == 390
        assert simplify_location(392, bm) == 390
        assert simplify_location(393, bm) == 390

    def test_idempotent_on_simplified(self):
        bm = BodyMap.default()
        assert simplify_location(436, bm) == 436
        assert simplify_location(390, bm) == 390
        for s in bm.simplified_ids:
            assert bm.simplify(s) == s

    def test_unmapped_id_rejected(self):
        bm = BodyMap.default()
        with pytest.raises(DataError):
            bm.simplify(485)

    def test_index_is_dense(self):
        bm = BodyMap.default()
        idx = [bm.index_of(r) for r in range(1, 485)]
        assert min(idx) == 0 and max(idx) == 322

    def test_broken_maps_rejected(self, tmp_path):
        # not total
        p = tmp_path / "bm.csv"
        p.write_text("raw_id,simplified_id\n1,1\n")
        with pytest.raises(DataError, match="not total"):
            BodyMap.load(p)
        # not idempotent: 2 -> 3 but 3 -> 4
        rows = ["raw_id,simplified_id"]
        for r in range(1, 485):
            if r == 2:
                rows.append("2,3")
            elif r == 3:
                rows.append("3,4")
            else:
                rows.append(f"{r},{r}")
        p.write_text("\n".join(rows) + "\n")
        with pytest.raises(DataError, match="idempotent"):
            BodyMap.load(p)
        # wrong codomain cardinality
        rows = ["raw_id,simplified_id"] + [f"{r},{r}" for r in range(1, 485)]
        p.write_text("\n".join(rows) + "\n")
        with pytest.raises(DataError, match="simplified ids"):
            BodyMap.load(p)

    def test_duplicate_raw_id_rejected(self, tmp_path):
        p = tmp_path / "bm.csv"
        p.write_text("raw_id,simplified_id\n1,1\n1,1\n")
        with pytest.raises(DataError, match="twice"):
            BodyMap.load(p)


class TestRaster:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = SplitMix64(1)
        # grid-of-256ths values are exactly representable in float32
        arr = np.round(rng.uniform((3, 5, 7)) * 255) / 256.0
        p = tmp_path / "img.wimg"
        save_raster(arr, p)
        back = load_raster(p)
        assert back.dtype == np.float64
        assert np.array_equal(back, arr)
        save_raster(back, tmp_path / "copy.wimg")
        assert (tmp_path / "copy.wimg").read_bytes() == p.read_bytes()

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "x.wimg"
        p.write_bytes(b"NOPE" + b"\x00" * 40)
        with pytest.raises(FormatError, match="magic"):
            load_raster(p)

    def test_truncated_payload(self, tmp_path):
        p = tmp_path / "x.wimg"
        arr = np.zeros((1, 2, 2), dtype=np.float32)
        save_raster(arr, p)
        p.write_bytes(p.read_bytes()[:-3])
        with pytest.raises(FormatError, match="payload"):
            load_raster(p)


class TestIngest:
    def test_raster_passthrough(self, tmp_path):
        arr = np.round(SplitMix64(2).uniform((3, 8, 8)) * 255) / 256.0
        p = tmp_path / "img.wimg"
        save_raster(arr, p)
        out = ingest_image(p, target=(8, 8))
        assert np.array_equal(out, arr)

    def test_raster_resized_when_dims_differ(self, tmp_path):
        arr = np.full((3, 4, 4), 0.25, dtype=np.float64)
        p = tmp_path / "img.wimg"
        save_raster(arr, p)
        out = ingest_image(p, target=(8, 8))
        assert out.shape == (3, 8, 8)
        np.testing.assert_allclose(out, 0.25, atol=1e-7)

    def test_solid_color_jpeg(self, tmp_path):
        from PIL import Image
        img = Image.new("RGB", (100, 60), (200, 30, 90))
        p = tmp_path / "solid.jpg"
        img.save(p, quality=95)
        out = ingest_image(p, target=(24, 24))
        assert out.shape == (3, 24, 24)
        expect = np.array([200, 30, 90]) / 255.0
        for c in range(3):
            assert np.all(np.abs(out[c] - expect[c]) <= 1.0 / 255.0 + 1e-9)

    def test_truncated_file_rejected(self, tmp_path):
        p = tmp_path / "broken.jpg"
        p.write_bytes(b"\xff\xd8\xff\xe0trunc")
        with pytest.raises(DataError):
            ingest_image(p)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError):
            ingest_image(tmp_path / "nope.png")

    def test_bilinear_identity(self):
        x = SplitMix64(3).uniform((2, 6, 6))
        np.testing.assert_array_equal(bilinear_resize(x, 6, 6), x)


class TestAugment:
    def test_identity_policy(self):
        x = SplitMix64(4).uniform((3, 6, 6))
        out = augment(x, AugmentPolicy(False, False, False), seed=9)
        assert np.array_equal(out, x)

    def test_double_hflip_is_identity(self):
        x = SplitMix64(5).uniform((3, 5, 7))
        assert np.array_equal(hflip(hflip(x)), x)

    def test_deterministic_per_seed(self):
        x = SplitMix64(6).uniform((3, 8, 8))
        pol = AugmentPolicy()
        a = augment(x, pol, seed=123)
        b = augment(x, pol, seed=123)
        assert np.array_equal(a, b)
        assert a[0, 0, 0] == b[0, 0, 0]

    def test_shape_and_range_preserved(self):
        x = SplitMix64(7).uniform((3, 8, 8))
        for seed in range(20):
            out = augment(x, AugmentPolicy(), seed=seed)
            assert out.shape == x.shape
            assert out.min() >= 0 and out.max() < 1

    def test_nonsquare_keeps_shape(self):
        x = SplitMix64(8).uniform((3, 4, 9))
        for seed in range(20):
            assert augment(x, AugmentPolicy(), seed=seed).shape == (3, 4, 9)


class TestCheckpoint:
    def test_round_trip_bit_identical(self, tmp_path):
        rng = SplitMix64(9)
        table = {"layer.w": rng.normal((3, 4)), "layer.b": rng.normal((4,)),
                 "scalar": np.array(2.5)}
        p = tmp_path / "model.wmck"
        save_checkpoint(table, p)
        back = load_checkpoint(p)
        assert set(back) == set(table)
        for k in table:
            assert np.array_equal(back[k], np.asarray(table[k]))
        save_checkpoint(back, tmp_path / "copy.wmck")
        assert (tmp_path / "copy.wmck").read_bytes() == p.read_bytes()

    def test_corrupt_magic(self, tmp_path):
        p = tmp_path / "bad.wmck"
        p.write_bytes(b"XXXX" + b"\x00" * 8)
        with pytest.raises(FormatError, match="magic"):
            load_checkpoint(p)

    def test_truncation_names_offset(self, tmp_path):
        p = tmp_path / "t.wmck"
        save_checkpoint({"w": np.ones((2, 2))}, p)
        p.write_bytes(p.read_bytes()[:-5])
        with pytest.raises(FormatError, match="offset"):
            load_checkpoint(p)

    def test_empty_table_valid(self, tmp_path):
        p = tmp_path / "empty.wmck"
        save_checkpoint({}, p)
        assert load_checkpoint(p) == {}

    def test_meta_json_round_trip(self):
        cfg = {"classes": ["D", "P"], "seed": 7, "rng_state": 2**63 + 12345}
        assert decode_meta_json(encode_meta_json(cfg)) == cfg
