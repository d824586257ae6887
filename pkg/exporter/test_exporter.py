"""Exporter contract: shapes, determinism, and round-trip through the library.

These tests import the scoring library only to read what the exporter wrote;
the exporter itself stays import-free of it.  Everything runs offline: real
architectures with seeded random weights."""

import filecmp
import sys
from pathlib import Path

import numpy as np
import pytest

torch = pytest.importorskip("torch")

sys.path.insert(0, str(Path(__file__).parent))

from export_features import (  # noqa: E402
    ExporterError,
    ExportManifest,
    export,
    main,
)

from nodi.containers import read_feature_file, read_head_file  # noqa: E402
from nodi.feature_store import ingest  # noqa: E402


def make_images(root: Path, n: int, seed: int = 0, classes: int = 0):
    """Write n small PNGs, flat or split over class subfolders."""
    from PIL import Image

    root.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    paths = []
    for i in range(n):
        if classes:
            sub = root / f"class_{i % classes}"
            sub.mkdir(exist_ok=True)
            p = sub / f"img_{i:03d}.png"
        else:
            p = root / f"img_{i:03d}.png"
        arr = rng.integers(0, 256, size=(32, 32, 3), dtype=np.uint8)
        Image.fromarray(arr).save(p)
        paths.append(p)
    return paths


@pytest.fixture(scope="module")
def resnet_export(tmp_path_factory):
    """One 10-image resnet50 export shared by the shape and parsing tests."""
    root = tmp_path_factory.mktemp("resnet")
    make_images(root / "images", 10)
    manifest = ExportManifest(
        encoder="resnet50",
        images=root / "images",
        out_features=root / "features.bin",
        out_head=root / "head.bin",
        batch_size=4,
        pretrained=False,
    )
    returned = export(manifest)
    return manifest, returned


class TestResNet50:
    def test_head_is_2048_by_1000(self, resnet_export):
        manifest, (_, _, _, w, b) = resnet_export
        assert w.shape == (2048, 1000)
        assert b.shape == (1000,)
        w_read, b_read = read_head_file(manifest.out_head)
        assert w_read.shape == (2048, 1000)

    def test_ten_images_give_ten_rows(self, resnet_export):
        manifest, (x, y, num_classes, _, _) = resnet_export
        assert x.shape == (10, 2048)
        x_read, y_read, nc = read_feature_file(manifest.out_features)
        assert x_read.shape == (10, 2048)
        assert nc == num_classes == 1

    def test_round_trip_is_bit_exact(self, resnet_export):
        manifest, (x, y, _, w, b) = resnet_export
        x_read, y_read, _ = read_feature_file(manifest.out_features)
        w_read, b_read = read_head_file(manifest.out_head)
        assert np.array_equal(x_read, x)
        assert np.array_equal(y_read, y)
        assert np.array_equal(w_read, w)
        assert np.array_equal(b_read, b)

    def test_features_are_what_the_head_consumed(self, resnet_export):
        """W^T f + b reproduces the model's own logits."""
        manifest, (x, _, _, w, b) = resnet_export
        from torchvision.models import resnet50

        torch.manual_seed(0)
        model = resnet50(weights=None).eval()
        logits = x @ w + b
        ref_w = model.fc.weight.detach().numpy().T
        assert np.allclose(ref_w, w)
        probe = torch.from_numpy(x[:3])
        with torch.no_grad():
            direct = model.fc(probe).numpy()
        # single-precision dot over 2048 terms: order-dependent rounding
        assert np.allclose(direct, logits[:3], rtol=1e-4, atol=1e-3)

    def test_ingests_into_a_reference_store(self, resnet_export, tmp_path):
        manifest, _ = resnet_export
        store = ingest(
            manifest.out_features, head_path=manifest.out_head, split_tag="train"
        )
        assert store.n == 10
        assert store.dim == 2048  # full-rank head: no completion columns
        assert store.r == 7.0
        assert store.bias_removed

    def test_same_folder_twice_identical_bytes(self, resnet_export, tmp_path):
        manifest, _ = resnet_export
        again = ExportManifest(
            encoder="resnet50",
            images=manifest.images,
            out_features=tmp_path / "features2.bin",
            out_head=tmp_path / "head2.bin",
            batch_size=3,  # different batching must not change the bytes
            pretrained=False,
        )
        export(again)
        assert filecmp.cmp(manifest.out_features, again.out_features, shallow=False)
        assert filecmp.cmp(manifest.out_head, again.out_head, shallow=False)


class TestFolderHandling:
    def test_class_subfolders_become_labels(self, tmp_path):
        make_images(tmp_path / "imgs", 6, classes=3)
        manifest = ExportManifest(
            encoder="resnet50",
            images=tmp_path / "imgs",
            out_features=tmp_path / "f.bin",
            out_head=tmp_path / "h.bin",
            pretrained=False,
        )
        _, y, num_classes, _, _ = export(manifest)
        assert num_classes == 3
        assert sorted(set(y.tolist())) == [0, 1, 2]

    def test_corrupt_image_skipped_with_note(self, tmp_path, capsys):
        make_images(tmp_path / "imgs", 3)
        (tmp_path / "imgs" / "broken.png").write_bytes(b"not an image")
        manifest = ExportManifest(
            encoder="resnet50",
            images=tmp_path / "imgs",
            out_features=tmp_path / "f.bin",
            out_head=tmp_path / "h.bin",
            pretrained=False,
        )
        x, _, _, _, _ = export(manifest)
        assert x.shape[0] == 3
        assert "broken.png" in capsys.readouterr().err

    def test_empty_folder_rejected(self, tmp_path):
        (tmp_path / "imgs").mkdir()
        manifest = ExportManifest(
            encoder="resnet50",
            images=tmp_path / "imgs",
            out_features=tmp_path / "f.bin",
            out_head=tmp_path / "h.bin",
            pretrained=False,
        )
        with pytest.raises(ExporterError, match="no readable images"):
            export(manifest)


class TestManifestValidation:
    def test_unknown_encoder_rejected(self, tmp_path):
        with pytest.raises(ExporterError, match="unsupported encoder"):
            ExportManifest(
                encoder="resnet18",
                images=tmp_path,
                out_features=tmp_path / "f.bin",
                out_head=tmp_path / "h.bin",
            )

    def test_missing_image_dir_rejected(self, tmp_path):
        with pytest.raises(ExporterError, match="does not exist"):
            ExportManifest(
                encoder="resnet50",
                images=tmp_path / "nope",
                out_features=tmp_path / "f.bin",
                out_head=tmp_path / "h.bin",
            )

    def test_missing_output_dir_rejected(self, tmp_path):
        with pytest.raises(ExporterError, match="output directory"):
            ExportManifest(
                encoder="resnet50",
                images=tmp_path,
                out_features=tmp_path / "sub" / "f.bin",
                out_head=tmp_path / "h.bin",
            )


class TestTransformerFamily:
    def test_beit_head_shape_and_roundtrip(self, tmp_path):
        pytest.importorskip("transformers")
        make_images(tmp_path / "imgs", 2)
        manifest = ExportManifest(
            encoder="beit",
            images=tmp_path / "imgs",
            out_features=tmp_path / "f.bin",
            out_head=tmp_path / "h.bin",
            pretrained=False,
        )
        x, _, _, w, b = export(manifest)
        assert x.shape == (2, 768)
        assert w.shape == (768, 1000)
        w_read, _ = read_head_file(manifest.out_head)
        assert np.array_equal(w_read, w)

    def test_missing_weights_give_fetch_instructions(self, tmp_path, monkeypatch):
        pytest.importorskip("transformers")
        monkeypatch.setenv("HF_HUB_OFFLINE", "1")
        make_images(tmp_path / "imgs", 1)
        manifest = ExportManifest(
            encoder="beit",
            images=tmp_path / "imgs",
            out_features=tmp_path / "f.bin",
            out_head=tmp_path / "h.bin",
            pretrained=True,
        )
        with pytest.raises(ExporterError, match="networked machine"):
            export(manifest)


class TestCli:
    def test_end_to_end(self, tmp_path, capsys):
        make_images(tmp_path / "imgs", 3)
        rc = main(
            [
                "--encoder", "resnet50",
                "--images", str(tmp_path / "imgs"),
                "--out-features", str(tmp_path / "f.bin"),
                "--out-head", str(tmp_path / "h.bin"),
                "--no-pretrained",
            ]
        )
        assert rc == 0
        assert "3 features of dim 2048" in capsys.readouterr().out
        assert (tmp_path / "f.bin").exists()

    def test_bad_encoder_exits_nonzero(self, tmp_path, capsys):
        rc = main(
            [
                "--encoder", "vgg",
                "--images", str(tmp_path),
                "--out-features", str(tmp_path / "f.bin"),
                "--out-head", str(tmp_path / "h.bin"),
            ]
        )
        assert rc == 1
        assert "unsupported encoder" in capsys.readouterr().err
