import json
import math
import struct
from pathlib import Path
from tempfile import TemporaryDirectory
from unittest import TestCase

import numpy as np

from scattersim.datasets.builder import CaseRecipe, Dataset, DatasetSpec, build_dataset
from scattersim.datasets.generators import TargetFamily
from scattersim.experiments import CaseId, CaseReport, ReconImage, family_means
from scattersim.io.binary import (
    decode_dataset,
    decode_medium,
    decode_mapping,
    encode_dataset,
    encode_mapping,
    encode_medium,
    load_dataset,
    load_mapping,
    load_medium,
    save_dataset,
    save_mapping,
    save_medium,
    sidecar_path,
)
from scattersim.io.report import (
    REPORT_COLUMNS,
    emit_report,
    format_value,
    load_report,
    read_metrics_csv,
    write_metrics_csv,
)
from scattersim.learners.mapping import LearnedMapping, MappingKind
from scattersim.learners.ridge import train_ridge
from scattersim.media import MediumKind, MediumSpec, generate_medium
from scattersim.metrics import MetricReport
from scattersim.util import (
    ConsistencyError,
    FormatError,
    ScatterIOError,
    ScatterSimError,
    TruncationError,
)
from tests.conftest import MediumBaseTest


class MediumFileTest(MediumBaseTest):
    __test__ = True

    def test_size_and_round_trip(self):
        medium = generate_medium(MediumSpec(MediumKind.LINEAR, (4, 4), (4, 4), 3))
        data = encode_medium(medium)
        self.assertEqual(len(data), 13 + 16 * 16 * 8)
        self.assertEqual(data[:4], b"STM1")
        decoded = decode_medium(data, medium.spec)
        np.testing.assert_array_equal(decoded.matrix, medium.matrix)
        self.assertEqual(decoded.fingerprint, medium.fingerprint)

    def test_coherent_file(self):
        medium = generate_medium(MediumSpec(MediumKind.COHERENT, (3, 3), (2, 4), 5))
        path = self.tmp_path / "coherent.stm"
        save_medium(medium, path)
        self.assertTrue(sidecar_path(path).exists())
        loaded = load_medium(path)
        np.testing.assert_array_equal(loaded.matrix, medium.matrix)
        self.assertEqual(loaded.spec, medium.spec)

    def test_without_sidecar(self):
        medium = generate_medium(MediumSpec(MediumKind.LINEAR, (3, 3), (2, 5), 5))
        decoded = decode_medium(encode_medium(medium))
        self.assertEqual(decoded.spec.in_dims, (3, 3))
        self.assertEqual(decoded.spec.out_dims, (1, 10))
        np.testing.assert_array_equal(decoded.matrix, medium.matrix)

    def test_errors(self):
        data = encode_medium(generate_medium(MediumSpec(MediumKind.LINEAR, (2, 2), (2, 2), 0)))
        with self.assertRaises(FormatError):
            decode_medium(b"XXXX" + data[4:])
        with self.assertRaises(FormatError):
            decode_medium(data[:4] + b"\x07" + data[5:])
        with self.assertRaises(FormatError):
            decode_medium(data + b"\x00")
        with self.assertRaises(TruncationError):
            decode_medium(data[:-1])
        negative = data[:13] + struct.pack("<d", -1.0) + data[21:]
        with self.assertRaises(FormatError):
            decode_medium(negative)
        with self.assertRaises(ConsistencyError):
            decode_medium(data, MediumSpec(MediumKind.LINEAR, (3, 3), (2, 2), 0))
        with self.assertRaises(ScatterIOError):
            load_medium(self.tmp_path / "missing.stm")


class DatasetFileTest(MediumBaseTest):
    __test__ = True

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        spec = DatasetSpec(TargetFamily.DIGIT, CaseRecipe.PLAIN, 3, (16, 16), seed=4)
        cls.dataset = build_dataset(spec, cls.medium)

    def test_round_trip(self):
        path = self.tmp_path / "digits.sds"
        save_dataset(self.dataset, path)
        loaded = load_dataset(path)
        self.assertEqual(loaded.spec, self.dataset.spec)
        self.assertEqual(loaded.fingerprint, self.dataset.fingerprint)
        self.assertEqual(loaded.labels, self.dataset.labels)
        np.testing.assert_array_equal(loaded.targets(), self.dataset.targets())
        np.testing.assert_allclose(loaded.speckles(), self.dataset.speckles(), rtol=1e-6)

    def test_header_layout(self):
        data = encode_dataset(self.dataset)
        self.assertEqual(struct.unpack_from("<4sIIIII", data), (b"SDS1", 3, 16, 16, 24, 24))
        self.assertEqual(len(data), 24 + 3 * 4 * (256 + 576))

    def test_empty_dataset(self):
        empty = Dataset.from_arrays(np.zeros((0, 2, 2)), np.zeros((0, 3, 3)))
        decoded = decode_dataset(encode_dataset(empty))
        self.assertEqual(len(decoded), 0)
        self.assertEqual(decoded.speckle_dims, (3, 3))

    def test_truncated_pairs(self):
        data = encode_dataset(self.dataset)
        pair_size = 4 * (256 + 576)
        short = data[:4] + struct.pack("<I", 3) + data[8 : 24 + 2 * pair_size]
        with self.assertRaises(TruncationError) as context:
            decode_dataset(short)
        self.assertIn(f"offset {24 + 2 * pair_size}", str(context.exception))

    def test_errors(self):
        data = encode_dataset(self.dataset)
        with self.assertRaises(FormatError):
            decode_dataset(b"XXXX" + data[4:])
        with self.assertRaises(TruncationError):
            decode_dataset(data[:10])
        out_of_range = bytearray(data)
        out_of_range[24:28] = struct.pack("<f", 1.5)
        with self.assertRaises(FormatError):
            decode_dataset(bytes(out_of_range))
        with self.assertRaises(ConsistencyError):
            decode_dataset(data, self.dataset.spec._replace(count=4))

    def test_without_sidecar(self):
        path = self.tmp_path / "bare.sds"
        path.write_bytes(encode_dataset(self.dataset))
        loaded = load_dataset(path)
        self.assertEqual(loaded.spec.family, TargetFamily.EXTERNAL)
        self.assertEqual(len(loaded), 3)

    def test_broken_sidecar(self):
        path = self.tmp_path / "broken.sds"
        path.write_bytes(encode_dataset(self.dataset))
        sidecar_path(path).write_text("{not json", encoding="utf-8")
        with self.assertRaises(FormatError):
            load_dataset(path)
        sidecar_path(path).write_text(json.dumps({"labels": []}), encoding="utf-8")
        with self.assertRaises(FormatError):
            load_dataset(path)


class MappingFileTest(TestCase):
    def ridge(self):
        rng = np.random.default_rng(0)
        targets = rng.random((20, 2, 2))
        speckles = rng.random((20, 3, 3))
        return train_ridge(Dataset.from_arrays(targets, speckles))

    def net(self):
        rng = np.random.default_rng(1)
        params = (rng.random((5, 9)), rng.random(5), rng.random((4, 5)), rng.random(4))
        return LearnedMapping(MappingKind.SMALL_NET, (3, 3), (2, 2), params, 77)

    def test_round_trips(self):
        for mapping in (self.ridge(), self.net()):
            self.assertEqual(decode_mapping(encode_mapping(mapping)), mapping)

    def test_net_layout(self):
        data = encode_mapping(self.net())
        self.assertEqual(data[:5], b"SLM1\x01")
        self.assertEqual(struct.unpack_from("<IIII", data, 29), (3, 9, 5, 4))
        self.assertEqual(len(data), 29 + 16 + 8 * (45 + 5 + 20 + 4))

    def test_errors(self):
        data = encode_mapping(self.ridge())
        with self.assertRaises(FormatError):
            decode_mapping(b"SLM2" + data[4:])
        with self.assertRaises(FormatError):
            decode_mapping(data[:4] + b"\x05" + data[5:])
        with self.assertRaises(TruncationError):
            decode_mapping(data[:-8])
        nan = data[:29] + struct.pack("<d", math.nan) + data[37:]
        with self.assertRaises(FormatError):
            decode_mapping(nan)
        net = bytearray(encode_mapping(self.net()))
        net[29:33] = struct.pack("<I", 4)
        with self.assertRaises(FormatError):
            decode_mapping(bytes(net))

    def test_files(self):
        with TemporaryDirectory() as tmp:
            path = Path(tmp) / "map.slm"
            mapping = self.net()
            save_mapping(mapping, path)
            self.assertEqual(load_mapping(path), mapping)


class FuzzTest(MediumBaseTest):
    __test__ = True

    def test_corrupted_streams_raise_library_errors(self):
        medium = generate_medium(MediumSpec(MediumKind.COHERENT, (2, 2), (3, 3), 1))
        targets = np.random.default_rng(2).random((2, 2, 2))
        dataset = Dataset.from_arrays(targets, np.random.default_rng(3).random((2, 3, 3)))
        mapping = LearnedMapping(
            MappingKind.SMALL_NET,
            (3, 3),
            (2, 2),
            (np.ones((2, 9)), np.ones(2), np.ones((4, 2)), np.ones(4)),
        )
        streams = [
            (encode_medium(medium), decode_medium),
            (encode_dataset(dataset), decode_dataset),
            (encode_mapping(mapping), decode_mapping),
        ]
        rng = np.random.default_rng(4)
        for case in range(1000):
            data, decode = streams[case % 3]
            corrupted = bytearray(data)
            if case % 2:
                corrupted = corrupted[: rng.integers(len(corrupted))]
            else:
                for _ in range(rng.integers(1, 4)):
                    position = rng.integers(len(corrupted))
                    corrupted[position] = rng.integers(256)
            try:
                decode(bytes(corrupted))
            except ScatterSimError:
                pass

    def test_huge_header_dims(self):
        ridge = MappingKind.RIDGE_AFFINE.code
        huge = 0xFFFFFFFF
        too_large = [
            (b"SLM1" + struct.pack("<BIIIIQ", ridge, 65535, 65535, 65535, 65535, 0), decode_mapping),
            (b"SDS1" + struct.pack("<IIIII", 0, huge, huge, huge, huge), decode_dataset),
            (b"SDS1" + struct.pack("<IIIII", 3, 2, 2, huge, 1), decode_dataset),
            (b"STM1" + struct.pack("<BII", MediumKind.LINEAR.code, huge, huge), decode_medium),
            (
                b"SLM1"
                + struct.pack("<BIIIIQ", MappingKind.SMALL_NET.code, 2, 2, 2, 2, 0)
                + struct.pack("<I3I", 3, 4, huge, 4),
                decode_mapping,
            ),
        ]
        for data, decode in too_large:
            with self.assertRaises(FormatError):
                decode(data)
        announced = [
            (b"SLM1" + struct.pack("<BIIIIQ", ridge, 4096, 4096, 4096, 4096, 0), decode_mapping),
            (b"SDS1" + struct.pack("<IIIII", 1, 4096, 4096, 4096, 4096), decode_dataset),
            (b"STM1" + struct.pack("<BII", MediumKind.LINEAR.code, 1 << 24, 1 << 24), decode_medium),
        ]
        for data, decode in announced:
            with self.assertRaises(TruncationError):
                decode(data)

    def test_random_header_dims(self):
        rng = np.random.default_rng(5)
        for _ in range(300):
            dims = [int(value) for value in rng.integers(0, 1 << 32, size=4, dtype=np.uint64)]
            count = int(rng.integers(0, 1 << 32, dtype=np.uint64))
            streams = [
                (b"SDS1" + struct.pack("<IIIII", count, *dims), decode_dataset),
                (
                    b"SLM1" + struct.pack("<BIIIIQ", MappingKind.RIDGE_AFFINE.code, *dims, 0),
                    decode_mapping,
                ),
                (b"STM1" + struct.pack("<BII", MediumKind.LINEAR.code, *dims[:2]), decode_medium),
            ]
            for data, decode in streams:
                with self.assertRaises(ScatterSimError):
                    decode(data)

    def test_every_truncation(self):
        data = encode_medium(generate_medium(MediumSpec(MediumKind.LINEAR, (2, 2), (2, 2), 0)))
        for length in range(len(data)):
            with self.assertRaises(TruncationError):
                decode_medium(data[:length])


def sample_report(case=CaseId.C1):
    metrics = [
        MetricReport(case.value, "texture", 0, 0.99, 0.95, 0.999, 1.0),
        MetricReport(case.value, "texture", 1, 0.98, 0.9, 0.998, 1.0),
        MetricReport(case.value, "digit", 0, 0.5, math.nan, 0.7, 0.25),
    ]
    truth = np.eye(8)
    return CaseReport(
        case=case,
        metrics=metrics,
        means=family_means(metrics),
        config={"seed": 3, "train_count": 10},
        config_hash="0123456789abcdef",
        medium_fingerprint=11,
        training_fingerprint=12,
        disjoint=True,
        coverage_saturated=np.ones((8, 8)),
        coverage_normalized=np.linspace(0, 1, 64).reshape(8, 8),
        images=[ReconImage("texture", 0, truth * 0.5, truth)],
    )


class ReportTest(MediumBaseTest):
    __test__ = True

    def test_emit_and_load(self):
        directory = self.tmp_path / "case-1"
        manifest = emit_report(sample_report(), directory)
        names = sorted(path.name for path in directory.iterdir())
        self.assertEqual(
            names,
            [
                "config.json",
                "coverage_normalized.pgm",
                "coverage_saturated.pgm",
                "manifest.json",
                "recon_texture_0.pgm",
                "report.csv",
                "trend.csv",
                "truth_texture_0.pgm",
            ],
        )
        self.assertEqual(len(manifest.files), 7)
        loaded = load_report(directory)
        self.assertEqual(loaded.case, CaseId.C1)
        self.assertEqual(loaded.config_hash, "0123456789abcdef")
        self.assertEqual((loaded.medium_fingerprint, loaded.training_fingerprint), (11, 12))
        self.assertTrue(loaded.disjoint)
        self.assertEqual(loaded.families, ["texture", "digit"])
        self.assertAlmostEqual(loaded.mean("texture"), 0.985)
        self.assertTrue(math.isnan(loaded.metrics[2].ssim))
        np.testing.assert_allclose(
            loaded.coverage_normalized, sample_report().coverage_normalized, atol=1 / 255
        )
        self.assertTrue(math.isnan(loaded.untrained_max_abs))

    def test_report_csv(self):
        directory = self.tmp_path / "csv"
        emit_report(sample_report(), directory)
        lines = (directory / "report.csv").read_text(encoding="utf-8").splitlines()
        self.assertEqual(lines[0], ",".join(REPORT_COLUMNS))
        self.assertEqual(lines[3], "1,digit,0,0.5,,0.7,0.25")

    def test_deterministic_bytes(self):
        first, second = self.tmp_path / "first", self.tmp_path / "second"
        emit_report(sample_report(), first)
        emit_report(sample_report(), second)
        for name in ("report.csv", "trend.csv", "manifest.json", "coverage_normalized.pgm"):
            self.assertEqual((first / name).read_bytes(), (second / name).read_bytes())

    def test_tampered_report(self):
        directory = self.tmp_path / "tampered"
        emit_report(sample_report(), directory)
        with open(directory / "report.csv", "a", encoding="utf-8") as file:
            file.write("1,digit,1,0,0,0,0\n")
        with self.assertRaises(ConsistencyError):
            load_report(directory)

    def test_missing_manifest(self):
        with self.assertRaises(ScatterIOError):
            load_report(self.tmp_path / "nothing")

    def test_header_only_csv(self):
        path = self.tmp_path / "empty.csv"
        write_metrics_csv([], path)
        self.assertEqual(read_metrics_csv(path), [])
        path.write_text("case,family\n", encoding="utf-8")
        with self.assertRaises(FormatError):
            read_metrics_csv(path)
        path.write_text(",".join(REPORT_COLUMNS) + "\n1,digit,x,1,1,1,1\n", encoding="utf-8")
        with self.assertRaises(FormatError):
            read_metrics_csv(path)

    def test_format_value(self):
        self.assertEqual(format_value(math.nan), "")
        self.assertEqual(format_value(0.123456789), "0.123457")
        self.assertEqual(format_value(1e-7), "1e-07")
