import struct

import numpy as np
import pytest

from ssvepnet import (ArchiveCorruptionError, ArchiveDataError, ArchiveFormatError,
                      RecordingMeta, SsvepArchive, extract_epochs, filter_blocks,
                      merge_trialsets, plan_leave_one_block_out, read_archive,
                      select_channels, write_archive)
from ssvepnet.dataset import round_half_away


def tiny_meta(**over):
    fields = dict(
        subject_id="S1",
        sampling_rate_hz=4.0,
        n_blocks=1,
        n_targets=1,
        n_channels=1,
        n_samples=4,
        stimulus_freqs_hz=(1.0,),
        stimulus_phases_rad=(0.0,),
        channel_names=("CH0",),
        cue_duration_s=0.0,
        visual_latency_s=0.0,
    )
    fields.update(over)
    return RecordingMeta(**fields)


def tiny_archive():
    data = np.arange(4, dtype=np.float32).reshape(1, 1, 1, 4)
    return SsvepArchive(meta=tiny_meta(), data=data)


def random_archive(rng, n_blocks, n_targets, n_channels, n_samples, fs=250.0):
    meta = tiny_meta(
        subject_id=f"R{n_blocks}{n_targets}",
        sampling_rate_hz=fs,
        n_blocks=n_blocks, n_targets=n_targets,
        n_channels=n_channels, n_samples=n_samples,
        stimulus_freqs_hz=tuple(8.0 + 0.2 * j for j in range(n_targets)),
        stimulus_phases_rad=tuple(0.0 for _ in range(n_targets)),
        channel_names=tuple(f"CH{i}" for i in range(n_channels)),
        cue_duration_s=0.5, visual_latency_s=0.14,
    )
    data = rng.standard_normal((n_blocks, n_targets, n_channels, n_samples)).astype(np.float32)
    return SsvepArchive(meta=meta, data=data)


class TestArchiveIO:
    def test_minimal_round_trip(self, tmp_path):
        path = tmp_path / "a.ssvep"
        archive = tiny_archive()
        write_archive(archive, path)
        back = read_archive(path)
        assert np.array_equal(back.data, archive.data)
        assert back.meta == archive.meta

    def test_round_trip_random_archives(self, tmp_path):
        rng = np.random.default_rng(3)
        for i in range(8):
            shape = rng.integers(1, 5, size=4)
            archive = random_archive(rng, *map(int, shape), fs=float(rng.integers(10, 300)))
            path = tmp_path / f"r{i}.ssvep"
            write_archive(archive, path)
            back = read_archive(path)
            assert np.array_equal(back.data, archive.data)
            assert back.meta == archive.meta

    def test_two_writes_byte_identical(self, tmp_path):
        archive = tiny_archive()
        p1, p2 = tmp_path / "x1", tmp_path / "x2"
        write_archive(archive, p1)
        write_archive(archive, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad"
        path.write_bytes(b"NOTMAGIC" + b"\x00" * 32)
        with pytest.raises(ArchiveFormatError):
            read_archive(path)

    def test_payload_size_mismatch(self, tmp_path):
        # header declares 2 channels, payload sized for 1
        path = tmp_path / "corrupt"
        archive = tiny_archive()
        write_archive(archive, path)
        blob = bytearray(path.read_bytes())
        (hlen,) = struct.unpack("<Q", blob[8:16])
        header = blob[16:16 + hlen].decode().replace('"n_channels":1', '"n_channels":2')
        header = header.replace('"channel_names":["CH0"]', '"channel_names":["CH0","CH1"]')
        path.write_bytes(blob[:8] + struct.pack("<Q", len(header)) + header.encode() + blob[16 + hlen:])
        with pytest.raises(ArchiveCorruptionError):
            read_archive(path)

    def test_trailing_bytes_rejected(self, tmp_path):
        path = tmp_path / "trailing"
        write_archive(tiny_archive(), path)
        path.write_bytes(path.read_bytes() + b"\x00")
        with pytest.raises(ArchiveCorruptionError):
            read_archive(path)

    def test_extra_header_field_rejected(self, tmp_path):
        path = tmp_path / "extra"
        write_archive(tiny_archive(), path)
        blob = bytearray(path.read_bytes())
        (hlen,) = struct.unpack("<Q", blob[8:16])
        header = blob[16:16 + hlen].decode().replace(
            '"subject_id":"S1"', '"subject_id":"S1","comment":"x"')
        path.write_bytes(blob[:8] + struct.pack("<Q", len(header)) + header.encode()
                         + blob[16 + hlen:])
        with pytest.raises(ArchiveFormatError):
            read_archive(path)

    def test_nan_rejected_before_write(self, tmp_path):
        data = np.full((1, 1, 1, 4), np.nan, dtype=np.float32)
        with pytest.raises(ArchiveDataError):
            SsvepArchive(meta=tiny_meta(), data=data)

    def test_nonfinite_payload_rejected_on_read(self, tmp_path):
        path = tmp_path / "inf"
        write_archive(tiny_archive(), path)
        blob = bytearray(path.read_bytes())
        blob[-4:] = struct.pack("<f", np.inf)
        path.write_bytes(bytes(blob))
        with pytest.raises(ArchiveDataError):
            read_archive(path)

    def test_benchmark_scale_shape(self, tmp_path):
        # full-size benchmark-shaped tensor: 6 blocks x 40 targets x 64 ch x 1500
        meta = tiny_meta(
            n_blocks=6, n_targets=40, n_channels=64, n_samples=1500,
            sampling_rate_hz=250.0,
            stimulus_freqs_hz=tuple(8.0 + 0.2 * j for j in range(40)),
            stimulus_phases_rad=tuple(0.0 for _ in range(40)),
            channel_names=tuple(f"E{i}" for i in range(64)),
            cue_duration_s=0.5, visual_latency_s=0.14,
        )
        archive = SsvepArchive(meta=meta, data=np.zeros((6, 40, 64, 1500), np.float32))
        path = tmp_path / "bench.ssvep"
        write_archive(archive, path)
        back = read_archive(path)
        assert back.data.shape == (6, 40, 64, 1500)
        assert back.meta.sampling_rate_hz == 250.0


class TestExtractEpochs:
    def test_benchmark_window_arithmetic(self):
        # cue 0.5 s + latency 0.14 s at 250 Hz -> start sample 160; T=0.4 -> N=100
        assert round_half_away((0.5 + 0.14) * 250.0) == 160
        assert round_half_away(0.4 * 250.0) == 100
        rng = np.random.default_rng(0)
        archive = random_archive(rng, 2, 3, 2, 300)
        trials = extract_epochs(archive, 0.4)
        assert trials.n_epoch_samples == 100
        assert np.array_equal(trials.epochs[0], archive.data[0, 0, :, 160:260].astype(np.float64))

    def test_full_window_hits_last_sample(self):
        rng = np.random.default_rng(1)
        archive = random_archive(rng, 1, 2, 1, 260)
        # remaining length after 160 start samples: 100 samples = 0.4 s
        trials = extract_epochs(archive, 0.4)
        assert np.array_equal(trials.epochs[-1][:, -1],
                              archive.data[0, 1, :, 259].astype(np.float64))

    def test_overrun_raises(self):
        rng = np.random.default_rng(2)
        archive = random_archive(rng, 1, 1, 1, 200)
        with pytest.raises(ValueError):
            extract_epochs(archive, 0.3)  # 160 + 75 > 200

    def test_labels_and_blocks(self):
        rng = np.random.default_rng(3)
        archive = random_archive(rng, 3, 4, 2, 300)
        trials = extract_epochs(archive, 0.2)
        # one trial per (block, target); label balance: each label n_blocks times
        assert trials.n_trials == 12
        assert np.array_equal(np.bincount(trials.labels), [3, 3, 3, 3])
        assert np.array_equal(np.bincount(trials.block_indices), [4, 4, 4])

    def test_deterministic(self):
        rng = np.random.default_rng(4)
        archive = random_archive(rng, 2, 2, 2, 300)
        a = extract_epochs(archive, 0.3)
        b = extract_epochs(archive, 0.3)
        assert np.array_equal(a.epochs, b.epochs)
        assert a.epochs.tobytes() == b.epochs.tobytes()


class TestSelectChannels:
    def test_subset_order(self):
        rng = np.random.default_rng(5)
        archive = random_archive(rng, 1, 1, 4, 300)
        trials = extract_epochs(archive, 0.2)
        picked = select_channels(trials, ["CH2", "CH0"], archive.meta)
        assert picked.n_channels == 2
        assert np.array_equal(picked.epochs[:, 0], trials.epochs[:, 2])
        assert np.array_equal(picked.epochs[:, 1], trials.epochs[:, 0])

    def test_identity(self):
        rng = np.random.default_rng(6)
        archive = random_archive(rng, 1, 1, 3, 300)
        trials = extract_epochs(archive, 0.2)
        same = select_channels(trials, list(archive.meta.channel_names), archive.meta)
        assert np.array_equal(same.epochs, trials.epochs)

    def test_unknown_name(self):
        rng = np.random.default_rng(7)
        archive = random_archive(rng, 1, 1, 2, 300)
        trials = extract_epochs(archive, 0.2)
        with pytest.raises(KeyError):
            select_channels(trials, ["XX"], archive.meta)


class TestFoldPlan:
    def test_six_blocks(self):
        plan = plan_leave_one_block_out(6)
        assert len(plan) == 6
        for k, fold in enumerate(plan):
            assert fold.test_block == k
            assert len(fold.train_blocks) == 5
            assert k not in fold.train_blocks

    def test_two_blocks(self):
        plan = plan_leave_one_block_out(2)
        assert [(f.test_block, f.train_blocks) for f in plan] == [(0, (1,)), (1, (0,))]

    def test_one_block_rejected(self):
        with pytest.raises(ValueError):
            plan_leave_one_block_out(1)

    def test_coverage_property(self):
        for n in range(2, 9):
            plan = plan_leave_one_block_out(n)
            tests = [f.test_block for f in plan]
            assert sorted(tests) == list(range(n))
            train_counts = np.zeros(n, int)
            for f in plan:
                assert set(f.train_blocks) | {f.test_block} == set(range(n))
                assert f.test_block not in f.train_blocks
                for b in f.train_blocks:
                    train_counts[b] += 1
            assert (train_counts == n - 1).all()


class TestMerge:
    def test_single_identity(self):
        rng = np.random.default_rng(8)
        trials = extract_epochs(random_archive(rng, 2, 2, 2, 300), 0.2)
        merged = merge_trialsets([trials])
        assert merged is trials

    def test_concat_provenance(self):
        rng = np.random.default_rng(9)
        a = extract_epochs(random_archive(rng, 2, 3, 2, 300), 0.2)
        b = extract_epochs(random_archive(rng, 2, 3, 2, 300), 0.2)
        merged = merge_trialsets([a, b])
        assert merged.n_trials == a.n_trials + b.n_trials
        assert merged.subject_ids == a.subject_ids + b.subject_ids
        assert np.array_equal(merged.block_indices,
                              np.concatenate([a.block_indices, b.block_indices]))

    def test_many_subject_pool_size(self):
        # 35 subjects x 5 blocks x 40 targets pooled for global training
        rng = np.random.default_rng(12)
        sets = []
        for i in range(35):
            meta = tiny_meta(subject_id=f"S{i:02d}", n_blocks=5, n_targets=40,
                             n_channels=1, n_samples=4, sampling_rate_hz=4.0,
                             stimulus_freqs_hz=tuple(1.0 + 0.01 * j for j in range(40)),
                             stimulus_phases_rad=(0.0,) * 40,
                             channel_names=("CH0",))
            data = rng.standard_normal((5, 40, 1, 4)).astype(np.float32)
            sets.append(extract_epochs(SsvepArchive(meta=meta, data=data), 0.5))
        merged = merge_trialsets(sets)
        assert merged.n_trials == 7000

    def test_mismatched_samples_rejected(self):
        rng = np.random.default_rng(10)
        a = extract_epochs(random_archive(rng, 1, 2, 2, 300), 0.2)
        b = extract_epochs(random_archive(rng, 1, 2, 2, 300), 0.3)
        with pytest.raises(ValueError):
            merge_trialsets([a, b])

    def test_filter_blocks(self):
        rng = np.random.default_rng(11)
        trials = extract_epochs(random_archive(rng, 4, 2, 2, 300), 0.2)
        kept = filter_blocks(trials, [1, 3])
        assert set(kept.block_indices) == {1, 3}
        assert kept.n_trials == 4
