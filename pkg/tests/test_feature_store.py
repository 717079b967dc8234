import os

import numpy as np
import pytest

from core import (BadMagicError, CountMismatchError, Embedding, FeatureStoreError, ManifestError,
                  NonFiniteError, Quadruplet, ShapeMismatchError, TruncatedShardError)
from feature_store import (HEADER_SIZE, ManifestEntry, read_bag_shard, read_manifest, read_shard,
                           read_shard_header, read_shards, record_stride, shard_path,
                           write_bag_shard, write_manifest, write_shard)


def random_quadruplets(n, dim, seed=0):
    rng = np.random.default_rng(seed)
    image = rng.standard_normal((n, dim)).astype(np.float32)
    text = rng.standard_normal((n, dim)).astype(np.float32)
    ids = rng.integers(0, 2 ** 40, size=(n, 2))
    teacher_ids = rng.integers(0, 2 ** 16, size=n)
    return [Quadruplet(ids[i, 0], ids[i, 1], teacher_ids[i], Embedding(image[i]), Embedding(text[i]))
            for i in range(n)]


def small_shard(tmp_path, n=5, dim=8):
    path = str(tmp_path / 'shard.mkd')
    write_shard(path, random_quadruplets(n, dim), dim)
    return path


class TestShards:
    @pytest.mark.parametrize('dim', [512, 768])
    def test_bit_exact_round_trip(self, tmp_path, dim):
        quads = random_quadruplets(10000, dim, seed=dim)
        path = str(tmp_path / 'big.mkd')
        header = write_shard(path, iter(quads), dim)
        assert header.record_count == 10000
        assert os.path.getsize(path) == HEADER_SIZE + 10000 * record_stride(dim)
        n = 0
        for expected, got in zip(quads, read_shard(path)):
            assert got.key == expected.key and got.teacher_id == expected.teacher_id
            assert got.teacher_image_feature.values.astype(np.float32).tobytes() == \
                expected.teacher_image_feature.values.astype(np.float32).tobytes()
            assert got.teacher_text_feature.values.astype(np.float32).tobytes() == \
                expected.teacher_text_feature.values.astype(np.float32).tobytes()
            n += 1
        assert n == 10000

    def test_empty_shard(self, tmp_path):
        path = str(tmp_path / 'empty.mkd')
        write_shard(path, [], 16)
        assert read_shard_header(path).record_count == 0
        assert list(read_shard(path)) == []

    def test_no_temporary_left_behind(self, tmp_path):
        path = small_shard(tmp_path)
        assert not os.path.exists(path + '.tmp')

    def test_bad_magic(self, tmp_path):
        path = small_shard(tmp_path)
        with open(path, 'r+b') as f:
            f.write(b'XXXX')
        with pytest.raises(BadMagicError):
            read_shard(path)

    def test_truncated_record(self, tmp_path):
        path = small_shard(tmp_path)
        with open(path, 'r+b') as f:
            f.truncate(os.path.getsize(path) - 3)
        with pytest.raises(TruncatedShardError):
            read_shard(path)

    def test_truncated_header(self, tmp_path):
        path = str(tmp_path / 'stub.mkd')
        with open(path, 'wb') as f:
            f.write(b'MKD1')
        with pytest.raises(TruncatedShardError):
            read_shard_header(path)

    def test_missing_whole_record(self, tmp_path):
        path = small_shard(tmp_path, n=5, dim=8)
        with open(path, 'r+b') as f:
            f.truncate(HEADER_SIZE + 4 * record_stride(8))
        with pytest.raises(CountMismatchError):
            read_shard(path)

    def test_errors_share_a_base(self):
        for error in (BadMagicError, TruncatedShardError, CountMismatchError, ManifestError):
            assert issubclass(error, FeatureStoreError)

    def test_dim_mismatch(self, tmp_path):
        with pytest.raises(ShapeMismatchError):
            write_shard(str(tmp_path / 'x.mkd'), random_quadruplets(2, 8), 16)

    def test_non_finite_features(self, tmp_path):
        # finite in float64, overflows the float32 record
        q = Quadruplet(0, 0, 0, Embedding(np.ones(4)), Embedding(np.full(4, 1e39)))
        with pytest.raises(NonFiniteError):
            write_shard(str(tmp_path / 'x.mkd'), [q], 4)

    def test_failed_write_leaves_nothing(self, tmp_path):
        good = random_quadruplets(3, 4)
        bad = Quadruplet(1, 1, 0, Embedding(np.ones(4)), Embedding(np.full(4, 1e39)))
        path = str(tmp_path / 'x.mkd')
        with pytest.raises(NonFiniteError):
            write_shard(path, good + [bad], 4)
        assert os.listdir(str(tmp_path)) == []

        small_shard(tmp_path)
        before = read_shard_header(str(tmp_path / 'shard.mkd'))
        with pytest.raises(ShapeMismatchError):
            write_shard(str(tmp_path / 'shard.mkd'), random_quadruplets(2, 4), 8)
        assert read_shard_header(str(tmp_path / 'shard.mkd')) == before
        assert sorted(os.listdir(str(tmp_path))) == ['shard.mkd']

    def test_read_shards_concatenates(self, tmp_path):
        a = str(tmp_path / 'a.mkd')
        b = str(tmp_path / 'b.mkd')
        write_shard(a, random_quadruplets(3, 4, seed=1), 4)
        write_shard(b, random_quadruplets(2, 4, seed=2), 4)
        assert len(list(read_shards([a, b]))) == 5

    def test_shard_path(self):
        assert shard_path('out', 3, 'test') == os.path.join('out', 'teacher03_test.mkd')

    def test_bag_round_trip(self, tmp_path, rng):
        bag = rng.standard_normal((11, 32)).astype(np.float32)
        path = str(tmp_path / 'bag.mkd')
        write_bag_shard(path, bag, subject_id=4)
        np.testing.assert_array_equal(read_bag_shard(path), bag)


def entry(i, **kwargs):
    return ManifestEntry(image_id=i, text_id=i, modality='xray', image_path='images/%d.npy' % i,
                         text='an image of class0', **kwargs)


class TestManifest:
    def test_round_trip(self, tmp_path):
        path = str(tmp_path / 'manifest.jsonl')
        entries = [entry(0, label=1, split='train'), entry(1)]
        write_manifest(path, entries)
        manifest = read_manifest(path)
        assert manifest.entries == entries
        assert manifest.tally() == {'xray': 2}

    def test_blank_lines_are_skipped(self, tmp_path):
        path = str(tmp_path / 'manifest.jsonl')
        write_manifest(path, [entry(0)])
        with open(path, 'a') as f:
            f.write('\n\n')
        assert len(read_manifest(path)) == 1

    def test_duplicate_pair(self, tmp_path):
        path = str(tmp_path / 'manifest.jsonl')
        with pytest.raises(ManifestError):
            write_manifest(path, [entry(0), entry(0)])
        with open(path, 'w') as f:
            f.write(entry(0).to_json() + '\n' + entry(0).to_json() + '\n')
        with pytest.raises(ManifestError) as e:
            read_manifest(path)
        assert e.value.line_number == 2

    def test_missing_field_reports_line(self, tmp_path):
        path = str(tmp_path / 'manifest.jsonl')
        with open(path, 'w') as f:
            f.write(entry(0).to_json() + '\n')
            f.write('{"image_id": 1, "text_id": 1}\n')
        with pytest.raises(ManifestError) as e:
            read_manifest(path)
        assert e.value.line_number == 2

    def test_malformed_json(self, tmp_path):
        path = str(tmp_path / 'manifest.jsonl')
        with open(path, 'w') as f:
            f.write('{not json\n')
        with pytest.raises(ManifestError) as e:
            read_manifest(path)
        assert e.value.line_number == 1
