"""Quadruplet shards and corpus manifests.

Shard layout (little-endian):

    header   magic "MKD1" | version u32 | feature_dim u32 | record_count u64   (20 bytes)
    record   image_id u64 | text_id u64 | teacher_id u16 | pad u16 | reserved u32
             | image feature f32[feature_dim] | text feature f32[feature_dim]

Records have a fixed stride of 24 + 8 * feature_dim bytes. Shards are written
to a temporary file and renamed into place; they are never modified after.
"""
from __future__ import absolute_import, division, print_function

import json
import os
import struct
from collections import OrderedDict

import attr
import numpy as np
from absl import logging

from core import (BadMagicError, CountMismatchError, Embedding, FeatureStoreError,
                  ManifestError, NonFiniteError, Quadruplet, ShapeMismatchError,
                  TruncatedShardError)

MAGIC = b'MKD1'
VERSION = 1
HEADER = struct.Struct('<4sIIQ')
HEADER_SIZE = HEADER.size
WRITE_CHUNK = 4096


def record_dtype(feature_dim):
    return np.dtype([('image_id', '<u8'), ('text_id', '<u8'), ('teacher_id', '<u2'),
                     ('pad', '<u2'), ('reserved', '<u4'),
                     ('image_feature', '<f4', (feature_dim,)),
                     ('text_feature', '<f4', (feature_dim,))])


def record_stride(feature_dim):
    return 24 + 8 * feature_dim


@attr.s(frozen=True)
class ShardHeader(object):
    magic = attr.ib()
    version = attr.ib(converter=int)
    feature_dim = attr.ib(converter=int)
    record_count = attr.ib(converter=int)

    @property
    def stride(self):
        return record_stride(self.feature_dim)

    def pack(self):
        return HEADER.pack(self.magic, self.version, self.feature_dim, self.record_count)


def shard_path(shard_dir, teacher_id, split='train'):
    return os.path.join(shard_dir, 'teacher%02d_%s.mkd' % (teacher_id, split))


def _to_record(q, feature_dim, buffer, index):
    if q.teacher_image_feature.dim != feature_dim:
        raise ShapeMismatchError('quadruplet (%d, %d) has dim %d, shard dim is %d' % (
            q.image_id, q.text_id, q.teacher_image_feature.dim, feature_dim))
    buffer['image_id'][index] = q.image_id
    buffer['text_id'][index] = q.text_id
    buffer['teacher_id'][index] = q.teacher_id
    buffer['image_feature'][index] = q.teacher_image_feature.values
    buffer['text_feature'][index] = q.teacher_text_feature.values
    if not (np.all(np.isfinite(buffer['image_feature'][index])) and
            np.all(np.isfinite(buffer['text_feature'][index]))):
        raise NonFiniteError('quadruplet (%d, %d) has non-finite features' % (q.image_id, q.text_id))


def write_shard(path, quadruplets, feature_dim):
    """Streams quadruplets into a new shard and returns its header."""
    if feature_dim <= 0:
        raise ShapeMismatchError('feature_dim must be > 0')
    dtype = record_dtype(feature_dim)
    dir_name = os.path.dirname(path)
    if dir_name:
        os.makedirs(dir_name, exist_ok=True)
    tmp_path = path + '.tmp'
    count = 0
    buffer = np.zeros([WRITE_CHUNK], dtype=dtype)
    filled = 0
    try:
        with open(tmp_path, 'wb') as f:
            f.write(ShardHeader(MAGIC, VERSION, feature_dim, 0).pack())
            for q in quadruplets:
                _to_record(q, feature_dim, buffer, filled)
                filled += 1
                count += 1
                if filled == WRITE_CHUNK:
                    f.write(buffer.tobytes())
                    filled = 0
            f.write(buffer[:filled].tobytes())
            header = ShardHeader(MAGIC, VERSION, feature_dim, count)
            f.seek(0)
            f.write(header.pack())
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise
    logging.debug('wrote %d records to %s', count, path)
    return header


def read_shard_header(path):
    size = os.path.getsize(path)
    if size < HEADER_SIZE:
        raise TruncatedShardError('%s: %d bytes is shorter than the header' % (path, size))
    with open(path, 'rb') as f:
        magic, version, feature_dim, record_count = HEADER.unpack(f.read(HEADER_SIZE))
    if magic != MAGIC:
        raise BadMagicError('%s: bad magic %r' % (path, magic))
    if version != VERSION:
        raise FeatureStoreError('%s: unsupported shard version %d' % (path, version))
    if feature_dim == 0:
        raise FeatureStoreError('%s: feature_dim is 0' % path)
    header = ShardHeader(magic, version, feature_dim, record_count)
    body = size - HEADER_SIZE
    if body % header.stride != 0:
        raise TruncatedShardError('%s: body of %d bytes is not a whole number of %d-byte records' % (
            path, body, header.stride))
    if body // header.stride != record_count:
        raise CountMismatchError('%s: header says %d records, file holds %d' % (
            path, record_count, body // header.stride))
    return header


def read_shard_array(path):
    """(header, read-only memmap of the records)."""
    header = read_shard_header(path)
    if header.record_count == 0:
        return header, np.zeros([0], dtype=record_dtype(header.feature_dim))
    records = np.memmap(path, dtype=record_dtype(header.feature_dim), mode='r',
                        offset=HEADER_SIZE, shape=(header.record_count,))
    return header, records


def _iter_records(records):
    for record in records:
        yield Quadruplet(int(record['image_id']), int(record['text_id']), int(record['teacher_id']),
                         Embedding(np.array(record['image_feature'])),
                         Embedding(np.array(record['text_feature'])))


def read_shard(path):
    """Validates the shard eagerly, then streams its Quadruplets in order."""
    _, records = read_shard_array(path)
    return _iter_records(records)


def read_shards(paths):
    for path in paths:
        for q in read_shard(path):
            yield q


def write_bag_shard(path, instances, subject_id=0):
    """Stores a bag of instance features; the text slot is left at zero."""
    instances = np.asarray(instances, dtype=np.float32)
    zeros = np.zeros([instances.shape[1]], dtype=np.float32)
    quads = (Quadruplet(subject_id, k, 0, Embedding(h), Embedding(zeros))
             for k, h in enumerate(instances))
    return write_shard(path, quads, instances.shape[1])


def read_bag_shard(path):
    _, records = read_shard_array(path)
    return np.array(records['image_feature'])


@attr.s(frozen=True)
class ManifestEntry(object):
    image_id = attr.ib(converter=int)
    text_id = attr.ib(converter=int)
    modality = attr.ib(converter=str)
    image_path = attr.ib(converter=str)
    text = attr.ib(converter=str)
    label = attr.ib(default=None)
    split = attr.ib(default=None)

    def to_json(self):
        d = OrderedDict([('image_id', self.image_id), ('text_id', self.text_id),
                         ('modality', self.modality), ('image_path', self.image_path),
                         ('text', self.text)])
        if self.label is not None:
            d['label'] = int(self.label)
        if self.split is not None:
            d['split'] = str(self.split)
        return json.dumps(d)


@attr.s(frozen=True)
class CorpusManifest(object):
    entries = attr.ib(converter=list)

    def __len__(self):
        return len(self.entries)

    def tally(self):
        """Pairs per modality, in first-seen order."""
        counts = OrderedDict()
        for e in self.entries:
            counts[e.modality] = counts.get(e.modality, 0) + 1
        return counts


REQUIRED_FIELDS = ('image_id', 'text_id', 'modality', 'image_path', 'text')


def read_manifest(path):
    """Parses a JSON-lines manifest; blank lines are skipped."""
    entries = []
    seen = set()
    with open(path, 'r') as f:
        for line_number, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except ValueError as e:
                raise ManifestError('malformed JSON (%s)' % e, line_number)
            if not isinstance(row, dict):
                raise ManifestError('expected a JSON object', line_number)
            missing = [k for k in REQUIRED_FIELDS if k not in row]
            if missing:
                raise ManifestError('missing fields %s' % ', '.join(missing), line_number)
            try:
                entry = ManifestEntry(**dict((k, row[k]) for k in row
                                             if k in attr.fields_dict(ManifestEntry)))
            except (TypeError, ValueError) as e:
                raise ManifestError('bad field value (%s)' % e, line_number)
            key = (entry.image_id, entry.text_id)
            if key in seen:
                raise ManifestError('duplicate pair (image_id=%d, text_id=%d)' % key, line_number)
            seen.add(key)
            entries.append(entry)
    return CorpusManifest(entries)


def write_manifest(path, entries):
    seen = set()
    for line_number, e in enumerate(entries, 1):
        key = (e.image_id, e.text_id)
        if key in seen:
            raise ManifestError('duplicate pair (image_id=%d, text_id=%d)' % key, line_number)
        seen.add(key)
    dir_name = os.path.dirname(path)
    if dir_name:
        os.makedirs(dir_name, exist_ok=True)
    with open(path, 'w') as f:
        for e in entries:
            f.write(e.to_json() + '\n')
    return CorpusManifest(entries)


def manifest_io(path, entries=None):
    """Reads the manifest at `path`, or writes `entries` there when given."""
    if entries is not None:
        return write_manifest(path, entries)
    return read_manifest(path)
