from __future__ import absolute_import, division, print_function

import ast
import copy
import hashlib
import json
import math
import os

from absl import logging

from core import DISTILL_TARGETS, ConfigError, KDWeights, TAU_MAX, TAU_MIN

CONFIG_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'configs')
SEED_ENV = 'MMKD_SEED'
PRESETS = ('desk', 'paper')
SUPPORTED_TEACHER_DIMS = (512, 768)


def _read_dict_file(path):
    if not os.path.exists(path):
        raise ConfigError('%s config file not found!' % path)
    with open(path, 'r') as f:
        try:
            return ast.literal_eval(f.read())
        except (SyntaxError, ValueError) as e:
            raise ConfigError('cannot parse %s: %s' % (path, e))


class Config(object):
    """Run options, exposed as attributes.

    Precedence: configs/base_config.py < configs/<preset>_config.py <
    user JSON < explicit overrides < MMKD_SEED.
    """

    def __init__(self, preset='desk', config_file=None, overrides=None, use_env=True):
        self.__dict__ = _read_dict_file(os.path.join(CONFIG_DIR, 'base_config.py'))
        known_keys = set(self.__dict__.keys())

        if preset not in PRESETS:
            raise ConfigError('unknown preset %r, expected one of %s' % (preset, PRESETS))
        self.__dict__.update(_read_dict_file(os.path.join(CONFIG_DIR, preset + '_config.py')))

        if config_file is not None:
            if not os.path.exists(config_file):
                raise ConfigError('%s config file not found!' % config_file)
            with open(config_file, 'r') as f:
                try:
                    user_dict = json.load(f)
                except ValueError as e:
                    raise ConfigError('cannot parse %s: %s' % (config_file, e))
            self._update_known(user_dict, known_keys, config_file)

        if overrides:
            self._update_known(overrides, known_keys, 'overrides')

        if use_env and os.environ.get(SEED_ENV):
            try:
                self.seed = int(os.environ[SEED_ENV])
            except ValueError:
                raise ConfigError('%s must be an integer, got %r' % (SEED_ENV, os.environ[SEED_ENV]))
            logging.info('seed overridden by %s=%d', SEED_ENV, self.seed)

        self.preset = preset
        self.validate()

    def _update_known(self, values, known_keys, source):
        unknown = sorted(set(values.keys()) - known_keys)
        if unknown:
            raise ConfigError('unknown config keys in %s: %s' % (source, ', '.join(unknown)))
        self.__dict__.update(copy.deepcopy(values))

    def validate(self):
        for key in ('pretrain_batch_size', 'distill_batch_size'):
            if getattr(self, key) < 2:
                raise ConfigError('%s must be >= 2 for contrastive stages' % key)
        for key in ('pretrain_lr', 'distill_lr', 'align_lr', 'probe_lr', 'survival_lr'):
            value = getattr(self, key)
            if not (math.isfinite(value) and value > 0):
                raise ConfigError('%s must be a positive finite number' % key)
        if not TAU_MIN <= self.tau_init <= TAU_MAX:
            raise ConfigError('tau_init must lie in [%g, %g]' % (TAU_MIN, TAU_MAX))
        if self.n_classes < 2 or self.n_pairs < self.n_classes:
            raise ConfigError('need n_pairs >= n_classes >= 2')
        if self.lr_decay not in ('constant', 'cosine'):
            raise ConfigError('lr_decay must be constant or cosine')
        if self.loss_reduction not in ('mean', 'sum'):
            raise ConfigError('loss_reduction must be mean or sum')
        if self.distill_target not in DISTILL_TARGETS:
            raise ConfigError('distill_target must be one of %s' % (DISTILL_TARGETS,))
        if self.survival_intervals < 1:
            raise ConfigError('survival_intervals must be >= 1')
        teacher_ids = [t['teacher_id'] for t in self.teachers]
        if len(set(teacher_ids)) != len(teacher_ids):
            raise ConfigError('duplicate teacher ids %s' % teacher_ids)
        for teacher in self.teachers:
            if teacher['native_dim'] not in SUPPORTED_TEACHER_DIMS:
                raise ConfigError('teacher %d native_dim must be one of %s' % (
                    teacher['teacher_id'], SUPPORTED_TEACHER_DIMS))
        self.kd = KDWeights(*self.kd_weights)

    def to_dict(self):
        return dict((k, v) for k, v in self.__dict__.items() if k != 'kd')

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    def config_hash(self):
        return hashlib.sha256(self.to_json().encode('utf-8')).hexdigest()

    def save(self, path):
        with open(path, 'w') as f:
            json.dump(self.to_dict(), f, sort_keys=True, indent=2)

    @classmethod
    def load(cls, path):
        """Restores a config saved next to a checkpoint."""
        with open(path, 'r') as f:
            saved = json.load(f)
        preset = saved.pop('preset', 'desk')
        return cls(preset=preset, overrides=saved, use_env=False)

    def replace(self, **overrides):
        """Copy with `overrides` applied; the environment seed is not re-read."""
        values = self.to_dict()
        preset = values.pop('preset')
        values.update(overrides)
        return Config(preset=preset, overrides=values, use_env=False)

    def teacher_options(self, teacher_id):
        for teacher in self.teachers:
            if teacher['teacher_id'] == teacher_id:
                return teacher
        raise ConfigError('no teacher %r configured' % teacher_id)


def get_config(preset='desk', config_file=None, overrides=None):
    return Config(preset=preset, config_file=config_file, overrides=overrides)
