import json

import pytest

from config import SEED_ENV, Config, get_config
from core import ConfigError, KDWeights


class TestPrecedence:
    def test_preset_over_base(self):
        desk = get_config('desk')
        paper = get_config('paper')
        assert desk.pretrain_lr == 1e-3
        assert paper.pretrain_lr == 5e-5
        assert paper.image_shape == [224, 224, 3]
        assert desk.preset == 'desk'

    def test_file_then_overrides(self, tmp_path):
        path = str(tmp_path / 'user.json')
        with open(path, 'w') as f:
            json.dump({'pretrain_epochs': 3, 'distill_epochs': 4}, f)
        config = get_config('desk', config_file=path, overrides={'distill_epochs': 5})
        assert config.pretrain_epochs == 3
        assert config.distill_epochs == 5

    def test_seed_from_environment(self, monkeypatch):
        monkeypatch.setenv(SEED_ENV, '42')
        assert get_config('desk', overrides={'seed': 1}).seed == 42
        assert Config('desk', overrides={'seed': 1}, use_env=False).seed == 1

    def test_bad_seed_environment(self, monkeypatch):
        monkeypatch.setenv(SEED_ENV, 'seven')
        with pytest.raises(ConfigError):
            get_config('desk')

    def test_unknown_key(self):
        with pytest.raises(ConfigError) as e:
            get_config('desk', overrides={'pretrain_epocs': 2})
        assert 'pretrain_epocs' in str(e.value)

    def test_unknown_preset(self):
        with pytest.raises(ConfigError):
            get_config('cluster')

    def test_missing_and_malformed_file(self, tmp_path):
        with pytest.raises(ConfigError):
            get_config('desk', config_file=str(tmp_path / 'nope.json'))
        path = tmp_path / 'bad.json'
        path.write_text('{not json')
        with pytest.raises(ConfigError):
            get_config('desk', config_file=str(path))

    def test_overrides_are_copied(self):
        teachers = [{'teacher_id': 0, 'seed': 1, 'native_dim': 512, 'signal': 1.0, 'noise': 0.1}]
        config = get_config('desk', overrides={'teachers': teachers})
        config.teachers[0]['seed'] = 99
        assert teachers[0]['seed'] == 1


class TestValidation:
    @pytest.mark.parametrize('overrides', [
        {'pretrain_batch_size': 1},
        {'distill_batch_size': 1},
        {'distill_lr': 0.0},
        {'align_lr': float('nan')},
        {'tau_init': 1e-4},
        {'n_classes': 1},
        {'n_pairs': 2},
        {'lr_decay': 'step'},
        {'loss_reduction': 'max'},
        {'survival_intervals': 0},
        {'distill_target': 'latent'},
    ])
    def test_rejects(self, overrides):
        with pytest.raises(ConfigError):
            get_config('desk', overrides=overrides)

    def test_duplicate_teacher_ids(self):
        teachers = [{'teacher_id': 0, 'seed': 1, 'native_dim': 512, 'signal': 1.0, 'noise': 0.1},
                    {'teacher_id': 0, 'seed': 2, 'native_dim': 768, 'signal': 1.0, 'noise': 0.1}]
        with pytest.raises(ConfigError):
            get_config('desk', overrides={'teachers': teachers})

    def test_teacher_dim(self):
        teachers = [{'teacher_id': 0, 'seed': 1, 'native_dim': 256, 'signal': 1.0, 'noise': 0.1}]
        with pytest.raises(ConfigError):
            get_config('desk', overrides={'teachers': teachers})

    def test_kd_weights(self):
        config = get_config('desk', overrides={'kd_weights': [0.0, 1.0, 0.0]})
        assert config.kd == KDWeights(0.0, 1.0, 0.0)


class TestPersistence:
    def test_save_and_load(self, tmp_path):
        config = get_config('paper', overrides={'seed': 11, 'n_pairs': 64})
        path = str(tmp_path / 'config.json')
        config.save(path)
        loaded = Config.load(path)
        assert loaded.preset == 'paper'
        assert loaded.to_dict() == config.to_dict()
        assert loaded.config_hash() == config.config_hash()

    def test_replace_keeps_overrides(self, monkeypatch):
        config = get_config('paper', overrides={'n_pairs': 64, 'distill_epochs': 2})
        monkeypatch.setenv(SEED_ENV, '42')
        seeded = config.replace(seed=9)
        assert seeded.seed == 9
        assert seeded.preset == 'paper'
        assert seeded.n_pairs == 64 and seeded.distill_epochs == 2
        assert config.seed != 9

    def test_hash_tracks_values(self):
        a = get_config('desk')
        assert a.config_hash() == get_config('desk').config_hash()
        assert a.config_hash() != get_config('desk', overrides={'seed': 8}).config_hash()
        assert 'kd' not in json.loads(a.to_json())

    def test_teacher_options(self):
        config = get_config('desk')
        assert config.teacher_options(1)['native_dim'] == 768
        with pytest.raises(ConfigError):
            config.teacher_options(9)
