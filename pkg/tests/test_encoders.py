import numpy as np
import pytest

from core import ConfigError, EmptyInputError, ShapeMismatchError, normalize_rows
from models.encoders import (DualEncoder, EncoderConfig, ImageEncoder, TextEncoder, TeacherSpec,
                             build_student, encode_batches, encode_image, encode_text,
                             make_synthetic_teacher, teacher_features)


@pytest.fixture(scope='module')
def image_encoder():
    return ImageEncoder(EncoderConfig('image', [32], 64, seed=0, conv_filters=(4,)))


@pytest.fixture(scope='module')
def text_encoder(tokenizer):
    return TextEncoder(EncoderConfig('text', [32], 64, seed=1, vocab_size=tokenizer.vocab_size,
                                     embed_width=16, max_len=tokenizer.max_len))


class TestStudentEncoders:
    def test_image_output_is_unit_norm(self, image_encoder, corpus):
        out = encode_batches(image_encoder, corpus.images[:10])
        assert out.shape == (10, 64)
        np.testing.assert_allclose(np.linalg.norm(out, axis=1), 1.0, atol=1e-5)

    def test_text_output_is_unit_norm(self, text_encoder, corpus):
        out = encode_batches(text_encoder, corpus.tokens[:10])
        assert out.shape == (10, 64)
        np.testing.assert_allclose(np.linalg.norm(out, axis=1), 1.0, atol=1e-5)

    def test_single_matches_batch(self, image_encoder, text_encoder, corpus):
        batch = encode_batches(image_encoder, corpus.images[:3])
        np.testing.assert_allclose(encode_image(image_encoder, corpus.images[1]).values, batch[1],
                                   atol=1e-5)
        tokens = encode_batches(text_encoder, corpus.tokens[:3])
        np.testing.assert_allclose(encode_text(text_encoder, corpus.tokens[2]).values, tokens[2],
                                   atol=1e-5)

    def test_eval_mode_is_deterministic(self, image_encoder, corpus):
        a = encode_batches(image_encoder, corpus.images[:4])
        b = encode_batches(image_encoder, corpus.images[:4])
        np.testing.assert_array_equal(a, b)

    def test_wrong_image_shape(self, image_encoder):
        with pytest.raises(ShapeMismatchError):
            encode_image(image_encoder, np.zeros((8, 8, 3)))

    def test_empty_text(self, text_encoder, tokenizer):
        with pytest.raises(EmptyInputError):
            encode_text(text_encoder, np.zeros([0], np.int32))
        with pytest.raises(EmptyInputError):
            encode_text(text_encoder, np.zeros([tokenizer.max_len], np.int32))

    def test_long_text_is_truncated(self, text_encoder, tokenizer, corpus):
        tokens = corpus.tokens[0]
        longer = np.concatenate([tokens, tokens])
        np.testing.assert_allclose(encode_text(text_encoder, longer).values,
                                   encode_text(text_encoder, tokens).values, atol=1e-6)

    def test_empty_batch(self, image_encoder):
        assert encode_batches(image_encoder, np.zeros((0, 16, 16, 3))).shape == (0, 64)

    def test_bad_config(self):
        with pytest.raises(ConfigError):
            EncoderConfig('image', [0], 64)
        with pytest.raises(ConfigError):
            EncoderConfig('text', [8], 0)


class TestDualEncoder:
    def test_build_student(self, small_config, tokenizer, corpus):
        student = build_student(small_config, tokenizer)
        assert student.output_dim == small_config.embed_dim
        assert float(student.temperature.value()) == pytest.approx(0.07, rel=1e-5)
        out = student.encode_texts(corpus.captions[:3])
        np.testing.assert_allclose(np.linalg.norm(out, axis=1), 1.0, atol=1e-5)

    def test_same_seed_same_weights(self, small_config, tokenizer, corpus):
        a = build_student(small_config, tokenizer, seed=5).encode_images(corpus.images[:2])
        b = build_student(small_config, tokenizer, seed=5).encode_images(corpus.images[:2])
        np.testing.assert_array_equal(a, b)

    def test_mismatched_dims(self, image_encoder, tokenizer):
        text = TextEncoder(EncoderConfig('text', [8], 32, vocab_size=tokenizer.vocab_size,
                                         embed_width=8, max_len=tokenizer.max_len))
        with pytest.raises(ShapeMismatchError):
            DualEncoder(image_encoder, text)

    def test_texts_need_tokenizer(self, image_encoder, text_encoder):
        with pytest.raises(ValueError):
            DualEncoder(image_encoder, text_encoder).encode_texts(['an image of class0'])

    def test_trainable_variables_include_temperature(self, image_encoder, text_encoder):
        student = DualEncoder(image_encoder, text_encoder)
        names = [v.name for v in student.trainable_variables]
        assert any('log_tau' in n for n in names)


class TestTeachers:
    def test_native_dims(self, teachers, corpus):
        for teacher in teachers:
            image_features, text_features = teacher_features(teacher, corpus.take(range(5)))
            assert image_features.shape == (5, teacher.native_dim)
            assert text_features.shape == (5, teacher.native_dim)

    def test_bit_identical_repeats(self, teachers, corpus):
        for teacher in teachers:
            a = teacher.encode_image(corpus.images[0]).values
            b = teacher.encode_image(corpus.images[0]).values
            assert a.tobytes() == b.tobytes()

    def test_unsupported_dim(self, world):
        with pytest.raises(ConfigError):
            make_synthetic_teacher(1, 256, world)

    def test_always_frozen(self, teachers):
        t = teachers[0]
        with pytest.raises(ConfigError):
            TeacherSpec(0, 512, t.encode_image, t.encode_text, frozen=False)

    def test_empty_tokens(self, teachers, tokenizer):
        with pytest.raises(EmptyInputError):
            teachers[0].encode_text(np.zeros([tokenizer.max_len], np.int32))

    def test_signal_teacher_pairs_match(self, teachers, corpus):
        sub = corpus.take(range(32))
        image_features, text_features = teacher_features(teachers[0], sub)
        sims = normalize_rows(image_features).dot(normalize_rows(text_features).T)
        assert np.mean(np.argmax(sims, axis=1) == np.arange(32)) > 0.9

    def test_noise_teacher_pairs_do_not_match(self, teachers, corpus):
        sub = corpus.take(range(32))
        image_features, text_features = teacher_features(teachers[3], sub)
        sims = image_features.dot(text_features.T)
        assert np.mean(np.argmax(sims, axis=1) == np.arange(32)) < 0.3

    def test_worldless_teacher(self, corpus):
        teacher = make_synthetic_teacher(9, 768)
        e = teacher.encode_image(corpus.images[0])
        assert e.dim == 768 and e.norm == pytest.approx(1.0)
        assert teacher.encode_text(corpus.tokens[0]).dim == 768
