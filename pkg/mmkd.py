"""Command line entry point: `python mmkd.py <subcommand> [--flags]`.

Subcommands run one pipeline stage each; `run-all` chains them into a run
directory laid out as

    <run_dir>/corpus/        manifest.jsonl, images/, prompts.json, world.json
    <run_dir>/checkpoints/   pretrain.h5, alignment.h5, distill.h5
    <run_dir>/shards/        teacher<k>_train.mkd, selection_train.csv
    <run_dir>/reports/       one EvalReport JSON per task, summary.csv
    <run_dir>/plots/         PNG figures with their CSV data
"""
from __future__ import absolute_import, division, print_function

import contextlib
import glob
import json
import os
import sys
import time
from collections import OrderedDict

import attr
import numpy as np
from absl import app, flags, logging
from sklearn.model_selection import StratifiedKFold

from config import get_config
from core import DEFAULT_KD_WEIGHTS, ConfigError, KDWeights, StageError
from data_input import (SyntheticWorld, load_corpus, load_world, prompt_set, synth_corpus,
                        write_corpus)
from evaluation import (EvalReport, MetricEstimate, PromptSet, estimate, evaluate_linear_probe,
                        evaluate_retrieval, evaluate_zero_shot, macro_auc, retrieval_report)
from feature_store import shard_path
from models.alignment import AlignmentModel, train_alignment
from models.encoders import build_student, build_teachers
from survival import (cross_validate_survival, evaluate_mil_classifier, read_cohort,
                      train_mil_classifier, world_cohort, world_diagnosis_bags, write_cohort)
from teacher_select import aligned_features, build_quadruplets, native_features, write_selection
from trainer import TrainConfig, distill, pretrain, teacher_agreement
from utils.checkpoint import restore_checkpoint, save_checkpoint
from utils.seeding import reset_rand_seed
from utils.viz import plot_km_groups, plot_loss_curves, plot_recall_at_k, write_csv

flags.DEFINE_string('config', None, 'User JSON config layered over the preset')
flags.DEFINE_string('preset', 'desk', 'Config preset: desk or paper')
flags.DEFINE_string('run_dir', None, 'Run directory (defaults to the config run_dir)')
flags.DEFINE_string('out', None, 'Output path of the subcommand')
flags.DEFINE_string('manifest', None, 'Corpus manifest.jsonl')
flags.DEFINE_string('shard_dir', None, 'Directory of quadruplet shards')
flags.DEFINE_string('checkpoint', None, 'Input checkpoint of the subcommand')
flags.DEFINE_string('cohort', None, 'Survival cohort.jsonl (built from the corpus world if unset)')
flags.DEFINE_integer('folds', None, 'Cross-validation folds for eval-survival')
flags.DEFINE_integer('seed', None, 'Seed override (MMKD_SEED still takes precedence)')
flags.DEFINE_integer('n_pairs', None, 'Corpus size override for synth-corpus')
flags.DEFINE_integer('n_classes', None, 'Class count override for synth-corpus')
flags.DEFINE_bool('check', False, 'run-all: exit nonzero when an acceptance check fails')
FLAGS = flags.FLAGS

ABLATIONS = OrderedDict([
    ('pretrain_only', None),
    ('no_clip', (0.0, 50.0, 1.0)),
    ('no_fd', (0.1, 0.0, 1.0)),
    ('no_icl', (0.1, 50.0, 0.0)),
    ('full_kd', DEFAULT_KD_WEIGHTS),
])
DISTILL_STEP_KEYS = ('train/loss', 'train/clip', 'train/fd', 'train/icl')


@attr.s
class RunManifest(object):
    run_id = attr.ib()
    config_hash = attr.ib()
    stages = attr.ib(factory=list)
    artifacts = attr.ib(factory=OrderedDict)
    timings = attr.ib(factory=OrderedDict)

    @classmethod
    def for_config(cls, config):
        config_hash = config.config_hash()
        return cls(run_id='%s-s%d' % (config_hash[:12], config.seed), config_hash=config_hash)

    def add_artifact(self, name, path, run_dir):
        self.artifacts[name] = os.path.relpath(path, run_dir)

    def save(self, path):
        with open(path, 'w') as f:
            json.dump(attr.asdict(self, dict_factory=OrderedDict), f, indent=2)
        return path


@contextlib.contextmanager
def stage(manifest, name):
    """Times a stage and re-raises any failure as a StageError tagged with its name."""
    start = time.time()
    logging.info('---- %s ----', name)
    try:
        yield
    except StageError:
        raise
    except Exception as e:
        logging.error('stage %s failed: %s', name, e)
        raise StageError(name, e) from e
    manifest.stages.append(name)
    manifest.timings[name] = round(time.time() - start, 3)


def run_paths(run_dir):
    return OrderedDict([
        ('corpus', os.path.join(run_dir, 'corpus')),
        ('manifest', os.path.join(run_dir, 'corpus', 'manifest.jsonl')),
        ('pretrain', os.path.join(run_dir, 'checkpoints', 'pretrain.h5')),
        ('alignment', os.path.join(run_dir, 'checkpoints', 'alignment.h5')),
        ('distill', os.path.join(run_dir, 'checkpoints', 'distill.h5')),
        ('shards', os.path.join(run_dir, 'shards')),
        ('reports', os.path.join(run_dir, 'reports')),
        ('plots', os.path.join(run_dir, 'plots')),
        ('cohort', os.path.join(run_dir, 'cohort')),
    ])


# Loading helpers

def load_run_corpus(config, manifest_path):
    """(world, tokenizer, corpus, prompts) from a corpus written by synth-corpus."""
    corpus_dir = os.path.dirname(os.path.abspath(manifest_path))
    world = load_world(corpus_dir)
    tokenizer = world.tokenizer(config.max_text_len)
    corpus = load_corpus(manifest_path, tokenizer, world.class_names)
    prompts = PromptSet.load(os.path.join(corpus_dir, 'prompts.json'))
    return world, tokenizer, corpus, prompts


def load_student(config, tokenizer, checkpoint=None):
    student = build_student(config, tokenizer)
    if checkpoint is not None:
        restore_checkpoint(checkpoint, student.checkpoint_groups())
    return student


def load_alignment(config, checkpoint=None):
    model = AlignmentModel(OrderedDict((t['teacher_id'], t['native_dim']) for t in config.teachers),
                           config.joint_dim, config.align_latent_dim, seed=config.seed)
    if checkpoint is not None:
        restore_checkpoint(checkpoint, {'alignment': model})
    return model


def heldout_agreement(config, student, corpus, alignment, world):
    """Student agreement with the first configured teacher, in the joint space."""
    teachers = build_teachers(config, world, student.tokenizer)[:1]
    tid = teachers[0].teacher_id
    image, text = aligned_features(tid, native_features(teachers, corpus)[tid], alignment,
                                   config.distill_target)
    return teacher_agreement(student, corpus.images, corpus.tokens, image, text)


# Stages

def cmd_synth_corpus(config, out_dir):
    world = SyntheticWorld.from_config(config)
    tokenizer = world.tokenizer(config.max_text_len)
    corpus = synth_corpus(world, config.n_pairs, config.seed, config.test_fraction, tokenizer,
                          config.n_modalities)
    return write_corpus(corpus, world, out_dir, prompt_set(world))


def cmd_pretrain(config, manifest_path, save_path):
    _, tokenizer, corpus, _ = load_run_corpus(config, manifest_path)
    student = load_student(config, tokenizer)
    result = pretrain(student, corpus.subset('train'), TrainConfig.from_config(config, 'pretrain'),
                      save_path=save_path, config=config)
    return student, result


def cmd_align_teachers(config, manifest_path, save_path):
    world, tokenizer, corpus, _ = load_run_corpus(config, manifest_path)
    teachers = build_teachers(config, world, tokenizer)
    features = native_features(teachers, corpus.subset('train'))
    model = load_alignment(config)
    log = train_alignment(model, features, config.align_epochs, config.align_lr,
                          config.align_batch_size, config.align_cross_weight, config.seed)
    save_checkpoint(save_path, {'alignment': model}, config)
    return model, log


def cmd_select_teachers(config, manifest_path, alignment_path, shard_dir, split='train'):
    world, tokenizer, corpus, _ = load_run_corpus(config, manifest_path)
    teachers = build_teachers(config, world, tokenizer)
    alignment = load_alignment(config, alignment_path)
    selection = build_quadruplets(teachers, alignment, corpus.subset(split), rng_seed=config.seed,
                                  k=config.n_distractors, tau=config.trust_tau,
                                  threshold=config.trust_threshold, workers=config.select_workers,
                                  target=config.distill_target)
    paths = write_selection(selection, shard_dir, split, config.joint_dim)
    selection.summary.plot(os.path.join(shard_dir, 'teacher_shares_%s.png' % split))
    return selection, paths


def _shard_paths(config, shard_dir, split='train'):
    paths = [shard_path(shard_dir, t['teacher_id'], split) for t in config.teachers]
    missing = [p for p in paths if not os.path.exists(p)]
    if missing:
        raise ConfigError('missing shards %s; run select-teachers first' % missing)
    return paths


def cmd_distill(config, manifest_path, shard_dir, init_checkpoint, save_path, kd_weights=None):
    _, tokenizer, corpus, _ = load_run_corpus(config, manifest_path)
    student = load_student(config, tokenizer, init_checkpoint)
    overrides = {}
    if kd_weights is not None:
        overrides['kd_weights'] = KDWeights(*kd_weights)
    train_config = TrainConfig.from_config(config, 'distill', **overrides)
    result = distill(student, _shard_paths(config, shard_dir), corpus.subset('train'),
                     train_config, save_path=save_path, config=config)
    return student, result


def cmd_eval_zeroshot(config, manifest_path, checkpoint, out):
    _, tokenizer, corpus, prompts = load_run_corpus(config, manifest_path)
    student = load_student(config, tokenizer, checkpoint)
    test = corpus.subset('test')
    report = evaluate_zero_shot(student, test.images, test.labels, prompts,
                                config.bootstrap_replicates, config.ci_level, config.seed)
    report.details['trained'] = checkpoint is not None
    report.save(out)
    return report


def cmd_eval_retrieval(config, manifest_path, checkpoint, out, plot_path=None):
    _, tokenizer, corpus, _ = load_run_corpus(config, manifest_path)
    student = load_student(config, tokenizer, checkpoint)
    test = corpus.subset('test')
    report = evaluate_retrieval(student, test.images, test.tokens, config.retrieval_ks,
                                config.bootstrap_replicates, config.ci_level, config.seed)
    report.save(out)
    if plot_path is not None:
        ks = [k for k in config.retrieval_ks if k <= len(test)]
        recalls = retrieval_report(student.encode_images(test.images),
                                   student.encode_tokens(test.tokens), ks)
        plot_recall_at_k(recalls, plot_path)
    return report


def cmd_eval_linear(config, manifest_path, checkpoint, out):
    _, tokenizer, corpus, _ = load_run_corpus(config, manifest_path)
    student = load_student(config, tokenizer, checkpoint)
    train, test = corpus.subset('train'), corpus.subset('test')
    report = evaluate_linear_probe(student.encode_images(train.images), train.labels,
                                   student.encode_images(test.images), test.labels,
                                   config.probe_fractions, config.bootstrap_replicates,
                                   config.ci_level, config.seed, lr=config.probe_lr,
                                   epochs=config.probe_epochs, batch_size=config.probe_batch_size,
                                   weight_decay=config.probe_weight_decay)
    report.save(out)
    return report


def _cohort(config, manifest_path, checkpoint, cohort_path, cohort_dir):
    world, tokenizer, _, _ = load_run_corpus(config, manifest_path)
    student = load_student(config, tokenizer, checkpoint)
    if cohort_path is not None:
        return read_cohort(cohort_path, lambda text: student.encode_texts([text])[0])
    records = world_cohort(world, student, config.survival_subjects, config.seed,
                           tuple(config.bag_size_range), config.survival_censor_rate,
                           config.survival_report_signal)
    if cohort_dir is not None:
        write_cohort(records, cohort_dir)
    return records


def cmd_eval_survival(config, manifest_path, checkpoint, out_dir, folds=None, cohort_path=None,
                      cohort_dir=None, plot_dir=None):
    """Image-only CV, plus image+report CV when the cohort carries reports."""
    records = _cohort(config, manifest_path, checkpoint, cohort_path, cohort_dir)
    options = dict(n_intervals=config.survival_intervals, folds=folds or config.survival_folds,
                   seed=config.seed, level=config.ci_level, epochs=config.survival_epochs,
                   lr=config.survival_lr, batch_size=config.survival_batch_size,
                   hidden_dim=config.mil_hidden_dim, attention_dim=config.mil_attention_dim,
                   gated=config.mil_gated, verbose=False)
    variants = [('survival', False)]
    if all(r.report is not None for r in records):
        variants.append(('survival_report', True))
    reports = OrderedDict()
    for name, use_report in variants:
        cv = cross_validate_survival(records, use_report=use_report, **options)
        reports[name] = cv.report
        cv.report.save(os.path.join(out_dir, name + '.json'))
        if plot_dir is not None:
            plot_km_groups(cv.km_by_group, os.path.join(plot_dir, 'km_%s.png' % name),
                           cv.logrank.p_value)
    return reports


def cmd_eval_diagnosis(config, manifest_path, checkpoint, out):
    world, tokenizer, _, _ = load_run_corpus(config, manifest_path)
    student = load_student(config, tokenizer, checkpoint)
    bags, labels = world_diagnosis_bags(world, student, config.diagnosis_bags, config.seed,
                                        tuple(config.bag_size_range))
    splitter = StratifiedKFold(n_splits=4, shuffle=True, random_state=config.seed)
    train_rows, test_rows = next(splitter.split(np.zeros(len(labels)), labels))
    model = train_mil_classifier([bags[i] for i in train_rows], labels[train_rows], 2,
                                 config.survival_epochs, config.survival_lr,
                                 config.survival_batch_size, config.mil_hidden_dim,
                                 config.mil_attention_dim, config.mil_gated, config.seed,
                                 verbose=False)
    probs, _ = evaluate_mil_classifier(model, [bags[i] for i in test_rows], labels[test_rows])
    report = EvalReport('diagnosis')
    report.add('auc', estimate(macro_auc, (probs, labels[test_rows]), config.bootstrap_replicates,
                               config.ci_level, config.seed))
    report.details['n_train'] = int(train_rows.shape[0])
    report.details['n_test'] = int(test_rows.shape[0])
    report.save(out)
    return report


def cmd_report(reports_dir, out=None):
    """Collects every EvalReport JSON into one CSV of (task, metric, point, ci_low, ci_high)."""
    rows = []
    for path in sorted(glob.glob(os.path.join(reports_dir, '*.json'))):
        try:
            report = EvalReport.load(path)
        except (KeyError, TypeError, ValueError):
            logging.info('skipping %s, not an eval report', os.path.basename(path))
            continue
        tag = os.path.splitext(os.path.basename(path))[0]
        for name, value in report.metrics.items():
            rows.append((tag, name, value.point, value.ci_low, value.ci_high))
    out = out or os.path.join(reports_dir, 'summary.csv')
    write_csv(out, ['report', 'metric', 'point', 'ci_low', 'ci_high'], rows)
    logging.info('summarized %d metrics into %s', len(rows), out)
    return out


# Acceptance checks

def kd_identity_error(step_logs, weights=DEFAULT_KD_WEIGHTS):
    """Largest relative gap between the logged loss and the weighted component sum."""
    a1, a2, a3 = weights
    worst = 0.0
    for logs in step_logs:
        expected = a1 * logs['train/clip'] + a2 * logs['train/fd'] + a3 * logs['train/icl']
        worst = max(worst, abs(logs['train/loss'] - expected) / max(1.0, abs(expected)))
    return worst


def acceptance_checks(config, zeroshot, baseline, distill_result, agreement_before,
                      agreement_after):
    auc = zeroshot.metrics['auc'].point
    base_auc = baseline.metrics['auc'].point
    kd_error = kd_identity_error(distill_result.step_logs, config.kd_weights)
    checks = OrderedDict([
        ('zeroshot_auc', OrderedDict([('value', auc),
                                      ('passed', auc >= config.check_min_zeroshot_auc)])),
        ('zeroshot_gain', OrderedDict([('value', auc - base_auc),
                                       ('passed', auc - base_auc >= config.check_min_auc_gain)])),
        ('kd_weights', OrderedDict([('value', list(config.kd_weights)),
                                    ('passed', tuple(config.kd_weights) == DEFAULT_KD_WEIGHTS)])),
        ('kd_identity', OrderedDict([('value', kd_error),
                                     ('passed', kd_error <= config.check_kd_tolerance)])),
        ('teacher_agreement', OrderedDict([('value', [agreement_before, agreement_after]),
                                           ('passed', agreement_after > agreement_before)])),
    ])
    for name, result in checks.items():
        if result['passed']:
            logging.info('check %s: ok (%r)', name, result['value'])
        else:
            logging.error('check %s: FAILED (%r)', name, result['value'])
    return checks


def cmd_run_all(config, run_dir, check=False):
    """synth -> pretrain -> align -> select -> distill -> every evaluation."""
    paths = run_paths(run_dir)
    for key in ('reports', 'plots', 'shards'):
        os.makedirs(paths[key], exist_ok=True)
    manifest = RunManifest.for_config(config)
    reports = paths['reports']

    with stage(manifest, 'synth-corpus'):
        cmd_synth_corpus(config, paths['corpus'])
        manifest.add_artifact('manifest', paths['manifest'], run_dir)
    with stage(manifest, 'pretrain'):
        reset_rand_seed(config.seed)
        _, pretrain_result = cmd_pretrain(config, paths['manifest'], paths['pretrain'])
        manifest.add_artifact('pretrain', paths['pretrain'], run_dir)
    with stage(manifest, 'align-teachers'):
        reset_rand_seed(config.seed)
        alignment, _ = cmd_align_teachers(config, paths['manifest'], paths['alignment'])
        manifest.add_artifact('alignment', paths['alignment'], run_dir)
    with stage(manifest, 'select-teachers'):
        cmd_select_teachers(config, paths['manifest'], paths['alignment'], paths['shards'])
        manifest.add_artifact('shards', paths['shards'], run_dir)
    with stage(manifest, 'distill'):
        reset_rand_seed(config.seed)
        world, tokenizer, corpus, _ = load_run_corpus(config, paths['manifest'])
        test = corpus.subset('test')
        pretrained = load_student(config, tokenizer, paths['pretrain'])
        before = heldout_agreement(config, pretrained, test, alignment, world)
        student, distill_result = cmd_distill(config, paths['manifest'], paths['shards'],
                                              paths['pretrain'], paths['distill'])
        after = heldout_agreement(config, student, test, alignment, world)
        manifest.add_artifact('distill', paths['distill'], run_dir)
        plot_loss_curves(OrderedDict([('pretrain', pretrain_result.loss_curve),
                                      ('distill', distill_result.loss_curve)]),
                         os.path.join(paths['plots'], 'loss_curves.png'))
        distill_result.history.write_csv(os.path.join(paths['plots'], 'distill_steps.csv'),
                                         DISTILL_STEP_KEYS)
    with stage(manifest, 'eval-zeroshot'):
        baseline = cmd_eval_zeroshot(config, paths['manifest'], None,
                                     os.path.join(reports, 'zeroshot_untrained.json'))
        zeroshot = cmd_eval_zeroshot(config, paths['manifest'], paths['distill'],
                                     os.path.join(reports, 'zeroshot.json'))
    with stage(manifest, 'eval-linear'):
        cmd_eval_linear(config, paths['manifest'], paths['distill'],
                        os.path.join(reports, 'linear_probe.json'))
    with stage(manifest, 'eval-retrieval'):
        cmd_eval_retrieval(config, paths['manifest'], paths['distill'],
                           os.path.join(reports, 'retrieval.json'),
                           os.path.join(paths['plots'], 'recall_at_k.png'))
    with stage(manifest, 'eval-survival'):
        reset_rand_seed(config.seed)
        cmd_eval_survival(config, paths['manifest'], paths['distill'], reports,
                          cohort_dir=paths['cohort'], plot_dir=paths['plots'])
    with stage(manifest, 'eval-diagnosis'):
        reset_rand_seed(config.seed)
        cmd_eval_diagnosis(config, paths['manifest'], paths['distill'],
                           os.path.join(reports, 'diagnosis.json'))
    with stage(manifest, 'report'):
        manifest.add_artifact('summary', cmd_report(reports), run_dir)

    checks = acceptance_checks(config, zeroshot, baseline, distill_result, before, after)
    with open(os.path.join(reports, 'checks.json'), 'w') as f:
        f.write(json.dumps(checks, sort_keys=True, indent=2) + '\n')
    manifest.save(os.path.join(run_dir, 'run_manifest.json'))
    passed = all(c['passed'] for c in checks.values())
    if check and not passed:
        logging.error('acceptance checks failed: %s',
                      ', '.join(k for k, c in checks.items() if not c['passed']))
    return passed or not check


def run_ablation(config, run_dir):
    """Zero-shot AUC of every loss ablation over the configured seeds.

    Needs the corpus and shards of a finished run in `run_dir`.
    """
    paths = run_paths(run_dir)
    shards = paths['shards']
    values = OrderedDict((name, []) for name in ABLATIONS)
    for seed in config.ablation_seeds:
        seeded = config.replace(seed=seed, run_dir=run_dir)
        ckpt_dir = os.path.join(run_dir, 'ablation', 'seed%d' % seed)
        reset_rand_seed(seed)
        pretrained = os.path.join(ckpt_dir, 'pretrain.h5')
        cmd_pretrain(seeded, paths['manifest'], pretrained)
        for name, weights in ABLATIONS.items():
            checkpoint = pretrained
            if weights is not None:
                reset_rand_seed(seed)
                checkpoint = os.path.join(ckpt_dir, name + '.h5')
                cmd_distill(seeded, paths['manifest'], shards, pretrained, checkpoint, weights)
            report = cmd_eval_zeroshot(seeded, paths['manifest'], checkpoint,
                                       os.path.join(ckpt_dir, 'zeroshot_%s.json' % name))
            values[name].append(report.metrics['auc'].point)
            logging.info('ablation seed %d %s: AUC %.4f', seed, name, values[name][-1])

    report = EvalReport('ablation')
    medians = OrderedDict((name, float(np.median(v))) for name, v in values.items())
    for name, v in values.items():
        report.add(name, MetricEstimate.from_folds(v, config.ci_level) if len(v) > 1 else
                   MetricEstimate(v[0], v[0], v[0], 1))
    report.details['median_auc'] = medians
    report.details['seeds'] = list(config.ablation_seeds)
    report.details['ordering_holds'] = bool(
        all(medians['full_kd'] >= medians[n] >= medians['pretrain_only']
            for n in ('no_clip', 'no_fd', 'no_icl')) and
        medians['full_kd'] - medians['pretrain_only'] >= 0.01)
    report.save(os.path.join(paths['reports'], 'ablation.json'))
    return report


# absl entry point

def _config_from_flags():
    overrides = {}
    for key in ('seed', 'n_pairs', 'n_classes', 'run_dir'):
        value = getattr(FLAGS, key)
        if value is not None:
            overrides[key] = value
    return get_config(FLAGS.preset, FLAGS.config, overrides)


def _main(command, config):
    paths = run_paths(config.run_dir)
    manifest_path = FLAGS.manifest or paths['manifest']
    shard_dir = FLAGS.shard_dir or paths['shards']
    reports = paths['reports']
    if command == 'synth-corpus':
        cmd_synth_corpus(config, FLAGS.out or paths['corpus'])
    elif command == 'pretrain':
        cmd_pretrain(config, manifest_path, FLAGS.out or paths['pretrain'])
    elif command == 'align-teachers':
        cmd_align_teachers(config, manifest_path, FLAGS.out or paths['alignment'])
    elif command == 'select-teachers':
        cmd_select_teachers(config, manifest_path, FLAGS.checkpoint or paths['alignment'],
                            FLAGS.out or shard_dir)
    elif command == 'distill':
        cmd_distill(config, manifest_path, shard_dir, FLAGS.checkpoint or paths['pretrain'],
                    FLAGS.out or paths['distill'])
    elif command == 'eval-zeroshot':
        cmd_eval_zeroshot(config, manifest_path, FLAGS.checkpoint,
                          FLAGS.out or os.path.join(reports, 'zeroshot.json'))
    elif command == 'eval-linear':
        cmd_eval_linear(config, manifest_path, FLAGS.checkpoint,
                        FLAGS.out or os.path.join(reports, 'linear_probe.json'))
    elif command == 'eval-retrieval':
        cmd_eval_retrieval(config, manifest_path, FLAGS.checkpoint,
                           FLAGS.out or os.path.join(reports, 'retrieval.json'))
    elif command == 'eval-survival':
        cmd_eval_survival(config, manifest_path, FLAGS.checkpoint, FLAGS.out or reports,
                          FLAGS.folds, FLAGS.cohort)
    elif command == 'eval-diagnosis':
        cmd_eval_diagnosis(config, manifest_path, FLAGS.checkpoint,
                           FLAGS.out or os.path.join(reports, 'diagnosis.json'))
    elif command == 'ablation':
        run_ablation(config, config.run_dir)
    elif command == 'report':
        cmd_report(reports, FLAGS.out)
    elif command == 'run-all':
        return cmd_run_all(config, config.run_dir, FLAGS.check)
    return True


COMMANDS = ('synth-corpus', 'pretrain', 'align-teachers', 'select-teachers', 'distill',
            'eval-zeroshot', 'eval-linear', 'eval-retrieval', 'eval-survival', 'eval-diagnosis',
            'ablation', 'run-all', 'report')


def normalize_argv(argv):
    """Accepts `--shard-dir` style spellings by rewriting flag names to absl's `--shard_dir`."""
    out = list(argv[:1])
    for arg in argv[1:]:
        if arg.startswith('--') and len(arg) > 2:
            name, sep, value = arg[2:].partition('=')
            arg = '--' + name.replace('-', '_') + sep + value
        out.append(arg)
    return out


def main(argv):
    argv = normalize_argv(argv)
    if len(argv) != 2 or argv[1] not in COMMANDS:
        raise app.UsageError('expected one subcommand out of: %s' % ', '.join(COMMANDS))
    config = _config_from_flags()
    reset_rand_seed(config.seed)
    try:
        ok = _main(argv[1], config)
    except StageError as e:
        logging.error('%s', e)
        return 1
    except ConfigError as e:
        logging.error('config error: %s', e)
        return 2
    return 0 if ok else 1


if __name__ == '__main__':
    app.run(main, argv=normalize_argv(sys.argv))
