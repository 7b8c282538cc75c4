import csv
import filecmp
import os
import shutil
import tempfile
import unittest
from unittest import mock

import numpy as np
from django.core.exceptions import ImproperlyConfigured
from django.test import SimpleTestCase

from .. import pipeline
from ..dataset import (DatasetSplit, LeakageError, ManifestEntry,
                       load_manifest, split_identity_disjoint)
from ..pipeline import (PHASES, TIMING_HEADER, Bundle, PipelineError,
                        RunConfig, benchmark_timing, cross_validate,
                        default_bench_configs, evaluate, load_bench_configs,
                        load_grid, train_pipeline, write_timing_table)
from ..storage import encode_model
from ..synthetic import generate_corpus, write_pgm
from .test_dataset import TempDirMixin, make_entries

SMALL = dict(detector='dense', dense_step=8, vocab_size=16, seed=3,
             kmeans_max_iter=30)


def small_config(**changes):
    return RunConfig(**dict(SMALL, **changes))


def model_bytes(bundle):
    return encode_model(bundle.model.kernel,
                        [(m.alpha, m.y, m.bias) for m in bundle.model.models])


class RunConfigTest(TempDirMixin, SimpleTestCase):

    def test_defaults_from_settings(self):
        config = RunConfig()
        self.assertEqual(config.mode, 'impbovw')
        self.assertEqual(config.kernel, 'intersection')
        self.assertEqual(config.neighbors, 5)
        self.assertEqual(config.threshold, 0.6)

    def test_pyramid_mode_needs_pyramid_kernel(self):
        with self.assertRaises(ImproperlyConfigured):
            RunConfig(mode='sp', kernel='intersection')
        with self.assertRaises(ImproperlyConfigured):
            RunConfig(mode='impbovw', kernel='spatial_pyramid')
        RunConfig(mode='sp', kernel='spatial_pyramid')

    def test_invalid_values(self):
        for changes in ({'mode': 'fisher'}, {'C': 0.0}, {'detector': 'surf'},
                        {'train_fraction': 1.0}, {'harris': {'k': 0.5}},
                        {'harris': {'colour': 1}}):
            with self.assertRaises(ImproperlyConfigured):
                RunConfig.from_dict(changes)

    def test_unknown_key(self):
        with self.assertRaisesMessage(ImproperlyConfigured, 'colour'):
            RunConfig.from_dict({'colour': 'red'})

    def test_from_toml(self):
        path = self.write('run.toml', 'name = "quick"\nmode = "sbovw"\n'
                                      'vocab_size = 64\nC = 1.0\n\n'
                                      '[harris]\nmax_points = 50\n')
        config = RunConfig.from_toml(path)
        self.assertEqual(config.label, 'quick')
        self.assertEqual(config.mode, 'sbovw')
        self.assertEqual(config.vocab_size, 64)
        self.assertEqual(config.harris, {'max_points': 50})

    def test_unparsable_toml(self):
        path = self.write('bad.toml', 'mode = \n')
        with self.assertRaises(ImproperlyConfigured):
            RunConfig.from_toml(path)
        with self.assertRaises(ImproperlyConfigured):
            RunConfig.from_toml(os.path.join(self.tmp, 'missing.toml'))

    def test_hash_ignores_name(self):
        self.assertEqual(RunConfig(name='a').config_hash(),
                         RunConfig(name='b').config_hash())
        self.assertNotEqual(RunConfig().config_hash(),
                            RunConfig(C=1.0).config_hash())

    def test_feature_key_ignores_encoding(self):
        self.assertEqual(small_config(mode='sbovw').feature_key(),
                         small_config(C=1.0).feature_key())
        self.assertNotEqual(small_config().feature_key(),
                            small_config(dense_step=4).feature_key())


class GridTest(TempDirMixin, SimpleTestCase):

    def test_default_grid_from_settings(self):
        base, points = load_grid()
        self.assertEqual(base.mode, 'impbovw')
        self.assertEqual(points, [{'C': 0.1}, {'C': 1.0}, {'C': 10.0},
                                  {'C': 100.0}])

    def test_grid_file(self):
        path = self.write('grid.toml', 'vocab_size = 32\n\n[grid]\n'
                                       'neighbors = [3, 5]\nC = [1.0, 10.0]\n')
        base, points = load_grid(path)
        self.assertEqual(base.vocab_size, 32)
        self.assertEqual(points, [{'C': 1.0, 'neighbors': 3},
                                  {'C': 1.0, 'neighbors': 5},
                                  {'C': 10.0, 'neighbors': 3},
                                  {'C': 10.0, 'neighbors': 5}])

    def test_grid_values_must_be_lists(self):
        path = self.write('grid.toml', '[grid]\nC = 1.0\n')
        with self.assertRaises(ImproperlyConfigured):
            load_grid(path)

    def test_invalid_grid_point(self):
        path = self.write('grid.toml', '[grid]\nC = [1.0, -1.0]\n')
        with self.assertRaises(ImproperlyConfigured):
            load_grid(path)

    def test_default_bench_configs(self):
        configs = load_bench_configs()
        self.assertEqual(len(configs), len(default_bench_configs()))
        self.assertEqual([c.label for c in configs],
                         ['kmeans+rbf', 'kmeans+intersection',
                          'kmeans+++rbf', 'kmeans+++intersection'])
        self.assertEqual(set(c.mode for c in configs), {'impbovw'})

    def test_bench_file_shares_top_level_keys(self):
        path = self.write('bench.toml', 'detector = "dense"\n\n'
                                        '[[config]]\nname = "plain"\n'
                                        'mode = "sbovw"\n\n'
                                        '[[config]]\nname = "pyramid"\n'
                                        'mode = "sp"\n'
                                        'kernel = "spatial_pyramid"\n')
        configs = load_bench_configs(path)
        self.assertEqual([c.name for c in configs], ['plain', 'pyramid'])
        self.assertEqual([c.detector for c in configs], ['dense', 'dense'])


class CrossValidationSelectionTest(SimpleTestCase):

    def test_ties_prefer_smaller_c_then_vocabulary(self):
        train = make_entries(identities=3)
        grid = [{'C': 10.0, 'vocab_size': 8}, {'C': 1.0, 'vocab_size': 16},
                {'C': 1.0, 'vocab_size': 8}]
        report = mock.Mock(accuracy=100.0)
        with mock.patch.object(pipeline, 'train_pipeline'), \
                mock.patch.object(pipeline, 'evaluate',
                                  return_value=report):
            result = cross_validate(RunConfig(), grid, train)
        self.assertEqual(result.best.overrides, {'C': 1.0, 'vocab_size': 8})
        self.assertEqual(len(result.points), 3)
        self.assertEqual(len(result.points[0].fold_scores), 3)

    def test_higher_mean_wins(self):
        train = make_entries(identities=2)

        def accuracy(bundle, entries, cache=None):
            return mock.Mock(accuracy=80.0 if bundle == 10.0 else 60.0)

        def train_stub(config, split, cache=None):
            return config.C

        with mock.patch.object(pipeline, 'train_pipeline', train_stub), \
                mock.patch.object(pipeline, 'evaluate', accuracy):
            result = cross_validate(RunConfig(), [{'C': 1.0}, {'C': 10.0}],
                                    train)
        self.assertEqual(result.best.config.C, 10.0)
        self.assertEqual(result.best.mean, 80.0)

    def test_failed_fold_is_left_out_of_mean(self):
        train = make_entries(identities=3)

        def train_stub(config, split, cache=None):
            if split.test[0].identity == 'subject01':
                raise PipelineError("no descriptors", stage='cluster')
            return None

        report = mock.Mock(accuracy=50.0)
        with mock.patch.object(pipeline, 'train_pipeline', train_stub), \
                mock.patch.object(pipeline, 'evaluate',
                                  return_value=report):
            result = cross_validate(RunConfig(), [{'C': 1.0}], train)
        point = result.points[0]
        self.assertIsNone(point.fold_scores['subject01'])
        self.assertEqual(point.mean, 50.0)

    def test_empty_grid(self):
        with self.assertRaises(ImproperlyConfigured):
            cross_validate(RunConfig(), [], make_entries(identities=2))


class CrossValidationRunTest(TempDirMixin, SimpleTestCase):
    """Stripes against a checkerboard with the same edge spacing."""

    def write_corpus(self):
        yy, xx = np.mgrid[0:64, 0:64]
        rng = np.random.default_rng(0)
        entries = []
        for identity, (low, high) in enumerate(((0.2, 0.8), (0.1, 0.7),
                                                (0.3, 0.9))):
            for n in range(2):
                dx, dy = rng.integers(0, 8, size=2)
                patterns = {
                    'stripes': (xx + dx) % 8 < 4,
                    'checker': ((xx + dx) // 4 + (yy + dy) // 4) % 2 == 0,
                }
                for label, mask in patterns.items():
                    path = os.path.join(self.tmp, '%s_%d_%d.pgm'
                                        % (label, identity, n))
                    write_pgm(np.where(mask, high, low), path)
                    entries.append(ManifestEntry(path, label,
                                                 'subject%d' % identity))
        return entries

    def test_ties_between_perfect_scores_pick_smaller_c(self):
        base = RunConfig(mode='sbovw', detector='dense', dense_step=5,
                         vocab_size=8, seed=0)
        result = cross_validate(base, [{'C': 10.0}, {'C': 1.0}],
                                self.write_corpus())
        for point in result.points:
            self.assertEqual(sorted(point.fold_scores.values()),
                             [100.0, 100.0, 100.0])
        self.assertEqual(result.best.config.C, 1.0)
        self.assertEqual(result.best.mean, 100.0)


class PipelineTest(SimpleTestCase):
    """Trains on a small synthetic corpus; features are extracted once."""

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.tmp = tempfile.mkdtemp()
        manifest = generate_corpus(os.path.join(cls.tmp, 'corpus'),
                                   classes=3, per_class=8, identities=4,
                                   seed=1, size=64)
        cls.manifest = load_manifest(manifest)
        cls.split = split_identity_disjoint(cls.manifest, 0.7, seed=0)
        cls.cache = {}
        cls.bundle = train_pipeline(small_config(), cls.split,
                                    cache=cls.cache)

    @classmethod
    def tearDownClass(cls):
        shutil.rmtree(cls.tmp, True)
        super().tearDownClass()

    def out_dir(self):
        path = tempfile.mkdtemp()
        self.addCleanup(shutil.rmtree, path, True)
        return path

    def assert_consistent(self, report):
        confusion = report.confusion
        self.assertEqual(confusion.sum(), report.total)
        self.assertEqual(np.trace(confusion), report.correct)
        self.assertAlmostEqual(report.accuracy,
                               100.0 * np.trace(confusion) / confusion.sum())
        for label, row in zip(report.labels, confusion):
            self.assertEqual(row.sum(), sum(1 for p in report.evaluated
                                            if p.label == label))

    def test_bundle_contents(self):
        bundle = self.bundle
        self.assertEqual(bundle.classes, ['blocks', 'checker', 'discs'])
        self.assertEqual(len(bundle.signatures), len(self.split.train))
        self.assertEqual(bundle.codebook.k, 16)
        self.assertEqual(bundle.idf.idf.shape, (bundle.grouping.n_groups,))
        self.assertEqual(len(bundle.gram), len(self.split.train))
        self.assertEqual(bundle.model.n_train, len(self.split.train))
        self.assertEqual(set(bundle.timings), set(PHASES))

    def test_evaluate_report(self):
        report = evaluate(self.bundle, self.split.test, cache=self.cache)
        self.assertEqual(report.total, len(self.split.test))
        self.assertFalse(report.failures)
        self.assert_consistent(report)
        for prediction in report.predictions:
            self.assertEqual(len(prediction.scores), 3)
            self.assertEqual(prediction.predicted,
                             report.classes[int(np.argmax(prediction.scores))])

    def test_same_config_same_model(self):
        again = train_pipeline(small_config(), self.split, cache=self.cache)
        self.assertEqual(model_bytes(again), model_bytes(self.bundle))
        first, second = self.out_dir(), self.out_dir()
        evaluate(self.bundle, self.split.test, cache=self.cache).write(first)
        evaluate(again, self.split.test, cache=self.cache).write(second)
        for name in ('predictions.csv', 'confusion.csv', 'report.txt'):
            self.assertTrue(filecmp.cmp(os.path.join(first, name),
                                        os.path.join(second, name),
                                        shallow=False), name)

    def test_saved_bundle_predicts_the_same(self):
        directory = self.out_dir()
        self.bundle.save(directory)
        for name in ('config.json', 'codebook.vvcb', 'grouping.csv',
                     'idf.csv', 'signatures.csv', 'gram.vvgm', 'model.vvsv',
                     'model.json', 'train.csv'):
            self.assertTrue(os.path.exists(os.path.join(directory, name)),
                            name)
        loaded = Bundle.load(directory)
        self.assertEqual(loaded.config, self.bundle.config)
        self.assertEqual(model_bytes(loaded), model_bytes(self.bundle))
        before = evaluate(self.bundle, self.split.test, cache=self.cache)
        after = evaluate(loaded, self.split.test, cache=self.cache)
        self.assertEqual([p.predicted for p in before.predictions],
                         [p.predicted for p in after.predictions])
        np.testing.assert_allclose([p.scores for p in before.predictions],
                                   [p.scores for p in after.predictions],
                                   atol=1e-9)

    def test_load_rejects_empty_directory(self):
        with self.assertRaises(ImproperlyConfigured):
            Bundle.load(self.out_dir())

    def test_refuses_shared_identities(self):
        train = list(self.split.train)
        with self.assertRaises(LeakageError):
            train_pipeline(small_config(), DatasetSplit(train, train[:1]),
                           cache=self.cache)
        with self.assertRaises(LeakageError):
            evaluate(self.bundle, train[:2], cache=self.cache)

    def test_unreadable_image_is_reported(self):
        test = list(self.split.test)
        missing = ManifestEntry('blocks/missing.pgm', 'blocks',
                                test[0].identity, test[0].base_dir)
        report = evaluate(self.bundle, test + [missing], cache=self.cache)
        self.assertEqual(len(report.failures), 1)
        self.assertEqual(report.total, len(test))
        self.assertIn('[detect]', report.failures[0].reason)
        self.assert_consistent(report)
        directory = self.out_dir()
        report.write(directory)
        with open(os.path.join(directory, 'predictions.csv'),
                  encoding='utf-8') as handle:
            rows = list(csv.DictReader(handle))
        self.assertEqual(rows[-1]['status'], 'failed')
        with open(os.path.join(directory, 'report.txt'),
                  encoding='utf-8') as handle:
            self.assertIn('FAILED blocks/missing.pgm', handle.read())

    def test_every_mode_trains_and_evaluates(self):
        for changes in ({'mode': 'sbovw'}, {'mode': 'sbovw_tfidf'},
                        {'mode': 'sbovw_rcm'}, {'rcm_flat': True},
                        {'kernel': 'rbf'},
                        {'mode': 'sp', 'kernel': 'spatial_pyramid',
                         'sp_channels': 8},
                        {'mode': 'sp', 'kernel': 'spatial_pyramid',
                         'sp_channels': 0, 'pyramid_level': 1}):
            config = small_config(**changes)
            bundle = train_pipeline(config, self.split, cache=self.cache)
            report = evaluate(bundle, self.split.test, cache=self.cache)
            self.assertEqual(report.total, len(self.split.test), changes)
            self.assert_consistent(report)
            signature = bundle.signatures[0]
            self.assertEqual(signature.mode, config.mode)
            if config.mode == 'sp':
                channels = config.sp_channels or config.vocab_size
                self.assertEqual(signature.dim,
                                 channels * sum(4 ** l for l in
                                                range(config.pyramid_level
                                                      + 1)))
                self.assertEqual(bundle.channel_codebook is None,
                                 config.sp_channels == 0)

    def test_no_descriptors(self):
        config = small_config(dense_step=8, dense_scale=100.0)
        with self.assertRaises(PipelineError) as context:
            train_pipeline(config, self.split)
        self.assertEqual(context.exception.stage, 'cluster')

    def test_benchmark_rows(self):
        configs = [small_config(name='plain', mode='sbovw'),
                   small_config(name='improved')]
        rows = benchmark_timing(configs, self.split)
        self.assertEqual([row.name for row in rows], ['plain', 'improved'])
        for row in rows:
            self.assertEqual(set(row.phases), set(PHASES))
            self.assertAlmostEqual(row.total, sum(row.phases.values()),
                                   places=6)
            self.assertGreaterEqual(row.accuracy, 0.0)
        path = os.path.join(self.out_dir(), 'timing.csv')
        write_timing_table(rows, path)
        with open(path, encoding='utf-8') as handle:
            table = list(csv.reader(handle))
        self.assertEqual(tuple(table[0]), TIMING_HEADER)
        self.assertEqual(len(table), 3)
        self.assertEqual(table[1][:2], ['plain', 'sbovw'])


@unittest.skipUnless(os.environ.get('VV_SLOW_TESTS') == '1',
                     "Set VV_SLOW_TESTS=1 to run the full synthetic benchmark")
class SyntheticAccuracyTest(SimpleTestCase):

    def test_improved_encoding_on_synthetic_corpus(self):
        tmp = tempfile.mkdtemp()
        self.addCleanup(shutil.rmtree, tmp, True)
        manifest = load_manifest(generate_corpus(tmp, classes=3,
                                                 per_class=60,
                                                 identities=20, seed=0))
        improved, plain = [], []
        for seed in range(5):
            split = split_identity_disjoint(manifest, 0.7, seed=seed)
            cache = {}
            for mode, scores in (('impbovw', improved), ('sbovw', plain)):
                config = RunConfig(mode=mode, detector='harris',
                                   vocab_size=256, seed=seed)
                bundle = train_pipeline(config, split, cache=cache)
                scores.append(evaluate(bundle, split.test,
                                       cache=cache).accuracy)
        self.assertGreaterEqual(np.median(improved), 90.0)
        self.assertGreaterEqual(np.median(improved), np.median(plain))


@unittest.skipUnless(os.environ.get('VV_SLOW_TESTS') == '1',
                     "Set VV_SLOW_TESTS=1 to run the full synthetic benchmark")
class SyntheticTimingTest(SimpleTestCase):

    def test_seeding_and_kernel_speedups(self):
        tmp = tempfile.mkdtemp()
        self.addCleanup(shutil.rmtree, tmp, True)
        manifest = load_manifest(generate_corpus(tmp, classes=3,
                                                 per_class=60,
                                                 identities=20, seed=0))
        split = split_identity_disjoint(manifest, 0.7, seed=0)
        base = dict(detector='harris', vocab_size=256, seed=0)
        configs = [RunConfig(name='kmeans', clustering='kmeans', **base),
                   RunConfig(name='kmeans++', clustering='kmeans++', **base),
                   RunConfig(name='rbf', kernel='rbf', **base),
                   RunConfig(name='intersection', kernel='intersection',
                             **base)]
        rows = dict((row.name, row)
                    for row in benchmark_timing(configs, split, repeats=5))
        self.assertLessEqual(rows['kmeans++'].total, rows['kmeans'].total)
        self.assertLessEqual(rows['intersection'].phases['svm'],
                             rows['rbf'].phases['svm'])
