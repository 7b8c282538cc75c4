import filecmp
import json
import os
import shutil
import tempfile
from io import StringIO

from django.core.management import CommandError, call_command
from django.test import SimpleTestCase

from ..management.commands._base import EXIT_CONFIG, EXIT_DATA

RUN_TOML = """\
detector = "dense"
dense_step = 8
vocab_size = 16
seed = 3
kmeans_max_iter = 30
"""


def run(name, **options):
    out = StringIO()
    call_command(name, stdout=out, stderr=StringIO(), verbosity=0, **options)
    return out.getvalue()


class CommandTest(SimpleTestCase):

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.tmp = tempfile.mkdtemp()
        cls.corpus = os.path.join(cls.tmp, 'corpus')
        run('synth', out=cls.corpus, classes=3, per_class=8, identities=4,
            seed=2)
        cls.manifest = os.path.join(cls.corpus, 'manifest.csv')
        cls.config = os.path.join(cls.tmp, 'run.toml')
        with open(cls.config, 'w', encoding='utf-8') as handle:
            handle.write(RUN_TOML)
        cls.bundle = os.path.join(cls.tmp, 'bundle')
        run('train', config=cls.config, manifest=cls.manifest,
            out=cls.bundle)

    @classmethod
    def tearDownClass(cls):
        shutil.rmtree(cls.tmp, True)
        super().tearDownClass()

    def out_dir(self):
        path = tempfile.mkdtemp()
        self.addCleanup(shutil.rmtree, path, True)
        return path

    def write_toml(self, text):
        path = os.path.join(self.out_dir(), 'config.toml')
        with open(path, 'w', encoding='utf-8') as handle:
            handle.write(text)
        return path

    def assertExitCode(self, code, name, **options):
        with self.assertRaises(CommandError) as context:
            run(name, **options)
        self.assertEqual(context.exception.returncode, code)

    def test_synth_writes_manifest(self):
        with open(self.manifest, encoding='utf-8') as handle:
            lines = handle.read().splitlines()
        self.assertEqual(lines[0], 'path,label,identity')
        self.assertEqual(len(lines), 1 + 3 * 8)
        first = lines[1].split(',')[0]
        self.assertTrue(os.path.exists(os.path.join(self.corpus, first)))

    def test_synth_rejects_bad_arguments(self):
        self.assertExitCode(EXIT_CONFIG, 'synth', out=self.out_dir(),
                            classes=9)

    def test_train_writes_bundle_and_split(self):
        for name in ('config.json', 'model.vvsv', 'model.json',
                     'train_manifest.csv', 'test_manifest.csv',
                     'timings.csv'):
            self.assertTrue(os.path.exists(os.path.join(self.bundle, name)),
                            name)
        with open(os.path.join(self.bundle, 'config.json'),
                  encoding='utf-8') as handle:
            config = json.load(handle)
        self.assertEqual(config['vocab_size'], 16)
        self.assertIn('config_hash', config)

    def test_train_is_reproducible(self):
        out = self.out_dir()
        run('train', config=self.config, manifest=self.manifest, out=out)
        self.assertTrue(filecmp.cmp(os.path.join(out, 'model.vvsv'),
                                    os.path.join(self.bundle, 'model.vvsv'),
                                    shallow=False))
        self.assertTrue(filecmp.cmp(os.path.join(out, 'test_manifest.csv'),
                                    os.path.join(self.bundle,
                                                 'test_manifest.csv'),
                                    shallow=False))

    def test_eval_writes_report(self):
        out = self.out_dir()
        text = run('eval', bundle=self.bundle, out=out, plot=True,
                   manifest=os.path.join(self.bundle, 'test_manifest.csv'))
        self.assertIn('Average recognition rate', text)
        for name in ('predictions.csv', 'confusion.csv', 'report.txt',
                     'timings.csv', 'accuracy.svg', 'confusion.svg'):
            self.assertTrue(os.path.exists(os.path.join(out, name)), name)

    def test_eval_twice_gives_identical_reports(self):
        test_manifest = os.path.join(self.bundle, 'test_manifest.csv')
        first, second = self.out_dir(), self.out_dir()
        run('eval', bundle=self.bundle, manifest=test_manifest, out=first)
        run('eval', bundle=self.bundle, manifest=test_manifest, out=second)
        for name in ('predictions.csv', 'confusion.csv', 'report.txt'):
            self.assertTrue(filecmp.cmp(os.path.join(first, name),
                                        os.path.join(second, name),
                                        shallow=False), name)

    def test_eval_on_training_identities_is_a_data_error(self):
        self.assertExitCode(
            EXIT_DATA, 'eval', bundle=self.bundle, out=self.out_dir(),
            manifest=os.path.join(self.bundle, 'train_manifest.csv'))

    def test_eval_without_bundle_is_a_config_error(self):
        self.assertExitCode(EXIT_CONFIG, 'eval', bundle=self.out_dir(),
                            manifest=self.manifest)

    def test_bad_config_exit_code(self):
        config = self.write_toml('mode = "fisher"\n')
        self.assertExitCode(EXIT_CONFIG, 'train', config=config,
                            manifest=self.manifest, out=self.out_dir())

    def test_missing_manifest_exit_code(self):
        self.assertExitCode(EXIT_DATA, 'train', config=self.config,
                            manifest=os.path.join(self.tmp, 'none.csv'),
                            out=self.out_dir())

    def test_cv_writes_scores_and_best_config(self):
        grid = self.write_toml(RUN_TOML + '\n[grid]\nC = [1.0, 10.0]\n')
        out = self.out_dir()
        text = run('cv', config_grid=grid, manifest=self.manifest, out=out)
        self.assertIn('Best: ', text)
        with open(os.path.join(out, 'best_config.json'),
                  encoding='utf-8') as handle:
            best = json.load(handle)
        self.assertIn(best['C'], (1.0, 10.0))
        self.assertEqual(best['vocab_size'], 16)
        with open(os.path.join(out, 'cv_folds.csv'),
                  encoding='utf-8') as handle:
            lines = handle.read().splitlines()
        self.assertEqual(lines[0], 'point,params,identity,accuracy')
        # Two grid points, one fold per training identity.
        self.assertEqual(len(lines) - 1, 2 * 3)

    def test_bench_writes_timing_table(self):
        configs = self.write_toml(RUN_TOML + '\n[[config]]\nname = "plain"\n'
                                  'mode = "sbovw"\n\n[[config]]\n'
                                  'name = "improved"\n')
        out = self.out_dir()
        text = run('bench', configs=configs, manifest=self.manifest, out=out,
                   plot=True)
        self.assertIn('improved', text)
        with open(os.path.join(out, 'timings.csv'),
                  encoding='utf-8') as handle:
            lines = handle.read().splitlines()
        self.assertEqual(len(lines), 3)
        self.assertTrue(lines[1].startswith('plain,sbovw,dense,'))
        self.assertTrue(os.path.exists(os.path.join(out, 'timings.svg')))
