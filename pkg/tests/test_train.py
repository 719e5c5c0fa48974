import json
import math
import os
import tempfile
import unittest
from unittest import mock

import numpy as np

from mathstruct.errors import ConfigError, EmptyDataset, MissingLabel, NonFiniteError
from mathstruct.inputs.assembly import assemble, collate
from mathstruct.inputs.sampling import sample_mlm
from mathstruct.inputs.types import SEGMENT_CONTEXT, Ablation
from mathstruct.nn.checkpoint import load_checkpoint
from mathstruct.nn.config import ModelConfig
from mathstruct.nn.encoder import backward, forward
from mathstruct.nn.losses import compute_losses
from mathstruct.nn.params import ParameterSet, init_params
from mathstruct.observability.metrics_exporter import MetricsExporter
from mathstruct.train.checkpoint_manager import FINAL_NAME
from mathstruct.train.config import TrainConfig
from mathstruct.train.optimizer import Adam
from mathstruct.train.records import TrainRecord, read_train_log, smoothed
from mathstruct.train.trainer import (
    CLASSES_FILE, FINETUNE_LOG, METRICS_FILE, TRAIN_LOG, EpochSampler, finetune_classify,
    predict_classes, pretrain, read_classes, topic_classes,
)

from tests.fixtures import make_pair, rng, tiny_config, toy_pairs, vocab_for


class TestTrainConfig(unittest.TestCase):
    def test_defaults(self):
        cfg = TrainConfig()
        self.assertEqual(cfg.learning_rate, 2e-5)
        self.assertEqual(cfg.betas, (0.9, 0.999))
        self.assertEqual((cfg.mlm_rate, cfg.ccp_rate, cfg.msp_rate), (0.15, 0.5, 0.15))
        self.assertFalse(cfg.msp_mask_node_id)

    def test_rejects_bad_values(self):
        with self.assertRaises(ValueError):
            TrainConfig(mlm_rate=1.5)
        with self.assertRaises(ValueError):
            TrainConfig(beta2=1.0)
        with self.assertRaises(ValueError):
            TrainConfig(steps=0)
        with self.assertRaises(ValueError):
            TrainConfig(unknown_knob=1)

    def test_warmup(self):
        cfg = TrainConfig(learning_rate=1e-3, warmup_steps=4)
        self.assertAlmostEqual(cfg.lr_at(1), 2.5e-4)
        self.assertAlmostEqual(cfg.lr_at(4), 1e-3)
        self.assertAlmostEqual(cfg.lr_at(9), 1e-3)


class TestAdam(unittest.TestCase):
    def test_matches_hand_computation(self):
        params = ParameterSet({"w": np.array([1.0, -2.0])})
        adam = Adam(lr=0.1)
        gradients = [np.array([0.5, -1.0]), np.array([-0.25, 2.0]), np.array([1.0, 0.0])]
        w = np.array([1.0, -2.0])
        m = np.zeros(2)
        v = np.zeros(2)
        for t, g in enumerate(gradients, start=1):
            adam.step(params, ParameterSet({"w": g}))
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            w = w - 0.1 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
            np.testing.assert_allclose(params["w"], w, rtol=0, atol=1e-12)
        self.assertEqual(adam.t, 3)

    def test_first_step_moves_by_lr(self):
        params = ParameterSet({"w": np.array([0.0])})
        Adam(lr=0.01).step(params, ParameterSet({"w": np.array([3.0])}))
        self.assertAlmostEqual(params["w"][0], -0.01, places=9)


class TestRecords(unittest.TestCase):
    def test_smoothed(self):
        self.assertEqual(smoothed([1.0, 2.0, 3.0, 4.0], 2), [1.0, 1.5, 2.5, 3.5])
        self.assertEqual(smoothed([], 3), [])

    def test_validation(self):
        with self.assertRaises(ValueError):
            TrainRecord(step=1, loss_total=float("nan"))
        with self.assertRaises(ValueError):
            TrainRecord(step=1, loss_total=1.0, ccp_accuracy=1.5)


class TestEpochSampler(unittest.TestCase):
    def test_epochs_cover_every_index(self):
        sampler = EpochSampler(size=10, batch_size=4, seed=3)
        drawn = [i for _ in range(5) for i in sampler.next_batch()]
        self.assertEqual(sorted(drawn[:10]), list(range(10)))
        self.assertEqual(sorted(drawn[10:20]), list(range(10)))

    def test_seeded(self):
        a = EpochSampler(7, 3, seed=1)
        b = EpochSampler(7, 3, seed=1)
        self.assertEqual([a.next_batch() for _ in range(4)], [b.next_batch() for _ in range(4)])


class PretrainCase(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.out = self.tmp.name
        self.pairs = toy_pairs(32)
        self.vocab = vocab_for(self.pairs)
        self.mcfg = tiny_config(len(self.vocab))

    def tearDown(self):
        self.tmp.cleanup()

    def run_pretrain(self, out=None, **train):
        values = dict(seed=7, batch_size=4, steps=3, learning_rate=1e-3)
        values.update(train)
        return pretrain(self.pairs, self.vocab, self.mcfg, TrainConfig(**values), out or self.out)


class TestPretrain(PretrainCase):
    def test_single_step_writes_artifacts(self):
        records = self.run_pretrain(steps=1)
        self.assertEqual(len(records), 1)
        self.assertEqual([r.step for r in read_train_log(os.path.join(self.out, TRAIN_LOG))], [1])
        self.assertTrue(os.path.isfile(os.path.join(self.out, METRICS_FILE)))
        params, cfg = load_checkpoint(os.path.join(self.out, FINAL_NAME))
        self.assertEqual(cfg, self.mcfg)
        self.assertFalse(params.equals(init_params(self.mcfg, seed=7)))
        self.assertGreater(records[0].loss_mlm, 0.0)

    def test_total_is_sum_of_terms(self):
        for r in self.run_pretrain():
            self.assertAlmostEqual(r.loss_total, r.loss_mlm + r.loss_ccp + r.loss_msp, places=9)

    def test_formula_only_logs_zero_pair_losses(self):
        self.run_pretrain(ablation=Ablation.FORMULA_ONLY, steps=4)
        for r in read_train_log(os.path.join(self.out, TRAIN_LOG)):
            self.assertEqual(r.loss_ccp, 0.0)
            self.assertEqual(r.loss_msp, 0.0)
            self.assertIsNone(r.ccp_accuracy)
            self.assertGreater(r.loss_mlm, 0.0)

    def test_same_seed_same_run(self):
        other = os.path.join(self.out, "again")
        first = self.run_pretrain()
        second = self.run_pretrain(out=other)
        self.assertEqual(first, second)
        with open(os.path.join(self.out, FINAL_NAME), "rb") as a, open(os.path.join(other, FINAL_NAME), "rb") as b:
            self.assertEqual(a.read(), b.read())
        different = self.run_pretrain(out=os.path.join(self.out, "seed8"), seed=8)
        self.assertNotEqual(first, different)

    def test_no_context_never_builds_context(self):
        built = []

        def recording(*args, **kwargs):
            built.append(assemble(*args, **kwargs))
            return built[-1]

        with mock.patch("mathstruct.train.trainer.assemble", side_effect=recording) as spy:
            records = self.run_pretrain(ablation=Ablation.NO_CONTEXT, steps=2)
        self.assertEqual(spy.call_count, 2 * 4)
        for call in spy.call_args_list:
            self.assertEqual(call.args[3], Ablation.NO_CONTEXT)
        for x in built:
            self.assertNotIn(SEGMENT_CONTEXT, x.segments.tolist())
        for r in records:
            self.assertEqual(r.loss_ccp, 0.0)

    def test_checkpoints_and_log_cadence(self):
        self.run_pretrain(steps=5, checkpoint_every=2, log_every=2)
        names = sorted(os.listdir(self.out))
        self.assertIn("checkpoint-step000002.mfmr", names)
        self.assertIn("checkpoint-step000004.mfmr", names)
        self.assertIn(FINAL_NAME, names)
        steps = [r.step for r in read_train_log(os.path.join(self.out, TRAIN_LOG))]
        self.assertEqual(steps, [2, 4, 5])

    def test_metrics_count_steps(self):
        metrics = MetricsExporter()
        pretrain(self.pairs, self.vocab, self.mcfg, TrainConfig(steps=3, batch_size=2), self.out, metrics)
        self.assertEqual(metrics.snapshot()["mathstruct_train_steps_total{phase=pretrain}"], 3.0)

    def test_vocab_size_mismatch(self):
        with self.assertRaises(ConfigError):
            pretrain(self.pairs, self.vocab, tiny_config(len(self.vocab) + 1), TrainConfig(steps=1), self.out)

    def test_empty_dataset(self):
        with self.assertRaises(EmptyDataset):
            pretrain([], self.vocab, self.mcfg, TrainConfig(steps=1), self.out)
        too_long = [make_pair("a+b+c+d+e+f+g+h+i+j+k+l+m+n+o+p+q+r+s+t+u+v+w+x+y+z")]
        with self.assertRaises(EmptyDataset):
            pretrain(too_long, vocab_for(too_long), tiny_config(len(vocab_for(too_long))),
                     TrainConfig(steps=1), self.out)

    def test_non_finite_gradient_names_the_step(self):
        calls = []

        def failing_second(*args):
            calls.append(1)
            if len(calls) == 2:
                raise NonFiniteError("gradient of embed.token is not finite")
            return backward(*args)

        with mock.patch("mathstruct.train.trainer.backward", side_effect=failing_second):
            with self.assertRaises(NonFiniteError) as ctx:
                self.run_pretrain(steps=3)
        self.assertEqual(ctx.exception.step, 2)
        self.assertEqual(str(ctx.exception), "step 2: gradient of embed.token is not finite")

    def test_overfit_toy_corpus(self):
        desk = ModelConfig(vocab_size=len(self.vocab))
        tcfg = TrainConfig(seed=7, steps=2300, batch_size=8, learning_rate=1e-3)
        records = pretrain(self.pairs, self.vocab, desk, tcfg, self.out)
        curve = smoothed([r.loss_total for r in records], 20)
        self.assertLess(curve[299], curve[19])

        params, cfg = load_checkpoint(os.path.join(self.out, FINAL_NAME))
        correct = total = 0
        for draw in range(10):
            gen = rng(1000 + draw)
            inputs = [sample_mlm(assemble(p, self.vocab, cfg.max_len, Ablation.FULL), gen, len(self.vocab))
                      for p in self.pairs]
            mlm = compute_losses(forward(collate(inputs), params, cfg), params, ("mlm",)).results["mlm"]
            correct += mlm.correct
            total += mlm.total
        self.assertGreater(total, 0)
        self.assertGreaterEqual(correct / total, 0.95)


class TestFinetune(PretrainCase):
    CLASSES = ["algebra", "geometry", "roots"]

    def setUp(self):
        super().setUp()
        # 3 topics x 20 formulas, each topic marked by its own operator and context
        shapes = {"algebra": ("{u}+{v}", ["in", "[MATH]", "we", "add"]),
                  "geometry": (r"\frac{{{u}}}{{{v}}}", ["the", "[MATH]", "ratio"]),
                  "roots": (r"\sqrt{{{u}}}-{v}", ["take", "the", "root", "[MATH]"])}
        self.labelled = [
            make_pair(template.format(u=u, v=v), words, topic=topic)
            for topic, (template, words) in shapes.items()
            for u in "abcde" for v in "wxyz"
        ]
        self.vocab = vocab_for(self.pairs + self.labelled)
        self.mcfg = ModelConfig(vocab_size=len(self.vocab))
        self.run_pretrain(steps=2)
        self.checkpoint = os.path.join(self.out, FINAL_NAME)

    def test_topic_classes(self):
        self.assertEqual(len(self.labelled), 60)
        self.assertEqual(topic_classes(self.labelled, 3), self.CLASSES)
        with self.assertRaises(ConfigError):
            topic_classes(self.labelled, 2)
        with self.assertRaises(ConfigError):
            topic_classes(self.labelled, 1)
        with self.assertRaises(MissingLabel):
            topic_classes(self.labelled + [make_pair("x")], 3)

    def test_too_many_topics(self):
        extra = self.labelled + [make_pair("x", topic="analysis")]
        with self.assertRaises(ConfigError):
            finetune_classify(extra, self.checkpoint, 3, TrainConfig(steps=1), self.vocab,
                              os.path.join(self.out, "ft"))

    def test_missing_label(self):
        with self.assertRaises(MissingLabel):
            finetune_classify(self.labelled + [make_pair("x")], self.checkpoint, 3, TrainConfig(steps=1),
                              self.vocab, os.path.join(self.out, "ft"))

    def test_learns_separable_topics(self):
        out = os.path.join(self.out, "ft")
        tcfg = TrainConfig(seed=1, steps=200, batch_size=8, learning_rate=1e-3)
        final, records = finetune_classify(self.labelled, self.checkpoint, 3, tcfg, self.vocab, out)
        # zero-initialised head: uniform over three classes on the first step
        self.assertAlmostEqual(records[0].loss_cls, 8 * math.log(3), places=9)
        self.assertEqual(records[0].loss_mlm, 0.0)
        self.assertLess(records[-1].loss_cls, records[0].loss_cls)
        self.assertTrue(os.path.isfile(os.path.join(out, FINETUNE_LOG)))
        self.assertEqual(read_classes(os.path.join(out, CLASSES_FILE)), self.CLASSES)
        with open(os.path.join(out, CLASSES_FILE), encoding="utf-8") as fh:
            self.assertEqual(json.load(fh), self.CLASSES)

        params, cfg = load_checkpoint(str(final))
        self.assertEqual(cfg.num_classes, 3)
        predictions = predict_classes(self.labelled, params, cfg, self.vocab, self.CLASSES)
        self.assertEqual(len(predictions), 60)
        accuracy = sum(g == p for g, p in predictions) / len(predictions)
        self.assertGreaterEqual(accuracy, 0.95)

    def test_predict_needs_head(self):
        params, cfg = load_checkpoint(self.checkpoint)
        with self.assertRaises(ConfigError):
            predict_classes(self.labelled, params, cfg, self.vocab, self.CLASSES)


if __name__ == "__main__":
    unittest.main()
