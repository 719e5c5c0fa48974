import dataclasses
import math
import os
import struct
import tempfile
import unittest

import numpy as np
from scipy.special import expit, log_softmax

from mathstruct.corpus.vocab import CLS_ID, PAD_ID
from mathstruct.errors import ArtifactIOError, FormatError, NonFiniteError, ShapeError, VersionError
from mathstruct.inputs.assembly import assemble, collate
from mathstruct.inputs.mask import MaskMatrix
from mathstruct.inputs.sampling import sample_mlm, sample_msp
from mathstruct.inputs.types import Ablation
from mathstruct.nn.checkpoint import FORMAT_VERSION, dumps, load_checkpoint, loads, save_checkpoint
from mathstruct.nn.config import ModelConfig
from mathstruct.nn.encoder import backward, forward
from mathstruct.nn.losses import compute_losses, loss_ccp, loss_mlm, loss_msp, loss_total
from mathstruct.nn.params import add_classifier, init_params, parameter_shapes

from tests.fixtures import (
    FRACTION, GOLDEN_CHECKPOINT, GOLDEN_CONFIG, PYTHAGORAS, golden_outputs, golden_params, golden_vocab,
    make_pair, rng, tiny_config, vocab_for,
)

CONTEXTS = [["by", "the", "[MATH]", "theorem", "above"], ["the", "ratio", "[MATH]", "is", "fixed"]]


def labelled_batch(seed: int = 0, ablation: Ablation = Ablation.FULL, extra_vocab: int = 20):
    """Two inputs carrying MLM, CCP and MSP labels (as far as the ablation allows)."""
    pairs = [make_pair(PYTHAGORAS, CONTEXTS[0]), make_pair(FRACTION, CONTEXTS[1])]
    vocab = vocab_for(pairs, extra=extra_vocab)
    gen = rng(seed)
    inputs = []
    for k, pair in enumerate(pairs):
        x = assemble(pair, vocab, 48, ablation)
        x = sample_mlm(x, gen, len(vocab), mask_rate=0.3)
        if ablation.uses_opt:
            x = sample_msp(x, pair.opt, gen, node_rate=0.3)
        if ablation.uses_context:
            x = dataclasses.replace(x, ccp_label=k % 2)
        inputs.append(x)
    return collate(inputs), len(vocab)


def zero_heads(params):
    for name in ("mlm.w", "mlm.b", "ccp.w", "ccp.b", "msp.wa", "msp.ba", "msp.wb", "msp.bb"):
        params[name] = np.zeros_like(params[name])
    return params


class TestConfig(unittest.TestCase):
    def test_defaults(self):
        cfg = ModelConfig(vocab_size=100)
        self.assertEqual((cfg.layers, cfg.hidden, cfg.heads, cfg.ffn_mult, cfg.max_len), (2, 64, 4, 4, 128))
        self.assertEqual(cfg.head_dim, 16)
        self.assertEqual(cfg.ffn_dim, 256)

    def test_validation(self):
        with self.assertRaises(ValueError):
            ModelConfig(vocab_size=10, hidden=30, heads=4)
        with self.assertRaises(ValueError):
            ModelConfig(vocab_size=10, max_len=4)
        with self.assertRaises(ValueError):
            ModelConfig(vocab_size=10, dropout_rate=1.0)

    def test_parameter_shapes(self):
        cfg = tiny_config(30)
        params = init_params(cfg, seed=1)
        self.assertEqual(list(params), list(parameter_shapes(cfg)))
        self.assertEqual(params["embed.token"].shape, (30, 16))
        self.assertEqual(params["layer1.ffn.w1"].shape, (16, 32))
        self.assertTrue((params["layer0.ln1.gamma"] == 1).all())
        self.assertTrue((params["mlm.b"] == 0).all())
        self.assertNotIn("cls.w", params)
        self.assertTrue(init_params(cfg, seed=1).equals(params))
        self.assertFalse(init_params(cfg, seed=2).equals(params))


class TestForward(unittest.TestCase):
    def setUp(self):
        self.batch, self.vocab_size = labelled_batch()
        self.cfg = tiny_config(self.vocab_size)
        self.params = init_params(self.cfg, seed=3)

    def test_shapes(self):
        trace = forward(self.batch, self.params, self.cfg)
        self.assertEqual(len(trace.hidden_states), self.cfg.layers + 1)
        self.assertEqual(trace.final.shape, (2, self.batch.seq_len, 16))
        self.assertEqual(trace.attention[0].shape, (2, 4, self.batch.seq_len, self.batch.seq_len))

    def test_deterministic_without_dropout(self):
        a = forward(self.batch, self.params, self.cfg, train_mode=True, rng=rng(0)).final
        b = forward(self.batch, self.params, self.cfg).final
        self.assertTrue(np.array_equal(a, b))

    def test_dropout_changes_train_pass_only(self):
        cfg = tiny_config(self.vocab_size, dropout_rate=0.1)
        eval_a = forward(self.batch, self.params, cfg).final
        eval_b = forward(self.batch, self.params, cfg, rng=rng(0)).final
        self.assertTrue(np.array_equal(eval_a, eval_b))
        train = forward(self.batch, self.params, cfg, train_mode=True, rng=rng(0)).final
        self.assertFalse(np.array_equal(eval_a, train))

    def test_closed_pairs_get_zero_weight(self):
        trace = forward(self.batch, self.params, self.cfg)
        for weights in trace.attention:
            closed = ~self.batch.mask[:, None, :, :]
            self.assertTrue((weights[np.broadcast_to(closed, weights.shape)] == 0.0).all())
            for b, n in enumerate(self.batch.lengths):
                np.testing.assert_allclose(weights[b, :, :n, :].sum(axis=-1), 1.0, atol=1e-12)

    def test_cls_only_row_attends_to_itself(self):
        x = self.batch.inputs[0]
        cls_only = dataclasses.replace(
            x, ids=x.ids[:1].copy(), segments=x.segments[:1].copy(), positions=x.positions[:1].copy(),
            mask=MaskMatrix(x.mask.m[:1, :1].copy()), node_span=range(1, 1), tree=None,
            mlm_labels=[], msp_labels=[], ccp_label=None)
        batch = collate([cls_only, self.batch.inputs[1]])
        self.assertEqual(batch.ids[0, 0], CLS_ID)
        self.assertTrue((batch.ids[0, 1:] == PAD_ID).all())
        trace = forward(batch, self.params, self.cfg)
        one_hot = np.zeros(batch.seq_len)
        one_hot[0] = 1.0
        for weights in trace.attention:
            for head in range(self.cfg.heads):
                np.testing.assert_array_equal(weights[0, head, 0], one_hot)
        self.assertTrue(np.isfinite(trace.final[0, 0]).all())

    def test_padding_content_is_invisible(self):
        trace = forward(self.batch, self.params, self.cfg)
        short = int(np.argmin(self.batch.lengths))
        n = int(self.batch.lengths[short])
        self.assertLess(n, self.batch.seq_len)
        altered = dataclasses.replace(self.batch, ids=self.batch.ids.copy())
        altered.ids[short, n:] = np.arange(6, 6 + self.batch.seq_len - n) % self.vocab_size
        other = forward(altered, self.params, self.cfg)
        np.testing.assert_allclose(other.final[short, :n], trace.final[short, :n], rtol=0, atol=1e-12)

    def test_padding_does_not_change_real_positions(self):
        short = int(np.argmin(self.batch.lengths))
        alone = forward(self.batch.inputs[short], self.params, self.cfg).final[0]
        n = len(self.batch.inputs[short])
        np.testing.assert_allclose(forward(self.batch, self.params, self.cfg).final[short, :n], alone,
                                   rtol=0, atol=1e-10)

    def test_shape_errors(self):
        small = tiny_config(self.vocab_size, max_len=8)
        with self.assertRaises(ShapeError):
            forward(self.batch, init_params(small), small)
        narrow = tiny_config(5)
        with self.assertRaises(ShapeError):
            forward(self.batch, init_params(narrow), narrow)


class TestLosses(unittest.TestCase):
    def setUp(self):
        self.batch, self.vocab_size = labelled_batch(seed=4)
        self.cfg = tiny_config(self.vocab_size)
        self.params = init_params(self.cfg, seed=5)

    def test_zero_heads_give_uniform_losses(self):
        params = zero_heads(self.params.copy())
        trace = forward(self.batch, params, self.cfg)
        k = len(self.batch.mlm_targets)
        self.assertGreater(k, 0)
        self.assertAlmostEqual(loss_mlm(trace, params), k * math.log(self.vocab_size), places=9)
        self.assertAlmostEqual(loss_ccp(trace, params), 2 * math.log(2), places=9)
        pairs = len(self.batch.msp_targets)
        self.assertGreater(pairs, 0)
        self.assertAlmostEqual(loss_msp(trace, params), pairs * math.log(2), places=9)

    def test_losses_match_oracle(self):
        trace = forward(self.batch, self.params, self.cfg)
        h = trace.final
        p = self.params
        b = self.batch

        logits = h[b.mlm_index[:, 0], b.mlm_index[:, 1]] @ p["mlm.w"] + p["mlm.b"]
        mlm = -sum(log_softmax(row)[t] for row, t in zip(logits, b.mlm_targets))

        def bce(z, y):
            prob = expit(z)
            return -(y * np.log(prob) + (1 - y) * np.log(1 - prob))

        z = h[b.ccp_index, 0] @ p["ccp.w"] + p["ccp.b"][0]
        ccp = sum(bce(zi, yi) for zi, yi in zip(z, b.ccp_targets))

        msp = 0.0
        for (row, i, j), y in zip(b.msp_index, b.msp_targets):
            u = h[row, i] @ p["msp.wa"] + p["msp.ba"]
            v = h[row, j] @ p["msp.wb"] + p["msp.bb"]
            msp += bce(u @ v, y)

        losses = compute_losses(trace, p)
        self.assertAlmostEqual(losses["mlm"], mlm, delta=1e-8)
        self.assertAlmostEqual(losses["ccp"], ccp, delta=1e-8)
        self.assertAlmostEqual(losses["msp"], msp, delta=1e-8)
        self.assertAlmostEqual(losses.total, loss_total(mlm, ccp, msp), delta=1e-8)

    def test_no_opt_has_no_msp_term(self):
        batch, vocab_size = labelled_batch(seed=4, ablation=Ablation.NO_OPT)
        cfg = tiny_config(vocab_size)
        params = init_params(cfg, seed=5)
        losses = compute_losses(forward(batch, params, cfg), params)
        self.assertEqual(losses["msp"], 0.0)
        self.assertAlmostEqual(losses.total, losses["mlm"] + losses["ccp"], places=12)

    def test_unknown_task(self):
        trace = forward(self.batch, self.params, self.cfg)
        with self.assertRaises(ValueError):
            compute_losses(trace, self.params, tasks=("nsp",))


class TestBackward(unittest.TestCase):
    EPS = 1e-3

    def loss(self, batch, params, cfg):
        return compute_losses(forward(batch, params, cfg), params).total

    def central(self, batch, params, cfg, flat, idx, eps):
        original = flat[idx]
        flat[idx] = original + eps
        up = self.loss(batch, params, cfg)
        flat[idx] = original - eps
        down = self.loss(batch, params, cfg)
        flat[idx] = original
        return (up - down) / (2 * eps)

    def test_gradients_match_finite_differences(self):
        # A plain central difference at this step keeps an O(eps^2) truncation
        # term, about 9e-4 relative on embed.segment (shared by every
        # position). Combining eps and eps/2 cancels it, which leaves the
        # extrapolated estimate well inside 1e-4.
        for seed in range(3):
            batch, vocab_size = labelled_batch(seed=seed)
            cfg = tiny_config(vocab_size)
            params = init_params(cfg, seed=seed + 10)
            trace = forward(batch, params, cfg)
            grads = backward(trace, compute_losses(trace, params), params)
            pick = rng(seed + 100)
            for name in params.names():
                flat = params[name].reshape(-1)
                for idx in pick.choice(flat.size, size=min(4, flat.size), replace=False):
                    coarse = self.central(batch, params, cfg, flat, idx, self.EPS)
                    fine = self.central(batch, params, cfg, flat, idx, self.EPS / 2)
                    numeric = (4 * fine - coarse) / 3
                    analytic = grads[name].reshape(-1)[idx]
                    scale = max(abs(numeric), abs(analytic))
                    msg = f"{name}[{idx}] seed={seed}"
                    self.assertAlmostEqual(analytic, numeric, delta=1e-7 + 1e-4 * scale, msg=msg)
                    self.assertAlmostEqual(analytic, coarse, delta=1e-7 + 5e-3 * scale, msg=msg)

    def test_non_finite_gradient_is_raised(self):
        batch, vocab_size = labelled_batch()
        cfg = tiny_config(vocab_size)
        params = init_params(cfg, seed=1)
        trace = forward(batch, params, cfg)
        losses = compute_losses(trace, params)
        losses.results["mlm"].d_hidden[0, 1, 0] = np.nan
        with self.assertRaises(NonFiniteError) as ctx:
            backward(trace, losses, params)
        self.assertIn("gradient of", str(ctx.exception))
        self.assertIsNone(ctx.exception.step)

    def test_no_labels_no_gradient(self):
        batch, vocab_size = labelled_batch()
        bare = collate([dataclasses.replace(x, mlm_labels=[], msp_labels=[], ccp_label=None)
                        for x in batch.inputs])
        cfg = tiny_config(vocab_size)
        params = init_params(cfg, seed=1)
        trace = forward(bare, params, cfg)
        losses = compute_losses(trace, params)
        self.assertEqual(losses.total, 0.0)
        grads = backward(trace, losses, params)
        for name, g in grads.items():
            self.assertFalse(g.any(), name)

    def test_formula_only_leaves_pair_heads_untouched(self):
        batch, vocab_size = labelled_batch(ablation=Ablation.FORMULA_ONLY)
        cfg = tiny_config(vocab_size)
        params = init_params(cfg, seed=1)
        trace = forward(batch, params, cfg)
        losses = compute_losses(trace, params)
        self.assertEqual(losses["ccp"], 0.0)
        self.assertEqual(losses["msp"], 0.0)
        grads = backward(trace, losses, params)
        for name in ("ccp.w", "ccp.b", "msp.wa", "msp.ba", "msp.wb", "msp.bb"):
            self.assertFalse(grads[name].any(), name)
        self.assertTrue(grads["mlm.w"].any())


class TestCheckpoint(unittest.TestCase):
    def setUp(self):
        self.cfg = tiny_config(40)
        self.params = init_params(self.cfg, seed=9)
        self.tmp = tempfile.TemporaryDirectory()
        self.path = os.path.join(self.tmp.name, "model.mfmr")

    def tearDown(self):
        self.tmp.cleanup()

    def test_round_trip_is_bit_exact(self):
        save_checkpoint(self.path, self.params, self.cfg)
        params, cfg = load_checkpoint(self.path)
        self.assertEqual(cfg, self.cfg)
        self.assertTrue(params.equals(self.params))
        self.assertFalse(os.path.exists(self.path + ".tmp"))

    def test_classifier_head_survives(self):
        params, cfg = add_classifier(self.params, self.cfg, 3)
        self.assertEqual(cfg.num_classes, 3)
        self.assertEqual(params["cls.w"].shape, (16, 3))
        loaded, loaded_cfg = loads(dumps(params, cfg))
        self.assertTrue(loaded.equals(params))
        self.assertEqual(loaded_cfg.num_classes, 3)

    def test_truncated(self):
        data = dumps(self.params, self.cfg)
        for cut in (2, 10, len(data) // 2, len(data) - 1):
            with self.assertRaises(FormatError):
                loads(data[:cut])

    def test_trailing_bytes(self):
        with self.assertRaises(FormatError):
            loads(dumps(self.params, self.cfg) + b"\x00")

    def test_bad_magic(self):
        with self.assertRaises(FormatError):
            loads(b"NOPE" + dumps(self.params, self.cfg)[4:])

    def test_version_mismatch(self):
        data = dumps(self.params, self.cfg)
        with self.assertRaises(VersionError):
            loads(data[:4] + struct.pack("<I", FORMAT_VERSION + 1) + data[8:])

    def test_shape_mismatch(self):
        other_cfg = tiny_config(41)
        data = dumps(init_params(other_cfg), self.cfg)
        with self.assertRaises(FormatError):
            loads(data)

    def test_missing_file(self):
        with self.assertRaises(ArtifactIOError):
            load_checkpoint(os.path.join(self.tmp.name, "absent.mfmr"))


class TestGoldenCheckpoint(unittest.TestCase):
    def test_frozen_bytes(self):
        with open(GOLDEN_CHECKPOINT, "rb") as fh:
            data = fh.read()
        params, cfg = loads(data)
        self.assertEqual(cfg, GOLDEN_CONFIG)
        self.assertTrue(params.equals(golden_params()))
        self.assertEqual(dumps(params, cfg), data)

    def test_reloaded_logits(self):
        params, cfg = load_checkpoint(GOLDEN_CHECKPOINT)
        golden = golden_outputs()
        x = assemble(make_pair(FRACTION), golden_vocab(), cfg.max_len, Ablation.FORMULA_ONLY)
        self.assertEqual(x.ids.tolist(), golden["ids"])
        final = forward(x, params, cfg).final[0]
        logits = final @ params["mlm.w"] + params["mlm.b"]
        np.testing.assert_allclose(logits, np.array(golden["logits"]), rtol=0, atol=1e-12)


if __name__ == "__main__":
    unittest.main()
