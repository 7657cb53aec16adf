from __future__ import annotations

import math

import numpy as np
import pytest

from corefmap import numcore as nc
from corefmap.corpus import Document
from corefmap.errors import ConfigurationError, ParseError, ValidationError
from corefmap.gem import PerturbConfig
from corefmap.model import MindMapModel, ModelConfig
from corefmap.relgraph import graph_mse
from corefmap.synthetic import generate_corpus
from corefmap.train import (
    AdamState,
    PseudoLabel,
    TrainConfig,
    adam_step,
    clip_global_norm,
    load_labels,
    make_examples,
    save_labels,
    synth_labels,
    total_loss,
    train,
    tree_to_label,
)

TINY = ModelConfig(embedding_dim=50, hidden_size=3, gcn_layers=1, gin_layers=2, proj_width=4)


def examples(n_docs=4, seed=3):
    corpus = generate_corpus(n_docs, seed=seed, min_sentences=2, max_sentences=4)
    graphs = {d.document.id: d.graph for d in corpus.docs}
    labels = {d.id: synth_labels(d, 0) for d in corpus.documents}
    return make_examples(corpus.documents, graphs, labels), corpus.table


class TestConfig:
    def test_defaults(self):
        c = TrainConfig()
        assert (c.learning_rate, c.batch_size, c.lam, c.eta, c.tau, c.patience) == (1e-4, 64, 0.001, 0.2, 0.5, 3)

    @pytest.mark.parametrize("kw", [{"learning_rate": 0}, {"batch_size": -1}, {"patience": 0}, {"eta": -1}])
    def test_invalid(self, kw):
        with pytest.raises(ConfigurationError):
            TrainConfig(**kw)


class TestAdam:
    def test_zero_gradient_is_fixed_point(self, rng):
        p = {"w": nc.parameter(rng.normal(size=3))}
        before = p["w"].data.copy()
        state = AdamState()
        adam_step(p, {"w": np.zeros(3)}, state, 0.1)
        np.testing.assert_array_equal(p["w"].data, before)
        assert state.step == 1

    def test_first_step_is_lr_times_sign(self):
        p = {"w": nc.parameter(np.zeros(4))}
        g = np.array([3.0, -0.5, 1e-2, -200.0])
        adam_step(p, {"w": g}, AdamState(), 1e-3)
        np.testing.assert_allclose(p["w"].data, -1e-3 * np.sign(g), rtol=1e-5)

    def test_matches_textbook_over_several_steps(self, rng):
        lr, b1, b2, eps = 0.01, 0.9, 0.999, 1e-8
        w0 = rng.normal(size=5)
        grads = [rng.normal(size=5) for _ in range(6)]
        p = {"w": nc.parameter(w0.copy())}
        state = AdamState()
        w, m, v = w0.copy(), np.zeros(5), np.zeros(5)
        for t, g in enumerate(grads, start=1):
            adam_step(p, {"w": g}, state, lr)
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g**2
            w = w - lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)
        np.testing.assert_allclose(p["w"].data, w, rtol=1e-13)

    def test_deterministic_ten_steps(self):
        def run():
            r = np.random.default_rng(5)
            p = {"w": nc.parameter(r.normal(size=7))}
            s = AdamState()
            for _ in range(10):
                adam_step(p, {"w": r.normal(size=7)}, s, 0.01)
            return p["w"].data.tobytes()

        assert run() == run()

    def test_clip_global_norm(self):
        grads = {"a": np.array([3.0, 0.0]), "b": np.array([4.0])}
        assert clip_global_norm(grads, 1.0) == 5.0
        total = math.sqrt(sum(float((g**2).sum()) for g in grads.values()))
        assert abs(total - 1.0) < 1e-15


class TestTotalLoss:
    def test_lambda_zero_is_mse(self, rng):
        G, Y = rng.uniform(size=(3, 3)), rng.uniform(size=(3, 3))
        assert total_loss(nc.Tensor(G), Y, 123.0, 0.0).item() == graph_mse(nc.Tensor(G), Y).item()

    def test_arithmetic(self):
        out = total_loss(nc.Tensor([[0.5]]), np.array([[1.0]]), 0.254, 0.001).item()
        assert abs(out - 0.250254) < 1e-15

    def test_gradient_is_sum_of_parts(self, rng):
        model = MindMapModel(ModelConfig(embedding_dim=4, hidden_size=2, gcn_layers=1, gin_layers=1, proj_width=3), seed=1)
        for p in model.named_parameters().values():
            p.data = p.data + rng.normal(0, 0.3, p.shape)
        from corefmap.coref import CorefGraph
        from corefmap.corpus import EmbeddingTable

        table = EmbeddingTable(4, {w: rng.normal(size=4) for w in "abcd"})
        docs = [Document("x", [["a", "b"], ["c"], ["d", "a"]]), Document("y", [["b"], ["c", "d"]])]
        graphs = [CorefGraph(3, frozenset({(0, 2)})), CorefGraph(2, frozenset())]
        Y = rng.uniform(size=(3, 3))
        lam = 0.37
        params = model.named_parameters()

        def grads_of(fn):
            model.zero_grad()
            nc.backward(fn())
            return {k: (p.grad.copy() if p.grad is not None else np.zeros(p.shape)) for k, p in params.items()}

        def lg():
            H = model.encode(docs, table, batched=False)
            return graph_mse(model.scores_from_h(H[0], graphs[0]), Y)

        def lc():
            H = model.encode(docs, table, batched=False)
            return model.contrastive_loss(H, graphs, PerturbConfig(0.2, 1), 0.5, 0)

        def both():
            H = model.encode(docs, table, batched=False)
            L_c = model.contrastive_loss(H, graphs, PerturbConfig(0.2, 1), 0.5, 0)
            return total_loss(model.scores_from_h(H[0], graphs[0]), Y, L_c, lam)

        g_g, g_c, g_t = grads_of(lg), grads_of(lc), grads_of(both)
        for k in params:
            np.testing.assert_allclose(g_t[k], g_g[k] + lam * g_c[k], rtol=1e-10, atol=1e-14)
        # and the combined gradient agrees with finite differences
        leaves = [params["sent_lstm.fw.W_ih"], params["gin.layer0.Wa"]]
        assert nc.check_gradients(both, leaves) < 1e-4


class TestSynthLabels:
    def test_single_sentence(self):
        assert synth_labels(Document("a", [["x"]])).y.tolist() == [[0.0]]

    def test_two_sentences(self):
        y = synth_labels(Document("a", [["x"], ["y"]])).y
        assert y[0, 1] == 0.9 and y[1, 0] == 0.1

    def test_five_sentences_tree_count(self):
        for seed in range(10):
            y = synth_labels(Document("five", [["w"]] * 5), seed).y
            assert (y == 0.9).sum() == 4
            assert np.all((y == 0.9).sum(axis=0)[1:] == 1)
            assert np.all(np.triu(y == 0.9, 1) == (y == 0.9))
            assert np.all(np.diag(y) == 0.0)

    def test_deterministic_per_id_and_seed(self):
        d = Document("abc", [["w"]] * 8)
        assert synth_labels(d, 2).y.tobytes() == synth_labels(d, 2).y.tobytes()
        other = [synth_labels(d, s).y.tobytes() for s in range(6)]
        assert len(set(other)) > 1

    def test_tree_to_label(self):
        y = tree_to_label([None, 0, 0, 1])
        assert y[0, 1] == y[0, 2] == y[1, 3] == 0.9 and y[2, 3] == 0.1


class TestLabelsIO:
    def test_round_trip(self, tmp_path):
        labs = [PseudoLabel("a", [[0.0, 0.9], [0.1, 0.0]])]
        p = tmp_path / "l.jsonl"
        save_labels(labs, p)
        assert load_labels(p)["a"].y.tolist() == [[0.0, 0.9], [0.1, 0.0]]

    def test_wrong_size(self, tmp_path):
        p = tmp_path / "l.jsonl"
        p.write_text('{"id":"a","n":2,"y":[0.1,0.2,0.3]}\n')
        with pytest.raises(ParseError):
            load_labels(p)

    def test_out_of_range(self):
        with pytest.raises(ValidationError):
            PseudoLabel("a", [[1.5]])


class TestTrainLoop:
    def test_missing_label_names_document(self):
        corpus = generate_corpus(2, seed=1)
        graphs = {d.document.id: d.graph for d in corpus.docs}
        with pytest.raises(ConfigurationError, match="doc001"):
            make_examples(corpus.documents, graphs, {"doc000": synth_labels(corpus.documents[0])})

    def test_zero_epochs_returns_initial(self):
        ex, table = examples()
        res = train(ex[:3], ex[3:], table, TrainConfig(max_epochs=0, seed=4), TINY)
        assert res.log == [] and res.best_epoch is None
        init = MindMapModel(TINY, seed=4).state_arrays()
        for k, v in init.items():
            assert res.checkpoint.params[k].tobytes() == v.tobytes()

    def test_same_seed_same_log(self):
        ex, table = examples()
        cfg = TrainConfig(learning_rate=1e-2, batch_size=2, max_epochs=3, seed=7)
        a = train(ex[:3], ex[3:], table, cfg, TINY).log
        b = train(ex[:3], ex[3:], table, cfg, TINY).log
        strip = lambda log: [{k: v for k, v in r.items() if k != "seconds"} for r in log]
        assert strip(a) == strip(b)

    def test_best_checkpoint_never_worse(self):
        ex, table = examples(6)
        cfg = TrainConfig(learning_rate=3e-2, batch_size=2, max_epochs=8, patience=2, seed=2)
        res = train(ex[:4], ex[4:], table, cfg, TINY)
        vals = [r["val_Lg"] for r in res.log]
        assert res.log[res.best_epoch - 1]["val_Lg"] == min(vals)
        from corefmap.train import evaluate_lg

        assert abs(evaluate_lg(res.model, ex[4:], table) - min(vals)) < 1e-15

    def test_training_loss_drops(self):
        ex, table = examples(4)
        cfg = TrainConfig(learning_rate=1e-2, batch_size=2, max_epochs=15, patience=15, seed=0)
        log = train(ex, ex, table, cfg, TINY).log
        assert log[-1]["train_Lg"] < log[0]["train_Lg"]

    def test_requires_validation(self):
        ex, table = examples(2)
        with pytest.raises(ConfigurationError):
            train(ex, [], table, TrainConfig(max_epochs=1), TINY)
