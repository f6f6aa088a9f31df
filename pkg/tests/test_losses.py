"""Loss trivia, brute-force oracle equivalence, invariants, gradients."""

import math

import numpy as np
import pytest

from lacvit import tensor as T
from lacvit.errors import ContractError, ShapeError
from lacvit.gradcheck import finite_difference_grad, rel_error
from lacvit.losses import (
    ContrastiveBatch,
    ProjectionHead,
    cross_entropy,
    npair_loss,
    ntxent_loss,
    supcon_loss,
)
from lacvit.rng import RngStream
from lacvit.tensor import Parameter, Tensor, backward

from conftest import random_views, unit_rows


# -- independent double-loop oracles ----------------------------------------


def supcon_oracle(z, labels, tau):
    m = len(z)
    total = 0.0
    for i in range(m):
        positives = [p for p in range(m) if p != i and labels[p] == labels[i]]
        denom = sum(math.exp(float(z[i] @ z[a]) / tau) for a in range(m) if a != i)
        inner = 0.0
        for p in positives:
            inner += math.log(math.exp(float(z[i] @ z[p]) / tau) / denom)
        total += -inner / len(positives)
    return total


def ntxent_oracle(z, sources, tau):
    m = len(z)
    total = 0.0
    for i in range(m):
        sib = next(j for j in range(m) if j != i and sources[j] == sources[i])
        denom = sum(math.exp(float(z[i] @ z[a]) / tau) for a in range(m) if a != i)
        total += -math.log(math.exp(float(z[i] @ z[sib]) / tau) / denom)
    return total


def npair_oracle(z, sources):
    order = []
    for src in sorted(set(sources.tolist())):
        rows = [j for j in range(len(z)) if sources[j] == src]
        order.append((rows[0], rows[1]))
    total = 0.0
    for i, (fi, gi) in enumerate(order):
        acc = 0.0
        for k, (_, gk) in enumerate(order):
            if k != i:
                acc += math.exp(float(z[fi] @ z[gk]) - float(z[fi] @ z[gi]))
        total += math.log(1.0 + acc)
    return total


def ce_oracle(logits, labels):
    total = 0.0
    for row, lab in zip(logits, labels):
        denom = sum(math.exp(float(v)) for v in row)
        total += -math.log(math.exp(float(row[lab])) / denom)
    return total / len(labels)


def make_batch(z, labels, sources):
    return ContrastiveBatch(Tensor(z), labels=labels, view_source=sources)


# -- supcon ------------------------------------------------------------------


class TestSupCon:
    def test_single_image_two_views_is_zero(self):
        z = unit_rows(RngStream(0, 0).normal(0, 1, (2, 8)))
        value, _ = supcon_loss(make_batch(z, [3, 3], [0, 0]), tau=0.1)
        assert abs(value.scalar) < 1e-12

    def test_identical_embeddings_same_class(self):
        z = np.tile(unit_rows(np.array([[1.0, 2.0, 2.0]])), (4, 1))
        value, _ = supcon_loss(make_batch(z, [1, 1, 1, 1], [0, 0, 1, 1]), tau=0.1)
        assert abs(value.scalar - 4 * math.log(3)) < 1e-9

    @pytest.mark.parametrize("seed", range(8))
    def test_matches_oracle(self, seed):
        z, labels, sources = random_views(seed, images=4, dim=6, classes=3)
        value, _ = supcon_loss(make_batch(z, labels, sources), tau=0.1)
        expected = supcon_oracle(z, labels, 0.1)
        assert abs(value.scalar - expected) <= 1e-10 * max(1.0, abs(expected))

    def test_per_anchor_sums_to_scalar_and_nonnegative(self):
        z, labels, sources = random_views(3, images=6, dim=8, classes=2)
        value, _ = supcon_loss(make_batch(z, labels, sources), tau=0.1)
        assert abs(value.scalar - value.per_anchor.sum()) < 1e-9
        assert (value.per_anchor >= -1e-12).all()

    def test_per_anchor_bound(self):
        for seed in range(5):
            z, labels, sources = random_views(seed, images=8, dim=16, classes=3)
            m = len(z)
            for tau in (0.05, 0.1, 0.5):
                value, _ = supcon_loss(make_batch(z, labels, sources), tau=tau)
                bound = 2.0 / tau + math.log(m - 1)
                assert value.per_anchor.max() <= bound + 1e-9

    def test_batch_order_permutation_invariance(self):
        z, labels, sources = random_views(7, images=5, dim=8, classes=2)
        value, _ = supcon_loss(make_batch(z, labels, sources), tau=0.1)
        perm = RngStream(1, 0).permutation(len(z))
        value_p, _ = supcon_loss(make_batch(z[perm], labels[perm], sources[perm]), tau=0.1)
        assert abs(value.scalar - value_p.scalar) < 1e-12

    def test_global_rotation_invariance(self):
        z, labels, sources = random_views(9, images=5, dim=8, classes=2)
        gram = RngStream(2, 0).normal(0, 1, (8, 8))
        q, _ = np.linalg.qr(gram)
        value, _ = supcon_loss(make_batch(z, labels, sources), tau=0.1)
        value_r, _ = supcon_loss(make_batch(z @ q, labels, sources), tau=0.1)
        assert abs(value.scalar - value_r.scalar) < 1e-9

    def test_rejects_bad_tau(self):
        z, labels, sources = random_views(0, images=2, dim=4, classes=2)
        with pytest.raises(ContractError):
            supcon_loss(make_batch(z, labels, sources), tau=0.0)

    def test_rejects_non_unit_rows(self):
        z, labels, sources = random_views(0, images=2, dim=4, classes=2)
        with pytest.raises(ContractError):
            supcon_loss(make_batch(2.0 * z, labels, sources), tau=0.1)

    def test_rejects_unpaired_views(self):
        z = unit_rows(RngStream(0, 0).normal(0, 1, (3, 4)))
        with pytest.raises(ContractError):
            make_batch(z, [0, 0, 1], [0, 0, 1])

    def test_gradient_matches_finite_differences(self):
        raw = Parameter(RngStream(21, 0).normal(0, 1, (8, 6)), "raw")
        labels = np.array([0, 0, 1, 1, 0, 0, 2, 2])
        sources = np.array([0, 0, 1, 1, 2, 2, 3, 3])

        def loss():
            z = T.l2_normalize_rows(raw)
            _, node = supcon_loss(make_batch_t(z, labels, sources), tau=0.1)
            return node

        def make_batch_t(z, labels, sources):
            return ContrastiveBatch(z, labels=labels, view_source=sources)

        backward(loss())
        numeric = finite_difference_grad(lambda: loss().item(), raw)
        assert rel_error(raw.grad, numeric) < 1e-4


# -- ntxent -------------------------------------------------------------------


class TestNtXent:
    def test_single_image_is_zero(self):
        z = unit_rows(RngStream(4, 0).normal(0, 1, (2, 5)))
        value, _ = ntxent_loss(make_batch(z, [0, 0], [0, 0]), tau=0.1)
        assert abs(value.scalar) < 1e-12

    @pytest.mark.parametrize("seed", range(6))
    def test_matches_oracle(self, seed):
        z, labels, sources = random_views(seed, images=5, dim=8, classes=4)
        value, _ = ntxent_loss(make_batch(z, labels, sources), tau=0.1)
        expected = ntxent_oracle(z, sources, 0.1)
        assert abs(value.scalar - expected) <= 1e-10 * max(1.0, abs(expected))

    @pytest.mark.parametrize("seed", range(10))
    def test_reduces_to_supcon_on_unique_labels(self, seed):
        rng = RngStream(seed, 5)
        images = 4 + seed % 3
        z = unit_rows(rng.normal(0, 1, (2 * images, 8)))
        labels = np.repeat(np.arange(images), 2)  # one class per image
        sources = np.repeat(np.arange(images), 2)
        v_sup, _ = supcon_loss(make_batch(z, labels, sources), tau=0.1)
        v_ntx, _ = ntxent_loss(make_batch(z, labels, sources), tau=0.1)
        assert abs(v_sup.scalar - v_ntx.scalar) <= 1e-10 * max(1.0, abs(v_ntx.scalar))

    def test_gradient_matches_finite_differences(self):
        raw = Parameter(RngStream(33, 0).normal(0, 1, (6, 5)), "raw")
        labels = np.array([0, 0, 1, 1, 2, 2])
        sources = np.array([0, 0, 1, 1, 2, 2])

        def loss():
            z = T.l2_normalize_rows(raw)
            _, node = ntxent_loss(
                ContrastiveBatch(z, labels=labels, view_source=sources), tau=0.1
            )
            return node

        backward(loss())
        numeric = finite_difference_grad(lambda: loss().item(), raw)
        assert rel_error(raw.grad, numeric) < 1e-4


# -- n-pair -------------------------------------------------------------------


class TestNPair:
    def test_orthogonal_pairs_give_ln2(self):
        z = np.eye(4)
        value, _ = npair_loss(make_batch(z, [0, 0, 1, 1], [0, 0, 1, 1]))
        assert np.allclose(value.per_anchor, math.log(2.0), atol=1e-12)

    def test_matched_anchor_dominates_to_zero(self):
        # anchor == its positive with a large scale: other terms vanish
        f = np.array([[30.0, 0.0], [0.0, 30.0]])
        z = np.stack([f[0], f[0], f[1], f[1]]).astype(float)
        value, _ = npair_loss(make_batch(z, [0, 0, 1, 1], [0, 0, 1, 1]))
        assert value.scalar < 1e-9

    @pytest.mark.parametrize("seed", range(6))
    def test_matches_oracle(self, seed):
        rng = RngStream(seed, 9)
        images = 4
        z = rng.normal(0, 1, (2 * images, 6))  # unnormalized on purpose
        sources = np.repeat(np.arange(images), 2)
        labels = np.repeat(np.arange(images), 2)
        value, _ = npair_loss(make_batch(z, labels, sources))
        expected = npair_oracle(z, sources)
        assert abs(value.scalar - expected) <= 1e-10 * max(1.0, abs(expected))

    def test_rejects_single_image(self):
        z = RngStream(0, 0).normal(0, 1, (2, 4))
        with pytest.raises(ContractError):
            npair_loss(make_batch(z, [0, 0], [0, 0]))

    def test_gradient_matches_finite_differences(self):
        raw = Parameter(RngStream(44, 0).normal(0, 1, (8, 5)), "raw")
        sources = np.repeat(np.arange(4), 2)
        labels = sources.copy()

        def loss():
            _, node = npair_loss(
                ContrastiveBatch(T.scale(raw, 1.0), labels=labels, view_source=sources)
            )
            return node

        backward(loss())
        numeric = finite_difference_grad(lambda: loss().item(), raw)
        assert rel_error(raw.grad, numeric) < 1e-4


# -- cross entropy -------------------------------------------------------------


class TestCrossEntropy:
    def test_uniform_logits(self):
        value, _ = cross_entropy(Tensor(np.zeros((5, 10))), np.arange(5))
        assert abs(value.scalar - math.log(10)) < 1e-12

    def test_confident_correct_goes_to_zero(self):
        logits = np.full((3, 4), -1000.0)
        labels = np.array([1, 2, 0])
        logits[np.arange(3), labels] = 1000.0
        value, _ = cross_entropy(Tensor(logits), labels)
        assert value.scalar < 1e-12

    @pytest.mark.parametrize("seed", range(6))
    def test_matches_oracle(self, seed):
        rng = RngStream(seed, 13)
        logits = rng.normal(0, 3, (7, 5))
        labels = np.array([rng.integer(5) for _ in range(7)])
        value, _ = cross_entropy(Tensor(logits), labels)
        assert abs(value.scalar - ce_oracle(logits, labels)) < 1e-12

    def test_rejects_label_out_of_range(self):
        with pytest.raises(ContractError):
            cross_entropy(Tensor(np.zeros((2, 3))), np.array([0, 3]))

    def test_rejects_bad_shapes(self):
        with pytest.raises(ShapeError):
            cross_entropy(Tensor(np.zeros(3)), np.array([0]))

    def test_gradient_matches_finite_differences(self):
        logits = Parameter(RngStream(55, 0).normal(0, 2, (6, 4)), "logits")
        labels = np.array([0, 1, 2, 3, 1, 2])

        def loss():
            _, node = cross_entropy(T.scale(logits, 1.0), labels)
            return node

        backward(loss())
        numeric = finite_difference_grad(lambda: loss().item(), logits)
        assert rel_error(logits.grad, numeric) < 1e-4


# -- projection head -----------------------------------------------------------


class TestProjectionHead:
    def test_hand_example(self):
        head = ProjectionHead.init(4, RngStream(0, 0), d_hidden=4, d_proj=4)
        head.params["projection.w1"].data[...] = np.eye(4)
        head.params["projection.w2"].data[...] = np.eye(4)
        head.params["projection.b1"].data[...] = 0.0
        head.params["projection.b2"].data[...] = 0.0
        z = head.apply(Tensor([[3.0, 4.0, 0.0, 0.0]]))
        assert np.allclose(z.data, [[0.6, 0.8, 0.0, 0.0]], atol=1e-12)

    def test_rows_unit_norm(self):
        head = ProjectionHead.init(16, RngStream(1, 0))
        h = RngStream(2, 0).normal(0, 1, (10, 16))
        z = head.apply(Tensor(h))
        assert z.shape == (10, 128)
        assert np.abs(np.linalg.norm(z.data, axis=1) - 1.0).max() < 1e-9

    def test_unnormalized_path(self):
        head = ProjectionHead.init(8, RngStream(3, 0), d_proj=8)
        h = RngStream(4, 0).normal(0, 1, (5, 8))
        y = head.apply(Tensor(h), normalize=False)
        assert not np.allclose(np.linalg.norm(y.data, axis=1), 1.0)

    def test_gradients_match_finite_differences(self):
        head = ProjectionHead.init(6, RngStream(5, 0), d_hidden=7, d_proj=5)
        x = Tensor(RngStream(6, 0).normal(0.5, 1, (4, 6)))

        def loss():
            z = head.apply(x)
            return T.sum_all(T.mul(z, T.exp(z)))

        backward(loss())
        for p in head.parameters():
            numeric = finite_difference_grad(lambda: loss().item(), p)
            assert rel_error(p.grad, numeric) < 1e-4
