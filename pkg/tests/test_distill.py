import math

import numpy as np
import pytest

from sdvt.distill import (BlockSelection, ScheduleConfig, build_fcvitprobs_schedule,
                          fcvit_loss, fcvitprobs_loss, init_student_from_teacher,
                          skin_distil_loss, strip_last_block, uniform_layer_weights)
from sdvt.errors import InvalidArgumentError
from sdvt.losses import LossSpec, cross_entropy, softmax
from sdvt.optim import AdamWHyper, OptimState, adamw_step
from sdvt.tensor import Tensor, no_grad
from sdvt.vit import ViTConfig, build, forward, param_count

TINY12 = ViTConfig(image_size=8, patch_size=4, hidden_dim=16, num_layers=12,
                   num_heads=2, mlp_dim=32, num_classes=8, seed=2)
TINY12_HEADS = ViTConfig(image_size=8, patch_size=4, hidden_dim=16, num_layers=12,
                         num_heads=2, mlp_dim=32, num_classes=8, seed=2,
                         per_layer_heads=True)


def states_equal(a, b):
    sa = dict(a.named_parameters())
    sb = dict(b.named_parameters())
    assert sa.keys() == sb.keys()
    for k in sa:
        np.testing.assert_array_equal(sa[k].data, sb[k].data, err_msg=k)


class TestBlockSelection:
    def test_validation(self):
        with pytest.raises(InvalidArgumentError):
            BlockSelection([]).validate(12)
        with pytest.raises(InvalidArgumentError):
            BlockSelection([0, 0, 2]).validate(12)
        with pytest.raises(InvalidArgumentError):
            BlockSelection([0, 12]).validate(12)

    def test_identity_selection_is_identity(self):
        teacher = build(TINY12)
        student = init_student_from_teacher(teacher, BlockSelection(range(12)))
        states_equal(teacher, student)

    def test_half_selection_copies_blocks(self):
        teacher = build(TINY12)
        student = init_student_from_teacher(teacher, BlockSelection([0, 2, 4, 7, 9, 11]))
        assert student.config.num_layers == 6
        np.testing.assert_array_equal(student.blocks[3].attn.q.weight.data,
                                      teacher.blocks[7].attn.q.weight.data)
        np.testing.assert_array_equal(student.blocks[3].mlp.fc1.bias.data,
                                      teacher.blocks[7].mlp.fc1.bias.data)
        np.testing.assert_array_equal(student.patch_proj.weight.data,
                                      teacher.patch_proj.weight.data)
        np.testing.assert_array_equal(student.heads[0].weight.data,
                                      teacher.heads[0].weight.data)

    def test_untrained_student_produces_usable_logits(self):
        teacher = build(TINY12)
        student = init_student_from_teacher(teacher, BlockSelection([0, 2, 4, 7, 9, 11]))
        x = np.random.default_rng(0).random((4, 3, 8, 8), dtype=np.float32)
        out = forward(student, x, "eval")
        assert np.all(np.isfinite(out.final_logits.data))
        assert out.final_logits.data.std(axis=0).max() > 0  # not constant across samples

    def test_per_layer_head_mapping(self):
        teacher = build(TINY12_HEADS)
        student = init_student_from_teacher(teacher, BlockSelection([0, 2, 4, 7, 9, 11]))
        assert len(student.heads) == 6
        np.testing.assert_array_equal(student.heads[3].weight.data,
                                      teacher.heads[7].weight.data)


class TestStrip:
    def test_strip_drops_exactly_one_block(self):
        model = build(TINY12)
        stripped = strip_last_block(model)
        assert stripped.config.num_layers == 11
        per_block = param_count(model) - param_count(stripped)
        again = strip_last_block(stripped)
        assert param_count(stripped) - param_count(again) == per_block

    def test_double_strip_of_three_layer(self):
        cfg = ViTConfig(image_size=8, patch_size=4, hidden_dim=16, num_layers=3,
                        num_heads=2, mlp_dim=32, seed=3)
        m = strip_last_block(strip_last_block(build(cfg)))
        assert m.config.num_layers == 1

    def test_single_layer_rejected(self):
        cfg = ViTConfig(image_size=8, patch_size=4, hidden_dim=16, num_layers=1,
                        num_heads=2, mlp_dim=32, seed=3)
        with pytest.raises(InvalidArgumentError):
            strip_last_block(build(cfg))

    def test_strip_equals_prefix_selection_bitwise(self):
        model = build(TINY12)
        a = strip_last_block(model)
        b = init_student_from_teacher(model, BlockSelection(range(11)))
        states_equal(a, b)

    def test_strip_shrinks_head_list(self):
        model = build(TINY12_HEADS)
        stripped = strip_last_block(model)
        assert len(stripped.heads) == 11
        np.testing.assert_array_equal(stripped.heads[-1].weight.data,
                                      model.heads[10].weight.data)


def _toy_outputs(rng, batch=4, classes=8, layers=3, requires_grad=True, logits=None):
    from sdvt.vit import ForwardOutput

    if logits is None:
        logits = [Tensor(rng.normal(size=(batch, classes)).astype(np.float32),
                         requires_grad=requires_grad) for _ in range(layers)]
    hidden = [Tensor(rng.normal(size=(batch, 5, 16)).astype(np.float32),
                     requires_grad=requires_grad) for _ in range(layers)]
    return ForwardOutput(hidden, logits, logits[-1], [])


class TestSkinDistilLoss:
    def test_identical_logits_hand_expansion(self):
        # CE(p, p) is the softmax entropy; 2-class case checked by hand
        logits = np.array([[math.log(3.0), 0.0]], dtype=np.float32)
        labels = np.array([0])
        rng = np.random.default_rng(0)
        s_out = _toy_outputs(rng, batch=1, classes=2, layers=1,
                             logits=[Tensor(logits, requires_grad=True)])
        t_out = _toy_outputs(rng, batch=1, classes=2, layers=1,
                             logits=[Tensor(logits)], requires_grad=False)
        total, comps = skin_distil_loss(s_out, t_out, labels, LossSpec(1.0, 0.5))
        p = np.exp(logits[0]) / np.exp(logits[0]).sum()
        entropy = -(p * np.log(p)).sum()
        task = -math.log(p[0])
        np.testing.assert_allclose(comps["task"], task, rtol=1e-5)
        np.testing.assert_allclose(comps["distil_ce"], entropy, rtol=1e-5)
        np.testing.assert_allclose(total.item(), task + 0.5 * entropy, rtol=1e-5)

    def test_all_zero_weights_gives_zero(self):
        rng = np.random.default_rng(1)
        s_out = _toy_outputs(rng)
        t_out = _toy_outputs(rng, requires_grad=False)
        total, comps = skin_distil_loss(s_out, t_out, np.array([0, 1, 2, 3]),
                                        LossSpec(0.0, 0.0, 0.0, 0.0))
        assert total.item() == 0.0
        assert all(v == 0.0 for v in comps.values())

    def test_total_is_exact_weighted_sum(self):
        rng = np.random.default_rng(2)
        s_out = _toy_outputs(rng)
        t_out = _toy_outputs(rng, requires_grad=False)
        spec = LossSpec(1.0, 0.5, 0.25, 0.125)
        total, comps = skin_distil_loss(s_out, t_out, np.array([0, 1, 2, 3]), spec)
        expected = np.float32(0.0)
        for w, key in ((spec.w_task, "task"), (spec.w_distil_ce, "distil_ce"),
                       (spec.w_cosine, "cosine"), (spec.w_mse, "mse")):
            expected = expected + np.float32(comps[key]) * np.float32(w)
        assert np.float32(total.item()) == expected

    def test_teacher_with_grad_rejected(self):
        rng = np.random.default_rng(3)
        s_out = _toy_outputs(rng)
        t_out = _toy_outputs(rng, requires_grad=True)
        with pytest.raises(InvalidArgumentError):
            skin_distil_loss(s_out, t_out, np.array([0, 1, 2, 3]), LossSpec())

    def test_teacher_params_untouched_by_training_step(self):
        teacher = build(TINY12)
        student = init_student_from_teacher(teacher, BlockSelection([0, 2, 4, 7, 9, 11]))
        before = {n: p.data.copy() for n, p in teacher.named_parameters()}
        x = np.random.default_rng(4).random((2, 3, 8, 8), dtype=np.float32)
        labels = np.array([0, 1])
        with no_grad():
            t_out = forward(teacher, x, "eval")
        s_out = forward(student, x, "train")
        total, _ = skin_distil_loss(s_out, t_out, labels, LossSpec())
        total.backward()
        params = dict(student.named_parameters())
        state = OptimState(params, AdamWHyper(learning_rate=0.01))
        adamw_step(params, state)
        for n, p in teacher.named_parameters():
            np.testing.assert_array_equal(p.data, before[n], err_msg=n)


class TestFcvitLoss:
    def test_top_one_hot_reduces_to_task_ce(self):
        rng = np.random.default_rng(5)
        logits = [Tensor(rng.normal(size=(4, 8)).astype(np.float32)) for _ in range(3)]
        labels = np.array([1, 2, 3, 4])
        weights = [0.0, 0.0, 1.0]
        a = fcvit_loss(logits, labels, weights).item()
        b = cross_entropy(logits[-1], labels).item()
        assert a == b

    def test_uniform_weights_identical_logits(self):
        rng = np.random.default_rng(6)
        shared = Tensor(rng.normal(size=(4, 8)).astype(np.float32))
        labels = np.array([0, 1, 2, 3])
        L = 5
        val = fcvit_loss([shared] * L, labels, [1.0 / L] * L).item()
        ce = cross_entropy(shared, labels).item()
        np.testing.assert_allclose(val, ce, rtol=1e-6)

    def test_weight_length_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            fcvit_loss([Tensor(np.zeros((1, 8), dtype=np.float32))], np.array([0]), [0.5, 0.5])

    def test_gradient_reaches_only_contributing_blocks(self):
        model = build(TINY12_HEADS)
        x = np.random.default_rng(7).random((2, 3, 8, 8), dtype=np.float32)
        labels = np.array([0, 1])
        out = forward(model, x, "train")
        weights = [0.0] * 12
        weights[3] = 1.0  # only head 3's term
        loss = fcvit_loss(out.per_layer_logits, labels, weights)
        loss.backward()
        for i in (0, 1, 2, 3):
            g = model.blocks[i].attn.q.weight.grad
            assert g is not None and np.abs(g).max() > 0, f"block {i} should get gradient"
        for i in (4, 11):
            g = model.blocks[i].attn.q.weight.grad
            assert g is None or np.abs(g).max() == 0, f"block {i} must not get gradient"


class TestFcvitprobsLoss:
    def test_top_only_is_plain_ce(self):
        rng = np.random.default_rng(8)
        logits = [Tensor(rng.normal(size=(4, 8)).astype(np.float32)) for _ in range(3)]
        labels = np.array([0, 1, 2, 3])
        val = fcvitprobs_loss(logits, labels, {2}).item()
        assert val == cross_entropy(logits[-1], labels).item()

    def test_identical_logits_kl_vanishes(self):
        rng = np.random.default_rng(9)
        shared = Tensor(rng.normal(size=(4, 8)).astype(np.float32))
        labels = np.array([0, 1, 2, 3])
        val = fcvitprobs_loss([shared] * 4, labels, {0, 1, 2, 3}).item()
        ce = cross_entropy(shared, labels).item()
        assert abs(val - ce) < 1e-6

    def test_matches_fcvit_top_one_hot_on_equal_logits(self):
        rng = np.random.default_rng(10)
        shared = Tensor(rng.normal(size=(4, 8)).astype(np.float32))
        labels = np.array([3, 2, 1, 0])
        a = fcvitprobs_loss([shared] * 3, labels, {0, 1, 2}).item()
        b = fcvit_loss([shared] * 3, labels, [0.0, 0.0, 1.0]).item()
        assert abs(a - b) < 1e-6

    def test_non_contiguous_active_rejected(self):
        rng = np.random.default_rng(11)
        logits = [Tensor(rng.normal(size=(2, 8)).astype(np.float32)) for _ in range(4)]
        with pytest.raises(InvalidArgumentError):
            fcvitprobs_loss(logits, np.array([0, 1]), {0, 3})
        with pytest.raises(InvalidArgumentError):
            fcvitprobs_loss(logits, np.array([0, 1]), {0, 1})  # top missing

    def test_kl_drives_lower_toward_upper(self):
        # two-layer toy: fixed upper distribution, trainable lower logits
        upper = Tensor(np.log(np.array([[0.75, 0.25]], dtype=np.float32)))
        lower = Tensor(np.zeros((1, 2), dtype=np.float32), requires_grad=True)
        params = {"lower": lower}
        state = OptimState(params, AdamWHyper(learning_rate=0.05))
        labels = np.array([0])
        for _ in range(500):
            loss = fcvitprobs_loss([lower, upper], labels, {0, 1})
            loss.backward()
            adamw_step(params, state)
        final = softmax(lower).data[0]
        np.testing.assert_allclose(final, [0.75, 0.25], atol=0.01)

    def test_gradient_flows_into_lower_head_only(self):
        rng = np.random.default_rng(12)
        lower = Tensor(rng.normal(size=(2, 8)).astype(np.float32), requires_grad=True)
        upper = Tensor(rng.normal(size=(2, 8)).astype(np.float32), requires_grad=True)
        top = Tensor(rng.normal(size=(2, 8)).astype(np.float32), requires_grad=True)
        # KL term pairs (lower, upper) and (upper, top); CE only on top
        loss = fcvitprobs_loss([lower, upper, top], np.array([0, 1]), {0, 1, 2})
        loss.backward()
        assert lower.grad is not None and np.abs(lower.grad).max() > 0
        # upper receives gradient as the chased distribution of pair 2 only
        # (its role as the detached target of pair 1 contributes nothing)
        assert top.grad is not None


class TestSchedule:
    def test_schedule_arithmetic(self):
        phases = build_fcvitprobs_schedule(ScheduleConfig(2, 1, 3), 12)
        assert len(phases) == 13
        assert phases[-1].end_epoch == 2 + 11 * 1 + 3
        assert phases[0].active_heads == (11,)
        assert phases[1].active_heads == (10, 11)
        assert phases[-1].active_heads == tuple(range(12))
        assert "backbone" in phases[-1].trainable_groups
        assert all("backbone" not in p.trainable_groups for p in phases[:-1])

    def test_degenerate_single_layer(self):
        phases = build_fcvitprobs_schedule(ScheduleConfig(2, 1, 3), 1)
        assert len(phases) == 2
        assert phases[0].epochs == 2 and phases[1].epochs == 3

    def test_monotone_nested_heads(self):
        phases = build_fcvitprobs_schedule(ScheduleConfig(1, 2, 1), 6)
        for a, b in zip(phases, phases[1:]):
            assert set(a.active_heads) <= set(b.active_heads)

    def test_partition_property(self):
        phases = build_fcvitprobs_schedule(ScheduleConfig(3, 2, 4), 5)
        epochs = []
        for p in phases:
            epochs.extend(range(p.start_epoch, p.end_epoch))
        assert epochs == list(range(phases[-1].end_epoch))

    def test_validation(self):
        with pytest.raises(InvalidArgumentError):
            ScheduleConfig(-1, 1, 1).validate()
        with pytest.raises(InvalidArgumentError):
            build_fcvitprobs_schedule(ScheduleConfig(), 0)


def test_uniform_layer_weights():
    w = uniform_layer_weights(4)
    assert w == [0.25] * 4
