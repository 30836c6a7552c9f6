from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ksmkd.engine import (
    NONEMPTY_GATES,
    PhaseSchedule,
    TeacherCache,
    TrainConfig,
    batch_plan,
    distill,
    metric_improvement,
    random_policy,
    run_fixed,
    run_random,
    train_ksm,
)
from ksmkd.errors import ConfigError
from ksmkd.ksm import KnowledgeSelectionModule, KsmConfig
from ksmkd.metrics_log import MetricsLog, read_events
from ksmkd.models import Metrics

from toyworld import world

TINY_KSM = dict(feature_size=2, hidden_size=8, episodes=1)


def same_weights(a, b):
    sa, sb = a.state_dict(), b.state_dict()
    return sa.keys() == sb.keys() and all(np.array_equal(sa[k], sb[k]) for k in sa)


class TestPhaseSchedule:
    @pytest.mark.parametrize("n,k,phases", [(100, 32, 4), (100, 100, 1), (129, 32, 5), (1, 5, 1), (64, 32, 2)])
    def test_counts(self, n, k, phases):
        assert PhaseSchedule(n, k).num_phases == phases

    def test_bounds(self):
        assert PhaseSchedule(100, 32).bounds == [(1, 32), (33, 64), (65, 96), (97, 100)]

    @given(st.integers(1, 500), st.integers(1, 200))
    def test_partition(self, n, k):
        s = PhaseSchedule(n, k)
        covered = [t for b, e in s.bounds for t in range(b, e + 1)]
        assert covered == list(range(1, n + 1))
        assert all(s.phase_of(t) == j for j, (b, e) in enumerate(s.bounds, 1) for t in (b, e))

    def test_invalid(self):
        with pytest.raises(ConfigError):
            PhaseSchedule(0, 4)
        with pytest.raises(ValueError):
            PhaseSchedule(10, 4).phase_of(11)


def test_metric_improvement_sign():
    before, after = Metrics(0.70, 0.5, 0.4), Metrics(0.65, 0.6, 0.5)
    assert metric_improvement(before, after, "loss") == pytest.approx(0.05)
    assert metric_improvement(before, after, "accuracy") == pytest.approx(0.1)
    assert metric_improvement(before, after, "f1") == pytest.approx(0.1)


def test_batch_plan_drops_last():
    plan = batch_plan(100, TrainConfig(batch_size=32, epochs=2), seed=0)
    assert len(plan) == 6 and all(len(idx) == 32 for _, idx in plan)
    assert [e for e, _ in plan] == [0, 0, 0, 1, 1, 1]


class TestRewardCounts:
    """One dev evaluation per phase; one per step in the immediate ablation."""

    @pytest.mark.parametrize("n,k,expected", [(100, 32, 4), (100, 100, 1), (129, 32, 5)])
    def test_phase_mode(self, n, k, expected):
        train, dev, _, teacher, student, _ = world()
        train = train.subset(n)
        tcfg = TrainConfig(epochs=1, batch_size=1)
        res = train_ksm(teacher, student, train, dev.subset(8), KsmConfig(phase_size=k, **TINY_KSM), tcfg)
        assert res.reward_evaluations == [expected]

    def test_immediate_mode(self):
        train, dev, _, teacher, student, _ = world()
        tcfg = TrainConfig(epochs=1, batch_size=1)
        cfg = KsmConfig(phase_size=32, reward_mode="immediate", **TINY_KSM)
        res = train_ksm(teacher, student, train.subset(100), dev.subset(8), cfg, tcfg)
        assert res.reward_evaluations == [100]


class TestTrainKsm:
    def test_episode_bookkeeping(self, tmp_path):
        train, dev, _, teacher, student, tcfg = world()
        cfg = KsmConfig(phase_size=4, feature_size=2, hidden_size=8, episodes=3, patience=3)
        with MetricsLog(tmp_path / "m.jsonl") as log:
            res = train_ksm(teacher, student, train, dev, cfg, tcfg, log=log)
        assert len(res.episode_metrics) == 3
        best = min(m["dev_loss"] for m in res.episode_metrics)
        assert res.episode_metrics[res.best_episode - 1]["dev_loss"] == best
        events = list(read_events(tmp_path / "m.jsonl"))
        steps = [e for e in events if e["event"] == "step"]
        assert len(steps) == 3 * len(batch_plan(len(train), tcfg, 0))
        assert all(0 < a < 1 for e in steps for a in e["action"])
        phases = [e for e in events if e["event"] == "phase"]
        assert len(phases) == 3 * PhaseSchedule(len(steps) // 3, 4).num_phases

    def test_first_phase_exploration_is_scale(self):
        train, dev, _, teacher, student, tcfg = world()
        res = train_ksm(teacher, student, train, dev, KsmConfig(phase_size=4, scale=0.2, **TINY_KSM), tcfg)
        records = res.rewards[0]
        assert all(r.exploration == 0.2 for r in records if r.phase == 1)
        assert all(0 <= r.exploration <= 0.2 + 1e-12 for r in records)
        assert all(r.phase_reward is not None and r.estimated is not None for r in records)

    def test_early_stopping(self):
        train, dev, _, teacher, student, tcfg = world()
        # an impossible improvement threshold makes every later episode stale
        cfg = KsmConfig(phase_size=8, feature_size=2, hidden_size=8, episodes=10, patience=2, min_delta=1e9)
        res = train_ksm(teacher, student, train, dev, cfg, tcfg)
        assert len(res.episode_metrics) == 3 and res.best_episode == 1

    def test_student_init_is_untouched(self):
        train, dev, _, teacher, student, tcfg = world()
        before = student.state_dict()
        train_ksm(teacher, student, train, dev, KsmConfig(phase_size=8, **TINY_KSM), tcfg)
        assert all(np.array_equal(before[k], v) for k, v in student.state_dict().items())

    def test_empty_dev(self):
        train, dev, _, teacher, student, tcfg = world()
        with pytest.raises(ConfigError):
            train_ksm(teacher, student, train, dev.subset(0), KsmConfig(**TINY_KSM), tcfg)

    def test_deterministic(self):
        train, dev, _, teacher, student, tcfg = world()
        a = train_ksm(teacher, student, train, dev, KsmConfig(phase_size=8, **TINY_KSM), tcfg, seed=4)
        b = train_ksm(teacher, student, train, dev, KsmConfig(phase_size=8, **TINY_KSM), tcfg, seed=4)
        assert same_weights(a.ksm, b.ksm)
        assert np.array_equal(a.action_traces[0], b.action_traces[0])


def saturated_ksm(student, tcfg, value_bias):
    ksm = KnowledgeSelectionModule(student.config.hidden_size, tcfg.batch_size, KsmConfig(**TINY_KSM))
    head = ksm.actor.layers[-1]
    head.weight.data[:] = 0.0
    head.bias.data[:] = value_bias
    return ksm


class TestDistill:
    def test_all_ones_policy_equals_fixed_baseline(self):
        train, dev, _, teacher, student, tcfg = world()
        ksm = saturated_ksm(student, tcfg, 800.0)  # sigmoid(800) == 1.0 exactly
        a, run_a = distill(teacher, student, ksm, train, "soft", tcfg, seed=0, dev=dev)
        b, run_b = run_fixed(teacher, student, train, [1, 1, 1, 1], tcfg, seed=0, dev=dev)
        assert same_weights(a, b)
        assert run_a.final_dev == run_b.final_dev

    def test_hard_mode_gates(self):
        train, dev, _, teacher, student, tcfg = world()
        ksm = saturated_ksm(student, tcfg, np.array([5.0, -5.0, 5.0, -5.0]))
        ksm.config = replace(ksm.config, action_mode="hard")
        a, _ = distill(teacher, student, ksm, train, "hard", tcfg, seed=0)
        b, _ = run_fixed(teacher, student, train, [1, 0, 1, 0], tcfg, seed=0)
        assert same_weights(a, b)

    def test_ksm_frozen(self):
        train, dev, _, teacher, student, tcfg = world()
        ksm = KnowledgeSelectionModule(student.config.hidden_size, tcfg.batch_size, KsmConfig(**TINY_KSM), seed=1)
        before = ksm.state_dict()
        distill(teacher, student, ksm, train, "soft", tcfg, dev=dev)
        assert all(np.array_equal(before[k], v) for k, v in ksm.state_dict().items())

    def test_mode_mismatch_warns(self):
        train, _, _, teacher, student, tcfg = world()
        ksm = KnowledgeSelectionModule(student.config.hidden_size, tcfg.batch_size, KsmConfig(**TINY_KSM))
        with pytest.warns(UserWarning):
            distill(teacher, student, ksm, train, "hard", tcfg)
        with pytest.raises(ConfigError):
            distill(teacher, student, ksm, train, "medium", tcfg)

    def test_fixed_is_deterministic(self):
        train, dev, test, teacher, student, tcfg = world()
        a, ra = run_fixed(teacher, student, train, [1, 0.5, 1, 0.5], tcfg, seed=2, dev=dev, test=test)
        b, rb = run_fixed(teacher, student, train, [1, 0.5, 1, 0.5], tcfg, seed=2, dev=dev, test=test)
        assert same_weights(a, b) and ra.to_dict() == rb.to_dict()
        assert ra.final_test is not None and ra.action_mean == [1, 0.5, 1, 0.5]

    def test_fixed_validation(self):
        train, _, _, teacher, student, tcfg = world()
        with pytest.raises(ConfigError):
            run_fixed(teacher, student, train, [0, 0, 0, 0], tcfg)
        with pytest.raises(ConfigError):
            run_fixed(teacher, student, train, [1, -1, 0, 0], tcfg)

    def test_teacher_cache_matches_forward(self):
        train, _, _, teacher, _, _ = world()
        cache = TeacherCache(teacher, train, batch_size=7)
        idx = np.array([3, 50, 11])
        out = teacher.forward(train.take(idx))
        assert np.allclose(cache.output(idx).logits.data, out.logits.data, rtol=1e-12, atol=1e-12)


class TestRandom:
    def test_trials_differ_and_summary(self):
        train, dev, _, teacher, student, tcfg = world()
        runs = run_random(teacher, student, train, dev, "all", "soft", 3, tcfg, seed=0)
        accs = [r.final_dev["accuracy"] for r in runs.runs]
        assert runs.gap == max(accs) - min(accs) and runs.mean_accuracy == pytest.approx(np.mean(accs))
        assert len({tuple(r.action_mean) for r in runs.runs}) == 3

    def test_reproducible(self):
        train, dev, _, teacher, student, tcfg = world()
        a = run_random(teacher, student, train, dev, "all", "hard", 2, tcfg, seed=1)
        b = run_random(teacher, student, train, dev, "all", "hard", 2, tcfg, seed=1)
        assert [r.to_dict() for r in a.runs] == [r.to_dict() for r in b.runs]

    def test_random_one_reverts_after_first_epoch(self, tmp_path):
        train, dev, _, teacher, student, tcfg = world()
        tcfg = replace(tcfg, epochs=2)
        with MetricsLog(tmp_path / "r.jsonl") as log:
            run_random(teacher, student, train, dev, "one", "soft", 1, tcfg, log=log)
        steps = [e for e in read_events(tmp_path / "r.jsonl") if e["event"] == "step"]
        first = [e for e in steps if e["epoch"] == 1]
        second = [e for e in steps if e["epoch"] == 2]
        assert first and second
        assert all(e["weights"] == [1.0, 1.0, 1.0, 1.0] for e in second)
        assert not all(e["weights"] == [1.0, 1.0, 1.0, 1.0] for e in first)

    def test_hard_random_gates_are_nonempty_subsets(self):
        policy = random_policy("all", "hard", np.random.default_rng(0))
        seen = {tuple(policy(t, 0, None, None)[0]) for t in range(400)}
        assert seen == {tuple(g) for g in NONEMPTY_GATES}

    def test_validation(self):
        train, dev, _, teacher, student, tcfg = world()
        with pytest.raises(ConfigError):
            run_random(teacher, student, train, dev, trials=0)
        with pytest.raises(ConfigError):
            random_policy("some", "soft", np.random.default_rng(0))
