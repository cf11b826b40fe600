import json

import pytest

from freezecl import strategies
from freezecl.dataio import DriftSpec, synth_sequence
from freezecl.errors import ConfigError
from freezecl.losses import LossWeights
from freezecl.metrics import forgetting_analysis
from freezecl.netmodel import ModelSpec, init_model, param_partition, snapshot
from freezecl.strategies import (ALL_STRATEGIES, Strategy, freeze_mask_for, load_run, run_sequence,
                                 stage_seed)
from freezecl.trainer import Hyper, cosine_lr, train_task

SPEC = ModelSpec.from_widths([6, 8, 5, 4, 2], 2)


def digest(model):
    return snapshot(model).digest()


def test_parse():
    assert Strategy.parse("ClEncoder") is Strategy.CL_ENCODER
    with pytest.raises(ConfigError, match="Bogus"):
        Strategy.parse("Bogus")


def test_strategy_properties():
    assert [s.sequential for s in ALL_STRATEGIES] == [False, True, True, True, True]
    assert [s.uses_teacher for s in ALL_STRATEGIES] == [False, False, True, True, True]


def test_masks():
    m = init_model(SPEC, 0)
    enc, cls = param_partition(m)
    assert freeze_mask_for(Strategy.CL_ENCODER, m) == set(cls)
    assert freeze_mask_for(Strategy.CL_CLASSIFIER, m) == set(enc)
    for s in (Strategy.CL_ALL, Strategy.FINE_TUNE, Strategy.TRAIN_ON_ALL):
        assert freeze_mask_for(s, m) == set()


def test_stage_seeds_differ():
    assert len({stage_seed(0, k) for k in range(4)}) == 4
    assert stage_seed(0, 1) != stage_seed(1, 1)


def test_empty_task_list(quick_hyper):
    with pytest.raises(ConfigError):
        run_sequence("FineTune", [], SPEC, quick_hyper, 0)


def test_bad_teacher_policy(small_tasks, quick_hyper):
    with pytest.raises(ConfigError):
        run_sequence("ClAll", small_tasks, SPEC, quick_hyper, 0, teacher="oracle")


def test_train_on_all_single_task_is_plain_training(small_tasks, quick_hyper):
    run = run_sequence("TrainOnAll", small_tasks[:1], SPEC, quick_hyper, 4)
    direct, _ = train_task(init_model(SPEC, 4), small_tasks[0], quick_hyper, seed=stage_seed(4, 0))
    assert len(run.checkpoints) == 1
    assert digest(run.checkpoints[0]) == digest(direct)


def test_train_on_all_has_one_stage(small_tasks, quick_hyper):
    run = run_sequence("TrainOnAll", small_tasks, SPEC, quick_hyper, 0)
    assert run.n_stages == 1 and run.complete


@pytest.mark.parametrize("strategy, frozen_part", [("ClEncoder", 1), ("ClClassifier", 0)])
def test_frozen_partition_never_moves(small_tasks, quick_hyper, strategy, frozen_part):
    run = run_sequence(strategy, small_tasks, SPEC, quick_hyper, 0)
    names = param_partition(run.checkpoints[0])[frozen_part]
    ref = run.checkpoints[0]
    for ckpt in run.checkpoints[1:]:
        for k in names:
            assert ckpt.params[k].data.tobytes() == ref.params[k].data.tobytes()
    moving = param_partition(ref)[1 - frozen_part]
    assert any((run.checkpoints[-1].params[k].data != ref.params[k].data).any() for k in moving)


def test_fine_tune_equals_cl_all_without_distillation(small_tasks):
    h = Hyper(epochs=3, patience=2, batch_size=16, lr0=1e-2)
    h0 = Hyper(epochs=3, patience=2, batch_size=16, lr0=1e-2, weights=LossWeights(1.0, 0.0, 0.0))
    ft = run_sequence("FineTune", small_tasks, SPEC, h, 2)
    cl = run_sequence("ClAll", small_tasks, SPEC, h0, 2)
    assert [digest(m) for m in ft.checkpoints] == [digest(m) for m in cl.checkpoints]


def test_each_stage_sees_only_its_task(monkeypatch, small_tasks, quick_hyper):
    seen = []
    real = strategies.train_task

    def spy(model, task, hyper, mask=(), old=None, seed=0, *rest):
        seen.append((task.task_id, old is not None, frozenset(mask)))
        return real(model, task, hyper, mask, old, seed, *rest)

    monkeypatch.setattr(strategies, "train_task", spy)
    run_sequence("ClEncoder", small_tasks, SPEC, quick_hyper, 0)
    assert [s[0] for s in seen] == ["task0", "task1", "task2"]
    assert [s[1] for s in seen] == [False, True, True]
    assert seen[0][2] == frozenset()
    seen.clear()
    run_sequence("TrainOnAll", small_tasks, SPEC, quick_hyper, 0)
    assert [s[0] for s in seen] == ["task0+task1+task2"]


@pytest.mark.parametrize("policy, expected_source", [("rolling", [0, 1]), ("anchor", [0, 0])])
def test_teacher_policy(monkeypatch, small_tasks, quick_hyper, policy, expected_source):
    teachers = []
    real = strategies.train_task

    def spy(model, task, hyper, mask=(), old=None, seed=0, *rest):
        teachers.append(old)
        return real(model, task, hyper, mask, old, seed, *rest)

    monkeypatch.setattr(strategies, "train_task", spy)
    run = run_sequence("ClAll", small_tasks, SPEC, quick_hyper, 0, teacher=policy)
    assert teachers[0] is None
    got = [t.digest() for t in teachers[1:]]
    assert got == [digest(run.checkpoints[i]) for i in expected_source]


def test_resume_after_interruption(tmp_path, small_tasks, quick_hyper):
    reference = run_sequence("ClEncoder", small_tasks, SPEC, quick_hyper, 1)

    class Stop(Exception):
        pass

    def boom(k, run):
        if k == 1:
            raise Stop

    with pytest.raises(Stop):
        run_sequence("ClEncoder", small_tasks, SPEC, quick_hyper, 1, run_dir=tmp_path, on_stage=boom)
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert [e["stage"] for e in man["completed"]] == [0, 1]

    resumed = run_sequence("ClEncoder", small_tasks, SPEC, quick_hyper, 1, run_dir=tmp_path)
    assert [digest(m) for m in resumed.checkpoints] == [digest(m) for m in reference.checkpoints]
    loaded = load_run(tmp_path)
    assert loaded.complete
    assert [digest(m) for m in loaded.checkpoints] == [digest(m) for m in reference.checkpoints]


def test_resume_with_different_config_refused(tmp_path, small_tasks, quick_hyper):
    run_sequence("FineTune", small_tasks[:1], SPEC, quick_hyper, 0, run_dir=tmp_path)
    with pytest.raises(ConfigError, match="different configuration"):
        run_sequence("FineTune", small_tasks[:1], SPEC, quick_hyper, 1, run_dir=tmp_path)


def test_fine_tune_forgets_first_task():
    drift = DriftSpec(dim=8, n_tasks=2, n_train=300, n_val=100, n_eval=200)
    spec = ModelSpec.from_widths([8, 16, 8, 4, 2], 2)
    h = Hyper(epochs=15, patience=4, batch_size=32, lr0=1e-2)
    dropped = 0
    for seed in range(5):
        tasks = synth_sequence(drift, seed)
        run = run_sequence("FineTune", tasks, spec, h, seed)
        ba = forgetting_analysis(run, tasks).bal_acc[:, 0]
        dropped += ba[1] < ba[0]
    assert dropped >= 4


def test_cosine_schedule_restarts_per_stage_by_default(small_tasks):
    h = Hyper(epochs=4, patience=10, batch_size=16, lr0=1e-2)
    run = run_sequence("FineTune", small_tasks, SPEC, h, 0)
    assert [hist.records[0].lr for hist in run.histories] == [1e-2] * 3


def test_cosine_schedule_can_span_the_sequence(small_tasks):
    h = Hyper(epochs=4, patience=10, batch_size=16, lr0=1e-2, cosine_restart=False)
    run = run_sequence("FineTune", small_tasks, SPEC, h, 0)
    lrs = [r.lr for hist in run.histories for r in hist.records]
    assert lrs == [cosine_lr(e, 12, 1e-2) for e in range(12)]
