import numpy as np
import pytest
import torch

from roomnav.goalassess import (
    GaDataset,
    GoalAssessor,
    TrainingError,
    assess,
    collect_ga_dataset,
    combo_index,
    flip_error,
    label_violations,
    load_dataset,
    load_ga,
    predict_proba,
    save_dataset,
    save_ga,
    train_ga,
)
from roomnav.langspec import COLORS, SHAPES, TRAIN_OBJECTS, decode, parse_instruction
from roomnav.rlcore import ArchConfig, CheckpointError, RecurrentPolicy, policy_meta, save_checkpoint

SMALL = ArchConfig(convs=((4, 8, 8), (4, 4, 2)), feat_dim=16, embed_dim=8, hidden=16)


@pytest.fixture(scope="module")
def small_ds(mini_plans):
    return collect_ga_dataset(mini_plans, 400, seed=0, episode_len=16, near_spawn_prob=1.0)


def test_combo_index_is_bijective():
    idx = {combo_index(c, s) for c in COLORS for s in SHAPES}
    assert idx == set(range(12))


def test_dataset_shapes_and_determinism(small_ds, mini_plans):
    ds = small_ds
    assert len(ds) == 400
    assert ds.images.shape == (400, 64, 64, 3) and ds.images.dtype == np.uint8
    assert ds.tokens.shape[0] == 400
    again = collect_ga_dataset(mini_plans, 400, seed=0, episode_len=16, near_spawn_prob=1.0)
    assert np.array_equal(again.images, ds.images) and np.array_equal(again.labels, ds.labels)


def test_labels_follow_rule(small_ds):
    ds = small_ds
    assert label_violations(ds) == 0
    assert ds.labels.sum() > 0
    train_combos = {combo_index(c, s) for c, s in TRAIN_OBJECTS}
    for i in range(len(ds)):
        e = decode(ds.tokens[i])
        assert (e.base.color, e.base.shape) in TRAIN_OBJECTS
        bit = ds.qualifying[i] >> combo_index(e.base.color, e.base.shape) & 1
        assert bit == ds.labels[i]
        assert ds.qualifying[i] & ~sum(1 << c for c in train_combos) == 0
        assert parse_instruction(ds.texts[i]).base == e.base


def test_positive_fraction_on_qualifying_frames(small_ds):
    qual = small_ds.qualifying > 0
    assert qual.sum() > 50
    frac = small_ds.labels[qual].mean()
    assert 0.3 < frac < 0.7  # a fair coin on a few hundred frames


def test_dataset_roundtrip(tmp_path, small_ds):
    ds = small_ds.subset(np.arange(30))
    index = save_dataset(ds, tmp_path / "ga")
    back = load_dataset(index)
    assert np.array_equal(back.images, ds.images)
    assert np.array_equal(back.tokens, ds.tokens)
    assert np.array_equal(back.labels, ds.labels) and np.array_equal(back.qualifying, ds.qualifying)
    assert back.texts == ds.texts
    assert np.allclose(back.goal_distance, ds.goal_distance, atol=1e-4, equal_nan=True)


def test_dataset_bad_header(tmp_path):
    (tmp_path / "index.tsv").write_text("# something else\n")
    with pytest.raises(ValueError, match="unsupported"):
        load_dataset(str(tmp_path))


def test_single_class_rejected(small_ds):
    neg = small_ds.subset(np.flatnonzero(small_ds.labels == 0))
    with pytest.raises(TrainingError):
        train_ga(neg, epochs=1)


def test_train_and_checkpoint(tmp_path, small_ds):
    model, report = train_ga(small_ds, epochs=2, patience=1, arch=SMALL, seed=0,
                             metrics_path=str(tmp_path / "m.csv"))
    assert report["n_train"] + report["n_val"] == len(small_ds)
    assert 0.0 <= report["val_accuracy"] <= 1.0
    assert (tmp_path / "m.csv").exists()
    path = tmp_path / "ga.npz"
    save_ga(path, model, threshold=0.4)
    back = load_ga(path)
    p1 = predict_proba(model, small_ds.images[:8], small_ds.tokens[:8])
    p2 = predict_proba(back, small_ds.images[:8], small_ds.tokens[:8])
    assert np.array_equal(p1, p2)
    assert assess(back, small_ds.images[0], small_ds.tokens[0]) in (0, 1)


def test_load_ga_rejects_policy(tmp_path):
    pol = RecurrentPolicy(4, SMALL)
    save_checkpoint(tmp_path / "p.npz", pol, policy_meta(pol, "controller"))
    with pytest.raises(CheckpointError):
        load_ga(tmp_path / "p.npz")


def test_assess_threshold(small_ds):
    torch.manual_seed(0)
    model = GoalAssessor(SMALL)
    with torch.no_grad():
        model.head.bias.fill_(100.0)
    assert assess(model, small_ds.images[0], small_ds.tokens[0], threshold=0.99) == 1
    with torch.no_grad():
        model.head.bias.fill_(-100.0)
    assert assess(model, small_ds.images[0], small_ds.tokens[0], threshold=0.01) == 0


def test_flip_error_bounds(small_ds):
    model = GoalAssessor(SMALL)
    with torch.no_grad():
        model.head.bias.fill_(100.0)
    assert flip_error(model, small_ds) == 1.0
    with torch.no_grad():
        model.head.bias.fill_(-100.0)
    assert flip_error(model, small_ds) == 0.0


def test_empty_dataset(mini_plans):
    ds = collect_ga_dataset(mini_plans, 0, seed=0)
    assert isinstance(ds, GaDataset) and len(ds) == 0
