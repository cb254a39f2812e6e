import numpy as np

from analysis.segmenter import ToySegmenter, evaluate_segmentation, summarize_segmentation, train_segmenter
from config.config import TrainConfig
from numerics.layers import seeded_init


def test_probabilities_sum_to_one(tiny_images):
    with seeded_init(0):
        segmenter = ToySegmenter(class_count=3, image_size=16)
    probabilities = segmenter.predict_proba(tiny_images, batch_size=3)
    assert probabilities.shape == (8, 3, 16, 16)
    assert np.allclose(probabilities.sum(axis=1), 1.0)
    assert segmenter.predict(tiny_images).dtype == np.uint8


def test_training_keeps_best_validation_dice(phantoms):
    train_images, train_masks = phantoms.split("site-a", "train")
    val_images, val_masks = phantoms.split("site-a", "val")
    cfg = TrainConfig(iterations=4, batch_size=4, learning_rate=1e-3, val_every=2)
    result = train_segmenter(train_images, train_masks, val_images, val_masks, 5, cfg, verbose=False)
    assert result.curve["step"].tolist() == [2, 4]
    assert result.best_step in (0, 2, 4)
    assert 0.0 <= result.best_val_dice <= 1.0
    assert not result.segmenter.training


def test_evaluation_table(phantoms):
    images, masks = phantoms.split("site-b", "test")
    with seeded_init(1):
        segmenter = ToySegmenter(class_count=5, image_size=16)
    table = evaluate_segmentation(segmenter, images, masks)
    assert len(table) == 4
    assert {"dice_mean", "hd95_mean", "missing_classes", "entropy"} <= set(table.columns)
    summary = summarize_segmentation(table)
    assert 0.0 <= summary["dice"] <= 100.0
    assert summary["flagged_images"] == int((table["missing_classes"] != "").sum())
