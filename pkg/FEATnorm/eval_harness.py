#!/usr/bin/env python


__version__ = "0.2.0"

__revision__ = "20261017"


import logging
import time

import numpy as np

from FEATnorm.adv_trainer import (
    BASELINE,
    CyclingBatches,
    TrainConfig,
    build_assembly,
    predict,
    train,
)
from FEATnorm.data_synth import (
    SPEAKER_DEPENDENT,
    SPEAKER_INDEPENDENT,
    FoldSplit,
    split_speaker_dependent,
    split_speaker_independent,
    subsample_per_class,
)
from FEATnorm.metrics import Metric, auc, weighted_accuracy
from FEATnorm.nn_core import DESCENT, apply_update, backward, forward, init_mlp, softmax_cross_entropy
from FEATnorm.utils import ValidationError, rng, starmap


MODES = (SPEAKER_INDEPENDENT, SPEAKER_DEPENDENT)

DEFAULT_SIZES = (4, 8, 16, 32, 64, 128)


class ModelSpec:

    """
    Architecture of the models built for every fold, seed and curve point.

    Kwargs:
        upstream_dims : :obj:`tuple` (optional, default: (64, 32))

        upstream_activation : :obj:`str` (optional, default: ``relu``)

        projector_activation : :obj:`str` (optional, default: ``tanh``)
    """

    def __init__(self, upstream_dims=(64, 32), upstream_activation="relu", projector_activation="tanh"):
        self.upstream_dims = tuple(int(d) for d in upstream_dims)
        self.upstream_activation = upstream_activation
        self.projector_activation = projector_activation

    def build(self, input_dim, n_emotions, n_speakers, strategy, seed):
        return build_assembly(
            input_dim,
            n_emotions,
            n_speakers,
            strategy=strategy,
            upstream_dims=self.upstream_dims,
            upstream_activation=self.upstream_activation,
            projector_activation=self.projector_activation,
            seed=seed,
        )

    def to_dict(self):
        return {
            "upstream_dims": list(self.upstream_dims),
            "upstream_activation": self.upstream_activation,
            "projector_activation": self.projector_activation,
        }


class CurvePoint:

    def __init__(self, n_per_class, seeds, accuracies):
        self.n_per_class = int(n_per_class)
        self.seeds = [int(s) for s in seeds]
        self.accuracies = [float(a) for a in accuracies]
        self.mean = float(np.mean(self.accuracies))

    def to_dict(self):
        return {
            "n_per_class": self.n_per_class,
            "seeds": self.seeds,
            "accuracies": self.accuracies,
            "mean": self.mean,
        }


class CurveResult:

    """
    Low-resource learning curve: one :class:`CurvePoint` per training-set
    size (ascending) and the range-normalized AUC of the mean curve.
    """

    def __init__(self, points, label=None):
        self.points = sorted(points, key=lambda p: p.n_per_class)
        self.label = label
        if len(self.points) >= 2:
            self.auc = auc([(p.n_per_class, p.mean) for p in self.points])
        else:
            # a single size has no area; the average score is the point itself
            self.auc = self.points[0].mean if self.points else None

    def to_dict(self):
        return {"label": self.label, "points": [p.to_dict() for p in self.points], "auc": self.auc}


class CrossValidationResult:

    """
    Per-fold test WA of :func:`cross_validate` and the aggregate
    ``mean +- std`` (population standard deviation).
    """

    def __init__(self, folds, metrics, reports, mode, label=None):
        self.folds = folds
        self.metrics = metrics
        self.reports = reports
        self.mode = mode
        self.label = label
        values = np.array([m.value for m in metrics])
        self.mean = float(np.mean(values))
        self.std = float(np.std(values))

    def to_dict(self):
        return {
            "label": self.label,
            "mode": self.mode,
            "folds": [
                dict(split.to_dict(), wa=m.to_dict(), best_epoch=r.best_epoch)
                for split, m, r in zip(self.folds, self.metrics, self.reports)
            ],
            "mean": self.mean,
            "std": self.std,
        }


def derive_seed(seed, *tags):
    """31-bit seed of the named sub-stream ``tags`` of ``seed``"""
    return int(rng(seed, *tags).integers(0, 2 ** 31 - 1))


def make_splits(dataset, mode, seed, k_folds=5, validation_fraction=0.1, ratios=(0.8, 0.1, 0.1)):

    """
    Splits ``dataset`` under the requested protocol.

    Returns:
        :obj:`list` of :class:`data_synth.FoldSplit` (one element for the
        speaker-dependent protocol)
    """

    if mode == SPEAKER_INDEPENDENT:
        return split_speaker_independent(dataset, k_folds, validation_fraction, seed)
    if mode == SPEAKER_DEPENDENT:
        return [split_speaker_dependent(dataset, ratios, seed)]
    raise ValidationError("unknown evaluation mode '" + str(mode) + "', use one of " + ", ".join(MODES))


def run_fold(dataset, split, speaker_data, config, model_spec, model_seed):

    """
    Trains a fresh model on one fold and scores the best-epoch snapshot on
    the fold's test set.

    Returns:
        metric : :class:`metrics.Metric`

        report : :class:`adv_trainer.TrainReport`
    """

    n_speakers = speaker_data.n_speakers if speaker_data is not None else dataset.n_speakers
    model = model_spec.build(dataset.feature_dim, dataset.n_emotions, n_speakers, config.strategy, model_seed)
    report = train(model, dataset, split, speaker_data, config, logger=logging.getLogger(__name__))
    test = dataset.subset(split.test)
    metric = weighted_accuracy(predict(report.best_model, test.features), test.emotions)
    return metric, report


def cross_validate(
    dataset,
    config,
    mode=SPEAKER_INDEPENDENT,
    model_spec=None,
    speaker_data=None,
    k_folds=5,
    validation_fraction=0.1,
    ratios=(0.8, 0.1, 0.1),
    n_jobs=1,
    label=None,
    logger=None,
):

    """
    Cross-validation under the speaker-independent (k-fold) or the
    speaker-dependent (random split) protocol. Every fold trains a freshly
    seeded model with :func:`adv_trainer.train` and reports the test WA of
    the best-epoch snapshot.

    Args:
        dataset : :class:`data_synth.Dataset`

        config : :class:`adv_trainer.TrainConfig`
            its ``seed`` is the master seed of splits, models and shuffles

    Kwargs:
        mode : :obj:`str` (optional, default: ``speaker_independent``)

        model_spec : :class:`ModelSpec` (optional)

        speaker_data : :class:`data_synth.Dataset` (optional)
            separate dataset for the speaker task

        k_folds : :obj:`int` (optional, default: 5)

        validation_fraction : :obj:`float` (optional, default: 0.1)

        ratios : :obj:`tuple` (optional, default: (0.8, 0.1, 0.1))
            speaker-dependent split ratios

        n_jobs : :obj:`int` (optional, default: 1)
            worker processes for the folds

    Returns:
        :class:`CrossValidationResult`
    """

    if logger is None:
        logger = logging.getLogger(__name__)
    model_spec = model_spec or ModelSpec()

    folds = make_splits(dataset, mode, derive_seed(config.seed, "split"), k_folds, validation_fraction, ratios)
    logger.info(
        "Cross-validation (" + mode + "): " + str(len(folds)) + " folds, strategy " + config.strategy
    )
    start_time = time.time()

    star_args = []
    for split in folds:
        fold_config = config.replace(seed=derive_seed(config.seed, "fold-train", split.fold_index))
        model_seed = derive_seed(config.seed, "fold-model", split.fold_index)
        star_args.append((dataset, split, speaker_data, fold_config, model_spec, model_seed))
    results = starmap(run_fold, star_args, n_jobs)

    metrics = [r[0] for r in results]
    reports = [r[1] for r in results]
    for split, metric in zip(folds, metrics):
        logger.info(
            "Fold "
            + str(split.fold_index)
            + ": test WA="
            + str("{:.4f}".format(metric.value))
            + (" test speakers " + str(split.test_speakers) if split.test_speakers else "")
        )

    result = CrossValidationResult(folds, metrics, reports, mode, label=label)
    logger.info(
        "Mean WA=" + str("{:.4f}".format(result.mean)) + " +- " + str("{:.4f}".format(result.std))
    )
    logger.info("Elapsed time: " + time.strftime("%H:%M:%S", time.gmtime(time.time() - start_time)))
    return result


def fit_head(features, labels, n_classes, train_idx, val_idx, config, seed):

    """
    Trains a fresh single dense (softmax) head on fixed features with plain
    SGD and the best-epoch-on-validation stopping rule.

    Returns:
        head : :class:`nn_core.Mlp`
            snapshot at the best validation epoch
    """

    head = init_mlp([features.shape[1], n_classes], "identity", seed, tag="probe")
    batches = CyclingBatches(len(train_idx), config.batch_size, rng(seed, "probe-shuffle"))
    steps_per_epoch = int(np.ceil(len(train_idx) / config.batch_size))

    best_acc = -1.0
    best_head = head.copy()
    for epoch in range(config.epochs):
        for _ in range(steps_per_epoch):
            batch = train_idx[next(batches)]
            out, cache = forward(head, features[batch])
            _, dout = softmax_cross_entropy(out, labels[batch])
            grads, _ = backward(head, cache, dout)
            if config.eta > 0.0:
                apply_update(head, grads, config.eta, DESCENT)
        out, _ = forward(head, features[val_idx])
        acc = float(np.mean(np.argmax(out, axis=1) == labels[val_idx]))
        if acc > best_acc:
            best_acc = acc
            best_head = head.copy()
    return best_head


def probe_speaker_id(upstream, speaker_dataset, probe_config, projector=None, logger=None):

    """
    Measures how much speaker identity a frozen representation retains: a
    fresh speaker head is trained on the upstream (and projector) outputs of
    80% of ``speaker_dataset`` and scored on the remaining 20%. The snapshots
    are only read.

    Args:
        upstream : :class:`nn_core.Mlp`
            upstream snapshot

        speaker_dataset : :class:`data_synth.Dataset`

        probe_config : :class:`adv_trainer.TrainConfig`
            ``eta``, ``epochs``, ``batch_size`` and ``seed`` of the probe

    Kwargs:
        projector : :class:`nn_core.Mlp` (optional)
            projector snapshot placed after the upstream

    Returns:
        :class:`metrics.Metric` named ``probe_accuracy``
    """

    if logger is None:
        logger = logging.getLogger(__name__)
    if speaker_dataset.feature_dim != upstream.in_dim:
        raise ValidationError(
            "speaker dataset has " + str(speaker_dataset.feature_dim)
            + " features, upstream expects " + str(upstream.in_dim)
        )
    if projector is not None and projector.in_dim != upstream.out_dim:
        raise ValidationError("projector does not fit the upstream output")

    z, _ = forward(upstream, speaker_dataset.features)
    if projector is not None:
        z, _ = forward(projector, z)

    # 72/8/20: the 80% training part keeps a tenth for the stopping rule
    split = split_speaker_dependent(speaker_dataset, (0.72, 0.08, 0.2), probe_config.seed)
    head = fit_head(
        z,
        speaker_dataset.speakers,
        speaker_dataset.n_speakers,
        split.train,
        split.validation,
        probe_config,
        probe_config.seed,
    )
    out, _ = forward(head, z[split.test])
    metric = weighted_accuracy(np.argmax(out, axis=1), speaker_dataset.speakers[split.test], name="probe_accuracy")
    logger.info("Speaker probe accuracy: " + str("{:.4f}".format(metric.value)) + " on " + str(metric.support) + " utterances")
    return metric


def _curve_split(dataset, folds, seed, largest):
    # starts at a seed dependent fold so repeats hold out different speakers;
    # folds whose training pool cannot supply the largest size are skipped
    counts = None
    for j in range(len(folds)):
        split = folds[(seed + j) % len(folds)]
        counts = np.bincount(dataset.emotions[split.train], minlength=dataset.n_emotions)
        if counts.min() >= largest:
            return split
    raise ValidationError(
        "no fold has " + str(largest) + " training records of every emotion class (smallest class: "
        + str(int(counts.min())) + ")"
    )


def _curve_run(dataset, split, n_per_class, config, model_spec, model_seed, subsample_seed):
    train_pool = dataset.subset(split.train)
    chosen = subsample_per_class(train_pool, n_per_class, subsample_seed)
    # map the subsample back onto dataset indices
    pos = {uid: i for i, uid in enumerate(dataset.ids.tolist())}
    sub_split = FoldSplit(
        np.array([pos[u] for u in chosen.ids.tolist()], dtype=np.int64),
        split.validation,
        split.test,
        split.mode,
        fold_index=split.fold_index,
        test_speakers=split.test_speakers,
    )
    metric, _ = run_fold(dataset, sub_split, None, config, model_spec, model_seed)
    return metric.value


def low_resource_curve(
    dataset,
    sizes=DEFAULT_SIZES,
    repeats=5,
    config=None,
    model_spec=None,
    k_folds=5,
    validation_fraction=0.1,
    n_jobs=1,
    label=None,
    logger=None,
):

    """
    Low-resource protocol: for every training-set size (samples per emotion
    class) and every repeat, a random speaker-independent split is drawn, the
    training part is subsampled to ``n_per_class`` records per class, a
    fresh model is trained and its test WA recorded. The split of a repeat is
    shared by all sizes. The AUC of the mean curve summarises the result.

    Args:
        dataset : :class:`data_synth.Dataset`

    Kwargs:
        sizes : :obj:`list` (optional, default: (4, 8, 16, 32, 64, 128))
            ascending samples per class

        repeats : :obj:`int` (optional, default: 5)

        config : :class:`adv_trainer.TrainConfig`

        model_spec : :class:`ModelSpec` (optional)

        n_jobs : :obj:`int` (optional, default: 1)

    Returns:
        :class:`CurveResult`
    """

    if logger is None:
        logger = logging.getLogger(__name__)
    config = config or TrainConfig(strategy=BASELINE)
    model_spec = model_spec or ModelSpec()
    sizes = [int(s) for s in sizes]
    if len(sizes) == 0 or any(b <= a for a, b in zip(sizes[:-1], sizes[1:])):
        raise ValidationError("sizes must be non-empty and strictly ascending, got " + str(sizes))
    if int(repeats) < 1:
        raise ValidationError("repeats must be >= 1")

    seeds = [derive_seed(config.seed, "repeat", r) for r in range(int(repeats))]
    splits = []
    for seed in seeds:
        folds = split_speaker_independent(dataset, k_folds, validation_fraction, seed)
        splits.append(_curve_split(dataset, folds, seed, sizes[-1]))

    logger.info(
        "Low-resource curve: sizes " + str(sizes) + ", " + str(len(seeds)) + " repeats, strategy " + config.strategy
    )
    star_args = []
    for size in sizes:
        for seed, split in zip(seeds, splits):
            star_args.append(
                (
                    dataset,
                    split,
                    size,
                    config.replace(seed=derive_seed(seed, "train", size)),
                    model_spec,
                    derive_seed(seed, "model", size),
                    derive_seed(seed, "subsample", size),
                )
            )
    values = starmap(_curve_run, star_args, n_jobs)

    points = []
    for i, size in enumerate(sizes):
        acc = values[i * len(seeds) : (i + 1) * len(seeds)]
        points.append(CurvePoint(size, seeds, acc))
        logger.info("n_per_class=" + str(size) + ": mean WA=" + str("{:.4f}".format(points[-1].mean)))

    result = CurveResult(points, label=label)
    if result.auc is not None:
        logger.info("AUC=" + str("{:.4f}".format(result.auc)))
    return result
