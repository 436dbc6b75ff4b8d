#!/usr/bin/env python


__version__ = "0.2.0"

__revision__ = "20261017"


import logging
import time

import numpy as np

from FEATnorm.metrics import weighted_accuracy
from FEATnorm.nn_core import (
    ASCENT,
    DESCENT,
    apply_update,
    backward,
    dumps_mlp,
    forward,
    init_mlp,
    loads_mlp,
    softmax_cross_entropy,
)
from FEATnorm.utils import ContractError, ParseError, ValidationError, rng, write_atomic


SNP = "SNP"
TAP = "TAP"
BASELINE = "BASELINE"
STRATEGIES = (SNP, TAP, BASELINE)

COMPONENTS = ("upstream", "projector", "emotion_head", "speaker_head")


class ModelAssembly:

    """
    Upstream encoder, optional speaker normalization projector, emotion head
    and speaker head. Both heads read the same representation: the projector
    output when a projector is present, the upstream output otherwise.

    Args:
        upstream : :class:`nn_core.Mlp`

        emotion_head : :class:`nn_core.Mlp`

        speaker_head : :class:`nn_core.Mlp`

    Kwargs:
        projector : :class:`nn_core.Mlp` (optional, default: :obj:`None`)
            exactly one non-linear ``k -> k`` layer, only used by the SNP
            strategy
    """

    def __init__(self, upstream, emotion_head, speaker_head, projector=None):
        self.upstream = upstream
        self.projector = projector
        self.emotion_head = emotion_head
        self.speaker_head = speaker_head

        k = upstream.out_dim
        if projector is not None:
            if len(projector.layers) != 1 or projector.layers[0].activation == "identity":
                raise ValidationError("the projector must be exactly one non-linear layer")
            if projector.in_dim != k:
                raise ValidationError(
                    "projector expects " + str(projector.in_dim) + " inputs, upstream gives " + str(k)
                )
            k = projector.out_dim
        for name, head in (("emotion_head", emotion_head), ("speaker_head", speaker_head)):
            if head.in_dim != k:
                raise ValidationError(
                    name + " expects " + str(head.in_dim) + " inputs, representation has " + str(k)
                )

    @property
    def input_dim(self):
        return self.upstream.in_dim

    @property
    def n_emotions(self):
        return self.emotion_head.out_dim

    @property
    def n_speakers(self):
        return self.speaker_head.out_dim

    def components(self):
        out = {"upstream": self.upstream}
        if self.projector is not None:
            out["projector"] = self.projector
        out["emotion_head"] = self.emotion_head
        out["speaker_head"] = self.speaker_head
        return out

    def check(self, strategy):
        """ModelAssembly invariant: projector present iff strategy is SNP"""
        if strategy not in STRATEGIES:
            raise ValidationError("unknown strategy '" + str(strategy) + "', use one of " + ", ".join(STRATEGIES))
        if (strategy == SNP) != (self.projector is not None):
            raise ContractError(
                "strategy " + strategy + " with" + ("" if self.projector is not None else "out") + " projector"
            )

    def representation(self, features):
        """frozen forward pass to the representation both heads read"""
        z, _ = forward(self.upstream, features)
        if self.projector is not None:
            z, _ = forward(self.projector, z)
        return z

    def digest(self):
        return {name: net.digest() for name, net in self.components().items()}

    def snapshot(self):
        return snapshot(self)

    def restore(self, snap):
        return restore(self, snap)


def build_assembly(
    input_dim,
    n_emotions,
    n_speakers,
    strategy=TAP,
    upstream_dims=(64, 32),
    upstream_activation="relu",
    projector_activation="tanh",
    seed=0,
):

    """
    Creates a freshly initialised :class:`ModelAssembly`.

    Args:
        input_dim : :obj:`int`
            feature dimension of the data

        n_emotions : :obj:`int`

        n_speakers : :obj:`int`

    Kwargs:
        strategy : :obj:`str` (optional, default: ``TAP``)
            ``SNP`` adds a ``k -> k`` projector

        upstream_dims : :obj:`tuple` (optional, default: (64, 32))
            hidden widths of the upstream encoder, the last one is ``k``

        upstream_activation : :obj:`str` (optional, default: ``relu``)

        projector_activation : :obj:`str` (optional, default: ``tanh``)

        seed : :obj:`int` (optional, default: 0)
    """

    if strategy not in STRATEGIES:
        raise ValidationError("unknown strategy '" + str(strategy) + "'")
    upstream_dims = [int(d) for d in upstream_dims]
    if len(upstream_dims) == 0:
        raise ValidationError("the upstream needs at least one layer")
    k = upstream_dims[-1]

    upstream = init_mlp([input_dim] + upstream_dims, upstream_activation, seed, tag="upstream")
    projector = None
    if strategy == SNP:
        projector = init_mlp([k, k], projector_activation, seed, tag="projector")
    emotion_head = init_mlp([k, n_emotions], "identity", seed, tag="emotion_head")
    speaker_head = init_mlp([k, n_speakers], "identity", seed, tag="speaker_head")
    return ModelAssembly(upstream, emotion_head, speaker_head, projector=projector)


class TrainConfig:

    """
    Hyperparameters of one training run.

    Kwargs:
        eta : :obj:`float` (optional, default: 0.05)
            learning rate of every descent step

        lam : :obj:`float` (optional, default: 0.001)
            speaker normalization strength, the rate of the ascent step.
            Forced to 0 for ``BASELINE``.

        strategy : :obj:`str` (optional, default: ``TAP``)
            ``SNP``, ``TAP`` or ``BASELINE``

        epochs : :obj:`int` (optional, default: 50)

        batch_size : :obj:`int` (optional, default: 32)

        speaker_steps_per_emotion_step : :obj:`int` (optional, default: 1)

        seed : :obj:`int` (optional, default: 0)
            seed of the emotion and speaker shuffle streams
    """

    validation_metric = "weighted_accuracy"

    def __init__(
        self,
        eta=0.05,
        lam=0.001,
        strategy=TAP,
        epochs=50,
        batch_size=32,
        speaker_steps_per_emotion_step=1,
        seed=0,
    ):
        if strategy not in STRATEGIES:
            raise ValidationError("unknown strategy '" + str(strategy) + "', use one of " + ", ".join(STRATEGIES))
        if not (np.isfinite(eta) and eta >= 0.0):
            raise ValidationError("eta must be >= 0, got " + str(eta))
        if not (np.isfinite(lam) and lam >= 0.0):
            raise ValidationError("lambda must be >= 0, got " + str(lam))
        if int(epochs) < 1:
            raise ValidationError("epochs must be >= 1, got " + str(epochs))
        if int(batch_size) < 1:
            raise ValidationError("batch_size must be >= 1, got " + str(batch_size))
        if int(speaker_steps_per_emotion_step) < 0:
            raise ValidationError("speaker_steps_per_emotion_step must be >= 0")

        self.eta = float(eta)
        self.lam = 0.0 if strategy == BASELINE else float(lam)
        self.strategy = strategy
        self.epochs = int(epochs)
        self.batch_size = int(batch_size)
        self.speaker_steps_per_emotion_step = int(speaker_steps_per_emotion_step)
        self.seed = int(seed)

    def replace(self, **kwargs):
        values = self.to_dict()
        values.pop("validation_metric")
        values["lam"] = values.pop("lambda")
        values.update(kwargs)
        return TrainConfig(**values)

    def to_dict(self):
        return {
            "eta": self.eta,
            "lambda": self.lam,
            "strategy": self.strategy,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "speaker_steps_per_emotion_step": self.speaker_steps_per_emotion_step,
            "seed": self.seed,
            "validation_metric": self.validation_metric,
        }


class TrainReport:

    """
    Outcome of :func:`train`: per-epoch metric arrays, the best epoch on the
    validation set and the model snapshot taken at that epoch.
    """

    def __init__(self, config):
        self.config = config
        self.train_loss = []
        self.speaker_loss = []
        self.validation_wa = []
        self.best_epoch = None
        self.best_model = None
        self.emotion_steps = 0
        self.speaker_steps = 0

    def to_dict(self, snapshot_paths=None):
        return {
            "config": self.config.to_dict(),
            "train_loss": list(self.train_loss),
            "speaker_loss": list(self.speaker_loss),
            "validation_wa": list(self.validation_wa),
            "best_epoch": self.best_epoch,
            "best_validation_wa": self.validation_wa[self.best_epoch] if self.best_epoch is not None else None,
            "emotion_steps": self.emotion_steps,
            "speaker_steps": self.speaker_steps,
            "snapshots": dict(snapshot_paths or {}),
        }


def _check_batch(model, features, labels, n_classes, task):
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    if features.ndim != 2 or features.shape[0] == 0:
        raise ValidationError(task + " batch is empty")
    if labels.shape != (features.shape[0],):
        raise ValidationError(task + " batch has " + str(features.shape[0]) + " rows but " + str(labels.shape) + " labels")
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ValidationError(
            task + " label out of range [0, " + str(n_classes) + "): " + str(labels[(labels < 0) | (labels >= n_classes)][0])
        )
    return features, labels


def emotion_step(model, features, emotion_labels, eta, strategy):

    """
    First update of the two-step procedure: plain SGD on the emotion loss,
    applied to the emotion head and to the upstream (and, for SNP,
    to the projector jointly with the upstream). The speaker head is never
    touched and speaker labels are never read.

    Args:
        model : :class:`ModelAssembly`
            updated in place

        features : :func:`numpy.array`

        emotion_labels : :func:`numpy.array`

        eta : :obj:`float`
            learning rate; 0 leaves every parameter unchanged

        strategy : :obj:`str`

    Returns:
        model : :class:`ModelAssembly`

        loss : :obj:`float`
            emotion loss before the update
    """

    model.check(strategy)
    x, y = _check_batch(model, features, emotion_labels, model.n_emotions, "emotion")

    h, h_cache = forward(model.upstream, x)
    z = h
    if model.projector is not None:
        z, p_cache = forward(model.projector, h)
    logits, e_cache = forward(model.emotion_head, z)
    loss, dlogits = softmax_cross_entropy(logits, y)

    g_emotion, dz = backward(model.emotion_head, e_cache, dlogits)
    dh = dz
    if model.projector is not None:
        g_proj, dh = backward(model.projector, p_cache, dz)
    g_up, _ = backward(model.upstream, h_cache, dh)

    if eta > 0.0:
        apply_update(model.emotion_head, g_emotion, eta, DESCENT)
        if model.projector is not None:
            apply_update(model.projector, g_proj, eta, DESCENT)
        apply_update(model.upstream, g_up, eta, DESCENT)

    return model, loss


def speaker_step(model, features, speaker_labels, eta, lam, strategy):

    """
    Second update of the two-step procedure: the speaker head descends on the
    speaker loss with rate ``eta`` while the representation ascends
    on it with rate ``lam``. Under TAP the ascent moves the upstream; under
    SNP it moves the projector only and no upstream gradient is computed.
    The emotion head is never touched and emotion labels are never read.

    Args:
        model : :class:`ModelAssembly`
            updated in place

        features : :func:`numpy.array`

        speaker_labels : :func:`numpy.array`

        eta : :obj:`float`

        lam : :obj:`float`

        strategy : :obj:`str`
            ``SNP`` or ``TAP``

    Returns:
        model : :class:`ModelAssembly`

        loss : :obj:`float`
            speaker loss before the update
    """

    if strategy == BASELINE:
        raise ContractError("speaker_step scheduled under BASELINE")
    model.check(strategy)
    x, y = _check_batch(model, features, speaker_labels, model.n_speakers, "speaker")

    h, h_cache = forward(model.upstream, x)
    z = h
    if strategy == SNP:
        z, p_cache = forward(model.projector, h)
    logits, s_cache = forward(model.speaker_head, z)
    loss, dlogits = softmax_cross_entropy(logits, y)

    g_speaker, dz = backward(model.speaker_head, s_cache, dlogits)
    g_rep = None
    if lam > 0.0:
        if strategy == SNP:
            g_rep, _ = backward(model.projector, p_cache, dz)
        else:
            g_rep, _ = backward(model.upstream, h_cache, dz)

    if eta > 0.0:
        apply_update(model.speaker_head, g_speaker, eta, DESCENT)
    if g_rep is not None:
        target = model.projector if strategy == SNP else model.upstream
        apply_update(target, g_rep, lam, ASCENT)

    return model, loss


class CyclingBatches:

    """
    Endless mini-batch index iterator over ``n`` records, reshuffled with its
    own generator every time it wraps around.
    """

    def __init__(self, n, batch_size, gen):
        if n < 1:
            raise ValidationError("cannot cycle over an empty dataset")
        self.n = n
        self.batch_size = batch_size
        self.gen = gen
        self.order = gen.permutation(n)
        self.pos = 0

    def __iter__(self):
        return self

    def __next__(self):
        if self.pos >= self.n:
            self.order = self.gen.permutation(self.n)
            self.pos = 0
        batch = self.order[self.pos : self.pos + self.batch_size]
        self.pos += self.batch_size
        return batch


def predict(model, features):
    """emotion class indices predicted by ``model``"""
    logits, _ = forward(model.emotion_head, model.representation(features))
    return np.argmax(logits, axis=1)


def train(model, emotion_data, split, speaker_data, config, logger=None):

    """
    Runs the adversarial training procedure.

    Every epoch iterates the emotion training set in shuffled mini-batches.
    After each :func:`emotion_step`, ``speaker_steps_per_emotion_step``
    :func:`speaker_step` calls are made on batches drawn from an independent
    cycling iterator over ``speaker_data``. The validation WA is evaluated
    after every epoch and the model is snapshotted at the best epoch
    (ties keep the earliest).

    Args:
        model : :class:`ModelAssembly`
            trained in place, holds the final-epoch parameters afterwards

        emotion_data : :class:`data_synth.Dataset`

        split : :class:`data_synth.FoldSplit`
            ``train`` and ``validation`` index lists into ``emotion_data``

        speaker_data : :class:`data_synth.Dataset` or :obj:`None`
            dataset of the speaker task; only its speaker labels are read.
            :obj:`None` uses the training part of ``emotion_data``.

        config : :class:`TrainConfig`

    Kwargs:
        logger : :class:`logging.Logger` (optional)

    Returns:
        :class:`TrainReport`
    """

    if logger is None:
        logger = logging.getLogger(__name__)

    model.check(config.strategy)
    if len(split.train) == 0:
        raise ValidationError("empty emotion training split")
    if len(split.validation) == 0:
        raise ValidationError("empty emotion validation split")
    if emotion_data.feature_dim != model.input_dim:
        raise ValidationError(
            "dataset has " + str(emotion_data.feature_dim) + " features, upstream expects " + str(model.input_dim)
        )
    if speaker_data is None:
        speaker_data = emotion_data.subset(split.train)

    adversarial = config.strategy != BASELINE and config.speaker_steps_per_emotion_step > 0
    if adversarial:
        if len(speaker_data) == 0:
            raise ValidationError("empty speaker dataset")
        if speaker_data.feature_dim != model.input_dim:
            raise ValidationError("speaker dataset feature dim does not match the upstream")

    x_train = emotion_data.features[split.train]
    y_train = emotion_data.emotions[split.train]
    x_val = emotion_data.features[split.validation]
    y_val = emotion_data.emotions[split.validation]

    emotion_gen = rng(config.seed, "emotion-shuffle")
    speaker_batches = None
    if adversarial:
        speaker_batches = CyclingBatches(len(speaker_data), config.batch_size, rng(config.seed, "speaker-shuffle"))

    logger.info(
        "Training: strategy="
        + config.strategy
        + " eta="
        + str(config.eta)
        + " lambda="
        + str(config.lam)
        + " epochs="
        + str(config.epochs)
        + " batch="
        + str(config.batch_size)
    )
    start_time = time.time()

    report = TrainReport(config)
    best_wa = -1.0
    for epoch in range(config.epochs):
        order = emotion_gen.permutation(len(y_train))
        e_losses = []
        s_losses = []
        for start in range(0, len(order), config.batch_size):
            batch = order[start : start + config.batch_size]
            _, loss = emotion_step(model, x_train[batch], y_train[batch], config.eta, config.strategy)
            e_losses.append(loss)
            report.emotion_steps += 1

            if adversarial:
                for _ in range(config.speaker_steps_per_emotion_step):
                    sb = next(speaker_batches)
                    _, s_loss = speaker_step(
                        model,
                        speaker_data.features[sb],
                        speaker_data.speakers[sb],
                        config.eta,
                        config.lam,
                        config.strategy,
                    )
                    s_losses.append(s_loss)
                    report.speaker_steps += 1

        wa = weighted_accuracy(predict(model, x_val), y_val).value
        report.train_loss.append(float(np.mean(e_losses)))
        report.speaker_loss.append(float(np.mean(s_losses)) if s_losses else None)
        report.validation_wa.append(wa)
        if wa > best_wa:
            best_wa = wa
            report.best_epoch = epoch
            report.best_model = snapshot(model)

        logger.debug(
            "Epoch "
            + str(epoch + 1)
            + "/"
            + str(config.epochs)
            + ": loss="
            + str("{:.4f}".format(report.train_loss[-1]))
            + " val WA="
            + str("{:.4f}".format(wa))
        )

    elapsed_time = time.time() - start_time
    logger.info(
        "Finished training: best epoch "
        + str(report.best_epoch + 1)
        + " with val WA="
        + str("{:.4f}".format(best_wa))
        + " ("
        + str(report.emotion_steps)
        + " emotion / "
        + str(report.speaker_steps)
        + " speaker steps)"
    )
    logger.info("Elapsed time: " + time.strftime("%H:%M:%S", time.gmtime(elapsed_time)))

    return report


def snapshot(model):
    """opaque deep copy of ``model``"""
    return ModelAssembly(
        model.upstream.copy(),
        model.emotion_head.copy(),
        model.speaker_head.copy(),
        projector=model.projector.copy() if model.projector is not None else None,
    )


def restore(model, snap):

    """
    Copies the parameters of ``snap`` into ``model`` bit-exactly.

    Returns:
        model : :class:`ModelAssembly`
    """

    src = snap.components()
    dst = model.components()
    if sorted(src) != sorted(dst):
        raise ContractError("snapshot components " + str(sorted(src)) + " do not match " + str(sorted(dst)))
    for name, net in dst.items():
        other = src[name]
        if [l.weight.shape for l in net.layers] != [l.weight.shape for l in other.layers]:
            raise ContractError("snapshot shapes do not match for " + name)
        for param, value in zip(net.parameters(), other.parameters()):
            param[...] = value
        net.touch()
    return model


def dumps_assembly(model):
    blocks = []
    for name, net in model.components().items():
        blocks.append("component " + name + "\n" + dumps_mlp(net))
    return "".join(blocks)


def loads_assembly(text):

    """
    Parses the text written by :func:`dumps_assembly`.
    """

    lines = text.splitlines()
    starts = [i for i, line in enumerate(lines) if line.startswith("component ")]
    if not starts or starts[0] != 0:
        raise ParseError("expected 'component NAME'", 1)

    nets = {}
    for j, start in enumerate(starts):
        name = lines[start].split(maxsplit=1)[1].strip()
        if name not in COMPONENTS or name in nets:
            raise ParseError("unknown or repeated component '" + name + "'", start + 1)
        end = starts[j + 1] if j + 1 < len(starts) else len(lines)
        nets[name] = loads_mlp("\n".join(lines[start + 1 : end]), first_line=start + 2)

    for name in ("upstream", "emotion_head", "speaker_head"):
        if name not in nets:
            raise ParseError("component '" + name + "' missing", len(lines))
    try:
        return ModelAssembly(nets["upstream"], nets["emotion_head"], nets["speaker_head"], projector=nets.get("projector"))
    except ValidationError as err:
        raise ParseError(str(err))


def save_assembly(model, path):
    write_atomic(path, dumps_assembly(model))


def load_assembly(path):
    with open(path, "r") as read_file:
        return loads_assembly(read_file.read())
