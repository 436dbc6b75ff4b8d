#!/usr/bin/env python


__version__ = "0.2.0"

__revision__ = "20261017"


import json
import os

import numpy as np
import pandas as pd

from FEATnorm.utils import (
    CounterStream,
    ParseError,
    ValidationError,
    rng,
    write_atomic,
)


SPEAKER_INDEPENDENT = "speaker_independent"
SPEAKER_DEPENDENT = "speaker_dependent"


class SynthSpec:

    """
    Parameters of the synthetic biased benchmark.

    Kwargs:
        n_speakers : :obj:`int` (optional, default: 10)
            number of speakers, >= 2

        n_emotions : :obj:`int` (optional, default: 4)
            number of emotion classes, >= 2

        feature_dim : :obj:`int` (optional, default: 32)
            length of each feature vector

        speaker_scale : :obj:`float` (optional, default: 2.0)
            norm of the per-speaker offset vectors

        emotion_scale : :obj:`float` (optional, default: 2.0)
            norm of the per-emotion signal vectors

        noise_std : :obj:`float` (optional, default: 1.0)
            standard deviation of the isotropic gaussian noise

        bias_rho : :obj:`float` (optional, default: 0.9)
            probability that a sample carries its speaker's preferred emotion
            instead of a uniformly drawn one

        samples_per_speaker : :obj:`int` (optional, default: 200)

        seed : :obj:`int` (optional, default: 0)

        preference_seed : :obj:`int` or :obj:`None` (optional, default: :obj:`None`)
            :obj:`None`: speaker ``s`` prefers emotion ``s mod n_emotions``

            otherwise the emotion indices of that map are permuted with a
            stream seeded by this value
    """

    FIELDS = (
        "n_speakers",
        "n_emotions",
        "feature_dim",
        "speaker_scale",
        "emotion_scale",
        "noise_std",
        "bias_rho",
        "samples_per_speaker",
        "seed",
        "preference_seed",
    )

    def __init__(
        self,
        n_speakers=10,
        n_emotions=4,
        feature_dim=32,
        speaker_scale=2.0,
        emotion_scale=2.0,
        noise_std=1.0,
        bias_rho=0.9,
        samples_per_speaker=200,
        seed=0,
        preference_seed=None,
    ):
        self.n_speakers = int(n_speakers)
        self.n_emotions = int(n_emotions)
        self.feature_dim = int(feature_dim)
        self.speaker_scale = float(speaker_scale)
        self.emotion_scale = float(emotion_scale)
        self.noise_std = float(noise_std)
        self.bias_rho = float(bias_rho)
        self.samples_per_speaker = int(samples_per_speaker)
        self.seed = int(seed)
        self.preference_seed = None if preference_seed is None else int(preference_seed)

    def validate(self):
        if self.n_speakers < 2:
            raise ValidationError("n_speakers must be >= 2, got " + str(self.n_speakers))
        if self.n_emotions < 2:
            raise ValidationError("n_emotions must be >= 2, got " + str(self.n_emotions))
        if self.feature_dim < 1:
            raise ValidationError("feature_dim must be >= 1, got " + str(self.feature_dim))
        if self.samples_per_speaker < 1:
            raise ValidationError("samples_per_speaker must be >= 1")
        if not 0.0 <= self.bias_rho <= 1.0:
            raise ValidationError("bias_rho must be in [0, 1], got " + str(self.bias_rho))
        for name in ("speaker_scale", "emotion_scale", "noise_std"):
            if not getattr(self, name) >= 0.0:
                raise ValidationError(name + " must be >= 0")
        return self

    def to_dict(self):
        return {name: getattr(self, name) for name in self.FIELDS}

    def preferred_emotions(self):
        pref = np.arange(self.n_speakers) % self.n_emotions
        if self.preference_seed is not None:
            perm = rng(self.preference_seed, "preference").permutation(self.n_emotions)
            pref = perm[pref]
        return pref


class Dataset:

    """
    A set of utterance records ``(id, speaker, emotion, features)`` stored
    column-wise.

    Args:
        ids : :obj:`list` of :obj:`str`
            unique utterance identifiers

        speakers : :func:`numpy.array`
            speaker label per record

        emotions : :func:`numpy.array`
            emotion label per record

        features : :func:`numpy.array`
            ``n_records x feature_dim`` float64 matrix

    Kwargs:
        n_speakers : :obj:`int` (optional)
            declared speaker cardinality, default ``max(speakers) + 1``

        n_emotions : :obj:`int` (optional)
            declared emotion cardinality, default ``max(emotions) + 1``
    """

    def __init__(self, ids, speakers, emotions, features, n_speakers=None, n_emotions=None):
        self.ids = np.asarray(ids, dtype=object)
        self.speakers = np.asarray(speakers, dtype=np.int64).reshape(-1)
        self.emotions = np.asarray(emotions, dtype=np.int64).reshape(-1)
        features = np.asarray(features, dtype=np.float64)
        if features.ndim == 1:
            features = features.reshape(len(self.ids), -1)
        self.features = features

        n = len(self.ids)
        if not (len(self.speakers) == len(self.emotions) == features.shape[0] == n):
            raise ValidationError("record columns have different lengths")
        if len(set(self.ids.tolist())) != n:
            raise ValidationError("utterance ids are not unique")

        self.n_speakers = int(n_speakers) if n_speakers is not None else int(self.speakers.max(initial=-1)) + 1
        self.n_emotions = int(n_emotions) if n_emotions is not None else int(self.emotions.max(initial=-1)) + 1
        if n and (self.speakers.min() < 0 or self.speakers.max() >= self.n_speakers):
            raise ValidationError("speaker labels outside [0, " + str(self.n_speakers) + ")")
        if n and (self.emotions.min() < 0 or self.emotions.max() >= self.n_emotions):
            raise ValidationError("emotion labels outside [0, " + str(self.n_emotions) + ")")

    def __len__(self):
        return len(self.ids)

    @property
    def feature_dim(self):
        return self.features.shape[1]

    def subset(self, indices):
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(
            self.ids[indices],
            self.speakers[indices],
            self.emotions[indices],
            self.features[indices],
            n_speakers=self.n_speakers,
            n_emotions=self.n_emotions,
        )

    def speaker_set(self, indices=None):
        spk = self.speakers if indices is None else self.speakers[np.asarray(indices, dtype=np.int64)]
        return sorted(set(spk.tolist()))

    def equals(self, other):
        return (
            self.ids.tolist() == other.ids.tolist()
            and np.array_equal(self.speakers, other.speakers)
            and np.array_equal(self.emotions, other.emotions)
            and np.array_equal(self.features, other.features)
        )

    def to_frame(self):
        frame = pd.DataFrame(
            {"id": self.ids.astype(str), "speaker": self.speakers, "emotion": self.emotions}
        )
        cols = pd.DataFrame(self.features, columns=["f" + str(i) for i in range(self.feature_dim)])
        return pd.concat([frame, cols], axis=1)


class FoldSplit:

    """
    Train / validation / test index lists of one evaluation fold.
    """

    def __init__(self, train, validation, test, mode, fold_index=0, test_speakers=None):
        self.train = np.asarray(train, dtype=np.int64)
        self.validation = np.asarray(validation, dtype=np.int64)
        self.test = np.asarray(test, dtype=np.int64)
        self.mode = mode
        self.fold_index = int(fold_index)
        self.test_speakers = list(test_speakers) if test_speakers is not None else None

    def to_dict(self):
        return {
            "mode": self.mode,
            "fold_index": self.fold_index,
            "n_train": int(len(self.train)),
            "n_validation": int(len(self.validation)),
            "n_test": int(len(self.test)),
            "test_speakers": self.test_speakers,
        }


def _unit_vectors(stream, n, dim):
    v = stream.normal(n * dim).reshape(n, dim)
    norm = np.linalg.norm(v, axis=1, keepdims=True)
    norm[norm == 0.0] = 1.0
    return v / norm


def generate(spec):

    """
    Generates a dataset with planted speaker structure and a controllable
    spurious speaker-emotion correlation.

    Every sample of speaker ``s`` has features
    ``emotion_signal[e] + speaker_offset[s] + N(0, noise_std)``; with
    probability ``bias_rho`` its emotion ``e`` is the speaker's preferred
    emotion, otherwise uniform. All draws come from counter-based streams,
    so the result is byte-reproducible for a given ``spec.seed``.

    Args:
        spec : :class:`SynthSpec`

    Returns:
        :class:`Dataset`
    """

    spec.validate()

    emotion_signal = spec.emotion_scale * _unit_vectors(
        CounterStream(spec.seed, "emotion-signal"), spec.n_emotions, spec.feature_dim
    )
    speaker_offset = spec.speaker_scale * _unit_vectors(
        CounterStream(spec.seed, "speaker-offset"), spec.n_speakers, spec.feature_dim
    )
    preferred = spec.preferred_emotions()

    n = spec.n_speakers * spec.samples_per_speaker
    speakers = np.repeat(np.arange(spec.n_speakers), spec.samples_per_speaker)

    labels = CounterStream(spec.seed, "emotion-labels")
    u_bias = labels.uniform(n)
    u_class = labels.uniform(n)
    uniform_emotion = np.minimum((u_class * spec.n_emotions).astype(np.int64), spec.n_emotions - 1)
    emotions = np.where(u_bias < spec.bias_rho, preferred[speakers], uniform_emotion)

    noise = CounterStream(spec.seed, "noise").normal(n * spec.feature_dim).reshape(n, spec.feature_dim)
    features = emotion_signal[emotions] + speaker_offset[speakers] + spec.noise_std * noise

    counts = np.tile(np.arange(spec.samples_per_speaker), spec.n_speakers)
    ids = ["spk" + str("{:03d}".format(s)) + "_utt" + str("{:05d}".format(i)) for s, i in zip(speakers, counts)]

    return Dataset(ids, speakers, emotions, features, n_speakers=spec.n_speakers, n_emotions=spec.n_emotions)


def split_speaker_independent(dataset, k_folds=5, validation_fraction=0.1, seed=0):

    """
    Speaker-independent k-fold protocol: the speakers are partitioned into
    ``k_folds`` equal groups; in fold ``i`` group ``i`` is the test set and
    the remaining utterances are split into train and validation at
    utterance level.

    Args:
        dataset : :class:`Dataset`

    Kwargs:
        k_folds : :obj:`int` (optional, default: 5)

        validation_fraction : :obj:`float` (optional, default: 0.1)
            fraction of the non-test utterances used for validation

        seed : :obj:`int` (optional, default: 0)

    Returns:
        :obj:`list` of :class:`FoldSplit`
    """

    speakers = np.array(dataset.speaker_set(), dtype=np.int64)
    k_folds = int(k_folds)
    if k_folds < 2:
        raise ValidationError("k_folds must be >= 2, got " + str(k_folds))
    if k_folds > len(speakers):
        raise ValidationError(
            "k_folds=" + str(k_folds) + " exceeds the number of speakers (" + str(len(speakers)) + ")"
        )
    if len(speakers) % k_folds != 0:
        raise ValidationError(
            str(len(speakers)) + " speakers cannot be divided into " + str(k_folds) + " equal groups"
        )
    if not 0.0 < validation_fraction < 1.0:
        raise ValidationError("validation_fraction must be in (0, 1), got " + str(validation_fraction))

    groups = rng(seed, "fold-speakers").permutation(speakers).reshape(k_folds, -1)

    folds = []
    for i, group in enumerate(groups):
        is_test = np.isin(dataset.speakers, group)
        test = np.flatnonzero(is_test)
        rest = rng(seed, "fold-validation", i).permutation(np.flatnonzero(~is_test))
        n_val = int(round(validation_fraction * len(rest)))
        if n_val < 1 or n_val >= len(rest):
            raise ValidationError("fold " + str(i) + " has too few utterances for a validation split")
        folds.append(
            FoldSplit(
                np.sort(rest[n_val:]),
                np.sort(rest[:n_val]),
                test,
                SPEAKER_INDEPENDENT,
                fold_index=i,
                test_speakers=sorted(int(s) for s in group),
            )
        )
    return folds


def split_speaker_dependent(dataset, ratios=(0.8, 0.1, 0.1), seed=0):

    """
    Speaker-dependent protocol: a uniform random utterance-level split into
    train, validation and test.

    Args:
        dataset : :class:`Dataset`

    Kwargs:
        ratios : :obj:`tuple` (optional, default: (0.8, 0.1, 0.1))
            positive train, validation and test fractions summing to 1

        seed : :obj:`int` (optional, default: 0)

    Returns:
        :class:`FoldSplit`
    """

    ratios = [float(r) for r in ratios]
    if len(ratios) != 3 or min(ratios) <= 0.0 or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValidationError("ratios must be three positive numbers summing to 1, got " + str(ratios))

    n = len(dataset)
    n_train = int(round(ratios[0] * n))
    n_val = int(round(ratios[1] * n))
    n_test = n - n_train - n_val
    if min(n_train, n_val, n_test) < 1:
        raise ValidationError(
            "ratios " + str(ratios) + " give an empty part for " + str(n) + " records"
        )

    perm = rng(seed, "dependent-split").permutation(n)
    return FoldSplit(
        np.sort(perm[:n_train]),
        np.sort(perm[n_train : n_train + n_val]),
        np.sort(perm[n_train + n_val :]),
        SPEAKER_DEPENDENT,
    )


def subsample_per_class(dataset, n_per_class, seed=0):

    """
    Draws exactly ``n_per_class`` records of every emotion class, uniformly
    without replacement.

    Returns:
        :class:`Dataset` ordered by emotion class
    """

    n_per_class = int(n_per_class)
    if n_per_class < 1:
        raise ValidationError("n_per_class must be >= 1, got " + str(n_per_class))

    gen = rng(seed, "subsample")
    chosen = []
    for e in range(dataset.n_emotions):
        members = np.flatnonzero(dataset.emotions == e)
        if len(members) < n_per_class:
            raise ValidationError(
                "emotion class " + str(e) + " has " + str(len(members))
                + " records, " + str(n_per_class) + " requested"
            )
        chosen.append(gen.choice(members, size=n_per_class, replace=False))
    return dataset.subset(np.concatenate(chosen))


def meta_path(path):
    return os.path.splitext(path)[0] + ".meta"


def save_csv(dataset, path, spec=None):

    """
    Writes ``dataset`` as CSV (header ``id,speaker,emotion,f0,...``, features
    with 17 significant digits, LF line endings) and a JSON sidecar manifest
    ``<basename>.meta``.

    Kwargs:
        spec : :class:`SynthSpec` (optional)
            echoed into the manifest
    """

    text = dataset.to_frame().to_csv(index=False, float_format="%.17g", lineterminator="\n")
    write_atomic(path, text)
    meta = {
        "n_speakers": dataset.n_speakers,
        "n_emotions": dataset.n_emotions,
        "feature_dim": int(dataset.feature_dim),
        "n_records": len(dataset),
        "generator": spec.to_dict() if spec is not None else None,
    }
    write_atomic(meta_path(path), json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_csv(path):

    """
    Reads a dataset written by :func:`save_csv` (or any file following the
    same column contract). Cardinalities come from the ``.meta`` sidecar when
    present.

    Returns:
        :class:`Dataset`
    """

    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, na_filter=False)
    except pd.errors.ParserError as err:
        raise ParseError(str(err))
    except pd.errors.EmptyDataError:
        raise ParseError("empty file, header missing", 1)
    frame = frame.fillna("")  # short rows

    cols = list(frame.columns)
    feat_cols = cols[3:]
    if cols[:3] != ["id", "speaker", "emotion"] or feat_cols != ["f" + str(i) for i in range(len(feat_cols))]:
        raise ParseError("header must be id,speaker,emotion,f0,...,f{d-1}", 1)

    for row, values in enumerate(frame.itertuples(index=False)):
        line = row + 2
        if values[0] == "":
            raise ParseError("empty utterance id", line)
        for name, value in zip(cols[1:3], values[1:3]):
            if value.startswith("-") and value[1:].isdigit():
                raise ParseError(name + " must be >= 0, got " + value, line)
            if not value.isdigit():
                raise ParseError(name + " is not an integer: '" + value + "'", line)
        if any(v == "" for v in values[3:]):
            raise ParseError("missing feature value", line)
        try:
            row_values = [float(v) for v in values[3:]]
        except ValueError:
            raise ParseError("non-numeric feature value", line)
        if not np.all(np.isfinite(row_values)):
            raise ParseError("non-finite feature value", line)

    features = frame[feat_cols].to_numpy(dtype=np.float64) if len(frame) else np.zeros((0, len(feat_cols)))

    n_speakers = n_emotions = None
    if os.path.exists(meta_path(path)):
        with open(meta_path(path), "r") as read_file:
            meta = json.load(read_file)
        n_speakers = meta.get("n_speakers")
        n_emotions = meta.get("n_emotions")

    return Dataset(
        frame["id"].tolist(),
        frame["speaker"].astype(np.int64).to_numpy(),
        frame["emotion"].astype(np.int64).to_numpy(),
        features,
        n_speakers=n_speakers,
        n_emotions=n_emotions,
    )
