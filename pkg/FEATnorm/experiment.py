#!/usr/bin/env python


__version__ = "0.2.0"

__revision__ = "20261017"


import copy
import json
import os
import time
from datetime import datetime, timezone

import pandas as pd

from FEATnorm.adv_trainer import (
    BASELINE,
    SNP,
    STRATEGIES,
    TAP,
    TrainConfig,
    load_assembly,
    predict,
    save_assembly,
    train,
)
from FEATnorm.data_synth import SynthSpec, generate, load_csv, meta_path, save_csv
from FEATnorm.eval_harness import (
    MODES,
    ModelSpec,
    auc,
    cross_validate,
    derive_seed,
    low_resource_curve,
    make_splits,
    probe_speaker_id,
    weighted_accuracy,
)
from FEATnorm.nn_core import ACTIVATIONS, gradient_check, init_mlp
from FEATnorm.utils import (
    ValidationError,
    close_logger,
    dump_json,
    get_logger,
    n_workers,
    rng,
    write_atomic,
)


MANIFEST = "manifest.json"
LOGFILE = "featnorm.log"
SEED_VARIABLE = "FEATNORM_SEED"


def default_configfile():
    return os.path.join(os.path.dirname(__file__), "config.json")


def parse_override(text):

    """
    Parses one ``section.key=value`` override (leading dashes are ignored).
    The value is read as JSON when possible and kept as a string otherwise.

    Returns:
        section : :obj:`str`

        key : :obj:`str`

        value
    """

    name, sep, value = text.lstrip("-").partition("=")
    section, dot, key = name.partition(".")
    if not sep or not dot or not section or not key:
        raise ValidationError("override '" + text + "' is not of the form --section.key=value")
    try:
        value = json.loads(value)
    except ValueError:
        pass
    return section, key, value


class ExperimentConfig:

    """
    Configuration of one ``featnorm`` run.

    The defaults live in the :obj:`json` file shipped with the package. A user
    file only has to list the keys it changes; unknown sections or keys are
    rejected.

    Kwargs:
        configfile : :obj:`str` (optional, default: :obj:`None`)
            :obj:`json` config file, :obj:`None` runs with the defaults

        overrides : :obj:`list` (optional, default: :obj:`None`)
            ``section.key=value`` strings, applied after the file

        out : :obj:`str` (optional, default: :obj:`None`)
            output directory, replaces ``global.out``

        n_jobs : :obj:`int` (optional, default: :obj:`None`)
            worker processes, replaces ``global.n_jobs``

        environ : :obj:`dict` (optional, default: :obj:`os.environ`)
            ``FEATNORM_SEED`` replaces ``global.seed``
    """

    def __init__(self, configfile=None, overrides=None, out=None, n_jobs=None, environ=None):

        with open(default_configfile(), "r") as read_file:
            self.config = json.load(read_file)

        if configfile is not None:
            with open(configfile, "r") as read_file:
                try:
                    user = json.load(read_file)
                except ValueError as err:
                    raise ValidationError("config file " + configfile + " is not valid JSON: " + str(err))
            if not isinstance(user, dict):
                raise ValidationError("config file " + configfile + " must hold a JSON object")
            for section, values in user.items():
                if not isinstance(values, dict):
                    raise ValidationError("config section '" + section + "' must be an object")
                for key, value in values.items():
                    self._set(section, key, value)

        for text in overrides or []:
            self._set(*parse_override(text))
        if out is not None:
            self._set("global", "out", out)
        if n_jobs is not None:
            self._set("global", "n_jobs", n_jobs)

        environ = os.environ if environ is None else environ
        if environ.get(SEED_VARIABLE, "") != "":
            try:
                self._set("global", "seed", int(environ[SEED_VARIABLE]))
            except ValueError:
                raise ValidationError(SEED_VARIABLE + " must be an integer, got '" + environ[SEED_VARIABLE] + "'")

        self.seed = self.config["global"]["seed"]
        self.out = self.config["global"]["out"]
        self.loglevel = self.config["global"]["loglevel"]
        self.n_jobs = self.config["global"]["n_jobs"]

        self.source = self.config["data"]["source"]
        self.csv = self.config["data"]["csv"]
        self.speaker_csv = self.config["data"]["speaker_csv"]

        self.strategy = self.config["model"]["strategy"]
        self.upstream_dims = self.config["model"]["upstream_dims"]
        self.upstream_activation = self.config["model"]["upstream_activation"]
        self.projector_activation = self.config["model"]["projector_activation"]

        self.fold = self.config["train"]["fold"]

        self.mode = self.config["eval"]["mode"]
        self.k_folds = self.config["eval"]["k_folds"]
        self.validation_fraction = self.config["eval"]["validation_fraction"]
        self.ratios = self.config["eval"]["ratios"]
        self.sizes = self.config["eval"]["sizes"]
        self.repeats = self.config["eval"]["repeats"]
        self.strategies = self.config["eval"]["strategies"]

        self.lambdas = self.config["sweep"]["lambdas"]
        self.gradcheck = self.config["gradcheck"]

        self.validate()

    def _set(self, section, key, value):
        if section not in self.config:
            raise ValidationError("unknown config section '" + str(section) + "'")
        if key not in self.config[section]:
            raise ValidationError("unknown config key '" + str(section) + "." + str(key) + "'")
        self.config[section][key] = value

    def validate(self):

        """
        Checks the whole configuration before any computation starts.
        """

        if not isinstance(self.seed, int) or isinstance(self.seed, bool):
            raise ValidationError("global.seed must be an integer")
        if self.loglevel not in ("INFO", "DEBUG"):
            raise ValidationError("global.loglevel must be INFO or DEBUG")
        if not isinstance(self.out, str) or self.out == "":
            raise ValidationError("global.out must be a directory name")
        n_workers(self.n_jobs)

        if self.source == "synth":
            if self.csv is not None:
                raise ValidationError("data.csv is set but data.source is synth: give exactly one emotion data source")
        elif self.source == "csv":
            if not self.csv:
                raise ValidationError("data.source is csv but data.csv is not set")
            if not os.path.isfile(self.csv):
                raise ValidationError("data.csv: no such file " + str(self.csv))
        else:
            raise ValidationError("data.source must be synth or csv, got '" + str(self.source) + "'")
        if self.speaker_csv is not None and not os.path.isfile(self.speaker_csv):
            raise ValidationError("data.speaker_csv: no such file " + str(self.speaker_csv))

        if self.strategy not in STRATEGIES:
            raise ValidationError("model.strategy must be one of " + ", ".join(STRATEGIES))
        if self.upstream_activation not in ACTIVATIONS:
            raise ValidationError("model.upstream_activation must be one of " + ", ".join(ACTIVATIONS))
        if self.projector_activation not in ACTIVATIONS:
            raise ValidationError("model.projector_activation must be one of " + ", ".join(ACTIVATIONS))
        if self.strategy == SNP and self.projector_activation == "identity":
            raise ValidationError("SNP needs a non-linear projector, model.projector_activation is identity")
        if not isinstance(self.upstream_dims, list) or len(self.upstream_dims) == 0:
            raise ValidationError("model.upstream_dims must be a non-empty list")

        if self.mode not in MODES:
            raise ValidationError("eval.mode must be one of " + ", ".join(MODES))
        for strategy in self.strategies:
            if strategy not in STRATEGIES:
                raise ValidationError("eval.strategies: unknown strategy '" + str(strategy) + "'")
            if strategy == SNP and self.projector_activation == "identity":
                raise ValidationError("eval.strategies lists SNP, which needs a non-linear projector")
        if not isinstance(self.lambdas, list) or len(self.lambdas) == 0:
            raise ValidationError("sweep.lambdas must be a non-empty list")

        try:
            if self.source == "synth":
                self.synth_spec().validate()
            self.model_spec()
            self.train_config()
            self.probe_config()
            for lam in self.lambdas:
                self.train_config(lam=lam)
            int(self.fold)
            int(self.k_folds)
            int(self.repeats)
            [int(s) for s in self.sizes]
            float(self.validation_fraction)
            [float(r) for r in self.ratios]
            [float(self.gradcheck[k]) for k in ("n_models", "max_params", "batch_size", "step", "rtol", "atol")]
        except ValidationError:
            raise
        except (TypeError, ValueError) as err:
            raise ValidationError("invalid config value: " + str(err))
        return self

    def synth_spec(self):
        data = self.config["data"]
        return SynthSpec(
            n_speakers=data["n_speakers"],
            n_emotions=data["n_emotions"],
            feature_dim=data["feature_dim"],
            speaker_scale=data["speaker_scale"],
            emotion_scale=data["emotion_scale"],
            noise_std=data["noise_std"],
            bias_rho=data["bias_rho"],
            samples_per_speaker=data["samples_per_speaker"],
            seed=self.seed,
            preference_seed=data["preference_seed"],
        )

    def model_spec(self):
        return ModelSpec(self.upstream_dims, self.upstream_activation, self.projector_activation)

    def train_config(self, **kwargs):
        train_section = self.config["train"]
        values = {
            "eta": train_section["eta"],
            "lam": train_section["lambda"],
            "strategy": self.strategy,
            "epochs": train_section["epochs"],
            "batch_size": train_section["batch_size"],
            "speaker_steps_per_emotion_step": train_section["speaker_steps_per_emotion_step"],
            "seed": self.seed,
        }
        values.update(kwargs)
        return TrainConfig(**values)

    def probe_config(self):
        probe = self.config["probe"]
        return TrainConfig(
            eta=probe["eta"],
            lam=0.0,
            strategy=BASELINE,
            epochs=probe["epochs"],
            batch_size=probe["batch_size"],
            seed=derive_seed(self.seed, "probe"),
        )

    def jobs(self):
        return n_workers(self.n_jobs, self.loglevel)

    def to_dict(self):
        return copy.deepcopy(self.config)


class RunManifest:

    """
    Record of one command run: config echo, tool version, timestamp, output
    artifacts (relative to the output directory), results and completion
    status. It is only written once the run has finished.

    Set ``SOURCE_DATE_EPOCH`` to pin the timestamp for byte-identical reruns.
    """

    def __init__(self, command, config):
        self.command = command
        self.out = config.out
        self.config = config.to_dict()
        self.artifacts = {}
        self.results = {}
        self.status = "running"

    @property
    def path(self):
        return os.path.join(self.out, MANIFEST)

    def add(self, key, path):
        self.artifacts[key] = os.path.relpath(path, self.out).replace(os.sep, "/")
        return path

    def timestamp(self):
        epoch = os.environ.get("SOURCE_DATE_EPOCH", "")
        if epoch != "":
            moment = datetime.fromtimestamp(int(epoch), tz=timezone.utc)
        else:
            moment = datetime.now(timezone.utc)
        return moment.strftime("%Y-%m-%dT%H:%M:%SZ")

    def to_dict(self):
        return {
            "command": self.command,
            "version": __version__,
            "timestamp": self.timestamp(),
            "config": self.config,
            "artifacts": dict(sorted(self.artifacts.items())),
            "results": self.results,
            "status": self.status,
        }

    def write(self, status="complete"):
        self.status = status
        dump_json(self.path, self.to_dict())
        return self.path


def write_frame(path, frame):
    write_atomic(path, frame.to_csv(index=False, float_format="%.17g", lineterminator="\n"))
    return path


def open_run(config, command):

    """
    Creates the output directory, drops a manifest left by an earlier run and
    attaches the run log ``featnorm.log`` to the package logger.

    Returns:
        logger : :class:`logging.Logger`

        manifest : :class:`RunManifest`
    """

    os.makedirs(config.out, exist_ok=True)
    manifest = RunManifest(command, config)
    if os.path.exists(manifest.path):
        os.remove(manifest.path)

    logger = get_logger("FEATnorm", config.loglevel, logfile=os.path.join(config.out, LOGFILE))
    logger.info("FEATnorm " + __version__ + " (" + __revision__ + "): " + command + ", seed " + str(config.seed))
    return logger, manifest


def finish_run(logger, manifest, start_time, status="complete"):
    manifest.write(status)
    logger.info("Run " + status + ", manifest: " + manifest.path)
    logger.info("Elapsed time: " + time.strftime("%H:%M:%S", time.gmtime(time.time() - start_time)))
    close_logger(logger)
    return manifest


def load_datasets(config):

    """
    Resolves the emotion dataset (generated or read from ``data.csv``) and
    the optional separate speaker dataset.

    Returns:
        dataset : :class:`data_synth.Dataset`

        speaker_data : :class:`data_synth.Dataset` or :obj:`None`
    """

    if config.source == "csv":
        dataset = load_csv(config.csv)
    else:
        dataset = generate(config.synth_spec())
    speaker_data = None
    if config.speaker_csv is not None:
        speaker_data = load_csv(config.speaker_csv)
        if speaker_data.feature_dim != dataset.feature_dim:
            raise ValidationError(
                "speaker dataset has " + str(speaker_data.feature_dim) + " features, emotion dataset "
                + str(dataset.feature_dim)
            )
    return dataset, speaker_data


def cmd_gen_data(config):

    """
    Generates the synthetic benchmark and writes ``dataset.csv`` with its
    ``dataset.meta`` sidecar.
    """

    if config.source != "synth":
        raise ValidationError("gen-data needs data.source = synth")
    spec = config.synth_spec().validate()
    start_time = time.time()
    logger, manifest = open_run(config, "gen-data")
    try:
        dataset = generate(spec)
        path = os.path.join(config.out, "dataset.csv")
        save_csv(dataset, path, spec=spec)
        manifest.add("dataset", path)
        manifest.add("dataset_meta", meta_path(path))
        manifest.results = {"n_records": len(dataset), "feature_dim": int(dataset.feature_dim)}
        logger.info(
            "Wrote " + str(len(dataset)) + " records of " + str(spec.n_speakers) + " speakers to " + path
        )
    except BaseException:
        close_logger(logger)
        raise
    return finish_run(logger, manifest, start_time)


def cmd_train(config):

    """
    Trains one model on fold ``train.fold`` of the configured protocol and
    writes the training report, the best-epoch and the final snapshot.
    """

    dataset, speaker_data = load_datasets(config)
    train_config = config.train_config()
    splits = make_splits(
        dataset,
        config.mode,
        derive_seed(config.seed, "split"),
        config.k_folds,
        config.validation_fraction,
        config.ratios,
    )
    if not 0 <= int(config.fold) < len(splits):
        raise ValidationError("train.fold must be in [0, " + str(len(splits)) + ")")
    split = splits[int(config.fold)]

    start_time = time.time()
    logger, manifest = open_run(config, "train")
    try:
        n_speakers = speaker_data.n_speakers if speaker_data is not None else dataset.n_speakers
        model = config.model_spec().build(
            dataset.feature_dim,
            dataset.n_emotions,
            n_speakers,
            train_config.strategy,
            derive_seed(config.seed, "fold-model", split.fold_index),
        )
        report = train(
            model,
            dataset,
            split,
            speaker_data,
            train_config.replace(seed=derive_seed(config.seed, "fold-train", split.fold_index)),
            logger=logger,
        )

        best_path = manifest.add("best_model", os.path.join(config.out, "best_model.txt"))
        final_path = manifest.add("final_model", os.path.join(config.out, "final_model.txt"))
        save_assembly(report.best_model, best_path)
        save_assembly(model, final_path)

        test = dataset.subset(split.test)
        test_wa = weighted_accuracy(predict(report.best_model, test.features), test.emotions)
        logger.info("Test WA of the best epoch: " + str("{:.4f}".format(test_wa.value)))

        body = report.to_dict({"best": manifest.artifacts["best_model"], "final": manifest.artifacts["final_model"]})
        body["split"] = split.to_dict()
        body["test_wa"] = test_wa.to_dict()
        dump_json(manifest.add("report", os.path.join(config.out, "train_report.json")), body)
        manifest.results = {
            "best_epoch": report.best_epoch,
            "test_wa": test_wa.value,
            "emotion_steps": report.emotion_steps,
            "speaker_steps": report.speaker_steps,
        }
    except BaseException:
        close_logger(logger)
        raise
    return finish_run(logger, manifest, start_time)


def _cv_frame(result):
    return pd.DataFrame(
        {"fold": [s.fold_index for s in result.folds], "wa": [m.value for m in result.metrics]}
    )


def cmd_eval(config):

    """
    Cross-validation of the configured strategy; writes ``cv.csv``
    (``fold,wa``) and ``cv.json``.
    """

    dataset, speaker_data = load_datasets(config)
    start_time = time.time()
    logger, manifest = open_run(config, "eval")
    try:
        result = cross_validate(
            dataset,
            config.train_config(),
            mode=config.mode,
            model_spec=config.model_spec(),
            speaker_data=speaker_data,
            k_folds=config.k_folds,
            validation_fraction=config.validation_fraction,
            ratios=config.ratios,
            n_jobs=config.jobs(),
            label=config.strategy,
            logger=logger,
        )
        write_frame(manifest.add("cv_csv", os.path.join(config.out, "cv.csv")), _cv_frame(result))
        dump_json(manifest.add("cv_json", os.path.join(config.out, "cv.json")), result.to_dict())
        manifest.results = {"mode": result.mode, "mean_wa": result.mean, "std_wa": result.std}
    except BaseException:
        close_logger(logger)
        raise
    return finish_run(logger, manifest, start_time)


def cmd_probe(config, snapshot_paths):

    """
    Speaker probe of every snapshot: a fresh speaker head is trained on the
    frozen upstream (and projector) of each snapshot. All snapshots are
    loaded and checked before anything is written. Writes ``probe.csv``
    (``snapshot,probe_accuracy,support``) and ``probe.json``.
    """

    if len(snapshot_paths) == 0:
        raise ValidationError("probe needs at least one snapshot file")
    dataset, speaker_data = load_datasets(config)
    probe_data = speaker_data if speaker_data is not None else dataset

    snapshots = []
    for path in snapshot_paths:
        try:
            model = load_assembly(path)
        except ValidationError as err:
            raise ValidationError("snapshot " + path + ": " + str(err))
        if model.input_dim != probe_data.feature_dim:
            raise ValidationError(
                "snapshot " + path + " expects " + str(model.input_dim) + " features, the probe dataset has "
                + str(probe_data.feature_dim)
            )
        snapshots.append(model)

    probe_config = config.probe_config()
    start_time = time.time()
    logger, manifest = open_run(config, "probe")
    try:
        rows = []
        for path, model in zip(snapshot_paths, snapshots):
            metric = probe_speaker_id(model.upstream, probe_data, probe_config, projector=model.projector, logger=logger)
            rows.append({"snapshot": path, "probe_accuracy": metric.value, "support": metric.support})
            logger.info("Probe " + path + ": " + str("{:.4f}".format(metric.value)))
        frame = pd.DataFrame(rows, columns=["snapshot", "probe_accuracy", "support"])
        write_frame(manifest.add("probe_csv", os.path.join(config.out, "probe.csv")), frame)
        dump_json(
            manifest.add("probe_json", os.path.join(config.out, "probe.json")),
            {"probe": probe_config.to_dict(), "snapshots": rows},
        )
        manifest.results = {"probe_accuracy": {r["snapshot"]: r["probe_accuracy"] for r in rows}}
    except BaseException:
        close_logger(logger)
        raise
    return finish_run(logger, manifest, start_time)


def curve_frame(curve):
    rows = []
    for point in curve.points:
        for seed, accuracy in zip(point.seeds, point.accuracies):
            rows.append({"size": point.n_per_class, "seed": seed, "accuracy": accuracy})
    return pd.DataFrame(rows, columns=["size", "seed", "accuracy"])


def curve_auc_from_csv(path):

    """
    Recomputes the AUC of a curve CSV written by :func:`cmd_lowres` from the
    per-seed accuracies.
    """

    frame = pd.read_csv(path, float_precision="round_trip")
    means = frame.groupby("size", sort=True)["accuracy"].mean()
    if len(means) == 1:
        return float(means.iloc[0])
    return auc(list(zip(means.index.astype(float), means.to_numpy())))


def cmd_lowres(config):

    """
    Low-resource learning curve of every strategy in ``eval.strategies``.
    Writes ``lowres_<STRATEGY>.csv`` (``size,seed,accuracy``) per
    strategy and ``lowres.json`` with the mean curves and their AUC.
    """

    dataset, _ = load_datasets(config)
    start_time = time.time()
    logger, manifest = open_run(config, "lowres")
    try:
        curves = {}
        for strategy in config.strategies:
            curve = low_resource_curve(
                dataset,
                sizes=config.sizes,
                repeats=config.repeats,
                config=config.train_config(strategy=strategy),
                model_spec=config.model_spec(),
                k_folds=config.k_folds,
                validation_fraction=config.validation_fraction,
                n_jobs=config.jobs(),
                label=strategy,
                logger=logger,
            )
            write_frame(manifest.add("lowres_" + strategy, os.path.join(config.out, "lowres_" + strategy + ".csv")), curve_frame(curve))
            curves[strategy] = curve.to_dict()
        dump_json(
            manifest.add("lowres_json", os.path.join(config.out, "lowres.json")),
            {"repeats": int(config.repeats), "sizes": [int(s) for s in config.sizes], "curves": curves},
        )
        manifest.results = {"repeats": int(config.repeats), "auc": {s: c["auc"] for s, c in curves.items()}}
    except BaseException:
        close_logger(logger)
        raise
    return finish_run(logger, manifest, start_time)


def random_instance(seed, index, max_params, batch_size):

    """
    Random gradient-check instance: 1 to 3 dense layers of width 2 to 32 with
    tanh hidden units and identity logits, a normal input batch and uniform
    labels.

    Returns:
        net : :class:`nn_core.Mlp`

        inputs : :func:`numpy.array`

        labels : :func:`numpy.array`
    """

    gen = rng(seed, "gradcheck", index)
    while True:
        depth = int(gen.integers(1, 4))
        dims = [int(d) for d in gen.integers(2, 33, size=depth + 1)]
        n_params = sum(a * b + b for a, b in zip(dims[:-1], dims[1:]))
        if n_params <= max_params:
            break
    activations = ["tanh"] * (depth - 1) + ["identity"]
    net = init_mlp(dims, activations, derive_seed(seed, "gradcheck-init", index), tag="gradcheck")
    inputs = gen.normal(size=(batch_size, dims[0]))
    labels = gen.integers(0, dims[-1], size=batch_size)
    return net, inputs, labels


def cmd_gradcheck(config, corrupt=None):

    """
    Checks :func:`nn_core.backward` against central finite differences on
    ``gradcheck.n_models`` random instances and writes ``gradcheck.json``.
    The manifest status is ``failed`` when any instance exceeds the
    tolerance.

    Kwargs:
        corrupt : :obj:`float` (optional, default: :obj:`None`)
            test hook, offset added to an analytic gradient entry
    """

    settings = config.gradcheck
    n_models = int(settings["n_models"])
    if n_models < 1:
        raise ValidationError("gradcheck.n_models must be >= 1")
    if int(settings["max_params"]) < 6:
        raise ValidationError("gradcheck.max_params is too small for a 2 -> 2 layer")

    start_time = time.time()
    logger, manifest = open_run(config, "gradcheck")
    try:
        instances = []
        for i in range(n_models):
            net, inputs, labels = random_instance(config.seed, i, int(settings["max_params"]), int(settings["batch_size"]))
            result = gradient_check(
                net,
                inputs,
                labels,
                step=float(settings["step"]),
                rtol=float(settings["rtol"]),
                atol=float(settings["atol"]),
                corrupt=corrupt,
            )
            entry = result.to_dict()
            entry["dims"] = [net.in_dim] + [layer.out_dim for layer in net.layers]
            instances.append(entry)
            logger.debug(
                "Instance " + str(i) + " " + str(entry["dims"]) + ": max scaled error "
                + str("{:.3e}".format(result.max_error))
            )

        worst = max(range(n_models), key=lambda i: instances[i]["max_error"])
        passed = all(entry["passed"] for entry in instances)
        summary = {
            "passed": passed,
            "n_models": n_models,
            "rtol": float(settings["rtol"]),
            "max_error": instances[worst]["max_error"],
            "worst_instance": worst,
            "worst_parameter": instances[worst]["worst"],
        }
        dump_json(
            manifest.add("gradcheck", os.path.join(config.out, "gradcheck.json")),
            {"summary": summary, "instances": instances},
        )
        manifest.results = summary
        if passed:
            logger.info("Gradient check passed, max scaled error " + str("{:.3e}".format(summary["max_error"])))
        else:
            logger.error(
                "Gradient check failed: instance " + str(worst) + ", layer "
                + str(summary["worst_parameter"]["layer"]) + " " + summary["worst_parameter"]["kind"]
                + " " + str(summary["worst_parameter"]["index"]) + ", scaled error "
                + str("{:.3e}".format(summary["max_error"]))
            )
    except BaseException:
        close_logger(logger)
        raise
    return finish_run(logger, manifest, start_time, status="complete" if passed else "failed")


def cmd_sweep(config):

    """
    Cross-validates the configured strategy for every ``sweep.lambdas``
    value plus a BASELINE reference. Writes ``sweep.csv``
    (``lambda,mean_wa,std_wa``) and ``sweep.json``; the best lambda has the
    highest mean WA, the smallest one on ties.
    """

    if config.strategy == BASELINE:
        raise ValidationError("a lambda sweep needs model.strategy SNP or TAP")
    dataset, speaker_data = load_datasets(config)
    lambdas = sorted(float(lam) for lam in config.lambdas)

    start_time = time.time()
    logger, manifest = open_run(config, "sweep")
    try:
        kwargs = {
            "mode": config.mode,
            "model_spec": config.model_spec(),
            "speaker_data": speaker_data,
            "k_folds": config.k_folds,
            "validation_fraction": config.validation_fraction,
            "ratios": config.ratios,
            "n_jobs": config.jobs(),
            "logger": logger,
        }
        baseline = cross_validate(dataset, config.train_config(strategy=BASELINE), label=BASELINE, **kwargs)
        rows = []
        runs = {}
        for lam in lambdas:
            logger.info("lambda=" + str(lam))
            result = cross_validate(dataset, config.train_config(lam=lam), label=config.strategy, **kwargs)
            rows.append({"lambda": lam, "mean_wa": result.mean, "std_wa": result.std})
            runs[repr(lam)] = result.to_dict()

        best = rows[0]
        for row in rows[1:]:
            if row["mean_wa"] > best["mean_wa"]:
                best = row
        logger.info(
            "Best lambda=" + str(best["lambda"]) + " with WA=" + str("{:.4f}".format(best["mean_wa"]))
            + " (BASELINE " + str("{:.4f}".format(baseline.mean)) + ")"
        )

        frame = pd.DataFrame(rows, columns=["lambda", "mean_wa", "std_wa"])
        write_frame(manifest.add("sweep_csv", os.path.join(config.out, "sweep.csv")), frame)
        dump_json(
            manifest.add("sweep_json", os.path.join(config.out, "sweep.json")),
            {
                "strategy": config.strategy,
                "best_lambda": best["lambda"],
                "baseline": baseline.to_dict(),
                "runs": runs,
            },
        )
        manifest.results = {"best_lambda": best["lambda"], "best_mean_wa": best["mean_wa"], "baseline_mean_wa": baseline.mean}
    except BaseException:
        close_logger(logger)
        raise
    return finish_run(logger, manifest, start_time)


def cmd_compare(config):

    """
    Cross-validates BASELINE, SNP and TAP with the same seed and data. Writes
    ``compare.csv`` (``strategy,fold,wa``) and ``compare.json`` with the
    per-strategy mean and standard deviation.
    """

    if config.projector_activation == "identity":
        raise ValidationError("compare runs SNP, which needs a non-linear projector; model.projector_activation is identity")
    dataset, speaker_data = load_datasets(config)
    start_time = time.time()
    logger, manifest = open_run(config, "compare")
    try:
        frames = []
        summary = {}
        for strategy in (BASELINE, SNP, TAP):
            result = cross_validate(
                dataset,
                config.train_config(strategy=strategy),
                mode=config.mode,
                model_spec=config.model_spec(),
                speaker_data=speaker_data,
                k_folds=config.k_folds,
                validation_fraction=config.validation_fraction,
                ratios=config.ratios,
                n_jobs=config.jobs(),
                label=strategy,
                logger=logger,
            )
            frame = _cv_frame(result)
            frame.insert(0, "strategy", strategy)
            frames.append(frame)
            summary[strategy] = {"mean_wa": result.mean, "std_wa": result.std, "folds": result.to_dict()["folds"]}
            logger.info(
                strategy + ": WA=" + str("{:.4f}".format(result.mean)) + " +- " + str("{:.4f}".format(result.std))
            )

        write_frame(manifest.add("compare_csv", os.path.join(config.out, "compare.csv")), pd.concat(frames, ignore_index=True))
        dump_json(manifest.add("compare_json", os.path.join(config.out, "compare.json")), summary)
        manifest.results = {s: {"mean_wa": v["mean_wa"], "std_wa": v["std_wa"]} for s, v in summary.items()}
    except BaseException:
        close_logger(logger)
        raise
    return finish_run(logger, manifest, start_time)


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "probe": cmd_probe,
    "lowres": cmd_lowres,
    "gradcheck": cmd_gradcheck,
    "sweep": cmd_sweep,
    "compare": cmd_compare,
}
