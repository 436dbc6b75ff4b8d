from FEATnorm.adv_trainer import BASELINE, SNP, TAP, TrainConfig
from FEATnorm.data_synth import SynthSpec, generate, save_csv
from FEATnorm.eval_harness import ModelSpec, cross_validate, low_resource_curve, probe_speaker_id
from FEATnorm.utils import get_logger

logger = get_logger('featnorm_example', loglevel='INFO', logfile='featnorm_example.log')

spec = SynthSpec(n_speakers=10, n_emotions=4, feature_dim=32, bias_rho=0.9, seed=0)
data = generate(spec)
save_csv(data, 'dataset.csv', spec=spec)

model_spec = ModelSpec(upstream_dims=(64, 32))

results = {}
for strategy in [BASELINE, SNP, TAP]:
    config = TrainConfig(eta=0.05, lam=0.001, strategy=strategy, epochs=50, batch_size=32, seed=0)
    results[strategy] = cross_validate(data, config, model_spec=model_spec, n_jobs=-1, label=strategy, logger=logger)
    logger.info(strategy + ': WA = ' + str(round(results[strategy].mean, 3)) + ' +- ' + str(round(results[strategy].std, 3)))

probe_config = TrainConfig(eta=0.05, strategy=BASELINE, epochs=50, batch_size=32, seed=1)
for strategy in [BASELINE, TAP]:
    model = results[strategy].reports[0].best_model
    probe = probe_speaker_id(model.upstream, data, probe_config, projector=model.projector, logger=logger)
    logger.info(strategy + ': speaker probe accuracy = ' + str(round(probe.value, 3)))

config = TrainConfig(eta=0.05, lam=0.001, strategy=TAP, epochs=50, batch_size=32, seed=0)
curve = low_resource_curve(data, sizes=[4, 8, 16, 32, 64, 128], repeats=5, config=config,
                           model_spec=model_spec, n_jobs=-1, label=TAP, logger=logger)
logger.info('TAP low-resource AUC = ' + str(round(curve.auc, 3)))
