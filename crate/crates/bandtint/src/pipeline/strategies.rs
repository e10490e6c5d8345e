//! The series-combination strategies for the frequency pipeline and the
//! cast corrector, the partition sweep, and the training orchestrators they
//! share.
//!
//! Strategy 1 reuses the cast weights learned on baseline-stub outputs,
//! unchanged. Strategy 2 retrains a cast corrector on the frozen pipeline's
//! outputs. Strategy 3 trains the artifact remover and the corrector
//! jointly through the composed system; the band stubs stay frozen unless
//! explicitly included.

use std::time::Instant;

use super::freq::{band_training_pairs, CastStage, FreqPipeline, ModelSizes};
use super::{
    evaluate, means_tensor, train_cast, train_stub, train_unet, System, TrainConfig, TrainResult,
};
use crate::imaging::{to_gray, PlanarImage};
use crate::models::{ModelParams, StubConfig, StubModel, UNetModel};
use crate::objectives::{ChannelRow, LossConfig, MetricsReport};
use crate::regions::SchemeKind;
use crate::spectral::BandSpec;
use crate::tensor::{Graph, OptimState};
use crate::{Error, Result};

type Task<T> = Box<dyn FnOnce() -> Result<T> + Send>;

/// Train the full-image baseline colorizer on (gray(target), target) pairs.
pub fn train_baseline_stub(
    corpus: &[(PlanarImage, PlanarImage)],
    sizes: &ModelSizes,
    cfg: &TrainConfig,
) -> Result<(StubModel<f32>, TrainResult)> {
    let pairs: Vec<(PlanarImage, PlanarImage)> = corpus
        .iter()
        .map(|(t, _)| Ok((to_gray(t)?, t.clone())))
        .collect::<Result<_>>()?;
    let mut model = StubModel::init(
        StubConfig { signed_output: false, ..sizes.stub },
        cfg.seed.wrapping_add(0x10),
    );
    let result = train_stub(&mut model, &pairs, cfg)?;
    Ok((model, result))
}

/// Two-phase frequency pipeline training: each band stub learns its
/// gray-band to color-band mapping, then the artifact remover learns to
/// correct the recombined prediction toward the target.
pub fn train_freq_pipeline(
    corpus: &[(PlanarImage, PlanarImage)],
    spec: BandSpec,
    sizes: &ModelSizes,
    cfg: &TrainConfig,
    unet_loss: &TrainConfig,
) -> Result<(FreqPipeline, Vec<TrainResult>)> {
    let targets: Vec<&PlanarImage> = corpus.iter().map(|(t, _)| t).collect();
    let band_pairs = band_training_pairs(&targets, &spec)?;
    let mut fp = FreqPipeline::init(spec, sizes.stub, sizes.unet, cfg.seed)?;
    let mut results = Vec::with_capacity(4);
    for (i, pairs) in band_pairs.iter().enumerate() {
        let band_cfg = TrainConfig { seed: cfg.seed.wrapping_add(i as u64), ..*cfg };
        results.push(train_stub(&mut fp.stubs[i], pairs, &band_cfg)?);
    }
    // phase two: the remover trains on the frozen stubs' combined outputs
    let unet_pairs: Vec<(PlanarImage, PlanarImage)> = corpus
        .iter()
        .map(|(t, _)| Ok((fp.pre_unet(&to_gray(t)?)?, t.clone())))
        .collect::<Result<_>>()?;
    results.push(train_unet(&mut fp.unet, &unet_pairs, unet_loss)?);
    Ok((fp, results))
}

/// Train a cast stage on (input, ground-truth means, target) triples derived
/// from explicit input images.
pub fn train_cast_stage(
    inputs_and_targets: &[(PlanarImage, PlanarImage)],
    kind: SchemeKind,
    cfg: &TrainConfig,
) -> Result<(CastStage, TrainResult)> {
    let mut stage = CastStage::init(kind, cfg.seed.wrapping_add(0x20));
    let triples = inputs_and_targets
        .iter()
        .map(|(input, target)| Ok((input.clone(), stage.means_for(target)?, target.clone())))
        .collect::<Result<Vec<_>>>()?;
    let result = train_cast(&mut stage.model, &triples, cfg)?;
    Ok((stage, result))
}

/// Strategy 2: a fresh corrector learns on the frozen pipeline's outputs.
/// The pipeline is only read, so its parameters cannot change.
pub fn strategy2_retrain(
    fp: &FreqPipeline,
    corpus: &[(PlanarImage, PlanarImage)],
    kind: SchemeKind,
    cfg: &TrainConfig,
) -> Result<(CastStage, TrainResult)> {
    let pairs: Vec<(PlanarImage, PlanarImage)> = corpus
        .iter()
        .map(|(t, _)| Ok((fp.colorize(&to_gray(t)?)?, t.clone())))
        .collect::<Result<_>>()?;
    train_cast_stage(&pairs, kind, cfg)
}

/// Strategy 3: joint gradient flow through corrector-after-remover. A fresh
/// remover and corrector train together on the composed objective; band
/// stubs are frozen by default and join the gradient when `train_stubs`.
pub fn strategy3_joint(
    fp: &FreqPipeline,
    corpus: &[(PlanarImage, PlanarImage)],
    kind: SchemeKind,
    cfg: &TrainConfig,
    train_stubs: bool,
) -> Result<(FreqPipeline, CastStage, TrainResult)> {
    cfg.check()?;
    if corpus.is_empty() {
        return Err(Error::Pipeline("training corpus is empty".into()));
    }
    let start = Instant::now();
    let loss_cfg = cfg.loss.config()?;
    let mut joint = FreqPipeline {
        spec: fp.spec,
        stubs: fp.stubs.clone(),
        unet: UNetModel::init(fp.unet.cfg, cfg.seed.wrapping_add(0x30))?,
    };
    let mut stage = CastStage::init(kind, cfg.seed.wrapping_add(0x31));

    // per-sample constants: band inputs (stub-trainable mode) or the frozen
    // stubs' combined outputs, plus conditioning means and targets
    let mut band_inputs = Vec::new();
    let mut pre_unet = Vec::new();
    for (target, _) in corpus {
        let gray = to_gray(target)?;
        if train_stubs {
            let bands = joint.band_inputs(&gray)?;
            band_inputs.push([
                bands[0].to_tensor::<f32>(),
                bands[1].to_tensor::<f32>(),
                bands[2].to_tensor::<f32>(),
            ]);
        } else {
            pre_unet.push(joint.pre_unet(&gray)?.to_tensor::<f32>());
        }
    }
    let means: Vec<_> = corpus
        .iter()
        .map(|(t, _)| Ok(means_tensor::<f32>(&stage.means_for(t)?)))
        .collect::<Result<Vec<_>>>()?;
    let targets: Vec<_> = corpus.iter().map(|(t, _)| t.to_tensor::<f32>()).collect();

    let mut param_refs = Vec::new();
    if train_stubs {
        for stub in &joint.stubs {
            param_refs.extend(stub.param_refs());
        }
    }
    param_refs.extend(joint.unet.param_refs());
    param_refs.extend(stage.model.param_refs());
    let mut optim = OptimState::new(cfg.lr, &param_refs);

    let mut curve = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let idx = super::batch_indices(cfg.seed, step, corpus.len(), cfg.batch);
        let step_loss = (|| -> std::result::Result<f64, crate::tensor::TensorError> {
            let mut g = Graph::new();
            let stub_ids: Vec<Vec<_>> =
                joint.stubs.iter().map(|s| s.bind(&mut g, train_stubs)).collect();
            let unet_ids = joint.unet.bind(&mut g, true);
            let cast_ids = stage.model.bind(&mut g, true);
            let mut total = None;
            for &i in &idx {
                let combined = if train_stubs {
                    let mut acc = None;
                    for b in 0..3 {
                        let x = g.leaf_detached(&band_inputs[i][b]);
                        let y = joint.stubs[b].forward_ids(&mut g, &stub_ids[b], x)?;
                        acc = Some(match acc {
                            None => y,
                            Some(prev) => g.add(prev, y)?,
                        });
                    }
                    acc.expect("three bands")
                } else {
                    g.leaf_detached(&pre_unet[i])
                };
                let removed = joint.unet.forward_ids(&mut g, &unet_ids, combined)?;
                let m = g.leaf_detached(&means[i]);
                let corrected = stage.model.forward_ids(&mut g, &cast_ids, removed, m)?;
                let t = g.leaf_detached(&targets[i]);
                let l = super::loss_on_graph(&mut g, corrected, t, &loss_cfg)?;
                total = Some(match total {
                    None => l,
                    Some(acc) => g.add(acc, l)?,
                });
            }
            let loss = g.mul_scalar(total.expect("batch non-empty"), 1.0 / idx.len() as f64)?;
            g.backward(loss)?;
            if train_stubs {
                for (stub, ids) in joint.stubs.iter_mut().zip(&stub_ids) {
                    stub.apply_grads(&g, ids)?;
                }
            }
            joint.unet.apply_grads(&g, &unet_ids)?;
            stage.model.apply_grads(&g, &cast_ids)?;
            Ok(g.scalar_value(loss))
        })()
        .map_err(|e| super::divergence(e, step, &stage.model))?;
        let mut named = Vec::new();
        if train_stubs {
            for (b, stub) in joint.stubs.iter_mut().enumerate() {
                for (name, t) in stub.named_params_mut() {
                    named.push((format!("stub{b}.{name}"), t));
                }
            }
        }
        for (name, t) in joint.unet.named_params_mut() {
            named.push((format!("unet.{name}"), t));
        }
        for (name, t) in stage.model.named_params_mut() {
            named.push((format!("cast.{name}"), t));
        }
        optim.step(&mut named)?;
        curve.push(step_loss);
    }
    Ok((joint, stage, TrainResult { loss_curve: curve, wall_secs: start.elapsed().as_secs_f64() }))
}

#[derive(Debug, Clone)]
pub struct StrategyComparison {
    /// baseline + combination1/2/3, with test reports and training wall
    /// times (strategy 1 trains nothing).
    pub rows: Vec<(String, MetricsReport, f64)>,
}

impl StrategyComparison {
    pub fn table(&self) -> String {
        let rows: Vec<ChannelRow> = self
            .rows
            .iter()
            .map(|(label, r, _)| ChannelRow::from_report(label.clone(), r))
            .collect();
        crate::objectives::format_channel_table("Model", &rows)
    }
}

/// Train everything once, then compose the two networks under all three
/// strategies and evaluate per-channel PSNR on the held-out corpus.
#[allow(clippy::too_many_arguments)]
pub fn compare_strategies(
    train_corpus: &[(PlanarImage, PlanarImage)],
    test_corpus: &[(PlanarImage, PlanarImage)],
    spec: BandSpec,
    sizes: &ModelSizes,
    kind: SchemeKind,
    cfg: &TrainConfig,
    loss_cfg: &LossConfig,
    jobs: usize,
) -> Result<StrategyComparison> {
    let unet_cfg = cfg.with_loss(super::LossKind::Hybrid(loss_cfg.alpha));
    let (baseline, _) = train_baseline_stub(train_corpus, sizes, cfg)?;
    let (fp, _) = train_freq_pipeline(train_corpus, spec, sizes, cfg, &unet_cfg)?;

    // cast weights learned on baseline-stub outputs, later reused verbatim
    let stub_outputs: Vec<(PlanarImage, PlanarImage)> = train_corpus
        .iter()
        .map(|(t, _)| Ok((baseline.forward(&to_gray(t)?)?, t.clone())))
        .collect::<Result<_>>()?;
    let (cast_ddc, _) = train_cast_stage(&stub_outputs, kind, cfg)?;

    // the three strategies are independent given the trained pieces
    let tasks: Vec<Task<(FreqPipeline, CastStage, f64)>> = vec![
        {
            let fp = fp.clone();
            let cast = cast_ddc.clone();
            Box::new(move || Ok((fp, cast, 0.0)))
        },
        {
            let fp = fp.clone();
            let cfg = *cfg;
            let corpus = train_corpus.to_vec();
            Box::new(move || {
                let (stage, result) = strategy2_retrain(&fp, &corpus, kind, &cfg)?;
                Ok((fp, stage, result.wall_secs))
            })
        },
        {
            let fp = fp.clone();
            let cfg = cfg.with_loss(super::LossKind::Hybrid(loss_cfg.alpha));
            let corpus = train_corpus.to_vec();
            Box::new(move || {
                let (joint, stage, result) = strategy3_joint(&fp, &corpus, kind, &cfg, false)?;
                Ok((joint, stage, result.wall_secs))
            })
        },
    ];
    let mut outcomes = run_parallel(jobs, tasks)?;

    let mut rows = Vec::with_capacity(4);
    let base_eval = evaluate(&System::Baseline(&baseline), test_corpus, None, loss_cfg)?;
    rows.push(("baseline".to_string(), base_eval.mean, 0.0));
    for (i, outcome) in outcomes.drain(..).enumerate() {
        let (strategy_fp, stage, wall) = outcome;
        let eval = evaluate(
            &System::FreqCast(&strategy_fp, &stage),
            test_corpus,
            None,
            loss_cfg,
        )?;
        rows.push((format!("combination{}", i + 1), eval.mean, wall));
    }
    Ok(StrategyComparison { rows })
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    /// identity baseline + one row per partition scheme.
    pub rows: Vec<(String, MetricsReport)>,
}

impl SweepOutcome {
    pub fn table(&self) -> String {
        let rows: Vec<ChannelRow> = self
            .rows
            .iter()
            .map(|(label, r)| ChannelRow::from_report(label.clone(), r))
            .collect();
        crate::objectives::format_channel_table("Scheme", &rows)
    }

    /// Rows excluding the baseline: the six partition schemes.
    pub fn scheme_rows(&self) -> &[(String, MetricsReport)] {
        &self.rows[1..]
    }
}

/// Train one cast corrector per partition scheme on the degraded corpus and
/// evaluate each on the held-out corpus.
pub fn sweep_partitions(
    train_corpus: &[(PlanarImage, PlanarImage)],
    test_corpus: &[(PlanarImage, PlanarImage)],
    cfg: &TrainConfig,
    loss_cfg: &LossConfig,
    jobs: usize,
) -> Result<SweepOutcome> {
    let mut rows = Vec::with_capacity(1 + SchemeKind::ALL.len());
    let identity = evaluate(&System::Identity, test_corpus, None, loss_cfg)?;
    rows.push(("baseline".to_string(), identity.mean));

    let tasks: Vec<Task<(String, MetricsReport)>> = SchemeKind::ALL
        .into_iter()
        .map(|kind| {
            let cfg = *cfg;
            let loss_cfg = *loss_cfg;
            let train = train_corpus.to_vec();
            let test = test_corpus.to_vec();
            let task: Task<(String, MetricsReport)> = Box::new(move || {
                    let degraded_pairs: Vec<(PlanarImage, PlanarImage)> =
                        train.iter().map(|(t, d)| (d.clone(), t.clone())).collect();
                    let (stage, _) = train_cast_stage(&degraded_pairs, kind, &cfg)?;
                    let eval = evaluate(&System::CastOnly(&stage), &test, None, &loss_cfg)?;
                    Ok((format!("{kind} ({})", kind.region_count()), eval.mean))
                });
            task
        })
        .collect();
    rows.extend(run_parallel(jobs, tasks)?);
    Ok(SweepOutcome { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{gen_corpus, CorpusSpec};

    #[test]
    fn strategy3_stub_freezing_flag_controls_their_gradients() {
        let corpus = gen_corpus(&CorpusSpec::new(3, 32, 2, 0.1).unwrap());
        let spec = BandSpec::default_for(32, 32);
        let sizes = ModelSizes {
            unet: crate::models::UNetConfig { widths: [2, 4, 8, 16], seb_reduction: 2 },
            ..Default::default()
        };
        let fp = FreqPipeline::init(spec, sizes.stub, sizes.unet, 5).unwrap();
        let cfg = TrainConfig { steps: 3, batch: 2, ..Default::default() };

        let (frozen, _, _) =
            strategy3_joint(&fp, &corpus, SchemeKind::Grid(0), &cfg, false).unwrap();
        for (before, after) in fp.stubs.iter().zip(&frozen.stubs) {
            assert_eq!(before.param_bits(), after.param_bits(), "frozen stubs must not move");
        }

        let (trained, _, _) =
            strategy3_joint(&fp, &corpus, SchemeKind::Grid(0), &cfg, true).unwrap();
        let moved = fp
            .stubs
            .iter()
            .zip(&trained.stubs)
            .any(|(before, after)| before.param_bits() != after.param_bits());
        assert!(moved, "joint training with unfrozen stubs must update them");
    }

    #[test]
    fn sweep_results_are_independent_of_worker_count() {
        let train = gen_corpus(&CorpusSpec::new(4, 32, 3, 0.2).unwrap());
        let test = gen_corpus(&CorpusSpec::new(2, 32, 5, 0.2).unwrap());
        let cfg = TrainConfig { steps: 2, batch: 2, ..Default::default() };
        let loss_cfg = LossConfig::default();
        let serial = sweep_partitions(&train, &test, &cfg, &loss_cfg, 1).unwrap();
        let parallel = sweep_partitions(&train, &test, &cfg, &loss_cfg, 3).unwrap();
        assert_eq!(serial.rows.len(), parallel.rows.len());
        for ((la, ra), (lb, rb)) in serial.rows.iter().zip(&parallel.rows) {
            assert_eq!(la, lb);
            assert_eq!(ra.psnr_avg.0.to_bits(), rb.psnr_avg.0.to_bits());
            assert_eq!(ra.psnr_r.0.to_bits(), rb.psnr_r.0.to_bits());
        }
    }
}

/// Run independent tasks with at most `jobs` worker threads, collecting
/// results in task order.
fn run_parallel<T: Send>(jobs: usize, tasks: Vec<Task<T>>) -> Result<Vec<T>> {
    let jobs = jobs.max(1);
    if jobs == 1 {
        return tasks.into_iter().map(|t| t()).collect();
    }
    let mut slots: Vec<Option<Result<T>>> = Vec::new();
    slots.resize_with(tasks.len(), || None);
    let mut queue: Vec<(usize, Task<T>)> = tasks.into_iter().enumerate().collect();
    while !queue.is_empty() {
        let wave: Vec<_> = queue.drain(..queue.len().min(jobs)).collect();
        let results: Vec<(usize, Result<T>)> = std::thread::scope(|scope| {
            let handles: Vec<_> = wave
                .into_iter()
                .map(|(i, task)| scope.spawn(move || (i, task())))
                .collect();
            handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
        });
        for (i, r) in results {
            slots[i] = Some(r);
        }
    }
    slots.into_iter().map(|s| s.expect("every slot filled")).collect()
}
