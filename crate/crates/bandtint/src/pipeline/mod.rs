//! Training loops, the frequency pipeline, validation protocols, the
//! combination strategies, and run artifacts.

mod artifacts;
mod evaluate;
mod freq;
mod strategies;
mod validate;

pub use artifacts::{
    load_cast_dir, load_pipeline_dir, load_stub_dir, save_cast_dir, save_pipeline_dir,
    save_stub_dir, write_loss_curve, RunManifest,
};
pub use evaluate::{evaluate, EvalOutcome, System};
pub use freq::{band_training_pairs, combine_band_outputs, CastStage, FreqPipeline, ModelSizes};
pub use strategies::{
    compare_strategies, strategy2_retrain, strategy3_joint, sweep_partitions, train_baseline_stub,
    train_cast_stage, train_freq_pipeline, StrategyComparison, SweepOutcome,
};
pub use validate::{run_validation_comparison, validate, SplitPlan, ValidationComparison};

use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::imaging::PlanarImage;
use crate::models::{CastModel, ModelParams, StubModel, UNetModel};
use crate::objectives::{hybrid_loss, l1_loss, LossConfig};
use crate::regions::MeanVector;
use crate::rng::SeededRng;
use crate::tensor::{Graph, OptimState, TensorError, TensorId};
use crate::{Error, Result};

pub use crate::models::means_tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "alpha")]
pub enum LossKind {
    L1,
    Hybrid(f64),
}

impl LossKind {
    fn config(&self) -> Result<LossConfig> {
        match self {
            LossKind::L1 => LossConfig::with_alpha(1.0),
            LossKind::Hybrid(alpha) => LossConfig::with_alpha(*alpha),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Validation {
    None,
    Holdout20,
    KFold5,
}

impl FromStr for Validation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Validation::None),
            "holdout20" => Ok(Validation::Holdout20),
            "kfold5" => Ok(Validation::KFold5),
            other => Err(Error::Pipeline(format!(
                "unknown validation protocol '{other}' (expected none, holdout20, kfold5)"
            ))),
        }
    }
}

/// A config plus the corpus spec fully determines a run, bit for bit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
    pub loss: LossKind,
    pub validation: Validation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 300,
            batch: 4,
            lr: 1e-3,
            seed: 42,
            loss: LossKind::L1,
            validation: Validation::None,
        }
    }
}

impl TrainConfig {
    pub fn check(&self) -> Result<()> {
        if self.steps == 0 || self.batch == 0 {
            return Err(Error::Pipeline("steps and batch must be positive".into()));
        }
        if self.lr.is_nan() || self.lr < 0.0 {
            return Err(Error::Pipeline(format!("learning rate must be non-negative, got {}", self.lr)));
        }
        self.loss.config()?;
        Ok(())
    }

    pub fn with_loss(self, loss: LossKind) -> Self {
        Self { loss, ..self }
    }

    pub fn with_steps(self, steps: usize) -> Self {
        Self { steps, ..self }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub loss_curve: Vec<f64>,
    pub wall_secs: f64,
}

impl TrainResult {
    pub fn final_loss(&self) -> f64 {
        *self.loss_curve.last().unwrap_or(&f64::NAN)
    }
}

const BATCH_STREAM: u64 = 0x0062_6174_6368;

/// Deterministic batch for one step: the whole corpus when it fits,
/// otherwise a seeded sample without replacement.
fn batch_indices(seed: u64, step: usize, n: usize, batch: usize) -> Vec<usize> {
    if batch >= n {
        return (0..n).collect();
    }
    let mut rng = SeededRng::stream(seed ^ BATCH_STREAM, step as u64);
    let mut pool: Vec<usize> = (0..n).collect();
    (0..batch)
        .map(|k| {
            let j = k + rng.below(n - k);
            pool.swap(k, j);
            pool[k]
        })
        .collect()
}

/// Translate a mid-step non-finite value into the divergence report the
/// training contract promises.
fn divergence<M: ModelParams<f32>>(err: TensorError, step: usize, model: &M) -> Error {
    match err {
        TensorError::NonFinite { .. } => {
            let norms = model
                .named_params()
                .iter()
                .map(|(n, t)| format!("{n}={:.3e}", t.norm()))
                .collect::<Vec<_>>()
                .join(", ");
            Error::Diverged { step, norms }
        }
        other => Error::Tensor(other),
    }
}

fn loss_on_graph(
    g: &mut Graph<f32>,
    pred: TensorId,
    target: TensorId,
    cfg: &LossConfig,
) -> std::result::Result<TensorId, TensorError> {
    if cfg.alpha == 1.0 {
        l1_loss(g, pred, target)
    } else {
        hybrid_loss(g, pred, target, cfg)
    }
}

/// Train the colorizer stub on (single-plane input, 3-channel target) pairs.
/// Serves both the full-image baseline and the per-band variants.
pub fn train_stub(
    model: &mut StubModel<f32>,
    pairs: &[(PlanarImage, PlanarImage)],
    cfg: &TrainConfig,
) -> Result<TrainResult> {
    cfg.check()?;
    if pairs.is_empty() {
        return Err(Error::Pipeline("training corpus is empty".into()));
    }
    let start = Instant::now();
    let loss_cfg = cfg.loss.config()?;
    let inputs: Vec<_> = pairs.iter().map(|(x, _)| x.to_tensor::<f32>()).collect();
    let targets: Vec<_> = pairs.iter().map(|(_, t)| t.to_tensor::<f32>()).collect();
    let mut optim = OptimState::new(cfg.lr, &model.param_refs());
    let mut curve = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let idx = batch_indices(cfg.seed, step, pairs.len(), cfg.batch);
        let step_loss = (|| -> std::result::Result<f64, TensorError> {
            let mut g = Graph::new();
            let ids = model.bind(&mut g, true);
            let mut total = None;
            for &i in &idx {
                let x = g.leaf_detached(&inputs[i]);
                let t = g.leaf_detached(&targets[i]);
                let y = model.forward_ids(&mut g, &ids, x)?;
                let l = loss_on_graph(&mut g, y, t, &loss_cfg)?;
                total = Some(match total {
                    None => l,
                    Some(acc) => g.add(acc, l)?,
                });
            }
            let loss = g.mul_scalar(total.expect("batch is non-empty"), 1.0 / idx.len() as f64)?;
            g.backward(loss)?;
            model.apply_grads(&g, &ids)?;
            Ok(g.scalar_value(loss))
        })()
        .map_err(|e| divergence(e, step, model))?;
        optim.step(&mut model.named_params_mut())?;
        curve.push(step_loss);
    }
    Ok(TrainResult { loss_curve: curve, wall_secs: start.elapsed().as_secs_f64() })
}

/// Train the artifact remover on (recombined pipeline output, target) pairs.
pub fn train_unet(
    model: &mut UNetModel<f32>,
    pairs: &[(PlanarImage, PlanarImage)],
    cfg: &TrainConfig,
) -> Result<TrainResult> {
    cfg.check()?;
    if pairs.is_empty() {
        return Err(Error::Pipeline("training corpus is empty".into()));
    }
    let start = Instant::now();
    let loss_cfg = cfg.loss.config()?;
    let inputs: Vec<_> = pairs.iter().map(|(x, _)| x.to_tensor::<f32>()).collect();
    let targets: Vec<_> = pairs.iter().map(|(_, t)| t.to_tensor::<f32>()).collect();
    let mut optim = OptimState::new(cfg.lr, &model.param_refs());
    let mut curve = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let idx = batch_indices(cfg.seed, step, pairs.len(), cfg.batch);
        let step_loss = (|| -> std::result::Result<f64, TensorError> {
            let mut g = Graph::new();
            let ids = model.bind(&mut g, true);
            let mut total = None;
            for &i in &idx {
                let x = g.leaf_detached(&inputs[i]);
                let t = g.leaf_detached(&targets[i]);
                let y = model.forward_ids(&mut g, &ids, x)?;
                let l = loss_on_graph(&mut g, y, t, &loss_cfg)?;
                total = Some(match total {
                    None => l,
                    Some(acc) => g.add(acc, l)?,
                });
            }
            let loss = g.mul_scalar(total.expect("batch is non-empty"), 1.0 / idx.len() as f64)?;
            g.backward(loss)?;
            model.apply_grads(&g, &ids)?;
            Ok(g.scalar_value(loss))
        })()
        .map_err(|e| divergence(e, step, model))?;
        optim.step(&mut model.named_params_mut())?;
        curve.push(step_loss);
    }
    Ok(TrainResult { loss_curve: curve, wall_secs: start.elapsed().as_secs_f64() })
}

/// Train the cast corrector on (input image, conditioning means, target)
/// triples with L1 loss unless configured otherwise.
pub fn train_cast(
    model: &mut CastModel<f32>,
    triples: &[(PlanarImage, MeanVector, PlanarImage)],
    cfg: &TrainConfig,
) -> Result<TrainResult> {
    cfg.check()?;
    if triples.is_empty() {
        return Err(Error::Pipeline("training corpus is empty".into()));
    }
    for (_, means, _) in triples {
        model.check_means(means)?;
    }
    let start = Instant::now();
    let loss_cfg = cfg.loss.config()?;
    let inputs: Vec<_> = triples.iter().map(|(x, _, _)| x.to_tensor::<f32>()).collect();
    let means: Vec<_> = triples.iter().map(|(_, m, _)| means_tensor::<f32>(m)).collect();
    let targets: Vec<_> = triples.iter().map(|(_, _, t)| t.to_tensor::<f32>()).collect();
    let mut optim = OptimState::new(cfg.lr, &model.param_refs());
    let mut curve = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let idx = batch_indices(cfg.seed, step, triples.len(), cfg.batch);
        let step_loss = (|| -> std::result::Result<f64, TensorError> {
            let mut g = Graph::new();
            let ids = model.bind(&mut g, true);
            let mut total = None;
            for &i in &idx {
                let x = g.leaf_detached(&inputs[i]);
                let m = g.leaf_detached(&means[i]);
                let t = g.leaf_detached(&targets[i]);
                let y = model.forward_ids(&mut g, &ids, x, m)?;
                let l = loss_on_graph(&mut g, y, t, &loss_cfg)?;
                total = Some(match total {
                    None => l,
                    Some(acc) => g.add(acc, l)?,
                });
            }
            let loss = g.mul_scalar(total.expect("batch is non-empty"), 1.0 / idx.len() as f64)?;
            g.backward(loss)?;
            model.apply_grads(&g, &ids)?;
            Ok(g.scalar_value(loss))
        })()
        .map_err(|e| divergence(e, step, model))?;
        optim.step(&mut model.named_params_mut())?;
        curve.push(step_loss);
    }
    Ok(TrainResult { loss_curve: curve, wall_secs: start.elapsed().as_secs_f64() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{gen_corpus, to_gray, CorpusSpec};
    use crate::models::StubConfig;

    fn tiny_pairs() -> Vec<(PlanarImage, PlanarImage)> {
        gen_corpus(&CorpusSpec::new(6, 16, 5, 0.0).unwrap())
            .into_iter()
            .map(|(t, _)| (to_gray(&t).unwrap(), t))
            .collect()
    }

    #[test]
    fn zero_learning_rate_is_a_flat_curve_with_frozen_params() {
        let pairs = tiny_pairs();
        let mut model = StubModel::init(StubConfig::default(), 1);
        let before = model.param_bits();
        let cfg = TrainConfig { steps: 5, batch: pairs.len(), lr: 0.0, ..Default::default() };
        let result = train_stub(&mut model, &pairs, &cfg).unwrap();
        assert_eq!(model.param_bits(), before);
        let first = result.loss_curve[0];
        assert!(result.loss_curve.iter().all(|&l| l == first), "{:?}", result.loss_curve);
    }

    #[test]
    fn same_seed_gives_bitwise_identical_curves() {
        let pairs = tiny_pairs();
        let cfg = TrainConfig { steps: 8, batch: 2, ..Default::default() };
        let run = || {
            let mut model = StubModel::init(StubConfig::default(), 9);
            train_stub(&mut model, &pairs, &cfg).unwrap().loss_curve
        };
        let a = run();
        let b = run();
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn batch_indices_are_deterministic_and_in_range() {
        let a = batch_indices(7, 3, 10, 4);
        let b = batch_indices(7, 3, 10, 4);
        assert_eq!(a, b);
        assert_eq!(a.len(), 4);
        assert!(a.iter().all(|&i| i < 10));
        let mut sorted = a.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 4, "sampling is without replacement");
    }

    #[test]
    fn empty_corpus_is_rejected() {
        let mut model = StubModel::init(StubConfig::default(), 1);
        assert!(train_stub(&mut model, &[], &TrainConfig::default()).is_err());
    }

    #[test]
    fn exploding_run_aborts_with_step_and_parameter_norms() {
        let pairs = tiny_pairs();
        let mut model = StubModel::init(StubConfig::default(), 2);
        let cfg = TrainConfig { steps: 50, batch: 2, lr: 1e12, ..Default::default() };
        let err = train_stub(&mut model, &pairs, &cfg).unwrap_err();
        match err {
            Error::Diverged { step, norms } => {
                assert!(step > 0, "the first step starts from finite parameters");
                assert!(norms.contains("enc0.w="), "norms: {norms}");
            }
            other => panic!("expected divergence, got {other}"),
        }
    }
}
