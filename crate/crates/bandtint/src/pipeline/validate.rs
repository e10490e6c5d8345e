//! Validation protocols: seeded 80/20 holdout and 5-fold cross-validation,
//! plus the three-row comparison they feed.

use super::freq::CastStage;
use super::{train_cast, System, TrainConfig, Validation};
use crate::imaging::PlanarImage;
use crate::objectives::{mean_report, ChannelRow, LossConfig, MetricsReport};
use crate::regions::SchemeKind;
use crate::rng::SeededRng;
use crate::{Error, Result};

const SPLIT_STREAM: u64 = 0x0073_706c_6974;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SplitPlan {
    /// Everything trains; no validation set.
    All(Vec<usize>),
    /// Seeded random 80/20 split.
    Holdout { train: Vec<usize>, val: Vec<usize> },
    /// Five disjoint folds covering the corpus, sizes differing by at most
    /// one.
    KFold(Vec<Vec<usize>>),
}

/// Split `n` corpus indices per the configured protocol.
pub fn validate(n: usize, cfg: &TrainConfig) -> Result<SplitPlan> {
    if n == 0 {
        return Err(Error::Pipeline("cannot split an empty corpus".into()));
    }
    match cfg.validation {
        Validation::None => Ok(SplitPlan::All((0..n).collect())),
        Validation::Holdout20 => {
            let mut rng = SeededRng::stream(cfg.seed ^ SPLIT_STREAM, 0);
            let perm = rng.permutation(n);
            let n_val = n * 20 / 100;
            if n_val == 0 {
                return Err(Error::Pipeline(format!(
                    "corpus of {n} images is too small for a 20% holdout"
                )));
            }
            let (val, train) = perm.split_at(n_val);
            Ok(SplitPlan::Holdout { train: train.to_vec(), val: val.to_vec() })
        }
        Validation::KFold5 => {
            if n < 5 {
                return Err(Error::Pipeline(format!(
                    "5-fold cross-validation needs at least 5 images, got {n}"
                )));
            }
            let mut rng = SeededRng::stream(cfg.seed ^ SPLIT_STREAM, 1);
            let perm = rng.permutation(n);
            let base = n / 5;
            let rem = n % 5;
            let mut folds = Vec::with_capacity(5);
            let mut start = 0;
            for i in 0..5 {
                let extent = if i < 5 - rem { base } else { base + 1 };
                folds.push(perm[start..start + extent].to_vec());
                start += extent;
            }
            Ok(SplitPlan::KFold(folds))
        }
    }
}

#[derive(Debug, Clone)]
pub struct ValidationComparison {
    /// (protocol label, mean test report) in none/holdout/kfold order.
    pub rows: Vec<(String, MetricsReport)>,
}

impl ValidationComparison {
    pub fn table(&self) -> String {
        let rows: Vec<ChannelRow> = self
            .rows
            .iter()
            .map(|(label, r)| ChannelRow::from_report(label.clone(), r))
            .collect();
        crate::objectives::format_channel_table("Protocol", &rows)
    }
}

fn cast_triples(
    corpus: &[(PlanarImage, PlanarImage)],
    indices: &[usize],
    kind: SchemeKind,
) -> Result<Vec<(PlanarImage, crate::regions::MeanVector, PlanarImage)>> {
    let stage = CastStage::init(kind, 0); // only for means_for geometry
    indices
        .iter()
        .map(|&i| {
            let (target, degraded) = &corpus[i];
            let means = stage.means_for(target)?;
            Ok((degraded.clone(), means, target.clone()))
        })
        .collect()
}

/// Train the cast corrector under each protocol and evaluate on the test
/// corpus: the full-data run, the 80%-train holdout run, and the mean over
/// the five cross-validation fold models.
pub fn run_validation_comparison(
    train_corpus: &[(PlanarImage, PlanarImage)],
    test_corpus: &[(PlanarImage, PlanarImage)],
    kind: SchemeKind,
    cfg: &TrainConfig,
    loss_cfg: &LossConfig,
) -> Result<ValidationComparison> {
    let n = train_corpus.len();
    let mut rows = Vec::with_capacity(3);

    let eval_stage = |stage: &CastStage| -> Result<MetricsReport> {
        Ok(super::evaluate(&System::CastOnly(stage), test_corpus, None, loss_cfg)?.mean)
    };

    // no validation set: the full corpus trains
    {
        let plan = validate(n, &TrainConfig { validation: Validation::None, ..*cfg })?;
        let SplitPlan::All(indices) = plan else { unreachable!() };
        let mut stage = CastStage::init(kind, cfg.seed);
        let triples = cast_triples(train_corpus, &indices, kind)?;
        train_cast(&mut stage.model, &triples, cfg)?;
        rows.push(("none".to_string(), eval_stage(&stage)?));
    }

    // method 1: random 20% holdout, training on the remaining 80%
    {
        let plan = validate(n, &TrainConfig { validation: Validation::Holdout20, ..*cfg })?;
        let SplitPlan::Holdout { train, .. } = plan else { unreachable!() };
        let mut stage = CastStage::init(kind, cfg.seed);
        let triples = cast_triples(train_corpus, &train, kind)?;
        train_cast(&mut stage.model, &triples, cfg)?;
        rows.push(("holdout20".to_string(), eval_stage(&stage)?));
    }

    // method 2: 5-fold cross-validation, averaging the fold models' scores
    {
        let plan = validate(n, &TrainConfig { validation: Validation::KFold5, ..*cfg })?;
        let SplitPlan::KFold(folds) = plan else { unreachable!() };
        let mut fold_reports = Vec::with_capacity(folds.len());
        for (fi, fold) in folds.iter().enumerate() {
            let train_indices: Vec<usize> = (0..n).filter(|i| !fold.contains(i)).collect();
            let mut stage = CastStage::init(kind, cfg.seed.wrapping_add(fi as u64));
            let triples = cast_triples(train_corpus, &train_indices, kind)?;
            train_cast(&mut stage.model, &triples, cfg)?;
            fold_reports.push(eval_stage(&stage)?);
        }
        rows.push(("kfold5".to_string(), mean_report(&fold_reports)?));
    }

    Ok(ValidationComparison { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(validation: Validation) -> TrainConfig {
        TrainConfig { validation, ..Default::default() }
    }

    #[test]
    fn holdout_is_an_exact_80_20_split() {
        let plan = validate(100, &cfg(Validation::Holdout20)).unwrap();
        let SplitPlan::Holdout { train, val } = plan else { panic!("wrong plan") };
        assert_eq!((train.len(), val.len()), (80, 20));
        let mut all: Vec<usize> = train.iter().chain(&val).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn kfold_folds_are_disjoint_and_covering() {
        for n in [5usize, 32, 101] {
            let plan = validate(n, &cfg(Validation::KFold5)).unwrap();
            let SplitPlan::KFold(folds) = plan else { panic!("wrong plan") };
            assert_eq!(folds.len(), 5);
            let mut all: Vec<usize> = folds.iter().flatten().copied().collect();
            all.sort_unstable();
            assert_eq!(all, (0..n).collect::<Vec<_>>(), "n={n}");
            let max = folds.iter().map(Vec::len).max().unwrap();
            let min = folds.iter().map(Vec::len).min().unwrap();
            assert!(max - min <= 1);
        }
    }

    #[test]
    fn too_small_corpora_are_rejected() {
        assert!(validate(4, &cfg(Validation::KFold5)).is_err());
        assert!(validate(3, &cfg(Validation::Holdout20)).is_err());
        assert!(validate(0, &cfg(Validation::None)).is_err());
    }

    #[test]
    fn splits_are_seeded() {
        let a = validate(50, &cfg(Validation::Holdout20)).unwrap();
        let b = validate(50, &cfg(Validation::Holdout20)).unwrap();
        assert_eq!(a, b);
        let c = validate(50, &TrainConfig { seed: 7, ..cfg(Validation::Holdout20) }).unwrap();
        assert_ne!(a, c);
    }
}
