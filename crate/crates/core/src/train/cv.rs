//! k-fold splitting (random or subject-wise) and the cross-validation driver.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use crate::arch::{build_model, ModelSpec};
use crate::data::ImageSet;
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::Real;
use crate::train::metrics::{metrics, summarize, ConfusionMatrix, MetricSummary, MetricsReport};
use crate::train::{evaluate, train_model, EpochLog, TrainConfig};

const FOLD_STREAM: u64 = 0x3u64 << 56;
pub const DEFAULT_FOLDS: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CvMode {
    Random,
    SubjectWise,
}

impl fmt::Display for CvMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CvMode::Random => "random",
            CvMode::SubjectWise => "subject",
        })
    }
}

impl FromStr for CvMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "random" => Ok(CvMode::Random),
            "subject" | "subject-wise" | "subjectwise" => Ok(CvMode::SubjectWise),
            other => Err(format!("unknown cv mode `{other}` (expected random or subject)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldPlan {
    pub k: usize,
    pub mode: CvMode,
    /// Validation indices per fold, each sorted ascending.
    pub folds: Vec<Vec<usize>>,
}

impl FoldPlan {
    pub fn len(&self) -> usize {
        self.folds.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Everything outside fold `i`, ascending.
    pub fn train_indices(&self, i: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = self
            .folds
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .flat_map(|(_, f)| f.iter().copied())
            .collect();
        idx.sort_unstable();
        idx
    }

    /// Checks that the folds partition `0..n`.
    pub fn check_partition(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n];
        for f in &self.folds {
            for &i in f {
                if i >= n || std::mem::replace(&mut seen[i], true) {
                    return Err(Error::invalid("FoldPlan", format!("index {i} out of range or repeated")));
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::invalid("FoldPlan", "folds do not cover every sample"));
        }
        Ok(())
    }
}

/// Splits samples (identified by their subject ids) into `k` folds.
///
/// Random: a seeded shuffle dealt round-robin, so sizes differ by at most
/// one. Subject-wise: subjects in seeded order, stably sorted largest first,
/// each placed into the currently smallest fold (lowest index on ties).
pub fn split_kfold(subjects: &[String], k: usize, mode: CvMode, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::invalid("split_kfold", format!("k = {k}, need at least 2")));
    }
    let mut rng = SeededRng::new(seed ^ FOLD_STREAM);
    let mut folds = vec![Vec::new(); k];
    match mode {
        CvMode::Random => {
            if subjects.len() < k {
                return Err(Error::invalid(
                    "split_kfold",
                    format!("{} samples cannot fill {k} folds", subjects.len()),
                ));
            }
            let mut idx: Vec<usize> = (0..subjects.len()).collect();
            rng.shuffle(&mut idx);
            for (j, i) in idx.into_iter().enumerate() {
                folds[j % k].push(i);
            }
        }
        CvMode::SubjectWise => {
            let mut order: Vec<&str> = Vec::new();
            let mut groups: HashMap<&str, Vec<usize>> = HashMap::new();
            for (i, s) in subjects.iter().enumerate() {
                groups
                    .entry(s.as_str())
                    .or_insert_with(|| {
                        order.push(s.as_str());
                        Vec::new()
                    })
                    .push(i);
            }
            if order.len() < k {
                return Err(Error::invalid(
                    "split_kfold",
                    format!("{} subjects cannot fill {k} folds", order.len()),
                ));
            }
            rng.shuffle(&mut order);
            order.sort_by_key(|s| std::cmp::Reverse(groups[s].len()));
            for s in order {
                let smallest = (0..k).min_by_key(|&f| folds[f].len()).expect("k >= 2");
                folds[smallest].extend_from_slice(&groups[s]);
            }
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(FoldPlan { k, mode, folds })
}

#[derive(Clone, Debug)]
pub struct CvResult {
    pub reports: Vec<MetricsReport>,
    pub summary: MetricSummary,
    pub logs: Vec<Vec<EpochLog>>,
}

impl CvResult {
    /// Rows for the metrics CSV, folds numbered from 1.
    pub fn rows(&self) -> Vec<(String, MetricsReport)> {
        self.reports
            .iter()
            .enumerate()
            .map(|(i, r)| ((i + 1).to_string(), *r))
            .collect()
    }
}

/// Runs `fold_fn(fold, train_idx, val_idx)` for every fold and aggregates
/// the confusion matrices it returns.
pub fn run_folds(
    plan: &FoldPlan,
    n: usize,
    mut fold_fn: impl FnMut(usize, &[usize], &[usize]) -> Result<(ConfusionMatrix, Vec<EpochLog>)>,
) -> Result<CvResult> {
    plan.check_partition(n)?;
    let mut reports = Vec::with_capacity(plan.k);
    let mut logs = Vec::with_capacity(plan.k);
    for (i, val_idx) in plan.folds.iter().enumerate() {
        if val_idx.is_empty() {
            return Err(Error::invalid("cross_validate", format!("fold {} is empty", i + 1)));
        }
        let (cm, fold_logs) = fold_fn(i, &plan.train_indices(i), val_idx)?;
        reports.push(metrics(&cm)?);
        logs.push(fold_logs);
    }
    let summary = summarize(&reports)?;
    Ok(CvResult {
        reports,
        summary,
        logs,
    })
}

/// Trains a fresh model per fold (seed `cfg.seed ^ fold`) on the other
/// folds and evaluates it on the held-out one.
pub fn cross_validate<T: Real>(
    spec: &ModelSpec,
    data: &ImageSet,
    cfg: &TrainConfig,
    plan: &FoldPlan,
    mut on_epoch: impl FnMut(usize, &EpochLog),
) -> Result<CvResult> {
    spec.validate()?;
    run_folds(plan, data.len(), |fold, train_idx, val_idx| {
        let fold_cfg = TrainConfig {
            seed: cfg.seed ^ fold as u64,
            ..cfg.clone()
        };
        let mut model = build_model::<T>(spec, fold_cfg.seed)?;
        let logs = train_model(&mut model, &data.subset(train_idx), None, &fold_cfg, |l| on_epoch(fold, l))?;
        Ok((evaluate(&model, &data.subset(val_idx))?, logs))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ids(n: usize, block: usize) -> Vec<String> {
        (0..n).map(|i| format!("s{}", i / block)).collect()
    }

    fn sizes(p: &FoldPlan) -> Vec<usize> {
        let mut s: Vec<usize> = p.folds.iter().map(Vec::len).collect();
        s.sort_unstable_by(|a, b| b.cmp(a));
        s
    }

    #[test]
    fn divisible_random() {
        let p = split_kfold(&ids(100, 1), 10, CvMode::Random, 0).unwrap();
        assert_eq!(sizes(&p), vec![10; 10]);
        p.check_partition(100).unwrap();
    }

    #[test]
    fn pigeonhole_random() {
        let p = split_kfold(&ids(23, 1), 10, CvMode::Random, 5).unwrap();
        assert_eq!(sizes(&p), vec![3, 3, 3, 2, 2, 2, 2, 2, 2, 2]);
    }

    #[test]
    fn forced_subject_assignment() {
        let subjects = ids(100, 10);
        let p = split_kfold(&subjects, 10, CvMode::SubjectWise, 3).unwrap();
        for f in &p.folds {
            assert_eq!(f.len(), 10);
            assert!(f.iter().all(|&i| subjects[i] == subjects[f[0]]));
        }
    }

    #[test]
    fn too_few_rejected() {
        assert!(split_kfold(&ids(9, 1), 10, CvMode::Random, 0).is_err());
        assert!(split_kfold(&ids(90, 10), 10, CvMode::SubjectWise, 0).is_err());
        assert!(split_kfold(&ids(10, 1), 1, CvMode::Random, 0).is_err());
    }

    #[test]
    fn constant_predictor_scores_majority_fraction() {
        // 70 negatives, 30 positives; always predicting "healthy".
        let labels: Vec<usize> = (0..100).map(|i| usize::from(i % 10 < 3)).collect();
        let plan = split_kfold(&ids(100, 1), 10, CvMode::Random, 8).unwrap();
        let res = run_folds(&plan, 100, |_, _, val| {
            let truth: Vec<usize> = val.iter().map(|&i| labels[i]).collect();
            Ok((ConfusionMatrix::from_predictions(&truth, &vec![0; truth.len()]), Vec::new()))
        })
        .unwrap();
        assert!((res.summary.mean[0] - 0.7).abs() < 1e-12);
        let direct: f64 = res.reports.iter().map(|r| r.accuracy).sum::<f64>() / 10.0;
        assert!((res.summary.mean[0] - direct).abs() < 1e-12);
    }

    #[test]
    fn every_sample_validated_once() {
        let plan = split_kfold(&ids(37, 3), 2, CvMode::SubjectWise, 1).unwrap();
        let mut hits = vec![0; 37];
        let res = run_folds(&plan, 37, |_, train, val| {
            assert!(val.iter().all(|v| !train.contains(v)));
            for &v in val {
                hits[v] += 1;
            }
            Ok((ConfusionMatrix { tn: val.len() as u64, ..Default::default() }, Vec::new()))
        })
        .unwrap();
        assert_eq!(res.reports.len(), 2);
        assert!(hits.iter().all(|&h| h == 1));
    }

    proptest! {
        #[test]
        fn random_folds_partition(n in 10usize..200, k in 2usize..11, seed in any::<u64>()) {
            let p = split_kfold(&ids(n, 1), k, CvMode::Random, seed).unwrap();
            p.check_partition(n).unwrap();
            let s = sizes(&p);
            prop_assert!(s[0] - s[k - 1] <= 1);
            prop_assert_eq!(&p, &split_kfold(&ids(n, 1), k, CvMode::Random, seed).unwrap());
        }

        #[test]
        fn subjects_never_split(n in 20usize..200, block in 1usize..7, seed in any::<u64>()) {
            let subjects = ids(n, block);
            let p = split_kfold(&subjects, 3, CvMode::SubjectWise, seed).unwrap();
            p.check_partition(n).unwrap();
            let mut home: HashMap<&str, usize> = HashMap::new();
            for (f, idx) in p.folds.iter().enumerate() {
                for &i in idx {
                    prop_assert_eq!(*home.entry(subjects[i].as_str()).or_insert(f), f);
                }
            }
        }
    }
}
