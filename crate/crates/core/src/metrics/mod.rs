//! Agreement and outcome statistics: Cohen's kappa, confusion matrices,
//! sleep measures, Bland-Altman limits, the Wilcoxon signed-rank test and
//! the covariate regression of per-patient kappa.

mod regression;
mod wilcoxon;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use regression::{error_regression, ols, RegressionReport, RegressionTerm};
pub use wilcoxon::{wilcoxon_signed_rank, wilcoxon_signed_rank_with, WilcoxonMethod, WilcoxonResult, EXACT_MAX_N};

use crate::staging::{collapse, Hypnogram, Stage4, Task, EPOCH_SECONDS};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("no masked-in epochs")]
    Empty,
    #[error("no patients with scored epochs")]
    EmptyDataset,
    #[error("paired inputs differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} pairs, got {got}")]
    TooFewPairs { needed: usize, got: usize },
    #[error("total sleep time is zero")]
    ZeroTst,
    #[error("class index {index} outside 0..{classes}")]
    ClassOutOfRange { index: usize, classes: usize },
    #[error("regression needs at least {needed} complete patients, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("regression design is singular")]
    Singular,
}

pub type Result<T> = std::result::Result<T, MetricsError>;

/// Counts with rows = reference, columns = prediction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub n_classes: usize,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(n_classes: usize) -> Self {
        ConfusionMatrix {
            n_classes,
            counts: vec![vec![0; n_classes]; n_classes],
        }
    }

    /// Counts the pairs where `mask` (if given) is set.
    pub fn from_labels(reference: &[usize], prediction: &[usize], mask: Option<&[bool]>, n_classes: usize) -> Result<Self> {
        if reference.len() != prediction.len() {
            return Err(MetricsError::LengthMismatch(reference.len(), prediction.len()));
        }
        if let Some(m) = mask {
            if m.len() != reference.len() {
                return Err(MetricsError::LengthMismatch(reference.len(), m.len()));
            }
        }
        let mut cm = ConfusionMatrix::new(n_classes);
        for (i, (r, p)) in reference.iter().zip(prediction).enumerate() {
            if mask.is_some_and(|m| !m[i]) {
                continue;
            }
            for &c in [r, p] {
                if c >= n_classes {
                    return Err(MetricsError::ClassOutOfRange {
                        index: c,
                        classes: n_classes,
                    });
                }
            }
            cm.counts[*r][*p] += 1;
        }
        Ok(cm)
    }

    /// Valid epochs of both hypnograms (the reference mask decides), after
    /// collapsing to `task`.
    pub fn from_hypnograms(reference: &Hypnogram, prediction: &Hypnogram, task: Task) -> Result<Self> {
        if reference.len() != prediction.len() {
            return Err(MetricsError::LengthMismatch(reference.len(), prediction.len()));
        }
        let mut cm = ConfusionMatrix::new(task.n_classes());
        for i in 0..reference.len() {
            if reference.valid[i] && prediction.valid[i] {
                cm.counts[collapse(reference.stages[i], task)][collapse(prediction.stages[i], task)] += 1;
            }
        }
        Ok(cm)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn add(&mut self, other: &ConfusionMatrix) {
        for (row, o) in self.counts.iter_mut().zip(&other.counts) {
            for (a, b) in row.iter_mut().zip(o) {
                *a += b;
            }
        }
    }

    pub fn accuracy(&self) -> Result<f64> {
        let total = self.total();
        if total == 0 {
            return Err(MetricsError::Empty);
        }
        let diag: u64 = (0..self.n_classes).map(|k| self.counts[k][k]).sum();
        Ok(diag as f64 / total as f64)
    }

    /// Cohen's kappa with marginal-product chance agreement. When chance
    /// agreement is 1 (both raters constant on the same class) the result is
    /// 1; it cannot be 1 with disagreement.
    pub fn kappa(&self) -> Result<f64> {
        let total = self.total();
        if total == 0 {
            return Err(MetricsError::Empty);
        }
        let n = total as f64;
        let p_o = (0..self.n_classes).map(|k| self.counts[k][k]).sum::<u64>() as f64 / n;
        let p_e: f64 = (0..self.n_classes)
            .map(|k| {
                let row: u64 = self.counts[k].iter().sum();
                let col: u64 = self.counts.iter().map(|r| r[k]).sum();
                (row as f64 / n) * (col as f64 / n)
            })
            .sum();
        if 1.0 - p_e <= f64::EPSILON {
            return Ok(if p_o >= 1.0 { 1.0 } else { 0.0 });
        }
        Ok(((p_o - p_e) / (1.0 - p_e)).clamp(-1.0, 1.0))
    }

    pub fn to_csv(&self, class_names: &[&str]) -> String {
        let mut out = String::from("reference\\prediction");
        for name in class_names {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for (name, row) in class_names.iter().zip(&self.counts) {
            out.push_str(name);
            for c in row {
                out.push_str(&format!(",{c}"));
            }
            out.push('\n');
        }
        out
    }
}

pub fn cohen_kappa(reference: &[usize], prediction: &[usize], mask: Option<&[bool]>, n_classes: usize) -> Result<f64> {
    ConfusionMatrix::from_labels(reference, prediction, mask, n_classes)?.kappa()
}

/// Linear-interpolation quantile (the default "type 7": position
/// `q * (n - 1)` in the sorted sample).
pub fn quantile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(v[lo] + (pos - lo as f64) * (v[hi] - v[lo]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientKappa {
    pub record_id: String,
    pub kappa: f64,
    pub n_epochs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementStats {
    pub n: usize,
    pub mae: f64,
    pub mean_diff: f64,
    /// Population standard deviation of the differences.
    pub sd_diff: f64,
    pub loa_low: f64,
    pub loa_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SleepMeasureErrors {
    pub tst_min: AgreementStats,
    pub se_pct: AgreementStats,
    pub fr_light_pct: Option<AgreementStats>,
    pub fr_deep_pct: Option<AgreementStats>,
    pub fr_rem_pct: Option<AgreementStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub task: Task,
    pub kappa_per_patient: Vec<PatientKappa>,
    pub kappa_median: f64,
    pub kappa_q1: f64,
    pub kappa_q3: f64,
    /// Kappa over all pooled epochs.
    pub kappa_overall: f64,
    /// Mean of the per-patient kappas, reported next to the pooled value.
    pub kappa_mean_per_patient: f64,
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
    pub sleep_measure_errors: Option<SleepMeasureErrors>,
}

/// One patient's reference and predicted hypnograms.
#[derive(Debug, Clone, PartialEq)]
pub struct PatientResult {
    pub record_id: String,
    pub reference: Hypnogram,
    pub prediction: Hypnogram,
}

/// Per-patient kappas with median and quartiles, pooled kappa and accuracy,
/// pooled confusion matrix and (four-class) sleep-measure agreement.
/// Patients without any scored epoch are skipped.
pub fn evaluate_dataset(patients: &[PatientResult], task: Task) -> Result<MetricsReport> {
    let mut pooled = ConfusionMatrix::new(task.n_classes());
    let mut per_patient = Vec::new();
    let mut measures_pred = Vec::new();
    let mut measures_ref = Vec::new();
    for p in patients {
        let cm = ConfusionMatrix::from_hypnograms(&p.reference, &p.prediction, task)?;
        if cm.total() == 0 {
            continue;
        }
        per_patient.push(PatientKappa {
            record_id: p.record_id.clone(),
            kappa: cm.kappa()?,
            n_epochs: cm.total() as usize,
        });
        pooled.add(&cm);
        let mask: Vec<bool> = p.reference.valid.iter().zip(&p.prediction.valid).map(|(a, b)| *a && *b).collect();
        let reference = Hypnogram::new(p.reference.stages.clone(), mask.clone());
        let prediction = Hypnogram::new(p.prediction.stages.clone(), mask);
        measures_ref.push(sleep_measures(&reference)?);
        measures_pred.push(sleep_measures(&prediction)?);
    }
    if per_patient.is_empty() {
        return Err(MetricsError::EmptyDataset);
    }
    let kappas: Vec<f64> = per_patient.iter().map(|k| k.kappa).collect();
    let sleep_measure_errors = if measures_ref.len() >= 2 {
        Some(sleep_measure_errors(&measures_pred, &measures_ref)?)
    } else {
        None
    };
    Ok(MetricsReport {
        task,
        kappa_median: quantile(&kappas, 0.5).unwrap(),
        kappa_q1: quantile(&kappas, 0.25).unwrap(),
        kappa_q3: quantile(&kappas, 0.75).unwrap(),
        kappa_mean_per_patient: kappas.iter().sum::<f64>() / kappas.len() as f64,
        kappa_overall: pooled.kappa()?,
        accuracy: pooled.accuracy()?,
        confusion: pooled,
        kappa_per_patient: per_patient,
        sleep_measure_errors,
    })
}

/// Median kappa per group label (for example a diagnosis tag).
pub fn group_median_kappa(kappas: &[f64], groups: &[String]) -> Result<Vec<(String, f64, usize)>> {
    if kappas.len() != groups.len() {
        return Err(MetricsError::LengthMismatch(kappas.len(), groups.len()));
    }
    let mut by: std::collections::BTreeMap<&str, Vec<f64>> = Default::default();
    for (k, g) in kappas.iter().zip(groups) {
        by.entry(g.as_str()).or_default().push(*k);
    }
    Ok(by
        .into_iter()
        .map(|(g, v)| (g.to_string(), quantile(&v, 0.5).unwrap(), v.len()))
        .collect())
}

/// Sleep measures of one night over its valid epochs (0.5 min each).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SleepMeasures {
    pub tst_min: f64,
    pub se_pct: f64,
    /// Undefined (None) when total sleep time is zero.
    pub fr_light_pct: Option<f64>,
    pub fr_deep_pct: Option<f64>,
    pub fr_rem_pct: Option<f64>,
}

pub fn sleep_measures(hypnogram: &Hypnogram) -> Result<SleepMeasures> {
    let counts = hypnogram.class_counts(Task::Four);
    let epoch_min = EPOCH_SECONDS / 60.0;
    let [wake, light, deep, rem] = [0, 1, 2, 3].map(|k| counts[k] as f64 * epoch_min);
    if counts.iter().sum::<usize>() == 0 {
        return Err(MetricsError::Empty);
    }
    let tst = light + deep + rem;
    let se = if tst > 0.0 { tst / (tst + wake) * 100.0 } else { 0.0 };
    let fr = |x: f64| (tst > 0.0).then(|| x / tst * 100.0);
    Ok(SleepMeasures {
        tst_min: tst,
        se_pct: se,
        fr_light_pct: fr(light),
        fr_deep_pct: fr(deep),
        fr_rem_pct: fr(rem),
    })
}

impl SleepMeasures {
    /// Fraction of sleep time in `stage`; `ZeroTst` when nothing was slept.
    pub fn fraction(&self, stage: Stage4) -> Result<f64> {
        let fr = match stage {
            Stage4::Wake => return Err(MetricsError::ClassOutOfRange { index: 0, classes: 4 }),
            Stage4::Light => self.fr_light_pct,
            Stage4::Deep => self.fr_deep_pct,
            Stage4::Rem => self.fr_rem_pct,
        };
        fr.ok_or(MetricsError::ZeroTst)
    }
}

/// Mean absolute error and Bland-Altman statistics of paired values.
pub fn measure_agreement(predicted: &[f64], reference: &[f64]) -> Result<AgreementStats> {
    if predicted.len() != reference.len() {
        return Err(MetricsError::LengthMismatch(predicted.len(), reference.len()));
    }
    if predicted.len() < 2 {
        return Err(MetricsError::TooFewPairs {
            needed: 2,
            got: predicted.len(),
        });
    }
    let n = predicted.len() as f64;
    let diffs: Vec<f64> = predicted.iter().zip(reference).map(|(p, r)| p - r).collect();
    let mae = diffs.iter().map(|d| d.abs()).sum::<f64>() / n;
    let mean = diffs.iter().sum::<f64>() / n;
    let sd = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n).sqrt();
    Ok(AgreementStats {
        n: predicted.len(),
        mae,
        mean_diff: mean,
        sd_diff: sd,
        loa_low: mean - 1.96 * sd,
        loa_high: mean + 1.96 * sd,
    })
}

/// Agreement per sleep measure. Fraction measures use only the nights where
/// both sides slept; they are `None` with fewer than two such nights.
pub fn sleep_measure_errors(predicted: &[SleepMeasures], reference: &[SleepMeasures]) -> Result<SleepMeasureErrors> {
    if predicted.len() != reference.len() {
        return Err(MetricsError::LengthMismatch(predicted.len(), reference.len()));
    }
    let pick = |f: fn(&SleepMeasures) -> f64| -> Result<AgreementStats> {
        let p: Vec<f64> = predicted.iter().map(f).collect();
        let r: Vec<f64> = reference.iter().map(f).collect();
        measure_agreement(&p, &r)
    };
    let pick_fr = |f: fn(&SleepMeasures) -> Option<f64>| -> Option<AgreementStats> {
        let (p, r): (Vec<f64>, Vec<f64>) = predicted
            .iter()
            .zip(reference)
            .filter_map(|(p, r)| Some((f(p)?, f(r)?)))
            .unzip();
        measure_agreement(&p, &r).ok()
    };
    Ok(SleepMeasureErrors {
        tst_min: pick(|m| m.tst_min)?,
        se_pct: pick(|m| m.se_pct)?,
        fr_light_pct: pick_fr(|m| m.fr_light_pct),
        fr_deep_pct: pick_fr(|m| m.fr_deep_pct),
        fr_rem_pct: pick_fr(|m| m.fr_rem_pct),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn hyp(s: &str) -> Hypnogram {
        Hypnogram::all_valid(
            s.chars()
                .map(|c| match c {
                    'W' => Stage4::Wake,
                    'L' => Stage4::Light,
                    'D' => Stage4::Deep,
                    'R' => Stage4::Rem,
                    _ => unreachable!(),
                })
                .collect(),
        )
    }

    #[test]
    fn kappa_examples() {
        assert_eq!(cohen_kappa(&[0, 1, 2, 3, 1], &[0, 1, 2, 3, 1], None, 4), Ok(1.0));
        // W,W,S,S vs W,S,W,S
        assert_eq!(cohen_kappa(&[0, 0, 1, 1], &[0, 1, 0, 1], None, 2), Ok(0.0));
        assert_eq!(cohen_kappa(&[2, 2, 2], &[2, 2, 2], None, 4), Ok(1.0));
        assert_eq!(cohen_kappa(&[2, 2, 2], &[1, 1, 1], None, 4), Ok(0.0));
        assert_eq!(cohen_kappa(&[0], &[1], Some(&[false]), 4), Err(MetricsError::Empty));
    }

    #[test]
    fn worked_sleep_measures() {
        let m = sleep_measures(&hyp("WWLLDDRRLW")).unwrap();
        assert_eq!(m.tst_min, 3.5);
        assert_eq!(m.se_pct, 70.0);
        assert!((m.fr_light_pct.unwrap() - 300.0 / 7.0).abs() < 1e-12);
        assert!((m.fr_deep_pct.unwrap() - 200.0 / 7.0).abs() < 1e-12);
        assert!((m.fr_rem_pct.unwrap() - 200.0 / 7.0).abs() < 1e-12);

        let w = sleep_measures(&hyp("WWW")).unwrap();
        assert_eq!((w.tst_min, w.se_pct, w.fr_rem_pct), (0.0, 0.0, None));
        assert_eq!(w.fraction(Stage4::Rem), Err(MetricsError::ZeroTst));
        let r = sleep_measures(&hyp("RRRR")).unwrap();
        assert_eq!((r.se_pct, r.fr_rem_pct), (100.0, Some(100.0)));
    }

    #[test]
    fn agreement_examples() {
        let a = measure_agreement(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((a.mae, a.loa_low, a.loa_high), (0.0, 0.0, 0.0));
        let a = measure_agreement(&[110.0, 190.0], &[100.0, 200.0]).unwrap();
        assert_eq!((a.mae, a.mean_diff, a.sd_diff), (10.0, 0.0, 10.0));
        assert!((a.loa_low + 19.6).abs() < 1e-12 && (a.loa_high - 19.6).abs() < 1e-12);
        assert_eq!(measure_agreement(&[1.0], &[1.0, 2.0]), Err(MetricsError::LengthMismatch(1, 2)));
    }

    #[test]
    fn quartiles_of_two() {
        let v = [0.4, 0.8];
        assert!((quantile(&v, 0.5).unwrap() - 0.6).abs() < 1e-12);
        assert!((quantile(&v, 0.25).unwrap() - 0.5).abs() < 1e-12);
        assert!((quantile(&v, 0.75).unwrap() - 0.7).abs() < 1e-12);
    }

    #[test]
    fn evaluate_single_perfect_patient() {
        let h = hyp("WLLDDRRW");
        let r = evaluate_dataset(
            &[PatientResult {
                record_id: "a".into(),
                reference: h.clone(),
                prediction: h,
            }],
            Task::Four,
        )
        .unwrap();
        assert_eq!((r.kappa_median, r.kappa_overall, r.accuracy), (1.0, 1.0, 1.0));
    }

    #[test]
    fn pooled_kappa_differs_from_median() {
        // patient a: balanced with one error; patient b: mostly one class
        let a = PatientResult {
            record_id: "a".into(),
            reference: hyp("WWLLDDRR"),
            prediction: hyp("WWLLDDRW"),
        };
        let b = PatientResult {
            record_id: "b".into(),
            reference: hyp("LLLLLLLW"),
            prediction: hyp("LLLLLLWW"),
        };
        let r = evaluate_dataset(&[a, b], Task::Four).unwrap();
        assert!((r.kappa_overall - r.kappa_median).abs() > 1e-3, "{r:?}");
        assert_eq!(r.kappa_per_patient.len(), 2);
    }

    #[test]
    fn masked_epochs_are_excluded() {
        let reference = Hypnogram::new(vec![Stage4::Wake, Stage4::Rem, Stage4::Deep], vec![true, false, true]);
        let prediction = Hypnogram::all_valid(vec![Stage4::Wake, Stage4::Light, Stage4::Deep]);
        let cm = ConfusionMatrix::from_hypnograms(&reference, &prediction, Task::Four).unwrap();
        assert_eq!(cm.total(), 2);
        assert_eq!(cm.accuracy(), Ok(1.0));
    }

    fn stage() -> impl Strategy<Value = Stage4> {
        (0usize..4).prop_map(|i| Stage4::from_index(i).unwrap())
    }

    proptest! {
        #[test]
        fn kappa_is_bounded_and_matches_matrix(
            pairs in prop::collection::vec((0usize..4, 0usize..4), 1..200)
        ) {
            let (r, p): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
            let k = cohen_kappa(&r, &p, None, 4).unwrap();
            prop_assert!((-1.0..=1.0).contains(&k));
            let cm = ConfusionMatrix::from_labels(&r, &p, None, 4).unwrap();
            let acc = cm.accuracy().unwrap();
            let agree = r.iter().zip(&p).filter(|(a, b)| a == b).count() as f64 / r.len() as f64;
            prop_assert!((acc - agree).abs() < 1e-15);
        }

        #[test]
        fn coarsening_never_lowers_accuracy(
            pairs in prop::collection::vec((stage(), stage()), 1..200)
        ) {
            let (r, p): (Vec<Stage4>, Vec<Stage4>) = pairs.into_iter().unzip();
            let (r, p) = (Hypnogram::all_valid(r), Hypnogram::all_valid(p));
            let acc = |t| ConfusionMatrix::from_hypnograms(&r, &p, t).unwrap().accuracy().unwrap();
            prop_assert!(acc(Task::Two) >= acc(Task::Three));
            prop_assert!(acc(Task::Three) >= acc(Task::Four));
        }

        #[test]
        fn fractions_sum_to_hundred(stages in prop::collection::vec(stage(), 1..300)) {
            let m = sleep_measures(&Hypnogram::all_valid(stages)).unwrap();
            if m.tst_min > 0.0 {
                let s = m.fr_light_pct.unwrap() + m.fr_deep_pct.unwrap() + m.fr_rem_pct.unwrap();
                prop_assert!((s - 100.0).abs() < 1e-9);
            }
            prop_assert!((0.0..=100.0).contains(&m.se_pct));
        }
    }
}
