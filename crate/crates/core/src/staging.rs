//! Sleep-stage taxonomies.
//!
//! Scorings arrive in a raw space that mixes AASM (N1/N2/N3) and legacy
//! R&K (S1..S4) tokens. Everything downstream works in the four-class
//! space `{Wake, Light, Deep, REM}`, optionally collapsed further to the
//! three-class (wake/NREM/REM) or two-class (wake/sleep) tasks.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Length of one scoring window.
pub const EPOCH_SECONDS: f64 = 30.0;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StagingError {
    #[error("unscored epoch has no stage")]
    UnscoredStage,
    #[error("unknown stage token {0:?}")]
    UnknownToken(String),
    #[error("class index {index} out of range for {task} task")]
    ClassOutOfRange { index: usize, task: Task },
}

/// A stage token as written by the scorer, before harmonization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RawStage {
    W,
    N1,
    N2,
    N3,
    S1,
    S2,
    S3,
    S4,
    Rem,
    Unscored,
}

impl RawStage {
    pub const ALL: [RawStage; 10] = [
        RawStage::W,
        RawStage::N1,
        RawStage::N2,
        RawStage::N3,
        RawStage::S1,
        RawStage::S2,
        RawStage::S3,
        RawStage::S4,
        RawStage::Rem,
        RawStage::Unscored,
    ];

    pub fn token(self) -> &'static str {
        match self {
            RawStage::W => "W",
            RawStage::N1 => "N1",
            RawStage::N2 => "N2",
            RawStage::N3 => "N3",
            RawStage::S1 => "S1",
            RawStage::S2 => "S2",
            RawStage::S3 => "S3",
            RawStage::S4 => "S4",
            RawStage::Rem => "R",
            RawStage::Unscored => "UNSCORED",
        }
    }
}

impl FromStr for RawStage {
    type Err = StagingError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RawStage::ALL
            .iter()
            .copied()
            .find(|r| r.token() == s)
            .ok_or_else(|| StagingError::UnknownToken(s.to_string()))
    }
}

impl fmt::Display for RawStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

/// Four-class stage. The discriminants are the class indices used on every
/// confusion-matrix axis and in every serialized report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Stage4 {
    Wake = 0,
    Light = 1,
    Deep = 2,
    Rem = 3,
}

impl Stage4 {
    pub const ALL: [Stage4; 4] = [Stage4::Wake, Stage4::Light, Stage4::Deep, Stage4::Rem];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Stage4> {
        Stage4::ALL.get(index).copied()
    }

    pub fn is_sleep(self) -> bool {
        self != Stage4::Wake
    }
}

/// Maps a raw scorer token onto the four-class space. R&K S4 joins S3 in
/// the deep class.
pub fn harmonize(raw: RawStage) -> Result<Stage4, StagingError> {
    match raw {
        RawStage::W => Ok(Stage4::Wake),
        RawStage::N1 | RawStage::N2 | RawStage::S1 | RawStage::S2 => Ok(Stage4::Light),
        RawStage::N3 | RawStage::S3 | RawStage::S4 => Ok(Stage4::Deep),
        RawStage::Rem => Ok(Stage4::Rem),
        RawStage::Unscored => Err(StagingError::UnscoredStage),
    }
}

/// Classification task granularity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Four,
    Three,
    Two,
}

impl Task {
    pub fn n_classes(self) -> usize {
        match self {
            Task::Four => 4,
            Task::Three => 3,
            Task::Two => 2,
        }
    }

    pub fn class_names(self) -> &'static [&'static str] {
        match self {
            Task::Four => &["Wake", "Light", "Deep", "REM"],
            Task::Three => &["Wake", "NREM", "REM"],
            Task::Two => &["Wake", "Sleep"],
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Four => "four",
            Task::Three => "three",
            Task::Two => "two",
        })
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "four" | "4" => Ok(Task::Four),
            "three" | "3" => Ok(Task::Three),
            "two" | "2" => Ok(Task::Two),
            other => Err(format!("unknown task {other:?} (expected four, three or two)")),
        }
    }
}

/// Class index of `stage` under `task`.
pub fn collapse(stage: Stage4, task: Task) -> usize {
    match task {
        Task::Four => stage.index(),
        Task::Three => match stage {
            Stage4::Wake => 0,
            Stage4::Light | Stage4::Deep => 1,
            Stage4::Rem => 2,
        },
        Task::Two => match stage {
            Stage4::Wake => 0,
            _ => 1,
        },
    }
}

/// Collapses a four-class index, rejecting indices outside `0..4`.
pub fn collapse_index(index: usize, task: Task) -> Result<usize, StagingError> {
    Stage4::from_index(index)
        .map(|s| collapse(s, task))
        .ok_or(StagingError::ClassOutOfRange {
            index,
            task: Task::Four,
        })
}

/// Scorer labels for one night, before harmonization.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawHypnogram {
    pub stages: Vec<RawStage>,
    pub valid: Vec<bool>,
}

impl RawHypnogram {
    pub fn new(stages: Vec<RawStage>) -> Self {
        let valid = stages.iter().map(|s| *s != RawStage::Unscored).collect();
        RawHypnogram { stages, valid }
    }

    pub fn len(&self) -> usize {
        self.stages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stages.is_empty()
    }

    /// Unscored epochs become masked placeholders (`Wake`, invalid).
    pub fn harmonize(&self) -> Hypnogram {
        let mut stages = Vec::with_capacity(self.len());
        let mut valid = Vec::with_capacity(self.len());
        for (raw, ok) in self.stages.iter().zip(&self.valid) {
            match harmonize(*raw) {
                Ok(s) => {
                    stages.push(s);
                    valid.push(*ok);
                }
                Err(_) => {
                    stages.push(Stage4::Wake);
                    valid.push(false);
                }
            }
        }
        Hypnogram { stages, valid }
    }
}

/// Four-class stages per 30-s epoch with a validity mask. Invalid epochs
/// (unscored, padding, signal gaps) are excluded from every metric.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hypnogram {
    pub stages: Vec<Stage4>,
    pub valid: Vec<bool>,
}

impl Hypnogram {
    pub fn new(stages: Vec<Stage4>, valid: Vec<bool>) -> Self {
        assert_eq!(stages.len(), valid.len(), "stages and mask differ in length");
        Hypnogram { stages, valid }
    }

    pub fn all_valid(stages: Vec<Stage4>) -> Self {
        let valid = vec![true; stages.len()];
        Hypnogram { stages, valid }
    }

    pub fn len(&self) -> usize {
        self.stages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stages.is_empty()
    }

    pub fn n_valid(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    /// Valid epochs as class indices under `task`.
    pub fn valid_classes(&self, task: Task) -> impl Iterator<Item = usize> + '_ {
        self.stages
            .iter()
            .zip(&self.valid)
            .filter(|(_, v)| **v)
            .map(move |(s, _)| collapse(*s, task))
    }

    /// Per-class counts of valid epochs.
    pub fn class_counts(&self, task: Task) -> Vec<usize> {
        let mut counts = vec![0; task.n_classes()];
        for c in self.valid_classes(task) {
            counts[c] += 1;
        }
        counts
    }

    /// Marks every epoch overlapping one of the `[start, end)` spans (seconds) invalid.
    pub fn mask_spans(&mut self, spans: &[(f64, f64)]) {
        for &(start, end) in spans {
            if end <= start {
                continue;
            }
            let first = (start / EPOCH_SECONDS).floor().max(0.0) as usize;
            let last = ((end / EPOCH_SECONDS).ceil() as usize).min(self.len());
            for v in self.valid.iter_mut().take(last).skip(first) {
                *v = false;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn harmonize_examples() {
        assert_eq!(harmonize(RawStage::S4), Ok(Stage4::Deep));
        assert_eq!(harmonize(RawStage::N1), Ok(Stage4::Light));
        assert_eq!(harmonize(RawStage::S2), Ok(Stage4::Light));
        assert_eq!(harmonize(RawStage::S3), Ok(Stage4::Deep));
        assert_eq!(harmonize(RawStage::W), Ok(Stage4::Wake));
        assert_eq!(harmonize(RawStage::Rem), Ok(Stage4::Rem));
        assert_eq!(harmonize(RawStage::Unscored), Err(StagingError::UnscoredStage));
    }

    #[test]
    fn collapse_examples() {
        assert_eq!(collapse(Stage4::Deep, Task::Three), 1);
        assert_eq!(collapse(Stage4::Rem, Task::Two), 1);
        for task in [Task::Four, Task::Three, Task::Two] {
            assert_eq!(collapse(Stage4::Wake, task), 0);
        }
        assert!(collapse_index(4, Task::Two).is_err());
    }

    #[test]
    fn collapse_is_surjective_and_four_is_bijective() {
        for task in [Task::Four, Task::Three, Task::Two] {
            let mut hit = vec![false; task.n_classes()];
            for s in Stage4::ALL {
                hit[collapse(s, task)] = true;
            }
            assert!(hit.iter().all(|h| *h), "{task} not surjective");
        }
        let mut image: Vec<usize> = Stage4::ALL.iter().map(|s| collapse(*s, Task::Four)).collect();
        image.dedup();
        assert_eq!(image, vec![0, 1, 2, 3]);
    }

    #[test]
    fn tokens_round_trip() {
        for raw in RawStage::ALL {
            assert_eq!(raw.token().parse::<RawStage>().unwrap(), raw);
        }
        assert!(matches!("N5".parse::<RawStage>(), Err(StagingError::UnknownToken(_))));
    }

    #[test]
    fn mask_spans_marks_overlapping_epochs() {
        let mut h = Hypnogram::all_valid(vec![Stage4::Light; 5]);
        h.mask_spans(&[(31.0, 62.0)]);
        assert_eq!(h.valid, vec![true, false, false, true, true]);
    }

    fn raw_stage() -> impl Strategy<Value = RawStage> {
        (0..RawStage::ALL.len()).prop_map(|i| RawStage::ALL[i])
    }

    proptest! {
        #[test]
        fn three_class_counts_sum_four_class_counts(raws in prop::collection::vec(raw_stage(), 0..200)) {
            let h = RawHypnogram::new(raws).harmonize();
            let four = h.class_counts(Task::Four);
            let three = h.class_counts(Task::Three);
            let two = h.class_counts(Task::Two);
            prop_assert_eq!(three[0], four[0]);
            prop_assert_eq!(three[1], four[1] + four[2]);
            prop_assert_eq!(three[2], four[3]);
            prop_assert_eq!(two[1], four[1] + four[2] + four[3]);
        }

        #[test]
        fn single_canonical_collapse_path(raw in raw_stage()) {
            if let Ok(stage) = harmonize(raw) {
                for task in [Task::Four, Task::Three, Task::Two] {
                    let direct = collapse(stage, task);
                    let via_index = collapse_index(stage.index(), task).unwrap();
                    prop_assert_eq!(direct, via_index);
                }
            }
        }
    }
}
