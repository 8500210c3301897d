//! Staged dataset mixing.
//!
//! Training data comes from several datasets of very different sizes,
//! grouped into four categories. Training opens on the categories with
//! similar depth distributions and folds the remaining ones in one stage at
//! a time, each time the validation loss stops improving. Within a stage,
//! every draw picks an image with probability proportional to `K / k_i`
//! (K = total active images, k_i = the image's dataset size), which gives
//! every active dataset the same selection mass no matter how large it is.

use crate::{Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

/// Dataset category used for staging.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Category {
    #[serde(rename = "I")]
    Indoor,
    #[serde(rename = "S")]
    Synthetic,
    #[serde(rename = "PT")]
    Portrait,
    #[serde(rename = "HC")]
    HardCase,
}

/// One dataset: a name, its category, and its image count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetDescriptor {
    pub id: String,
    pub category: Category,
    pub size: usize,
}

impl DatasetDescriptor {
    fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::DatasetSpec("dataset id must not be empty".into()));
        }
        if self.size == 0 {
            return Err(Error::DatasetSpec(format!(
                "dataset {:?} must contain at least one image",
                self.id
            )));
        }
        Ok(())
    }
}

/// Plateau detector settings: an epoch counts as stalled when the loss
/// fails to beat the stage's best by a relative `epsilon`; `patience`
/// consecutive stalled epochs advance the stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlateauConfig {
    pub epsilon: f64,
    pub patience: usize,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        PlateauConfig {
            epsilon: 1e-3,
            patience: 5,
        }
    }
}

impl PlateauConfig {
    fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "plateau epsilon must be positive and finite, got {}",
                self.epsilon
            )));
        }
        if self.patience == 0 {
            return Err(Error::InvalidArgument(
                "plateau patience must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Staged mixing schedule over a fixed dataset list.
///
/// `stages` is an ordered list of category sets, each a superset of the
/// previous; `active_stage` indexes the current one. The plateau tracker
/// (best loss in stage, consecutive stalled epochs) is part of the state so
/// a serialized schedule resumes mid-stage without losing its counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurriculumSchedule {
    stages: Vec<BTreeSet<Category>>,
    active_stage: usize,
    datasets: Vec<DatasetDescriptor>,
    best_loss: Option<f64>,
    stalled_epochs: usize,
}

impl CurriculumSchedule {
    pub fn new(
        stages: Vec<BTreeSet<Category>>,
        datasets: Vec<DatasetDescriptor>,
    ) -> Result<CurriculumSchedule> {
        let schedule = CurriculumSchedule {
            stages,
            active_stage: 0,
            datasets,
            best_loss: None,
            stalled_epochs: 0,
        };
        schedule.validate()?;
        Ok(schedule)
    }

    fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::DatasetSpec("schedule needs at least one stage".into()));
        }
        for (i, stage) in self.stages.iter().enumerate() {
            if stage.is_empty() {
                return Err(Error::DatasetSpec(format!("stage {i} has no categories")));
            }
            if i > 0 && !stage.is_superset(&self.stages[i - 1]) {
                return Err(Error::DatasetSpec(format!(
                    "stage {i} must contain every category of stage {}",
                    i - 1
                )));
            }
        }
        if self.active_stage >= self.stages.len() {
            return Err(Error::DatasetSpec(format!(
                "active stage {} out of bounds for {} stages",
                self.active_stage,
                self.stages.len()
            )));
        }
        let mut ids = BTreeSet::new();
        for d in &self.datasets {
            d.validate()?;
            if !ids.insert(d.id.as_str()) {
                return Err(Error::DatasetSpec(format!("duplicate dataset id {:?}", d.id)));
            }
        }
        Ok(())
    }

    pub fn stage_count(&self) -> usize {
        self.stages.len()
    }

    pub fn active_stage(&self) -> usize {
        self.active_stage
    }

    pub fn active_categories(&self) -> &BTreeSet<Category> {
        &self.stages[self.active_stage]
    }

    pub fn datasets(&self) -> &[DatasetDescriptor] {
        &self.datasets
    }

    /// Datasets whose category belongs to the current stage.
    pub fn active_datasets(&self) -> impl Iterator<Item = (usize, &DatasetDescriptor)> {
        let active = self.active_categories();
        self.datasets
            .iter()
            .enumerate()
            .filter(move |(_, d)| active.contains(&d.category))
    }

    /// Jumps to a stage directly, resetting the plateau tracker.
    pub fn set_stage(&mut self, stage: usize) -> Result<()> {
        if stage >= self.stages.len() {
            return Err(Error::InvalidArgument(format!(
                "stage {stage} out of bounds for {} stages",
                self.stages.len()
            )));
        }
        self.active_stage = stage;
        self.best_loss = None;
        self.stalled_epochs = 0;
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("schedule state is plain data")
    }

    pub fn from_json(text: &str) -> Result<CurriculumSchedule> {
        let schedule: CurriculumSchedule = serde_json::from_str(text)
            .map_err(|e| Error::DatasetSpec(format!("schedule JSON: {e}")))?;
        schedule.validate()?;
        Ok(schedule)
    }
}

/// The three-stage default: open on indoor + synthetic, then add portrait,
/// then hard cases. Datasets are attached by the caller.
pub fn default_stages() -> Vec<BTreeSet<Category>> {
    let s1 = BTreeSet::from([Category::Indoor, Category::Synthetic]);
    let mut s2 = s1.clone();
    s2.insert(Category::Portrait);
    let mut s3 = s2.clone();
    s3.insert(Category::HardCase);
    vec![s1, s2, s3]
}

/// [`default_stages`] wrapped in a schedule with no datasets attached.
pub fn default_curriculum() -> CurriculumSchedule {
    CurriculumSchedule::new(default_stages(), Vec::new()).expect("default stages are nested")
}

/// Batch size the training recipe uses.
pub const DEFAULT_BATCH_SIZE: usize = 48;

/// One sampled image ticket.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub dataset: String,
    pub index: usize,
}

/// A batch of sampled image tickets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleBatch {
    pub entries: Vec<SampleEntry>,
}

/// Per-image sampling probability of one active dataset.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetWeights {
    /// Index into [`CurriculumSchedule::datasets`].
    pub dataset_index: usize,
    /// Probability of drawing any single image of this dataset.
    pub per_image: f64,
    /// Total probability of the dataset (`per_image * size`).
    pub mass: f64,
}

/// Normalized sampling probabilities for the active datasets.
///
/// Each image of active dataset i gets unnormalized weight `K / k_i` with
/// `K = sum of k_i over active datasets`, so every active dataset carries
/// the same mass `K` and an equal share after normalization. Inactive
/// datasets are omitted (probability zero).
pub fn sampling_weights(schedule: &CurriculumSchedule) -> Result<Vec<DatasetWeights>> {
    let active: Vec<(usize, &DatasetDescriptor)> = schedule.active_datasets().collect();
    if active.is_empty() {
        return Err(Error::NoActiveDataset);
    }
    let total: usize = active.iter().map(|(_, d)| d.size).sum();
    let k = total as f64;
    let unnormalized: Vec<f64> = active.iter().map(|(_, d)| k / d.size as f64).collect();
    let norm: f64 = unnormalized
        .iter()
        .zip(&active)
        .map(|(w, (_, d))| w * d.size as f64)
        .sum();
    Ok(active
        .iter()
        .zip(&unnormalized)
        .map(|((idx, d), w)| DatasetWeights {
            dataset_index: *idx,
            per_image: w / norm,
            mass: w * d.size as f64 / norm,
        })
        .collect())
}

/// Draws `batch_size` images with replacement from the current stage's
/// distribution. Deterministic per rng state; the schedule is not mutated.
pub fn next_batch<R: Rng + ?Sized>(
    schedule: &CurriculumSchedule,
    batch_size: usize,
    rng: &mut R,
) -> Result<SampleBatch> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be at least 1".into()));
    }
    let weights = sampling_weights(schedule)?;
    let mut entries = Vec::with_capacity(batch_size);
    for _ in 0..batch_size {
        let u: f64 = rng.random::<f64>();
        let mut acc = 0.0;
        let mut chosen = weights.len() - 1;
        for (i, w) in weights.iter().enumerate() {
            acc += w.mass;
            if u < acc {
                chosen = i;
                break;
            }
        }
        let descriptor = &schedule.datasets()[weights[chosen].dataset_index];
        entries.push(SampleEntry {
            dataset: descriptor.id.clone(),
            index: rng.random_range(0..descriptor.size),
        });
    }
    Ok(SampleBatch { entries })
}

/// Feeds one epoch's validation loss to the plateau tracker.
///
/// An epoch improves when it beats the stage's best loss by at least
/// `epsilon` relative; anything else (including the first epoch of a
/// stage, which has nothing to beat) counts as stalled. Reaching
/// `patience` consecutive stalled epochs advances the stage, resets the
/// tracker, and returns true; at the final stage nothing advances and the
/// result stays false.
pub fn observe_epoch(
    schedule: &mut CurriculumSchedule,
    validation_loss: f64,
    cfg: &PlateauConfig,
) -> Result<bool> {
    cfg.validate()?;
    if !validation_loss.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "validation loss must be finite, got {validation_loss}"
        )));
    }
    let improved = match schedule.best_loss {
        None => false,
        Some(best) => best - validation_loss >= cfg.epsilon * best.abs() && validation_loss < best,
    };
    if improved {
        schedule.best_loss = Some(validation_loss);
        schedule.stalled_epochs = 0;
        return Ok(false);
    }
    if schedule.best_loss.is_none() {
        schedule.best_loss = Some(validation_loss);
    }
    schedule.stalled_epochs += 1;
    if schedule.stalled_epochs >= cfg.patience && schedule.active_stage + 1 < schedule.stages.len()
    {
        schedule.active_stage += 1;
        schedule.best_loss = None;
        schedule.stalled_epochs = 0;
        return Ok(true);
    }
    Ok(false)
}

/// Parses a dataset list from JSON: an array of
/// `{"id": string, "category": "I"|"S"|"PT"|"HC", "size": integer}`.
pub fn load_datasets_json(text: &str) -> Result<Vec<DatasetDescriptor>> {
    let datasets: Vec<DatasetDescriptor> =
        serde_json::from_str(text).map_err(|e| Error::DatasetSpec(format!("dataset JSON: {e}")))?;
    for d in &datasets {
        d.validate()?;
    }
    Ok(datasets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dataset(id: &str, category: Category, size: usize) -> DatasetDescriptor {
        DatasetDescriptor {
            id: id.to_string(),
            category,
            size,
        }
    }

    fn two_dataset_schedule() -> CurriculumSchedule {
        CurriculumSchedule::new(
            default_stages(),
            vec![
                dataset("rooms", Category::Indoor, 100),
                dataset("renders", Category::Synthetic, 300),
            ],
        )
        .unwrap()
    }

    #[test]
    fn single_dataset_is_uniform() {
        let schedule = CurriculumSchedule::new(
            default_stages(),
            vec![dataset("rooms", Category::Indoor, 40)],
        )
        .unwrap();
        let weights = sampling_weights(&schedule).unwrap();
        assert_eq!(weights.len(), 1);
        assert!((weights[0].per_image - 1.0 / 40.0).abs() < 1e-15);
        assert!((weights[0].mass - 1.0).abs() < 1e-15);
    }

    #[test]
    fn unbalanced_sizes_get_equal_dataset_mass() {
        let weights = sampling_weights(&two_dataset_schedule()).unwrap();
        // Unnormalized per-image weights are K/k = 400/100 and 400/300; both
        // dataset masses come out equal, so each normalizes to one half.
        assert!((weights[0].mass - 0.5).abs() < 1e-15);
        assert!((weights[1].mass - 0.5).abs() < 1e-15);
        assert!((weights[0].per_image - 0.5 / 100.0).abs() < 1e-15);
        assert!((weights[1].per_image - 0.5 / 300.0).abs() < 1e-15);
    }

    #[test]
    fn three_equal_datasets_split_evenly() {
        let schedule = CurriculumSchedule::new(
            vec![BTreeSet::from([Category::Indoor, Category::Synthetic, Category::Portrait])],
            vec![
                dataset("a", Category::Indoor, 64),
                dataset("b", Category::Synthetic, 64),
                dataset("c", Category::Portrait, 64),
            ],
        )
        .unwrap();
        for w in sampling_weights(&schedule).unwrap() {
            assert!((w.mass - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn inactive_categories_are_excluded_until_their_stage() {
        let mut schedule = CurriculumSchedule::new(
            default_stages(),
            vec![
                dataset("rooms", Category::Indoor, 10),
                dataset("people", Category::Portrait, 10),
                dataset("glass", Category::HardCase, 10),
            ],
        )
        .unwrap();
        let active: Vec<usize> = sampling_weights(&schedule)
            .unwrap()
            .iter()
            .map(|w| w.dataset_index)
            .collect();
        assert_eq!(active, vec![0]);
        schedule.set_stage(2).unwrap();
        let active: Vec<usize> = sampling_weights(&schedule)
            .unwrap()
            .iter()
            .map(|w| w.dataset_index)
            .collect();
        assert_eq!(active, vec![0, 1, 2]);
    }

    #[test]
    fn no_active_dataset_is_rejected() {
        let schedule = CurriculumSchedule::new(
            default_stages(),
            vec![dataset("glass", Category::HardCase, 10)],
        )
        .unwrap();
        assert!(matches!(
            sampling_weights(&schedule),
            Err(Error::NoActiveDataset)
        ));
    }

    #[test]
    fn batch_draws_match_equal_dataset_mass() {
        let schedule = two_dataset_schedule();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let batch = next_batch(&schedule, 10_000, &mut rng).unwrap();
        let small = batch.entries.iter().filter(|e| e.dataset == "rooms").count();
        let frequency = small as f64 / 10_000.0;
        assert!(
            (0.48..=0.52).contains(&frequency),
            "dataset frequency {frequency} strayed from one half"
        );
        for e in &batch.entries {
            let limit = if e.dataset == "rooms" { 100 } else { 300 };
            assert!(e.index < limit);
        }
    }

    #[test]
    fn same_seed_gives_identical_batches() {
        let schedule = two_dataset_schedule();
        let mut a = ChaCha8Rng::seed_from_u64(5);
        let mut b = ChaCha8Rng::seed_from_u64(5);
        assert_eq!(
            next_batch(&schedule, 48, &mut a).unwrap(),
            next_batch(&schedule, 48, &mut b).unwrap()
        );
    }

    #[test]
    fn batch_of_one_image_dataset_repeats_it() {
        let schedule = CurriculumSchedule::new(
            default_stages(),
            vec![dataset("solo", Category::Indoor, 1)],
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let batch = next_batch(&schedule, 6, &mut rng).unwrap();
        assert!(batch
            .entries
            .iter()
            .all(|e| e.dataset == "solo" && e.index == 0));
    }

    // Critical chi-square values at p = 0.01.
    const CHI2_DF2: f64 = 9.210340371976182;
    const CHI2_DF9: f64 = 21.665994333461924;

    #[test]
    fn dataset_selection_is_uniform_across_active_datasets() {
        let schedule = CurriculumSchedule::new(
            vec![BTreeSet::from([Category::Indoor, Category::Synthetic, Category::Portrait])],
            vec![
                dataset("tiny", Category::Indoor, 50),
                dataset("medium", Category::Synthetic, 500),
                dataset("huge", Category::Portrait, 5000),
            ],
        )
        .unwrap();
        let draws = 100_000usize;
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let batch = next_batch(&schedule, draws, &mut rng).unwrap();
        let mut counts = [0usize; 3];
        for e in &batch.entries {
            let slot = match e.dataset.as_str() {
                "tiny" => 0,
                "medium" => 1,
                _ => 2,
            };
            counts[slot] += 1;
        }
        let expected = draws as f64 / 3.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| {
                let d = c as f64 - expected;
                d * d / expected
            })
            .sum();
        assert!(chi2 < CHI2_DF2, "chi-square {chi2} rejects dataset uniformity");
    }

    #[test]
    fn image_selection_is_uniform_within_a_dataset() {
        let schedule = CurriculumSchedule::new(
            default_stages(),
            vec![dataset("rooms", Category::Indoor, 10)],
        )
        .unwrap();
        let draws = 100_000usize;
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let batch = next_batch(&schedule, draws, &mut rng).unwrap();
        let mut counts = [0usize; 10];
        for e in &batch.entries {
            counts[e.index] += 1;
        }
        let expected = draws as f64 / 10.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| {
                let d = c as f64 - expected;
                d * d / expected
            })
            .sum();
        assert!(chi2 < CHI2_DF9, "chi-square {chi2} rejects image uniformity");
    }

    #[test]
    fn default_curriculum_stages_are_nested_and_complete() {
        let schedule = default_curriculum();
        assert_eq!(schedule.active_stage(), 0);
        assert_eq!(schedule.stage_count(), 3);
        assert_eq!(
            schedule.active_categories(),
            &BTreeSet::from([Category::Indoor, Category::Synthetic])
        );
        let stages = default_stages();
        for pair in stages.windows(2) {
            assert!(pair[1].is_superset(&pair[0]));
        }
        assert_eq!(stages[2].len(), 4);
    }

    #[test]
    fn constant_loss_advances_on_the_patience_epoch() {
        let mut schedule = two_dataset_schedule();
        let cfg = PlateauConfig {
            epsilon: 1e-3,
            patience: 3,
        };
        let mut advanced_at = Vec::new();
        for epoch in 1..=9 {
            if observe_epoch(&mut schedule, 1.0, &cfg).unwrap() {
                advanced_at.push(epoch);
            }
        }
        // Two stage boundaries exist; after the second advance the final
        // stage absorbs every further plateau.
        assert_eq!(advanced_at, vec![3, 6]);
        assert_eq!(schedule.active_stage(), 2);
    }

    #[test]
    fn improving_losses_never_advance() {
        let mut schedule = two_dataset_schedule();
        let cfg = PlateauConfig {
            epsilon: 1e-3,
            patience: 3,
        };
        let mut loss = 8.0;
        for _ in 0..30 {
            assert!(!observe_epoch(&mut schedule, loss, &cfg).unwrap());
            loss *= 0.5;
        }
        assert_eq!(schedule.active_stage(), 0);
    }

    #[test]
    fn sub_epsilon_improvements_count_as_stalled() {
        let mut schedule = two_dataset_schedule();
        let cfg = PlateauConfig {
            epsilon: 1e-3,
            patience: 3,
        };
        assert!(!observe_epoch(&mut schedule, 1.0, &cfg).unwrap());
        assert!(!observe_epoch(&mut schedule, 0.9999, &cfg).unwrap());
        assert!(observe_epoch(&mut schedule, 0.9998, &cfg).unwrap());
        assert_eq!(schedule.active_stage(), 1);
    }

    #[test]
    fn final_stage_never_advances() {
        let mut schedule = two_dataset_schedule();
        schedule.set_stage(2).unwrap();
        let cfg = PlateauConfig::default();
        for _ in 0..20 {
            assert!(!observe_epoch(&mut schedule, 1.0, &cfg).unwrap());
        }
        assert_eq!(schedule.active_stage(), 2);
    }

    #[test]
    fn bad_plateau_configs_and_losses_are_rejected() {
        let mut schedule = two_dataset_schedule();
        let zero_eps = PlateauConfig {
            epsilon: 0.0,
            patience: 3,
        };
        assert!(observe_epoch(&mut schedule, 1.0, &zero_eps).is_err());
        let zero_patience = PlateauConfig {
            epsilon: 1e-3,
            patience: 0,
        };
        assert!(observe_epoch(&mut schedule, 1.0, &zero_patience).is_err());
        assert!(observe_epoch(&mut schedule, f64::NAN, &PlateauConfig::default()).is_err());
    }

    #[test]
    fn schedule_json_round_trip_preserves_the_tracker() {
        let mut schedule = two_dataset_schedule();
        let cfg = PlateauConfig {
            epsilon: 1e-3,
            patience: 3,
        };
        observe_epoch(&mut schedule, 1.0, &cfg).unwrap();
        observe_epoch(&mut schedule, 1.0, &cfg).unwrap();
        let mut restored = CurriculumSchedule::from_json(&schedule.to_json()).unwrap();
        assert_eq!(restored, schedule);
        // One more stalled epoch trips the counter in both copies alike.
        assert!(observe_epoch(&mut restored, 1.0, &cfg).unwrap());
        assert!(observe_epoch(&mut schedule, 1.0, &cfg).unwrap());
    }

    #[test]
    fn invalid_schedules_are_rejected() {
        let shrinking = vec![
            BTreeSet::from([Category::Indoor, Category::Synthetic]),
            BTreeSet::from([Category::Indoor]),
        ];
        assert!(CurriculumSchedule::new(shrinking, Vec::new()).is_err());
        assert!(CurriculumSchedule::new(Vec::new(), Vec::new()).is_err());
        assert!(CurriculumSchedule::new(vec![BTreeSet::new()], Vec::new()).is_err());
        let duplicate = vec![
            dataset("same", Category::Indoor, 5),
            dataset("same", Category::Synthetic, 5),
        ];
        assert!(CurriculumSchedule::new(default_stages(), duplicate).is_err());
        let empty = vec![dataset("none", Category::Indoor, 0)];
        assert!(CurriculumSchedule::new(default_stages(), empty).is_err());
        let mut schedule = two_dataset_schedule();
        assert!(schedule.set_stage(3).is_err());
    }

    #[test]
    fn dataset_json_loads_and_rejects_bad_specs() {
        let loaded = load_datasets_json(
            r#"[{"id": "rooms", "category": "I", "size": 100},
                {"id": "faces", "category": "PT", "size": 7}]"#,
        )
        .unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded[0].category, Category::Indoor);
        assert_eq!(loaded[1].category, Category::Portrait);
        assert!(load_datasets_json(r#"[{"id": "x", "category": "Q", "size": 1}]"#).is_err());
        assert!(load_datasets_json(r#"[{"id": "x", "category": "I", "size": 0}]"#).is_err());
        assert!(load_datasets_json("not json").is_err());
    }

    #[test]
    fn batch_size_zero_is_rejected() {
        let schedule = two_dataset_schedule();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(next_batch(&schedule, 0, &mut rng).is_err());
    }
}
