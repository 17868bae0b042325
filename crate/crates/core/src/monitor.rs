//! Batch-wise drift monitoring and the re-assessment drafts it triggers.
//!
//! Every batch is compared against the concatenation of the previous
//! `reference_window` batches. The batch under test joins the window only
//! after it has been tested.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::dataset::{Gender, GenreSet, RatingRecord, RatingsDataset};
use crate::error::{Error, Result};
use crate::impact::{expand_and_compare, ImpactConfig};
use crate::links::{genre_overlap_matrix, rating_correlation_matrix, CorrelationOptions};
use crate::probe::{predictability_probe, Attribute, ProbeConfig};
use crate::registry::{ArtifactKind, ArtifactRef, AssessmentDraft, Criterion, DraftSink};
use crate::stats::{bonferroni, ks_two_sample, pooled_mean_z, two_proportion_z, Moments, TestOutcome};

pub const DEFAULT_ALPHA: f64 = 0.01;
pub const DEFAULT_MIN_BATCH: usize = 200;
pub const DEFAULT_MIN_GROUP: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftTest {
    MeanShiftZ,
    KsTwoSample,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WatchedStatistic {
    PerGenreMeanRating,
    GenreRatingShare,
    UserPopulationShareByGender,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    RecomputeLinks,
    RecomputeProbe,
    RecomputeImpact,
    NotifyAssessor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorConfig {
    pub reference_window: usize,
    pub test: DriftTest,
    pub alpha: f64,
    pub watched_statistics: Vec<WatchedStatistic>,
    pub min_batch_size: usize,
    /// Groups with fewer observations on either side are not tested.
    pub min_group_size: usize,
    pub actions: BTreeMap<WatchedStatistic, Vec<Action>>,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        use Action::*;
        use WatchedStatistic::*;
        MonitorConfig {
            reference_window: 5,
            test: DriftTest::MeanShiftZ,
            alpha: DEFAULT_ALPHA,
            watched_statistics: vec![PerGenreMeanRating, GenreRatingShare, UserPopulationShareByGender],
            min_batch_size: DEFAULT_MIN_BATCH,
            min_group_size: DEFAULT_MIN_GROUP,
            actions: BTreeMap::from([
                (
                    PerGenreMeanRating,
                    vec![RecomputeLinks, RecomputeImpact, NotifyAssessor],
                ),
                (GenreRatingShare, vec![RecomputeLinks, RecomputeImpact, NotifyAssessor]),
                (UserPopulationShareByGender, vec![RecomputeProbe, NotifyAssessor]),
            ]),
        }
    }
}

impl MonitorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidArgument("alpha must lie in (0, 1)".into()));
        }
        if self.reference_window == 0 {
            return Err(Error::InvalidArgument("reference window must be at least 1".into()));
        }
        if self.watched_statistics.is_empty() {
            return Err(Error::InvalidArgument("no statistic is watched".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftAlert {
    pub batch_index: u64,
    pub statistic: WatchedStatistic,
    pub genre_or_group: String,
    pub test: DriftTest,
    pub test_statistic: f64,
    /// Bonferroni-adjusted over every test run on the batch.
    pub p_value: f64,
    pub p_raw: f64,
    pub tests_in_batch: usize,
    pub reference_value: f64,
    pub observed_value: f64,
    pub triggered_actions: Vec<Action>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum BatchStatus {
    /// Nothing fed yet.
    Idle,
    /// Too small; held until later batches fill it up.
    Buffered { batch_index: u64, buffered: usize },
    /// First batch: it became the reference.
    ColdStart { batch_index: u64 },
    Tested {
        batch_index: u64,
        tests: usize,
        alerts: usize,
    },
}

/// One two-sample comparison: observed and reference values of a group.
struct Comparison {
    statistic: WatchedStatistic,
    group: String,
    sample: Vec<f64>,
    reference: Vec<f64>,
    binary: bool,
}

#[derive(Debug, Clone)]
pub struct MonitorState {
    config: MonitorConfig,
    catalog: Arc<RatingsDataset>,
    window: VecDeque<Vec<RatingRecord>>,
    buffer: Vec<RatingRecord>,
    next_index: u64,
    status: BatchStatus,
}

impl MonitorState {
    /// `catalog` supplies item genres and, if present, user genders.
    pub fn new(config: MonitorConfig, catalog: Arc<RatingsDataset>) -> Result<Self> {
        config.validate()?;
        Ok(MonitorState {
            config,
            catalog,
            window: VecDeque::new(),
            buffer: Vec::new(),
            next_index: 0,
            status: BatchStatus::Idle,
        })
    }

    pub fn config(&self) -> &MonitorConfig {
        &self.config
    }

    pub fn status(&self) -> &BatchStatus {
        &self.status
    }

    pub fn buffered(&self) -> usize {
        self.buffer.len()
    }

    pub fn reference_batches(&self) -> usize {
        self.window.len()
    }

    fn check_batch(&self, batch: &[RatingRecord]) -> Result<()> {
        for r in batch {
            if !(1..=5).contains(&r.rating) {
                return Err(Error::InvalidArgument(format!(
                    "batch rating {} for user {}, item {} outside 1..=5",
                    r.rating, r.user_id, r.item_id
                )));
            }
            if self.catalog.item(r.item_id).is_none() {
                return Err(Error::DanglingReference {
                    kind: "item",
                    id: r.item_id,
                });
            }
        }
        Ok(())
    }

    /// Tests one batch against the reference window and returns the
    /// alerts it raised.
    pub fn feed_batch(&mut self, batch: &[RatingRecord]) -> Result<Vec<DriftAlert>> {
        self.check_batch(batch)?;
        let batch_index = self.next_index;
        self.next_index += 1;
        self.buffer.extend_from_slice(batch);
        if self.buffer.len() < self.config.min_batch_size {
            self.status = BatchStatus::Buffered {
                batch_index,
                buffered: self.buffer.len(),
            };
            return Ok(Vec::new());
        }
        let current = std::mem::take(&mut self.buffer);
        if self.window.is_empty() {
            self.window.push_back(current);
            self.status = BatchStatus::ColdStart { batch_index };
            return Ok(Vec::new());
        }

        let reference: Vec<RatingRecord> = self.window.iter().flatten().copied().collect();
        let comparisons = self.comparisons(&current, &reference);
        let outcomes: Vec<(Comparison, TestOutcome)> = comparisons
            .into_iter()
            .filter_map(|c| self.run_test(&c).map(|o| (c, o)))
            .collect();
        let m = outcomes.len();
        let alerts: Vec<DriftAlert> = outcomes
            .into_iter()
            .filter_map(|(c, o)| {
                let adjusted = bonferroni(o.p_value, m);
                (adjusted < self.config.alpha).then(|| DriftAlert {
                    batch_index,
                    statistic: c.statistic,
                    genre_or_group: c.group,
                    test: self.config.test,
                    test_statistic: o.statistic,
                    p_value: adjusted,
                    p_raw: o.p_value,
                    tests_in_batch: m,
                    reference_value: mean(&c.reference),
                    observed_value: mean(&c.sample),
                    triggered_actions: self.config.actions.get(&c.statistic).cloned().unwrap_or_default(),
                })
            })
            .collect();

        self.window.push_back(current);
        while self.window.len() > self.config.reference_window {
            self.window.pop_front();
        }
        self.status = BatchStatus::Tested {
            batch_index,
            tests: m,
            alerts: alerts.len(),
        };
        Ok(alerts)
    }

    fn run_test(&self, c: &Comparison) -> Option<TestOutcome> {
        let min = self.config.min_group_size;
        if c.sample.len() < min || c.reference.len() < min {
            return None;
        }
        match self.config.test {
            DriftTest::MeanShiftZ if c.binary => {
                let hits = |v: &[f64]| v.iter().filter(|&&x| x > 0.5).count();
                two_proportion_z(hits(&c.sample), c.sample.len(), hits(&c.reference), c.reference.len())
            }
            DriftTest::MeanShiftZ => pooled_mean_z(
                &Moments::from_values(c.sample.iter().copied()),
                &Moments::from_values(c.reference.iter().copied()),
            ),
            DriftTest::KsTwoSample => ks_two_sample(&c.sample, &c.reference),
        }
    }

    fn comparisons(&self, batch: &[RatingRecord], reference: &[RatingRecord]) -> Vec<Comparison> {
        let ds = &self.catalog;
        let genres_of = |r: &RatingRecord| ds.item(r.item_id).map(|i| i.genres).unwrap_or_default();
        let mut out = Vec::new();
        for stat in &self.config.watched_statistics {
            match stat {
                WatchedStatistic::PerGenreMeanRating | WatchedStatistic::GenreRatingShare => {
                    for &g in ds.analysis_genres() {
                        let set = GenreSet::from_indices([g]);
                        let values = |rs: &[RatingRecord]| -> Vec<f64> {
                            if *stat == WatchedStatistic::PerGenreMeanRating {
                                rs.iter()
                                    .filter(|r| genres_of(r).intersects(set))
                                    .map(|r| r.rating as f64)
                                    .collect()
                            } else {
                                rs.iter()
                                    .map(|r| if genres_of(r).intersects(set) { 1.0 } else { 0.0 })
                                    .collect()
                            }
                        };
                        out.push(Comparison {
                            statistic: *stat,
                            group: ds.genres()[g].clone(),
                            sample: values(batch),
                            reference: values(reference),
                            binary: *stat == WatchedStatistic::GenreRatingShare,
                        });
                    }
                }
                WatchedStatistic::UserPopulationShareByGender => {
                    let Some(users) = ds.users() else { continue };
                    // One indicator per distinct known user per batch.
                    let female = |rs: &[RatingRecord]| -> Vec<f64> {
                        rs.iter()
                            .map(|r| r.user_id)
                            .collect::<BTreeSet<_>>()
                            .into_iter()
                            .filter_map(|u| users.get(&u))
                            .map(|p| if p.gender == Gender::F { 1.0 } else { 0.0 })
                            .collect()
                    };
                    let reference = self.window.iter().flat_map(|b| female(b)).collect();
                    out.push(Comparison {
                        statistic: *stat,
                        group: "F".into(),
                        sample: female(batch),
                        reference,
                        binary: true,
                    });
                }
            }
        }
        out
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Writes one JSON object per line.
pub fn write_alerts_jsonl<W: Write>(mut out: W, alerts: &[DriftAlert]) -> Result<()> {
    for a in alerts {
        serde_json::to_writer(&mut out, a)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_alerts_jsonl(path: &Path) -> Result<Vec<DriftAlert>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

/// Groups alerts by the batch that raised them.
pub fn merge_by_batch(alerts: &[DriftAlert]) -> BTreeMap<u64, Vec<DriftAlert>> {
    let mut out: BTreeMap<u64, Vec<DriftAlert>> = BTreeMap::new();
    for a in alerts {
        out.entry(a.batch_index).or_default().push(a.clone());
    }
    out
}

/// Inputs needed to recompute evidence for a draft.
#[derive(Debug, Clone)]
pub struct ReassessmentContext {
    pub existing_genres: Vec<String>,
    pub new_genre: String,
    pub seed: u64,
    pub evidence_dir: PathBuf,
    pub spool_dir: PathBuf,
    pub created_at: DateTime<Utc>,
    pub k_top: usize,
    pub neighbor_count: usize,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes)?;
    Ok(())
}

/// Recomputes the evidence named by the alerts of one batch and files a
/// draft with it. Manual fields stay empty for the assessor.
///
/// If the sink refuses the draft it is written to the spool directory and
/// [`Error::RegistryUnavailable`] is returned so the caller can retry.
pub fn trigger_reassessment(
    alerts: &[DriftAlert],
    snapshot: &RatingsDataset,
    ctx: &ReassessmentContext,
    sink: &dyn DraftSink,
) -> Result<AssessmentDraft> {
    let Some(first) = alerts.first() else {
        return Err(Error::InvalidArgument("no alerts to reassess".into()));
    };
    if alerts.iter().any(|a| a.batch_index != first.batch_index) {
        return Err(Error::InvalidArgument(
            "alerts from different batches go into separate drafts".into(),
        ));
    }
    let actions: BTreeSet<Action> = alerts
        .iter()
        .flat_map(|a| a.triggered_actions.iter().copied())
        .collect();
    let fp = snapshot.fingerprint();
    let mut draft = AssessmentDraft::new(first.batch_index, fp, ctx.created_at);
    for a in alerts {
        draft.reasons.push(format!(
            "{:?} on {}: observed {:.4} vs reference {:.4}, adjusted p = {:.3e}",
            a.statistic, a.genre_or_group, a.observed_value, a.reference_value, a.p_value
        ));
    }

    let dir = ctx.evidence_dir.join(&draft.draft_id);
    fs::create_dir_all(&dir)?;
    let params = |extra: &[(&str, String)]| -> BTreeMap<String, String> {
        let mut p = BTreeMap::from([
            ("existing_genres".to_string(), ctx.existing_genres.join(",")),
            ("new_genre".to_string(), ctx.new_genre.clone()),
            ("batch_index".to_string(), first.batch_index.to_string()),
        ]);
        p.extend(extra.iter().map(|(k, v)| (k.to_string(), v.clone())));
        p
    };

    if actions.contains(&Action::RecomputeLinks) {
        let cond = genre_overlap_matrix(snapshot);
        let path = dir.join("conditional.csv");
        cond.write_csv(fs::File::create(&path)?)?;
        draft.attach(
            Criterion::ALink,
            ArtifactRef::for_file(
                ArtifactKind::LinkMatrix,
                &path,
                fp,
                None,
                params(&[("measure", "conditional_probability".into())]),
            )?,
        );
        let corr = rating_correlation_matrix(snapshot, &CorrelationOptions::default())?;
        let path = dir.join("spearman.csv");
        corr.write_csv(fs::File::create(&path)?)?;
        draft.attach(
            Criterion::ALink,
            ArtifactRef::for_file(
                ArtifactKind::CorrelationResults,
                &path,
                fp,
                None,
                params(&[("measure", "spearman_rho".into())]),
            )?,
        );
    }
    if actions.contains(&Action::RecomputeProbe) {
        let mut new_set = ctx.existing_genres.clone();
        new_set.push(ctx.new_genre.clone());
        let cfg = ProbeConfig {
            attribute: Attribute::Gender,
            genre_set_old: ctx.existing_genres.clone(),
            genre_set_new: new_set,
            neighbors: crate::probe::DEFAULT_NEIGHBORS,
            folds: crate::probe::DEFAULT_FOLDS,
            seed: ctx.seed,
        };
        let report = predictability_probe(snapshot, &cfg)?;
        let path = dir.join("probe_gender.json");
        write_json(&path, &report)?;
        draft.attach(
            Criterion::CNature,
            ArtifactRef::for_file(
                ArtifactKind::PredictabilityReport,
                &path,
                fp,
                Some(ctx.seed),
                params(&[("attribute", "gender".into())]),
            )?,
        );
    }
    if actions.contains(&Action::RecomputeImpact) {
        let cfg = ImpactConfig {
            old_genres: ctx.existing_genres.clone(),
            new_genre: ctx.new_genre.clone(),
            k_top: ctx.k_top,
            holdout_fraction: crate::impact::DEFAULT_HOLDOUT,
            neighbor_count: ctx.neighbor_count,
            seed: ctx.seed,
        };
        let report = expand_and_compare(snapshot, &cfg)?;
        let path = dir.join("impact.json");
        write_json(&path, &report)?;
        draft.attach(
            Criterion::DConsequences,
            ArtifactRef::for_file(
                ArtifactKind::ImpactReport,
                &path,
                fp,
                Some(ctx.seed),
                params(&[("k_top", ctx.k_top.to_string())]),
            )?,
        );
    }
    if actions.contains(&Action::NotifyAssessor) {
        draft.reasons.push("assessor notification requested".into());
    }

    match sink.file_draft(&draft) {
        Ok(_) => Ok(draft),
        Err(e) => {
            fs::create_dir_all(&ctx.spool_dir)?;
            let spooled = ctx.spool_dir.join(format!("{}.json", draft.draft_id));
            write_json(&spooled, &draft)?;
            Err(Error::RegistryUnavailable {
                reason: e.to_string(),
                spooled,
            })
        }
    }
}
