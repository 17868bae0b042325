//! Reidentification risk of pseudonymised rating data and the effect of
//! perturbation safeguards on it.
//!
//! The adversary knows `k` (item, rating) pairs of a target taken from the
//! true data and searches the released data for users consistent with
//! them. Timestamps are not part of the adversary's knowledge.

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{RatingRecord, RatingsDataset};
use crate::error::{Error, Result};

pub const DEFAULT_TRIALS: usize = 1000;
pub const MAX_RESAMPLES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnownPairs {
    Count(usize),
    /// Every rating of the target.
    FullProfile,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdversaryModel {
    pub known_pairs: KnownPairs,
    pub rating_tolerance: u8,
    pub trials: usize,
    pub seed: u64,
}

impl AdversaryModel {
    fn validate(&self) -> Result<()> {
        if self.known_pairs == KnownPairs::Count(0) {
            return Err(Error::InvalidArgument("adversary must know at least one pair".into()));
        }
        if self.trials == 0 {
            return Err(Error::InvalidArgument("at least one trial is required".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReidentificationReport {
    pub adversary: AdversaryModel,
    pub unique_match_rate: f64,
    pub mean_candidate_set_size: f64,
    pub safeguard_applied: Option<String>,
    pub resamples: usize,
    pub dataset_fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub target: u32,
    pub known: usize,
    /// Matching users in the released data, ascending.
    pub candidates: Vec<u32>,
    pub resamples: usize,
}

impl TrialOutcome {
    pub fn unique_hit(&self) -> bool {
        self.candidates.len() == 1 && self.candidates[0] == self.target
    }
}

/// item id -> (user, rating) pairs sorted by user.
fn inverted_index(ds: &RatingsDataset) -> BTreeMap<u32, Vec<(u32, u8)>> {
    let mut idx: BTreeMap<u32, Vec<(u32, u8)>> = BTreeMap::new();
    for r in ds.ratings() {
        idx.entry(r.item_id).or_default().push((r.user_id, r.rating));
    }
    idx
}

fn rating_of(profile: &[RatingRecord], item: u32) -> Option<u8> {
    profile
        .binary_search_by_key(&item, |r| r.item_id)
        .ok()
        .map(|i| profile[i].rating)
}

fn matches(released: &RatingsDataset, index: &BTreeMap<u32, Vec<(u32, u8)>>, known: &[(u32, u8)], tol: u8) -> Vec<u32> {
    let close = |a: u8, b: u8| a.abs_diff(b) <= tol;
    let Some(&(pivot_item, pivot_rating)) = known.iter().min_by_key(|(i, _)| index.get(i).map_or(0, Vec::len)) else {
        return Vec::new();
    };
    let Some(postings) = index.get(&pivot_item) else {
        return Vec::new();
    };
    postings
        .iter()
        .filter(|&&(_, r)| close(r, pivot_rating))
        .map(|&(u, _)| u)
        .filter(|&u| {
            let profile = released.user_ratings(u);
            known
                .iter()
                .all(|&(i, r)| rating_of(profile, i).is_some_and(|x| close(x, r)))
        })
        .collect()
}

fn trial_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64);
    rng
}

/// Runs every trial and returns the raw outcomes in trial order.
///
/// Within a trial the target's profile is shuffled in full and the first
/// `k` pairs are used, so for a fixed seed the known pairs for a larger `k`
/// extend those for a smaller one whenever no resample was needed.
pub fn run_trials(
    original: &RatingsDataset,
    released: &RatingsDataset,
    adv: &AdversaryModel,
) -> Result<Vec<TrialOutcome>> {
    adv.validate()?;
    let users: Vec<u32> = original.rating_users().collect();
    let index = inverted_index(released);
    (0..adv.trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = trial_rng(adv.seed, t);
            let mut resamples = 0;
            let (target, profile) = loop {
                let u = users[rng.gen_range(0..users.len())];
                let profile = original.user_ratings(u);
                let enough = match adv.known_pairs {
                    KnownPairs::Count(k) => profile.len() >= k,
                    KnownPairs::FullProfile => true,
                };
                if enough {
                    break (u, profile);
                }
                resamples += 1;
                if resamples >= MAX_RESAMPLES {
                    let KnownPairs::Count(needed) = adv.known_pairs else {
                        unreachable!()
                    };
                    return Err(Error::ResampleLimit {
                        needed,
                        attempts: resamples,
                    });
                }
            };
            let mut pairs: Vec<(u32, u8)> = profile.iter().map(|r| (r.item_id, r.rating)).collect();
            pairs.shuffle(&mut rng);
            let k = match adv.known_pairs {
                KnownPairs::Count(k) => k,
                KnownPairs::FullProfile => pairs.len(),
            };
            let known = &pairs[..k];
            Ok(TrialOutcome {
                target,
                known: k,
                candidates: matches(released, &index, known, adv.rating_tolerance),
                resamples,
            })
        })
        .collect()
}

fn summarize(outcomes: &[TrialOutcome], adv: &AdversaryModel, released: &RatingsDataset) -> ReidentificationReport {
    let n = outcomes.len() as f64;
    let unique = outcomes.iter().filter(|o| o.unique_hit()).count() as f64;
    let cands = outcomes.iter().map(|o| o.candidates.len()).sum::<usize>() as f64;
    let safeguard = released.provenance();
    ReidentificationReport {
        adversary: *adv,
        unique_match_rate: unique / n,
        mean_candidate_set_size: cands / n,
        safeguard_applied: (!safeguard.is_empty()).then(|| safeguard.join("; ")),
        resamples: outcomes.iter().map(|o| o.resamples).sum(),
        dataset_fingerprint: released.fingerprint().to_string(),
    }
}

/// Risk of the data as released, with no safeguard between knowledge and release.
pub fn reidentification_risk(ds: &RatingsDataset, adv: &AdversaryModel) -> Result<ReidentificationReport> {
    reidentification_risk_after(ds, ds, adv)
}

/// Risk when the adversary's knowledge comes from `original` and matching
/// happens in `released` (e.g. a perturbed copy). A unique match counts
/// only when the single candidate is the target.
pub fn reidentification_risk_after(
    original: &RatingsDataset,
    released: &RatingsDataset,
    adv: &AdversaryModel,
) -> Result<ReidentificationReport> {
    let outcomes = run_trials(original, released, adv)?;
    Ok(summarize(&outcomes, adv, released))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskPoint {
    pub k: usize,
    pub unique_match_rate: f64,
    pub mean_candidate_set_size: f64,
}

pub fn risk_curve(
    ds: &RatingsDataset,
    ks: &[usize],
    rating_tolerance: u8,
    trials: usize,
    seed: u64,
) -> Result<Vec<RiskPoint>> {
    ks.iter()
        .map(|&k| {
            let rep = reidentification_risk(
                ds,
                &AdversaryModel {
                    known_pairs: KnownPairs::Count(k),
                    rating_tolerance,
                    trials,
                    seed,
                },
            )?;
            Ok(RiskPoint {
                k,
                unique_match_rate: rep.unique_match_rate,
                mean_candidate_set_size: rep.mean_candidate_set_size,
            })
        })
        .collect()
}

pub fn write_risk_curve_csv<W: Write>(points: &[RiskPoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["k", "unique_match_rate", "mean_candidate_set_size"])?;
    for p in points {
        w.write_record([
            p.k.to_string(),
            format!("{:.6}", p.unique_match_rate),
            format!("{:.6}", p.mean_candidate_set_size),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Perturbation {
    /// Each rating moves by +1 or -1 (even odds) with probability `p`,
    /// clamped to 1..=5.
    RatingJitter { p: f64 },
    /// Each rating is dropped with probability `q`.
    Suppression { q: f64 },
}

impl Perturbation {
    pub fn describe(&self) -> String {
        match self {
            Perturbation::RatingJitter { p } => format!("rating_jitter(p={p})"),
            Perturbation::Suppression { q } => format!("suppression(q={q})"),
        }
    }
}

/// Returns a perturbed copy; the input is untouched. The copy accepts users
/// with at least one rating, and fails if suppression empties any profile.
pub fn apply_perturbation(ds: &RatingsDataset, noise: Perturbation, seed: u64) -> Result<RatingsDataset> {
    let prob = match noise {
        Perturbation::RatingJitter { p } => p,
        Perturbation::Suppression { q } => q,
    };
    if !(0.0..=1.0).contains(&prob) {
        return Err(Error::InvalidArgument(format!("probability {prob} outside [0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(ds.ratings().len());
    for r in ds.ratings() {
        let hit = rng.gen_bool(prob);
        let up = rng.gen_bool(0.5);
        match noise {
            Perturbation::RatingJitter { .. } => {
                let mut r = *r;
                if hit {
                    r.rating = if up {
                        (r.rating + 1).min(5)
                    } else {
                        (r.rating - 1).max(1)
                    };
                }
                out.push(r);
            }
            Perturbation::Suppression { .. } => {
                if !hit {
                    out.push(*r);
                }
            }
        }
    }
    if let Perturbation::Suppression { .. } = noise {
        let kept: std::collections::BTreeSet<u32> = out.iter().map(|r| r.user_id).collect();
        if let Some(u) = ds.rating_users().find(|u| !kept.contains(u)) {
            return Err(Error::TooFewRatings {
                user_id: u,
                count: 0,
                min: 1,
            });
        }
    }
    let mut released = ds.with_ratings_min(out, 1, noise.describe())?;
    released.push_provenance(format!("seed={seed}"));
    Ok(released)
}
