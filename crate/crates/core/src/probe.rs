//! Attribute-predictability probe.
//!
//! Measures whether a demographic attribute becomes easier to predict from
//! rating data once the processed genre set grows. MovieLens carries no
//! special-category labels, so gender and age bands act as proxies and
//! every report says so.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Gender, GenreSet, RatingsDataset};
use crate::error::{Error, Result};

pub const DEFAULT_NEIGHBORS: usize = 15;
pub const DEFAULT_FOLDS: usize = 5;

pub const PROXY_NOTE: &str = "proxy probe: the attribute is a demographic stand-in for special categories of data";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attribute {
    Gender,
    AgeBand,
}

impl Attribute {
    pub fn class_names(&self) -> &'static [&'static str] {
        match self {
            Attribute::Gender => &["M", "F"],
            Attribute::AgeBand => &["<18", "18-34", "35-54", "55+"],
        }
    }

    fn label(&self, age: u32, gender: Gender) -> u8 {
        match self {
            Attribute::Gender => match gender {
                Gender::M => 0,
                Gender::F => 1,
            },
            Attribute::AgeBand => match age {
                0..=17 => 0,
                18..=34 => 1,
                35..=54 => 2,
                _ => 3,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub attribute: Attribute,
    pub genre_set_old: Vec<String>,
    pub genre_set_new: Vec<String>,
    pub neighbors: usize,
    pub folds: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldAccuracy {
    pub fold: usize,
    pub test_users: usize,
    pub baseline: Option<f64>,
    pub model_old: Option<f64>,
    pub model_new: Option<f64>,
    pub skipped: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictabilityReport {
    pub attribute: Attribute,
    pub note: String,
    pub genre_set_old: Vec<String>,
    pub genre_set_new: Vec<String>,
    pub baseline_accuracy: f64,
    pub model_accuracy_old: f64,
    pub model_accuracy_new: f64,
    pub delta: f64,
    pub folds: usize,
    pub neighbors: usize,
    pub seed: u64,
    pub users_evaluated: usize,
    pub users_excluded: usize,
    pub per_fold: Vec<FoldAccuracy>,
    pub dataset_fingerprint: String,
}

/// Mean-centred sparse rating vector over the items of a genre set.
struct UserVector {
    items: Vec<u32>,
    values: Vec<f64>,
    norm: f64,
}

fn user_vector(ds: &RatingsDataset, user: u32, genres: GenreSet) -> Option<UserVector> {
    let kept: Vec<(u32, f64)> = ds
        .user_ratings(user)
        .iter()
        .filter(|r| ds.items()[&r.item_id].genres.intersects(genres))
        .map(|r| (r.item_id, r.rating as f64))
        .collect();
    if kept.is_empty() {
        return None;
    }
    let mean = kept.iter().map(|(_, v)| v).sum::<f64>() / kept.len() as f64;
    let values: Vec<f64> = kept.iter().map(|(_, v)| v - mean).collect();
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    Some(UserVector {
        items: kept.iter().map(|(i, _)| *i).collect(),
        values,
        norm,
    })
}

/// Cosine of two mean-centred vectors; 0 when either is the zero vector.
fn cosine(a: &UserVector, b: &UserVector) -> f64 {
    if a.norm == 0.0 || b.norm == 0.0 {
        return 0.0;
    }
    let (mut i, mut j, mut dot) = (0, 0, 0.0);
    while i < a.items.len() && j < b.items.len() {
        match a.items[i].cmp(&b.items[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                dot += a.values[i] * b.values[j];
                i += 1;
                j += 1;
            }
        }
    }
    dot / (a.norm * b.norm)
}

fn similarity_matrix(vectors: &[UserVector]) -> Vec<Vec<f64>> {
    (0..vectors.len())
        .into_par_iter()
        .map(|a| vectors.iter().map(|v| cosine(&vectors[a], v)).collect())
        .collect()
}

fn majority(labels: impl Iterator<Item = u8>, classes: usize) -> Option<u8> {
    let mut counts = vec![0usize; classes];
    for l in labels {
        counts[l as usize] += 1;
    }
    let best = *counts.iter().max()?;
    if best == 0 {
        return None;
    }
    counts.iter().position(|&c| c == best).map(|c| c as u8)
}

/// Unweighted vote of the `k` most similar training users. Similarity ties
/// are broken by lower user index, vote ties toward `fallback`.
fn knn_predict(sims: &[f64], train: &[usize], labels: &[u8], k: usize, classes: usize, fallback: u8) -> u8 {
    let mut cand: Vec<usize> = train.to_vec();
    let k = k.min(cand.len());
    cand.sort_by(|&a, &b| sims[b].total_cmp(&sims[a]).then(a.cmp(&b)));
    let mut votes = vec![0usize; classes];
    for &n in &cand[..k] {
        votes[labels[n] as usize] += 1;
    }
    let best = *votes.iter().max().unwrap_or(&0);
    if votes[fallback as usize] == best {
        return fallback;
    }
    votes.iter().position(|&v| v == best).unwrap_or(fallback as usize) as u8
}

/// Stratified assignment: each class is shuffled and dealt round-robin,
/// continuing the deal across classes so fold sizes stay balanced.
fn stratified_folds(labels: &[u8], classes: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![0usize; labels.len()];
    let mut next = 0usize;
    for c in 0..classes as u8 {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        members.shuffle(&mut rng);
        for m in members {
            assignment[m] = next % folds;
            next += 1;
        }
    }
    assignment
}

pub fn predictability_probe(ds: &RatingsDataset, cfg: &ProbeConfig) -> Result<PredictabilityReport> {
    let profiles = ds.users().ok_or(Error::NoUserProfiles)?;
    if cfg.folds < 2 {
        return Err(Error::InvalidArgument("folds must be at least 2".into()));
    }
    if cfg.neighbors < 1 {
        return Err(Error::InvalidArgument("neighbor count must be at least 1".into()));
    }
    let old_set = ds.genre_set(&cfg.genre_set_old)?;
    let new_set = ds.genre_set(&cfg.genre_set_new)?;
    if !old_set.is_subset(new_set) {
        return Err(Error::InvalidArgument(
            "old genre set must be contained in the new genre set".into(),
        ));
    }

    let classes = cfg.attribute.class_names().len();
    let mut users = Vec::new();
    let mut old_vecs = Vec::new();
    let mut new_vecs = Vec::new();
    let mut excluded = 0;
    for u in ds.rating_users() {
        match (user_vector(ds, u, old_set), user_vector(ds, u, new_set)) {
            (Some(o), Some(n)) => {
                users.push(u);
                old_vecs.push(o);
                new_vecs.push(n);
            }
            _ => excluded += 1,
        }
    }
    if users.len() < cfg.folds {
        return Err(Error::InvalidArgument(format!(
            "{} usable users for {} folds",
            users.len(),
            cfg.folds
        )));
    }
    let labels: Vec<u8> = users
        .iter()
        .map(|u| {
            let p = &profiles[u];
            cfg.attribute.label(p.age, p.gender)
        })
        .collect();

    let assignment = stratified_folds(&labels, classes, cfg.folds, cfg.seed);
    let sims_old = similarity_matrix(&old_vecs);
    let sims_new = similarity_matrix(&new_vecs);

    struct FoldCounts {
        acc: FoldAccuracy,
        correct: Option<(usize, usize, usize)>,
    }

    let per_fold: Vec<FoldCounts> = (0..cfg.folds)
        .into_par_iter()
        .map(|f| {
            let test: Vec<usize> = (0..users.len()).filter(|&i| assignment[i] == f).collect();
            let train: Vec<usize> = (0..users.len()).filter(|&i| assignment[i] != f).collect();
            let train_classes = {
                let mut seen = vec![false; classes];
                for &t in &train {
                    seen[labels[t] as usize] = true;
                }
                seen.iter().filter(|&&s| s).count()
            };
            if train_classes < 2 || test.is_empty() {
                return FoldCounts {
                    acc: FoldAccuracy {
                        fold: f,
                        test_users: test.len(),
                        baseline: None,
                        model_old: None,
                        model_new: None,
                        skipped: Some(if test.is_empty() {
                            "empty test fold".into()
                        } else {
                            "training fold holds a single class".into()
                        }),
                    },
                    correct: None,
                };
            }
            let maj = majority(train.iter().map(|&t| labels[t]), classes).expect("non-empty training fold");
            let (mut base, mut old, mut new) = (0, 0, 0);
            for &t in &test {
                base += (labels[t] == maj) as usize;
                old += (knn_predict(&sims_old[t], &train, &labels, cfg.neighbors, classes, maj) == labels[t]) as usize;
                new += (knn_predict(&sims_new[t], &train, &labels, cfg.neighbors, classes, maj) == labels[t]) as usize;
            }
            let n = test.len() as f64;
            FoldCounts {
                acc: FoldAccuracy {
                    fold: f,
                    test_users: test.len(),
                    baseline: Some(base as f64 / n),
                    model_old: Some(old as f64 / n),
                    model_new: Some(new as f64 / n),
                    skipped: None,
                },
                correct: Some((base, old, new)),
            }
        })
        .collect();

    let (mut n, mut base, mut old, mut new) = (0usize, 0usize, 0usize, 0usize);
    for f in &per_fold {
        if let Some((b, o, w)) = f.correct {
            n += f.acc.test_users;
            base += b;
            old += o;
            new += w;
        }
    }
    if n == 0 {
        return Err(Error::InvalidArgument("every fold was skipped".into()));
    }
    let (baseline, acc_old, acc_new) = (base as f64 / n as f64, old as f64 / n as f64, new as f64 / n as f64);

    Ok(PredictabilityReport {
        attribute: cfg.attribute,
        note: PROXY_NOTE.into(),
        genre_set_old: cfg.genre_set_old.clone(),
        genre_set_new: cfg.genre_set_new.clone(),
        baseline_accuracy: baseline,
        model_accuracy_old: acc_old,
        model_accuracy_new: acc_new,
        delta: acc_new - acc_old,
        folds: cfg.folds,
        neighbors: cfg.neighbors,
        seed: cfg.seed,
        users_evaluated: n,
        users_excluded: excluded,
        per_fold: per_fold.into_iter().map(|f| f.acc).collect(),
        dataset_fingerprint: ds.fingerprint().to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{DatasetParts, Item, RatingRecord, UserProfile};

    /// Everyone rates G1 items with a user-dependent pattern; females rate
    /// G2 items 5, males rate them 1.
    pub(crate) fn separable_fixture() -> RatingsDataset {
        let mut items = Vec::new();
        for i in 1..=6u32 {
            items.push(Item {
                item_id: i,
                title: format!("g1-{i}"),
                genres: GenreSet::from_indices([0]),
            });
        }
        for i in 7..=10u32 {
            items.push(Item {
                item_id: i,
                title: format!("g2-{i}"),
                genres: GenreSet::from_indices([1]),
            });
        }
        let mut users = Vec::new();
        let mut ratings = Vec::new();
        for u in 1..=40u32 {
            let gender = if u % 2 == 0 { Gender::F } else { Gender::M };
            users.push(UserProfile {
                user_id: u,
                age: 20 + u,
                gender,
                occupation: "other".into(),
                zip: "00000".into(),
            });
            for i in 1..=6u32 {
                ratings.push(RatingRecord {
                    user_id: u,
                    item_id: i,
                    rating: (1 + (u * 7 + i * 3) % 5) as u8,
                    timestamp: 0,
                });
            }
            for i in 7..=10u32 {
                ratings.push(RatingRecord {
                    user_id: u,
                    item_id: i,
                    rating: if gender == Gender::F { 5 } else { 1 },
                    timestamp: 0,
                });
            }
        }
        RatingsDataset::new(
            DatasetParts {
                genres: vec!["G1".into(), "G2".into()],
                items,
                users: Some(users),
                ratings,
            },
            1,
        )
        .unwrap()
    }

    fn cfg(old: &[&str], new: &[&str]) -> ProbeConfig {
        ProbeConfig {
            attribute: Attribute::Gender,
            genre_set_old: old.iter().map(|s| s.to_string()).collect(),
            genre_set_new: new.iter().map(|s| s.to_string()).collect(),
            neighbors: 5,
            folds: 4,
            seed: 7,
        }
    }

    #[test]
    fn separable_fixture_is_perfectly_predicted() {
        let ds = separable_fixture();
        let rep = predictability_probe(&ds, &cfg(&["G1"], &["G1", "G2"])).unwrap();
        assert_eq!(rep.model_accuracy_new, 1.0);
        assert_eq!(rep.baseline_accuracy, 0.5);
        assert!(rep.model_accuracy_new > rep.baseline_accuracy);
        assert_eq!(rep.delta, rep.model_accuracy_new - rep.model_accuracy_old);
    }

    #[test]
    fn identical_sets_give_zero_delta() {
        let ds = separable_fixture();
        let rep = predictability_probe(&ds, &cfg(&["G1", "G2"], &["G1", "G2"])).unwrap();
        assert_eq!(rep.delta, 0.0);
    }

    #[test]
    fn deterministic_given_seed() {
        let ds = separable_fixture();
        let c = cfg(&["G1"], &["G1", "G2"]);
        assert_eq!(
            predictability_probe(&ds, &c).unwrap(),
            predictability_probe(&ds, &c).unwrap()
        );
    }

    #[test]
    fn folds_are_stratified() {
        let labels: Vec<u8> = (0..100).map(|i| (i % 4 == 0) as u8).collect();
        let a = stratified_folds(&labels, 2, 5, 3);
        for f in 0..5 {
            let in_fold: Vec<usize> = (0..100).filter(|&i| a[i] == f).collect();
            assert_eq!(in_fold.len(), 20);
            assert_eq!(in_fold.iter().filter(|&&i| labels[i] == 1).count(), 5);
        }
    }

    #[test]
    fn vote_ties_go_to_fallback() {
        let sims = [0.0, 0.9, 0.8, 0.7, 0.6];
        let labels = [0, 1, 0, 1, 0];
        // top-2 = users 1 (label 1), 2 (label 0): tie
        assert_eq!(knn_predict(&sims, &[1, 2, 3, 4], &labels, 2, 2, 0), 0);
        assert_eq!(knn_predict(&sims, &[1, 2, 3, 4], &labels, 2, 2, 1), 1);
    }

    #[test]
    fn preconditions() {
        let ds = separable_fixture();
        let mut c = cfg(&["G1", "G2"], &["G1"]);
        assert!(predictability_probe(&ds, &c).is_err());
        c = cfg(&["G1"], &["G1", "G2"]);
        c.folds = 1;
        assert!(predictability_probe(&ds, &c).is_err());
        c = cfg(&["G1"], &["Nope"]);
        assert!(matches!(predictability_probe(&ds, &c), Err(Error::UnknownGenre(_))));
    }

    #[test]
    fn missing_profiles() {
        let ds = separable_fixture();
        let no_users = RatingsDataset::new(
            DatasetParts {
                genres: ds.genres().to_vec(),
                items: ds.items().values().cloned().collect(),
                users: None,
                ratings: ds.ratings().to_vec(),
            },
            1,
        )
        .unwrap();
        assert!(matches!(
            predictability_probe(&no_users, &cfg(&["G1"], &["G1", "G2"])),
            Err(Error::NoUserProfiles)
        ));
    }
}
