//! User-based collaborative filtering and the catalogue-expansion
//! simulation built on it.
//!
//! [`expand_and_compare`] trains one model on the existing genres and one
//! on the existing genres plus the new genre, using the same train/holdout
//! split, and reports how top-k lists and prediction error change.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{GenreSet, RatingRecord, RatingsDataset};
use crate::error::{Error, Result};

pub const DEFAULT_NEIGHBORS: usize = 30;
pub const DEFAULT_TOP_K: usize = 10;
pub const DEFAULT_HOLDOUT: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Similarity {
    CosineMeanCentered,
}

/// Trained user-based k-NN recommender.
#[derive(Debug, Clone)]
pub struct RecommenderModel {
    pub neighbor_count: usize,
    pub similarity: Similarity,
    pub item_universe: BTreeSet<u32>,
    pub trained_on: String,
    user_index: HashMap<u32, usize>,
    /// Per user: (item, mean-centred rating), sorted by item.
    profiles: Vec<Vec<(u32, f64)>>,
    user_means: Vec<f64>,
    norms: Vec<f64>,
    /// Per item: (user index, mean-centred rating).
    raters: HashMap<u32, Vec<(usize, f64)>>,
    item_means: HashMap<u32, f64>,
    global_mean: f64,
}

impl RecommenderModel {
    /// Fits on every rating in `ds` whose item is in `item_universe`.
    pub fn train(ds: &RatingsDataset, item_universe: &BTreeSet<u32>, neighbor_count: usize) -> Result<Self> {
        Self::train_on(ds.ratings(), item_universe, neighbor_count, ds.fingerprint())
    }

    pub fn train_on(
        ratings: &[RatingRecord],
        item_universe: &BTreeSet<u32>,
        neighbor_count: usize,
        trained_on: &str,
    ) -> Result<Self> {
        if neighbor_count == 0 {
            return Err(Error::InvalidArgument("neighbor_count must be at least 1".into()));
        }
        if item_universe.is_empty() {
            return Err(Error::InvalidArgument("item universe is empty".into()));
        }
        let mut by_user: BTreeMap<u32, Vec<(u32, f64)>> = BTreeMap::new();
        let mut item_acc: BTreeMap<u32, (f64, usize)> = BTreeMap::new();
        let (mut total, mut count) = (0.0, 0usize);
        for r in ratings.iter().filter(|r| item_universe.contains(&r.item_id)) {
            by_user.entry(r.user_id).or_default().push((r.item_id, r.rating as f64));
            let e = item_acc.entry(r.item_id).or_insert((0.0, 0));
            e.0 += r.rating as f64;
            e.1 += 1;
            total += r.rating as f64;
            count += 1;
        }
        let global_mean = if count > 0 { total / count as f64 } else { 3.0 };

        let mut user_index = HashMap::new();
        let mut profiles = Vec::with_capacity(by_user.len());
        let mut user_means = Vec::with_capacity(by_user.len());
        let mut norms = Vec::with_capacity(by_user.len());
        let mut raters: HashMap<u32, Vec<(usize, f64)>> = HashMap::new();
        for (idx, (user, mut items)) in by_user.into_iter().enumerate() {
            items.sort_by_key(|(i, _)| *i);
            let mean = items.iter().map(|(_, r)| r).sum::<f64>() / items.len() as f64;
            let centred: Vec<(u32, f64)> = items.iter().map(|&(i, r)| (i, r - mean)).collect();
            norms.push(centred.iter().map(|(_, c)| c * c).sum::<f64>().sqrt());
            for &(i, c) in &centred {
                raters.entry(i).or_default().push((idx, c));
            }
            user_index.insert(user, idx);
            user_means.push(mean);
            profiles.push(centred);
        }

        Ok(RecommenderModel {
            neighbor_count,
            similarity: Similarity::CosineMeanCentered,
            item_universe: item_universe.clone(),
            trained_on: trained_on.to_string(),
            user_index,
            profiles,
            user_means,
            norms,
            raters,
            item_means: item_acc.into_iter().map(|(i, (s, n))| (i, s / n as f64)).collect(),
            global_mean,
        })
    }

    /// Similarity of user `u` (by index) to every training user.
    fn similarities(&self, u: usize) -> Vec<f64> {
        let mut dot = vec![0.0; self.profiles.len()];
        for &(i, cu) in &self.profiles[u] {
            for &(v, cv) in &self.raters[&i] {
                dot[v] += cu * cv;
            }
        }
        for (v, d) in dot.iter_mut().enumerate() {
            let denom = self.norms[u] * self.norms[v];
            *d = if v == u || denom == 0.0 { 0.0 } else { *d / denom };
        }
        dot
    }

    /// Item mean, then global mean.
    pub fn predict_fallback(&self, item: u32) -> f64 {
        self.item_means.get(&item).copied().unwrap_or(self.global_mean)
    }

    fn predict_with(&self, u: usize, sims: &[f64], item: u32) -> f64 {
        let mut neigh: Vec<(f64, usize, f64)> = self
            .raters
            .get(&item)
            .map(|rs| {
                rs.iter()
                    .filter(|&&(v, _)| v != u && sims[v] > 0.0)
                    .map(|&(v, c)| (sims[v], v, c))
                    .collect()
            })
            .unwrap_or_default();
        if neigh.is_empty() {
            return self.predict_fallback(item);
        }
        neigh.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        neigh.truncate(self.neighbor_count);
        let (num, den) = neigh.iter().fold((0.0, 0.0), |(n, d), &(s, _, c)| (n + s * c, d + s));
        (self.user_means[u] + num / den).clamp(1.0, 5.0)
    }

    pub fn predict(&self, user: u32, item: u32) -> f64 {
        match self.user_index.get(&user) {
            Some(&u) => {
                let sims = self.similarities(u);
                self.predict_with(u, &sims, item)
            }
            None => self.predict_fallback(item),
        }
    }

    /// Predictions for many items of one user, sharing the similarity pass.
    pub fn predict_many(&self, user: u32, items: &[u32]) -> Vec<f64> {
        match self.user_index.get(&user) {
            Some(&u) => {
                let sims = self.similarities(u);
                items.iter().map(|&i| self.predict_with(u, &sims, i)).collect()
            }
            None => items.iter().map(|&i| self.predict_fallback(i)).collect(),
        }
    }

    /// Items the user has rated in training.
    pub fn rated(&self, user: u32) -> BTreeSet<u32> {
        self.user_index
            .get(&user)
            .map(|&u| self.profiles[u].iter().map(|(i, _)| *i).collect())
            .unwrap_or_default()
    }

    /// Highest-predicted unrated universe items, ties by ascending item id.
    pub fn top_k(&self, user: u32, k: usize) -> Vec<u32> {
        let rated = self.rated(user);
        let candidates: Vec<u32> = self
            .item_universe
            .iter()
            .copied()
            .filter(|i| !rated.contains(i))
            .collect();
        let preds = self.predict_many(user, &candidates);
        let mut scored: Vec<(f64, u32)> = preds.into_iter().zip(candidates).collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        scored.into_iter().take(k).map(|(_, i)| i).collect()
    }
}

/// Root mean squared error over `ratings`, grouped per user so each
/// similarity pass is shared. `fallback_only` skips the neighbours.
pub fn rmse(model: &RecommenderModel, ratings: &[RatingRecord], fallback_only: bool) -> Option<f64> {
    if ratings.is_empty() {
        return None;
    }
    let mut by_user: BTreeMap<u32, Vec<&RatingRecord>> = BTreeMap::new();
    for r in ratings {
        by_user.entry(r.user_id).or_default().push(r);
    }
    let groups: Vec<(u32, Vec<&RatingRecord>)> = by_user.into_iter().collect();
    let sq: Vec<f64> = groups
        .par_iter()
        .map(|(u, rs)| {
            let items: Vec<u32> = rs.iter().map(|r| r.item_id).collect();
            let preds = if fallback_only {
                items.iter().map(|&i| model.predict_fallback(i)).collect()
            } else {
                model.predict_many(*u, &items)
            };
            preds.iter().zip(rs).map(|(p, r)| (p - r.rating as f64).powi(2)).sum()
        })
        .collect();
    Some((sq.iter().sum::<f64>() / ratings.len() as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpactConfig {
    pub old_genres: Vec<String>,
    pub new_genre: String,
    pub k_top: usize,
    pub holdout_fraction: f64,
    pub neighbor_count: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserImpact {
    pub user_id: u32,
    pub new_genre_share_in_topk: f64,
    pub old_share_in_topk: f64,
    pub retained_overlap: f64,
    pub top_k_old: Vec<u32>,
    pub top_k_new: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    pub mean: f64,
    pub min: f64,
    pub p10: f64,
    pub p25: f64,
    pub median: f64,
    pub p75: f64,
    pub p90: f64,
    pub max: f64,
}

impl Distribution {
    fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let h = (v.len() - 1) as f64 * p;
            let lo = h.floor() as usize;
            let hi = h.ceil() as usize;
            v[lo] + (h - lo as f64) * (v[hi] - v[lo])
        };
        Some(Distribution {
            mean: values.iter().sum::<f64>() / values.len() as f64,
            min: v[0],
            p10: q(0.10),
            p25: q(0.25),
            median: q(0.5),
            p75: q(0.75),
            p90: q(0.90),
            max: v[v.len() - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpactReport {
    pub config: ImpactConfig,
    pub k_top: usize,
    /// True when the new genre adds no item beyond the existing genres.
    pub degenerate: bool,
    pub old_items: usize,
    pub new_only_items: usize,
    pub holdout_ratings: usize,
    pub rmse_old_model: Option<f64>,
    pub rmse_new_model: Option<f64>,
    pub rmse_delta: Option<f64>,
    pub new_genre_share: Option<Distribution>,
    pub retained_overlap: Option<Distribution>,
    pub per_user: Vec<UserImpact>,
    pub dataset_fingerprint: String,
}

impl ImpactReport {
    pub fn mean_new_genre_share(&self) -> f64 {
        self.new_genre_share.as_ref().map_or(0.0, |d| d.mean)
    }

    pub fn write_user_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["user_id", "new_genre_share", "retained_overlap"])?;
        for u in &self.per_user {
            w.write_record([
                u.user_id.to_string(),
                format!("{:.6}", u.new_genre_share_in_topk),
                format!("{:.6}", u.retained_overlap),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn jaccard(a: &[u32], b: &[u32]) -> f64 {
    let a: BTreeSet<_> = a.iter().collect();
    let b: BTreeSet<_> = b.iter().collect();
    let union = a.union(&b).count();
    if union == 0 {
        1.0
    } else {
        a.intersection(&b).count() as f64 / union as f64
    }
}

/// Seeded split of the ratings into (train, holdout).
pub fn holdout_split(ratings: &[RatingRecord], fraction: f64, seed: u64) -> (Vec<RatingRecord>, Vec<RatingRecord>) {
    let mut order: Vec<usize> = (0..ratings.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_hold = (ratings.len() as f64 * fraction).round() as usize;
    let mut hold_mask = vec![false; ratings.len()];
    for &i in &order[..n_hold] {
        hold_mask[i] = true;
    }
    let (mut train, mut hold) = (Vec::new(), Vec::new());
    for (r, h) in ratings.iter().zip(hold_mask) {
        if h {
            hold.push(*r);
        } else {
            train.push(*r);
        }
    }
    (train, hold)
}

pub fn expand_and_compare(ds: &RatingsDataset, cfg: &ImpactConfig) -> Result<ImpactReport> {
    let old_set = ds.genre_set(&cfg.old_genres)?;
    let new_idx = ds.genre_index(&cfg.new_genre)?;
    if old_set.contains(new_idx) {
        return Err(Error::InvalidArgument(format!(
            "{} is already an existing genre",
            cfg.new_genre
        )));
    }
    if !(cfg.holdout_fraction > 0.0 && cfg.holdout_fraction <= 0.5) {
        return Err(Error::InvalidArgument("holdout fraction must lie in (0, 0.5]".into()));
    }
    if cfg.k_top == 0 {
        return Err(Error::InvalidArgument("top-k must be at least 1".into()));
    }

    // Items already in an existing genre stay "old" even if they carry the new one.
    let new_set = GenreSet::from_indices([new_idx]);
    let old_items: BTreeSet<u32> = ds
        .items()
        .values()
        .filter(|it| it.genres.intersects(old_set))
        .map(|it| it.item_id)
        .collect();
    let new_only: BTreeSet<u32> = ds
        .items()
        .values()
        .filter(|it| it.genres.intersects(new_set) && !it.genres.intersects(old_set))
        .map(|it| it.item_id)
        .collect();
    let expanded: BTreeSet<u32> = old_items.union(&new_only).copied().collect();

    let (train, hold) = holdout_split(ds.ratings(), cfg.holdout_fraction, cfg.seed);
    let tag = format!(
        "{}:holdout={}:seed={}",
        ds.fingerprint(),
        cfg.holdout_fraction,
        cfg.seed
    );
    let model_old = RecommenderModel::train_on(&train, &old_items, cfg.neighbor_count, &tag)?;
    let model_new = RecommenderModel::train_on(&train, &expanded, cfg.neighbor_count, &tag)?;

    let hold_old: Vec<RatingRecord> = hold.into_iter().filter(|r| old_items.contains(&r.item_id)).collect();
    let rmse_old = rmse(&model_old, &hold_old, false);
    let rmse_new = rmse(&model_new, &hold_old, false);

    let users: Vec<u32> = ds.rating_users().collect();
    let per_user: Vec<UserImpact> = users
        .par_iter()
        .filter_map(|&u| {
            let top_old = model_old.top_k(u, cfg.k_top);
            let top_new = model_new.top_k(u, cfg.k_top);
            if top_new.is_empty() {
                return None;
            }
            let n = top_new.len() as f64;
            let new_hits = top_new.iter().filter(|i| new_only.contains(i)).count() as f64;
            let old_hits = top_new.iter().filter(|i| old_items.contains(i)).count() as f64;
            let retained: Vec<u32> = top_new.iter().copied().filter(|i| old_items.contains(i)).collect();
            Some(UserImpact {
                user_id: u,
                new_genre_share_in_topk: new_hits / n,
                old_share_in_topk: old_hits / n,
                retained_overlap: jaccard(&top_old, &retained),
                top_k_old: top_old,
                top_k_new: top_new,
            })
        })
        .collect();

    let shares: Vec<f64> = per_user.iter().map(|u| u.new_genre_share_in_topk).collect();
    let overlaps: Vec<f64> = per_user.iter().map(|u| u.retained_overlap).collect();
    Ok(ImpactReport {
        config: cfg.clone(),
        k_top: cfg.k_top,
        degenerate: new_only.is_empty(),
        old_items: old_items.len(),
        new_only_items: new_only.len(),
        holdout_ratings: hold_old.len(),
        rmse_old_model: rmse_old,
        rmse_new_model: rmse_new,
        rmse_delta: rmse_old.zip(rmse_new).map(|(a, b)| b - a),
        new_genre_share: Distribution::of(&shares),
        retained_overlap: Distribution::of(&overlaps),
        per_user,
        dataset_fingerprint: ds.fingerprint().to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{DatasetParts, Item};
    use approx::assert_abs_diff_eq;

    fn rr(u: u32, i: u32, r: u8) -> RatingRecord {
        RatingRecord {
            user_id: u,
            item_id: i,
            rating: r,
            timestamp: 0,
        }
    }

    #[test]
    fn twin_prediction_hand_computed() {
        // User 1 rates items 1..3 as 5,3,1; user 2 identical plus item 4 = 4.
        // mean1 = 3, mean2 = 13/4; cosine(1,2) > 0 and user 2 is the only
        // rater of item 4, so pred = 3 + (4 - 3.25) = 3.75.
        let ratings = vec![
            rr(1, 1, 5),
            rr(1, 2, 3),
            rr(1, 3, 1),
            rr(2, 1, 5),
            rr(2, 2, 3),
            rr(2, 3, 1),
            rr(2, 4, 4),
        ];
        let universe: BTreeSet<u32> = (1..=5).collect();
        let m = RecommenderModel::train_on(&ratings, &universe, 5, "t").unwrap();
        assert_abs_diff_eq!(m.predict(1, 4), 3.75, epsilon = 1e-12);
        // item 5 unrated by anybody -> global mean 22/7
        assert_abs_diff_eq!(m.predict(1, 5), 22.0 / 7.0, epsilon = 1e-12);
        // unknown user -> item mean
        assert_abs_diff_eq!(m.predict(99, 1), 5.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_neighbors_rejected() {
        let universe: BTreeSet<u32> = [1].into_iter().collect();
        assert!(RecommenderModel::train_on(&[rr(1, 1, 3)], &universe, 0, "t").is_err());
        assert!(RecommenderModel::train_on(&[rr(1, 1, 3)], &BTreeSet::new(), 3, "t").is_err());
    }

    #[test]
    fn quantiles_interpolate() {
        let d = Distribution::of(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(d.median, 3.0);
        assert_eq!(d.p25, 2.0);
        assert_abs_diff_eq!(d.p10, 1.4, epsilon = 1e-12);
        assert_eq!(d.mean, 3.0);
    }

    #[test]
    fn holdout_split_partitions() {
        let ratings: Vec<RatingRecord> = (1..=50).map(|i| rr(1, i, 3)).collect();
        let (t, h) = holdout_split(&ratings, 0.2, 5);
        assert_eq!(h.len(), 10);
        assert_eq!(t.len(), 40);
        let (t2, h2) = holdout_split(&ratings, 0.2, 5);
        assert_eq!((t, h), (t2, h2));
    }

    fn small_catalogue() -> RatingsDataset {
        let mut items = Vec::new();
        for i in 1..=12u32 {
            items.push(Item {
                item_id: i,
                title: String::new(),
                genres: GenreSet::from_indices([if i <= 8 { 0 } else { 1 }]),
            });
        }
        let mut ratings = Vec::new();
        for u in 1..=10u32 {
            for i in 1..=12u32 {
                if (u + i) % 3 != 0 {
                    ratings.push(rr(u, i, (1 + (u * i) % 5) as u8));
                }
            }
        }
        RatingsDataset::new(
            DatasetParts {
                genres: vec!["Old".into(), "New".into(), "Empty".into()],
                items,
                users: None,
                ratings,
            },
            1,
        )
        .unwrap()
    }

    #[test]
    fn empty_new_genre_is_a_no_op() {
        let ds = small_catalogue();
        let rep = expand_and_compare(
            &ds,
            &ImpactConfig {
                old_genres: vec!["Old".into(), "New".into()],
                new_genre: "Empty".into(),
                k_top: 3,
                holdout_fraction: 0.2,
                neighbor_count: 5,
                seed: 1,
            },
        )
        .unwrap();
        assert!(rep.degenerate);
        assert_eq!(rep.rmse_delta, Some(0.0));
        assert!(rep
            .per_user
            .iter()
            .all(|u| u.retained_overlap == 1.0 && u.top_k_old == u.top_k_new));
    }

    #[test]
    fn preconditions() {
        let ds = small_catalogue();
        let mut cfg = ImpactConfig {
            old_genres: vec!["Old".into()],
            new_genre: "Old".into(),
            k_top: 3,
            holdout_fraction: 0.2,
            neighbor_count: 5,
            seed: 1,
        };
        assert!(expand_and_compare(&ds, &cfg).is_err());
        cfg.new_genre = "New".into();
        cfg.holdout_fraction = 0.6;
        assert!(expand_and_compare(&ds, &cfg).is_err());
        cfg.holdout_fraction = 0.0;
        assert!(expand_and_compare(&ds, &cfg).is_err());
    }

    /// Old items 1..=20 rated 1 and new items 21..=40 rated 5; each user
    /// rates every other item of each block so plenty remain unrated.
    pub(super) fn dominance_fixture() -> RatingsDataset {
        let items = (1..=40u32)
            .map(|i| Item {
                item_id: i,
                title: String::new(),
                genres: GenreSet::from_indices([if i <= 20 { 0 } else { 1 }]),
            })
            .collect();
        let mut ratings = Vec::new();
        for u in 1..=30u32 {
            for i in 1..=40u32 {
                if (u + i) % 2 == 0 || i % 7 == 0 {
                    ratings.push(rr(u, i, if i <= 20 { 1 } else { 5 }));
                }
            }
        }
        RatingsDataset::new(
            DatasetParts {
                genres: vec!["Old".into(), "New".into()],
                items,
                users: None,
                ratings,
            },
            1,
        )
        .unwrap()
    }

    #[test]
    fn dominance_fixture_fills_topk_with_new_items() {
        let ds = dominance_fixture();
        let rep = expand_and_compare(
            &ds,
            &ImpactConfig {
                old_genres: vec!["Old".into()],
                new_genre: "New".into(),
                k_top: 5,
                holdout_fraction: 0.2,
                neighbor_count: 10,
                seed: 3,
            },
        )
        .unwrap();
        assert!(!rep.degenerate);
        assert!(rep.mean_new_genre_share() >= 0.9, "{}", rep.mean_new_genre_share());
        for u in &rep.per_user {
            assert_abs_diff_eq!(u.new_genre_share_in_topk + u.old_share_in_topk, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn topk_excludes_training_items() {
        let ds = small_catalogue();
        let universe: BTreeSet<u32> = ds.items().keys().copied().collect();
        let (train, _) = holdout_split(ds.ratings(), 0.3, 9);
        let m = RecommenderModel::train_on(&train, &universe, 4, "t").unwrap();
        for u in ds.rating_users() {
            let seen: BTreeSet<u32> = train.iter().filter(|r| r.user_id == u).map(|r| r.item_id).collect();
            let top = m.top_k(u, 5);
            assert!(top.iter().all(|i| !seen.contains(i)));
        }
    }

    #[test]
    fn neighbours_beat_fallback_on_grouped_tastes() {
        // Two taste groups disagree on which half of the old items is good,
        // so the item mean sits between them while neighbours do not.
        let items = (1..=30u32)
            .map(|i| Item {
                item_id: i,
                title: String::new(),
                genres: GenreSet::from_indices([if i <= 20 { 0 } else { 1 }]),
            })
            .collect();
        let mut ratings = Vec::new();
        for u in 1..=40u32 {
            let group_a = u % 2 == 0;
            for i in 1..=30u32 {
                if i > 20 && (u + i) % 3 == 0 {
                    continue;
                }
                let r = match (i <= 10, i <= 20) {
                    (_, false) => 5,
                    (true, _) => {
                        if group_a {
                            1
                        } else {
                            3
                        }
                    }
                    (false, _) => {
                        if group_a {
                            3
                        } else {
                            1
                        }
                    }
                };
                ratings.push(rr(u, i, r));
            }
        }
        let ds = RatingsDataset::new(
            DatasetParts {
                genres: vec!["Old".into(), "New".into()],
                items,
                users: None,
                ratings,
            },
            1,
        )
        .unwrap();
        let universe: BTreeSet<u32> = ds.items().keys().copied().collect();
        let (train, hold) = holdout_split(ds.ratings(), 0.2, 11);
        let m = RecommenderModel::train_on(&train, &universe, 10, "t").unwrap();
        let hold_old: Vec<RatingRecord> = hold.into_iter().filter(|r| r.item_id <= 20).collect();
        let trained = rmse(&m, &hold_old, false).unwrap();
        let fallback = rmse(&m, &hold_old, true).unwrap();
        assert!(fallback >= trained, "fallback {fallback} trained {trained}");
        assert!(trained < 0.5, "trained {trained} fallback {fallback}");
    }

    #[test]
    fn deterministic_under_seed() {
        let ds = dominance_fixture();
        let cfg = ImpactConfig {
            old_genres: vec!["Old".into()],
            new_genre: "New".into(),
            k_top: 4,
            holdout_fraction: 0.25,
            neighbor_count: 7,
            seed: 42,
        };
        assert_eq!(
            expand_and_compare(&ds, &cfg).unwrap(),
            expand_and_compare(&ds, &cfg).unwrap()
        );
    }
}
