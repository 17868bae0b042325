//! Purpose-link measures between genres.
//!
//! Two families: catalogue overlap (conditional probability and Jaccard
//! similarity of genre item sets) and preference correlation (Spearman or
//! Pearson correlation of per-user genre-average ratings).
//!
//! The conditional-probability matrix stores `P(item in row | item in col)`
//! for every ordered pair. Reading a pair as (new genre, existing genre),
//! the value of interest is `get(new, existing)`: the share of the existing
//! genre's items that already carry the new genre. On MovieLens-100k this
//! gives, for example,
//! `P(Action | Adventure) = 0.556` and `P(Children's | Animation) = 0.786`.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::RatingsDataset;
use crate::error::{Error, Result};
use crate::stats;

pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const DEFAULT_MIN_PAIR_USERS: usize = 10;

/// Attached to every [`CompatibilityDecision`].
pub const ADVISORY_NOTE: &str = "Advisory only: there is no established relationship between the value of \
this link measure and legal compatibility, so the threshold is a working assumption. The verdict is \
evidence for a documented assessment by a qualified assessor, not a decision.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    ConditionalProbability,
    Jaccard,
    SpearmanRho,
    PearsonR,
}

impl Measure {
    pub fn value_range(&self) -> (f64, f64) {
        match self {
            Measure::ConditionalProbability | Measure::Jaccard => (0.0, 1.0),
            Measure::SpearmanRho | Measure::PearsonR => (-1.0, 1.0),
        }
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Measure::ConditionalProbability => "conditional_probability",
            Measure::Jaccard => "jaccard",
            Measure::SpearmanRho => "spearman_rho",
            Measure::PearsonR => "pearson_r",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectionConvention {
    /// `values[r][c] = P(r | c)`.
    RowGivenColumn,
    /// `values[r][c] = P(c | r)`.
    ColumnGivenRow,
    Symmetric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkMatrix {
    pub measure: Measure,
    pub genres: Vec<String>,
    /// Row-major grid; `None` marks an undefined entry.
    pub values: Vec<Vec<Option<f64>>>,
    pub direction_convention: DirectionConvention,
    pub dataset_fingerprint: String,
    pub metadata: BTreeMap<String, String>,
}

impl LinkMatrix {
    fn position(&self, genre: &str) -> Result<usize> {
        self.genres
            .iter()
            .position(|g| g == genre)
            .ok_or_else(|| Error::UnknownGenre(genre.to_string()))
    }

    pub fn get(&self, row: &str, col: &str) -> Result<Option<f64>> {
        Ok(self.values[self.position(row)?][self.position(col)?])
    }

    /// `P(target | given)` for a conditional-probability matrix.
    pub fn conditional(&self, target: &str, given: &str) -> Result<Option<f64>> {
        match self.direction_convention {
            DirectionConvention::ColumnGivenRow => self.get(given, target),
            _ => self.get(target, given),
        }
    }

    /// Value linking a new genre to an existing one: `P(new | existing)` for
    /// conditional probabilities, the symmetric entry otherwise.
    pub fn link(&self, existing: &str, new: &str) -> Result<Option<f64>> {
        self.conditional(new, existing)
    }

    /// CSV with genre names in the first row and column, six decimals,
    /// empty cells for undefined entries.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec![String::new()];
        header.extend(self.genres.iter().cloned());
        w.write_record(&header)?;
        for (g, row) in self.genres.iter().zip(&self.values) {
            let mut rec = vec![g.clone()];
            rec.extend(row.iter().map(|v| fmt_cell(*v)));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn fmt_cell(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.6}"),
        None => String::new(),
    }
}

/// Items per analysis genre and pairwise intersection counts, in analysis
/// genre order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OverlapCounts {
    pub genres: Vec<String>,
    pub sizes: Vec<usize>,
    pub intersections: Vec<Vec<usize>>,
}

pub fn overlap_counts(ds: &RatingsDataset) -> OverlapCounts {
    let idx = ds.analysis_genres();
    let k = idx.len();
    let mut inter = vec![vec![0usize; k]; k];
    for item in ds.items().values() {
        let present: Vec<usize> = (0..k).filter(|&a| item.genres.contains(idx[a])).collect();
        for &a in &present {
            for &b in &present {
                inter[a][b] += 1;
            }
        }
    }
    OverlapCounts {
        genres: ds.analysis_genre_names(),
        sizes: (0..k).map(|a| inter[a][a]).collect(),
        intersections: inter,
    }
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Conditional-probability matrix, `values[r][c] = |r ∩ c| / |c|`.
pub fn genre_overlap_matrix(ds: &RatingsDataset) -> LinkMatrix {
    let c = overlap_counts(ds);
    let k = c.genres.len();
    let values = (0..k)
        .map(|r| (0..k).map(|col| ratio(c.intersections[r][col], c.sizes[col])).collect())
        .collect();
    LinkMatrix {
        measure: Measure::ConditionalProbability,
        genres: c.genres,
        values,
        direction_convention: DirectionConvention::RowGivenColumn,
        dataset_fingerprint: ds.fingerprint().to_string(),
        metadata: BTreeMap::new(),
    }
}

/// Jaccard similarity `|x ∩ y| / |x ∪ y|` (one minus the Jaccard distance).
pub fn jaccard_matrix(ds: &RatingsDataset) -> LinkMatrix {
    let c = overlap_counts(ds);
    let k = c.genres.len();
    let values = (0..k)
        .map(|a| {
            (0..k)
                .map(|b| {
                    let inter = c.intersections[a][b];
                    ratio(inter, c.sizes[a] + c.sizes[b] - inter)
                })
                .collect()
        })
        .collect();
    LinkMatrix {
        measure: Measure::Jaccard,
        genres: c.genres,
        values,
        direction_convention: DirectionConvention::Symmetric,
        dataset_fingerprint: ds.fingerprint().to_string(),
        metadata: BTreeMap::new(),
    }
}

/// Per-user mean rating in each analysis genre.
#[derive(Debug, Clone, PartialEq)]
pub struct UserGenreMeans {
    pub genres: Vec<String>,
    pub users: Vec<u32>,
    /// `means[u][g]`, `None` when the user rated nothing in the genre.
    pub means: Vec<Vec<Option<f64>>>,
}

impl UserGenreMeans {
    pub fn column(&self, g: usize) -> impl Iterator<Item = Option<f64>> + '_ {
        self.means.iter().map(move |row| row[g])
    }
}

pub fn genre_user_means(ds: &RatingsDataset) -> UserGenreMeans {
    let idx = ds.analysis_genres();
    let users: Vec<u32> = ds.rating_users().collect();
    let means = users
        .iter()
        .map(|&u| {
            let mut sum = vec![0u32; idx.len()];
            let mut cnt = vec![0u32; idx.len()];
            for r in ds.user_ratings(u) {
                let genres = ds.items()[&r.item_id].genres;
                for (a, &g) in idx.iter().enumerate() {
                    if genres.contains(g) {
                        sum[a] += r.rating as u32;
                        cnt[a] += 1;
                    }
                }
            }
            sum.iter()
                .zip(&cnt)
                .map(|(&s, &c)| (c > 0).then(|| s as f64 / c as f64))
                .collect()
        })
        .collect();
    UserGenreMeans {
        genres: ds.analysis_genre_names(),
        users,
        means,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationMethod {
    Spearman,
    Pearson,
}

/// Which users enter the correlation of a genre pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingMeans {
    /// Only users with a mean in both genres.
    PairwiseComplete,
    /// Every user; a missing genre mean counts as 0.
    ZeroFill,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationOptions {
    pub min_pair_users: usize,
    pub method: CorrelationMethod,
    pub missing: MissingMeans,
    /// Use the exact permutation p-value when a pair has at most
    /// [`stats::MAX_EXACT_PERMUTATION_N`] users (Spearman only).
    pub exact_small_samples: bool,
}

impl Default for CorrelationOptions {
    fn default() -> Self {
        CorrelationOptions {
            min_pair_users: DEFAULT_MIN_PAIR_USERS,
            method: CorrelationMethod::Spearman,
            missing: MissingMeans::PairwiseComplete,
            exact_small_samples: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    pub genre_a: String,
    pub genre_b: String,
    pub rho: Option<f64>,
    pub p_raw: Option<f64>,
    pub p_adjusted: Option<f64>,
    pub n_users: usize,
    /// Why `rho` is missing, if it is.
    pub missing_reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationOutput {
    pub matrix: LinkMatrix,
    pub results: Vec<CorrelationResult>,
    /// Number of pairs with a defined coefficient; the Bonferroni factor.
    pub tested_pairs: usize,
}

impl CorrelationOutput {
    pub fn pair(&self, a: &str, b: &str) -> Option<&CorrelationResult> {
        self.results
            .iter()
            .find(|r| (r.genre_a == a && r.genre_b == b) || (r.genre_a == b && r.genre_b == a))
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["genre_a", "genre_b", "rho", "p_raw", "p_adjusted", "n_users"])?;
        for r in &self.results {
            w.write_record([
                r.genre_a.clone(),
                r.genre_b.clone(),
                fmt_cell(r.rho),
                fmt_p(r.p_raw),
                fmt_p(r.p_adjusted),
                r.n_users.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

// p-values routinely underflow six decimals; keep them readable.
fn fmt_p(v: Option<f64>) -> String {
    match v {
        Some(p) if p != 0.0 && p < 1e-6 => format!("{p:.6e}"),
        other => fmt_cell(other),
    }
}

pub fn rating_correlation_matrix(ds: &RatingsDataset, opts: &CorrelationOptions) -> Result<CorrelationOutput> {
    if opts.min_pair_users < 3 {
        return Err(Error::InvalidArgument("min_pair_users must be at least 3".into()));
    }
    let means = genre_user_means(ds);
    let k = means.genres.len();
    let pairs: Vec<(usize, usize)> = (0..k).flat_map(|a| (a + 1..k).map(move |b| (a, b))).collect();

    struct Raw {
        rho: Option<f64>,
        p: Option<f64>,
        n: usize,
        reason: Option<String>,
    }

    let raw: Vec<Raw> = pairs
        .par_iter()
        .map(|&(a, b)| {
            let (x, y): (Vec<f64>, Vec<f64>) = match opts.missing {
                MissingMeans::PairwiseComplete => means
                    .column(a)
                    .zip(means.column(b))
                    .filter_map(|(x, y)| Some((x?, y?)))
                    .unzip(),
                MissingMeans::ZeroFill => means
                    .column(a)
                    .zip(means.column(b))
                    .map(|(x, y)| (x.unwrap_or(0.0), y.unwrap_or(0.0)))
                    .unzip(),
            };
            let n = x.len();
            if n < opts.min_pair_users {
                return Raw {
                    rho: None,
                    p: None,
                    n,
                    reason: Some(format!("{n} users, fewer than {}", opts.min_pair_users)),
                };
            }
            let rho = match opts.method {
                CorrelationMethod::Spearman => stats::spearman(&x, &y),
                CorrelationMethod::Pearson => stats::pearson(&x, &y),
            };
            match rho {
                None => Raw {
                    rho: None,
                    p: None,
                    n,
                    reason: Some("zero variance in one genre".into()),
                },
                Some(r) => {
                    let exact = opts.exact_small_samples
                        && opts.method == CorrelationMethod::Spearman
                        && n <= stats::MAX_EXACT_PERMUTATION_N;
                    let p = if exact {
                        stats::permutation_p_value(&x, &y).expect("n within exact limit")
                    } else {
                        stats::correlation_t_p_value(r, n)
                    };
                    Raw {
                        rho: Some(r),
                        p: Some(p),
                        n,
                        reason: None,
                    }
                }
            }
        })
        .collect();

    let tested = raw.iter().filter(|r| r.rho.is_some()).count();
    let mut values = vec![vec![None; k]; k];
    for (a, row) in values.iter_mut().enumerate() {
        let has_two = means.column(a).filter(Option::is_some).count() >= 2;
        if has_two {
            row[a] = Some(1.0);
        }
    }
    let mut results = Vec::with_capacity(pairs.len());
    for (&(a, b), r) in pairs.iter().zip(raw) {
        values[a][b] = r.rho;
        values[b][a] = r.rho;
        results.push(CorrelationResult {
            genre_a: means.genres[a].clone(),
            genre_b: means.genres[b].clone(),
            rho: r.rho,
            p_raw: r.p,
            p_adjusted: r.p.map(|p| stats::bonferroni(p, tested)),
            n_users: r.n,
            missing_reason: r.reason,
        });
    }

    let measure = match opts.method {
        CorrelationMethod::Spearman => Measure::SpearmanRho,
        CorrelationMethod::Pearson => Measure::PearsonR,
    };
    let mut metadata = BTreeMap::new();
    metadata.insert("tested_pairs".into(), tested.to_string());
    metadata.insert("bonferroni_m".into(), tested.to_string());
    metadata.insert("min_pair_users".into(), opts.min_pair_users.to_string());
    metadata.insert(
        "missing_means".into(),
        match opts.missing {
            MissingMeans::PairwiseComplete => "pairwise_complete",
            MissingMeans::ZeroFill => "zero_fill",
        }
        .into(),
    );
    Ok(CorrelationOutput {
        matrix: LinkMatrix {
            measure,
            genres: means.genres,
            values,
            direction_convention: DirectionConvention::Symmetric,
            dataset_fingerprint: ds.fingerprint().to_string(),
            metadata,
        },
        results,
        tested_pairs: tested,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Compatible,
    Incompatible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompatibilityDecision {
    pub existing_genre: String,
    pub new_genre: String,
    pub measure: Measure,
    pub value: f64,
    pub threshold: f64,
    pub verdict: Verdict,
    pub advisory_note: String,
}

/// Thresholds a link value; `value >= threshold` is compatible.
pub fn decide_compatibility(
    matrix: &LinkMatrix,
    existing: &str,
    new: &str,
    threshold: f64,
) -> Result<CompatibilityDecision> {
    let (lo, hi) = matrix.measure.value_range();
    if !(lo..=hi).contains(&threshold) {
        return Err(Error::InvalidArgument(format!(
            "threshold {threshold} outside [{lo}, {hi}] for {}",
            matrix.measure
        )));
    }
    let value = matrix.link(existing, new)?.ok_or_else(|| Error::MissingEntry {
        measure: matrix.measure.to_string(),
        row: new.to_string(),
        col: existing.to_string(),
    })?;
    Ok(CompatibilityDecision {
        existing_genre: existing.to_string(),
        new_genre: new.to_string(),
        measure: matrix.measure,
        value,
        threshold,
        verdict: if value >= threshold {
            Verdict::Compatible
        } else {
            Verdict::Incompatible
        },
        advisory_note: ADVISORY_NOTE.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{DatasetParts, GenreSet, Item, RatingRecord};
    use approx::assert_abs_diff_eq;

    fn item(id: u32, genres: &[usize]) -> Item {
        Item {
            item_id: id,
            title: format!("item {id}"),
            genres: GenreSet::from_indices(genres.iter().copied()),
        }
    }

    fn rating(user_id: u32, item_id: u32, rating: u8) -> RatingRecord {
        RatingRecord {
            user_id,
            item_id,
            rating,
            timestamp: 0,
        }
    }

    /// Items a:{G1}, b:{G1,G2}, c:{G2}.
    fn three_item_catalogue() -> RatingsDataset {
        RatingsDataset::new(
            DatasetParts {
                genres: vec!["G1".into(), "G2".into()],
                items: vec![item(1, &[0]), item(2, &[0, 1]), item(3, &[1])],
                users: None,
                ratings: vec![rating(1, 1, 5), rating(1, 2, 3)],
            },
            1,
        )
        .unwrap()
    }

    #[test]
    fn conditional_probability_hand_enumeration() {
        let m = genre_overlap_matrix(&three_item_catalogue());
        assert_eq!(m.conditional("G2", "G1").unwrap(), Some(0.5));
        assert_eq!(m.conditional("G1", "G2").unwrap(), Some(0.5));
        assert_eq!(m.get("G1", "G1").unwrap(), Some(1.0));
    }

    #[test]
    fn jaccard_hand_enumeration() {
        let m = jaccard_matrix(&three_item_catalogue());
        assert_abs_diff_eq!(m.get("G1", "G2").unwrap().unwrap(), 1.0 / 3.0, epsilon = 1e-15);
        assert_eq!(m.get("G2", "G2").unwrap(), Some(1.0));
    }

    #[test]
    fn disjoint_and_empty_genres() {
        let ds = RatingsDataset::new(
            DatasetParts {
                genres: vec!["A".into(), "B".into(), "Empty".into()],
                items: vec![item(1, &[0]), item(2, &[1])],
                users: None,
                ratings: vec![rating(1, 1, 4)],
            },
            1,
        )
        .unwrap();
        let j = jaccard_matrix(&ds);
        assert_eq!(j.get("A", "B").unwrap(), Some(0.0));
        assert_eq!(j.get("Empty", "Empty").unwrap(), None);
        assert_eq!(j.get("A", "Empty").unwrap(), Some(0.0));
        let c = genre_overlap_matrix(&ds);
        // conditioning on an empty genre is undefined, never zero
        assert_eq!(c.conditional("A", "Empty").unwrap(), None);
        assert_eq!(c.conditional("Empty", "A").unwrap(), Some(0.0));
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().nth(1).unwrap(), "A,1.000000,0.000000,");
    }

    #[test]
    fn user_means_hand_arithmetic() {
        let ds = RatingsDataset::new(
            DatasetParts {
                genres: vec!["G1".into(), "G2".into(), "G3".into()],
                items: vec![item(1, &[0]), item(2, &[0, 1])],
                users: None,
                ratings: vec![rating(1, 1, 5), rating(1, 2, 3), rating(2, 2, 4)],
            },
            1,
        )
        .unwrap();
        let m = genre_user_means(&ds);
        assert_eq!(m.means[0], vec![Some(4.0), Some(3.0), None]);
        assert_eq!(m.means[1], vec![Some(4.0), Some(4.0), None]);
    }

    #[test]
    fn decision_boundaries() {
        let mut m = genre_overlap_matrix(&three_item_catalogue());
        m.values[1][0] = Some(0.79);
        let d = decide_compatibility(&m, "G1", "G2", 0.5).unwrap();
        assert_eq!(d.verdict, Verdict::Compatible);
        assert_eq!(d.advisory_note, ADVISORY_NOTE);
        m.values[1][0] = Some(0.34);
        assert_eq!(
            decide_compatibility(&m, "G1", "G2", 0.5).unwrap().verdict,
            Verdict::Incompatible
        );
        m.values[1][0] = Some(0.5);
        assert_eq!(
            decide_compatibility(&m, "G1", "G2", 0.5).unwrap().verdict,
            Verdict::Compatible
        );
        m.values[1][0] = None;
        assert!(matches!(
            decide_compatibility(&m, "G1", "G2", 0.5),
            Err(Error::MissingEntry { .. })
        ));
        assert!(decide_compatibility(&m, "G1", "G2", 1.5).is_err());
    }

    #[test]
    fn correlation_requires_three_users() {
        let ds = three_item_catalogue();
        let opts = CorrelationOptions {
            min_pair_users: 2,
            ..Default::default()
        };
        assert!(rating_correlation_matrix(&ds, &opts).is_err());
    }

    fn correlated_fixture() -> RatingsDataset {
        // G1-only item 1, G2-only item 2, G3-only item 3; user u rates
        // item1 = r1[u], item2 = r2[u], item3 = 3 for everybody.
        let r1 = [1, 2, 3, 4, 5, 2];
        let r2 = [2, 3, 3, 5, 5, 1];
        let mut ratings = Vec::new();
        for u in 0..6u32 {
            ratings.push(rating(u + 1, 1, r1[u as usize]));
            ratings.push(rating(u + 1, 2, r2[u as usize]));
            ratings.push(rating(u + 1, 3, 3));
        }
        RatingsDataset::new(
            DatasetParts {
                genres: vec!["G1".into(), "G2".into(), "G3".into()],
                items: vec![item(1, &[0]), item(2, &[1]), item(3, &[2])],
                users: None,
                ratings,
            },
            1,
        )
        .unwrap()
    }

    #[test]
    fn correlation_small_fixture() {
        let ds = correlated_fixture();
        let opts = CorrelationOptions {
            min_pair_users: 3,
            exact_small_samples: true,
            ..Default::default()
        };
        let out = rating_correlation_matrix(&ds, &opts).unwrap();
        let r = out.pair("G1", "G2").unwrap();
        let expected = stats::spearman(&[1., 2., 3., 4., 5., 2.], &[2., 3., 3., 5., 5., 1.]).unwrap();
        assert_abs_diff_eq!(r.rho.unwrap(), expected, epsilon = 1e-12);
        assert_eq!(r.n_users, 6);
        // G3 is constant: undefined, with a reason, and not counted in m
        let g3 = out.pair("G1", "G3").unwrap();
        assert_eq!(g3.rho, None);
        assert!(g3.missing_reason.as_deref().unwrap().contains("zero variance"));
        assert_eq!(out.tested_pairs, 1);
        assert_eq!(r.p_adjusted, r.p_raw);
        assert_eq!(out.matrix.get("G2", "G1").unwrap(), r.rho);
        assert_eq!(out.matrix.get("G1", "G1").unwrap(), Some(1.0));
    }

    #[test]
    fn correlation_csv_has_empty_missing_cells() {
        let out = rating_correlation_matrix(
            &correlated_fixture(),
            &CorrelationOptions {
                min_pair_users: 3,
                ..Default::default()
            },
        )
        .unwrap();
        let mut buf = Vec::new();
        out.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "genre_a,genre_b,rho,p_raw,p_adjusted,n_users");
        assert_eq!(lines[2], "G1,G3,,,,6");
    }
}
