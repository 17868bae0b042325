//! Immutable ratings snapshot and the readers that build it.
//!
//! Two on-disk layouts are understood: the MovieLens-100k archive
//! (`u.data`, `u.item`, `u.user`, `u.genre`) and a generic CSV layout
//! (`ratings.csv`, `items.csv`, optional `users.csv`). Both go through the
//! same validation in [`RatingsDataset::new`].

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Name of the catch-all genre that is parsed but never analysed.
pub const UNKNOWN_GENRE: &str = "unknown";

/// Minimum ratings per user in the MovieLens-100k release.
pub const MOVIELENS_MIN_RATINGS: usize = 20;

pub const MAX_GENRES: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RatingRecord {
    pub user_id: u32,
    pub item_id: u32,
    pub rating: u8,
    pub timestamp: u64,
}

/// Bit set over a dataset's genre list, bit `i` = genre `i`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GenreSet(pub u64);

impl GenreSet {
    pub fn empty() -> Self {
        GenreSet(0)
    }

    pub fn from_indices(indices: impl IntoIterator<Item = usize>) -> Self {
        let mut s = GenreSet(0);
        for i in indices {
            s.insert(i);
        }
        s
    }

    pub fn insert(&mut self, idx: usize) {
        debug_assert!(idx < MAX_GENRES);
        self.0 |= 1u64 << idx;
    }

    pub fn contains(&self, idx: usize) -> bool {
        idx < MAX_GENRES && self.0 & (1u64 << idx) != 0
    }

    pub fn intersects(&self, other: GenreSet) -> bool {
        self.0 & other.0 != 0
    }

    pub fn union(&self, other: GenreSet) -> GenreSet {
        GenreSet(self.0 | other.0)
    }

    pub fn is_subset(&self, other: GenreSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }

    pub fn len(&self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        (0..MAX_GENRES).filter(move |&i| self.contains(i))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Item {
    pub item_id: u32,
    pub title: String,
    pub genres: GenreSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Gender {
    M,
    F,
}

impl Gender {
    fn parse(s: &str) -> Option<Gender> {
        match s {
            "M" => Some(Gender::M),
            "F" => Some(Gender::F),
            _ => None,
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Gender::M => "M",
            Gender::F => "F",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserProfile {
    pub user_id: u32,
    pub age: u32,
    pub gender: Gender,
    pub occupation: String,
    pub zip: String,
}

/// Raw collections handed to [`RatingsDataset::new`].
#[derive(Debug, Clone, Default)]
pub struct DatasetParts {
    pub genres: Vec<String>,
    pub items: Vec<Item>,
    pub users: Option<Vec<UserProfile>>,
    pub ratings: Vec<RatingRecord>,
}

/// Validated, immutable snapshot of a ratings catalogue.
///
/// Ratings are stored sorted by `(user_id, item_id)` so that two parses of
/// the same files compare equal and hash to the same fingerprint.
#[derive(Debug, Clone)]
pub struct RatingsDataset {
    genres: Vec<String>,
    analysis_genres: Vec<usize>,
    items: BTreeMap<u32, Item>,
    users: Option<BTreeMap<u32, UserProfile>>,
    ratings: Vec<RatingRecord>,
    user_spans: BTreeMap<u32, (usize, usize)>,
    min_ratings: usize,
    provenance: Vec<String>,
    fingerprint: String,
}

impl PartialEq for RatingsDataset {
    fn eq(&self, other: &Self) -> bool {
        self.genres == other.genres
            && self.items == other.items
            && self.users == other.users
            && self.ratings == other.ratings
    }
}

impl RatingsDataset {
    pub fn new(parts: DatasetParts, min_ratings: usize) -> Result<Self> {
        let DatasetParts {
            genres,
            items,
            users,
            mut ratings,
        } = parts;

        if genres.len() > MAX_GENRES {
            return Err(Error::InvalidArgument(format!(
                "{} genres exceed the supported maximum of {MAX_GENRES}",
                genres.len()
            )));
        }
        let mut seen = HashSet::new();
        for g in &genres {
            if !seen.insert(g.as_str()) {
                return Err(Error::InvalidArgument(format!("genre {g:?} listed twice")));
            }
        }
        if ratings.is_empty() {
            return Err(Error::EmptyDataset);
        }

        let mut item_map = BTreeMap::new();
        for item in items {
            if genres.len() < MAX_GENRES && item.genres.0 >> genres.len() != 0 {
                return Err(Error::InvalidArgument(format!(
                    "item {} carries a genre flag beyond the genre list",
                    item.item_id
                )));
            }
            let id = item.item_id;
            if item_map.insert(id, item).is_some() {
                return Err(Error::InvalidArgument(format!("item {id} defined twice")));
            }
        }
        let user_map = match users {
            Some(list) => {
                let mut map = BTreeMap::new();
                for u in list {
                    let id = u.user_id;
                    if map.insert(id, u).is_some() {
                        return Err(Error::InvalidArgument(format!("user {id} defined twice")));
                    }
                }
                Some(map)
            }
            None => None,
        };

        ratings.sort_unstable_by_key(|r| (r.user_id, r.item_id));
        for w in ratings.windows(2) {
            if w[0].user_id == w[1].user_id && w[0].item_id == w[1].item_id {
                return Err(Error::DuplicateRating {
                    user_id: w[0].user_id,
                    item_id: w[0].item_id,
                });
            }
        }
        for r in &ratings {
            if !(1..=5).contains(&r.rating) {
                return Err(Error::InvalidArgument(format!(
                    "rating {} for user {}, item {} outside 1..=5",
                    r.rating, r.user_id, r.item_id
                )));
            }
            if !item_map.contains_key(&r.item_id) {
                return Err(Error::DanglingReference {
                    kind: "item",
                    id: r.item_id,
                });
            }
            if let Some(users) = &user_map {
                if !users.contains_key(&r.user_id) {
                    return Err(Error::DanglingReference {
                        kind: "user",
                        id: r.user_id,
                    });
                }
            }
        }

        let mut user_spans = BTreeMap::new();
        let mut start = 0;
        for i in 1..=ratings.len() {
            if i == ratings.len() || ratings[i].user_id != ratings[start].user_id {
                user_spans.insert(ratings[start].user_id, (start, i));
                start = i;
            }
        }
        for (&user_id, &(s, e)) in &user_spans {
            if e - s < min_ratings {
                return Err(Error::TooFewRatings {
                    user_id,
                    count: e - s,
                    min: min_ratings,
                });
            }
        }

        let analysis_genres = genres
            .iter()
            .enumerate()
            .filter(|(_, g)| g.as_str() != UNKNOWN_GENRE)
            .map(|(i, _)| i)
            .collect();

        let mut ds = RatingsDataset {
            genres,
            analysis_genres,
            items: item_map,
            users: user_map,
            ratings,
            user_spans,
            min_ratings,
            provenance: Vec::new(),
            fingerprint: String::new(),
        };
        ds.fingerprint = ds.compute_fingerprint();
        Ok(ds)
    }

    /// Builds a sibling snapshot with the same catalogue and a new rating set.
    pub fn with_ratings(&self, ratings: Vec<RatingRecord>, note: Option<String>) -> Result<Self> {
        let mut ds = self.rebuild(ratings, self.min_ratings)?;
        if let Some(n) = note {
            ds.provenance.push(n);
        }
        Ok(ds)
    }

    /// Like [`with_ratings`](Self::with_ratings) with a different per-user minimum.
    pub fn with_ratings_min(&self, ratings: Vec<RatingRecord>, min_ratings: usize, note: String) -> Result<Self> {
        let mut ds = self.rebuild(ratings, min_ratings)?;
        ds.provenance.push(note);
        Ok(ds)
    }

    fn rebuild(&self, ratings: Vec<RatingRecord>, min_ratings: usize) -> Result<Self> {
        let parts = DatasetParts {
            genres: self.genres.clone(),
            items: self.items.values().cloned().collect(),
            users: self.users.as_ref().map(|m| m.values().cloned().collect()),
            ratings,
        };
        let mut ds = RatingsDataset::new(parts, min_ratings)?;
        ds.provenance = self.provenance.clone();
        Ok(ds)
    }

    pub(crate) fn push_provenance(&mut self, note: String) {
        self.provenance.push(note);
    }

    pub fn genres(&self) -> &[String] {
        &self.genres
    }

    /// Indices into [`genres`](Self::genres) used by the link measures.
    pub fn analysis_genres(&self) -> &[usize] {
        &self.analysis_genres
    }

    pub fn analysis_genre_names(&self) -> Vec<String> {
        self.analysis_genres.iter().map(|&i| self.genres[i].clone()).collect()
    }

    pub fn analysis_set(&self) -> GenreSet {
        GenreSet::from_indices(self.analysis_genres.iter().copied())
    }

    pub fn genre_index(&self, name: &str) -> Result<usize> {
        self.genres
            .iter()
            .position(|g| g == name)
            .ok_or_else(|| Error::UnknownGenre(name.to_string()))
    }

    pub fn genre_set(&self, names: &[impl AsRef<str>]) -> Result<GenreSet> {
        let mut set = GenreSet::empty();
        for n in names {
            set.insert(self.genre_index(n.as_ref())?);
        }
        Ok(set)
    }

    pub fn items(&self) -> &BTreeMap<u32, Item> {
        &self.items
    }

    pub fn item(&self, id: u32) -> Option<&Item> {
        self.items.get(&id)
    }

    pub fn users(&self) -> Option<&BTreeMap<u32, UserProfile>> {
        self.users.as_ref()
    }

    pub fn ratings(&self) -> &[RatingRecord] {
        &self.ratings
    }

    /// Ids of users with at least one rating, ascending.
    pub fn rating_users(&self) -> impl Iterator<Item = u32> + '_ {
        self.user_spans.keys().copied()
    }

    pub fn user_count(&self) -> usize {
        self.user_spans.len()
    }

    /// A user's ratings, sorted by item id.
    pub fn user_ratings(&self, user_id: u32) -> &[RatingRecord] {
        match self.user_spans.get(&user_id) {
            Some(&(s, e)) => &self.ratings[s..e],
            None => &[],
        }
    }

    pub fn min_ratings(&self) -> usize {
        self.min_ratings
    }

    /// Transformations applied since parsing (perturbations, filters).
    pub fn provenance(&self) -> &[String] {
        &self.provenance
    }

    /// SHA-256 over a canonical rendering of genres, items, users and ratings.
    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    fn compute_fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for g in &self.genres {
            h.update(b"g\x1f");
            h.update(g.as_bytes());
            h.update(b"\n");
        }
        for it in self.items.values() {
            h.update(format!("i\x1f{}\x1f{}\x1f", it.item_id, it.genres.0).as_bytes());
            h.update(it.title.as_bytes());
            h.update(b"\n");
        }
        if let Some(users) = &self.users {
            for u in users.values() {
                h.update(
                    format!(
                        "u\x1f{}\x1f{}\x1f{}\x1f{}\x1f{}\n",
                        u.user_id, u.age, u.gender, u.occupation, u.zip
                    )
                    .as_bytes(),
                );
            }
        }
        for r in &self.ratings {
            h.update(
                format!(
                    "r\x1f{}\x1f{}\x1f{}\x1f{}\n",
                    r.user_id, r.item_id, r.rating, r.timestamp
                )
                .as_bytes(),
            );
        }
        hex::encode(h.finalize())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenreCount {
    pub genre: String,
    pub items: usize,
    pub ratings: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsSummary {
    pub ratings: usize,
    pub users: usize,
    pub items: usize,
    pub genres: usize,
    pub analysis_genres: usize,
    pub min_ratings_per_user: usize,
    pub max_ratings_per_user: usize,
    pub per_genre: Vec<GenreCount>,
    pub fingerprint: String,
}

pub fn dataset_stats(ds: &RatingsDataset) -> StatsSummary {
    let per_user = ds.user_spans.values().map(|(s, e)| e - s);
    let min = per_user.clone().min().unwrap_or(0);
    let max = per_user.max().unwrap_or(0);
    let mut item_counts = vec![0usize; ds.genres.len()];
    for it in ds.items.values() {
        for g in it.genres.iter() {
            item_counts[g] += 1;
        }
    }
    let mut rating_counts = vec![0usize; ds.genres.len()];
    for r in &ds.ratings {
        for g in ds.items[&r.item_id].genres.iter() {
            rating_counts[g] += 1;
        }
    }
    StatsSummary {
        ratings: ds.ratings.len(),
        users: ds.user_count(),
        items: ds.items.len(),
        genres: ds.genres.len(),
        analysis_genres: ds.analysis_genres.len(),
        min_ratings_per_user: min,
        max_ratings_per_user: max,
        per_genre: ds
            .genres
            .iter()
            .enumerate()
            .map(|(i, g)| GenreCount {
                genre: g.clone(),
                items: item_counts[i],
                ratings: rating_counts[i],
            })
            .collect(),
        fingerprint: ds.fingerprint.clone(),
    }
}

fn read_required(dir: &Path, name: &str) -> Result<Vec<u8>> {
    let path = dir.join(name);
    if !path.is_file() {
        return Err(Error::MissingFile(path));
    }
    Ok(fs::read(path)?)
}

fn ascii_lines<'a>(file: &'a str, bytes: &'a [u8]) -> impl Iterator<Item = Result<(usize, &'a str)>> + 'a {
    bytes
        .split(|&b| b == b'\n')
        .enumerate()
        .map(move |(i, raw)| {
            let raw = raw.strip_suffix(b"\r").unwrap_or(raw);
            std::str::from_utf8(raw)
                .map(|s| (i + 1, s))
                .map_err(|_| Error::malformed(file, i + 1, "non-ASCII bytes"))
        })
        .filter(|r| !matches!(r, Ok((_, s)) if s.trim().is_empty()))
}

fn parse_num<T: std::str::FromStr>(file: &str, line: usize, what: &str, s: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::malformed(file, line, format!("invalid {what} {s:?}")))
}

fn check_rating(file: &str, line: usize, value: i64) -> Result<u8> {
    if (1..=5).contains(&value) {
        Ok(value as u8)
    } else {
        Err(Error::RatingOutOfRange {
            file: file.to_string(),
            line,
            value,
        })
    }
}

fn positive_id(file: &str, line: usize, what: &str, s: &str) -> Result<u32> {
    let id: u32 = parse_num(file, line, what, s)?;
    if id == 0 {
        return Err(Error::malformed(file, line, format!("{what} must be positive")));
    }
    Ok(id)
}

/// Reads a MovieLens-100k directory.
pub fn parse_movielens(dir: impl AsRef<Path>) -> Result<RatingsDataset> {
    parse_movielens_with(dir, MOVIELENS_MIN_RATINGS)
}

pub fn parse_movielens_with(dir: impl AsRef<Path>, min_ratings: usize) -> Result<RatingsDataset> {
    let dir = dir.as_ref();
    // Check every file up front so a missing one is reported by name.
    let genre_bytes = read_required(dir, "u.genre")?;
    let item_bytes = read_required(dir, "u.item")?;
    let user_bytes = read_required(dir, "u.user")?;
    let data_bytes = read_required(dir, "u.data")?;

    let mut genres: Vec<(usize, String)> = Vec::new();
    for line in ascii_lines("u.genre", &genre_bytes) {
        let (n, text) = line?;
        let (name, idx) = text
            .split_once('|')
            .ok_or_else(|| Error::malformed("u.genre", n, "expected name|index"))?;
        genres.push((parse_num("u.genre", n, "genre index", idx)?, name.to_string()));
    }
    genres.sort();
    for (pos, (idx, name)) in genres.iter().enumerate() {
        if *idx != pos {
            return Err(Error::malformed(
                "u.genre",
                pos + 1,
                format!("genre {name:?} has index {idx}, expected {pos}"),
            ));
        }
    }
    let genres: Vec<String> = genres.into_iter().map(|(_, g)| g).collect();

    // u.item titles are Latin-1; each byte maps to the code point of equal value.
    let mut items = Vec::new();
    for (i, raw) in item_bytes.split(|&b| b == b'\n').enumerate() {
        let n = i + 1;
        let raw = raw.strip_suffix(b"\r").unwrap_or(raw);
        if raw.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        let text: String = raw.iter().map(|&b| b as char).collect();
        let fields: Vec<&str> = text.split('|').collect();
        if fields.len() != 5 + genres.len() {
            return Err(Error::malformed(
                "u.item",
                n,
                format!("expected {} fields, found {}", 5 + genres.len(), fields.len()),
            ));
        }
        let item_id = positive_id("u.item", n, "movie id", fields[0])?;
        let mut set = GenreSet::empty();
        for (g, flag) in fields[5..].iter().enumerate() {
            match *flag {
                "1" => set.insert(g),
                "0" => {}
                other => {
                    return Err(Error::malformed(
                        "u.item",
                        n,
                        format!("genre flag {other:?} is not 0 or 1"),
                    ))
                }
            }
        }
        items.push(Item {
            item_id,
            title: fields[1].to_string(),
            genres: set,
        });
    }

    let mut users = Vec::new();
    for line in ascii_lines("u.user", &user_bytes) {
        let (n, text) = line?;
        let f: Vec<&str> = text.split('|').collect();
        if f.len() != 5 {
            return Err(Error::malformed(
                "u.user",
                n,
                format!("expected 5 fields, found {}", f.len()),
            ));
        }
        users.push(UserProfile {
            user_id: positive_id("u.user", n, "user id", f[0])?,
            age: parse_num("u.user", n, "age", f[1])?,
            gender: Gender::parse(f[2])
                .ok_or_else(|| Error::malformed("u.user", n, format!("invalid gender {:?}", f[2])))?,
            occupation: f[3].to_string(),
            zip: f[4].to_string(),
        });
    }

    let mut ratings = Vec::with_capacity(100_000);
    for line in ascii_lines("u.data", &data_bytes) {
        let (n, text) = line?;
        let f: Vec<&str> = text.split('\t').collect();
        if f.len() != 4 {
            return Err(Error::malformed(
                "u.data",
                n,
                format!("expected 4 tab-separated fields, found {}", f.len()),
            ));
        }
        let rating: i64 = parse_num("u.data", n, "rating", f[2])?;
        ratings.push(RatingRecord {
            user_id: positive_id("u.data", n, "user id", f[0])?,
            item_id: positive_id("u.data", n, "item id", f[1])?,
            rating: check_rating("u.data", n, rating)?,
            timestamp: parse_num("u.data", n, "timestamp", f[3])?,
        });
    }

    RatingsDataset::new(
        DatasetParts {
            genres,
            items,
            users: Some(users),
            ratings,
        },
        min_ratings,
    )
}

fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    Ok(csv::ReaderBuilder::new().flexible(true).from_path(path)?)
}

fn file_label(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn expect_header(file: &str, headers: &csv::StringRecord, expected: &[&str]) -> Result<()> {
    let got: Vec<&str> = headers.iter().map(str::trim).collect();
    if got.len() < expected.len() || got[..expected.len()] != *expected {
        return Err(Error::malformed(
            file,
            1,
            format!("expected header starting with {}", expected.join(",")),
        ));
    }
    Ok(())
}

/// Reads the generic CSV layout. `min_ratings` of 1 accepts any user with
/// at least one rating.
pub fn parse_generic(
    ratings_csv: impl AsRef<Path>,
    items_csv: impl AsRef<Path>,
    users_csv: Option<&Path>,
    min_ratings: usize,
) -> Result<RatingsDataset> {
    let items_path = items_csv.as_ref();
    let ratings_path = ratings_csv.as_ref();

    let file = file_label(items_path);
    let mut rdr = csv_reader(items_path)?;
    let headers = rdr.headers()?.clone();
    expect_header(&file, &headers, &["item_id", "title"])?;
    let genres: Vec<String> = headers.iter().skip(2).map(|s| s.trim().to_string()).collect();
    let mut items = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let n = i + 2;
        if rec.len() > headers.len() {
            return Err(Error::malformed(
                &file,
                n,
                "genre flag in a column absent from the header",
            ));
        }
        if rec.len() < headers.len() {
            return Err(Error::malformed(
                &file,
                n,
                format!("expected {} fields, found {}", headers.len(), rec.len()),
            ));
        }
        let mut set = GenreSet::empty();
        for (g, flag) in rec.iter().skip(2).enumerate() {
            match flag.trim() {
                "1" => set.insert(g),
                "0" | "" => {}
                other => {
                    return Err(Error::malformed(
                        &file,
                        n,
                        format!("genre flag {other:?} is not 0 or 1"),
                    ))
                }
            }
        }
        items.push(Item {
            item_id: positive_id(&file, n, "item_id", &rec[0])?,
            title: rec[1].to_string(),
            genres: set,
        });
    }

    let users = match users_csv {
        Some(path) => {
            let file = file_label(path);
            let mut rdr = csv_reader(path)?;
            expect_header(
                &file,
                &rdr.headers()?.clone(),
                &["user_id", "age", "gender", "occupation", "zip"],
            )?;
            let mut users = Vec::new();
            for (i, rec) in rdr.records().enumerate() {
                let rec = rec?;
                let n = i + 2;
                if rec.len() != 5 {
                    return Err(Error::malformed(
                        &file,
                        n,
                        format!("expected 5 fields, found {}", rec.len()),
                    ));
                }
                users.push(UserProfile {
                    user_id: positive_id(&file, n, "user_id", &rec[0])?,
                    age: parse_num(&file, n, "age", &rec[1])?,
                    gender: Gender::parse(rec[2].trim())
                        .ok_or_else(|| Error::malformed(&file, n, format!("invalid gender {:?}", &rec[2])))?,
                    occupation: rec[3].to_string(),
                    zip: rec[4].to_string(),
                });
            }
            Some(users)
        }
        None => None,
    };

    let ratings = read_rating_csv(ratings_path)?;
    RatingsDataset::new(
        DatasetParts {
            genres,
            items,
            users,
            ratings,
        },
        min_ratings,
    )
}

/// Reads a `user_id,item_id,rating,timestamp` file without dataset-level
/// validation. Used for the ratings table and for monitor batches.
pub fn read_rating_csv(path: impl AsRef<Path>) -> Result<Vec<RatingRecord>> {
    let path = path.as_ref();
    let file = file_label(path);
    let mut rdr = csv_reader(path)?;
    expect_header(
        &file,
        &rdr.headers()?.clone(),
        &["user_id", "item_id", "rating", "timestamp"],
    )?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let n = i + 2;
        if rec.len() != 4 {
            return Err(Error::malformed(
                &file,
                n,
                format!("expected 4 fields, found {}", rec.len()),
            ));
        }
        let rating: i64 = parse_num(&file, n, "rating", &rec[2])?;
        out.push(RatingRecord {
            user_id: positive_id(&file, n, "user_id", &rec[0])?,
            item_id: positive_id(&file, n, "item_id", &rec[1])?,
            rating: check_rating(&file, n, rating)?,
            timestamp: parse_num(&file, n, "timestamp", &rec[3])?,
        });
    }
    Ok(out)
}

pub fn write_rating_csv(path: impl AsRef<Path>, ratings: &[RatingRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["user_id", "item_id", "rating", "timestamp"])?;
    for r in ratings {
        w.write_record([
            r.user_id.to_string(),
            r.item_id.to_string(),
            r.rating.to_string(),
            r.timestamp.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `ratings.csv`, `items.csv` and (when profiles exist) `users.csv`.
pub fn export_generic(ds: &RatingsDataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    write_rating_csv(dir.join("ratings.csv"), ds.ratings())?;

    let mut w = csv::Writer::from_path(dir.join("items.csv"))?;
    let mut header = vec!["item_id".to_string(), "title".to_string()];
    header.extend(ds.genres().iter().cloned());
    w.write_record(&header)?;
    for it in ds.items().values() {
        let mut row = vec![it.item_id.to_string(), it.title.clone()];
        row.extend((0..ds.genres().len()).map(|g| if it.genres.contains(g) { "1" } else { "0" }.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;

    if let Some(users) = ds.users() {
        let mut w = csv::Writer::from_path(dir.join("users.csv"))?;
        w.write_record(["user_id", "age", "gender", "occupation", "zip"])?;
        for u in users.values() {
            w.write_record([
                u.user_id.to_string(),
                u.age.to_string(),
                u.gender.to_string(),
                u.occupation.clone(),
                u.zip.clone(),
            ])?;
        }
        w.flush()?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &Path, name: &str, body: &[u8]) {
        fs::File::create(dir.join(name)).unwrap().write_all(body).unwrap();
    }

    fn stub_movielens(dir: &Path, data: &str) {
        write(dir, "u.genre", b"unknown|0\nAction|1\nDrama|2\n\n");
        write(
            dir,
            "u.item",
            b"1|Caf\xe9 (1995)|01-Jan-1995|||0|1|0\n2|Other (1996)|01-Jan-1996|||0|1|1\n",
        );
        write(dir, "u.user", b"1|24|M|technician|85711\n2|53|F|other|94043\n");
        write(dir, "u.data", data.as_bytes());
    }

    #[test]
    fn single_line_movielens() {
        let tmp = tempfile::tempdir().unwrap();
        stub_movielens(tmp.path(), "1\t1\t5\t874965758\n");
        let ds = parse_movielens_with(tmp.path(), 1).unwrap();
        assert_eq!(ds.ratings().len(), 1);
        assert_eq!(ds.ratings()[0].rating, 5);
        assert_eq!(ds.item(1).unwrap().title, "Café (1995)");
        assert_eq!(ds.analysis_genre_names(), vec!["Action", "Drama"]);
    }

    #[test]
    fn missing_user_file_is_named() {
        let tmp = tempfile::tempdir().unwrap();
        stub_movielens(tmp.path(), "1\t1\t5\t874965758\n");
        fs::remove_file(tmp.path().join("u.user")).unwrap();
        let err = parse_movielens_with(tmp.path(), 1).unwrap_err();
        assert!(err.to_string().contains("u.user"), "{err}");
    }

    #[test]
    fn rating_out_of_range_reports_line() {
        let tmp = tempfile::tempdir().unwrap();
        stub_movielens(tmp.path(), "1\t1\t5\t1\n1\t2\t6\t2\n");
        match parse_movielens_with(tmp.path(), 1).unwrap_err() {
            Error::RatingOutOfRange { file, line, value } => {
                assert_eq!((file.as_str(), line, value), ("u.data", 2, 6));
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn duplicate_pair_is_an_error() {
        let tmp = tempfile::tempdir().unwrap();
        stub_movielens(tmp.path(), "1\t1\t5\t1\n1\t1\t3\t2\n");
        assert!(matches!(
            parse_movielens_with(tmp.path(), 1),
            Err(Error::DuplicateRating { user_id: 1, item_id: 1 })
        ));
    }

    #[test]
    fn dangling_item_and_user() {
        let tmp = tempfile::tempdir().unwrap();
        stub_movielens(tmp.path(), "1\t9\t5\t1\n");
        assert!(matches!(
            parse_movielens_with(tmp.path(), 1),
            Err(Error::DanglingReference { kind: "item", id: 9 })
        ));
        stub_movielens(tmp.path(), "7\t1\t5\t1\n");
        assert!(matches!(
            parse_movielens_with(tmp.path(), 1),
            Err(Error::DanglingReference { kind: "user", id: 7 })
        ));
    }

    #[test]
    fn malformed_line_reports_file_and_line() {
        let tmp = tempfile::tempdir().unwrap();
        stub_movielens(tmp.path(), "1\t1\t5\t1\n2\t1\tfive\t1\n");
        let msg = parse_movielens_with(tmp.path(), 1).unwrap_err().to_string();
        assert!(msg.starts_with("u.data:2:"), "{msg}");
    }

    #[test]
    fn min_ratings_enforced() {
        let tmp = tempfile::tempdir().unwrap();
        stub_movielens(tmp.path(), "1\t1\t5\t1\n1\t2\t4\t1\n2\t1\t3\t1\n");
        assert!(matches!(
            parse_movielens_with(tmp.path(), 2),
            Err(Error::TooFewRatings {
                user_id: 2,
                count: 1,
                min: 2
            })
        ));
    }

    fn generic_fixture(dir: &Path) {
        write(
            dir,
            "ratings.csv",
            b"user_id,item_id,rating,timestamp\n1,1,5,10\n1,2,3,11\n2,2,4,12\n",
        );
        write(dir, "items.csv", b"item_id,title,G1,G2\n1,a,1,0\n2,b,1,1\n");
    }

    #[test]
    fn generic_direct_construction() {
        let tmp = tempfile::tempdir().unwrap();
        generic_fixture(tmp.path());
        let ds = parse_generic(tmp.path().join("ratings.csv"), tmp.path().join("items.csv"), None, 1).unwrap();
        assert_eq!(ds.ratings().len(), 3);
        assert_eq!(ds.genres(), ["G1", "G2"]);
        assert!(ds.users().is_none());
    }

    #[test]
    fn generic_genre_outside_header() {
        let tmp = tempfile::tempdir().unwrap();
        generic_fixture(tmp.path());
        write(tmp.path(), "items.csv", b"item_id,title,G1,G2\n1,a,1,0\n2,b,1,1,1\n");
        let err = parse_generic(tmp.path().join("ratings.csv"), tmp.path().join("items.csv"), None, 1).unwrap_err();
        assert!(err.to_string().contains("absent from the header"), "{err}");
    }

    #[test]
    fn stats_recount_by_enumeration() {
        let tmp = tempfile::tempdir().unwrap();
        generic_fixture(tmp.path());
        let ds = parse_generic(tmp.path().join("ratings.csv"), tmp.path().join("items.csv"), None, 1).unwrap();
        let s = dataset_stats(&ds);
        assert_eq!((s.users, s.items, s.ratings), (2, 2, 3));
        assert_eq!((s.min_ratings_per_user, s.max_ratings_per_user), (1, 2));
        assert_eq!(s.per_genre[0].items, 2);
        assert_eq!(s.per_genre[1].items, 1);
        assert!(s.per_genre.iter().map(|g| g.items).sum::<usize>() >= s.items);
        assert_eq!(s.per_genre[0].ratings, 3);
        assert_eq!(s.per_genre[1].ratings, 2);
    }

    #[test]
    fn genre_set_ops() {
        let a = GenreSet::from_indices([0, 3]);
        let b = GenreSet::from_indices([3]);
        assert!(b.is_subset(a));
        assert!(!a.is_subset(b));
        assert_eq!(a.iter().collect::<Vec<_>>(), vec![0, 3]);
        assert_eq!(a.union(GenreSet::from_indices([5])).len(), 3);
    }
}
