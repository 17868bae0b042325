//! Purposes, five-criteria assessment records and their on-disk store.
//!
//! The store is a plain directory:
//!
//! ```text
//! <root>/schema_version
//! <root>/purposes.json
//! <root>/index.json
//! <root>/records/<record_id>_v<version>.json
//! <root>/drafts/<draft_id>.json
//! <root>/.lock              (held while writing)
//! ```
//!
//! Record files are written once and never touched again; every change
//! produces the next version.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::fs::{self, File, OpenOptions};
use std::io::{ErrorKind, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, SubsecRound, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;
pub const DRAFT_STATUS: &str = "pending human review";
pub const TOOL_VERSION: &str = concat!("repurpose-core ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PurposeSource {
    #[serde(rename = "tcf_v2_2")]
    TcfV22,
    GoogleAccount,
    Custom,
}

/// What a purpose means computationally, when that can be said at all.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ComputationalBinding {
    GenreSet { genres: Vec<String> },
    Task { descriptor: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Purpose {
    pub id: String,
    pub label: String,
    pub source: PurposeSource,
    pub description: String,
    pub computational_binding: Option<ComputationalBinding>,
}

impl Purpose {
    pub fn custom(id: &str, label: &str, binding: Option<ComputationalBinding>) -> Self {
        Purpose {
            id: id.to_string(),
            label: label.to_string(),
            source: PurposeSource::Custom,
            description: String::new(),
            computational_binding: binding,
        }
    }

    /// A custom purpose bound to recommending from a set of genres.
    pub fn genre_recommendation(id: &str, genres: &[impl AsRef<str>]) -> Self {
        let genres: Vec<String> = genres.iter().map(|g| g.as_ref().to_string()).collect();
        Purpose {
            id: id.to_string(),
            label: format!("Recommend movies from {}", genres.join(", ")),
            source: PurposeSource::Custom,
            description: "movie recommendations restricted to a genre set".into(),
            computational_binding: Some(ComputationalBinding::GenreSet { genres }),
        }
    }
}

const TCF_PURPOSES: [(&str, &str, &str); 18] = [
    ("tcf-p1", "Store and/or access information on a device", "purpose 1"),
    ("tcf-p2", "Use limited data to select advertising", "purpose 2"),
    ("tcf-p3", "Create profiles for personalised advertising", "purpose 3"),
    ("tcf-p4", "Use profiles to select personalised advertising", "purpose 4"),
    ("tcf-p5", "Create profiles to personalise content", "purpose 5"),
    ("tcf-p6", "Use profiles to select personalised content", "purpose 6"),
    ("tcf-p7", "Measure advertising performance", "purpose 7"),
    ("tcf-p8", "Measure content performance", "purpose 8"),
    (
        "tcf-p9",
        "Understand audiences through statistics or combinations of data from different sources",
        "purpose 9",
    ),
    ("tcf-p10", "Develop and improve services", "purpose 10"),
    ("tcf-p11", "Use limited data to select content", "purpose 11"),
    (
        "tcf-sp1",
        "Ensure security, prevent and detect fraud, and fix errors",
        "special purpose 1",
    ),
    (
        "tcf-sp2",
        "Deliver and present advertising and content",
        "special purpose 2",
    ),
    ("tcf-f1", "Match and combine data from other data sources", "feature 1"),
    ("tcf-f2", "Link different devices", "feature 2"),
    (
        "tcf-f3",
        "Identify devices based on information transmitted automatically",
        "feature 3",
    ),
    ("tcf-sf1", "Use precise geolocation data", "special feature 1"),
    (
        "tcf-sf2",
        "Actively scan device characteristics for identification",
        "special feature 2",
    ),
];

const GOOGLE_PURPOSES: [(&str, &str); 7] = [
    ("google-1", "Provide our services"),
    ("google-2", "Maintain & improve our services"),
    ("google-3", "Develop new services"),
    ("google-4", "Provide personalized services, including content and ads"),
    ("google-5", "Measure performance"),
    ("google-6", "Communicate with you"),
    ("google-7", "Protect Google, our users, and the public"),
];

pub fn builtin_purposes() -> Vec<Purpose> {
    let tcf = TCF_PURPOSES.iter().map(|(id, label, slot)| Purpose {
        id: id.to_string(),
        label: label.to_string(),
        source: PurposeSource::TcfV22,
        description: format!("IAB TCF v2.2 {slot}"),
        computational_binding: None,
    });
    let google = GOOGLE_PURPOSES.iter().map(|(id, label)| Purpose {
        id: id.to_string(),
        label: label.to_string(),
        source: PurposeSource::GoogleAccount,
        description: "Google account privacy policy purpose".into(),
        computational_binding: None,
    });
    tcf.chain(google).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    ALink,
    BContext,
    CNature,
    DConsequences,
    ESafeguards,
}

impl Criterion {
    pub const ALL: [Criterion; 5] = [
        Criterion::ALink,
        Criterion::BContext,
        Criterion::CNature,
        Criterion::DConsequences,
        Criterion::ESafeguards,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Criterion::ALink => "a_link",
            Criterion::BContext => "b_context",
            Criterion::CNature => "c_nature",
            Criterion::DConsequences => "d_consequences",
            Criterion::ESafeguards => "e_safeguards",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Criterion::ALink => "(a) link between the purposes",
            Criterion::BContext => "(b) context of collection",
            Criterion::CNature => "(c) nature of the personal data",
            Criterion::DConsequences => "(d) possible consequences for data subjects",
            Criterion::ESafeguards => "(e) appropriate safeguards",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        let s = s.to_ascii_lowercase();
        Criterion::ALL
            .into_iter()
            .find(|c| c.name() == s || c.name().split('_').next() == Some(s.as_str()))
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssessorVerdict {
    FavorsCompatible,
    FavorsIncompatible,
    Neutral,
    NotAssessed,
}

impl fmt::Display for AssessorVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::FavorsCompatible => "favors_compatible",
            Self::FavorsIncompatible => "favors_incompatible",
            Self::Neutral => "neutral",
            Self::NotAssessed => "not_assessed",
        })
    }
}

impl AssessorVerdict {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "favors_compatible" => Some(Self::FavorsCompatible),
            "favors_incompatible" => Some(Self::FavorsIncompatible),
            "neutral" => Some(Self::Neutral),
            "not_assessed" => Some(Self::NotAssessed),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactKind {
    LinkMatrix,
    CorrelationResults,
    PredictabilityReport,
    ReidentificationReport,
    ImpactReport,
}

impl ArtifactKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "link_matrix" => Some(Self::LinkMatrix),
            "correlation_results" => Some(Self::CorrelationResults),
            "predictability_report" => Some(Self::PredictabilityReport),
            "reidentification_report" => Some(Self::ReidentificationReport),
            "impact_report" => Some(Self::ImpactReport),
            _ => None,
        }
    }
}

/// Pointer to an evidence file, with what is needed to regenerate it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactRef {
    pub kind: ArtifactKind,
    pub path: String,
    pub sha256: String,
    pub dataset_fingerprint: String,
    pub seed: Option<u64>,
    pub params: BTreeMap<String, String>,
}

impl ArtifactRef {
    /// Hashes the file at `path`.
    pub fn for_file(
        kind: ArtifactKind,
        path: &Path,
        dataset_fingerprint: &str,
        seed: Option<u64>,
        params: BTreeMap<String, String>,
    ) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| match e.kind() {
            ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        Ok(ArtifactRef {
            kind,
            path: path.to_string_lossy().into_owned(),
            sha256: hex::encode(Sha256::digest(&bytes)),
            dataset_fingerprint: dataset_fingerprint.to_string(),
            seed,
            params,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CriterionEntry {
    pub criterion: Criterion,
    pub automated_evidence: Vec<ArtifactRef>,
    pub manual_assessment: String,
    pub assessor_verdict: AssessorVerdict,
}

impl CriterionEntry {
    fn blank(criterion: Criterion) -> Self {
        CriterionEntry {
            criterion,
            automated_evidence: Vec::new(),
            manual_assessment: String::new(),
            assessor_verdict: AssessorVerdict::NotAssessed,
        }
    }
}

fn blank_criteria() -> Vec<CriterionEntry> {
    Criterion::ALL.into_iter().map(CriterionEntry::blank).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverallDecision {
    Compatible,
    Incompatible,
    Pending,
}

impl fmt::Display for OverallDecision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OverallDecision::Compatible => "compatible",
            OverallDecision::Incompatible => "incompatible",
            OverallDecision::Pending => "pending",
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool_version: String,
    pub dataset_fingerprints: BTreeSet<String>,
    pub seeds: BTreeSet<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssessmentRecord {
    pub schema_version: u32,
    pub record_id: String,
    pub version: u32,
    /// Earlier version of this record, if any.
    pub previous_version: Option<u32>,
    /// Decided record for the same pair that this one reopens.
    pub supersedes: Option<String>,
    pub purpose_old: String,
    pub purpose_new: String,
    pub criteria: Vec<CriterionEntry>,
    pub overall_decision: OverallDecision,
    pub assessor: String,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
    pub decided_at: Option<DateTime<Utc>>,
    pub provenance: Provenance,
}

impl AssessmentRecord {
    pub fn criterion(&self, c: Criterion) -> &CriterionEntry {
        self.criteria.iter().find(|e| e.criterion == c).expect("five criteria")
    }

    fn criterion_mut(&mut self, c: Criterion) -> &mut CriterionEntry {
        self.criteria
            .iter_mut()
            .find(|e| e.criterion == c)
            .expect("five criteria")
    }

    pub fn unassessed(&self) -> Vec<Criterion> {
        self.criteria
            .iter()
            .filter(|e| e.assessor_verdict == AssessorVerdict::NotAssessed)
            .map(|e| e.criterion)
            .collect()
    }

    pub fn file_name(&self) -> String {
        format!("{}_v{}.json", self.record_id, self.version)
    }
}

/// Evidence package produced by monitoring, waiting for a human assessor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssessmentDraft {
    pub schema_version: u32,
    pub draft_id: String,
    pub batch_index: u64,
    pub reasons: Vec<String>,
    pub criteria: Vec<CriterionEntry>,
    pub status: String,
    pub dataset_fingerprint: String,
    pub created_at: DateTime<Utc>,
}

impl AssessmentDraft {
    pub fn new(batch_index: u64, dataset_fingerprint: &str, created_at: DateTime<Utc>) -> Self {
        let digest = Sha256::digest(format!("{dataset_fingerprint}\u{1f}{batch_index}").as_bytes());
        AssessmentDraft {
            schema_version: SCHEMA_VERSION,
            draft_id: format!("draft-b{batch_index}-{}", &hex::encode(digest)[..12]),
            batch_index,
            reasons: Vec::new(),
            criteria: blank_criteria(),
            status: DRAFT_STATUS.to_string(),
            dataset_fingerprint: dataset_fingerprint.to_string(),
            created_at,
        }
    }

    pub fn attach(&mut self, c: Criterion, artifact: ArtifactRef) {
        if let Some(e) = self.criteria.iter_mut().find(|e| e.criterion == c) {
            e.automated_evidence.push(artifact);
        }
    }

    pub fn evidence(&self) -> impl Iterator<Item = &ArtifactRef> {
        self.criteria.iter().flat_map(|c| c.automated_evidence.iter())
    }
}

/// Somewhere a draft can be filed.
pub trait DraftSink {
    fn file_draft(&self, draft: &AssessmentDraft) -> Result<PathBuf>;
}

pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now().trunc_subsecs(0)
    }
}

pub struct FixedClock(pub DateTime<Utc>);

impl Clock for FixedClock {
    fn now(&self) -> DateTime<Utc> {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub record_id: String,
    pub sequence: u64,
    pub purpose_old: String,
    pub purpose_new: String,
    pub latest_version: u32,
    pub overall_decision: OverallDecision,
    pub supersedes: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
struct Index {
    schema_version: u32,
    next_sequence: u64,
    records: BTreeMap<String, IndexEntry>,
}

/// Held while writing; the lock file disappears on drop.
struct WriteLock(PathBuf);

impl WriteLock {
    fn acquire(root: &Path) -> Result<Self> {
        let path = root.join(".lock");
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(WriteLock(path))
            }
            Err(e) if e.kind() == ErrorKind::AlreadyExists => Err(Error::Locked(path)),
            Err(e) => Err(Error::Io(e)),
        }
    }
}

impl Drop for WriteLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Replaces `path` atomically via a sibling temporary file.
fn replace_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Writes `path` only if it does not exist yet.
fn write_new(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = File::create_new(path).map_err(|e| match e.kind() {
        ErrorKind::AlreadyExists => Error::InvalidArgument(format!("refusing to overwrite {}", path.display())),
        _ => Error::Io(e),
    })?;
    f.write_all(bytes)?;
    Ok(())
}

pub struct Registry {
    root: PathBuf,
    clock: Box<dyn Clock>,
    purposes: BTreeMap<String, Purpose>,
    index: Index,
}

impl fmt::Debug for Registry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Registry")
            .field("root", &self.root)
            .field("purposes", &self.purposes.len())
            .field("records", &self.index.records.len())
            .finish()
    }
}

impl Registry {
    /// Opens the store at `root`, creating it if needed.
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        Self::open_with_clock(root, Box::new(SystemClock))
    }

    pub fn open_with_clock(root: impl AsRef<Path>, clock: Box<dyn Clock>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(root.join("records"))?;
        fs::create_dir_all(root.join("drafts"))?;
        let version_file = root.join("schema_version");
        match fs::read_to_string(&version_file) {
            Ok(s) => {
                if s.trim() != SCHEMA_VERSION.to_string() {
                    return Err(Error::SchemaVersion {
                        found: s.trim().to_string(),
                        expected: SCHEMA_VERSION,
                    });
                }
            }
            Err(e) if e.kind() == ErrorKind::NotFound => {
                let _lock = WriteLock::acquire(&root)?;
                replace_file(&version_file, format!("{SCHEMA_VERSION}\n").as_bytes())?;
            }
            Err(e) => return Err(e.into()),
        }
        let purposes = match fs::read(root.join("purposes.json")) {
            Ok(b) => serde_json::from_slice::<Vec<Purpose>>(&b)?
                .into_iter()
                .map(|p| (p.id.clone(), p))
                .collect(),
            Err(e) if e.kind() == ErrorKind::NotFound => BTreeMap::new(),
            Err(e) => return Err(e.into()),
        };
        let index = match fs::read(root.join("index.json")) {
            Ok(b) => serde_json::from_slice(&b)?,
            Err(e) if e.kind() == ErrorKind::NotFound => Index {
                schema_version: SCHEMA_VERSION,
                ..Index::default()
            },
            Err(e) => return Err(e.into()),
        };
        Ok(Registry {
            root,
            clock,
            purposes,
            index,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn save_purposes(&self) -> Result<()> {
        let list: Vec<&Purpose> = self.purposes.values().collect();
        replace_file(&self.root.join("purposes.json"), &to_json(&list)?)
    }

    fn save_index(&self) -> Result<()> {
        replace_file(&self.root.join("index.json"), &to_json(&self.index)?)
    }

    /// Adds the built-in TCF and Google purposes that are missing.
    /// Returns how many were added.
    pub fn seed_builtin_purposes(&mut self) -> Result<usize> {
        let _lock = WriteLock::acquire(&self.root)?;
        let mut added = 0;
        for p in builtin_purposes() {
            if !self.purposes.contains_key(&p.id) {
                self.purposes.insert(p.id.clone(), p);
                added += 1;
            }
        }
        if added > 0 || !self.root.join("purposes.json").exists() {
            self.save_purposes()?;
        }
        Ok(added)
    }

    pub fn add_purpose(&mut self, purpose: Purpose) -> Result<()> {
        if purpose.id.trim().is_empty() {
            return Err(Error::InvalidArgument("purpose id must not be empty".into()));
        }
        if self.purposes.contains_key(&purpose.id) {
            return Err(Error::DuplicatePurpose(purpose.id));
        }
        let _lock = WriteLock::acquire(&self.root)?;
        self.purposes.insert(purpose.id.clone(), purpose);
        self.save_purposes()
    }

    pub fn purposes(&self) -> impl Iterator<Item = &Purpose> {
        self.purposes.values()
    }

    pub fn purpose(&self, id: &str) -> Result<&Purpose> {
        self.purposes
            .get(id)
            .ok_or_else(|| Error::UnknownPurpose(id.to_string()))
    }

    pub fn list(&self) -> Vec<&IndexEntry> {
        let mut v: Vec<&IndexEntry> = self.index.records.values().collect();
        v.sort_by_key(|e| e.sequence);
        v
    }

    fn record_path(&self, record_id: &str, version: u32) -> PathBuf {
        self.root.join("records").join(format!("{record_id}_v{version}.json"))
    }

    pub fn record_version(&self, record_id: &str, version: u32) -> Result<AssessmentRecord> {
        let path = self.record_path(record_id, version);
        match fs::read(&path) {
            Ok(b) => Ok(serde_json::from_slice(&b)?),
            Err(e) if e.kind() == ErrorKind::NotFound => Err(Error::UnknownRecord(format!("{record_id} v{version}"))),
            Err(e) => Err(e.into()),
        }
    }

    pub fn latest(&self, record_id: &str) -> Result<AssessmentRecord> {
        let entry = self
            .index
            .records
            .get(record_id)
            .ok_or_else(|| Error::UnknownRecord(record_id.to_string()))?;
        self.record_version(record_id, entry.latest_version)
    }

    /// Every version of `record_id` and of the records it supersedes,
    /// newest first.
    pub fn version_chain(&self, record_id: &str) -> Result<Vec<AssessmentRecord>> {
        let mut out = Vec::new();
        let mut seen = BTreeSet::new();
        let mut next = Some(record_id.to_string());
        while let Some(id) = next {
            if !seen.insert(id.clone()) {
                break;
            }
            let latest = self.latest(&id)?;
            next = latest.supersedes.clone();
            let mut v = Some(latest.version);
            while let Some(ver) = v {
                let rec = self.record_version(&id, ver)?;
                v = rec.previous_version;
                out.push(rec);
            }
        }
        Ok(out)
    }

    fn persist(&mut self, record: &AssessmentRecord) -> Result<()> {
        write_new(&self.record_path(&record.record_id, record.version), &to_json(record)?)?;
        let entry = self
            .index
            .records
            .get_mut(&record.record_id)
            .expect("index entry exists before persisting");
        entry.latest_version = record.version;
        entry.overall_decision = record.overall_decision;
        self.save_index()
    }

    pub fn open_assessment(
        &mut self,
        purpose_old: &str,
        purpose_new: &str,
        assessor: &str,
    ) -> Result<AssessmentRecord> {
        self.purpose(purpose_old)?;
        self.purpose(purpose_new)?;
        if purpose_old == purpose_new {
            return Err(Error::InvalidArgument(
                "a purpose cannot be assessed against itself".into(),
            ));
        }
        let same_pair = || {
            self.list()
                .into_iter()
                .filter(|e| e.purpose_old == purpose_old && e.purpose_new == purpose_new)
        };
        if let Some(open) = same_pair().find(|e| e.overall_decision == OverallDecision::Pending) {
            return Err(Error::DuplicateOpenRecord(open.record_id.clone()));
        }
        let supersedes = same_pair().next_back().map(|e| e.record_id.clone());

        let _lock = WriteLock::acquire(&self.root)?;
        let now = self.clock.now();
        let sequence = self.index.next_sequence;
        let digest = Sha256::digest(
            format!(
                "{purpose_old}\u{1f}{purpose_new}\u{1f}{assessor}\u{1f}{}\u{1f}{sequence}",
                now.to_rfc3339()
            )
            .as_bytes(),
        );
        let record = AssessmentRecord {
            schema_version: SCHEMA_VERSION,
            record_id: format!("rec-{}", &hex::encode(digest)[..16]),
            version: 1,
            previous_version: None,
            supersedes: supersedes.clone(),
            purpose_old: purpose_old.to_string(),
            purpose_new: purpose_new.to_string(),
            criteria: blank_criteria(),
            overall_decision: OverallDecision::Pending,
            assessor: assessor.to_string(),
            created_at: now,
            updated_at: now,
            decided_at: None,
            provenance: Provenance {
                tool_version: TOOL_VERSION.to_string(),
                ..Provenance::default()
            },
        };
        self.index.next_sequence += 1;
        self.index.records.insert(
            record.record_id.clone(),
            IndexEntry {
                record_id: record.record_id.clone(),
                sequence,
                purpose_old: purpose_old.to_string(),
                purpose_new: purpose_new.to_string(),
                latest_version: 1,
                overall_decision: OverallDecision::Pending,
                supersedes,
            },
        );
        self.persist(&record)?;
        Ok(record)
    }

    /// Loads the latest pending version, applies `change` and stores it as
    /// the next version.
    fn amend(
        &mut self,
        record_id: &str,
        change: impl FnOnce(&mut AssessmentRecord) -> Result<()>,
    ) -> Result<AssessmentRecord> {
        let mut rec = self.latest(record_id)?;
        if rec.overall_decision != OverallDecision::Pending {
            return Err(Error::RecordClosed(record_id.to_string()));
        }
        change(&mut rec)?;
        let _lock = WriteLock::acquire(&self.root)?;
        rec.previous_version = Some(rec.version);
        rec.version += 1;
        rec.updated_at = self.clock.now();
        if rec.overall_decision != OverallDecision::Pending {
            rec.decided_at = Some(rec.updated_at);
        }
        self.persist(&rec)?;
        Ok(rec)
    }

    pub fn attach_evidence(
        &mut self,
        record_id: &str,
        criterion: Criterion,
        artifact: ArtifactRef,
    ) -> Result<AssessmentRecord> {
        self.amend(record_id, |rec| {
            if !artifact.dataset_fingerprint.is_empty() {
                rec.provenance
                    .dataset_fingerprints
                    .insert(artifact.dataset_fingerprint.clone());
            }
            rec.provenance.seeds.extend(artifact.seed);
            rec.criterion_mut(criterion).automated_evidence.push(artifact);
            Ok(())
        })
    }

    pub fn set_manual(
        &mut self,
        record_id: &str,
        criterion: Criterion,
        text: &str,
        verdict: AssessorVerdict,
    ) -> Result<AssessmentRecord> {
        self.amend(record_id, |rec| {
            let e = rec.criterion_mut(criterion);
            e.manual_assessment = text.to_string();
            e.assessor_verdict = verdict;
            Ok(())
        })
    }

    /// Records the assessor's overall decision. Criterion verdicts are not
    /// aggregated; they only have to be present.
    pub fn decide(&mut self, record_id: &str, decision: OverallDecision) -> Result<AssessmentRecord> {
        if decision == OverallDecision::Pending {
            return Err(Error::InvalidArgument(
                "a decision must be compatible or incompatible".into(),
            ));
        }
        let bound = |id: &str| self.purposes.get(id).is_some_and(|p| p.computational_binding.is_some());
        let rec = self.latest(record_id)?;
        let needs_link = bound(&rec.purpose_old) && bound(&rec.purpose_new);
        self.amend(record_id, |rec| {
            let missing = rec.unassessed();
            if !missing.is_empty() {
                return Err(Error::CriteriaNotAssessed(
                    missing.iter().map(|c| c.name().to_string()).collect(),
                ));
            }
            if needs_link && rec.criterion(Criterion::ALink).automated_evidence.is_empty() {
                return Err(Error::LinkEvidenceRequired);
            }
            rec.overall_decision = decision;
            Ok(())
        })
    }

    pub fn drafts(&self) -> Result<Vec<AssessmentDraft>> {
        let mut names: Vec<PathBuf> = fs::read_dir(self.root.join("drafts"))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        names.sort();
        names
            .into_iter()
            .map(|p| Ok(serde_json::from_slice(&fs::read(p)?)?))
            .collect()
    }
}

impl DraftSink for Registry {
    fn file_draft(&self, draft: &AssessmentDraft) -> Result<PathBuf> {
        let _lock = WriteLock::acquire(&self.root)?;
        let path = self.root.join("drafts").join(format!("{}.json", draft.draft_id));
        write_new(&path, &to_json(draft)?)?;
        Ok(path)
    }
}

/// Plain-text rendering of a record for a human reader.
pub fn render_report(record: &AssessmentRecord, registry: &Registry) -> String {
    let label = |id: &str| registry.purpose(id).map(|p| p.label.clone()).unwrap_or_default();
    let mut s = String::new();
    let _ = writeln!(s, "Purpose compatibility assessment {}", record.record_id);
    let _ = writeln!(s, "{}", "=".repeat(34 + record.record_id.len()));
    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "Original purpose : {} ({})",
        record.purpose_old,
        label(&record.purpose_old)
    );
    let _ = writeln!(
        s,
        "New purpose      : {} ({})",
        record.purpose_new,
        label(&record.purpose_new)
    );
    let _ = writeln!(s, "Assessor         : {}", record.assessor);
    let _ = writeln!(s, "Decision         : {}", record.overall_decision);
    let _ = writeln!(s, "Created          : {}", record.created_at.to_rfc3339());
    if let Some(d) = record.decided_at {
        let _ = writeln!(s, "Decided          : {}", d.to_rfc3339());
    }
    let _ = writeln!(s, "Version          : {}", record.version);
    if let Some(prev) = &record.supersedes {
        let _ = writeln!(s, "Supersedes       : {prev}");
    }
    for entry in &record.criteria {
        let _ = writeln!(s);
        let _ = writeln!(s, "{}", entry.criterion.title());
        let _ = writeln!(s, "  verdict: {}", entry.assessor_verdict);
        if !entry.manual_assessment.is_empty() {
            let _ = writeln!(s, "  assessment: {}", entry.manual_assessment);
        }
        for a in &entry.automated_evidence {
            let _ = writeln!(s, "  evidence: {:?} {} sha256={}", a.kind, a.path, a.sha256);
            if let Some(seed) = a.seed {
                let _ = writeln!(s, "    seed={seed}");
            }
            for (k, v) in &a.params {
                let _ = writeln!(s, "    {k}={v}");
            }
        }
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "Provenance: {}", record.provenance.tool_version);
    for fp in &record.provenance.dataset_fingerprints {
        let _ = writeln!(s, "  dataset {fp}");
    }
    if !record.provenance.seeds.is_empty() {
        let seeds: Vec<String> = record.provenance.seeds.iter().map(u64::to_string).collect();
        let _ = writeln!(s, "  seeds {}", seeds.join(", "));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn fixed() -> Box<dyn Clock> {
        Box::new(FixedClock(Utc.with_ymd_and_hms(2024, 1, 2, 3, 4, 5).unwrap()))
    }

    fn store() -> (tempfile::TempDir, Registry) {
        let dir = tempfile::tempdir().unwrap();
        let mut reg = Registry::open_with_clock(dir.path(), fixed()).unwrap();
        reg.seed_builtin_purposes().unwrap();
        (dir, reg)
    }

    fn assess_all(reg: &mut Registry, id: &str) {
        for c in Criterion::ALL {
            reg.set_manual(id, c, "reviewed", AssessorVerdict::Neutral).unwrap();
        }
    }

    #[test]
    fn builtin_lists_have_expected_sizes() {
        let all = builtin_purposes();
        assert_eq!(all.len(), 25);
        assert_eq!(all.iter().filter(|p| p.source == PurposeSource::TcfV22).count(), 18);
        assert_eq!(
            all.iter().filter(|p| p.source == PurposeSource::GoogleAccount).count(),
            7
        );
        let ids: BTreeSet<_> = all.iter().map(|p| &p.id).collect();
        assert_eq!(ids.len(), 25);
    }

    #[test]
    fn seeding_is_idempotent_and_keeps_custom() {
        let (_d, mut reg) = store();
        assert_eq!(reg.purposes().count(), 25);
        reg.add_purpose(Purpose::custom("mine", "Mine", None)).unwrap();
        assert_eq!(reg.seed_builtin_purposes().unwrap(), 0);
        assert_eq!(reg.purposes().count(), 26);
        assert!(matches!(
            reg.add_purpose(Purpose::custom("mine", "Again", None)),
            Err(Error::DuplicatePurpose(_))
        ));
    }

    #[test]
    fn open_checks_purposes_and_duplicates() {
        let (_d, mut reg) = store();
        assert!(matches!(
            reg.open_assessment("tcf-p5", "nope", "x"),
            Err(Error::UnknownPurpose(_))
        ));
        let rec = reg.open_assessment("tcf-p5", "tcf-p6", "alice").unwrap();
        assert_eq!(rec.criteria.len(), 5);
        assert_eq!(rec.overall_decision, OverallDecision::Pending);
        match reg.open_assessment("tcf-p5", "tcf-p6", "bob") {
            Err(Error::DuplicateOpenRecord(id)) => assert_eq!(id, rec.record_id),
            other => panic!("{other:?}"),
        }
        // the reverse ordered pair is a different assessment
        reg.open_assessment("tcf-p6", "tcf-p5", "bob").unwrap();
    }

    #[test]
    fn decide_guards_list_missing_criteria() {
        let (_d, mut reg) = store();
        let id = reg.open_assessment("tcf-p5", "tcf-p6", "alice").unwrap().record_id;
        for c in [
            Criterion::ALink,
            Criterion::BContext,
            Criterion::CNature,
            Criterion::ESafeguards,
        ] {
            reg.set_manual(&id, c, "ok", AssessorVerdict::FavorsCompatible).unwrap();
        }
        let err = reg.decide(&id, OverallDecision::Compatible).unwrap_err();
        assert!(matches!(&err, Error::CriteriaNotAssessed(v) if v == &["d_consequences".to_string()]));
        assert!(err.to_string().contains("d_consequences"));
    }

    #[test]
    fn versions_are_append_only_and_decide_stamps_time() {
        let (_d, mut reg) = store();
        let id = reg.open_assessment("google-1", "google-4", "alice").unwrap().record_id;
        let v1 = reg.record_version(&id, 1).unwrap();
        assess_all(&mut reg, &id);
        let decided = reg.decide(&id, OverallDecision::Incompatible).unwrap();
        assert_eq!(decided.version, 7);
        assert!(decided.decided_at.is_some());
        assert_eq!(reg.record_version(&id, 1).unwrap(), v1);
        assert!(matches!(
            reg.set_manual(&id, Criterion::ALink, "late", AssessorVerdict::Neutral),
            Err(Error::RecordClosed(_))
        ));
        let chain = reg.version_chain(&id).unwrap();
        let versions: Vec<u32> = chain.iter().map(|r| r.version).collect();
        assert_eq!(versions, (1..=7).rev().collect::<Vec<_>>());
    }

    #[test]
    fn reopening_links_to_decided_record() {
        let (_d, mut reg) = store();
        let first = reg.open_assessment("tcf-p5", "tcf-p6", "alice").unwrap().record_id;
        assess_all(&mut reg, &first);
        reg.decide(&first, OverallDecision::Compatible).unwrap();
        let second = reg.open_assessment("tcf-p5", "tcf-p6", "alice").unwrap();
        assert_ne!(second.record_id, first);
        assert_eq!(second.supersedes.as_deref(), Some(first.as_str()));
        let chain = reg.version_chain(&second.record_id).unwrap();
        assert_eq!(chain.first().unwrap().record_id, second.record_id);
        assert_eq!(chain.last().unwrap().record_id, first);
        assert_eq!(chain.last().unwrap().version, 1);
    }

    #[test]
    fn bound_purposes_need_link_evidence() {
        let (dir, mut reg) = store();
        reg.add_purpose(Purpose::genre_recommendation("old", &["Action"]))
            .unwrap();
        reg.add_purpose(Purpose::genre_recommendation("new", &["Horror"]))
            .unwrap();
        let id = reg.open_assessment("old", "new", "alice").unwrap().record_id;
        assess_all(&mut reg, &id);
        assert!(matches!(
            reg.decide(&id, OverallDecision::Compatible),
            Err(Error::LinkEvidenceRequired)
        ));
        let path = dir.path().join("evidence.csv");
        fs::write(&path, "x\n").unwrap();
        let art = ArtifactRef::for_file(ArtifactKind::LinkMatrix, &path, "fp", Some(7), BTreeMap::new()).unwrap();
        let rec = reg.attach_evidence(&id, Criterion::ALink, art).unwrap();
        assert_eq!(rec.criterion(Criterion::ALink).automated_evidence.len(), 1);
        assert!(rec.provenance.seeds.contains(&7));
        reg.decide(&id, OverallDecision::Compatible).unwrap();
    }

    #[test]
    fn store_round_trips_through_disk() {
        let (dir, mut reg) = store();
        reg.add_purpose(Purpose::custom(
            "c1",
            "Custom",
            Some(ComputationalBinding::Task { descriptor: "t".into() }),
        ))
        .unwrap();
        let id = reg.open_assessment("tcf-p5", "c1", "alice").unwrap().record_id;
        reg.set_manual(&id, Criterion::BContext, "ctx", AssessorVerdict::Neutral)
            .unwrap();
        let purposes: Vec<Purpose> = reg.purposes().cloned().collect();
        let chain = reg.version_chain(&id).unwrap();
        drop(reg);
        let reg = Registry::open_with_clock(dir.path(), fixed()).unwrap();
        assert_eq!(reg.purposes().cloned().collect::<Vec<_>>(), purposes);
        assert_eq!(reg.version_chain(&id).unwrap(), chain);
        assert!(!dir.path().join(".lock").exists());
    }

    #[test]
    fn held_lock_blocks_writers() {
        let (dir, mut reg) = store();
        fs::write(dir.path().join(".lock"), "1").unwrap();
        assert!(matches!(
            reg.open_assessment("tcf-p5", "tcf-p6", "a"),
            Err(Error::Locked(_))
        ));
    }

    #[test]
    fn fixed_clock_makes_ids_reproducible() {
        let (_a, mut r1) = store();
        let (_b, mut r2) = store();
        let x = r1.open_assessment("tcf-p1", "tcf-p2", "a").unwrap();
        let y = r2.open_assessment("tcf-p1", "tcf-p2", "a").unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn drafts_are_filed_once() {
        let (_d, reg) = store();
        let mut draft = AssessmentDraft::new(3, "fp", Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap());
        draft.reasons.push("shift".into());
        reg.file_draft(&draft).unwrap();
        assert!(reg.file_draft(&draft).is_err());
        assert_eq!(reg.drafts().unwrap(), vec![draft]);
    }

    #[test]
    fn report_lists_every_criterion() {
        let (_d, mut reg) = store();
        let id = reg.open_assessment("tcf-p5", "tcf-p6", "alice").unwrap().record_id;
        assess_all(&mut reg, &id);
        let rec = reg.decide(&id, OverallDecision::Compatible).unwrap();
        let text = render_report(&rec, &reg);
        for c in Criterion::ALL {
            assert!(text.contains(c.title()));
        }
        assert!(text.contains("Decision         : compatible"));
    }

    #[test]
    fn criterion_parsing() {
        assert_eq!(Criterion::parse("a"), Some(Criterion::ALink));
        assert_eq!(Criterion::parse("d_consequences"), Some(Criterion::DConsequences));
        assert_eq!(Criterion::parse("z"), None);
    }
}
