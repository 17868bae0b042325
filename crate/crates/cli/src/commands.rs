use std::collections::BTreeMap;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use chrono::DateTime;
use repurpose_core::heatmap::render_svg;
use repurpose_core::impact::{expand_and_compare, ImpactConfig};
use repurpose_core::links::{
    decide_compatibility, genre_overlap_matrix, jaccard_matrix, rating_correlation_matrix, CorrelationOptions,
    LinkMatrix,
};
use repurpose_core::monitor::{
    merge_by_batch, trigger_reassessment, write_alerts_jsonl, DriftTest, MonitorConfig, MonitorState,
    ReassessmentContext,
};
use repurpose_core::probe::{predictability_probe, Attribute, ProbeConfig};
use repurpose_core::registry::{
    render_report, ArtifactKind, ArtifactRef, AssessorVerdict, Clock, Criterion, FixedClock, OverallDecision, Purpose,
    Registry, SystemClock,
};
use repurpose_core::safeguards::{
    apply_perturbation, reidentification_risk, reidentification_risk_after, risk_curve, write_risk_curve_csv,
    AdversaryModel, KnownPairs, Perturbation,
};
use repurpose_core::{dataset_stats, parse_generic, parse_movielens, Error, RatingsDataset};

use crate::provenance::{self, Outputs};
use crate::*;

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Ingest(a) => ingest(a),
        Command::Links(a) => links(a),
        Command::Probe(a) => probe(a),
        Command::Risk(a) => risk(a),
        Command::Impact(a) => impact(a),
        Command::Monitor(a) => monitor(a),
        Command::Assess(a) => assess(a),
        Command::Report(a) => report(a),
    }
}

fn load(d: &DatasetArgs) -> Result<RatingsDataset> {
    if !d.dataset.exists() {
        return Err(Error::MissingFile(d.dataset.clone()).into());
    }
    Ok(match d.format {
        Format::Movielens => parse_movielens(&d.dataset)?,
        Format::Generic => {
            let users = d.dataset.join("users.csv");
            parse_generic(
                d.dataset.join("ratings.csv"),
                d.dataset.join("items.csv"),
                users.exists().then_some(users.as_path()),
                1,
            )?
        }
    })
}

fn format_name(f: Format) -> &'static str {
    match f {
        Format::Movielens => "movielens",
        Format::Generic => "generic",
    }
}

/// Existing genres default to every analysis genre except the new one.
fn scenario(ds: &RatingsDataset, existing: &Option<Vec<String>>, new: &str) -> Result<Vec<String>> {
    ds.genre_index(new)?;
    let existing = match existing {
        Some(list) => list.clone(),
        None => ds.analysis_genre_names().into_iter().filter(|g| g != new).collect(),
    };
    ds.genre_set(&existing)?;
    if existing.iter().any(|g| g == new) {
        return Err(Error::InvalidArgument(format!("{new} is already an existing genre")).into());
    }
    Ok(existing)
}

fn clock() -> Result<Box<dyn Clock>> {
    match std::env::var("SOURCE_DATE_EPOCH") {
        Ok(s) => {
            let secs: i64 = s.trim().parse().context("SOURCE_DATE_EPOCH must be an integer")?;
            let t = DateTime::from_timestamp(secs, 0).context("SOURCE_DATE_EPOCH out of range")?;
            Ok(Box::new(FixedClock(t)))
        }
        Err(_) => Ok(Box::new(SystemClock)),
    }
}

fn ingest(a: IngestArgs) -> Result<()> {
    let ds = load(&a.data)?;
    let stats = dataset_stats(&ds);
    let mut out = Outputs::new(&a.out.out, "ingest", &a.data.dataset, ds.fingerprint(), None)?;
    out.param("format", format_name(a.data.format));
    out.write_json("stats.json", None, &stats)?;
    out.finish()?;
    println!("ratings: {}", stats.ratings);
    println!("users: {}", stats.users);
    println!("items: {}", stats.items);
    println!("min ratings per user: {}", stats.min_ratings_per_user);
    println!("analysis genres: {}", stats.analysis_genres);
    println!("fingerprint: {}", stats.fingerprint);
    Ok(())
}

fn csv_bytes(m: &LinkMatrix) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    m.write_csv(&mut buf)?;
    Ok(buf)
}

fn links(a: LinksArgs) -> Result<()> {
    let ds = load(&a.data)?;
    let name = match a.measure {
        MeasureArg::Conditional => "conditional",
        MeasureArg::Jaccard => "jaccard",
        MeasureArg::Spearman => "spearman",
    };
    let mut out = Outputs::new(&a.out.out, "links", &a.data.dataset, ds.fingerprint(), None)?;
    out.param("format", format_name(a.data.format)).param("measure", name);

    let matrix = match a.measure {
        MeasureArg::Conditional => genre_overlap_matrix(&ds),
        MeasureArg::Jaccard => jaccard_matrix(&ds),
        MeasureArg::Spearman => {
            let corr = rating_correlation_matrix(&ds, &CorrelationOptions::default())?;
            let mut buf = Vec::new();
            corr.write_csv(&mut buf)?;
            out.write("spearman.csv", Some(ArtifactKind::CorrelationResults), &buf)?;
            println!("tested pairs: {}", corr.tested_pairs);
            corr.matrix
        }
    };
    let matrix_file = match a.measure {
        MeasureArg::Spearman => "spearman_matrix.csv".to_string(),
        _ => format!("{name}.csv"),
    };
    out.write(&matrix_file, Some(ArtifactKind::LinkMatrix), &csv_bytes(&matrix)?)?;
    out.write(&format!("{name}.svg"), None, render_svg(&matrix).as_bytes())?;
    println!("wrote {}", a.out.out.join(&matrix_file).display());

    if let Some(new) = &a.new_genre {
        let existing = scenario(&ds, &a.existing_genres, new)?;
        let decisions = existing
            .iter()
            .map(|g| decide_compatibility(&matrix, g, new, a.threshold))
            .collect::<repurpose_core::Result<Vec<_>>>()?;
        for d in &decisions {
            println!(
                "{} -> {}: {:.6} {:?}",
                d.existing_genre, d.new_genre, d.value, d.verdict
            );
        }
        out.param("threshold", a.threshold).param("new_genre", new);
        out.write_json(&format!("{name}_decision.json"), None, &decisions)?;
    }
    out.finish()
}

fn probe(a: ProbeArgs) -> Result<()> {
    let ds = load(&a.data)?;
    let existing = scenario(&ds, &a.scenario.existing_genres, &a.scenario.new_genre)?;
    let mut expanded = existing.clone();
    expanded.push(a.scenario.new_genre.clone());
    let (attribute, attr_name) = match a.attribute {
        AttributeArg::Gender => (Attribute::Gender, "gender"),
        AttributeArg::AgeBand => (Attribute::AgeBand, "age_band"),
    };
    let cfg = ProbeConfig {
        attribute,
        genre_set_old: existing.clone(),
        genre_set_new: expanded,
        neighbors: repurpose_core::probe::DEFAULT_NEIGHBORS,
        folds: repurpose_core::probe::DEFAULT_FOLDS,
        seed: a.seed.seed,
    };
    let rep = predictability_probe(&ds, &cfg)?;
    let mut out = Outputs::new(
        &a.out.out,
        "probe",
        &a.data.dataset,
        ds.fingerprint(),
        Some(a.seed.seed),
    )?;
    out.param("format", format_name(a.data.format))
        .param("attribute", attr_name)
        .param("existing_genres", existing.join(","))
        .param("new_genre", &a.scenario.new_genre);
    out.write_json(
        &format!("probe_{attr_name}.json"),
        Some(ArtifactKind::PredictabilityReport),
        &rep,
    )?;
    out.finish()?;
    println!("baseline accuracy: {:.6}", rep.baseline_accuracy);
    println!("accuracy with existing genres: {:.6}", rep.model_accuracy_old);
    println!("accuracy with new genre added: {:.6}", rep.model_accuracy_new);
    println!("delta: {:+.6}", rep.delta);
    Ok(())
}

fn parse_known_pairs(s: &str) -> Result<KnownPairs> {
    if s.eq_ignore_ascii_case("full") {
        return Ok(KnownPairs::FullProfile);
    }
    match s.parse::<usize>() {
        Ok(k) if k > 0 => Ok(KnownPairs::Count(k)),
        _ => {
            Err(Error::InvalidArgument(format!("--known-pairs must be a positive count or \"full\", got {s:?}")).into())
        }
    }
}

fn risk(a: RiskArgs) -> Result<()> {
    let ds = load(&a.data)?;
    let adv = AdversaryModel {
        known_pairs: parse_known_pairs(&a.known_pairs)?,
        rating_tolerance: a.tolerance,
        trials: a.trials,
        seed: a.seed.seed,
    };
    let perturbation = match (a.jitter, a.suppress) {
        (Some(p), _) => Some(Perturbation::RatingJitter { p }),
        (_, Some(q)) => Some(Perturbation::Suppression { q }),
        _ => None,
    };
    let report = match perturbation {
        Some(p) => {
            let released = apply_perturbation(&ds, p, a.seed.seed)?;
            reidentification_risk_after(&ds, &released, &adv)?
        }
        None => reidentification_risk(&ds, &adv)?,
    };
    let curve = risk_curve(&ds, &a.curve, a.tolerance, a.trials, a.seed.seed)?;

    let mut out = Outputs::new(&a.out.out, "risk", &a.data.dataset, ds.fingerprint(), Some(a.seed.seed))?;
    out.param("format", format_name(a.data.format))
        .param("known_pairs", &a.known_pairs)
        .param("tolerance", a.tolerance)
        .param("trials", a.trials);
    if let Some(p) = perturbation {
        out.param("perturbation", p.describe());
    }
    out.write_json("risk.json", Some(ArtifactKind::ReidentificationReport), &report)?;
    let mut buf = Vec::new();
    write_risk_curve_csv(&curve, &mut buf)?;
    out.write("risk_curve.csv", None, &buf)?;
    out.finish()?;
    println!("unique match rate: {:.6}", report.unique_match_rate);
    println!("mean candidate set size: {:.6}", report.mean_candidate_set_size);
    for p in &curve {
        println!("k={}: unique match rate {:.6}", p.k, p.unique_match_rate);
    }
    Ok(())
}

fn impact(a: ImpactArgs) -> Result<()> {
    let ds = load(&a.data)?;
    let existing = scenario(&ds, &a.scenario.existing_genres, &a.scenario.new_genre)?;
    let cfg = ImpactConfig {
        old_genres: existing.clone(),
        new_genre: a.scenario.new_genre.clone(),
        k_top: a.top_k,
        holdout_fraction: a.holdout,
        neighbor_count: a.neighbors,
        seed: a.seed.seed,
    };
    let rep = expand_and_compare(&ds, &cfg)?;
    let mut out = Outputs::new(
        &a.out.out,
        "impact",
        &a.data.dataset,
        ds.fingerprint(),
        Some(a.seed.seed),
    )?;
    out.param("format", format_name(a.data.format))
        .param("existing_genres", existing.join(","))
        .param("new_genre", &a.scenario.new_genre)
        .param("top_k", a.top_k)
        .param("holdout", a.holdout)
        .param("neighbors", a.neighbors);
    out.write_json("impact.json", Some(ArtifactKind::ImpactReport), &rep)?;
    let mut buf = Vec::new();
    rep.write_user_csv(&mut buf)?;
    out.write("impact_users.csv", None, &buf)?;
    out.finish()?;
    println!(
        "mean new-genre share in top-{}: {:.6}",
        a.top_k,
        rep.mean_new_genre_share()
    );
    if let Some(d) = &rep.retained_overlap {
        println!("mean retained overlap: {:.6}", d.mean);
    }
    if let Some(d) = rep.rmse_delta {
        println!("rmse delta on existing items: {d:+.6}");
    }
    if rep.degenerate {
        println!("degenerate: the new genre adds no items");
    }
    Ok(())
}

fn monitor(a: MonitorArgs) -> Result<()> {
    let ds = Arc::new(load(&a.data)?);
    let config = MonitorConfig {
        reference_window: a.window,
        test: match a.test {
            TestArg::MeanShiftZ => DriftTest::MeanShiftZ,
            TestArg::Ks => DriftTest::KsTwoSample,
        },
        alpha: a.alpha,
        min_batch_size: a.min_batch,
        ..MonitorConfig::default()
    };
    let mut state = MonitorState::new(config, ds.clone())?;
    let mut alerts = Vec::new();
    let mut statuses = Vec::new();
    for path in &a.batches {
        if !path.exists() {
            return Err(Error::MissingFile(path.clone()).into());
        }
        let batch = repurpose_core::dataset::read_rating_csv(path)?;
        let raised = state.feed_batch(&batch)?;
        println!("{}: {} ratings, {} alerts", path.display(), batch.len(), raised.len());
        alerts.extend(raised);
        statuses.push(state.status().clone());
    }

    let mut out = Outputs::new(&a.out.out, "monitor", &a.data.dataset, ds.fingerprint(), None)?;
    out.param("alpha", a.alpha)
        .param("window", a.window)
        .param("min_batch", a.min_batch)
        .param("test", format!("{:?}", a.test));
    let mut buf = Vec::new();
    write_alerts_jsonl(&mut buf, &alerts)?;
    out.write("alerts.jsonl", None, &buf)?;
    out.write_json("monitor_status.json", None, &statuses)?;
    out.finish()?;

    if let (Some(store), Some(new)) = (&a.store, &a.new_genre) {
        let existing = scenario(&ds, &a.existing_genres, new)?;
        let clock = clock()?;
        let ctx = ReassessmentContext {
            existing_genres: existing,
            new_genre: new.clone(),
            seed: a.seed.seed,
            evidence_dir: a.out.out.join("evidence"),
            spool_dir: a.out.out.join("spool"),
            created_at: clock.now(),
            k_top: a.top_k,
            neighbor_count: repurpose_core::impact::DEFAULT_NEIGHBORS,
        };
        let registry = Registry::open_with_clock(store, clock)?;
        for batch_alerts in merge_by_batch(&alerts).values() {
            let draft = trigger_reassessment(batch_alerts, &ds, &ctx, &registry)?;
            println!("filed draft {}", draft.draft_id);
        }
    }
    Ok(())
}

fn open_store(s: &StoreArgs) -> Result<Registry> {
    let mut reg = Registry::open_with_clock(&s.store, clock()?)?;
    reg.seed_builtin_purposes()?;
    Ok(reg)
}

fn criterion(s: &str) -> Result<Criterion> {
    Criterion::parse(s)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown criterion {s:?}; use a, b, c, d or e")).into())
}

/// Id of the purpose bound to `genres`, registering it if needed.
fn genre_purpose(reg: &mut Registry, genres: &[String]) -> Result<String> {
    if genres.is_empty() {
        return Err(Error::InvalidArgument("a genre purpose needs at least one genre".into()).into());
    }
    let id = format!("genres:{}", genres.join("+"));
    if reg.purpose(&id).is_err() {
        reg.add_purpose(Purpose::genre_recommendation(&id, genres))?;
    }
    Ok(id)
}

fn assess(cmd: AssessCommand) -> Result<()> {
    match cmd {
        AssessCommand::Open(a) => {
            let mut reg = open_store(&a.store)?;
            let old = match (&a.old, &a.existing_genres) {
                (Some(id), _) => id.clone(),
                (None, Some(g)) => genre_purpose(&mut reg, g)?,
                (None, None) => bail!(Error::InvalidArgument("give --old or --existing-genres".into())),
            };
            let new = match (&a.new, &a.new_genre) {
                (Some(id), _) => id.clone(),
                (None, Some(g)) => genre_purpose(&mut reg, std::slice::from_ref(g))?,
                (None, None) => bail!(Error::InvalidArgument("give --new or --new-genre".into())),
            };
            let rec = reg.open_assessment(&old, &new, &a.assessor)?;
            println!("{}", rec.record_id);
        }
        AssessCommand::Attach(a) => {
            let mut reg = open_store(&a.store)?;
            let c = criterion(&a.criterion)?;
            let entry = provenance::lookup(&a.artifact)?;
            let Some(kind) = entry.kind else {
                bail!(Error::InvalidArgument(format!(
                    "{} is not an evidence artifact",
                    a.artifact.display()
                )));
            };
            let mut params: BTreeMap<String, String> = entry.params;
            params.insert("command".into(), entry.command);
            params.insert("dataset".into(), entry.dataset);
            let artifact = ArtifactRef {
                kind,
                path: a.artifact.to_string_lossy().into_owned(),
                sha256: entry.sha256,
                dataset_fingerprint: entry.dataset_fingerprint,
                seed: entry.seed,
                params,
            };
            let rec = reg.attach_evidence(&a.record, c, artifact)?;
            println!("{} v{}", rec.record_id, rec.version);
        }
        AssessCommand::Manual(a) => {
            let mut reg = open_store(&a.store)?;
            let verdict = match a.verdict {
                VerdictArg::FavorsCompatible => AssessorVerdict::FavorsCompatible,
                VerdictArg::FavorsIncompatible => AssessorVerdict::FavorsIncompatible,
                VerdictArg::Neutral => AssessorVerdict::Neutral,
            };
            let rec = reg.set_manual(&a.record, criterion(&a.criterion)?, &a.text, verdict)?;
            println!("{} v{}", rec.record_id, rec.version);
        }
        AssessCommand::Decide(a) => {
            let mut reg = open_store(&a.store)?;
            let decision = match a.decision {
                DecisionArg::Compatible => OverallDecision::Compatible,
                DecisionArg::Incompatible => OverallDecision::Incompatible,
            };
            let rec = reg.decide(&a.record, decision)?;
            println!("{} v{} {}", rec.record_id, rec.version, rec.overall_decision);
        }
        AssessCommand::List(s) => {
            let reg = open_store(&s)?;
            for e in reg.list() {
                println!(
                    "{}\tv{}\t{}\t{} -> {}",
                    e.record_id, e.latest_version, e.overall_decision, e.purpose_old, e.purpose_new
                );
            }
        }
    }
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    let reg = open_store(&a.store)?;
    let rec = reg.latest(&a.record)?;
    if rec.overall_decision == OverallDecision::Pending {
        bail!(Error::InvalidArgument(format!(
            "record {} is still pending; decide it first",
            rec.record_id
        )));
    }
    std::fs::create_dir_all(&a.out.out)?;
    let path = a.out.out.join(format!("report_{}.txt", rec.record_id));
    std::fs::write(&path, render_report(&rec, &reg))?;
    println!("{}", path.display());
    Ok(())
}
