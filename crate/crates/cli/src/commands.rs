use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use log::info;
use rayon::prelude::*;

use eventlens::corpus::load_corpus;
use eventlens::evalharness::{run_experiment, run_experiment_with_models, ExperimentContext, MetricsReport, Strategy};
use eventlens::eventmine::{mine_events, read_events_jsonl, write_events_jsonl};
use eventlens::scorers::{FeatureKind, FeatureScore};
use eventlens::synthgen::{generate, SynthConfig};
use eventlens::{Corpus, Events};

use crate::config::Resolved;

pub fn synth(cfg: &SynthConfig, out: &Path) -> Result<()> {
    let output = generate(cfg)?;
    output.write(out)?;
    info!(
        "wrote {} check-ins, {} planted events to {}",
        output.corpus.checkins().len(),
        output.ground_truth.events.len(),
        out.display()
    );
    Ok(())
}

fn load(cfg: &Resolved) -> Result<Corpus> {
    let p = &cfg.corpus;
    let corpus = load_corpus(&p.checkins, &p.venues, &p.social, cfg.timezone_offset_minutes)?;
    info!(
        "loaded {} users, {} venues, {} check-ins",
        corpus.n_users(),
        corpus.venues().len(),
        corpus.checkins().len()
    );
    Ok(corpus)
}

/// Events from `--events` when given, mined on the fly otherwise.
fn events(cfg: &Resolved, corpus: &Corpus) -> Result<Events> {
    let records = match &cfg.events {
        Some(path) => read_events_jsonl(path, corpus)?,
        None => {
            info!("no events file given; mining events");
            mine_events(corpus, &cfg.mine)?
        }
    };
    info!("{} events", records.len());
    Ok(Events::new(records)?)
}

pub fn detect(cfg: &Resolved, out: &Path) -> Result<()> {
    let corpus = load(cfg)?;
    let records = mine_events(&corpus, &cfg.mine)?;
    let path = out.join("events.jsonl");
    write_events_jsonl(&path, &corpus, &records)?;
    info!("wrote {} events to {}", records.len(), path.display());
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Feature scores with every attendee as event-side input.
pub fn score(cfg: &Resolved, out: &Path) -> Result<()> {
    let corpus = load(cfg)?;
    let events = events(cfg, &corpus)?;
    let with_rwr = cfg.features.contains(&FeatureKind::RandomWalk);
    let ctx = ExperimentContext::new(&corpus, &events, cfg.experiment.scoring, with_rwr);
    let per_event: Vec<Vec<Vec<FeatureScore>>> = events
        .indices()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|e| ctx.score_event(e, &events.get(e).attendees))
        .collect::<eventlens::Result<_>>()?;
    let path = out.join("scores.csv");
    let mut w = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
    writeln!(w, "feature,user_id,event_id,raw,oriented,tie_break")?;
    for &feature in &cfg.features {
        for (e, rows) in per_event.iter().enumerate() {
            let event_id = &events.records()[e].event_id;
            for s in rows.iter().flatten().filter(|s| s.feature == feature) {
                writeln!(
                    w,
                    "{},{},{},{},{},{}",
                    feature,
                    corpus.user_id(s.user),
                    event_id,
                    fmt_opt(s.raw),
                    s.oriented,
                    s.tie_break
                )?;
            }
        }
    }
    w.flush()?;
    info!("wrote {}", path.display());
    Ok(())
}

fn write_metrics(report: &MetricsReport, out: &Path) -> Result<()> {
    report.write_json(&out.join("metrics.json"))?;
    report.write_accuracy_at_n_csv(&out.join("accuracy_at_n.csv"))?;
    report.write_accuracy_at_pct_csv(&out.join("accuracy_at_pct.csv"))?;
    for s in &report.strategies {
        info!("{}: NDCG@{} {:.4} over {} lists", s.name, report.ndcg_n, s.ndcg, s.n_lists);
    }
    Ok(())
}

/// Single features, the social ablation when social is selected, and the random baseline.
pub fn evaluate(cfg: &Resolved, out: &Path) -> Result<()> {
    let corpus = load(cfg)?;
    let events = events(cfg, &corpus)?;
    let mut strategies: Vec<Strategy> = cfg.features.iter().map(|&f| Strategy::Single(f)).collect();
    if cfg.features.contains(&FeatureKind::SocialInfluence) {
        strategies.push(Strategy::SocialNoTieBreak);
    }
    strategies.push(Strategy::Random);
    let exp = eventlens::evalharness::ExperimentConfig {
        strategies,
        ..cfg.experiment.clone()
    };
    let report = run_experiment(&corpus, &events, &exp)?;
    write_metrics(&report, out)
}

fn model_file_stem(strategy: &str) -> String {
    strategy.to_ascii_lowercase().replace("+", "_")
}

pub fn fuse(cfg: &Resolved, all_variants: bool, out: &Path) -> Result<()> {
    let corpus = load(cfg)?;
    let events = events(cfg, &corpus)?;
    let mut strategies: Vec<Strategy> = FeatureKind::ALL.iter().map(|&f| Strategy::Single(f)).collect();
    if all_variants {
        strategies.extend(Strategy::all_fused());
    } else {
        strategies.push(Strategy::Fused {
            model: cfg.model,
            with_rwr: cfg.with_rwr,
        });
    }
    let exp = eventlens::evalharness::ExperimentConfig {
        strategies,
        ..cfg.experiment.clone()
    };
    let (report, models) = run_experiment_with_models(&corpus, &events, &exp)?;
    write_metrics(&report, out)?;
    let dir = out.join("models");
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    for m in &models {
        let path = dir.join(format!("{}_fold{:02}.json", model_file_stem(&m.strategy), m.fold));
        let mut w = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
        serde_json::to_writer_pretty(&mut w, &m.model)?;
        writeln!(w)?;
        w.flush()?;
    }
    info!("wrote {} models to {}", models.len(), dir.display());
    Ok(())
}

pub fn analyze(cfg: &Resolved, out: &Path) -> Result<()> {
    let corpus = load(cfg)?;
    let events = events(cfg, &corpus)?;
    let exp = eventlens::evalharness::ExperimentConfig {
        strategies: vec![Strategy::Single(FeatureKind::RandomWalk)],
        niche: true,
        ..cfg.experiment.clone()
    };
    let report = run_experiment(&corpus, &events, &exp)?;
    let niche = report.niche.context("niche report missing")?;
    let path = out.join("niche.json");
    let mut w = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
    serde_json::to_writer_pretty(&mut w, &niche)?;
    writeln!(w)?;
    w.flush()?;
    let path = out.join("niche.csv");
    let mut w = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
    writeln!(w, "event_id,tau,accuracy")?;
    for e in &niche.events {
        writeln!(w, "{},{},{}", e.event_id, e.tau, e.accuracy)?;
    }
    w.flush()?;
    info!(
        "niche correlation over {} events: rho {:.4}, p {:.4}",
        niche.events.len(),
        niche.rho,
        niche.p_value
    );
    Ok(())
}
