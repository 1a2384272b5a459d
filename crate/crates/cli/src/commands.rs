use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use hgtul::checkpoint::Checkpoint;
use hgtul::data::{write_canonical, Part};
use hgtul::error::{ArtifactError, ConfigError};
use hgtul::eval::{summarize, EvalReport};
use hgtul::pipeline::{check_compatible, evaluate, preprocess, read_checkins, train_variant};
use hgtul::synth::generate;
use hgtul::train::write_history;
use hgtul::{Ablation, Error, Prepared, TrainConfig};

use crate::config::RunConfig;

type Result<T> = std::result::Result<T, Error>;

fn missing(key: &str) -> Error {
    ConfigError::Invalid {
        key: key.to_string(),
        msg: "required (pass the flag or set it in the config file)".into(),
    }
    .into()
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| ArtifactError::io(dir, e))?;
    Ok(())
}

fn write_with(
    path: &Path,
    f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
) -> Result<()> {
    let io = |e| ArtifactError::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    f(&mut w).map_err(io)?;
    w.flush().map_err(io)?;
    Ok(())
}

fn write_report(dir: &Path, stem: &str, report: &EvalReport) -> Result<()> {
    write_with(&dir.join(format!("{stem}.tsv")), |w| report.write_tsv(w))?;
    write_with(&dir.join(format!("{stem}.txt")), |w| write!(w, "{report}"))
}

fn write_summary(path: &Path, reports: &[EvalReport]) -> Result<()> {
    write_with(path, |w| {
        for (metric, group, mean, std) in summarize(reports) {
            writeln!(w, "{metric}\t{group}\t{mean:.4}\t{std:.4}")?;
        }
        Ok(())
    })
}

fn load_prepared(cfg: &RunConfig) -> Result<Prepared> {
    let dir = cfg.data_dir.as_deref().ok_or_else(|| missing("data_dir"))?;
    Prepared::load(dir)
}

pub fn synth(cfg: &RunConfig, out: &Path) -> Result<()> {
    let corpus = generate(&cfg.synth).map_err(|msg| ConfigError::Invalid {
        key: "synth".into(),
        msg,
    })?;
    create_dir(out)?;
    write_with(&out.join("checkins.tsv"), |w| {
        write_canonical(w, &corpus.checkins)
    })?;
    write_with(&out.join("truth.tsv"), |w| corpus.write_truth(w))?;
    println!(
        "wrote {} check-ins for {} users to {}",
        corpus.checkins.len(),
        corpus.truth.len(),
        out.display()
    );
    Ok(())
}

pub fn preprocess_cmd(cfg: &RunConfig, out: &Path) -> Result<()> {
    let input = cfg.input.as_deref().ok_or_else(|| missing("input"))?;
    let checkins = read_checkins(input, cfg.input_format)?;
    let prep = preprocess(checkins, &cfg.prep)?;
    prep.write(out)?;
    println!("{}", prep.stats());
    Ok(())
}

/// Trains `cfg.repeat` runs with seeds `seed, seed+1, ...`.
pub fn train_cmd(cfg: &RunConfig, out: &Path) -> Result<()> {
    let prep = load_prepared(cfg)?;
    let corpus = prep.corpus()?;
    let ablation = cfg.ablation()?;
    create_dir(out)?;
    let mut reports = Vec::new();
    for r in 0..cfg.repeat {
        let tc = TrainConfig {
            seed: cfg.train.seed + r as u64,
            ..cfg.train.clone()
        };
        let outcome = train_variant(&prep, &corpus, &tc, &ablation)?;
        let suffix = if cfg.repeat == 1 {
            String::new()
        } else {
            format!("_{}", r + 1)
        };
        let ck = Checkpoint {
            params: outcome.params,
            variant: ablation.clone(),
            user_digest: prep.user_digest(),
        };
        ck.save(&out.join(format!("checkpoint{suffix}.bin")))?;
        write_with(&out.join(format!("history{suffix}.tsv")), |w| {
            write_history(w, &outcome.history)
        })?;
        let best = &outcome.history[outcome.best_epoch - 1];
        println!(
            "run {} seed {}: {} epochs, best epoch {} (valid acc@1 {:.4})",
            r + 1,
            tc.seed,
            outcome.history.len(),
            outcome.best_epoch,
            best.valid_acc1
        );
        if cfg.repeat > 1 {
            reports.push(evaluate(&prep, &corpus, &ck.params, &ablation, Part::Test)?);
        }
    }
    if cfg.repeat > 1 {
        write_summary(&out.join("summary.tsv"), &reports)?;
        for (metric, group, mean, std) in summarize(&reports) {
            println!("{metric:<10} {group:<9} {mean:.4} ± {std:.4}");
        }
    }
    Ok(())
}

/// Evaluates a checkpoint; an explicit variant overrides the stored one.
pub fn evaluate_cmd(
    cfg: &RunConfig,
    variant_flag: Option<&str>,
    part: Part,
    out: &Path,
) -> Result<()> {
    let prep = load_prepared(cfg)?;
    let corpus = prep.corpus()?;
    let path = cfg
        .checkpoint
        .as_deref()
        .ok_or_else(|| missing("checkpoint"))?;
    let ck = Checkpoint::load(path)?;
    check_compatible(&prep, &corpus, &ck)?;
    let ablation = match variant_flag {
        Some(v) => v.parse::<Ablation>()?,
        None => ck.variant.clone(),
    };
    let report = evaluate(&prep, &corpus, &ck.params, &ablation, part)?;
    create_dir(out)?;
    write_report(out, "report", &report)?;
    print!("{report}");
    Ok(())
}

/// Trains and tests every listed variant. Entries are comma-separated;
/// `+` combines ablations within one entry.
pub fn ablate_cmd(cfg: &RunConfig, variants: &str, out: &Path) -> Result<()> {
    let list = variants
        .split(',')
        .filter(|v| !v.trim().is_empty())
        .map(str::parse::<Ablation>)
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let prep = load_prepared(cfg)?;
    let corpus = prep.corpus()?;
    create_dir(out)?;
    let mut table = Vec::new();
    for ablation in &list {
        let mut reports = Vec::new();
        for r in 0..cfg.repeat {
            let tc = TrainConfig {
                seed: cfg.train.seed + r as u64,
                ..cfg.train.clone()
            };
            let outcome = train_variant(&prep, &corpus, &tc, ablation)?;
            reports.push(evaluate(
                &prep,
                &corpus,
                &outcome.params,
                ablation,
                Part::Test,
            )?);
        }
        let tag = ablation.to_string();
        write_report(out, &format!("report_{tag}"), &reports[0])?;
        for (metric, group, mean, std) in summarize(&reports) {
            table.push((tag.clone(), metric, group, mean, std));
        }
    }
    write_with(&out.join("ablation.tsv"), |w| {
        for (tag, metric, group, mean, std) in &table {
            writeln!(w, "{tag}\t{metric}\t{group}\t{mean:.4}\t{std:.4}")?;
        }
        Ok(())
    })?;
    println!(
        "{:<8} {:<10} {:<9} {:>7} {:>7}",
        "variant", "metric", "group", "mean", "std"
    );
    for (tag, metric, group, mean, std) in &table {
        println!("{tag:<8} {metric:<10} {group:<9} {mean:>7.4} {std:>7.4}");
    }
    Ok(())
}

/// Default ablation list for `hgtul ablate`.
pub const ALL_VARIANTS: &str = "full,a,ap,s,l,h,d";
