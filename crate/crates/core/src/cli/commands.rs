use std::fmt::Write as _;
use std::path::Path;

use serde_json::json;

use super::load::load;
use super::{CompareArgs, DetectArgs, ScoreArgs, SummarizeArgs, SynthArgs, SynthKind, ToyArgs, ToySampleArg};
use crate::error::{Error, Result};
use crate::info::config_hash;
use crate::ingest::{inject_label_noise, write_dataset};
use crate::linalg::SplitMix64;
use crate::pipeline::{group_stats, ratio_grid, removal_curve, roc_auc};
use crate::sgdcov::{toy_unique_info, ToyConfig, ToySample};
use crate::synth::{benchmark_mixture, benchmark_subclasses, hard_easy_sources, mixture_counts, subclass_counts};

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn out_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

pub(super) fn score(args: &ScoreArgs) -> Result<()> {
    let common = &args.common;
    let loaded = load(common, "score")?;
    let problem = loaded.problem(common, None)?;
    let mut report = problem
        .scores(&problem.all(), common.measure.tag())?
        .with_config(json!({ "snapshot": loaded.snapshot, "bins": args.bins }));
    if let Some(g) = &loaded.train.groups {
        report = report.with_groups(g.clone())?;
    }
    out_dir(&common.out_dir)?;
    report.write_csv(&common.out_dir.join("scores.csv"))?;
    report.write_json(&common.out_dir.join("scores.json"))?;
    let hist = report.histogram(args.bins);
    write_file(&common.out_dir.join("histogram.csv"), &hist.to_csv(&report.config_hash()))?;
    println!("scored {} samples, config {}", report.len(), report.config_hash());
    Ok(())
}

pub(super) fn summarize(args: &SummarizeArgs) -> Result<()> {
    let common = &args.common;
    if common.val_dataset.is_none() {
        return Err(Error::InvalidArgument("summarize needs --val-dataset".into()));
    }
    let loaded = load(common, "summarize")?;
    let problem = loaded.problem(common, None)?;
    let ratios = ratio_grid(args.fraction, args.step)?;
    let measure = common.measure.tag();
    let initial = problem.scores(&problem.all(), measure)?;
    let snapshot = json!({
        "snapshot": loaded.snapshot,
        "strategies": args.strategy,
        "fraction": args.fraction,
        "step": args.step,
    });
    let mut csv = format!("# config_sha256={}\nratio,strategy,accuracy\n", config_hash(&snapshot));
    for &strategy in &args.strategy {
        for (r, acc) in removal_curve(&problem, strategy, &ratios, args.step, &initial, measure, common.seed)? {
            writeln!(csv, "{r:.6},{},{acc}", strategy.name()).unwrap();
        }
    }
    out_dir(&common.out_dir)?;
    write_file(&common.out_dir.join("summary_curve.csv"), &csv)?;
    println!("wrote summary curve for {} strategies over {} ratios", args.strategy.len(), ratios.len());
    Ok(())
}

fn read_mask(path: &Path) -> Result<Vec<bool>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') || (line_no == 0 && t.parse::<u8>().is_err()) {
            continue;
        }
        match t {
            "0" => out.push(false),
            "1" => out.push(true),
            other => {
                return Err(Error::Parse {
                    line: line_no + 1,
                    message: format!("mask entries must be 0 or 1, found '{other}'"),
                })
            }
        }
    }
    Ok(out)
}

pub(super) fn detect(args: &DetectArgs) -> Result<()> {
    let common = &args.common;
    let loaded = load(common, "detect")?;
    let n = loaded.train.len();
    let (targets, mask) = match (args.noise_rate, &args.mask) {
        (Some(rate), _) => {
            let (noisy, mask) = inject_label_noise(&loaded.train, rate, common.seed)?;
            (Some(noisy.targets), Some(mask.flipped))
        }
        (None, Some(path)) => {
            let mask = read_mask(path)?;
            if mask.len() != n {
                return Err(Error::Dimension(format!("mask has {} entries for {n} samples", mask.len())));
            }
            (None, Some(mask))
        }
        (None, None) if args.threshold.is_some() => (None, None),
        (None, None) => {
            return Err(Error::InvalidArgument("detect needs --noise-rate, --mask or --threshold".into()))
        }
    };
    let problem = loaded.problem(common, targets.as_ref())?;
    let mut report = problem.scores(&problem.all(), common.measure.tag())?.with_config(json!({
        "snapshot": loaded.snapshot,
        "noise_rate": args.noise_rate,
        "threshold": args.threshold,
    }));
    if let Some(g) = &loaded.train.groups {
        report = report.with_groups(g.clone())?;
    }
    let flagged: Option<Vec<bool>> = args.threshold.map(|t| report.scores.iter().map(|&s| s > t).collect());
    let flags = mask.clone().or_else(|| flagged.clone()).expect("mask or threshold present");
    let report = report.with_flags(flags)?;

    let auc = mask.as_ref().and_then(|m| roc_auc(&report.scores, m));
    let mean_of = |want: bool| {
        mask.as_ref().and_then(|m| {
            let v: Vec<f64> = (0..n).filter(|&i| m[i] == want).map(|i| report.scores[i]).collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        })
    };
    let summary = json!({
        "config_sha256": report.config_hash(),
        "auc": auc,
        "flipped": mask.as_ref().map(|m| m.iter().filter(|&&f| f).count()),
        "mean_flipped": mean_of(true),
        "mean_clean": mean_of(false),
        "flagged": flagged.as_ref().map(|f| f.iter().filter(|&&x| x).count()),
    });
    out_dir(&common.out_dir)?;
    report.write_csv(&common.out_dir.join("detect.csv"))?;
    let text = serde_json::to_string_pretty(&summary).map_err(|e| Error::Serde(e.to_string()))?;
    write_file(&common.out_dir.join("detect_summary.json"), &(text + "\n"))?;
    match (auc, &mask) {
        (Some(a), _) => println!("auc={a}"),
        (None, Some(_)) => println!("auc=undefined (mask has no flipped or no clean samples)"),
        (None, None) => println!("flagged {} samples", summary["flagged"]),
    }
    Ok(())
}

pub(super) fn compare(args: &CompareArgs) -> Result<()> {
    let common = &args.common;
    let loaded = load(common, "compare")?;
    let groups = loaded
        .train
        .groups
        .clone()
        .ok_or_else(|| Error::InvalidArgument("dataset has no group column".into()))?;
    let problem = loaded.problem(common, None)?;
    let report = problem.scores(&problem.all(), common.measure.tag())?.with_config(json!({ "snapshot": loaded.snapshot }));
    let stats = group_stats(&report.scores, &groups)?;
    let mut csv = format!("# config_sha256={}\ngroup,count,mean,median,q25,q75,min,max\n", report.config_hash());
    for s in &stats {
        writeln!(csv, "{},{},{:e},{:e},{:e},{:e},{:e},{:e}", s.group, s.count, s.mean, s.median, s.q25, s.q75, s.min, s.max)
            .unwrap();
    }
    out_dir(&common.out_dir)?;
    write_file(&common.out_dir.join("groups.csv"), &csv)?;
    for s in &stats {
        println!("{}: n={} mean={:e}", s.group, s.count, s.mean);
    }
    Ok(())
}

pub(super) fn toy(args: &ToyArgs) -> Result<()> {
    let config = ToyConfig {
        runs: args.runs,
        resamples: args.resamples,
        draws: args.draws,
        sample: match (args.index, args.sample) {
            (Some(i), _) => ToySample::Index(i),
            (None, ToySampleArg::Extreme) => ToySample::MostExtreme,
            (None, ToySampleArg::Typical) => ToySample::Typical,
        },
        ..ToyConfig::default()
    };
    let result = toy_unique_info(&config, args.seed)?;
    let out = json!({ "config": config, "seed": args.seed, "result": result });
    println!("{}", serde_json::to_string_pretty(&out).map_err(|e| Error::Serde(e.to_string()))?);
    Ok(())
}

pub(super) fn synth(args: &SynthArgs) -> Result<()> {
    let mut seeds = SplitMix64::new(args.seed);
    let structure = seeds.next_u64();
    let (train_seed, val_seed) = (seeds.next_u64(), seeds.next_u64());
    let (train, val) = match args.kind {
        SynthKind::Mixture => {
            let task = benchmark_mixture(args.dim, structure)?;
            (
                task.sample(&mixture_counts(&task, args.n)?, train_seed)?,
                task.sample(&mixture_counts(&task, args.val_n)?, val_seed)?,
            )
        }
        SynthKind::Subclass => {
            let task = benchmark_subclasses(args.dim, structure)?;
            (
                task.sample(&subclass_counts(args.n), train_seed)?,
                task.sample(&task.balanced_counts(args.val_n), val_seed)?,
            )
        }
        SynthKind::Sources => {
            let sources = |n: usize, seed| hard_easy_sources(args.dim, (n / 2).max(1), (n / 10).max(1), 5, seed);
            (sources(args.n, train_seed)?, sources(args.val_n, val_seed)?)
        }
    };
    write_dataset(&train, &args.out)?;
    if let Some(p) = &args.val_out {
        write_dataset(&val, p)?;
    }
    Ok(())
}
