use std::fs;
use std::path::{Path, PathBuf};

use hierlearn::data::{generate_synthetic, split};
use hierlearn::metrics::{full_report, ReportOptions};
use hierlearn::model::SplitInfo;
use hierlearn::proxy::mds_place;
use hierlearn::{
    Architecture, Checkpoint, Dataset, HeadKind, HierarchyTree, MetricsReport, SplitSpec, SynthSpec, TrainConfig,
    TrainOptions,
};
use rayon::prelude::*;

use crate::aggregate::{aggregate as summarize_reports, to_csv};
use crate::error::{CliError, CliResult};
use crate::manifest::RunManifest;
use crate::{AggregateArgs, DistancesArgs, EvalArgs, MdsArgs, ModelKind, SplitName, SynthArgs, TrainArgs};

/// Environment variable capping metric-computation threads.
pub const THREADS_ENV: &str = "HIERLEARN_THREADS";

const SPLIT_FRACTIONS: [f64; 3] = [0.7, 0.1, 0.2];

fn read_tree(path: &Path) -> CliResult<HierarchyTree> {
    let f = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    HierarchyTree::parse(f).map_err(|e| CliError::in_file(path, e))
}

fn read_dataset(path: &Path, tree: &HierarchyTree) -> CliResult<Dataset> {
    let f = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    Dataset::load(f, tree).map_err(|e| CliError::in_file(path, e))
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn to_bytes(f: impl FnOnce(&mut Vec<u8>) -> hierlearn::Result<()>) -> CliResult<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

/// `<path>.manifest.json` for single-file outputs.
fn sibling_manifest(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    path.with_file_name(name)
}

fn threads_from_env() -> CliResult<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(0) | Err(_) => Err(CliError::InvalidArgument(format!(
                "{THREADS_ENV} must be a positive integer, got `{v}`"
            ))),
            Ok(n) => Ok(Some(n)),
        },
    }
}

pub fn distances(a: &DistancesArgs, argv: &[String]) -> CliResult<()> {
    let tree = read_tree(&a.hierarchy)?;
    let m = tree.distance_matrices(a.beta)?;
    ensure_dir(&a.out)?;
    let mut man = RunManifest::new("distances", argv, a, None)?;
    man.input(&a.hierarchy)?;
    for (name, mat) in [("d_h.csv", &m.d_h), ("d_t.csv", &m.d_t), ("s_h.csv", &m.s_h)] {
        man.output(a.out.join(name), &to_bytes(|b| mat.write_csv(b))?)?;
    }
    man.write(&a.out.join("manifest.json"))?;
    println!("{} classes, beta {}", m.d_h.len(), a.beta);
    Ok(())
}

pub fn mds(a: &MdsArgs, argv: &[String]) -> CliResult<()> {
    let tree = read_tree(&a.hierarchy)?;
    let m = tree.distance_matrices(a.beta)?;
    let placed = mds_place(&m.d_t, a.dim, a.lr, a.iters, a.seed)?;
    ensure_dir(&a.out)?;
    let mut man = RunManifest::new("mds", argv, a, Some(a.seed))?;
    man.input(&a.hierarchy)?;
    man.output(a.out.join("proxies.csv"), &to_bytes(|b| placed.proxies.write_csv(b))?)?;
    let mut trace = String::from("iteration,stress\n");
    for (i, s) in placed.stress_trace.iter().enumerate() {
        trace.push_str(&format!("{i},{s:?}\n"));
    }
    man.output(a.out.join("stress.csv"), trace.as_bytes())?;
    man.write(&a.out.join("manifest.json"))?;
    println!("final normalized stress {:.6}", placed.stress_trace.last().copied().unwrap_or(f64::NAN));
    Ok(())
}

fn head_kind(m: ModelKind) -> HeadKind {
    match m {
        ModelKind::Softmax => HeadKind::PlainSoftmax,
        ModelKind::Normface => HeadKind::NormFace,
        ModelKind::Proxydr => HeadKind::ProxyDr,
        ModelKind::Corr => HeadKind::Corr,
    }
}

pub fn train(a: &TrainArgs, argv: &[String]) -> CliResult<()> {
    let options: TrainOptions = a.options.parse()?;
    let mut cfg = TrainConfig::new(head_kind(a.model), options, a.embed_dim, a.seed);
    cfg.epochs = a.epochs;
    cfg.batch_size = a.batch;
    cfg.scale = a.scale;
    cfg.lr = a.lr;
    cfg.alpha = a.alpha;
    cfg.beta = a.beta;
    if let Some(hidden) = a.hidden {
        cfg.architecture = Architecture::Mlp { hidden };
    }
    // fail on conflicts before touching any file
    cfg.validate()?;

    let tree = read_tree(&a.hierarchy)?;
    let data = read_dataset(&a.data, &tree)?;
    let [tr, va, te] = SPLIT_FRACTIONS;
    let parts = split(&data, &SplitSpec::new(tr, va, te, a.split_seed)?)?;
    let info = SplitInfo {
        seed: a.split_seed,
        fractions: SPLIT_FRACTIONS,
    };
    let out = hierlearn::trainer::train(&cfg, &data.subset(&parts.train), &data.subset(&parts.val), &tree, info)?;

    ensure_dir(&a.out)?;
    let mut man = RunManifest::new("train", argv, &cfg, Some(a.seed))?;
    man.input(&a.data)?;
    man.input(&a.hierarchy)?;
    man.output(a.out.join("checkpoint.json"), &to_bytes(|b| out.checkpoint.write(b))?)?;
    man.output(a.out.join("trace.jsonl"), &to_bytes(|b| out.trace.write_jsonl(b))?)?;
    man.write(&a.out.join("manifest.json"))?;
    let best = &out.trace.records[out.trace.selected_epoch - 1];
    println!(
        "selected epoch {} of {}: validation top-1 {:.4}, s {:.4}",
        out.trace.selected_epoch,
        out.trace.records.len(),
        best.val_top1,
        best.scale
    );
    Ok(())
}

fn read_living(path: &Path, tree: &HierarchyTree) -> CliResult<Vec<usize>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut out = Vec::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
        let c = tree.class_index(line).map_err(|e| CliError::in_file(path, e))?;
        if !out.contains(&c) {
            out.push(c);
        }
    }
    out.sort_unstable();
    Ok(out)
}

pub fn eval(a: &EvalArgs, argv: &[String]) -> CliResult<()> {
    let threads = threads_from_env()?;
    let text = fs::read_to_string(&a.checkpoint).map_err(|e| CliError::io(&a.checkpoint, e))?;
    let ck = Checkpoint::from_json(&text).map_err(|e| CliError::in_file(&a.checkpoint, e))?;
    let tree = read_tree(&a.hierarchy)?;
    let data = read_dataset(&a.data, &tree)?;
    let [tr, va, te] = ck.split.fractions;
    let parts = split(&data, &SplitSpec::new(tr, va, te, ck.split.seed)?)?;
    let train_part = data.subset(&parts.train);
    let (target, split_name) = match a.split {
        SplitName::Train => (train_part.clone(), "train"),
        SplitName::Val => (data.subset(&parts.val), "val"),
        SplitName::Test => (data.subset(&parts.test), "test"),
        SplitName::All => (data.clone(), "all"),
    };
    let living = a.living_classes.as_deref().map(|p| read_living(p, &tree)).transpose()?;
    let opts = ReportOptions {
        living: living.as_deref(),
        threads,
        split_name,
    };
    let report = full_report(&ck, &target, &train_part, &tree, &opts)?;

    if let Some(dir) = a.report.parent().filter(|d| !d.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    let mut man = RunManifest::new("eval", argv, a, Some(ck.config.seed))?;
    man.input(&a.checkpoint)?;
    man.input(&a.data)?;
    man.input(&a.hierarchy)?;
    if let Some(p) = &a.living_classes {
        man.input(p)?;
    }
    let mut json = report.to_json()?;
    json.push('\n');
    man.output(a.report.clone(), json.as_bytes())?;
    man.write(&sibling_manifest(&a.report))?;
    println!("top-1 {:.4} on {} {split_name} items", report.top1, target.len());
    Ok(())
}

pub fn synth(a: &SynthArgs, argv: &[String]) -> CliResult<()> {
    let mut spec = SynthSpec::new(a.branching, a.depth, a.dim, a.per_class, a.seed);
    if let Some(s) = &a.sigmas {
        spec.sigmas = s.clone();
    }
    if let Some(n) = a.noise {
        spec.noise_sigma = n;
    }
    let (data, tree) = generate_synthetic(&spec)?;
    ensure_dir(&a.out)?;
    let mut man = RunManifest::new("synth", argv, a, Some(a.seed))?;
    man.output(a.out.join("data.csv"), &to_bytes(|b| data.write_csv(b))?)?;
    man.output(a.out.join("hierarchy.csv"), &to_bytes(|b| tree.write_csv(b))?)?;
    man.write(&a.out.join("manifest.json"))?;
    println!("{} items in {} classes", data.len(), tree.num_classes());
    Ok(())
}

fn read_report(path: &Path) -> CliResult<MetricsReport> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::io(path, e))
}

pub fn aggregate(a: &AggregateArgs, argv: &[String]) -> CliResult<()> {
    let mut paths: Vec<PathBuf> = glob::glob(&a.reports)
        .map_err(|e| CliError::InvalidArgument(format!("bad pattern `{}`: {e}", a.reports)))?
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::io(e.path(), e.error()))?;
    // report manifests share the directory; only the reports themselves count
    paths.retain(|p| !p.to_string_lossy().ends_with(".manifest.json"));
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::NoReports(a.reports.clone()));
    }
    let reports: Vec<(String, MetricsReport)> = paths
        .par_iter()
        .map(|p| Ok((p.display().to_string(), read_report(p)?)))
        .collect::<CliResult<_>>()?;
    let summary = summarize_reports(&reports)?;

    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    let mut man = RunManifest::new("aggregate", argv, a, None)?;
    for p in &paths {
        man.input(p)?;
    }
    let mut json = serde_json::to_string_pretty(&summary).map_err(|e| CliError::io(&a.out, e))?;
    json.push('\n');
    man.output(a.out.clone(), json.as_bytes())?;
    man.output(a.out.with_extension("csv"), to_csv(&summary).as_bytes())?;
    man.write(&sibling_manifest(&a.out))?;
    println!("{} reports in {} groups", reports.len(), summary.groups.len());
    Ok(())
}
