//! `run`, `ablate` and `analyze`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};

use diagent_core::agent::BenchmarkItem;
use diagent_core::config::{BuildOptions, RunConfig};
use diagent_core::diagnostics::{analyze as analyze_logs, DiagnosticsReport, ErrorClassifier, ModelJudge, RuleBased};
use diagent_core::harness::{
    group_records, load_dataset, read_records, render_ablation, run_ablation, score, write_records, AblationConfig,
    AblationTable, Harness, RunLog,
};

use crate::cli::{AblateArgs, AnalyzeArgs, ClassifierKind, Cli, Common, RunArgs};
use crate::{CliError, CliResult};

/// Everything `report` can read, tagged by `kind`.
#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Document {
    Diagnostics(DiagnosticsReport),
    Ablation(AblationDocument),
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AblationDocument {
    pub table: AblationTable,
    pub conditions: Vec<ConditionFile>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ConditionFile {
    pub label: String,
    pub disabled: Vec<String>,
    pub records: String,
}

pub fn require_input(path: &Path) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{}: no such file", path.display())))
    }
}

pub fn require_output(path: &Path, force: bool) -> CliResult<()> {
    if path.exists() && !force {
        return Err(CliError::Usage(format!("{}: already exists (use --force to overwrite)", path.display())));
    }
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() && !dir.is_dir() => {
            Err(CliError::Usage(format!("{}: no such directory", dir.display())))
        }
        _ => Ok(()),
    }
}

struct Prepared {
    config: RunConfig,
    items: Vec<BenchmarkItem>,
    seeds: Vec<u64>,
    parallelism: usize,
    opts: BuildOptions,
}

fn prepare(c: &Common, cli: &Cli) -> CliResult<Prepared> {
    require_input(&c.dataset)?;
    require_input(&c.config)?;
    let config = RunConfig::load(&c.config).map_err(|e| CliError::Usage(format!("{}: {e}", c.config.display())))?;
    let items = load_dataset(&c.dataset).map_err(|e| CliError::Usage(format!("{}: {e}", c.dataset.display())))?;
    let seeds = c.seeds.clone().unwrap_or_else(|| config.harness.seeds.clone());
    if seeds.is_empty() {
        return Err(CliError::Usage("no seeds given".into()));
    }
    let parallelism = c.parallelism.unwrap_or(config.harness.parallelism);
    if parallelism == 0 {
        return Err(CliError::Usage("--parallelism must be at least 1".into()));
    }
    let image_root = c.dataset.parent().map(|p| if p.as_os_str().is_empty() { PathBuf::from(".") } else { p.into() });
    Ok(Prepared { config, items, seeds, parallelism, opts: BuildOptions { debug_wire: cli.debug_wire, image_root } })
}

fn summarize(logs: &[RunLog]) {
    for log in logs {
        let acc = score(log).map(|a| format!("{:.1}", a * 100.0)).unwrap_or_else(|_| "n/a".into());
        eprintln!(
            "{} seed {}: {} records, accuracy {acc}, {} errors",
            log.dataset,
            log.seed,
            log.records.len(),
            log.n_errors()
        );
    }
}

pub fn run(a: &RunArgs, cli: &Cli) -> CliResult<()> {
    let p = prepare(&a.common, cli)?;
    require_output(&a.out, cli.force)?;
    let tools = p.config.build_tools(&p.opts).context("building tools")?;
    let provider = p.config.build_provider(&p.opts).context("building model client")?;
    let harness = Harness { provider: provider.as_ref(), tools: &tools, parallelism: p.parallelism };
    let logs = harness.run_benchmark(&p.items, &p.config.agent_config(), &p.seeds).context("running benchmark")?;
    write_records(&a.out, logs.iter().flat_map(|l| &l.records)).context("writing records")?;
    summarize(&logs);
    Ok(())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GridFile {
    ablation: Vec<AblationConfig>,
}

fn condition_path(out: &Path, index: usize) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "ablation".into());
    out.with_file_name(format!("{stem}.{index}.jsonl"))
}

pub fn ablate(a: &AblateArgs, cli: &Cli) -> CliResult<()> {
    let p = prepare(&a.common, cli)?;
    let grid = match &a.grid {
        Some(path) => {
            require_input(path)?;
            let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            let g: GridFile =
                toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            g.ablation
        }
        None => p.config.ablation_grid(),
    };
    for cond in &grid {
        cond.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    }
    require_output(&a.out, cli.force)?;
    for i in 0..grid.len() {
        require_output(&condition_path(&a.out, i), cli.force)?;
    }

    let tools = p.config.build_tools(&p.opts).context("building tools")?;
    let provider = p.config.build_provider(&p.opts).context("building model client")?;
    let harness = Harness { provider: provider.as_ref(), tools: &tools, parallelism: p.parallelism };
    let result = run_ablation(&harness, &p.items, &p.config.agent_config(), &grid, &p.seeds, &p.config.bootstrap_params())
        .context("running ablation")?;

    let mut conditions = Vec::with_capacity(result.logs.len());
    for (i, (cond, logs)) in result.logs.iter().enumerate() {
        let path = condition_path(&a.out, i);
        write_records(&path, logs.iter().flat_map(|l| &l.records)).context("writing records")?;
        conditions.push(ConditionFile {
            label: cond.label.clone(),
            disabled: cond.disabled.iter().cloned().collect(),
            records: path.file_name().unwrap().to_string_lossy().into_owned(),
        });
    }
    let doc = Document::Ablation(AblationDocument { table: result.table, conditions });
    write_json(&a.out, &doc)?;
    if let Document::Ablation(d) = &doc {
        print!("{}", render_ablation(&d.table));
    }
    Ok(())
}

pub fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).context("serializing")?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn analyze(a: &AnalyzeArgs, cli: &Cli) -> CliResult<()> {
    for path in &a.logs {
        require_input(path)?;
    }
    if a.bucket_width == 0 {
        return Err(CliError::Usage("--bucket-width must be positive".into()));
    }
    if let Some(out) = &a.out {
        require_output(out, cli.force)?;
    }
    let classifier: Box<dyn ErrorClassifier> = match a.classifier {
        ClassifierKind::RuleBased => Box::new(RuleBased),
        ClassifierKind::ModelJudge => {
            let Some(path) = &a.config else {
                return Err(CliError::Usage("--classifier model-judge needs --config".into()));
            };
            require_input(path)?;
            let config = RunConfig::load(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            let opts = BuildOptions { debug_wire: cli.debug_wire, image_root: None };
            Box::new(ModelJudge::new(config.judge_model(&opts).context("building judge model")?))
        }
    };

    let mut records = Vec::new();
    for path in &a.logs {
        records.extend(read_records(path).map_err(|e| CliError::Usage(e.to_string()))?);
    }
    let logs = group_records(records).map_err(|e| CliError::Usage(e.to_string()))?;
    let report = analyze_logs(&logs, a.bucket_width, classifier.as_ref()).context("analyzing")?;
    let doc = Document::Diagnostics(report);
    match &a.out {
        Some(out) => write_json(out, &doc),
        None => {
            let mut text = serde_json::to_string_pretty(&doc).context("serializing")?;
            text.push('\n');
            std::io::stdout().write_all(text.as_bytes()).context("writing output")?;
            Ok(())
        }
    }
}
