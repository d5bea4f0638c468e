//! `logicdiag` command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or validation error,
//! 3 internal contract violation.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use logicdiag::diagnosis::{enumerate_minimal_diagnoses, DiagnosisError};
use logicdiag::hierarchy::builtin;
use logicdiag::pipeline::{row_rng, write_stats};
use logicdiag::sslsim::{self, SimConfig, SimError};
use logicdiag::tensor::{read_tensor, write_tensor, Tensor, TensorData};
use logicdiag::{
    Assignment, GroundRuleSet, LabelHierarchy, PipelineError, ProbBatch, RevisionConfig,
    RevisionEngine, RevisionStats,
};
use rand::Rng;
use serde_json::json;
use thiserror::Error;

#[derive(Debug, Parser)]
#[command(name = "logicdiag", version, about = "Logic-based pseudo-label revision", arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse a hierarchy and print its canonical id table.
    ValidateHierarchy {
        #[command(flatten)]
        hierarchy: HierarchyArg,
        #[arg(long)]
        json: bool,
    },
    /// Print the ground rules compiled from a hierarchy.
    CompileRules {
        #[command(flatten)]
        hierarchy: HierarchyArg,
        /// Comma list of composition, decomposition, exclusion.
        #[arg(long)]
        families: Option<String>,
        #[arg(long)]
        json: bool,
    },
    /// List the minimal diagnoses of one assignment.
    Diagnose {
        #[command(flatten)]
        hierarchy: HierarchyArg,
        /// A bitstring over concept ids, or a comma list of true concept names.
        #[arg(long, allow_hyphen_values = true)]
        assignment: String,
        /// Defaults to hierarchy depth plus two.
        #[arg(long)]
        max_card: Option<usize>,
        #[arg(long)]
        json: bool,
    },
    /// Revise a probability tensor into leaf labels.
    Revise {
        #[command(flatten)]
        hierarchy: HierarchyArg,
        /// float32 tensor whose last dimension indexes concepts.
        #[arg(long)]
        probs: PathBuf,
        #[arg(long)]
        out_labels: PathBuf,
        #[arg(long)]
        out_stats: Option<PathBuf>,
        #[command(flatten)]
        revision: RevisionArgs,
        #[arg(long)]
        json: bool,
    },
    /// Train the synthetic semi-supervised simulator.
    Simulate {
        /// Flat `key = value` file over the simulator defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the seed in the config file.
        #[arg(long, env = "LOGICDIAG_SEED")]
        seed: Option<u64>,
        #[arg(long)]
        json: bool,
    },
    /// Time revision of a random batch.
    Bench {
        #[command(flatten)]
        hierarchy: HierarchyArg,
        #[arg(long, default_value_t = 65_536)]
        rows: usize,
        #[command(flatten)]
        revision: RevisionArgs,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Debug, Args)]
struct HierarchyArg {
    /// Hierarchy JSON file, or `builtin:h3|pascal_voc|cityscapes|coco`.
    #[arg(long)]
    hierarchy: String,
}

#[derive(Debug, Args)]
struct RevisionArgs {
    /// uniform, predictive, greedy or sampling.
    #[arg(long)]
    strategy: Option<String>,
    #[arg(long, env = "LOGICDIAG_SEED")]
    seed: Option<u64>,
    #[arg(long)]
    q: Option<u32>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    max_card: Option<usize>,
    /// per_family or per_ground_rule.
    #[arg(long)]
    grouping: Option<String>,
    #[arg(long)]
    families: Option<String>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long)]
    threads: Option<usize>,
}

impl RevisionArgs {
    fn config(&self) -> Result<RevisionConfig, CliError> {
        let owned: Vec<(&str, String)> = [
            ("strategy", self.strategy.clone()),
            ("seed", self.seed.map(|v| v.to_string())),
            ("q", self.q.map(|v| v.to_string())),
            ("threshold", self.threshold.map(|v| v.to_string())),
            ("max_card", self.max_card.map(|v| v.to_string())),
            ("grouping", self.grouping.clone()),
            ("families", self.families.clone()),
        ]
        .into_iter()
        .filter_map(|(k, v)| v.map(|v| (k, v)))
        .collect();
        Ok(RevisionConfig::from_pairs(owned.iter().map(|(k, v)| (*k, v.as_str())))?)
    }

    fn pool(&self) -> Result<rayon::ThreadPool, CliError> {
        if self.threads == Some(0) {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.threads.unwrap_or(0))
            .build()
            .map_err(|e| CliError::Contract(format!("cannot start thread pool: {e}")))
    }
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Contract(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Contract(_) => 3,
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Contract(_) => CliError::Contract(e.to_string()),
            PipelineError::Width { .. } => CliError::Data(format!("dimension mismatch: {e}")),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Pipeline(p) => p.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

fn data(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

fn load_hierarchy(arg: &HierarchyArg) -> Result<LabelHierarchy, CliError> {
    if let Some(name) = arg.hierarchy.strip_prefix("builtin:") {
        return match name {
            "h3" => Ok(builtin::h3()),
            "pascal_voc" => Ok(builtin::pascal_voc()),
            "cityscapes" => Ok(builtin::cityscapes()),
            "coco" => Ok(builtin::coco()),
            _ => Err(CliError::Usage(format!("unknown builtin hierarchy '{name}'"))),
        };
    }
    let text = read_text(Path::new(&arg.hierarchy))?;
    LabelHierarchy::parse(&text).map_err(|e| CliError::Data(format!("{}: {e}", arg.hierarchy)))
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))
}

fn names(h: &LabelHierarchy, ids: &[logicdiag::ConceptId]) -> Vec<String> {
    ids.iter().map(|&o| h.name(o).to_string()).collect()
}

fn parse_assignment(h: &LabelHierarchy, s: &str) -> Result<Assignment, CliError> {
    let s = s.trim();
    if s.len() == h.len() && s.bytes().all(|b| b == b'0' || b == b'1') {
        return Ok(Assignment::from_bitstring(s).expect("checked bitstring"));
    }
    if s.is_empty() || s == "-" {
        return Ok(Assignment::empty(h.len()));
    }
    let ids = s
        .split(',')
        .map(|n| h.id_of(n.trim()))
        .collect::<Result<Vec<_>, _>>()
        .map_err(data)?;
    Ok(Assignment::from_true_set(h.len(), &ids))
}

fn validate_hierarchy(h: &LabelHierarchy, json: bool) -> String {
    if json {
        let nodes: Vec<_> = h
            .ids()
            .map(|o| {
                json!({
                    "id": o.0,
                    "name": h.name(o),
                    "level": h.level(o),
                    "parent": h.parent_opt(o).map(|p| p.0),
                })
            })
            .collect();
        return json!({ "nodes": h.len(), "levels": h.num_levels(), "table": nodes }).to_string() + "\n";
    }
    format!("nodes\t{}\nlevels\t{}\n{}", h.len(), h.num_levels(), h.id_table())
}

fn compile_rules(h: &LabelHierarchy, families: Option<&str>, json: bool) -> Result<String, CliError> {
    let families = match families {
        Some(f) => logicdiag::pipeline::parse_families(f)
            .ok_or_else(|| CliError::Usage(format!("cannot parse rule families '{f}'")))?,
        None => logicdiag::RuleFamilies::ALL,
    };
    let k = GroundRuleSet::compile_with(h, families);
    if json {
        let rules: Vec<_> = k
            .rules()
            .iter()
            .map(|r| json!({ "kind": r.kind.to_string(), "anchor": h.name(r.anchor), "consequents": names(h, &r.consequents) }))
            .collect();
        return Ok(serde_json::Value::Array(rules).to_string() + "\n");
    }
    Ok(k.rules()
        .iter()
        .map(|r| format!("{}\t{}\t{}\n", r.kind, h.name(r.anchor), names(h, &r.consequents).join(",")))
        .collect())
}

fn diagnose(h: &LabelHierarchy, assignment: &str, max_card: Option<usize>, json: bool) -> Result<String, CliError> {
    let a = parse_assignment(h, assignment)?;
    let k = GroundRuleSet::compile(h);
    let bound = max_card.unwrap_or(h.num_levels() + 2);
    let consistent = k.is_consistent(&a);
    let ds = match enumerate_minimal_diagnoses(&k, &a, bound) {
        Ok(ds) => ds,
        Err(DiagnosisError::ZeroBound) => return Err(CliError::Usage("--max-card must be at least 1".into())),
        Err(e) => return Err(data(e)),
    };
    let sets: Vec<Vec<String>> = ds.iter().map(|d| names(h, &d.flip_set)).collect();
    if json {
        return Ok(json!({ "consistent": consistent, "diagnoses": sets }).to_string() + "\n");
    }
    let mut out = if consistent {
        "consistent\n".to_string()
    } else {
        format!("inconsistent: {} minimal diagnoses\n", ds.len())
    };
    for s in sets {
        out.push_str(&s.join(","));
        out.push('\n');
    }
    Ok(out)
}

fn stats_table(stats: &RevisionStats, h: &LabelHierarchy) -> String {
    let mut out = format!(
        "rows\t{}\nconsistent\t{}\nrevised\t{}\nignored\t{}\nbound_exceeded\t{}\nuniform_fallbacks\t{}\n",
        stats.rows, stats.consistent, stats.revised, stats.ignored, stats.bound_exceeded, stats.uniform_fallbacks
    );
    for (card, n) in &stats.cardinality_histogram {
        out.push_str(&format!("flips={card}\t{n}\n"));
    }
    for (o, c) in h.ids().zip(&stats.conflict_degrees) {
        out.push_str(&format!("conflict[{}]\t{c:.6}\n", h.name(o)));
    }
    out
}

fn revise(
    h: LabelHierarchy,
    probs: &Path,
    out_labels: &Path,
    out_stats: Option<&Path>,
    args: &RevisionArgs,
    json: bool,
) -> Result<String, CliError> {
    let engine = RevisionEngine::new(h, args.config()?)?;
    let t = read_tensor(probs).map_err(data)?;
    let values = match &t.data {
        TensorData::F32(v) => v,
        other => return Err(CliError::Data(format!("{}: expected a float32 tensor, found {}", probs.display(), other.dtype_name()))),
    };
    let Some((&cols, lead)) = t.dims.split_last() else {
        return Err(CliError::Data(format!("{}: probabilities need at least 1 dim", probs.display())));
    };
    let width = engine.hierarchy().len();
    if cols != width {
        return Err(CliError::Data(format!(
            "dimension mismatch: {} has {cols} concepts per row, hierarchy has {width}",
            probs.display()
        )));
    }
    let rows: usize = lead.iter().product();
    let result = args.pool()?.install(|| engine.revise_buffer(values, rows))?;
    let labels = Tensor::new(lead.to_vec(), TensorData::I32(result.leaf_labels.clone())).map_err(data)?;
    write_tensor(out_labels, &labels).map_err(data)?;
    if let Some(path) = out_stats {
        write_stats(path, &result.stats)?;
    }
    if json {
        return Ok(serde_json::to_string_pretty(&result.stats).expect("stats serialize") + "\n");
    }
    Ok(stats_table(&result.stats, engine.hierarchy()))
}

fn simulate(config: Option<&Path>, out: Option<&Path>, seed: Option<u64>, json: bool) -> Result<String, CliError> {
    let mut cfg = match config {
        Some(path) => SimConfig::parse(&read_text(path)?)?,
        None => SimConfig::default(),
    };
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let report = sslsim::train(&cfg)?;
    if let Some(path) = out {
        report.write(path)?;
    }
    if json {
        return Ok(report.to_json() + "\n");
    }
    let m = &report.final_metrics;
    let mut s = String::new();
    for (l, v) in m.miou_per_level.iter().enumerate() {
        s.push_str(&format!("mIoU^{}\t{v:.2}\n", l + 1));
    }
    s.push_str(&format!("accuracy\t{:.4}\n", m.accuracy));
    if let Some(p) = m.pseudo {
        s.push_str(&format!(
            "pseudo concept precision\t{:.4} -> {:.4}\npseudo leaf precision\t{:.4} -> {:.4}\n",
            p.concept_precision_before, p.concept_precision_after, p.leaf_precision_before, p.leaf_precision_after
        ));
    }
    Ok(s)
}

fn bench(h: LabelHierarchy, rows: usize, args: &RevisionArgs, json: bool) -> Result<String, CliError> {
    if rows == 0 {
        return Err(CliError::Usage("--rows must be at least 1".into()));
    }
    let cfg = args.config()?;
    let width = h.len();
    let mut rng = row_rng(cfg.seed, u64::MAX);
    let values: Vec<f64> = (0..rows * width).map(|_| rng.gen()).collect();
    let batch = ProbBatch::new(values, rows, width).map_err(data)?;
    let engine = RevisionEngine::new(h, cfg)?;
    let pool = args.pool()?;
    let t = Instant::now();
    let result = pool.install(|| engine.revise(&batch))?;
    let secs = t.elapsed().as_secs_f64();
    let rate = rows as f64 / secs.max(f64::MIN_POSITIVE);
    if json {
        return Ok(json!({
            "rows": rows,
            "concepts": width,
            "threads": pool.current_num_threads(),
            "seconds": secs,
            "rows_per_second": rate,
            "revised": result.stats.revised,
        })
        .to_string()
            + "\n");
    }
    Ok(format!(
        "{rows} rows × {width} concepts on {} threads in {secs:.3}s ({rate:.0} rows/s)\n",
        pool.current_num_threads()
    ))
}

fn dispatch(cli: Cli) -> Result<String, CliError> {
    match cli.command {
        Command::ValidateHierarchy { hierarchy, json } => Ok(validate_hierarchy(&load_hierarchy(&hierarchy)?, json)),
        Command::CompileRules { hierarchy, families, json } => {
            compile_rules(&load_hierarchy(&hierarchy)?, families.as_deref(), json)
        }
        Command::Diagnose {
            hierarchy,
            assignment,
            max_card,
            json,
        } => diagnose(&load_hierarchy(&hierarchy)?, &assignment, max_card, json),
        Command::Revise {
            hierarchy,
            probs,
            out_labels,
            out_stats,
            revision,
            json,
        } => revise(load_hierarchy(&hierarchy)?, &probs, &out_labels, out_stats.as_deref(), &revision, json),
        Command::Simulate { config, out, seed, json } => simulate(config.as_deref(), out.as_deref(), seed, json),
        Command::Bench {
            hierarchy,
            rows,
            revision,
            json,
        } => bench(load_hierarchy(&hierarchy)?, rows, &revision, json),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    ExitCode::SUCCESS
                }
                _ => {
                    eprint!("{}", e.render());
                    ExitCode::from(1)
                }
            };
        }
    };
    match dispatch(cli) {
        Ok(out) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
