//! `cwe-moe`: prepare, train, predict, evaluate and ablate CWE-routed
//! mixture-of-experts vulnerability detectors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cwe_moe::ablate::VariantKind;
use cwe_moe::corpus::NegativeMode;

use cwe_moe_cli::config::{RunConfig, OUT_ENV};
use cwe_moe_cli::{commands, CliError};

fn parse_mode(s: &str) -> Result<NegativeMode, String> {
    match s.replace('-', "_").as_str() {
        "all_negatives" => Ok(NegativeMode::AllNegatives),
        "nonvuln_only_negatives" => Ok(NegativeMode::NonvulnOnlyNegatives),
        _ => Err(format!("unknown mode {s:?}; expected all-negatives or nonvuln-only-negatives")),
    }
}

#[derive(Parser)]
#[command(name = "cwe-moe", version, about = "CWE-routed mixture-of-experts vulnerability detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Split the dataset and build the CWE category map.
    Prepare(RunArgs),
    /// Train the experts and the router into a model bundle.
    Train(RunArgs),
    /// Score functions with a trained bundle, one JSON line per input.
    Predict(PredictArgs),
    /// Evaluate a bundle on the test split.
    Evaluate(EvalArgs),
    /// Evaluate ablation variants (all of them unless --variants is given).
    Ablate(EvalArgs),
    /// Check analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Default)]
struct RunArgs {
    /// JSON run configuration; flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config and MOEVD_OUT).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    taxonomy: Option<PathBuf>,
    /// Fixed train/valid/test ids instead of a seeded split.
    #[arg(long)]
    split_file: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    min_instances: Option<u64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    threshold: Option<f64>,
    /// Expert negatives: all-negatives or nonvuln-only-negatives.
    #[arg(long, value_parser = parse_mode)]
    mode: Option<NegativeMode>,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Bundle directory; defaults to <out>/bundle.
    #[arg(long)]
    bundle: Option<PathBuf>,
    /// Labeled JSON-lines test file instead of the prepared test split.
    #[arg(long)]
    test: Option<PathBuf>,
    /// Comma-separated ablation variants to append as comparison rows.
    #[arg(long, value_delimiter = ',')]
    variants: Vec<VariantKind>,
    /// Append the oracle-routing upper bound.
    #[arg(long)]
    ideal_routing: bool,
}

#[derive(Args)]
struct PredictArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    bundle: Option<PathBuf>,
    /// JSON-lines input with `id` and `func`; `-` reads stdin.
    #[arg(long, conflicts_with = "code")]
    input: Option<PathBuf>,
    /// A single function to score.
    #[arg(long)]
    code: Option<String>,
    /// Output file; defaults to stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// First seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of seeds to check.
    #[arg(long, default_value_t = 20)]
    seeds: u64,
}

impl RunArgs {
    /// Config file, then MOEVD_OUT, then flags.
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let cwd = std::env::current_dir().map_err(|e| CliError::internal(e.to_string()))?;
        if let Some(out) = std::env::var_os(OUT_ENV).filter(|v| !v.is_empty()) {
            cfg.out = Some(cwd.join(out));
        }
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| cwd.join(p));
        cfg.out = path(&self.out).or(cfg.out);
        cfg.dataset = path(&self.dataset).or(cfg.dataset);
        cfg.taxonomy = path(&self.taxonomy).or(cfg.taxonomy);
        cfg.split_file = path(&self.split_file).or(cfg.split_file);
        cfg.seed = self.seed.unwrap_or(cfg.seed);
        cfg.min_instances = self.min_instances.unwrap_or(cfg.min_instances);
        cfg.k = self.k.unwrap_or(cfg.k);
        cfg.threshold = self.threshold.unwrap_or(cfg.threshold);
        cfg.mode = self.mode.unwrap_or(cfg.mode);
        cfg.workers = self.workers.unwrap_or(cfg.workers);
        cfg.validate()?;
        Ok(cfg)
    }
}

impl EvalArgs {
    fn resolve(&self, all_by_default: bool) -> Result<RunConfig, CliError> {
        let mut cfg = self.run.resolve()?;
        if !self.variants.is_empty() {
            cfg.variants = self.variants.clone();
        } else if all_by_default && cfg.variants.is_empty() {
            cfg.variants = VariantKind::ALL.to_vec();
        }
        cfg.ideal_routing |= self.ideal_routing;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Prepare(a) => commands::prepare(&a.resolve()?),
        Command::Train(a) => commands::train(&a.resolve()?),
        Command::Predict(a) => {
            let cfg = a.run.resolve()?;
            let opts = commands::PredictOptions {
                bundle: a.bundle,
                input: a.input,
                code: a.code,
                output: a.output,
                k: a.run.k,
                threshold: a.run.threshold,
            };
            commands::predict(&cfg, &opts)
        }
        Command::Evaluate(a) => commands::evaluate(&a.resolve(false)?, a.bundle.as_deref(), a.test.as_deref(), "report"),
        Command::Ablate(a) => commands::evaluate(&a.resolve(true)?, a.bundle.as_deref(), a.test.as_deref(), "ablate"),
        Command::Gradcheck(a) => commands::gradcheck(a.seed, a.seeds),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mode_accepts_both_spellings() {
        assert_eq!(parse_mode("nonvuln-only-negatives").unwrap(), NegativeMode::NonvulnOnlyNegatives);
        assert_eq!(parse_mode("all_negatives").unwrap(), NegativeMode::AllNegatives);
        assert!(parse_mode("vuln").is_err());
    }

    #[test]
    fn flags_override_config() {
        let args = RunArgs { k: Some(3), seed: Some(9), ..Default::default() };
        let cfg = args.resolve().unwrap();
        assert_eq!((cfg.k, cfg.seed), (3, 9));
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
