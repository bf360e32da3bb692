use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use bfpred::bounds::{preset, preset_mech_params, BoundId, BoundSpec, GridSpec, TuneTarget};
use bfpred::experiment::*;
use bfpred::lowerbound::SupportVariant;
use bfpred::mechanism::{MechParams, MechanismId, Mutation};
use bfpred::num::{hp, parse_q};
use clap::{Args, Parser, Subcommand, ValueEnum};

/// Simulate, audit and bound online budget-feasible procurement mechanisms.
///
/// Every subcommand writes results.csv, summary.json and replay.json to the
/// output directory. Exit status: 0 clean, 1 invariant violation, 2 bad input.
#[derive(Parser)]
#[command(name = "bfpred", version)]
struct Cli {
    /// Output directory.
    #[arg(long, global = true, env = OUT_DIR_ENV, default_value = DEFAULT_OUT_DIR)]
    out: PathBuf,
    /// Worker threads (default: all cores). Never changes results.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo competitive ratios on one instance.
    Run(RunArgs),
    /// Exhaustive truthfulness, budget and IR audit.
    Audit(AuditArgs),
    /// Evaluate analytic guarantees.
    Bounds(BoundsArgs),
    /// Grid-search bound parameters.
    Tune(TuneArgs),
    /// Certify the two-agent lower bound by exhaustive search.
    Lowerbound(LowerboundArgs),
    /// Adversarial-order scenario for the sampling mechanism.
    Demo(DemoArgs),
    /// Run an experiment from a JSON config file.
    Exec { config: PathBuf },
    /// Recompute rows of a replay.json and compare them with the stored ones.
    Replay {
        file: PathBuf,
        /// Row index; all rows when omitted.
        #[arg(long)]
        row: Option<usize>,
    },
}

#[derive(Args)]
struct InstanceArgs {
    /// Instance document; a generated instance is used otherwise.
    #[arg(long)]
    instance: Option<PathBuf>,
    #[arg(long, default_value = "additive")]
    family: String,
    #[arg(long, default_value_t = 8)]
    n: usize,
    #[arg(long, default_value = "1")]
    budget: String,
    #[arg(long, default_value_t = 0)]
    instance_seed: u64,
}

#[derive(Args)]
struct ParamArgs {
    /// Named parameter preset (cor3.3, cor3.4, cor4.3, cor5.2, cor5.3, cor5.6).
    #[arg(long)]
    preset: Option<String>,
    /// Overrides such as "tau=0.3,delta=0.15".
    #[arg(long)]
    params: Option<String>,
}

impl ParamArgs {
    fn resolve(&self) -> anyhow::Result<MechParams> {
        let mut p = match &self.preset {
            Some(name) => preset_mech_params(name)?,
            None => MechParams::default(),
        };
        if let Some(spec) = &self.params {
            apply_param_overrides(&mut p, spec)?;
        }
        p.validate()?;
        Ok(p)
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    instance: InstanceArgs,
    #[command(flatten)]
    params: ParamArgs,
    /// Comma-separated mechanisms, or "all".
    #[arg(long, default_value = "all")]
    mech: String,
    /// Comma-separated prediction errors; 1 means 1 − 10⁻⁹.
    #[arg(long, default_value = "0")]
    epsilon: String,
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct AuditArgs {
    #[arg(long)]
    mech: String,
    /// Instance document; generated instances are used otherwise.
    #[arg(long)]
    instance: Option<PathBuf>,
    /// Valuation family of generated instances, or "all" for every applicable one.
    #[arg(long, default_value = "all")]
    family: String,
    #[arg(long, default_value_t = 4)]
    n: usize,
    #[arg(long, default_value = "1")]
    budget: String,
    /// Generated instances per family.
    #[arg(long, default_value_t = 1)]
    instances: usize,
    #[arg(long)]
    exhaustive_orders: bool,
    /// Orders sampled per instance without --exhaustive-orders.
    #[arg(long, default_value_t = 64)]
    orders: usize,
    #[arg(long, default_value_t = 64)]
    transcripts: usize,
    #[arg(long, default_value_t = 21)]
    grid_points: usize,
    #[arg(long, value_enum)]
    mutation: Option<MutationArg>,
    #[arg(long, default_value = "0")]
    epsilon: String,
    #[command(flatten)]
    params: ParamArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum MutationArg {
    FirstPrice,
    IgnoreBudget,
    PriceSampled,
}

impl From<MutationArg> for Mutation {
    fn from(m: MutationArg) -> Self {
        match m {
            MutationArg::FirstPrice => Mutation::FirstPrice,
            MutationArg::IgnoreBudget => Mutation::IgnoreBudget,
            MutationArg::PriceSampled => Mutation::PriceSampled,
        }
    }
}

#[derive(Args)]
struct BoundsArgs {
    #[arg(long, conflicts_with_all = ["bound", "values"])]
    preset: Option<String>,
    /// Bound id (mono-pred, mono-sample, mech1, mech4, nonmono-pred, nonmono-sample, mech5, mech8).
    #[arg(long, requires = "values")]
    bound: Option<String>,
    /// Parameters as "name=value,..." in any order.
    #[arg(long)]
    values: Option<String>,
    #[arg(long, default_value = "0,1")]
    epsilon: String,
}

#[derive(Args)]
struct TuneArgs {
    #[arg(long)]
    bound: String,
    #[arg(long, value_enum, default_value = "consistency")]
    target: TargetArg,
    /// Axis as "name=start:stop:step" or "name=v1,v2,..."; repeat per parameter.
    #[arg(long = "axis", required = true)]
    axes: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum TargetArg {
    Consistency,
    Tradeoff,
}

#[derive(Args)]
struct LowerboundArgs {
    #[arg(long)]
    k: usize,
    #[arg(long, default_value = "1")]
    budget: String,
    /// Support of the hard distribution as printed in the text or as drawn.
    #[arg(long, value_enum, default_value = "text")]
    variant: VariantArg,
    #[arg(long, default_value_t = 100)]
    yao_mixtures: usize,
    #[arg(long, default_value_t = 5)]
    yao_tables: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Text,
    Figure,
}

#[derive(Args)]
struct DemoArgs {
    /// Comma-separated values of the small agents.
    #[arg(long, default_value = "0.01,0.001")]
    small: String,
    #[arg(long, default_value_t = 10)]
    n: usize,
    #[arg(long, default_value_t = 10_000)]
    trials: usize,
    #[command(flatten)]
    params: ParamArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// "all" keeps the mechanisms that accept the instance's valuation.
fn parse_mechanisms(s: &str, source: &InstanceSource) -> anyhow::Result<Vec<MechanismId>> {
    if s == "all" {
        let monotone = source.load()?.0.oracle().kind().is_monotone();
        return Ok(MechanismId::ALL
            .into_iter()
            .filter(|m| monotone || !m.requires_monotone())
            .collect());
    }
    s.split(',')
        .map(|m| Ok(m.trim().parse::<MechanismId>()?))
        .collect()
}

fn instance_source(a: &InstanceArgs) -> anyhow::Result<InstanceSource> {
    Ok(match &a.instance {
        Some(path) => InstanceSource::from_file(path)?,
        None => InstanceSource::generated(&a.family, a.n, parse_q(&a.budget)?, a.instance_seed)?,
    })
}

fn audit_sources(a: &AuditArgs, mech: MechanismId) -> anyhow::Result<Vec<InstanceSource>> {
    if let Some(path) = &a.instance {
        return Ok(vec![InstanceSource::from_file(path)?]);
    }
    let families: Vec<&str> = match a.family.as_str() {
        "all" if mech.requires_monotone() => vec!["additive", "coverage"],
        "all" => vec!["additive", "coverage", "cut"],
        f => vec![f],
    };
    let budget = parse_q(&a.budget)?;
    let mut out = Vec::new();
    for f in families {
        for i in 0..a.instances {
            out.push(InstanceSource::generated(
                f,
                a.n,
                budget.clone(),
                a.seed + i as u64,
            )?);
        }
    }
    Ok(out)
}

/// Parses "name=value,..." into the bound's canonical parameter order.
fn bound_from_values(id: &str, values: &str) -> anyhow::Result<BoundSpec> {
    let id = BoundId::parse(id)?;
    let mut given = BTreeMap::new();
    for item in values.split(',').filter(|t| !t.trim().is_empty()) {
        let (k, v) = item
            .split_once('=')
            .with_context(|| format!("expected name=value, got {item:?}"))?;
        given.insert(k.trim().to_string(), hp(v)?);
    }
    let mut ordered = Vec::new();
    for name in id.param_names() {
        ordered.push(
            given
                .remove(*name)
                .with_context(|| format!("missing parameter {name}"))?,
        );
    }
    if let Some(extra) = given.keys().next() {
        bail!("{} has no parameter {extra}", id.name());
    }
    Ok(BoundSpec::from_values(id, &ordered)?)
}

fn parse_axis(spec: &str) -> anyhow::Result<(String, Vec<String>)> {
    let (name, body) = spec
        .split_once('=')
        .with_context(|| format!("axis {spec:?} lacks '='"))?;
    let values = match body.split(':').collect::<Vec<_>>()[..] {
        [start, stop, step] => GridSpec::range(start, stop, step)?,
        [_] => body
            .split(',')
            .map(|v| parse_q(v).map(|_| v.trim().to_string()))
            .collect::<Result<_, _>>()?,
        _ => bail!("axis {spec:?} must be start:stop:step or a comma list"),
    };
    Ok((name.trim().to_string(), values))
}

fn build_config(cmd: &Command) -> anyhow::Result<ExperimentConfig> {
    Ok(match cmd {
        Command::Run(a) => {
            let instance = instance_source(&a.instance)?;
            ExperimentConfig::Run(RunConfig {
                mechanisms: parse_mechanisms(&a.mech, &instance)?,
                instance,
                params: a.params.resolve()?,
                preset: a.params.preset.clone(),
                epsilons: parse_epsilon_list(&a.epsilon)?,
                trials: a.trials,
                seed: a.seed,
            })
        }
        Command::Audit(a) => {
            let mechanism: MechanismId = a.mech.parse()?;
            ExperimentConfig::Audit(AuditRunConfig {
                instances: audit_sources(a, mechanism)?,
                mechanism,
                params: a.params.resolve()?,
                epsilon: parse_epsilon_list(&a.epsilon)?.remove(0),
                exhaustive_orders: a.exhaustive_orders,
                sampled_orders: a.orders,
                transcripts: a.transcripts,
                grid_points: a.grid_points,
                mutation: a.mutation.map(Into::into),
                seed: a.seed,
            })
        }
        Command::Bounds(a) => {
            let epsilons = parse_epsilon_list(&a.epsilon)?;
            match (&a.preset, &a.bound, &a.values) {
                (Some(p), _, _) => ExperimentConfig::Bounds(BoundsConfig {
                    label: Some(p.clone()),
                    specs: preset(p)?,
                    epsilons,
                }),
                (None, Some(b), Some(v)) => ExperimentConfig::Bounds(BoundsConfig {
                    label: None,
                    specs: vec![bound_from_values(b, v)?],
                    epsilons,
                }),
                _ => bail!("bounds needs --preset or --bound with --values"),
            }
        }
        Command::Tune(a) => ExperimentConfig::Tune(TuneConfig {
            grid: GridSpec {
                bound: BoundId::parse(&a.bound)?,
                target: match a.target {
                    TargetArg::Consistency => TuneTarget::Consistency,
                    TargetArg::Tradeoff => TuneTarget::Tradeoff,
                },
                axes: a
                    .axes
                    .iter()
                    .map(|s| parse_axis(s))
                    .collect::<anyhow::Result<_>>()?,
            },
        }),
        Command::Lowerbound(a) => ExperimentConfig::Lowerbound(LowerboundConfig {
            k: a.k,
            budget: parse_q(&a.budget)?,
            variant: match a.variant {
                VariantArg::Text => SupportVariant::Text,
                VariantArg::Figure => SupportVariant::Figure,
            },
            yao_mixtures: a.yao_mixtures,
            yao_tables: a.yao_tables,
            seed: a.seed,
        }),
        Command::Demo(a) => {
            let small_values = a
                .small
                .split(',')
                .map(|v| parse_q(v).map(|_| v.trim().to_string()))
                .collect::<Result<_, _>>()?;
            ExperimentConfig::Demo(DemoConfig {
                small_values,
                n: a.n,
                trials: a.trials,
                params: a.params.resolve()?,
                seed: a.seed,
            })
        }
        Command::Exec { config } => {
            let text = std::fs::read_to_string(config)
                .with_context(|| format!("reading {}", config.display()))?;
            serde_json::from_str(&text).context("parsing experiment config")?
        }
        Command::Replay { .. } => unreachable!("replay has no experiment config"),
    })
}

fn replay(file: &Path, row: Option<usize>) -> anyhow::Result<ExitCode> {
    let text =
        std::fs::read_to_string(file).with_context(|| format!("reading {}", file.display()))?;
    let doc: serde_json::Value = serde_json::from_str(&text).context("parsing replay document")?;
    let total = doc["rows"].as_array().map_or(0, Vec::len);
    let rows: Vec<usize> = match row {
        Some(r) => vec![r],
        None => (0..total).collect(),
    };
    let mut mismatches = 0;
    for r in rows {
        let line = replay_row(&doc, r)?;
        if doc["rows"][r]["csv"].as_str() != Some(line.as_str()) {
            eprintln!("row {r} differs: {line}");
            mismatches += 1;
        } else {
            println!("{line}");
        }
    }
    Ok(if mismatches == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn execute(cli: &Cli) -> anyhow::Result<ExitCode> {
    if let Some(w) = cli.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build_global()
            .context("configuring the worker pool")?;
    }
    if let Command::Replay { file, row } = &cli.command {
        return replay(file, *row);
    }
    let cfg = build_config(&cli.command)?;
    let out = run_experiment(&cfg)?;
    out.write_to(&cli.out)
        .with_context(|| format!("writing results to {}", cli.out.display()))?;
    println!(
        "{}: {} rows written to {} (config {})",
        out.command,
        out.rows().len(),
        cli.out.display(),
        &out.summary["config_digest"].as_str().unwrap_or_default()[..12]
    );
    if out.violations > 0 {
        eprintln!(
            "{} invariant violation(s); see {}",
            out.violations,
            cli.out.join("results.csv").display()
        );
    }
    Ok(ExitCode::from(out.exit_code() as u8))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
