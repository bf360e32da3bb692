//! Batch experiments: a self-contained config goes in, `results.csv`,
//! `summary.json` and `replay.json` come out.
//!
//! Outputs depend only on the config, never on worker count or timing, so the
//! same config reproduces byte-identical files. Each replay record carries the
//! key needed to recompute its CSV row with [`replay_row`].

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use itertools::Itertools;
use num_traits::{One, Signed, Zero};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::audit::{
    adversarial_demo, audit_budget_ir_instance, audit_truthfulness, hex, instance_digest, mean_se,
    trial_seeds, AuditConfig, AuditReport, OrderMode,
};
use crate::bounds::{
    preset, preset_mech_params, tune_objective, tune_params, BoundId, BoundSpec, GridSpec,
    EPSILON_BAD,
};
use crate::error::{Error, Result};
use crate::instance::{
    generate_instance, parse_instance, sample_arrival, CostModel, GeneratorConfig, Instance,
    Prediction,
};
use crate::lowerbound::{
    build_pk_variant, chain_check, max_expected_ratio_for, random_mixture, yao_check,
    SupportVariant,
};
use crate::mechanism::{CoinTranscript, MechParams, MechanismId, Mutation};
use crate::num::{
    hp, hp_from_q, hp_render, hp_to_f64, parse_q, q_string, q_to_f64, render_decimal, render_q, Q,
};
use crate::offline::brute_force_opt;

/// Version string carried by every summary and replay document.
pub const SCHEMA_VERSION: &str = "bfpred/1";
/// Bumped whenever a subcommand's CSV columns change.
pub const CSV_VERSION: u32 = 1;
/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "BFPRED_OUT";
pub const DEFAULT_OUT_DIR: &str = "bfpred-out";

// ------------------------------------------------------------------ inputs

/// Parses one `ε`. The value `1` stands for the limit `1 − 10⁻⁹`.
pub fn parse_epsilon(s: &str) -> Result<Q> {
    let e = parse_q(s)?;
    if e.is_negative() || e > Q::one() {
        return Err(Error::Parse(format!("ε must lie in [0, 1], got {s:?}")));
    }
    if e.is_one() {
        return parse_q(EPSILON_BAD);
    }
    Ok(e)
}

/// Comma-separated `ε` list, canonicalized to decimal strings.
pub fn parse_epsilon_list(s: &str) -> Result<Vec<String>> {
    let out: Vec<String> = s
        .split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| parse_epsilon(t).map(|e| render_decimal(&e)))
        .collect::<Result<_>>()?;
    if out.is_empty() {
        return Err(Error::Parse("empty ε list".into()));
    }
    Ok(out)
}

/// Applies `name=value` overrides (comma separated) to mechanism parameters.
pub fn apply_param_overrides(params: &mut MechParams, spec: &str) -> Result<()> {
    for item in spec.split(',').filter(|t| !t.trim().is_empty()) {
        let (name, value) = item
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("expected name=value, got {item:?}")))?;
        let v = parse_q(value)?;
        let slot = match name.trim() {
            "tau" => &mut params.tau,
            "p" => &mut params.p_pred,
            "a" => &mut params.a,
            "z" => &mut params.z,
            "q" => &mut params.q_dynkin,
            "beta" => &mut params.beta,
            "delta" => &mut params.delta,
            "k" => &mut params.k,
            other => {
                return Err(Error::Parse(format!(
                    "unknown mechanism parameter {other:?}"
                )))
            }
        };
        *slot = v;
    }
    params.validate()
}

/// Where an experiment's instance comes from. Files are embedded verbatim so a
/// config (and hence a replay document) never points outside itself.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum InstanceSource {
    Document {
        text: String,
    },
    Generated {
        generator: GeneratorConfig,
        seed: u64,
    },
}

impl InstanceSource {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        parse_instance(&text)?;
        Ok(InstanceSource::Document { text })
    }

    /// A generated instance of the named family: costs uniform on `(0, B/2]`,
    /// coverage over a universe of `2n` elements.
    pub fn generated(family: &str, n: usize, budget: Q, seed: u64) -> Result<Self> {
        let costs = CostModel::Uniform {
            low: Q::zero(),
            high: &budget / Q::from_integer(2.into()),
        };
        let generator = match family {
            "additive" => GeneratorConfig::additive(n, budget, costs),
            "coverage" => GeneratorConfig::coverage(n, 2 * n, budget, costs),
            "cut" => GeneratorConfig::cut(n, budget, costs),
            other => return Err(Error::Parse(format!("unknown family {other:?}"))),
        };
        Ok(InstanceSource::Generated { generator, seed })
    }

    pub fn load(&self) -> Result<(Instance, Option<Prediction>)> {
        match self {
            InstanceSource::Document { text } => parse_instance(text),
            InstanceSource::Generated { generator, seed } => {
                Ok((generate_instance(generator, *seed)?, None))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub instance: InstanceSource,
    pub mechanisms: Vec<MechanismId>,
    pub params: MechParams,
    /// Preset whose analytic bounds the estimates are compared against.
    #[serde(default)]
    pub preset: Option<String>,
    pub epsilons: Vec<String>,
    pub trials: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditRunConfig {
    pub instances: Vec<InstanceSource>,
    pub mechanism: MechanismId,
    pub params: MechParams,
    pub epsilon: String,
    pub exhaustive_orders: bool,
    /// Orders sampled per instance when not exhaustive.
    pub sampled_orders: usize,
    pub transcripts: usize,
    pub grid_points: usize,
    #[serde(default)]
    pub mutation: Option<Mutation>,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundsConfig {
    #[serde(default)]
    pub label: Option<String>,
    pub specs: Vec<BoundSpec>,
    pub epsilons: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuneConfig {
    pub grid: GridSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LowerboundConfig {
    pub k: usize,
    #[serde(with = "q_string")]
    pub budget: Q,
    #[serde(default)]
    pub variant: SupportVariant,
    pub yao_mixtures: usize,
    pub yao_tables: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemoConfig {
    pub small_values: Vec<String>,
    pub n: usize,
    pub trials: usize,
    pub params: MechParams,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum ExperimentConfig {
    Run(RunConfig),
    Audit(AuditRunConfig),
    Bounds(BoundsConfig),
    Tune(TuneConfig),
    Lowerbound(LowerboundConfig),
    Demo(DemoConfig),
}

impl ExperimentConfig {
    pub fn command(&self) -> &'static str {
        match self {
            ExperimentConfig::Run(_) => "run",
            ExperimentConfig::Audit(_) => "audit",
            ExperimentConfig::Bounds(_) => "bounds",
            ExperimentConfig::Tune(_) => "tune",
            ExperimentConfig::Lowerbound(_) => "lowerbound",
            ExperimentConfig::Demo(_) => "demo",
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            ExperimentConfig::Run(c) => c.seed,
            ExperimentConfig::Audit(c) => c.seed,
            ExperimentConfig::Lowerbound(c) => c.seed,
            ExperimentConfig::Demo(c) => c.seed,
            ExperimentConfig::Bounds(_) | ExperimentConfig::Tune(_) => 0,
        }
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let text = serde_json::to_string(self).expect("configs serialize");
        hex(&Sha256::digest(text.as_bytes()))
    }

    /// The bound-evaluation config for a named preset.
    pub fn bounds_preset(name: &str, epsilons: Vec<String>) -> Result<Self> {
        Ok(ExperimentConfig::Bounds(BoundsConfig {
            label: Some(name.to_string()),
            specs: preset(name)?,
            epsilons,
        }))
    }
}

// ----------------------------------------------------------------- outputs

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentOutput {
    pub command: &'static str,
    pub results_csv: String,
    pub summary: Value,
    pub replay: Value,
    /// Invariant violations met while running; nonzero means exit status 1.
    pub violations: usize,
}

impl ExperimentOutput {
    pub fn exit_code(&self) -> i32 {
        i32::from(self.violations > 0)
    }

    pub fn write_to(&self, dir: &Path) -> std::io::Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("results.csv"), &self.results_csv)?;
        fs::write(dir.join("summary.json"), pretty(&self.summary))?;
        fs::write(dir.join("replay.json"), pretty(&self.replay))?;
        Ok(())
    }

    /// Data rows of `results.csv`, without the comment and column header.
    pub fn rows(&self) -> Vec<&str> {
        self.results_csv.lines().skip(2).collect()
    }
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json values serialize");
    s.push('\n');
    s
}

/// What a subcommand produces before the shared columns are attached.
struct Body {
    header: &'static str,
    rows: Vec<(String, Value)>,
    summary: Value,
    violations: usize,
}

fn prefix(digest: &str, seed: u64, row: &str) -> String {
    format!("{digest},{seed},{row}")
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let body = match cfg {
        ExperimentConfig::Run(c) => run_cmd(c)?,
        ExperimentConfig::Audit(c) => audit_cmd(c)?,
        ExperimentConfig::Bounds(c) => bounds_cmd(c)?,
        ExperimentConfig::Tune(c) => tune_cmd(c)?,
        ExperimentConfig::Lowerbound(c) => lowerbound_cmd(c)?,
        ExperimentConfig::Demo(c) => demo_cmd(c)?,
    };
    let (command, digest, seed) = (cfg.command(), cfg.digest(), cfg.seed());
    let mut csv = format!(
        "# bfpred {command} results, csv version {CSV_VERSION}\nconfig_digest,seed,{}\n",
        body.header
    );
    let mut replay_rows = Vec::with_capacity(body.rows.len());
    for (i, (row, key)) in body.rows.into_iter().enumerate() {
        let line = prefix(&digest, seed, &row);
        csv.push_str(&line);
        csv.push('\n');
        replay_rows.push(json!({ "row": i, "csv": line, "key": key }));
    }
    let summary = json!({
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "config_digest": digest,
        "seed": seed,
        "rows": replay_rows.len(),
        "violations": body.violations,
        "results": body.summary,
    });
    let replay = json!({
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "config_digest": digest,
        "config": cfg,
        "rows": replay_rows,
    });
    Ok(ExperimentOutput {
        command,
        results_csv: csv,
        summary,
        replay,
        violations: body.violations,
    })
}

/// Recomputes row `row` of a replay document from its embedded config and key.
/// The caller compares the result with the stored `csv` field.
pub fn replay_row(replay: &Value, row: usize) -> Result<String> {
    let bad = |m: &str| Error::Parse(format!("replay document: {m}"));
    if replay["schema_version"] != SCHEMA_VERSION {
        return Err(bad("unsupported schema version"));
    }
    let cfg: ExperimentConfig =
        serde_json::from_value(replay["config"].clone()).map_err(|e| bad(&e.to_string()))?;
    if replay["config_digest"] != cfg.digest() {
        return Err(bad("config digest mismatch"));
    }
    let key = &replay["rows"][row]["key"];
    if key.is_null() {
        return Err(bad(&format!("no row {row}")));
    }
    let line = match &cfg {
        ExperimentConfig::Run(c) => run_row_from_key(c, key)?,
        ExperimentConfig::Audit(c) => audit_row_from_key(c, key)?,
        ExperimentConfig::Bounds(c) => {
            bounds_row(c, key_usize(key, "spec")?, key_str(key, "epsilon")?)?
        }
        ExperimentConfig::Tune(c) => tune_row(c, &key_strings(key, "values")?)?,
        ExperimentConfig::Lowerbound(c) => {
            lowerbound_cmd(c)?
                .rows
                .swap_remove(key_usize(key, "profile")?)
                .0
        }
        ExperimentConfig::Demo(c) => demo_row(c, key_usize(key, "small")?)?.0,
    };
    Ok(prefix(&cfg.digest(), cfg.seed(), &line))
}

fn key_usize(key: &Value, name: &str) -> Result<usize> {
    key[name]
        .as_u64()
        .map(|v| v as usize)
        .ok_or_else(|| Error::Parse(format!("replay key lacks {name}")))
}

fn key_u64(key: &Value, name: &str) -> Result<u64> {
    key[name]
        .as_u64()
        .ok_or_else(|| Error::Parse(format!("replay key lacks {name}")))
}

fn key_str<'a>(key: &'a Value, name: &str) -> Result<&'a str> {
    key[name]
        .as_str()
        .ok_or_else(|| Error::Parse(format!("replay key lacks {name}")))
}

fn key_strings(key: &Value, name: &str) -> Result<Vec<String>> {
    serde_json::from_value(key[name].clone())
        .map_err(|e| Error::Parse(format!("replay key {name}: {e}")))
}

fn join<T: ToString>(xs: impl IntoIterator<Item = T>) -> String {
    xs.into_iter().map(|x| x.to_string()).join(" ")
}

fn positive_optimum(inst: &Instance) -> Result<Q> {
    let v = brute_force_opt(inst.market(), None)?.value;
    if v.is_zero() {
        return Err(Error::Domain(
            "optimum value is zero; predictions and ratios are undefined".into(),
        ));
    }
    Ok(v)
}

fn check_family(m: MechanismId, inst: &Instance) -> Result<()> {
    if m.requires_monotone() && !inst.oracle().kind().is_monotone() {
        return Err(Error::Config(format!("{m} needs a monotone valuation")));
    }
    Ok(())
}

// --------------------------------------------------------------------- run

const RUN_HEADER: &str = "mechanism,epsilon,omega,trial,order_seed,transcript_seed,order,branch,winners,total_payment,value,ratio,ratio_f64,budget_ok,ir_ok";

struct TrialRow {
    line: String,
    ratio: f64,
    label: String,
    ok: bool,
}

#[allow(clippy::too_many_arguments)]
fn run_trial(
    inst: &Instance,
    m: MechanismId,
    epsilon: Option<&str>,
    omega: Option<&Q>,
    opt: &Q,
    params: &MechParams,
    trial: u64,
    seeds: (u64, u64),
) -> Result<TrialRow> {
    let order = sample_arrival(inst.n(), seeds.0)?;
    let out = m.run_instance(
        inst,
        omega,
        &order,
        CoinTranscript::from_seed(seeds.1),
        params,
    )?;
    let check = audit_budget_ir_instance(&out, inst);
    let ratio = &out.value / opt;
    let ir_ok = check.ir_witnesses.is_empty();
    let line = [
        m.name().to_string(),
        epsilon.unwrap_or_default().to_string(),
        omega.map(render_q).unwrap_or_default(),
        trial.to_string(),
        seeds.0.to_string(),
        seeds.1.to_string(),
        join(order.agents()),
        out.label(),
        join(out.winners.iter()),
        render_q(&out.total_payment()),
        render_q(&out.value),
        render_q(&ratio),
        q_to_f64(&ratio).to_string(),
        (!check.over_budget).to_string(),
        ir_ok.to_string(),
    ]
    .join(",");
    Ok(TrialRow {
        line,
        ratio: q_to_f64(&ratio),
        label: out.label(),
        ok: check.passed,
    })
}

/// The analytic guarantee for `m` under a preset, if the preset covers it and
/// the parameters match the preset (the mixture weight may differ).
pub fn bound_for(
    m: MechanismId,
    preset_name: &str,
    params: &MechParams,
) -> Result<Option<BoundSpec>> {
    let expected = MechParams {
        tau: params.tau.clone(),
        ..preset_mech_params(preset_name)?
    };
    if *params != expected {
        return Ok(None);
    }
    let specs = preset(preset_name)?;
    let find = |id: BoundId| specs.iter().find(|s| s.id() == id).cloned();
    let mix = |pred: BoundId, sample: BoundId, mech: BoundId| -> Result<Option<BoundSpec>> {
        let (Some(p), Some(s)) = (find(pred), find(sample)) else {
            return Ok(None);
        };
        let mut v = vec![hp_from_q(&params.tau)];
        v.extend(p.values());
        v.extend(s.values());
        BoundSpec::from_values(mech, &v).map(Some)
    };
    Ok(match m {
        MechanismId::Mech2 => find(BoundId::MonoPred),
        MechanismId::Mech3 => find(BoundId::MonoSample),
        MechanismId::Mech4 => find(BoundId::Mech4),
        MechanismId::Mech6 => find(BoundId::NonmonoPred),
        MechanismId::Mech7 => find(BoundId::NonmonoSample),
        MechanismId::Mech8 => find(BoundId::Mech8),
        MechanismId::Mech1 => mix(BoundId::MonoPred, BoundId::MonoSample, BoundId::Mech1)?,
        MechanismId::Mech5 => mix(BoundId::NonmonoPred, BoundId::NonmonoSample, BoundId::Mech5)?,
        MechanismId::Dynkin => None,
    })
}

fn run_groups(c: &RunConfig) -> Vec<(MechanismId, Option<String>)> {
    let mut groups = Vec::new();
    for &m in &c.mechanisms {
        if m.needs_prediction() {
            groups.extend(c.epsilons.iter().map(|e| (m, Some(e.clone()))));
        } else {
            groups.push((m, None));
        }
    }
    groups
}

fn omega_at(opt: &Q, epsilon: Option<&str>) -> Result<Option<Q>> {
    epsilon
        .map(|e| parse_epsilon(e).map(|e| (Q::one() - e) * opt))
        .transpose()
}

fn run_cmd(c: &RunConfig) -> Result<Body> {
    c.params.validate()?;
    if c.trials == 0 || c.mechanisms.is_empty() {
        return Err(Error::Config(
            "run needs at least one mechanism and one trial".into(),
        ));
    }
    let (inst, _) = c.instance.load()?;
    for &m in &c.mechanisms {
        check_family(m, &inst)?;
    }
    let opt = positive_optimum(&inst)?;
    let mut rows = Vec::new();
    let mut groups_out = Vec::new();
    let mut violations = 0;
    for (m, eps) in run_groups(c) {
        let omega = omega_at(&opt, eps.as_deref())?;
        let trials: Vec<TrialRow> = (0..c.trials as u64)
            .into_par_iter()
            .map(|t| {
                run_trial(
                    &inst,
                    m,
                    eps.as_deref(),
                    omega.as_ref(),
                    &opt,
                    &c.params,
                    t,
                    trial_seeds(c.seed, t),
                )
            })
            .collect::<Result<_>>()?;
        let ratios: Vec<f64> = trials.iter().map(|t| t.ratio).collect();
        let (mean, se) = mean_se(&ratios);
        let mut branches: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        for t in &trials {
            branches.entry(&t.label).or_default().push(t.ratio);
        }
        let per_branch: BTreeMap<&str, Value> = branches
            .into_iter()
            .map(|(l, v)| (l, json!({ "trials": v.len(), "mean_ratio": mean_se(&v).0 })))
            .collect();
        let failed = trials.iter().filter(|t| !t.ok).count();
        violations += failed;
        let bound = match &c.preset {
            Some(p) => bound_for(m, p, &c.params)?
                .map(|spec| {
                    let e = eps
                        .as_deref()
                        .map(parse_epsilon)
                        .transpose()?
                        .unwrap_or_else(Q::zero);
                    let r = spec.eval(&hp_from_q(&e))?;
                    let b = hp_to_f64(&r.bound);
                    Ok::<_, Error>(json!({
                        "bound": hp_render(&r.bound),
                        "bound_f64": b,
                        "binding_term": r.binding_term,
                        "estimate_not_below_bound_minus_3se": mean >= b - 3.0 * se,
                    }))
                })
                .transpose()?,
            None => None,
        };
        groups_out.push(json!({
            "mechanism": m,
            "epsilon": eps,
            "omega": omega.as_ref().map(render_q),
            "trials": c.trials,
            "mean_ratio": mean,
            "std_error": se,
            "ci95": [mean - 1.96 * se, mean + 1.96 * se],
            "min_ratio": ratios.iter().copied().fold(f64::INFINITY, f64::min),
            "per_branch": per_branch,
            "budget_or_ir_failures": failed,
            "analytic": bound,
        }));
        for (t, row) in trials.into_iter().enumerate() {
            let (os, ts) = trial_seeds(c.seed, t as u64);
            let key = json!({
                "mechanism": m,
                "epsilon": eps,
                "trial": t,
                "order_seed": os,
                "transcript_seed": ts,
            });
            rows.push((row.line, key));
        }
    }
    Ok(Body {
        header: RUN_HEADER,
        rows,
        summary: json!({
            "instance_digest": instance_digest(&inst),
            "n": inst.n(),
            "family": inst.oracle().family().name(),
            "optimum": render_q(&opt),
            "preset": c.preset,
            "groups": groups_out,
        }),
        violations,
    })
}

fn run_row_from_key(c: &RunConfig, key: &Value) -> Result<String> {
    let (inst, _) = c.instance.load()?;
    let opt = positive_optimum(&inst)?;
    let m: MechanismId = serde_json::from_value(key["mechanism"].clone())
        .map_err(|e| Error::Parse(format!("replay key: {e}")))?;
    let eps = key["epsilon"].as_str();
    let omega = omega_at(&opt, eps)?;
    let seeds = (
        key_u64(key, "order_seed")?,
        key_u64(key, "transcript_seed")?,
    );
    Ok(run_trial(
        &inst,
        m,
        eps,
        omega.as_ref(),
        &opt,
        &c.params,
        key_u64(key, "trial")?,
        seeds,
    )?
    .line)
}

// ------------------------------------------------------------------- audit

const AUDIT_HEADER: &str = "instance,instance_digest,kind,mechanism,order,transcript_seed,coins,agent,deviation,truthful_utility,deviant_utility,amount";

fn audit_one(c: &AuditRunConfig, idx: usize) -> Result<(Instance, AuditReport)> {
    let (inst, _) = c.instances[idx].load()?;
    check_family(c.mechanism, &inst)?;
    let omega = if c.mechanism.needs_prediction() {
        omega_at(&positive_optimum(&inst)?, Some(&c.epsilon))?
    } else {
        None
    };
    let cfg = AuditConfig {
        orders: if c.exhaustive_orders {
            OrderMode::Exhaustive
        } else {
            OrderMode::Sample {
                count: c.sampled_orders,
                seed: c.seed.wrapping_add(idx as u64),
            }
        },
        transcripts: c.transcripts,
        transcript_seed: c.seed.wrapping_add(idx as u64),
        grid_points: c.grid_points,
        mutation: c.mutation,
        ..AuditConfig::new(c.mechanism, c.params.clone(), omega)
    };
    let report = audit_truthfulness(&inst, &cfg)?;
    Ok((inst, report))
}

fn audit_cmd(c: &AuditRunConfig) -> Result<Body> {
    c.params.validate()?;
    parse_epsilon(&c.epsilon)?;
    if c.instances.is_empty() {
        return Err(Error::Config("audit needs at least one instance".into()));
    }
    let mut rows = Vec::new();
    let mut per_instance = Vec::new();
    let mut violations = 0;
    for idx in 0..c.instances.len() {
        let (inst, r) = audit_one(c, idx)?;
        let found = r.violations.len() + r.budget_violations.len() + r.ir_violations.len();
        violations += found;
        per_instance.push(json!({
            "instance": idx,
            "instance_digest": r.instance_digest,
            "n": inst.n(),
            "family": inst.oracle().family().name(),
            "trials": r.trials,
            "runs": r.runs,
            "grid_points": r.grid_points,
            "grid_step": render_q(&r.grid_step),
            "truthfulness_violations": r.violations.len(),
            "budget_violations": r.budget_violations.len(),
            "ir_violations": r.ir_violations.len(),
            "passed": r.passed,
            "first_violation_row": (found > 0).then_some(rows.len()),
        }));
        for (j, line) in r.csv_rows().into_iter().enumerate() {
            rows.push((
                format!("{idx},{},{line}", r.instance_digest),
                json!({ "instance": idx, "index": j }),
            ));
        }
    }
    Ok(Body {
        header: AUDIT_HEADER,
        rows,
        summary: json!({
            "mechanism": c.mechanism,
            "mutation": c.mutation,
            "epsilon": c.epsilon,
            "exhaustive_orders": c.exhaustive_orders,
            "transcripts": c.transcripts,
            "passed": violations == 0,
            "instances": per_instance,
        }),
        violations,
    })
}

fn audit_row_from_key(c: &AuditRunConfig, key: &Value) -> Result<String> {
    let idx = key_usize(key, "instance")?;
    if idx >= c.instances.len() {
        return Err(Error::Parse(format!("replay key names instance {idx}")));
    }
    let (_, r) = audit_one(c, idx)?;
    let j = key_usize(key, "index")?;
    let line = r.csv_rows().into_iter().nth(j).ok_or_else(|| {
        Error::Contract(format!("audit of instance {idx} no longer yields row {j}"))
    })?;
    Ok(format!("{idx},{},{line}", r.instance_digest))
}

// ------------------------------------------------------------------ bounds

const BOUNDS_HEADER: &str = "label,mechanism,params,epsilon,single_agent,rejection,budget_exhaustion,f1,f2,tilde_p,tilde_p_degenerate,bound,reciprocal,binding_term";

fn bounds_row(c: &BoundsConfig, spec: usize, epsilon: &str) -> Result<String> {
    let s = c
        .specs
        .get(spec)
        .ok_or_else(|| Error::Parse(format!("no bound spec {spec}")))?;
    let r = s.eval(&hp_from_q(&parse_epsilon(epsilon)?))?;
    Ok(format!(
        "{},{}",
        c.label.as_deref().unwrap_or_default(),
        r.csv_row()
    ))
}

fn bounds_cmd(c: &BoundsConfig) -> Result<Body> {
    if c.specs.is_empty() || c.epsilons.is_empty() {
        return Err(Error::Config("bounds needs a spec and an ε".into()));
    }
    let mut rows = Vec::new();
    let mut evals = Vec::new();
    for (i, spec) in c.specs.iter().enumerate() {
        for e in &c.epsilons {
            let r = spec.eval(&hp_from_q(&parse_epsilon(e)?))?;
            evals.push(json!({
                "mechanism": r.mechanism,
                "epsilon": e,
                "bound": hp_render(&r.bound),
                "bound_f64": r.bound_f64(),
                "reciprocal": r.reciprocal_f64(),
                "binding_term": r.binding_term,
                "report": r.to_json(),
            }));
            rows.push((bounds_row(c, i, e)?, json!({ "spec": i, "epsilon": e })));
        }
    }
    Ok(Body {
        header: BOUNDS_HEADER,
        rows,
        summary: json!({ "label": c.label, "evaluations": evals }),
        violations: 0,
    })
}

// -------------------------------------------------------------------- tune

const TUNE_HEADER: &str = "bound,target,params,objective,objective_f64";

/// Grid points in the tuner's lexicographic order (axes sorted, duplicates dropped).
fn tune_points(grid: &GridSpec) -> Result<Vec<Vec<String>>> {
    let mut axes = Vec::new();
    for name in grid.bound.param_names() {
        let raw = grid
            .axes
            .get(*name)
            .ok_or_else(|| Error::Config(format!("grid lacks an axis for {name}")))?;
        let mut vals = raw.iter().map(|s| parse_q(s)).collect::<Result<Vec<_>>>()?;
        vals.sort();
        vals.dedup();
        axes.push(vals.iter().map(render_decimal).collect::<Vec<_>>());
    }
    Ok(axes.into_iter().multi_cartesian_product().collect())
}

fn tune_row(c: &TuneConfig, values: &[String]) -> Result<String> {
    let g = &c.grid;
    let hps = values.iter().map(|v| hp(v)).collect::<Result<Vec<_>>>()?;
    let objective = BoundSpec::from_values(g.bound, &hps)
        .and_then(|s| tune_objective(&s, g.target))
        .ok();
    let params = g
        .bound
        .param_names()
        .iter()
        .zip(values)
        .map(|(n, v)| format!("{n}={v}"))
        .join(";");
    let target = serde_json::to_value(g.target).expect("targets serialize");
    Ok(format!(
        "{},{},{params},{},{}",
        g.bound.name(),
        target.as_str().unwrap_or_default(),
        objective.as_ref().map(hp_render).unwrap_or_default(),
        objective
            .as_ref()
            .map(|o| hp_to_f64(o).to_string())
            .unwrap_or_default(),
    ))
}

fn tune_cmd(c: &TuneConfig) -> Result<Body> {
    let best = tune_params(&c.grid)?;
    let points = tune_points(&c.grid)?;
    let lines: Vec<String> = points
        .par_iter()
        .map(|p| tune_row(c, p))
        .collect::<Result<_>>()?;
    let rows = lines
        .into_iter()
        .zip(&points)
        .map(|(l, p)| (l, json!({ "values": p })))
        .collect();
    let names = c.grid.bound.param_names();
    let best_params: BTreeMap<&str, String> = names
        .iter()
        .copied()
        .zip(best.best.values().iter().map(hp_render))
        .collect();
    Ok(Body {
        header: TUNE_HEADER,
        rows,
        summary: json!({
            "bound": c.grid.bound,
            "target": c.grid.target,
            "points": points.len(),
            "evaluations": best.evaluations,
            "best_params": best_params,
            "best_bound": hp_render(&best.best_bound),
            "best_bound_f64": hp_to_f64(&best.best_bound),
            "best_reciprocal": 1.0 / hp_to_f64(&best.best_bound),
        }),
        violations: 0,
    })
}

// -------------------------------------------------------------- lowerbound

const LOWERBOUND_HEADER: &str =
    "profile,i,j,cost0,cost1,probability,winners,payment0,payment1,ratio";

fn lowerbound_cmd(c: &LowerboundConfig) -> Result<Body> {
    let dist = build_pk_variant(c.k, c.budget.clone(), c.variant)?;
    let search = max_expected_ratio_for(&dist)?;
    let t = &search.witness;
    let costs = dist.costs();
    let rows = dist
        .support
        .iter()
        .enumerate()
        .map(|(idx, &p)| {
            let w = t.winners(p);
            let agents = (0..2).filter(|a| w >> a & 1 == 1);
            let line = [
                idx.to_string(),
                p.0.to_string(),
                p.1.to_string(),
                render_q(&costs[idx].0),
                render_q(&costs[idx].1),
                render_q(&dist.probabilities[idx]),
                join(agents),
                render_q(&t.payment(p, 0)),
                render_q(&t.payment(p, 1)),
                render_q(&Q::new(w.count_ones().into(), 2.into())),
            ]
            .join(",");
            (line, json!({ "profile": idx }))
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    let yao_failures = (0..c.yao_mixtures)
        .filter(|_| !yao_check(&random_mixture(&dist.grid, c.yao_tables, &mut rng), &dist).holds)
        .count();
    let chain = chain_check(c.k)?;
    let exceeds = c.variant == SupportVariant::Text && search.max_expected_ratio > search.ceiling;
    let violations = usize::from(exceeds)
        + usize::from(!search.blocking_passed)
        + yao_failures
        + usize::from(!chain.contradiction);
    Ok(Body {
        header: LOWERBOUND_HEADER,
        rows,
        summary: json!({
            "k": c.k,
            "budget": render_q(&c.budget),
            "variant": c.variant,
            "max_expected_ratio": render_q(&search.max_expected_ratio),
            "max_expected_ratio_f64": q_to_f64(&search.max_expected_ratio),
            "ceiling": render_q(&search.ceiling),
            "attains_ceiling": search.max_expected_ratio == search.ceiling,
            "reduced_max": render_q(&search.reduced_max),
            "curves_visited": search.curves_visited,
            "feasible_tables": search.feasible_tables.to_string(),
            "blocking_checks": search.blocking_checks,
            "blocking_passed": search.blocking_passed,
            "witness": t.render(),
            "yao": { "mixtures": c.yao_mixtures, "failures": yao_failures },
            "chain": chain,
        }),
        violations,
    })
}

// -------------------------------------------------------------------- demo

const DEMO_HEADER: &str = "small_value,n,trials,sampled_trials,max_ratio_when_sampled,adversarial_max_ratio,adversarial_mean_ratio,random_order_mean_ratio,random_order_std_error,separated";

fn demo_row(c: &DemoConfig, idx: usize) -> Result<(String, Value, bool)> {
    let raw = c
        .small_values
        .get(idx)
        .ok_or_else(|| Error::Parse(format!("no demo value {idx}")))?;
    let small = parse_q(raw)?;
    let r = adversarial_demo(&small, c.n, c.trials, c.seed, &c.params)?;
    let separated =
        r.max_ratio_when_sampled <= small && r.random_order_mean_ratio > r.adversarial_mean_ratio;
    let line = [
        render_q(&small),
        r.n.to_string(),
        r.trials.to_string(),
        r.sampled_trials.to_string(),
        render_q(&r.max_ratio_when_sampled),
        render_q(&r.adversarial_max_ratio),
        r.adversarial_mean_ratio.to_string(),
        r.random_order_mean_ratio.to_string(),
        r.random_order_std_error.to_string(),
        separated.to_string(),
    ]
    .join(",");
    let report = serde_json::to_value(&r).expect("demo reports serialize");
    Ok((line, report, separated))
}

fn demo_cmd(c: &DemoConfig) -> Result<Body> {
    c.params.validate()?;
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    let mut violations = 0;
    for idx in 0..c.small_values.len() {
        let (line, report, separated) = demo_row(c, idx)?;
        violations += usize::from(!separated);
        rows.push((line, json!({ "small": idx })));
        reports.push(report);
    }
    Ok(Body {
        header: DEMO_HEADER,
        rows,
        summary: json!({ "reports": reports }),
        violations,
    })
}
