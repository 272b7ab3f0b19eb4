//! Command-line front end. Every artifact is a pure function of the
//! arguments, the input files and the seed; timings go to stderr only.

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::allocation::Lottery;
use crate::lp::{build_naive_capped, build_succinct_k_bidders, build_succinct_k_items, solve_to_mechanism, LpBuild, Mode};
use crate::mechanism::{check_bic, check_ic, check_strong_monotonicity, ex_post_ir_transform, AuditMode, AuditReport, Mechanism, Rule};
use crate::mhr::{self, ContinuousMarginal};
use crate::model::{validate, Constraints, Direction, DistributionSpec, Model, Sampler, SettingKind};
use crate::rational::{self, Q};
use crate::reduction::{self, Reduction, ReductionConfig};
use crate::symmetry::profile_to_string;

/// Exit code when an audit or comparison fails (errors exit with 1).
pub const EXIT_AUDIT_FAILED: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "symauction", version, about = "Revenue-optimal auctions for symmetric bidders and items")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Bic,
    Ic,
}

impl From<ModeArg> for AuditMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Bic => AuditMode::Bic,
            ModeArg::Ic => AuditMode::Ic,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum IrArg {
    Interim,
    Expost,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormulationArg {
    /// Succinct program matching the declared setting.
    Auto,
    Naive,
    KItems,
    KBidders,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Distribution JSON.
    #[arg(long)]
    pub input: PathBuf,
    /// Incentive slack ε of the program / audit.
    #[arg(long, default_value = "0")]
    pub epsilon: String,
    #[arg(long, value_enum, default_value = "bic")]
    pub mode: ModeArg,
    /// Cap on enumerated profiles for naive programs.
    #[arg(long, default_value_t = 4096)]
    pub max_support: u128,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the (succinct) LP, audit the result and write the artifacts.
    Solve {
        #[command(flatten)]
        common: Common,
        /// Round values down to this grid before solving.
        #[arg(long)]
        delta: Option<String>,
        #[arg(long, value_enum, default_value = "auto")]
        formulation: FormulationArg,
        #[arg(long, value_enum, default_value = "interim")]
        ir: IrArg,
        /// Also write the program in LP text format.
        #[arg(long)]
        emit_lp: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the ε-BIC → BIC reduction on a solved mechanism.
    Reduce {
        #[command(flatten)]
        common: Common,
        /// Mechanism dump for the surrogate distribution.
        #[arg(long)]
        mechanism: PathBuf,
        /// Surrogate distribution; defaults to the input rounded down to `--delta`.
        #[arg(long)]
        surrogates: Option<PathBuf>,
        /// Rebate fraction (defaults to ε).
        #[arg(long)]
        eta: Option<String>,
        /// Grid step (defaults to ε²).
        #[arg(long)]
        delta: Option<String>,
        /// Replica/surrogate count instead of the formula.
        #[arg(long)]
        scale_r: Option<usize>,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        /// Phase outcomes to write as JSON lines.
        #[arg(long, default_value_t = 20)]
        traces: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Audit a mechanism dump; nonzero exit status on any violation.
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        mechanism: PathBuf,
    },
    /// Draw profiles and concrete bundles from a mechanism.
    Sample {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        mechanism: PathBuf,
        #[arg(long, default_value_t = 100)]
        draws: usize,
        #[arg(long, value_enum, default_value = "interim")]
        ir: IrArg,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Tail plan and truncated distribution for MHR marginals.
    MhrPlan {
        /// Marginals JSON.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        epsilon: f64,
        /// Grid step in units of Ξ (defaults to ε², snapped to 1/⌈1/ε²⌉).
        #[arg(long)]
        delta: Option<String>,
        /// Posted-price Monte-Carlo trials (needs `--seed`).
        #[arg(long, default_value_t = 0)]
        trials: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare the naive and succinct optima exactly.
    OracleCompare {
        #[command(flatten)]
        common: Common,
    },
}

/// Marginals input for `mhr-plan`: one marginal per bidder (k-bidders) or
/// per item (k-items).
#[derive(Debug, serde::Deserialize)]
pub struct MhrInput {
    pub setting: String,
    pub m: usize,
    pub n: usize,
    pub marginals: Vec<MarginalEntry>,
    #[serde(default)]
    pub demands: Option<Vec<Value>>,
}

#[derive(Debug, serde::Deserialize)]
#[serde(untagged)]
pub enum MarginalEntry {
    Table { table: PathBuf },
    Family(ContinuousMarginal),
}

fn read(path: &Path) -> anyhow::Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write(dir: &Path, name: &str, contents: &str) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let p = dir.join(name);
    std::fs::write(&p, contents).with_context(|| format!("writing {}", p.display()))
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json value serializes");
    s.push('\n');
    s
}

fn load_model(path: &Path) -> anyhow::Result<Model> {
    Ok(DistributionSpec::load(&read(path)?)?)
}

fn parse_q(s: &str, what: &str) -> anyhow::Result<Q> {
    rational::parse(s).with_context(|| format!("parsing {what} '{s}'"))
}

fn check_unit_interval(x: &Q, what: &str) -> anyhow::Result<()> {
    if *x <= rational::zero() || *x >= rational::one() {
        bail!("{what} = {} must lie in (0,1)", rational::format(x));
    }
    Ok(())
}

fn build(model: &Model, epsilon: &Q, mode: Mode, formulation: FormulationArg, cap: u128) -> anyhow::Result<LpBuild> {
    let (d, c) = (&model.dist, &model.cons);
    Ok(match (formulation, model.setting) {
        (FormulationArg::Naive, _) => build_naive_capped(d, c, epsilon, mode, cap)?,
        (FormulationArg::KItems, _) | (FormulationArg::Auto, SettingKind::KItems { .. }) => build_succinct_k_items(d, c, epsilon, mode)?,
        (FormulationArg::KBidders, _) | (FormulationArg::Auto, SettingKind::KBidders { .. }) => build_succinct_k_bidders(d, c, epsilon, mode)?,
    })
}

fn audit(mech: &dyn Rule, model: &Model, epsilon: &Q, mode: AuditMode) -> anyhow::Result<AuditReport> {
    let mut rep = match mode {
        AuditMode::Bic => check_bic(mech, &model.dist, epsilon)?,
        AuditMode::Ic => check_ic(mech, &model.dist, epsilon)?,
    };
    // the item-symmetry audit applies only where items are interchangeable
    if model.dist.require_factors()?.iter().all(|f| f.is_item_symmetric()) && rep.monotonicity_violations.is_empty() {
        rep.monotonicity_violations = check_strong_monotonicity(mech, &model.dist, mode).unwrap_or_default();
    }
    Ok(rep)
}

/// A stored mechanism as a rule on the input's grid: when it was solved on
/// a coarser grid, reports are first rounded down to that grid.
fn load_rule(path: &Path, model: &Model) -> anyhow::Result<(Mechanism, Box<dyn Rule>)> {
    let mech = Mechanism::load(&read(path)?)?;
    let rule: Box<dyn Rule> = if mech.delta > model.dist.delta {
        eprintln!("rounding reports down to the mechanism grid {}", rational::format(&mech.delta));
        Box::new(reduction::lift(mech.clone(), mech.delta.clone()))
    } else {
        Box::new(mech.clone())
    };
    Ok((mech, rule))
}

fn audit_passes(rep: &AuditReport) -> bool {
    rep.incentive_ok() && rep.ir_ok() && rep.monotonicity_violations.is_empty()
}

fn audit_json(rep: &AuditReport) -> Value {
    let mut v = serde_json::to_value(rep).expect("report serializes");
    v["passed"] = json!(audit_passes(rep));
    v
}

/// Runs the CLI; returns the process exit status.
pub fn run(cli: Cli) -> anyhow::Result<u8> {
    match cli.command {
        Command::Solve { common, delta, formulation, ir, emit_lp, out } => solve(common, delta, formulation, ir, emit_lp, &out),
        Command::Reduce { common, mechanism, surrogates, eta, delta, scale_r, trials, traces, seed, out } => {
            reduce(common, &mechanism, surrogates.as_deref(), eta, delta, scale_r, trials, traces, seed, &out)
        }
        Command::Verify { common, mechanism } => verify(common, &mechanism),
        Command::Sample { common, mechanism, draws, ir, seed, out } => sample(common, &mechanism, draws, ir, seed, &out),
        Command::MhrPlan { input, epsilon, delta, trials, seed, out } => mhr_plan(&input, epsilon, delta, trials, seed, &out),
        Command::OracleCompare { common } => oracle_compare(common),
    }
}

fn solve(common: Common, delta: Option<String>, formulation: FormulationArg, ir: IrArg, emit_lp: bool, out: &Path) -> anyhow::Result<u8> {
    let original = load_model(&common.input)?;
    let epsilon = parse_q(&common.epsilon, "ε")?;
    let mode: AuditMode = common.mode.into();
    let model = match &delta {
        Some(s) => {
            let d = parse_q(s, "δ")?;
            let coarse = original.dist.discretize(&d, Direction::Down);
            validate(coarse, original.cons.clone(), original.setting)
                .map_err(|e| anyhow::anyhow!("rounded distribution is invalid: {}", e.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")))?
        }
        None => original.clone(),
    };
    let started = std::time::Instant::now();
    let b = build(&model, &epsilon, mode, formulation, common.max_support)?;
    let (sol, mech) = solve_to_mechanism(&b)?;
    eprintln!("solved {} LP ({} vars, {} rows) in {:.2?}", b.formulation.name(), b.lp.num_vars(), b.lp.num_rows(), started.elapsed());
    mech.check_feasible(&model.cons)?;
    let rep = audit(&mech, &model, &epsilon, mode)?;
    let optimum = sol.objective.clone().expect("optimal program has an objective");
    let t = model.cons.t_total(model.n());
    let mut summary = json!({
        "setting": model.setting.name(),
        "formulation": b.formulation.name(),
        "mode": format!("{mode:?}").to_lowercase(),
        "epsilon": rational::format(&epsilon),
        "delta": rational::format(&model.dist.delta),
        "revenue": rational::format(&optimum),
        "revenue_f64": rational::to_f64(&optimum),
        "t": t,
        "representatives": b.reps.len(),
        "lp_size": b.lp.num_vars() + b.lp.num_rows(),
        "size_report": b.size_report(),
        "size_within_bounds": b.size_report().within_bounds(),
        "aux_cross_checked": b.aux.cross_checked,
        "aux_diagnostics": b.aux.diagnostics,
    });
    // the naive oracle on the original distribution when it is small enough
    if original.dist.support_size() <= common.max_support && formulation != FormulationArg::Naive {
        let naive = build_naive_capped(&original.dist, &original.cons, &epsilon, mode, common.max_support)?;
        let (nsol, _) = solve_to_mechanism(&naive)?;
        let opt = nsol.objective.expect("optimal");
        summary["naive_revenue_original"] = json!(rational::format(&opt));
        if delta.is_some() {
            // rounding down loses at most δ per awarded item
            let slack = &opt - Q::from_integer(t.into()) * &model.dist.delta;
            summary["discretization_bound_holds"] = json!(optimum >= slack);
        } else {
            summary["naive_matches"] = json!(optimum == opt);
        }
    }
    let mut passed = audit_passes(&rep);
    if ir == IrArg::Expost {
        let rule = ex_post_ir_transform(&mech, &model.dist)?;
        let coeffs: Vec<Value> = rule
            .coeffs
            .iter()
            .map(|m| Value::Object(m.iter().map(|(v, c)| (v.iter().map(rational::format).collect::<Vec<_>>().join(" "), json!(rational::format(c)))).collect()))
            .collect();
        write(out, "expost.json", &pretty(&json!({ "coefficients": coeffs })))?;
    }
    if let Some(flag) = summary.get("naive_matches").and_then(Value::as_bool) {
        passed &= flag;
    }
    if let Some(flag) = summary.get("discretization_bound_holds").and_then(Value::as_bool) {
        passed &= flag;
    }
    summary["passed"] = json!(passed);
    write(out, "mechanism.csv", &mech.dump())?;
    write(out, "audit.json", &pretty(&audit_json(&rep)))?;
    write(out, "summary.json", &pretty(&summary))?;
    if emit_lp {
        write(out, "program.lp", &b.lp.to_lp_format())?;
    }
    println!("{} revenue {} ({:.6}); audit {}", b.formulation.name(), rational::format(&optimum), rational::to_f64(&optimum), if passed { "passed" } else { "FAILED" });
    Ok(if passed { 0 } else { EXIT_AUDIT_FAILED })
}

#[allow(clippy::too_many_arguments)]
fn reduce(
    common: Common,
    mechanism: &Path,
    surrogates: Option<&Path>,
    eta: Option<String>,
    delta: Option<String>,
    scale_r: Option<usize>,
    trials: usize,
    traces: usize,
    seed: u64,
    out: &Path,
) -> anyhow::Result<u8> {
    let model = load_model(&common.input)?;
    let epsilon = parse_q(&common.epsilon, "ε")?;
    let eta = match eta {
        Some(s) => parse_q(&s, "η")?,
        None => epsilon.clone(),
    };
    let delta = match delta {
        Some(s) => parse_q(&s, "δ")?,
        None => &epsilon * &epsilon,
    };
    check_unit_interval(&eta, "η")?;
    check_unit_interval(&delta, "δ")?;
    if !(rational::one() / &delta).is_integer() {
        bail!("1/δ must be an integer");
    }
    let d_prime = match surrogates {
        Some(p) => load_model(p)?.dist,
        None => model.dist.discretize(&delta, Direction::Down),
    };
    let mech = Mechanism::load(&read(mechanism)?)?;
    let config = ReductionConfig::new(eta, delta, model.setting, scale_r)?;
    let red = Reduction::new(&mech, &model.dist, &d_prime, config, model.setting)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sampler = Sampler::new(&model.dist);
    let mut lines = String::new();
    for k in 0..traces {
        let v = sampler.sample(&mut rng);
        let o = red.run(&v, &mut rng)?;
        let line = json!({
            "trace": k,
            "reported": profile_to_string(&v),
            "surrogates": profile_to_string(&o.surrogates),
            "matched": o.auctions.iter().map(|a| a.matched).collect::<Vec<_>>(),
            "vcg_prices": o.auctions.iter().map(|a| rational::format(&a.vcg_price)).collect::<Vec<_>>(),
            "allocation": o.allocation.iter().map(|r| r.iter().map(rational::format).collect::<Vec<_>>()).collect::<Vec<_>>(),
            "payments": o.payments.iter().map(rational::format).collect::<Vec<_>>(),
        });
        let _ = writeln!(lines, "{line}");
    }
    let t = model.cons.t_total(model.n());
    let report = reduction::revenue_bound_check(&red, &model.dist, &epsilon, t, trials, &mut rng)?;
    let mut v = serde_json::to_value(&report)?;
    v["r"] = json!(red.r());
    v["r_formula"] = json!(red.config.r_formula);
    write(out, "traces.jsonl", &lines)?;
    write(out, "bound.json", &pretty(&v))?;
    println!(
        "M2 revenue {:.6} ± {:.6} vs bound {:.6}: {}",
        report.revenue.mean,
        report.revenue.std_err,
        report.bound,
        if report.holds { "holds" } else { "VIOLATED" }
    );
    Ok(if report.holds { 0 } else { EXIT_AUDIT_FAILED })
}

fn verify(common: Common, mechanism: &Path) -> anyhow::Result<u8> {
    let model = load_model(&common.input)?;
    let epsilon = parse_q(&common.epsilon, "ε")?;
    let (mech, rule) = load_rule(mechanism, &model)?;
    let feasible = mech.check_feasible(&model.cons);
    let rep = audit(rule.as_ref(), &model, &epsilon, common.mode.into())?;
    let mut v = audit_json(&rep);
    if let Err(e) = &feasible {
        v["feasibility_error"] = json!(e.to_string());
        v["passed"] = json!(false);
    }
    print!("{}", pretty(&v));
    Ok(if feasible.is_ok() && audit_passes(&rep) { 0 } else { EXIT_AUDIT_FAILED })
}

fn sample(common: Common, mechanism: &Path, draws: usize, ir: IrArg, seed: u64, out: &Path) -> anyhow::Result<u8> {
    let model = load_model(&common.input)?;
    let (_, rule) = load_rule(mechanism, &model)?;
    let expost = match ir {
        IrArg::Expost => Some(ex_post_ir_transform(rule.as_ref(), &model.dist)?),
        IrArg::Interim => None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sampler = Sampler::new(&model.dist);
    let mut csv = String::from("draw,profile,bidder,items,payment\n");
    for k in 0..draws {
        let v = sampler.sample(&mut rng);
        let o = rule.outcome(&v)?;
        let lottery = Lottery::new(&o.phi, &model.cons.demands)?;
        let bundles = lottery.sample(&mut rng);
        for (i, b) in bundles.iter().enumerate() {
            let pay = match &expost {
                Some(rule) => rule.charge(i, &v[i], b),
                None => o.price[i].clone(),
            };
            let items = b.iter().map(|j| j.to_string()).collect::<Vec<_>>().join(" ");
            let _ = writeln!(csv, "{k},{},{i},{items},{}", profile_to_string(&v), rational::format(&pay));
        }
    }
    write(out, "samples.csv", &csv)?;
    Ok(0)
}

fn mhr_plan(input: &Path, epsilon: f64, delta: Option<String>, trials: usize, seed: Option<u64>, out: &Path) -> anyhow::Result<u8> {
    let spec: MhrInput = serde_json::from_str(&read(input)?).context("parsing marginals")?;
    let setting = SettingKind::for_dims(&spec.setting, spec.m, spec.n)?;
    let base = input.parent().unwrap_or(Path::new("."));
    let marginals = spec
        .marginals
        .iter()
        .map(|e| match e {
            MarginalEntry::Table { table } => Ok(ContinuousMarginal::from_table_text(&read(&base.join(table))?)?),
            MarginalEntry::Family(f) => Ok(f.clone()),
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let expected = match setting {
        SettingKind::KBidders { .. } => spec.m,
        SettingKind::KItems { .. } => spec.n,
    };
    if marginals.len() != expected && marginals.len() != 1 {
        bail!("expected {expected} marginals (or one shared), got {}", marginals.len());
    }
    let plan = mhr::plan(&marginals, epsilon, setting)?;
    let delta = match delta {
        Some(s) => parse_q(&s, "δ")?,
        None => Q::new(1.into(), ((1.0 / (epsilon * epsilon)).ceil() as i64).into()),
    };
    let truncated = marginals.iter().map(|f| mhr::truncate_and_discretize(f, plan.xi, &delta)).collect::<crate::Result<Vec<_>>>()?;
    // distribution spec usable by `solve` (values in units of Ξ)
    let pairs = |t: &mhr::TruncatedMarginal| t.masses.iter().map(|(v, p)| (rational::format(v), rational::format(p))).collect::<Vec<_>>();
    let factors: Vec<Value> = match setting {
        SettingKind::KBidders { .. } => (0..spec.m)
            .map(|i| json!({ "iid_items": spec.n, "values": pairs(&truncated[i.min(truncated.len() - 1)]) }))
            .collect(),
        SettingKind::KItems { .. } => {
            let items: Vec<_> = (0..spec.n).map(|j| pairs(&truncated[j.min(truncated.len() - 1)])).collect();
            vec![json!({ "items": items, "copies": spec.m })]
        }
    };
    let mut dist = json!({ "setting": spec.setting, "delta": rational::format(&delta), "factors": factors });
    if let Some(d) = &spec.demands {
        dist["demands"] = json!(d);
    }
    let mut report = json!({
        "plan": plan,
        "delta": rational::format(&delta),
        "scale": truncated.iter().map(|t| rational::format(&t.scale)).collect::<Vec<_>>(),
        "residuals": truncated.iter().map(|t| t.residual).collect::<Vec<_>>(),
    });
    if trials > 0 {
        let Some(seed) = seed else { bail!("--seed is required with --trials") };
        let cons = match &spec.demands {
            Some(_) => DistributionSpec::from_json(&dist.to_string())?.build()?.1,
            None => Constraints::unconstrained(spec.m),
        };
        let grid: Vec<Vec<ContinuousMarginal>> = (0..spec.m)
            .map(|i| {
                (0..spec.n)
                    .map(|j| {
                        let k = match setting {
                            SettingKind::KBidders { .. } => i,
                            SettingKind::KItems { .. } => j,
                        };
                        marginals[k.min(marginals.len() - 1)].clone()
                    })
                    .collect()
            })
            .collect();
        let est = mhr::posted_price_lower_bound(&grid, plan.xi_prime, &cons, trials, &mut ChaCha8Rng::seed_from_u64(seed))?;
        report["posted_price"] = json!(est);
    }
    write(out, "plan.json", &pretty(&report))?;
    write(out, "distribution.json", &pretty(&dist))?;
    println!("ζ = {}, Ξ = {:.6}, Ξ′ = {:.6}", plan.zeta, plan.xi, plan.xi_prime);
    Ok(0)
}

fn oracle_compare(common: Common) -> anyhow::Result<u8> {
    let model = load_model(&common.input)?;
    let epsilon = parse_q(&common.epsilon, "ε")?;
    let mode: AuditMode = common.mode.into();
    let naive = solve_to_mechanism(&build_naive_capped(&model.dist, &model.cons, &epsilon, mode, common.max_support)?)?.0;
    let succinct_b = build(&model, &epsilon, mode, FormulationArg::Auto, common.max_support)?;
    let succinct = solve_to_mechanism(&succinct_b)?.0;
    let (a, b) = (naive.objective.expect("optimal"), succinct.objective.expect("optimal"));
    let same = a == b;
    print!(
        "{}",
        pretty(&json!({
            "naive": rational::format(&a),
            "succinct": rational::format(&b),
            "formulation": succinct_b.formulation.name(),
            "equal": same,
        }))
    );
    Ok(if same { 0 } else { EXIT_AUDIT_FAILED })
}

/// Parses `std::env::args` and runs.
pub fn main_with_args<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}
