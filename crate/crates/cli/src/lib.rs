//! `metadr` command-line front end.
//!
//! Exit codes: 0 success, 1 verification failure, 2 usage or validation
//! error, 3 runtime invariant violation.

pub mod report;
pub mod verify;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand, ValueEnum};

use metadr::evalmodel::{
    rto_breakdown, round_to, sensitivity, table2, tco, DomainError, RtoParams, SweepParam, TcoParams,
};
use metadr::simnet::{paper_soak_scenario, run_scenario, soak, FaultClass, Metrics, Scenario, SimError};
use metadr::sync::{Framework, FrameworkSelection};

use report::{num, render_all, Format, ReportDocument};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_VIOLATION: i32 = 3;

pub const PARTITION_CONVERGE: &str = include_str!("../scenarios/partition-converge.toml");
pub const CONDITION3_FAILOVER: &str = include_str!("../scenarios/condition3-failover.toml");

pub const DEFAULT_SOAK_SEED: u64 = 7;

#[derive(Debug, Parser)]
#[command(name = "metadr", version, about = "Recovery-time evaluator, DR simulator and verification suites")]
pub struct Cli {
    /// Output format.
    #[arg(long, value_enum, default_value_t = Format::Text, global = true)]
    pub format: Format,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Closed-form RTO breakdown for one parameter set.
    Rto(RtoArgs),
    /// Scaling table with direct and linear-scaling values side by side.
    Table2(Table2Args),
    /// Compute and storage cost comparison.
    Tco(TcoArgs),
    /// Improvement factor as one parameter sweeps.
    Sensitivity(SensitivityArgs),
    /// Run a scenario file (or a bundled scenario by name).
    Simulate(SimulateArgs),
    /// Run the long-horizon soak and print its event, drift and resource tables.
    Soak(SoakArgs),
    /// Run property suites.
    Verify(VerifyArgs),
}

/// All values are raw bytes, bytes per second or counts.
#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
pub struct RtoArgs {
    /// D: bytes on the recovering node.
    #[arg(short = 'D', long)]
    pub data: f64,
    /// δ: bytes that differ.
    #[arg(short = 'd', long)]
    pub delta: f64,
    /// H: hash throughput per core.
    #[arg(short = 'H', long = "hash-throughput")]
    pub hash_throughput: f64,
    /// C: hashing cores.
    #[arg(short = 'C', long)]
    pub cores: f64,
    /// B: link bandwidth.
    #[arg(short = 'B', long)]
    pub bandwidth: f64,
    /// S: bytes per index entry.
    #[arg(short = 'S', long = "entry-bytes")]
    pub entry_bytes: f64,
    /// N: blocks.
    #[arg(short = 'N', long)]
    pub blocks: f64,
}

impl RtoArgs {
    fn params(&self) -> RtoParams {
        RtoParams {
            data_bytes: self.data,
            delta_bytes: self.delta,
            hash_throughput: self.hash_throughput,
            cores: self.cores,
            bandwidth: self.bandwidth,
            entry_bytes: self.entry_bytes,
            blocks: self.blocks,
        }
    }
}

/// Base parameters; each defaults to the 100 TB reference configuration.
#[derive(Debug, Args)]
pub struct BaseArgs {
    #[arg(short = 'D', long)]
    pub data: Option<f64>,
    #[arg(short = 'd', long)]
    pub delta: Option<f64>,
    #[arg(short = 'H', long = "hash-throughput")]
    pub hash_throughput: Option<f64>,
    #[arg(short = 'C', long)]
    pub cores: Option<f64>,
    #[arg(short = 'B', long)]
    pub bandwidth: Option<f64>,
    #[arg(short = 'S', long = "entry-bytes")]
    pub entry_bytes: Option<f64>,
    #[arg(short = 'N', long)]
    pub blocks: Option<f64>,
}

impl BaseArgs {
    fn params(&self) -> RtoParams {
        let r = RtoParams::REFERENCE;
        RtoParams {
            data_bytes: self.data.unwrap_or(r.data_bytes),
            delta_bytes: self.delta.unwrap_or(r.delta_bytes),
            hash_throughput: self.hash_throughput.unwrap_or(r.hash_throughput),
            cores: self.cores.unwrap_or(r.cores),
            bandwidth: self.bandwidth.unwrap_or(r.bandwidth),
            entry_bytes: self.entry_bytes.unwrap_or(r.entry_bytes),
            blocks: self.blocks.unwrap_or(r.blocks),
        }
    }
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
pub struct Table2Args {
    /// Multipliers applied to D and N.
    #[arg(long, value_delimiter = ',', default_values_t = [0.1, 1.0, 5.0, 10.0])]
    pub scales: Vec<f64>,
    #[command(flatten)]
    pub base: BaseArgs,
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
pub struct TcoArgs {
    #[arg(long, default_value_t = TcoParams::default().events_per_week)]
    pub events_per_week: f64,
    #[arg(long, default_value_t = TcoParams::default().hash_engaged_cores)]
    pub hash_cores: f64,
    #[arg(long, default_value_t = TcoParams::default().meta_engaged_cores)]
    pub meta_cores: f64,
    #[arg(long, default_value_t = TcoParams::default().hash_rto_seconds)]
    pub hash_rto: f64,
    #[arg(long, default_value_t = TcoParams::default().meta_rto_seconds)]
    pub meta_rto: f64,
    #[arg(long, default_value_t = TcoParams::default().price_per_core_hour)]
    pub core_hour_price: f64,
    #[arg(long, default_value_t = TcoParams::default().weeks_per_year)]
    pub weeks: f64,
    /// Primary capacity in bytes (1 GB = 1e9 bytes).
    #[arg(long, default_value_t = TcoParams::default().capacity_bytes)]
    pub capacity_bytes: f64,
    #[arg(long, default_value_t = TcoParams::default().dedup_rate)]
    pub dedup_rate: f64,
    #[arg(long, default_value_t = TcoParams::default().price_per_gb_month)]
    pub gb_month_price: f64,
}

impl TcoArgs {
    fn params(&self) -> TcoParams {
        TcoParams {
            events_per_week: self.events_per_week,
            hash_engaged_cores: self.hash_cores,
            meta_engaged_cores: self.meta_cores,
            hash_rto_seconds: self.hash_rto,
            meta_rto_seconds: self.meta_rto,
            price_per_core_hour: self.core_hour_price,
            weeks_per_year: self.weeks,
            capacity_bytes: self.capacity_bytes,
            dedup_rate: self.dedup_rate,
            price_per_gb_month: self.gb_month_price,
        }
    }
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
pub struct SensitivityArgs {
    /// `PARAM=v1,v2,...` with PARAM one of delta, C, B, D, H, N.
    #[arg(long)]
    pub sweep: String,
    #[command(flatten)]
    pub base: BaseArgs,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scenario TOML file, or a bundled name: partition-converge, condition3-failover.
    pub scenario: String,
    /// Overrides the scenario's seed.
    #[arg(long, env = "METADR_SEED")]
    pub seed: Option<u64>,
    /// Several seeds: `a..b`, `a..=b` or a comma list. Rows carry a seed column.
    #[arg(long, conflicts_with = "seed")]
    pub seeds: Option<String>,
    /// Worker threads for multi-seed runs; output order is by seed regardless.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Also write each table to DIR/<table>.<format>.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    PaperSoak,
}

#[derive(Debug, Args)]
pub struct SoakArgs {
    #[arg(long, value_enum, conflicts_with = "config")]
    pub preset: Option<Preset>,
    /// Soak scenario file; must run both frameworks in shadow mode.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, env = "METADR_SEED")]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SuiteArg {
    Identity,
    Sync,
    Baseline,
    All,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, value_enum, default_value_t = SuiteArg::All)]
    pub suite: SuiteArg,
    #[arg(long, env = "METADR_SEED", default_value_t = 1)]
    pub seed: u64,
    /// Plant one known defect per suite; the run must then fail.
    #[arg(long, hide = true)]
    pub inject_bug: bool,
}

/// Command failure carrying its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self { code: EXIT_USAGE, message: message.into() }
    }
}

impl From<DomainError> for Failure {
    fn from(e: DomainError) -> Self {
        Failure::usage(e.to_string())
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        let code = if matches!(e, SimError::Validation(_)) { EXIT_USAGE } else { EXIT_VIOLATION };
        Failure { code, message: e.to_string() }
    }
}

/// What a command printed and the exit code it asks for.
pub struct Output {
    pub docs: Vec<ReportDocument>,
    pub code: i32,
    pub out_dir: Option<PathBuf>,
}

impl Output {
    fn ok(docs: Vec<ReportDocument>) -> Self {
        Self { docs, code: EXIT_OK, out_dir: None }
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { stderr.write_all(text.as_bytes()) } else { stdout.write_all(text.as_bytes()) };
            return code;
        }
    };
    match execute(&cli) {
        Ok(out) => {
            let text = render_all(&out.docs, cli.format);
            if let Some(dir) = &out.out_dir {
                if let Err(e) = write_files(dir, &out.docs, cli.format) {
                    let _ = writeln!(stderr, "error: {e}");
                    return EXIT_USAGE;
                }
            }
            let _ = stdout.write_all(text.as_bytes());
            out.code
        }
        Err(f) => {
            let _ = writeln!(stderr, "error: {}", f.message);
            f.code
        }
    }
}

fn slug(title: &str) -> String {
    let s: String = title.chars().map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '-' }).collect();
    s.split('-').filter(|p| !p.is_empty()).collect::<Vec<_>>().join("-")
}

fn write_files(dir: &Path, docs: &[ReportDocument], format: Format) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    let ext = match format {
        Format::Csv => "csv",
        Format::Md => "md",
        Format::Text => "txt",
    };
    for d in docs {
        std::fs::write(dir.join(format!("{}.{ext}", slug(&d.title))), d.render(format))?;
    }
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<Output, Failure> {
    match &cli.command {
        Command::Rto(a) => cmd_rto(&a.params()).map(Output::ok),
        Command::Table2(a) => cmd_table2(&a.base.params(), &a.scales).map(Output::ok),
        Command::Tco(a) => cmd_tco(&a.params()).map(Output::ok),
        Command::Sensitivity(a) => cmd_sensitivity(&a.base.params(), &a.sweep),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Soak(a) => cmd_soak(a),
        Command::Verify(a) => Ok(cmd_verify(a)),
    }
}

fn hours(s: f64) -> String {
    format!("{} hr", num(s / 3600.0, 2))
}

fn minutes(s: f64) -> String {
    format!("{} min", num(s / 60.0, 1))
}

pub fn cmd_rto(p: &RtoParams) -> Result<Vec<ReportDocument>, Failure> {
    let b = rto_breakdown(p)?;
    let reference = *p == RtoParams::REFERENCE;
    let mut d = ReportDocument::new("RTO breakdown", &["quantity", "value", "unit", "as time", "published"]);
    // (quantity, value, decimals, unit, as time, published, note)
    type Row<'a> = (&'a str, f64, usize, &'a str, String, &'a str, &'a str);
    let rows: [Row; 6] = [
        ("t_hash", b.t_hash, 1, "s", hours(b.t_hash), "13,750", ""),
        ("t_index", b.t_index, 1, "s", minutes(b.t_index), "25.6", ""),
        ("t_delta", b.t_delta, 1, "s", minutes(b.t_delta), "800", ""),
        ("rto_hash", b.rto_hash, 1, "s", hours(b.rto_hash), "14,576", "published value is rounded to whole seconds"),
        ("rto_meta", b.rto_meta, 1, "s", minutes(b.rto_meta), "826", "published value is rounded to whole seconds"),
        ("improvement_factor", b.improvement_factor, 2, "x", String::new(), "17.6", "published factor is truncated, not rounded"),
    ];
    for (name, v, dec, unit, human, published, note) in rows {
        let (pubv, note) = if reference { (published.to_string(), Some(note.to_string())) } else { (String::new(), None) };
        d.push_annotated(vec![name.into(), num(v, dec), unit.into(), human, pubv], note);
    }
    Ok(vec![d])
}

pub fn cmd_table2(base: &RtoParams, scales: &[f64]) -> Result<Vec<ReportDocument>, Failure> {
    let rows = table2(base, scales)?;
    let mut d = ReportDocument::new(
        "Scaling table",
        &[
            "storage",
            "scale",
            "hash direct (hr)",
            "meta direct (min)",
            "factor direct",
            "hash linear (hr)",
            "meta linear (min)",
            "factor linear",
            "hash published (hr)",
            "meta published (min)",
            "factor published",
        ],
    );
    for r in rows {
        let p = r.published;
        let opt = |f: Option<f64>| f.map_or_else(String::new, |v| v.to_string());
        d.push_annotated(
            vec![
                r.label.clone(),
                r.scale.to_string(),
                num(r.direct.rto_hash / 3600.0, 2),
                num(r.direct.rto_meta / 60.0, 1),
                num(r.direct.improvement_factor, 2),
                num(r.linear.rto_hash / 3600.0, 2),
                num(r.linear.rto_meta / 60.0, 1),
                num(r.linear.improvement_factor, 2),
                opt(p.map(|p| p.rto_hash_hours)),
                opt(p.map(|p| p.rto_meta_minutes)),
                opt(p.map(|p| p.factor)),
            ],
            (!r.annotations.is_empty()).then(|| r.annotations.join("; ")),
        );
    }
    Ok(vec![d])
}

pub fn cmd_tco(t: &TcoParams) -> Result<Vec<ReportDocument>, Failure> {
    let r = tco(t)?;
    let reference = *t == TcoParams::default();
    let mut d = ReportDocument::new("Cost comparison", &["metric", "hash", "meta", "saving", "published"]);
    let engaged = format!(
        "engaged cores: hash {} for the whole RTO, meta {} ({}% of {})",
        num(t.hash_engaged_cores, 0),
        num(t.meta_engaged_cores, 2),
        num(t.meta_engaged_cores / t.hash_engaged_cores * 100.0, 1),
        num(t.hash_engaged_cores, 0)
    );
    let p = |s: &str| if reference { s.to_string() } else { String::new() };
    d.push_annotated(
        vec![
            "core-hours per event".into(),
            num(r.hash_core_hours_per_event, 1),
            num(r.meta_core_hours_per_event, 1),
            num(r.hash_core_hours_per_event - r.meta_core_hours_per_event, 1),
            p("161.7 / 0.3"),
        ],
        Some(engaged),
    );
    d.push_annotated(
        vec!["core-hours per week".into(), String::new(), String::new(), num(r.weekly_core_hours_saved, 1), p("2,748")],
        reference.then(|| "published weekly figure counts hash core-hours only, without the meta cost".to_string()),
    );
    d.push(vec![
        "compute saving per year".into(),
        String::new(),
        String::new(),
        format!("${}", num(r.annual_compute_saving, 0)),
        p("$6,864"),
    ]);
    d.push_annotated(
        vec![
            "storage saving per year".into(),
            String::new(),
            String::new(),
            format!("${}", num(r.annual_storage_saving, 0)),
            p("$55,200"),
        ],
        Some(format!("{} GB decimal at {}% dedup", num(t.capacity_bytes / 1e9, 0), num(t.dedup_rate * 100.0, 1))),
    );
    Ok(vec![d])
}

fn parse_sweep(spec: &str) -> Result<(SweepParam, Vec<f64>), Failure> {
    let (name, values) = spec.split_once('=').ok_or_else(|| Failure::usage(format!("sweep '{spec}' is not PARAM=v1,v2,...")))?;
    let param = SweepParam::parse(name.trim()).ok_or_else(|| Failure::usage(format!("unknown sweep parameter '{name}'")))?;
    let values = values
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|_| Failure::usage(format!("sweep value '{v}' is not a number"))))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((param, values))
}

pub fn cmd_sensitivity(base: &RtoParams, spec: &str) -> Result<Output, Failure> {
    let (param, values) = parse_sweep(spec)?;
    let curve = sensitivity(base, param, &values)?;
    let mut d = ReportDocument::new(
        format!("Sensitivity to {}", param.name()),
        &[param.name(), "t_hash (s)", "rto_hash (s)", "rto_meta (s)", "factor"],
    );
    for pt in &curve.points {
        let b = pt.breakdown;
        let note = curve
            .published_factor(base, pt.value)
            .map(|f| format!("published ~{f}x; direct formula gives {}x", num(b.improvement_factor, 2)));
        d.push_annotated(
            vec![pt.value.to_string(), num(b.t_hash, 2), num(b.rto_hash, 1), num(b.rto_meta, 1), num(b.improvement_factor, 2)],
            note,
        );
    }
    let mut docs = vec![d];
    let mut code = EXIT_OK;
    if matches!(param, SweepParam::Delta | SweepParam::Cores) {
        let ok = curve.strictly_decreasing();
        let mut c = ReportDocument::new("Checks", &["property", "holds"]);
        c.push(vec![format!("factor strictly decreasing in {}", param.name()), if ok { "yes" } else { "no" }.into()]);
        docs.push(c);
        if !ok {
            code = EXIT_VIOLATION;
        }
    }
    Ok(Output { docs, code, out_dir: None })
}

/// A file path, or the name of a bundled scenario (with or without a
/// directory prefix or extension).
pub fn load_scenario(arg: &str) -> Result<Scenario, Failure> {
    let path = Path::new(arg);
    let text = if path.is_file() {
        std::fs::read_to_string(path).map_err(|e| Failure::usage(format!("{arg}: {e}")))?
    } else {
        match path.file_stem().and_then(|s| s.to_str()) {
            Some("partition-converge") => PARTITION_CONVERGE.to_string(),
            Some("condition3-failover") => CONDITION3_FAILOVER.to_string(),
            _ => return Err(Failure::usage(format!("{arg}: no such file or bundled scenario"))),
        }
    };
    Ok(Scenario::from_toml(&text)?)
}

pub fn parse_seeds(spec: &str) -> Result<Vec<u64>, Failure> {
    let bad = || Failure::usage(format!("bad seed list '{spec}'"));
    let int = |s: &str| s.trim().parse::<u64>().map_err(|_| bad());
    let seeds = if let Some((a, b)) = spec.split_once("..=") {
        (int(a)?..=int(b)?).collect()
    } else if let Some((a, b)) = spec.split_once("..") {
        (int(a)?..int(b)?).collect()
    } else {
        spec.split(',').map(int).collect::<Result<Vec<_>, _>>()?
    };
    if Vec::is_empty(&seeds) {
        return Err(bad());
    }
    Ok(seeds)
}

/// Runs `sc` once per seed on up to `jobs` threads; results come back in
/// seed order.
pub fn run_seeds(sc: &Scenario, seeds: &[u64], jobs: usize) -> Vec<Result<Metrics, SimError>> {
    let slots: Vec<Mutex<Option<Result<Metrics, SimError>>>> = seeds.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..jobs.clamp(1, seeds.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= seeds.len() {
                    break;
                }
                let mut one = sc.clone();
                one.seed = seeds[i];
                *slots[i].lock().expect("slot lock") = Some(run_scenario(&one));
            });
        }
    });
    slots.into_iter().map(|m| m.into_inner().expect("slot lock").expect("every seed ran")).collect()
}

fn fmt_opt(x: Option<f64>, dec: usize) -> String {
    x.map_or_else(String::new, |v| num(v, dec))
}

pub fn metrics_documents(runs: &[Metrics]) -> Vec<ReportDocument> {
    let mut events = ReportDocument::new(
        "DR events",
        &[
            "seed", "seq", "time (s)", "class", "phase", "node", "substitute", "meta rto (s)", "meta t_hash (s)",
            "hash rto (s)", "hash t_hash (s)", "factor", "verified", "plans agree",
        ],
    );
    let mut conv = ReportDocument::new(
        "Convergence",
        &["seed", "time (s)", "group", "members", "rounds", "blocks", "repeat blocks", "equal union"],
    );
    let mut samples = ReportDocument::new(
        "Samples",
        &["seed", "time (s)", "index entries", "logical bytes", "physical bytes", "ingests", "lcv violations", "immutability violations"],
    );
    let mut summary = ReportDocument::new(
        "Summary",
        &[
            "seed", "scenario", "ingests", "replicated", "expired", "dropped writes", "dns dials", "lcv violations",
            "immutability violations", "corruption", "duplicate ids",
        ],
    );
    for m in runs {
        let mut all: Vec<(&str, &metadr::simnet::DrEventRecord)> =
            m.failovers.iter().map(|e| ("failover", e)).chain(m.failbacks.iter().map(|e| ("failback", e))).collect();
        all.sort_by_key(|a| a.1.seq);
        for (phase, e) in all {
            let rto = |f| e.report(f).map(|r| r.virtual_rto_seconds);
            let th = |f| e.report(f).map(|r| r.phases.t_hash);
            events.push(vec![
                m.seed.to_string(),
                e.seq.to_string(),
                num(e.time_seconds, 1),
                class_name(e.class).into(),
                phase.into(),
                e.node.to_string(),
                e.substitute.to_string(),
                fmt_opt(rto(Framework::Meta), 3),
                fmt_opt(th(Framework::Meta), 3),
                fmt_opt(rto(Framework::Hash), 3),
                fmt_opt(th(Framework::Hash), 3),
                fmt_opt(e.factor(), 2),
                e.verified.to_string(),
                e.plans_agree.map_or_else(String::new, |b| b.to_string()),
            ]);
        }
        for c in &m.convergences {
            conv.push(vec![
                m.seed.to_string(),
                num(c.time_seconds, 1),
                c.group.to_string(),
                c.members.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" "),
                c.rounds.to_string(),
                c.blocks_transferred.to_string(),
                c.repeat_blocks.to_string(),
                c.equal_union.to_string(),
            ]);
        }
        for s in &m.samples {
            samples.push(vec![
                m.seed.to_string(),
                num(s.time_seconds, 1),
                s.index_entries.to_string(),
                num(s.logical_index_bytes, 0),
                num(s.physical_index_bytes, 0),
                s.ingests.to_string(),
                s.lcv_violations.to_string(),
                s.immutability_violations.to_string(),
            ]);
        }
        let v = m.violations;
        summary.push(vec![
            m.seed.to_string(),
            m.scenario.clone(),
            m.ingests.to_string(),
            m.replicated.to_string(),
            m.expired.to_string(),
            m.dropped_writes.to_string(),
            m.dns_dials.to_string(),
            v.lcv.to_string(),
            v.immutability.to_string(),
            v.corruption.to_string(),
            v.duplicate_ids.to_string(),
        ]);
    }
    vec![events, conv, samples, summary]
}

fn class_name(c: FaultClass) -> &'static str {
    c.as_str()
}

pub fn cmd_simulate(a: &SimulateArgs) -> Result<Output, Failure> {
    let sc = load_scenario(&a.scenario)?;
    let seeds = match (&a.seeds, a.seed) {
        (Some(spec), _) => parse_seeds(spec)?,
        (None, Some(s)) => vec![s],
        (None, None) => vec![sc.seed],
    };
    if a.jobs == 0 {
        return Err(Failure::usage("--jobs must be at least 1"));
    }
    let runs = run_seeds(&sc, &seeds, a.jobs).into_iter().collect::<Result<Vec<_>, _>>()?;
    let violated = runs.iter().any(|m| m.violations.total() > 0);
    Ok(Output {
        docs: metrics_documents(&runs),
        code: if violated { EXIT_VIOLATION } else { EXIT_OK },
        out_dir: a.out.clone(),
    })
}

pub fn cmd_soak(a: &SoakArgs) -> Result<Output, Failure> {
    let mut sc = match &a.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
            Scenario::from_toml(&text)?
        }
        None => paper_soak_scenario(DEFAULT_SOAK_SEED),
    };
    if let Some(seed) = a.seed {
        sc.seed = seed;
    }
    if sc.framework != FrameworkSelection::BothShadow {
        return Err(Failure::usage("a soak needs framework = \"both-shadow\""));
    }
    let r = soak(&sc)?;

    let mut events = ReportDocument::new(
        "Per-event RTO",
        &["event", "day", "class", "meta rto (s)", "hash rto (s)", "factor", "meta WAL replay (s)", "jitter"],
    );
    for e in &r.events {
        events.push(vec![
            e.event.to_string(),
            e.day.to_string(),
            class_name(e.class).into(),
            num(e.meta_rto, 1),
            num(e.hash_rto, 1),
            format!("{}x", num(e.factor, 2)),
            num(e.meta_wal_replay, 1),
            format!("{:.4}", e.jitter),
        ]);
    }
    let mut drift = ReportDocument::new(
        "Index drift",
        &[
            "day", "index entries", "theoretical (B)", "physical (B)", "drift (%)", "growth (B/day)", "lcv violations",
            "immutability violations", "WAL bytes per id",
        ],
    );
    for d in &r.drift {
        drift.push(vec![
            d.day.to_string(),
            num(d.index_entries, 0),
            num(d.theoretical_bytes, 0),
            num(d.physical_bytes, 0),
            num(d.drift_pct, 2),
            num(d.growth_bytes_per_day, 0),
            d.lcv_violations.to_string(),
            d.immutability_violations.to_string(),
            num(d.wal_bytes_per_id, 3),
        ]);
    }
    let mut resources = ReportDocument::new("Resource use", &["metric", "unit", "meta", "hash"]);
    for row in &r.resources {
        let dec = if row.unit == "%" || row.unit == "s" { 1 } else { 0 };
        resources.push(vec![row.metric.into(), row.unit.into(), fmt_opt(row.meta, dec), fmt_opt(row.hash, dec)]);
    }
    let s = &r.summary;
    let mut summary = ReportDocument::new(
        "Soak summary",
        &[
            "events", "planned", "crash", "mean meta (s)", "CV meta (%)", "mean hash (s)", "CV hash (%)", "factor range",
            "crash elevation (s)", "crash minus planned, raw (s)", "violations",
        ],
    );
    summary.push(vec![
        s.events.to_string(),
        s.planned.to_string(),
        s.crash.to_string(),
        num(s.mean_meta, 1),
        num(s.cv_meta * 100.0, 2),
        num(s.mean_hash, 1),
        num(s.cv_hash * 100.0, 2),
        format!("{}x-{}x", num(s.factor_min, 2), num(s.factor_max, 2)),
        format!("{}-{}", num(s.crash_elevation_min, 1), num(s.crash_elevation_max, 1)),
        num(s.crash_minus_planned, 1),
        s.violations.to_string(),
    ]);
    Ok(Output {
        docs: vec![events, drift, resources, summary],
        code: if s.violations > 0 { EXIT_VIOLATION } else { EXIT_OK },
        out_dir: a.out.clone(),
    })
}

pub fn cmd_verify(a: &VerifyArgs) -> Output {
    let suite = match a.suite {
        SuiteArg::Identity => verify::Suite::Identity,
        SuiteArg::Sync => verify::Suite::Sync,
        SuiteArg::Baseline => verify::Suite::Baseline,
        SuiteArg::All => verify::Suite::All,
    };
    let checks = verify::run(suite, verify::Options { seed: a.seed, inject_bug: a.inject_bug });
    let mut d = ReportDocument::new("Verification", &["result", "suite", "property", "detail"]);
    for c in &checks {
        d.push(vec![if c.passed { "PASS" } else { "FAIL" }.into(), c.suite.into(), c.name.into(), c.detail.clone()]);
    }
    let failed = checks.iter().any(|c| !c.passed);
    Output { docs: vec![d], code: if failed { EXIT_VERIFY } else { EXIT_OK }, out_dir: None }
}

/// Rounded presentation used by tests and docs: hours to two decimals.
pub fn rounded_hours(seconds: f64) -> f64 {
    round_to(seconds / 3600.0, 2)
}
