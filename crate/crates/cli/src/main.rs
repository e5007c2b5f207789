//! `beamsched` command-line front end.

mod config;
mod presets;

use std::fmt;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use anyhow::{bail, Context};
use beamsched::io::{
    gen_beam_list, gen_motion_trace, parse_declarations, read_beam_list, read_trace, write_beam_list,
    write_declarations, write_trace, AxisParams, ChangeEvent, EventKind, MotionTrace, TraceSpec,
};
use beamsched::motion::{simulate, MotionModel1D};
use beamsched::omc::{OmcError, OmcPipeline};
use beamsched::service::protocol::{ProtocolError, Request, Response};
use beamsched::service::{serve, BeamService};
use beamsched::smc::{check_invariant, InvariantQuery};
use beamsched::treatment::{
    compare, run_omc, run_static, summarize, write_log_csv, write_reps_csv, write_summary_csv, CompareConfig,
    InProcessClient, TcpClient, TransitionModel, TreatmentLog, TreatmentPlan, VerificationClient,
};
use clap::{Args, Parser, Subcommand, ValueEnum};

use config::{CompareOpts, OmcOpts, Overlay, RunConfig, ServiceOpts, SessionOpts, SmcOpts};

#[derive(Parser)]
#[command(name = "beamsched", version, about = "Online model checking for motion-aware beam scheduling")]
struct Cli {
    /// TOML file supplying defaults for any flag.
    #[arg(long, global = true, env = "OMC_BEAMSCHED_CONFIG")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Fit per-slot models to a trace and write them as declarations.
    Fit(FitArgs),
    /// Sample one trajectory of a model.
    Simulate(SimulateArgs),
    /// Probability that a model stays within bounds over a scope.
    Check(CheckArgs),
    /// Run the beam verification service.
    Serve(ServeArgs),
    /// Simulate one treatment session.
    Treat(TreatArgs),
    /// Static against OMC scheduling over repeated beam lists.
    Compare(CompareArgs),
    /// Generate a synthetic motion trace.
    GenTrace(GenTraceArgs),
    /// Draw a beam list from a template's distribution.
    GenBeams(GenBeamsArgs),
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    omc: OmcOpts,
    #[command(flatten)]
    smc: SmcOpts,
}

#[derive(Args)]
struct SimulateArgs {
    /// Declaration file of the model.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = 3000.0)]
    horizon_ms: f64,
    /// Overrides the accuracy declared in the model file.
    #[arg(long)]
    accuracy: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output CSV; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CheckArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, allow_hyphen_values = true)]
    lower: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    upper: Option<f64>,
    /// Symmetric bound: shorthand for `--lower -B --upper B`.
    #[arg(long, conflicts_with_all = ["lower", "upper"])]
    bound: Option<f64>,
    #[arg(long, default_value_t = 3000.0)]
    scope_ms: f64,
    #[arg(long)]
    accuracy: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    smc: SmcOpts,
}

#[derive(Args)]
struct ServeArgs {
    /// Sensor feed replayed by the service.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Address to listen on; port 0 picks a free port.
    #[arg(long)]
    addr: Option<String>,
    /// Exit after this many client sessions.
    #[arg(long)]
    sessions: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    omc: OmcOpts,
    #[command(flatten)]
    smc: SmcOpts,
    #[command(flatten)]
    service: ServiceOpts,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Static,
    Omc,
}

#[derive(Args)]
struct TreatArgs {
    #[arg(value_enum)]
    mode: Mode,
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    beams: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Address of a running service; verified in-process when absent.
    #[arg(long)]
    connect: Option<String>,
    /// Pace slot requests to wall-clock time.
    #[arg(long)]
    realtime: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    session: SessionOpts,
    #[command(flatten)]
    omc: OmcOpts,
    #[command(flatten)]
    smc: SmcOpts,
    #[command(flatten)]
    service: ServiceOpts,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Template beam list the repetitions are drawn from.
    #[arg(long)]
    beams: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    compare: CompareOpts,
    #[command(flatten)]
    session: SessionOpts,
    #[command(flatten)]
    omc: OmcOpts,
    #[command(flatten)]
    smc: SmcOpts,
    #[command(flatten)]
    service: ServiceOpts,
}

#[derive(Args)]
struct GenTraceArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 600_000.0)]
    duration_ms: f64,
    #[arg(long, default_value_t = 38.0)]
    interval_ms: f64,
    /// 1 or 3; ignored when models are given.
    #[arg(long, default_value_t = 3)]
    axes: usize,
    /// Declaration file per axis (one or three).
    #[arg(long)]
    model: Vec<PathBuf>,
    /// Gaussian measurement noise in mm.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Baseline shift `AT_MS:SHIFT_MM[:FADE_MS]` on every axis.
    #[arg(long)]
    step: Vec<String>,
    /// Excursion `AT_MS:FADE_MS:HOLD_MS:SHIFT_MM`: ramp out, hold, ramp back.
    #[arg(long)]
    episode: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct GenBeamsArgs {
    #[arg(long)]
    template: PathBuf,
    #[arg(long, default_value_t = 100)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

/// Failures with their own exit codes.
#[derive(Debug)]
enum Failure {
    Missing(PathBuf),
    PortInUse(String),
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Missing(p) => write!(f, "file not found: {}", p.display()),
            Self::PortInUse(a) => write!(f, "address already in use: {a}"),
        }
    }
}

impl std::error::Error for Failure {}

pub(crate) fn read_file(path: &Path) -> anyhow::Result<String> {
    fs::read_to_string(path).map_err(|e| {
        if e.kind() == io::ErrorKind::NotFound {
            anyhow::Error::new(Failure::Missing(path.to_path_buf()))
        } else {
            anyhow::Error::new(e).context(format!("reading {}", path.display()))
        }
    })
}

fn open(path: &Path) -> anyhow::Result<File> {
    File::open(path).map_err(|e| {
        if e.kind() == io::ErrorKind::NotFound {
            anyhow::Error::new(Failure::Missing(path.to_path_buf()))
        } else {
            anyhow::Error::new(e).context(format!("opening {}", path.display()))
        }
    })
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn out_dir(eff: &RunConfig) -> anyhow::Result<PathBuf> {
    let dir = eff.out.clone().context("--out is required")?;
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    eff.write_to(&dir)?;
    Ok(dir)
}

fn load_trace(path: Option<&PathBuf>) -> anyhow::Result<MotionTrace> {
    let path = path.context("--trace is required")?;
    read_trace(open(path)?).with_context(|| format!("reading trace {}", path.display()))
}

fn load_model(path: Option<&PathBuf>) -> anyhow::Result<MotionModel1D<f64>> {
    let path = path.context("--model is required")?;
    parse_declarations(&read_file(path)?).with_context(|| format!("parsing {}", path.display()))
}

/// Flags over the config file over defaults.
fn effective(file: &Option<PathBuf>, flags: RunConfig, deadline_ms: u64) -> anyhow::Result<RunConfig> {
    let from_file = match file {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let mut defaults = RunConfig::defaults();
    defaults.service.deadline_ms = Some(deadline_ms);
    Ok(flags.overlay(from_file).overlay(defaults))
}

fn cmd_fit(file: &Option<PathBuf>, a: FitArgs) -> anyhow::Result<()> {
    let flags = RunConfig {
        seed: a.seed,
        trace: a.trace,
        out: a.out,
        omc: a.omc,
        smc: a.smc,
        ..RunConfig::default()
    };
    let eff = effective(file, flags, 0)?;
    let trace = load_trace(eff.trace.as_ref())?;
    let cfg = eff.omc()?;
    let dir = out_dir(&eff)?;
    let axes = trace.axes();
    let mut pipeline = OmcPipeline::new(Arc::new(trace), cfg)?;
    let mut table = create(&dir.join("slots.csv"))?;
    let names = ["x", "y", "z"];
    write!(table, "slot,created_at_ms,valid")?;
    for n in &names[..axes] {
        write!(table, ",tier_{n},p_{n}")?;
    }
    writeln!(table)?;
    let mut slot = 0;
    let mut fitted = 0;
    loop {
        let set = match pipeline.advance_to(slot) {
            Ok(s) => s,
            Err(OmcError::FeedExhausted { .. }) => break,
            Err(e) => return Err(e.into()),
        };
        write!(table, "{},{},{}", set.slot_index, set.created_at, u8::from(set.valid))?;
        for i in 0..axes {
            write!(table, ",{},{:?}", set.tiers[i], set.validity_probs[i])?;
        }
        writeln!(table)?;
        if set.models.iter().any(Option::is_some) {
            let sub = dir.join(format!("slot_{slot:05}"));
            fs::create_dir_all(&sub)?;
            for (i, m) in set.models.iter().enumerate() {
                if let Some(m) = m {
                    fs::write(sub.join(format!("{}.decl", names[i])), write_declarations(m)?)?;
                }
            }
            fitted += 1;
        }
        slot += 1;
    }
    table.flush()?;
    println!("{slot} slots, {fitted} with models, written to {}", dir.display());
    Ok(())
}

fn cmd_simulate(a: SimulateArgs) -> anyhow::Result<()> {
    let mut m = load_model(a.model.as_ref())?;
    if let Some(acc) = a.accuracy {
        m = m.with_accuracy(acc)?;
    }
    let traj = simulate(&m, &m.perturbation(), a.horizon_ms, a.seed.unwrap_or(0));
    let mut out: Box<dyn Write> = match &a.out {
        Some(p) => Box::new(create(p)?),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    };
    writeln!(out, "t_ms,x_mm")?;
    for (_, t, x) in traj.iter() {
        writeln!(out, "{t:?},{x:?}")?;
    }
    out.flush()?;
    Ok(())
}

fn cmd_check(file: &Option<PathBuf>, a: CheckArgs) -> anyhow::Result<()> {
    let flags = RunConfig {
        seed: a.seed,
        model: a.model,
        smc: a.smc,
        ..RunConfig::default()
    };
    let eff = effective(file, flags, 0)?;
    let mut m = load_model(eff.model.as_ref())?;
    if let Some(acc) = a.accuracy {
        m = m.with_accuracy(acc)?;
    }
    let (lower, upper) = match (a.bound, a.lower, a.upper) {
        (Some(b), _, _) => (-b, b),
        (None, Some(lo), Some(hi)) => (lo, hi),
        _ => bail!("give --bound or both --lower and --upper"),
    };
    let q = InvariantQuery::new(a.scope_ms, lower, upper)?;
    let e = check_invariant(&m, &m.perturbation(), &q, &eff.smc()?, eff.seed());
    println!("{:?}", e.p_hat);
    eprintln!("runs {}", e.runs_used);
    Ok(())
}

fn cmd_serve(file: &Option<PathBuf>, a: ServeArgs) -> anyhow::Result<()> {
    let flags = RunConfig {
        seed: a.seed,
        trace: a.trace,
        addr: a.addr,
        omc: a.omc,
        smc: a.smc,
        service: a.service,
        ..RunConfig::default()
    };
    let eff = effective(file, flags, 3000)?;
    let trace = load_trace(eff.trace.as_ref())?;
    let service = BeamService::new(OmcPipeline::new(Arc::new(trace), eff.omc()?)?, eff.verify()?);
    let addr = eff.addr.clone().unwrap_or_default();
    let listener = TcpListener::bind(&addr).map_err(|e| {
        if e.kind() == io::ErrorKind::AddrInUse {
            anyhow::Error::new(Failure::PortInUse(addr.clone()))
        } else {
            anyhow::Error::new(e).context(format!("binding {addr}"))
        }
    })?;
    println!("listening on {}", listener.local_addr()?);
    io::stdout().flush()?;
    serve(listener, &service, a.sessions)?;
    Ok(())
}

/// Holds each slot's request back until its wall-clock time.
struct Paced {
    inner: Box<dyn VerificationClient>,
    origin: Instant,
    first_slot: Option<u64>,
    interval: Duration,
}

impl VerificationClient for Paced {
    fn verify(&mut self, req: &Request) -> Result<Response, ProtocolError> {
        let first = *self.first_slot.get_or_insert(req.slot_hint);
        let due = self.origin + self.interval * (req.slot_hint - first) as u32;
        if let Some(wait) = due.checked_duration_since(Instant::now()) {
            thread::sleep(wait);
        }
        self.inner.verify(req)
    }
}

fn plan_from(eff: &RunConfig) -> anyhow::Result<TreatmentPlan> {
    let path = eff.beams.as_ref().context("--beams is required")?;
    let list = read_beam_list(open(path)?).with_context(|| format!("reading beams {}", path.display()))?;
    let transition = eff.session.transition_ms.unwrap_or(beamsched::treatment::DEFAULT_TRANSITION_MS);
    let plan = TreatmentPlan::new(list.beams).with_transitions(TransitionModel::Constant(transition));
    plan.validate()?;
    Ok(plan)
}

fn write_session(dir: &Path, log: &TreatmentLog) -> anyhow::Result<()> {
    let mut out = create(&dir.join("log.csv"))?;
    write_log_csv(log, &mut out)?;
    out.flush()?;
    let text = summarize(log);
    fs::write(dir.join("summary.txt"), &text)?;
    print!("{text}");
    Ok(())
}

fn cmd_treat(file: &Option<PathBuf>, a: TreatArgs) -> anyhow::Result<()> {
    let flags = RunConfig {
        seed: a.seed,
        trace: a.trace,
        beams: a.beams,
        out: a.out,
        addr: a.connect.clone(),
        omc: a.omc,
        smc: a.smc,
        service: a.service,
        session: a.session,
        ..RunConfig::default()
    };
    let eff = effective(file, flags, 0)?;
    let trace = Arc::new(load_trace(eff.trace.as_ref())?);
    let plan = plan_from(&eff)?;
    let session = eff.session()?;
    let dir = out_dir(&eff)?;
    let log = match a.mode {
        Mode::Static => run_static(&plan, &trace, &session)?,
        Mode::Omc => {
            let mut client: Box<dyn VerificationClient> = match &a.connect {
                Some(addr) => Box::new(TcpClient::connect(addr.as_str()).with_context(|| format!("connecting to {addr}"))?),
                None => Box::new(InProcessClient {
                    service: BeamService::new(OmcPipeline::new(trace.clone(), eff.omc()?)?, eff.verify()?),
                }),
            };
            if a.realtime {
                let mut paced = Paced {
                    inner: client,
                    origin: Instant::now(),
                    first_slot: None,
                    interval: Duration::from_millis(session.slot_interval_ms),
                };
                run_omc(&plan, &trace, &mut paced, &session)?
            } else {
                run_omc(&plan, &trace, client.as_mut(), &session)?
            }
        }
    };
    write_session(&dir, &log)?;
    if let Some(why) = &log.aborted {
        bail!("session aborted: {why}");
    }
    Ok(())
}

fn cmd_compare(file: &Option<PathBuf>, a: CompareArgs) -> anyhow::Result<()> {
    let flags = RunConfig {
        seed: a.seed,
        trace: a.trace,
        beams: a.beams,
        out: a.out,
        omc: a.omc,
        smc: a.smc,
        service: a.service,
        session: a.session,
        compare: a.compare,
        ..RunConfig::default()
    };
    let eff = effective(file, flags, 0)?;
    let trace = Arc::new(load_trace(eff.trace.as_ref())?);
    let path = eff.beams.as_ref().context("--beams is required")?;
    let template = read_beam_list(open(path)?).with_context(|| format!("reading beams {}", path.display()))?;
    let defaults = CompareConfig::default();
    let cfg = CompareConfig {
        repetitions: eff.compare.repetitions.unwrap_or(defaults.repetitions),
        beams: eff.compare.beam_count.unwrap_or(defaults.beams),
        seed: eff.seed(),
        session: eff.session()?,
        transition_ms: eff.session.transition_ms.unwrap_or(defaults.transition_ms),
    };
    let dir = out_dir(&eff)?;
    let mut client = InProcessClient {
        service: BeamService::new(OmcPipeline::new(trace.clone(), eff.omc()?)?, eff.verify()?),
    };
    let summary = compare(&template, &trace, &mut client, &cfg)?;
    let mut reps = create(&dir.join("reps.csv"))?;
    write_reps_csv(&summary, &mut reps)?;
    reps.flush()?;
    let mut table = Vec::new();
    write_summary_csv(&summary, &mut table)?;
    fs::write(dir.join("summary.csv"), &table)?;
    io::stdout().write_all(&table)?;
    Ok(())
}

fn parse_fields(text: &str, n: std::ops::RangeInclusive<usize>, what: &str) -> anyhow::Result<Vec<f64>> {
    let v: Vec<f64> = text
        .split(':')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .with_context(|| format!("bad {what} {text:?}"))?;
    if !n.contains(&v.len()) {
        bail!("bad {what} {text:?}: expected {:?} fields", n);
    }
    Ok(v)
}

fn cmd_gen_trace(a: GenTraceArgs) -> anyhow::Result<()> {
    let models: Vec<MotionModel1D<f64>> = if a.model.is_empty() {
        match a.axes {
            1 => {
                let mut x: MotionModel1D<f64> = parse_declarations(presets::X)?;
                x.base = 0.0;
                vec![x]
            }
            3 => [presets::X, presets::Y, presets::Z]
                .iter()
                .map(|t| parse_declarations(t))
                .collect::<Result<_, _>>()?,
            n => bail!("--axes must be 1 or 3, got {n}"),
        }
    } else {
        a.model.iter().map(|p| load_model(Some(p))).collect::<anyhow::Result<_>>()?
    };
    let axes = models
        .into_iter()
        .map(|m| AxisParams {
            model: m,
            noise_sigma: a.noise,
        })
        .collect();
    let mut spec = TraceSpec::new(axes, a.duration_ms);
    spec.interval_ms = a.interval_ms;
    for s in &a.step {
        let v = parse_fields(s, 2..=3, "--step")?;
        let fade = v.get(2).copied().unwrap_or(0.0);
        spec = spec.with_event(ChangeEvent::new(v[0], fade, EventKind::BaselineStep(v[1])));
    }
    if let Some(e) = &a.episode {
        let v = parse_fields(e, 4..=4, "--episode")?;
        let (at, fade, hold, shift) = (v[0], v[1], v[2], v[3]);
        spec = spec
            .with_event(ChangeEvent::new(at, fade, EventKind::BaselineStep(shift)))
            .with_event(ChangeEvent::new(at + fade + hold, fade, EventKind::BaselineStep(-shift)));
    }
    let trace = gen_motion_trace(&spec, a.seed)?;
    let mut out = create(&a.out)?;
    write_trace(&trace, &mut out)?;
    out.flush()?;
    Ok(())
}

fn cmd_gen_beams(a: GenBeamsArgs) -> anyhow::Result<()> {
    let template = read_beam_list(open(&a.template)?).with_context(|| format!("reading {}", a.template.display()))?;
    let list = gen_beam_list(&template, a.count, a.seed)?;
    let mut out = create(&a.out)?;
    write_beam_list(&list, &mut out)?;
    out.flush()?;
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let file = cli.config;
    match cli.cmd {
        Cmd::Fit(a) => cmd_fit(&file, a),
        Cmd::Simulate(a) => cmd_simulate(a),
        Cmd::Check(a) => cmd_check(&file, a),
        Cmd::Serve(a) => cmd_serve(&file, a),
        Cmd::Treat(a) => cmd_treat(&file, a),
        Cmd::Compare(a) => cmd_compare(&file, a),
        Cmd::GenTrace(a) => cmd_gen_trace(a),
        Cmd::GenBeams(a) => cmd_gen_beams(a),
    }
}

fn main() -> ExitCode {
    // clap exits with status 2 on usage errors
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = match e.downcast_ref::<Failure>() {
                Some(Failure::Missing(_)) => 3,
                Some(Failure::PortInUse(_)) => 4,
                None => 1,
            };
            ExitCode::from(code)
        }
    }
}
