//! Command-line front end. Every command prints a JSON document to stdout
//! that starts with a `meta` block (tool version, seed, resolved flags);
//! CSV outputs get a `<file>.meta.json` sidecar with the same block.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use crate::analysis::{self, format_number, Kernel, SamplerConfig};
use crate::apparatus::{self, Envelope, PipelineConfig};
use crate::concentrate::{self, PartialPolarizer, PolarizerMode};
use crate::error::{Error, Result};
use crate::states::{self, Bell, DensityMatrix, MemsParam, Measures, Subclass};
use crate::tomography::{self, MLSettings, Noise, ProjectorSet, SeedStrategy};

pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "mems", version, about = "Maximally entangled mixed states: creation, measures, concentration, tomography")]
pub struct Cli {
    /// Seed for every randomized step.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a state, print its measures, optionally save it as JSON.
    State(StateCmd),
    /// Simulate the creation bench for a MEMS target.
    Pipeline(PipelineCmd),
    /// Procrustean filtering of a saved state.
    Concentrate(ConcentrateCmd),
    /// Efficiency of every concentration scheme on one MEMS.
    Compare(CompareCmd),
    /// Simulated tomography.
    #[command(subcommand)]
    Tomo(TomoCmd),
    /// Sample a fidelity patch around a state.
    Patch(PatchCmd),
    /// MEMS and Werner curves on the S_L-T plane.
    Curves(CurvesCmd),
    /// Log-log exponents of fidelity, T and S_L against a shift in r.
    Sensitivity(SensitivityCmd),
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BellName {
    #[value(name = "phi+")]
    #[serde(rename = "phi+")]
    PhiPlus,
    #[value(name = "phi-")]
    #[serde(rename = "phi-")]
    PhiMinus,
    #[value(name = "psi+")]
    #[serde(rename = "psi+")]
    PsiPlus,
    #[value(name = "psi-")]
    #[serde(rename = "psi-")]
    PsiMinus,
}

impl From<BellName> for Bell {
    fn from(b: BellName) -> Bell {
        match b {
            BellName::PhiPlus => Bell::HhPlusVv,
            BellName::PhiMinus => Bell::HhMinusVv,
            BellName::PsiPlus => Bell::HvPlusVh,
            BellName::PsiMinus => Bell::HvMinusVh,
        }
    }
}

/// Where a command gets its input state from; exactly one source.
#[derive(Debug, Clone, Args, Serialize)]
#[group(required = true, multiple = false, id = "source")]
pub struct StateSource {
    /// MEMS with concurrence r (subclass from --subclass, else I for r >= 2/3).
    #[arg(long, value_name = "R")]
    pub mems: Option<f64>,
    /// Werner state p |phi+><phi+| + (1 - p) I/4.
    #[arg(long, value_name = "P")]
    pub werner: Option<f64>,
    /// A Bell state.
    #[arg(long, value_name = "NAME", num_args = 0..=1, default_missing_value = "phi+")]
    pub bell: Option<BellName>,
    /// cos(theta)|HH> + e^{i phi} sin(theta)|VV>.
    #[arg(long, num_args = 2, value_names = ["THETA", "PHI"], allow_negative_numbers = true)]
    pub pure: Option<Vec<f64>>,
    /// State JSON file (a bare state or any document with a `state` field).
    #[arg(long = "in", value_name = "FILE")]
    pub input: Option<PathBuf>,
}

fn parse_subclass(s: &str) -> std::result::Result<Subclass, String> {
    s.parse::<Subclass>().map_err(|e| e.to_string())
}

impl StateSource {
    fn resolve(&self, subclass: Option<Subclass>) -> Result<DensityMatrix> {
        if let Some(r) = self.mems {
            let sub = subclass.unwrap_or(Subclass::for_r(r));
            return Ok(states::mems(MemsParam::new(r, sub)?));
        }
        if let Some(p) = self.werner {
            return states::werner(p);
        }
        if let Some(b) = self.bell {
            return Ok(Bell::from(b).density());
        }
        if let Some(tp) = &self.pure {
            return Ok(states::nonmax_pure(tp[0], tp[1]).density());
        }
        if let Some(path) = &self.input {
            return read_state(path);
        }
        Err(Error::Config("no input state given".into()))
    }
}

/// Reads a state JSON file, or the `state` field of a larger document.
pub fn read_state(path: &Path) -> Result<DensityMatrix> {
    let doc: Value = serde_json::from_reader(BufReader::new(File::open(path)?))?;
    let inner = doc.get("state").cloned().unwrap_or(doc);
    Ok(serde_json::from_value(inner)?)
}

#[derive(Debug, Args, Serialize)]
pub struct StateCmd {
    #[command(flatten)]
    pub source: StateSource,
    /// MEMS subclass, I or II (default: I for r >= 2/3).
    #[arg(long, value_parser = parse_subclass)]
    pub subclass: Option<Subclass>,
    /// Write the state JSON here.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvelopeArg {
    Gaussian,
    Exponential,
}

#[derive(Debug, Args, Serialize)]
pub struct PipelineCmd {
    /// Concurrence of the target MEMS.
    #[arg(long, value_name = "R")]
    pub target_r: f64,
    /// MEMS subclass, I or II (default: I for r >= 2/3).
    #[arg(long, value_parser = parse_subclass)]
    pub subclass: Option<Subclass>,
    /// Coherence length, in wavelengths.
    #[arg(long, default_value_t = apparatus::DEFAULT_COHERENCE_LENGTH)]
    pub lc: f64,
    /// Decoherer path differences for arm 1 and arm 2 (derived from the target if omitted).
    #[arg(long, num_args = 2, value_names = ["D1", "D2"])]
    pub delays: Option<Vec<f64>>,
    /// Path difference of the decoherer that is not tuned.
    #[arg(long, default_value_t = apparatus::DEFAULT_DELAY)]
    pub base_delay: f64,
    /// Coherence envelope of the down-converted photons.
    #[arg(long, value_enum, default_value_t = EnvelopeArg::Gaussian)]
    pub envelope: EnvelopeArg,
    /// Write the outcome JSON (state, bench settings, fidelity) here.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeArg {
    Ideal,
    Measured,
}

impl From<ModeArg> for PolarizerMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Ideal => PolarizerMode::Ideal,
            ModeArg::Measured => PolarizerMode::Measured,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct ConcentrateCmd {
    /// Input state JSON.
    #[arg(long = "in", value_name = "FILE")]
    pub input: PathBuf,
    /// Glass pieces per arm.
    #[arg(long, default_value_t = 0)]
    pub pieces: u32,
    /// Partial polarizer transmissions.
    #[arg(long, value_enum, default_value_t = ModeArg::Ideal)]
    pub mode: ModeArg,
    /// Emit every piece count from 0 up to --pieces instead of only the last.
    #[arg(long)]
    pub trajectory: bool,
    /// Apply the 45-degree half-wave plate on arm 1 before filtering.
    #[arg(long)]
    pub rotate: bool,
    /// CSV with columns n,s_l,t,success_prob,fidelity.
    #[arg(long, value_name = "CSV")]
    pub out: Option<PathBuf>,
    /// Write the filtered state JSON here.
    #[arg(long, value_name = "FILE")]
    pub state_out: Option<PathBuf>,
    /// Write the rows together with every filtered state as JSON here.
    #[arg(long, value_name = "FILE")]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct CompareCmd {
    /// Concurrence of the input MEMS.
    #[arg(long, value_name = "R")]
    pub r: f64,
    /// MEMS subclass, I or II (default: I for r >= 2/3).
    #[arg(long, value_parser = parse_subclass)]
    pub subclass: Option<Subclass>,
    /// Comma-separated piece counts for the filtering rows.
    #[arg(long, value_delimiter = ',', default_value = "2,4,6")]
    pub pieces: Vec<u32>,
    /// Partial polarizer transmissions.
    #[arg(long, value_enum, default_value_t = ModeArg::Ideal)]
    pub mode: ModeArg,
    /// CSV with columns scheme,success_prob,ef_success,ef_per_pair.
    #[arg(long, value_name = "CSV")]
    pub out: Option<PathBuf>,
    /// Write the rows together with each scheme's output state as JSON here.
    #[arg(long, value_name = "FILE")]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
pub enum SettingsArg {
    #[value(name = "16")]
    #[serde(rename = "16")]
    Sixteen,
    #[value(name = "36")]
    #[serde(rename = "36")]
    ThirtySix,
}

impl SettingsArg {
    fn set(self) -> ProjectorSet {
        match self {
            SettingsArg::Sixteen => ProjectorSet::standard(),
            SettingsArg::ThirtySix => ProjectorSet::extended(),
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseArg {
    Poisson,
    None,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SeedArg {
    Linear,
    Mixed,
}

#[derive(Debug, Subcommand)]
pub enum TomoCmd {
    /// Coincidence counts for a state.
    Simulate(TomoSimulateCmd),
    /// Maximum-likelihood state from a counts CSV.
    Reconstruct(TomoReconstructCmd),
}

#[derive(Debug, Args, Serialize)]
pub struct TomoSimulateCmd {
    #[command(flatten)]
    pub source: StateSource,
    /// MEMS subclass, I or II (default: I for r >= 2/3).
    #[arg(long, value_parser = parse_subclass)]
    pub subclass: Option<Subclass>,
    /// Analyzer set: 16 = {H,V,D,R}^2, 36 = {H,V,D,A,R,L}^2.
    #[arg(long, value_enum, default_value_t = SettingsArg::ThirtySix)]
    pub settings: SettingsArg,
    /// Expected pairs per setting.
    #[arg(long, default_value_t = 1e4)]
    pub exposure: f64,
    /// Poisson-sample the counts or round their expectation.
    #[arg(long, value_enum, default_value_t = NoiseArg::Poisson)]
    pub noise: NoiseArg,
    /// Counts CSV with columns label,counts,exposure.
    #[arg(long, value_name = "CSV")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct TomoReconstructCmd {
    /// Counts CSV with columns label,counts,exposure.
    #[arg(long = "in", value_name = "CSV")]
    pub input: PathBuf,
    /// Analyzer set: 16 = {H,V,D,R}^2, 36 = {H,V,D,A,R,L}^2.
    #[arg(long, value_enum, default_value_t = SettingsArg::ThirtySix)]
    pub settings: SettingsArg,
    /// Iteration cap of the optimizer.
    #[arg(long, default_value_t = 5000)]
    pub max_iterations: usize,
    /// Stop when the per-pair NLL gradient norm falls below this.
    #[arg(long, default_value_t = 1e-8)]
    pub tolerance: f64,
    /// Starting point: clipped linear inversion or I/4.
    #[arg(long = "start", value_enum, default_value_t = SeedArg::Linear)]
    pub start: SeedArg,
    /// Report the fidelity with this state.
    #[arg(long, value_name = "FILE")]
    pub truth: Option<PathBuf>,
    /// Write the reconstructed state JSON with its optimizer metadata here.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelArg {
    Combined,
    Mix,
    Jitter,
}

#[derive(Debug, Args, Serialize)]
pub struct PatchCmd {
    #[command(flatten)]
    pub source: StateSource,
    /// MEMS subclass, I or II (default: I for r >= 2/3).
    #[arg(long, value_parser = parse_subclass)]
    pub subclass: Option<Subclass>,
    /// Number of samples.
    #[arg(long, default_value_t = 5000)]
    pub n: usize,
    /// Minimum fidelity with the target (1.0 is treated as 1 - 1e-12).
    #[arg(long, default_value_t = 0.99)]
    pub fmin: f64,
    /// Proposal kernel.
    #[arg(long, value_enum, default_value_t = KernelArg::Combined)]
    pub kernel: KernelArg,
    /// Largest Ginibre mixing weight (scaled with 1 - fmin if omitted).
    #[arg(long)]
    pub eps_max: Option<f64>,
    /// Largest local rotation in radians (scaled with sqrt(1 - fmin) if omitted).
    #[arg(long)]
    pub angle_max: Option<f64>,
    /// Worker threads; output does not depend on this.
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// CSV with columns s_l,t,f.
    #[arg(long, value_name = "CSV")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct CurvesCmd {
    /// Points per curve.
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    /// CSV with columns curve,s_l,t.
    #[arg(long, value_name = "CSV")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct SensitivityCmd {
    /// Base concurrence.
    #[arg(long, default_value_t = 0.8)]
    pub r0: f64,
    /// MEMS subclass, I or II (default: I for r >= 2/3).
    #[arg(long, value_parser = parse_subclass)]
    pub subclass: Option<Subclass>,
    /// Smallest offset in r.
    #[arg(long, default_value_t = 1e-4)]
    pub delta_min: f64,
    /// Largest offset in r.
    #[arg(long, default_value_t = 1e-2)]
    pub delta_max: f64,
    /// Number of log-spaced offsets.
    #[arg(long, default_value_t = 9)]
    pub points: usize,
    /// Write the exponents JSON here.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

/// Exit status for an error: 2 for rejected input, 3 for unreachable
/// targets, 1 otherwise.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Infeasible { .. } => EXIT_INFEASIBLE,
        Error::OutOfRange { .. }
        | Error::InvalidState(_)
        | Error::Config(_)
        | Error::InsufficientSettings(_)
        | Error::KernelTooWide { .. }
        | Error::OutputNotPsd { .. } => EXIT_INVALID,
        _ => EXIT_FAILURE,
    }
}

/// Parses `args` (including the program name) and runs the command,
/// writing the stdout document to `stdout`. Returns the exit status.
pub fn main_with_args<I, T>(args: I, stdout: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli, stdout) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn meta(cli: &Cli, name: &str, config: &impl Serialize) -> Result<Value> {
    Ok(json!({
        "tool": "mems",
        "version": env!("CARGO_PKG_VERSION"),
        "command": name,
        "seed": cli.seed,
        "config": serde_json::to_value(config)?,
    }))
}

fn emit(stdout: &mut dyn Write, doc: &Value) -> Result<()> {
    serde_json::to_writer_pretty(&mut *stdout, doc)?;
    writeln!(stdout)?;
    Ok(())
}

fn write_json(path: &Path, doc: &impl Serialize) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, doc)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

fn write_csv_with_meta(
    path: &Path,
    meta: &Value,
    write: impl FnOnce(&mut BufWriter<File>) -> Result<()>,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write(&mut w)?;
    w.flush()?;
    write_json(&sidecar_path(path), meta)
}

pub fn run(cli: &Cli, stdout: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::State(cmd) => run_state(cli, cmd, stdout),
        Command::Pipeline(cmd) => run_pipeline(cli, cmd, stdout),
        Command::Concentrate(cmd) => run_concentrate(cli, cmd, stdout),
        Command::Compare(cmd) => run_compare(cli, cmd, stdout),
        Command::Tomo(TomoCmd::Simulate(cmd)) => run_tomo_simulate(cli, cmd, stdout),
        Command::Tomo(TomoCmd::Reconstruct(cmd)) => run_tomo_reconstruct(cli, cmd, stdout),
        Command::Patch(cmd) => run_patch(cli, cmd, stdout),
        Command::Curves(cmd) => run_curves(cli, cmd, stdout),
        Command::Sensitivity(cmd) => run_sensitivity(cli, cmd, stdout),
    }
}

fn run_state(cli: &Cli, cmd: &StateCmd, stdout: &mut dyn Write) -> Result<()> {
    let rho = cmd.source.resolve(cmd.subclass)?;
    let measures = Measures::of(&rho)?;
    if let Some(path) = &cmd.out {
        write_json(path, &rho)?;
    }
    emit(
        stdout,
        &json!({
            "meta": meta(cli, "state", cmd)?,
            "measures": measures,
        }),
    )
}

fn run_pipeline(cli: &Cli, cmd: &PipelineCmd, stdout: &mut dyn Write) -> Result<()> {
    let sub = cmd.subclass.unwrap_or(Subclass::for_r(cmd.target_r));
    let param = MemsParam::new(cmd.target_r, sub)?;
    let cfg = PipelineConfig {
        coherence_length: cmd.lc,
        envelope: match cmd.envelope {
            EnvelopeArg::Gaussian => Envelope::Gaussian,
            EnvelopeArg::Exponential => Envelope::Exponential,
        },
        base_delay: cmd.base_delay,
        delays: cmd.delays.as_ref().map(|d| (d[0], d[1])),
    };
    let outcome = apparatus::mems_pipeline_with(param, &cfg)?;
    let meta = meta(cli, "pipeline", cmd)?;
    if let Some(path) = &cmd.out {
        write_json(path, &json!({ "meta": meta, "outcome": outcome, "state": outcome.state }))?;
    }
    emit(
        stdout,
        &json!({
            "meta": meta,
            "fidelity": outcome.fidelity,
            "theta1": outcome.theta1,
            "phi": outcome.phi,
            "waveplates": outcome.waveplates,
            "decoherer": outcome.decoherer,
            "measures": Measures::of(&outcome.state)?,
        }),
    )
}

fn run_concentrate(cli: &Cli, cmd: &ConcentrateCmd, stdout: &mut dyn Write) -> Result<()> {
    let mut rho = read_state(&cmd.input)?;
    if cmd.rotate {
        rho = concentrate::rotate_for_filtering(&rho);
    }
    let pol = PartialPolarizer::from_mode(cmd.mode.into());
    let mut rows = concentrate::trajectory(&rho, pol, cmd.pieces as usize)?;
    if rows.len() <= cmd.pieces as usize {
        return Err(Error::ZeroSurvival {
            probability: rows.last().map_or(0.0, |r| r.success_prob),
        });
    }
    if !cmd.trajectory {
        rows.drain(..rows.len() - 1);
    }
    let meta = meta(cli, "concentrate", cmd)?;
    if let Some(path) = &cmd.out {
        write_csv_with_meta(path, &meta, |w| {
            let mut wtr = csv::Writer::from_writer(w);
            wtr.write_record(["n", "s_l", "t", "success_prob", "fidelity"])?;
            for r in &rows {
                wtr.write_record([
                    r.n.to_string(),
                    format_number(r.s_l),
                    format_number(r.t),
                    format_number(r.success_prob),
                    format_number(r.fidelity),
                ])?;
            }
            wtr.flush()?;
            Ok(())
        })?;
    }
    if let Some(path) = &cmd.state_out {
        let out = concentrate::procrustean_filter(&rho, pol, cmd.pieces)?;
        write_json(path, &out.state)?;
    }
    if let Some(path) = &cmd.json {
        let mut full = Vec::with_capacity(rows.len());
        for r in &rows {
            let state = concentrate::procrustean_filter(&rho, pol, r.n)?.state;
            full.push(json!({ "point": r, "state": state }));
        }
        write_json(path, &json!({ "meta": meta, "rows": full }))?;
    }
    emit(stdout, &json!({ "meta": meta, "rows": rows }))
}

fn run_compare(cli: &Cli, cmd: &CompareCmd, stdout: &mut dyn Write) -> Result<()> {
    let sub = cmd.subclass.unwrap_or(Subclass::for_r(cmd.r));
    let rho = states::mems(MemsParam::new(cmd.r, sub)?);
    let rows = concentrate::scheme_table(&rho, PartialPolarizer::from_mode(cmd.mode.into()), &cmd.pieces)?;
    let meta = meta(cli, "compare", cmd)?;
    if let Some(path) = &cmd.out {
        write_csv_with_meta(path, &meta, |w| {
            let mut wtr = csv::Writer::from_writer(w);
            wtr.write_record(["scheme", "success_prob", "ef_success", "ef_per_pair"])?;
            for r in &rows {
                wtr.write_record([
                    r.scheme.label(),
                    format_number(r.success_prob),
                    format_number(r.ef_success),
                    format_number(r.ef_per_pair),
                ])?;
            }
            wtr.flush()?;
            Ok(())
        })?;
    }
    if let Some(path) = &cmd.json {
        let full: Vec<Value> = rows
            .iter()
            .map(|r| json!({ "scheme": r.scheme.label(), "report": r }))
            .collect();
        write_json(path, &json!({ "meta": meta, "rows": full }))?;
    }
    let rows: Vec<Value> = rows
        .iter()
        .map(|r| {
            json!({
                "scheme": r.scheme.label(),
                "success_prob": r.success_prob,
                "ef_success": r.ef_success,
                "ef_per_pair": r.ef_per_pair,
            })
        })
        .collect();
    emit(stdout, &json!({ "meta": meta, "rows": rows }))
}

fn run_tomo_simulate(cli: &Cli, cmd: &TomoSimulateCmd, stdout: &mut dyn Write) -> Result<()> {
    let rho = cmd.source.resolve(cmd.subclass)?;
    let noise = match cmd.noise {
        NoiseArg::Poisson => Noise::Poisson,
        NoiseArg::None => Noise::None,
    };
    let records = tomography::simulate_counts(&rho, &cmd.settings.set(), cmd.exposure, cli.seed, noise)?;
    let meta = meta(cli, "tomo simulate", cmd)?;
    write_csv_with_meta(&cmd.out, &meta, |w| tomography::write_counts_csv(w, &records))?;
    let total: u64 = records.iter().map(|r| r.counts).sum();
    emit(
        stdout,
        &json!({ "meta": meta, "settings": records.len(), "total_counts": total }),
    )
}

#[derive(Serialize)]
struct ReconstructionDoc<'a> {
    #[serde(flatten)]
    state: states::DensityMatrixJson,
    metadata: ReconstructionMeta<'a>,
}

#[derive(Serialize)]
struct ReconstructionMeta<'a> {
    iterations: usize,
    final_nll: f64,
    converged: bool,
    #[serde(flatten)]
    run: &'a Value,
}

fn run_tomo_reconstruct(cli: &Cli, cmd: &TomoReconstructCmd, stdout: &mut dyn Write) -> Result<()> {
    let records = tomography::read_counts_csv(BufReader::new(File::open(&cmd.input)?))?;
    let settings = MLSettings {
        max_iterations: cmd.max_iterations,
        gradient_tolerance: cmd.tolerance,
        seed_strategy: match cmd.start {
            SeedArg::Linear => SeedStrategy::LinearInversion,
            SeedArg::Mixed => SeedStrategy::MaximallyMixed,
        },
    };
    let out = tomography::ml_reconstruct(&records, &cmd.settings.set(), &settings)?;
    let fidelity = match &cmd.truth {
        Some(path) => Some(states::fidelity(&read_state(path)?, &out.state)?),
        None => None,
    };
    let meta = meta(cli, "tomo reconstruct", cmd)?;
    if let Some(path) = &cmd.out {
        write_json(
            path,
            &ReconstructionDoc {
                state: out.state.to_json(),
                metadata: ReconstructionMeta {
                    iterations: out.iterations,
                    final_nll: out.final_nll,
                    converged: out.converged,
                    run: &meta,
                },
            },
        )?;
    }
    emit(
        stdout,
        &json!({
            "meta": meta,
            "iterations": out.iterations,
            "final_nll": out.final_nll,
            "converged": out.converged,
            "fidelity_with_truth": fidelity,
            "measures": Measures::of(&out.state)?,
        }),
    )
}

fn run_patch(cli: &Cli, cmd: &PatchCmd, stdout: &mut dyn Write) -> Result<()> {
    let target = cmd.source.resolve(cmd.subclass)?;
    let scaled = SamplerConfig::scaled_for(cmd.fmin);
    let (eps0, angle0) = match scaled.kernel {
        Kernel::Combined { eps_max, angle_max } => (eps_max, angle_max),
        _ => unreachable!("scaled_for builds a combined kernel"),
    };
    let eps_max = cmd.eps_max.unwrap_or(eps0);
    let angle_max = cmd.angle_max.unwrap_or(angle0);
    let cfg = SamplerConfig {
        n_samples: cmd.n,
        f_min: cmd.fmin,
        kernel: match cmd.kernel {
            KernelArg::Combined => Kernel::Combined { eps_max, angle_max },
            KernelArg::Mix => Kernel::MixGinibre { eps_max },
            KernelArg::Jitter => Kernel::LocalUnitaryJitter { angle_max },
        },
        rng_seed: cli.seed,
    };
    let patch = analysis::sample_patch_parallel(&target, &cfg, cmd.workers)?;
    let (sl_spread, t_spread) = patch.spread();
    let meta = meta(cli, "patch", cmd)?;
    let telemetry = json!({
        "kernel": cfg.kernel,
        "effective_f_min": cfg.effective_f_min(),
        "attempts": patch.attempts,
        "acceptance_rate": patch.acceptance_rate,
        "target": Measures::of(&target)?,
    });
    if let Some(path) = &cmd.out {
        let sidecar = json!({ "meta": meta, "sampler": telemetry });
        write_csv_with_meta(path, &sidecar, |w| analysis::write_patch_csv(w, &patch.samples))?;
    }
    emit(
        stdout,
        &json!({
            "meta": meta,
            "sampler": telemetry,
            "samples": patch.samples.len(),
            "spread": { "s_l": sl_spread, "t": t_spread },
        }),
    )
}

fn run_curves(cli: &Cli, cmd: &CurvesCmd, stdout: &mut dyn Write) -> Result<()> {
    let points = analysis::boundary_curves(cmd.n)?;
    let meta = meta(cli, "curves", cmd)?;
    if let Some(path) = &cmd.out {
        write_csv_with_meta(path, &meta, |w| analysis::write_curves_csv(w, &points))?;
    }
    emit(stdout, &json!({ "meta": meta, "points": points.len() }))
}

fn run_sensitivity(cli: &Cli, cmd: &SensitivityCmd, stdout: &mut dyn Write) -> Result<()> {
    if cmd.points < 2 {
        return Err(Error::Config("--points must be at least 2".into()));
    }
    let sub = cmd.subclass.unwrap_or(Subclass::for_r(cmd.r0));
    let deltas = analysis::log_deltas(cmd.delta_min, cmd.delta_max, cmd.points);
    let exps = analysis::sensitivity_exponents(cmd.r0, &deltas, sub)?;
    let meta = meta(cli, "sensitivity", cmd)?;
    let doc = json!({
        "meta": meta,
        "fid_exponent": exps.fid_exponent,
        "t_exponent": exps.t_exponent,
        "sl_exponent": exps.sl_exponent,
    });
    if let Some(path) = &cmd.out {
        write_json(path, &doc)?;
    }
    emit(stdout, &doc)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_args(args: &[&str]) -> (i32, Value) {
        let mut out = Vec::new();
        let mut full = vec!["mems"];
        full.extend_from_slice(args);
        let code = main_with_args(full, &mut out);
        let doc = serde_json::from_slice(&out).unwrap_or(Value::Null);
        (code, doc)
    }

    #[test]
    fn state_measures() {
        let (code, doc) = run_args(&["state", "--mems", "0.778", "--subclass", "I"]);
        assert_eq!(code, 0);
        let ef = doc["measures"]["e_f"].as_f64().unwrap();
        assert!((ef - 0.69).abs() < 0.005, "{ef}");
        assert_eq!(doc["meta"]["seed"], 0);
        let (_, doc) = run_args(&["state", "--werner", "1"]);
        assert!((doc["measures"]["t"].as_f64().unwrap() - 1.0).abs() < 1e-12);
        let (_, doc) = run_args(&["state", "--bell"]);
        assert!((doc["measures"]["c"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_parameters_exit_two() {
        assert_eq!(run_args(&["state", "--mems", "0.9", "--subclass", "II"]).0, EXIT_INVALID);
        assert_eq!(run_args(&["state", "--werner", "1.5"]).0, EXIT_INVALID);
        assert_eq!(run_args(&["state"]).0, EXIT_INVALID);
        assert_eq!(run_args(&["state", "--mems", "0.8", "--werner", "0.5"]).0, EXIT_INVALID);
        assert_eq!(run_args(&["curves", "--bogus"]).0, EXIT_INVALID);
        assert_eq!(run_args(&["patch", "--bell", "--fmin", "0"]).0, EXIT_INVALID);
    }

    #[test]
    fn exit_code_mapping() {
        assert_eq!(exit_code(&Error::Infeasible { residual: 1.0, limit: 1e-4 }), EXIT_INFEASIBLE);
        assert_eq!(exit_code(&Error::ZeroSurvival { probability: 0.0 }), EXIT_FAILURE);
        assert_eq!(exit_code(&Error::Config(String::new())), EXIT_INVALID);
    }

    #[test]
    fn pipeline_and_sensitivity() {
        let (code, doc) = run_args(&["pipeline", "--target-r", "1", "--subclass", "I"]);
        assert_eq!(code, 0);
        assert!((doc["fidelity"].as_f64().unwrap() - 1.0).abs() < 1e-9);
        let (code, doc) = run_args(&["sensitivity", "--r0", "0.8"]);
        assert_eq!(code, 0);
        assert!((doc["fid_exponent"].as_f64().unwrap() - 2.0).abs() < 0.1);
    }

    #[test]
    fn compare_rows() {
        let (code, doc) = run_args(&["compare", "--r", "0.778", "--pieces", "2,4,6"]);
        assert_eq!(code, 0);
        let rows = doc["rows"].as_array().unwrap();
        assert_eq!(rows.len(), 5);
        assert_eq!(rows[2]["scheme"], "procrustean_2");
        assert!((rows[2]["success_prob"].as_f64().unwrap() - 0.504).abs() < 0.002);
    }
}
