use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};

use schmidt_tns::contraction::{energy, infinite_energy, EnergyReport};
use schmidt_tns::optimizer::train;
use schmidt_tns::oracle::{
    ed_ground_state, entanglement_entropy, mps_entanglement, schmidt_decompose, top_k_schmidt, GroundState, SchmidtSpectrum,
};
use schmidt_tns::sampler::{exact_distribution, sample};
use schmidt_tns::schmidt::{init_state_with_noise, SchmidtTns};

use crate::checkpoint::{self, Checkpoint, Descriptor};
use crate::config::{Problem, RunConfig};
use crate::error::CliError;
use crate::records::{header, render_lines, Record};

pub const CHECKPOINT_FILE: &str = "checkpoint.stns";
pub const TRACE_FILE: &str = "trace.jsonl";

#[derive(Debug, Parser)]
#[command(name = "stns", version, about = "Schmidt tensor network state optimizer")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Optimize a state and write a checkpoint plus its training trace.
    Train(TrainArgs),
    /// Evaluate the energy of a checkpoint.
    Energy(CheckpointArgs),
    /// Largest Schmidt coefficients and entanglement entropies of a checkpoint.
    Spectrum(SpectrumArgs),
    /// Draw Schmidt strings from a checkpoint's λ distribution.
    Sample(SampleArgs),
    /// Exact ground state and its Schmidt spectrum.
    Ed(EdArgs),
    /// Train at several depths and report the error against exact diagonalization.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct CheckpointArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SpectrumArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub top: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EdArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub top: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Comma-separated depths; defaults to the configured depth.
    #[arg(long, value_delimiter = ',')]
    pub layers: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    pub top: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Result of one command: its records and the file they also go to.
struct Output {
    command: &'static str,
    config_hash: String,
    body: Vec<Record>,
    file: Option<PathBuf>,
}

fn bit_string(bits: &[u8]) -> String {
    bits.iter().map(|b| char::from(b'0' + b)).collect()
}

fn neg_log2(x: f64) -> f64 {
    -x.log2()
}

/// Applies the command-line seed and checks it against `optimizer.seed`.
fn effective_config(path: &Path, seed: Option<u64>) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if cfg.optimizer.seed != 0 && cfg.optimizer.seed != cfg.seed {
        return Err(CliError::Config(format!(
            "optimizer.seed = {} conflicts with seed = {}",
            cfg.optimizer.seed, cfg.seed
        )));
    }
    cfg.optimizer.seed = cfg.seed;
    Ok(cfg)
}

fn hash_of(cfg: &RunConfig) -> String {
    let mut c = cfg.clone();
    c.output = None;
    c.hash()
}

fn evaluate(state: &SchmidtTns, descriptor: &Descriptor) -> Result<EnergyReport, CliError> {
    let h = descriptor.hamiltonian()?;
    Ok(if state.arch.is_translational() {
        infinite_energy(state, &h)?
    } else {
        energy(state, &h)?
    })
}

fn energy_record(report: &EnergyReport) -> Record {
    Record::new("energy")
        .with("energy", report.energy)
        .with("energy_per_bond", report.energy_per_bond)
        .with("norm", report.norm)
        .with("edge_count", report.edge_count)
        .with("per_term", report.per_term.clone())
}

fn ed_for(problem: &Problem) -> Result<(GroundState, SchmidtSpectrum), CliError> {
    if problem.lattice.is_infinite() {
        return Err(CliError::Config("exact diagonalization needs a finite lattice".into()));
    }
    let gs = ed_ground_state(&problem.hamiltonian)?;
    let spectrum = schmidt_decompose(&gs.vector, &problem.bipartition.part_a)?;
    Ok((gs, spectrum))
}

/// Entanglement entropy of the state over all Schmidt strings, in bits.
fn state_entropy(state: &SchmidtTns) -> Result<f64, CliError> {
    let p = exact_distribution(&state.lambda)?;
    let gamma: Vec<f64> = p.iter().map(|q| q.sqrt()).collect();
    Ok(entanglement_entropy(&gamma))
}

fn cmd_train(a: &TrainArgs) -> Result<Output, CliError> {
    let cfg = effective_config(&a.config, a.seed)?;
    let out = a
        .out
        .clone()
        .or_else(|| cfg.output.clone())
        .ok_or_else(|| CliError::Config("train needs --out or `output` in the config".into()))?;
    let problem = cfg.problem()?;
    let hash = hash_of(&cfg);
    let init = init_state_with_noise(&problem.architecture, cfg.seed, cfg.architecture.init_noise)?;
    let (state, trace) = train(&init, &problem.hamiltonian, &cfg.optimizer)?;
    let descriptor = Descriptor {
        config_hash: hash.clone(),
        model: cfg.model.clone(),
        lattice: problem.lattice,
        bipartition: problem.bipartition,
        architecture: problem.architecture,
    };
    let report = evaluate(&state, &descriptor)?;
    std::fs::create_dir_all(&out)?;
    let ck = Checkpoint { descriptor, state };
    checkpoint::save(&ck, &out.join(CHECKPOINT_FILE))?;

    let mut body: Vec<Record> = trace
        .records
        .iter()
        .map(|r| {
            Record::new("step")
                .with("step", r.step)
                .with("energy_per_bond", r.energy_per_bond)
                .with("norm", r.norm)
                .with("grad_norm", r.grad_norm)
                .with("eta", r.eta)
        })
        .collect();
    let termination = serde_json::to_value(trace.termination).expect("termination serializes");
    body.push(
        Record::new("summary")
            .with("termination", termination.as_str().unwrap_or_default())
            .with("steps", trace.records.last().map_or(0, |r| r.step))
            .with("energy", report.energy)
            .with("energy_per_bond", report.energy_per_bond)
            .with("max_unitarity_defect", ck.state.max_unitarity_defect()?)
            .with("checkpoint", CHECKPOINT_FILE),
    );
    Ok(Output {
        command: "train",
        config_hash: hash,
        body,
        file: Some(out.join(TRACE_FILE)),
    })
}

fn out_file(out: &Option<PathBuf>, name: &str) -> Result<Option<PathBuf>, CliError> {
    match out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            Ok(Some(dir.join(name)))
        }
        None => Ok(None),
    }
}

fn cmd_energy(a: &CheckpointArgs) -> Result<Output, CliError> {
    let ck = checkpoint::load(&a.checkpoint)?;
    let report = evaluate(&ck.state, &ck.descriptor)?;
    Ok(Output {
        command: "energy",
        config_hash: ck.descriptor.config_hash.clone(),
        body: vec![energy_record(&report).with("translational", ck.state.arch.is_translational())],
        file: out_file(&a.out, "energy.jsonl")?,
    })
}

fn check_top(top: usize) -> Result<(), CliError> {
    if top == 0 {
        return Err(CliError::Config("--top must be positive".into()));
    }
    Ok(())
}

fn cmd_spectrum(a: &SpectrumArgs) -> Result<Output, CliError> {
    check_top(a.top)?;
    let ck = checkpoint::load(&a.checkpoint)?;
    let lambda = &ck.state.lambda;
    let mut body: Vec<Record> = top_k_schmidt(lambda, a.top)?
        .into_iter()
        .enumerate()
        .map(|(i, (r, g))| {
            Record::new("schmidt")
                .with("rank", i + 1)
                .with("r", bit_string(&r))
                .with("gamma", g)
                .with("neg_log2_gamma", neg_log2(g))
        })
        .collect();
    let r = lambda.len();
    let cut = r / 2;
    let mps_ee = if r >= 2 { mps_entanglement(lambda, cut)? } else { 0.0 };
    body.push(
        Record::new("entropy")
            .with("state_ee", state_entropy(&ck.state)?)
            .with("mps_ee", mps_ee)
            .with("mps_cut", cut),
    );
    Ok(Output {
        command: "spectrum",
        config_hash: ck.descriptor.config_hash.clone(),
        body,
        file: out_file(&a.out, "spectrum.jsonl")?,
    })
}

fn cmd_sample(a: &SampleArgs) -> Result<Output, CliError> {
    if a.samples == 0 {
        return Err(CliError::Config("--samples must be positive".into()));
    }
    let bytes = std::fs::read(&a.checkpoint).map_err(|e| CliError::checkpoint(a.checkpoint.display(), e))?;
    let ck = checkpoint::decode(&bytes, &a.checkpoint)?;
    let source: String = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
    let mut batch = sample(&ck.state.lambda, a.samples, a.seed)?;
    batch.source = Some(source.clone());
    let mut body = vec![Record::new("batch")
        .with("n_samples", batch.bitstrings.len())
        .with("seed", batch.seed)
        .with("source", source)
        .with("r", ck.state.lambda.len())];
    body.extend(
        batch
            .bitstrings
            .iter()
            .enumerate()
            .map(|(i, s)| Record::new("sample").with("index", i).with("r", bit_string(s))),
    );
    Ok(Output {
        command: "sample",
        config_hash: ck.descriptor.config_hash.clone(),
        body,
        file: out_file(&a.out, "samples.jsonl")?,
    })
}

fn cmd_ed(a: &EdArgs) -> Result<Output, CliError> {
    check_top(a.top)?;
    let cfg = effective_config(&a.config, None)?;
    let problem = cfg.problem()?;
    let (gs, spectrum) = ed_for(&problem)?;
    let mut body = vec![Record::new("ed")
        .with("n_sites", problem.lattice.n_sites)
        .with("energy", gs.energy)
        .with("energy_per_bond", gs.energy_per_bond)
        .with("next_energy", gs.next_energy)
        .with("gap", gs.next_energy - gs.energy)
        .with("degenerate", gs.degenerate)
        .with("residual", gs.residual)
        .with("iterations", gs.iterations)];
    body.extend(spectrum.coefficients.iter().take(a.top).enumerate().map(|(i, &g)| {
        Record::new("schmidt")
            .with("rank", i + 1)
            .with("gamma", g)
            .with("neg_log2_gamma", neg_log2(g))
    }));
    body.push(Record::new("entropy").with("state_ee", spectrum.entropy()));
    Ok(Output {
        command: "ed",
        config_hash: hash_of(&cfg),
        body,
        file: out_file(&a.out, "ed.jsonl")?,
    })
}

fn cmd_compare(a: &CompareArgs) -> Result<Output, CliError> {
    check_top(a.top)?;
    let cfg = effective_config(&a.config, a.seed)?;
    let layers = if a.layers.is_empty() {
        vec![cfg.architecture.layers]
    } else {
        a.layers.clone()
    };
    let base = cfg.problem()?;
    let (gs, spectrum) = ed_for(&base)?;
    let ed_gamma: Vec<f64> = spectrum.coefficients.iter().copied().take(a.top).collect();
    let mut body = vec![Record::new("ed")
        .with("energy_per_bond", gs.energy_per_bond)
        .with("degenerate", gs.degenerate)
        .with("state_ee", spectrum.entropy())
        .with("gamma", ed_gamma.clone())];
    for &n_l in &layers {
        let mut c = cfg.clone();
        c.architecture.layers = n_l;
        let problem = c.problem()?;
        let init = init_state_with_noise(&problem.architecture, c.seed, c.architecture.init_noise)?;
        let (state, trace) = train(&init, &problem.hamiltonian, &c.optimizer)?;
        let report = energy(&state, &problem.hamiltonian)?;
        let gamma: Vec<f64> = top_k_schmidt(&state.lambda, ed_gamma.len())?.into_iter().map(|(_, g)| g).collect();
        let delta: Vec<f64> = gamma.iter().zip(&ed_gamma).map(|(g, e)| g - e).collect();
        let termination = serde_json::to_value(trace.termination).expect("termination serializes");
        body.push(
            Record::new("compare")
                .with("layers", n_l)
                .with("energy_per_bond", report.energy_per_bond)
                .with("ed_energy_per_bond", gs.energy_per_bond)
                .with("epsilon", report.energy_per_bond - gs.energy_per_bond)
                .with("gamma", gamma)
                .with("delta_gamma", delta)
                .with("state_ee", state_entropy(&state)?)
                .with("delta_ee", state_entropy(&state)? - spectrum.entropy())
                .with("steps", trace.records.last().map_or(0, |r| r.step))
                .with("termination", termination.as_str().unwrap_or_default()),
        );
    }
    Ok(Output {
        command: "compare",
        config_hash: hash_of(&cfg),
        body,
        file: out_file(&a.out, "compare.jsonl")?,
    })
}

fn dispatch(cmd: &Command) -> Result<Output, CliError> {
    match cmd {
        Command::Train(a) => cmd_train(a),
        Command::Energy(a) => cmd_energy(a),
        Command::Spectrum(a) => cmd_spectrum(a),
        Command::Sample(a) => cmd_sample(a),
        Command::Ed(a) => cmd_ed(a),
        Command::Compare(a) => cmd_compare(a),
    }
}

fn report_error(stderr: &mut dyn Write, kind: &str, code: u8, message: &str) {
    let rec = Record::new("error")
        .with("kind", kind)
        .with("exit_code", code as usize)
        .with("message", message);
    let _ = writeln!(stderr, "{}", rec.to_line());
}

/// Runs the command line `args` (program name first) and returns the exit
/// status: 0 on success, 1 on configuration errors, 2 on numerical or
/// checkpoint failures. Error records go to `stderr` as JSON lines.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(stdout, "{e}");
                return 0;
            }
            let _ = write!(stderr, "{e}");
            report_error(stderr, "config", 1, &e.kind().to_string());
            return 1;
        }
    };
    let start = Instant::now();
    let result = dispatch(&cli.command).and_then(|out| {
        let head = header(out.command, &out.config_hash, start.elapsed().as_secs_f64());
        let text = render_lines(&head, &out.body);
        if let Some(path) = &out.file {
            std::fs::write(path, &text)?;
        }
        stdout.write_all(text.as_bytes())?;
        Ok(())
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            let code = e.exit_code();
            report_error(stderr, e.kind(), code, &e.to_string());
            code
        }
    }
}
