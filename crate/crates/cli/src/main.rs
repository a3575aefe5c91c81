//! `fuzzkey` command-line tool.
//!
//! Exit codes: 0 ok, 1 usage or I/O, 2 store or probe, 3 denied by the
//! key-match gate, 4 authentication, binding or envelope format failure.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use fuzzkey::envelope::EXTENSION;
use fuzzkey::keyforge::{DEFAULT_ITERATIONS, MIN_ITERATIONS};
use fuzzkey::report::{self, KeyInputs, SweepSpec};
use fuzzkey::sealstore::STORE_ENV;
use fuzzkey::{
    ConditionProvider, ConditionVector, EncryptOptions, EntropyWeights, Envelope, EnvelopeError, KmsConfig,
    RandomSource, SoftwareTpm,
};

#[derive(Parser)]
#[command(name = "fuzzkey", version, about = "Condition-bound file encryption with a fuzzy key-match gate")]
struct Cli {
    /// Device root store. Defaults to ~/.fuzzkey/store.
    #[arg(long, global = true, env = STORE_ENV)]
    store: Option<PathBuf>,

    /// TOML file replacing the shipped rule base and membership sets.
    #[arg(long, global = true)]
    fis_config: Option<PathBuf>,

    /// Key-match threshold in [0, 1].
    #[arg(long, global = true, value_parser = parse_tau)]
    tau: Option<f64>,

    /// TESTING ONLY: draw salts, IVs and session secrets from a fixed seed.
    #[arg(long, global = true)]
    insecure_fixed_rng: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Encrypt a file into a .fzk envelope.
    Encrypt(CryptArgs),
    /// Decrypt a .fzk envelope if current conditions match.
    Decrypt(CryptArgs),
    /// Print the cleartext header of an envelope.
    Inspect { input: PathBuf },
    /// Sweep timestamp drift at fixed load and emit drift,kms,fe rows.
    Simulate(SimulateArgs),
    /// Shannon entropy of pooled derived-key bytes.
    EntropyReport(EntropyArgs),
    /// Time encrypt+decrypt round trips.
    Bench(BenchArgs),
}

#[derive(Args)]
struct CryptArgs {
    input: PathBuf,
    /// Defaults to INPUT.fzk when encrypting and INPUT without .fzk when decrypting.
    output: Option<PathBuf>,
    #[arg(long, env = "FUZZKEY_PASSWORD", hide_env_values = true)]
    password: String,
    /// PBKDF2 iterations (encrypt only).
    #[arg(long, default_value_t = DEFAULT_ITERATIONS)]
    iterations: u32,
    /// TESTING ONLY: use CPU,PROCESSES,TIMESTAMP instead of sampling the host.
    #[arg(long, value_name = "CPU,PROC,TS", value_parser = parse_conditions)]
    insecure_conditions: Option<ConditionVector>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, default_value_t = 25.0)]
    cpu: f64,
    #[arg(long = "proc", default_value_t = 65)]
    process_count: u32,
    #[arg(long, default_value_t = 0.0)]
    start: f64,
    #[arg(long, default_value_t = 10.0)]
    stop: f64,
    #[arg(long, default_value_t = 0.5)]
    step: f64,
    /// Write CSV here instead of standard output.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct EntropyArgs {
    #[arg(short, long, default_value_t = 1000)]
    n: usize,
    /// Keep every KDF input fixed except the salt.
    #[arg(long)]
    constant_inputs: bool,
    #[arg(long, default_value_t = MIN_ITERATIONS)]
    iterations: u32,
    /// Also write the report to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 50)]
    runs: usize,
    #[arg(long, default_value_t = DEFAULT_ITERATIONS)]
    iterations: u32,
}

fn parse_tau(s: &str) -> Result<f64, String> {
    let t: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if (0.0..=1.0).contains(&t) {
        Ok(t)
    } else {
        Err(format!("{t} is outside [0, 1]"))
    }
}

fn parse_conditions(s: &str) -> Result<ConditionVector, String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let [cpu, proc, ts] = parts.as_slice() else {
        return Err("expected CPU,PROC,TS".into());
    };
    let cpu = cpu.parse::<f64>().map_err(|e| format!("cpu: {e}"))?;
    let proc = proc.parse::<u32>().map_err(|e| format!("proc: {e}"))?;
    let ts = ts.parse::<f64>().map_err(|e| format!("timestamp: {e}"))?;
    ConditionVector::new(cpu, proc, ts).map_err(|e| e.to_string())
}

/// A failure carrying the exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

trait Code<T> {
    fn code(self, code: u8) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Code<T> for Result<T, E> {
    fn code(self, code: u8) -> Result<T, Failure> {
        self.map_err(|e| Failure { code, error: e.into() })
    }
}

const IO: u8 = 1;
const STORE: u8 = 2;
const DENIED: u8 = 3;
const AUTH: u8 = 4;

fn envelope_code(e: &EnvelopeError) -> u8 {
    match e {
        EnvelopeError::Denied { .. } => DENIED,
        EnvelopeError::Parse(_) | EnvelopeError::Binding | EnvelopeError::AuthFailure => AUTH,
        EnvelopeError::Probe(_) | EnvelopeError::Seal(_) | EnvelopeError::Randomness(_) => STORE,
        EnvelopeError::Kms(_) | EnvelopeError::Kdf(_) => IO,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { IO } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Encrypt(a) => cmd_encrypt(&cli, a),
        Command::Decrypt(a) => cmd_decrypt(&cli, a),
        Command::Inspect { input } => cmd_inspect(input),
        Command::Simulate(a) => cmd_simulate(&cli, a),
        Command::EntropyReport(a) => cmd_entropy_report(&cli, a),
        Command::Bench(a) => cmd_bench(&cli, a),
    }
}

impl Cli {
    fn store_path(&self) -> Result<PathBuf, Failure> {
        if let Some(p) = &self.store {
            return Ok(p.clone());
        }
        let home = std::env::var_os("HOME").ok_or_else(|| anyhow!("no --store given and HOME is unset")).code(STORE)?;
        Ok(Path::new(&home).join(".fuzzkey").join("store"))
    }

    fn tpm(&self) -> Result<SoftwareTpm, Failure> {
        SoftwareTpm::open(self.store_path()?).code(STORE)
    }

    fn kms_config(&self) -> Result<KmsConfig, Failure> {
        let cfg = match &self.fis_config {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display())).code(IO)?;
                KmsConfig::from_toml(&text).with_context(|| format!("loading {}", p.display())).code(IO)?
            }
            None => KmsConfig::default(),
        };
        match self.tau {
            Some(t) => cfg.with_threshold(t).code(IO),
            None => Ok(cfg),
        }
    }

    fn rng(&self) -> RandomSource {
        if self.insecure_fixed_rng {
            eprintln!("warning: --insecure-fixed-rng makes every envelope predictable");
            RandomSource::insecure_seeded(0)
        } else {
            RandomSource::Os
        }
    }
}

fn provider(fixed: Option<ConditionVector>) -> ConditionProvider {
    fixed.map_or_else(ConditionProvider::live, ConditionProvider::fixed)
}

fn read(path: &Path) -> Result<Vec<u8>, Failure> {
    fs::read(path).with_context(|| format!("reading {}", path.display())).code(IO)
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display())).code(IO)
}

fn cmd_encrypt(cli: &Cli, a: &CryptArgs) -> Result<(), Failure> {
    let plaintext = read(&a.input)?;
    let out = a.output.clone().unwrap_or_else(|| {
        let mut p = a.input.clone().into_os_string();
        p.push(".");
        p.push(EXTENSION);
        p.into()
    });
    let tpm = cli.tpm()?;
    let opts = EncryptOptions { iterations: a.iterations, weights: EntropyWeights::default() };
    let start = Instant::now();
    let env = fuzzkey::encrypt(
        &plaintext,
        a.password.as_bytes(),
        &mut provider(a.insecure_conditions),
        &tpm,
        &mut cli.rng(),
        &opts,
    )
    .map_err(|e| Failure { code: envelope_code(&e), error: e.into() })?;
    let elapsed = start.elapsed();
    write(&out, &env.serialize())?;
    eprintln!("F_e        {}", env.fe_q);
    eprintln!("cpu        {:.1}%", env.cpu_enc);
    eprintln!("processes  {}", env.proc_enc);
    eprintln!("timestamp  {:.3}", env.t_enc);
    eprintln!("encrypted  {} bytes in {:.1} ms -> {}", plaintext.len(), elapsed.as_secs_f64() * 1e3, out.display());
    Ok(())
}

fn cmd_decrypt(cli: &Cli, a: &CryptArgs) -> Result<(), Failure> {
    let bytes = read(&a.input)?;
    let env = Envelope::parse(&bytes).with_context(|| format!("parsing {}", a.input.display())).code(AUTH)?;
    let out = match &a.output {
        Some(p) => p.clone(),
        None => match a.input.extension() {
            Some(ext) if ext == EXTENSION => a.input.with_extension(""),
            _ => {
                return Err(Failure { code: IO, error: anyhow!("give an OUTPUT path for input without .{EXTENSION}") })
            }
        },
    };
    let config = cli.kms_config()?;
    let tpm = cli.tpm()?;
    let start = Instant::now();
    match fuzzkey::decrypt(&env, a.password.as_bytes(), &mut provider(a.insecure_conditions), &tpm, &config) {
        Ok(plain) => {
            write(&out, &plain)?;
            eprintln!(
                "decrypted  {} bytes in {:.1} ms -> {}",
                plain.len(),
                start.elapsed().as_secs_f64() * 1e3,
                out.display()
            );
            Ok(())
        }
        Err(e) => {
            if let EnvelopeError::Denied { kms, tau, .. } = e {
                eprintln!("KMS {kms:.3} < tau {tau:.3}");
            }
            Err(Failure { code: envelope_code(&e), error: e.into() })
        }
    }
}

fn cmd_inspect(input: &Path) -> Result<(), Failure> {
    let env = Envelope::parse(&read(input)?).with_context(|| format!("parsing {}", input.display())).code(AUTH)?;
    println!("format          FZK1 v{}", fuzzkey::envelope::VERSION);
    println!("kdf_iterations  {}", env.kdf_iterations);
    println!("salt            {}", hex::encode(env.salt));
    println!("iv              {}", hex::encode(env.iv));
    println!("t_enc           {:.3}", env.t_enc);
    println!("cpu_enc         {:.2}", env.cpu_enc);
    println!("proc_enc        {}", env.proc_enc);
    println!("fe              {}", env.fe_q);
    println!("sealed_len      {}", env.sealed.len());
    println!("ciphertext_len  {}", env.ciphertext.len());
    println!("tag             {}", hex::encode(env.tag));
    Ok(())
}

fn cmd_simulate(cli: &Cli, a: &SimulateArgs) -> Result<(), Failure> {
    let config = cli.kms_config()?;
    let spec = SweepSpec {
        cpu_percent: a.cpu,
        process_count: a.process_count,
        start: a.start,
        stop: a.stop,
        step: a.step,
        ..SweepSpec::default()
    };
    let rows = report::drift_sweep(&config, &spec, &EntropyWeights::default()).code(IO)?;
    let sink: Box<dyn Write> = match &a.csv {
        Some(p) => Box::new(fs::File::create(p).with_context(|| format!("creating {}", p.display())).code(IO)?),
        None => Box::new(std::io::stdout().lock()),
    };
    let mut w = csv::Writer::from_writer(sink);
    let csv_err = |e: csv::Error| Failure { code: IO, error: e.into() };
    w.write_record(["drift", "kms", "fe"]).map_err(csv_err)?;
    for r in &rows {
        w.write_record([r.drift.to_string(), format!("{:.6}", r.kms), format!("{:.6}", r.fe)]).map_err(csv_err)?;
    }
    w.flush().code(IO)?;
    eprintln!("{} rows, tau {:.3}", rows.len(), config.threshold());
    Ok(())
}

fn cmd_entropy_report(cli: &Cli, a: &EntropyArgs) -> Result<(), Failure> {
    let inputs = if a.constant_inputs { KeyInputs::ConstantExceptSalt } else { KeyInputs::Random };
    let r = report::entropy_report(a.n, inputs, a.iterations, &mut cli.rng()).code(IO)?;
    let text = format!(
        "keys {}\nbytes {}\nentropy {:.4} bits/byte\nthreshold {:.1}\nresult {}\n",
        r.keys,
        r.bytes,
        r.bits_per_byte,
        r.threshold,
        if r.pass() { "PASS" } else { "FAIL" }
    );
    print!("{text}");
    if let Some(p) = &a.out {
        write(p, text.as_bytes())?;
    }
    Ok(())
}

fn cmd_bench(cli: &Cli, a: &BenchArgs) -> Result<(), Failure> {
    let config = cli.kms_config()?;
    let tpm = cli.tpm()?;
    let r = report::bench(a.runs, a.iterations, &tpm, &config, &mut cli.rng()).code(STORE)?;
    println!("runs {}", r.runs);
    println!("kdf_iterations {}", r.kdf_iterations);
    println!("mean_ms {:.2}", r.mean_ms);
    println!("median_ms {:.2}", r.median_ms);
    println!("min_ms {:.2}", r.min_ms);
    println!("max_ms {:.2}", r.max_ms);
    Ok(())
}
