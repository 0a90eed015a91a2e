use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use dbse::config::RunConfig;
use dbse::eval::{train_judges, EvalContext, EvalReport, Resample};
use dbse::synthdata::{self, CsvOptions, Dataset};
use dbse::training::{write_loss_csv, Trainer};
use dbse::{Ablation, AnchorPolicy, Error};

#[derive(Parser)]
#[command(name = "dbse", version, about = "Sequential disentanglement on time series")]
struct Cli {
    /// More log output (repeatable). RUST_LOG overrides.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labelled synthetic dataset from the `data.*` keys of a config.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the sequences as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Train a model; writes checkpoint.dbse, loss.csv and config.txt.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Dataset file from `synth`, or a CSV of rows.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, value_parser = parse_ablation)]
        ablation: Option<Ablation>,
        #[arg(long, value_parser = parse_anchor)]
        anchor: Option<AnchorPolicy>,
    },
    /// Run an evaluation protocol against a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        protocol: Protocol,
        /// Report CSV. `swap` also writes `<out stem>.swapped.csv`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Dump static codes and time-pooled dynamic codes as CSV.
    ExportEmbeddings {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Protocol {
    LeakageGen,
    LeakageLatent,
    Swap,
    Metrics,
    Eer,
    All,
}

fn parse_ablation(s: &str) -> Result<Ablation, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_anchor(s: &str) -> Result<AnchorPolicy, String> {
    match s {
        "first" | "middle" | "last" | "random" | "rob" => s.parse().map_err(|e: Error| e.to_string()),
        _ => Err(format!("expected one of first, middle, last, random, rob; got `{s}`")),
    }
}

struct Failure {
    code: u8,
    msg: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::NonFinite { .. } => 3,
            Error::Compat(_) | Error::Format(_) => 4,
            Error::Tensor(_) => 3,
            _ => 2,
        };
        Failure {
            code,
            msg: e.to_string(),
        }
    }
}

fn fail<T>(code: u8, msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure { code, msg: msg.into() })
}

type CliResult<T = ()> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = check_threads().and_then(|()| match cli.command {
        Command::Synth { spec, out, csv } => synth(&spec, &out, csv.as_deref()),
        Command::Train {
            config,
            data,
            out_dir,
            ablation,
            anchor,
        } => train(&config, &data, &out_dir, ablation, anchor),
        Command::Eval {
            checkpoint,
            data,
            protocol,
            out,
        } => eval(&checkpoint, &data, protocol, &out),
        Command::ExportEmbeddings { checkpoint, data, out } => export(&checkpoint, &data, &out),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}

/// All computation is single-threaded and deterministic; the variable is
/// validated so a typo does not pass silently.
fn check_threads() -> CliResult {
    match std::env::var("DBSE_THREADS") {
        Err(_) => Ok(()),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => {
                if n > 1 {
                    log::info!("DBSE_THREADS={n}: computation stays on one thread");
                }
                Ok(())
            }
            _ => fail(2, format!("DBSE_THREADS must be a positive integer, got `{v}`")),
        },
    }
}

fn read_config(path: &Path) -> CliResult<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure {
        code: 2,
        msg: format!("{}: {e}", path.display()),
    })?;
    Ok(RunConfig::parse(&text)?)
}

fn synth(spec: &Path, out: &Path, csv: Option<&Path>) -> CliResult {
    let run = read_config(spec)?;
    let data = synthdata::generate(&run.data)?;
    data.save(out)?;
    if let Some(csv) = csv {
        synthdata::export_csv(&data, csv)?;
    }
    println!("{} sequences, digest {}", data.len(), data.digest());
    Ok(())
}

/// Dataset file, or CSV rows cut into windows of `seq_len`. Label columns
/// named `static_label` / `dynamic_label` are used when present.
fn load_data(path: &Path, seq_len: usize) -> CliResult<Dataset> {
    if !path.exists() {
        return fail(2, format!("{}: no such file", path.display()));
    }
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        let header = std::fs::read_to_string(path)
            .map_err(|e| Failure {
                code: 2,
                msg: format!("{}: {e}", path.display()),
            })?
            .lines()
            .next()
            .unwrap_or_default()
            .to_string();
        let has = |name: &str| header.split(',').any(|c| c.trim() == name);
        let opts = CsvOptions {
            seq_len,
            columns: Vec::new(),
            static_label: has("static_label").then(|| "static_label".into()),
            dynamic_label: has("dynamic_label").then(|| "dynamic_label".into()),
        };
        Ok(synthdata::load_csv(path, &opts)?.data)
    } else {
        Ok(Dataset::load(path)?)
    }
}

fn check_dims(run: &RunConfig, data: &Dataset) -> CliResult {
    if data.seq_len() != run.model.seq_len || data.dim() != run.model.input_dim {
        return fail(
            4,
            format!(
                "data has T={}, d={}; model expects T={}, d={}",
                data.seq_len(),
                data.dim(),
                run.model.seq_len,
                run.model.input_dim
            ),
        );
    }
    Ok(())
}

fn train(
    config: &Path,
    data_path: &Path,
    out_dir: &Path,
    ablation: Option<Ablation>,
    anchor: Option<AnchorPolicy>,
) -> CliResult {
    let mut run = read_config(config)?;
    if let Some(a) = ablation {
        run.model.ablation = a;
    }
    if let Some(a) = anchor {
        run.model.anchor = a;
    }
    run.validate()?;
    let data = load_data(data_path, run.model.seq_len)?;
    check_dims(&run, &data)?;
    let (train_set, _) = synthdata::split(&data, run.train_fraction, run.split_seed)?;
    synthdata::require_nonempty(&train_set, "training split")?;

    std::fs::create_dir_all(out_dir).map_err(|e| Failure {
        code: 2,
        msg: format!("{}: {e}", out_dir.display()),
    })?;
    let ckpt = out_dir.join("checkpoint.dbse");
    let loss = out_dir.join("loss.csv");
    std::fs::write(out_dir.join("config.txt"), run.canonical_text()).map_err(|e| Failure {
        code: 2,
        msg: format!("{}: {e}", out_dir.display()),
    })?;

    let mut trainer = Trainer::new(run, data.digest())?;
    let outcome = trainer.train(&train_set, Some(&ckpt));
    write_loss_csv(&loss, &trainer.history)?;
    match outcome {
        Ok(()) => {
            trainer.save_checkpoint(&ckpt)?;
            println!("config digest {}", trainer.run.digest());
            Ok(())
        }
        Err(e) => {
            let mut f = Failure::from(e);
            f.msg = format!(
                "{} (epoch {}, step {}; loss history in {})",
                f.msg,
                trainer.epoch + 1,
                trainer.history.len() + 1,
                loss.display()
            );
            Err(f)
        }
    }
}

fn load_pair(checkpoint: &Path, data_path: &Path) -> CliResult<(Trainer, Dataset)> {
    if !checkpoint.exists() {
        return fail(2, format!("{}: no such file", checkpoint.display()));
    }
    let trainer = Trainer::load_checkpoint(checkpoint)?;
    let data = load_data(data_path, trainer.run.model.seq_len)?;
    if data.is_empty() {
        return fail(2, format!("{}: dataset is empty", data_path.display()));
    }
    check_dims(&trainer.run, &data)?;
    if data.digest() != trainer.data_digest {
        return fail(
            4,
            format!(
                "{} is not the dataset this checkpoint was trained on",
                data_path.display()
            ),
        );
    }
    Ok((trainer, data))
}

fn eval(checkpoint: &Path, data_path: &Path, protocol: Protocol, out: &Path) -> CliResult {
    let (trainer, data) = load_pair(checkpoint, data_path)?;
    let run = &trainer.run;
    let digest = run.digest();
    let ctx = EvalContext {
        model: &trainer.model,
        cfg: &run.eval,
        config_digest: &digest,
    };
    let (train_set, test_set) = synthdata::split(&data, run.train_fraction, run.split_seed)?;
    synthdata::require_nonempty(&test_set, "test split")?;
    let needs_judges = protocol != Protocol::LeakageLatent && protocol != Protocol::Eer;
    let judges = if needs_judges {
        Some(train_judges(&train_set, &test_set, &run.eval)?)
    } else {
        None
    };
    let judges = judges.as_ref();
    let mut reports = Vec::new();
    let want = |p: Protocol| protocol == p || protocol == Protocol::All;
    if want(Protocol::LeakageLatent) {
        reports.push(ctx.leakage_latent(&data)?);
    }
    if want(Protocol::LeakageGen) {
        let j = judges.expect("judges trained");
        reports.push(ctx.leakage_generation(j, &test_set, Resample::Static)?);
        reports.push(ctx.leakage_generation(j, &test_set, Resample::Dynamic)?);
    }
    if want(Protocol::Swap) {
        let (report, swapped, pairs) = ctx.swap_fidelity(judges.expect("judges trained"), &test_set)?;
        write_swapped(&out.with_extension("swapped.csv"), &swapped, &pairs)?;
        reports.push(report);
    }
    if want(Protocol::Metrics) {
        reports.push(ctx.generation_metrics(judges.expect("judges trained"), &test_set)?);
    }
    if want(Protocol::Eer) {
        reports.push(ctx.eer_protocol(&test_set)?);
    }
    EvalReport::write_csv(&reports, out)?;
    for r in &reports {
        print!("{}", r.csv_rows());
    }
    Ok(())
}

/// One row per pair and time step of dec(s of `first`, d of `second`);
/// indices refer to the test split.
fn write_swapped(path: &Path, x: &dbse::Tensor, pairs: &[(usize, usize)]) -> CliResult {
    let (t_len, dim) = (x.shape()[1], x.shape()[2]);
    let mut s = String::from("pair,first,second,t");
    for k in 0..dim {
        s.push_str(&format!(",x{k}"));
    }
    s.push('\n');
    for (p, &(a, b)) in pairs.iter().enumerate() {
        for t in 0..t_len {
            s.push_str(&format!("{p},{a},{b},{t}"));
            let off = (p * t_len + t) * dim;
            for v in &x.data()[off..off + dim] {
                s.push_str(&format!(",{v}"));
            }
            s.push('\n');
        }
    }
    std::fs::write(path, s).map_err(|e| Failure {
        code: 2,
        msg: format!("{}: {e}", path.display()),
    })
}

fn export(checkpoint: &Path, data_path: &Path, out: &Path) -> CliResult {
    let (trainer, data) = load_pair(checkpoint, data_path)?;
    let digest = trainer.run.digest();
    let ctx = EvalContext {
        model: &trainer.model,
        cfg: &trainer.run.eval,
        config_digest: &digest,
    };
    ctx.export_embeddings(&data, out)?;
    Ok(())
}
