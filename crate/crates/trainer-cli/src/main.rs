use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use fm_core::{ExtractionStrides, FilterGrid, FilterMapSpec, FilterShape, GradMode, Scalar};
use planner::ReportFormat;
use trainer_cli::checkpoint::load_checkpoint;
use trainer_cli::config::{Precision, RunConfig};
use trainer_cli::dataset::{load_csv, load_idx, Dataset};
use trainer_cli::error::CliError;
use trainer_cli::netdesc;
use trainer_cli::record::render_record;
use trainer_cli::train::{self, evaluate, network_from_checkpoint};

const USAGE: &str = "\
usage: fm3d <command> [args] [flags]

commands:
  plan <net.cfg>                    report the compact-net plan for a network file
  train <run.cfg>                   train per the run configuration
  eval <checkpoint> <data...>       evaluate a checkpoint on IDX (images labels) or CSV data
  gradcheck <run.cfg>               finite-difference check of the configured model
  ratio <S1xS2xC> <K1xK2xK3> <XxYxZ>  parameter-ratio calculator

flags:
  --seed N                override the run seed
  --out DIR               override the output directory
  --grad-mode MODE        sum | average
  --format FORMAT         text | structured
  --resume CHECKPOINT     continue training from a checkpoint (train only)
";

struct Flags {
    seed: Option<u64>,
    out: Option<PathBuf>,
    grad_mode: Option<GradMode>,
    format: ReportFormat,
    resume: Option<PathBuf>,
}

fn parse_args(args: &[String]) -> Result<(String, Vec<String>, Flags), CliError> {
    let mut flags = Flags {
        seed: None,
        out: None,
        grad_mode: None,
        format: ReportFormat::Text,
        resume: None,
    };
    let mut positionals = Vec::new();
    let mut iter = args.iter();
    while let Some(arg) = iter.next() {
        let mut flag_value = |name: &str| -> Result<String, CliError> {
            iter.next()
                .cloned()
                .ok_or_else(|| CliError::Usage(format!("{name} needs a value")))
        };
        match arg.as_str() {
            "--seed" => {
                let v = flag_value("--seed")?;
                flags.seed = Some(v.parse().map_err(|_| {
                    CliError::Usage(format!("--seed: `{v}` is not an unsigned integer"))
                })?);
            }
            "--out" => flags.out = Some(PathBuf::from(flag_value("--out")?)),
            "--grad-mode" => {
                let v = flag_value("--grad-mode")?;
                flags.grad_mode = Some(v.parse().map_err(CliError::Usage)?);
            }
            "--format" => {
                let v = flag_value("--format")?;
                flags.format = v.parse().map_err(CliError::Usage)?;
            }
            "--resume" => flags.resume = Some(PathBuf::from(flag_value("--resume")?)),
            other if other.starts_with("--") => {
                return Err(CliError::Usage(format!("unknown flag `{other}`")));
            }
            other => positionals.push(other.to_string()),
        }
    }
    let Some((command, rest)) = positionals.split_first() else {
        return Err(CliError::Usage("missing command".into()));
    };
    Ok((command.clone(), rest.to_vec(), flags))
}

fn apply_overrides(cfg: &mut RunConfig, flags: &Flags) {
    if let Some(seed) = flags.seed {
        cfg.seed = seed;
        // The synthetic source defaults to the run seed; an explicit
        // `data.seed` key in the file still wins because it was already
        // resolved, so only the default case follows the override.
    }
    if let Some(out) = &flags.out {
        cfg.out_dir = out.clone();
    }
    if let Some(mode) = flags.grad_mode {
        cfg.grad_mode = mode;
    }
}

fn cmd_plan(net_path: &Path, format: ReportFormat) -> Result<(), CliError> {
    let desc = netdesc::parse_net_file(net_path)?;
    let plan = netdesc::plan(&desc)?;
    print!("{}", planner::render_plan_report(&plan, format));
    Ok(())
}

fn cmd_train(cfg_path: &Path, flags: &Flags) -> Result<(), CliError> {
    let mut cfg = RunConfig::from_file(cfg_path)?;
    apply_overrides(&mut cfg, flags);
    match cfg.precision {
        Precision::Double => run_train::<f64>(&cfg, flags.resume.as_deref()),
        Precision::Single => run_train::<f32>(&cfg, flags.resume.as_deref()),
    }
}

fn run_train<S: Scalar>(cfg: &RunConfig, resume: Option<&Path>) -> Result<(), CliError> {
    let started = Instant::now();
    let mut last_mark = Instant::now();
    let summary = train::train::<S>(cfg, resume, |record| {
        println!("{}", record.render());
        eprintln!(
            "epoch {} finished in {} ms",
            record.epoch,
            last_mark.elapsed().as_millis()
        );
        last_mark = Instant::now();
    })?;
    println!(
        "{}",
        render_record(&[
            ("trainable_params", summary.param_count.to_string()),
            ("metrics", summary.metrics_path.display().to_string()),
            ("checkpoint", summary.checkpoint_path.display().to_string()),
        ])
    );
    eprintln!("total wall time {} ms", started.elapsed().as_millis());
    Ok(())
}

fn cmd_eval(positionals: &[String], format: ReportFormat) -> Result<(), CliError> {
    let (ck_path, data_args) = positionals
        .split_first()
        .ok_or_else(|| CliError::Usage("eval needs a checkpoint path".into()))?;
    let ck = load_checkpoint(Path::new(ck_path))?;
    match ck.dtype_bits {
        32 => eval_with::<f32>(&ck, data_args, format),
        _ => eval_with::<f64>(&ck, data_args, format),
    }
}

fn eval_with<S: Scalar>(
    ck: &trainer_cli::checkpoint::Checkpoint,
    data_args: &[String],
    format: ReportFormat,
) -> Result<(), CliError> {
    let net = network_from_checkpoint::<S>(ck)?;
    let (c, h, w) = net.input_dims();
    let data: Dataset<S> = match data_args {
        [csv] if csv.ends_with(".csv") => load_csv(Path::new(csv), c, h, w)?,
        [images, labels] => load_idx(Path::new(images), Path::new(labels))?,
        _ => {
            return Err(CliError::Usage(
                "eval expects either `images.idx labels.idx` or `data.csv`".into(),
            ))
        }
    };
    let (accuracy, mean_loss) = evaluate(&net, &data, 64)?;
    match format {
        ReportFormat::Text => println!(
            "accuracy {:.4} ({} samples), mean loss {:.6}",
            accuracy,
            data.len(),
            mean_loss
        ),
        ReportFormat::Structured => println!(
            "{}",
            render_record(&[
                ("accuracy", accuracy.to_string()),
                ("mean_loss", mean_loss.to_string()),
                ("samples", data.len().to_string()),
            ])
        ),
    }
    Ok(())
}

fn cmd_gradcheck(cfg_path: &Path, flags: &Flags) -> Result<(), CliError> {
    let mut cfg = RunConfig::from_file(cfg_path)?;
    apply_overrides(&mut cfg, flags);
    // Gradient checking is a double-precision affair regardless of the
    // configured training precision.
    let desc = train::require_net_desc(&cfg)?;
    let mut net =
        netdesc::build_network::<f64>(&desc, cfg.parametrization, cfg.grad_mode, cfg.seed)?;
    let data = train::load_train_data::<f64>(&cfg)?;
    let take = cfg.batch_size.min(data.len());
    let indices: Vec<usize> = (0..take).collect();
    let batch = data.images.select_batch(&indices);
    let labels = &data.labels[..take];
    let report = nn_engine::grad_check(&mut net, &batch, labels, 1e-5, 1e-5)?;
    match flags.format {
        ReportFormat::Text => println!(
            "checked {} coordinates: max rel err {:.3e} at {}[{}] -> {}",
            report.checked,
            report.max_rel_err,
            report.worst_param,
            report.worst_offset,
            if report.passed { "pass" } else { "FAIL" }
        ),
        ReportFormat::Structured => println!(
            "{}",
            render_record(&[
                ("checked", report.checked.to_string()),
                ("max_rel_err", report.max_rel_err.to_string()),
                ("worst_param", report.worst_param.clone()),
                ("worst_offset", report.worst_offset.to_string()),
                ("passed", report.passed.to_string()),
            ])
        ),
    }
    if report.passed {
        Ok(())
    } else {
        Err(CliError::Check(format!(
            "gradient check failed: max rel err {:.3e} (threshold 1e-5); \
             note the averaged mode is count-scaled by design, use --grad-mode sum for exact gradients",
            report.max_rel_err
        )))
    }
}

fn parse_triple(what: &str, value: &str) -> Result<(usize, usize, usize), CliError> {
    let parts: Vec<&str> = value.split('x').collect();
    let parsed: Option<Vec<usize>> = if parts.len() == 3 {
        parts.iter().map(|p| p.trim().parse().ok()).collect()
    } else {
        None
    };
    match parsed {
        Some(d) => Ok((d[0], d[1], d[2])),
        None => Err(CliError::Usage(format!(
            "{what}: expected AxBxC, got `{value}`"
        ))),
    }
}

fn cmd_ratio(args: &[String], format: ReportFormat) -> Result<(), CliError> {
    let [shape, grid, strides] = args else {
        return Err(CliError::Usage(
            "ratio expects <S1xS2xC> <K1xK2xK3> <XxYxZ>".into(),
        ));
    };
    let (s1, s2, c) = parse_triple("filter shape", shape)?;
    let (k1, k2, k3) = parse_triple("grid", grid)?;
    let (x, y, z) = parse_triple("strides", strides)?;
    let spec = FilterMapSpec::new(
        FilterShape::new(s1, s2, c),
        FilterGrid::new(k1, k2, k3),
        ExtractionStrides::new(x, y, z),
    )?;
    let (m1, m2, mc) = spec.map_dims();
    let filters = spec.filter_count();
    let independent = spec.bank_len();
    let map_params = spec.map_len();
    let ratio = spec.param_ratio();
    match format {
        ReportFormat::Text => {
            println!(
                "{filters} filters of {s1}x{s2}x{c} from a {m1}x{m2}x{mc} map: \
                 independent {independent}, map {map_params}, ratio {ratio}"
            );
        }
        ReportFormat::Structured => println!(
            "{}",
            render_record(&[
                ("filters", filters.to_string()),
                ("map_dims", format!("{m1}x{m2}x{mc}")),
                ("independent_params", independent.to_string()),
                ("map_params", map_params.to_string()),
                ("ratio", ratio.to_string()),
            ])
        ),
    }
    Ok(())
}

fn dispatch() -> Result<(), CliError> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let (command, positionals, flags) = parse_args(&args)?;
    match command.as_str() {
        "plan" => match positionals.as_slice() {
            [net] => cmd_plan(Path::new(net), flags.format),
            _ => Err(CliError::Usage("plan expects one network file".into())),
        },
        "train" => match positionals.as_slice() {
            [cfg] => cmd_train(Path::new(cfg), &flags),
            _ => Err(CliError::Usage(
                "train expects one run configuration".into(),
            )),
        },
        "eval" => cmd_eval(&positionals, flags.format),
        "gradcheck" => match positionals.as_slice() {
            [cfg] => cmd_gradcheck(Path::new(cfg), &flags),
            _ => Err(CliError::Usage(
                "gradcheck expects one run configuration".into(),
            )),
        },
        "ratio" => cmd_ratio(&positionals, flags.format),
        other => Err(CliError::Usage(format!("unknown command `{other}`"))),
    }
}

fn main() -> ExitCode {
    match dispatch() {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}\n\n{USAGE}");
            ExitCode::FAILURE
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}
