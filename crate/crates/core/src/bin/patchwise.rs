//! Command-line front end. Every subcommand is a thin adapter over the
//! library; failures print one `error: <kind>: <message>` line and exit 1.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use patchwise::ablate::{run_axis, write_ablation_csv, Axis};
use patchwise::config::RunConfig;
use patchwise::data::{generate_benchmark, load_dataset, save_scenes, Domain, Manifest, CLASS_NAMES};
use patchwise::disparity::{disparity_matrix, exact_disparity, pyramid_disparity_breakdown};
use patchwise::eval::{dump_predictions, evaluate, write_report_csv};
use patchwise::fda::translate;
use patchwise::grid::PatchGrid;
use patchwise::imageio::{read_labels, read_rgb, write_rgb};
use patchwise::pairing::{mine_pairs, LabelSource, PairSet};
use patchwise::pipeline::{prepare_data, run, write_outputs};
use patchwise::segnet::ModelParams;

#[derive(Parser)]
#[command(name = "patchwise", version, about = "Patch-wise contrastive domain adaptation toolkit")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run config; defaults apply to missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set train.max_iters=500`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Global seed (for generate-data: the benchmark seed).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Where outputs and the resolved config go.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Strategy {
    Pyramid,
    Exact,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic two-domain benchmark as PNGs.
    GenerateData,
    /// Fourier style translation of one image towards another.
    Translate {
        source: PathBuf,
        style: PathBuf,
        /// Output PNG; defaults to `<out-dir>/translated.png`.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Defaults to `train.fda_window_ratio`.
        #[arg(long)]
        window_ratio: Option<f64>,
    },
    /// Disparity between two equally sized label PNGs.
    Disparity {
        a: PathBuf,
        b: PathBuf,
        #[arg(long, value_enum, default_value = "pyramid")]
        strategy: Strategy,
    },
    /// Mine contrastive pairs between two label maps, one line per pair.
    MinePairs {
        query: PathBuf,
        candidates: PathBuf,
        #[arg(long, default_value_t = 0)]
        query_id: usize,
        #[arg(long, default_value_t = 1)]
        candidate_id: usize,
        #[arg(long, default_value = "GROUND_TRUTH")]
        label_source: LabelSource,
    },
    /// Two-phase training; writes checkpoints, metrics and a report.
    Train,
    /// Score a checkpoint on `<data>/images` + `<data>/labels`.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Also write palette PNGs of every prediction.
        #[arg(long)]
        dump: bool,
    },
    /// Sweep one or more ablation axes; one CSV row per cell.
    Ablate {
        #[arg(long = "axis", required = true)]
        axes: Vec<Axis>,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
    },
}

struct CliError {
    kind: &'static str,
    message: String,
}

impl<E: Into<patchwise::Error>> From<E> for CliError {
    fn from(e: E) -> Self {
        let e = e.into();
        CliError {
            kind: e.kind(),
            message: e.to_string(),
        }
    }
}

fn io_at(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError {
        kind: "io",
        message: format!("{}: {e}", path.display()),
    }
}

fn resolve(common: &Common, seed_key: &str) -> Result<RunConfig, CliError> {
    let mut overrides = common.overrides.clone();
    if let Some(s) = common.seed {
        overrides.push(format!("{seed_key}={s}"));
    }
    Ok(match &common.config {
        Some(p) => RunConfig::load(p, &overrides)?,
        None => RunConfig::default().with_overrides(&overrides)?,
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.message.replace('\n', " ");
            eprintln!("error: {}: {msg}", e.kind);
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let c = &cli.common;
    let out = &c.out_dir;
    match cli.command {
        Command::GenerateData => {
            let cfg = resolve(c, "data.seed")?;
            let b = generate_benchmark(&cfg.data);
            save_scenes(&out.join("source"), &b.source)?;
            save_scenes(&out.join("target"), &b.target)?;
            save_scenes(&out.join("val"), &b.target_val)?;
            let manifest = toml::to_string(&Manifest::new(&cfg.data)).expect("manifest serializes");
            let path = out.join("manifest.toml");
            std::fs::write(&path, manifest).map_err(io_at(&path))?;
            cfg.write_resolved(out)?;
            println!(
                "wrote {} source, {} target, {} val scenes to {}",
                b.source.len(),
                b.target.len(),
                b.target_val.len(),
                out.display()
            );
        }
        Command::Translate {
            source,
            style,
            output,
            window_ratio,
        } => {
            let cfg = resolve(c, "seed")?;
            let r = window_ratio.unwrap_or(cfg.train.fda_window_ratio);
            let img = translate(&read_rgb(&source)?, &read_rgb(&style)?, r)?;
            let path = output.unwrap_or_else(|| out.join("translated.png"));
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(io_at(dir))?;
            }
            write_rgb(&path, &img)?;
            println!("{}", path.display());
        }
        Command::Disparity { a, b, strategy } => {
            let cfg = resolve(c, "seed")?;
            let (la, lb) = (read_labels(&a)?, read_labels(&b)?);
            match strategy {
                Strategy::Pyramid => {
                    let d = pyramid_disparity_breakdown(&la, &lb, cfg.net.num_classes)?;
                    println!("D={}", d.total);
                    println!("levels={},{},{}", d.levels[0], d.levels[1], d.levels[2]);
                }
                Strategy::Exact => println!("D={}", exact_disparity(&la, &lb)?),
            }
        }
        Command::MinePairs {
            query,
            candidates,
            query_id,
            candidate_id,
            label_source,
        } => {
            let cfg = resolve(c, "seed")?;
            let p = &cfg.train.pairing;
            let (lq, lc) = (read_labels(&query)?, read_labels(&candidates)?);
            let grid = PatchGrid::new(lq.width(), lq.height(), p.patch_width, p.patch_height)?;
            let d = disparity_matrix(&lq, &lc, &grid, cfg.net.num_classes, p.strategy)?;
            let mined = mine_pairs(&d, p.alpha, p.beta, p.negatives, cfg.seed)?;
            let stdout = std::io::stdout();
            let mut w = stdout.lock();
            for m in &mined {
                let line = PairSet::from_mined(query_id, candidate_id, m, label_source).to_line();
                writeln!(w, "{line}").map_err(io_at(Path::new("<stdout>")))?;
            }
        }
        Command::Train => {
            let cfg = resolve(c, "seed")?;
            cfg.write_resolved(out)?;
            let data = prepare_data(&cfg)?;
            let outcome = run(&cfg, &data)?;
            write_outputs(out, &cfg, &data, &outcome)?;
            for (name, phase) in [("phase1", &outcome.phase1), ("phase2", &outcome.phase2)] {
                if let Some(m) = phase.final_val_miou() {
                    println!("{name} val mIoU {m:.4}");
                }
            }
        }
        Command::Eval { checkpoint, data, dump } => {
            let cfg = resolve(c, "seed")?;
            cfg.write_resolved(out)?;
            let params = ModelParams::load(&checkpoint)?;
            let nc = params.config().num_classes;
            let scenes = load_dataset(&data.join("images"), &data.join("labels"), nc, Domain::Target)?;
            let (_, report) = evaluate(&params, scenes.iter().map(|s| (&s.image, &s.labels)))?;
            let path = out.join("report.csv");
            let mut w = BufWriter::new(File::create(&path).map_err(io_at(&path))?);
            write_report_csv(&mut w, &report, &CLASS_NAMES)?;
            w.flush().map_err(io_at(&path))?;
            if dump {
                dump_predictions(&out.join("predictions"), &params, scenes.iter().map(|s| (s.id, &s.image)))?;
            }
            println!("mIoU {:.4}", report.miou);
        }
        Command::Ablate { axes, seeds } => {
            let cfg = resolve(c, "seed")?;
            cfg.write_resolved(out)?;
            let data = prepare_data(&cfg)?;
            let mut rows = Vec::new();
            for axis in axes {
                rows.extend(run_axis(axis, &cfg, &data, &seeds)?);
            }
            let path = out.join("ablation.csv");
            let mut buf = Vec::new();
            write_ablation_csv(&mut buf, &rows).expect("writing to memory");
            std::fs::write(&path, &buf).map_err(io_at(&path))?;
            print!("{}", String::from_utf8_lossy(&buf));
        }
    }
    Ok(())
}
