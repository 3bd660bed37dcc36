use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pcc_geo::codec::{
    decode, encode, parse_sweep_csv, rd_sweep, read_config, read_header, render_rd_svg,
    run_condition_suite, with_normals, ConditionPreset, EncodeOptions, RdSweep, SuiteConfig,
    PRESETS,
};
use pcc_geo::geometry::{from_voxels, read_ply_file, to_voxels, write_ply_file, PointCloud};
use pcc_geo::metrics::{bd_psnr, d1_mse, d2_mse, format_psnr, geometry_psnr};
use pcc_geo::model::{CompressionModel, ModelConfig};
use pcc_geo::nn::AdamParams;
use pcc_geo::partition::{block_to_tensor, partition_blocks};
use pcc_geo::synthetic::training_blocks;
use pcc_geo::tensor::Tensor4D;
use pcc_geo::threshold::Metric;
use pcc_geo::train::{sequential_train, train_model, TrainConfig, DEFAULT_FINE_TUNE_FRACTION};
use pcc_geo::{Error, Result};

/// Learned point-cloud geometry codec.
#[derive(Parser)]
#[command(name = "pcc-geo", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Block edge in voxels.
    #[arg(long, global = true)]
    block_size: Option<usize>,
    /// Experimental condition c1..c6.
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Rate-distortion tradeoff.
    #[arg(long, global = true)]
    lambda: Option<f64>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Thresholding metric, d1 or d2.
    #[arg(long, global = true)]
    metric: Option<String>,
    /// `key = value` file whose entries override the flags above.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Round coordinates and drop duplicate points.
    Voxelize { input: PathBuf, output: PathBuf },
    /// Occupied blocks and points per block.
    PartitionStats { input: PathBuf },
    /// Train one model.
    Train {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        /// Training log CSV.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Train a chain of models from high to low rate.
    TrainSeq {
        /// Comma-separated, strictly descending.
        #[arg(long, value_delimiter = ',', required = true)]
        lambdas: Vec<f64>,
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        /// Fine-tuning steps as a fraction of the first model's.
        #[arg(long, default_value_t = DEFAULT_FINE_TUNE_FRACTION)]
        fraction: f64,
    },
    /// Compress a PLY cloud into a bitstream.
    Encode {
        input: PathBuf,
        model: PathBuf,
        output: PathBuf,
    },
    /// Reconstruct a PLY cloud from a bitstream.
    Decode {
        input: PathBuf,
        model: PathBuf,
        output: PathBuf,
    },
    /// D1/D2 of a decoded cloud against its original, as CSV.
    Metrics {
        decoded: PathBuf,
        reference: PathBuf,
        /// Bitstream the decoded cloud came from, for bpp.
        #[arg(long)]
        bitstream: Option<PathBuf>,
        #[arg(long)]
        id: Option<String>,
    },
    /// BD-PSNR of one sweep CSV over another.
    Bdpsnr {
        test: PathBuf,
        reference: PathBuf,
        /// Leave out the lowest-rate point of the test curve.
        #[arg(long)]
        drop_lowest: bool,
    },
    /// One RD point per model.
    RdSweep {
        input: PathBuf,
        #[arg(required = true)]
        models: Vec<PathBuf>,
        /// λ of each model, in the same order.
        #[arg(long, value_delimiter = ',')]
        lambdas: Vec<f64>,
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Train conditions, sweep clouds and tabulate BD-PSNR.
    Suite {
        #[arg(required = true)]
        clouds: Vec<PathBuf>,
        #[arg(long, value_delimiter = ',', required = true)]
        lambdas: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        conditions: Vec<String>,
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        /// Reference sweep CSV for clouds, as `cloud=path`.
        #[arg(long)]
        reference: Vec<String>,
    },
}

#[derive(Args)]
struct DataArgs {
    #[arg(long, default_value_t = 200)]
    steps: usize,
    /// Latent channels.
    #[arg(long, default_value_t = 8)]
    channels: usize,
    /// Adam learning rate.
    #[arg(long, default_value_t = AdamParams::default().lr)]
    lr: f64,
    /// Synthetic training blocks, used when no training cloud is given.
    #[arg(long, default_value_t = 32)]
    blocks: usize,
    /// Training clouds to carve blocks from instead of synthetic data.
    #[arg(long = "train-cloud")]
    train_clouds: Vec<PathBuf>,
}

struct Settings {
    block_size: usize,
    preset: ConditionPreset,
    lambda: f64,
    seed: u64,
    metric: Metric,
    block_size_given: bool,
}

fn settings(g: &Global) -> Result<Settings> {
    let mut map: BTreeMap<String, String> = BTreeMap::new();
    let mut put = |k: &str, v: Option<String>| {
        if let Some(v) = v {
            map.insert(k.to_string(), v);
        }
    };
    put("block-size", g.block_size.map(|v| v.to_string()));
    put("preset", g.preset.clone());
    put("lambda", g.lambda.map(|v| v.to_string()));
    put("seed", g.seed.map(|v| v.to_string()));
    put("metric", g.metric.clone());
    if let Some(path) = &g.config {
        map.extend(read_config(path)?);
    }
    let num = |key: &str, default: &str| -> Result<String> {
        Ok(map.get(key).cloned().unwrap_or_else(|| default.to_string()))
    };
    let bad = |key: &str, v: &str| Error::Usage(format!("invalid {key} {v:?}"));
    let bs = num("block-size", "64")?;
    let lambda = num("lambda", "1")?;
    let seed = num("seed", "0")?;
    Ok(Settings {
        block_size: bs.parse().map_err(|_| bad("block size", &bs))?,
        preset: num("preset", "c6")?.parse()?,
        lambda: lambda.parse().map_err(|_| bad("lambda", &lambda))?,
        seed: seed.parse().map_err(|_| bad("seed", &seed))?,
        metric: num("metric", "d1")?.parse()?,
        block_size_given: map.contains_key("block-size"),
    })
}

fn model_config(s: &Settings, channels: usize) -> ModelConfig {
    ModelConfig {
        model_kind: s.preset.model_kind,
        transform_kind: s.preset.transform_kind,
        channels,
        block_size: s.block_size,
    }
}

fn dataset(s: &Settings, data: &DataArgs) -> Result<Vec<Tensor4D>> {
    if data.train_clouds.is_empty() {
        return training_blocks(data.blocks, s.block_size, 1, s.seed);
    }
    let mut out = Vec::new();
    for path in &data.train_clouds {
        let grid = partition_blocks(&to_voxels(&read_ply_file(path)?), s.block_size as u32)?;
        for (_, local) in grid.iter() {
            out.push(block_to_tensor(local, s.block_size as u32)?);
        }
    }
    Ok(out)
}

fn train_config(s: &Settings, data: &DataArgs) -> TrainConfig {
    let mut cfg = TrainConfig::new(model_config(s, data.channels), s.lambda, data.steps, s.seed);
    cfg.focal = s.preset.focal();
    cfg.adam.lr = data.lr;
    cfg
}

fn load_model(path: &Path, s: &Settings) -> Result<CompressionModel> {
    let model = CompressionModel::load(path)?;
    if s.block_size_given && model.config().block_size != s.block_size {
        return Err(Error::Usage(format!(
            "model codes {}^3 blocks, --block-size is {}",
            model.config().block_size,
            s.block_size
        )));
    }
    Ok(model)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents)?;
    Ok(())
}

fn sweep_series(name: &str, sweep: &RdSweep) -> [(String, Vec<pcc_geo::metrics::RdPoint>); 2] {
    [
        (format!("{name} D1"), sweep.rd_points(Metric::D1)),
        (format!("{name} D2"), sweep.rd_points(Metric::D2)),
    ]
}

fn run(cli: Cli) -> Result<()> {
    let s = settings(&cli.global)?;
    match cli.command {
        Command::Voxelize { input, output } => {
            let pc = read_ply_file(&input)?;
            let vox = from_voxels(&to_voxels(&pc));
            write_ply_file(&vox, &output)?;
            println!(
                "{} points -> {} voxels at bit depth {}",
                pc.len(),
                vox.len(),
                vox.bit_depth()
            );
        }
        Command::PartitionStats { input } => {
            let pc = read_ply_file(&input)?;
            let grid = partition_blocks(&to_voxels(&pc), s.block_size as u32)?;
            let counts: Vec<usize> = grid.iter().map(|(_, b)| b.len()).collect();
            let total: usize = counts.iter().sum();
            println!("block_size,blocks,voxels,min_per_block,mean_per_block,max_per_block");
            println!(
                "{},{},{},{},{:.2},{}",
                s.block_size,
                counts.len(),
                total,
                counts.iter().min().unwrap_or(&0),
                total as f64 / counts.len().max(1) as f64,
                counts.iter().max().unwrap_or(&0)
            );
        }
        Command::Train { out, data, log } => {
            let blocks = dataset(&s, &data)?;
            let (model, train_log) = train_model(&train_config(&s, &data), &blocks)?;
            model.save(&out)?;
            if let Some(log) = log {
                write(&log, train_log.to_csv())?;
            }
            println!(
                "trained {} steps in {:.1}s, final loss {:.4}, model {:016x}",
                train_log.steps.len(),
                train_log.wall_time.as_secs_f64(),
                train_log.final_loss,
                model.hash()
            );
        }
        Command::TrainSeq {
            lambdas,
            out_dir,
            data,
            fraction,
        } => {
            let blocks = dataset(&s, &data)?;
            fs::create_dir_all(&out_dir)?;
            let chain = sequential_train(&lambdas, &train_config(&s, &data), &blocks, fraction)?;
            for (i, c) in chain.iter().enumerate() {
                c.model.save(out_dir.join(format!("model_{i}.bin")))?;
                write(&out_dir.join(format!("train_{i}.csv")), c.log.to_csv())?;
                println!(
                    "lambda {} : {} steps, final loss {:.4}",
                    c.lambda,
                    c.log.steps.len(),
                    c.log.final_loss
                );
            }
        }
        Command::Encode {
            input,
            model,
            output,
        } => {
            let model = load_model(&model, &s)?;
            let pc = read_ply_file(&input)?;
            let enc = encode(&pc, &model, EncodeOptions::from_preset(&s.preset, s.metric))?;
            write(&output, &enc.bytes)?;
            println!(
                "{} blocks, {} bytes, {:.4} bpp",
                enc.blocks.len(),
                enc.bytes.len(),
                enc.bpp(pc.len())
            );
        }
        Command::Decode {
            input,
            model,
            output,
        } => {
            let model = load_model(&model, &s)?;
            let pc = decode(&fs::read(&input)?, &model)?;
            write_ply_file(&pc, &output)?;
            println!("{} points", pc.len());
        }
        Command::Metrics {
            decoded,
            reference,
            bitstream,
            id,
        } => {
            let dec = read_ply_file(&decoded)?;
            let reference = with_normals(&read_ply_file(&reference)?)?;
            let d1 = d1_mse(&dec, &reference)?;
            let d2 = d2_mse(&dec, &reference)?;
            let bd = reference.bit_depth();
            let bpp = match bitstream {
                Some(p) => {
                    let bytes = fs::read(p)?;
                    read_header(&bytes)?;
                    format!(
                        "{:.6}",
                        bytes.len() as f64 * 8.0 / reference.len().max(1) as f64
                    )
                }
                None => "n/a".into(),
            };
            println!("cloud_id,d1_mse,d1_psnr,d2_mse,d2_psnr,bpp");
            println!(
                "{},{},{},{},{},{}",
                id.unwrap_or_else(|| decoded.display().to_string()),
                d1,
                format_psnr(geometry_psnr(d1, bd)?),
                d2.mse,
                format_psnr(geometry_psnr(d2.mse, bd)?),
                bpp
            );
        }
        Command::Bdpsnr {
            test,
            reference,
            drop_lowest,
        } => {
            let t = parse_sweep_csv(&fs::read_to_string(test)?)?;
            let r = parse_sweep_csv(&fs::read_to_string(reference)?)?;
            let mut lines = Vec::new();
            for metric in [Metric::D1, Metric::D2] {
                let v = bd_psnr(&t.curve(metric, drop_lowest)?, &r.curve(metric, false)?)?;
                lines.push(format!("{metric},{v:.4}"));
            }
            println!("metric,bd_psnr_db\n{}", lines.join("\n"));
        }
        Command::RdSweep {
            input,
            models,
            lambdas,
            csv,
            svg,
        } => {
            if !lambdas.is_empty() && lambdas.len() != models.len() {
                return Err(Error::Usage(format!(
                    "{} lambdas for {} models",
                    lambdas.len(),
                    models.len()
                )));
            }
            let pc = read_ply_file(&input)?;
            let loaded = models
                .iter()
                .enumerate()
                .map(|(i, p)| {
                    Ok((
                        lambdas.get(i).copied().unwrap_or(i as f64),
                        load_model(p, &s)?,
                    ))
                })
                .collect::<Result<Vec<_>>>()?;
            let sweep = rd_sweep(
                &pc,
                &loaded,
                EncodeOptions::from_preset(&s.preset, s.metric),
            )?;
            for w in &sweep.warnings {
                eprintln!("warning: {w}");
            }
            match csv {
                Some(p) => write(&p, sweep.to_csv())?,
                None => print!("{}", sweep.to_csv()),
            }
            if let Some(p) = svg {
                write(
                    &p,
                    render_rd_svg(
                        &input.display().to_string(),
                        "PSNR (dB)",
                        &sweep_series(s.preset.name, &sweep),
                    ),
                )?;
            }
        }
        Command::Suite {
            clouds,
            lambdas,
            conditions,
            out_dir,
            data,
            reference,
        } => {
            let conditions = if conditions.is_empty() {
                PRESETS.to_vec()
            } else {
                conditions
                    .iter()
                    .map(|c| c.parse())
                    .collect::<Result<Vec<ConditionPreset>>>()?
            };
            let blocks = dataset(&s, &data)?;
            let named = clouds
                .iter()
                .map(|p| {
                    let name = p.file_stem().map_or_else(
                        || p.display().to_string(),
                        |n| n.to_string_lossy().into_owned(),
                    );
                    Ok((name, read_ply_file(p)?))
                })
                .collect::<Result<Vec<(String, PointCloud)>>>()?;
            let mut refs = BTreeMap::new();
            for r in &reference {
                let (name, path) = r
                    .split_once('=')
                    .ok_or_else(|| Error::Usage(format!("reference {r:?} is not cloud=path")))?;
                refs.insert(
                    name.to_string(),
                    parse_sweep_csv(&fs::read_to_string(path)?)?,
                );
            }
            let cfg = SuiteConfig {
                train: train_config(&s, &data),
                lambdas,
                metric: s.metric,
            };
            let report = run_condition_suite(&blocks, &named, &conditions, &cfg, &refs)?;
            fs::create_dir_all(&out_dir)?;
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            for (cloud, sweeps) in &report.sweeps {
                let mut series = Vec::new();
                for (cond, sweep) in sweeps {
                    write(&out_dir.join(format!("{cloud}_{cond}.csv")), sweep.to_csv())?;
                    series.extend(sweep_series(cond, sweep));
                }
                write(
                    &out_dir.join(format!("{cloud}.svg")),
                    render_rd_svg(cloud, "PSNR (dB)", &series),
                )?;
                let (m1, m2) = &report.matrices[cloud];
                write(&out_dir.join(format!("{cloud}_bd_d1.csv")), m1.to_csv())?;
                write(&out_dir.join(format!("{cloud}_bd_d2.csv")), m2.to_csv())?;
                println!("{cloud} D1 BD-PSNR\n{}", m1.to_csv());
                println!("{cloud} D2 BD-PSNR\n{}", m2.to_csv());
            }
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Usage(_) | Error::Config(_) => 2,
        Error::ModelMismatch(_) => 4,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
