//! Command-line driver for the collaborative BEV perception simulator.
//!
//! Exit codes: 0 success, 1 run error, 2 check failure.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use coopbev_core::harness::{
    ablation, run, run_gradcheck, sweep_bandwidth, sweep_robustness, write_run_outputs,
    RobustnessAxis, RunConfig, RunMode,
};
use coopbev_core::world::{generate_scenario, occlusion_scenario, GenConfig, Scenario};

#[derive(Parser)]
#[command(
    name = "coopbev",
    about = "Deterministic multi-agent collaborative BEV perception simulator",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline once and write frames.csv + summary.json.
    Run(RunArgs),
    /// Sweep the selection threshold and emit the bandwidth-accuracy table.
    SweepBandwidth(SweepBandwidthArgs),
    /// Sweep one robustness axis (latency, pose noise, token drop).
    SweepRobustness(SweepRobustnessArgs),
    /// Toggle the align transformation and the historical agent.
    Ablate(AblateArgs),
    /// Verify analytic gradients against finite differences.
    Gradcheck,
    /// Generate a scenario file from a preset.
    GenScenario(GenScenarioArgs),
}

#[derive(Args)]
struct CommonRunArgs {
    /// Scenario JSON file.
    #[arg(long)]
    scenario: PathBuf,
    /// Selection-mask threshold.
    #[arg(long, default_value_t = 0.01)]
    threshold: f64,
    /// Saliency/dynamics blend rate.
    #[arg(long, default_value_t = 1.0)]
    rho: f64,
    /// Temporal interval in frames.
    #[arg(long, default_value_t = 1)]
    tau: u32,
    /// Injected transmission latency in milliseconds.
    #[arg(long, default_value_t = 0)]
    latency_ms: u32,
    /// Gaussian std added to transmitted positions (meters).
    #[arg(long, default_value_t = 0.0)]
    pos_std: f64,
    /// Gaussian std added to transmitted rotations (radians).
    #[arg(long, default_value_t = 0.0)]
    rot_std: f64,
    /// Probability of losing each transmitted token entry.
    #[arg(long, default_value_t = 0.0)]
    drop_prob: f64,
    /// Seed for the fault injectors.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory (defaults under $COOPBEV_OUT or ./out).
    #[arg(long)]
    out: Option<PathBuf>,
}

impl CommonRunArgs {
    fn build(&self, mode: RunMode) -> Result<RunConfig<f64>> {
        let scenario = Scenario::<f64>::load(&self.scenario)
            .with_context(|| format!("loading scenario {}", self.scenario.display()))?;
        let mut config = RunConfig::new(scenario, mode);
        config.stt = coopbev_core::stt::SttConfig::new(self.rho, self.threshold, self.tau)?;
        config.noise.latency_ms = self.latency_ms;
        config.noise.pos_std_m = self.pos_std;
        config.noise.rot_std_rad = self.rot_std;
        config.noise.token_drop_prob = self.drop_prob;
        config.noise.seed = self.seed;
        Ok(config)
    }

    fn out_dir(&self, leaf: &str) -> PathBuf {
        match &self.out {
            Some(p) => p.clone(),
            None => {
                let root = std::env::var_os("COOPBEV_OUT")
                    .map(PathBuf::from)
                    .unwrap_or_else(|| PathBuf::from("out"));
                root.join(leaf)
            }
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    DenseBaseline,
    Stt,
    NoFusion,
    LateFusion,
}

impl From<ModeArg> for RunMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::DenseBaseline => RunMode::DenseBaseline,
            ModeArg::Stt => RunMode::Stt,
            ModeArg::NoFusion => RunMode::NoFusion,
            ModeArg::LateFusion => RunMode::LateFusion,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonRunArgs,
    /// Transmission/fusion mode.
    #[arg(long, value_enum, default_value = "stt")]
    mode: ModeArg,
    /// Also write detections.rec and ground_truth.rec
    /// (line-delimited: frame,x,y,l,w,yaw,score).
    #[arg(long, default_value_t = false)]
    dump_boxes: bool,
}

#[derive(Args)]
struct SweepBandwidthArgs {
    #[command(flatten)]
    common: CommonRunArgs,
    /// Thresholds to sweep (comma separated).
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.0001, 0.001, 0.005, 0.01, 0.05, 0.1, 0.3, 0.8, 1.0])]
    thresholds: Vec<f64>,
}

#[derive(Args)]
struct SweepRobustnessArgs {
    #[command(flatten)]
    common: CommonRunArgs,
    /// Axis: latency_ms | pos_std | rot_std | drop_prob.
    #[arg(long)]
    axis: String,
    /// Values along the axis (comma separated).
    #[arg(long, value_delimiter = ',')]
    values: Vec<f64>,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    common: CommonRunArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    Sparse,
    Dense,
    Mixed,
    Occlusion,
}

#[derive(Args)]
struct GenScenarioArgs {
    /// Scenario preset.
    #[arg(long, value_enum, default_value = "sparse")]
    preset: PresetArg,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Override the frame count.
    #[arg(long)]
    frames: Option<u32>,
    /// Output scenario file.
    #[arg(long)]
    out: PathBuf,
}

fn real_main() -> Result<ExitCode> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run(args) => {
            let mut config = args.common.build(args.mode.into())?;
            config.keep_boxes = args.dump_boxes;
            let result = run(&config)?;
            let dir = args.common.out_dir(&format!("run-{}", result.mode.as_str()));
            write_run_outputs(&dir, &config, &result)?;
            if args.dump_boxes {
                use coopbev_core::detect::write_box_records;
                let mut dets = Vec::new();
                let mut gts = Vec::new();
                for (frame, (d, g)) in
                    result.detections.iter().zip(&result.ground_truth).enumerate()
                {
                    write_box_records(&mut dets, frame as u32, d)?;
                    write_box_records(&mut gts, frame as u32, g)?;
                }
                std::fs::write(dir.join("detections.rec"), dets)?;
                std::fs::write(dir.join("ground_truth.rec"), gts)?;
            }
            eprintln!(
                "mode {} | frames {} | total bytes {} | wall {} ms",
                result.mode.as_str(),
                result.rows.len(),
                result.total_bytes,
                result.wall_ms
            );
            println!(
                "ap50 {} | ap70 {} | outputs in {}",
                result
                    .mean_ap50
                    .overall
                    .map(|v| format!("{v:.4}"))
                    .unwrap_or_else(|| "n/a".into()),
                result
                    .mean_ap70
                    .overall
                    .map(|v| format!("{v:.4}"))
                    .unwrap_or_else(|| "n/a".into()),
                dir.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::SweepBandwidth(args) => {
            let config = args.common.build(RunMode::Stt)?;
            let sweep = sweep_bandwidth(&config, &args.thresholds)?;
            let dir = args.common.out_dir("sweep-bandwidth");
            std::fs::create_dir_all(&dir)?;
            let mut csv = String::from(
                "threshold,mean_cells_per_frame,mean_comm_log2mb,compression,ap50,ap70\n",
            );
            for row in &sweep.rows {
                csv.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    row.threshold,
                    row.mean_cells_per_frame,
                    row.mean_comm_log2mb.map(|v| v.to_string()).unwrap_or_default(),
                    row.compression.map(|v| v.to_string()).unwrap_or_default(),
                    row.ap50.map(|v| v.to_string()).unwrap_or_default(),
                    row.ap70.map(|v| v.to_string()).unwrap_or_default(),
                ));
            }
            csv.push_str(&format!(
                "dense,,{},1,{},{}\n",
                sweep.dense_comm_log2mb.map(|v| v.to_string()).unwrap_or_default(),
                sweep.dense_ap50.map(|v| v.to_string()).unwrap_or_default(),
                sweep.dense_ap70.map(|v| v.to_string()).unwrap_or_default(),
            ));
            std::fs::write(dir.join("bandwidth.csv"), &csv)?;
            print!("{csv}");
            Ok(ExitCode::SUCCESS)
        }
        Command::SweepRobustness(args) => {
            let axis = RobustnessAxis::parse(&args.axis)?;
            if args.values.is_empty() {
                anyhow::bail!("--values must not be empty");
            }
            let config = args.common.build(RunMode::Stt)?;
            let sweep = sweep_robustness(&config, axis, &args.values)?;
            let dir = args.common.out_dir("sweep-robustness");
            std::fs::create_dir_all(&dir)?;
            let mut csv = format!("{},ap50,ap70,total_bytes\n", axis.as_str());
            for row in &sweep.rows {
                csv.push_str(&format!(
                    "{},{},{},{}\n",
                    row.value,
                    row.ap50.map(|v| v.to_string()).unwrap_or_default(),
                    row.ap70.map(|v| v.to_string()).unwrap_or_default(),
                    row.total_bytes,
                ));
            }
            std::fs::write(dir.join(format!("robustness-{}.csv", axis.as_str())), &csv)?;
            print!("{csv}");
            Ok(ExitCode::SUCCESS)
        }
        Command::Ablate(args) => {
            let config = args.common.build(RunMode::Stt)?;
            let table = ablation(&config)?;
            let dir = args.common.out_dir("ablation");
            std::fs::create_dir_all(&dir)?;
            let mut csv = String::from("at,temporal,ap50,ap70,max_fusion_inputs\n");
            for row in &table.rows {
                csv.push_str(&format!(
                    "{},{},{},{},{}\n",
                    u8::from(row.at),
                    u8::from(row.temporal),
                    row.ap50.map(|v| v.to_string()).unwrap_or_default(),
                    row.ap70.map(|v| v.to_string()).unwrap_or_default(),
                    row.max_fusion_inputs,
                ));
            }
            std::fs::write(dir.join("ablation.csv"), &csv)?;
            print!("{csv}");
            Ok(ExitCode::SUCCESS)
        }
        Command::Gradcheck => {
            let report = run_gradcheck()?;
            print!("{}", report.render());
            if report.pass() {
                Ok(ExitCode::SUCCESS)
            } else {
                Ok(ExitCode::from(2))
            }
        }
        Command::GenScenario(args) => {
            let scenario: Scenario<f64> = match args.preset {
                PresetArg::Sparse | PresetArg::Dense | PresetArg::Mixed => {
                    let mut cfg = match args.preset {
                        PresetArg::Sparse => GenConfig::sparse(),
                        PresetArg::Dense => GenConfig::dense(),
                        PresetArg::Mixed => GenConfig::mixed(),
                        PresetArg::Occlusion => unreachable!(),
                    };
                    if let Some(frames) = args.frames {
                        cfg.frames = frames;
                    }
                    generate_scenario(&cfg, args.seed)?
                }
                PresetArg::Occlusion => occlusion_scenario(args.frames.unwrap_or(6)),
            };
            scenario.save(&args.out)?;
            println!(
                "wrote {} ({} agents, {} objects, {} frames)",
                args.out.display(),
                scenario.agents.len(),
                scenario.objects.len(),
                scenario.frames
            );
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match real_main() {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
