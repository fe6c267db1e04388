use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use sgreg::agent::{interval_sweep, simulate, SimConfig, SWEEP_INTERVALS};
use sgreg::bench::{
    kp_ablation, mac_runtime_profile, run_suite, spearman, summarize, write_kp_csv, write_mac_csv, write_pairs_csv,
    write_summary_csv, BenchSuite, MacProfileConfig, Manifest, PRESETS,
};
use sgreg::invariants::{run_all, CheckScale};
use sgreg::metrics::{
    alignment_rmse, gt_corresponded_points, inlier_ratio, node_recall_precision, INLIER_DISTANCE, RMSE_THRESHOLD,
    RRE_THRESHOLD_DEG, RTE_THRESHOLD,
};
use sgreg::objectives::LOG_EPS;
use sgreg::pose::{EMPTY_VOXEL_PENALTY, MIN_PLANE_POINTS, PLANARITY_RATIO};
use sgreg::scene_graph::{
    generate_ground_truth, load_ground_truth, load_scene_graph, save_ground_truth, save_scene_graph,
    synthesize_scene_pair, EdgeConfig, GroundTruthConfig, SceneGenConfig, ScenePair,
};
use sgreg::{register_pair, EncoderConfig, EncoderWeights, PipelineConfig};

const EXIT_USAGE: u8 = 1;
const EXIT_INSUFFICIENT: u8 = 2;

#[derive(Parser, Debug)]
#[command(name = "sgreg", version, about = "Scene graph registration toolkit")]
struct Cli {
    /// TOML config file; command-line flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global seed.
    #[arg(long, global = true, env = "SG_REG_SEED")]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic scene-graph pair and its ground truth.
    Gen(GenArgs),
    /// Register scene graph A into the frame of scene graph B.
    Register(RegisterArgs),
    /// Run the two-agent coarse-to-fine simulator.
    Simulate(SimArgs),
    /// Run benchmark suites and ablations.
    Bench(BenchArgs),
    /// Run the property self-check suite.
    VerifyInvariants(VerifyArgs),
}

#[derive(Args, Debug)]
struct GenArgs {
    /// Output directory for a.json, b.json and gt.json.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Scene preset.
    #[arg(long)]
    preset: Option<String>,
    /// Fraction of objects seen by both agents.
    #[arg(long)]
    overlap: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum EncoderPreset {
    Default,
    /// 132-dimensional message rows.
    Msg132,
}

#[derive(Args, Debug, Clone, Default)]
struct PipelineFlags {
    /// Encoder weight file; seeded weights are used when absent.
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long, value_enum)]
    encoder_preset: Option<EncoderPreset>,
    /// Points sampled per node.
    #[arg(long)]
    k_p: Option<usize>,
    /// Minimum dual-normalized node score.
    #[arg(long)]
    node_threshold: Option<f64>,
    /// Minimum Sinkhorn point score.
    #[arg(long)]
    point_threshold: Option<f64>,
    /// GNC inlier ratio below which the clique solver runs.
    #[arg(long)]
    mac_trigger: Option<f64>,
    /// Clique search budget per level (ms).
    #[arg(long)]
    clique_budget_ms: Option<u64>,
}

#[derive(Args, Debug)]
struct RegisterArgs {
    /// Source scene graph (JSON).
    a: PathBuf,
    /// Target scene graph (JSON).
    b: PathBuf,
    /// Ground-truth file; enables NR/NP/IR/RMSE reporting.
    #[arg(long)]
    gt: Option<PathBuf>,
    /// Write the report as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the correspondences as CSV.
    #[arg(long)]
    correspondences: Option<PathBuf>,
    #[command(flatten)]
    pipeline: PipelineFlags,
}

#[derive(Args, Debug)]
struct SimArgs {
    /// Scene preset used when no graph files are given.
    #[arg(long)]
    preset: Option<String>,
    /// Recorded graph of agent A (requires --graph-b and --gt).
    #[arg(long, requires_all = ["graph_b", "gt"])]
    graph_a: Option<PathBuf>,
    #[arg(long)]
    graph_b: Option<PathBuf>,
    /// Ground truth holding the A-to-B transform.
    #[arg(long)]
    gt: Option<PathBuf>,
    #[arg(long)]
    frames: Option<u32>,
    /// Minimum ticks between dense exchanges; "inf" allows one.
    #[arg(long)]
    dense_interval: Option<f64>,
    /// Register from node centers only.
    #[arg(long)]
    no_dense: bool,
    #[arg(long)]
    min_matches: Option<usize>,
    #[arg(long)]
    pose_window: Option<usize>,
    /// Run report CSV.
    #[arg(long, default_value = "sim_report.csv")]
    out: PathBuf,
    /// Also sweep the dense interval over inf, 9.5, 5.4 and 3.4 ticks on
    /// this many seeds and write the table next to the report.
    #[arg(long)]
    sweep: Option<u64>,
    #[command(flatten)]
    pipeline: PipelineFlags,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Ablation {
    Kp,
    Mac,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Suite preset.
    #[arg(long, default_value = "smoke")]
    suite: String,
    /// Number of seeds (starting at --seed).
    #[arg(long, default_value_t = 10)]
    seeds: u64,
    /// Run an ablation instead of the plain suite.
    #[arg(long, value_enum)]
    ablation: Option<Ablation>,
    /// Sampled point counts for the K_p ablation.
    #[arg(long, value_delimiter = ',', default_value = "256,512,1024")]
    kp: Vec<usize>,
    /// Repeats per ratio for the clique profile.
    #[arg(long)]
    repeats: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = "bench_out")]
    out: PathBuf,
    #[command(flatten)]
    pipeline: PipelineFlags,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    /// Run at acceptance scale instead of the quick scale.
    #[arg(long)]
    full: bool,
}

/// Contents of `--config`.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    seed: Option<u64>,
    preset: Option<String>,
    encoder_preset: Option<EncoderPreset>,
    weights: Option<PathBuf>,
    scene: Option<SceneGenConfig>,
    pipeline: Option<PipelineConfig>,
    ground_truth: Option<GroundTruthConfig>,
    sim: Option<SimConfig>,
    mac: Option<MacProfileConfig>,
}

fn load_config(path: Option<&Path>) -> anyhow::Result<FileConfig> {
    match path {
        None => Ok(FileConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
        }
    }
}

fn pipeline_config(file: &FileConfig, flags: &PipelineFlags) -> anyhow::Result<PipelineConfig> {
    let mut cfg = file.pipeline.clone().unwrap_or_default();
    if let Some(p) = flags.encoder_preset.or(file.encoder_preset) {
        cfg.encoder = match p {
            EncoderPreset::Default => EncoderConfig::default(),
            EncoderPreset::Msg132 => EncoderConfig::message_132(),
        };
    }
    if let Some(v) = flags.k_p {
        cfg.encoder.k_p = v;
    }
    if let Some(v) = flags.node_threshold {
        cfg.matcher.node_threshold = v;
    }
    if let Some(v) = flags.point_threshold {
        cfg.matcher.point_threshold = v;
    }
    if let Some(v) = flags.mac_trigger {
        cfg.estimator.mac_trigger = v;
    }
    if let Some(v) = flags.clique_budget_ms {
        cfg.estimator.clique_budget_ms = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn weights(file: &FileConfig, flags: &PipelineFlags, cfg: &PipelineConfig) -> anyhow::Result<EncoderWeights> {
    match flags.weights.as_ref().or(file.weights.as_ref()) {
        Some(p) => {
            let w = EncoderWeights::load(p).with_context(|| format!("loading weights {}", p.display()))?;
            w.check(&cfg.encoder)?;
            Ok(w)
        }
        None => Ok(EncoderWeights::seeded(&cfg.encoder, cfg.weights_seed)),
    }
}

fn scene_config(file: &FileConfig, preset: Option<&str>) -> anyhow::Result<SceneGenConfig> {
    let name = preset.or(file.preset.as_deref());
    let cfg = match (name, &file.scene) {
        (Some(n), _) => BenchSuite::preset(n, 1)?.scene,
        (None, Some(s)) => s.clone(),
        (None, None) => SceneGenConfig::noisy(),
    };
    Ok(cfg)
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("writing {}", path.display()))?,
    ))
}

fn cmd_gen(args: &GenArgs, file: &FileConfig, seed: u64) -> anyhow::Result<()> {
    let mut scene = scene_config(file, args.preset.as_deref())?;
    if let Some(o) = args.overlap {
        scene.overlap = o;
    }
    let pair = synthesize_scene_pair(seed, &scene)?;
    let gt = generate_ground_truth(
        &pair.a,
        &pair.b,
        &pair.transform,
        &file.ground_truth.unwrap_or_default(),
    );
    create_dir(&args.out)?;
    save_scene_graph(&pair.a, args.out.join("a.json"))?;
    save_scene_graph(&pair.b, args.out.join("b.json"))?;
    save_ground_truth(&gt, args.out.join("gt.json"))?;
    println!(
        "wrote {} ({} nodes), {} ({} nodes), {} ({} true node pairs)",
        args.out.join("a.json").display(),
        pair.a.len(),
        args.out.join("b.json").display(),
        pair.b.len(),
        args.out.join("gt.json").display(),
        gt.node_matches.len()
    );
    Ok(())
}

#[derive(Serialize)]
struct RegisterReport {
    /// Row-major 4 × 4 matrix mapping A into B.
    transform: [[f64; 4]; 4],
    node_matches: usize,
    correspondences: usize,
    inliers: usize,
    strategy: String,
    nr: Option<f64>,
    np: Option<f64>,
    ir: Option<f64>,
    rmse: Option<f64>,
    registered: Option<bool>,
}

/// Marker error for exit code 2.
#[derive(Debug)]
struct Insufficient(String);

impl std::fmt::Display for Insufficient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Insufficient {}

fn cmd_register(args: &RegisterArgs, file: &FileConfig) -> anyhow::Result<()> {
    let cfg = pipeline_config(file, &args.pipeline)?;
    let w = weights(file, &args.pipeline, &cfg)?;
    let a = load_scene_graph(&args.a).with_context(|| format!("loading {}", args.a.display()))?;
    let b = load_scene_graph(&args.b).with_context(|| format!("loading {}", args.b.display()))?;
    let gt = match &args.gt {
        Some(p) => Some(load_ground_truth(p).with_context(|| format!("loading {}", p.display()))?),
        None => None,
    };
    let reg = register_pair(&a, &b, &w, &cfg)?;
    if let Some(p) = &args.correspondences {
        reg.correspondences.write_csv(create(p)?)?;
    }
    println!("node matches: {}", reg.node_matches.len());
    println!("correspondences: {}", reg.correspondences.len());
    let Some(est) = &reg.estimate else {
        return Err(Insufficient(format!(
            "insufficient data: {} correspondences, at least 3 needed",
            reg.correspondences.len()
        ))
        .into());
    };
    let m = est.transform.to_matrix4();
    println!("strategy: {}  inliers: {}", est.strategy.tag(), est.inliers.len());
    println!("transform:");
    for r in 0..4 {
        println!(
            "  {:>12.6} {:>12.6} {:>12.6} {:>12.6}",
            m[(r, 0)],
            m[(r, 1)],
            m[(r, 2)],
            m[(r, 3)]
        );
    }
    let mut report = RegisterReport {
        transform: std::array::from_fn(|r| std::array::from_fn(|c| m[(r, c)])),
        node_matches: reg.node_matches.len(),
        correspondences: reg.correspondences.len(),
        inliers: est.inliers.len(),
        strategy: est.strategy.tag().to_string(),
        nr: None,
        np: None,
        ir: None,
        rmse: None,
        registered: None,
    };
    if let Some(gt) = &gt {
        let (nr, np) = node_recall_precision(&reg.node_matches, gt);
        let ir = inlier_ratio(&reg.correspondences, &gt.true_transform, INLIER_DISTANCE);
        let pts = gt_corresponded_points(gt, |id| a.node(id).map(|n| n.points.as_slice()));
        let rmse = alignment_rmse(&est.transform, &gt.true_transform, &pts);
        println!(
            "NR {nr:.4}  NP {np:.4}  IR {ir:.4}  RMSE {rmse:.4} m  registered {}",
            rmse < RMSE_THRESHOLD
        );
        report.nr = Some(nr);
        report.np = Some(np);
        report.ir = Some(ir);
        report.rmse = Some(rmse);
        report.registered = Some(rmse < RMSE_THRESHOLD);
    }
    if let Some(p) = &args.out {
        fs::write(p, serde_json::to_string_pretty(&report)?).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn cmd_simulate(args: &SimArgs, file: &FileConfig, seed: u64) -> anyhow::Result<()> {
    let pcfg = pipeline_config(file, &args.pipeline)?;
    let w = weights(file, &args.pipeline, &pcfg)?;
    let mut cfg = file.sim.clone().unwrap_or_default();
    if let Some(v) = args.frames {
        cfg.frames = v;
    }
    if let Some(v) = args.dense_interval {
        cfg.dense_interval = v;
    }
    if args.no_dense {
        cfg.dense_enabled = false;
    }
    if let Some(v) = args.min_matches {
        cfg.min_matches = v;
    }
    if let Some(v) = args.pose_window {
        cfg.pose_window = v;
    }
    cfg.validate()?;
    let scene = scene_config(file, args.preset.as_deref())?;
    let pair = match (&args.graph_a, &args.graph_b, &args.gt) {
        (Some(a), Some(b), Some(gt)) => ScenePair {
            a: load_scene_graph(a).with_context(|| format!("loading {}", a.display()))?,
            b: load_scene_graph(b).with_context(|| format!("loading {}", b.display()))?,
            transform: load_ground_truth(gt)
                .with_context(|| format!("loading {}", gt.display()))?
                .true_transform,
        },
        _ => synthesize_scene_pair(seed, &scene)?,
    };
    let report = simulate(&pair, &w, &pcfg, &cfg)?;
    report.write_csv(create(&args.out)?)?;
    let l = &report.ledger;
    println!(
        "frames {}  success rate {:.3}  dense exchanges {:?}",
        report.records.len(),
        report.success_rate(),
        report.dense_exchanges()
    );
    println!(
        "bytes: coarse {}  dense {}  request {}  total {}  per query frame {:.1}",
        l.coarse_total,
        l.dense_total,
        l.request_total,
        l.total(),
        l.per_query_frame()
    );
    println!("wrote {}", args.out.display());
    if let Some(n) = args.sweep {
        let pairs = (seed..seed + n)
            .map(|s| synthesize_scene_pair(s, &scene))
            .collect::<sgreg::Result<Vec<_>>>()?;
        let rows = interval_sweep(&pairs, &SWEEP_INTERVALS, &w, &pcfg, &cfg)?;
        let path = args.out.with_file_name("interval_sweep.csv");
        let mut out = csv_writer(&path)?;
        for r in &rows {
            out.serialize(r)?;
            println!(
                "interval {:>5}  success {:.3}  dense exchanges {}  bytes/frame {:.1}",
                r.dense_interval, r.success_rate, r.dense_exchanges, r.bytes_per_frame
            );
        }
        out.flush()?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn csv_writer(path: &Path) -> anyhow::Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::Writer::from_writer(create(path)?))
}

fn cmd_bench(args: &BenchArgs, file: &FileConfig, seed: u64) -> anyhow::Result<()> {
    let mut suite = BenchSuite::preset(&args.suite, args.seeds)?;
    suite.seeds = (seed..seed + args.seeds).collect();
    suite.pipeline = pipeline_config(file, &args.pipeline)?;
    if let Some(gt) = &file.ground_truth {
        suite.ground_truth = *gt;
    }
    create_dir(&args.out)?;
    let mut manifest = Manifest {
        suites: vec![suite.clone()],
        kp_values: Vec::new(),
        mac: None,
        files: Vec::new(),
    };
    match args.ablation {
        None => {
            let rows = run_suite(&suite)?;
            let summary = summarize(&suite.name, &rows);
            write_pairs_csv(create(&args.out.join("pairs.csv"))?, &rows)?;
            write_summary_csv(create(&args.out.join("summary.csv"))?, std::slice::from_ref(&summary))?;
            manifest.files = vec!["pairs.csv".into(), "summary.csv".into()];
            println!(
                "{}: {} pairs  NR {:.3}  NP {:.3}  IR {:.3}  PIR {:.3}  RR {:.3}  {:.1} ms/pair",
                summary.preset,
                summary.pairs,
                summary.nr,
                summary.np,
                summary.ir,
                summary.pir,
                summary.rr,
                summary.total_ms
            );
        }
        Some(Ablation::Kp) => {
            let rows = kp_ablation(&args.kp, &suite)?;
            write_kp_csv(create(&args.out.join("kp_ablation.csv"))?, &rows)?;
            manifest.kp_values = args.kp.clone();
            manifest.files = vec!["kp_ablation.csv".into()];
            println!(
                "{:>6} {:>16} {:>8} {:>8} {:>8}",
                "K_p", "correspondences", "IR", "PIR", "RR"
            );
            for r in &rows {
                println!(
                    "{:>6} {:>16.1} {:>8.3} {:>8.3} {:>8.3}",
                    r.k_p, r.correspondences, r.ir, r.pir, r.rr
                );
            }
        }
        Some(Ablation::Mac) => {
            let mut mac = file.mac.clone().unwrap_or_default();
            mac.seed = seed;
            if let Some(r) = args.repeats {
                mac.repeats = r;
            }
            let rows = mac_runtime_profile(&mac)?;
            write_mac_csv(create(&args.out.join("mac_profile.csv"))?, &rows)?;
            manifest.mac = Some(mac);
            manifest.files = vec!["mac_profile.csv".into()];
            println!(
                "{:>6} {:>10} {:>10} {:>10} {:>9} {:>8}",
                "ratio", "edges", "graph ms", "clique ms", "RTE m", "exact"
            );
            for r in &rows {
                println!(
                    "{:>6.2} {:>10.0} {:>10.3} {:>10.3} {:>9.4} {:>8}",
                    r.ratio, r.edges, r.graph_ms, r.clique_ms, r.rte, r.exact
                );
            }
            let ratios: Vec<f64> = rows.iter().map(|r| r.ratio).collect();
            let graph: Vec<f64> = rows.iter().map(|r| r.graph_ms).collect();
            println!("graph time Spearman vs ratio: {:.3}", spearman(&ratios, &graph));
        }
    }
    manifest.write(create(&args.out.join("manifest.json"))?)?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn cmd_verify(args: &VerifyArgs, seed: u64) -> anyhow::Result<()> {
    let scale = if args.full {
        CheckScale::full()
    } else {
        CheckScale::quick()
    };
    let outcomes = run_all(scale, seed);
    let mut failed = 0;
    for c in &outcomes {
        println!(
            "{} {:<26} {:>8.2}s  {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.elapsed.as_secs_f64(),
            c.detail
        );
        failed += !c.passed as usize;
    }
    if failed > 0 {
        bail!("{failed} of {} checks failed", outcomes.len());
    }
    Ok(())
}

/// Every default the tool relies on, rendered from the live configs.
fn defaults_help() -> String {
    let e = EncoderConfig::default();
    let m = PipelineConfig::default().matcher;
    let p = PipelineConfig::default().estimator;
    let edge = EdgeConfig::default();
    let gt = GroundTruthConfig::default();
    let sim = SimConfig::default();
    let mac = MacProfileConfig::default();
    let deltas: Vec<String> = p.deltas.iter().map(|d| d.to_string()).collect();
    format!(
        "Defaults:
  scene graph   edge threshold max({} m, {} x mean box diagonal); axis-aligned boxes;
                over-segmentation splits a node by a random plane through its centroid
  ground truth  node IoU threshold {}; IoU voxel {} m; point match distance {} m
  encoder       d {}, d_b {}, d_s {}, d_z {}, K_p {}, {} graph layer(s), {:?} fusion,
                max {} triplets per node; label embedding from a stable hash
  matcher       node threshold {}, node k {}, point k {}, point threshold {},
                Sinkhorn {} iterations with dustbin score {}, similarity temperature {};
                top-k ties broken by ascending index
  estimator     delta levels {{{}}} m, TLS threshold {} m, NMS radius {} m,
                verification voxel {} m, GNC factor {} for at most {} iterations,
                MAC trigger {}, clique budget {} ms, plane ratio {} with >= {} points,
                empty voxel penalty {} x voxel
  objectives    log clamp {:e}
  metrics       inlier distance {} m; registration success RMSE < {} m;
                frame success RTE < {} m and RRE < {} deg
  simulator     1 coarse message per tick, {} frames, request after {} matched nodes,
                dense interval {} ticks, dense voxel {} m, reveal {} + {} per frame,
                pose window {}; message width d + d_s (132 with --encoder-preset msg132)
  bench         presets {}; clique profile ratios {:?} on {} correspondences x {} repeats",
        edge.min_distance,
        edge.size_scale,
        gt.iou_threshold,
        gt.iou_voxel,
        gt.point_match_distance,
        e.d,
        e.d_b,
        e.d_s,
        e.d_z,
        e.k_p,
        e.gnn_layers,
        e.fusion,
        e.max_triplets,
        m.node_threshold,
        m.node_k,
        m.point_k,
        m.point_threshold,
        m.sinkhorn_iters,
        m.dustbin_score,
        m.temperature,
        deltas.join(", "),
        p.inlier_threshold,
        p.nms_radius,
        p.verify_voxel,
        p.gnc_factor,
        p.gnc_max_iters,
        p.mac_trigger,
        p.clique_budget_ms,
        PLANARITY_RATIO,
        MIN_PLANE_POINTS,
        EMPTY_VOXEL_PENALTY,
        LOG_EPS,
        INLIER_DISTANCE,
        RMSE_THRESHOLD,
        RTE_THRESHOLD,
        RRE_THRESHOLD_DEG,
        sim.frames,
        sim.min_matches,
        sim.dense_interval,
        sim.voxel,
        sim.initial_reveal,
        sim.reveal_per_frame,
        sim.pose_window,
        PRESETS.join(", "),
        mac.ratios,
        mac.correspondences,
        mac.repeats,
    )
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<Insufficient>().is_some() {
        return EXIT_INSUFFICIENT;
    }
    match e.downcast_ref::<sgreg::Error>() {
        Some(sgreg::Error::InsufficientData { .. }) => EXIT_INSUFFICIENT,
        _ => EXIT_USAGE,
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let file = load_config(cli.config.as_deref())?;
    let seed = cli.seed.or(file.seed).unwrap_or(0);
    match &cli.command {
        Command::Gen(a) => cmd_gen(a, &file, seed),
        Command::Register(a) => cmd_register(a, &file),
        Command::Simulate(a) => cmd_simulate(a, &file, seed),
        Command::Bench(a) => cmd_bench(a, &file, seed),
        Command::VerifyInvariants(a) => cmd_verify(a, seed),
    }
}

fn main() -> ExitCode {
    let help = defaults_help();
    let mut cmd = Cli::command().after_help(help.clone());
    for name in ["gen", "register", "simulate", "bench", "verify-invariants"] {
        cmd = cmd.mut_subcommand(name, |s| s.after_help(help.clone()));
    }
    let cli = match cmd.try_get_matches().and_then(|m| Cli::from_arg_matches(&m)) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
