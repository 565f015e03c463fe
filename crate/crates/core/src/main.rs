use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use monofollow::control::ControllerConfig;
use monofollow::depth_target::EstimateSource;
use monofollow::fusion::{DepthFusionTracker, FusionConfig};
use monofollow::geometry::{CameraIntrinsics, Point3};
use monofollow::io::{
    self, fmt_sig9, load_correspondences, load_depth_auto, load_intrinsics, read_run_log,
    save_depth_pfm, IoError, LogRow,
};
use monofollow::metrics::{depth_metrics, MetricsError};
use monofollow::pnp::{solve_pnp, PnpError};
use monofollow::sim::{
    generate_scenario, load_scenario_config, run_closed_loop, run_open_loop, ScenarioConfig,
    SimError,
};
use monofollow::vnl::{vnl_between_depth_maps, TripletConstraints, VnlError};
use monofollow::depth_target::TargetEstimate;

/// Monocular vehicle-following toolkit: simulation, depth fusion, PnP,
/// depth-map evaluation, and plotting.
#[derive(Parser)]
#[command(name = "monofollow", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a scenario and run the fusion pipeline open-loop.
    Simulate(SimulateArgs),
    /// Fuse a recorded measurement log offline.
    Fuse(FuseArgs),
    /// Solve a camera pose from a correspondence file.
    PnpSolve(PnpSolveArgs),
    /// Compare two depth maps.
    EvalDepth(EvalDepthArgs),
    /// Run the closed-loop follower.
    Track(TrackArgs),
    /// Render a run log as an SVG depth-vs-time chart.
    Plot(PlotArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario config file.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed from the config file.
    #[arg(long)]
    seed: Option<u64>,
    /// Run-log CSV destination.
    #[arg(long)]
    output: PathBuf,
    /// Optional directory for the per-frame payload dump.
    #[arg(long)]
    frames_dir: Option<PathBuf>,
}

#[derive(Args)]
struct FuseArgs {
    /// Measurement run-log CSV (network and pnp rows).
    #[arg(long)]
    input: PathBuf,
    /// Fused run-log CSV destination.
    #[arg(long)]
    output: PathBuf,
    /// Expected fast-source period, seconds.
    #[arg(long, default_value_t = 1.0 / 30.0)]
    pnp_period: f64,
}

#[derive(Args)]
struct PnpSolveArgs {
    /// Correspondence JSONL file.
    #[arg(long)]
    input: PathBuf,
    /// Camera intrinsics config file.
    #[arg(long)]
    intrinsics: PathBuf,
    /// Which correspondence set to solve: fg, bg, or all.
    #[arg(long, default_value = "all")]
    set: String,
    /// Pose JSON destination; stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct EvalDepthArgs {
    /// Ground-truth depth map (.pfm or plain text).
    #[arg(long)]
    gt: PathBuf,
    /// Predicted depth map.
    #[arg(long)]
    pred: PathBuf,
    /// Accuracy (inlier-ratio) threshold.
    #[arg(long, default_value_t = 1.25)]
    threshold: f64,
    /// Also compute the virtual-normal loss (needs --intrinsics).
    #[arg(long)]
    vnl: bool,
    /// Camera intrinsics config file, required with --vnl.
    #[arg(long)]
    intrinsics: Option<PathBuf>,
    /// Triplet-sampling seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of triplets.
    #[arg(long, default_value_t = 100)]
    groups: usize,
    /// Minimum pairwise triplet distance, meters.
    #[arg(long, default_value_t = 0.6)]
    theta: f64,
    /// Minimum triplet angle, degrees.
    #[arg(long, default_value_t = 30.0)]
    beta: f64,
    /// Maximum triplet angle, degrees.
    #[arg(long, default_value_t = 120.0)]
    alpha: f64,
    /// Metrics JSON destination; stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct TrackArgs {
    /// Scenario config file.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed from the config file.
    #[arg(long)]
    seed: Option<u64>,
    /// Run-log CSV destination.
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct PlotArgs {
    /// Run-log CSV.
    #[arg(long)]
    input: PathBuf,
    /// SVG destination.
    #[arg(long)]
    output: PathBuf,
}

/// Process exit codes: 1 input/validation, 2 numerical, 3 I/O.
enum CmdError {
    Input(String),
    Numerical(String),
    Io(String),
}

impl CmdError {
    fn code(&self) -> u8 {
        match self {
            CmdError::Input(_) => 1,
            CmdError::Numerical(_) => 2,
            CmdError::Io(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CmdError::Input(m) | CmdError::Numerical(m) | CmdError::Io(m) => m,
        }
    }
}

impl From<IoError> for CmdError {
    fn from(e: IoError) -> Self {
        match e {
            IoError::Io { .. } => CmdError::Io(e.to_string()),
            IoError::Parse { .. } => CmdError::Input(e.to_string()),
        }
    }
}

impl From<SimError> for CmdError {
    fn from(e: SimError) -> Self {
        CmdError::Input(e.to_string())
    }
}

impl From<PnpError> for CmdError {
    fn from(e: PnpError) -> Self {
        CmdError::Numerical(e.to_string())
    }
}

impl From<MetricsError> for CmdError {
    fn from(e: MetricsError) -> Self {
        CmdError::Input(e.to_string())
    }
}

impl From<VnlError> for CmdError {
    fn from(e: VnlError) -> Self {
        match e {
            VnlError::SamplingExhausted { .. } | VnlError::DegenerateTriplet(_) => {
                CmdError::Numerical(e.to_string())
            }
            _ => CmdError::Input(e.to_string()),
        }
    }
}

fn write_or_print(dest: Option<&PathBuf>, text: &str) -> Result<(), CmdError> {
    match dest {
        Some(path) => std::fs::write(path, text)
            .map_err(|e| CmdError::Io(format!("cannot write {}: {e}", path.display()))),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn load_config(path: &PathBuf, seed: Option<u64>) -> Result<ScenarioConfig, CmdError> {
    let mut cfg = load_scenario_config(path)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn cmd_simulate(args: &SimulateArgs) -> Result<(), CmdError> {
    let cfg = load_config(&args.config, args.seed)?;
    let frames = generate_scenario(&cfg)?;
    if let Some(dir) = &args.frames_dir {
        dump_frames(dir, &frames)?;
    }
    let log = run_open_loop(&cfg, &frames, &FusionConfig::default());
    io::write_sim_log(&args.output, &log.rows)?;
    Ok(())
}

fn dump_frames(dir: &PathBuf, frames: &[monofollow::sim::FrameRecord]) -> Result<(), CmdError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CmdError::Io(format!("cannot create {}: {e}", dir.display())))?;
    let mut detections = String::new();
    for (i, f) in frames.iter().enumerate() {
        detections.push_str(&serde_json::to_string(&serde_json::json!({
            "t": f.timestamp,
            "x1": f.detection.x1, "y1": f.detection.y1,
            "x2": f.detection.x2, "y2": f.detection.y2,
            "class": 0, "conf": 1.0,
        })).expect("serializable"));
        detections.push('\n');
        if let Some(dm) = &f.depth_map {
            save_depth_pfm(&dir.join(format!("depth_{i:05}.pfm")), dm)?;
        }
        if let Some((fg, bg)) = &f.correspondences {
            let mut out = String::new();
            for (set, corrs) in [("fg", fg), ("bg", bg)] {
                for c in corrs {
                    out.push_str(&serde_json::to_string(&serde_json::json!({
                        "X": c.world.x, "Y": c.world.y, "Z": c.world.z,
                        "u": c.image.u, "v": c.image.v, "set": set,
                    })).expect("serializable"));
                    out.push('\n');
                }
            }
            let path = dir.join(format!("corr_{i:05}.jsonl"));
            std::fs::write(&path, out)
                .map_err(|e| CmdError::Io(format!("cannot write {}: {e}", path.display())))?;
        }
    }
    let path = dir.join("detections.jsonl");
    std::fs::write(&path, detections)
        .map_err(|e| CmdError::Io(format!("cannot write {}: {e}", path.display())))
}

fn cmd_fuse(args: &FuseArgs) -> Result<(), CmdError> {
    if args.pnp_period <= 0.0 {
        return Err(CmdError::Input("pnp_period must be positive".into()));
    }
    let rows = read_run_log(&args.input)?;
    let mut tracker = DepthFusionTracker::new(FusionConfig::default(), args.pnp_period)
        .expect("default config is valid");
    let mut out = Vec::new();
    for row in &rows {
        let source = match row.src.as_str() {
            "network" => EstimateSource::Network,
            "pnp" => EstimateSource::Pnp,
            "fused" => continue,
            other => {
                return Err(CmdError::Input(format!("unknown source {other:?} in log")));
            }
        };
        let Some(est) = row.est else {
            continue;
        };
        let m = TargetEstimate {
            position: Point3::new(est[0], est[1], est[2]),
            depth: est[2],
            timestamp: row.t,
            source,
        };
        if tracker.observe(&m).is_err() {
            continue;
        }
        if source == EstimateSource::Network {
            let _ = tracker.register_network(&m);
        }
        if let Ok(fused) = tracker.fused_estimate(row.t) {
            let p = fused.position;
            out.push(LogRow {
                t: row.t,
                src: "fused".into(),
                gt: row.gt,
                est: Some([p.x, p.y, p.z]),
                failed: false,
                steering: 0.0,
                speed: 0.0,
            });
        }
    }
    io::write_run_log(&args.output, &out)?;
    Ok(())
}

fn cmd_pnp_solve(args: &PnpSolveArgs) -> Result<(), CmdError> {
    let intr = load_intrinsics(&args.intrinsics)?;
    let (fg, bg) = load_correspondences(&args.input)?;
    let corrs = match args.set.as_str() {
        "fg" => fg,
        "bg" => bg,
        "all" => fg.into_iter().chain(bg).collect(),
        other => {
            return Err(CmdError::Input(format!(
                "--set must be fg, bg, or all, got {other:?}"
            )));
        }
    };
    let sol = solve_pnp(&corrs, &intr)?;
    let r = sol.pose.rotation();
    let t = sol.pose.translation();
    let json = serde_json::json!({
        "rotation": [
            [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
            [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
            [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
        ],
        "translation": [t.x, t.y, t.z],
        "points_used": sol.points_used,
        "reprojection_rms": sol.reprojection_rms,
    });
    write_or_print(
        args.output.as_ref(),
        &serde_json::to_string_pretty(&json).expect("serializable"),
    )
}

fn cmd_eval_depth(args: &EvalDepthArgs) -> Result<(), CmdError> {
    let gt = load_depth_auto(&args.gt)?;
    let pred = load_depth_auto(&args.pred)?;
    let m = depth_metrics(&gt, &pred, args.threshold)?;
    let mut json = serde_json::to_value(&m).expect("serializable");
    if args.vnl {
        let intr_path = args.intrinsics.as_ref().ok_or_else(|| {
            CmdError::Input("--vnl needs --intrinsics for back-projection".into())
        })?;
        let intr: CameraIntrinsics = load_intrinsics(intr_path)?;
        let cons = TripletConstraints {
            beta_min: args.beta.to_radians(),
            alpha_max: args.alpha.to_radians(),
            theta_min: args.theta,
            ..TripletConstraints::default()
        };
        let loss = vnl_between_depth_maps(&intr, &pred, &gt, &cons, args.groups, args.seed)?;
        json["vnl"] = serde_json::json!(loss);
    }
    write_or_print(
        args.output.as_ref(),
        &serde_json::to_string_pretty(&json).expect("serializable"),
    )
}

fn cmd_track(args: &TrackArgs) -> Result<(), CmdError> {
    let cfg = load_config(&args.config, args.seed)?;
    let log = run_closed_loop(&cfg, &FusionConfig::responsive(), &ControllerConfig::default())?;
    io::write_sim_log(&args.output, &log.rows)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// plotting

const PLOT_W: f64 = 800.0;
const PLOT_H: f64 = 450.0;
const MARGIN: f64 = 50.0;

fn cmd_plot(args: &PlotArgs) -> Result<(), CmdError> {
    let rows = read_run_log(&args.input)?;
    if rows.is_empty() {
        return Err(CmdError::Input("log contains no rows".into()));
    }
    let svg = render_svg(&rows);
    std::fs::write(&args.output, svg)
        .map_err(|e| CmdError::Io(format!("cannot write {}: {e}", args.output.display())))
}

/// Depth-vs-time polyline per source, plus ground truth, on shared axes.
fn render_svg(rows: &[LogRow]) -> String {
    let mut series: Vec<(String, &str, Vec<(f64, f64)>)> = vec![
        ("truth".into(), "#888888", Vec::new()),
        ("network".into(), "#d62728", Vec::new()),
        ("pnp".into(), "#2ca02c", Vec::new()),
        ("fused".into(), "#1f77b4", Vec::new()),
    ];
    for r in rows {
        series[0].2.push((r.t, r.gt[2]));
        if let Some(est) = r.est {
            if let Some(s) = series.iter_mut().find(|(name, _, _)| *name == r.src) {
                s.2.push((r.t, est[2]));
            }
        }
    }
    series[0].2.dedup();
    series.retain(|(_, _, pts)| pts.len() >= 2);

    let all: Vec<(f64, f64)> = series.iter().flat_map(|(_, _, p)| p.iter().copied()).collect();
    let (t0, t1) = all
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(t, _)| {
            (lo.min(t), hi.max(t))
        });
    let (d0, d1) = all
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(_, d)| {
            (lo.min(d), hi.max(d))
        });
    let t_span = (t1 - t0).max(1e-9);
    let d_span = (d1 - d0).max(1e-9);
    let sx = |t: f64| MARGIN + (t - t0) / t_span * (PLOT_W - 2.0 * MARGIN);
    let sy = |d: f64| PLOT_H - MARGIN - (d - d0) / d_span * (PLOT_H - 2.0 * MARGIN);

    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{PLOT_W}\" height=\"{PLOT_H}\" \
         viewBox=\"0 0 {PLOT_W} {PLOT_H}\">\n\
         <rect width=\"{PLOT_W}\" height=\"{PLOT_H}\" fill=\"white\"/>\n"
    );
    // axes
    svg.push_str(&format!(
        "<line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <line x1=\"{m}\" y1=\"{m}\" x2=\"{m}\" y2=\"{b}\" stroke=\"black\"/>\n",
        m = MARGIN,
        b = PLOT_H - MARGIN,
        r = PLOT_W - MARGIN,
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"12\">t = {} .. {} s</text>\n\
         <text x=\"{}\" y=\"{}\" font-size=\"12\">depth = {} .. {} m</text>\n",
        MARGIN,
        PLOT_H - MARGIN / 3.0,
        fmt_sig9(t0),
        fmt_sig9(t1),
        MARGIN,
        MARGIN / 2.0,
        fmt_sig9(d0),
        fmt_sig9(d1),
    ));
    for (i, (name, color, pts)) in series.iter().enumerate() {
        let path: Vec<String> = pts
            .iter()
            .map(|&(t, d)| format!("{:.2},{:.2}", sx(t), sy(d)))
            .collect();
        svg.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
            path.join(" ")
        ));
        // legend swatch
        let ly = MARGIN + 16.0 * i as f64;
        svg.push_str(&format!(
            "<rect x=\"{x}\" y=\"{y}\" width=\"12\" height=\"12\" fill=\"{color}\"/>\n\
             <text x=\"{tx}\" y=\"{ty}\" font-size=\"12\">{name}</text>\n",
            x = PLOT_W - MARGIN - 90.0,
            y = ly,
            tx = PLOT_W - MARGIN - 72.0,
            ty = ly + 10.0,
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

fn run(cli: &Cli) -> Result<(), CmdError> {
    match &cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Fuse(args) => cmd_fuse(args),
        Command::PnpSolve(args) => cmd_pnp_solve(args),
        Command::EvalDepth(args) => cmd_eval_depth(args),
        Command::Track(args) => cmd_track(args),
        Command::Plot(args) => cmd_plot(args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
