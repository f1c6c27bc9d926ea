//! `shapekit`: command-line front end for the shape toolkit.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::Vector2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use shapekit_core::augment::{derive_widths_2d, derive_widths_3d, project, stretch_bones_to_projection, transform_2d};
use shapekit_core::convert::cross_model_fit;
use shapekit_core::decompose::{build_decomposition, extract_descriptor};
use shapekit_core::eval::{run_grid, sample_shapes, Algorithm, GridConfig, NoiseKind, NoiseTarget, RefinerSet};
use shapekit_core::io;
use shapekit_core::model::{load_model, make_toy_model, pose_mesh, pose_skeleton, regress_joints, save_model, shape_to_mesh};
use shapekit_core::reconstruct::{AnalyticalSolver, LossWeights, Optimizer, RefinerKind, RefinerNet, TrainConfig, HIDDEN_SIZE};
use shapekit_core::{AffineAugment, BodyModel, NoiseSpec, OrthoCamera, PointRegressor, ShapeCoeffs};

#[derive(Parser)]
#[command(name = "shapekit", version, about = "Part-based body shape descriptors, reconstruction and conversion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic capsule-chain model in the neutral format.
    MakeToy(MakeToyArgs),
    /// Draw standard-normal shape coefficients.
    SampleShapes(SampleShapesArgs),
    /// Bone lengths and slice widths of a shape.
    Extract(ExtractArgs),
    /// Shape coefficients from a descriptor.
    Reconstruct(ReconstructArgs),
    /// Train a refiner net on Gaussian-sampled shapes.
    TrainRefiner(TrainArgs),
    /// Post-augmentation bone lengths and widths of a posed shape.
    Augment(AugmentArgs),
    /// Least-squares shape transfer onto another model.
    Convert(ConvertArgs),
    /// Reconstruction error against descriptor noise.
    EvalNoise(EvalArgs),
    /// Mesh of a shape (optionally posed) as ASCII OBJ.
    ExportObj(ExportArgs),
}

#[derive(Args)]
struct MakeToyArgs {
    #[arg(long, default_value_t = 8)]
    parts: usize,
    #[arg(long, default_value_t = 64)]
    verts_per_part: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SampleShapesArgs {
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 10)]
    dim: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExtractArgs {
    #[arg(long)]
    model: PathBuf,
    /// Coefficient CSV; one shape per row.
    #[arg(long)]
    beta: PathBuf,
    /// Row of the CSV to use.
    #[arg(long, default_value_t = 0)]
    row: usize,
    #[arg(long, default_value_t = 1)]
    n: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReconstructArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    descriptor: PathBuf,
    /// Trained net (hybrid or nn); omit or pass --analytical-only for the
    /// analytical solution.
    #[arg(long)]
    refiner: Option<PathBuf>,
    #[arg(long)]
    analytical_only: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Hybrid,
    Nn,
}

#[derive(Clone, Copy, ValueEnum)]
enum OptimizerArg {
    Momentum,
    Adam,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 1)]
    n: usize,
    #[arg(long, default_value_t = 20_000)]
    samples: usize,
    /// Relative noise on training descriptors.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Mode::Hybrid)]
    mode: Mode,
    #[arg(long, default_value_t = 4_000)]
    iterations: usize,
    #[arg(long, default_value_t = 64)]
    batch: usize,
    #[arg(long, default_value_t = HIDDEN_SIZE)]
    hidden: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, value_enum, default_value_t = OptimizerArg::Momentum)]
    optimizer: OptimizerArg,
    /// Weight of the coefficient regulariser.
    #[arg(long, default_value_t = LossWeights::default().mu1)]
    mu1: f64,
    #[arg(long, value_enum, default_value_t = NoiseKindArg::Gaussian)]
    noise_kind: NoiseKindArg,
    #[arg(long, value_enum, default_value_t = NoiseOnArg::Both)]
    noise_on: NoiseOnArg,
    /// Print the mean batch loss every this many iterations (0 = never).
    #[arg(long, default_value_t = 0)]
    log_every: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AugmentArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    beta: PathBuf,
    #[arg(long, default_value_t = 0)]
    row: usize,
    /// Pose CSV: one `rx,ry,rz` row per joint, optional `tx,ty,tz` row.
    #[arg(long)]
    pose: Option<PathBuf>,
    /// `s,ox,oy`: pixels per metre and image offset.
    #[arg(long, value_parser = parse_triple)]
    cam: [f64; 3],
    /// `a,b,phi`.
    #[arg(long, value_parser = parse_triple, conflicts_with = "sample_aug", required_unless_present = "sample_aug")]
    aug: Option<[f64; 3]>,
    /// Draw the augment from the default distribution with this seed.
    #[arg(long)]
    sample_aug: Option<u64>,
    /// Rotation range for --sample-aug, radians.
    #[arg(long, default_value_t = 0.0)]
    max_phi: f64,
    /// Post-augment pixels per metre.
    #[arg(long)]
    sbar: f64,
    #[arg(long, default_value_t = 1)]
    n: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ConvertArgs {
    #[arg(long)]
    src_mesh: PathBuf,
    #[arg(long)]
    h_src: PathBuf,
    #[arg(long)]
    dst_model: PathBuf,
    #[arg(long)]
    h_dst: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum NoiseKindArg {
    Gaussian,
    Uniform,
}

#[derive(Clone, Copy, ValueEnum)]
enum NoiseOnArg {
    Both,
    Lengths,
    Widths,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    /// Directory holding `hybrid_n{n}.bin` and `nn_n{n}.bin`.
    #[arg(long)]
    refiner_dir: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "1")]
    ns: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "0,0.01,0.02,0.05")]
    ratios: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "hybrid,analytical,nn")]
    algorithms: Vec<String>,
    /// Coefficient CSV of the test shapes; defaults to Gaussian draws.
    #[arg(long)]
    shapes: Option<PathBuf>,
    #[arg(long, default_value_t = 500)]
    num_shapes: usize,
    #[arg(long, value_enum, default_value_t = NoiseKindArg::Gaussian)]
    noise_kind: NoiseKindArg,
    #[arg(long, value_enum, default_value_t = NoiseOnArg::Both)]
    noise_on: NoiseOnArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output path; `.csv` and `.json` reports are written next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    beta: PathBuf,
    #[arg(long, default_value_t = 0)]
    row: usize,
    #[arg(long)]
    pose: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn parse_triple(s: &str) -> std::result::Result<[f64; 3], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|f| f.trim().parse::<f64>().map_err(|e| format!("{f:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    <[f64; 3]>::try_from(v).map_err(|v| format!("expected three comma-separated numbers, got {}", v.len()))
}

impl From<NoiseKindArg> for NoiseKind {
    fn from(k: NoiseKindArg) -> Self {
        match k {
            NoiseKindArg::Gaussian => NoiseKind::Gaussian,
            NoiseKindArg::Uniform => NoiseKind::Uniform,
        }
    }
}

impl From<NoiseOnArg> for NoiseTarget {
    fn from(k: NoiseOnArg) -> Self {
        match k {
            NoiseOnArg::Both => NoiseTarget::Both,
            NoiseOnArg::Lengths => NoiseTarget::Lengths,
            NoiseOnArg::Widths => NoiseTarget::Widths,
        }
    }
}

fn load(dir: &Path) -> Result<BodyModel> {
    load_model(dir).with_context(|| format!("loading model {}", dir.display()))
}

fn beta_row(model: &BodyModel, path: &Path, row: usize) -> Result<ShapeCoeffs> {
    let mut rows = io::read_betas(path, Some(model.shape_dim()))?;
    if row >= rows.len() {
        bail!("{} has {} rows, asked for row {row}", path.display(), rows.len());
    }
    Ok(rows.swap_remove(row))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    io::write_text(path, &io::to_json_pretty(value)?)?;
    Ok(())
}

fn make_toy(a: MakeToyArgs) -> Result<()> {
    let model = make_toy_model(a.parts, a.verts_per_part, a.seed)?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    save_model(&model, &a.out)?;
    Ok(())
}

fn sample(a: SampleShapesArgs) -> Result<()> {
    io::write_betas(&a.out, &sample_shapes(a.count, a.dim, a.seed))?;
    Ok(())
}

fn extract(a: ExtractArgs) -> Result<()> {
    let model = load(&a.model)?;
    let beta = beta_row(&model, &a.beta, a.row)?;
    let decomp = build_decomposition(&model, a.n)?;
    let desc = extract_descriptor(&model, &decomp, &shape_to_mesh(&model, &beta)?)?;
    io::write_descriptor(&a.out, &desc)?;
    Ok(())
}

fn reconstruct(a: ReconstructArgs) -> Result<()> {
    let model = load(&a.model)?;
    let desc = io::read_descriptor(&a.descriptor)?;
    let decomp = build_decomposition(&model, desc.n())?;
    let solver = AnalyticalSolver::new(&model, &decomp)?;
    let beta = match (&a.refiner, a.analytical_only) {
        (Some(path), false) => {
            let net = RefinerNet::load(path)?;
            net.check_compatible(&model, &decomp)?;
            match net.kind() {
                RefinerKind::Hybrid => net.predict(&desc, Some(&solver.solve(&desc)?))?,
                RefinerKind::Direct => net.predict(&desc, None)?,
            }
        }
        _ => solver.solve(&desc)?.beta0,
    };
    io::write_betas(&a.out, &[beta])?;
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let model = load(&a.model)?;
    let decomp = build_decomposition(&model, a.n)?;
    let config = TrainConfig {
        kind: match a.mode {
            Mode::Hybrid => RefinerKind::Hybrid,
            Mode::Nn => RefinerKind::Direct,
        },
        num_samples: a.samples,
        iterations: a.iterations,
        batch_size: a.batch,
        hidden: a.hidden,
        learning_rate: a.lr,
        optimizer: match a.optimizer {
            OptimizerArg::Momentum => Optimizer::momentum(),
            OptimizerArg::Adam => Optimizer::adam(),
        },
        noise: NoiseSpec {
            ratio: a.noise,
            kind: a.noise_kind.into(),
            target: a.noise_on.into(),
            seed: a.seed,
        },
        weights: LossWeights {
            mu1: a.mu1,
            ..LossWeights::default()
        },
        seed: a.seed,
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let net = shapekit_core::reconstruct::train_refiner(&model, &decomp, &config, |it, loss| {
        if a.log_every > 0 && it % a.log_every == 0 {
            eprintln!("iteration {it}: loss {loss:.6e}");
        }
    })?;
    eprintln!(
        "trained {} refiner for n={} in {:.1}s; final train loss {:.6e}",
        net.kind().as_str(),
        net.n(),
        start.elapsed().as_secs_f64(),
        net.meta.final_loss
    );
    net.save(&a.out)?;
    Ok(())
}

#[derive(Serialize)]
struct AugmentReport {
    augment: AffineAugment,
    camera: OrthoCamera,
    s_bar: f64,
    n: usize,
    /// Post-augment 3D bone lengths, metres.
    bone_lengths: Vec<f64>,
    /// Post-augment 3D slice widths, metres, one row per part.
    slice_widths: Vec<Vec<f64>>,
    /// Post-augment per-vertex 2D widths, pixels.
    vertex_widths_2d: Vec<f64>,
    /// Transformed joint projections, pixels.
    joints_2d: Vec<[f64; 2]>,
}

fn augment(a: AugmentArgs) -> Result<()> {
    let model = load(&a.model)?;
    let beta = beta_row(&model, &a.beta, a.row)?;
    let rest = shape_to_mesh(&model, &beta)?;
    let rest_joints = regress_joints(&model, &rest)?;
    let pose = match &a.pose {
        Some(p) => io::read_pose(p, model.num_joints())?,
        None => shapekit_core::Pose::identity(model.num_joints()),
    };
    let mesh = pose_mesh(&model, &rest, &pose)?;
    let joints = pose_skeleton(&model, &rest_joints, &pose)?.positions;
    let cam = OrthoCamera::new(a.cam[0], Vector2::new(a.cam[1], a.cam[2]))?;
    let cam_after = OrthoCamera::new(a.sbar, cam.offset)?;
    let aug = match (a.aug, a.sample_aug) {
        (Some([x, y, phi]), _) => AffineAugment::new(x, y, phi)?,
        (None, Some(seed)) => AffineAugment::sample(&mut ChaCha8Rng::seed_from_u64(seed), a.max_phi),
        (None, None) => bail!("pass --aug or --sample-aug"),
    };
    let decomp = build_decomposition(&model, a.n)?;
    let desc = extract_descriptor(&model, &decomp, &rest)?;
    let before = project(&model, &decomp, &mesh, &joints, &cam)?;
    let after = transform_2d(&before, &aug);
    let widths_3d = derive_widths_3d(&desc, &before, &aug, cam.scale, a.sbar)?;
    let report = AugmentReport {
        augment: aug,
        camera: cam,
        s_bar: a.sbar,
        n: a.n,
        bone_lengths: stretch_bones_to_projection(&model, &joints, &before, &after, &cam_after)?,
        slice_widths: widths_3d.chunks(a.n).map(<[f64]>::to_vec).collect(),
        vertex_widths_2d: derive_widths_2d(&before, &aug)?,
        joints_2d: after.joints_2d.iter().map(|p| [p.x, p.y]).collect(),
    };
    write_json(&a.out, &report)
}

fn convert(a: ConvertArgs) -> Result<()> {
    let (src, _) = io::read_obj(&a.src_mesh)?;
    let dst = load(&a.dst_model)?;
    let h_src = PointRegressor::load(&a.h_src, Some(src.len()))?;
    let h_dst = PointRegressor::load(&a.h_dst, Some(dst.num_vertices()))?;
    let result = cross_model_fit(&src, &h_src, &dst, &h_dst)?;
    write_json(&a.out, &result)
}

fn eval_noise(a: EvalArgs) -> Result<()> {
    let model = load(&a.model)?;
    let algorithms = a
        .algorithms
        .iter()
        .map(|s| s.parse::<Algorithm>())
        .collect::<shapekit_core::Result<Vec<_>>>()?;
    let refiners = match &a.refiner_dir {
        Some(dir) => RefinerSet::load_dir(dir)?,
        None => RefinerSet::default(),
    };
    let shapes = match &a.shapes {
        Some(path) => io::read_betas(path, Some(model.shape_dim()))?,
        None => sample_shapes(a.num_shapes, model.shape_dim(), a.seed),
    };
    let config = GridConfig {
        algorithms,
        ns: a.ns,
        ratios: a.ratios,
        kind: a.noise_kind.into(),
        target: a.noise_on.into(),
        seed: a.seed,
        asset: model.name().to_string(),
    };
    let report = run_grid(&model, &shapes, &config, &refiners)?;
    io::write_text(&a.out.with_extension("csv"), &report.to_csv())?;
    io::write_text(&a.out.with_extension("json"), &report.to_json())?;
    print!("{}", report.to_csv());
    Ok(())
}

fn export_obj(a: ExportArgs) -> Result<()> {
    let model = load(&a.model)?;
    let beta = beta_row(&model, &a.beta, a.row)?;
    let mut mesh = shape_to_mesh(&model, &beta)?;
    if let Some(p) = &a.pose {
        mesh = pose_mesh(&model, &mesh, &io::read_pose(p, model.num_joints())?)?;
    }
    io::write_obj(&a.out, &mesh, model.faces())?;
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::MakeToy(a) => make_toy(a),
        Command::SampleShapes(a) => sample(a),
        Command::Extract(a) => extract(a),
        Command::Reconstruct(a) => reconstruct(a),
        Command::TrainRefiner(a) => train(a),
        Command::Augment(a) => augment(a),
        Command::Convert(a) => convert(a),
        Command::EvalNoise(a) => eval_noise(a),
        Command::ExportObj(a) => export_obj(a),
    }
}
