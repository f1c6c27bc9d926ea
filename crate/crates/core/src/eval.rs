//! Noise-robustness evaluation: reconstruct held-out shapes from perturbed
//! descriptors and report vertex-to-vertex error per algorithm, slicing
//! number and noise ratio.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::decompose::{build_decomposition, extract_descriptor, ShapeDescriptor};
use crate::error::{Error, Result};
use crate::model::{shape_to_mesh, BodyModel, ShapeCoeffs};
use crate::reconstruct::{AnalyticalSolver, RefinerKind, RefinerNet};

/// Mean per-vertex Euclidean distance in millimetres.
pub fn v2v(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            what: "mesh vertices",
            expected: a.len(),
            got: b.len(),
        });
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    Ok(a.iter().zip(b).map(|(p, q)| (p - q).norm()).sum::<f64>() / a.len() as f64 * 1000.0)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    /// `g ~ N(0, 1)`.
    #[default]
    Gaussian,
    /// `g ~ U(-√3, √3)`, unit variance.
    Uniform,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseTarget {
    #[default]
    Both,
    Lengths,
    Widths,
}

/// Multiplicative descriptor noise: each selected entry `x` becomes
/// `x * (1 + ratio * g)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub ratio: f64,
    pub kind: NoiseKind,
    pub target: NoiseTarget,
    pub seed: u64,
}

/// Smallest factor kept after perturbation, so entries stay positive.
const MIN_NOISE_FACTOR: f64 = 1e-6;

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if self.ratio >= 0.0 && self.ratio.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("noise ratio must be >= 0, got {}", self.ratio)))
        }
    }

    /// Unit-variance draws, one per descriptor entry.
    pub fn draw<R: Rng>(&self, len: usize, rng: &mut R) -> Vec<f64> {
        match self.kind {
            NoiseKind::Gaussian => (0..len).map(|_| StandardNormal.sample(rng)).collect(),
            NoiseKind::Uniform => {
                let h = 3f64.sqrt();
                let u = Uniform::new(-h, h).expect("valid bounds");
                (0..len).map(|_| u.sample(rng)).collect()
            }
        }
    }

    pub fn apply(&self, desc: &ShapeDescriptor, draws: &[f64]) -> Result<ShapeDescriptor> {
        self.validate()?;
        if draws.len() != desc.len() {
            return Err(Error::Dimension {
                what: "noise draws",
                expected: desc.len(),
                got: draws.len(),
            });
        }
        let nl = desc.bone_lengths().len();
        let values: Vec<f64> = desc
            .to_vec()
            .iter()
            .zip(draws)
            .enumerate()
            .map(|(i, (x, g))| {
                let hit = match self.target {
                    NoiseTarget::Both => true,
                    NoiseTarget::Lengths => i < nl,
                    NoiseTarget::Widths => i >= nl,
                };
                if hit {
                    x * (1.0 + self.ratio * g).max(MIN_NOISE_FACTOR)
                } else {
                    *x
                }
            })
            .collect();
        desc.with_values(&values)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Hybrid,
    Analytical,
    Nn,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::Hybrid, Algorithm::Analytical, Algorithm::Nn];

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Hybrid => "hybrid",
            Algorithm::Analytical => "analytical",
            Algorithm::Nn => "nn",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown algorithm {s:?}")))
    }
}

/// Trained refiners keyed by slicing number.
#[derive(Clone, Debug, Default)]
pub struct RefinerSet {
    pub hybrid: BTreeMap<usize, RefinerNet>,
    pub direct: BTreeMap<usize, RefinerNet>,
}

impl RefinerSet {
    pub fn file_name(kind: RefinerKind, n: usize) -> String {
        match kind {
            RefinerKind::Hybrid => format!("hybrid_n{n}.bin"),
            RefinerKind::Direct => format!("nn_n{n}.bin"),
        }
    }

    pub fn insert(&mut self, net: RefinerNet) {
        match net.kind() {
            RefinerKind::Hybrid => self.hybrid.insert(net.n(), net),
            RefinerKind::Direct => self.direct.insert(net.n(), net),
        };
    }

    /// Loads every `hybrid_n{n}.bin` and `nn_n{n}.bin` in `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mut set = RefinerSet::default();
        let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        let mut paths: Vec<_> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "bin"))
            .collect();
        paths.sort();
        for path in paths {
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
            let known = [("hybrid_n", RefinerKind::Hybrid), ("nn_n", RefinerKind::Direct)]
                .into_iter()
                .find_map(|(prefix, kind)| stem.strip_prefix(prefix).and_then(|n| n.parse::<usize>().ok()).map(|n| (kind, n)));
            if let Some((kind, n)) = known {
                let net = RefinerNet::load(&path)?;
                if net.kind() != kind || net.n() != n {
                    return Err(Error::InvalidArgument(format!(
                        "{} holds a {} refiner for n={}",
                        path.display(),
                        net.kind().as_str(),
                        net.n()
                    )));
                }
                set.insert(net);
            }
        }
        Ok(set)
    }

    fn get(&self, algorithm: Algorithm, n: usize) -> Result<Option<&RefinerNet>> {
        let (map, kind) = match algorithm {
            Algorithm::Analytical => return Ok(None),
            Algorithm::Hybrid => (&self.hybrid, "hybrid"),
            Algorithm::Nn => (&self.direct, "nn"),
        };
        map.get(&n).map(Some).ok_or(Error::MissingRefiner { kind: kind.into(), n })
    }
}

/// Reconstructs coefficients from a descriptor with one algorithm.
pub fn reconstruct_with(
    algorithm: Algorithm,
    solver: &AnalyticalSolver<'_>,
    refiners: &RefinerSet,
    target: &ShapeDescriptor,
) -> Result<ShapeCoeffs> {
    let n = solver.decomposition().n();
    match refiners.get(algorithm, n)? {
        None => Ok(solver.solve(target)?.beta0),
        Some(net) => {
            net.check_compatible(solver.model(), solver.decomposition())?;
            match algorithm {
                Algorithm::Hybrid => net.predict(target, Some(&solver.solve(target)?)),
                _ => net.predict(target, None),
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub algorithms: Vec<Algorithm>,
    pub ns: Vec<usize>,
    pub ratios: Vec<f64>,
    pub kind: NoiseKind,
    pub target: NoiseTarget,
    pub seed: u64,
    /// Identifier of the body-model asset the numbers come from.
    pub asset: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalCell {
    pub algorithm: Algorithm,
    pub n: usize,
    pub noise_ratio: f64,
    pub mean_v2v_mm: f64,
    pub std_v2v_mm: f64,
    pub median_v2v_mm: f64,
    pub count: usize,
    /// Per-shape errors in input order.
    pub errors_mm: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub asset: String,
    pub seed: u64,
    pub noise_kind: NoiseKind,
    pub noise_target: NoiseTarget,
    pub num_shapes: usize,
    pub cells: Vec<EvalCell>,
}

impl EvalCell {
    fn new(algorithm: Algorithm, n: usize, noise_ratio: f64, errors_mm: Vec<f64>) -> Self {
        let count = errors_mm.len();
        let mean = errors_mm.iter().sum::<f64>() / count.max(1) as f64;
        let var = errors_mm.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / count.max(1) as f64;
        let mut sorted = errors_mm.clone();
        sorted.sort_by(f64::total_cmp);
        let median = match count {
            0 => 0.0,
            c if c % 2 == 1 => sorted[c / 2],
            c => 0.5 * (sorted[c / 2 - 1] + sorted[c / 2]),
        };
        EvalCell {
            algorithm,
            n,
            noise_ratio,
            mean_v2v_mm: mean,
            std_v2v_mm: var.sqrt(),
            median_v2v_mm: median,
            count,
            errors_mm,
        }
    }
}

impl EvalReport {
    pub fn cell(&self, algorithm: Algorithm, n: usize, ratio: f64) -> Option<&EvalCell> {
        self.cells
            .iter()
            .find(|c| c.algorithm == algorithm && c.n == n && c.noise_ratio == ratio)
    }

    /// One summary row per cell.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("algorithm,n,noise_ratio,mean_v2v_mm,std_v2v_mm,median_v2v_mm,count\n");
        for c in &self.cells {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                c.algorithm, c.n, c.noise_ratio, c.mean_v2v_mm, c.std_v2v_mm, c.median_v2v_mm, c.count
            )
            .expect("writing to a string");
        }
        out
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serialises");
        s.push('\n');
        s
    }
}

/// Standard-normal coefficients for `count` shapes.
pub fn sample_shapes(count: usize, shape_dim: usize, seed: u64) -> Vec<ShapeCoeffs> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| ShapeCoeffs::new((0..shape_dim).map(|_| StandardNormal.sample(&mut rng)).collect()).expect("finite draws"))
        .collect()
}

/// Runs every (algorithm, n, ratio) cell. Each shape gets one set of noise
/// draws per `n`, shared across ratios and algorithms.
pub fn run_grid(model: &BodyModel, shapes: &[ShapeCoeffs], config: &GridConfig, refiners: &RefinerSet) -> Result<EvalReport> {
    if config.algorithms.is_empty() || config.ns.is_empty() || config.ratios.is_empty() {
        return Err(Error::InvalidArgument("algorithms, ns and ratios must be non-empty".into()));
    }
    for &n in &config.ns {
        for &a in &config.algorithms {
            refiners.get(a, n)?;
        }
    }
    for &ratio in &config.ratios {
        NoiseSpec {
            ratio,
            ..NoiseSpec::default()
        }
        .validate()?;
    }
    let meshes = shapes.iter().map(|b| shape_to_mesh(model, b)).collect::<Result<Vec<_>>>()?;
    let mut cells = Vec::new();
    for &n in &config.ns {
        let decomp = build_decomposition(model, n)?;
        let solver = AnalyticalSolver::new(model, &decomp)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(n as u64);
        let base = NoiseSpec {
            ratio: 0.0,
            kind: config.kind,
            target: config.target,
            seed: config.seed,
        };
        let mut inputs = Vec::with_capacity(shapes.len());
        for mesh in &meshes {
            let desc = extract_descriptor(model, &decomp, mesh)?;
            let draws = base.draw(desc.len(), &mut rng);
            inputs.push((desc, draws));
        }
        // errors[shape][ratio][algorithm]
        let per_shape = parallel_map(&inputs, |i, (desc, draws)| {
            let mut rows = Vec::with_capacity(config.ratios.len());
            for &ratio in &config.ratios {
                let noisy = NoiseSpec { ratio, ..base }.apply(desc, draws)?;
                let mut row = Vec::with_capacity(config.algorithms.len());
                for &a in &config.algorithms {
                    let beta = reconstruct_with(a, &solver, refiners, &noisy)?;
                    row.push(v2v(&shape_to_mesh(model, &beta)?, &meshes[i])?);
                }
                rows.push(row);
            }
            Ok(rows)
        })?;
        for (ai, &a) in config.algorithms.iter().enumerate() {
            for (ri, &ratio) in config.ratios.iter().enumerate() {
                let errors = per_shape.iter().map(|r| r[ri][ai]).collect();
                cells.push(EvalCell::new(a, n, ratio, errors));
            }
        }
    }
    cells.sort_by(|x, y| {
        (x.algorithm, x.n)
            .cmp(&(y.algorithm, y.n))
            .then(x.noise_ratio.total_cmp(&y.noise_ratio))
    });
    Ok(EvalReport {
        asset: config.asset.clone(),
        seed: config.seed,
        noise_kind: config.kind,
        noise_target: config.target,
        num_shapes: shapes.len(),
        cells,
    })
}

/// Order-preserving map over worker threads.
fn parallel_map<T: Sync, U: Send>(items: &[T], f: impl Fn(usize, &T) -> Result<U> + Sync) -> Result<Vec<U>> {
    if items.is_empty() {
        return Ok(Vec::new());
    }
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(items.len());
    let chunk = items.len().div_ceil(workers);
    let f = &f;
    std::thread::scope(|scope| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .enumerate()
            .map(|(c, part)| {
                scope.spawn(move || {
                    part.iter()
                        .enumerate()
                        .map(|(i, t)| f(c * chunk + i, t))
                        .collect::<Result<Vec<U>>>()
                })
            })
            .collect();
        let mut out = Vec::with_capacity(items.len());
        for h in handles {
            out.extend(h.join().expect("evaluation worker panicked")?);
        }
        Ok(out)
    })
}
