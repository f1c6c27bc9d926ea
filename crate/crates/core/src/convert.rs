//! Closed-form shape transfer between linear body models through
//! corresponding surface points.
//!
//! Unknowns are the destination coefficients `β` and a translation. Each
//! sample point contributes three rows of `[H_dst S, -I] ξ = H_src x_src - H_dst T_dst`.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BodyModel, ShapeCoeffs};

/// Ridge on the normal equations.
pub const CONVERT_RIDGE: f64 = 1e-10;
const MAX_REFINEMENT_STEPS: usize = 50;
/// Gram condition numbers above this are rejected.
pub const MAX_CONDITION: f64 = 1e12;

/// Sparse `p × K` matrix mapping mesh vertices to sample points.
#[derive(Clone, Debug, PartialEq)]
pub struct PointRegressor {
    rows: Vec<Vec<(usize, f64)>>,
    num_cols: usize,
}

impl PointRegressor {
    /// Rows hold `(column, value)` entries.
    pub fn new(mut rows: Vec<Vec<(usize, f64)>>, num_cols: usize) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::invariant("point regressor", "no rows"));
        }
        for (i, row) in rows.iter_mut().enumerate() {
            row.sort_by_key(|e| e.0);
            if row.iter().all(|e| e.1 == 0.0) {
                return Err(Error::invariant("point regressor", format!("row {i} has no nonzero entry")));
            }
            if let Some(&(c, v)) = row.iter().find(|e| e.0 >= num_cols || !e.1.is_finite()) {
                return Err(Error::invariant("point regressor", format!("row {i} has entry ({c}, {v}) outside {num_cols} columns or non-finite")));
            }
            if row.windows(2).any(|w| w[0].0 == w[1].0) {
                return Err(Error::invariant("point regressor", format!("row {i} repeats a column")));
            }
        }
        Ok(PointRegressor { rows, num_cols })
    }

    pub fn num_points(&self) -> usize {
        self.rows.len()
    }

    pub fn num_cols(&self) -> usize {
        self.num_cols
    }

    pub fn rows(&self) -> &[Vec<(usize, f64)>] {
        &self.rows
    }

    pub fn apply(&self, mesh: &[Vector3<f64>]) -> Result<Vec<Vector3<f64>>> {
        if mesh.len() != self.num_cols {
            return Err(Error::Dimension {
                what: "regressor columns",
                expected: self.num_cols,
                got: mesh.len(),
            });
        }
        Ok(self
            .rows
            .iter()
            .map(|row| row.iter().fold(Vector3::zeros(), |acc, &(k, h)| acc + mesh[k] * h))
            .collect())
    }

    /// Parses `row col value` lines. Blank lines and `#` comments are
    /// skipped. The column count is `num_cols` when given, else one past the
    /// largest column index.
    pub fn parse_triplets(text: &str, source: &str, num_cols: Option<usize>) -> Result<Self> {
        let err = |line: usize, detail: String| Error::Parse {
            source_name: source.to_string(),
            line,
            detail,
        };
        let mut entries: Vec<(usize, usize, f64)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 3 {
                return Err(err(i + 1, format!("expected `row col value`, got {line:?}")));
            }
            let r = fields[0].parse::<usize>().map_err(|e| err(i + 1, format!("row: {e}")))?;
            let c = fields[1].parse::<usize>().map_err(|e| err(i + 1, format!("col: {e}")))?;
            let v = fields[2].parse::<f64>().map_err(|e| err(i + 1, format!("value: {e}")))?;
            entries.push((r, c, v));
        }
        if entries.is_empty() {
            return Err(err(0, "no entries".into()));
        }
        let p = entries.iter().map(|e| e.0).max().unwrap_or(0) + 1;
        let k = num_cols.unwrap_or_else(|| entries.iter().map(|e| e.1).max().unwrap_or(0) + 1);
        let mut rows = vec![Vec::new(); p];
        for (r, c, v) in entries {
            rows[r].push((c, v));
        }
        PointRegressor::new(rows, k)
    }

    /// Triplet text sorted by (row, col).
    pub fn to_triplets(&self) -> String {
        let mut out = String::new();
        for (r, row) in self.rows.iter().enumerate() {
            for &(c, v) in row {
                writeln!(out, "{r} {c} {v}").expect("writing to a string");
            }
        }
        out
    }

    pub fn load(path: &Path, num_cols: Option<usize>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        PointRegressor::parse_triplets(&text, &path.display().to_string(), num_cols)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_triplets()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConversionResult {
    pub beta: ShapeCoeffs,
    /// Offset such that source points ≈ `H_dst · mesh(beta) + t`.
    pub t: [f64; 3],
    pub residual_rms: f64,
    pub gram_condition: f64,
}

/// Dense least-squares system of the fit; unknowns are `(β, -t)`.
#[derive(Clone, Debug)]
pub struct FitSystem {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl FitSystem {
    pub fn build(src_mesh: &[Vector3<f64>], h_src: &PointRegressor, dst: &BodyModel, h_dst: &PointRegressor) -> Result<Self> {
        if h_src.num_points() != h_dst.num_points() {
            return Err(Error::Dimension {
                what: "sample points",
                expected: h_src.num_points(),
                got: h_dst.num_points(),
            });
        }
        let p = h_dst.num_points();
        let s = dst.shape_dim();
        if 3 * p < s + 3 {
            return Err(Error::InvalidArgument(format!("{p} sample points cannot determine {s} coefficients and a translation")));
        }
        let src = h_src.apply(src_mesh)?;
        let base = h_dst.apply(dst.template())?;
        let basis = dst.shape_basis();
        let mut a = DMatrix::zeros(3 * p, s + 3);
        let mut b = DVector::zeros(3 * p);
        for (i, row) in h_dst.rows().iter().enumerate() {
            for c in 0..3 {
                let r = 3 * i + c;
                for &(k, h) in row {
                    for col in 0..s {
                        a[(r, col)] += h * basis[(3 * k + c, col)];
                    }
                }
                a[(r, s + c)] = -1.0;
                b[r] = src[i][c] - base[i][c];
            }
        }
        Ok(FitSystem { a, b })
    }

    /// `(‖Aᵀ(Aξ − b)‖∞, ‖Aᵀb‖∞)`.
    pub fn optimality(&self, xi: &DVector<f64>) -> (f64, f64) {
        let r = &self.a * xi - &self.b;
        (self.a.tr_mul(&r).amax(), self.a.tr_mul(&self.b).amax())
    }

    pub fn unknowns(result: &ConversionResult) -> DVector<f64> {
        let mut v: Vec<f64> = result.beta.as_slice().to_vec();
        v.extend(result.t.iter().map(|t| -t));
        DVector::from_vec(v)
    }

    pub fn solve(&self) -> Result<ConversionResult> {
        let n = self.a.ncols();
        let mut gram = self.a.tr_mul(&self.a);
        let eig = gram.clone().symmetric_eigenvalues();
        let (lo, hi) = (eig.min(), eig.max());
        let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
        if condition > MAX_CONDITION {
            return Err(Error::RankDeficient { condition });
        }
        let plain = gram.clone();
        for i in 0..n {
            gram[(i, i)] += CONVERT_RIDGE;
        }
        let chol = gram.cholesky().ok_or(Error::RankDeficient { condition })?;
        // the ridged factor preconditions refinement toward the plain solution
        let rhs = self.a.tr_mul(&self.b);
        let mut xi = chol.solve(&rhs);
        for _ in 0..MAX_REFINEMENT_STEPS {
            let step = chol.solve(&(&rhs - &plain * &xi));
            xi += &step;
            if step.amax() <= f64::EPSILON * xi.amax() {
                break;
            }
        }
        let residual = &self.a * &xi - &self.b;
        let s = n - 3;
        Ok(ConversionResult {
            beta: ShapeCoeffs::new(xi.rows(0, s).iter().copied().collect())?,
            t: [-xi[s], -xi[s + 1], -xi[s + 2]],
            residual_rms: (residual.norm_squared() / residual.len() as f64).sqrt(),
            gram_condition: condition,
        })
    }
}

/// Least-squares destination coefficients and offset reproducing the
/// source sample points.
pub fn cross_model_fit(src_mesh: &[Vector3<f64>], h_src: &PointRegressor, dst: &BodyModel, h_dst: &PointRegressor) -> Result<ConversionResult> {
    FitSystem::build(src_mesh, h_src, dst, h_dst)?.solve()
}

/// Random sparse regressor: each row blends `support` distinct vertices
/// with positive weights summing to one.
pub fn random_regressor<R: rand::Rng>(num_points: usize, num_cols: usize, support: usize, rng: &mut R) -> Result<PointRegressor> {
    if support == 0 || support > num_cols {
        return Err(Error::InvalidArgument(format!("support {support} must lie in 1..={num_cols}")));
    }
    let rows = (0..num_points)
        .map(|_| {
            let cols = rand::seq::index::sample(rng, num_cols, support);
            let w: Vec<f64> = (0..support).map(|_| rng.random_range(0.1..1.0)).collect();
            let total: f64 = w.iter().sum();
            cols.iter().zip(w).map(|(c, w)| (c, w / total)).collect()
        })
        .collect();
    PointRegressor::new(rows, num_cols)
}
