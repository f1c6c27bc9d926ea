use std::io::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::analytical::AnalyticalResult;
use crate::decompose::{PartDecomposition, ShapeDescriptor};
use crate::error::{Error, Result};
use crate::model::{BodyModel, ShapeCoeffs};

pub const HIDDEN_SIZE: usize = 512;
pub const NUM_LAYERS: usize = 4;
pub const LEAKY_SLOPE: f64 = 0.01;

const MAGIC: &[u8; 8] = b"SKREFNET";
const FORMAT_VERSION: u32 = 1;

/// `Hybrid` predicts a correction added to the analytical coefficients from
/// `(beta0, l, w, dl, dw)`. `Direct` maps `(l, w)` straight to coefficients.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefinerKind {
    Hybrid,
    Direct,
}

impl RefinerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RefinerKind::Hybrid => "hybrid",
            RefinerKind::Direct => "direct",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
}

/// Training metadata carried in the file header.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NetMeta {
    pub seed: u64,
    pub iterations: usize,
    pub final_loss: f64,
    pub noise_ratio: f64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    kind: RefinerKind,
    model: String,
    n: usize,
    shape_dim: usize,
    num_bones: usize,
    num_parts: usize,
    input_dim: usize,
    hidden: usize,
    num_layers: usize,
    negative_slope: f64,
    meta: NetMeta,
}

/// Residual MLP on descriptor features.
#[derive(Clone, Debug, PartialEq)]
pub struct RefinerNet {
    kind: RefinerKind,
    model: String,
    n: usize,
    shape_dim: usize,
    num_bones: usize,
    num_parts: usize,
    input_mean: DVector<f64>,
    input_scale: DVector<f64>,
    layers: Vec<Layer>,
    pub meta: NetMeta,
}

/// Per-layer parameter gradients.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
}

/// Intermediate activations kept for [`RefinerNet::backward`].
pub struct ForwardCache {
    /// Normalised input followed by each hidden activation.
    activations: Vec<DMatrix<f64>>,
    /// Pre-activations of the hidden layers.
    pre: Vec<DMatrix<f64>>,
}

fn leaky(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

impl RefinerNet {
    /// He-initialised hidden layers and a zero output layer, so a fresh
    /// hybrid net returns the analytical coefficients unchanged.
    pub fn new(kind: RefinerKind, model: &BodyModel, decomp: &PartDecomposition, hidden: usize, seed: u64) -> Result<Self> {
        if hidden == 0 {
            return Err(Error::InvalidArgument("hidden size must be positive".into()));
        }
        let mut net = RefinerNet {
            kind,
            model: model.name().to_string(),
            n: decomp.n(),
            shape_dim: model.shape_dim(),
            num_bones: model.bones().len(),
            num_parts: decomp.num_parts(),
            input_mean: DVector::zeros(0),
            input_scale: DVector::zeros(0),
            layers: Vec::new(),
            meta: NetMeta {
                seed,
                ..NetMeta::default()
            },
        };
        let input = net.input_dim();
        net.input_mean = DVector::zeros(input);
        net.input_scale = DVector::from_element(input, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fan_in = input;
        for i in 0..NUM_LAYERS {
            let last = i + 1 == NUM_LAYERS;
            let out = if last { net.shape_dim } else { hidden };
            let weight = if last {
                DMatrix::zeros(out, fan_in)
            } else {
                let std = (2.0 / fan_in as f64).sqrt();
                DMatrix::from_fn(out, fan_in, |_, _| {
                    let g: f64 = StandardNormal.sample(&mut rng);
                    std * g
                })
            };
            net.layers.push(Layer {
                weight,
                bias: DVector::zeros(out),
            });
            fan_in = out;
        }
        Ok(net)
    }

    pub fn kind(&self) -> RefinerKind {
        self.kind
    }

    pub fn model_name(&self) -> &str {
        &self.model
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn shape_dim(&self) -> usize {
        self.shape_dim
    }

    pub fn hidden(&self) -> usize {
        self.layers[0].weight.nrows()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Mutable parameters, for custom optimisers and gradient checks.
    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    fn descriptor_len(&self) -> usize {
        self.num_bones + self.num_parts * self.n
    }

    pub fn input_dim(&self) -> usize {
        match self.kind {
            RefinerKind::Hybrid => self.shape_dim + 2 * self.descriptor_len(),
            RefinerKind::Direct => self.descriptor_len(),
        }
    }

    /// Checks that the net was trained for this model and slicing.
    pub fn check_compatible(&self, model: &BodyModel, decomp: &PartDecomposition) -> Result<()> {
        let checks = [
            ("slicing number", decomp.n(), self.n),
            ("shape coefficients", model.shape_dim(), self.shape_dim),
            ("bone lengths", model.bones().len(), self.num_bones),
            ("parts", decomp.num_parts(), self.num_parts),
        ];
        for (what, expected, got) in checks {
            if expected != got {
                return Err(Error::Dimension { what, expected, got });
            }
        }
        Ok(())
    }

    /// Raw (unnormalised) input features.
    pub fn features(&self, target: &ShapeDescriptor, analytical: Option<&AnalyticalResult>) -> Result<Vec<f64>> {
        if target.n() != self.n || target.len() != self.descriptor_len() {
            return Err(Error::Dimension {
                what: "descriptor",
                expected: self.descriptor_len(),
                got: target.len(),
            });
        }
        let mut x = Vec::with_capacity(self.input_dim());
        if self.kind == RefinerKind::Hybrid {
            let a = analytical.ok_or_else(|| Error::InvalidArgument("hybrid refiner needs the analytical result".into()))?;
            x.extend_from_slice(a.beta0.as_slice());
            x.extend(target.to_vec());
            x.extend_from_slice(&a.delta_l);
            x.extend_from_slice(&a.delta_w);
        } else {
            x.extend(target.to_vec());
        }
        Ok(x)
    }

    /// Per-feature normalisation `(x - mean) / scale`.
    pub fn set_normalization(&mut self, mean: DVector<f64>, scale: DVector<f64>) -> Result<()> {
        let d = self.input_dim();
        if mean.len() != d || scale.len() != d {
            return Err(Error::Dimension {
                what: "normalisation",
                expected: d,
                got: mean.len().min(scale.len()),
            });
        }
        if scale.iter().any(|s| !(*s > 0.0 && s.is_finite())) || mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidArgument("normalisation must be finite with positive scale".into()));
        }
        self.input_mean = mean;
        self.input_scale = scale;
        Ok(())
    }

    fn normalise(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = x.clone();
        for mut col in z.column_iter_mut() {
            for i in 0..col.len() {
                col[i] = (col[i] - self.input_mean[i]) / self.input_scale[i];
            }
        }
        z
    }

    /// Output together with the activations needed for backpropagation.
    pub fn forward_cached(&self, x: &DMatrix<f64>) -> (DMatrix<f64>, ForwardCache) {
        let mut h = self.normalise(x);
        let mut activations = Vec::with_capacity(NUM_LAYERS);
        let mut pre = Vec::with_capacity(NUM_LAYERS - 1);
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = &layer.weight * &h;
            for mut col in z.column_iter_mut() {
                col += &layer.bias;
            }
            activations.push(h);
            if i + 1 == self.layers.len() {
                return (z, ForwardCache { activations, pre });
            }
            h = z.map(leaky);
            pre.push(z);
        }
        unreachable!("the net has at least one layer")
    }

    /// Network output for a batch of raw feature columns.
    pub fn forward(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.forward_cached(x).0
    }

    /// Parameter gradients for an upstream gradient on the output batch.
    pub fn backward(&self, cache: &ForwardCache, grad_out: &DMatrix<f64>) -> Gradients {
        let l = self.layers.len();
        let mut weights = vec![DMatrix::zeros(0, 0); l];
        let mut biases = vec![DVector::zeros(0); l];
        let mut g = grad_out.clone();
        for i in (0..l).rev() {
            weights[i] = &g * cache.activations[i].transpose();
            biases[i] = g.column_sum();
            if i == 0 {
                break;
            }
            let mut back = self.layers[i].weight.tr_mul(&g);
            back.zip_apply(&cache.pre[i - 1], |b, z| {
                if z <= 0.0 {
                    *b *= LEAKY_SLOPE
                }
            });
            g = back;
        }
        Gradients { weights, biases }
    }

    /// Refined coefficients for one descriptor.
    pub fn predict(&self, target: &ShapeDescriptor, analytical: Option<&AnalyticalResult>) -> Result<ShapeCoeffs> {
        let x = DMatrix::from_column_slice(self.input_dim(), 1, &self.features(target, analytical)?);
        let out = self.forward(&x);
        let mut beta: Vec<f64> = out.iter().copied().collect();
        if let (RefinerKind::Hybrid, Some(a)) = (self.kind, analytical) {
            for (b, b0) in beta.iter_mut().zip(a.beta0.as_slice()) {
                *b += b0;
            }
        }
        ShapeCoeffs::new(beta)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            kind: self.kind,
            model: self.model.clone(),
            n: self.n,
            shape_dim: self.shape_dim,
            num_bones: self.num_bones,
            num_parts: self.num_parts,
            input_dim: self.input_dim(),
            hidden: self.hidden(),
            num_layers: self.layers.len(),
            negative_slope: LEAKY_SLOPE,
            meta: self.meta.clone(),
        };
        let json = serde_json::to_vec(&header).expect("header serialises");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        let mut put = |v: f64| out.extend_from_slice(&v.to_le_bytes());
        self.input_mean.iter().for_each(|v| put(*v));
        self.input_scale.iter().for_each(|v| put(*v));
        for layer in &self.layers {
            // row-major weights, then bias
            for r in 0..layer.weight.nrows() {
                for c in 0..layer.weight.ncols() {
                    put(layer.weight[(r, c)]);
                }
            }
            layer.bias.iter().for_each(|v| put(*v));
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], source: &str) -> Result<Self> {
        let parse = |detail: String| Error::Parse {
            source_name: source.to_string(),
            line: 0,
            detail,
        };
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(parse("not a refiner file".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(parse(format!("unsupported version {version}")));
        }
        let hlen = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let body = bytes.get(16..16 + hlen).ok_or_else(|| parse("truncated header".into()))?;
        let h: Header = serde_json::from_slice(body).map_err(|e| parse(e.to_string()))?;
        if h.num_layers != NUM_LAYERS || h.hidden == 0 {
            return Err(parse(format!("expected {NUM_LAYERS} layers, found {}", h.num_layers)));
        }
        let mut net = RefinerNet {
            kind: h.kind,
            model: h.model,
            n: h.n,
            shape_dim: h.shape_dim,
            num_bones: h.num_bones,
            num_parts: h.num_parts,
            input_mean: DVector::zeros(0),
            input_scale: DVector::zeros(0),
            layers: Vec::new(),
            meta: h.meta,
        };
        if net.input_dim() != h.input_dim {
            return Err(parse(format!("input size {} does not match layout {}", h.input_dim, net.input_dim())));
        }
        let mut values = bytes[16 + hlen..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let mut sizes = vec![h.input_dim];
        sizes.extend(std::iter::repeat_n(h.hidden, NUM_LAYERS - 1));
        sizes.push(h.shape_dim);
        let expected: usize = 2 * h.input_dim + sizes.windows(2).map(|w| w[1] * (w[0] + 1)).sum::<usize>();
        if (bytes.len() - 16 - hlen) != expected * 8 {
            return Err(parse(format!("expected {expected} weights, found {} bytes", bytes.len() - 16 - hlen)));
        }
        let mut take = |k: usize| -> Vec<f64> { values.by_ref().take(k).collect() };
        net.input_mean = DVector::from_vec(take(h.input_dim));
        net.input_scale = DVector::from_vec(take(h.input_dim));
        for w in sizes.windows(2) {
            let weight = DMatrix::from_row_slice(w[1], w[0], &take(w[0] * w[1]));
            let bias = DVector::from_vec(take(w[1]));
            net.layers.push(Layer { weight, bias });
        }
        Ok(net)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        RefinerNet::from_bytes(&bytes, &path.display().to_string())
    }
}

/// Refines analytical coefficients with a trained hybrid net.
pub fn refine(
    model: &BodyModel,
    decomp: &PartDecomposition,
    net: &RefinerNet,
    analytical: &AnalyticalResult,
    target: &ShapeDescriptor,
) -> Result<ShapeCoeffs> {
    net.check_compatible(model, decomp)?;
    target.check_layout(model, decomp)?;
    net.predict(target, Some(analytical))
}
