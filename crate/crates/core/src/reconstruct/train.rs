use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::analytical::AnalyticalSolver;
use super::loss::{decompose_loss, DecompTarget};
use super::net::{Gradients, RefinerKind, RefinerNet, HIDDEN_SIZE};
use super::LossWeights;
use crate::decompose::{extract_descriptor, PartDecomposition};
use crate::error::{Error, Result};
use crate::eval::NoiseSpec;
use crate::model::{shape_to_mesh, BodyModel, ShapeCoeffs};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    Momentum { momentum: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn momentum() -> Self {
        Optimizer::Momentum { momentum: 0.9 }
    }

    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub kind: RefinerKind,
    pub num_samples: usize,
    pub iterations: usize,
    pub batch_size: usize,
    pub hidden: usize,
    pub learning_rate: f64,
    /// Fraction of the iterations after which the rate is multiplied by `decay_factor`.
    pub decay_at: f64,
    pub decay_factor: f64,
    pub optimizer: Optimizer,
    pub noise: NoiseSpec,
    pub weights: LossWeights,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            kind: RefinerKind::Hybrid,
            num_samples: 20_000,
            iterations: 4_000,
            batch_size: 64,
            hidden: HIDDEN_SIZE,
            learning_rate: 1e-3,
            decay_at: 0.75,
            decay_factor: 0.1,
            optimizer: Optimizer::momentum(),
            noise: NoiseSpec::default(),
            weights: LossWeights::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        self.noise.validate()?;
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.num_samples == 0 || self.batch_size == 0 || self.iterations == 0 {
            return bad("samples, batch size and iterations must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        if !(0.0..=1.0).contains(&self.decay_at) || !(self.decay_factor > 0.0) {
            return bad("decay point must lie in [0, 1] with a positive factor");
        }
        Ok(())
    }

    fn rate(&self, iteration: usize) -> f64 {
        if iteration as f64 >= self.decay_at * self.iterations as f64 {
            self.learning_rate * self.decay_factor
        } else {
            self.learning_rate
        }
    }
}

struct Sample {
    base: Option<ShapeCoeffs>,
    target: DecompTarget,
}

struct OptimState {
    first: Vec<(DMatrix<f64>, DVector<f64>)>,
    second: Vec<(DMatrix<f64>, DVector<f64>)>,
    step: i32,
}

impl OptimState {
    fn new(net: &RefinerNet) -> Self {
        let zeros: Vec<_> = net
            .layers()
            .iter()
            .map(|l| (DMatrix::zeros(l.weight.nrows(), l.weight.ncols()), DVector::zeros(l.bias.len())))
            .collect();
        OptimState {
            first: zeros.clone(),
            second: zeros,
            step: 0,
        }
    }

    fn apply(&mut self, net: &mut RefinerNet, grads: &Gradients, optimizer: Optimizer, lr: f64) {
        self.step += 1;
        for (i, layer) in net.layers_mut().iter_mut().enumerate() {
            let (gw, gb) = (&grads.weights[i], &grads.biases[i]);
            match optimizer {
                Optimizer::Momentum { momentum } => {
                    let (vw, vb) = &mut self.first[i];
                    *vw *= momentum;
                    *vw += gw;
                    *vb *= momentum;
                    *vb += gb;
                    layer.weight -= &*vw * lr;
                    layer.bias -= &*vb * lr;
                }
                Optimizer::Adam { beta1, beta2, eps } => {
                    let c1 = 1.0 - beta1.powi(self.step);
                    let c2 = 1.0 - beta2.powi(self.step);
                    let (mw, mb) = &mut self.first[i];
                    let (sw, sb) = &mut self.second[i];
                    let update = |p: &mut f64, m: &mut f64, s: &mut f64, g: f64| {
                        *m = beta1 * *m + (1.0 - beta1) * g;
                        *s = beta2 * *s + (1.0 - beta2) * g * g;
                        *p -= lr * (*m / c1) / ((*s / c2).sqrt() + eps);
                    };
                    for ((p, m), (s, g)) in layer.weight.iter_mut().zip(mw.iter_mut()).zip(sw.iter_mut().zip(gw.iter())) {
                        update(p, m, s, *g);
                    }
                    for ((p, m), (s, g)) in layer.bias.iter_mut().zip(mb.iter_mut()).zip(sb.iter_mut().zip(gb.iter())) {
                        update(p, m, s, *g);
                    }
                }
            }
        }
    }
}

/// Per-sample decompose losses and gradients, evaluated on worker threads
/// and gathered in batch order.
fn batch_losses(
    model: &BodyModel,
    decomp: &PartDecomposition,
    refined: &[ShapeCoeffs],
    targets: &[&DecompTarget],
    weights: &LossWeights,
) -> Result<Vec<(f64, Vec<f64>)>> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(refined.len()).max(1);
    let chunk = refined.len().div_ceil(workers);
    std::thread::scope(|scope| {
        let handles: Vec<_> = refined
            .chunks(chunk)
            .zip(targets.chunks(chunk))
            .map(|(betas, tgts)| {
                scope.spawn(move || {
                    betas
                        .iter()
                        .zip(tgts)
                        .map(|(b, t)| decompose_loss(model, decomp, b, t, weights).map(|l| (l.total, l.grad)))
                        .collect::<Result<Vec<_>>>()
                })
            })
            .collect();
        let mut out = Vec::with_capacity(refined.len());
        for h in handles {
            out.extend(h.join().expect("loss worker panicked")?);
        }
        Ok(out)
    })
}

/// Trains a refiner on Gaussian-sampled shapes with the decompose loss.
/// `progress` receives `(iteration, mean batch loss)`.
pub fn train_refiner(
    model: &BodyModel,
    decomp: &PartDecomposition,
    config: &TrainConfig,
    mut progress: impl FnMut(usize, f64),
) -> Result<RefinerNet> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut net = RefinerNet::new(config.kind, model, decomp, config.hidden, config.seed)?;
    let solver = AnalyticalSolver::new(model, decomp)?;
    let s = model.shape_dim();

    let mut samples = Vec::with_capacity(config.num_samples);
    let mut features = DMatrix::zeros(net.input_dim(), config.num_samples);
    for i in 0..config.num_samples {
        let beta: Vec<f64> = (0..s).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mesh = shape_to_mesh(model, &ShapeCoeffs::new(beta)?)?;
        let clean = extract_descriptor(model, decomp, &mesh)?;
        let draws = config.noise.draw(clean.len(), &mut rng);
        let noisy = config.noise.apply(&clean, &draws)?;
        let analytical = match config.kind {
            RefinerKind::Hybrid => Some(solver.solve(&noisy)?),
            RefinerKind::Direct => None,
        };
        features.set_column(i, &DVector::from_vec(net.features(&noisy, analytical.as_ref())?));
        samples.push(Sample {
            base: analytical.map(|a| a.beta0),
            target: DecompTarget::new(model, decomp, noisy)?,
        });
    }

    let mean = features.column_mean();
    let scale = features.column_variance().map(|v| if v.sqrt() > 1e-12 { v.sqrt() } else { 1.0 });
    net.set_normalization(mean, scale)?;

    let mut order: Vec<usize> = (0..config.num_samples).collect();
    let mut cursor = order.len();
    let mut state = OptimState::new(&net);
    let tail = (config.iterations / 20).max(1);
    let mut tail_sum = 0.0;
    let batch = config.batch_size.min(config.num_samples);
    for it in 0..config.iterations {
        let mut idx = Vec::with_capacity(batch);
        while idx.len() < batch {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            idx.push(order[cursor]);
            cursor += 1;
        }
        let x = features.select_columns(&idx);
        let (out, cache) = net.forward_cached(&x);
        let refined = idx
            .iter()
            .enumerate()
            .map(|(c, &i)| {
                let mut b: Vec<f64> = out.column(c).iter().copied().collect();
                if let Some(base) = &samples[i].base {
                    b.iter_mut().zip(base.as_slice()).for_each(|(v, b0)| *v += b0);
                }
                ShapeCoeffs::new(b).map_err(|_| Error::Diverged {
                    iteration: it,
                    loss: f64::NAN,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let targets: Vec<&DecompTarget> = idx.iter().map(|&i| &samples[i].target).collect();
        let losses = batch_losses(model, decomp, &refined, &targets, &config.weights)?;
        let mean_loss = losses.iter().map(|(l, _)| l).sum::<f64>() / batch as f64;
        if !mean_loss.is_finite() {
            return Err(Error::Diverged {
                iteration: it,
                loss: mean_loss,
            });
        }
        let mut grad_out = DMatrix::zeros(s, batch);
        for (c, (_, g)) in losses.iter().enumerate() {
            for (r, v) in g.iter().enumerate() {
                grad_out[(r, c)] = v / batch as f64;
            }
        }
        let grads = net.backward(&cache, &grad_out);
        state.apply(&mut net, &grads, config.optimizer, config.rate(it));
        if it + tail >= config.iterations {
            tail_sum += mean_loss;
        }
        progress(it, mean_loss);
    }
    net.meta.iterations = config.iterations;
    net.meta.final_loss = tail_sum / tail as f64;
    net.meta.noise_ratio = config.noise.ratio;
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decompose::build_decomposition;
    use crate::model::make_toy_model;

    fn small_config(kind: RefinerKind) -> TrainConfig {
        TrainConfig {
            kind,
            num_samples: 64,
            iterations: 30,
            batch_size: 16,
            hidden: 16,
            seed: 5,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn training_is_deterministic() {
        let m = make_toy_model(5, 24, 1).unwrap();
        let d = build_decomposition(&m, 1).unwrap();
        for kind in [RefinerKind::Hybrid, RefinerKind::Direct] {
            let a = train_refiner(&m, &d, &small_config(kind), |_, _| {}).unwrap();
            let b = train_refiner(&m, &d, &small_config(kind), |_, _| {}).unwrap();
            assert_eq!(a.to_bytes(), b.to_bytes());
            assert!(a.meta.final_loss.is_finite());
        }
    }

    #[test]
    fn training_lowers_the_loss() {
        let m = make_toy_model(6, 24, 2).unwrap();
        let d = build_decomposition(&m, 1).unwrap();
        let config = TrainConfig {
            iterations: 300,
            optimizer: Optimizer::adam(),
            kind: RefinerKind::Direct,
            hidden: 32,
            num_samples: 256,
            ..small_config(RefinerKind::Direct)
        };
        let mut losses = Vec::new();
        train_refiner(&m, &d, &config, |_, l| losses.push(l)).unwrap();
        let head: f64 = losses[..20].iter().sum::<f64>() / 20.0;
        let tail: f64 = losses[losses.len() - 20..].iter().sum::<f64>() / 20.0;
        assert!(tail < 0.5 * head, "{head} -> {tail}");
    }

    #[test]
    fn divergence_is_reported() {
        let m = make_toy_model(5, 24, 1).unwrap();
        let d = build_decomposition(&m, 1).unwrap();
        let config = TrainConfig {
            learning_rate: 1e300,
            iterations: 50,
            ..small_config(RefinerKind::Direct)
        };
        assert!(matches!(train_refiner(&m, &d, &config, |_, _| {}), Err(Error::Diverged { .. })));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let m = make_toy_model(5, 24, 1).unwrap();
        let d = build_decomposition(&m, 1).unwrap();
        let config = TrainConfig {
            batch_size: 0,
            ..small_config(RefinerKind::Direct)
        };
        assert!(train_refiner(&m, &d, &config, |_, _| {}).is_err());
    }
}
