//! Data generation from a Wiener model.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::WienerModel;
use crate::nonlinearity::PiecewiseNonlinearity;
use crate::rng;

/// Where the input sequence comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum InputSpec {
    /// A stored sequence of `N` vectors.
    Given(Vec<DVector<f64>>),
    /// Independent Gaussian draws per channel.
    Gaussian { mean: Vec<f64>, var: Vec<f64> },
}

impl InputSpec {
    /// `N(mean, var)` on every one of `m` channels.
    pub fn iid(m: usize, mean: f64, var: f64) -> InputSpec {
        InputSpec::Gaussian {
            mean: vec![mean; m],
            var: vec![var; m],
        }
    }

    pub fn generate(&self, m: usize, n_steps: usize, seed: u64) -> Result<Vec<DVector<f64>>> {
        match self {
            InputSpec::Given(u) => {
                if u.len() != n_steps || u.iter().any(|v| v.len() != m) {
                    return Err(Error::Dimension(format!(
                        "input sequence must hold {n_steps} vectors of length {m}"
                    )));
                }
                Ok(u.clone())
            }
            InputSpec::Gaussian { mean, var } => {
                if mean.len() != m || var.len() != m || var.iter().any(|v| !(*v >= 0.0)) {
                    return Err(Error::Dimension(format!(
                        "input descriptor must give {m} means and non-negative variances"
                    )));
                }
                let mut g = rng::stream(seed, rng::STREAM_INPUT);
                Ok((0..n_steps)
                    .map(|_| DVector::from_fn(m, |c, _| mean[c] + var[c].sqrt() * g.sample::<f64, _>(StandardNormal)))
                    .collect())
            }
        }
    }
}

/// One simulated realization.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub inputs: Vec<DVector<f64>>,
    pub states: Vec<DVector<f64>>,
    pub linear_outputs: Vec<f64>,
    pub noiseless_outputs: Vec<f64>,
    pub measurements: Vec<f64>,
    pub seed: u64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.measurements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.measurements.is_empty()
    }
}

/// Standard-normal draws behind one trajectory, before scaling by the noise
/// covariances.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseDraws {
    pub x1: DVector<f64>,
    pub w: Vec<DVector<f64>>,
    pub v: Vec<f64>,
    pub eta: Vec<f64>,
}

impl NoiseDraws {
    pub fn draw(n: usize, n_steps: usize, seed: u64) -> NoiseDraws {
        let normal_vec =
            |g: &mut rand_chacha::ChaCha8Rng, k: usize| DVector::from_fn(k, |_, _| g.sample::<f64, _>(StandardNormal));
        let mut gx = rng::stream(seed, rng::STREAM_INITIAL_STATE);
        let mut gw = rng::stream(seed, rng::STREAM_PROCESS_NOISE);
        let mut gv = rng::stream(seed, rng::STREAM_OUTPUT_NOISE);
        let mut ge = rng::stream(seed, rng::STREAM_MEASUREMENT_NOISE);
        NoiseDraws {
            x1: normal_vec(&mut gx, n),
            w: (0..n_steps).map(|_| normal_vec(&mut gw, n)).collect(),
            v: (0..n_steps).map(|_| gv.sample(StandardNormal)).collect(),
            eta: (0..n_steps).map(|_| ge.sample(StandardNormal)).collect(),
        }
    }
}

/// A square root `S` with `S Sᵀ = Σ` for a PSD `Σ` (singular allowed).
pub fn psd_sqrt(sigma: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = sigma.clone().symmetric_eigen();
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
    &eig.eigenvectors * d
}

fn check_sim_model(model: &WienerModel) -> Result<()> {
    let n = model.n();
    let m = model.m();
    if model.a.shape() != (n, n)
        || model.b.nrows() != n
        || model.c.shape() != (1, n)
        || model.d.shape() != (1, m)
        || model.q.shape() != (n, n)
        || model.p1.shape() != (n, n)
        || model.mu1.len() != n
    {
        return Err(Error::InvalidModel("inconsistent dimensions".into()));
    }
    if !(model.r >= 0.0 && model.p >= 0.0) {
        return Err(Error::InvalidModel("noise variances must be non-negative".into()));
    }
    Ok(())
}

/// Simulates `n_steps` steps. Noise-free models are allowed here.
pub fn simulate(
    model: &WienerModel,
    nl: &PiecewiseNonlinearity,
    n_steps: usize,
    input: &InputSpec,
    seed: u64,
) -> Result<Trajectory> {
    if n_steps == 0 {
        return Err(Error::Dimension("horizon must be at least 1".into()));
    }
    check_sim_model(model)?;
    let inputs = input.generate(model.m(), n_steps, seed)?;
    let noise = NoiseDraws::draw(model.n(), n_steps, seed);
    simulate_with_noise(model, nl, inputs, &noise, seed)
}

/// The recursion driven by explicit standard-normal draws.
pub fn simulate_with_noise(
    model: &WienerModel,
    nl: &PiecewiseNonlinearity,
    inputs: Vec<DVector<f64>>,
    noise: &NoiseDraws,
    seed: u64,
) -> Result<Trajectory> {
    let n_steps = inputs.len();
    let sq = psd_sqrt(&model.q);
    let sp1 = psd_sqrt(&model.p1);
    let (sr, sp) = (model.r.sqrt(), model.p.sqrt());
    let mut x = &model.mu1 + &sp1 * &noise.x1;
    let mut states = Vec::with_capacity(n_steps);
    let mut rs = Vec::with_capacity(n_steps);
    let mut zs = Vec::with_capacity(n_steps);
    let mut ys = Vec::with_capacity(n_steps);
    for t in 0..n_steps {
        let u = &inputs[t];
        let r = (&model.c * &x)[0] + (&model.d * u)[0] + sr * noise.v[t];
        let z = nl.evaluate(r).map_err(|e| e.at(t + 1))?;
        rs.push(r);
        zs.push(z);
        ys.push(z + sp * noise.eta[t]);
        let next = &model.a * &x + &model.b * u + &sq * &noise.w[t];
        states.push(std::mem::replace(&mut x, next));
    }
    Ok(Trajectory {
        inputs,
        states,
        linear_outputs: rs,
        noiseless_outputs: zs,
        measurements: ys,
        seed,
    })
}
