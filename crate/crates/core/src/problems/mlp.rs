//! Small fully connected network with exact Hessian-vector products by
//! forward/backward plus directional-derivative sweeps.
//!
//! Parameters are flat: for each layer, the weight matrix (out×in,
//! row-major) followed by the bias.

use std::ops::Range;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::{gaussian_clusters, normal_matrix, Dataset};
use super::sampler::{mix_seed, BatchSampler};
use super::ProblemError;
use crate::active::{Batch, HessianOracle};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// First and second derivative given the activation output `a`.
    fn derivatives(self, a: f64) -> (f64, f64) {
        match self {
            Activation::Tanh => {
                let d = 1.0 - a * a;
                (d, -2.0 * a * d)
            }
            Activation::Identity => (1.0, 0.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ToyNetLoss {
    /// Softmax cross-entropy against class indices.
    #[default]
    CrossEntropy,
    /// `½‖output − target‖²` per sample.
    Squared,
}

/// Which part of the Hessian a product uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind", content = "layer")]
pub enum HvpMode {
    #[default]
    Full,
    /// Only the diagonal block of one layer (0-based); everything else is zero.
    Block(usize),
    /// All diagonal blocks, cross-layer terms dropped.
    BlockDiagonal,
}

/// Network plus training data: hidden layers use `activation`, the output
/// layer is linear, and the loss is the batch mean plus `reg/2·‖w‖²`.
#[derive(Debug, Clone)]
pub struct ToyNet {
    sizes: Vec<usize>,
    activation: Activation,
    loss: ToyNetLoss,
    reg: f64,
    inputs: Array2<f64>,
    /// One-hot rows for cross-entropy, raw targets for squared loss.
    targets: Array2<f64>,
    test: Option<(Array2<f64>, Array2<f64>)>,
}

struct Forward {
    /// Activations a₀ … a_L (a₀ = inputs, a_L = output pre-softmax).
    acts: Vec<Array2<f64>>,
}

impl ToyNet {
    pub fn new(
        sizes: Vec<usize>,
        activation: Activation,
        loss: ToyNetLoss,
        reg: f64,
        inputs: Array2<f64>,
        targets: Array2<f64>,
    ) -> Result<Self, ProblemError> {
        if sizes.len() < 2 || sizes.iter().any(|&s| s == 0) {
            return Err(ProblemError::InvalidParameter(format!("bad layer sizes {sizes:?}")));
        }
        if !(reg >= 0.0) || !reg.is_finite() {
            return Err(ProblemError::InvalidParameter(format!("regulariser {reg}")));
        }
        let net = Self {
            sizes,
            activation,
            loss,
            reg,
            inputs: Array2::zeros((0, 0)),
            targets: Array2::zeros((0, 0)),
            test: None,
        };
        let (inputs, targets) = net.check_data(inputs, targets)?;
        Ok(Self { inputs, targets, ..net })
    }

    /// Cross-entropy network on class-index targets (first target column).
    pub fn classifier(
        sizes: Vec<usize>,
        activation: Activation,
        reg: f64,
        train: &Dataset,
    ) -> Result<Self, ProblemError> {
        let classes = *sizes.last().unwrap_or(&0);
        let onehot = one_hot(&train.target(), classes)?;
        Self::new(sizes, activation, ToyNetLoss::CrossEntropy, reg, train.inputs.clone(), onehot)
    }

    pub fn with_test(mut self, inputs: Array2<f64>, targets: Array2<f64>) -> Result<Self, ProblemError> {
        let checked = self.check_data(inputs, targets)?;
        self.test = Some(checked);
        Ok(self)
    }

    /// Adds a held-out set given as raw targets (class indices for
    /// cross-entropy).
    pub fn with_test_dataset(self, test: &Dataset) -> Result<Self, ProblemError> {
        let targets = match self.loss {
            ToyNetLoss::CrossEntropy => one_hot(&test.target(), self.outputs())?,
            ToyNetLoss::Squared => test.targets.clone(),
        };
        self.with_test(test.inputs.clone(), targets)
    }

    fn check_data(
        &self,
        inputs: Array2<f64>,
        targets: Array2<f64>,
    ) -> Result<(Array2<f64>, Array2<f64>), ProblemError> {
        if inputs.ncols() != self.sizes[0] {
            return Err(ProblemError::DimensionMismatch {
                expected: self.sizes[0],
                got: inputs.ncols(),
            });
        }
        if targets.ncols() != self.outputs() {
            return Err(ProblemError::DimensionMismatch {
                expected: self.outputs(),
                got: targets.ncols(),
            });
        }
        if inputs.nrows() != targets.nrows() || inputs.nrows() == 0 {
            return Err(ProblemError::InvalidData("input and target rows differ".into()));
        }
        Ok((inputs, targets))
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn layers(&self) -> usize {
        self.sizes.len() - 1
    }

    fn outputs(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn n_data(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn reg(&self) -> f64 {
        self.reg
    }

    pub fn dim(&self) -> usize {
        self.block_ranges().last().map_or(0, |r| r.end)
    }

    /// Parameter range of each layer (weights then bias).
    pub fn block_ranges(&self) -> Vec<Range<usize>> {
        let mut start = 0;
        self.sizes
            .windows(2)
            .map(|w| {
                let len = w[0] * w[1] + w[1];
                let r = start..start + len;
                start += len;
                r
            })
            .collect()
    }

    /// Weights `N(0, 1/fan_in)`, zero biases.
    pub fn initial_point(&self, seed: u64) -> Array1<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed));
        let mut w = Array1::zeros(self.dim());
        for (l, r) in self.block_ranges().into_iter().enumerate() {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let draw = normal_matrix(&mut rng, fan_out, fan_in) / (fan_in as f64).sqrt();
            w.slice_mut(s![r.start..r.start + fan_in * fan_out])
                .assign(&Array1::from_iter(draw.iter().copied()));
        }
        w
    }

    fn layer<'a>(&self, v: &'a Array1<f64>, l: usize) -> (ArrayView2<'a, f64>, ndarray::ArrayView1<'a, f64>) {
        let r = &self.block_ranges()[l];
        let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
        let wpart = v.slice(s![r.start..r.start + fan_in * fan_out]);
        let bpart = v.slice(s![r.start + fan_in * fan_out..r.end]);
        (
            wpart.into_shape_with_order((fan_out, fan_in)).expect("contiguous layer slice"),
            bpart,
        )
    }

    fn check_point(&self, w: &Array1<f64>) -> Result<(), ProblemError> {
        if w.len() != self.dim() {
            return Err(ProblemError::DimensionMismatch {
                expected: self.dim(),
                got: w.len(),
            });
        }
        Ok(())
    }

    fn forward(&self, w: &Array1<f64>, x: Array2<f64>) -> Forward {
        let mut acts = vec![x];
        for l in 0..self.layers() {
            let (wl, bl) = self.layer(w, l);
            let mut z = acts[l].dot(&wl.t()) + &bl;
            if l + 1 < self.layers() {
                z.mapv_inplace(|v| self.activation.apply(v));
            }
            acts.push(z);
        }
        Forward { acts }
    }

    /// Softmax probabilities (cross-entropy) or raw outputs (squared loss).
    fn output_map(&self, z: &Array2<f64>) -> Array2<f64> {
        match self.loss {
            ToyNetLoss::Squared => z.clone(),
            ToyNetLoss::CrossEntropy => {
                let mut p = z.clone();
                for mut row in p.rows_mut() {
                    let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                    row.mapv_inplace(|v| (v - m).exp());
                    let total = row.sum();
                    row /= total;
                }
                p
            }
        }
    }

    fn data_loss(&self, z: &Array2<f64>, t: ArrayView2<f64>) -> f64 {
        let n = z.nrows() as f64;
        match self.loss {
            ToyNetLoss::Squared => (z - &t).mapv(|v| v * v).sum() / (2.0 * n),
            ToyNetLoss::CrossEntropy => {
                let mut total = 0.0;
                for (row, trow) in z.rows().into_iter().zip(t.rows()) {
                    let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                    let lse = m + row.mapv(|v| (v - m).exp()).sum().ln();
                    total += trow.iter().zip(row).map(|(&ti, &zi)| ti * (lse - zi)).sum::<f64>();
                }
                total / n
            }
        }
    }

    pub fn batch_loss(&self, w: &Array1<f64>, indices: &[usize]) -> f64 {
        let x = self.inputs.select(Axis(0), indices);
        let t = self.targets.select(Axis(0), indices);
        let f = self.forward(w, x);
        self.data_loss(f.acts.last().unwrap(), t.view()) + 0.5 * self.reg * w.dot(w)
    }

    pub fn loss(&self, w: &Array1<f64>) -> f64 {
        let f = self.forward(w, self.inputs.clone());
        self.data_loss(f.acts.last().unwrap(), self.targets.view()) + 0.5 * self.reg * w.dot(w)
    }

    /// Held-out data loss and, for classifiers, accuracy.
    pub fn test_metrics(&self, w: &Array1<f64>) -> Option<(f64, Option<f64>)> {
        let (x, t) = self.test.as_ref()?;
        let f = self.forward(w, x.clone());
        let z = f.acts.last().unwrap();
        let loss = self.data_loss(z, t.view());
        let acc = match self.loss {
            ToyNetLoss::Squared => None,
            ToyNetLoss::CrossEntropy => {
                let hits = z
                    .rows()
                    .into_iter()
                    .zip(t.rows())
                    .filter(|(zr, tr)| argmax(zr.iter()) == argmax(tr.iter()))
                    .count();
                Some(hits as f64 / z.nrows() as f64)
            }
        };
        Some((loss, acc))
    }

    pub fn batch_gradient(&self, w: &Array1<f64>, indices: &[usize]) -> Array1<f64> {
        let x = self.inputs.select(Axis(0), indices);
        let t = self.targets.select(Axis(0), indices);
        let f = self.forward(w, x);
        let n = indices.len() as f64;
        let mut delta = (self.output_map(f.acts.last().unwrap()) - &t) / n;
        let mut g = w * self.reg;
        let ranges = self.block_ranges();
        for l in (0..self.layers()).rev() {
            let r = &ranges[l];
            let split = r.start + self.sizes[l] * self.sizes[l + 1];
            let gw = delta.t().dot(&f.acts[l]);
            g.slice_mut(s![r.start..split]).scaled_add(1.0, &Array1::from_iter(gw.iter().copied()));
            g.slice_mut(s![split..r.end]).scaled_add(1.0, &delta.sum_axis(Axis(0)));
            if l > 0 {
                let (wl, _) = self.layer(w, l);
                let mut back = delta.dot(&wl);
                back.zip_mut_with(&f.acts[l], |d, &a| *d *= self.activation.derivatives(a).0);
                delta = back;
            }
        }
        g
    }

    /// Full Hessian-vector product on the given samples.
    fn full_hvp(&self, w: &Array1<f64>, v: &Array1<f64>, indices: &[usize]) -> Array1<f64> {
        let x = self.inputs.select(Axis(0), indices);
        let t = self.targets.select(Axis(0), indices);
        let n = indices.len() as f64;
        let layers = self.layers();
        let f = self.forward(w, x);

        // directional derivatives of pre-activations and activations
        let mut rz: Vec<Array2<f64>> = Vec::with_capacity(layers);
        let mut ra: Vec<Array2<f64>> = vec![Array2::zeros(f.acts[0].raw_dim())];
        for l in 0..layers {
            let (wl, _) = self.layer(w, l);
            let (vl, cl) = self.layer(v, l);
            let z = f.acts[l].dot(&vl.t()) + ra[l].dot(&wl.t()) + &cl;
            if l + 1 < layers {
                let mut a = z.clone();
                a.zip_mut_with(&f.acts[l + 1], |r, &act| *r *= self.activation.derivatives(act).0);
                ra.push(a);
            }
            rz.push(z);
        }

        let out = self.output_map(&f.acts[layers]);
        let mut delta = (&out - &t) / n;
        let mut rdelta = match self.loss {
            ToyNetLoss::Squared => &rz[layers - 1] / n,
            ToyNetLoss::CrossEntropy => {
                let prz = &out * &rz[layers - 1];
                let dot = prz.sum_axis(Axis(1)).insert_axis(Axis(1));
                (&prz - &(&out * &dot)) / n
            }
        };

        let mut hv = v * self.reg;
        let ranges = self.block_ranges();
        for l in (0..layers).rev() {
            let r = &ranges[l];
            let split = r.start + self.sizes[l] * self.sizes[l + 1];
            let gw = rdelta.t().dot(&f.acts[l]) + delta.t().dot(&ra[l]);
            hv.slice_mut(s![r.start..split]).scaled_add(1.0, &Array1::from_iter(gw.iter().copied()));
            hv.slice_mut(s![split..r.end]).scaled_add(1.0, &rdelta.sum_axis(Axis(0)));
            if l > 0 {
                let (wl, _) = self.layer(w, l);
                let (vl, _) = self.layer(v, l);
                let back = delta.dot(&wl);
                let mut rback = rdelta.dot(&wl) + delta.dot(&vl);
                let mut next = back.clone();
                for (((rb, nb), &b), (&act, &rzv)) in rback
                    .iter_mut()
                    .zip(next.iter_mut())
                    .zip(back.iter())
                    .zip(f.acts[l].iter().zip(rz[l - 1].iter()))
                {
                    let (d1, d2) = self.activation.derivatives(act);
                    *rb = *rb * d1 + b * d2 * rzv;
                    *nb = b * d1;
                }
                delta = next;
                rdelta = rback;
            }
        }
        hv
    }
}

fn argmax<'a>(it: impl Iterator<Item = &'a f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, &v) in it.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

fn one_hot(labels: &Array1<f64>, classes: usize) -> Result<Array2<f64>, ProblemError> {
    let mut out = Array2::zeros((labels.len(), classes));
    for (i, &c) in labels.iter().enumerate() {
        if c < 0.0 || c.fract() != 0.0 || c as usize >= classes {
            return Err(ProblemError::InvalidData(format!(
                "label {c} is not a class index below {classes}"
            )));
        }
        out[[i, c as usize]] = 1.0;
    }
    Ok(out)
}

/// Hessian-vector product of the network loss on `batch`, restricted
/// according to `mode`.
pub fn mlp_hvp(
    net: &ToyNet,
    w: &Array1<f64>,
    s: &Array1<f64>,
    batch: &[usize],
    mode: HvpMode,
) -> Result<Array1<f64>, ProblemError> {
    net.check_point(w)?;
    net.check_point(s)?;
    let ranges = net.block_ranges();
    let block = |l: usize| -> Result<Array1<f64>, ProblemError> {
        let r = ranges.get(l).ok_or(ProblemError::InvalidParameter(format!(
            "layer {l} out of range for {} layers",
            ranges.len()
        )))?;
        let mut restricted = Array1::zeros(s.len());
        restricted.slice_mut(s![r.clone()]).assign(&s.slice(s![r.clone()]));
        let full = net.full_hvp(w, &restricted, batch);
        let mut out = Array1::zeros(s.len());
        out.slice_mut(s![r.clone()]).assign(&full.slice(s![r.clone()]));
        Ok(out)
    };
    match mode {
        HvpMode::Full => Ok(net.full_hvp(w, s, batch)),
        HvpMode::Block(l) => block(l),
        HvpMode::BlockDiagonal => {
            let mut out = Array1::zeros(s.len());
            for l in 0..ranges.len() {
                out += &block(l)?;
            }
            Ok(out)
        }
    }
}

#[derive(Debug, Clone)]
pub struct MlpOracle<'a> {
    net: &'a ToyNet,
    sampler: BatchSampler,
    mode: HvpMode,
}

impl<'a> MlpOracle<'a> {
    pub fn new(net: &'a ToyNet, batch_size: usize, seed: u64, mode: HvpMode) -> Result<Self, ProblemError> {
        if batch_size == 0 || batch_size > net.n_data() {
            return Err(ProblemError::InvalidParameter(format!(
                "batch size {batch_size} outside 1..={}",
                net.n_data()
            )));
        }
        if let HvpMode::Block(l) = mode {
            if l >= net.layers() {
                return Err(ProblemError::InvalidParameter(format!("no layer {l}")));
            }
        }
        Ok(Self {
            net,
            sampler: BatchSampler::new(net.n_data(), batch_size, seed),
            mode,
        })
    }
}

impl HessianOracle for MlpOracle<'_> {
    fn dim(&self) -> usize {
        self.net.dim()
    }

    fn batch_size(&self) -> usize {
        self.sampler.batch_size()
    }

    fn data_read(&self) -> u64 {
        self.sampler.data_read()
    }

    fn sample_batch(&mut self) -> Batch {
        self.sampler.sample()
    }

    fn batch_gradient(&self, w: &Array1<f64>, batch: &Batch) -> Array1<f64> {
        self.net.batch_gradient(w, &batch.indices)
    }

    fn batch_hvp(&self, w: &Array1<f64>, s: &Array1<f64>, batch: &Batch) -> Array1<f64> {
        mlp_hvp(self.net, w, s, &batch.indices, self.mode).expect("oracle validated its mode")
    }
}

/// Synthetic multi-class clustering task for a [`ToyNet`] classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpSpec {
    pub n_train: usize,
    pub n_test: usize,
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub classes: usize,
    pub spread: f64,
    pub activation: Activation,
    pub reg: f64,
    pub seed: u64,
}

impl Default for MlpSpec {
    fn default() -> Self {
        Self {
            n_train: 4_096,
            n_test: 1_024,
            input_dim: 32,
            hidden: vec![64],
            classes: 10,
            spread: 3.0,
            activation: Activation::Tanh,
            reg: 1e-3,
            seed: 0,
        }
    }
}

impl MlpSpec {
    pub fn sizes(&self) -> Vec<usize> {
        let mut v = vec![self.input_dim];
        v.extend(&self.hidden);
        v.push(self.classes);
        v
    }

    pub fn generate(&self) -> (Dataset, Dataset) {
        let all = gaussian_clusters(
            self.n_train + self.n_test,
            self.input_dim,
            self.classes,
            self.spread,
            mix_seed(self.seed),
        );
        let split = |lo: usize, hi: usize| Dataset {
            inputs: all.inputs.slice(s![lo..hi, ..]).to_owned(),
            targets: all.targets.slice(s![lo..hi, ..]).to_owned(),
        };
        (split(0, self.n_train), split(self.n_train, self.n_train + self.n_test))
    }

    pub fn build(&self) -> Result<ToyNet, ProblemError> {
        let (train, test) = self.generate();
        self.build_from(&train, Some(&test))
    }

    pub fn build_from(&self, train: &Dataset, test: Option<&Dataset>) -> Result<ToyNet, ProblemError> {
        let net = ToyNet::classifier(self.sizes(), self.activation, self.reg, train)?;
        match test {
            Some(t) => net.with_test_dataset(t),
            None => Ok(net),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn tiny_net(activation: Activation, loss: ToyNetLoss) -> ToyNet {
        let x = array![[0.5, -1.0, 0.2], [1.5, 0.3, -0.7], [-0.4, 0.8, 1.1], [0.0, -0.2, 0.6]];
        let t = match loss {
            ToyNetLoss::CrossEntropy => array![[1.0, 0.0], [0.0, 1.0], [0.0, 1.0], [1.0, 0.0]],
            ToyNetLoss::Squared => array![[0.3, -0.1], [1.0, 0.2], [-0.5, 0.4], [0.1, 0.1]],
        };
        ToyNet::new(vec![3, 4, 2], activation, loss, 0.01, x, t).unwrap()
    }

    #[test]
    fn parameter_layout() {
        let net = tiny_net(Activation::Tanh, ToyNetLoss::CrossEntropy);
        assert_eq!(net.block_ranges(), vec![0..16, 16..26]);
        assert_eq!(net.dim(), 26);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let net = tiny_net(Activation::Tanh, ToyNetLoss::CrossEntropy);
        let w = net.initial_point(3);
        let idx = [0, 1, 2, 3];
        let g = net.batch_gradient(&w, &idx);
        let h = 1e-6;
        for i in 0..net.dim() {
            let mut wp = w.clone();
            let mut wm = w.clone();
            wp[i] += h;
            wm[i] -= h;
            let fd = (net.batch_loss(&wp, &idx) - net.batch_loss(&wm, &idx)) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-7, "coordinate {i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn block_mode_zeroes_other_layers() {
        let net = tiny_net(Activation::Tanh, ToyNetLoss::Squared);
        let w = net.initial_point(1);
        let s = Array1::from_iter((0..net.dim()).map(|i| ((i * 7) % 5) as f64 - 2.0));
        let hv = mlp_hvp(&net, &w, &s, &[0, 1, 2, 3], HvpMode::Block(1)).unwrap();
        assert!(hv.slice(s![0..16]).iter().all(|&v| v == 0.0));
        assert!(mlp_hvp(&net, &w, &s, &[0], HvpMode::Block(2)).is_err());
    }
}
