//! Feed-forward classifiers: ReLU MLPs (a single linear layer doubles as
//! logistic regression), SGD training with momentum and L2 weight decay,
//! temperature-calibrated softmax and input gradients.
//!
//! Biases are trained but excluded from weight decay, and all attack
//! code treats them separately from the weight matrices.

use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::prelude::*;
use rand_chacha::ChaCha20Rng;

use crate::dataio::{load_matrices, save_matrices, Dataset};
use crate::error::{Error, Result};

const EVAL_CHUNK: usize = 2048;

/// One fully-connected layer.
#[derive(Debug, Clone)]
pub struct Layer {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

/// A multilayer perceptron with ReLU hidden activations and a
/// temperature-scaled softmax output.
#[derive(Debug, Clone)]
pub struct Mlp {
    layers: Vec<Layer>,
    temperature: f64,
    class_count: usize,
}

/// Result of a forward pass. `features[0]` is the input itself,
/// `features[i]` the post-ReLU activation of hidden layer `i`.
#[derive(Debug, Clone)]
pub struct Forward {
    pub features: Vec<Array1<f64>>,
    pub logits: Array1<f64>,
    pub probs: Array1<f64>,
}

/// Training hyperparameters. The learning-rate schedule is stepwise
/// constant: entry `(e, r)` sets rate `r` from epoch `e` onward.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate_schedule: Vec<(usize, f64)>,
    pub momentum: f64,
    pub batch_size: usize,
    pub l2_penalty: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::Argument("epochs must be at least 1".to_string()));
        }
        if self.batch_size < 1 {
            return Err(Error::Argument("batch size must be at least 1".to_string()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Argument(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.l2_penalty < 0.0 {
            return Err(Error::Argument("l2 penalty must be non-negative".to_string()));
        }
        match self.learning_rate_schedule.first() {
            None => {
                return Err(Error::Argument("learning-rate schedule is empty".to_string()))
            }
            Some(&(first, _)) if first != 0 => {
                return Err(Error::Argument(
                    "learning-rate schedule must start at epoch 0".to_string(),
                ))
            }
            _ => {}
        }
        if self
            .learning_rate_schedule
            .windows(2)
            .any(|w| w[1].0 <= w[0].0)
        {
            return Err(Error::Argument(
                "learning-rate schedule epochs must be strictly increasing".to_string(),
            ));
        }
        Ok(())
    }

    pub fn rate_at(&self, epoch: usize) -> f64 {
        self.learning_rate_schedule
            .iter()
            .take_while(|(e, _)| *e <= epoch)
            .last()
            .map(|&(_, r)| r)
            .unwrap_or(0.0)
    }
}

impl Mlp {
    /// Fresh model with the given layer dimensions (`dims[0]` is the
    /// input size, `dims.last()` the class count). Weights are seeded
    /// uniform in `[-a, a]` with `a = sqrt(6/(fan_in + fan_out))`,
    /// biases zero, temperature 1.
    pub fn new(dims: &[usize], seed: u64) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Argument(
                "need at least an input and an output dimension".to_string(),
            ));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Argument("layer dimensions must be positive".to_string()));
        }
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for win in dims.windows(2) {
            let (fan_in, fan_out) = (win[0], win[1]);
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w = Array2::from_shape_fn((fan_out, fan_in), |_| rng.random_range(-a..=a));
            layers.push(Layer {
                w,
                b: Array1::zeros(fan_out),
            });
        }
        Ok(Mlp {
            class_count: *dims.last().unwrap(),
            layers,
            temperature: 1.0,
        })
    }

    /// Assemble a model from explicit layers, checking that adjacent
    /// dimensions compose.
    pub fn from_layers(layers: Vec<Layer>, temperature: f64) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Argument("model has no layers".to_string()));
        }
        if temperature <= 0.0 {
            return Err(Error::Argument(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        for (i, layer) in layers.iter().enumerate() {
            if layer.b.len() != layer.w.nrows() {
                return Err(Error::Argument(format!(
                    "layer {i}: bias length {} does not match {} rows",
                    layer.b.len(),
                    layer.w.nrows()
                )));
            }
            if i > 0 && layers[i - 1].w.nrows() != layer.w.ncols() {
                return Err(Error::Argument(format!(
                    "layer {i}: expected {} inputs, got {}",
                    layers[i - 1].w.nrows(),
                    layer.w.ncols()
                )));
            }
        }
        Ok(Mlp {
            class_count: layers.last().unwrap().w.nrows(),
            layers,
            temperature,
        })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Replace one layer, revalidating the dimension chain.
    pub fn with_layer(&self, index: usize, layer: Layer) -> Result<Self> {
        if index >= self.layers.len() {
            return Err(Error::Argument(format!(
                "layer index {index} out of range for {} layers",
                self.layers.len()
            )));
        }
        let mut layers = self.layers.clone();
        layers[index] = layer;
        Self::from_layers(layers, self.temperature)
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn set_temperature(&mut self, t: f64) -> Result<()> {
        if t <= 0.0 || !t.is_finite() {
            return Err(Error::Argument(format!("temperature must be positive, got {t}")));
        }
        self.temperature = t;
        Ok(())
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.ncols()
    }

    /// `[input, hidden..., output]` dimensions.
    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.input_dim()];
        d.extend(self.layers.iter().map(|l| l.w.nrows()));
        d
    }

    /// Full forward pass for one input.
    pub fn forward(&self, x: ArrayView1<f64>) -> Result<Forward> {
        self.check_input(x.len())?;
        let mut features = vec![x.to_owned()];
        for layer in &self.layers[..self.layers.len() - 1] {
            let mut z = layer.w.dot(features.last().unwrap()) + &layer.b;
            z.mapv_inplace(|v| v.max(0.0));
            features.push(z);
        }
        let last = self.layers.last().unwrap();
        let logits = last.w.dot(features.last().unwrap()) + &last.b;
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite logits".to_string()));
        }
        let probs = softmax(logits.view(), self.temperature);
        Ok(Forward {
            features,
            logits,
            probs,
        })
    }

    /// Logits for every column of `xs`, without the softmax.
    pub fn logits_batch(&self, xs: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(xs.nrows())?;
        let mut act = xs.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = layer.w.dot(&act);
            for mut col in z.columns_mut() {
                col += &layer.b;
            }
            if i + 1 < self.layers.len() {
                z.mapv_inplace(|v| v.max(0.0));
            }
            act = z;
        }
        Ok(act)
    }

    /// Predicted class per column; argmax ties break toward the lowest
    /// class index.
    pub fn predict_batch(&self, xs: ArrayView2<f64>) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(xs.ncols());
        let mut start = 0;
        while start < xs.ncols() {
            let stop = (start + EVAL_CHUNK).min(xs.ncols());
            let logits = self.logits_batch(xs.slice(s![.., start..stop]))?;
            for col in logits.columns() {
                out.push(argmax(col));
            }
            start = stop;
        }
        Ok(out)
    }

    /// Gradient of the target-class softmax probability with respect to
    /// the input, through the temperature-scaled softmax. The ReLU
    /// subgradient at 0 is taken as 0.
    pub fn input_gradient(&self, x: ArrayView1<f64>, t: usize) -> Result<Array1<f64>> {
        let fwd = self.forward(x)?;
        self.input_gradient_from_forward(&fwd, t)
    }

    /// Same as [`input_gradient`](Self::input_gradient) but reusing an
    /// existing forward pass (the attack loop calls both per step).
    pub fn input_gradient_from_forward(&self, fwd: &Forward, t: usize) -> Result<Array1<f64>> {
        if t >= self.class_count {
            return Err(Error::Argument(format!(
                "class {t} out of range for {} classes",
                self.class_count
            )));
        }
        // d probs[t] / d logits[j] = probs[t]·(δ_tj − probs[j]) / T
        let pt = fwd.probs[t];
        let mut delta = fwd.probs.mapv(|pj| -pt * pj / self.temperature);
        delta[t] += pt / self.temperature;

        let mut g = self.layers.last().unwrap().w.t().dot(&delta);
        for i in (0..self.layers.len() - 1).rev() {
            // mask by the hidden activation: post-ReLU value > 0 iff the
            // pre-activation was > 0
            let mask = fwd.features[i + 1].mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
            g *= &mask;
            g = self.layers[i].w.t().dot(&g);
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite input gradient".to_string()));
        }
        Ok(g)
    }

    pub fn save(&self, base: &Path) -> Result<()> {
        let mut fields: Vec<(String, Array2<f64>)> = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            fields.push((format!("w{i}"), layer.w.clone()));
            let n = layer.b.len();
            fields.push((
                format!("b{i}"),
                layer.b.view().into_shape_with_order((n, 1)).unwrap().to_owned(),
            ));
        }
        let views: Vec<(&str, ArrayView2<f64>)> = fields
            .iter()
            .map(|(n, m)| (n.as_str(), m.view()))
            .collect();
        save_matrices(
            base,
            "mlp",
            serde_json::json!({
                "temperature": self.temperature,
                "class_count": self.class_count,
                "dims": self.dims(),
            }),
            &views,
        )
    }

    pub fn load(base: &Path) -> Result<Self> {
        let (kind, meta, fields) = load_matrices(base)?;
        if kind != "mlp" {
            return Err(Error::Format(format!(
                "expected an mlp container, found '{kind}'"
            )));
        }
        let temperature = meta["temperature"].as_f64().unwrap_or(1.0);
        let mut layers = Vec::new();
        let mut i = 0;
        loop {
            let w = fields.iter().find(|(n, _)| n == &format!("w{i}"));
            let b = fields.iter().find(|(n, _)| n == &format!("b{i}"));
            match (w, b) {
                (Some((_, w)), Some((_, b))) => {
                    layers.push(Layer {
                        w: w.clone(),
                        b: b.column(0).to_owned(),
                    });
                    i += 1;
                }
                (None, None) => break,
                _ => {
                    return Err(Error::Format(format!("layer {i} is missing w or b")));
                }
            }
        }
        Self::from_layers(layers, temperature)
    }

    fn check_input(&self, len: usize) -> Result<()> {
        if len != self.input_dim() {
            return Err(Error::Argument(format!(
                "input length {len} does not match model input dimension {}",
                self.input_dim()
            )));
        }
        Ok(())
    }
}

/// Numerically stable temperature-scaled softmax.
pub fn softmax(logits: ArrayView1<f64>, temperature: f64) -> Array1<f64> {
    let scaled = logits.mapv(|z| z / temperature);
    let max = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut exps = scaled.mapv(|z| (z - max).exp());
    let sum = exps.sum();
    exps /= sum;
    exps
}

fn argmax(v: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Momentum buffers shared between plain training and the poisoning
/// trainer's per-epoch loop.
pub(crate) struct SgdState {
    velocity_w: Vec<Array2<f64>>,
    velocity_b: Vec<Array1<f64>>,
}

impl SgdState {
    pub(crate) fn new(model: &Mlp) -> Self {
        SgdState {
            velocity_w: model.layers.iter().map(|l| Array2::zeros(l.w.dim())).collect(),
            velocity_b: model.layers.iter().map(|l| Array1::zeros(l.b.len())).collect(),
        }
    }

    /// One epoch of mini-batch SGD on shuffled data; returns the mean
    /// cross-entropy over the epoch.
    pub(crate) fn run_epoch(
        &mut self,
        model: &mut Mlp,
        data: ArrayView2<f64>,
        labels: &[usize],
        lr: f64,
        cfg: &TrainConfig,
        rng: &mut ChaCha20Rng,
        epoch: usize,
    ) -> Result<f64> {
        let n = data.ncols();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);

        let mut loss_sum = 0.0;
        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            let x = data.select(Axis(1), batch);
            let y: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let loss = self.step(model, &x, &y, lr, cfg.momentum, cfg.l2_penalty)?;
            if !loss.is_finite() {
                return Err(Error::Training {
                    epoch,
                    step,
                    message: format!("loss became {loss}"),
                });
            }
            loss_sum += loss * batch.len() as f64;
        }
        Ok(loss_sum / n as f64)
    }

    fn step(
        &mut self,
        model: &mut Mlp,
        x: &Array2<f64>,
        y: &[usize],
        lr: f64,
        momentum: f64,
        l2: f64,
    ) -> Result<f64> {
        let l = model.layers.len();
        let batch = x.ncols() as f64;
        let temp = model.temperature;

        // forward, keeping pre-ReLU signs via the activations
        let mut acts: Vec<Array2<f64>> = vec![x.clone()];
        for (i, layer) in model.layers.iter().enumerate() {
            let mut z = layer.w.dot(acts.last().unwrap());
            for mut col in z.columns_mut() {
                col += &layer.b;
            }
            if i + 1 < l {
                z.mapv_inplace(|v| v.max(0.0));
            }
            acts.push(z);
        }

        // softmax + cross-entropy on temperature-scaled logits
        let logits = acts.last().unwrap();
        let mut probs = Array2::zeros(logits.dim());
        let mut loss = 0.0;
        for (j, col) in logits.columns().into_iter().enumerate() {
            let scaled = col.mapv(|z| z / temp);
            let max = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps = scaled.mapv(|z| (z - max).exp());
            let sum = exps.sum();
            loss -= scaled[y[j]] - max - sum.ln();
            probs.column_mut(j).assign(&(exps / sum));
        }
        loss /= batch;

        // backward
        let mut grad = probs;
        for (j, &label) in y.iter().enumerate() {
            grad[(label, j)] -= 1.0;
        }
        grad.mapv_inplace(|v| v / (batch * temp));

        for i in (0..l).rev() {
            let dw = grad.dot(&acts[i].t());
            let db = grad.sum_axis(Axis(1));
            if i > 0 {
                let mut upstream = model.layers[i].w.t().dot(&grad);
                // acts[i] is post-ReLU for hidden layers
                upstream.zip_mut_with(&acts[i], |g, &a| {
                    if a <= 0.0 {
                        *g = 0.0;
                    }
                });
                grad = upstream;
            }
            let layer = &mut model.layers[i];
            let vw = &mut self.velocity_w[i];
            // decay applies to weights only, never biases
            vw.zip_mut_with(&(dw + &(l2 * &layer.w)), |v, &g| {
                *v = momentum * *v - lr * g;
            });
            layer.w += &*vw;
            let vb = &mut self.velocity_b[i];
            vb.zip_mut_with(&db, |v, &g| {
                *v = momentum * *v - lr * g;
            });
            layer.b += &*vb;
        }
        Ok(loss)
    }
}

/// Train a copy of `model` on `train` by seeded mini-batch SGD with
/// momentum and per-step L2 weight decay.
pub fn train(model: &Mlp, train: &Dataset, cfg: &TrainConfig) -> Result<Mlp> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Argument("training set is empty".to_string()));
    }
    if train.labels.iter().any(|&l| l >= model.class_count) {
        return Err(Error::Argument(format!(
            "dataset labels exceed class count {}",
            model.class_count
        )));
    }
    let mut model = model.clone();
    let mut state = SgdState::new(&model);
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    for epoch in 0..cfg.epochs {
        let lr = cfg.rate_at(epoch);
        state.run_epoch(
            &mut model,
            train.data.view(),
            &train.labels,
            lr,
            cfg,
            &mut rng,
            epoch,
        )?;
    }
    Ok(model)
}

/// Fraction of argmax-correct predictions over `ds`.
pub fn evaluate(model: &Mlp, ds: &Dataset) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::Argument("cannot evaluate on an empty dataset".to_string()));
    }
    if ds.labels.iter().any(|&l| l >= model.class_count) {
        return Err(Error::Argument(format!(
            "dataset labels exceed class count {}",
            model.class_count
        )));
    }
    let preds = model.predict_batch(ds.data.view())?;
    let correct = preds
        .iter()
        .zip(ds.labels.iter())
        .filter(|(p, l)| p == l)
        .count();
    Ok(correct as f64 / ds.len() as f64)
}

/// Median over `ds` of the max-class probability at temperature `t`,
/// given precomputed raw logits.
fn median_confidence(logits: &Array2<f64>, t: f64) -> f64 {
    let mut confs: Vec<f64> = logits
        .columns()
        .into_iter()
        .map(|col| {
            let max = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max) / t;
            let sum: f64 = col.iter().map(|&z| (z / t - max).exp()).sum();
            1.0 / sum
        })
        .collect();
    confs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = confs.len();
    if n % 2 == 1 {
        confs[n / 2]
    } else {
        0.5 * (confs[n / 2 - 1] + confs[n / 2])
    }
}

const CALIBRATION_TARGET: f64 = 0.95;
const CALIBRATION_TOLERANCE: f64 = 1e-4;

/// Set the softmax temperature so that the median confidence over
/// `test` lands in `[0.9499, 0.9501]`, by bisection on log-temperature
/// over `[-7, 7]`. Argmax predictions are unchanged by construction.
pub fn calibrate_temperature(model: &Mlp, test: &Dataset) -> Result<Mlp> {
    if test.is_empty() {
        return Err(Error::Argument("calibration set is empty".to_string()));
    }
    let mut logits = Array2::zeros((model.class_count(), test.len()));
    let mut start = 0;
    while start < test.len() {
        let stop = (start + EVAL_CHUNK).min(test.len());
        let chunk = model.logits_batch(test.data.slice(s![.., start..stop]))?;
        logits.slice_mut(s![.., start..stop]).assign(&chunk);
        start = stop;
    }

    let (mut lo, mut hi) = (-7.0f64, 7.0f64);
    if median_confidence(&logits, lo.exp()) < CALIBRATION_TARGET - CALIBRATION_TOLERANCE {
        return Err(Error::Calibration(format!(
            "median confidence stays below {CALIBRATION_TARGET} even at the sharpest temperature"
        )));
    }
    if median_confidence(&logits, hi.exp()) > CALIBRATION_TARGET + CALIBRATION_TOLERANCE {
        return Err(Error::Calibration(format!(
            "median confidence stays above {CALIBRATION_TARGET} even at the flattest temperature"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let med = median_confidence(&logits, mid.exp());
        if (med - CALIBRATION_TARGET).abs() <= CALIBRATION_TOLERANCE {
            let mut calibrated = model.clone();
            calibrated.set_temperature(mid.exp())?;
            return Ok(calibrated);
        }
        if med > CALIBRATION_TARGET {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::Calibration(
        "bisection did not land in the target window within 200 iterations".to_string(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn dataset(data: Array2<f64>, labels: Vec<usize>) -> Dataset {
        let m = data.nrows();
        Dataset::new(data, labels, (m, 1, 1), "test").unwrap()
    }

    fn identity_model(n: usize) -> Mlp {
        Mlp::from_layers(
            vec![Layer {
                w: Array2::eye(n),
                b: Array1::zeros(n),
            }],
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn identity_layer_passes_logits_through() {
        let model = identity_model(2);
        let fwd = model.forward(array![1.0, 2.0].view()).unwrap();
        assert_eq!(fwd.logits, array![1.0, 2.0]);
        assert_abs_diff_eq!(fwd.probs.sum(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn high_temperature_flattens_to_uniform() {
        let model = Mlp::from_layers(
            vec![Layer {
                w: Array2::eye(3),
                b: array![5.0, -2.0, 0.5],
            }],
            1e6,
        )
        .unwrap();
        let fwd = model.forward(array![1.0, 0.0, -1.0].view()).unwrap();
        for &p in fwd.probs.iter() {
            assert!((p - 1.0 / 3.0).abs() < 1e-3);
        }
    }

    #[test]
    fn two_layer_forward_matches_hand_computation() {
        // W1 = [[1, -1], [2, 0]], b1 = [0.5, -1]
        // W2 = [[1, 1], [-1, 2]], b2 = [0, 1]
        // x = (1, 2):
        //   z1 = (1·1 - 1·2 + 0.5, 2·1 + 0 - 1) = (-0.5, 1) → relu → (0, 1)
        //   logits = (0 + 1 + 0, 0 + 2 + 1) = (1, 3)
        let model = Mlp::from_layers(
            vec![
                Layer {
                    w: array![[1.0, -1.0], [2.0, 0.0]],
                    b: array![0.5, -1.0],
                },
                Layer {
                    w: array![[1.0, 1.0], [-1.0, 2.0]],
                    b: array![0.0, 1.0],
                },
            ],
            1.0,
        )
        .unwrap();
        let fwd = model.forward(array![1.0, 2.0].view()).unwrap();
        assert_eq!(fwd.logits, array![1.0, 3.0]);
        assert_eq!(fwd.features[1], array![0.0, 1.0]);
    }

    /// Central finite differences of probs[t] with respect to x.
    fn fd_gradient(model: &Mlp, x: &Array1<f64>, t: usize, h: f64) -> Array1<f64> {
        Array1::from_shape_fn(x.len(), |i| {
            let mut hi = x.clone();
            hi[i] += h;
            let mut lo = x.clone();
            lo[i] -= h;
            let p_hi = model.forward(hi.view()).unwrap().probs[t];
            let p_lo = model.forward(lo.view()).unwrap().probs[t];
            (p_hi - p_lo) / (2.0 * h)
        })
    }

    #[test]
    fn linear_gradient_matches_finite_differences() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let model = Mlp::new(&[6, 4], 99).unwrap();
        for _ in 0..20 {
            let x = Array1::from_shape_fn(6, |_| rng.random_range(-1.0..1.0));
            let t = rng.random_range(0..4);
            let g = model.input_gradient(x.view(), t).unwrap();
            let fd = fd_gradient(&model, &x, t, 1e-4);
            for (a, b) in g.iter().zip(fd.iter()) {
                assert!((a - b).abs() < 1e-4, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn mlp_gradient_matches_finite_differences_at_random_points() {
        let mut rng = ChaCha20Rng::seed_from_u64(17);
        let model = Mlp::new(&[8, 10, 5], 3).unwrap();
        let mut checked = 0;
        for _ in 0..100 {
            let x = Array1::from_shape_fn(8, |_| rng.random_range(-1.0..1.0));
            let t = rng.random_range(0..5);
            let g = model.input_gradient(x.view(), t).unwrap();
            let fd = fd_gradient(&model, &x, t, 1e-4);
            let denom = fd.iter().map(|v| v * v).sum::<f64>().sqrt();
            let diff = (&g - &fd).iter().map(|v| v * v).sum::<f64>().sqrt();
            if denom > 1e-8 {
                assert!(diff / denom < 1e-3, "relative error {}", diff / denom);
                checked += 1;
            }
        }
        assert!(checked > 90);
    }

    #[test]
    fn saturated_softmax_masks_the_gradient() {
        let model = Mlp::from_layers(
            vec![Layer {
                w: array![[1000.0, 0.0], [0.0, 1000.0]],
                b: Array1::zeros(2),
            }],
            1.0,
        )
        .unwrap();
        let g = model.input_gradient(array![1.0, 0.0].view(), 0).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn separable_blobs_reach_full_training_accuracy() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let n = 60;
        let mut data = Array2::zeros((2, n));
        let mut labels = Vec::with_capacity(n);
        for j in 0..n {
            let class = j % 2;
            let center = if class == 0 { 0.25 } else { 0.75 };
            data[(0, j)] = center + rng.random_range(-0.1..0.1);
            data[(1, j)] = center + rng.random_range(-0.1..0.1);
            labels.push(class);
        }
        let ds = dataset(data, labels);
        let cfg = TrainConfig {
            epochs: 50,
            learning_rate_schedule: vec![(0, 0.5)],
            momentum: 0.9,
            batch_size: 8,
            l2_penalty: 0.0,
            seed: 7,
        };
        let model = Mlp::new(&[2, 2], 42).unwrap();
        let trained = train(&model, &ds, &cfg).unwrap();
        assert_eq!(evaluate(&trained, &ds).unwrap(), 1.0);
    }

    #[test]
    fn training_is_deterministic_for_a_fixed_seed() {
        let data = Array2::from_shape_fn((3, 24), |(i, j)| ((i * 7 + j * 13) % 10) as f64 / 10.0);
        let labels: Vec<usize> = (0..24).map(|j| j % 3).collect();
        let ds = dataset(data, labels);
        let cfg = TrainConfig {
            epochs: 5,
            learning_rate_schedule: vec![(0, 0.1), (3, 0.01)],
            momentum: 0.9,
            batch_size: 4,
            l2_penalty: 1e-3,
            seed: 11,
        };
        let model = Mlp::new(&[3, 5, 3], 2).unwrap();
        let a = train(&model, &ds, &cfg).unwrap();
        let b = train(&model, &ds, &cfg).unwrap();
        for (la, lb) in a.layers().iter().zip(b.layers().iter()) {
            assert_eq!(la.w, lb.w);
            assert_eq!(la.b, lb.b);
        }
    }

    #[test]
    fn one_full_batch_step_equals_plain_gradient_descent() {
        // linear model, no momentum, no decay, batch = full data: the
        // update must equal lr · mean cross-entropy gradient, computed
        // here with plain scalar loops.
        let data = array![[0.1, 0.9, 0.4], [0.8, 0.2, 0.6]];
        let labels = vec![0usize, 1, 0];
        let ds = dataset(data.clone(), labels.clone());
        let model = Mlp::new(&[2, 2], 123).unwrap();
        let lr = 0.3;
        let cfg = TrainConfig {
            epochs: 1,
            learning_rate_schedule: vec![(0, lr)],
            momentum: 0.0,
            batch_size: 3,
            l2_penalty: 0.0,
            seed: 0,
        };
        let trained = train(&model, &ds, &cfg).unwrap();

        let w = &model.layers()[0].w;
        let b = &model.layers()[0].b;
        let mut dw = Array2::<f64>::zeros((2, 2));
        let mut db = Array1::<f64>::zeros(2);
        for j in 0..3 {
            let x = [data[(0, j)], data[(1, j)]];
            let z = [
                w[(0, 0)] * x[0] + w[(0, 1)] * x[1] + b[0],
                w[(1, 0)] * x[0] + w[(1, 1)] * x[1] + b[1],
            ];
            let max = z[0].max(z[1]);
            let e = [(z[0] - max).exp(), (z[1] - max).exp()];
            let sum = e[0] + e[1];
            for c in 0..2 {
                let indicator = if labels[j] == c { 1.0 } else { 0.0 };
                let g = (e[c] / sum - indicator) / 3.0;
                dw[(c, 0)] += g * x[0];
                dw[(c, 1)] += g * x[1];
                db[c] += g;
            }
        }
        let expect_w = w - &(lr * &dw);
        let expect_b = b - &(lr * &db);
        for (a, e) in trained.layers()[0].w.iter().zip(expect_w.iter()) {
            assert_abs_diff_eq!(a, e, epsilon = 1e-12);
        }
        for (a, e) in trained.layers()[0].b.iter().zip(expect_b.iter()) {
            assert_abs_diff_eq!(a, e, epsilon = 1e-12);
        }
    }

    #[test]
    fn evaluate_counts_argmax_matches() {
        // constant class-0 predictor on balanced 10-class data
        let mut w = Array2::zeros((10, 1));
        w[(0, 0)] = 0.0; // all logits equal: tie breaks to class 0
        let model = Mlp::from_layers(
            vec![Layer {
                w,
                b: Array1::zeros(10),
            }],
            1.0,
        )
        .unwrap();
        let data = Array2::from_elem((1, 20), 0.5);
        let labels: Vec<usize> = (0..20).map(|j| j % 10).collect();
        let ds = dataset(data, labels);
        assert_abs_diff_eq!(evaluate(&model, &ds).unwrap(), 0.1);
    }

    #[test]
    fn evaluate_matches_hand_counted_confusion() {
        let model = identity_model(2);
        // predictions: argmax of x itself
        let data = array![[0.9, 0.1, 0.6, 0.4], [0.1, 0.9, 0.4, 0.6]];
        let ds = dataset(data, vec![0, 1, 1, 1]);
        // predicted: 0, 1, 0, 1 → correct: 1st, 2nd, 4th = 3/4
        assert_abs_diff_eq!(evaluate(&model, &ds).unwrap(), 0.75);
    }

    #[test]
    fn empty_dataset_rejected() {
        let model = identity_model(2);
        let ds = dataset(Array2::zeros((2, 0)), vec![]);
        assert!(matches!(evaluate(&model, &ds), Err(Error::Argument(_))));
    }

    #[test]
    fn calibration_lands_in_window_and_matches_grid_search() {
        let mut rng = ChaCha20Rng::seed_from_u64(33);
        // synthetic fixed logits via an identity model on logit "images"
        let model = identity_model(4);
        let data = Array2::from_shape_fn((4, 301), |_| rng.random_range(0.0..1.0));
        let ds = dataset(data.clone(), vec![0; 301]);
        let calibrated = calibrate_temperature(&model, &ds).unwrap();
        let mut logits = Array2::zeros((4, 301));
        logits.assign(&data);
        let med = median_confidence(&logits, calibrated.temperature());
        assert!((0.9499..=0.9501).contains(&med), "median {med}");

        // dense grid-search oracle over log-temperature
        let mut best = (f64::INFINITY, 0.0);
        let mut s = -7.0;
        while s <= 7.0 {
            let t = f64::exp(s);
            let d = (median_confidence(&logits, t) - 0.95).abs();
            if d < best.0 {
                best = (d, t);
            }
            s += 1e-3;
        }
        assert!(
            (calibrated.temperature().ln() - best.1.ln()).abs() < 1e-3,
            "bisection {} vs grid {}",
            calibrated.temperature(),
            best.1
        );
    }

    #[test]
    fn calibrating_an_already_calibrated_model_keeps_temperature() {
        let mut rng = ChaCha20Rng::seed_from_u64(34);
        let model = identity_model(3);
        let data = Array2::from_shape_fn((3, 101), |_| rng.random_range(0.0..1.0));
        let ds = dataset(data, vec![0; 101]);
        let once = calibrate_temperature(&model, &ds).unwrap();
        let twice = calibrate_temperature(&once, &ds).unwrap();
        let multiplier = twice.temperature() / once.temperature();
        assert!((multiplier - 1.0).abs() < 1e-3, "multiplier {multiplier}");
    }

    #[test]
    fn saturated_model_calibrates_to_higher_temperature() {
        let model = Mlp::from_layers(
            vec![Layer {
                w: Array2::eye(2) * 500.0,
                b: Array1::zeros(2),
            }],
            1.0,
        )
        .unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(35);
        let data = Array2::from_shape_fn((2, 51), |_| rng.random_range(0.0..1.0));
        let ds = dataset(data, vec![0; 51]);
        let calibrated = calibrate_temperature(&model, &ds).unwrap();
        assert!(calibrated.temperature() > 1.0);
    }

    #[test]
    fn uniform_predictor_cannot_be_calibrated() {
        let model = Mlp::from_layers(
            vec![Layer {
                w: Array2::zeros((3, 2)),
                b: Array1::zeros(3),
            }],
            1.0,
        )
        .unwrap();
        let data = Array2::from_elem((2, 11), 0.5);
        let ds = dataset(data, vec![0; 11]);
        assert!(matches!(
            calibrate_temperature(&model, &ds),
            Err(Error::Calibration(_))
        ));
    }

    #[test]
    fn temperature_never_changes_predictions() {
        let mut rng = ChaCha20Rng::seed_from_u64(40);
        let model = Mlp::new(&[5, 7, 4], 8).unwrap();
        let data = Array2::from_shape_fn((5, 64), |_| rng.random_range(0.0..1.0));
        let cold = model.predict_batch(data.view()).unwrap();
        let mut hot_model = model.clone();
        hot_model.set_temperature(250.0).unwrap();
        let hot = hot_model.predict_batch(data.view()).unwrap();
        assert_eq!(cold, hot);
    }

    #[test]
    fn save_load_roundtrip_preserves_structure() {
        let model = Mlp::new(&[4, 6, 3], 77).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("model");
        model.save(&base).unwrap();
        let back = Mlp::load(&base).unwrap();
        assert_eq!(back.dims(), model.dims());
        assert_eq!(back.class_count(), 3);
        for (a, b) in model.layers().iter().zip(back.layers().iter()) {
            for (x, y) in a.w.iter().zip(b.w.iter()) {
                assert!((x - y).abs() < 1e-6);
            }
        }
    }
}
