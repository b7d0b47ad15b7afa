//! Graph convolutional classifier over causal graphs: three ReLU graph
//! convolutions, mean pooling and a sigmoid readout, trained with Adam on the
//! binary cross-entropy by explicit backpropagation.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::discovery::CausalGraph;
use crate::incremental::laplacian;
use crate::stream::PriorKnowledge;
use crate::{Error, Result};

/// Feature columns produced by [`featurize`].
pub const FEATURE_COUNT: usize = 3;
/// Probability clamp used by the loss.
pub const BCE_EPS: f64 = 1e-7;
const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphSample {
    /// `I - L_norm`, symmetric `M x M`.
    #[serde(with = "crate::matrix")]
    pub aggregation: DMatrix<f64>,
    /// `M x F` node features.
    #[serde(with = "crate::matrix")]
    pub features: DMatrix<f64>,
    pub label: u8,
}

impl GraphSample {
    pub fn validate(&self) -> Result<()> {
        let m = self.aggregation.nrows();
        if self.aggregation.ncols() != m || self.features.nrows() != m || m == 0 {
            return Err(Error::Shape {
                expected: format!("square aggregation matching {} feature rows", self.features.nrows()),
                got: format!("{}x{}", self.aggregation.nrows(), self.aggregation.ncols()),
            });
        }
        if self.features.ncols() == 0 {
            return Err(Error::invalid("sample has no feature columns"));
        }
        if self.aggregation.iter().chain(self.features.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("sample contains non-finite values"));
        }
        if (&self.aggregation - self.aggregation.transpose()).abs().max() > 1e-9 {
            return Err(Error::invalid("aggregation operator is not symmetric"));
        }
        if self.label > 1 {
            return Err(Error::invalid(format!("label must be 0 or 1, got {}", self.label)));
        }
        Ok(())
    }
}

/// Aggregation `I - L_norm` and node features `[in-degree, out-degree, in domain]`,
/// where degrees sum `|w|` over intra and lagged edges.
pub fn featurize(graph: &CausalGraph, prior: &PriorKnowledge, label: u8) -> Result<GraphSample> {
    let m = graph.node_count();
    let lv = laplacian(graph)?;
    let aggregation = DMatrix::identity(m, m) - lv.normalized;
    let domain = prior.domain_indices(&graph.node_ids);
    let mut features = DMatrix::zeros(m, FEATURE_COUNT);
    for e in graph.edges() {
        features[(e.target, 0)] += e.weight.abs();
        features[(e.source, 1)] += e.weight.abs();
    }
    for i in domain {
        features[(i, 2)] = 1.0;
    }
    let sample = GraphSample {
        aggregation,
        features,
        label,
    };
    sample.validate()?;
    Ok(sample)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcnModel {
    /// `F x h`, `h x h`, `h x h`.
    #[serde(with = "matrices")]
    pub layers: Vec<DMatrix<f64>>,
    /// `h x 1`.
    #[serde(with = "crate::matrix")]
    pub readout: DMatrix<f64>,
    pub dropout: f64,
}

mod matrices {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Wrap(#[serde(with = "crate::matrix")] DMatrix<f64>);

    pub fn serialize<S: Serializer>(v: &[DMatrix<f64>], s: S) -> Result<S::Ok, S::Error> {
        v.iter().map(|m| Wrap(m.clone())).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<DMatrix<f64>>, D::Error> {
        Ok(Vec::<Wrap>::deserialize(d)?.into_iter().map(|w| w.0).collect())
    }
}

#[derive(Serialize, Deserialize)]
struct ModelDump {
    version: u32,
    model: GcnModel,
}

/// Gradients with the same shapes as the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<DMatrix<f64>>,
    pub readout: DMatrix<f64>,
}

/// Intermediate values of one forward pass.
struct Trace {
    /// `L_agg H^(i)` for each layer.
    agg: Vec<DMatrix<f64>>,
    /// Pre-activations.
    pre: Vec<DMatrix<f64>>,
    /// Dropout scaling of `H^(3)`, if any.
    mask: Option<DMatrix<f64>>,
    pooled: DMatrix<f64>,
    prob: f64,
}

fn relu(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.map(|v| v.max(0.0))
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `-(y ln p + (1 - y) ln(1 - p))` with `p` clamped to `[ε, 1 - ε]`.
pub fn bce_loss(p: f64, y: u8) -> f64 {
    let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
    if y == 1 {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// Mean loss over a batch of `(probability, label)` pairs.
pub fn bce_batch(pairs: &[(f64, u8)]) -> f64 {
    pairs.iter().map(|&(p, y)| bce_loss(p, y)).sum::<f64>() / pairs.len() as f64
}

fn glorot(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-a..a))
}

impl GcnModel {
    /// Glorot-uniform weights for `features -> hidden -> hidden -> hidden -> 1`.
    pub fn init(features: usize, hidden: usize, dropout: f64, seed: u64) -> Result<Self> {
        if features == 0 || hidden == 0 {
            return Err(Error::invalid("feature count and hidden width must be positive"));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::invalid(format!("dropout must be in [0, 1), got {dropout}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = vec![
            glorot(features, hidden, &mut rng),
            glorot(hidden, hidden, &mut rng),
            glorot(hidden, hidden, &mut rng),
        ];
        let readout = glorot(hidden, 1, &mut rng);
        Ok(GcnModel {
            layers,
            readout,
            dropout,
        })
    }

    /// All-zero weights; predicts 0.5 everywhere.
    pub fn zeros(features: usize, hidden: usize) -> Self {
        GcnModel {
            layers: vec![
                DMatrix::zeros(features, hidden),
                DMatrix::zeros(hidden, hidden),
                DMatrix::zeros(hidden, hidden),
            ],
            readout: DMatrix::zeros(hidden, 1),
            dropout: 0.0,
        }
    }

    pub fn feature_count(&self) -> usize {
        self.layers[0].nrows()
    }

    pub fn hidden_width(&self) -> usize {
        self.readout.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.len() != 3 {
            return Err(Error::Shape {
                expected: "3 layers".into(),
                got: format!("{} layers", self.layers.len()),
            });
        }
        let h = self.hidden_width();
        let f = self.feature_count();
        let shapes = [(f, h), (h, h), (h, h)];
        if self.layers.len() != 3
            || self.layers.iter().zip(shapes).any(|(m, s)| m.shape() != s)
            || self.readout.ncols() != 1
        {
            return Err(Error::Shape {
                expected: format!("layers {f}x{h}, {h}x{h}, {h}x{h} and readout {h}x1"),
                got: format!(
                    "{:?}, readout {:?}",
                    self.layers.iter().map(|m| m.shape()).collect::<Vec<_>>(),
                    self.readout.shape()
                ),
            });
        }
        if self.layers.iter().chain([&self.readout]).any(|m| m.iter().any(|v| !v.is_finite())) {
            return Err(Error::invalid("model weights are not finite"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid("dropout must be in [0, 1)"));
        }
        Ok(())
    }

    fn check_sample(&self, sample: &GraphSample) -> Result<()> {
        if sample.features.ncols() != self.feature_count() {
            return Err(Error::Shape {
                expected: format!("{} feature columns", self.feature_count()),
                got: format!("{}", sample.features.ncols()),
            });
        }
        if sample.aggregation.shape() != (sample.features.nrows(), sample.features.nrows()) {
            return Err(Error::Shape {
                expected: format!("{0}x{0} aggregation", sample.features.nrows()),
                got: format!("{:?}", sample.aggregation.shape()),
            });
        }
        Ok(())
    }

    fn trace(&self, sample: &GraphSample, mask: Option<DMatrix<f64>>) -> Trace {
        let a = &sample.aggregation;
        let mut h = sample.features.clone();
        let mut agg = Vec::with_capacity(3);
        let mut pre = Vec::with_capacity(3);
        for w in &self.layers {
            let ah = a * &h;
            let z = &ah * w;
            h = relu(&z);
            agg.push(ah);
            pre.push(z);
        }
        if let Some(mask) = &mask {
            h.component_mul_assign(mask);
        }
        let pooled = h.row_mean();
        let logit = (&pooled * &self.readout)[(0, 0)];
        Trace {
            agg,
            pre,
            mask,
            pooled: DMatrix::from_row_slice(1, pooled.len(), pooled.as_slice()),
            prob: sigmoid(logit),
        }
    }

    /// Inference-mode probability of the attack class.
    pub fn forward(&self, sample: &GraphSample) -> Result<f64> {
        self.check_sample(sample)?;
        Ok(self.trace(sample, None).prob)
    }

    /// Loss and gradients of the mean BCE over `samples`, with optional
    /// per-sample dropout scalings of `H^(3)`.
    pub fn loss_and_gradients(&self, samples: &[GraphSample], masks: Option<&[DMatrix<f64>]>) -> Result<(f64, Gradients)> {
        if samples.is_empty() {
            return Err(Error::Training("empty batch".into()));
        }
        let n = samples.len() as f64;
        let mut grads = Gradients {
            layers: self.layers.iter().map(|w| DMatrix::zeros(w.nrows(), w.ncols())).collect(),
            readout: DMatrix::zeros(self.readout.nrows(), 1),
        };
        let mut loss = 0.0;
        for (s, sample) in samples.iter().enumerate() {
            self.check_sample(sample)?;
            let t = self.trace(sample, masks.map(|m| m[s].clone()));
            let y = f64::from(sample.label);
            loss += bce_loss(t.prob, sample.label);
            // d(mean BCE)/d(logit); zero where the clamp is active.
            let clamped = t.prob < BCE_EPS || t.prob > 1.0 - BCE_EPS;
            let g_logit = if clamped { 0.0 } else { (t.prob - y) / n };
            grads.readout += t.pooled.transpose() * g_logit;

            let m = sample.features.nrows();
            let g_pooled = self.readout.transpose() * g_logit;
            let mut g_h = DMatrix::from_fn(m, g_pooled.ncols(), |_, j| g_pooled[(0, j)] / m as f64);
            if let Some(mask) = &t.mask {
                g_h.component_mul_assign(mask);
            }
            for layer in (0..3).rev() {
                let g_z = g_h.zip_map(&t.pre[layer], |g, z| if z > 0.0 { g } else { 0.0 });
                grads.layers[layer] += t.agg[layer].transpose() * &g_z;
                if layer > 0 {
                    g_h = sample.aggregation.transpose() * (&g_z * self.layers[layer].transpose());
                }
            }
        }
        Ok((loss / n, grads))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ModelDump {
            version: MODEL_VERSION,
            model: self.clone(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let dump: ModelDump = serde_json::from_str(text)?;
        if dump.version != MODEL_VERSION {
            return Err(Error::invalid(format!("unsupported model version {}", dump.version)));
        }
        dump.model.validate()?;
        Ok(dump.model)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub hidden: usize,
    pub dropout: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            epochs: 400,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            hidden: 16,
            dropout: 0.2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.epsilon > 0.0) {
            return Err(Error::Config("Adam parameters out of range".into()));
        }
        if self.hidden == 0 {
            return Err(Error::Config("hidden width must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must be in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub model: GcnModel,
    /// Training loss per epoch, measured with that epoch's dropout masks.
    pub loss_trace: Vec<f64>,
}

struct Adam {
    m: Vec<DMatrix<f64>>,
    v: Vec<DMatrix<f64>>,
    t: i32,
}

impl Adam {
    fn step(&mut self, params: &mut [&mut DMatrix<f64>], grads: &[&DMatrix<f64>], cfg: &TrainConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            self.m[k] = &self.m[k] * cfg.beta1 + *g * (1.0 - cfg.beta1);
            self.v[k] = &self.v[k] * cfg.beta2 + g.map(|x| x * x) * (1.0 - cfg.beta2);
            let step = self.m[k].zip_map(&self.v[k], |m, v| cfg.learning_rate * (m / c1) / ((v / c2).sqrt() + cfg.epsilon));
            **p -= step;
        }
    }
}

/// Full-batch training. Deterministic for a fixed seed.
pub fn train(samples: &[GraphSample], config: &TrainConfig) -> Result<TrainedModel> {
    config.validate().map_err(|e| Error::Training(e.to_string()))?;
    if samples.len() < 2 {
        return Err(Error::Training(format!("need at least 2 samples, got {}", samples.len())));
    }
    let positives = samples.iter().filter(|s| s.label == 1).count();
    if positives == 0 || positives == samples.len() {
        return Err(Error::Training("training set has a single class".into()));
    }
    let features = samples[0].features.ncols();
    for s in samples {
        s.validate()?;
        if s.features.ncols() != features {
            return Err(Error::Training("samples disagree on feature count".into()));
        }
    }
    let mut model = GcnModel::init(features, config.hidden, config.dropout, config.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let shapes: Vec<_> = model.layers.iter().chain([&model.readout]).map(|m| m.shape()).collect();
    let mut adam = Adam {
        m: shapes.iter().map(|&(r, c)| DMatrix::zeros(r, c)).collect(),
        v: shapes.iter().map(|&(r, c)| DMatrix::zeros(r, c)).collect(),
        t: 0,
    };
    let keep = 1.0 - config.dropout;
    let mut loss_trace = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let masks: Option<Vec<DMatrix<f64>>> = (config.dropout > 0.0).then(|| {
            samples
                .iter()
                .map(|s| {
                    DMatrix::from_fn(s.features.nrows(), config.hidden, |_, _| {
                        if rng.random::<f64>() < keep {
                            1.0 / keep
                        } else {
                            0.0
                        }
                    })
                })
                .collect()
        });
        let (loss, grads) = model.loss_and_gradients(samples, masks.as_deref())?;
        if !loss.is_finite() {
            return Err(Error::Training(format!("non-finite loss at epoch {epoch}")));
        }
        loss_trace.push(loss);
        let GcnModel { layers, readout, .. } = &mut model;
        let mut params: Vec<&mut DMatrix<f64>> = layers.iter_mut().chain([readout]).collect();
        let g: Vec<&DMatrix<f64>> = grads.layers.iter().chain([&grads.readout]).collect();
        adam.step(&mut params, &g, config);
        if model.layers.iter().chain([&model.readout]).any(|m| m.iter().any(|v| !v.is_finite())) {
            return Err(Error::Training(format!("non-finite weights after epoch {epoch}")));
        }
    }
    Ok(TrainedModel { model, loss_trace })
}

/// `(label, probability)` with label 1 iff the probability reaches `threshold`.
pub fn classify(model: &GcnModel, sample: &GraphSample, threshold: f64) -> Result<(u8, f64)> {
    let p = model.forward(sample)?;
    Ok((u8::from(p >= threshold), p))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(m: usize) -> Vec<String> {
        (0..m).map(|i| format!("x{i}")).collect()
    }

    #[test]
    fn featurize_degrees_and_indicator() {
        let mut g = CausalGraph::empty(ids(3), 1, 0.1);
        g.intra[(0, 1)] = 1.0;
        let prior = PriorKnowledge::new(["x2"], Vec::<String>::new());
        let s = featurize(&g, &prior, 0).unwrap();
        assert_eq!(s.features[(0, 1)], 1.0);
        assert_eq!(s.features[(1, 0)], 1.0);
        assert_eq!(s.features.column(2).as_slice(), &[0.0, 0.0, 1.0]);
        let empty = featurize(&CausalGraph::empty(ids(3), 1, 0.1), &prior, 0).unwrap();
        assert!(empty.features.columns(0, 2).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_model_is_half() {
        let m = GcnModel::zeros(3, 4);
        let s = GraphSample {
            aggregation: DMatrix::identity(2, 2),
            features: DMatrix::from_element(2, 3, 1.0),
            label: 0,
        };
        assert_eq!(m.forward(&s).unwrap(), 0.5);
        assert_eq!(classify(&m, &s, 0.5).unwrap(), (1, 0.5));
    }

    #[test]
    fn scalar_chain() {
        // h = 1, single node, L_agg = I: p = sigmoid(v * relu(c*relu(b*relu(a*x)))).
        let (a, b, c, v, x) = (0.7, 1.3, 0.4, -2.0, 1.5);
        let model = GcnModel {
            layers: vec![
                DMatrix::from_element(1, 1, a),
                DMatrix::from_element(1, 1, b),
                DMatrix::from_element(1, 1, c),
            ],
            readout: DMatrix::from_element(1, 1, v),
            dropout: 0.0,
        };
        let s = GraphSample {
            aggregation: DMatrix::identity(1, 1),
            features: DMatrix::from_element(1, 1, x),
            label: 1,
        };
        let z: f64 = v * (c * (b * (a * x)));
        assert!((model.forward(&s).unwrap() - 1.0 / (1.0 + (-z).exp())).abs() < 1e-15);
    }

    #[test]
    fn bce_values() {
        assert!((bce_loss(0.5, 1) - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((bce_loss(1.0 - BCE_EPS, 1) - 1e-7).abs() < 1e-12);
        assert!((bce_loss(0.9, 0) - std::f64::consts::LN_10).abs() < 1e-12);
        assert!(bce_loss(0.0, 1).is_finite());
    }

    #[test]
    fn train_rejects_bad_input() {
        let s = GraphSample {
            aggregation: DMatrix::identity(1, 1),
            features: DMatrix::from_element(1, 3, 1.0),
            label: 1,
        };
        let cfg = TrainConfig::default();
        assert!(train(&[s.clone(), s.clone()], &cfg).is_err());
        let mut neg = s.clone();
        neg.label = 0;
        let zero = TrainConfig { epochs: 0, ..cfg };
        assert!(train(&[s, neg], &zero).is_err());
    }
}
