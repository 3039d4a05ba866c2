use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::diffmath::{
    forward_batch, forward_tape, init_params, optimizer_step, Activation, AdamConfig, Mat, MlpSlots, MlpSpec,
    OptimState, ParamVector, Tape,
};
use crate::error::{Error, Result};
use crate::rng::SeedTree;
use crate::scalar::Scalar;

/// Classifier and optimisation settings shared by source training, self-training and the cycle check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub hidden: Vec<(usize, Activation)>,
    pub weight_decay: f64,
    /// Epochs for fitting from scratch (source, and the fresh target fit of the cycle).
    pub epochs: usize,
    /// Epochs for each self-training step.
    pub self_train_epochs: usize,
    /// Lower bound on optimizer steps per fit, so tiny datasets still converge.
    pub min_steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Self-training starts from the previous parameters rather than a fresh initialisation.
    pub warm_start: bool,
    /// Drop pseudo-labels whose winning probability is below this value.
    pub confidence_threshold: Option<f64>,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            hidden: vec![(32, Activation::Relu), (32, Activation::Relu)],
            weight_decay: 1e-3,
            epochs: 100,
            self_train_epochs: 30,
            min_steps: 200,
            batch_size: 64,
            lr: 5e-3,
            warm_start: false,
            confidence_threshold: None,
        }
    }
}

impl ClassifierConfig {
    pub fn spec(&self, input_dim: usize, class_count: usize) -> MlpSpec {
        MlpSpec::new(input_dim, &self.hidden, class_count).with_weight_decay(self.weight_decay)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("classifier batch_size must be positive".into()));
        }
        if !(self.lr > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidArgument("classifier lr must be > 0 and weight_decay >= 0".into()));
        }
        if let Some(c) = self.confidence_threshold {
            if !(0.0..=1.0).contains(&c) {
                return Err(Error::InvalidArgument(format!("confidence threshold must be in [0, 1], got {c}")));
            }
        }
        Ok(())
    }
}

/// Softmax MLP classifier `h_θ` over classes `1..=C`.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier<F> {
    spec: MlpSpec,
    params: ParamVector<F>,
}

impl<F: Scalar> Classifier<F> {
    pub fn new(spec: MlpSpec, params: ParamVector<F>) -> Result<Self> {
        spec.validate()?;
        if params.len() != spec.param_count() {
            return Err(Error::shape("classifier parameters", spec.param_count(), params.len()));
        }
        Ok(Classifier { spec, params })
    }

    pub fn init<R: Rng + ?Sized>(spec: MlpSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let slots = MlpSlots::for_spec(&spec);
        let params = init_params(&spec, spec.layout(), &slots, 1.0, rng);
        Ok(Classifier { spec, params })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamVector<F> {
        &self.params
    }

    pub fn class_count(&self) -> usize {
        self.spec.output_dim
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    fn check_input(&self, x: &Mat<F>) -> Result<()> {
        if x.cols() != self.spec.input_dim {
            return Err(Error::shape("classifier input", self.spec.input_dim, x.cols()));
        }
        Ok(())
    }

    pub fn logits(&self, x: &Mat<F>) -> Result<Mat<F>> {
        self.check_input(x)?;
        Ok(forward_batch(&self.spec, &self.params, &MlpSlots::for_spec(&self.spec), x))
    }

    /// Row-wise softmax probabilities.
    pub fn predict_proba(&self, x: &Mat<F>) -> Result<Mat<F>> {
        let mut p = self.logits(x)?;
        for i in 0..p.rows() {
            softmax_in_place(p.row_mut(i));
        }
        Ok(p)
    }

    /// Hard labels in `1..=C`.
    pub fn predict(&self, x: &Mat<F>) -> Result<Vec<u32>> {
        Ok(self.logits(x)?.iter_rows().map(argmax_label).collect())
    }

    /// Mean softmax cross-entropy against labels in `1..=C`.
    pub fn loss(&self, x: &Mat<F>, labels: &[u32]) -> Result<F> {
        Ok(self.loss_and_grad(x, labels)?.0)
    }

    /// Mean cross-entropy and its gradient with respect to θ.
    pub fn loss_and_grad(&self, x: &Mat<F>, labels: &[u32]) -> Result<(F, ParamVector<F>)> {
        self.check_input(x)?;
        let idx = zero_based(labels, self.class_count(), x.rows())?;
        let mut tape = Tape::new();
        let vars = tape.bind_params(&self.params);
        let xv = tape.leaf(x.clone());
        let (logits, _) = forward_tape(&mut tape, &self.spec, &vars, &MlpSlots::for_spec(&self.spec), xv);
        let loss = tape.softmax_xent(logits, &idx);
        let grads = tape.backward(loss)?;
        Ok((tape.scalar(loss), grads.params().expect("parameters bound")))
    }

    pub fn with_params(&self, params: ParamVector<F>) -> Result<Self> {
        Classifier::new(self.spec.clone(), params)
    }
}

fn softmax_in_place<F: Scalar>(row: &mut [F]) {
    let m = row.iter().copied().fold(F::neg_infinity(), F::max);
    let mut s = F::zero();
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        s = s + *v;
    }
    for v in row.iter_mut() {
        *v = *v / s;
    }
}

/// Index of the largest entry plus one; the first maximum wins.
fn argmax_label<F: Scalar>(row: &[F]) -> u32 {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = k;
        }
    }
    best as u32 + 1
}

fn zero_based(labels: &[u32], class_count: usize, n: usize) -> Result<Vec<usize>> {
    if labels.len() != n {
        return Err(Error::shape("labels", n, labels.len()));
    }
    labels
        .iter()
        .map(|&l| {
            if l == 0 || l as usize > class_count {
                Err(Error::InvalidArgument(format!("label {l} outside 1..={class_count}")))
            } else {
                Ok(l as usize - 1)
            }
        })
        .collect()
}

/// Hard pseudo-label of a single point: argmax of the class probabilities,
/// ties to the lowest class.
pub fn pseudo_label<F: Scalar>(h: &Classifier<F>, x: &[F]) -> Result<u32> {
    Ok(h.predict(&Mat::row_vector(x))?[0])
}

/// Hard label from a probability (or logit) vector.
pub fn label_from_scores<F: Scalar>(scores: &[F]) -> u32 {
    argmax_label(scores)
}

/// Outcome of one optimisation run.
#[derive(Debug, Clone)]
pub struct Fitted<F> {
    pub classifier: Classifier<F>,
    /// Accuracy on the labels that were fitted (true or pseudo).
    pub train_accuracy: f64,
    pub final_loss: f64,
    pub steps: usize,
    pub warnings: Vec<String>,
}

/// Minibatch Adam on mean cross-entropy, starting from `start`.
pub(crate) fn fit<F: Scalar>(
    start: Classifier<F>,
    x: &Mat<F>,
    labels: &[u32],
    epochs: usize,
    config: &ClassifierConfig,
    seed: SeedTree,
) -> Result<Fitted<F>> {
    config.validate()?;
    let n = x.rows();
    if n == 0 {
        return Err(Error::InvalidArgument("cannot fit a classifier on an empty dataset".into()));
    }
    zero_based(labels, start.class_count(), n)?;
    let batch = config.batch_size.min(n);
    let per_epoch = n.div_ceil(batch);
    let steps = (epochs * per_epoch).max(config.min_steps);
    let adam = AdamConfig {
        lr: config.lr,
        weight_decay: start.spec.weight_decay,
        ..AdamConfig::default()
    };
    let mut optim = OptimState::new(adam, start.params.len());
    let mut rng = seed.rng();
    let mut order: Vec<usize> = (0..n).collect();
    let mut h = start;
    let mut cursor = n;
    for step in 0..steps {
        let mut rows = Vec::with_capacity(batch);
        while rows.len() < batch {
            if cursor == n {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            rows.push(order[cursor]);
            cursor += 1;
        }
        let xb = x.select_rows(&rows);
        let yb: Vec<u32> = rows.iter().map(|&r| labels[r]).collect();
        let (loss, grad) = h.loss_and_grad(&xb, &yb)?;
        if !loss.is_finite() {
            return Err(Error::Diverged {
                epoch: step / per_epoch,
                reason: "non-finite classifier loss".into(),
            });
        }
        optimizer_step(&mut h.params, &grad, &mut optim)?;
    }
    let predictions = h.predict(x)?;
    let correct = predictions.iter().zip(labels).filter(|(a, b)| a == b).count();
    let final_loss = h.loss(x, labels)?.to_f64_lossy();
    Ok(Fitted {
        classifier: h,
        train_accuracy: correct as f64 / n as f64,
        final_loss,
        steps,
        warnings: Vec::new(),
    })
}

/// θ^(1): fits a fresh classifier to the labeled source.
pub fn train_source<F: Scalar>(source: &LabeledDataset<F>, config: &ClassifierConfig, seed: SeedTree) -> Result<Fitted<F>> {
    if source.is_empty() {
        return Err(Error::InvalidArgument("source dataset is empty".into()));
    }
    let spec = config.spec(source.dim(), source.class_count());
    let init = Classifier::init(spec, &mut seed.child("init").rng())?;
    let mut fitted = fit(init, source.features(), source.labels(), config.epochs, config, seed.child("fit"))?;
    let mut present = vec![false; source.class_count()];
    for &l in source.labels() {
        present[l as usize - 1] = true;
    }
    for (k, seen) in present.iter().enumerate() {
        if !seen {
            fitted
                .warnings
                .push(format!("class {} is absent from the source; the classifier is never trained to emit it", k + 1));
        }
    }
    for w in &fitted.warnings {
        log::warn!("{w}");
    }
    Ok(fitted)
}
