//! Class-weight computation and the seeded training loop.
//!
//! All randomness (batch shuffling, augmentation draws) derives from the
//! config seed, so a single-threaded run is exactly reproducible. Frozen
//! layers are never touched by the optimizer and backward never descends
//! into them.

use ndarray::Array1;
use num_rational::Ratio;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::model::{Gradients, Model, ModelError, ParamGrad, RuntimeLayer};
use crate::preprocess::{augment, sample_rng, AugmentConfig, HeadKind, ImageTensor, PixelScale};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("class {0} has zero samples; class weighting undefined")]
    ZeroClassCount(usize),
    #[error("NaN loss at epoch {epoch}, batch {batch}")]
    NanLoss { epoch: usize, batch: usize },
    #[error("empty {0} split")]
    EmptySplit(&'static str),
    #[error("model spec `{model}` does not match config experiment `{config}`")]
    SpecMismatch { model: String, config: String },
    #[error("sample {index} is not unit-scale or mis-sized for the model")]
    BadSample { index: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    BinaryCrossEntropy,
    CategoricalCrossEntropy,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub experiment: crate::model::ModelName,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub loss: LossKind,
    pub use_class_weights: bool,
    pub seed: u64,
}

impl TrainConfig {
    /// Baseline run: 10 epochs, batch 32, binary cross-entropy, Adam at the
    /// conventional 0.001, no class weighting.
    pub fn baseline_preset(seed: u64) -> Self {
        Self {
            experiment: crate::model::ModelName::BaselineCnn,
            epochs: 10,
            batch_size: 32,
            learning_rate: 0.001,
            loss: LossKind::BinaryCrossEntropy,
            use_class_weights: false,
            seed,
        }
    }

    /// Transfer run: 5 epochs, batch 32, lr 0.01, categorical cross-entropy,
    /// class weights on.
    pub fn vgg16_preset(seed: u64) -> Self {
        Self {
            experiment: crate::model::ModelName::Vgg16Transfer,
            epochs: 5,
            batch_size: 32,
            learning_rate: 0.01,
            loss: LossKind::CategoricalCrossEntropy,
            use_class_weights: true,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
}

/// Balanced inverse-frequency weights, exact: `w_c = N / (K * N_c)` with
/// K = 2, so `sum_c w_c * N_c = N` holds in rational arithmetic.
pub fn compute_class_weights(class_counts: [u64; 2]) -> Result<[Ratio<u64>; 2], TrainError> {
    for (c, &n) in class_counts.iter().enumerate() {
        if n == 0 {
            return Err(TrainError::ZeroClassCount(c));
        }
    }
    let n = class_counts[0] + class_counts[1];
    Ok([
        Ratio::new(n, 2 * class_counts[0]),
        Ratio::new(n, 2 * class_counts[1]),
    ])
}

fn ratio_to_f64(r: Ratio<u64>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

/// One labeled, preprocessed sample: unit-scale, model-sized image.
pub type Sample = (ImageTensor, u8);

/// Per-sample cross-entropy and the gradient at the output layer's
/// pre-activation. For sigmoid+BCE and softmax+CCE alike the gradient is
/// `p - target`.
fn loss_and_dpre(
    output: &Array1<f32>,
    label: u8,
    loss: LossKind,
) -> (f64, Array1<f32>) {
    const EPS: f32 = 1e-7;
    match loss {
        LossKind::BinaryCrossEntropy => {
            let p = output[0].clamp(EPS, 1.0 - EPS);
            let y = label as f32;
            let l = -(y * p.ln() + (1.0 - y) * (1.0 - p).ln());
            (l as f64, ndarray::arr1(&[output[0] - y]))
        }
        LossKind::CategoricalCrossEntropy => {
            let p = output[label as usize].clamp(EPS, 1.0 - EPS);
            let mut dpre = output.clone();
            dpre[label as usize] -= 1.0;
            (-(p.ln()) as f64, dpre)
        }
    }
}

fn hard_prediction(output: &Array1<f32>, head: HeadKind) -> u8 {
    match head {
        HeadKind::SigmoidScalar => (output[0] >= 0.5) as u8,
        HeadKind::SoftmaxPair => (output[1] > output[0]) as u8,
    }
}

/// The class-1 score of an output vector, for ROC work.
pub fn class1_score(output: &[f32], head: HeadKind) -> f64 {
    match head {
        HeadKind::SigmoidScalar => output[0] as f64,
        HeadKind::SoftmaxPair => output[1] as f64,
    }
}

struct AdamState {
    m_w: Vec<f32>,
    v_w: Vec<f32>,
    m_b: Vec<f32>,
    v_b: Vec<f32>,
}

/// Adam with the standard constants (beta1 0.9, beta2 0.999, eps 1e-8).
struct Adam {
    states: Vec<Option<AdamState>>,
    t: u64,
    lr: f64,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Adam {
    fn new(model: &Model, lr: f64) -> Self {
        let states = model
            .layers
            .iter()
            .map(|layer| {
                if !layer.trainable() {
                    return None;
                }
                match layer {
                    RuntimeLayer::Conv { w, b, .. } => Some(AdamState {
                        m_w: vec![0.0; w.len()],
                        v_w: vec![0.0; w.len()],
                        m_b: vec![0.0; b.len()],
                        v_b: vec![0.0; b.len()],
                    }),
                    RuntimeLayer::Dense { w, b, .. } => Some(AdamState {
                        m_w: vec![0.0; w.len()],
                        v_w: vec![0.0; w.len()],
                        m_b: vec![0.0; b.len()],
                        v_b: vec![0.0; b.len()],
                    }),
                    _ => None,
                }
            })
            .collect();
        Self { states, t: 0, lr }
    }

    fn update_slice(
        params: &mut [f32],
        grads: &[f32],
        m: &mut [f32],
        v: &mut [f32],
        lr_t: f64,
        t: u64,
    ) {
        let bc1 = 1.0 - BETA1.powi(t as i32);
        let bc2 = 1.0 - BETA2.powi(t as i32);
        for i in 0..params.len() {
            let g = grads[i] as f64;
            m[i] = (BETA1 * m[i] as f64 + (1.0 - BETA1) * g) as f32;
            v[i] = (BETA2 * v[i] as f64 + (1.0 - BETA2) * g * g) as f32;
            let m_hat = m[i] as f64 / bc1;
            let v_hat = v[i] as f64 / bc2;
            params[i] = (params[i] as f64 - lr_t * m_hat / (v_hat.sqrt() + ADAM_EPS)) as f32;
        }
    }

    fn step(&mut self, model: &mut Model, grads: &Gradients) {
        self.t += 1;
        for (i, grad) in grads.0.iter().enumerate() {
            let Some(grad) = grad else { continue };
            let Some(state) = &mut self.states[i] else { continue };
            match (&mut model.layers[i], grad) {
                (RuntimeLayer::Conv { w, b, .. }, ParamGrad::Conv(dw, db)) => {
                    Self::update_slice(
                        w.as_slice_mut().expect("contiguous"),
                        dw.as_slice().expect("contiguous"),
                        &mut state.m_w,
                        &mut state.v_w,
                        self.lr,
                        self.t,
                    );
                    Self::update_slice(
                        b.as_slice_mut().expect("contiguous"),
                        db.as_slice().expect("contiguous"),
                        &mut state.m_b,
                        &mut state.v_b,
                        self.lr,
                        self.t,
                    );
                }
                (RuntimeLayer::Dense { w, b, .. }, ParamGrad::Dense(dw, db)) => {
                    Self::update_slice(
                        w.as_slice_mut().expect("contiguous"),
                        dw.as_slice().expect("contiguous"),
                        &mut state.m_w,
                        &mut state.v_w,
                        self.lr,
                        self.t,
                    );
                    Self::update_slice(
                        b.as_slice_mut().expect("contiguous"),
                        db.as_slice().expect("contiguous"),
                        &mut state.m_b,
                        &mut state.v_b,
                        self.lr,
                        self.t,
                    );
                }
                _ => unreachable!("gradient kind misaligned with layer"),
            }
        }
    }
}

fn accumulate(total: &mut Gradients, part: Gradients) {
    for (slot, new) in total.0.iter_mut().zip(part.0) {
        match (slot.as_mut(), new) {
            (None, g) => *slot = g,
            (Some(ParamGrad::Conv(w, b)), Some(ParamGrad::Conv(dw, db))) => {
                *w += &dw;
                *b += &db;
            }
            (Some(ParamGrad::Dense(w, b)), Some(ParamGrad::Dense(dw, db))) => {
                *w += &dw;
                *b += &db;
            }
            (Some(_), None) => {}
            _ => unreachable!("gradient kinds misaligned"),
        }
    }
}

fn scale_gradients(grads: &mut Gradients, factor: f32) {
    for g in grads.0.iter_mut().flatten() {
        match g {
            ParamGrad::Conv(w, b) => {
                w.mapv_inplace(|v| v * factor);
                b.mapv_inplace(|v| v * factor);
            }
            ParamGrad::Dense(w, b) => {
                w.mapv_inplace(|v| v * factor);
                b.mapv_inplace(|v| v * factor);
            }
        }
    }
}

fn shuffle_rng(seed: u64, epoch: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0x5348_5546 ^ epoch); // distinct from augmentation streams
    rng
}

fn validate_samples(model: &Model, samples: &[Sample]) -> Result<(), TrainError> {
    for (i, (img, _)) in samples.iter().enumerate() {
        if img.scale != PixelScale::Unit
            || img.data.shape() != [model.spec.input_size, model.spec.input_size, 3]
        {
            return Err(TrainError::BadSample { index: i });
        }
    }
    Ok(())
}

/// Train `model` in place for exactly `cfg.epochs` epochs. Returns the
/// per-epoch history. Class weights (when enabled) scale each sample's loss
/// and gradient; validation metrics are computed unweighted and without
/// augmentation.
pub fn train(
    model: &mut Model,
    train_samples: &[Sample],
    val_samples: &[Sample],
    augment_cfg: &AugmentConfig,
    cfg: &TrainConfig,
) -> Result<TrainHistory, TrainError> {
    if model.spec.name != cfg.experiment {
        return Err(TrainError::SpecMismatch {
            model: model.spec.name.to_string(),
            config: format!("{:?}", cfg.experiment),
        });
    }
    if train_samples.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    if val_samples.is_empty() {
        return Err(TrainError::EmptySplit("validation"));
    }
    validate_samples(model, train_samples)?;
    validate_samples(model, val_samples)?;

    let weights: Option<[f64; 2]> = if cfg.use_class_weights {
        let mut counts = [0u64; 2];
        for (_, label) in train_samples {
            counts[*label as usize] += 1;
        }
        let ws = compute_class_weights(counts)?;
        Some([ratio_to_f64(ws[0]), ratio_to_f64(ws[1])])
    } else {
        None
    };

    let mut adam = Adam::new(model, cfg.learning_rate);
    let mut history = TrainHistory::default();
    let head = model.spec.head_kind;

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train_samples.len()).collect();
        order.shuffle(&mut shuffle_rng(cfg.seed, epoch as u64));

        let mut epoch_loss = 0.0f64;
        let mut correct = 0usize;
        for (batch_no, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut batch_grads = Gradients((0..model.layers.len()).map(|_| None).collect());
            let mut batch_loss = 0.0f64;
            for &idx in batch {
                let (base, label) = &train_samples[idx];
                let mut rng = sample_rng(cfg.seed, epoch as u64, idx as u64);
                let img = augment(base, augment_cfg, &mut rng);
                let (output, tape) = model.forward_train(&img.data)?;
                let (loss, mut dpre) = loss_and_dpre(&output, *label, cfg.loss);
                let w = weights.map_or(1.0, |ws| ws[*label as usize]);
                batch_loss += loss * w;
                dpre.mapv_inplace(|v| v * w as f32);
                if hard_prediction(&output, head) == *label {
                    correct += 1;
                }
                let grads = model.backward(&tape, dpre);
                accumulate(&mut batch_grads, grads);
            }
            let batch_mean = batch_loss / batch.len() as f64;
            if !batch_mean.is_finite() {
                return Err(TrainError::NanLoss { epoch, batch: batch_no });
            }
            scale_gradients(&mut batch_grads, 1.0 / batch.len() as f32);
            adam.step(model, &batch_grads);
            epoch_loss += batch_loss;
        }

        let train_loss = epoch_loss / train_samples.len() as f64;
        let train_acc = correct as f64 / train_samples.len() as f64;
        let (val_loss, val_acc) = evaluate_loss(model, val_samples, cfg.loss)?;
        if !val_loss.is_finite() {
            return Err(TrainError::NanLoss { epoch, batch: usize::MAX });
        }
        history.epochs.push(EpochStats {
            epoch,
            train_loss,
            train_acc,
            val_loss,
            val_acc,
        });
    }
    Ok(history)
}

/// Mean unweighted loss and hard-prediction accuracy over a split.
pub fn evaluate_loss(
    model: &Model,
    samples: &[Sample],
    loss: LossKind,
) -> Result<(f64, f64), TrainError> {
    if samples.is_empty() {
        return Err(TrainError::EmptySplit("evaluation"));
    }
    let head = model.spec.head_kind;
    let mut total = 0.0f64;
    let mut correct = 0usize;
    for (img, label) in samples {
        let output = model.forward(&img.data)?;
        let (l, _) = loss_and_dpre(&output, *label, loss);
        total += l;
        if hard_prediction(&output, head) == *label {
            correct += 1;
        }
    }
    Ok((
        total / samples.len() as f64,
        correct as f64 / samples.len() as f64,
    ))
}

/// Score every sample: returns (labels, hard predictions, class-1 scores).
pub fn score_split(
    model: &Model,
    samples: &[Sample],
) -> Result<(Vec<u8>, Vec<u8>, Vec<f64>), TrainError> {
    let head = model.spec.head_kind;
    let mut labels = Vec::with_capacity(samples.len());
    let mut preds = Vec::with_capacity(samples.len());
    let mut scores = Vec::with_capacity(samples.len());
    for (img, label) in samples {
        let output = model.forward(&img.data)?;
        labels.push(*label);
        preds.push(hard_prediction(&output, head));
        scores.push(class1_score(output.as_slice().expect("contiguous"), head));
    }
    Ok((labels, preds, scores))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{baseline_cnn_spec, instantiate};
    use ndarray::Array3;
    use rand::Rng;

    fn synthetic_samples(n_per_class: usize, size: usize, seed: u64) -> Vec<Sample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::new();
        for label in 0..2u8 {
            let (lo, hi) = if label == 0 { (0.05f32, 0.4) } else { (0.6, 0.95) };
            for _ in 0..n_per_class {
                let data = Array3::from_shape_fn((size, size, 3), |_| rng.gen_range(lo..hi));
                out.push((ImageTensor::new(data, PixelScale::Unit), label));
            }
        }
        out
    }

    #[test]
    fn class_weights_balanced_are_one() {
        let ws = compute_class_weights([960, 960]).unwrap();
        assert_eq!(ws[0], Ratio::new(1, 1));
        assert_eq!(ws[1], Ratio::new(1, 1));
    }

    #[test]
    fn class_weights_match_formula() {
        // counts (1500, 420), N = 1920: weights 0.64 and 2.2857...
        let ws = compute_class_weights([1500, 420]).unwrap();
        assert_eq!(ws[0], Ratio::new(1920, 3000));
        assert_eq!(ws[1], Ratio::new(1920, 840));
        assert!((ratio_to_f64(ws[0]) - 0.64).abs() < 1e-12);
        assert!((ratio_to_f64(ws[1]) - 16.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn class_weight_identity_holds_exactly() {
        let counts = [506u64, 134];
        let ws = compute_class_weights(counts).unwrap();
        let total: Ratio<u64> =
            ws[0] * Ratio::from_integer(counts[0]) + ws[1] * Ratio::from_integer(counts[1]);
        assert_eq!(total, Ratio::from_integer(counts[0] + counts[1]));
    }

    #[test]
    fn class_weights_reject_zero_count() {
        assert!(matches!(
            compute_class_weights([640, 0]),
            Err(TrainError::ZeroClassCount(1))
        ));
    }

    #[test]
    fn presets_match_executed_configurations() {
        let b = TrainConfig::baseline_preset(1);
        assert_eq!(b.epochs, 10);
        assert_eq!(b.batch_size, 32);
        assert_eq!(b.loss, LossKind::BinaryCrossEntropy);
        assert!(!b.use_class_weights);
        let t = TrainConfig::vgg16_preset(1);
        assert_eq!(t.epochs, 5);
        assert_eq!(t.batch_size, 32);
        assert_eq!(t.learning_rate, 0.01);
        assert_eq!(t.loss, LossKind::CategoricalCrossEntropy);
        assert!(t.use_class_weights);
    }

    #[test]
    fn history_has_one_entry_per_epoch() {
        let mut model = instantiate(&baseline_cnn_spec(), 1, None).unwrap();
        let samples = synthetic_samples(4, 64, 2);
        let cfg = TrainConfig {
            epochs: 3,
            ..TrainConfig::baseline_preset(1)
        };
        let history = train(&mut model, &samples, &samples, &AugmentConfig::off(), &cfg).unwrap();
        assert_eq!(history.epochs.len(), 3);
        for e in &history.epochs {
            assert!(e.train_loss.is_finite());
            assert!(e.val_loss.is_finite());
        }
    }

    #[test]
    fn training_is_seed_deterministic() {
        let samples = synthetic_samples(3, 64, 5);
        let run = || {
            let mut model = instantiate(&baseline_cnn_spec(), 4, None).unwrap();
            let cfg = TrainConfig {
                epochs: 2,
                ..TrainConfig::baseline_preset(9)
            };
            let history =
                train(&mut model, &samples, &samples, &AugmentConfig::off(), &cfg).unwrap();
            (history, model.weights_checksum())
        };
        let (h1, c1) = run();
        let (h2, c2) = run();
        assert_eq!(h1, h2);
        assert_eq!(c1, c2);
    }

    #[test]
    fn spec_config_mismatch_is_rejected() {
        let mut model = instantiate(&baseline_cnn_spec(), 1, None).unwrap();
        let samples = synthetic_samples(2, 64, 3);
        let cfg = TrainConfig::vgg16_preset(1);
        assert!(matches!(
            train(&mut model, &samples, &samples, &AugmentConfig::off(), &cfg),
            Err(TrainError::SpecMismatch { .. })
        ));
    }

    #[test]
    fn empty_split_is_rejected() {
        let mut model = instantiate(&baseline_cnn_spec(), 1, None).unwrap();
        let samples = synthetic_samples(2, 64, 3);
        let cfg = TrainConfig::baseline_preset(1);
        assert!(matches!(
            train(&mut model, &[], &samples, &AugmentConfig::off(), &cfg),
            Err(TrainError::EmptySplit("train"))
        ));
    }

    #[test]
    fn balanced_data_weighting_is_identity() {
        // weights are exactly 1.0 on balanced counts, so enabling weighting
        // changes nothing
        let samples = synthetic_samples(3, 64, 8);
        let run = |use_weights: bool| {
            let mut model = instantiate(&baseline_cnn_spec(), 2, None).unwrap();
            let cfg = TrainConfig {
                epochs: 2,
                use_class_weights: use_weights,
                ..TrainConfig::baseline_preset(3)
            };
            train(&mut model, &samples, &samples, &AugmentConfig::off(), &cfg).unwrap();
            model.weights_checksum()
        };
        assert_eq!(run(false), run(true));
    }
}
