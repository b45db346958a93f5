//! End-to-end training with online pseudo-unknown generation, followed by
//! sequential streaming inference.
//!
//! Per minibatch: forward both views and compute the contrastive and
//! cross-entropy terms; draw the generation trigger and, when it fires,
//! perturb mixup anchors into pseudo-unknowns; score inputs and
//! pseudo-unknowns against the known prototypes for the dual hinge and move
//! `τ` (only on triggered batches); take an AdamW step on the weighted total;
//! refresh the known prototypes with the updated features.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::datakit::{augment_view, stream_iter, OcdSplit};
use crate::error::{LtcError, Result};
use crate::evalkit::{evaluate, EvalReport, StreamResult};
use crate::losses::{ce_loss, max_margin_loss, sup_con_loss, total_loss, LabeledBatch, LossConfig};
use crate::math;
use crate::mkee::{generate_pseudo_batch, MkeeConfig, PseudoDiagnostics};
use crate::neuralcore::{adamw_step, AdamWConfig, Architecture, ModelParams, OptimizerState};
use crate::protodict::{
    init_prototypes, quantile_targets, Assignment, PrototypeStore, ThresholdConfig,
    ThresholdState, DEFAULT_MOMENTUM,
};

/// Component switches for ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Ablation {
    pub enable_mkee: bool,
    pub enable_mm: bool,
    pub adaptive_tau: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Self {
            enable_mkee: true,
            enable_mm: true,
            adaptive_tau: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainConfig {
    pub loss: LossConfig,
    pub mkee: MkeeConfig,
    pub threshold: ThresholdConfig,
    pub optimizer: AdamWConfig,
    pub ablation: Ablation,
    pub epochs: usize,
    pub batch_size: usize,
    pub hidden_dim: usize,
    pub feature_dim: usize,
    pub prototype_momentum: f64,
    /// Standard deviation of the Gaussian noise that forms the augmented view.
    pub augment_noise: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossConfig::default(),
            mkee: MkeeConfig::default(),
            threshold: ThresholdConfig::default(),
            optimizer: AdamWConfig::default(),
            ablation: Ablation::default(),
            epochs: 50,
            batch_size: 32,
            hidden_dim: 64,
            feature_dim: 32,
            prototype_momentum: DEFAULT_MOMENTUM,
            augment_noise: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        self.mkee.validate()?;
        self.threshold.validate()?;
        self.optimizer.validate()?;
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(LtcError::InvalidConfig("epochs and batch_size must be positive"));
        }
        if self.hidden_dim == 0 || self.feature_dim == 0 {
            return Err(LtcError::InvalidConfig("layer widths must be positive"));
        }
        if !(0.0..=1.0).contains(&self.prototype_momentum) {
            return Err(LtcError::InvalidConfig("prototype momentum must lie in [0, 1]"));
        }
        if !(self.augment_noise >= 0.0 && self.augment_noise.is_finite()) {
            return Err(LtcError::InvalidConfig("augment_noise must be non-negative"));
        }
        Ok(())
    }
}

/// Encoder, prototype dictionary and threshold after training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub params: ModelParams,
    pub store: PrototypeStore,
    pub threshold: ThresholdState,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EpochStats {
    pub epoch: usize,
    pub ce: f64,
    pub sup: f64,
    pub mm: f64,
    pub mm_pos: f64,
    pub mm_neg: f64,
    pub total: f64,
    pub batches: usize,
    pub triggered_batches: usize,
    pub pseudo_samples: usize,
    pub tau: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BatchStats {
    pub epoch: usize,
    pub batch: usize,
    pub total: f64,
    pub triggered: bool,
    pub pseudo_samples: usize,
    pub tau: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DiagnosticRow {
    pub epoch: usize,
    pub batch: usize,
    pub anchor: usize,
    pub diagnostics: PseudoDiagnostics,
}

/// Everything logged during training.
#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainRecord {
    pub epochs: Vec<EpochStats>,
    pub batches: Vec<BatchStats>,
    pub diagnostics: Vec<DiagnosticRow>,
}

impl TrainRecord {
    pub fn tau_trajectory(&self) -> Vec<f64> {
        self.batches.iter().map(|b| b.tau).collect()
    }

    pub fn total_pseudo_samples(&self) -> usize {
        self.epochs.iter().map(|e| e.pseudo_samples).sum()
    }
}

struct BatchOutcome {
    ce: f64,
    sup: f64,
    mm: f64,
    mm_pos: f64,
    mm_neg: f64,
    total: f64,
    triggered: bool,
    pseudo: usize,
    diagnostics: Vec<PseudoDiagnostics>,
}

struct Trainer<'a> {
    cfg: &'a TrainConfig,
    params: ModelParams,
    store: PrototypeStore,
    threshold: ThresholdState,
    optimizer: OptimizerState,
    rng: ChaCha8Rng,
}

impl Trainer<'_> {
    fn step(&mut self, batch: &LabeledBatch, epoch: usize) -> Result<BatchOutcome> {
        let cfg = self.cfg;
        let b = batch.len();
        let (views, view_labels) = batch.all_views();
        let traces = views
            .iter()
            .map(|x| self.params.forward(x))
            .collect::<Result<Vec<_>>>()?;
        let features: Vec<Vec<f64>> = traces.iter().map(|t| t.feature.clone()).collect();
        let logits: Vec<Vec<f64>> = traces.iter().map(|t| t.logits.clone()).collect();
        let sup = sup_con_loss(&features, &view_labels, cfg.loss.temperature)?;
        let ce = ce_loss(&logits, &view_labels)?;

        let pseudo = if cfg.ablation.enable_mkee {
            generate_pseudo_batch(&self.params, batch, &cfg.mkee, epoch, &mut self.rng)?
        } else {
            None
        };
        let triggered = pseudo.is_some();

        let known_matches = features[..b]
            .iter()
            .map(|f| self.store.match_known(f))
            .collect::<Result<Vec<_>>>()?;
        let known_scores: Vec<f64> = known_matches.iter().map(|m| m.s_max).collect();
        let (pseudo_traces, diagnostics) = match &pseudo {
            Some(pb) => (
                pb.outputs
                    .iter()
                    .map(|x| self.params.forward(x))
                    .collect::<Result<Vec<_>>>()?,
                pb.diagnostics.clone(),
            ),
            None => (Vec::new(), Vec::new()),
        };
        let pseudo_matches = pseudo_traces
            .iter()
            .map(|t| self.store.match_known(&t.feature))
            .collect::<Result<Vec<_>>>()?;
        let pseudo_scores: Vec<f64> = pseudo_matches.iter().map(|m| m.s_max).collect();

        let margin = if cfg.ablation.enable_mm {
            Some(max_margin_loss(
                &known_scores,
                &pseudo_scores,
                self.threshold.tau,
                cfg.loss.m_pos,
                cfg.loss.m_neg,
            )?)
        } else {
            None
        };
        if triggered && cfg.ablation.adaptive_tau {
            let t = &cfg.threshold;
            if let Some(targets) = quantile_targets(&known_scores, &pseudo_scores, t.q_pos, t.q_neg) {
                self.threshold.ema_update(targets);
            }
        }

        let (mm, mm_pos, mm_neg) = margin.as_ref().map_or((0.0, 0.0, 0.0), |m| (m.total, m.pos, m.neg));
        let total = total_loss(ce.value, sup.value, mm, cfg.loss.alpha, cfg.loss.gamma_mm);
        if !total.is_finite() {
            return Err(LtcError::NonFinite("training loss"));
        }

        let alpha = cfg.loss.alpha;
        let gamma = cfg.loss.gamma_mm;
        let known = self.store.known_prototypes();
        let mut grads = self.params.zeros_like();
        for (v, trace) in traces.iter().enumerate() {
            let mut grad_f = math::scaled(&sup.grads[v], alpha);
            if let (Some(m), true) = (&margin, v < b) {
                let g = gamma * m.grad_known[v];
                if g != 0.0 {
                    math::axpy(g, &known[known_matches[v].index], &mut grad_f);
                }
            }
            self.params
                .accumulate_gradients(trace, &grad_f, &ce.grads[v], &mut grads)?;
        }
        if let Some(m) = &margin {
            let zero_logits = vec![0.0; self.params.num_classes()];
            for (j, trace) in pseudo_traces.iter().enumerate() {
                let g = gamma * m.grad_pseudo[j];
                if g == 0.0 {
                    continue;
                }
                let grad_f = math::scaled(&known[pseudo_matches[j].index], g);
                self.params
                    .accumulate_gradients(trace, &grad_f, &zero_logits, &mut grads)?;
            }
        }
        adamw_step(&mut self.params, &grads, &mut self.optimizer)?;

        for (x, &y) in batch.inputs.iter().zip(&batch.labels) {
            let f = self.params.forward(x)?.feature;
            self.store.running_update(&f, y)?;
        }

        Ok(BatchOutcome {
            ce: ce.value,
            sup: sup.value,
            mm,
            mm_pos,
            mm_neg,
            total,
            triggered,
            pseudo: pseudo_traces.len(),
            diagnostics,
        })
    }
}

/// Trains the encoder, head, prototypes and threshold on the support set.
pub fn train(split: &OcdSplit, cfg: &TrainConfig) -> Result<(TrainedModel, TrainRecord)> {
    cfg.validate()?;
    if split.support.is_empty() {
        return Err(LtcError::Empty("support set"));
    }
    let k = split.k_known();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let arch = Architecture::mlp(split.dim, cfg.hidden_dim, cfg.feature_dim, k);
    let params = ModelParams::init(&arch, &mut rng)?;
    let inputs = split.support_inputs();
    let classes = split.support_classes();
    let initial_features = inputs
        .iter()
        .map(|x| params.forward(x).map(|t| t.feature))
        .collect::<Result<Vec<_>>>()?;
    let store = init_prototypes(&initial_features, &classes, k)?.with_momentum(cfg.prototype_momentum);
    let optimizer = OptimizerState::new(&params, cfg.optimizer);
    let mut trainer = Trainer {
        cfg,
        params,
        store,
        threshold: ThresholdState::new(cfg.threshold),
        optimizer,
        rng,
    };

    let mut record = TrainRecord::default();
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut trainer.rng);
        let mut stats = EpochStats {
            epoch,
            ce: 0.0,
            sup: 0.0,
            mm: 0.0,
            mm_pos: 0.0,
            mm_neg: 0.0,
            total: 0.0,
            batches: 0,
            triggered_batches: 0,
            pseudo_samples: 0,
            tau: trainer.threshold.tau,
        };
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch_inputs: Vec<Vec<f64>> = chunk.iter().map(|&i| inputs[i].clone()).collect();
            let views = batch_inputs
                .iter()
                .map(|x| augment_view(x, cfg.augment_noise, &mut trainer.rng))
                .collect();
            let labels = chunk.iter().map(|&i| classes[i]).collect();
            let batch = LabeledBatch::new(batch_inputs, views, labels)?;
            let out = trainer.step(&batch, epoch)?;

            stats.ce += out.ce;
            stats.sup += out.sup;
            stats.mm += out.mm;
            stats.mm_pos += out.mm_pos;
            stats.mm_neg += out.mm_neg;
            stats.total += out.total;
            stats.batches += 1;
            stats.triggered_batches += out.triggered as usize;
            stats.pseudo_samples += out.pseudo;
            record.batches.push(BatchStats {
                epoch,
                batch: bi,
                total: out.total,
                triggered: out.triggered,
                pseudo_samples: out.pseudo,
                tau: trainer.threshold.tau,
            });
            record
                .diagnostics
                .extend(out.diagnostics.into_iter().enumerate().map(|(anchor, d)| DiagnosticRow {
                    epoch,
                    batch: bi,
                    anchor,
                    diagnostics: d,
                }));
        }
        let n = stats.batches as f64;
        stats.ce /= n;
        stats.sup /= n;
        stats.mm /= n;
        stats.mm_pos /= n;
        stats.mm_neg /= n;
        stats.total /= n;
        stats.tau = trainer.threshold.tau;
        record.epochs.push(stats);
    }
    Ok((
        TrainedModel {
            params: trainer.params,
            store: trainer.store,
            threshold: trainer.threshold,
        },
        record,
    ))
}

/// One streamed decision.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StreamRecord {
    pub id: usize,
    pub prediction: usize,
    pub s_max: f64,
    pub spawned: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamOutcome {
    pub records: Vec<StreamRecord>,
    pub store: PrototypeStore,
}

/// Single sequential pass over the query stream with `τ` frozen.
pub fn run_stream(
    params: &ModelParams,
    store: &PrototypeStore,
    tau: f64,
    split: &OcdSplit,
) -> Result<StreamOutcome> {
    if params.input_dim() != split.dim {
        return Err(LtcError::DimensionMismatch {
            expected: params.input_dim(),
            actual: split.dim,
        });
    }
    let mut store = store.clone();
    let mut records = Vec::with_capacity(split.query.len());
    for item in stream_iter(split) {
        let f = params.forward(item.x)?.feature;
        let Assignment {
            index,
            s_max,
            spawned,
        } = store.assign_or_spawn(&f, tau)?;
        records.push(StreamRecord {
            id: item.id,
            prediction: index,
            s_max,
            spawned,
        });
    }
    Ok(StreamOutcome { records, store })
}

/// Pairs stream predictions with the withheld ground truth.
pub fn stream_result(split: &OcdSplit, records: &[StreamRecord]) -> Result<StreamResult> {
    if records.len() != split.query.len() {
        return Err(LtcError::ShapeMismatch("stream records/query items"));
    }
    let mut truth = Vec::with_capacity(records.len());
    for (r, q) in records.iter().zip(&split.query) {
        if r.id != q.id {
            return Err(LtcError::ShapeMismatch("stream id order"));
        }
        truth.push(q.label);
    }
    StreamResult::new(
        truth,
        records.iter().map(|r| r.prediction).collect(),
        split.old_classes(),
        split.num_classes(),
    )
}

/// Output of [`run_pipeline`].
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub model: TrainedModel,
    pub record: TrainRecord,
    pub stream: StreamOutcome,
    pub report: EvalReport,
}

/// Train, stream with the trained threshold, evaluate.
pub fn run_pipeline(split: &OcdSplit, cfg: &TrainConfig) -> Result<RunOutcome> {
    let (model, record) = train(split, cfg)?;
    let stream = run_stream(&model.params, &model.store, model.threshold.tau, split)?;
    let report = evaluate(&stream_result(split, &stream.records)?)?;
    Ok(RunOutcome {
        model,
        record,
        stream,
        report,
    })
}
