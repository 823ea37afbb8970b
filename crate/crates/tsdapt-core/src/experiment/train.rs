//! The training loop and prediction.
//!
//! Every step draws one batch per source domain (plus one target batch
//! for the adaptation methods) from independent per-domain seed
//! streams, assembles the method's objective as a fresh graph, runs one
//! backward pass, and applies one optimizer update. Runs are
//! deterministic in the config seed.

use super::{ExperimentConfig, ExperimentError, LossTraces, RunResult};
use crate::data::{split_train_valid_test, DomainDataset, TimeSeriesWindow};
use crate::losses::{
    self, AuxiliaryExample, LabelProportions, LossComponents, Method,
};
use crate::metrics;
use crate::models::{target_domain_index, ModelParameters};
use crate::rng;
use crate::tensor::{AdamState, Array, Graph, NodeId};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::time::Instant;

/// Source and target datasets for one adaptation run.
pub struct AdaptationData<'a> {
    pub sources: Vec<&'a DomainDataset>,
    pub target: &'a DomainDataset,
    pub num_classes: usize,
}

/// Trained parameters plus the optimizer state that produced them.
pub struct TrainedModel {
    pub params: ModelParameters,
    pub optimizer: AdamState,
}

struct BatchSampler {
    indices: Vec<usize>,
    cursor: usize,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    fn new(len: usize, seed: u64, label: &str) -> Self {
        let mut rng = rng::stream(seed, label);
        let mut indices: Vec<usize> = (0..len).collect();
        indices.shuffle(&mut rng);
        Self {
            indices,
            cursor: 0,
            rng,
        }
    }

    fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.cursor == self.indices.len() {
                self.indices.shuffle(&mut self.rng);
                self.cursor = 0;
            }
            out.push(self.indices[self.cursor]);
            self.cursor += 1;
        }
        out
    }
}

fn window_label(w: &TimeSeriesWindow, num_classes: usize) -> Result<usize, ExperimentError> {
    let y = w.label.ok_or_else(|| {
        ExperimentError::InvalidConfig("training window is missing its label".into())
    })?;
    if y >= num_classes {
        return Err(ExperimentError::InvalidConfig(format!(
            "label {y} out of range for {num_classes} classes"
        )));
    }
    Ok(y)
}

fn resolve_proportions(
    config: &ExperimentConfig,
    data: &AdaptationData,
) -> Result<Option<LabelProportions>, ExperimentError> {
    if !config.method.uses_weak_supervision() {
        return Ok(None);
    }
    if let Some(p) = &config.proportions {
        if p.num_classes() != data.num_classes {
            return Err(ExperimentError::InvalidConfig(format!(
                "proportions cover {} classes but the dataset has {}",
                p.num_classes(),
                data.num_classes
            )));
        }
        return Ok(Some(p.clone()));
    }
    // simulate self-reported proportions: aggregate measurement on the
    // target's labeled training split
    data.target
        .train_label_proportions(data.num_classes)
        .map(Some)
        .map_err(|_| ExperimentError::MissingProportions {
            method: config.method.name(),
        })
}

/// Trains one run and returns the model with its per-step loss traces.
pub fn train(
    config: &ExperimentConfig,
    data: &AdaptationData,
) -> Result<(TrainedModel, LossTraces, usize), ExperimentError> {
    config.validate()?;
    let method = config.method;
    let proportions = resolve_proportions(config, data)?;

    // window geometry from whichever training split this method reads
    let probe = if method == Method::TrainOnTarget {
        data.target.unlabeled_train().first()
    } else {
        data.sources.first().and_then(|s| s.unlabeled_train().first())
    }
    .ok_or_else(|| ExperimentError::EmptyDomain(config.target.clone()))?;
    let channels = probe.channels();

    let arch = config.architecture(channels, data.num_classes);
    let mut params = ModelParameters::init(arch, config.seed)?;
    let mut optimizer = AdamState::new(params.arrays(), config.optimizer);

    // independent batch streams per domain keep the sampling sequences
    // identical across methods that share a seed
    let mut source_samplers: Vec<BatchSampler> = Vec::new();
    if method != Method::TrainOnTarget {
        for s in &data.sources {
            if s.train_len() == 0 {
                return Err(ExperimentError::EmptyDomain(s.id().to_string()));
            }
            source_samplers.push(BatchSampler::new(
                s.train_len(),
                config.seed,
                &format!("batch/{}", s.id()),
            ));
        }
    }
    let needs_target_batch = method.uses_domain_loss() || method.uses_weak_supervision();
    let mut target_sampler = if needs_target_batch || method == Method::TrainOnTarget {
        if data.target.train_len() == 0 {
            return Err(ExperimentError::EmptyDomain(data.target.id().to_string()));
        }
        Some(BatchSampler::new(
            data.target.train_len(),
            config.seed,
            &format!("batch/{}", data.target.id()),
        ))
    } else {
        None
    };

    let largest_train = if method == Method::TrainOnTarget {
        data.target.train_len()
    } else {
        data.sources.iter().map(|s| s.train_len()).max().unwrap_or(0)
    };
    let steps_per_epoch = config
        .steps_per_epoch
        .unwrap_or_else(|| largest_train.div_ceil(config.batch_size).max(1));
    let total_steps = config.epochs * steps_per_epoch;
    let num_domains = data.sources.len() + 1;
    let target_index = target_domain_index(num_domains);

    let mut traces = LossTraces::default();
    for step in 0..total_steps {
        let progress = step as f64 / total_steps as f64;
        let lambda = config.lambda_schedule.at(progress);

        let mut graph = Graph::new();
        let bound = params.bind(&mut graph);
        let mut components = LossComponents::default();

        if method == Method::TrainOnTarget {
            let batch = target_sampler.as_mut().expect("sampler exists").next_batch(config.batch_size);
            let windows = data.target.labeled_train();
            let mut preds = Vec::with_capacity(batch.len());
            let mut labels = Vec::with_capacity(batch.len());
            for &i in &batch {
                let w = &windows[i];
                let input = graph.constant(w.values.clone());
                let feats = bound.feature_extractor(&mut graph, input)?;
                preds.push(bound.task_classifier(&mut graph, feats)?);
                labels.push(window_label(w, data.num_classes)?);
            }
            components.task = Some(losses::task_loss(&mut graph, &preds, &labels)?);
        } else {
            let mut task_preds = Vec::new();
            let mut task_labels = Vec::new();
            let mut domain_preds = Vec::new();
            let mut domain_labels = Vec::new();
            let mut aux = Vec::new();
            let mut embeddings = Vec::new();

            for (di, source) in data.sources.iter().enumerate() {
                let batch = source_samplers[di].next_batch(config.batch_size);
                let windows = source.labeled_train();
                for &i in &batch {
                    let w = &windows[i];
                    let y = window_label(w, data.num_classes)?;
                    let input = graph.constant(w.values.clone());
                    let feats = bound.feature_extractor(&mut graph, input)?;
                    task_preds.push(bound.task_classifier(&mut graph, feats)?);
                    task_labels.push(y);
                    if method.uses_domain_loss() {
                        domain_preds.push(bound.domain_classifier(&mut graph, feats, lambda)?);
                        domain_labels.push(di);
                    }
                    if method.uses_contrastive() {
                        aux.push(AuxiliaryExample { label: y, domain: di });
                        embeddings.push(bound.contrastive_head(&mut graph, feats)?);
                    }
                }
            }

            let mut target_task_preds: Vec<NodeId> = Vec::new();
            if needs_target_batch {
                let batch = target_sampler.as_mut().expect("sampler exists").next_batch(config.batch_size);
                let windows = data.target.unlabeled_train();
                for &i in &batch {
                    let input = graph.constant(windows[i].values.clone());
                    let feats = bound.feature_extractor(&mut graph, input)?;
                    if method.uses_domain_loss() {
                        domain_preds.push(bound.domain_classifier(&mut graph, feats, lambda)?);
                        domain_labels.push(target_index);
                    }
                    if method.uses_weak_supervision() {
                        target_task_preds.push(bound.task_classifier(&mut graph, feats)?);
                    }
                }
            }

            components.task = Some(losses::task_loss(&mut graph, &task_preds, &task_labels)?);
            if method.uses_domain_loss() {
                components.domain = Some(losses::domain_adversarial_loss(
                    &mut graph,
                    &domain_preds,
                    &domain_labels,
                    num_domains,
                )?);
            }
            if method.uses_contrastive() {
                components.contrastive = Some(losses::contrastive_objective(
                    &mut graph,
                    &aux,
                    &embeddings,
                    config.weights.temperature,
                )?);
            }
            if method.uses_weak_supervision() {
                let p = proportions.as_ref().expect("resolved above");
                components.weak_supervision = Some(losses::weak_supervision_loss(
                    &mut graph,
                    &target_task_preds,
                    p,
                )?);
            }
        }

        let total = losses::total_loss(&mut graph, &components, &config.weights, method)?;
        let grads = graph.backward(total)?;
        let grad_refs: Vec<Option<&Array>> =
            bound.param_ids().iter().map(|&id| grads.get(id)).collect();
        optimizer.step(params.arrays_mut(), &grad_refs)?;

        let scalar = |id: Option<NodeId>| id.map(|n| graph.value(n).data()[0]);
        if let Some(v) = scalar(components.task) {
            traces.task.push(v);
        }
        if let Some(v) = scalar(components.domain) {
            traces.domain.push(v);
        }
        if let Some(v) = scalar(components.contrastive) {
            traces.contrastive.push(v);
        }
        if let Some(v) = scalar(components.weak_supervision) {
            traces.weak_supervision.push(v);
        }
        traces.total.push(graph.value(total).data()[0]);
    }

    // unsupervised contract: adaptation methods never read target labels
    if method != Method::TrainOnTarget {
        let count = data.target.label_access_count();
        if count > 0 {
            return Err(ExperimentError::UnsupervisedContractViolated { count });
        }
    }

    Ok((TrainedModel { params, optimizer }, traces, steps_per_epoch))
}

/// Softmax class probabilities for each window: `[count, L]` rows.
pub fn predict(
    params: &ModelParameters,
    windows: &[TimeSeriesWindow],
) -> Result<Array, ExperimentError> {
    let l = params.arch().num_classes;
    let mut rows = Vec::with_capacity(windows.len() * l);
    for w in windows {
        let mut graph = Graph::new();
        let bound = params.bind_frozen(&mut graph);
        let input = graph.constant(w.values.clone());
        let feats = bound.feature_extractor(&mut graph, input)?;
        let pred = bound.task_classifier(&mut graph, feats)?;
        rows.extend_from_slice(graph.value(pred).data());
    }
    Ok(Array::new(vec![windows.len(), l], rows)?)
}

/// Mean task cross-entropy of `params` over labeled windows.
fn mean_task_loss(
    params: &ModelParameters,
    windows: &[TimeSeriesWindow],
) -> Result<Option<f64>, ExperimentError> {
    let mut graph = Graph::new();
    let bound = params.bind_frozen(&mut graph);
    let mut preds = Vec::new();
    let mut labels = Vec::new();
    for w in windows {
        let Some(y) = w.label else { continue };
        let input = graph.constant(w.values.clone());
        let feats = bound.feature_extractor(&mut graph, input)?;
        preds.push(bound.task_classifier(&mut graph, feats)?);
        labels.push(y);
    }
    if preds.is_empty() {
        return Ok(None);
    }
    let loss = losses::task_loss(&mut graph, &preds, &labels)?;
    Ok(Some(graph.value(loss).data()[0]))
}

/// Splits the needed domains, trains, and evaluates on the target test
/// split. `domains` maps domain id to that domain's windows.
pub fn run_experiment(
    config: &ExperimentConfig,
    domains: &BTreeMap<String, Vec<TimeSeriesWindow>>,
) -> Result<RunResult, ExperimentError> {
    config.validate()?;
    let started = Instant::now();

    let num_classes = domains
        .values()
        .flatten()
        .filter_map(|w| w.label)
        .max()
        .map(|m| m + 1)
        .ok_or_else(|| ExperimentError::InvalidConfig("dataset has no labels".into()))?
        .max(2);

    let split = |id: &str| -> Result<DomainDataset, ExperimentError> {
        let windows = domains
            .get(id)
            .ok_or_else(|| ExperimentError::MissingDomain(id.to_string()))?;
        Ok(split_train_valid_test(
            id,
            windows.clone(),
            config.fractions,
            config.seed,
        )?)
    };
    let sources: Vec<DomainDataset> = config
        .sources
        .iter()
        .map(|id| split(id))
        .collect::<Result<_, _>>()?;
    let target = split(&config.target)?;

    let data = AdaptationData {
        sources: sources.iter().collect(),
        target: &target,
        num_classes,
    };
    let (model, traces, steps_per_epoch) = train(config, &data)?;

    let test = target.test();
    let scores = predict(&model.params, test)?;
    let labels: Vec<usize> = test
        .iter()
        .map(|w| {
            w.label.ok_or_else(|| {
                ExperimentError::InvalidConfig("target test window is missing its label".into())
            })
        })
        .collect::<Result<_, _>>()?;
    let target_auc = metrics::auc_macro(&scores, &labels)?;
    let target_accuracy = metrics::accuracy(&scores, &labels)?;

    let valid_windows: Vec<TimeSeriesWindow> = if config.method == Method::TrainOnTarget {
        target.valid().to_vec()
    } else {
        sources.iter().flat_map(|s| s.valid().to_vec()).collect()
    };
    let source_valid_loss = mean_task_loss(&model.params, &valid_windows)?;

    Ok(RunResult {
        config: config.clone(),
        target_auc,
        target_accuracy,
        steps_per_epoch,
        traces,
        source_valid_loss,
        wall_time_seconds: started.elapsed().as_secs_f64(),
    })
}
