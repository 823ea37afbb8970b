//! Training objectives: task cross-entropy, adversarial domain loss,
//! contrastive set construction with the InfoNCE objective, the
//! label-proportion KL regularizer, and their method-specific weighted
//! combination.
//!
//! All losses are built as graph nodes over per-example prediction or
//! embedding nodes, so one backward pass differentiates the combined
//! objective.

use crate::tensor::{Array, Graph, NodeId, TensorError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("{0}")]
    InvalidInput(String),
    #[error("method {method} requires the {component} loss component")]
    MissingComponent {
        method: &'static str,
        component: &'static str,
    },
    #[error("domain loss needs both source and target examples in the batch")]
    MissingTargetBatch,
    #[error("invalid label proportions: {0}")]
    InvalidProportions(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Training method selector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    NoAdaptation,
    Codats,
    CodatsWs,
    Calda,
    CaldaWs,
    TrainOnTarget,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::NoAdaptation,
        Method::Codats,
        Method::CodatsWs,
        Method::Calda,
        Method::CaldaWs,
        Method::TrainOnTarget,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Method::NoAdaptation => "no_adaptation",
            Method::Codats => "codats",
            Method::CodatsWs => "codats_ws",
            Method::Calda => "calda",
            Method::CaldaWs => "calda_ws",
            Method::TrainOnTarget => "train_on_target",
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        Method::ALL.iter().copied().find(|m| m.name() == s)
    }

    pub fn uses_domain_loss(&self) -> bool {
        matches!(self, Method::Codats | Method::CodatsWs | Method::Calda | Method::CaldaWs)
    }

    pub fn uses_contrastive(&self) -> bool {
        matches!(self, Method::Calda | Method::CaldaWs)
    }

    pub fn uses_weak_supervision(&self) -> bool {
        matches!(self, Method::CodatsWs | Method::CaldaWs)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Loss combination weights and the contrastive temperature.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Gradient-reversal coefficient used when the schedule is constant.
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// Weight of the contrastive objective.
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    /// Weight of the weak-supervision KL term.
    #[serde(default = "default_beta")]
    pub beta: f64,
    /// InfoNCE temperature.
    #[serde(default = "default_tau")]
    pub temperature: f64,
}

fn default_lambda() -> f64 {
    1.0
}
fn default_gamma() -> f64 {
    0.1
}
fn default_beta() -> f64 {
    1.0
}
fn default_tau() -> f64 {
    0.1
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda: default_lambda(),
            gamma: default_gamma(),
            beta: default_beta(),
            temperature: default_tau(),
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), LossError> {
        if self.lambda < 0.0 || self.gamma < 0.0 || self.beta < 0.0 {
            return Err(LossError::InvalidInput(
                "loss weights must be non-negative".into(),
            ));
        }
        if self.temperature <= 0.0 {
            return Err(LossError::InvalidInput(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// Target-domain label proportions (a discrete distribution over classes).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelProportions(Vec<f64>);

impl LabelProportions {
    pub fn new(p: Vec<f64>) -> Result<Self, LossError> {
        if p.is_empty() {
            return Err(LossError::InvalidProportions("empty distribution".into()));
        }
        if p.iter().any(|&v| !v.is_finite() || v < 0.0) {
            return Err(LossError::InvalidProportions(
                "entries must be finite and non-negative".into(),
            ));
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(LossError::InvalidProportions(format!(
                "entries sum to {sum}, expected 1"
            )));
        }
        Ok(Self(p))
    }

    /// Empirical frequencies from class counts.
    pub fn from_counts(counts: &[usize]) -> Result<Self, LossError> {
        let total: usize = counts.iter().sum();
        if total == 0 {
            return Err(LossError::InvalidProportions("no labeled examples".into()));
        }
        Self::new(counts.iter().map(|&c| c as f64 / total as f64).collect())
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.0
    }

    pub fn num_classes(&self) -> usize {
        self.0.len()
    }
}

/// Mean cross-entropy of per-example prediction nodes against labels.
pub fn task_loss(g: &mut Graph, predictions: &[NodeId], labels: &[usize]) -> Result<NodeId, LossError> {
    if predictions.is_empty() || predictions.len() != labels.len() {
        return Err(LossError::InvalidInput(format!(
            "need one label per prediction, got {} predictions and {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let mut terms = Vec::with_capacity(predictions.len());
    for (&p, &y) in predictions.iter().zip(labels) {
        terms.push(g.cross_entropy(p, y)?);
    }
    Ok(g.mean_n(&terms)?)
}

/// Mean cross-entropy of domain predictions over all source and target
/// examples. The target is encoded as the last domain index; the batch
/// must contain at least one source and one target example.
pub fn domain_adversarial_loss(
    g: &mut Graph,
    predictions: &[NodeId],
    domain_labels: &[usize],
    num_domains: usize,
) -> Result<NodeId, LossError> {
    if predictions.is_empty() || predictions.len() != domain_labels.len() {
        return Err(LossError::InvalidInput(format!(
            "need one domain label per prediction, got {} predictions and {} labels",
            predictions.len(),
            domain_labels.len()
        )));
    }
    let target = num_domains - 1;
    let has_target = domain_labels.iter().any(|&d| d == target);
    let has_source = domain_labels.iter().any(|&d| d != target);
    if !has_target || !has_source {
        return Err(LossError::MissingTargetBatch);
    }
    let mut terms = Vec::with_capacity(predictions.len());
    for (&p, &d) in predictions.iter().zip(domain_labels) {
        terms.push(g.cross_entropy(p, d)?);
    }
    Ok(g.mean_n(&terms)?)
}

/// One labeled source-domain example of a contrastive batch. The
/// projected embedding is looked up by position, so a batch of
/// `AuxiliaryExample`s must stay index-aligned with its embeddings.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AuxiliaryExample {
    pub label: usize,
    pub domain: usize,
}

/// Query/positive/negative index sets for one query example.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContrastiveSets {
    /// Index of the query within the batch.
    pub query: usize,
    /// Indices of same-label examples, excluding the query itself.
    pub positives: Vec<usize>,
    /// Indices of different-label examples.
    pub negatives: Vec<usize>,
}

/// Builds the contrastive sets for every example of a source-domain
/// batch. Positives share the query's label (the query itself is
/// excluded), negatives differ in label, and both are drawn from the
/// whole batch regardless of domain. Queries with no positive are
/// skipped.
pub fn build_contrastive_sets(batch: &[AuxiliaryExample]) -> Vec<ContrastiveSets> {
    let mut sets = Vec::with_capacity(batch.len());
    for (q, query) in batch.iter().enumerate() {
        let mut positives = Vec::new();
        let mut negatives = Vec::new();
        for (k, other) in batch.iter().enumerate() {
            if other.label == query.label {
                if k != q {
                    positives.push(k);
                }
            } else {
                negatives.push(k);
            }
        }
        if positives.is_empty() {
            continue;
        }
        sets.push(ContrastiveSets {
            query: q,
            positives,
            negatives,
        });
    }
    sets
}

/// InfoNCE over cosine similarities at temperature `tau`:
/// the mean over positives of `-log(exp(s_p / tau) / sum_{k in N + {p}}
/// exp(s_k / tau))`, computed with log-sum-exp stabilization.
pub fn info_nce(
    g: &mut Graph,
    query: NodeId,
    positives: &[NodeId],
    negatives: &[NodeId],
    tau: f64,
) -> Result<NodeId, LossError> {
    if positives.is_empty() {
        return Err(LossError::InvalidInput("info_nce requires at least one positive".into()));
    }
    if tau <= 0.0 {
        return Err(LossError::InvalidInput(format!("temperature must be positive, got {tau}")));
    }
    let mut negative_sims = Vec::with_capacity(negatives.len());
    for &n in negatives {
        let s = g.cosine_similarity(query, n)?;
        negative_sims.push(g.scale(s, 1.0 / tau)?);
    }
    let mut terms = Vec::with_capacity(positives.len());
    for &p in positives {
        let s = g.cosine_similarity(query, p)?;
        let s = g.scale(s, 1.0 / tau)?;
        let mut pool = negative_sims.clone();
        pool.push(s);
        let lse = g.log_sum_exp(&pool)?;
        terms.push(g.sub(lse, s)?);
    }
    Ok(g.mean_n(&terms)?)
}

/// The full contrastive objective: queries are grouped by source
/// domain, InfoNCE is averaged within each group, and the group means
/// are summed. Returns a constant zero (with a warning) when every
/// query was skipped for lack of positives.
pub fn contrastive_objective(
    g: &mut Graph,
    batch: &[AuxiliaryExample],
    embeddings: &[NodeId],
    tau: f64,
) -> Result<NodeId, LossError> {
    if batch.len() != embeddings.len() {
        return Err(LossError::InvalidInput(format!(
            "need one embedding per example, got {} examples and {} embeddings",
            batch.len(),
            embeddings.len()
        )));
    }
    let sets = build_contrastive_sets(batch);
    if sets.is_empty() {
        log::warn!("contrastive objective: every query had an empty positive set; contributing 0");
        return Ok(g.constant(Array::scalar(0.0)));
    }
    let mut domains: Vec<usize> = sets.iter().map(|s| batch[s.query].domain).collect();
    domains.sort_unstable();
    domains.dedup();

    let mut per_domain = Vec::with_capacity(domains.len());
    for d in domains {
        let mut losses = Vec::new();
        for set in sets.iter().filter(|s| batch[s.query].domain == d) {
            let pos: Vec<NodeId> = set.positives.iter().map(|&i| embeddings[i]).collect();
            let neg: Vec<NodeId> = set.negatives.iter().map(|&i| embeddings[i]).collect();
            losses.push(info_nce(g, embeddings[set.query], &pos, &neg, tau)?);
        }
        per_domain.push(g.mean_n(&losses)?);
    }
    Ok(g.add_n(&per_domain)?)
}

/// KL divergence from the known target label proportions to the mean
/// predicted distribution of a target batch:
/// `sum_y p_y (ln p_y - ln mean_q_y)`, with the log floored at 1e-12.
pub fn weak_supervision_loss(
    g: &mut Graph,
    target_predictions: &[NodeId],
    proportions: &LabelProportions,
) -> Result<NodeId, LossError> {
    if target_predictions.is_empty() {
        return Err(LossError::InvalidInput(
            "weak supervision needs a non-empty target batch".into(),
        ));
    }
    for &p in target_predictions {
        let n = g.value(p).len();
        if n != proportions.num_classes() {
            return Err(LossError::InvalidProportions(format!(
                "predictions have {} classes but proportions have {}",
                n,
                proportions.num_classes()
            )));
        }
    }
    let mean_pred = g.mean_n(target_predictions)?;
    let log_mean = g.ln(mean_pred)?;
    let p_const = g.constant(Array::vector(proportions.probabilities().to_vec()));
    let weighted = g.mul(p_const, log_mean)?;
    let cross = g.sum(weighted)?;
    // entropy term of the fixed proportions, with 0 ln 0 = 0
    let self_term: f64 = proportions
        .probabilities()
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum();
    let entropy = g.constant(Array::scalar(self_term));
    Ok(g.sub(entropy, cross)?)
}

/// The loss components a method may combine.
#[derive(Clone, Copy, Debug, Default)]
pub struct LossComponents {
    pub task: Option<NodeId>,
    pub domain: Option<NodeId>,
    pub contrastive: Option<NodeId>,
    pub weak_supervision: Option<NodeId>,
}

/// Combines components per method: `codats = task + domain`,
/// `calda = task + domain + gamma * contrastive`, `-ws` variants add
/// `beta * weak_supervision`, and the bounds use the task loss alone.
pub fn total_loss(
    g: &mut Graph,
    components: &LossComponents,
    weights: &LossWeights,
    method: Method,
) -> Result<NodeId, LossError> {
    weights.validate()?;
    let require = |c: Option<NodeId>, component: &'static str| {
        c.ok_or(LossError::MissingComponent {
            method: method.name(),
            component,
        })
    };
    let mut terms = vec![require(components.task, "task")?];
    if method.uses_domain_loss() {
        terms.push(require(components.domain, "domain")?);
    }
    if method.uses_contrastive() {
        let c = require(components.contrastive, "contrastive")?;
        terms.push(g.scale(c, weights.gamma)?);
    }
    if method.uses_weak_supervision() {
        let w = require(components.weak_supervision, "weak_supervision")?;
        terms.push(g.scale(w, weights.beta)?);
    }
    Ok(g.add_n(&terms)?)
}
