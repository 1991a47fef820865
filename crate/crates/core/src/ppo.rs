//! Clipped-ratio policy optimisation of the generator against a terminal
//! sequence reward, with low-rank adapters and a value head as the only
//! trainable parameters.

use std::io::Write;

use ampforge_numerics::{clip_grad_norm, AdamConfig, AdamState, Graph, Tensor};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::mic::ActivityScorer;
use crate::physchem::{descriptor_vector, PropertyVector, ScaleTable};
use crate::policy::{
    actions_to_peptide, InferenceModel, LoraConfig, PolicyModel, SamplingConfig, TokenBatch, NUM_ACTIONS,
};
use crate::reward::{breakdown, process_rewards, RewardBreakdown, RewardConfig};
use crate::rng::substream;
use crate::seq::{Peptide, Source};
use crate::{Error, Result};

/// Largest |log π_new − log π_old| accepted before the ratio is deemed
/// numerically meaningless.
pub const MAX_LOG_RATIO: f64 = 50.0;

/// Reward given to a trajectory whose first action is EOS.
pub const EMPTY_SEQUENCE_REWARD: f64 = -1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueTarget {
    /// Regress V onto the whitened terminal reward R̄.
    WhitenedReward,
    /// Regress V onto the GAE λ-return Â + V.
    LambdaReturn,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    /// Trajectories per iteration (N).
    pub actors: usize,
    /// Token horizon per trajectory (M); capped by the model's maximum.
    pub horizon: usize,
    pub iterations: usize,
    pub clip_eps: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub discount: f64,
    pub gae_lambda: f64,
    pub epochs: usize,
    /// Trajectories per gradient step.
    pub minibatch_size: usize,
    pub adam: AdamConfig,
    /// Global gradient-norm cap; 0 disables clipping.
    pub grad_clip: f64,
    /// Updates are skipped when mean |ratio − 1| exceeds this.
    pub max_ratio_deviation: f64,
    pub value_target: ValueTarget,
    pub lora: LoraConfig,
    /// Also train the policy output projection.
    pub train_policy_head: bool,
    pub temperature: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            actors: 64,
            horizon: 50,
            iterations: 50,
            clip_eps: 0.2,
            value_coef: 0.5,
            entropy_coef: 0.01,
            discount: 1.0,
            gae_lambda: 0.95,
            epochs: 4,
            minibatch_size: 16,
            adam: AdamConfig {
                lr: 1e-3,
                ..AdamConfig::default()
            },
            grad_clip: 1.0,
            max_ratio_deviation: 0.5,
            value_target: ValueTarget::WhitenedReward,
            lora: LoraConfig::default(),
            train_policy_head: false,
            temperature: 1.0,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            bad.push("clip_eps must lie in (0, 1)");
        }
        if self.actors == 0 || self.horizon == 0 {
            bad.push("actors and horizon must be at least 1");
        }
        if self.epochs == 0 || self.minibatch_size == 0 {
            bad.push("epochs and minibatch_size must be positive");
        }
        if !(0.0..=1.0).contains(&self.discount) || !(0.0..=1.0).contains(&self.gae_lambda) {
            bad.push("discount and gae_lambda must lie in [0, 1]");
        }
        if !(self.value_coef >= 0.0 && self.entropy_coef >= 0.0) {
            bad.push("loss coefficients must be non-negative");
        }
        if !(self.max_ratio_deviation > 0.0) {
            bad.push("max_ratio_deviation must be positive");
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            bad.push("temperature must be positive");
        }
        self.lora.validate()?;
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad.join("; ")))
        }
    }
}

/// Scores a finished peptide: activity from a scorer plus descriptors.
pub struct RewardEnv<'a> {
    pub scorer: &'a dyn ActivityScorer,
    pub reward: &'a RewardConfig,
    pub scale: &'a ScaleTable,
}

impl RewardEnv<'_> {
    pub fn evaluate(&self, p: &Peptide) -> Result<(PropertyVector, RewardBreakdown)> {
        let wrap = |e: Error| Error::Reward {
            sequence: p.residues().to_string(),
            message: e.to_string(),
        };
        let s = self.scorer.activity(p).map_err(wrap)?;
        let props = descriptor_vector(p, self.scale);
        let b = breakdown(s, &props, self.reward).map_err(wrap)?;
        Ok((props, b))
    }
}

/// One sampled trajectory and everything the update needs about it.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    /// `None` when the first action was EOS.
    pub peptide: Option<Peptide>,
    pub actions: Vec<usize>,
    /// Frozen log π_old(a_t | s_t).
    pub old_log_probs: Vec<f64>,
    pub values: Vec<f64>,
    pub entropies: Vec<f64>,
    pub score: Option<RewardBreakdown>,
    pub properties: Option<PropertyVector>,
    /// Raw r_total (or the empty-sequence reward).
    pub reward: f64,
    /// R̄ after scaling and whitening across the batch.
    pub whitened_reward: f64,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl Trajectory {
    /// Per-token rewards: zero everywhere except R̄ on the final action.
    pub fn token_rewards(&self) -> Vec<f64> {
        let mut r = vec![0.0; self.actions.len()];
        if let Some(last) = r.last_mut() {
            *last = self.whitened_reward;
        }
        r
    }

    pub fn value_targets(&self, target: ValueTarget) -> Vec<f64> {
        match target {
            ValueTarget::WhitenedReward => vec![self.whitened_reward; self.actions.len()],
            ValueTarget::LambdaReturn => self.returns.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RolloutBatch {
    pub trajectories: Vec<Trajectory>,
}

/// Samples `cfg.actors` trajectories, scores each finished sequence once and
/// whitens the batch rewards. Advantages are left empty.
pub fn rollout<R: rand::Rng + ?Sized>(
    policy: &PolicyModel,
    env: &RewardEnv,
    cfg: &PpoConfig,
    rng: &mut R,
) -> Result<RolloutBatch> {
    let inf = InferenceModel::new(policy)?;
    let sampling = SamplingConfig {
        temperature: cfg.temperature,
        max_len: Some(cfg.horizon),
        ..SamplingConfig::default()
    };
    let mut trajectories = Vec::with_capacity(cfg.actors);
    for i in 0..cfg.actors {
        let s = inf.sample_one(&sampling, rng)?;
        let residues = s.residues();
        let (peptide, score, properties, reward) = if residues.is_empty() {
            (None, None, None, EMPTY_SEQUENCE_REWARD)
        } else {
            let p = actions_to_peptide(format!("rollout_{i}"), residues, Source::GeneratedRl)?;
            let (props, b) = env.evaluate(&p)?;
            let r = b.r_total;
            (Some(p), Some(b), Some(props), r)
        };
        trajectories.push(Trajectory {
            peptide,
            actions: s.actions,
            old_log_probs: s.log_probs,
            values: s.values,
            entropies: s.entropies,
            score,
            properties,
            reward,
            whitened_reward: 0.0,
            advantages: Vec::new(),
            returns: Vec::new(),
        });
    }
    let rewards: Vec<f64> = trajectories.iter().map(|t| t.reward).collect();
    if rewards.len() >= 2 {
        let processed = process_rewards(&rewards)?;
        for (t, w) in trajectories.iter_mut().zip(processed.whitened) {
            t.whitened_reward = w;
        }
    }
    Ok(RolloutBatch { trajectories })
}

/// Generalised advantage estimates for one trajectory (unwhitened), with
/// V after the final action taken as 0.
pub fn gae(rewards: &[f64], values: &[f64], discount: f64, lambda: f64) -> Vec<f64> {
    let mut adv = vec![0.0; rewards.len()];
    let mut running = 0.0;
    for t in (0..rewards.len()).rev() {
        let next_v = values.get(t + 1).copied().unwrap_or(0.0);
        let delta = rewards[t] + discount * next_v - values[t];
        running = delta + discount * lambda * running;
        adv[t] = running;
    }
    adv
}

/// Fills advantages (whitened across every token of the batch) and
/// λ-returns (Â + V, before whitening).
pub fn compute_advantages(batch: &mut RolloutBatch, cfg: &PpoConfig) {
    for t in &mut batch.trajectories {
        let adv = gae(&t.token_rewards(), &t.values, cfg.discount, cfg.gae_lambda);
        t.returns = adv.iter().zip(&t.values).map(|(a, v)| a + v).collect();
        t.advantages = adv;
    }
    let all: Vec<f64> = batch.trajectories.iter().flat_map(|t| t.advantages.iter().copied()).collect();
    if all.is_empty() {
        return;
    }
    let n = all.len() as f64;
    let mean = all.iter().sum::<f64>() / n;
    let std = (all.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n).sqrt();
    for t in &mut batch.trajectories {
        for a in &mut t.advantages {
            *a = if std < 1e-12 { 0.0 } else { (*a - mean) / std };
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PpoLosses {
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
    pub total: f64,
}

fn check_log_ratio(new: &[f64], old: &[f64]) -> Result<()> {
    for (i, (n, o)) in new.iter().zip(old).enumerate() {
        let gap = n - o;
        if !gap.is_finite() || gap.abs() > MAX_LOG_RATIO {
            return Err(Error::RatioOverflow {
                gap,
                limit: MAX_LOG_RATIO,
                index: i,
            });
        }
    }
    Ok(())
}

/// min(r·Â, clip(r, 1 − ε, 1 + ε)·Â) for one token.
pub fn clipped_surrogate(ratio: f64, advantage: f64, eps: f64) -> f64 {
    (ratio * advantage).min(ratio.clamp(1.0 - eps, 1.0 + eps) * advantage)
}

/// Token-averaged losses in plain arithmetic. `log_prob_rows` holds the
/// full log-distribution at each token for the entropy term.
pub fn ppo_losses(
    new_log_probs: &[f64],
    old_log_probs: &[f64],
    advantages: &[f64],
    values: &[f64],
    targets: &[f64],
    log_prob_rows: &[Vec<f64>],
    cfg: &PpoConfig,
) -> Result<PpoLosses> {
    let n = new_log_probs.len();
    if n == 0 {
        return Err(Error::EmptyInput("ppo batch".into()));
    }
    if [old_log_probs.len(), advantages.len(), values.len(), targets.len(), log_prob_rows.len()]
        .iter()
        .any(|&l| l != n)
    {
        return Err(Error::Config("ppo loss inputs differ in length".into()));
    }
    check_log_ratio(new_log_probs, old_log_probs)?;
    let eps = cfg.clip_eps;
    let mut policy = 0.0;
    let mut value = 0.0;
    let mut entropy = 0.0;
    for i in 0..n {
        let r = (new_log_probs[i] - old_log_probs[i]).exp();
        policy -= clipped_surrogate(r, advantages[i], eps);
        value += (values[i] - targets[i]).powi(2);
        entropy -= log_prob_rows[i].iter().map(|&l| l.exp() * l).sum::<f64>();
    }
    let nf = n as f64;
    let (policy, value, entropy) = (policy / nf, value / nf, entropy / nf);
    Ok(PpoLosses {
        policy,
        value,
        entropy,
        total: policy + cfg.value_coef * value - cfg.entropy_coef * entropy,
    })
}

/// Loss, gradients and ratio diagnostics for one minibatch.
pub struct PpoObjective {
    pub losses: PpoLosses,
    /// Store-ordered gradients; `None` for frozen parameters.
    pub grads: Vec<Option<Tensor>>,
    pub ratios: Vec<f64>,
    pub clip_fraction: f64,
    pub approx_kl: f64,
}

/// Builds L_PPO on the tape for `trajs` and differentiates it.
pub fn ppo_objective(model: &PolicyModel, trajs: &[&Trajectory], cfg: &PpoConfig) -> Result<PpoObjective> {
    if trajs.is_empty() || trajs.iter().any(|t| t.advantages.len() != t.actions.len()) {
        return Err(Error::Config("trajectories need advantages before an update".into()));
    }
    let batch = TokenBatch::from_actions(trajs.iter().map(|t| t.actions.clone()).collect(), model.max_len())?;
    let targets: Vec<usize> = batch.sequences().iter().flatten().copied().collect();
    let n = targets.len();
    let old: Vec<f64> = trajs.iter().flat_map(|t| t.old_log_probs.iter().copied()).collect();
    let adv: Vec<f64> = trajs.iter().flat_map(|t| t.advantages.iter().copied()).collect();
    let vt: Vec<f64> = trajs.iter().flat_map(|t| t.value_targets(cfg.value_target)).collect();

    let mut g = Graph::new();
    let binding = model.params().bind(&mut g);
    let out = model.forward_graph(&mut g, &binding, &batch)?;
    let logp = g.log_softmax(out.logits)?;
    let picked = g.pick(logp, &targets)?;
    check_log_ratio(g.value(picked).data(), &old)?;
    let old_v = g.constant(Tensor::vector(old.clone()));
    let adv_v = g.constant(Tensor::vector(adv));
    let diff = g.sub(picked, old_v)?;
    let ratio = g.exp(diff)?;
    let unclipped = g.mul(ratio, adv_v)?;
    let clipped = g.clamp(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps)?;
    let clipped = g.mul(clipped, adv_v)?;
    let surrogate = g.minimum(unclipped, clipped)?;
    let surrogate = g.mean(surrogate)?;
    let l_policy = g.scale(surrogate, -1.0)?;

    let values = g.reshape(out.values, vec![n])?;
    let vt_v = g.constant(Tensor::vector(vt));
    let err = g.sub(values, vt_v)?;
    let sq = g.mul(err, err)?;
    let l_value = g.mean(sq)?;

    let probs = g.exp(logp)?;
    let plogp = g.mul(probs, logp)?;
    let neg_h = g.sum(plogp)?;
    let h = g.scale(neg_h, -1.0 / n as f64)?;

    let wv = g.scale(l_value, cfg.value_coef)?;
    let wh = g.scale(h, -cfg.entropy_coef)?;
    let total = g.add(l_policy, wv)?;
    let total = g.add(total, wh)?;

    let ratios = g.value(ratio).data().to_vec();
    let clip_fraction = ratios.iter().filter(|r| (*r - 1.0).abs() > cfg.clip_eps).count() as f64 / n as f64;
    let approx_kl = ratios.iter().map(|r| (r - 1.0) - r.ln()).sum::<f64>() / n as f64;
    let losses = PpoLosses {
        policy: g.value(l_policy).item(),
        value: g.value(l_value).item(),
        entropy: g.value(h).item(),
        total: g.value(total).item(),
    };
    debug_assert_eq!(g.value(logp).cols(), NUM_ACTIONS);
    let mut grads = g.backward(total)?;
    Ok(PpoObjective {
        losses,
        grads: model.params().collect_grads(&binding, &mut grads),
        ratios,
        clip_fraction,
        approx_kl,
    })
}

/// Per-iteration summary written to the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RlLogRow {
    pub iteration: usize,
    pub mean_reward: f64,
    pub mean_s: f64,
    /// Fraction of trajectories with s ≥ 0.5.
    pub frac_active: f64,
    pub mean_charge: f64,
    pub mean_hydrophobicity: f64,
    pub mean_moment: f64,
    pub mean_pi: f64,
    /// Fraction of trajectories with pI ≥ 8.
    pub frac_high_pi: f64,
    pub mean_length: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
    /// Minibatch updates dropped by the divergence guard.
    pub skipped: usize,
}

pub const RL_LOG_COLUMNS: [&str; 14] = [
    "iteration",
    "mean_reward",
    "mean_s",
    "frac_active",
    "mean_charge",
    "mean_hydrophobicity",
    "mean_moment",
    "mean_pI",
    "frac_high_pI",
    "mean_length",
    "entropy",
    "clip_fraction",
    "approx_kl",
    "skipped",
];

pub fn write_rl_log<W: Write>(mut w: W, rows: &[RlLogRow]) -> Result<()> {
    writeln!(w, "{}", RL_LOG_COLUMNS.join("\t"))?;
    for r in rows {
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.iteration,
            r.mean_reward,
            r.mean_s,
            r.frac_active,
            r.mean_charge,
            r.mean_hydrophobicity,
            r.mean_moment,
            r.mean_pi,
            r.frac_high_pi,
            r.mean_length,
            r.entropy,
            r.clip_fraction,
            r.approx_kl,
            r.skipped
        )?;
    }
    Ok(())
}

/// Population statistics of a batch of trajectories. Empty sequences count
/// as inactive and are excluded from the descriptor means.
pub fn batch_summary(batch: &RolloutBatch, iteration: usize) -> RlLogRow {
    let ts = &batch.trajectories;
    let n = ts.len().max(1) as f64;
    let scored: Vec<(&RewardBreakdown, &PropertyVector)> = ts
        .iter()
        .filter_map(|t| Some((t.score.as_ref()?, t.properties.as_ref()?)))
        .collect();
    let m = scored.len().max(1) as f64;
    let mean_of = |f: &dyn Fn(&PropertyVector) -> f64| scored.iter().map(|(_, p)| f(p)).sum::<f64>() / m;
    let tokens: usize = ts.iter().map(|t| t.entropies.len()).sum();
    RlLogRow {
        iteration,
        mean_reward: ts.iter().map(|t| t.reward).sum::<f64>() / n,
        mean_s: scored.iter().map(|(b, _)| b.s).sum::<f64>() / m,
        frac_active: scored.iter().filter(|(b, _)| b.s >= 0.5).count() as f64 / n,
        mean_charge: mean_of(&|p| p.net_charge),
        mean_hydrophobicity: mean_of(&|p| p.hydrophobicity),
        mean_moment: mean_of(&|p| p.hydrophobic_moment),
        mean_pi: mean_of(&|p| p.isoelectric_point),
        frac_high_pi: scored.iter().filter(|(_, p)| p.isoelectric_point >= 8.0).count() as f64 / n,
        mean_length: ts.iter().map(|t| t.peptide.as_ref().map_or(0, Peptide::len)).sum::<usize>() as f64 / n,
        entropy: ts.iter().flat_map(|t| t.entropies.iter()).sum::<f64>() / tokens.max(1) as f64,
        clip_fraction: 0.0,
        approx_kl: 0.0,
        skipped: 0,
    }
}

/// Prepares a fine-tuned copy of `sft`: adapters attached (unless already
/// present), everything else frozen, value head trainable.
pub fn prepare_policy(sft: &PolicyModel, cfg: &PpoConfig, seed: u64) -> Result<PolicyModel> {
    let mut policy = sft.clone();
    if policy.lora().is_none() {
        policy.attach_lora(cfg.lora.clone(), seed)?;
    }
    policy.set_value_head_trainable(true);
    for name in ["head.weight", "head.bias"] {
        if let Some(p) = policy.params_mut().get_mut(name) {
            p.trainable = cfg.train_policy_head;
        }
    }
    Ok(policy)
}

/// Runs `cfg.iterations` of rollout → advantages → clipped updates.
/// `observer` sees every log row with the policy after that iteration's
/// updates.
pub fn train_rl(
    sft: &PolicyModel,
    env: &RewardEnv,
    cfg: &PpoConfig,
    seed: u64,
    observer: &mut dyn FnMut(&RlLogRow, &PolicyModel) -> Result<()>,
) -> Result<(PolicyModel, Vec<RlLogRow>)> {
    cfg.validate()?;
    env.reward.validate()?;
    let mut policy = prepare_policy(sft, cfg, seed)?;
    let mut adam = AdamState::new(cfg.adam, policy.params());
    let mut log = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let mut rng = substream(seed, &format!("rl_rollout/{it}"));
        let mut batch = rollout(&policy, env, cfg, &mut rng)?;
        compute_advantages(&mut batch, cfg);
        let mut row = batch_summary(&batch, it);
        let mut shuffle = substream(seed, &format!("rl_minibatch/{it}"));
        let mut order: Vec<usize> = (0..batch.trajectories.len()).collect();
        let (mut updates, mut clip_sum, mut kl_sum) = (0usize, 0.0, 0.0);
        for _ in 0..cfg.epochs {
            order.shuffle(&mut shuffle);
            for chunk in order.chunks(cfg.minibatch_size) {
                let mb: Vec<&Trajectory> = chunk.iter().map(|&i| &batch.trajectories[i]).collect();
                let mut obj = ppo_objective(&policy, &mb, cfg)?;
                updates += 1;
                clip_sum += obj.clip_fraction;
                kl_sum += obj.approx_kl;
                let deviation = obj.ratios.iter().map(|r| (r - 1.0).abs()).sum::<f64>() / obj.ratios.len() as f64;
                if deviation > cfg.max_ratio_deviation {
                    log::warn!("iteration {it}: mean |ratio - 1| = {deviation:.3}, update skipped");
                    row.skipped += 1;
                    continue;
                }
                if cfg.grad_clip > 0.0 {
                    clip_grad_norm(&mut obj.grads, cfg.grad_clip);
                }
                adam.step(policy.params_mut(), &obj.grads)?;
            }
        }
        row.clip_fraction = clip_sum / updates.max(1) as f64;
        row.approx_kl = kl_sum / updates.max(1) as f64;
        log::info!(
            "rl iteration {it}: mean reward {:.4}, mean s {:.4}, active {:.3}, charge {:.2}",
            row.mean_reward,
            row.mean_s,
            row.frac_active,
            row.mean_charge
        );
        observer(&row, &policy)?;
        log.push(row);
    }
    Ok((policy, log))
}

/// Means of consecutive non-overlapping windows; a trailing partial window
/// is dropped.
pub fn window_means(xs: &[f64], window: usize) -> Vec<f64> {
    if window == 0 {
        return Vec::new();
    }
    xs.chunks_exact(window).map(|c| c.iter().sum::<f64>() / window as f64).collect()
}
