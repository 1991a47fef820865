//! Central finite-difference checks of the full SFT and PPO losses on a
//! two-layer, 16-dimensional toy policy.

use ampforge::physchem::ScaleTable;
use ampforge::policy::{action_log_probs, sft_loss, PolicyConfig, PolicyModel, TokenBatch};
use ampforge::ppo::{compute_advantages, ppo_objective, prepare_policy, rollout, PpoConfig, RewardEnv, Trajectory};
use ampforge::reward::RewardConfig;
use ampforge::rng::substream;
use ampforge::seq::{validate_sequence, Peptide};
use ampforge_numerics::gradcheck::max_relative_error;
use ampforge_numerics::Tensor;
use rand::Rng;

const H: f64 = 1e-5;

pub fn toy_policy(max_len: usize, init_std: f64, seed: u64) -> PolicyModel {
    let cfg = PolicyConfig {
        dim: 16,
        layers: 2,
        heads: 2,
        ff_mult: 2,
        max_len,
        init_std,
    };
    PolicyModel::init(cfg, seed).unwrap()
}

/// Perturbs coordinate `j` of parameter `i` in both directions.
fn central(probe: &mut PolicyModel, i: usize, j: usize, mut f: impl FnMut(&PolicyModel) -> f64) -> f64 {
    let orig = probe.params().by_index(i).value.data()[j];
    probe.params_mut().by_index_mut(i).value.data_mut()[j] = orig + H;
    let up = f(probe);
    probe.params_mut().by_index_mut(i).value.data_mut()[j] = orig - H;
    let down = f(probe);
    probe.params_mut().by_index_mut(i).value.data_mut()[j] = orig;
    (up - down) / (2.0 * H)
}

pub fn sft_gradient_error() -> f64 {
    let m = toy_policy(10, 0.5, 8);
    let peps: Vec<Peptide> = ["KKLAW", "GFDK", "LLKR"]
        .iter()
        .map(|s| validate_sequence(s).unwrap())
        .collect();
    let batch = TokenBatch::from_peptides(&peps, 10).unwrap();
    let loss = sft_loss(&m, &batch).unwrap();
    let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
    let mut probe = m.clone();
    for i in 0..m.params().len() {
        let g = loss.grads[i].as_ref().unwrap();
        for j in 0..g.len() {
            numeric.push(central(&mut probe, i, j, |p| sft_loss(p, &batch).unwrap().sum));
            analytic.push(g.data()[j]);
        }
    }
    max_relative_error(&analytic, &numeric)
}

/// Moves adapters and the value head off their initial values so that
/// gradients reach every trainable parameter.
pub fn perturb_adapters(policy: &mut PolicyModel, seed: u64) {
    let mut rng = substream(seed, "perturb");
    let names: Vec<String> = policy
        .params()
        .iter()
        .filter(|(n, _)| n.ends_with(".lora_b") || n.starts_with("value."))
        .map(|(n, _)| n.to_string())
        .collect();
    for n in names {
        let p = policy.params_mut().get_mut(&n).unwrap();
        p.value = Tensor::randn(p.value.shape(), 0.1, &mut rng);
    }
}

fn lysine_score(p: &Peptide) -> ampforge::Result<f64> {
    Ok(p.bytes().iter().filter(|&&b| b == b'K').count() as f64 / p.len() as f64)
}

/// Check of the PPO loss with respect to every trainable parameter. Old
/// log-probs are shifted so that some ratios sit in the clipped region but
/// none within 1e-3 of a clip boundary.
pub fn ppo_gradient_error(seed: u64) -> f64 {
    let cfg = PpoConfig {
        actors: 6,
        horizon: 12,
        epochs: 2,
        minibatch_size: 4,
        ..PpoConfig::default()
    };
    let mut policy = prepare_policy(&toy_policy(12, 0.3, 21), &cfg, seed).unwrap();
    perturb_adapters(&mut policy, seed);
    let reward = RewardConfig::default();
    let scale = ScaleTable::default();
    let env = RewardEnv {
        scorer: &lysine_score,
        reward: &reward,
        scale: &scale,
    };
    let mut batch = rollout(&policy, &env, &cfg, &mut substream(seed, "test")).unwrap();
    compute_advantages(&mut batch, &cfg);
    let tb = TokenBatch::from_actions(batch.trajectories.iter().map(|t| t.actions.clone()).collect(), policy.max_len())
        .unwrap();
    let current = action_log_probs(&policy, &tb).unwrap();
    let mut rng = substream(seed, "shift");
    for (t, cur) in batch.trajectories.iter_mut().zip(current) {
        for (old, c) in t.old_log_probs.iter_mut().zip(cur) {
            loop {
                let shift: f64 = rng.random_range(-0.4..0.4);
                let r = (-shift).exp();
                if (r - 1.0 - cfg.clip_eps).abs() > 1e-3 && (r - 1.0 + cfg.clip_eps).abs() > 1e-3 {
                    *old = c + shift;
                    break;
                }
            }
        }
    }
    let refs: Vec<&Trajectory> = batch.trajectories.iter().collect();
    let obj = ppo_objective(&policy, &refs, &cfg).unwrap();
    assert!(obj.clip_fraction > 0.0 && obj.clip_fraction < 1.0);
    let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
    let mut probe = policy.clone();
    for i in 0..policy.params().len() {
        let Some(g) = obj.grads[i].as_ref() else {
            continue;
        };
        for j in 0..g.len() {
            numeric.push(central(&mut probe, i, j, |p| {
                ppo_objective(p, &refs, &cfg).unwrap().losses.total
            }));
            analytic.push(g.data()[j]);
        }
    }
    max_relative_error(&analytic, &numeric)
}
