//! Deferral policies behind one trait.
//!
//! Every way of choosing between the AI and the human — the trained
//! recurrent policy included — implements [`DeferralPolicy`] and is
//! registered under a short name, so runs select policies from config or
//! the command line and the evaluator treats them interchangeably.
//!
//! Reference baselines: always-AI, always-human, workload-oblivious random
//! deferral at a target coverage, a confidence threshold over the frozen
//! classifier's own scores, and a workload-blind learned gate trained to
//! spot instances the classifier gets wrong.

use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::actors::TaskInstance;
use crate::env::{Action, EnvState};
use crate::error::{Error, Result};
use crate::net::{greedy_action, load_checkpoint, matvec, Network};
use crate::rng::stream_rng;

/// What a policy may look at when deciding one step. Fatigue parameters and
/// the true label are deliberately absent.
pub struct PolicyObs<'a> {
    pub state: &'a EnvState,
    pub instance: &'a TaskInstance,
}

/// A deferral rule. `begin_episode` is called once before each episode with
/// the episode index; implementations reset recurrent state and reseed any
/// internal randomness from it so evaluation stays replayable.
pub trait DeferralPolicy: Send {
    fn name(&self) -> &'static str;
    fn begin_episode(&mut self, episode_index: u64);
    fn decide(&mut self, obs: &PolicyObs) -> Result<Action>;
}

/// Registered policy names, in registry order.
pub fn policy_names() -> &'static [&'static str] {
    &["ai_only", "human_only", "random", "threshold", "static_gate", "learned"]
}

/// Config-facing policy selection; the serde tag is the registry name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicySpec {
    AiOnly,
    HumanOnly,
    Random { target_coverage: f64 },
    Threshold { tau: f64 },
    StaticGate { checkpoint: PathBuf },
    Learned { checkpoint: PathBuf },
}

/// Instantiate a policy from its spec, loading checkpoints where needed.
/// `master_seed` feeds the random baseline's derived streams.
pub fn build_policy(spec: &PolicySpec, master_seed: u64) -> Result<Box<dyn DeferralPolicy>> {
    Ok(match spec {
        PolicySpec::AiOnly => Box::new(AiOnlyPolicy),
        PolicySpec::HumanOnly => Box::new(HumanOnlyPolicy),
        PolicySpec::Random { target_coverage } => {
            Box::new(RandomDeferPolicy::new(*target_coverage, master_seed)?)
        }
        PolicySpec::Threshold { tau } => Box::new(ConfidenceThresholdPolicy::new(*tau)?),
        PolicySpec::StaticGate { checkpoint } => {
            Box::new(StaticGatePolicy::new(load_gate(checkpoint)?))
        }
        PolicySpec::Learned { checkpoint } => {
            Box::new(TrainedPolicy::new(load_checkpoint(checkpoint)?))
        }
    })
}

pub struct AiOnlyPolicy;

impl DeferralPolicy for AiOnlyPolicy {
    fn name(&self) -> &'static str {
        "ai_only"
    }
    fn begin_episode(&mut self, _episode_index: u64) {}
    fn decide(&mut self, _obs: &PolicyObs) -> Result<Action> {
        Ok(Action::Ai)
    }
}

pub struct HumanOnlyPolicy;

impl DeferralPolicy for HumanOnlyPolicy {
    fn name(&self) -> &'static str {
        "human_only"
    }
    fn begin_episode(&mut self, _episode_index: u64) {}
    fn decide(&mut self, _obs: &PolicyObs) -> Result<Action> {
        Ok(Action::Human)
    }
}

/// Defers each step independently with probability `1 - target_coverage`,
/// from a per-episode derived stream.
pub struct RandomDeferPolicy {
    target_coverage: f64,
    master_seed: u64,
    rng: ChaCha8Rng,
}

impl RandomDeferPolicy {
    pub fn new(target_coverage: f64, master_seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&target_coverage) {
            return Err(Error::Config(format!(
                "target_coverage must lie in [0, 1], got {target_coverage}"
            )));
        }
        Ok(RandomDeferPolicy {
            target_coverage,
            master_seed,
            rng: stream_rng(master_seed, "policy-random", 0),
        })
    }
}

impl DeferralPolicy for RandomDeferPolicy {
    fn name(&self) -> &'static str {
        "random"
    }
    fn begin_episode(&mut self, episode_index: u64) {
        self.rng = stream_rng(self.master_seed, "policy-random", episode_index);
    }
    fn decide(&mut self, _obs: &PolicyObs) -> Result<Action> {
        let u: f64 = self.rng.gen();
        Ok(if u < self.target_coverage {
            Action::Ai
        } else {
            Action::Human
        })
    }
}

/// Defers whenever the frozen classifier's own confidence falls below `tau`.
/// Instances without a stored confidence are a data error.
pub struct ConfidenceThresholdPolicy {
    tau: f64,
}

impl ConfidenceThresholdPolicy {
    pub fn new(tau: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&tau) {
            return Err(Error::Config(format!("tau must lie in [0, 1], got {tau}")));
        }
        Ok(ConfidenceThresholdPolicy { tau })
    }
}

impl DeferralPolicy for ConfidenceThresholdPolicy {
    fn name(&self) -> &'static str {
        "threshold"
    }
    fn begin_episode(&mut self, _episode_index: u64) {}
    fn decide(&mut self, obs: &PolicyObs) -> Result<Action> {
        let confidence = obs.instance.ai_confidence.ok_or_else(|| {
            Error::Data(format!(
                "instance {} has no ai_confidence; the threshold policy needs one",
                obs.instance.instance_id
            ))
        })?;
        Ok(if confidence < self.tau {
            Action::Human
        } else {
            Action::Ai
        })
    }
}

pub const GATE_VERSION: u32 = 1;

/// Workload-blind gate: a small MLP scoring `P(classifier correct | features)`
/// plus a score threshold `tau` calibrated to a target coverage on its
/// training data. Defers when the score falls below `tau`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateNet {
    pub version: u32,
    pub feature_dim: usize,
    pub hidden_dim: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
    pub tau: f64,
}

impl GateNet {
    /// Predicted correctness probability for one instance.
    pub fn score(&self, features: &[f64]) -> f64 {
        let mut hid = vec![0.0; self.hidden_dim];
        matvec(&self.w1, self.hidden_dim, self.feature_dim, features, Some(&self.b1), &mut hid);
        for v in hid.iter_mut() {
            *v = v.max(0.0);
        }
        let mut logit = self.b2;
        for (w, h) in self.w2.iter().zip(hid.iter()) {
            logit += w * h;
        }
        1.0 / (1.0 + (-logit).exp())
    }
}

pub fn save_gate(path: &Path, gate: &GateNet) -> Result<()> {
    let text = serde_json::to_string(gate).map_err(|e| Error::Data(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_gate(path: &Path) -> Result<GateNet> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let gate: GateNet =
        serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    if gate.version != GATE_VERSION {
        return Err(Error::Data(format!(
            "gate version mismatch: expected {GATE_VERSION}, found {}",
            gate.version
        )));
    }
    if gate.w1.len() != gate.hidden_dim * gate.feature_dim
        || gate.b1.len() != gate.hidden_dim
        || gate.w2.len() != gate.hidden_dim
    {
        return Err(Error::Data("gate parameter shapes are inconsistent".into()));
    }
    Ok(gate)
}

/// Fit the gate: binary cross-entropy on (features -> classifier correct)
/// with Adam, then `tau` set to the score quantile that defers a
/// `1 - target_coverage` fraction of the training instances.
pub fn train_static_gate(
    instances: &[TaskInstance],
    target_coverage: f64,
    hidden_dim: usize,
    epochs: u32,
    seed: u64,
) -> Result<GateNet> {
    if instances.is_empty() {
        return Err(Error::Data("static gate needs a nonempty training stream".into()));
    }
    if !(0.0..=1.0).contains(&target_coverage) {
        return Err(Error::Config(format!(
            "target_coverage must lie in [0, 1], got {target_coverage}"
        )));
    }
    let d = instances[0].features.len();
    for inst in instances {
        if inst.features.len() != d {
            return Err(Error::Data(format!(
                "instance {} has feature width {}, expected {d}",
                inst.instance_id,
                inst.features.len()
            )));
        }
    }

    let mut rng = stream_rng(seed, "gate-init", 0);
    let bound = 1.0 / (d as f64).sqrt();
    let mut gate = GateNet {
        version: GATE_VERSION,
        feature_dim: d,
        hidden_dim,
        w1: (0..hidden_dim * d).map(|_| (rng.gen::<f64>() * 2.0 - 1.0) * bound).collect(),
        b1: vec![0.0; hidden_dim],
        w2: {
            let b = 1.0 / (hidden_dim as f64).sqrt();
            (0..hidden_dim).map(|_| (rng.gen::<f64>() * 2.0 - 1.0) * b).collect()
        },
        b2: 0.0,
        tau: 0.5,
    };

    let n_params = gate.w1.len() + gate.b1.len() + gate.w2.len() + 1;
    let mut adam = crate::trainer::Adam::new(n_params);
    let labels: Vec<f64> = instances
        .iter()
        .map(|i| if i.ai_prediction == i.label { 1.0 } else { 0.0 })
        .collect();

    let batch = 64.min(instances.len());
    let mut order: Vec<usize> = (0..instances.len()).collect();
    for epoch in 0..epochs {
        use rand::seq::SliceRandom;
        let mut shuffle_rng = stream_rng(seed, "gate-shuffle", u64::from(epoch));
        order.shuffle(&mut shuffle_rng);
        for chunk in order.chunks(batch) {
            let mut grad = vec![0.0; n_params];
            let inv = 1.0 / chunk.len() as f64;
            for &i in chunk {
                let x = &instances[i].features;
                let mut hid = vec![0.0; hidden_dim];
                matvec(&gate.w1, hidden_dim, d, x, Some(&gate.b1), &mut hid);
                let relu: Vec<f64> = hid.iter().map(|v| v.max(0.0)).collect();
                let mut logit = gate.b2;
                for (w, h) in gate.w2.iter().zip(relu.iter()) {
                    logit += w * h;
                }
                let p = 1.0 / (1.0 + (-logit).exp());
                // d BCE / d logit = p - y.
                let dlogit = (p - labels[i]) * inv;
                let (gw1, rest) = grad.split_at_mut(gate.w1.len());
                let (gb1, rest) = rest.split_at_mut(hidden_dim);
                let (gw2, gb2) = rest.split_at_mut(hidden_dim);
                gb2[0] += dlogit;
                for j in 0..hidden_dim {
                    gw2[j] += dlogit * relu[j];
                    let dh = if hid[j] > 0.0 { dlogit * gate.w2[j] } else { 0.0 };
                    gb1[j] += dh;
                    for (g, xv) in gw1[j * d..(j + 1) * d].iter_mut().zip(x.iter()) {
                        *g += dh * xv;
                    }
                }
            }
            let mut params: Vec<f64> = gate
                .w1
                .iter()
                .chain(gate.b1.iter())
                .chain(gate.w2.iter())
                .chain(std::iter::once(&gate.b2))
                .copied()
                .collect();
            adam.step(&mut params, &grad, 1e-3);
            let (w1, rest) = params.split_at(gate.w1.len());
            let (b1, rest) = rest.split_at(hidden_dim);
            let (w2, b2) = rest.split_at(hidden_dim);
            gate.w1.copy_from_slice(w1);
            gate.b1.copy_from_slice(b1);
            gate.w2.copy_from_slice(w2);
            gate.b2 = b2[0];
        }
    }

    // Calibrate tau so the lowest-scoring 1 - coverage fraction defers.
    let mut scores: Vec<f64> = instances.iter().map(|i| gate.score(&i.features)).collect();
    scores.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let defer_count = ((1.0 - target_coverage) * scores.len() as f64).round() as usize;
    gate.tau = if defer_count == 0 {
        0.0
    } else if defer_count >= scores.len() {
        1.0 + 1e-9
    } else {
        0.5 * (scores[defer_count - 1] + scores[defer_count])
    };
    Ok(gate)
}

/// The trained gate as a policy: same decision whatever the workload.
pub struct StaticGatePolicy {
    gate: GateNet,
}

impl StaticGatePolicy {
    pub fn new(gate: GateNet) -> Self {
        StaticGatePolicy { gate }
    }
}

impl DeferralPolicy for StaticGatePolicy {
    fn name(&self) -> &'static str {
        "static_gate"
    }
    fn begin_episode(&mut self, _episode_index: u64) {}
    fn decide(&mut self, obs: &PolicyObs) -> Result<Action> {
        if obs.instance.features.len() != self.gate.feature_dim {
            return Err(Error::Data(format!(
                "instance {} has feature width {}, gate expects {}",
                obs.instance.instance_id,
                obs.instance.features.len(),
                self.gate.feature_dim
            )));
        }
        Ok(if self.gate.score(&obs.instance.features) < self.gate.tau {
            Action::Human
        } else {
            Action::Ai
        })
    }
}

/// The trained recurrent policy, acting greedily at evaluation time.
pub struct TrainedPolicy {
    net: Network,
    hidden: Vec<f64>,
}

impl TrainedPolicy {
    pub fn new(net: Network) -> Self {
        let hidden = net.initial_hidden();
        TrainedPolicy { net, hidden }
    }

    pub fn network(&self) -> &Network {
        &self.net
    }
}

impl DeferralPolicy for TrainedPolicy {
    fn name(&self) -> &'static str {
        "learned"
    }
    fn begin_episode(&mut self, _episode_index: u64) {
        self.hidden = self.net.initial_hidden();
    }
    fn decide(&mut self, obs: &PolicyObs) -> Result<Action> {
        if obs.state.features.len() != self.net.cfg.feature_dim {
            return Err(Error::Data(format!(
                "observation has feature width {}, network expects {}",
                obs.state.features.len(),
                self.net.cfg.feature_dim
            )));
        }
        let (out, next_hidden) =
            self.net
                .forward_step(&obs.state.features, obs.state.workload_fraction, &self.hidden);
        self.hidden = next_hidden;
        Ok(greedy_action(out.logits))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::actors::{generate_synthetic_stream, AiAccuracyProfile, SyntheticTaskSpec};
    use crate::net::NetConfig;

    fn obs_fixture() -> (EnvState, TaskInstance) {
        let state = EnvState {
            features: vec![0.1, -0.4, 0.2, 0.6],
            workload: 3,
            step: 5,
            workload_fraction: 0.03,
        };
        let instance = TaskInstance {
            instance_id: "i".into(),
            label: 1,
            ai_prediction: 2,
            ai_confidence: Some(0.4),
            features: state.features.clone(),
        };
        (state, instance)
    }

    #[test]
    fn registry_covers_every_policy() {
        let names = policy_names();
        assert_eq!(names.len(), 6);
        for spec in [
            PolicySpec::AiOnly,
            PolicySpec::HumanOnly,
            PolicySpec::Random { target_coverage: 0.5 },
            PolicySpec::Threshold { tau: 0.5 },
        ] {
            let policy = build_policy(&spec, 1).unwrap();
            assert!(names.contains(&policy.name()), "{}", policy.name());
        }
    }

    #[test]
    fn spec_round_trips_by_name() {
        let spec = PolicySpec::Random { target_coverage: 0.7 };
        let text = serde_json::to_string(&spec).unwrap();
        assert!(text.contains("\"name\":\"random\""));
        assert_eq!(serde_json::from_str::<PolicySpec>(&text).unwrap(), spec);
        assert!(serde_json::from_str::<PolicySpec>("{\"name\":\"bogus\"}").is_err());
    }

    #[test]
    fn constant_policies() {
        let (state, instance) = obs_fixture();
        let obs = PolicyObs { state: &state, instance: &instance };
        let mut ai = AiOnlyPolicy;
        let mut human = HumanOnlyPolicy;
        for _ in 0..5 {
            assert_eq!(ai.decide(&obs).unwrap(), Action::Ai);
            assert_eq!(human.decide(&obs).unwrap(), Action::Human);
        }
    }

    #[test]
    fn random_policy_hits_target_and_replays() {
        let (state, instance) = obs_fixture();
        let obs = PolicyObs { state: &state, instance: &instance };
        let mut policy = RandomDeferPolicy::new(0.7, 9).unwrap();
        policy.begin_episode(0);
        let n = 100_000;
        let ai = (0..n)
            .filter(|_| policy.decide(&obs).unwrap() == Action::Ai)
            .count();
        let frac = ai as f64 / n as f64;
        assert!((frac - 0.7).abs() < 0.01, "frac {frac}");

        // Same episode index replays the same decisions.
        let run = |idx| {
            let mut p = RandomDeferPolicy::new(0.7, 9).unwrap();
            p.begin_episode(idx);
            (0..50).map(|_| p.decide(&obs).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(run(3), run(3));
        assert_ne!(run(3), run(4));
    }

    #[test]
    fn threshold_policy_uses_confidence() {
        let (state, mut instance) = obs_fixture();
        let mut policy = ConfidenceThresholdPolicy::new(0.5).unwrap();
        instance.ai_confidence = Some(0.4);
        assert_eq!(
            policy.decide(&PolicyObs { state: &state, instance: &instance }).unwrap(),
            Action::Human
        );
        instance.ai_confidence = Some(0.6);
        assert_eq!(
            policy.decide(&PolicyObs { state: &state, instance: &instance }).unwrap(),
            Action::Ai
        );
        instance.ai_confidence = None;
        assert!(matches!(
            policy.decide(&PolicyObs { state: &state, instance: &instance }),
            Err(Error::Data(_))
        ));
    }

    fn difficulty_stream(count: u32, seed: u64) -> Vec<TaskInstance> {
        let spec = SyntheticTaskSpec {
            class_count: 10,
            feature_dim: 8,
            profile: AiAccuracyProfile::DifficultyLinear { easy: 0.95, hard: 0.35 },
            episode_length: 100,
            difficulty_noise: 0.1,
            cluster_spread: 1.0,
        };
        generate_synthetic_stream(&spec, count, &mut stream_rng(seed, "stream", 0)).unwrap()
    }

    #[test]
    fn static_gate_learns_where_the_classifier_fails() {
        let train_set = difficulty_stream(4000, 51);
        let gate = train_static_gate(&train_set, 0.6, 16, 30, 52).unwrap();

        let held_out = difficulty_stream(4000, 53);
        let mut policy = StaticGatePolicy::new(gate.clone());
        let (state, _) = obs_fixture();
        let mut deferred = 0usize;
        let mut deferred_wrong = 0usize;
        let mut kept_wrong = 0usize;
        for inst in &held_out {
            let mut st = state.clone();
            st.features = inst.features.clone();
            let action = policy.decide(&PolicyObs { state: &st, instance: inst }).unwrap();
            let wrong = inst.ai_prediction != inst.label;
            match action {
                Action::Human => {
                    deferred += 1;
                    if wrong {
                        deferred_wrong += 1;
                    }
                }
                Action::Ai => {
                    if wrong {
                        kept_wrong += 1;
                    }
                }
            }
        }
        let coverage = 1.0 - deferred as f64 / held_out.len() as f64;
        assert!((coverage - 0.6).abs() < 0.05, "coverage {coverage}");
        // Error rate among deferred instances should clearly exceed the rate
        // among kept ones: the gate found the classifier's failure region.
        let deferred_rate = deferred_wrong as f64 / deferred as f64;
        let kept_rate = kept_wrong as f64 / (held_out.len() - deferred) as f64;
        assert!(
            deferred_rate > kept_rate + 0.15,
            "deferred {deferred_rate} vs kept {kept_rate}"
        );
    }

    #[test]
    fn gate_checkpoint_round_trip() {
        let train_set = difficulty_stream(500, 54);
        let gate = train_static_gate(&train_set, 0.5, 8, 5, 55).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gate.json");
        save_gate(&path, &gate).unwrap();
        assert_eq!(load_gate(&path).unwrap(), gate);
    }

    #[test]
    fn gate_tau_extremes() {
        let train_set = difficulty_stream(500, 56);
        let all_ai = train_static_gate(&train_set, 1.0, 8, 2, 57).unwrap();
        let none = train_static_gate(&train_set, 0.0, 8, 2, 57).unwrap();
        let mut ai_defers = 0;
        let mut none_defers = 0;
        for inst in &train_set {
            if all_ai.score(&inst.features) < all_ai.tau {
                ai_defers += 1;
            }
            if none.score(&inst.features) < none.tau {
                none_defers += 1;
            }
        }
        assert_eq!(ai_defers, 0);
        assert_eq!(none_defers, train_set.len());
    }

    #[test]
    fn trained_policy_zero_net_is_all_ai() {
        let (state, instance) = obs_fixture();
        let mut policy = TrainedPolicy::new(crate::net::Network::zeros(NetConfig {
            feature_dim: 4,
            encoder_dim: 6,
            workload_embed_dim: 3,
            hidden_dim: 8,
            head_hidden_dim: 5,
        }));
        policy.begin_episode(0);
        for _ in 0..4 {
            assert_eq!(
                policy.decide(&PolicyObs { state: &state, instance: &instance }).unwrap(),
                Action::Ai
            );
        }
    }

    #[test]
    fn trained_policy_rejects_width_mismatch() {
        let (mut state, instance) = obs_fixture();
        state.features = vec![0.0; 3];
        let mut policy = TrainedPolicy::new(crate::net::Network::zeros(NetConfig {
            feature_dim: 4,
            encoder_dim: 6,
            workload_embed_dim: 3,
            hidden_dim: 8,
            head_hidden_dim: 5,
        }));
        assert!(matches!(
            policy.decide(&PolicyObs { state: &state, instance: &instance }),
            Err(Error::Data(_))
        ));
    }
}
