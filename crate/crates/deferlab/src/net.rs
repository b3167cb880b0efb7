//! Recurrent actor / dual-critic network with analytic gradients.
//!
//! Input features pass through a linear+ReLU encoder; the normalized
//! workload passes through a learned affine embedding. Their concatenation
//! feeds a single gated recurrence (update-gate convex combination of the
//! previous hidden state and a tanh candidate) with an explicit reset at
//! episode boundaries. Three two-layer ReLU heads read the hidden state:
//! action logits (AI, Human), a reward value and a cost value.
//!
//! Parameters live in one flat `f64` vector with a named block layout, so
//! checkpoints, optimizer state and finite-difference checks all address
//! the same storage.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::Action;
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Width settings. The defaults are the desk-scale configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    pub feature_dim: usize,
    pub encoder_dim: usize,
    pub workload_embed_dim: usize,
    pub hidden_dim: usize,
    pub head_hidden_dim: usize,
}

impl NetConfig {
    pub fn new(feature_dim: usize) -> Self {
        NetConfig {
            feature_dim,
            encoder_dim: 64,
            workload_embed_dim: 8,
            hidden_dim: 64,
            head_hidden_dim: 64,
        }
    }

    fn recur_input_dim(&self) -> usize {
        self.encoder_dim + self.workload_embed_dim
    }
}

/// One named parameter block: `rows x cols` values at `offset` in the flat
/// vector (`cols == 1` for biases and column vectors).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub blocks: Vec<BlockSpec>,
    pub total: usize,
}

impl Layout {
    pub fn for_config(cfg: &NetConfig) -> Layout {
        let d = cfg.feature_dim;
        let e = cfg.encoder_dim;
        let m = cfg.workload_embed_dim;
        let h = cfg.hidden_dim;
        let p = cfg.head_hidden_dim;
        let x = cfg.recur_input_dim();
        let shapes: [(&str, usize, usize); 22] = [
            ("enc_w", e, d),
            ("enc_b", e, 1),
            ("wemb_w", m, 1),
            ("wemb_b", m, 1),
            ("gate_w", h, x),
            ("gate_u", h, h),
            ("gate_b", h, 1),
            ("cand_w", h, x),
            ("cand_u", h, h),
            ("cand_b", h, 1),
            ("actor_w1", p, h),
            ("actor_b1", p, 1),
            ("actor_w2", 2, p),
            ("actor_b2", 2, 1),
            ("rcrit_w1", p, h),
            ("rcrit_b1", p, 1),
            ("rcrit_w2", 1, p),
            ("rcrit_b2", 1, 1),
            ("ccrit_w1", p, h),
            ("ccrit_b1", p, 1),
            ("ccrit_w2", 1, p),
            ("ccrit_b2", 1, 1),
        ];
        let mut blocks = Vec::with_capacity(shapes.len());
        let mut offset = 0;
        for (name, rows, cols) in shapes {
            blocks.push(BlockSpec {
                name: name.to_string(),
                rows,
                cols,
                offset,
            });
            offset += rows * cols;
        }
        Layout {
            blocks,
            total: offset,
        }
    }

    pub fn block(&self, name: &str) -> &BlockSpec {
        self.blocks
            .iter()
            .find(|b| b.name == name)
            .unwrap_or_else(|| panic!("unknown parameter block '{name}'"))
    }

    pub fn range(&self, name: &str) -> std::ops::Range<usize> {
        let b = self.block(name);
        b.offset..b.offset + b.rows * b.cols
    }
}

/// Head outputs for one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetOutput {
    pub logits: [f64; 2],
    pub reward_value: f64,
    pub cost_value: f64,
}

/// Loss gradients at the network outputs for one step.
#[derive(Debug, Clone, Copy, Default)]
pub struct OutputGrad {
    pub dlogits: [f64; 2],
    pub dreward_value: f64,
    pub dcost_value: f64,
}

/// Cached activations for one step of a forward pass.
#[derive(Debug, Clone)]
struct StepTrace {
    x: Vec<f64>,      // encoder output (post-ReLU) ++ workload embedding
    h_prev: Vec<f64>, // hidden state entering the step
    z: Vec<f64>,      // update gate
    c: Vec<f64>,      // candidate
    h: Vec<f64>,      // hidden state leaving the step
    actor_hid: Vec<f64>,
    rcrit_hid: Vec<f64>,
    ccrit_hid: Vec<f64>,
}

/// Cached activations for a whole episode.
pub struct EpisodeTrace {
    steps: Vec<StepTrace>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub cfg: NetConfig,
    pub layout: Layout,
    pub params: Vec<f64>,
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// out[r] = sum_c w[r,c] x[c] (+ b[r]).
pub(crate) fn matvec(w: &[f64], rows: usize, cols: usize, x: &[f64], b: Option<&[f64]>, out: &mut [f64]) {
    debug_assert_eq!(w.len(), rows * cols);
    debug_assert_eq!(x.len(), cols);
    for r in 0..rows {
        let row = &w[r * cols..(r + 1) * cols];
        let mut acc = b.map_or(0.0, |b| b[r]);
        for (wv, xv) in row.iter().zip(x.iter()) {
            acc += wv * xv;
        }
        out[r] = acc;
    }
}

/// dx[c] += sum_r w[r,c] dy[r].
fn matvec_t_acc(w: &[f64], rows: usize, cols: usize, dy: &[f64], dx: &mut [f64]) {
    for r in 0..rows {
        let row = &w[r * cols..(r + 1) * cols];
        let g = dy[r];
        for (dxv, wv) in dx.iter_mut().zip(row.iter()) {
            *dxv += g * wv;
        }
    }
}

/// gw[r,c] += dy[r] x[c].
fn outer_acc(dy: &[f64], x: &[f64], gw: &mut [f64]) {
    let cols = x.len();
    for (r, g) in dy.iter().enumerate() {
        let row = &mut gw[r * cols..(r + 1) * cols];
        for (gv, xv) in row.iter_mut().zip(x.iter()) {
            *gv += g * xv;
        }
    }
}

fn vec_acc(dy: &[f64], gb: &mut [f64]) {
    for (g, d) in gb.iter_mut().zip(dy.iter()) {
        *g += d;
    }
}

impl Network {
    /// Fresh network: uniform fan-in scaled weights, zero biases.
    pub fn new(cfg: NetConfig, rng: &mut ChaCha8Rng) -> Self {
        let layout = Layout::for_config(&cfg);
        let mut params = vec![0.0; layout.total];
        for block in &layout.blocks {
            if block.name.ends_with("_b") {
                continue;
            }
            let bound = 1.0 / (block.cols as f64).sqrt();
            for v in params[block.offset..block.offset + block.rows * block.cols].iter_mut() {
                *v = (rng.gen::<f64>() * 2.0 - 1.0) * bound;
            }
        }
        Network {
            cfg,
            layout,
            params,
        }
    }

    pub fn zeros(cfg: NetConfig) -> Self {
        let layout = Layout::for_config(&cfg);
        let params = vec![0.0; layout.total];
        Network {
            cfg,
            layout,
            params,
        }
    }

    pub fn from_params(cfg: NetConfig, params: Vec<f64>) -> Result<Self> {
        let layout = Layout::for_config(&cfg);
        if params.len() != layout.total {
            return Err(Error::Config(format!(
                "parameter vector length {} does not match layout total {}",
                params.len(),
                layout.total
            )));
        }
        Ok(Network {
            cfg,
            layout,
            params,
        })
    }

    pub fn param_len(&self) -> usize {
        self.layout.total
    }

    /// Zeroed hidden state, the mandatory state at every episode boundary.
    pub fn initial_hidden(&self) -> Vec<f64> {
        vec![0.0; self.cfg.hidden_dim]
    }

    fn b(&self, name: &str) -> &[f64] {
        &self.params[self.layout.range(name)]
    }

    fn step_inner(&self, features: &[f64], wfrac: f64, h_prev: &[f64]) -> (NetOutput, StepTrace) {
        let cfg = &self.cfg;
        debug_assert_eq!(features.len(), cfg.feature_dim);
        debug_assert_eq!(h_prev.len(), cfg.hidden_dim);
        let (e, m, h_dim, p) = (
            cfg.encoder_dim,
            cfg.workload_embed_dim,
            cfg.hidden_dim,
            cfg.head_hidden_dim,
        );

        let mut x = vec![0.0; cfg.recur_input_dim()];
        matvec(
            self.b("enc_w"),
            e,
            cfg.feature_dim,
            features,
            Some(self.b("enc_b")),
            &mut x[..e],
        );
        for v in x[..e].iter_mut() {
            *v = v.max(0.0);
        }
        let wemb_w = self.b("wemb_w");
        let wemb_b = self.b("wemb_b");
        for j in 0..m {
            x[e + j] = wemb_w[j] * wfrac + wemb_b[j];
        }

        let mut z = vec![0.0; h_dim];
        let mut c = vec![0.0; h_dim];
        let xdim = x.len();
        matvec(self.b("gate_w"), h_dim, xdim, &x, Some(self.b("gate_b")), &mut z);
        let mut tmp = vec![0.0; h_dim];
        matvec(self.b("gate_u"), h_dim, h_dim, h_prev, None, &mut tmp);
        for (zv, t) in z.iter_mut().zip(tmp.iter()) {
            *zv = sigmoid(*zv + t);
        }
        matvec(self.b("cand_w"), h_dim, xdim, &x, Some(self.b("cand_b")), &mut c);
        matvec(self.b("cand_u"), h_dim, h_dim, h_prev, None, &mut tmp);
        for (cv, t) in c.iter_mut().zip(tmp.iter()) {
            *cv = (*cv + t).tanh();
        }
        let mut h = vec![0.0; h_dim];
        for i in 0..h_dim {
            h[i] = (1.0 - z[i]) * h_prev[i] + z[i] * c[i];
        }

        let head = |w1: &str, b1: &str, w2: &str, b2: &str, out_dim: usize| {
            let mut hid = vec![0.0; p];
            matvec(self.b(w1), p, h_dim, &h, Some(self.b(b1)), &mut hid);
            for v in hid.iter_mut() {
                *v = v.max(0.0);
            }
            let mut out = vec![0.0; out_dim];
            matvec(self.b(w2), out_dim, p, &hid, Some(self.b(b2)), &mut out);
            (hid, out)
        };
        let (actor_hid, logits) = head("actor_w1", "actor_b1", "actor_w2", "actor_b2", 2);
        let (rcrit_hid, rv) = head("rcrit_w1", "rcrit_b1", "rcrit_w2", "rcrit_b2", 1);
        let (ccrit_hid, cv) = head("ccrit_w1", "ccrit_b1", "ccrit_w2", "ccrit_b2", 1);

        let output = NetOutput {
            logits: [logits[0], logits[1]],
            reward_value: rv[0],
            cost_value: cv[0],
        };
        let trace = StepTrace {
            x,
            h_prev: h_prev.to_vec(),
            z,
            c,
            h,
            actor_hid,
            rcrit_hid,
            ccrit_hid,
        };
        (output, trace)
    }

    /// Single forward step; returns the outputs and the next hidden state.
    pub fn forward_step(&self, features: &[f64], wfrac: f64, h_prev: &[f64]) -> (NetOutput, Vec<f64>) {
        let (out, trace) = self.step_inner(features, wfrac, h_prev);
        (out, trace.h)
    }

    /// Forward pass over one episode, starting from the zero hidden state,
    /// caching every activation needed by `backward_episode`.
    pub fn forward_episode(
        &self,
        features: &[Vec<f64>],
        wfracs: &[f64],
    ) -> (Vec<NetOutput>, EpisodeTrace) {
        debug_assert_eq!(features.len(), wfracs.len());
        let mut h = self.initial_hidden();
        let mut outputs = Vec::with_capacity(features.len());
        let mut steps = Vec::with_capacity(features.len());
        for (f, &w) in features.iter().zip(wfracs.iter()) {
            let (out, trace) = self.step_inner(f, w, &h);
            h = trace.h.clone();
            outputs.push(out);
            steps.push(trace);
        }
        (outputs, EpisodeTrace { steps })
    }

    /// Backpropagation through the cached episode. `out_grads[t]` holds the
    /// loss gradients at step `t`'s outputs; parameter gradients accumulate
    /// into `grad` (same layout as `params`).
    pub fn backward_episode(
        &self,
        features: &[Vec<f64>],
        wfracs: &[f64],
        trace: &EpisodeTrace,
        out_grads: &[OutputGrad],
        grad: &mut [f64],
    ) {
        let cfg = &self.cfg;
        assert_eq!(grad.len(), self.layout.total);
        assert_eq!(trace.steps.len(), out_grads.len());
        let (e, m, h_dim, p) = (
            cfg.encoder_dim,
            cfg.workload_embed_dim,
            cfg.hidden_dim,
            cfg.head_hidden_dim,
        );
        let xdim = cfg.recur_input_dim();

        let range = |name: &str| self.layout.range(name);
        let mut dh_next = vec![0.0; h_dim];
        for t in (0..trace.steps.len()).rev() {
            let st = &trace.steps[t];
            let og = &out_grads[t];

            // Heads: accumulate into dh.
            let mut dh = std::mem::take(&mut dh_next);
            dh_next = vec![0.0; h_dim];
            {
                let mut head_back = |w1: &str, b1: &str, w2: &str, b2: &str, hid: &[f64], dy: &[f64]| {
                    let w2_vals: Vec<f64> = self.b(w2).to_vec();
                    outer_acc(dy, hid, &mut grad[range(w2)]);
                    vec_acc(dy, &mut grad[range(b2)]);
                    let mut dhid = vec![0.0; p];
                    matvec_t_acc(&w2_vals, dy.len(), p, dy, &mut dhid);
                    for (dv, hv) in dhid.iter_mut().zip(hid.iter()) {
                        if *hv <= 0.0 {
                            *dv = 0.0;
                        }
                    }
                    let w1_vals: Vec<f64> = self.b(w1).to_vec();
                    outer_acc(&dhid, &st.h, &mut grad[range(w1)]);
                    vec_acc(&dhid, &mut grad[range(b1)]);
                    matvec_t_acc(&w1_vals, p, h_dim, &dhid, &mut dh);
                };
                if og.dlogits != [0.0, 0.0] {
                    head_back(
                        "actor_w1",
                        "actor_b1",
                        "actor_w2",
                        "actor_b2",
                        &st.actor_hid,
                        &og.dlogits,
                    );
                }
                if og.dreward_value != 0.0 {
                    head_back(
                        "rcrit_w1",
                        "rcrit_b1",
                        "rcrit_w2",
                        "rcrit_b2",
                        &st.rcrit_hid,
                        &[og.dreward_value],
                    );
                }
                if og.dcost_value != 0.0 {
                    head_back(
                        "ccrit_w1",
                        "ccrit_b1",
                        "ccrit_w2",
                        "ccrit_b2",
                        &st.ccrit_hid,
                        &[og.dcost_value],
                    );
                }
            }

            // Gated cell: h = (1 - z) * h_prev + z * c.
            let mut dz_pre = vec![0.0; h_dim];
            let mut dc_pre = vec![0.0; h_dim];
            for i in 0..h_dim {
                let dz = dh[i] * (st.c[i] - st.h_prev[i]);
                let dc = dh[i] * st.z[i];
                dz_pre[i] = dz * st.z[i] * (1.0 - st.z[i]);
                dc_pre[i] = dc * (1.0 - st.c[i] * st.c[i]);
                dh_next[i] += dh[i] * (1.0 - st.z[i]);
            }
            let gate_w: Vec<f64> = self.b("gate_w").to_vec();
            let gate_u: Vec<f64> = self.b("gate_u").to_vec();
            let cand_w: Vec<f64> = self.b("cand_w").to_vec();
            let cand_u: Vec<f64> = self.b("cand_u").to_vec();
            outer_acc(&dz_pre, &st.x, &mut grad[range("gate_w")]);
            outer_acc(&dz_pre, &st.h_prev, &mut grad[range("gate_u")]);
            vec_acc(&dz_pre, &mut grad[range("gate_b")]);
            outer_acc(&dc_pre, &st.x, &mut grad[range("cand_w")]);
            outer_acc(&dc_pre, &st.h_prev, &mut grad[range("cand_u")]);
            vec_acc(&dc_pre, &mut grad[range("cand_b")]);
            let mut dx = vec![0.0; xdim];
            matvec_t_acc(&gate_w, h_dim, xdim, &dz_pre, &mut dx);
            matvec_t_acc(&cand_w, h_dim, xdim, &dc_pre, &mut dx);
            matvec_t_acc(&gate_u, h_dim, h_dim, &dz_pre, &mut dh_next);
            matvec_t_acc(&cand_u, h_dim, h_dim, &dc_pre, &mut dh_next);

            // Encoder (ReLU mask from the cached post-activation).
            let mut de = dx[..e].to_vec();
            for (dv, xv) in de.iter_mut().zip(st.x[..e].iter()) {
                if *xv <= 0.0 {
                    *dv = 0.0;
                }
            }
            outer_acc(&de, &features[t], &mut grad[range("enc_w")]);
            vec_acc(&de, &mut grad[range("enc_b")]);

            // Workload embedding (affine in the scalar workload fraction).
            let wfrac = wfracs[t];
            let gw = &mut grad[range("wemb_w")];
            for j in 0..m {
                gw[j] += dx[e + j] * wfrac;
            }
            let gb = &mut grad[range("wemb_b")];
            for j in 0..m {
                gb[j] += dx[e + j];
            }
        }
    }
}

/// Numerically stable log-softmax of a two-way logit pair.
pub fn log_softmax2(logits: [f64; 2]) -> [f64; 2] {
    let m = logits[0].max(logits[1]);
    let lse = m + ((logits[0] - m).exp() + (logits[1] - m).exp()).ln();
    [logits[0] - lse, logits[1] - lse]
}

pub fn softmax2(logits: [f64; 2]) -> [f64; 2] {
    let lp = log_softmax2(logits);
    [lp[0].exp(), lp[1].exp()]
}

/// Sample an action from the softmax over `logits`; returns the action and
/// its log-probability.
pub fn sample_action(logits: [f64; 2], rng: &mut ChaCha8Rng) -> (Action, f64) {
    let lp = log_softmax2(logits);
    let p_ai = lp[0].exp();
    let u: f64 = rng.gen();
    if u < p_ai {
        (Action::Ai, lp[0])
    } else {
        (Action::Human, lp[1])
    }
}

/// Argmax action; ties break toward AI.
pub fn greedy_action(logits: [f64; 2]) -> Action {
    if logits[0] >= logits[1] {
        Action::Ai
    } else {
        Action::Human
    }
}

/// On-disk checkpoint: version tag, widths, layout manifest, then the flat
/// parameter array.
#[derive(Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub net_config: NetConfig,
    pub blocks: Vec<BlockSpec>,
    pub params: Vec<f64>,
}

pub fn save_checkpoint(path: &Path, net: &Network) -> Result<()> {
    let ck = Checkpoint {
        version: CHECKPOINT_VERSION,
        net_config: net.cfg,
        blocks: net.layout.blocks.clone(),
        params: net.params.clone(),
    };
    let text = serde_json::to_string(&ck).map_err(|e| Error::Data(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Network> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ck: Checkpoint =
        serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    if ck.version != CHECKPOINT_VERSION {
        return Err(Error::Data(format!(
            "checkpoint version mismatch: expected {CHECKPOINT_VERSION}, found {}",
            ck.version
        )));
    }
    let net = Network::from_params(ck.net_config, ck.params)?;
    if net.layout.blocks != ck.blocks {
        return Err(Error::Data(
            "checkpoint layout manifest does not match its widths".into(),
        ));
    }
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    fn tiny_cfg() -> NetConfig {
        NetConfig {
            feature_dim: 4,
            encoder_dim: 6,
            workload_embed_dim: 3,
            hidden_dim: 8,
            head_hidden_dim: 5,
        }
    }

    fn random_inputs(cfg: &NetConfig, t: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut rng = stream_rng(seed, "net-test", 0);
        let features = (0..t)
            .map(|_| (0..cfg.feature_dim).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect())
            .collect();
        let wfracs = (0..t).map(|_| rng.gen::<f64>()).collect();
        (features, wfracs)
    }

    #[test]
    fn zero_params_give_uniform_policy() {
        let net = Network::zeros(tiny_cfg());
        let (out, _) = net.forward_step(&[0.3, -0.2, 0.9, 0.1], 0.5, &net.initial_hidden());
        assert_eq!(out.logits, [0.0, 0.0]);
        assert_eq!(out.reward_value, 0.0);
        assert_eq!(out.cost_value, 0.0);
        let p = softmax2(out.logits);
        assert!((p[0] - 0.5).abs() < 1e-15 && (p[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn forward_deterministic() {
        let net = Network::new(tiny_cfg(), &mut stream_rng(1, "init", 0));
        let (f, w) = random_inputs(&net.cfg, 5, 2);
        let (a, _) = net.forward_episode(&f, &w);
        let (b, _) = net.forward_episode(&f, &w);
        assert_eq!(a, b);
    }

    #[test]
    fn episode_reset_equivalence() {
        // Two episodes processed independently equal a concatenated pass
        // with a reset between them.
        let net = Network::new(tiny_cfg(), &mut stream_rng(3, "init", 0));
        let (f, w) = random_inputs(&net.cfg, 8, 4);
        let (first, _) = net.forward_episode(&f[..4].to_vec(), &w[..4].to_vec());
        let (second, _) = net.forward_episode(&f[4..].to_vec(), &w[4..].to_vec());
        let mut h = net.initial_hidden();
        let mut concat = Vec::new();
        for t in 0..8 {
            if t == 4 {
                h = net.initial_hidden(); // reset flag at the boundary
            }
            let (out, next) = net.forward_step(&f[t], w[t], &h);
            h = next;
            concat.push(out);
        }
        for t in 0..4 {
            assert_eq!(concat[t], first[t]);
            assert_eq!(concat[4 + t], second[t]);
        }
    }

    #[test]
    fn sampling_follows_softmax() {
        let mut rng = stream_rng(5, "sample", 0);
        let (a, lp) = sample_action([10.0, -10.0], &mut rng);
        assert_eq!(a, Action::Ai);
        assert!(lp > -1e-8);
        assert_eq!(greedy_action([10.0, -10.0]), Action::Ai);
        assert_eq!(greedy_action([0.0, 0.0]), Action::Ai); // tie-break toward AI
        assert_eq!(greedy_action([-0.1, 0.0]), Action::Human);

        let mut human = 0usize;
        let n = 100_000;
        for _ in 0..n {
            if sample_action([0.0, 0.0], &mut rng).0 == Action::Human {
                human += 1;
            }
        }
        let freq = human as f64 / n as f64;
        assert!((freq - 0.5).abs() < 0.01, "freq {freq}");
    }

    #[test]
    fn log_prob_matches_log_softmax() {
        let logits = [0.37, -1.2];
        let lp = log_softmax2(logits);
        let mut rng = stream_rng(6, "sample", 0);
        for _ in 0..100 {
            let (a, got) = sample_action(logits, &mut rng);
            let want = match a {
                Action::Ai => lp[0],
                Action::Human => lp[1],
            };
            assert!((got - want).abs() < 1e-12);
        }
    }

    /// Central finite differences over every parameter of a tiny net,
    /// against a scalar loss composed from all three heads over a short
    /// episode. The oracle touches only the forward pass.
    #[test]
    fn gradients_match_finite_differences() {
        let cfg = tiny_cfg();
        let mut net = Network::new(cfg, &mut stream_rng(7, "init", 0));
        let (features, wfracs) = random_inputs(&cfg, 6, 8);

        // Arbitrary smooth loss over outputs: weighted sums and squares.
        let loss_of = |net: &Network| -> f64 {
            let (outs, _) = net.forward_episode(&features, &wfracs);
            outs.iter()
                .enumerate()
                .map(|(t, o)| {
                    let w = 0.3 + 0.1 * t as f64;
                    w * o.logits[0].tanh() - 0.7 * o.logits[1]
                        + 0.5 * o.reward_value * o.reward_value
                        + 0.25 * o.cost_value
                })
                .sum()
        };

        let (outs, trace) = net.forward_episode(&features, &wfracs);
        let out_grads: Vec<OutputGrad> = outs
            .iter()
            .enumerate()
            .map(|(t, o)| {
                let w = 0.3 + 0.1 * t as f64;
                let th = o.logits[0].tanh();
                OutputGrad {
                    dlogits: [w * (1.0 - th * th), -0.7],
                    dreward_value: o.reward_value,
                    dcost_value: 0.25,
                }
            })
            .collect();
        let mut grad = vec![0.0; net.param_len()];
        net.backward_episode(&features, &wfracs, &trace, &out_grads, &mut grad);

        let eps = 1e-5;
        for i in 0..net.param_len() {
            let orig = net.params[i];
            net.params[i] = orig + eps;
            let up = loss_of(&net);
            net.params[i] = orig - eps;
            let down = loss_of(&net);
            net.params[i] = orig;
            let fd = (up - down) / (2.0 * eps);
            let denom = fd.abs().max(grad[i].abs()).max(1e-6);
            assert!(
                (fd - grad[i]).abs() / denom < 1e-3,
                "param {i}: analytic {} vs fd {fd}",
                grad[i]
            );
        }
    }

    #[test]
    fn zero_output_grads_give_zero_param_grads() {
        let net = Network::new(tiny_cfg(), &mut stream_rng(9, "init", 0));
        let (f, w) = random_inputs(&net.cfg, 4, 10);
        let (outs, trace) = net.forward_episode(&f, &w);
        let out_grads = vec![OutputGrad::default(); outs.len()];
        let mut grad = vec![0.0; net.param_len()];
        net.backward_episode(&f, &w, &trace, &out_grads, &mut grad);
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn actor_grad_zero_under_critic_only_loss() {
        let net = Network::new(tiny_cfg(), &mut stream_rng(11, "init", 0));
        let (f, w) = random_inputs(&net.cfg, 4, 12);
        let (_, trace) = net.forward_episode(&f, &w);
        let out_grads = vec![
            OutputGrad {
                dlogits: [0.0, 0.0],
                dreward_value: 1.0,
                dcost_value: -0.5,
            };
            4
        ];
        let mut grad = vec![0.0; net.param_len()];
        net.backward_episode(&f, &w, &trace, &out_grads, &mut grad);
        for name in ["actor_w1", "actor_b1", "actor_w2", "actor_b2"] {
            assert!(grad[net.layout.range(name)].iter().all(|&g| g == 0.0), "{name}");
        }
        assert!(grad[net.layout.range("rcrit_w2")].iter().any(|&g| g != 0.0));
    }

    #[test]
    fn checkpoint_round_trip_bit_exact() {
        let net = Network::new(tiny_cfg(), &mut stream_rng(13, "init", 0));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.json");
        save_checkpoint(&path, &net).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded, net);
        for (a, b) in loaded.params.iter().zip(net.params.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn checkpoint_version_guard() {
        let net = Network::new(tiny_cfg(), &mut stream_rng(14, "init", 0));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.json");
        save_checkpoint(&path, &net).unwrap();
        let text = std::fs::read_to_string(&path)
            .unwrap()
            .replace("\"version\":1", "\"version\":9");
        std::fs::write(&path, text).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Data(_))));
    }
}
