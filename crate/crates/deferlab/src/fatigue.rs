//! Workload-dependent human performance.
//!
//! Performance follows a two-phase curve over cumulative workload `rho`:
//! a quadratic warm-up from `w0` to `w_peak` while `rho <= rho_hat * L`,
//! then a sigmoid decay toward `w_base` with inflection at `rho_bar * L`
//! and steepness `k`. Expert parameter sets are drawn uniformly from
//! benchmark ranges, one fresh expert per episode.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The six-tuple governing one expert's performance curve, plus the
/// reference horizon `L` the relative workloads are scaled by.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FatigueParams {
    pub w0: f64,
    pub w_peak: f64,
    pub w_base: f64,
    pub rho_hat: f64,
    pub rho_bar: f64,
    pub k: f64,
    pub horizon_l: u32,
}

impl FatigueParams {
    /// Validates `0 <= w_base <= w0 <= w_peak <= 1`, `0 < rho_hat < rho_bar < 1`,
    /// `k > 0` and `horizon_l >= 1`. Invalid tuples are rejected here so the
    /// performance function itself never has to.
    pub fn new(
        w0: f64,
        w_peak: f64,
        w_base: f64,
        rho_hat: f64,
        rho_bar: f64,
        k: f64,
        horizon_l: u32,
    ) -> Result<Self> {
        let p = FatigueParams {
            w0,
            w_peak,
            w_base,
            rho_hat,
            rho_bar,
            k,
            horizon_l,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let ordered = 0.0 <= self.w_base
            && self.w_base <= self.w0
            && self.w0 <= self.w_peak
            && self.w_peak <= 1.0;
        if !ordered {
            return Err(Error::Config(format!(
                "performance levels must satisfy 0 <= w_base <= w0 <= w_peak <= 1, \
                 got w_base={} w0={} w_peak={}",
                self.w_base, self.w0, self.w_peak
            )));
        }
        if !(0.0 < self.rho_hat && self.rho_hat < self.rho_bar && self.rho_bar < 1.0) {
            return Err(Error::Config(format!(
                "relative workloads must satisfy 0 < rho_hat < rho_bar < 1, \
                 got rho_hat={} rho_bar={}",
                self.rho_hat, self.rho_bar
            )));
        }
        if !(self.k > 0.0) {
            return Err(Error::Config(format!("decay steepness k must be > 0, got {}", self.k)));
        }
        if self.horizon_l < 1 {
            return Err(Error::Config("horizon_l must be >= 1".into()));
        }
        Ok(())
    }

    /// Performance at cumulative workload `rho >= 0`, in `[0, 1]`.
    ///
    /// The branch boundary `rho = rho_hat * L` belongs to the warm-up branch,
    /// which returns exactly `w_peak` there; see [`FatigueParams::boundary_jump`]
    /// for the residual the decay branch would leave. Output is clamped to
    /// `[0, 1]` so user-supplied parameter files cannot push it outside.
    pub fn performance(&self, rho: f64) -> f64 {
        debug_assert!(rho >= 0.0);
        let l = f64::from(self.horizon_l);
        let peak_at = self.rho_hat * l;
        let w = if rho <= peak_at {
            self.w0 + (self.w_peak - self.w0) * (rho / peak_at).powi(2)
        } else {
            self.w_base + (self.w_peak - self.w_base) / (1.0 + (self.k * (rho - self.rho_bar * l)).exp())
        };
        w.clamp(0.0, 1.0)
    }

    /// Size of the discontinuity between the two branches at `rho = rho_hat * L`:
    /// `(w_peak - w_base) * sigma` with
    /// `sigma = exp(k (rho_hat - rho_bar) L) / (1 + exp(k (rho_hat - rho_bar) L))`.
    pub fn boundary_jump(&self) -> f64 {
        let l = f64::from(self.horizon_l);
        let e = (self.k * (self.rho_hat - self.rho_bar) * l).exp();
        (self.w_peak - self.w_base) * e / (1.0 + e)
    }
}

/// Closed interval for uniform sampling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo <= hi) {
            return Err(Error::Config(format!("interval requires lo <= hi, got [{lo}, {hi}]")));
        }
        Ok(Interval { lo, hi })
    }

    pub fn point(v: f64) -> Self {
        Interval { lo: v, hi: v }
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        let u: f64 = rng.gen();
        self.lo + u * (self.hi - self.lo)
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }
}

/// Per-parameter sampling intervals for one expert population.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FatigueParamRanges {
    pub w0: Interval,
    pub w_peak: Interval,
    pub w_base: Interval,
    pub rho_hat: Interval,
    pub rho_bar: Interval,
    pub k: Interval,
    pub horizon_l: u32,
}

impl FatigueParamRanges {
    /// Collapse fixed parameters into point intervals.
    pub fn fixed(params: FatigueParams) -> Self {
        FatigueParamRanges {
            w0: Interval::point(params.w0),
            w_peak: Interval::point(params.w_peak),
            w_base: Interval::point(params.w_base),
            rho_hat: Interval::point(params.rho_hat),
            rho_bar: Interval::point(params.rho_bar),
            k: Interval::point(params.k),
            horizon_l: params.horizon_l,
        }
    }

    /// Ranges must be ordering-consistent: every sampled tuple has to satisfy
    /// the `FatigueParams` invariants. The relative-workload intervals must be
    /// strictly disjoint; the performance-level intervals may overlap because
    /// sampling repairs their ordering (see [`FatigueParamRanges::sample`]).
    pub fn validate(&self) -> Result<()> {
        for (name, iv) in [
            ("w0", self.w0),
            ("w_peak", self.w_peak),
            ("w_base", self.w_base),
            ("rho_hat", self.rho_hat),
            ("rho_bar", self.rho_bar),
            ("k", self.k),
        ] {
            if !(iv.lo <= iv.hi) {
                return Err(Error::Config(format!("range {name} has lo > hi")));
            }
        }
        for (name, iv) in [("w0", self.w0), ("w_peak", self.w_peak), ("w_base", self.w_base)] {
            if iv.lo < 0.0 || iv.hi > 1.0 {
                return Err(Error::Config(format!("range {name} must lie within [0, 1]")));
            }
        }
        if !(self.rho_hat.lo > 0.0 && self.rho_hat.hi < self.rho_bar.lo && self.rho_bar.hi < 1.0) {
            return Err(Error::Config(
                "relative workload ranges must satisfy 0 < rho_hat < rho_bar < 1 for every draw".into(),
            ));
        }
        if !(self.k.lo > 0.0) {
            return Err(Error::Config("k range must be positive".into()));
        }
        if self.w_base.lo > self.w0.hi || self.w0.lo > self.w_peak.hi {
            return Err(Error::Config(
                "performance-level ranges cannot satisfy w_base <= w0 <= w_peak".into(),
            ));
        }
        if self.horizon_l < 1 {
            return Err(Error::Config("horizon_l must be >= 1".into()));
        }
        Ok(())
    }

    /// Draw one expert. Each field is sampled independently and uniformly from
    /// its interval, in a fixed order, so identical seeds produce identical
    /// tuples. Overlapping performance-level ranges (the benchmark tables
    /// allow e.g. w0 above w_peak's lower end) are repaired by widening the
    /// drawn w_peak up to w0 and narrowing w_base down to w0; the w0 marginal
    /// itself stays exactly uniform.
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> FatigueParams {
        let w0 = self.w0.sample(rng);
        let w_base = self.w_base.sample(rng).min(w0);
        let w_peak = self.w_peak.sample(rng).max(w0);
        let rho_hat = self.rho_hat.sample(rng);
        let rho_bar = self.rho_bar.sample(rng);
        let k = self.k.sample(rng);
        FatigueParams {
            w0,
            w_peak,
            w_base,
            rho_hat,
            rho_bar,
            k,
            horizon_l: self.horizon_l,
        }
    }

    /// Parameter tuple at every interval's midpoint.
    pub fn midpoint_params(&self) -> FatigueParams {
        FatigueParams {
            w0: self.w0.midpoint(),
            w_base: self.w_base.midpoint().min(self.w0.midpoint()),
            w_peak: self.w_peak.midpoint().max(self.w0.midpoint()),
            rho_hat: self.rho_hat.midpoint(),
            rho_bar: self.rho_bar.midpoint(),
            k: self.k.midpoint(),
            horizon_l: self.horizon_l,
        }
    }
}

/// Built-in expert populations: four benchmark-style presets plus the three
/// ablation regimes and the clinical recall profile.
pub mod presets {
    use super::*;

    fn iv(lo: f64, hi: f64) -> Interval {
        Interval { lo, hi }
    }

    pub const NAMES: [&str; 8] = [
        "cifar",
        "chaoyang",
        "flickr",
        "micebone",
        "sustained_high",
        "normal_fatigue",
        "rapid_fatigue",
        "real_human_recall",
    ];

    pub fn by_name(name: &str) -> Result<FatigueParamRanges> {
        let r = match name {
            "cifar" => FatigueParamRanges {
                w0: iv(0.7, 0.9),
                w_base: iv(0.4, 0.5),
                w_peak: iv(0.8, 1.0),
                rho_hat: iv(0.025, 0.1),
                rho_bar: iv(0.25, 0.5),
                k: iv(0.05, 0.1),
                horizon_l: 200,
            },
            "chaoyang" => FatigueParamRanges {
                w0: iv(0.8, 0.9),
                w_base: iv(0.6, 0.7),
                w_peak: iv(0.9, 1.0),
                rho_hat: iv(0.025, 0.1),
                rho_bar: iv(0.25, 0.5),
                k: iv(0.05, 0.1),
                horizon_l: 100,
            },
            "flickr" => FatigueParamRanges {
                w0: iv(0.65, 0.9),
                w_base: iv(0.3, 0.4),
                w_peak: iv(0.8, 1.0),
                rho_hat: iv(0.025, 0.1),
                rho_bar: iv(0.25, 0.5),
                k: iv(0.05, 0.1),
                horizon_l: 100,
            },
            "micebone" => FatigueParamRanges {
                w0: iv(0.8, 0.9),
                w_base: iv(0.6, 0.7),
                w_peak: iv(0.9, 1.0),
                rho_hat: iv(0.025, 0.1),
                rho_bar: iv(0.25, 0.5),
                k: iv(0.05, 0.1),
                horizon_l: 100,
            },
            // Expert stays above 0.8 for the whole horizon: the static-expert
            // limit of the benchmark.
            "sustained_high" => FatigueParamRanges {
                w0: iv(0.85, 0.9),
                w_base: iv(0.8, 0.85),
                w_peak: iv(0.92, 0.98),
                rho_hat: iv(0.02, 0.05),
                rho_bar: iv(0.5, 0.7),
                k: iv(0.02, 0.05),
                horizon_l: 100,
            },
            // Standard warm-up and fatigue cycle at a 100-step horizon.
            "normal_fatigue" => FatigueParamRanges {
                w0: iv(0.7, 0.9),
                w_base: iv(0.4, 0.5),
                w_peak: iv(0.8, 1.0),
                rho_hat: iv(0.025, 0.1),
                rho_bar: iv(0.25, 0.5),
                k: iv(0.05, 0.1),
                horizon_l: 100,
            },
            // Sharp decline: the curve reaches its floor inside the first
            // half of the horizon.
            "rapid_fatigue" => FatigueParamRanges {
                w0: iv(0.8, 0.9),
                w_base: iv(0.35, 0.45),
                w_peak: iv(0.9, 1.0),
                rho_hat: iv(0.01, 0.05),
                rho_bar: iv(0.1, 0.2),
                k: iv(0.15, 0.25),
                horizon_l: 100,
            },
            // Radiologist recall profile: no warm-up (w0 = w_peak = 0.78),
            // declining to within 0.01 of 0.66 over 100 readings.
            "real_human_recall" => FatigueParamRanges::fixed(FatigueParams {
                w0: 0.78,
                w_peak: 0.78,
                w_base: 0.66,
                rho_hat: 0.01,
                rho_bar: 0.5,
                k: 0.1,
                horizon_l: 100,
            }),
            other => {
                return Err(Error::Config(format!(
                    "unknown fatigue preset '{other}'; valid presets: {}",
                    NAMES.join(", ")
                )))
            }
        };
        r.validate()?;
        Ok(r)
    }
}

/// On-disk preset schema: named preset -> six `[lo, hi]` pairs plus `L`.
#[derive(Debug, Serialize, Deserialize)]
struct PresetFile {
    presets: BTreeMap<String, PresetEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct PresetEntry {
    w0: [f64; 2],
    w_peak: [f64; 2],
    w_base: [f64; 2],
    rho_hat: [f64; 2],
    rho_bar: [f64; 2],
    k: [f64; 2],
    horizon_l: u32,
}

/// Load named parameter presets from a TOML file.
pub fn load_preset_file(path: &Path) -> Result<BTreeMap<String, FatigueParamRanges>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: PresetFile = toml::from_str(&text)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let mut out = BTreeMap::new();
    for (name, e) in file.presets {
        let ranges = FatigueParamRanges {
            w0: Interval::new(e.w0[0], e.w0[1])?,
            w_peak: Interval::new(e.w_peak[0], e.w_peak[1])?,
            w_base: Interval::new(e.w_base[0], e.w_base[1])?,
            rho_hat: Interval::new(e.rho_hat[0], e.rho_hat[1])?,
            rho_bar: Interval::new(e.rho_bar[0], e.rho_bar[1])?,
            k: Interval::new(e.k[0], e.k[1])?,
            horizon_l: e.horizon_l,
        };
        ranges
            .validate()
            .map_err(|err| Error::Config(format!("preset '{name}': {err}")))?;
        out.insert(name, ranges);
    }
    Ok(out)
}

/// Write named presets in the same schema `load_preset_file` reads.
pub fn write_preset_file(path: &Path, presets: &BTreeMap<String, FatigueParamRanges>) -> Result<()> {
    let mut file = PresetFile {
        presets: BTreeMap::new(),
    };
    for (name, r) in presets {
        file.presets.insert(
            name.clone(),
            PresetEntry {
                w0: [r.w0.lo, r.w0.hi],
                w_peak: [r.w_peak.lo, r.w_peak.hi],
                w_base: [r.w_base.lo, r.w_base.hi],
                rho_hat: [r.rho_hat.lo, r.rho_hat.hi],
                rho_bar: [r.rho_bar.lo, r.rho_bar.hi],
                k: [r.k.lo, r.k.hi],
                horizon_l: r.horizon_l,
            },
        );
    }
    let text = toml::to_string(&file).map_err(|e| Error::Data(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
