//! Exhaustive search over per-group `(levels, α)` candidates.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use crate::data::Dataset;
use crate::error::{ensure, Error, Result};
use crate::eval::evaluate_accuracy;
use crate::kv::KeyValues;
use crate::lstm::{ClassifierHead, LstmParams};
use crate::par::{self, Workers};
use crate::qlstm::{activation_samples, quantize_lstm, Group, GroupConfig, ScalingConfig};
use crate::quant::suggest_alpha;

/// Candidate settings per group, indexed in [`Group::ALL`] order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExplorationSpec {
    candidates: [Vec<GroupConfig>; 4],
}

fn group_index(g: Group) -> usize {
    Group::ALL.iter().position(|&x| x == g).expect("known group")
}

impl ExplorationSpec {
    /// Duplicates within a group are dropped, keeping the first occurrence.
    pub fn new(candidates: [Vec<GroupConfig>; 4]) -> Result<Self> {
        let mut candidates = candidates;
        for (g, list) in Group::ALL.iter().zip(candidates.iter_mut()) {
            ensure!(!list.is_empty(), Validation, "group `{}` has no candidates", g.key());
            let mut seen = Vec::with_capacity(list.len());
            list.retain(|c| {
                let fresh = !seen.contains(c);
                seen.push(*c);
                fresh
            });
            for c in list.iter() {
                c.validate(*g)?;
            }
        }
        Ok(Self { candidates })
    }

    /// Levels outer, exponents inner.
    pub fn product(levels: &[u32], alpha_exps: &[i32]) -> Vec<GroupConfig> {
        levels
            .iter()
            .flat_map(|&n| alpha_exps.iter().map(move |&k| GroupConfig::new(n, k)))
            .collect()
    }

    /// Every group gets its own [`suggest_alpha`] exponents; weights and biases
    /// from the parameters, the input group from activations on `calibration`.
    pub fn suggested(
        p: &LstmParams,
        calibration: &[&[f32]],
        levels: [&[u32]; 4],
    ) -> Result<Self> {
        let tensor_values = |f: fn(&crate::lstm::GateParams) -> &crate::tensor::DenseTensor| -> Vec<f64> {
            p.gates().iter().flat_map(|g| f(g).data().iter().map(|&v| v as f64)).collect()
        };
        let values = [
            activation_samples(p, calibration)?,
            tensor_values(|g| &g.w_fwd),
            tensor_values(|g| &g.w_rec),
            tensor_values(|g| &g.bias),
        ];
        let mut candidates: [Vec<GroupConfig>; 4] = Default::default();
        for i in 0..4 {
            let exps: Vec<i32> = suggest_alpha(&values[i])?
                .into_iter()
                .filter(|k| (crate::qlstm::MIN_ALPHA_EXP..=crate::qlstm::MAX_ALPHA_EXP).contains(k))
                .collect();
            ensure!(!exps.is_empty(), Validation, "no usable exponent for group `{}`", Group::ALL[i].key());
            candidates[i] = Self::product(levels[i], &exps);
        }
        Self::new(candidates)
    }

    pub fn candidates(&self, g: Group) -> &[GroupConfig] {
        &self.candidates[group_index(g)]
    }

    /// Replaces a group's candidates with a single fixed setting.
    pub fn fix(mut self, g: Group, cfg: GroupConfig) -> Result<Self> {
        cfg.validate(g)?;
        self.candidates[group_index(g)] = vec![cfg];
        Ok(self)
    }

    pub fn grid_size(&self) -> usize {
        self.candidates.iter().map(Vec::len).product()
    }

    /// Per group either `<g>.fixed = n:k`, or `<g>.levels` and
    /// `<g>.alpha_exp` as comma lists. Groups left out fall back to `base`.
    pub fn from_kv(kv: &KeyValues, base: Option<&ExplorationSpec>) -> Result<Self> {
        let allowed: Vec<String> = Group::ALL
            .iter()
            .flat_map(|g| ["fixed", "levels", "alpha_exp"].map(|s| format!("{}.{s}", g.key())))
            .collect();
        kv.check_keys(&allowed.iter().map(String::as_str).collect::<Vec<_>>())?;
        let mut candidates: [Vec<GroupConfig>; 4] = Default::default();
        for (i, g) in Group::ALL.iter().enumerate() {
            let key = g.key();
            let fixed = kv.parsed::<GroupConfig>(&format!("{key}.fixed"))?;
            let levels = kv.list::<u32>(&format!("{key}.levels"))?;
            let alphas = kv.list::<i32>(&format!("{key}.alpha_exp"))?;
            candidates[i] = match (fixed, levels, alphas) {
                (Some(c), None, None) => vec![c],
                (Some(_), _, _) => {
                    return Err(Error::Config(format!("`{key}.fixed` cannot be combined with a sweep")))
                }
                (None, Some(l), Some(a)) => Self::product(&l, &a),
                (None, None, None) => match base {
                    Some(b) => b.candidates[i].clone(),
                    None => return Err(Error::Config(format!("no candidates for group `{key}`"))),
                },
                (None, l, a) => {
                    let b = base.ok_or_else(|| {
                        Error::Config(format!("group `{key}` needs both `levels` and `alpha_exp`"))
                    })?;
                    let old = &b.candidates[i];
                    let mut old_levels: Vec<u32> = old.iter().map(|c| c.levels).collect();
                    old_levels.dedup();
                    let mut old_alphas: Vec<i32> = old.iter().map(|c| c.alpha_exp).collect();
                    old_alphas.sort_unstable();
                    old_alphas.dedup();
                    Self::product(&l.unwrap_or(old_levels), &a.unwrap_or(old_alphas))
                }
            };
        }
        Self::new(candidates)
    }
}

/// Cartesian product in lexicographic `(X, Wfwd, Wrec, B)` order: the last
/// group varies fastest.
pub fn enumerate_configs(spec: &ExplorationSpec) -> Result<Vec<ScalingConfig>> {
    let c = &spec.candidates;
    ensure!(c.iter().all(|l| !l.is_empty()), Validation, "empty candidate set");
    let mut out = Vec::with_capacity(spec.grid_size());
    for &x in &c[0] {
        for &wfwd in &c[1] {
            for &wrec in &c[2] {
                for &b in &c[3] {
                    out.push(ScalingConfig { x, wfwd, wrec, b });
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct ExplorationResult {
    /// In enumeration order.
    pub evaluated: Vec<(ScalingConfig, f64)>,
    pub best: (ScalingConfig, f64),
    pub evaluations: usize,
    pub wall_time: Duration,
}

impl ExplorationResult {
    /// Same evaluations and winner; wall time is ignored.
    pub fn same_outcome(&self, other: &Self) -> bool {
        self.evaluated == other.evaluated && self.best == other.best
    }

    /// One row per evaluated config.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "x_levels,x_alpha_exp,wfwd_levels,wfwd_alpha_exp,wrec_levels,wrec_alpha_exp,b_levels,b_alpha_exp,accuracy\n",
        );
        for (c, acc) in &self.evaluated {
            for g in Group::ALL {
                let gc = c.get(g);
                let _ = write!(s, "{},{},", gc.levels, gc.alpha_exp);
            }
            let _ = writeln!(s, "{acc:.4}");
        }
        s
    }
}

/// Index of the first maximum.
fn first_argmax(acc: &[f64]) -> usize {
    let mut best = 0;
    for (i, &a) in acc.iter().enumerate().skip(1) {
        if a > acc[best] {
            best = i;
        }
    }
    best
}

/// Quantizes `p` under every config of `spec` and scores it on `data`.
/// Configs are evaluated concurrently; the outcome does not depend on
/// `workers`.
pub fn explore(
    p: &LstmParams,
    head: &ClassifierHead,
    data: &Dataset,
    spec: &ExplorationSpec,
    workers: Workers,
) -> Result<ExplorationResult> {
    ensure!(data.samples() > 0, Validation, "empty evaluation set");
    data.require_labels()?;
    let configs = enumerate_configs(spec)?;
    log::info!("exploring {} configurations", configs.len());
    let start = Instant::now();
    let scores = par::map(&configs, workers, |cfg| {
        quantize_lstm(p, cfg)
            .and_then(|q| evaluate_accuracy(&q, head, data, Workers::SEQUENTIAL))
            .map_err(|e| Error::AtConfig { config: cfg.to_string(), source: Box::new(e) })
    });
    let scores = scores.into_iter().collect::<Result<Vec<f64>>>()?;
    let best = first_argmax(&scores);
    let evaluated: Vec<(ScalingConfig, f64)> = configs.into_iter().zip(scores).collect();
    debug_assert!(evaluated.iter().all(|e| e.1 <= evaluated[best].1));
    Ok(ExplorationResult {
        best: evaluated[best],
        evaluations: evaluated.len(),
        evaluated,
        wall_time: start.elapsed(),
    })
}

/// Candidates within `radius` exponent steps of `base` in every group, at
/// `base`'s level counts. Exponents outside the valid range are dropped.
pub fn neighborhood(base: &ScalingConfig, radius: i32) -> Result<ExplorationSpec> {
    let around = |g: GroupConfig| -> Vec<GroupConfig> {
        (g.alpha_exp - radius..=g.alpha_exp + radius)
            .filter(|k| (crate::qlstm::MIN_ALPHA_EXP..=crate::qlstm::MAX_ALPHA_EXP).contains(k))
            .map(|k| GroupConfig::new(g.levels, k))
            .collect()
    };
    ExplorationSpec::new(Group::ALL.map(|g| around(base.get(g))))
}

/// Upper bound on passes over the four groups in [`tune_config`].
pub const MAX_TUNE_SWEEPS: usize = 3;

/// Starts from the error-minimizing exponents, then moves one group at a time
/// to its most accurate exponent within `radius` steps, repeating until a
/// full pass changes nothing. Only strict improvements are taken.
pub fn tune_config(
    p: &LstmParams,
    head: &ClassifierHead,
    data: &Dataset,
    x_levels: u32,
    w_levels: u32,
    radius: i32,
    workers: Workers,
) -> Result<(ScalingConfig, f64)> {
    ensure!(radius >= 0, Validation, "radius must be non-negative, got {radius}");
    let n_calib = data.samples().min(16);
    let calibration: Vec<&[f32]> = (0..n_calib).map(|s| data.sample(s)).collect();
    let mut current = crate::qlstm::calibrate_config(p, &calibration, x_levels, w_levels)?;
    let mut score = evaluate_accuracy(&quantize_lstm(p, &current)?, head, data, workers)?;
    if radius == 0 {
        return Ok((current, score));
    }
    for _ in 0..MAX_TUNE_SWEEPS {
        let mut moved = false;
        for g in Group::ALL {
            let others: Vec<GroupConfig> = neighborhood(&current, radius)?
                .candidates(g)
                .iter()
                .copied()
                .filter(|&c| c != current.get(g))
                .collect();
            if others.is_empty() {
                continue;
            }
            let mut spec = ExplorationSpec::new(Group::ALL.map(|h| vec![current.get(h)]))?;
            spec.candidates[group_index(g)] = others;
            let r = explore(p, head, data, &spec, workers)?;
            if r.best.1 > score {
                (current, score) = r.best;
                moved = true;
            }
        }
        if !moved {
            break;
        }
    }
    Ok((current, score))
}

/// Accuracy table over `(Wfwd, Wrec)` at fixed X and B settings.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSlice {
    /// Row axis.
    pub wfwd: Vec<GroupConfig>,
    /// Column axis.
    pub wrec: Vec<GroupConfig>,
    /// `cells[r][c]`; `None` where the config was not evaluated.
    pub cells: Vec<Vec<Option<f64>>>,
}

impl GridSlice {
    pub fn max(&self) -> Option<f64> {
        self.cells.iter().flatten().flatten().copied().reduce(f64::max)
    }

    pub fn missing(&self) -> usize {
        self.cells.iter().flatten().filter(|c| c.is_none()).count()
    }

    /// Axis labels are `alpha_exp` when every entry on the axis shares one
    /// level count, `levels:alpha_exp` otherwise. Absent cells read `NA`.
    pub fn to_csv(&self) -> String {
        fn labels(axis: &[GroupConfig]) -> Vec<String> {
            let uniform = axis.windows(2).all(|w| w[0].levels == w[1].levels);
            axis.iter()
                .map(|c| if uniform { c.alpha_exp.to_string() } else { c.to_string() })
                .collect()
        }
        let mut s = String::from("wfwd\\wrec");
        for l in labels(&self.wrec) {
            s.push(',');
            s.push_str(&l);
        }
        s.push('\n');
        for (label, row) in labels(&self.wfwd).into_iter().zip(&self.cells) {
            s.push_str(&label);
            for c in row {
                match c {
                    Some(a) => {
                        let _ = write!(s, ",{a:.4}");
                    }
                    None => s.push_str(",NA"),
                }
            }
            s.push('\n');
        }
        s
    }
}

/// Two-dimensional view of `result` with X and B held at the given values.
pub fn grid_slice(result: &ExplorationResult, x: GroupConfig, b: GroupConfig) -> Result<GridSlice> {
    let hits: Vec<&(ScalingConfig, f64)> =
        result.evaluated.iter().filter(|(c, _)| c.x == x && c.b == b).collect();
    ensure!(!hits.is_empty(), Validation, "no evaluated config has X={x} and B={b}");
    let mut wfwd: Vec<GroupConfig> = hits.iter().map(|(c, _)| c.wfwd).collect();
    let mut wrec: Vec<GroupConfig> = hits.iter().map(|(c, _)| c.wrec).collect();
    for axis in [&mut wfwd, &mut wrec] {
        axis.sort_unstable();
        axis.dedup();
    }
    let cells = wfwd
        .iter()
        .map(|&f| {
            wrec.iter()
                .map(|&r| hits.iter().find(|(c, _)| c.wfwd == f && c.wrec == r).map(|e| e.1))
                .collect()
        })
        .collect();
    Ok(GridSlice { wfwd, wrec, cells })
}
