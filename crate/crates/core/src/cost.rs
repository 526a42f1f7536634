//! Analytic area/delay model of the multi-level MAC.
//!
//! Area is counted in gate-equivalents and delay in gate-delays. The
//! multiplier is an `m × n` array (AND partial products reduced by ripple
//! full adders), the accumulator a ripple adder wide enough for a `K`-term
//! dot product, and the power-of-two rescale is pure wiring.

use std::fmt::Write as _;

use crate::error::{ensure, Error, Result};
use crate::kv::KeyValues;

pub const MAX_WIDTH: u32 = 32;

/// The `(input levels, weight levels)` pairs tabulated against full precision.
pub const TABLE_CONFIGS: [(u32, u32); 6] = [(3, 4), (3, 5), (4, 4), (4, 5), (5, 4), (5, 5)];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateCostParams {
    pub and_area: f64,
    pub and_delay: f64,
    pub full_adder_area: f64,
    pub full_adder_delay: f64,
    pub accumulator_guard_bits: u32,
    pub fp_baseline_area: f64,
    pub fp_baseline_delay: f64,
}

impl Default for GateCostParams {
    fn default() -> Self {
        Self {
            and_area: 1.0,
            and_delay: 1.0,
            full_adder_area: 5.0,
            full_adder_delay: 2.0,
            accumulator_guard_bits: 0,
            fp_baseline_area: 6100.0,
            fp_baseline_delay: 1250.0,
        }
    }
}

const KEYS: [&str; 7] = [
    "and_area",
    "and_delay",
    "full_adder_area",
    "full_adder_delay",
    "accumulator_guard_bits",
    "fp_baseline_area",
    "fp_baseline_delay",
];

impl GateCostParams {
    pub fn validate(&self) -> Result<()> {
        let reals = [
            ("and_area", self.and_area),
            ("and_delay", self.and_delay),
            ("full_adder_area", self.full_adder_area),
            ("full_adder_delay", self.full_adder_delay),
            ("fp_baseline_area", self.fp_baseline_area),
            ("fp_baseline_delay", self.fp_baseline_delay),
        ];
        for (name, v) in reals {
            ensure!(v.is_finite() && v > 0.0, Config, "`{name}` must be positive, got {v}");
        }
        Ok(())
    }

    /// Overrides defaults with any keys present; unknown keys are rejected.
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        kv.check_keys(&KEYS)?;
        let mut p = Self::default();
        let set = |key: &str, slot: &mut f64| -> Result<()> {
            if let Some(v) = kv.parsed::<f64>(key)? {
                *slot = v;
            }
            Ok(())
        };
        set("and_area", &mut p.and_area)?;
        set("and_delay", &mut p.and_delay)?;
        set("full_adder_area", &mut p.full_adder_area)?;
        set("full_adder_delay", &mut p.full_adder_delay)?;
        set("fp_baseline_area", &mut p.fp_baseline_area)?;
        set("fp_baseline_delay", &mut p.fp_baseline_delay)?;
        if let Some(g) = kv.parsed::<u32>("accumulator_guard_bits")? {
            p.accumulator_guard_bits = g;
        }
        p.validate()?;
        Ok(p)
    }
}

fn check_width(name: &str, w: u32) -> Result<()> {
    if !(1..=MAX_WIDTH).contains(&w) {
        return Err(Error::Validation(format!("{name} width {w} outside [1, {MAX_WIDTH}]")));
    }
    Ok(())
}

/// `(area, delay)` of an `m × n` array multiplier.
pub fn multiplier_cost(m: u32, n: u32, gc: &GateCostParams) -> Result<(f64, f64)> {
    check_width("input", m)?;
    check_width("weight", n)?;
    let (mf, nf) = (m as f64, n as f64);
    let area = mf * nf * gc.and_area + (mf - 1.0) * nf * gc.full_adder_area;
    let delay = gc.and_delay + (mf + nf - 2.0) * gc.full_adder_delay;
    Ok((area, delay))
}

/// Bits needed to sum `k` products of an `m`- and `n`-bit operand.
pub fn accumulator_width(m: u32, n: u32, k: usize, guard: u32) -> u32 {
    let log_k = usize::BITS - (k.max(1) - 1).leading_zeros();
    m + n + log_k + guard
}

/// What the delay figure covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DelayScope {
    #[default]
    MultiplierAndAccumulator,
    MultiplierOnly,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostReport {
    pub input_levels: u32,
    pub weight_levels: u32,
    pub dot_length: usize,
    pub multiplier_area: f64,
    pub multiplier_delay: f64,
    pub accumulator_width: u32,
    pub accumulator_area: f64,
    pub accumulator_delay: f64,
    pub shift_area: f64,
    pub shift_delay: f64,
    pub area: f64,
    pub delay: f64,
    pub normalized_area: f64,
    pub normalized_delay: f64,
}

impl CostReport {
    pub fn delay_in(&self, scope: DelayScope) -> f64 {
        match scope {
            DelayScope::MultiplierAndAccumulator => self.delay,
            DelayScope::MultiplierOnly => self.multiplier_delay + self.shift_delay,
        }
    }

    /// `(area, delay)` relative to another report.
    pub fn relative_to(&self, base: &CostReport, scope: DelayScope) -> (f64, f64) {
        (self.area / base.area, self.delay_in(scope) / base.delay_in(scope))
    }
}

pub fn mac_cost(m: u32, n: u32, k: usize, gc: &GateCostParams) -> Result<CostReport> {
    ensure!(k >= 1, Validation, "dot length must be at least 1");
    gc.validate()?;
    let (multiplier_area, multiplier_delay) = multiplier_cost(m, n, gc)?;
    let width = accumulator_width(m, n, k, gc.accumulator_guard_bits);
    let accumulator_area = width as f64 * gc.full_adder_area;
    let accumulator_delay = width as f64 * gc.full_adder_delay;
    let area = multiplier_area + accumulator_area;
    let delay = multiplier_delay + accumulator_delay;
    Ok(CostReport {
        input_levels: m,
        weight_levels: n,
        dot_length: k,
        multiplier_area,
        multiplier_delay,
        accumulator_width: width,
        accumulator_area,
        accumulator_delay,
        shift_area: 0.0,
        shift_delay: 0.0,
        area,
        delay,
        normalized_area: area / gc.fp_baseline_area,
        normalized_delay: delay / gc.fp_baseline_delay,
    })
}

/// Row-major over `1..=max_m × 1..=max_n`.
pub fn cost_grid(max_m: u32, max_n: u32, k: usize, gc: &GateCostParams) -> Result<Vec<CostReport>> {
    let mut out = Vec::with_capacity((max_m * max_n) as usize);
    for m in 1..=max_m {
        for n in 1..=max_n {
            out.push(mac_cost(m, n, k, gc)?);
        }
    }
    Ok(out)
}

/// Reference for normalized columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Normalization {
    /// Full-precision MAC baseline.
    #[default]
    FullPrecision,
    /// The `(5, 5)` configuration.
    Max55,
}

impl std::str::FromStr for Normalization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fp" | "full" => Ok(Self::FullPrecision),
            "max55" => Ok(Self::Max55),
            other => Err(Error::Config(format!("unknown normalization `{other}`"))),
        }
    }
}

pub fn cost_csv(
    reports: &[CostReport],
    norm: Normalization,
    scope: DelayScope,
    gc: &GateCostParams,
) -> Result<String> {
    let (base_area, base_delay) = match norm {
        Normalization::FullPrecision => (gc.fp_baseline_area, gc.fp_baseline_delay),
        Normalization::Max55 => {
            let k = reports.first().map_or(32, |r| r.dot_length);
            let r = mac_cost(5, 5, k, gc)?;
            (r.area, r.delay_in(scope))
        }
    };
    let mut s = String::from("input_levels,weight_levels,area,delay,normalized_area,normalized_delay\n");
    for r in reports {
        let d = r.delay_in(scope);
        let _ = writeln!(
            s,
            "{},{},{},{},{:.6},{:.6}",
            r.input_levels,
            r.weight_levels,
            r.area,
            d,
            r.area / base_area,
            d / base_delay
        );
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn multiplier_examples() {
        let gc = GateCostParams::default();
        assert_eq!(multiplier_cost(1, 1, &gc).unwrap(), (1.0, 1.0));
        assert_eq!(multiplier_cost(5, 5, &gc).unwrap(), (125.0, 17.0));
        assert!(multiplier_cost(2, 5, &gc).unwrap().0 < 125.0);
        assert!(multiplier_cost(0, 5, &gc).is_err());
        assert!(multiplier_cost(5, 33, &gc).is_err());
    }

    #[test]
    fn accumulator_width_counts_log_k() {
        assert_eq!(accumulator_width(5, 5, 32, 0), 15);
        assert_eq!(accumulator_width(5, 5, 33, 0), 16);
        assert_eq!(accumulator_width(1, 1, 1, 2), 4);
    }

    #[test]
    fn mac_five_five() {
        let r = mac_cost(5, 5, 32, &GateCostParams::default()).unwrap();
        assert_eq!(r.area, 200.0);
        assert_eq!(r.delay, 47.0);
        assert_eq!(r.shift_area, 0.0);
        assert_eq!(r.normalized_area, 200.0 / 6100.0);
        assert_eq!(r.delay_in(DelayScope::MultiplierOnly), 17.0);
        assert_eq!(r.relative_to(&r, DelayScope::default()), (1.0, 1.0));
    }

    #[test]
    fn strictly_increasing() {
        let gc = GateCostParams::default();
        for m in 2..8 {
            for n in 2..8 {
                let a = mac_cost(m, n, 32, &gc).unwrap();
                let bm = mac_cost(m + 1, n, 32, &gc).unwrap();
                let bn = mac_cost(m, n + 1, 32, &gc).unwrap();
                assert!(bm.area > a.area && bm.delay > a.delay);
                assert!(bn.area > a.area && bn.delay > a.delay);
                assert!(a.normalized_area > 0.0 && a.normalized_area <= 1.0);
            }
        }
    }

    #[test]
    fn constants_file() {
        let kv = KeyValues::parse("full_adder_area = 6\naccumulator_guard_bits = 2").unwrap();
        let gc = GateCostParams::from_kv(&kv).unwrap();
        assert_eq!(gc.full_adder_area, 6.0);
        assert_eq!(gc.accumulator_guard_bits, 2);
        assert!(GateCostParams::from_kv(&KeyValues::parse("bogus = 1").unwrap()).is_err());
        assert!(GateCostParams::from_kv(&KeyValues::parse("and_area = -1").unwrap()).is_err());
        assert!(GateCostParams::from_kv(&KeyValues::parse("and_area = x").unwrap()).is_err());
    }

    #[test]
    fn max55_csv() {
        let gc = GateCostParams::default();
        let grid = cost_grid(5, 5, 32, &gc).unwrap();
        let csv = cost_csv(&grid, Normalization::Max55, DelayScope::default(), &gc).unwrap();
        let last = csv.lines().last().unwrap();
        assert_eq!(last, "5,5,200,47,1.000000,1.000000");
        assert_eq!(csv.lines().count(), 26);
    }
}
