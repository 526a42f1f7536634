use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use mlbin::cost::{cost_csv, cost_grid, mac_cost, DelayScope, GateCostParams, Normalization, TABLE_CONFIGS};
use mlbin::data::{load_dataset, synth_dataset, Dataset, SynthSpec};
use mlbin::eval::{class_counts, evaluate_accuracy};
use mlbin::explorer::{explore as run_explore, grid_slice, tune_config, ExplorationSpec};
use mlbin::kv::KeyValues;
use mlbin::lstm::{ClassifierHead, LstmParams};
use mlbin::model::{load_any, save_model, save_qmodel, AnyModel, Model, QuantizedModel};
use mlbin::qlstm::{calibrate_config, quantize_lstm, residual_stats, FixedPointLstm, Group, GroupConfig, ScalingConfig};
use mlbin::readout::{train_pipeline, PipelineSpec, RidgeSpec};
use mlbin::{Error, Result, Workers};

use crate::{
    CompareArgs, CostArgs, EvalArgs, ExploreArgs, QuantizeArgs, ScalingArgs, SynthArgs, TrainArgs,
};

/// Samples used for activation-range calibration.
const CALIBRATION_SAMPLES: usize = 16;

fn io_error(path: &Path, source: io::Error) -> Error {
    Error::Io { path: path.to_path_buf(), source }
}

fn require_input(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(io_error(path, io::Error::new(io::ErrorKind::NotFound, "no such file or directory")))
    }
}

/// The parent directory must exist and the target must not be one of `inputs`.
fn require_output(out: &Path, inputs: &[&Path]) -> Result<()> {
    let parent = match out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    if !parent.is_dir() {
        return Err(io_error(out, io::Error::new(io::ErrorKind::NotFound, "parent directory does not exist")));
    }
    let same = |a: &Path, b: &Path| match (a.canonicalize(), b.canonicalize()) {
        (Ok(x), Ok(y)) => x == y,
        _ => a == b,
    };
    if inputs.iter().any(|i| same(out, i)) {
        return Err(Error::Config(format!("output {} would overwrite an input", out.display())));
    }
    Ok(())
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| io_error(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| io_error(path, e))
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => write_text(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// File contents (if any) with `key=value` overrides applied on top.
fn key_values(file: Option<&Path>, sets: &[String]) -> Result<KeyValues> {
    let mut kv = match file {
        Some(p) => KeyValues::parse(&read_text(p)?)?,
        None => KeyValues::default(),
    };
    for s in sets {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{s}` is not KEY=VALUE")))?;
        kv.set(k.trim(), v.trim());
    }
    Ok(kv)
}

fn calibration(data: &Dataset) -> Vec<&[f32]> {
    (0..data.samples().min(CALIBRATION_SAMPLES)).map(|s| data.sample(s)).collect()
}

fn require_head(head: Option<ClassifierHead>, path: &Path) -> Result<ClassifierHead> {
    head.ok_or_else(|| Error::Validation(format!("model {} has no readout", path.display())))
}

fn load_fp(path: &Path) -> Result<Model> {
    require_input(path)?;
    match load_any(path)? {
        AnyModel::FullPrecision(m) => Ok(m),
        AnyModel::Quantized(_) => Err(Error::Validation(format!(
            "{} is already quantized; a full-precision model is required",
            path.display()
        ))),
    }
}

fn load_data(path: &Path) -> Result<Dataset> {
    require_input(path)?;
    load_dataset(path)
}

pub fn synth(a: SynthArgs) -> Result<()> {
    require_output(&a.out, &[])?;
    let spec = SynthSpec {
        seed: a.seed,
        samples: a.samples,
        timesteps: a.timesteps,
        features: a.features,
        n_classes: a.classes,
        noise: a.noise,
        ..SynthSpec::default()
    };
    let data = synth_dataset(&spec)?;
    data.save(&a.out)?;
    println!(
        "samples={} timesteps={} features={} classes={}",
        data.samples(),
        data.timesteps(),
        data.features(),
        data.n_classes()
    );
    Ok(())
}

pub fn train(a: TrainArgs) -> Result<()> {
    let mut inputs = vec![a.data.as_path()];
    if let Some(p) = &a.init {
        inputs.push(p);
    }
    require_output(&a.out, &inputs)?;
    let data = load_data(&a.data)?;
    let init: Option<LstmParams> = match &a.init {
        Some(p) => Some(load_fp(p)?.params),
        None => None,
    };
    let spec = PipelineSpec {
        seed: a.seed,
        n_hidden: a.hidden,
        train_fraction: a.train_fraction,
        ridge: RidgeSpec { lambda: a.lambda, feature: a.feature.parse()? },
    };
    let out = train_pipeline(init, &data, &spec, Workers(a.workers.workers))?;
    save_model(&a.out, &Model { params: out.params, head: Some(out.head) })?;
    println!("train_accuracy={:.6}", out.train_accuracy);
    println!("heldout_accuracy={:.6}", out.heldout_accuracy);
    Ok(())
}

fn scaling_config(args: &ScalingArgs, base: Option<ScalingConfig>) -> Result<ScalingConfig> {
    if let Some(p) = &args.config {
        require_input(p)?;
    }
    let kv = key_values(args.config.as_deref(), &args.sets)?;
    ScalingConfig::from_kv(&kv, base)
}

pub fn quantize(a: QuantizeArgs) -> Result<()> {
    let mut inputs = vec![a.model.as_path()];
    inputs.extend(a.scaling.config.as_deref());
    inputs.extend(a.calibrate.as_deref());
    require_output(&a.out, &inputs)?;
    let model = load_fp(&a.model)?;
    let base = match &a.calibrate {
        Some(p) => {
            let data = load_data(p)?;
            Some(calibrate_config(&model.params, &calibration(&data), a.x_levels, a.w_levels)?)
        }
        None => None,
    };
    let cfg = scaling_config(&a.scaling, base)?;
    let q = quantize_lstm(&model.params, &cfg)?;
    let stats = residual_stats(&model.params, &q)?;
    save_qmodel(&a.out, &QuantizedModel { params: q, head: model.head })?;
    println!("config {cfg}");
    for (g, st) in stats {
        let gc = cfg.get(g);
        println!(
            "group={} levels={} alpha_exp={} count={} max_abs={:.6e} rms={:.6e} bound={:.6e}",
            g.key(),
            gc.levels,
            gc.alpha_exp,
            st.count,
            st.max_abs,
            st.rms,
            gc.residual_bound()
        );
    }
    Ok(())
}

pub fn eval(a: EvalArgs) -> Result<()> {
    if let Some(p) = &a.per_class {
        require_output(p, &[&a.model, &a.data])?;
    }
    require_input(&a.model)?;
    let model = load_any(&a.model)?;
    let data = load_data(&a.data)?;
    let workers = Workers(a.workers.workers);
    let counts = match model {
        AnyModel::FullPrecision(m) => class_counts(&m.params, &require_head(m.head, &a.model)?, &data, workers)?,
        AnyModel::Quantized(m) => class_counts(&m.params, &require_head(m.head, &a.model)?, &data, workers)?,
    };
    let (hit, total) = counts.iter().fold((0, 0), |(h, t), c| (h + c.0, t + c.1));
    println!("accuracy={:.6}", hit as f64 / total as f64);
    if let Some(p) = &a.per_class {
        let mut csv = String::from("class,correct,total,accuracy\n");
        for (c, (h, t)) in counts.iter().enumerate() {
            let acc = if *t == 0 { "NA".to_string() } else { format!("{:.6}", *h as f64 / *t as f64) };
            let _ = writeln!(csv, "{c},{h},{t},{acc}");
        }
        write_text(p, &csv)?;
    }
    Ok(())
}

/// One `X=` or `B=` term of `--slice`: `n:k`, or a bare exponent whose level
/// count is read off the evaluated configs.
fn slice_setting(value: &str, group: Group, seen: &[ScalingConfig]) -> Result<GroupConfig> {
    if value.contains(':') {
        return value.parse();
    }
    let k: i32 = value
        .parse()
        .map_err(|_| Error::Config(format!("slice value `{value}` is neither `n:k` nor an exponent")))?;
    let mut levels: Vec<u32> =
        seen.iter().map(|c| c.get(group)).filter(|g| g.alpha_exp == k).map(|g| g.levels).collect();
    levels.sort_unstable();
    levels.dedup();
    match levels.as_slice() {
        [n] => Ok(GroupConfig::new(*n, k)),
        [] => Err(Error::Validation(format!("no evaluated config has {}.alpha_exp = {k}", group.key()))),
        _ => Err(Error::Config(format!(
            "{}.alpha_exp = {k} occurs at several level counts; use `n:k`",
            group.key()
        ))),
    }
}

fn parse_slice(text: &str, seen: &[ScalingConfig]) -> Result<(GroupConfig, GroupConfig)> {
    let (mut x, mut b) = (None, None);
    for term in text.split(',') {
        let (k, v) = term
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("slice term `{term}` is not GROUP=VALUE")))?;
        match k.trim().parse::<Group>()? {
            Group::X => x = Some(slice_setting(v.trim(), Group::X, seen)?),
            Group::B => b = Some(slice_setting(v.trim(), Group::B, seen)?),
            other => return Err(Error::Config(format!("slices fix X and B, not `{}`", other.key()))),
        }
    }
    match (x, b) {
        (Some(x), Some(b)) => Ok((x, b)),
        _ => Err(Error::Config("slice needs both X and B".into())),
    }
}

pub fn explore(a: ExploreArgs) -> Result<()> {
    let mut inputs = vec![a.model.as_path(), a.data.as_path()];
    inputs.extend(a.spec.as_deref());
    for out in [&a.out, &a.best, &a.slice_out].into_iter().flatten() {
        require_output(out, &inputs)?;
    }
    if let Some(p) = &a.spec {
        require_input(p)?;
    }
    let model = load_fp(&a.model)?;
    let head = require_head(model.head, &a.model)?;
    let data = load_data(&a.data)?;
    let base = match a.suggest_levels.as_slice() {
        [] => None,
        levels => Some(ExplorationSpec::suggested(&model.params, &calibration(&data), [levels; 4])?),
    };
    let kv = key_values(a.spec.as_deref(), &a.sets)?;
    let spec = ExplorationSpec::from_kv(&kv, base.as_ref())?;
    let result = run_explore(&model.params, &head, &data, &spec, Workers(a.workers.workers))?;
    let (best, best_acc) = result.best;
    println!("evaluated={}", result.evaluations);
    println!("best {best} accuracy={best_acc:.6}");
    if let Some(p) = &a.out {
        write_text(p, &result.to_csv())?;
    }
    if let Some(p) = &a.best {
        write_text(p, &best.to_kv().to_text())?;
    }
    if let Some(s) = &a.slice {
        let seen: Vec<ScalingConfig> = result.evaluated.iter().map(|e| e.0).collect();
        let (x, b) = parse_slice(s, &seen)?;
        let table = grid_slice(&result, x, b)?;
        match &a.slice_out {
            Some(p) => write_text(p, &table.to_csv())?,
            None => print!("{}", table.to_csv()),
        }
    }
    Ok(())
}

pub fn cost(a: CostArgs) -> Result<()> {
    let inputs: Vec<&Path> = a.constants.iter().map(PathBuf::as_path).collect();
    if let Some(p) = &a.out {
        require_output(p, &inputs)?;
    }
    let gc = match &a.constants {
        Some(p) => {
            require_input(p)?;
            GateCostParams::from_kv(&KeyValues::parse(&read_text(p)?)?)?
        }
        None => GateCostParams::default(),
    };
    let norm: Normalization = a.normalize.parse()?;
    let scope = if a.multiplier_only { DelayScope::MultiplierOnly } else { DelayScope::MultiplierAndAccumulator };
    let reports = match a.grid.as_deref() {
        Some(g) => {
            let (m, n) = parse_pair(&g.replace(',', ":"))?;
            cost_grid(m, n, a.k, &gc)?
        }
        None => TABLE_CONFIGS.iter().map(|&(m, n)| mac_cost(m, n, a.k, &gc)).collect::<Result<Vec<_>>>()?,
    };
    emit(a.out.as_deref(), &cost_csv(&reports, norm, scope, &gc)?)
}

fn parse_pair(s: &str) -> Result<(u32, u32)> {
    let bad = || Error::Config(format!("pair `{s}` is not `m:n`"));
    let (m, n) = s.split_once(':').ok_or_else(bad)?;
    Ok((m.trim().parse().map_err(|_| bad())?, n.trim().parse().map_err(|_| bad())?))
}

pub fn compare(a: CompareArgs) -> Result<()> {
    let mut inputs = vec![a.model.as_path(), a.data.as_path()];
    inputs.extend(a.tune_data.as_deref());
    if let Some(p) = &a.out {
        require_output(p, &inputs)?;
    }
    let pairs = a.pairs.iter().map(|s| parse_pair(s)).collect::<Result<Vec<_>>>()?;
    let model = load_fp(&a.model)?;
    let head = require_head(model.head, &a.model)?;
    let data = load_data(&a.data)?;
    let tune = a.tune_data.as_deref().map(load_data).transpose()?;
    let workers = Workers(a.workers.workers);
    let p = &model.params;
    let calib_source = tune.as_ref().unwrap_or(&data);
    let calib = calibration(calib_source);
    let fp = evaluate_accuracy(p, &head, &data, workers)?;
    let mut csv = String::from("input_levels,weight_levels,full_precision,fixed_point,multi_level,multi_level_config\n");
    for (m, n) in pairs {
        let fixed = FixedPointLstm::calibrated(p, &calib, m, n)?;
        let fx = evaluate_accuracy(&fixed, &head, &data, workers)?;
        let cfg = match &tune {
            Some(t) => tune_config(p, &head, t, m, n, a.radius, workers)?.0,
            None => calibrate_config(p, &calib, m, n)?,
        };
        let ml = evaluate_accuracy(&quantize_lstm(p, &cfg)?, &head, &data, workers)?;
        let _ = writeln!(csv, "{m},{n},{fp:.6},{fx:.6},{ml:.6},{cfg}");
    }
    emit(a.out.as_deref(), &csv)
}
