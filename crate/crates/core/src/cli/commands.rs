use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::Serialize;

use super::config::{
    BatchSpec, DatasetSpec, EvalAlgorithm, ExperimentConfig, NetworkSpec, ProfileSpec, SweepSpec, TheorySpec,
    TrainSpec,
};
use super::{Artifacts, CliError, CliResult};
use crate::export::{fmt_f64, Csv};
use crate::gradients::{
    gradient_angle, horizon_gradient_from, memory_estimate, memory_estimate_grouped, rescaled_deviation,
    BlockGrouping, MemoryMode, MemoryModel,
};
use crate::lintheory::{lemma_bounds_check, scaling_experiment, LinearChain};
use crate::network::{default_weight_std, forward, Batch, Network};
use crate::numerics::{derive_seed, polyfit, SeededRng, RNG_ID};
use crate::selection::{
    brute_force_select, build_profile, default_horizons, relative_performance, select_horizon, CostFn,
    HorizonProfile, Objective, SelectionReport,
};
use crate::trainer::{
    gen_linear_dataset, gen_trig_dataset_with_noise, train_sgd, train_sgd_with, whiten, Algorithm, Dataset,
    RunStatus, TrainConfig, TrainRecord, TRIG_NOISE_STD,
};
use crate::Error;

// Stream indices under the run seed.
const NETWORK_STREAM: u64 = 1;
const DATASET_STREAM: u64 = 2;
const BATCH_STREAM: u64 = 3;
const THEORY_SEED_STREAM: u64 = 100;
const LEMMA_STREAM: u64 = 1000;

pub struct Context<'a> {
    pub cfg: &'a ExperimentConfig,
    pub base: PathBuf,
}

impl Context<'_> {
    fn seed(&self) -> u64 {
        self.cfg.seed
    }

    fn path(&self, p: &str) -> PathBuf {
        let p = PathBuf::from(p);
        if p.is_absolute() {
            p
        } else {
            self.base.join(p)
        }
    }

    fn read(&self, p: &str) -> CliResult<String> {
        let path = self.path(p);
        std::fs::read_to_string(&path).map_err(|e| CliError::Io(format!("reading {}: {e}", path.display())))
    }

    fn network(&self) -> CliResult<Network> {
        let spec = self
            .cfg
            .network
            .as_ref()
            .ok_or_else(|| missing("network"))?;
        let mut rng = SeededRng::new(derive_seed(self.seed(), NETWORK_STREAM));
        let net = match spec {
            NetworkSpec::ResMlp {
                input_dim,
                width,
                output_dim,
                depth,
                weight_std,
            } => Network::res_mlp(
                *input_dim,
                *width,
                *output_dim,
                *depth,
                weight_std.unwrap_or(default_weight_std(*width)),
                &mut rng,
            )?,
            NetworkSpec::ResLinear { width, depth, weight_std } => {
                Network::res_linear(*width, *depth, weight_std.unwrap_or(default_weight_std(*width)), &mut rng)?
            }
            NetworkSpec::MlpResidualStack { width, depth, weight_std } => {
                Network::mlp_residual_stack(*width, *depth, weight_std.unwrap_or(default_weight_std(*width)), &mut rng)?
            }
            NetworkSpec::PerturbedIdentity { n, depth, c } => {
                let chain = LinearChain::perturbed_identity(*n, *depth, *c, &mut rng)?;
                Network::linear_chain(chain.weights())?
            }
            NetworkSpec::File { path } => Network::from_json(&self.read(path)?)?,
        };
        Ok(net)
    }

    fn dataset(&self) -> CliResult<Dataset> {
        let spec = self
            .cfg
            .dataset
            .as_ref()
            .ok_or_else(|| missing("dataset"))?;
        let derived = derive_seed(self.seed(), DATASET_STREAM);
        let data = match spec {
            DatasetSpec::Linear { n, samples, seed, whiten: w } => {
                let d = gen_linear_dataset(*n, *samples, seed.unwrap_or(derived))?;
                if *w {
                    whiten(&d)?
                } else {
                    d
                }
            }
            DatasetSpec::Trig {
                samples,
                width,
                seed,
                noise_std,
                whiten: w,
            } => {
                let d = gen_trig_dataset_with_noise(
                    *samples,
                    *width,
                    noise_std.unwrap_or(TRIG_NOISE_STD),
                    seed.unwrap_or(derived),
                )?;
                if *w {
                    whiten(&d)?
                } else {
                    d
                }
            }
            DatasetSpec::File { path } => Dataset::from_json(&self.read(path)?)?,
        };
        Ok(data)
    }

    fn train_spec(&self) -> CliResult<&TrainSpec> {
        self.cfg.train.as_ref().ok_or_else(|| missing("train"))
    }

    fn train_config(&self, depth: usize, algorithm: Option<Algorithm>, epochs: Option<usize>) -> CliResult<TrainConfig> {
        let spec = self.train_spec()?;
        let algorithm = algorithm
            .or(spec.algorithm)
            .unwrap_or(Algorithm::Mpc { horizon: depth });
        let mut cfg = TrainConfig::new(
            algorithm,
            spec.learning_rate,
            spec.batch_size,
            epochs.unwrap_or(spec.epochs),
            self.seed(),
        );
        if let Some(d) = spec.lr_decay {
            cfg.lr_decay = d;
        }
        cfg.validate(depth).map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }
}

fn missing(section: &str) -> CliError {
    CliError::Config(format!("config has no `{section}` section"))
}

fn json<T: Serialize>(value: &T) -> CliResult<String> {
    serde_json::to_string_pretty(value)
        .map(|s| s + "\n")
        .map_err(|e| CliError::Runtime(e.into()))
}

/// Disjoint batches drawn from one seeded permutation of the dataset.
fn sample_batches(data: &Dataset, spec: &BatchSpec, seed: u64) -> CliResult<Vec<(Batch, Batch)>> {
    if spec.batches == 0 || spec.batch_size == 0 {
        return Err(CliError::Config("batch count and size must be positive".into()));
    }
    let need = spec.batches * spec.batch_size;
    if need > data.len() {
        return Err(CliError::Config(format!(
            "{need} samples requested for batches but the dataset has {}",
            data.len()
        )));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    SeededRng::new(derive_seed(seed, BATCH_STREAM)).shuffle(&mut order);
    Ok(order[..need].chunks(spec.batch_size).map(|c| data.batch(c)).collect())
}

pub fn gen_data(ctx: &Context) -> CliResult<Artifacts> {
    let data = ctx.dataset()?;
    let mut arts = Artifacts::default();
    arts.add("dataset.json", data.to_json()?);
    println!("dataset: {} samples, hash {}", data.len(), data.content_hash()?);
    Ok(arts)
}

#[derive(Serialize)]
struct RunInfo {
    algorithm: String,
    config: TrainConfig,
    status: RunStatus,
    initial_loss: f64,
    final_loss: f64,
    seed: u64,
    rng: &'static str,
    dataset_hash: String,
    initial_network_hash: String,
}

fn run_info(record: &TrainRecord, seed: u64, data: &Dataset, init: &Network) -> CliResult<RunInfo> {
    Ok(RunInfo {
        algorithm: record.config.algorithm.label(),
        config: record.config.clone(),
        status: record.status,
        initial_loss: record.initial_loss(),
        final_loss: record.final_loss(),
        seed,
        rng: RNG_ID,
        dataset_hash: data.content_hash()?,
        initial_network_hash: crate::export::sha256_hex(init.to_json()?.as_bytes()),
    })
}

pub fn train(ctx: &Context) -> CliResult<Artifacts> {
    let init = ctx.network()?;
    let data = ctx.dataset()?;
    let cfg = ctx.train_config(init.depth(), None, None)?;
    let mut net = init.clone();
    let record = train_sgd(&mut net, &data, &cfg)?;
    let mut arts = Artifacts::default();
    arts.add("train.csv", record.to_csv());
    arts.add("run.json", json(&run_info(&record, ctx.seed(), &data, &init)?)?);
    match record.status {
        RunStatus::Completed => arts.add("network.json", net.to_json()?),
        RunStatus::Diverged { .. } => arts.mark_diverged(),
    }
    println!(
        "{}: J0={} final={} status={:?}",
        cfg.algorithm.label(),
        fmt_f64(record.initial_loss()),
        fmt_f64(record.final_loss()),
        record.status
    );
    Ok(arts)
}

struct SweepRow {
    epoch: usize,
    h: usize,
    cos: f64,
    deviation: f64,
    used: usize,
}

fn measure_sweep(net: &Network, batches: &[(Batch, Batch)], horizons: &[usize], epoch: usize) -> crate::Result<Vec<SweepRow>> {
    let depth = net.depth();
    let mut cos = vec![0.0; horizons.len()];
    let mut dev = vec![0.0; horizons.len()];
    let mut used = 0;
    'batches: for (x, y) in batches {
        let acts = forward(net, x)?;
        let gt = horizon_gradient_from(net, &acts, y, depth)?;
        let mut c_row = Vec::with_capacity(horizons.len());
        let mut d_row = Vec::with_capacity(horizons.len());
        for &h in horizons {
            let gh = horizon_gradient_from(net, &acts, y, h)?;
            match (gradient_angle(&gh, &gt), rescaled_deviation(&gh, &gt)) {
                (Ok(c), Ok(d)) => {
                    c_row.push(c);
                    d_row.push(d);
                }
                (Err(Error::Degenerate(_)), _) | (_, Err(Error::Degenerate(_))) => continue 'batches,
                (Err(e), _) | (_, Err(e)) => return Err(e),
            }
        }
        used += 1;
        for i in 0..horizons.len() {
            cos[i] += c_row[i];
            dev[i] += d_row[i];
        }
    }
    if used == 0 {
        return Err(Error::Degenerate(format!("every sweep batch is degenerate at epoch {epoch}")));
    }
    Ok(horizons
        .iter()
        .enumerate()
        .map(|(i, &h)| SweepRow {
            epoch,
            h,
            cos: cos[i] / used as f64,
            deviation: dev[i] / used as f64,
            used,
        })
        .collect())
}

pub fn sweep_gradients(ctx: &Context) -> CliResult<Artifacts> {
    let spec: &SweepSpec = ctx.cfg.sweep.as_ref().ok_or_else(|| missing("sweep"))?;
    let mut net = ctx.network()?;
    let data = ctx.dataset()?;
    let depth = net.depth();
    let horizons = spec.horizons.clone().unwrap_or_else(|| default_horizons(depth));
    if let Some(&h) = horizons.iter().find(|&&h| h == 0 || h > depth) {
        return Err(CliError::Config(format!("sweep horizon {h} outside 1..={depth}")));
    }
    let mut checkpoints = spec.checkpoints.clone().unwrap_or_else(|| vec![0]);
    checkpoints.sort_unstable();
    checkpoints.dedup();
    let batches = sample_batches(
        &data,
        &BatchSpec {
            batches: spec.batches,
            batch_size: spec.batch_size,
        },
        ctx.seed(),
    )?;

    let last = *checkpoints.last().expect("at least one checkpoint");
    let mut rows = Vec::new();
    let mut arts = Artifacts::default();
    if last == 0 {
        rows.extend(measure_sweep(&net, &batches, &horizons, 0)?);
    } else {
        let cfg = ctx.train_config(depth, None, Some(last))?;
        let record = train_sgd_with(&mut net, &data, &cfg, |epoch, n| {
            if checkpoints.binary_search(&epoch).is_ok() {
                rows.extend(measure_sweep(n, &batches, &horizons, epoch)?);
            }
            Ok(())
        })?;
        arts.add("train.csv", record.to_csv());
        if matches!(record.status, RunStatus::Diverged { .. }) {
            arts.mark_diverged();
        }
    }

    let mut csv = Csv::new(&["epoch", "h", "cos_theta", "one_minus_cos", "rescaled_deviation", "batches_used"]);
    for r in &rows {
        csv.row(&[
            r.epoch.to_string(),
            r.h.to_string(),
            fmt_f64(r.cos),
            fmt_f64(1.0 - r.cos),
            fmt_f64(r.deviation),
            r.used.to_string(),
        ]);
    }
    arts.add("sweep.csv", csv.finish());
    println!("sweep: {} rows over {} checkpoint(s)", rows.len(), checkpoints.len());
    Ok(arts)
}

#[derive(Serialize)]
struct MemorySummary {
    mode: MemoryMode,
    depth: usize,
    fit_intercept: f64,
    fit_slope: f64,
    max_fit_residual: f64,
}

pub fn profile_memory(ctx: &Context, mode_flag: Option<MemoryMode>) -> CliResult<Artifacts> {
    let spec = ctx.cfg.memory.clone().ok_or_else(|| missing("memory"))?;
    let modes = match mode_flag.or(spec.mode) {
        Some(m) => vec![m],
        None => vec![MemoryMode::Eager, MemoryMode::Static],
    };
    let net = match (&ctx.cfg.network, spec.uniform_units) {
        (Some(_), _) => Some(ctx.network()?),
        (None, _) => None,
    };
    let depth = match (&net, spec.depth) {
        (Some(n), _) => n.depth(),
        (None, Some(d)) => d,
        (None, None) => return Err(CliError::Config("memory profiling needs a network or `memory.depth`".into())),
    };

    let mut csv = Csv::new(&["mode", "h", "units", "static_leading_term", "fitted_units", "residual"]);
    let mut loco = Csv::new(&["mode", "stages", "units"]);
    let mut summaries = Vec::new();
    for mode in modes {
        let model = match (spec.uniform_units, &net) {
            (Some(u), _) => MemoryModel::uniform(mode, depth, u, spec.fixed_overhead)?,
            (None, Some(n)) => MemoryModel::for_network(mode, n, spec.fixed_overhead)?,
            (None, None) => return Err(CliError::Config("memory profiling needs a network or `memory.uniform_units`".into())),
        };
        let estimates = (1..=depth)
            .map(|h| memory_estimate(&model, h, depth))
            .collect::<crate::Result<Vec<_>>>()?;
        let xs: Vec<f64> = (1..=depth).map(|h| h as f64).collect();
        let ys: Vec<f64> = estimates.iter().map(|e| e.units).collect();
        let fit = if depth >= 2 {
            polyfit(&xs, &ys, 1)?
        } else {
            crate::numerics::PolyModel::new(vec![ys[0], 0.0])?
        };
        let mut worst: f64 = 0.0;
        for (h, e) in (1..=depth).zip(&estimates) {
            let fitted = fit.eval(h as f64);
            let residual = e.units - fitted;
            worst = worst.max(residual.abs());
            csv.row(&[
                mode.to_string(),
                h.to_string(),
                fmt_f64(e.units),
                e.static_leading_term.map(fmt_f64).unwrap_or_default(),
                fmt_f64(fitted),
                fmt_f64(residual),
            ]);
        }
        for &stages in &spec.loco_stages {
            let grouping = BlockGrouping::even(depth, stages)?;
            let e = memory_estimate_grouped(&model, &grouping)?;
            loco.row(&[mode.to_string(), stages.to_string(), fmt_f64(e.units)]);
        }
        println!("{mode}: order-1 fit max residual {}", fmt_f64(worst));
        summaries.push(MemorySummary {
            mode,
            depth,
            fit_intercept: fit.coefficients()[0],
            fit_slope: fit.coefficients()[1],
            max_fit_residual: worst,
        });
    }
    let mut arts = Artifacts::default();
    arts.add("memory.csv", csv.finish());
    if !spec.loco_stages.is_empty() {
        arts.add("memory_loco.csv", loco.finish());
    }
    arts.add("memory_summary.json", json(&summaries)?);
    Ok(arts)
}

fn planted_profile(depth: usize, k: f64, a: f64, b: f64, horizons: Option<&Vec<usize>>) -> CliResult<HorizonProfile> {
    if !(0.0..=1.0).contains(&k) {
        return Err(CliError::Config("planted k must lie in [0, 1]".into()));
    }
    let hs = horizons.cloned().unwrap_or_else(|| default_horizons(depth));
    let cos = hs
        .iter()
        .map(|&h| (h, (1.0 - k * (1.0 - h as f64 / depth as f64).powi(3)).sqrt()))
        .collect();
    let mem = hs.iter().map(|&h| (h, a * h as f64 + b)).collect();
    Ok(HorizonProfile::from_measurements(depth, cos, mem)?)
}

fn measured_profile(
    net: &Network,
    data: &Dataset,
    horizons: Option<&Vec<usize>>,
    batches: &BatchSpec,
    mode: MemoryMode,
    fixed_overhead: f64,
    seed: u64,
) -> CliResult<HorizonProfile> {
    let hs = horizons.cloned().unwrap_or_else(|| default_horizons(net.depth()));
    let sample = sample_batches(data, batches, seed)?;
    let model = MemoryModel::for_network(mode, net, fixed_overhead)?;
    Ok(build_profile(net, &sample, &hs, &model)?)
}

fn checked_cost(cost: &CostFn) -> CliResult<CostFn> {
    CostFn::new(cost.kind, cost.unit_cost, cost.node_memory).map_err(|e| CliError::Config(e.to_string()))
}

fn checked_objective(obj: &Objective) -> CliResult<Objective> {
    obj.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(*obj)
}

pub fn select(ctx: &Context, brute_force: bool) -> CliResult<Artifacts> {
    let spec = ctx.cfg.selection.as_ref().ok_or_else(|| missing("selection"))?;
    let objective = checked_objective(&spec.objective)?;
    let cost = checked_cost(&spec.cost)?;
    let profile = match &spec.profile {
        ProfileSpec::Planted {
            depth,
            k,
            a,
            b,
            horizons,
        } => planted_profile(*depth, *k, *a, *b, horizons.as_ref())?,
        ProfileSpec::Measured {
            horizons,
            batches,
            batch_size,
            memory_mode,
            fixed_overhead,
        } => measured_profile(
            &ctx.network()?,
            &ctx.dataset()?,
            horizons.as_ref(),
            &BatchSpec {
                batches: *batches,
                batch_size: *batch_size,
            },
            memory_mode.unwrap_or(MemoryMode::Eager),
            *fixed_overhead,
            ctx.seed(),
        )?,
    };
    let selection = if brute_force {
        brute_force_select(&profile, &objective, &cost)?
    } else {
        select_horizon(&profile, &objective, &cost)?
    };
    let report = SelectionReport::new(&profile, objective, cost, &selection, brute_force);
    let mut arts = Artifacts::default();
    arts.add("profile.csv", profile.to_csv(&objective, &cost)?);
    arts.add("selection.json", json(&report)?);
    match selection.horizon {
        Some(h) => println!("selected h*={h} ({})", objective.name()),
        None => println!("infeasible: no horizon satisfies the accuracy constraint"),
    }
    Ok(arts)
}

#[derive(Serialize)]
struct EvalRow {
    algorithm: String,
    horizon: Option<usize>,
    final_loss: Option<f64>,
    loss_rate: Option<f64>,
    memory: Option<f64>,
    cost: Option<f64>,
    objective_value: Option<f64>,
    feasible: bool,
    relative_performance: f64,
}

pub fn evaluate(ctx: &Context) -> CliResult<Artifacts> {
    let spec = ctx.cfg.evaluate.as_ref().ok_or_else(|| missing("evaluate"))?;
    let objective = checked_objective(&spec.objective)?;
    let cost = checked_cost(&spec.cost)?;
    let init = ctx.network()?;
    let data = ctx.dataset()?;
    let depth = init.depth();
    let mode = spec.memory_mode.unwrap_or(MemoryMode::Eager);
    let model = MemoryModel::for_network(mode, &init, spec.fixed_overhead)?;
    let mut arts = Artifacts::default();

    // resolve every entry to a concrete algorithm, or to an infeasible selection
    let bp = Algorithm::Mpc { horizon: depth };
    let mut plan: BTreeMap<String, Option<Algorithm>> = BTreeMap::new();
    plan.insert(bp.label(), Some(bp));
    for entry in &spec.algorithms {
        match *entry {
            EvalAlgorithm::Mpc { horizon } => {
                let a = Algorithm::Mpc { horizon };
                plan.insert(a.label(), Some(a));
            }
            EvalAlgorithm::Loco { stages } => {
                let a = Algorithm::Loco { stages };
                plan.insert(a.label(), Some(a));
            }
            EvalAlgorithm::Selected => {
                let batches = spec.profile.clone().unwrap_or(BatchSpec {
                    batches: 4,
                    batch_size: ctx.train_spec()?.batch_size,
                });
                let profile = measured_profile(&init, &data, None, &batches, mode, spec.fixed_overhead, ctx.seed())?;
                let sel = select_horizon(&profile, &objective, &cost)?;
                arts.add("selected_profile.csv", profile.to_csv(&objective, &cost)?);
                plan.insert(
                    "selected".to_owned(),
                    sel.horizon.map(|horizon| Algorithm::Mpc { horizon }),
                );
            }
        }
    }
    for a in plan.values().flatten() {
        ctx.train_config(depth, Some(*a), None)?;
    }

    let jobs: Vec<(String, Algorithm)> = plan
        .iter()
        .filter_map(|(k, a)| a.map(|a| (k.clone(), a)))
        .collect();
    let records: Vec<crate::Result<TrainRecord>> = std::thread::scope(|scope| {
        let handles: Vec<_> = jobs
            .iter()
            .map(|(_, a)| {
                let cfg = ctx.train_config(depth, Some(*a), None);
                let (init, data) = (&init, &data);
                scope.spawn(move || {
                    let cfg = cfg.map_err(|e| Error::invalid(e.to_string()))?;
                    let mut net = init.clone();
                    train_sgd(&mut net, data, &cfg)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("training worker panicked"))
            .collect()
    });
    let mut trained: BTreeMap<String, TrainRecord> = BTreeMap::new();
    for ((label, _), rec) in jobs.iter().zip(records) {
        let rec = rec?;
        arts.add(&format!("train_{label}.csv"), rec.to_csv());
        trained.insert(label.clone(), rec);
    }

    let reference = &trained[&bp.label()];
    let reference_ok = reference.status == RunStatus::Completed;
    if !reference_ok {
        arts.mark_diverged();
    }
    let tau = reference.losses.len() - 1;
    let mut rows: Vec<EvalRow> = Vec::new();
    let mut values: BTreeMap<String, Option<f64>> = BTreeMap::new();
    for (label, algo) in &plan {
        let rec = trained.get(label);
        let memory = match algo {
            Some(Algorithm::Mpc { horizon }) => Some(memory_estimate(&model, *horizon, depth)?.units),
            Some(Algorithm::Loco { stages }) => {
                Some(memory_estimate_grouped(&model, &BlockGrouping::even(depth, *stages)?)?.units)
            }
            None => None,
        };
        let c = memory.map(|m| crate::selection::cost_value(&cost, m));
        let rate = match rec {
            Some(r) if reference_ok && r.status == RunStatus::Completed => {
                crate::trainer::loss_rate(r, reference, tau).ok()
            }
            _ => None,
        };
        let value = match (rate, c) {
            (Some(r), Some(c)) => {
                let (v, ok) = objective.evaluate(r, c);
                ok.then_some(v)
            }
            _ => None,
        };
        values.insert(label.clone(), value);
        rows.push(EvalRow {
            algorithm: label.clone(),
            horizon: match algo {
                Some(Algorithm::Mpc { horizon }) => Some(*horizon),
                _ => None,
            },
            final_loss: rec.map(TrainRecord::final_loss),
            loss_rate: rate,
            memory,
            cost: c,
            objective_value: value,
            feasible: value.is_some(),
            relative_performance: 0.0,
        });
    }
    let rel = relative_performance(&values)?;
    let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
    let mut csv = Csv::new(&[
        "algorithm",
        "horizon",
        "final_loss",
        "loss_rate",
        "memory",
        "cost",
        "objective_value",
        "feasible",
        "relative_performance",
    ]);
    for row in &mut rows {
        row.relative_performance = rel[&row.algorithm];
        csv.row(&[
            row.algorithm.clone(),
            row.horizon.map(|h| h.to_string()).unwrap_or_default(),
            opt(row.final_loss),
            opt(row.loss_rate),
            opt(row.memory),
            opt(row.cost),
            opt(row.objective_value),
            row.feasible.to_string(),
            fmt_f64(row.relative_performance),
        ]);
        println!("{}: rel={}", row.algorithm, row.relative_performance);
    }
    arts.add("evaluate.csv", csv.finish());
    Ok(arts)
}

#[derive(Serialize)]
struct TheorySummary {
    slope: f64,
    slope_window: [f64; 2],
    slope_pass: bool,
    lemma_chains: usize,
    lemma_checks: usize,
    lemma_violations: usize,
    lemma_pass: bool,
    pass: bool,
}

pub fn verify_theory(ctx: &Context) -> CliResult<Artifacts> {
    let spec: TheorySpec = ctx.cfg.theory.clone().unwrap_or_default();
    let seeds: Vec<u64> = (0..spec.seeds as u64)
        .map(|i| derive_seed(ctx.seed(), THEORY_SEED_STREAM + i))
        .collect();
    let report = scaling_experiment(spec.n, spec.depth, spec.c, &seeds, &spec.alphas)?;
    let slope_pass = report.slope >= spec.slope_window[0] && report.slope <= spec.slope_window[1];

    let mut lemma = Csv::new(&["chain", "checks", "violations", "worst_ratio"]);
    let (mut checks, mut violations) = (0, 0);
    for i in 0..spec.lemma_chains {
        let root = SeededRng::new(derive_seed(ctx.seed(), LEMMA_STREAM + i as u64));
        let chain = LinearChain::perturbed_identity(spec.n, spec.lemma_depth, spec.c, &mut root.child(0))?;
        let r = lemma_bounds_check(&chain, spec.lemma_samples, &mut root.child(1))?;
        checks += r.checks;
        violations += r.violations.len();
        lemma.row(&[
            i.to_string(),
            r.checks.to_string(),
            r.violations.len().to_string(),
            fmt_f64(r.worst_ratio),
        ]);
    }
    let summary = TheorySummary {
        slope: report.slope,
        slope_window: spec.slope_window,
        slope_pass,
        lemma_chains: spec.lemma_chains,
        lemma_checks: checks,
        lemma_violations: violations,
        lemma_pass: violations == 0,
        pass: slope_pass && violations == 0,
    };
    let verdict = |ok: bool| if ok { "PASS" } else { "FAIL" };
    println!(
        "slope={} window=[{}, {}] {}",
        fmt_f64(report.slope),
        spec.slope_window[0],
        spec.slope_window[1],
        verdict(slope_pass)
    );
    println!("lemma bounds: {violations} violations in {checks} checks {}", verdict(violations == 0));

    let mut arts = Artifacts::default();
    arts.add("scaling.csv", report.to_csv());
    arts.add("lemma.csv", lemma.finish());
    arts.add("theory.json", json(&summary)?);
    Ok(arts)
}
