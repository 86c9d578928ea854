use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use rayon::prelude::*;

use amod_core::config::{self, Resolved, RunConfig};
use amod_core::env::{Scenario, FEATURES};
use amod_core::eval::{
    evaluate, sweep_granularity, write_results_csv, write_sweep_csv, write_sweep_runs_csv, write_sweep_svg,
    BaselinePolicy, EvalError, LearnedPolicy, OracleError, SweepRow,
};
use amod_core::gnn::{BackboneConfig, BackboneKind};
use amod_core::gradcheck::{self, CheckResult};
use amod_core::policy::{PolicyError, PolicyNets};
use amod_core::streams;
use amod_core::tapegrad::checkpoint;
use amod_core::tapegrad::{TapeError, Tensor};
use amod_core::train::{
    average_runs, compare_backbones, load_params, stored_structure, write_log_row, Comparison, TrainError, Trainer,
    TRAINING_LOG_HEADER,
};

use crate::{Common, EvalArgs, Failure, GradcheckArgs, Scope, SweepArgs, TrainArgs};

type Overrides = Vec<(String, String)>;

fn config_err(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Config(e.into())
}

fn other(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Other(e.into())
}

fn policy_failure(e: PolicyError) -> Failure {
    match e {
        PolicyError::NonFinite { .. } | PolicyError::Tape(TapeError::NonFinite { .. }) => Failure::Numeric(e.into()),
        PolicyError::Config(_) | PolicyError::Load(_) => config_err(e),
        e => other(e),
    }
}

fn eval_failure(e: EvalError) -> Failure {
    match e {
        EvalError::Oracle(OracleError::TooLarge { .. }) => config_err(e),
        EvalError::Oracle(e) => other(e),
        EvalError::Policy(e) => policy_failure(e),
    }
}

fn resolve(common: &Common, mut shortcuts: Overrides, overrides: Overrides) -> Result<Resolved, Failure> {
    if let Some(seed) = common.seed {
        shortcuts.push(("seeds".into(), format!("[{seed}]")));
    }
    if let Some(b) = &common.backbone {
        shortcuts.push(("backbone.backbone".into(), serde_json::to_string(b).map_err(other)?));
    }
    shortcuts.extend(overrides);
    Ok(config::load(&common.config, &shortcuts)?)
}

fn output_dir(common: &Common, run: &RunConfig) -> Result<PathBuf, Failure> {
    let dir = common
        .out
        .clone()
        .or_else(|| run.output_dir.clone())
        .or_else(|| std::env::var_os("AMOD_OUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display())).map_err(config_err)?;
    Ok(dir)
}

fn echo(dir: &Path, resolved: &Resolved) -> Result<(), Failure> {
    let json = serde_json::to_string_pretty(resolved).map_err(other)?;
    fs::write(dir.join("config.json"), format!("{json}\n")).map_err(other)?;
    log::info!("config {}", serde_json::to_string(resolved).map_err(other)?);
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .with_context(|| format!("creating {}", path.display()))
        .map_err(other)
}

fn build(resolved: &Resolved) -> Result<Scenario, Failure> {
    resolved.scenario.build().map_err(config_err)
}

pub fn train(a: &TrainArgs, overrides: Overrides) -> Result<(), Failure> {
    let shortcuts = a.episodes.map(|e| ("train.episodes".to_string(), e.to_string())).into_iter().collect();
    let resolved = resolve(&a.common, shortcuts, overrides)?;
    let dir = output_dir(&a.common, &resolved.run)?;
    echo(&dir, &resolved)?;
    if a.resume.is_some() && resolved.run.seeds.len() != 1 {
        return Err(config_err(anyhow!("--resume needs exactly one seed")));
    }
    let scenario = build(&resolved)?;
    let results: Vec<Result<String, Failure>> = resolved
        .run
        .seeds
        .par_iter()
        .map(|&seed| train_seed(a, &resolved.run, &scenario, seed, &dir))
        .collect();
    for r in results {
        println!("{}", r?);
    }
    Ok(())
}

fn train_seed(a: &TrainArgs, run: &RunConfig, scenario: &Scenario, seed: u64, dir: &Path) -> Result<String, Failure> {
    let dir = dir.join(format!("seed-{seed}"));
    fs::create_dir_all(&dir).map_err(other)?;
    let mut trainer = Trainer::<f64>::new(scenario.clone(), &run.backbone, run.train.clone(), seed).map_err(|e| match e {
        TrainError::Policy(p) => policy_failure(p),
        e => config_err(e),
    })?;
    if let Some(path) = &a.resume {
        trainer
            .resume(path)
            .with_context(|| format!("resuming from {}", path.display()))
            .map_err(config_err)?;
    }
    let log_path = dir.join("training_log.csv");
    let mut log = open_log(&log_path, trainer.episode)?;
    let ckpt = dir.join("checkpoint.bin");
    let mut last = None;
    while trainer.episode < trainer.config.episodes {
        if a.inject_nan_at == Some(trainer.episode) {
            trainer.nets.store.values_mut()[0].data_mut()[0] = f64::NAN;
        }
        match trainer.train_episode() {
            Ok(entry) => {
                write_log_row(&mut log, &entry).map_err(other)?;
                last = Some(entry.metrics.total_reward);
            }
            Err(e @ (PolicyError::NonFinite { .. } | PolicyError::Tape(TapeError::NonFinite { .. }))) => {
                log.flush().map_err(other)?;
                let dump = dir.join("nan_dump.bin");
                trainer.save(&dump).map_err(other)?;
                return Err(Failure::Numeric(anyhow!(
                    "{e} at episode {} (seed {seed}); state dumped to {}",
                    trainer.episode,
                    dump.display()
                )));
            }
            Err(e) => return Err(policy_failure(e)),
        }
        if trainer.episode % run.checkpoint_every == 0 {
            trainer.save(&ckpt).map_err(other)?;
        }
    }
    trainer.save(&ckpt).map_err(other)?;
    log.flush().map_err(other)?;
    let last = last.map_or("-".to_string(), |r| format!("{r:.3}"));
    Ok(format!(
        "seed {seed}: {} episodes, last reward {last}, checkpoint {}",
        trainer.episode,
        ckpt.display()
    ))
}

/// Opens the training log, keeping only rows before `episode` when resuming.
fn open_log(path: &Path, episode: u64) -> Result<BufWriter<File>, Failure> {
    let kept: Vec<String> = if episode > 0 && path.exists() {
        fs::read_to_string(path)
            .map_err(other)?
            .lines()
            .skip(1)
            .filter(|l| l.split(',').next().and_then(|e| e.parse::<u64>().ok()).is_some_and(|e| e < episode))
            .map(str::to_string)
            .collect()
    } else {
        Vec::new()
    };
    let mut out = create(path)?;
    writeln!(out, "{TRAINING_LOG_HEADER}").map_err(other)?;
    for line in kept {
        writeln!(out, "{line}").map_err(other)?;
    }
    Ok(out)
}

fn load_nets(run: &RunConfig, path: &Path) -> Result<(PolicyNets<f64>, Option<Tensor<f64>>), Failure> {
    let entries = checkpoint::load(path)
        .with_context(|| format!("loading {}", path.display()))
        .map_err(config_err)?;
    let mut rng = streams::stream(run.seeds[0], streams::INIT, &[]);
    let mut nets = PolicyNets::new(&run.backbone, FEATURES, run.train.kappa, &mut rng);
    load_params(&mut nets, &entries)
        .with_context(|| format!("{} does not fit backbone {}", path.display(), run.backbone.backbone))
        .map_err(config_err)?;
    Ok((nets, stored_structure(&entries)))
}

pub fn eval(a: &EvalArgs, overrides: Overrides) -> Result<(), Failure> {
    let shortcuts = a.episodes.map(|e| ("eval.episodes".to_string(), e.to_string())).into_iter().collect();
    let resolved = resolve(&a.common, shortcuts, overrides)?;
    let run = &resolved.run;
    let dir = output_dir(&a.common, run)?;
    echo(&dir, &resolved)?;
    let sc = match a.k {
        Some(k) => resolved.scenario.with_granularity(k).and_then(|c| c.build()).map_err(config_err)?,
        None => build(&resolved)?,
    };
    let oracle = (a.oracle || run.eval.oracle).then_some(run.eval.oracle_resolution);
    let (episodes, seeds) = (run.eval.episodes, &run.seeds);

    let mut rows = Vec::new();
    let mut chosen = None;
    if let Some(name) = &a.baseline {
        let b = BaselinePolicy::parse(name).ok_or_else(|| {
            config_err(anyhow!(
                "unknown baseline {name:?} (expected no_rebalance, uniform_distribution or random_dirichlet)"
            ))
        })?;
        chosen = Some(b);
        rows.push(evaluate(&sc, &b, "none", episodes, seeds, oracle).map_err(eval_failure)?);
    } else if let Some(path) = &a.checkpoint {
        let (nets, structure) = load_nets(run, path)?;
        let mut policy = LearnedPolicy::new(&nets, &sc, structure.as_ref()).map_err(policy_failure)?;
        policy.stochastic = a.stochastic || run.eval.stochastic;
        let backbone = run.backbone.backbone.to_string();
        rows.push(evaluate(&sc, &policy, &backbone, episodes, seeds, oracle).map_err(eval_failure)?);
    }
    if a.with_baselines {
        for b in BaselinePolicy::ALL.into_iter().filter(|b| Some(*b) != chosen) {
            rows.push(evaluate(&sc, &b, "none", episodes, seeds, oracle).map_err(eval_failure)?);
        }
    }

    let path = dir.join("results.csv");
    let mut out = create(&path)?;
    write_results_csv(&mut out, &rows).map_err(other)?;
    out.flush().map_err(other)?;
    print!("{}", fs::read_to_string(&path).map_err(other)?);
    Ok(())
}

pub fn sweep(a: &SweepArgs, overrides: Overrides) -> Result<(), Failure> {
    let shortcuts = a.episodes.map(|e| ("train.episodes".to_string(), e.to_string())).into_iter().collect();
    let resolved = resolve(&a.common, shortcuts, overrides)?;
    let run = &resolved.run;
    let ks = a.k.clone().unwrap_or_else(|| run.eval.k_list.clone());
    if ks.is_empty() || ks.contains(&0) {
        return Err(config_err(anyhow!("--k: granularities must be at least 1")));
    }
    let dir = output_dir(&a.common, run)?;
    echo(&dir, &resolved)?;

    let rows: Vec<SweepRow> = if let Some(path) = &a.checkpoint {
        let (nets, structure) = load_nets(run, path)?;
        sweep_granularity(
            &nets,
            structure.as_ref(),
            &resolved.scenario,
            &ks,
            run.eval.episodes,
            &run.seeds,
            run.eval.stochastic,
        )
        .map_err(eval_failure)?
    } else {
        let kinds: Vec<BackboneKind> = match &a.backbones {
            Some(names) => names
                .iter()
                .map(|n| n.parse::<BackboneKind>())
                .collect::<Result<_, _>>()
                .map_err(|e| config_err(anyhow!("--backbones: {e}")))?,
            None => BackboneKind::ALL.to_vec(),
        };
        let configs: Vec<BackboneConfig> = kinds
            .into_iter()
            .map(|backbone| BackboneConfig {
                backbone,
                ..run.backbone.clone()
            })
            .collect();
        let cmp = Comparison {
            scenario: &resolved.scenario,
            train: &run.train,
            seeds: &run.seeds,
            ks: &ks,
            eval_episodes: run.eval.episodes,
            eval_seeds: &run.seeds,
        };
        let runs = compare_backbones::<f64>(&cmp, &configs).map_err(eval_failure)?;
        let mut out = create(&dir.join("sweep_runs.csv"))?;
        write_sweep_runs_csv(&mut out, runs.iter().map(|r| (r.seed, r.rows.as_slice()))).map_err(other)?;
        out.flush().map_err(other)?;
        average_runs(&runs)
    };

    let csv = dir.join("sweep.csv");
    let mut out = create(&csv)?;
    write_sweep_csv(&mut out, &rows).map_err(other)?;
    out.flush().map_err(other)?;
    let mut svg = create(&dir.join("sweep.svg"))?;
    write_sweep_svg(&mut svg, &rows).map_err(other)?;
    svg.flush().map_err(other)?;
    print!("{}", fs::read_to_string(&csv).map_err(other)?);
    Ok(())
}

pub fn gradcheck(a: &GradcheckArgs) -> Result<(), Failure> {
    let (ops, backbones, policy) = match a.scope {
        Scope::Ops => (true, false, false),
        Scope::Backbones => (false, true, false),
        Scope::Policy => (false, false, true),
        Scope::All => (true, true, true),
    };
    let mut results: Vec<CheckResult> = Vec::new();
    if ops {
        results.extend(gradcheck::ops_suite(a.seed).map_err(other)?);
        if a.inject_fault {
            results.push(gradcheck::faulty_square_check().map_err(other)?);
        }
    }
    if backbones {
        results.extend(gradcheck::backbones_suite(a.seed).map_err(other)?);
    }
    if policy {
        results.extend(gradcheck::policy_suite(a.seed).map_err(other)?);
    }

    for r in &results {
        let status = if r.passed() { "PASS" } else { "FAIL" };
        println!("{status} {:<10} {:<40} max_rel_err {:.3e}", r.component, r.name, r.max_rel_error);
    }
    let mut components: Vec<&str> = Vec::new();
    for r in &results {
        if !components.contains(&r.component) {
            components.push(r.component);
        }
    }
    for c in components {
        let worst = results
            .iter()
            .filter(|r| r.component == c)
            .max_by(|x, y| x.max_rel_error.total_cmp(&y.max_rel_error))
            .expect("component has results");
        println!("worst {c}: {:.3e} ({})", worst.max_rel_error, worst.name);
    }
    let failed = results.iter().filter(|r| !r.passed()).count();
    if failed > 0 {
        return Err(Failure::Checks(failed));
    }
    Ok(())
}
