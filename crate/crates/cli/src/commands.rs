//! Subcommand implementations.

use std::path::{Path, PathBuf};

use hierflow::diagnostics::{
    ecdf_diff_band, elpd_logo, recovery_from_replications, sbc_from_replications,
    simulate_and_sample, write_elpd_report, write_recovery_report, write_sbc_report,
};
use hierflow::generative::io::{read_dataset, write_dataset, DatasetMeta, Truth};
use hierflow::generative::simulate_dataset;
use hierflow::posterior::{dataset_hash, NpeSampler, PosteriorSampler};
use hierflow::rng::{fork_seed, seeded, substream};
use hierflow::zoo::{zoo_entry, MODEL_IDS};
use hierflow::{Checkpoint, Error, Execution, ModelConfig, Result};

use crate::cli::{Cli, Command, LogoArgs, ReportArgs, SampleArgs, SbcArgs, SimulateArgs, TrainArgs};
use crate::config::{
    load, pick, require, resolve_seed, LogoConfig, SampleConfig, SbcConfig, SimulateConfig,
    TrainRunConfig,
};
use crate::run_info::{file_hash, RunInfo};

const DEFAULT_SAMPLE_DRAWS: usize = 1000;
const DEFAULT_SBC_SIMS: usize = 100;
const DEFAULT_SBC_DRAWS: usize = 250;
const DEFAULT_GAMMA: f64 = 0.99;
const DEFAULT_LOGO_DRAWS: usize = 1000;

struct Ctx<'a> {
    argv: &'a [String],
    threads: Option<usize>,
    deterministic: bool,
    exec: Execution,
}

impl Ctx<'_> {
    fn info(&self, command: &str, config: &impl serde::Serialize, seed: Option<u64>) -> RunInfo {
        let mut info = RunInfo::new(command, self.argv, config, seed);
        info.threads = self.threads;
        info.deterministic = self.deterministic;
        info
    }
}

pub fn run(cli: &Cli, argv: &[String]) -> Result<()> {
    let threads = if cli.deterministic { Some(1) } else { cli.threads };
    if let Some(k) = threads {
        if k == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        hierflow::parallel::configure_threads(k)?;
    }
    let ctx = Ctx {
        argv,
        threads,
        deterministic: cli.deterministic,
        exec: if cli.deterministic {
            Execution::Sequential
        } else {
            Execution::Parallel
        },
    };
    match &cli.command {
        Command::Simulate(a) => simulate(&ctx, a),
        Command::Train(a) => train(&ctx, a),
        Command::Sample(a) => sample(&ctx, a),
        Command::Sbc(a) => sbc(&ctx, a),
        Command::Logo(a) => logo(&ctx, a),
        Command::Report(a) => report(&ctx, a),
        Command::Models => models(),
    }
}

fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    Checkpoint::load(dir)
}

fn simulate(ctx: &Ctx, a: &SimulateArgs) -> Result<()> {
    let file: SimulateConfig = load(a.config.as_deref(), "simulate")?;
    let seed = resolve_seed(a.seed, file.seed)?;
    let cfg = SimulateConfig {
        model: pick(a.model.clone(), file.model),
        n: pick(a.n, file.n).or(Some(1)),
        groups: pick(a.groups, file.groups),
        obs: pick(a.obs, file.obs),
        seed: Some(seed),
        out: pick(a.out.clone(), file.out),
    };
    let model = ModelConfig::resolve(&require(cfg.model.clone(), "model")?)?;
    let out = require(cfg.out.clone(), "out")?;
    let n = cfg.n.unwrap_or(1);
    let spec = model.build()?;
    std::fs::create_dir_all(&out)?;
    let sizes = spec.sizes();
    for i in 0..n {
        let mut rng = substream(seed, i as u64);
        let j = match cfg.groups {
            Some(j) => j,
            None => sizes.groups.sample(&mut rng),
        };
        let n_obs = match cfg.obs {
            Some(o) => o,
            None => sizes.obs.sample(&mut rng),
        };
        let item = simulate_dataset(spec.as_ref(), j, n_obs, &mut rng)?;
        let meta = DatasetMeta {
            model: spec.id().into(),
            seed: Some(seed),
            index: Some(i as u64),
            truth: Some(Truth::from_item(&item)),
        };
        write_dataset(&out.join(format!("{i}.json")), &item.dataset, &meta)?;
    }
    let mut info = ctx.info("simulate", &cfg, Some(seed));
    info.input("model", spec.hash());
    info.summary = serde_json::json!({ "model_config": model, "datasets": n });
    info.record_outputs(&out)?;
    info.write(&out)?;
    log::info!("wrote {n} datasets to {}", out.display());
    Ok(())
}

fn train(ctx: &Ctx, a: &TrainArgs) -> Result<()> {
    let file: TrainRunConfig = load(a.config.as_deref(), "train")?;
    let seed = resolve_seed(a.seed, file.seed.or(file.train.as_ref().map(|t| t.seed)))?;
    let mut tc = file.train.unwrap_or_default();
    if let Some(v) = a.budget {
        tc.simulation_budget = v;
    }
    if let Some(v) = a.epochs {
        tc.epochs = v;
    }
    if let Some(v) = a.batch_size {
        tc.batch_size = v;
    }
    if let Some(v) = a.lr {
        tc.learning_rate = v;
    }
    if a.online {
        tc.online = true;
    }
    tc.seed = seed;
    tc.execution = ctx.exec;
    let cfg = TrainRunConfig {
        model: pick(a.model.clone(), file.model),
        seed: Some(seed),
        out: pick(a.out.clone(), file.out),
        train: Some(tc.clone()),
    };
    let model = ModelConfig::resolve(&require(cfg.model.clone(), "model")?)?;
    let out = require(cfg.out.clone(), "out")?;
    let mut info = ctx.info("train", &cfg, Some(seed));
    info.input("model", model.build()?.hash());
    match hierflow::training::train(&model, &tc) {
        Ok(ck) => {
            ck.save(&out)?;
            info.input("checkpoint", ck.fingerprint());
            info.summary = serde_json::json!({
                "model_config": model,
                "initial_loss": ck.initial_loss,
                "final": ck.loss_history.last(),
            });
            info.record_outputs(&out)?;
            info.write(&out)?;
            log::info!("checkpoint written to {}", out.display());
            Ok(())
        }
        Err(Error::Diverged {
            epoch,
            step,
            reason,
            last_good,
        }) => {
            let dir = out.join("last_good");
            last_good.save(&dir)?;
            info.summary = serde_json::json!({
                "model_config": model,
                "diverged": { "epoch": epoch, "step": step, "reason": reason },
            });
            info.record_outputs(&out)?;
            info.write(&out)?;
            log::error!("last good checkpoint saved to {}", dir.display());
            Err(Error::Diverged {
                epoch,
                step,
                reason,
                last_good,
            })
        }
        Err(e) => Err(e),
    }
}

fn sample(ctx: &Ctx, a: &SampleArgs) -> Result<()> {
    let file: SampleConfig = load(a.config.as_deref(), "sample")?;
    let seed = resolve_seed(a.seed, file.seed)?;
    let cfg = SampleConfig {
        checkpoint: pick(a.checkpoint.clone(), file.checkpoint),
        data: pick(a.data.clone(), file.data),
        draws: pick(a.draws, file.draws).or(Some(DEFAULT_SAMPLE_DRAWS)),
        allow_out_of_range: Some(a.allow_out_of_range || file.allow_out_of_range.unwrap_or(false)),
        seed: Some(seed),
        out: pick(a.out.clone(), file.out),
    };
    let ck = load_checkpoint(&require(cfg.checkpoint.clone(), "checkpoint")?)?;
    let data_path = require(cfg.data.clone(), "data")?;
    let out = require(cfg.out.clone(), "out")?;
    let (dataset, _) = read_dataset(&data_path)?;
    let mut sampler = NpeSampler::new(ck)?;
    sampler.allow_out_of_range = cfg.allow_out_of_range.unwrap_or(false);
    sampler.execution = ctx.exec;
    let mut draws = sampler.sample(&dataset, cfg.draws.unwrap_or(DEFAULT_SAMPLE_DRAWS), &mut seeded(seed))?;
    draws.meta.seed = Some(seed);
    std::fs::create_dir_all(&out)?;
    draws.save(sampler.spec(), &out.join("draws.csv"))?;
    let mut info = ctx.info("sample", &cfg, Some(seed));
    info.input("checkpoint", sampler.fingerprint());
    info.input("dataset", dataset_hash(&dataset));
    info.input("dataset_file", file_hash(&data_path)?);
    info.summary = serde_json::json!({ "out_of_range": draws.meta.out_of_range });
    info.record_outputs(&out)?;
    info.write(&out)?;
    Ok(())
}

fn sbc(ctx: &Ctx, a: &SbcArgs) -> Result<()> {
    let file: SbcConfig = load(a.config.as_deref(), "sbc")?;
    let seed = resolve_seed(a.seed, file.seed)?;
    let cfg = SbcConfig {
        checkpoint: pick(a.checkpoint.clone(), file.checkpoint),
        sims: pick(a.sims, file.sims).or(Some(DEFAULT_SBC_SIMS)),
        draws: pick(a.draws, file.draws).or(Some(DEFAULT_SBC_DRAWS)),
        gamma: pick(a.gamma, file.gamma).or(Some(DEFAULT_GAMMA)),
        band_reps: pick(a.band_reps, file.band_reps)
            .or(Some(hierflow::diagnostics::DEFAULT_BAND_REPS)),
        seed: Some(seed),
        out: pick(a.out.clone(), file.out),
    };
    let ck = load_checkpoint(&require(cfg.checkpoint.clone(), "checkpoint")?)?;
    let out = require(cfg.out.clone(), "out")?;
    let mut sampler = NpeSampler::new(ck)?;
    sampler.execution = ctx.exec;
    let spec = sampler.spec();
    let (sims, draws) = (cfg.sims.unwrap_or_default(), cfg.draws.unwrap_or_default());
    let mut rng = seeded(seed);
    let reps = simulate_and_sample(spec, &sampler, sims, draws, &mut rng, ctx.exec)?;
    let result = sbc_from_replications(spec, &reps, &mut rng)?;
    let gamma = cfg.gamma.unwrap_or(DEFAULT_GAMMA);
    let band = ecdf_diff_band(
        &result.ranks,
        draws,
        gamma,
        cfg.band_reps.unwrap_or_default(),
        fork_seed(&mut rng),
    )?;
    let recovery = recovery_from_replications(spec, &reps, 0.95)?;
    write_sbc_report(&out, &result, &band)?;
    write_recovery_report(&out, &recovery)?;
    let inside = band.inside.iter().filter(|&&b| b).count();
    let mut info = ctx.info("sbc", &cfg, Some(seed));
    info.input("checkpoint", sampler.fingerprint());
    info.summary = serde_json::json!({
        "parameters": band.inside.len(),
        "inside_band": inside,
    });
    info.record_outputs(&out)?;
    info.write(&out)?;
    log::info!("{inside} of {} ECDF curves inside the {gamma} band", band.inside.len());
    Ok(())
}

fn logo(ctx: &Ctx, a: &LogoArgs) -> Result<()> {
    let file: LogoConfig = load(a.config.as_deref(), "logo")?;
    let seed = resolve_seed(a.seed, file.seed)?;
    let cfg = LogoConfig {
        checkpoint: pick(a.checkpoint.clone(), file.checkpoint),
        compare: pick(a.compare.clone(), file.compare),
        data: pick(a.data.clone(), file.data),
        draws: pick(a.draws, file.draws).or(Some(DEFAULT_LOGO_DRAWS)),
        seed: Some(seed),
        out: pick(a.out.clone(), file.out),
    };
    let ck_a = load_checkpoint(&require(cfg.checkpoint.clone(), "checkpoint")?)?;
    let data_path = require(cfg.data.clone(), "data")?;
    let out = require(cfg.out.clone(), "out")?;
    let (dataset, _) = read_dataset(&data_path)?;
    let mut info = ctx.info("logo", &cfg, Some(seed));
    let mut a_sampler = NpeSampler::new(ck_a)?;
    a_sampler.execution = ctx.exec;
    info.input("checkpoint_a", a_sampler.fingerprint());
    let a_spec = a_sampler.checkpoint.spec()?;
    let b: Box<dyn PosteriorSampler> = match cfg.compare.as_deref() {
        None => Box::new(NpeSampler::new(a_sampler.checkpoint.clone())?),
        Some("oracle") => a_sampler.checkpoint.model.oracle().ok_or_else(|| {
            Error::Config(format!(
                "model {} has no analytic oracle for `compare`",
                a_sampler.checkpoint.model.id()
            ))
        })?,
        Some(dir) => {
            let mut s = NpeSampler::new(load_checkpoint(&PathBuf::from(dir))?)?;
            s.execution = ctx.exec;
            info.input("checkpoint_b", s.fingerprint());
            Box::new(s)
        }
    };
    let b_spec = match cfg.compare.as_deref() {
        None | Some("oracle") => a_sampler.checkpoint.spec()?,
        Some(dir) => load_checkpoint(&PathBuf::from(dir))?.spec()?,
    };
    let table = elpd_logo(
        &dataset,
        (&a_sampler, a_spec.as_ref()),
        (b.as_ref(), b_spec.as_ref()),
        cfg.draws.unwrap_or(DEFAULT_LOGO_DRAWS),
        &mut seeded(seed),
        ctx.exec,
    )?;
    write_elpd_report(&out, &table)?;
    info.input("dataset", dataset_hash(&dataset));
    info.summary = serde_json::json!({ "elpd_diff": table.elpd_diff, "se_diff": table.se_diff });
    info.record_outputs(&out)?;
    info.write(&out)?;
    print_stdout(&format!("elpd_diff {:.4} (SE {:.4})\n", table.elpd_diff, table.se_diff))
}

/// Collects `sbc`, `recovery` and `elpd` outputs of several runs.
fn report(ctx: &Ctx, a: &ReportArgs) -> Result<()> {
    std::fs::create_dir_all(&a.out)?;
    let mut entries = Vec::new();
    let mut csv = String::from("input,kind,name,metric,value\n");
    for (k, dir) in a.inputs.iter().enumerate() {
        let read = |name: &str| -> Result<Option<serde_json::Value>> {
            let p = dir.join(name);
            if !p.exists() {
                return Ok(None);
            }
            Ok(Some(serde_json::from_str(&std::fs::read_to_string(p)?)?))
        };
        let run = read("run.json")?;
        let sbc = read("sbc.json")?;
        let recovery = read("recovery.json")?;
        let elpd = read("elpd.json")?;
        if sbc.is_none() && recovery.is_none() && elpd.is_none() {
            return Err(Error::Argument(format!(
                "{} has no sbc, recovery or elpd results",
                dir.display()
            )));
        }
        let label = dir.display().to_string();
        if let Some(s) = &sbc {
            for p in s["parameters"].as_array().into_iter().flatten() {
                csv += &format!("{label},sbc,{},inside_band,{}\n", p["name"].as_str().unwrap_or(""), p["inside_band"]);
            }
        }
        if let Some(r) = &recovery {
            for p in r["parameters"].as_array().into_iter().flatten() {
                for m in ["rmse", "coverage", "correlation"] {
                    csv += &format!("{label},recovery,{},{m},{}\n", p["name"].as_str().unwrap_or(""), p[m]);
                }
            }
        }
        if let Some(e) = &elpd {
            for m in ["elpd_diff", "se_diff"] {
                csv += &format!("{label},elpd,,{m},{}\n", e[m]);
            }
        }
        for svg in ["sbc_ecdf.svg", "recovery.svg", "elpd.svg"] {
            let src = dir.join(svg);
            if src.exists() {
                std::fs::copy(&src, a.out.join(format!("{k}-{svg}")))?;
            }
        }
        let sbc_summary = sbc.as_ref().map(|s| {
            serde_json::json!({
                "num_sims": s["num_sims"],
                "num_draws": s["num_draws"],
                "gamma": s["gamma"],
                "fraction_inside": s["fraction_inside"],
            })
        });
        entries.push(serde_json::json!({
            "input": label,
            "command": run.as_ref().map(|r| r["command"].clone()),
            "seed": run.as_ref().map(|r| r["seed"].clone()),
            "sbc": sbc_summary,
            "recovery": recovery.map(|r| r["parameters"].clone()),
            "elpd": elpd.map(|e| serde_json::json!({ "elpd_diff": e["elpd_diff"], "se_diff": e["se_diff"] })),
        }));
    }
    std::fs::write(
        a.out.join("report.json"),
        serde_json::to_string_pretty(&serde_json::json!({ "runs": entries }))? + "\n",
    )?;
    std::fs::write(a.out.join("report.csv"), csv)?;
    let cfg = serde_json::json!({ "inputs": a.inputs, "out": a.out });
    let mut info = ctx.info("report", &cfg, None);
    info.record_outputs(&a.out)?;
    info.write(&a.out)?;
    Ok(())
}

fn models() -> Result<()> {
    use std::fmt::Write as _;
    let mut text = String::new();
    for id in MODEL_IDS {
        let entry = zoo_entry(id)?;
        let oracle = if entry.oracle.is_some() { " (analytic oracle)" } else { "" };
        let _ = writeln!(text, "{id}{oracle}");
        for (name, level, transform) in entry.parameter_table() {
            let _ = writeln!(text, "  {level:<7} {name:<16} {transform}");
        }
    }
    print_stdout(&text)
}

/// Writes to stdout, treating a closed pipe as success.
fn print_stdout(text: &str) -> Result<()> {
    use std::io::Write as _;
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}
