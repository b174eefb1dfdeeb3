use std::fs;
use std::path::Path;

use anyhow::Context;
use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use pine_core::conformal::calibrate;
use pine_core::dataio::{load_csv, save_csv, split, DataError, Dataset, SplitSpec};
use pine_core::ensemble::{
    ensemble_to_json, load_ensemble, parse_text_dump, train_boosted, Ensemble, TextDumpOptions,
};
use pine_core::eval::{evaluate, select_alpha, AlphaCandidate, Selector, SweepRow};
use pine_core::pine::{run, PineConfig, PruneResult};
use pine_core::plausibility::{ScoreKind, ScoreModel};
use pine_core::pruner::PruneObjective;
use pine_core::synth::{gen_moons, gen_tree_dist, MoonsSpec};
use pine_core::verify::check_equivalence_exhaustive;

use crate::config::{RunConfig, SelectorKind};
use crate::{
    CalibrateArgs, Cli, Command, ConvertArgs, EvaluateArgs, FitScoreArgs, ObjectiveArg, PruneArgs,
    ScoreArg, ScoreArgs, SelectAlphaArgs, SplitArgs, SweepArgs, SynthArgs, SynthKind, TrainArgs,
    VerifyArgs,
};

/// Bad flag combination or value; exits with status 2.
#[derive(Debug, Error)]
#[error("{0}")]
pub struct UsageError(pub String);

fn usage<T>(msg: impl Into<String>) -> anyhow::Result<T> {
    Err(UsageError(msg.into()).into())
}

/// Tag a library error with its module name.
fn core<T, E: Into<pine_core::Error>>(r: Result<T, E>) -> anyhow::Result<T> {
    r.map_err(|e| anyhow::Error::new(e.into()))
}

pub fn dispatch(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return usage("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let cfg = RunConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Split(a) => cmd_split(cfg, a),
        Command::Train(a) => cmd_train(cfg, a),
        Command::FitScore(a) => cmd_fit_score(cfg, a),
        Command::Calibrate(a) => cmd_calibrate(cfg, a),
        Command::Prune(a) => cmd_prune(cfg, a),
        Command::Evaluate(a) => cmd_evaluate(cfg, a),
        Command::SelectAlpha(a) => cmd_select_alpha(cfg, a),
        Command::Verify(a) => cmd_verify(cfg, a),
        Command::Sweep(a) => cmd_sweep(cfg, a),
        Command::Synth(a) => cmd_synth(cfg, a),
        Command::Convert(a) => cmd_convert(cfg, a),
    }
}

fn write_json(path: &Path, v: &impl Serialize) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(v)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn read_json(path: &Path) -> anyhow::Result<Value> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Load a CSV with its label column, or without labels when the column is
/// absent.
fn load_data(path: &Path, label: &str) -> anyhow::Result<Dataset> {
    match load_csv(path, Some(label)) {
        Err(DataError::MissingLabelColumn(_)) => core(load_csv(path, None)),
        r => core(r),
    }
    .with_context(|| format!("loading {}", path.display()))
}

fn load_labeled(path: &Path, label: &str) -> anyhow::Result<Dataset> {
    core(load_csv(path, Some(label))).with_context(|| format!("loading {}", path.display()))
}

fn load_model(path: &Path) -> anyhow::Result<Ensemble> {
    core(load_ensemble(path)).with_context(|| format!("loading {}", path.display()))
}

/// Score JSON as written by `fit-score` (wrapped with its config) or bare.
fn load_score(path: &Path) -> anyhow::Result<ScoreModel> {
    let v = read_json(path)?;
    let inner = v.get("score").cloned().unwrap_or(v);
    serde_json::from_value(inner).with_context(|| format!("parsing score model {}", path.display()))
}

fn apply_score_args(cfg: &mut RunConfig, a: &ScoreArgs) {
    let s = &mut cfg.pine.score;
    if let Some(v) = a.bins {
        s.bins = v;
    }
    if let Some(v) = a.beta {
        s.beta = v;
    }
    if let Some(v) = a.if_trees {
        s.if_trees = v;
    }
    if let Some(v) = a.if_max_samples {
        s.if_max_samples = v;
    }
    if let Some(v) = a.score_seed {
        s.seed = v;
    }
    match a.score {
        Some(ScoreArg::Chowliu) => cfg.pine.score_kind = ScoreKind::ChowLiu,
        Some(ScoreArg::Leafsupport) => cfg.pine.score_kind = ScoreKind::LeafSupport,
        Some(ScoreArg::Iforest) => cfg.pine.score_kind = ScoreKind::IsolationForest,
        // No score means no region: full-space equivalence.
        Some(ScoreArg::None) => cfg.pine.fipe = true,
        None => {}
    }
}

fn apply_objective(pine: &mut PineConfig, o: Option<ObjectiveArg>) {
    match o {
        Some(ObjectiveArg::L0) => pine.objective = PruneObjective::L0,
        Some(ObjectiveArg::L1) => pine.objective = PruneObjective::L1,
        None => {}
    }
}

fn apply_time_limit(pine: &mut PineConfig, t: Option<f64>) -> anyhow::Result<()> {
    if let Some(t) = t {
        if t.is_nan() || t <= 0.0 {
            return usage(format!("--time-limit must be positive, got {t}"));
        }
        pine.pruner_solve.limits.time_limit_s = t;
        pine.oracle.solve.limits.time_limit_s = t;
    }
    Ok(())
}

fn validate_pine(pine: &PineConfig) -> anyhow::Result<()> {
    pine.validate()
        .map_err(|e| UsageError(e.to_string()).into())
}

fn cmd_split(mut cfg: RunConfig, a: SplitArgs) -> anyhow::Result<()> {
    if let Some(r) = a.ratios {
        cfg.split.ratios = r;
    }
    if let Some(s) = a.seed {
        cfg.split.seed = s;
    }
    let spec = match SplitSpec::new(cfg.split.ratios.clone(), cfg.split.seed) {
        Ok(s) => s,
        Err(e) => return usage(format!("--ratios: {e}")),
    };
    let ds = load_data(&a.data, &cfg.label)?;
    let (parts, manifest) = core(split(&ds, &spec))?;
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let names: Vec<String> = if parts.len() == 3 {
        ["fit", "cal", "test"].map(String::from).to_vec()
    } else {
        (0..parts.len()).map(|i| format!("part{i}")).collect()
    };
    for (part, name) in parts.iter().zip(&names) {
        core(save_csv(
            part,
            a.out_dir.join(format!("{name}.csv")),
            &cfg.label,
        ))?;
    }
    write_json(
        &a.out_dir.join("manifest.json"),
        &json!({ "command": "split", "config": cfg, "files": names, "manifest": manifest }),
    )
}

fn cmd_train(mut cfg: RunConfig, a: TrainArgs) -> anyhow::Result<()> {
    let t = &mut cfg.train;
    if let Some(v) = a.rounds {
        t.n_rounds = v;
    }
    if let Some(v) = a.depth {
        t.max_depth = v;
    }
    if let Some(v) = a.learning_rate {
        t.learning_rate = v;
    }
    if let Some(v) = a.seed {
        t.seed = v;
    }
    let ds = load_labeled(&a.data, &cfg.label)?;
    let e = core(train_boosted(&ds, &cfg.train))?;
    let mut v = ensemble_to_json(&e);
    v["config"] = serde_json::to_value(&cfg)?;
    info!("trained {} trees", e.n_trees());
    write_json(&a.out, &v)
}

fn cmd_fit_score(mut cfg: RunConfig, a: FitScoreArgs) -> anyhow::Result<()> {
    apply_score_args(&mut cfg, &a.score);
    if a.score.score == Some(ScoreArg::None) {
        return usage("--score none has no model to fit");
    }
    let e = load_model(&a.ensemble)?;
    let ds = load_data(&a.data, &cfg.label)?;
    let model = core(ScoreModel::fit(
        cfg.pine.score_kind,
        &cfg.pine.score,
        &e,
        &ds,
    ))?;
    write_json(
        &a.out,
        &json!({ "command": "fit-score", "config": cfg, "score": model }),
    )
}

fn cmd_calibrate(mut cfg: RunConfig, a: CalibrateArgs) -> anyhow::Result<()> {
    if let Some(al) = a.alpha {
        cfg.pine.alpha = Some(al);
    }
    let Some(alpha) = cfg.pine.alpha else {
        return usage("--alpha is required");
    };
    if !(alpha > 0.0 && alpha < 1.0) {
        return usage(format!("--alpha must lie in (0, 1), got {alpha}"));
    }
    let e = load_model(&a.ensemble)?;
    let score = load_score(&a.score_model)?;
    let ds = load_data(&a.data, &cfg.label)?;
    if ds.n_features() != e.n_features() {
        return core(Err(
            pine_core::plausibility::PlausibilityError::DimensionMismatch {
                expected: e.n_features(),
                found: ds.n_features(),
            },
        ));
    }
    let calib = core(calibrate(&score.scores(&e, &ds), alpha))?;
    write_json(
        &a.out,
        &json!({ "command": "calibrate", "config": cfg, "calibration": calib }),
    )
}

/// What `prune` writes and `evaluate` / `verify` read back.
#[derive(Debug, Serialize, Deserialize)]
pub struct PruneArtifact {
    pub command: String,
    pub config: RunConfig,
    pub result: PruneResult,
    pub score: Option<ScoreModel>,
}

impl PruneArtifact {
    fn load(path: &Path) -> anyhow::Result<Self> {
        serde_json::from_value(read_json(path)?)
            .with_context(|| format!("parsing prune result {}", path.display()))
    }

    fn region(&self) -> Option<(&ScoreModel, pine_core::conformal::Threshold)> {
        self.score.as_ref().map(|s| (s, self.result.tau))
    }
}

fn cmd_prune(mut cfg: RunConfig, a: PruneArgs) -> anyhow::Result<()> {
    apply_score_args(&mut cfg, &a.score);
    if a.fipe {
        cfg.pine.fipe = true;
    }
    if let Some(al) = a.alpha {
        if cfg.pine.fipe {
            return usage("--alpha conflicts with --score none");
        }
        cfg.pine.alpha = Some(al);
    }
    apply_objective(&mut cfg.pine, a.objective);
    apply_time_limit(&mut cfg.pine, a.time_limit)?;
    if let Some(m) = a.max_iterations {
        cfg.pine.max_iterations = m;
    }
    if let Some(d) = &a.oracle_dump {
        fs::create_dir_all(d).with_context(|| format!("creating {}", d.display()))?;
        cfg.pine.oracle.dump_dir = Some(d.clone());
    }
    validate_pine(&cfg.pine)?;

    let e = load_model(&a.ensemble)?;
    let fit = load_data(&a.fit, &cfg.label)?;
    let cal = match (&a.cal, cfg.pine.fipe) {
        (Some(p), _) => load_data(p, &cfg.label)?,
        (None, true) => fit.clone(),
        (None, false) => return usage("--cal is required unless --fipe or --score none is given"),
    };
    let out = core(run(&e, &fit, &cal, &cfg.pine))?;
    let r = &out.result;
    println!(
        "support {}/{} ({:.1}% pruned), {} iterations, certified: {}, scope: {:?}",
        r.support,
        r.n_trees,
        100.0 * r.pruning_rate(),
        r.iterations,
        r.certified,
        r.guarantee_scope
    );
    let artifact = PruneArtifact {
        command: "prune".into(),
        config: cfg,
        result: out.result,
        score: out.score,
    };
    write_json(&a.out, &artifact)
}

fn cmd_evaluate(mut cfg: RunConfig, a: EvaluateArgs) -> anyhow::Result<()> {
    let art = PruneArtifact::load(&a.result)?;
    cfg.pine = art.config.pine.clone();
    let e = load_model(&a.ensemble)?;
    let test = load_data(&a.test, &cfg.label)?;
    let report = core(evaluate(&e, &art.result.weights, &test, art.region()))?;
    println!(
        "fidelity {:.4}, coverage {:.4}, support {}/{}",
        report.fidelity, report.coverage, report.support, report.n_trees
    );
    write_json(
        &a.out,
        &json!({ "command": "evaluate", "config": cfg, "report": report }),
    )
}

fn cmd_select_alpha(mut cfg: RunConfig, a: SelectAlphaArgs) -> anyhow::Result<()> {
    if let Some(s) = a.selector {
        cfg.select.selector = s;
    }
    if let Some(d) = a.delta {
        cfg.select.delta = d;
    }
    if let Some(r) = a.rho_star {
        cfg.select.rho_star = r;
    }
    let cands: Vec<AlphaCandidate> = serde_json::from_value(read_json(&a.candidates)?)
        .with_context(|| format!("parsing candidates {}", a.candidates.display()))?;
    let selector = match cfg.select.selector {
        SelectorKind::Empirical => Selector::Empirical,
        SelectorKind::ConfidenceBound => Selector::ConfidenceBound {
            delta: cfg.select.delta,
        },
    };
    let sel = core(select_alpha(&cands, selector, cfg.select.rho_star))?;
    println!("{:?}", sel.chosen);
    write_json(
        &a.out,
        &json!({ "command": "select-alpha", "config": cfg, "selection": sel }),
    )
}

fn cmd_verify(mut cfg: RunConfig, a: VerifyArgs) -> anyhow::Result<()> {
    if let Some(c) = a.cell_cap {
        cfg.verify.cell_cap = c;
    }
    let art = PruneArtifact::load(&a.result)?;
    cfg.pine = art.config.pine.clone();
    let e = load_model(&a.ensemble)?;
    let found = core(check_equivalence_exhaustive(
        &e,
        e.weights(),
        &art.result.weights,
        art.region(),
        cfg.verify.cell_cap as u128,
    ))?;
    let n = found.len();
    write_json(
        &a.out,
        &json!({ "command": "verify", "config": cfg, "equivalent": n == 0, "disagreements": found }),
    )?;
    if n > 0 {
        anyhow::bail!("verify: {n} disagreeing cells");
    }
    println!("equivalent");
    Ok(())
}

fn cmd_sweep(mut cfg: RunConfig, a: SweepArgs) -> anyhow::Result<()> {
    apply_score_args(&mut cfg, &a.score);
    apply_objective(&mut cfg.pine, a.objective);
    apply_time_limit(&mut cfg.pine, a.time_limit)?;
    if let Some(s) = a.seeds {
        cfg.sweep.seeds = s;
    }
    if let Some(al) = a.alphas {
        cfg.sweep.alphas = al;
    }
    if let Some(n) = a.moons_n {
        cfg.sweep.moons_n = n;
    }
    if let Some(bad) = cfg.sweep.alphas.iter().find(|v| !(**v > 0.0 && **v < 1.0)) {
        return usage(format!("--alphas: {bad} is outside (0, 1)"));
    }
    let (dataset, base) = match &a.data {
        Some(p) => (
            p.file_stem()
                .map_or("data".into(), |s| s.to_string_lossy().into_owned()),
            Some(load_labeled(p, &cfg.label)?),
        ),
        None => ("moons".to_string(), None),
    };

    struct Prepared {
        seed: u64,
        e: Ensemble,
        parts: Vec<Dataset>,
    }
    let prepared = cfg
        .sweep
        .seeds
        .iter()
        .map(|&seed| {
            let ds = match &base {
                Some(d) => d.clone(),
                None => core(gen_moons(&MoonsSpec {
                    n: cfg.sweep.moons_n,
                    seed,
                    ..cfg.moons
                }))?,
            };
            let spec = core(SplitSpec::new(cfg.split.ratios.clone(), seed))?;
            let (parts, _) = core(split(&ds, &spec))?;
            if parts.len() != 3 {
                return usage("sweep needs three split ratios (fit, cal, test)");
            }
            let e = core(train_boosted(
                &parts[0],
                &pine_core::ensemble::BoostConfig {
                    seed,
                    ..cfg.train.clone()
                },
            ))?;
            Ok(Prepared { seed, e, parts })
        })
        .collect::<anyhow::Result<Vec<_>>>()?;

    let jobs: Vec<(usize, Option<f64>)> = (0..prepared.len())
        .flat_map(|i| {
            std::iter::once(None)
                .chain(cfg.sweep.alphas.iter().map(|a| Some(*a)))
                .map(move |a| (i, a))
        })
        .collect();
    let rows = jobs
        .par_iter()
        .map(|&(i, alpha)| {
            let p = &prepared[i];
            let pine = PineConfig {
                alpha,
                fipe: alpha.is_none(),
                ..cfg.pine.clone()
            };
            let out = core(run(&p.e, &p.parts[0], &p.parts[1], &pine))?;
            let r = &out.result;
            let region = out.score.as_ref().map(|s| (s, r.tau));
            let rep = core(evaluate(&p.e, &r.weights, &p.parts[2], region))?;
            info!("seed {} alpha {:?}: support {}", p.seed, alpha, r.support);
            Ok(SweepRow {
                dataset: dataset.clone(),
                seed: p.seed,
                method: if alpha.is_some() { "pine" } else { "fipe" }.into(),
                alpha,
                pruning_rate: r.pruning_rate(),
                support: r.support,
                fidelity: rep.fidelity,
                coverage: rep.coverage,
                conditional_fidelity: rep.conditional_fidelity,
                accuracy_pruned: rep.accuracy_pruned,
                accuracy_original: rep.accuracy_original,
                time_s: r.wall_time_s,
                iterations: r.iterations,
                certified: r.certified,
            })
        })
        .collect::<anyhow::Result<Vec<SweepRow>>>()?;

    let mut wtr =
        csv::Writer::from_path(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    for row in &rows {
        wtr.serialize(row)?;
    }
    wtr.flush()?;
    let cfg_path = a.out.with_extension("config.json");
    write_json(
        &cfg_path,
        &json!({ "command": "sweep", "config": cfg, "rows": rows.len() }),
    )?;
    println!("{} rows written to {}", rows.len(), a.out.display());
    Ok(())
}

fn cmd_synth(mut cfg: RunConfig, a: SynthArgs) -> anyhow::Result<()> {
    match a.kind {
        SynthKind::Moons {
            n,
            noise,
            seed,
            out,
        } => {
            let m = &mut cfg.moons;
            m.n = n.unwrap_or(m.n);
            m.noise = noise.unwrap_or(m.noise);
            m.seed = seed.unwrap_or(m.seed);
            let ds = core(gen_moons(&cfg.moons))?;
            core(save_csv(&ds, &out, &cfg.label))
        }
        SynthKind::TreeDist {
            p,
            states,
            concentration,
            n,
            seed,
            out,
            model_out,
        } => {
            let t = &mut cfg.tree_dist;
            t.p = p.unwrap_or(t.p);
            t.states = states.unwrap_or(t.states);
            t.concentration = concentration.unwrap_or(t.concentration);
            t.n = n.unwrap_or(t.n);
            t.seed = seed.unwrap_or(t.seed);
            let (ds, model) = core(gen_tree_dist(&cfg.tree_dist))?;
            core(save_csv(&ds, &out, &cfg.label))?;
            match model_out {
                Some(path) => write_json(
                    &path,
                    &json!({ "command": "synth", "config": cfg, "score": ScoreModel::ChowLiu(model) }),
                ),
                None => Ok(()),
            }
        }
    }
}

fn cmd_convert(cfg: RunConfig, a: ConvertArgs) -> anyhow::Result<()> {
    let text =
        fs::read_to_string(&a.dump).with_context(|| format!("reading {}", a.dump.display()))?;
    let opts = TextDumpOptions {
        n_features: a.n_features,
        n_classes: a.n_classes,
        base_margin: a.base_margin,
    };
    let e = core(parse_text_dump(&text, &opts))?;
    let mut v = ensemble_to_json(&e);
    v["config"] = serde_json::to_value(&cfg)?;
    write_json(&a.out, &v)
}
