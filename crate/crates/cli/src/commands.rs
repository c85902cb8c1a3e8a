//! One function per subcommand.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use attrib_core::amortized::{
    train_fastshap, train_fastshap_kl, train_real_x, AmortizedConfig, AmortizedExplainer, SubsetMode,
};
use attrib_core::data_io::{read_dataset, write_curve, write_dataset, AttributionFile, AttributionRow};
use attrib_core::evaluation::{
    evaluate, pointwise_ci, predicted_class_overconfidence_check, EvalConfig, EvalReport, Grid,
    RankingMode, OVERCONFIDENCE_GRID,
};
use attrib_core::masking::{SamplerKind, SubsetSampler};
use attrib_core::models::{train_model, PredictionModel, TrainConfig};
use attrib_core::nn::Architecture;
use attrib_core::prob::{Dataset, Instance};
use attrib_core::surrogate::{
    default_hidden_dim, masked_conditional_entropy, train_surrogate, ConditionalModel, ConditionalOracle,
    SurrogateModel,
};
use attrib_core::synthetic::{exact_leakage_gap_lemma1, lemma3_adversary, SyntheticProcess};

use crate::config::{DemoSection, ExplainSection, RunConfig, TrainSection};
use crate::error::CliError;
use crate::methods::{check_class_source, classes_for, ClassSource, Conditional, Method, MethodContext};
use crate::output::{curve_svg, report_text, write_train_log};
use crate::presets::{explain_grid, tagged, train_grid};

fn section<'a, T>(s: &'a Option<T>, name: &str) -> Result<&'a T, CliError> {
    s.as_ref()
        .ok_or_else(|| CliError::Usage(format!("missing [{name}] section (use --config or --set)")))
}

fn require_file(path: &Path, what: &str) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{what} {} not found", path.display())))
    }
}

fn load_dataset(path: &Path) -> Result<Dataset, CliError> {
    require_file(path, "dataset")?;
    Ok(read_dataset(path)?)
}

pub fn gen_data(cfg: &RunConfig) -> Result<(), CliError> {
    let g = section(&cfg.gen_data, "gen-data")?;
    let process = section(&cfg.process, "process")?.build()?;
    if g.count == 0 {
        return Err(CliError::Usage("count must be at least 1".into()));
    }
    let data = process.sample(g.count, g.seed)?;
    write_dataset(&g.output, &data)?;
    eprintln!("wrote {} rows of {} to {}", data.len(), process.name(), g.output.display());
    Ok(())
}

fn log_path(output: &Path, log: &Option<PathBuf>) -> PathBuf {
    log.clone().unwrap_or_else(|| {
        let mut p = output.as_os_str().to_owned();
        p.push(".log.csv");
        PathBuf::from(p)
    })
}

pub fn train(cfg: &RunConfig) -> Result<(), CliError> {
    let t = section(&cfg.train, "train")?;
    let Some(preset) = &t.sweep else { return train_with(cfg, t) };
    if t.target != "real-x" {
        return Err(CliError::Usage(format!("sweep {preset:?} only applies to target real-x")));
    }
    for &lambda in train_grid(preset)? {
        let tag = format!("{lambda:e}");
        let run = TrainSection {
            lambda,
            output: tagged(&t.output, &tag),
            log: t.log.as_ref().map(|l| tagged(l, &tag)),
            ..t.clone()
        };
        train_with(cfg, &run)?;
    }
    Ok(())
}

fn train_with(cfg: &RunConfig, t: &TrainSection) -> Result<(), CliError> {
    let data = load_dataset(&t.dataset)?;
    let d = data.dim();
    let train_cfg = TrainConfig {
        learning_rate: t.learning_rate,
        epochs: t.epochs,
        batch_size: t.batch_size,
        seed: t.seed,
        l2_penalty: t.l2_penalty,
    };
    train_cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let arch = |input: usize| -> Result<Architecture, CliError> {
        Architecture::from_parts(&t.arch, t.hidden.unwrap_or(default_hidden_dim(input)))
            .map_err(|e| CliError::Usage(e.to_string()))
    };
    let mut extra: Vec<(&str, String)> = Vec::new();
    let losses = match t.target.as_str() {
        "model" => {
            let (model, log) = train_model(&data, arch(d)?, &train_cfg)?;
            model.save(&t.output)?;
            log.epoch_losses
        }
        "surrogate" => {
            let kind: SamplerKind = t.sampler.parse().map_err(|e: attrib_core::Error| CliError::Usage(e.to_string()))?;
            let sampler = SubsetSampler::new(kind, d, t.seed)?;
            let (surrogate, log) = train_surrogate(&data, sampler, arch(d)?, &train_cfg)?;
            surrogate.save(&t.output)?;
            if let Some(p) = &cfg.process {
                let process = p.build()?;
                if process.support().is_some() && process.dim() == d {
                    extra.push(("masked_entropy", masked_conditional_entropy(&process, kind)?.to_string()));
                }
            }
            log.epoch_losses
        }
        target @ ("fastshap" | "fastshap-kl" | "real-x") => {
            let source = t
                .conditional
                .as_deref()
                .ok_or_else(|| CliError::Usage(format!("training {target} needs conditional = <surrogate file> or \"oracle\"")))?;
            let conditional = Conditional::resolve(source, cfg.process.as_ref())?;
            let subset_mode = match t.subset_mode.as_str() {
                "sampled" => SubsetMode::Sampled,
                "enumerate" => SubsetMode::Enumerate,
                other => return Err(CliError::Usage(format!("unknown subset-mode {other:?}"))),
            };
            let amortized = AmortizedConfig {
                arch: Some(arch(d)?),
                train: train_cfg,
                subsets_per_instance: t.subsets_per_instance,
                subset_mode,
            };
            let c = conditional.as_dyn();
            let (expl, log) = match target {
                "fastshap" => train_fastshap(c, &data, &amortized)?,
                "fastshap-kl" => train_fastshap_kl(c, &data, &amortized)?,
                _ => train_real_x(c, &data, &amortized, t.lambda)?,
            };
            if log.degenerate_selection {
                eprintln!("warning: real-x selections collapsed to the empty subset (lambda = {})", t.lambda);
                extra.push(("degenerate", "true".into()));
            }
            expl.save(&t.output)?;
            log.epoch_losses
        }
        other => {
            return Err(CliError::Usage(format!(
                "unknown train target {other:?} (model, surrogate, fastshap, fastshap-kl, real-x)"
            )))
        }
    };
    write_train_log(&log_path(&t.output, &t.log), &t.target, &losses, &extra)?;
    if let Some(l) = losses.last() {
        eprintln!("trained {} for {} epochs, final loss {l:.6}", t.target, losses.len());
    }
    Ok(())
}

pub fn explain(cfg: &RunConfig) -> Result<(), CliError> {
    let e = section(&cfg.explain, "explain")?;
    let Some(preset) = &e.sweep else { return explain_with(cfg, e) };
    for &n in explain_grid(preset)? {
        let run = ExplainSection { num_samples: Some(n), output: tagged(&e.output, &n.to_string()), ..e.clone() };
        explain_with(cfg, &run)?;
    }
    Ok(())
}

fn explain_with(cfg: &RunConfig, e: &ExplainSection) -> Result<(), CliError> {
    let method: Method = e.method.parse()?;
    let source: ClassSource = e.class_source.parse()?;
    check_class_source(method, source)?;
    let data = load_dataset(&e.dataset)?;
    let model = match &e.model {
        Some(p) => {
            require_file(p, "model")?;
            Some(PredictionModel::load(p)?)
        }
        None => None,
    };
    let conditional = e
        .conditional
        .as_deref()
        .map(|c| Conditional::resolve(c, cfg.process.as_ref()))
        .transpose()?;
    let explainer = match &e.explainer {
        Some(p) => {
            require_file(p, "explainer")?;
            Some(AmortizedExplainer::load(p)?)
        }
        None => None,
    };
    let baseline = e.baseline.clone().map(Instance::new).transpose()?;
    let ctx = MethodContext {
        model: model.as_ref(),
        conditional: conditional.as_ref().map(|c| c.as_dyn()),
        explainer: explainer.as_ref(),
        num_samples: e.num_samples,
        kernel_width: e.kernel_width,
        ridge: e.ridge,
        noise_sigma: e.noise_sigma,
        baseline,
        grid: Grid::default(),
        seed: e.seed,
    };
    ctx.check(method)?;
    let classes = classes_for(source, &data, ctx.model, ctx.conditional)?;
    let vectors = ctx.explain_all(method, &data, &classes)?;
    let file = AttributionFile {
        method: method.name().to_string(),
        dim: data.dim(),
        rows: vectors
            .into_iter()
            .zip(classes)
            .enumerate()
            .map(|(index, (scores, class))| AttributionRow { index, class, scores })
            .collect(),
    };
    file.save(&e.output)?;
    eprintln!("wrote {} {} attributions to {}", file.rows.len(), method.name(), e.output.display());
    Ok(())
}

pub fn run_evaluate(cfg: &RunConfig) -> Result<String, CliError> {
    let v = section(&cfg.evaluate, "evaluate")?;
    require_file(&v.attributions, "attribution file")?;
    let file = AttributionFile::load(&v.attributions)?;
    let data = load_dataset(&v.dataset)?;
    if file.dim != data.dim() {
        return Err(CliError::Usage(format!(
            "attributions have d = {} but the dataset has d = {}",
            file.dim,
            data.dim()
        )));
    }
    if file.rows.len() != data.len() || file.rows.iter().enumerate().any(|(i, r)| r.index != i) {
        return Err(CliError::Usage(format!(
            "attributions must have one row per dataset instance in order (got {} rows for {} instances)",
            file.rows.len(),
            data.len()
        )));
    }
    let conditional = Conditional::resolve(&v.conditional, cfg.process.as_ref())?;
    let grid = match &v.grid {
        Some(points) => Grid::new(points.clone()).map_err(|e| CliError::Usage(e.to_string()))?,
        None => Grid::default(),
    };
    let mode: RankingMode = v.ranking.parse().map_err(|e: attrib_core::Error| CliError::Usage(e.to_string()))?;
    let eval_cfg = EvalConfig { grid, mode, resamples: v.resamples, seed: v.seed };
    let report = evaluate(&file.method, &file.vectors(), conditional.as_dyn(), &data, &eval_cfg)?;
    let intervals = pointwise_ci(&report.curve, v.resamples, v.seed)?;
    write_curve(&v.curve_output, &file.method, &report.curve, &intervals)?;
    let text = report_text(&report, v.resamples, data.len());
    std::fs::write(&v.report_output, &text)?;
    if let Some(plot) = &v.plot_output {
        let svg = curve_svg(
            &file.method,
            report.curve.grid.points(),
            &report.curve.mean_loglik,
            report.full_feature_loglik,
        );
        std::fs::write(plot, svg)?;
    }
    Ok(text)
}

pub fn evaluate_cmd(cfg: &RunConfig) -> Result<(), CliError> {
    print!("{}", run_evaluate(cfg)?);
    Ok(())
}

struct DemoRow {
    process: &'static str,
    backend: &'static str,
    method: Method,
    report: EvalReport,
}

fn demo_methods(process: &str) -> Vec<(Method, ClassSource)> {
    let adversary = match process {
        "lemma1" => (Method::Lemma1Adversary, ClassSource::TrueLabel),
        _ => (Method::Lemma3Adversary, ClassSource::Predicted),
    };
    vec![
        adversary,
        (Method::ShapS, ClassSource::TrueLabel),
        (Method::ShapKl, ClassSource::None),
        (Method::Random, ClassSource::None),
    ]
}

fn demo_rows(
    process: &'static str,
    backend: &'static str,
    conditional: &dyn ConditionalModel,
    test: &Dataset,
    demo: &DemoSection,
) -> Result<Vec<DemoRow>, CliError> {
    let ctx = MethodContext {
        model: None,
        conditional: Some(conditional),
        explainer: None,
        num_samples: None,
        kernel_width: 0.75,
        ridge: 1e-3,
        noise_sigma: 0.1,
        baseline: None,
        grid: Grid::default(),
        seed: demo.seed,
    };
    let eval_cfg = EvalConfig { resamples: demo.resamples, seed: demo.seed, ..EvalConfig::default() };
    demo_methods(process)
        .into_iter()
        .map(|(method, source)| {
            let classes = classes_for(source, test, None, Some(conditional))?;
            let attribs = ctx.explain_all(method, test, &classes)?;
            let report = evaluate(method.name(), &attribs, conditional, test, &eval_cfg)?;
            Ok(DemoRow { process, backend, method, report })
        })
        .collect()
}

/// Runs both leakage demonstrations and returns the printed summary.
pub fn run_demo(cfg: &RunConfig) -> Result<String, CliError> {
    let demo = cfg.demo_leakage.clone().unwrap_or_default();
    if demo.test_size == 0 {
        return Err(CliError::Usage("test-size must be at least 1".into()));
    }
    let mut rows = Vec::new();
    for (name, process) in [("lemma1", SyntheticProcess::lemma1()), ("lemma3", SyntheticProcess::lemma3())] {
        let test = process.sample(demo.test_size, demo.seed)?;
        let oracle = ConditionalOracle::new(process.clone());
        eprintln!("{name}: oracle-backed evaluation");
        rows.extend(demo_rows(name, "oracle", &oracle, &test, &demo)?);
        if demo.surrogate_samples > 0 {
            eprintln!("{name}: training surrogate on {} samples", demo.surrogate_samples);
            let train = process.sample(demo.surrogate_samples, demo.seed.wrapping_add(1))?;
            let d = process.dim();
            let sampler = SubsetSampler::new(SamplerKind::UniformCardinality, d, demo.seed)?;
            let train_cfg = TrainConfig { epochs: demo.surrogate_epochs, seed: demo.seed, ..TrainConfig::default() };
            let arch = Architecture::TanhMlp { hidden: default_hidden_dim(d) };
            let (surrogate, _): (SurrogateModel, _) = train_surrogate(&train, sampler, arch, &train_cfg)?;
            rows.extend(demo_rows(name, "surrogate", &surrogate, &test, &demo)?);
        }
    }

    let mut out = String::new();
    writeln!(out, "{:<8} {:<10} {:<18} {:>10} {:>12} {:>6}", "process", "backend", "method", "iauc", "full_ll", "flag").unwrap();
    for r in &rows {
        writeln!(
            out,
            "{:<8} {:<10} {:<18} {:>10.5} {:>12.5} {:>6}",
            r.process,
            r.backend,
            r.method.name(),
            r.report.iauc,
            r.report.full_feature_loglik,
            if r.report.leakage_flag { "LEAK" } else { "OK" }
        )
        .unwrap();
    }
    let gap = exact_leakage_gap_lemma1(64);
    writeln!(out).unwrap();
    writeln!(
        out,
        "lemma1 exact gap: E[log F(y|x_top50)] - E[log F(y|x)] = {:.6} - ({:.6}) = {:.6}",
        gap.explained_loglik,
        gap.full_loglik,
        gap.gap()
    )
    .unwrap();

    let lemma3 = SyntheticProcess::lemma3();
    let oracle = ConditionalOracle::new(lemma3.clone());
    let witnesses =
        predicted_class_overconfidence_check(&lemma3, &oracle, &OVERCONFIDENCE_GRID, |x, _| Ok(lemma3_adversary(x)))?;
    writeln!(out, "lemma3 overconfidence witnesses (predicted class probability, subset vs full):").unwrap();
    for w in &witnesses {
        writeln!(
            out,
            "  x = ({}, {}) n = {} y = {}: {:.4} > {:.4}",
            w.x[0], w.x[1], w.n, w.predicted.0, w.subset_prob, w.full_prob
        )
        .unwrap();
    }
    if let Some(path) = &demo.output {
        std::fs::write(path, &out)?;
    }
    Ok(out)
}

pub fn demo_leakage(cfg: &RunConfig) -> Result<(), CliError> {
    print!("{}", run_demo(cfg)?);
    Ok(())
}
