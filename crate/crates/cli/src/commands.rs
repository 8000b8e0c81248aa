use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::Serialize;

use gomkit::analysis::{
    rank_and_select, tolerance_intervals, trajectory_ttest, SensorRanking, SignificanceReport, SIGNIFICANCE_LEVEL,
    SIGNIFICANT_FRACTION,
};
use gomkit::exchange::{CoefficientModel, ModelEquation};
use gomkit::generation::{generate, metrics};
use gomkit::gom::build_system;
use gomkit::motion::{load_motion_csv, MovementDataset};
use gomkit::recognition::evaluate_f1;
use gomkit::synth::{synth_generate, SynthSpec};
use gomkit::topology::{Axis, SkeletonTopology};
use gomkit::trainer::{fit_reference, fit_sequence, KfConfig, OptimizerConfig};

use crate::args::*;
use crate::output::{file_stem, to_json_bytes, write_new_file, Manifest, OutputDir};

/// Invalid flag combination that clap cannot express; reported like a
/// parse failure.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: &str) -> anyhow::Error {
    UsageError(msg.to_string()).into()
}

/// Prints one result document; a closed stdout pipe is not an error.
fn emit(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{text}").and_then(|_| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn load_topology(path: Option<&Path>) -> Result<SkeletonTopology> {
    match path {
        Some(p) => Ok(SkeletonTopology::load(p)?),
        None => Ok(SkeletonTopology::default()),
    }
}

fn load_models(paths: &[PathBuf]) -> Result<Vec<CoefficientModel>> {
    paths
        .iter()
        .map(|p| CoefficientModel::load(p).with_context(|| format!("loading {}", p.display())))
        .collect()
}

fn model_stem(model: &CoefficientModel, path: &Path) -> String {
    match &model.class_label {
        Some(label) => file_stem(label),
        None => file_stem(&path.file_stem().unwrap_or_default().to_string_lossy()),
    }
}

/// Distinct stems for a list of models, suffixed with their position when
/// two models share a label.
fn model_stems(models: &[CoefficientModel], paths: &[PathBuf]) -> Vec<String> {
    let stems: Vec<String> = models.iter().zip(paths).map(|(m, p)| model_stem(m, p)).collect();
    stems
        .iter()
        .enumerate()
        .map(|(i, s)| {
            if stems.iter().filter(|o| *o == s).count() > 1 {
                format!("{s}-{i}")
            } else {
                s.clone()
            }
        })
        .collect()
}

pub fn synth(args: &SynthArgs) -> Result<()> {
    let text = fs::read_to_string(&args.spec).with_context(|| format!("reading {}", args.spec.display()))?;
    let spec = SynthSpec::from_json_str(&text)?;
    let out = synth_generate(&spec, args.seed)?;
    let topology = &out.dataset.topology;
    let system = build_system(topology)?;

    let mut dir = OutputDir::create(&args.out)?;
    dir.write("topology.json", topology.to_json_string().as_bytes())?;
    for seq in &out.dataset.sequences {
        let name = format!(
            "data/{}_{}.csv",
            file_stem(&seq.class_label),
            file_stem(&seq.subject_id)
        );
        dir.write(&name, seq.to_csv_string().as_bytes())?;
    }
    for (label, trajectories) in &out.truth {
        let equations = system
            .equations
            .iter()
            .zip(trajectories)
            .map(|(eq, traj)| ModelEquation {
                equation: eq.clone(),
                trajectory: traj.clone(),
                theta: None,
                loglik: None,
            })
            .collect();
        let model = CoefficientModel::new(
            topology.clone(),
            spec.frame_rate_hz,
            Some(label.clone()),
            Some("synth-truth".into()),
            equations,
        )?;
        dir.write(
            &format!("truth/{}.json", file_stem(label)),
            model.to_json_string().as_bytes(),
        )?;
    }
    dir.finish(Manifest::new("synth", Some(args.seed), args)?)?;
    Ok(())
}

fn kf_config(args: &FitArgs, seed: u64) -> KfConfig {
    let defaults = KfConfig::default();
    KfConfig {
        process_noise_q: args.q.unwrap_or(defaults.process_noise_q),
        obs_noise_r: args.r,
        per_coefficient_q: args.per_coefficient_q,
        smooth: !args.filter_only,
        optimizer: OptimizerConfig {
            max_iters: args.max_iters.unwrap_or(defaults.optimizer.max_iters),
            restarts: args.restarts.unwrap_or(defaults.optimizer.restarts),
            seed,
            ..defaults.optimizer
        },
        ..defaults
    }
}

pub fn fit(args: &FitArgs) -> Result<()> {
    match args.method {
        FitMethod::Kf => fit_kf(args),
        FitMethod::Imported => fit_imported(args),
    }
}

fn fit_kf(args: &FitArgs) -> Result<()> {
    let Some(data) = &args.data else {
        return Err(usage("--method kf needs --data"));
    };
    let Some(seed) = args.seed else {
        return Err(usage("--method kf needs --seed"));
    };
    let topology = load_topology(args.topology.as_deref())?;
    let dataset = MovementDataset::load_dir(data, topology)?;
    let system = build_system(&dataset.topology)?;
    let config = kf_config(args, seed);
    let classes = if args.class.is_empty() {
        dataset.classes()
    } else {
        args.class.clone()
    };

    let mut dir = OutputDir::create(&args.out)?;
    for label in &classes {
        if dataset.class_indices(label).is_empty() {
            return Err(gomkit::GomError::UnknownClass(label.clone()).into());
        }
        if args.per_sequence {
            for (i, seq) in dataset.of_class(label).enumerate() {
                let trained = fit_sequence(&system, seq, &config)?;
                let model = CoefficientModel::from_trained(
                    &dataset.topology,
                    &trained,
                    seq.frame_rate_hz(),
                    Some(label.clone()),
                )?;
                let subject = if seq.subject_id.is_empty() {
                    format!("seq{i}")
                } else {
                    file_stem(&seq.subject_id)
                };
                dir.write(
                    &format!("{}/{subject}.json", file_stem(label)),
                    model.to_json_string().as_bytes(),
                )?;
            }
        } else {
            let trained = fit_reference(&system, &dataset, label, &config)?;
            let fps = dataset
                .of_class(label)
                .next()
                .map(|s| s.frame_rate_hz())
                .unwrap_or(90.0);
            let model = CoefficientModel::from_trained(&dataset.topology, &trained, fps, Some(label.clone()))?;
            dir.write(&format!("{}.json", file_stem(label)), model.to_json_string().as_bytes())?;
        }
    }
    dir.finish(Manifest::new("fit", Some(seed), args)?)?;
    Ok(())
}

fn fit_imported(args: &FitArgs) -> Result<()> {
    let Some(path) = &args.coeffs else {
        return Err(usage("--method imported needs --coeffs"));
    };
    let model = CoefficientModel::load(path)?;
    if let Some(t) = &args.topology {
        if load_topology(Some(t))? != model.topology {
            bail!("{} was exported for a different topology", path.display());
        }
    }
    let mut dir = OutputDir::create(&args.out)?;
    let stem = model_stem(&model, path);
    dir.write(&format!("{stem}.json"), model.to_json_string().as_bytes())?;
    dir.finish(Manifest::new("fit", args.seed, args)?)?;
    Ok(())
}

#[derive(Serialize)]
struct ImportSummary<'a> {
    format: &'static str,
    version: u32,
    class_label: Option<&'a str>,
    source: Option<&'a str>,
    frame_rate_hz: f64,
    joints: usize,
    equations: usize,
    complete: bool,
    rows: usize,
}

pub fn import_coeffs(args: &ImportArgs) -> Result<()> {
    let model = CoefficientModel::load(&args.file)?;
    if let Some(t) = &args.topology {
        if load_topology(Some(t))? != model.topology {
            bail!("{} was exported for a different topology", args.file.display());
        }
    }
    let summary = ImportSummary {
        format: gomkit::exchange::FORMAT_NAME,
        version: gomkit::exchange::FORMAT_VERSION,
        class_label: model.class_label.as_deref(),
        source: model.source.as_deref(),
        frame_rate_hz: model.frame_rate_hz,
        joints: model.topology.joint_count(),
        equations: model.equations.len(),
        complete: model.equations.len() == model.topology.channel_count(),
        rows: model.len(),
    };
    emit(&serde_json::to_string(&summary)?)?;
    Ok(())
}

pub fn generate_cmd(args: &GenerateArgs) -> Result<()> {
    let model = CoefficientModel::load(&args.model)?;
    let seed = load_motion_csv(&args.seed_frames, &model.topology)?;
    if seed.len() < 2 {
        bail!("{} needs at least two frames", args.seed_frames.display());
    }
    let len = args.length.unwrap_or(seed.len());
    let generated = generate(&model, [seed.frame(0), seed.frame(1)], len)?;
    write_new_file(&args.out, generated.to_csv_string().as_bytes())?;
    let mut manifest = Manifest::new("generate", None, args)?;
    manifest.outputs = vec![args.out.file_name().unwrap_or_default().to_string_lossy().into_owned()];
    let mut manifest_path = args.out.clone().into_os_string();
    manifest_path.push(".manifest.json");
    write_new_file(Path::new(&manifest_path), &to_json_bytes(&manifest)?)?;
    Ok(())
}

pub fn metrics_cmd(args: &MetricsArgs) -> Result<()> {
    let topology = load_topology(args.topology.as_deref())?;
    let generated = load_motion_csv(&args.generated, &topology)?;
    let truth = load_motion_csv(&args.truth, &topology)?;
    let m = metrics(&generated, &truth)?;
    emit(&serde_json::to_string_pretty(&m)?)?;
    Ok(())
}

fn model_report(model: &CoefficientModel) -> Result<SignificanceReport> {
    let equations = model
        .equations
        .par_iter()
        .map(|e| trajectory_ttest(&e.equation, &e.trajectory))
        .collect::<gomkit::Result<Vec<_>>>()?;
    Ok(SignificanceReport {
        level: SIGNIFICANCE_LEVEL,
        fraction_threshold: SIGNIFICANT_FRACTION,
        equations,
    })
}

fn p_value_csv(report: &SignificanceReport) -> String {
    let mut s = String::from("target,slot,t,p_value\n");
    for eq in &report.equations {
        for slot in &eq.slots {
            for (t, p) in slot.p_values.iter().enumerate() {
                s.push_str(&format!("{},{},{t},{p}\n", eq.target, slot.name));
            }
        }
    }
    s
}

pub fn analyze(args: &AnalyzeArgs) -> Result<()> {
    let models = load_models(&args.model)?;
    let stems = model_stems(&models, &args.model);
    let mut dir = OutputDir::create(&args.out)?;
    for (model, stem) in models.iter().zip(&stems) {
        let report = model_report(model)?;
        dir.write_json(&format!("{stem}.significance.json"), &report)?;
        dir.write(&format!("{stem}.pvalues.csv"), p_value_csv(&report).as_bytes())?;
    }
    dir.finish(Manifest::new("analyze", None, args)?)?;
    Ok(())
}

pub fn select_sensors(args: &SelectArgs) -> Result<()> {
    let models = load_models(&args.model)?;
    let topology = &models[0].topology;
    if models.iter().any(|m| m.topology != *topology) {
        bail!("models were trained on different topologies");
    }
    let mut combined = SignificanceReport {
        level: SIGNIFICANCE_LEVEL,
        fraction_threshold: SIGNIFICANT_FRACTION,
        equations: Vec::new(),
    };
    for model in &models {
        combined.equations.extend(model_report(model)?.equations);
    }
    let ranking = rank_and_select(&combined, topology, args.top_k)?;
    let mut dir = OutputDir::create(&args.out)?;
    dir.write_json("sensor-set.json", &ranking)?;
    dir.finish(Manifest::new("select-sensors", None, args)?)?;
    emit(&serde_json::to_string(&ranking.selected_sensors)?)?;
    Ok(())
}

pub fn tolerance(args: &ToleranceArgs) -> Result<()> {
    let models = load_models(&args.model)?;
    if models.len() < 2 {
        bail!("tolerance bands need at least two repetitions");
    }
    let first = &models[0];
    for m in &models[1..] {
        if m.topology != first.topology || m.equations.len() != first.equations.len() {
            bail!("repetitions cover different equation sets");
        }
    }
    let bands = first
        .equations
        .par_iter()
        .enumerate()
        .map(|(i, e)| {
            let trajs: Vec<_> = models.iter().map(|m| &m.equations[i].trajectory).collect();
            if models.iter().any(|m| m.equations[i].equation != e.equation) {
                return Err(gomkit::GomError::Exchange(format!(
                    "{}: equations differ between repetitions",
                    e.equation.target_name
                )));
            }
            tolerance_intervals(&e.equation, &trajs, args.k_sigma)
        })
        .collect::<gomkit::Result<Vec<_>>>()?;
    let mut dir = OutputDir::create(&args.out)?;
    for band in &bands {
        dir.write(
            &format!("{}.csv", file_stem(&band.target)),
            band.to_csv_string().as_bytes(),
        )?;
    }
    dir.finish(Manifest::new("tolerance", None, args)?)?;
    Ok(())
}

/// Channel indices for a `--channels` value: a sensor-set file written by
/// `select-sensors`, a JSON list, or a comma-separated list. Joint names
/// expand to their three axes; `JOINT.axis` names select one channel.
fn resolve_channels(spec: &str, topology: &SkeletonTopology) -> Result<Vec<usize>> {
    let path = Path::new(spec);
    let names: Vec<String> = if path.extension().is_some_and(|e| e == "json") {
        let text = fs::read_to_string(path).with_context(|| format!("reading {spec}"))?;
        let value: serde_json::Value = serde_json::from_str(&text)?;
        if value.is_array() {
            serde_json::from_value(value)?
        } else {
            serde_json::from_value::<SensorRanking>(value)
                .context("expected a sensor-set file or a JSON list of names")?
                .selected_sensors
        }
    } else {
        spec.split(',')
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect()
    };
    let mut channels = Vec::new();
    for name in &names {
        let found: Vec<usize> = match topology.joint_index(name) {
            Some(j) => Axis::ALL.iter().map(|&a| topology.channel_index(j, a)).collect(),
            None => vec![topology.channel_by_name(name)?],
        };
        for c in found {
            if !channels.contains(&c) {
                channels.push(c);
            }
        }
    }
    if channels.is_empty() {
        bail!("no channels given");
    }
    Ok(channels)
}

pub fn recognize(args: &RecognizeArgs) -> Result<()> {
    let topology = load_topology(args.topology.as_deref())?;
    let dataset = MovementDataset::load_dir(&args.data, topology)?;
    let channels = resolve_channels(&args.channels, &dataset.topology)?;
    let report = evaluate_f1(&dataset, &channels, args.states, args.folds, args.seed)?;
    let mut dir = OutputDir::create(&args.out)?;
    dir.write_json("recognition.json", &report)?;
    dir.finish(Manifest::new("recognize", Some(args.seed), args)?)?;
    let summary: BTreeMap<&str, f64> = std::iter::once(("macro_f1", report.macro_f1))
        .chain(report.classes.iter().map(|c| (c.label.as_str(), c.f1)))
        .collect();
    emit(&serde_json::to_string(&summary)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn channel_lists_expand_joints() {
        let topo = SkeletonTopology::default();
        assert_eq!(resolve_channels("SP", &topo).unwrap(), vec![3, 4, 5]);
        assert_eq!(resolve_channels("SP.y, SP", &topo).unwrap(), vec![4, 3, 5]);
        assert!(resolve_channels("NOPE", &topo).is_err());
        assert!(resolve_channels(" , ", &topo).is_err());
    }

    #[test]
    fn channel_lists_from_json() {
        let dir = tempfile::tempdir().unwrap();
        let list = dir.path().join("list.json");
        fs::write(&list, r#"["H"]"#).unwrap();
        let topo = SkeletonTopology::default();
        assert_eq!(resolve_channels(list.to_str().unwrap(), &topo).unwrap(), vec![0, 1, 2]);
    }
}
