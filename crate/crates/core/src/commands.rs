//! The five pipeline commands. Each takes a resolved [`RunConfig`], reads
//! only the files it is given and writes only under `config.out`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use crate::analysis::{
    evaluate, render_confusion, render_table, report_csv, write_report, write_report_csv, MetricsReport,
};
use crate::base::{train_base, BaseCheckpoint, BaseModel};
use crate::config::{OracleScores, RunConfig};
use crate::dataset::{generate_lt, partition_groups, write_csv, Dataset, DatasetManifest, GroupPartition, MANIFEST_VERSION};
use crate::mem::{train_mem, MemCheckpoint, MemModel};
use crate::numeric::{FloatWidth, Matrix, Real};
use crate::seeds;

pub const RUN_FILE: &str = "run.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const BASE_FILE: &str = "base.json";
pub const MEM_FILE: &str = "mem.json";

/// Default input locations inside the output directory.
pub fn default_manifest(config: &RunConfig) -> PathBuf {
    config.out.join(MANIFEST_FILE)
}

pub fn default_base(config: &RunConfig) -> PathBuf {
    config.out.join(BASE_FILE)
}

pub fn default_mem(config: &RunConfig) -> PathBuf {
    config.out.join(MEM_FILE)
}

fn prepare_out(config: &RunConfig) -> Result<()> {
    fs::create_dir_all(&config.out).with_context(|| format!("creating output directory {}", config.out.display()))?;
    write_file(&config.out.join(RUN_FILE), &config.to_json())
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load_data(manifest_path: &Path) -> Result<(DatasetManifest, Dataset, Dataset)> {
    let manifest = DatasetManifest::read(manifest_path)
        .context("reading dataset manifest (run `gen-data` first?)")?;
    let (train, test) = manifest.load(manifest_path)?;
    Ok((manifest, train, test))
}

fn load_base<T: Real>(path: &Path, manifest: &DatasetManifest) -> Result<BaseModel<T>> {
    let ck = BaseCheckpoint::read(path).context("reading base checkpoint (run `train-base` first?)")?;
    let model: BaseModel<T> = ck.to_model()?;
    if model.input_dim() != manifest.feature_dim || model.num_classes() != manifest.num_classes {
        bail!(
            "{}: base checkpoint expects {} features and {} classes, but the dataset has {} and {}",
            path.display(),
            model.input_dim(),
            model.num_classes(),
            manifest.feature_dim,
            manifest.num_classes
        );
    }
    Ok(model)
}

fn load_mem<T: Real>(path: &Path, base: &BaseModel<T>) -> Result<MemModel<T>> {
    let ck = MemCheckpoint::read(path).context("reading mem checkpoint (run `train-mem` first?)")?;
    let model: MemModel<T> = ck.to_model()?;
    if model.repr_dim() != base.repr_dim() || model.num_classes() != base.num_classes() {
        bail!(
            "{}: mem checkpoint does not fit the base model ({} -> {} vs {} -> {})",
            path.display(),
            model.repr_dim(),
            model.num_classes(),
            base.repr_dim(),
            base.num_classes()
        );
    }
    Ok(model)
}

fn partition_for(config: &RunConfig, class_counts: &[usize]) -> Result<GroupPartition> {
    let strategy = config.partition.strategy()?;
    Ok(partition_groups(
        class_counts,
        strategy,
        seeds::derive(config.seed, seeds::PARTITION),
    )?)
}

pub fn gen_data(config: &RunConfig) -> Result<()> {
    prepare_out(config)?;
    let (train, test) = generate_lt(&config.data)?;
    write_csv(&train, &config.out.join("train.csv"))?;
    write_csv(&test, &config.out.join("test.csv"))?;
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        num_classes: train.num_classes(),
        feature_dim: train.feature_dim(),
        class_counts: train.class_counts.clone(),
        train_csv: "train.csv".into(),
        test_csv: "test.csv".into(),
        seed: config.seed,
    };
    manifest.write(&config.out.join(MANIFEST_FILE))?;
    println!(
        "wrote {} training and {} test samples ({} classes, counts {}..{}) to {}",
        train.len(),
        test.len(),
        train.num_classes(),
        train.class_counts.first().copied().unwrap_or(0),
        train.class_counts.last().copied().unwrap_or(0),
        config.out.display()
    );
    Ok(())
}

pub fn train_base_cmd(config: &RunConfig, manifest_path: &Path) -> Result<()> {
    match config.float {
        FloatWidth::F32 => train_base_typed::<f32>(config, manifest_path),
        FloatWidth::F64 => train_base_typed::<f64>(config, manifest_path),
    }
}

fn train_base_typed<T: Real>(config: &RunConfig, manifest_path: &Path) -> Result<()> {
    let (_, train, _) = load_data(manifest_path)?;
    prepare_out(config)?;
    let out = train_base::<T>(&train, &config.base)?;
    let mut log = String::from("epoch,loss\n");
    for (e, l) in out.epoch_losses.iter().enumerate() {
        writeln!(log, "{},{l:?}", e + 1).unwrap();
    }
    write_file(&config.out.join("base_loss.csv"), &log)?;
    write_file(
        &config.out.join(BASE_FILE),
        &BaseCheckpoint::from_model(&out.model, &config.base).to_json(),
    )?;
    if let Some(last) = out.epoch_losses.last() {
        println!("base model trained for {} epochs, final loss {last:.3e}", out.epoch_losses.len());
    }
    Ok(())
}

pub fn train_mem_cmd(config: &RunConfig, manifest_path: &Path, base_path: &Path) -> Result<()> {
    match config.float {
        FloatWidth::F32 => train_mem_typed::<f32>(config, manifest_path, base_path),
        FloatWidth::F64 => train_mem_typed::<f64>(config, manifest_path, base_path),
    }
}

fn train_mem_typed<T: Real>(config: &RunConfig, manifest_path: &Path, base_path: &Path) -> Result<()> {
    let (manifest, train, _) = load_data(manifest_path)?;
    let base = load_base::<T>(base_path, &manifest)?;
    let partition = partition_for(config, &train.class_counts)?;
    prepare_out(config)?;
    let out = train_mem(&base, &train, &partition, &config.mem)?;
    let mut log = String::from("epoch,total,reo,dac\n");
    for (e, l) in out.epoch_losses.iter().enumerate() {
        writeln!(log, "{},{:?},{:?},{:?}", e + 1, l.total, l.reo, l.dac).unwrap();
    }
    write_file(&config.out.join("mem_loss.csv"), &log)?;
    write_file(&config.out.join(MEM_FILE), &MemCheckpoint::from_model(&out.model).to_json())?;
    println!(
        "mem trained for {} epochs on groups of {:?} classes",
        out.epoch_losses.len(),
        partition.group_sizes()
    );
    Ok(())
}

/// Reports of the base model and of MEM on the test split.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub base: MetricsReport,
    pub mem: MetricsReport,
}

/// Scores both models on `test`. Predictions are argmaxes of the base
/// logits and of the group-scaled logits respectively.
pub fn evaluate_models<T: Real>(
    base: &BaseModel<T>,
    mem: &MemModel<T>,
    test: &Dataset,
    oracle: OracleScores,
) -> Result<Evaluation> {
    let partition = &mem.partition;
    let logits = base.logits(&base.encode(&test.features)?)?;
    let base_report = evaluate(&logits.argmax_rows(), &logits, &test.labels, partition)?;
    let pred = mem.predict(base, &test.features)?;
    let scores: &Matrix<T> = match oracle {
        OracleScores::BaseLogits => &logits,
        OracleScores::ScaledLogits => &pred.scaled_logits,
    };
    let mem_report = evaluate(&pred.classes, scores, &test.labels, partition)?;
    Ok(Evaluation {
        base: base_report,
        mem: mem_report,
    })
}

pub fn eval_cmd(config: &RunConfig, manifest_path: &Path, base_path: &Path, mem_path: &Path) -> Result<()> {
    match config.float {
        FloatWidth::F32 => eval_typed::<f32>(config, manifest_path, base_path, mem_path),
        FloatWidth::F64 => eval_typed::<f64>(config, manifest_path, base_path, mem_path),
    }
}

fn eval_typed<T: Real>(config: &RunConfig, manifest_path: &Path, base_path: &Path, mem_path: &Path) -> Result<()> {
    let (manifest, _, test) = load_data(manifest_path)?;
    let base = load_base::<T>(base_path, &manifest)?;
    let mem = load_mem::<T>(mem_path, &base)?;
    prepare_out(config)?;
    let ev = evaluate_models(&base, &mem, &test, config.eval.oracle_scores)?;
    write_report(&ev.base, &config.out.join("base_report.json"))?;
    write_report_csv(&ev.base, &config.out.join("base_report.csv"))?;
    write_report(&ev.mem, &config.out.join("mem_report.json"))?;
    write_report_csv(&ev.mem, &config.out.join("mem_report.csv"))?;
    let oracle = oracle_view(&ev.base);
    let table = render_table(&[("CE", &ev.base), ("MEM", &ev.mem), ("Oracle group", &oracle)]);
    write_file(&config.out.join("table.txt"), &table)?;
    print!("{table}");
    Ok(())
}

/// A report whose per-group accuracies are the oracle-group ones.
fn oracle_view(r: &MetricsReport) -> MetricsReport {
    let c = &r.counts;
    let correct: usize = c.oracle_correct.to_array().iter().sum();
    MetricsReport {
        overall: 100.0 * correct as f64 / c.total as f64,
        per_group: r.oracle_per_group,
        ..r.clone()
    }
}

/// Group confusion of the base model plus standard and oracle-group accuracy,
/// optionally for MEM too.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisReport {
    pub version: u32,
    pub group_sizes: [usize; 3],
    pub base: MetricsReport,
    pub mem: Option<MetricsReport>,
}

pub fn analyze_cmd(config: &RunConfig, manifest_path: &Path, base_path: &Path, mem_path: Option<&Path>) -> Result<()> {
    match config.float {
        FloatWidth::F32 => analyze_typed::<f32>(config, manifest_path, base_path, mem_path),
        FloatWidth::F64 => analyze_typed::<f64>(config, manifest_path, base_path, mem_path),
    }
}

fn analyze_typed<T: Real>(
    config: &RunConfig,
    manifest_path: &Path,
    base_path: &Path,
    mem_path: Option<&Path>,
) -> Result<()> {
    let (manifest, train, test) = load_data(manifest_path)?;
    let base = load_base::<T>(base_path, &manifest)?;
    let mem = mem_path.map(|p| load_mem::<T>(p, &base)).transpose()?;
    let partition = match &mem {
        Some(m) => m.partition.clone(),
        None => partition_for(config, &train.class_counts)?,
    };
    prepare_out(config)?;
    let logits = base.logits(&base.encode(&test.features)?)?;
    let base_report = evaluate(&logits.argmax_rows(), &logits, &test.labels, &partition)?;
    let mem_report = match &mem {
        Some(m) => Some(evaluate_models(&base, m, &test, config.eval.oracle_scores)?.mem),
        None => None,
    };
    let report = AnalysisReport {
        version: 1,
        group_sizes: partition.group_sizes(),
        base: base_report,
        mem: mem_report,
    };
    write_file(
        &config.out.join("analysis.json"),
        &(serde_json::to_string_pretty(&report).expect("report serializes") + "\n"),
    )?;
    write_file(&config.out.join("analysis_base.csv"), &report_csv(&report.base))?;
    let mut text = String::from("Misclassified samples by true group (rows) and predicted group (%), base model\n");
    text.push_str(&render_confusion(&report.base));
    text.push('\n');
    let oracle = oracle_view(&report.base);
    let mut rows = vec![("CE", &report.base), ("CE + oracle group", &oracle)];
    if let Some(m) = &report.mem {
        rows.push(("MEM", m));
    }
    text.push_str(&render_table(&rows));
    write_file(&config.out.join("analysis.txt"), &text)?;
    print!("{text}");
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_view_uses_oracle_counts() {
        let p = GroupPartition::from_groups(vec![1, 2, 3], crate::dataset::Strategy::RandomEven, None).unwrap();
        let s = Matrix::from_rows(&[vec![3.0, 1.0, 2.0], vec![0.0, 1.0, 0.5]]).unwrap();
        let r = evaluate(&s.argmax_rows(), &s, &[2, 1], &p).unwrap();
        let o = oracle_view(&r);
        assert_eq!(r.overall, 50.0);
        assert_eq!(o.overall, 100.0);
        assert_eq!(o.per_group.few, Some(100.0));
    }
}
