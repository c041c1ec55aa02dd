//! Pairwise method comparison and its report files.

use std::fmt;
use std::fs;
use std::path::Path;
use std::time::Instant;

use graft_core::{
    analyze, dare_merge, fuse_checkpoints, record_trace, task_arithmetic, ties_merge,
    weight_average, Checkpoint, GateConfig, Granularity,
};
use serde::{Deserialize, Serialize};

use super::{augment, evaluate, init_model, train_expert, ExpertSpec, SyntheticTask, TaskKind};
use crate::config::{BaselineSection, CompatSection, GateSection};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "graft-channel")]
    GraftChannel,
    #[serde(rename = "graft-block")]
    GraftBlock,
    #[serde(rename = "average")]
    Average,
    #[serde(rename = "task-arith")]
    TaskArith,
    #[serde(rename = "ties")]
    Ties,
    #[serde(rename = "dare")]
    Dare,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::GraftChannel,
        Method::GraftBlock,
        Method::Average,
        Method::TaskArith,
        Method::Ties,
        Method::Dare,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::GraftChannel => "graft-channel",
            Method::GraftBlock => "graft-block",
            Method::Average => "average",
            Method::TaskArith => "task-arith",
            Method::Ties => "ties",
            Method::Dare => "dare",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairSpec {
    pub name: String,
    pub task_a: TaskKind,
    pub task_b: TaskKind,
    pub seed_a: u64,
    pub seed_b: u64,
}

/// Everything a benchmark run depends on. Echoed verbatim into the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub pairs: Vec<PairSpec>,
    pub methods: Vec<Method>,
    pub hidden: Vec<usize>,
    pub input_dim: usize,
    pub size: usize,
    pub steps: usize,
    pub learning_rate: f64,
    /// Initialization seed shared by both experts of every pair.
    pub init_seed: u64,
    /// Held-out inputs traced per compatibility measurement.
    pub trace_samples: usize,
    pub gate: GateSection,
    pub baseline: BaselineSection,
    pub compat: CompatSection,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            pairs: vec![
                PairSpec {
                    name: "sin-cos".into(),
                    task_a: TaskKind::RegressionSin,
                    task_b: TaskKind::RegressionCos,
                    seed_a: 1,
                    seed_b: 2,
                },
                PairSpec {
                    name: "class-a-b".into(),
                    task_a: TaskKind::BinaryClassA,
                    task_b: TaskKind::BinaryClassB,
                    seed_a: 3,
                    seed_b: 4,
                },
            ],
            methods: Method::ALL.to_vec(),
            hidden: vec![16, 16],
            input_dim: 4,
            size: 256,
            steps: 400,
            learning_rate: 0.05,
            init_seed: 7,
            trace_samples: 16,
            gate: GateSection::default(),
            baseline: BaselineSection::default(),
            compat: CompatSection::default(),
        }
    }
}

impl BenchConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.pairs.is_empty() {
            return Err(Error::Config("bench needs at least one pair".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("bench needs at least one method".into()));
        }
        for (i, m) in self.methods.iter().enumerate() {
            if self.methods[..i].contains(m) {
                return Err(Error::Config(format!("method `{m}` listed twice")));
            }
        }
        for (i, p) in self.pairs.iter().enumerate() {
            if self.pairs[..i].iter().any(|q| q.name == p.name) {
                return Err(Error::Config(format!("pair `{}` listed twice", p.name)));
            }
        }
        if self.trace_samples == 0 {
            return Err(Error::Config("trace_samples must be at least 1".into()));
        }
        self.gate.to_gate_config()?;
        self.baseline.ties()?;
        self.baseline.dare()?;
        self.compat.validate()?;
        for p in &self.pairs {
            let (a, b) = self.expert_specs(p);
            a.validate()?;
            b.validate()?;
        }
        Ok(())
    }

    pub fn expert_specs(&self, pair: &PairSpec) -> (ExpertSpec, ExpertSpec) {
        let spec = |kind, seed| ExpertSpec {
            hidden: self.hidden.clone(),
            steps: self.steps,
            learning_rate: self.learning_rate,
            seed: self.init_seed,
            task: SyntheticTask {
                kind,
                seed,
                input_dim: self.input_dim,
                size: self.size,
            },
        };
        (
            spec(pair.task_a, pair.seed_a),
            spec(pair.task_b, pair.seed_b),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRow {
    pub method: Method,
    pub loss_task_a: f64,
    pub loss_task_b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertLosses {
    pub a_on_task_a: f64,
    pub a_on_task_b: f64,
    pub b_on_task_a: f64,
    pub b_on_task_b: f64,
}

/// Compatibility score of each expert traced on each task's held-out inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairCompatibility {
    pub a_on_task_a: f64,
    pub a_on_task_b: f64,
    pub b_on_task_a: f64,
    pub b_on_task_b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairOutcome {
    pub name: String,
    pub task_a: TaskKind,
    pub task_b: TaskKind,
    pub experts: ExpertLosses,
    pub compatibility: PairCompatibility,
    pub methods: Vec<MethodRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodTiming {
    pub pair: String,
    /// A method name, or `train` / `compat` for the shared stages.
    pub stage: String,
    pub seconds: f64,
}

/// Wall-clock measurements, kept apart from the report so that the report
/// stays byte-for-byte reproducible.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub entries: Vec<MethodTiming>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub config: BenchConfig,
    pub pairs: Vec<PairOutcome>,
    #[serde(skip)]
    pub timings: Timings,
}

#[derive(Serialize)]
struct CsvRow<'a> {
    pair: &'a str,
    method: Method,
    loss_task_a: f64,
    loss_task_b: f64,
}

impl ComparisonReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for p in &self.pairs {
            for row in &p.methods {
                w.serialize(CsvRow {
                    pair: &p.name,
                    method: row.method,
                    loss_task_a: row.loss_task_a,
                    loss_task_b: row.loss_task_b,
                })?;
            }
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::Format(format!("csv flush failed: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    /// Writes `report.json`, `report.csv` and `timings.json` into `dir`,
    /// creating it if needed.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, body: String| {
            let path = dir.join(name);
            fs::write(&path, body).map_err(|e| Error::io(&path, e))
        };
        write("report.json", self.to_json()?)?;
        write("report.csv", self.to_csv()?)?;
        let mut timings = serde_json::to_string_pretty(&self.timings)?;
        timings.push('\n');
        write("timings.json", timings)
    }
}

/// Gate configuration used by a graft method, `None` for the baselines.
pub fn method_gate_config(method: Method, gate: &GateSection) -> Result<Option<GateConfig>> {
    let mut cfg = gate.to_gate_config()?;
    cfg.granularity = match method {
        Method::GraftChannel => Granularity::Channel,
        Method::GraftBlock => Granularity::Block(gate.block_size),
        _ => return Ok(None),
    };
    Ok(Some(cfg))
}

/// Merges two experts trained from `init` with one method.
pub fn merge_with(
    method: Method,
    init: &Checkpoint,
    a: &Checkpoint,
    b: &Checkpoint,
    gate: &GateSection,
    baseline: &BaselineSection,
) -> Result<Checkpoint> {
    if let Some(cfg) = method_gate_config(method, gate)? {
        return Ok(fuse_checkpoints(a, b, &cfg)?);
    }
    let experts = [a.clone(), b.clone()];
    let merged = match method {
        Method::Average => weight_average(&experts)?,
        Method::TaskArith => task_arithmetic(init, &experts, baseline.lambda)?,
        Method::Ties => ties_merge(init, &experts, &baseline.ties()?, baseline.lambda)?,
        Method::Dare => dare_merge(init, &experts, &baseline.dare()?, baseline.lambda)?,
        Method::GraftChannel | Method::GraftBlock => unreachable!("handled above"),
    };
    Ok(merged)
}

/// Compatibility score of `model` traced on the first `k` held-out inputs of
/// `task`.
pub fn traced_compatibility(
    model: &Checkpoint,
    task: &SyntheticTask,
    k: usize,
    compat: &CompatSection,
) -> Result<f64> {
    let eval = task.eval_split()?;
    let inputs = augment(&eval.inputs[..k.min(eval.len())]);
    let trace = record_trace(model, &inputs, compat.epsilon)?;
    Ok(analyze(&trace, compat.threshold)?.score)
}

fn timed<T>(
    timings: &mut Timings,
    pair: &str,
    stage: &str,
    f: impl FnOnce() -> Result<T>,
) -> Result<T> {
    let start = Instant::now();
    let out = f()?;
    timings.entries.push(MethodTiming {
        pair: pair.to_string(),
        stage: stage.to_string(),
        seconds: start.elapsed().as_secs_f64(),
    });
    Ok(out)
}

/// Trains each pair's experts from a shared initialization, merges them with
/// every configured method and evaluates each result on both tasks.
pub fn run_comparison(cfg: &BenchConfig) -> Result<ComparisonReport> {
    cfg.validate()?;
    let mut timings = Timings::default();
    let mut pairs = Vec::with_capacity(cfg.pairs.len());
    for pair in &cfg.pairs {
        let (spec_a, spec_b) = cfg.expert_specs(pair);
        let (task_a, task_b) = (spec_a.task, spec_b.task);
        log::info!("pair `{}`: training experts", pair.name);
        let (init, a, b) = timed(&mut timings, &pair.name, "train", || {
            Ok((
                init_model(&spec_a)?,
                train_expert(&spec_a)?,
                train_expert(&spec_b)?,
            ))
        })?;

        let experts = ExpertLosses {
            a_on_task_a: evaluate(&a, &task_a)?,
            a_on_task_b: evaluate(&a, &task_b)?,
            b_on_task_a: evaluate(&b, &task_a)?,
            b_on_task_b: evaluate(&b, &task_b)?,
        };
        let k = cfg.trace_samples;
        let compatibility = timed(&mut timings, &pair.name, "compat", || {
            Ok(PairCompatibility {
                a_on_task_a: traced_compatibility(&a, &task_a, k, &cfg.compat)?,
                a_on_task_b: traced_compatibility(&a, &task_b, k, &cfg.compat)?,
                b_on_task_a: traced_compatibility(&b, &task_a, k, &cfg.compat)?,
                b_on_task_b: traced_compatibility(&b, &task_b, k, &cfg.compat)?,
            })
        })?;

        let mut methods = Vec::with_capacity(cfg.methods.len());
        for &method in &cfg.methods {
            let merged = timed(&mut timings, &pair.name, method.as_str(), || {
                merge_with(method, &init, &a, &b, &cfg.gate, &cfg.baseline)
            })?;
            let row = MethodRow {
                method,
                loss_task_a: evaluate(&merged, &task_a)?,
                loss_task_b: evaluate(&merged, &task_b)?,
            };
            log::debug!(
                "pair `{}` {method}: {:.6} / {:.6}",
                pair.name,
                row.loss_task_a,
                row.loss_task_b
            );
            methods.push(row);
        }
        pairs.push(PairOutcome {
            name: pair.name.clone(),
            task_a: pair.task_a,
            task_b: pair.task_b,
            experts,
            compatibility,
            methods,
        });
    }
    Ok(ComparisonReport {
        config: cfg.clone(),
        pairs,
        timings,
    })
}
