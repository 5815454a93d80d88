//! File formats: dataset CSV with label maps, model/truth/graph/path JSON,
//! graph CSV and DOT, experiment results.
//!
//! Every writer is deterministic: the same values always produce the same bytes.

use std::collections::HashMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::data::{validate_dataset, CategoricalDataset, GrangerGraph};
use crate::error::{Error, Result};
use crate::evaluation::{ExperimentRow, ExperimentSummary};
use crate::fit::PenaltyKind;
use crate::matrix::Matrix;
use crate::mltd::{mltd_block_weights, MltdParams};
use crate::mtd::{gamma_weights, MtdParams};
use crate::scalar::Scalar;
use crate::simulate::{GroundTruth, Regime, Simulation};

/// Category labels of one series; index `k` holds the label of category `k`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeriesLabels {
    pub name: String,
    pub labels: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMap {
    pub series: Vec<SeriesLabels>,
}

impl LabelMap {
    pub fn names(&self) -> Vec<String> {
        self.series.iter().map(|s| s.name.clone()).collect()
    }
}

/// Default series names `x0, x1, ...`.
pub fn default_names(d: usize) -> Vec<String> {
    (0..d).map(|j| format!("x{j}")).collect()
}

/// Reads a dataset: one row per time point, one column per series.
///
/// A column whose cells all parse as nonnegative integers is used as is.
/// Any other column is treated as labels, numbered in order of first
/// appearance. Empty cells are rejected. `alphabet_sizes` overrides the
/// inferred sizes (`1 + max` index, at least 2).
pub fn read_dataset_csv<R: Read>(
    reader: R,
    has_header: bool,
    alphabet_sizes: Option<&[usize]>,
) -> Result<(CategoricalDataset, LabelMap)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Option<Vec<String>> = if has_header {
        Some(rdr.headers()?.iter().map(str::to_string).collect())
    } else {
        None
    };
    let mut cells: Vec<Vec<String>> = Vec::new();
    for record in rdr.records() {
        let record = record?;
        cells.push(record.iter().map(str::to_string).collect());
    }
    let d = header
        .as_ref()
        .map(Vec::len)
        .or_else(|| cells.first().map(Vec::len))
        .ok_or(Error::Empty)?;
    for (row, r) in cells.iter().enumerate() {
        if r.len() != d {
            return Err(Error::Ragged {
                row,
                found: r.len(),
                expected: d,
            });
        }
        if let Some(col) = r.iter().position(String::is_empty) {
            return Err(Error::MissingValue { row, col });
        }
    }
    let names = header.unwrap_or_else(|| default_names(d));
    let mut raw = vec![vec![0usize; d]; cells.len()];
    let mut series = Vec::with_capacity(d);
    for (col, name) in names.into_iter().enumerate() {
        let ints: Option<Vec<usize>> = cells.iter().map(|r| r[col].parse().ok()).collect();
        let labels = match ints {
            Some(ints) => {
                let top = ints.iter().copied().max().unwrap_or(0);
                for (row, v) in ints.into_iter().enumerate() {
                    raw[row][col] = v;
                }
                (0..=top).map(|k| k.to_string()).collect()
            }
            None => {
                let mut index: HashMap<&str, usize> = HashMap::new();
                let mut labels = Vec::new();
                for (row, r) in cells.iter().enumerate() {
                    let next = index.len();
                    let k = *index.entry(r[col].as_str()).or_insert_with(|| {
                        labels.push(r[col].clone());
                        next
                    });
                    raw[row][col] = k;
                }
                labels
            }
        };
        series.push(SeriesLabels { name, labels });
    }
    let data = validate_dataset(&raw, alphabet_sizes)?;
    Ok((data, LabelMap { series }))
}

/// Writes integer indices under a header of series names.
pub fn write_dataset_csv<W: Write>(data: &CategoricalDataset, names: &[String], writer: W) -> Result<()> {
    if names.len() != data.n_series() {
        return Err(Error::Shape(format!(
            "{} names for {} series",
            names.len(),
            data.n_series()
        )));
    }
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(names)?;
    for row in data.rows() {
        w.write_record(row.iter().map(usize::to_string))?;
    }
    w.flush()?;
    Ok(())
}

/// Serializes `value` as pretty JSON followed by a newline.
pub fn write_json<W: Write, V: Serialize + ?Sized>(value: &V, mut writer: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut writer, value)?;
    writer.write_all(b"\n")?;
    Ok(())
}

pub fn read_json<R: Read, V: serde::de::DeserializeOwned>(reader: R) -> Result<V> {
    Ok(serde_json::from_reader(reader)?)
}

/// One fitted or generating per-target model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    /// `"mtd"` or `"mltd"`.
    pub model: String,
    pub target: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    pub intercept: Vec<f64>,
    #[serde(rename = "Z")]
    pub z: Vec<Matrix<f64>>,
    /// MTD: `γ_j`; mLTD: `‖Z^j‖_F / √(m_i·m_j)`.
    pub gamma: Vec<f64>,
    pub lambda: Option<f64>,
    pub penalty: Option<PenaltyKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objective: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<crate::fit::FitStatus>,
}

impl ModelRecord {
    pub fn from_mtd<T: Scalar>(params: &MtdParams<T>, epsilon: T, lambda: Option<T>, penalty: Option<PenaltyKind>) -> Self {
        Self {
            model: "mtd".into(),
            target: params.target,
            epsilon: Some(epsilon.as_f64()),
            intercept: to_f64s(&params.intercept),
            z: params.pair_mats.iter().map(matrix_to_f64).collect(),
            gamma: to_f64s(&gamma_weights(params)),
            lambda: lambda.map(Scalar::as_f64),
            penalty,
            objective: None,
            status: None,
        }
    }

    pub fn from_mltd<T: Scalar>(params: &MltdParams<T>, lambda: Option<T>) -> Self {
        Self {
            model: "mltd".into(),
            target: params.target,
            epsilon: None,
            intercept: to_f64s(&params.intercept),
            z: params.pair_mats.iter().map(matrix_to_f64).collect(),
            gamma: to_f64s(&mltd_block_weights(params)),
            lambda: lambda.map(Scalar::as_f64),
            penalty: lambda.map(|_| PenaltyKind::GroupLasso),
            objective: None,
            status: None,
        }
    }

    /// Rebuilds MTD parameters; fails for an mLTD record.
    pub fn to_mtd(&self) -> Result<MtdParams<f64>> {
        if self.model != "mtd" {
            return Err(Error::Parse(format!("expected an mtd model, found '{}'", self.model)));
        }
        MtdParams::new(self.target, self.intercept.clone(), self.z.clone())
    }

    pub fn to_mltd(&self) -> Result<MltdParams<f64>> {
        if self.model != "mltd" {
            return Err(Error::Parse(format!("expected an mltd model, found '{}'", self.model)));
        }
        MltdParams::new_identifiable(self.target, self.intercept.clone(), self.z.clone())
    }
}

fn to_f64s<T: Scalar>(v: &[T]) -> Vec<f64> {
    v.iter().map(|x| x.as_f64()).collect()
}

fn matrix_to_f64<T: Scalar>(m: &Matrix<T>) -> Matrix<f64> {
    Matrix::from_vec(m.rows(), m.cols(), to_f64s(m.as_slice())).expect("same shape")
}

/// Ground truth written next to simulated data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub adjacency: Vec<Vec<u8>>,
    pub regime: String,
    pub seed: u64,
}

impl TruthRecord {
    pub fn from_simulation(sim: &Simulation) -> Self {
        Self {
            adjacency: sim
                .adjacency
                .iter()
                .map(|r| r.iter().map(|&a| u8::from(a)).collect())
                .collect(),
            regime: sim.spec.regime.name().to_string(),
            seed: sim.spec.seed,
        }
    }

    pub fn adjacency_bool(&self) -> Vec<Vec<bool>> {
        self.adjacency.iter().map(|r| r.iter().map(|&a| a != 0).collect()).collect()
    }
}

/// Generating model of a simulation: per-target models, or the VAR transition matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationModelRecord {
    pub regime: Regime,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub models: Option<Vec<ModelRecord>>,
    #[serde(rename = "A", default, skip_serializing_if = "Option::is_none")]
    pub transition: Option<Matrix<f64>>,
}

impl SimulationModelRecord {
    pub fn from_simulation(sim: &Simulation, epsilon: f64) -> Self {
        let (models, transition) = match &sim.truth {
            GroundTruth::Mtd(ps) => (
                Some(ps.iter().map(|p| ModelRecord::from_mtd(p, epsilon, None, None)).collect()),
                None,
            ),
            GroundTruth::Mltd(ps) => (Some(ps.iter().map(|p| ModelRecord::from_mltd(p, None)).collect()), None),
            GroundTruth::Var(a) => (None, Some(a.clone())),
        };
        Self {
            regime: sim.spec.regime,
            models,
            transition,
        }
    }
}

/// Graph as JSON: `weights[i][j]` is the strength of `j -> i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphRecord {
    pub nodes: Vec<String>,
    pub threshold: f64,
    pub weights: Matrix<f64>,
    pub adjacency: Vec<Vec<u8>>,
}

impl GraphRecord {
    pub fn new<T: Scalar>(graph: &GrangerGraph<T>, names: &[String]) -> Self {
        Self {
            nodes: names.to_vec(),
            threshold: graph.threshold().as_f64(),
            weights: matrix_to_f64(graph.weights()),
            adjacency: graph
                .adjacency()
                .iter()
                .map(|r| r.iter().map(|&a| u8::from(a)).collect())
                .collect(),
        }
    }
}

/// Long-form graph CSV: `source,target,weight,edge`, one row per ordered pair.
pub fn write_graph_csv<T: Scalar, W: Write>(graph: &GrangerGraph<T>, names: &[String], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["source", "target", "weight", "edge"])?;
    let d = graph.n_nodes();
    for i in 0..d {
        for j in 0..d {
            w.write_record([
                names[j].clone(),
                names[i].clone(),
                graph.weight(i, j).as_f64().to_string(),
                u8::from(graph.has_edge(i, j)).to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// DOT digraph with one `source -> target [weight=w]` line per edge.
pub fn write_graph_dot<T: Scalar, W: Write>(graph: &GrangerGraph<T>, names: &[String], mut writer: W) -> Result<()> {
    writeln!(writer, "digraph granger {{")?;
    for name in names {
        writeln!(writer, "  {};", dot_id(name))?;
    }
    let d = graph.n_nodes();
    for i in 0..d {
        for j in 0..d {
            if graph.has_edge(i, j) {
                writeln!(
                    writer,
                    "  {} -> {} [weight={}];",
                    dot_id(&names[j]),
                    dot_id(&names[i]),
                    graph.weight(i, j).as_f64()
                )?;
            }
        }
    }
    writeln!(writer, "}}")?;
    Ok(())
}

fn dot_id(name: &str) -> String {
    format!("\"{}\"", name.replace('\\', "\\\\").replace('"', "\\\""))
}

pub fn write_experiment_csv<W: Write>(rows: &[ExperimentRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_experiment_csv<R: Read>(reader: R) -> Result<Vec<ExperimentRow>> {
    let mut rdr = csv::Reader::from_reader(reader);
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

pub fn write_summary_json<W: Write>(summary: &[ExperimentSummary], writer: W) -> Result<()> {
    write_json(summary, writer)
}
