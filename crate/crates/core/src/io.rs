//! CSV ingestion, model persistence and the batch operations behind the CLI.
//!
//! Input CSVs carry a `group` column, output columns `y0..y{k-1}` and an
//! optional integer `label` column; any other columns are carried through
//! untouched by `transform`. Fitted models are stored as a versioned JSON
//! document whose numbers round-trip exactly.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::barycenter::DEFAULT_ORACLE_CAP;
use crate::error::{Error, Result};
use crate::metrics::{argmax, evaluate, FairnessReport};
use crate::postprocess::{
    validate_alpha, EqualizedPostprocessor, FittedPostprocessor, GroupedDataset, Mode, Notion,
    Record, Transformed,
};
use crate::synth::{self, Scenario};

pub const FORMAT_VERSION: u32 = 1;

/// A parsed CSV file: the dataset plus what is needed to write it back.
#[derive(Debug, Clone)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
    /// Column index of `y{j}` at position `j`.
    pub y_columns: Vec<usize>,
    pub dataset: GroupedDataset,
}

pub fn read_table(path: &Path) -> Result<Table> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)?;
    let headers: Vec<String> = reader
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if headers.iter().all(|h| h.is_empty()) {
        return Err(Error::Input(format!(
            "{}: empty file or missing header",
            path.display()
        )));
    }
    let group_col = headers
        .iter()
        .position(|h| h == "group")
        .ok_or_else(|| Error::Input("missing required column `group`".into()))?;
    let label_col = headers.iter().position(|h| h == "label");

    let mut indexed: Vec<(usize, usize)> = headers
        .iter()
        .enumerate()
        .filter_map(|(c, h)| {
            let j = h.strip_prefix('y')?;
            (!j.is_empty() && j.bytes().all(|b| b.is_ascii_digit()))
                .then(|| j.parse::<usize>().ok().map(|j| (j, c)))
                .flatten()
        })
        .collect();
    indexed.sort_unstable();
    if indexed.is_empty() {
        return Err(Error::Input("missing output columns `y0..`".into()));
    }
    for (want, &(j, _)) in indexed.iter().enumerate() {
        if j != want {
            return Err(Error::Input(format!(
                "output columns must be y0..y{}; column y{want} is missing or duplicated",
                indexed.len() - 1
            )));
        }
    }
    let y_columns: Vec<usize> = indexed.into_iter().map(|(_, c)| c).collect();

    let mut rows = Vec::new();
    let mut records = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        if rec.len() != headers.len() {
            return Err(Error::Input(format!(
                "row {row}: expected {} fields, found {}",
                headers.len(),
                rec.len()
            )));
        }
        let mut output = Vec::with_capacity(y_columns.len());
        for &c in &y_columns {
            let raw = rec[c].trim();
            let v: f64 = raw.parse().map_err(|_| {
                Error::Input(format!(
                    "row {row}, column {}: cannot parse {raw:?} as a number",
                    headers[c]
                ))
            })?;
            if !v.is_finite() {
                return Err(Error::Input(format!(
                    "row {row}, column {}: non-finite value {raw:?}",
                    headers[c]
                )));
            }
            output.push(v);
        }
        let label = match label_col.map(|c| rec[c].trim()) {
            None | Some("") => None,
            Some(raw) => Some(raw.parse().map_err(|_| {
                Error::Input(format!(
                    "row {row}, column label: {raw:?} is not a class index"
                ))
            })?),
        };
        records.push(Record {
            output,
            group: rec[group_col].to_string(),
            label,
        });
        rows.push(rec.iter().map(str::to_string).collect());
    }
    if records.is_empty() {
        return Err(Error::Input(format!("{}: no data rows", path.display())));
    }
    Ok(Table {
        headers,
        rows,
        y_columns,
        dataset: GroupedDataset::new(records)?,
    })
}

pub fn ingest_csv(path: &Path) -> Result<GroupedDataset> {
    read_table(path).map(|t| t.dataset)
}

/// Write records with columns `group,y0..,[label]`.
pub fn write_dataset(data: &GroupedDataset, path: &Path) -> Result<()> {
    let has_labels = data.records().iter().any(|r| r.label.is_some());
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["group".to_string()];
    header.extend((0..data.dim()).map(|j| format!("y{j}")));
    if has_labels {
        header.push("label".into());
    }
    w.write_record(&header)?;
    for r in data.records() {
        let mut row = vec![r.group.clone()];
        row.extend(r.output.iter().map(f64::to_string));
        if has_labels {
            row.push(r.label.map(|l| l.to_string()).unwrap_or_default());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupEntry {
    pub id: String,
    pub weight: f64,
    /// Row-major `n_s x k`.
    pub supports: Vec<f64>,
    /// Row-major `n_s x k`.
    pub targets: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelComponent {
    /// Class label the component was fit on; absent for the plain notion.
    pub label: Option<usize>,
    pub dimension: usize,
    pub mode: Mode,
    pub seed: u64,
    pub bandwidth: f64,
    pub groups: Vec<GroupEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub format_version: u32,
    pub notion: String,
    pub components: Vec<ModelComponent>,
}

fn component(fitted: &FittedPostprocessor, label: Option<usize>) -> ModelComponent {
    ModelComponent {
        label,
        dimension: fitted.dim(),
        mode: fitted.mode(),
        seed: fitted.seed(),
        bandwidth: fitted.bandwidth(),
        groups: fitted
            .groups()
            .iter()
            .map(|g| GroupEntry {
                id: g.id().to_string(),
                weight: g.weight(),
                supports: g.supports().iter().copied().collect(),
                targets: g.targets().iter().copied().collect(),
            })
            .collect(),
    }
}

fn unflatten(flat: &[f64], k: usize, what: &str, id: &str) -> Result<Vec<Vec<f64>>> {
    if k == 0 || !flat.len().is_multiple_of(k) {
        return Err(Error::Input(format!(
            "group {id:?}: {what} has {} values, not a multiple of dimension {k}",
            flat.len()
        )));
    }
    Ok(flat.chunks(k).map(<[f64]>::to_vec).collect())
}

fn restore(c: &ModelComponent) -> Result<FittedPostprocessor> {
    let mut groups = Vec::with_capacity(c.groups.len());
    for g in &c.groups {
        let supports = unflatten(&g.supports, c.dimension, "supports", &g.id)?;
        let targets = unflatten(&g.targets, c.dimension, "targets", &g.id)?;
        if supports.len() != targets.len() {
            return Err(Error::Input(format!(
                "group {:?}: {} supports but {} targets",
                g.id,
                supports.len(),
                targets.len()
            )));
        }
        groups.push((g.id.clone(), g.weight, supports, targets));
    }
    FittedPostprocessor::from_parts(c.dimension, groups, c.mode, c.seed, c.bandwidth)
}

/// A fitted model of either notion.
#[derive(Debug, Clone)]
pub enum Model {
    Plain(FittedPostprocessor),
    Equalized(EqualizedPostprocessor),
}

impl Model {
    pub fn fit(
        data: &GroupedDataset,
        notion: Notion,
        mode: Mode,
        seed: u64,
        bandwidth: Option<f64>,
    ) -> Result<Self> {
        let with_h = |f: FittedPostprocessor| match bandwidth {
            Some(h) => f.with_bandwidth(h),
            None => Ok(f),
        };
        match notion {
            Notion::Plain => Ok(Model::Plain(with_h(FittedPostprocessor::fit(
                data, mode, seed,
            )?)?)),
            _ => {
                let eq = EqualizedPostprocessor::fit(data, notion, mode, seed)?;
                let per_label = eq
                    .per_label()
                    .iter()
                    .map(|(&y, f)| with_h(f.clone()).map(|f| (y, f)))
                    .collect::<Result<_>>()?;
                Ok(Model::Equalized(EqualizedPostprocessor::from_parts(
                    notion, per_label,
                )?))
            }
        }
    }

    pub fn notion(&self) -> Notion {
        match self {
            Model::Plain(_) => Notion::Plain,
            Model::Equalized(e) => e.notion(),
        }
    }

    /// `(label, post-processor)` pairs; the label is `None` for the plain notion.
    pub fn components(&self) -> Vec<(Option<usize>, &FittedPostprocessor)> {
        match self {
            Model::Plain(f) => vec![(None, f)],
            Model::Equalized(e) => e.per_label().iter().map(|(&y, f)| (Some(y), f)).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.components()[0].1.dim()
    }

    pub fn bandwidth(&self) -> f64 {
        self.components()[0].1.bandwidth()
    }

    /// Transform one record. Equalized models route by the argmax of the
    /// output.
    pub fn transform(
        &self,
        output: &[f64],
        group: &str,
        alpha: f64,
        bandwidth: f64,
    ) -> Result<Transformed> {
        match self {
            Model::Plain(f) => f.transform(output, group, alpha, bandwidth),
            Model::Equalized(e) => e.transform(output, group, argmax(output), alpha, bandwidth),
        }
    }

    pub fn to_document(&self) -> ModelDocument {
        ModelDocument {
            format_version: FORMAT_VERSION,
            notion: self.notion().to_string(),
            components: self
                .components()
                .into_iter()
                .map(|(y, f)| component(f, y))
                .collect(),
        }
    }

    pub fn from_document(doc: &ModelDocument) -> Result<Self> {
        if doc.format_version != FORMAT_VERSION {
            return Err(Error::FormatVersion(doc.format_version));
        }
        let notion: Notion = doc.notion.parse()?;
        let first = doc
            .components
            .first()
            .ok_or_else(|| Error::Input("model document has no components".into()))?;
        for c in &doc.components {
            crate::discrete_ot::check_dim(first.dimension, c.dimension)?;
        }
        match notion {
            Notion::Plain => {
                if doc.components.len() != 1 || first.label.is_some() {
                    return Err(Error::Input(
                        "plain model needs exactly one unlabeled component".into(),
                    ));
                }
                Ok(Model::Plain(restore(first)?))
            }
            _ => {
                let mut per_label = std::collections::BTreeMap::new();
                for c in &doc.components {
                    let y = c.label.ok_or_else(|| {
                        Error::Input("equalized model component without a label".into())
                    })?;
                    if per_label.insert(y, restore(c)?).is_some() {
                        return Err(Error::Input(format!("duplicate component for label {y}")));
                    }
                }
                Ok(Model::Equalized(EqualizedPostprocessor::from_parts(
                    notion, per_label,
                )?))
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut w, &self.to_document())?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let doc: ModelDocument =
            serde_json::from_reader(std::io::BufReader::new(File::open(path)?))?;
        Self::from_document(&doc)
    }
}

/// Settings shared by the batch operations.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub alphas: Vec<f64>,
    /// Kernel bandwidth; the model's stored bandwidth when absent.
    pub bandwidth: Option<f64>,
    pub mode: Mode,
    pub seed: u64,
    pub oracle_cap: u128,
    pub notion: Notion,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            alphas: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            bandwidth: None,
            mode: Mode::Barycentric,
            seed: 0,
            oracle_cap: DEFAULT_ORACLE_CAP,
            notion: Notion::Plain,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alphas.is_empty() {
            return Err(Error::Input("alpha grid is empty".into()));
        }
        for &a in &self.alphas {
            validate_alpha(a)?;
        }
        if self.alphas.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Input("alpha grid must be sorted ascending".into()));
        }
        if let Some(h) = self.bandwidth {
            crate::kernel::validate_bandwidth(h)?;
        }
        Ok(())
    }
}

/// Parse a comma-separated alpha list such as `0,0.25,1`.
pub fn parse_alphas(list: &str) -> Result<Vec<f64>> {
    list.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::Input(format!("cannot parse alpha {s:?}")))
        })
        .collect()
}

/// Fit on `input`, write the model document to `model`, and log group
/// sizes, weights, the barycenter objective and wall time to `log`.
pub fn run_fit(input: &Path, model: &Path, cfg: &RunConfig, log: &mut dyn Write) -> Result<Model> {
    cfg.validate()?;
    let start = Instant::now();
    let data = ingest_csv(input)?;
    let fitted = Model::fit(&data, cfg.notion, cfg.mode, cfg.seed, cfg.bandwidth)?;
    fitted.save(model)?;
    for (label, f) in fitted.components() {
        if let Some(y) = label {
            writeln!(log, "label {y}:")?;
        }
        for g in f.groups() {
            writeln!(
                log,
                "  group {:?}: n = {}, p = {:.6}",
                g.id(),
                g.supports().nrows(),
                g.weight()
            )?;
        }
        if let Some(psi) = f.barycenter_objective() {
            writeln!(log, "  barycenter objective = {psi:.6e}")?;
        }
    }
    writeln!(
        log,
        "fit finished in {:.3} s",
        start.elapsed().as_secs_f64()
    )?;
    Ok(fitted)
}

fn transform_table(
    table: &Table,
    model: &Model,
    alpha: f64,
    bandwidth: f64,
) -> Result<Vec<Transformed>> {
    crate::discrete_ot::check_dim(model.dim(), table.dataset.dim())?;
    table
        .dataset
        .records()
        .iter()
        .map(|r| model.transform(&r.output, &r.group, alpha, bandwidth))
        .collect()
}

/// Transform every row of `input` and write a CSV mirroring it with the
/// output columns replaced and an `in_sample` flag per row.
pub fn run_transform(
    input: &Path,
    model: &Path,
    output: &Path,
    alpha: f64,
    bandwidth: Option<f64>,
) -> Result<()> {
    validate_alpha(alpha)?;
    let model = Model::load(model)?;
    let table = read_table(input)?;
    let h = bandwidth.unwrap_or_else(|| model.bandwidth());
    let results = transform_table(&table, &model, alpha, h)?;

    let flag_col = table.headers.iter().position(|h| h == "in_sample");
    let mut headers = table.headers.clone();
    if flag_col.is_none() {
        headers.push("in_sample".into());
    }
    let mut w = csv::Writer::from_path(output)?;
    w.write_record(&headers)?;
    for (row, t) in table.rows.iter().zip(&results) {
        let mut row = row.clone();
        for (&c, v) in table.y_columns.iter().zip(&t.output) {
            row[c] = v.to_string();
        }
        match flag_col {
            Some(c) => row[c] = t.in_sample.to_string(),
            None => row.push(t.in_sample.to_string()),
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Compare `processed` with `original` and write the report as JSON.
pub fn run_evaluate(
    original: &Path,
    processed: &Path,
    oracle_cap: u128,
    out: &mut dyn Write,
) -> Result<FairnessReport> {
    let report = evaluate(
        &ingest_csv(original)?,
        &ingest_csv(processed)?,
        None,
        oracle_cap,
    )?;
    serde_json::to_writer_pretty(&mut *out, &report)?;
    writeln!(out)?;
    Ok(report)
}

/// One row of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub alpha: f64,
    #[serde(rename = "U")]
    pub unfairness_u: f64,
    #[serde(rename = "R")]
    pub error_r: f64,
    pub dp_gap: Option<f64>,
}

/// Evaluate the model on `input` at every alpha of the grid.
pub fn sweep(data_table: &Table, model: &Model, cfg: &RunConfig) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let h = cfg.bandwidth.unwrap_or_else(|| model.bandwidth());
    let original = &data_table.dataset;
    cfg.alphas
        .iter()
        .map(|&alpha| {
            let outs = transform_table(data_table, model, alpha, h)?;
            let processed = GroupedDataset::new(
                original
                    .records()
                    .iter()
                    .zip(outs)
                    .map(|(r, t)| Record {
                        output: t.output,
                        group: r.group.clone(),
                        label: r.label,
                    })
                    .collect(),
            )?;
            let report = evaluate(original, &processed, Some(alpha), cfg.oracle_cap)?;
            Ok(SweepRow {
                alpha,
                unfairness_u: report.unfairness_u,
                error_r: report.error_r,
                dp_gap: report.dp_gap,
            })
        })
        .collect()
}

/// Write the sweep as CSV with columns `alpha,U,R,dp_gap`.
pub fn run_sweep(
    input: &Path,
    model: &Path,
    output: &Path,
    cfg: &RunConfig,
) -> Result<Vec<SweepRow>> {
    let model = Model::load(model)?;
    let table = read_table(input)?;
    let rows = sweep(&table, &model, cfg)?;
    let mut w = csv::Writer::from_path(output)?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(rows)
}

pub fn run_synth(scenario: Scenario, n: usize, seed: u64, output: &Path) -> Result<GroupedDataset> {
    let data = synth::generate(scenario, n, seed)?;
    write_dataset(&data, output)?;
    Ok(data)
}
