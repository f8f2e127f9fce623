//! Run reports and their on-disk forms.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::RunError;
use crate::kernel::{write_trace, TraceRecord};
use crate::market::CostKind;
use crate::model::{Cloudlet, CloudletStatus};

use super::build::BuiltScenario;
use super::spec::ScenarioSpec;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CloudletRow {
    pub cloudlet_id: u32,
    pub vm_id: u32,
    pub owner: String,
    pub dc: String,
    pub batch: usize,
    pub length_mi: f64,
    pub submit: Option<f64>,
    pub start: Option<f64>,
    pub finish: Option<f64>,
    pub cpu_time: f64,
    pub status: CloudletStatus,
}

impl CloudletRow {
    pub fn turnaround(&self) -> Option<f64> {
        Some(self.finish? - self.submit?)
    }

    pub fn execution(&self) -> Option<f64> {
        Some(self.finish? - self.start?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OwnerSummary {
    pub owner: String,
    pub cloudlets: usize,
    pub finished: usize,
    pub failed: usize,
    pub avg_turnaround_s: f64,
    pub makespan_s: f64,
    pub total_cost: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BatchSummary {
    pub owner: String,
    pub batch: usize,
    pub size: usize,
    pub finished: usize,
    pub mean_execution_s: f64,
    pub mean_turnaround_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InvoiceRow {
    pub owner: String,
    pub dc: String,
    pub kind: CostKind,
    pub quantity: f64,
    pub rate: f64,
    pub amount: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MigrationRow {
    pub time: f64,
    pub vm_id: u32,
    pub from_dc: String,
    pub to_dc: String,
    pub cloudlets_moved: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProfileRow {
    pub host_count: u64,
    pub build_seconds: f64,
    pub peak_resident_bytes: u64,
    pub method: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunReport {
    pub scenario: ScenarioSpec,
    pub rows: Vec<CloudletRow>,
    pub avg_turnaround_s: f64,
    pub makespan_s: f64,
    pub total_cost: BTreeMap<String, f64>,
    pub owners: Vec<OwnerSummary>,
    pub batches: Vec<BatchSummary>,
    pub invoices: Vec<InvoiceRow>,
    pub migrations: Vec<MigrationRow>,
    pub warnings: Vec<String>,
    pub profile: ProfileRow,
    pub end_time: f64,
    pub events_delivered: u64,
    #[serde(skip)]
    pub trace: Vec<TraceRecord>,
}

/// Mean turnaround and makespan over the finished rows.
pub fn aggregates<'a>(rows: impl IntoIterator<Item = &'a CloudletRow>) -> (f64, f64) {
    let mut n = 0usize;
    let mut sum = 0.0;
    let mut first_submit = f64::INFINITY;
    let mut last_finish = f64::NEG_INFINITY;
    for r in rows {
        if let (Some(s), Some(f)) = (r.submit, r.finish) {
            n += 1;
            sum += f - s;
            first_submit = first_submit.min(s);
            last_finish = last_finish.max(f);
        }
    }
    if n == 0 {
        (0.0, 0.0)
    } else {
        (sum / n as f64, last_finish - first_submit)
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (n, s) = xs.fold((0usize, 0.0), |(n, s), x| (n + 1, s + x));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

impl RunReport {
    pub fn collect(built: &BuiltScenario) -> RunReport {
        let spec = &built.spec;
        let layout = &built.layout;
        let dc_name = |id| layout.dc_name(spec, id).unwrap_or("").to_string();

        let mut rows = Vec::new();
        for (bi, b) in spec.brokers.iter().enumerate() {
            let mut results: Vec<&Cloudlet> = built.broker(bi).results().iter().collect();
            results.sort_by_key(|c| c.id);
            for c in results {
                let finished = c.status == CloudletStatus::Finished;
                rows.push(CloudletRow {
                    cloudlet_id: c.id.0,
                    vm_id: c.vm.0,
                    owner: b.name.clone(),
                    dc: c.dc.map(dc_name).unwrap_or_default(),
                    batch: layout.batch_of.get(&c.id).copied().unwrap_or(0),
                    length_mi: c.length_mi,
                    submit: c.submit_time.map(|t| t.secs()),
                    start: c.start_time.filter(|_| finished).map(|t| t.secs()),
                    finish: c.finish_time.filter(|_| finished).map(|t| t.secs()),
                    cpu_time: c.cpu_time,
                    status: c.status,
                });
            }
        }

        let mut invoices = Vec::new();
        let mut migrations = Vec::new();
        let mut warnings = Vec::new();
        for (i, d) in spec.datacenters.iter().enumerate() {
            let dc = built.datacenter(i);
            for item in dc.line_items() {
                invoices.push(InvoiceRow {
                    owner: layout.broker_name(spec, item.owner).unwrap_or("").to_string(),
                    dc: d.name.clone(),
                    kind: item.kind,
                    quantity: item.quantity,
                    rate: item.rate,
                    amount: item.amount,
                });
            }
            for m in dc.migrations() {
                migrations.push(MigrationRow {
                    time: m.time,
                    vm_id: m.vm.0,
                    from_dc: dc_name(m.from),
                    to_dc: dc_name(m.to),
                    cloudlets_moved: m.cloudlets_moved,
                });
            }
            warnings.extend(dc.warnings().iter().map(|w| format!("{}: {w}", d.name)));
        }
        migrations.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.vm_id.cmp(&b.vm_id)));

        let mut total_cost: BTreeMap<String, f64> = spec.brokers.iter().map(|b| (b.name.clone(), 0.0)).collect();
        for inv in &invoices {
            *total_cost.entry(inv.owner.clone()).or_default() += inv.amount;
        }
        let mut owners = Vec::new();
        let mut batches = Vec::new();
        for b in &spec.brokers {
            let mine: Vec<&CloudletRow> = rows.iter().filter(|r| r.owner == b.name).collect();
            let (avg, makespan) = aggregates(mine.iter().copied());
            owners.push(OwnerSummary {
                owner: b.name.clone(),
                cloudlets: mine.len(),
                finished: mine.iter().filter(|r| r.status == CloudletStatus::Finished).count(),
                failed: mine.iter().filter(|r| r.status == CloudletStatus::Failed).count(),
                avg_turnaround_s: avg,
                makespan_s: makespan,
                total_cost: total_cost[&b.name],
            });
            let n_batches = mine.iter().map(|r| r.batch + 1).max().unwrap_or(0);
            for k in 0..n_batches {
                let group: Vec<&&CloudletRow> = mine.iter().filter(|r| r.batch == k).collect();
                batches.push(BatchSummary {
                    owner: b.name.clone(),
                    batch: k,
                    size: group.len(),
                    finished: group.iter().filter(|r| r.finish.is_some()).count(),
                    mean_execution_s: mean(group.iter().filter_map(|r| r.execution())),
                    mean_turnaround_s: mean(group.iter().filter_map(|r| r.turnaround())),
                });
            }
        }
        let (avg_turnaround_s, makespan_s) = aggregates(&rows);
        RunReport {
            scenario: spec.clone(),
            rows,
            avg_turnaround_s,
            makespan_s,
            total_cost,
            owners,
            batches,
            invoices,
            migrations,
            warnings,
            profile: built.profile.clone(),
            end_time: built.sim.clock().secs(),
            events_delivered: built.sim.stats().delivered,
            trace: built.sim.trace().to_vec(),
        }
    }

    /// Recomputes every aggregate from the rows.
    pub fn verify(&self) -> Result<(), String> {
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0);
        let (avg, makespan) = aggregates(&self.rows);
        if !close(avg, self.avg_turnaround_s) || !close(makespan, self.makespan_s) {
            return Err(format!(
                "aggregates ({}, {}) differ from rows ({avg}, {makespan})",
                self.avg_turnaround_s, self.makespan_s
            ));
        }
        for o in &self.owners {
            let (a, m) = aggregates(self.rows.iter().filter(|r| r.owner == o.owner));
            if !close(a, o.avg_turnaround_s) || !close(m, o.makespan_s) {
                return Err(format!("owner {} aggregates differ from rows", o.owner));
            }
            let cost: f64 = self.invoices.iter().filter(|i| i.owner == o.owner).map(|i| i.amount).sum();
            if !close(cost, o.total_cost) {
                return Err(format!("owner {} cost differs from invoice lines", o.owner));
            }
        }
        for inv in &self.invoices {
            if !close(inv.amount, inv.quantity * inv.rate) {
                return Err(format!("invoice line for {} is not quantity x rate", inv.owner));
            }
        }
        Ok(())
    }

    /// Number of finished cloudlets at each distinct finish instant.
    pub fn completion_series(&self) -> Vec<(f64, usize)> {
        let mut finishes: Vec<f64> = self.rows.iter().filter_map(|r| r.finish).collect();
        finishes.sort_by(f64::total_cmp);
        let mut out: Vec<(f64, usize)> = Vec::new();
        for (i, t) in finishes.into_iter().enumerate() {
            match out.last_mut() {
                Some(last) if last.0 == t => last.1 = i + 1,
                _ => out.push((t, i + 1)),
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl std::str::FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(format!("unknown format `{other}` (expected csv or json)")),
        }
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn csv_bytes<F>(header: &[&str], fill: F) -> Result<Vec<u8>, csv::Error>
where
    F: FnOnce(&mut csv::Writer<&mut Vec<u8>>) -> Result<(), csv::Error>,
{
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(header)?;
        fill(&mut w)?;
        w.flush()?;
    }
    Ok(buf)
}

pub fn cloudlets_csv(report: &RunReport) -> Vec<u8> {
    csv_bytes(&["cloudlet_id", "vm_id", "submit", "start", "finish", "cpu_time"], |w| {
        for r in &report.rows {
            w.write_record([
                r.cloudlet_id.to_string(),
                r.vm_id.to_string(),
                opt(r.submit),
                opt(r.start),
                opt(r.finish),
                r.cpu_time.to_string(),
            ])?;
        }
        Ok(())
    })
    .expect("in-memory csv")
}

pub fn invoices_csv(report: &RunReport) -> Vec<u8> {
    csv_bytes(&["owner", "kind", "quantity", "rate", "amount"], |w| {
        for i in &report.invoices {
            w.write_record([i.owner.clone(), i.kind.to_string(), i.quantity.to_string(), i.rate.to_string(), i.amount.to_string()])?;
        }
        Ok(())
    })
    .expect("in-memory csv")
}

pub fn migrations_csv(report: &RunReport) -> Vec<u8> {
    csv_bytes(&["time", "vm_id", "from_dc", "to_dc", "cloudlets_moved"], |w| {
        for m in &report.migrations {
            w.write_record([m.time.to_string(), m.vm_id.to_string(), m.from_dc.clone(), m.to_dc.clone(), m.cloudlets_moved.to_string()])?;
        }
        Ok(())
    })
    .expect("in-memory csv")
}

pub fn profile_csv(rows: &[ProfileRow]) -> Vec<u8> {
    csv_bytes(&["host_count", "build_seconds", "peak_resident_bytes", "method"], |w| {
        for p in rows {
            let method = match &p.error {
                Some(e) => format!("{} (failed: {e})", p.method),
                None => p.method.clone(),
            };
            w.write_record([p.host_count.to_string(), p.build_seconds.to_string(), p.peak_resident_bytes.to_string(), method])?;
        }
        Ok(())
    })
    .expect("in-memory csv")
}

#[derive(Serialize)]
struct Summary<'a> {
    seed: u64,
    avg_turnaround_s: f64,
    makespan_s: f64,
    total_cost: &'a BTreeMap<String, f64>,
    owners: &'a [OwnerSummary],
    batches: &'a [BatchSummary],
    cloudlets: usize,
    migrations: usize,
    completion_series: Vec<(f64, usize)>,
    warnings: &'a [String],
    profile: &'a ProfileRow,
    end_time: f64,
    events_delivered: u64,
    scenario: &'a ScenarioSpec,
}

pub fn summary_json(report: &RunReport) -> Vec<u8> {
    let s = Summary {
        seed: report.scenario.run.seed,
        avg_turnaround_s: report.avg_turnaround_s,
        makespan_s: report.makespan_s,
        total_cost: &report.total_cost,
        owners: &report.owners,
        batches: &report.batches,
        cloudlets: report.rows.len(),
        migrations: report.migrations.len(),
        completion_series: report.completion_series(),
        warnings: &report.warnings,
        profile: &report.profile,
        end_time: report.end_time,
        events_delivered: report.events_delivered,
        scenario: &report.scenario,
    };
    let mut out = serde_json::to_vec_pretty(&s).expect("summary serializes");
    out.push(b'\n');
    out
}

/// Writes every file to a temporary name first and renames only once all
/// of them were written, so a failure leaves earlier outputs untouched.
pub fn write_files_atomically(dir: &Path, files: &[(&str, Vec<u8>)]) -> Result<Vec<PathBuf>, RunError> {
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| RunError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut staged = Vec::new();
    for (name, bytes) in files {
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(dir))?;
        tmp.write_all(bytes).map_err(io_err(tmp.path()))?;
        tmp.as_file().sync_all().map_err(io_err(tmp.path()))?;
        staged.push((tmp, dir.join(name)));
    }
    let mut written = Vec::new();
    for (tmp, path) in staged {
        tmp.persist(&path).map_err(|e| RunError::Io {
            path: path.clone(),
            source: e.error,
        })?;
        written.push(path);
    }
    Ok(written)
}

/// Emits the report in the requested formats.
pub fn emit_reports(report: &RunReport, dir: &Path, formats: &[Format]) -> Result<Vec<PathBuf>, RunError> {
    report.verify().map_err(RunError::Report)?;
    let mut files: Vec<(&str, Vec<u8>)> = Vec::new();
    if formats.contains(&Format::Csv) {
        files.push(("cloudlets.csv", cloudlets_csv(report)));
        files.push(("migrations.csv", migrations_csv(report)));
        files.push(("invoices.csv", invoices_csv(report)));
        files.push(("profile.csv", profile_csv(std::slice::from_ref(&report.profile))));
    }
    if formats.contains(&Format::Json) {
        files.push(("summary.json", summary_json(report)));
    }
    if report.scenario.run.trace {
        let mut buf = Vec::new();
        write_trace(&report.trace, &mut buf).expect("in-memory trace");
        files.push(("trace.log", buf));
    }
    write_files_atomically(dir, &files)
}
