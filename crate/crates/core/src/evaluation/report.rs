//! Backend by prompt-variant result tables.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use serde::Serialize;

use super::{EvalReport, FailureClass};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportTables {
    /// `backend,prompt_variant,docs,tp,tn,fp,fn,accuracy,entity_removal_rate`
    pub summary_csv: String,
    /// `backend,prompt_variant,category,tp,tn,fp,fn,accuracy,entity_removal_rate`
    pub per_category_csv: String,
    /// Rows are backends, columns prompt variants, cells accuracy.
    pub accuracy_table: Vec<Vec<Option<String>>>,
    pub backends: Vec<String>,
    pub variants: Vec<String>,
    pub text: String,
    pub failures_json: String,
}

fn fmt3(x: f64) -> String {
    format!("{x:.3}")
}

fn first_seen<'a>(it: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for s in it {
        if !out.iter().any(|o| o == s) {
            out.push(s.to_string());
        }
    }
    out
}

fn csv_string(rows: Vec<Vec<String>>) -> String {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    for r in rows {
        w.write_record(&r).expect("writing to memory cannot fail");
    }
    String::from_utf8(w.into_inner().expect("flush to memory")).expect("csv output is UTF-8")
}

#[derive(Serialize)]
struct FailureRow<'a> {
    backend: &'a str,
    prompt_variant: &'a str,
    histogram: BTreeMap<&'static str, usize>,
}

/// Builds the result tables. Rows and columns keep first-seen order.
pub fn emit_report(reports: &[EvalReport]) -> ReportTables {
    let backends = first_seen(reports.iter().map(|r| r.backend.as_str()));
    let variants = first_seen(reports.iter().map(|r| r.prompt_variant.as_str()));

    let mut summary =
        vec![["backend", "prompt_variant", "docs", "tp", "tn", "fp", "fn", "accuracy", "entity_removal_rate"]
            .map(String::from)
            .to_vec()];
    let mut per_cat =
        vec![["backend", "prompt_variant", "category", "tp", "tn", "fp", "fn", "accuracy", "entity_removal_rate"]
            .map(String::from)
            .to_vec()];
    for r in reports {
        let c = r.counts;
        summary.push(vec![
            r.backend.clone(),
            r.prompt_variant.clone(),
            r.docs.to_string(),
            c.tp.to_string(),
            c.tn.to_string(),
            c.fp.to_string(),
            c.fn_.to_string(),
            r.accuracy.map(fmt3).unwrap_or_default(),
            fmt3(r.entity_removal_rate),
        ]);
        for (cat, c) in &r.per_category {
            per_cat.push(vec![
                r.backend.clone(),
                r.prompt_variant.clone(),
                cat.to_string(),
                c.tp.to_string(),
                c.tn.to_string(),
                c.fp.to_string(),
                c.fn_.to_string(),
                c.accuracy().map(fmt3).unwrap_or_default(),
                c.entity_removal_rate().map(fmt3).unwrap_or_default(),
            ]);
        }
    }

    let accuracy_table: Vec<Vec<Option<String>>> = backends
        .iter()
        .map(|b| {
            variants
                .iter()
                .map(|v| {
                    reports
                        .iter()
                        .find(|r| &r.backend == b && &r.prompt_variant == v)
                        .map(|r| r.accuracy.map(fmt3).unwrap_or_else(|| "n/a".into()))
                })
                .collect()
        })
        .collect();

    let text = render_text(&backends, &variants, &accuracy_table, reports);

    let failures: Vec<FailureRow> = reports
        .iter()
        .map(|r| FailureRow {
            backend: &r.backend,
            prompt_variant: &r.prompt_variant,
            histogram: FailureClass::ALL
                .iter()
                .map(|f| (f.as_str(), r.failures.get(f).copied().unwrap_or(0)))
                .collect(),
        })
        .collect();

    ReportTables {
        summary_csv: csv_string(summary),
        per_category_csv: csv_string(per_cat),
        accuracy_table,
        backends,
        variants,
        text,
        failures_json: serde_json::to_string_pretty(&failures).expect("histogram serializes"),
    }
}

fn render_text(
    backends: &[String],
    variants: &[String],
    table: &[Vec<Option<String>>],
    reports: &[EvalReport],
) -> String {
    let mut header = vec!["backend".to_string()];
    header.extend(variants.iter().cloned());
    let mut rows = vec![header];
    for (b, cells) in backends.iter().zip(table) {
        let mut row = vec![b.clone()];
        row.extend(cells.iter().map(|c| c.clone().unwrap_or_else(|| "-".into())));
        rows.push(row);
    }
    let widths: Vec<usize> =
        (0..rows[0].len()).map(|i| rows.iter().map(|r| r[i].chars().count()).max().unwrap_or(0)).collect();
    let mut out = String::from("Accuracy (TP+TN)/(TP+TN+FP+FN)\n\n");
    for (k, row) in rows.iter().enumerate() {
        let line: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(i, c)| if i == 0 { format!("{c:<w$}", w = widths[i]) } else { format!("{c:>w$}", w = widths[i]) })
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
        if k == 0 {
            out.push_str(&widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  "));
            out.push('\n');
        }
    }

    out.push_str("\nEntity removal rate TP/(TP+FN)\n\n");
    for r in reports {
        out.push_str(&format!("{} / {}: {}\n", r.backend, r.prompt_variant, fmt3(r.entity_removal_rate)));
    }

    out.push_str("\nPer-category removal rate\n\n");
    for r in reports {
        let cells: Vec<String> = r
            .per_category
            .iter()
            .filter_map(|(cat, c)| c.entity_removal_rate().map(|x| format!("{cat}={}", fmt3(x))))
            .collect();
        out.push_str(&format!("{} / {}: {}\n", r.backend, r.prompt_variant, cells.join(" ")));
    }

    out.push_str("\nFailure classes\n\n");
    for r in reports {
        let cells: Vec<String> = FailureClass::ALL
            .iter()
            .map(|f| format!("{}={}", f.as_str(), r.failures.get(f).copied().unwrap_or(0)))
            .collect();
        out.push_str(&format!("{} / {}: {}\n", r.backend, r.prompt_variant, cells.join(" ")));
    }
    out
}

impl ReportTables {
    /// Writes `summary.csv`, `per_category.csv`, `table.txt` and
    /// `failures.json` into `dir`.
    pub fn write_to(&self, dir: &Path) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        for (name, body) in [
            ("summary.csv", &self.summary_csv),
            ("per_category.csv", &self.per_category_csv),
            ("table.txt", &self.text),
            ("failures.json", &self.failures_json),
        ] {
            let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
            io::Write::write_all(&mut tmp, body.as_bytes())?;
            tmp.persist(dir.join(name)).map_err(|e| e.error)?;
        }
        Ok(())
    }
}
