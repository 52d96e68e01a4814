//! Table emitters. CSV rounds floats to 3 decimals and writes `nan` where a
//! value is undefined; JSON keeps full precision and writes `null` instead.

use edgekit_core::curation::EdgenessStats;
use edgekit_core::datamodel::{Dataset, TimeOfDay};
use edgekit_core::metrics::EvalReport;
use edgekit_core::{Error, Result};
use serde::Serialize;

use crate::args::FormatArg;

fn fmt3(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else {
        format!("{v:.3}")
    }
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn pretty<T: Serialize>(doc: &T) -> String {
    let mut text = serde_json::to_string_pretty(doc).expect("table docs serialize");
    text.push('\n');
    text
}

#[derive(Serialize)]
struct OverallDoc<'a> {
    dataset: &'a str,
    count: u64,
    map: Option<f64>,
    map_wo_tp: Option<f64>,
}

pub fn overall(dataset: &str, count: u64, map: f64, map_wo_tp: f64, format: FormatArg) -> String {
    match format {
        FormatArg::Csv => format!(
            "dataset,count,map,map_wo_tp\n{},{count},{},{}\n",
            csv_field(dataset),
            fmt3(map),
            fmt3(map_wo_tp)
        ),
        FormatArg::Json => pretty(&OverallDoc {
            dataset,
            count,
            map: finite(map),
            map_wo_tp: finite(map_wo_tp),
        }),
    }
}

#[derive(Serialize)]
struct ClassRowDoc<'a> {
    class: u64,
    name: &'a str,
    annotations: u64,
    ap: f64,
}

pub fn per_class(d: &Dataset, report: &EvalReport, format: FormatArg) -> Result<String> {
    if report.ap_by_class.is_empty() {
        return Err(Error::Domain(
            "per_class layout: no annotated classes to report".into(),
        ));
    }
    let rows: Vec<ClassRowDoc<'_>> = report
        .ap_by_class
        .iter()
        .map(|(id, ap)| ClassRowDoc {
            class: *id,
            name: d.category(*id).map_or("?", |c| c.name.as_str()),
            annotations: report.counts_by_class.get(id).copied().unwrap_or(0),
            ap: *ap,
        })
        .collect();
    Ok(match format {
        FormatArg::Csv => {
            let mut text = String::from("class,name,annotations,ap\n");
            for row in &rows {
                text.push_str(&format!(
                    "{},{},{},{}\n",
                    row.class,
                    csv_field(row.name),
                    row.annotations,
                    fmt3(row.ap)
                ));
            }
            text
        }
        FormatArg::Json => pretty(&rows),
    })
}

#[derive(Serialize)]
struct PerTagDoc<'a> {
    setting: &'a str,
    #[serde(rename = "M")]
    morning: Option<f64>,
    #[serde(rename = "E")]
    evening: Option<f64>,
    #[serde(rename = "N")]
    night: Option<f64>,
}

/// Tag-wise mAP for the three underrepresented settings. A tag absent from
/// the dataset reads as undefined rather than 0.
pub fn per_tag(setting: &str, report: &EvalReport, format: FormatArg) -> String {
    let tag = |tod: TimeOfDay| report.map_by_tag.get(&tod).copied().unwrap_or(f64::NAN);
    let (m, e, n) = (
        tag(TimeOfDay::Morning),
        tag(TimeOfDay::Evening),
        tag(TimeOfDay::Night),
    );
    match format {
        FormatArg::Csv => format!(
            "setting,M,E,N\n{},{},{},{}\n",
            csv_field(setting),
            fmt3(m),
            fmt3(e),
            fmt3(n)
        ),
        FormatArg::Json => pretty(&PerTagDoc {
            setting,
            morning: finite(m),
            evening: finite(e),
            night: finite(n),
        }),
    }
}

pub fn edgeness(stats: &EdgenessStats, format: FormatArg) -> String {
    match format {
        FormatArg::Csv => format!(
            "count,mean,median,std\n{},{},{},{}\n",
            stats.count,
            fmt3(stats.mean),
            fmt3(stats.median),
            fmt3(stats.std)
        ),
        FormatArg::Json => pretty(stats),
    }
}
