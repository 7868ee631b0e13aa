use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::plant::{FailCause, Outcome, TrialVerdict};
use crate::sim::SimTime;

use super::sweep::{CellVerdict, SeedOutcome, SweepMatrix, VerdictClass};
use super::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Markdown,
    Csv,
    /// One JSON record per cell, then one summary record.
    Structured,
}

impl std::str::FromStr for Format {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "markdown" | "md" => Ok(Format::Markdown),
            "csv" => Ok(Format::Csv),
            "structured" | "ndjson" | "json" => Ok(Format::Structured),
            other => Err(HarnessError::Config(format!("unknown format {other:?}"))),
        }
    }
}

pub fn render_matrix(matrix: &SweepMatrix, format: Format) -> String {
    match format {
        Format::Markdown => markdown(matrix),
        Format::Csv => csv_text(matrix),
        Format::Structured => structured(matrix),
    }
}

fn markdown(m: &SweepMatrix) -> String {
    let mut out = String::from("| Jitter (ms) \\ Latency (ms) |");
    for l in &m.latencies_ms {
        out.push_str(&format!(" {l} |"));
    }
    out.push_str("\n|---|");
    out.push_str(&"---|".repeat(m.latencies_ms.len()));
    out.push('\n');
    for (j, jitter) in m.jitters_ms.iter().enumerate() {
        out.push_str(&format!("| {jitter} |"));
        for l in 0..m.latencies_ms.len() {
            out.push_str(&format!(" {} |", m.cell(l, j).class.symbol()));
        }
        out.push('\n');
    }
    if let Some(n) = seeds_per_cell(m) {
        out.push_str(&format!(
            "\n{n} seed(s) per cell; a profile counts as passing only if it passes on every seed.\n"
        ));
    }
    out
}

/// `None` when no cell carries per-seed results.
fn seeds_per_cell(m: &SweepMatrix) -> Option<usize> {
    m.cells.iter().map(|c| c.seeds.len()).max().filter(|&n| n > 0)
}

const HEADER: [&str; 12] = [
    "latency_ms",
    "jitter_ms",
    "class",
    "seed",
    "default_outcome",
    "default_cause",
    "default_max_fe_mm",
    "default_survived_us",
    "adapted_outcome",
    "adapted_cause",
    "adapted_max_fe_mm",
    "adapted_survived_us",
];

fn outcome_str(o: Outcome) -> &'static str {
    match o {
        Outcome::Pass => "pass",
        Outcome::Fail => "fail",
    }
}

fn verdict_fields(v: Option<&TrialVerdict<f64>>) -> [String; 4] {
    match v {
        Some(v) => [
            outcome_str(v.outcome).to_string(),
            v.cause.as_str().to_string(),
            v.max_following_error.to_string(),
            v.duration_survived.as_micros().to_string(),
        ],
        None => Default::default(),
    }
}

/// One row per (cell, seed); a cell without seed details gets one row with
/// the per-seed columns empty. Floats use the shortest exact representation.
fn csv_text(m: &SweepMatrix) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(HEADER).expect("in-memory write");
    for cell in &m.cells {
        let base = [
            cell.latency_ms.to_string(),
            cell.jitter_ms.to_string(),
            cell.class.as_str().to_string(),
        ];
        if cell.seeds.is_empty() {
            let mut row = base.to_vec();
            row.extend(std::iter::repeat_n(String::new(), 9));
            w.write_record(&row).expect("in-memory write");
        }
        for s in &cell.seeds {
            let mut row = base.to_vec();
            row.push(s.seed.to_string());
            row.extend(verdict_fields(Some(&s.default)));
            row.extend(verdict_fields(s.adapted.as_ref()));
            w.write_record(&row).expect("in-memory write");
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is UTF-8")
}

fn parse_verdict(fields: &[&str], line: usize) -> Result<Option<TrialVerdict<f64>>, HarnessError> {
    if fields.iter().all(|f| f.is_empty()) {
        return Ok(None);
    }
    let bad = |what: &str| HarnessError::Parse {
        line,
        message: format!("bad {what}"),
    };
    let outcome = match fields[0] {
        "pass" => Outcome::Pass,
        "fail" => Outcome::Fail,
        _ => return Err(bad("outcome")),
    };
    Ok(Some(TrialVerdict {
        outcome,
        cause: FailCause::parse(fields[1]).ok_or_else(|| bad("cause"))?,
        max_following_error: fields[2].parse().map_err(|_| bad("following error"))?,
        duration_survived: SimTime::from_micros(fields[3].parse().map_err(|_| bad("duration"))?),
    }))
}

fn sorted_unique(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite axis values"));
    v.dedup();
    v
}

/// Inverse of the CSV rendering.
pub fn parse_matrix_csv(text: &str) -> Result<SweepMatrix, HarnessError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| HarnessError::Parse { line: 1, message: e.to_string() })?;
    if header.iter().ne(HEADER) {
        return Err(HarnessError::Parse {
            line: 1,
            message: "unexpected header".into(),
        });
    }
    let mut cells: BTreeMap<(u64, u64), CellVerdict> = BTreeMap::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| HarnessError::Parse { line, message: e.to_string() })?;
        let f: Vec<&str> = rec.iter().collect();
        if f.len() != HEADER.len() {
            return Err(HarnessError::Parse {
                line,
                message: format!("expected {} fields, found {}", HEADER.len(), f.len()),
            });
        }
        let num = |s: &str, what: &str| {
            s.parse::<f64>().map_err(|_| HarnessError::Parse {
                line,
                message: format!("bad {what}"),
            })
        };
        let latency = num(f[0], "latency")?;
        let jitter = num(f[1], "jitter")?;
        let class = VerdictClass::parse(f[2]).ok_or(HarnessError::Parse {
            line,
            message: "bad class".into(),
        })?;
        let key = (latency.to_bits(), jitter.to_bits());
        let cell = cells.entry(key).or_insert_with(|| CellVerdict {
            latency_ms: latency,
            jitter_ms: jitter,
            class,
            seeds: Vec::new(),
        });
        if f[3].is_empty() {
            continue;
        }
        let seed = f[3].parse().map_err(|_| HarnessError::Parse {
            line,
            message: "bad seed".into(),
        })?;
        let default = parse_verdict(&f[4..8], line)?.ok_or(HarnessError::Parse {
            line,
            message: "missing default verdict".into(),
        })?;
        cell.seeds.push(SeedOutcome {
            seed,
            default,
            adapted: parse_verdict(&f[8..12], line)?,
        });
    }
    let latencies_ms = sorted_unique(cells.values().map(|c| c.latency_ms));
    let jitters_ms = sorted_unique(cells.values().map(|c| c.jitter_ms));
    let mut grid = Vec::with_capacity(latencies_ms.len() * jitters_ms.len());
    for j in &jitters_ms {
        for l in &latencies_ms {
            let cell = cells.remove(&(l.to_bits(), j.to_bits())).ok_or(HarnessError::Parse {
                line: 0,
                message: format!("missing cell ({l}, {j})"),
            })?;
            grid.push(cell);
        }
    }
    Ok(SweepMatrix {
        latencies_ms,
        jitters_ms,
        cells: grid,
    })
}

#[derive(Serialize)]
struct Summary<'a> {
    summary: SummaryBody<'a>,
}

#[derive(Serialize)]
struct SummaryBody<'a> {
    latencies_ms: &'a [f64],
    jitters_ms: &'a [f64],
    #[serde(skip_serializing_if = "Option::is_none")]
    seeds_per_cell: Option<usize>,
    pass: usize,
    pass_with_adaptation: usize,
    fail: usize,
}

fn structured(m: &SweepMatrix) -> String {
    let mut out = String::new();
    for cell in &m.cells {
        out.push_str(&serde_json::to_string(cell).expect("cells serialise"));
        out.push('\n');
    }
    let count = |c: VerdictClass| m.cells.iter().filter(|x| x.class == c).count();
    let summary = Summary {
        summary: SummaryBody {
            latencies_ms: &m.latencies_ms,
            jitters_ms: &m.jitters_ms,
            seeds_per_cell: seeds_per_cell(m),
            pass: count(VerdictClass::Pass),
            pass_with_adaptation: count(VerdictClass::PassWithAdaptation),
            fail: count(VerdictClass::Fail),
        },
    };
    out.push_str(&serde_json::to_string(&summary).expect("summary serialises"));
    out.push('\n');
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::sweep::reference_table;

    fn one_by_one() -> SweepMatrix {
        SweepMatrix {
            latencies_ms: vec![0.5],
            jitters_ms: vec![0.05],
            cells: vec![CellVerdict {
                latency_ms: 0.5,
                jitter_ms: 0.05,
                class: VerdictClass::Pass,
                seeds: Vec::new(),
            }],
        }
    }

    #[test]
    fn single_pass_cell_markdown() {
        let md = render_matrix(&one_by_one(), Format::Markdown);
        assert_eq!(md, "| Jitter (ms) \\ Latency (ms) | 0.5 |\n|---|---|\n| 0.05 | ✓ |\n");
    }

    #[test]
    fn reference_markdown_layout() {
        let md = render_matrix(&reference_table(), Format::Markdown);
        let lines: Vec<&str> = md.lines().collect();
        assert_eq!(lines[0], "| Jitter (ms) \\ Latency (ms) | 0.5 | 1 | 1.5 | 2 | 3 | 5 |");
        assert_eq!(lines[5], "| 0.2 | ✓ | (✓) | (✓) | (✓) | (✓) | x |");
        assert_eq!(lines[6], "| 0.3 | x | x | x | x | x | x |");
    }

    #[test]
    fn csv_round_trip() {
        let mut m = reference_table();
        m.cells[3].seeds = vec![SeedOutcome {
            seed: 7,
            default: TrialVerdict {
                outcome: Outcome::Fail,
                cause: FailCause::InitFailure,
                max_following_error: 0.1 + 0.2,
                duration_survived: SimTime::from_micros(1_500_000),
            },
            adapted: Some(TrialVerdict {
                outcome: Outcome::Pass,
                cause: FailCause::None,
                max_following_error: 1.0 / 3.0,
                duration_survived: SimTime::from_secs(60),
            }),
        }];
        for mm in [m, one_by_one()] {
            let text = render_matrix(&mm, Format::Csv);
            assert_eq!(parse_matrix_csv(&text).unwrap(), mm);
        }
    }

    #[test]
    fn seed_count_is_noted() {
        let mut m = one_by_one();
        let v = TrialVerdict {
            outcome: Outcome::Pass,
            cause: FailCause::None,
            max_following_error: 0.01,
            duration_survived: SimTime::from_secs(60),
        };
        m.cells[0].seeds = (0..3)
            .map(|seed| SeedOutcome {
                seed,
                default: v,
                adapted: None,
            })
            .collect();
        assert!(render_matrix(&m, Format::Markdown).ends_with("\n\n3 seed(s) per cell; a profile counts as passing only if it passes on every seed.\n"));
        let last = render_matrix(&m, Format::Structured).lines().last().unwrap().to_string();
        let summary: serde_json::Value = serde_json::from_str(&last).unwrap();
        assert_eq!(summary["summary"]["seeds_per_cell"], 3);
    }

    #[test]
    fn csv_errors_carry_line_numbers() {
        let text = render_matrix(&one_by_one(), Format::Csv).replace(",pass,", ",maybe,");
        match parse_matrix_csv(&text) {
            Err(HarnessError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn structured_has_cells_and_summary() {
        let s = render_matrix(&reference_table(), Format::Structured);
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines.len(), 31);
        let cell: CellVerdict = serde_json::from_str(lines[0]).unwrap();
        assert_eq!(cell, reference_table().cells[0]);
        let summary: serde_json::Value = serde_json::from_str(lines[30]).unwrap();
        assert_eq!(summary["summary"]["pass"], 16);
        assert_eq!(summary["summary"]["fail"], 10);
    }
}
