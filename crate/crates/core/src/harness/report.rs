//! Per-case rows, aggregates and the SVG chart.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::metrics::MetricReport;

use super::Scenario;

/// Test-set metrics of one case under one scenario and seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CaseRow {
    pub seed: u64,
    pub scenario: Scenario,
    pub case: usize,
    pub metrics: MetricReport,
}

pub const CASES_HEADER: &str = "seed,scenario,case,dice,hausdorff_mm,assd2d_mm";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn cases_csv(rows: &[CaseRow]) -> String {
    let mut out = format!("{CASES_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.seed,
            r.scenario,
            r.case,
            r.metrics.dice,
            opt(r.metrics.hausdorff_mm),
            opt(r.metrics.assd2d_mm)
        );
    }
    out
}

pub fn parse_cases_csv(text: &str) -> Result<Vec<CaseRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(CASES_HEADER) {
        return Err(Error::InvalidConfig("cases.csv: unexpected header".into()));
    }
    let bad = |n: usize, what: &str| Error::InvalidConfig(format!("cases.csv line {n}: {what}"));
    lines
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, line)| {
            let n = i + 2;
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(bad(n, "expected 6 fields"));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad(n, s));
            let optional = |s: &str| if s.is_empty() { Ok(None) } else { num(s).map(Some) };
            Ok(CaseRow {
                seed: f[0].parse().map_err(|_| bad(n, f[0]))?,
                scenario: f[1].parse()?,
                case: f[2].parse().map_err(|_| bad(n, f[2]))?,
                metrics: MetricReport {
                    dice: num(f[3])?,
                    hausdorff_mm: optional(f[4])?,
                    assd2d_mm: optional(f[5])?,
                },
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Metric {
    Dice,
    Hausdorff,
    Assd2d,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Dice, Metric::Hausdorff, Metric::Assd2d];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Dice => "dice",
            Metric::Hausdorff => "hausdorff_mm",
            Metric::Assd2d => "assd2d_mm",
        }
    }

    fn title(self) -> &'static str {
        match self {
            Metric::Dice => "Dice score",
            Metric::Hausdorff => "Hausdorff (mm)",
            Metric::Assd2d => "2D ASSD (mm)",
        }
    }

    pub fn of(self, m: &MetricReport) -> Option<f64> {
        match self {
            Metric::Dice => Some(m.dice),
            Metric::Hausdorff => m.hausdorff_mm,
            Metric::Assd2d => m.assd2d_mm,
        }
    }
}

/// Summary statistics; `std` is the population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stats {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl Stats {
    /// `None` for an empty sample.
    pub fn of(values: &[f64]) -> Option<Stats> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Some(Stats {
            n: values.len(),
            mean,
            std: var.sqrt(),
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

/// What an aggregate row summarizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Group {
    /// Test cases of one seed (within-seed dispersion).
    Seed(u64),
    /// Test cases of every seed pooled together.
    AllCases,
    /// One value per seed: the seed means (across-seed dispersion).
    SeedMeans,
}

impl std::fmt::Display for Group {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Group::Seed(s) => write!(f, "{s}"),
            Group::AllCases => f.write_str("all"),
            Group::SeedMeans => f.write_str("seed-means"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregateRow {
    pub scenario: Scenario,
    pub group: Group,
    pub metric: Metric,
    /// `None` when the metric is undefined for every case.
    pub stats: Option<Stats>,
}

/// Aggregates in scenario, group and metric order. Seeds keep their order of
/// first appearance.
pub fn aggregate(rows: &[CaseRow]) -> Vec<AggregateRow> {
    let mut seeds: Vec<u64> = Vec::new();
    for r in rows {
        if !seeds.contains(&r.seed) {
            seeds.push(r.seed);
        }
    }
    let mut scenarios: Vec<Scenario> = rows.iter().map(|r| r.scenario).collect();
    scenarios.sort();
    scenarios.dedup();
    let mut out = Vec::new();
    for &scenario in &scenarios {
        let mut per_seed: BTreeMap<Metric, Vec<f64>> = BTreeMap::new();
        for &seed in &seeds {
            for metric in Metric::ALL {
                let values: Vec<f64> = rows
                    .iter()
                    .filter(|r| r.scenario == scenario && r.seed == seed)
                    .filter_map(|r| metric.of(&r.metrics))
                    .collect();
                let present = rows.iter().any(|r| r.scenario == scenario && r.seed == seed);
                if !present {
                    continue;
                }
                let stats = Stats::of(&values);
                if let Some(s) = stats {
                    per_seed.entry(metric).or_default().push(s.mean);
                }
                out.push(AggregateRow {
                    scenario,
                    group: Group::Seed(seed),
                    metric,
                    stats,
                });
            }
        }
        for metric in Metric::ALL {
            let pooled: Vec<f64> = rows
                .iter()
                .filter(|r| r.scenario == scenario)
                .filter_map(|r| metric.of(&r.metrics))
                .collect();
            out.push(AggregateRow {
                scenario,
                group: Group::AllCases,
                metric,
                stats: Stats::of(&pooled),
            });
        }
        for metric in Metric::ALL {
            let means = per_seed.get(&metric).map(Vec::as_slice).unwrap_or(&[]);
            out.push(AggregateRow {
                scenario,
                group: Group::SeedMeans,
                metric,
                stats: Stats::of(means),
            });
        }
    }
    out
}

pub fn find(
    rows: &[AggregateRow],
    scenario: Scenario,
    group: Group,
    metric: Metric,
) -> Option<Stats> {
    rows.iter()
        .find(|r| r.scenario == scenario && r.group == group && r.metric == metric)
        .and_then(|r| r.stats)
}

pub fn aggregate_csv(rows: &[AggregateRow]) -> String {
    let mut out = String::from("scenario,seed,metric,n,mean,std,min,max\n");
    for r in rows {
        let _ = match r.stats {
            Some(s) => writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.scenario,
                r.group,
                r.metric.name(),
                s.n,
                s.mean,
                s.std,
                s.min,
                s.max
            ),
            None => writeln!(out, "{},{},{},0,,,,", r.scenario, r.group, r.metric.name()),
        };
    }
    out
}

const PALETTE: [&str; 6] = ["#4c72b0", "#8da0cb", "#dd8452", "#f2b880", "#55a868", "#a6d5a0"];

/// Grouped bar chart of pooled test-case statistics: bars at the mean,
/// grey bars over the min-max range, black whiskers at mean +/- STD.
pub fn render_svg(rows: &[AggregateRow]) -> String {
    let mut scenarios: Vec<Scenario> = rows.iter().map(|r| r.scenario).collect();
    scenarios.sort();
    scenarios.dedup();
    let (panel_w, panel_h, top, left) = (260.0, 220.0, 40.0, 50.0);
    let width = left + 3.0 * (panel_w + left);
    let height = top + panel_h + 40.0 + 18.0 * scenarios.len() as f64;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (p, metric) in Metric::ALL.into_iter().enumerate() {
        let x0 = left + p as f64 * (panel_w + left);
        let stats: Vec<Option<Stats>> = scenarios
            .iter()
            .map(|&s| find(rows, s, Group::AllCases, metric))
            .collect();
        let top_value = stats
            .iter()
            .flatten()
            .map(|s| s.max.max(s.mean + s.std))
            .fold(0.0, f64::max);
        let y_max = if metric == Metric::Dice { 1.0 } else { nice_ceiling(top_value) };
        let y = |v: f64| top + panel_h * (1.0 - v / y_max);
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="13">{}</text>"#,
            x0 + panel_w / 2.0,
            top - 15.0,
            metric.title()
        );
        let _ = writeln!(
            svg,
            r##"<line x1="{x0:.1}" y1="{top:.1}" x2="{x0:.1}" y2="{:.1}" stroke="#333"/>"##,
            top + panel_h
        );
        let _ = writeln!(
            svg,
            r##"<line x1="{x0:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="#333"/>"##,
            top + panel_h,
            x0 + panel_w,
            top + panel_h
        );
        for k in 0..=4 {
            let v = y_max * k as f64 / 4.0;
            let _ = writeln!(
                svg,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v:.2}</text>"#,
                x0 - 4.0,
                y(v) + 4.0
            );
        }
        let slot = panel_w / scenarios.len().max(1) as f64;
        for (i, s) in stats.iter().enumerate() {
            let Some(s) = s else { continue };
            let cx = x0 + slot * (i as f64 + 0.5);
            let bw = slot * 0.6;
            let _ = writeln!(
                svg,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
                cx - bw / 2.0,
                y(s.mean),
                bw,
                y(0.0) - y(s.mean),
                PALETTE[i % PALETTE.len()]
            );
            let _ = writeln!(
                svg,
                r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#999" fill-opacity="0.6"/>"##,
                cx - bw / 8.0,
                y(s.max),
                bw / 4.0,
                y(s.min) - y(s.max)
            );
            let (lo, hi) = (y((s.mean - s.std).max(0.0)), y(s.mean + s.std));
            let _ = writeln!(
                svg,
                r##"<path d="M{:.2} {hi:.2}H{:.2}M{cx:.2} {hi:.2}V{lo:.2}M{:.2} {lo:.2}H{:.2}" stroke="black" fill="none"/>"##,
                cx - bw / 4.0,
                cx + bw / 4.0,
                cx - bw / 4.0,
                cx + bw / 4.0
            );
        }
    }
    for (i, s) in scenarios.iter().enumerate() {
        let ly = top + panel_h + 30.0 + 18.0 * i as f64;
        let _ = writeln!(
            svg,
            r#"<rect x="{left:.1}" y="{:.1}" width="12" height="12" fill="{}"/><text x="{:.1}" y="{:.1}">{s}</text>"#,
            ly - 10.0,
            PALETTE[i % PALETTE.len()],
            left + 18.0,
            ly
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Smallest 1, 2 or 5 times a power of ten at or above `v`.
fn nice_ceiling(v: f64) -> f64 {
    if !(v > 0.0) {
        return 1.0;
    }
    let base = 10f64.powf(v.log10().floor());
    [1.0, 2.0, 5.0, 10.0]
        .into_iter()
        .map(|m| m * base)
        .find(|&c| c >= v)
        .unwrap_or(10.0 * base)
}
