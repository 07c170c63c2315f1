//! Merges finished runs into a comparison table and an SVG plot.
//!
//! Everything here is a pure function of the files a run directory holds, so the same
//! inputs always render byte-identical output.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::algos::Algorithm;
use crate::error::{Error, Result};

pub const RUN_INFO_FILE: &str = "run.json";
/// Share of rounds forming the beginning and the end of training in category bars.
pub const EDGE_FRACTION: f64 = 0.1;

/// Identity of a training run, written next to its metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunInfo {
    pub algorithm: Algorithm,
    pub use_str: bool,
    pub seed: u64,
    pub world_hash: String,
    pub init_sha256: String,
}

impl RunInfo {
    /// Runs sharing a label are aggregated together, e.g. `sols-str` or `ppo-off`.
    pub fn label(&self) -> String {
        format!("{}-{}", self.algorithm.name(), if self.use_str { "str" } else { "off" })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalPoint {
    pub round: usize,
    pub episodes: usize,
    pub success_rate: f64,
    pub two_sem: f64,
    /// Easy, medium, hard.
    pub by_difficulty: [f64; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub struct CategoryCount {
    pub round: usize,
    pub category: String,
    pub episodes: usize,
    pub successes: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunData {
    pub name: String,
    pub info: RunInfo,
    pub evals: Vec<EvalPoint>,
    pub categories: Vec<CategoryCount>,
}

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
    file: String,
}

impl Table {
    fn parse(file: &str, text: &str) -> Result<Table> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<String> = lines
            .next()
            .ok_or_else(|| Error::Format(format!("{file} is empty")))?
            .split(',')
            .map(str::to_string)
            .collect();
        let mut rows = Vec::new();
        for (i, l) in lines.enumerate() {
            let row: Vec<String> = l.split(',').map(str::to_string).collect();
            if row.len() != header.len() {
                return Err(Error::Format(format!("{file} line {} has {} fields", i + 2, row.len())));
            }
            rows.push(row);
        }
        Ok(Table {
            header,
            rows,
            file: file.to_string(),
        })
    }

    fn col(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Format(format!("{} has no column {name}", self.file)))
    }

    fn get<T: std::str::FromStr>(&self, row: &[String], col: usize) -> Result<T> {
        row[col]
            .parse()
            .map_err(|_| Error::Format(format!("{}: bad value {:?} in {}", self.file, row[col], self.header[col])))
    }
}

fn read(dir: &Path, file: &str) -> Result<String> {
    fs::read_to_string(dir.join(file))
        .map_err(|e| Error::Format(format!("{}: {e}", dir.join(file).display())))
}

/// Reads `run.json`, `eval.csv` and `categories.csv` from a training output directory.
pub fn load_run(dir: &Path) -> Result<RunData> {
    let info: RunInfo = serde_json::from_str(&read(dir, RUN_INFO_FILE)?)?;
    let t = Table::parse("eval.csv", &read(dir, "eval.csv")?)?;
    let c = [
        "round",
        "episodes",
        "success_rate",
        "two_sem",
        "success_rate_easy",
        "success_rate_medium",
        "success_rate_hard",
    ]
    .map(|n| t.col(n));
    let c: Vec<usize> = c.into_iter().collect::<Result<_>>()?;
    let mut evals = Vec::new();
    for r in &t.rows {
        evals.push(EvalPoint {
            round: t.get(r, c[0])?,
            episodes: t.get(r, c[1])?,
            success_rate: t.get(r, c[2])?,
            two_sem: t.get(r, c[3])?,
            by_difficulty: [t.get(r, c[4])?, t.get(r, c[5])?, t.get(r, c[6])?],
        });
    }
    if evals.is_empty() {
        return Err(Error::Format(format!("{} has no evaluations", dir.display())));
    }
    let t = Table::parse("categories.csv", &read(dir, "categories.csv")?)?;
    let (round, cat, eps, succ) = (
        t.col("round")?,
        t.col("category")?,
        t.col("category_episodes")?,
        t.col("category_successes")?,
    );
    let mut categories = Vec::new();
    for r in &t.rows {
        categories.push(CategoryCount {
            round: t.get(r, round)?,
            category: r[cat].clone(),
            episodes: t.get(r, eps)?,
            successes: t.get(r, succ)?,
        });
    }
    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string());
    Ok(RunData {
        name,
        info,
        evals,
        categories,
    })
}

/// Training success rate per category over the first and last [`EDGE_FRACTION`] of rounds.
pub fn category_edges(run: &RunData) -> BTreeMap<String, (f64, f64)> {
    let mut rounds: Vec<usize> = run.categories.iter().map(|c| c.round).collect();
    rounds.sort_unstable();
    rounds.dedup();
    if rounds.is_empty() {
        return BTreeMap::new();
    }
    let k = ((rounds.len() as f64 * EDGE_FRACTION).ceil() as usize).max(1);
    let first = rounds[k - 1];
    let last = rounds[rounds.len() - k];
    let mut tallies: BTreeMap<String, [usize; 4]> = BTreeMap::new();
    for c in &run.categories {
        let t = tallies.entry(c.category.clone()).or_default();
        if c.round <= first {
            t[0] += c.successes;
            t[1] += c.episodes;
        }
        if c.round >= last {
            t[2] += c.successes;
            t[3] += c.episodes;
        }
    }
    let rate = |s: usize, n: usize| if n == 0 { 0.0 } else { s as f64 / n as f64 };
    tallies
        .into_iter()
        .map(|(c, t)| (c, (rate(t[0], t[1]), rate(t[2], t[3]))))
        .collect()
}

/// Mean and two standard errors; the error is `None` for a single value.
pub fn mean_two_sem(xs: &[f64]) -> (f64, Option<f64>) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, None);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, Some(2.0 * (var / n).sqrt()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TableRow {
    /// `group` for aggregates, otherwise the run name.
    pub scope: String,
    pub group: String,
    pub metric: String,
    pub n: usize,
    pub mean: f64,
    pub two_sem: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Curve {
    pub group: String,
    pub runs: usize,
    /// `(episodes, mean, two_sem)`.
    pub points: Vec<(f64, f64, Option<f64>)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CategoryBars {
    pub group: String,
    /// `(category, begin mean, end mean)`.
    pub bars: Vec<(String, f64, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub rows: Vec<TableRow>,
    pub curves: Vec<Curve>,
    pub categories: Vec<CategoryBars>,
}

/// Step-interpolated success of `run` at `x` episodes: the last evaluation at or before it.
fn value_at(run: &RunData, x: usize) -> f64 {
    run.evals
        .iter()
        .take_while(|e| e.episodes <= x)
        .last()
        .map_or(run.evals[0].success_rate, |e| e.success_rate)
}

pub fn build_report(runs: &[RunData]) -> Result<Report> {
    let first = runs
        .first()
        .ok_or_else(|| Error::Config("report needs at least one run".into()))?;
    for r in runs {
        if r.info.world_hash != first.info.world_hash {
            return Err(Error::Contract(format!(
                "runs {} and {} were trained on different worlds",
                first.name, r.name
            )));
        }
    }
    let mut groups: BTreeMap<String, Vec<&RunData>> = BTreeMap::new();
    for r in runs {
        groups.entry(r.info.label()).or_default().push(r);
    }
    for g in groups.values_mut() {
        g.sort_by(|a, b| a.name.cmp(&b.name));
    }

    let mut rows = Vec::new();
    let mut curves = Vec::new();
    let mut categories = Vec::new();
    for (label, members) in &groups {
        let mut metrics: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for r in members {
            let last = r.evals.last().expect("runs have evaluations");
            let mut own = vec![
                ("initial_success".to_string(), r.evals[0].success_rate, None),
                ("final_success".to_string(), last.success_rate, Some(last.two_sem)),
                ("final_success_easy".to_string(), last.by_difficulty[0], None),
                ("final_success_medium".to_string(), last.by_difficulty[1], None),
                ("final_success_hard".to_string(), last.by_difficulty[2], None),
            ];
            for (c, (b, e)) in category_edges(r) {
                own.push((format!("category_begin:{c}"), b, None));
                own.push((format!("category_end:{c}"), e, None));
            }
            for (metric, v, sem) in own {
                metrics.entry(metric.clone()).or_default().push(v);
                rows.push(TableRow {
                    scope: r.name.clone(),
                    group: label.clone(),
                    metric,
                    n: 1,
                    mean: v,
                    two_sem: sem,
                });
            }
        }
        let mut bars: BTreeMap<String, (f64, f64)> = BTreeMap::new();
        for (metric, vs) in &metrics {
            let (mean, two_sem) = mean_two_sem(vs);
            rows.push(TableRow {
                scope: "group".into(),
                group: label.clone(),
                metric: metric.clone(),
                n: vs.len(),
                mean,
                two_sem,
            });
            if let Some(c) = metric.strip_prefix("category_begin:") {
                bars.entry(c.to_string()).or_default().0 = mean;
            } else if let Some(c) = metric.strip_prefix("category_end:") {
                bars.entry(c.to_string()).or_default().1 = mean;
            }
        }
        categories.push(CategoryBars {
            group: label.clone(),
            bars: bars.into_iter().map(|(c, (b, e))| (c, b, e)).collect(),
        });

        let horizon = members
            .iter()
            .map(|r| r.evals.last().unwrap().episodes)
            .min()
            .unwrap_or(0);
        let mut xs: Vec<usize> = members
            .iter()
            .flat_map(|r| r.evals.iter().map(|e| e.episodes))
            .filter(|&x| x <= horizon)
            .collect();
        xs.sort_unstable();
        xs.dedup();
        let points = xs
            .into_iter()
            .map(|x| {
                let vs: Vec<f64> = members.iter().map(|r| value_at(r, x)).collect();
                let (m, s) = mean_two_sem(&vs);
                (x as f64, m, s)
            })
            .collect();
        curves.push(Curve {
            group: label.clone(),
            runs: members.len(),
            points,
        });
    }
    Ok(Report {
        rows,
        curves,
        categories,
    })
}

impl Report {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("scope,group,metric,n,mean,two_sem\n");
        for r in &self.rows {
            let sem = r.two_sem.map_or(String::new(), |v| format!("{v:.6}"));
            writeln!(s, "{},{},{},{},{:.6},{}", r.scope, r.group, r.metric, r.n, r.mean, sem).unwrap();
        }
        s
    }

    pub fn to_svg(&self) -> String {
        const W: f64 = 760.0;
        const LEFT: f64 = 60.0;
        const PLOT_W: f64 = 520.0;
        const LINE_H: f64 = 300.0;
        const BAR_H: f64 = 150.0;
        const GAP: f64 = 60.0;
        let palette = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"];
        let color = |i: usize| palette[i % palette.len()];

        let height = 40.0 + LINE_H + GAP + self.categories.len() as f64 * (BAR_H + GAP);
        let mut s = String::new();
        writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{height}" viewBox="0 0 {W} {height}" font-family="sans-serif" font-size="11">"#
        )
        .unwrap();
        writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();

        // success rate against episodes
        let top = 30.0;
        let max_x = self
            .curves
            .iter()
            .flat_map(|c| c.points.iter().map(|p| p.0))
            .fold(1.0f64, f64::max);
        let px = |x: f64| LEFT + PLOT_W * x / max_x;
        let py = |y: f64| top + LINE_H * (1.0 - y.clamp(0.0, 1.0));
        writeln!(s, r#"<text x="{LEFT}" y="18" font-size="13">Evaluation success rate vs training episodes</text>"#).unwrap();
        axes(&mut s, LEFT, top, PLOT_W, LINE_H);
        for i in 0..=4 {
            let x = max_x * i as f64 / 4.0;
            writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{:.0}</text>"#,
                px(x),
                top + LINE_H + 15.0,
                x
            )
            .unwrap();
        }
        for (i, c) in self.curves.iter().enumerate() {
            if c.points.iter().all(|p| p.2.is_some()) && !c.points.is_empty() {
                let upper = c.points.iter().map(|p| (px(p.0), py(p.1 + p.2.unwrap())));
                let lower = c.points.iter().rev().map(|p| (px(p.0), py(p.1 - p.2.unwrap())));
                let pts: Vec<String> = upper.chain(lower).map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
                writeln!(
                    s,
                    r#"<polygon points="{}" fill="{}" fill-opacity="0.2" stroke="none"/>"#,
                    pts.join(" "),
                    color(i)
                )
                .unwrap();
            }
            let pts: Vec<String> = c
                .points
                .iter()
                .map(|p| format!("{:.2},{:.2}", px(p.0), py(p.1)))
                .collect();
            writeln!(
                s,
                r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="2"/>"#,
                pts.join(" "),
                color(i)
            )
            .unwrap();
            let ly = top + 14.0 * i as f64 + 6.0;
            writeln!(
                s,
                r#"<rect x="{:.2}" y="{:.2}" width="12" height="3" fill="{}"/><text x="{:.2}" y="{:.2}">{} (n={})</text>"#,
                LEFT + PLOT_W + 20.0,
                ly,
                color(i),
                LEFT + PLOT_W + 36.0,
                ly + 4.0,
                escape(&c.group),
                c.runs
            )
            .unwrap();
        }

        // per-category beginning vs end of training
        let mut y0 = top + LINE_H + GAP;
        for (i, g) in self.categories.iter().enumerate() {
            writeln!(
                s,
                r#"<text x="{LEFT}" y="{:.2}" font-size="13">{}: training success per category, first vs last {:.0}% of rounds</text>"#,
                y0 - 10.0,
                escape(&g.group),
                EDGE_FRACTION * 100.0
            )
            .unwrap();
            axes(&mut s, LEFT, y0, PLOT_W, BAR_H);
            let slot = PLOT_W / g.bars.len().max(1) as f64;
            let by = |v: f64| y0 + BAR_H * (1.0 - v.clamp(0.0, 1.0));
            for (j, (cat, b, e)) in g.bars.iter().enumerate() {
                let x = LEFT + slot * j as f64 + slot * 0.15;
                let w = slot * 0.35;
                for (k, (v, op)) in [(*b, 0.35), (*e, 1.0)].into_iter().enumerate() {
                    writeln!(
                        s,
                        r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}" fill-opacity="{op}"/>"#,
                        x + w * k as f64,
                        by(v),
                        w,
                        y0 + BAR_H - by(v),
                        color(i)
                    )
                    .unwrap();
                }
                writeln!(
                    s,
                    r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                    x + w,
                    y0 + BAR_H + 15.0,
                    escape(cat)
                )
                .unwrap();
            }
            y0 += BAR_H + GAP;
        }
        s.push_str("</svg>\n");
        s
    }
}

fn axes(s: &mut String, x: f64, y: f64, w: f64, h: f64) {
    writeln!(
        s,
        r##"<path d="M{x:.2},{y:.2} V{:.2} H{:.2}" fill="none" stroke="#333"/>"##,
        y + h,
        x + w
    )
    .unwrap();
    for i in 0..=4 {
        let v = i as f64 / 4.0;
        let ty = y + h * (1.0 - v);
        writeln!(
            s,
            r##"<line x1="{x:.2}" y1="{ty:.2}" x2="{:.2}" y2="{ty:.2}" stroke="#ddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{v:.2}</text>"##,
            x + w,
            x - 5.0,
            ty + 4.0
        )
        .unwrap();
    }
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
