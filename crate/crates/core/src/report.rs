//! Tables and charts summarizing alignment experiments.

use std::fmt::Write as _;

use crate::error::{bail, Error, Result};
use crate::eval::{aer, wilcoxon_signed_rank, AerCounts, AerReport, GoldAlignment, DEFAULT_ALPHA};
use crate::extraction::{symmetrize_grow_diagonal, AverageScope, ExtractionMethod};
use crate::training::{word_alignments, EpochRecord, PreparedCorpus};
use crate::transformer::Transformer;

/// One row of the per-layer table; `label` is the layer number or "average".
#[derive(Clone, Debug, PartialEq)]
pub struct LayerRow {
    pub label: String,
    pub counts: AerCounts,
}

/// AER of head-averaged attention for every decoder layer, then for the
/// average over all layers. With a reverse model the two directions are
/// merged with grow-diagonal before scoring.
pub fn per_layer_aer(
    forward: &Transformer<f32>,
    reverse: Option<&Transformer<f32>>,
    corpus: &PreparedCorpus,
    gold: &[GoldAlignment],
) -> Result<Vec<LayerRow>> {
    let n_layers = forward.config().n_layers;
    if let Some(r) = reverse {
        if r.config().n_layers != n_layers {
            bail!(Parameter, "forward model has {n_layers} layers, reverse has {}", r.config().n_layers);
        }
    }
    let reversed = reverse.map(|_| corpus.reversed());
    let scopes = (1..=n_layers).map(|l| (l.to_string(), AverageScope::Layer(l))).chain([("average".into(), AverageScope::All)]);
    scopes
        .map(|(label, scope)| {
            let method = ExtractionMethod::LayerAverage(scope);
            let mut hyps = word_alignments(forward, corpus, method)?;
            if let (Some(r), Some(rc)) = (reverse, &reversed) {
                let rev = word_alignments(r, rc, method)?;
                hyps = hyps
                    .iter()
                    .zip(&rev)
                    .map(|(f, b)| symmetrize_grow_diagonal(f, &b.transposed(), false))
                    .collect::<Result<_>>()?;
            }
            Ok(LayerRow { label, counts: aer(&hyps, gold)?.corpus })
        })
        .collect()
}

fn csv_text(rows: Vec<Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.write_record(&r).map_err(|e| Error::Format(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
}

fn pct(x: f64) -> String {
    format!("{:.2}", 100.0 * x)
}

/// `layer,aer,precision,recall` with percentages.
pub fn layer_csv(rows: &[LayerRow]) -> Result<String> {
    let mut out = vec![vec!["layer".into(), "aer".into(), "precision".into(), "recall".into()]];
    for r in rows {
        out.push(vec![r.label.clone(), pct(r.counts.aer()), pct(r.counts.precision()), pct(r.counts.recall())]);
    }
    csv_text(out)
}

/// One system in a comparison table.
#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonRow {
    pub name: String,
    pub report: AerReport,
    /// Wilcoxon p-value of per-sentence AER against the reference system.
    pub p_value: Option<f64>,
}

/// Scores several systems on the same gold data. When `reference` names a
/// row, every other row gets a paired significance test against it.
pub fn compare_systems(
    systems: Vec<(String, AerReport)>,
    reference: Option<usize>,
) -> Result<Vec<ComparisonRow>> {
    if let Some(r) = reference {
        if r >= systems.len() {
            bail!(Parameter, "reference row {r} but only {} systems", systems.len());
        }
    }
    let base: Option<Vec<f64>> = reference.map(|r| systems[r].1.sentence_aers());
    systems
        .into_iter()
        .enumerate()
        .map(|(k, (name, report))| {
            let p_value = match (&base, reference) {
                (Some(b), Some(r)) if r != k => {
                    Some(wilcoxon_signed_rank(&report.sentence_aers(), b, DEFAULT_ALPHA)?.p_value)
                }
                _ => None,
            };
            Ok(ComparisonRow { name, report, p_value })
        })
        .collect()
}

/// `model,aer,precision,recall,hyp_links,sure_links,possible_links[,p_value]`.
pub fn comparison_csv(rows: &[ComparisonRow]) -> Result<String> {
    let with_p = rows.iter().any(|r| r.p_value.is_some());
    let mut header: Vec<String> =
        ["model", "aer", "precision", "recall", "hyp_links", "sure_links", "possible_links"].map(String::from).into();
    if with_p {
        header.push("p_value".into());
    }
    let mut out = vec![header];
    for r in rows {
        let c = &r.report.corpus;
        let mut line = vec![
            r.name.clone(),
            pct(c.aer()),
            pct(c.precision()),
            pct(c.recall()),
            c.hypothesis.to_string(),
            c.sure.to_string(),
            c.possible.to_string(),
        ];
        if with_p {
            line.push(r.p_value.map(|p| format!("{p:.3e}")).unwrap_or_default());
        }
        out.push(line);
    }
    csv_text(out)
}

/// Per-epoch AER of named training runs.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochSeries {
    pub name: String,
    pub points: Vec<(usize, f64)>,
}

impl EpochSeries {
    /// Epochs without a measured AER are skipped.
    pub fn from_records(name: impl Into<String>, records: &[EpochRecord]) -> Self {
        let points = records.iter().filter_map(|r| r.aer.map(|a| (r.epoch, a))).collect();
        Self { name: name.into(), points }
    }
}

/// Long format: `series,epoch,aer`.
pub fn epoch_csv(series: &[EpochSeries]) -> Result<String> {
    let mut out = vec![vec!["series".into(), "epoch".into(), "aer".into()]];
    for s in series {
        for &(e, a) in &s.points {
            out.push(vec![s.name.clone(), e.to_string(), pct(a)]);
        }
    }
    csv_text(out)
}

/// Parses [`epoch_csv`] output back into series, keeping first-seen order.
pub fn parse_epoch_csv(text: &str) -> Result<Vec<EpochSeries>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let mut series: Vec<EpochSeries> = Vec::new();
    for (n, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::Format(e.to_string()))?;
        let bad = || Error::Format(format!("line {}: expected series,epoch,aer", n + 2));
        if rec.len() != 3 {
            return Err(bad());
        }
        let epoch: usize = rec[1].parse().map_err(|_| bad())?;
        let aer: f64 = rec[2].parse().map_err(|_| bad())?;
        match series.iter_mut().find(|s| s.name == rec[0]) {
            Some(s) => s.points.push((epoch, aer / 100.0)),
            None => series.push(EpochSeries { name: rec[0].to_string(), points: vec![(epoch, aer / 100.0)] }),
        }
    }
    Ok(series)
}

const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

/// Static line chart of AER (percent) against epoch.
pub fn epoch_svg(series: &[EpochSeries]) -> String {
    let (w, h, left, right, top, bottom) = (640.0, 400.0, 60.0, 160.0, 20.0, 50.0);
    let pw = w - left - right;
    let ph = h - top - bottom;
    let max_epoch = series.iter().flat_map(|s| s.points.iter().map(|p| p.0)).max().unwrap_or(1).max(1) as f64;
    let max_aer = series.iter().flat_map(|s| s.points.iter().map(|p| p.1)).fold(0.0f64, f64::max);
    let y_top = ((max_aer * 10.0).ceil() / 10.0).clamp(0.1, 1.0);
    let x = |e: f64| left + pw * if max_epoch > 1.0 { (e - 1.0) / (max_epoch - 1.0) } else { 0.5 };
    let y = |a: f64| top + ph * (1.0 - a / y_top);

    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<path d="M{left} {top} V{} H{}" fill="none" stroke="black"/>"#,
        top + ph,
        left + pw
    );
    for k in 0..=5 {
        let a = y_top * k as f64 / 5.0;
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{:.1}" text-anchor="end">{:.0}</text>"#,
            left - 6.0,
            y(a) + 4.0,
            100.0 * a
        );
    }
    let step = ((max_epoch / 10.0).ceil() as usize).max(1);
    for e in (1..=max_epoch as usize).step_by(step) {
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{}" text-anchor="middle">{e}</text>"#, x(e as f64), top + ph + 18.0);
    }
    let _ = writeln!(svg, r#"<text x="{:.1}" y="{}" text-anchor="middle">epoch</text>"#, left + pw / 2.0, h - 8.0);
    let _ = writeln!(
        svg,
        r#"<text x="14" y="{:.1}" text-anchor="middle" transform="rotate(-90 14 {:.1})">AER (%)</text>"#,
        top + ph / 2.0,
        top + ph / 2.0
    );
    for (k, s) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let pts: Vec<String> = s.points.iter().map(|&(e, a)| format!("{:.1},{:.1}", x(e as f64), y(a))).collect();
        let _ = writeln!(svg, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, pts.join(" "));
        let ly = top + 16.0 * k as f64 + 8.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            left + pw + 12.0,
            left + pw + 32.0,
            left + pw + 38.0,
            ly + 4.0,
            escape(&s.name)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
