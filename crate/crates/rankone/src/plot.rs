//! Minimal SVG line plots for sweep results and pseudo-spectra.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rankone_core::baselines;
use rankone_core::rank1::PseudoSpectrum;
use rankone_core::EstimatorTag;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::harness::{self, SweepResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlotKind {
    NmseVsSnr,
    #[serde(rename = "gain_vs_M")]
    GainVsM,
    #[serde(rename = "runtime_vs_M")]
    RuntimeVsM,
    Spectrum,
}

impl PlotKind {
    pub const ALL: [PlotKind; 4] = [
        PlotKind::NmseVsSnr,
        PlotKind::GainVsM,
        PlotKind::RuntimeVsM,
        PlotKind::Spectrum,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            PlotKind::NmseVsSnr => "nmse_vs_snr",
            PlotKind::GainVsM => "gain_vs_M",
            PlotKind::RuntimeVsM => "runtime_vs_M",
            PlotKind::Spectrum => "spectrum",
        }
    }
}

impl FromStr for PlotKind {
    type Err = CliError;
    fn from_str(s: &str) -> Result<Self> {
        PlotKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| CliError::Plot(format!("unknown plot kind {s:?}")))
    }
}

/// What a plot is drawn from.
pub enum PlotSource<'a> {
    Sweep {
        result: &'a SweepResult,
        /// Target NMSE for `gain_vs_M`.
        gamma: f64,
    },
    Spectra(&'a [(String, PseudoSpectrum)]),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scale {
    Linear,
    Log10,
}

/// A named polyline in data coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    /// Reference curves are dashed and excluded from the `series` class.
    pub reference: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Figure {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub x_scale: Scale,
    pub y_scale: Scale,
    pub series: Vec<Series>,
}

const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf",
];
const W: f64 = 640.0;
const H: f64 = 420.0;
const PAD_L: f64 = 70.0;
const PAD_R: f64 = 130.0;
const PAD_T: f64 = 40.0;
const PAD_B: f64 = 50.0;

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

impl Figure {
    pub fn to_svg(&self) -> Result<String> {
        let tx = |v: f64, s: Scale| match s {
            Scale::Linear => v,
            Scale::Log10 => v.log10(),
        };
        let pts: Vec<(f64, f64)> = self
            .series
            .iter()
            .flat_map(|s| s.points.iter())
            .map(|&(x, y)| (tx(x, self.x_scale), tx(y, self.y_scale)))
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .collect();
        if pts.is_empty() {
            return Err(CliError::Plot(format!("{}: nothing to draw", self.title)));
        }
        let (mut x0, mut x1, mut y0, mut y1) = pts.iter().fold(
            (
                f64::INFINITY,
                f64::NEG_INFINITY,
                f64::INFINITY,
                f64::NEG_INFINITY,
            ),
            |(a, b, c, d), &(x, y)| (a.min(x), b.max(x), c.min(y), d.max(y)),
        );
        if x1 - x0 <= 0.0 {
            x0 -= 0.5;
            x1 += 0.5;
        }
        if y1 - y0 <= 0.0 {
            y0 -= 0.5;
            y1 += 0.5;
        }
        let px = |x: f64| PAD_L + (x - x0) / (x1 - x0) * (W - PAD_L - PAD_R);
        let py = |y: f64| H - PAD_B - (y - y0) / (y1 - y0) * (H - PAD_T - PAD_B);

        let mut svg = String::new();
        let _ = writeln!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
            W / 2.0,
            xml_escape(&self.title)
        );
        let _ = writeln!(
            svg,
            r#"<rect class="frame" x="{PAD_L}" y="{PAD_T}" width="{}" height="{}" fill="none" stroke="black"/>"#,
            W - PAD_L - PAD_R,
            H - PAD_T - PAD_B
        );
        for i in 0..=4 {
            let f = i as f64 / 4.0;
            let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
            let label = |v: f64, s: Scale| match s {
                Scale::Linear => format!("{v:.3}"),
                Scale::Log10 => format!("{:.3e}", 10f64.powf(v)),
            };
            let _ = writeln!(
                svg,
                r#"<text class="xtick" x="{:.2}" y="{}" text-anchor="middle">{}</text>"#,
                px(xv),
                H - PAD_B + 16.0,
                label(xv, self.x_scale)
            );
            let _ = writeln!(
                svg,
                r#"<text class="ytick" x="{}" y="{:.2}" text-anchor="end">{}</text>"#,
                PAD_L - 4.0,
                py(yv) + 4.0,
                label(yv, self.y_scale)
            );
        }
        let scale_name = |s: Scale| match s {
            Scale::Linear => "linear",
            Scale::Log10 => "log",
        };
        let _ = writeln!(
            svg,
            r#"<text class="xlabel" data-scale="{}" x="{}" y="{}" text-anchor="middle">{}</text>"#,
            scale_name(self.x_scale),
            (PAD_L + W - PAD_R) / 2.0,
            H - 10.0,
            xml_escape(&self.x_label)
        );
        let _ = writeln!(
            svg,
            r#"<text class="ylabel" data-scale="{}" x="14" y="{}" transform="rotate(-90 14 {})" text-anchor="middle">{}</text>"#,
            scale_name(self.y_scale),
            H / 2.0,
            H / 2.0,
            xml_escape(&self.y_label)
        );
        for (i, s) in self.series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let coords: Vec<String> = s
                .points
                .iter()
                .map(|&(x, y)| (tx(x, self.x_scale), tx(y, self.y_scale)))
                .filter(|(x, y)| x.is_finite() && y.is_finite())
                .map(|(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
                .collect();
            let (class, dash) = if s.reference {
                ("reference", r#" stroke-dasharray="6 4""#)
            } else {
                ("series", "")
            };
            let _ = writeln!(
                svg,
                r#"<polyline class="{class}" data-label="{}" fill="none" stroke="{color}" stroke-width="1.5"{dash} points="{}"/>"#,
                xml_escape(&s.label),
                coords.join(" ")
            );
            let ly = PAD_T + 16.0 * (i as f64 + 1.0);
            let _ = writeln!(
                svg,
                r#"<text class="legend" x="{}" y="{ly}" fill="{color}">{}</text>"#,
                W - PAD_R + 8.0,
                xml_escape(&s.label)
            );
        }
        svg.push_str("</svg>\n");
        Ok(svg)
    }
}

fn sorted_unique<T: PartialOrd + Copy>(mut v: Vec<T>) -> Vec<T> {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    v.dedup_by(|a, b| a == b);
    v
}

/// Build the figure for `kind` from `source`.
pub fn figure(source: &PlotSource<'_>, kind: PlotKind) -> Result<Figure> {
    let missing = |what: &str| CliError::Plot(format!("{}: {what}", kind.as_str()));
    match (kind, source) {
        (PlotKind::Spectrum, PlotSource::Spectra(spectra)) => {
            if spectra.is_empty() {
                return Err(missing("no spectra"));
            }
            let series = spectra
                .iter()
                .map(|(label, s)| Series {
                    label: label.clone(),
                    points: s
                        .thetas
                        .iter()
                        .zip(&s.values)
                        .map(|(t, v)| (t.to_degrees(), *v))
                        .collect(),
                    reference: false,
                })
                .collect();
            Ok(Figure {
                title: "Pseudo-spectrum".into(),
                x_label: "AoA (degrees)".into(),
                y_label: "P(theta)".into(),
                x_scale: Scale::Linear,
                y_scale: Scale::Log10,
                series,
            })
        }
        (PlotKind::Spectrum, _) => Err(missing("needs pseudo-spectra")),
        (_, PlotSource::Spectra(_)) => Err(missing("needs a sweep result")),
        (PlotKind::NmseVsSnr, PlotSource::Sweep { result, .. }) => {
            let ms = sorted_unique(result.aggregates.iter().map(|a| a.antennas).collect());
            let snrs = sorted_unique(result.aggregates.iter().map(|a| a.snr_db).collect());
            if snrs.len() < 2 {
                return Err(missing("needs at least two SNR points"));
            }
            let mut series = Vec::new();
            for tag in result.estimators() {
                for &m in &ms {
                    let mut pts: Vec<(f64, f64)> = result
                        .aggregates
                        .iter()
                        .filter(|a| a.estimator == tag && a.antennas == m)
                        .map(|a| (a.snr_db, 10f64.powf(a.nmse_median_db / 10.0)))
                        .collect();
                    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
                    if pts.is_empty() {
                        continue;
                    }
                    let label = if ms.len() > 1 {
                        format!("{tag} M={m}")
                    } else {
                        tag.to_string()
                    };
                    series.push(Series {
                        label,
                        points: pts,
                        reference: false,
                    });
                }
            }
            Ok(Figure {
                title: "Median NMSE".into(),
                x_label: "SNR (dB)".into(),
                y_label: "NMSE".into(),
                x_scale: Scale::Linear,
                y_scale: Scale::Log10,
                series,
            })
        }
        (PlotKind::GainVsM, PlotSource::Sweep { result, gamma }) => {
            let gaps = harness::snr_gain_at_target(
                result,
                *gamma,
                EstimatorTag::Rank1,
                EstimatorTag::Mmse,
            )?;
            if gaps.len() < 2 {
                return Err(missing("needs at least two M values"));
            }
            let first = &result.aggregates[0];
            let rho = first.paths as f64 + 1.0;
            let predicted = gaps
                .iter()
                .map(|&(m, _)| {
                    // Noise-to-signal ratio where the MMSE curve meets the target.
                    let curve: Vec<(f64, f64)> = result
                        .aggregates
                        .iter()
                        .filter(|a| a.estimator == EstimatorTag::Mmse && a.antennas == m)
                        .map(|a| (a.snr_db, a.nmse_mean_db))
                        .collect();
                    let snr = harness::crossing_snr(&curve, harness::db(*gamma)).unwrap_or(0.0);
                    let nsr = 10f64.powf(-snr / 10.0);
                    (
                        m as f64,
                        baselines::predicted_snr_gain(m, first.pilot_len, nsr, rho),
                    )
                })
                .collect();
            Ok(Figure {
                title: format!("SNR gain at NMSE {gamma:e}"),
                x_label: "M".into(),
                y_label: "SNR gain (dB)".into(),
                x_scale: Scale::Log10,
                y_scale: Scale::Linear,
                series: vec![
                    Series {
                        label: "measured".into(),
                        points: gaps.iter().map(|&(m, g)| (m as f64, g)).collect(),
                        reference: false,
                    },
                    Series {
                        label: "predicted".into(),
                        points: predicted,
                        reference: true,
                    },
                ],
            })
        }
        (PlotKind::RuntimeVsM, PlotSource::Sweep { result, .. }) => {
            let mut series = Vec::new();
            for tag in result.estimators() {
                let ms = sorted_unique(
                    result
                        .aggregates
                        .iter()
                        .filter(|a| a.estimator == tag)
                        .map(|a| a.antennas)
                        .collect(),
                );
                let pts: Vec<(f64, f64)> = ms
                    .iter()
                    .filter_map(|&m| {
                        let ts: Vec<f64> = result
                            .aggregates
                            .iter()
                            .filter(|a| a.estimator == tag && a.antennas == m)
                            .filter_map(|a| a.runtime_median_ns)
                            .collect();
                        (!ts.is_empty())
                            .then(|| (m as f64, ts.iter().sum::<f64>() / ts.len() as f64 * 1e-9))
                    })
                    .collect();
                if !pts.is_empty() {
                    series.push(Series {
                        label: tag.to_string(),
                        points: pts,
                        reference: false,
                    });
                }
            }
            if series.is_empty() {
                return Err(missing("no runtimes recorded (add the runtime metric)"));
            }
            Ok(Figure {
                title: "Runtime per estimate".into(),
                x_label: "M".into(),
                y_label: "seconds".into(),
                x_scale: Scale::Log10,
                y_scale: Scale::Log10,
                series,
            })
        }
    }
}

/// Render `kind` to an SVG file.
pub fn emit_plot(source: &PlotSource<'_>, kind: PlotKind, path: &Path) -> Result<()> {
    let svg = figure(source, kind)?.to_svg()?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, svg).map_err(|e| CliError::io(path, e))
}
