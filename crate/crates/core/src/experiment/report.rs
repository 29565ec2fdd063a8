// SPDX-License-Identifier: MIT OR Apache-2.0

//! The report: joins analysis tables across groups into summary CSVs and
//! SVG figures under `report/`. Figures whose inputs have not been produced
//! are emitted as placeholder panels marked "missing".

use std::collections::BTreeMap;
use std::path::Path;

use super::svg::{self, Point, Series, PALETTE};
use super::tables::{self, read_csv, Cell, Table};
use super::{Experiment, Group};
use crate::error::Result;
use crate::stability::{sorted_mean, LayerProfile};
use crate::store::write_atomic;

/// Status of every figure written.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReportSummary {
    /// `(panel, present)` in emission order.
    pub panels: Vec<(String, bool)>,
}

type Rows = Vec<BTreeMap<String, String>>;

fn load(exp: &Experiment, g: &Group, file: &str) -> Result<Option<Rows>> {
    let p = exp.out_root.join(g.rel_dir()).join(file);
    if p.exists() {
        Ok(Some(read_csv(&p)?))
    } else {
        Ok(None)
    }
}

fn num(r: &BTreeMap<String, String>, k: &str) -> f64 {
    r.get(k).and_then(|v| v.parse().ok()).unwrap_or(f64::NAN)
}

fn text(r: &BTreeMap<String, String>, k: &str) -> Cell {
    Cell::Text(r.get(k).cloned().unwrap_or_default())
}

fn int(r: &BTreeMap<String, String>, k: &str) -> Cell {
    Cell::Int(r.get(k).and_then(|v| v.parse().ok()).unwrap_or(0))
}

fn float(r: &BTreeMap<String, String>, k: &str) -> Cell {
    Cell::Float(num(r, k))
}

fn group_name(g: &Group) -> String {
    format!("{} {}", g.arch.label(), g.variant)
}

struct Report<'a> {
    dir: &'a Path,
    summary: ReportSummary,
    panels: Table,
}

impl Report<'_> {
    fn emit(&mut self, panel: &str, svg_text: Option<String>, hint: &str) -> Result<()> {
        let file = format!("{panel}.svg");
        let present = svg_text.is_some();
        let body = svg_text.unwrap_or_else(|| {
            svg::missing_panel(panel, &format!("run `seedstab analyze --which {hint}`"))
        });
        write_atomic(&self.dir.join(&file), body.as_bytes())?;
        self.panels.push(vec![
            panel.into(),
            (if present { "present" } else { "missing" }).into(),
            file.into(),
        ]);
        self.summary.panels.push((panel.to_string(), present));
        Ok(())
    }

    fn table(&self, name: &str, t: &Table) -> Result<()> {
        t.write(&self.dir.join(name))
    }
}

/// Build the report directory from whatever analysis outputs exist.
pub fn cmd_report(exp: &Experiment) -> Result<ReportSummary> {
    let groups = exp.groups()?;
    let dir = exp.out_root.join("report");
    std::fs::create_dir_all(&dir)?;
    let mut rep = Report {
        dir: &dir,
        summary: ReportSummary::default(),
        panels: Table::new(tables::PANELS),
    };

    // Layer stability curves and the stability gap.
    let mut layer_t = Table::new(tables::LAYERS);
    let mut gap_t = Table::new(tables::GAP_DEPTH);
    let mut curves = Vec::new();
    let mut overlay = Vec::new();
    let mut gap_points = Vec::new();
    let mut mean_s: BTreeMap<(String, String), f64> = BTreeMap::new();
    let arch_ids: Vec<String> = {
        let mut v: Vec<String> = groups.iter().map(|g| g.arch_id.clone()).collect();
        v.dedup();
        v
    };
    for (gi, g) in groups.iter().enumerate() {
        let Some(rows) = load(exp, g, "layers_same_layer.csv")? else {
            continue;
        };
        for r in &rows {
            layer_t.push(vec![
                text(r, "arch_id"),
                text(r, "variant"),
                text(r, "mode"),
                int(r, "layer"),
                float(r, "r_l"),
                float(r, "S_l"),
            ]);
        }
        let s_l: Vec<f64> = rows.iter().map(|r| num(r, "S_l")).collect();
        let pts: Vec<(f64, f64)> = s_l
            .iter()
            .enumerate()
            .map(|(l, &s)| ((l + 1) as f64, s))
            .collect();
        curves.push(Series {
            name: group_name(g),
            color: PALETTE[gi % PALETTE.len()].into(),
            points: pts.clone(),
            dashed: false,
        });
        let ai = arch_ids.iter().position(|a| a == &g.arch_id).unwrap_or(0);
        overlay.push(Series {
            name: group_name(g),
            color: PALETTE[ai % PALETTE.len()].into(),
            points: pts,
            dashed: g.variant != exp.config.variants()?[0].variant_tag(),
        });
        mean_s.insert((g.arch_id.clone(), g.variant.clone()), sorted_mean(&s_l));
        let p = LayerProfile::from_layer_means(s_l)?;
        gap_t.push(vec![
            g.arch_id.as_str().into(),
            g.variant.as_str().into(),
            p.n_layers.into(),
            p.l_max.into(),
            p.l_min.into(),
            p.s_l[p.l_max - 1].into(),
            p.s_l[p.l_min - 1].into(),
            p.delta_s.into(),
            p.r_lmax.into(),
            p.r_lmin.into(),
        ]);
        gap_points.push(Point {
            x: p.r_lmax,
            y: p.s_l[p.l_max - 1],
            color: "#1f77b4".into(),
        });
        gap_points.push(Point {
            x: p.r_lmin,
            y: p.s_l[p.l_min - 1],
            color: "#d62728".into(),
        });
    }
    let have_layers = !curves.is_empty();
    rep.table("layer_stability.csv", &layer_t)?;
    rep.table("gap_depth.csv", &gap_t)?;
    rep.emit(
        "layer_stability",
        have_layers.then(|| svg::line_chart("Layer stability S_l", "layer", "S_l", &curves)),
        "stability",
    )?;
    rep.emit(
        "optimizer_overlay",
        have_layers.then(|| {
            svg::line_chart(
                "Optimizer overlay (dashed: later variants)",
                "layer",
                "S_l",
                &overlay,
            )
        }),
        "stability",
    )?;
    let gap_legend = vec![
        ("most stable layer".to_string(), "#1f77b4".to_string()),
        ("least stable layer".to_string(), "#d62728".to_string()),
    ];
    rep.emit(
        "gap_depth",
        have_layers.then(|| {
            svg::scatter(
                "Most and least stable layers by relative depth",
                "relative depth r_l",
                "S_l",
                &gap_points,
                &gap_legend,
            )
        }),
        "stability",
    )?;

    // Optimizer summary.
    let mut opt_t = Table::new(tables::OPTIMIZER_SUMMARY);
    for g in &groups {
        let cross = load(exp, g, "layers_cross_layer.csv")?
            .map(|rows| sorted_mean(&rows.iter().map(|r| num(r, "S_l")).collect::<Vec<_>>()));
        let refits = load(exp, g, "refits.csv")?;
        let col_mean = |k: &str| {
            refits
                .as_ref()
                .map(|rows| sorted_mean(&rows.iter().map(|r| num(r, k)).collect::<Vec<_>>()))
        };
        opt_t.push(vec![
            g.arch_id.as_str().into(),
            g.variant.as_str().into(),
            mean_s
                .get(&(g.arch_id.clone(), g.variant.clone()))
                .copied()
                .into(),
            cross.into(),
            col_mean("perplexity").into(),
            col_mean("mean_output_norm").into(),
        ]);
    }
    rep.table("optimizer_summary.csv", &opt_t)?;

    // CKA against head stability.
    let mut cka_t = Table::new(tables::CKA_OVERLAY);
    let mut cka_series = Vec::new();
    for (gi, g) in groups.iter().enumerate() {
        let Some(rows) = load(exp, g, "cka_overlay.csv")? else {
            continue;
        };
        let color = PALETTE[gi % PALETTE.len()].to_string();
        let mut c = Vec::new();
        let mut s = Vec::new();
        for r in &rows {
            cka_t.push(vec![
                text(r, "arch_id"),
                text(r, "variant"),
                int(r, "layer"),
                float(r, "cka"),
                float(r, "S_l"),
            ]);
            let l = num(r, "layer") + 1.0;
            c.push((l, num(r, "cka")));
            s.push((l, num(r, "S_l")));
        }
        cka_series.push(Series {
            name: format!("{} CKA", group_name(g)),
            color: color.clone(),
            points: c,
            dashed: false,
        });
        cka_series.push(Series {
            name: format!("{} S_l", group_name(g)),
            color,
            points: s,
            dashed: true,
        });
    }
    rep.table("cka_overlay.csv", &cka_t)?;
    rep.emit(
        "cka_overlay",
        (!cka_series.is_empty()).then(|| {
            svg::line_chart(
                "Residual CKA (solid) vs head stability (dashed)",
                "layer",
                "similarity",
                &cka_series,
            )
        }),
        "cka",
    )?;

    // Alignment heatmaps.
    let mut align_t = Table::new(tables::ALIGNMENT);
    let mut any_alignment = false;
    for g in &groups {
        let Some(rows) = load(exp, g, "alignment.csv")? else {
            continue;
        };
        any_alignment = true;
        let n = g.arch.n_layers;
        let mut h = vec![vec![0.0; n]; n];
        for r in &rows {
            align_t.push(vec![
                text(r, "arch_id"),
                text(r, "variant"),
                int(r, "anchor_layer"),
                int(r, "match_layer"),
                float(r, "fraction"),
            ]);
            let (i, j) = (
                num(r, "anchor_layer") as usize,
                num(r, "match_layer") as usize,
            );
            if i < n && j < n {
                h[i][j] = num(r, "fraction");
            }
        }
        let panel = format!("alignment-{}-{}", g.arch_id, g.variant);
        let body = svg::heatmap(
            &format!("Alignment map {}", group_name(g)),
            "pair layer",
            "anchor layer",
            &h,
        );
        rep.emit(&panel, Some(body), "cross_layer")?;
    }
    if !any_alignment {
        rep.emit("alignment", None, "cross_layer")?;
    }
    rep.table("alignment.csv", &align_t)?;

    // Prompt-length sweep.
    let mut sweep_t = Table::new(tables::SWEEP);
    let mut sweep_series = Vec::new();
    for (gi, g) in groups.iter().enumerate() {
        let Some(rows) = load(exp, g, "sweep.csv")? else {
            continue;
        };
        let mut by_len: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
        for r in &rows {
            sweep_t.push(vec![
                text(r, "arch_id"),
                text(r, "variant"),
                int(r, "nominal_length"),
                float(r, "mean_byte_tokens"),
                int(r, "layer"),
                float(r, "S_l"),
            ]);
            by_len
                .entry(num(r, "nominal_length") as u64)
                .or_default()
                .push(num(r, "S_l"));
        }
        sweep_series.push(Series {
            name: group_name(g),
            color: PALETTE[gi % PALETTE.len()].into(),
            points: by_len
                .iter()
                .map(|(&n, v)| (n as f64, sorted_mean(v)))
                .collect(),
            dashed: false,
        });
    }
    rep.table("sweep.csv", &sweep_t)?;
    rep.emit(
        "sweep",
        (!sweep_series.is_empty()).then(|| {
            svg::line_chart(
                "Mean head stability by prompt length",
                "words per prompt",
                "mean S",
                &sweep_series,
            )
        }),
        "sweep",
    )?;

    // Meta-SNE scatter.
    let points_path = exp
        .out_root
        .join("analysis")
        .join("metasne")
        .join("points.csv");
    let mut sne_t = Table::new(tables::METASNE_POINTS);
    let sne_svg = if points_path.exists() {
        let rows = read_csv(&points_path)?;
        let pts: Vec<Point> = rows
            .iter()
            .map(|r| {
                sne_t.push(vec![
                    text(r, "arch_id"),
                    text(r, "variant"),
                    int(r, "seed"),
                    int(r, "layer"),
                    int(r, "head"),
                    float(r, "r_l"),
                    float(r, "x"),
                    float(r, "y"),
                ]);
                Point {
                    x: num(r, "x"),
                    y: num(r, "y"),
                    color: svg::ramp(num(r, "r_l")),
                }
            })
            .collect();
        let legend = vec![
            ("shallow".to_string(), svg::ramp(0.0)),
            ("deep".to_string(), svg::ramp(1.0)),
        ];
        Some(svg::scatter(
            "Meta-SNE of attention heads (colour: relative depth)",
            "t-SNE 1",
            "t-SNE 2",
            &pts,
            &legend,
        ))
    } else {
        None
    };
    rep.table("metasne_points.csv", &sne_t)?;
    rep.emit("metasne", sne_svg, "metasne")?;

    let panels = std::mem::replace(&mut rep.panels, Table::new(tables::PANELS));
    rep.table("panels.csv", &panels)?;
    Ok(rep.summary)
}

/// Every CSV the report writes, with its schema.
pub const REPORT_TABLES: &[(&str, tables::Schema)] = &[
    ("layer_stability.csv", tables::LAYERS),
    ("gap_depth.csv", tables::GAP_DEPTH),
    ("optimizer_summary.csv", tables::OPTIMIZER_SUMMARY),
    ("cka_overlay.csv", tables::CKA_OVERLAY),
    ("alignment.csv", tables::ALIGNMENT),
    ("sweep.csv", tables::SWEEP),
    ("metasne_points.csv", tables::METASNE_POINTS),
    ("panels.csv", tables::PANELS),
];
