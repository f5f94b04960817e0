//! Filter-bank magnitude curves as CSV and a two-panel SVG.

use std::fmt::Write;

use somnoscat::scattering::{FilterBank, ScatteringNet};

/// Frequency step of the plotted grid in Hz.
pub const GRID_STEP_HZ: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    /// `psi1_NN` or `psi2_NN`.
    pub id: String,
    pub bank: usize,
    pub points: Vec<(f64, f64)>,
}

fn grid(fs: f64) -> Vec<f64> {
    let n = (fs / 2.0 / GRID_STEP_HZ).round() as usize;
    (0..=n).map(|k| k as f64 * GRID_STEP_HZ).collect()
}

/// One curve per filter of both banks, first bank first.
pub fn filter_curves(net: &ScatteringNet) -> Vec<Curve> {
    let mut out = Vec::new();
    for (b, bank) in [&net.bank1, &net.bank2].into_iter().enumerate() {
        let freqs = grid(bank.fs);
        for i in 0..bank.len() {
            out.push(Curve {
                id: format!("psi{}_{i:02}", b + 1),
                bank: b + 1,
                points: freqs.iter().map(|&f| (f, bank.response(i, f))).collect(),
            });
        }
    }
    out
}

pub fn curves_csv(curves: &[Curve]) -> String {
    let mut s = String::from("omega_hz,filter_id,magnitude\n");
    for c in curves {
        for (f, m) in &c.points {
            writeln!(s, "{f:.1},{},{m:?}", c.id).unwrap();
        }
    }
    s
}

const WIDTH: f64 = 900.0;
const PANEL: f64 = 280.0;
const MARGIN: f64 = 50.0;

fn panel(s: &mut String, bank: &FilterBank, curves: &[&Curve], top: f64, title: &str) {
    let w = WIDTH - 2.0 * MARGIN;
    let h = PANEL - 2.0 * MARGIN;
    let f_max = bank.fs / 2.0;
    let y_max = curves
        .iter()
        .flat_map(|c| c.points.iter().map(|p| p.1))
        .fold(0.0, f64::max)
        .max(1e-12);
    let x0 = MARGIN;
    let y0 = top + PANEL - MARGIN;
    writeln!(s, r#"<text x="{x0}" y="{}" font-size="14">{title}</text>"#, top + 25.0).unwrap();
    writeln!(
        s,
        r##"<rect x="{x0}" y="{}" width="{w}" height="{h}" fill="none" stroke="#888"/>"##,
        top + MARGIN
    )
    .unwrap();
    for tick in (0..=10).map(|k| k as f64 * f_max / 10.0) {
        let x = x0 + tick / f_max * w;
        writeln!(s, r#"<text x="{x:.1}" y="{:.1}" font-size="10" text-anchor="middle">{tick:.0}</text>"#, y0 + 14.0)
            .unwrap();
    }
    writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="middle">frequency (Hz)</text>"#,
        x0 + w / 2.0,
        y0 + 30.0
    )
    .unwrap();
    for (i, c) in curves.iter().enumerate() {
        let hue = 360.0 * i as f64 / curves.len() as f64;
        let pts: Vec<String> = c
            .points
            .iter()
            .map(|(f, m)| format!("{:.1},{:.1}", x0 + f / f_max * w, y0 - m / y_max * h))
            .collect();
        writeln!(
            s,
            r#"<polyline fill="none" stroke="hsl({hue:.0},70%,40%)" stroke-width="1.2" points="{}"><title>{}</title></polyline>"#,
            pts.join(" "),
            c.id
        )
        .unwrap();
    }
}

pub fn curves_svg(net: &ScatteringNet, curves: &[Curve]) -> String {
    let mut s = format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{}" font-family="sans-serif">"#,
        2.0 * PANEL
    );
    s.push('\n');
    for (b, bank) in [&net.bank1, &net.bank2].into_iter().enumerate() {
        let mine: Vec<&Curve> = curves.iter().filter(|c| c.bank == b + 1).collect();
        let title = format!(
            "bank {}: Q={}, J={}, P={}, mother centre {:.2} Hz",
            b + 1,
            bank.q,
            bank.j,
            bank.p,
            bank.mother_center
        );
        panel(&mut s, bank, &mine, b as f64 * PANEL, &title);
    }
    s.push_str("</svg>\n");
    s
}
