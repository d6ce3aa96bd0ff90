use std::fmt::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::Args;

#[derive(Args)]
pub struct PlotArgs {
    /// history.csv written by a training command.
    history: PathBuf,
    /// SVG output.
    #[arg(long)]
    out: PathBuf,
}

const W: f64 = 420.0;
const H: f64 = 280.0;
const PAD: f64 = 40.0;

struct Series<'a> {
    name: &'a str,
    color: &'a str,
    ys: Vec<f64>,
}

fn panel(svg: &mut String, x0: f64, title: &str, epochs: &[f64], series: &[Series]) {
    let finite = series.iter().flat_map(|s| s.ys.iter().copied()).filter(|v| v.is_finite());
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let (lo, hi) = if lo < hi { (lo, hi) } else { (lo - 0.5, lo + 0.5) };
    let (e0, e1) = (epochs[0], epochs[epochs.len() - 1].max(epochs[0] + 1.0));
    let px = |e: f64| x0 + PAD + (e - e0) / (e1 - e0) * (W - 2.0 * PAD);
    let py = |v: f64| H - PAD - (v - lo) / (hi - lo) * (H - 2.0 * PAD);
    let _ = writeln!(svg, r#"<text x="{}" y="20" font-size="14" text-anchor="middle">{title}</text>"#, x0 + W / 2.0);
    let _ = writeln!(
        svg,
        r#"<rect x="{}" y="{PAD}" width="{}" height="{}" fill="none" stroke="gray"/>"#,
        x0 + PAD,
        W - 2.0 * PAD,
        H - 2.0 * PAD
    );
    for (v, y) in [(lo, H - PAD), (hi, PAD)] {
        let _ = writeln!(svg, r#"<text x="{}" y="{}" font-size="10" text-anchor="end">{v:.3}</text>"#, x0 + PAD - 4.0, y + 4.0);
    }
    for (e, anchor) in [(e0, "start"), (e1, "end")] {
        let _ = writeln!(svg, r#"<text x="{}" y="{}" font-size="10" text-anchor="{anchor}">{e}</text>"#, px(e), H - PAD + 14.0);
    }
    for (k, s) in series.iter().enumerate() {
        let pts: Vec<String> = epochs
            .iter()
            .zip(&s.ys)
            .filter(|(_, v)| v.is_finite())
            .map(|(&e, &v)| format!("{:.1},{:.1}", px(e), py(v)))
            .collect();
        let _ = writeln!(svg, r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#, s.color, pts.join(" "));
        let ly = PAD + 14.0 + 14.0 * k as f64;
        let _ = writeln!(svg, r#"<text x="{}" y="{ly}" font-size="11" fill="{}">{}</text>"#, x0 + W - PAD - 60.0, s.color, s.name);
    }
}

pub fn plot(args: PlotArgs) -> Result<ExitCode> {
    let mut reader = csv::Reader::from_path(&args.history).with_context(|| args.history.display().to_string())?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name).with_context(|| format!("history has no {name} column"));
    let idx = [col("epoch")?, col("train_loss")?, col("dev_loss")?, col("train_acc")?, col("dev_acc")?];
    let mut cols: [Vec<f64>; 5] = Default::default();
    for row in reader.records() {
        let row = row?;
        for (c, &i) in cols.iter_mut().zip(&idx) {
            c.push(row.get(i).unwrap_or("").parse().unwrap_or(f64::NAN));
        }
    }
    if cols[0].is_empty() {
        bail!("{} has no epochs", args.history.display());
    }
    let [epochs, tl, dl, ta, da] = cols;
    let mut svg = format!(r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{H}" font-family="sans-serif">"#, 2.0 * W);
    svg.push('\n');
    panel(&mut svg, 0.0, "loss", &epochs, &[
        Series { name: "train", color: "#1f77b4", ys: tl },
        Series { name: "dev", color: "#d62728", ys: dl },
    ]);
    panel(&mut svg, W, "accuracy", &epochs, &[
        Series { name: "train", color: "#1f77b4", ys: ta },
        Series { name: "dev", color: "#d62728", ys: da },
    ]);
    svg.push_str("</svg>\n");
    std::fs::write(&args.out, svg).with_context(|| args.out.display().to_string())?;
    println!("wrote {}", args.out.display());
    Ok(ExitCode::SUCCESS)
}
