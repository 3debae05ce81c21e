use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};

use super::{gain, CellSummary, GridResult, Protocol};
use crate::container::write_atomic;
use crate::error::invalid;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    Heatmap,
}

const FIXED_COLUMNS: [&str; 5] = ["protocol", "mean_error", "sem", "n_seeds", "converged_fraction"];

/// Serializes the summary table; floats use the shortest exact representation.
pub fn write_csv(result: &GridResult) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let header: Vec<&str> = result
        .axis_names
        .iter()
        .map(String::as_str)
        .chain(FIXED_COLUMNS)
        .collect();
    w.write_record(&header)?;
    for r in &result.records {
        let mut row: Vec<String> = r.values.iter().map(|v| format!("{v:?}")).collect();
        row.push(r.protocol.name().to_string());
        row.push(format!("{:?}", r.mean_error));
        row.push(format!("{:?}", r.sem));
        row.push(r.n_seeds.to_string());
        row.push(format!("{:?}", r.converged_fraction));
        w.write_record(&row)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// Reads a table written by [`write_csv`]; returns the axis names and rows.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<CellSummary>)> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    let n_axes = header
        .len()
        .checked_sub(FIXED_COLUMNS.len())
        .ok_or_else(|| invalid("CSV header too short"))?;
    if header.iter().skip(n_axes).ne(FIXED_COLUMNS) {
        return Err(invalid(format!("unexpected CSV header in {}", path.display())));
    }
    let num = |s: &str| {
        s.parse::<f64>()
            .map_err(|_| invalid(format!("bad number `{s}` in {}", path.display())))
    };
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        rows.push(CellSummary {
            values: (0..n_axes).map(|i| num(&rec[i])).collect::<Result<_>>()?,
            protocol: Protocol::parse(&rec[n_axes])?,
            mean_error: num(&rec[n_axes + 1])?,
            sem: num(&rec[n_axes + 2])?,
            n_seeds: rec[n_axes + 3].parse().map_err(|_| invalid("bad n_seeds"))?,
            converged_fraction: num(&rec[n_axes + 4])?,
        });
    }
    Ok((header.iter().take(n_axes).map(String::from).collect(), rows))
}

const TILE: u32 = 24;

/// White at zero, blue for positive gain, red for negative, grey for missing.
fn diverging(t: f64) -> Rgb<u8> {
    if !t.is_finite() {
        return Rgb([160, 160, 160]);
    }
    let t = t.clamp(-1.0, 1.0);
    let (target, k) = if t >= 0.0 {
        ([33.0, 102.0, 172.0], t)
    } else {
        ([178.0, 24.0, 43.0], -t)
    };
    let mix = |c: f64| (255.0 + (c - 255.0) * k).round() as u8;
    Rgb([mix(target[0]), mix(target[1]), mix(target[2])])
}

/// Gain of `tf` over `reference` on a two-axis grid: `M_target` runs left to
/// right, the other axis bottom to top.
pub fn gain_heatmap(result: &GridResult, tf: Protocol, reference: Protocol) -> Result<RgbImage> {
    if result.axis_names.len() != 2 {
        return Err(invalid("a heatmap needs a two-axis grid"));
    }
    let x_axis = result.axis_names.iter().position(|n| n == "M_target").unwrap_or(1);
    let y_axis = 1 - x_axis;
    let distinct = |axis: usize| {
        let mut v: Vec<f64> = result.records.iter().map(|r| r.values[axis]).collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    };
    let (xs, ys) = (distinct(x_axis), distinct(y_axis));
    let mut gains = vec![vec![f64::NAN; xs.len()]; ys.len()];
    for r in result.records.iter().filter(|r| r.protocol == tf) {
        let Some(other) = result.record(&r.values, reference) else {
            continue;
        };
        if let Ok(g) = gain(other.mean_error, r.mean_error) {
            let xi = xs.iter().position(|&v| v == r.values[x_axis]).expect("listed");
            let yi = ys.iter().position(|&v| v == r.values[y_axis]).expect("listed");
            gains[yi][xi] = g;
        }
    }
    let scale = gains
        .iter()
        .flatten()
        .filter(|g| g.is_finite())
        .fold(0.0f64, |m, g| m.max(g.abs()));
    let scale = if scale > 0.0 { scale } else { 1.0 };
    let (w, h) = (xs.len() as u32 * TILE, ys.len() as u32 * TILE);
    Ok(RgbImage::from_fn(w, h, |px, py| {
        let xi = (px / TILE) as usize;
        let yi = ys.len() - 1 - (py / TILE) as usize;
        diverging(gains[yi][xi] / scale)
    }))
}

/// Writes `export/results.csv` and, for two-axis grids, one gain heatmap per
/// protocol compared against TF (and theoryTF against theoryRF).
pub fn export(result: &GridResult, dir: &Path, formats: &[ExportFormat]) -> Result<Vec<PathBuf>> {
    let out = dir.join("export");
    std::fs::create_dir_all(&out)?;
    let mut written = Vec::new();
    if formats.contains(&ExportFormat::Csv) {
        let path = out.join("results.csv");
        write_atomic(&path, &write_csv(result)?)?;
        written.push(path);
    }
    if formats.contains(&ExportFormat::Heatmap) {
        let present: Vec<Protocol> = Protocol::ALL
            .into_iter()
            .filter(|p| result.records.iter().any(|r| r.protocol == *p))
            .collect();
        let mut pairs = Vec::new();
        if present.contains(&Protocol::Transferred) {
            for &p in &present {
                if !p.is_theory() && p != Protocol::Transferred {
                    pairs.push((Protocol::Transferred, p));
                }
            }
        }
        if present.contains(&Protocol::TheoryTransferred) && present.contains(&Protocol::TheoryRandom) {
            pairs.push((Protocol::TheoryTransferred, Protocol::TheoryRandom));
        }
        if pairs.is_empty() {
            return Err(invalid("no protocol pair to compare in a gain map"));
        }
        for (tf, reference) in pairs {
            let img = gain_heatmap(result, tf, reference)?;
            let path = out.join(format!("gain_{}_vs_{}.png", tf.name(), reference.name()));
            let mut bytes = Vec::new();
            img.write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)?;
            write_atomic(&path, &bytes)?;
            written.push(path);
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::super::CounterSnapshot;
    use super::*;

    fn result() -> GridResult {
        let mut records = Vec::new();
        for (i, &q) in [0.0, 1.0].iter().enumerate() {
            for (j, &a) in [0.1, 1e-7, 30.0].iter().enumerate() {
                for p in [Protocol::Transferred, Protocol::Scratch] {
                    records.push(CellSummary {
                        values: vec![q, a],
                        protocol: p,
                        mean_error: 0.1 + 0.01 * (i * 3 + j) as f64 + if p == Protocol::Scratch { 0.05 } else { 0.0 },
                        sem: 1.0 / 3.0,
                        n_seeds: 7,
                        converged_fraction: 0.25,
                    });
                }
            }
        }
        GridResult {
            config_hash: String::new(),
            axis_names: vec!["q_teacher".into(), "M_target".into()],
            records,
            diagnostics: vec![],
            cells: vec![],
            counters: CounterSnapshot::default(),
        }
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let res = result();
        let paths = export(&res, dir.path(), &[ExportFormat::Csv]).unwrap();
        let (names, rows) = read_csv(&paths[0]).unwrap();
        assert_eq!(names, res.axis_names);
        assert_eq!(rows, res.records);
        let text = std::fs::read_to_string(&paths[0]).unwrap();
        assert!(text.starts_with("q_teacher,M_target,protocol,mean_error,sem,n_seeds,converged_fraction\n"));
    }

    #[test]
    fn heatmap_written_with_palette() {
        let dir = tempfile::tempdir().unwrap();
        let paths = export(&result(), dir.path(), &[ExportFormat::Heatmap]).unwrap();
        assert_eq!(paths.len(), 1);
        assert!(paths[0].ends_with("gain_TF_vs_2L.png"));
        let img = image::open(&paths[0]).unwrap().to_rgb8();
        assert_eq!(img.dimensions(), (3 * TILE, 2 * TILE));
        // TF better everywhere: every tile is bluish.
        let p = img.get_pixel(1, 1);
        assert!(p[2] > p[0]);
        assert_eq!(diverging(0.0), Rgb([255, 255, 255]));
        assert!(diverging(-1.0)[0] > diverging(-1.0)[2]);
    }

    #[test]
    fn heatmap_needs_two_axes() {
        let mut res = result();
        res.axis_names.pop();
        assert!(gain_heatmap(&res, Protocol::Transferred, Protocol::Scratch).is_err());
    }
}
