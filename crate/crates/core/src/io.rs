//! File formats: plain-text and PFM depth maps, structured-text camera
//! intrinsics, binary PGM images, JSON-lines detections and
//! correspondences, and the run-log CSV.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::detect::{Detection, DetectionRecord};
use crate::features::GrayImage;
use crate::geometry::{CameraIntrinsics, DepthMap, Pixel, Point3};
use crate::pnp::{Correspondence, CorrespondenceRecord};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },
}

impl IoError {
    fn parse(path: &Path, message: impl Into<String>) -> Self {
        IoError::Parse {
            path: path.display().to_string(),
            message: message.into(),
        }
    }

    fn io(path: &Path, source: std::io::Error) -> Self {
        IoError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// Render with 9 significant digits, printf %.9g style.
pub fn fmt_sig9(v: f64) -> String {
    if v.is_nan() {
        return "nan".to_string();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf" } else { "-inf" }.to_string();
    }
    if v == 0.0 {
        return "0".to_string();
    }
    let exp = v.abs().log10().floor() as i32;
    if (-4..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        format!("{v:.decimals$}")
    } else {
        format!("{v:.8e}")
    }
}

// ---------------------------------------------------------------------------
// depth maps

/// Plain-text matrix: first line "width height", then height rows of
/// width space-separated depths. Non-positive values mean invalid.
pub fn load_depth_text(path: &Path) -> Result<DepthMap, IoError> {
    let text = fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| IoError::parse(path, "empty file"))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|s| s.parse())
        .collect::<Result<_, _>>()
        .map_err(|e| IoError::parse(path, format!("bad header: {e}")))?;
    let [width, height] = dims[..] else {
        return Err(IoError::parse(path, "header must be \"width height\""));
    };
    let mut values = Vec::with_capacity(width * height);
    for (row, line) in lines.enumerate() {
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|s| s.parse())
            .collect::<Result<_, _>>()
            .map_err(|e| IoError::parse(path, format!("row {row}: {e}")))?;
        if vals.len() != width {
            return Err(IoError::parse(
                path,
                format!("row {row} has {} values, expected {width}", vals.len()),
            ));
        }
        values.extend(vals);
    }
    if values.len() != width * height {
        return Err(IoError::parse(
            path,
            format!("expected {height} rows, got {}", values.len() / width.max(1)),
        ));
    }
    DepthMap::new(width, height, values).map_err(|e| IoError::parse(path, e.to_string()))
}

/// Invalid cells are written as -1.
pub fn save_depth_text(path: &Path, dm: &DepthMap) -> Result<(), IoError> {
    let mut out = format!("{} {}\n", dm.width(), dm.height());
    for r in 0..dm.height() {
        let row: Vec<String> = (0..dm.width())
            .map(|c| match dm.get(r, c) {
                Some(d) => fmt_sig9(d),
                None => "-1".to_string(),
            })
            .collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| IoError::io(path, e))
}

/// Binary PFM, grayscale "Pf" header, rows stored bottom-to-top, negative
/// scale marks little-endian.
pub fn load_depth_pfm(path: &Path) -> Result<DepthMap, IoError> {
    let mut file = fs::File::open(path).map_err(|e| IoError::io(path, e))?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes).map_err(|e| IoError::io(path, e))?;

    // header: three whitespace-separated tokens
    let mut pos = 0usize;
    let mut token = || -> Result<String, IoError> {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(IoError::parse(path, "truncated PFM header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).to_string())
    };
    let magic = token()?;
    if magic != "Pf" {
        return Err(IoError::parse(path, format!("bad PFM magic {magic:?}")));
    }
    let width: usize = token()?
        .parse()
        .map_err(|e| IoError::parse(path, format!("bad width: {e}")))?;
    let height: usize = token()?
        .parse()
        .map_err(|e| IoError::parse(path, format!("bad height: {e}")))?;
    let scale: f64 = token()?
        .parse()
        .map_err(|e| IoError::parse(path, format!("bad scale: {e}")))?;
    let little_endian = scale < 0.0;
    let data_start = pos + 1; // single whitespace after the scale token

    let needed = width * height * 4;
    if bytes.len() < data_start + needed {
        return Err(IoError::parse(path, "truncated PFM pixel data"));
    }
    let mut values = vec![0.0f64; width * height];
    for i in 0..width * height {
        let chunk: [u8; 4] = bytes[data_start + 4 * i..data_start + 4 * i + 4]
            .try_into()
            .unwrap();
        let raw = if little_endian {
            f32::from_le_bytes(chunk)
        } else {
            f32::from_be_bytes(chunk)
        };
        // PFM rows run bottom to top
        let row = height - 1 - i / width;
        let col = i % width;
        values[row * width + col] = raw as f64;
    }
    DepthMap::new(width, height, values).map_err(|e| IoError::parse(path, e.to_string()))
}

pub fn save_depth_pfm(path: &Path, dm: &DepthMap) -> Result<(), IoError> {
    let mut out = Vec::new();
    out.extend_from_slice(format!("Pf\n{} {}\n-1.0\n", dm.width(), dm.height()).as_bytes());
    for r in (0..dm.height()).rev() {
        for c in 0..dm.width() {
            let v = dm.get(r, c).unwrap_or(-1.0) as f32;
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, out).map_err(|e| IoError::io(path, e))
}

/// Load a depth map, choosing the format by extension (.pfm = PFM,
/// anything else = plain text).
pub fn load_depth_auto(path: &Path) -> Result<DepthMap, IoError> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("pfm")) {
        load_depth_pfm(path)
    } else {
        load_depth_text(path)
    }
}

// ---------------------------------------------------------------------------
// intrinsics

/// Key-value text config with keys fx, fy, cx, cy. `#` starts a comment;
/// `key value` and `key = value` are both accepted.
pub fn load_intrinsics(path: &Path) -> Result<CameraIntrinsics, IoError> {
    let text = fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    let map = parse_key_values(&text, path)?;
    let get = |key: &str| -> Result<f64, IoError> {
        map.iter()
            .find(|(k, v)| k == key && !v.is_empty())
            .map(|(_, v)| v[0])
            .ok_or_else(|| IoError::parse(path, format!("missing key {key}")))
    };
    CameraIntrinsics::new(get("fx")?, get("fy")?, get("cx")?, get("cy")?)
        .map_err(|e| IoError::parse(path, e.to_string()))
}

/// Parse "key value..." / "key = value" lines; `#` starts a comment.
/// Each line yields its key and all numeric values on that line.
pub fn parse_key_values(text: &str, path: &Path) -> Result<Vec<(String, Vec<f64>)>, IoError> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let cleaned = line.replace('=', " ");
        let mut parts = cleaned.split_whitespace();
        let key = parts
            .next()
            .ok_or_else(|| IoError::parse(path, format!("line {}: missing key", lineno + 1)))?;
        let mut values = Vec::new();
        for part in parts {
            let value: f64 = part.parse().map_err(|e| {
                IoError::parse(path, format!("line {}: bad value {part:?}: {e}", lineno + 1))
            })?;
            values.push(value);
        }
        out.push((key.to_string(), values));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// images

/// Binary PGM (P5, 8-bit), intensities normalized to [0, 1].
pub fn load_pgm(path: &Path) -> Result<GrayImage, IoError> {
    let bytes = fs::read(path).map_err(|e| IoError::io(path, e))?;
    let mut pos = 0usize;
    let mut token = || -> Result<String, IoError> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(IoError::parse(path, "truncated PGM header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).to_string())
    };
    let magic = token()?;
    if magic != "P5" {
        return Err(IoError::parse(path, format!("bad PGM magic {magic:?}")));
    }
    let width: usize = token()?
        .parse()
        .map_err(|e| IoError::parse(path, format!("bad width: {e}")))?;
    let height: usize = token()?
        .parse()
        .map_err(|e| IoError::parse(path, format!("bad height: {e}")))?;
    let maxval: u32 = token()?
        .parse()
        .map_err(|e| IoError::parse(path, format!("bad maxval: {e}")))?;
    if maxval == 0 || maxval > 255 {
        return Err(IoError::parse(path, format!("unsupported maxval {maxval}")));
    }
    let data_start = pos + 1;
    if bytes.len() < data_start + width * height {
        return Err(IoError::parse(path, "truncated PGM pixel data"));
    }
    let data: Vec<f64> = bytes[data_start..data_start + width * height]
        .iter()
        .map(|&b| b as f64 / maxval as f64)
        .collect();
    GrayImage::new(width, height, data).map_err(|e| IoError::parse(path, e.to_string()))
}

pub fn save_pgm(path: &Path, img: &GrayImage) -> Result<(), IoError> {
    let mut out = Vec::new();
    out.extend_from_slice(format!("P5\n{} {}\n255\n", img.width(), img.height()).as_bytes());
    for r in 0..img.height() {
        for c in 0..img.width() {
            out.push((img.at(r, c) * 255.0).round().clamp(0.0, 255.0) as u8);
        }
    }
    fs::write(path, out).map_err(|e| IoError::io(path, e))
}

// ---------------------------------------------------------------------------
// JSON-lines

pub fn load_detections(path: &Path) -> Result<Vec<Detection>, IoError> {
    let text = fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, line)| {
            let rec: DetectionRecord = serde_json::from_str(line)
                .map_err(|e| IoError::parse(path, format!("line {}: {e}", i + 1)))?;
            rec.try_into()
                .map_err(|e| IoError::parse(path, format!("line {}: {e}", i + 1)))
        })
        .collect()
}

/// Correspondence JSONL split into (foreground, background) by the `set`
/// field.
pub fn load_correspondences(
    path: &Path,
) -> Result<(Vec<Correspondence>, Vec<Correspondence>), IoError> {
    let text = fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    let mut fg = Vec::new();
    let mut bg = Vec::new();
    for (i, line) in text.lines().filter(|l| !l.trim().is_empty()).enumerate() {
        let rec: CorrespondenceRecord = serde_json::from_str(line)
            .map_err(|e| IoError::parse(path, format!("line {}: {e}", i + 1)))?;
        let corr = Correspondence::new(Point3::new(rec.x, rec.y, rec.z), Pixel::new(rec.u, rec.v))
            .map_err(|e| IoError::parse(path, format!("line {}: {e}", i + 1)))?;
        match rec.set.as_str() {
            "fg" => fg.push(corr),
            "bg" => bg.push(corr),
            other => {
                return Err(IoError::parse(
                    path,
                    format!("line {}: set must be fg or bg, got {other:?}", i + 1),
                ))
            }
        }
    }
    Ok((fg, bg))
}

// ---------------------------------------------------------------------------
// run-log CSV

pub const RUN_LOG_HEADER: &str = "t,src,gt_x,gt_y,gt_z,est_x,est_y,est_z";
pub const SIM_LOG_HEADER: &str = "t,src,gt_x,gt_y,gt_z,est_x,est_y,est_z,src_failed,steering,speed";

/// One run-log row. `estimate` is absent on failed frames.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub t: f64,
    pub src: String,
    pub gt: [f64; 3],
    pub est: Option<[f64; 3]>,
    pub failed: bool,
    pub steering: f64,
    pub speed: f64,
}

fn fmt_triple(v: Option<[f64; 3]>) -> String {
    match v {
        Some([x, y, z]) => format!("{},{},{}", fmt_sig9(x), fmt_sig9(y), fmt_sig9(z)),
        None => "nan,nan,nan".to_string(),
    }
}

/// Serialize rows with the base 8-column header.
pub fn write_run_log(path: &Path, rows: &[LogRow]) -> Result<(), IoError> {
    let mut out = String::from(RUN_LOG_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            fmt_sig9(r.t),
            r.src,
            fmt_triple(Some(r.gt)),
            fmt_triple(r.est),
        ));
    }
    fs::write(path, out).map_err(|e| IoError::io(path, e))
}

/// Serialize rows with the extended simulator header.
pub fn write_sim_log(path: &Path, rows: &[LogRow]) -> Result<(), IoError> {
    let mut file = fs::File::create(path).map_err(|e| IoError::io(path, e))?;
    let text = render_sim_log(rows);
    file.write_all(text.as_bytes()).map_err(|e| IoError::io(path, e))
}

pub fn render_sim_log(rows: &[LogRow]) -> String {
    let mut out = String::from(SIM_LOG_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            fmt_sig9(r.t),
            r.src,
            fmt_triple(Some(r.gt)),
            fmt_triple(r.est),
            if r.failed { 1 } else { 0 },
            fmt_sig9(r.steering),
            fmt_sig9(r.speed),
        ));
    }
    out
}

/// Parse a run-log CSV written by either writer.
pub fn read_run_log(path: &Path) -> Result<Vec<LogRow>, IoError> {
    let text = fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| IoError::parse(path, "empty log"))?;
    let extended = header.starts_with(SIM_LOG_HEADER);
    if !extended && !header.starts_with(RUN_LOG_HEADER) {
        return Err(IoError::parse(path, format!("unexpected header {header:?}")));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let want = if extended { 11 } else { 8 };
        if fields.len() != want {
            return Err(IoError::parse(
                path,
                format!("line {}: expected {want} fields, got {}", i + 2, fields.len()),
            ));
        }
        let num = |s: &str| -> Result<f64, IoError> {
            s.parse()
                .map_err(|e| IoError::parse(path, format!("line {}: {e}", i + 2)))
        };
        let est_x = num(fields[5])?;
        let est = if est_x.is_nan() {
            None
        } else {
            Some([est_x, num(fields[6])?, num(fields[7])?])
        };
        rows.push(LogRow {
            t: num(fields[0])?,
            src: fields[1].to_string(),
            gt: [num(fields[2])?, num(fields[3])?, num(fields[4])?],
            est,
            failed: extended && fields[8] == "1",
            steering: if extended { num(fields[9])? } else { 0.0 },
            speed: if extended { num(fields[10])? } else { 0.0 },
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn sig9_formatting() {
        assert_eq!(fmt_sig9(0.0), "0");
        assert_eq!(fmt_sig9(1.0), "1.00000000");
        assert_eq!(fmt_sig9(-2.5), "-2.50000000");
        assert_eq!(fmt_sig9(123456789.0), "123456789");
        assert_eq!(fmt_sig9(0.000123456789), "0.000123456789");
        assert_eq!(fmt_sig9(1.23456789e12), "1.23456789e12");
        assert_eq!(fmt_sig9(f64::NAN), "nan");
    }

    #[test]
    fn depth_text_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("d.txt");
        let mut dm = DepthMap::new(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        dm.invalidate(1, 2);
        save_depth_text(&path, &dm).unwrap();
        let loaded = load_depth_text(&path).unwrap();
        assert_eq!(loaded.width(), 3);
        assert_eq!(loaded.height(), 2);
        assert_eq!(loaded.get(0, 1), Some(2.0));
        assert_eq!(loaded.get(1, 2), None);
        assert_eq!(loaded.valid_count(), 5);
    }

    #[test]
    fn depth_pfm_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("d.pfm");
        let mut dm = DepthMap::new(4, 3, (1..=12).map(|v| v as f64 / 4.0).collect()).unwrap();
        dm.invalidate(2, 0);
        save_depth_pfm(&path, &dm).unwrap();
        let loaded = load_depth_pfm(&path).unwrap();
        assert_eq!(loaded.width(), 4);
        assert_eq!(loaded.height(), 3);
        for r in 0..3 {
            for c in 0..4 {
                match dm.get(r, c) {
                    Some(d) => assert!((loaded.get(r, c).unwrap() - d).abs() < 1e-6),
                    None => assert_eq!(loaded.get(r, c), None),
                }
            }
        }
    }

    #[test]
    fn intrinsics_config_parses() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("intr.cfg");
        fs::write(&path, "# camera\nfx = 400\nfy 410\ncx = 320\ncy = 240\n").unwrap();
        let intr = load_intrinsics(&path).unwrap();
        assert_eq!(intr.fx, 400.0);
        assert_eq!(intr.fy, 410.0);
        assert_eq!(intr.cx, 320.0);
        assert_eq!(intr.cy, 240.0);
    }

    #[test]
    fn missing_intrinsics_key_is_an_error() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("intr.cfg");
        fs::write(&path, "fx = 400\nfy = 410\ncx = 320\n").unwrap();
        assert!(load_intrinsics(&path).is_err());
    }

    #[test]
    fn pgm_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("img.pgm");
        let img = GrayImage::from_fn(8, 6, |x, y| (x + y) / 14.0);
        save_pgm(&path, &img).unwrap();
        let loaded = load_pgm(&path).unwrap();
        assert_eq!(loaded.width(), 8);
        assert_eq!(loaded.height(), 6);
        for r in 0..6 {
            for c in 0..8 {
                assert!((loaded.at(r, c) - img.at(r, c)).abs() < 1.0 / 255.0);
            }
        }
    }

    #[test]
    fn correspondences_split_by_set() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        fs::write(
            &path,
            concat!(
                "{\"X\":0.1,\"Y\":0.2,\"Z\":3.0,\"u\":100,\"v\":120,\"set\":\"fg\"}\n",
                "{\"X\":1.0,\"Y\":0.0,\"Z\":8.0,\"u\":400,\"v\":300,\"set\":\"bg\"}\n",
                "{\"X\":0.3,\"Y\":0.1,\"Z\":2.5,\"u\":150,\"v\":110,\"set\":\"fg\"}\n",
            ),
        )
        .unwrap();
        let (fg, bg) = load_correspondences(&path).unwrap();
        assert_eq!(fg.len(), 2);
        assert_eq!(bg.len(), 1);
        assert_eq!(bg[0].world.z, 8.0);
    }

    #[test]
    fn run_log_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("log.csv");
        let rows = vec![
            LogRow {
                t: 0.1,
                src: "pnp".into(),
                gt: [0.0, 0.0, 5.0],
                est: Some([0.01, 0.0, 5.02]),
                failed: false,
                steering: 0.05,
                speed: 0.4,
            },
            LogRow {
                t: 0.2,
                src: "network".into(),
                gt: [0.0, 0.0, 5.0],
                est: None,
                failed: true,
                steering: 0.0,
                speed: 0.0,
            },
        ];
        write_sim_log(&path, &rows).unwrap();
        let loaded = read_run_log(&path).unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded[0].src, "pnp");
        assert!(loaded[1].failed);
        assert_eq!(loaded[1].est, None);
        assert!((loaded[0].est.unwrap()[2] - 5.02).abs() < 1e-9);
    }
}
