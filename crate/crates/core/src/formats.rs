//! File interchange formats.
//!
//! Everything is line-oriented text or a well-known raster container, so
//! files stream, diff, and survive language boundaries:
//!
//! * **Detections** (`detpost-detections v1`): one object per line,
//!   `image_id x1 y1 x2 y2 label sco occ provenance`, whitespace-separated.
//!   `label` is a known class name or `ood`; `provenance` is `standard` or
//!   `recall_enhanced`. The `occ` and `provenance` fields may be omitted
//!   (right-truncated); a missing `occ` defaults to 0 with a warning.
//! * **Ground truth** (`detpost-ground-truth v1`): `image_id x1 y1 x2 y2
//!   label` per line.
//! * **Depth**: 16-bit single-channel PNG or PGM (P2/P5); stored values are
//!   multiplied by a scale factor on load.
//! * **Masks**: 8-bit PNG or PGM, nonzero means true.
//! * **Score maps** (`detpost-scores v1`): two ASCII header lines then
//!   row-major little-endian f32 values.
//! * **Reports**: self-describing `key value` records followed by a
//!   human-readable table; undefined metrics render as `undefined`.
//!
//! Lines starting with `#` and blank lines are ignored in the text formats.
//! Malformed records abort with the file path and line number.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::geometry::BoundingBox;
use crate::metrics::{EvalReport, GtObject};
use crate::raster::{BinaryMask, DepthMap, Raster, ScoreMap};
use crate::scoring::{Detection, Label, Provenance};

pub const DETECTIONS_HEADER: &str = "detpost-detections v1";
pub const GROUND_TRUTH_HEADER: &str = "detpost-ground-truth v1";
pub const SCORES_HEADER: &str = "detpost-scores v1";
pub const REPORT_HEADER: &str = "detpost-report v1";
pub const OOD_LABEL: &str = "ood";

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}:{line}: {message}")]
    Record {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{path}: expected header {expected:?}, found {found:?}")]
    Header {
        path: String,
        expected: &'static str,
        found: String,
    },
    #[error("{path}: {message}")]
    File { path: String, message: String },
    #[error("class name {0:?} contains whitespace and cannot be serialized")]
    UnserializableClassName(String),
    #[error("unknown image format for {0:?} (expected .png or .pgm)")]
    UnknownImageFormat(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

fn record_err(path: &Path, line: usize, message: impl Into<String>) -> FormatError {
    FormatError::Record {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

/// Per-image object lists keyed by image id, in sorted order.
pub type PerImage<T> = BTreeMap<String, Vec<T>>;

/// Detections plus any non-fatal warnings raised while reading.
#[derive(Debug, Default)]
pub struct LoadedDetections {
    pub per_image: PerImage<Detection>,
    pub warnings: Vec<String>,
}

struct LineReader<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> LineReader<'a> {
    fn open(path: &Path, text: &'a str, expected_header: &'static str) -> Result<Self, FormatError> {
        let mut lines = text.lines().enumerate();
        let header = lines.next().map(|(_, l)| l.trim()).unwrap_or("");
        if header != expected_header {
            return Err(FormatError::Header {
                path: path.display().to_string(),
                expected: expected_header,
                found: header.to_string(),
            });
        }
        Ok(Self { lines })
    }

    /// Next non-empty, non-comment record with its 1-based line number.
    fn next_record(&mut self) -> Option<(usize, &'a str)> {
        for (idx, line) in self.lines.by_ref() {
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            return Some((idx + 1, trimmed));
        }
        None
    }
}

fn parse_field<T: std::str::FromStr>(
    path: &Path,
    line: usize,
    token: &str,
    what: &str,
) -> Result<T, FormatError> {
    token
        .parse()
        .map_err(|_| record_err(path, line, format!("invalid {what}: {token:?}")))
}

fn parse_box(
    path: &Path,
    line: usize,
    tokens: &[&str],
) -> Result<BoundingBox, FormatError> {
    let x1 = parse_field(path, line, tokens[0], "x1")?;
    let y1 = parse_field(path, line, tokens[1], "y1")?;
    let x2 = parse_field(path, line, tokens[2], "x2")?;
    let y2 = parse_field(path, line, tokens[3], "y2")?;
    BoundingBox::new(x1, y1, x2, y2)
        .map_err(|e| record_err(path, line, e.to_string()))
}

fn parse_label(
    path: &Path,
    line: usize,
    token: &str,
    class_names: &[String],
) -> Result<Label, FormatError> {
    if token == OOD_LABEL {
        return Ok(Label::Ood);
    }
    class_names
        .iter()
        .position(|n| n == token)
        .map(Label::Known)
        .ok_or_else(|| record_err(path, line, format!("unknown class label {token:?}")))
}

fn label_name(label: Label, class_names: &[String]) -> String {
    match label {
        Label::Ood => OOD_LABEL.to_string(),
        Label::Known(idx) => class_names
            .get(idx)
            .cloned()
            .unwrap_or_else(|| format!("class{idx}")),
    }
}

fn check_unit_interval(
    path: &Path,
    line: usize,
    value: f64,
    what: &str,
) -> Result<(), FormatError> {
    if !(0.0..=1.0).contains(&value) {
        return Err(record_err(
            path,
            line,
            format!("{what} {value} outside [0, 1]"),
        ));
    }
    Ok(())
}

/// Reads a detections file; see the module docs for the schema.
pub fn load_detections(
    path: impl AsRef<Path>,
    class_names: &[String],
) -> Result<LoadedDetections, FormatError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let mut reader = LineReader::open(path, &text, DETECTIONS_HEADER)?;
    let mut out = LoadedDetections::default();
    while let Some((line, record)) = reader.next_record() {
        let tokens: Vec<&str> = record.split_whitespace().collect();
        if !(7..=9).contains(&tokens.len()) {
            return Err(record_err(
                path,
                line,
                format!("expected 7-9 fields, found {}", tokens.len()),
            ));
        }
        let image_id = tokens[0].to_string();
        let bbox = parse_box(path, line, &tokens[1..5])?;
        let label = parse_label(path, line, tokens[5], class_names)?;
        let sco: f64 = parse_field(path, line, tokens[6], "sco")?;
        check_unit_interval(path, line, sco, "sco")?;
        let occ = if let Some(token) = tokens.get(7) {
            let occ: f64 = parse_field(path, line, token, "occ")?;
            check_unit_interval(path, line, occ, "occ")?;
            occ
        } else {
            out.warnings
                .push(format!("{}:{line}: missing occ, defaulted to 0", path.display()));
            0.0
        };
        let provenance = match tokens.get(8) {
            None | Some(&"standard") => Provenance::Standard,
            Some(&"recall_enhanced") => Provenance::RecallEnhanced,
            Some(other) => {
                return Err(record_err(
                    path,
                    line,
                    format!("unknown provenance {other:?}"),
                ))
            }
        };
        out.per_image.entry(image_id).or_default().push(Detection {
            bbox,
            class_scores: Vec::new(),
            sco,
            occ,
            label,
            provenance,
        });
    }
    Ok(out)
}

/// Writes detections in the v1 schema, one object per line.
pub fn write_detections(
    path: impl AsRef<Path>,
    per_image: &PerImage<Detection>,
    class_names: &[String],
) -> Result<(), FormatError> {
    for name in class_names {
        if name.chars().any(char::is_whitespace) {
            return Err(FormatError::UnserializableClassName(name.clone()));
        }
    }
    let mut text = String::new();
    writeln!(text, "{DETECTIONS_HEADER}").unwrap();
    for (image_id, dets) in per_image {
        for d in dets {
            let provenance = match d.provenance {
                Provenance::Standard => "standard",
                Provenance::RecallEnhanced => "recall_enhanced",
            };
            writeln!(
                text,
                "{image_id} {} {} {} {} {} {} {} {provenance}",
                d.bbox.x1,
                d.bbox.y1,
                d.bbox.x2,
                d.bbox.y2,
                label_name(d.label, class_names),
                d.sco,
                d.occ,
            )
            .unwrap();
        }
    }
    fs::write(path, text)?;
    Ok(())
}

/// Reads a ground-truth file (`image_id x1 y1 x2 y2 label`).
pub fn load_ground_truth(
    path: impl AsRef<Path>,
    class_names: &[String],
) -> Result<PerImage<GtObject>, FormatError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let mut reader = LineReader::open(path, &text, GROUND_TRUTH_HEADER)?;
    let mut out: PerImage<GtObject> = BTreeMap::new();
    while let Some((line, record)) = reader.next_record() {
        let tokens: Vec<&str> = record.split_whitespace().collect();
        if tokens.len() != 6 {
            return Err(record_err(
                path,
                line,
                format!("expected 6 fields, found {}", tokens.len()),
            ));
        }
        let image_id = tokens[0].to_string();
        let bbox = parse_box(path, line, &tokens[1..5])?;
        let label = parse_label(path, line, tokens[5], class_names)?;
        out.entry(image_id).or_default().push(GtObject { bbox, label });
    }
    Ok(out)
}

/// Writes ground truth in the v1 schema.
pub fn write_ground_truth(
    path: impl AsRef<Path>,
    per_image: &PerImage<GtObject>,
    class_names: &[String],
) -> Result<(), FormatError> {
    let mut text = String::new();
    writeln!(text, "{GROUND_TRUTH_HEADER}").unwrap();
    for (image_id, gts) in per_image {
        for g in gts {
            writeln!(
                text,
                "{image_id} {} {} {} {} {}",
                g.bbox.x1,
                g.bbox.y1,
                g.bbox.x2,
                g.bbox.y2,
                label_name(g.label, class_names),
            )
            .unwrap();
        }
    }
    fs::write(path, text)?;
    Ok(())
}

/// Raw annotations with arbitrary source label strings (augmentation input);
/// the image-id column is read but not used for grouping.
pub fn load_raw_annotations(
    path: impl AsRef<Path>,
) -> Result<Vec<(BoundingBox, String)>, FormatError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let mut reader = LineReader::open(path, &text, GROUND_TRUTH_HEADER)?;
    let mut out = Vec::new();
    while let Some((line, record)) = reader.next_record() {
        let tokens: Vec<&str> = record.split_whitespace().collect();
        if tokens.len() != 6 {
            return Err(record_err(
                path,
                line,
                format!("expected 6 fields, found {}", tokens.len()),
            ));
        }
        let bbox = parse_box(path, line, &tokens[1..5])?;
        out.push((bbox, tokens[5].to_string()));
    }
    Ok(out)
}

fn extension_of(path: &Path) -> String {
    path.extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase()
}

/// Loads a depth map from 16-bit PNG or PGM; stored values are multiplied by
/// `scale`.
pub fn load_depth(path: impl AsRef<Path>, scale: f32) -> Result<DepthMap, FormatError> {
    let path = path.as_ref();
    match extension_of(path).as_str() {
        "png" => {
            let img = image::open(path)?.to_luma16();
            let (w, h) = img.dimensions();
            let values = img.pixels().map(|p| p.0[0] as f32 * scale).collect();
            Ok(Raster::from_vec(w as usize, h as usize, values).expect("decoder shape"))
        }
        "pgm" => {
            let raw = load_pgm(path)?;
            Ok(Raster::from_vec(
                raw.width,
                raw.height,
                raw.values.into_iter().map(|v| v as f32 * scale).collect(),
            )
            .expect("pgm shape"))
        }
        _ => Err(FormatError::UnknownImageFormat(path.display().to_string())),
    }
}

/// Writes a depth map as 16-bit PNG, dividing by `scale` and clamping to the
/// u16 range.
pub fn write_depth_png(
    path: impl AsRef<Path>,
    depth: &DepthMap,
    scale: f32,
) -> Result<(), FormatError> {
    let mut img = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::new(
        depth.width() as u32,
        depth.height() as u32,
    );
    for (x, y, p) in img.enumerate_pixels_mut() {
        let raw = (depth.get(x as usize, y as usize) / scale).round();
        p.0[0] = raw.clamp(0.0, u16::MAX as f32) as u16;
    }
    img.save(path.as_ref())?;
    Ok(())
}

/// Writes a depth map as binary PGM (P5, 16-bit big-endian).
pub fn write_depth_pgm(
    path: impl AsRef<Path>,
    depth: &DepthMap,
    scale: f32,
) -> Result<(), FormatError> {
    let mut bytes = Vec::with_capacity(depth.len() * 2 + 32);
    bytes.extend_from_slice(
        format!("P5\n{} {}\n65535\n", depth.width(), depth.height()).as_bytes(),
    );
    for &v in depth.values() {
        let raw = ((v / scale).round().clamp(0.0, u16::MAX as f32)) as u16;
        bytes.extend_from_slice(&raw.to_be_bytes());
    }
    fs::write(path, bytes)?;
    Ok(())
}

struct RawPgm {
    width: usize,
    height: usize,
    values: Vec<u16>,
}

fn load_pgm(path: &Path) -> Result<RawPgm, FormatError> {
    let bytes = fs::read(path)?;
    let err = |msg: &str| FormatError::File {
        path: path.display().to_string(),
        message: msg.to_string(),
    };

    // Header tokens: magic, width, height, maxval; comments start with '#'.
    let mut pos = 0usize;
    let mut tokens: Vec<String> = Vec::new();
    while tokens.len() < 4 && pos < bytes.len() {
        let b = bytes[pos];
        if b == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
        } else if b.is_ascii_whitespace() {
            pos += 1;
        } else {
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            tokens.push(String::from_utf8_lossy(&bytes[start..pos]).to_string());
        }
    }
    if tokens.len() < 4 {
        return Err(err("truncated PGM header"));
    }
    let magic = tokens[0].as_str();
    let width: usize = tokens[1].parse().map_err(|_| err("bad width"))?;
    let height: usize = tokens[2].parse().map_err(|_| err("bad height"))?;
    let maxval: u32 = tokens[3].parse().map_err(|_| err("bad maxval"))?;
    if width == 0 || height == 0 || maxval == 0 || maxval > 65535 {
        return Err(err("unsupported PGM geometry"));
    }
    let count = width * height;
    let values = match magic {
        "P2" => {
            let text = String::from_utf8_lossy(&bytes[pos..]);
            let parsed: Result<Vec<u16>, _> =
                text.split_whitespace().take(count).map(|t| t.parse()).collect();
            let parsed = parsed.map_err(|_| err("bad ASCII sample"))?;
            if parsed.len() != count {
                return Err(err("truncated P2 data"));
            }
            parsed
        }
        "P5" => {
            pos += 1; // single whitespace after maxval
            let wide = maxval > 255;
            let needed = count * if wide { 2 } else { 1 };
            if bytes.len() < pos + needed {
                return Err(err("truncated P5 data"));
            }
            if wide {
                bytes[pos..pos + needed]
                    .chunks_exact(2)
                    .map(|c| u16::from_be_bytes([c[0], c[1]]))
                    .collect()
            } else {
                bytes[pos..pos + needed].iter().map(|&b| b as u16).collect()
            }
        }
        _ => return Err(err("not a PGM file")),
    };
    Ok(RawPgm {
        width,
        height,
        values,
    })
}

/// Loads a binary mask: PNG (any bit depth, nonzero is true) or PGM.
pub fn load_mask(path: impl AsRef<Path>) -> Result<BinaryMask, FormatError> {
    let path = path.as_ref();
    match extension_of(path).as_str() {
        "png" => {
            let img = image::open(path)?.to_luma8();
            let (w, h) = img.dimensions();
            let values = img.pixels().map(|p| p.0[0] != 0).collect();
            Ok(Raster::from_vec(w as usize, h as usize, values).expect("decoder shape"))
        }
        "pgm" => {
            let raw = load_pgm(path)?;
            Ok(Raster::from_vec(
                raw.width,
                raw.height,
                raw.values.into_iter().map(|v| v != 0).collect(),
            )
            .expect("pgm shape"))
        }
        _ => Err(FormatError::UnknownImageFormat(path.display().to_string())),
    }
}

/// Writes a binary mask as 8-bit PNG (255 for true).
pub fn write_mask_png(path: impl AsRef<Path>, mask: &BinaryMask) -> Result<(), FormatError> {
    let mut img =
        image::GrayImage::new(mask.width() as u32, mask.height() as u32);
    for (x, y, p) in img.enumerate_pixels_mut() {
        p.0[0] = if mask.get(x as usize, y as usize) { 255 } else { 0 };
    }
    img.save(path.as_ref())?;
    Ok(())
}

/// Loads a score map: the native f32 container, or 16-bit PNG scaled by
/// `png_scale`.
pub fn load_score_map(path: impl AsRef<Path>, png_scale: f32) -> Result<ScoreMap, FormatError> {
    let path = path.as_ref();
    match extension_of(path).as_str() {
        "png" => {
            let img = image::open(path)?.to_luma16();
            let (w, h) = img.dimensions();
            let values = img.pixels().map(|p| p.0[0] as f32 * png_scale).collect();
            Ok(Raster::from_vec(w as usize, h as usize, values).expect("decoder shape"))
        }
        _ => {
            let mut file = fs::File::open(path)?;
            let mut bytes = Vec::new();
            file.read_to_end(&mut bytes)?;
            parse_score_map(path, &bytes)
        }
    }
}

fn parse_score_map(path: &Path, bytes: &[u8]) -> Result<ScoreMap, FormatError> {
    let err = |msg: &str| FormatError::File {
        path: path.display().to_string(),
        message: msg.to_string(),
    };
    let mut pos = 0usize;
    let mut next_line = || -> Result<String, FormatError> {
        let start = pos;
        while pos < bytes.len() && bytes[pos] != b'\n' {
            pos += 1;
        }
        if pos >= bytes.len() {
            return Err(err("truncated header"));
        }
        let line = String::from_utf8_lossy(&bytes[start..pos]).to_string();
        pos += 1;
        Ok(line)
    };
    let header = next_line()?;
    if header.trim() != SCORES_HEADER {
        return Err(FormatError::Header {
            path: path.display().to_string(),
            expected: SCORES_HEADER,
            found: header,
        });
    }
    let dims = next_line()?;
    let mut parts = dims.split_whitespace();
    let width: usize = parts
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| err("bad width"))?;
    let height: usize = parts
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| err("bad height"))?;
    let count = width * height;
    let data = &bytes[pos..];
    if data.len() < count * 4 {
        return Err(err("truncated score data"));
    }
    let values = data[..count * 4]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(Raster::from_vec(width, height, values).expect("score shape"))
}

/// Writes a score map in the native f32 container.
pub fn write_score_map(path: impl AsRef<Path>, scores: &ScoreMap) -> Result<(), FormatError> {
    let mut file = fs::File::create(path)?;
    write!(file, "{SCORES_HEADER}\n{} {}\n", scores.width(), scores.height())?;
    let mut bytes = Vec::with_capacity(scores.len() * 4);
    for v in scores.values() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    file.write_all(&bytes)?;
    Ok(())
}

fn metric_value(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |v| v.to_string())
}

/// Renders the report: key/value records then a per-class table. The output
/// is a pure function of the report, so identical runs are byte-identical.
pub fn render_report(report: &EvalReport) -> String {
    let mut out = String::new();
    writeln!(out, "{REPORT_HEADER}").unwrap();
    writeln!(out, "images {}", report.images).unwrap();
    writeln!(out, "k {}", report.k).unwrap();
    writeln!(out, "iou_thr {}", report.iou_thr).unwrap();
    writeln!(out, "map_known {}", metric_value(report.map_known)).unwrap();
    writeln!(out, "ap50_known {}", metric_value(report.ap50_known)).unwrap();
    writeln!(out, "recall_at_k {}", metric_value(report.recall_at_k)).unwrap();
    writeln!(out, "fpr_at_k {}", metric_value(report.fpr_at_k)).unwrap();
    writeln!(out, "matched_unknown_gt {}", report.matched_unknown_gt).unwrap();
    writeln!(out, "total_unknown_gt {}", report.total_unknown_gt).unwrap();
    for c in &report.per_class {
        writeln!(
            out,
            "class {} {} ap {} ap50 {}",
            c.class,
            c.name,
            metric_value(c.ap),
            metric_value(c.ap50)
        )
        .unwrap();
    }
    for d in &report.diagnostics {
        writeln!(out, "diag {d}").unwrap();
    }

    writeln!(out).unwrap();
    writeln!(out, "# {:<16} {:>10} {:>10}", "class", "AP", "AP50").unwrap();
    for c in &report.per_class {
        let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.2}"));
        writeln!(
            out,
            "# {:<16} {:>10} {:>10}",
            c.name,
            fmt(c.ap),
            fmt(c.ap50)
        )
        .unwrap();
    }
    let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.2}"));
    writeln!(out, "# {:<16} {:>10}", "mAP (%)", fmt(report.map_known)).unwrap();
    writeln!(
        out,
        "# {:<16} {:>10}",
        format!("R@{} (%)", report.k),
        fmt(report.recall_at_k)
    )
    .unwrap();
    writeln!(
        out,
        "# {:<16} {:>10}",
        format!("FPR@{} (permille)", report.k),
        fmt(report.fpr_at_k)
    )
    .unwrap();
    out
}

/// Writes the rendered report to a file.
pub fn write_report(path: impl AsRef<Path>, report: &EvalReport) -> Result<(), FormatError> {
    fs::write(path, render_report(report))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scoring::Provenance;
    use tempfile::tempdir;

    fn class_names() -> Vec<String> {
        vec!["car".to_string(), "person".to_string()]
    }

    fn sample_detection() -> Detection {
        Detection {
            bbox: BoundingBox::new(1.5, 2.25, 10.0, 20.125).unwrap(),
            class_scores: Vec::new(),
            sco: 0.625,
            occ: 0.875,
            label: Label::Known(0),
            provenance: Provenance::Standard,
        }
    }

    #[test]
    fn empty_detections_file_is_ok() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("dets.txt");
        fs::write(&path, format!("{DETECTIONS_HEADER}\n")).unwrap();
        let loaded = load_detections(&path, &class_names()).unwrap();
        assert!(loaded.per_image.is_empty());
        assert!(loaded.warnings.is_empty());
    }

    #[test]
    fn detections_round_trip_is_identity() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("dets.txt");
        let mut per_image: PerImage<Detection> = BTreeMap::new();
        let mut second = sample_detection();
        second.label = Label::Ood;
        second.provenance = Provenance::RecallEnhanced;
        second.sco = 0.001953125;
        per_image.insert("frame_000".into(), vec![sample_detection(), second]);
        per_image.insert("frame_001".into(), vec![sample_detection()]);

        write_detections(&path, &per_image, &class_names()).unwrap();
        let loaded = load_detections(&path, &class_names()).unwrap();
        assert_eq!(loaded.per_image, per_image);
        assert!(loaded.warnings.is_empty());

        // A second write of the loaded data is byte-identical.
        let path2 = dir.path().join("dets2.txt");
        write_detections(&path2, &loaded.per_image, &class_names()).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&path2).unwrap());
    }

    #[test]
    fn out_of_range_sco_is_an_error_with_line_number() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("dets.txt");
        fs::write(
            &path,
            format!("{DETECTIONS_HEADER}\nimg 0 0 5 5 car 1.5 0.5 standard\n"),
        )
        .unwrap();
        let err = load_detections(&path, &class_names()).unwrap_err();
        match err {
            FormatError::Record { line, message, .. } => {
                assert_eq!(line, 2);
                assert!(message.contains("sco"));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn missing_occ_defaults_with_warning() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("dets.txt");
        fs::write(&path, format!("{DETECTIONS_HEADER}\nimg 0 0 5 5 car 0.5\n")).unwrap();
        let loaded = load_detections(&path, &class_names()).unwrap();
        assert_eq!(loaded.per_image["img"][0].occ, 0.0);
        assert_eq!(loaded.warnings.len(), 1);
        assert!(loaded.warnings[0].contains(":2:"));
    }

    #[test]
    fn wrong_header_is_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("dets.txt");
        fs::write(&path, "something else\n").unwrap();
        assert!(matches!(
            load_detections(&path, &class_names()),
            Err(FormatError::Header { .. })
        ));
    }

    #[test]
    fn unknown_label_is_an_error() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("gt.txt");
        fs::write(&path, format!("{GROUND_TRUTH_HEADER}\nimg 0 0 5 5 plane\n")).unwrap();
        assert!(matches!(
            load_ground_truth(&path, &class_names()),
            Err(FormatError::Record { line: 2, .. })
        ));
    }

    #[test]
    fn ground_truth_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("gt.txt");
        let mut per_image: PerImage<GtObject> = BTreeMap::new();
        per_image.insert(
            "a".into(),
            vec![
                GtObject {
                    bbox: BoundingBox::new(0.0, 0.0, 8.5, 8.5).unwrap(),
                    label: Label::Known(1),
                },
                GtObject {
                    bbox: BoundingBox::new(10.0, 10.0, 20.0, 30.0).unwrap(),
                    label: Label::Ood,
                },
            ],
        );
        write_ground_truth(&path, &per_image, &class_names()).unwrap();
        assert_eq!(load_ground_truth(&path, &class_names()).unwrap(), per_image);
    }

    #[test]
    fn depth_png_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("depth.png");
        let depth: DepthMap = Raster::from_fn(16, 8, |x, y| (x * 100 + y) as f32 * 0.5);
        write_depth_png(&path, &depth, 0.5).unwrap();
        let loaded = load_depth(&path, 0.5).unwrap();
        assert_eq!(loaded, depth);
    }

    #[test]
    fn depth_pgm_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("depth.pgm");
        let depth: DepthMap = Raster::from_fn(7, 5, |x, y| (x * 11 + y * 3) as f32);
        write_depth_pgm(&path, &depth, 1.0).unwrap();
        let loaded = load_depth(&path, 1.0).unwrap();
        assert_eq!(loaded, depth);
    }

    #[test]
    fn ascii_pgm_parses() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("depth.pgm");
        fs::write(&path, "P2\n# comment\n3 2\n255\n0 1 2\n3 4 5\n").unwrap();
        let loaded = load_depth(&path, 2.0).unwrap();
        assert_eq!(loaded.get(2, 1), 10.0);
    }

    #[test]
    fn mask_png_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("mask.png");
        let mask: BinaryMask = Raster::from_fn(9, 6, |x, y| (x + y) % 3 == 0);
        write_mask_png(&path, &mask).unwrap();
        assert_eq!(load_mask(&path).unwrap(), mask);
    }

    #[test]
    fn score_map_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("scores.dsm");
        let scores: ScoreMap = Raster::from_fn(5, 4, |x, y| (x as f32 - y as f32) * 0.125);
        write_score_map(&path, &scores).unwrap();
        assert_eq!(load_score_map(&path, 1.0).unwrap(), scores);
    }

    #[test]
    fn score_map_loads_from_scaled_png() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("scores.png");
        let mut img = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::new(4, 3);
        for (x, y, p) in img.enumerate_pixels_mut() {
            p.0[0] = (x * 1000 + y) as u16;
        }
        img.save(&path).unwrap();
        let scores = load_score_map(&path, 0.5).unwrap();
        assert_eq!(scores.get(2, 1), 1000.5);
        assert_eq!(scores.get(0, 0), 0.0);
    }

    #[test]
    fn report_rendering_marks_undefined_metrics() {
        let report = EvalReport {
            images: 2,
            k: 100,
            iou_thr: 0.5,
            map_known: Some(91.25),
            ap50_known: Some(95.5),
            recall_at_k: None,
            fpr_at_k: Some(10.0),
            per_class: Vec::new(),
            matched_unknown_gt: 0,
            total_unknown_gt: 0,
            diagnostics: vec!["no unknown ground truth: recall undefined".into()],
        };
        let text = render_report(&report);
        assert!(text.contains("recall_at_k undefined"));
        assert!(text.contains("fpr_at_k 10"));
        assert!(text.starts_with(REPORT_HEADER));
        // Deterministic rendering.
        assert_eq!(text, render_report(&report));
    }
}
