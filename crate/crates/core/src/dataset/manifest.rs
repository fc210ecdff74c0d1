//! Manifest files: JSON Lines, one image per line.
//!
//! ```text
//! {"image_id":"img-1","width":640,"height":480,"split":"Training","boxes":[["Apple",0.1,0.2,0.3,0.4]]}
//! ```
//!
//! `split` and `file` are optional; boxes are `[class, x_min, y_min, x_max, y_max]`
//! in normalized coordinates.

use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AnnotatedImage, DatasetError, Split};
use crate::domain::{BoundingBox, FruitClass, GroundTruth};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    #[serde(default, skip_serializing_if = "Split::is_unassigned")]
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<String>,
    #[serde(default)]
    pub boxes: Vec<(String, f64, f64, f64, f64)>,
}

impl From<&AnnotatedImage> for ManifestRecord {
    fn from(img: &AnnotatedImage) -> Self {
        Self {
            image_id: img.image_id.clone(),
            width: img.width,
            height: img.height,
            split: img.split,
            file: img.file.clone(),
            boxes: img
                .truths
                .iter()
                .map(|t| {
                    let [a, b, c, d] = t.bbox.to_array();
                    (t.class.label().to_string(), a, b, c, d)
                })
                .collect(),
        }
    }
}

fn line_error(line: usize, message: impl ToString) -> DatasetError {
    DatasetError::Manifest {
        line,
        message: message.to_string(),
    }
}

fn parse_class(label: &str, line: usize) -> Result<FruitClass, DatasetError> {
    label.parse().map_err(|e| line_error(line, e))
}

fn validate_dims(width: u32, height: u32, line: usize) -> Result<(), DatasetError> {
    if width == 0 || height == 0 {
        return Err(line_error(line, format!("image size {width}x{height} must be positive")));
    }
    Ok(())
}

/// Parses and validates a manifest stream. Blank lines are skipped; errors carry
/// the 1-based line number.
pub fn parse_manifest<R: Read>(reader: R) -> Result<Vec<AnnotatedImage>, DatasetError> {
    let mut images = Vec::new();
    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ManifestRecord = serde_json::from_str(&line).map_err(|e| line_error(lineno, e))?;
        validate_dims(rec.width, rec.height, lineno)?;
        let truths = rec
            .boxes
            .iter()
            .map(|(label, x0, y0, x1, y1)| {
                let class = parse_class(label, lineno)?;
                let bbox = BoundingBox::new(*x0, *y0, *x1, *y1).map_err(|e| line_error(lineno, e))?;
                Ok(GroundTruth::new(class, bbox))
            })
            .collect::<Result<Vec<_>, DatasetError>>()?;
        images.push(AnnotatedImage {
            image_id: rec.image_id,
            width: rec.width,
            height: rec.height,
            truths,
            split: rec.split,
            file: rec.file,
        });
    }
    Ok(images)
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<AnnotatedImage>, DatasetError> {
    parse_manifest(File::open(path)?)
}

pub fn write_manifest<W: Write>(mut writer: W, images: &[AnnotatedImage]) -> Result<(), DatasetError> {
    for img in images {
        let line = serde_json::to_string(&ManifestRecord::from(img)).map_err(std::io::Error::other)?;
        writeln!(writer, "{line}")?;
    }
    writer.flush()?;
    Ok(())
}

/// Input record for [`convert_center_pixels`]: boxes as
/// `[class, center_x, center_y, width, height]` in pixels.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CenterPixelRecord {
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    #[serde(default)]
    pub split: Split,
    #[serde(default)]
    pub file: Option<String>,
    #[serde(default)]
    pub boxes: Vec<(String, f64, f64, f64, f64)>,
}

/// Reads center-form pixel annotations and converts them to normalized
/// corner-form images. Boxes are clipped to the image; boxes with no area
/// left after clipping are rejected.
pub fn convert_center_pixels<R: Read>(reader: R) -> Result<Vec<AnnotatedImage>, DatasetError> {
    let mut images = Vec::new();
    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CenterPixelRecord = serde_json::from_str(&line).map_err(|e| line_error(lineno, e))?;
        validate_dims(rec.width, rec.height, lineno)?;
        let truths = rec
            .boxes
            .iter()
            .map(|(label, cx, cy, w, h)| {
                let class = parse_class(label, lineno)?;
                let bbox = BoundingBox::from_center_pixels(*cx, *cy, *w, *h, rec.width, rec.height)
                    .map_err(|e| line_error(lineno, e))?;
                Ok(GroundTruth::new(class, bbox))
            })
            .collect::<Result<Vec<_>, DatasetError>>()?;
        images.push(AnnotatedImage {
            image_id: rec.image_id,
            width: rec.width,
            height: rec.height,
            truths,
            split: rec.split,
            file: rec.file,
        });
    }
    Ok(images)
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = r#"{"image_id":"a","width":100,"height":80,"split":"Training","boxes":[["Apple",0.1,0.2,0.3,0.4],["Common fig",0.5,0.5,0.9,0.9]]}
{"image_id":"b","width":64,"height":64,"boxes":[]}

{"image_id":"c","width":64,"height":64,"file":"c.png","boxes":[["Pear",0.0,0.0,1.0,1.0]]}
"#;

    #[test]
    fn parses_well_formed_manifest() {
        let images = parse_manifest(GOOD.as_bytes()).unwrap();
        assert_eq!(images.len(), 3);
        assert_eq!(images[0].truths.len(), 2);
        assert_eq!(images[0].truths[1].class, FruitClass::CommonFig);
        assert_eq!(images[0].split, Split::Training);
        assert!(images[1].is_null());
        assert_eq!(images[1].split, Split::Unassigned);
        assert_eq!(images[2].file.as_deref(), Some("c.png"));
    }

    #[test]
    fn inverted_box_reports_line() {
        let text = "{\"image_id\":\"a\",\"width\":10,\"height\":10,\"boxes\":[]}\n{\"image_id\":\"b\",\"width\":10,\"height\":10,\"boxes\":[[\"Apple\",0.5,0.1,0.4,0.3]]}\n";
        match parse_manifest(text.as_bytes()) {
            Err(DatasetError::Manifest { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_class_rejected() {
        let text = r#"{"image_id":"a","width":10,"height":10,"boxes":[["Dragonfruit",0.1,0.1,0.4,0.3]]}"#;
        let err = parse_manifest(text.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("Dragonfruit"), "{err}");
    }

    #[test]
    fn malformed_json_and_zero_size_rejected() {
        assert!(matches!(
            parse_manifest("{not json}".as_bytes()),
            Err(DatasetError::Manifest { line: 1, .. })
        ));
        assert!(parse_manifest(r#"{"image_id":"a","width":0,"height":10}"#.as_bytes()).is_err());
    }

    #[test]
    fn write_then_parse_is_identity() {
        let images = parse_manifest(GOOD.as_bytes()).unwrap();
        let mut buf = Vec::new();
        write_manifest(&mut buf, &images).unwrap();
        assert_eq!(parse_manifest(buf.as_slice()).unwrap(), images);
    }

    #[test]
    fn converts_center_pixels() {
        let text = r#"{"image_id":"a","width":200,"height":100,"boxes":[["Lemon",100,50,40,20],["Apple",10,10,40,40]]}"#;
        let images = convert_center_pixels(text.as_bytes()).unwrap();
        assert_eq!(images[0].truths[0].bbox.to_array(), [0.4, 0.4, 0.6, 0.6]);
        assert_eq!(images[0].truths[1].bbox.to_array(), [0.0, 0.0, 0.15, 0.3]);
        let outside = r#"{"image_id":"a","width":200,"height":100,"boxes":[["Lemon",300,50,40,20]]}"#;
        assert!(convert_center_pixels(outside.as_bytes()).is_err());
    }
}
