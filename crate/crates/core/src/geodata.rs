//! Geo-referenced rasters, polygon annotations and the pixel/world mapping.
//!
//! The native raster format is a pair of files:
//!
//! * a UTF-8 JSON header (the path handed to [`write_raster`] / [`read_raster`]),
//! * a raw payload next to it with the extension `.bin`, holding every sample
//!   as a little-endian IEEE-754 `float32`, band-major then row-major
//!   (`band 0 row 0 col 0, band 0 row 0 col 1, ...`).
//!
//! Header fields: `format` (`"dumpwatch-raster"`), `version` (1), `width`,
//! `height`, `band_count`, `band_names`, `transform`
//! (`origin_x`, `origin_y`, `pixel_width`, `pixel_height`), `nodata`
//! (number, `"NaN"`, `"inf"`, `"-inf"` or null), `dtype` (`"float32"`),
//! `byte_order` (`"little"`), `interleave` (`"band"`) and `payload`
//! (payload file name relative to the header).
//!
//! Vector annotations are GeoJSON FeatureCollections of Polygon/MultiPolygon
//! features whose coordinates are already in the raster's world CRS.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::util;

pub const RASTER_FORMAT: &str = "dumpwatch-raster";
pub const RASTER_VERSION: u32 = 1;

/// North-up affine transform; rows grow downward from `origin_y`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoTransform {
    pub origin_x: f64,
    pub origin_y: f64,
    pub pixel_width: f64,
    pub pixel_height: f64,
}

impl GeoTransform {
    pub fn new(origin_x: f64, origin_y: f64, pixel_width: f64, pixel_height: f64) -> Result<Self> {
        let t = GeoTransform {
            origin_x,
            origin_y,
            pixel_width,
            pixel_height,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.pixel_width > 0.0 && self.pixel_height > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "pixel size must be positive, got {}x{}",
                self.pixel_width, self.pixel_height
            )));
        }
        if !self.origin_x.is_finite() || !self.origin_y.is_finite() {
            return Err(Error::InvalidArgument("non-finite transform origin".into()));
        }
        Ok(())
    }

    pub fn pixel_area(&self) -> f64 {
        self.pixel_width * self.pixel_height
    }

    /// Transform of the window whose top-left cell is `(col, row)`.
    pub fn window(&self, col: i64, row: i64) -> GeoTransform {
        let (x, y) = pixel_to_world(self, col, row);
        GeoTransform {
            origin_x: x,
            origin_y: y,
            ..*self
        }
    }

    /// World coordinates of the centre of cell `(col, row)`.
    pub fn cell_center(&self, col: i64, row: i64) -> (f64, f64) {
        (
            self.origin_x + (col as f64 + 0.5) * self.pixel_width,
            self.origin_y - (row as f64 + 0.5) * self.pixel_height,
        )
    }
}

pub fn world_to_pixel(t: &GeoTransform, x: f64, y: f64) -> (i64, i64) {
    let col = ((x - t.origin_x) / t.pixel_width).floor() as i64;
    let row = ((t.origin_y - y) / t.pixel_height).floor() as i64;
    (col, row)
}

/// Top-left corner of cell `(col, row)`.
pub fn pixel_to_world(t: &GeoTransform, col: i64, row: i64) -> (f64, f64) {
    (
        t.origin_x + col as f64 * t.pixel_width,
        t.origin_y - row as f64 * t.pixel_height,
    )
}

#[derive(Debug, Clone)]
pub struct Raster {
    width: usize,
    height: usize,
    band_names: Vec<String>,
    samples: Vec<f32>,
    pub transform: GeoTransform,
    pub nodata: Option<f32>,
}

impl Raster {
    pub fn new(
        width: usize,
        height: usize,
        band_names: Vec<String>,
        samples: Vec<f32>,
        transform: GeoTransform,
        nodata: Option<f32>,
    ) -> Result<Self> {
        if band_names.is_empty() || width == 0 || height == 0 {
            return Err(Error::EmptyRaster);
        }
        let expected = width * height * band_names.len();
        if samples.len() != expected {
            return Err(Error::SampleMismatch {
                expected,
                found: samples.len(),
            });
        }
        transform.validate()?;
        Ok(Raster {
            width,
            height,
            band_names,
            samples,
            transform,
            nodata,
        })
    }

    /// Raster filled with `value`.
    pub fn filled(
        width: usize,
        height: usize,
        band_names: Vec<String>,
        value: f32,
        transform: GeoTransform,
    ) -> Result<Self> {
        let n = width * height * band_names.len();
        Raster::new(width, height, band_names, vec![value; n], transform, Some(f32::NAN))
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn band_count(&self) -> usize {
        self.band_names.len()
    }

    pub fn band_names(&self) -> &[String] {
        &self.band_names
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut [f32] {
        &mut self.samples
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }

    pub fn band_index(&self, name: &str) -> Option<usize> {
        self.band_names.iter().position(|b| b == name)
    }

    pub fn band(&self, index: usize) -> &[f32] {
        let n = self.width * self.height;
        &self.samples[index * n..(index + 1) * n]
    }

    pub fn band_mut(&mut self, index: usize) -> &mut [f32] {
        let n = self.width * self.height;
        &mut self.samples[index * n..(index + 1) * n]
    }

    pub fn get(&self, band: usize, row: usize, col: usize) -> f32 {
        self.samples[(band * self.height + row) * self.width + col]
    }

    /// NaN always counts as missing; a finite sentinel matches by equality.
    pub fn is_nodata(&self, v: f32) -> bool {
        v.is_nan() || matches!(self.nodata, Some(nd) if !nd.is_nan() && v == nd)
    }

    /// True when any band is nodata at `(row, col)`.
    pub fn pixel_has_nodata(&self, row: usize, col: usize) -> bool {
        (0..self.band_count()).any(|b| self.is_nodata(self.get(b, row, col)))
    }

    /// Bit-level equality of every field, NaN payloads included.
    pub fn bit_eq(&self, other: &Raster) -> bool {
        let nodata_eq = match (self.nodata, other.nodata) {
            (None, None) => true,
            (Some(a), Some(b)) => a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan()),
            _ => false,
        };
        self.width == other.width
            && self.height == other.height
            && self.band_names == other.band_names
            && self.transform == other.transform
            && nodata_eq
            && self.samples.len() == other.samples.len()
            && self
                .samples
                .iter()
                .zip(&other.samples)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct RasterHeader {
    format: String,
    version: u32,
    width: usize,
    height: usize,
    band_count: usize,
    band_names: Vec<String>,
    transform: GeoTransform,
    #[serde(with = "util::opt_float")]
    nodata: Option<f32>,
    dtype: String,
    byte_order: String,
    interleave: String,
    payload: String,
}

fn payload_path(header: &Path) -> std::path::PathBuf {
    header.with_extension("bin")
}

pub fn write_raster(raster: &Raster, path: &Path) -> Result<()> {
    if raster.band_count() == 0 || raster.samples.is_empty() {
        return Err(Error::EmptyRaster);
    }
    let payload = payload_path(path);
    let payload_name = payload
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .ok_or_else(|| Error::InvalidArgument(format!("bad raster path {}", path.display())))?;
    let header = RasterHeader {
        format: RASTER_FORMAT.into(),
        version: RASTER_VERSION,
        width: raster.width,
        height: raster.height,
        band_count: raster.band_count(),
        band_names: raster.band_names.clone(),
        transform: raster.transform,
        nodata: raster.nodata,
        dtype: "float32".into(),
        byte_order: "little".into(),
        interleave: "band".into(),
        payload: payload_name,
    };
    util::write_atomic(&payload, &util::f32s_to_le_bytes(&raster.samples))?;
    let mut text = serde_json::to_string_pretty(&header)?;
    text.push('\n');
    util::write_atomic(path, text.as_bytes())
}

pub fn read_raster(path: &Path) -> Result<Raster> {
    let text = util::read_bytes(path)?;
    let header: RasterHeader = serde_json::from_slice(&text).map_err(|e| Error::Header {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let bad = |message: String| Error::Header {
        path: path.to_path_buf(),
        message,
    };
    if header.format != RASTER_FORMAT {
        return Err(bad(format!("unknown format {:?}", header.format)));
    }
    if header.version != RASTER_VERSION {
        return Err(Error::UnsupportedVersion(header.version));
    }
    if header.dtype != "float32" || header.byte_order != "little" || header.interleave != "band" {
        return Err(bad("only little-endian band-interleaved float32 is supported".into()));
    }
    if header.band_names.len() != header.band_count {
        return Err(bad(format!(
            "band_count {} but {} band names",
            header.band_count,
            header.band_names.len()
        )));
    }
    let payload = path.with_file_name(&header.payload);
    let bytes = util::read_bytes(&payload)?;
    if bytes.len() % 4 != 0 {
        return Err(Error::CorruptPayload(format!(
            "{} bytes is not a whole number of float32 samples",
            bytes.len()
        )));
    }
    let samples = util::le_bytes_to_f32s(&bytes);
    Raster::new(
        header.width,
        header.height,
        header.band_names,
        samples,
        header.transform,
        header.nodata,
    )
}

/// Closed ring of world-coordinate vertices (first == last).
pub type Ring = Vec<[f64; 2]>;

#[derive(Debug, Clone, PartialEq)]
pub struct PolygonAnnotation {
    pub exterior: Ring,
    pub holes: Vec<Ring>,
    pub label: String,
}

impl PolygonAnnotation {
    pub fn new(exterior: Ring, holes: Vec<Ring>, label: impl Into<String>) -> Result<Self> {
        let exterior = normalize_ring(exterior)?;
        let holes = holes.into_iter().map(normalize_ring).collect::<Result<Vec<_>>>()?;
        Ok(PolygonAnnotation {
            exterior,
            holes,
            label: label.into(),
        })
    }

    /// Even-odd test over the exterior and all holes.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let mut inside = ring_crossings(&self.exterior, x, y);
        for h in &self.holes {
            inside ^= ring_crossings(h, x, y);
        }
        inside
    }

    /// Planar area (exterior minus holes).
    pub fn area(&self) -> f64 {
        ring_signed_area(&self.exterior).abs() - self.holes.iter().map(|h| ring_signed_area(h).abs()).sum::<f64>()
    }

    pub fn bbox(&self) -> [f64; 4] {
        let mut b = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
        for p in &self.exterior {
            b[0] = b[0].min(p[0]);
            b[1] = b[1].min(p[1]);
            b[2] = b[2].max(p[0]);
            b[3] = b[3].max(p[1]);
        }
        b
    }
}

/// Odd number of edge crossings of a ray cast towards +x.
pub(crate) fn ring_crossings(ring: &[[f64; 2]], x: f64, y: f64) -> bool {
    let mut inside = false;
    let n = ring.len();
    if n < 2 {
        return false;
    }
    let mut j = n - 1;
    for i in 0..n {
        let (xi, yi) = (ring[i][0], ring[i][1]);
        let (xj, yj) = (ring[j][0], ring[j][1]);
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

/// Shoelace area; positive for counter-clockwise rings in a y-up frame.
pub fn ring_signed_area(ring: &[[f64; 2]]) -> f64 {
    let mut s = 0.0;
    for w in ring.windows(2) {
        s += w[0][0] * w[1][1] - w[1][0] * w[0][1];
    }
    if let (Some(first), Some(last)) = (ring.first(), ring.last()) {
        if first != last {
            s += last[0] * first[1] - first[0] * last[1];
        }
    }
    s / 2.0
}

/// Closes the ring if needed and rejects degenerate or self-intersecting rings.
pub fn normalize_ring(mut ring: Ring) -> Result<Ring> {
    if ring.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
        return Err(Error::InvalidRing("non-finite coordinate".into()));
    }
    if ring.first() != ring.last() {
        if let Some(&first) = ring.first() {
            ring.push(first);
        }
    }
    let open = &ring[..ring.len().saturating_sub(1)];
    let mut distinct: Vec<[f64; 2]> = Vec::new();
    for p in open {
        if !distinct.contains(p) {
            distinct.push(*p);
        }
    }
    if distinct.len() < 3 {
        return Err(Error::InvalidRing(format!(
            "ring needs at least 3 distinct vertices, got {}",
            distinct.len()
        )));
    }
    if distinct.len() != open.len() {
        return Err(Error::InvalidRing("ring repeats a vertex".into()));
    }
    if ring_self_intersects(&ring) {
        return Err(Error::InvalidRing("ring self-intersects".into()));
    }
    Ok(ring)
}

fn orient(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

fn on_segment(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> bool {
    p[0] >= a[0].min(b[0]) && p[0] <= a[0].max(b[0]) && p[1] >= a[1].min(b[1]) && p[1] <= a[1].max(b[1])
}

fn segments_touch(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> bool {
    let d1 = orient(c, d, a);
    let d2 = orient(c, d, b);
    let d3 = orient(a, b, c);
    let d4 = orient(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    (d1 == 0.0 && on_segment(c, d, a))
        || (d2 == 0.0 && on_segment(c, d, b))
        || (d3 == 0.0 && on_segment(a, b, c))
        || (d4 == 0.0 && on_segment(a, b, d))
}

/// Closed ring input. Adjacent edges may only share their common vertex.
fn ring_self_intersects(ring: &[[f64; 2]]) -> bool {
    let m = ring.len() - 1;
    for i in 0..m {
        let (a, b) = (ring[i], ring[i + 1]);
        for j in i + 1..m {
            let (c, d) = (ring[j], ring[j + 1]);
            let adjacent = j == i + 1 || (i == 0 && j == m - 1);
            if adjacent {
                // Shared vertex is fine; folding back onto the previous edge is not.
                let (shared, p, q) = if j == i + 1 { (b, a, d) } else { (a, b, c) };
                if orient(p, shared, q) == 0.0 {
                    let back = (p[0] - shared[0]) * (q[0] - shared[0]) + (p[1] - shared[1]) * (q[1] - shared[1]);
                    if back > 0.0 {
                        return true;
                    }
                }
                continue;
            }
            if segments_touch(a, b, c, d) {
                return true;
            }
        }
    }
    false
}

#[derive(Debug, Clone, Default)]
pub struct AnnotationSet {
    pub polygons: Vec<PolygonAnnotation>,
    /// Features whose geometry was not a Polygon or MultiPolygon.
    pub skipped: usize,
}

pub const DEFAULT_LABEL: &str = "dump";

fn parse_ring(v: &Value) -> Result<Ring> {
    let pts = v
        .as_array()
        .ok_or_else(|| Error::GeoJson("ring is not an array".into()))?;
    pts.iter()
        .map(|p| {
            let xy = p
                .as_array()
                .filter(|a| a.len() >= 2)
                .ok_or_else(|| Error::GeoJson("position needs two numbers".into()))?;
            match (xy[0].as_f64(), xy[1].as_f64()) {
                (Some(x), Some(y)) => Ok([x, y]),
                _ => Err(Error::GeoJson("non-numeric coordinate".into())),
            }
        })
        .collect()
}

pub(crate) fn parse_polygon(coords: &Value, label: &str) -> Result<PolygonAnnotation> {
    let rings = coords
        .as_array()
        .ok_or_else(|| Error::GeoJson("polygon coordinates are not an array".into()))?;
    let mut rings = rings.iter().map(parse_ring);
    let exterior = rings
        .next()
        .ok_or_else(|| Error::GeoJson("polygon without exterior ring".into()))??;
    let holes = rings.collect::<Result<Vec<_>>>()?;
    PolygonAnnotation::new(exterior, holes, label)
}

/// Parses a GeoJSON FeatureCollection; non-polygonal features are counted as skipped.
pub fn parse_annotations(text: &str) -> Result<AnnotationSet> {
    let doc: Value = serde_json::from_str(text).map_err(|e| Error::GeoJson(e.to_string()))?;
    if doc.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err(Error::GeoJson("top-level object is not a FeatureCollection".into()));
    }
    let features = doc
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::GeoJson("missing features array".into()))?;
    let mut set = AnnotationSet::default();
    for f in features {
        let label = f
            .get("properties")
            .and_then(|p| p.get("label"))
            .and_then(Value::as_str)
            .unwrap_or(DEFAULT_LABEL);
        let geom = match f.get("geometry") {
            Some(g) if !g.is_null() => g,
            _ => {
                set.skipped += 1;
                continue;
            }
        };
        let coords = geom.get("coordinates").unwrap_or(&Value::Null);
        match geom.get("type").and_then(Value::as_str) {
            Some("Polygon") => set.polygons.push(parse_polygon(coords, label)?),
            Some("MultiPolygon") => {
                let parts = coords
                    .as_array()
                    .ok_or_else(|| Error::GeoJson("multipolygon coordinates are not an array".into()))?;
                for part in parts {
                    set.polygons.push(parse_polygon(part, label)?);
                }
            }
            _ => set.skipped += 1,
        }
    }
    if set.skipped > 0 {
        log::warn!("skipped {} non-polygon features", set.skipped);
    }
    Ok(set)
}

pub fn read_annotations(path: &Path) -> Result<AnnotationSet> {
    let bytes = util::read_bytes(path)?;
    let text = String::from_utf8(bytes).map_err(|e| Error::GeoJson(e.to_string()))?;
    parse_annotations(&text)
}

pub(crate) fn ring_to_json(ring: &[[f64; 2]]) -> Value {
    Value::Array(ring.iter().map(|p| serde_json::json!([p[0], p[1]])).collect())
}

/// Writes polygons as a FeatureCollection with a `label` property each.
pub fn write_annotations(polygons: &[PolygonAnnotation], path: &Path) -> Result<()> {
    let features: Vec<Value> = polygons
        .iter()
        .map(|p| {
            let mut rings = vec![ring_to_json(&p.exterior)];
            rings.extend(p.holes.iter().map(|h| ring_to_json(h)));
            serde_json::json!({
                "type": "Feature",
                "properties": { "label": p.label },
                "geometry": { "type": "Polygon", "coordinates": rings },
            })
        })
        .collect();
    let doc = serde_json::json!({ "type": "FeatureCollection", "features": features });
    let mut text = serde_json::to_string_pretty(&doc)?;
    text.push('\n');
    util::write_atomic(path, text.as_bytes())
}
