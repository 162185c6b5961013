use std::path::Path;

use serde_json::{json, Value};

use super::polygonize::Detection;
use crate::error::{Error, Result};
use crate::geodata::{parse_polygon, ring_to_json, PolygonAnnotation, DEFAULT_LABEL};
use crate::util::{read_bytes, write_atomic};

fn polygon_coords(p: &PolygonAnnotation) -> Value {
    let mut rings = vec![ring_to_json(&p.exterior)];
    rings.extend(p.holes.iter().map(|h| ring_to_json(h)));
    Value::Array(rings)
}

/// FeatureCollection with one Polygon (or MultiPolygon) feature per detection.
pub fn detections_to_geojson(dets: &[Detection]) -> Value {
    let features: Vec<Value> = dets
        .iter()
        .map(|d| {
            let geometry = if d.parts.len() == 1 {
                json!({ "type": "Polygon", "coordinates": polygon_coords(&d.parts[0]) })
            } else {
                json!({
                    "type": "MultiPolygon",
                    "coordinates": d.parts.iter().map(polygon_coords).collect::<Vec<_>>(),
                })
            };
            json!({
                "type": "Feature",
                "id": d.label,
                "properties": {
                    "area_m2": d.area_m2,
                    "mean_probability": d.mean_probability,
                    "pixel_count": d.pixel_count,
                },
                "geometry": geometry,
            })
        })
        .collect();
    json!({ "type": "FeatureCollection", "features": features })
}

pub fn export_geojson(dets: &[Detection], path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(&detections_to_geojson(dets))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn field<'a>(v: &'a Value, key: &str) -> Result<&'a Value> {
    v.get(key)
        .ok_or_else(|| Error::GeoJson(format!("feature is missing {key}")))
}

/// Reads a file written by [`export_geojson`].
pub fn read_detections(path: &Path) -> Result<Vec<Detection>> {
    let text = String::from_utf8(read_bytes(path)?).map_err(|e| Error::GeoJson(e.to_string()))?;
    let doc: Value = serde_json::from_str(&text).map_err(|e| Error::GeoJson(e.to_string()))?;
    let features = doc
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::GeoJson("missing features array".into()))?;
    features
        .iter()
        .map(|f| {
            let props = field(f, "properties")?;
            let num = |k: &str| {
                field(props, k)?
                    .as_f64()
                    .ok_or_else(|| Error::GeoJson(format!("{k} is not a number")))
            };
            let geom = field(f, "geometry")?;
            let coords = field(geom, "coordinates")?;
            let parts = match geom.get("type").and_then(Value::as_str) {
                Some("Polygon") => vec![parse_polygon(coords, DEFAULT_LABEL)?],
                Some("MultiPolygon") => coords
                    .as_array()
                    .ok_or_else(|| Error::GeoJson("multipolygon coordinates are not an array".into()))?
                    .iter()
                    .map(|c| parse_polygon(c, DEFAULT_LABEL))
                    .collect::<Result<Vec<_>>>()?,
                other => return Err(Error::GeoJson(format!("unexpected geometry type {other:?}"))),
            };
            Ok(Detection {
                label: f.get("id").and_then(Value::as_u64).unwrap_or(0) as u32,
                parts,
                pixel_count: num("pixel_count")? as usize,
                area_m2: num("area_m2")?,
                mean_probability: num("mean_probability")?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detect::{connected_components, polygonize, Connectivity};
    use crate::geodata::{read_annotations, GeoTransform};
    use crate::grid::Mask;

    #[test]
    fn empty_list_gives_empty_collection() {
        let v = detections_to_geojson(&[]);
        assert_eq!(v["type"], "FeatureCollection");
        assert_eq!(v["features"].as_array().unwrap().len(), 0);
    }

    #[test]
    fn round_trip_through_both_readers() {
        let m = Mask::from_vec(4, 3, vec![1, 0, 0, 1, 0, 1, 0, 1, 0, 0, 0, 0]).unwrap();
        let t = GeoTransform::new(500123.25, 6170000.5, 10.0, 10.0).unwrap();
        let dets = polygonize(&connected_components(&m, Connectivity::Eight), &t, None).unwrap();
        assert_eq!(dets.len(), 2);
        assert_eq!(dets[0].parts.len(), 2);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.geojson");
        export_geojson(&dets, &path).unwrap();
        assert_eq!(read_detections(&path).unwrap(), dets);
        let ann = read_annotations(&path).unwrap();
        let parts: Vec<PolygonAnnotation> = dets.iter().flat_map(|d| d.parts.clone()).collect();
        assert_eq!(ann.polygons, parts);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("\"MultiPolygon\"") && text.contains("\"Polygon\""));
    }
}
