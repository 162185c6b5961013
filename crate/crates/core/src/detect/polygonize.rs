use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::components::{connected_components, Components, Connectivity};
use super::infer::threshold_probability;
use crate::error::{Error, Result};
use crate::geodata::{pixel_to_world, ring_crossings, GeoTransform, PolygonAnnotation, Raster, DEFAULT_LABEL};
use crate::grid::Mask;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PostprocConfig {
    pub probability_threshold: f64,
    /// Smallest kept detection, in squared world units.
    pub min_area: f64,
    pub connectivity: Connectivity,
}

impl Default for PostprocConfig {
    fn default() -> Self {
        PostprocConfig {
            probability_threshold: 0.5,
            min_area: 100.0,
            connectivity: Connectivity::Eight,
        }
    }
}

impl PostprocConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.probability_threshold > 0.0 && self.probability_threshold < 1.0) {
            return Err(Error::config("postprocess.probability_threshold", "must be in (0, 1)"));
        }
        if !(self.min_area >= 0.0) {
            return Err(Error::config("postprocess.min_area", "must be >= 0"));
        }
        Ok(())
    }
}

/// One connected region of above-threshold pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    /// Component label the region came from.
    pub label: u32,
    /// One polygon per edge-connected piece; pieces may touch at corners.
    pub parts: Vec<PolygonAnnotation>,
    pub pixel_count: usize,
    pub area_m2: f64,
    pub mean_probability: f64,
}

// Screen directions (x right, y down): east, south, west, north.
const STEPS: [(i64, i64); 4] = [(1, 0), (0, 1), (-1, 0), (0, -1)];

type Vertex = (i64, i64);

/// Directed pixel-edge graph: each boundary edge is oriented so that its
/// component lies on the right-hand side in screen space.
struct EdgeMap {
    stride: usize,
    out: Vec<[u32; 4]>,
}

impl EdgeMap {
    fn build(labels: &crate::grid::Grid<u32>) -> Self {
        let (w, h) = (labels.width(), labels.height());
        let stride = w + 1;
        let mut out = vec![[0u32; 4]; stride * (h + 1)];
        let at = |r: isize, c: isize| -> u32 {
            if r < 0 || c < 0 || r >= h as isize || c >= w as isize {
                0
            } else {
                labels.get(r as usize, c as usize)
            }
        };
        for r in 0..h {
            for c in 0..w {
                let l = labels.get(r, c);
                if l == 0 {
                    continue;
                }
                let (ri, ci) = (r as isize, c as isize);
                if at(ri - 1, ci) != l {
                    out[r * stride + c][0] = l;
                }
                if at(ri, ci + 1) != l {
                    out[r * stride + c + 1][1] = l;
                }
                if at(ri + 1, ci) != l {
                    out[(r + 1) * stride + c + 1][2] = l;
                }
                if at(ri, ci - 1) != l {
                    out[(r + 1) * stride + c][3] = l;
                }
            }
        }
        EdgeMap { stride, out }
    }

    fn index(&self, v: Vertex) -> usize {
        v.1 as usize * self.stride + v.0 as usize
    }

    /// Edge taken after arriving at `v` heading `dir`: the sharpest right
    /// turn available, which keeps diagonal pinch points apart.
    fn successor(&self, v: Vertex, dir: usize, label: u32) -> usize {
        let slot = &self.out[self.index(v)];
        [(dir + 1) % 4, dir, (dir + 3) % 4]
            .into_iter()
            .find(|&d| slot[d] == label)
            .expect("boundary edges form closed loops")
    }
}

/// Splits a closed vertex walk into simple cycles at repeated vertices.
fn split_simple(walk: Vec<Vertex>) -> Vec<Vec<Vertex>> {
    let mut out = Vec::new();
    let mut stack: Vec<Vertex> = Vec::with_capacity(walk.len());
    let mut pos: HashMap<Vertex, usize> = HashMap::new();
    for v in walk {
        if let Some(&j) = pos.get(&v) {
            let cycle: Vec<Vertex> = stack.drain(j..).collect();
            for u in &cycle {
                pos.remove(u);
            }
            out.push(cycle);
        }
        pos.insert(v, stack.len());
        stack.push(v);
    }
    if !stack.is_empty() {
        out.push(stack);
    }
    out
}

/// Drops vertices lying on the straight line between their neighbours.
fn merge_collinear(ring: Vec<Vertex>) -> Vec<Vertex> {
    let n = ring.len();
    let keep: Vec<Vertex> = (0..n)
        .filter(|&i| {
            let (p, v, q) = (ring[(i + n - 1) % n], ring[i], ring[(i + 1) % n]);
            !((p.0 == v.0 && v.0 == q.0) || (p.1 == v.1 && v.1 == q.1))
        })
        .map(|i| ring[i])
        .collect();
    keep
}

/// Twice the shoelace area in screen space; positive for component outlines.
fn screen_area2(ring: &[Vertex]) -> i64 {
    let n = ring.len();
    (0..n)
        .map(|i| {
            let (a, b) = (ring[i], ring[(i + 1) % n]);
            a.0 * b.1 - b.0 * a.1
        })
        .sum()
}

fn to_f64(ring: &[Vertex]) -> Vec<[f64; 2]> {
    let mut out: Vec<[f64; 2]> = ring.iter().map(|v| [v.0 as f64, v.1 as f64]).collect();
    out.push(out[0]);
    out
}

fn to_world(ring: &[Vertex], t: &GeoTransform) -> Vec<[f64; 2]> {
    let mut out: Vec<[f64; 2]> = ring
        .iter()
        .map(|v| {
            let (x, y) = pixel_to_world(t, v.0, v.1);
            [x, y]
        })
        .collect();
    out.push(out[0]);
    out
}

/// Traces the exact pixel outline of every component.
///
/// Exterior rings run counter-clockwise in world coordinates, holes clockwise.
/// `prob`, if given, supplies each detection's mean probability; without it
/// every pixel counts as probability 1.
pub fn polygonize(components: &Components, transform: &GeoTransform, prob: Option<&Raster>) -> Result<Vec<Detection>> {
    let labels = &components.labels;
    if let Some(p) = prob {
        if p.width() != labels.width() || p.height() != labels.height() {
            return Err(Error::DimensionMismatch(
                "probability raster and labels differ in size".into(),
            ));
        }
    }
    let edges = EdgeMap::build(labels);
    let k = components.count();
    let mut rings: Vec<Vec<Vec<Vertex>>> = vec![Vec::new(); k];
    let mut used = vec![[false; 4]; edges.out.len()];
    for vy in 0..=labels.height() as i64 {
        for vx in 0..=labels.width() as i64 {
            let start_idx = edges.index((vx, vy));
            for d0 in 0..4 {
                let label = edges.out[start_idx][d0];
                if label == 0 || used[start_idx][d0] {
                    continue;
                }
                let mut walk = Vec::new();
                let (mut v, mut d) = ((vx, vy), d0);
                loop {
                    used[edges.index(v)][d] = true;
                    walk.push(v);
                    v = (v.0 + STEPS[d].0, v.1 + STEPS[d].1);
                    d = edges.successor(v, d, label);
                    if v == (vx, vy) && d == d0 {
                        break;
                    }
                }
                rings[label as usize - 1].extend(split_simple(walk).into_iter().map(merge_collinear));
            }
        }
    }

    let mut sums = vec![0.0f64; k];
    if let Some(p) = prob {
        for (&l, &v) in labels.data().iter().zip(p.band(0)) {
            if l != 0 {
                sums[l as usize - 1] += v as f64;
            }
        }
    }

    let pixel_area = transform.pixel_area();
    let mut out = Vec::with_capacity(k);
    for (i, label_rings) in rings.into_iter().enumerate() {
        let (exteriors, holes): (Vec<_>, Vec<_>) = label_rings.into_iter().partition(|r| screen_area2(r) > 0);
        let mut hole_sets: Vec<Vec<Vec<Vertex>>> = vec![Vec::new(); exteriors.len()];
        let ext_f: Vec<Vec<[f64; 2]>> = exteriors.iter().map(|r| to_f64(r)).collect();
        for hole in holes {
            // centre of the background pixel left of the hole's first edge
            let (a, b) = (hole[0], hole[1]);
            let d = ((b.0 - a.0).signum(), (b.1 - a.1).signum());
            let px = a.0 as f64 + 0.5 * d.0 as f64 + 0.5 * d.1 as f64;
            let py = a.1 as f64 + 0.5 * d.1 as f64 - 0.5 * d.0 as f64;
            let owner = (0..exteriors.len())
                .filter(|&e| ring_crossings(&ext_f[e], px, py))
                .min_by_key(|&e| screen_area2(&exteriors[e]))
                .ok_or_else(|| Error::InvalidRing("hole outside every exterior".into()))?;
            hole_sets[owner].push(hole);
        }
        let parts = exteriors
            .iter()
            .zip(hole_sets)
            .map(|(ext, hs)| {
                PolygonAnnotation::new(
                    to_world(ext, transform),
                    hs.iter().map(|h| to_world(h, transform)).collect(),
                    DEFAULT_LABEL,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let pixel_count = components.sizes[i];
        let mean_probability = if prob.is_some() {
            sums[i] / pixel_count as f64
        } else {
            1.0
        };
        out.push(Detection {
            label: i as u32 + 1,
            parts,
            pixel_count,
            area_m2: pixel_count as f64 * pixel_area,
            mean_probability,
        });
    }
    Ok(out)
}

/// Keeps detections with `area_m2 >= min_area`, in order.
pub fn filter_detections(dets: Vec<Detection>, pcfg: &PostprocConfig) -> Vec<Detection> {
    dets.into_iter().filter(|d| d.area_m2 >= pcfg.min_area).collect()
}

/// Threshold, label and polygonize a probability raster (no area filter).
pub fn extract_detections(prob: &Raster, pcfg: &PostprocConfig) -> Result<(Mask, Vec<Detection>)> {
    pcfg.validate()?;
    let mask = threshold_probability(prob, pcfg.probability_threshold)?;
    let cc = connected_components(&mask, pcfg.connectivity);
    let dets = polygonize(&cc, &prob.transform, Some(prob))?;
    Ok((mask, dets))
}
