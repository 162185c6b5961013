//! Helpers shared by the integration test targets: a finite-difference
//! gradient harness and brute-force reference implementations.

#![allow(dead_code)]

use std::collections::{HashSet, VecDeque};

use dumpwatch::numerics::{Graph, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    use rand::SeedableRng;
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    let values = (0..n).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor::new(shape.to_vec(), values).unwrap()
}

/// `|a - n| / max(|a|, |n|, floor)`; the floor keeps exact zeros from
/// turning rounding noise into huge ratios.
pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// Max relative error between reverse-mode and central-difference gradients
/// of `sum(build(inputs) * r)` for a fixed random `r`, over every input entry.
pub fn grad_check<F>(inputs: &[Tensor<f64>], proj_seed: u64, build: F) -> f64
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Var,
{
    let eval = |inputs: &[Tensor<f64>], with_grad: bool| -> (f64, Vec<Vec<f64>>) {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs
            .iter()
            .map(|t| {
                let mut t = t.clone();
                t.requires_grad = with_grad;
                g.leaf(t)
            })
            .collect();
        let out = build(&mut g, &vars);
        let shape = g.tensor(out).shape.clone();
        let mut r = rng(proj_seed);
        let proj = g.leaf(random_tensor(&mut r, &shape, 1.0));
        let prod = g.mul(out, proj).unwrap();
        let loss = g.sum(prod).unwrap();
        let value = g.value(loss)[0];
        let grads = if with_grad {
            g.backward(loss).unwrap();
            vars.iter()
                .map(|&v| {
                    g.grad(v)
                        .map(<[f64]>::to_vec)
                        .unwrap_or_else(|| vec![0.0; g.value(v).len()])
                })
                .collect()
        } else {
            Vec::new()
        };
        (value, grads)
    };
    let (_, analytic) = eval(inputs, true);
    let mut worst: f64 = 0.0;
    let mut work = inputs.to_vec();
    for (i, t) in inputs.iter().enumerate() {
        for (j, &orig) in t.values.iter().enumerate() {
            work[i].values[j] = orig + FD_STEP;
            let (up, _) = eval(&work, false);
            work[i].values[j] = orig - FD_STEP;
            let (down, _) = eval(&work, false);
            work[i].values[j] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic[i][j], numeric));
        }
    }
    worst
}

/// Same-padded stride-1 cross-correlation by direct summation.
pub fn conv_oracle(
    x: &[f64],
    k: &[f64],
    bias: &[f64],
    (b, cin, h, w): (usize, usize, usize, usize),
    (cout, ks): (usize, usize),
) -> Vec<f64> {
    let p = (ks / 2) as isize;
    let mut out = vec![0.0; b * cout * h * w];
    for n in 0..b {
        for co in 0..cout {
            for y in 0..h {
                for xx in 0..w {
                    let mut s = bias[co];
                    for ci in 0..cin {
                        for ky in 0..ks {
                            for kx in 0..ks {
                                let sy = y as isize + ky as isize - p;
                                let sx = xx as isize + kx as isize - p;
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                    continue;
                                }
                                s += x[((n * cin + ci) * h + sy as usize) * w + sx as usize]
                                    * k[((co * cin + ci) * ks + ky) * ks + kx];
                            }
                        }
                    }
                    out[((n * cout + co) * h + y) * w + xx] = s;
                }
            }
        }
    }
    out
}

/// IoU by explicit coordinate sets.
pub fn iou_oracle(pred: &[u8], target: &[u8], w: usize) -> f64 {
    let set = |m: &[u8]| -> HashSet<(usize, usize)> {
        m.iter()
            .enumerate()
            .filter(|(_, &v)| v != 0)
            .map(|(i, _)| (i / w, i % w))
            .collect()
    };
    let (a, b) = (set(pred), set(target));
    let union = a.union(&b).count();
    if union == 0 {
        1.0
    } else {
        a.intersection(&b).count() as f64 / union as f64
    }
}

/// Breadth-first flood fill, labels in row-major order of first pixel.
pub fn flood_fill_oracle(mask: &[u8], w: usize, h: usize, eight: bool) -> Vec<u32> {
    let mut labels = vec![0u32; w * h];
    let mut next = 0;
    let offsets: Vec<(isize, isize)> = if eight {
        (-1..=1)
            .flat_map(|dy| (-1..=1).map(move |dx| (dy, dx)))
            .filter(|&d| d != (0, 0))
            .collect()
    } else {
        vec![(-1, 0), (1, 0), (0, -1), (0, 1)]
    };
    for start in 0..w * h {
        if mask[start] == 0 || labels[start] != 0 {
            continue;
        }
        next += 1;
        labels[start] = next;
        let mut queue = VecDeque::from([start]);
        while let Some(p) = queue.pop_front() {
            let (y, x) = ((p / w) as isize, (p % w) as isize);
            for &(dy, dx) in &offsets {
                let (ny, nx) = (y + dy, x + dx);
                if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                    continue;
                }
                let q = ny as usize * w + nx as usize;
                if mask[q] != 0 && labels[q] == 0 {
                    labels[q] = next;
                    queue.push_back(q);
                }
            }
        }
    }
    labels
}

/// Winding number of `ring` (closed or open vertex list) around `(x, y)`.
pub fn winding_number(ring: &[[f64; 2]], x: f64, y: f64) -> i32 {
    let n = ring.len();
    let mut wn = 0;
    for i in 0..n {
        let a = ring[i];
        let b = ring[(i + 1) % n];
        let cross = (b[0] - a[0]) * (y - a[1]) - (x - a[0]) * (b[1] - a[1]);
        if a[1] <= y {
            if b[1] > y && cross > 0.0 {
                wn += 1;
            }
        } else if b[1] <= y && cross < 0.0 {
            wn -= 1;
        }
    }
    wn
}

/// Random simple ring around `(cx, cy)`: one vertex per equal angular sector,
/// so consecutive vertices are less than two sectors apart.
pub fn star_ring(rng: &mut ChaCha8Rng, cx: f64, cy: f64, r_min: f64, r_max: f64, n: usize) -> Vec<[f64; 2]> {
    let sector = std::f64::consts::TAU / n as f64;
    (0..n)
        .map(|i| {
            let a = (i as f64 + rng.random_range(0.1..0.9)) * sector;
            let r = rng.random_range(r_min..r_max);
            [cx + r * a.cos(), cy + r * a.sin()]
        })
        .collect()
}

pub fn random_mask(rng: &mut ChaCha8Rng, w: usize, h: usize, density: f64) -> Vec<u8> {
    (0..w * h).map(|_| rng.random_bool(density) as u8).collect()
}

/// Up to `count` normalized positive chips cut from one synthetic scene.
pub fn synthetic_chips(chip_size: usize, count: usize, seed: u64) -> Vec<dumpwatch::dataset::Chip> {
    use dumpwatch::dataset::{
        apply_normalization, extract_chips, fit_normalization, generate_synthetic, rasterize_mask,
    };
    use dumpwatch::dataset::{ChipParams, SynthConfig};
    let scene = generate_synthetic(&SynthConfig {
        scene_size: 128,
        dump_count: 5,
        background_texture_seed: seed,
        ..SynthConfig::default()
    })
    .unwrap();
    let r = &scene.raster;
    let mask = rasterize_mask(&scene.annotations, &r.transform, r.width(), r.height());
    let params = ChipParams {
        chip_size,
        stride: chip_size / 2,
        negatives_per_positive: 0.0,
    };
    let chips: Vec<_> = extract_chips(r, &mask, &params, seed, "scene")
        .unwrap()
        .into_iter()
        .take(count)
        .collect();
    let stats = fit_normalization(&chips).unwrap();
    chips.iter().map(|c| apply_normalization(c, &stats).unwrap()).collect()
}
