use serde::{Deserialize, Serialize};

use crate::grid::{Grid, Mask};

/// Pixel adjacency used to group foreground pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Connectivity {
    Four,
    Eight,
}

impl TryFrom<u8> for Connectivity {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, String> {
        match v {
            4 => Ok(Connectivity::Four),
            8 => Ok(Connectivity::Eight),
            _ => Err(format!("connectivity must be 4 or 8, got {v}")),
        }
    }
}

impl From<Connectivity> for u8 {
    fn from(c: Connectivity) -> u8 {
        match c {
            Connectivity::Four => 4,
            Connectivity::Eight => 8,
        }
    }
}

/// Label grid (`0` = background) and the pixel count of each label,
/// `sizes[k - 1]` for label `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Components {
    pub labels: Grid<u32>,
    pub sizes: Vec<usize>,
}

impl Components {
    pub fn count(&self) -> usize {
        self.sizes.len()
    }
}

fn find(parent: &mut [u32], mut x: u32) -> u32 {
    while parent[x as usize] != x {
        let p = parent[x as usize];
        parent[x as usize] = parent[p as usize];
        x = p;
    }
    x
}

fn union(parent: &mut [u32], a: u32, b: u32) {
    let (ra, rb) = (find(parent, a), find(parent, b));
    if ra != rb {
        let (lo, hi) = (ra.min(rb), ra.max(rb));
        parent[hi as usize] = lo;
    }
}

/// Two-pass union-find labelling; labels are numbered by the row-major
/// position of each component's first pixel.
pub fn connected_components(mask: &Mask, connectivity: Connectivity) -> Components {
    let (w, h) = (mask.width(), mask.height());
    let mut provisional = vec![0u32; w * h];
    let mut parent: Vec<u32> = vec![0];
    let back: &[(isize, isize)] = match connectivity {
        Connectivity::Four => &[(0, -1), (-1, 0)],
        Connectivity::Eight => &[(0, -1), (-1, -1), (-1, 0), (-1, 1)],
    };
    for r in 0..h {
        for c in 0..w {
            if mask.get(r, c) == 0 {
                continue;
            }
            let mut label = 0u32;
            for &(dr, dc) in back {
                let (nr, nc) = (r as isize + dr, c as isize + dc);
                if nr < 0 || nc < 0 || nc >= w as isize {
                    continue;
                }
                let n = provisional[nr as usize * w + nc as usize];
                if n == 0 {
                    continue;
                }
                if label == 0 {
                    label = n;
                } else {
                    union(&mut parent, label, n);
                }
            }
            if label == 0 {
                label = parent.len() as u32;
                parent.push(label);
            }
            provisional[r * w + c] = label;
        }
    }
    let mut remap = vec![0u32; parent.len()];
    let mut sizes = Vec::new();
    for v in provisional.iter_mut() {
        if *v == 0 {
            continue;
        }
        let root = find(&mut parent, *v) as usize;
        if remap[root] == 0 {
            sizes.push(0);
            remap[root] = sizes.len() as u32;
        }
        *v = remap[root];
        sizes[*v as usize - 1] += 1;
    }
    Components {
        labels: Grid::from_vec(w, h, provisional).expect("same shape"),
        sizes,
    }
}
