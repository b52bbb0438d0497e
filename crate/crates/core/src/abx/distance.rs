use crate::error::{Error, Result};

fn norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt()
}

/// `arccos(cos(u, v)) / pi`, in `[0, 1]`.
pub fn angular_distance(u: &[f32], v: &[f32]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::shape("angular_distance", &[u.len()], &[v.len()]));
    }
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::invalid("angular_distance: zero vector"));
    }
    let dot: f64 = u.iter().zip(v).map(|(&a, &b)| a as f64 * b as f64).sum();
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0).acos() / std::f64::consts::PI)
}

/// Rows of a `[n, dim]` matrix scaled to unit length.
pub fn unit_frames(frames: &[f32], dim: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(frames.len());
    for row in frames.chunks(dim) {
        let n = norm(row);
        if n == 0.0 {
            return Err(Error::invalid("angular distance undefined for a zero frame"));
        }
        out.extend(row.iter().map(|&x| x as f64 / n));
    }
    Ok(out)
}

/// DTW divergence of two sequences of unit rows of width `dim`.
///
/// The minimum, over monotone paths from the first pair to the last pair
/// using diagonal, horizontal and vertical steps, of the summed angular
/// distance divided by the number of cells on the path. Because the
/// normalization depends on path length, the minimum is taken exactly by
/// tracking the best sum for every length.
pub fn dtw_unit(a: &[f64], b: &[f64], dim: usize) -> f64 {
    let (n, m) = (a.len() / dim, b.len() / dim);
    let lens = n + m;
    let mut prev = vec![f64::INFINITY; m * lens];
    let mut cur = vec![f64::INFINITY; m * lens];
    for i in 0..n {
        let ai = &a[i * dim..(i + 1) * dim];
        for j in 0..m {
            let dot: f64 = ai.iter().zip(&b[j * dim..(j + 1) * dim]).map(|(x, y)| x * y).sum();
            let d = dot.clamp(-1.0, 1.0).acos() / std::f64::consts::PI;
            let cell = j * lens;
            if i == 0 && j == 0 {
                cur[..lens].fill(f64::INFINITY);
                cur[1] = d;
                continue;
            }
            // a path to (i, j) visits between max(i, j) + 1 and i + j + 1 cells
            let (lo, hi) = (i.max(j) + 1, i + j + 1);
            cur[cell..cell + lens].fill(f64::INFINITY);
            for len in lo..=hi {
                let mut best = f64::INFINITY;
                if i > 0 && j > 0 {
                    best = best.min(prev[(j - 1) * lens + len - 1]);
                }
                if i > 0 {
                    best = best.min(prev[cell + len - 1]);
                }
                if j > 0 {
                    best = best.min(cur[(j - 1) * lens + len - 1]);
                }
                cur[cell + len] = best + d;
            }
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    let last = (m - 1) * lens;
    (n.max(m)..lens)
        .map(|len| prev[last + len] / len as f64)
        .fold(f64::INFINITY, f64::min)
}

/// DTW divergence of two `[n, dim]` and `[m, dim]` frame matrices.
pub fn dtw_divergence(a: &[f32], b: &[f32], dim: usize) -> Result<f64> {
    if dim == 0 || a.is_empty() || b.is_empty() || !a.len().is_multiple_of(dim) || !b.len().is_multiple_of(dim) {
        return Err(Error::invalid(format!(
            "dtw_divergence: sequences of {} and {} values are not non-empty multiples of width {dim}",
            a.len(),
            b.len()
        )));
    }
    Ok(dtw_unit(&unit_frames(a, dim)?, &unit_frames(b, dim)?, dim))
}
