//! Exact squared Euclidean distance transform by separable lower envelopes
//! of parabolas, one pass per axis. Anisotropic spacing enters as a per-axis
//! weight (the squared spacing).

/// One-dimensional pass: `out[p] = min_q w (p - q)^2 + f[q]`.
///
/// Infinite entries of `f` are not sites. `v` and `z` are scratch buffers of
/// length at least `f.len()` and `f.len() + 1`.
fn envelope_1d(f: &[f64], w: f64, out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k: isize = -1;
    for q in 0..n {
        if !f[q].is_finite() {
            continue;
        }
        let fq = f[q] + w * (q * q) as f64;
        loop {
            if k < 0 {
                k = 0;
                v[0] = q;
                z[0] = f64::NEG_INFINITY;
                z[1] = f64::INFINITY;
                break;
            }
            let p = v[k as usize];
            let fp = f[p] + w * (p * p) as f64;
            let s = (fq - fp) / (2.0 * w * (q - p) as f64);
            if s <= z[k as usize] {
                k -= 1;
            } else {
                k += 1;
                v[k as usize] = q;
                z[k as usize] = s;
                z[k as usize + 1] = f64::INFINITY;
                break;
            }
        }
    }
    if k < 0 {
        out.iter_mut().for_each(|o| *o = f64::INFINITY);
        return;
    }
    let mut j = 0usize;
    for (p, o) in out.iter_mut().enumerate() {
        while z[j + 1] < p as f64 {
            j += 1;
        }
        let q = v[j];
        let d = p as f64 - q as f64;
        *o = w * d * d + f[q];
    }
}

/// Squared distance (in units of `weights`, i.e. squared spacing per axis)
/// from every voxel to the nearest site. Voxels are x-fastest. With no sites
/// at all the result is `+inf` everywhere.
pub fn squared_edt(sites: &[bool], dims: [usize; 3], weights: [f64; 3]) -> Vec<f64> {
    let [nx, ny, nz] = dims;
    assert_eq!(sites.len(), nx * ny * nz);
    let mut grid: Vec<f64> = sites
        .iter()
        .map(|&s| if s { 0.0 } else { f64::INFINITY })
        .collect();

    let longest = nx.max(ny).max(nz);
    let mut line = vec![0.0; longest];
    let mut out = vec![0.0; longest];
    let mut v = vec![0usize; longest];
    let mut z = vec![0.0; longest + 1];

    let strides = [1, nx, nx * ny];
    for axis in 0..3 {
        let n = dims[axis];
        let stride = strides[axis];
        // enumerate every line along `axis` by its starting index
        let (oa, ob) = match axis {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };
        for b in 0..dims[ob] {
            for a in 0..dims[oa] {
                let start = a * strides[oa] + b * strides[ob];
                for (t, l) in line[..n].iter_mut().enumerate() {
                    *l = grid[start + t * stride];
                }
                envelope_1d(&line[..n], weights[axis], &mut out[..n], &mut v, &mut z);
                for (t, &o) in out[..n].iter().enumerate() {
                    grid[start + t * stride] = o;
                }
            }
        }
    }
    grid
}
