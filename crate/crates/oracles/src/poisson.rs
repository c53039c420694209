//! Dense direct solve of the discrete Poisson blending problem.

/// Gaussian elimination with partial pivoting on a dense copy of `a`.
pub fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
            .unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f != 0.0 {
                for k in col..n {
                    a[row][k] -= f * a[col][k];
                }
                b[row] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut s = b[row];
        for k in row + 1..n {
            s -= a[row][k] * x[k];
        }
        x[row] = s / a[row][row];
    }
    x
}

/// Single-channel problem over a `pw×ph` rectangle. `interior[y*pw+x]` marks
/// unknowns; every 4-neighbour of an unknown must lie in the rectangle.
/// `source` is the patch and `boundary` the background, both over the
/// rectangle. Returns the rectangle with unknowns replaced by the solution.
pub fn blend_channel(pw: usize, ph: usize, interior: &[bool], source: &[f64], boundary: &[f64]) -> Vec<f64> {
    let ids: Vec<usize> = (0..pw * ph).filter(|&k| interior[k]).collect();
    let n = ids.len();
    let pos = |k: usize| ids.iter().position(|&x| x == k);
    let mut a = vec![vec![0.0; n]; n];
    let mut b = vec![0.0; n];
    for (row, &k) in ids.iter().enumerate() {
        let (x, y) = ((k % pw) as i64, (k / pw) as i64);
        a[row][row] = 4.0;
        for (dx, dy) in [(-1, 0), (1, 0), (0, -1), (0, 1)] {
            let q = ((y + dy) as usize) * pw + (x + dx) as usize;
            b[row] += source[k] - source[q];
            match pos(q) {
                Some(col) => a[row][col] -= 1.0,
                None => b[row] += boundary[q],
            }
        }
    }
    let sol = dense_solve(a, b);
    let mut out = boundary.to_vec();
    for (row, &k) in ids.iter().enumerate() {
        out[k] = sol[row];
    }
    out
}

/// Discrete Laplacian `4f_p − Σ f_q` at interior pixel `k` of a `pw`-wide grid.
pub fn laplacian_at(f: &[f64], pw: usize, k: usize) -> f64 {
    4.0 * f[k] - f[k - 1] - f[k + 1] - f[k - pw] - f[k + pw]
}
