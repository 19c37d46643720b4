//! Dense phase-1 simplex for small feasibility problems: find x >= 0 with
//! A x = b, or certify that none exists. Bland's rule on both the entering
//! and leaving choices keeps the pivot sequence finite and deterministic.

const PIVOT_EPS: f64 = 1e-12;

pub struct Feasibility {
    pub feasible: bool,
    /// Valid when feasible; length equals the number of columns of A.
    pub x: Vec<f64>,
}

pub fn solve_feasibility(a: &[Vec<f64>], b: &[f64], tol: f64) -> Feasibility {
    let m = a.len();
    let n = if m == 0 { 0 } else { a[0].len() };
    assert_eq!(b.len(), m, "rhs length must match row count");

    // Tableau columns: n structural, m artificial, then the rhs. Rows are
    // scaled so b >= 0 and the starting basis is the artificial identity.
    let width = n + m + 1;
    let mut tab: Vec<Vec<f64>> = Vec::with_capacity(m);
    for i in 0..m {
        let mut row = vec![0.0; width];
        let flip = if b[i] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            row[j] = flip * a[i][j];
        }
        row[n + i] = 1.0;
        row[width - 1] = flip * b[i];
        tab.push(row);
    }
    let mut basis: Vec<usize> = (n..n + m).collect();

    // Phase-1 objective row: minimize the artificial sum, kept in the
    // "reduced cost" form obtained by summing the constraint rows.
    let mut obj = vec![0.0; width];
    for row in &tab {
        for (o, v) in obj.iter_mut().zip(row.iter()) {
            *o += v;
        }
    }

    // Entering: smallest structural index with positive reduced cost.
    while let Some(enter) = (0..n).find(|&j| obj[j] > PIVOT_EPS) {
        // Leaving: minimum ratio, ties broken by smallest basis variable.
        let mut leave: Option<usize> = None;
        let mut best = f64::INFINITY;
        for (i, row) in tab.iter().enumerate() {
            if row[enter] > PIVOT_EPS {
                let ratio = row[width - 1] / row[enter];
                let better = match leave {
                    None => true,
                    Some(l) => {
                        ratio < best - PIVOT_EPS
                            || (ratio < best + PIVOT_EPS && basis[i] < basis[l])
                    }
                };
                if better {
                    leave = Some(i);
                    best = ratio;
                }
            }
        }
        let Some(leave) = leave else {
            // Unbounded entering column cannot happen for a phase-1
            // objective bounded below by zero, but bail out defensively.
            break;
        };
        pivot(&mut tab, &mut obj, leave, enter);
        basis[leave] = enter;
    }

    let residual = obj[width - 1];
    if residual.abs() > tol {
        return Feasibility {
            feasible: false,
            x: Vec::new(),
        };
    }
    let mut x = vec![0.0; n];
    for (i, &var) in basis.iter().enumerate() {
        if var < n {
            x[var] = tab[i][width - 1].max(0.0);
        }
    }
    Feasibility { feasible: true, x }
}

fn pivot(tab: &mut [Vec<f64>], obj: &mut [f64], row: usize, col: usize) {
    let scale = tab[row][col];
    for v in tab[row].iter_mut() {
        *v /= scale;
    }
    let pivot_row = tab[row].clone();
    for (i, r) in tab.iter_mut().enumerate() {
        if i != row && r[col] != 0.0 {
            let factor = r[col];
            for (v, p) in r.iter_mut().zip(pivot_row.iter()) {
                *v -= factor * p;
            }
        }
    }
    if obj[col] != 0.0 {
        let factor = obj[col];
        for (v, p) in obj.iter_mut().zip(pivot_row.iter()) {
            *v -= factor * p;
        }
    }
}
