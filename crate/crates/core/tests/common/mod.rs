#![allow(dead_code)]

/// Sample mean and its standard error.
pub fn mean_se(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

/// Minimum-cost perfect matching on a square cost matrix (Hungarian method).
pub fn assignment_cost(cost: &[Vec<f64>]) -> f64 {
    let n = cost.len();
    let inf = f64::INFINITY;
    let (mut u, mut v) = (vec![0.0; n + 1], vec![0.0; n + 1]);
    let (mut p, mut way) = (vec![0usize; n + 1], vec![0usize; n + 1]);
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let (i0, mut delta, mut j1) = (p[j0], inf, 0);
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    (1..=n).map(|j| cost[p[j] - 1][j - 1]).sum()
}

/// Exact transport cost between uniform empirical measures of sizes n and m,
/// as an assignment problem on lcm-replicated atoms.
pub fn transport_oracle(a: &[f64], b: &[f64]) -> f64 {
    let g = (1..=a.len().min(b.len())).rev().find(|g| a.len().is_multiple_of(*g) && b.len().is_multiple_of(*g)).unwrap();
    let l = a.len() / g * b.len();
    let (ra, rb) = (l / a.len(), l / b.len());
    let xa: Vec<f64> = a.iter().flat_map(|&x| std::iter::repeat_n(x, ra)).collect();
    let xb: Vec<f64> = b.iter().flat_map(|&x| std::iter::repeat_n(x, rb)).collect();
    let cost: Vec<Vec<f64>> = xa.iter().map(|x| xb.iter().map(|y| (x - y).abs()).collect()).collect();
    assignment_cost(&cost) / l as f64
}

