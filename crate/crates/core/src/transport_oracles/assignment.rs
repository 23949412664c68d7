//! Exact dense solvers: Hungarian assignment for square uniform problems and
//! successive shortest paths for general transportation problems.

/// Minimum-cost perfect matching on a dense `n × n` cost matrix (row-major).
/// Returns `assignment[row] = column`.
pub fn hungarian(costs: &[f64], n: usize) -> Vec<usize> {
    debug_assert_eq!(costs.len(), n * n);
    if n == 0 {
        return Vec::new();
    }
    let inf = f64::INFINITY;
    // 1-based potentials, column 0 is the virtual start.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![inf; n + 1];
    let mut used = vec![false; n + 1];

    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        minv.iter_mut().for_each(|x| *x = inf);
        used.iter_mut().for_each(|x| *x = false);
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let row = &costs[(i0 - 1) * n..i0 * n];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = row[j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
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

    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        if p[j] > 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    assignment
}

const MASS_EPS: f64 = 1e-15;

/// Optimal coupling of `supply` (rows) and `demand` (columns) with equal
/// totals, dense `costs` row-major. Returns the flow matrix.
pub fn min_cost_transport(costs: &[f64], supply: &[f64], demand: &[f64]) -> Vec<f64> {
    let n = supply.len();
    let m = demand.len();
    debug_assert_eq!(costs.len(), n * m);
    let mut flow = vec![0.0; n * m];
    let mut sup = supply.to_vec();
    let mut dem = demand.to_vec();
    let mut pot_src = vec![0.0; n];
    let mut pot_snk = vec![0.0; m];

    // Node ids: sources 0..n, sinks n..n+m.
    let total = n + m;
    let mut dist = vec![f64::INFINITY; total];
    let mut prev = vec![usize::MAX; total];
    let mut done = vec![false; total];

    loop {
        if sup.iter().all(|s| *s <= MASS_EPS) || dem.iter().all(|d| *d <= MASS_EPS) {
            break;
        }
        dist.iter_mut().for_each(|x| *x = f64::INFINITY);
        prev.iter_mut().for_each(|x| *x = usize::MAX);
        done.iter_mut().for_each(|x| *x = false);
        for i in 0..n {
            if sup[i] > MASS_EPS {
                dist[i] = 0.0;
            }
        }
        let mut target = usize::MAX;
        loop {
            let mut best = usize::MAX;
            let mut bd = f64::INFINITY;
            for (k, dk) in dist.iter().enumerate() {
                if !done[k] && *dk < bd {
                    bd = *dk;
                    best = k;
                }
            }
            if best == usize::MAX {
                break;
            }
            done[best] = true;
            if best < n {
                let i = best;
                for j in 0..m {
                    let node = n + j;
                    if done[node] {
                        continue;
                    }
                    let rc = (costs[i * m + j] + pot_src[i] - pot_snk[j]).max(0.0);
                    if bd + rc < dist[node] {
                        dist[node] = bd + rc;
                        prev[node] = i;
                    }
                }
            } else {
                let j = best - n;
                if dem[j] > MASS_EPS {
                    target = best;
                    break;
                }
                for i in 0..n {
                    if done[i] || flow[i * m + j] <= MASS_EPS {
                        continue;
                    }
                    let rc = (-costs[i * m + j] + pot_snk[j] - pot_src[i]).max(0.0);
                    if bd + rc < dist[i] {
                        dist[i] = bd + rc;
                        prev[i] = best;
                    }
                }
            }
        }
        if target == usize::MAX {
            break;
        }
        let dt = dist[target];
        for k in 0..total {
            let shift = dist[k].min(dt);
            if k < n {
                pot_src[k] += shift;
            } else {
                pot_snk[k - n] += shift;
            }
        }

        // Bottleneck along the path back to a source with supply.
        let mut amount = dem[target - n];
        let mut node = target;
        while prev[node] != usize::MAX {
            let pr = prev[node];
            if node < n {
                // Backward arc sink `pr` -> source `node` cancels flow node->pr.
                amount = amount.min(flow[node * m + (pr - n)]);
            }
            node = pr;
        }
        amount = amount.min(sup[node]);
        let root = node;

        let mut node = target;
        while prev[node] != usize::MAX {
            let pr = prev[node];
            if node >= n {
                flow[pr * m + (node - n)] += amount;
            } else {
                let f = &mut flow[node * m + (pr - n)];
                *f = (*f - amount).max(0.0);
            }
            node = pr;
        }
        sup[root] -= amount;
        dem[target - n] -= amount;
    }
    flow
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cost_of(costs: &[f64], n: usize, a: &[usize]) -> f64 {
        a.iter().enumerate().map(|(i, &j)| costs[i * n + j]).sum()
    }

    #[test]
    fn small_assignment() {
        let costs = [4.0, 1.0, 3.0, 2.0, 0.0, 5.0, 3.0, 2.0, 2.0];
        let a = hungarian(&costs, 3);
        assert_eq!(cost_of(&costs, 3, &a), 5.0);
    }

    #[test]
    fn transport_matches_assignment_on_square_uniform() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for n in [1, 2, 5, 17] {
            let costs: Vec<f64> = (0..n * n).map(|_| rng.random_range(0.0..1.0)).collect();
            let a = hungarian(&costs, n);
            let w = vec![1.0 / n as f64; n];
            let flow = min_cost_transport(&costs, &w, &w);
            let c: f64 = flow.iter().zip(&costs).map(|(f, c)| f * c).sum();
            assert!((c - cost_of(&costs, n, &a) / n as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn transport_unbalanced_sizes() {
        // Two sources, three sinks on a line: x = {0, 1}, y = {0, 0.5, 1}.
        let x = [0.0, 1.0];
        let y = [0.0, 0.5, 1.0];
        let costs: Vec<f64> = x.iter().flat_map(|a| y.iter().map(move |b| (a - b) * (a - b))).collect();
        let flow = min_cost_transport(&costs, &[0.5, 0.5], &[1.0 / 3.0; 3]);
        let c: f64 = flow.iter().zip(&costs).map(|(f, c)| f * c).sum();
        // Monotone coupling: 1/3 at distance 0, 1/6 at 0.5 twice, 1/3 at 0.
        assert!((c - 2.0 * (1.0 / 6.0) * 0.25).abs() < 1e-14, "{c}");
    }
}
