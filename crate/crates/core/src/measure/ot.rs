//! Discrete optimal transport solvers.

/// Minimum-cost perfect assignment on an `n x n` cost matrix (row-major).
///
/// Shortest augmenting path with potentials, `O(n^3)`. Returns the column
/// assigned to each row and the total cost.
pub fn hungarian(cost: &[f64], n: usize) -> (Vec<usize>, f64) {
    assert_eq!(cost.len(), n * n);
    if n == 0 {
        return (Vec::new(), 0.0);
    }
    // 1-based arrays, column 0 is a virtual start.
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
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
    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        assignment[p[j] - 1] = j - 1;
    }
    let total = assignment
        .iter()
        .enumerate()
        .map(|(i, &j)| cost[i * n + j])
        .sum();
    (assignment, total)
}

/// Exact transport cost between weighted point sets, by successive shortest
/// augmenting paths (Dijkstra with reduced costs) on the bipartite network.
///
/// `cost` is `a.len() x b.len()`, row-major; `a` and `b` must have equal mass.
pub fn transport_cost(cost: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    let m = b.len();
    assert_eq!(cost.len(), n * m);
    let mass_eps = 1e-15;
    let mut supply = a.to_vec();
    let mut demand = b.to_vec();
    let mut flow = vec![0.0; n * m];
    // potentials: sources 0..n, sinks n..n+m
    let mut pot = vec![0.0; n + m];
    let inf = f64::INFINITY;

    let mut remaining: f64 = supply.iter().sum();
    let mut guard = 0usize;
    while remaining > 1e-14 {
        guard += 1;
        if guard > 4 * (n + m) * (n + m) + 16 {
            break;
        }
        // Dijkstra from all sources with positive supply.
        let mut dist = vec![inf; n + m];
        let mut prev = vec![usize::MAX; n + m];
        let mut done = vec![false; n + m];
        for i in 0..n {
            if supply[i] > mass_eps {
                dist[i] = 0.0;
            }
        }
        loop {
            let mut best = usize::MAX;
            let mut bd = inf;
            for (k, &dk) in dist.iter().enumerate() {
                if !done[k] && dk < bd {
                    bd = dk;
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
                    let rc = (cost[i * m + j] + pot[i] - pot[node]).max(0.0);
                    if bd + rc < dist[node] {
                        dist[node] = bd + rc;
                        prev[node] = i;
                    }
                }
            } else {
                let j = best - n;
                for i in 0..n {
                    if done[i] || flow[i * m + j] <= mass_eps {
                        continue;
                    }
                    let rc = (-cost[i * m + j] + pot[best] - pot[i]).max(0.0);
                    if bd + rc < dist[i] {
                        dist[i] = bd + rc;
                        prev[i] = best;
                    }
                }
            }
        }
        // closest sink with unmet demand
        let mut target = usize::MAX;
        let mut td = inf;
        for j in 0..m {
            if demand[j] > mass_eps && dist[n + j] < td {
                td = dist[n + j];
                target = n + j;
            }
        }
        if target == usize::MAX {
            break;
        }
        for k in 0..n + m {
            pot[k] += dist[k].min(td);
        }
        // bottleneck along the path
        let mut bottleneck = demand[target - n];
        let mut node = target;
        loop {
            let pr = prev[node];
            if pr == usize::MAX {
                bottleneck = bottleneck.min(supply[node]);
                break;
            }
            if node < n {
                // backward arc sink pr -> source node
                bottleneck = bottleneck.min(flow[node * m + (pr - n)]);
            }
            node = pr;
        }
        let mut node = target;
        loop {
            let pr = prev[node];
            if pr == usize::MAX {
                supply[node] -= bottleneck;
                break;
            }
            if node >= n {
                flow[pr * m + (node - n)] += bottleneck;
            } else {
                flow[node * m + (pr - n)] -= bottleneck;
            }
            node = pr;
        }
        demand[target - n] -= bottleneck;
        remaining -= bottleneck;
    }
    flow.iter().zip(cost).map(|(f, c)| f * c).sum()
}

/// Squared 2-Wasserstein distance between weighted samples on the line
/// (monotone rearrangement).
pub fn w2_squared_1d(xs: &[f64], wa: &[f64], ys: &[f64], wb: &[f64]) -> f64 {
    let mut a: Vec<(f64, f64)> = xs.iter().copied().zip(wa.iter().copied()).collect();
    let mut b: Vec<(f64, f64)> = ys.iter().copied().zip(wb.iter().copied()).collect();
    a.sort_by(|p, q| p.0.total_cmp(&q.0));
    b.sort_by(|p, q| p.0.total_cmp(&q.0));
    let (mut i, mut j) = (0usize, 0usize);
    let (mut ra, mut rb) = (a[0].1, b[0].1);
    let mut total = 0.0;
    while i < a.len() && j < b.len() {
        let mass = ra.min(rb);
        let d = a[i].0 - b[j].0;
        total += mass * d * d;
        ra -= mass;
        rb -= mass;
        if ra <= 1e-15 {
            i += 1;
            if i < a.len() {
                ra = a[i].1;
            }
        }
        if rb <= 1e-15 {
            j += 1;
            if j < b.len() {
                rb = b[j].1;
            }
        }
    }
    total
}
