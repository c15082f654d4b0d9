use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense symmetric `n × n` (semi)metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricMatrix {
    pub n: usize,
    pub d: Vec<f64>,
}

impl MetricMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            d: vec![0.0; n * n],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::DimensionMismatch("metric must be square".into()));
        }
        Ok(Self {
            n,
            d: rows.into_iter().flatten().collect(),
        })
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.d[i * self.n + j] = v;
        self.d[j * self.n + i] = v;
    }

    pub fn max(&self) -> f64 {
        self.d.iter().copied().fold(0.0, f64::max)
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            n: self.n,
            d: self.d.iter().map(|x| x * k).collect(),
        }
    }
}

const MASS_EPS: f64 = 1e-15;

/// Optimal transport cost `min_π Σ π(i,j) d(i,j)` between `p` and `q`.
pub fn kantorovich(d: &MetricMatrix, p: &[f64], q: &[f64]) -> Result<f64> {
    Ok(kantorovich_plan(d, p, q)?.0)
}

/// `(source, target, mass)` entry of a transport plan.
pub type Flow = (usize, usize, f64);

/// Optimal cost and coupling `[(i, j, mass)]`, by successive shortest
/// paths with Dijkstra on reduced costs over the bipartite support graph.
pub fn kantorovich_plan(d: &MetricMatrix, p: &[f64], q: &[f64]) -> Result<(f64, Vec<Flow>)> {
    if p.len() != d.n || q.len() != d.n {
        return Err(Error::DimensionMismatch(format!(
            "distributions of size {} and {} for a {}-point metric",
            p.len(),
            q.len(),
            d.n
        )));
    }
    let src: Vec<usize> = (0..d.n).filter(|&i| p[i] > 0.0).collect();
    let dst: Vec<usize> = (0..d.n).filter(|&j| q[j] > 0.0).collect();
    let (m, k) = (src.len(), dst.len());
    if m == 0 || k == 0 {
        return Ok((0.0, Vec::new()));
    }
    let mut supply: Vec<f64> = src.iter().map(|&i| p[i]).collect();
    let mut demand: Vec<f64> = dst.iter().map(|&j| q[j]).collect();
    let cost: Vec<f64> = src
        .iter()
        .flat_map(|&i| dst.iter().map(move |&j| (i, j)))
        .map(|(i, j)| d.get(i, j))
        .collect();
    let mut flow = vec![0.0; m * k];

    // Nodes: 0..m sources, m..m+k sinks. The super source / sink are implicit:
    // sources with remaining supply start at distance 0, sinks with remaining
    // demand are targets.
    let nv = m + k;
    let mut pot = vec![0.0; nv];
    let mut dist = vec![0.0; nv];
    let mut prev = vec![usize::MAX; nv];
    let mut done = vec![false; nv];
    loop {
        let left: f64 = supply.iter().sum();
        if left <= MASS_EPS || demand.iter().all(|&x| x <= MASS_EPS) {
            break;
        }
        dist.iter_mut().for_each(|x| *x = f64::INFINITY);
        prev.iter_mut().for_each(|x| *x = usize::MAX);
        done.iter_mut().for_each(|x| *x = false);
        for i in 0..m {
            if supply[i] > MASS_EPS {
                dist[i] = 0.0;
            }
        }
        loop {
            let mut u = usize::MAX;
            let mut best = f64::INFINITY;
            for v in 0..nv {
                if !done[v] && dist[v] < best {
                    best = dist[v];
                    u = v;
                }
            }
            if u == usize::MAX {
                break;
            }
            done[u] = true;
            if u < m {
                for j in 0..k {
                    let v = m + j;
                    let rc = (cost[u * k + j] + pot[u] - pot[v]).max(0.0);
                    if dist[u] + rc < dist[v] {
                        dist[v] = dist[u] + rc;
                        prev[v] = u;
                    }
                }
            } else {
                let j = u - m;
                for i in 0..m {
                    if flow[i * k + j] > MASS_EPS {
                        let rc = (-cost[i * k + j] + pot[u] - pot[i]).max(0.0);
                        if dist[u] + rc < dist[i] {
                            dist[i] = dist[u] + rc;
                            prev[i] = u;
                        }
                    }
                }
            }
        }
        // Closest sink with remaining demand, in true (unreduced) cost.
        let mut target = usize::MAX;
        let mut best = f64::INFINITY;
        for j in 0..k {
            let v = m + j;
            if demand[j] > MASS_EPS && dist[v].is_finite() {
                let true_d = dist[v] + pot[v];
                if true_d < best {
                    best = true_d;
                    target = v;
                }
            }
        }
        if target == usize::MAX {
            break;
        }
        for v in 0..nv {
            if dist[v].is_finite() {
                pot[v] += dist[v];
            }
        }
        // Walk back to a source, collecting the bottleneck.
        let mut amount = demand[target - m];
        let mut v = target;
        loop {
            let u = prev[v];
            if u == usize::MAX {
                amount = amount.min(supply[v]);
                break;
            }
            if u >= m {
                // v is a source reached through a reverse arc.
                amount = amount.min(flow[v * k + (u - m)]);
            }
            v = u;
        }
        let origin = v;
        supply[origin] -= amount;
        demand[target - m] -= amount;
        let mut v = target;
        while prev[v] != usize::MAX {
            let u = prev[v];
            if u < m {
                flow[u * k + (v - m)] += amount;
            } else {
                let f = &mut flow[v * k + (u - m)];
                *f = (*f - amount).max(0.0);
            }
            v = u;
        }
    }
    let mut total = 0.0;
    let mut plan = Vec::new();
    for i in 0..m {
        for j in 0..k {
            let f = flow[i * k + j];
            if f > 0.0 {
                total += f * cost[i * k + j];
                plan.push((src[i], dst[j], f));
            }
        }
    }
    Ok((total, plan))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(n: usize) -> MetricMatrix {
        let mut d = MetricMatrix::zeros(n);
        for i in 0..n {
            for j in 0..n {
                d.set(i, j, (i as f64 - j as f64).abs());
            }
        }
        d
    }

    #[test]
    fn identical_distributions_cost_nothing() {
        let d = line(4);
        let p = [0.1, 0.2, 0.3, 0.4];
        assert!(kantorovich(&d, &p, &p).unwrap().abs() < 1e-15);
    }

    #[test]
    fn point_masses_cost_the_distance() {
        let d = line(5);
        let mut p = [0.0; 5];
        let mut q = [0.0; 5];
        p[1] = 1.0;
        q[4] = 1.0;
        assert_eq!(kantorovich(&d, &p, &q).unwrap(), 3.0);
    }

    #[test]
    fn line_metric_matches_cdf_formula() {
        let d = line(4);
        let p = [0.4, 0.1, 0.1, 0.4];
        let q = [0.1, 0.4, 0.4, 0.1];
        // W1 on a line = Σ |F_p − F_q|.
        let (mut fp, mut fq, mut w) = (0.0, 0.0, 0.0);
        for i in 0..3 {
            fp += p[i];
            fq += q[i];
            w += f64::abs(fp - fq);
        }
        assert!((kantorovich(&d, &p, &q).unwrap() - w).abs() < 1e-12);
    }

    #[test]
    fn plan_has_the_right_marginals() {
        let d = line(3);
        let p = [0.5, 0.5, 0.0];
        let q = [0.0, 0.25, 0.75];
        let (_, plan) = kantorovich_plan(&d, &p, &q).unwrap();
        let mut row = [0.0; 3];
        let mut col = [0.0; 3];
        for (i, j, f) in plan {
            row[i] += f;
            col[j] += f;
        }
        for i in 0..3 {
            assert!((row[i] - p[i]).abs() < 1e-12 && (col[i] - q[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn size_mismatch_is_rejected() {
        assert!(matches!(
            kantorovich(&line(3), &[1.0], &[0.0, 1.0, 0.0]),
            Err(Error::DimensionMismatch(_))
        ));
    }
}
