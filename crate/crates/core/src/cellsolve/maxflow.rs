//! Dinic max-flow on a fixed arc order.

use std::collections::VecDeque;

pub struct FlowGraph {
    n: usize,
    to: Vec<usize>,
    cap: Vec<f64>,
    adj: Vec<Vec<usize>>,
    max_cap: f64,
}

impl FlowGraph {
    pub fn new(n: usize) -> Self {
        FlowGraph { n, to: Vec::new(), cap: Vec::new(), adj: vec![Vec::new(); n], max_cap: 0.0 }
    }

    /// Arc pair `u -> v` (capacity `uv`) and `v -> u` (capacity `vu`).
    pub fn add_edge(&mut self, u: usize, v: usize, uv: f64, vu: f64) {
        let k = self.to.len();
        self.to.push(v);
        self.cap.push(uv);
        self.to.push(u);
        self.cap.push(vu);
        self.adj[u].push(k);
        self.adj[v].push(k + 1);
        for c in [uv, vu] {
            if c.is_finite() {
                self.max_cap = self.max_cap.max(c);
            }
        }
    }

    fn tol(&self) -> f64 {
        1e-13 * self.max_cap.max(1e-300)
    }

    fn levels(&self, s: usize) -> Vec<usize> {
        let tol = self.tol();
        let mut level = vec![usize::MAX; self.n];
        level[s] = 0;
        let mut q = VecDeque::from([s]);
        while let Some(u) = q.pop_front() {
            for &a in &self.adj[u] {
                let v = self.to[a];
                if self.cap[a] > tol && level[v] == usize::MAX {
                    level[v] = level[u] + 1;
                    q.push_back(v);
                }
            }
        }
        level
    }

    /// Maximum flow value from `s` to `t`.
    pub fn max_flow(&mut self, s: usize, t: usize) -> f64 {
        let tol = self.tol();
        let mut total = 0.0;
        loop {
            let level = self.levels(s);
            if level[t] == usize::MAX {
                return total;
            }
            let mut it = vec![0usize; self.n];
            // Iterative blocking-flow search: `path` holds arcs from s.
            let mut path: Vec<usize> = Vec::new();
            let mut u = s;
            loop {
                if u == t {
                    let push = path.iter().map(|&a| self.cap[a]).fold(f64::INFINITY, f64::min);
                    for &a in &path {
                        self.cap[a] -= push;
                        self.cap[a ^ 1] += push;
                    }
                    total += push;
                    // Retreat to the tail of the first saturated arc.
                    let k = path.iter().position(|&a| self.cap[a] <= tol).unwrap_or(0);
                    path.truncate(k);
                    u = if k == 0 { s } else { self.to[path[k - 1]] };
                    continue;
                }
                let mut advanced = false;
                while it[u] < self.adj[u].len() {
                    let a = self.adj[u][it[u]];
                    let v = self.to[a];
                    if self.cap[a] > tol && level[v] == level[u] + 1 {
                        path.push(a);
                        u = v;
                        advanced = true;
                        break;
                    }
                    it[u] += 1;
                }
                if advanced {
                    continue;
                }
                if u == s {
                    break;
                }
                // Dead end: drop u from this phase.
                let a = path.pop().expect("nonempty path");
                u = self.to[a ^ 1];
                it[u] += 1;
            }
        }
    }

    /// Nodes reachable from `s` in the residual graph (the minimal source side).
    pub fn source_side(&self, s: usize) -> Vec<bool> {
        let tol = self.tol();
        let mut seen = vec![false; self.n];
        seen[s] = true;
        let mut q = VecDeque::from([s]);
        while let Some(u) = q.pop_front() {
            for &a in &self.adj[u] {
                let v = self.to[a];
                if self.cap[a] > tol && !seen[v] {
                    seen[v] = true;
                    q.push_back(v);
                }
            }
        }
        seen
    }
}
