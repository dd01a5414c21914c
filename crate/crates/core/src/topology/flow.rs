//! Unit-capacity min-cost flow by successive shortest paths.

use std::collections::VecDeque;

#[derive(Clone, Copy, Debug)]
struct Arc {
    to: usize,
    cap: i32,
    cost: i64,
}

#[derive(Debug, Default)]
pub(crate) struct FlowNet {
    arcs: Vec<Arc>,
    out: Vec<Vec<usize>>,
}

impl FlowNet {
    pub fn new(n: usize) -> Self {
        FlowNet { arcs: Vec::new(), out: vec![Vec::new(); n] }
    }

    pub fn add_arc(&mut self, from: usize, to: usize, cap: i32, cost: i64) -> usize {
        let id = self.arcs.len();
        self.arcs.push(Arc { to, cap, cost });
        self.out[from].push(id);
        self.arcs.push(Arc { to: from, cap: 0, cost: -cost });
        self.out[to].push(id + 1);
        id
    }

    /// Flow currently carried by forward arc `id`.
    pub fn flow(&self, id: usize) -> i32 {
        self.arcs[id ^ 1].cap
    }

    /// Pushes up to `want` units from `s` to `t`. Returns (units, cost).
    pub fn min_cost_flow(&mut self, s: usize, t: usize, want: i32) -> (i32, i64) {
        let n = self.out.len();
        let (mut sent, mut total) = (0, 0i64);
        while sent < want {
            let mut dist = vec![i64::MAX; n];
            let mut via = vec![usize::MAX; n];
            let mut queued = vec![false; n];
            let mut queue = VecDeque::new();
            dist[s] = 0;
            queue.push_back(s);
            queued[s] = true;
            while let Some(u) = queue.pop_front() {
                queued[u] = false;
                for &id in &self.out[u] {
                    let a = self.arcs[id];
                    if a.cap > 0 && dist[u] + a.cost < dist[a.to] {
                        dist[a.to] = dist[u] + a.cost;
                        via[a.to] = id;
                        if !queued[a.to] {
                            queued[a.to] = true;
                            queue.push_back(a.to);
                        }
                    }
                }
            }
            if dist[t] == i64::MAX {
                break;
            }
            let mut v = t;
            while v != s {
                let id = via[v];
                self.arcs[id].cap -= 1;
                self.arcs[id ^ 1].cap += 1;
                v = self.arcs[id ^ 1].to;
            }
            sent += 1;
            total += dist[t];
        }
        (sent, total)
    }

    /// Splits the flow leaving `s` into unit paths of vertices ending at `t`.
    pub fn decompose(&self, s: usize, t: usize) -> Vec<Vec<usize>> {
        let mut left: Vec<i32> = (0..self.arcs.len()).map(|id| if id % 2 == 0 { self.flow(id) } else { 0 }).collect();
        let mut paths = Vec::new();
        loop {
            let mut path = vec![s];
            let mut u = s;
            while u != t {
                let Some(&id) = self.out[u].iter().find(|&&id| left[id] > 0) else {
                    break;
                };
                left[id] -= 1;
                u = self.arcs[id].to;
                path.push(u);
            }
            if u != t {
                break;
            }
            paths.push(path);
        }
        paths
    }
}
