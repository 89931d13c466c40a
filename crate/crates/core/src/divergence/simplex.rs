//! Primal network simplex for the complete bipartite transportation problem.
//!
//! Follows the LEMON implementation: strongly feasible spanning trees stored
//! with parent / thread / successor-count arrays, block-search pricing and
//! an artificial root joined to every node. Costs are integers; supplies are
//! floating point. Tree-arc flows are stored per child node, so memory stays
//! linear in the number of nodes apart from the cost and state tables.

use crate::error::{LabError, Result};

const NONE: usize = usize::MAX;
const STATE_TREE: u8 = 0;
const STATE_LOWER: u8 = 1;

pub(crate) struct Transport {
    n: usize,
    m: usize,
    /// `n * m` integer costs, row-major.
    cost: Vec<i64>,
    supply_src: Vec<f64>,
    supply_dst: Vec<f64>,
}

/// Optimal flows as `(source, sink, mass)` triples over real arcs.
pub(crate) struct Solution {
    pub flows: Vec<(usize, usize, f64)>,
}

impl Transport {
    pub fn new(n: usize, m: usize, cost: Vec<i64>, supply_src: Vec<f64>, supply_dst: Vec<f64>) -> Self {
        debug_assert_eq!(cost.len(), n * m);
        Transport {
            n,
            m,
            cost,
            supply_src,
            supply_dst,
        }
    }

    pub fn solve(&self) -> Result<Solution> {
        Solver::new(self).run()
    }
}

struct Solver<'a> {
    t: &'a Transport,
    node_num: usize,
    arc_num: usize,
    root: usize,
    art_cost: i64,
    // artificial arc of node u points u -> root when true
    art_up: Vec<bool>,
    state: Vec<u8>,
    parent: Vec<usize>,
    pred: Vec<usize>,
    // +1 when pred[u] points from u to its parent
    pred_dir: Vec<i8>,
    flow: Vec<f64>,
    thread: Vec<usize>,
    rev_thread: Vec<usize>,
    succ_num: Vec<usize>,
    last_succ: Vec<usize>,
    pi: Vec<i64>,
    dirty_revs: Vec<usize>,
    block_size: usize,
    next_arc: usize,
    in_arc: usize,
    join: usize,
    u_in: usize,
    v_in: usize,
    u_out: usize,
    delta: f64,
}

impl<'a> Solver<'a> {
    fn new(t: &'a Transport) -> Self {
        let node_num = t.n + t.m;
        let arc_num = t.n * t.m;
        let max_cost = t.cost.iter().copied().map(i64::abs).max().unwrap_or(0);
        let art_cost = (max_cost + 1).saturating_mul(node_num as i64);
        let root = node_num;
        let mut s = Solver {
            t,
            node_num,
            arc_num,
            root,
            art_cost,
            art_up: vec![true; node_num],
            state: vec![STATE_LOWER; arc_num + node_num],
            parent: vec![NONE; node_num + 1],
            pred: vec![NONE; node_num + 1],
            pred_dir: vec![1; node_num + 1],
            flow: vec![0.0; node_num + 1],
            thread: vec![0; node_num + 1],
            rev_thread: vec![0; node_num + 1],
            succ_num: vec![1; node_num + 1],
            last_succ: vec![0; node_num + 1],
            pi: vec![0; node_num + 1],
            dirty_revs: Vec::new(),
            block_size: ((arc_num as f64).sqrt().ceil() as usize).max(10),
            next_arc: 0,
            in_arc: 0,
            join: 0,
            u_in: 0,
            v_in: 0,
            u_out: 0,
            delta: 0.0,
        };
        s.init();
        s
    }

    fn supply(&self, u: usize) -> f64 {
        if u < self.t.n {
            self.t.supply_src[u]
        } else {
            -self.t.supply_dst[u - self.t.n]
        }
    }

    fn init(&mut self) {
        let root = self.root;
        self.parent[root] = NONE;
        self.pred[root] = NONE;
        self.thread[root] = 0;
        self.rev_thread[0] = root;
        self.succ_num[root] = self.node_num + 1;
        self.last_succ[root] = root - 1;
        self.pi[root] = 0;
        for u in 0..self.node_num {
            let e = self.arc_num + u;
            self.parent[u] = root;
            self.pred[u] = e;
            self.thread[u] = u + 1;
            self.rev_thread[u + 1] = u;
            self.succ_num[u] = 1;
            self.last_succ[u] = u;
            self.state[e] = STATE_TREE;
            let s = self.supply(u);
            if s >= 0.0 {
                self.art_up[u] = true;
                self.pred_dir[u] = 1;
                self.pi[u] = 0;
                self.flow[u] = s;
            } else {
                self.art_up[u] = false;
                self.pred_dir[u] = -1;
                self.pi[u] = self.art_cost;
                self.flow[u] = -s;
            }
        }
    }

    fn source(&self, e: usize) -> usize {
        if e < self.arc_num {
            e / self.t.m
        } else {
            let u = e - self.arc_num;
            if self.art_up[u] {
                u
            } else {
                self.root
            }
        }
    }

    fn target(&self, e: usize) -> usize {
        if e < self.arc_num {
            self.t.n + e % self.t.m
        } else {
            let u = e - self.arc_num;
            if self.art_up[u] {
                self.root
            } else {
                u
            }
        }
    }

    fn cost(&self, e: usize) -> i64 {
        if e < self.arc_num {
            self.t.cost[e]
        } else if self.art_up[e - self.arc_num] {
            0
        } else {
            self.art_cost
        }
    }

    fn reduced_cost(&self, e: usize) -> i64 {
        let m = self.t.m;
        self.t.cost[e] + self.pi[e / m] - self.pi[self.t.n + e % m]
    }

    fn find_entering_arc(&mut self) -> bool {
        let mut min = 0i64;
        let mut cnt = self.block_size;
        let mut e = self.next_arc;
        let total = self.arc_num;
        let mut visited = 0;
        while visited < total {
            if self.state[e] == STATE_LOWER {
                let c = self.reduced_cost(e);
                if c < min {
                    min = c;
                    self.in_arc = e;
                }
            }
            visited += 1;
            e += 1;
            if e == total {
                e = 0;
            }
            cnt -= 1;
            if cnt == 0 {
                if min < 0 {
                    break;
                }
                cnt = self.block_size;
            }
        }
        if min >= 0 {
            return false;
        }
        self.next_arc = e;
        true
    }

    fn find_join_node(&mut self) {
        let mut u = self.source(self.in_arc);
        let mut v = self.target(self.in_arc);
        while u != v {
            if self.succ_num[u] < self.succ_num[v] {
                u = self.parent[u];
            } else {
                v = self.parent[v];
            }
        }
        self.join = u;
    }

    fn find_leaving_arc(&mut self) -> bool {
        let first = self.source(self.in_arc);
        let second = self.target(self.in_arc);
        let mut delta = f64::INFINITY;
        let mut result = 0;
        let mut u = first;
        while u != self.join {
            // flow moves from the parent down to u; only upward arcs shrink
            if self.pred_dir[u] == 1 && self.flow[u] < delta {
                delta = self.flow[u];
                self.u_out = u;
                result = 1;
            }
            u = self.parent[u];
        }
        let mut u = second;
        while u != self.join {
            if self.pred_dir[u] == -1 && self.flow[u] <= delta {
                delta = self.flow[u];
                self.u_out = u;
                result = 2;
            }
            u = self.parent[u];
        }
        if result == 1 {
            self.u_in = first;
            self.v_in = second;
        } else {
            self.u_in = second;
            self.v_in = first;
        }
        self.delta = delta;
        result != 0
    }

    fn change_flow(&mut self) {
        let val = self.delta;
        if val > 0.0 {
            let mut u = self.source(self.in_arc);
            while u != self.join {
                self.flow[u] -= self.pred_dir[u] as f64 * val;
                u = self.parent[u];
            }
            let mut u = self.target(self.in_arc);
            while u != self.join {
                self.flow[u] += self.pred_dir[u] as f64 * val;
                u = self.parent[u];
            }
        }
        self.state[self.in_arc] = STATE_TREE;
        self.state[self.pred[self.u_out]] = STATE_LOWER;
        self.flow[self.u_out] = 0.0;
    }

    fn update_tree_structure(&mut self) {
        let u_in = self.u_in;
        let v_in = self.v_in;
        let u_out = self.u_out;
        let join = self.join;
        let in_arc = self.in_arc;
        let in_dir: i8 = if u_in == self.source(in_arc) { 1 } else { -1 };
        let old_rev_thread = self.rev_thread[u_out];
        let old_succ_num = self.succ_num[u_out];
        let old_last_succ = self.last_succ[u_out];
        let v_out = self.parent[u_out];

        if u_in == u_out {
            self.parent[u_in] = v_in;
            self.pred[u_in] = in_arc;
            self.pred_dir[u_in] = in_dir;
            self.flow[u_in] = self.delta;
            if self.thread[v_in] != u_out {
                let mut after = self.thread[old_last_succ];
                self.thread[old_rev_thread] = after;
                self.rev_thread[after] = old_rev_thread;
                after = self.thread[v_in];
                self.thread[v_in] = u_out;
                self.rev_thread[u_out] = v_in;
                self.thread[old_last_succ] = after;
                self.rev_thread[after] = old_last_succ;
            }
        } else {
            let thread_continue = if old_rev_thread == v_in {
                self.thread[old_last_succ]
            } else {
                self.thread[v_in]
            };
            let mut stem = u_in;
            let mut par_stem = v_in;
            let mut last = self.last_succ[u_in];
            let mut after = self.thread[last];
            self.thread[v_in] = u_in;
            self.dirty_revs.clear();
            self.dirty_revs.push(v_in);
            while stem != u_out {
                let next_stem = self.parent[stem];
                self.thread[last] = next_stem;
                self.dirty_revs.push(last);

                let before = self.rev_thread[stem];
                self.thread[before] = after;
                self.rev_thread[after] = before;

                self.parent[stem] = par_stem;
                par_stem = stem;
                stem = next_stem;

                last = if self.last_succ[stem] == self.last_succ[par_stem] {
                    self.rev_thread[par_stem]
                } else {
                    self.last_succ[stem]
                };
                after = self.thread[last];
            }
            self.parent[u_out] = par_stem;
            self.thread[last] = thread_continue;
            self.rev_thread[thread_continue] = last;
            self.last_succ[u_out] = last;

            if old_rev_thread != v_in {
                self.thread[old_rev_thread] = after;
                self.rev_thread[after] = old_rev_thread;
            }

            for i in 0..self.dirty_revs.len() {
                let u = self.dirty_revs[i];
                let t = self.thread[u];
                self.rev_thread[t] = u;
            }

            // walk the reversed stem from u_out back to u_in
            let mut tmp_sc = 0usize;
            let tmp_ls = self.last_succ[u_out];
            let mut u = u_out;
            while u != u_in {
                let p = self.parent[u];
                self.pred[u] = self.pred[p];
                self.pred_dir[u] = -self.pred_dir[p];
                self.flow[u] = self.flow[p];
                tmp_sc = tmp_sc + self.succ_num[u] - self.succ_num[p];
                self.succ_num[u] = tmp_sc;
                self.last_succ[p] = tmp_ls;
                u = p;
            }
            self.pred[u_in] = in_arc;
            self.pred_dir[u_in] = in_dir;
            self.flow[u_in] = self.delta;
            self.succ_num[u_in] = old_succ_num;
        }

        let up_limit_out = if self.last_succ[join] == v_in { join } else { NONE };
        let last_succ_out = self.last_succ[u_out];
        let mut u = v_in;
        while u != NONE && self.last_succ[u] == v_in {
            self.last_succ[u] = last_succ_out;
            u = self.parent[u];
        }

        if join != old_rev_thread && v_in != old_rev_thread {
            let mut u = v_out;
            while u != up_limit_out && self.last_succ[u] == old_last_succ {
                self.last_succ[u] = old_rev_thread;
                u = self.parent[u];
            }
        } else if last_succ_out != old_last_succ {
            let mut u = v_out;
            while u != up_limit_out && self.last_succ[u] == old_last_succ {
                self.last_succ[u] = last_succ_out;
                u = self.parent[u];
            }
        }

        let mut u = v_in;
        while u != join {
            self.succ_num[u] += old_succ_num;
            u = self.parent[u];
        }
        let mut u = v_out;
        while u != join {
            self.succ_num[u] -= old_succ_num;
            u = self.parent[u];
        }
    }

    fn update_potential(&mut self) {
        let u_in = self.u_in;
        let sigma = self.pi[self.v_in] - self.pi[u_in] - self.pred_dir[u_in] as i64 * self.cost(self.in_arc);
        let end = self.thread[self.last_succ[u_in]];
        let mut u = u_in;
        while u != end {
            self.pi[u] += sigma;
            u = self.thread[u];
        }
    }

    fn run(mut self) -> Result<Solution> {
        let cap = 50 * (self.arc_num + self.node_num) + 1_000_000;
        let mut iterations = 0;
        while self.find_entering_arc() {
            self.find_join_node();
            if !self.find_leaving_arc() {
                return Err(LabError::Solver("unbounded transport problem".into()));
            }
            self.change_flow();
            self.update_tree_structure();
            self.update_potential();
            iterations += 1;
            if iterations > cap {
                return Err(LabError::Solver(format!("no convergence after {iterations} pivots")));
            }
        }
        let mut flows = Vec::with_capacity(self.node_num);
        for u in 0..self.node_num {
            let e = self.pred[u];
            if e < self.arc_num && self.flow[u] > 0.0 {
                flows.push((e / self.t.m, e % self.t.m, self.flow[u]));
            }
        }
        Ok(Solution { flows })
    }
}
