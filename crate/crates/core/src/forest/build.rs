use rand::seq::index::sample;
use rand::Rng;

use crate::data::{Dataset, ForestParams};
use crate::km::{self, Obs};
use crate::rng::stream_rng;

use super::split::{best_logrank_split, best_regression_split, Scratch};
use super::tree::{Leaf, Node, Tree};
use super::Task;

/// Training-set context shared by every tree of a forest.
pub(crate) struct Context<'a> {
    pub data: &'a Dataset,
    pub params: &'a ForestParams,
    pub task: Task,
    /// Support of the leaf distribution estimates: distinct responses
    /// (regression) or distinct event times (survival).
    pub grid: &'a [f64],
}

impl Context<'_> {
    fn grid_index(&self, v: f64) -> u32 {
        self.grid.partition_point(|&g| g < v) as u32
    }
}

/// Grows tree `index`; returns the tree and the in-bag multiplicity of
/// every training row.
pub(crate) fn grow_tree(ctx: &Context<'_>, index: usize) -> (Tree, Vec<u32>) {
    let n = ctx.data.n();
    let mut rng = stream_rng(ctx.params.seed, index as u64);
    let mut counts = vec![0u32; n];
    for _ in 0..n {
        counts[rng.random_range(0..n)] += 1;
    }
    let weights: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    let mut rows: Vec<u32> = (0..n as u32).filter(|&r| counts[r as usize] > 0).collect();

    let mut tree = Tree { nodes: vec![Node::Leaf(0)], leaves: Vec::new(), rows: Vec::new(), jumps: Vec::new() };
    let mut scratch = Scratch::default();
    let mut candidates = Vec::with_capacity(ctx.data.p());
    // (node id, start, end) of pending nodes; left children are popped first.
    let mut stack = vec![(0usize, 0usize, rows.len())];
    while let Some((id, start, end)) = stack.pop() {
        let node_rows = &rows[start..end];
        let split = if eligible(ctx, node_rows, &weights) {
            draw_candidates(ctx, node_rows, &mut rng, &mut candidates);
            match ctx.task {
                Task::Regression => best_regression_split(ctx.data, node_rows, &weights, &candidates, &mut scratch),
                Task::Survival => best_logrank_split(
                    ctx.data,
                    node_rows,
                    &weights,
                    &candidates,
                    ctx.params.nodesize as f64,
                    &mut scratch,
                ),
            }
        } else {
            None
        };
        match split {
            Some(s) => {
                let col = ctx.data.column(s.var);
                let mid = partition(&mut rows[start..end], |r| s.rule.goes_left(col[r as usize])) + start;
                debug_assert!(mid > start && mid < end);
                let left = tree.nodes.len();
                tree.nodes.push(Node::Leaf(0));
                tree.nodes.push(Node::Leaf(0));
                tree.nodes[id] = Node::Split { var: s.var as u32, rule: s.rule, left: left as u32, right: left as u32 + 1 };
                stack.push((left + 1, mid, end));
                stack.push((left, start, mid));
            }
            None => {
                let leaf = make_leaf(ctx, &mut tree, &rows[start..end], &counts);
                tree.nodes[id] = Node::Leaf(leaf);
            }
        }
    }
    (tree, counts)
}

fn eligible(ctx: &Context<'_>, rows: &[u32], weights: &[f64]) -> bool {
    if rows.len() < 2 {
        return false;
    }
    match ctx.task {
        Task::Regression => rows.iter().map(|&r| weights[r as usize]).sum::<f64>() >= ctx.params.nodesize as f64,
        Task::Survival => {
            let events: f64 = rows.iter().filter(|&&r| ctx.data.is_event(r as usize)).map(|&r| weights[r as usize]).sum();
            events >= 2.0 * ctx.params.nodesize as f64
        }
    }
}

fn draw_candidates(ctx: &Context<'_>, rows: &[u32], rng: &mut impl Rng, out: &mut Vec<usize>) {
    out.clear();
    let p = ctx.data.p();
    let mtry = ctx.params.mtry;
    if ctx.params.exclude_pure {
        let pool: Vec<usize> = (0..p).filter(|&j| !is_pure(ctx.data.column(j), rows)).collect();
        if pool.len() <= mtry {
            out.extend(pool);
        } else {
            out.extend(sample(rng, pool.len(), mtry).into_iter().map(|k| pool[k]));
        }
    } else {
        out.extend(sample(rng, p, mtry));
    }
    out.sort_unstable();
}

fn is_pure(col: &[f64], rows: &[u32]) -> bool {
    let first = col[rows[0] as usize];
    rows.iter().all(|&r| col[r as usize] == first)
}

/// In-place partition; returns the number of elements satisfying `pred`.
fn partition(rows: &mut [u32], pred: impl Fn(u32) -> bool) -> usize {
    let mut k = 0;
    for i in 0..rows.len() {
        if pred(rows[i]) {
            rows.swap(i, k);
            k += 1;
        }
    }
    k
}

fn make_leaf(ctx: &Context<'_>, tree: &mut Tree, rows: &[u32], counts: &[u32]) -> u32 {
    let y = ctx.data.response();
    let mut sorted: Vec<u32> = rows.to_vec();
    sorted.sort_unstable();
    let row_start = tree.rows.len() as u32;
    tree.rows.extend(sorted.iter().map(|&r| (r, counts[r as usize])));
    let weight: f64 = sorted.iter().map(|&r| counts[r as usize] as f64).sum();
    let mean = sorted.iter().map(|&r| counts[r as usize] as f64 * y[r as usize]).sum::<f64>() / weight;
    let events: f64 = sorted
        .iter()
        .filter(|&&r| ctx.data.is_event(r as usize))
        .map(|&r| counts[r as usize] as f64)
        .sum();

    let jump_start = tree.jumps.len() as u32;
    match ctx.task {
        Task::Regression => {
            let mut jumps: Vec<(u32, f64)> =
                sorted.iter().map(|&r| (ctx.grid_index(y[r as usize]), counts[r as usize] as f64 / weight)).collect();
            jumps.sort_by_key(|j| j.0);
            jumps.dedup_by(|b, a| {
                if a.0 == b.0 {
                    a.1 += b.1;
                    true
                } else {
                    false
                }
            });
            tree.jumps.extend(jumps);
        }
        Task::Survival => {
            let obs: Vec<Obs> = sorted
                .iter()
                .map(|&r| Obs { time: y[r as usize], event: ctx.data.is_event(r as usize), weight: counts[r as usize] as f64 })
                .collect();
            let mut prev = 1.0;
            for (t, s) in km::survival_steps(&obs) {
                tree.jumps.push((ctx.grid_index(t), prev - s));
                prev = s;
            }
        }
    }
    let leaf = Leaf {
        rows: (row_start, tree.rows.len() as u32 - row_start),
        jumps: (jump_start, tree.jumps.len() as u32 - jump_start),
        weight,
        mean,
        events,
    };
    tree.leaves.push(leaf);
    (tree.leaves.len() - 1) as u32
}
