use serde::{Deserialize, Serialize};

/// How a split routes an observation: `value <= threshold` goes left for
/// continuous covariates; a level whose bit is set in `mask` goes left for
/// categorical ones.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitRule {
    Threshold(f64),
    Levels(u64),
}

impl SplitRule {
    #[inline]
    pub fn goes_left(&self, v: f64) -> bool {
        match *self {
            SplitRule::Threshold(t) => v <= t,
            SplitRule::Levels(mask) => {
                let level = v as u64;
                level < 64 && (mask >> level) & 1 == 1
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Node {
    Split { var: u32, rule: SplitRule, left: u32, right: u32 },
    Leaf(u32),
}

/// Terminal node payload. `rows` and `jumps` index into the owning tree's
/// flat buffers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Leaf {
    pub rows: (u32, u32),
    pub jumps: (u32, u32),
    /// Total in-bag multiplicity.
    pub weight: f64,
    /// Weighted mean response.
    pub mean: f64,
    /// Weighted event count (equals `weight` for regression trees).
    pub events: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub(crate) nodes: Vec<Node>,
    pub(crate) leaves: Vec<Leaf>,
    /// `(training row, in-bag multiplicity)` per leaf, concatenated.
    pub(crate) rows: Vec<(u32, u32)>,
    /// `(grid index, probability mass)` of each leaf's distribution estimate.
    pub(crate) jumps: Vec<(u32, f64)>,
}

impl Tree {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn n_leaves(&self) -> usize {
        self.leaves.len()
    }

    pub fn leaf(&self, id: usize) -> &Leaf {
        &self.leaves[id]
    }

    pub fn leaf_rows(&self, id: usize) -> &[(u32, u32)] {
        let (s, l) = self.leaves[id].rows;
        &self.rows[s as usize..(s + l) as usize]
    }

    pub fn leaf_jumps(&self, id: usize) -> &[(u32, f64)] {
        let (s, l) = self.leaves[id].jumps;
        &self.jumps[s as usize..(s + l) as usize]
    }

    /// Terminal node reached by a point whose covariate `j` is `x(j)`.
    #[inline]
    pub fn find_leaf(&self, x: impl Fn(usize) -> f64) -> usize {
        let mut id = 0usize;
        loop {
            match &self.nodes[id] {
                Node::Leaf(l) => return *l as usize,
                Node::Split { var, rule, left, right } => {
                    id = if rule.goes_left(x(*var as usize)) { *left as usize } else { *right as usize };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], id: usize) -> usize {
            match &nodes[id] {
                Node::Leaf(_) => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, *left as usize).max(go(nodes, *right as usize)),
            }
        }
        go(&self.nodes, 0)
    }

    /// Parent node id of every node (`None` for the root).
    pub fn parents(&self) -> Vec<Option<usize>> {
        let mut parent = vec![None; self.nodes.len()];
        for (id, n) in self.nodes.iter().enumerate() {
            if let Node::Split { left, right, .. } = n {
                parent[*left as usize] = Some(id);
                parent[*right as usize] = Some(id);
            }
        }
        parent
    }

    /// Structural checks used when decoding untrusted input. Children always
    /// carry larger ids than their parent, so traversal terminates.
    pub(crate) fn validate(&self, p: usize, n: usize, grid_len: usize, kinds_categorical: &[bool]) -> Result<(), String> {
        if self.nodes.is_empty() {
            return Err("tree without nodes".into());
        }
        let mut seen_leaf = vec![false; self.leaves.len()];
        let mut referenced = vec![false; self.nodes.len()];
        for (id, node) in self.nodes.iter().enumerate() {
            match node {
                Node::Split { var, rule, left, right } => {
                    let (v, l, r) = (*var as usize, *left as usize, *right as usize);
                    if v >= p {
                        return Err(format!("node {id}: covariate {v} out of range"));
                    }
                    if l <= id || r <= id || l >= self.nodes.len() || r >= self.nodes.len() || l == r {
                        return Err(format!("node {id}: bad child links"));
                    }
                    if referenced[l] || referenced[r] {
                        return Err(format!("node {id}: child referenced twice"));
                    }
                    referenced[l] = true;
                    referenced[r] = true;
                    match rule {
                        SplitRule::Threshold(t) if !t.is_finite() || kinds_categorical[v] => {
                            return Err(format!("node {id}: bad threshold rule"))
                        }
                        SplitRule::Levels(_) if !kinds_categorical[v] => {
                            return Err(format!("node {id}: level rule on continuous covariate"))
                        }
                        _ => {}
                    }
                }
                Node::Leaf(l) => {
                    let l = *l as usize;
                    if l >= self.leaves.len() || seen_leaf[l] {
                        return Err(format!("node {id}: bad leaf index"));
                    }
                    seen_leaf[l] = true;
                }
            }
        }
        if seen_leaf.iter().any(|s| !s) {
            return Err("unreferenced leaf".into());
        }
        for leaf in &self.leaves {
            let (rs, rl) = (leaf.rows.0 as usize, leaf.rows.1 as usize);
            let (js, jl) = (leaf.jumps.0 as usize, leaf.jumps.1 as usize);
            if rs.checked_add(rl).is_none_or(|e| e > self.rows.len()) {
                return Err("leaf row range out of bounds".into());
            }
            if js.checked_add(jl).is_none_or(|e| e > self.jumps.len()) {
                return Err("leaf jump range out of bounds".into());
            }
            if !leaf.weight.is_finite() || !leaf.mean.is_finite() || !leaf.events.is_finite() {
                return Err("non-finite leaf summary".into());
            }
        }
        if self.rows.iter().any(|&(r, _)| r as usize >= n) {
            return Err("leaf row index out of range".into());
        }
        if self.jumps.iter().any(|&(g, m)| g as usize >= grid_len || !m.is_finite() || m < 0.0) {
            return Err("bad leaf jump".into());
        }
        Ok(())
    }
}
