//! Balanced binary word tree for the hierarchical decomposition of
//! `p(v_i = w | v_<i)` into a product of left/right logistic decisions.
//!
//! The tree is complete and stored implicitly in heap order: internal nodes
//! are `0..Q-1` (so `T = Q - 1`), node `i` has children `2i+1` (left, bit 0)
//! and `2i+2` (right, bit 1), and leaf slots occupy heap positions
//! `Q-1..2Q-1`. Words are assigned to leaf slots by a seeded permutation.

use ndarray::{ArrayView1, ArrayView2, ArrayViewMut2};
use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::math::{dot, log_sigmoid, sigmoid};
use crate::rng;

/// Deepest path we ever materialize on the stack (Q up to 2^63).
const MAX_DEPTH: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordTree {
    n_leaves: usize,
    /// `None` for the identity assignment.
    seed: Option<u64>,
    /// Heap position of each word's leaf.
    leaf_of_word: Vec<usize>,
}

/// Root-to-leaf node indices `l(w)` and bits `π(w)` of one word.
#[derive(Clone, Copy)]
pub struct TreePath {
    nodes: [usize; MAX_DEPTH],
    bits: [bool; MAX_DEPTH],
    len: usize,
}

impl TreePath {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn nodes(&self) -> &[usize] {
        &self.nodes[..self.len]
    }

    /// `true` means the path goes to the right child.
    pub fn bits(&self) -> &[bool] {
        &self.bits[..self.len]
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, bool)> + '_ {
        self.nodes().iter().copied().zip(self.bits().iter().copied())
    }
}

impl std::fmt::Debug for TreePath {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TreePath")
            .field("nodes", &self.nodes())
            .field("bits", &self.bits())
            .finish()
    }
}

impl WordTree {
    /// Complete tree over `n_leaves` words with a leaf permutation drawn from
    /// the dedicated tree stream of `seed`.
    pub fn build(n_leaves: usize, seed: u64) -> Result<Self> {
        let mut tree = Self::unshuffled(n_leaves)?;
        tree.seed = Some(seed);
        let mut rng = rng::stream(seed, rng::TREE, &[]);
        tree.leaf_of_word.shuffle(&mut rng);
        Ok(tree)
    }

    /// Identity word-to-leaf assignment (word `w` in slot `w`).
    pub fn unshuffled(n_leaves: usize) -> Result<Self> {
        if n_leaves == 0 {
            return Err(Error::Config("word tree needs at least one leaf".into()));
        }
        Ok(Self {
            n_leaves,
            seed: None,
            leaf_of_word: (n_leaves - 1..2 * n_leaves - 1).collect(),
        })
    }

    pub fn n_leaves(&self) -> usize {
        self.n_leaves
    }

    /// Number of internal nodes T.
    pub fn n_internal(&self) -> usize {
        self.n_leaves - 1
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    /// `⌈log₂ Q⌉`, the maximum path length of a complete tree.
    pub fn max_depth(&self) -> usize {
        (usize::BITS - (self.n_leaves - 1).leading_zeros()) as usize
    }

    pub fn path(&self, word: usize) -> TreePath {
        let mut nodes = [0usize; MAX_DEPTH];
        let mut bits = [false; MAX_DEPTH];
        let mut len = 0;
        let mut pos = self.leaf_of_word[word];
        while pos > 0 {
            let parent = (pos - 1) / 2;
            nodes[len] = parent;
            bits[len] = pos % 2 == 0;
            len += 1;
            pos = parent;
        }
        nodes[..len].reverse();
        bits[..len].reverse();
        TreePath { nodes, bits, len }
    }

    fn check(&self, h: usize, word: usize, v: &ArrayView2<f64>, b: &ArrayView1<f64>) -> Result<()> {
        if word >= self.n_leaves {
            return Err(Error::Data(format!(
                "word {word} outside tree of {} leaves",
                self.n_leaves
            )));
        }
        Error::check_dim("tree weight rows", self.n_internal(), v.nrows())?;
        Error::check_dim("tree weight columns", h, v.ncols())?;
        Error::check_dim("tree biases", self.n_internal(), b.len())
    }

    /// `log p(word | h)` as the sum of the log-probabilities of the observed
    /// left/right decisions along the word's path.
    pub fn word_log_prob(
        &self,
        h: ArrayView1<f64>,
        word: usize,
        v: ArrayView2<f64>,
        b: ArrayView1<f64>,
    ) -> Result<f64> {
        self.check(h.len(), word, &v, &b)?;
        Ok(self.word_log_prob_unchecked(h, word, v, b))
    }

    pub(crate) fn word_log_prob_unchecked(
        &self,
        h: ArrayView1<f64>,
        word: usize,
        v: ArrayView2<f64>,
        b: ArrayView1<f64>,
    ) -> f64 {
        let path = self.path(word);
        path.iter()
            .map(|(node, right)| {
                let a = b[node] + dot(v.row(node), h);
                log_sigmoid(if right { a } else { -a })
            })
            .sum()
    }

    /// Adds the gradients of `-scale * log p(word | h)` into the supplied
    /// accumulators and returns `log p(word | h)`.
    pub(crate) fn accumulate_gradients(
        &self,
        h: ArrayView1<f64>,
        word: usize,
        v: ArrayView2<f64>,
        b: ArrayView1<f64>,
        scale: f64,
        mut dv: ArrayViewMut2<f64>,
        db: &mut [f64],
        dh: &mut [f64],
    ) -> f64 {
        let path = self.path(word);
        let mut logp = 0.0;
        for (node, right) in path.iter() {
            let a = b[node] + dot(v.row(node), h);
            logp += log_sigmoid(if right { a } else { -a });
            let target = if right { 1.0 } else { 0.0 };
            let dt = scale * (sigmoid(a) - target);
            db[node] += dt;
            let vrow = v.row(node);
            for ((g, &hk), (dhk, &vk)) in dv
                .row_mut(node)
                .iter_mut()
                .zip(h.iter())
                .zip(dh.iter_mut().zip(vrow.iter()))
            {
                *g += dt * hk;
                *dhk += dt * vk;
            }
        }
        logp
    }

    /// Gradients of `-scale * log p(word | h)` restricted to the path nodes.
    pub fn tree_gradients(
        &self,
        h: ArrayView1<f64>,
        word: usize,
        v: ArrayView2<f64>,
        b: ArrayView1<f64>,
        scale: f64,
    ) -> Result<TreeGradients> {
        self.check(h.len(), word, &v, &b)?;
        let path = self.path(word);
        let mut out = TreeGradients {
            nodes: path.nodes().to_vec(),
            d_rows: Vec::with_capacity(path.len()),
            d_bias: Vec::with_capacity(path.len()),
            d_hidden: vec![0.0; h.len()],
        };
        for (node, right) in path.iter() {
            let a = b[node] + dot(v.row(node), h);
            let dt = scale * (sigmoid(a) - if right { 1.0 } else { 0.0 });
            out.d_bias.push(dt);
            out.d_rows.push(h.iter().map(|&hk| dt * hk).collect());
            for (dhk, &vk) in out.d_hidden.iter_mut().zip(v.row(node).iter()) {
                *dhk += dt * vk;
            }
        }
        Ok(out)
    }
}

/// Sparse gradient of one tree conditional: only the path rows are touched.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeGradients {
    pub nodes: Vec<usize>,
    pub d_rows: Vec<Vec<f64>>,
    pub d_bias: Vec<f64>,
    pub d_hidden: Vec<f64>,
}
