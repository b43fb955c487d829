use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Real;

use super::Standardizer;

const EULER_GAMMA: f64 = 0.5772156649;

/// Average unsuccessful-search path length in a binary search tree of `m`
/// points: `2(ln(m − 1) + γ) − 2(m − 1)/m` for `m ≥ 2`, zero otherwise.
pub fn average_path_length(m: usize) -> f64 {
    if m <= 1 {
        return 0.0;
    }
    let m = m as f64;
    2.0 * ((m - 1.0).ln() + EULER_GAMMA) - 2.0 * (m - 1.0) / m
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct IforestParams {
    /// `None` selects `ceil(√n)`.
    pub trees: Option<usize>,
    /// `None` selects `min(256, n)`.
    pub subsample: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
enum Node<T> {
    Leaf {
        size: usize,
    },
    Split {
        feature: usize,
        value: T,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
struct Tree<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Tree<T> {
    fn path_length(&self, x: &[T]) -> f64 {
        let mut node = 0;
        let mut depth = 0usize;
        loop {
            match &self.nodes[node] {
                Node::Leaf { size } => return depth as f64 + average_path_length(*size),
                Node::Split {
                    feature,
                    value,
                    left,
                    right,
                } => {
                    node = if x[*feature] < *value { *left } else { *right };
                    depth += 1;
                }
            }
        }
    }

    fn height(&self) -> usize {
        fn walk<T>(nodes: &[Node<T>], at: usize) -> usize {
            match &nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

struct TreeBuilder<'a, T, R: ?Sized> {
    points: &'a Matrix<T>,
    height_cap: usize,
    rng: &'a mut R,
    nodes: Vec<Node<T>>,
}

impl<T: Real, R: Rng + ?Sized> TreeBuilder<'_, T, R> {
    fn build(&mut self, indices: Vec<usize>, depth: usize) -> usize {
        let at = self.nodes.len();
        self.nodes.push(Node::Leaf {
            size: indices.len(),
        });
        if depth >= self.height_cap || indices.len() <= 1 {
            return at;
        }
        let ranges: Vec<(usize, T, T)> = (0..self.points.cols())
            .filter_map(|f| {
                let (lo, hi) =
                    indices
                        .iter()
                        .fold((T::infinity(), T::neg_infinity()), |(lo, hi), &i| {
                            let v = self.points.get(i, f);
                            (lo.min(v), hi.max(v))
                        });
                (lo < hi).then_some((f, lo, hi))
            })
            .collect();
        if ranges.is_empty() {
            return at;
        }
        let (feature, lo, hi) = ranges[self.rng.random_range(0..ranges.len())];
        let u = T::lit(self.rng.random::<f64>());
        let value = lo + (hi - lo) * u;
        let (left, right): (Vec<usize>, Vec<usize>) = indices
            .into_iter()
            .partition(|&i| self.points.get(i, feature) < value);
        let left = self.build(left, depth + 1);
        let right = self.build(right, depth + 1);
        self.nodes[at] = Node::Split {
            feature,
            value,
            left,
            right,
        };
        at
    }
}

/// Isolation Forest with uniform random splits and a height cap of
/// `ceil(log2 ψ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct IforestModel<T> {
    standardizer: Standardizer<T>,
    trees: Vec<Tree<T>>,
    subsample: usize,
    /// Training scores sorted in descending order.
    training_scores: Vec<T>,
}

impl<T: Real> IforestModel<T> {
    pub fn fit<R: Rng + ?Sized>(
        points: &Matrix<T>,
        params: &IforestParams,
        rng: &mut R,
    ) -> Result<Self> {
        let n = points.rows();
        if n < 2 {
            return Err(Error::Fit(format!(
                "isolation forest needs at least 2 points, got {n}"
            )));
        }
        if !points.all_finite() {
            return Err(Error::Fit("non-finite input point".into()));
        }
        let tree_count = params
            .trees
            .unwrap_or_else(|| (n as f64).sqrt().ceil() as usize)
            .max(1);
        let subsample = params.subsample.unwrap_or(256).clamp(2, n);
        let height_cap = (subsample as f64).log2().ceil() as usize;

        let standardizer = Standardizer::fit(points);
        let x = standardizer.transform(points)?;
        let mut trees = Vec::with_capacity(tree_count);
        for _ in 0..tree_count {
            let sample = index::sample(rng, n, subsample).into_vec();
            let mut builder = TreeBuilder {
                points: &x,
                height_cap,
                rng: &mut *rng,
                nodes: Vec::new(),
            };
            builder.build(sample, 0);
            trees.push(Tree {
                nodes: builder.nodes,
            });
        }

        let mut model = Self {
            standardizer,
            trees,
            subsample,
            training_scores: Vec::new(),
        };
        let mut scores: Vec<T> = x.iter_rows().map(|r| model.score_standardized(r)).collect();
        scores.sort_by(|a, b| b.partial_cmp(a).expect("finite scores"));
        model.training_scores = scores;
        Ok(model)
    }

    fn score_standardized(&self, x: &[T]) -> T {
        let mean_path =
            self.trees.iter().map(|t| t.path_length(x)).sum::<f64>() / self.trees.len() as f64;
        T::lit(2f64.powf(-mean_path / average_path_length(self.subsample)))
    }

    /// `2^(−E[h(x)] / c(ψ))`; higher is more anomalous.
    pub fn score(&self, point: &[T]) -> Result<T> {
        self.standardizer.check_dim(point.len())?;
        Ok(self.score_standardized(&self.standardizer.transform_row(point)))
    }

    pub fn score_batch(&self, points: &Matrix<T>) -> Result<Vec<T>> {
        self.standardizer.check_dim(points.cols())?;
        Ok(points
            .iter_rows()
            .map(|r| self.score_standardized(&self.standardizer.transform_row(r)))
            .collect())
    }

    /// Score at or above which a point is an outlier so that a
    /// `contamination` fraction of the training set is flagged (ties may add
    /// more). Infinite when the quota rounds to zero.
    pub fn threshold(&self, contamination: f64) -> T {
        let n = self.training_scores.len();
        let quota = ((contamination.clamp(0.0, 1.0) * n as f64) + 0.5).floor() as usize;
        if quota == 0 {
            T::infinity()
        } else {
            self.training_scores[quota.min(n) - 1]
        }
    }

    pub fn tree_count(&self) -> usize {
        self.trees.len()
    }

    pub fn subsample(&self) -> usize {
        self.subsample
    }

    pub fn max_tree_height(&self) -> usize {
        self.trees.iter().map(Tree::height).max().unwrap_or(0)
    }
}
