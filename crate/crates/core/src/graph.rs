//! Graph representation, block layout, diagonal operators and split weights.
//!
//! A [`Graph`] carries the per-edge total-variation penalties. A
//! [`BlockLayout`] maps every maximally monotone block of a split problem to
//! the coordinate indices it acts on: one block per edge (the two endpoint
//! vertices times the channel count), an optional coverage block for
//! coordinates no edge touches, and an optional extra full-support block used
//! by the forward-backward configuration. [`SplitWeights`] assigns each block
//! a strictly positive diagonal weight on its support such that the weights
//! sum to the identity coordinatewise.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Undirected graph with canonical `u < v` edges and per-edge nonnegative
/// total-variation weights.
#[derive(Debug, Clone)]
pub struct Graph<F> {
    num_vertices: usize,
    edges: Vec<(usize, usize)>,
    tv_weights: Vec<F>,
}

impl<F: Real> Graph<F> {
    /// Builds a graph from `(u, v, lambda)` triples. Edges are canonicalized
    /// to `u < v` and sorted; self-loops, duplicates, out-of-range ids and
    /// negative or non-finite weights are rejected.
    pub fn new(num_vertices: usize, edges: impl IntoIterator<Item = (usize, usize, F)>) -> Result<Self> {
        let mut list: Vec<(usize, usize, F)> = Vec::new();
        for (u, v, w) in edges {
            if u == v {
                return Err(Error::invalid(format!("self-loop at vertex {u}")));
            }
            if u >= num_vertices || v >= num_vertices {
                return Err(Error::invalid(format!(
                    "edge ({u}, {v}) out of range for {num_vertices} vertices"
                )));
            }
            if !w.is_finite() || w < F::zero() {
                return Err(Error::invalid(format!("edge ({u}, {v}) has invalid weight {w}")));
            }
            let (a, b) = if u < v { (u, v) } else { (v, u) };
            list.push((a, b, w));
        }
        list.sort_by_key(|&(u, v, _)| (u, v));
        for pair in list.windows(2) {
            if (pair[0].0, pair[0].1) == (pair[1].0, pair[1].1) {
                return Err(Error::invalid(format!(
                    "duplicate edge ({}, {})",
                    pair[0].0, pair[0].1
                )));
            }
        }
        let edges = list.iter().map(|&(u, v, _)| (u, v)).collect();
        let tv_weights = list.iter().map(|&(_, _, w)| w).collect();
        Ok(Graph { num_vertices, edges, tv_weights })
    }

    /// Chain 0-1-2-...-(n-1) with a constant edge weight.
    pub fn chain(num_vertices: usize, lambda: F) -> Self {
        let edges = (0..num_vertices.saturating_sub(1)).map(|i| (i, i + 1, lambda));
        Graph::new(num_vertices, edges).expect("chain edges are valid")
    }

    /// 4-connected grid over `rows x cols` vertices (id = r * cols + c) with a
    /// constant edge weight.
    pub fn grid(rows: usize, cols: usize, lambda: F) -> Self {
        let mut edges = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                let v = r * cols + c;
                if c + 1 < cols {
                    edges.push((v, v + 1, lambda));
                }
                if r + 1 < rows {
                    edges.push((v, v + cols, lambda));
                }
            }
        }
        Graph::new(rows * cols, edges).expect("grid edges are valid")
    }

    pub fn num_vertices(&self) -> usize {
        self.num_vertices
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn tv_weights(&self) -> &[F] {
        &self.tv_weights
    }

    /// Replaces every edge weight by a constant.
    pub fn with_constant_tv_weight(&self, lambda: F) -> Self {
        Graph {
            num_vertices: self.num_vertices,
            edges: self.edges.clone(),
            tv_weights: vec![lambda; self.edges.len()],
        }
    }

    /// Edge indices incident to each vertex, in increasing edge order.
    pub fn incidence(&self) -> Vec<Vec<usize>> {
        let mut inc = vec![Vec::new(); self.num_vertices];
        for (e, &(u, v)) in self.edges.iter().enumerate() {
            inc[u].push(e);
            inc[v].push(e);
        }
        inc
    }

    /// Parses the text format: one `u v lambda` edge per line, `#` comments,
    /// optional `V <n>` header; without a header the vertex count is
    /// `max id + 1`.
    pub fn from_text(reader: impl BufRead, path: &str) -> Result<Self> {
        let mut triples: Vec<(usize, usize, F)> = Vec::new();
        let mut declared: Option<usize> = None;
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parse_err = |msg: &str| Error::Parse {
                path: path.to_string(),
                line: lineno + 1,
                msg: msg.to_string(),
            };
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields[0] == "V" {
                if fields.len() != 2 {
                    return Err(parse_err("header must be 'V <n>'"));
                }
                declared = Some(
                    fields[1]
                        .parse::<usize>()
                        .map_err(|_| parse_err("bad vertex count"))?,
                );
                continue;
            }
            if fields.len() != 3 {
                return Err(parse_err("expected 'u v lambda'"));
            }
            let u = fields[0].parse::<usize>().map_err(|_| parse_err("bad vertex id"))?;
            let v = fields[1].parse::<usize>().map_err(|_| parse_err("bad vertex id"))?;
            let w = fields[2]
                .parse::<f64>()
                .map_err(|_| parse_err("bad edge weight"))?;
            triples.push((u, v, F::cast(w)));
        }
        let num_vertices = declared.unwrap_or_else(|| {
            triples
                .iter()
                .map(|&(u, v, _)| u.max(v) + 1)
                .max()
                .unwrap_or(0)
        });
        Graph::new(num_vertices, triples)
    }

    pub fn to_text(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "V {}", self.num_vertices)?;
        for (e, &(u, v)) in self.edges.iter().enumerate() {
            writeln!(w, "{} {} {}", u, v, self.tv_weights[e])?;
        }
        Ok(())
    }
}

/// Builds the symmetrized-union k-nearest-neighbour graph: edge `{u, v}`
/// exists iff `v` is among `u`'s `k` nearest points or vice versa, Euclidean
/// distance, ties broken toward the lower index. Edge weights start at 1.
pub fn build_knn_graph<F: Real>(points: &[Vec<F>], k: usize) -> Result<Graph<F>> {
    let n = points.len();
    if n < 2 {
        return Err(Error::invalid("need at least 2 points"));
    }
    if k == 0 || k >= n {
        return Err(Error::invalid(format!("k = {k} must satisfy 1 <= k < {n}")));
    }
    let dim = points[0].len();
    for (i, p) in points.iter().enumerate() {
        if p.len() != dim {
            return Err(Error::invalid(format!("point {i} has dimension {} != {dim}", p.len())));
        }
        if p.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid(format!("point {i} has a non-finite coordinate")));
        }
    }
    let sqdist = |a: &[F], b: &[F]| -> F {
        a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
    };
    let mut edges = Vec::new();
    for u in 0..n {
        let mut others: Vec<(F, usize)> = (0..n)
            .filter(|&v| v != u)
            .map(|v| (sqdist(&points[u], &points[v]), v))
            .collect();
        // (distance, index) ordering makes ties deterministic: lower index wins.
        others.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        for &(_, v) in others.iter().take(k) {
            edges.push(if u < v { (u, v) } else { (v, u) });
        }
    }
    edges.sort_unstable();
    edges.dedup();
    Graph::new(n, edges.into_iter().map(|(u, v)| (u, v, F::one())))
}

/// Diagonal operator: either strictly positive on the full space (step
/// operators, curvature bounds) or given by explicit values on a declared
/// support (split weights restricted to their block).
#[derive(Debug, Clone)]
pub struct DiagonalOperator<F> {
    support: Option<Vec<usize>>,
    values: Vec<F>,
}

impl<F: Real> DiagonalOperator<F> {
    /// Full-domain operator; every entry must be finite and > 0.
    pub fn strictly_positive(values: Vec<F>) -> Result<Self> {
        if let Some((j, &v)) = values
            .iter()
            .enumerate()
            .find(|(_, &v)| !v.is_finite() || v <= F::zero())
        {
            return Err(Error::invalid(format!(
                "diagonal entry {j} = {v} is not strictly positive"
            )));
        }
        Ok(DiagonalOperator { support: None, values })
    }

    /// Operator supported on the given sorted, duplicate-free coordinate set;
    /// the value list is aligned with the support. Values must be finite (the
    /// positivity requirement on split weights is checked by
    /// [`validate_split_weights`], not here, so that violations can be built
    /// and reported).
    pub fn on_support(support: Vec<usize>, values: Vec<F>) -> Result<Self> {
        if support.len() != values.len() {
            return Err(Error::invalid("support and value lengths differ"));
        }
        if support.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("support must be sorted and duplicate-free"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite diagonal value"));
        }
        Ok(DiagonalOperator { support: Some(support), values })
    }

    pub fn values(&self) -> &[F] {
        &self.values
    }

    /// `None` means the full domain in order.
    pub fn support(&self) -> Option<&[usize]> {
        self.support.as_deref()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Role of one block in a layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    /// Total-variation block of the given edge index.
    Edge(usize),
    /// Identity-resolvent block covering coordinates no edge touches.
    Coverage,
    /// Extra full-support block holding the otherwise-full-domain functional
    /// in the forward-backward configuration.
    ExtraFull,
}

/// Coordinate-index sets of every block, with their roles.
#[derive(Debug, Clone)]
pub struct BlockLayout {
    dim: usize,
    channels: usize,
    blocks: Vec<Vec<usize>>,
    kinds: Vec<BlockKind>,
}

impl BlockLayout {
    /// Layout for a graph problem with `channels` values per vertex.
    ///
    /// Edges with zero TV weight are skipped: they contribute nothing to the
    /// objective and a strictly positive split weight could not be assigned to
    /// them. Vertices left uncovered get a single shared coverage block so
    /// that the weight condition stays feasible. When `extra_full` is set, a
    /// full-support block is appended last.
    pub fn for_graph<F: Real>(graph: &Graph<F>, channels: usize, extra_full: bool) -> Self {
        assert!(channels >= 1, "channels must be >= 1");
        let dim = graph.num_vertices() * channels;
        let mut blocks = Vec::new();
        let mut kinds = Vec::new();
        let mut covered = vec![false; graph.num_vertices()];
        for (e, &(u, v)) in graph.edges().iter().enumerate() {
            if graph.tv_weights()[e] == F::zero() {
                continue;
            }
            let mut coords = Vec::with_capacity(2 * channels);
            coords.extend((0..channels).map(|k| u * channels + k));
            coords.extend((0..channels).map(|k| v * channels + k));
            blocks.push(coords);
            kinds.push(BlockKind::Edge(e));
            covered[u] = true;
            covered[v] = true;
        }
        let uncovered: Vec<usize> = (0..graph.num_vertices())
            .filter(|&v| !covered[v])
            .flat_map(|v| (0..channels).map(move |k| v * channels + k))
            .collect();
        if !uncovered.is_empty() {
            blocks.push(uncovered);
            kinds.push(BlockKind::Coverage);
        }
        if extra_full {
            blocks.push((0..dim).collect());
            kinds.push(BlockKind::ExtraFull);
        }
        BlockLayout { dim, channels, blocks, kinds }
    }

    /// Layout from explicit coordinate sets (testing and custom problems).
    pub fn from_blocks(dim: usize, blocks: Vec<Vec<usize>>, kinds: Vec<BlockKind>) -> Result<Self> {
        if blocks.len() != kinds.len() {
            return Err(Error::invalid("blocks and kinds lengths differ"));
        }
        for (i, b) in blocks.iter().enumerate() {
            if b.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::invalid(format!("block {i} not sorted/duplicate-free")));
            }
            if b.iter().any(|&j| j >= dim) {
                return Err(Error::invalid(format!("block {i} indexes past dimension {dim}")));
            }
        }
        Ok(BlockLayout { dim, channels: 1, blocks, kinds })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn block(&self, i: usize) -> &[usize] {
        &self.blocks[i]
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    pub fn kind(&self, i: usize) -> BlockKind {
        self.kinds[i]
    }

    /// Every coordinate must be covered by at least one block, otherwise no
    /// split-weight assignment can sum to the identity there.
    pub fn validate_coverage(&self) -> Result<()> {
        let mut covered = vec![false; self.dim];
        for b in &self.blocks {
            for &j in b {
                covered[j] = true;
            }
        }
        match covered.iter().position(|&c| !c) {
            Some(j) => Err(Error::LayoutInfeasible(format!("coordinate {j} is covered by no block"))),
            None => Ok(()),
        }
    }
}

/// One diagonal weight operator per block, stored compactly on its support.
#[derive(Debug, Clone)]
pub struct SplitWeights<F> {
    per_block: Vec<DiagonalOperator<F>>,
}

impl<F: Real> SplitWeights<F> {
    pub fn new(per_block: Vec<DiagonalOperator<F>>) -> Self {
        SplitWeights { per_block }
    }

    pub fn block(&self, i: usize) -> &DiagonalOperator<F> {
        &self.per_block[i]
    }

    pub fn num_blocks(&self) -> usize {
        self.per_block.len()
    }

    /// Compact weight values of block `i`, aligned with its support.
    pub fn values(&self, i: usize) -> &[F] {
        self.per_block[i].values()
    }
}

/// Splits the identity across the blocks of `layout`.
///
/// The extra full-support block, when present, receives the constant
/// `reserve` everywhere. At each vertex the remaining `1 - reserve` is shared
/// by the incident edge blocks proportionally to their TV weight; a vertex
/// whose incident weights are all zero falls back to a uniform `1/deg` share.
/// Coverage blocks absorb the full `1 - reserve` on their coordinates. The
/// per-coordinate sums are rescaled to 1 at the end so the identity condition
/// holds to machine precision.
pub fn compute_weight_heuristic<F: Real>(
    graph: &Graph<F>,
    layout: &BlockLayout,
    reserve: F,
) -> Result<SplitWeights<F>> {
    if reserve < F::zero() || reserve >= F::one() {
        return Err(Error::invalid(format!("reserve {reserve} outside [0, 1)")));
    }
    let has_extra = (0..layout.num_blocks()).any(|i| layout.kind(i) == BlockKind::ExtraFull);
    if reserve > F::zero() && !has_extra {
        return Err(Error::LayoutInfeasible(
            "reserve > 0 requires an extra full-support block".into(),
        ));
    }
    layout.validate_coverage()?;
    let channels = layout.channels();
    let free = if has_extra { F::one() - reserve } else { F::one() };

    // Per-vertex share denominators over the edges the layout kept.
    let mut lambda_sum = vec![F::zero(); graph.num_vertices()];
    let mut degree = vec![0usize; graph.num_vertices()];
    for i in 0..layout.num_blocks() {
        if let BlockKind::Edge(e) = layout.kind(i) {
            let (u, v) = graph.edges()[e];
            lambda_sum[u] += graph.tv_weights()[e];
            lambda_sum[v] += graph.tv_weights()[e];
            degree[u] += 1;
            degree[v] += 1;
        }
    }

    let mut per_block = Vec::with_capacity(layout.num_blocks());
    let mut sums = vec![F::zero(); layout.dim()];
    for i in 0..layout.num_blocks() {
        let coords = layout.block(i).to_vec();
        let values: Vec<F> = match layout.kind(i) {
            BlockKind::Edge(e) => {
                let (u, v) = graph.edges()[e];
                let lam = graph.tv_weights()[e];
                let share = |vert: usize| -> F {
                    if lambda_sum[vert] > F::zero() {
                        free * lam / lambda_sum[vert]
                    } else {
                        free / F::cast(degree[vert] as f64)
                    }
                };
                let (su, sv) = (share(u), share(v));
                (0..channels)
                    .map(|_| su)
                    .chain((0..channels).map(|_| sv))
                    .collect()
            }
            BlockKind::Coverage => vec![free; coords.len()],
            BlockKind::ExtraFull => vec![reserve; coords.len()],
        };
        for (&j, &w) in coords.iter().zip(&values) {
            sums[j] += w;
        }
        per_block.push(DiagonalOperator::on_support(coords, values)?);
    }

    // Rescale so the per-coordinate sum is 1 to the last bit.
    for op in &mut per_block {
        let support = op.support.as_ref().expect("weights carry a support");
        for (slot, &j) in op.values.iter_mut().zip(support) {
            if sums[j] > F::zero() {
                *slot /= sums[j];
            }
        }
    }
    let weights = SplitWeights::new(per_block);
    let report = validate_split_weights(&weights, layout);
    if !report.pass() {
        return Err(Error::LayoutInfeasible(report.describe()));
    }
    Ok(weights)
}

/// Outcome of checking split weights against a layout.
#[derive(Debug, Clone)]
pub struct WeightReport {
    /// Largest `|sum_i W_i - 1|` over coordinates, with the coordinate.
    pub max_sum_deviation: (f64, usize),
    /// `(block, coordinate)` pairs where a weight sits outside its block.
    pub support_violations: Vec<(usize, usize)>,
    /// `(block, coordinate)` pairs where an on-support weight is <= 0, plus
    /// block coordinates missing from the weight support entirely.
    pub nonpositive_entries: Vec<(usize, usize)>,
    sum_tolerance: f64,
}

impl WeightReport {
    pub fn pass(&self) -> bool {
        self.max_sum_deviation.0 < self.sum_tolerance
            && self.support_violations.is_empty()
            && self.nonpositive_entries.is_empty()
    }

    pub fn describe(&self) -> String {
        let mut parts = Vec::new();
        if self.max_sum_deviation.0 >= self.sum_tolerance {
            parts.push(format!(
                "(P2)(iv) weight sums deviate from identity by {:e} at coordinate {}",
                self.max_sum_deviation.0, self.max_sum_deviation.1
            ));
        }
        if let Some(&(b, j)) = self.support_violations.first() {
            parts.push(format!(
                "(P2)(i) {} weight(s) off support, first at block {b} coordinate {j}",
                self.support_violations.len()
            ));
        }
        if let Some(&(b, j)) = self.nonpositive_entries.first() {
            parts.push(format!(
                "(P2)(ii) {} nonpositive on-support weight(s), first at block {b} coordinate {j}",
                self.nonpositive_entries.len()
            ));
        }
        if parts.is_empty() {
            "split weights valid".into()
        } else {
            parts.join("; ")
        }
    }
}

/// Per-coordinate sum deviations and support checks for the identity-splitting
/// condition. Report-only: never errors.
pub fn validate_split_weights<F: Real>(weights: &SplitWeights<F>, layout: &BlockLayout) -> WeightReport {
    let mut sums = vec![F::zero(); layout.dim()];
    let mut support_violations = Vec::new();
    let mut nonpositive_entries = Vec::new();
    let n = weights.num_blocks().min(layout.num_blocks());
    for i in 0..n {
        let op = weights.block(i);
        let block = layout.block(i);
        let support: Vec<usize> = match op.support() {
            Some(s) => s.to_vec(),
            None => (0..op.len()).collect(),
        };
        for (&j, &w) in support.iter().zip(op.values()) {
            if j < layout.dim() {
                sums[j] += w;
            }
            if block.binary_search(&j).is_err() {
                support_violations.push((i, j));
            } else if w <= F::zero() {
                nonpositive_entries.push((i, j));
            }
        }
        // Block coordinates with no weight at all violate strict positivity.
        for &j in block {
            if support.binary_search(&j).is_err() {
                nonpositive_entries.push((i, j));
            }
        }
    }
    let mut max_dev = (0.0f64, 0usize);
    for (j, &s) in sums.iter().enumerate() {
        let dev = (s - F::one()).abs().to_f64().unwrap_or(f64::INFINITY);
        if dev > max_dev.0 {
            max_dev = (dev, j);
        }
    }
    WeightReport {
        max_sum_deviation: max_dev,
        support_violations,
        nonpositive_entries,
        sum_tolerance: 1e-12,
    }
}
