//! Multitask sparse parity.
//!
//! An input is `n_tasks` one-hot control bits followed by `n` uniform task
//! bits. When control bit `i` is hot the label is the parity of the task bits
//! indexed by subset `S_i`. Control bit `i` is active with probability
//! `i^-(alpha+1) / Z` over the finite support `1..=n_tasks`.
//!
//! Indices are zero-based throughout this module: subtask `0` is the most
//! frequent one and subset entries lie in `0..n`.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::stream_rng;
use crate::theory::QuantaDistribution;

const SUBSET_STREAM: u64 = 0x5ab5e7;

/// Problem definition. Reconstructible from `(n_tasks, n, k, alpha, seed)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub n_tasks: usize,
    pub n: usize,
    pub k: usize,
    pub alpha: f64,
    pub seed: u64,
    pub subsets: Vec<Vec<usize>>,
}

impl TaskSpec {
    pub fn new(n_tasks: usize, n: usize, k: usize, alpha: f64, seed: u64) -> Result<Self> {
        build_task_spec(n_tasks, n, k, alpha, seed)
    }

    pub fn input_dim(&self) -> usize {
        self.n_tasks + self.n
    }

    pub fn words_per_row(&self) -> usize {
        self.n.div_ceil(64)
    }

    pub fn distribution(&self) -> Result<QuantaDistribution> {
        QuantaDistribution::finite(self.alpha, self.n_tasks as u64)
    }

    /// Subtask frequencies `p_0 .. p_{n_tasks-1}`.
    pub fn frequencies(&self) -> Vec<f64> {
        self.distribution()
            .and_then(|d| d.probabilities())
            .expect("spec invariants guarantee a valid distribution")
    }
}

pub fn build_task_spec(n_tasks: usize, n: usize, k: usize, alpha: f64, seed: u64) -> Result<TaskSpec> {
    if k > n {
        return Err(Error::InvalidArity { k, n });
    }
    if n_tasks == 0 || k == 0 {
        return Err(Error::Domain("n_tasks and k must be positive".into()));
    }
    // Validates alpha.
    QuantaDistribution::finite(alpha, n_tasks as u64)?;
    let mut rng = stream_rng(seed, SUBSET_STREAM);
    let subsets = (0..n_tasks)
        .map(|_| {
            let mut subset = index::sample(&mut rng, n, k).into_vec();
            subset.sort_unstable();
            subset
        })
        .collect();
    Ok(TaskSpec { n_tasks, n, k, alpha, seed, subsets })
}

/// Parity of `bits[j]` over `j` in `subset`. `bits` is packed little-endian
/// into 64-bit words; `n_bits` bounds the valid indices.
pub fn parity_label(bits: &[u64], n_bits: usize, subset: &[usize]) -> Result<u8> {
    let mut acc = 0u64;
    for &j in subset {
        if j >= n_bits || j / 64 >= bits.len() {
            return Err(Error::Bounds { index: j, len: n_bits });
        }
        acc ^= (bits[j / 64] >> (j % 64)) & 1;
    }
    Ok(acc as u8)
}

/// A batch of packed samples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleBatch {
    pub n_tasks: usize,
    pub n: usize,
    words_per_row: usize,
    subtask_ids: Vec<u32>,
    task_bits: Vec<u64>,
    labels: Vec<u8>,
}

impl SampleBatch {
    pub fn empty(n_tasks: usize, n: usize) -> Self {
        Self {
            n_tasks,
            n,
            words_per_row: n.div_ceil(64),
            subtask_ids: Vec::new(),
            task_bits: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn with_capacity(n_tasks: usize, n: usize, rows: usize) -> Self {
        let mut batch = Self::empty(n_tasks, n);
        batch.subtask_ids.reserve(rows);
        batch.task_bits.reserve(rows * batch.words_per_row);
        batch.labels.reserve(rows);
        batch
    }

    pub fn push(&mut self, subtask: u32, bits: &[u64], label: u8) {
        debug_assert_eq!(bits.len(), self.words_per_row);
        debug_assert!((subtask as usize) < self.n_tasks);
        self.subtask_ids.push(subtask);
        self.task_bits.extend_from_slice(bits);
        self.labels.push(label);
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.n_tasks + self.n
    }

    pub fn words_per_row(&self) -> usize {
        self.words_per_row
    }

    pub fn subtask_ids(&self) -> &[u32] {
        &self.subtask_ids
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn task_bits(&self, row: usize) -> &[u64] {
        &self.task_bits[row * self.words_per_row..(row + 1) * self.words_per_row]
    }

    /// Indices of the inputs equal to 1 in `row`: the control bit first, then
    /// the set task bits (offset by `n_tasks`) in increasing order.
    pub fn active_inputs(&self, row: usize, out: &mut Vec<usize>) {
        out.clear();
        out.push(self.subtask_ids[row] as usize);
        for (w, &word) in self.task_bits(row).iter().enumerate() {
            let mut word = word;
            while word != 0 {
                let bit = word.trailing_zeros() as usize;
                out.push(self.n_tasks + w * 64 + bit);
                word &= word - 1;
            }
        }
    }

    /// The row expanded to a dense 0/1 input vector.
    pub fn dense_row(&self, row: usize) -> Vec<f64> {
        let mut dense = vec![0.0; self.input_dim()];
        let mut active = Vec::new();
        self.active_inputs(row, &mut active);
        for j in active {
            dense[j] = 1.0;
        }
        dense
    }

    /// Full input bit string (control then task bits) packed LSB-first into bytes.
    pub fn packed_row(&self, row: usize) -> Vec<u8> {
        let mut bytes = vec![0u8; self.input_dim().div_ceil(8)];
        let mut active = Vec::new();
        self.active_inputs(row, &mut active);
        for j in active {
            bytes[j / 8] |= 1 << (j % 8);
        }
        bytes
    }

    /// Rows picked by index, in the given order.
    pub fn select(&self, rows: &[usize]) -> SampleBatch {
        let mut out = SampleBatch::with_capacity(self.n_tasks, self.n, rows.len());
        for &r in rows {
            out.push(self.subtask_ids[r], self.task_bits(r), self.labels[r]);
        }
        out
    }

    pub fn clear(&mut self) {
        self.subtask_ids.clear();
        self.task_bits.clear();
        self.labels.clear();
    }

    /// Append row `row` of `other` (same shape).
    pub fn push_row_from(&mut self, other: &SampleBatch, row: usize) {
        debug_assert_eq!(self.words_per_row, other.words_per_row);
        self.push(other.subtask_ids[row], other.task_bits(row), other.labels[row]);
    }

    /// Append the rows of `other` (same shape).
    pub fn extend_from(&mut self, other: &SampleBatch) {
        assert_eq!((self.n_tasks, self.n), (other.n_tasks, other.n));
        self.subtask_ids.extend_from_slice(&other.subtask_ids);
        self.task_bits.extend_from_slice(&other.task_bits);
        self.labels.extend_from_slice(&other.labels);
    }
}

fn random_task_bits<R: RngCore>(rng: &mut R, n: usize, out: &mut [u64]) {
    for (w, word) in out.iter_mut().enumerate() {
        let mut value: u64 = rng.random();
        let remaining = n - w * 64;
        if remaining < 64 {
            value &= (1u64 << remaining) - 1;
        }
        *word = value;
    }
}

/// Sampler for a fixed spec: Zipf subtask ids, uniform task bits.
#[derive(Debug, Clone)]
pub struct ParitySampler<'a> {
    spec: &'a TaskSpec,
    subtask_dist: WeightedIndex<f64>,
}

impl<'a> ParitySampler<'a> {
    pub fn new(spec: &'a TaskSpec) -> Result<Self> {
        let subtask_dist = WeightedIndex::new(spec.frequencies())
            .map_err(|e| Error::Domain(format!("subtask distribution: {e}")))?;
        Ok(Self { spec, subtask_dist })
    }

    pub fn sample_into<R: RngCore>(&self, rng: &mut R, m: usize, out: &mut SampleBatch) {
        let mut bits = vec![0u64; self.spec.words_per_row()];
        for _ in 0..m {
            let subtask = self.subtask_dist.sample(rng);
            random_task_bits(rng, self.spec.n, &mut bits);
            let label = parity_label(&bits, self.spec.n, &self.spec.subsets[subtask])
                .expect("subset indices are below n by construction");
            out.push(subtask as u32, &bits, label);
        }
    }

    /// Batch drawn from the independent stream `stream` of `seed`.
    pub fn draw(&self, m: usize, seed: u64, stream: u64) -> SampleBatch {
        let mut rng = stream_rng(seed, stream);
        let mut batch = SampleBatch::with_capacity(self.spec.n_tasks, self.spec.n, m);
        self.sample_into(&mut rng, m, &mut batch);
        batch
    }
}

/// `m` i.i.d. samples from the task distribution.
pub fn draw_batch(spec: &TaskSpec, m: usize, rng_seed: u64) -> Result<SampleBatch> {
    if m == 0 {
        return Err(Error::Domain("batch size must be >= 1".into()));
    }
    Ok(ParitySampler::new(spec)?.draw(m, rng_seed, 0))
}

/// Exactly `per_task` samples for each subtask, grouped by subtask in order.
pub fn fixed_eval_set(spec: &TaskSpec, per_task: usize, rng_seed: u64) -> Result<SampleBatch> {
    if per_task == 0 {
        return Err(Error::Domain("per_task must be >= 1".into()));
    }
    let mut batch = SampleBatch::with_capacity(spec.n_tasks, spec.n, per_task * spec.n_tasks);
    let mut bits = vec![0u64; spec.words_per_row()];
    for (task, subset) in spec.subsets.iter().enumerate() {
        let mut rng = stream_rng(rng_seed, task as u64);
        for _ in 0..per_task {
            random_task_bits(&mut rng, spec.n, &mut bits);
            let label = parity_label(&bits, spec.n, subset)?;
            batch.push(task as u32, &bits, label);
        }
    }
    Ok(batch)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bits_from_indices(n: usize, ones: &[usize]) -> Vec<u64> {
        let mut bits = vec![0u64; n.div_ceil(64)];
        for &j in ones {
            bits[j / 64] |= 1 << (j % 64);
        }
        bits
    }

    #[test]
    fn spec_shape_and_determinism() {
        let spec = build_task_spec(500, 100, 3, 0.4, 0).unwrap();
        assert_eq!(spec.subsets.len(), 500);
        for s in &spec.subsets {
            assert_eq!(s.len(), 3);
            assert!(s.windows(2).all(|w| w[0] < w[1]));
            assert!(s.iter().all(|&j| j < 100));
        }
        assert_eq!(spec, build_task_spec(500, 100, 3, 0.4, 0).unwrap());
        assert_ne!(spec.subsets, build_task_spec(500, 100, 3, 0.4, 1).unwrap().subsets);
    }

    #[test]
    fn forced_single_subset() {
        let spec = build_task_spec(1, 1, 1, 0.4, 9).unwrap();
        assert_eq!(spec.subsets, vec![vec![0]]);
    }

    #[test]
    fn arity_above_n_is_rejected() {
        assert!(matches!(build_task_spec(3, 2, 3, 0.4, 0), Err(Error::InvalidArity { k: 3, n: 2 })));
    }

    #[test]
    fn parity_examples() {
        // One-based subset {2, 7} from the worked example.
        let subset = [1, 6];
        assert_eq!(parity_label(&bits_from_indices(10, &[1, 6]), 10, &subset).unwrap(), 0);
        assert_eq!(parity_label(&bits_from_indices(10, &[1]), 10, &subset).unwrap(), 1);
        assert_eq!(parity_label(&bits_from_indices(10, &[]), 10, &[0, 3, 9]).unwrap(), 0);
        assert!(matches!(parity_label(&[0], 10, &[10]), Err(Error::Bounds { index: 10, .. })));
    }

    #[test]
    fn parity_across_word_boundary() {
        let n = 130;
        let bits = bits_from_indices(n, &[63, 64, 129]);
        assert_eq!(parity_label(&bits, n, &[63, 129]).unwrap(), 0);
        assert_eq!(parity_label(&bits, n, &[64, 0]).unwrap(), 1);
    }

    #[test]
    fn single_row_is_one_hot() {
        let spec = build_task_spec(20, 30, 3, 0.4, 3).unwrap();
        let batch = draw_batch(&spec, 1, 5).unwrap();
        let dense = batch.dense_row(0);
        assert_eq!(dense[..20].iter().filter(|&&x| x == 1.0).count(), 1);
        assert_eq!(dense[batch.subtask_ids()[0] as usize], 1.0);
    }

    #[test]
    fn arity_one_labels_copy_the_bit() {
        let mut spec = build_task_spec(1, 10, 1, 0.4, 0).unwrap();
        spec.subsets[0] = vec![4];
        let batch = draw_batch(&spec, 200, 1).unwrap();
        for r in 0..batch.len() {
            assert_eq!(batch.labels()[r] as u64, (batch.task_bits(r)[0] >> 4) & 1);
        }
    }

    #[test]
    fn rows_respect_bit_width() {
        let spec = build_task_spec(4, 70, 2, 0.4, 0).unwrap();
        let batch = draw_batch(&spec, 50, 2).unwrap();
        for r in 0..batch.len() {
            assert_eq!(batch.task_bits(r)[1] >> 6, 0);
        }
    }

    #[test]
    fn eval_set_is_stratified() {
        let spec = build_task_spec(3, 10, 2, 0.4, 0).unwrap();
        let one = fixed_eval_set(&spec, 1, 0).unwrap();
        assert_eq!(one.subtask_ids(), &[0, 1, 2]);

        let spec = build_task_spec(12, 40, 3, 0.4, 0).unwrap();
        let batch = fixed_eval_set(&spec, 100, 7).unwrap();
        let mut counts = [0usize; 12];
        for &id in batch.subtask_ids() {
            counts[id as usize] += 1;
        }
        assert!(counts.iter().all(|&c| c == 100));
        for r in 0..batch.len() {
            let subset = &spec.subsets[batch.subtask_ids()[r] as usize];
            let dense = batch.dense_row(r);
            let direct = subset.iter().map(|&j| dense[12 + j] as u32).sum::<u32>() % 2;
            assert_eq!(batch.labels()[r] as u32, direct);
        }
    }

    #[test]
    fn active_inputs_match_dense_row() {
        let spec = build_task_spec(5, 100, 3, 0.4, 0).unwrap();
        let batch = draw_batch(&spec, 20, 11).unwrap();
        let mut active = Vec::new();
        for r in 0..batch.len() {
            batch.active_inputs(r, &mut active);
            let dense = batch.dense_row(r);
            let from_dense: Vec<usize> = (0..dense.len()).filter(|&j| dense[j] == 1.0).collect();
            assert_eq!(active, from_dense);
            let packed = batch.packed_row(r);
            for j in 0..dense.len() {
                assert_eq!((packed[j / 8] >> (j % 8)) & 1 == 1, dense[j] == 1.0);
            }
        }
    }
}
