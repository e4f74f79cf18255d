//! Per-instant graph encoding of the swarm: communication adjacency, the
//! six-column node feature matrix, propagation normalization and the frozen
//! standardization constants.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::jamfield::JammerField;
use crate::linalg::Matrix;
use crate::num::Scalar;
use crate::swarm::UavState;

/// Node feature width: `x, y, v_x, v_y, P, dP/dt`.
pub const FEATURES: usize = 6;
/// Regression target width: `x_j, y_j, A`.
pub const LABELS: usize = 3;

pub type FeatureRow<T> = [T; FEATURES];

/// Binary adjacency plus raw node features for one instant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphSnapshot<T> {
    pub adjacency: Vec<Vec<u8>>,
    pub features: Vec<FeatureRow<T>>,
}

/// Jammer parameters the network regresses.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Label<T> {
    pub xj: T,
    pub yj: T,
    pub a: T,
}

impl<T: Scalar> Label<T> {
    pub fn from_array([xj, yj, a]: [T; LABELS]) -> Self {
        Label { xj, yj, a }
    }

    pub fn to_array(self) -> [T; LABELS] {
        [self.xj, self.yj, self.a]
    }

    pub fn position(&self) -> Vec2<T> {
        Vec2::new(self.xj, self.yj)
    }
}

impl<T: Scalar> GraphSnapshot<T> {
    /// Encodes a swarm against the true field with communication range `d`.
    pub fn capture(swarm: &[UavState<T>], field: &JammerField<T>, d: T) -> Result<Self> {
        let positions: Vec<_> = swarm.iter().map(|u| u.pos).collect();
        let disrupted: Vec<_> = swarm.iter().map(|u| u.disrupted).collect();
        Ok(GraphSnapshot {
            adjacency: build_adjacency(&positions, &disrupted, d),
            features: build_features(swarm, field)?,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.features.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.features.len();
        if self.adjacency.len() != n || self.adjacency.iter().any(|r| r.len() != n) {
            return Err(Error::Shape(format!("adjacency is not {n}x{n}")));
        }
        for i in 0..n {
            if self.adjacency[i][i] != 0 {
                return Err(Error::Shape("adjacency diagonal must be zero".into()));
            }
            for j in 0..n {
                let a = self.adjacency[i][j];
                if a > 1 || a != self.adjacency[j][i] {
                    return Err(Error::Shape("adjacency must be symmetric and binary".into()));
                }
            }
        }
        if self.features.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::Domain("non-finite feature".into()));
        }
        Ok(())
    }

    /// Edge list `(i, j)` with `i < j`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let n = self.adjacency.len();
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if self.adjacency[i][j] == 1 {
                    edges.push((i, j));
                }
            }
        }
        edges
    }

    pub fn cast<U: Scalar>(&self) -> GraphSnapshot<U> {
        GraphSnapshot {
            adjacency: self.adjacency.clone(),
            features: self.features.iter().map(|r| r.map(|x| U::lit(x.to_f64_lossy()))).collect(),
        }
    }

    /// Relabels nodes so that new node `i` is old node `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        GraphSnapshot {
            adjacency: perm.iter().map(|&pi| perm.iter().map(|&pj| self.adjacency[pi][pj]).collect()).collect(),
            features: perm.iter().map(|&p| self.features[p]).collect(),
        }
    }
}

/// `A_ij = 1` iff `i != j`, both UAVs operational and strictly closer than `d`.
pub fn build_adjacency<T: Scalar>(positions: &[Vec2<T>], disrupted: &[bool], d: T) -> Vec<Vec<u8>> {
    let n = positions.len();
    let mut adj = vec![vec![0u8; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let live = !disrupted.get(i).copied().unwrap_or(false) && !disrupted.get(j).copied().unwrap_or(false);
            if live && positions[i].distance(positions[j]) < d {
                adj[i][j] = 1;
                adj[j][i] = 1;
            }
        }
    }
    adj
}

/// Rows `(x, y, v_x, v_y, P, dP/dt)`. Frozen UAVs report `dP/dt = 0`.
pub fn build_features<T: Scalar>(swarm: &[UavState<T>], field: &JammerField<T>) -> Result<Vec<FeatureRow<T>>> {
    swarm
        .iter()
        .map(|u| {
            let p = field.probability(u.pos)?;
            let rate = if u.disrupted { T::zero() } else { field.probability_rate(u.pos, u.vel)? };
            Ok([u.pos.x, u.pos.y, u.vel.x, u.vel.y, p, rate])
        })
        .collect()
}

/// `D^{-1/2} (A + I) D^{-1/2}` with `D` the degree matrix of `A + I`.
pub fn normalize_adjacency<T: Scalar>(adjacency: &[Vec<u8>]) -> Matrix<T> {
    let n = adjacency.len();
    let inv_sqrt_deg: Vec<T> = adjacency
        .iter()
        .map(|row| {
            let deg = 1 + row.iter().map(|&a| a as usize).sum::<usize>();
            T::one() / T::lit(deg as f64).sqrt()
        })
        .collect();
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i == j || adjacency[i][j] == 1 {
                out[(i, j)] = inv_sqrt_deg[i] * inv_sqrt_deg[j];
            }
        }
    }
    out
}

/// Smallest probability kept distinct under [`FeatureTransform::LogProbability`].
pub const LOG_PROBABILITY_FLOOR: f64 = 1e-12;

/// Fixed elementwise map applied to feature rows before the affine step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureTransform {
    #[default]
    Identity,
    /// Replaces `P` with `ln max(P, floor)` and `dP/dt` with `(dP/dt) / P`,
    /// which is `ln(A)` times the radial speed. Far-field probabilities span
    /// many decades and are indistinguishable on a linear scale.
    LogProbability,
}

impl FeatureTransform {
    pub fn apply<T: Scalar>(self, row: &FeatureRow<T>) -> FeatureRow<T> {
        match self {
            FeatureTransform::Identity => *row,
            FeatureTransform::LogProbability => {
                let mut out = *row;
                let p = row[4];
                out[4] = p.max(T::lit(LOG_PROBABILITY_FLOOR)).ln();
                out[5] = if p > T::zero() { row[5] / p } else { T::zero() };
                out
            }
        }
    }

    pub fn invert<T: Scalar>(self, row: &FeatureRow<T>) -> FeatureRow<T> {
        match self {
            FeatureTransform::Identity => *row,
            FeatureTransform::LogProbability => {
                let mut out = *row;
                out[4] = row[4].exp();
                out[5] = row[5] * out[4];
                out
            }
        }
    }
}

/// Per-column affine standardization for features and labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer<T> {
    #[serde(default)]
    pub transform: FeatureTransform,
    pub feature_shift: [T; FEATURES],
    pub feature_scale: [T; FEATURES],
    pub label_shift: [T; LABELS],
    pub label_scale: [T; LABELS],
}

impl<T: Scalar> Normalizer<T> {
    pub fn new(
        feature_shift: [T; FEATURES],
        feature_scale: [T; FEATURES],
        label_shift: [T; LABELS],
        label_scale: [T; LABELS],
    ) -> Result<Self> {
        let n = Normalizer { transform: FeatureTransform::Identity, feature_shift, feature_scale, label_shift, label_scale };
        n.validate()?;
        Ok(n)
    }

    pub fn identity() -> Self {
        Normalizer {
            transform: FeatureTransform::Identity,
            feature_shift: [T::zero(); FEATURES],
            feature_scale: [T::one(); FEATURES],
            label_shift: [T::zero(); LABELS],
            label_scale: [T::one(); LABELS],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let scales_ok = self.feature_scale.iter().chain(&self.label_scale).all(|&s| s > T::zero() && s.is_finite());
        let shifts_ok = self.feature_shift.iter().chain(&self.label_shift).all(|s| s.is_finite());
        if !scales_ok || !shifts_ok {
            return Err(Error::Domain("normalizer scales must be positive and finite".into()));
        }
        Ok(())
    }

    /// Column means and population standard deviations over all node rows
    /// (features, after `transform`) and all labels. Constant columns get
    /// scale 1.
    pub fn fit<'a>(
        transform: FeatureTransform,
        feature_rows: impl Iterator<Item = &'a FeatureRow<T>> + Clone,
        labels: impl Iterator<Item = &'a Label<T>> + Clone,
    ) -> Result<Self> {
        let (feature_shift, feature_scale) = column_stats(feature_rows.map(|r| transform.apply(r)))?;
        let (label_shift, label_scale) = column_stats(labels.map(|l| l.to_array()))?;
        let mut n = Normalizer::new(feature_shift, feature_scale, label_shift, label_scale)?;
        n.transform = transform;
        Ok(n)
    }

    pub fn standardize_row(&self, row: &FeatureRow<T>) -> FeatureRow<T> {
        let row = self.transform.apply(row);
        std::array::from_fn(|c| (row[c] - self.feature_shift[c]) / self.feature_scale[c])
    }

    pub fn standardize(&self, snapshot: &GraphSnapshot<T>) -> GraphSnapshot<T> {
        GraphSnapshot {
            adjacency: snapshot.adjacency.clone(),
            features: snapshot.features.iter().map(|r| self.standardize_row(r)).collect(),
        }
    }

    pub fn destandardize_row(&self, row: &FeatureRow<T>) -> FeatureRow<T> {
        let row = std::array::from_fn(|c| row[c] * self.feature_scale[c] + self.feature_shift[c]);
        self.transform.invert(&row)
    }

    pub fn standardize_label(&self, label: &Label<T>) -> [T; LABELS] {
        let v = label.to_array();
        std::array::from_fn(|c| (v[c] - self.label_shift[c]) / self.label_scale[c])
    }

    pub fn destandardize_label(&self, v: &[T; LABELS]) -> Label<T> {
        Label::from_array(std::array::from_fn(|c| v[c] * self.label_scale[c] + self.label_shift[c]))
    }
}

fn column_stats<T: Scalar, const W: usize>(rows: impl Iterator<Item = [T; W]> + Clone) -> Result<([T; W], [T; W])> {
    let count = rows.clone().count();
    if count == 0 {
        return Err(Error::EmptyDataset);
    }
    let n = T::lit(count as f64);
    let mut mean = [T::zero(); W];
    for r in rows.clone() {
        for c in 0..W {
            mean[c] = mean[c] + r[c];
        }
    }
    mean.iter_mut().for_each(|m| *m = *m / n);
    let mut var = [T::zero(); W];
    for r in rows {
        for c in 0..W {
            let d = r[c] - mean[c];
            var[c] = var[c] + d * d;
        }
    }
    let scale = var.map(|v| {
        let s = (v / n).sqrt();
        if s > T::zero() && s.is_finite() {
            s
        } else {
            T::one()
        }
    });
    Ok((mean, scale))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pts(p: &[(f64, f64)]) -> Vec<Vec2<f64>> {
        p.iter().map(|&(x, y)| Vec2::new(x, y)).collect()
    }

    #[test]
    fn adjacency_examples() {
        let a = build_adjacency(&pts(&[(0.0, 0.0), (19.9, 0.0)]), &[false, false], 20.0);
        assert_eq!(a, vec![vec![0, 1], vec![1, 0]]);
        let a = build_adjacency(&pts(&[(0.0, 0.0), (20.0, 0.0)]), &[false, false], 20.0);
        assert_eq!(a, vec![vec![0, 0], vec![0, 0]]);
        let three = pts(&[(0.0, 0.0), (0.0, 15.0), (0.0, 45.0)]);
        let a = build_adjacency(&three, &[false; 3], 20.0);
        let snap = GraphSnapshot { adjacency: a, features: vec![[0.0; 6]; 3] };
        assert_eq!(snap.edges(), vec![(0, 1)]);
        let a = build_adjacency(&three, &[true, false, false], 20.0);
        assert!(a.iter().flatten().all(|&x| x == 0));
    }

    #[test]
    fn feature_examples() {
        let field = JammerField::new(Vec2::zero(), 1.0, 0.9).unwrap();
        let uav = UavState::new(0, Vec2::new(10.0, 0.0), Vec2::new(2.0, 0.0));
        let row = build_features(&[uav], &field).unwrap()[0];
        assert_eq!(&row[..4], &[10.0, 0.0, 2.0, 0.0]);
        assert_relative_eq!(row[4], 0.348_678_440_1, max_relative = 1e-13);
        assert_relative_eq!(row[5], -0.073_473_880_495_405, max_relative = 1e-9);

        let still: Vec<_> = (0..4).map(|i| UavState::new(i, Vec2::new(5.0 + i as f64, 3.0), Vec2::zero())).collect();
        assert!(build_features(&still, &field).unwrap().iter().all(|r| r[5] == 0.0));

        let field = JammerField::new(Vec2::new(50.0, 50.0), 1.0, 0.9).unwrap();
        let a = UavState::new(0, Vec2::new(60.0, 45.0), Vec2::new(1.0, 2.0));
        let b = UavState::new(1, Vec2::new(40.0, 55.0), Vec2::new(-1.0, -2.0));
        let rows = build_features(&[a, b], &field).unwrap();
        assert_eq!(rows[0][4], rows[1][4]);
        assert_eq!(rows[0][0] - 50.0, -(rows[1][0] - 50.0));
        assert_eq!(rows[0][2], -rows[1][2]);
        assert_relative_eq!(rows[0][5], rows[1][5], max_relative = 1e-14);
    }

    #[test]
    fn normalized_adjacency_examples() {
        assert_eq!(normalize_adjacency::<f64>(&[vec![0]]).to_rows(), vec![vec![1.0]]);
        let full = normalize_adjacency::<f64>(&[vec![0, 1], vec![1, 0]]);
        for x in full.as_slice() {
            assert_relative_eq!(*x, 0.5, max_relative = 1e-15);
        }
        assert_eq!(normalize_adjacency::<f64>(&[vec![0, 0], vec![0, 0]]), Matrix::identity(2));
    }

    #[test]
    fn standardization_examples() {
        let snap = GraphSnapshot { adjacency: vec![vec![0]], features: vec![[1.0, 2.0, 3.0, 4.0, 0.5, -0.1]] };
        assert_eq!(Normalizer::identity().standardize(&snap), snap);
        let n = Normalizer::new([1.0, 2.0, 0.0, 0.0, 0.0, 0.0], [2.0; 6], [0.0; 3], [1.0; 3]).unwrap();
        let s = n.standardize(&snap);
        assert_eq!(s.features[0][0], 0.0);
        assert_eq!(s.features[0][1], 0.0);
        assert!(Normalizer::new([0.0; 6], [1.0, 1.0, 0.0, 1.0, 1.0, 1.0], [0.0; 3], [1.0; 3]).is_err());
    }

    #[test]
    fn fitted_normalizer_centers_columns() {
        let rows = [[1.0, 10.0, 0.0, 0.0, 0.1, 0.0], [3.0, 30.0, 0.0, 0.0, 0.3, 0.0]];
        let labels = [Label { xj: 0.0, yj: 0.0, a: 0.9 }, Label { xj: 10.0, yj: 2.0, a: 0.9 }];
        let n = Normalizer::fit(FeatureTransform::Identity, rows.iter(), labels.iter()).unwrap();
        assert_eq!(n.feature_shift[0], 2.0);
        assert_eq!(n.feature_scale[0], 1.0);
        assert_eq!(n.feature_scale[1], 10.0);
        // constant columns fall back to unit scale
        assert_eq!(n.feature_scale[2], 1.0);
        assert_eq!(n.label_scale[2], 1.0);
        assert!(Normalizer::fit(FeatureTransform::Identity, [].iter(), labels.iter()).is_err());
    }

    #[test]
    fn log_transform_maps_probability_columns() {
        let row = [1.0, 2.0, 3.0, 4.0, 0.25, -0.05];
        let t = FeatureTransform::LogProbability.apply(&row);
        assert_eq!(&t[..4], &row[..4]);
        assert_relative_eq!(t[4], 0.25f64.ln(), max_relative = 1e-15);
        assert_relative_eq!(t[5], -0.2, max_relative = 1e-15);
        let back = FeatureTransform::LogProbability.invert(&t);
        assert_relative_eq!(back[4], 0.25, max_relative = 1e-15);
        assert_relative_eq!(back[5], -0.05, max_relative = 1e-15);
        // underflowed probabilities are floored rather than sent to -inf
        let far = FeatureTransform::LogProbability.apply(&[0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(far[4], LOG_PROBABILITY_FLOOR.ln());
        assert_eq!(far[5], 0.0);
    }

    #[test]
    fn fit_uses_transformed_columns() {
        let rows = [[0.0, 0.0, 0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 0.0, (-2.0f64).exp(), 0.0]];
        let labels = [Label { xj: 0.0, yj: 0.0, a: 0.9 }];
        let n = Normalizer::fit(FeatureTransform::LogProbability, rows.iter(), labels.iter()).unwrap();
        assert_relative_eq!(n.feature_shift[4], -1.0, max_relative = 1e-15);
        assert_relative_eq!(n.feature_scale[4], 1.0, max_relative = 1e-15);
        let z = n.standardize_row(&rows[1]);
        assert_relative_eq!(z[4], -1.0, max_relative = 1e-15);
        assert_relative_eq!(n.destandardize_row(&z)[4], rows[1][4], max_relative = 1e-14);
    }

    #[test]
    fn label_roundtrip_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let n: Normalizer<f64> = Normalizer::new(
                [0.0; 6],
                [1.0; 6],
                [rng.gen_range(-100.0..100.0), rng.gen_range(-100.0..100.0), rng.gen_range(0.0..1.0)],
                [rng.gen_range(0.1..50.0), rng.gen_range(0.1..50.0), rng.gen_range(0.01..1.0)],
            )
            .unwrap();
            let l: Label<f64> = Label { xj: rng.gen_range(0.0..200.0), yj: rng.gen_range(0.0..200.0), a: rng.gen_range(0.8..0.99) };
            let back = n.destandardize_label(&n.standardize_label(&l));
            for (x, y) in back.to_array().iter().zip(l.to_array()) {
                assert!((x - y).abs() <= 1e-12 * y.abs().max(1.0));
            }
        }
    }

    fn random_adjacency(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec<u8>> {
        let p: Vec<Vec2<f64>> =
            (0..n).map(|_| Vec2::new(rng.gen_range(0.0..60.0), rng.gen_range(0.0..60.0))).collect();
        let disrupted: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.1)).collect();
        build_adjacency(&p, &disrupted, 20.0)
    }

    #[test]
    fn adjacency_symmetric_zero_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for trial in 0..10_000 {
            let n = 1 + trial % 9;
            let a = random_adjacency(&mut rng, n);
            for i in 0..n {
                assert_eq!(a[i][i], 0);
                for j in 0..n {
                    assert_eq!(a[i][j], a[j][i]);
                    assert!(a[i][j] <= 1);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn normalized_adjacency_properties(seed in any::<u64>(), n in 1usize..9) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_adjacency(&mut rng, n);
            let norm: Matrix<f64> = normalize_adjacency(&a);
            for i in 0..n {
                prop_assert!(norm[(i, i)] > 0.0);
                for j in 0..n {
                    prop_assert!(norm[(i, j)] >= 0.0);
                    prop_assert_eq!(norm[(i, j)], norm[(j, i)]);
                }
            }
        }

        #[test]
        fn normalization_is_permutation_equivariant(seed in any::<u64>(), n in 1usize..9) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_adjacency(&mut rng, n);
            let mut perm: Vec<usize> = (0..n).collect();
            rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut rng);
            let snap = GraphSnapshot { adjacency: a, features: vec![[0.0; 6]; n] };
            let permuted = snap.permuted(&perm);
            let lhs: Matrix<f64> = normalize_adjacency(&permuted.adjacency);
            let rhs: Matrix<f64> = normalize_adjacency(&snap.adjacency);
            for i in 0..n {
                for j in 0..n {
                    prop_assert!((lhs[(i, j)] - rhs[(perm[i], perm[j])]).abs() <= 1e-12);
                }
            }
        }
    }
}
