//! Aggregators: reduce a probe stream to one scalar per example.
//!
//! All aggregators are single-pass streaming reducers with `O(n x p)` state.
//! Rows that an aggregator cannot score (e.g. never out-of-bag) come back as
//! `None`; the detector imputes them before producing trust scores.

use serde::{Deserialize, Serialize};

use crate::ensembling::ProbeStream;
use crate::error::{Error, Result};

/// How an aggregator's output relates to the probe's orientation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrientationEffect {
    /// Output keeps the probe's orientation.
    Preserve,
    /// Output is suspicion-oriented regardless of the probe (spread and
    /// instability measures).
    Suspicion,
}

/// Aggregation method identifiers; stable strings used by configs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregator {
    /// Sum over members and probe columns.
    Sum,
    /// Mean over members and probe columns.
    Mean,
    /// Per example, mean over members that did NOT train on it.
    OobMean,
    /// Per example, mean over columns of the across-member population
    /// variance.
    Variance,
    /// Count of consecutive-member 0 -> 1 transitions of a binary probe.
    ForgetCount,
    /// Fraction of members agreeing with the label (mean of a binary probe).
    Vote,
    /// Mean over in-bag members minus mean over out-of-bag members.
    InOutDiff,
}

impl Aggregator {
    pub const ALL: [Aggregator; 7] = [
        Aggregator::Sum,
        Aggregator::Mean,
        Aggregator::OobMean,
        Aggregator::Variance,
        Aggregator::ForgetCount,
        Aggregator::Vote,
        Aggregator::InOutDiff,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Aggregator::Sum => "sum",
            Aggregator::Mean => "mean",
            Aggregator::OobMean => "oob_mean",
            Aggregator::Variance => "variance",
            Aggregator::ForgetCount => "forget_count",
            Aggregator::Vote => "vote",
            Aggregator::InOutDiff => "in_out_diff",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .find(|a| a.name() == s)
            .copied()
            .ok_or_else(|| Error::UnknownIdentifier {
                what: "aggregator",
                got: s.to_string(),
                options: Self::ALL
                    .iter()
                    .map(|a| a.name())
                    .collect::<Vec<_>>()
                    .join(", "),
            })
    }

    pub fn effect(&self) -> OrientationEffect {
        match self {
            Aggregator::Variance | Aggregator::ForgetCount | Aggregator::InOutDiff => {
                OrientationEffect::Suspicion
            }
            _ => OrientationEffect::Preserve,
        }
    }

    /// Whether the aggregator needs in-bag masks on every member.
    pub fn needs_masks(&self) -> bool {
        matches!(self, Aggregator::OobMean | Aggregator::InOutDiff)
    }

    /// Whether members must arrive in training order (progressive streams).
    pub fn order_sensitive(&self) -> bool {
        matches!(self, Aggregator::ForgetCount)
    }

    /// Reduce the stream; `None` marks rows without a defined score.
    pub fn aggregate(&self, stream: ProbeStream) -> Result<Vec<Option<f64>>> {
        let n = stream.n_examples();
        match self {
            Aggregator::Sum | Aggregator::Mean => {
                let mut totals = vec![0.0; n];
                let mut members = 0usize;
                let mut width = 0usize;
                for item in stream {
                    let item = item?;
                    width = item.values.ncols();
                    for (i, row) in item.values.rows().into_iter().enumerate() {
                        totals[i] += row.sum();
                    }
                    members += 1;
                }
                if members == 0 {
                    return Err(Error::Aggregation("empty probe stream".into()));
                }
                if *self == Aggregator::Mean {
                    let denom = (members * width) as f64;
                    for v in totals.iter_mut() {
                        *v /= denom;
                    }
                }
                Ok(totals.into_iter().map(Some).collect())
            }
            Aggregator::Vote => {
                let mut totals = vec![0.0; n];
                let mut members = 0usize;
                for item in stream {
                    let item = item?;
                    require_binary_column(&item.values, self.name())?;
                    for i in 0..n {
                        totals[i] += item.values[[i, 0]];
                    }
                    members += 1;
                }
                if members == 0 {
                    return Err(Error::Aggregation("empty probe stream".into()));
                }
                Ok(totals
                    .into_iter()
                    .map(|v| Some(v / members as f64))
                    .collect())
            }
            Aggregator::OobMean => {
                let mut sums = vec![0.0; n];
                let mut counts = vec![0usize; n];
                let mut any = false;
                for item in stream {
                    let item = item?;
                    any = true;
                    let mask = item.in_bag.as_ref().ok_or_else(|| {
                        Error::Aggregation("oob_mean needs in-bag masks".into())
                    })?;
                    let width = item.values.ncols();
                    for i in 0..n {
                        if !mask[i] {
                            sums[i] += item.values.row(i).sum();
                            counts[i] += width;
                        }
                    }
                }
                if !any {
                    return Err(Error::Aggregation("empty probe stream".into()));
                }
                Ok(sums
                    .into_iter()
                    .zip(counts)
                    .map(|(s, c)| (c > 0).then(|| s / c as f64))
                    .collect())
            }
            Aggregator::Variance => {
                // Welford per (row, column), then mean over columns.
                let mut count = 0usize;
                let mut mean: Vec<f64> = Vec::new();
                let mut m2: Vec<f64> = Vec::new();
                let mut width = 0usize;
                for item in stream {
                    let item = item?;
                    if count == 0 {
                        width = item.values.ncols();
                        mean = vec![0.0; n * width];
                        m2 = vec![0.0; n * width];
                    }
                    count += 1;
                    for i in 0..n {
                        for j in 0..width {
                            let idx = i * width + j;
                            let v = item.values[[i, j]];
                            let delta = v - mean[idx];
                            mean[idx] += delta / count as f64;
                            m2[idx] += delta * (v - mean[idx]);
                        }
                    }
                }
                if count == 0 {
                    return Err(Error::Aggregation("empty probe stream".into()));
                }
                let mut out = Vec::with_capacity(n);
                for i in 0..n {
                    let mut total = 0.0;
                    for j in 0..width {
                        total += m2[i * width + j] / count as f64;
                    }
                    out.push(Some(total / width as f64));
                }
                Ok(out)
            }
            Aggregator::ForgetCount => {
                let mut previous: Option<Vec<f64>> = None;
                let mut counts = vec![0.0; n];
                for item in stream {
                    let item = item?;
                    require_binary_column(&item.values, self.name())?;
                    let current: Vec<f64> = (0..n).map(|i| item.values[[i, 0]]).collect();
                    if let Some(prev) = &previous {
                        for i in 0..n {
                            if prev[i] == 0.0 && current[i] == 1.0 {
                                counts[i] += 1.0;
                            }
                        }
                    }
                    previous = Some(current);
                }
                if previous.is_none() {
                    return Err(Error::Aggregation("empty probe stream".into()));
                }
                Ok(counts.into_iter().map(Some).collect())
            }
            Aggregator::InOutDiff => {
                let mut sum_in = vec![0.0; n];
                let mut count_in = vec![0usize; n];
                let mut sum_out = vec![0.0; n];
                let mut count_out = vec![0usize; n];
                let mut any = false;
                for item in stream {
                    let item = item?;
                    any = true;
                    let mask = item.in_bag.as_ref().ok_or_else(|| {
                        Error::Aggregation("in_out_diff needs in-bag masks".into())
                    })?;
                    let width = item.values.ncols();
                    for i in 0..n {
                        let row_sum = item.values.row(i).sum();
                        if mask[i] {
                            sum_in[i] += row_sum;
                            count_in[i] += width;
                        } else {
                            sum_out[i] += row_sum;
                            count_out[i] += width;
                        }
                    }
                }
                if !any {
                    return Err(Error::Aggregation("empty probe stream".into()));
                }
                Ok((0..n)
                    .map(|i| {
                        (count_in[i] > 0 && count_out[i] > 0).then(|| {
                            sum_in[i] / count_in[i] as f64 - sum_out[i] / count_out[i] as f64
                        })
                    })
                    .collect())
            }
        }
    }
}

fn require_binary_column(values: &ndarray::Array2<f64>, name: &str) -> Result<()> {
    if values.ncols() != 1 {
        return Err(Error::Aggregation(format!(
            "{name} needs a single-column binary probe"
        )));
    }
    if values.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::Aggregation(format!(
            "{name} needs binary probe values"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensembling::StreamItem;
    use ndarray::Array2;

    /// Build a synthetic stream from explicit member matrices.
    fn stream_of(members: Vec<(Array2<f64>, Option<Vec<bool>>)>) -> ProbeStream {
        let n = members[0].0.nrows();
        ProbeStream::from_items(
            members
                .into_iter()
                .enumerate()
                .map(|(member, (values, in_bag))| {
                    Ok(StreamItem {
                        values,
                        in_bag,
                        member,
                    })
                })
                .collect(),
            n,
        )
    }

    fn col(values: &[f64]) -> Array2<f64> {
        Array2::from_shape_vec((values.len(), 1), values.to_vec()).unwrap()
    }

    #[test]
    fn sum_single_member_is_identity() {
        let s = stream_of(vec![(col(&[1.0, 2.0, 3.0]), None)]);
        let out = Aggregator::Sum.aggregate(s).unwrap();
        assert_eq!(out, vec![Some(1.0), Some(2.0), Some(3.0)]);
    }

    #[test]
    fn sum_and_mean_of_two_constant_members() {
        let make = || stream_of(vec![(col(&[2.0, 2.0]), None), (col(&[5.0, 5.0]), None)]);
        assert_eq!(
            Aggregator::Sum.aggregate(make()).unwrap(),
            vec![Some(7.0), Some(7.0)]
        );
        assert_eq!(
            Aggregator::Mean.aggregate(make()).unwrap(),
            vec![Some(3.5), Some(3.5)]
        );
    }

    #[test]
    fn sum_matches_independent_loop() {
        let mut rng = crate::seeding::rng(1);
        use rand::Rng;
        let members: Vec<Array2<f64>> = (0..4)
            .map(|_| Array2::from_shape_fn((6, 2), |_| rng.random::<f64>()))
            .collect();
        let mut expect = vec![0.0; 6];
        for m in &members {
            for i in 0..6 {
                expect[i] += m[[i, 0]] + m[[i, 1]];
            }
        }
        let s = stream_of(members.into_iter().map(|m| (m, None)).collect());
        let out = Aggregator::Sum.aggregate(s).unwrap();
        for (o, e) in out.iter().zip(&expect) {
            assert!((o.unwrap() - e).abs() < 1e-12);
        }
    }

    #[test]
    fn oob_mean_kfold_like_masks_pick_single_member() {
        // member 0 trained on row 1 only; member 1 trained on row 0 only
        let s = stream_of(vec![
            (col(&[10.0, 99.0]), Some(vec![false, true])),
            (col(&[99.0, 20.0]), Some(vec![true, false])),
        ]);
        let out = Aggregator::OobMean.aggregate(s).unwrap();
        assert_eq!(out, vec![Some(10.0), Some(20.0)]);
    }

    #[test]
    fn oob_mean_without_masks_errors() {
        let s = stream_of(vec![(col(&[1.0]), None)]);
        assert!(Aggregator::OobMean.aggregate(s).is_err());
    }

    #[test]
    fn oob_mean_matches_brute_force_on_bootstrap_fixture() {
        let mut rng = crate::seeding::rng(2);
        use rand::Rng;
        let n = 20;
        let members: Vec<(Array2<f64>, Option<Vec<bool>>)> = (0..500)
            .map(|_| {
                let values = Array2::from_shape_fn((n, 1), |_| rng.random::<f64>());
                let mask: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < 0.6).collect();
                (values, Some(mask))
            })
            .collect();
        let mut expect: Vec<Option<f64>> = Vec::new();
        for i in 0..n {
            let values: Vec<f64> = members
                .iter()
                .filter(|(_, m)| !m.as_ref().unwrap()[i])
                .map(|(v, _)| v[[i, 0]])
                .collect();
            expect.push(if values.is_empty() {
                None
            } else {
                Some(values.iter().sum::<f64>() / values.len() as f64)
            });
        }
        let out = Aggregator::OobMean.aggregate(stream_of(members)).unwrap();
        for (o, e) in out.iter().zip(&expect) {
            match (o, e) {
                (Some(a), Some(b)) => assert!((a - b).abs() < 1e-12),
                (None, None) => {}
                _ => panic!("definedness mismatch"),
            }
        }
    }

    #[test]
    fn variance_of_constant_stream_is_zero() {
        let s = stream_of(vec![(col(&[3.0, 4.0]), None), (col(&[3.0, 4.0]), None)]);
        let out = Aggregator::Variance.aggregate(s).unwrap();
        assert_eq!(out, vec![Some(0.0), Some(0.0)]);
    }

    #[test]
    fn variance_of_plus_minus_a_is_a_squared() {
        let a = 2.5;
        let s = stream_of(vec![(col(&[a]), None), (col(&[-a]), None)]);
        let out = Aggregator::Variance.aggregate(s).unwrap();
        assert!((out[0].unwrap() - a * a).abs() < 1e-12);
    }

    #[test]
    fn variance_matches_two_pass_oracle() {
        let mut rng = crate::seeding::rng(3);
        use rand::Rng;
        let members: Vec<Array2<f64>> = (0..7)
            .map(|_| Array2::from_shape_fn((5, 3), |_| rng.random::<f64>() * 4.0))
            .collect();
        // two-pass population variance per (row, col), then column mean
        let mut expect = vec![0.0; 5];
        for i in 0..5 {
            let mut total = 0.0;
            for j in 0..3 {
                let vals: Vec<f64> = members.iter().map(|m| m[[i, j]]).collect();
                let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                total += vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            }
            expect[i] = total / 3.0;
        }
        let s = stream_of(members.into_iter().map(|m| (m, None)).collect());
        let out = Aggregator::Variance.aggregate(s).unwrap();
        for (o, e) in out.iter().zip(&expect) {
            assert!((o.unwrap() - e).abs() < 1e-10);
        }
    }

    #[test]
    fn variance_is_non_negative_and_zero_iff_constant() {
        let mut rng = crate::seeding::rng(4);
        use rand::Rng;
        for _ in 0..20 {
            let members: Vec<Array2<f64>> = (0..5)
                .map(|_| Array2::from_shape_fn((4, 1), |_| (rng.random::<f64>() * 3.0).round()))
                .collect();
            let constant: Vec<bool> = (0..4)
                .map(|i| members.iter().all(|m| m[[i, 0]] == members[0][[i, 0]]))
                .collect();
            let s = stream_of(members.into_iter().map(|m| (m, None)).collect());
            let out = Aggregator::Variance.aggregate(s).unwrap();
            for (i, v) in out.iter().enumerate() {
                let v = v.unwrap();
                assert!(v >= 0.0);
                assert_eq!(v == 0.0, constant[i]);
            }
        }
    }

    #[test]
    fn forget_count_all_ones_is_zero() {
        let s = stream_of(vec![(col(&[1.0]), None), (col(&[1.0]), None), (col(&[1.0]), None)]);
        assert_eq!(Aggregator::ForgetCount.aggregate(s).unwrap(), vec![Some(0.0)]);
    }

    #[test]
    fn forget_count_alternating_sequence() {
        let s = stream_of(vec![
            (col(&[0.0]), None),
            (col(&[1.0]), None),
            (col(&[0.0]), None),
            (col(&[1.0]), None),
        ]);
        assert_eq!(Aggregator::ForgetCount.aggregate(s).unwrap(), vec![Some(2.0)]);
    }

    #[test]
    fn forget_count_matches_brute_force_on_random_sequences() {
        let mut rng = crate::seeding::rng(5);
        use rand::Rng;
        for _ in 0..50 {
            let len = 2 + rng.random_range(0..20);
            let seq: Vec<f64> = (0..len)
                .map(|_| f64::from(u8::from(rng.random::<f64>() < 0.5)))
                .collect();
            let expect = seq
                .windows(2)
                .filter(|w| w[0] == 0.0 && w[1] == 1.0)
                .count() as f64;
            let s = stream_of(seq.iter().map(|&v| (col(&[v]), None)).collect());
            assert_eq!(
                Aggregator::ForgetCount.aggregate(s).unwrap(),
                vec![Some(expect)]
            );
        }
    }

    #[test]
    fn forget_count_rejects_non_binary_values() {
        let s = stream_of(vec![(col(&[0.5]), None)]);
        assert!(Aggregator::ForgetCount.aggregate(s).is_err());
    }

    #[test]
    fn vote_unanimous_and_split() {
        let s = stream_of(vec![(col(&[1.0, 1.0]), None), (col(&[1.0, 0.0]), None)]);
        let out = Aggregator::Vote.aggregate(s).unwrap();
        assert_eq!(out, vec![Some(1.0), Some(0.5)]);
    }

    #[test]
    fn in_out_diff_trivial_cases() {
        // identical values in and out: diff 0
        let s = stream_of(vec![
            (col(&[4.0]), Some(vec![true])),
            (col(&[4.0]), Some(vec![false])),
        ]);
        assert_eq!(Aggregator::InOutDiff.aggregate(s).unwrap(), vec![Some(0.0)]);
        // in = 1, out = 0: diff 1
        let s = stream_of(vec![
            (col(&[1.0]), Some(vec![true])),
            (col(&[0.0]), Some(vec![false])),
        ]);
        assert_eq!(Aggregator::InOutDiff.aggregate(s).unwrap(), vec![Some(1.0)]);
    }

    #[test]
    fn in_out_diff_matches_brute_force() {
        let mut rng = crate::seeding::rng(6);
        use rand::Rng;
        let n = 15;
        let members: Vec<(Array2<f64>, Option<Vec<bool>>)> = (0..100)
            .map(|_| {
                let values = Array2::from_shape_fn((n, 1), |_| rng.random::<f64>());
                let mask: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < 0.5).collect();
                (values, Some(mask))
            })
            .collect();
        let mut expect: Vec<Option<f64>> = Vec::new();
        for i in 0..n {
            let ins: Vec<f64> = members
                .iter()
                .filter(|(_, m)| m.as_ref().unwrap()[i])
                .map(|(v, _)| v[[i, 0]])
                .collect();
            let outs: Vec<f64> = members
                .iter()
                .filter(|(_, m)| !m.as_ref().unwrap()[i])
                .map(|(v, _)| v[[i, 0]])
                .collect();
            expect.push(if ins.is_empty() || outs.is_empty() {
                None
            } else {
                Some(
                    ins.iter().sum::<f64>() / ins.len() as f64
                        - outs.iter().sum::<f64>() / outs.len() as f64,
                )
            });
        }
        let out = Aggregator::InOutDiff.aggregate(stream_of(members)).unwrap();
        for (o, e) in out.iter().zip(&expect) {
            match (o, e) {
                (Some(a), Some(b)) => assert!((a - b).abs() < 1e-12),
                (None, None) => {}
                _ => panic!("definedness mismatch"),
            }
        }
    }

    #[test]
    fn order_invariance_for_sum_mean_vote_but_not_forget() {
        let members = vec![col(&[0.0]), col(&[1.0]), col(&[0.0]), col(&[1.0])];
        let shuffled = vec![col(&[1.0]), col(&[1.0]), col(&[0.0]), col(&[0.0])];
        let build = |ms: &[Array2<f64>]| stream_of(ms.iter().map(|m| (m.clone(), None)).collect());
        for agg in [Aggregator::Sum, Aggregator::Mean, Aggregator::Vote] {
            assert_eq!(
                agg.aggregate(build(&members)).unwrap(),
                agg.aggregate(build(&shuffled)).unwrap(),
                "{} should ignore member order",
                agg.name()
            );
        }
        assert_ne!(
            Aggregator::ForgetCount.aggregate(build(&members)).unwrap(),
            Aggregator::ForgetCount.aggregate(build(&shuffled)).unwrap()
        );
    }

    #[test]
    fn aggregator_names_round_trip() {
        for agg in Aggregator::ALL {
            assert_eq!(Aggregator::parse(agg.name()).unwrap(), agg);
        }
        assert!(Aggregator::parse("median").is_err());
    }
}
