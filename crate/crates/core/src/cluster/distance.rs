use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Distance used by k-medoids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Distance {
    Euclidean,
    Dtw,
}

impl std::fmt::Display for Distance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Distance::Euclidean => "euclidean",
            Distance::Dtw => "dtw",
        })
    }
}

impl std::str::FromStr for Distance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(Distance::Euclidean),
            "dtw" => Ok(Distance::Dtw),
            other => Err(Error::arg(format!("unknown distance {other:?}"))),
        }
    }
}

/// Straight-line distance between equal-length vectors.
pub fn euclidean(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::arg(format!(
            "euclidean distance needs equal lengths, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(squared_euclidean(a, b).sqrt())
}

#[inline]
pub(crate) fn squared_euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Dynamic time warping distance.
///
/// Minimises `sqrt(sum (a_i - b_j)^2)` over warping paths that start at
/// `(0, 0)`, end at `(m-1, n-1)` and advance with steps `(1,0)`, `(0,1)` or
/// `(1,1)`. With `band = Some(r)` only cells with `|i - j| <= r` are visited
/// (Sakoe-Chiba band).
pub fn dtw(a: &[f64], b: &[f64], band: Option<usize>) -> Result<f64> {
    let (m, n) = (a.len(), b.len());
    if m == 0 || n == 0 {
        return Err(Error::arg("dtw needs nonempty sequences"));
    }
    let r = match band {
        Some(r) if r < m.abs_diff(n) => {
            return Err(Error::arg(format!(
                "dtw band {r} is narrower than the length difference {}",
                m.abs_diff(n)
            )))
        }
        Some(r) => r,
        None => m.max(n),
    };
    let inf = f64::INFINITY;
    let mut prev = vec![inf; n];
    let mut curr = vec![inf; n];
    for i in 0..m {
        let lo = i.saturating_sub(r);
        let hi = (i + r).min(n - 1);
        curr.fill(inf);
        for j in lo..=hi {
            let cost = (a[i] - b[j]) * (a[i] - b[j]);
            let best = if i == 0 && j == 0 {
                0.0
            } else {
                let up = if i > 0 { prev[j] } else { inf };
                let left = if j > 0 { curr[j - 1] } else { inf };
                let diag = if i > 0 && j > 0 { prev[j - 1] } else { inf };
                up.min(left).min(diag)
            };
            curr[j] = cost + best;
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    Ok(prev[n - 1].sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    /// Enumerate every monotone warping path and keep the cheapest.
    pub(crate) fn dtw_enumerate(a: &[f64], b: &[f64]) -> f64 {
        fn walk(a: &[f64], b: &[f64], i: usize, j: usize, acc: f64, best: &mut f64) {
            let acc = acc + (a[i] - b[j]).powi(2);
            if i == a.len() - 1 && j == b.len() - 1 {
                *best = best.min(acc);
                return;
            }
            if i + 1 < a.len() {
                walk(a, b, i + 1, j, acc, best);
            }
            if j + 1 < b.len() {
                walk(a, b, i, j + 1, acc, best);
            }
            if i + 1 < a.len() && j + 1 < b.len() {
                walk(a, b, i + 1, j + 1, acc, best);
            }
        }
        let mut best = f64::INFINITY;
        walk(a, b, 0, 0, 0.0, &mut best);
        best.sqrt()
    }

    #[test]
    fn euclidean_examples() {
        assert_eq!(euclidean(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(euclidean(&[0.0, 3.0], &[4.0, 0.0]).unwrap(), 5.0);
        assert!(euclidean(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn euclidean_matches_elementwise_sum() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let a: Vec<f64> = (0..8).map(|_| rng.random_range(-100.0..100.0)).collect();
            let b: Vec<f64> = (0..8).map(|_| rng.random_range(-100.0..100.0)).collect();
            let mut acc = 0.0;
            for i in 0..8 {
                let d = a[i] - b[i];
                acc += d * d;
            }
            let want = acc.sqrt();
            let got = euclidean(&a, &b).unwrap();
            assert!((got - want).abs() <= 1e-9 * want);
        }
    }

    #[test]
    fn dtw_examples() {
        assert_eq!(dtw(&[1.0, 5.0, 2.0], &[1.0, 5.0, 2.0], None).unwrap(), 0.0);
        assert_eq!(dtw(&[0.0, 0.0, 1.0], &[0.0, 1.0], None).unwrap(), 0.0);
        let d = dtw(&[1.0, 2.0, 3.0], &[2.0, 2.0, 2.0], None).unwrap();
        assert!((d - 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(d, dtw_enumerate(&[1.0, 2.0, 3.0], &[2.0, 2.0, 2.0]));
    }

    #[test]
    fn dtw_errors() {
        assert!(dtw(&[], &[1.0], None).is_err());
        assert!(dtw(&[1.0], &[], None).is_err());
        assert!(dtw(&[1.0, 2.0, 3.0, 4.0], &[1.0], Some(2)).is_err());
        assert!(dtw(&[1.0, 2.0, 3.0, 4.0], &[1.0], Some(3)).is_ok());
    }

    #[test]
    fn zero_band_is_rigid_alignment() {
        let a = [3.0, 1.0, 4.0, 1.0, 5.0];
        let b = [2.0, 7.0, 1.0, 8.0, 2.0];
        let d = dtw(&a, &b, Some(0)).unwrap();
        assert!((d - euclidean(&a, &b).unwrap()).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn dtw_matches_path_enumeration(
            a in prop::collection::vec(-5i32..5, 1..=6),
            b in prop::collection::vec(-5i32..5, 1..=6),
        ) {
            let a: Vec<f64> = a.into_iter().map(f64::from).collect();
            let b: Vec<f64> = b.into_iter().map(f64::from).collect();
            let got = dtw(&a, &b, None).unwrap();
            prop_assert!((got - dtw_enumerate(&a, &b)).abs() <= 1e-9);
            prop_assert!((got - dtw(&b, &a, None).unwrap()).abs() <= 1e-12);
            prop_assert_eq!(dtw(&a, &a, None).unwrap(), 0.0);
        }

        #[test]
        fn dtw_never_exceeds_euclidean(
            pair in (1usize..40).prop_flat_map(|n| (
                prop::collection::vec(-50.0f64..50.0, n),
                prop::collection::vec(-50.0f64..50.0, n),
            )),
            band in prop::option::of(0usize..10),
        ) {
            let (a, b) = pair;
            let d = dtw(&a, &b, band).unwrap();
            prop_assert!(d <= euclidean(&a, &b).unwrap() + 1e-9);
        }
    }
}
