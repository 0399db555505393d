use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ReachabilityError {
    #[error("empty scan range {n_start}..{n_stop}")]
    EmptyRange { n_start: usize, n_stop: usize },
    #[error("trajectory has {len} samples, range needs up to index {n_stop}")]
    TooShort { len: usize, n_stop: usize },
    #[error("target has {expected} joints, sample {index} has {got}")]
    Dimension { index: usize, expected: usize, got: usize },
}

fn sign(v: f64) -> f64 {
    if v < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// First index in `n_start..n_stop` by which every joint has been inside the
/// open `eps`-band around `target`, or has crossed it between consecutive
/// samples. Returns `n_stop` if that never happens.
///
/// `traj` is indexed globally, so the crossing test at `n_start > 0` looks
/// back at `traj[n_start - 1]`.
pub fn check_goal_reachability(
    traj: &[Vec<f64>],
    n_start: usize,
    n_stop: usize,
    target: &[f64],
    eps: f64,
) -> Result<usize, ReachabilityError> {
    if n_start >= n_stop {
        return Err(ReachabilityError::EmptyRange { n_start, n_stop });
    }
    if traj.len() < n_stop {
        return Err(ReachabilityError::TooShort { len: traj.len(), n_stop });
    }
    let m = target.len();
    for (index, q) in traj[n_start.saturating_sub(1)..n_stop].iter().enumerate() {
        if q.len() != m {
            return Err(ReachabilityError::Dimension {
                index: index + n_start.saturating_sub(1),
                expected: m,
                got: q.len(),
            });
        }
    }
    let mut reached = vec![false; m];
    for i in n_start..n_stop {
        for j in 0..m {
            if reached[j] {
                continue;
            }
            let d = traj[i][j] - target[j];
            if d.abs() < eps || (i > 0 && sign(d) != sign(traj[i - 1][j] - target[j])) {
                reached[j] = true;
            }
        }
        if reached.iter().all(|&r| r) {
            return Ok(i);
        }
    }
    Ok(n_stop)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: &[f64]) -> Vec<Vec<f64>> {
        v.iter().map(|&x| vec![x]).collect()
    }

    #[test]
    fn inside_band() {
        let t = scalar(&[0.5, 0.05, 0.0]);
        assert_eq!(check_goal_reachability(&t, 0, 3, &[0.0], 0.1).unwrap(), 1);
    }

    #[test]
    fn sign_change_counts() {
        let t = scalar(&[0.5, 0.2, -0.3]);
        assert_eq!(check_goal_reachability(&t, 0, 3, &[0.0], 0.001).unwrap(), 2);
    }

    #[test]
    fn unreachable_returns_stop() {
        let t = scalar(&[0.5, 0.4, 0.3]);
        assert_eq!(check_goal_reachability(&t, 0, 3, &[0.0], 0.1).unwrap(), 3);
    }

    #[test]
    fn flags_persist() {
        let t = vec![vec![1.0, 1.0], vec![0.0, 1.0], vec![1.0, 0.0]];
        assert_eq!(check_goal_reachability(&t, 0, 3, &[0.0, 0.0], 0.1).unwrap(), 2);
    }

    #[test]
    fn looks_back_before_start() {
        let t = scalar(&[0.5, -0.5, -0.6]);
        assert_eq!(check_goal_reachability(&t, 1, 3, &[0.0], 0.01).unwrap(), 1);
        // no lookback at global index 0
        let t = scalar(&[-0.5, -0.6]);
        assert_eq!(check_goal_reachability(&t, 0, 2, &[0.0], 0.01).unwrap(), 2);
    }

    #[test]
    fn zero_difference_is_positive_sign() {
        // exact landing is in the band anyway; leaving it downward is a "crossing"
        let t = scalar(&[0.0, -0.5]);
        assert_eq!(check_goal_reachability(&t, 1, 2, &[0.0], 0.01).unwrap(), 1);
    }

    #[test]
    fn constant_target_returns_start() {
        let t = vec![vec![0.3, -0.2]; 6];
        assert_eq!(check_goal_reachability(&t, 2, 6, &[0.3, -0.2], 1e-3).unwrap(), 2);
    }

    #[test]
    fn rejects_bad_ranges() {
        let t = scalar(&[0.0, 1.0]);
        assert!(check_goal_reachability(&t, 2, 2, &[0.0], 0.1).is_err());
        assert!(check_goal_reachability(&t, 0, 3, &[0.0], 0.1).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn monotone_in_eps(
                traj in prop::collection::vec(prop::collection::vec(-1.0..1.0f64, 2), 2..12),
                eps in 1e-4..0.5f64,
                extra in 0.0..0.5f64,
            ) {
                let n = traj.len();
                let g = [0.1, -0.2];
                let a = check_goal_reachability(&traj, 0, n, &g, eps).unwrap();
                let b = check_goal_reachability(&traj, 0, n, &g, eps + extra).unwrap();
                prop_assert!(b <= a);
            }
        }
    }
}
