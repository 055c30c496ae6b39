//! Monotone alignment of a solver trajectory to a teacher trajectory.
//!
//! States are indexed from 1; the shared zero initial state is implicit and
//! always aligned. The last states of both trajectories are always matched,
//! and the interior states are aligned by dynamic programming so that matches
//! never go back in time.

use rand::seq::index::sample;
use rand::RngCore;

/// Which dynamic program applies to a `t x t_g` distance matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Recurrence {
    /// More solver states than teacher states: several solver states may
    /// share one teacher state.
    Shared,
    /// Every solver state takes a distinct teacher state.
    Unique,
}

impl Recurrence {
    pub fn for_shape(t: usize, t_g: usize) -> Self {
        if t > t_g {
            Recurrence::Shared
        } else {
            Recurrence::Unique
        }
    }
}

/// Full `(t + 1) x (t_g + 1)` table. `dp[0][j] = 0` (unused teacher states
/// are free) and `dp[i][0] = inf` for `i >= 1` (every solver state aligns).
pub fn dp_table(d: &[Vec<f64>], rec: Recurrence) -> Vec<Vec<f64>> {
    let t = d.len();
    let t_g = d.first().map_or(0, Vec::len);
    let mut dp = vec![vec![0.0; t_g + 1]; t + 1];
    for row in dp.iter_mut().skip(1) {
        row[0] = f64::INFINITY;
    }
    for i in 1..=t {
        for j in 1..=t_g {
            let prev = match rec {
                Recurrence::Shared => dp[i - 1][j],
                Recurrence::Unique => dp[i - 1][j - 1],
            };
            dp[i][j] = (prev + d[i - 1][j - 1]).min(dp[i][j - 1]);
        }
    }
    dp
}

#[derive(Clone, Debug, PartialEq)]
pub struct Alignment {
    pub cost: f64,
    /// Matched `(solver, teacher)` pairs, 0-based into the rows and columns
    /// of the distance matrix, in increasing solver order.
    pub pairs: Vec<(usize, usize)>,
}

/// Optimal monotone alignment of all rows of `d` to its columns.
pub fn align(d: &[Vec<f64>]) -> Alignment {
    let t = d.len();
    let t_g = d.first().map_or(0, Vec::len);
    if t == 0 {
        return Alignment {
            cost: 0.0,
            pairs: Vec::new(),
        };
    }
    let rec = Recurrence::for_shape(t, t_g);
    let dp = dp_table(d, rec);
    let cost = dp[t][t_g];
    let mut pairs = Vec::with_capacity(t);
    let (mut i, mut j) = (t, t_g);
    while i > 0 && j > 0 {
        let prev = match rec {
            Recurrence::Shared => dp[i - 1][j],
            Recurrence::Unique => dp[i - 1][j - 1],
        };
        if prev + d[i - 1][j - 1] <= dp[i][j - 1] {
            pairs.push((i - 1, j - 1));
            i -= 1;
            if rec == Recurrence::Unique {
                j -= 1;
            }
        } else {
            j -= 1;
        }
    }
    pairs.reverse();
    Alignment { cost, pairs }
}

/// Which states enter the alignment loss and how they pair up.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignmentPlan {
    /// `(solver, teacher)` indices into the full trajectories (0-based, the
    /// zero state excluded).
    pub interior: Vec<(usize, usize)>,
    /// Number of solver states the interior cost is normalised by; 0 when
    /// there is no interior term.
    pub normaliser: usize,
    /// Loss value: interior cost over the normaliser plus the last-state
    /// distance.
    pub value: f64,
}

/// Number of interior solver states kept when subsampling a trajectory of
/// `t` states.
pub fn subsample_size(t: usize) -> usize {
    (t.saturating_sub(1) / 2).max(1)
}

/// Plans the alignment loss for trajectories of `t` solver and `t_g` teacher
/// states with pairwise distances `dist(i, j)`. With `rng`, interior solver
/// states are subsampled without replacement, keeping their order.
pub fn plan(
    t: usize,
    t_g: usize,
    dist: &dyn Fn(usize, usize) -> f64,
    rng: Option<&mut dyn RngCore>,
) -> AlignmentPlan {
    assert!(t >= 1 && t_g >= 1, "trajectories must be non-empty");
    let last = dist(t - 1, t_g - 1);
    let pool = t - 1;
    let teacher_pool = t_g - 1;
    if pool == 0 || teacher_pool == 0 {
        return AlignmentPlan {
            interior: Vec::new(),
            normaliser: 0,
            value: last,
        };
    }
    let kept: Vec<usize> = match rng {
        Some(rng) => {
            let mut idx = sample(rng, pool, subsample_size(t).min(pool)).into_vec();
            idx.sort_unstable();
            idx
        }
        None => (0..pool).collect(),
    };
    let d: Vec<Vec<f64>> = kept
        .iter()
        .map(|&i| (0..teacher_pool).map(|j| dist(i, j)).collect())
        .collect();
    let a = align(&d);
    AlignmentPlan {
        interior: a.pairs.iter().map(|&(r, j)| (kept[r], j)).collect(),
        normaliser: kept.len(),
        value: a.cost / kept.len() as f64 + last,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two_example() {
        let d = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        let a = align(&d);
        assert_eq!(a.cost, 0.0);
        assert_eq!(a.pairs, vec![(0, 0), (1, 1)]);
    }

    #[test]
    fn shared_recurrence_lets_states_repeat() {
        let d = vec![vec![1.0, 5.0], vec![1.0, 5.0], vec![1.0, 5.0]];
        let a = align(&d);
        assert_eq!(a.cost, 3.0);
        assert!(a.pairs.iter().all(|&(_, j)| j == 0));
    }

    #[test]
    fn identical_single_interior_state_is_free() {
        let p = plan(2, 2, &|_, _| 0.0, None);
        assert_eq!(p.value, 0.0);
        assert_eq!(p.interior, vec![(0, 0)]);
    }

    #[test]
    fn constant_distances_scale_linearly() {
        let c = 0.7;
        for (t, t_g) in [(3, 5), (5, 3), (4, 4)] {
            let p = plan(t, t_g, &|_, _| c, None);
            let interior = (t - 1) as f64;
            assert!((p.value - (c * interior / (t - 1) as f64 + c)).abs() < 1e-12);
        }
    }

    #[test]
    fn last_state_always_counts() {
        let p = plan(1, 4, &|i, j| (i + j) as f64, None);
        assert_eq!(p.value, 3.0);
        assert_eq!(p.normaliser, 0);
    }
}
