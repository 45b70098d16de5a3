//! Linear-β base schedule and the few-step grids trained and sampled on.
//!
//! The dense schedule holds β(i/T) = β₀ + (β₁−β₀)·(i/T) for i = 1..=T and the
//! cumulative signal power α²(i/T) = Π_{j≤i}(1 − β(j/T)), in double precision.
//! A [`StepGrid`] is a small ascending subset of base indices ending at T, plus
//! the implicit noise-free point (α,σ) = (1,0) at grid position 0.

use crate::error::{Error, Result};

/// Dense T-step schedule: β ramp and cumulative α² table.
#[derive(Debug, Clone)]
pub struct BaseSchedule {
    t_base: usize,
    beta_start: f64,
    beta_end: f64,
    /// beta[i-1] = β(i/T) for i in 1..=T
    beta: Vec<f64>,
    /// alpha_sq[i] = α²(i/T) for i in 0..=T, with α²(0) = 1
    alpha_sq: Vec<f64>,
}

impl BaseSchedule {
    /// Build the dense schedule. Rejects t_base < 2 and out-of-order or
    /// non-positive β endpoints.
    pub fn new(t_base: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if t_base < 2 {
            return Err(Error::Schedule(format!(
                "t_base must be >= 2, got {t_base}"
            )));
        }
        if !(beta_start > 0.0 && beta_start < beta_end && beta_end < 1.0) {
            return Err(Error::Schedule(format!(
                "beta endpoints must satisfy 0 < start < end < 1, got ({beta_start}, {beta_end})"
            )));
        }
        let mut beta = Vec::with_capacity(t_base);
        let mut alpha_sq = Vec::with_capacity(t_base + 1);
        alpha_sq.push(1.0);
        let mut prod = 1.0f64;
        for i in 1..=t_base {
            let b = beta_start + (beta_end - beta_start) * (i as f64 / t_base as f64);
            beta.push(b);
            prod *= 1.0 - b;
            alpha_sq.push(prod);
        }
        // The product must stay a positive normal f64, or α hits exactly 0 and
        // the strict-decrease and α>0 guarantees die with it.
        if prod < f64::MIN_POSITIVE {
            return Err(Error::Schedule(format!(
                "cumulative alpha^2 underflows ({prod:e}) for t_base {t_base}, \
                 beta ({beta_start}, {beta_end}); reduce t_base or the beta ramp"
            )));
        }
        Ok(BaseSchedule {
            t_base,
            beta_start,
            beta_end,
            beta,
            alpha_sq,
        })
    }

    /// Default linear-β schedule: T = 1000, β ∈ (1e-4, 0.02).
    pub fn default_linear() -> Self {
        BaseSchedule::new(1000, 1e-4, 0.02).expect("default schedule parameters are valid")
    }

    pub fn t_base(&self) -> usize {
        self.t_base
    }

    pub fn beta_start(&self) -> f64 {
        self.beta_start
    }

    pub fn beta_end(&self) -> f64 {
        self.beta_end
    }

    /// β(i/T) for i in 1..=T.
    pub fn beta(&self, i: usize) -> Result<f64> {
        if i == 0 || i > self.t_base {
            return Err(Error::IndexRange {
                what: "beta index",
                got: i,
                lo: 1,
                hi: self.t_base,
            });
        }
        Ok(self.beta[i - 1])
    }

    /// α²(i/T) for i in 0..=T (α²(0) = 1 by the empty-product convention).
    pub fn alpha_sq(&self, i: usize) -> Result<f64> {
        self.check_index(i)?;
        Ok(self.alpha_sq[i])
    }

    /// (α, σ) at base index i, with α(0) = 1, σ(0) = 0 and α² + σ² = 1.
    pub fn alpha_sigma(&self, i: usize) -> Result<(f64, f64)> {
        self.check_index(i)?;
        let a2 = self.alpha_sq[i];
        Ok((a2.sqrt(), (1.0 - a2).sqrt()))
    }

    /// Signal-to-noise ratio α²/σ² at base index i ≥ 1; diverges at i = 0.
    pub fn snr(&self, i: usize) -> Result<f64> {
        if i == 0 {
            return Err(Error::Schedule(
                "snr diverges at i = 0 (no noise has been added)".to_string(),
            ));
        }
        self.check_index(i)?;
        let a2 = self.alpha_sq[i];
        Ok(a2 / (1.0 - a2))
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i > self.t_base {
            return Err(Error::IndexRange {
                what: "base-step index",
                got: i,
                lo: 0,
                hi: self.t_base,
            });
        }
        Ok(())
    }
}

/// How a few-step grid places its indices on the base schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SchedulerKind {
    Uniform,
    /// 60/40-style split around a boundary index: `late_fraction` of the steps
    /// are placed uniformly above `boundary_index`, the rest uniformly below.
    NonUniform {
        boundary_index: usize,
        late_fraction: f64,
    },
}

impl SchedulerKind {
    /// Non-uniform defaults for a given t_base: boundary round(0.699·T),
    /// late fraction 0.6 (699 for the default T = 1000).
    pub fn non_uniform_default(t_base: usize) -> Self {
        SchedulerKind::NonUniform {
            boundary_index: (0.699 * t_base as f64).round() as usize,
            late_fraction: 0.6,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            SchedulerKind::Uniform => "uniform",
            SchedulerKind::NonUniform { .. } => "nonuniform",
        }
    }
}

fn round_half_away(x: f64) -> usize {
    x.round() as usize
}

/// Ordered subset of base steps with cached (α, σ); grid position 0 is the
/// noise-free endpoint (α,σ) = (1,0) and position S is pure noise (index T).
#[derive(Debug, Clone)]
pub struct StepGrid {
    kind: SchedulerKind,
    t_base: usize,
    /// ascending base indices for grid positions 1..=S; last == t_base
    indices: Vec<usize>,
    /// (α, σ) for grid positions 0..=S
    alpha: Vec<f64>,
    sigma: Vec<f64>,
}

impl StepGrid {
    /// Sub-sample `s_steps` base indices according to `kind`.
    ///
    /// Uniform: i_j = round(j·T/S). Non-uniform with boundary B and late
    /// fraction f: n_late = round(f·S), n_early = S − n_late, early indices
    /// round(j·B/n_early), late indices B + round(j·(T−B)/n_late). Duplicate
    /// indices after rounding are a hard error.
    pub fn subsample(base: &BaseSchedule, s_steps: usize, kind: SchedulerKind) -> Result<Self> {
        let t = base.t_base();
        if s_steps < 2 || s_steps > t {
            return Err(Error::Schedule(format!(
                "s_steps must be in 2..={t}, got {s_steps}"
            )));
        }
        let indices: Vec<usize> = match kind {
            SchedulerKind::Uniform => (1..=s_steps)
                .map(|j| round_half_away(j as f64 * t as f64 / s_steps as f64))
                .collect(),
            SchedulerKind::NonUniform {
                boundary_index,
                late_fraction,
            } => {
                if !(late_fraction > 0.0 && late_fraction < 1.0) {
                    return Err(Error::Schedule(format!(
                        "late_fraction must be in (0,1), got {late_fraction}"
                    )));
                }
                if boundary_index <= 1 || boundary_index >= t {
                    return Err(Error::Schedule(format!(
                        "boundary_index must be in (1, {t}), got {boundary_index}"
                    )));
                }
                let n_late = round_half_away(late_fraction * s_steps as f64);
                let n_early = s_steps as i64 - n_late as i64;
                if n_late == 0 || n_early <= 0 {
                    return Err(Error::Schedule(format!(
                        "non-uniform split needs at least one step on each side of the boundary \
                         (S = {s_steps}, late_fraction = {late_fraction} gives n_late = {n_late})"
                    )));
                }
                let n_early = n_early as usize;
                let b = boundary_index as f64;
                let mut idx: Vec<usize> = (1..=n_early)
                    .map(|j| round_half_away(j as f64 * b / n_early as f64))
                    .collect();
                idx.extend((1..=n_late).map(|j| {
                    boundary_index + round_half_away(j as f64 * (t as f64 - b) / n_late as f64)
                }));
                idx
            }
        };

        for w in indices.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::Schedule(format!(
                    "grid indices collide after rounding ({} repeats); \
                     reduce s_steps or adjust the split",
                    w[0]
                )));
            }
        }
        if indices[0] == 0 {
            return Err(Error::Schedule(
                "grid would include base index 0; s_steps too large for the split".to_string(),
            ));
        }
        if *indices.last().unwrap() != t {
            return Err(Error::Schedule(format!(
                "grid must end at t_base = {t}, got {}",
                indices.last().unwrap()
            )));
        }

        let mut alpha = Vec::with_capacity(indices.len() + 1);
        let mut sigma = Vec::with_capacity(indices.len() + 1);
        alpha.push(1.0);
        sigma.push(0.0);
        for &i in &indices {
            let (a, s) = base.alpha_sigma(i)?;
            alpha.push(a);
            sigma.push(s);
        }
        Ok(StepGrid {
            kind,
            t_base: t,
            indices,
            alpha,
            sigma,
        })
    }

    /// The one-step grid {t_base}: a single jump from the prior to x(0).
    /// Below `subsample`'s minimum S, but valid as a grid; used by the
    /// sampler audits.
    pub fn single_terminal(base: &BaseSchedule) -> Self {
        let t = base.t_base();
        let (a, s) = base.alpha_sigma(t).expect("t_base is in range");
        StepGrid {
            kind: SchedulerKind::Uniform,
            t_base: t,
            indices: vec![t],
            alpha: vec![1.0, a],
            sigma: vec![0.0, s],
        }
    }

    pub fn kind(&self) -> SchedulerKind {
        self.kind
    }

    pub fn t_base(&self) -> usize {
        self.t_base
    }

    /// Number of denoising steps S (grid positions run 0..=S).
    pub fn s_steps(&self) -> usize {
        self.indices.len()
    }

    /// Base index at grid position j (0 maps to base index 0).
    pub fn base_index(&self, pos: usize) -> usize {
        if pos == 0 {
            0
        } else {
            self.indices[pos - 1]
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    /// (α, σ) at grid position j in 0..=S.
    pub fn alpha_sigma_at(&self, pos: usize) -> (f64, f64) {
        (self.alpha[pos], self.sigma[pos])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // Frozen oracle values, computed by brute force (running product and a
    // log-sum cross-check) before the implementation was written.
    const ALPHA_SQ_1000: f64 = 3.995601966167e-5;
    const ALPHA_SQ_500_END: f64 = 6.289389e-3;
    const ALPHA_SQ_100_END: f64 = 3.599394e-1;
    const ALPHA_SQ_2000_END: f64 = 1.612611e-9;

    fn brute_force_alpha_sq(t_base: usize, b0: f64, b1: f64, i: usize) -> f64 {
        let mut p = 1.0f64;
        for j in 1..=i {
            p *= 1.0 - (b0 + (b1 - b0) * (j as f64 / t_base as f64));
        }
        p
    }

    #[test]
    fn beta_and_alpha_sq_first_step() {
        let base = BaseSchedule::default_linear();
        assert!((base.beta(1).unwrap() - 1.1990e-4).abs() < 1e-12);
        assert!((base.alpha_sq(1).unwrap() - 0.99988).abs() < 1e-5);
        assert_eq!(base.alpha_sq(0).unwrap(), 1.0);
    }

    #[test]
    fn alpha_sq_at_terminal_matches_brute_force_product() {
        let base = BaseSchedule::default_linear();
        let got = base.alpha_sq(1000).unwrap();
        let oracle = brute_force_alpha_sq(1000, 1e-4, 0.02, 1000);
        assert!(
            ((got - oracle) / oracle).abs() < 1e-12,
            "got {got}, oracle {oracle}"
        );
        assert!(
            ((got - ALPHA_SQ_1000) / ALPHA_SQ_1000).abs() < 1e-9,
            "got {got}, frozen {ALPHA_SQ_1000}"
        );
        // independent route: exp(sum log1p(-beta))
        let log_sum: f64 = (1..=1000)
            .map(|j| (-(1e-4 + (0.02 - 1e-4) * (j as f64 / 1000.0))).ln_1p())
            .sum();
        assert!(((got - log_sum.exp()) / got).abs() < 1e-12);
    }

    #[test]
    fn alpha_sigma_endpoints() {
        let base = BaseSchedule::default_linear();
        assert_eq!(base.alpha_sigma(0).unwrap(), (1.0, 0.0));
        let (a, s) = base.alpha_sigma(1000).unwrap();
        assert!((a - ALPHA_SQ_1000.sqrt()).abs() < 1e-12);
        assert!((a - 6.3211e-3).abs() < 1e-6);
        assert!((s - 0.9999800218).abs() < 1e-9);
        assert!(base.alpha_sigma(1001).is_err());
    }

    #[test]
    fn variance_preservation_over_all_indices() {
        let base = BaseSchedule::default_linear();
        for i in 0..=1000 {
            let (a, s) = base.alpha_sigma(i).unwrap();
            assert!((a * a + s * s - 1.0).abs() < 1e-12, "i = {i}");
        }
    }

    #[test]
    fn alpha_sq_strictly_decreasing_in_unit_interval() {
        for t in [100usize, 500, 1000, 2000] {
            let base = BaseSchedule::new(t, 1e-4, 0.02).unwrap();
            let mut prev = base.alpha_sq(0).unwrap();
            assert_eq!(prev, 1.0);
            for i in 1..=t {
                let a2 = base.alpha_sq(i).unwrap();
                assert!(a2 < prev && a2 > 0.0, "t_base {t}, i {i}");
                prev = a2;
            }
        }
    }

    #[test]
    fn beta_strictly_increasing_in_unit_interval() {
        let base = BaseSchedule::default_linear();
        let mut prev = 0.0;
        for i in 1..=1000 {
            let b = base.beta(i).unwrap();
            assert!(b > prev && b < 1.0);
            prev = b;
        }
    }

    #[test]
    fn terminal_alpha_sq_regimes() {
        // Frozen oracle values for the endpoint α²(1) across t_base choices.
        // The noise-dominated regime threshold is 1e-2: T = 100 sits far above
        // it, T ∈ {500, 1000, 2000} below.
        let cases = [
            (100usize, ALPHA_SQ_100_END),
            (500, ALPHA_SQ_500_END),
            (1000, ALPHA_SQ_1000),
            (2000, ALPHA_SQ_2000_END),
        ];
        for (t, frozen) in cases {
            let a2 = BaseSchedule::new(t, 1e-4, 0.02).unwrap().alpha_sq(t).unwrap();
            assert!(
                ((a2 - frozen) / frozen).abs() < 1e-6,
                "t_base {t}: got {a2}, frozen {frozen}"
            );
        }
        assert!(ALPHA_SQ_100_END > 1e-2);
        for (t, _) in &cases[1..] {
            let a2 = BaseSchedule::new(*t, 1e-4, 0.02).unwrap().alpha_sq(*t).unwrap();
            assert!(a2 < 1e-2, "t_base {t}");
        }
        // t_base >= 1000 additionally clears the 1e-3 mark
        assert!(ALPHA_SQ_1000 < 1e-3 && ALPHA_SQ_2000_END < 1e-3);
    }

    #[test]
    fn snr_examples_and_monotonicity() {
        let base = BaseSchedule::default_linear();
        assert!(base.snr(0).is_err());
        let snr_t = base.snr(1000).unwrap();
        let expect = ALPHA_SQ_1000 / (1.0 - ALPHA_SQ_1000);
        assert!(((snr_t - expect) / expect).abs() < 1e-9);
        for i in 1..1000 {
            assert!(base.snr(i).unwrap() > base.snr(i + 1).unwrap());
        }
        // symmetry point: a 2-step schedule whose first β is exactly 0.5
        let tiny = BaseSchedule::new(2, 0.4, 0.6).unwrap();
        assert!((tiny.alpha_sq(1).unwrap() - 0.5).abs() < 1e-15);
        assert!((tiny.snr(1).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constructor_rejects_bad_input() {
        assert!(BaseSchedule::new(1, 1e-4, 0.02).is_err());
        assert!(BaseSchedule::new(1000, 0.0, 0.02).is_err());
        assert!(BaseSchedule::new(1000, 0.02, 1e-4).is_err());
        assert!(BaseSchedule::new(1000, 1e-4, 1.0).is_err());
    }

    #[test]
    fn uniform_grid_s10() {
        let base = BaseSchedule::default_linear();
        let grid = StepGrid::subsample(&base, 10, SchedulerKind::Uniform).unwrap();
        assert_eq!(
            grid.indices(),
            &[100, 200, 300, 400, 500, 600, 700, 800, 900, 1000]
        );
        assert_eq!(grid.s_steps(), 10);
        assert_eq!(grid.alpha_sigma_at(0), (1.0, 0.0));
        assert_eq!(grid.base_index(0), 0);
        assert_eq!(grid.base_index(10), 1000);
    }

    #[test]
    fn non_uniform_grid_s10_frozen() {
        let base = BaseSchedule::default_linear();
        let kind = SchedulerKind::non_uniform_default(1000);
        assert_eq!(
            kind,
            SchedulerKind::NonUniform {
                boundary_index: 699,
                late_fraction: 0.6
            }
        );
        let grid = StepGrid::subsample(&base, 10, kind).unwrap();
        assert_eq!(
            grid.indices(),
            &[175, 350, 524, 699, 749, 799, 850, 900, 950, 1000]
        );
        let above = grid.indices().iter().filter(|&&i| i > 699).count();
        assert_eq!(above, 6);
    }

    #[test]
    fn non_uniform_small_s() {
        let base = BaseSchedule::default_linear();
        let kind = SchedulerKind::non_uniform_default(1000);
        let g2 = StepGrid::subsample(&base, 2, kind).unwrap();
        assert_eq!(g2.indices(), &[699, 1000]);
        let g3 = StepGrid::subsample(&base, 3, kind).unwrap();
        assert_eq!(g3.indices(), &[699, 850, 1000]);
        let g5 = StepGrid::subsample(&base, 5, kind).unwrap();
        assert_eq!(g5.indices(), &[350, 699, 799, 900, 1000]);
    }

    #[test]
    fn identity_subsample_reproduces_dense_schedule() {
        let base = BaseSchedule::default_linear();
        let grid = StepGrid::subsample(&base, 1000, SchedulerKind::Uniform).unwrap();
        assert_eq!(grid.s_steps(), 1000);
        for (j, &i) in grid.indices().iter().enumerate() {
            assert_eq!(i, j + 1);
            let (a, s) = grid.alpha_sigma_at(j + 1);
            let (ba, bs) = base.alpha_sigma(i).unwrap();
            assert_eq!((a, s), (ba, bs));
        }
    }

    #[test]
    fn grid_alpha_increases_toward_noise_free_end() {
        let base = BaseSchedule::default_linear();
        for kind in [
            SchedulerKind::Uniform,
            SchedulerKind::non_uniform_default(1000),
        ] {
            let grid = StepGrid::subsample(&base, 10, kind).unwrap();
            for pos in (1..=grid.s_steps()).rev() {
                let (a_cur, _) = grid.alpha_sigma_at(pos);
                let (a_prev, _) = grid.alpha_sigma_at(pos - 1);
                assert!(a_prev > a_cur);
            }
            assert_eq!(grid.alpha_sigma_at(0), (1.0, 0.0));
        }
    }

    #[test]
    fn subsample_rejects_degenerate_requests() {
        let base = BaseSchedule::default_linear();
        assert!(StepGrid::subsample(&base, 1, SchedulerKind::Uniform).is_err());
        assert!(StepGrid::subsample(&base, 1001, SchedulerKind::Uniform).is_err());
        // n_early = 0
        let lopsided = SchedulerKind::NonUniform {
            boundary_index: 699,
            late_fraction: 0.9,
        };
        assert!(StepGrid::subsample(&base, 2, lopsided).is_err());
        // duplicates: early segment denser than one index per step
        let cramped = SchedulerKind::NonUniform {
            boundary_index: 10,
            late_fraction: 0.5,
        };
        assert!(StepGrid::subsample(&base, 40, cramped).is_err());
        // bad parameters
        assert!(StepGrid::subsample(
            &base,
            10,
            SchedulerKind::NonUniform {
                boundary_index: 0,
                late_fraction: 0.6
            }
        )
        .is_err());
        assert!(StepGrid::subsample(
            &base,
            10,
            SchedulerKind::NonUniform {
                boundary_index: 699,
                late_fraction: 1.0
            }
        )
        .is_err());
    }

    #[test]
    fn non_uniform_late_count_matches_rounded_fraction() {
        let base = BaseSchedule::default_linear();
        for s in [5usize, 10, 20, 50] {
            let kind = SchedulerKind::non_uniform_default(1000);
            let grid = StepGrid::subsample(&base, s, kind).unwrap();
            let above = grid.indices().iter().filter(|&&i| i > 699).count();
            assert_eq!(above, (0.6 * s as f64).round() as usize, "S = {s}");
        }
    }

    proptest! {
        #[test]
        fn schedule_invariants_hold_for_random_parameters(
            t_base in 2usize..2500,
            b0 in 1e-6f64..5e-3,
            spread in 1e-3f64..0.5,
        ) {
            let b1 = (b0 + spread).min(0.999);
            // Extreme t_base × beta products underflow f64 and are rejected;
            // anything constructible must satisfy the invariants exactly.
            if let Ok(base) = BaseSchedule::new(t_base, b0, b1) {
                let mut prev = 1.0f64;
                for i in 1..=t_base {
                    let a2 = base.alpha_sq(i).unwrap();
                    prop_assert!(a2 > 0.0 && a2 < prev);
                    let (a, s) = base.alpha_sigma(i).unwrap();
                    prop_assert!((a * a + s * s - 1.0).abs() < 1e-12);
                    prev = a2;
                }
            }
        }

        #[test]
        fn uniform_grids_are_valid_for_any_s(
            s in 2usize..400,
        ) {
            let base = BaseSchedule::default_linear();
            let grid = StepGrid::subsample(&base, s, SchedulerKind::Uniform).unwrap();
            prop_assert_eq!(grid.s_steps(), s);
            prop_assert_eq!(*grid.indices().last().unwrap(), 1000);
            for w in grid.indices().windows(2) {
                prop_assert!(w[0] < w[1]);
            }
        }

        #[test]
        fn non_uniform_grids_valid_or_clean_error(
            s in 2usize..300,
            frac_pct in 10usize..90,
        ) {
            let base = BaseSchedule::default_linear();
            let kind = SchedulerKind::NonUniform {
                boundary_index: 699,
                late_fraction: frac_pct as f64 / 100.0,
            };
            if let Ok(grid) = StepGrid::subsample(&base, s, kind) {
                prop_assert_eq!(*grid.indices().last().unwrap(), 1000);
                for w in grid.indices().windows(2) {
                    prop_assert!(w[0] < w[1]);
                }
                let (a0, s0) = grid.alpha_sigma_at(0);
                prop_assert_eq!((a0, s0), (1.0, 0.0));
            }
        }
    }
}
