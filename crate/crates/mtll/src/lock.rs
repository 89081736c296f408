//! Error paths, exit detection, and censored exit times.

use crate::error::{MtllError, Result};
use crate::model::LockDomain;
use crate::sde::TimeGrid;

/// First-exit record of an error path, censored at the horizon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExitInfo {
    pub exited: bool,
    /// First grid index outside the open lock domain; `None` when censored.
    pub tau_index: Option<usize>,
    /// `tau_index·Δt`, or the horizon `T` when censored.
    pub tau: f64,
}

/// Elementwise error `e(i) = x(i) - x̂(i)`.
pub fn error_path(x_path: &[f64], xhat_path: &[f64]) -> Result<Vec<f64>> {
    if x_path.len() != xhat_path.len() {
        return Err(MtllError::LengthMismatch(format!(
            "x has {} entries, xhat has {}",
            x_path.len(),
            xhat_path.len()
        )));
    }
    Ok(x_path.iter().zip(xhat_path).map(|(x, xh)| x - xh).collect())
}

/// First grid index at which the error attains or leaves the lock boundary.
///
/// Exit is detected at grid points only; boundary attainment counts as exit.
pub fn first_exit(e_path: &[f64], domain: LockDomain, grid: TimeGrid) -> ExitInfo {
    for (i, &e) in e_path.iter().enumerate() {
        if !domain.contains(e) {
            return ExitInfo { exited: true, tau_index: Some(i), tau: grid.t(i) };
        }
    }
    ExitInfo { exited: false, tau_index: None, tau: grid.horizon() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn domain() -> LockDomain {
        LockDomain::new(-PI, PI).unwrap()
    }

    #[test]
    fn error_path_cases() {
        assert_eq!(error_path(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(error_path(&[1.0, 2.0], &[0.0, 0.0]).unwrap(), vec![1.0, 2.0]);
        assert_eq!(error_path(&[0.0, PI], &[0.0, -PI]).unwrap(), vec![0.0, 2.0 * PI]);
        assert!(error_path(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn exit_at_interior_index() {
        let grid = TimeGrid::new(1.0, 3).unwrap();
        let info = first_exit(&[0.0, 0.5, 3.2, 0.1], domain(), grid);
        assert!(info.exited);
        assert_eq!(info.tau_index, Some(2));
        assert_eq!(info.tau, 2.0);
    }

    #[test]
    fn censored_path() {
        let grid = TimeGrid::new(1.0, 3).unwrap();
        let info = first_exit(&[0.0; 4], domain(), grid);
        assert!(!info.exited);
        assert_eq!(info.tau, 3.0);
    }

    #[test]
    fn boundary_attainment_counts() {
        let grid = TimeGrid::new(1.0, 2).unwrap();
        let info = first_exit(&[PI, 0.0, 0.0], domain(), grid);
        assert!(info.exited);
        assert_eq!(info.tau_index, Some(0));
        assert_eq!(info.tau, 0.0);
    }

    #[test]
    fn extending_censored_path_grows_tau() {
        let grid3 = TimeGrid::new(0.5, 3).unwrap();
        let grid5 = TimeGrid::new(0.5, 5).unwrap();
        let short = first_exit(&[0.0, 0.1, 0.2, 0.3], domain(), grid3);
        let long = first_exit(&[0.0, 0.1, 0.2, 0.3, 0.4, 0.5], domain(), grid5);
        assert!(!short.exited);
        assert!(long.tau >= short.tau);
    }

    proptest::proptest! {
        #[test]
        fn translation_covariance(
            shift in -5.0f64..5.0,
            raw in proptest::collection::vec(-4.0f64..4.0, 1..40)
        ) {
            let grid = TimeGrid::new(0.25, raw.len().max(2)).unwrap();
            let base = first_exit(&raw, domain(), grid);
            let shifted: Vec<f64> = raw.iter().map(|e| e + shift).collect();
            let moved = first_exit(&shifted, domain().shifted(shift), grid);
            proptest::prop_assert_eq!(base.exited, moved.exited);
            proptest::prop_assert_eq!(base.tau_index, moved.tau_index);
        }
    }
}
