use super::{AttackError, Method, Result};

/// Late-start choice for [`predict_ngrad`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LateStart {
    /// Explicit late start in the method's outer-iteration units.
    Fixed(usize),
    /// The defaults behind the published cost table: DRAP uses `n_LS = 0` when
    /// `n_iter / I ≤ 5` and `5` otherwise; RAP and Flat-RAP use `K_LS = 0` when
    /// `n_iter ≤ 50` and `50` otherwise.
    Table,
}

pub fn late_start_for_table(method: Method, n_iter: usize, components: usize) -> usize {
    match method {
        Method::Drap => {
            if n_iter / components.max(1) <= 5 {
                0
            } else {
                5
            }
        }
        Method::Rap | Method::FlatRap => {
            if n_iter <= 50 {
                0
            } else {
                50
            }
        }
        _ => 0,
    }
}

/// Number of input-gradient evaluations a run performs.
///
/// `n_iter` counts outer iterations for the ensemble baselines (each touching
/// all `components` models) and single-model steps for DRAP, so DRAP's
/// `n_iter` equals the ensemble size `K`.
pub fn predict_ngrad(
    method: Method,
    n_iter: usize,
    components: usize,
    inner_t: usize,
    late_start: LateStart,
) -> Result<u64> {
    if components == 0 {
        return Err(AttackError::InvalidConfig("need at least one component".into()));
    }
    let n_ls = match late_start {
        LateStart::Fixed(v) => v,
        LateStart::Table => late_start_for_table(method, n_iter, components),
    };
    let (n, i, t) = (n_iter as u64, components as u64, inner_t as u64);
    let cost = match method {
        Method::Ifgsm | Method::Mifgsm => n * i,
        Method::FlatCwa => n * 2 * i,
        Method::Rap | Method::FlatRap => {
            let ls = (n_ls as u64).min(n);
            ls * i + (n - ls) * (t + 1) * i
        }
        Method::Drap => {
            if !n_iter.is_multiple_of(components) {
                return Err(AttackError::InvalidConfig(format!(
                    "DRAP steps {n_iter} must be a multiple of the component count {components}"
                )));
            }
            let ls = (n_ls as u64 * i).min(n);
            ls + (n - ls) * (t + 1)
        }
    };
    Ok(cost)
}
