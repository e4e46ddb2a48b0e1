//! Exponential moving average coupling between teacher and student.

use crate::error::{config_err, contract_err, Result};

/// `teacher <- m * teacher + (1 - m) * student`, elementwise.
/// Requires `0 <= m < 1`; `m = 1` would freeze the teacher forever.
pub fn ema_update(teacher: &mut [f64], student: &[f64], momentum: f64) -> Result<()> {
    if !(0.0..1.0).contains(&momentum) {
        return Err(config_err!("EMA momentum must be in [0, 1), got {momentum}"));
    }
    if teacher.len() != student.len() {
        return Err(contract_err!(
            "teacher/student parameter trees differ in size: {} vs {}",
            teacher.len(),
            student.len()
        ));
    }
    for (t, &s) in teacher.iter_mut().zip(student) {
        *t = momentum * *t + (1.0 - momentum) * s;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_momentum_copies_student() {
        let mut t = [1.0, 2.0, 3.0];
        ema_update(&mut t, &[4.0, 5.0, 6.0], 0.0).unwrap();
        assert_eq!(t, [4.0, 5.0, 6.0]);
    }

    #[test]
    fn momentum_one_is_rejected() {
        let mut t = [1.0];
        assert!(ema_update(&mut t, &[2.0], 1.0).is_err());
        assert!(ema_update(&mut t, &[2.0], -0.1).is_err());
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut t = [1.0, 2.0];
        assert!(ema_update(&mut t, &[2.0], 0.9).is_err());
    }

    #[test]
    fn constant_student_converges_geometrically() {
        let m = 0.9;
        let s = [2.0];
        let mut t = [0.0];
        for k in 1..=20 {
            ema_update(&mut t, &s, m).unwrap();
            let expected = 2.0 * (1.0 - libm::pow(m, k as f64));
            assert!((t[0] - expected).abs() < 1e-12, "step {k}");
        }
    }
}
