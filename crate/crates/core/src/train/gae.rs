/// Generalised advantage estimates for one agent's consecutive steps.
///
/// `dones[t]` marks a terminal transition (no bootstrap through it);
/// `bootstrap` is the value estimate after the last step when that step is
/// not terminal. Returns `(advantages, value_targets)`.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap: f64,
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    debug_assert!(values.len() == n && dones.len() == n);
    let mut adv = vec![0.0; n];
    let mut next_value = bootstrap;
    let mut next_adv = 0.0;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        next_adv = delta + gamma * lambda * live * next_adv;
        adv[t] = next_adv;
        next_value = values[t];
    }
    let targets = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, targets)
}

/// Shifts and scales to zero mean and unit standard deviation (population
/// form). A constant input maps to zeros.
pub fn normalize(values: &mut [f64]) {
    if values.is_empty() {
        return;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    for v in values.iter_mut() {
        *v = if std > 1e-12 { (*v - mean) / std } else { 0.0 };
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn terminal_step_with_zero_values() {
        let (a, t) = compute_gae(&[1.5], &[0.0], &[true], 99.0, 0.99, 0.95);
        assert_eq!(a, vec![1.5]);
        assert_eq!(t, vec![1.5]);
    }

    #[test]
    fn hand_recursion_horizon_three() {
        let (a, _) = compute_gae(&[1.0; 3], &[0.0; 3], &[false, false, true], 0.0, 0.99, 0.95);
        let k = 0.99 * 0.95;
        assert!((a[0] - (1.0 + k * (1.0 + k))).abs() < 1e-15);
        assert!((a[0] - 2.82504025).abs() < 1e-12);
    }

    #[test]
    fn normalized_has_unit_moments() {
        let mut v = vec![1.0, 2.0, 3.0, 10.0];
        normalize(&mut v);
        let m: f64 = v.iter().sum::<f64>() / 4.0;
        let s: f64 = v.iter().map(|x| x * x).sum::<f64>() / 4.0;
        assert!(m.abs() < 1e-12 && (s - 1.0).abs() < 1e-12);
        let mut c = vec![3.0; 5];
        normalize(&mut c);
        assert_eq!(c, vec![0.0; 5]);
    }
}
