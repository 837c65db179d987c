use twosource_web::{overlap_rows, regret_rows, wavefunction_rows, OVERLAP_STRIDE, REGRET_STRIDE};

#[test]
fn overlap_rows_cross_rayleigh_zero() {
    let rows = overlap_rows(1.0, 3.0, 5).unwrap();
    assert_eq!(rows.len(), 5 * OVERLAP_STRIDE);
    let mid = &rows[2 * OVERLAP_STRIDE..3 * OVERLAP_STRIDE];
    assert_eq!(mid[0], 2.0);
    assert!((mid[1] - (-0.5f64).exp()).abs() < 1e-15);
    assert!(mid[4].abs() < 1e-15);
    assert!(overlap_rows(3.0, 1.0, 5).is_err());
    assert!(overlap_rows(1.0, 3.0, 1).is_err());
}

#[test]
fn regrets_at_rayleigh() {
    let r = regret_rows(2.0, 0.005).unwrap();
    assert_eq!(r.len(), 3 * REGRET_STRIDE);
    let (direct, spade, joint) = (&r[..6], &r[6..12], &r[12..]);
    for row in [direct, spade, joint] {
        assert!((row[2] - (1.0 - (-1.0f64).exp())).abs() < 1e-12);
        assert!((row[3] - 0.25).abs() < 1e-12);
    }
    assert!(direct[5] > 0.2);
    assert!((spade[4] - 1.0).abs() < 1e-6 && spade[5].abs() < 1e-4);
    assert!(joint[4].powi(2) < 1e-12 && joint[5].powi(2) < 1e-12);
}

#[test]
fn regrets_without_gauge_leave_joint_nan() {
    let r = regret_rows(1.0, 0.005).unwrap();
    assert!(r[..12].iter().all(|v| v.is_finite()));
    assert!(r[12..].iter().all(|v| v.is_nan()));
    assert!(regret_rows(2.0, 0.0).is_err() && regret_rows(2.0, -0.1).is_err());
}

#[test]
fn wavefunctions_are_orthonormal() {
    let n = 4001;
    let v = wavefunction_rows(2.0, -12.0, 12.0, n).unwrap();
    assert_eq!(v.len(), 5 * n + 8);
    let h = 24.0 / (n - 1) as f64;
    let row = |j: usize| &v[(j + 1) * n..(j + 2) * n];
    for j in 0..4 {
        for k in 0..4 {
            let ip: f64 = row(j).iter().zip(row(k)).map(|(a, b)| a * b).sum::<f64>() * h;
            let want = if j == k { 1.0 } else { 0.0 };
            assert!((ip - want).abs() < 1e-6, "<{j}|{k}> = {ip}");
        }
    }
    assert!(wavefunction_rows(1.0, -12.0, 12.0, n).is_err());
}
