use airfeel::batch::*;
use airfeel::Error;

#[test]
fn norms_track_rows() {
    let b = GradientBatch::from_rows(2, &[[3.0, 4.0], [0.0, 0.0]]).unwrap();
    assert_eq!(b.norms(), &[5.0, 0.0]);
    assert_eq!(b.weights(), &[1.0, 1.0]);
    assert_eq!(b.raw_count(), 2);
    assert!(!b.is_upsampled());
}

#[test]
fn rejects_bad_rows() {
    let mut b = GradientBatch::empty(2);
    assert!(matches!(b.push(&[1.0]), Err(Error::DimensionMismatch { .. })));
    assert!(matches!(b.push(&[f64::NAN, 0.0]), Err(Error::NonFinite(_))));
    assert!(GradientBatch::from_flat(3, vec![0.0; 4]).is_err());
}

#[test]
fn unit_weights_give_plain_mean() {
    let b = GradientBatch::from_rows(2, &[[1.0, 2.0], [3.0, -2.0], [0.1, 0.7]]).unwrap();
    assert_eq!(b.weighted_mean(), b.mean());
}
