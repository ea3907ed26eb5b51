use super::tensor::Tensor;

/// Compare analytic gradients against central finite differences.
///
/// `f` evaluates the scalar loss for the given parameter values; `grads` are
/// the analytic gradients at the unperturbed point, one tensor per parameter,
/// shapes matching. Returns the worst relative error over every coordinate.
/// Run this in f64: step sizes near 1e-5 drown in f32 rounding.
pub fn finite_difference_check<F>(
    mut f: F,
    params: &mut [Tensor<f64>],
    grads: &[Tensor<f64>],
    h: f64,
) -> f64
where
    F: FnMut(&[Tensor<f64>]) -> f64,
{
    assert_eq!(params.len(), grads.len(), "one gradient per parameter");
    let mut worst: f64 = 0.0;
    for pi in 0..params.len() {
        assert_eq!(
            params[pi].dims(),
            grads[pi].dims(),
            "gradient shape matches parameter"
        );
        for ci in 0..params[pi].len() {
            let saved = params[pi].data()[ci];
            params[pi].data_mut()[ci] = saved + h;
            let up = f(params);
            params[pi].data_mut()[ci] = saved - h;
            let down = f(params);
            params[pi].data_mut()[ci] = saved;
            let fd = (up - down) / (2.0 * h);
            let an = grads[pi].data()[ci];
            let denom = fd.abs().max(an.abs());
            // Treat tiny gradients absolutely: dividing rounding noise by
            // rounding noise would report spurious blow-ups.
            let err = if denom < 1e-6 {
                (fd - an).abs()
            } else {
                (fd - an).abs() / denom
            };
            worst = worst.max(err);
        }
    }
    worst
}
