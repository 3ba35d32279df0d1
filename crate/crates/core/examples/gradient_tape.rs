//! Reverse-mode gradients of a softplus-of-logsumexp expression.

use fgdetect::autodiff::GradientTape;

fn main() {
    let mut t = GradientTape::new();
    let x = t.leaf(0.5);
    let y = t.leaf(-1.0);
    let xy = t.mul(x, y);
    let lse = t.logsumexp(&[x, xy]);
    let out = t.softplus(lse);
    let g = t.backward(out);
    println!("f = {:.6}", t.value(out));
    println!("df/dx = {:.6}  df/dy = {:.6}", g.wrt(x), g.wrt(y));

    let h = 1e-6;
    let f = |a: f64, b: f64| {
        let l = (a.exp() + (a * b).exp()).ln();
        l.exp().ln_1p()
    };
    println!(
        "finite differences: {:.6} {:.6}",
        (f(0.5 + h, -1.0) - f(0.5 - h, -1.0)) / (2.0 * h),
        (f(0.5, -1.0 + h) - f(0.5, -1.0 - h)) / (2.0 * h)
    );
}
