//! Sum-product on a small hand-built graph, checked against brute force.

use fgdetect::spa::run_flooding;
use fgdetect::{FactorGraph, MessageWeights};

fn main() -> fgdetect::Result<()> {
    // a - f(a,b) - b - g(b,c) - c, with a prior on a
    let mut g = FactorGraph::new(2);
    let a = g.add_variable();
    let b = g.add_variable();
    let c = g.add_variable();
    g.add_factor(&[a], vec![0.8f64.ln(), 0.2f64.ln()])?;
    g.add_factor(&[a, b], vec![0.0, -2.0, -2.0, 0.0])?;
    g.add_factor(&[b, c], vec![0.0, -1.0, -1.0, 0.0])?;

    let beliefs = run_flooding(&g, &MessageWeights::unit(&g, 3))?;

    let mut exact = [[0.0f64; 2]; 3];
    for x in 0..8usize {
        let (va, vb, vc) = (x >> 2 & 1, x >> 1 & 1, x & 1);
        let mut w = [0.8f64, 0.2][va].ln();
        w += if va == vb { 0.0 } else { -2.0 };
        w += if vb == vc { 0.0 } else { -1.0 };
        exact[0][va] += w.exp();
        exact[1][vb] += w.exp();
        exact[2][vc] += w.exp();
    }
    for (v, (bp, ex)) in beliefs.iter().zip(exact).enumerate() {
        let z = ex[0] + ex[1];
        println!("var {v}: SPA {:.6} {:.6}   exact {:.6} {:.6}", bp[0], bp[1], ex[0] / z, ex[1] / z);
    }
    Ok(())
}
