//! Factor-node work per detection for FFG and UFG as the channel memory grows.

use fgdetect::detectors::count_fn_operations;
use fgdetect::DetectorKind;

fn main() {
    let (k, n) = (500, 10);
    println!("{:>2} {:>3} {:>16} {:>12}", "L", "M", "FFG", "UFG");
    for m in [2usize, 4, 16] {
        for l in 1..=4 {
            let ffg = count_fn_operations(DetectorKind::Ffg, k, l, l, m, n);
            let ufg = count_fn_operations(DetectorKind::Ufg, k, l, l, m, n);
            println!("{l:>2} {m:>3} {ffg:>16} {ufg:>12}");
        }
    }
}
