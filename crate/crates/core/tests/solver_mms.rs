mod common;

use common::{orders, Manufactured};

#[test]
fn space_order_is_two() {
    let m = Manufactured::Linear;
    let errors: Vec<f64> = [8, 16, 32, 64].iter().map(|&n| m.error(&m.solve(n, 4))).collect();
    let p = orders(&errors);
    assert!(p.iter().all(|&q| q >= 1.9), "{errors:?} {p:?}");
}

#[test]
fn time_order_is_one() {
    // fast decay keeps the time error well above the O(h²) floor of the grid
    let m = Manufactured::Decaying(5.0);
    let errors: Vec<f64> = [8, 16, 32, 64].iter().map(|&n| m.error(&m.solve(96, n))).collect();
    let p = orders(&errors);
    assert!(p.iter().all(|&q| q >= 0.9), "{errors:?} {p:?}");
}
