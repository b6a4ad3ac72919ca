mod common;

use idlab::coefficients::{LowerOrder, Preset};

use common::{identity_residuals, orders};

#[test]
fn linear_pair_residual_is_first_order() {
    let c1 = Preset::Constant { value: 2.0 }.build((0.0, 1.0)).unwrap();
    let c2 = Preset::Constant { value: 1.0 }.build((0.0, 1.0)).unwrap();
    let r = identity_residuals(&c1, &c2, &[16, 32, 64, 128]);
    let p = orders(&r);
    println!("linear {r:?} {p:?}");
    assert!(p.iter().all(|&q| q >= 0.9), "{r:?} {p:?}");
}

#[test]
fn nonlinear_pair_residual_is_first_order() {
    let c1 = Preset::Affine { a0: 1.0, a1: 1.0 }.build((0.0, 1.0)).unwrap();
    let lower = LowerOrder {
        reaction_rate: 0.5,
        storage_scale: 1.2,
        ..LowerOrder::none()
    };
    let c2 = Preset::Affine { a0: 0.5, a1: 0.5 }.build_with((0.0, 1.0), &lower).unwrap();
    let r = identity_residuals(&c1, &c2, &[16, 32, 64, 128]);
    let p = orders(&r);
    println!("nonlinear {r:?} {p:?}");
    assert!(p.iter().all(|&q| q >= 0.9), "{r:?} {p:?}");
}
