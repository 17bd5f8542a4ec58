use hb_core::oracle::newmark_integrate;
use hb_core::model::{ForcingSpec, SystemModel};
use nalgebra::{DMatrix, DVector};
use std::collections::BTreeMap;

fn main() {
    let model = SystemModel::new(
        DMatrix::from_element(1, 1, 1.0),
        DMatrix::from_element(1, 1, 0.1),
        DMatrix::from_element(1, 1, 1.0),
        vec![],
        ForcingSpec { amplitude: vec![1.0], harmonic: 1, nu: 1 },
        BTreeMap::from([("F".to_string(), 1.0)]),
    ).unwrap();
    let omega: f64 = 1.3;
    let expected = model.linear_frf(omega).unwrap()[0].norm();
    for spp in [1000usize, 2000, 4000, 8000] {
        let hist = newmark_integrate(&model, DVector::zeros(1), DVector::zeros(1), omega, 160, spp).unwrap();
        let got = hist.peak_amplitude(0, spp);
        println!("spp {spp}: {got:.12} vs {expected:.12} rel {:.3e}", (got - expected).abs() / expected);
    }
}
