use hb_core::continuation::ContinuationSettings;
use hb_core::harmonic::HarmonicGrid;
use hb_core::solver::continue_branch;
use hb_testutil::{duffing, duffing_fold_frequencies, DuffingParams};

fn main() {
    env_logger::init();
    let p = DuffingParams::default();
    let model = duffing(p);
    let grid = HarmonicGrid::new(5, 128, 1, 1, 0.6).unwrap();
    let mut settings = ContinuationSettings::new(0.6, 2.2);
    settings.initial_step = 0.01;
    settings.max_step = 0.05;
    let branch = continue_branch(&model, &grid, &settings).unwrap();
    println!("status {:?}, {} points", branch.status, branch.points.len());
    println!("oracle folds: {:?}", duffing_fold_frequencies(p, (0.8, 2.2)));
    for e in &branch.events {
        println!("event {:?} at idx {} omega {}", e.kind, e.point_index, branch.points[e.point_index].omega);
    }
    let mut prev: Option<f64> = None;
    for (i, pt) in branch.points.iter().enumerate() {
        if let Some(pf) = prev {
            if pf * pt.tests.fold < 0.0 {
                println!("fold sign change at segment {} omega {} -> {}", i-1, branch.points[i-1].omega, pt.omega);
            }
            if branch.points[i-1].tests.branch_point * pt.tests.branch_point < 0.0 {
                println!("bp sign change at segment {} omega {} -> {}  values {} -> {}", i-1, branch.points[i-1].omega, pt.omega, branch.points[i-1].tests.branch_point, pt.tests.branch_point);
            }
            if branch.points[i-1].tests.neimark_sacker * pt.tests.neimark_sacker < 0.0 {
                println!("ns sign change at segment {} omega {} -> {}", i-1, branch.points[i-1].omega, pt.omega);
            }
        }
        prev = Some(pt.tests.fold);
    }
}
