//! Empirical contraction of the federated update on a certified instance,
//! and the distance to its fixed point over time.

use feras::federation::assign_visibility;
use feras::gcn::{Hyper, LossKind};
use feras::graph::{Csr, Graph, Role, Task};
use feras::rng;
use feras::theory::{decay_trajectory, empirical_contraction, fixed_point, ContractionInstance};
use ndarray::Array2;
use rand::Rng;

pub fn run() -> feras::Result<()> {
    let mut r = rng::stream(7, 0);
    let n = 10;
    let edges: Vec<(usize, usize)> = (0..n).map(|i| (i, (i + 1) % n)).chain([(0, 5), (2, 7)]).collect();
    let x = Array2::from_shape_simple_fn((n, 3), || r.random_range(0.0..0.1));
    let y = Array2::from_shape_fn((n, 2), |(i, j)| f64::from(u8::from(i % 2 == j)));
    let g = Graph::new(Csr::from_edges(n, edges)?, x, y, vec![Role::Train; n], Task::Singlelabel)?;

    let plan = assign_visibility(n, 3, 0.5, 1)?;
    let batches = [vec![0, 1, 2, 3, 4, 5, 6], vec![3, 4, 5, 6, 7, 8, 9], (0..n).collect()];
    let hyper = Hyper {
        freeze_head: true,
        ..Hyper::new(0.1, 0.5, LossKind::Squared)
    };
    let inst = ContractionInstance::new(g, plan, &batches, hyper, 4)?;

    for q in [1, 2, 5] {
        let s = empirical_contraction(&inst, q, 50, 0.2, &mut r)?;
        println!("q = {q}: max ratio {:.6} <= bound {:.6}", s.max_ratio, s.bound);
    }

    let start = inst.random_point(0.2, &mut r);
    let w_star = fixed_point(&inst, &start, 1e-14, 20_000)?;
    for p in decay_trajectory(&inst, &start, &w_star, 100)?.iter().step_by(20) {
        println!("t = {:>3}: distance {:.3e}, bound {:.3e}", p.t, p.distance, p.bound);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> feras::Result<()> {
    run()
}
