//! Push and pull through the aggregation server, and the explicit Θ matrices
//! that reproduce the pull.

use feras::aggregator::{build_theta, EmbeddingTable};
use feras::federation::HostView;
use ndarray::{array, concatenate, Axis};

pub fn run() -> feras::Result<()> {
    // Five nodes, two hosts. Node 4 is private to host 0, node 3 to host 1.
    let views = [
        HostView::new(0, vec![true, true, true, false, true]),
        HostView::new(1, vec![true, true, true, true, false]),
    ];
    let nodes = [vec![0, 1, 4], vec![1, 2, 3, 4]];
    let x_hat = [
        array![[1.0, 0.0], [2.0, 2.0], [5.0, 5.0]],
        array![[4.0, 4.0], [3.0, 1.0], [7.0, 0.0], [9.0, 9.0]],
    ];

    let mut table = EmbeddingTable::new(5, 2);
    for ((list, h), view) in nodes.iter().zip(&x_hat).zip(&views) {
        // Host 1 cannot see node 4, so its row there is a blank push.
        table.push_embeddings(0, list, h, &view.flags(list))?;
    }
    let thetas = build_theta(&nodes, &views)?;
    let stacked = concatenate(Axis(0), &[x_hat[0].view(), x_hat[1].view()]).expect("same width");

    for (host, (list, theta)) in nodes.iter().zip(&thetas).enumerate() {
        let pulled = table.pull_embeddings(list);
        let explicit = theta.dot(&stacked);
        println!("host {host}, nodes {list:?}");
        println!("Θ =\n{theta:.3}");
        println!("pull =\n{pulled}");
        assert!((&pulled - &explicit).iter().all(|d| d.abs() < 1e-12));
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> feras::Result<()> {
    run()
}
