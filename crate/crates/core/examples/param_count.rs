//! Readout parameter counts: the formula, and the weights actually
//! allocated by a model of the same shape.

use groupcl::eval::{count_head_params, readout_weight_count};
use groupcl::trainer::{Model, Pipeline, RunConfig};

fn main() -> groupcl::Result<()> {
    for p in [1, 2, 4, 8] {
        let c = count_head_params(p, 160, 100, 160)?;
        println!("p={p}: groupcl head {:6}, graphcl head {}", c.groupcl_head, c.graphcl_head);
    }

    let config = RunConfig {
        node_dim: 160,
        ..RunConfig::default()
    };
    let groupcl = Model::init(&config, 8)?;
    let baseline = Model::init(
        &RunConfig {
            pipeline: Pipeline::GraphClBaseline,
            ..config
        },
        8,
    )?;
    println!(
        "allocated: groupcl readout {}, graphcl readout {}",
        readout_weight_count(&groupcl)?,
        readout_weight_count(&baseline)?
    );
    Ok(())
}
