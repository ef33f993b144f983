//! Splits a synthetic cluster dataset across devices and prints the label
//! histogram of each shard.

use aquila::problems::{partition, Dataset, PartitionMode, PartitionSpec};

fn main() -> aquila::Result<()> {
    let data = Dataset::gaussian_clusters(600, 5, 6, 2.0, 7)?;
    for mode in [PartitionMode::Iid, PartitionMode::NonIid { classes_per_device: 2 }] {
        let shards = partition(&data, &PartitionSpec { mode, num_devices: 6, seed: 7 })?;
        println!("{mode:?}");
        for (m, shard) in shards.iter().enumerate() {
            let mut hist = vec![0usize; data.num_classes()];
            for &i in shard {
                hist[data.label(i)] += 1;
            }
            println!("  device {m}: {hist:?}");
        }
    }
    Ok(())
}
